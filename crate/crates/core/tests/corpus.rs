use fitb::corpus::{load_dataset, save_dataset};
use fitb::corpus::{is_canonical, relabel_local_ids, split_windows, Clip, Dataset, Split};
use fitb::synthgen::{generate_dataset, generate_movies, WorldConfig};
use fitb::FitbError;
use proptest::prelude::*;

fn small(seed: u64) -> WorldConfig {
    WorldConfig { n_movies: 3, clips_per_movie: 12, seed, ..Default::default() }
}

#[test]
fn dataset_round_trips_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train.json");
    let ds = generate_dataset(&small(1)).unwrap();
    save_dataset(&ds, &path).unwrap();
    let back = load_dataset(&path).unwrap();
    assert_eq!(back, ds);

    // overlapping windows share clips but still round-trip
    let aug = Dataset::from_movies(Split::Train, &ds.movies(), 5, true, ds.dims);
    save_dataset(&aug, &path).unwrap();
    assert_eq!(load_dataset(&path).unwrap(), aug);
}

#[test]
fn same_seed_same_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    save_dataset(&generate_dataset(&small(17)).unwrap(), &a).unwrap();
    save_dataset(&generate_dataset(&small(17)).unwrap(), &b).unwrap();
    // pack file names differ with the manifest name; compare the packs and the manifests minus names
    for ext in [".faces.fitb", ".segments.fitb"] {
        let pa = std::fs::read(format!("{}{ext}", a.display())).unwrap();
        let pb = std::fs::read(format!("{}{ext}", b.display())).unwrap();
        assert_eq!(pa, pb);
    }
    let strip = |p: &std::path::Path| {
        let mut v: serde_json::Value = serde_json::from_slice(&std::fs::read(p).unwrap()).unwrap();
        v.as_object_mut().unwrap().remove("face_pack");
        v.as_object_mut().unwrap().remove("segment_pack");
        v
    };
    assert_eq!(strip(&a), strip(&b));
}

#[test]
fn truncated_face_pack_names_the_clip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.json");
    let ds = generate_dataset(&small(2)).unwrap();
    save_dataset(&ds, &path).unwrap();
    let pack = dir.path().join("d.json.faces.fitb");
    let bytes = std::fs::read(&pack).unwrap();
    std::fs::write(&pack, &bytes[..bytes.len() - 4 * ds.dims.face * 3]).unwrap();
    match load_dataset(&path) {
        Err(FitbError::Format { location, .. }) => {
            let last_movie = ds.sets.last().unwrap().movie_id.clone();
            assert!(location.starts_with(&format!("{last_movie}/")), "{location}");
        }
        other => panic!("expected a format error, got {other:?}"),
    }
}

#[test]
fn unknown_version_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.json");
    save_dataset(&generate_dataset(&small(3)).unwrap(), &path).unwrap();
    let mut v: serde_json::Value = serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
    v["format_version"] = 99.into();
    std::fs::write(&path, serde_json::to_vec(&v).unwrap()).unwrap();
    assert!(matches!(load_dataset(&path), Err(FitbError::Version { found: 99, expected: 1 })));
}

#[test]
fn generated_sets_are_valid_and_locally_labelled() {
    let ds = generate_dataset(&small(4)).unwrap();
    assert!(ds.validate().is_empty());
    for set in &ds.sets {
        assert!(is_canonical(set.gt_local_ids.as_ref().unwrap()));
    }
}

fn clips(m: usize) -> Vec<Clip> {
    static MOVIE: std::sync::OnceLock<Vec<Clip>> = std::sync::OnceLock::new();
    let all = MOVIE.get_or_init(|| {
        let movies = generate_movies(&WorldConfig { n_movies: 1, clips_per_movie: 80, ..Default::default() }).unwrap();
        movies.into_iter().next().unwrap().clips
    });
    all[..m].to_vec()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn window_counts(m in 1usize..80, n in 1usize..7) {
        let c = clips(m);
        let over = split_windows("m", &c, n, true).len();
        let non = split_windows("m", &c, n, false).len();
        prop_assert_eq!(non, m.div_ceil(n));
        prop_assert_eq!(over, if m >= n { m - n + 1 } else { 1 });
        // (M-N+1)/ceil(M/N) >= N-1 needs q >= 2N-2-r for M = qN + r; M >= 2N² always suffices
        if m >= 2 * n * n || (m >= n * n && m % n == 0) {
            let ratio = over as f64 / non as f64;
            prop_assert!(ratio >= (n - 1) as f64 && ratio <= n as f64, "ratio {}", ratio);
        }
    }

    #[test]
    fn relabel_is_canonical_and_ignores_names(ids in proptest::collection::vec(0u32..6, 0..14), shift in 1u32..50) {
        let local = relabel_local_ids(&ids);
        prop_assert!(is_canonical(&local));
        prop_assert_eq!(relabel_local_ids(&local), local.clone());
        let renamed: Vec<u32> = ids.iter().map(|x| x * 7 + shift).collect();
        prop_assert_eq!(relabel_local_ids(&renamed), local);
    }
}
