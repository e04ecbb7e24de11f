use fitb::corpus::{Dataset, Gender, Split};
use fitb::model::{Ablation, FillInConfig};
use fitb::synthgen::{generate_dataset, WorldConfig};
use fitb::text::{build_vocab, init_text_params, predict_genders, set_text_input, gender_pretrain_step, TextConfig};
use fitb::train::{train, train_with, training_sets, EpochLog, FillInModel, TrainOptions};
use fitb_tensor::{Adam, ParameterStore};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn world(movies: usize, clips: usize, seed: u64, cue: f64) -> WorldConfig {
    WorldConfig { n_movies: movies, clips_per_movie: clips, face_dim: 8, video_dim: 4, gender_cue_prob: cue, seed, ..Default::default() }
}

fn data() -> (Dataset, Dataset) {
    let train = generate_dataset(&world(2, 25, 1, 1.0)).unwrap();
    let val = generate_dataset(&WorldConfig { split: Split::Val, ..world(1, 10, 2, 1.0) }).unwrap();
    (train, val)
}

fn small_cfg(epochs: usize) -> FillInConfig {
    let mut cfg = FillInConfig { d_model: 16, heads: 2, ff: 32, att_hidden: 16, epochs, pretrain_epochs: 1, lr: 1e-3, ..Default::default() };
    cfg.text = TextConfig { d_model: 16, layers: 1, heads: 2, ff: 32, ..Default::default() };
    cfg
}

fn without_time(log: &[EpochLog]) -> Vec<EpochLog> {
    log.iter().cloned().map(|mut e| {
        e.wall_time_s = 0.0;
        e
    }).collect()
}

#[test]
fn one_epoch_leaves_checkpoint_and_log() {
    let (train_ds, val_ds) = data();
    assert_eq!(train_ds.sets.len(), 10);
    let dir = tempfile::tempdir().unwrap();
    let opts = TrainOptions { checkpoint: Some(dir.path().join("model.ckpt")), log: Some(dir.path().join("log.jsonl")) };
    let out = train_with(&train_ds, &val_ds, &small_cfg(1), &opts).unwrap();

    let lines: Vec<EpochLog> = std::fs::read_to_string(dir.path().join("log.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let validated: Vec<&EpochLog> = lines.iter().filter(|e| e.val.is_some()).collect();
    assert_eq!(validated.len(), 1);
    assert_eq!(lines.len(), out.log.len());

    let loaded = FillInModel::load(&dir.path().join("model.ckpt")).unwrap();
    assert_eq!(loaded.predict_dataset(&val_ds).unwrap(), out.model.predict_dataset(&val_ds).unwrap());
}

#[test]
fn same_seed_same_run() {
    let (train_ds, val_ds) = data();
    let a = train(&train_ds, &val_ds, &small_cfg(2)).unwrap();
    let b = train(&train_ds, &val_ds, &small_cfg(2)).unwrap();
    assert_eq!(without_time(&a.log), without_time(&b.log));
    for ((na, pa), (_, pb)) in a.model.store.iter().zip(b.model.store.iter()) {
        assert_eq!(pa.value, pb.value, "{na}");
    }
}

#[test]
fn loss_falls_over_five_epochs() {
    let (train_ds, val_ds) = data();
    let out = train(&train_ds, &val_ds, &small_cfg(5)).unwrap();
    let losses: Vec<f64> = out.log.iter().filter(|e| e.phase == "train").map(|e| e.loss).collect();
    assert_eq!(losses.len(), 5);
    assert!(losses[4] < losses[0], "{losses:?}");
}

#[test]
fn augmentation_counts() {
    let ds = generate_dataset(&world(3, 23, 3, 1.0)).unwrap();
    // ceil(23 / 5) non-overlapping and 23 - 5 + 1 overlapping windows per movie
    assert_eq!(training_sets(&ds, false).sets.len(), 3 * 5);
    assert_eq!(training_sets(&ds, true).sets.len(), 3 * 19);

    let (train_ds, val_ds) = data();
    let cfg = FillInConfig { ablation: Ablation { no_aug: true, ..Default::default() }, ..small_cfg(1) };
    let out = train(&train_ds, &val_ds, &cfg).unwrap();
    let with_blanks = train_ds.sets.iter().filter(|s| s.num_blanks() > 0).count();
    assert_eq!(out.train_sets, with_blanks);
}

/// Accuracy of the text gender head and the majority-class share on held-out sets.
fn text_gender_accuracy(cue: f64) -> (f64, f64) {
    let cfg = TextConfig { d_model: 16, layers: 1, heads: 2, ff: 32, ..Default::default() };
    let train_ds = generate_dataset(&world(20, 50, 4, cue)).unwrap();
    let test_ds = generate_dataset(&world(10, 50, 5, cue)).unwrap();
    let vocab = build_vocab(train_ds.sets.iter().flat_map(|s| s.clips.iter().map(|c| c.sentence.as_slice())));
    let mut store = ParameterStore::<f32>::new(0);
    init_text_params(&mut store, &cfg, vocab.len(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let inputs: Vec<_> = train_ds.sets.iter().map(|s| (set_text_input(s, &vocab).unwrap(), s.blanks.iter().map(|b| b.gt_gender).collect::<Vec<_>>())).collect();
    let mut opt = Adam::new(3e-3);
    store.zero_grad();
    for _ in 0..30 {
        for chunk in inputs.chunks(8) {
            let batch: Vec<_> = chunk.iter().map(|(t, g)| (t, g.as_slice())).collect();
            gender_pretrain_step(&mut store, &cfg, &batch).unwrap();
            opt.step(&mut store).unwrap();
        }
    }
    let (mut right, mut total, mut female) = (0, 0, 0);
    for s in &test_ds.sets {
        let pred = predict_genders(&store, &cfg, &set_text_input(s, &vocab).unwrap()).unwrap();
        for (b, p) in s.blanks.iter().zip(pred) {
            total += 1;
            right += (b.gt_gender == Some(p)) as usize;
            female += (b.gt_gender == Some(Gender::Female)) as usize;
        }
    }
    let majority = female.max(total - female);
    (100.0 * right as f64 / total as f64, 100.0 * majority as f64 / total as f64)
}

#[test]
fn text_head_reads_gender_cues() {
    let (cued, _) = text_gender_accuracy(1.0);
    assert!(cued >= 99.0, "{cued}");
    // without cues the best the head can do is guess the majority gender
    let (blind, majority) = text_gender_accuracy(0.0);
    assert!(blind <= majority + 5.0, "{blind} vs majority {majority}");
}
