//! Generates a small synthetic corpus, writes it to a temporary directory,
//! reads it back and prints one set plus the local-ID histogram.

use fitb::corpus::{load_dataset, save_dataset};
use fitb::metrics::{histogram_table, id_histogram};
use fitb::synthgen::{generate_dataset, WorldConfig};

fn main() -> fitb::Result<()> {
    let cfg = WorldConfig { n_movies: 20, seed: 3, ..Default::default() };
    let ds = generate_dataset(&cfg)?;
    let dir = std::env::temp_dir().join("fitb-gen-data-example");
    std::fs::create_dir_all(&dir).map_err(|e| fitb::FitbError::io(&dir, e))?;
    let path = dir.join("train.json");
    save_dataset(&ds, &path)?;
    let back = load_dataset(&path)?;
    assert_eq!(back.sets.len(), ds.sets.len());
    println!("{} sets, {} blanks, written to {}", back.sets.len(), back.num_blanks(), path.display());

    let set = &back.sets[0];
    for clip in &set.clips {
        println!("  {:<12} {} faces  {}", clip.clip_id, clip.faces.len(), clip.sentence.join(" "));
    }
    println!("  local ids {:?}", set.gt_local_ids.as_deref().unwrap_or_default());

    let gt: Vec<Vec<u32>> = back.sets.iter().filter_map(|s| s.gt_local_ids.clone()).collect();
    print!("{}", histogram_table(&id_histogram(&gt)));
    Ok(())
}
