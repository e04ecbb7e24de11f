//! Trains the full model and the text-only ablation on a desk-sized
//! synthetic corpus and compares them with the gender baseline.
//!
//!     cargo run --release --example train_desk -- [train_movies] [epochs]

use std::time::Instant;

use fitb::baselines::{run_trivial, BaselineKind, BaselinePolicy};
use fitb::corpus::Split;
use fitb::metrics::{evaluate_ids, report_table, Aggregation};
use fitb::model::{Ablation, FillInConfig};
use fitb::synthgen::{generate_dataset, WorldConfig};
use fitb::train::{evaluate_model, train};

fn main() -> fitb::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().collect();
    let movies: usize = args.get(1).and_then(|a| a.parse().ok()).unwrap_or(200);
    let epochs: usize = args.get(2).and_then(|a| a.parse().ok()).unwrap_or(FillInConfig::desk().epochs);

    let world = WorldConfig { n_movies: movies, gender_cue_prob: 1.0, face_noise_sigma: 0.05, distractor_face_rate: 0.0, seed: 1, ..Default::default() };
    let train_ds = generate_dataset(&world)?;
    let val_ds = generate_dataset(&WorldConfig { n_movies: (movies / 10).max(2), split: Split::Val, seed: 2, ..world.clone() })?;
    println!("train sets {}, val sets {}", train_ds.sets.len(), val_ds.sets.len());

    let policy = BaselinePolicy::new(BaselineKind::GtGenderAsId, None)?;
    let gt: Vec<Vec<u32>> = val_ds.sets.iter().map(|s| s.gt_local_ids.clone().unwrap()).collect();
    let pred = val_ds.sets.iter().map(|s| run_trivial(&policy, s)).collect::<fitb::Result<Vec<_>>>()?;
    let gender_report = evaluate_ids(&gt, &pred, Aggregation::Macro)?;

    let mut rows = vec![("gt_gender_as_id".to_string(), gender_report)];
    for (name, ablation) in [("full", Ablation::default()), ("text-only", Ablation { no_face: true, ..Default::default() })] {
        let cfg = FillInConfig { epochs, ablation, ..FillInConfig::desk() };
        let t = Instant::now();
        let out = train(&train_ds, &val_ds, &cfg)?;
        let (report, _) = evaluate_model(&out.model, &val_ds, Aggregation::Macro)?;
        println!("{name}: {} training windows, best epoch {}, {:.1}s", out.train_sets, out.best_epoch, t.elapsed().as_secs_f64());
        rows.push((name.to_string(), report));
    }
    let refs: Vec<(String, &_)> = rows.iter().map(|(n, r)| (n.clone(), r)).collect();
    print!("{}", report_table(&refs));
    Ok(())
}
