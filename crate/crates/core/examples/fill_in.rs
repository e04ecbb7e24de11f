//! Trains a small fill-in model for a few epochs, saves and reloads it, and
//! prints the predicted IDs, genders and attention for one validation set.

use fitb::corpus::Split;
use fitb::model::FillInConfig;
use fitb::synthgen::{generate_dataset, WorldConfig};
use fitb::train::{train_with, FillInModel, TrainOptions};

fn main() -> fitb::Result<()> {
    let world = WorldConfig { n_movies: 12, gender_cue_prob: 1.0, seed: 1, ..Default::default() };
    let train_ds = generate_dataset(&world)?;
    let val_ds = generate_dataset(&WorldConfig { n_movies: 2, split: Split::Val, seed: 2, ..world })?;

    let dir = std::env::temp_dir().join("fitb-fill-in-example");
    std::fs::create_dir_all(&dir).map_err(|e| fitb::FitbError::io(&dir, e))?;
    let ckpt = dir.join("model.ckpt");
    let opts = TrainOptions { checkpoint: Some(ckpt.clone()), log: Some(dir.join("log.jsonl")) };
    let cfg = FillInConfig { epochs: 3, ..FillInConfig::desk() };
    let out = train_with(&train_ds, &val_ds, &cfg, &opts)?;
    for e in &out.log {
        let val = e.val.as_ref().map_or("-".to_string(), |v| format!("{:.1}", v.class_acc));
        println!("{} epoch {} loss {:.4} val class-acc {val}", e.phase, e.epoch, e.loss);
    }

    let model = FillInModel::load(&ckpt)?;
    let preds = model.predict_dataset(&val_ds)?;
    let (set, p) = (&val_ds.sets[0], &preds[0]);
    println!("ground truth {:?}", set.gt_local_ids.as_deref().unwrap_or_default());
    println!("predicted    {:?} {:?}", p.ids, p.genders);
    for (b, att) in p.attention.iter().enumerate() {
        let shown: Vec<String> = att.iter().map(|a| format!("{a:.2}")).collect();
        println!("  blank {b} attention [{}]", shown.join(" "));
    }
    Ok(())
}
