#![allow(dead_code)]

pub mod dbscan;

use fitb::corpus::{BlankAnnotation, Clip, ClipSet, FaceObservation, FeatureDims, Gender};
use fitb::model::{init_params, prepare_set, FillInConfig, PreparedSet};
use fitb::text::{build_vocab, Vocabulary};
use fitb_tensor::ParameterStore;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const DIMS: FeatureDims = FeatureDims { face: 4, video: 3, segments: 5 };

pub fn tiny_cfg() -> FillInConfig {
    let mut cfg = FillInConfig { d_model: 8, heads: 2, ff: 8, att_hidden: 6, k: 5, ..Default::default() };
    cfg.text.d_model = 4;
    cfg.text.heads = 2;
    cfg.text.ff = 6;
    cfg.text.layers = 1;
    cfg
}

fn face(rng: &mut ChaCha8Rng, base: &[f32], frame: u32) -> FaceObservation {
    FaceObservation { frame_index: frame, embedding: base.iter().map(|&x| x + rng.random_range(-0.01..0.01)).collect() }
}

/// Clip whose faces come from `people` (each a base embedding) and whose
/// sentence has one blank per entry of `blanks` (person index, gender).
pub fn clip(rng: &mut ChaCha8Rng, id: &str, people: &[Vec<f32>], blanks: &[(usize, Gender)]) -> Clip {
    let mut faces = Vec::new();
    for (k, p) in people.iter().enumerate() {
        for j in 0..3 {
            faces.push(face(rng, p, (k * 10 + j) as u32));
        }
    }
    let mut sentence = Vec::new();
    let mut annotations = Vec::new();
    for (i, &(who, g)) in blanks.iter().enumerate() {
        if i > 0 {
            sentence.push("while".to_string());
        }
        annotations.push(BlankAnnotation { token_position: sentence.len(), global_id: Some(format!("p{who}")), gender: Some(g) });
        sentence.push("SOMEONE".into());
        sentence.push("opens".into());
        sentence.push(if g == Gender::Male { "his" } else { "her" }.into());
        sentence.push("door".into());
    }
    sentence.push(".".into());
    Clip {
        clip_id: id.into(),
        num_frames: 50,
        faces,
        segment_features: (0..5).map(|t| (0..3).map(|j| ((t * 3 + j) as f32 * 0.37).sin()).collect()).collect(),
        sentence,
        blanks: annotations,
    }
}

pub fn people(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec<f32>> {
    (0..n).map(|_| (0..DIMS.face).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

/// Two clips, three blanks: person 0 twice, person 1 once.
pub fn toy_set(seed: u64) -> ClipSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = people(&mut rng, 2);
    let c0 = clip(&mut rng, "c0", &p, &[(0, Gender::Male), (1, Gender::Female)]);
    let c1 = clip(&mut rng, "c1", &p[..1], &[(0, Gender::Male)]);
    ClipSet::new("toy", vec![c0, c1])
}

pub fn vocab_for(sets: &[&ClipSet]) -> Vocabulary {
    build_vocab(sets.iter().flat_map(|s| s.clips.iter().map(|c| c.sentence.as_slice())))
}

pub fn toy_model(cfg: &FillInConfig, set: &ClipSet, seed: u64) -> (ParameterStore<f64>, PreparedSet) {
    let vocab = vocab_for(&[set]);
    let mut store = ParameterStore::new(seed);
    init_params(&mut store, cfg, &DIMS, vocab.len(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    let prepared = prepare_set(set, &vocab, &cfg.cluster).unwrap();
    (store, prepared)
}
