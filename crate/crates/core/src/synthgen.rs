//! Deterministic synthetic movies: latent characters with noisy face
//! embeddings, action-bearing segment features and templated sentences with
//! optional gender cues.
//!
//! A face embedding carries the character's gender in its first coordinate,
//! so attended faces are gender-predictive. Sentences name the action each
//! blanked character performs; the same action drives the segment feature
//! aligned with that character's faces. Identity itself is only recoverable
//! from faces.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use rand::seq::{index::sample, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{BlankAnnotation, Clip, Dataset, FaceObservation, FeatureDims, Gender, Movie, Split, BLANK_TOKEN, FORMAT_VERSION};
use crate::error::{FitbError, Result};
use crate::seed::{rng_for, rng_for_item, Purpose};

pub const ACTION_WORDS: &[&str] = &[
    "opens", "grabs", "lifts", "drops", "holds", "pushes", "pulls", "carries", "throws", "watches", "follows", "kicks",
];
pub const OBJECT_WORDS: &[&str] = &["door", "bag", "phone", "glass", "letter", "book", "car", "box", "hat", "key"];
pub const GENDERED_TOKENS: &[&str] = &["he", "she", "his", "her", "him", "hers"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub n_movies: usize,
    pub clips_per_movie: usize,
    /// Clips per set.
    pub set_len: usize,
    pub face_dim: usize,
    pub video_dim: usize,
    pub segments: usize,
    /// Expected norm of the noise added to a unit identity embedding.
    pub face_noise_sigma: f64,
    pub gender_cue_prob: f64,
    /// Chance, per character face, of an extra face from a one-off stranger.
    pub distractor_face_rate: f64,
    /// Inclusive range.
    pub characters_per_movie: [usize; 2],
    /// Target share of blanks per local ID rank.
    pub id_prior: Vec<f64>,
    /// Probability of a sentence having 0, 1, 2, … blanks.
    pub blanks_per_sentence: Vec<f64>,
    /// Chance that an unmentioned character is also on screen.
    pub extra_character_prob: f64,
    /// Inclusive range of faces each on-screen character emits.
    pub faces_per_character: [usize; 2],
    /// Inclusive range; a clip has `segments × this` frames.
    pub frames_per_segment: [usize; 2],
    pub num_actions: usize,
    pub video_noise_sigma: f64,
    /// Size of the gender component added before normalizing identities.
    pub gender_offset: f64,
    pub split: Split,
    pub seed: u64,
    /// Seeds what each action looks like on video. Keep it equal across
    /// splits, or a model trained on one split sees unfamiliar actions on
    /// another.
    pub world_seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            n_movies: 20,
            clips_per_movie: 50,
            set_len: 5,
            face_dim: 32,
            video_dim: 16,
            segments: 5,
            face_noise_sigma: 0.05,
            gender_cue_prob: 0.8,
            distractor_face_rate: 0.05,
            characters_per_movie: [5, 8],
            id_prior: vec![0.52, 0.31, 0.12, 0.04, 0.01],
            blanks_per_sentence: vec![0.15, 0.6, 0.25],
            extra_character_prob: 0.5,
            faces_per_character: [3, 8],
            frames_per_segment: [8, 16],
            num_actions: 8,
            video_noise_sigma: 0.1,
            gender_offset: 1.0,
            split: Split::Train,
            seed: 0,
            world_seed: 0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(FitbError::Config(m));
        for (name, p) in [
            ("face_noise_sigma", self.face_noise_sigma.min(1.0)),
            ("gender_cue_prob", self.gender_cue_prob),
            ("distractor_face_rate", self.distractor_face_rate),
            ("extra_character_prob", self.extra_character_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1]"));
            }
        }
        if self.characters_per_movie[1] == 0 {
            return bad("zero characters configured".into());
        }
        if self.characters_per_movie[0] > self.characters_per_movie[1] {
            return bad("characters_per_movie range is reversed".into());
        }
        if self.id_prior.is_empty() || self.id_prior.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return bad("id_prior entries must lie in [0, 1]".into());
        }
        if (self.id_prior.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("id_prior must sum to 1".into());
        }
        if self.characters_per_movie[0] < self.id_prior.len() {
            return bad(format!("at least {} characters per movie needed for the id prior", self.id_prior.len()));
        }
        if self.blanks_per_sentence.len() < 2 || self.blanks_per_sentence.len() > 4 || (self.blanks_per_sentence.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("blanks_per_sentence must be a distribution over 0..=1 to 0..=3 blanks".into());
        }
        if self.segments < 3 {
            return bad("need at least 3 segments".into());
        }
        if self.num_actions < 3 || self.num_actions > ACTION_WORDS.len() {
            return bad(format!("num_actions must lie in [3, {}]", ACTION_WORDS.len()));
        }
        if self.set_len == 0 || self.clips_per_movie == 0 || self.face_dim < 2 || self.video_dim == 0 {
            return bad("set_len, clips_per_movie, face_dim and video_dim must be positive".into());
        }
        if self.faces_per_character[0] == 0 || self.faces_per_character[0] > self.faces_per_character[1] {
            return bad("faces_per_character must be a nonempty positive range".into());
        }
        if self.frames_per_segment[0] == 0 || self.frames_per_segment[0] > self.frames_per_segment[1] {
            return bad("frames_per_segment must be a nonempty positive range".into());
        }
        Ok(())
    }

    pub fn dims(&self) -> FeatureDims {
        FeatureDims { face: self.face_dim, video: self.video_dim, segments: self.segments }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CharacterProfile {
    pub identity_embedding: Vec<f32>,
    pub gender: Gender,
    /// Personal motion signature mixed into the segments the character acts in.
    pub action_embedding: Vec<f32>,
}

fn unit(v: Vec<f64>) -> Vec<f32> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.into_iter().map(|x| (x / n) as f32).collect()
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize, std: f64) -> Vec<f64> {
    let normal = Normal::new(0.0, std.max(0.0)).expect("finite std");
    (0..dim).map(|_| normal.sample(rng)).collect()
}

pub fn random_identity(rng: &mut ChaCha8Rng, dim: usize, gender: Gender, gender_offset: f64) -> Vec<f32> {
    let mut v = gaussian(rng, dim, 1.0 / (dim as f64).sqrt());
    v[0] += match gender {
        Gender::Male => gender_offset,
        Gender::Female => -gender_offset,
    };
    unit(v)
}

pub fn random_character(rng: &mut ChaCha8Rng, cfg: &WorldConfig) -> CharacterProfile {
    let gender = if rng.random_bool(0.5) { Gender::Male } else { Gender::Female };
    CharacterProfile {
        identity_embedding: random_identity(rng, cfg.face_dim, gender, cfg.gender_offset),
        gender,
        action_embedding: gaussian(rng, cfg.video_dim, 0.3 / (cfg.video_dim as f64).sqrt()).into_iter().map(|x| x as f32).collect(),
    }
}

/// Draws unit-normalized noisy copies of a character's identity. The noise
/// has expected norm `sigma` regardless of dimension.
pub fn sample_faces(profile: &CharacterProfile, count: usize, sigma: f64, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f32>>> {
    if count == 0 {
        return Err(FitbError::Config("sample_faces needs count >= 1".into()));
    }
    if sigma < 0.0 {
        return Err(FitbError::Config("sample_faces needs sigma >= 0".into()));
    }
    let id = &profile.identity_embedding;
    if sigma == 0.0 {
        return Ok(vec![id.clone(); count]);
    }
    let std = sigma / (id.len() as f64).sqrt();
    Ok((0..count)
        .map(|_| unit(id.iter().zip(gaussian(rng, id.len(), std)).map(|(&x, n)| x as f64 + n).collect()))
        .collect())
}

/// One blank's participant as seen by the sentence renderer.
#[derive(Clone, Copy, Debug)]
pub struct BlankRole {
    pub action: usize,
    pub gender: Gender,
}

/// Renders a template sentence with one clause per blank. Returns the tokens
/// and the blank positions.
pub fn render_sentence(roles: &[BlankRole], gender_cue_prob: f64, rng: &mut ChaCha8Rng) -> (Vec<String>, Vec<usize>) {
    let mut tokens: Vec<String> = Vec::new();
    let mut positions = Vec::new();
    if roles.is_empty() {
        let object = OBJECT_WORDS[rng.random_range(0..OBJECT_WORDS.len())];
        let filler: &[&str] = if rng.random_bool(0.5) { &["the", object, "lies", "on", "the", "table", "."] } else { &["rain", "falls", "on", "the", object, "."] };
        return (filler.iter().map(|s| s.to_string()).collect(), positions);
    }
    for (i, role) in roles.iter().enumerate() {
        if i > 0 {
            tokens.push("while".into());
        }
        positions.push(tokens.len());
        tokens.push(BLANK_TOKEN.into());
        tokens.push(ACTION_WORDS[role.action].into());
        let det = if rng.random_bool(gender_cue_prob) {
            match role.gender {
                Gender::Male => "his",
                Gender::Female => "her",
            }
        } else {
            "the"
        };
        tokens.push(det.into());
        tokens.push(OBJECT_WORDS[rng.random_range(0..OBJECT_WORDS.len())].into());
    }
    tokens.push(".".into());
    (tokens, positions)
}

fn sample_index(p: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &x) in p.iter().enumerate() {
        acc += x;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

fn sample_excluding(p: &[f64], exclude: &[usize], rng: &mut ChaCha8Rng) -> Option<usize> {
    let q: Vec<f64> = p.iter().enumerate().map(|(i, &x)| if exclude.contains(&i) { 0.0 } else { x }).collect();
    let total: f64 = q.iter().sum();
    if total <= 0.0 {
        return None;
    }
    let q: Vec<f64> = q.iter().map(|x| x / total).collect();
    Some(sample_index(&q, rng))
}

/// Local character rank per blank for each clip of one set. Each blank picks
/// among the ranks already used plus the next new one, weighted by
/// `rank_weights`; blanks sharing a sentence always name distinct ranks.
fn sample_slots(cfg: &WorldConfig, rank_weights: &[f64], clips: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut next_new = 0;
    (0..clips)
        .map(|_| {
            let n = sample_index(&cfg.blanks_per_sentence, rng);
            let mut slots: Vec<usize> = Vec::with_capacity(n);
            for _ in 0..n {
                let open = (next_new + 1).min(rank_weights.len());
                match sample_excluding(&rank_weights[..open], &slots, rng) {
                    Some(s) => {
                        next_new = next_new.max(s + 1);
                        slots.push(s)
                    }
                    None => break,
                }
            }
            slots
        })
        .collect()
}

fn set_lengths(cfg: &WorldConfig) -> Vec<usize> {
    let full = cfg.clips_per_movie / cfg.set_len;
    let mut out = vec![cfg.set_len; full];
    if cfg.clips_per_movie % cfg.set_len > 0 {
        out.push(cfg.clips_per_movie % cfg.set_len);
    }
    out
}

fn local_histogram(cfg: &WorldConfig, rank_weights: &[f64], rng: &mut ChaCha8Rng, sets: usize) -> Vec<f64> {
    let lengths = set_lengths(cfg);
    let mut counts = vec![0f64; cfg.id_prior.len()];
    for s in 0..sets {
        let slots: Vec<usize> = sample_slots(cfg, rank_weights, lengths[s % lengths.len()], rng).into_iter().flatten().collect();
        for id in crate::corpus::relabel_local_ids(&slots) {
            counts[id as usize - 1] += 1.0;
        }
    }
    let total: f64 = counts.iter().sum::<f64>().max(1.0);
    counts.iter().map(|c| c / total).collect()
}

/// Rank weights under which the simulated local-ID histogram reproduces
/// `id_prior`, found by compass search over softmax logits minimizing the
/// chi-squared error on simulated sets with common random numbers. Results
/// are cached per distinct configuration of the quantities that affect them.
pub fn calibrate_rank_weights(cfg: &WorldConfig) -> Vec<f64> {
    static CACHE: OnceLock<Mutex<HashMap<String, Vec<f64>>>> = OnceLock::new();
    let key = format!("{:?}|{:?}|{}|{}", cfg.id_prior, cfg.blanks_per_sentence, cfg.clips_per_movie, cfg.set_len);
    let cache = CACHE.get_or_init(Default::default);
    if let Some(q) = cache.lock().expect("calibration cache").get(&key) {
        return q.clone();
    }
    let target = &cfg.id_prior;
    let softmax = |z: &[f64]| {
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|x| (x - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|x| x / s).collect::<Vec<f64>>()
    };
    let cost = |z: &[f64]| {
        let mut rng = rng_for(CALIBRATION_SEED, Purpose::Calibration);
        let h = local_histogram(cfg, &softmax(z), &mut rng, 10_000);
        h.iter().zip(target).map(|(a, b)| (a - b).powi(2) / b.max(1e-6)).sum::<f64>()
    };
    let mut z: Vec<f64> = target.iter().map(|p| p.max(1e-6).ln()).collect();
    let mut best = cost(&z);
    let mut step = 1.0;
    while step > 1e-3 && best > 1e-7 {
        let mut improved = false;
        for k in 0..z.len() {
            for dir in [1.0, -1.0] {
                let mut trial = z.clone();
                trial[k] += dir * step;
                let c = cost(&trial);
                if c < best {
                    best = c;
                    z = trial;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    let q = softmax(&z);
    cache.lock().expect("calibration cache").insert(key, q.clone());
    q
}

const CALIBRATION_SEED: u64 = 0x5107;

struct World {
    actions: Vec<Vec<f32>>,
    rank_weights: Vec<f64>,
}

fn generate_movie(cfg: &WorldConfig, world: &World, mi: usize) -> Result<Movie> {
    let mut rng = rng_for_item(cfg.seed, Purpose::Data, mi as u64);
    let movie_id = format!("movie{mi:04}");
    let cast_size = rng.random_range(cfg.characters_per_movie[0]..=cfg.characters_per_movie[1]);
    let cast: Vec<CharacterProfile> = (0..cast_size).map(|_| random_character(&mut rng, cfg)).collect();
    let mut clips = Vec::with_capacity(cfg.clips_per_movie);
    for len in set_lengths(cfg) {
        let slots = sample_slots(cfg, &world.rank_weights, len, &mut rng);
        let mut order: Vec<usize> = (0..cast_size).collect();
        order.shuffle(&mut rng);
        for clip_slots in slots {
            let mentioned: Vec<usize> = clip_slots.iter().map(|&s| order[s]).collect();
            let idx = clips.len();
            clips.push(generate_clip(cfg, world, &cast, &mentioned, &format!("{movie_id}_c{idx:04}"), &movie_id, &mut rng)?);
        }
    }
    Ok(Movie { movie_id, clips })
}

fn generate_clip(
    cfg: &WorldConfig,
    world: &World,
    cast: &[CharacterProfile],
    mentioned: &[usize],
    clip_id: &str,
    movie_id: &str,
    rng: &mut ChaCha8Rng,
) -> Result<Clip> {
    let max_active = cfg.segments.min(3).min(cast.len());
    let mut active: Vec<usize> = mentioned.to_vec();
    let others = |active: &[usize]| -> Vec<usize> { (0..cast.len()).filter(|c| !active.contains(c)).collect() };
    if active.is_empty() {
        let pool = others(&active);
        active.push(pool[rng.random_range(0..pool.len())]);
    }
    if active.len() < max_active && rng.random_bool(cfg.extra_character_prob) {
        let pool = others(&active);
        if !pool.is_empty() {
            active.push(pool[rng.random_range(0..pool.len())]);
        }
    }

    let frames_per_seg = rng.random_range(cfg.frames_per_segment[0]..=cfg.frames_per_segment[1]);
    let num_frames = (cfg.segments * frames_per_seg) as u32;
    let seg_of = sample(rng, cfg.segments, active.len()).into_vec();
    let action_of = sample(rng, cfg.num_actions, active.len()).into_vec();

    let mut faces = Vec::new();
    for (k, &c) in active.iter().enumerate() {
        let count = rng.random_range(cfg.faces_per_character[0]..=cfg.faces_per_character[1]);
        let start = seg_of[k] * frames_per_seg;
        for emb in sample_faces(&cast[c], count, cfg.face_noise_sigma, rng)? {
            let frame = (start + rng.random_range(0..frames_per_seg)) as u32;
            faces.push(FaceObservation { frame_index: frame, embedding: emb });
            if cfg.distractor_face_rate > 0.0 && rng.random_bool(cfg.distractor_face_rate) {
                let g = if rng.random_bool(0.5) { Gender::Male } else { Gender::Female };
                let stranger = random_identity(rng, cfg.face_dim, g, cfg.gender_offset);
                faces.push(FaceObservation { frame_index: rng.random_range(0..num_frames), embedding: stranger });
            }
        }
    }
    faces.sort_by_key(|f| f.frame_index);

    let mut segment_features = Vec::with_capacity(cfg.segments);
    for t in 0..cfg.segments {
        let mut row: Vec<f64> = gaussian(rng, cfg.video_dim, cfg.video_noise_sigma / (cfg.video_dim as f64).sqrt());
        if let Some(k) = seg_of.iter().position(|&s| s == t) {
            let sig = &cast[active[k]].action_embedding;
            for (j, x) in row.iter_mut().enumerate() {
                *x += world.actions[action_of[k]][j] as f64 + sig[j] as f64;
            }
        }
        segment_features.push(row.into_iter().map(|x| x as f32).collect());
    }

    let roles: Vec<BlankRole> = mentioned
        .iter()
        .enumerate()
        .map(|(k, &c)| BlankRole { action: action_of[k], gender: cast[c].gender })
        .collect();
    let (sentence, positions) = render_sentence(&roles, cfg.gender_cue_prob, rng);
    let blanks = positions
        .into_iter()
        .zip(mentioned)
        .map(|(p, &c)| BlankAnnotation { token_position: p, global_id: Some(format!("{movie_id}/char{c}")), gender: Some(cast[c].gender) })
        .collect();
    Ok(Clip { clip_id: clip_id.to_string(), num_frames, faces, segment_features, sentence, blanks })
}

/// Movies in index order; each movie draws from its own derived seed.
pub fn generate_movies(cfg: &WorldConfig) -> Result<Vec<Movie>> {
    cfg.validate()?;
    let mut rng = rng_for_item(cfg.world_seed, Purpose::Data, u64::MAX);
    let actions = (0..cfg.num_actions)
        .map(|_| gaussian(&mut rng, cfg.video_dim, 1.0 / (cfg.video_dim as f64).sqrt()).into_iter().map(|x| x as f32).collect())
        .collect();
    let world = World { actions, rank_weights: calibrate_rank_weights(cfg) };
    (0..cfg.n_movies).map(|mi| generate_movie(cfg, &world, mi)).collect()
}

/// Non-overlapping sets over freshly generated movies.
pub fn generate_dataset(cfg: &WorldConfig) -> Result<Dataset> {
    let movies = generate_movies(cfg)?;
    let mut ds = Dataset::from_movies(cfg.split, &movies, cfg.set_len, false, cfg.dims());
    ds.format_version = FORMAT_VERSION;
    ds.provenance = Some(serde_json::json!({ "generator": "synthgen", "world": cfg, "seed": cfg.seed }));
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn small() -> WorldConfig {
        WorldConfig { n_movies: 2, clips_per_movie: 10, ..Default::default() }
    }

    #[test]
    fn set_count_arithmetic() {
        let ds = generate_dataset(&small()).unwrap();
        assert_eq!(ds.sets.len(), 4);
        assert!(ds.validate().is_empty());
    }

    #[test]
    fn same_seed_same_dataset() {
        assert_eq!(generate_dataset(&small()).unwrap(), generate_dataset(&small()).unwrap());
        let other = WorldConfig { seed: 1, ..small() };
        assert_ne!(generate_dataset(&small()).unwrap(), generate_dataset(&other).unwrap());
    }

    #[test]
    fn noiseless_faces_are_identical_per_character() {
        let cfg = WorldConfig { face_noise_sigma: 0.0, distractor_face_rate: 0.0, ..small() };
        let ds = generate_dataset(&cfg).unwrap();
        for set in &ds.sets {
            for clip in &set.clips {
                let params = crate::cluster::ClusterParams { eps: 1e-6, min_pts: 1, promote_noise: true };
                let cs = crate::cluster::build_clusters(clip, &params);
                // every cluster is an exact copy group: members equal the center bit for bit
                for c in &cs.clusters {
                    let members: Vec<&FaceObservation> = clip.faces.iter().filter(|f| c.member_frames.contains(&f.frame_index)).collect();
                    assert!(members.iter().any(|f| f.embedding == c.center));
                }
            }
        }
    }

    #[test]
    fn zero_characters_is_a_config_error() {
        let cfg = WorldConfig { characters_per_movie: [0, 0], ..small() };
        assert!(matches!(generate_dataset(&cfg), Err(FitbError::Config(_))));
    }

    #[test]
    fn sentences_follow_cue_probability() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let roles = [BlankRole { action: 0, gender: Gender::Female }, BlankRole { action: 1, gender: Gender::Male }];
        let (toks, pos) = render_sentence(&roles, 1.0, &mut rng);
        assert_eq!(pos.len(), 2);
        assert_ne!(pos[0], pos[1]);
        assert!(pos.iter().all(|&p| toks[p] == BLANK_TOKEN));
        assert!(toks.contains(&"her".to_string()) && toks.contains(&"his".to_string()));

        let cfg = WorldConfig { gender_cue_prob: 0.0, ..small() };
        let ds = generate_dataset(&cfg).unwrap();
        assert!(ds.sets.iter().flat_map(|s| &s.clips).flat_map(|c| &c.sentence).all(|t| !GENDERED_TOKENS.contains(&t.as_str())));

        let cfg = WorldConfig { gender_cue_prob: 1.0, ..small() };
        let ds = generate_dataset(&cfg).unwrap();
        for clip in ds.sets.iter().flat_map(|s| &s.clips).filter(|c| !c.blanks.is_empty()) {
            assert!(clip.sentence.iter().any(|t| GENDERED_TOKENS.contains(&t.as_str())));
        }
    }

    #[test]
    fn sample_faces_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cfg = WorldConfig::default();
        let p = random_character(&mut rng, &cfg);
        assert!(sample_faces(&p, 0, 0.1, &mut rng).is_err());
        assert_eq!(sample_faces(&p, 3, 0.0, &mut rng).unwrap(), vec![p.identity_embedding.clone(); 3]);
        let norm: f64 = p.identity_embedding.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
    }
}
