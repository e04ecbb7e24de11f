//! Clip sets, sentences with blanks, ground-truth identities, local ID
//! relabeling and window segmentation.

mod io;

use std::collections::HashMap;
use std::fmt;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

pub use io::{load_dataset, read_pack, save_dataset, write_pack, FeaturePack, PACK_MAGIC, PACK_VERSION};
pub(crate) use io::write_atomic;

pub const FORMAT_VERSION: u32 = 1;

/// Surface token marking a person slot in a sentence.
pub const BLANK_TOKEN: &str = "SOMEONE";

/// Default window length (clips per set).
pub const DEFAULT_SET_LEN: usize = 5;

/// Default number of temporal segments per clip.
pub const DEFAULT_SEGMENTS: usize = 5;

/// Default largest local ID.
pub const DEFAULT_MAX_ID: usize = 11;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Male,
    Female,
}

impl Gender {
    pub fn index(self) -> usize {
        match self {
            Self::Male => 0,
            Self::Female => 1,
        }
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            Self::Male
        } else {
            Self::Female
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureDims {
    pub face: usize,
    pub video: usize,
    pub segments: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FaceObservation {
    pub frame_index: u32,
    pub embedding: Vec<f32>,
}

/// A blank as annotated on its own clip.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlankAnnotation {
    pub token_position: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub global_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gender: Option<Gender>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Clip {
    pub clip_id: String,
    pub num_frames: u32,
    pub faces: Vec<FaceObservation>,
    /// `T` rows of pooled segment features.
    pub segment_features: Vec<Vec<f32>>,
    pub sentence: Vec<String>,
    pub blanks: Vec<BlankAnnotation>,
}

/// A blank within a set, in processing order.
#[derive(Clone, Debug, PartialEq)]
pub struct BlankSlot {
    pub sentence_index: usize,
    pub token_position: usize,
    pub gt_global_id: Option<String>,
    pub gt_gender: Option<Gender>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClipSet {
    pub movie_id: String,
    pub clips: Vec<Clip>,
    pub blanks: Vec<BlankSlot>,
    /// Present only when every blank carries a global ID.
    pub gt_local_ids: Option<Vec<u32>>,
}

impl ClipSet {
    /// Flattens blanks in (sentence, token position) order and derives local
    /// IDs from the global ones.
    pub fn new(movie_id: impl Into<String>, clips: Vec<Clip>) -> Self {
        let mut blanks = Vec::new();
        for (si, clip) in clips.iter().enumerate() {
            let mut own: Vec<&BlankAnnotation> = clip.blanks.iter().collect();
            own.sort_by_key(|b| b.token_position);
            blanks.extend(own.into_iter().map(|b| BlankSlot {
                sentence_index: si,
                token_position: b.token_position,
                gt_global_id: b.global_id.clone(),
                gt_gender: b.gender,
            }));
        }
        let gt_local_ids = blanks
            .iter()
            .map(|b| b.gt_global_id.clone())
            .collect::<Option<Vec<_>>>()
            .map(|g| relabel_local_ids(&g));
        Self { movie_id: movie_id.into(), clips, blanks, gt_local_ids }
    }

    pub fn num_blanks(&self) -> usize {
        self.blanks.len()
    }

    pub fn gt_genders(&self) -> Option<Vec<Gender>> {
        self.blanks.iter().map(|b| b.gt_gender).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Movie {
    pub movie_id: String,
    pub clips: Vec<Clip>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub split: Split,
    pub sets: Vec<ClipSet>,
    pub dims: FeatureDims,
    pub format_version: u32,
    /// Resolved configuration of whatever produced this dataset.
    pub provenance: Option<serde_json::Value>,
}

impl Dataset {
    /// Segments every movie into windows of `n` clips.
    pub fn from_movies(split: Split, movies: &[Movie], n: usize, overlapping: bool, dims: FeatureDims) -> Self {
        let sets = movies.iter().flat_map(|m| split_windows(&m.movie_id, &m.clips, n, overlapping)).collect();
        Self { split, sets, dims, format_version: FORMAT_VERSION, provenance: None }
    }

    /// Regroups sets into movies (clips deduplicated by `clip_id`, movie order
    /// by first appearance).
    pub fn movies(&self) -> Vec<Movie> {
        let mut order: Vec<Movie> = Vec::new();
        let mut pos: HashMap<&str, usize> = HashMap::new();
        for set in &self.sets {
            let mi = *pos.entry(set.movie_id.as_str()).or_insert_with(|| {
                order.push(Movie { movie_id: set.movie_id.clone(), clips: Vec::new() });
                order.len() - 1
            });
            for clip in &set.clips {
                if !order[mi].clips.iter().any(|c| c.clip_id == clip.clip_id) {
                    order[mi].clips.push(clip.clone());
                }
            }
        }
        order
    }

    pub fn num_blanks(&self) -> usize {
        self.sets.iter().map(|s| s.num_blanks()).sum()
    }

    /// Checks every set and the declared feature dimensions.
    pub fn validate(&self) -> Vec<(usize, Violation)> {
        let mut out = Vec::new();
        for (i, set) in self.sets.iter().enumerate() {
            for v in validate_set(set) {
                out.push((i, v));
            }
            for (ci, clip) in set.clips.iter().enumerate() {
                if clip.segment_features.len() != self.dims.segments {
                    out.push((i, Violation::new(format!("clips[{ci}].segment_features"), format!("expected {} segments, found {}", self.dims.segments, clip.segment_features.len()))));
                }
                if let Some(r) = clip.segment_features.iter().find(|r| r.len() != self.dims.video) {
                    out.push((i, Violation::new(format!("clips[{ci}].segment_features"), format!("expected width {}, found {}", self.dims.video, r.len()))));
                }
                if let Some(f) = clip.faces.iter().find(|f| f.embedding.len() != self.dims.face) {
                    out.push((i, Violation::new(format!("clips[{ci}].faces"), format!("expected width {}, found {}", self.dims.face, f.embedding.len()))));
                }
            }
        }
        out
    }
}

/// Maps identifiers to local IDs `1, 2, …` in order of first occurrence.
pub fn relabel_local_ids<T: Eq + Hash>(ids: &[T]) -> Vec<u32> {
    let mut seen: HashMap<&T, u32> = HashMap::new();
    ids.iter()
        .map(|id| {
            let next = seen.len() as u32 + 1;
            *seen.entry(id).or_insert(next)
        })
        .collect()
}

/// True when each new ID is exactly one more than the largest seen so far.
pub fn is_canonical(ids: &[u32]) -> bool {
    let mut max = 0;
    for &id in ids {
        if id == 0 || id > max + 1 {
            return false;
        }
        max = max.max(id);
    }
    true
}

/// Cuts a movie into windows of `n` consecutive clips. Non-overlapping mode
/// keeps a short trailing window; overlapping mode slides with stride 1.
pub fn split_windows(movie_id: &str, clips: &[Clip], n: usize, overlapping: bool) -> Vec<ClipSet> {
    let n = n.max(1);
    if clips.is_empty() {
        return Vec::new();
    }
    let starts: Vec<usize> = if overlapping {
        (0..clips.len().saturating_sub(n) + 1).collect()
    } else {
        (0..clips.len()).step_by(n).collect()
    };
    starts
        .into_iter()
        .map(|s| ClipSet::new(movie_id, clips[s..(s + n).min(clips.len())].to_vec()))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl Violation {
    fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self { field: field.into(), message: message.into() }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

/// Lists every broken invariant of a set. Empty means well formed.
pub fn validate_set(cs: &ClipSet) -> Vec<Violation> {
    let mut out = Vec::new();
    let segs = cs.clips.first().map(|c| c.segment_features.len());
    let face_dim = cs.clips.iter().flat_map(|c| c.faces.first()).map(|f| f.embedding.len()).next();
    for (ci, clip) in cs.clips.iter().enumerate() {
        if clip.num_frames == 0 {
            out.push(Violation::new(format!("clips[{ci}].num_frames"), "must be positive"));
        }
        for (fi, face) in clip.faces.iter().enumerate() {
            if face.frame_index >= clip.num_frames {
                out.push(Violation::new(format!("clips[{ci}].faces[{fi}].frame_index"), format!("{} >= num_frames {}", face.frame_index, clip.num_frames)));
            }
            if Some(face.embedding.len()) != face_dim {
                out.push(Violation::new(format!("clips[{ci}].faces[{fi}].embedding"), "inconsistent dimension"));
            }
        }
        if clip.segment_features.is_empty() || Some(clip.segment_features.len()) != segs {
            out.push(Violation::new(format!("clips[{ci}].segment_features"), "segment count missing or inconsistent"));
        }
        for (bi, b) in clip.blanks.iter().enumerate() {
            match clip.sentence.get(b.token_position) {
                None => out.push(Violation::new(
                    format!("clips[{ci}].blanks[{bi}].token_position"),
                    format!("position {} beyond sentence length {}", b.token_position, clip.sentence.len()),
                )),
                Some(tok) if tok != BLANK_TOKEN => {
                    out.push(Violation::new(format!("clips[{ci}].blanks[{bi}].token_position"), format!("token `{tok}` is not a blank")))
                }
                _ => {}
            }
        }
    }
    let mut flat = Vec::new();
    for (ci, clip) in cs.clips.iter().enumerate() {
        let mut pos: Vec<usize> = clip.blanks.iter().map(|b| b.token_position).collect();
        pos.sort_unstable();
        flat.extend(pos.into_iter().map(|p| (ci, p)));
    }
    let listed: Vec<(usize, usize)> = cs.blanks.iter().map(|b| (b.sentence_index, b.token_position)).collect();
    if listed != flat {
        out.push(Violation::new("blanks", "not ordered by (sentence, token position) or out of sync with clips"));
    }
    if listed.windows(2).any(|w| w[0] == w[1]) {
        out.push(Violation::new("blanks", "duplicate blank position"));
    }
    if let Some(ids) = &cs.gt_local_ids {
        if ids.len() != cs.blanks.len() {
            out.push(Violation::new("gt_local_ids", format!("length {} != blank count {}", ids.len(), cs.blanks.len())));
        } else if !is_canonical(ids) {
            out.push(Violation::new("gt_local_ids", "not first-occurrence canonical"));
        } else if let Some(globals) = cs.blanks.iter().map(|b| b.gt_global_id.as_ref()).collect::<Option<Vec<_>>>() {
            if relabel_local_ids(&globals) != *ids {
                out.push(Violation::new("gt_local_ids", "inconsistent with global IDs"));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn clip(id: &str, blanks: &[(&str, Gender)]) -> Clip {
        let mut sentence = Vec::new();
        let mut anns = Vec::new();
        for (g, gender) in blanks {
            anns.push(BlankAnnotation { token_position: sentence.len(), global_id: Some(g.to_string()), gender: Some(*gender) });
            sentence.push(BLANK_TOKEN.to_string());
            sentence.push("nods".to_string());
        }
        sentence.push(".".into());
        Clip {
            clip_id: id.into(),
            num_frames: 10,
            faces: vec![FaceObservation { frame_index: 1, embedding: vec![1.0, 0.0] }],
            segment_features: vec![vec![0.0; 3]; 5],
            sentence,
            blanks: anns,
        }
    }

    #[test]
    fn relabel_examples() {
        assert_eq!(relabel_local_ids(&["Jane", "John", "Jane", "Bill"]), vec![1, 2, 1, 3]);
        assert_eq!(relabel_local_ids::<&str>(&[]), Vec::<u32>::new());
        assert_eq!(relabel_local_ids(&["A", "A", "A"]), vec![1, 1, 1]);
        assert_eq!(relabel_local_ids(&["B", "A", "B", "A"]), vec![1, 2, 1, 2]);
    }

    #[test]
    fn window_counts() {
        let clips: Vec<Clip> = (0..12).map(|i| clip(&format!("c{i}"), &[("A", Gender::Male)])).collect();
        let sizes: Vec<usize> = split_windows("m", &clips, 5, false).iter().map(|s| s.clips.len()).collect();
        assert_eq!(sizes, vec![5, 5, 2]);
        assert_eq!(split_windows("m", &clips, 5, true).len(), 8);
        assert_eq!(split_windows("m", &clips[..5], 5, true).len(), 1);
        assert_eq!(split_windows("m", &clips[..5], 5, false).len(), 1);
        assert_eq!(split_windows("m", &clips[..3], 5, true).len(), 1);
    }

    #[test]
    fn windows_relabel_locally() {
        let clips = vec![
            clip("c0", &[("A", Gender::Male)]),
            clip("c1", &[("B", Gender::Female)]),
            clip("c2", &[("A", Gender::Male), ("C", Gender::Male)]),
        ];
        let sets = split_windows("m", &clips, 2, true);
        assert_eq!(sets[0].gt_local_ids, Some(vec![1, 2]));
        assert_eq!(sets[1].gt_local_ids, Some(vec![1, 2, 3]));
        assert!(sets.iter().all(|s| validate_set(s).is_empty()));
    }

    #[test]
    fn validate_examples() {
        let mut cs = ClipSet::new("m", vec![clip("c0", &[("A", Gender::Male), ("B", Gender::Female)])]);
        assert!(validate_set(&cs).is_empty());

        let mut shifted = cs.clone();
        shifted.gt_local_ids = Some(vec![2, 1]);
        let v = validate_set(&shifted);
        assert_eq!(v.len(), 1);
        assert!(v[0].message.contains("not first-occurrence canonical"));

        cs.clips[0].blanks[1].token_position = 40;
        let v = validate_set(&cs);
        assert!(v.iter().any(|v| v.message.contains("beyond sentence length")), "{v:?}");
    }

    #[test]
    fn missing_global_ids_mean_no_ground_truth() {
        let mut c = clip("c0", &[("A", Gender::Male)]);
        c.blanks[0].global_id = None;
        let cs = ClipSet::new("m", vec![c]);
        assert!(cs.gt_local_ids.is_none());
        assert!(validate_set(&cs).is_empty());
    }
}
