//! Per-clip face clustering and temporal alignment of clusters to segment
//! features.

use serde::Serialize;

use crate::corpus::{Clip, ClipSet};
use crate::error::{FitbError, Result};

pub const DEFAULT_EPS: f64 = 0.2;
pub const DEFAULT_MIN_PTS: usize = 3;

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum()
}

/// Classic DBSCAN under Euclidean distance. A point is core when at least
/// `min_pts` points (itself included) lie within `eps`. Clusters are the
/// connected components of core points, numbered by the first core point in
/// input order; a border point joins the cluster of its nearest core
/// neighbour. `None` marks noise.
pub fn dbscan<P: AsRef<[f32]>>(points: &[P], eps: f64, min_pts: usize) -> Vec<Option<usize>> {
    let n = points.len();
    let eps2 = eps * eps;
    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| sq_dist(points[i].as_ref(), points[j].as_ref()) <= eps2).collect())
        .collect();
    let core: Vec<bool> = neighbors.iter().map(|nb| nb.len() >= min_pts.max(1)).collect();

    let mut labels: Vec<Option<usize>> = vec![None; n];
    let mut next = 0;
    let mut stack = Vec::new();
    for i in 0..n {
        if !core[i] || labels[i].is_some() {
            continue;
        }
        labels[i] = Some(next);
        stack.push(i);
        while let Some(p) = stack.pop() {
            for &q in &neighbors[p] {
                if core[q] && labels[q].is_none() {
                    labels[q] = Some(next);
                    stack.push(q);
                }
            }
        }
        next += 1;
    }

    for i in 0..n {
        if core[i] {
            continue;
        }
        let nearest = neighbors[i]
            .iter()
            .filter(|&&j| core[j])
            .map(|&j| (sq_dist(points[i].as_ref(), points[j].as_ref()), j))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        if let Some((_, j)) = nearest {
            labels[i] = labels[j];
        }
    }
    labels
}

#[derive(Clone, Copy, Debug, Serialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum ClusterScope {
    Clip,
    Set,
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct FaceCluster {
    /// Mean of member embeddings.
    pub center: Vec<f32>,
    pub member_frames: Vec<u32>,
    /// Clip index (within the set) of each member; all equal for clip scope.
    pub member_clips: Vec<usize>,
    pub relative_position: f64,
    pub aligned_segment: usize,
    pub visual_context: Vec<f32>,
}

impl FaceCluster {
    pub fn size(&self) -> usize {
        self.member_frames.len()
    }

    /// Median member frame (lower median for even counts).
    pub fn center_frame(&self) -> u32 {
        let mut f = self.member_frames.clone();
        f.sort_unstable();
        f[(f.len() - 1) / 2]
    }
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct ClusterSet {
    pub clusters: Vec<FaceCluster>,
    pub source_scope: ClusterScope,
}

impl ClusterSet {
    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterParams {
    pub eps: f64,
    pub min_pts: usize,
    pub promote_noise: bool,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self { eps: DEFAULT_EPS, min_pts: DEFAULT_MIN_PTS, promote_noise: true }
    }
}

fn group(embeddings: &[&[f32]], frames: &[u32], clips: &[usize], params: &ClusterParams, scope: ClusterScope) -> ClusterSet {
    let labels = dbscan(embeddings, params.eps, params.min_pts);
    let n_clusters = labels.iter().flatten().max().map_or(0, |m| m + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_clusters];
    for (i, l) in labels.iter().enumerate() {
        match l {
            Some(c) => members[*c].push(i),
            None if params.promote_noise => members.push(vec![i]),
            None => {}
        }
    }
    let clusters = members
        .into_iter()
        .map(|idx| {
            let dim = embeddings[idx[0]].len();
            let mut sum = vec![0f64; dim];
            for &i in &idx {
                for (s, &x) in sum.iter_mut().zip(embeddings[i]) {
                    *s += x as f64;
                }
            }
            FaceCluster {
                center: sum.iter().map(|s| (s / idx.len() as f64) as f32).collect(),
                member_frames: idx.iter().map(|&i| frames[i]).collect(),
                member_clips: idx.iter().map(|&i| clips[i]).collect(),
                relative_position: 0.0,
                aligned_segment: 0,
                visual_context: Vec::new(),
            }
        })
        .collect();
    ClusterSet { clusters, source_scope: scope }
}

/// Clusters one clip's face observations.
pub fn build_clusters(clip: &Clip, params: &ClusterParams) -> ClusterSet {
    let emb: Vec<&[f32]> = clip.faces.iter().map(|f| f.embedding.as_slice()).collect();
    let frames: Vec<u32> = clip.faces.iter().map(|f| f.frame_index).collect();
    group(&emb, &frames, &vec![0; emb.len()], params, ClusterScope::Clip)
}

/// Pools the faces of every clip in the set before clustering.
pub fn build_set_clusters(set: &ClipSet, params: &ClusterParams) -> ClusterSet {
    let mut emb = Vec::new();
    let mut frames = Vec::new();
    let mut clips = Vec::new();
    for (ci, clip) in set.clips.iter().enumerate() {
        for f in &clip.faces {
            emb.push(f.embedding.as_slice());
            frames.push(f.frame_index);
            clips.push(ci);
        }
    }
    group(&emb, &frames, &clips, params, ClusterScope::Set)
}

/// `⌊r·T⌋` for `r ∈ [0, 1)`.
pub fn align_segment(r: f64, segments: usize) -> Result<usize> {
    if !(0.0..1.0).contains(&r) || segments == 0 {
        return Err(FitbError::Range(format!("relative position {r} with {segments} segments")));
    }
    Ok(((r * segments as f64).floor() as usize).min(segments - 1))
}

/// Fills relative position, aligned segment and visual context from the
/// cluster's median frame.
pub fn attach_visual_context(mut cs: ClusterSet, num_frames: u32, segment_features: &[Vec<f32>]) -> Result<ClusterSet> {
    let t = segment_features.len();
    if t == 0 {
        return Err(FitbError::Data("no segment features".into()));
    }
    let width = segment_features[0].len();
    if segment_features.iter().any(|r| r.len() != width) {
        return Err(FitbError::Data("segment feature rows differ in width".into()));
    }
    for c in &mut cs.clusters {
        let r = c.center_frame() as f64 / num_frames as f64;
        let seg = align_segment(r, t)?;
        c.relative_position = r;
        c.aligned_segment = seg;
        c.visual_context = segment_features[seg].clone();
    }
    Ok(cs)
}

/// Clusters for one clip with visual context attached.
pub fn clip_clusters(clip: &Clip, params: &ClusterParams) -> Result<ClusterSet> {
    attach_visual_context(build_clusters(clip, params), clip.num_frames, &clip.segment_features)
}
