//! Non-learned ID predictors: constant, all-distinct, gender-as-ID and two
//! face-cluster heuristics.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cluster::{build_set_clusters, ClusterParams};
use crate::corpus::{relabel_local_ids, ClipSet};
use crate::error::{FitbError, Result};
use crate::seed::{rng_for_item, Purpose};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    SameId,
    AllDifferent,
    GtGenderAsId,
    RandomFaceCluster,
    MostFrequentFaceCluster,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 5] =
        [Self::SameId, Self::AllDifferent, Self::GtGenderAsId, Self::RandomFaceCluster, Self::MostFrequentFaceCluster];

    pub fn name(self) -> &'static str {
        match self {
            Self::SameId => "same_id",
            Self::AllDifferent => "all_different",
            Self::GtGenderAsId => "gt_gender_as_id",
            Self::RandomFaceCluster => "random_face_cluster",
            Self::MostFrequentFaceCluster => "most_frequent_face_cluster",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            FitbError::Config(format!("unknown baseline `{s}` (expected one of same_id, all_different, gt_gender_as_id, random_face_cluster, most_frequent_face_cluster)"))
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaselinePolicy {
    pub kind: BaselineKind,
    /// Present exactly when `kind` is random_face_cluster.
    pub seed: Option<u64>,
}

impl BaselinePolicy {
    pub fn new(kind: BaselineKind, seed: Option<u64>) -> Result<Self> {
        match (kind, seed) {
            (BaselineKind::RandomFaceCluster, None) => Err(FitbError::Config("random_face_cluster needs a seed".into())),
            (BaselineKind::RandomFaceCluster, s) => Ok(Self { kind, seed: s }),
            (_, Some(_)) => Err(FitbError::Config(format!("{} takes no seed", kind.name()))),
            (_, None) => Ok(Self { kind, seed: None }),
        }
    }
}

pub fn run_trivial(policy: &BaselinePolicy, set: &ClipSet) -> Result<Vec<u32>> {
    let b = set.num_blanks();
    match policy.kind {
        BaselineKind::SameId => Ok(vec![1; b]),
        BaselineKind::AllDifferent => Ok((1..=b as u32).collect()),
        BaselineKind::GtGenderAsId => {
            let g = set.gt_genders().ok_or_else(|| FitbError::Data(format!("set {}: gt_gender_as_id needs gender labels", set.movie_id)))?;
            Ok(relabel_local_ids(&g))
        }
        k => Err(FitbError::Config(format!("{} is not a trivial baseline", k.name()))),
    }
}

#[derive(PartialEq, Eq, Hash)]
enum Pick {
    Cluster(usize),
    Fresh(usize),
}

/// Clusters every face in the set, then gives each blank a cluster present
/// in its own clip. `set_index` keeps random choices independent across sets.
pub fn run_cluster_heuristic(policy: &BaselinePolicy, set: &ClipSet, set_index: usize, params: &ClusterParams) -> Result<Vec<u32>> {
    let cs = build_set_clusters(set, params);
    let mut rng = rng_for_item(policy.seed.unwrap_or(0), Purpose::Baseline, set_index as u64);
    let mut picks = Vec::with_capacity(set.num_blanks());
    for (bi, blank) in set.blanks.iter().enumerate() {
        // (cluster index, members in this clip)
        let present: Vec<(usize, usize)> = cs
            .clusters
            .iter()
            .enumerate()
            .map(|(k, c)| (k, c.member_clips.iter().filter(|&&m| m == blank.sentence_index).count()))
            .filter(|&(_, n)| n > 0)
            .collect();
        let pick = if present.is_empty() {
            Pick::Fresh(bi)
        } else {
            match policy.kind {
                BaselineKind::RandomFaceCluster => Pick::Cluster(present[rng.random_range(0..present.len())].0),
                BaselineKind::MostFrequentFaceCluster => {
                    // max_by_key returns the last maximum; iterate in reverse so the lowest index wins ties
                    Pick::Cluster(present.iter().rev().max_by_key(|&&(_, n)| n).expect("nonempty").0)
                }
                k => return Err(FitbError::Config(format!("{} is not a cluster heuristic", k.name()))),
            }
        };
        picks.push(pick);
    }
    Ok(relabel_local_ids(&picks))
}

/// Dispatches on the policy kind.
pub fn run_baseline(policy: &BaselinePolicy, set: &ClipSet, set_index: usize, params: &ClusterParams) -> Result<Vec<u32>> {
    match policy.kind {
        BaselineKind::RandomFaceCluster | BaselineKind::MostFrequentFaceCluster => run_cluster_heuristic(policy, set, set_index, params),
        _ => run_trivial(policy, set),
    }
}
