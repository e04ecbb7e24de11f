//! Scores every baseline on one synthetic validation split.

use fitb::baselines::{run_baseline, BaselineKind, BaselinePolicy};
use fitb::cluster::ClusterParams;
use fitb::corpus::Split;
use fitb::metrics::{evaluate_ids, report_table, Aggregation};
use fitb::synthgen::{generate_dataset, WorldConfig};

fn main() -> fitb::Result<()> {
    let ds = generate_dataset(&WorldConfig { n_movies: 20, split: Split::Val, seed: 2, ..Default::default() })?;
    let gt: Vec<Vec<u32>> = ds.sets.iter().map(|s| s.gt_local_ids.clone().unwrap_or_default()).collect();
    let mut rows = Vec::new();
    for kind in BaselineKind::ALL {
        let seed = (kind == BaselineKind::RandomFaceCluster).then_some(0);
        let policy = BaselinePolicy::new(kind, seed)?;
        let pred = ds
            .sets
            .iter()
            .enumerate()
            .map(|(i, s)| run_baseline(&policy, s, i, &ClusterParams::default()))
            .collect::<fitb::Result<Vec<_>>>()?;
        rows.push((kind.name().to_string(), evaluate_ids(&gt, &pred, Aggregation::Macro)?));
    }
    let refs: Vec<(String, &_)> = rows.iter().map(|(n, r)| (n.clone(), r)).collect();
    print!("{}", report_table(&refs));
    Ok(())
}
