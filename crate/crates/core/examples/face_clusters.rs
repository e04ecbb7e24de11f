//! Clusters the face tracks of a few clips with DBSCAN and shows where each
//! cluster sits in the clip and which video segment it is aligned to.

use fitb::cluster::{clip_clusters, ClusterParams};
use fitb::synthgen::{generate_dataset, WorldConfig};

fn main() -> fitb::Result<()> {
    let ds = generate_dataset(&WorldConfig { n_movies: 1, clips_per_movie: 10, seed: 9, ..Default::default() })?;
    let params = ClusterParams::default();
    println!("eps {} min_pts {}", params.eps, params.min_pts);
    for clip in ds.sets[0].clips.iter().take(3) {
        let clusters = clip_clusters(clip, &params)?;
        println!("{}: {} faces -> {} clusters | {}", clip.clip_id, clip.faces.len(), clusters.len(), clip.sentence.join(" "));
        for (k, c) in clusters.clusters.iter().enumerate() {
            println!(
                "  #{k} size {:>2}  center frame {:>3}  position {:.2}  segment {}",
                c.size(),
                c.center_frame(),
                c.relative_position,
                c.aligned_segment
            );
        }
    }
    Ok(())
}
