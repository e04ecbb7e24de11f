use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum::<f64>().sqrt()
}

/// Density connectivity by transitive closure of the core-core
/// neighbourhood relation, then border points attached to their nearest
/// core neighbour. Returns a canonical partition: sorted member lists.
pub fn dbscan_oracle(points: &[Vec<f32>], eps: f64, min_pts: usize) -> (Vec<Vec<usize>>, Vec<usize>) {
    let n = points.len();
    let near = |i: usize, j: usize| dist(&points[i], &points[j]) <= eps;
    let core: Vec<bool> = (0..n).map(|i| (0..n).filter(|&j| near(i, j)).count() >= min_pts).collect();
    let mut reach = vec![vec![false; n]; n];
    for i in 0..n {
        for j in 0..n {
            reach[i][j] = core[i] && core[j] && near(i, j);
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if reach[i][k] && reach[k][j] {
                    reach[i][j] = true;
                }
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut owner = vec![usize::MAX; n];
    for i in (0..n).filter(|&i| core[i]) {
        if owner[i] == usize::MAX {
            let members: Vec<usize> = (0..n).filter(|&j| reach[i][j]).collect();
            for &m in &members {
                owner[m] = groups.len();
            }
            groups.push(members);
        }
    }
    let mut noise = Vec::new();
    for i in (0..n).filter(|&i| !core[i]) {
        let best = (0..n).filter(|&j| core[j] && near(i, j)).min_by(|&a, &b| dist(&points[i], &points[a]).total_cmp(&dist(&points[i], &points[b])));
        match best {
            Some(j) => groups[owner[j]].push(i),
            None => noise.push(i),
        }
    }
    let mut groups: Vec<Vec<usize>> = groups.into_iter().map(|mut g| {
        g.sort_unstable();
        g
    }).collect();
    groups.sort();
    (groups, noise)
}

pub fn partition(labels: &[Option<usize>]) -> (Vec<Vec<usize>>, Vec<usize>) {
    let k = labels.iter().flatten().max().map_or(0, |m| m + 1);
    let mut groups = vec![Vec::new(); k];
    let mut noise = Vec::new();
    for (i, l) in labels.iter().enumerate() {
        match l {
            Some(c) => groups[*c].push(i),
            None => noise.push(i),
        }
    }
    groups.sort();
    (groups, noise)
}

pub fn dbscan_instance(rng: &mut ChaCha8Rng) -> (Vec<Vec<f32>>, f64, usize) {
    let n = rng.random_range(1..=64);
    let dim = rng.random_range(1..=4);
    let blobs: Vec<Vec<f32>> = (0..rng.random_range(1..6)).map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    let spread = rng.random_range(0.05..0.6);
    let points = (0..n)
        .map(|_| {
            if rng.random_bool(0.15) {
                (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect()
            } else {
                let b = &blobs[rng.random_range(0..blobs.len())];
                b.iter().map(|&x| x + rng.random_range(-spread..spread)).collect()
            }
        })
        .collect();
    (points, rng.random_range(0.05..0.8), rng.random_range(1..6))
}
