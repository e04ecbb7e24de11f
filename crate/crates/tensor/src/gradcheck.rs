use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var, MASKED};
use crate::store::ParameterStore;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Finite-difference step.
    pub h: f64,
    /// Stores with more coordinates than this are probed on a seeded subset
    /// of this size (never fewer than 200).
    pub max_coords: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            h: 1e-4,
            max_coords: 2000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(parameter, flat index, analytic, numeric)` at the worst coordinate.
    pub worst: Option<(String, usize, f64, f64)>,
    pub coords_checked: usize,
}

/// Compares analytic gradients of `f` with central differences
/// `(f(x+h) - f(x-h)) / 2h`, using `|a - n| / (|a| + |n| + 1e-8)`.
pub fn grad_check<F>(f: F, store: &mut ParameterStore<f64>, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &ParameterStore<f64>) -> Result<Var>,
{
    let eval = |store: &ParameterStore<f64>| -> Result<f64> {
        let mut g = Graph::new().with_checks(true);
        let out = f(&mut g, store)?;
        let v = g.value(out).item();
        if !v.is_finite() {
            return Err(TensorError::Numeric { op: "grad_check", detail: "objective".into() });
        }
        Ok(v)
    };

    for (_, p) in store.iter_mut() {
        p.grad = None;
    }
    {
        let mut g = Graph::new().with_checks(true);
        let out = f(&mut g, store)?;
        g.backward(out, store)?;
    }

    let coords: Vec<(String, usize)> = store
        .iter()
        .filter(|(_, p)| p.trainable)
        .flat_map(|(n, p)| (0..p.value.len()).map(move |i| (n.to_string(), i)))
        .collect();
    let limit = opts.max_coords.max(200);
    let chosen: Vec<usize> = if coords.len() <= limit {
        (0..coords.len()).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut idx = sample(&mut rng, coords.len(), limit).into_vec();
        idx.sort_unstable();
        idx
    };

    let mut report = GradCheckReport { max_rel_error: 0.0, worst: None, coords_checked: chosen.len() };
    for ci in chosen {
        let (name, i) = &coords[ci];
        let analytic = store.get(name)?.grad.as_ref().map_or(0.0, |g| g.data()[*i]);
        let original = store.get(name)?.value.data()[*i];
        store.get_mut(name)?.value.data_mut()[*i] = original + opts.h;
        let plus = eval(store)?;
        store.get_mut(name)?.value.data_mut()[*i] = original - opts.h;
        let minus = eval(store)?;
        store.get_mut(name)?.value.data_mut()[*i] = original;
        let numeric = (plus - minus) / (2.0 * opts.h);
        let err = (analytic - numeric).abs() / (analytic.abs() + numeric.abs() + 1e-8);
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(err);
            report.worst = Some((name.clone(), *i, analytic, numeric));
        }
    }
    Ok(report)
}

/// Names accepted by [`check_op`], one per differentiable graph operation
/// (row-broadcast add counted separately).
pub const OPS: &[&str] = &[
    "matmul", "transpose", "add", "add-row", "multiply", "scale", "tanh", "relu", "concat", "concat-rows", "slice-rows",
    "slice-cols", "embedding", "layer-norm", "softmax", "attention", "cross-entropy", "sum", "mean",
];

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f64> {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.5..1.5)).collect();
    Tensor::matrix(rows, cols, data).expect("sized data")
}

/// Weighted sum with a fixed random weight so every output coordinate matters.
fn probe(g: &mut Graph<f64>, out: Var, seed: u64) -> Result<Var> {
    let (r, c) = g.shape(out);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let w = g.constant(random_matrix(&mut rng, r, c));
    let p = g.mul(out, w)?;
    g.sum(p)
}

/// Gradient-checks one operation on random `rows × cols` inputs and returns
/// the worst relative error.
pub fn check_op(op: &str, rows: usize, cols: usize, seed: u64) -> Result<f64> {
    if !OPS.contains(&op) {
        return Err(TensorError::State(format!("unknown op {op}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParameterStore::<f64>::new(seed);
    s.insert("a", random_matrix(&mut rng, rows, cols))?;
    s.insert("b", random_matrix(&mut rng, rows, cols))?;
    s.insert("w", random_matrix(&mut rng, cols, 3))?;
    s.insert("row", random_matrix(&mut rng, 1, cols))?;
    s.insert("gamma", random_matrix(&mut rng, 1, cols))?;
    let heads = if cols % 2 == 0 { 2 } else { 1 };
    let mut mask = Tensor::zeros(rows, rows);
    for i in 0..rows {
        for j in i + 1..rows {
            mask.data_mut()[i * rows + j] = MASKED;
        }
    }
    let targets: Vec<usize> = (0..rows).map(|_| rng.random_range(0..cols)).collect();
    let active: Vec<bool> = (0..rows).map(|i| i == 0 || rng.random_bool(0.7)).collect();
    let indices: Vec<usize> = (0..4).map(|_| rng.random_range(0..rows)).collect();
    let f = |g: &mut Graph<f64>, s: &ParameterStore<f64>| -> Result<Var> {
        let a = g.param(s, "a")?;
        let b = g.param(s, "b")?;
        let out = match op {
            "matmul" => {
                let w = g.param(s, "w")?;
                g.matmul(a, w)?
            }
            "transpose" => g.transpose(a)?,
            "add" => g.add(a, b)?,
            "add-row" => {
                let r = g.param(s, "row")?;
                g.add(a, r)?
            }
            "multiply" => g.mul(a, b)?,
            "scale" => g.scale(a, -0.7)?,
            "tanh" => g.tanh(a)?,
            "relu" => g.relu(a)?,
            "concat" => g.concat_cols(&[a, b])?,
            "concat-rows" => g.concat_rows(&[a, b])?,
            "slice-rows" => g.slice_rows(a, 0, rows.div_ceil(2))?,
            "slice-cols" => g.slice_cols(a, cols / 2, cols)?,
            "embedding" => g.embedding(a, &indices)?,
            "layer-norm" => {
                let gm = g.param(s, "gamma")?;
                let bt = g.param(s, "row")?;
                g.layer_norm(a, gm, bt, 1e-5)?
            }
            "softmax" => g.softmax_rows(a)?,
            "attention" => g.attention(a, b, a, heads, Some(&mask))?,
            "cross-entropy" => return g.cross_entropy(a, &targets, Some(&active)),
            "sum" => {
                let t = g.tanh(a)?;
                return g.sum(t);
            }
            _ => {
                let t = g.tanh(a)?;
                return g.mean(t);
            }
        };
        probe(g, out, seed)
    };
    Ok(grad_check(f, &mut s, &GradCheckOptions::default())?.max_rel_error)
}

/// [`check_op`] for every entry of [`OPS`].
pub fn op_suite(rows: usize, cols: usize, seed: u64) -> Result<Vec<(&'static str, f64)>> {
    OPS.iter().enumerate().map(|(i, &op)| Ok((op, check_op(op, rows, cols, seed + i as u64)?))).collect()
}
