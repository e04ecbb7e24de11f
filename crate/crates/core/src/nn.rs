//! Shared building blocks: linear layers, pre-LN transformer blocks and
//! sinusoidal positions.

use fitb_tensor::{Graph, ParameterStore, Real, Tensor, Var, MASKED};
use rand::Rng;

use crate::error::Result;

pub(crate) const LN_EPS: f64 = 1e-5;

pub(crate) fn init_linear<T: Real, R: Rng>(store: &mut ParameterStore<T>, prefix: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Result<()> {
    store.insert_glorot(&format!("{prefix}.w"), fan_in, fan_out, rng)?;
    store.insert_filled(&format!("{prefix}.b"), 1, fan_out, 0.0)?;
    Ok(())
}

pub(crate) fn linear<T: Real>(g: &mut Graph<T>, store: &ParameterStore<T>, x: Var, prefix: &str) -> Result<Var> {
    let w = g.param(store, &format!("{prefix}.w"))?;
    let b = g.param(store, &format!("{prefix}.b"))?;
    let y = g.matmul(x, w)?;
    Ok(g.add(y, b)?)
}

pub(crate) fn init_layer_norm<T: Real>(store: &mut ParameterStore<T>, prefix: &str, dim: usize) -> Result<()> {
    store.insert_filled(&format!("{prefix}.g"), 1, dim, 1.0)?;
    store.insert_filled(&format!("{prefix}.b"), 1, dim, 0.0)?;
    Ok(())
}

pub(crate) fn layer_norm<T: Real>(g: &mut Graph<T>, store: &ParameterStore<T>, x: Var, prefix: &str) -> Result<Var> {
    let gamma = g.param(store, &format!("{prefix}.g"))?;
    let beta = g.param(store, &format!("{prefix}.b"))?;
    Ok(g.layer_norm(x, gamma, beta, LN_EPS)?)
}

pub(crate) fn init_block<T: Real, R: Rng>(store: &mut ParameterStore<T>, prefix: &str, d: usize, ff: usize, rng: &mut R) -> Result<()> {
    init_layer_norm(store, &format!("{prefix}.ln1"), d)?;
    for m in ["wq", "wk", "wv", "wo"] {
        store.insert_glorot(&format!("{prefix}.{m}"), d, d, rng)?;
    }
    init_layer_norm(store, &format!("{prefix}.ln2"), d)?;
    init_linear(store, &format!("{prefix}.ff1"), d, ff, rng)?;
    init_linear(store, &format!("{prefix}.ff2"), ff, d, rng)?;
    Ok(())
}

/// `x + MHA(LN(x))`, then `x + FF(LN(x))`.
pub(crate) fn block<T: Real>(g: &mut Graph<T>, store: &ParameterStore<T>, x: Var, prefix: &str, heads: usize, mask: Option<&Tensor<T>>) -> Result<Var> {
    let h = layer_norm(g, store, x, &format!("{prefix}.ln1"))?;
    let [q, k, v] = ["wq", "wk", "wv"].map(|m| g.param(store, &format!("{prefix}.{m}")));
    let (q, k, v) = (g.matmul(h, q?)?, g.matmul(h, k?)?, g.matmul(h, v?)?);
    let a = g.attention(q, k, v, heads, mask)?;
    let wo = g.param(store, &format!("{prefix}.wo"))?;
    let a = g.matmul(a, wo)?;
    let x = g.add(x, a)?;
    let h = layer_norm(g, store, x, &format!("{prefix}.ln2"))?;
    let h = linear(g, store, h, &format!("{prefix}.ff1"))?;
    let h = g.relu(h)?;
    let h = linear(g, store, h, &format!("{prefix}.ff2"))?;
    Ok(g.add(x, h)?)
}

pub(crate) fn sinusoid<T: Real>(n: usize, d: usize) -> Tensor<T> {
    let mut data = Vec::with_capacity(n * d);
    for pos in 0..n {
        for i in 0..d {
            let freq = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let a = pos as f64 * freq;
            data.push(T::of(if i % 2 == 0 { a.sin() } else { a.cos() }));
        }
    }
    Tensor::matrix(n, d, data).expect("consistent shape")
}

/// Additive mask letting row `i` see columns `0..=i` only.
pub(crate) fn causal_mask<T: Real>(n: usize) -> Tensor<T> {
    let data = (0..n * n).map(|k| if k % n > k / n { T::of(MASKED) } else { T::zero() }).collect();
    Tensor::matrix(n, n, data).expect("consistent shape")
}
