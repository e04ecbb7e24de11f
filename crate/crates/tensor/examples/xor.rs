//! Fits XOR with a two-layer tanh network, then checks every op's gradient
//! and the network's own gradient against finite differences.

use fitb_tensor::{grad_check, op_suite, Adam, GradCheckOptions, Graph, ParameterStore, Real, Result, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const INPUTS: [f64; 8] = [0., 0., 0., 1., 1., 0., 1., 1.];
const TARGETS: [usize; 4] = [0, 1, 1, 0];

fn logits<T: Real>(g: &mut Graph<T>, store: &ParameterStore<T>) -> Result<Var> {
    let x = g.constant(Tensor::matrix(4, 2, INPUTS.iter().map(|&v| T::of(v)).collect())?);
    let (w1, b1, w2, b2) = (g.param(store, "w1")?, g.param(store, "b1")?, g.param(store, "w2")?, g.param(store, "b2")?);
    let h = g.matmul(x, w1)?;
    let h = g.add(h, b1)?;
    let h = g.tanh(h)?;
    let o = g.matmul(h, w2)?;
    g.add(o, b2)
}

fn loss<T: Real>(g: &mut Graph<T>, store: &ParameterStore<T>) -> Result<Var> {
    let l = logits(g, store)?;
    g.cross_entropy(l, &TARGETS, None)
}

fn init<T: Real>() -> Result<ParameterStore<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut store = ParameterStore::new(0);
    store.insert_glorot("w1", 2, 8, &mut rng)?;
    store.insert_filled("b1", 1, 8, 0.0)?;
    store.insert_glorot("w2", 8, 2, &mut rng)?;
    store.insert_filled("b2", 1, 2, 0.0)?;
    Ok(store)
}

fn main() -> Result<()> {
    let mut store = init::<f32>()?;
    let mut opt = Adam::new(0.05);
    for step in 0..=300 {
        let mut g = Graph::new();
        let l = loss(&mut g, &store)?;
        if step % 100 == 0 {
            println!("step {step:>3} loss {:.4}", g.value(l).item());
        }
        g.backward(l, &mut store)?;
        opt.step(&mut store)?;
    }
    let mut g = Graph::new();
    let l = logits(&mut g, &store)?;
    let out = g.value(l);
    for (i, t) in TARGETS.iter().enumerate() {
        let row = out.row_slice(i);
        println!("{:?} -> {} (target {t})", &INPUTS[2 * i..2 * i + 2], (row[1] > row[0]) as usize);
    }

    for (op, err) in op_suite(3, 4, 1)? {
        println!("{op:<14} max rel error {err:.2e}");
    }
    let mut store = init::<f64>()?;
    let report = grad_check(loss, &mut store, &GradCheckOptions::default())?;
    println!("network: {} coordinates, max rel error {:.2e}", report.coords_checked, report.max_rel_error);
    Ok(())
}
