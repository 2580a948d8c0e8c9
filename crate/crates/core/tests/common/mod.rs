//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use dasmae_core::model::{MaeModel, ModelConfig};
use dasmae_core::numerics::{gradient_check, trunc_normal, NdArray, ParamStore, Segments, Tape, Var};
use dasmae_core::pipeline::{reconstruction_loss_tape, TargetNorm};
use dasmae_core::tubes::{sample_mask, MaskStrategy, TubeGrid};
use dasmae_core::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-4;

pub fn store(shapes: &[(&str, &[usize])], seed: u64) -> ParamStore<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new();
    for (name, shape) in shapes {
        s.add(*name, trunc_normal(&mut rng, shape, 0.5)).unwrap();
    }
    s
}

/// Weighted sum so every output element gets a distinct upstream gradient.
pub fn probe(t: &mut Tape<'_, f64>, x: Var) -> Result<Var> {
    let shape = t.shape(x).to_vec();
    let n: usize = shape.iter().product();
    let w = NdArray::from_vec(&shape, (0..n).map(|i| ((i * 37 % 11) as f64 - 5.0) / 7.0).collect())?;
    let w = t.constant(w);
    let y = t.mul(x, w)?;
    Ok(t.sum(y))
}

fn p(t: &mut Tape<'_, f64>, s: &ParamStore<f64>, name: &str) -> Var {
    t.param(s.find(name).unwrap())
}

/// Worst relative finite-difference error of each differentiable primitive.
pub fn primitive_errors() -> Result<Vec<(&'static str, f64)>> {
    let mut out = Vec::new();

    let s = store(&[("a", &[3, 4]), ("b", &[4, 2]), ("c", &[2, 4])], 1);
    out.push((
        "matmul/matmul_nt/transpose/add",
        gradient_check(&s, H, |t| {
            let (a, b, c) = (p(t, &s, "a"), p(t, &s, "b"), p(t, &s, "c"));
            let ab = t.matmul(a, b)?;
            let acn = t.matmul_nt(a, c)?;
            let sum = t.add(ab, acn)?;
            let tr = t.transpose(sum)?;
            probe(t, tr)
        })?,
    ));

    let s = store(&[("x", &[3, 4]), ("y", &[3, 4]), ("r", &[4])], 2);
    out.push((
        "sub/mul/add_row/gelu/scale",
        gradient_check(&s, H, |t| {
            let (x, y, r) = (p(t, &s, "x"), p(t, &s, "y"), p(t, &s, "r"));
            let a = t.sub(x, y)?;
            let b = t.mul(a, x)?;
            let c = t.add_row(b, r)?;
            let d = t.gelu(c);
            let e = t.scale(d, 1.7);
            probe(t, e)
        })?,
    ));

    let s = store(&[("x", &[3, 5])], 3);
    for (name, axis) in [("softmax rows", 1), ("softmax columns", 0)] {
        out.push((
            name,
            gradient_check(&s, H, |t| {
                let x = p(t, &s, "x");
                let y = t.softmax(x, axis)?;
                probe(t, y)
            })?,
        ));
    }

    let s = store(&[("x", &[4, 6]), ("g", &[6]), ("b", &[6])], 4);
    out.push((
        "layer_norm",
        gradient_check(&s, H, |t| {
            let (x, g, b) = (p(t, &s, "x"), p(t, &s, "g"), p(t, &s, "b"));
            let y = t.layer_norm(x, g, b, 1e-6)?;
            probe(t, y)
        })?,
    ));

    let s = store(&[("x", &[4, 6]), ("y", &[2, 6]), ("fill", &[5])], 5);
    out.push((
        "slice/concat/gather/scatter/mean_rows/reshape/mean",
        gradient_check(&s, H, |t| {
            let (x, y, fill) = (p(t, &s, "x"), p(t, &s, "y"), p(t, &s, "fill"));
            let a = t.slice_cols(x, 1, 3)?;
            let b = t.slice_cols(x, 4, 2)?;
            let c = t.concat_cols(&[b, a])?;
            let d = t.gather_rows(c, &[3, 0, 0])?;
            let e = t.scatter_rows(d, fill, &[4, 1, 2], 6)?;
            let f = t.concat_rows(&[x, y])?;
            let m = t.mean_rows(f)?;
            let r = t.reshape(e, &[5, 6])?;
            let l1 = probe(t, r)?;
            let l2 = probe(t, m)?;
            let l = t.add(l1, l2)?;
            t.mean(l)
        })?,
    ));

    let s = store(&[("z", &[4, 3])], 6);
    out.push((
        "cross_entropy",
        gradient_check(&s, H, |t| {
            let z = p(t, &s, "z");
            t.cross_entropy(z, &[0, 2, 1, 2])
        })?,
    ));

    let s = store(&[("q", &[5, 4]), ("k", &[5, 4]), ("v", &[5, 4])], 7);
    let seg = Segments::new(vec![2, 3])?;
    for (name, heads) in [("attention, 1 head", 1), ("attention, 2 heads", 2)] {
        out.push((
            name,
            gradient_check(&s, H, |t| {
                let (q, k, v) = (p(t, &s, "q"), p(t, &s, "k"), p(t, &s, "v"));
                let o = t.attention(q, k, v, heads, &seg)?;
                probe(t, o)
            })?,
        ));
    }

    let s = store(&[("x", &[3, 4])], 8);
    let seg = Segments::uniform(1, 3)?;
    out.push((
        "self-attention, shared input",
        gradient_check(&s, H, |t| {
            let x = p(t, &s, "x");
            let o = t.attention(x, x, x, 2, &seg)?;
            probe(t, o)
        })?,
    ));
    Ok(out)
}

/// Finite-difference check of the full masked-reconstruction objective of a
/// small model with three encoder blocks and one decoder block, with every
/// parameter redrawn at a scale where all non-linearities are exercised.
pub fn transformer_error(seed: u64) -> Result<f64> {
    let grid = TubeGrid::new([2, 4, 4], [1, 2, 2])?;
    let cfg = ModelConfig {
        tube: [1, 2, 2],
        depth_in: 1,
        enc_dim: 8,
        enc_depth: 3,
        enc_heads: 2,
        dec_dim: 4,
        dec_depth: 1,
        dec_heads: 2,
        mlp_ratio: 2,
        tokens: grid.len(),
    };
    let mut model = MaeModel::<f64>::new(cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for prm in model.store.iter_mut() {
        let shape = prm.value.shape().to_vec();
        prm.value = trunc_normal(&mut rng, &shape, 0.3);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5);
    let xs: Vec<NdArray<f32>> = (0..2).map(|_| trunc_normal(&mut rng, &[grid.len(), 4], 1.0)).collect();
    let masks = vec![
        sample_mask(&grid, 0.5, MaskStrategy::Random, seed)?,
        sample_mask(&grid, 0.75, MaskStrategy::Random, seed + 1)?,
    ];
    let refs: Vec<&NdArray<f32>> = xs.iter().collect();
    gradient_check(&model.store, H, |t| {
        let pred = model.forward_batch(t, &refs, &masks)?;
        reconstruction_loss_tape(t, pred, &refs, &masks, TargetNorm::PerTube)
    })
}
