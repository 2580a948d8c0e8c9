//! Dense arrays, reverse-mode gradients, AdamW and the learning-rate schedule.

mod array;
mod attention;
mod optim;
mod param;
mod schedule;
mod tape;

pub use array::{gelu, layer_norm, matmul, softmax, NdArray, Scalar};
pub use attention::{attention_forward, Segments};
pub use optim::{AdamW, AdamWConfig};
pub use param::{trunc_normal, Gradients, ParamId, ParamStore, Parameter};
pub use schedule::{cosine_lr, LrSchedule};
pub use tape::{Tape, Var};

/// Central finite-difference check of `f` with respect to every scalar of
/// every parameter in `store`. Returns the worst relative error
/// `|analytic − numeric| / max(|analytic|, |numeric|, 1e-3)`; the floor keeps
/// near-zero gradients from turning round-off into huge ratios.
pub fn gradient_check<F>(store: &ParamStore<f64>, h: f64, f: F) -> crate::Result<f64>
where
    F: Fn(&mut Tape<'_, f64>) -> crate::Result<Var>,
{
    let analytic = {
        let mut tape = Tape::new(store);
        let loss = f(&mut tape)?;
        tape.backward(loss)?
    };
    let eval = |s: &ParamStore<f64>| -> crate::Result<f64> {
        let mut tape = Tape::new(s);
        let loss = f(&mut tape)?;
        Ok(tape.value(loss).item())
    };
    let mut probe = store.clone();
    let mut worst = 0.0f64;
    let ids: Vec<ParamId> = store.iter().map(|(id, _)| id).collect();
    for id in ids {
        for k in 0..store.value(id).len() {
            let orig = store.value(id).data()[k];
            probe.get_mut(id).value.data_mut()[k] = orig + h;
            let up = eval(&probe)?;
            probe.get_mut(id).value.data_mut()[k] = orig - h;
            let down = eval(&probe)?;
            probe.get_mut(id).value.data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.get(id).data()[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
