use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::numerics::{NdArray, Scalar, Tape, Var};
use crate::tubes::MaskSpec;

const NORM_EPS: f64 = 1e-6;

/// How target tubes are scaled before the squared error.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetNorm {
    None,
    /// Each tube standardized by its own mean and variance.
    #[default]
    PerTube,
    /// The whole sample standardized by one mean and variance.
    Global,
}

impl fmt::Display for TargetNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TargetNorm::None => "none",
            TargetNorm::PerTube => "per-tube",
            TargetNorm::Global => "global",
        })
    }
}

impl FromStr for TargetNorm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" | "false" | "off" => Ok(TargetNorm::None),
            "per-tube" | "true" | "on" => Ok(TargetNorm::PerTube),
            "global" => Ok(TargetNorm::Global),
            _ => Err(Error::Contract(format!(
                "unknown target normalization '{s}' (expected none, per-tube or global)"
            ))),
        }
    }
}

fn standardize(v: &mut [f64]) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let inv = 1.0 / (var + NORM_EPS).sqrt();
    v.iter_mut().for_each(|x| *x = (*x - mean) * inv);
}

/// Targets after normalization, same `N × P` layout.
pub fn normalize_targets(tubes: &NdArray<f32>, norm: TargetNorm) -> NdArray<f64> {
    let mut v: Vec<f64> = tubes.data().iter().map(|&x| x as f64).collect();
    match norm {
        TargetNorm::None => {}
        TargetNorm::Global => standardize(&mut v),
        TargetNorm::PerTube => {
            let p = tubes.cols().max(1);
            v.chunks_mut(p).for_each(standardize);
        }
    }
    NdArray::from_vec(tubes.shape(), v).expect("shape preserved")
}

/// Mean over masked tubes of the per-tube mean squared error.
pub fn reconstruction_loss<T: Scalar>(
    targets: &NdArray<f32>,
    predictions: &NdArray<T>,
    mask: &MaskSpec,
    norm: TargetNorm,
) -> Result<f64> {
    ensure!(!mask.masked.is_empty(), Contract, "reconstruction loss with an empty mask");
    ensure!(
        targets.shape() == predictions.shape() && targets.rank() == 2 && targets.rows() == mask.total,
        Contract,
        "targets {:?}, predictions {:?} and mask over {} tubes disagree",
        targets.shape(),
        predictions.shape(),
        mask.total
    );
    let tgt = normalize_targets(targets, norm);
    let mut total = 0.0;
    for &i in &mask.masked {
        let se: f64 = tgt
            .row(i)
            .iter()
            .zip(predictions.row(i))
            .map(|(&a, &b)| (a - b.to_f64_lossy()).powi(2))
            .sum();
        total += se / targets.cols() as f64;
    }
    Ok(total / mask.masked.len() as f64)
}

/// Tape version over stacked predictions (`(B·N) × P`); the batch loss is
/// the mean of the per-sample losses.
pub fn reconstruction_loss_tape<T: Scalar>(
    t: &mut Tape<'_, T>,
    predictions: Var,
    targets: &[&NdArray<f32>],
    masks: &[MaskSpec],
    norm: TargetNorm,
) -> Result<Var> {
    ensure!(
        targets.len() == masks.len() && !masks.is_empty(),
        Contract,
        "{} targets for {} masks",
        targets.len(),
        masks.len()
    );
    let mut per_sample = Vec::with_capacity(masks.len());
    let mut off = 0;
    for (x, m) in targets.iter().zip(masks) {
        ensure!(!m.masked.is_empty(), Contract, "reconstruction loss with an empty mask");
        let tgt = normalize_targets(x, norm);
        let p = x.cols();
        let mut rows = Vec::with_capacity(m.masked.len() * p);
        for &i in &m.masked {
            rows.extend(tgt.row(i).iter().map(|&v| T::lit(v)));
        }
        let idx: Vec<usize> = m.masked.iter().map(|&i| off + i).collect();
        off += m.total;
        let pred = t.gather_rows(predictions, &idx)?;
        let tv = t.constant(NdArray::from_vec(&[m.masked.len(), p], rows)?);
        let d = t.sub(pred, tv)?;
        let sq = t.mul(d, d)?;
        per_sample.push(t.mean(sq)?);
    }
    ensure!(
        off == t.shape(predictions)[0],
        Contract,
        "predictions have {} rows, masks cover {off}",
        t.shape(predictions)[0]
    );
    let mut acc = per_sample[0];
    for &l in &per_sample[1..] {
        acc = t.add(acc, l)?;
    }
    Ok(t.scale(acc, T::lit(1.0 / masks.len() as f64)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::ParamStore;

    fn mask(total: usize, masked: &[usize]) -> MaskSpec {
        let mut m = MaskSpec::none(total);
        m.masked = masked.to_vec();
        m.visible = (0..total).filter(|i| !masked.contains(i)).collect();
        m
    }

    #[test]
    fn exact_prediction_is_zero_loss() {
        let x = NdArray::from_vec(&[3, 2], vec![1.0f32, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let l = reconstruction_loss(&x, &x, &mask(3, &[0, 2]), TargetNorm::None).unwrap();
        assert_eq!(l, 0.0);
        assert!(reconstruction_loss(&x, &x, &mask(3, &[]), TargetNorm::None).is_err());
    }

    #[test]
    fn standardized_hand_value() {
        // [1,2,3,4]: mean 2.5, var 1.25; zero prediction → mean of z² = var/(var+eps)
        let x = NdArray::from_vec(&[1, 4], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let zero = NdArray::<f32>::zeros(&[1, 4]);
        let l = reconstruction_loss(&x, &zero, &mask(1, &[0]), TargetNorm::PerTube).unwrap();
        assert!((l - 1.25 / (1.25 + 1e-6)).abs() < 1e-12, "{l}");
    }

    #[test]
    fn tape_matches_plain() {
        let x = NdArray::from_vec(&[3, 2], vec![1.0f32, 2.0, 3.0, 5.0, 5.0, 9.0]).unwrap();
        let pred = NdArray::from_vec(&[3, 2], vec![0.5f64, 0.1, -0.2, 0.3, 0.9, 1.1]).unwrap();
        let m = mask(3, &[1, 2]);
        for norm in [TargetNorm::None, TargetNorm::PerTube, TargetNorm::Global] {
            let store = ParamStore::<f64>::new();
            let mut t = Tape::new(&store);
            let p = t.constant(pred.clone());
            let l = reconstruction_loss_tape(&mut t, p, &[&x], std::slice::from_ref(&m), norm).unwrap();
            let plain = reconstruction_loss(&x, &pred, &m, norm).unwrap();
            assert!((t.value(l).item() - plain).abs() < 1e-12);
        }
    }

    #[test]
    fn names_parse() {
        for n in [TargetNorm::None, TargetNorm::PerTube, TargetNorm::Global] {
            assert_eq!(n.to_string().parse::<TargetNorm>().unwrap(), n);
        }
    }
}
