//! Scaled dot-product multi-head attention over a batch of independent
//! sequences stacked along the row axis.

use super::array::{gemm_nn, gemm_nt, gemm_tn, Scalar};
use crate::error::{ensure, Result};

/// Row layout of the stacked sequences.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segments(Vec<usize>);

impl Segments {
    pub fn new(lengths: Vec<usize>) -> Result<Self> {
        ensure!(
            lengths.iter().all(|&l| l > 0),
            Contract,
            "attention segments must be non-empty"
        );
        Ok(Self(lengths))
    }

    pub fn uniform(count: usize, len: usize) -> Result<Self> {
        Self::new(vec![len; count])
    }

    pub fn lengths(&self) -> &[usize] {
        &self.0
    }

    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }

    fn offsets(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.0.iter().scan(0, |off, &l| {
            let s = *off;
            *off += l;
            Some((s, l))
        })
    }
}

fn head_block<T: Scalar>(x: &[T], d: usize, start: usize, len: usize, h: usize, dh: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(len * dh);
    for r in start..start + len {
        out.extend_from_slice(&x[r * d + h * dh..r * d + (h + 1) * dh]);
    }
    out
}

fn add_head_block<T: Scalar>(x: &mut [T], d: usize, start: usize, len: usize, h: usize, dh: usize, src: &[T]) {
    for (i, r) in (start..start + len).enumerate() {
        for j in 0..dh {
            let p = r * d + h * dh + j;
            x[p] = x[p] + src[i * dh + j];
        }
    }
}

/// Forward pass. Returns the `rows × d` output and the attention
/// probabilities, stored per (segment, head) as `len × len` blocks.
pub fn attention_forward<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    d: usize,
    heads: usize,
    seg: &Segments,
) -> Result<(Vec<T>, Vec<T>)> {
    ensure!(
        heads > 0 && d.is_multiple_of(heads),
        Contract,
        "width {d} not divisible by {heads} heads"
    );
    let rows = seg.total();
    ensure!(
        q.len() == rows * d && k.len() == rows * d && v.len() == rows * d,
        Dimension,
        "attention inputs do not match {rows} rows × {d}"
    );
    let dh = d / heads;
    let scale = T::one() / T::lit(dh as f64).sqrt();
    let mut out = vec![T::zero(); rows * d];
    let mut probs = Vec::with_capacity(seg.lengths().iter().map(|l| l * l).sum::<usize>() * heads);
    for (start, len) in seg.offsets() {
        for h in 0..heads {
            let qh = head_block(q, d, start, len, h, dh);
            let kh = head_block(k, d, start, len, h, dh);
            let vh = head_block(v, d, start, len, h, dh);
            let mut s = vec![T::zero(); len * len];
            gemm_nt(&qh, &kh, &mut s, len, dh, len);
            for row in s.chunks_mut(len) {
                let mx = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b * scale));
                let mut z = T::zero();
                for x in row.iter_mut() {
                    *x = (*x * scale - mx).exp();
                    z = z + *x;
                }
                row.iter_mut().for_each(|x| *x = *x / z);
            }
            let mut oh = vec![T::zero(); len * dh];
            gemm_nn(&s, &vh, &mut oh, len, len, dh);
            add_head_block(&mut out, d, start, len, h, dh, &oh);
            probs.extend_from_slice(&s);
        }
    }
    Ok((out, probs))
}

/// Accumulates gradients of `q`, `k`, `v` given the upstream gradient `g`.
#[allow(clippy::too_many_arguments)]
pub fn attention_backward<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    probs: &[T],
    g: &[T],
    d: usize,
    heads: usize,
    seg: &Segments,
    dq: &mut [T],
    dk: &mut [T],
    dv: &mut [T],
) {
    let dh = d / heads;
    let scale = T::one() / T::lit(dh as f64).sqrt();
    let mut p_off = 0;
    for (start, len) in seg.offsets() {
        for h in 0..heads {
            let a = &probs[p_off..p_off + len * len];
            p_off += len * len;
            let qh = head_block(q, d, start, len, h, dh);
            let kh = head_block(k, d, start, len, h, dh);
            let vh = head_block(v, d, start, len, h, dh);
            let gh = head_block(g, d, start, len, h, dh);
            // dV = Aᵀ·dO
            let mut dvh = vec![T::zero(); len * dh];
            gemm_tn(a, &gh, &mut dvh, len, len, dh);
            // dA = dO·Vᵀ
            let mut da = vec![T::zero(); len * len];
            gemm_nt(&gh, &vh, &mut da, len, dh, len);
            // dS = A ∘ (dA − rowsum(dA ∘ A)), folded with the score scale
            for i in 0..len {
                let row = i * len..(i + 1) * len;
                let dot = da[row.clone()]
                    .iter()
                    .zip(&a[row.clone()])
                    .fold(T::zero(), |acc, (&x, &y)| acc + x * y);
                for j in row {
                    da[j] = a[j] * (da[j] - dot) * scale;
                }
            }
            let mut dqh = vec![T::zero(); len * dh];
            gemm_nn(&da, &kh, &mut dqh, len, len, dh);
            let mut dkh = vec![T::zero(); len * dh];
            gemm_tn(&da, &qh, &mut dkh, len, len, dh);
            add_head_block(dq, d, start, len, h, dh, &dqh);
            add_head_block(dk, d, start, len, h, dh, &dkh);
            add_head_block(dv, d, start, len, h, dh, &dvh);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_key_attends_fully() {
        let seg = Segments::uniform(1, 1).unwrap();
        let (out, p) = attention_forward(&[1.0f64, 2.0], &[3.0, 4.0], &[5.0, 6.0], 2, 1, &seg).unwrap();
        assert_eq!(out, vec![5.0, 6.0]);
        assert_eq!(p, vec![1.0]);
    }

    #[test]
    fn rows_are_distributions_and_segments_isolated() {
        let seg = Segments::new(vec![2, 3]).unwrap();
        let x: Vec<f64> = (0..20).map(|i| ((i * 7) % 5) as f64 * 0.3 - 0.5).collect();
        let (_, p) = attention_forward(&x, &x, &x, 4, 2, &seg).unwrap();
        assert_eq!(p.len(), 2 * 4 + 2 * 9);
        let mut off = 0;
        for len in [2usize, 3] {
            for _ in 0..2 {
                for r in 0..len {
                    let s: f64 = p[off + r * len..off + (r + 1) * len].iter().sum();
                    assert!((s - 1.0).abs() < 1e-12);
                }
                off += len * len;
            }
        }
        // perturbing the second sequence leaves the first unchanged
        let mut y = x.clone();
        y[12] += 1.0;
        let (o1, _) = attention_forward(&x, &x, &x, 4, 2, &seg).unwrap();
        let (o2, _) = attention_forward(&y, &y, &y, 4, 2, &seg).unwrap();
        assert_eq!(o1[..8], o2[..8]);
    }

    #[test]
    fn bad_heads() {
        let seg = Segments::uniform(1, 1).unwrap();
        assert!(attention_forward(&[0.0f64; 3], &[0.0; 3], &[0.0; 3], 3, 2, &seg).is_err());
        assert!(Segments::new(vec![0]).is_err());
    }
}
