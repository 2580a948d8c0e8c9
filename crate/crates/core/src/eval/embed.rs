use nalgebra::{DMatrix, SymmetricEigen};
use rand_distr::{Distribution, Normal};

use crate::error::{ensure, Error, Result};
use crate::numerics::NdArray;
use crate::seed;

#[derive(Clone, Debug, PartialEq)]
pub struct Pca {
    /// `n × k` projected coordinates.
    pub coords: NdArray<f64>,
    /// Unit principal axes, one per output dimension.
    pub components: Vec<Vec<f64>>,
    /// Covariance eigenvalues of the kept axes, non-increasing.
    pub variances: Vec<f64>,
    pub mean: Vec<f64>,
}

impl Pca {
    pub fn points2(&self) -> Vec<[f64; 2]> {
        let k = self.coords.cols();
        (0..self.coords.rows())
            .map(|i| {
                let r = self.coords.row(i);
                [r[0], if k > 1 { r[1] } else { 0.0 }]
            })
            .collect()
    }
}

/// Projection of mean-centered rows onto the top `dims` covariance axes.
/// Each axis is signed so that its largest-magnitude entry is positive.
pub fn pca_embed(x: &NdArray<f64>, dims: usize) -> Result<Pca> {
    ensure!(x.rank() == 2, Dimension, "pca expects a matrix, got {:?}", x.shape());
    let (n, d) = (x.rows(), x.cols());
    ensure!(n >= 2, Contract, "pca needs at least 2 vectors, got {n}");
    ensure!(dims >= 1 && dims <= d, Contract, "cannot keep {dims} of {d} dimensions");
    let mut mean = vec![0.0; d];
    for i in 0..n {
        mean.iter_mut().zip(x.row(i)).for_each(|(m, &v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, d, |i, j| x.row(i)[j] - mean[j]);
    let cov = centered.transpose() * &centered / (n - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut components = Vec::with_capacity(dims);
    let mut variances = Vec::with_capacity(dims);
    for &j in order.iter().take(dims) {
        let mut v: Vec<f64> = eig.eigenvectors.column(j).iter().copied().collect();
        let lead = v.iter().copied().fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
        if lead < 0.0 {
            v.iter_mut().for_each(|e| *e = -*e);
        }
        components.push(v);
        variances.push(eig.eigenvalues[j].max(0.0));
    }
    let mut coords = Vec::with_capacity(n * dims);
    for i in 0..n {
        for c in &components {
            coords.push((0..d).map(|j| centered[(i, j)] * c[j]).sum());
        }
    }
    Ok(Pca {
        coords: NdArray::from_vec(&[n, dims], coords)?,
        components,
        variances,
        mean,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub learning_rate: f64,
    pub iterations: usize,
    pub seed: u64,
    pub exaggeration: f64,
    pub exaggeration_iters: usize,
    pub momentum: f64,
    pub final_momentum: f64,
    pub momentum_switch: usize,
    pub init_std: f64,
    /// KL is recorded every this many iterations (and after the last).
    pub record_every: usize,
}

impl TsneConfig {
    /// Perplexity 40, learning rate 2000, 500 iterations.
    pub fn full_scale(seed: u64) -> Self {
        Self {
            perplexity: 40.0,
            learning_rate: 2000.0,
            iterations: 500,
            seed,
            exaggeration: 4.0,
            exaggeration_iters: 100,
            momentum: 0.5,
            final_momentum: 0.8,
            momentum_switch: 250,
            init_std: 1e-4,
            record_every: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tsne {
    pub coords: Vec<[f64; 2]>,
    /// `(iteration, KL(P‖Q))`, starting with iteration 0.
    pub kl: Vec<(usize, f64)>,
    /// Achieved conditional entropies in bits.
    pub entropies: Vec<f64>,
}

const ENTROPY_TOL: f64 = 1e-5;

fn sq_dists(x: &NdArray<f64>) -> Vec<f64> {
    let n = x.rows();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let s: f64 = x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            d[i * n + j] = s;
            d[j * n + i] = s;
        }
    }
    d
}

/// Conditional row `p_{j|i}` for precision `beta`; returns the entropy in bits.
fn conditional_row(dist: &[f64], i: usize, beta: f64, row: &mut [f64]) -> f64 {
    let dmin = dist
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &v)| v)
        .fold(f64::INFINITY, f64::min);
    let mut z = 0.0;
    for (j, p) in row.iter_mut().enumerate() {
        *p = if j == i { 0.0 } else { (-(dist[j] - dmin) * beta).exp() };
        z += *p;
    }
    let mut h = 0.0;
    for (j, p) in row.iter_mut().enumerate() {
        *p /= z;
        if j != i && *p > 0.0 {
            h -= *p * p.ln();
        }
    }
    h / std::f64::consts::LN_2
}

/// Per-point precision found by bisection on the entropy target.
fn conditional_p(dist: &[f64], n: usize, perplexity: f64) -> (Vec<f64>, Vec<f64>) {
    let target = perplexity.log2();
    let mut p = vec![0.0; n * n];
    let mut entropies = vec![0.0; n];
    for i in 0..n {
        let d = &dist[i * n..(i + 1) * n];
        let row = &mut p[i * n..(i + 1) * n];
        let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
        let mut beta = 1.0;
        let mut h = conditional_row(d, i, beta, row);
        for _ in 0..200 {
            if (h - target).abs() <= ENTROPY_TOL {
                break;
            }
            if h > target {
                lo = beta;
                beta = if hi.is_finite() { 0.5 * (lo + hi) } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = 0.5 * (lo + hi);
            }
            h = conditional_row(d, i, beta, row);
        }
        entropies[i] = h;
    }
    (p, entropies)
}

fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&a, _)| a > 0.0)
        .map(|(&a, &b)| a * (a / b.max(1e-300)).ln())
        .sum()
}

/// Student-t affinities; fills `num` with `1/(1+‖y_i−y_j‖²)`.
fn student_q(y: &[[f64; 2]], num: &mut [f64], q: &mut [f64]) {
    let n = y.len();
    let mut z = 0.0;
    for i in 0..n {
        num[i * n + i] = 0.0;
        for j in i + 1..n {
            let dx = y[i][0] - y[j][0];
            let dy = y[i][1] - y[j][1];
            let v = 1.0 / (1.0 + dx * dx + dy * dy);
            num[i * n + j] = v;
            num[j * n + i] = v;
            z += 2.0 * v;
        }
    }
    for (qv, &nv) in q.iter_mut().zip(num.iter()) {
        *qv = (nv / z).max(1e-12);
    }
}

/// Exact t-SNE into two dimensions.
pub fn tsne_embed(x: &NdArray<f64>, cfg: &TsneConfig) -> Result<Tsne> {
    ensure!(x.rank() == 2, Dimension, "t-SNE expects a matrix, got {:?}", x.shape());
    let n = x.rows();
    ensure!(n >= 10, Contract, "t-SNE needs at least 10 points, got {n}");
    ensure!(
        cfg.perplexity >= 3.0 && cfg.perplexity < n as f64 / 3.0,
        Contract,
        "perplexity {} outside [3, n/3) for n = {n}",
        cfg.perplexity
    );
    ensure!(cfg.learning_rate > 0.0 && cfg.iterations >= 1, Contract, "learning rate and iterations must be positive");
    ensure!(x.data().iter().all(|v| v.is_finite()), Data, "t-SNE input contains non-finite values");
    let dist = sq_dists(x);
    if dist.iter().all(|&d| d == 0.0) {
        return Err(Error::Data("t-SNE input is degenerate: all points identical".into()));
    }
    let (cond, entropies) = conditional_p(&dist, n, cfg.perplexity);
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                p[i * n + j] = ((cond[i * n + j] + cond[j * n + i]) / (2.0 * n as f64)).max(1e-12);
            }
        }
    }

    let init = Normal::new(0.0, cfg.init_std).map_err(|e| Error::Contract(e.to_string()))?;
    let mut rng = seed::rng_for(cfg.seed, &[0]);
    let mut y: Vec<[f64; 2]> = (0..n).map(|_| [init.sample(&mut rng), init.sample(&mut rng)]).collect();
    let mut update = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut num = vec![0.0; n * n];
    let mut q = vec![0.0; n * n];
    let mut kl = Vec::new();
    student_q(&y, &mut num, &mut q);
    kl.push((0, kl_divergence(&p, &q)));

    for it in 1..=cfg.iterations {
        let exag = if it <= cfg.exaggeration_iters { cfg.exaggeration } else { 1.0 };
        let momentum = if it <= cfg.momentum_switch { cfg.momentum } else { cfg.final_momentum };
        for i in 0..n {
            let mut g = [0.0; 2];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let w = (exag * p[i * n + j] - q[i * n + j]) * num[i * n + j];
                g[0] += w * (y[i][0] - y[j][0]);
                g[1] += w * (y[i][1] - y[j][1]);
            }
            for a in 0..2 {
                let grad = 4.0 * g[a];
                gains[i][a] = if (grad > 0.0) != (update[i][a] > 0.0) {
                    gains[i][a] + 0.2
                } else {
                    (gains[i][a] * 0.8).max(0.01)
                };
                update[i][a] = momentum * update[i][a] - cfg.learning_rate * gains[i][a] * grad;
            }
        }
        let mut centre = [0.0; 2];
        for (yi, ui) in y.iter_mut().zip(&update) {
            yi[0] += ui[0];
            yi[1] += ui[1];
            centre[0] += yi[0] / n as f64;
            centre[1] += yi[1] / n as f64;
        }
        for yi in y.iter_mut() {
            yi[0] -= centre[0];
            yi[1] -= centre[1];
        }
        student_q(&y, &mut num, &mut q);
        if it % cfg.record_every.max(1) == 0 || it == cfg.iterations {
            let v = kl_divergence(&p, &q);
            if !v.is_finite() {
                return Err(Error::Numeric(format!("t-SNE KL became non-finite at iteration {it}")));
            }
            kl.push((it, v));
        }
    }
    Ok(Tsne { coords: y, kl, entropies })
}

/// Converts f32 feature rows to f64 for the embedding routines.
pub fn to_f64(x: &NdArray<f32>) -> NdArray<f64> {
    x.cast()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random(n: usize, d: usize, seed: u64) -> NdArray<f64> {
        let mut rng = seed::rng_for(seed, &[]);
        NdArray::from_vec(&[n, d], (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn plane_is_recovered_exactly() {
        let mut rng = seed::rng_for(4, &[]);
        let (a, b) = ([1.0, 2.0, 0.0, -1.0], [0.0, 1.0, 1.0, 3.0]);
        let mut data = Vec::new();
        for _ in 0..30 {
            let (s, t): (f64, f64) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            data.extend((0..4).map(|j| 0.5 + s * a[j] + t * b[j]));
        }
        let x = NdArray::from_vec(&[30, 4], data).unwrap();
        let pca = pca_embed(&x, 2).unwrap();
        for i in 0..30 {
            for j in 0..4 {
                let rec = pca.mean[j] + (0..2).map(|k| pca.coords.row(i)[k] * pca.components[k][j]).sum::<f64>();
                assert!((rec - x.row(i)[j]).abs() < 1e-6);
            }
        }
        assert!(pca.variances[0] >= pca.variances[1]);
    }

    #[test]
    fn pca_rejects_bad_dims() {
        let x = random(5, 3, 1);
        assert!(pca_embed(&x, 4).is_err());
        assert!(pca_embed(&random(1, 3, 1), 1).is_err());
    }

    #[test]
    fn entropy_targets_are_met() {
        let x = random(60, 5, 2);
        let dist = sq_dists(&x);
        let (p, h) = conditional_p(&dist, 60, 10.0);
        assert!(h.iter().all(|v| (v - 10f64.log2()).abs() < 1e-3));
        for i in 0..60 {
            let s: f64 = p[i * 60..(i + 1) * 60].iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn tsne_reduces_kl() {
        let x = random(45, 4, 3);
        let cfg = TsneConfig {
            perplexity: 10.0,
            iterations: 150,
            learning_rate: 200.0,
            ..TsneConfig::full_scale(1)
        };
        let r = tsne_embed(&x, &cfg).unwrap();
        assert_eq!(r.coords.len(), 45);
        assert!(r.kl.iter().all(|(_, v)| v.is_finite()));
        assert!(r.kl.last().unwrap().1 < r.kl[0].1);
        assert_eq!(r, tsne_embed(&x, &cfg).unwrap());
    }

    #[test]
    fn tsne_preconditions() {
        let x = random(30, 3, 1);
        let mut cfg = TsneConfig::full_scale(1);
        assert!(tsne_embed(&x, &cfg).is_err());
        cfg.perplexity = 2.0;
        assert!(tsne_embed(&x, &cfg).is_err());
        cfg.perplexity = 5.0;
        let same = NdArray::full(&[30, 3], 0.7);
        assert!(tsne_embed(&same, &cfg).unwrap_err().is_data());
    }
}
