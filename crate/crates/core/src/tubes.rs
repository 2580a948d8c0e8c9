//! Non-overlapping spatial-temporal-frequency tubes and mask sampling.
//!
//! A tube array is an `N × P` matrix: row `i` holds tube `i` flattened as
//! `[c][t][f][d]`, and tubes are numbered row-major over
//! (channel block, time block, frequency block).

use std::fmt;
use std::str::FromStr;

use rand::seq::index;

use crate::error::{ensure, Error, Result};
use crate::numerics::NdArray;
use crate::seed;
use crate::stft::{Normalization, SpectroTensor, StftFormat};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TubeGrid {
    /// Tube extents (C_p, T_p, F_p).
    pub tube: [usize; 3],
    /// Tubes per axis (n_c, n_t, n_f).
    pub counts: [usize; 3],
}

impl TubeGrid {
    /// Grid for a `C × T × F` tensor; trailing remainders are dropped.
    pub fn new(dims: [usize; 3], tube: [usize; 3]) -> Result<Self> {
        ensure!(
            tube.iter().all(|&e| e > 0),
            Contract,
            "tube extents must be positive, got {tube:?}"
        );
        ensure!(
            dims.iter().zip(&tube).all(|(d, e)| d >= e),
            Data,
            "tensor {dims:?} is smaller than one tube {tube:?}"
        );
        Ok(Self {
            tube,
            counts: [dims[0] / tube[0], dims[1] / tube[1], dims[2] / tube[2]],
        })
    }

    pub fn for_tensor(t: &SpectroTensor, tube: [usize; 3]) -> Result<Self> {
        Self::new([t.channels, t.frames, t.bins], tube)
    }

    /// Total tube count N.
    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn tube_volume(&self) -> usize {
        self.tube.iter().product()
    }

    /// Flattened tube length P for a given depth.
    pub fn patch_dim(&self, depth: usize) -> usize {
        self.tube_volume() * depth
    }

    /// Covered extents (n_c·C_p, n_t·T_p, n_f·F_p).
    pub fn covered(&self) -> [usize; 3] {
        [
            self.counts[0] * self.tube[0],
            self.counts[1] * self.tube[1],
            self.counts[2] * self.tube[2],
        ]
    }

    pub fn index(&self, block: [usize; 3]) -> usize {
        (block[0] * self.counts[1] + block[1]) * self.counts[2] + block[2]
    }

    pub fn coords(&self, i: usize) -> [usize; 3] {
        let [_, nt, nf] = self.counts;
        [i / (nt * nf), (i / nf) % nt, i % nf]
    }
}

/// Cuts `t` into an `N × P` tube matrix.
pub fn partition_tubes(t: &SpectroTensor, grid: &TubeGrid) -> Result<NdArray<f32>> {
    let [cp, tp, fp] = grid.tube;
    let cov = grid.covered();
    ensure!(
        t.channels >= cov[0] && t.frames >= cov[1] && t.bins >= cov[2],
        Dimension,
        "grid covering {cov:?} does not fit tensor {:?}",
        t.dims()
    );
    let d = t.depth;
    let row_len = fp * d;
    let mut out = Vec::with_capacity(grid.len() * grid.patch_dim(d));
    for i in 0..grid.len() {
        let [bc, bt, bf] = grid.coords(i);
        for c in bc * cp..(bc + 1) * cp {
            for tt in bt * tp..(bt + 1) * tp {
                let start = t.index(c, tt, bf * fp, 0);
                out.extend_from_slice(&t.values[start..start + row_len]);
            }
        }
    }
    NdArray::from_vec(&[grid.len(), grid.patch_dim(d)], out)
}

/// Inverse of [`partition_tubes`] over the covered region.
pub fn reassemble_tubes(
    tubes: &NdArray<f32>,
    grid: &TubeGrid,
    format: StftFormat,
    normalization: Normalization,
) -> Result<SpectroTensor> {
    let order: Vec<usize> = (0..grid.len()).collect();
    reassemble_indexed(tubes, &order, grid, format, normalization)
}

/// Places row `r` of `tubes` at tube position `order[r]`.
pub fn reassemble_indexed(
    tubes: &NdArray<f32>,
    order: &[usize],
    grid: &TubeGrid,
    format: StftFormat,
    normalization: Normalization,
) -> Result<SpectroTensor> {
    let n = grid.len();
    ensure!(
        tubes.rank() == 2 && tubes.rows() == n && order.len() == n,
        Contract,
        "expected {n} tubes, got shape {:?} with {} positions",
        tubes.shape(),
        order.len()
    );
    let d = format.depth();
    ensure!(
        tubes.cols() == grid.patch_dim(d),
        Contract,
        "tube length {} does not match grid {:?} at depth {d}",
        tubes.cols(),
        grid.tube
    );
    let mut seen = vec![false; n];
    for &p in order {
        ensure!(p < n && !seen[p], Contract, "tube positions are not a permutation of 0..{n}");
        seen[p] = true;
    }
    let [cp, tp, fp] = grid.tube;
    let cov = grid.covered();
    let mut out = SpectroTensor::new(
        [cov[0], cov[1], cov[2], d],
        format,
        normalization,
        vec![0.0; cov.iter().product::<usize>() * d],
    )?;
    let row_len = fp * d;
    for (r, &pos) in order.iter().enumerate() {
        let src = tubes.row(r);
        let [bc, bt, bf] = grid.coords(pos);
        let mut k = 0;
        for c in bc * cp..(bc + 1) * cp {
            for tt in bt * tp..(bt + 1) * tp {
                let start = out.index(c, tt, bf * fp, 0);
                out.values[start..start + row_len].copy_from_slice(&src[k..k + row_len]);
                k += row_len;
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MaskStrategy {
    Random,
    Spatial,
    Temporal,
    Frequency,
}

impl MaskStrategy {
    pub const ALL: [MaskStrategy; 4] = [
        MaskStrategy::Random,
        MaskStrategy::Spatial,
        MaskStrategy::Temporal,
        MaskStrategy::Frequency,
    ];

    fn axis(self) -> Option<usize> {
        match self {
            MaskStrategy::Random => None,
            MaskStrategy::Spatial => Some(0),
            MaskStrategy::Temporal => Some(1),
            MaskStrategy::Frequency => Some(2),
        }
    }
}

impl fmt::Display for MaskStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MaskStrategy::Random => "random",
            MaskStrategy::Spatial => "spatial",
            MaskStrategy::Temporal => "temporal",
            MaskStrategy::Frequency => "frequency",
        })
    }
}

impl FromStr for MaskStrategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.to_string() == s)
            .ok_or_else(|| {
                Error::Contract(format!(
                    "unknown mask strategy '{s}' (expected random, spatial, temporal or frequency)"
                ))
            })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaskSpec {
    pub ratio: f64,
    pub strategy: MaskStrategy,
    pub seed: u64,
    pub total: usize,
    /// Masked tube indices, ascending.
    pub masked: Vec<usize>,
    /// Visible tube indices, ascending.
    pub visible: Vec<usize>,
}

impl MaskSpec {
    /// Mask hiding nothing.
    pub fn none(total: usize) -> Self {
        Self {
            ratio: 0.0,
            strategy: MaskStrategy::Random,
            seed: 0,
            total,
            masked: Vec::new(),
            visible: (0..total).collect(),
        }
    }

    pub fn n_masked(&self) -> usize {
        self.masked.len()
    }

    pub fn n_visible(&self) -> usize {
        self.visible.len()
    }

    /// Per-tube flag, true when masked.
    pub fn flags(&self) -> Vec<bool> {
        let mut f = vec![false; self.total];
        for &i in &self.masked {
            f[i] = true;
        }
        f
    }
}

/// ceil(ρN), robust to representation error in ρ·N.
pub fn masked_count(ratio: f64, n: usize) -> usize {
    let x = ratio * n as f64;
    let r = x.round();
    if (x - r).abs() < 1e-9 {
        r as usize
    } else {
        x.ceil() as usize
    }
}

pub fn sample_mask(grid: &TubeGrid, ratio: f64, strategy: MaskStrategy, seed: u64) -> Result<MaskSpec> {
    ensure!(
        (0.0..1.0).contains(&ratio),
        Contract,
        "mask ratio {ratio} outside [0, 1)"
    );
    let n = grid.len();
    let n_m = masked_count(ratio, n);
    let mut rng = seed::rng_for(seed, &[]);
    let mut flags = vec![false; n];
    match strategy.axis() {
        None => {
            for i in index::sample(&mut rng, n, n_m) {
                flags[i] = true;
            }
        }
        Some(axis) => {
            let slices = grid.counts[axis];
            let per_slice = n / slices;
            if n_m > 0 {
                ensure!(
                    slices > 1,
                    Contract,
                    "{strategy} masking needs more than one slice along its axis"
                );
            }
            let k = n_m.div_ceil(per_slice).min(slices.saturating_sub(1));
            let chosen = index::sample(&mut rng, slices, k).into_vec();
            for (i, f) in flags.iter_mut().enumerate() {
                *f = chosen.contains(&grid.coords(i)[axis]);
            }
        }
    }
    let (mut masked, mut visible) = (Vec::new(), Vec::new());
    for (i, &f) in flags.iter().enumerate() {
        if f {
            masked.push(i);
        } else {
            visible.push(i);
        }
    }
    Ok(MaskSpec {
        ratio,
        strategy,
        seed,
        total: n,
        masked,
        visible,
    })
}

/// Visible rows of `tubes`, in ascending tube order.
pub fn apply_mask(tubes: &NdArray<f32>, mask: &MaskSpec) -> Result<NdArray<f32>> {
    let n = tubes.rows();
    ensure!(
        mask.total == n,
        Contract,
        "mask built for {} tubes applied to {n}",
        mask.total
    );
    ensure!(
        mask.masked.iter().chain(&mask.visible).all(|&i| i < n),
        Contract,
        "mask index out of range for {n} tubes"
    );
    let p = tubes.cols();
    let mut out = Vec::with_capacity(mask.visible.len() * p);
    for &i in &mask.visible {
        out.extend_from_slice(tubes.row(i));
    }
    NdArray::from_vec(&[mask.visible.len(), p], out)
}
