use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::seed;
use crate::stft::{normalize_spectro, Normalization, SpectroTensor, StftFormat};

/// Video-like stage-1 tensors on a `C × T × F` grid: a few Gaussian blobs
/// drifting linearly through (channel, frequency) as time advances, over a
/// weak noise floor. Returned log-z-score normalized, like waterfall tensors.
pub fn video_blobs(count: usize, dims: [usize; 3], format: StftFormat, seed: u64) -> Result<Vec<SpectroTensor>> {
    let [c_n, t_n, f_n] = dims;
    let depth = format.depth();
    let noise = Normal::new(0.0, 0.05).expect("valid sigma");
    (0..count)
        .map(|i| {
            let mut rng = seed::rng_for(seed, &[i as u64]);
            let blobs: Vec<[f64; 7]> = (0..rng.random_range(1..=3))
                .map(|_| {
                    [
                        rng.random_range(0.0..c_n as f64),
                        rng.random_range(0.0..f_n as f64),
                        rng.random_range(-1.0..1.0) * c_n as f64 / t_n as f64,
                        rng.random_range(-1.0..1.0) * f_n as f64 / t_n as f64,
                        rng.random_range(0.5..(c_n as f64 / 4.0).max(0.6)),
                        rng.random_range(1.0..(f_n as f64 / 6.0).max(1.1)),
                        rng.random_range(0.5..2.0),
                    ]
                })
                .collect();
            let mut values = Vec::with_capacity(c_n * t_n * f_n * depth);
            for c in 0..c_n {
                for t in 0..t_n {
                    for f in 0..f_n {
                        let mut v = 0.0;
                        for &[c0, f0, vc, vf, sc, sf, a] in &blobs {
                            let dc = c as f64 - (c0 + vc * t as f64);
                            let df = f as f64 - (f0 + vf * t as f64);
                            v += a * (-(dc * dc) / (2.0 * sc * sc) - (df * df) / (2.0 * sf * sf)).exp();
                        }
                        for d in 0..depth {
                            let n: f64 = noise.sample(&mut rng);
                            let x = match (format, d) {
                                (StftFormat::MagnitudePhase, 1) => (t as f64 * 0.3 + f as f64 * 0.1).sin() * std::f64::consts::PI,
                                (_, 0) => v + n.abs(),
                                _ => v * 0.5 + n,
                            };
                            values.push(x as f32);
                        }
                    }
                }
            }
            let raw = SpectroTensor::new([c_n, t_n, f_n, depth], format, Normalization::None, values)?;
            Ok(normalize_spectro(&raw))
        })
        .collect()
}
