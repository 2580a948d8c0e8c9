//! Short-time Fourier transform front-end: waterfall plot (C × S) to a
//! channel × frame × frequency tensor with a trailing data axis.
//!
//! Frames are rectangular, non-overlapping (hop = window) and zero-padded to
//! the FFT length. Bins `0..nfft/2` are kept; the Nyquist bin is dropped.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::dasgen::WaterfallPlot;
use crate::error::{ensure, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StftFormat {
    Magnitude,
    MagnitudePhase,
    RealImag,
}

impl StftFormat {
    /// Size of the trailing data axis.
    pub fn depth(self) -> usize {
        match self {
            StftFormat::Magnitude => 1,
            StftFormat::MagnitudePhase | StftFormat::RealImag => 2,
        }
    }
}

impl fmt::Display for StftFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StftFormat::Magnitude => "magnitude",
            StftFormat::MagnitudePhase => "magnitude-phase",
            StftFormat::RealImag => "real-imag",
        })
    }
}

impl FromStr for StftFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "magnitude" => Ok(StftFormat::Magnitude),
            "magnitude-phase" => Ok(StftFormat::MagnitudePhase),
            "real-imag" => Ok(StftFormat::RealImag),
            other => Err(Error::Contract(format!("unknown STFT format {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Normalization {
    None,
    LogZScore,
}

impl fmt::Display for Normalization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Normalization::None => "none",
            Normalization::LogZScore => "log-z-score",
        })
    }
}

impl FromStr for Normalization {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Normalization::None),
            "log-z-score" => Ok(Normalization::LogZScore),
            other => Err(Error::Contract(format!("unknown normalization {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StftConfig {
    pub window: usize,
    pub hop: usize,
    pub nfft: usize,
    pub format: StftFormat,
    pub normalization: Normalization,
}

impl StftConfig {
    /// W = H = 104, Nfft = 192: with C = 12, S = 10000 this gives T = F = 96.
    pub fn full_scale() -> Self {
        Self {
            window: 104,
            hop: 104,
            nfft: 192,
            format: StftFormat::Magnitude,
            normalization: Normalization::LogZScore,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.window > 0 && self.window <= self.nfft,
            Contract,
            "window {} must be in (0, nfft = {}]",
            self.window,
            self.nfft
        );
        ensure!(
            self.hop == self.window,
            Contract,
            "hop {} must equal window {}",
            self.hop,
            self.window
        );
        ensure!(self.nfft.is_multiple_of(2), Contract, "nfft {} must be even", self.nfft);
        Ok(())
    }

    /// Zero padding per frame.
    pub fn padding(&self) -> usize {
        self.nfft - self.window
    }

    pub fn bins(&self) -> usize {
        self.nfft / 2
    }

    pub fn frames(&self, samples: usize) -> usize {
        samples / self.hop
    }
}

/// Complex STFT frames, layout `[channel][frame][bin]`.
#[derive(Clone, Debug)]
pub struct ComplexFrames {
    pub channels: usize,
    pub frames: usize,
    pub bins: usize,
    pub data: Vec<Complex64>,
}

impl ComplexFrames {
    pub fn get(&self, c: usize, t: usize, f: usize) -> Complex64 {
        self.data[(c * self.frames + t) * self.bins + f]
    }
}

/// Real channel × frame × bin × depth tensor, layout `[c][t][f][d]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectroTensor {
    pub channels: usize,
    pub frames: usize,
    pub bins: usize,
    pub depth: usize,
    pub format: StftFormat,
    pub normalization: Normalization,
    pub values: Vec<f32>,
}

impl SpectroTensor {
    pub fn new(
        dims: [usize; 4],
        format: StftFormat,
        normalization: Normalization,
        values: Vec<f32>,
    ) -> Result<Self> {
        let [channels, frames, bins, depth] = dims;
        ensure!(
            values.len() == channels * frames * bins * depth,
            Dimension,
            "tensor {:?} needs {} values, got {}",
            dims,
            channels * frames * bins * depth,
            values.len()
        );
        Ok(Self {
            channels,
            frames,
            bins,
            depth,
            format,
            normalization,
            values,
        })
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.channels, self.frames, self.bins, self.depth]
    }

    pub fn index(&self, c: usize, t: usize, f: usize, d: usize) -> usize {
        ((c * self.frames + t) * self.bins + f) * self.depth + d
    }

    pub fn get(&self, c: usize, t: usize, f: usize, d: usize) -> f32 {
        self.values[self.index(c, t, f, d)]
    }

    /// Which data planes hold magnitudes (log-compressed during normalization).
    fn magnitude_planes(&self) -> Vec<usize> {
        match self.format {
            StftFormat::Magnitude | StftFormat::MagnitudePhase => vec![0],
            StftFormat::RealImag => Vec::new(),
        }
    }

    fn standardized_planes(&self) -> Vec<usize> {
        match self.format {
            StftFormat::Magnitude | StftFormat::MagnitudePhase => vec![0],
            StftFormat::RealImag => vec![0, 1],
        }
    }
}

pub fn stft_complex(x: &WaterfallPlot, cfg: &StftConfig) -> Result<ComplexFrames> {
    cfg.validate()?;
    ensure!(
        x.samples >= cfg.window,
        Data,
        "waterfall has {} samples, fewer than the window {}",
        x.samples,
        cfg.window
    );
    let frames = cfg.frames(x.samples);
    let bins = cfg.bins();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(cfg.nfft);
    let mut buf = vec![Complex64::new(0.0, 0.0); cfg.nfft];
    let mut data = Vec::with_capacity(x.channels * frames * bins);
    for c in 0..x.channels {
        let ch = x.channel(c);
        for t in 0..frames {
            buf.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
            let start = t * cfg.hop;
            for (b, &s) in buf.iter_mut().zip(&ch[start..start + cfg.window]) {
                b.re = s as f64;
            }
            fft.process(&mut buf);
            data.extend_from_slice(&buf[..bins]);
        }
    }
    Ok(ComplexFrames {
        channels: x.channels,
        frames,
        bins,
        data,
    })
}

/// Phase in (−π, π].
fn phase(z: Complex64) -> f64 {
    let p = z.im.atan2(z.re);
    if p <= -PI {
        PI
    } else {
        p
    }
}

pub fn to_real_format(frames: &ComplexFrames, format: StftFormat) -> SpectroTensor {
    let depth = format.depth();
    let mut values = Vec::with_capacity(frames.data.len() * depth);
    for &z in &frames.data {
        match format {
            StftFormat::Magnitude => values.push(z.norm() as f32),
            StftFormat::MagnitudePhase => {
                values.push(z.norm() as f32);
                values.push(phase(z) as f32);
            }
            StftFormat::RealImag => {
                values.push(z.re as f32);
                values.push(z.im as f32);
            }
        }
    }
    SpectroTensor {
        channels: frames.channels,
        frames: frames.frames,
        bins: frames.bins,
        depth,
        format,
        normalization: Normalization::None,
        values,
    }
}

const NORM_EPS: f64 = 1e-8;

/// Log-compress magnitude planes and standardize them per sample. Phase planes
/// pass through. A tensor that is already normalized is returned unchanged.
pub fn normalize_spectro(t: &SpectroTensor) -> SpectroTensor {
    let mut out = t.clone();
    if t.normalization == Normalization::LogZScore {
        return out;
    }
    let d = t.depth;
    for plane in t.magnitude_planes() {
        for v in out.values.iter_mut().skip(plane).step_by(d) {
            *v = v.max(0.0).ln_1p();
        }
    }
    let planes = t.standardized_planes();
    let mut n = 0usize;
    let mut sum = 0.0f64;
    for &p in &planes {
        for &v in out.values.iter().skip(p).step_by(d) {
            sum += v as f64;
            n += 1;
        }
    }
    if n > 0 {
        let mean = sum / n as f64;
        let mut var = 0.0f64;
        for &p in &planes {
            for &v in out.values.iter().skip(p).step_by(d) {
                var += (v as f64 - mean).powi(2);
            }
        }
        let std = (var / n as f64 + NORM_EPS).sqrt();
        for &p in &planes {
            for v in out.values.iter_mut().skip(p).step_by(d) {
                *v = ((*v as f64 - mean) / std) as f32;
            }
        }
    }
    out.normalization = Normalization::LogZScore;
    out
}

/// Full front-end: STFT, real-valued format, optional normalization.
pub fn spectrogram(x: &WaterfallPlot, cfg: &StftConfig) -> Result<SpectroTensor> {
    let frames = stft_complex(x, cfg)?;
    let t = to_real_format(&frames, cfg.format);
    Ok(match cfg.normalization {
        Normalization::None => t,
        Normalization::LogZScore => normalize_spectro(&t),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plot(channels: usize, samples: usize, f: impl Fn(usize, usize) -> f32) -> WaterfallPlot {
        let values = (0..channels * samples).map(|i| f(i / samples, i % samples)).collect();
        WaterfallPlot::new(channels, samples, 1000.0, values, None).unwrap()
    }

    fn cfg(w: usize, nfft: usize, format: StftFormat) -> StftConfig {
        StftConfig {
            window: w,
            hop: w,
            nfft,
            format,
            normalization: Normalization::None,
        }
    }

    #[test]
    fn zero_signal_gives_zero_frames() {
        let fr = stft_complex(&plot(2, 256, |_, _| 0.0), &cfg(64, 64, StftFormat::Magnitude)).unwrap();
        assert!(fr.data.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn sine_on_bin_five() {
        let w = 64;
        let x = plot(1, 4 * w, |_, n| (2.0 * std::f32::consts::PI * 5.0 * n as f32 / w as f32).sin());
        let fr = stft_complex(&x, &cfg(w, w, StftFormat::Magnitude)).unwrap();
        for t in 0..fr.frames {
            for f in 0..fr.bins {
                let m = fr.get(0, t, f).norm();
                if f == 5 {
                    assert!((m - w as f64 / 2.0).abs() < 1e-4, "{m}");
                } else {
                    assert!(m <= 1e-4, "bin {f}: {m}");
                }
            }
        }
    }

    #[test]
    fn full_scale_shape() {
        let x = plot(12, 10000, |_, _| 0.0);
        let fr = stft_complex(&x, &StftConfig::full_scale()).unwrap();
        assert_eq!((fr.frames, fr.bins), (96, 96));
        assert_eq!(StftConfig::full_scale().padding(), 88);
    }

    #[test]
    fn too_short_is_data_error() {
        let x = plot(1, 10, |_, _| 0.0);
        assert!(matches!(
            stft_complex(&x, &cfg(16, 16, StftFormat::Magnitude)),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn config_invariants() {
        let mut c = cfg(16, 16, StftFormat::Magnitude);
        c.hop = 8;
        assert!(c.validate().is_err());
        assert!(cfg(16, 15, StftFormat::Magnitude).validate().is_err());
        assert!(cfg(32, 16, StftFormat::Magnitude).validate().is_err());
    }

    #[test]
    fn real_formats() {
        let fr = ComplexFrames {
            channels: 1,
            frames: 1,
            bins: 3,
            data: vec![Complex64::new(3.0, 4.0), Complex64::new(0.0, 2.0), Complex64::new(-1.0, -0.0)],
        };
        let m = to_real_format(&fr, StftFormat::Magnitude);
        assert_eq!(m.values[0], 5.0);
        let mp = to_real_format(&fr, StftFormat::MagnitudePhase);
        assert_eq!(mp.depth, 2);
        assert_eq!(mp.values[2], 2.0);
        assert!((mp.values[3] - std::f32::consts::FRAC_PI_2).abs() < 1e-6);
        assert!((mp.values[5] - std::f32::consts::PI).abs() < 1e-6);
        let x = plot(1, 64, |_, n| (n as f32 * 0.3).cos());
        let fr = stft_complex(&x, &cfg(64, 64, StftFormat::RealImag)).unwrap();
        let ri = to_real_format(&fr, StftFormat::RealImag);
        // DC bin of a real signal has no imaginary part.
        assert!(ri.values[1].abs() < 1e-5);
    }

    #[test]
    fn constant_magnitude_normalizes_to_zero() {
        let t = SpectroTensor::new([2, 2, 2, 1], StftFormat::Magnitude, Normalization::None, vec![4.0; 8]).unwrap();
        let n = normalize_spectro(&t);
        assert!(n.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn phase_planes_pass_through() {
        let vals: Vec<f32> = (0..16).map(|i| if i % 2 == 0 { i as f32 } else { 0.25 * i as f32 - 1.0 }).collect();
        let t = SpectroTensor::new([2, 2, 2, 2], StftFormat::MagnitudePhase, Normalization::None, vals.clone()).unwrap();
        let n = normalize_spectro(&t);
        for i in (1..16).step_by(2) {
            assert_eq!(n.values[i], vals[i]);
        }
    }
}
