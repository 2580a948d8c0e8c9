use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::{phase_from_strain, GaugeParams, WaterfallPlot};
use crate::error::{ensure, Result};
use crate::seed;

/// Acquisition geometry and noise floor shared by all samples of a dataset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub channels: usize,
    pub samples: usize,
    /// Temporal samples per second.
    pub sample_rate: f64,
    /// Meters per channel (0.8 m is 1.25 spatial samples per meter).
    pub channel_spacing_m: f64,
    /// Background noise standard deviation, in phase units (rad).
    pub noise_sigma: f64,
    pub gauge: GaugeParams,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            channels: 12,
            samples: 2000,
            sample_rate: 200.0,
            channel_spacing_m: 0.8,
            noise_sigma: 0.05,
            gauge: GaugeParams::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.channels > 0 && self.samples > 0,
            Contract,
            "need C·S > 0, got {}×{}",
            self.channels,
            self.samples
        );
        ensure!(self.sample_rate > 0.0, Contract, "sample rate must be positive");
        ensure!(self.channel_spacing_m > 0.0, Contract, "channel spacing must be positive");
        ensure!(
            self.sample_rate > 1.0 / self.channel_spacing_m,
            Contract,
            "temporal rate {} /s must exceed spatial rate {} /m",
            self.sample_rate,
            1.0 / self.channel_spacing_m
        );
        ensure!(self.noise_sigma >= 0.0, Contract, "noise sigma must be non-negative");
        Ok(())
    }

    pub fn duration_s(&self) -> f64 {
        self.samples as f64 / self.sample_rate
    }
}

/// One spectral component of an event template.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralLine {
    pub center_hz: f64,
    /// Gaussian standard deviation of the line in Hz; 0 is a single FFT bin.
    pub bandwidth_hz: f64,
    /// Relative power.
    pub power: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Modulation {
    Stationary,
    /// Decaying bursts repeating at `rate_hz`.
    Impulsive { rate_hz: f64, decay_s: f64 },
    /// A source travelling from the first to the last covered channel over the
    /// event; each channel sees a Gaussian footprint of `width_channels`.
    MovingSource { width_channels: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventSpec {
    pub class_id: usize,
    pub lines: Vec<SpectralLine>,
    pub onset_s: f64,
    pub duration_s: f64,
    pub first_channel: usize,
    pub last_channel: usize,
    /// Peak strain scale in nε (the waveform is unit-RMS before scaling).
    pub amplitude: f64,
    pub modulation: Modulation,
}

impl EventSpec {
    pub fn validate(&self, cfg: &SynthConfig) -> Result<()> {
        ensure!(
            self.first_channel <= self.last_channel && self.last_channel < cfg.channels,
            Contract,
            "channel extent [{}, {}] outside [0, {})",
            self.first_channel,
            self.last_channel,
            cfg.channels
        );
        ensure!(
            self.duration_s > 0.0 && self.duration_s <= cfg.duration_s() + 1e-9,
            Contract,
            "duration {} s outside (0, {}]",
            self.duration_s,
            cfg.duration_s()
        );
        ensure!(
            self.onset_s >= 0.0 && self.onset_s + self.duration_s <= cfg.duration_s() + 1e-9,
            Contract,
            "event [{}, {}] s exceeds the record",
            self.onset_s,
            self.onset_s + self.duration_s
        );
        ensure!(!self.lines.is_empty(), Contract, "event without spectral lines");
        for l in &self.lines {
            ensure!(
                l.center_hz >= 0.0 && l.center_hz < cfg.sample_rate / 2.0,
                Contract,
                "line at {} Hz not below Nyquist {}",
                l.center_hz,
                cfg.sample_rate / 2.0
            );
            ensure!(
                l.bandwidth_hz >= 0.0 && l.power >= 0.0,
                Contract,
                "negative bandwidth or power"
            );
        }
        Ok(())
    }
}

/// Per-channel multiplicative gain in (0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct CouplingProfile {
    pub gains: Vec<f64>,
}

impl CouplingProfile {
    pub fn uniform(channels: usize) -> Self {
        Self {
            gains: vec![1.0; channels],
        }
    }

    /// Smooth random walk clamped to [0.3, 1.0].
    pub fn random_walk<R: Rng + ?Sized>(channels: usize, rng: &mut R) -> Self {
        let mut g = rng.random_range(0.3..=1.0);
        let mut gains = Vec::with_capacity(channels);
        for _ in 0..channels {
            gains.push(g);
            let step: f64 = rng.random_range(-0.1..=0.1);
            g = (g + step).clamp(0.3, 1.0);
        }
        Self { gains }
    }

    pub fn validate(&self, channels: usize) -> Result<()> {
        ensure!(
            self.gains.len() == channels,
            Contract,
            "coupling profile has {} gains for {channels} channels",
            self.gains.len()
        );
        ensure!(
            self.gains.iter().all(|&g| g > 0.0 && g <= 1.0),
            Contract,
            "coupling gains must lie in (0, 1]"
        );
        Ok(())
    }
}

/// Unit-RMS noise of length `n` shaped by the sum of the event's lines.
fn filtered_noise<R: Rng + ?Sized>(lines: &[SpectralLine], n: usize, fs: f64, rng: &mut R) -> Vec<f64> {
    let mut buf: Vec<Complex64> = (0..n)
        .map(|_| Complex64::new(StandardNormal.sample(rng), 0.0))
        .collect();
    let mut planner = FftPlanner::<f64>::new();
    planner.plan_fft_forward(n).process(&mut buf);
    let df = fs / n as f64;
    for (k, z) in buf.iter_mut().enumerate() {
        let kk = if k <= n / 2 { k } else { n - k };
        let f = kk as f64 * df;
        let mut h = 0.0;
        for l in lines {
            if l.bandwidth_hz > 0.0 {
                h += l.power.sqrt() * (-(f - l.center_hz).powi(2) / (2.0 * l.bandwidth_hz.powi(2))).exp();
            } else if kk == (l.center_hz / df).round() as usize {
                h += l.power.sqrt();
            }
        }
        *z *= h;
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let mut out: Vec<f64> = buf.iter().map(|z| z.re).collect();
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    if rms > 0.0 {
        out.iter_mut().for_each(|v| *v /= rms);
    }
    out
}

fn edge_taper(i: usize, n: usize) -> f64 {
    let ramp = (n / 20).max(1);
    let k = i.min(n - 1 - i);
    if k >= ramp {
        1.0
    } else {
        0.5 * (1.0 - (std::f64::consts::PI * k as f64 / ramp as f64).cos())
    }
}

fn impulsive_envelope<R: Rng + ?Sized>(n: usize, fs: f64, rate_hz: f64, decay_s: f64, rng: &mut R) -> Vec<f64> {
    let period = 1.0 / rate_hz.max(1e-6);
    let mut starts = Vec::new();
    let mut t = rng.random_range(0.0..period);
    let total = n as f64 / fs;
    while t < total {
        starts.push(t);
        t += period * rng.random_range(0.85..1.15);
    }
    (0..n)
        .map(|i| {
            let ti = i as f64 / fs;
            starts
                .iter()
                .filter(|&&s| s <= ti)
                .map(|&s| (-(ti - s) / decay_s).exp())
                .fold(0.0f64, f64::max)
        })
        .collect()
}

/// Background noise plus every event, deterministic in `seed`.
pub fn synth_waterfall(
    specs: &[EventSpec],
    coupling: &CouplingProfile,
    cfg: &SynthConfig,
    seed: u64,
    label: Option<usize>,
) -> Result<WaterfallPlot> {
    cfg.validate()?;
    coupling.validate(cfg.channels)?;
    for s in specs {
        s.validate(cfg)?;
    }
    let (c_n, s_n, fs) = (cfg.channels, cfg.samples, cfg.sample_rate);
    let mut rng = seed::rng_for(seed, &[0]);
    let mut values = vec![0.0f64; c_n * s_n];
    for v in values.iter_mut() {
        let z: f64 = StandardNormal.sample(&mut rng);
        *v = z * cfg.noise_sigma;
    }
    for (k, ev) in specs.iter().enumerate() {
        let mut erng = seed::rng_for(seed, &[1, k as u64]);
        let onset = (ev.onset_s * fs).round() as usize;
        let n = ((ev.duration_s * fs).round() as usize).clamp(1, s_n - onset.min(s_n - 1));
        let wave = filtered_noise(&ev.lines, n, fs, &mut erng);
        let env: Vec<f64> = match ev.modulation {
            Modulation::Stationary | Modulation::MovingSource { .. } => {
                (0..n).map(|i| edge_taper(i, n)).collect()
            }
            Modulation::Impulsive { rate_hz, decay_s } => {
                impulsive_envelope(n, fs, rate_hz, decay_s, &mut erng)
            }
        };
        let scale = phase_from_strain(ev.amplitude, cfg.gauge.gauge_length_m, cfg.gauge.k_phi)?;
        let span = (ev.last_channel - ev.first_channel) as f64;
        for c in ev.first_channel..=ev.last_channel {
            let gain = coupling.gains[c] * scale;
            let row = &mut values[c * s_n..(c + 1) * s_n];
            for i in 0..n {
                let mut w = env[i] * wave[i] * gain;
                if let Modulation::MovingSource { width_channels } = ev.modulation {
                    let pos = ev.first_channel as f64 + span * i as f64 / n as f64;
                    w *= (-(c as f64 - pos).powi(2) / (2.0 * width_channels.powi(2))).exp();
                }
                row[onset + i] += w;
            }
        }
    }
    let values = values.into_iter().map(|v| v as f32).collect();
    WaterfallPlot::new(c_n, s_n, fs as f32, values, label)
}
