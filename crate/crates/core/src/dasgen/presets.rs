use rand::Rng;
use serde::{Deserialize, Serialize};

use super::synth::{EventSpec, Modulation, SpectralLine, SynthConfig};

/// Envelope family of a class template.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ModulationKind {
    /// No event at all.
    Silent,
    Stationary,
    Impulsive { rate_hz: f64, decay_s: f64 },
    Moving { width_channels: f64 },
}

/// A class expressed in sampling-rate-independent terms. Line centers and
/// widths are fractions of the Nyquist frequency.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassTemplate {
    pub name: &'static str,
    /// (center, bandwidth, power) as fractions of Nyquist.
    pub lines: &'static [(f64, f64, f64)],
    pub modulation: ModulationKind,
    /// Strain amplitude range in nε.
    pub amplitude: (f64, f64),
    /// Number of covered channels as a fraction of C.
    pub extent: (f64, f64),
    /// Duration as a fraction of the record.
    pub duration: (f64, f64),
}

const fn t(
    name: &'static str,
    lines: &'static [(f64, f64, f64)],
    modulation: ModulationKind,
    amplitude: (f64, f64),
    extent: (f64, f64),
    duration: (f64, f64),
) -> ClassTemplate {
    ClassTemplate {
        name,
        lines,
        modulation,
        amplitude,
        extent,
        duration,
    }
}

use ModulationKind::*;

const BENCHMARK: &[ClassTemplate] = &[
    t("background", &[], Silent, (0.0, 0.0), (0.0, 0.0), (0.0, 0.0)),
    t(
        "digging",
        &[(0.2, 0.06, 1.0)],
        Impulsive { rate_hz: 1.0, decay_s: 0.15 },
        (45.0, 75.0),
        (0.2, 0.45),
        (0.7, 1.0),
    ),
    t(
        "knocking",
        &[(0.7, 0.05, 1.0)],
        Impulsive { rate_hz: 3.0, decay_s: 0.05 },
        (55.0, 90.0),
        (0.15, 0.35),
        (0.7, 1.0),
    ),
    t(
        "watering",
        &[(0.65, 0.2, 1.0)],
        Stationary,
        (12.0, 25.0),
        (0.3, 0.6),
        (0.6, 1.0),
    ),
    t(
        "shaking",
        &[(0.3, 0.01, 1.0), (0.6, 0.01, 0.4)],
        Stationary,
        (12.0, 25.0),
        (0.3, 0.7),
        (0.6, 1.0),
    ),
    t(
        "walking",
        &[(0.1, 0.04, 1.0)],
        Moving { width_channels: 1.5 },
        (25.0, 45.0),
        (0.5, 1.0),
        (0.7, 1.0),
    ),
];

const FIELD: &[ClassTemplate] = &[
    t("background", &[], Silent, (0.0, 0.0), (0.0, 0.0), (0.0, 0.0)),
    t(
        "roller-moving",
        &[(0.08, 0.04, 1.0)],
        Moving { width_channels: 2.0 },
        (25.0, 40.0),
        (0.5, 1.0),
        (0.8, 1.0),
    ),
    t(
        "roller-compacting",
        &[(0.08, 0.04, 0.6), (0.3, 0.015, 1.0)],
        Moving { width_channels: 2.0 },
        (25.0, 40.0),
        (0.5, 1.0),
        (0.8, 1.0),
    ),
    t(
        "excavator-digging",
        &[(0.2, 0.08, 1.0)],
        Impulsive { rate_hz: 0.5, decay_s: 0.4 },
        (25.0, 45.0),
        (0.2, 0.4),
        (0.7, 1.0),
    ),
    t(
        "excavator-moving",
        &[(0.12, 0.04, 1.0), (0.25, 0.02, 0.5)],
        Moving { width_channels: 1.5 },
        (20.0, 35.0),
        (0.5, 1.0),
        (0.8, 1.0),
    ),
    t(
        "drill",
        &[(0.8, 0.02, 1.0)],
        Stationary,
        (12.0, 25.0),
        (0.1, 0.25),
        (0.4, 0.8),
    ),
    t(
        "forklift-loaded",
        &[(0.05, 0.02, 1.0), (0.18, 0.02, 0.6)],
        Moving { width_channels: 1.5 },
        (25.0, 40.0),
        (0.5, 1.0),
        (0.8, 1.0),
    ),
    t(
        "forklift-unloaded",
        &[(0.07, 0.02, 1.0), (0.22, 0.02, 0.6)],
        Moving { width_channels: 1.0 },
        (15.0, 30.0),
        (0.5, 1.0),
        (0.8, 1.0),
    ),
];

/// Named class sets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassPreset {
    /// Six balanced classes.
    Benchmark,
    /// Eight imbalanced classes.
    Field,
}

impl ClassPreset {
    pub fn templates(self) -> &'static [ClassTemplate] {
        match self {
            ClassPreset::Benchmark => BENCHMARK,
            ClassPreset::Field => FIELD,
        }
    }

    pub fn class_names(self) -> Vec<String> {
        self.templates().iter().map(|t| t.name.to_string()).collect()
    }

    /// Fixed per-class counts of the field set.
    pub fn field_counts() -> Vec<usize> {
        vec![42, 100, 300, 332, 334, 38, 54, 186]
    }
}

impl std::str::FromStr for ClassPreset {
    type Err = crate::Error;
    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "benchmark" => Ok(ClassPreset::Benchmark),
            "field" => Ok(ClassPreset::Field),
            _ => Err(crate::Error::Contract(format!(
                "unknown class preset '{s}' (expected benchmark or field)"
            ))),
        }
    }
}

impl std::fmt::Display for ClassPreset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ClassPreset::Benchmark => "benchmark",
            ClassPreset::Field => "field",
        })
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

impl ClassTemplate {
    /// Draws one concrete event (or none for the silent class) with jittered
    /// frequencies, amplitude, placement and timing.
    pub fn instantiate<R: Rng + ?Sized>(
        &self,
        class_id: usize,
        cfg: &SynthConfig,
        amplitude_scale: f64,
        rng: &mut R,
    ) -> Option<EventSpec> {
        let modulation = match self.modulation {
            Silent => return None,
            Stationary => Modulation::Stationary,
            Impulsive { rate_hz, decay_s } => Modulation::Impulsive {
                rate_hz: rate_hz * rng.random_range(0.8..1.25),
                decay_s,
            },
            Moving { width_channels } => Modulation::MovingSource { width_channels },
        };
        let nyq = cfg.sample_rate / 2.0;
        let jitter = rng.random_range(0.92..1.08);
        let lines = self
            .lines
            .iter()
            .map(|&(c, bw, p)| SpectralLine {
                center_hz: (c * jitter * nyq).min(0.98 * nyq),
                bandwidth_hz: bw * nyq,
                power: p,
            })
            .collect();
        let c_n = cfg.channels;
        let width = ((uniform(rng, self.extent) * c_n as f64).round() as usize).clamp(1, c_n);
        let first = rng.random_range(0..=c_n - width);
        let total = cfg.duration_s();
        let duration = (uniform(rng, self.duration) * total).max(1.0 / cfg.sample_rate);
        let onset = rng.random_range(0.0..=(total - duration).max(0.0));
        Some(EventSpec {
            class_id,
            lines,
            onset_s: onset,
            duration_s: duration,
            first_channel: first,
            last_channel: first + width - 1,
            amplitude: uniform(rng, self.amplitude) * amplitude_scale,
            modulation,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    #[test]
    fn preset_shapes() {
        assert_eq!(ClassPreset::Benchmark.templates().len(), 6);
        assert_eq!(ClassPreset::Field.templates().len(), 8);
        assert_eq!(ClassPreset::field_counts().iter().sum::<usize>(), 1386);
        assert_eq!("field".parse::<ClassPreset>().unwrap(), ClassPreset::Field);
        assert!("other".parse::<ClassPreset>().is_err());
    }

    #[test]
    fn instances_respect_event_invariants() {
        let cfg = SynthConfig::default();
        let mut rng = seed::rng_for(5, &[]);
        for preset in [ClassPreset::Benchmark, ClassPreset::Field] {
            for (k, tpl) in preset.templates().iter().enumerate() {
                for _ in 0..20 {
                    match tpl.instantiate(k, &cfg, 1.0, &mut rng) {
                        None => assert_eq!(tpl.modulation, Silent),
                        Some(ev) => ev.validate(&cfg).unwrap(),
                    }
                }
            }
        }
    }
}
