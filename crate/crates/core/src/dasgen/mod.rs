//! Synthetic DAS waterfall plots and the on-disk dataset layout.
//!
//! Events are band-limited filtered noise scaled through the strain-to-phase
//! relation and copied coherently onto the channels they cover, attenuated by
//! a per-channel coupling gain. Everything else is Gaussian background noise.

mod dataset;
mod io;
mod presets;
mod synth;

pub use dataset::{synth_dataset, DatasetConfig, DatasetManifest, ManifestEntry, Split};
pub use io::{read_dataset, read_waterfall, write_dataset, write_waterfall, MANIFEST_FILE, WFP_MAGIC};
pub use presets::{ClassPreset, ClassTemplate, ModulationKind};
pub use synth::{synth_waterfall, CouplingProfile, EventSpec, Modulation, SpectralLine, SynthConfig};

use crate::error::{ensure, Result};

/// Sensitivity coefficient (nε·m/rad) at 1550 nm, n = 1.46.
pub const K_PHI_1550: f64 = 110.37;

/// Strain-to-phase conversion parameters.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GaugeParams {
    pub gauge_length_m: f64,
    pub k_phi: f64,
}

impl Default for GaugeParams {
    fn default() -> Self {
        Self {
            gauge_length_m: 1.0,
            k_phi: K_PHI_1550,
        }
    }
}

/// Phase difference (rad) accumulated over `gauge_length_m` for `strain` (nε).
pub fn phase_from_strain(strain: f64, gauge_length_m: f64, k_phi: f64) -> Result<f64> {
    ensure!(
        gauge_length_m > 0.0,
        Contract,
        "gauge length must be positive, got {gauge_length_m}"
    );
    ensure!(k_phi > 0.0, Contract, "k_phi must be positive, got {k_phi}");
    Ok(strain * gauge_length_m / k_phi)
}

/// Channel × time matrix, channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct WaterfallPlot {
    pub channels: usize,
    pub samples: usize,
    pub sample_rate: f32,
    pub values: Vec<f32>,
    pub label: Option<usize>,
}

impl WaterfallPlot {
    pub fn new(
        channels: usize,
        samples: usize,
        sample_rate: f32,
        values: Vec<f32>,
        label: Option<usize>,
    ) -> Result<Self> {
        ensure!(
            channels > 0 && samples > 0,
            Contract,
            "waterfall needs C·S > 0, got {channels}×{samples}"
        );
        ensure!(
            values.len() == channels * samples,
            Dimension,
            "waterfall {channels}×{samples} given {} values",
            values.len()
        );
        ensure!(
            values.iter().all(|v| v.is_finite()),
            Data,
            "waterfall contains non-finite values"
        );
        Ok(Self {
            channels,
            samples,
            sample_rate,
            values,
            label,
        })
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        &self.values[c * self.samples..(c + 1) * self.samples]
    }

    pub fn rms(&self, c: usize) -> f64 {
        let ch = self.channel(c);
        (ch.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / ch.len() as f64).sqrt()
    }
}
