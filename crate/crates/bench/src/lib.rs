//! Seeded inputs shared by the benchmarks.

use dasmae_core::dasgen::WaterfallPlot;
use dasmae_core::model::{MaeModel, ModelConfig};
use dasmae_core::numerics::NdArray;
use dasmae_core::pipeline::prepare_tubes;
use dasmae_core::stft::{Normalization, StftConfig, StftFormat};
use dasmae_core::tubes::TubeGrid;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn uniform(shape: &[usize], seed: u64) -> NdArray<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    NdArray::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape matches")
}

pub fn waterfall(channels: usize, samples: usize, seed: u64) -> WaterfallPlot {
    let values = uniform(&[channels, samples], seed).data().to_vec();
    WaterfallPlot::new(channels, samples, 200.0, values, None).expect("valid waterfall")
}

pub fn desk_stft() -> StftConfig {
    StftConfig {
        window: 64,
        hop: 64,
        nfft: 64,
        format: StftFormat::Magnitude,
        normalization: Normalization::LogZScore,
    }
}

/// Tiny model on the desk grid with `batch` tube matrices.
pub fn desk_model(batch: usize) -> (MaeModel<f32>, TubeGrid, Vec<NdArray<f32>>) {
    let samples: Vec<WaterfallPlot> = (0..batch as u64).map(|s| waterfall(12, 2000, s)).collect();
    let tube = [2, 8, 16];
    let (grid, tubes) = prepare_tubes(&samples, &desk_stft(), tube).expect("desk tubes");
    let model = MaeModel::new(ModelConfig::tiny(tube, 1, grid.len()), 0).expect("tiny model");
    (model, grid, tubes)
}
