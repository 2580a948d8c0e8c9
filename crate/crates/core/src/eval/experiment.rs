//! End-to-end desk experiment: synthesize, transform, pre-train, evaluate.

use std::path::Path;

use crate::dasgen::{synth_dataset, DatasetConfig, DatasetManifest, Split, WaterfallPlot};
use crate::error::{ensure, Result};
use crate::model::{MaeModel, ModelConfig};
use crate::numerics::{LrSchedule, NdArray};
use crate::pipeline::{
    decode_checkpoint, encode_checkpoint, load_into, pretrain, tubes_of, video_blobs, CheckpointMeta,
    LoadReport, Stage, Strictness, TrainConfig, TrainReport,
};
use crate::seed;
use crate::stft::{spectrogram, Normalization, SpectroTensor, StftConfig, StftFormat};
use crate::tubes::TubeGrid;

use super::classifier::{fine_tune, pooled_features, probe_on_features, ClassifierConfig, ClassifierHead};
use super::metrics::error_rate;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stage1Config {
    pub samples: usize,
    pub epochs: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub data: DatasetConfig,
    pub stft: StftConfig,
    pub tube: [usize; 3],
    /// Widths and depths; tube, input depth and token count are derived.
    pub model: ModelConfig,
    pub pretrain: TrainConfig,
    pub probe: ClassifierConfig,
    pub finetune: Option<ClassifierConfig>,
    pub stage1: Option<Stage1Config>,
}

impl ExperimentConfig {
    /// Six classes × 120 samples of 12 × 2000 at 200 Hz, 64-point frames,
    /// (2, 8, 16) tubes, tiny model, 100 pre-training epochs at ρ = 0.9 in
    /// batches of 16.
    pub fn desk(seed: u64) -> Self {
        let tube = [2, 8, 16];
        Self {
            data: DatasetConfig::benchmark(120, seed),
            stft: StftConfig {
                window: 64,
                hop: 64,
                nfft: 64,
                format: StftFormat::Magnitude,
                normalization: Normalization::LogZScore,
            },
            tube,
            model: ModelConfig::tiny(tube, 1, 1),
            pretrain: TrainConfig {
                batch_size: 16,
                epochs: 100,
                schedule: LrSchedule {
                    peak_lr: 1e-3,
                    floor_lr: 0.0,
                    warmup_epochs: 10,
                    total_epochs: 100,
                },
                ..TrainConfig::pretrain_preset(seed)
            },
            probe: ClassifierConfig::probe_preset(seed),
            finetune: None,
            stage1: None,
        }
    }

    /// Shortened desk run for sweep cells: 40 pre-training epochs, then a
    /// 5-epoch fine-tune at the fine-tuning peak rate, started from the probe.
    pub fn desk_ablation(seed: u64) -> Self {
        Self {
            finetune: Some(ClassifierConfig {
                epochs: 5,
                batch_size: 16,
                schedule: LrSchedule {
                    peak_lr: 1e-5,
                    floor_lr: 0.0,
                    warmup_epochs: 1,
                    total_epochs: 5,
                },
                ..ClassifierConfig::finetune_preset(seed)
            }),
            ..Self::desk(seed).with_pretrain_epochs(40)
        }
    }

    /// Re-keys every random stream on `seed`.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.data.seed = seed;
        c.pretrain.seed = seed;
        c.probe.seed = seed;
        if let Some(f) = c.finetune.as_mut() {
            f.seed = seed;
        }
        c
    }

    pub fn seed(&self) -> u64 {
        self.pretrain.seed
    }

    /// Sets the pre-training length and stretches the schedule to match.
    pub fn with_pretrain_epochs(mut self, epochs: usize) -> Self {
        let s = &mut self.pretrain.schedule;
        s.warmup_epochs = (s.warmup_epochs * epochs / s.total_epochs.max(1)).min(epochs - 1);
        s.total_epochs = epochs;
        self.pretrain.epochs = epochs;
        self
    }
}

/// Dataset materialized as tube matrices, with its split.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub manifest: DatasetManifest,
    pub grid: TubeGrid,
    pub depth: usize,
    pub tubes: Vec<NdArray<f32>>,
    pub labels: Vec<usize>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Prepared {
    pub fn classes(&self) -> usize {
        self.manifest.num_classes()
    }

    pub fn select(&self, idx: &[usize]) -> (Vec<NdArray<f32>>, Vec<usize>) {
        (idx.iter().map(|&i| self.tubes[i].clone()).collect(), idx.iter().map(|&i| self.labels[i]).collect())
    }
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let (manifest, samples) = synth_dataset(&cfg.data)?;
    prepare_samples(manifest, &samples, &cfg.stft, cfg.tube)
}

/// Transforms and partitions an existing dataset.
pub fn prepare_samples(manifest: DatasetManifest, samples: &[WaterfallPlot], stft: &StftConfig, tube: [usize; 3]) -> Result<Prepared> {
    let spectra: Vec<SpectroTensor> = samples.iter().map(|w| spectrogram(w, stft)).collect::<Result<_>>()?;
    prepare_spectra(manifest, &spectra, tube)
}

/// Partitions already-transformed samples, labelled by `manifest`.
pub fn prepare_spectra(manifest: DatasetManifest, spectra: &[SpectroTensor], tube: [usize; 3]) -> Result<Prepared> {
    ensure!(
        spectra.len() == manifest.entries.len(),
        Data,
        "{} spectrograms for {} manifest entries",
        spectra.len(),
        manifest.entries.len()
    );
    let (grid, tubes) = tubes_of(spectra, tube)?;
    let labels = manifest.entries.iter().map(|e| e.label).collect();
    Ok(Prepared {
        train: manifest.indices(Split::Train),
        test: manifest.indices(Split::Test),
        depth: spectra[0].depth,
        manifest,
        grid,
        tubes,
        labels,
    })
}

pub fn model_config(cfg: &ExperimentConfig, prep: &Prepared) -> ModelConfig {
    model_config_on(cfg, &prep.grid, prep.depth)
}

pub fn model_config_on(cfg: &ExperimentConfig, grid: &TubeGrid, depth: usize) -> ModelConfig {
    ModelConfig {
        tube: cfg.tube,
        depth_in: depth,
        tokens: grid.len(),
        ..cfg.model.clone()
    }
}

/// Freshly initialized model for the prepared grid.
pub fn init_model(cfg: &ExperimentConfig, prep: &Prepared) -> Result<MaeModel<f32>> {
    init_model_on(cfg, &prep.grid, prep.depth)
}

pub fn init_model_on(cfg: &ExperimentConfig, grid: &TubeGrid, depth: usize) -> Result<MaeModel<f32>> {
    MaeModel::new(model_config_on(cfg, grid, depth), seed::derive_seed(cfg.seed(), &[2]))
}

/// Stage-1 masked reconstruction on video-like tensors over the same grid,
/// then transfer through the checkpoint format into a fresh model.
pub fn stage1_pretrain(cfg: &ExperimentConfig, prep: &Prepared, s1: &Stage1Config) -> Result<(MaeModel<f32>, LoadReport)> {
    let dims = [
        cfg.data.synth.channels,
        cfg.stft.frames(cfg.data.synth.samples),
        cfg.stft.bins(),
    ];
    let videos = video_blobs(s1.samples, dims, cfg.stft.format, seed::derive_seed(cfg.seed(), &[5]))?;
    let (grid, tubes) = tubes_of(&videos, cfg.tube)?;
    let mut model = init_model(cfg, prep)?;
    let stage1_cfg = TrainConfig {
        stage: Stage::Stage1Video,
        ..cfg.clone().with_pretrain_epochs(s1.epochs).pretrain
    };
    pretrain(&tubes, &grid, &mut model, &stage1_cfg)?;
    let meta = CheckpointMeta::new(Stage::Stage1Video, s1.epochs, cfg.seed(), model.config.clone());
    let ckpt = decode_checkpoint(&encode_checkpoint(&model.store, &meta)?, Path::new("<stage1>"))?;
    let mut fresh = init_model(cfg, prep)?;
    let report = load_into(&ckpt, &mut fresh.store, Strictness::Permissive)?;
    Ok((fresh, report))
}

/// Stage-2 pre-training on the training split, after stage 1 if configured.
pub fn pretrain_encoder(cfg: &ExperimentConfig, prep: &Prepared) -> Result<(MaeModel<f32>, TrainReport)> {
    let mut model = match &cfg.stage1 {
        Some(s1) => stage1_pretrain(cfg, prep, s1)?.0,
        None => init_model(cfg, prep)?,
    };
    let (train, _) = prep.select(&prep.train);
    let report = pretrain(&train, &prep.grid, &mut model, &cfg.pretrain)?;
    Ok((model, report))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeOutcome {
    pub head: ClassifierHead,
    pub predictions: Vec<usize>,
    pub error_rate: f64,
}

/// Pooled features of every prepared sample under `model`.
pub fn all_features(model: &MaeModel<f32>, prep: &Prepared) -> Result<NdArray<f32>> {
    pooled_features(model, &prep.tubes)
}

fn rows(x: &NdArray<f32>, idx: &[usize]) -> Result<NdArray<f32>> {
    let mut out = Vec::with_capacity(idx.len() * x.cols());
    for &i in idx {
        out.extend_from_slice(x.row(i));
    }
    NdArray::from_vec(&[idx.len(), x.cols()], out)
}

/// Linear probe trained on `train_idx`, scored on the test split.
pub fn probe_eval(features: &NdArray<f32>, prep: &Prepared, train_idx: &[usize], cfg: &ClassifierConfig) -> Result<ProbeOutcome> {
    ensure!(features.rows() == prep.tubes.len(), Contract, "features cover {} of {} samples", features.rows(), prep.tubes.len());
    let labels: Vec<usize> = train_idx.iter().map(|&i| prep.labels[i]).collect();
    let head = probe_on_features(&rows(features, train_idx)?, &labels, prep.classes(), cfg)?;
    let predictions = head.predict(&rows(features, &prep.test)?)?;
    let test_labels: Vec<usize> = prep.test.iter().map(|&i| prep.labels[i]).collect();
    Ok(ProbeOutcome {
        error_rate: error_rate(&predictions, &test_labels)?,
        head,
        predictions,
    })
}

/// Fine-tunes from `head` on the training split; test-split error rate.
pub fn finetune_eval(model: &MaeModel<f32>, head: &ClassifierHead, prep: &Prepared, cfg: &ClassifierConfig) -> Result<f64> {
    let (train, labels) = prep.select(&prep.train);
    let (tuned, head) = fine_tune(model, head, &train, &labels, prep.classes(), cfg)?;
    let (test, test_labels) = prep.select(&prep.test);
    let predictions = head.predict(&pooled_features(&tuned, &test)?)?;
    error_rate(&predictions, &test_labels)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellResult {
    pub probe_er: f64,
    pub finetune_er: Option<f64>,
    pub final_loss: f64,
}

/// Pre-train, probe, and fine-tune (when configured) under one config.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<CellResult> {
    let prep = prepare(cfg)?;
    let (model, report) = pretrain_encoder(cfg, &prep)?;
    let features = all_features(&model, &prep)?;
    let probe = probe_eval(&features, &prep, &prep.train, &cfg.probe)?;
    let finetune_er = match &cfg.finetune {
        Some(ft) => Some(finetune_eval(&model, &probe.head, &prep, ft)?),
        None => None,
    };
    Ok(CellResult {
        probe_er: probe.error_rate,
        finetune_er,
        final_loss: report.curve.last().map_or(f64::NAN, |e| e.loss),
    })
}

/// Error rate of always predicting the most frequent training class.
pub fn majority_error_rate(prep: &Prepared) -> Result<f64> {
    let mut counts = vec![0usize; prep.classes()];
    prep.train.iter().for_each(|&i| counts[prep.labels[i]] += 1);
    let best = (0..counts.len()).max_by_key(|&c| (counts[c], std::cmp::Reverse(c))).unwrap_or(0);
    let test_labels: Vec<usize> = prep.test.iter().map(|&i| prep.labels[i]).collect();
    error_rate(&vec![best; test_labels.len()], &test_labels)
}

pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
