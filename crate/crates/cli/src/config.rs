//! `key = value` run configuration with dotted keys.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use dasmae_core::dasgen::{ClassPreset, DatasetConfig, DatasetManifest, SynthConfig};
use dasmae_core::eval::{ClassifierConfig, ExperimentConfig, Stage1Config, TsneConfig};
use dasmae_core::model::ModelConfig;
use dasmae_core::numerics::{AdamWConfig, LrSchedule};
use dasmae_core::pipeline::{Stage, TargetNorm, TrainConfig};
use dasmae_core::stft::{Normalization, StftConfig, StftFormat};
use dasmae_core::tubes::MaskStrategy;
use dasmae_core::{Error, Result};

/// Every accepted key with its default.
const KEYS: &[(&str, &str)] = &[
    ("data.classes", "benchmark"),
    ("data.counts", "2500"),
    ("data.channels", "12"),
    ("data.samples", "10000"),
    ("data.sample_rate", "200"),
    ("data.split", "0.8"),
    ("data.seed", "0"),
    ("stft.window", "104"),
    ("stft.hop", "104"),
    ("stft.nfft", "192"),
    ("stft.format", "magnitude"),
    ("stft.normalize", "log-z-score"),
    ("tubes.cp", "2"),
    ("tubes.tp", "16"),
    ("tubes.fp", "16"),
    ("tubes.ratio", "0.9"),
    ("tubes.strategy", "random"),
    ("model.de", "384"),
    ("model.le", "12"),
    ("model.he", "6"),
    ("model.dd", "192"),
    ("model.ld", "4"),
    ("model.hd", "3"),
    ("model.mlp_ratio", "4"),
    ("train.batch", "64"),
    ("train.epochs", "500"),
    ("train.lr", "1e-3"),
    ("train.warmup", "40"),
    ("train.wd", "0.05"),
    ("train.seed", "0"),
    ("train.stage", "stage2-waterfall"),
    ("train.normalize_targets", "per-tube"),
    ("stage1.samples", "1000"),
    ("stage1.epochs", "100"),
    ("eval.k_per_class", "15"),
    ("eval.seeds", "1,2,3"),
    ("eval.probe_epochs", "100"),
    ("eval.probe_batch", "64"),
    ("eval.probe_lr", "1e-2"),
    ("eval.probe_warmup", "5"),
    ("eval.finetune_epochs", "50"),
    ("eval.finetune_batch", "64"),
    ("eval.finetune_lr", "1e-5"),
    ("eval.finetune_warmup", "4"),
    ("eval.finetune_wd", "0.05"),
    ("eval.tsne.perplexity", "40"),
    ("eval.tsne.learning_rate", "2000"),
    ("eval.tsne.iterations", "500"),
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    values: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            values: KEYS.iter().map(|(_, v)| v.to_string()).collect(),
        }
    }
}

fn slot(key: &str) -> Result<usize> {
    KEYS.iter()
        .position(|(k, _)| *k == key)
        .ok_or_else(|| Error::Contract(format!("unknown config key {key:?}")))
}

fn split_assignment(s: &str) -> Result<(&str, &str)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Contract(format!("expected key=value, got {s:?}")))?;
    Ok((k.trim(), v.trim()))
}

impl RunConfig {
    /// Defaults, then the file at `path`, then each `key=value` override.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).map_err(|source| Error::Io {
                path: p.to_path_buf(),
                source,
            })?;
            cfg.merge_text(&text)
                .map_err(|e| Error::Contract(format!("{}: {e}", p.display())))?;
        }
        for o in overrides {
            let (k, v) = split_assignment(o)?;
            cfg.set(k, v)?;
        }
        cfg.resolve()?;
        Ok(cfg)
    }

    pub fn merge_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = split_assignment(line).map_err(|e| Error::Contract(format!("line {}: {e}", n + 1)))?;
            self.set(k, v).map_err(|e| Error::Contract(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let i = slot(key)?;
        self.values[i] = value.to_string();
        Ok(())
    }

    pub fn get(&self, key: &str) -> &str {
        &self.values[slot(key).expect("key is in the table")]
    }

    fn parse<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.get(key);
        raw.parse()
            .map_err(|_| Error::Contract(format!("{key} = {raw:?} is not a valid value")))
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>> {
        let raw = self.get(key);
        raw.split(',')
            .map(|s| s.trim().parse().map_err(|_| Error::Contract(format!("{key} = {raw:?} is not a valid list"))))
            .collect()
    }

    /// Fully resolved `key = value` listing, loadable with `--config`.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        for ((k, _), v) in KEYS.iter().zip(&self.values) {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// Replaces the data keys with the settings a stored dataset was made with.
    pub fn adopt_manifest(&mut self, m: &DatasetManifest) -> Result<()> {
        let c = &m.config;
        let counts = if c.counts.windows(2).all(|w| w[0] == w[1]) && !c.counts.is_empty() {
            c.counts[0].to_string()
        } else {
            c.counts.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(",")
        };
        self.set("data.classes", &c.preset.to_string())?;
        self.set("data.counts", &counts)?;
        self.set("data.channels", &c.synth.channels.to_string())?;
        self.set("data.samples", &c.synth.samples.to_string())?;
        self.set("data.sample_rate", &c.synth.sample_rate.to_string())?;
        self.set("data.split", &c.train_ratio.to_string())?;
        self.set("data.seed", &c.seed.to_string())
    }

    pub fn data(&self) -> Result<DatasetConfig> {
        let preset: ClassPreset = self.parse("data.classes")?;
        let classes = preset.templates().len();
        let mut counts: Vec<usize> = self.list("data.counts")?;
        if counts.len() == 1 {
            counts = vec![counts[0]; classes];
        }
        let cfg = DatasetConfig {
            preset,
            counts,
            train_ratio: self.parse("data.split")?,
            seed: self.parse("data.seed")?,
            amplitude_scale: 1.0,
            synth: SynthConfig {
                channels: self.parse("data.channels")?,
                samples: self.parse("data.samples")?,
                sample_rate: self.parse("data.sample_rate")?,
                ..SynthConfig::default()
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn stft(&self) -> Result<StftConfig> {
        let cfg = StftConfig {
            window: self.parse("stft.window")?,
            hop: self.parse("stft.hop")?,
            nfft: self.parse("stft.nfft")?,
            format: self.parse::<StftFormat>("stft.format")?,
            normalization: self.parse::<Normalization>("stft.normalize")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn tube(&self) -> Result<[usize; 3]> {
        Ok([self.parse("tubes.cp")?, self.parse("tubes.tp")?, self.parse("tubes.fp")?])
    }

    fn schedule(&self, lr: &str, warmup: &str, epochs: usize) -> Result<LrSchedule> {
        LrSchedule::new(self.parse(lr)?, 0.0, self.parse(warmup)?, epochs)
    }

    pub fn train(&self) -> Result<TrainConfig> {
        let ratio: f64 = self.parse("tubes.ratio")?;
        if !(0.0..1.0).contains(&ratio) {
            return Err(Error::Contract(format!("tubes.ratio = {ratio} outside [0, 1)")));
        }
        let epochs = self.parse("train.epochs")?;
        let cfg = TrainConfig {
            batch_size: self.parse("train.batch")?,
            epochs,
            schedule: self.schedule("train.lr", "train.warmup", epochs)?,
            optim: AdamWConfig {
                weight_decay: self.parse("train.wd")?,
                ..AdamWConfig::default()
            },
            mask_ratio: ratio,
            strategy: self.parse::<MaskStrategy>("tubes.strategy")?,
            seed: self.parse("train.seed")?,
            target_norm: self.parse::<TargetNorm>("train.normalize_targets")?,
            stage: self.parse::<Stage>("train.stage")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn probe(&self, seed: u64) -> Result<ClassifierConfig> {
        let epochs = self.parse("eval.probe_epochs")?;
        let cfg = ClassifierConfig {
            epochs,
            batch_size: self.parse("eval.probe_batch")?,
            schedule: self.schedule("eval.probe_lr", "eval.probe_warmup", epochs)?,
            ..ClassifierConfig::probe_preset(seed)
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// `None` when `eval.finetune_epochs` is 0.
    pub fn finetune(&self, seed: u64) -> Result<Option<ClassifierConfig>> {
        let epochs: usize = self.parse("eval.finetune_epochs")?;
        if epochs == 0 {
            return Ok(None);
        }
        let cfg = ClassifierConfig {
            epochs,
            batch_size: self.parse("eval.finetune_batch")?,
            schedule: self.schedule("eval.finetune_lr", "eval.finetune_warmup", epochs)?,
            optim: AdamWConfig {
                weight_decay: self.parse("eval.finetune_wd")?,
                ..AdamWConfig::default()
            },
            seed,
        };
        cfg.validate()?;
        Ok(Some(cfg))
    }

    pub fn stage1(&self) -> Result<Stage1Config> {
        let s = Stage1Config {
            samples: self.parse("stage1.samples")?,
            epochs: self.parse("stage1.epochs")?,
        };
        if s.samples == 0 || s.epochs < 2 {
            return Err(Error::Contract("stage1 needs at least one sample and two epochs".into()));
        }
        Ok(s)
    }

    pub fn k_per_class(&self) -> Result<usize> {
        self.parse("eval.k_per_class")
    }

    pub fn seeds(&self) -> Result<Vec<u64>> {
        let s: Vec<u64> = self.list("eval.seeds")?;
        Ok(s)
    }

    pub fn tsne(&self, seed: u64) -> Result<TsneConfig> {
        Ok(TsneConfig {
            perplexity: self.parse("eval.tsne.perplexity")?,
            learning_rate: self.parse("eval.tsne.learning_rate")?,
            iterations: self.parse("eval.tsne.iterations")?,
            ..TsneConfig::full_scale(seed)
        })
    }

    /// Everything an experiment needs, validated.
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let stft = self.stft()?;
        let tube = self.tube()?;
        let pretrain = self.train()?;
        let seed = pretrain.seed;
        let model = ModelConfig {
            enc_dim: self.parse("model.de")?,
            enc_depth: self.parse("model.le")?,
            enc_heads: self.parse("model.he")?,
            dec_dim: self.parse("model.dd")?,
            dec_depth: self.parse("model.ld")?,
            dec_heads: self.parse("model.hd")?,
            mlp_ratio: self.parse("model.mlp_ratio")?,
            ..ModelConfig::tiny(tube, stft.format.depth(), 1)
        };
        model.validate()?;
        self.stage1()?;
        self.seeds()?;
        self.k_per_class()?;
        self.tsne(seed)?;
        Ok(ExperimentConfig {
            data: self.data()?,
            stft,
            tube,
            model,
            pretrain,
            probe: self.probe(seed)?,
            finetune: self.finetune(seed)?,
            stage1: None,
        })
    }
}
