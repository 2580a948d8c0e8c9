use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::presets::ClassPreset;
use super::synth::{synth_waterfall, CouplingProfile, SynthConfig};
use super::WaterfallPlot;
use crate::error::{ensure, Result};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Seeds are kept as decimal strings in the manifest so the full u64 range
/// survives the text format.
mod seed_str {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub preset: ClassPreset,
    pub counts: Vec<usize>,
    /// Fraction of each class assigned to the training split.
    pub train_ratio: f64,
    #[serde(with = "seed_str")]
    pub seed: u64,
    pub amplitude_scale: f64,
    pub synth: SynthConfig,
}

impl DatasetConfig {
    pub fn benchmark(per_class: usize, seed: u64) -> Self {
        Self {
            preset: ClassPreset::Benchmark,
            counts: vec![per_class; ClassPreset::Benchmark.templates().len()],
            train_ratio: 0.8,
            seed,
            amplitude_scale: 1.0,
            synth: SynthConfig::default(),
        }
    }

    pub fn field(seed: u64) -> Self {
        Self {
            preset: ClassPreset::Field,
            counts: ClassPreset::field_counts(),
            ..Self::benchmark(0, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        let classes = self.preset.templates().len();
        ensure!(
            self.counts.len() == classes,
            Contract,
            "{} counts given for {classes} classes",
            self.counts.len()
        );
        ensure!(
            self.counts.iter().all(|&n| n >= 1),
            Contract,
            "every class needs at least one sample"
        );
        ensure!(
            self.train_ratio > 0.0 && self.train_ratio < 1.0,
            Contract,
            "split ratio {} outside (0, 1)",
            self.train_ratio
        );
        ensure!(self.amplitude_scale >= 0.0, Contract, "negative amplitude scale");
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub index: usize,
    pub label: usize,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub class_names: Vec<String>,
    pub counts: Vec<usize>,
    pub config: DatasetConfig,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Sample indices belonging to `split`, in manifest order.
    pub fn indices(&self, split: Split) -> Vec<usize> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.split == split)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.num_classes();
        ensure!(self.counts.len() == k, Data, "manifest counts/classes mismatch");
        ensure!(
            self.counts.iter().sum::<usize>() == self.entries.len(),
            Data,
            "manifest counts sum to {} but list {} entries",
            self.counts.iter().sum::<usize>(),
            self.entries.len()
        );
        let mut seen = std::collections::HashSet::new();
        for e in &self.entries {
            ensure!(e.label < k, Data, "{}: label {} ≥ {k} classes", e.file, e.label);
            ensure!(seen.insert(&e.file), Data, "{} listed twice", e.file);
        }
        Ok(())
    }
}

pub(crate) fn sample_file_name(index: usize) -> String {
    format!("sample_{index:05}.wfp")
}

/// Per class, the train count used for an `n`-sample class.
fn train_count(n: usize, ratio: f64) -> Result<usize> {
    ensure!(n >= 2, Data, "cannot split a class with {n} sample(s) into train and test");
    Ok(((n as f64 * ratio).round() as usize).clamp(1, n - 1))
}

/// Generates every sample of `config`. Samples are class-major; sample `i`
/// depends only on the global seed and `i`.
pub fn synth_dataset(config: &DatasetConfig) -> Result<(DatasetManifest, Vec<WaterfallPlot>)> {
    config.validate()?;
    let templates = config.preset.templates();
    let mut entries = Vec::new();
    let mut samples = Vec::new();
    let mut index = 0usize;
    for (label, (&n, tpl)) in config.counts.iter().zip(templates).enumerate() {
        let n_train = train_count(n, config.train_ratio)?;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut seed::rng_for(config.seed, &[u64::MAX, label as u64]));
        let mut is_train = vec![false; n];
        for &j in &order[..n_train] {
            is_train[j] = true;
        }
        for &train in &is_train {
            let mut rng = seed::rng_for(config.seed, &[index as u64]);
            let coupling = CouplingProfile::random_walk(config.synth.channels, &mut rng);
            let events: Vec<_> = tpl
                .instantiate(label, &config.synth, config.amplitude_scale, &mut rng)
                .into_iter()
                .collect();
            let w = synth_waterfall(
                &events,
                &coupling,
                &config.synth,
                seed::derive_seed(config.seed, &[index as u64, 1]),
                Some(label),
            )?;
            samples.push(w);
            entries.push(ManifestEntry {
                file: sample_file_name(index),
                index,
                label,
                split: if train { Split::Train } else { Split::Test },
            });
            index += 1;
        }
    }
    let manifest = DatasetManifest {
        class_names: config.preset.class_names(),
        counts: config.counts.clone(),
        config: config.clone(),
        entries,
    };
    Ok((manifest, samples))
}
