use rand::seq::SliceRandom;

use crate::dasgen::WaterfallPlot;
use crate::error::{ensure, Error, Result};
use crate::model::MaeModel;
use crate::numerics::{AdamW, AdamWConfig, LrSchedule, NdArray, ParamId, ParamStore, Tape, Var};
use crate::seed;
use crate::stft::{spectrogram, StftConfig};
use crate::tubes::{partition_tubes, MaskSpec, TubeGrid};

/// Linear map from pooled representations (width D_e) to M class logits.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierHead {
    /// `D_e × M`.
    pub weight: NdArray<f32>,
    /// `M`.
    pub bias: NdArray<f32>,
}

impl ClassifierHead {
    pub fn zeros(width: usize, classes: usize) -> Self {
        Self {
            weight: NdArray::zeros(&[width, classes]),
            bias: NdArray::zeros(&[classes]),
        }
    }

    pub fn classes(&self) -> usize {
        self.bias.len()
    }

    pub fn logits(&self, features: &NdArray<f32>) -> Result<NdArray<f32>> {
        let mut z = crate::numerics::matmul(features, &self.weight)?;
        let m = self.classes();
        for row in z.data_mut().chunks_mut(m) {
            row.iter_mut().zip(self.bias.data()).for_each(|(a, &b)| *a += b);
        }
        Ok(z)
    }

    /// Arg-max class per row; ties go to the lowest index.
    pub fn predict(&self, features: &NdArray<f32>) -> Result<Vec<usize>> {
        let z = self.logits(features)?;
        Ok((0..z.rows()).map(|i| argmax(z.row(i))).collect())
    }
}

pub fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: LrSchedule,
    pub optim: AdamWConfig,
    pub seed: u64,
}

impl ClassifierConfig {
    /// Linear probing: 100 epochs, peak 1e-2 after 5 warmup epochs.
    pub fn probe_preset(seed: u64) -> Self {
        Self {
            epochs: 100,
            batch_size: 64,
            schedule: LrSchedule {
                peak_lr: 1e-2,
                floor_lr: 0.0,
                warmup_epochs: 5,
                total_epochs: 100,
            },
            optim: AdamWConfig::default(),
            seed,
        }
    }

    /// Fine-tuning: 50 epochs, peak 1e-5 after 4 warmup epochs, decay 0.05.
    pub fn finetune_preset(seed: u64) -> Self {
        Self {
            epochs: 50,
            batch_size: 64,
            schedule: LrSchedule::finetune_preset(),
            optim: AdamWConfig {
                weight_decay: 0.05,
                ..AdamWConfig::default()
            },
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.epochs >= 1 && self.batch_size >= 1, Contract, "epochs and batch size must be positive");
        self.schedule.validate()?;
        ensure!(
            self.epochs <= self.schedule.total_epochs,
            Contract,
            "{} epochs exceed the {}-epoch schedule",
            self.epochs,
            self.schedule.total_epochs
        );
        Ok(())
    }
}

/// Mean-pooled encoder outputs of all tubes, no masking, as a tape node
/// (`B × D_e`).
pub fn pool_tape(model: &MaeModel<f32>, t: &mut Tape<'_, f32>, tubes: &[&NdArray<f32>]) -> Result<Var> {
    let n = model.config.tokens;
    let masks: Vec<MaskSpec> = tubes.iter().map(|_| MaskSpec::none(n)).collect();
    let (z, _) = model.encode_visible(t, tubes, &masks)?;
    let mut pooled = Vec::with_capacity(tubes.len());
    for i in 0..tubes.len() {
        let rows: Vec<usize> = (i * n..(i + 1) * n).collect();
        let zi = t.gather_rows(z, &rows)?;
        pooled.push(t.mean_rows(zi)?);
    }
    if pooled.len() == 1 {
        Ok(pooled[0])
    } else {
        t.concat_rows(&pooled)
    }
}

/// Pooled representations of many samples (`n × D_e`).
pub fn pooled_features(model: &MaeModel<f32>, tubes: &[NdArray<f32>]) -> Result<NdArray<f32>> {
    ensure!(!tubes.is_empty(), Contract, "no samples to pool");
    let d = model.config.enc_dim;
    let mut out = Vec::with_capacity(tubes.len() * d);
    for chunk in tubes.chunks(32) {
        let refs: Vec<&NdArray<f32>> = chunk.iter().collect();
        let mut t = Tape::new(&model.store);
        let p = pool_tape(model, &mut t, &refs)?;
        out.extend_from_slice(t.value(p).data());
    }
    NdArray::from_vec(&[tubes.len(), d], out)
}

/// STFT, all-tube partition, encoding and token-axis mean of one plot.
pub fn pool_representation(x: &WaterfallPlot, model: &MaeModel<f32>, stft: &StftConfig, grid: &TubeGrid) -> Result<Vec<f32>> {
    let tubes = partition_tubes(&spectrogram(x, stft)?, grid)?;
    Ok(pooled_features(model, &[tubes])?.into_vec())
}

pub fn predict(x: &WaterfallPlot, model: &MaeModel<f32>, head: &ClassifierHead, stft: &StftConfig, grid: &TubeGrid) -> Result<usize> {
    let f = pool_representation(x, model, stft, grid)?;
    let f = NdArray::from_vec(&[1, f.len()], f)?;
    Ok(head.predict(&f)?[0])
}

fn check_labels(labels: &[usize], classes: usize) -> Result<()> {
    ensure!(!labels.is_empty(), Contract, "empty training set");
    let mut seen = vec![false; classes];
    for &l in labels {
        ensure!(l < classes, Contract, "label {l} out of {classes} classes");
        seen[l] = true;
    }
    if let Some(k) = seen.iter().position(|s| !s) {
        return Err(Error::Data(format!("class {k} has no training samples")));
    }
    Ok(())
}

struct HeadParams {
    w: ParamId,
    b: ParamId,
}

fn add_head(store: &mut ParamStore<f32>, init: &ClassifierHead) -> Result<HeadParams> {
    Ok(HeadParams {
        w: store.add("head.w", init.weight.clone())?,
        b: store.add("head.b", init.bias.clone())?,
    })
}

fn head_logits(t: &mut Tape<'_, f32>, x: Var, h: &HeadParams) -> Result<Var> {
    let w = t.param(h.w);
    let b = t.param(h.b);
    let z = t.matmul(x, w)?;
    t.add_row(z, b)
}

fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng_for(seed, &[epoch as u64, 7]));
    order
}

/// Cross-entropy training of a zero-initialized head on fixed features.
pub fn train_head(features: &NdArray<f32>, labels: &[usize], classes: usize, cfg: &ClassifierConfig) -> Result<ClassifierHead> {
    cfg.validate()?;
    check_labels(labels, classes)?;
    ensure!(
        features.rank() == 2 && features.rows() == labels.len(),
        Contract,
        "{:?} features for {} labels",
        features.shape(),
        labels.len()
    );
    let d = features.cols();
    let mut store = ParamStore::new();
    let h = add_head(&mut store, &ClassifierHead::zeros(d, classes))?;
    let mut opt = AdamW::new(&store, cfg.optim);
    for epoch in 1..=cfg.epochs {
        let lr = cfg.schedule.lr(epoch)?;
        for batch in epoch_order(labels.len(), cfg.seed, epoch).chunks(cfg.batch_size) {
            let mut rows = Vec::with_capacity(batch.len() * d);
            for &i in batch {
                rows.extend_from_slice(features.row(i));
            }
            let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let grads = {
                let mut t = Tape::new(&store);
                let x = t.constant(NdArray::from_vec(&[batch.len(), d], rows)?);
                let z = head_logits(&mut t, x, &h)?;
                let loss = t.cross_entropy(z, &y)?;
                ensure!(t.value(loss).item().is_finite(), Numeric, "non-finite probe loss at epoch {epoch}");
                t.backward(loss)?
            };
            store.zero_grad();
            store.accumulate(&grads, 1.0);
            opt.step(&mut store, lr)?;
        }
    }
    Ok(ClassifierHead {
        weight: store.value(h.w).clone(),
        bias: store.value(h.b).clone(),
    })
}

/// Per-feature standardization computed on the training features, folded
/// into the head afterwards so the result is a plain linear map.
fn standardizer(features: &NdArray<f32>) -> (Vec<f64>, Vec<f64>) {
    let (n, d) = (features.rows(), features.cols());
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, &v) in mean.iter_mut().zip(features.row(i)) {
            *m += v as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; d];
    for i in 0..n {
        for ((s, &v), m) in var.iter_mut().zip(features.row(i)).zip(&mean) {
            *s += (v as f64 - m).powi(2);
        }
    }
    let inv_std = var.iter().map(|s| 1.0 / (s / n as f64 + 1e-6).sqrt()).collect();
    (mean, inv_std)
}

/// Trains a head on frozen pooled representations of `tubes`.
pub fn train_linear_probe(
    model: &MaeModel<f32>,
    tubes: &[NdArray<f32>],
    labels: &[usize],
    classes: usize,
    cfg: &ClassifierConfig,
) -> Result<ClassifierHead> {
    check_labels(labels, classes)?;
    let features = pooled_features(model, tubes)?;
    probe_on_features(&features, labels, classes, cfg)
}

/// Probe on precomputed features (standardized, then folded back).
pub fn probe_on_features(features: &NdArray<f32>, labels: &[usize], classes: usize, cfg: &ClassifierConfig) -> Result<ClassifierHead> {
    let (mean, inv_std) = standardizer(features);
    let d = features.cols();
    let scaled: Vec<f32> = features
        .data()
        .chunks(d)
        .flat_map(|row| {
            row.iter()
                .zip(mean.iter().zip(&inv_std))
                .map(|(&v, (m, s))| ((v as f64 - m) * s) as f32)
                .collect::<Vec<_>>()
        })
        .collect();
    let head = train_head(&NdArray::from_vec(features.shape(), scaled)?, labels, classes, cfg)?;
    let mut w = head.weight.clone();
    let mut b: Vec<f64> = head.bias.data().iter().map(|&v| v as f64).collect();
    for (j, (m, s)) in mean.iter().zip(&inv_std).enumerate() {
        for (c, bc) in b.iter_mut().enumerate() {
            let wjc = head.weight.data()[j * classes + c] as f64;
            w.data_mut()[j * classes + c] = (wjc * s) as f32;
            *bc -= m * s * wjc;
        }
    }
    Ok(ClassifierHead {
        weight: w,
        bias: NdArray::from_vec(&[classes], b.into_iter().map(|v| v as f32).collect())?,
    })
}

/// Joint training of the encoder and `head`. Returns the adapted model (its
/// store also holds `head.*`) and the trained head.
pub fn fine_tune(
    model: &MaeModel<f32>,
    head: &ClassifierHead,
    tubes: &[NdArray<f32>],
    labels: &[usize],
    classes: usize,
    cfg: &ClassifierConfig,
) -> Result<(MaeModel<f32>, ClassifierHead)> {
    cfg.validate()?;
    check_labels(labels, classes)?;
    ensure!(tubes.len() == labels.len(), Contract, "{} samples for {} labels", tubes.len(), labels.len());
    ensure!(
        head.weight.shape() == [model.config.enc_dim, classes] && head.classes() == classes,
        Contract,
        "head {:?} does not map width {} to {classes} classes",
        head.weight.shape(),
        model.config.enc_dim
    );
    let mut tuned = model.clone();
    let h = add_head(&mut tuned.store, head)?;
    let mut ids = tuned.encoder_ids();
    ids.extend([h.w, h.b]);
    let mut opt = AdamW::new(&tuned.store, cfg.optim);
    for epoch in 1..=cfg.epochs {
        let lr = cfg.schedule.lr(epoch)?;
        for (step, batch) in epoch_order(labels.len(), cfg.seed, epoch).chunks(cfg.batch_size).enumerate() {
            let xs: Vec<&NdArray<f32>> = batch.iter().map(|&i| &tubes[i]).collect();
            let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let grads = {
                let mut t = Tape::new(&tuned.store);
                let pooled = pool_tape(&tuned, &mut t, &xs)?;
                let z = head_logits(&mut t, pooled, &h)?;
                let loss = t.cross_entropy(z, &y)?;
                if !t.value(loss).item().is_finite() {
                    return Err(Error::Numeric(format!("non-finite fine-tune loss at epoch {epoch}, step {step}")));
                }
                t.backward(loss)?
            };
            tuned.store.zero_grad();
            tuned.store.accumulate(&grads, 1.0);
            opt.step_only(&mut tuned.store, lr, &ids)?;
        }
    }
    let head = ClassifierHead {
        weight: tuned.store.value(h.w).clone(),
        bias: tuned.store.value(h.b).clone(),
    };
    Ok((tuned, head))
}

/// `k` indices per class drawn without replacement from `candidates`.
pub fn few_shot_subset(labels: &[usize], candidates: &[usize], k: usize, classes: usize, seed: u64) -> Result<Vec<usize>> {
    ensure!(k >= 1, Contract, "few-shot subset needs k ≥ 1");
    let mut out = Vec::with_capacity(k * classes);
    for c in 0..classes {
        let mut pool: Vec<usize> = candidates.iter().copied().filter(|&i| labels[i] == c).collect();
        if pool.len() < k {
            return Err(Error::Data(format!(
                "class {c} has {} training samples, fewer than k = {k}",
                pool.len()
            )));
        }
        pool.shuffle(&mut seed::rng_for(seed, &[c as u64]));
        pool.truncate(k);
        pool.sort_unstable();
        out.extend(pool);
    }
    Ok(out)
}
