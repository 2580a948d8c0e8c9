use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use dasmae_core::dasgen::{read_dataset, synth_dataset, write_dataset};
use dasmae_core::eval::{
    ablation_sweep, all_features, few_shot_subset, fine_tune, init_model, init_model_on, median, model_config, pca_embed,
    pooled_features, prepare, prepare_samples, prepare_spectra, probe_eval, relative_improvement, to_f64, tsne_embed,
    AblationAxis, EvalReport, ExperimentConfig, Prepared,
};
use dasmae_core::model::MaeModel;
use dasmae_core::numerics::NdArray;
use dasmae_core::pipeline::{
    load_into, pretrain_with, read_checkpoint, read_spectro_cache, save_checkpoint, tubes_of, video_blobs,
    write_loss_curve, write_spectro_cache, CheckpointMeta, SpectroCache, Stage, Strictness,
};
use dasmae_core::Error;

use crate::config::RunConfig;

pub const CACHE_FILE: &str = "spectra.dspc";
pub const CONFIG_ECHO: &str = "config.txt";

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(())
}

fn out_dir(dir: &Path, cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    write(&dir.join(CONFIG_ECHO), cfg.echo())
}

pub fn gen(cfg: &RunConfig, out: &Path) -> Result<()> {
    let data = cfg.data()?;
    let (manifest, samples) = synth_dataset(&data)?;
    write_dataset(&manifest, &samples, out)?;
    out_dir(out, cfg)?;
    println!(
        "wrote {} samples ({} classes) to {}",
        samples.len(),
        manifest.num_classes(),
        out.display()
    );
    Ok(())
}

pub fn preprocess(cfg: &mut RunConfig, data: &Path) -> Result<()> {
    let (manifest, samples) = read_dataset(data)?;
    cfg.adopt_manifest(&manifest)?;
    let stft = cfg.stft()?;
    let cache = SpectroCache::build(&samples, &stft)?;
    write_spectro_cache(&cache, &data.join(CACHE_FILE))?;
    out_dir(data, cfg)?;
    let d = cache.tensors.first().map(|t| t.dims()).unwrap_or_default();
    println!("cached {} spectrograms of shape {:?} in {}", cache.len(), d, data.join(CACHE_FILE).display());
    Ok(())
}

/// Dataset from `--data` (using its spectrogram cache when it matches), or
/// synthesized from the config.
fn load_prepared(cfg: &mut RunConfig, exp: &ExperimentConfig, data: Option<&Path>) -> Result<(ExperimentConfig, Prepared)> {
    let Some(dir) = data else {
        return Ok((exp.clone(), prepare(exp)?));
    };
    let (manifest, samples) = read_dataset(dir)?;
    cfg.adopt_manifest(&manifest)?;
    let exp = cfg.resolve()?;
    let cache_path = dir.join(CACHE_FILE);
    if cache_path.exists() {
        let cache = read_spectro_cache(&cache_path)?;
        if cache.stft == exp.stft && cache.len() == samples.len() {
            return Ok((exp.clone(), prepare_spectra(manifest, &cache.tensors, exp.tube)?));
        }
        eprintln!("note: {} was built with other STFT settings; recomputing", cache_path.display());
    }
    let prep = prepare_samples(manifest, &samples, &exp.stft, exp.tube)?;
    Ok((exp, prep))
}

/// Encoder from `checkpoint`, or a fresh initialization when none is given.
fn load_model(exp: &ExperimentConfig, prep: &Prepared, checkpoint: Option<&Path>) -> Result<MaeModel<f32>> {
    let Some(path) = checkpoint else {
        return Ok(init_model(exp, prep)?);
    };
    let ckpt = read_checkpoint(path)?;
    let expected = model_config(exp, prep);
    if ckpt.meta.model.tokens != expected.tokens || ckpt.meta.model.tube != expected.tube {
        return Err(Error::Transfer(format!(
            "{} was trained on {} tubes of {:?}, the data gives {} tubes of {:?}",
            path.display(),
            ckpt.meta.model.tokens,
            ckpt.meta.model.tube,
            expected.tokens,
            expected.tube
        ))
        .into());
    }
    let mut model = MaeModel::new(ckpt.meta.model.clone(), exp.seed())?;
    load_into(&ckpt, &mut model.store, Strictness::Strict).with_context(|| format!("loading {}", path.display()))?;
    Ok(model)
}

pub struct TrainPaths<'a> {
    pub data: Option<&'a Path>,
    pub init: Option<&'a Path>,
    pub out: &'a Path,
}

pub fn pretrain(cfg: &mut RunConfig, paths: TrainPaths<'_>) -> Result<()> {
    let exp = cfg.resolve()?;
    let stage = exp.pretrain.stage;
    let (exp, grid, data) = if stage == Stage::Stage1Video {
        let s1 = cfg.stage1()?;
        let dims = [exp.data.synth.channels, exp.stft.frames(exp.data.synth.samples), exp.stft.bins()];
        let videos = video_blobs(s1.samples, dims, exp.stft.format, exp.seed())?;
        let (grid, tubes) = tubes_of(&videos, exp.tube)?;
        (exp, grid, tubes)
    } else {
        let (exp, prep) = load_prepared(cfg, &exp, paths.data)?;
        let data = if stage == Stage::Scratch { Vec::new() } else { prep.select(&prep.train).0 };
        (exp, prep.grid, data)
    };
    let mut model = init_model_on(&exp, &grid, exp.stft.format.depth())?;
    if let Some(init) = paths.init {
        let ckpt = read_checkpoint(init)?;
        let report = load_into(&ckpt, &mut model.store, Strictness::Permissive)?;
        println!(
            "initialized from {}: {} loaded, {} re-initialized {:?}",
            init.display(),
            report.loaded.len(),
            report.reinitialized.len(),
            report.reinitialized
        );
    }
    let train = &exp.pretrain;
    out_dir(paths.out, cfg)?;
    let epochs = if stage == Stage::Scratch {
        0
    } else {
        let total = train.epochs;
        let report = pretrain_with(&data, &grid, &mut model, train, |e| {
            println!("epoch {:>4}/{total}  loss {:.6}  lr {:.3e}", e.epoch, e.loss, e.lr);
        })?;
        write_loss_curve(&paths.out.join("loss_curve.csv"), &report.curve)?;
        total
    };
    let meta = CheckpointMeta::new(stage, epochs, train.seed, model.config.clone());
    let path = paths.out.join("model.ckpt");
    save_checkpoint(&model.store, &meta, &path)?;
    println!("saved {} ({stage}, {epochs} epochs)", path.display());
    Ok(())
}

pub struct EvalPaths<'a> {
    pub data: Option<&'a Path>,
    pub checkpoint: Option<&'a Path>,
    pub out: &'a Path,
}

fn report(prep: &Prepared, predictions: &[usize], idx: &[usize], cfg: &RunConfig, seed: u64) -> Result<EvalReport> {
    let labels: Vec<usize> = idx.iter().map(|&i| prep.labels[i]).collect();
    Ok(EvalReport::new(predictions, &labels, prep.manifest.class_names.clone(), cfg.echo(), seed)?)
}

pub fn probe(cfg: &mut RunConfig, paths: EvalPaths<'_>) -> Result<()> {
    let exp = cfg.resolve()?;
    let (exp, prep) = load_prepared(cfg, &exp, paths.data)?;
    let model = load_model(&exp, &prep, paths.checkpoint)?;
    let features = all_features(&model, &prep)?;
    let outcome = probe_eval(&features, &prep, &prep.train, &exp.probe)?;
    let rep = report(&prep, &outcome.predictions, &prep.test, cfg, exp.seed())?;
    out_dir(paths.out, cfg)?;
    write(&paths.out.join("metrics.csv"), rep.metrics_csv())?;
    write(&paths.out.join("confusion.csv"), rep.confusion_csv())?;
    println!("linear probe test ER {:.2}% over {} samples", 100.0 * rep.error_rate, prep.test.len());
    Ok(())
}

pub fn finetune(cfg: &mut RunConfig, paths: EvalPaths<'_>) -> Result<()> {
    let exp = cfg.resolve()?;
    let Some(ft) = exp.finetune.clone() else {
        return Err(Error::Contract("eval.finetune_epochs must be positive for finetune".into()).into());
    };
    let (exp, prep) = load_prepared(cfg, &exp, paths.data)?;
    let model = load_model(&exp, &prep, paths.checkpoint)?;
    let features = all_features(&model, &prep)?;
    let probed = probe_eval(&features, &prep, &prep.train, &exp.probe)?;
    let (train, labels) = prep.select(&prep.train);
    let (tuned, head) = fine_tune(&model, &probed.head, &train, &labels, prep.classes(), &ft)?;
    let (test, _) = prep.select(&prep.test);
    let predictions = head.predict(&pooled_features(&tuned, &test)?)?;
    let rep = report(&prep, &predictions, &prep.test, cfg, exp.seed())?;
    out_dir(paths.out, cfg)?;
    let mut metrics = rep.metrics_csv();
    let _ = writeln!(metrics, "probe_error_rate,{}", probed.error_rate);
    write(&paths.out.join("metrics.csv"), metrics)?;
    write(&paths.out.join("confusion.csv"), rep.confusion_csv())?;
    println!(
        "fine-tuned test ER {:.2}% (probe start {:.2}%) over {} samples",
        100.0 * rep.error_rate,
        100.0 * probed.error_rate,
        prep.test.len()
    );
    Ok(())
}

pub fn fewshot(cfg: &mut RunConfig, paths: EvalPaths<'_>) -> Result<()> {
    let exp = cfg.resolve()?;
    let (exp, prep) = load_prepared(cfg, &exp, paths.data)?;
    let k = cfg.k_per_class()?;
    let model = load_model(&exp, &prep, paths.checkpoint)?;
    let features = all_features(&model, &prep)?;
    let mut csv = String::from("seed,k_per_class,labeled,error_rate\n");
    let mut ers = Vec::new();
    let mut labeled = 0;
    for seed in cfg.seeds()? {
        let subset = few_shot_subset(&prep.labels, &prep.train, k, prep.classes(), seed)?;
        labeled = subset.len();
        let er = probe_eval(&features, &prep, &subset, &cfg.probe(seed)?)?.error_rate;
        let _ = writeln!(csv, "{seed},{k},{labeled},{er}");
        ers.push(er);
    }
    let med = median(&ers);
    let _ = writeln!(csv, "median,{k},{labeled},{med}");
    out_dir(paths.out, cfg)?;
    write(&paths.out.join("fewshot.csv"), csv)?;
    println!(
        "{k} labeled samples per class ({labeled} total): median test ER {:.2}% over {} seeds",
        100.0 * med,
        ers.len()
    );
    Ok(())
}

pub fn ablate(cfg: &RunConfig, axis: &str, values: Option<&str>, out: &Path) -> Result<()> {
    let axis: AblationAxis = axis.parse()?;
    let values: Vec<String> = match values {
        Some(v) => v.split(',').map(|s| s.trim().to_string()).collect(),
        None => axis.default_values(),
    };
    let base = cfg.resolve()?;
    let seeds = cfg.seeds()?;
    out_dir(out, cfg)?;
    let table = ablation_sweep(axis, &values, &base, &seeds, cfg.stage1()?, |row| {
        println!(
            "{axis}={} seed={}: probe ER {:.2}%{}",
            row.value,
            row.seed,
            100.0 * row.result.probe_er,
            row.result
                .finetune_er
                .map_or(String::new(), |e| format!(", fine-tune ER {:.2}%", 100.0 * e))
        );
    })?;
    write(&out.join("sweep.csv"), table.to_csv())?;
    for m in table.medians() {
        println!("median {axis}={}: probe ER {:.2}%", m.value, 100.0 * m.probe_er);
    }
    Ok(())
}

pub fn embed(cfg: &mut RunConfig, paths: EvalPaths<'_>, split: &str) -> Result<()> {
    let exp = cfg.resolve()?;
    let (exp, prep) = load_prepared(cfg, &exp, paths.data)?;
    let idx: Vec<usize> = match split {
        "train" => prep.train.clone(),
        "test" => prep.test.clone(),
        "all" => (0..prep.tubes.len()).collect(),
        other => return Err(Error::Contract(format!("unknown split {other:?} (expected train, test or all)")).into()),
    };
    let model = load_model(&exp, &prep, paths.checkpoint)?;
    let (tubes, labels) = prep.select(&idx);
    let x: NdArray<f64> = to_f64(&pooled_features(&model, &tubes)?);
    let pca = pca_embed(&x, 2)?;
    let tsne = tsne_embed(&x, &cfg.tsne(exp.seed())?)?;
    out_dir(paths.out, cfg)?;
    write(&paths.out.join("pca.csv"), dasmae_core::eval::coordinates_csv(&pca.points2(), &labels))?;
    write(&paths.out.join("tsne.csv"), dasmae_core::eval::coordinates_csv(&tsne.coords, &labels))?;
    let mut kl = String::from("iteration,kl\n");
    for (it, v) in &tsne.kl {
        let _ = writeln!(kl, "{it},{v}");
    }
    write(&paths.out.join("tsne_kl.csv"), kl)?;
    println!(
        "embedded {} {split} samples; final KL {:.4}",
        idx.len(),
        tsne.kl.last().map_or(f64::NAN, |k| k.1)
    );
    Ok(())
}

fn read_error_rate(dir: &Path) -> Result<f64> {
    let path = dir.join("metrics.csv");
    let text = fs::read_to_string(&path).map_err(|source| Error::Io { path: path.clone(), source })?;
    text.lines()
        .find_map(|l| l.strip_prefix("error_rate,"))
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| Error::File {
            path,
            msg: "no error_rate row".into(),
        })
        .map_err(Into::into)
}

/// Error rates of each run with relative improvement over the first.
pub fn report_runs(runs: &[PathBuf], out: Option<&Path>) -> Result<()> {
    let ers = runs.iter().map(|r| read_error_rate(r)).collect::<Result<Vec<_>>>()?;
    let mut csv = String::from("run,error_rate,ri_vs_first\n");
    for (run, &er) in runs.iter().zip(&ers) {
        let ri = relative_improvement(ers[0], er).map_or(String::new(), |v| format!("{v:.1}"));
        let _ = writeln!(csv, "{},{er},{ri}", run.display());
    }
    print!("{csv}");
    if let Some(path) = out {
        write(path, &csv)?;
    }
    Ok(())
}
