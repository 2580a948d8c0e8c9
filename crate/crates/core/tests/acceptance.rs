//! Acceptance run: every criterion at its stated tolerance, one line each.
//!
//! The desk-scale experiments (7, 8, 9) dominate the runtime; 7 and 8 share
//! the same three pre-trained encoders.

mod common;

use std::time::Instant;

use dasmae_core::dasgen::{read_dataset, synth_dataset, write_dataset, DatasetConfig, WaterfallPlot};
use dasmae_core::eval::{
    all_features, few_shot_subset, init_model, median, prepare, pretrain_encoder, probe_eval, relative_improvement,
    run_experiment, tsne_embed, ExperimentConfig, Prepared, Stage1Config, TsneConfig,
};
use dasmae_core::model::{param_count, MaeModel, ModelConfig};
use dasmae_core::numerics::{cosine_lr, LrSchedule, NdArray, ParamStore, Tape};
use dasmae_core::pipeline::{
    load_checkpoint, read_checkpoint, reconstruction_loss, reconstruction_loss_tape, save_checkpoint, CheckpointMeta,
    Stage, Strictness, TargetNorm,
};
use dasmae_core::stft::{stft_complex, StftConfig, StftFormat, Normalization};
use dasmae_core::tubes::{masked_count, sample_mask, MaskStrategy, TubeGrid};
use dasmae_core::Result;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const SEEDS: [u64; 3] = [1, 2, 3];

enum Verdict {
    Pass(String),
    Fail(String),
    /// Soft criterion whose expected trend did not appear.
    Flag(String),
}

fn verdict(ok: bool, detail: String) -> Verdict {
    if ok {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

fn mask_arithmetic() -> Result<Verdict> {
    let grid = TubeGrid::new([12, 96, 96], [2, 16, 16])?;
    let mask = sample_mask(&grid, 0.9, MaskStrategy::Random, 0)?;
    let n = grid.len();
    let nv = mask.n_visible();
    Ok(verdict(
        n == 216 && nv == 21 && masked_count(0.9, n) == 195,
        format!("N = {n}, N_v = {nv}"),
    ))
}

fn parameter_budget() -> Result<Verdict> {
    let n = param_count(&ModelConfig::full_scale());
    Ok(verdict((22_000_000..=24_000_000).contains(&n), format!("{n} parameters")))
}

fn ri_reproduction() -> Result<Verdict> {
    // (ER v1, ER ACAB, ER v2, printed RI(v1, v2), printed RI(ACAB, v2)), in %.
    let rows = [
        (10.0, 16.5, 5.8, 42.0, 64.8),
        (3.6, 6.2, 1.1, 69.4, 82.3),
        (2.8, 4.4, 0.3, 89.3, 93.2),
        (1.3, 3.8, 0.2, 84.6, 94.7),
        (1.1, 3.1, 0.1, 90.9, 96.8),
    ];
    let mut worst = 0.0f64;
    for (v1, acab, v2, ri1, ri2) in rows {
        worst = worst.max((relative_improvement(v1, v2)? - ri1).abs());
        worst = worst.max((relative_improvement(acab, v2)? - ri2).abs());
    }
    Ok(verdict(worst <= 0.1, format!("10 values, worst deviation {worst:.3} pp")))
}

fn gradient_soundness() -> Result<Verdict> {
    let prims = common::primitive_errors()?;
    let worst_prim = prims.iter().map(|p| p.1).fold(0.0, f64::max);
    let worst_model = common::transformer_error(11)?;
    Ok(verdict(
        worst_prim <= common::TOL && worst_model <= common::TOL,
        format!(
            "{} primitive groups worst {worst_prim:.2e}, 3-block model worst {worst_model:.2e}",
            prims.len()
        ),
    ))
}

fn stft_oracle() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let channels = rng.random_range(1..4);
        let window = 2 * rng.random_range(4..40);
        let nfft = window + 2 * rng.random_range(0..16);
        let samples = rng.random_range(window..6 * window);
        let values: Vec<f32> = (0..channels * samples).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = WaterfallPlot::new(channels, samples, 100.0, values, None)?;
        let cfg = StftConfig {
            window,
            hop: window,
            nfft,
            format: StftFormat::Magnitude,
            normalization: Normalization::None,
        };
        let got = stft_complex(&x, &cfg)?;
        let mut err = 0.0f64;
        let mut scale = 0.0f64;
        for c in 0..channels {
            let ch = x.channel(c);
            for t in 0..samples / window {
                for f in 0..nfft / 2 {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for n in 0..window {
                        let w = -2.0 * std::f64::consts::PI * (f * n) as f64 / nfft as f64;
                        acc += Complex64::from_polar(ch[t * window + n] as f64, w);
                    }
                    err = err.max((acc - got.get(c, t, f)).norm());
                    scale = scale.max(acc.norm());
                }
            }
        }
        worst = worst.max(err / scale);
    }
    let mut shapes_ok = true;
    for &(s, w, nfft) in &[(2000, 64, 64), (10000, 104, 192), (999, 50, 100), (512, 8, 16), (7, 7, 8)] {
        let cfg = StftConfig {
            window: w,
            hop: w,
            nfft,
            format: StftFormat::Magnitude,
            normalization: Normalization::None,
        };
        let x = WaterfallPlot::new(2, s, 100.0, vec![0.5; 2 * s], None)?;
        let f = stft_complex(&x, &cfg)?;
        shapes_ok &= f.frames == s / w && f.bins == nfft / 2;
    }
    Ok(verdict(
        worst <= 1e-6 && shapes_ok,
        format!("100 signals, worst relative error {worst:.2e}; shape law {}", if shapes_ok { "holds" } else { "violated" }),
    ))
}

fn loss_masking() -> Result<Verdict> {
    let grid = TubeGrid::new([4, 8, 8], [2, 4, 4])?;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| normal.sample(&mut rng)).collect() };
    let (n, p) = (grid.len(), 32);
    let targets = NdArray::from_vec(&[n, p], draw(n * p).into_iter().map(|v| v as f32).collect())?;
    let mut zero_grad = true;
    let mut invariant = true;
    for (i, strategy) in MaskStrategy::ALL.iter().enumerate() {
        let mask = sample_mask(&grid, 0.5, *strategy, i as u64)?;
        let mut store = ParamStore::new();
        let pid = store.add("pred", NdArray::from_vec(&[n, p], draw(n * p))?)?;
        let grads = {
            let mut t = Tape::new(&store);
            let pred = t.param(pid);
            let loss = reconstruction_loss_tape(&mut t, pred, &[&targets], std::slice::from_ref(&mask), TargetNorm::PerTube)?;
            t.backward(loss)?
        };
        let g = grads.get(pid);
        zero_grad &= mask.visible.iter().all(|&r| g.row(r).iter().all(|&v| v == 0.0));
        zero_grad &= mask.masked.iter().any(|&r| g.row(r).iter().any(|&v| v != 0.0));
        let base = reconstruction_loss(&targets, store.value(pid), &mask, TargetNorm::PerTube)?;
        let mut perturbed = store.value(pid).clone();
        for &r in &mask.visible {
            for j in 0..p {
                perturbed.data_mut()[r * p + j] += 1e3 * (j as f64 - 7.0);
            }
        }
        let after = reconstruction_loss(&targets, &perturbed, &mask, TargetNorm::PerTube)?;
        invariant &= base.to_bits() == after.to_bits();
    }
    Ok(verdict(
        zero_grad && invariant,
        format!("visible-tube gradient exactly zero: {zero_grad}; loss invariant to visible predictions: {invariant}"),
    ))
}

struct Pretrained {
    prep: Prepared,
    trained: NdArray<f32>,
    random: NdArray<f32>,
    seed: u64,
}

fn desk_encoders() -> Result<Vec<Pretrained>> {
    SEEDS
        .iter()
        .map(|&seed| {
            let cfg = ExperimentConfig::desk(seed);
            let prep = prepare(&cfg)?;
            let random = all_features(&init_model(&cfg, &prep)?, &prep)?;
            let (model, _) = pretrain_encoder(&cfg, &prep)?;
            let trained = all_features(&model, &prep)?;
            Ok(Pretrained {
                prep,
                trained,
                random,
                seed,
            })
        })
        .collect()
}

fn desk_learning(runs: &[Pretrained]) -> Result<Verdict> {
    let mut trained = Vec::new();
    let mut random = Vec::new();
    for r in runs {
        let cfg = ExperimentConfig::desk(r.seed).probe;
        trained.push(probe_eval(&r.trained, &r.prep, &r.prep.train, &cfg)?.error_rate);
        random.push(probe_eval(&r.random, &r.prep, &r.prep.train, &cfg)?.error_rate);
    }
    let (er, er_rand) = (median(&trained), median(&random));
    let ri = relative_improvement(er_rand, er)?;
    Ok(verdict(
        er <= 0.10 && ri >= 30.0,
        format!(
            "median probe ER {:.1}% (seeds {:?}) vs random encoder {:.1}% (seeds {:?}); RI {ri:.1}%",
            100.0 * er,
            pct(&trained),
            100.0 * er_rand,
            pct(&random)
        ),
    ))
}

fn pct(v: &[f64]) -> Vec<String> {
    v.iter().map(|x| format!("{:.1}", 100.0 * x)).collect()
}

fn few_shot_trend(runs: &[Pretrained]) -> Result<Verdict> {
    let ks = [5, 10, 20, 40];
    let mut medians = Vec::new();
    for &k in &ks {
        let mut ers = Vec::new();
        for r in runs {
            let subset = few_shot_subset(&r.prep.labels, &r.prep.train, k, r.prep.classes(), r.seed)?;
            let cfg = ExperimentConfig::desk(r.seed).probe;
            ers.push(probe_eval(&r.trained, &r.prep, &subset, &cfg)?.error_rate);
        }
        medians.push(median(&ers));
    }
    let ok = medians.windows(2).all(|w| w[1] <= w[0] + 0.01);
    let table: Vec<String> = ks.iter().zip(&medians).map(|(k, e)| format!("k={k}: {:.1}%", 100.0 * e)).collect();
    Ok(verdict(ok, format!("median probe ER {}", table.join(", "))))
}

fn ablation_directionality() -> Result<Verdict> {
    let mut ft = Vec::new();
    let mut scratch_probe = Vec::new();
    for strategy in MaskStrategy::ALL {
        let mut ers = Vec::new();
        for &seed in &SEEDS {
            let mut cfg = ExperimentConfig::desk_ablation(seed);
            cfg.pretrain.strategy = strategy;
            let cell = run_experiment(&cfg)?;
            ers.push(cell.finetune_er.expect("fine-tune configured"));
            if strategy == MaskStrategy::Random {
                scratch_probe.push(cell.probe_er);
            }
        }
        ft.push((strategy, median(&ers)));
    }
    let mut staged = Vec::new();
    for &seed in &SEEDS {
        let cfg = ExperimentConfig {
            stage1: Some(Stage1Config { samples: 600, epochs: 20 }),
            finetune: None,
            ..ExperimentConfig::desk_ablation(seed)
        };
        staged.push(run_experiment(&cfg)?.probe_er);
    }
    let random_ft = ft[0].1;
    let strategy_ok = ft.iter().all(|&(_, e)| random_ft <= e);
    let (staged_er, scratch_er) = (median(&staged), median(&scratch_probe));
    let stage_ok = staged_er <= scratch_er;
    let table: Vec<String> = ft.iter().map(|(s, e)| format!("{s} {:.1}%", 100.0 * e)).collect();
    let detail = format!(
        "median fine-tune ER {}; probe ER stage1+stage2 {:.1}% vs scratch {:.1}%",
        table.join(", "),
        100.0 * staged_er,
        100.0 * scratch_er
    );
    Ok(match (strategy_ok, stage_ok) {
        (true, true) => Verdict::Pass(detail),
        (s, t) => {
            let mut missing = Vec::new();
            if !s {
                missing.push("random ≤ axis strategies");
            }
            if !t {
                missing.push("stage1+stage2 ≤ scratch");
            }
            Verdict::Flag(format!("trend not reproduced ({}): {detail}", missing.join("; ")))
        }
    })
}

fn schedules() -> Result<Verdict> {
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, s) in [("pre-train", LrSchedule::pretrain_preset()), ("fine-tune", LrSchedule::finetune_preset())] {
        let peak = cosine_lr(s.warmup_epochs, &s)?;
        let end = cosine_lr(s.total_epochs, &s)?;
        ok &= peak == s.peak_lr && end == s.floor_lr;
        parts.push(format!("{name}: lr({}) = {peak:e}, lr({}) = {end:e}", s.warmup_epochs, s.total_epochs));
    }
    Ok(verdict(ok, parts.join("; ")))
}

fn persistence() -> Result<Verdict> {
    let dir = tempfile::tempdir().expect("temporary directory");
    let mut cfg = DatasetConfig::benchmark(4, 9);
    cfg.synth.samples = 400;
    let (manifest, samples) = synth_dataset(&cfg)?;
    write_dataset(&manifest, &samples, &dir.path().join("data"))?;
    let (m2, s2) = read_dataset(&dir.path().join("data"))?;
    let bits = |w: &[WaterfallPlot]| -> Vec<u32> { w.iter().flat_map(|x| x.values.iter().map(|v| v.to_bits())).collect() };
    let data_ok = m2 == manifest && bits(&s2) == bits(&samples) && s2 == samples;

    let small = |tokens| ModelConfig {
        enc_dim: 16,
        enc_depth: 1,
        enc_heads: 2,
        dec_dim: 8,
        dec_depth: 1,
        dec_heads: 2,
        ..ModelConfig::tiny([2, 4, 4], 1, tokens)
    };
    let model = MaeModel::<f32>::new(small(12), 3)?;
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&model.store, &CheckpointMeta::new(Stage::Stage1Video, 7, u64::MAX, model.config.clone()), &path)?;
    let ck = read_checkpoint(&path)?;
    let ck_ok = ck.arrays.len() == model.store.len()
        && ck.arrays.iter().zip(model.store.iter()).all(|((name, a), (_, p))| {
            name == &p.name && a.shape() == p.value.shape() && a.data().iter().zip(p.value.data()).all(|(x, y)| x.to_bits() == y.to_bits())
        })
        && ck.meta.seed == u64::MAX.to_string();

    let mut other = MaeModel::<f32>::new(small(20), 4)?;
    let (report, _) = load_checkpoint(&path, &mut other.store, Strictness::Permissive)?;
    let mut re = report.reinitialized.clone();
    re.sort();
    let transfer_ok = re == ["dec.pos", "enc.pos"] && report.loaded.len() == model.store.len() - 2;
    Ok(verdict(
        data_ok && ck_ok && transfer_ok,
        format!(
            "dataset roundtrip {}; checkpoint roundtrip {}; permissive load re-initialized {:?}",
            if data_ok { "bitwise" } else { "differs" },
            if ck_ok { "bitwise" } else { "differs" },
            report.reinitialized
        ),
    ))
}

fn tsne() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let centers = [[0.0; 5], [6.0, 0.0, 0.0, 2.0, 0.0], [0.0, 6.0, -3.0, 0.0, 1.0]];
    let mut data = Vec::with_capacity(200 * 5);
    for i in 0..200 {
        let c = centers[i % 3];
        data.extend(c.iter().map(|m| m + normal.sample(&mut rng)));
    }
    let x = NdArray::from_vec(&[200, 5], data)?;
    let r = tsne_embed(&x, &TsneConfig::full_scale(12))?;
    let (first, last) = (r.kl[0].1, r.kl.last().unwrap().1);
    let target = 40f64.log2();
    let worst = r.entropies.iter().map(|h| (h - target).abs()).fold(0.0, f64::max);
    Ok(verdict(
        last < first && worst <= 1e-3 && r.kl.iter().all(|k| k.1.is_finite()),
        format!("KL {first:.3} → {last:.3}; worst entropy deviation {worst:.1e} bits"),
    ))
}

fn main() {
    let start = Instant::now();
    let mut results: Vec<(usize, &str, Result<Verdict>, f64)> = Vec::new();
    let mut run = |id: usize, name: &'static str, f: &mut dyn FnMut() -> Result<Verdict>| {
        let t = Instant::now();
        let v = f();
        let secs = t.elapsed().as_secs_f64();
        print_line(id, name, &v, secs);
        results.push((id, name, v, secs));
    };
    run(1, "mask arithmetic", &mut mask_arithmetic);
    run(2, "parameter budget", &mut parameter_budget);
    run(3, "RI reproduction", &mut ri_reproduction);
    run(4, "gradient soundness", &mut gradient_soundness);
    run(5, "STFT oracle", &mut stft_oracle);
    run(6, "loss masking", &mut loss_masking);
    let t = Instant::now();
    let encoders = desk_encoders();
    let shared = t.elapsed().as_secs_f64();
    match &encoders {
        Ok(runs) => {
            run(7, "desk-scale learning", &mut || desk_learning(runs));
            run(8, "few-shot trend", &mut || few_shot_trend(runs));
        }
        Err(e) => {
            let msg = e.to_string();
            run(7, "desk-scale learning", &mut || Err(dasmae_core::Error::Numeric(msg.clone())));
            run(8, "few-shot trend", &mut || Err(dasmae_core::Error::Numeric(msg.clone())));
        }
    }
    run(9, "ablation directionality", &mut ablation_directionality);
    run(10, "schedules", &mut schedules);
    run(11, "persistence", &mut persistence);
    run(12, "t-SNE", &mut tsne);

    let failed = results.iter().filter(|r| !matches!(r.2, Ok(Verdict::Pass(_)) | Ok(Verdict::Flag(_)))).count();
    let flagged = results.iter().filter(|r| matches!(r.2, Ok(Verdict::Flag(_)))).count();
    println!(
        "acceptance: {} passed, {flagged} flagged, {failed} failed in {:.0} s (shared pre-training for 7 and 8: {shared:.0} s)",
        results.len() - failed - flagged,
        start.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}

fn print_line(id: usize, name: &str, v: &Result<Verdict>, secs: f64) {
    let (tag, detail) = match v {
        Ok(Verdict::Pass(d)) => ("PASS", d.clone()),
        Ok(Verdict::Fail(d)) => ("FAIL", d.clone()),
        Ok(Verdict::Flag(d)) => ("FLAG", d.clone()),
        Err(e) => ("FAIL", format!("error: {e}")),
    };
    println!("{tag} {id:>2} {name}: {detail} [{secs:.1} s]");
}
