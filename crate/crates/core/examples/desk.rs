//! Pre-trains the tiny model on the desk benchmark and compares a linear
//! probe on its encoder against one on a randomly initialized encoder.
//!
//! Usage: `cargo run --release --example desk -- [seed] [epochs] [batch] [peak-lr] [amplitude-scale] [target-norm] [cp,tp,fp]`

use std::time::Instant;

use dasmae_core::eval::{all_features, init_model, majority_error_rate, prepare, pretrain_encoder, probe_eval, EvalReport, ExperimentConfig};

fn main() -> dasmae_core::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map_or(1, |a| a.parse().expect("seed"));
    let epochs: usize = args.next().map_or(100, |a| a.parse().expect("epochs"));
    let mut cfg = ExperimentConfig::desk(seed).with_pretrain_epochs(epochs);
    if let Some(b) = args.next() {
        cfg.pretrain.batch_size = b.parse().expect("batch");
    }
    if let Some(lr) = args.next() {
        cfg.pretrain.schedule.peak_lr = lr.parse().expect("lr");
    }
    if let Some(a) = args.next() {
        cfg.data.amplitude_scale = a.parse().expect("amplitude scale");
    }
    if let Some(n) = args.next() {
        cfg.pretrain.target_norm = n.parse().expect("target norm");
    }
    if let Some(t) = args.next() {
        let v: Vec<usize> = t.split(',').map(|x| x.parse().expect("tube extent")).collect();
        cfg.tube = [v[0], v[1], v[2]];
    }
    let start = Instant::now();
    let prep = prepare(&cfg)?;
    println!("prepared {} samples, grid {:?} in {:.1?}", prep.tubes.len(), prep.grid.counts, start.elapsed());
    println!("majority baseline ER {:.3}", majority_error_rate(&prep)?);

    let random = init_model(&cfg, &prep)?;
    let r = probe_eval(&all_features(&random, &prep)?, &prep, &prep.train, &cfg.probe)?;
    println!("random encoder probe ER {:.3}", r.error_rate);

    let (model, report) = pretrain_encoder(&cfg, &prep)?;
    for e in report.curve.iter().filter(|e| e.epoch % 10 == 0 || e.epoch == 1) {
        println!("epoch {:>3} loss {:.4} lr {:.2e}", e.epoch, e.loss, e.lr);
    }
    let p = probe_eval(&all_features(&model, &prep)?, &prep, &prep.train, &cfg.probe)?;
    println!("pretrained probe ER {:.3} ({:.1?} total)", p.error_rate, start.elapsed());
    let labels: Vec<usize> = prep.test.iter().map(|&i| prep.labels[i]).collect();
    let report = EvalReport::new(&p.predictions, &labels, prep.manifest.class_names.clone(), String::new(), seed)?;
    print!("{}", report.confusion_csv());
    Ok(())
}
