use dasmae_core::dasgen::{synth_waterfall, CouplingProfile, EventSpec, Modulation, SpectralLine, SynthConfig};
use num_complex::Complex64;
use rustfft::FftPlanner;

fn event(hz: f64, bandwidth: f64, first: usize, last: usize, cfg: &SynthConfig, modulation: Modulation) -> EventSpec {
    EventSpec {
        class_id: 0,
        lines: vec![SpectralLine {
            center_hz: hz,
            bandwidth_hz: bandwidth,
            power: 1.0,
        }],
        onset_s: 1.0,
        duration_s: cfg.duration_s() - 2.0,
        first_channel: first,
        last_channel: last,
        amplitude: 80.0,
        modulation,
    }
}

#[test]
fn channels_outside_events_hold_only_noise() {
    let cfg = SynthConfig::default();
    let cp = CouplingProfile::uniform(cfg.channels);
    let mut energy = 0.0f64;
    let mut dof = 0usize;
    for seed in 0..100u64 {
        let first = (seed % 5) as usize + 2;
        let ev = event(20.0 + seed as f64 % 30.0, 3.0, first, first + 3, &cfg, Modulation::Stationary);
        let w = synth_waterfall(&[ev], &cp, &cfg, seed, None).unwrap();
        for c in (0..cfg.channels).filter(|&c| c < first || c > first + 3) {
            energy += w.channel(c).iter().map(|&v| (v as f64 / cfg.noise_sigma).powi(2)).sum::<f64>();
            dof += w.samples;
        }
    }
    let z = (energy - dof as f64) / (2.0 * dof as f64).sqrt();
    assert!(z.abs() < 2.576, "pooled noise-only energy z = {z}");
}

fn power_argmax(x: &[f32]) -> usize {
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v as f64, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    (1..buf.len() / 2).max_by(|&a, &b| buf[a].norm_sqr().total_cmp(&buf[b].norm_sqr())).unwrap()
}

#[test]
fn a_single_line_peaks_where_it_was_placed() {
    let cfg = SynthConfig::default();
    let cp = CouplingProfile::uniform(cfg.channels);
    let bin_hz = cfg.sample_rate / cfg.samples as f64;
    let target = (50.0 / bin_hz).round() as i64;
    for (seed, modulation) in [
        (1, Modulation::Stationary),
        (2, Modulation::Impulsive { rate_hz: 2.0, decay_s: 0.2 }),
        (3, Modulation::Stationary),
    ] {
        let ev = event(50.0, 0.0, 3, 9, &cfg, modulation);
        let w = synth_waterfall(&[ev], &cp, &cfg, seed, None).unwrap();
        for c in 3..=9 {
            let k = power_argmax(w.channel(c)) as i64;
            assert!((k - target).abs() <= 1, "seed {seed}, channel {c}: peak at {} Hz", k as f64 * bin_hz);
        }
    }
}
