//! Acceptance suite: one PASS/FAIL line per criterion and a summary line.
//!
//! `cargo test --test acceptance -- [N ...] [--strict]` runs the listed
//! criteria (all by default). Failures are reported but exit 0 so a
//! workspace test run goes on to the remaining test targets, which cargo
//! would otherwise skip; `--strict` exits nonzero when any criterion fails.
//! The network criteria train full-size models and take several minutes.

mod common;

use std::fs;
use std::process::ExitCode;
use std::time::Instant;

use emisense::cancel::{cancel, fit_cnn, fit_linear, EmiModel};
use emisense::emi::SourceKind;
use emisense::io::{ScenarioConfig, TrainSettings};
use emisense::pipeline::{run_cancel, simulate, CancelJob, Method};
use emisense::plan::{ImageVolume, MultiCoilDataset, Window};
use emisense::recon::{centered_dft, dataset_noise_level, forward, reconstruct, residual_power};
use emisense::rng::{substream, Domain};
use emisense::sim::{acquire, Scenario};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::FftDirection;

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: String) -> Self {
        Self { pass, detail }
    }
}

fn fit_and_cancel_cnn(ds: &MultiCoilDataset, train: &TrainSettings) -> MultiCoilDataset {
    let mut m = fit_cnn(ds, train.cnn_config(ds.plan().n_sense()), &train.hyper).expect("training");
    m.model.inference_stats = train.bn_stats;
    cancel(ds, &EmiModel::Cnn(m), false).expect("cancel")
}

fn fit_and_cancel_linear(ds: &MultiCoilDataset) -> MultiCoilDataset {
    cancel(ds, &EmiModel::Linear(fit_linear(ds).expect("fit")), false).expect("cancel")
}

fn db(ratio: f64) -> f64 {
    10.0 * ratio.log10()
}

fn receive_samples(ds: &MultiCoilDataset, w: Window) -> f64 {
    (ds.window(w).len() * ds.plan().n_fe()) as f64
}

fn acquire_pair(sc: &Scenario) -> (MultiCoilDataset, MultiCoilDataset) {
    (acquire(sc).expect("acquire"), acquire(&sc.shielded()).expect("acquire shielded"))
}

fn shield_equivalence() -> Outcome {
    let cfg = common::scenario("shield.cfg");
    let sc = &cfg.scenario;
    let kinds: Vec<&SourceKind> = sc.sources.iter().map(|s| &s.kind).collect();
    let narrow = kinds.iter().filter(|k| matches!(k, SourceKind::Narrowband { .. })).count();
    let broad = kinds.iter().filter(|k| matches!(k, SourceKind::Broadband { .. })).count();
    let p = &sc.plan;
    let setup_ok = (p.n_fe(), p.n_pe(), p.n_sense(), p.nex()) == (64, 64, 4, 2) && narrow >= 2 && broad >= 1;

    let (ds, clean) = acquire_pair(sc);
    let emi_power = residual_power(&ds, &clean).unwrap() / receive_samples(&ds, Window::Mri);
    let thermal_power = clean.window(Window::Emi).iter().map(|e| e.receive.energy()).sum::<f64>()
        / receive_samples(&clean, Window::Emi);
    let power_ratio = emi_power / thermal_power;

    let after = fit_and_cancel_cnn(&ds, &cfg.train);
    let n_after = dataset_noise_level(&after).unwrap().noise_sd;
    let n_clean = dataset_noise_level(&clean).unwrap().noise_sd;
    let n_before = dataset_noise_level(&ds).unwrap().noise_sd;
    let ratio = n_after / n_clean;
    Outcome::new(
        setup_ok && power_ratio >= 5.0 && ratio <= 1.10,
        format!(
            "EMI/thermal power {power_ratio:.1} (>= 5); noise before {n_before:.4}, after {n_after:.4}, \
             EMI-off {n_clean:.4}; ratio {ratio:.4} (<= 1.10)"
        ),
    )
}

fn dynamic_robustness() -> Outcome {
    let cfg = common::scenario("dynamic.cfg");
    let sc = &cfg.scenario;
    let p = &sc.plan;
    let scan_time = p.tr_count() as f64 * p.repetition_time();
    let sweep_ok = sc.sources.iter().any(|s| match &s.kind {
        SourceKind::Swept(sw) => {
            (sw.span - 0.25 * p.receiver_bandwidth()).abs() < 1e-9 && sw.n_points >= 11 && sw.cycle_period < scan_time
        }
        _ => false,
    });
    let total = p.total_lines();
    let event_ok = sc.events.iter().any(|e| e.at_line > 0 && e.at_line < total);

    let (ds, clean) = acquire_pair(sc);
    let after = fit_and_cancel_cnn(&ds, &cfg.train);
    let reduction = db(residual_power(&ds, &clean).unwrap() / residual_power(&after, &clean).unwrap());
    let ratio = dataset_noise_level(&after).unwrap().noise_sd / dataset_noise_level(&clean).unwrap().noise_sd;
    Outcome::new(
        sweep_ok && event_ok && reduction >= 15.0 && ratio <= 1.25,
        format!("EMI reduction {reduction:.2} dB (>= 15); noise ratio {ratio:.4} (<= 1.25); scan {scan_time:.2} s"),
    )
}

fn linear_oracle() -> Outcome {
    let cfg = common::scenario("linear.cfg");
    let sc = &cfg.scenario;
    let instantaneous = sc.thermal_sigma == 0.0
        && sc.couplings.iter().all(|m| {
            (0..m.n_sources()).all(|s| {
                (0..m.n_coils()).all(|c| {
                    let p = m.path(s, c).unwrap();
                    p.delay == 0 && p.fir.is_none() && p.saturation.is_none()
                })
            })
        });
    let (ds, clean) = acquire_pair(sc);
    let emi = residual_power(&ds, &clean).unwrap();
    let lin = residual_power(&fit_and_cancel_linear(&ds), &clean).unwrap();
    let cnn = residual_power(&fit_and_cancel_cnn(&ds, &cfg.train), &clean).unwrap();
    let lin_ok = lin <= 1e-6 * emi;
    let cnn_db = db(emi / cnn);
    let cnn_ok = cnn_db >= 20.0;
    let vs_lin_ok = cnn <= 10.0 * lin;
    Outcome::new(
        instantaneous && lin_ok && cnn_ok && vs_lin_ok,
        format!(
            "linear residual/EMI {:.2e} (<= 1e-6) {}; CNN reduction {cnn_db:.2} dB (>= 20) {}; \
             CNN/linear residual {:.2e} (<= 10) {}",
            lin / emi,
            verdict(lin_ok),
            verdict(cnn_ok),
            cnn / lin,
            verdict(vs_lin_ok)
        ),
    )
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "missed"
    }
}

/// The saturation scenario with scan seed `seed`, broadband seed `5 + seed`,
/// training seed `seed` and the receive-path saturation level set to 1.5x
/// the RMS of the unsaturated receive EMI.
fn saturation_case(base: &ScenarioConfig, seed: u64) -> (ScenarioConfig, f64) {
    let mut cfg = base.clone();
    cfg.scenario.seed = seed;
    cfg.train.hyper.seed = seed;
    for s in &mut cfg.scenario.sources {
        if matches!(s.kind, SourceKind::Broadband { .. }) {
            s.seed = 5 + seed;
        }
    }
    let mut linear = cfg.scenario.clone();
    for m in &mut linear.couplings {
        m.path_mut(0, 0).unwrap().saturation = None;
    }
    let (ds, clean) = acquire_pair(&linear);
    let rms = (residual_power(&ds, &clean).unwrap() / receive_samples(&ds, Window::Mri)).sqrt();
    for m in &mut cfg.scenario.couplings {
        m.path_mut(0, 0).unwrap().saturation = Some(1.5 * rms);
    }
    (cfg, rms)
}

fn nonlinear_advantage() -> Outcome {
    let base = common::scenario("saturation.cfg");
    let mut pass = true;
    let mut parts = Vec::new();
    for seed in 1..=3 {
        let (cfg, rms) = saturation_case(&base, seed);
        let (ds, clean) = acquire_pair(&cfg.scenario);
        let emi = residual_power(&ds, &clean).unwrap();
        let lin = residual_power(&fit_and_cancel_linear(&ds), &clean).unwrap();
        let cnn = residual_power(&fit_and_cancel_cnn(&ds, &cfg.train), &clean).unwrap();
        let ok = cnn <= lin;
        pass &= ok;
        parts.push(format!(
            "seed {seed} (EMI RMS {rms:.3}): CNN {:.2} dB vs linear {:.2} dB {}",
            db(emi / cnn),
            db(emi / lin),
            verdict(ok)
        ));
    }
    Outcome::new(pass, parts.join("; "))
}

fn gradient_suite() -> Outcome {
    let cases = common::gradient_suite();
    let worst = cases.iter().map(|c| c.rel_err).fold(0.0, f64::max);
    let jvp = (0..3).map(common::model_jvp_check).fold(0.0, f64::max);
    Outcome::new(
        cases.len() >= 20 && worst < common::TOLERANCE && jvp < common::TOLERANCE,
        format!("{} shapes, worst relative error {worst:.2e}; network JVP {jvp:.2e} (< 1e-4)", cases.len()),
    )
}

fn random_image(seed: u64, rows: usize, cols: usize) -> ImageVolume {
    let mut r = substream(seed, Domain::Thermal, 0);
    let data = (0..rows * cols).map(|_| Complex64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0))).collect();
    ImageVolume::new(rows, cols, data).unwrap()
}

fn oracle_equality() -> Outcome {
    let conv = common::conv_oracle_error(40, 0);
    let mut round: f64 = 0.0;
    let mut parseval: f64 = 0.0;
    for (k, (rows, cols)) in [(64, 64), (16, 32), (7, 9), (1, 12), (33, 20)].into_iter().enumerate() {
        let img = random_image(k as u64, rows, cols);
        let back = reconstruct(&forward(&img));
        for (a, b) in img.data().iter().zip(back.data()) {
            round = round.max((a - b).norm());
        }
        let line = img.row(0);
        let spec = centered_dft(line, FftDirection::Forward);
        let e_time: f64 = line.iter().map(|z| z.norm_sqr()).sum();
        let e_freq: f64 = spec.iter().map(|z| z.norm_sqr()).sum();
        let e_k = forward(&img).energy();
        parseval = parseval.max((e_time - e_freq).abs() / e_time).max((img.energy() - e_k).abs() / img.energy());
    }
    Outcome::new(
        conv <= 1e-12 && round <= 1e-12 && parseval <= 1e-10,
        format!("conv vs nested loops {conv:.1e}; reconstruct(forward) {round:.1e}; Parseval {parseval:.1e}"),
    )
}

fn pipeline_outputs(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let (data, clean) = simulate(&common::scenario_path("small.cfg"), &dir.join("scan.emik"), None).unwrap();
    let mut files = vec![data.clone(), clean];
    for (method, name) in [(Method::Cnn, "cnn.emik"), (Method::Linear, "linear.emik")] {
        let job = CancelJob {
            input: data.clone(),
            output: dir.join(name),
            method,
            model: None,
            train: common::scenario("small.cfg").train,
            allow_foreign_model: false,
        };
        let out = run_cancel(&job).unwrap();
        files.push(out.corrected);
        files.push(out.checkpoint);
    }
    files.into_iter().map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())).collect()
}

fn determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (x, y) = (pipeline_outputs(a.path()), pipeline_outputs(b.path()));
    let differing: Vec<&str> = x.iter().zip(&y).filter(|(p, q)| p != q).map(|(p, _)| p.0.as_str()).collect();
    let names: Vec<&str> = x.iter().map(|f| f.0.as_str()).collect();
    Outcome::new(
        differing.is_empty(),
        if differing.is_empty() {
            format!("identical: {}", names.join(", "))
        } else {
            format!("differ: {}", differing.join(", "))
        },
    )
}

fn noise_calibration() -> Outcome {
    let base = common::scenario("shield.cfg").scenario.shielded();
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for (k, sigma) in [0.25, 1.0, 3.0].into_iter().enumerate() {
        for seed in 1..=3u64 {
            let mut sc = base.clone();
            sc.thermal_sigma = sigma;
            sc.seed = 100 * k as u64 + seed;
            let est = dataset_noise_level(&acquire(&sc).unwrap()).unwrap().noise_sd;
            worst = worst.max((est / sigma - 1.0).abs());
            if seed == 1 {
                parts.push(format!("sigma {sigma} -> {est:.4}"));
            }
        }
    }
    // Pure noise images, no phantom, as a second estimate path.
    let mut r = substream(9, Domain::Thermal, 1);
    let sigma = 0.7;
    let mut noise = || -> ImageVolume {
        let data = (0..64 * 64)
            .map(|_| {
                let re: f64 = r.sample(StandardNormal);
                let im: f64 = r.sample(StandardNormal);
                Complex64::new(sigma * re, sigma * im)
            })
            .collect();
        reconstruct(&ImageVolume::new(64, 64, data).unwrap())
    };
    let (i1, i2) = (noise(), noise());
    let est = emisense::recon::noise_level(&i1, &i2).unwrap().noise_sd;
    worst = worst.max((est / sigma - 1.0).abs());
    Outcome::new(worst <= 0.03, format!("{}; worst deviation {:.2}% (<= 3%)", parts.join(", "), 100.0 * worst))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("shield equivalence", shield_equivalence),
        ("dynamic EMI robustness", dynamic_robustness),
        ("linear oracle equivalence", linear_oracle),
        ("nonlinear advantage", nonlinear_advantage),
        ("gradient suite", gradient_suite),
        ("oracle equality", oracle_equality),
        ("determinism", determinism),
        ("noise metric calibration", noise_calibration),
    ];
    let args: Vec<String> = std::env::args().skip(1).collect();
    let strict = args.iter().any(|a| a == "--strict");
    let only: Vec<usize> = args.iter().filter_map(|a| a.parse().ok()).collect();
    let mut ran = 0;
    let mut failed = Vec::new();
    for (i, (name, run)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let t = Instant::now();
        let o = run();
        ran += 1;
        if !o.pass {
            failed.push(n.to_string());
        }
        let status = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {n} {name}: {status} ({}) [{:.1} s]", o.detail, t.elapsed().as_secs_f64());
    }
    if failed.is_empty() {
        println!("acceptance: {ran}/{ran} criteria passed");
        return ExitCode::SUCCESS;
    }
    println!("acceptance: {}/{ran} criteria passed; FAILED: {}", ran - failed.len(), failed.join(", "));
    if strict {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
