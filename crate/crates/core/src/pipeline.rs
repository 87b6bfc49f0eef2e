//! File-to-file stages: simulate, cancel, recon, metrics and report.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::cancel::{cancel, fit_cnn, fit_linear, EmiModel, EmiPredictor};
use crate::error::{Error, Result};
use crate::io::{read_checkpoint, read_config, read_emik, write_checkpoint, write_emik, write_pgm, TrainSettings};
use crate::plan::{ImageVolume, MultiCoilDataset, Window};
use crate::recon::{average_images, dataset_noise_level, emi_reduction_db, reconstruct_averages};
use crate::sim::acquire;

/// `dir/name.emik` -> `dir/name<suffix>`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let stem = name.strip_suffix(".emik").unwrap_or(&name);
    path.with_file_name(format!("{stem}{suffix}"))
}

pub fn clean_path(dataset: &Path) -> PathBuf {
    sibling(dataset, ".clean.emik")
}

/// Simulate the scenario in `config` and write the dataset to `out` and its
/// EMI-off reference next to it. Returns both paths.
pub fn simulate(config: &Path, out: &Path, seed: Option<u64>) -> Result<(PathBuf, PathBuf)> {
    let mut cfg = read_config(config)?;
    if let Some(s) = seed {
        cfg.scenario.seed = s;
    }
    let ds = acquire(&cfg.scenario)?;
    let clean = acquire(&cfg.scenario.shielded())?.with_scan_id(ds.scan_id());
    let clean_out = clean_path(out);
    write_emik(out, &ds)?;
    write_emik(&clean_out, &clean)?;
    Ok((out.to_path_buf(), clean_out))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Cnn,
    Linear,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Cnn => "cnn",
            Method::Linear => "linear",
        }
    }
}

#[derive(Debug, Clone)]
pub struct CancelJob {
    pub input: PathBuf,
    pub output: PathBuf,
    pub method: Method,
    /// Apply this checkpoint instead of fitting a new model.
    pub model: Option<PathBuf>,
    pub train: TrainSettings,
    pub allow_foreign_model: bool,
}

#[derive(Debug, Clone)]
pub struct CancelOutputs {
    pub corrected: PathBuf,
    pub checkpoint: PathBuf,
    pub report: PathBuf,
    pub residual_csv: PathBuf,
}

fn receive_power(ds: &MultiCoilDataset) -> f64 {
    ds.window(Window::Mri).iter().map(|e| e.receive.energy()).sum()
}

/// Fit (or load) a model, subtract its predictions and write the corrected
/// dataset, the checkpoint, a key=value report and a per-line CSV.
pub fn run_cancel(job: &CancelJob) -> Result<CancelOutputs> {
    let ds = read_emik(&job.input)?;
    let model = match &job.model {
        Some(path) => read_checkpoint(path)?,
        None => match job.method {
            Method::Linear => EmiModel::Linear(fit_linear(&ds)?),
            Method::Cnn => {
                let mut m = fit_cnn(&ds, job.train.cnn_config(ds.plan().n_sense()), &job.train.hyper)?;
                m.model.inference_stats = job.train.bn_stats;
                EmiModel::Cnn(m)
            }
        },
    };
    let corrected = cancel(&ds, &model, job.allow_foreign_model)?;

    let outputs = CancelOutputs {
        corrected: job.output.clone(),
        checkpoint: sibling(&job.output, ".ckpt"),
        report: sibling(&job.output, ".report.txt"),
        residual_csv: sibling(&job.output, ".residual.csv"),
    };
    write_emik(&outputs.corrected, &corrected)?;
    write_checkpoint(&outputs.checkpoint, &model)?;

    let mut csv = String::from("average,pe_line,receive_power,predicted_power,corrected_power\n");
    let plan = ds.plan();
    let mut predicted_total = 0.0;
    for avg in 0..plan.nex() {
        for pe in 0..plan.n_pe() {
            let before = ds.entry(Window::Mri, avg, pe);
            let after = corrected.entry(Window::Mri, avg, pe);
            let predicted: f64 =
                before.receive.samples().iter().zip(after.receive.samples()).map(|(a, b)| (a - b).norm_sqr()).sum();
            predicted_total += predicted;
            writeln!(csv, "{avg},{pe},{:e},{predicted:e},{:e}", before.receive.energy(), after.receive.energy())
                .expect("string write");
        }
    }
    fs::write(&outputs.residual_csv, csv)?;

    let mut report = String::new();
    let mut kv = |k: &str, v: String| writeln!(report, "{k}={v}").expect("string write");
    kv("input", job.input.display().to_string());
    kv("method", model.method().to_string());
    kv("scan_id", format!("{:#018x}", ds.scan_id()));
    kv("model_scan_id", format!("{:#018x}", model.scan_id()));
    kv("n_fe", plan.n_fe().to_string());
    kv("n_pe", plan.n_pe().to_string());
    kv("n_sense", plan.n_sense().to_string());
    kv("nex", plan.nex().to_string());
    kv("training_lines", ds.window(Window::Emi).len().to_string());
    match &model {
        EmiModel::Cnn(m) => {
            kv("parameters", m.model.config.param_count().to_string());
            kv("epochs", m.report.epoch_losses.len().to_string());
            kv("steps", m.report.steps.to_string());
            kv("input_scale", format!("{:e}", m.scale));
            kv("final_training_loss", format!("{:e}", m.report.final_loss()));
        }
        EmiModel::Linear(m) => {
            kv("rank_deficient_bins", m.rank_deficient.len().to_string());
        }
    }
    kv("receive_power_before", format!("{:e}", receive_power(&ds)));
    kv("predicted_power", format!("{predicted_total:e}"));
    kv("receive_power_after", format!("{:e}", receive_power(&corrected)));
    if ds.plan().nex() >= 2 {
        kv("noise_before", format!("{:.6}", dataset_noise_level(&ds)?.noise_sd));
        kv("noise_after", format!("{:.6}", dataset_noise_level(&corrected)?.noise_sd));
    }
    fs::write(&outputs.report, report)?;
    Ok(outputs)
}

/// Average of the per-average MRI-window images.
pub fn averaged_image(ds: &MultiCoilDataset) -> Result<ImageVolume> {
    average_images(&reconstruct_averages(ds))
}

pub fn recon(input: &Path, out: &Path) -> Result<ImageVolume> {
    let img = averaged_image(&read_emik(input)?)?;
    write_pgm(out, &img, None)?;
    Ok(img)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub noise_before: f64,
    pub noise_after: f64,
    pub noise_clean: f64,
    pub reduction_db: f64,
}

impl Metrics {
    pub fn to_text(&self) -> String {
        let db = if self.reduction_db.is_infinite() { "inf".to_string() } else { format!("{:.3}", self.reduction_db) };
        format!(
            "noise_before={:.6}\nnoise_after={:.6}\nnoise_clean={:.6}\nnoise_ratio_after_clean={:.6}\nemi_reduction_db={db}\n",
            self.noise_before,
            self.noise_after,
            self.noise_clean,
            self.noise_after / self.noise_clean
        )
    }
}

pub fn compute_metrics(
    before: &MultiCoilDataset,
    after: &MultiCoilDataset,
    clean: &MultiCoilDataset,
) -> Result<Metrics> {
    Ok(Metrics {
        noise_before: dataset_noise_level(before)?.noise_sd,
        noise_after: dataset_noise_level(after)?.noise_sd,
        noise_clean: dataset_noise_level(clean)?.noise_sd,
        reduction_db: emi_reduction_db(before, after, clean)?,
    })
}

pub fn metrics(before: &Path, after: &Path, clean: &Path) -> Result<Metrics> {
    compute_metrics(&read_emik(before)?, &read_emik(after)?, &read_emik(clean)?)
}

/// Concatenate every `*.report.txt` and `*.metrics.txt` in `dir`, sorted
/// by file name.
pub fn report(dir: &Path) -> Result<String> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let n = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            n.ends_with(".report.txt") || n.ends_with(".metrics.txt")
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Malformed(format!("no run reports in {}", dir.display())));
    }
    let mut out = format!("runs={}\n", files.len());
    for f in files {
        let name = f.file_name().expect("listed file").to_string_lossy().into_owned();
        writeln!(out, "\n[{name}]").expect("string write");
        out.push_str(&fs::read_to_string(&f)?);
    }
    Ok(out)
}
