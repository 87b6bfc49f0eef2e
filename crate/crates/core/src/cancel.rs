//! Per-scan EMI prediction and subtraction.
//!
//! Models are fitted on the EMI characterization window, where the receive
//! coil sees interference only, and applied line by line to the MRI window
//! before any averaging.

use num_complex::Complex64;
use rustfft::FftDirection;

use crate::error::{Error, Result};
use crate::neural::{train, CnnConfig, CnnModel, Tensor, TrainHyper, TrainReport};
use crate::plan::{ComplexLine, MultiCoilDataset, Window};
use crate::recon::centered_dft;

/// Network training pairs from the EMI window, ordered by dataset slot.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    /// `N x 2 x N_FE x N_s`; channel 0 is the real part.
    pub inputs: Tensor,
    /// `N x 2 x N_FE x 1`.
    pub targets: Tensor,
    /// Slot index (`average * n_pe + pe_line`) of each pair.
    pub line_ids: Vec<usize>,
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.line_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.line_ids.is_empty()
    }
}

/// Stack the sensing lines of one acquisition as a `1 x 2 x N_FE x N_s` item.
fn sensing_tensor(sensing: &[ComplexLine], scale: f64) -> Tensor {
    let n_fe = sensing.first().map_or(0, ComplexLine::len);
    Tensor::from_fn([1, 2, n_fe, sensing.len()], |_, c, h, w| {
        let z = sensing[w].samples()[h];
        (if c == 0 { z.re } else { z.im }) / scale
    })
}

fn split_into(t: &mut Tensor, item: usize, line: &ComplexLine, scale: f64) {
    for (h, z) in line.samples().iter().enumerate() {
        t.set(item, 0, h, 0, z.re / scale);
        t.set(item, 1, h, 0, z.im / scale);
    }
}

pub fn build_training_set(ds: &MultiCoilDataset) -> Result<TrainingSet> {
    let lines = ds.window(Window::Emi);
    if lines.is_empty() {
        return Err(Error::Training("EMI characterization window is empty".into()));
    }
    let plan = ds.plan();
    let (n, n_fe, n_s) = (lines.len(), plan.n_fe(), plan.n_sense());
    let mut inputs = Tensor::zeros([n, 2, n_fe, n_s]);
    let mut targets = Tensor::zeros([n, 2, n_fe, 1]);
    for (i, e) in lines.iter().enumerate() {
        for (s, line) in e.sensing.iter().enumerate() {
            for (h, z) in line.samples().iter().enumerate() {
                inputs.set(i, 0, h, s, z.re);
                inputs.set(i, 1, h, s, z.im);
            }
        }
        split_into(&mut targets, i, &e.receive, 1.0);
    }
    Ok(TrainingSet { inputs, targets, line_ids: (0..n).collect() })
}

/// Anything that maps the sensing lines of one acquisition to the
/// interference expected on the receive coil.
pub trait EmiPredictor {
    fn n_sense(&self) -> usize;
    /// Scan the predictor was fitted on.
    fn scan_id(&self) -> u64;
    fn predict_line(&self, sensing: &[ComplexLine]) -> Result<ComplexLine>;
}

fn check_sensing(sensing: &[ComplexLine], n_sense: usize) -> Result<()> {
    if sensing.len() != n_sense {
        return Err(Error::Shape(format!("model expects {n_sense} sensing coils, got {}", sensing.len())));
    }
    let n = sensing[0].len();
    if sensing.iter().any(|l| l.len() != n) {
        return Err(Error::Shape("sensing lines differ in length".into()));
    }
    Ok(())
}

/// Trained network plus the global scale its inputs and targets were
/// divided by.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnCanceller {
    pub model: CnnModel,
    pub scale: f64,
    pub scan_id: u64,
    pub report: TrainReport,
}

/// RMS over every real and imaginary sensing value of the EMI window; 1 for
/// an all-zero window.
pub fn sensing_scale(set: &TrainingSet) -> f64 {
    let d = set.inputs.data();
    let rms = (d.iter().map(|v| v * v).sum::<f64>() / d.len() as f64).sqrt();
    if rms > 0.0 && rms.is_finite() {
        rms
    } else {
        1.0
    }
}

/// Train a fresh network on this scan's EMI window.
pub fn fit_cnn(ds: &MultiCoilDataset, config: CnnConfig, hyper: &TrainHyper) -> Result<CnnCanceller> {
    if config.n_sense != ds.plan().n_sense() {
        return Err(Error::Shape(format!(
            "network built for {} sensing coils, scan has {}",
            config.n_sense,
            ds.plan().n_sense()
        )));
    }
    let mut set = build_training_set(ds)?;
    let scale = sensing_scale(&set);
    set.inputs.data_mut().iter_mut().chain(set.targets.data_mut()).for_each(|v| *v /= scale);
    let mut model = CnnModel::new(config, hyper.clone())?;
    let report = train(&mut model, &set.inputs, &set.targets, hyper)?;
    Ok(CnnCanceller { model, scale, scan_id: ds.scan_id(), report })
}

impl EmiPredictor for CnnCanceller {
    fn n_sense(&self) -> usize {
        self.model.config.n_sense
    }
    fn scan_id(&self) -> u64 {
        self.scan_id
    }
    fn predict_line(&self, sensing: &[ComplexLine]) -> Result<ComplexLine> {
        check_sensing(sensing, self.n_sense())?;
        let y = self.model.forward_infer(&sensing_tensor(sensing, self.scale))?;
        let samples =
            (0..y.height()).map(|h| Complex64::new(y.at(0, 0, h, 0), y.at(0, 1, h, 0)) * self.scale).collect();
        ComplexLine::new(samples, sensing[0].dwell_time())
    }
}

/// Per-bin transfer coefficients from each sensing coil to the receive coil.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearEmiModel {
    pub n_fe: usize,
    pub n_sense: usize,
    /// `coeffs[bin * n_sense + coil]`, bins in centered order.
    pub coeffs: Vec<Complex64>,
    /// Bins whose least-squares system lacked full column rank.
    pub rank_deficient: Vec<usize>,
    pub scan_id: u64,
}

impl LinearEmiModel {
    pub fn coeff(&self, bin: usize, coil: usize) -> Complex64 {
        self.coeffs[bin * self.n_sense + coil]
    }
}

/// Singular values below this fraction of the largest count as zero. Well
/// above the rounding floor of the spectra, so exactly collinear coils are
/// recognized as such.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Minimum-norm least-squares solution of `a x = b` for a tall matrix
/// given by its columns, and whether it lacked full column rank.
///
/// One-sided Jacobi: plane rotations orthogonalize the columns, after which
/// their norms are the singular values and the accumulated rotations the
/// right singular vectors.
pub fn min_norm_solve(columns: &[Vec<Complex64>], b: &[Complex64]) -> (Vec<Complex64>, bool) {
    let n = columns.len();
    let mut a = columns.to_vec();
    let mut v: Vec<Vec<Complex64>> =
        (0..n).map(|i| (0..n).map(|j| Complex64::new(if i == j { 1.0 } else { 0.0 }, 0.0)).collect()).collect();
    let dot = |x: &[Complex64], y: &[Complex64]| -> Complex64 { x.iter().zip(y).map(|(p, q)| p.conj() * q).sum() };
    for _sweep in 0..64 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = dot(&a[p], &a[p]).re;
                let beta = dot(&a[q], &a[q]).re;
                let gamma = dot(&a[p], &a[q]);
                let g = gamma.norm();
                if g <= f64::EPSILON * (alpha * beta).sqrt() || g == 0.0 {
                    continue;
                }
                rotated = true;
                // make the pair's inner product real, then rotate as in the real case
                let phase = (gamma / g).conj();
                let zeta = (beta - alpha) / (2.0 * g);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for m in [&mut a, &mut v] {
                    let (lo, hi) = m.split_at_mut(q);
                    for (x, y) in lo[p].iter_mut().zip(hi[0].iter_mut()) {
                        let yq = *y * phase;
                        let xp = *x;
                        *x = xp * c - yq * s;
                        *y = xp * s + yq * c;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let sigma: Vec<f64> = a.iter().map(|col| dot(col, col).re.sqrt()).collect();
    let smax = sigma.iter().cloned().fold(0.0, f64::max);
    let tol = smax * RANK_TOLERANCE;
    let mut x = vec![Complex64::new(0.0, 0.0); n];
    for k in 0..n {
        if sigma[k] > tol {
            let w = dot(&a[k], b) / (sigma[k] * sigma[k]);
            for (xi, vi) in x.iter_mut().zip(&v[k]) {
                *xi += vi * w;
            }
        }
    }
    (x, smax == 0.0 || sigma.iter().any(|&s| s <= tol))
}

/// Least-squares transfer function per frequency bin over all EMI-window
/// lines. Rank-deficient bins get the minimum-norm solution.
pub fn fit_linear(ds: &MultiCoilDataset) -> Result<LinearEmiModel> {
    let plan = ds.plan();
    let (n_fe, n_s) = (plan.n_fe(), plan.n_sense());
    let lines = ds.window(Window::Emi);
    if lines.len() < n_s {
        return Err(Error::Training(format!(
            "{} EMI-window lines cannot determine {n_s} coefficients per bin",
            lines.len()
        )));
    }
    let spectra: Vec<(Vec<Complex64>, Vec<Vec<Complex64>>)> = lines
        .iter()
        .map(|e| {
            let y = centered_dft(e.receive.samples(), FftDirection::Forward);
            let x = e.sensing.iter().map(|l| centered_dft(l.samples(), FftDirection::Forward)).collect();
            (y, x)
        })
        .collect();
    let mut coeffs = Vec::with_capacity(n_fe * n_s);
    let mut rank_deficient = Vec::new();
    for bin in 0..n_fe {
        let cols: Vec<Vec<Complex64>> = (0..n_s).map(|s| spectra.iter().map(|(_, x)| x[s][bin]).collect()).collect();
        let b: Vec<Complex64> = spectra.iter().map(|(y, _)| y[bin]).collect();
        let (c, deficient) = min_norm_solve(&cols, &b);
        if deficient {
            rank_deficient.push(bin);
        }
        coeffs.extend(c.iter().copied());
    }
    Ok(LinearEmiModel { n_fe, n_sense: n_s, coeffs, rank_deficient, scan_id: ds.scan_id() })
}

impl EmiPredictor for LinearEmiModel {
    fn n_sense(&self) -> usize {
        self.n_sense
    }
    fn scan_id(&self) -> u64 {
        self.scan_id
    }
    fn predict_line(&self, sensing: &[ComplexLine]) -> Result<ComplexLine> {
        check_sensing(sensing, self.n_sense)?;
        if sensing[0].len() != self.n_fe {
            return Err(Error::Shape(format!(
                "model expects {} samples per line, got {}",
                self.n_fe,
                sensing[0].len()
            )));
        }
        let x: Vec<Vec<Complex64>> = sensing.iter().map(|l| centered_dft(l.samples(), FftDirection::Forward)).collect();
        let y: Vec<Complex64> =
            (0..self.n_fe).map(|bin| (0..self.n_sense).map(|s| self.coeff(bin, s) * x[s][bin]).sum()).collect();
        ComplexLine::new(centered_dft(&y, FftDirection::Inverse), sensing[0].dwell_time())
    }
}

/// Either kind of fitted model.
#[derive(Debug, Clone, PartialEq)]
pub enum EmiModel {
    Cnn(CnnCanceller),
    Linear(LinearEmiModel),
}

impl EmiModel {
    pub fn method(&self) -> &'static str {
        match self {
            EmiModel::Cnn(_) => "cnn",
            EmiModel::Linear(_) => "linear",
        }
    }

    fn inner(&self) -> &dyn EmiPredictor {
        match self {
            EmiModel::Cnn(m) => m,
            EmiModel::Linear(m) => m,
        }
    }
}

impl EmiPredictor for EmiModel {
    fn n_sense(&self) -> usize {
        self.inner().n_sense()
    }
    fn scan_id(&self) -> u64 {
        self.inner().scan_id()
    }
    fn predict_line(&self, sensing: &[ComplexLine]) -> Result<ComplexLine> {
        self.inner().predict_line(sensing)
    }
}

/// Subtract the predicted interference from every MRI-window receive line.
/// The EMI window and all sensing lines are left as they were.
///
/// A model fitted on another scan is refused unless `allow_foreign_model`.
pub fn cancel(ds: &MultiCoilDataset, model: &dyn EmiPredictor, allow_foreign_model: bool) -> Result<MultiCoilDataset> {
    if model.n_sense() != ds.plan().n_sense() {
        return Err(Error::Shape(format!(
            "model expects {} sensing coils, scan has {}",
            model.n_sense(),
            ds.plan().n_sense()
        )));
    }
    if model.scan_id() != ds.scan_id() && !allow_foreign_model {
        return Err(Error::ScanMismatch { model: model.scan_id(), dataset: ds.scan_id() });
    }
    let mut out = ds.clone();
    for e in out.window_mut(Window::Mri) {
        let p = model.predict_line(&e.sensing)?;
        for (r, q) in e.receive.samples_mut().iter_mut().zip(p.samples()) {
            *r -= q;
        }
    }
    Ok(out)
}
