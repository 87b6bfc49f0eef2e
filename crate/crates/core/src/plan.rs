//! Acquisition geometry and timing: FE lines, scan plans, the two-window
//! multi-coil dataset and image grids.
//!
//! Every TR holds two acquisition windows of identical shape. The first
//! records MRI signal plus interference on the receive coil; the second is
//! sampled without RF excitation and therefore holds interference (and
//! thermal noise) only. All samples are complex baseband relative to the
//! Larmor frequency.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// One frequency-encoding readout.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexLine {
    samples: Vec<Complex64>,
    dwell_time: f64,
}

impl ComplexLine {
    pub fn new(samples: Vec<Complex64>, dwell_time: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Shape("line has no samples".into()));
        }
        if !(dwell_time > 0.0 && dwell_time.is_finite()) {
            return Err(Error::Shape(format!("dwell time must be positive, got {dwell_time}")));
        }
        if let Some(k) = samples.iter().position(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::Shape(format!("sample {k} is not finite")));
        }
        Ok(Self { samples, dwell_time })
    }

    pub fn zeros(n: usize, dwell_time: f64) -> Self {
        Self { samples: vec![Complex64::new(0.0, 0.0); n], dwell_time }
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [Complex64] {
        &mut self.samples
    }

    pub fn into_samples(self) -> Vec<Complex64> {
        self.samples
    }

    pub fn dwell_time(&self) -> f64 {
        self.dwell_time
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|z| z.norm_sqr()).sum()
    }
}

/// User-facing scan parameters; validated into a [`ScanPlan`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScanParams {
    pub n_fe: usize,
    pub n_pe: usize,
    pub n_sense: usize,
    pub nex: usize,
    /// FE lines per TR in each window (the echo train length).
    pub lines_per_tr: usize,
    /// Receiver bandwidth in Hz; the sampling rate of every line.
    pub receiver_bandwidth: f64,
    /// Seconds per TR.
    pub repetition_time: f64,
    /// Seconds between consecutive lines of one echo train.
    pub echo_spacing: f64,
}

impl Default for ScanParams {
    fn default() -> Self {
        Self {
            n_fe: 64,
            n_pe: 64,
            n_sense: 4,
            nex: 2,
            lines_per_tr: 1,
            receiver_bandwidth: 32_000.0,
            repetition_time: 0.05,
            echo_spacing: 0.0025,
        }
    }
}

/// Validated acquisition plan.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanPlan {
    params: ScanParams,
    tr_count: usize,
}

/// Which of the two per-TR acquisition windows a line belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Window {
    /// MRI signal plus interference.
    Mri,
    /// Interference-only characterization window.
    Emi,
}

impl Window {
    pub const BOTH: [Window; 2] = [Window::Mri, Window::Emi];

    pub fn ordinal(self) -> usize {
        match self {
            Window::Mri => 0,
            Window::Emi => 1,
        }
    }
}

/// Position of one FE line in acquisition order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LineIndex {
    pub average: usize,
    pub tr: usize,
    pub echo: usize,
    pub pe_line: usize,
}

/// Validate scan parameters into a plan.
pub fn make_scan_plan(params: ScanParams) -> Result<ScanPlan> {
    ScanPlan::new(params)
}

impl ScanPlan {
    pub fn new(params: ScanParams) -> Result<Self> {
        let p = &params;
        for (name, v) in [
            ("n_fe", p.n_fe),
            ("n_pe", p.n_pe),
            ("n_sense", p.n_sense),
            ("nex", p.nex),
            ("lines_per_tr", p.lines_per_tr),
        ] {
            if v == 0 {
                return Err(Error::Plan(format!("{name} must be at least 1")));
            }
        }
        if !p.n_pe.is_multiple_of(p.lines_per_tr) {
            return Err(Error::Plan(format!(
                "n_pe = {} is not divisible by lines_per_tr = {}",
                p.n_pe, p.lines_per_tr
            )));
        }
        if !(p.receiver_bandwidth > 0.0 && p.receiver_bandwidth.is_finite()) {
            return Err(Error::Plan("receiver_bandwidth must be positive".into()));
        }
        let readout = p.n_fe as f64 / p.receiver_bandwidth;
        if !(p.echo_spacing >= readout) {
            return Err(Error::Plan(format!(
                "echo_spacing {} s is shorter than one readout ({} s)",
                p.echo_spacing, readout
            )));
        }
        let both_windows = 2.0 * p.lines_per_tr as f64 * p.echo_spacing;
        if !(p.repetition_time >= both_windows) {
            return Err(Error::Plan(format!(
                "repetition_time {} s cannot hold two windows of {} lines ({} s)",
                p.repetition_time, p.lines_per_tr, both_windows
            )));
        }
        let tr_count = p.n_pe / p.lines_per_tr;
        Ok(Self { params, tr_count })
    }

    pub fn params(&self) -> &ScanParams {
        &self.params
    }
    pub fn n_fe(&self) -> usize {
        self.params.n_fe
    }
    pub fn n_pe(&self) -> usize {
        self.params.n_pe
    }
    pub fn n_sense(&self) -> usize {
        self.params.n_sense
    }
    /// Receive coil plus sensing coils.
    pub fn n_coils(&self) -> usize {
        self.params.n_sense + 1
    }
    pub fn nex(&self) -> usize {
        self.params.nex
    }
    pub fn lines_per_tr(&self) -> usize {
        self.params.lines_per_tr
    }
    pub fn tr_count(&self) -> usize {
        self.tr_count
    }
    pub fn receiver_bandwidth(&self) -> f64 {
        self.params.receiver_bandwidth
    }
    pub fn dwell_time(&self) -> f64 {
        1.0 / self.params.receiver_bandwidth
    }
    pub fn repetition_time(&self) -> f64 {
        self.params.repetition_time
    }
    pub fn echo_spacing(&self) -> f64 {
        self.params.echo_spacing
    }

    /// Lines per window over the whole scan.
    pub fn total_lines(&self) -> usize {
        self.params.nex * self.params.n_pe
    }

    /// Storage slot of an (average, pe-line) pair.
    pub fn slot(&self, average: usize, pe_line: usize) -> usize {
        average * self.params.n_pe + pe_line
    }

    /// Start time of a line in seconds from scan start. The characterization
    /// window follows the echo train inside the same TR.
    pub fn line_start_time(&self, idx: LineIndex, window: Window) -> f64 {
        let tr_global = idx.average * self.tr_count + idx.tr;
        let window_offset = match window {
            Window::Mri => 0.0,
            Window::Emi => self.params.lines_per_tr as f64 * self.params.echo_spacing,
        };
        tr_global as f64 * self.params.repetition_time + window_offset + idx.echo as f64 * self.params.echo_spacing
    }

    /// All lines in acquisition order: averages outermost, then TRs, then
    /// echoes. Echo `e` of TR `t` samples phase-encode line `e * tr_count + t`,
    /// so each echo position covers one contiguous k-space segment.
    pub fn index_lines(&self) -> Vec<LineIndex> {
        let mut out = Vec::with_capacity(self.total_lines());
        for average in 0..self.params.nex {
            for tr in 0..self.tr_count {
                for echo in 0..self.params.lines_per_tr {
                    out.push(LineIndex { average, tr, echo, pe_line: echo * self.tr_count + tr });
                }
            }
        }
        out
    }
}

/// Free-function form of [`ScanPlan::index_lines`].
pub fn index_lines(plan: &ScanPlan) -> Vec<LineIndex> {
    plan.index_lines()
}

/// Lines recorded simultaneously by the receive coil and every sensing coil.
#[derive(Debug, Clone, PartialEq)]
pub struct CoilLines {
    pub receive: ComplexLine,
    pub sensing: Vec<ComplexLine>,
}

/// Both windows of a full scan, stored by `(average, pe_line)` slot.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiCoilDataset {
    plan: ScanPlan,
    scan_id: u64,
    provenance: String,
    mri: Vec<CoilLines>,
    emi: Vec<CoilLines>,
}

impl MultiCoilDataset {
    pub fn new(
        plan: ScanPlan,
        scan_id: u64,
        provenance: impl Into<String>,
        mri: Vec<CoilLines>,
        emi: Vec<CoilLines>,
    ) -> Result<Self> {
        let expected = plan.total_lines();
        for (name, window) in [("MRI", &mri), ("EMI", &emi)] {
            if window.len() != expected {
                return Err(Error::Shape(format!(
                    "{name} window has {} entries, plan requires {expected}",
                    window.len()
                )));
            }
            for (slot, entry) in window.iter().enumerate() {
                if entry.sensing.len() != plan.n_sense() {
                    return Err(Error::Shape(format!(
                        "{name} slot {slot}: {} sensing lines, plan requires {}",
                        entry.sensing.len(),
                        plan.n_sense()
                    )));
                }
                let all = std::iter::once(&entry.receive).chain(&entry.sensing);
                if let Some(bad) = all.into_iter().find(|l| l.len() != plan.n_fe()) {
                    return Err(Error::Shape(format!(
                        "{name} slot {slot}: line of {} samples, plan requires {}",
                        bad.len(),
                        plan.n_fe()
                    )));
                }
            }
        }
        Ok(Self { plan, scan_id, provenance: provenance.into(), mri, emi })
    }

    pub fn plan(&self) -> &ScanPlan {
        &self.plan
    }
    pub fn scan_id(&self) -> u64 {
        self.scan_id
    }
    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn window(&self, window: Window) -> &[CoilLines] {
        match window {
            Window::Mri => &self.mri,
            Window::Emi => &self.emi,
        }
    }

    pub fn window_mut(&mut self, window: Window) -> &mut [CoilLines] {
        match window {
            Window::Mri => &mut self.mri,
            Window::Emi => &mut self.emi,
        }
    }

    pub fn entry(&self, window: Window, average: usize, pe_line: usize) -> &CoilLines {
        &self.window(window)[self.plan.slot(average, pe_line)]
    }

    /// Receive-coil k-space of one window and average, rows = PE lines.
    pub fn receive_kspace(&self, window: Window, average: usize) -> ImageVolume {
        let (rows, cols) = (self.plan.n_pe(), self.plan.n_fe());
        let mut data = Vec::with_capacity(rows * cols);
        for pe in 0..rows {
            data.extend_from_slice(self.entry(window, average, pe).receive.samples());
        }
        ImageVolume { rows, cols, data }
    }

    pub fn with_scan_id(mut self, scan_id: u64) -> Self {
        self.scan_id = scan_id;
        self
    }
}

/// Dense 2D complex grid, row-major with `rows = n_pe` and `cols = n_fe`.
/// Holds both images and k-space.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageVolume {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl ImageVolume {
    pub fn new(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(Error::Shape(format!("{} values cannot form a {rows}x{cols} grid", data.len())));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![Complex64::new(0.0, 0.0); rows * cols] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn cols(&self) -> usize {
        self.cols
    }
    pub fn data(&self) -> &[Complex64] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }
    pub fn row(&self, r: usize) -> &[Complex64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        self.data[r * self.cols + c]
    }
    pub fn energy(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }
}
