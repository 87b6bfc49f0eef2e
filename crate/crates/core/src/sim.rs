//! Scenario simulation: interference coupling into every coil, a digital
//! phantom for the MRI signal and assembly of the two-window dataset.
//!
//! Coil 0 is the receive coil; coils `1..=n_sense` are sensing coils.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::emi::{emit, ChangeEvent, EmiSource, Timeline};
use crate::error::{Error, Result};
use crate::plan::{CoilLines, ComplexLine, ImageVolume, MultiCoilDataset, ScanPlan, Window};
use crate::recon;
use crate::rng::{fnv1a, substream, Domain};

/// Transfer path from one source to one coil.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingPath {
    pub gain: Complex64,
    /// Whole-sample delay.
    pub delay: usize,
    pub fir: Option<Vec<Complex64>>,
    /// Soft magnitude limit, receiver units.
    pub saturation: Option<f64>,
}

impl CouplingPath {
    pub fn gain(gain: Complex64) -> Self {
        Self { gain, delay: 0, fir: None, saturation: None }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gain.re.is_finite() && self.gain.im.is_finite()) {
            return Err(Error::Scenario("coupling gain must be finite".into()));
        }
        if matches!(&self.fir, Some(t) if t.is_empty()) {
            return Err(Error::Scenario("FIR taps must not be empty".into()));
        }
        if let Some(s) = self.saturation {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Scenario(format!("saturation level must be positive, got {s}")));
            }
        }
        Ok(())
    }

    /// Leading samples of history this path reads.
    pub fn history(&self) -> usize {
        self.delay + self.fir.as_ref().map_or(0, |t| t.len() - 1)
    }
}

/// Coupling paths for every (source, coil) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingModel {
    n_sources: usize,
    n_coils: usize,
    paths: Vec<Option<CouplingPath>>,
}

impl CouplingModel {
    pub fn new(n_sources: usize, n_coils: usize) -> Self {
        Self { n_sources, n_coils, paths: vec![None; n_sources * n_coils] }
    }

    /// Every path is a plain complex gain, `gains[source][coil]`.
    pub fn from_gains(gains: &[Vec<Complex64>]) -> Self {
        let n_coils = gains.first().map_or(0, |g| g.len());
        let mut m = Self::new(gains.len(), n_coils);
        for (s, row) in gains.iter().enumerate() {
            for (c, g) in row.iter().enumerate() {
                m.set(s, c, CouplingPath::gain(*g));
            }
        }
        m
    }

    pub fn n_sources(&self) -> usize {
        self.n_sources
    }
    pub fn n_coils(&self) -> usize {
        self.n_coils
    }

    pub fn set(&mut self, source: usize, coil: usize, path: CouplingPath) {
        self.paths[source * self.n_coils + coil] = Some(path);
    }

    pub fn path(&self, source: usize, coil: usize) -> Option<&CouplingPath> {
        self.paths.get(source * self.n_coils + coil).and_then(|p| p.as_ref())
    }

    pub fn path_mut(&mut self, source: usize, coil: usize) -> Option<&mut CouplingPath> {
        self.paths.get_mut(source * self.n_coils + coil).and_then(|p| p.as_mut())
    }

    fn max_history(&self) -> usize {
        self.paths.iter().flatten().map(CouplingPath::history).max().unwrap_or(0)
    }
}

fn couple_samples(input: &[Complex64], path: &CouplingPath) -> Vec<Complex64> {
    let n = input.len();
    let mut y = vec![Complex64::new(0.0, 0.0); n];
    for k in path.delay..n {
        y[k] = path.gain * input[k - path.delay];
    }
    if let Some(taps) = &path.fir {
        let x = y;
        y = (0..n).map(|k| taps.iter().enumerate().take(k + 1).map(|(j, h)| h * x[k - j]).sum()).collect();
    }
    if let Some(level) = path.saturation {
        for z in &mut y {
            let m = z.norm();
            if m > 0.0 {
                *z *= level * (m / level).tanh() / m;
            }
        }
    }
    y
}

/// `saturate(fir * delay(gain * input))`, same length as the input. The
/// delay shifts zeros in at the head and the FIR sees zero history.
pub fn couple(line: &ComplexLine, path: &CouplingPath) -> Result<ComplexLine> {
    path.validate()?;
    ComplexLine::new(couple_samples(line.samples(), path), line.dwell_time())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PhantomShape {
    /// Uniform disk centered on the grid; radius in pixels.
    Disk { radius: f64 },
    /// Modified Shepp-Logan head.
    SheppLike,
    /// Single unit pixel at the grid center.
    Delta,
}

/// Digital phantom with its cached k-space.
#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub image: ImageVolume,
    pub kspace: ImageVolume,
}

// (intensity, a, b, x0, y0, phi degrees) on [-1, 1]^2
const SHEPP: [(f64, f64, f64, f64, f64, f64); 10] = [
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
    (-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
    (-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
    (0.1, 0.21, 0.25, 0.0, 0.35, 0.0),
    (0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
    (0.1, 0.046, 0.046, 0.0, -0.1, 0.0),
    (0.1, 0.046, 0.023, -0.08, -0.605, 0.0),
    (0.1, 0.023, 0.023, 0.0, -0.606, 0.0),
    (0.1, 0.023, 0.046, 0.06, -0.605, 0.0),
];

pub fn synthesize_phantom(shape: PhantomShape, n_pe: usize, n_fe: usize) -> Result<Phantom> {
    if n_pe < 8 || n_fe < 8 {
        return Err(Error::Scenario(format!("phantom needs at least 8x8 pixels, got {n_pe}x{n_fe}")));
    }
    let (cy, cx) = ((n_pe / 2) as f64, (n_fe / 2) as f64);
    let mut image = ImageVolume::zeros(n_pe, n_fe);
    for r in 0..n_pe {
        for c in 0..n_fe {
            let (dy, dx) = (r as f64 - cy, c as f64 - cx);
            let v = match shape {
                PhantomShape::Disk { radius } => {
                    if radius > 0.0 && dy * dy + dx * dx <= radius * radius {
                        1.0
                    } else {
                        0.0
                    }
                }
                PhantomShape::Delta => {
                    if dy == 0.0 && dx == 0.0 {
                        1.0
                    } else {
                        0.0
                    }
                }
                PhantomShape::SheppLike => {
                    let (y, x) = (-dy / cy, dx / cx);
                    let v: f64 = SHEPP
                        .iter()
                        .filter(|(_, a, b, x0, y0, phi)| {
                            let (s, co) = phi.to_radians().sin_cos();
                            let (u, w) = (x - x0, y - y0);
                            let (xr, yr) = (u * co + w * s, -u * s + w * co);
                            (xr / a).powi(2) + (yr / b).powi(2) <= 1.0
                        })
                        .map(|e| e.0)
                        .sum();
                    v.max(0.0)
                }
            };
            image.data_mut()[r * n_fe + c] = Complex64::new(v, 0.0);
        }
    }
    let kspace = recon::forward(&image);
    Ok(Phantom { image, kspace })
}

impl Phantom {
    pub fn scaled(mut self, factor: f64) -> Self {
        for z in self.image.data_mut().iter_mut().chain(self.kspace.data_mut()) {
            *z *= factor;
        }
        self
    }
}

/// Everything needed to simulate one scan.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub plan: ScanPlan,
    pub phantom: Phantom,
    pub sources: Vec<EmiSource>,
    /// Model 0 is in effect at scan start; others are reachable through
    /// swap-coupling events.
    pub couplings: Vec<CouplingModel>,
    pub events: Vec<ChangeEvent>,
    /// Per-component SD of thermal noise on every coil.
    pub thermal_sigma: f64,
    pub seed: u64,
    /// Fraction of the MRI signal seen by sensing coils.
    pub sensing_leakage: f64,
    pub provenance: String,
}

impl Scenario {
    /// The same scan with every interference source silenced: the shielded
    /// reference. Thermal noise is unchanged.
    pub fn shielded(&self) -> Scenario {
        let mut s = self.clone();
        for src in &mut s.sources {
            src.amplitude = 0.0;
        }
        s.provenance = format!("{} [EMI off]", self.provenance);
        s
    }

    /// Stable identifier derived from the provenance text and seed.
    pub fn scan_id(&self) -> u64 {
        let mut bytes = self.provenance.as_bytes().to_vec();
        bytes.extend_from_slice(&self.seed.to_le_bytes());
        fnv1a(&bytes)
    }

    pub fn validate(&self) -> Result<()> {
        let (n_src, n_coils) = (self.sources.len(), self.plan.n_coils());
        if self.couplings.is_empty() && n_src > 0 {
            return Err(Error::Scenario("no coupling model".into()));
        }
        if !(self.thermal_sigma >= 0.0 && self.thermal_sigma.is_finite()) {
            return Err(Error::Scenario("thermal sigma must be >= 0".into()));
        }
        if self.phantom.kspace.rows() != self.plan.n_pe() || self.phantom.kspace.cols() != self.plan.n_fe() {
            return Err(Error::Scenario("phantom size does not match the plan".into()));
        }
        for (id, m) in self.couplings.iter().enumerate() {
            if m.n_coils() != n_coils {
                return Err(Error::Scenario(format!(
                    "coupling model {id} has {} coils, plan has {n_coils}",
                    m.n_coils()
                )));
            }
        }
        // model 0 must be complete; alternates only for the sources that swap to them
        let mut required: Vec<(usize, usize)> = (0..n_src).map(|s| (0, s)).collect();
        for e in &self.events {
            if let crate::emi::EventAction::SwapCoupling(id) = e.action {
                required.push((id, e.source));
            }
        }
        for (id, s) in required {
            let m = self.couplings.get(id).ok_or_else(|| Error::Scenario(format!("unknown coupling model {id}")))?;
            for c in 0..n_coils {
                let p = m.path(s, c).ok_or_else(|| {
                    Error::Scenario(format!("coupling model {id} has no path from source {s} to coil {c}"))
                })?;
                p.validate()?;
            }
        }
        Ok(())
    }
}

/// Simulate both acquisition windows of a scan.
///
/// For each line, every source is emitted once with enough leading history
/// for the longest path, coupled into every coil and summed. The MRI-window
/// receive line adds the phantom's k-space row; sensing coils add only
/// `sensing_leakage` times that row. Thermal noise is drawn per (line,
/// window, coil) from `seed` alone, so silencing the sources leaves it
/// unchanged.
pub fn acquire(scenario: &Scenario) -> Result<MultiCoilDataset> {
    scenario.validate()?;
    let plan = &scenario.plan;
    let timeline = Timeline::build(
        &scenario.sources,
        &scenario.events,
        plan.total_lines(),
        plan.receiver_bandwidth(),
        scenario.couplings.len(),
    )?;
    let n = plan.n_fe();
    let dwell = plan.dwell_time();
    let n_coils = plan.n_coils();
    let pad = scenario.couplings.iter().map(CouplingModel::max_history).max().unwrap_or(0);

    let empty = CoilLines {
        receive: ComplexLine::zeros(n, dwell),
        sensing: vec![ComplexLine::zeros(n, dwell); plan.n_sense()],
    };
    let mut mri = vec![empty.clone(); plan.total_lines()];
    let mut emi = vec![empty; plan.total_lines()];

    for (g, idx) in plan.index_lines().into_iter().enumerate() {
        let state = timeline.state_at(g);
        let slot = plan.slot(idx.average, idx.pe_line);
        for window in Window::BOTH {
            let mut coils = vec![vec![Complex64::new(0.0, 0.0); n]; n_coils];
            let t0 = plan.line_start_time(idx, window) - pad as f64 * dwell;
            let emission_index = (2 * g + window.ordinal()) as u64;
            for (s, src) in state.sources.iter().enumerate() {
                if src.amplitude == 0.0 {
                    continue;
                }
                let e = emit(src, t0, n + pad, dwell, emission_index)?;
                let model = &scenario.couplings[state.coupling[s]];
                for (c, coil) in coils.iter_mut().enumerate() {
                    let path = model.path(s, c).expect("validated");
                    let y = couple_samples(e.samples(), path);
                    for (acc, v) in coil.iter_mut().zip(&y[pad..]) {
                        *acc += v;
                    }
                }
            }
            if window == Window::Mri {
                let row = scenario.phantom.kspace.row(idx.pe_line);
                for (c, coil) in coils.iter_mut().enumerate() {
                    let w = if c == 0 { 1.0 } else { scenario.sensing_leakage };
                    if w != 0.0 {
                        for (acc, k) in coil.iter_mut().zip(row) {
                            *acc += k * w;
                        }
                    }
                }
            }
            if scenario.thermal_sigma > 0.0 {
                for (c, coil) in coils.iter_mut().enumerate() {
                    let stream = ((2 * g + window.ordinal()) * n_coils + c) as u64;
                    let mut rng = substream(scenario.seed, Domain::Thermal, stream);
                    for z in coil.iter_mut() {
                        let re: f64 = rng.sample(StandardNormal);
                        let im: f64 = rng.sample(StandardNormal);
                        *z += Complex64::new(re, im) * scenario.thermal_sigma;
                    }
                }
            }
            let mut lines = coils.into_iter().map(|v| ComplexLine::new(v, dwell));
            let receive = lines.next().expect("receive coil")?;
            let sensing = lines.collect::<Result<Vec<_>>>()?;
            let target = match window {
                Window::Mri => &mut mri,
                Window::Emi => &mut emi,
            };
            target[slot] = CoilLines { receive, sensing };
        }
    }
    MultiCoilDataset::new(plan.clone(), scenario.scan_id(), scenario.provenance.clone(), mri, emi)
}
