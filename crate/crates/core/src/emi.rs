//! Complex-baseband interference emitters and mid-scan change events.
//!
//! Emission is a pure function of the source description, the line start
//! time and the line's emission index. Random content (broadband noise,
//! per-line phase jumps) comes from a substream keyed by `(seed, index)`, so
//! lines can be generated in any order with identical results.

use std::collections::HashSet;
use std::f64::consts::TAU;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::plan::ComplexLine;
use crate::rng::{substream, Domain};

/// Stepped-frequency sweep. The generator dwells on each of `n_points`
/// uniformly spaced frequencies for `cycle_period / n_points` seconds and
/// restarts at the lowest frequency every cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub center_offset: f64,
    pub span: f64,
    pub n_points: usize,
    pub cycle_period: f64,
}

impl Sweep {
    pub fn step_duration(&self) -> f64 {
        self.cycle_period / self.n_points as f64
    }

    fn step_hz(&self) -> f64 {
        self.span / (self.n_points - 1) as f64
    }

    pub fn frequency_of_step(&self, step: usize) -> f64 {
        self.center_offset - self.span / 2.0 + step as f64 * self.step_hz()
    }

    /// Frequency in effect at time `t`.
    pub fn instantaneous_frequency(&self, t: f64) -> f64 {
        let tau = t.rem_euclid(self.cycle_period);
        let step = ((tau / self.step_duration()).floor() as usize).min(self.n_points - 1);
        self.frequency_of_step(step)
    }

    /// Accumulated phase in turns (cycles) at time `t`, continuous in `t`.
    fn phase_turns(&self, t: f64) -> f64 {
        let cycles = (t / self.cycle_period).floor();
        let tau = t - cycles * self.cycle_period;
        let dt = self.step_duration();
        let step = ((tau / dt).floor() as usize).min(self.n_points - 1);
        let f0 = self.frequency_of_step(0);
        // mean of the uniform grid is the center, so a full cycle is T * center
        let per_cycle = (self.cycle_period * self.center_offset).rem_euclid(1.0);
        let whole = (cycles * per_cycle).rem_euclid(1.0);
        let j = step as f64;
        let completed = dt * (j * f0 + self.step_hz() * j * (j - 1.0) / 2.0);
        whole + completed + self.frequency_of_step(step) * (tau - j * dt)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SourceKind {
    /// Single tone at `freq_offset` Hz from the Larmor frequency.
    Narrowband {
        freq_offset: f64,
    },
    /// Complex white Gaussian noise; when `bandwidth` is set and narrower
    /// than the receiver bandwidth it is shaped by a moving-average FIR.
    Broadband {
        bandwidth: Option<f64>,
    },
    Swept(Sweep),
    /// Sum of child sources. The parent amplitude scales every child.
    Composite(Vec<EmiSource>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmiSource {
    pub kind: SourceKind,
    /// Tone amplitude, or the RMS of complex noise for broadband sources.
    pub amplitude: f64,
    pub phase0: f64,
    pub seed: u64,
    /// When false, tones restart with a random phase on every line.
    pub phase_coherent_across_lines: bool,
}

impl EmiSource {
    pub fn narrowband(amplitude: f64, freq_offset: f64, phase0: f64) -> Self {
        Self::with_kind(SourceKind::Narrowband { freq_offset }, amplitude, phase0, 0)
    }

    pub fn broadband(amplitude: f64, bandwidth: Option<f64>, seed: u64) -> Self {
        Self::with_kind(SourceKind::Broadband { bandwidth }, amplitude, 0.0, seed)
    }

    pub fn swept(amplitude: f64, sweep: Sweep, phase0: f64) -> Self {
        Self::with_kind(SourceKind::Swept(sweep), amplitude, phase0, 0)
    }

    pub fn composite(amplitude: f64, parts: Vec<EmiSource>) -> Self {
        Self::with_kind(SourceKind::Composite(parts), amplitude, 0.0, 0)
    }

    fn with_kind(kind: SourceKind, amplitude: f64, phase0: f64, seed: u64) -> Self {
        Self { kind, amplitude, phase0, seed, phase_coherent_across_lines: true }
    }

    pub fn validate(&self, receiver_bandwidth: f64) -> Result<()> {
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return Err(Error::Source(format!("amplitude must be >= 0, got {}", self.amplitude)));
        }
        let nyquist = receiver_bandwidth / 2.0;
        match &self.kind {
            SourceKind::Narrowband { freq_offset } => {
                if !(freq_offset.abs() <= nyquist) {
                    return Err(Error::Source(format!("frequency offset {freq_offset} Hz outside +/-{nyquist} Hz")));
                }
            }
            SourceKind::Broadband { bandwidth } => {
                if let Some(b) = bandwidth {
                    if !(*b > 0.0) {
                        return Err(Error::Source("broadband bandwidth must be positive".into()));
                    }
                }
            }
            SourceKind::Swept(s) => {
                if s.n_points < 2 {
                    return Err(Error::Source("sweep needs at least 2 points".into()));
                }
                if !(s.cycle_period > 0.0) {
                    return Err(Error::Source("sweep cycle period must be positive".into()));
                }
                if !(s.span >= 0.0) {
                    return Err(Error::Source("sweep span must be >= 0".into()));
                }
                let lo = s.center_offset - s.span / 2.0;
                let hi = s.center_offset + s.span / 2.0;
                if lo < -nyquist || hi > nyquist {
                    return Err(Error::Source(format!("sweep [{lo}, {hi}] Hz exceeds +/-{nyquist} Hz")));
                }
            }
            SourceKind::Composite(parts) => {
                if parts.is_empty() {
                    return Err(Error::Source("composite source has no parts".into()));
                }
                for p in parts {
                    p.validate(receiver_bandwidth)?;
                }
            }
        }
        Ok(())
    }

    fn rescale(&mut self, factor: f64) {
        self.amplitude *= factor;
    }

    fn shift_frequency(&mut self, delta: f64) {
        match &mut self.kind {
            SourceKind::Narrowband { freq_offset } => *freq_offset += delta,
            SourceKind::Swept(s) => s.center_offset += delta,
            SourceKind::Broadband { .. } => {}
            SourceKind::Composite(parts) => parts.iter_mut().for_each(|p| p.shift_frequency(delta)),
        }
    }
}

/// Emit `n` samples starting at absolute time `t0`.
///
/// `line_index` selects the random substream; callers give every emitted
/// line a distinct index.
pub fn emit(source: &EmiSource, t0: f64, n: usize, dwell: f64, line_index: u64) -> Result<ComplexLine> {
    if n == 0 {
        return Err(Error::Source("cannot emit an empty line".into()));
    }
    if !(dwell > 0.0 && dwell.is_finite()) {
        return Err(Error::Source(format!("dwell must be positive, got {dwell}")));
    }
    let mut out = vec![Complex64::new(0.0, 0.0); n];
    accumulate(source, 1.0, t0, dwell, line_index, &mut out);
    ComplexLine::new(out, dwell)
}

fn line_phase(source: &EmiSource, line_index: u64) -> f64 {
    if source.phase_coherent_across_lines {
        source.phase0
    } else {
        let jump: f64 = substream(source.seed, Domain::LinePhase, line_index).random::<f64>();
        source.phase0 + TAU * jump
    }
}

fn accumulate(source: &EmiSource, scale: f64, t0: f64, dwell: f64, line_index: u64, out: &mut [Complex64]) {
    let amp = source.amplitude * scale;
    if amp == 0.0 {
        return;
    }
    match &source.kind {
        SourceKind::Narrowband { freq_offset } => {
            let phase = line_phase(source, line_index);
            for (k, z) in out.iter_mut().enumerate() {
                let t = t0 + k as f64 * dwell;
                // fractional turns keep the argument small for long scans
                let turns = (freq_offset * t).rem_euclid(1.0);
                *z += Complex64::from_polar(amp, TAU * turns + phase);
            }
        }
        SourceKind::Swept(sweep) => {
            let phase = line_phase(source, line_index);
            for (k, z) in out.iter_mut().enumerate() {
                let t = t0 + k as f64 * dwell;
                *z += Complex64::from_polar(amp, TAU * sweep.phase_turns(t) + phase);
            }
        }
        SourceKind::Broadband { bandwidth } => {
            let fs = 1.0 / dwell;
            let taps = match bandwidth {
                Some(b) if *b < fs => ((fs / b).round() as usize).max(1),
                _ => 1,
            };
            let mut rng = substream(source.seed, Domain::Broadband, line_index);
            let sd = amp / std::f64::consts::SQRT_2;
            let raw: Vec<Complex64> = (0..out.len() + taps - 1)
                .map(|_| {
                    let re: f64 = rng.sample(StandardNormal);
                    let im: f64 = rng.sample(StandardNormal);
                    Complex64::new(re * sd, im * sd)
                })
                .collect();
            let norm = 1.0 / (taps as f64).sqrt();
            for (k, z) in out.iter_mut().enumerate() {
                let s: Complex64 = raw[k..k + taps].iter().sum();
                *z += s * norm;
            }
        }
        SourceKind::Composite(parts) => {
            for p in parts {
                accumulate(p, amp, t0, dwell, line_index, out);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventAction {
    RescaleAmplitude(f64),
    ShiftFreq(f64),
    /// Route this source through the paths of coupling model `id` from now on.
    SwapCoupling(usize),
}

/// A change that takes effect at global line `at_line` (acquisition order)
/// and persists for the rest of the scan.
#[derive(Debug, Clone, PartialEq)]
pub struct ChangeEvent {
    pub at_line: usize,
    pub source: usize,
    pub action: EventAction,
}

/// Source parameters and coupling selection in effect from `line` onward.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioState {
    pub line: usize,
    pub sources: Vec<EmiSource>,
    /// Coupling model id per source.
    pub coupling: Vec<usize>,
}

impl ScenarioState {
    pub fn initial(sources: Vec<EmiSource>) -> Self {
        let coupling = vec![0; sources.len()];
        Self { line: 0, sources, coupling }
    }
}

/// Apply one event, producing the state used for lines `>= event.at_line`.
pub fn apply_event(state: &ScenarioState, event: &ChangeEvent) -> Result<ScenarioState> {
    if event.at_line < state.line {
        return Err(Error::Event(format!("event at line {} is before current line {}", event.at_line, state.line)));
    }
    if event.source >= state.sources.len() {
        return Err(Error::Event(format!("event references unknown source {}", event.source)));
    }
    let mut next = state.clone();
    next.line = event.at_line;
    let src = &mut next.sources[event.source];
    match event.action {
        EventAction::RescaleAmplitude(f) => {
            if !(f >= 0.0 && f.is_finite()) {
                return Err(Error::Event(format!("rescale factor must be >= 0, got {f}")));
            }
            src.rescale(f)
        }
        EventAction::ShiftFreq(d) => src.shift_frequency(d),
        EventAction::SwapCoupling(id) => next.coupling[event.source] = id,
    }
    Ok(next)
}

/// Piecewise-constant scenario state over the whole scan.
#[derive(Debug, Clone)]
pub struct Timeline {
    /// (first line, state) sorted by first line; the first entry starts at 0.
    segments: Vec<(usize, ScenarioState)>,
}

impl Timeline {
    /// Validate and fold `events` over `sources`. `n_coupling_models` bounds
    /// coupling ids referenced by swap events.
    pub fn build(
        sources: &[EmiSource],
        events: &[ChangeEvent],
        total_lines: usize,
        receiver_bandwidth: f64,
        n_coupling_models: usize,
    ) -> Result<Self> {
        for s in sources {
            s.validate(receiver_bandwidth)?;
        }
        let mut seen = HashSet::new();
        for e in events {
            if e.at_line >= total_lines {
                return Err(Error::Event(format!(
                    "event at line {} is past the end of the scan ({total_lines} lines)",
                    e.at_line
                )));
            }
            if !seen.insert((e.at_line, e.source)) {
                return Err(Error::Event(format!("duplicate event for source {} at line {}", e.source, e.at_line)));
            }
            if let EventAction::SwapCoupling(id) = e.action {
                if id >= n_coupling_models {
                    return Err(Error::Event(format!("unknown coupling model {id}")));
                }
            }
        }
        let mut sorted: Vec<&ChangeEvent> = events.iter().collect();
        sorted.sort_by_key(|e| (e.at_line, e.source));

        let mut segments = vec![(0, ScenarioState::initial(sources.to_vec()))];
        for e in sorted {
            let current = &segments.last().expect("non-empty").1;
            let next = apply_event(current, e)?;
            for s in &next.sources {
                s.validate(receiver_bandwidth)?;
            }
            if segments.last().expect("non-empty").0 == e.at_line {
                segments.last_mut().expect("non-empty").1 = next;
            } else {
                segments.push((e.at_line, next));
            }
        }
        Ok(Self { segments })
    }

    pub fn state_at(&self, line: usize) -> &ScenarioState {
        let pos = self.segments.partition_point(|(start, _)| *start <= line);
        &self.segments[pos - 1].1
    }
}
