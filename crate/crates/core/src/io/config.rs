//! `.cfg` scenario files.
//!
//! Line-oriented `[section]` headers followed by `key = value` pairs; `#`
//! starts a comment. Sections:
//!
//! ```text
//! [plan]           n_fe n_pe n_sense nex (required), lines_per_tr
//!                  receiver_bandwidth repetition_time echo_spacing
//! [phantom]        shape = shepp | disk | delta, radius (disk), scale
//! [noise]          thermal_sigma (required), seed, sensing_leakage
//! [source.N]       kind = narrowband | broadband | swept, amplitude,
//!                  freq_offset phase coherent (narrowband),
//!                  bandwidth seed (broadband),
//!                  center_offset span points cycle phase coherent (swept)
//! [coupling.M.S]   path set of model M for source S:
//!                  gains = <mag>@<deg> per coil, receive first (required)
//!                  delays = <samples> per coil
//!                  saturation = <level> | none per coil
//!                  fir.K = <re>,<im> ... taps for coil K
//! [events]         event = <line> <source> rescale <factor>
//!                  event = <line> <source> shift <hz>
//!                  event = <line> <source> swap <model>
//! [train]          epochs batch lr seed channel_divisor
//!                  bn_stats = running | batch
//! ```
//!
//! Sources are numbered from 0 without gaps, as are coupling models. Every
//! error carries the line and column it refers to.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use num_complex::Complex64;

use crate::emi::{ChangeEvent, EmiSource, EventAction, Sweep, Timeline};
use crate::error::{Error, Result};
use crate::neural::{CnnConfig, InferenceStats, TrainHyper};
use crate::plan::{make_scan_plan, ScanParams};
use crate::sim::{synthesize_phantom, CouplingModel, CouplingPath, PhantomShape, Scenario};

/// Network training settings carried by a scenario file.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub hyper: TrainHyper,
    /// Hidden channel counts are divided by this; 1 is the full network.
    pub channel_divisor: usize,
    pub bn_stats: InferenceStats,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self { hyper: TrainHyper::default(), channel_divisor: 1, bn_stats: InferenceStats::Running }
    }
}

impl TrainSettings {
    pub fn cnn_config(&self, n_sense: usize) -> CnnConfig {
        if self.channel_divisor <= 1 {
            CnnConfig::full(n_sense)
        } else {
            CnnConfig::scaled(n_sense, self.channel_divisor)
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub train: TrainSettings,
}

#[derive(Debug)]
struct Entry {
    line: usize,
    key: String,
    key_col: usize,
    value: String,
    value_col: usize,
}

#[derive(Debug)]
struct Section {
    name: String,
    line: usize,
    col: usize,
    entries: Vec<Entry>,
}

struct Ctx<'a> {
    path: &'a str,
}

impl Ctx<'_> {
    fn err(&self, line: usize, column: usize, message: impl Into<String>) -> Error {
        Error::Config { path: self.path.to_string(), line, column, message: message.into() }
    }

    fn at(&self, e: &Entry, message: impl Into<String>) -> Error {
        self.err(e.line, e.value_col, message)
    }

    fn num<T: FromStr>(&self, e: &Entry) -> Result<T> {
        e.value.parse().map_err(|_| self.at(e, format!("`{}` is not a valid value for {}", e.value, e.key)))
    }

    fn token<T: FromStr>(&self, e: &Entry, (col, tok): (usize, &str), what: &str) -> Result<T> {
        tok.parse().map_err(|_| self.err(e.line, col, format!("`{tok}` is not a valid {what}")))
    }
}

/// Whitespace-separated tokens of a value with their 1-based columns.
fn tokens(e: &Entry) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, ch) in e.value.char_indices().chain(std::iter::once((e.value.len(), ' '))) {
        match (ch.is_whitespace(), start) {
            (false, None) => start = Some(i),
            (true, Some(s)) => {
                out.push((e.value_col + e.value[..s].chars().count(), &e.value[s..i]));
                start = None;
            }
            _ => {}
        }
    }
    out
}

impl Section {
    fn get(&self, key: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.key == key)
    }

    fn require(&self, ctx: &Ctx, key: &str) -> Result<&Entry> {
        self.get(key).ok_or_else(|| ctx.err(self.line, self.col, format!("[{}] is missing `{key}`", self.name)))
    }

    fn num_or<T: FromStr>(&self, ctx: &Ctx, key: &str, default: T) -> Result<T> {
        self.get(key).map_or(Ok(default), |e| ctx.num(e))
    }

    fn num_req<T: FromStr>(&self, ctx: &Ctx, key: &str) -> Result<T> {
        ctx.num(self.require(ctx, key)?)
    }

    fn bool_or(&self, ctx: &Ctx, key: &str, default: bool) -> Result<bool> {
        match self.get(key) {
            None => Ok(default),
            Some(e) => match e.value.as_str() {
                "true" | "yes" | "1" => Ok(true),
                "false" | "no" | "0" => Ok(false),
                v => Err(ctx.at(e, format!("`{v}` is not a boolean"))),
            },
        }
    }

    fn check_keys(&self, ctx: &Ctx, allowed: &[&str], allow_fir: bool) -> Result<()> {
        for e in &self.entries {
            let fir = allow_fir && e.key.strip_prefix("fir.").is_some_and(|k| k.parse::<usize>().is_ok());
            if !allowed.contains(&e.key.as_str()) && !fir {
                return Err(ctx.err(e.line, e.key_col, format!("unknown key `{}` in [{}]", e.key, self.name)));
            }
        }
        Ok(())
    }
}

fn lex(text: &str, ctx: &Ctx) -> Result<Vec<Section>> {
    let mut sections: Vec<Section> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("");
        let trimmed = content.trim();
        if trimmed.is_empty() {
            continue;
        }
        let lead = content.len() - content.trim_start().len();
        let col = raw[..lead].chars().count() + 1;
        if let Some(rest) = trimmed.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| {
                    ctx.err(line, col + trimmed.chars().count(), "expected `]` to close the section header")
                })?
                .trim();
            if name.is_empty() {
                return Err(ctx.err(line, col, "empty section name"));
            }
            if sections.iter().any(|s| s.name == name) {
                return Err(ctx.err(line, col, format!("section [{name}] appears twice")));
            }
            sections.push(Section { name: name.to_string(), line, col, entries: Vec::new() });
            continue;
        }
        let eq = trimmed.find('=').ok_or_else(|| ctx.err(line, col, "expected `key = value` or `[section]`"))?;
        let key = trimmed[..eq].trim();
        let after = &trimmed[eq + 1..];
        let value = after.trim();
        if key.is_empty() || key.contains(char::is_whitespace) {
            return Err(ctx.err(line, col, format!("invalid key `{key}`")));
        }
        let value_col = col + trimmed[..eq + 1].chars().count() + (after.len() - after.trim_start().len());
        if value.is_empty() {
            return Err(ctx.err(line, value_col, format!("`{key}` has no value")));
        }
        let section = sections.last_mut().ok_or_else(|| ctx.err(line, col, "key outside of any section"))?;
        if key != "event" && section.entries.iter().any(|e| e.key == key) {
            return Err(ctx.err(line, col, format!("`{key}` is set twice in [{}]", section.name)));
        }
        section.entries.push(Entry { line, key: key.to_string(), key_col: col, value: value.to_string(), value_col });
    }
    Ok(sections)
}

/// Polar gain `mag@deg`.
fn polar(ctx: &Ctx, e: &Entry, (col, tok): (usize, &str)) -> Result<Complex64> {
    let (m, d) = tok
        .split_once('@')
        .ok_or_else(|| ctx.err(e.line, col, format!("gain `{tok}` must be written <magnitude>@<degrees>")))?;
    let m: f64 = ctx.token(e, (col, m), "magnitude")?;
    let d: f64 = ctx.token(e, (col, d), "phase")?;
    Ok(Complex64::from_polar(m, d.to_radians()))
}

fn indexed<'a>(sections: &'a [Section], prefix: &str) -> BTreeMap<Vec<usize>, &'a Section> {
    sections
        .iter()
        .filter_map(|s| {
            let rest = s.name.strip_prefix(prefix)?.strip_prefix('.')?;
            let idx: Option<Vec<usize>> = rest.split('.').map(|p| p.parse().ok()).collect();
            Some((idx.unwrap_or_default(), s))
        })
        .collect()
}

fn parse_source(ctx: &Ctx, s: &Section, index: usize) -> Result<EmiSource> {
    let kind = s.require(ctx, "kind")?;
    let amplitude: f64 = s.num_req(ctx, "amplitude")?;
    let mut src = match kind.value.as_str() {
        "narrowband" => {
            s.check_keys(ctx, &["kind", "amplitude", "freq_offset", "phase", "coherent"], false)?;
            EmiSource::narrowband(amplitude, s.num_req(ctx, "freq_offset")?, s.num_or(ctx, "phase", 0.0)?)
        }
        "broadband" => {
            s.check_keys(ctx, &["kind", "amplitude", "bandwidth", "seed"], false)?;
            let bw = s.get("bandwidth").map(|e| ctx.num(e)).transpose()?;
            EmiSource::broadband(amplitude, bw, s.num_or(ctx, "seed", index as u64)?)
        }
        "swept" => {
            s.check_keys(
                ctx,
                &["kind", "amplitude", "center_offset", "span", "points", "cycle", "phase", "coherent"],
                false,
            )?;
            let sweep = Sweep {
                center_offset: s.num_or(ctx, "center_offset", 0.0)?,
                span: s.num_req(ctx, "span")?,
                n_points: s.num_req(ctx, "points")?,
                cycle_period: s.num_req(ctx, "cycle")?,
            };
            EmiSource::swept(amplitude, sweep, s.num_or(ctx, "phase", 0.0)?)
        }
        other => return Err(ctx.at(kind, format!("unknown source kind `{other}`"))),
    };
    src.phase_coherent_across_lines = s.bool_or(ctx, "coherent", true)?;
    Ok(src)
}

fn parse_paths(ctx: &Ctx, s: &Section, n_coils: usize) -> Result<Vec<CouplingPath>> {
    s.check_keys(ctx, &["gains", "delays", "saturation"], true)?;
    let gains_e = s.require(ctx, "gains")?;
    let gains = tokens(gains_e);
    if gains.len() != n_coils {
        return Err(ctx.at(gains_e, format!("{} gains given, the plan has {n_coils} coils", gains.len())));
    }
    let mut paths =
        gains.into_iter().map(|t| polar(ctx, gains_e, t).map(CouplingPath::gain)).collect::<Result<Vec<_>>>()?;
    if let Some(e) = s.get("delays") {
        let toks = tokens(e);
        if toks.len() != n_coils {
            return Err(ctx.at(e, format!("{} delays given, the plan has {n_coils} coils", toks.len())));
        }
        for (p, t) in paths.iter_mut().zip(toks) {
            p.delay = ctx.token(e, t, "delay in samples")?;
        }
    }
    if let Some(e) = s.get("saturation") {
        let toks = tokens(e);
        if toks.len() != n_coils {
            return Err(ctx.at(e, format!("{} saturation levels given, the plan has {n_coils} coils", toks.len())));
        }
        for (p, t) in paths.iter_mut().zip(toks) {
            p.saturation = if t.1 == "none" { None } else { Some(ctx.token(e, t, "saturation level")?) };
        }
    }
    for e in s.entries.iter().filter(|e| e.key.starts_with("fir.")) {
        let coil: usize = e.key[4..].parse().expect("checked by check_keys");
        if coil >= n_coils {
            return Err(ctx.err(e.line, e.key_col, format!("coil {coil} does not exist")));
        }
        let taps = tokens(e)
            .into_iter()
            .map(|(col, tok)| {
                let (re, im) = tok
                    .split_once(',')
                    .ok_or_else(|| ctx.err(e.line, col, format!("tap `{tok}` must be <re>,<im>")))?;
                Ok(Complex64::new(ctx.token(e, (col, re), "tap")?, ctx.token(e, (col, im), "tap")?))
            })
            .collect::<Result<Vec<_>>>()?;
        paths[coil].fir = Some(taps);
    }
    for (p, e) in paths.iter().zip(std::iter::repeat(gains_e)) {
        p.validate().map_err(|err| ctx.at(e, err.to_string()))?;
    }
    Ok(paths)
}

fn parse_event(ctx: &Ctx, e: &Entry) -> Result<ChangeEvent> {
    let toks = tokens(e);
    if toks.len() != 4 {
        return Err(ctx.at(e, "event must be `<line> <source> rescale|shift|swap <value>`"));
    }
    let at_line = ctx.token(e, toks[0], "line index")?;
    let source = ctx.token(e, toks[1], "source index")?;
    let action = match toks[2].1 {
        "rescale" => EventAction::RescaleAmplitude(ctx.token(e, toks[3], "factor")?),
        "shift" => EventAction::ShiftFreq(ctx.token(e, toks[3], "frequency shift")?),
        "swap" => EventAction::SwapCoupling(ctx.token(e, toks[3], "coupling model")?),
        other => return Err(ctx.err(e.line, toks[2].0, format!("unknown event action `{other}`"))),
    };
    Ok(ChangeEvent { at_line, source, action })
}

/// Parse scenario text. `name` labels errors and becomes the scenario's
/// provenance.
pub fn parse_config(text: &str, name: &str) -> Result<ScenarioConfig> {
    let ctx = Ctx { path: name };
    let sections = lex(text, &ctx)?;
    for s in &sections {
        let base = s.name.split('.').next().unwrap_or("");
        let parts = s.name.split('.').count();
        let known = match base {
            "plan" | "phantom" | "noise" | "events" | "train" => parts == 1,
            "source" => parts == 2,
            "coupling" => parts == 3,
            _ => false,
        };
        let numeric = s.name.split('.').skip(1).all(|p| p.parse::<usize>().is_ok());
        if !known || !numeric {
            return Err(ctx.err(s.line, s.col, format!("unknown section [{}]", s.name)));
        }
    }
    let find = |n: &str| sections.iter().find(|s| s.name == n);
    let missing = |n: &str| ctx.err(1, 1, format!("required section [{n}] is missing"));

    let plan_s = find("plan").ok_or_else(|| missing("plan"))?;
    plan_s.check_keys(
        &ctx,
        &["n_fe", "n_pe", "n_sense", "nex", "lines_per_tr", "receiver_bandwidth", "repetition_time", "echo_spacing"],
        false,
    )?;
    let d = ScanParams::default();
    let params = ScanParams {
        n_fe: plan_s.num_req(&ctx, "n_fe")?,
        n_pe: plan_s.num_req(&ctx, "n_pe")?,
        n_sense: plan_s.num_req(&ctx, "n_sense")?,
        nex: plan_s.num_req(&ctx, "nex")?,
        lines_per_tr: plan_s.num_or(&ctx, "lines_per_tr", d.lines_per_tr)?,
        receiver_bandwidth: plan_s.num_or(&ctx, "receiver_bandwidth", d.receiver_bandwidth)?,
        repetition_time: plan_s.num_or(&ctx, "repetition_time", d.repetition_time)?,
        echo_spacing: plan_s.num_or(&ctx, "echo_spacing", d.echo_spacing)?,
    };
    let plan = make_scan_plan(params).map_err(|e| ctx.err(plan_s.line, plan_s.col, e.to_string()))?;

    let ph = find("phantom").ok_or_else(|| missing("phantom"))?;
    ph.check_keys(&ctx, &["shape", "radius", "scale"], false)?;
    let shape_e = ph.require(&ctx, "shape")?;
    let shape = match shape_e.value.as_str() {
        "shepp" => PhantomShape::SheppLike,
        "delta" => PhantomShape::Delta,
        "disk" => PhantomShape::Disk { radius: ph.num_req(&ctx, "radius")? },
        other => return Err(ctx.at(shape_e, format!("unknown phantom shape `{other}`"))),
    };
    let phantom = synthesize_phantom(shape, plan.n_pe(), plan.n_fe())
        .map_err(|e| ctx.err(ph.line, ph.col, e.to_string()))?
        .scaled(ph.num_or(&ctx, "scale", 1.0)?);

    let noise = find("noise").ok_or_else(|| missing("noise"))?;
    noise.check_keys(&ctx, &["thermal_sigma", "seed", "sensing_leakage"], false)?;

    let source_secs = indexed(&sections, "source");
    let mut sources = Vec::new();
    for (i, (idx, s)) in source_secs.iter().enumerate() {
        if idx[0] != i {
            return Err(ctx.err(s.line, s.col, format!("expected [source.{i}], sources must be numbered from 0")));
        }
        let src = parse_source(&ctx, s, i)?;
        src.validate(plan.receiver_bandwidth()).map_err(|e| ctx.err(s.line, s.col, e.to_string()))?;
        sources.push(src);
    }

    let n_coils = plan.n_coils();
    let mut couplings: Vec<CouplingModel> = Vec::new();
    for (idx, s) in indexed(&sections, "coupling") {
        let (m, src) = (idx[0], idx[1]);
        if src >= sources.len() {
            return Err(ctx.err(s.line, s.col, format!("[{}] refers to missing source {src}", s.name)));
        }
        if m > couplings.len() {
            return Err(ctx.err(s.line, s.col, format!("coupling model {m} skips model {}", couplings.len())));
        }
        if m == couplings.len() {
            couplings.push(CouplingModel::new(sources.len(), n_coils));
        }
        for (c, p) in parse_paths(&ctx, s, n_coils)?.into_iter().enumerate() {
            couplings[m].set(src, c, p);
        }
    }

    let mut events = Vec::new();
    if let Some(ev) = find("events") {
        ev.check_keys(&ctx, &["event"], false)?;
        for e in &ev.entries {
            events.push(parse_event(&ctx, e)?);
        }
    }

    let mut train = TrainSettings::default();
    if let Some(t) = find("train") {
        t.check_keys(&ctx, &["epochs", "batch", "lr", "seed", "channel_divisor", "bn_stats"], false)?;
        let h = &mut train.hyper;
        h.epochs = t.num_or(&ctx, "epochs", h.epochs)?;
        h.batch_size = t.num_or(&ctx, "batch", h.batch_size)?;
        h.lr = t.num_or(&ctx, "lr", h.lr)?;
        h.seed = t.num_or(&ctx, "seed", h.seed)?;
        train.channel_divisor = t.num_or(&ctx, "channel_divisor", 1)?;
        if let Some(e) = t.get("bn_stats") {
            train.bn_stats = match e.value.as_str() {
                "running" => InferenceStats::Running,
                "batch" => InferenceStats::Batch,
                other => return Err(ctx.at(e, format!("unknown bn_stats `{other}`"))),
            };
        }
        if h.batch_size == 0 || h.epochs == 0 || !(h.lr > 0.0) {
            return Err(ctx.err(t.line, t.col, "epochs, batch and lr must be positive"));
        }
    }

    let provenance = Path::new(name).file_stem().map_or(name.to_string(), |s| s.to_string_lossy().into_owned());
    let scenario = Scenario {
        plan,
        phantom,
        sources,
        couplings,
        events,
        thermal_sigma: noise.num_req(&ctx, "thermal_sigma")?,
        seed: noise.num_or(&ctx, "seed", 0)?,
        sensing_leakage: noise.num_or(&ctx, "sensing_leakage", 0.0)?,
        provenance,
    };
    scenario.validate().map_err(|e| ctx.err(1, 1, e.to_string()))?;
    Timeline::build(
        &scenario.sources,
        &scenario.events,
        scenario.plan.total_lines(),
        scenario.plan.receiver_bandwidth(),
        scenario.couplings.len(),
    )
    .map_err(|e| {
        let line = find("events").map_or(1, |s| s.line);
        ctx.err(line, 1, e.to_string())
    })?;
    Ok(ScenarioConfig { scenario, train })
}

pub fn read_config(path: impl AsRef<Path>) -> Result<ScenarioConfig> {
    let path = path.as_ref();
    parse_config(&fs::read_to_string(path)?, &path.display().to_string())
}
