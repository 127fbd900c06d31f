//! Config-driven experiment pipelines: a small INI-style config format, a
//! canonical manifest writer (re-running a manifest reproduces every CSV
//! byte for byte), and the five run modes the command-line tool exposes.
//!
//! Config grammar: UTF-8 text; `[section]` headers; `key = value` lines;
//! lists are comma-separated; `inf` is a legal number; a line whose first
//! non-blank character is `#` is a comment. Unknown sections or keys are
//! errors — typos must not silently change an experiment.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::atoms::{
    estimate_atom_rates, geometric_exit_time, synthetic_geometric_chain, AtomKnobs, AtomStarts,
};
use crate::error::{Error, Result};
use crate::exit::{exit_batch, summarize, write_records_csv, write_summary_csv, BatchSpec,
    ScalingPrediction};
use crate::fields::{from_registry, FieldPair};
use crate::geometry::{j_index, DomainSpec, JMethod, JStatus, JumpCount};
use crate::measures::{exit_rate_with_j, MeasureEstimate, RateConfig};
use crate::noise::{SpectralMeasure, TailModel};
use crate::parallel::Parallelism;
use crate::rng::{stream_rng, ATOM_STREAM_BASE};
use crate::stats::{exp1_cdf, ks_critical, ks_statistic};

/// The experiment config shipped with the repository: the multiwell-basin
/// first-exit grid behind the headline mean-exit-time figure.
pub const FIG1_CONFIG: &str = include_str!("../../../examples/paper-fig1.cfg");

// ---------------------------------------------------------------------------
// raw INI layer

struct RawConfig {
    /// (section, key) -> value, insertion-checked for duplicates.
    entries: Vec<(String, String, String)>,
}

impl RawConfig {
    fn parse(text: &str) -> Result<RawConfig> {
        let mut entries: Vec<(String, String, String)> = Vec::new();
        let mut section: Option<String> = None;
        for (idx, raw_line) in text.lines().enumerate() {
            let line = raw_line.trim();
            let lineno = idx + 1;
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| {
                    Error::Config(format!("line {lineno}: unterminated section header"))
                })?;
                let name = name.trim();
                if name.is_empty() {
                    return Err(Error::Config(format!("line {lineno}: empty section name")));
                }
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "line {lineno}: expected 'key = value', got '{line}'"
                ))
            })?;
            let key = key.trim();
            let value = value.trim();
            if key.is_empty() {
                return Err(Error::Config(format!("line {lineno}: empty key")));
            }
            let section = section.clone().ok_or_else(|| {
                Error::Config(format!(
                    "line {lineno}: key '{key}' appears before any [section]"
                ))
            })?;
            if entries.iter().any(|(s, k, _)| *s == section && k == key) {
                return Err(Error::Config(format!(
                    "line {lineno}: duplicate key {section}.{key}"
                )));
            }
            entries.push((section, key.to_string(), value.to_string()));
        }
        Ok(RawConfig { entries })
    }

    fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(s, k, _)| s == section && k == key)
            .map(|(_, _, v)| v.as_str())
    }

    fn require(&self, section: &str, key: &str) -> Result<&str> {
        self.get(section, key).ok_or_else(|| {
            Error::Config(format!("missing required key {section}.{key}"))
        })
    }
}

fn parse_f64(section: &str, key: &str, raw: &str) -> Result<f64> {
    raw.parse::<f64>().map_err(|_| {
        Error::Config(format!("{section}.{key}: cannot parse '{raw}' as a number"))
    })
}

fn parse_u64(section: &str, key: &str, raw: &str) -> Result<u64> {
    raw.parse::<u64>().map_err(|_| {
        Error::Config(format!(
            "{section}.{key}: cannot parse '{raw}' as a nonnegative integer"
        ))
    })
}

fn parse_u32(section: &str, key: &str, raw: &str) -> Result<u32> {
    raw.parse::<u32>().map_err(|_| {
        Error::Config(format!(
            "{section}.{key}: cannot parse '{raw}' as a nonnegative integer"
        ))
    })
}

fn parse_list_f64(section: &str, key: &str, raw: &str) -> Result<Vec<f64>> {
    let items: Result<Vec<f64>> = raw
        .split(',')
        .map(|piece| parse_f64(section, key, piece.trim()))
        .collect();
    let items = items?;
    if items.is_empty() {
        return Err(Error::Config(format!("{section}.{key}: empty list")));
    }
    Ok(items)
}

fn fmt_f64(x: f64) -> String {
    // Display for f64 is the shortest representation that round-trips,
    // and prints infinity as the config literal "inf"
    format!("{x}")
}

fn fmt_list(xs: &[f64]) -> String {
    xs.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(",")
}

// ---------------------------------------------------------------------------
// typed config

/// Domain geometry as configured (a registry-independent value type so two
/// configs can be compared for equality).
#[derive(Clone, Debug, PartialEq)]
pub enum DomainSettings {
    Interval { lo: f64, hi: f64 },
    Ball { radius: f64, dim: usize },
}

impl DomainSettings {
    fn dim(&self) -> usize {
        match self {
            DomainSettings::Interval { .. } => 1,
            DomainSettings::Ball { dim, .. } => *dim,
        }
    }

    fn build(&self) -> Result<DomainSpec> {
        match self {
            DomainSettings::Interval { lo, hi } => DomainSpec::interval(*lo, *hi),
            DomainSettings::Ball { radius, dim } => DomainSpec::ball(*radius, *dim),
        }
    }
}

/// Everything a run needs, resolved to plain values. The canonical text form
/// (`manifest`) parses back to an equal config.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub field: String,
    pub alpha: f64,
    pub x_min: f64,
    pub c_pareto: f64,
    pub c_normal: f64,
    pub spectral: String,
    pub domain: DomainSettings,
    pub etas: Vec<f64>,
    pub truncations: Vec<f64>,
    pub samples: u64,
    pub cap: u64,
    pub seed: u64,
    pub gamma: f64,
    pub threads: u64,
    pub out_dir: PathBuf,
    pub start: Vec<f64>,
    pub measure_samples: u64,
    pub atom_p_exit: f64,
    pub atom_return_steps: u32,
    pub atom_samples: u64,
    pub atom_eta: f64,
    pub atom_horizon: f64,
    pub atom_epsilon: f64,
}

impl ExperimentConfig {
    pub fn from_text(text: &str) -> Result<ExperimentConfig> {
        let raw = RawConfig::parse(text)?;

        let field = raw.require("field", "name")?.to_string();

        let alpha = parse_f64("noise", "alpha", raw.require("noise", "alpha")?)?;
        let x_min = match raw.get("noise", "x_min") {
            Some(v) => parse_f64("noise", "x_min", v)?,
            None => 1.0,
        };
        let c_pareto = parse_f64("noise", "c_pareto", raw.require("noise", "c_pareto")?)?;
        let c_normal = match raw.get("noise", "c_normal") {
            Some(v) => parse_f64("noise", "c_normal", v)?,
            None => 0.0,
        };
        let spectral = raw.get("noise", "spectral").unwrap_or("symmetric").to_string();

        let kind = raw.require("domain", "kind")?;
        let domain = match kind {
            "interval" => DomainSettings::Interval {
                lo: parse_f64("domain", "lo", raw.require("domain", "lo")?)?,
                hi: parse_f64("domain", "hi", raw.require("domain", "hi")?)?,
            },
            "ball" => DomainSettings::Ball {
                radius: parse_f64("domain", "radius", raw.require("domain", "radius")?)?,
                dim: parse_u64("domain", "dim", raw.require("domain", "dim")?)? as usize,
            },
            other => {
                return Err(Error::Resolve(format!(
                    "domain.kind: unknown geometry '{other}' (expected interval or ball)"
                )))
            }
        };

        let etas = parse_list_f64("grid", "etas", raw.require("grid", "etas")?)?;
        let truncations = parse_list_f64("grid", "bs", raw.require("grid", "bs")?)?;
        let samples = parse_u64("grid", "samples", raw.require("grid", "samples")?)?;
        let cap = match raw.get("grid", "cap") {
            Some(v) => parse_u64("grid", "cap", v)?,
            None => 10_000_000,
        };

        let seed = parse_u64("run", "seed", raw.require("run", "seed")?)?;
        let gamma = match raw.get("run", "gamma") {
            Some(v) => parse_f64("run", "gamma", v)?,
            None => 1.0,
        };
        let threads = match raw.get("run", "threads") {
            Some(v) => parse_u64("run", "threads", v)?,
            None => 0,
        };
        let out_dir = PathBuf::from(raw.get("run", "out").unwrap_or("runs"));
        let start = match raw.get("run", "start") {
            Some(v) => parse_list_f64("run", "start", v)?,
            None => vec![0.0; domain.dim()],
        };

        let measure_samples = match raw.get("measure", "samples") {
            Some(v) => parse_u64("measure", "samples", v)?,
            None => 200_000,
        };

        let atom_p_exit = match raw.get("atoms", "p_exit") {
            Some(v) => parse_f64("atoms", "p_exit", v)?,
            None => 0.001,
        };
        let atom_return_steps = match raw.get("atoms", "return_steps") {
            Some(v) => parse_u32("atoms", "return_steps", v)?,
            None => 3,
        };
        let atom_samples = match raw.get("atoms", "samples") {
            Some(v) => parse_u64("atoms", "samples", v)?,
            None => 2000,
        };
        let atom_eta = match raw.get("atoms", "eta") {
            Some(v) => parse_f64("atoms", "eta", v)?,
            None => 1.0,
        };
        let atom_horizon = match raw.get("atoms", "horizon") {
            Some(v) => parse_f64("atoms", "horizon", v)?,
            None => 2.0,
        };
        let atom_epsilon = match raw.get("atoms", "epsilon") {
            Some(v) => parse_f64("atoms", "epsilon", v)?,
            None => 0.5,
        };

        // reject typos instead of silently ignoring them
        let known: &[(&str, &[&str])] = &[
            ("field", &["name"]),
            ("noise", &["alpha", "x_min", "c_pareto", "c_normal", "spectral"]),
            ("domain", &["kind", "lo", "hi", "radius", "dim"]),
            ("grid", &["etas", "bs", "samples", "cap"]),
            ("run", &["seed", "gamma", "threads", "out", "start"]),
            ("measure", &["samples"]),
            (
                "atoms",
                &["p_exit", "return_steps", "samples", "eta", "horizon", "epsilon"],
            ),
        ];
        for (section, key, _) in &raw.entries {
            let ok = known
                .iter()
                .any(|(s, keys)| s == section && keys.contains(&key.as_str()));
            if !ok {
                return Err(Error::Config(format!("unknown key {section}.{key}")));
            }
        }

        let config = ExperimentConfig {
            field,
            alpha,
            x_min,
            c_pareto,
            c_normal,
            spectral,
            domain,
            etas,
            truncations,
            samples,
            cap,
            seed,
            gamma,
            threads,
            out_dir,
            start,
            measure_samples,
            atom_p_exit,
            atom_return_steps,
            atom_samples,
            atom_eta,
            atom_horizon,
            atom_epsilon,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<ExperimentConfig> {
        let text = fs::read_to_string(path)?;
        ExperimentConfig::from_text(&text)
    }

    /// Re-check the config invariants; callers that edit fields (e.g. CLI
    /// overrides) should validate again before resolving.
    pub fn validate(&self) -> Result<()> {
        for &eta in &self.etas {
            if !(eta > 0.0 && eta < 1.0) {
                return Err(Error::Config(format!(
                    "grid.etas: eta must be in (0,1), got {eta}"
                )));
            }
        }
        for &b in &self.truncations {
            if !(b > 0.0) {
                return Err(Error::Config(format!(
                    "grid.bs: threshold must be positive or inf, got {b}"
                )));
            }
        }
        if self.samples == 0 {
            return Err(Error::Config("grid.samples: must be at least 1".into()));
        }
        if self.cap == 0 {
            return Err(Error::Config("grid.cap: must be at least 1".into()));
        }
        if !(self.gamma >= 1.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!(
                "run.gamma: must be >= 1 and finite, got {}",
                self.gamma
            )));
        }
        if self.start.len() != self.domain.dim() {
            return Err(Error::Config(format!(
                "run.start: {} coordinates for a {}-dimensional domain",
                self.start.len(),
                self.domain.dim()
            )));
        }
        if !(self.atom_p_exit > 0.0 && self.atom_p_exit < 1.0) {
            return Err(Error::Config(format!(
                "atoms.p_exit: must be in (0,1), got {}",
                self.atom_p_exit
            )));
        }
        Ok(())
    }

    /// The canonical text form: every key explicit, fixed order, values in
    /// round-trip decimal. Parsing the manifest yields an equal config, and
    /// re-running it reproduces all CSV outputs byte for byte.
    pub fn manifest(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# resolved run manifest; re-run to reproduce byte-identical outputs");
        let _ = writeln!(s, "[field]");
        let _ = writeln!(s, "name = {}", self.field);
        let _ = writeln!(s);
        let _ = writeln!(s, "[noise]");
        let _ = writeln!(s, "alpha = {}", fmt_f64(self.alpha));
        let _ = writeln!(s, "x_min = {}", fmt_f64(self.x_min));
        let _ = writeln!(s, "c_pareto = {}", fmt_f64(self.c_pareto));
        let _ = writeln!(s, "c_normal = {}", fmt_f64(self.c_normal));
        let _ = writeln!(s, "spectral = {}", self.spectral);
        let _ = writeln!(s);
        let _ = writeln!(s, "[domain]");
        match &self.domain {
            DomainSettings::Interval { lo, hi } => {
                let _ = writeln!(s, "kind = interval");
                let _ = writeln!(s, "lo = {}", fmt_f64(*lo));
                let _ = writeln!(s, "hi = {}", fmt_f64(*hi));
            }
            DomainSettings::Ball { radius, dim } => {
                let _ = writeln!(s, "kind = ball");
                let _ = writeln!(s, "radius = {}", fmt_f64(*radius));
                let _ = writeln!(s, "dim = {dim}");
            }
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "[grid]");
        let _ = writeln!(s, "etas = {}", fmt_list(&self.etas));
        let _ = writeln!(s, "bs = {}", fmt_list(&self.truncations));
        let _ = writeln!(s, "samples = {}", self.samples);
        let _ = writeln!(s, "cap = {}", self.cap);
        let _ = writeln!(s);
        let _ = writeln!(s, "[run]");
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "gamma = {}", fmt_f64(self.gamma));
        let _ = writeln!(s, "threads = {}", self.threads);
        let _ = writeln!(s, "out = {}", self.out_dir.display());
        let _ = writeln!(s, "start = {}", fmt_list(&self.start));
        let _ = writeln!(s);
        let _ = writeln!(s, "[measure]");
        let _ = writeln!(s, "samples = {}", self.measure_samples);
        let _ = writeln!(s);
        let _ = writeln!(s, "[atoms]");
        let _ = writeln!(s, "p_exit = {}", fmt_f64(self.atom_p_exit));
        let _ = writeln!(s, "return_steps = {}", self.atom_return_steps);
        let _ = writeln!(s, "samples = {}", self.atom_samples);
        let _ = writeln!(s, "eta = {}", fmt_f64(self.atom_eta));
        let _ = writeln!(s, "horizon = {}", fmt_f64(self.atom_horizon));
        let _ = writeln!(s, "epsilon = {}", fmt_f64(self.atom_epsilon));
        s
    }

    pub fn parallelism(&self) -> Parallelism {
        if self.threads == 0 {
            Parallelism::Auto
        } else {
            Parallelism::Threads(self.threads as usize)
        }
    }

    /// Build the runtime objects this config names.
    pub fn resolve(&self) -> Result<ResolvedExperiment> {
        let fields = Arc::new(from_registry(&self.field)?);
        let spectral = parse_spectral(&self.spectral)?;
        let noise = Arc::new(TailModel::new(
            self.alpha,
            self.x_min,
            self.c_pareto,
            self.c_normal,
            spectral,
        )?);
        let domain = self.domain.build()?;
        if domain.dim() != fields.dim_state() {
            return Err(Error::Config(format!(
                "domain dimension {} does not match field '{}' dimension {}",
                domain.dim(),
                self.field,
                fields.dim_state()
            )));
        }
        if noise.dim() != fields.dim_noise() {
            return Err(Error::Config(format!(
                "noise dimension {} does not match field '{}' noise dimension {}",
                noise.dim(),
                self.field,
                fields.dim_noise()
            )));
        }
        if !domain.contains(&self.start) {
            return Err(Error::Config(format!(
                "run.start: {:?} is not inside the domain",
                self.start
            )));
        }
        Ok(ResolvedExperiment {
            config: self.clone(),
            fields,
            noise,
            domain,
        })
    }
}

fn parse_spectral(name: &str) -> Result<SpectralMeasure> {
    if name == "symmetric" {
        return Ok(SpectralMeasure::symmetric());
    }
    if let Some(dim) = name.strip_prefix("uniform:") {
        let dim: usize = dim.parse().map_err(|_| {
            Error::Resolve(format!("noise.spectral: bad dimension in '{name}'"))
        })?;
        return Ok(SpectralMeasure::UniformSphere { dim });
    }
    Err(Error::Resolve(format!(
        "noise.spectral: unknown measure '{name}' (expected symmetric or uniform:<dim>)"
    )))
}

/// A config with its named objects built.
pub struct ResolvedExperiment {
    pub config: ExperimentConfig,
    pub fields: Arc<FieldPair>,
    pub noise: Arc<TailModel>,
    pub domain: DomainSpec,
}

// ---------------------------------------------------------------------------
// pipelines

fn create_out_dir(cfg: &ExperimentConfig) -> Result<PathBuf> {
    fs::create_dir_all(&cfg.out_dir)?;
    Ok(cfg.out_dir.clone())
}

fn write_manifest(cfg: &ExperimentConfig, dir: &Path) -> Result<PathBuf> {
    let path = dir.join("manifest.cfg");
    fs::write(&path, cfg.manifest())?;
    Ok(path)
}

/// One jump index per threshold, certified where possible. Exhaustion is an
/// error for pipelines that need the scale; `run_predict` handles it per row
/// instead.
fn jump_counts(rx: &ResolvedExperiment) -> Result<Vec<JumpCount>> {
    rx.config
        .truncations
        .iter()
        .map(|&b| j_index(&rx.domain, &rx.fields, b, JMethod::Auto, rx.config.seed))
        .collect()
}

fn unit_predictions(rx: &ResolvedExperiment, counts: &[JumpCount]) -> Result<Vec<ScalingPrediction>> {
    rx.config
        .truncations
        .iter()
        .zip(counts)
        .map(|(&b, jc)| {
            if let JStatus::SearchExhausted { max_tried, .. } = jc.status {
                return Err(Error::Unsupported(format!(
                    "no certified jump count for b = {b} (search exhausted at {max_tried})"
                )));
            }
            ScalingPrediction::unit(jc.count, b, rx.config.gamma, Arc::clone(&rx.noise))
        })
        .collect()
}

fn status_name(status: &JStatus) -> String {
    match status {
        JStatus::ProvenUntruncated => "proven-untruncated".into(),
        JStatus::ProvenOneDimensional => "proven-one-dimensional".into(),
        JStatus::ProvenContractive => "proven-contractive".into(),
        JStatus::SearchFound => "search-found".into(),
        JStatus::SearchExhausted { max_tried, best_slack } => {
            format!("search-exhausted(max_tried={max_tried};best_slack={best_slack})")
        }
    }
}

pub struct SimulateOutput {
    pub records_path: PathBuf,
    pub summary_path: PathBuf,
    pub manifest_path: PathBuf,
    pub capped: u64,
}

/// Run the full (eta, b) grid and write records.csv, summary.csv, and the
/// manifest. Scaled times use unit-constant predictions (the level needs the
/// measure pipeline; the eta-dependence does not).
pub fn run_simulate_exit(rx: &ResolvedExperiment) -> Result<SimulateOutput> {
    let cfg = &rx.config;
    let dir = create_out_dir(cfg)?;
    let counts = jump_counts(rx)?;
    let predictions = unit_predictions(rx, &counts)?;
    let spec = BatchSpec {
        etas: cfg.etas.clone(),
        truncations: cfg.truncations.clone(),
        samples_per_cell: cfg.samples,
        cap: cfg.cap,
        gamma: cfg.gamma,
        master_seed: cfg.seed,
        parallelism: cfg.parallelism(),
        start: cfg.start.clone(),
    };
    let records = exit_batch(&rx.fields, &rx.noise, &rx.domain, &spec, &predictions)?;
    let cells = summarize(&records);
    let capped = cells.iter().map(|c| c.capped).sum();

    let records_path = dir.join("records.csv");
    let mut out = BufWriter::new(fs::File::create(&records_path)?);
    write_records_csv(&records, &mut out)?;
    out.flush()?;

    let summary_path = dir.join("summary.csv");
    let mut out = BufWriter::new(fs::File::create(&summary_path)?);
    write_summary_csv(&cells, &mut out)?;
    out.flush()?;

    let manifest_path = write_manifest(cfg, &dir)?;
    Ok(SimulateOutput {
        records_path,
        summary_path,
        manifest_path,
        capped,
    })
}

/// Predicted exit scaling per threshold: J with its provenance, the rate
/// constant with its error, and the log-log slope. A threshold whose jump
/// index could not be certified gets a row with the status and empty
/// numeric fields rather than failing the run.
pub fn run_predict(rx: &ResolvedExperiment) -> Result<PathBuf> {
    let cfg = &rx.config;
    let dir = create_out_dir(cfg)?;
    let path = dir.join("prediction.csv");
    let mut out = BufWriter::new(fs::File::create(&path)?);
    writeln!(out, "b,J,status,C,C_stderr,predicted_slope")?;
    let mut rate_cfg = RateConfig::new(cfg.measure_samples, cfg.seed);
    rate_cfg.parallelism = cfg.parallelism();
    for &b in &cfg.truncations {
        let jc = j_index(&rx.domain, &rx.fields, b, JMethod::Auto, cfg.seed)?;
        let b_text = fmt_f64(b);
        let status = status_name(&jc.status);
        if matches!(jc.status, JStatus::SearchExhausted { .. }) {
            writeln!(out, "{b_text},{},{status},,,", jc.count)?;
            continue;
        }
        let estimate = exit_rate_with_j(&rx.fields, &rx.domain, b, &rx.noise, &jc, &rate_cfg)?;
        let slope = -(1.0 + jc.count as f64 * (cfg.gamma * cfg.alpha - 1.0));
        writeln!(
            out,
            "{b_text},{},{status},{},{},{}",
            jc.count,
            fmt_f64(estimate.value),
            fmt_f64(estimate.std_error),
            fmt_f64(slope)
        )?;
    }
    out.flush()?;
    write_manifest(cfg, &dir)?;
    Ok(path)
}

/// Estimate the limiting exit measure per threshold and write the rows.
pub fn run_estimate_measure(rx: &ResolvedExperiment) -> Result<PathBuf> {
    let cfg = &rx.config;
    let dir = create_out_dir(cfg)?;
    let path = dir.join("measure.csv");
    let mut out = BufWriter::new(fs::File::create(&path)?);
    writeln!(out, "{}", MeasureEstimate::csv_header())?;
    let mut rate_cfg = RateConfig::new(cfg.measure_samples, cfg.seed);
    rate_cfg.parallelism = cfg.parallelism();
    for &b in &cfg.truncations {
        let jc = j_index(&rx.domain, &rx.fields, b, JMethod::Auto, cfg.seed)?;
        let estimate = exit_rate_with_j(&rx.fields, &rx.domain, b, &rx.noise, &jc, &rate_cfg)?;
        writeln!(out, "{}", estimate.csv_row())?;
    }
    out.flush()?;
    write_manifest(cfg, &dir)?;
    Ok(path)
}

pub struct Fig1Output {
    pub points_path: PathBuf,
    pub overlays_path: PathBuf,
    pub manifest_path: PathBuf,
    pub capped_cells: u64,
}

/// The headline figure end to end: simulate the grid, aggregate cell means
/// into plot-ready points (log10 axes), and compute one predicted overlay
/// line per threshold from the measure pipeline.
pub fn run_reproduce_fig1(rx: &ResolvedExperiment) -> Result<Fig1Output> {
    let cfg = &rx.config;
    let dir = create_out_dir(cfg)?;
    let counts = jump_counts(rx)?;
    let predictions = unit_predictions(rx, &counts)?;
    let spec = BatchSpec {
        etas: cfg.etas.clone(),
        truncations: cfg.truncations.clone(),
        samples_per_cell: cfg.samples,
        cap: cfg.cap,
        gamma: cfg.gamma,
        master_seed: cfg.seed,
        parallelism: cfg.parallelism(),
        start: cfg.start.clone(),
    };
    let records = exit_batch(&rx.fields, &rx.noise, &rx.domain, &spec, &predictions)?;
    let cells = summarize(&records);
    let capped_cells = cells.iter().filter(|c| c.capped > 0).count() as u64;

    let points_path = dir.join("fig1_points.csv");
    let mut out = BufWriter::new(fs::File::create(&points_path)?);
    writeln!(
        out,
        "b,eta,log10_eta,mean_steps,log10_mean_steps,std_error,samples,capped"
    )?;
    // series-major order: all etas for one threshold, then the next
    for &b in &cfg.truncations {
        for cell in cells.iter().filter(|c| c.truncation.to_bits() == b.to_bits()) {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                fmt_f64(cell.truncation),
                fmt_f64(cell.eta),
                fmt_f64(cell.eta.log10()),
                fmt_f64(cell.mean_steps),
                fmt_f64(cell.mean_steps.log10()),
                fmt_f64(cell.std_error),
                cell.samples,
                if cell.capped > 0 { "true" } else { "false" }
            )?;
        }
    }
    out.flush()?;

    let overlays_path = dir.join("fig1_overlays.csv");
    let mut out = BufWriter::new(fs::File::create(&overlays_path)?);
    writeln!(
        out,
        "b,J,status,C,C_stderr,predicted_intercept,predicted_slope"
    )?;
    let mut rate_cfg = RateConfig::new(cfg.measure_samples, cfg.seed);
    rate_cfg.parallelism = cfg.parallelism();
    let eta0 = cfg.etas[cfg.etas.len() / 2];
    for (&b, jc) in cfg.truncations.iter().zip(&counts) {
        let status = status_name(&jc.status);
        if matches!(jc.status, JStatus::SearchExhausted { .. }) {
            writeln!(out, "{},{},{status},,,,", fmt_f64(b), jc.count)?;
            continue;
        }
        let estimate = exit_rate_with_j(&rx.fields, &rx.domain, b, &rx.noise, jc, &rate_cfg)?;
        let slope = -(1.0 + jc.count as f64 * (cfg.gamma * cfg.alpha - 1.0));
        if estimate.value <= 0.0 {
            // a zero-consistent rate has no finite log-log intercept
            writeln!(
                out,
                "{},{},{status},{},{},,{}",
                fmt_f64(b),
                jc.count,
                fmt_f64(estimate.value),
                fmt_f64(estimate.std_error),
                fmt_f64(slope)
            )?;
            continue;
        }
        let prediction = ScalingPrediction::new(
            jc.count,
            estimate.value,
            estimate.std_error,
            b,
            cfg.gamma,
            Arc::clone(&rx.noise),
        )?;
        // mean steps = 1 / time_scale(eta); the law is an exact power law
        // for pure Pareto tails, so one anchor point fixes the intercept
        let intercept = -prediction.time_scale(eta0)?.log10() - slope * eta0.log10();
        writeln!(
            out,
            "{},{},{status},{},{},{},{}",
            fmt_f64(b),
            jc.count,
            fmt_f64(estimate.value),
            fmt_f64(estimate.std_error),
            fmt_f64(intercept),
            fmt_f64(slope)
        )?;
    }
    out.flush()?;

    let manifest_path = write_manifest(cfg, &dir)?;
    Ok(Fig1Output {
        points_path,
        overlays_path,
        manifest_path,
        capped_cells,
    })
}

/// Exercise the atom framework on the synthetic geometric chain at the
/// configured knobs: the four diagnostics plus a KS test of the scaled exit
/// law against the unit exponential.
pub fn run_atoms_check(rx: &ResolvedExperiment) -> Result<PathBuf> {
    let cfg = &rx.config;
    let dir = create_out_dir(cfg)?;
    let chain = synthetic_geometric_chain(cfg.atom_p_exit, cfg.atom_return_steps);
    let covering: Vec<i64> = if cfg.atom_return_steps == 0 {
        vec![0]
    } else {
        vec![0, cfg.atom_return_steps as i64]
    };
    let starts = AtomStarts {
        atom: vec![0i64],
        covering,
    };
    let mut knobs = AtomKnobs::new(
        cfg.atom_eta,
        cfg.atom_epsilon,
        cfg.atom_horizon,
        cfg.atom_samples,
        cfg.seed,
    );
    knobs.parallelism = cfg.parallelism();
    let diag = estimate_atom_rates(&chain, &starts, &knobs, &|_s: &i64| true)?;

    let path = dir.join("atoms.csv");
    let mut out = BufWriter::new(fs::File::create(&path)?);
    crate::atoms::write_diagnostics_csv(std::slice::from_ref(&diag), &mut out)?;
    out.flush()?;

    // scaled exit-law fit, simulated fresh on a reserved stream
    let mut rng = stream_rng(cfg.seed, ATOM_STREAM_BASE | (3 << 44));
    let scaled: Vec<f64> = (0..cfg.atom_samples)
        .map(|_| cfg.atom_p_exit * geometric_exit_time(&chain, 0, &mut rng) as f64)
        .collect();
    let ks = ks_statistic(&scaled, exp1_cdf);
    let ks_path = dir.join("atoms_ks.csv");
    let mut out = BufWriter::new(fs::File::create(&ks_path)?);
    writeln!(out, "p_exit,samples,ks_statistic,ks_critical_5pct")?;
    writeln!(
        out,
        "{},{},{},{}",
        fmt_f64(cfg.atom_p_exit),
        cfg.atom_samples,
        fmt_f64(ks),
        fmt_f64(ks_critical(cfg.atom_samples as usize, 0.05))
    )?;
    out.flush()?;

    write_manifest(cfg, &dir)?;
    Ok(path)
}
