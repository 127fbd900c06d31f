//! Monte Carlo estimation of the limiting jump measures: the mass an event
//! receives from k large jumps threaded through the drift flow, importance-
//! sampled from the power-law radial measure restricted to magnitudes above
//! a floor and to inter-jump times below a horizon. The time simplex is
//! stratified so that tight jump clusters — the only configurations a
//! truncated skeleton can exit through — are not starved of samples.
//!
//! Standardization: the radial measure here is the unit power law with mass
//! x^(-alpha) beyond x; the noise model's multiplicative scale lives entirely
//! in the small-step rate function used by exit predictions. Estimates are
//! therefore model-scale-free.

use std::fmt::Write as _;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::dynamics::truncate_in_place;
use crate::error::{Error, Result};
use crate::fields::FieldPair;
use crate::flow::{endpoint_after_last_jump, IntegratorConfig, JumpPlan};
use crate::geometry::{drift_horizon, j_index, DomainSpec, JMethod, JumpCount};
use crate::noise::{pareto_magnitude, TailModel};
use crate::parallel::{map_batches, Parallelism};
use crate::rng::{stream_rng, MEASURE_STREAM_BASE};
use crate::stats::{factorial, ordered_uniforms};

/// Stream offset for the reachability probe, clear of sample indices.
const PROBE_STREAM: u64 = 1 << 40;

/// One estimated measure value with its sampling error and the knobs that
/// produced it.
#[derive(Clone, Debug)]
pub struct MeasureEstimate {
    pub value: f64,
    pub std_error: f64,
    pub samples: u64,
    pub jump_count: usize,
    pub truncation: f64,
    pub jump_floor: f64,
    pub time_horizon: f64,
}

impl MeasureEstimate {
    /// True when the estimate cannot be distinguished from zero.
    pub fn is_zero_consistent(&self) -> bool {
        self.value <= 2.0 * self.std_error
    }

    pub fn csv_header() -> &'static str {
        "k,b,jump_floor,horizon,n,value,std_error"
    }

    pub fn csv_row(&self) -> String {
        let mut row = String::new();
        let b = if self.truncation == f64::INFINITY {
            "inf".to_string()
        } else {
            format!("{}", self.truncation)
        };
        let _ = write!(
            row,
            "{},{},{},{},{},{},{}",
            self.jump_count,
            b,
            self.jump_floor,
            self.time_horizon,
            self.samples,
            self.value,
            self.std_error
        );
        row
    }
}

/// Knobs for one measure estimation run.
#[derive(Clone, Debug)]
pub struct MeasureConfig {
    /// Radial floor for importance sampling: only magnitudes above it are
    /// drawn, and the excluded mass is reapplied analytically.
    pub jump_floor: f64,
    /// Bound on the ordered inter-jump times (ignored for single jumps).
    pub time_horizon: f64,
    pub samples: u64,
    pub seed: u64,
    pub parallelism: Parallelism,
    /// Flow step between jumps.
    pub dt: f64,
    /// Radius beyond which fields are radially frozen during endpoint
    /// evaluation (a guard against far-field blowups); `None` picks one
    /// from the truncation threshold and jump count.
    pub extension_radius: Option<f64>,
}

impl MeasureConfig {
    pub fn new(jump_floor: f64, time_horizon: f64, samples: u64, seed: u64) -> Self {
        MeasureConfig {
            jump_floor,
            time_horizon,
            samples,
            seed,
            parallelism: Parallelism::Auto,
            dt: 0.01,
            extension_radius: None,
        }
    }
}

/// The inner time stratum covers gaps up to horizon / this factor.
const TIME_CUT_FACTOR: f64 = 16.0;

/// How the ordered inter-jump times of one stratum are drawn.
#[derive(Clone, Copy, Debug)]
enum TimeScheme {
    /// Single jump: no inter-jump times, unit volume.
    Single,
    /// Ordered times over the whole simplex [0, horizon].
    Whole { horizon: f64 },
    /// Ordered times whose maximum is at most `cut`.
    Inner { cut: f64 },
    /// Ordered times whose maximum lies in (cut, horizon].
    Outer { cut: f64, horizon: f64 },
}

/// One sampling cell: a first-jump direction (or the free spectral draw)
/// crossed with a region of the time simplex.
struct StratumCell {
    direction: Option<Vec<f64>>,
    times: TimeScheme,
    /// Direction weight times the time-region volume; multiplies this
    /// cell's hit fraction in the combined estimate.
    multiplier: f64,
}

/// Sampling strata: the spectral measure's direction atoms (exact
/// allocation, weights reapplied analytically) crossed, for multi-jump
/// skeletons, with a two-piece split of the ordered-time simplex. The
/// tight-gap piece is deliberately oversampled: a truncated skeleton can
/// only exit when its jumps cluster, and uniform times starve that region.
struct Strata {
    cells: Vec<StratumCell>,
    /// Cumulative sample allocation boundaries; sample s belongs to the
    /// cell whose boundary first exceeds s.
    boundaries: Vec<u64>,
}

impl Strata {
    fn plan(noise: &TailModel, n: u64, k: usize, horizon: f64) -> Strata {
        let (directions, dir_weights): (Vec<Option<Vec<f64>>>, Vec<f64>) =
            match noise.spectral().atoms() {
                Some(atoms) if n as usize >= atoms.len() => {
                    atoms.into_iter().map(|(d, w)| (Some(d), w)).unzip()
                }
                _ => (vec![None], vec![1.0]),
            };
        let m = k as i32 - 1;
        let time_schemes: Vec<(TimeScheme, f64)> = if k == 1 {
            vec![(TimeScheme::Single, 1.0)]
        } else {
            let denom = factorial(k as u32 - 1);
            let whole = horizon.powi(m) / denom;
            if n >= 4 * directions.len() as u64 {
                let cut = horizon / TIME_CUT_FACTOR;
                let inner = cut.powi(m) / denom;
                vec![
                    (TimeScheme::Inner { cut }, inner),
                    (TimeScheme::Outer { cut, horizon }, whole - inner),
                ]
            } else {
                vec![(TimeScheme::Whole { horizon }, whole)]
            }
        };
        // direction allocation: largest-remainder rounding, deterministic
        // index tie-break
        let mut dir_counts: Vec<u64> = dir_weights
            .iter()
            .map(|w| (w * n as f64).floor() as u64)
            .collect();
        let mut short = n - dir_counts.iter().sum::<u64>();
        let mut order: Vec<usize> = (0..dir_weights.len()).collect();
        order.sort_by(|&i, &j| {
            let fi = dir_weights[i] * n as f64 - (dir_weights[i] * n as f64).floor();
            let fj = dir_weights[j] * n as f64 - (dir_weights[j] * n as f64).floor();
            fj.partial_cmp(&fi).unwrap().then(i.cmp(&j))
        });
        for &i in order.iter().cycle() {
            if short == 0 {
                break;
            }
            dir_counts[i] += 1;
            short -= 1;
        }
        // split each direction's allocation evenly over the time strata
        let n_time = time_schemes.len() as u64;
        let mut cells = Vec::new();
        let mut counts = Vec::new();
        for (d, dir) in directions.iter().enumerate() {
            for (t, (scheme, volume)) in time_schemes.iter().enumerate() {
                cells.push(StratumCell {
                    direction: dir.clone(),
                    times: *scheme,
                    multiplier: dir_weights[d] * volume,
                });
                let base = dir_counts[d] / n_time;
                let extra = u64::from((t as u64) < dir_counts[d] % n_time);
                counts.push(base + extra);
            }
        }
        // no cell may be empty: its share of the measure would be silently
        // dropped; donate from the largest cell, or collapse to one free
        // cell when the budget cannot cover the plan
        while let Some(zero) = counts.iter().position(|&c| c == 0) {
            let donor = (0..counts.len()).max_by_key(|&i| counts[i]).unwrap();
            if counts[donor] <= 1 {
                return Strata::collapsed(k, horizon, n);
            }
            counts[donor] -= 1;
            counts[zero] += 1;
        }
        let mut boundaries = Vec::with_capacity(counts.len());
        let mut acc = 0;
        for c in &counts {
            acc += c;
            boundaries.push(acc);
        }
        Strata { cells, boundaries }
    }

    /// One free cell covering everything: spectral directions, whole time
    /// simplex.
    fn collapsed(k: usize, horizon: f64, n: u64) -> Strata {
        let (times, volume) = if k == 1 {
            (TimeScheme::Single, 1.0)
        } else {
            let volume = horizon.powi(k as i32 - 1) / factorial(k as u32 - 1);
            (TimeScheme::Whole { horizon }, volume)
        };
        Strata {
            cells: vec![StratumCell {
                direction: None,
                times,
                multiplier: volume,
            }],
            boundaries: vec![n],
        }
    }

    fn cell_of(&self, sample: u64) -> usize {
        self.boundaries.partition_point(|&b| b <= sample)
    }
}

/// Per-stratum integer tallies for a vector of events. Integer merges make
/// the reduction exact and order-independent, which is stronger than the
/// compensated-sum requirement.
struct Tally {
    /// hits[stratum][event]
    hits: Vec<Vec<u64>>,
    counts: Vec<u64>,
}

struct JumpMc<'a> {
    fields: &'a FieldPair,
    flow_fields: FieldPair,
    noise: &'a TailModel,
    k: usize,
    b: f64,
    cfg: &'a MeasureConfig,
    origin: Vec<f64>,
    integrator: IntegratorConfig,
}

impl<'a> JumpMc<'a> {
    fn prepare(
        fields: &'a FieldPair,
        noise: &'a TailModel,
        k: usize,
        b: f64,
        cfg: &'a MeasureConfig,
    ) -> Result<JumpMc<'a>> {
        if k == 0 {
            return Err(Error::InvalidParameter(
                "jump count k must be at least 1".into(),
            ));
        }
        if !(b > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "truncation threshold must be positive (or +inf), got {b}"
            )));
        }
        if !(cfg.jump_floor > 0.0 && cfg.jump_floor.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "jump floor must be finite and positive, got {}",
                cfg.jump_floor
            )));
        }
        if k >= 2 && !(cfg.time_horizon > 0.0 && cfg.time_horizon.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "time horizon must be finite and positive for k >= 2, got {}",
                cfg.time_horizon
            )));
        }
        if cfg.samples == 0 {
            return Err(Error::EmptySamples("sample count is zero".into()));
        }
        if noise.dim() != fields.dim_noise() {
            return Err(Error::DimensionMismatch(format!(
                "noise dimension {} does not match field noise dimension {}",
                noise.dim(),
                fields.dim_noise()
            )));
        }
        noise.require_heavy("jump-measure estimation")?;
        // flows only run for k >= 2; freeze the far field so user drifts
        // cannot blow up on monster jumps
        let flow_fields = if k >= 2 {
            let radius = cfg.extension_radius.unwrap_or_else(|| {
                let reach = if b.is_finite() {
                    b * k as f64
                } else {
                    50.0 * cfg.jump_floor * k as f64
                };
                10.0 * (1.0 + reach)
            });
            fields.bounded_extension(radius)?
        } else {
            fields.bounded_extension(1.0)? // unused; keeps the type simple
        };
        Ok(JumpMc {
            fields,
            flow_fields,
            noise,
            k,
            b,
            cfg,
            origin: vec![0.0; fields.dim_state()],
            integrator: IntegratorConfig::with_dt(cfg.dt),
        })
    }

    /// The state right after the first jump: truncated diffusion kick at
    /// the origin.
    fn first_state(&self, w: &[f64]) -> Result<Vec<f64>> {
        let mut kick = vec![0.0; self.fields.dim_state()];
        self.fields.diffusion_into(&self.origin, w, &mut kick)?;
        truncate_in_place(&mut kick, self.b);
        Ok(kick)
    }

    /// Endpoint of the k-jump skeleton for explicit jump data.
    fn endpoint(
        &self,
        first: &[f64],
        later: Vec<Vec<f64>>,
        times: Vec<f64>,
        horizon: f64,
    ) -> Result<Vec<f64>> {
        if self.k == 1 {
            return Ok(first.to_vec());
        }
        let plan = JumpPlan::new(later, times, horizon)?;
        endpoint_after_last_jump(&self.flow_fields, first, &plan, self.b, &self.integrator)
    }

    /// One importance sample from its own stream; returns the endpoint.
    fn sample_endpoint(&self, sample: u64, strata: &Strata) -> Result<Vec<f64>> {
        let mut rng = stream_rng(self.cfg.seed, MEASURE_STREAM_BASE | sample);
        let magnitude = pareto_magnitude(self.noise.alpha(), self.cfg.jump_floor, &mut rng);
        let cell = &strata.cells[strata.cell_of(sample)];
        let direction = match &cell.direction {
            Some(d) => d.clone(),
            None => {
                let mut d = vec![0.0; self.noise.dim()];
                self.noise.spectral().sample_into(&mut rng, &mut d);
                d
            }
        };
        let w1: Vec<f64> = direction.iter().map(|c| c * magnitude).collect();
        let first = self.first_state(&w1)?;
        if self.k == 1 {
            return Ok(first);
        }
        let mut later = Vec::with_capacity(self.k - 1);
        for _ in 1..self.k {
            let jump = self.noise.sample_large_jump(self.cfg.jump_floor, &mut rng)?;
            later.push(
                jump.direction
                    .iter()
                    .map(|c| c * jump.magnitude)
                    .collect::<Vec<f64>>(),
            );
        }
        let times = sample_times(&mut rng, self.k - 1, cell.times);
        self.endpoint(&first, later, times, self.cfg.time_horizon)
    }

    /// The excluded radial mass per jump, applied analytically; time-region
    /// volumes live in the stratum multipliers.
    fn radial_mass(&self) -> f64 {
        let per_jump = self.cfg.jump_floor.powf(-self.noise.alpha());
        per_jump.powi(self.k as i32)
    }

    /// Deterministic reachability probe: can any single direction with some
    /// magnitude (swept across and beyond the floor) drive the k-jump
    /// skeleton into the event at all? Used to tell an honest zero from a
    /// floor that cut the support.
    fn probe_hits(&self, event: &(dyn Fn(&[f64]) -> bool + Sync)) -> Result<bool> {
        let directions: Vec<Vec<f64>> = match self.noise.spectral().atoms() {
            Some(atoms) => atoms.into_iter().map(|(d, _)| d).collect(),
            None => {
                let mut rng = stream_rng(self.cfg.seed, MEASURE_STREAM_BASE | PROBE_STREAM);
                (0..32)
                    .map(|_| {
                        let mut d = vec![0.0; self.noise.dim()];
                        self.noise.spectral().sample_into(&mut rng, &mut d);
                        d
                    })
                    .collect()
            }
        };
        let lo = self.cfg.jump_floor * 1e-4;
        let hi = self.cfg.jump_floor * 1e6;
        // fine enough that any radial window wider than ~5% along a probed
        // direction contains a grid point
        let steps = 512;
        let dt = self.cfg.dt;
        for dir in &directions {
            for i in 0..=steps {
                let magnitude = lo * (hi / lo).powf(i as f64 / steps as f64);
                let w1: Vec<f64> = dir.iter().map(|c| c * magnitude).collect();
                let first = self.first_state(&w1)?;
                let endpoint = if self.k == 1 {
                    first
                } else {
                    let later: Vec<Vec<f64>> = (1..self.k).map(|_| w1.clone()).collect();
                    let times: Vec<f64> = (1..self.k).map(|j| j as f64 * dt).collect();
                    let horizon = self.k as f64 * dt;
                    self.endpoint(&first, later, times, horizon)?
                };
                if event(&endpoint) {
                    return Ok(true);
                }
            }
        }
        Ok(false)
    }

    /// Run the sampler over a vector of events sharing the same endpoints.
    fn tally(
        &self,
        events: &[&(dyn Fn(&[f64]) -> bool + Sync)],
        strata: &Strata,
    ) -> Result<Tally> {
        let n_cells = strata.cells.len();
        let batches: Vec<Result<Tally>> = map_batches(
            self.cfg.samples,
            4096,
            self.cfg.parallelism,
            |_, range| {
                let mut hits = vec![vec![0u64; events.len()]; n_cells];
                let mut counts = vec![0u64; n_cells];
                for s in range {
                    let endpoint = self.sample_endpoint(s, strata)?;
                    let cell = strata.cell_of(s);
                    counts[cell] += 1;
                    for (e, ev) in events.iter().enumerate() {
                        if ev(&endpoint) {
                            hits[cell][e] += 1;
                        }
                    }
                }
                Ok(Tally { hits, counts })
            },
        );
        let mut hits = vec![vec![0u64; events.len()]; n_cells];
        let mut counts = vec![0u64; n_cells];
        for batch in batches {
            let batch = batch?;
            for (i, row) in batch.hits.iter().enumerate() {
                for (j, h) in row.iter().enumerate() {
                    hits[i][j] += h;
                }
            }
            for (i, c) in batch.counts.iter().enumerate() {
                counts[i] += c;
            }
        }
        Ok(Tally { hits, counts })
    }

    /// Combine one event's tallies into (value, std_error).
    fn combine(&self, tally: &Tally, event: usize, strata: &Strata) -> (f64, f64) {
        let radial = self.radial_mass();
        let mut value = 0.0;
        let mut var = 0.0;
        for (i, cell) in strata.cells.iter().enumerate() {
            let n = tally.counts[i] as f64;
            let p = tally.hits[i][event] as f64 / n;
            let v = if n > 1.0 {
                p * (1.0 - p) / (n - 1.0)
            } else {
                0.25
            };
            value += cell.multiplier * p;
            var += cell.multiplier * cell.multiplier * v;
        }
        (radial * value, radial * var.sqrt())
    }
}

/// Draw the ordered inter-jump times of one cell; `m` is the number of
/// times (jump count minus one). The outer scheme draws the maximum by
/// inverting its conditional law, then fills in the rest as uniforms below
/// it — the exact order-statistics decomposition, so the stratification
/// introduces no bias.
fn sample_times(rng: &mut ChaCha8Rng, m: usize, scheme: TimeScheme) -> Vec<f64> {
    loop {
        let ts = match scheme {
            TimeScheme::Single => return Vec::new(),
            TimeScheme::Whole { horizon } => ordered_uniforms(rng, m, horizon),
            TimeScheme::Inner { cut } => ordered_uniforms(rng, m, cut),
            TimeScheme::Outer { cut, horizon } => {
                let u: f64 = rng.gen();
                let p = m as i32;
                let max = (cut.powi(p) + u * (horizon.powi(p) - cut.powi(p)))
                    .powf(1.0 / m as f64);
                if !(max > cut) {
                    continue;
                }
                let mut ts = ordered_uniforms(rng, m - 1, max);
                ts.push(max);
                ts
            }
        };
        let strictly_increasing =
            !ts.is_empty() && ts[0] > 0.0 && ts.windows(2).all(|w| w[0] < w[1]);
        if strictly_increasing {
            return ts;
        }
    }
}

/// Importance-sampled mass the k-jump skeleton assigns to an event: draw k
/// magnitudes above the floor and k-1 ordered times below the horizon,
/// flow the truncated kicks through the drift, average the indicator, and
/// reapply the excluded mass and time volume analytically.
///
/// A zero estimate triggers a deterministic reachability probe; if some
/// jump configuration does hit the event, the zero is reported as a
/// too-aggressive floor instead of a value.
pub fn estimate_jump_measure(
    fields: &FieldPair,
    event: &(dyn Fn(&[f64]) -> bool + Sync),
    k: usize,
    b: f64,
    noise: &TailModel,
    cfg: &MeasureConfig,
) -> Result<MeasureEstimate> {
    let mc = JumpMc::prepare(fields, noise, k, b, cfg)?;
    let strata = Strata::plan(noise, cfg.samples, k, cfg.time_horizon);
    let tally = mc.tally(&[event], &strata)?;
    let total_hits: u64 = tally.hits.iter().map(|row| row[0]).sum();
    if total_hits == 0 && mc.probe_hits(event)? {
        return Err(Error::JumpFloorTooAggressive(format!(
            "all {} indicators were zero, yet a {k}-jump configuration hitting the event \
             exists; the floor {} is cutting the support (lower it or raise samples)",
            cfg.samples, cfg.jump_floor
        )));
    }
    let (value, std_error) = mc.combine(&tally, 0, &strata);
    Ok(MeasureEstimate {
        value,
        std_error,
        samples: cfg.samples,
        jump_count: k,
        truncation: b,
        jump_floor: cfg.jump_floor,
        time_horizon: if k == 1 { 0.0 } else { cfg.time_horizon },
    })
}

/// Knobs for the exit-rate pipeline, with derivable floor and horizon.
#[derive(Clone, Debug)]
pub struct RateConfig {
    pub samples: u64,
    pub seed: u64,
    pub parallelism: Parallelism,
    /// `None`: b/4 for finite b, half the origin's boundary distance over
    /// the origin noise norm for b = +inf.
    pub jump_floor: Option<f64>,
    /// `None`: three times the flow's hitting-time envelope.
    pub time_horizon: Option<f64>,
    pub dt: f64,
    pub extension_radius: Option<f64>,
    pub j_method: JMethod,
}

impl RateConfig {
    pub fn new(samples: u64, seed: u64) -> Self {
        RateConfig {
            samples,
            seed,
            parallelism: Parallelism::Auto,
            jump_floor: None,
            time_horizon: None,
            dt: 0.01,
            extension_radius: None,
            j_method: JMethod::Auto,
        }
    }
}

fn resolve_measure_config(
    fields: &FieldPair,
    domain: &DomainSpec,
    b: f64,
    jump_count: usize,
    cfg: &RateConfig,
) -> Result<MeasureConfig> {
    let jump_floor = match cfg.jump_floor {
        Some(f) => f,
        None if b.is_finite() => b / 4.0,
        None => {
            let sigma = fields.diffusion_origin_norm()?;
            if sigma <= 1e-12 {
                return Err(Error::DegenerateDiffusion(
                    "the origin noise norm is zero; untruncated exits need \
                     noise at the attractor"
                        .into(),
                ));
            }
            let dist = domain.distance_to_complement(&vec![0.0; domain.dim()]);
            dist / (2.0 * sigma)
        }
    };
    let time_horizon = match cfg.time_horizon {
        Some(t) => t,
        None if jump_count >= 2 => drift_horizon(domain, fields)?,
        None => 1.0,
    };
    let mut out = MeasureConfig::new(jump_floor, time_horizon, cfg.samples, cfg.seed);
    out.parallelism = cfg.parallelism;
    out.dt = cfg.dt;
    out.extension_radius = cfg.extension_radius;
    Ok(out)
}

/// The rate pipeline needs noise at the attractor: with a zero diffusion
/// norm at the origin the first kick vanishes, the skeleton never leaves,
/// and no normalizable exit law exists. Checked before the jump-index
/// machinery so the diagnosis names the real defect instead of a failed
/// search.
fn require_noise_at_origin(fields: &FieldPair) -> Result<()> {
    let sigma = fields.diffusion_origin_norm()?;
    if sigma <= 1e-12 {
        return Err(Error::DegenerateDiffusion(
            "the origin noise norm is zero; the jump skeleton cannot leave the attractor"
                .into(),
        ));
    }
    Ok(())
}

/// The exit-rate constant: the jump index J for this domain and threshold,
/// then the J-jump mass of the domain's complement. An estimate consistent
/// with zero is legal (degenerate-rate case) and left to the caller's
/// `is_zero_consistent`.
pub fn exit_rate_constant(
    fields: &FieldPair,
    domain: &DomainSpec,
    b: f64,
    noise: &TailModel,
    cfg: &RateConfig,
) -> Result<(JumpCount, MeasureEstimate)> {
    require_noise_at_origin(fields)?;
    let jc = j_index(domain, fields, b, cfg.j_method.clone(), cfg.seed)?;
    let estimate = exit_rate_with_j(fields, domain, b, noise, &jc, cfg)?;
    Ok((jc, estimate))
}

/// Rate constant for a jump index computed elsewhere (e.g. once per CLI row).
pub fn exit_rate_with_j(
    fields: &FieldPair,
    domain: &DomainSpec,
    b: f64,
    noise: &TailModel,
    jc: &JumpCount,
    cfg: &RateConfig,
) -> Result<MeasureEstimate> {
    require_noise_at_origin(fields)?;
    if let crate::geometry::JStatus::SearchExhausted { max_tried, best_slack } = &jc.status {
        return Err(Error::Unsupported(format!(
            "jump index search exhausted at k = {max_tried} (best slack {best_slack}); \
             no certified jump count to integrate against"
        )));
    }
    let mcfg = resolve_measure_config(fields, domain, b, jc.count, cfg)?;
    let event = |x: &[f64]| !domain.contains(x);
    estimate_jump_measure(fields, &event, jc.count, b, noise, &mcfg)
}

/// A normalized exit-location histogram over caller-supplied bins.
#[derive(Clone, Debug)]
pub struct LocationLaw {
    pub fractions: Vec<f64>,
    /// Binomial-approximation errors on each fraction.
    pub std_errors: Vec<f64>,
    /// The normalizing total (the exit-rate constant).
    pub rate: MeasureEstimate,
    /// Exit mass landing in no bin (0 when the bins partition the
    /// complement).
    pub residual_fraction: f64,
    pub jump_count: usize,
}

/// Bins over the domain's complement.
pub enum ExitBins {
    /// 1D only: complement below the interval vs. above it.
    LeftRight,
    Custom(Vec<Box<dyn Fn(&[f64]) -> bool + Send + Sync>>),
}

/// Where the J-jump skeleton lands when it exits: per-bin masses normalized
/// by the same-sample total, so the fractions are exact ratios.
pub fn exit_location_law(
    fields: &FieldPair,
    domain: &DomainSpec,
    b: f64,
    noise: &TailModel,
    bins: &ExitBins,
    cfg: &RateConfig,
) -> Result<LocationLaw> {
    require_noise_at_origin(fields)?;
    let jc = j_index(domain, fields, b, cfg.j_method.clone(), cfg.seed)?;
    if let crate::geometry::JStatus::SearchExhausted { .. } = &jc.status {
        return Err(Error::Unsupported(
            "jump index search exhausted; cannot normalize a location law".into(),
        ));
    }
    let mcfg = resolve_measure_config(fields, domain, b, jc.count, cfg)?;
    let mc = JumpMc::prepare(fields, noise, jc.count, b, &mcfg)?;
    let strata = Strata::plan(noise, mcfg.samples, jc.count, mcfg.time_horizon);

    let exit_event = |x: &[f64]| !domain.contains(x);
    // the side closures exist unconditionally so their borrows outlive the
    // event vector; they are only pushed for LeftRight
    let (lo, hi) = match domain {
        DomainSpec::Interval { lo, hi } => (*lo, *hi),
        _ if matches!(bins, ExitBins::LeftRight) => {
            return Err(Error::InvalidParameter(
                "LeftRight bins need an Interval domain".into(),
            ))
        }
        _ => (0.0, 0.0),
    };
    let left = move |x: &[f64]| x[0] <= lo;
    let right = move |x: &[f64]| x[0] >= hi;
    let mut raw_bins: Vec<&(dyn Fn(&[f64]) -> bool + Sync)> = Vec::new();
    match bins {
        ExitBins::LeftRight => {
            raw_bins.push(&left);
            raw_bins.push(&right);
        }
        ExitBins::Custom(list) => {
            for e in list {
                raw_bins.push(e.as_ref() as &(dyn Fn(&[f64]) -> bool + Sync));
            }
        }
    }
    // every bin is intersected with the exit event itself, so the fractions
    // below are shares of the same-sample exit mass (exactly 1 in total
    // when the bins cover the complement)
    let conjoined: Vec<Box<dyn Fn(&[f64]) -> bool + Sync + '_>> = raw_bins
        .into_iter()
        .map(|bin| {
            Box::new(move |x: &[f64]| !domain.contains(x) && bin(x))
                as Box<dyn Fn(&[f64]) -> bool + Sync + '_>
        })
        .collect();
    // event vector: the exit total first, then the bins
    let mut events: Vec<&(dyn Fn(&[f64]) -> bool + Sync)> = vec![&exit_event];
    for c in &conjoined {
        events.push(c.as_ref());
    }

    let tally = mc.tally(&events, &strata)?;
    let total_hits: u64 = tally.hits.iter().map(|row| row[0]).sum();
    if total_hits == 0 {
        if mc.probe_hits(&exit_event)? {
            return Err(Error::JumpFloorTooAggressive(format!(
                "no exits in {} samples although an exiting configuration exists",
                mcfg.samples
            )));
        }
        return Err(Error::EmptySamples(
            "the exit event has zero estimated mass; no law to normalize".into(),
        ));
    }
    let (total_value, total_se) = mc.combine(&tally, 0, &strata);
    let n_bins = events.len() - 1;
    let mut fractions = Vec::with_capacity(n_bins);
    let mut std_errors = Vec::with_capacity(n_bins);
    for e in 1..events.len() {
        let (mass, _) = mc.combine(&tally, e, &strata);
        let f = mass / total_value;
        fractions.push(f);
        let clamped = f.clamp(0.0, 1.0);
        std_errors.push((clamped * (1.0 - clamped) / total_hits as f64).sqrt());
    }
    let residual_fraction = 1.0 - fractions.iter().sum::<f64>();
    Ok(LocationLaw {
        fractions,
        std_errors,
        rate: MeasureEstimate {
            value: total_value,
            std_error: total_se,
            samples: mcfg.samples,
            jump_count: jc.count,
            truncation: b,
            jump_floor: mcfg.jump_floor,
            time_horizon: if jc.count == 1 { 0.0 } else { mcfg.time_horizon },
        },
        residual_fraction,
        jump_count: jc.count,
    })
}

/// Diagnostic mass of the +-eps shell around the domain boundary under the
/// k-jump measure. The limit theory needs the boundary itself to carry no
/// mass; this reports how thin a shell around it looks, without claiming a
/// verification.
pub fn boundary_shell_mass(
    fields: &FieldPair,
    domain: &DomainSpec,
    b: f64,
    noise: &TailModel,
    k: usize,
    eps: f64,
    cfg: &MeasureConfig,
) -> Result<MeasureEstimate> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "shell width must be finite and positive, got {eps}"
        )));
    }
    let shell = |x: &[f64]| {
        if domain.contains(x) {
            domain.distance_to_complement(x) <= eps
        } else {
            domain.exterior_distance(x) <= eps
        }
    };
    let mc = JumpMc::prepare(fields, noise, k, b, cfg)?;
    let strata = Strata::plan(noise, cfg.samples, k, cfg.time_horizon);
    let tally = mc.tally(&[&shell], &strata)?;
    let (value, std_error) = mc.combine(&tally, 0, &strata);
    Ok(MeasureEstimate {
        value,
        std_error,
        samples: cfg.samples,
        jump_count: k,
        truncation: b,
        jump_floor: cfg.jump_floor,
        time_horizon: if k == 1 { 0.0 } else { cfg.time_horizon },
    })
}
