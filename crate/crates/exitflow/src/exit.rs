//! First-exit experiments and their comparison against the limit-law
//! predictions: per-sample exit records, the predicted time scale
//! C * eta * lambda(eta)^J, log-log slope fits, a KS test against the unit
//! exponential, and exit-location histograms.

use std::collections::BTreeMap;
use std::io::{self, Write};
use std::sync::Arc;

use crate::dynamics::{run_until, ChainConfig, StopReason};
use crate::error::{Error, Result};
use crate::fields::FieldPair;
use crate::geometry::{DomainSpec, JumpCount};
use crate::measures::{exit_rate_with_j, ExitBins, LocationLaw, RateConfig};
use crate::noise::TailModel;
use crate::parallel::{map_batches, Parallelism};
use crate::rng::{exit_stream, stream_rng};
use crate::stats::{exp1_cdf, ks_statistic, mean_stderr, ols_line, tv_distance};

/// Why a simulated trajectory stopped.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitReason {
    /// Left the domain; the recorded location is the first outside point.
    Exited,
    /// Hit the step cap while still inside (a lower bound on the exit time).
    Capped,
    /// The state stopped being finite; the record keeps the last good state.
    NonFinite,
}

impl ExitReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExitReason::Exited => "Exited",
            ExitReason::Capped => "Capped",
            ExitReason::NonFinite => "NonFinite",
        }
    }
}

/// One simulated first-exit trajectory, reduced to its endpoint data.
#[derive(Clone, Debug)]
pub struct ExitRecord {
    pub eta: f64,
    pub truncation: f64,
    pub sample_index: u64,
    pub steps: u64,
    /// Steps multiplied by the predicted time scale; ~Exp(1) in the limit
    /// when the prediction's constant is the true rate.
    pub scaled_time: f64,
    pub exit_location: Vec<f64>,
    pub reason: ExitReason,
    /// The master seed and the per-record stream index: enough to replay
    /// this exact trajectory.
    pub seed_hi: u64,
    pub seed_lo: u64,
}

/// The limit-law time scale for a (domain, threshold) pair: scaled exit
/// times C * eta * lambda(eta)^J * tau converge to a unit exponential, and
/// mean raw steps follow a power law in eta with a computable slope.
#[derive(Clone, Debug)]
pub struct ScalingPrediction {
    pub jump_count: usize,
    pub constant: f64,
    pub constant_std_error: f64,
    pub truncation: f64,
    pub gamma: f64,
    noise: Arc<TailModel>,
}

impl ScalingPrediction {
    pub fn new(
        jump_count: usize,
        constant: f64,
        constant_std_error: f64,
        truncation: f64,
        gamma: f64,
        noise: Arc<TailModel>,
    ) -> Result<Self> {
        if jump_count == 0 {
            return Err(Error::InvalidParameter(
                "prediction needs a jump count of at least 1".into(),
            ));
        }
        if !(constant > 0.0 && constant.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "prediction needs a positive finite rate constant, got {constant}"
            )));
        }
        if !(constant_std_error >= 0.0) {
            return Err(Error::InvalidParameter(
                "the rate constant's error must be nonnegative".into(),
            ));
        }
        if !(truncation > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "truncation threshold must be positive (or +inf), got {truncation}"
            )));
        }
        if !(gamma >= 1.0 && gamma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "scaling exponent gamma must be >= 1, got {gamma}"
            )));
        }
        noise.require_heavy("scaling prediction")?;
        Ok(ScalingPrediction {
            jump_count,
            constant,
            constant_std_error,
            truncation,
            gamma,
            noise,
        })
    }

    /// A prediction with unit constant: scaled times keep the full eta
    /// dependence but not the absolute level.
    pub fn unit(
        jump_count: usize,
        truncation: f64,
        gamma: f64,
        noise: Arc<TailModel>,
    ) -> Result<Self> {
        ScalingPrediction::new(jump_count, 1.0, 0.0, truncation, gamma, noise)
    }

    /// Jump index and rate constant estimated from the measure pipeline.
    pub fn from_measures(
        fields: &FieldPair,
        domain: &DomainSpec,
        b: f64,
        noise: Arc<TailModel>,
        gamma: f64,
        jc: &JumpCount,
        cfg: &RateConfig,
    ) -> Result<Self> {
        let estimate = exit_rate_with_j(fields, domain, b, &noise, jc, cfg)?;
        ScalingPrediction::new(
            jc.count,
            estimate.value,
            estimate.std_error,
            b,
            gamma,
            noise,
        )
    }

    /// C * eta * lambda(eta; gamma)^J.
    pub fn time_scale(&self, eta: f64) -> Result<f64> {
        let lambda = self.noise.rate_function(eta, self.gamma)?;
        Ok(self.constant * eta * lambda.powi(self.jump_count as i32))
    }

    /// Predicted log-log slope of mean exit steps against eta:
    /// -(1 + J(gamma*alpha - 1)). The untruncated case is J = 1, giving
    /// -gamma*alpha.
    pub fn predicted_slope(&self) -> f64 {
        let alpha = self.noise.alpha();
        -(1.0 + self.jump_count as f64 * (self.gamma * alpha - 1.0))
    }

    pub fn noise(&self) -> &Arc<TailModel> {
        &self.noise
    }
}

/// Simulate one trajectory until it leaves the domain. The exit location is
/// the first post-update position outside; capped and non-finite runs are
/// recorded, not errors.
#[allow(clippy::too_many_arguments)]
pub fn first_exit(
    config: &ChainConfig,
    domain: &DomainSpec,
    start: &[f64],
    cap: u64,
    prediction: &ScalingPrediction,
    sample_index: u64,
    master_seed: u64,
    stream: u64,
) -> Result<ExitRecord> {
    if !domain.contains(start) {
        return Err(Error::StartOutsideDomain);
    }
    if domain.dim() != config.fields().dim_state() {
        return Err(Error::DimensionMismatch(format!(
            "domain dimension {} does not match chain dimension {}",
            domain.dim(),
            config.fields().dim_state()
        )));
    }
    let mut rng = stream_rng(master_seed, stream);
    let (state, stop) = run_until(
        config,
        start,
        |x, _| !domain.contains(x),
        cap,
        &mut rng,
    )?;
    let reason = match stop {
        StopReason::Predicate => ExitReason::Exited,
        StopReason::Capped => ExitReason::Capped,
        StopReason::NonFinite => ExitReason::NonFinite,
    };
    let scale = prediction.time_scale(config.eta())?;
    Ok(ExitRecord {
        eta: config.eta(),
        truncation: config.truncation(),
        sample_index,
        steps: state.step_count,
        scaled_time: scale * state.step_count as f64,
        exit_location: state.position,
        reason,
        seed_hi: master_seed,
        seed_lo: stream,
    })
}

/// An (eta grid) x (threshold grid) experiment plan.
#[derive(Clone, Debug)]
pub struct BatchSpec {
    pub etas: Vec<f64>,
    pub truncations: Vec<f64>,
    pub samples_per_cell: u64,
    pub cap: u64,
    pub gamma: f64,
    pub master_seed: u64,
    pub parallelism: Parallelism,
    pub start: Vec<f64>,
}

/// Run every grid cell. Records come back in canonical (eta, truncation,
/// sample) order, and the noise streams depend only on (eta, sample) so
/// different thresholds see coupled randomness. `predictions` supplies the
/// scaled-time map per threshold, aligned with `spec.truncations`.
pub fn exit_batch(
    fields: &Arc<FieldPair>,
    noise: &Arc<TailModel>,
    domain: &DomainSpec,
    spec: &BatchSpec,
    predictions: &[ScalingPrediction],
) -> Result<Vec<ExitRecord>> {
    if spec.etas.is_empty() || spec.truncations.is_empty() {
        return Err(Error::InvalidParameter("empty experiment grid".into()));
    }
    if spec.samples_per_cell == 0 {
        return Err(Error::EmptySamples("samples_per_cell is zero".into()));
    }
    if predictions.len() != spec.truncations.len() {
        return Err(Error::InvalidParameter(format!(
            "{} predictions for {} thresholds",
            predictions.len(),
            spec.truncations.len()
        )));
    }
    // fail fast on bad cell parameters and build one config per cell
    let mut configs = Vec::with_capacity(spec.etas.len() * spec.truncations.len());
    for &eta in &spec.etas {
        for &b in &spec.truncations {
            configs.push(ChainConfig::new(
                Arc::clone(fields),
                Arc::clone(noise),
                eta,
                b,
                spec.gamma,
            )?);
        }
    }
    let n_b = spec.truncations.len() as u64;
    let n = spec.samples_per_cell;
    let total = spec.etas.len() as u64 * n_b * n;
    let batches: Vec<Result<Vec<ExitRecord>>> =
        map_batches(total, 256, spec.parallelism, |_, range| {
            let mut out = Vec::with_capacity((range.end - range.start) as usize);
            for flat in range {
                let cell = flat / n;
                let sample = flat % n;
                let eta_idx = (cell / n_b) as usize;
                let b_idx = (cell % n_b) as usize;
                let config = &configs[eta_idx * n_b as usize + b_idx];
                let record = first_exit(
                    config,
                    domain,
                    &spec.start,
                    spec.cap,
                    &predictions[b_idx],
                    sample,
                    spec.master_seed,
                    exit_stream(eta_idx, sample),
                )?;
                out.push(record);
            }
            Ok(out)
        });
    let mut records = Vec::with_capacity(total as usize);
    for batch in batches {
        records.extend(batch?);
    }
    Ok(records)
}

/// Per-cell aggregate: mean steps with its error, and how many runs never
/// finished (making the mean a lower bound).
#[derive(Clone, Debug)]
pub struct CellSummary {
    pub eta: f64,
    pub truncation: f64,
    pub samples: u64,
    pub mean_steps: f64,
    pub std_error: f64,
    pub capped: u64,
}

impl CellSummary {
    /// True when the mean underestimates the true exit time.
    pub fn lower_bound_only(&self) -> bool {
        self.capped > 0
    }
}

/// Group records into (eta, truncation) cells, canonical order.
pub fn summarize(records: &[ExitRecord]) -> Vec<CellSummary> {
    let mut cells: BTreeMap<(u64, u64), Vec<&ExitRecord>> = BTreeMap::new();
    for r in records {
        cells
            .entry((r.eta.to_bits(), r.truncation.to_bits()))
            .or_default()
            .push(r);
    }
    let mut out: Vec<CellSummary> = cells
        .into_values()
        .map(|rs| {
            let steps: Vec<f64> = rs.iter().map(|r| r.steps as f64).collect();
            let (mean, se) = mean_stderr(&steps);
            CellSummary {
                eta: rs[0].eta,
                truncation: rs[0].truncation,
                samples: rs.len() as u64,
                mean_steps: mean,
                std_error: se,
                capped: rs
                    .iter()
                    .filter(|r| r.reason != ExitReason::Exited)
                    .count() as u64,
            }
        })
        .collect();
    out.sort_by(|a, b| {
        a.eta
            .partial_cmp(&b.eta)
            .unwrap()
            .then(a.truncation.partial_cmp(&b.truncation).unwrap())
    });
    out
}

/// Log-log OLS of mean steps against eta for records sharing one threshold.
/// Capped or non-finite records bias the mean down, so they are an error
/// here, not a warning.
pub fn scaling_slope(records: &[ExitRecord]) -> Result<(f64, f64)> {
    if records.is_empty() {
        return Err(Error::EmptySamples("no records to fit".into()));
    }
    let b = records[0].truncation;
    if records.iter().any(|r| r.truncation.to_bits() != b.to_bits()) {
        return Err(Error::InvalidParameter(
            "slope fit needs records from a single threshold".into(),
        ));
    }
    let capped = records
        .iter()
        .filter(|r| r.reason != ExitReason::Exited)
        .count();
    if capped > 0 {
        return Err(Error::CappedRecords(format!(
            "{capped} records never exited; their means are lower bounds"
        )));
    }
    let summaries = summarize(records);
    if summaries.len() < 3 {
        return Err(Error::InvalidParameter(format!(
            "slope fit needs at least 3 eta values, got {}",
            summaries.len()
        )));
    }
    let xs: Vec<f64> = summaries.iter().map(|c| c.eta.ln()).collect();
    let ys: Vec<f64> = summaries.iter().map(|c| c.mean_steps.ln()).collect();
    let (slope, slope_se, _) = ols_line(&xs, &ys);
    Ok((slope, slope_se))
}

/// KS distance between the predicted-scale exit times and the unit
/// exponential. Scaled times are recomputed from raw steps under the given
/// prediction so records built with a unit prediction can be re-tested.
pub fn ks_exponential(
    records: &[ExitRecord],
    prediction: &ScalingPrediction,
) -> Result<(f64, usize)> {
    if records.iter().any(|r| r.reason != ExitReason::Exited) {
        return Err(Error::CappedRecords(
            "the KS test needs fully exited records".into(),
        ));
    }
    if records.len() < 50 {
        return Err(Error::EmptySamples(format!(
            "the KS test needs at least 50 records, got {}",
            records.len()
        )));
    }
    let mut scaled = Vec::with_capacity(records.len());
    for r in records {
        scaled.push(prediction.time_scale(r.eta)? * r.steps as f64);
    }
    Ok((ks_statistic(&scaled, exp1_cdf), records.len()))
}

/// Total-variation distance between the empirical exit-location histogram
/// and a measure-module law over the same bins.
pub fn exit_location_compare(
    records: &[ExitRecord],
    law: &LocationLaw,
    domain: &DomainSpec,
    bins: &ExitBins,
) -> Result<f64> {
    if records.iter().any(|r| r.reason != ExitReason::Exited) {
        return Err(Error::CappedRecords(
            "location comparison needs fully exited records".into(),
        ));
    }
    if records.is_empty() {
        return Err(Error::EmptySamples("no records to compare".into()));
    }
    let n_bins = match bins {
        ExitBins::LeftRight => 2,
        ExitBins::Custom(list) => list.len(),
    };
    if law.fractions.len() != n_bins {
        return Err(Error::DimensionMismatch(format!(
            "law has {} bins, classifier has {n_bins}",
            law.fractions.len()
        )));
    }
    let mut counts = vec![0u64; n_bins];
    for r in records {
        match bins {
            ExitBins::LeftRight => {
                let (lo, hi) = match domain {
                    DomainSpec::Interval { lo, hi } => (*lo, *hi),
                    _ => {
                        return Err(Error::InvalidParameter(
                            "LeftRight bins need an Interval domain".into(),
                        ))
                    }
                };
                if r.exit_location[0] <= lo {
                    counts[0] += 1;
                } else if r.exit_location[0] >= hi {
                    counts[1] += 1;
                }
            }
            ExitBins::Custom(list) => {
                for (i, bin) in list.iter().enumerate() {
                    if bin(&r.exit_location) {
                        counts[i] += 1;
                        break;
                    }
                }
            }
        }
    }
    let n = records.len() as f64;
    let empirical: Vec<f64> = counts.iter().map(|c| *c as f64 / n).collect();
    Ok(tv_distance(&empirical, &law.fractions))
}

fn fmt_truncation(b: f64) -> String {
    if b == f64::INFINITY {
        "inf".to_string()
    } else {
        format!("{b}")
    }
}

/// Write records under the exact contract header:
/// eta,b,sample_index,steps,scaled_time,exit_x_1..exit_x_m,reason,seed_hi,seed_lo
pub fn write_records_csv(records: &[ExitRecord], out: &mut impl Write) -> io::Result<()> {
    let dim = records.first().map_or(1, |r| r.exit_location.len());
    write!(out, "eta,b,sample_index,steps,scaled_time")?;
    for i in 1..=dim {
        write!(out, ",exit_x_{i}")?;
    }
    writeln!(out, ",reason,seed_hi,seed_lo")?;
    for r in records {
        write!(
            out,
            "{},{},{},{},{}",
            r.eta,
            fmt_truncation(r.truncation),
            r.sample_index,
            r.steps,
            r.scaled_time
        )?;
        for x in &r.exit_location {
            write!(out, ",{x}")?;
        }
        writeln!(out, ",{},{},{}", r.reason.as_str(), r.seed_hi, r.seed_lo)?;
    }
    Ok(())
}

/// Write cell summaries: eta,b,samples,mean_steps,std_error,capped.
pub fn write_summary_csv(cells: &[CellSummary], out: &mut impl Write) -> io::Result<()> {
    writeln!(out, "eta,b,samples,mean_steps,std_error,capped")?;
    for c in cells {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            c.eta,
            fmt_truncation(c.truncation),
            c.samples,
            c.mean_steps,
            c.std_error,
            c.capped
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::scalar_fields;
    use crate::measures::exit_location_law;
    use crate::noise::SpectralMeasure;
    use rand::Rng;

    fn linear_setup(alpha: f64) -> (Arc<FieldPair>, Arc<TailModel>) {
        let fields = Arc::new(scalar_fields(|x| -x, |_| 1.0));
        let noise = Arc::new(
            TailModel::new(alpha, 1.0, 1.0, 0.0, SpectralMeasure::symmetric()).unwrap(),
        );
        (fields, noise)
    }

    fn benchmark_prediction(noise: &Arc<TailModel>) -> ScalingPrediction {
        // I = (-2, 2), b = inf: J = 1 and C = 2 * (1/2) * 2^(-1.5)
        ScalingPrediction::new(
            1,
            2.0_f64.powf(-1.5),
            0.0,
            f64::INFINITY,
            1.0,
            Arc::clone(noise),
        )
        .unwrap()
    }

    fn synthetic_record(eta: f64, steps: u64, reason: ExitReason) -> ExitRecord {
        ExitRecord {
            eta,
            truncation: f64::INFINITY,
            sample_index: 0,
            steps,
            scaled_time: 0.0,
            exit_location: vec![2.5],
            reason,
            seed_hi: 0,
            seed_lo: 0,
        }
    }

    #[test]
    fn always_inside_domain_caps() {
        let (fields, noise) = linear_setup(1.5);
        let domain = DomainSpec::Predicate {
            member: Arc::new(|_: &[f64]| true),
            bounding_box: vec![(-100.0, 100.0)],
        };
        let config = ChainConfig::new(fields, noise.clone(), 0.1, f64::INFINITY, 1.0).unwrap();
        let prediction = benchmark_prediction(&noise);
        let r = first_exit(&config, &domain, &[0.0], 50, &prediction, 0, 1, 1).unwrap();
        assert_eq!(r.reason, ExitReason::Capped);
        assert_eq!(r.steps, 50);
    }

    #[test]
    fn disabled_noise_never_exits() {
        let fields = Arc::new(scalar_fields(|x| -x, |_| 0.0));
        let noise =
            Arc::new(TailModel::new(1.5, 1.0, 1.0, 0.0, SpectralMeasure::symmetric()).unwrap());
        let domain = DomainSpec::interval(-2.0, 2.0).unwrap();
        let config = ChainConfig::new(fields, noise.clone(), 0.1, f64::INFINITY, 1.0).unwrap();
        let prediction = benchmark_prediction(&noise);
        let r = first_exit(&config, &domain, &[1.0], 200, &prediction, 0, 1, 2).unwrap();
        assert_eq!(r.reason, ExitReason::Capped);
    }

    #[test]
    fn start_outside_is_an_error() {
        let (fields, noise) = linear_setup(1.5);
        let domain = DomainSpec::interval(-2.0, 2.0).unwrap();
        let config = ChainConfig::new(fields, noise.clone(), 0.1, f64::INFINITY, 1.0).unwrap();
        let prediction = benchmark_prediction(&noise);
        assert!(matches!(
            first_exit(&config, &domain, &[2.5], 50, &prediction, 0, 1, 3),
            Err(Error::StartOutsideDomain)
        ));
    }

    #[test]
    fn benchmark_mean_steps_and_scaled_mean() {
        let (fields, noise) = linear_setup(1.5);
        let domain = DomainSpec::interval(-2.0, 2.0).unwrap();
        let prediction = benchmark_prediction(&noise);
        let spec = BatchSpec {
            etas: vec![0.05],
            truncations: vec![f64::INFINITY],
            samples_per_cell: 200,
            cap: 10_000_000,
            gamma: 1.0,
            master_seed: 71,
            parallelism: Parallelism::Auto,
            start: vec![0.0],
        };
        let records = exit_batch(&fields, &noise, &domain, &spec, &[prediction]).unwrap();
        assert_eq!(records.len(), 200);
        assert!(records.iter().all(|r| r.reason == ExitReason::Exited));
        // Exited means the recorded location is genuinely outside
        assert!(records.iter().all(|r| !domain.contains(&r.exit_location)));
        let mean = records.iter().map(|r| r.steps as f64).sum::<f64>() / 200.0;
        // Corollary scale: mean steps ~ 2^1.5 * 0.05^(-1.5) ~ 253
        let target = 2.0_f64.powf(1.5) * 0.05_f64.powf(-1.5);
        assert!(
            mean >= 0.5 * target && mean <= 2.0 * target,
            "mean steps {mean} vs predicted {target}"
        );
        let scaled_mean =
            records.iter().map(|r| r.scaled_time).sum::<f64>() / records.len() as f64;
        assert!(
            (0.5..=2.0).contains(&scaled_mean),
            "scaled mean {scaled_mean} should be near the Exp(1) mean"
        );
    }

    #[test]
    fn batch_is_deterministic_and_parallel_invariant() {
        let (fields, noise) = linear_setup(1.5);
        let domain = DomainSpec::interval(-2.0, 2.0).unwrap();
        let prediction = benchmark_prediction(&noise);
        let mut spec = BatchSpec {
            etas: vec![0.1, 0.05],
            truncations: vec![f64::INFINITY, 1.2],
            samples_per_cell: 10,
            cap: 1_000_000,
            gamma: 1.0,
            master_seed: 72,
            parallelism: Parallelism::Sequential,
            start: vec![0.0],
        };
        let preds = vec![prediction.clone(), {
            ScalingPrediction::unit(2, 1.2, 1.0, Arc::clone(&noise)).unwrap()
        }];
        let a = exit_batch(&fields, &noise, &domain, &spec, &preds).unwrap();
        spec.parallelism = Parallelism::Threads(4);
        let b = exit_batch(&fields, &noise, &domain, &spec, &preds).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.steps, y.steps);
            assert_eq!(x.exit_location, y.exit_location);
            assert_eq!(x.scaled_time.to_bits(), y.scaled_time.to_bits());
        }
        // canonical order: the configured grid, eta-major, then threshold,
        // then sample index
        let (nb, ns) = (spec.truncations.len(), spec.samples_per_cell as usize);
        for (i, r) in a.iter().enumerate() {
            assert_eq!(r.eta, spec.etas[i / (nb * ns)]);
            assert_eq!(r.truncation, spec.truncations[(i / ns) % nb]);
            assert_eq!(r.sample_index, (i % ns) as u64);
        }
    }

    #[test]
    fn coupled_streams_make_truncation_slow_exit() {
        let (fields, noise) = linear_setup(1.5);
        let domain = DomainSpec::interval(-2.0, 2.0).unwrap();
        let spec = BatchSpec {
            etas: vec![0.1],
            truncations: vec![f64::INFINITY, 1.2, 0.7],
            samples_per_cell: 20,
            cap: 3_000_000,
            gamma: 1.0,
            master_seed: 73,
            parallelism: Parallelism::Auto,
            start: vec![0.0],
        };
        let preds = vec![
            ScalingPrediction::unit(1, f64::INFINITY, 1.0, Arc::clone(&noise)).unwrap(),
            ScalingPrediction::unit(2, 1.2, 1.0, Arc::clone(&noise)).unwrap(),
            ScalingPrediction::unit(3, 0.7, 1.0, Arc::clone(&noise)).unwrap(),
        ];
        let records = exit_batch(&fields, &noise, &domain, &spec, &preds).unwrap();
        let mean_for = |b: f64| {
            let rs: Vec<f64> = records
                .iter()
                .filter(|r| r.truncation == b)
                .map(|r| r.steps as f64)
                .collect();
            rs.iter().sum::<f64>() / rs.len() as f64
        };
        let m_inf = mean_for(f64::INFINITY);
        let m_12 = mean_for(1.2);
        let m_07 = mean_for(0.7);
        assert!(
            m_inf <= m_12 && m_12 <= m_07,
            "means must grow as the threshold shrinks: {m_inf}, {m_12}, {m_07}"
        );
    }

    #[test]
    fn synthetic_power_law_slope_is_exact() {
        let mut records = Vec::new();
        for &eta in &[0.1, 0.05, 0.02, 0.01] {
            for i in 0..3 {
                let mut r = synthetic_record(eta, (7.0 * eta.powf(-2.0)).round() as u64, {
                    ExitReason::Exited
                });
                r.sample_index = i;
                records.push(r);
            }
        }
        let (slope, se) = scaling_slope(&records).unwrap();
        assert!(
            (slope + 2.0).abs() < 2e-3,
            "slope {slope} should be -2 (rounding leaves tiny bias)"
        );
        assert!(se < 2e-3);
    }

    #[test]
    fn capped_records_poison_slope_and_ks() {
        let records = vec![
            synthetic_record(0.1, 100, ExitReason::Exited),
            synthetic_record(0.05, 300, ExitReason::Capped),
            synthetic_record(0.02, 900, ExitReason::Exited),
        ];
        assert!(matches!(
            scaling_slope(&records),
            Err(Error::CappedRecords(_))
        ));
        let (_, noise) = linear_setup(1.5);
        let prediction = benchmark_prediction(&noise);
        assert!(matches!(
            ks_exponential(&records, &prediction),
            Err(Error::CappedRecords(_))
        ));
    }

    #[test]
    fn mixed_threshold_slope_is_rejected() {
        let mut a = synthetic_record(0.1, 100, ExitReason::Exited);
        a.truncation = 1.0;
        let b = synthetic_record(0.05, 300, ExitReason::Exited);
        assert!(scaling_slope(&[a, b]).is_err());
    }

    #[test]
    fn ks_on_exact_exponential_samples() {
        let (_, noise) = linear_setup(1.5);
        // time scale at eta = 0.01: H(100) = 100^(-1.5) = 1e-3
        let prediction =
            ScalingPrediction::new(1, 1.0, 0.0, f64::INFINITY, 1.0, Arc::clone(&noise)).unwrap();
        let scale = prediction.time_scale(0.01).unwrap();
        let mut rng = stream_rng(99, 0);
        let records: Vec<ExitRecord> = (0..500)
            .map(|i| {
                let u: f64 = rng.gen();
                let e = -(1.0 - u).ln();
                let mut r = synthetic_record(0.01, (e / scale).round() as u64, ExitReason::Exited);
                r.sample_index = i;
                r
            })
            .collect();
        let (ks, n) = ks_exponential(&records, &prediction).unwrap();
        assert_eq!(n, 500);
        assert!(ks < 0.061, "KS {ks} should pass the 5% critical value");
        // degenerate constant times are maximally non-exponential
        let constant: Vec<ExitRecord> = (0..100)
            .map(|_| synthetic_record(0.01, (1.0 / scale) as u64, ExitReason::Exited))
            .collect();
        let (ks, _) = ks_exponential(&constant, &prediction).unwrap();
        assert!(ks >= 0.5, "constant times gave KS {ks}");
    }

    #[test]
    fn ks_needs_enough_samples() {
        let (_, noise) = linear_setup(1.5);
        let prediction = benchmark_prediction(&noise);
        let records = vec![synthetic_record(0.1, 10, ExitReason::Exited); 10];
        assert!(matches!(
            ks_exponential(&records, &prediction),
            Err(Error::EmptySamples(_))
        ));
    }

    #[test]
    fn benchmark_ks_and_location_and_independence() {
        let (fields, noise) = linear_setup(1.5);
        let domain = DomainSpec::interval(-2.0, 2.0).unwrap();
        let prediction = benchmark_prediction(&noise);
        let spec = BatchSpec {
            etas: vec![0.02],
            truncations: vec![f64::INFINITY],
            samples_per_cell: 300,
            cap: 50_000_000,
            gamma: 1.0,
            master_seed: 74,
            parallelism: Parallelism::Auto,
            start: vec![0.0],
        };
        let records =
            exit_batch(&fields, &noise, &domain, &spec, &[prediction.clone()]).unwrap();
        let (ks, _) = ks_exponential(&records, &prediction).unwrap();
        assert!(ks < 0.12, "benchmark KS {ks} drifted from the Exp(1) law");

        let law = exit_location_law(
            &fields,
            &domain,
            f64::INFINITY,
            &noise,
            &ExitBins::LeftRight,
            &RateConfig::new(100_000, 75),
        )
        .unwrap();
        let tv = exit_location_compare(&records, &law, &domain, &ExitBins::LeftRight).unwrap();
        assert!(tv < 0.1, "TV {tv} against the symmetric law");

        // Asymptotic independence: exit side carries no information about
        // the scaled exit time
        let left: Vec<f64> = records
            .iter()
            .map(|r| if r.exit_location[0] <= -2.0 { 1.0 } else { 0.0 })
            .collect();
        let times: Vec<f64> = records.iter().map(|r| r.scaled_time).collect();
        let (mt, _) = mean_stderr(&times);
        let (ml, _) = mean_stderr(&left);
        let cov: f64 = times
            .iter()
            .zip(&left)
            .map(|(t, l)| (t - mt) * (l - ml))
            .sum::<f64>()
            / (times.len() as f64 - 1.0);
        let vt: f64 = times.iter().map(|t| (t - mt) * (t - mt)).sum::<f64>()
            / (times.len() as f64 - 1.0);
        let vl: f64 =
            left.iter().map(|l| (l - ml) * (l - ml)).sum::<f64>() / (left.len() as f64 - 1.0);
        let rho = cov / (vt * vl).sqrt();
        assert!(
            rho.abs() < 0.15,
            "scaled time and exit side correlate: rho = {rho}"
        );
    }

    #[test]
    fn single_bin_comparison_is_exact() {
        let (fields, noise) = linear_setup(1.5);
        let domain = DomainSpec::interval(-2.0, 2.0).unwrap();
        let everything: Vec<Box<dyn Fn(&[f64]) -> bool + Send + Sync>> =
            vec![Box::new(|_: &[f64]| true)];
        let bins = ExitBins::Custom(everything);
        let law = exit_location_law(
            &fields,
            &domain,
            f64::INFINITY,
            &noise,
            &bins,
            &RateConfig::new(20_000, 76),
        )
        .unwrap();
        let records = vec![synthetic_record(0.1, 10, ExitReason::Exited); 60];
        let tv = exit_location_compare(&records, &law, &domain, &bins).unwrap();
        assert_eq!(tv, 0.0);
        // bin-count mismatch is a hard error
        assert!(matches!(
            exit_location_compare(&records, &law, &domain, &ExitBins::LeftRight),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn prediction_slopes_and_scales() {
        let (_, noise) = linear_setup(1.5);
        let untruncated = benchmark_prediction(&noise);
        assert!((untruncated.predicted_slope() + 1.5).abs() < 1e-12);
        let truncated = ScalingPrediction::unit(2, 1.2, 1.0, Arc::clone(&noise)).unwrap();
        assert!((truncated.predicted_slope() + 2.0).abs() < 1e-12);
        // time scale at gamma = 1: C * H(1/eta)^J / eta^(J-1)
        let c = 2.0_f64.powf(-1.5);
        let expect = c * 0.05 * (0.05_f64.powf(-1.0) * 20.0_f64.powf(-1.5)).powi(1);
        let got = untruncated.time_scale(0.05).unwrap();
        assert!((got - expect).abs() < 1e-15, "{got} vs {expect}");
        // gamma = 2 steepens the slope through gamma * alpha
        let steep = ScalingPrediction::unit(1, f64::INFINITY, 2.0, Arc::clone(&noise)).unwrap();
        assert!((steep.predicted_slope() + 3.0).abs() < 1e-12);
    }

    #[test]
    fn csv_texture() {
        let (fields, noise) = linear_setup(1.5);
        let domain = DomainSpec::interval(-2.0, 2.0).unwrap();
        let prediction = benchmark_prediction(&noise);
        let spec = BatchSpec {
            etas: vec![0.1],
            truncations: vec![f64::INFINITY],
            samples_per_cell: 3,
            cap: 1_000_000,
            gamma: 1.0,
            master_seed: 77,
            parallelism: Parallelism::Sequential,
            start: vec![0.0],
        };
        let records = exit_batch(&fields, &noise, &domain, &spec, &[prediction]).unwrap();
        let mut buf = Vec::new();
        write_records_csv(&records, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "eta,b,sample_index,steps,scaled_time,exit_x_1,reason,seed_hi,seed_lo"
        );
        assert_eq!(text.lines().count(), 4);
        assert!(text.contains(",inf,"));
        assert!(text.contains("Exited"));
        let mut buf = Vec::new();
        write_summary_csv(&summarize(&records), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("eta,b,samples,mean_steps,std_error,capped"));
        assert_eq!(text.lines().count(), 2);
    }
}
