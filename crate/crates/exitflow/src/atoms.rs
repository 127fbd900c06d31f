//! Validation harness for the asymptotic-atom exit framework on arbitrary
//! Markov chains: Monte Carlo estimates of the four defining quantities
//! (normalized exit-probability bounds from atom starts, the stranded-path
//! rate, the atom-return probability), a synthetic chain whose exit law is
//! exactly geometric, and the geometric-front sandwich bounds.
//!
//! The framework's conditions are double limits in (eta, T); this harness
//! evaluates them at user-fixed knobs and reports raw normalized rates, so
//! trends over a grid are the caller's job.

use std::io::{self, Write};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::dynamics::{step, ChainConfig, ChainState};
use crate::error::{Error, Result};
use crate::exit::ScalingPrediction;
use crate::geometry::DomainSpec;
use crate::parallel::{map_batches, Parallelism};
use crate::rng::{stream_rng, ATOM_STREAM_BASE};
use crate::stats::norm2;

type MemberFn<S> = Box<dyn Fn(&S) -> bool + Send + Sync>;

/// A Markov chain reduced to what the atom framework needs: one-step
/// transitions plus membership tests for the atom A(eps), the covering
/// I(eps), and the domain I, and the time-scale function gamma(eta).
///
/// The step closure must be a genuine Markov kernel: all state lives in `S`
/// and all randomness comes from the supplied generator.
pub struct AbstractChain<S> {
    step: Box<dyn Fn(&S, &mut ChaCha8Rng) -> S + Send + Sync>,
    in_atom: MemberFn<S>,
    in_covering: MemberFn<S>,
    in_domain: MemberFn<S>,
    scale: Box<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl<S> AbstractChain<S> {
    pub fn new(
        step: impl Fn(&S, &mut ChaCha8Rng) -> S + Send + Sync + 'static,
        in_atom: impl Fn(&S) -> bool + Send + Sync + 'static,
        in_covering: impl Fn(&S) -> bool + Send + Sync + 'static,
        in_domain: impl Fn(&S) -> bool + Send + Sync + 'static,
        scale: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        AbstractChain {
            step: Box::new(step),
            in_atom: Box::new(in_atom),
            in_covering: Box::new(in_covering),
            in_domain: Box::new(in_domain),
            scale: Box::new(scale),
        }
    }

    pub fn step(&self, state: &S, rng: &mut ChaCha8Rng) -> S {
        (self.step)(state, rng)
    }

    pub fn in_atom(&self, state: &S) -> bool {
        (self.in_atom)(state)
    }

    pub fn in_covering(&self, state: &S) -> bool {
        (self.in_covering)(state)
    }

    pub fn in_domain(&self, state: &S) -> bool {
        (self.in_domain)(state)
    }

    /// gamma(eta): the exit-rate scale the estimates are normalized by.
    pub fn scale(&self, eta: f64) -> f64 {
        (self.scale)(eta)
    }
}

/// Start-point sets for the two families of estimates: exit bounds run from
/// atom points, stranded/return estimates run from covering points.
pub struct AtomStarts<S> {
    pub atom: Vec<S>,
    pub covering: Vec<S>,
}

/// Experiment knobs. The framework takes eta to 0 and T to infinity; here
/// both are fixed and recorded with the results.
#[derive(Clone, Debug)]
pub struct AtomKnobs {
    pub eta: f64,
    pub epsilon: f64,
    /// Continuous horizon T; trajectories run for ceil(T/eta) steps.
    pub horizon_time: f64,
    pub samples: u64,
    pub master_seed: u64,
    pub parallelism: Parallelism,
}

impl AtomKnobs {
    pub fn new(eta: f64, epsilon: f64, horizon_time: f64, samples: u64, master_seed: u64) -> Self {
        AtomKnobs {
            eta,
            epsilon,
            horizon_time,
            samples,
            master_seed,
            parallelism: Parallelism::Auto,
        }
    }

    pub fn horizon_steps(&self) -> u64 {
        (self.horizon_time / self.eta).ceil().max(1.0) as u64
    }
}

/// Monte Carlo estimates of the framework's four quantities at one knob
/// setting. Exit and stranded figures are normalized by gamma(eta) * T/eta
/// (rates, nonnegative, can exceed 1); the return figure is a bare
/// probability.
#[derive(Clone, Debug)]
pub struct AtomDiagnostics {
    /// Worst (smallest) normalized exit probability over the atom starts.
    pub exit_rate_lower: f64,
    pub exit_rate_lower_se: f64,
    /// Best (largest) normalized exit probability over the atom starts.
    pub exit_rate_upper: f64,
    pub exit_rate_upper_se: f64,
    /// Largest normalized probability, over covering starts, of neither
    /// reaching the atom nor leaving the covering within the horizon.
    pub stranded_rate: f64,
    pub stranded_rate_se: f64,
    /// Smallest probability, over covering starts, of reaching the atom
    /// within the horizon.
    pub return_prob: f64,
    pub return_prob_se: f64,
    /// gamma(eta) * T/eta, the denominator of the normalized figures.
    pub normalizer: f64,
    pub eta: f64,
    pub epsilon: f64,
    pub horizon_time: f64,
    pub horizon_steps: u64,
    pub samples: u64,
}

impl AtomDiagnostics {
    pub fn csv_header() -> &'static str {
        "eta,epsilon,horizon_time,horizon_steps,samples,\
         exit_rate_lower,exit_rate_lower_se,exit_rate_upper,exit_rate_upper_se,\
         stranded_rate,stranded_rate_se,return_prob,return_prob_se"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.eta,
            self.epsilon,
            self.horizon_time,
            self.horizon_steps,
            self.samples,
            self.exit_rate_lower,
            self.exit_rate_lower_se,
            self.exit_rate_upper,
            self.exit_rate_upper_se,
            self.stranded_rate,
            self.stranded_rate_se,
            self.return_prob,
            self.return_prob_se
        )
    }
}

pub fn write_diagnostics_csv(rows: &[AtomDiagnostics], out: &mut impl Write) -> io::Result<()> {
    writeln!(out, "{}", AtomDiagnostics::csv_header())?;
    for d in rows {
        writeln!(out, "{}", d.csv_row())?;
    }
    Ok(())
}

// stream-layout tags keeping the three estimate families on disjoint
// ChaCha streams
const EXIT_TAG: u64 = 0;
const STRANDED_TAG: u64 = 1;
const RETURN_TAG: u64 = 2;

fn atom_stream(tag: u64, start_idx: usize, sample: u64) -> u64 {
    ATOM_STREAM_BASE | (tag << 44) | ((start_idx as u64) << 32) | sample
}

/// Per-start hit fraction of `hit` over `n` trajectories; deterministic in
/// the master seed and invariant under the parallelism degree.
fn hit_fractions<S: Clone + Send + Sync>(
    starts: &[S],
    n: u64,
    knobs: &AtomKnobs,
    tag: u64,
    hit: &(dyn Fn(&S, &mut ChaCha8Rng) -> bool + Sync),
) -> Vec<(f64, f64)> {
    let n_starts = starts.len() as u64;
    let total = n_starts * n;
    let batches: Vec<Vec<u64>> =
        map_batches(total, 1024, knobs.parallelism, |_, range| {
            let mut counts = vec![0u64; starts.len()];
            for flat in range {
                let start_idx = (flat / n) as usize;
                let sample = flat % n;
                let mut rng = stream_rng(knobs.master_seed, atom_stream(tag, start_idx, sample));
                if hit(&starts[start_idx], &mut rng) {
                    counts[start_idx] += 1;
                }
            }
            counts
        });
    let mut counts = vec![0u64; starts.len()];
    for batch in batches {
        for (total, part) in counts.iter_mut().zip(batch) {
            *total += part;
        }
    }
    counts
        .iter()
        .map(|&c| {
            let p = c as f64 / n as f64;
            (p, (p * (1.0 - p) / n as f64).sqrt())
        })
        .collect()
}

fn extremal(fractions: &[(f64, f64)], largest: bool) -> (f64, f64) {
    let mut best = fractions[0];
    for &(p, se) in &fractions[1..] {
        if (largest && p > best.0) || (!largest && p < best.0) {
            best = (p, se);
        }
    }
    best
}

/// Estimate the four framework quantities at fixed knobs.
///
/// From each atom start: the probability of leaving the covering within
/// ceil(T/eta) steps with the first outside state in `event`, normalized by
/// gamma(eta) * T/eta; the lower/upper figures are the min/max over starts.
/// From each covering start: the normalized probability of spending the
/// whole horizon outside the atom yet inside the covering (stranded), and
/// the bare probability of hitting the atom within the horizon (return).
pub fn estimate_atom_rates<S: Clone + Send + Sync>(
    chain: &AbstractChain<S>,
    starts: &AtomStarts<S>,
    knobs: &AtomKnobs,
    event: &(dyn Fn(&S) -> bool + Sync),
) -> Result<AtomDiagnostics> {
    if starts.atom.is_empty() {
        return Err(Error::EmptySamples("no atom start points supplied".into()));
    }
    if starts.covering.is_empty() {
        return Err(Error::EmptySamples(
            "no covering start points supplied".into(),
        ));
    }
    if knobs.samples < 100 {
        return Err(Error::InvalidParameter(format!(
            "atom diagnostics need at least 100 samples per start, got {}",
            knobs.samples
        )));
    }
    if !(knobs.eta > 0.0 && knobs.eta.is_finite()) || !(knobs.horizon_time > 0.0) {
        return Err(Error::InvalidParameter(
            "atom diagnostics need eta > 0 and a positive horizon".into(),
        ));
    }
    for s in &starts.atom {
        if !chain.in_atom(s) {
            return Err(Error::InvalidParameter(
                "an atom start point is not in the atom".into(),
            ));
        }
    }
    for s in &starts.covering {
        if !chain.in_covering(s) {
            return Err(Error::InvalidParameter(
                "a covering start point is not in the covering".into(),
            ));
        }
    }
    let gamma = chain.scale(knobs.eta);
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "scale function must be positive and finite at eta = {}, got {gamma}",
            knobs.eta
        )));
    }
    let m = knobs.horizon_steps();
    let normalizer = gamma * knobs.horizon_time / knobs.eta;
    let n = knobs.samples;

    // exit within the horizon, landing in the event set
    let exit_hit = |start: &S, rng: &mut ChaCha8Rng| -> bool {
        let mut state = start.clone();
        for _ in 0..m {
            state = chain.step(&state, rng);
            if !chain.in_covering(&state) {
                return event(&state);
            }
        }
        false
    };
    let exit_fracs = hit_fractions(&starts.atom, n, knobs, EXIT_TAG, &exit_hit);
    let (lo, lo_se) = extremal(&exit_fracs, false);
    let (hi, hi_se) = extremal(&exit_fracs, true);

    // the whole horizon inside the covering but outside the atom
    let stranded_hit = |start: &S, rng: &mut ChaCha8Rng| -> bool {
        let mut state = start.clone();
        if chain.in_atom(&state) || !chain.in_covering(&state) {
            return false;
        }
        for _ in 0..m {
            state = chain.step(&state, rng);
            if chain.in_atom(&state) || !chain.in_covering(&state) {
                return false;
            }
        }
        true
    };
    let stranded_fracs = hit_fractions(&starts.covering, n, knobs, STRANDED_TAG, &stranded_hit);
    let (stranded, stranded_se) = extremal(&stranded_fracs, true);

    // atom hit within the horizon, regardless of excursions
    let return_hit = |start: &S, rng: &mut ChaCha8Rng| -> bool {
        let mut state = start.clone();
        if chain.in_atom(&state) {
            return true;
        }
        for _ in 0..m {
            state = chain.step(&state, rng);
            if chain.in_atom(&state) {
                return true;
            }
        }
        false
    };
    let return_fracs = hit_fractions(&starts.covering, n, knobs, RETURN_TAG, &return_hit);
    let (ret, ret_se) = extremal(&return_fracs, false);

    let diag = AtomDiagnostics {
        exit_rate_lower: lo / normalizer,
        exit_rate_lower_se: lo_se / normalizer,
        exit_rate_upper: hi / normalizer,
        exit_rate_upper_se: hi_se / normalizer,
        stranded_rate: stranded / normalizer,
        stranded_rate_se: stranded_se / normalizer,
        return_prob: ret,
        return_prob_se: ret_se,
        normalizer,
        eta: knobs.eta,
        epsilon: knobs.epsilon,
        horizon_time: knobs.horizon_time,
        horizon_steps: m,
        samples: n,
    };
    debug_assert!((0.0..=1.0).contains(&diag.return_prob));
    debug_assert!(diag.exit_rate_lower >= 0.0 && diag.stranded_rate >= 0.0);
    Ok(diag)
}

/// A chain for which the framework's conclusions are exact, not asymptotic:
/// every step exits with the same probability independently of everything
/// else, and non-exiting steps walk deterministically toward the atom.
///
/// States: -1 is exited, 0 is the atom, 1..=k0 are staging states inside the
/// covering. Exit time from any start is exactly geometric(p_exit), so
/// p_exit * tau converges to a unit exponential as p_exit drops. The scale
/// function is gamma(eta) = p_exit * eta, making the normalized exit rate
/// (1 - (1-p)^ceil(T/eta)) / (p * T) — exactly 1 when one-step horizons are
/// used, and 1 + O(p * T/eta) in general.
pub fn synthetic_geometric_chain(p_exit: f64, atom_return_steps: u32) -> AbstractChain<i64> {
    assert!(
        p_exit > 0.0 && p_exit < 1.0,
        "per-step exit probability must be in (0,1), got {p_exit}"
    );
    let k0 = atom_return_steps as i64;
    AbstractChain::new(
        move |s: &i64, rng: &mut ChaCha8Rng| {
            if *s < 0 || rng.gen::<f64>() < p_exit {
                -1
            } else {
                (s - 1).max(0)
            }
        },
        |s: &i64| *s == 0,
        move |s: &i64| (0..=k0).contains(s),
        move |s: &i64| (0..=k0).contains(s),
        move |eta: f64| p_exit * eta,
    )
}

/// Exit time of the synthetic chain from one start, in steps. Used to check
/// the geometric law directly; never returns 0 because the start is inside.
pub fn geometric_exit_time(chain: &AbstractChain<i64>, start: i64, rng: &mut ChaCha8Rng) -> u64 {
    assert!(chain.in_covering(&start), "start must be inside the covering");
    let mut state = start;
    let mut steps = 0u64;
    loop {
        state = chain.step(&state, rng);
        steps += 1;
        if !chain.in_covering(&state) {
            return steps;
        }
    }
}

/// Wrap the truncated heavy-tailed chain as an AbstractChain with the
/// standard choices: atom = closed ball of radius eps at the origin,
/// covering = the domain shrunk by eps, scale = the prediction's time scale.
pub fn dynamics_chain(
    config: ChainConfig,
    domain: &DomainSpec,
    epsilon: f64,
    prediction: &ScalingPrediction,
) -> Result<AbstractChain<Vec<f64>>> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "atom radius must be positive and finite, got {epsilon}"
        )));
    }
    let covering = domain.shrink(epsilon).ok_or_else(|| {
        Error::InvalidParameter(format!(
            "shrinking the domain by {epsilon} leaves nothing around the origin"
        ))
    })?;
    let full = domain.clone();
    let prediction = prediction.clone();
    Ok(AbstractChain::new(
        move |x: &Vec<f64>, rng: &mut ChaCha8Rng| {
            let mut state = ChainState::new(x.clone());
            let mut scratch = config.scratch();
            // a blown-up step leaves the state at the last good position;
            // for diagnostics that reads as "stuck", which is honest
            let _ = step(&config, &mut state, &mut scratch, rng);
            state.position
        },
        move |x: &Vec<f64>| norm2(x) <= epsilon,
        move |x: &Vec<f64>| covering.contains(x),
        move |x: &Vec<f64>| full.contains(x),
        move |eta: f64| {
            prediction
                .time_scale(eta)
                .expect("time scale needs eta in (0,1)")
        },
    ))
}

/// The geometric-front sandwich at one epsilon: for U geometric with
/// success rate a(eps),
/// exp(-c a/b) <= P(U > 1/b) = (1-a)^floor(1/b) <= exp(-a/(c b))
/// for every c > 1 once eps is small enough.
#[derive(Clone, Copy, Debug)]
pub struct GeomFrontBounds {
    pub lower: f64,
    pub exact: f64,
    pub upper: f64,
    /// Whether the sandwich holds at this epsilon. The inequality is
    /// asymptotic, so a violation is data, not a failure.
    pub holds: bool,
}

pub fn geom_front_bounds(
    a_fn: &dyn Fn(f64) -> f64,
    b_fn: &dyn Fn(f64) -> f64,
    c: f64,
    epsilon: f64,
) -> Result<GeomFrontBounds> {
    if !(c > 1.0 && c.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "the sandwich constant must exceed 1, got {c}"
        )));
    }
    let a = a_fn(epsilon);
    let b = b_fn(epsilon);
    if !(a > 0.0 && a < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "success rate a(eps) must be in (0,1), got {a}"
        )));
    }
    if !(b > 0.0 && b.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "front width b(eps) must be positive and finite, got {b}"
        )));
    }
    let m = (1.0 / b).floor();
    // (1-a)^m via exp(m ln(1-a)) keeps precision when a is tiny
    let exact = (m * (-a).ln_1p()).exp();
    let lower = (-c * a / b).exp();
    let upper = (-a / (c * b)).exp();
    Ok(GeomFrontBounds {
        lower,
        exact,
        upper,
        holds: lower <= exact && exact <= upper,
    })
}

/// Largest epsilon on a log grid below which the sandwich holds at every
/// smaller grid point; None when it never does.
pub fn geom_front_threshold(
    a_fn: &dyn Fn(f64) -> f64,
    b_fn: &dyn Fn(f64) -> f64,
    c: f64,
) -> Result<Option<f64>> {
    let grid: Vec<f64> = (0..29).map(|i| 10f64.powf(-1.0 - 0.25 * i as f64)).collect();
    let mut threshold = None;
    // scan from the smallest epsilon up and stop at the first violation
    for &eps in grid.iter().rev() {
        if geom_front_bounds(a_fn, b_fn, c, eps)?.holds {
            threshold = Some(eps);
        } else {
            break;
        }
    }
    Ok(threshold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::scalar_fields;
    use crate::geometry::drift_horizon;
    use crate::noise::{SpectralMeasure, TailModel};
    use crate::stats::{exp1_cdf, ks_statistic};
    use std::sync::Arc;

    fn knobs(eta: f64, horizon: f64, n: u64, seed: u64) -> AtomKnobs {
        AtomKnobs::new(eta, 0.1, horizon, n, seed)
    }

    #[test]
    fn geometric_chain_hits_rate_one() {
        // horizon of one step makes the normalized rate exactly 1; a short
        // multi-step horizon keeps the O(pT/eta) bias under the noise
        for &(p, t) in &[(1e-2, 2.0), (1e-3, 2.0)] {
            let chain = synthetic_geometric_chain(p, 3);
            let starts = AtomStarts {
                atom: vec![0i64],
                covering: vec![0i64, 1, 3],
            };
            let k = knobs(1.0, t, 200_000, 81);
            let d = estimate_atom_rates(&chain, &starts, &k, &|_s: &i64| true).unwrap();
            let sigma = d.exit_rate_upper_se.max(1e-12);
            assert!(
                (d.exit_rate_upper - 1.0).abs() < 3.0 * sigma + 0.01,
                "p = {p}: normalized exit rate {} (se {sigma})",
                d.exit_rate_upper
            );
            assert!(d.exit_rate_lower <= d.exit_rate_upper);
            // returns are deterministic within 3 steps, horizon is 2 steps
            // from distance <= 1 starts... distance-3 start can't make it
            assert!(d.return_prob <= 1.0);
        }
    }

    #[test]
    fn empty_event_and_trapped_chain() {
        let chain = synthetic_geometric_chain(0.1, 2);
        let starts = AtomStarts {
            atom: vec![0i64],
            covering: vec![0i64, 2],
        };
        let k = knobs(1.0, 5.0, 500, 82);
        // B = nothing: the location-restricted rate is exactly zero
        let d = estimate_atom_rates(&chain, &starts, &k, &|_s: &i64| false).unwrap();
        assert_eq!(d.exit_rate_lower, 0.0);
        assert_eq!(d.exit_rate_upper, 0.0);
        assert_eq!(d.exit_rate_upper_se, 0.0);

        // a chain frozen in the atom returns always and exits never
        let frozen = AbstractChain::new(
            |s: &i64, _rng: &mut ChaCha8Rng| *s,
            |s: &i64| *s == 0,
            |s: &i64| *s >= 0,
            |s: &i64| *s >= 0,
            |eta: f64| eta,
        );
        let starts = AtomStarts {
            atom: vec![0i64],
            covering: vec![0i64],
        };
        let d = estimate_atom_rates(&frozen, &starts, &k, &|_s: &i64| true).unwrap();
        assert_eq!(d.return_prob, 1.0);
        assert_eq!(d.exit_rate_upper, 0.0);
        assert_eq!(d.stranded_rate, 0.0);
    }

    #[test]
    fn start_validation_and_sample_floor() {
        let chain = synthetic_geometric_chain(0.1, 2);
        let k = knobs(1.0, 5.0, 500, 83);
        let no_atom = AtomStarts {
            atom: vec![],
            covering: vec![0i64],
        };
        assert!(matches!(
            estimate_atom_rates(&chain, &no_atom, &k, &|_s: &i64| true),
            Err(Error::EmptySamples(_))
        ));
        let bad_atom = AtomStarts {
            atom: vec![1i64],
            covering: vec![0i64],
        };
        assert!(estimate_atom_rates(&chain, &bad_atom, &k, &|_s: &i64| true).is_err());
        let starts = AtomStarts {
            atom: vec![0i64],
            covering: vec![0i64],
        };
        let thin = knobs(1.0, 5.0, 99, 83);
        assert!(matches!(
            estimate_atom_rates(&chain, &starts, &thin, &|_s: &i64| true),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn geometric_exit_law_limits() {
        // p small: p * tau is close to Exp(1)
        let chain = synthetic_geometric_chain(1e-3, 0);
        let mut rng = stream_rng(84, ATOM_STREAM_BASE | (7 << 44));
        let scaled: Vec<f64> = (0..2000)
            .map(|_| 1e-3 * geometric_exit_time(&chain, 0, &mut rng) as f64)
            .collect();
        let ks = ks_statistic(&scaled, exp1_cdf);
        assert!(ks < 0.05, "geometric limit law KS = {ks}");

        // p = 1/2 is far from exponential: half the mass sits at 0.5
        let coarse = synthetic_geometric_chain(0.5, 0);
        let scaled: Vec<f64> = (0..2000)
            .map(|_| 0.5 * geometric_exit_time(&coarse, 0, &mut rng) as f64)
            .collect();
        let ks = ks_statistic(&scaled, exp1_cdf);
        assert!(ks > 0.2, "geometric(0.5) should fail the Exp(1) fit, KS = {ks}");
    }

    #[test]
    fn pure_exit_when_return_steps_is_zero() {
        let chain = synthetic_geometric_chain(0.3, 0);
        // the only covering state is the atom itself
        assert!(chain.in_atom(&0));
        assert!(!chain.in_covering(&1));
        let mut rng = stream_rng(85, 0);
        for _ in 0..50 {
            let s = chain.step(&0, &mut rng);
            assert!(s == 0 || s == -1);
        }
    }

    #[test]
    fn stranded_rate_vanishes_when_horizon_covers_the_walk() {
        // returns take at most 4 steps, the horizon is 10, so a trajectory
        // is stranded only by neither exiting nor walking home: impossible
        let chain = synthetic_geometric_chain(0.05, 4);
        let starts = AtomStarts {
            atom: vec![0i64],
            covering: vec![0i64, 1, 2, 3, 4],
        };
        let k = knobs(1.0, 10.0, 400, 86);
        let d = estimate_atom_rates(&chain, &starts, &k, &|_s: &i64| true).unwrap();
        assert_eq!(d.stranded_rate, 0.0);
        // the distance-4 start either exits or reaches the atom; with
        // p = 0.05 the return route wins most of the time
        assert!(d.return_prob > 0.7);
    }

    #[test]
    fn diagnostics_are_parallelism_invariant() {
        let chain = synthetic_geometric_chain(0.02, 3);
        let starts = AtomStarts {
            atom: vec![0i64],
            covering: vec![0i64, 3],
        };
        let mut k = knobs(1.0, 8.0, 5_000, 87);
        k.parallelism = Parallelism::Sequential;
        let a = estimate_atom_rates(&chain, &starts, &k, &|_s: &i64| true).unwrap();
        k.parallelism = Parallelism::Threads(4);
        let b = estimate_atom_rates(&chain, &starts, &k, &|_s: &i64| true).unwrap();
        assert_eq!(a.exit_rate_upper.to_bits(), b.exit_rate_upper.to_bits());
        assert_eq!(a.stranded_rate.to_bits(), b.stranded_rate.to_bits());
        assert_eq!(a.return_prob.to_bits(), b.return_prob.to_bits());
    }

    #[test]
    fn truncated_chain_adapter_returns_efficiently() {
        let fields = Arc::new(scalar_fields(|x| -x, |_| 1.0));
        let noise =
            Arc::new(TailModel::new(1.5, 1.0, 1.0, 0.0, SpectralMeasure::symmetric()).unwrap());
        let domain = DomainSpec::interval(-2.0, 2.0).unwrap();
        let config = ChainConfig::new(
            Arc::clone(&fields),
            Arc::clone(&noise),
            0.01,
            f64::INFINITY,
            1.0,
        )
        .unwrap();
        let prediction =
            ScalingPrediction::new(1, 2.0_f64.powf(-1.5), 0.0, f64::INFINITY, 1.0, noise).unwrap();
        let chain = dynamics_chain(config, &domain, 0.1, &prediction).unwrap();
        let envelope = drift_horizon(&domain, &fields).unwrap();
        let starts = AtomStarts {
            atom: vec![vec![0.0]],
            covering: vec![vec![0.0], vec![1.5], vec![-1.5]],
        };
        let mut k = AtomKnobs::new(0.01, 0.1, 3.0 * envelope, 150, 88);
        k.parallelism = Parallelism::Auto;
        let d = estimate_atom_rates(&chain, &starts, &k, &|x: &Vec<f64>| x[0].abs() >= 1.9)
            .unwrap();
        assert!(
            d.return_prob > 0.95,
            "drift should pull covering starts into the atom: return prob {}",
            d.return_prob
        );
        assert!(d.exit_rate_lower >= 0.0);
    }

    #[test]
    fn adapter_rejects_oversized_atoms() {
        let fields = Arc::new(scalar_fields(|x| -x, |_| 1.0));
        let noise =
            Arc::new(TailModel::new(1.5, 1.0, 1.0, 0.0, SpectralMeasure::symmetric()).unwrap());
        let domain = DomainSpec::interval(-2.0, 2.0).unwrap();
        let config = ChainConfig::new(fields, Arc::clone(&noise), 0.01, f64::INFINITY, 1.0)
            .unwrap();
        let prediction = ScalingPrediction::unit(1, f64::INFINITY, 1.0, noise).unwrap();
        assert!(dynamics_chain(config, &domain, 2.5, &prediction).is_err());
    }

    #[test]
    fn geom_front_examples() {
        // a = eps^2, b = eps at eps = 1e-3: the survival probability is
        // within rounding of exp(-1e-3) and the sandwich holds
        let a = |e: f64| e * e;
        let b = |e: f64| e;
        let g = geom_front_bounds(&a, &b, 1.1, 1e-3).unwrap();
        assert!((g.exact - (-1e-3f64).exp()).abs() < 1e-9);
        assert!(g.holds, "sandwich: {} <= {} <= {}", g.lower, g.exact, g.upper);
        assert!(g.lower <= g.exact && g.exact <= g.upper);

        // a = b = eps at eps = 1e-4: survival ~ 1/e with tight brackets
        let id = |e: f64| e;
        let g = geom_front_bounds(&id, &id, 1.01, 1e-4).unwrap();
        assert!((g.exact - (-1.0f64).exp()).abs() < 1e-4);
        assert!((g.lower - (-1.01f64).exp()).abs() < 1e-12);
        assert!((g.upper - (-1.0f64 / 1.01).exp()).abs() < 1e-12);
        assert!(g.holds);

        // b > 1 floors 1/b to zero events: survival is certain
        let wide = |_: f64| 1.7;
        let g = geom_front_bounds(&a, &wide, 1.1, 1e-3).unwrap();
        assert_eq!(g.exact, 1.0);
        assert!(!g.holds, "the upper bound cannot cover certainty");

        assert!(geom_front_bounds(&a, &b, 1.0, 1e-3).is_err());
        assert!(geom_front_bounds(&|_| 1.5, &b, 1.1, 1e-3).is_err());
    }

    #[test]
    fn geom_front_threshold_scan() {
        let a = |e: f64| e * e;
        let b = |e: f64| e;
        let t = geom_front_threshold(&a, &b, 1.1).unwrap();
        assert!(t.is_some(), "the sandwich holds for small eps");
        // at the matched scales a = b the sandwich holds everywhere on the
        // grid once c gives slack, so the threshold is the top of the grid
        let id = |e: f64| e;
        let t = geom_front_threshold(&id, &id, 1.5).unwrap();
        assert!((t.unwrap() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn csv_texture() {
        let chain = synthetic_geometric_chain(0.1, 1);
        let starts = AtomStarts {
            atom: vec![0i64],
            covering: vec![0i64, 1],
        };
        let k = knobs(1.0, 3.0, 200, 89);
        let d = estimate_atom_rates(&chain, &starts, &k, &|_s: &i64| true).unwrap();
        let mut buf = Vec::new();
        write_diagnostics_csv(&[d], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        let header = lines.next().unwrap();
        assert!(header.starts_with("eta,epsilon,horizon_time"));
        assert_eq!(header.split(',').count(), 13);
        assert_eq!(lines.next().unwrap().split(',').count(), 13);
        assert!(lines.next().is_none());
    }
}
