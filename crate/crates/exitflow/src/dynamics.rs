//! The stochastic recursions under study: X_t = X_{t-1} + phi_b(eta a(X) +
//! eta^gamma sigma(X) Z_t), where phi_b projects onto the closed ball of
//! radius b. b = +inf is the untruncated chain as an exact code path, and
//! gamma = 1 is the main scaling regime.

use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::fields::FieldPair;
use crate::noise::TailModel;
use crate::stats::{all_finite, norm2};

/// Projection onto the closed ball of radius `b`: w unchanged when
/// ‖w‖ ≤ b (including w = 0), otherwise rescaled to norm b. Exactly
/// idempotent: the rescaled vector is nudged until its computed norm is
/// within the ball, so a second application is the identity.
pub fn truncate_in_place(w: &mut [f64], b: f64) -> bool {
    assert!(b > 0.0, "truncation threshold must be positive, got {b}");
    if b == f64::INFINITY {
        return false;
    }
    let norm = norm2(w);
    if !(norm > b) {
        return false;
    }
    let mut current = norm;
    while current > b {
        let scale = b / current;
        for slot in w.iter_mut() {
            *slot *= scale;
        }
        current = norm2(w);
    }
    true
}

/// Out-of-place `truncate_in_place`.
pub fn truncate(w: &[f64], b: f64) -> Vec<f64> {
    let mut out = w.to_vec();
    truncate_in_place(&mut out, b);
    out
}

/// Everything fixed about one chain: fields, noise law, step size eta,
/// truncation threshold b (+inf = untruncated), and the noise-scaling
/// exponent gamma (1 = main regime).
#[derive(Clone, Debug)]
pub struct ChainConfig {
    fields: Arc<FieldPair>,
    noise: Arc<TailModel>,
    eta: f64,
    truncation: f64,
    gamma: f64,
    noise_scale: f64,
}

impl ChainConfig {
    pub fn new(
        fields: Arc<FieldPair>,
        noise: Arc<TailModel>,
        eta: f64,
        truncation: f64,
        gamma: f64,
    ) -> Result<Self> {
        if !(eta > 0.0 && eta < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "step size eta must lie in (0,1), got {eta}"
            )));
        }
        if !(truncation > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "truncation threshold must be positive (or +inf), got {truncation}"
            )));
        }
        if !(gamma >= 1.0 && gamma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "scaling exponent gamma must be finite and >= 1, got {gamma}"
            )));
        }
        if gamma != 1.0 && gamma <= 1.0 / noise.alpha().min(2.0) {
            return Err(Error::InvalidParameter(format!(
                "scaling exponent gamma = {gamma} is below the admissible range 1/min(2, alpha)"
            )));
        }
        if fields.dim_noise() != noise.dim() {
            return Err(Error::DimensionMismatch(format!(
                "fields expect noise dimension {}, noise model has dimension {}",
                fields.dim_noise(),
                noise.dim()
            )));
        }
        noise.validate_sampleable()?;
        // gamma = 1 must reproduce the plain eta scaling bit-for-bit, so it
        // never routes through powf
        let noise_scale = if gamma == 1.0 { eta } else { eta.powf(gamma) };
        Ok(ChainConfig {
            fields,
            noise,
            eta,
            truncation,
            gamma,
            noise_scale,
        })
    }

    pub fn fields(&self) -> &Arc<FieldPair> {
        &self.fields
    }

    pub fn noise(&self) -> &Arc<TailModel> {
        &self.noise
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn truncation(&self) -> f64 {
        self.truncation
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn dim(&self) -> usize {
        self.fields.dim_state()
    }

    pub fn scratch(&self) -> ChainScratch {
        ChainScratch {
            drift: vec![0.0; self.fields.dim_state()],
            noise: vec![0.0; self.fields.dim_noise()],
            scaled: vec![0.0; self.fields.dim_state()],
            increment: vec![0.0; self.fields.dim_state()],
        }
    }
}

/// Reusable per-sample buffers so the step loop never allocates.
#[derive(Clone, Debug)]
pub struct ChainScratch {
    drift: Vec<f64>,
    noise: Vec<f64>,
    scaled: Vec<f64>,
    increment: Vec<f64>,
}

/// Position and step counter of one running chain.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainState {
    pub position: Vec<f64>,
    pub step_count: u64,
}

impl ChainState {
    pub fn new(position: Vec<f64>) -> Self {
        ChainState {
            position,
            step_count: 0,
        }
    }
}

/// What one step did, before truncation was applied.
#[derive(Clone, Copy, Debug)]
pub struct StepInfo {
    /// Norm of eta a(x) + eta^gamma sigma(x) Z before projection.
    pub raw_increment_norm: f64,
    /// Whether the projection actually rescaled the increment.
    pub truncated: bool,
}

/// One update. The increment is assembled in the fixed order drift term,
/// noise term, sum, truncation. On a non-finite increment the state is left
/// untouched and an error is returned, so the caller still holds the last
/// good position.
pub fn step(
    config: &ChainConfig,
    state: &mut ChainState,
    scratch: &mut ChainScratch,
    rng: &mut impl Rng,
) -> Result<StepInfo> {
    let fields = &config.fields;
    fields.drift_raw(&state.position, &mut scratch.drift);
    config.noise.sample_into_unchecked(rng, &mut scratch.noise);
    fields.diffusion_raw(&state.position, &scratch.noise, &mut scratch.scaled);
    for i in 0..scratch.increment.len() {
        scratch.increment[i] = config.eta * scratch.drift[i] + config.noise_scale * scratch.scaled[i];
    }
    let raw_norm = norm2(&scratch.increment);
    if !raw_norm.is_finite() {
        return Err(Error::NonFinite(format!(
            "chain increment is non-finite at position {:?} (step {})",
            state.position, state.step_count
        )));
    }
    let truncated = truncate_in_place(&mut scratch.increment, config.truncation);
    for (p, d) in state.position.iter_mut().zip(&scratch.increment) {
        *p += d;
    }
    state.step_count += 1;
    if !all_finite(&state.position) {
        // roll the update back so the caller keeps the last good state
        for (p, d) in state.position.iter_mut().zip(&scratch.increment) {
            *p -= d;
        }
        state.step_count -= 1;
        return Err(Error::NonFinite(format!(
            "chain position overflowed at step {}",
            state.step_count
        )));
    }
    Ok(StepInfo {
        raw_increment_norm: raw_norm,
        truncated,
    })
}

/// Why `run_until` stopped.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    /// The predicate fired (checked on the start, then after every step).
    Predicate,
    /// The step cap was exhausted first.
    Capped,
    /// A step produced a non-finite value; the state holds the last good
    /// position.
    NonFinite,
}

/// Run the chain until the predicate fires, the cap is exhausted, or the
/// dynamics blow up. The predicate sees (position, step_count) and is
/// evaluated on the start before any stepping.
pub fn run_until(
    config: &ChainConfig,
    start: &[f64],
    mut stop: impl FnMut(&[f64], u64) -> bool,
    cap: u64,
    rng: &mut impl Rng,
) -> Result<(ChainState, StopReason)> {
    if start.len() != config.fields.dim_state() {
        return Err(Error::DimensionMismatch(format!(
            "start has dimension {}, chain expects {}",
            start.len(),
            config.fields.dim_state()
        )));
    }
    if !all_finite(start) {
        return Err(Error::NonFinite("start position is not finite".into()));
    }
    if cap == 0 {
        return Err(Error::InvalidParameter("step cap must be at least 1".into()));
    }
    let mut state = ChainState::new(start.to_vec());
    let mut scratch = config.scratch();
    if stop(&state.position, state.step_count) {
        return Ok((state, StopReason::Predicate));
    }
    for _ in 0..cap {
        match step(config, &mut state, &mut scratch, rng) {
            Ok(_) => {
                if stop(&state.position, state.step_count) {
                    return Ok((state, StopReason::Predicate));
                }
            }
            Err(Error::NonFinite(_)) => return Ok((state, StopReason::NonFinite)),
            Err(other) => return Err(other),
        }
    }
    Ok((state, StopReason::Capped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{linear_contractive, scalar_fields};
    use crate::noise::{SpectralMeasure, TailModel};
    use crate::rng::stream_rng;

    fn standard_noise() -> Arc<TailModel> {
        Arc::new(TailModel::new(1.5, 1.0, 1.0, 0.0, SpectralMeasure::symmetric()).unwrap())
    }

    fn config(eta: f64, b: f64, gamma: f64) -> ChainConfig {
        ChainConfig::new(
            Arc::new(linear_contractive(1).unwrap()),
            standard_noise(),
            eta,
            b,
            gamma,
        )
        .unwrap()
    }

    #[test]
    fn truncate_examples() {
        assert_eq!(truncate(&[3.0, 4.0], 2.5), vec![1.5, 2.0]);
        assert_eq!(truncate(&[0.0, 0.0], 1.0), vec![0.0, 0.0]);
        // vectors inside the ball come back bit-identical
        let w = [0.1 + 0.2, -0.7];
        let out = truncate(&w, 10.0);
        assert_eq!(w[0].to_bits(), out[0].to_bits());
        assert_eq!(w[1].to_bits(), out[1].to_bits());
        // +inf skips exactly
        let big = [1e308, 1e308];
        assert_eq!(truncate(&big, f64::INFINITY), big.to_vec());
    }

    #[test]
    fn truncate_is_exactly_idempotent_and_bounded() {
        let mut rng = stream_rng(31, 0);
        for _ in 0..10_000 {
            let w: Vec<f64> = (0..3).map(|_| 20.0 * (rng.gen::<f64>() - 0.5)).collect();
            let b = 0.01 + 3.0 * rng.gen::<f64>();
            let once = truncate(&w, b);
            assert!(norm2(&once) <= b, "norm {} > b {}", norm2(&once), b);
            let twice = truncate(&once, b);
            assert_eq!(once, twice);
            // direction preserved
            let n_w = norm2(&w);
            if n_w > b {
                for (a, c) in w.iter().zip(&once) {
                    assert!((a * once[0] - c * w[0]).abs() < 1e-12 * n_w);
                }
            }
        }
    }

    #[test]
    #[should_panic(expected = "truncation threshold")]
    fn truncate_rejects_nonpositive_threshold() {
        truncate(&[1.0], 0.0);
    }

    #[test]
    fn untruncated_step_is_a_scaled_noise_walk() {
        // a == 0, sigma == 1: increment must equal eta * Z bit-for-bit
        let fields = Arc::new(scalar_fields(|_| 0.0, |_| 1.0));
        let noise = standard_noise();
        let cfg = ChainConfig::new(fields, Arc::clone(&noise), 0.1, f64::INFINITY, 1.0).unwrap();
        let mut rng = stream_rng(32, 0);
        let mut shadow = rng.clone();
        let mut state = ChainState::new(vec![0.0]);
        let mut scratch = cfg.scratch();
        for _ in 0..100 {
            let before = state.position[0];
            step(&cfg, &mut state, &mut scratch, &mut rng).unwrap();
            let z = noise.sample(&mut shadow).unwrap()[0];
            assert_eq!((before + 0.1 * z).to_bits(), state.position[0].to_bits());
        }
        assert_eq!(state.step_count, 100);
    }

    #[test]
    fn truncated_steps_never_move_farther_than_b() {
        let cfg = config(0.3, 0.25, 1.0);
        let mut rng = stream_rng(33, 0);
        let mut state = ChainState::new(vec![0.5]);
        let mut scratch = cfg.scratch();
        let mut saw_truncation = false;
        for _ in 0..2_000 {
            let before = state.position.clone();
            let info = step(&cfg, &mut state, &mut scratch, &mut rng).unwrap();
            let moved: f64 = state
                .position
                .iter()
                .zip(&before)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            assert!(moved <= 0.25 + 1e-15);
            saw_truncation |= info.truncated;
            if info.truncated {
                assert!(info.raw_increment_norm > 0.25);
            }
        }
        assert!(saw_truncation, "heavy tails should trip the projection");
    }

    #[test]
    fn truncated_and_untruncated_chains_coincide_until_a_large_jump() {
        let unclipped = config(0.05, f64::INFINITY, 1.0);
        let mut rng = stream_rng(34, 7);
        let mut state = ChainState::new(vec![0.2]);
        let mut scratch = unclipped.scratch();
        let mut max_raw: f64 = 0.0;
        let mut path = vec![state.position[0]];
        for _ in 0..200 {
            let info = step(&unclipped, &mut state, &mut scratch, &mut rng).unwrap();
            max_raw = max_raw.max(info.raw_increment_norm);
            path.push(state.position[0]);
        }
        // rerun with a threshold just above every raw increment: identical
        let clipped = config(0.05, max_raw * 1.01, 1.0);
        let mut rng = stream_rng(34, 7);
        let mut state = ChainState::new(vec![0.2]);
        let mut scratch = clipped.scratch();
        for expected in &path[1..] {
            let info = step(&clipped, &mut state, &mut scratch, &mut rng).unwrap();
            assert!(!info.truncated);
            assert_eq!(state.position[0].to_bits(), expected.to_bits());
        }
    }

    #[test]
    fn general_scaling_at_gamma_one_is_bitwise_the_main_regime() {
        // one code path: hand-roll the gamma = 1 recursion and compare
        let fields = Arc::new(scalar_fields(|x| -2.0 * x, |x| 1.0 + x * x));
        let noise = standard_noise();
        let cfg = ChainConfig::new(Arc::clone(&fields), Arc::clone(&noise), 0.07, 0.9, 1.0).unwrap();
        let mut rng = stream_rng(35, 0);
        let mut shadow = rng.clone();
        let mut state = ChainState::new(vec![0.4]);
        let mut scratch = cfg.scratch();
        let mut x = 0.4;
        for _ in 0..200 {
            step(&cfg, &mut state, &mut scratch, &mut rng).unwrap();
            let z = noise.sample(&mut shadow).unwrap()[0];
            let mut inc = [0.07 * (-2.0 * x) + 0.07 * ((1.0 + x * x) * z)];
            truncate_in_place(&mut inc, 0.9);
            x += inc[0];
            assert_eq!(x.to_bits(), state.position[0].to_bits());
        }
    }

    #[test]
    fn gamma_above_one_scales_the_noise_term_only() {
        let fields = Arc::new(scalar_fields(|_| 0.0, |_| 1.0));
        let noise = standard_noise();
        let cfg =
            ChainConfig::new(Arc::clone(&fields), Arc::clone(&noise), 0.1, f64::INFINITY, 2.0)
                .unwrap();
        let mut rng = stream_rng(36, 0);
        let mut shadow = rng.clone();
        let mut state = ChainState::new(vec![0.0]);
        let mut scratch = cfg.scratch();
        step(&cfg, &mut state, &mut scratch, &mut rng).unwrap();
        let z = noise.sample(&mut shadow).unwrap()[0];
        let expect = 0.1_f64.powf(2.0) * z;
        assert_eq!(state.position[0].to_bits(), expect.to_bits());
    }

    #[test]
    fn run_until_examples() {
        let cfg = config(0.1, f64::INFINITY, 1.0);
        let mut rng = stream_rng(37, 0);
        // immediate predicate: zero steps
        let (state, reason) = run_until(&cfg, &[5.0], |_, _| true, 100, &mut rng).unwrap();
        assert_eq!(state.step_count, 0);
        assert_eq!(state.position, vec![5.0]);
        assert_eq!(reason, StopReason::Predicate);
        // cap exhaustion
        let (state, reason) = run_until(&cfg, &[5.0], |_, _| false, 10, &mut rng).unwrap();
        assert_eq!(state.step_count, 10);
        assert_eq!(reason, StopReason::Capped);
        // bad inputs
        assert!(run_until(&cfg, &[1.0, 2.0], |_, _| true, 10, &mut rng).is_err());
        assert!(run_until(&cfg, &[f64::NAN], |_, _| true, 10, &mut rng).is_err());
        assert!(run_until(&cfg, &[1.0], |_, _| true, 0, &mut rng).is_err());
    }

    #[test]
    fn noise_free_contraction_stops_on_schedule() {
        // a(x) = -x with the noise factor zeroed: x_t = (1 - eta)^t x_0,
        // so |x| < 1e-3 from 1 takes ceil(ln 1e3 / -ln 0.9) = 66 steps
        let fields = Arc::new(scalar_fields(|x| -x, |_| 0.0));
        let cfg = ChainConfig::new(fields, standard_noise(), 0.1, f64::INFINITY, 1.0).unwrap();
        let mut rng = stream_rng(38, 0);
        let (state, reason) = run_until(
            &cfg,
            &[1.0],
            |x, _| x[0].abs() < 1e-3,
            10_000,
            &mut rng,
        )
        .unwrap();
        assert_eq!(reason, StopReason::Predicate);
        assert!(
            (65..=67).contains(&state.step_count),
            "took {} steps",
            state.step_count
        );
    }

    #[test]
    fn blowup_reports_nonfinite_with_last_good_state() {
        let fields = Arc::new(scalar_fields(
            |x| if x.abs() > 2.0 { f64::NAN } else { 10.0 },
            |_| 0.0,
        ));
        let cfg = ChainConfig::new(fields, standard_noise(), 0.5, f64::INFINITY, 1.0).unwrap();
        let mut rng = stream_rng(39, 0);
        let (state, reason) = run_until(&cfg, &[0.0], |_, _| false, 100, &mut rng).unwrap();
        assert_eq!(reason, StopReason::NonFinite);
        assert_eq!(state.position, vec![5.0]);
        assert_eq!(state.step_count, 1);
    }

    #[test]
    fn config_validation() {
        let fields = Arc::new(linear_contractive(1).unwrap());
        let noise = standard_noise();
        let ok = |eta: f64, b: f64, gamma: f64| {
            ChainConfig::new(Arc::clone(&fields), Arc::clone(&noise), eta, b, gamma)
        };
        assert!(ok(0.1, 1.0, 1.0).is_ok());
        assert!(ok(0.1, f64::INFINITY, 1.0).is_ok());
        assert!(ok(0.0, 1.0, 1.0).is_err());
        assert!(ok(1.0, 1.0, 1.0).is_err());
        assert!(ok(0.1, 0.0, 1.0).is_err());
        assert!(ok(0.1, -1.0, 1.0).is_err());
        assert!(ok(0.1, f64::NAN, 1.0).is_err());
        assert!(ok(0.1, 1.0, 0.9).is_err());
        assert!(ok(0.1, 1.0, f64::INFINITY).is_err());
        assert!(ok(0.1, 1.0, 1.5).is_ok());
        // dimension mismatch between fields and noise
        let wide = Arc::new(linear_contractive(2).unwrap());
        assert!(ChainConfig::new(wide, Arc::clone(&noise), 0.1, 1.0, 1.0).is_err());
        // unsampleable noise models are rejected up front
        let gauss =
            Arc::new(TailModel::new(1.5, 1.0, 0.0, 1.0, SpectralMeasure::symmetric()).unwrap());
        assert!(ChainConfig::new(Arc::clone(&fields), gauss, 0.1, 1.0, 1.0).is_err());
        let lopsided = Arc::new(
            TailModel::new(
                1.5,
                1.0,
                1.0,
                0.0,
                SpectralMeasure::SymmetricSigns {
                    weight_plus: 0.9,
                    weight_minus: 0.1,
                },
            )
            .unwrap(),
        );
        assert!(ChainConfig::new(Arc::clone(&fields), lopsided, 0.1, 1.0, 1.0).is_err());
    }
}
