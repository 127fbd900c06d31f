//! Heavy-tailed noise: spectral measures on the unit sphere, the
//! Pareto-plus-Gaussian tail model, its tail function H(x) = P(|Z| > x), the
//! small-step rate function eta^{-1} H(eta^{-gamma}), and importance sampling
//! of large jumps against the standardized power-law measure
//! nu_alpha[x, inf) = x^{-alpha}.

use std::sync::Arc;

use rand::distributions::OpenClosed01;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::stats::norm2;

const UNIT_TOL: f64 = 1e-12;
const WEIGHT_TOL: f64 = 1e-12;
const MEAN_ZERO_TOL: f64 = 1e-9;

/// Distribution of the jump direction on the unit sphere.
#[derive(Clone, Debug)]
pub enum SpectralMeasure {
    /// One-dimensional two-point measure on {+1, -1}.
    SymmetricSigns { weight_plus: f64, weight_minus: f64 },
    /// Finite set of (unit vector, weight) atoms.
    DiscreteAtoms { atoms: Vec<(Vec<f64>, f64)> },
    /// Rotation-invariant measure on the sphere in the given dimension.
    UniformSphere { dim: usize },
}

impl SpectralMeasure {
    pub fn symmetric() -> Self {
        SpectralMeasure::SymmetricSigns {
            weight_plus: 0.5,
            weight_minus: 0.5,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            SpectralMeasure::SymmetricSigns { .. } => 1,
            SpectralMeasure::DiscreteAtoms { atoms } => {
                atoms.first().map(|(v, _)| v.len()).unwrap_or(0)
            }
            SpectralMeasure::UniformSphere { dim } => *dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SpectralMeasure::SymmetricSigns {
                weight_plus,
                weight_minus,
            } => {
                if !(*weight_plus >= 0.0 && *weight_minus >= 0.0) {
                    return Err(Error::InvalidParameter(
                        "spectral weights must be nonnegative".into(),
                    ));
                }
                if (weight_plus + weight_minus - 1.0).abs() > WEIGHT_TOL {
                    return Err(Error::InvalidParameter(format!(
                        "spectral weights must sum to 1, got {}",
                        weight_plus + weight_minus
                    )));
                }
            }
            SpectralMeasure::DiscreteAtoms { atoms } => {
                if atoms.is_empty() {
                    return Err(Error::InvalidParameter("spectral measure has no atoms".into()));
                }
                let dim = atoms[0].0.len();
                let mut total = 0.0;
                for (v, w) in atoms {
                    if v.len() != dim {
                        return Err(Error::DimensionMismatch(
                            "spectral atoms have mixed dimensions".into(),
                        ));
                    }
                    if !(*w >= 0.0) {
                        return Err(Error::InvalidParameter(
                            "spectral weights must be nonnegative".into(),
                        ));
                    }
                    if (norm2(v) - 1.0).abs() > UNIT_TOL {
                        return Err(Error::InvalidParameter(format!(
                            "spectral atom has norm {} (must be 1 within {UNIT_TOL})",
                            norm2(v)
                        )));
                    }
                    total += w;
                }
                if (total - 1.0).abs() > WEIGHT_TOL {
                    return Err(Error::InvalidParameter(format!(
                        "spectral weights must sum to 1, got {total}"
                    )));
                }
            }
            SpectralMeasure::UniformSphere { dim } => {
                if *dim == 0 {
                    return Err(Error::InvalidParameter(
                        "sphere dimension must be positive".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Norm of the mean direction; zero for centred measures.
    pub fn mean_norm(&self) -> f64 {
        match self {
            SpectralMeasure::SymmetricSigns {
                weight_plus,
                weight_minus,
            } => (weight_plus - weight_minus).abs(),
            SpectralMeasure::DiscreteAtoms { atoms } => {
                let dim = self.dim();
                let mut mean = vec![0.0; dim];
                for (v, w) in atoms {
                    for (m, x) in mean.iter_mut().zip(v) {
                        *m += w * x;
                    }
                }
                norm2(&mean)
            }
            SpectralMeasure::UniformSphere { .. } => 0.0,
        }
    }

    /// Atom list when the measure is discrete (used for stratified
    /// importance sampling); `None` for the continuous sphere.
    pub fn atoms(&self) -> Option<Vec<(Vec<f64>, f64)>> {
        match self {
            SpectralMeasure::SymmetricSigns {
                weight_plus,
                weight_minus,
            } => Some(vec![
                (vec![1.0], *weight_plus),
                (vec![-1.0], *weight_minus),
            ]),
            SpectralMeasure::DiscreteAtoms { atoms } => Some(atoms.clone()),
            SpectralMeasure::UniformSphere { .. } => None,
        }
    }

    pub fn sample_into(&self, rng: &mut impl Rng, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim());
        match self {
            SpectralMeasure::SymmetricSigns { weight_plus, .. } => {
                let u: f64 = rng.gen();
                out[0] = if u < *weight_plus { 1.0 } else { -1.0 };
            }
            SpectralMeasure::DiscreteAtoms { atoms } => {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                let mut chosen = atoms.len() - 1;
                for (i, (_, w)) in atoms.iter().enumerate() {
                    acc += w;
                    if u < acc {
                        chosen = i;
                        break;
                    }
                }
                out.copy_from_slice(&atoms[chosen].0);
            }
            SpectralMeasure::UniformSphere { dim } => loop {
                for slot in out.iter_mut() {
                    *slot = rng.sample(StandardNormal);
                }
                let n = norm2(out);
                if n > 1e-12 {
                    for slot in out.iter_mut() {
                        *slot /= n;
                    }
                    let _ = dim;
                    return;
                }
            },
        }
    }
}

/// Radial Pareto draw against nu_alpha restricted to [floor, inf):
/// `floor * u^{-1/alpha}` with u uniform on (0, 1].
pub fn pareto_magnitude(alpha: f64, floor: f64, rng: &mut impl Rng) -> f64 {
    let u: f64 = rng.sample(OpenClosed01);
    floor * u.powf(-1.0 / alpha)
}

///// Law of one noise vector: Z = c_pareto * W * Theta + c_normal * G, with W
/// radial Pareto(alpha, x_min), Theta from the spectral measure, G standard
/// Gaussian. Regularly varying with index -alpha whenever c_pareto > 0.
#[derive(Clone, Debug)]
pub struct TailModel {
    alpha: f64,
    x_min: f64,
    pareto_coeff: f64,
    gauss_coeff: f64,
    spectral: SpectralMeasure,
    spectral_mean: f64,
    mixture_grid: Option<TailGrid>,
}

impl TailModel {
    pub fn new(
        alpha: f64,
        x_min: f64,
        pareto_coeff: f64,
        gauss_coeff: f64,
        spectral: SpectralMeasure,
    ) -> Result<Self> {
        if !(alpha > 1.0 && alpha.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "tail index alpha must be finite and > 1, got {alpha}"
            )));
        }
        if !(x_min > 0.0 && x_min.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "x_min must be finite and positive, got {x_min}"
            )));
        }
        if !(pareto_coeff >= 0.0 && gauss_coeff >= 0.0) {
            return Err(Error::InvalidParameter(
                "mixture coefficients must be nonnegative".into(),
            ));
        }
        if pareto_coeff == 0.0 && gauss_coeff == 0.0 {
            return Err(Error::InvalidParameter(
                "at least one mixture coefficient must be positive".into(),
            ));
        }
        spectral.validate()?;
        if pareto_coeff > 0.0 && gauss_coeff > 0.0 && spectral.dim() != 1 {
            return Err(Error::Unsupported(
                "Pareto+Gaussian mixture tails are implemented for dimension 1 only".into(),
            ));
        }
        if pareto_coeff == 0.0 && spectral.dim() != 1 {
            return Err(Error::Unsupported(
                "pure-Gaussian radial tails are implemented for dimension 1 only".into(),
            ));
        }
        let spectral_mean = spectral.mean_norm();
        let mut model = TailModel {
            alpha,
            x_min,
            pareto_coeff,
            gauss_coeff,
            spectral,
            spectral_mean,
            mixture_grid: None,
        };
        if pareto_coeff > 0.0 && gauss_coeff > 0.0 {
            model.mixture_grid = Some(TailGrid::build(&model));
        }
        Ok(model)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn pareto_coeff(&self) -> f64 {
        self.pareto_coeff
    }

    pub fn gauss_coeff(&self) -> f64 {
        self.gauss_coeff
    }

    pub fn spectral(&self) -> &SpectralMeasure {
        &self.spectral
    }

    pub fn dim(&self) -> usize {
        self.spectral.dim()
    }

    pub(crate) fn require_heavy(&self, what: &str) -> Result<()> {
        if self.pareto_coeff == 0.0 {
            return Err(Error::InvalidParameter(format!(
                "{what} requires a heavy-tailed model (pareto coefficient is 0)"
            )));
        }
        Ok(())
    }

    fn require_centred(&self) -> Result<()> {
        if self.spectral_mean > MEAN_ZERO_TOL {
            return Err(Error::InvalidParameter(format!(
                "noise sampling requires a mean-zero law; spectral mean norm is {}",
                self.spectral_mean
            )));
        }
        Ok(())
    }

    /// Tail probability H(x) = P(|Z| > x) for x > 0.
    ///
    /// Pure Pareto: exactly (x / (c_p * x_min))^{-alpha} beyond the scale,
    /// 1 below it. Mixtures (1D): exact convolution, evaluated by adaptive
    /// quadrature to 1e-8 relative and served from a 512-point log grid with
    /// monotone interpolation. Pure Gaussian (1D): 2 * P(G > x / c_n).
    pub fn tail_prob(&self, x: f64) -> Result<f64> {
        if !(x > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "tail_prob needs x > 0, got {x}"
            )));
        }
        if self.gauss_coeff == 0.0 {
            let scale = self.pareto_coeff * self.x_min;
            return Ok(if x <= scale {
                1.0
            } else {
                (x / scale).powf(-self.alpha)
            });
        }
        if self.pareto_coeff == 0.0 {
            return Ok(2.0 * gauss_upper_tail(x / self.gauss_coeff));
        }
        let grid = self.mixture_grid.as_ref().expect("mixture grid built at construction");
        match grid.lookup(x) {
            Some(h) => Ok(h),
            None => Ok(self.mixture_tail_quadrature(x)),
        }
    }

    /// Exact mixture tail by quadrature (1D): integrates the Pareto tail of
    /// the radial part against the Gaussian perturbation.
    fn mixture_tail_quadrature(&self, x: f64) -> f64 {
        let cp = self.pareto_coeff;
        let cn = self.gauss_coeff;
        let xm = self.x_min;
        let alpha = self.alpha;
        // P(|cp W + cn G| > x) with W >= xm Pareto(alpha), G ~ N(0,1); the
        // spectral sign drops out because G is symmetric.
        let pareto_upper = |u: f64| -> f64 {
            if u <= xm {
                1.0
            } else {
                (u / xm).powf(-alpha)
            }
        };
        let pareto_lower = |u: f64| -> f64 {
            if u <= xm {
                0.0
            } else {
                1.0 - (u / xm).powf(-alpha)
            }
        };
        let integrand = |g: f64| -> f64 {
            let phi = (-0.5 * g * g).exp() / (2.0 * std::f64::consts::PI).sqrt();
            let up = pareto_upper((x - cn * g) / cp);
            let down = pareto_lower((-x - cn * g) / cp);
            phi * (up + down)
        };
        let coarse = adaptive_simpson(&integrand, -12.0, 12.0, 1e-10, 40);
        let tol = (coarse.abs() * 1e-8).max(1e-14);
        adaptive_simpson(&integrand, -12.0, 12.0, tol, 52)
    }

    /// Rate function eta^{-1} H(eta^{-gamma}) for 0 < eta < 1, gamma >= 1.
    /// Regularly varying in eta with index gamma * alpha - 1.
    pub fn rate_function(&self, eta: f64, gamma: f64) -> Result<f64> {
        if !(eta > 0.0 && eta < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "rate function needs eta in (0,1), got {eta}"
            )));
        }
        if !(gamma >= 1.0 && gamma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "scaling exponent gamma must be >= 1, got {gamma}"
            )));
        }
        self.require_heavy("rate function")?;
        let threshold = if gamma == 1.0 {
            1.0 / eta
        } else {
            eta.powf(-gamma)
        };
        Ok(self.tail_prob(threshold)? / eta)
    }

    /// One draw of Z. Errors when the model cannot represent a centred
    /// heavy-tailed law (zero Pareto coefficient, or a spectral measure with
    /// nonzero mean).
    pub fn sample(&self, rng: &mut impl Rng) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim()];
        self.sample_into(rng, &mut out)?;
        Ok(out)
    }

    /// As `sample`, writing into a caller buffer. Draw order is fixed:
    /// direction, then radial uniform, then Gaussian components.
    pub fn sample_into(&self, rng: &mut impl Rng, out: &mut [f64]) -> Result<()> {
        self.require_heavy("noise sampling")?;
        self.require_centred()?;
        if out.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "noise buffer has length {}, model dimension is {}",
                out.len(),
                self.dim()
            )));
        }
        self.sample_into_unchecked(rng, out);
        Ok(())
    }

    /// One-time validation that `sample_into_unchecked` is safe to drive a
    /// chain: heavy-tailed and centred.
    pub(crate) fn validate_sampleable(&self) -> Result<()> {
        self.require_heavy("noise sampling")?;
        self.require_centred()
    }

    /// Hot-loop variant: validity is checked once by the chain constructor.
    pub(crate) fn sample_into_unchecked(&self, rng: &mut impl Rng, out: &mut [f64]) {
        self.spectral.sample_into(rng, out);
        let w = pareto_magnitude(self.alpha, self.x_min, rng);
        let r = self.pareto_coeff * w;
        for slot in out.iter_mut() {
            *slot *= r;
        }
        if self.gauss_coeff > 0.0 {
            for slot in out.iter_mut() {
                let g: f64 = rng.sample(StandardNormal);
                *slot += self.gauss_coeff * g;
            }
        }
    }

    /// One importance draw from nu_alpha x S restricted to magnitudes >=
    /// `floor`: Pareto(alpha, floor) magnitude, spectral direction, and the
    /// restriction's total mass floor^{-alpha} as the weight.
    pub fn sample_large_jump(&self, floor: f64, rng: &mut impl Rng) -> Result<LargeJump> {
        self.require_heavy("large-jump sampling")?;
        if !(floor > 0.0 && floor.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "jump floor must be finite and positive, got {floor}"
            )));
        }
        let mut direction = vec![0.0; self.dim()];
        self.spectral.sample_into(rng, &mut direction);
        let magnitude = pareto_magnitude(self.alpha, floor, rng);
        Ok(LargeJump {
            magnitude,
            direction,
            weight: floor.powf(-self.alpha),
        })
    }
}

/// One importance-sampled jump: `magnitude * direction` carries mass
/// `weight` under the standardized limit measure.
#[derive(Clone, Debug)]
pub struct LargeJump {
    pub magnitude: f64,
    pub direction: Vec<f64>,
    pub weight: f64,
}

/// The small-step rate function as a reusable object.
#[derive(Clone, Debug)]
pub struct RateFunction {
    model: Arc<TailModel>,
    pub gamma_exponent: f64,
}

impl RateFunction {
    pub fn new(model: Arc<TailModel>, gamma_exponent: f64) -> Result<Self> {
        if !(gamma_exponent >= 1.0 && gamma_exponent.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "scaling exponent gamma must be >= 1, got {gamma_exponent}"
            )));
        }
        model.require_heavy("rate function")?;
        Ok(RateFunction {
            model,
            gamma_exponent,
        })
    }

    pub fn eval(&self, eta: f64) -> Result<f64> {
        self.model.rate_function(eta, self.gamma_exponent)
    }
}

/// Cached mixture tail: 512 log-spaced abscissas, linear interpolation in
/// (ln x, ln H). H is strictly decreasing, so the interpolant is monotone.
#[derive(Clone, Debug)]
struct TailGrid {
    ln_lo: f64,
    ln_step: f64,
    ln_h: Vec<f64>,
    alpha: f64,
}

const TAIL_GRID_POINTS: usize = 512;

impl TailGrid {
    fn build(model: &TailModel) -> TailGrid {
        let scale_ref = model.pareto_coeff * model.x_min + model.gauss_coeff;
        let lo = scale_ref * 1e-2;
        let hi = scale_ref * 1e6;
        let ln_lo = lo.ln();
        let ln_step = (hi.ln() - ln_lo) / (TAIL_GRID_POINTS - 1) as f64;
        let ln_h: Vec<f64> = (0..TAIL_GRID_POINTS)
            .map(|i| {
                let x = (ln_lo + ln_step * i as f64).exp();
                model.mixture_tail_quadrature(x).ln()
            })
            .collect();
        debug_assert!(ln_h.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        TailGrid {
            ln_lo,
            ln_step,
            ln_h,
            alpha: model.alpha,
        }
    }

    /// None below the grid (caller falls back to quadrature); power-law
    /// extrapolation above it, which is exact asymptotics for the mixture.
    fn lookup(&self, x: f64) -> Option<f64> {
        let lx = x.ln();
        let pos = (lx - self.ln_lo) / self.ln_step;
        if pos < 0.0 {
            return None;
        }
        let last = (self.ln_h.len() - 1) as f64;
        if pos >= last {
            let ln_tail = self.ln_h[self.ln_h.len() - 1] - self.alpha * (pos - last) * self.ln_step;
            return Some(ln_tail.exp());
        }
        let i = pos.floor() as usize;
        let frac = pos - i as f64;
        Some((self.ln_h[i] * (1.0 - frac) + self.ln_h[i + 1] * frac).exp())
    }
}

/// P(G > z) for standard Gaussian G, by quadrature (no special functions).
fn gauss_upper_tail(z: f64) -> f64 {
    if z <= -12.0 {
        return 1.0;
    }
    if z >= 12.0 {
        return 0.0;
    }
    let phi = |g: f64| (-0.5 * g * g).exp() / (2.0 * std::f64::consts::PI).sqrt();
    adaptive_simpson(&phi, z, 12.0, 1e-13, 48)
}

fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_refine(f, a, fa, b, fb, m, fm, whole, tol, depth)
}

#[allow(clippy::too_many_arguments)]
fn simpson_refine(
    f: &impl Fn(f64) -> f64,
    a: f64,
    fa: f64,
    b: f64,
    fb: f64,
    m: f64,
    fm: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        left + right + delta / 15.0
    } else {
        simpson_refine(f, a, fa, m, fm, lm, flm, left, 0.5 * tol, depth - 1)
            + simpson_refine(f, m, fm, b, fb, rm, frm, right, 0.5 * tol, depth - 1)
    }
}
