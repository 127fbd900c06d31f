//! Drift and diffusion fields: the `FieldPair` pairing a: R^m -> R^m with
//! sigma: R^m -> R^{m x d}, gradient fields derived from scalar potentials,
//! a bounded radial extension combinator, and the built-in registry used by
//! the CLI ("paper-U", "quadratic", "quartic", "linear-contractive").

use std::cell::RefCell;
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::stats::{all_finite, norm2, operator_norm};

pub type DriftFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
/// Applies sigma(x) to a noise vector: (x, z, out) with out = sigma(x) z.
pub type DiffusionFn = Arc<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync>;
pub type PotentialFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Coordinate shift applied to the built-in rugged potential so that the
/// studied local minimum's basin sits at the origin: the registry field
/// "paper-U" evaluates the potential at y - 0.66.
pub const BASIN_SHIFT: f64 = -0.66;

/// The attraction interval of the shifted built-in potential, as
/// (left, right) bounds around the origin.
pub const BASIN_INTERVAL: (f64, f64) = (-0.64, 0.86);

/// A drift/diffusion pair. Evaluators must be pure and are shared across
/// threads; all evaluation goes through `drift_into` / `diffusion_into`.
#[derive(Clone)]
pub struct FieldPair {
    dim_state: usize,
    dim_noise: usize,
    drift: DriftFn,
    diffusion: DiffusionFn,
    lipschitz_hint: Option<f64>,
}

impl fmt::Debug for FieldPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FieldPair")
            .field("dim_state", &self.dim_state)
            .field("dim_noise", &self.dim_noise)
            .field("lipschitz_hint", &self.lipschitz_hint)
            .finish()
    }
}

impl FieldPair {
    pub fn new(
        dim_state: usize,
        dim_noise: usize,
        drift: DriftFn,
        diffusion: DiffusionFn,
    ) -> Result<Self> {
        if dim_state == 0 || dim_noise == 0 {
            return Err(Error::InvalidParameter(
                "field dimensions must be positive".into(),
            ));
        }
        Ok(FieldPair {
            dim_state,
            dim_noise,
            drift,
            diffusion,
            lipschitz_hint: None,
        })
    }

    pub fn with_lipschitz_hint(mut self, hint: f64) -> Result<Self> {
        if !(hint > 0.0 && hint.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "Lipschitz hint must be finite and positive, got {hint}"
            )));
        }
        self.lipschitz_hint = Some(hint);
        Ok(self)
    }

    pub fn dim_state(&self) -> usize {
        self.dim_state
    }

    pub fn dim_noise(&self) -> usize {
        self.dim_noise
    }

    pub fn lipschitz_hint(&self) -> Option<f64> {
        self.lipschitz_hint
    }

    /// a(x), with dimension and finiteness checks.
    pub fn drift_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        if x.len() != self.dim_state || out.len() != self.dim_state {
            return Err(Error::DimensionMismatch(format!(
                "drift expects state dimension {}, got x: {}, out: {}",
                self.dim_state,
                x.len(),
                out.len()
            )));
        }
        (self.drift)(x, out);
        if !all_finite(out) {
            return Err(Error::NonFinite(format!(
                "drift produced a non-finite value at x = {x:?}"
            )));
        }
        Ok(())
    }

    pub fn drift(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim_state];
        self.drift_into(x, &mut out)?;
        Ok(out)
    }

    /// Unchecked evaluator for integrator hot loops; callers validate
    /// dimensions once up front.
    pub(crate) fn drift_raw(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim_state);
        debug_assert_eq!(out.len(), self.dim_state);
        (self.drift)(x, out);
    }

    /// sigma(x) z, with dimension and finiteness checks.
    pub fn diffusion_into(&self, x: &[f64], z: &[f64], out: &mut [f64]) -> Result<()> {
        if x.len() != self.dim_state || z.len() != self.dim_noise || out.len() != self.dim_state {
            return Err(Error::DimensionMismatch(format!(
                "diffusion expects state {} and noise {}, got x: {}, z: {}, out: {}",
                self.dim_state,
                self.dim_noise,
                x.len(),
                z.len(),
                out.len()
            )));
        }
        (self.diffusion)(x, z, out);
        if !all_finite(out) {
            return Err(Error::NonFinite(format!(
                "diffusion produced a non-finite value at x = {x:?}"
            )));
        }
        Ok(())
    }

    pub fn diffusion_apply(&self, x: &[f64], z: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim_state];
        self.diffusion_into(x, z, &mut out)?;
        Ok(out)
    }

    pub(crate) fn diffusion_raw(&self, x: &[f64], z: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim_state);
        debug_assert_eq!(z.len(), self.dim_noise);
        debug_assert_eq!(out.len(), self.dim_state);
        (self.diffusion)(x, z, out);
    }

    /// The sigma(x) matrix, row-major m x d, assembled column by column from
    /// basis-vector applications.
    pub fn diffusion_matrix(&self, x: &[f64]) -> Result<Vec<f64>> {
        let (m, d) = (self.dim_state, self.dim_noise);
        let mut matrix = vec![0.0; m * d];
        let mut basis = vec![0.0; d];
        let mut column = vec![0.0; m];
        for j in 0..d {
            basis[j] = 1.0;
            self.diffusion_into(x, &basis, &mut column)?;
            basis[j] = 0.0;
            for i in 0..m {
                matrix[i * d + j] = column[i];
            }
        }
        Ok(matrix)
    }

    /// Operator norm of sigma at the origin.
    pub fn diffusion_origin_norm(&self) -> Result<f64> {
        let origin = vec![0.0; self.dim_state];
        let matrix = self.diffusion_matrix(&origin)?;
        Ok(operator_norm(&matrix, self.dim_state, self.dim_noise))
    }

    /// Fields frozen outside the ball of the given radius: queries beyond it
    /// are answered at the radial projection onto the sphere. Inside the
    /// ball the fields are bit-for-bit unchanged. Used when integrating
    /// flows started far outside the region of interest, where user fields
    /// may grow without bound.
    pub fn bounded_extension(&self, radius: f64) -> Result<FieldPair> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "extension radius must be finite and positive, got {radius}"
            )));
        }
        let inner_drift = Arc::clone(&self.drift);
        let inner_diffusion = Arc::clone(&self.diffusion);
        let drift: DriftFn = Arc::new(move |x, out| {
            let n = norm2(x);
            if n <= radius {
                inner_drift(x, out);
            } else {
                let scale = radius / n;
                let clamped: Vec<f64> = x.iter().map(|&c| c * scale).collect();
                inner_drift(&clamped, out);
            }
        });
        let diffusion: DiffusionFn = Arc::new(move |x, z, out| {
            let n = norm2(x);
            if n <= radius {
                inner_diffusion(x, z, out);
            } else {
                let scale = radius / n;
                let clamped: Vec<f64> = x.iter().map(|&c| c * scale).collect();
                inner_diffusion(&clamped, z, out);
            }
        });
        Ok(FieldPair {
            dim_state: self.dim_state,
            dim_noise: self.dim_noise,
            drift,
            diffusion,
            lipschitz_hint: self.lipschitz_hint,
        })
    }

    /// Sampled Lipschitz diagnostic over a box: the maximum observed ratio
    /// ‖f(x)−f(y)‖ / ‖x−y‖ for drift and diffusion (operator norm). Never a
    /// hard gate — fields may violate the bound away from the experiment's
    /// region.
    pub fn lipschitz_diagnostic(
        &self,
        lo: &[f64],
        hi: &[f64],
        pairs: usize,
        rng: &mut impl Rng,
    ) -> Result<LipschitzReport> {
        let hint = self.lipschitz_hint.ok_or_else(|| {
            Error::InvalidParameter("lipschitz_diagnostic needs a lipschitz_hint".into())
        })?;
        if lo.len() != self.dim_state || hi.len() != self.dim_state {
            return Err(Error::DimensionMismatch(
                "box bounds must match the state dimension".into(),
            ));
        }
        if lo.iter().zip(hi).any(|(a, b)| !(a < b)) {
            return Err(Error::InvalidParameter(
                "box bounds must satisfy lo < hi in every coordinate".into(),
            ));
        }
        let m = self.dim_state;
        let d = self.dim_noise;
        let mut x = vec![0.0; m];
        let mut y = vec![0.0; m];
        let mut ax = vec![0.0; m];
        let mut ay = vec![0.0; m];
        let mut max_drift: f64 = 0.0;
        let mut max_diffusion: f64 = 0.0;
        for _ in 0..pairs {
            for i in 0..m {
                let u: f64 = rng.gen();
                x[i] = lo[i] + u * (hi[i] - lo[i]);
                let v: f64 = rng.gen();
                y[i] = lo[i] + v * (hi[i] - lo[i]);
            }
            let gap: f64 = x
                .iter()
                .zip(&y)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            if gap < 1e-12 {
                continue;
            }
            self.drift_into(&x, &mut ax)?;
            self.drift_into(&y, &mut ay)?;
            let drift_gap: f64 = ax
                .iter()
                .zip(&ay)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            max_drift = max_drift.max(drift_gap / gap);
            let sx = self.diffusion_matrix(&x)?;
            let sy = self.diffusion_matrix(&y)?;
            let diff: Vec<f64> = sx.iter().zip(&sy).map(|(a, b)| a - b).collect();
            max_diffusion = max_diffusion.max(operator_norm(&diff, m, d) / gap);
        }
        Ok(LipschitzReport {
            hint,
            max_drift_ratio: max_drift,
            max_diffusion_ratio: max_diffusion,
            pairs,
        })
    }

    /// Sampled contractivity scan in a ball: the maximum of a(x)·x over the
    /// sample. Negative means the drift points inward everywhere sampled.
    pub fn contractivity_scan(
        &self,
        radius: f64,
        points: usize,
        rng: &mut impl Rng,
    ) -> Result<f64> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "scan radius must be finite and positive, got {radius}"
            )));
        }
        let m = self.dim_state;
        let mut x = vec![0.0; m];
        let mut a = vec![0.0; m];
        let mut worst = f64::NEG_INFINITY;
        for _ in 0..points {
            loop {
                for slot in x.iter_mut() {
                    *slot = rng.sample(StandardNormal);
                }
                let n = norm2(&x);
                if n > 1e-12 {
                    let u: f64 = rng.gen();
                    let r = radius * u.powf(1.0 / m as f64);
                    for slot in x.iter_mut() {
                        *slot *= r / n;
                    }
                    break;
                }
            }
            self.drift_into(&x, &mut a)?;
            let dot: f64 = a.iter().zip(&x).map(|(p, q)| p * q).sum();
            worst = worst.max(dot);
        }
        Ok(worst)
    }
}

/// Outcome of the sampled Lipschitz diagnostic.
#[derive(Clone, Debug)]
pub struct LipschitzReport {
    pub hint: f64,
    pub max_drift_ratio: f64,
    pub max_diffusion_ratio: f64,
    pub pairs: usize,
}

impl LipschitzReport {
    pub fn holds(&self) -> bool {
        self.max_drift_ratio <= self.hint && self.max_diffusion_ratio <= self.hint
    }
}

/// How to obtain the gradient of a scalar potential.
#[derive(Clone)]
pub enum GradientMode {
    Analytic(DriftFn),
    FiniteDifference { step: f64 },
}

impl fmt::Debug for GradientMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GradientMode::Analytic(_) => f.write_str("Analytic"),
            GradientMode::FiniteDifference { step } => {
                write!(f, "FiniteDifference {{ step: {step} }}")
            }
        }
    }
}

/// A scalar potential U with a gradient mode; the derived drift is -∇U.
#[derive(Clone)]
pub struct PotentialSpec {
    dim: usize,
    u: PotentialFn,
    mode: GradientMode,
}

impl fmt::Debug for PotentialSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PotentialSpec")
            .field("dim", &self.dim)
            .field("mode", &self.mode)
            .finish()
    }
}

thread_local! {
    static FD_SCRATCH: RefCell<Vec<f64>> = const { RefCell::new(Vec::new()) };
}

impl PotentialSpec {
    pub fn new(dim: usize, u: PotentialFn, mode: GradientMode) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter(
                "potential dimension must be positive".into(),
            ));
        }
        if let GradientMode::FiniteDifference { step } = mode {
            if !(step > 0.0 && step.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "finite-difference step must be finite and positive, got {step}"
                )));
            }
        }
        Ok(PotentialSpec { dim, u, mode })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        (self.u)(x)
    }

    /// ∇U(x), analytic or by central differences.
    pub fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        match &self.mode {
            GradientMode::Analytic(grad) => grad(x, out),
            GradientMode::FiniteDifference { step } => {
                let h = *step;
                let u = &self.u;
                FD_SCRATCH.with(|scratch| {
                    let mut q = scratch.borrow_mut();
                    q.clear();
                    q.extend_from_slice(x);
                    for i in 0..x.len() {
                        let xi = x[i];
                        q[i] = xi + h;
                        let up = u(&q);
                        q[i] = xi - h;
                        let down = u(&q);
                        q[i] = xi;
                        out[i] = (up - down) / (2.0 * h);
                    }
                });
            }
        }
    }

    /// The gradient-descent field: a = -∇U, sigma = identity.
    pub fn into_field_pair(self) -> FieldPair {
        let dim = self.dim;
        let drift: DriftFn = Arc::new(move |x, out| {
            self.gradient_into(x, out);
            for slot in out.iter_mut() {
                *slot = -*slot;
            }
        });
        FieldPair {
            dim_state: dim,
            dim_noise: dim,
            drift,
            diffusion: identity_diffusion(),
            lipschitz_hint: None,
        }
    }
}

fn identity_diffusion() -> DiffusionFn {
    Arc::new(|_x, z, out| out.copy_from_slice(z))
}

/// Drift a = -∇U from a potential, with identity diffusion.
pub fn drift_from_potential(spec: PotentialSpec) -> FieldPair {
    spec.into_field_pair()
}

/// 1D fields from scalar closures: drift f(x) and noise factor g(x).
pub fn scalar_fields(
    f: impl Fn(f64) -> f64 + Send + Sync + 'static,
    g: impl Fn(f64) -> f64 + Send + Sync + 'static,
) -> FieldPair {
    FieldPair {
        dim_state: 1,
        dim_noise: 1,
        drift: Arc::new(move |x, out| out[0] = f(x[0])),
        diffusion: Arc::new(move |x, z, out| out[0] = g(x[0]) * z[0]),
        lipschitz_hint: None,
    }
}

/// a(x) = -x with identity diffusion in the given dimension.
pub fn linear_contractive(dim: usize) -> Result<FieldPair> {
    if dim == 0 {
        return Err(Error::InvalidParameter(
            "field dimensions must be positive".into(),
        ));
    }
    let drift: DriftFn = Arc::new(|x, out| {
        for (o, v) in out.iter_mut().zip(x) {
            *o = -v;
        }
    });
    Ok(FieldPair {
        dim_state: dim,
        dim_noise: dim,
        drift,
        diffusion: identity_diffusion(),
        lipschitz_hint: Some(1.0),
    })
}

/// The rugged multiwell benchmark potential, exactly as printed in its
/// source: a degree-8 polynomial with double roots at -1.3, 0.2 and 0.7,
/// a fractional-power cusp factor at x = 1.65, two rational bumps, and a
/// Gaussian dimple. Total on R; non-smooth only at 1.65.
pub fn multiwell_potential(x: f64) -> f64 {
    let poly = (x + 1.6)
        * (x + 1.3) * (x + 1.3)
        * (x - 0.2) * (x - 0.2)
        * (x - 0.7) * (x - 0.7)
        * (x - 1.6);
    let cusp = (0.05 * (1.65 - x).abs()).powf(0.6);
    let bump_a = 1.0 + 1.0 / (0.01 + 4.0 * (x - 0.5) * (x - 0.5));
    let bump_b = 1.0 + 1.0 / (0.1 + 4.0 * (x + 1.5) * (x + 1.5));
    let dimple = 1.0 - 0.25 * (-5.0 * (x + 0.8) * (x + 0.8)).exp();
    poly * cusp * bump_a * bump_b * dimple
}

/// The multiwell potential in basin coordinates: the studied local minimum's
/// well is centred near the origin and its attraction interval is
/// `BASIN_INTERVAL`.
pub fn basin_potential_spec() -> PotentialSpec {
    let u: PotentialFn = Arc::new(|x: &[f64]| multiwell_potential(x[0] + BASIN_SHIFT));
    PotentialSpec::new(1, u, GradientMode::FiniteDifference { step: 1e-5 })
        .expect("static spec is valid")
}

/// Built-in fields addressable by name from CLI configs. Names:
/// "paper-U" (shifted multiwell potential, finite-difference drift, unit
/// noise factor), "quadratic" (U = x²/2), "quartic" (U = x⁴/4),
/// "linear-contractive" with an optional ":dim" suffix (a(x) = -x, identity
/// noise).
pub fn from_registry(name: &str) -> Result<FieldPair> {
    let (base, arg) = match name.split_once(':') {
        Some((b, a)) => (b, Some(a)),
        None => (name, None),
    };
    let no_arg = |field: FieldPair| -> Result<FieldPair> {
        if arg.is_some() {
            return Err(Error::Resolve(format!(
                "field \"{base}\" takes no \":\" argument"
            )));
        }
        Ok(field)
    };
    match base {
        "paper-U" => no_arg(drift_from_potential(basin_potential_spec())),
        "quadratic" => {
            let u: PotentialFn = Arc::new(|x: &[f64]| 0.5 * x[0] * x[0]);
            let grad: DriftFn = Arc::new(|x, out| out[0] = x[0]);
            no_arg(drift_from_potential(
                PotentialSpec::new(1, u, GradientMode::Analytic(grad)).expect("valid"),
            ))
        }
        "quartic" => {
            let u: PotentialFn = Arc::new(|x: &[f64]| 0.25 * x[0] * x[0] * x[0] * x[0]);
            let grad: DriftFn = Arc::new(|x, out| out[0] = x[0] * x[0] * x[0]);
            no_arg(drift_from_potential(
                PotentialSpec::new(1, u, GradientMode::Analytic(grad)).expect("valid"),
            ))
        }
        "linear-contractive" => {
            let dim = match arg {
                None => 1,
                Some(raw) => raw.parse::<usize>().map_err(|_| {
                    Error::Resolve(format!(
                        "bad dimension \"{raw}\" for field \"linear-contractive\""
                    ))
                })?,
            };
            if dim == 0 {
                return Err(Error::Resolve(
                    "field \"linear-contractive\" needs a positive dimension".into(),
                ));
            }
            linear_contractive(dim)
        }
        other => Err(Error::Resolve(format!(
            "unknown field \"{other}\" (known: paper-U, quadratic, quartic, linear-contractive[:dim])"
        ))),
    }
}
