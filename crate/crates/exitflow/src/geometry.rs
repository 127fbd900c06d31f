//! Exit domains and the discretized-width index J: the smallest number of
//! truncated jumps that can push the perturbed flow out of the domain.
//! Closed forms cover the 1D interval and contractive cases; a certificate-
//! producing cross-entropy search handles everything else. Certificates are
//! re-verified by independent integration at half the step size.

use std::fmt;
use std::io::{self, Write};
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::fields::FieldPair;
use crate::flow::{endpoint_after_last_jump, IntegratorConfig, JumpPlan};
use crate::parallel::{map_batches, Parallelism};
use crate::rng::{stream_rng, SEARCH_STREAM_BASE};
use crate::stats::norm2;

/// Fixed seed for the deterministic ray fan used by predicate-domain
/// distance estimation.
const RAY_FAN_SEED: u64 = 0x5eed_0f4a;

const PREDICATE_RAYS: usize = 512;

/// An open bounded domain containing the origin.
#[derive(Clone)]
pub enum DomainSpec {
    /// 1D open interval (lo, hi) with lo < 0 < hi.
    Interval { lo: f64, hi: f64 },
    /// Open ball of the given radius at the origin.
    Ball { radius: f64, dim: usize },
    /// Open axis-aligned box, per-axis (lo, hi) with lo < 0 < hi.
    Box { bounds: Vec<(f64, f64)> },
    /// Arbitrary open membership predicate with a finite bounding box.
    /// Distances are estimated by a deterministic ray fan (documented
    /// relative accuracy ~1e-3); openness is the caller's responsibility.
    Predicate {
        member: Arc<dyn Fn(&[f64]) -> bool + Send + Sync>,
        bounding_box: Vec<(f64, f64)>,
    },
}

impl fmt::Debug for DomainSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DomainSpec::Interval { lo, hi } => write!(f, "Interval({lo}, {hi})"),
            DomainSpec::Ball { radius, dim } => write!(f, "Ball(r={radius}, dim={dim})"),
            DomainSpec::Box { bounds } => write!(f, "Box({bounds:?})"),
            DomainSpec::Predicate { bounding_box, .. } => {
                write!(f, "Predicate(box={bounding_box:?})")
            }
        }
    }
}

fn validate_box(bounds: &[(f64, f64)]) -> Result<()> {
    if bounds.is_empty() {
        return Err(Error::InvalidParameter("box needs at least one axis".into()));
    }
    for &(lo, hi) in bounds {
        if !(lo < 0.0 && 0.0 < hi && lo.is_finite() && hi.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "box axis ({lo}, {hi}) must be finite and straddle the origin"
            )));
        }
    }
    Ok(())
}

impl DomainSpec {
    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        let d = DomainSpec::Interval { lo, hi };
        d.validate()?;
        Ok(d)
    }

    pub fn ball(radius: f64, dim: usize) -> Result<Self> {
        let d = DomainSpec::Ball { radius, dim };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DomainSpec::Interval { lo, hi } => {
                if !(lo < &0.0 && &0.0 < hi && lo.is_finite() && hi.is_finite()) {
                    return Err(Error::InvalidParameter(format!(
                        "interval ({lo}, {hi}) must be finite and straddle the origin"
                    )));
                }
                Ok(())
            }
            DomainSpec::Ball { radius, dim } => {
                if !(radius > &0.0 && radius.is_finite()) {
                    return Err(Error::InvalidParameter(format!(
                        "ball radius must be finite and positive, got {radius}"
                    )));
                }
                if *dim == 0 {
                    return Err(Error::InvalidParameter(
                        "ball dimension must be positive".into(),
                    ));
                }
                Ok(())
            }
            DomainSpec::Box { bounds } => validate_box(bounds),
            DomainSpec::Predicate {
                member,
                bounding_box,
            } => {
                validate_box(bounding_box)?;
                let origin = vec![0.0; bounding_box.len()];
                if !member(&origin) {
                    return Err(Error::InvalidParameter(
                        "predicate domain must contain the origin".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            DomainSpec::Interval { .. } => 1,
            DomainSpec::Ball { dim, .. } => *dim,
            DomainSpec::Box { bounds } => bounds.len(),
            DomainSpec::Predicate { bounding_box, .. } => bounding_box.len(),
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        debug_assert_eq!(x.len(), self.dim());
        match self {
            DomainSpec::Interval { lo, hi } => *lo < x[0] && x[0] < *hi,
            DomainSpec::Ball { radius, .. } => norm2(x) < *radius,
            DomainSpec::Box { bounds } => x
                .iter()
                .zip(bounds)
                .all(|(v, (lo, hi))| lo < v && v < hi),
            DomainSpec::Predicate { member, .. } => member(x),
        }
    }

    /// Euclidean distance from x to the complement; 0 when x is outside.
    /// Exact for Interval/Ball/Box; ray-fan estimate for Predicate.
    pub fn distance_to_complement(&self, x: &[f64]) -> f64 {
        if !self.contains(x) {
            return 0.0;
        }
        match self {
            DomainSpec::Interval { lo, hi } => (x[0] - lo).min(hi - x[0]),
            DomainSpec::Ball { radius, .. } => radius - norm2(x),
            DomainSpec::Box { bounds } => x
                .iter()
                .zip(bounds)
                .map(|(v, (lo, hi))| (v - lo).min(hi - v))
                .fold(f64::INFINITY, f64::min),
            DomainSpec::Predicate { .. } => self.ray_distance(x).0,
        }
    }

    /// Distance from x to the domain's closure; 0 when x is inside. Exact
    /// for the closed shapes, segment-to-origin estimate for Predicate.
    pub fn exterior_distance(&self, x: &[f64]) -> f64 {
        if self.contains(x) {
            return 0.0;
        }
        match self {
            DomainSpec::Interval { lo, hi } => (lo - x[0]).max(x[0] - hi).max(0.0),
            DomainSpec::Ball { radius, .. } => (norm2(x) - radius).max(0.0),
            DomainSpec::Box { bounds } => x
                .iter()
                .zip(bounds)
                .map(|(v, (lo, hi))| (lo - v).max(v - hi).max(0.0))
                .map(|g| g * g)
                .sum::<f64>()
                .sqrt(),
            DomainSpec::Predicate { member, .. } => {
                // walk the segment towards the origin until membership flips,
                // then bisect; an along-segment estimate of the gap
                let mut lo_t = 0.0; // outside at x (t = 0)
                let mut hi_t = 1.0; // inside at the origin (t = 1)
                let mut probe = x.to_vec();
                for _ in 0..40 {
                    let mid = 0.5 * (lo_t + hi_t);
                    for (p, v) in probe.iter_mut().zip(x) {
                        *p = v * (1.0 - mid);
                    }
                    if member(&probe) {
                        hi_t = mid;
                    } else {
                        lo_t = mid;
                    }
                }
                norm2(x) * 0.5 * (lo_t + hi_t)
            }
        }
    }

    /// (distance to complement, direction of the nearest sampled boundary
    /// point) for predicate domains.
    fn ray_distance(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let (member, bounding_box) = match self {
            DomainSpec::Predicate {
                member,
                bounding_box,
            } => (member, bounding_box),
            _ => unreachable!("ray_distance is predicate-only"),
        };
        let d = bounding_box.len();
        let diameter: f64 = bounding_box
            .iter()
            .map(|(lo, hi)| (hi - lo) * (hi - lo))
            .sum::<f64>()
            .sqrt();
        let mut rng = stream_rng(RAY_FAN_SEED, 0);
        let rays = if d == 1 { 2 } else { PREDICATE_RAYS };
        let mut best = f64::INFINITY;
        let mut best_dir = vec![0.0; d];
        let mut dir = vec![0.0; d];
        let mut probe = vec![0.0; d];
        for ray in 0..rays {
            if d == 1 {
                dir[0] = if ray == 0 { 1.0 } else { -1.0 };
            } else {
                loop {
                    for slot in dir.iter_mut() {
                        *slot = rng.sample(StandardNormal);
                    }
                    let n = norm2(&dir);
                    if n > 1e-12 {
                        for slot in dir.iter_mut() {
                            *slot /= n;
                        }
                        break;
                    }
                }
            }
            // grow until outside, then bisect to 1e-3 relative
            let mut t_hi = diameter / 64.0;
            let mut exited = false;
            while t_hi <= 2.0 * diameter {
                for i in 0..d {
                    probe[i] = x[i] + t_hi * dir[i];
                }
                if !member(&probe) {
                    exited = true;
                    break;
                }
                t_hi *= 2.0;
            }
            if !exited {
                continue;
            }
            let mut t_lo = 0.0;
            while t_hi - t_lo > 1e-3 * t_hi.max(1e-6) {
                let mid = 0.5 * (t_lo + t_hi);
                for i in 0..d {
                    probe[i] = x[i] + mid * dir[i];
                }
                if member(&probe) {
                    t_lo = mid;
                } else {
                    t_hi = mid;
                }
            }
            if t_hi < best {
                best = t_hi;
                best_dir.copy_from_slice(&dir);
            }
        }
        (best, best_dir)
    }

    /// The eps-shrinkage: points deeper than eps inside the domain. `None`
    /// when the shrinkage is empty or no longer contains the origin.
    pub fn shrink(&self, eps: f64) -> Option<DomainSpec> {
        assert!(eps >= 0.0, "shrinkage must be nonnegative, got {eps}");
        if eps == 0.0 {
            return Some(self.clone());
        }
        if eps >= self.distance_to_complement(&vec![0.0; self.dim()]) {
            return None;
        }
        match self {
            DomainSpec::Interval { lo, hi } => Some(DomainSpec::Interval {
                lo: lo + eps,
                hi: hi - eps,
            }),
            DomainSpec::Ball { radius, dim } => Some(DomainSpec::Ball {
                radius: radius - eps,
                dim: *dim,
            }),
            DomainSpec::Box { bounds } => Some(DomainSpec::Box {
                bounds: bounds.iter().map(|(lo, hi)| (lo + eps, hi - eps)).collect(),
            }),
            DomainSpec::Predicate { bounding_box, .. } => {
                let inner = self.clone();
                let member: Arc<dyn Fn(&[f64]) -> bool + Send + Sync> =
                    Arc::new(move |x: &[f64]| inner.distance_to_complement(x) > eps);
                Some(DomainSpec::Predicate {
                    member,
                    bounding_box: bounding_box
                        .iter()
                        .map(|(lo, hi)| ((lo + eps).min(-1e-12), (hi - eps).max(1e-12)))
                        .collect(),
                })
            }
        }
    }

    /// Radius of the smallest origin-centred ball covering the domain.
    pub(crate) fn circumradius(&self) -> f64 {
        match self {
            DomainSpec::Interval { lo, hi } => lo.abs().max(*hi),
            DomainSpec::Ball { radius, .. } => *radius,
            DomainSpec::Box { bounds } | DomainSpec::Predicate {
                bounding_box: bounds,
                ..
            } => bounds
                .iter()
                .map(|(lo, hi)| lo.abs().max(*hi).powi(2))
                .sum::<f64>()
                .sqrt(),
        }
    }

    /// A unit vector towards the nearest piece of the complement, seen from
    /// the origin.
    pub(crate) fn nearest_escape_direction(&self) -> Vec<f64> {
        match self {
            DomainSpec::Interval { lo, hi } => {
                vec![if lo.abs() <= *hi { -1.0 } else { 1.0 }]
            }
            DomainSpec::Ball { dim, .. } => {
                let mut dir = vec![0.0; *dim];
                dir[0] = 1.0;
                dir
            }
            DomainSpec::Box { bounds } => {
                let mut best_axis = 0;
                let mut best_gap = f64::INFINITY;
                let mut sign = 1.0;
                for (i, (lo, hi)) in bounds.iter().enumerate() {
                    if lo.abs() < best_gap {
                        best_gap = lo.abs();
                        best_axis = i;
                        sign = -1.0;
                    }
                    if *hi < best_gap {
                        best_gap = *hi;
                        best_axis = i;
                        sign = 1.0;
                    }
                }
                let mut dir = vec![0.0; bounds.len()];
                dir[best_axis] = sign;
                dir
            }
            DomainSpec::Predicate { bounding_box, .. } => {
                let origin = vec![0.0; bounding_box.len()];
                let (_, dir) = self.ray_distance(&origin);
                dir
            }
        }
    }
}

/// A witness that k truncated jumps suffice to leave the domain: the plan,
/// the resulting endpoint (outside), and how far beyond the boundary it
/// lands. Construction re-verifies the endpoint at half the step size.
#[derive(Clone, Debug)]
pub struct EscapeCertificate {
    pub jump_count: usize,
    pub plan: JumpPlan,
    pub endpoint: Vec<f64>,
    pub slack: f64,
    pub dt: f64,
}

impl EscapeCertificate {
    /// Build and doubly verify a certificate; `None` when the plan does not
    /// actually leave the domain at both step sizes.
    pub fn build(
        fields: &FieldPair,
        domain: &DomainSpec,
        b: f64,
        plan: JumpPlan,
        dt: f64,
    ) -> Result<Option<EscapeCertificate>> {
        let coarse = endpoint_after_last_jump(fields, &vec![0.0; fields.dim_state()], &plan, b, {
            &IntegratorConfig::with_dt(dt)
        })?;
        if domain.contains(&coarse) {
            return Ok(None);
        }
        let fine = endpoint_after_last_jump(
            fields,
            &vec![0.0; fields.dim_state()],
            &plan,
            b,
            &IntegratorConfig::with_dt(dt / 2.0),
        )?;
        if domain.contains(&fine) {
            return Ok(None);
        }
        let slack = domain.exterior_distance(&fine);
        Ok(Some(EscapeCertificate {
            jump_count: plan.count(),
            plan,
            endpoint: fine,
            slack,
            dt,
        }))
    }

    /// Independent re-check: integrate the plan at dt/2 and confirm the
    /// endpoint is still outside the domain.
    pub fn verify(&self, fields: &FieldPair, domain: &DomainSpec, b: f64) -> Result<bool> {
        let endpoint = endpoint_after_last_jump(
            fields,
            &vec![0.0; fields.dim_state()],
            &self.plan,
            b,
            &IntegratorConfig::with_dt(self.dt / 2.0),
        )?;
        Ok(!domain.contains(&endpoint))
    }

    /// Audit dump: one line per field, one line per jump.
    pub fn write_text(&self, out: &mut impl Write) -> io::Result<()> {
        writeln!(out, "jump_count: {}", self.jump_count)?;
        writeln!(out, "slack: {}", self.slack)?;
        writeln!(out, "dt: {}", self.dt)?;
        write!(out, "endpoint:")?;
        for v in &self.endpoint {
            write!(out, " {v}")?;
        }
        writeln!(out)?;
        for (t, w) in self.plan.times().iter().zip(self.plan.jumps()) {
            write!(out, "jump t={t} w=")?;
            for v in w {
                write!(out, " {v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Budget for the certificate search.
#[derive(Clone, Debug)]
pub struct SearchBudget {
    /// Largest jump count tried by iterative deepening.
    pub max_jumps: usize,
    /// Candidate plans evaluated per refinement round.
    pub population: usize,
    /// Cross-entropy refinement rounds per jump count.
    pub rounds: usize,
    /// Bound on inter-jump times; `None` derives one from the drift's
    /// hitting-time envelope.
    pub horizon: Option<f64>,
    /// Saturating jump magnitude; `None` derives one from b and sigma.
    pub magnitude: Option<f64>,
    /// Pre-jump fattening radius used only during exploration (the
    /// certificate itself is always verified with zero perturbations).
    pub epsilon: f64,
    pub parallelism: Parallelism,
}

impl Default for SearchBudget {
    fn default() -> Self {
        SearchBudget {
            max_jumps: 8,
            population: 192,
            rounds: 10,
            horizon: None,
            magnitude: None,
            epsilon: 0.0,
            parallelism: Parallelism::Auto,
        }
    }
}

/// How to compute the jump index.
#[derive(Clone, Debug, Default)]
pub enum JMethod {
    /// Closed form when applicable (untruncated, 1D interval, contractive),
    /// otherwise search.
    #[default]
    Auto,
    /// ceil(boundary distance / b) for 1D intervals with non-vanishing
    /// noise factor along the escape ray.
    OneDimensional,
    /// ceil(r / b) for inward-pointing drift, r the distance from the
    /// origin to the complement.
    Contractive,
    Search(SearchBudget),
}

/// Where a jump count came from.
#[derive(Clone, Debug, PartialEq)]
pub enum JStatus {
    /// b = +inf with usable noise at the origin: one jump always suffices.
    ProvenUntruncated,
    ProvenOneDimensional,
    ProvenContractive,
    SearchFound,
    /// No certificate up to `max_tried` jumps; `best_slack` is the signed
    /// distance of the best endpoint found (negative = still inside).
    SearchExhausted { max_tried: usize, best_slack: f64 },
}

/// The computed index with its witness.
#[derive(Clone, Debug)]
pub struct JumpCount {
    pub count: usize,
    pub certificate: Option<EscapeCertificate>,
    pub status: JStatus,
}

const CERT_DT: f64 = 1e-3;
const SEARCH_DT: f64 = 1e-2;
const SIGMA_FLOOR: f64 = 1e-9;

/// Smallest number of truncated jumps that demonstrably escapes the domain.
/// Deterministic given the seed, independent of parallelism.
pub fn j_index(
    domain: &DomainSpec,
    fields: &FieldPair,
    b: f64,
    method: JMethod,
    seed: u64,
) -> Result<JumpCount> {
    domain.validate()?;
    if !(b > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "truncation threshold must be positive (or +inf), got {b}"
        )));
    }
    if domain.dim() != fields.dim_state() {
        return Err(Error::DimensionMismatch(format!(
            "domain dimension {} does not match field dimension {}",
            domain.dim(),
            fields.dim_state()
        )));
    }
    match method {
        JMethod::OneDimensional => one_dimensional_j(domain, fields, b),
        JMethod::Contractive => contractive_j(domain, fields, b, seed),
        JMethod::Search(budget) => search_j(domain, fields, b, &budget, seed),
        JMethod::Auto => {
            if b == f64::INFINITY {
                if let Some(found) = untruncated_j(domain, fields)? {
                    return Ok(found);
                }
            } else if let DomainSpec::Interval { .. } = domain {
                if escape_ray_sigma_range(domain, fields)?.0 > SIGMA_FLOOR {
                    return one_dimensional_j(domain, fields, b);
                }
            }
            if b != f64::INFINITY {
                let radius = domain.circumradius();
                let mut rng = stream_rng(seed, SEARCH_STREAM_BASE);
                if fields.contractivity_scan(radius, 10_000, &mut rng)? <= 0.0 {
                    return contractive_j(domain, fields, b, seed);
                }
            }
            search_j(domain, fields, b, &SearchBudget::default(), seed)
        }
    }
}

/// Extended fields used for all certificate integrations: frozen outside a
/// ball comfortably containing the domain and any single jump, so user
/// fields only ever get evaluated where the theory constrains them.
fn certification_fields(domain: &DomainSpec, fields: &FieldPair, reach: f64) -> Result<FieldPair> {
    fields.bounded_extension(4.0 * domain.circumradius() + 2.0 * reach + 1.0)
}

/// Min and max of the 1D noise factor along the escape ray, sampled from the
/// origin to just past the nearer boundary.
fn escape_ray_sigma_range(domain: &DomainSpec, fields: &FieldPair) -> Result<(f64, f64)> {
    let (lo, hi) = match domain {
        DomainSpec::Interval { lo, hi } => (*lo, *hi),
        _ => {
            return Err(Error::InvalidParameter(
                "the one-dimensional method needs an Interval domain".into(),
            ))
        }
    };
    if fields.dim_state() != 1 {
        return Err(Error::DimensionMismatch(
            "the one-dimensional method needs 1D fields".into(),
        ));
    }
    let reach = if lo.abs() <= hi { -lo.abs() } else { hi };
    let mut min_sigma = f64::INFINITY;
    let mut max_sigma: f64 = 0.0;
    let mut out = [0.0];
    for i in 0..=128 {
        let x = [reach * 1.02 * i as f64 / 128.0];
        fields.diffusion_into(&x, &[1.0], &mut out)?;
        min_sigma = min_sigma.min(out[0].abs());
        max_sigma = max_sigma.max(out[0].abs());
    }
    Ok((min_sigma, max_sigma))
}

fn one_dimensional_j(domain: &DomainSpec, fields: &FieldPair, b: f64) -> Result<JumpCount> {
    let (min_sigma, _) = escape_ray_sigma_range(domain, fields)?;
    if min_sigma <= SIGMA_FLOOR {
        return Err(Error::DegenerateDiffusion(
            "noise factor vanishes along the escape ray; the ceil(dist/b) formula does not apply"
                .into(),
        ));
    }
    let dist = domain.distance_to_complement(&[0.0]);
    let count = if b == f64::INFINITY {
        1
    } else {
        (dist / b).ceil() as usize
    };
    let direction = domain.nearest_escape_direction();
    let certificate = straight_certificate(domain, fields, b, count, &direction, dist, min_sigma)?;
    Ok(JumpCount {
        count,
        certificate,
        status: JStatus::ProvenOneDimensional,
    })
}

fn contractive_j(domain: &DomainSpec, fields: &FieldPair, b: f64, seed: u64) -> Result<JumpCount> {
    let radius = domain.circumradius();
    let mut rng = stream_rng(seed, SEARCH_STREAM_BASE | 1);
    let worst = fields.contractivity_scan(radius, 10_000, &mut rng)?;
    if worst > 0.0 {
        return Err(Error::InvalidParameter(format!(
            "drift fails the contractivity scan (max a(x)·x = {worst} > 0); \
             the ceil(r/b) formula does not apply"
        )));
    }
    let dist = domain.distance_to_complement(&vec![0.0; domain.dim()]);
    let count = if b == f64::INFINITY {
        1
    } else {
        (dist / b).ceil() as usize
    };
    let direction = domain.nearest_escape_direction();
    let sigma_scale = fields.diffusion_origin_norm()?.max(SIGMA_FLOOR);
    let certificate = straight_certificate(domain, fields, b, count, &direction, dist, sigma_scale)?;
    Ok(JumpCount {
        count,
        certificate,
        status: JStatus::ProvenContractive,
    })
}

fn untruncated_j(domain: &DomainSpec, fields: &FieldPair) -> Result<Option<JumpCount>> {
    if fields.diffusion_origin_norm()? <= SIGMA_FLOOR {
        return Ok(None);
    }
    let dist = domain.distance_to_complement(&vec![0.0; domain.dim()]);
    let d = fields.dim_noise();
    let ext = certification_fields(domain, fields, 4.0 * dist)?;
    // try noise basis directions scaled to overshoot the nearest boundary
    let origin = vec![0.0; fields.dim_state()];
    let sigma = fields.diffusion_matrix(&origin)?;
    for j in 0..d {
        let column_norm: f64 = (0..fields.dim_state())
            .map(|i| sigma[i * d + j] * sigma[i * d + j])
            .sum::<f64>()
            .sqrt();
        if column_norm <= SIGMA_FLOOR {
            continue;
        }
        for sign in [1.0, -1.0] {
            let mut w = vec![0.0; d];
            w[j] = sign * 3.0 * domain.circumradius() / column_norm;
            let plan = JumpPlan::new(vec![w], vec![CERT_DT], 2.0 * CERT_DT)?;
            if let Some(cert) =
                EscapeCertificate::build(&ext, domain, f64::INFINITY, plan, CERT_DT)?
            {
                return Ok(Some(JumpCount {
                    count: 1,
                    certificate: Some(cert),
                    status: JStatus::ProvenUntruncated,
                }));
            }
        }
    }
    Ok(None)
}

/// Certificate from consecutive saturated jumps along one state-space
/// direction, dt-separated. Retries once with an extra jump when the
/// formula count exactly ties the distance and drift pullback spoils it.
fn straight_certificate(
    domain: &DomainSpec,
    fields: &FieldPair,
    b: f64,
    count: usize,
    direction: &[f64],
    dist: f64,
    sigma_scale: f64,
) -> Result<Option<EscapeCertificate>> {
    let magnitude = if b == f64::INFINITY {
        3.0 * dist.max(1.0) / sigma_scale
    } else {
        10.0 * b / sigma_scale
    };
    let reach = if b == f64::INFINITY {
        magnitude * sigma_scale
    } else {
        b
    };
    let ext = certification_fields(domain, fields, reach)?;
    // state direction -> noise direction: same vector when dimensions agree
    // (identity-like noise), otherwise fall back to the first basis vector
    let noise_dir: Vec<f64> = if fields.dim_noise() == direction.len() {
        direction.to_vec()
    } else {
        let mut w = vec![0.0; fields.dim_noise()];
        w[0] = 1.0;
        w
    };
    for k in [count, count + 1] {
        let jumps: Vec<Vec<f64>> = (0..k)
            .map(|_| noise_dir.iter().map(|c| c * magnitude).collect())
            .collect();
        let times: Vec<f64> = (1..=k).map(|j| j as f64 * CERT_DT).collect();
        let plan = JumpPlan::new(jumps, times, (k as f64 + 1.0) * CERT_DT)?;
        if let Some(cert) = EscapeCertificate::build(&ext, domain, b, plan, CERT_DT)? {
            return Ok(Some(cert));
        }
    }
    Ok(None)
}

struct CeDistribution {
    gap_mu: Vec<f64>,
    gap_sigma: Vec<f64>,
    /// 1D: probability of the +1 direction per jump.
    plus_prob: Vec<f64>,
    /// d >= 2: mean direction and angular spread per jump.
    dir_mean: Vec<Vec<f64>>,
    dir_spread: Vec<f64>,
}

impl CeDistribution {
    fn fresh(k: usize, horizon: f64, dim: usize) -> Self {
        let mut first_mean = vec![0.0; dim];
        first_mean[0] = 1.0;
        CeDistribution {
            gap_mu: vec![horizon / (k as f64 + 1.0); k],
            gap_sigma: vec![horizon / 2.0; k],
            plus_prob: vec![0.5; k],
            dir_mean: vec![first_mean; k],
            dir_spread: vec![1.5; k],
        }
    }
}

struct Candidate {
    slack: f64,
    gaps: Vec<f64>,
    dirs: Vec<Vec<f64>>,
}

fn sample_gap(mu: f64, sigma: f64, min_gap: f64, horizon: f64, rng: &mut impl Rng) -> f64 {
    let g: f64 = rng.sample::<f64, _>(StandardNormal) * sigma + mu;
    g.clamp(min_gap, horizon)
}

fn search_j(
    domain: &DomainSpec,
    fields: &FieldPair,
    b: f64,
    budget: &SearchBudget,
    seed: u64,
) -> Result<JumpCount> {
    let dim = fields.dim_state();
    let d_noise = fields.dim_noise();
    let sigma_scale = fields.diffusion_origin_norm()?.max(SIGMA_FLOOR);
    let magnitude = budget.magnitude.unwrap_or(if b == f64::INFINITY {
        4.0 * domain.circumradius() / sigma_scale
    } else {
        10.0 * b / sigma_scale
    });
    let horizon = match budget.horizon {
        Some(t) => t,
        None => drift_horizon(domain, fields)?,
    };
    let reach = if b == f64::INFINITY {
        magnitude * sigma_scale
    } else {
        b
    };
    let ext = certification_fields(domain, fields, reach)?;
    let search_cfg = IntegratorConfig::with_dt(SEARCH_DT);
    let min_gap = SEARCH_DT;

    let mut best_overall = f64::NEG_INFINITY;
    for k in 1..=budget.max_jumps {
        let mut dist_model = CeDistribution::fresh(k, horizon, d_noise);
        for round in 0..budget.rounds {
            let stream_tag = |i: u64| {
                SEARCH_STREAM_BASE | ((k as u64) << 32) | ((round as u64) << 20) | i
            };
            let escape_dir = domain.nearest_escape_direction();
            let model = &dist_model;
            let ext_ref = &ext;
            let results: Vec<Vec<Candidate>> = map_batches(
                budget.population as u64,
                16,
                budget.parallelism,
                |_, range| {
                    let mut out = Vec::with_capacity((range.end - range.start) as usize);
                    for i in range {
                        let mut rng = stream_rng(seed, stream_tag(i));
                        let mut gaps = Vec::with_capacity(k);
                        let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(k);
                        if round == 0 && i < 2 {
                            // deterministic straight seeds: consecutive and
                            // evenly spread jumps towards the near boundary
                            let gap = if i == 0 { min_gap } else { horizon / (k as f64 + 1.0) };
                            let noise_dir: Vec<f64> = if d_noise == dim {
                                escape_dir.clone()
                            } else {
                                let mut w = vec![0.0; d_noise];
                                w[0] = 1.0;
                                w
                            };
                            for _ in 0..k {
                                gaps.push(gap);
                                dirs.push(noise_dir.clone());
                            }
                        } else {
                            for j in 0..k {
                                gaps.push(sample_gap(
                                    model.gap_mu[j],
                                    model.gap_sigma[j],
                                    min_gap,
                                    horizon,
                                    &mut rng,
                                ));
                                let dir = if d_noise == 1 {
                                    let p: f64 = rng.gen();
                                    vec![if p < model.plus_prob[j] { 1.0 } else { -1.0 }]
                                } else {
                                    let mut v: Vec<f64> = (0..d_noise)
                                        .map(|c| {
                                            model.dir_mean[j][c]
                                                + model.dir_spread[j]
                                                    * rng.sample::<f64, _>(StandardNormal)
                                        })
                                        .collect();
                                    let n = norm2(&v).max(1e-12);
                                    for slot in v.iter_mut() {
                                        *slot /= n;
                                    }
                                    v
                                };
                                dirs.push(dir);
                            }
                        }
                        let slack = evaluate_plan(
                            ext_ref,
                            domain,
                            b,
                            &gaps,
                            &dirs,
                            magnitude,
                            budget.epsilon,
                            &search_cfg,
                            &mut rng,
                        )
                        .unwrap_or(f64::NEG_INFINITY);
                        out.push(Candidate { slack, gaps, dirs });
                    }
                    out
                },
            );
            let mut candidates: Vec<Candidate> =
                results.into_iter().flatten().collect();
            candidates.sort_by(|a, b| b.slack.partial_cmp(&a.slack).unwrap());
            let best = &candidates[0];
            best_overall = best_overall.max(best.slack);
            if best.slack > 0.0 {
                // replay the winner without exploration noise and certify
                let plan = plan_from(&best.gaps, &best.dirs, magnitude)?;
                if let Some(cert) = EscapeCertificate::build(&ext, domain, b, plan, CERT_DT)? {
                    return Ok(JumpCount {
                        count: k,
                        certificate: Some(cert),
                        status: JStatus::SearchFound,
                    });
                }
            }
            // refit on the elite quarter
            let elites = &candidates[..(budget.population / 4).max(2).min(candidates.len())];
            for j in 0..k {
                let mean: f64 =
                    elites.iter().map(|c| c.gaps[j]).sum::<f64>() / elites.len() as f64;
                let var: f64 = elites
                    .iter()
                    .map(|c| (c.gaps[j] - mean).powi(2))
                    .sum::<f64>()
                    / elites.len() as f64;
                dist_model.gap_mu[j] = mean;
                dist_model.gap_sigma[j] = var.sqrt().max(min_gap).min(horizon / 2.0);
                if d_noise == 1 {
                    let plus =
                        elites.iter().filter(|c| c.dirs[j][0] > 0.0).count() as f64;
                    dist_model.plus_prob[j] = (plus / elites.len() as f64).clamp(0.05, 0.95);
                } else {
                    let mut mean_dir = vec![0.0; d_noise];
                    for c in elites {
                        for (m, v) in mean_dir.iter_mut().zip(&c.dirs[j]) {
                            *m += v;
                        }
                    }
                    let n = norm2(&mean_dir);
                    if n > 1e-9 {
                        for m in mean_dir.iter_mut() {
                            *m /= n;
                        }
                        let spread: f64 = elites
                            .iter()
                            .map(|c| {
                                c.dirs[j]
                                    .iter()
                                    .zip(&mean_dir)
                                    .map(|(a, m)| (a - m) * (a - m))
                                    .sum::<f64>()
                                    .sqrt()
                            })
                            .sum::<f64>()
                            / elites.len() as f64;
                        dist_model.dir_mean[j] = mean_dir;
                        dist_model.dir_spread[j] = spread.clamp(0.05, 2.0);
                    }
                }
            }
        }
    }
    Ok(JumpCount {
        count: budget.max_jumps,
        certificate: None,
        status: JStatus::SearchExhausted {
            max_tried: budget.max_jumps,
            best_slack: best_overall,
        },
    })
}

fn plan_from(gaps: &[f64], dirs: &[Vec<f64>], magnitude: f64) -> Result<JumpPlan> {
    let mut times = Vec::with_capacity(gaps.len());
    let mut t = 0.0;
    for g in gaps {
        t += g;
        times.push(t);
    }
    let jumps: Vec<Vec<f64>> = dirs
        .iter()
        .map(|d| d.iter().map(|c| c * magnitude).collect())
        .collect();
    JumpPlan::new(jumps, times, t)
}

/// Signed slack of one candidate plan: distance beyond the boundary if the
/// endpoint escapes, minus the interior distance if it does not. Optional
/// exploration fattening perturbs the pre-jump states by up to epsilon.
#[allow(clippy::too_many_arguments)]
fn evaluate_plan(
    fields: &FieldPair,
    domain: &DomainSpec,
    b: f64,
    gaps: &[f64],
    dirs: &[Vec<f64>],
    magnitude: f64,
    epsilon: f64,
    cfg: &IntegratorConfig,
    rng: &mut impl Rng,
) -> Result<f64> {
    let endpoint = if epsilon > 0.0 {
        let mut x = vec![0.0; fields.dim_state()];
        let mut kick = vec![0.0; fields.dim_state()];
        for (gap, dir) in gaps.iter().zip(dirs) {
            let flown = crate::flow::integrate_flow(fields, &x, *gap, cfg)?;
            x = flown;
            for slot in x.iter_mut() {
                let u: f64 = rng.gen();
                *slot += epsilon * (2.0 * u - 1.0);
            }
            let w: Vec<f64> = dir.iter().map(|c| c * magnitude).collect();
            fields.diffusion_into(&x, &w, &mut kick)?;
            crate::dynamics::truncate_in_place(&mut kick, b);
            for (xi, ki) in x.iter_mut().zip(&kick) {
                *xi += ki;
            }
        }
        x
    } else {
        let plan = plan_from(gaps, dirs, magnitude)?;
        endpoint_after_last_jump(fields, &vec![0.0; fields.dim_state()], &plan, b, cfg)?
    };
    Ok(if domain.contains(&endpoint) {
        -domain.distance_to_complement(&endpoint)
    } else {
        domain.exterior_distance(&endpoint)
    })
}

/// Inter-jump time bound from the drift: three times the longest observed
/// hitting time of the ball of radius dist/10 from a fan of starts near the
/// boundary, with a fallback when the flow never settles.
pub(crate) fn drift_horizon(domain: &DomainSpec, fields: &FieldPair) -> Result<f64> {
    let dim = domain.dim();
    let dist = domain.distance_to_complement(&vec![0.0; dim]);
    let eps = dist / 10.0;
    let cfg = IntegratorConfig::with_dt(1e-2);
    let cap = 50.0;
    let mut worst: f64 = 0.0;
    let mut reached_any = false;
    let starts: Vec<Vec<f64>> = if dim == 1 {
        match domain {
            DomainSpec::Interval { lo, hi } => {
                vec![vec![0.9 * lo], vec![0.9 * hi]]
            }
            _ => vec![vec![0.9 * dist], vec![-0.9 * dist]],
        }
    } else {
        let mut rng = stream_rng(RAY_FAN_SEED, 1);
        (0..16)
            .map(|_| {
                let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
                let n = norm2(&v).max(1e-12);
                let r = 0.9 * dist;
                v.iter_mut().for_each(|c| *c *= r / n);
                v
            })
            .collect()
    };
    for start in starts {
        match crate::flow::hitting_time(fields, &start, eps, cap, &cfg)? {
            crate::flow::HittingTime::Reached(t) => {
                worst = worst.max(t);
                reached_any = true;
            }
            crate::flow::HittingTime::NotReached => {}
        }
    }
    Ok(if reached_any && worst > 0.0 {
        3.0 * worst
    } else {
        10.0
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{from_registry, linear_contractive, scalar_fields};

    fn basin() -> DomainSpec {
        DomainSpec::interval(-0.64, 0.86).unwrap()
    }

    fn ellipse() -> DomainSpec {
        DomainSpec::Predicate {
            member: Arc::new(|x: &[f64]| x[0] * x[0] / 4.0 + x[1] * x[1] < 1.0),
            bounding_box: vec![(-2.0, 2.0), (-1.0, 1.0)],
        }
    }

    #[test]
    fn distances_are_exact_on_closed_shapes() {
        let interval = DomainSpec::interval(-1.3, 0.2).unwrap();
        // min(x - lo, hi - x) at the shifted minimum: min(0.64, 0.86)
        assert!((interval.distance_to_complement(&[-0.66]) - 0.64).abs() < 1e-15);
        assert_eq!(interval.distance_to_complement(&[-1.5]), 0.0);
        assert!((interval.exterior_distance(&[-1.5]) - 0.2).abs() < 1e-15);
        let ball = DomainSpec::ball(2.0, 2).unwrap();
        assert_eq!(ball.distance_to_complement(&[0.0, 0.0]), 2.0);
        assert_eq!(ball.exterior_distance(&[3.0, 0.0]), 1.0);
        let boxy = DomainSpec::Box {
            bounds: vec![(-1.0, 2.0), (-3.0, 0.5)],
        };
        assert_eq!(boxy.distance_to_complement(&[0.0, 0.0]), 0.5);
        assert_eq!(boxy.exterior_distance(&[0.0, 1.5]), 1.0);
    }

    #[test]
    fn basin_distance_is_0_64() {
        // the basin interval's near side: min(0.64, 0.86) = 0.64
        assert_eq!(basin().distance_to_complement(&[0.0]), 0.64);
        assert_eq!(basin().nearest_escape_direction(), vec![-1.0]);
    }

    #[test]
    fn predicate_distance_matches_geometry() {
        let e = ellipse();
        let d = e.distance_to_complement(&[0.0, 0.0]);
        assert!((d - 1.0).abs() < 5e-3, "estimated {d}");
        // near the short axis the boundary is closer
        let d = e.distance_to_complement(&[0.0, 0.8]);
        assert!((d - 0.2).abs() < 2e-2, "estimated {d}");
        assert_eq!(e.distance_to_complement(&[3.0, 0.0]), 0.0);
        let x = e.exterior_distance(&[0.0, 2.0]);
        assert!((x - 1.0).abs() < 1e-6, "estimated {x}");
    }

    #[test]
    fn shrinkage() {
        let interval = DomainSpec::interval(-1.3, 0.2).unwrap();
        match interval.shrink(0.1).unwrap() {
            DomainSpec::Interval { lo, hi } => {
                assert!((lo + 1.2).abs() < 1e-15 && (hi - 0.1).abs() < 1e-15);
            }
            other => panic!("unexpected {other:?}"),
        }
        // zero shrink is the identity
        assert!(interval.shrink(0.0).is_some());
        // shrinking past the origin's depth empties the domain
        assert!(interval.shrink(0.2).is_none());
        assert!(interval.shrink(0.25).is_none());
        match DomainSpec::ball(2.0, 3).unwrap().shrink(0.5).unwrap() {
            DomainSpec::Ball { radius, dim } => {
                assert_eq!(radius, 1.5);
                assert_eq!(dim, 3);
            }
            other => panic!("unexpected {other:?}"),
        }
        let shrunk = ellipse().shrink(0.3).unwrap();
        let d = shrunk.distance_to_complement(&[0.0, 0.0]);
        assert!((d - 0.7).abs() < 2e-2, "estimated {d}");
    }

    #[test]
    fn domain_validation() {
        assert!(DomainSpec::interval(0.1, 0.2).is_err());
        assert!(DomainSpec::interval(-0.1, 0.0).is_err());
        assert!(DomainSpec::interval(f64::NEG_INFINITY, 1.0).is_err());
        assert!(DomainSpec::ball(0.0, 2).is_err());
        assert!(DomainSpec::ball(1.0, 0).is_err());
        assert!(validate_box(&[(-1.0, 1.0), (0.5, 2.0)]).is_err());
        let off_centre = DomainSpec::Predicate {
            member: Arc::new(|x: &[f64]| (x[0] - 5.0).abs() < 1.0),
            bounding_box: vec![(-7.0, 7.0)],
        };
        assert!(off_centre.validate().is_err());
    }

    #[test]
    fn one_dimensional_j_on_the_basin() {
        let fields = Arc::new(from_registry("paper-U").unwrap());
        for (b, expect) in [(f64::INFINITY, 1), (0.7, 1), (0.4, 2), (0.28, 3)] {
            let jc = j_index(&basin(), &fields, b, JMethod::OneDimensional, 1).unwrap();
            assert_eq!(jc.count, expect, "b = {b}");
            assert_eq!(jc.status, JStatus::ProvenOneDimensional);
            let cert = jc.certificate.expect("certificate");
            assert!(cert.slack > 0.0);
            assert!(cert.verify(&fields, &basin(), b).unwrap());
        }
    }

    #[test]
    fn j_is_monotone_in_the_threshold() {
        let fields = Arc::new(from_registry("paper-U").unwrap());
        let grid = [f64::INFINITY, 2.0, 1.0, 0.7, 0.5, 0.4, 0.3, 0.28, 0.2];
        let mut last = 0;
        for &b in &grid {
            let jc = j_index(&basin(), &fields, b, JMethod::Auto, 1).unwrap();
            assert!(jc.count >= last, "J must not drop as b shrinks");
            last = jc.count;
        }
        // any threshold beyond the interval width needs exactly one jump
        let jc = j_index(&basin(), &fields, 5.0, JMethod::Auto, 1).unwrap();
        assert_eq!(jc.count, 1);
    }

    #[test]
    fn contractive_j_on_the_ball() {
        let fields = Arc::new(linear_contractive(2).unwrap());
        let ball = DomainSpec::ball(1.0, 2).unwrap();
        let jc = j_index(&ball, &fields, 0.4, JMethod::Contractive, 3).unwrap();
        assert_eq!(jc.count, 3);
        assert_eq!(jc.status, JStatus::ProvenContractive);
        assert!(jc.certificate.unwrap().slack > 0.0);
        // expanding drift is rejected
        let expanding = Arc::new(scalar_fields(|x| x, |_| 1.0));
        let line = DomainSpec::interval(-1.0, 1.0).unwrap();
        assert!(j_index(&line, &expanding, 0.4, JMethod::Contractive, 3).is_err());
    }

    #[test]
    fn search_agrees_with_the_contractive_formula() {
        let fields = Arc::new(linear_contractive(2).unwrap());
        let ball = DomainSpec::ball(1.0, 2).unwrap();
        for (b, expect) in [(0.7, 2usize), (0.45, 3)] {
            let jc = j_index(
                &ball,
                &fields,
                b,
                JMethod::Search(SearchBudget {
                    max_jumps: 5,
                    population: 96,
                    rounds: 6,
                    ..Default::default()
                }),
                7,
            )
            .unwrap();
            assert_eq!(jc.count, expect, "b = {b}");
            assert_eq!(jc.status, JStatus::SearchFound);
            let cert = jc.certificate.expect("certificate");
            assert!(cert.verify(&fields, &ball, b).unwrap());
        }
    }

    #[test]
    fn search_reports_exhaustion_honestly() {
        let fields = Arc::new(linear_contractive(1).unwrap());
        let wide = DomainSpec::interval(-5.0, 5.0).unwrap();
        let jc = j_index(
            &wide,
            &fields,
            0.1,
            JMethod::Search(SearchBudget {
                max_jumps: 2,
                population: 32,
                rounds: 2,
                ..Default::default()
            }),
            9,
        )
        .unwrap();
        assert!(jc.certificate.is_none());
        match jc.status {
            JStatus::SearchExhausted {
                max_tried,
                best_slack,
            } => {
                assert_eq!(max_tried, 2);
                assert!(best_slack < 0.0, "two 0.1-jumps cannot reach 5.0");
            }
            other => panic!("expected exhaustion, got {other:?}"),
        }
    }

    #[test]
    fn untruncated_auto_is_a_single_jump() {
        let fields = Arc::new(from_registry("quadratic").unwrap());
        let domain = DomainSpec::interval(-1.0, 2.0).unwrap();
        let jc = j_index(&domain, &fields, f64::INFINITY, JMethod::Auto, 5).unwrap();
        assert_eq!(jc.count, 1);
        assert_eq!(jc.status, JStatus::ProvenUntruncated);
        assert!(jc.certificate.unwrap().slack > 0.0);
    }

    #[test]
    fn auto_falls_back_to_search_on_degenerate_noise() {
        // sigma(x) = x vanishes at the origin: the 1D closed form is refused
        // and the search honestly fails to escape (jumps from rest are zero)
        let fields = Arc::new(scalar_fields(|x| -x, |x| x));
        let domain = DomainSpec::interval(-1.0, 1.0).unwrap();
        assert!(matches!(
            j_index(&domain, &fields, 0.5, JMethod::OneDimensional, 11),
            Err(Error::DegenerateDiffusion(_))
        ));
        let jc = j_index(
            &domain,
            &fields,
            0.5,
            JMethod::Search(SearchBudget {
                max_jumps: 2,
                population: 32,
                rounds: 2,
                ..Default::default()
            }),
            11,
        )
        .unwrap();
        assert!(matches!(jc.status, JStatus::SearchExhausted { .. }));
    }

    #[test]
    fn search_is_deterministic_across_parallelism() {
        let fields = Arc::new(linear_contractive(2).unwrap());
        let ball = DomainSpec::ball(1.0, 2).unwrap();
        let run = |par: Parallelism| {
            j_index(
                &ball,
                &fields,
                0.45,
                JMethod::Search(SearchBudget {
                    max_jumps: 4,
                    population: 64,
                    rounds: 4,
                    parallelism: par,
                    ..Default::default()
                }),
                13,
            )
            .unwrap()
        };
        let a = run(Parallelism::Sequential);
        let c = run(Parallelism::Threads(3));
        assert_eq!(a.count, c.count);
        let (ca, cc) = (a.certificate.unwrap(), c.certificate.unwrap());
        assert_eq!(ca.endpoint, cc.endpoint);
        assert_eq!(ca.plan.times(), cc.plan.times());
    }

    #[test]
    fn certificate_text_dump() {
        let fields = Arc::new(from_registry("paper-U").unwrap());
        let jc = j_index(&basin(), &fields, 0.4, JMethod::OneDimensional, 1).unwrap();
        let cert = jc.certificate.unwrap();
        let mut buf = Vec::new();
        cert.write_text(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("jump_count: 2"));
        assert!(text.contains("slack:"));
        assert_eq!(text.lines().filter(|l| l.starts_with("jump t=")).count(), 2);
    }
}
