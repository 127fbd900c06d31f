//! Deterministic dynamics between jumps: the drift flow dy/dt = a(y), paths
//! perturbed by a finite plan of instantaneous truncated jumps, the endpoint
//! evaluated at the last jump time, and hitting times of small balls at the
//! origin. Integration is fixed-step RK4 with exact splitting at jump times.

use std::io::{self, Write};

use crate::dynamics::truncate_in_place;
use crate::error::{Error, Result};
use crate::fields::FieldPair;
use crate::stats::{all_finite, norm2};

/// Fixed-step RK4 settings. `dt` is in flow time; `record_dense` adds every
/// grid node to the returned path instead of just segment boundaries.
#[derive(Clone, Copy, Debug)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub record_dense: bool,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            dt: 1e-3,
            record_dense: false,
        }
    }
}

impl IntegratorConfig {
    pub fn with_dt(dt: f64) -> Self {
        IntegratorConfig {
            dt,
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "integrator step must be finite and positive, got {}",
                self.dt
            )));
        }
        Ok(())
    }
}

/// A finite plan of jumps: noise vectors w_1..w_k applied at strictly
/// increasing times 0 < t_1 < … < t_k ≤ horizon.
#[derive(Clone, Debug)]
pub struct JumpPlan {
    jumps: Vec<Vec<f64>>,
    times: Vec<f64>,
    horizon: f64,
}

impl JumpPlan {
    pub fn new(jumps: Vec<Vec<f64>>, times: Vec<f64>, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "plan horizon must be finite and positive, got {horizon}"
            )));
        }
        if jumps.len() != times.len() {
            return Err(Error::InvalidParameter(format!(
                "plan has {} jumps but {} times",
                jumps.len(),
                times.len()
            )));
        }
        let mut prev = 0.0;
        for &t in &times {
            if !(t > prev && t.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "jump times must be strictly increasing in (0, horizon], got {times:?}"
                )));
            }
            prev = t;
        }
        if let Some(&last) = times.last() {
            if last > horizon {
                return Err(Error::InvalidParameter(format!(
                    "last jump time {last} exceeds the horizon {horizon}"
                )));
            }
        }
        if let Some(first) = jumps.first() {
            let d = first.len();
            if d == 0 || jumps.iter().any(|w| w.len() != d) {
                return Err(Error::DimensionMismatch(
                    "plan jumps must share one positive dimension".into(),
                ));
            }
            if jumps.iter().any(|w| !all_finite(w)) {
                return Err(Error::NonFinite("plan jumps must be finite".into()));
            }
        }
        Ok(JumpPlan {
            jumps,
            times,
            horizon,
        })
    }

    pub fn empty(horizon: f64) -> Result<Self> {
        JumpPlan::new(Vec::new(), Vec::new(), horizon)
    }

    pub fn count(&self) -> usize {
        self.jumps.len()
    }

    pub fn jumps(&self) -> &[Vec<f64>] {
        &self.jumps
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }
}

/// A recorded càdlàg path: at a jump time both the pre-jump and post-jump
/// states appear, in that order, under the same timestamp.
#[derive(Clone, Debug)]
pub struct FlowPath {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub endpoint: Vec<f64>,
}

impl FlowPath {
    /// Dump as CSV with columns t, x_1..x_m.
    pub fn write_csv(&self, out: &mut impl Write) -> io::Result<()> {
        let dim = self.endpoint.len();
        write!(out, "t")?;
        for i in 1..=dim {
            write!(out, ",x_{i}")?;
        }
        writeln!(out)?;
        for (t, state) in self.times.iter().zip(&self.states) {
            write!(out, "{t}")?;
            for v in state {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

struct Rk4Scratch {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    probe: Vec<f64>,
}

impl Rk4Scratch {
    fn new(dim: usize) -> Self {
        Rk4Scratch {
            k1: vec![0.0; dim],
            k2: vec![0.0; dim],
            k3: vec![0.0; dim],
            k4: vec![0.0; dim],
            probe: vec![0.0; dim],
        }
    }
}

fn rk4_step(fields: &FieldPair, x: &mut [f64], h: f64, s: &mut Rk4Scratch) {
    fields.drift_raw(x, &mut s.k1);
    for i in 0..x.len() {
        s.probe[i] = x[i] + 0.5 * h * s.k1[i];
    }
    fields.drift_raw(&s.probe, &mut s.k2);
    for i in 0..x.len() {
        s.probe[i] = x[i] + 0.5 * h * s.k2[i];
    }
    fields.drift_raw(&s.probe, &mut s.k3);
    for i in 0..x.len() {
        s.probe[i] = x[i] + h * s.k3[i];
    }
    fields.drift_raw(&s.probe, &mut s.k4);
    for i in 0..x.len() {
        x[i] += h / 6.0 * (s.k1[i] + 2.0 * s.k2[i] + 2.0 * s.k3[i] + s.k4[i]);
    }
}

/// Integrate one flow segment of the given duration, reporting each reached
/// absolute time. The final partial step lands exactly on the segment end.
fn flow_segment(
    fields: &FieldPair,
    x: &mut [f64],
    t_start: f64,
    duration: f64,
    dt: f64,
    scratch: &mut Rk4Scratch,
    mut on_node: impl FnMut(f64, &[f64]),
) -> Result<()> {
    if duration <= 0.0 {
        return Ok(());
    }
    let full_steps = (duration / dt).floor() as u64;
    let mut done = 0.0;
    for i in 0..full_steps {
        rk4_step(fields, x, dt, scratch);
        done = (i + 1) as f64 * dt;
        if !all_finite(x) {
            return Err(Error::NonFinite(format!(
                "flow diverged near t = {}",
                t_start + done
            )));
        }
        on_node(t_start + done, x);
    }
    let remainder = duration - done;
    if remainder > dt * 1e-12 {
        rk4_step(fields, x, remainder, scratch);
        if !all_finite(x) {
            return Err(Error::NonFinite(format!(
                "flow diverged near t = {}",
                t_start + duration
            )));
        }
        on_node(t_start + duration, x);
    }
    Ok(())
}

/// The plain flow y_t(x0) with a(·) only.
pub fn integrate_flow(
    fields: &FieldPair,
    x0: &[f64],
    t: f64,
    cfg: &IntegratorConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if x0.len() != fields.dim_state() {
        return Err(Error::DimensionMismatch(format!(
            "start has dimension {}, fields expect {}",
            x0.len(),
            fields.dim_state()
        )));
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "flow duration must be finite and nonnegative, got {t}"
        )));
    }
    let mut x = x0.to_vec();
    let mut scratch = Rk4Scratch::new(x0.len());
    flow_segment(fields, &mut x, 0.0, t, cfg.dt, &mut scratch, |_, _| {})?;
    Ok(x)
}

fn perturbed_run(
    fields: &FieldPair,
    x0: &[f64],
    plan: &JumpPlan,
    b: f64,
    cfg: &IntegratorConfig,
    stop_at_last_jump: bool,
) -> Result<FlowPath> {
    cfg.validate()?;
    if x0.len() != fields.dim_state() {
        return Err(Error::DimensionMismatch(format!(
            "start has dimension {}, fields expect {}",
            x0.len(),
            fields.dim_state()
        )));
    }
    if !(b > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "truncation threshold must be positive (or +inf), got {b}"
        )));
    }
    if plan.count() > 0 && plan.jumps[0].len() != fields.dim_noise() {
        return Err(Error::DimensionMismatch(format!(
            "plan jumps have dimension {}, fields expect noise dimension {}",
            plan.jumps[0].len(),
            fields.dim_noise()
        )));
    }
    let mut x = x0.to_vec();
    let mut scratch = Rk4Scratch::new(x.len());
    let mut kick = vec![0.0; x.len()];
    let mut path = FlowPath {
        times: vec![0.0],
        states: vec![x.clone()],
        endpoint: Vec::new(),
    };
    let dense = cfg.record_dense;
    let mut t_prev = 0.0;
    for (w, &t_jump) in plan.jumps.iter().zip(&plan.times) {
        {
            let (times, states) = (&mut path.times, &mut path.states);
            flow_segment(
                fields,
                &mut x,
                t_prev,
                t_jump - t_prev,
                cfg.dt,
                &mut scratch,
                |t, state| {
                    if dense {
                        times.push(t);
                        states.push(state.to_vec());
                    }
                },
            )?;
        }
        if !dense {
            // segment boundary: pre-jump state
            path.times.push(t_jump);
            path.states.push(x.clone());
        }
        fields.diffusion_raw(&x, w, &mut kick);
        truncate_in_place(&mut kick, b);
        for (xi, ki) in x.iter_mut().zip(&kick) {
            *xi += ki;
        }
        if !all_finite(&x) {
            return Err(Error::NonFinite(format!(
                "state is non-finite after the jump at t = {t_jump}"
            )));
        }
        path.times.push(t_jump);
        path.states.push(x.clone());
        t_prev = t_jump;
    }
    if !stop_at_last_jump {
        let (times, states) = (&mut path.times, &mut path.states);
        flow_segment(
            fields,
            &mut x,
            t_prev,
            plan.horizon - t_prev,
            cfg.dt,
            &mut scratch,
            |t, state| {
                if dense {
                    times.push(t);
                    states.push(state.to_vec());
                }
            },
        )?;
        if !dense {
            path.times.push(plan.horizon);
            path.states.push(x.clone());
        }
    }
    path.endpoint = x;
    Ok(path)
}

/// The jump-perturbed path on [0, horizon]: flow under a(·) between jump
/// times, and at each t_j the instantaneous kick phi_b(sigma(x-) w_j).
pub fn perturbed_path(
    fields: &FieldPair,
    x0: &[f64],
    plan: &JumpPlan,
    b: f64,
    cfg: &IntegratorConfig,
) -> Result<FlowPath> {
    perturbed_run(fields, x0, plan, b, cfg, false)
}

/// The perturbed path's value at the last jump time, immediately after that
/// jump is applied. Needs k >= 1.
pub fn endpoint_after_last_jump(
    fields: &FieldPair,
    x0: &[f64],
    plan: &JumpPlan,
    b: f64,
    cfg: &IntegratorConfig,
) -> Result<Vec<f64>> {
    if plan.count() == 0 {
        return Err(Error::InvalidParameter(
            "endpoint_after_last_jump needs at least one jump".into(),
        ));
    }
    Ok(perturbed_run(fields, x0, plan, b, cfg, true)?.endpoint)
}

/// Outcome of `hitting_time`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum HittingTime {
    Reached(f64),
    NotReached,
}

/// First time the flow from x0 enters the closed ball of radius eps at the
/// origin, scanned on the dt grid and refined by bisection to dt * 1e-3. A
/// flow that never enters within t_max reports NotReached.
pub fn hitting_time(
    fields: &FieldPair,
    x0: &[f64],
    eps: f64,
    t_max: f64,
    cfg: &IntegratorConfig,
) -> Result<HittingTime> {
    cfg.validate()?;
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "target radius must be positive, got {eps}"
        )));
    }
    if !(t_max > 0.0 && t_max.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "time cap must be finite and positive, got {t_max}"
        )));
    }
    if x0.len() != fields.dim_state() {
        return Err(Error::DimensionMismatch(format!(
            "start has dimension {}, fields expect {}",
            x0.len(),
            fields.dim_state()
        )));
    }
    if norm2(x0) <= eps {
        return Ok(HittingTime::Reached(0.0));
    }
    let dt = cfg.dt;
    let mut scratch = Rk4Scratch::new(x0.len());
    let mut x = x0.to_vec();
    let mut prev = x.clone();
    let steps = (t_max / dt).ceil() as u64;
    for i in 0..steps {
        let t0 = i as f64 * dt;
        let h = dt.min(t_max - t0);
        if h <= 0.0 {
            break;
        }
        prev.copy_from_slice(&x);
        rk4_step(fields, &mut x, h, &mut scratch);
        if !all_finite(&x) {
            return Err(Error::NonFinite(format!("flow diverged near t = {t0}")));
        }
        if norm2(&x) <= eps {
            // bisect within (t0, t0 + h] from the pre-step state
            let mut lo = 0.0;
            let mut hi = h;
            let mut probe = prev.clone();
            while hi - lo > dt * 1e-3 {
                let mid = 0.5 * (lo + hi);
                probe.copy_from_slice(&prev);
                rk4_step(fields, &mut probe, mid, &mut scratch);
                if norm2(&probe) <= eps {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return Ok(HittingTime::Reached(t0 + hi));
        }
    }
    Ok(HittingTime::NotReached)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{linear_contractive, scalar_fields};
    use crate::rng::stream_rng;
    use rand::Rng;

    fn linear() -> FieldPair {
        linear_contractive(1).unwrap()
    }

    #[test]
    fn flow_matches_linear_ode() {
        let cfg = IntegratorConfig::default();
        let y = integrate_flow(&linear(), &[1.0], 1.0, &cfg).unwrap();
        assert!((y[0] - (-1.0_f64).exp()).abs() < 1e-9, "y = {}", y[0]);
        // zero duration is the identity, bit for bit
        let y0 = integrate_flow(&linear(), &[0.3], 0.0, &cfg).unwrap();
        assert_eq!(y0[0].to_bits(), 0.3_f64.to_bits());
        // zero field never moves
        let still = scalar_fields(|_| 0.0, |_| 1.0);
        let y = integrate_flow(&still, &[2.5], 7.3, &cfg).unwrap();
        assert_eq!(y[0], 2.5);
        assert!(integrate_flow(&linear(), &[1.0], -1.0, &cfg).is_err());
        assert!(integrate_flow(&linear(), &[1.0], 1.0, &IntegratorConfig::with_dt(0.0)).is_err());
    }

    #[test]
    fn semigroup_property_with_partial_steps() {
        let field = scalar_fields(|x| -x + 0.3 * (2.0 * x).sin(), |_| 1.0);
        let cfg = IntegratorConfig::default();
        let x0 = [1.7];
        let s = 0.351_7;
        let t = 0.862_301;
        let direct = integrate_flow(&field, &x0, s + t, &cfg).unwrap();
        let mid = integrate_flow(&field, &x0, s, &cfg).unwrap();
        let composed = integrate_flow(&field, &mid, t, &cfg).unwrap();
        assert!(
            (direct[0] - composed[0]).abs() < 1e-8,
            "{} vs {}",
            direct[0],
            composed[0]
        );
    }

    #[test]
    fn rk4_halving_cuts_error_by_an_order_of_magnitude() {
        let exact = (-1.0_f64).exp();
        let coarse = integrate_flow(&linear(), &[1.0], 1.0, &IntegratorConfig::with_dt(0.02))
            .unwrap()[0];
        let fine = integrate_flow(&linear(), &[1.0], 1.0, &IntegratorConfig::with_dt(0.01))
            .unwrap()[0];
        let e_coarse = (coarse - exact).abs();
        let e_fine = (fine - exact).abs();
        assert!(
            e_coarse >= 12.0 * e_fine,
            "errors {e_coarse} vs {e_fine} (ratio {})",
            e_coarse / e_fine
        );
    }

    #[test]
    fn empty_plan_reproduces_the_plain_flow() {
        let plan = JumpPlan::empty(1.0).unwrap();
        let cfg = IntegratorConfig::default();
        let path = perturbed_path(&linear(), &[1.0], &plan, 1.0, &cfg).unwrap();
        let direct = integrate_flow(&linear(), &[1.0], 1.0, &cfg).unwrap();
        assert_eq!(path.endpoint, direct);
        assert_eq!(path.times.first(), Some(&0.0));
        assert_eq!(path.times.last(), Some(&1.0));
    }

    #[test]
    fn zero_drift_jumps_add_up_truncated() {
        let still = scalar_fields(|_| 0.0, |_| 1.0);
        let plan = JumpPlan::new(vec![vec![3.0], vec![3.0]], vec![0.4, 1.1], 2.0).unwrap();
        let cfg = IntegratorConfig::default();
        let path = perturbed_path(&still, &[0.25], &plan, 1.0, &cfg).unwrap();
        assert!((path.endpoint[0] - 2.25).abs() < 1e-14);
    }

    #[test]
    fn single_jump_then_decay() {
        let plan = JumpPlan::new(vec![vec![2.0]], vec![1.0], 2.0).unwrap();
        let cfg = IntegratorConfig::default();
        let path = perturbed_path(&linear(), &[0.0], &plan, f64::INFINITY, &cfg).unwrap();
        let expect = 2.0 * (-1.0_f64).exp();
        assert!((path.endpoint[0] - expect).abs() < 1e-8, "{}", path.endpoint[0]);
    }

    #[test]
    fn endpoint_after_last_jump_examples() {
        let cfg = IntegratorConfig::default();
        // generic k=1 unrolled definition
        let field = scalar_fields(|x| -0.7 * x, |x| 1.0 + 0.1 * x * x);
        let plan = JumpPlan::new(vec![vec![1.5]], vec![0.8], 3.0).unwrap();
        let got = endpoint_after_last_jump(&field, &[0.6], &plan, 0.9, &cfg).unwrap();
        let pre = integrate_flow(&field, &[0.6], 0.8, &cfg).unwrap();
        let mut kick = vec![(1.0 + 0.1 * pre[0] * pre[0]) * 1.5];
        truncate_in_place(&mut kick, 0.9);
        assert!((got[0] - (pre[0] + kick[0])).abs() < 1e-12);

        // two unit jumps on the linear field: e^{-1} + 1
        let plan = JumpPlan::new(vec![vec![1.0], vec![1.0]], vec![1.0, 2.0], 3.0).unwrap();
        let got = endpoint_after_last_jump(&linear(), &[0.0], &plan, f64::INFINITY, &cfg).unwrap();
        assert!((got[0] - ((-1.0_f64).exp() + 1.0)).abs() < 1e-8);

        // at an equilibrium start, shifting all times leaves it unchanged
        let shifted = JumpPlan::new(vec![vec![1.0], vec![1.0]], vec![1.5, 2.5], 3.5).unwrap();
        let again = endpoint_after_last_jump(&linear(), &[0.0], &shifted, f64::INFINITY, &cfg)
            .unwrap();
        assert!((got[0] - again[0]).abs() < 1e-9);

        let empty = JumpPlan::empty(1.0).unwrap();
        assert!(endpoint_after_last_jump(&linear(), &[0.0], &empty, 1.0, &cfg).is_err());
    }

    #[test]
    fn generous_threshold_never_truncates() {
        let field = scalar_fields(|x| -x, |x| 1.0 + x * x);
        let cfg = IntegratorConfig::default();
        let plan = JumpPlan::new(
            vec![vec![0.8], vec![-1.3], vec![0.4]],
            vec![0.2, 0.9, 1.4],
            2.0,
        )
        .unwrap();
        let free = perturbed_path(&field, &[0.5], &plan, f64::INFINITY, &cfg).unwrap();
        // any b at least twice the largest kick is inactive
        let loose = perturbed_path(&field, &[0.5], &plan, 10.0, &cfg).unwrap();
        assert!((free.endpoint[0] - loose.endpoint[0]).abs() < 1e-12);
    }

    #[test]
    fn path_recording_is_cadlag_and_dumps_csv() {
        let plan = JumpPlan::new(vec![vec![1.0]], vec![0.5], 1.0).unwrap();
        let mut cfg = IntegratorConfig::default();
        cfg.record_dense = true;
        let path = perturbed_path(&linear(), &[1.0], &plan, f64::INFINITY, &cfg).unwrap();
        assert_eq!(path.times[0], 0.0);
        assert_eq!(*path.times.last().unwrap(), 1.0);
        for pair in path.times.windows(2) {
            assert!(pair[0] <= pair[1]);
        }
        // the jump shows as two states under one timestamp
        let at_jump: Vec<&Vec<f64>> = path
            .times
            .iter()
            .zip(&path.states)
            .filter(|(t, _)| **t == 0.5)
            .map(|(_, s)| s)
            .collect();
        assert_eq!(at_jump.len(), 2);
        assert!((at_jump[1][0] - at_jump[0][0] - 1.0).abs() < 1e-12);

        let mut buf = Vec::new();
        path.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t,x_1"));
        assert_eq!(text.lines().count(), path.times.len() + 1);
    }

    #[test]
    fn hitting_time_examples() {
        let cfg = IntegratorConfig::default();
        let eps = (-2.0_f64).exp();
        match hitting_time(&linear(), &[1.0], eps, 10.0, &cfg).unwrap() {
            HittingTime::Reached(t) => assert!((t - 2.0).abs() < 1e-4, "t = {t}"),
            HittingTime::NotReached => panic!("linear flow must reach the ball"),
        }
        assert_eq!(
            hitting_time(&linear(), &[0.001], 0.01, 1.0, &cfg).unwrap(),
            HittingTime::Reached(0.0)
        );
        let still = scalar_fields(|_| 0.0, |_| 1.0);
        assert_eq!(
            hitting_time(&still, &[2.0], 0.5, 5.0, &cfg).unwrap(),
            HittingTime::NotReached
        );
        assert!(hitting_time(&linear(), &[1.0], 0.0, 1.0, &cfg).is_err());
        assert!(hitting_time(&linear(), &[1.0], 0.1, 0.0, &cfg).is_err());
    }

    #[test]
    fn escape_reach_is_monotone_in_jump_count_and_threshold() {
        // contractive 1D field, positive jumps: the farthest post-jump state
        // over a family of random plans must grow with more allowed jumps
        // and with a looser truncation threshold
        let cfg = IntegratorConfig::with_dt(1e-2);
        let field = linear();
        let mut rng = stream_rng(41, 0);
        let horizon = 3.0;
        let families: Vec<(Vec<f64>, Vec<f64>)> = (0..200)
            .map(|_| {
                let mut times: Vec<f64> = (0..3).map(|_| rng.gen_range(0.0..horizon)).collect();
                times.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let jumps: Vec<f64> = (0..3).map(|_| 0.3 + 2.0 * rng.gen::<f64>()).collect();
                (times, jumps)
            })
            .collect();
        let reach = |k: usize, b: f64| -> f64 {
            let mut best: f64 = 0.0;
            for (times, jumps) in &families {
                let prefix_t: Vec<f64> = times[..k].to_vec();
                let prefix_w: Vec<Vec<f64>> = jumps[..k].iter().map(|&w| vec![w]).collect();
                if prefix_t.windows(2).any(|p| p[0] >= p[1]) || prefix_t[0] <= 0.0 {
                    continue;
                }
                let plan = JumpPlan::new(prefix_w, prefix_t, horizon).unwrap();
                let path = perturbed_run(&field, &[0.0], &plan, b, &cfg, true).unwrap();
                // farthest post-jump state over the prefix path
                let far = path
                    .states
                    .iter()
                    .map(|s| s[0].abs())
                    .fold(0.0_f64, f64::max);
                best = best.max(far);
            }
            best
        };
        for &b in &[0.5, 1.0, 2.0] {
            assert!(reach(1, b) <= reach(2, b) + 1e-12);
            assert!(reach(2, b) <= reach(3, b) + 1e-12);
        }
        for &k in &[1usize, 2, 3] {
            assert!(reach(k, 0.5) <= reach(k, 1.0) + 1e-12);
            assert!(reach(k, 1.0) <= reach(k, 2.0) + 1e-12);
        }
    }

    #[test]
    fn plan_validation() {
        assert!(JumpPlan::new(vec![vec![1.0]], vec![0.5], 1.0).is_ok());
        // non-increasing times
        assert!(JumpPlan::new(vec![vec![1.0], vec![1.0]], vec![0.5, 0.5], 1.0).is_err());
        // t = 0 not allowed
        assert!(JumpPlan::new(vec![vec![1.0]], vec![0.0], 1.0).is_err());
        // beyond the horizon
        assert!(JumpPlan::new(vec![vec![1.0]], vec![1.5], 1.0).is_err());
        // count mismatch
        assert!(JumpPlan::new(vec![vec![1.0]], vec![0.2, 0.4], 1.0).is_err());
        // ragged dimensions
        assert!(JumpPlan::new(vec![vec![1.0], vec![1.0, 2.0]], vec![0.2, 0.4], 1.0).is_err());
        // bad horizon
        assert!(JumpPlan::empty(0.0).is_err());
        // dimension mismatch against the fields is caught at use
        let plan = JumpPlan::new(vec![vec![1.0, 1.0]], vec![0.5], 1.0).unwrap();
        let cfg = IntegratorConfig::default();
        assert!(perturbed_path(&linear(), &[0.0], &plan, 1.0, &cfg).is_err());
    }
}
