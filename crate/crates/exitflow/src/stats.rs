//! Small numeric helpers shared across modules: compensated summation,
//! Kolmogorov–Smirnov statistics, log–log least squares, total-variation
//! distance, and a power-iteration operator norm.

/// Neumaier-compensated accumulator. Partial results from parallel batches
/// are always folded through one of these in a fixed order, so sums do not
/// depend on thread scheduling.
#[derive(Clone, Copy, Debug, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn compensated_total(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = CompensatedSum::new();
    for x in xs {
        acc.add(x);
    }
    acc.value()
}

/// Sample mean and its standard error.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    assert!(n >= 1, "mean_stderr needs at least one sample");
    let mean = compensated_total(xs.iter().copied()) / n as f64;
    if n == 1 {
        return (mean, f64::INFINITY);
    }
    let ss = compensated_total(xs.iter().map(|x| (x - mean) * (x - mean)));
    let var = ss / (n as f64 - 1.0);
    (mean, (var / n as f64).sqrt())
}

/// Euclidean norm.
pub fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn all_finite(x: &[f64]) -> bool {
    x.iter().all(|v| v.is_finite())
}

/// One-sample Kolmogorov–Smirnov statistic against a continuous CDF.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    assert!(!samples.is_empty(), "ks_statistic needs samples");
    let mut xs: Vec<f64> = samples.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).expect("non-comparable sample"));
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in xs.iter().enumerate() {
        let f = cdf(*x);
        d = d.max(f - i as f64 / n).max((i as f64 + 1.0) / n - f);
    }
    d
}

pub fn exp1_cdf(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        -(-x).exp_m1()
    }
}

/// Asymptotic KS critical value at the given significance level.
/// c(0.01) = 1.62762, c(0.05) = 1.35810, scaled by 1/sqrt(n).
pub fn ks_critical(n: usize, significance: f64) -> f64 {
    let c = ((2.0 / significance).ln() / 2.0).sqrt();
    c / (n as f64).sqrt()
}

/// Ordinary least squares of y against x; returns (slope, slope standard
/// error, intercept). Needs >= 3 points for the error estimate.
pub fn ols_line(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len();
    assert!(n >= 3, "ols_line needs at least 3 points");
    let nf = n as f64;
    let xbar = compensated_total(xs.iter().copied()) / nf;
    let ybar = compensated_total(ys.iter().copied()) / nf;
    let sxx = compensated_total(xs.iter().map(|x| (x - xbar) * (x - xbar)));
    let sxy = compensated_total(xs.iter().zip(ys).map(|(x, y)| (x - xbar) * (y - ybar)));
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let ss_res = compensated_total(
        xs.iter()
            .zip(ys)
            .map(|(x, y)| {
                let r = y - (intercept + slope * x);
                r * r
            }),
    );
    let se = (ss_res / (nf - 2.0) / sxx).sqrt();
    (slope, se, intercept)
}

/// Total-variation distance between two discrete distributions on the same
/// support: TV = (1/2) sum |p_i - q_i|.
pub fn tv_distance(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len());
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Largest singular value of a row-major `rows x cols` matrix via power
/// iteration on A^T A. Deterministic start vector; plenty for the small
/// diffusion matrices that show up here.
pub fn operator_norm(matrix: &[f64], rows: usize, cols: usize) -> f64 {
    assert_eq!(matrix.len(), rows * cols);
    if rows == 0 || cols == 0 {
        return 0.0;
    }
    if rows == 1 && cols == 1 {
        return matrix[0].abs();
    }
    let mut v = vec![1.0 / (cols as f64).sqrt(); cols];
    let mut av = vec![0.0; rows];
    let mut atav = vec![0.0; cols];
    let mut sigma = 0.0;
    for _ in 0..200 {
        for (r, slot) in av.iter_mut().enumerate() {
            *slot = (0..cols).map(|c| matrix[r * cols + c] * v[c]).sum();
        }
        for (c, slot) in atav.iter_mut().enumerate() {
            *slot = (0..rows).map(|r| matrix[r * cols + c] * av[r]).sum();
        }
        let nrm = norm2(&atav);
        if nrm == 0.0 {
            return 0.0;
        }
        for (slot, val) in v.iter_mut().zip(&atav) {
            *slot = val / nrm;
        }
        let new_sigma = norm2(&av);
        if (new_sigma - sigma).abs() <= 1e-14 * new_sigma.max(1.0) {
            break;
        }
        sigma = new_sigma;
    }
    // one more multiply so sigma reflects the final vector
    for (r, slot) in av.iter_mut().enumerate() {
        *slot = (0..cols).map(|c| matrix[r * cols + c] * v[c]).sum();
    }
    norm2(&av)
}

/// `count` i.i.d. U(0, horizon) draws, sorted ascending.
pub fn ordered_uniforms(rng: &mut impl rand::Rng, count: usize, horizon: f64) -> Vec<f64> {
    let mut ts: Vec<f64> = (0..count).map(|_| rng.gen::<f64>() * horizon).collect();
    ts.sort_by(|a, b| a.partial_cmp(b).expect("uniforms are finite"));
    ts
}

pub fn factorial(k: u32) -> f64 {
    (1..=k).map(|i| i as f64).product()
}
