//! Bandit convex optimization on small synthetic objectives with known
//! optima: regret curves for projected two-point descent and Monte-Carlo
//! diagnostics of the one- and two-point estimators.
//!
//! The lab minimizes, so regret `R(T) = Σ_t f(z_t) − f(z*)` is nonnegative.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradest::{opge_estimate, tpge_along};
use crate::projections::{project_l2, sample_unit_sphere_l2};
use crate::rng::RandomSource;
use crate::tensor::{lp_norm_unchecked, NormKind};

/// Highest dimension the lab accepts.
pub const MAX_LAB_DIM: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Objective {
    /// `||z − z*||² / 2`.
    Quadratic,
    /// `max_i (a_i·z + b_i)`.
    PiecewiseLinear { slopes: Vec<Vec<f64>>, offsets: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexTestbed {
    pub objective: Objective,
    /// Radius of the l2 ball the iterates live in.
    pub radius: f64,
    pub optimum: Vec<f64>,
    pub optimum_value: f64,
    /// Lipschitz constant of the objective on the domain ball.
    pub lipschitz: f64,
    /// Constant added to every objective value; moves neither the optimum
    /// nor any difference of values.
    pub shift: f64,
    pub start: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(v: &[f64]) -> f64 {
    lp_norm_unchecked(v, NormKind::L2)
}

/// Boundary point of the ball diametrically opposite `centre`'s direction,
/// or along the first axis if `centre` is the origin.
fn far_start(centre: &[f64], radius: f64) -> Vec<f64> {
    let n = norm2(centre);
    if n == 0.0 {
        let mut s = vec![0.0; centre.len()];
        s[0] = radius;
        s
    } else {
        centre.iter().map(|c| -radius * c / n).collect()
    }
}

fn check_domain(centre: &[f64], radius: f64) -> Result<()> {
    if centre.is_empty() || centre.len() > MAX_LAB_DIM {
        return Err(Error::InvalidArgument(format!(
            "lab dimension must be in 1..={MAX_LAB_DIM}, got {}",
            centre.len()
        )));
    }
    if !(radius > 0.0) || !(norm2(centre) < radius) {
        return Err(Error::InvalidArgument("optimum must lie strictly inside the domain ball".into()));
    }
    Ok(())
}

impl ConvexTestbed {
    /// `||z − centre||² / 2` on the ball of the given radius; `Ĉ = R + ||z*||`.
    pub fn quadratic(centre: Vec<f64>, radius: f64) -> Result<Self> {
        check_domain(&centre, radius)?;
        Ok(Self {
            objective: Objective::Quadratic,
            radius,
            lipschitz: radius + norm2(&centre),
            start: far_start(&centre, radius),
            optimum: centre,
            optimum_value: 0.0,
            shift: 0.0,
        })
    }

    /// `||z − centre||_∞` written as a maximum of `2N` affine pieces; `Ĉ = 1`.
    pub fn piecewise_linear(centre: Vec<f64>, radius: f64) -> Result<Self> {
        check_domain(&centre, radius)?;
        let n = centre.len();
        let mut slopes = Vec::with_capacity(2 * n);
        let mut offsets = Vec::with_capacity(2 * n);
        for i in 0..n {
            for sign in [1.0, -1.0] {
                let mut a = vec![0.0; n];
                a[i] = sign;
                offsets.push(-sign * centre[i]);
                slopes.push(a);
            }
        }
        let lipschitz = slopes.iter().map(|a| norm2(a)).fold(0.0, f64::max);
        Ok(Self {
            objective: Objective::PiecewiseLinear { slopes, offsets },
            radius,
            lipschitz,
            start: far_start(&centre, radius),
            optimum: centre,
            optimum_value: 0.0,
            shift: 0.0,
        })
    }

    pub fn with_start(mut self, start: Vec<f64>) -> Result<Self> {
        if start.len() != self.dim() || norm2(&start) > self.radius * (1.0 + 1e-12) {
            return Err(Error::InvalidArgument("start must be a point of the domain ball".into()));
        }
        self.start = start;
        Ok(self)
    }

    pub fn with_shift(mut self, shift: f64) -> Self {
        self.optimum_value += shift - self.shift;
        self.shift = shift;
        self
    }

    pub fn dim(&self) -> usize {
        self.optimum.len()
    }

    pub fn value(&self, z: &[f64]) -> f64 {
        self.shift
            + match &self.objective {
                Objective::Quadratic => {
                    0.5 * z.iter().zip(&self.optimum).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
                }
                Objective::PiecewiseLinear { slopes, offsets } => slopes
                    .iter()
                    .zip(offsets)
                    .map(|(a, b)| dot(a, z) + b)
                    .fold(f64::NEG_INFINITY, f64::max),
            }
    }

    /// Gradient, or for the piecewise-linear objective the slope of the
    /// first active piece.
    pub fn gradient(&self, z: &[f64]) -> Vec<f64> {
        match &self.objective {
            Objective::Quadratic => z.iter().zip(&self.optimum).map(|(a, b)| a - b).collect(),
            Objective::PiecewiseLinear { slopes, offsets } => {
                let mut best = 0;
                let mut best_v = f64::NEG_INFINITY;
                for (i, (a, b)) in slopes.iter().zip(offsets).enumerate() {
                    let v = dot(a, z) + b;
                    if v > best_v {
                        best_v = v;
                        best = i;
                    }
                }
                slopes[best].clone()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StepSchedule {
    /// `α = √N / (2Ĉ√T)`, `γ = N^{3/2} / (6√T)`.
    Theoretical,
    Fixed { alpha: f64, gamma: f64 },
}

impl StepSchedule {
    /// `(α, γ)` for an `n`-dimensional testbed and horizon `T`.
    pub fn resolve(&self, testbed: &ConvexTestbed, rounds: usize) -> (f64, f64) {
        match *self {
            StepSchedule::Theoretical => {
                let n = testbed.dim() as f64;
                let rt = (rounds as f64).sqrt();
                (n.sqrt() / (2.0 * testbed.lipschitz * rt), n.powf(1.5) / (6.0 * rt))
            }
            StepSchedule::Fixed { alpha, gamma } => (alpha, gamma),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabRound {
    /// 1-based round index.
    pub round: usize,
    pub value: f64,
    pub cumulative_regret: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegretRun {
    pub rounds: Vec<LabRound>,
    pub alpha: f64,
    pub gamma: f64,
    /// Largest iterate norm seen.
    pub max_iterate_norm: f64,
}

impl RegretRun {
    pub fn regret(&self) -> f64 {
        self.rounds.last().map_or(0.0, |r| r.cumulative_regret)
    }

    pub fn max_grad_norm(&self) -> f64 {
        self.rounds.iter().map(|r| r.grad_norm).fold(0.0, f64::max)
    }
}

/// Projected bandit gradient descent on the testbed for `rounds` rounds.
pub fn run_regret(
    testbed: &ConvexTestbed,
    rounds: usize,
    schedule: StepSchedule,
    rng: &RandomSource,
) -> Result<RegretRun> {
    if rounds < 10 {
        return Err(Error::InvalidArgument(format!("regret runs need T >= 10, got {rounds}")));
    }
    let (alpha, gamma) = schedule.resolve(testbed, rounds);
    if !(alpha > 0.0) || !(gamma > 0.0) {
        return Err(Error::InvalidArgument("alpha and gamma must be > 0".into()));
    }
    let mut r = rng.rng();
    let mut z = testbed.start.clone();
    let mut cumulative = 0.0;
    let mut out = Vec::with_capacity(rounds);
    let mut max_norm = norm2(&z);
    for t in 0..rounds {
        let value = testbed.value(&z);
        cumulative += value - testbed.optimum_value;
        let u = sample_unit_sphere_l2(&mut r, z.len());
        let est = tpge_along(|p| Ok(testbed.value(p)), &z, gamma, &u)?;
        out.push(LabRound {
            round: t + 1,
            value,
            cumulative_regret: cumulative,
            grad_norm: est.norm(),
        });
        let stepped: Vec<f64> = z.iter().zip(&est.vector).map(|(a, g)| a - alpha * g).collect();
        z = project_l2(&stepped, testbed.radius)?;
        max_norm = max_norm.max(norm2(&z));
    }
    Ok(RegretRun {
        rounds: out,
        alpha,
        gamma,
        max_iterate_norm: max_norm,
    })
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 || points.iter().any(|&(x, y)| !(x > 0.0) || !(y > 0.0)) {
        return Err(Error::InvalidArgument("slope fit needs >= 2 points with positive coordinates".into()));
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("slope fit needs distinct x values".into()));
    }
    Ok(sxy / sxx)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegretSweep {
    /// `(T, R(T))` per horizon, in grid order.
    pub points: Vec<(usize, f64)>,
    pub slope: f64,
    pub max_grad_norm: f64,
}

impl RegretSweep {
    /// `R(T)/T` strictly decreases along the grid.
    pub fn average_regret_decreasing(&self) -> bool {
        self.points
            .windows(2)
            .all(|w| w[1].1 / (w[1].0 as f64) < w[0].1 / (w[0].0 as f64))
    }
}

/// Independent runs over a grid of horizons, each with its own schedule,
/// plus the log-log slope through the final regrets.
pub fn regret_sweep(
    testbed: &ConvexTestbed,
    horizons: &[usize],
    schedule: StepSchedule,
    rng: &RandomSource,
) -> Result<RegretSweep> {
    let mut points = Vec::with_capacity(horizons.len());
    let mut max_grad_norm: f64 = 0.0;
    for (i, &t) in horizons.iter().enumerate() {
        let run = run_regret(testbed, t, schedule, &rng.split(i as u64))?;
        max_grad_norm = max_grad_norm.max(run.max_grad_norm());
        points.push((t, run.regret()));
    }
    let fit: Vec<(f64, f64)> = points.iter().map(|&(t, r)| (t as f64, r)).collect();
    Ok(RegretSweep {
        slope: loglog_slope(&fit)?,
        points,
        max_grad_norm,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorStats {
    pub gamma: f64,
    pub samples: usize,
    pub tpge_max_norm: f64,
    pub opge_max_norm: f64,
    /// `N·Ĉ`.
    pub norm_bound: f64,
    /// Largest component-wise `|mean − ∇f|` of the two-point samples.
    pub tpge_mean_err: f64,
    /// Largest component-wise `|mean − ∇f| / standard error`.
    pub tpge_mean_err_in_se: f64,
}

/// Samples both estimators at `point` for each `γ`. The point must keep
/// every probe inside the domain ball so that `Ĉ` applies.
pub fn estimator_diagnostics(
    testbed: &ConvexTestbed,
    point: &[f64],
    gammas: &[f64],
    samples: usize,
    rng: &RandomSource,
) -> Result<Vec<EstimatorStats>> {
    if samples < 1000 {
        return Err(Error::InvalidArgument(format!("diagnostics need >= 1000 samples, got {samples}")));
    }
    if point.len() != testbed.dim() {
        return Err(crate::error::shape_err(testbed.dim(), point.len()));
    }
    let n = point.len();
    let truth = testbed.gradient(point);
    let f = |p: &[f64]| Ok(testbed.value(p));
    let mut out = Vec::with_capacity(gammas.len());
    for (gi, &gamma) in gammas.iter().enumerate() {
        if norm2(point) + gamma > testbed.radius {
            return Err(Error::InvalidArgument(format!(
                "probes at gamma = {gamma} leave the domain ball"
            )));
        }
        let cell = rng.split(gi as u64);
        let mut tr = cell.derive("tpge").rng();
        let mut or = cell.derive("opge").rng();
        let mut sum = vec![0.0; n];
        let mut sum_sq = vec![0.0; n];
        let mut tpge_max: f64 = 0.0;
        let mut opge_max: f64 = 0.0;
        for _ in 0..samples {
            let u = sample_unit_sphere_l2(&mut tr, n);
            let t = tpge_along(f, point, gamma, &u)?;
            tpge_max = tpge_max.max(t.norm());
            for ((s, q), g) in sum.iter_mut().zip(sum_sq.iter_mut()).zip(&t.vector) {
                *s += g;
                *q += g * g;
            }
            opge_max = opge_max.max(opge_estimate(f, point, gamma, &mut or)?.norm());
        }
        let m = samples as f64;
        let mut err: f64 = 0.0;
        let mut err_se: f64 = 0.0;
        for i in 0..n {
            let mean = sum[i] / m;
            let var = ((sum_sq[i] - m * mean * mean) / (m - 1.0)).max(0.0);
            let se = (var / m).sqrt();
            let e = (mean - truth[i]).abs();
            err = err.max(e);
            err_se = err_se.max(if se > 0.0 { e / se } else if e == 0.0 { 0.0 } else { f64::INFINITY });
        }
        out.push(EstimatorStats {
            gamma,
            samples,
            tpge_max_norm: tpge_max,
            opge_max_norm: opge_max,
            norm_bound: n as f64 * testbed.lipschitz,
            tpge_mean_err: err,
            tpge_mean_err_in_se: err_se,
        });
    }
    Ok(out)
}

/// One line of the lab report; absent values print as empty cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabReportRow {
    pub t: usize,
    pub n: usize,
    pub regret: Option<f64>,
    pub slope_fit: Option<f64>,
    pub estimator: String,
    pub max_norm: Option<f64>,
    pub mean_err: Option<f64>,
}

pub const LAB_REPORT_HEADER: &str = "T,N,regret,slope_fit,estimator,max_norm,mean_err";

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn lab_report_csv(rows: &[LabReportRow]) -> String {
    let mut out = format!("{LAB_REPORT_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.t,
            r.n,
            cell(r.regret),
            cell(r.slope_fit),
            r.estimator,
            cell(r.max_norm),
            cell(r.mean_err)
        ));
    }
    out
}

/// Report rows for a sweep (one per horizon) and for diagnostics (two per
/// `γ`, with `T` holding the sample count).
pub fn lab_report_rows(n: usize, sweep: Option<&RegretSweep>, diags: &[EstimatorStats]) -> Vec<LabReportRow> {
    let mut rows = Vec::new();
    if let Some(s) = sweep {
        for &(t, r) in &s.points {
            rows.push(LabReportRow {
                t,
                n,
                regret: Some(r),
                slope_fit: Some(s.slope),
                estimator: "tpge".into(),
                max_norm: Some(s.max_grad_norm),
                mean_err: None,
            });
        }
    }
    for d in diags {
        rows.push(LabReportRow {
            t: d.samples,
            n,
            regret: None,
            slope_fit: None,
            estimator: format!("tpge@gamma={}", d.gamma),
            max_norm: Some(d.tpge_max_norm),
            mean_err: Some(d.tpge_mean_err),
        });
        rows.push(LabReportRow {
            t: d.samples,
            n,
            regret: None,
            slope_fit: None,
            estimator: format!("opge@gamma={}", d.gamma),
            max_norm: Some(d.opge_max_norm),
            mean_err: None,
        });
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn testbed_constants() {
        let q = ConvexTestbed::quadratic(vec![0.3, -0.4], 1.0).unwrap();
        assert!((q.lipschitz - 1.5).abs() < 1e-12);
        assert_eq!(q.value(&[0.3, -0.4]), 0.0);
        assert!((norm2(&q.start) - 1.0).abs() < 1e-12);
        let p = ConvexTestbed::piecewise_linear(vec![0.1, 0.2, 0.0], 1.0).unwrap();
        assert_eq!(p.lipschitz, 1.0);
        assert!((p.value(&[0.6, 0.2, -0.1]) - 0.5).abs() < 1e-12);
        assert!(ConvexTestbed::quadratic(vec![2.0], 1.0).is_err());
        let s = q.clone().with_shift(3.0);
        assert_eq!(s.optimum_value, 3.0);
        assert_eq!(s.value(&[0.3, -0.4]), 3.0);
    }

    #[test]
    fn optimum_start_has_zero_regret() {
        let tb = ConvexTestbed::quadratic(vec![0.0, 0.0], 1.0)
            .unwrap()
            .with_start(vec![0.0, 0.0])
            .unwrap();
        let run = run_regret(&tb, 1000, StepSchedule::Theoretical, &RandomSource::new(1)).unwrap();
        assert_eq!(run.regret(), 0.0);
    }

    #[test]
    fn iterates_stay_in_ball_and_runs_repeat() {
        let tb = ConvexTestbed::piecewise_linear(vec![0.2, -0.1], 1.0).unwrap();
        let sched = StepSchedule::Fixed { alpha: 0.5, gamma: 0.05 };
        let a = run_regret(&tb, 500, sched, &RandomSource::new(2)).unwrap();
        let b = run_regret(&tb, 500, sched, &RandomSource::new(2)).unwrap();
        assert_eq!(a, b);
        assert!(a.max_iterate_norm <= 1.0 + 1e-9);
    }

    #[test]
    fn slope_of_power_law() {
        let pts: Vec<(f64, f64)> = [10.0, 100.0, 1000.0].iter().map(|&t: &f64| (t, 3.0 * t.sqrt())).collect();
        assert!((loglog_slope(&pts).unwrap() - 0.5).abs() < 1e-12);
        assert!(loglog_slope(&pts[..1]).is_err());
    }

    #[test]
    fn short_runs_rejected() {
        let tb = ConvexTestbed::quadratic(vec![0.0], 1.0).unwrap();
        assert!(run_regret(&tb, 5, StepSchedule::Theoretical, &RandomSource::new(0)).is_err());
    }

    #[test]
    fn report_layout() {
        let rows = vec![LabReportRow {
            t: 10,
            n: 2,
            regret: Some(1.5),
            slope_fit: None,
            estimator: "tpge".into(),
            max_norm: None,
            mean_err: None,
        }];
        assert_eq!(lab_report_csv(&rows), format!("{LAB_REPORT_HEADER}\n10,2,1.5,,tpge,,\n"));
    }
}
