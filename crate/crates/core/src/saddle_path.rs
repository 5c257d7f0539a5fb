//! Saddle paths of the smooth problem and the policy curves built on them.
//!
//! Every branch is computed by integrating the canonical system
//!
//! ```text
//! x' = a f(x) - h
//! h' = (h / sigma) (a f'(x) - rho)
//! ```
//!
//! backwards in time from a seed point. Reversing time turns the stable
//! manifold of the steady state into an attracting set, so the saddle path is
//! traced by plain integration instead of shooting.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interp::MonotoneCubic;
use crate::model::{
    hamiltonian_at_foc, notional_steady_state, FecundityFactor, ModelParams, H_MIN,
};
use crate::ode::{Control, Dopri5, Step, Tolerances};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum BranchId {
    HighSaddle,
    LowSaddle,
    Saddle,
    HighInterior,
    HighBoundary,
    AustereRecovery,
}

impl BranchId {
    pub fn as_str(self) -> &'static str {
        match self {
            BranchId::HighSaddle => "high-saddle",
            BranchId::LowSaddle => "low-saddle",
            BranchId::Saddle => "saddle",
            BranchId::HighInterior => "high-interior",
            BranchId::HighBoundary => "high-boundary",
            BranchId::AustereRecovery => "austere-recovery",
        }
    }
}

impl fmt::Display for BranchId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BranchId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "high-saddle" => BranchId::HighSaddle,
            "low-saddle" => BranchId::LowSaddle,
            "saddle" => BranchId::Saddle,
            "high-interior" => BranchId::HighInterior,
            "high-boundary" => BranchId::HighBoundary,
            "austere-recovery" => BranchId::AustereRecovery,
            other => return Err(Error::Format(format!("unknown branch id `{other}`"))),
        })
    }
}

impl From<BranchId> for String {
    fn from(b: BranchId) -> String {
        b.as_str().to_string()
    }
}

impl TryFrom<String> for BranchId {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// Numerical settings shared by every branch solver.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Resampling points per integrated arm.
    pub grid_points: usize,
    /// Seed displacement from the steady state, relative to `x_hat`.
    pub seed_eps_rel: f64,
    /// Lower truncation of the low-fecundity domain, relative to the target.
    pub x_floor_rel: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-12,
            grid_points: 2048,
            seed_eps_rel: 1e-6,
            x_floor_rel: 1e-6,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        let ok = self.rtol > 0.0
            && self.atol > 0.0
            && self.grid_points >= 8
            && self.seed_eps_rel > 0.0
            && self.seed_eps_rel < 1e-2
            && self.x_floor_rel > 0.0
            && self.x_floor_rel < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParams(format!("invalid solver options {self:?}")))
        }
    }

    pub(crate) fn integrator(&self) -> Dopri5 {
        Dopri5::new(Tolerances {
            rtol: self.rtol,
            atol: self.atol,
        })
    }
}

/// A sampled branch of a policy function `h(x)`.
#[derive(Clone, Debug)]
pub struct PolicyCurve {
    branch: BranchId,
    factor: FecundityFactor,
    interp: MonotoneCubic,
}

impl PolicyCurve {
    pub fn new(branch: BranchId, factor: FecundityFactor, xs: Vec<f64>, hs: Vec<f64>) -> Result<Self> {
        if xs.len() < 2 || xs.len() != hs.len() {
            return Err(Error::Consistency(format!(
                "{branch} curve needs at least two samples, got {}",
                xs.len()
            )));
        }
        if let Some(w) = xs.windows(2).find(|w| !(w[1] > w[0])) {
            return Err(Error::Consistency(format!(
                "{branch} samples not strictly increasing near x = {}",
                w[0]
            )));
        }
        if let Some(h) = hs.iter().find(|h| !(**h > 0.0) || !h.is_finite()) {
            return Err(Error::Consistency(format!("{branch} sample has harvest {h}")));
        }
        Ok(Self {
            branch,
            factor,
            interp: MonotoneCubic::new(xs, hs),
        })
    }

    pub fn branch(&self) -> BranchId {
        self.branch
    }

    pub fn factor(&self) -> FecundityFactor {
        self.factor
    }

    pub fn x_lo(&self) -> f64 {
        self.interp.lo()
    }

    pub fn x_hi(&self) -> f64 {
        self.interp.hi()
    }

    pub fn xs(&self) -> &[f64] {
        self.interp.xs()
    }

    pub fn hs(&self) -> &[f64] {
        self.interp.ys()
    }

    pub fn len(&self) -> usize {
        self.xs().len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs().is_empty()
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.x_lo() && x <= self.x_hi()
    }

    pub fn relabel(mut self, branch: BranchId) -> Self {
        self.branch = branch;
        self
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        if !self.contains(x) {
            return Err(Error::Domain {
                x,
                lo: self.x_lo(),
                hi: self.x_hi(),
            });
        }
        Ok(self.interp.eval(x))
    }

    /// Evaluation with `x` clamped into the sampled domain.
    pub fn eval_clamped(&self, x: f64) -> f64 {
        self.interp.eval(x)
    }

    /// Value along the branch from the HJB identity
    /// `rho V(x) = H(x, h(x), u'(h(x)))`.
    pub fn value(&self, x: f64, p: &ModelParams) -> Result<f64> {
        let h = self.eval(x)?;
        Ok(hamiltonian_at_foc(x, h, self.factor.value(), p) / p.rho)
    }

    pub fn value_clamped(&self, x: f64, p: &ModelParams) -> f64 {
        let xc = x.clamp(self.x_lo(), self.x_hi());
        hamiltonian_at_foc(xc, self.interp.eval(xc), self.factor.value(), p) / p.rho
    }

    /// Three-point finite-difference slopes at interior samples, paired with
    /// the slope implied by the canonical equations.
    pub fn slope_check(&self, p: &ModelParams) -> Vec<SlopeSample> {
        let xs = self.xs();
        let hs = self.hs();
        (1..xs.len().saturating_sub(1))
            .map(|i| {
                let h1 = xs[i] - xs[i - 1];
                let h2 = xs[i + 1] - xs[i];
                let fd = -h2 / (h1 * (h1 + h2)) * hs[i - 1]
                    + (h2 - h1) / (h1 * h2) * hs[i]
                    + h1 / (h2 * (h1 + h2)) * hs[i + 1];
                SlopeSample {
                    x: xs[i],
                    h: hs[i],
                    finite_difference: fd,
                    canonical: policy_slope(xs[i], hs[i], self.factor, p),
                }
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SlopeSample {
    pub x: f64,
    pub h: f64,
    pub finite_difference: f64,
    pub canonical: f64,
}

impl SlopeSample {
    pub fn within_tolerance(&self) -> bool {
        (self.finite_difference - self.canonical).abs() <= (1e-4 * self.canonical.abs()).max(1e-8)
    }
}

/// `dh/dx` along a solution of the canonical equations.
pub fn policy_slope(x: f64, h: f64, factor: FecundityFactor, p: &ModelParams) -> f64 {
    let a = factor.value();
    h * (a * p.f_tilde_prime(x) - p.rho) / (p.sigma * (a * p.f_tilde(x) - h))
}

pub fn eval_policy(curve: &PolicyCurve, x: f64) -> Result<f64> {
    curve.eval(x)
}

pub fn policy_value(curve: &PolicyCurve, x: f64, factor: FecundityFactor, p: &ModelParams) -> Result<f64> {
    let h = curve.eval(x)?;
    Ok(hamiltonian_at_foc(x, h, factor.value(), p) / p.rho)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SteadyStateLinearization {
    pub x_hat: f64,
    pub h_hat: f64,
    pub stable_eigenvalue: f64,
    pub unstable_eigenvalue: f64,
    /// `dh/dx` along the stable eigenvector.
    pub stable_slope: f64,
    pub determinant: f64,
}

/// Eigenstructure of the canonical system at the notional steady state.
/// The Jacobian is `[[rho, -1], [h a f''(x) / sigma, 0]]`.
pub fn linearize_at_steady_state(factor: FecundityFactor, p: &ModelParams) -> SteadyStateLinearization {
    let ss = notional_steady_state(factor, p);
    let j21 = ss.h * factor.value() * p.f_tilde_second(ss.x) / p.sigma;
    let trace = p.rho;
    let det = j21;
    let disc = (trace * trace - 4.0 * det).sqrt();
    let stable = 0.5 * (trace - disc);
    let unstable = 0.5 * (trace + disc);
    SteadyStateLinearization {
        x_hat: ss.x,
        h_hat: ss.h,
        stable_eigenvalue: stable,
        unstable_eigenvalue: unstable,
        stable_slope: p.rho - stable,
        determinant: det,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Direction {
    Down,
    Up,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum ArmEnd {
    ReachedStop,
    ReachedLocus { x: f64, h: f64 },
    HarvestFloor { x: f64, h: f64 },
    HarvestCap { x: f64, h: f64 },
}

pub(crate) struct ArmTrace {
    /// Emitted points in traversal order, seed first.
    pub points: Vec<(f64, f64)>,
    pub end: ArmEnd,
}

pub(crate) struct ArmSpec<'a> {
    pub name: &'static str,
    pub factor: f64,
    pub seed: (f64, f64),
    pub direction: Direction,
    pub x_stop: f64,
    /// Resampling abscissae in traversal order.
    pub grid: &'a [f64],
    pub stop_at_locus: bool,
    pub h_max: f64,
}

/// Integrates the time-reversed canonical system from `spec.seed` and
/// resamples the orbit at `spec.grid`.
pub(crate) fn trace_arm(p: &ModelParams, spec: &ArmSpec<'_>, opts: &SolverOptions) -> Result<ArmTrace> {
    let a = spec.factor;
    let sigma = p.sigma;
    let rho = p.rho;
    let pp = *p;
    let rhs = move |_t: f64, y: &[f64; 2]| {
        let x = y[0].max(1e-300);
        let h = y[1];
        [-(a * pp.f_tilde(x) - h), -(h / sigma) * (a * pp.f_tilde_prime(x) - rho)]
    };

    let locus_gap = |y: &[f64; 2]| (1.0 - 1e-9) * a * p.f_tilde(y[0].max(0.0)) - y[1];
    let past_stop = |x: f64| match spec.direction {
        Direction::Down => x <= spec.x_stop,
        Direction::Up => x >= spec.x_stop,
    };

    let mut points = vec![spec.seed];
    let mut next_grid = 0usize;
    let mut end: Option<ArmEnd> = None;

    let emit_until = |step: &Step<2>, t_end: f64, points: &mut Vec<(f64, f64)>, next_grid: &mut usize| {
        let x_end = if t_end == step.t1 { step.y1[0] } else { step.dense(t_end)[0] };
        while *next_grid < spec.grid.len() {
            let g = spec.grid[*next_grid];
            let reached = match spec.direction {
                Direction::Down => g >= x_end,
                Direction::Up => g <= x_end,
            };
            if !reached {
                break;
            }
            let (_, y) = step.locate_in(|y| y[0] - g, step.t0, t_end);
            points.push((g, y[1]));
            *next_grid += 1;
        }
    };

    let t_horizon = 1e7 / rho;
    let integrator = opts.integrator();
    integrator.integrate(spec.name, rhs, 0.0, spec.seed.into(), t_horizon, |step| {
        let y1 = step.y1;
        // earliest terminal condition inside this step
        let mut candidates: Vec<(f64, [f64; 2], ArmEnd)> = Vec::new();
        if past_stop(y1[0]) {
            let (t, y) = step.locate(|y| y[0] - spec.x_stop, 0.0);
            candidates.push((t, y, ArmEnd::ReachedStop));
        }
        if spec.stop_at_locus && locus_gap(&y1) <= 0.0 {
            let (t, y) = step.locate(locus_gap, 0.0);
            candidates.push((t, y, ArmEnd::ReachedLocus { x: y[0], h: y[1] }));
        }
        if y1[1] <= H_MIN {
            let (t, y) = step.locate(|y| y[1] - H_MIN, 0.0);
            candidates.push((t, y, ArmEnd::HarvestFloor { x: y[0], h: y[1] }));
        }
        if y1[1] >= spec.h_max {
            let (t, y) = step.locate(|y| y[1] - spec.h_max, 0.0);
            candidates.push((t, y, ArmEnd::HarvestCap { x: y[0], h: y[1] }));
        }
        if let Some((t, y, kind)) = candidates
            .into_iter()
            .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap())
        {
            emit_until(step, t, &mut points, &mut next_grid);
            let x_end = if kind == ArmEnd::ReachedStop { spec.x_stop } else { y[0] };
            points.push((x_end, y[1]));
            end = Some(kind);
            return Control::Stop;
        }
        emit_until(step, step.t1, &mut points, &mut next_grid);
        Control::Continue
    })?;

    let end = end.ok_or_else(|| Error::Integration {
        context: spec.name.to_string(),
        t: t_horizon,
        state: points.last().map(|&(x, h)| vec![x, h]).unwrap_or_default(),
        reason: "arm did not terminate within the integration horizon".into(),
    })?;
    Ok(ArmTrace { points, end })
}

/// `n` geometrically spaced points on `[lo, hi]`, endpoints included.
pub(crate) fn geometric_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (llo, lhi) = (lo.ln(), hi.ln());
    let mut g: Vec<f64> = (0..n)
        .map(|k| (llo + (lhi - llo) * k as f64 / (n - 1) as f64).exp())
        .collect();
    g[0] = lo;
    g[n - 1] = hi;
    g
}

/// Sorts by `x`, drops duplicates and anything outside `[lo, hi]`.
pub(crate) fn finalize_samples(mut pts: Vec<(f64, f64)>, lo: f64, hi: f64) -> (Vec<f64>, Vec<f64>) {
    pts.retain(|&(x, _)| x >= lo && x <= hi);
    pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut xs: Vec<f64> = Vec::with_capacity(pts.len());
    let mut hs: Vec<f64> = Vec::with_capacity(pts.len());
    for (x, h) in pts {
        if let Some(&last) = xs.last() {
            if x - last <= 1e-13 * x.abs().max(1e-300) {
                continue;
            }
        }
        xs.push(x);
        hs.push(h);
    }
    (xs, hs)
}

fn default_branch(factor: FecundityFactor, p: &ModelParams) -> BranchId {
    if factor.value() == 1.0 {
        BranchId::HighSaddle
    } else if factor.value() == p.pi {
        BranchId::LowSaddle
    } else {
        BranchId::Saddle
    }
}

pub fn solve_saddle(factor: FecundityFactor, p: &ModelParams, x_lo: f64, x_hi: f64) -> Result<PolicyCurve> {
    solve_saddle_with(factor, p, x_lo, x_hi, &SolverOptions::default())
}

/// Saddle path through the notional steady state for `factor`, sampled on
/// `[x_lo, x_hi]`. The domain need not contain the steady state; only the
/// arms that reach it are integrated.
pub fn solve_saddle_with(
    factor: FecundityFactor,
    p: &ModelParams,
    x_lo: f64,
    x_hi: f64,
    opts: &SolverOptions,
) -> Result<PolicyCurve> {
    p.validate()?;
    opts.validate()?;
    if !(x_lo > 0.0 && x_hi > x_lo) {
        return Err(Error::InvalidParams(format!(
            "saddle domain must satisfy 0 < x_lo < x_hi, got [{x_lo}, {x_hi}]"
        )));
    }
    let lin = linearize_at_steady_state(factor, p);
    let (x_hat, h_hat) = (lin.x_hat, lin.h_hat);
    let eps = opts.seed_eps_rel * x_hat;
    let h_max = 10.0 * h_hat * (x_hi / x_hat).max(1.0);
    let n = opts.grid_points;

    let mut pts: Vec<(f64, f64)> = Vec::new();
    if x_lo <= x_hat && x_hat <= x_hi {
        pts.push((x_hat, h_hat));
    }

    if x_lo < x_hat - eps {
        let seed = (x_hat - eps, h_hat - eps * lin.stable_slope);
        let top = x_hi.min(x_hat);
        let mut grid: Vec<f64> = geometric_grid(x_lo, top, n)
            .into_iter()
            .filter(|&g| g < seed.0 && g > x_lo)
            .collect();
        grid.reverse();
        let trace = trace_arm(
            p,
            &ArmSpec {
                name: "lower saddle",
                factor: factor.value(),
                seed,
                direction: Direction::Down,
                x_stop: x_lo,
                grid: &grid,
                stop_at_locus: false,
                h_max,
            },
            opts,
        )?;
        check_arm_end("lower", &trace)?;
        pts.extend(trace.points);
    }

    if x_hi > x_hat + eps {
        let seed = (x_hat + eps, h_hat + eps * lin.stable_slope);
        let bottom = x_lo.max(x_hat);
        let grid: Vec<f64> = geometric_grid(bottom, x_hi, n)
            .into_iter()
            .filter(|&g| g > seed.0 && g < x_hi)
            .collect();
        let trace = trace_arm(
            p,
            &ArmSpec {
                name: "upper saddle",
                factor: factor.value(),
                seed,
                direction: Direction::Up,
                x_stop: x_hi,
                grid: &grid,
                stop_at_locus: false,
                h_max,
            },
            opts,
        )?;
        check_arm_end("upper", &trace)?;
        pts.extend(trace.points);
    }

    let (xs, hs) = finalize_samples(pts, x_lo, x_hi);
    PolicyCurve::new(default_branch(factor, p), factor, xs, hs)
}

fn check_arm_end(arm: &'static str, trace: &ArmTrace) -> Result<()> {
    match trace.end {
        ArmEnd::ReachedStop => Ok(()),
        ArmEnd::HarvestFloor { x, h } => Err(Error::ArmTerminated {
            arm,
            x,
            h,
            reason: "harvest fell to the floor",
        }),
        ArmEnd::HarvestCap { x, h } => Err(Error::ArmTerminated {
            arm,
            x,
            h,
            reason: "harvest exceeded the cap",
        }),
        ArmEnd::ReachedLocus { x, h } => Err(Error::ArmTerminated {
            arm,
            x,
            h,
            reason: "orbit reached the stationary-stock locus",
        }),
    }
}
