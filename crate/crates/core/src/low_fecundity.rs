//! Low-fecundity problem below a recovery target.
//!
//! Starting below the target the planner either settles at the low steady
//! state along the low saddle path, or harvests austerely so the stock climbs
//! to the target in finite time and collects the high-fecundity value there.
//! The terminal harvest comes from the free-end-time transversality
//! condition, the austere branch is traced backwards from it, and the Skiba
//! point is where the two candidate values cross.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::{
    marginal_utility_unchecked, notional_steady_state, utility_second_unchecked, utility_unchecked, ModelParams, H_MIN,
};
use crate::saddle_path::{
    finalize_samples, geometric_grid, solve_saddle_with, trace_arm, ArmEnd, ArmSpec, BranchId,
    Direction, PolicyCurve, SolverOptions,
};

#[derive(Clone, Debug)]
pub struct LowSolution {
    pub target: f64,
    pub recoverable: bool,
    /// Harvest rate at the moment the target is reached.
    pub h_t_minus: Option<f64>,
    pub austere_curve: Option<Arc<PolicyCurve>>,
    /// Lowest stock of the austere branch when it ends on the stationary
    /// locus; 0 when it runs to the floor.
    pub x_prime: f64,
    pub low_saddle: Option<Arc<PolicyCurve>>,
    pub skiba: f64,
    /// Set when recovery is not worthwhile and `skiba` is only a placeholder
    /// equal to the target.
    pub skiba_undefined: bool,
    pub v_high_at_target: f64,
    pub x_floor: f64,
}

/// Outcome of the recoverability test, with the low saddle it needed.
#[derive(Clone, Debug)]
pub struct Recoverability {
    pub recoverable: bool,
    /// Low saddle on `[x_floor, target]`; absent when the low steady state is
    /// at or above the target.
    pub low_saddle: Option<PolicyCurve>,
    pub h_low_at_target: Option<f64>,
}

pub fn default_x_floor(target: f64, opts: &SolverOptions) -> f64 {
    opts.x_floor_rel * target
}

fn check_continuation_bound(p: &ModelParams, target: f64, v_high: f64) -> Result<()> {
    let bound = utility_unchecked(p.f_tilde(target), p.sigma) / p.rho;
    if v_high < bound - 1e-10 * (1.0 + bound.abs()) {
        return Err(Error::Consistency(format!(
            "continuation value {v_high} at target {target} is below the sustainable payoff {bound}"
        )));
    }
    Ok(())
}

pub fn check_recoverability(p: &ModelParams, target: f64, v_high_at_target: f64) -> Result<bool> {
    let opts = SolverOptions::default();
    Ok(assess_recoverability(p, target, v_high_at_target, default_x_floor(target, &opts), &opts)?.recoverable)
}

pub fn assess_recoverability(
    p: &ModelParams,
    target: f64,
    v_high_at_target: f64,
    x_floor: f64,
    opts: &SolverOptions,
) -> Result<Recoverability> {
    p.validate()?;
    if !(target > 0.0) {
        return Err(Error::InvalidParams(format!("target must be positive, got {target}")));
    }
    check_continuation_bound(p, target, v_high_at_target)?;
    let factor = p.low_factor();
    let ss = notional_steady_state(factor, p);
    if ss.x >= target {
        return Ok(Recoverability {
            recoverable: true,
            low_saddle: None,
            h_low_at_target: None,
        });
    }
    let saddle = solve_saddle_with(factor, p, x_floor, target, opts)?;
    let h = saddle.eval(target)?;
    Ok(Recoverability {
        recoverable: h <= p.f_tilde(target),
        low_saddle: Some(saddle),
        h_low_at_target: Some(h),
    })
}

/// Transversality residual `u(h) + u'(h) (pi f(T) - h) - rho V`.
pub fn transversality_residual(p: &ModelParams, target: f64, v_high_at_target: f64, h: f64) -> f64 {
    let c = p.pi * p.f_tilde(target);
    utility_unchecked(h, p.sigma) + marginal_utility_unchecked(h, p.sigma) * (c - h) - p.rho * v_high_at_target
}

/// Terminal harvest `h_T` in `(0, pi f(T))` solving the transversality
/// condition, by bisection.
pub fn terminal_harvest_root(p: &ModelParams, target: f64, v_high_at_target: f64) -> Result<f64> {
    p.validate()?;
    check_continuation_bound(p, target, v_high_at_target)?;
    let c = p.pi * p.f_tilde(target);
    let g = |h: f64| transversality_residual(p, target, v_high_at_target, h);

    let samples: Vec<f64> = (1..=64).map(|k| g(c * k as f64 / 65.0)).collect();
    if let Some(k) = samples.windows(2).position(|w| !(w[1] < w[0])) {
        return Err(Error::Consistency(format!(
            "transversality residual not strictly decreasing near h = {}",
            c * (k + 1) as f64 / 65.0
        )));
    }
    let g_hi = g(c);
    if g_hi >= 0.0 {
        return Err(Error::Bracket(format!(
            "g(pi f(target)) = {g_hi} >= 0; continuation value too small"
        )));
    }
    let (mut a, mut b) = (H_MIN, c);
    if g(a) <= 0.0 {
        return Err(Error::Bracket(format!("g(h_min) = {} <= 0", g(a))));
    }
    let tol = 1e-10 * (1.0 + (p.rho * v_high_at_target).abs());
    loop {
        let m = 0.5 * (a + b);
        let gm = g(m);
        if gm.abs() < tol {
            return Ok(m);
        }
        if m <= a || m >= b {
            return Err(Error::Bracket(format!(
                "bisection stalled at h = {m} with residual {gm:e}"
            )));
        }
        if gm > 0.0 {
            a = m;
        } else {
            b = m;
        }
    }
}

#[derive(Clone, Debug)]
pub struct AustereBranch {
    pub curve: PolicyCurve,
    /// Where the backward orbit met the stationary-stock locus, if it did.
    pub x_prime: Option<f64>,
}

/// Backward integration of the low-fecundity system from `(target, h_T)`.
pub fn solve_austere_branch(p: &ModelParams, target: f64, h_t: f64, x_floor: f64) -> Result<AustereBranch> {
    solve_austere_branch_with(p, target, h_t, x_floor, &SolverOptions::default())
}

pub fn solve_austere_branch_with(
    p: &ModelParams,
    target: f64,
    h_t: f64,
    x_floor: f64,
    opts: &SolverOptions,
) -> Result<AustereBranch> {
    let c = p.pi * p.f_tilde(target);
    if !(h_t > 0.0 && h_t < c) {
        return Err(Error::InvalidParams(format!(
            "terminal harvest {h_t} outside (0, {c})"
        )));
    }
    if !(x_floor > 0.0 && x_floor < target) {
        return Err(Error::InvalidParams(format!("floor {x_floor} outside (0, {target})")));
    }
    let mut grid: Vec<f64> = geometric_grid(x_floor, target, opts.grid_points)
        .into_iter()
        .filter(|&g| g < target && g > x_floor)
        .collect();
    grid.reverse();
    let trace = trace_arm(
        p,
        &ArmSpec {
            name: "austere recovery",
            factor: p.pi,
            seed: (target, h_t),
            direction: Direction::Down,
            x_stop: x_floor,
            grid: &grid,
            stop_at_locus: true,
            h_max: 10.0 * c,
        },
        opts,
    )?;
    let x_prime = match trace.end {
        ArmEnd::ReachedLocus { x, .. } => Some(x),
        ArmEnd::ReachedStop | ArmEnd::HarvestFloor { .. } => None,
        ArmEnd::HarvestCap { x, h } => {
            return Err(Error::ArmTerminated {
                arm: "austere recovery",
                x,
                h,
                reason: "harvest exceeded the cap",
            })
        }
    };
    let lo = trace.points.last().map(|pt| pt.0).unwrap_or(x_floor);
    let (xs, hs) = finalize_samples(trace.points, lo, target);
    let curve = PolicyCurve::new(BranchId::AustereRecovery, p.low_factor(), xs, hs)?;
    Ok(AustereBranch { curve, x_prime })
}

/// Skiba point separating the low-saddle basin from austere recovery.
///
/// Both values come from the HJB identity on their own branch. Their
/// difference has slope `u'(h_austere) - u'(h_saddle) > 0`, so it crosses
/// zero at most once.
pub fn skiba_point(p: &ModelParams, austere: &PolicyCurve, low_saddle: Option<&PolicyCurve>) -> Result<f64> {
    let Some(saddle) = low_saddle else {
        return Ok(0.0);
    };
    let lo = austere.x_lo().max(saddle.x_lo());
    let hi = austere.x_hi().min(saddle.x_hi());
    if !(hi > lo) {
        return Err(Error::Consistency(format!(
            "austere and low-saddle branches do not overlap ([{}, {}] vs [{}, {}])",
            austere.x_lo(),
            austere.x_hi(),
            saddle.x_lo(),
            saddle.x_hi()
        )));
    }
    let diff = |x: f64| austere.value_clamped(x, p) - saddle.value_clamped(x, p);
    // Below the low steady state the backward austere orbit is drawn onto
    // the low saddle and the two values agree to interpolation accuracy.
    // Differences smaller than the value error implied by a relative harvest
    // error of 1e-8 on either branch carry no sign information.
    let noise = |x: f64| value_sensitivity(p, austere, x) + value_sensitivity(p, saddle, x);

    let mut xs: Vec<f64> = austere
        .xs()
        .iter()
        .chain(saddle.xs())
        .copied()
        .filter(|&x| x >= lo && x < hi)
        .collect();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    xs.dedup();

    let mut crossings: Vec<(f64, f64)> = Vec::new();
    let mut first_sign: Option<bool> = None;
    let mut prev: Option<(f64, f64)> = None;
    for &x in &xs {
        let d = diff(x);
        if d.abs() <= noise(x) {
            continue;
        }
        first_sign.get_or_insert(d > 0.0);
        if let Some((xp, dp)) = prev {
            if (dp > 0.0) != (d > 0.0) {
                crossings.push((xp, x));
            }
        }
        prev = Some((x, d));
    }
    match crossings.len() {
        0 => {
            if first_sign.unwrap_or(true) {
                // austere dominates wherever it exists; below its lower end
                // only the saddle is available
                Ok(if austere.x_lo() > saddle.x_lo() { austere.x_lo() } else { 0.0 })
            } else {
                Err(Error::Consistency(format!(
                    "low-saddle value dominates austere recovery on all of [{lo}, {hi})"
                )))
            }
        }
        1 => {
            let (mut a, mut b) = crossings[0];
            let da = diff(a);
            let tol = 1e-8 * austere.x_hi();
            while b - a > tol {
                let m = 0.5 * (a + b);
                if (diff(m) > 0.0) == (da > 0.0) {
                    a = m;
                } else {
                    b = m;
                }
            }
            Ok(0.5 * (a + b))
        }
        _ => Err(Error::SingleCrossingViolated {
            crossings: crossings.iter().map(|c| 0.5 * (c.0 + c.1)).collect(),
        }),
    }
}

/// Change in the HJB value caused by a relative harvest error of 1e-8.
fn value_sensitivity(p: &ModelParams, curve: &PolicyCurve, x: f64) -> f64 {
    let h = curve.eval_clamped(x);
    let a = curve.factor().value();
    let dv_dh = utility_second_unchecked(h, p.sigma) * (a * p.f_tilde(x) - h) / p.rho;
    1e-8 * h * dv_dh.abs() + 1e-12 * curve.value_clamped(x, p).abs()
}

pub fn solve_low(p: &ModelParams, target: f64, v_high_at_target: f64, x_floor: f64) -> Result<LowSolution> {
    solve_low_with(p, target, v_high_at_target, x_floor, &SolverOptions::default())
}

pub fn solve_low_with(
    p: &ModelParams,
    target: f64,
    v_high_at_target: f64,
    x_floor: f64,
    opts: &SolverOptions,
) -> Result<LowSolution> {
    let rec = assess_recoverability(p, target, v_high_at_target, x_floor, opts)?;
    let low_saddle = rec.low_saddle.map(Arc::new);
    if !rec.recoverable {
        return Ok(LowSolution {
            target,
            recoverable: false,
            h_t_minus: None,
            austere_curve: None,
            x_prime: 0.0,
            low_saddle,
            skiba: target,
            skiba_undefined: true,
            v_high_at_target,
            x_floor,
        });
    }
    let h_t = terminal_harvest_root(p, target, v_high_at_target)?;
    let branch = solve_austere_branch_with(p, target, h_t, x_floor, opts)?;
    let skiba = skiba_point(p, &branch.curve, low_saddle.as_deref())?;
    Ok(LowSolution {
        target,
        recoverable: true,
        h_t_minus: Some(h_t),
        austere_curve: Some(Arc::new(branch.curve)),
        x_prime: branch.x_prime.unwrap_or(0.0),
        low_saddle,
        skiba,
        skiba_undefined: false,
        v_high_at_target,
        x_floor,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constrained_high::{default_x_max, solve_constrained_high, v_star};
    use crate::model::{cake_eating_policy, FecundityFactor};

    fn v_high(p: &ModelParams) -> f64 {
        let sol = solve_constrained_high(p, default_x_max(p)).unwrap();
        v_star(&sol, p.x_p).unwrap()
    }

    #[test]
    fn infeasible_low_steady_state_is_recoverable() {
        let p = ModelParams::default();
        assert!(check_recoverability(&p, 16.0, v_high(&p)).unwrap());
    }

    #[test]
    fn cake_eating_limit_of_recoverability() {
        // the low saddle approaches the cake-eating policy as pi -> 0
        let p = ModelParams::default().with_x_p(60.0).with_pi(1e-4);
        let ss = notional_steady_state(p.low_factor(), &p);
        let saddle = solve_saddle_with(p.low_factor(), &p, 1e-3, 60.0, &SolverOptions::default()).unwrap();
        let h = saddle.eval(60.0).unwrap();
        let cake = cake_eating_policy(60.0, &p);
        assert!(ss.x < 1e-3);
        assert!(((h - cake) / cake).abs() < 2e-2, "{h} vs {cake}");
        assert_eq!(
            check_recoverability(&p, 60.0, v_high(&p)).unwrap(),
            h <= p.f_tilde(60.0)
        );
    }

    #[test]
    fn transversality_root_properties() {
        for p in [
            ModelParams::default(),
            ModelParams::default().with_x_p(60.0).with_pi(0.2),
            ModelParams::default().with_x_p(150.0).with_pi(0.2).with_sigma(2.0),
        ] {
            let v = v_high(&p);
            let h = terminal_harvest_root(&p, p.x_p, v).unwrap();
            let c = p.pi * p.f_tilde(p.x_p);
            assert!(h > 0.0 && h < c);
            let g = transversality_residual(&p, p.x_p, v, h);
            assert!(g.abs() < 1e-10 * (1.0 + p.rho * v));
        }
    }

    #[test]
    fn continuation_below_bound_rejected() {
        let p = ModelParams::default();
        let bound = p.f_tilde(16.0).ln() / p.rho;
        assert!(terminal_harvest_root(&p, 16.0, bound - 1.0).is_err());
    }

    #[test]
    fn austere_branch_properties() {
        let p = ModelParams::default().with_x_p(60.0).with_pi(0.2);
        let v = v_high(&p);
        let h_t = terminal_harvest_root(&p, 60.0, v).unwrap();
        let b = solve_austere_branch(&p, 60.0, h_t, 60e-6).unwrap();
        assert_eq!(b.curve.x_hi(), 60.0);
        assert_eq!(b.curve.eval(60.0).unwrap(), h_t);
        for (&x, &h) in b.curve.xs().iter().zip(b.curve.hs()) {
            if x < 60.0 {
                assert!(h < p.pi * p.f_tilde(x));
            }
        }
        let ss = notional_steady_state(p.low_factor(), &p);
        if let Some(xp) = b.x_prime {
            assert!(xp >= ss.x);
        }
        let saddle = solve_saddle_with(p.low_factor(), &p, 60e-6, 60.0, &SolverOptions::default()).unwrap();
        for &x in b.curve.xs() {
            if x > b.curve.x_lo() && x > saddle.x_lo() {
                assert!(b.curve.eval(x).unwrap() < saddle.eval(x).unwrap());
            }
        }
    }

    #[test]
    fn skiba_separates_values() {
        let p = ModelParams::default().with_x_p(60.0).with_pi(0.2);
        let v = v_high(&p);
        let sol = solve_low(&p, 60.0, v, 60e-6).unwrap();
        assert!(sol.recoverable);
        assert!(sol.skiba > 0.0 && sol.skiba < 60.0);
        let a = sol.austere_curve.as_ref().unwrap();
        let s = sol.low_saddle.as_ref().unwrap();
        let lo = a.x_lo().max(s.x_lo());
        for k in 0..400 {
            let x = lo + (60.0 - lo) * k as f64 / 400.0;
            let d = a.value(x, &p).unwrap() - s.value(x, &p).unwrap();
            if x > sol.skiba * (1.0 + 1e-9) {
                assert!(d >= 0.0);
            } else if x < sol.skiba * (1.0 - 1e-9) {
                assert!(d <= 0.0);
            }
        }
        // value chain at the target
        let bound = p.f_tilde(60.0).ln() / p.rho;
        let h_low = s.eval(60.0).unwrap();
        assert!(v > bound);
        assert!(bound >= h_low.ln() / p.rho);
        assert!(h_low.ln() / p.rho > s.value(60.0, &p).unwrap());
    }

    #[test]
    fn no_saddle_means_trivial_skiba() {
        let p = ModelParams::default();
        let sol = solve_low(&p, 16.0, v_high(&p), 16e-6).unwrap();
        assert!(sol.low_saddle.is_none());
        assert_eq!(sol.skiba, 0.0);
        assert!(!sol.skiba_undefined);
        let _ = FecundityFactor::HIGH;
    }
}
