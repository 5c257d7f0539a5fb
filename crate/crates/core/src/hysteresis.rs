//! Hysteretic recruitment: fecundity collapses below `x_p` but only returns
//! once the stock climbs past the higher threshold `x_p_h`.
//!
//! The high state is solved exactly as without hysteresis (floor `x_p`). In
//! the low state the recovery target moves up to `x_p_h`, which makes
//! recovery costlier and pushes the Skiba point up.

use serde::{Deserialize, Serialize};

use crate::composite::{high_absorbing, interior_point, Regime};
use crate::constrained_high::{solve_constrained_high_with, v_star, HighSolution};
use crate::error::{Error, Result};
use crate::low_fecundity::{default_x_floor, solve_low_with, LowSolution};
use crate::model::{notional_steady_state, FecundityFactor, HysteresisState, ModelParams};
use crate::policy::{Dynamics, PiecewisePolicy, Segment};
use crate::saddle_path::SolverOptions;

/// After recovery at `x_p_h` the stock is spent down to `to`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PostRecovery {
    pub from: f64,
    pub to: f64,
}

#[derive(Clone, Debug)]
pub struct HystSolution {
    pub regime: Regime,
    pub high: HighSolution,
    pub low: LowSolution,
    /// Skiba point of the low state; `x_p_h` when recovery is not worthwhile.
    pub skiba_h: f64,
    /// A fall below `x_p` is never optimally reversed from just below `x_p`.
    pub permanent_collapse: bool,
    pub post_recovery: Option<PostRecovery>,
    pub policy: PiecewisePolicy,
    pub x_max: f64,
    pub warnings: Vec<String>,
}

impl HystSolution {
    pub fn params(&self) -> &ModelParams {
        self.policy.params()
    }
}

/// `4 * max(x_hat, x_p_h)`.
pub fn default_x_max_hysteretic(p: &ModelParams) -> Result<f64> {
    Ok(4.0 * notional_steady_state(FecundityFactor::HIGH, p).x.max(p.x_p_h()?))
}

pub fn solve_hysteretic(p: &ModelParams, x_max: f64) -> Result<HystSolution> {
    solve_hysteretic_with(p, x_max, &SolverOptions::default())
}

pub fn solve_hysteretic_with(p: &ModelParams, x_max: f64, opts: &SolverOptions) -> Result<HystSolution> {
    p.validate()?;
    let x_p_h = p.x_p_h()?;
    if x_max < x_p_h {
        return Err(Error::InvalidParams(format!(
            "x_max = {x_max} must be at least x_p_h = {x_p_h}"
        )));
    }
    let high = solve_constrained_high_with(p, x_max, opts)?;
    let v_target = v_star(&high, x_p_h)?;
    let x_floor = default_x_floor(x_p_h, opts);
    let low = solve_low_with(p, x_p_h, v_target, x_floor, opts)?;
    let regime = Regime::classify(high.regime, &low);
    let low_ss = notional_steady_state(p.low_factor(), p);
    let high_x = notional_steady_state(FecundityFactor::HIGH, p).x;

    let mut warnings = Vec::new();
    let mut low_table = Vec::new();
    let mut absorbing = vec![high_absorbing(&high, Some(HysteresisState::High))];
    let skiba_h;
    if regime == Regime::NoHighSteadyState {
        let saddle = low
            .low_saddle
            .clone()
            .ok_or_else(|| Error::Consistency("unrecoverable solution without a low saddle".into()))?;
        warnings.push(format!(
            "no recovery from the low state: low-saddle harvest {:.6e} at x_p_h exceeds f(x_p_h) = {:.6e}",
            saddle.eval(x_p_h)?,
            p.f_tilde(x_p_h)
        ));
        low_table.push(Segment {
            curve: saddle,
            lo: x_floor,
            hi: x_p_h,
        });
        absorbing.push(interior_point(low_ss, Some(HysteresisState::Low)));
        skiba_h = x_p_h;
    } else {
        skiba_h = low.skiba;
        let austere = low
            .austere_curve
            .clone()
            .ok_or_else(|| Error::Consistency("recoverable solution without austere branch".into()))?;
        if skiba_h > 0.0 {
            let saddle = low
                .low_saddle
                .clone()
                .ok_or_else(|| Error::Consistency("nonzero skiba without a low saddle".into()))?;
            low_table.push(Segment {
                curve: saddle,
                lo: x_floor,
                hi: skiba_h,
            });
            if low_ss.x < skiba_h {
                absorbing.push(interior_point(low_ss, Some(HysteresisState::Low)));
            }
        }
        let lo = if skiba_h > 0.0 { skiba_h } else { austere.x_lo() };
        low_table.push(Segment {
            curve: austere,
            lo,
            hi: x_p_h,
        });
    }
    let high_table = vec![Segment {
        curve: high.curve.clone(),
        lo: p.x_p,
        hi: x_max,
    }];

    let policy = PiecewisePolicy::new(*p, Dynamics::Hysteretic, vec![low_table, high_table], absorbing)?;
    let post_recovery = (high_x < x_p_h && regime != Regime::NoHighSteadyState).then(|| PostRecovery {
        from: x_p_h,
        to: high_x.max(p.x_p),
    });
    Ok(HystSolution {
        regime,
        permanent_collapse: skiba_h > p.x_p,
        high,
        low,
        skiba_h,
        post_recovery,
        policy,
        x_max,
        warnings,
    })
}

fn check_state(sol: &HystSolution, x: f64, s: HysteresisState) -> Result<()> {
    let p = sol.params();
    let x_p_h = p.x_p_h()?;
    match s {
        HysteresisState::High if x < p.x_p => Err(Error::Domain {
            x,
            lo: p.x_p,
            hi: sol.x_max,
        }),
        HysteresisState::Low if x >= x_p_h => Err(Error::Domain { x, lo: 0.0, hi: x_p_h }),
        _ => Ok(()),
    }
}

pub fn hysteretic_policy_at(sol: &HystSolution, x: f64, s: HysteresisState) -> Result<f64> {
    check_state(sol, x, s)?;
    sol.policy.policy_at(x, s)
}

pub fn hysteretic_value_at(sol: &HystSolution, x: f64, s: HysteresisState) -> Result<f64> {
    check_state(sol, x, s)?;
    sol.policy.value_at(x, s)
}
