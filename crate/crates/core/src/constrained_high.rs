//! High-fecundity problem with the stock held at or above the tipping point.
//!
//! If the notional high steady state lies above the tipping point the
//! constraint never binds and the solution is the ordinary saddle path.
//! Otherwise the optimal path runs down to the tipping point and stays there
//! harvesting exactly the recruitment, so the branch is traced backwards
//! from `(x_p, f(x_p))`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{notional_steady_state, utility_unchecked, FecundityFactor, ModelParams, SteadyState};
use crate::saddle_path::{
    finalize_samples, geometric_grid, solve_saddle_with, trace_arm, ArmEnd, ArmSpec, BranchId,
    Direction, PolicyCurve, SolverOptions,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum HighRegime {
    Interior,
    Boundary,
}

#[derive(Clone, Debug)]
pub struct HighSolution {
    pub regime: HighRegime,
    pub curve: Arc<PolicyCurve>,
    pub steady_state: SteadyState,
    params: ModelParams,
}

impl HighSolution {
    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn policy_at(&self, x: f64) -> Result<f64> {
        self.curve.eval(x)
    }

    pub fn value_at(&self, x: f64) -> Result<f64> {
        self.curve.value(x, &self.params)
    }

    /// `u(f(x_p)) / rho`, the payoff of sitting at the tipping point forever.
    pub fn boundary_payoff(&self) -> f64 {
        let p = &self.params;
        utility_unchecked(p.f_tilde(p.x_p), p.sigma) / p.rho
    }
}

/// Default upper end of the high-fecundity domain: `4 * max(x_hat, x_p)`.
pub fn default_x_max(p: &ModelParams) -> f64 {
    4.0 * notional_steady_state(FecundityFactor::HIGH, p).x.max(p.x_p)
}

pub fn solve_constrained_high(p: &ModelParams, x_max: f64) -> Result<HighSolution> {
    solve_constrained_high_with(p, x_max, &SolverOptions::default())
}

pub fn solve_constrained_high_with(p: &ModelParams, x_max: f64, opts: &SolverOptions) -> Result<HighSolution> {
    p.validate()?;
    if !(x_max > p.x_p) {
        return Err(Error::InvalidParams(format!(
            "x_max = {x_max} must exceed x_p = {}",
            p.x_p
        )));
    }
    let ss = notional_steady_state(FecundityFactor::HIGH, p);
    if ss.x >= p.x_p {
        let curve = solve_saddle_with(FecundityFactor::HIGH, p, p.x_p, x_max, opts)?
            .relabel(BranchId::HighInterior);
        return Ok(HighSolution {
            regime: HighRegime::Interior,
            curve: Arc::new(curve),
            steady_state: ss,
            params: *p,
        });
    }

    let seed = (p.x_p, p.f_tilde(p.x_p));
    let grid: Vec<f64> = geometric_grid(p.x_p, x_max, opts.grid_points)
        .into_iter()
        .filter(|&g| g > p.x_p && g < x_max)
        .collect();
    let trace = trace_arm(
        p,
        &ArmSpec {
            name: "high boundary",
            factor: 1.0,
            seed,
            direction: Direction::Up,
            x_stop: x_max,
            grid: &grid,
            stop_at_locus: false,
            h_max: 10.0 * ss.h * (x_max / ss.x).max(1.0),
        },
        opts,
    )?;
    if let ArmEnd::HarvestCap { x, h } | ArmEnd::HarvestFloor { x, h } | ArmEnd::ReachedLocus { x, h } = trace.end {
        return Err(Error::ArmTerminated {
            arm: "high boundary",
            x,
            h,
            reason: "left the admissible harvest band before x_max",
        });
    }
    let (xs, hs) = finalize_samples(trace.points, p.x_p, x_max);
    let curve = PolicyCurve::new(BranchId::HighBoundary, FecundityFactor::HIGH, xs, hs)?;
    Ok(HighSolution {
        regime: HighRegime::Boundary,
        curve: Arc::new(curve),
        steady_state: SteadyState { x: seed.0, h: seed.1 },
        params: *p,
    })
}

/// Value of the constrained high problem at `x >= x_p`.
pub fn v_star(sol: &HighSolution, x: f64) -> Result<f64> {
    sol.value_at(x)
}
