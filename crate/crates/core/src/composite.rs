//! Full solution of the tipping problem: regime, Skiba point and the
//! spliced global policy.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::constrained_high::{solve_constrained_high_with, v_star, HighRegime, HighSolution};
use crate::error::{Error, Result};
use crate::low_fecundity::{default_x_floor, solve_low_with, LowSolution};
use crate::model::{notional_steady_state, FecundityFactor, HysteresisState, ModelParams, SteadyState};
use crate::policy::{AbsorbingPoint, Dynamics, PiecewisePolicy, Segment};
use crate::saddle_path::{geometric_grid, solve_saddle_with, PolicyCurve, SolverOptions};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    InteriorHighTrivialSkiba,
    InteriorHighWithSkiba,
    BoundaryHighTrivialSkiba,
    BoundaryHighWithSkiba,
    NoHighSteadyState,
}

impl Regime {
    pub const ALL: [Regime; 5] = [
        Regime::InteriorHighTrivialSkiba,
        Regime::InteriorHighWithSkiba,
        Regime::BoundaryHighTrivialSkiba,
        Regime::BoundaryHighWithSkiba,
        Regime::NoHighSteadyState,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Regime::InteriorHighTrivialSkiba => "InteriorHighTrivialSkiba",
            Regime::InteriorHighWithSkiba => "InteriorHighWithSkiba",
            Regime::BoundaryHighTrivialSkiba => "BoundaryHighTrivialSkiba",
            Regime::BoundaryHighWithSkiba => "BoundaryHighWithSkiba",
            Regime::NoHighSteadyState => "NoHighSteadyState",
        }
    }

    pub(crate) fn classify(high: HighRegime, low: &LowSolution) -> Regime {
        if !low.recoverable {
            return Regime::NoHighSteadyState;
        }
        match (high, low.skiba > 0.0) {
            (HighRegime::Interior, false) => Regime::InteriorHighTrivialSkiba,
            (HighRegime::Interior, true) => Regime::InteriorHighWithSkiba,
            (HighRegime::Boundary, false) => Regime::BoundaryHighTrivialSkiba,
            (HighRegime::Boundary, true) => Regime::BoundaryHighWithSkiba,
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Regime {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Regime::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| Error::Format(format!("unknown regime `{s}`")))
    }
}

/// Low saddle below the tipping point spliced with the high saddle at and
/// above it.
#[derive(Clone, Debug)]
pub struct StandardPolicy {
    pub low_saddle: Arc<PolicyCurve>,
    pub high_saddle: Arc<PolicyCurve>,
    pub x_p: f64,
}

impl StandardPolicy {
    pub fn build(p: &ModelParams, x_floor: f64, x_max: f64, opts: &SolverOptions) -> Result<Self> {
        let low = solve_saddle_with(p.low_factor(), p, x_floor, p.x_p, opts)?;
        let high = solve_saddle_with(FecundityFactor::HIGH, p, p.x_p, x_max, opts)?;
        Ok(Self {
            low_saddle: Arc::new(low),
            high_saddle: Arc::new(high),
            x_p: p.x_p,
        })
    }

    pub fn x_lo(&self) -> f64 {
        self.low_saddle.x_lo()
    }

    pub fn x_hi(&self) -> f64 {
        self.high_saddle.x_hi()
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        if x < self.x_p {
            self.low_saddle.eval(x)
        } else {
            self.high_saddle.eval(x)
        }
    }
}

/// Whether `candidate` harvests weakly less than the standard policy on
/// their common domain and strictly less somewhere.
pub fn is_austere(candidate: &PolicyCurve, reference: &StandardPolicy) -> Result<bool> {
    let lo = candidate.x_lo().max(reference.x_lo());
    let hi = candidate.x_hi().min(reference.x_hi());
    if !(hi > lo) {
        return Err(Error::InvalidParams(format!(
            "candidate domain [{}, {}] does not overlap the standard policy",
            candidate.x_lo(),
            candidate.x_hi()
        )));
    }
    let mut xs = geometric_grid(lo, hi, 512);
    xs.extend(candidate.xs().iter().copied().filter(|&x| x >= lo && x <= hi));
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    xs.dedup();
    let mut run = 0usize;
    let mut strict = false;
    for &x in &xs {
        let c = candidate.eval(x)?;
        let r = reference.eval(x)?;
        if c > r + 1e-9 * r.abs() {
            return Ok(false);
        }
        if c < r * (1.0 - 1e-9) {
            run += 1;
            if run >= 2 {
                strict = true;
            }
        } else {
            run = 0;
        }
    }
    Ok(strict)
}

#[derive(Clone, Debug)]
pub struct FullSolution {
    pub regime: Regime,
    /// Endogenous tipping point; 0 when trivial, `x_p` when recovery is not
    /// worthwhile.
    pub skiba: f64,
    pub high: HighSolution,
    pub low: LowSolution,
    pub policy: PiecewisePolicy,
    pub steady_state_high: Option<SteadyState>,
    pub steady_state_low: Option<SteadyState>,
    pub x_max: f64,
    pub warnings: Vec<String>,
}

impl FullSolution {
    pub fn params(&self) -> &ModelParams {
        self.policy.params()
    }
}

pub fn solve_full(p: &ModelParams, x_max: f64) -> Result<FullSolution> {
    solve_full_with(p, x_max, &SolverOptions::default())
}

pub fn solve_full_with(p: &ModelParams, x_max: f64, opts: &SolverOptions) -> Result<FullSolution> {
    let high = solve_constrained_high_with(p, x_max, opts)?;
    let v_target = v_star(&high, p.x_p)?;
    let x_floor = default_x_floor(p.x_p, opts);
    let low = solve_low_with(p, p.x_p, v_target, x_floor, opts)?;
    let regime = Regime::classify(high.regime, &low);
    let low_ss = notional_steady_state(p.low_factor(), p);

    let mut warnings = Vec::new();
    let mut segments = Vec::new();
    let mut absorbing = Vec::new();
    let (skiba, steady_state_high, steady_state_low);

    if regime == Regime::NoHighSteadyState {
        let saddle = low.low_saddle.clone().ok_or_else(|| {
            Error::Consistency("unrecoverable solution without a low saddle".into())
        })?;
        warnings.push(format!(
            "no high steady state: low-saddle harvest {:.6e} at x_p exceeds f(x_p) = {:.6e}; \
             only the low-fecundity policy below x_p is reported",
            saddle.eval(p.x_p)?,
            p.f_tilde(p.x_p)
        ));
        segments.push(Segment {
            curve: saddle,
            lo: x_floor,
            hi: p.x_p,
        });
        absorbing.push(interior_point(low_ss, None));
        skiba = p.x_p;
        steady_state_high = None;
        steady_state_low = Some(low_ss);
    } else {
        skiba = low.skiba;
        let austere = low
            .austere_curve
            .clone()
            .ok_or_else(|| Error::Consistency("recoverable solution without austere branch".into()))?;
        if skiba > 0.0 {
            let saddle = low
                .low_saddle
                .clone()
                .ok_or_else(|| Error::Consistency("nonzero skiba without a low saddle".into()))?;
            segments.push(Segment {
                curve: saddle,
                lo: x_floor,
                hi: skiba,
            });
            segments.push(Segment {
                curve: austere,
                lo: skiba,
                hi: p.x_p,
            });
            if low_ss.x < skiba {
                absorbing.push(interior_point(low_ss, None));
            }
            steady_state_low = Some(low_ss);
        } else {
            let lo = austere.x_lo();
            segments.push(Segment {
                curve: austere,
                lo,
                hi: p.x_p,
            });
            steady_state_low = None;
        }
        segments.push(Segment {
            curve: high.curve.clone(),
            lo: p.x_p,
            hi: x_max,
        });
        absorbing.push(high_absorbing(&high, None));
        steady_state_high = Some(high.steady_state);
    }

    let policy = PiecewisePolicy::new(*p, Dynamics::Tipping, vec![segments], absorbing)?;
    Ok(FullSolution {
        regime,
        skiba,
        high,
        low,
        policy,
        steady_state_high,
        steady_state_low,
        x_max,
        warnings,
    })
}

pub(crate) fn interior_point(ss: SteadyState, state: Option<HysteresisState>) -> AbsorbingPoint {
    AbsorbingPoint {
        x: ss.x,
        h: ss.h,
        state,
        boundary: false,
    }
}

pub(crate) fn high_absorbing(high: &HighSolution, state: Option<HysteresisState>) -> AbsorbingPoint {
    AbsorbingPoint {
        x: high.steady_state.x,
        h: high.steady_state.h,
        state,
        boundary: high.regime == HighRegime::Boundary,
    }
}

fn check_covered(sol: &FullSolution, x: f64) -> Result<()> {
    if sol.regime == Regime::NoHighSteadyState && x >= sol.params().x_p {
        return Err(Error::Unsupported(format!(
            "no policy above x_p in the {} regime (x = {x})",
            sol.regime
        )));
    }
    Ok(())
}

pub fn global_policy_at(sol: &FullSolution, x: f64) -> Result<f64> {
    check_covered(sol, x)?;
    sol.policy.policy_at(x, HysteresisState::High)
}

pub fn global_value(sol: &FullSolution, x: f64) -> Result<f64> {
    check_covered(sol, x)?;
    sol.policy.value_at(x, HysteresisState::High)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constrained_high::default_x_max;

    fn solve(p: &ModelParams) -> FullSolution {
        solve_full(p, default_x_max(p)).unwrap()
    }

    #[test]
    fn default_is_interior_trivial() {
        let p = ModelParams::default();
        let sol = solve(&p);
        assert_eq!(sol.regime, Regime::InteriorHighTrivialSkiba);
        assert_eq!(sol.skiba, 0.0);
        assert!(sol.steady_state_low.is_none());
        let ss = sol.steady_state_high.unwrap();
        assert!((ss.x - 100.0).abs() < 1e-9);
    }

    #[test]
    fn with_skiba_regimes() {
        let p = ModelParams::default().with_x_p(60.0).with_pi(0.2);
        let sol = solve(&p);
        assert_eq!(sol.regime, Regime::InteriorHighWithSkiba);
        assert!(sol.skiba > 0.0 && sol.skiba < 60.0);
        let ss = sol.steady_state_low.unwrap();
        assert!((ss.x - 4.0).abs() < 1e-9);

        let p = ModelParams::default().with_x_p(150.0).with_pi(0.2);
        let sol = solve(&p);
        assert_eq!(sol.regime, Regime::BoundaryHighWithSkiba);
        assert_eq!(sol.steady_state_high.unwrap().x, 150.0);
    }

    #[test]
    fn value_continuous_at_skiba_with_jumps_in_policy() {
        let p = ModelParams::default().with_x_p(60.0).with_pi(0.2);
        let sol = solve(&p);
        let k = sol.skiba;
        let below = sol.low.low_saddle.as_ref().unwrap().value(k, &p).unwrap();
        let above = sol.low.austere_curve.as_ref().unwrap().value(k, &p).unwrap();
        assert!(((below - above) / above).abs() < 1e-6);
        let h_below = global_policy_at(&sol, k * (1.0 - 1e-9)).unwrap();
        let h_at = global_policy_at(&sol, k).unwrap();
        assert!(h_below > h_at, "standard harvest should exceed austere at the skiba point");
        assert!(global_policy_at(&sol, 60.0).unwrap() > global_policy_at(&sol, 60.0 * (1.0 - 1e-12)).unwrap());
    }

    #[test]
    fn global_value_monotone_and_dominant() {
        for p in [
            ModelParams::default(),
            ModelParams::default().with_x_p(60.0).with_pi(0.2),
            ModelParams::default().with_x_p(150.0).with_pi(0.5),
        ] {
            let sol = solve(&p);
            let grid = geometric_grid(1e-2, sol.x_max, 512);
            let values: Vec<f64> = grid.iter().map(|&x| global_value(&sol, x).unwrap()).collect();
            for w in values.windows(2) {
                assert!(w[1] >= w[0] - 1e-12 * w[0].abs());
            }
            for (&x, &v) in grid.iter().zip(&values) {
                if x >= p.x_p {
                    continue;
                }
                for c in [sol.low.low_saddle.as_ref(), sol.low.austere_curve.as_ref()].into_iter().flatten() {
                    if c.contains(x) {
                        assert!(v >= c.value(x, &p).unwrap() - 1e-9 * v.abs());
                    }
                }
            }
        }
    }

    #[test]
    fn austerity_predicate() {
        let p = ModelParams::default().with_x_p(150.0).with_pi(0.2);
        let x_max = default_x_max(&p);
        let sol = solve_full(&p, x_max).unwrap();
        let std = StandardPolicy::build(&p, sol.low.x_floor, x_max, &SolverOptions::default()).unwrap();
        assert!(!is_austere(&std.high_saddle, &std).unwrap());
        assert!(!is_austere(&std.low_saddle, &std).unwrap());
        assert!(is_austere(&sol.high.curve, &std).unwrap());
        assert!(is_austere(sol.low.austere_curve.as_ref().unwrap(), &std).unwrap());
    }

    #[test]
    fn classification_ignores_x_max() {
        for p in [
            ModelParams::default(),
            ModelParams::default().with_x_p(60.0).with_pi(0.2),
            ModelParams::default().with_x_p(150.0).with_pi(0.2),
        ] {
            let base = default_x_max(&p);
            let a = solve_full(&p, base).unwrap();
            let b = solve_full(&p, 2.0 * base).unwrap();
            assert_eq!(a.regime, b.regime);
            assert!((a.skiba - b.skiba).abs() <= 1e-6 * p.x_p);
        }
    }

    #[test]
    fn no_policy_above_tipping_point_without_high_state() {
        let p = ModelParams::default().with_x_p(16.0).with_pi(0.9).with_rho(0.5);
        let sol = solve(&p);
        if sol.regime == Regime::NoHighSteadyState {
            assert!(matches!(global_policy_at(&sol, 20.0), Err(Error::Unsupported(_))));
            assert!(global_policy_at(&sol, 10.0).is_ok());
            assert!(!sol.warnings.is_empty());
        }
    }

    #[test]
    fn regime_names_round_trip() {
        for r in Regime::ALL {
            assert_eq!(r.as_str().parse::<Regime>().unwrap(), r);
        }
    }
}
