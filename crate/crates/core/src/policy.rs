//! Piecewise policy functions assembled from branch curves.
//!
//! A [`PiecewisePolicy`] is the common currency between the solvers, the
//! simulator and the file loader: it stores, for each hysteresis state, an
//! ordered list of half-open stock intervals and the curve that governs each
//! of them. Values are read off the governing curve with the HJB identity.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FecundityFactor, HysteresisState, ModelParams};
use crate::saddle_path::PolicyCurve;

/// Recruitment law the policy is meant to be run under.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Dynamics {
    /// `factor * f(x)` everywhere.
    Smooth { factor: f64 },
    Tipping,
    Hysteretic,
}

impl Dynamics {
    pub fn smooth(factor: FecundityFactor) -> Self {
        Dynamics::Smooth {
            factor: factor.value(),
        }
    }

    pub fn state_count(self) -> usize {
        match self {
            Dynamics::Hysteretic => 2,
            _ => 1,
        }
    }
}

/// A curve governing the stock interval `[lo, hi)`. The topmost segment of a
/// state also owns `hi`; the bottom segment extends down to zero by holding
/// the curve's lowest sample.
#[derive(Clone, Debug)]
pub struct Segment {
    pub curve: Arc<PolicyCurve>,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbsorbingPoint {
    pub x: f64,
    pub h: f64,
    /// Hysteresis state the point belongs to; `None` outside the hysteretic model.
    pub state: Option<HysteresisState>,
    /// Whether the point sits on the tipping boundary rather than at an
    /// interior steady state.
    pub boundary: bool,
}

#[derive(Clone, Debug)]
pub struct PiecewisePolicy {
    params: ModelParams,
    dynamics: Dynamics,
    states: Vec<Vec<Segment>>,
    absorbing: Vec<AbsorbingPoint>,
}

impl PiecewisePolicy {
    pub fn new(
        params: ModelParams,
        dynamics: Dynamics,
        states: Vec<Vec<Segment>>,
        absorbing: Vec<AbsorbingPoint>,
    ) -> Result<Self> {
        if states.len() != dynamics.state_count() {
            return Err(Error::Consistency(format!(
                "{:?} dynamics need {} segment tables, got {}",
                dynamics,
                dynamics.state_count(),
                states.len()
            )));
        }
        if matches!(dynamics, Dynamics::Hysteretic) {
            params.x_p_h()?;
        }
        for table in &states {
            if table.is_empty() {
                return Err(Error::Consistency("empty segment table".into()));
            }
            for seg in table {
                if !(seg.hi > seg.lo) {
                    return Err(Error::Consistency(format!(
                        "segment [{}, {}) of {} is empty",
                        seg.lo,
                        seg.hi,
                        seg.curve.branch()
                    )));
                }
            }
            for w in table.windows(2) {
                if w[0].hi != w[1].lo {
                    return Err(Error::Consistency(format!(
                        "segments not contiguous at {} / {}",
                        w[0].hi, w[1].lo
                    )));
                }
            }
        }
        Ok(Self {
            params,
            dynamics,
            states,
            absorbing,
        })
    }

    /// Policy made of one curve over its own domain, run under smooth
    /// dynamics with the curve's factor.
    pub fn single(curve: Arc<PolicyCurve>, params: ModelParams) -> Self {
        let (lo, hi) = (curve.x_lo(), curve.x_hi());
        let factor = curve.factor();
        Self {
            params,
            dynamics: Dynamics::smooth(factor),
            states: vec![vec![Segment { curve, lo, hi }]],
            absorbing: Vec::new(),
        }
    }

    pub fn with_absorbing(mut self, absorbing: Vec<AbsorbingPoint>) -> Self {
        self.absorbing = absorbing;
        self
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn dynamics(&self) -> Dynamics {
        self.dynamics
    }

    pub fn absorbing(&self) -> &[AbsorbingPoint] {
        &self.absorbing
    }

    fn table_index(&self, s: HysteresisState) -> usize {
        match self.dynamics {
            Dynamics::Hysteretic => s.index(),
            _ => 0,
        }
    }

    pub fn segments(&self, s: HysteresisState) -> &[Segment] {
        &self.states[self.table_index(s)]
    }

    /// Every segment table, indexed by state when hysteretic.
    pub fn tables(&self) -> &[Vec<Segment>] {
        &self.states
    }

    /// Index of the segment governing `(x, s)`.
    pub fn locate(&self, x: f64, s: HysteresisState) -> Result<usize> {
        if !(x > 0.0) {
            return Err(Error::NegativeStock(x));
        }
        let table = self.segments(s);
        let last = table.len() - 1;
        let top = table[last].hi;
        if x > top {
            return Err(Error::Domain {
                x,
                lo: table[0].lo,
                hi: top,
            });
        }
        if x == top {
            return Ok(last);
        }
        if x < table[0].lo {
            if self.is_open_below(s) {
                return Ok(0);
            }
            return Err(Error::Domain {
                x,
                lo: table[0].lo,
                hi: top,
            });
        }
        Ok(table.partition_point(|seg| seg.lo <= x) - 1)
    }

    /// Whether the bottom segment of `s` extends down to zero stock.
    fn is_open_below(&self, s: HysteresisState) -> bool {
        !(matches!(self.dynamics, Dynamics::Hysteretic) && s == HysteresisState::High)
    }

    /// Stock interval governed by segment `k` of state `s`, with the
    /// bottom segment opened down to zero where applicable.
    pub fn interval(&self, s: HysteresisState, k: usize) -> (f64, f64) {
        let seg = &self.segments(s)[k];
        let lo = if k == 0 && self.is_open_below(s) { 0.0 } else { seg.lo };
        (lo, seg.hi)
    }

    /// Harvest on segment `k` at `x`, with `x` clamped into the curve domain.
    pub fn harvest_on(&self, s: HysteresisState, k: usize, x: f64) -> f64 {
        self.segments(s)[k].curve.eval_clamped(x)
    }

    pub fn policy_at(&self, x: f64, s: HysteresisState) -> Result<f64> {
        let k = self.locate(x, s)?;
        Ok(self.harvest_on(s, k, x))
    }

    pub fn value_at(&self, x: f64, s: HysteresisState) -> Result<f64> {
        let k = self.locate(x, s)?;
        Ok(self.segments(s)[k].curve.value_clamped(x, &self.params))
    }

    /// Recruitment for a state-consistent `(x, s)`.
    pub fn recruitment(&self, x: f64, s: HysteresisState) -> f64 {
        let p = &self.params;
        match self.dynamics {
            Dynamics::Smooth { factor } => factor * p.f_tilde(x),
            Dynamics::Tipping => p.f_tipping(x),
            Dynamics::Hysteretic => match s {
                HysteresisState::High => p.f_tilde(x),
                HysteresisState::Low => p.pi * p.f_tilde(x),
            },
        }
    }

    /// Distinct curves in table order.
    pub fn curves(&self) -> Vec<Arc<PolicyCurve>> {
        let mut out: Vec<Arc<PolicyCurve>> = Vec::new();
        for seg in self.states.iter().flatten() {
            if !out.iter().any(|c| Arc::ptr_eq(c, &seg.curve)) {
                out.push(seg.curve.clone());
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::saddle_path::{solve_saddle, BranchId};

    fn two_piece() -> PiecewisePolicy {
        let p = ModelParams::default();
        let low = Arc::new(solve_saddle(p.low_factor(), &p, 1e-3, 16.0).unwrap());
        let high = Arc::new(
            solve_saddle(FecundityFactor::HIGH, &p, 16.0, 400.0)
                .unwrap()
                .relabel(BranchId::HighInterior),
        );
        PiecewisePolicy::new(
            p,
            Dynamics::Tipping,
            vec![vec![
                Segment { curve: low, lo: 1e-3, hi: 16.0 },
                Segment { curve: high, lo: 16.0, hi: 400.0 },
            ]],
            Vec::new(),
        )
        .unwrap()
    }

    #[test]
    fn dispatch_is_half_open() {
        let pol = two_piece();
        let s = HysteresisState::High;
        assert_eq!(pol.locate(15.999, s).unwrap(), 0);
        assert_eq!(pol.locate(16.0, s).unwrap(), 1);
        assert_eq!(pol.locate(400.0, s).unwrap(), 1);
        assert_eq!(pol.locate(1e-5, s).unwrap(), 0);
        assert!(pol.locate(400.5, s).is_err());
        assert!(pol.locate(0.0, s).is_err());
        assert!(pol.policy_at(16.0, s).unwrap() > pol.policy_at(15.999, s).unwrap());
        assert_eq!(pol.curves().len(), 2);
        assert_eq!(pol.interval(s, 0), (0.0, 16.0));
    }

    #[test]
    fn rejects_gaps() {
        let pol = two_piece();
        let mut tables = pol.tables().to_vec();
        tables[0][1].lo = 17.0;
        let r = PiecewisePolicy::new(*pol.params(), Dynamics::Tipping, tables, Vec::new());
        assert!(matches!(r, Err(Error::Consistency(_))));
    }
}
