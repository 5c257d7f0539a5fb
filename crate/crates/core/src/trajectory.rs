//! Closed-loop simulation of `x' = f(x) - h(x)` under a policy.
//!
//! The stock and the discounted welfare integral are advanced together by the
//! same adaptive integrator. Within one integration leg the governing policy
//! segment and the fecundity level are frozen; legs end at segment edges and
//! tipping thresholds, which are located on the dense output by bisection.

use serde::{Deserialize, Serialize};

use crate::composite::FullSolution;
use crate::error::{Error, Result};
use crate::hysteresis::HystSolution;
use crate::model::{next_state_unchecked, utility_unchecked, HysteresisState, ModelParams};
use crate::ode::{Control, Dopri5, Tolerances};
use crate::policy::{AbsorbingPoint, Dynamics, PiecewisePolicy};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    CrossUpHigh,
    CrossDownLow,
    AbsorbedAtBoundary,
    ConvergedToSteadyState,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::CrossUpHigh => "CrossUpHigh",
            EventKind::CrossDownLow => "CrossDownLow",
            EventKind::AbsorbedAtBoundary => "AbsorbedAtBoundary",
            EventKind::ConvergedToSteadyState => "ConvergedToSteadyState",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "CrossUpHigh" => EventKind::CrossUpHigh,
            "CrossDownLow" => EventKind::CrossDownLow,
            "AbsorbedAtBoundary" => EventKind::AbsorbedAtBoundary,
            "ConvergedToSteadyState" => EventKind::ConvergedToSteadyState,
            other => return Err(Error::Format(format!("unknown event `{other}`"))),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Event {
    pub t: f64,
    pub x: f64,
    pub kind: EventKind,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub x: f64,
    pub h: f64,
    /// Fecundity state in force at the sample.
    pub s: HysteresisState,
    /// `int_0^t e^{-rho t'} u(h) dt'`.
    pub welfare: f64,
    pub event: Option<EventKind>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub events: Vec<Event>,
    /// Whether the path ended held at an absorbing point.
    pub absorbed: bool,
    pub horizon: f64,
}

impl Trajectory {
    pub fn last(&self) -> &Sample {
        self.samples.last().expect("trajectory has at least one sample")
    }

    /// State at time `t` from the recorded samples (nearest at or before).
    pub fn sample_at(&self, t: f64) -> Option<&Sample> {
        let i = self.samples.partition_point(|s| s.t <= t);
        i.checked_sub(1).map(|i| &self.samples[i])
    }
}

/// Integrated welfare plus the closed-form tail `u(h_end) e^{-rho t_end} / rho`
/// when the path ended at an absorbing point.
pub fn discounted_welfare(traj: &Trajectory, sigma: f64, rho: f64) -> f64 {
    let last = traj.last();
    let tail = if traj.absorbed {
        utility_unchecked(last.h, sigma) * (-rho * last.t).exp() / rho
    } else {
        0.0
    };
    last.welfare + tail
}

/// Stock interval governed by one smooth piece of a policy.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Piece {
    pub index: usize,
    pub lo: f64,
    pub hi: f64,
}

/// Anything that can drive the simulator.
pub trait PolicySource {
    fn params(&self) -> &ModelParams;
    fn dynamics(&self) -> Dynamics;
    fn piece(&self, x: f64, s: HysteresisState) -> Result<Piece>;
    /// Harvest on a piece; must be smooth in `x` over the piece.
    fn harvest(&self, s: HysteresisState, piece: usize, x: f64) -> f64;
    fn absorbing(&self) -> &[AbsorbingPoint] {
        &[]
    }
}

impl PolicySource for PiecewisePolicy {
    fn params(&self) -> &ModelParams {
        PiecewisePolicy::params(self)
    }

    fn dynamics(&self) -> Dynamics {
        PiecewisePolicy::dynamics(self)
    }

    fn piece(&self, x: f64, s: HysteresisState) -> Result<Piece> {
        let index = self.locate(x, s)?;
        let (lo, hi) = self.interval(s, index);
        Ok(Piece { index, lo, hi })
    }

    fn harvest(&self, s: HysteresisState, piece: usize, x: f64) -> f64 {
        self.harvest_on(s, piece, x)
    }

    fn absorbing(&self) -> &[AbsorbingPoint] {
        PiecewisePolicy::absorbing(self)
    }
}

impl PolicySource for FullSolution {
    fn params(&self) -> &ModelParams {
        self.policy.params()
    }
    fn dynamics(&self) -> Dynamics {
        self.policy.dynamics()
    }
    fn piece(&self, x: f64, s: HysteresisState) -> Result<Piece> {
        PolicySource::piece(&self.policy, x, s)
    }
    fn harvest(&self, s: HysteresisState, piece: usize, x: f64) -> f64 {
        self.policy.harvest_on(s, piece, x)
    }
    fn absorbing(&self) -> &[AbsorbingPoint] {
        self.policy.absorbing()
    }
}

impl PolicySource for HystSolution {
    fn params(&self) -> &ModelParams {
        self.policy.params()
    }
    fn dynamics(&self) -> Dynamics {
        self.policy.dynamics()
    }
    fn piece(&self, x: f64, s: HysteresisState) -> Result<Piece> {
        PolicySource::piece(&self.policy, x, s)
    }
    fn harvest(&self, s: HysteresisState, piece: usize, x: f64) -> f64 {
        self.policy.harvest_on(s, piece, x)
    }
    fn absorbing(&self) -> &[AbsorbingPoint] {
        self.policy.absorbing()
    }
}

/// Constant harvest, for testing the simulator itself.
#[derive(Clone, Copy, Debug)]
pub struct ConstantHarvest {
    pub params: ModelParams,
    pub dynamics: Dynamics,
    pub h: f64,
}

impl PolicySource for ConstantHarvest {
    fn params(&self) -> &ModelParams {
        &self.params
    }
    fn dynamics(&self) -> Dynamics {
        self.dynamics
    }
    fn piece(&self, _x: f64, _s: HysteresisState) -> Result<Piece> {
        Ok(Piece {
            index: 0,
            lo: 0.0,
            hi: f64::INFINITY,
        })
    }
    fn harvest(&self, _s: HysteresisState, _piece: usize, _x: f64) -> f64 {
        self.h
    }
}

/// Absorption check tolerance, relative.
const SNAP_REL: f64 = 1e-6;

fn fecundity(dynamics: Dynamics, p: &ModelParams, x: f64, s: HysteresisState) -> f64 {
    match dynamics {
        Dynamics::Smooth { factor } => factor,
        Dynamics::Tipping => {
            if x >= p.x_p {
                1.0
            } else {
                p.pi
            }
        }
        Dynamics::Hysteretic => match s {
            HysteresisState::High => 1.0,
            HysteresisState::Low => p.pi,
        },
    }
}

fn reported_state(dynamics: Dynamics, p: &ModelParams, x: f64, s: HysteresisState) -> HysteresisState {
    match dynamics {
        Dynamics::Smooth { factor } => {
            if factor >= 1.0 {
                HysteresisState::High
            } else {
                HysteresisState::Low
            }
        }
        Dynamics::Tipping => {
            if x >= p.x_p {
                HysteresisState::High
            } else {
                HysteresisState::Low
            }
        }
        Dynamics::Hysteretic => s,
    }
}

/// Initial hysteresis state: forced outside `[x_p, x_p_h)`, taken from
/// `s0` inside it.
fn initial_state(dynamics: Dynamics, p: &ModelParams, x0: f64, s0: Option<HysteresisState>) -> Result<HysteresisState> {
    match dynamics {
        Dynamics::Hysteretic => {
            let x_p_h = p.x_p_h()?;
            if x0 < p.x_p {
                Ok(HysteresisState::Low)
            } else if x0 >= x_p_h {
                Ok(HysteresisState::High)
            } else {
                s0.ok_or_else(|| {
                    Error::InvalidParams(format!(
                        "initial state required for x0 = {x0} in [x_p, x_p_h)"
                    ))
                })
            }
        }
        _ => Ok(reported_state(dynamics, p, x0, HysteresisState::High)),
    }
}

fn absorbing_match(
    src: &dyn PolicySource,
    x: f64,
    s: HysteresisState,
    piece: &Piece,
) -> Option<AbsorbingPoint> {
    let dynamics = src.dynamics();
    src.absorbing().iter().copied().find(|a| {
        if let (Dynamics::Hysteretic, Some(state)) = (dynamics, a.state) {
            if state != s {
                return false;
            }
        }
        if (x - a.x).abs() > SNAP_REL * a.x {
            return false;
        }
        if a.boundary {
            x >= a.x * (1.0 - 1e-15) && {
                let h_edge = src.harvest(s, piece.index, a.x);
                (h_edge - a.h).abs() <= 1e-9 * a.h
            }
        } else {
            let h = src.harvest(s, piece.index, x);
            (h - a.h).abs() <= SNAP_REL * a.h
        }
    })
}

/// Simulates from `x0` until `horizon`, emitting a sample every `output_dt`
/// plus one per event.
pub fn simulate(
    src: &dyn PolicySource,
    x0: f64,
    s0: Option<HysteresisState>,
    horizon: f64,
    output_dt: f64,
) -> Result<Trajectory> {
    let p = *src.params();
    p.validate()?;
    if !(x0 > 0.0) {
        return Err(Error::NegativeStock(x0));
    }
    if !(horizon > 0.0 && output_dt > 0.0) {
        return Err(Error::InvalidParams(format!(
            "horizon ({horizon}) and output_dt ({output_dt}) must be positive"
        )));
    }
    let dynamics = src.dynamics();
    let rho = p.rho;
    let sigma = p.sigma;
    let x_p_h = match dynamics {
        Dynamics::Hysteretic => p.x_p_h()?,
        _ => f64::INFINITY,
    };
    let integrator = Dopri5::new(Tolerances {
        rtol: 1e-10,
        atol: 1e-12,
    });

    let mut s = initial_state(dynamics, &p, x0, s0)?;
    let mut t = 0.0;
    let mut x = x0;
    let mut w = 0.0;
    let mut traj = Trajectory {
        samples: Vec::new(),
        events: Vec::new(),
        absorbed: false,
        horizon,
    };
    let n_out = (horizon / output_dt).floor() as usize;
    let out_time = |k: usize| if k > n_out { horizon } else { k as f64 * output_dt };
    let mut next_out = 1usize;

    {
        let piece = src.piece(x, s)?;
        let h = src.harvest(s, piece.index, x);
        traj.samples.push(Sample {
            t,
            x,
            h,
            s: reported_state(dynamics, &p, x, s),
            welfare: 0.0,
            event: None,
        });
    }

    let mut legs = 0usize;
    while t < horizon {
        legs += 1;
        if legs > 100_000 {
            return Err(Error::Integration {
                context: "simulation".into(),
                t,
                state: vec![x, w],
                reason: "too many integration legs".into(),
            });
        }
        let piece = src.piece(x, s)?;

        if let Some(a) = absorbing_match(src, x, s, &piece) {
            let kind = if a.boundary {
                EventKind::AbsorbedAtBoundary
            } else {
                EventKind::ConvergedToSteadyState
            };
            x = a.x;
            let h = a.h;
            let rs = reported_state(dynamics, &p, x, s);
            record_event(&mut traj, t, x, h, rs, w, kind);
            let flow = utility_unchecked(h, sigma);
            let t_abs = t;
            let w_abs = w;
            while next_out <= n_out + 1 && out_time(next_out) <= horizon {
                let to = out_time(next_out);
                next_out += 1;
                if to <= t_abs {
                    continue;
                }
                let wk = w_abs + flow * ((-rho * t_abs).exp() - (-rho * to).exp()) / rho;
                push_sample(&mut traj, to, x, h, rs, wk);
            }
            traj.absorbed = true;
            return Ok(traj);
        }

        // fecundity regime boundaries narrow the piece
        let (mut lo, mut hi) = (piece.lo, piece.hi);
        match dynamics {
            Dynamics::Tipping => {
                if x < p.x_p {
                    hi = hi.min(p.x_p);
                } else {
                    lo = lo.max(p.x_p);
                }
            }
            Dynamics::Hysteretic => match s {
                HysteresisState::Low => hi = hi.min(x_p_h),
                HysteresisState::High => lo = lo.max(p.x_p),
            },
            Dynamics::Smooth { .. } => {}
        }
        let a = fecundity(dynamics, &p, x, s);
        let k = piece.index;
        let harvest = |xx: f64| src.harvest(s, k, xx.clamp(lo.max(f64::MIN_POSITIVE), hi));
        let rhs = |tt: f64, y: &[f64; 2]| {
            let h = harvest(y[0]);
            [a * p.f_tilde(y[0]) - h, (-rho * tt).exp() * utility_unchecked(h, sigma)]
        };
        let rs = reported_state(dynamics, &p, x, s);

        // (time, state, crossed upward)
        let mut crossing: Option<(f64, [f64; 2], bool)> = None;
        let mut snap = false;
        let mut pending: Vec<(f64, f64, f64)> = Vec::new();
        let (t_end, y_end) = integrator.integrate("simulation", rhs, t, [x, w], horizon, |step| {
            let y1 = step.y1;
            let mut cut = step.t1;
            if y1[0] >= hi {
                let (te, ye) = step.locate(|y| y[0] - hi, 1e-10 * p.x_p / (1.0 + y1[0].abs()));
                crossing = Some((te, ye, true));
                cut = te;
            } else if y1[0] < lo || y1[0] <= 0.0 {
                let edge = lo.max(0.0);
                let (te, ye) = step.locate(|y| y[0] - edge, 1e-10 * p.x_p / (1.0 + y1[0].abs()));
                crossing = Some((te, ye, false));
                cut = te;
            }
            while next_out <= n_out + 1 {
                let to = out_time(next_out);
                if to > cut || to > horizon {
                    break;
                }
                let y = if to == step.t1 { step.y1 } else { step.dense(to) };
                pending.push((to, y[0], y[1]));
                next_out += 1;
                if to >= horizon {
                    break;
                }
            }
            if crossing.is_some() {
                return Control::Stop;
            }
            let xe = y1[0];
            if xe >= lo && xe < hi && absorbing_match(src, xe, s, &piece).is_some() {
                snap = true;
                return Control::Stop;
            }
            Control::Continue
        })?;
        for (to, xo, wo) in pending.drain(..) {
            let h = harvest(xo);
            push_sample(&mut traj, to, xo, h, rs, wo);
        }

        match crossing {
            Some((te, ye, upward)) => {
                t = te;
                w = ye[1];
                if !upward && lo <= 0.0 {
                    record_event_row(&mut traj, t, 0.0, harvest(0.0), rs, w);
                    return Err(Error::Extinction {
                        t,
                        trajectory: Box::new(traj),
                    });
                }
                let (x_new, kind) = if upward {
                    let kind = match dynamics {
                        Dynamics::Tipping if hi == p.x_p => Some(EventKind::CrossUpHigh),
                        Dynamics::Hysteretic if s == HysteresisState::Low && hi == x_p_h => {
                            Some(EventKind::CrossUpHigh)
                        }
                        _ => None,
                    };
                    (hi, kind)
                } else {
                    let kind = match dynamics {
                        Dynamics::Tipping if lo == p.x_p => Some(EventKind::CrossDownLow),
                        Dynamics::Hysteretic if s == HysteresisState::High && lo == p.x_p => {
                            Some(EventKind::CrossDownLow)
                        }
                        _ => None,
                    };
                    (lo.next_down(), kind)
                };
                x = x_new;
                if dynamics == Dynamics::Hysteretic {
                    s = next_state_unchecked(x, s, p.x_p, x_p_h);
                }
                if let Some(kind) = kind {
                    let piece = src.piece(x, s)?;
                    let h = src.harvest(s, piece.index, x);
                    record_event(&mut traj, t, x, h, reported_state(dynamics, &p, x, s), w, kind);
                }
            }
            None => {
                t = t_end;
                x = y_end[0];
                w = y_end[1];
                if !snap && t >= horizon {
                    break;
                }
            }
        }
    }
    if traj.last().t < horizon {
        let piece = src.piece(x, s)?;
        let h = src.harvest(s, piece.index, x);
        push_sample(&mut traj, horizon, x, h, reported_state(dynamics, &p, x, s), w);
    }
    Ok(traj)
}

fn push_sample(traj: &mut Trajectory, t: f64, x: f64, h: f64, s: HysteresisState, welfare: f64) {
    if let Some(last) = traj.samples.last() {
        if t <= last.t {
            return;
        }
    }
    traj.samples.push(Sample {
        t,
        x,
        h,
        s,
        welfare,
        event: None,
    });
}

fn record_event_row(traj: &mut Trajectory, t: f64, x: f64, h: f64, s: HysteresisState, welfare: f64) {
    push_sample(traj, t, x, h, s, welfare);
}

fn record_event(
    traj: &mut Trajectory,
    t: f64,
    x: f64,
    h: f64,
    s: HysteresisState,
    welfare: f64,
    kind: EventKind,
) {
    traj.events.push(Event { t, x, kind });
    match traj.samples.last_mut() {
        Some(last) if last.t >= t => {
            // an output row already sits at this time; the event takes it over
            last.x = x;
            last.h = h;
            last.s = s;
            last.event = Some(kind);
        }
        _ => traj.samples.push(Sample {
            t,
            x,
            h,
            s,
            welfare,
            event: Some(kind),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::composite::{global_policy_at, global_value, solve_full};
    use crate::constrained_high::default_x_max;
    use crate::hysteresis::{default_x_max_hysteretic, hysteretic_value_at, solve_hysteretic};
    use crate::model::{notional_steady_state, FecundityFactor};

    #[test]
    fn stationary_start_is_constant() {
        let p = ModelParams::default();
        let ss = notional_steady_state(FecundityFactor::HIGH, &p);
        let stub = ConstantHarvest {
            params: p,
            dynamics: Dynamics::smooth(FecundityFactor::HIGH),
            h: ss.h,
        };
        let horizon = 100.0;
        let traj = simulate(&stub, ss.x, None, horizon, 1.0).unwrap();
        assert_eq!(traj.samples.len(), 101);
        for s in &traj.samples {
            assert!((s.x - ss.x).abs() < 1e-9);
        }
        let expect = 10f64.ln() / 0.05 * (1.0 - (-0.05 * horizon).exp());
        assert!((traj.last().welfare - expect).abs() < 1e-9 * expect);
        assert!(!traj.absorbed);
        assert!((discounted_welfare(&traj, 1.0, 0.05) - expect).abs() < 1e-9 * expect);
    }

    #[test]
    fn constant_harvest_extinction() {
        let p = ModelParams::default();
        let stub = ConstantHarvest {
            params: p,
            dynamics: Dynamics::Tipping,
            h: 5.0,
        };
        match simulate(&stub, 20.0, None, 500.0, 1.0) {
            Err(Error::Extinction { t, trajectory }) => {
                assert!(t > 0.0 && t < 500.0);
                assert_eq!(trajectory.events.iter().filter(|e| e.kind == EventKind::CrossDownLow).count(), 1);
                let ev = trajectory.events[0];
                assert!((ev.x - p.x_p).abs() < 1e-9 * p.x_p);
                for w in trajectory.samples.windows(2) {
                    assert!(w[1].t > w[0].t);
                }
            }
            other => panic!("expected extinction, got {other:?}"),
        }
    }

    #[test]
    fn welfare_additivity() {
        let p = ModelParams::default();
        let stub = ConstantHarvest {
            params: p,
            dynamics: Dynamics::Tipping,
            h: 3.0,
        };
        let full = simulate(&stub, 30.0, None, 60.0, 0.5).unwrap();
        let first = simulate(&stub, 30.0, None, 25.0, 0.5).unwrap();
        let mid = first.last();
        let second = simulate(&stub, mid.x, None, 35.0, 0.5).unwrap();
        let joined = mid.welfare + (-p.rho * 25.0f64).exp() * second.last().welfare;
        let total = full.last().welfare;
        assert!((joined - total).abs() < 1e-9 * total.abs());
    }

    fn welfare_gap(sol: &FullSolution, x0: f64) -> (f64, Trajectory) {
        let p = sol.params();
        let traj = simulate(sol, x0, None, 50.0 / p.rho, 1.0).unwrap();
        let w = discounted_welfare(&traj, p.sigma, p.rho);
        let v = global_value(sol, x0).unwrap();
        ((w - v).abs() / v.abs().max(1e-12), traj)
    }

    #[test]
    fn welfare_matches_value_across_regimes() {
        for (x_p, pi) in [(16.0, 0.5), (60.0, 0.2), (110.0, 0.2), (110.0, 0.9)] {
            let p = ModelParams::default().with_x_p(x_p).with_pi(pi);
            let sol = solve_full(&p, default_x_max(&p)).unwrap();
            for x0 in [0.3 * x_p, 0.9 * x_p, 1.2 * x_p, 2.5 * x_p] {
                if (x0 - sol.skiba).abs() < 1e-3 * x_p {
                    continue;
                }
                let (gap, traj) = welfare_gap(&sol, x0);
                assert!(gap < 1e-6, "x_p {x_p} pi {pi} x0 {x0}: gap {gap} events {:?}", traj.events);
            }
        }
    }

    #[test]
    fn basins_split_at_skiba() {
        let p = ModelParams::default().with_x_p(60.0).with_pi(0.2);
        let sol = solve_full(&p, default_x_max(&p)).unwrap();
        let horizon = 50.0 / p.rho;
        let up = simulate(&sol, sol.skiba * 1.01, None, horizon, 1.0).unwrap();
        let x_hat = notional_steady_state(FecundityFactor::HIGH, &p).x;
        assert!((up.last().x - x_hat).abs() < 1e-3 * x_hat);
        assert!(up.events.iter().any(|e| e.kind == EventKind::CrossUpHigh));
        let down = simulate(&sol, sol.skiba * 0.99, None, horizon, 1.0).unwrap();
        let x_low = notional_steady_state(p.low_factor(), &p).x;
        assert!((down.last().x - x_low).abs() < 1e-3 * x_low);
    }

    #[test]
    fn boundary_absorption() {
        let p = ModelParams::default().with_x_p(110.0).with_pi(0.9);
        let sol = solve_full(&p, default_x_max(&p)).unwrap();
        let traj = simulate(&sol, 300.0, None, 1000.0, 1.0).unwrap();
        assert!(traj.absorbed);
        assert_eq!(traj.events.last().unwrap().kind, EventKind::AbsorbedAtBoundary);
        assert_eq!(traj.last().x, 110.0);
    }

    #[test]
    fn hysteretic_paths() {
        let p = ModelParams::default().with_x_p(60.0).with_pi(0.2).with_x_p_h(Some(90.0));
        let sol = solve_hysteretic(&p, default_x_max_hysteretic(&p).unwrap()).unwrap();
        let horizon = 50.0 / p.rho;
        assert!(simulate(&sol, 75.0, None, horizon, 1.0).is_err());
        for (x0, s0) in [
            (75.0, HysteresisState::Low),
            (75.0, HysteresisState::High),
            (sol.skiba_h * 0.9, HysteresisState::Low),
            (200.0, HysteresisState::High),
        ] {
            let traj = simulate(&sol, x0, Some(s0), horizon, 1.0).unwrap();
            let w = discounted_welfare(&traj, p.sigma, p.rho);
            let v = hysteretic_value_at(&sol, x0, s0).unwrap();
            assert!((w - v).abs() < 1e-6 * v.abs(), "{x0} {s0:?}: {w} vs {v}");
        }
        let traj = simulate(&sol, 75.0, Some(HysteresisState::Low), horizon, 1.0).unwrap();
        assert!(sol.skiba_h < 75.0);
        let up = traj.events.iter().find(|e| e.kind == EventKind::CrossUpHigh).unwrap();
        assert!((up.x - 90.0).abs() < 1e-9 * 90.0);
        assert_eq!(traj.last().s, HysteresisState::High);
    }

    #[test]
    fn time_path_follows_policy() {
        let p = ModelParams::default().with_x_p(60.0).with_pi(0.2);
        let sol = solve_full(&p, default_x_max(&p)).unwrap();
        let traj = simulate(&sol, 20.0, None, 300.0, 0.5).unwrap();
        for s in &traj.samples {
            if s.event.is_none() {
                let h = global_policy_at(&sol, s.x).unwrap();
                assert!((s.h - h).abs() <= 1e-6 * h.max(1.0));
            }
        }
    }
}
