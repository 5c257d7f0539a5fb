//! Brute-force value iteration, used as an independent check on the
//! analytic solvers.
//!
//! Time is discretized with a fixed step `dt`; within a step the harvest is
//! constant, the reward `u(h) (1 - e^{-rho dt}) / rho` is integrated exactly
//! and the stock moves by one explicit step of the recruitment dynamics. `V`
//! lives on a log-spaced stock grid and is interpolated linearly in `ln x`.
//!
//! Tipping and hysteretic recruitment use two value layers. The low layer
//! covers stocks up to the upward threshold (`x_p`, or `x_p_h` with
//! hysteresis) and its top node is a left-limit node evaluated with low
//! fecundity; the high layer starts at `x_p`. Both thresholds are grid
//! nodes, so interpolation never straddles a jump in recruitment.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::composite::{global_policy_at, global_value, FullSolution, Regime};
use crate::error::{Error, Result};
use crate::hysteresis::{hysteretic_policy_at, hysteretic_value_at, HystSolution};
use crate::model::{notional_steady_state, utility_unchecked, FecundityFactor, HysteresisState, ModelParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Euler,
    Midpoint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DpConfig {
    /// Grid bounds; default `[1e-3, 4] * x_ref` with
    /// `x_ref = max(x_hat_high, x_p, x_p_h)`.
    pub x_lo: Option<f64>,
    pub x_hi: Option<f64>,
    pub n_x: usize,
    pub n_h: usize,
    /// Action bounds relative to `f(x_ref)`.
    pub h_lo_rel: f64,
    pub h_hi_rel: f64,
    /// Default `0.005 / rho`.
    pub dt: Option<f64>,
    /// Stop once the sup-norm update is below `tol_rel * (1 + |V|_sup)`.
    pub tol_rel: f64,
    pub max_iter: usize,
    pub scheme: Scheme,
    pub parallel: bool,
}

impl Default for DpConfig {
    fn default() -> Self {
        Self {
            x_lo: None,
            x_hi: None,
            n_x: 1200,
            n_h: 400,
            h_lo_rel: 1e-6,
            h_hi_rel: 3.0,
            dt: None,
            tol_rel: 1e-9,
            max_iter: 200_000,
            scheme: Scheme::Midpoint,
            parallel: false,
        }
    }
}

impl DpConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParams(m));
        if self.n_x < 16 || self.n_h < 8 {
            return bad(format!("grid too small: n_x = {}, n_h = {}", self.n_x, self.n_h));
        }
        if !(self.h_lo_rel > 0.0 && self.h_hi_rel > self.h_lo_rel) {
            return bad(format!(
                "action bounds must satisfy 0 < h_lo_rel < h_hi_rel, got {} and {}",
                self.h_lo_rel, self.h_hi_rel
            ));
        }
        if let (Some(lo), Some(hi)) = (self.x_lo, self.x_hi) {
            if !(lo > 0.0 && hi > lo) {
                return bad(format!("grid bounds must satisfy 0 < x_lo < x_hi, got [{lo}, {hi}]"));
            }
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return bad(format!("dt must be positive, got {dt}"));
            }
        }
        if !(self.tol_rel > 0.0) || self.max_iter == 0 {
            return bad("tol_rel and max_iter must be positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DpMode {
    /// `factor * f(x)` everywhere; `factor = 0` is pure cake-eating.
    Smooth { factor: f64 },
    Tipping,
    Hysteretic,
}

/// Values and greedy policy on one layer.
#[derive(Clone, Debug)]
pub struct Layer {
    pub state: HysteresisState,
    /// Recruitment factor used at every node of the layer.
    pub factor: f64,
    pub xs: Vec<f64>,
    pub values: Vec<f64>,
    pub greedy: Vec<f64>,
}

impl Layer {
    fn interp(&self, ys: &[f64], x: f64) -> f64 {
        let (k, w) = bracket(&self.xs, x);
        if w == 0.0 {
            ys[k]
        } else {
            ys[k] * (1.0 - w) + ys[k + 1] * w
        }
    }
}

#[derive(Clone, Debug)]
pub struct DpResult {
    pub mode: DpMode,
    pub params: ModelParams,
    pub config: DpConfig,
    pub dt: f64,
    /// The full stock grid; layers are contiguous runs of it.
    pub grid: Vec<f64>,
    pub layers: Vec<Layer>,
    pub iterations: usize,
    pub residual: f64,
    pub residual_history: Vec<f64>,
}

impl DpResult {
    /// Layer holding `(x, s)` after the state update.
    pub fn layer(&self, x: f64, s: HysteresisState) -> &Layer {
        if self.layers.len() == 1 {
            return &self.layers[0];
        }
        let p = &self.params;
        let s = match self.mode {
            DpMode::Tipping => {
                if x < p.x_p {
                    HysteresisState::Low
                } else {
                    HysteresisState::High
                }
            }
            _ => {
                let x_p_h = p.x_p_h.unwrap_or(p.x_p);
                crate::model::next_state_unchecked(x, s, p.x_p, x_p_h)
            }
        };
        &self.layers[s.index()]
    }

    pub fn value_at(&self, x: f64, s: HysteresisState) -> f64 {
        let l = self.layer(x, s);
        l.interp(&l.values, x)
    }

    pub fn policy_at(&self, x: f64, s: HysteresisState) -> f64 {
        let l = self.layer(x, s);
        l.interp(&l.greedy, x)
    }

    /// Width of the grid cell containing `x`.
    pub fn cell_width(&self, x: f64) -> f64 {
        let (k, _) = bracket(&self.grid, x);
        let k = k.min(self.grid.len() - 2);
        self.grid[k + 1] - self.grid[k]
    }

    /// `(x, s, V, h_greedy)` for every node of every layer.
    pub fn rows(&self) -> Vec<(f64, HysteresisState, f64, f64)> {
        let mut out = Vec::new();
        for l in &self.layers {
            for i in 0..l.xs.len() {
                out.push((l.xs[i], l.state, l.values[i], l.greedy[i]));
            }
        }
        out
    }
}

/// Index `k` and weight `w` with `ln x = (1-w) ln xs[k] + w ln xs[k+1]`,
/// clamped to the grid.
fn bracket(xs: &[f64], x: f64) -> (usize, f64) {
    let n = xs.len();
    if x <= xs[0] {
        return (0, 0.0);
    }
    if x >= xs[n - 1] {
        return (n - 1, 0.0);
    }
    let k = xs.partition_point(|&g| g <= x) - 1;
    (k, (x / xs[k]).ln() / (xs[k + 1] / xs[k]).ln())
}

/// Like [`bracket`] but continues the first cell below the grid, so that
/// running the stock off the bottom is penalized instead of being valued at
/// `V(x_lo)`.
fn bracket_extrapolated(xs: &[f64], x: f64) -> (usize, f64) {
    if x < xs[0] {
        return (0, (x / xs[0]).ln() / (xs[1] / xs[0]).ln());
    }
    bracket(xs, x)
}

/// Log-spaced grid with the given thresholds moved onto their nearest nodes.
fn build_grid(lo: f64, hi: f64, n: usize, pins: &[f64]) -> Result<Vec<f64>> {
    let ratio = (hi / lo).ln();
    let mut xs: Vec<f64> = (0..n)
        .map(|i| lo * (ratio * i as f64 / (n - 1) as f64).exp())
        .collect();
    xs[0] = lo;
    xs[n - 1] = hi;
    let mut used = Vec::new();
    for &pin in pins {
        if !(pin > lo && pin < hi) {
            return Err(Error::InvalidParams(format!(
                "threshold {pin} must lie strictly inside the oracle grid [{lo}, {hi}]"
            )));
        }
        let (k, w) = bracket(&xs, pin);
        let k = if w > 0.5 { k + 1 } else { k };
        if k == 0 || k == n - 1 || used.contains(&k) {
            return Err(Error::InvalidParams(format!(
                "threshold {pin} cannot be resolved on a grid of {n} nodes"
            )));
        }
        xs[k] = pin;
        used.push(k);
    }
    Ok(xs)
}

/// Reference stock `max(x_hat_high, x_p, x_p_h)`.
fn x_ref(p: &ModelParams, mode: DpMode) -> f64 {
    let mut r = notional_steady_state(FecundityFactor::HIGH, p).x.max(p.x_p);
    if let (DpMode::Hysteretic, Some(h)) = (mode, p.x_p_h) {
        r = r.max(h);
    }
    r
}

/// One precomputed transition: reward, discount over the step, and the
/// interpolation stencil of the continuation value (`idx == NONE` marks an
/// infeasible action).
#[derive(Clone, Copy)]
struct Trans {
    reward: f64,
    beta: f64,
    idx: u32,
    w: f64,
}

const NONE: u32 = u32::MAX;

const INFEASIBLE: Trans = Trans {
    reward: 0.0,
    beta: 0.0,
    idx: NONE,
    w: 0.0,
};

struct Problem {
    /// Start of each layer in the concatenated value vector.
    offsets: Vec<usize>,
    n_total: usize,
    /// Row-major `[node][action]`, `n_act + 1` entries per node; the last
    /// is the per-node hold action.
    table: Vec<Trans>,
    n_act: usize,
}

struct Setup {
    grid: Vec<f64>,
    layers: Vec<Layer>,
    actions: Vec<f64>,
    dt: f64,
    x_p_h: f64,
}

fn step_stock(scheme: Scheme, p: &ModelParams, factor: f64, x: f64, h: f64, dt: f64) -> f64 {
    let drift = |x: f64| factor * p.f_tilde(x.max(0.0)) - h;
    match scheme {
        Scheme::Euler => x + drift(x) * dt,
        Scheme::Midpoint => x + drift(x + 0.5 * dt * drift(x)) * dt,
    }
}

/// Destination layer of a move to `x_next` from layer `s`.
fn next_layer(mode: DpMode, s: HysteresisState, x_next: f64, p: &ModelParams, x_p_h: f64) -> HysteresisState {
    match mode {
        DpMode::Smooth { .. } => s,
        DpMode::Tipping => {
            if x_next < p.x_p {
                HysteresisState::Low
            } else {
                HysteresisState::High
            }
        }
        DpMode::Hysteretic => crate::model::next_state_unchecked(x_next, s, p.x_p, x_p_h),
    }
}

fn setup(p: &ModelParams, cfg: &DpConfig, mode: DpMode) -> Result<Setup> {
    p.validate()?;
    cfg.validate()?;
    let x_ref = x_ref(p, mode);
    let lo = cfg.x_lo.unwrap_or(1e-3 * x_ref);
    let hi = cfg.x_hi.unwrap_or(4.0 * x_ref);
    let dt = cfg.dt.unwrap_or(0.005 / p.rho);
    let x_p_h = match mode {
        DpMode::Hysteretic => p.x_p_h()?,
        _ => p.x_p,
    };
    let (grid, layers) = match mode {
        DpMode::Smooth { factor } => {
            if !(0.0..=1.0).contains(&factor) {
                return Err(Error::InvalidParams(format!("smooth factor {factor} outside [0, 1]")));
            }
            let grid = build_grid(lo, hi, cfg.n_x, &[])?;
            let state = if factor >= 1.0 {
                HysteresisState::High
            } else {
                HysteresisState::Low
            };
            let layer = Layer {
                state,
                factor,
                xs: grid.clone(),
                values: Vec::new(),
                greedy: Vec::new(),
            };
            (grid, vec![layer])
        }
        DpMode::Tipping | DpMode::Hysteretic => {
            let pins: Vec<f64> = if mode == DpMode::Hysteretic {
                vec![p.x_p, x_p_h]
            } else {
                vec![p.x_p]
            };
            let grid = build_grid(lo, hi, cfg.n_x, &pins)?;
            let low_xs: Vec<f64> = grid.iter().copied().filter(|&x| x <= x_p_h).collect();
            let high_xs: Vec<f64> = grid.iter().copied().filter(|&x| x >= p.x_p).collect();
            let layer = |state, factor, xs| Layer {
                state,
                factor,
                xs,
                values: Vec::new(),
                greedy: Vec::new(),
            };
            (
                grid,
                vec![
                    layer(HysteresisState::Low, p.pi, low_xs),
                    layer(HysteresisState::High, 1.0, high_xs),
                ],
            )
        }
    };
    let h_ref = p.f_tilde(x_ref);
    let (h_lo, h_hi) = (cfg.h_lo_rel * h_ref, cfg.h_hi_rel * h_ref);
    let r = (h_hi / h_lo).ln();
    let actions = (0..cfg.n_h)
        .map(|j| h_lo * (r * j as f64 / (cfg.n_h - 1) as f64).exp())
        .collect();
    Ok(Setup {
        grid,
        layers,
        actions,
        dt,
        x_p_h,
    })
}

impl Problem {
    fn build(p: &ModelParams, cfg: &DpConfig, mode: DpMode, su: &Setup) -> Problem {
        let mut offsets = Vec::with_capacity(su.layers.len());
        let mut n_total = 0;
        for l in &su.layers {
            offsets.push(n_total);
            n_total += l.xs.len();
        }
        let n_act = su.actions.len();
        let rho = p.rho;
        let step_beta = (-rho * su.dt).exp();
        let step_disc = (1.0 - step_beta) / rho;
        let mut table = Vec::with_capacity(n_total * (n_act + 1));
        let layer_index = |s: HysteresisState| if su.layers.len() == 1 { 0 } else { s.index() };
        let locate = |s: HysteresisState, x: f64| -> (u32, f64) {
            let li = layer_index(s);
            let (k, w) = bracket_extrapolated(&su.layers[li].xs, x);
            ((offsets[li] + k) as u32, w)
        };
        for (li, l) in su.layers.iter().enumerate() {
            for (i, &x) in l.xs.iter().enumerate() {
                let drift0 = |h: f64| l.factor * p.f_tilde(x) - h;
                for &h in &su.actions {
                    let u = utility_unchecked(h, p.sigma);
                    let xn = step_stock(cfg.scheme, p, l.factor, x, h, su.dt);
                    let s_next = next_layer(mode, l.state, xn, p, su.x_p_h);
                    if s_next != l.state {
                        // stop the step at the threshold it crosses
                        let edge = if s_next == HysteresisState::High { su.x_p_h } else { p.x_p };
                        let tau = ((edge - x) / drift0(h)).clamp(0.0, su.dt);
                        let beta = (-rho * tau).exp();
                        let (idx, w) = locate(s_next, edge);
                        table.push(Trans {
                            reward: u * (1.0 - beta) / rho,
                            beta,
                            idx,
                            w,
                        });
                        continue;
                    }
                    if xn <= 0.0 {
                        table.push(INFEASIBLE);
                        continue;
                    }
                    let (idx, w) = locate(s_next, xn);
                    table.push(Trans {
                        reward: u * step_disc,
                        beta: step_beta,
                        idx,
                        w,
                    });
                }
                let h_hold = l.factor * p.f_tilde(x);
                if h_hold > 0.0 {
                    table.push(Trans {
                        reward: utility_unchecked(h_hold, p.sigma) * step_disc,
                        beta: step_beta,
                        idx: (offsets[li] + i) as u32,
                        w: 0.0,
                    });
                } else {
                    table.push(INFEASIBLE);
                }
            }
        }
        Problem {
            offsets,
            n_total,
            table,
            n_act,
        }
    }

    #[inline]
    fn q(&self, v: &[f64], t: &Trans) -> f64 {
        let i = t.idx as usize;
        let cont = if t.w == 0.0 {
            v[i]
        } else {
            v[i] * (1.0 - t.w) + v[i + 1] * t.w
        };
        t.reward + t.beta * cont
    }

    #[inline]
    fn node_update(&self, v: &[f64], node: usize) -> f64 {
        let row = &self.table[node * (self.n_act + 1)..(node + 1) * (self.n_act + 1)];
        let mut best = f64::NEG_INFINITY;
        for t in row {
            if t.idx == NONE {
                continue;
            }
            let q = self.q(v, t);
            if q > best {
                best = q;
            }
        }
        best
    }

    fn sweep(&self, v: &[f64], out: &mut [f64], parallel: bool) {
        if parallel {
            out.par_iter_mut()
                .enumerate()
                .for_each(|(i, o)| *o = self.node_update(v, i));
        } else {
            for (i, o) in out.iter_mut().enumerate() {
                *o = self.node_update(v, i);
            }
        }
    }
}

/// Runs value iteration to the configured tolerance.
pub fn dp_solve(p: &ModelParams, cfg: &DpConfig, mode: DpMode) -> Result<DpResult> {
    let mut su = setup(p, cfg, mode)?;
    let prob = Problem::build(p, cfg, mode, &su);

    let mut v = vec![0.0; prob.n_total];
    for (li, l) in su.layers.iter().enumerate() {
        let h_min = su.actions[0];
        for (i, &x) in l.xs.iter().enumerate() {
            let h = (l.factor * p.f_tilde(x)).max(h_min);
            v[prob.offsets[li] + i] = utility_unchecked(h, p.sigma) / p.rho;
        }
    }
    let mut next = vec![0.0; prob.n_total];
    let mut history = Vec::new();
    let mut iterations = 0;
    let residual = loop {
        if iterations >= cfg.max_iter {
            let residual = history.last().copied().unwrap_or(f64::INFINITY);
            let tail = history.len().saturating_sub(10);
            return Err(Error::NoConvergence {
                iterations,
                residual,
                history: history[tail..].to_vec(),
            });
        }
        prob.sweep(&v, &mut next, cfg.parallel);
        iterations += 1;
        let mut res = 0.0f64;
        let mut sup = 0.0f64;
        for (a, b) in next.iter().zip(&v) {
            res = res.max((a - b).abs());
            sup = sup.max(a.abs());
        }
        std::mem::swap(&mut v, &mut next);
        history.push(res);
        if res <= cfg.tol_rel * (1.0 + sup) {
            break res;
        }
    };

    for (li, l) in su.layers.iter_mut().enumerate() {
        let start = prob.offsets[li];
        l.values = v[start..start + l.xs.len()].to_vec();
    }
    let greedy = greedy_policies(p, &su);
    for (l, g) in su.layers.iter_mut().zip(greedy) {
        l.greedy = g;
    }
    Ok(DpResult {
        mode,
        params: *p,
        config: cfg.clone(),
        dt: su.dt,
        grid: su.grid,
        layers: su.layers,
        iterations,
        residual,
        residual_history: history,
    })
}

/// Greedy harvest with respect to the converged `V`: the maximizer of the
/// Hamiltonian `u(h) + V'(x) (f(x) - h)`, with `V'` taken upwind (forward
/// difference for a growing stock, backward for a shrinking one) and the
/// stationary harvest `f(x)` when neither direction is consistent.
///
/// Reading the policy off the Hamiltonian rather than off the discrete-time
/// argmax removes the `O(dt)` lag of holding the harvest fixed over a step.
fn greedy_policies(p: &ModelParams, su: &Setup) -> Vec<Vec<f64>> {
    let (h_min, h_max) = (su.actions[0], su.actions[su.actions.len() - 1]);
    let inv_mu = |q: f64| {
        if q > 0.0 {
            q.powf(-1.0 / p.sigma).clamp(h_min, h_max)
        } else {
            h_max
        }
    };
    let u = |h: f64| utility_unchecked(h, p.sigma);
    su.layers
        .iter()
        .map(|l| {
            let n = l.xs.len();
            (0..n)
                .map(|i| {
                    let x = l.xs[i];
                    let f = l.factor * p.f_tilde(x);
                    let fwd = (i + 1 < n).then(|| (l.values[i + 1] - l.values[i]) / (l.xs[i + 1] - x));
                    let bwd = (i > 0).then(|| (l.values[i] - l.values[i - 1]) / (x - l.xs[i - 1]));
                    // (hamiltonian, harvest)
                    let mut best = if f > 0.0 { (u(f), f) } else { (f64::NEG_INFINITY, h_min) };
                    let mut consider = |slope: f64, growing: bool| {
                        let h = inv_mu(slope);
                        if (f - h > 0.0) == growing && f - h != 0.0 {
                            let ham = u(h) + slope * (f - h);
                            if ham > best.0 {
                                best = (ham, h);
                            }
                        }
                    };
                    if let Some(q) = fwd {
                        consider(q, true);
                    }
                    if let Some(q) = bwd {
                        consider(q, false);
                    }
                    // bottom node of the open low end: no backward difference
                    if bwd.is_none() && best.0 == f64::NEG_INFINITY {
                        if let Some(q) = fwd {
                            best.1 = inv_mu(q);
                        }
                    }
                    best.1
                })
                .collect()
        })
        .collect()
}

/// Grid estimate of the Skiba point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DpSkiba {
    /// Midpoint of the cell where the greedy policy jumps from running the
    /// stock down to building it up; 0 when there is no such jump.
    pub x: f64,
    pub half_width: f64,
    pub trivial: bool,
}

/// Largest cell below the recovery target where the greedy harvest jumps
/// from above recruitment to below it.
pub fn dp_skiba(res: &DpResult) -> Result<DpSkiba> {
    let p = &res.params;
    let target = match res.mode {
        DpMode::Tipping => p.x_p,
        DpMode::Hysteretic => p.x_p_h()?,
        DpMode::Smooth { .. } => {
            return Err(Error::Unsupported("dp_skiba needs tipping or hysteretic recruitment".into()))
        }
    };
    let low = &res.layers[HysteresisState::Low.index()];
    let rec = |i: usize| low.factor * p.f_tilde(low.xs[i]);
    let mut found = None;
    for i in 0..low.xs.len() - 1 {
        if low.xs[i + 1] >= target {
            break;
        }
        if low.greedy[i] > rec(i) && low.greedy[i + 1] < rec(i + 1) {
            found = Some(i);
        }
    }
    Ok(match found {
        Some(i) => DpSkiba {
            x: 0.5 * (low.xs[i] + low.xs[i + 1]),
            half_width: 0.5 * (low.xs[i + 1] - low.xs[i]),
            trivial: false,
        },
        None => DpSkiba {
            x: 0.0,
            half_width: 0.0,
            trivial: true,
        },
    })
}

/// Something whose value and policy can be checked against the oracle.
pub trait Reference {
    fn value(&self, x: f64, s: HysteresisState) -> Option<f64>;
    fn policy(&self, x: f64, s: HysteresisState) -> Option<f64>;
    /// Stocks where the policy may jump.
    fn discontinuities(&self) -> Vec<f64>;
    /// Skiba point, 0 when trivial.
    fn skiba(&self) -> f64;
}

impl Reference for FullSolution {
    fn value(&self, x: f64, _s: HysteresisState) -> Option<f64> {
        global_value(self, x).ok()
    }
    fn policy(&self, x: f64, _s: HysteresisState) -> Option<f64> {
        global_policy_at(self, x).ok()
    }
    fn discontinuities(&self) -> Vec<f64> {
        let mut d = vec![self.params().x_p];
        if self.skiba > 0.0 {
            d.push(self.skiba);
        }
        d
    }
    fn skiba(&self) -> f64 {
        match self.regime {
            Regime::InteriorHighTrivialSkiba | Regime::BoundaryHighTrivialSkiba => 0.0,
            _ => self.skiba,
        }
    }
}

impl Reference for HystSolution {
    fn value(&self, x: f64, s: HysteresisState) -> Option<f64> {
        hysteretic_value_at(self, x, s).ok()
    }
    fn policy(&self, x: f64, s: HysteresisState) -> Option<f64> {
        hysteretic_policy_at(self, x, s).ok()
    }
    fn discontinuities(&self) -> Vec<f64> {
        let p = self.params();
        let mut d = vec![p.x_p];
        d.extend(p.x_p_h);
        if self.skiba_h > 0.0 {
            d.push(self.skiba_h);
        }
        d
    }
    fn skiba(&self) -> f64 {
        match self.regime {
            Regime::InteriorHighTrivialSkiba | Regime::BoundaryHighTrivialSkiba => 0.0,
            _ => self.skiba_h,
        }
    }
}

impl Reference for DpResult {
    fn value(&self, x: f64, s: HysteresisState) -> Option<f64> {
        Some(self.value_at(x, s))
    }
    fn policy(&self, x: f64, s: HysteresisState) -> Option<f64> {
        Some(self.policy_at(x, s))
    }
    fn discontinuities(&self) -> Vec<f64> {
        let p = &self.params;
        let mut d = Vec::new();
        if !matches!(self.mode, DpMode::Smooth { .. }) {
            d.push(p.x_p);
            if self.mode == DpMode::Hysteretic {
                d.extend(p.x_p_h);
            }
            if let Ok(s) = dp_skiba(self) {
                if !s.trivial {
                    d.push(s.x);
                }
            }
        }
        d
    }
    fn skiba(&self) -> f64 {
        match dp_skiba(self) {
            Ok(s) => s.x,
            Err(_) => 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub value_sup: f64,
    pub value_mean: f64,
    pub policy_sup: f64,
    pub policy_mean: f64,
    pub value_worst_x: f64,
    /// Stock where the policy error is largest.
    pub policy_worst_x: f64,
    pub nodes_compared: usize,
    pub skiba_reference: f64,
    pub skiba_dp: f64,
    /// `|skiba_reference - skiba_dp|` in units of the local grid cell.
    pub skiba_cells: f64,
}

/// Nodes trimmed from each end of a layer before comparing.
const EDGE_FRACTION: f64 = 0.05;
/// Cells excluded on each side of a policy discontinuity.
const JUMP_CELLS: usize = 3;

/// Relative errors of `reference` against the oracle over interior nodes.
///
/// Value errors are scaled by `|V_dp| + f(x_ref)^{1-sigma} / rho` so that
/// values passing through zero do not blow up the ratio.
pub fn compare(reference: &dyn Reference, dp: &DpResult) -> ComparisonReport {
    let p = &dp.params;
    let x_ref = x_ref(p, dp.mode);
    let v_scale = p.f_tilde(x_ref).powf(1.0 - p.sigma) / p.rho;
    let n = dp.grid.len();
    let lo_cut = dp.grid[(EDGE_FRACTION * n as f64) as usize];
    let hi_cut = dp.grid[n - 1 - (EDGE_FRACTION * n as f64) as usize];
    let mut jumps = reference.discontinuities();
    jumps.extend(dp.discontinuities());
    let near_jump = |x: f64| {
        jumps.iter().any(|&d| {
            let k = dp.grid.partition_point(|&g| g < d);
            let a = dp.grid[k.saturating_sub(JUMP_CELLS)];
            let b = dp.grid[(k + JUMP_CELLS).min(n - 1)];
            x >= a && x <= b
        })
    };

    let (mut v_sup, mut v_sum, mut v_worst) = (0.0f64, 0.0, 0.0);
    let (mut p_sup, mut p_sum, mut p_worst) = (0.0f64, 0.0, 0.0);
    let mut count = 0usize;
    for l in &dp.layers {
        for i in 0..l.xs.len() {
            let x = l.xs[i];
            if x < lo_cut || x > hi_cut || near_jump(x) {
                continue;
            }
            // skip nodes that belong to the other state after the update
            if dp.layer(x, l.state).state != l.state {
                continue;
            }
            let (Some(v), Some(h)) = (reference.value(x, l.state), reference.policy(x, l.state)) else {
                continue;
            };
            let ve = (v - l.values[i]).abs() / (l.values[i].abs() + v_scale);
            let pe = (h - l.greedy[i]).abs() / l.greedy[i].abs().max(f64::MIN_POSITIVE);
            if ve > v_sup {
                v_sup = ve;
                v_worst = x;
            }
            v_sum += ve;
            if pe > p_sup {
                p_sup = pe;
                p_worst = x;
            }
            p_sum += pe;
            count += 1;
        }
    }
    let skiba_reference = reference.skiba();
    let skiba_dp = dp.skiba();
    let skiba_cells = if skiba_reference == skiba_dp {
        0.0
    } else {
        let at = if skiba_reference > 0.0 { skiba_reference } else { skiba_dp };
        (skiba_reference - skiba_dp).abs() / dp.cell_width(at)
    };
    let m = count.max(1) as f64;
    ComparisonReport {
        value_sup: v_sup,
        value_mean: v_sum / m,
        policy_sup: p_sup,
        policy_mean: p_sum / m,
        value_worst_x: v_worst,
        policy_worst_x: p_worst,
        nodes_compared: count,
        skiba_reference,
        skiba_dp,
        skiba_cells,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DpConfig {
        DpConfig {
            n_x: 300,
            n_h: 200,
            tol_rel: 1e-8,
            ..DpConfig::default()
        }
    }

    #[test]
    fn grid_pins_thresholds() {
        let g = build_grid(0.1, 400.0, 200, &[60.0, 90.0]).unwrap();
        assert!(g.contains(&60.0) && g.contains(&90.0));
        assert!(g.windows(2).all(|w| w[1] > w[0]));
        assert!(build_grid(0.1, 400.0, 200, &[500.0]).is_err());
    }

    #[test]
    fn smooth_steady_state_policy() {
        let p = ModelParams::default();
        let res = dp_solve(&p, &small(), DpMode::Smooth { factor: 1.0 }).unwrap();
        let h = res.policy_at(100.0, HysteresisState::High);
        assert!((h - 10.0).abs() < 0.2, "h(100) = {h}");
        for l in &res.layers {
            assert!(l.values.windows(2).all(|w| w[1] >= w[0]));
        }
        assert!(res.residual_history.windows(2).skip(1).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
    }

    #[test]
    fn parallel_sweep_is_bit_identical() {
        let p = ModelParams::default().with_x_p(60.0).with_pi(0.2);
        let cfg = DpConfig {
            n_x: 120,
            n_h: 60,
            tol_rel: 1e-6,
            ..DpConfig::default()
        };
        let a = dp_solve(&p, &cfg, DpMode::Tipping).unwrap();
        let b = dp_solve(&p, &DpConfig { parallel: true, ..cfg }, DpMode::Tipping).unwrap();
        assert_eq!(a.iterations, b.iterations);
        for (la, lb) in a.layers.iter().zip(&b.layers) {
            assert_eq!(la.values, lb.values);
            assert_eq!(la.greedy, lb.greedy);
        }
    }

    #[test]
    fn self_comparison_is_zero() {
        let p = ModelParams::default().with_x_p(60.0).with_pi(0.2);
        let res = dp_solve(&p, &small(), DpMode::Tipping).unwrap();
        let r = compare(&res, &res);
        assert_eq!(r.value_sup, 0.0);
        assert_eq!(r.policy_sup, 0.0);
        assert_eq!(r.skiba_cells, 0.0);
        assert!(r.nodes_compared > 100);
    }

    #[test]
    fn non_convergence_reports_history() {
        let p = ModelParams::default();
        let cfg = DpConfig {
            max_iter: 5,
            ..small()
        };
        match dp_solve(&p, &cfg, DpMode::Smooth { factor: 1.0 }) {
            Err(Error::NoConvergence { iterations, history, .. }) => {
                assert_eq!(iterations, 5);
                assert_eq!(history.len(), 5);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_bad_config() {
        let p = ModelParams::default();
        let cfg = DpConfig { n_x: 4, ..DpConfig::default() };
        assert!(dp_solve(&p, &cfg, DpMode::Tipping).is_err());
        assert!(dp_solve(&p, &DpConfig::default(), DpMode::Smooth { factor: 1.5 }).is_err());
        assert!(dp_solve(&p, &DpConfig::default(), DpMode::Hysteretic).is_err());
    }
}
