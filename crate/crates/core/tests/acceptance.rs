//! Acceptance suite. Each test checks one acceptance criterion and prints a
//! single `PASS` or `FAIL` line straight to stdout, so the verdicts show up
//! even when libtest captures output.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::io::Write;
use std::time::{Duration, Instant};

use rand::{rngs::StdRng, Rng, SeedableRng};
use rayon::prelude::*;

use tipping_harvest::composite::{global_value, solve_full, FullSolution, Regime};
use tipping_harvest::constrained_high::{default_x_max, solve_constrained_high, v_star, HighRegime};
use tipping_harvest::dp_oracle::{compare, dp_solve, DpConfig, DpMode};
use tipping_harvest::hysteresis::{default_x_max_hysteretic, solve_hysteretic, HystSolution};
use tipping_harvest::low_fecundity::{transversality_residual, LowSolution};
use tipping_harvest::model::{cake_eating_policy, notional_steady_state, utility_unchecked};
use tipping_harvest::saddle_path::solve_saddle;
use tipping_harvest::trajectory::{discounted_welfare, simulate};
use tipping_harvest::{FecundityFactor, ModelParams};

fn verdict(name: &str, failures: &[String]) {
    let mut out = std::io::stdout().lock();
    if failures.is_empty() {
        writeln!(out, "PASS {name}").unwrap();
    } else {
        writeln!(out, "FAIL {name}: {}", failures.join("; ")).unwrap();
    }
    drop(out);
    assert!(failures.is_empty(), "{name}: {failures:?}");
}

fn params(x_p: f64, pi: f64) -> ModelParams {
    ModelParams::default().with_x_p(x_p).with_pi(pi)
}

fn full(p: &ModelParams) -> FullSolution {
    solve_full(p, default_x_max(p)).unwrap()
}

fn hyst(p: &ModelParams) -> HystSolution {
    solve_hysteretic(p, default_x_max_hysteretic(p).unwrap()).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn linspace(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
}

/// One configuration per regime, and the configurations with a nontrivial
/// Skiba point.
fn regime_sets() -> Vec<(Regime, ModelParams)> {
    vec![
        (Regime::InteriorHighTrivialSkiba, params(16.0, 0.5)),
        (Regime::InteriorHighWithSkiba, params(60.0, 0.2)),
        (Regime::BoundaryHighTrivialSkiba, params(110.0, 0.9)),
        (Regime::BoundaryHighWithSkiba, params(110.0, 0.2)),
        (Regime::NoHighSteadyState, params(16.0, 0.9).with_rho(0.5)),
    ]
}

fn with_skiba_sets() -> Vec<ModelParams> {
    vec![
        params(60.0, 0.2),
        params(110.0, 0.2),
        params(110.0, 0.5),
        params(150.0, 0.5),
        params(16.0, 0.2).with_sigma(2.0),
    ]
}

fn hysteretic_sets() -> Vec<ModelParams> {
    [65.0, 70.0, 75.0, 90.0]
        .into_iter()
        .map(|x_p_h| params(60.0, 0.2).with_x_p_h(Some(x_p_h)))
        .collect()
}

#[test]
fn closed_form_steady_states() {
    let t0 = Instant::now();
    let p = ModelParams::default();
    let sol = full(&p);
    let high = sol.steady_state_high.unwrap();
    let low = notional_steady_state(p.low_factor(), &p);
    let elapsed = t0.elapsed();

    let mut failures = Vec::new();
    for (what, got, want) in [
        ("x_high", high.x, 100.0),
        ("h_high", high.h, 10.0),
        ("x_low", low.x, 25.0),
        ("h_low", low.h, 2.5),
    ] {
        if rel(got, want) > 1e-8 {
            failures.push(format!("{what} = {got}, expected {want}"));
        }
    }
    if elapsed > Duration::from_secs(1) {
        failures.push(format!("took {elapsed:?}"));
    }
    verdict("closed-form steady states", &failures);
}

#[test]
fn cake_eating_oracle() {
    let t0 = Instant::now();
    // Regrowth switched off entirely; the penalty only has to be valid.
    let p = ModelParams::default().with_pi(1e-4);
    let res = dp_solve(&p, &DpConfig::default(), DpMode::Smooth { factor: 0.0 }).unwrap();
    let elapsed = t0.elapsed();

    let layer = &res.layers[0];
    let n = layer.xs.len();
    let (lo, hi) = (n / 10, n - n / 10);
    let mut worst = (0.0_f64, 0.0);
    for i in lo..hi {
        let x = layer.xs[i];
        let e = rel(layer.greedy[i], cake_eating_policy(x, &p));
        if e > worst.0 {
            worst = (e, x);
        }
    }
    let mut failures = Vec::new();
    if worst.0 > 0.03 {
        failures.push(format!("policy error {:.3e} at x = {}", worst.0, worst.1));
    }
    if elapsed > Duration::from_secs(60) {
        failures.push(format!("took {elapsed:?}"));
    }
    verdict("cake-eating limit recovered by the oracle", &failures);
}

#[test]
fn boundary_transversality() {
    let mut failures = Vec::new();
    let sets = [
        params(110.0, 0.2),
        params(110.0, 0.5),
        params(110.0, 0.9),
        params(150.0, 0.2),
        params(150.0, 0.5),
        params(130.0, 0.5).with_sigma(2.0),
    ];
    for p in sets {
        let high = solve_constrained_high(&p, default_x_max(&p)).unwrap();
        if high.regime != HighRegime::Boundary {
            failures.push(format!("x_p = {}: not a boundary regime", p.x_p));
            continue;
        }
        let f = p.f_tilde(p.x_p);
        let h = high.curve.eval(p.x_p).unwrap();
        if rel(h, f) > 1e-9 {
            failures.push(format!("x_p = {}, pi = {}: h(x_p) = {h}, f(x_p) = {f}", p.x_p, p.pi));
        }
        let saddle = solve_saddle(FecundityFactor::HIGH, &p, 0.5 * p.x_p, 2.0 * p.x_p).unwrap();
        let hs = saddle.eval(p.x_p).unwrap();
        if !(hs > f) {
            failures.push(format!("x_p = {}: saddle harvest {hs} not above f(x_p) = {f}", p.x_p));
        }
    }
    verdict("boundary curve meets the recruitment at the tipping point", &failures);
}

#[test]
fn continuation_value_lower_bound() {
    let mut failures = Vec::new();
    let sets = [
        params(16.0, 0.5),
        params(60.0, 0.2),
        params(110.0, 0.2),
        params(150.0, 0.5),
        params(60.0, 0.5).with_sigma(2.0),
    ];
    for p in sets {
        let high = solve_constrained_high(&p, default_x_max(&p)).unwrap();
        let bound = utility_unchecked(p.f_tilde(p.x_p), p.sigma) / p.rho;
        let slack = 1e-10 * bound.abs().max(1.0);
        for x in linspace(p.x_p, high.curve.x_hi(), 256) {
            let v = v_star(&high, x).unwrap();
            if v < bound - slack {
                failures.push(format!("x_p = {}, x = {x}: {v} < {bound}", p.x_p));
                break;
            }
        }
    }
    verdict("continuation value bounded by the tipping-point payoff", &failures);
}

fn check_terminal_root(p: &ModelParams, low: &LowSolution, failures: &mut Vec<String>) {
    let Some(h) = low.h_t_minus else {
        failures.push(format!("x_p = {}: recoverable without terminal harvest", p.x_p));
        return;
    };
    let g = transversality_residual(p, low.target, low.v_high_at_target, h);
    let tol = 1e-10 * (1.0 + (p.rho * low.v_high_at_target).abs());
    if g.abs() >= tol {
        failures.push(format!("x_p = {}, target {}: residual {g:e}", p.x_p, low.target));
    }
    let cap = p.pi * p.f_tilde(low.target);
    if !(h > 0.0 && h < cap) {
        failures.push(format!("x_p = {}: h_T = {h} outside (0, {cap})", p.x_p));
    }
}

#[test]
fn transversality_root() {
    let mut failures = Vec::new();
    let mut checked = 0;
    let plain = regime_sets().into_iter().map(|(_, p)| p).chain(with_skiba_sets());
    for p in plain {
        let sol = full(&p);
        if sol.low.recoverable {
            check_terminal_root(&p, &sol.low, &mut failures);
            checked += 1;
        }
    }
    for p in hysteretic_sets() {
        let sol = hyst(&p);
        if sol.low.recoverable {
            check_terminal_root(&p, &sol.low, &mut failures);
            checked += 1;
        }
    }
    if checked < 8 {
        failures.push(format!("only {checked} recoverable configurations"));
    }
    verdict("terminal harvest solves the transversality condition", &failures);
}

#[test]
fn skiba_matches_oracle() {
    let t0 = Instant::now();
    let sets = with_skiba_sets();
    let reports: Vec<_> = sets
        .iter()
        .map(|p| {
            let sol = full(p);
            let res = dp_solve(p, &DpConfig::default(), DpMode::Tipping).unwrap();
            (sol.regime, compare(&sol, &res))
        })
        .collect();
    let elapsed = t0.elapsed();

    let mut failures = Vec::new();
    let mut matched = 0;
    for (p, (regime, r)) in sets.iter().zip(&reports) {
        let tag = format!("x_p = {}, pi = {}, sigma = {}", p.x_p, p.pi, p.sigma);
        if !matches!(regime, Regime::InteriorHighWithSkiba | Regime::BoundaryHighWithSkiba) {
            failures.push(format!("{tag}: regime {regime}"));
            continue;
        }
        let mut ok = true;
        if r.skiba_cells > 2.0 {
            failures.push(format!("{tag}: skiba {} vs {} ({} cells)", r.skiba_reference, r.skiba_dp, r.skiba_cells));
            ok = false;
        }
        if r.value_sup >= 0.01 {
            failures.push(format!("{tag}: value error {:.3e} at {}", r.value_sup, r.value_worst_x));
            ok = false;
        }
        if r.policy_sup >= 0.02 {
            failures.push(format!("{tag}: policy error {:.3e} at {}", r.policy_sup, r.policy_worst_x));
            ok = false;
        }
        matched += ok as usize;
    }
    if matched < 3 {
        failures.push(format!("only {matched} sets agree"));
    }
    if elapsed > Duration::from_secs(300) {
        failures.push(format!("took {elapsed:?}"));
    }
    verdict("Skiba point, value and policy agree with the oracle", &failures);
}

#[test]
fn basins_of_attraction() {
    let mut failures = Vec::new();
    for p in with_skiba_sets() {
        let sol = full(&p);
        let low = notional_steady_state(p.low_factor(), &p).x;
        let high = notional_steady_state(FecundityFactor::HIGH, &p).x.max(p.x_p);
        let t_end = 50.0 / p.rho;
        for (x0, target) in [
            (0.3 * sol.skiba, low),
            (0.97 * sol.skiba, low),
            (1.03 * sol.skiba, high),
            (0.5 * (sol.skiba + p.x_p), high),
            (2.0 * high, high),
        ] {
            let traj = simulate(&sol, x0, None, t_end, 1.0).unwrap();
            let x_end = traj.sample_at(t_end).unwrap().x;
            if rel(x_end, target) > 1e-3 {
                failures.push(format!(
                    "x_p = {}, pi = {}: from {x0} reached {x_end}, expected {target}",
                    p.x_p, p.pi
                ));
            }
        }
    }
    verdict("paths settle on the steady state of their basin", &failures);
}

#[test]
fn hysteresis_raises_skiba() {
    let mut failures = Vec::new();
    let base = params(60.0, 0.2);
    let plain = full(&base);
    let v2 = plain.low.austere_curve.clone().unwrap();
    let mut overlapping = 0;
    for p in hysteretic_sets() {
        let sol = hyst(&p);
        if !(sol.skiba_h > plain.skiba) {
            failures.push(format!("x_p_h = {:?}: skiba_h {} <= {}", p.x_p_h, sol.skiba_h, plain.skiba));
        }
        // The recovery branches overlap only when both reach below x_p.
        let v2h = sol.low.austere_curve.clone().unwrap();
        let lo = v2.x_lo().max(v2h.x_lo());
        let hi = base.x_p.min(v2.x_hi());
        if lo >= hi {
            continue;
        }
        overlapping += 1;
        for x in linspace(lo, hi, 257).take(256) {
            let (a, b) = (v2.value(x, &base).unwrap(), v2h.value(x, &p).unwrap());
            if !(a > b) {
                failures.push(format!("x_p_h = {:?}, x = {x}: V2 {a} <= V2h {b}", p.x_p_h));
                break;
            }
        }
    }
    if overlapping < 3 {
        failures.push(format!("recovery values compared on only {overlapping} sets"));
    }
    verdict("hysteresis raises the Skiba point and lowers the recovery value", &failures);
}

#[test]
fn value_matches_simulated_welfare() {
    let mut rng = StdRng::seed_from_u64(7);
    let mut failures = Vec::new();
    for (regime, p) in regime_sets() {
        let sol = full(&p);
        if sol.regime != regime {
            failures.push(format!("expected {regime}, got {}", sol.regime));
            continue;
        }
        let (lo, hi) = if regime == Regime::NoHighSteadyState {
            (0.01 * p.x_p, 0.99 * p.x_p)
        } else {
            let x_ref = notional_steady_state(FecundityFactor::HIGH, &p).x.max(p.x_p);
            (0.01 * x_ref, 2.0 * x_ref)
        };
        let x0s: Vec<f64> = (0..10).map(|_| rng.gen_range(lo..hi)).collect();
        for x0 in x0s {
            let v = global_value(&sol, x0).unwrap();
            let traj = simulate(&sol, x0, None, 200.0 / p.rho, 1.0).unwrap();
            let w = discounted_welfare(&traj, p.sigma, p.rho);
            if (v - w).abs() > 5e-3 * v.abs().max(1.0) {
                failures.push(format!("{regime} x0 = {x0}: V = {v}, welfare = {w}"));
            }
        }
    }
    verdict("value function equals simulated discounted welfare", &failures);
}

#[test]
fn regime_taxonomy_sweep() {
    let grid: Vec<ModelParams> = [16.0, 60.0, 110.0]
        .into_iter()
        .flat_map(|x_p| [0.2, 0.5, 0.9].into_iter().map(move |pi| params(x_p, pi)))
        .collect();
    let mut seen: Vec<Regime> = grid.par_iter().map(|p| full(p).regime).collect();
    seen.push(full(&params(16.0, 0.9).with_rho(0.5)).regime);

    let failures: Vec<String> = Regime::ALL
        .iter()
        .filter(|r| !seen.contains(r))
        .map(|r| format!("{r} missing"))
        .collect();
    verdict("sweep covers every regime", &failures);
}
