//! On-disk formats: the `solution.json` summary, one CSV per policy curve,
//! oracle grids and trajectories.
//!
//! Every number goes through `{:.16e}`, which round-trips an `f64` exactly,
//! so a policy rebuilt by [`load_policy`] evaluates bit-identically to the
//! one that was written.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::composite::{FullSolution, Regime};
use crate::dp_oracle::DpResult;
use crate::error::{Error, Result};
use crate::hysteresis::{HystSolution, PostRecovery};
use crate::model::{FecundityFactor, HysteresisState, ModelParams, SteadyState};
use crate::policy::{AbsorbingPoint, Dynamics, PiecewisePolicy, Segment};
use crate::saddle_path::{BranchId, PolicyCurve};
use crate::trajectory::Trajectory;

pub const SOLUTION_FILE: &str = "solution.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRecord {
    pub branch: BranchId,
    pub factor: f64,
    /// Hysteresis state whose table uses the curve.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<HysteresisState>,
    pub file: String,
    pub points: usize,
    pub x_lo: f64,
    pub x_hi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub branch: BranchId,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionRecord {
    pub regime: Regime,
    pub hysteretic: bool,
    /// Skiba point of the (low-state) problem; 0 when trivial.
    pub skiba: f64,
    /// Set when recovery is never worthwhile and `skiba` is a placeholder.
    pub skiba_undefined: bool,
    pub steady_state_high: Option<SteadyState>,
    pub steady_state_low: Option<SteadyState>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub permanent_collapse: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub post_recovery: Option<PostRecovery>,
    pub x_max: f64,
    pub params: ModelParams,
    pub dynamics: Dynamics,
    pub curves: Vec<CurveRecord>,
    /// One table per hysteresis state (a single table otherwise).
    pub segments: Vec<Vec<SegmentRecord>>,
    pub absorbing: Vec<AbsorbingPoint>,
    pub warnings: Vec<String>,
}

/// `{:.16e}`: 17 significant digits.
pub fn fmt_num(x: f64) -> String {
    format!("{x:.16e}")
}

fn parse_num(s: &str, what: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::Format(format!("bad number `{s}` in {what}")))
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("csv: {other:?}")),
    }
}

fn curve_file(branch: BranchId) -> String {
    format!("curve_{}.csv", branch.as_str())
}

/// Writes `x,h,V,branch_id,factor` (plus `,s` when `state` is given).
pub fn write_curve_csv(
    path: &Path,
    curve: &PolicyCurve,
    p: &ModelParams,
    state: Option<HysteresisState>,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header = vec!["x", "h", "V", "branch_id", "factor"];
    if state.is_some() {
        header.push("s");
    }
    w.write_record(&header).map_err(csv_err)?;
    let factor = fmt_num(curve.factor().value());
    for (&x, &h) in curve.xs().iter().zip(curve.hs()) {
        let v = curve.value(x, p)?;
        let mut row = vec![fmt_num(x), fmt_num(h), fmt_num(v), curve.branch().as_str().to_string(), factor.clone()];
        if let Some(s) = state {
            row.push(s.as_u8().to_string());
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a curve CSV back into a [`PolicyCurve`].
pub fn read_curve_csv(path: &Path) -> Result<PolicyCurve> {
    let what = path.display().to_string();
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let headers = r.headers().map_err(csv_err)?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Format(format!("{what}: missing column `{name}`")))
    };
    let (cx, ch, cb, cf) = (col("x")?, col("h")?, col("branch_id")?, col("factor")?);
    let (mut xs, mut hs) = (Vec::new(), Vec::new());
    let mut meta: Option<(BranchId, f64)> = None;
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        xs.push(parse_num(&rec[cx], &what)?);
        hs.push(parse_num(&rec[ch], &what)?);
        if meta.is_none() {
            meta = Some((rec[cb].parse()?, parse_num(&rec[cf], &what)?));
        }
    }
    let (branch, factor) = meta.ok_or_else(|| Error::Format(format!("{what}: no rows")))?;
    PolicyCurve::new(branch, FecundityFactor::new(factor)?, xs, hs)
}

fn curve_state(policy: &PiecewisePolicy, curve: &Arc<PolicyCurve>) -> Option<HysteresisState> {
    if policy.dynamics() != Dynamics::Hysteretic {
        return None;
    }
    [HysteresisState::Low, HysteresisState::High]
        .into_iter()
        .find(|&s| policy.segments(s).iter().any(|seg| Arc::ptr_eq(&seg.curve, curve)))
}

struct Summary {
    regime: Regime,
    skiba: f64,
    skiba_undefined: bool,
    steady_state_high: Option<SteadyState>,
    steady_state_low: Option<SteadyState>,
    permanent_collapse: Option<bool>,
    post_recovery: Option<PostRecovery>,
    x_max: f64,
    warnings: Vec<String>,
}

fn write_policy(dir: &Path, policy: &PiecewisePolicy, summary: Summary) -> Result<SolutionRecord> {
    fs::create_dir_all(dir)?;
    let p = policy.params();
    let mut curves = Vec::new();
    for curve in policy.curves() {
        let state = curve_state(policy, &curve);
        let file = curve_file(curve.branch());
        write_curve_csv(&dir.join(&file), &curve, p, state)?;
        curves.push(CurveRecord {
            branch: curve.branch(),
            factor: curve.factor().value(),
            state,
            file,
            points: curve.len(),
            x_lo: curve.x_lo(),
            x_hi: curve.x_hi(),
        });
    }
    let segments = policy
        .tables()
        .iter()
        .map(|t| {
            t.iter()
                .map(|seg| SegmentRecord {
                    branch: seg.curve.branch(),
                    lo: seg.lo,
                    hi: seg.hi,
                })
                .collect()
        })
        .collect();
    let record = SolutionRecord {
        regime: summary.regime,
        hysteretic: policy.dynamics() == Dynamics::Hysteretic,
        skiba: summary.skiba,
        skiba_undefined: summary.skiba_undefined,
        steady_state_high: summary.steady_state_high,
        steady_state_low: summary.steady_state_low,
        permanent_collapse: summary.permanent_collapse,
        post_recovery: summary.post_recovery,
        x_max: summary.x_max,
        params: *p,
        dynamics: policy.dynamics(),
        curves,
        segments,
        absorbing: policy.absorbing().to_vec(),
        warnings: summary.warnings,
    };
    fs::write(dir.join(SOLUTION_FILE), serde_json::to_string_pretty(&record)?)?;
    Ok(record)
}

/// Writes `solution.json` and one `curve_<branch>.csv` per curve.
pub fn write_solution(dir: &Path, sol: &FullSolution) -> Result<SolutionRecord> {
    write_policy(
        dir,
        &sol.policy,
        Summary {
            regime: sol.regime,
            skiba: sol.skiba,
            skiba_undefined: sol.low.skiba_undefined,
            steady_state_high: sol.steady_state_high,
            steady_state_low: sol.steady_state_low,
            permanent_collapse: None,
            post_recovery: None,
            x_max: sol.x_max,
            warnings: sol.warnings.clone(),
        },
    )
}

pub fn write_hysteretic_solution(dir: &Path, sol: &HystSolution) -> Result<SolutionRecord> {
    let p = sol.params();
    let low = crate::model::notional_steady_state(p.low_factor(), p);
    let low_reached = sol.policy.absorbing().iter().any(|a| a.state == Some(HysteresisState::Low));
    write_policy(
        dir,
        &sol.policy,
        Summary {
            regime: sol.regime,
            skiba: sol.skiba_h,
            skiba_undefined: sol.low.skiba_undefined,
            steady_state_high: (sol.regime != Regime::NoHighSteadyState).then_some(sol.high.steady_state),
            steady_state_low: low_reached.then_some(low),
            permanent_collapse: Some(sol.permanent_collapse),
            post_recovery: sol.post_recovery,
            x_max: sol.x_max,
            warnings: sol.warnings.clone(),
        },
    )
}

pub fn read_solution_record(dir: &Path) -> Result<SolutionRecord> {
    let text = fs::read_to_string(dir.join(SOLUTION_FILE))?;
    Ok(serde_json::from_str(&text)?)
}

/// Rebuilds the policy written by [`write_solution`] or
/// [`write_hysteretic_solution`].
pub fn load_policy(dir: &Path) -> Result<(SolutionRecord, PiecewisePolicy)> {
    let record = read_solution_record(dir)?;
    let mut curves: Vec<Arc<PolicyCurve>> = Vec::new();
    for c in &record.curves {
        let curve = read_curve_csv(&dir.join(&c.file))?;
        if curve.branch() != c.branch || curve.len() != c.points {
            return Err(Error::Format(format!(
                "{}: expected {} with {} points, found {} with {}",
                c.file,
                c.branch,
                c.points,
                curve.branch(),
                curve.len()
            )));
        }
        curves.push(Arc::new(curve));
    }
    let tables = record
        .segments
        .iter()
        .map(|t| {
            t.iter()
                .map(|seg| {
                    let curve = curves
                        .iter()
                        .find(|c| c.branch() == seg.branch)
                        .cloned()
                        .ok_or_else(|| Error::Format(format!("segment refers to missing curve {}", seg.branch)))?;
                    Ok(Segment {
                        curve,
                        lo: seg.lo,
                        hi: seg.hi,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let policy = PiecewisePolicy::new(record.params, record.dynamics, tables, record.absorbing.clone())?;
    Ok((record, policy))
}

/// Writes `x,s,V,h_greedy`.
pub fn write_dp_csv(path: &Path, res: &DpResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["x", "s", "V", "h_greedy"]).map_err(csv_err)?;
    for (x, s, v, h) in res.rows() {
        w.write_record([fmt_num(x), s.as_u8().to_string(), fmt_num(v), fmt_num(h)])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `t,x,h,s,event`; the event column is empty except on event rows.
pub fn write_trajectory_csv(path: &Path, traj: &Trajectory) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["t", "x", "h", "s", "event"]).map_err(csv_err)?;
    for s in &traj.samples {
        w.write_record([
            fmt_num(s.t),
            fmt_num(s.x),
            fmt_num(s.h),
            s.s.as_u8().to_string(),
            s.event.map(|e| e.as_str()).unwrap_or("").to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
