//! Dormand–Prince 5(4) integrator with dense output.
//!
//! The integrator hands every accepted step to a callback together with a
//! continuous extension, so callers can resample, locate events and decide
//! when to stop without the integrator knowing about either.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-12,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

// Butcher tableau
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

// dense output
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// One accepted step with its continuous extension.
#[derive(Clone, Debug)]
pub struct Step<const N: usize> {
    pub t0: f64,
    pub t1: f64,
    pub y0: [f64; N],
    pub y1: [f64; N],
    rcont: [[f64; N]; 5],
}

impl<const N: usize> Step<N> {
    /// Fourth-order interpolant on `[t0, t1]`.
    pub fn dense(&self, t: f64) -> [f64; N] {
        let dt = self.t1 - self.t0;
        let theta = if dt == 0.0 { 1.0 } else { (t - self.t0) / dt };
        let theta1 = 1.0 - theta;
        let r = &self.rcont;
        let mut out = [0.0; N];
        for i in 0..N {
            out[i] = r[0][i]
                + theta * (r[1][i] + theta1 * (r[2][i] + theta * (r[3][i] + theta1 * r[4][i])));
        }
        out
    }

    /// Bisection for a sign change of `g` along the dense output.
    /// Returns `(t, y)` at the root; `g(y0)` and `g(y1)` must bracket it.
    pub fn locate<G: Fn(&[f64; N]) -> f64>(&self, g: G, t_tol: f64) -> (f64, [f64; N]) {
        let (mut a, mut b) = (self.t0, self.t1);
        let mut ga = g(&self.y0);
        if ga == 0.0 {
            return (a, self.y0);
        }
        for _ in 0..200 {
            if (b - a).abs() <= t_tol {
                break;
            }
            let m = 0.5 * (a + b);
            if m == a || m == b {
                break;
            }
            let gm = g(&self.dense(m));
            if gm == 0.0 {
                return (m, self.dense(m));
            }
            if (gm > 0.0) == (ga > 0.0) {
                a = m;
                ga = gm;
            } else {
                b = m;
            }
        }
        (b, if b == self.t1 { self.y1 } else { self.dense(b) })
    }

    /// Bisection restricted to `[ta, tb]` within the step.
    pub(crate) fn locate_in<G: Fn(&[f64; N]) -> f64>(&self, g: G, ta: f64, tb: f64) -> (f64, [f64; N]) {
        let ya = if ta == self.t0 { self.y0 } else { self.dense(ta) };
        let yb = if tb == self.t1 { self.y1 } else { self.dense(tb) };
        let (mut a, mut b) = (ta, tb);
        let ga = g(&ya);
        let gb = g(&yb);
        if ga == 0.0 {
            return (a, ya);
        }
        if gb == 0.0 || (ga > 0.0) == (gb > 0.0) {
            return (b, yb);
        }
        let mut ga = ga;
        loop {
            let m = 0.5 * (a + b);
            if m <= a.min(b) || m >= a.max(b) {
                break;
            }
            let gm = g(&self.dense(m));
            if gm == 0.0 {
                return (m, self.dense(m));
            }
            if (gm > 0.0) == (ga > 0.0) {
                a = m;
                ga = gm;
            } else {
                b = m;
            }
        }
        (b, self.dense(b))
    }
}

#[derive(Clone, Debug)]
pub struct Dopri5 {
    pub tol: Tolerances,
    pub max_steps: usize,
    pub h_init: Option<f64>,
}

impl Default for Dopri5 {
    fn default() -> Self {
        Self {
            tol: Tolerances::default(),
            max_steps: 2_000_000,
            h_init: None,
        }
    }
}

#[inline]
fn axpy<const N: usize>(y: &[f64; N], h: f64, terms: &[(f64, &[f64; N])]) -> [f64; N] {
    let mut out = *y;
    for i in 0..N {
        let mut acc = 0.0;
        for (c, k) in terms {
            acc += c * k[i];
        }
        out[i] += h * acc;
    }
    out
}

impl Dopri5 {
    pub fn new(tol: Tolerances) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }

    fn err_norm<const N: usize>(&self, y0: &[f64; N], y1: &[f64; N], err: &[f64; N]) -> f64 {
        let mut s = 0.0;
        for i in 0..N {
            let sc = self.tol.atol + self.tol.rtol * y0[i].abs().max(y1[i].abs());
            s += (err[i] / sc).powi(2);
        }
        (s / N as f64).sqrt()
    }

    fn initial_step<const N: usize, F>(&self, rhs: &F, t0: f64, y0: &[f64; N], dir: f64) -> f64
    where
        F: Fn(f64, &[f64; N]) -> [f64; N],
    {
        let f0 = rhs(t0, y0);
        let mut d0 = 0.0;
        let mut d1 = 0.0;
        for i in 0..N {
            let sc = self.tol.atol + self.tol.rtol * y0[i].abs();
            d0 += (y0[i] / sc).powi(2);
            d1 += (f0[i] / sc).powi(2);
        }
        d0 = (d0 / N as f64).sqrt();
        d1 = (d1 / N as f64).sqrt();
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        let y1 = axpy(y0, dir * h0, &[(1.0, &f0)]);
        let f1 = rhs(t0 + dir * h0, &y1);
        let mut d2 = 0.0;
        for i in 0..N {
            let sc = self.tol.atol + self.tol.rtol * y0[i].abs();
            d2 += ((f1[i] - f0[i]) / sc).powi(2);
        }
        d2 = (d2 / N as f64).sqrt() / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        (100.0 * h0).min(h1)
    }

    /// Integrates `y' = rhs(t, y)` from `t0` towards `t_end`, calling
    /// `on_step` after every accepted step. Returns the last accepted
    /// `(t, y)`, which is `t_end` unless the callback stopped early.
    pub fn integrate<const N: usize, F, C>(
        &self,
        context: &str,
        rhs: F,
        t0: f64,
        y0: [f64; N],
        t_end: f64,
        mut on_step: C,
    ) -> Result<(f64, [f64; N])>
    where
        F: Fn(f64, &[f64; N]) -> [f64; N],
        C: FnMut(&Step<N>) -> Control,
    {
        let span = t_end - t0;
        if span == 0.0 {
            return Ok((t0, y0));
        }
        let dir = span.signum();
        let mut t = t0;
        let mut y = y0;
        let mut h = self
            .h_init
            .unwrap_or_else(|| self.initial_step(&rhs, t0, &y0, dir))
            .abs()
            .min(span.abs());
        let mut k1 = rhs(t, &y);
        let mut steps = 0usize;
        let mut last_rejected = false;

        let fail = |t: f64, y: &[f64; N], reason: &str| Error::Integration {
            context: context.to_string(),
            t,
            state: y.to_vec(),
            reason: reason.to_string(),
        };

        while (t_end - t) * dir > 0.0 {
            steps += 1;
            if steps > self.max_steps {
                return Err(fail(t, &y, "step budget exhausted"));
            }
            if h < 1e-14 * t.abs().max(1.0) {
                return Err(fail(t, &y, "step size underflow"));
            }
            let hs = if (t + dir * h - t_end) * dir > 0.0 {
                (t_end - t).abs()
            } else {
                h
            };
            let sh = dir * hs;

            let k2 = rhs(t + C2 * sh, &axpy(&y, sh, &[(A21, &k1)]));
            let k3 = rhs(t + C3 * sh, &axpy(&y, sh, &[(A31, &k1), (A32, &k2)]));
            let k4 = rhs(
                t + C4 * sh,
                &axpy(&y, sh, &[(A41, &k1), (A42, &k2), (A43, &k3)]),
            );
            let k5 = rhs(
                t + C5 * sh,
                &axpy(&y, sh, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]),
            );
            let k6 = rhs(
                t + sh,
                &axpy(
                    &y,
                    sh,
                    &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)],
                ),
            );
            let y_new = axpy(
                &y,
                sh,
                &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)],
            );
            let k7 = rhs(t + sh, &y_new);

            let mut err = [0.0; N];
            for i in 0..N {
                err[i] = sh
                    * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            }
            let en = self.err_norm(&y, &y_new, &err);
            if !en.is_finite() || y_new.iter().any(|v| !v.is_finite()) {
                h = 0.25 * hs;
                last_rejected = true;
                continue;
            }
            if en <= 1.0 {
                let mut rcont = [[0.0; N]; 5];
                for i in 0..N {
                    let ydiff = y_new[i] - y[i];
                    let bspl = sh * k1[i] - ydiff;
                    rcont[0][i] = y[i];
                    rcont[1][i] = ydiff;
                    rcont[2][i] = bspl;
                    rcont[3][i] = ydiff - sh * k7[i] - bspl;
                    rcont[4][i] = sh
                        * (D1 * k1[i]
                            + D3 * k3[i]
                            + D4 * k4[i]
                            + D5 * k5[i]
                            + D6 * k6[i]
                            + D7 * k7[i]);
                }
                let t_new = if hs == (t_end - t).abs() { t_end } else { t + sh };
                let step = Step {
                    t0: t,
                    t1: t_new,
                    y0: y,
                    y1: y_new,
                    rcont,
                };
                t = t_new;
                y = y_new;
                k1 = k7;
                if on_step(&step) == Control::Stop {
                    return Ok((t, y));
                }
                let mut fac = 0.9 * en.max(1e-10).powf(-0.2);
                fac = fac.clamp(0.2, 10.0);
                if last_rejected {
                    fac = fac.min(1.0);
                }
                h = hs * fac;
                last_rejected = false;
            } else {
                let fac = (0.9 * en.powf(-0.2)).max(0.2);
                h = hs * fac;
                last_rejected = true;
            }
        }
        Ok((t, y))
    }
}
