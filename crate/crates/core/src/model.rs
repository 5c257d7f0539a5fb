//! Model primitives: parameters, recruitment, CRRA welfare and the
//! current-value Hamiltonian.
//!
//! Recruitment is the power family `f(x) = A * x^alpha` with `0 < alpha < 1`,
//! which is strictly increasing, strictly concave, vanishes at zero and
//! satisfies both Inada conditions. Low fecundity scales it by `pi`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Harvest floor used by every search over `h`; `u(h)` diverges as `h -> 0`
/// when `sigma >= 1`.
pub const H_MIN: f64 = 1e-12;

/// `sigma` values this close to one use the logarithmic branch of `u`.
const LOG_BRANCH_BAND: f64 = 1e-12;

fn default_scale() -> f64 {
    1.0
}

fn default_alpha() -> f64 {
    0.5
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    /// Relative risk aversion.
    pub sigma: f64,
    /// Social discount rate.
    pub rho: f64,
    /// Tipping penalty: low-fecundity recruitment is `pi * f(x)`.
    pub pi: f64,
    /// High-fecundity tipping point.
    pub x_p: f64,
    /// Low-fecundity tipping point of the hysteretic model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_p_h: Option<f64>,
    /// Recruitment scale `A`.
    #[serde(rename = "A", default = "default_scale")]
    pub scale: f64,
    /// Recruitment curvature exponent.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            sigma: 1.0,
            rho: 0.05,
            pi: 0.5,
            x_p: 16.0,
            x_p_h: None,
            scale: 1.0,
            alpha: 0.5,
        }
    }
}

impl ModelParams {
    pub fn new(
        sigma: f64,
        rho: f64,
        pi: f64,
        x_p: f64,
        x_p_h: Option<f64>,
        scale: f64,
        alpha: f64,
    ) -> Result<Self> {
        let p = Self {
            sigma,
            rho,
            pi,
            x_p,
            x_p_h,
            scale,
            alpha,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_x_p(mut self, x_p: f64) -> Self {
        self.x_p = x_p;
        self
    }

    pub fn with_pi(mut self, pi: f64) -> Self {
        self.pi = pi;
        self
    }

    pub fn with_rho(mut self, rho: f64) -> Self {
        self.rho = rho;
        self
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self
    }

    pub fn with_x_p_h(mut self, x_p_h: Option<f64>) -> Self {
        self.x_p_h = x_p_h;
        self
    }

    pub fn validate(&self) -> Result<()> {
        fn check(ok: bool, msg: &str) -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::InvalidParams(msg.to_string()))
            }
        }
        check(self.sigma.is_finite() && self.sigma > 0.0, "sigma must satisfy sigma > 0")?;
        check(self.rho.is_finite() && self.rho > 0.0, "rho must satisfy rho > 0")?;
        check(self.scale.is_finite() && self.scale > 0.0, "A must satisfy A > 0")?;
        check(
            self.alpha > 0.0 && self.alpha < 1.0,
            "alpha must satisfy 0 < alpha < 1",
        )?;
        check(self.x_p.is_finite() && self.x_p > 0.0, "x_p must satisfy x_p > 0")?;
        check(self.pi > 0.0 && self.pi < 1.0, "pi must satisfy 0 < pi < 1")?;
        if let Some(xh) = self.x_p_h {
            check(xh.is_finite() && xh > self.x_p, "x_p_h must satisfy x_p_h > x_p")?;
        }
        Ok(())
    }

    pub fn x_p_h(&self) -> Result<f64> {
        self.x_p_h.ok_or(Error::MissingHysteresisThreshold)
    }

    pub fn low_factor(&self) -> FecundityFactor {
        FecundityFactor(self.pi)
    }

    /// `A * x^alpha`, unchecked.
    #[inline]
    pub fn f_tilde(&self, x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else {
            self.scale * x.powf(self.alpha)
        }
    }

    #[inline]
    pub fn f_tilde_prime(&self, x: f64) -> f64 {
        self.scale * self.alpha * x.powf(self.alpha - 1.0)
    }

    #[inline]
    pub fn f_tilde_second(&self, x: f64) -> f64 {
        self.scale * self.alpha * (self.alpha - 1.0) * x.powf(self.alpha - 2.0)
    }

    /// Tipping recruitment, unchecked. The boundary `x = x_p` is high.
    #[inline]
    pub fn f_tipping(&self, x: f64) -> f64 {
        if x >= self.x_p {
            self.f_tilde(x)
        } else {
            self.pi * self.f_tilde(x)
        }
    }
}

/// Multiplier on the base recruitment, in `(0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct FecundityFactor(f64);

impl FecundityFactor {
    pub const HIGH: FecundityFactor = FecundityFactor(1.0);

    pub fn new(factor: f64) -> Result<Self> {
        if factor > 0.0 && factor <= 1.0 {
            Ok(Self(factor))
        } else {
            Err(Error::InvalidParams(format!(
                "fecundity factor must lie in (0, 1], got {factor}"
            )))
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for FecundityFactor {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<FecundityFactor> for f64 {
    fn from(f: FecundityFactor) -> f64 {
        f.0
    }
}

/// Binary fecundity state of the hysteretic model (`s = 0` low, `s = 1` high).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HysteresisState {
    Low,
    High,
}

impl HysteresisState {
    pub fn as_u8(self) -> u8 {
        match self {
            HysteresisState::Low => 0,
            HysteresisState::High => 1,
        }
    }

    pub fn from_u8(s: u8) -> Result<Self> {
        match s {
            0 => Ok(HysteresisState::Low),
            1 => Ok(HysteresisState::High),
            other => Err(Error::InvalidParams(format!(
                "hysteresis state must be 0 or 1, got {other}"
            ))),
        }
    }

    pub fn index(self) -> usize {
        self.as_u8() as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SteadyState {
    pub x: f64,
    pub h: f64,
}

fn check_stock(x: f64) -> Result<()> {
    if x >= 0.0 {
        Ok(())
    } else {
        Err(Error::NegativeStock(x))
    }
}

fn check_harvest(h: f64) -> Result<()> {
    if h > 0.0 {
        Ok(())
    } else {
        Err(Error::NonPositiveHarvest(h))
    }
}

pub fn recruit_smooth(x: f64, factor: FecundityFactor, p: &ModelParams) -> Result<f64> {
    check_stock(x)?;
    Ok(factor.value() * p.f_tilde(x))
}

pub fn recruit_tipping(x: f64, p: &ModelParams) -> Result<f64> {
    check_stock(x)?;
    Ok(p.f_tipping(x))
}

/// State-indexed recruitment. Does not switch the state; see [`next_state`].
pub fn recruit_hysteretic(x: f64, s: HysteresisState, p: &ModelParams) -> Result<f64> {
    check_stock(x)?;
    p.x_p_h()?;
    Ok(match s {
        HysteresisState::Low => p.pi * p.f_tilde(x),
        HysteresisState::High => p.f_tilde(x),
    })
}

pub fn next_state(x: f64, s: HysteresisState, p: &ModelParams) -> Result<HysteresisState> {
    check_stock(x)?;
    let x_p_h = p.x_p_h()?;
    Ok(next_state_unchecked(x, s, p.x_p, x_p_h))
}

#[inline]
pub(crate) fn next_state_unchecked(
    x: f64,
    s: HysteresisState,
    x_p: f64,
    x_p_h: f64,
) -> HysteresisState {
    if x < x_p {
        HysteresisState::Low
    } else if x >= x_p_h {
        HysteresisState::High
    } else {
        s
    }
}

#[inline]
fn is_log_branch(sigma: f64) -> bool {
    (sigma - 1.0).abs() <= LOG_BRANCH_BAND
}

/// CRRA welfare flow, unchecked (`h > 0` assumed).
#[inline]
pub fn utility_unchecked(h: f64, sigma: f64) -> f64 {
    if is_log_branch(sigma) {
        h.ln()
    } else {
        h.powf(1.0 - sigma) / (1.0 - sigma)
    }
}

#[inline]
pub fn marginal_utility_unchecked(h: f64, sigma: f64) -> f64 {
    h.powf(-sigma)
}

#[inline]
pub fn utility_second_unchecked(h: f64, sigma: f64) -> f64 {
    -sigma * h.powf(-sigma - 1.0)
}

pub fn utility(h: f64, sigma: f64) -> Result<f64> {
    check_harvest(h)?;
    Ok(utility_unchecked(h, sigma))
}

pub fn marginal_utility(h: f64, sigma: f64) -> Result<f64> {
    check_harvest(h)?;
    Ok(marginal_utility_unchecked(h, sigma))
}

/// `u(h) + lambda * (factor * f(x) - h)`.
pub fn hamiltonian(
    x: f64,
    h: f64,
    lambda: f64,
    factor: FecundityFactor,
    p: &ModelParams,
) -> Result<f64> {
    let f = recruit_smooth(x, factor, p)?;
    Ok(utility(h, p.sigma)? + lambda * (f - h))
}

/// Current-value Hamiltonian with the costate at its first-order value
/// `u'(h)`. This is `rho * V` along an optimal branch.
#[inline]
pub(crate) fn hamiltonian_at_foc(x: f64, h: f64, factor: f64, p: &ModelParams) -> f64 {
    utility_unchecked(h, p.sigma) + marginal_utility_unchecked(h, p.sigma) * (factor * p.f_tilde(x) - h)
}

/// Derivative in `h` of `H(x, h, u'(h))`: `u''(h) * (factor * f(x) - h)`.
pub fn hamiltonian_dh(x: f64, h: f64, factor: FecundityFactor, p: &ModelParams) -> Result<f64> {
    let f = recruit_smooth(x, factor, p)?;
    check_harvest(h)?;
    Ok(utility_second_unchecked(h, p.sigma) * (f - h))
}

/// Stationary point of the smooth problem: `factor * f'(x) = rho`.
pub fn notional_steady_state(factor: FecundityFactor, p: &ModelParams) -> SteadyState {
    let a = factor.value() * p.scale;
    let x = (a * p.alpha / p.rho).powf(1.0 / (1.0 - p.alpha));
    SteadyState {
        x,
        h: a * x.powf(p.alpha),
    }
}

/// Optimal policy of the cake-eating limit (`pi = 0`, no regrowth):
/// `h = rho * x / sigma`.
pub fn cake_eating_policy(x: f64, p: &ModelParams) -> f64 {
    p.rho * x / p.sigma
}
