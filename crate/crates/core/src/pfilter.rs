//! Persistence filters `R' = -lambda R + g^k`, with fixed or adaptive decay.

use crate::error::{Error, Result};
use crate::gains::{check_pe, GainSignal, PeSpec};
use crate::sim::{integrate, FnDynamics};

/// `max{2, 2^ceil(log2 r)}`.
pub fn k_exponent(r: usize) -> u32 {
    assert!(r >= 1, "block size must be positive");
    (r.next_power_of_two() as u32).max(2)
}

/// `-lambda R + g^k`.
pub fn filter_rhs(r: f64, g: f64, lambda: f64, k: u32) -> f64 {
    -lambda * r + g.powi(k as i32)
}

/// `nu R ||omega||^2`.
pub fn adaptive_lambda_rhs(nu: f64, r: f64, omega: &[f64]) -> f64 {
    nu * r * omega.iter().map(|w| w * w).sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaMode {
    Fixed(f64),
    /// `lambda_hat' = nu R ||Omega||^2` starting from `lambda0`; an optional
    /// ceiling clamps the estimate.
    Adaptive {
        nu: f64,
        lambda0: f64,
        ceiling: Option<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PersistenceFilter {
    pub r0: f64,
    pub mode: LambdaMode,
    pub k: u32,
}

impl PersistenceFilter {
    pub fn fixed(lambda: f64, k: u32, r0: f64) -> Result<Self> {
        let f = Self { r0, mode: LambdaMode::Fixed(lambda), k };
        f.validate()?;
        Ok(f)
    }

    pub fn adaptive(nu: f64, lambda0: f64, k: u32, r0: f64) -> Result<Self> {
        let f = Self { r0, mode: LambdaMode::Adaptive { nu, lambda0, ceiling: None }, k };
        f.validate()?;
        Ok(f)
    }

    fn validate(&self) -> Result<()> {
        if !(self.r0 > 0.0) || !self.r0.is_finite() {
            return Err(Error::InvalidArgument(format!("filter needs R(0) > 0, got {}", self.r0)));
        }
        if self.k < 2 || !self.k.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!("filter exponent must be even and >= 2, got {}", self.k)));
        }
        match self.mode {
            LambdaMode::Fixed(l) if !(l > 0.0) => {
                Err(Error::InvalidArgument(format!("lambda must be positive, got {l}")))
            }
            LambdaMode::Adaptive { nu, lambda0, .. } if !(nu > 0.0 && lambda0 > 0.0) => Err(Error::InvalidArgument(
                format!("adaptive filter needs nu > 0 and lambda_hat(0) > 0, got {nu}, {lambda0}"),
            )),
            _ => Ok(()),
        }
    }

    pub fn is_adaptive(&self) -> bool {
        matches!(self.mode, LambdaMode::Adaptive { .. })
    }

    /// Fixed lambda, or the initial estimate in adaptive mode.
    pub fn lambda0(&self) -> f64 {
        match self.mode {
            LambdaMode::Fixed(l) => l,
            LambdaMode::Adaptive { lambda0, .. } => lambda0,
        }
    }

    pub fn rhs(&self, r: f64, g: f64, lambda_now: f64) -> f64 {
        filter_rhs(r, g, lambda_now, self.k)
    }

    /// `lambda_hat'`, zero once the ceiling is reached.
    pub fn lambda_rate(&self, r: f64, lambda_now: f64, omega: &[f64]) -> f64 {
        match self.mode {
            LambdaMode::Fixed(_) => 0.0,
            LambdaMode::Adaptive { nu, ceiling, .. } => {
                if ceiling.is_some_and(|c| lambda_now >= c) {
                    0.0
                } else {
                    adaptive_lambda_rhs(nu, r, omega)
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterBounds {
    pub r_min: f64,
    pub r_max: f64,
    /// Certified PE level of the driving gain over the horizon.
    pub eps_hat: f64,
}

/// Integrates the filter driven by `sig` and returns the observed extrema
/// after the first `skip` seconds.
pub fn filter_bounds_estimate(
    sig: &GainSignal,
    lambda: f64,
    k: u32,
    r0: f64,
    horizon: f64,
    dt: f64,
    skip: f64,
) -> Result<FilterBounds> {
    if !(r0 > 0.0 && lambda > 0.0) {
        return Err(Error::InvalidArgument("filter needs R(0) > 0 and lambda > 0".into()));
    }
    if !(skip >= 0.0 && skip < horizon) {
        return Err(Error::InvalidArgument(format!("transient {skip} must lie inside the horizon {horizon}")));
    }
    let window = sig.period().unwrap_or(skip.max(horizon / 4.0)).min(horizon / 2.0);
    let pe =
        check_pe(sig, &PeSpec { window, level: 0.0, horizon, grid_dt: (window / 200.0).min(dt.max(window / 4000.0)) })?;
    if pe.eps_hat <= 0.0 {
        return Err(Error::NotPe { eps_hat: pe.eps_hat });
    }
    let sys = FnDynamics::new(1, |t, x, dx| {
        dx[0] = filter_rhs(x[0], sig.eval(t, 0).unwrap_or(0.0), lambda, k);
    });
    let traj = integrate(&sys, &[r0], 0.0, horizon, dt)?;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (t, r) in traj.times.iter().zip(&traj.states) {
        if *t >= skip - 1e-12 {
            lo = lo.min(*r);
            hi = hi.max(*r);
        }
    }
    Ok(FilterBounds { r_min: lo, r_max: hi, eps_hat: pe.eps_hat })
}
