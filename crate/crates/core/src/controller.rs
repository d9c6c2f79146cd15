//! Block-wise feedback law through the persistence filters, decay-rate
//! selection and the adaptive variant for plants in canonical form with
//! unknown companion coefficients.

use std::fmt;

use nalgebra::DVector;

use crate::augmentation::{build_block_law, build_omega_map, BlockLaw, BlockSignals, CanonicalRows, OmegaMap};
use crate::error::{Error, Result};
use crate::gains::GainSignal;
use crate::lti::CanonicalData;
use crate::pfilter::k_exponent;

/// Gershgorin-type bound on the spectrum of `A_jj + A_jj^T` for block `j`.
///
/// The last-row bound is taken as the larger of `1 - alpha_{j,1} + sum`
/// and `1 - 2 alpha_{j,1} + sum`; the diagonal entry of the symmetrized
/// companion block is `-2 alpha_{j,1}`.
pub fn lambda_star(alpha: &[f64]) -> f64 {
    let r = alpha.len();
    let a = |i: usize| alpha[i - 1];
    let mut best = 1.0 + a(r).abs();
    for l in 2..r {
        best = best.max(2.0 + a(r - l + 1).abs());
    }
    let tail: f64 = (1..r).map(|i| a(r - i + 1).abs()).sum();
    best = best.max(1.0 - a(1) + tail);
    best.max(1.0 - 2.0 * a(1) + tail)
}

/// Coupling allowance that `gamma_j` must exceed for block `j`.
pub fn coupling_requirement(cd: &CanonicalData, j: usize) -> f64 {
    let p = cd.p();
    if p == 1 {
        return 0.0;
    }
    let down: f64 = (j + 1..=p).map(|s| cd.coupling_norm(j, s)).sum();
    let up: f64 = (1..j).map(|k| cd.coupling_norm(k, j)).sum();
    if j == 1 {
        down
    } else if j == p {
        up
    } else {
        down + 2.0 * up
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveConfig {
    /// `nu_j`.
    pub nu: Vec<f64>,
    /// `eta[j-1][i-1]` drives `alpha_hat_{j, r_j - i + 1}`.
    pub eta: Vec<Vec<f64>>,
    pub lambda_hat0: Vec<f64>,
    /// `alpha_hat0[j-1][m-1]` is the initial `alpha_hat_{j,m}`.
    pub alpha_hat0: Vec<Vec<f64>>,
    /// Optional clamp on `lambda_hat`, off by default.
    pub lambda_ceiling: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerConfig {
    pub lambdas: Vec<f64>,
    pub lambda_star: Vec<f64>,
    /// Coupling allowance per block.
    pub coupling: Vec<f64>,
    pub slack: f64,
    /// `lambda_j - lambda*_j`.
    pub gamma: Vec<f64>,
    pub k: u32,
    pub adaptive: Option<AdaptiveConfig>,
}

/// Smallest decay parameters meeting every block inequality, plus `slack`.
pub fn select_lambdas(cd: &CanonicalData, slack: f64) -> Result<ControllerConfig> {
    if !(slack >= 0.0) {
        return Err(Error::InvalidArgument(format!("slack must be non-negative, got {slack}")));
    }
    let p = cd.p();
    let lambda_star: Vec<f64> = (1..=p).map(|j| lambda_star(&cd.alpha[j - 1])).collect();
    let coupling: Vec<f64> = (1..=p).map(|j| coupling_requirement(cd, j)).collect();
    let lambdas: Vec<f64> = (0..p).map(|i| lambda_star[i] + coupling[i] + slack).collect();
    Ok(ControllerConfig {
        gamma: (0..p).map(|i| lambdas[i] - lambda_star[i]).collect(),
        lambdas,
        lambda_star,
        coupling,
        slack,
        k: k_exponent(cd.max_r()),
        adaptive: None,
    })
}

impl ControllerConfig {
    /// Config with user-chosen decay parameters.
    pub fn with_lambdas(cd: &CanonicalData, lambdas: Vec<f64>) -> Result<Self> {
        if lambdas.len() != cd.p() {
            return Err(Error::Dimension(format!("{} lambdas for {} blocks", lambdas.len(), cd.p())));
        }
        let mut cfg = select_lambdas(cd, 0.0)?;
        cfg.gamma = (0..cd.p()).map(|i| lambdas[i] - cfg.lambda_star[i]).collect();
        cfg.slack = (0..cd.p()).map(|i| cfg.gamma[i] - cfg.coupling[i]).fold(f64::INFINITY, f64::min);
        cfg.lambdas = lambdas;
        Ok(cfg)
    }

    /// Per-block margin `gamma_j - coupling_j`; all must be positive.
    pub fn margins(&self) -> Vec<f64> {
        self.gamma.iter().zip(&self.coupling).map(|(g, c)| g - c).collect()
    }
}

impl fmt::Display for ControllerConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "k = {}", self.k)?;
        writeln!(f, "slack = {}", self.slack)?;
        for j in 0..self.lambdas.len() {
            writeln!(
                f,
                "block {}: lambda = {}, lambda_star = {}, gamma = {}, coupling = {}",
                j + 1,
                self.lambdas[j],
                self.lambda_star[j],
                self.gamma[j],
                self.coupling[j]
            )?;
        }
        if let Some(a) = &self.adaptive {
            writeln!(f, "adaptive: nu = {:?}, eta = {:?}, lambda_hat0 = {:?}", a.nu, a.eta, a.lambda_hat0)?;
        }
        Ok(())
    }
}

/// Guaranteed decay rate of the amalgamated Lyapunov function.
pub fn sigma_estimate(config: &ControllerConfig, cd: &CanonicalData) -> Result<f64> {
    let p = cd.p();
    let g = |j: usize| config.gamma[j - 1];
    let down = |j: usize| -> f64 { (j + 1..=p).map(|s| cd.coupling_norm(j, s)).sum() };
    let sigma = if p == 1 {
        g(1)
    } else {
        let mut s = (g(p) / 2.0).min(g(1) - down(1));
        for b in 2..p {
            s = s.min((g(b) - down(b)) / 2.0);
        }
        s
    };
    if sigma > 0.0 {
        Ok(sigma)
    } else {
        Err(Error::NonPositiveRate { sigma })
    }
}

/// Feedback law bound to a canonical plant and its channel gains.
#[derive(Debug, Clone)]
pub struct Controller {
    pub cd: CanonicalData,
    /// One gain per plant input.
    pub gains: Vec<GainSignal>,
    pub config: ControllerConfig,
    pub map: OmegaMap,
    pub laws: Vec<BlockLaw>,
    orders: Vec<usize>,
}

/// Outputs of the adaptive law.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveOutput {
    pub u: DVector<f64>,
    /// `alpha_hat_rates[j-1][m-1]` is `d/dt alpha_hat_{j,m}`.
    pub alpha_hat_rates: Vec<Vec<f64>>,
    pub lambda_hat_rates: Vec<f64>,
}

impl Controller {
    pub fn new(cd: CanonicalData, gains: Vec<GainSignal>, config: ControllerConfig) -> Result<Self> {
        if gains.len() != cd.m() {
            return Err(Error::Dimension(format!("{} gains for {} inputs", gains.len(), cd.m())));
        }
        if config.lambdas.len() != cd.p() {
            return Err(Error::Dimension(format!("{} lambdas for {} blocks", config.lambdas.len(), cd.p())));
        }
        if let Some(a) = &config.adaptive {
            let ok = a.nu.len() == cd.p()
                && a.lambda_hat0.len() == cd.p()
                && a.eta.iter().zip(&cd.r).all(|(e, &r)| e.len() == r)
                && a.alpha_hat0.iter().zip(&cd.r).all(|(e, &r)| e.len() == r)
                && a.eta.len() == cd.p()
                && a.alpha_hat0.len() == cd.p();
            if !ok {
                return Err(Error::Dimension("adaptive parameters do not match the block sizes".into()));
            }
            if a.nu.iter().chain(a.eta.iter().flatten()).any(|v| !(*v > 0.0)) {
                return Err(Error::InvalidArgument("adaptation gains must be positive".into()));
            }
        }
        let rows = CanonicalRows::new(&cd, config.adaptive.is_none());
        let map = build_omega_map(&cd, &rows, config.k)?;
        let laws = (1..=cd.p()).map(|j| build_block_law(&map, &rows, &cd, j)).collect::<Result<Vec<_>>>()?;
        let orders: Vec<usize> = laws.iter().map(BlockLaw::max_order).collect();
        for (j, &ord) in orders.iter().enumerate() {
            let avail = gains[cd.block_inputs[j]].max_smooth_order();
            if ord > avail {
                return Err(Error::OrderUnavailable { requested: ord, available: avail });
            }
        }
        Ok(Self { cd, gains, config, map, laws, orders })
    }

    /// Non-adaptive controller with decay parameters from [`select_lambdas`].
    pub fn theorem1(cd: CanonicalData, gains: Vec<GainSignal>, slack: f64) -> Result<Self> {
        let cfg = select_lambdas(&cd, slack)?;
        Self::new(cd, gains, cfg)
    }

    pub fn p(&self) -> usize {
        self.cd.p()
    }

    pub fn block_gain(&self, j: usize) -> &GainSignal {
        &self.gains[self.cd.block_inputs[j - 1]]
    }

    pub fn is_adaptive(&self) -> bool {
        self.config.adaptive.is_some()
    }

    /// Gain derivative order block `j` needs.
    pub fn required_order(&self, j: usize) -> usize {
        self.orders[j - 1]
    }

    /// Coefficient inputs of every block at time `t`.
    pub fn signals(&self, t: f64, r: &[f64], lambdas: &[f64]) -> Result<Vec<BlockSignals>> {
        (1..=self.p())
            .map(|j| {
                Ok(BlockSignals {
                    g: self.block_gain(j).derivatives(t, self.orders[j - 1])?,
                    r: r[j - 1],
                    lambda: lambdas[j - 1],
                })
            })
            .collect()
    }

    /// Control in plant-input order from canonical state `z`, evaluated
    /// block by block from `p` down to 1. `alpha` overrides the companion
    /// coefficients (adaptive mode).
    pub fn control_z(&self, z: &[f64], sig: &[BlockSignals], alpha: Option<&[Vec<f64>]>) -> Result<DVector<f64>> {
        let p = self.p();
        let mut u = DVector::zeros(self.cd.m());
        let mut w: Vec<Option<f64>> = vec![None; p];
        for j in (1..=p).rev() {
            let law = &self.laws[j - 1];
            let s = &sig[j - 1];
            let rj = self.cd.r_of(j);
            let alpha_j = alpha.map_or(&self.cd.alpha[j - 1], |a| &a[j - 1]);
            let mut v = 0.0;
            for i in 2..=rj {
                v -= alpha_j[rj - i] * law.residual_over_g[i - 1].eval(z, s, &w, j)?;
            }
            v -= law.residual_derivative_over_g.eval(z, s, &w, j)?;
            v -= law.damping.eval(z, s, &w, j)?;
            u[self.cd.block_inputs[j - 1]] = v;
            w[j - 1] = Some(s.g[0] * v);
        }
        Ok(u)
    }

    /// Feedback `u(x, t)` given the filter states `r` (one per block).
    pub fn control(&self, x: &[f64], t: f64, r: &[f64]) -> Result<DVector<f64>> {
        let z = &self.cd.t * DVector::from_column_slice(x);
        let sig = self.signals(t, r, &self.config.lambdas)?;
        self.control_z(z.as_slice(), &sig, None)
    }

    /// Adaptive law for a plant given in canonical coordinates.
    pub fn control_adaptive(
        &self,
        z: &[f64],
        t: f64,
        r: &[f64],
        lambda_hat: &[f64],
        alpha_hat: &[Vec<f64>],
    ) -> Result<AdaptiveOutput> {
        let cfg = self
            .config
            .adaptive
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("controller was built without adaptive parameters".into()))?;
        let sig = self.signals(t, r, lambda_hat)?;
        let u = self.control_z(z, &sig, Some(alpha_hat))?;
        let omega = self.map.eval(z, &sig);
        let mut alpha_rates = Vec::with_capacity(self.p());
        let mut lambda_rates = Vec::with_capacity(self.p());
        for j in 1..=self.p() {
            let rj = self.cd.r_of(j);
            let range = self.cd.block_range(j);
            let om = &omega.as_slice()[range.clone()];
            let norm2: f64 = om.iter().map(|v| v * v).sum();
            let at_ceiling = cfg.lambda_ceiling.is_some_and(|c| lambda_hat[j - 1] >= c);
            lambda_rates.push(if at_ceiling { 0.0 } else { cfg.nu[j - 1] * r[j - 1] * norm2 });
            let mut rates = vec![0.0; rj];
            for i in 1..=rj {
                let resid = om[i - 1] - z[range.start + i - 1];
                rates[rj - i] = 2.0 * cfg.eta[j - 1][i - 1] * r[j - 1] * om[rj - 1] * resid;
            }
            alpha_rates.push(rates);
        }
        Ok(AdaptiveOutput { u, alpha_hat_rates: alpha_rates, lambda_hat_rates: lambda_rates })
    }
}

/// Theorem-style law evaluated for an explicit controller and filter state.
pub fn control_theorem1(ctrl: &Controller, x: &[f64], t: f64, r: &[f64]) -> Result<DVector<f64>> {
    ctrl.control(x, t, r)
}

pub fn control_adaptive(
    ctrl: &Controller,
    z: &[f64],
    t: f64,
    r: &[f64],
    lambda_hat: &[f64],
    alpha_hat: &[Vec<f64>],
) -> Result<AdaptiveOutput> {
    ctrl.control_adaptive(z, t, r, lambda_hat, alpha_hat)
}
