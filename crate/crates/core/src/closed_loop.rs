//! Closed-loop vector fields for the fixed and adaptive laws, plus the
//! Lyapunov trace used to audit them.

use nalgebra::DVector;

use crate::controller::Controller;
use crate::error::{Error, Result};
use crate::lti::PlantModel;
use crate::sim::{integrate_strided, Dynamics, Trajectory};

/// Plant `x' = A x + B G(t) u` under the fixed law; state `[x; R]`.
pub struct Theorem1System<'a> {
    pub plant: &'a PlantModel,
    pub ctrl: &'a Controller,
}

impl<'a> Theorem1System<'a> {
    pub fn new(plant: &'a PlantModel, ctrl: &'a Controller) -> Result<Self> {
        if plant.n() != ctrl.cd.n() || plant.m() != ctrl.cd.m() {
            return Err(Error::Dimension("plant and controller dimensions differ".into()));
        }
        Ok(Self { plant, ctrl })
    }

    pub fn initial_state(&self, x0: &[f64], r0: f64) -> Vec<f64> {
        let mut s = x0.to_vec();
        s.extend(std::iter::repeat_n(r0, self.ctrl.p()));
        s
    }

    fn split<'s>(&self, s: &'s [f64]) -> (&'s [f64], &'s [f64]) {
        s.split_at(self.plant.n())
    }
}

impl Dynamics for Theorem1System<'_> {
    fn dim(&self) -> usize {
        self.plant.n() + self.ctrl.p()
    }

    fn rhs(&self, t: f64, s: &[f64], ds: &mut [f64]) -> Result<()> {
        let n = self.plant.n();
        let (x, r) = self.split(s);
        let u = self.ctrl.control(x, t, r)?;
        let gu = DVector::from_fn(self.plant.m(), |i, _| self.ctrl.gains[i].eval(t, 0).unwrap_or(0.0) * u[i]);
        let xv = DVector::from_column_slice(x);
        let dx = self.plant.a() * xv + self.plant.b() * gu;
        ds[..n].copy_from_slice(dx.as_slice());
        let k = self.ctrl.config.k as i32;
        for j in 1..=self.ctrl.p() {
            let g = self.ctrl.block_gain(j).eval(t, 0)?;
            ds[n + j - 1] = -self.ctrl.config.lambdas[j - 1] * r[j - 1] + g.powi(k);
        }
        Ok(())
    }

    fn control_dim(&self) -> usize {
        self.plant.m()
    }

    fn control(&self, t: f64, s: &[f64], u: &mut [f64]) -> Result<()> {
        let (x, r) = self.split(s);
        u.copy_from_slice(self.ctrl.control(x, t, r)?.as_slice());
        Ok(())
    }

    fn diagnostic_names(&self) -> Vec<String> {
        (1..=self.ctrl.p()).map(|j| format!("V{j}")).collect()
    }

    fn diagnostics(&self, t: f64, s: &[f64], out: &mut [f64]) -> Result<()> {
        let (x, r) = self.split(s);
        let z = &self.ctrl.cd.t * DVector::from_column_slice(x);
        let sig = self.ctrl.signals(t, r, &self.ctrl.config.lambdas)?;
        let om = self.ctrl.map.eval(z.as_slice(), &sig);
        for j in 1..=self.ctrl.p() {
            let range = self.ctrl.cd.block_range(j);
            out[j - 1] = r[j - 1] * om.rows(range.start, range.len()).norm_squared();
        }
        Ok(())
    }
}

/// Canonical plant with unknown companion coefficients under the adaptive
/// law; state `[z; R; lambda_hat; alpha_hat]`, `alpha_hat` block by block.
pub struct AdaptiveSystem<'a> {
    pub ctrl: &'a Controller,
}

impl<'a> AdaptiveSystem<'a> {
    pub fn new(ctrl: &'a Controller) -> Result<Self> {
        if !ctrl.is_adaptive() {
            return Err(Error::InvalidArgument("controller has no adaptive parameters".into()));
        }
        Ok(Self { ctrl })
    }

    pub fn initial_state(&self, z0: &[f64], r0: f64) -> Vec<f64> {
        let a = self.ctrl.config.adaptive.as_ref().expect("checked in new");
        let mut s = z0.to_vec();
        s.extend(std::iter::repeat_n(r0, self.ctrl.p()));
        s.extend_from_slice(&a.lambda_hat0);
        s.extend(a.alpha_hat0.iter().flatten());
        s
    }

    pub fn lambda_hat_range(&self) -> std::ops::Range<usize> {
        let n = self.ctrl.cd.n();
        let p = self.ctrl.p();
        n + p..n + 2 * p
    }

    fn unpack<'s>(&self, s: &'s [f64]) -> (&'s [f64], &'s [f64], &'s [f64], Vec<Vec<f64>>) {
        let n = self.ctrl.cd.n();
        let p = self.ctrl.p();
        let (z, rest) = s.split_at(n);
        let (r, rest) = rest.split_at(p);
        let (lh, rest) = rest.split_at(p);
        let mut alpha = Vec::with_capacity(p);
        let mut off = 0;
        for &rj in &self.ctrl.cd.r {
            alpha.push(rest[off..off + rj].to_vec());
            off += rj;
        }
        (z, r, lh, alpha)
    }
}

impl Dynamics for AdaptiveSystem<'_> {
    fn dim(&self) -> usize {
        let n = self.ctrl.cd.n();
        2 * n + 2 * self.ctrl.p()
    }

    fn rhs(&self, t: f64, s: &[f64], ds: &mut [f64]) -> Result<()> {
        let cd = &self.ctrl.cd;
        let (n, p) = (cd.n(), cd.p());
        let (z, r, lh, alpha) = self.unpack(s);
        let out = self.ctrl.control_adaptive(z, t, r, lh, &alpha)?;
        let gu = DVector::from_fn(cd.m(), |i, _| self.ctrl.gains[i].eval(t, 0).unwrap_or(0.0) * out.u[i]);
        let dz = &cd.a_hat * DVector::from_column_slice(z) + &cd.b_hat * gu;
        ds[..n].copy_from_slice(dz.as_slice());
        let k = self.ctrl.config.k as i32;
        for j in 1..=p {
            let g = self.ctrl.block_gain(j).eval(t, 0)?;
            ds[n + j - 1] = -lh[j - 1] * r[j - 1] + g.powi(k);
            ds[n + p + j - 1] = out.lambda_hat_rates[j - 1];
        }
        let mut off = n + 2 * p;
        for rates in &out.alpha_hat_rates {
            ds[off..off + rates.len()].copy_from_slice(rates);
            off += rates.len();
        }
        Ok(())
    }

    fn control_dim(&self) -> usize {
        self.ctrl.cd.m()
    }

    fn control(&self, t: f64, s: &[f64], u: &mut [f64]) -> Result<()> {
        let (z, r, lh, alpha) = self.unpack(s);
        u.copy_from_slice(self.ctrl.control_adaptive(z, t, r, lh, &alpha)?.u.as_slice());
        Ok(())
    }
}

/// Amalgamated Lyapunov function sampled along a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovTrace {
    pub times: Vec<f64>,
    pub v: Vec<f64>,
    /// `blocks[j-1]` is `R_j ||Omega_j||^2` per sample.
    pub blocks: Vec<Vec<f64>>,
    /// Extremes of each filter state over the trajectory.
    pub r_min: Vec<f64>,
    pub r_max: Vec<f64>,
}

/// Combines the per-block terms `V_j = R_j ||Omega_j||^2` recursively from
/// block `p` downward, weighting each upstream sum by `R_{j,max} /
/// R_{j+1,min}` (twice that ratio at the first step).
pub fn combine_lyapunov(blocks: &[f64], r_min: &[f64], r_max: &[f64]) -> f64 {
    let p = blocks.len();
    if p == 1 {
        return blocks[0];
    }
    let mut acc = blocks[p - 2] + 2.0 * r_max[p - 2] / r_min[p - 1] * blocks[p - 1];
    for j in (1..p - 1).rev() {
        acc = blocks[j - 1] + r_max[j - 1] / r_min[j] * acc;
    }
    acc
}

/// Lyapunov trace of a [`Theorem1System`] trajectory.
pub fn lyapunov_trace(traj: &Trajectory, ctrl: &Controller) -> Result<LyapunovTrace> {
    let p = ctrl.p();
    let n = ctrl.cd.n();
    let blocks: Vec<Vec<f64>> = (1..=p)
        .map(|j| {
            traj.diagnostic(&format!("V{j}"))
                .ok_or_else(|| Error::InvalidArgument(format!("trajectory lacks V{j} samples")))
        })
        .collect::<Result<_>>()?;
    let r_cols: Vec<Vec<f64>> = (0..p).map(|j| traj.component(n + j)).collect();
    let r_min: Vec<f64> = r_cols.iter().map(|c| c.iter().copied().fold(f64::INFINITY, f64::min)).collect();
    let r_max: Vec<f64> = r_cols.iter().map(|c| c.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect();
    let v = (0..traj.len())
        .map(|i| {
            let row: Vec<f64> = blocks.iter().map(|b| b[i]).collect();
            combine_lyapunov(&row, &r_min, &r_max)
        })
        .collect();
    Ok(LyapunovTrace { times: traj.times.clone(), v, blocks, r_min, r_max })
}

/// Largest violation of `V(t + delta) <= V(t) e^{-sigma delta}` over sample
/// pairs `lag` steps apart, relative to the bound.
pub fn lyapunov_violation(trace: &LyapunovTrace, sigma: f64, lag: usize) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..trace.v.len().saturating_sub(lag) {
        let (a, b) = (trace.v[i], trace.v[i + lag]);
        if a <= 0.0 {
            continue;
        }
        let bound = a * (-sigma * (trace.times[i + lag] - trace.times[i])).exp();
        worst = worst.max(b / bound - 1.0);
    }
    worst
}

/// Result of a fixed-law run.
#[derive(Debug, Clone)]
pub struct Theorem1Run {
    pub traj: Trajectory,
    pub sigma: Option<f64>,
}

/// Simulates the fixed law from `x0` with `R(0) = r0` for every block.
pub fn run_theorem1(
    plant: &PlantModel,
    ctrl: &Controller,
    x0: &[f64],
    r0: f64,
    horizon: f64,
    dt: f64,
    stride: usize,
) -> Result<Theorem1Run> {
    let sys = Theorem1System::new(plant, ctrl)?;
    let s0 = sys.initial_state(x0, r0);
    let traj = integrate_strided(&sys, &s0, 0.0, horizon, dt, stride)?;
    Ok(Theorem1Run { traj, sigma: crate::controller::sigma_estimate(&ctrl.config, &ctrl.cd).ok() })
}

/// Simulates the adaptive law from canonical state `z0`.
pub fn run_adaptive(
    ctrl: &Controller,
    z0: &[f64],
    r0: f64,
    horizon: f64,
    dt: f64,
    stride: usize,
) -> Result<Trajectory> {
    let sys = AdaptiveSystem::new(ctrl)?;
    let s0 = sys.initial_state(z0, r0);
    integrate_strided(&sys, &s0, 0.0, horizon, dt, stride)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gains::GainSignal;
    use crate::lti::{canonical_transform, DEFAULT_RANK_TOL};

    #[test]
    fn combination_weights() {
        assert_eq!(combine_lyapunov(&[3.0], &[1.0], &[1.0]), 3.0);
        // p = 2: V1 + 2 (R1max / R2min) V2
        assert_eq!(combine_lyapunov(&[1.0, 2.0], &[0.5, 0.25], &[2.0, 4.0]), 1.0 + 2.0 * 8.0 * 2.0);
        // p = 3: V1 + (R1max / R2min) (V2 + 2 (R2max / R3min) V3)
        let v = combine_lyapunov(&[1.0, 1.0, 1.0], &[1.0, 0.5, 0.25], &[2.0, 3.0, 1.0]);
        assert_eq!(v, 1.0 + 4.0 * (1.0 + 2.0 * 12.0));
    }

    #[test]
    fn zero_state_keeps_zero_lyapunov() {
        let plant = PlantModel::from_rows(&[&[0.0, 1.0], &[0.0, 0.0]], &[&[0.0], &[1.0]]).unwrap();
        let cd = canonical_transform(&plant, DEFAULT_RANK_TOL).unwrap();
        let ctrl = Controller::theorem1(cd, vec![GainSignal::sine()], 0.5).unwrap();
        let run = run_theorem1(&plant, &ctrl, &[0.0, 0.0], 1.0, 2.0, 0.01, 1).unwrap();
        let tr = lyapunov_trace(&run.traj, &ctrl).unwrap();
        assert!(tr.v.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn scalar_lyapunov_is_the_block_term() {
        let plant = PlantModel::from_rows(&[&[1.0]], &[&[1.0]]).unwrap();
        let cd = canonical_transform(&plant, DEFAULT_RANK_TOL).unwrap();
        let ctrl = Controller::theorem1(cd, vec![GainSignal::sinusoid(1.0, 0.5, 1.0, 0.0)], 0.5).unwrap();
        let run = run_theorem1(&plant, &ctrl, &[1.0], 1.0, 5.0, 0.01, 1).unwrap();
        let tr = lyapunov_trace(&run.traj, &ctrl).unwrap();
        for i in (0..run.traj.len()).step_by(50) {
            let s = run.traj.state(i);
            let x = ctrl.cd.t[(0, 0)] * s[0];
            approx::assert_relative_eq!(tr.v[i], s[1] * x * x, max_relative = 1e-12);
        }
    }
}
