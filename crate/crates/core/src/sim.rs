//! Fixed-step RK4 integration, trajectory storage and decay-rate fitting.

use std::ops::Range;

use crate::error::{Error, Result};

/// A composite vector field with optional recorded outputs.
pub trait Dynamics {
    fn dim(&self) -> usize;

    fn rhs(&self, t: f64, x: &[f64], dx: &mut [f64]) -> Result<()>;

    /// Number of control values recorded per sample.
    fn control_dim(&self) -> usize {
        0
    }

    fn control(&self, _t: f64, _x: &[f64], _u: &mut [f64]) -> Result<()> {
        Ok(())
    }

    fn diagnostic_names(&self) -> Vec<String> {
        Vec::new()
    }

    fn diagnostics(&self, _t: f64, _x: &[f64], _out: &mut [f64]) -> Result<()> {
        Ok(())
    }

    /// Projection applied after every accepted step; returns the size of
    /// the correction (logged in [`Trajectory::corrections`]).
    fn post_step(&self, _t: f64, _x: &mut [f64]) -> f64 {
        0.0
    }
}

/// Adapts a plain closure `f(t, x, dx)` to [`Dynamics`].
pub struct FnDynamics<F> {
    dim: usize,
    f: F,
}

impl<F> FnDynamics<F>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> Dynamics for FnDynamics<F>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn rhs(&self, t: f64, x: &[f64], dx: &mut [f64]) -> Result<()> {
        (self.f)(t, x, dx);
        Ok(())
    }
}

/// Sampled trajectory with flat row-major storage.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub dim: usize,
    pub states: Vec<f64>,
    pub control_dim: usize,
    pub controls: Vec<f64>,
    pub diagnostic_names: Vec<String>,
    pub diagnostics: Vec<f64>,
    /// Post-step correction size per sample (0 at the first sample).
    pub corrections: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn control(&self, i: usize) -> &[f64] {
        &self.controls[i * self.control_dim..(i + 1) * self.control_dim]
    }

    pub fn diagnostic_row(&self, i: usize) -> &[f64] {
        let w = self.diagnostic_names.len();
        &self.diagnostics[i * w..(i + 1) * w]
    }

    pub fn last_state(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    /// Time series of state component `c`.
    pub fn component(&self, c: usize) -> Vec<f64> {
        (0..self.len()).map(|i| self.states[i * self.dim + c]).collect()
    }

    pub fn control_component(&self, c: usize) -> Vec<f64> {
        (0..self.len()).map(|i| self.controls[i * self.control_dim + c]).collect()
    }

    pub fn diagnostic(&self, name: &str) -> Option<Vec<f64>> {
        let w = self.diagnostic_names.len();
        let c = self.diagnostic_names.iter().position(|n| n == name)?;
        Some((0..self.len()).map(|i| self.diagnostics[i * w + c]).collect())
    }

    /// Euclidean norm of the state components in `range` at every sample.
    pub fn norms(&self, range: Range<usize>) -> Vec<f64> {
        (0..self.len()).map(|i| self.state(i)[range.clone()].iter().map(|v| v * v).sum::<f64>().sqrt()).collect()
    }

    /// Decay fit of `log ||x[range]||` over the final `tail_fraction`.
    pub fn fit_decay(&self, range: Range<usize>, tail_fraction: f64) -> Result<DecayFit> {
        fit_decay_rate(&self.times, &self.norms(range), tail_fraction)
    }

    /// Count of non-finite recorded control samples.
    pub fn nonfinite_controls(&self) -> usize {
        self.controls.iter().filter(|v| !v.is_finite()).count()
    }
}

pub fn integrate<D: Dynamics + ?Sized>(sys: &D, x0: &[f64], t0: f64, tf: f64, dt: f64) -> Result<Trajectory> {
    integrate_strided(sys, x0, t0, tf, dt, 1)
}

/// RK4 from `t0` to `tf` with step `dt`, recording every `stride`-th step
/// (the final step is always recorded).
pub fn integrate_strided<D: Dynamics + ?Sized>(
    sys: &D,
    x0: &[f64],
    t0: f64,
    tf: f64,
    dt: f64,
    stride: usize,
) -> Result<Trajectory> {
    let n = sys.dim();
    if x0.len() != n {
        return Err(Error::Dimension(format!("initial state has {} entries, system has {n}", x0.len())));
    }
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidArgument(format!("step must be positive, got {dt}")));
    }
    if !(tf >= t0) {
        return Err(Error::InvalidArgument(format!("final time {tf} precedes start {t0}")));
    }
    if let Some(c) = x0.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteState { time: t0, component: c });
    }
    let stride = stride.max(1);
    let steps = ((tf - t0) / dt - 1e-9).ceil().max(0.0) as usize;

    let mut traj = Trajectory {
        dim: n,
        control_dim: sys.control_dim(),
        diagnostic_names: sys.diagnostic_names(),
        ..Default::default()
    };
    let cap = steps / stride + 2;
    traj.times.reserve(cap);
    traj.states.reserve(cap * n);

    let mut x = x0.to_vec();
    let mut u = vec![0.0; traj.control_dim];
    let mut d = vec![0.0; traj.diagnostic_names.len()];
    let mut record = |traj: &mut Trajectory, t: f64, x: &[f64], corr: f64| -> Result<()> {
        sys.control(t, x, &mut u)?;
        sys.diagnostics(t, x, &mut d)?;
        traj.times.push(t);
        traj.states.extend_from_slice(x);
        traj.controls.extend_from_slice(&u);
        traj.diagnostics.extend_from_slice(&d);
        traj.corrections.push(corr);
        Ok(())
    };
    record(&mut traj, t0, &x, 0.0)?;

    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    let mut max_corr = 0.0f64;
    for i in 0..steps {
        let t = t0 + i as f64 * dt;
        sys.rhs(t, &x, &mut k1)?;
        for j in 0..n {
            tmp[j] = x[j] + 0.5 * dt * k1[j];
        }
        sys.rhs(t + 0.5 * dt, &tmp, &mut k2)?;
        for j in 0..n {
            tmp[j] = x[j] + 0.5 * dt * k2[j];
        }
        sys.rhs(t + 0.5 * dt, &tmp, &mut k3)?;
        for j in 0..n {
            tmp[j] = x[j] + dt * k3[j];
        }
        sys.rhs(t + dt, &tmp, &mut k4)?;
        for j in 0..n {
            x[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        let t_next = t0 + (i + 1) as f64 * dt;
        if let Some(c) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState { time: t_next, component: c });
        }
        max_corr = max_corr.max(sys.post_step(t_next, &mut x));
        if (i + 1) % stride == 0 || i + 1 == steps {
            record(&mut traj, t_next, &x, max_corr)?;
            max_corr = 0.0;
        }
    }
    Ok(traj)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit {
    /// Least-squares slope of `log ||x||`.
    pub slope: f64,
    /// `-slope`.
    pub rate: f64,
    /// Coefficient of determination of the linear fit.
    pub r2: f64,
    pub samples: usize,
}

/// Smallest norm treated as usable in a log fit.
pub const NORM_FLOOR: f64 = 1e-300;

/// Linear least-squares fit of `log(values)` against `times` over the final
/// `tail_fraction` of the time span.
pub fn fit_decay_rate(times: &[f64], values: &[f64], tail_fraction: f64) -> Result<DecayFit> {
    if times.len() != values.len() {
        return Err(Error::Dimension("times and values differ in length".into()));
    }
    if !(tail_fraction > 0.0 && tail_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!("tail fraction must lie in (0, 1], got {tail_fraction}")));
    }
    let (Some(&first), Some(&last)) = (times.first(), times.last()) else {
        return Err(Error::DegenerateFit { usable: 0 });
    };
    let cut = last - tail_fraction * (last - first);
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(values)
        .filter(|(t, v)| **t >= cut && v.is_finite() && **v > NORM_FLOOR)
        .map(|(t, v)| (*t, v.ln()))
        .collect();
    if pts.len() < 10 {
        return Err(Error::DegenerateFit { usable: pts.len() });
    }
    let k = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::DegenerateFit { usable: 1 });
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Ok(DecayFit { slope, rate: -slope, r2, samples: pts.len() })
}
