//! Axi-symmetric spacecraft with two actuators, one of which reorients
//! between the first and second body axes.
//!
//! Axis 1 (`q1`, `w1`) is a single-input block driven by the fixed law with
//! gain `g1`. Axes 2 and 3 share the schedule `g2` and use an adaptive
//! filter rate `lambda_hat2`. The loop is closed on the full nonlinear
//! kinematics `q0' = -qv.w/2`, `qv' = (q0 w + qv x w)/2`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, Vector3};

use crate::controller::{Controller, ControllerConfig};
use crate::error::{Error, Result};
use crate::gains::{bump_schedule, GainSignal};
use crate::lti::{canonical_transform, PlantModel, DEFAULT_RANK_TOL};
use crate::sim::{integrate_strided, Dynamics, Trajectory};

#[derive(Debug, Clone)]
pub struct SpacecraftParams {
    pub j: [f64; 3],
    pub g1: GainSignal,
    pub g2: GainSignal,
    /// Gain on the third axis; `None` shares `g2`.
    pub g3: Option<GainSignal>,
    pub lambda1: f64,
    /// Update gain of `lambda_hat2`.
    pub gamma: f64,
}

impl SpacecraftParams {
    /// Inertias 3, 2, 2 kg m^2, schedule 1.8 s on / 0.4 s gap / 1.8 s on over
    /// 4 s, `lambda1 = 2`, update gain 0.01.
    pub fn reference() -> Self {
        let (g1, g2) = bump_schedule(1.8, 0.4, 1.8, 4.0).expect("valid schedule");
        Self { j: [3.0, 2.0, 2.0], g1, g2, g3: None, lambda1: 2.0, gamma: 0.01 }
    }

    pub fn k2(&self) -> f64 {
        (self.j[2] - self.j[0]) / self.j[1]
    }

    pub fn k3(&self) -> f64 {
        (self.j[0] - self.j[1]) / self.j[2]
    }

    pub fn gain3(&self) -> &GainSignal {
        self.g3.as_ref().unwrap_or(&self.g2)
    }

    pub fn validate(&self) -> Result<()> {
        if self.j.iter().any(|j| !(*j > 0.0)) {
            return Err(Error::InvalidArgument("inertias must be positive".into()));
        }
        if (self.j[1] - self.j[2]).abs() > 1e-12 * self.j[1] {
            return Err(Error::InvalidArgument("J2 and J3 must be equal".into()));
        }
        if !(self.lambda1 > 0.0 && self.gamma >= 0.0) {
            return Err(Error::InvalidArgument("lambda1 must be positive and gamma nonnegative".into()));
        }
        Ok(())
    }
}

/// State layout `[q0, q1, q2, q3, w1, w2, w3, R1, R2, lambda_hat2, R3]`.
/// `R3` follows the third-axis gain and equals `R2` when the schedules are
/// shared.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpacecraftState {
    pub q0: f64,
    pub qv: [f64; 3],
    pub w: [f64; 3],
    pub r1: f64,
    pub r2: f64,
    pub lambda_hat2: f64,
    pub r3: f64,
}

pub const STATE_DIM: usize = 11;

impl SpacecraftState {
    /// 18 degree rotation about `[1,1,1]/sqrt3`,
    /// `w = 0.1 [pi/12, -pi/6, pi/8]`, filters at 1, `lambda_hat2 = 2`.
    pub fn reference_initial() -> Self {
        let half = 9.0_f64.to_radians();
        let s = half.sin() / 3.0_f64.sqrt();
        Self {
            q0: half.cos(),
            qv: [s; 3],
            w: [0.1 * PI / 12.0, -0.1 * PI / 6.0, 0.1 * PI / 8.0],
            r1: 1.0,
            r2: 1.0,
            lambda_hat2: 2.0,
            r3: 1.0,
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = vec![self.q0];
        v.extend_from_slice(&self.qv);
        v.extend_from_slice(&self.w);
        v.extend_from_slice(&[self.r1, self.r2, self.lambda_hat2, self.r3]);
        v
    }

    pub fn from_slice(s: &[f64]) -> Self {
        Self {
            q0: s[0],
            qv: [s[1], s[2], s[3]],
            w: [s[4], s[5], s[6]],
            r1: s[7],
            r2: s[8],
            lambda_hat2: s[9],
            r3: s[10],
        }
    }

    pub fn quaternion_norm(&self) -> f64 {
        (self.q0 * self.q0 + self.qv.iter().map(|q| q * q).sum::<f64>()).sqrt()
    }
}

/// Accelerations `v_i = u_i / J_i` and the rate of `lambda_hat2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpacecraftControl {
    pub v: [f64; 3],
    pub lambda_hat2_rate: f64,
}

/// Axis-1 law: the fixed single-block law on `q1' = w1/2`, `w1' = g1 v1`.
#[derive(Debug, Clone)]
pub struct Axis1Law {
    ctrl: Controller,
}

impl Axis1Law {
    pub fn new(g1: GainSignal, lambda1: f64) -> Result<Self> {
        let plant = PlantModel::from_rows(&[&[0.0, 0.5], &[0.0, 0.0]], &[&[0.0], &[1.0]])?;
        let cd = canonical_transform(&plant, DEFAULT_RANK_TOL)?;
        let cfg = ControllerConfig::with_lambdas(&cd, vec![lambda1])?;
        Ok(Self { ctrl: Controller::new(cd, vec![g1], cfg)? })
    }

    pub fn controller(&self) -> &Controller {
        &self.ctrl
    }
}

pub fn control_v1(law: &Axis1Law, q1: f64, w1: f64, r1: f64, t: f64) -> Result<f64> {
    if !(r1 > 0.0) {
        return Err(Error::InvalidArgument(format!("R1 = {r1} must be positive")));
    }
    Ok(law.ctrl.control(&[q1, w1], t, &[r1])?[0])
}

/// `(v, Omega)` for one of axes 2 and 3: `Omega = w + (g^2/R) q` and
/// `v = -(g/2R) Omega + k (g/R) w1 q_other - (1/g) d/dt(Omega - w)` with
/// `(1/g) d/dt((g^2/R) q) = (2g'/R) q + (lambda g/R) q - (g^3/R^2) q + (g/2R) w`.
#[allow(clippy::too_many_arguments)]
fn axis_law(g: f64, dg: f64, r: f64, lambda: f64, k: f64, q: f64, w: f64, w1: f64, q_other: f64) -> (f64, f64) {
    let omega = w + g * g / r * q;
    let d_over_g = 2.0 * dg / r * q + lambda * g / r * q - g * g * g / (r * r) * q + g / (2.0 * r) * w;
    let v = -g / (2.0 * r) * omega + k * g / r * w1 * q_other - d_over_g;
    (v, omega)
}

/// `(v2, v3, lambda_hat2')`.
pub fn control_v23(state: &SpacecraftState, t: f64, params: &SpacecraftParams) -> Result<(f64, f64, f64)> {
    if !(state.r2 > 0.0 && state.r3 > 0.0) {
        return Err(Error::InvalidArgument("R2 and R3 must be positive".into()));
    }
    let g2 = params.g2.derivatives(t, 1)?;
    let g3 = params.gain3().derivatives(t, 1)?;
    let [_, q2, q3] = state.qv;
    let [w1, w2, w3] = state.w;
    let lh = state.lambda_hat2;
    let (v2, om2) = axis_law(g2[0], g2[1], state.r2, lh, params.k2(), q2, w2, w1, q3);
    let (v3, om3) = axis_law(g3[0], g3[1], state.r3, lh, params.k3(), q3, w3, w1, q2);
    let rate = params.gamma * (state.r2 * (q2 * q2 + om2 * om2) + state.r3 * (q3 * q3 + om3 * om3));
    Ok((v2, v3, rate))
}

pub fn control(
    law: &Axis1Law,
    state: &SpacecraftState,
    t: f64,
    params: &SpacecraftParams,
) -> Result<SpacecraftControl> {
    let v1 = control_v1(law, state.qv[0], state.w[0], state.r1, t)?;
    let (v2, v3, lambda_hat2_rate) = control_v23(state, t, params)?;
    Ok(SpacecraftControl { v: [v1, v2, v3], lambda_hat2_rate })
}

/// State derivative for given accelerations `v`.
pub fn spacecraft_rhs(
    state: &SpacecraftState,
    t: f64,
    params: &SpacecraftParams,
    ctl: &SpacecraftControl,
) -> Result<Vec<f64>> {
    let qv = Vector3::from(state.qv);
    let w = Vector3::from(state.w);
    let dq0 = -0.5 * qv.dot(&w);
    let dqv = 0.5 * state.q0 * w + 0.5 * qv.cross(&w);
    let g1 = params.g1.eval(t, 0)?;
    let g2 = params.g2.eval(t, 0)?;
    let g3 = params.gain3().eval(t, 0)?;
    let [w1, w2, w3] = state.w;
    let dw = [g1 * ctl.v[0], params.k2() * w1 * w3 + g2 * ctl.v[1], params.k3() * w1 * w2 + g3 * ctl.v[2]];
    let dr1 = -params.lambda1 * state.r1 + g1 * g1;
    let dr2 = -state.lambda_hat2 * state.r2 + g2 * g2;
    let dr3 = -state.lambda_hat2 * state.r3 + g3 * g3;
    Ok(vec![dq0, dqv[0], dqv[1], dqv[2], dw[0], dw[1], dw[2], dr1, dr2, ctl.lambda_hat2_rate, dr3])
}

/// Closed loop; records torques `u_i = J_i v_i` and renormalizes the
/// quaternion after every step.
pub struct SpacecraftSystem {
    pub params: SpacecraftParams,
    pub law: Axis1Law,
}

impl SpacecraftSystem {
    pub fn new(params: SpacecraftParams) -> Result<Self> {
        params.validate()?;
        let law = Axis1Law::new(params.g1.clone(), params.lambda1)?;
        Ok(Self { params, law })
    }
}

impl Dynamics for SpacecraftSystem {
    fn dim(&self) -> usize {
        STATE_DIM
    }

    fn rhs(&self, t: f64, x: &[f64], dx: &mut [f64]) -> Result<()> {
        let s = SpacecraftState::from_slice(x);
        let ctl = control(&self.law, &s, t, &self.params)?;
        dx.copy_from_slice(&spacecraft_rhs(&s, t, &self.params, &ctl)?);
        Ok(())
    }

    fn control_dim(&self) -> usize {
        3
    }

    fn control(&self, t: f64, x: &[f64], u: &mut [f64]) -> Result<()> {
        let ctl = control(&self.law, &SpacecraftState::from_slice(x), t, &self.params)?;
        for i in 0..3 {
            u[i] = self.params.j[i] * ctl.v[i];
        }
        Ok(())
    }

    fn diagnostic_names(&self) -> Vec<String> {
        ["qnorm_err", "g1", "g2", "Omega2", "Omega3"].map(String::from).to_vec()
    }

    fn diagnostics(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        let s = SpacecraftState::from_slice(x);
        let g2 = self.params.g2.eval(t, 0)?;
        let g3 = self.params.gain3().eval(t, 0)?;
        out[0] = s.quaternion_norm() - 1.0;
        out[1] = self.params.g1.eval(t, 0)?;
        out[2] = g2;
        out[3] = s.w[1] + g2 * g2 / s.r2 * s.qv[1];
        out[4] = s.w[2] + g3 * g3 / s.r3 * s.qv[2];
        Ok(())
    }

    fn post_step(&self, _t: f64, x: &mut [f64]) -> f64 {
        let norm = x[..4].iter().map(|q| q * q).sum::<f64>().sqrt();
        for q in &mut x[..4] {
            *q /= norm;
        }
        (norm - 1.0).abs()
    }
}

/// Runs the closed loop from `init`.
pub fn run_scenario(
    params: SpacecraftParams,
    init: &SpacecraftState,
    horizon: f64,
    dt: f64,
    stride: usize,
) -> Result<Trajectory> {
    let sys = SpacecraftSystem::new(params)?;
    integrate_strided(&sys, &init.to_vec(), 0.0, horizon, dt, stride)
}

pub const REFERENCE_HORIZON: f64 = 200.0;

/// The reference scenario over 200 s with `dt = 1e-3`, every 10th step kept.
pub fn run_paper_scenario() -> Result<Trajectory> {
    run_scenario(SpacecraftParams::reference(), &SpacecraftState::reference_initial(), REFERENCE_HORIZON, 1e-3, 10)
}

/// `A`, `B` of the axis-1 pair, for reference output.
pub fn axis1_matrices() -> (DMatrix<f64>, DMatrix<f64>) {
    (DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 0.0, 0.0]), DMatrix::from_row_slice(2, 1, &[0.0, 1.0]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn zero_control() -> SpacecraftControl {
        SpacecraftControl { v: [0.0; 3], lambda_hat2_rate: 0.0 }
    }

    #[test]
    fn initial_attitude() {
        let s = SpacecraftState::reference_initial();
        assert_abs_diff_eq!(s.q0, 0.987_688_340_595_137_7, epsilon = 1e-15);
        assert_abs_diff_eq!(s.qv[0], 0.156_434_465_040_230_87 / 3.0_f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(s.quaternion_norm(), 1.0, epsilon = 1e-15);
        let p = SpacecraftParams::reference();
        assert_eq!((p.k2(), p.k3()), (-0.5, 0.5));
    }

    #[test]
    fn rest_and_pure_spin() {
        let p = SpacecraftParams::reference();
        let mut s = SpacecraftState::reference_initial();
        s.w = [0.0; 3];
        let d = spacecraft_rhs(&s, 0.3, &p, &zero_control()).unwrap();
        assert!(d[..7].iter().all(|x| *x == 0.0));
        s.w = [0.7, 0.0, 0.0];
        let d = spacecraft_rhs(&s, 0.3, &p, &zero_control()).unwrap();
        assert_eq!(&d[4..7], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn rates_match_term_by_term() {
        let p = SpacecraftParams::reference();
        let s = SpacecraftState {
            q0: 0.9,
            qv: [0.1, -0.2, 0.3],
            w: [0.4, -0.5, 0.6],
            r1: 1.1,
            r2: 0.9,
            lambda_hat2: 2.5,
            r3: 0.9,
        };
        let t = 2.9;
        let ctl = SpacecraftControl { v: [0.2, -0.3, 0.7], lambda_hat2_rate: 0.0 };
        let d = spacecraft_rhs(&s, t, &p, &ctl).unwrap();
        let g2 = p.g2.eval(t, 0).unwrap();
        // J = (3, 2, 2): k2 = -1/2, k3 = 1/2
        assert_abs_diff_eq!(d[5], -0.5 * 0.4 * 0.6 + g2 * -0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(d[6], 0.5 * 0.4 * -0.5 + g2 * 0.7, epsilon = 1e-15);
        assert_abs_diff_eq!(d[4], 0.0, epsilon = 1e-15); // g1 is off at t = 2.9
                                                         // q0' = -(qv . w)/2, q1' = (q0 w1 + q2 w3 - q3 w2)/2
        assert_abs_diff_eq!(d[0], -0.5 * (0.04 + 0.1 + 0.18), epsilon = 1e-15);
        assert_abs_diff_eq!(d[1], 0.5 * (0.9 * 0.4 + -0.2 * 0.6 - 0.3 * -0.5), epsilon = 1e-15);
    }

    #[test]
    fn laws_vanish_at_rest() {
        let p = SpacecraftParams::reference();
        let law = Axis1Law::new(p.g1.clone(), p.lambda1).unwrap();
        let mut s = SpacecraftState::reference_initial();
        s.qv = [0.0; 3];
        s.w = [0.0; 3];
        let c = control(&law, &s, 0.9, &p).unwrap();
        assert_eq!(c.v, [0.0; 3]);
        assert_eq!(c.lambda_hat2_rate, 0.0);
    }

    #[test]
    fn axis_law_matches_finite_differences() {
        // along g(t), R(t) from R' = -lambda R + g^2 with w = 2 q', the
        // expansion equals (1/g) d/dt((g^2/R) q)
        let g = GainSignal::sinusoid(1.0, 0.5, 1.3, 0.2);
        let lambda = 2.5;
        let q = |t: f64| (0.3 * t).sin();
        let dq = |t: f64| 0.3 * (0.3 * t).cos();
        // exact R with R(0)=1 by fine RK4
        let rk = |tf: f64| {
            let n = 20000;
            let h = tf / n as f64;
            let f = |t: f64, r: f64| -lambda * r + g.eval(t, 0).unwrap().powi(2);
            let mut r = 1.0;
            for i in 0..n {
                let t = i as f64 * h;
                let k1 = f(t, r);
                let k2 = f(t + h / 2.0, r + h / 2.0 * k1);
                let k3 = f(t + h / 2.0, r + h / 2.0 * k2);
                let k4 = f(t + h, r + h * k3);
                r += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            }
            r
        };
        let phi = |t: f64| g.eval(t, 0).unwrap().powi(2) / rk(t) * q(t);
        let (t, h) = (1.7, 1e-3);
        let fd = (phi(t + h) - phi(t - h)) / (2.0 * h);
        let gd = g.derivatives(t, 1).unwrap();
        let r = rk(t);
        let w = 2.0 * dq(t);
        // with k = 0 and omega-terms removed, v = -(g/2R) Omega - d_over_g
        let (v, omega) = axis_law(gd[0], gd[1], r, lambda, 0.0, q(t), w, 0.0, 0.0);
        let d_over_g = -v - gd[0] / (2.0 * r) * omega;
        assert_abs_diff_eq!(d_over_g * gd[0], fd, epsilon = 1e-6);
    }

    #[test]
    fn third_axis_toggle_uses_its_own_filter() {
        let mut p = SpacecraftParams::reference();
        p.g3 = Some(GainSignal::constant(1.0));
        let sys = SpacecraftSystem::new(p).unwrap();
        let s = SpacecraftState::reference_initial().to_vec();
        let mut d = vec![0.0; STATE_DIM];
        sys.rhs(1.0, &s, &mut d).unwrap();
        // R3' = -lambda_hat2 R3 + 1 while g2 = 0 at t = 1
        assert_abs_diff_eq!(d[10], -2.0 + 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d[8], -2.0, epsilon = 1e-15);
    }

    #[test]
    fn unequal_transverse_inertias_are_rejected() {
        let mut p = SpacecraftParams::reference();
        p.j = [3.0, 2.0, 2.5];
        assert!(SpacecraftSystem::new(p).is_err());
    }
}
