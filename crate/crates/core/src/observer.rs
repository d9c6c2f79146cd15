//! Multi-output observer built on the canonical form of the dual pair
//! `(A^T, C^T)`.
//!
//! With `T` from the dual canonical transform, `z = T^{-T} x` obeys
//! `z' = A_o z`, `y = C_o z` where `A_o = A_hat^T` (upper block triangular,
//! block 1 decoupled) and `C_o = B_hat^T`, so output `i` measures
//! `g_i z_{i,r_i}`.
//!
//! Block `i` is treated as the adjoint of a control problem. In reversed
//! time `tau = -t` the pair `(A_ii, e_r)` with gain `g_i(-tau)` is
//! stabilized by the single-block law `v = K(tau) xi`; the error system
//! `e' = (A_ii + K^T g_i e_r^T) e` then has transition matrix
//! `Psi(-s, -t)^T` and inherits the decay of the control loop. In forward
//! time the filter of that law runs backwards, `R' = lambda R - g^k`, so it
//! is precomputed from the known gain schedule over the run horizon.

use nalgebra::{DMatrix, DVector};

use crate::augmentation::BlockSignals;
use crate::controller::{select_lambdas, Controller};
use crate::error::{Error, Result};
use crate::gains::GainSignal;
use crate::lti::{canonical_transform, CanonicalData, PlantModel};
use crate::sim::Dynamics;

/// Dual canonical data of an `(A, C)` pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ObserverData {
    pub a: DMatrix<f64>,
    pub c: DMatrix<f64>,
    /// Transform of the dual pair; `z = T^{-T} x`.
    pub t: DMatrix<f64>,
    pub a_o: DMatrix<f64>,
    pub c_o: DMatrix<f64>,
    /// Canonical data of `(A^T, C^T)`.
    pub dual: CanonicalData,
}

impl ObserverData {
    pub fn p(&self) -> usize {
        self.dual.p()
    }

    /// Output row (0-based) read by block `i`.
    pub fn output_of(&self, i: usize) -> usize {
        self.dual.block_inputs[i - 1]
    }
}

pub fn observer_transform(a: &DMatrix<f64>, c: &DMatrix<f64>, rank_tol: f64) -> Result<ObserverData> {
    if c.ncols() != a.nrows() {
        return Err(Error::Dimension(format!("C has {} columns, A is {}x{}", c.ncols(), a.nrows(), a.ncols())));
    }
    let dual_plant = PlantModel::new(a.transpose(), c.transpose())?;
    let dual = canonical_transform(&dual_plant, rank_tol).map_err(|e| match e {
        Error::NotControllable { found, needed } => Error::NotObservable { found, needed },
        other => other,
    })?;
    Ok(ObserverData {
        a: a.clone(),
        c: c.clone(),
        t: dual.t.clone(),
        a_o: dual.a_hat.transpose(),
        c_o: dual.b_hat.transpose(),
        dual,
    })
}

/// Filter `R' = lambda R - g^k` integrated backwards from `R(t_end) = r_end`
/// on a uniform grid, read back with cubic Hermite interpolation.
#[derive(Debug, Clone)]
pub struct BackwardFilter {
    gain: GainSignal,
    lambda: f64,
    k: u32,
    h: f64,
    values: Vec<f64>,
}

impl BackwardFilter {
    pub fn new(gain: GainSignal, lambda: f64, k: u32, r_end: f64, t_end: f64, h: f64) -> Result<Self> {
        if !(h > 0.0 && t_end > 0.0 && r_end > 0.0 && lambda > 0.0) {
            return Err(Error::InvalidArgument("backward filter needs positive step, horizon, R and lambda".into()));
        }
        let steps = (t_end / h).ceil() as usize;
        let h = t_end / steps as f64;
        let mut f = Self { gain, lambda, k, h, values: vec![0.0; steps + 1] };
        f.values[steps] = r_end;
        let mut r = r_end;
        for i in (0..steps).rev() {
            let t = (i + 1) as f64 * h;
            let k1 = f.slope(t, r)?;
            let k2 = f.slope(t - 0.5 * h, r - 0.5 * h * k1)?;
            let k3 = f.slope(t - 0.5 * h, r - 0.5 * h * k2)?;
            let k4 = f.slope(t - h, r - h * k3)?;
            r -= h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            f.values[i] = r;
        }
        Ok(f)
    }

    fn slope(&self, t: f64, r: f64) -> Result<f64> {
        Ok(self.lambda * r - self.gain.eval(t, 0)?.powi(self.k as i32))
    }

    pub fn t_end(&self) -> f64 {
        self.h * (self.values.len() - 1) as f64
    }

    pub fn eval(&self, t: f64) -> Result<f64> {
        let last = self.values.len() - 1;
        if !(0.0..=self.t_end()).contains(&t) {
            return Err(Error::InvalidArgument(format!(
                "observer filter covers [0, {}], asked for t = {t}",
                self.t_end()
            )));
        }
        let i = ((t / self.h).floor() as usize).min(last - 1);
        let (t0, t1) = (i as f64 * self.h, (i + 1) as f64 * self.h);
        let (r0, r1) = (self.values[i], self.values[i + 1]);
        let (d0, d1) = (self.slope(t0, r0)? * self.h, self.slope(t1, r1)? * self.h);
        let s = (t - t0) / (t1 - t0);
        let (s2, s3) = (s * s, s * s * s);
        Ok((2.0 * s3 - 3.0 * s2 + 1.0) * r0 + (s3 - 2.0 * s2 + s) * d0 + (-2.0 * s3 + 3.0 * s2) * r1 + (s3 - s2) * d1)
    }
}

/// Observer with one time-reversed single-block law per block.
#[derive(Debug, Clone)]
pub struct Observer {
    pub data: ObserverData,
    /// One gain per output row.
    pub gains: Vec<GainSignal>,
    /// Single-block controllers of the reversed-time nominal blocks.
    pub blocks: Vec<Controller>,
    pub filters: Vec<BackwardFilter>,
}

/// Grid step of the precomputed filters.
pub const FILTER_STEP: f64 = 1e-3;

impl Observer {
    /// Laws valid on `[0, horizon]`.
    pub fn new(data: ObserverData, gains: Vec<GainSignal>, slack: f64, horizon: f64) -> Result<Self> {
        if gains.len() != data.c.nrows() {
            return Err(Error::Dimension(format!("{} gains for {} outputs", gains.len(), data.c.nrows())));
        }
        let mut blocks = Vec::with_capacity(data.p());
        let mut filters = Vec::with_capacity(data.p());
        for i in 1..=data.p() {
            let cd =
                CanonicalData::from_structure(vec![data.dual.r_of(i)], vec![data.dual.alpha[i - 1].clone()], vec![])?;
            let cfg = select_lambdas(&cd, slack)?;
            let g = gains[data.output_of(i)].clone();
            // settle the terminal value over several filter time constants
            let pad = 20.0 / cfg.lambdas[0] + g.period().unwrap_or(0.0);
            filters.push(BackwardFilter::new(g.clone(), cfg.lambdas[0], cfg.k, 1.0, horizon + pad, FILTER_STEP)?);
            blocks.push(Controller::new(cd, vec![g], cfg)?);
        }
        Ok(Self { data, gains, blocks, filters })
    }

    pub fn p(&self) -> usize {
        self.data.p()
    }

    pub fn n(&self) -> usize {
        self.data.a.nrows()
    }

    pub fn lambdas(&self) -> Vec<f64> {
        self.blocks.iter().map(|b| b.config.lambdas[0]).collect()
    }

    /// Reversed-time signals of block `i` at forward time `t`: odd gain
    /// derivatives change sign.
    pub fn signals(&self, i: usize, t: f64) -> Result<BlockSignals> {
        let ctrl = &self.blocks[i - 1];
        let mut g = ctrl.gains[0].derivatives(t, ctrl.required_order(1))?;
        for d in g.iter_mut().skip(1).step_by(2) {
            *d = -*d;
        }
        Ok(BlockSignals { g, r: self.filters[i - 1].eval(t)?, lambda: ctrl.config.lambdas[0] })
    }

    /// Row gain `K` of the reversed-time law of block `i` at forward time `t`.
    pub fn block_gain(&self, i: usize, t: f64) -> Result<DVector<f64>> {
        let ctrl = &self.blocks[i - 1];
        let ri = ctrl.cd.n();
        let sig = [self.signals(i, t)?];
        let mut k = DVector::zeros(ri);
        let mut e = vec![0.0; ri];
        for l in 0..ri {
            e[l] = 1.0;
            k[l] = ctrl.control_z(&e, &sig, None)?[0];
            e[l] = 0.0;
        }
        Ok(k)
    }

    /// Innovation `eta_i = -K^T y_tilde_i` of block `i`.
    pub fn innovation(&self, i: usize, y_tilde: f64, t: f64) -> Result<DVector<f64>> {
        Ok(self.block_gain(i, t)? * (-y_tilde))
    }

    /// `T^T eta` from the output error `y_tilde` (one entry per output row),
    /// assembled block by block from 1 up to `p`.
    pub fn injection(&self, y_tilde: &[f64], t: f64) -> Result<DVector<f64>> {
        let dual = &self.data.dual;
        let mut eta = DVector::zeros(self.n());
        for i in 1..=self.p() {
            let range = dual.block_range(i);
            let e = self.innovation(i, y_tilde[self.data.output_of(i)], t)?;
            eta.rows_mut(range.start, range.len()).copy_from(&e);
        }
        Ok(self.data.t.transpose() * eta)
    }

    /// `x_hat' = A x_hat + bu + T^T eta` given measured `y = G C x`.
    pub fn rhs(&self, x_hat: &[f64], bu: &[f64], y: &[f64], t: f64) -> Result<DVector<f64>> {
        let xh = DVector::from_column_slice(x_hat);
        let yh = &self.data.c * &xh;
        let mut y_tilde = Vec::with_capacity(y.len());
        for (o, yo) in y.iter().enumerate() {
            y_tilde.push(yo - self.gains[o].eval(t, 0)? * yh[o]);
        }
        Ok(&self.data.a * xh + DVector::from_column_slice(bu) + self.injection(&y_tilde, t)?)
    }

    /// `G(t) C x`.
    pub fn measure(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        let cx = &self.data.c * DVector::from_column_slice(x);
        (0..cx.len()).map(|o| Ok(self.gains[o].eval(t, 0)? * cx[o])).collect()
    }
}

pub fn observer_rhs(obs: &Observer, x_hat: &[f64], bu: &[f64], y: &[f64], t: f64) -> Result<DVector<f64>> {
    obs.rhs(x_hat, bu, y, t)
}

/// Source of the plant input term `B u(t)`.
pub type InputFn<'a> = dyn Fn(f64) -> DVector<f64> + Sync + 'a;

/// Plant and observer integrated together; state `[x; x_hat]`.
pub struct ObserverSystem<'a> {
    pub obs: &'a Observer,
    pub input: Option<&'a InputFn<'a>>,
}

impl<'a> ObserverSystem<'a> {
    pub fn initial_state(&self, x0: &[f64], x_hat0: &[f64]) -> Vec<f64> {
        let mut s = x0.to_vec();
        s.extend_from_slice(x_hat0);
        s
    }

    fn bu(&self, t: f64) -> DVector<f64> {
        self.input.map_or_else(|| DVector::zeros(self.obs.n()), |f| f(t))
    }
}

impl Dynamics for ObserverSystem<'_> {
    fn dim(&self) -> usize {
        2 * self.obs.n()
    }

    fn rhs(&self, t: f64, s: &[f64], ds: &mut [f64]) -> Result<()> {
        let n = self.obs.n();
        let (x, rest) = s.split_at(n);
        let bu = self.bu(t);
        let y = self.obs.measure(x, t)?;
        let dx = &self.obs.data.a * DVector::from_column_slice(x) + &bu;
        let dxh = self.obs.rhs(rest, bu.as_slice(), &y, t)?;
        ds[..n].copy_from_slice(dx.as_slice());
        ds[n..].copy_from_slice(dxh.as_slice());
        Ok(())
    }

    fn diagnostic_names(&self) -> Vec<String> {
        vec!["err_norm".into()]
    }

    fn diagnostics(&self, _t: f64, s: &[f64], out: &mut [f64]) -> Result<()> {
        let n = self.obs.n();
        out[0] = (0..n).map(|i| (s[i] - s[n + i]).powi(2)).sum::<f64>().sqrt();
        Ok(())
    }
}

/// Recorded measurements replayed into the observer: outputs and,
/// optionally, plant inputs, both linearly interpolated in time.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MeasurementTable {
    pub output_times: Vec<f64>,
    pub outputs: Vec<Vec<f64>>,
    pub input_times: Vec<f64>,
    pub inputs: Vec<Vec<f64>>,
}

fn interp(times: &[f64], rows: &[Vec<f64>], t: f64) -> Vec<f64> {
    if times.len() == 1 || t <= times[0] {
        return rows[0].clone();
    }
    let last = times.len() - 1;
    if t >= times[last] {
        return rows[last].clone();
    }
    let i = times.partition_point(|x| *x <= t) - 1;
    let w = (t - times[i]) / (times[i + 1] - times[i]);
    rows[i].iter().zip(&rows[i + 1]).map(|(a, b)| a + w * (b - a)).collect()
}

impl MeasurementTable {
    /// Parses `[outputs]` rows `t y_1 .. y_s` and optional `[inputs]` rows
    /// `t u_1 .. u_m`.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut table = MeasurementTable::default();
        let mut section = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if line.starts_with('[') {
                section = match line {
                    "[outputs]" => Some(true),
                    "[inputs]" => Some(false),
                    _ => return Err(Error::Parse { line: i + 1, msg: format!("unknown section {line}") }),
                };
                continue;
            }
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() })?;
            let (times, rows) = match section {
                Some(true) => (&mut table.output_times, &mut table.outputs),
                Some(false) => (&mut table.input_times, &mut table.inputs),
                None => {
                    return Err(Error::Parse {
                        line: i + 1,
                        msg: "data before any [outputs] or [inputs] header".into(),
                    })
                }
            };
            if vals.len() < 2 || rows.first().is_some_and(|r| r.len() != vals.len() - 1) {
                return Err(Error::Parse { line: i + 1, msg: "rows must be `t v1 ..` with a consistent width".into() });
            }
            if times.last().is_some_and(|&t| vals[0] <= t) {
                return Err(Error::Parse { line: i + 1, msg: "times must be strictly increasing".into() });
            }
            times.push(vals[0]);
            rows.push(vals[1..].to_vec());
        }
        if table.outputs.is_empty() {
            return Err(Error::Parse { line: 1, msg: "no [outputs] rows".into() });
        }
        Ok(table)
    }

    pub fn output(&self, t: f64) -> Vec<f64> {
        interp(&self.output_times, &self.outputs, t)
    }

    pub fn input(&self, t: f64) -> Option<Vec<f64>> {
        (!self.inputs.is_empty()).then(|| interp(&self.input_times, &self.inputs, t))
    }
}

/// Observer driven by replayed measurements; state `x_hat`.
pub struct ReplaySystem<'a> {
    pub obs: &'a Observer,
    pub table: &'a MeasurementTable,
    /// Input map `B` applied to the replayed inputs.
    pub b: Option<&'a DMatrix<f64>>,
}

impl Dynamics for ReplaySystem<'_> {
    fn dim(&self) -> usize {
        self.obs.n()
    }

    fn rhs(&self, t: f64, s: &[f64], ds: &mut [f64]) -> Result<()> {
        let n = self.obs.n();
        let bu = match (self.b, self.table.input(t)) {
            (Some(b), Some(u)) => b * DVector::from_vec(u),
            _ => DVector::zeros(n),
        };
        let dxh = self.obs.rhs(s, bu.as_slice(), &self.table.output(t), t)?;
        ds.copy_from_slice(dxh.as_slice());
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lti::{verify_canonical_structure, DEFAULT_RANK_TOL};
    use crate::sim::integrate;
    use approx::assert_abs_diff_eq;

    #[test]
    fn single_output_companion_pair() {
        // observable companion pair: A^T is a controllable companion
        let a = DMatrix::from_row_slice(3, 3, &[0.0, 0.0, -6.0, 1.0, 0.0, 11.0, 0.0, 1.0, -4.0]);
        let c = DMatrix::from_row_slice(1, 3, &[0.0, 0.0, 1.0]);
        let od = observer_transform(&a, &c, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(od.p(), 1);
        // A_o is upper companion: ones on the subdiagonal
        for i in 1..3 {
            assert_abs_diff_eq!(od.a_o[(i, i - 1)], 1.0, epsilon = 1e-10);
        }
        assert_abs_diff_eq!(od.c_o, DMatrix::from_row_slice(1, 3, &[0.0, 0.0, 1.0]), epsilon = 1e-10);
    }

    #[test]
    fn duality_of_the_transform() {
        let a = DMatrix::from_row_slice(3, 3, &[0.1, 1.0, 0.0, -0.3, 0.2, 1.0, 0.5, 0.0, -0.4]);
        let c = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.2, 0.0, 1.0, 0.0]);
        let od = observer_transform(&a, &c, DEFAULT_RANK_TOL).unwrap();
        let cd =
            canonical_transform(&PlantModel::new(a.transpose(), c.transpose()).unwrap(), DEFAULT_RANK_TOL).unwrap();
        assert_eq!(od.a_o, cd.a_hat.transpose());
        assert_eq!(od.c_o, cd.b_hat.transpose());
        assert!(verify_canonical_structure(&od.dual, 1e-8).pass);
        // z = T^{-T} x maps A to A_o
        let tinv_t = od.dual.t_inv.transpose();
        assert_abs_diff_eq!(&tinv_t * &a * od.t.transpose(), od.a_o.clone(), epsilon = 1e-10);
    }

    #[test]
    fn unobservable_pair_is_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]);
        let c = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        assert!(matches!(observer_transform(&a, &c, DEFAULT_RANK_TOL), Err(Error::NotObservable { .. })));
    }

    #[test]
    fn scalar_innovation() {
        // r = 1: K = -(g / 2R), so eta = (g / 2R) y_tilde
        let a = DMatrix::from_element(1, 1, 0.3);
        let c = DMatrix::from_element(1, 1, 1.0);
        let g = GainSignal::sinusoid(0.5, 1.0, 1.0, 0.0);
        let obs =
            Observer::new(observer_transform(&a, &c, DEFAULT_RANK_TOL).unwrap(), vec![g.clone()], 0.5, 5.0).unwrap();
        let (t, yt) = (0.4, 1.3);
        let r = obs.filters[0].eval(t).unwrap();
        let eta = obs.innovation(1, yt, t).unwrap();
        assert_abs_diff_eq!(eta[0], g.eval(t, 0).unwrap() / (2.0 * r) * yt, epsilon = 1e-12);
        assert_eq!(obs.innovation(1, 0.0, t).unwrap()[0], 0.0);
        assert!(obs.filters[0].eval(-0.1).is_err());
    }

    #[test]
    fn backward_filter_matches_closed_form() {
        // g = 1: R(t) = 1/lambda + (r_end - 1/lambda) e^{lambda (t - t_end)}
        let (lambda, t_end) = (2.0, 3.0);
        let f = BackwardFilter::new(GainSignal::constant(1.0), lambda, 2, 1.0, t_end, 0.01).unwrap();
        for t in [0.0, 0.123, 1.5, 2.999, 3.0] {
            let exact = 0.5 + 0.5 * (lambda * (t - t_end)).exp();
            assert_abs_diff_eq!(f.eval(t).unwrap(), exact, epsilon = 1e-9);
        }
    }

    #[test]
    fn reversed_signals_flip_odd_derivatives() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let c = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let g = GainSignal::sinusoid(1.0, 0.5, 2.0, 0.3);
        let obs =
            Observer::new(observer_transform(&a, &c, DEFAULT_RANK_TOL).unwrap(), vec![g.clone()], 0.5, 2.0).unwrap();
        let sig = obs.signals(1, 0.7).unwrap();
        let fwd = g.derivatives(0.7, sig.g.len() - 1).unwrap();
        for (m, (s, f)) in sig.g.iter().zip(&fwd).enumerate() {
            assert_eq!(*s, if m % 2 == 1 { -f } else { *f });
        }
    }

    #[test]
    fn zero_error_copies_the_plant() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let c = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let obs =
            Observer::new(observer_transform(&a, &c, DEFAULT_RANK_TOL).unwrap(), vec![GainSignal::sine()], 0.5, 3.0)
                .unwrap();
        let sys = ObserverSystem { obs: &obs, input: None };
        let s0 = sys.initial_state(&[1.0, 0.0], &[1.0, 0.0]);
        let traj = integrate(&sys, &s0, 0.0, 3.0, 1e-3).unwrap();
        assert!(traj.diagnostic("err_norm").unwrap().iter().all(|e| *e < 1e-12));
    }

    #[test]
    fn measurement_table() {
        let t = MeasurementTable::from_text("[outputs]\n0 1 2\n1 3 4\n[inputs]\n0 0\n2 2\n").unwrap();
        assert_eq!(t.output(0.5), vec![2.0, 3.0]);
        assert_eq!(t.output(5.0), vec![3.0, 4.0]);
        assert_eq!(t.input(1.0), Some(vec![1.0]));
        assert!(matches!(MeasurementTable::from_text("0 1\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(MeasurementTable::from_text("[outputs]\n0 1\n0 2\n"), Err(Error::Parse { line: 3, .. })));
    }
}
