//! Time-varying channel gains with analytic derivatives, the periodic
//! actuation schedules and a numeric persistence-of-excitation check.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::sync::OnceLock;

use crate::error::{Error, Result};

/// Highest derivative order offered by the mollifier bump.
pub const MOLLIFIER_MAX_ORDER: usize = 8;

/// Shape of a compactly supported bump on the unit interval `|s| < 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BumpShape {
    /// `1 + cos(pi s)`, peak 2, continuously differentiable once.
    Cosine,
    /// `exp(1 - 1/(1 - s^2))`, peak 1, smooth.
    Mollifier,
}

impl BumpShape {
    pub fn max_smooth_order(self) -> usize {
        match self {
            BumpShape::Cosine => 1,
            BumpShape::Mollifier => MOLLIFIER_MAX_ORDER,
        }
    }

    /// `d^n/ds^n` of the unit bump.
    fn eval(self, s: f64, n: usize) -> f64 {
        if s.abs() >= 1.0 {
            return 0.0;
        }
        match self {
            BumpShape::Cosine => {
                if n == 0 {
                    1.0 + (PI * s).cos()
                } else {
                    PI.powi(n as i32) * (PI * s + n as f64 * PI / 2.0).cos()
                }
            }
            BumpShape::Mollifier => {
                let w = 1.0 - s * s;
                let f = 1.0 - 1.0 / w;
                let p = &mollifier_polys()[n];
                let poly = p.iter().rev().fold(0.0, |acc, c| acc * s + c);
                if poly == 0.0 {
                    return 0.0;
                }
                (f - 2.0 * n as f64 * w.ln()).exp() * poly
            }
        }
    }
}

/// Numerator polynomials of the mollifier derivatives:
/// `psi^(n)(s) = exp(f(s)) P_n(s) / (1 - s^2)^(2n)`.
fn mollifier_polys() -> &'static [Vec<f64>] {
    static POLYS: OnceLock<Vec<Vec<f64>>> = OnceLock::new();
    POLYS.get_or_init(|| {
        let mul = |a: &[f64], b: &[f64]| {
            let mut out = vec![0.0; a.len() + b.len() - 1];
            for (i, x) in a.iter().enumerate() {
                for (j, y) in b.iter().enumerate() {
                    out[i + j] += x * y;
                }
            }
            out
        };
        let add = |a: &[f64], b: &[f64]| {
            let mut out = vec![0.0; a.len().max(b.len())];
            for (i, x) in a.iter().enumerate() {
                out[i] += x;
            }
            for (i, y) in b.iter().enumerate() {
                out[i] += y;
            }
            out
        };
        let w2 = [1.0, 0.0, -2.0, 0.0, 1.0]; // (1 - s^2)^2
        let mut polys = vec![vec![1.0]];
        for n in 0..MOLLIFIER_MAX_ORDER {
            let p = &polys[n];
            let dp: Vec<f64> =
                if p.len() > 1 { p.iter().enumerate().skip(1).map(|(i, c)| i as f64 * c).collect() } else { vec![0.0] };
            let nf = n as f64;
            // 4 n s (1 - s^2) - 2 s
            let lin = [0.0, 4.0 * nf - 2.0, 0.0, -4.0 * nf];
            polys.push(add(&mul(&dp, &w2), &mul(&lin, p)));
        }
        polys
    })
}

/// Scalar gain `g(t)` with analytic derivatives.
#[derive(Debug, Clone, PartialEq)]
pub enum GainSignal {
    Constant {
        value: f64,
    },
    /// `offset + amplitude * sin(omega t + phase)`.
    Sinusoid {
        offset: f64,
        amplitude: f64,
        omega: f64,
        phase: f64,
    },
    /// `amplitude * shape(s)` on the window `[start, start + width]`,
    /// repeated every `period` seconds when one is given.
    Bump {
        shape: BumpShape,
        start: f64,
        width: f64,
        period: Option<f64>,
        amplitude: f64,
    },
    Tabulated(Spline),
}

impl GainSignal {
    pub fn constant(value: f64) -> Self {
        GainSignal::Constant { value }
    }

    pub fn sinusoid(offset: f64, amplitude: f64, omega: f64, phase: f64) -> Self {
        GainSignal::Sinusoid { offset, amplitude, omega, phase }
    }

    /// `sin(t)`.
    pub fn sine() -> Self {
        Self::sinusoid(0.0, 1.0, 1.0, 0.0)
    }

    pub fn bump(shape: BumpShape, start: f64, width: f64, period: Option<f64>, amplitude: f64) -> Result<Self> {
        if !(width > 0.0) || !start.is_finite() || !amplitude.is_finite() {
            return Err(Error::BadSchedule(format!("bump needs a positive width, got {width}")));
        }
        if let Some(p) = period {
            if !(p >= width) || !p.is_finite() {
                return Err(Error::BadSchedule(format!("bump width {width} does not fit in period {p}")));
            }
        }
        Ok(GainSignal::Bump { shape, start, width, period, amplitude })
    }

    pub fn tabulated(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        Ok(GainSignal::Tabulated(Spline::natural(times, values)?))
    }

    /// Reads a two-column `t g` text file.
    pub fn tabulated_from_text(text: &str) -> Result<Self> {
        let mut ts = Vec::new();
        let mut gs = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .split(|c: char| c.is_whitespace() || c == ',')
                .filter(|s| !s.is_empty())
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() })?;
            if vals.len() != 2 {
                return Err(Error::Parse { line: i + 1, msg: format!("expected `t g`, got {} values", vals.len()) });
            }
            ts.push(vals[0]);
            gs.push(vals[1]);
        }
        Self::tabulated(ts, gs)
    }

    pub fn tabulated_from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::tabulated_from_text(&std::fs::read_to_string(path)?)
    }

    pub fn max_smooth_order(&self) -> usize {
        match self {
            GainSignal::Constant { .. } | GainSignal::Sinusoid { .. } => usize::MAX,
            GainSignal::Bump { shape, .. } => shape.max_smooth_order(),
            GainSignal::Tabulated(_) => 2,
        }
    }

    pub fn period(&self) -> Option<f64> {
        match self {
            GainSignal::Constant { .. } => Some(1.0),
            GainSignal::Sinusoid { omega, .. } if *omega != 0.0 => Some(2.0 * PI / omega.abs()),
            GainSignal::Sinusoid { .. } => Some(1.0),
            GainSignal::Bump { period, .. } => *period,
            GainSignal::Tabulated(_) => None,
        }
    }

    /// `d^order g / dt^order` at `t`.
    pub fn eval(&self, t: f64, order: usize) -> Result<f64> {
        let avail = self.max_smooth_order();
        if order > avail {
            return Err(Error::OrderUnavailable { requested: order, available: avail });
        }
        Ok(self.eval_unchecked(t, order))
    }

    /// `[g, g', ..., g^(order)]` at `t`.
    pub fn derivatives(&self, t: f64, order: usize) -> Result<Vec<f64>> {
        self.eval(t, order)?;
        Ok((0..=order).map(|d| self.eval_unchecked(t, d)).collect())
    }

    fn eval_unchecked(&self, t: f64, order: usize) -> f64 {
        match self {
            GainSignal::Constant { value } => {
                if order == 0 {
                    *value
                } else {
                    0.0
                }
            }
            GainSignal::Sinusoid { offset, amplitude, omega, phase } => {
                let base = amplitude * omega.powi(order as i32) * (omega * t + phase + order as f64 * PI / 2.0).sin();
                if order == 0 {
                    offset + base
                } else {
                    base
                }
            }
            GainSignal::Bump { shape, start, width, period, amplitude } => {
                let local = match period {
                    Some(p) => (t - start).rem_euclid(*p),
                    None => t - start,
                };
                let half = width / 2.0;
                let s = (local - half) / half;
                amplitude * half.recip().powi(order as i32) * shape.eval(s, order)
            }
            GainSignal::Tabulated(sp) => sp.eval(t, order),
        }
    }
}

impl fmt::Display for GainSignal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GainSignal::Constant { value } => write!(f, "constant({value})"),
            GainSignal::Sinusoid { offset, amplitude, omega, phase } => {
                write!(f, "sinusoid(offset={offset}, amplitude={amplitude}, omega={omega}, phase={phase})")
            }
            GainSignal::Bump { shape, start, width, period, amplitude } => {
                let name = match shape {
                    BumpShape::Cosine => "cosine-bump",
                    BumpShape::Mollifier => "mollifier-bump",
                };
                write!(f, "{name}(start={start}, width={width}, amplitude={amplitude}")?;
                match period {
                    Some(p) => write!(f, ", period={p})"),
                    None => write!(f, ")"),
                }
            }
            GainSignal::Tabulated(sp) => write!(f, "tabulated({} knots)", sp.times.len()),
        }
    }
}

/// Two alternating periodic bump gains: `g1` on `[0, on1]`, `g2` on
/// `[on1 + gap, on1 + gap + on2]`, both repeating every `period`.
pub fn bump_schedule(on1: f64, gap: f64, on2: f64, period: f64) -> Result<(GainSignal, GainSignal)> {
    bump_schedule_with(BumpShape::Cosine, on1, gap, on2, period)
}

pub fn bump_schedule_with(
    shape: BumpShape,
    on1: f64,
    gap: f64,
    on2: f64,
    period: f64,
) -> Result<(GainSignal, GainSignal)> {
    if !(on1 > 0.0 && on2 > 0.0 && gap >= 0.0 && period > 0.0) {
        return Err(Error::BadSchedule(format!(
            "windows must be positive and the gap non-negative (on1={on1}, gap={gap}, on2={on2}, period={period})"
        )));
    }
    if on1 + gap + on2 > period * (1.0 + 1e-12) {
        return Err(Error::BadSchedule(format!(
            "on1 + gap + on2 = {} overlaps the next period of length {period}",
            on1 + gap + on2
        )));
    }
    let g1 = GainSignal::bump(shape, 0.0, on1, Some(period), 1.0)?;
    let g2 = GainSignal::bump(shape, on1 + gap, on2, Some(period), 1.0)?;
    Ok((g1, g2))
}

/// Default schedule: 1.8 s on, 0.4 s gap, 1.8 s on, 4 s period.
pub fn default_bump_schedule() -> (GainSignal, GainSignal) {
    bump_schedule(1.8, 0.4, 1.8, 4.0).expect("default schedule is valid")
}

/// Natural cubic spline with linear extrapolation outside the knots.
#[derive(Debug, Clone, PartialEq)]
pub struct Spline {
    times: Vec<f64>,
    values: Vec<f64>,
    /// second derivatives at the knots
    m: Vec<f64>,
}

impl Spline {
    pub fn natural(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let n = times.len();
        if n < 2 || values.len() != n {
            return Err(Error::BadSchedule("spline needs at least two (t, g) pairs".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::BadSchedule("spline knots must be finite and strictly increasing".into()));
        }
        // tridiagonal system for interior second derivatives (Thomas algorithm)
        let mut m = vec![0.0; n];
        if n > 2 {
            let k = n - 2;
            let mut diag = vec![0.0; k];
            let mut upper = vec![0.0; k];
            let mut lower = vec![0.0; k];
            let mut rhs = vec![0.0; k];
            for i in 1..n - 1 {
                let h0 = times[i] - times[i - 1];
                let h1 = times[i + 1] - times[i];
                lower[i - 1] = h0;
                diag[i - 1] = 2.0 * (h0 + h1);
                upper[i - 1] = h1;
                rhs[i - 1] = 6.0 * ((values[i + 1] - values[i]) / h1 - (values[i] - values[i - 1]) / h0);
            }
            for i in 1..k {
                let w = lower[i] / diag[i - 1];
                diag[i] -= w * upper[i - 1];
                rhs[i] -= w * rhs[i - 1];
            }
            m[k] = rhs[k - 1] / diag[k - 1];
            for i in (0..k - 1).rev() {
                m[i + 1] = (rhs[i] - upper[i] * m[i + 2]) / diag[i];
            }
        }
        Ok(Self { times, values, m })
    }

    fn eval(&self, t: f64, order: usize) -> f64 {
        let ts = &self.times;
        let last = ts.len() - 1;
        if t < ts[0] || t > ts[last] {
            let (i, edge) = if t < ts[0] { (0, ts[0]) } else { (last - 1, ts[last]) };
            let at_edge = |o| self.segment(i, edge, o);
            return match order {
                0 => at_edge(0) + at_edge(1) * (t - edge),
                1 => at_edge(1),
                _ => 0.0,
            };
        }
        let i = match ts.partition_point(|x| *x <= t) {
            0 => 0,
            p => (p - 1).min(last - 1),
        };
        self.segment(i, t, order)
    }

    fn segment(&self, i: usize, t: f64, order: usize) -> f64 {
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let (y0, y1) = (self.values[i], self.values[i + 1]);
        let (m0, m1) = (self.m[i], self.m[i + 1]);
        let h = t1 - t0;
        let a = t1 - t;
        let b = t - t0;
        match order {
            0 => {
                m0 * a.powi(3) / (6.0 * h)
                    + m1 * b.powi(3) / (6.0 * h)
                    + (y0 / h - m0 * h / 6.0) * a
                    + (y1 / h - m1 * h / 6.0) * b
            }
            1 => -m0 * a * a / (2.0 * h) + m1 * b * b / (2.0 * h) - (y0 / h - m0 * h / 6.0) + (y1 / h - m1 * h / 6.0),
            2 => (m0 * a + m1 * b) / h,
            _ => 0.0,
        }
    }
}

/// Parameters of the finite-horizon persistence-of-excitation check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeSpec {
    pub window: f64,
    pub level: f64,
    pub horizon: f64,
    pub grid_dt: f64,
}

impl PeSpec {
    /// Default for a periodic gain: window of one period, level 1e-3,
    /// horizon of one period plus one window.
    pub fn for_period(period: f64) -> Self {
        Self { window: period, level: 1e-3, horizon: 2.0 * period, grid_dt: period / 400.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeReport {
    pub is_pe: bool,
    pub eps_hat: f64,
    /// Window start achieving the minimum.
    pub argmin: f64,
}

/// Minimum over window starts `t` on the grid of `int_t^{t+T} g^2`.
pub fn check_pe(sig: &GainSignal, spec: &PeSpec) -> Result<PeReport> {
    let PeSpec { window, level, horizon, grid_dt } = *spec;
    if !(window > 0.0 && grid_dt > 0.0 && grid_dt < window && level >= 0.0) {
        return Err(Error::InvalidArgument(format!("PE spec needs window > grid_dt > 0 and level >= 0, got {spec:?}")));
    }
    if !(horizon >= 2.0 * window) {
        return Err(Error::InvalidArgument(format!(
            "PE horizon {horizon} must cover at least two windows of {window}"
        )));
    }
    let g2 = |t: f64| sig.eval_unchecked(t, 0).powi(2);
    let simpson = |a: f64, b: f64| (b - a) / 6.0 * (g2(a) + 4.0 * g2(0.5 * (a + b)) + g2(b));

    let cells = (horizon / grid_dt).ceil() as usize;
    let mut cum = Vec::with_capacity(cells + 1);
    cum.push(0.0);
    for i in 0..cells {
        let a = i as f64 * grid_dt;
        let v = cum[i] + simpson(a, a + grid_dt);
        cum.push(v);
    }
    // C(x) for x not on the grid
    let cum_at = |x: f64| {
        let i = ((x / grid_dt).floor() as usize).min(cells);
        let xi = i as f64 * grid_dt;
        if x - xi <= 1e-14 * grid_dt.max(1.0) {
            cum[i]
        } else {
            cum[i] + simpson(xi, x)
        }
    };

    let starts = ((horizon - window) / grid_dt + 1e-9).floor() as usize;
    let mut best = f64::INFINITY;
    let mut argmin = 0.0;
    for i in 0..=starts {
        let t = i as f64 * grid_dt;
        let v = cum_at(t + window) - cum[i];
        if v < best {
            best = v;
            argmin = t;
        }
    }
    let eps_hat = best.max(0.0);
    Ok(PeReport { is_pe: eps_hat >= level && eps_hat > 0.0, eps_hat, argmin })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn simple_values() {
        assert_abs_diff_eq!(GainSignal::sine().eval(0.0, 1).unwrap(), 1.0);
        assert_eq!(GainSignal::constant(1.0).eval(3.0, 4).unwrap(), 0.0);
        let phi = GainSignal::bump(BumpShape::Cosine, -1.0, 2.0, None, 1.0).unwrap();
        assert_abs_diff_eq!(phi.eval(0.0, 0).unwrap(), 2.0);
        assert_abs_diff_eq!(phi.eval(1.0, 0).unwrap(), 0.0);
        assert_abs_diff_eq!(phi.eval(0.5, 1).unwrap(), -PI, epsilon = 1e-12);
        assert_eq!(phi.eval(0.0, 2), Err(Error::OrderUnavailable { requested: 2, available: 1 }));
    }

    #[test]
    fn schedule_support() {
        let (g1, g2) = default_bump_schedule();
        assert!(g1.eval(0.9, 0).unwrap() > 0.0);
        assert_eq!(g2.eval(0.9, 0).unwrap(), 0.0);
        assert_eq!(g1.eval(2.0, 0).unwrap(), 0.0);
        assert!(g2.eval(3.1, 0).unwrap() > 0.0);
        assert_abs_diff_eq!(g1.eval(4.9, 0).unwrap(), g1.eval(0.9, 0).unwrap(), epsilon = 1e-12);
        let mut overlap = 0.0f64;
        for i in 0..=40_000 {
            let t = i as f64 * 1e-4;
            overlap = overlap.max((g1.eval(t, 0).unwrap() * g2.eval(t, 0).unwrap()).abs());
        }
        assert_eq!(overlap, 0.0);
        assert!(matches!(bump_schedule(2.0, 0.5, 2.0, 4.0), Err(Error::BadSchedule(_))));
    }

    fn check_derivatives(sig: &GainSignal, t: f64, max: usize) {
        let h = 1e-5;
        for d in 0..max {
            let fd = (sig.eval(t + h, d).unwrap() - sig.eval(t - h, d).unwrap()) / (2.0 * h);
            let an = sig.eval(t, d + 1).unwrap();
            assert!((fd - an).abs() < 1e-5 * (1.0 + an.abs()), "{sig}: order {} at t={t}: fd {fd} vs {an}", d + 1);
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        check_derivatives(&GainSignal::sinusoid(0.3, 1.5, 2.0, 0.4), 0.7, 6);
        let (g1, g2) = default_bump_schedule();
        for t in [0.3, 0.9, 1.5, 2.5, 3.0, 5.1] {
            check_derivatives(&g1, t, 1);
            check_derivatives(&g2, t, 1);
        }
        let (m1, _) = bump_schedule_with(BumpShape::Mollifier, 1.8, 0.4, 1.8, 4.0).unwrap();
        for t in [0.2, 0.5, 0.9, 1.4, 1.7] {
            check_derivatives(&m1, t, 5);
        }
    }

    #[test]
    fn mollifier_polynomials() {
        let p = mollifier_polys();
        let padded = |v: &[f64]| -> Vec<f64> { v.iter().copied().chain(std::iter::repeat(0.0)).take(9).collect() };
        assert_eq!(padded(&p[1]), padded(&[0.0, -2.0]));
        // P_2 = 6 s^4 - 2
        assert_eq!(padded(&p[2]), padded(&[-2.0, 0.0, 0.0, 0.0, 6.0]));
        let m = GainSignal::bump(BumpShape::Mollifier, -1.0, 2.0, None, 1.0).unwrap();
        assert_abs_diff_eq!(m.eval(0.0, 0).unwrap(), 1.0);
        assert_abs_diff_eq!(m.eval(0.0, 2).unwrap(), -2.0, epsilon = 1e-12);
        assert!(m.eval(0.999, 8).unwrap().is_finite());
    }

    #[test]
    fn spline_interpolates_and_extrapolates() {
        let ts: Vec<f64> = (0..=20).map(|i| i as f64 * 0.25).collect();
        let gs: Vec<f64> = ts.iter().map(|t| t.sin()).collect();
        let sp = GainSignal::tabulated(ts.clone(), gs).unwrap();
        for &t in &ts {
            assert_abs_diff_eq!(sp.eval(t, 0).unwrap(), t.sin(), epsilon = 1e-12);
        }
        assert_abs_diff_eq!(sp.eval(2.1, 0).unwrap(), 2.1f64.sin(), epsilon = 1e-3);
        check_derivatives(&sp, 1.3, 2);
        // linear beyond the last knot
        let e = sp.eval(5.0, 0).unwrap();
        let s = sp.eval(5.0, 1).unwrap();
        assert_abs_diff_eq!(sp.eval(6.0, 0).unwrap(), e + s, epsilon = 1e-12);
        assert_eq!(sp.eval(6.0, 2).unwrap(), 0.0);

        let parsed = GainSignal::tabulated_from_text("# t g\n0 0\n1 1\n2 0\n").unwrap();
        assert_abs_diff_eq!(parsed.eval(1.0, 0).unwrap(), 1.0, epsilon = 1e-14);
        assert!(matches!(GainSignal::tabulated_from_text("0 1 2\n"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn pe_of_sine_and_zero() {
        let spec = PeSpec { window: 2.0 * PI, level: 1e-3, horizon: 4.0 * PI, grid_dt: 0.01 };
        let rep = check_pe(&GainSignal::sine(), &spec).unwrap();
        assert!(rep.is_pe);
        assert_abs_diff_eq!(rep.eps_hat, PI, epsilon = 1e-6);
        let rep = check_pe(&GainSignal::constant(0.0), &spec).unwrap();
        assert!(!rep.is_pe);
        assert_eq!(rep.eps_hat, 0.0);
    }

    #[test]
    fn pe_of_default_schedule() {
        let (g1, g2) = default_bump_schedule();
        // one full bump per window: 0.9 * int_{-1}^{1} (1 + cos(pi s))^2 ds = 2.7
        for g in [&g1, &g2] {
            let rep = check_pe(g, &PeSpec::for_period(4.0)).unwrap();
            assert!(rep.is_pe);
            assert_abs_diff_eq!(rep.eps_hat, 2.7, epsilon = 2.7e-3);
        }
    }
}
