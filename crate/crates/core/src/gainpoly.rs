//! Polynomials in the derivatives of one gain `g`, inverse powers of its
//! filter state `R` and the filter decay `lambda`.
//!
//! Time derivatives substitute `R' = -lambda R + g^k`, so the language is
//! closed under differentiation. Division by `g` is exact: it lowers the
//! exponent of the underived `g` in every monomial and fails when some
//! monomial does not carry one.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};

/// Exponents of one monomial `prod_d (g^(d))^{e_d} * R^{-r_pow} * lambda^{lambda_pow}`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MonoKey {
    /// `g_exps[d]` is the exponent of `g^(d)`; no trailing zeros.
    pub g_exps: Vec<u32>,
    pub r_pow: u32,
    pub lambda_pow: u32,
}

impl MonoKey {
    pub fn new(mut g_exps: Vec<u32>, r_pow: u32, lambda_pow: u32) -> Self {
        while g_exps.last() == Some(&0) {
            g_exps.pop();
        }
        Self { g_exps, r_pow, lambda_pow }
    }

    pub fn unit() -> Self {
        Self::new(Vec::new(), 0, 0)
    }

    pub fn g_exp(&self, d: usize) -> u32 {
        self.g_exps.get(d).copied().unwrap_or(0)
    }

    fn with_g_exp(&self, d: usize, e: u32) -> Self {
        let mut g = self.g_exps.clone();
        if g.len() <= d {
            g.resize(d + 1, 0);
        }
        g[d] = e;
        Self::new(g, self.r_pow, self.lambda_pow)
    }

    fn mul(&self, other: &MonoKey) -> Self {
        let len = self.g_exps.len().max(other.g_exps.len());
        let g = (0..len).map(|d| self.g_exp(d) + other.g_exp(d)).collect();
        Self::new(g, self.r_pow + other.r_pow, self.lambda_pow + other.lambda_pow)
    }

    /// Highest derivative order of `g` present.
    pub fn max_order(&self) -> Option<usize> {
        self.g_exps.len().checked_sub(1)
    }

    fn eval(&self, g: &[f64], r: f64, lambda: f64) -> f64 {
        let mut v = 1.0;
        for (d, &e) in self.g_exps.iter().enumerate() {
            if e > 0 {
                v *= g[d].powi(e as i32);
            }
        }
        if self.r_pow > 0 {
            v /= r.powi(self.r_pow as i32);
        }
        if self.lambda_pow > 0 {
            v *= lambda.powi(self.lambda_pow as i32);
        }
        v
    }
}

impl fmt::Display for MonoKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        for (d, &e) in self.g_exps.iter().enumerate() {
            if e == 0 {
                continue;
            }
            let base = if d == 0 { "g".to_string() } else { format!("g^({d})") };
            parts.push(if e == 1 { base } else { format!("{base}^{e}") });
        }
        if self.r_pow > 0 {
            parts.push(format!("R^-{}", self.r_pow));
        }
        if self.lambda_pow > 0 {
            parts.push(if self.lambda_pow == 1 { "lambda".into() } else { format!("lambda^{}", self.lambda_pow) });
        }
        if parts.is_empty() {
            write!(f, "1")
        } else {
            write!(f, "{}", parts.join("*"))
        }
    }
}

/// Sum of monomials with real coefficients.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GainPoly {
    terms: BTreeMap<MonoKey, f64>,
}

impl GainPoly {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        Self::monomial(c, MonoKey::unit())
    }

    pub fn one() -> Self {
        Self::constant(1.0)
    }

    pub fn monomial(c: f64, key: MonoKey) -> Self {
        let mut p = Self::zero();
        p.add_term(key, c);
        p
    }

    /// `g^k / (2R)`.
    pub fn half_weight(k: u32) -> Self {
        Self::monomial(0.5, MonoKey::new(vec![k], 1, 0))
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&MonoKey, f64)> {
        self.terms.iter().map(|(k, c)| (k, *c))
    }

    pub fn coeff(&self, key: &MonoKey) -> f64 {
        self.terms.get(key).copied().unwrap_or(0.0)
    }

    fn add_term(&mut self, key: MonoKey, c: f64) {
        if c == 0.0 {
            return;
        }
        let entry = self.terms.entry(key).or_insert(0.0);
        *entry += c;
        if *entry == 0.0 {
            self.terms.retain(|_, v| *v != 0.0);
        }
    }

    pub fn add(&self, other: &GainPoly) -> GainPoly {
        let mut out = self.clone();
        for (k, c) in &other.terms {
            out.add_term(k.clone(), *c);
        }
        out
    }

    pub fn sub(&self, other: &GainPoly) -> GainPoly {
        self.add(&other.scale(-1.0))
    }

    pub fn scale(&self, s: f64) -> GainPoly {
        let mut out = GainPoly::zero();
        for (k, c) in &self.terms {
            out.add_term(k.clone(), c * s);
        }
        out
    }

    pub fn mul(&self, other: &GainPoly) -> GainPoly {
        let mut out = GainPoly::zero();
        for (ka, ca) in &self.terms {
            for (kb, cb) in &other.terms {
                out.add_term(ka.mul(kb), ca * cb);
            }
        }
        out
    }

    /// Time derivative with `(g^(d))' = g^(d+1)`, `lambda' = 0` and
    /// `(R^-m)' = m lambda R^-m - m g^k R^-(m+1)`.
    pub fn differentiate(&self, k: u32) -> GainPoly {
        let mut out = GainPoly::zero();
        for (key, &c) in &self.terms {
            for (d, &e) in key.g_exps.iter().enumerate() {
                if e == 0 {
                    continue;
                }
                let lowered = key.with_g_exp(d, e - 1);
                let raised = lowered.with_g_exp(d + 1, lowered.g_exp(d + 1) + 1);
                out.add_term(raised, c * e as f64);
            }
            if key.r_pow > 0 {
                let m = key.r_pow as f64;
                out.add_term(MonoKey::new(key.g_exps.clone(), key.r_pow, key.lambda_pow + 1), c * m);
                let boosted = key.with_g_exp(0, key.g_exp(0) + k);
                out.add_term(MonoKey::new(boosted.g_exps, key.r_pow + 1, key.lambda_pow), -c * m);
            }
        }
        out
    }

    /// Number of times the polynomial can be divided by `g`
    /// (`u32::MAX` for the zero polynomial).
    pub fn divisibility(&self) -> u32 {
        self.terms.keys().map(|k| k.g_exp(0)).min().unwrap_or(u32::MAX)
    }

    /// Exact division by `g`; `block` labels the error.
    pub fn div_g(&self, block: usize) -> Result<GainPoly> {
        if let Some((key, c)) = self.terms.iter().find(|(k, _)| k.g_exp(0) == 0) {
            return Err(Error::NotDivisible { block, detail: format!("monomial {c:e}*{key} carries no factor g") });
        }
        let mut out = GainPoly::zero();
        for (key, &c) in &self.terms {
            out.add_term(key.with_g_exp(0, key.g_exp(0) - 1), c);
        }
        Ok(out)
    }

    /// Highest derivative order of `g` referenced.
    pub fn max_order(&self) -> Option<usize> {
        self.terms.keys().filter_map(MonoKey::max_order).max()
    }

    /// Evaluates with `g[d]` the `d`-th derivative of the gain.
    pub fn eval(&self, g: &[f64], r: f64, lambda: f64) -> f64 {
        self.terms.iter().map(|(k, c)| c * k.eval(g, r, lambda)).sum()
    }
}

impl fmt::Display for GainPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let parts: Vec<String> = self.terms.iter().map(|(k, c)| format!("{c:+e}*{k}")).collect();
        write!(f, "{}", parts.join(" "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn mono(c: f64, g: &[u32], r: u32, l: u32) -> GainPoly {
        GainPoly::monomial(c, MonoKey::new(g.to_vec(), r, l))
    }

    #[test]
    fn derivative_of_half_weight() {
        // (g^2 / 2R)' = g g' / R + lambda g^2 / 2R - g^4 / 2R^2
        let d = GainPoly::half_weight(2).differentiate(2);
        let expect = mono(1.0, &[1, 1], 1, 0).add(&mono(0.5, &[2], 1, 1)).add(&mono(-0.5, &[4], 2, 0));
        assert_eq!(d, expect);
        assert!(GainPoly::constant(3.0).differentiate(2).is_zero());
    }

    #[test]
    fn division() {
        let p = mono(1.0, &[2], 1, 0);
        assert_eq!(p.div_g(1).unwrap(), mono(1.0, &[1], 1, 0));
        let q = mono(1.0, &[0, 1], 1, 0);
        assert!(matches!(q.div_g(1), Err(Error::NotDivisible { block: 1, .. })));
        assert_eq!(GainPoly::zero().divisibility(), u32::MAX);
        assert_eq!(p.add(&mono(2.0, &[3, 1], 0, 0)).divisibility(), 2);
    }

    #[test]
    fn cancellation_removes_terms() {
        let p = mono(0.5, &[2], 1, 0);
        assert!(p.sub(&p).is_zero());
        assert_eq!(p.mul(&mono(2.0, &[1], 0, 1)), mono(1.0, &[3], 1, 1));
    }

    #[test]
    fn derivative_matches_finite_difference_along_filter() {
        // g = 1.2 + sin t; R integrated by RK4, the evaluated poly is then
        // differenced across t0.
        let (lambda, k) = (1.5, 2u32);
        let p = mono(0.7, &[3, 1], 2, 1).add(&mono(-1.1, &[2], 1, 0));
        let dp = p.differentiate(k);
        let g = |t: f64| [1.2 + t.sin(), t.cos(), -t.sin()];
        let rhs = |t: f64, r: f64| -lambda * r + g(t)[0].powi(2);
        // integrate R finely to t0 +- h
        let (t0, h): (f64, f64) = (0.8, 1e-4);
        let mut samples = Vec::new();
        let mut r = 1.0;
        let dt = h / 5.0;
        let steps = ((t0 + h) / dt).round() as usize;
        let want = [steps - 10, steps - 5, steps];
        for i in 0..=steps {
            if want.contains(&i) {
                samples.push((i as f64 * dt, r));
            }
            let t = i as f64 * dt;
            let k1 = rhs(t, r);
            let k2 = rhs(t + dt / 2.0, r + dt / 2.0 * k1);
            let k3 = rhs(t + dt / 2.0, r + dt / 2.0 * k2);
            let k4 = rhs(t + dt, r + dt * k3);
            r += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        let (ta, ra) = samples[0];
        let (tm, rm) = samples[1];
        let (tb, rb) = samples[2];
        let fd = (p.eval(&g(tb), rb, lambda) - p.eval(&g(ta), ra, lambda)) / (tb - ta);
        let an = dp.eval(&g(tm), rm, lambda);
        assert_abs_diff_eq!(fd, an, epsilon = 1e-4 * an.abs().max(1.0));
    }

    #[test]
    fn display() {
        assert_eq!(MonoKey::new(vec![2, 0, 1, 0], 1, 1).to_string(), "g^2*g^(2)*R^-1*lambda");
        assert_eq!(GainPoly::half_weight(2).to_string(), "+5e-1*g^2*R^-1");
    }
}
