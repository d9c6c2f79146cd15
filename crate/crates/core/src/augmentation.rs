//! Augmented states `Omega` as time-varying linear forms in the canonical
//! state, their inverse, and the derivative expansions the control law needs.
//!
//! A form is a sum `sum_sym c_sym(t) * sym` over canonical components
//! `z[idx]` and downstream channel inputs `w_s = g_s u_s`, with [`GainPoly`]
//! coefficients in the gain and filter of the block being built. Time
//! derivatives substitute `z' = A_hat z + w` row by row, using the
//! structural coefficients `alpha`, `beta` rather than the numeric `A_hat`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gainpoly::GainPoly;
use crate::lti::CanonicalData;

/// Symbol a form coefficient multiplies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Sym {
    /// Canonical component `z[idx]` (0-based position in `z`).
    Z(usize),
    /// `g_s u_s` entering the last row of block `s` (1-based).
    W(usize),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinForm {
    terms: BTreeMap<Sym, GainPoly>,
}

impl LinForm {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn sym(s: Sym) -> Self {
        Self::term(s, GainPoly::one())
    }

    pub fn term(s: Sym, c: GainPoly) -> Self {
        let mut f = Self::zero();
        f.add_term(s, &c);
        f
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Sym, &GainPoly)> {
        self.terms.iter()
    }

    pub fn coeff(&self, s: Sym) -> GainPoly {
        self.terms.get(&s).cloned().unwrap_or_default()
    }

    fn add_term(&mut self, s: Sym, c: &GainPoly) {
        if c.is_zero() {
            return;
        }
        let sum = self.terms.get(&s).map_or_else(|| c.clone(), |old| old.add(c));
        if sum.is_zero() {
            self.terms.remove(&s);
        } else {
            self.terms.insert(s, sum);
        }
    }

    pub fn add(&self, other: &LinForm) -> LinForm {
        let mut out = self.clone();
        for (s, c) in &other.terms {
            out.add_term(*s, c);
        }
        out
    }

    pub fn sub(&self, other: &LinForm) -> LinForm {
        self.add(&other.scale(-1.0))
    }

    pub fn scale(&self, a: f64) -> LinForm {
        self.mul_poly(&GainPoly::constant(a))
    }

    pub fn mul_poly(&self, p: &GainPoly) -> LinForm {
        let mut out = LinForm::zero();
        for (s, c) in &self.terms {
            out.add_term(*s, &c.mul(p));
        }
        out
    }

    /// Smallest divisibility over all coefficients.
    pub fn divisibility(&self) -> u32 {
        self.terms.values().map(GainPoly::divisibility).min().unwrap_or(u32::MAX)
    }

    pub fn div_g(&self, block: usize) -> Result<LinForm> {
        let mut out = LinForm::zero();
        for (s, c) in &self.terms {
            out.add_term(*s, &c.div_g(block)?);
        }
        Ok(out)
    }

    pub fn has_inputs(&self) -> bool {
        self.terms.keys().any(|s| matches!(s, Sym::W(_)))
    }

    pub fn max_order(&self) -> Option<usize> {
        self.terms.values().filter_map(GainPoly::max_order).max()
    }

    /// Evaluates the form; `w[s-1]` supplies `g_s u_s` for every `W(s)`
    /// present. `block` labels missing-input errors.
    pub fn eval(&self, z: &[f64], sig: &BlockSignals, w: &[Option<f64>], block: usize) -> Result<f64> {
        let mut v = 0.0;
        for (s, c) in &self.terms {
            let x = match *s {
                Sym::Z(i) => z[i],
                Sym::W(b) => {
                    w.get(b - 1).copied().flatten().ok_or(Error::MissingDownstreamControl { block, needed: b })?
                }
            };
            v += c.eval(&sig.g, sig.r, sig.lambda) * x;
        }
        Ok(v)
    }
}

/// Values the coefficient polynomials of one block are evaluated at.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSignals {
    /// `[g, g', g'', ...]` of the block gain.
    pub g: Vec<f64>,
    pub r: f64,
    pub lambda: f64,
}

/// `z'` of every canonical row as a form with constant coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalRows {
    rows: Vec<Option<LinForm>>,
    /// `(block, position)` of each row.
    place: Vec<(usize, usize)>,
}

impl CanonicalRows {
    /// With `alpha_known = false` the controlled rows (whose coefficients
    /// are being estimated online) are left unavailable.
    pub fn new(cd: &CanonicalData, alpha_known: bool) -> Self {
        let n = cd.n();
        let p = cd.p();
        let mut rows = Vec::with_capacity(n);
        let mut place = Vec::with_capacity(n);
        for idx in 0..n {
            let (s, l) = cd.locate(idx);
            place.push((s, l));
            let rs = cd.r_of(s);
            let mut f = LinForm::zero();
            for t in s + 1..=p {
                f.add_term(Sym::Z(cd.index(t, 1)), &GainPoly::constant(cd.beta(s, t, l)));
            }
            if l < rs {
                f.add_term(Sym::Z(idx + 1), &GainPoly::one());
                rows.push(Some(f));
            } else if alpha_known {
                for i in 1..=rs {
                    f.add_term(Sym::Z(cd.index(s, i)), &GainPoly::constant(-cd.alpha(s, rs - i + 1)));
                }
                f.add_term(Sym::W(s), &GainPoly::one());
                rows.push(Some(f));
            } else {
                rows.push(None);
            }
        }
        Self { rows, place }
    }

    /// Time derivative of `form` for block `block` with filter exponent `k`.
    pub fn differentiate(&self, form: &LinForm, k: u32, block: usize) -> Result<LinForm> {
        let mut out = LinForm::zero();
        for (s, c) in &form.terms {
            let dc = c.differentiate(k);
            out.add_term(*s, &dc);
            match *s {
                Sym::Z(idx) => {
                    let row = self.rows[idx].as_ref().ok_or_else(|| {
                        let (b, _) = self.place[idx];
                        Error::UnsupportedCoupling {
                            block,
                            detail: format!(
                                "derivative chain reaches the controlled row of block {b}, whose coefficients are unknown"
                            ),
                        }
                    })?;
                    out = out.add(&row.mul_poly(c));
                }
                Sym::W(b) => {
                    return Err(Error::UnsupportedCoupling {
                        block,
                        detail: format!("expansion needs the time derivative of the control of block {b}"),
                    })
                }
            }
        }
        Ok(out)
    }
}

/// Augmented-state forms of every block.
#[derive(Debug, Clone, PartialEq)]
pub struct OmegaMap {
    pub k: u32,
    pub r: Vec<usize>,
    /// `blocks[j-1][i-1]` is `Omega_{j,i}` as a form in `z`.
    pub blocks: Vec<Vec<LinForm>>,
    offsets: Vec<usize>,
    n: usize,
}

/// `Omega_1 = z_1`, `Omega_{i+1} = Omega_i' + (g^k/2R) Omega_i - sum_s beta_{j,s,i} z_{s,1}`.
pub fn build_omega_map(cd: &CanonicalData, rows: &CanonicalRows, k: u32) -> Result<OmegaMap> {
    let p = cd.p();
    let w = GainPoly::half_weight(k);
    let mut blocks = Vec::with_capacity(p);
    for j in 1..=p {
        let rj = cd.r_of(j);
        let mut om = vec![LinForm::sym(Sym::Z(cd.index(j, 1)))];
        for i in 1..rj {
            let prev = &om[i - 1];
            let mut next = rows.differentiate(prev, k, j)?.add(&prev.mul_poly(&w));
            for s in j + 1..=p {
                next.add_term(Sym::Z(cd.index(s, 1)), &GainPoly::constant(-cd.beta(j, s, i)));
            }
            if next.has_inputs() {
                return Err(Error::UnsupportedCoupling {
                    block: j,
                    detail: format!("augmented state {} depends on a downstream control", i + 1),
                });
            }
            om.push(next);
        }
        blocks.push(om);
    }
    Ok(OmegaMap { k, r: cd.r.clone(), blocks, offsets: (1..=p).map(|j| cd.offset(j)).collect(), n: cd.n() })
}

impl OmegaMap {
    pub fn p(&self) -> usize {
        self.r.len()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn row(&self, j: usize, i: usize) -> usize {
        self.offsets[j - 1] + i - 1
    }

    /// Highest gain derivative order any block form references.
    pub fn max_order(&self, j: usize) -> usize {
        self.blocks[j - 1].iter().filter_map(LinForm::max_order).max().unwrap_or(0)
    }

    /// Numeric `M(t)` with `Omega = M z`; unit lower triangular.
    pub fn matrix(&self, sig: &[BlockSignals]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for (jm1, forms) in self.blocks.iter().enumerate() {
            let s = &sig[jm1];
            for (im1, f) in forms.iter().enumerate() {
                let row = self.row(jm1 + 1, im1 + 1);
                for (sym, c) in f.terms() {
                    if let Sym::Z(col) = *sym {
                        m[(row, col)] += c.eval(&s.g, s.r, s.lambda);
                    }
                }
            }
        }
        m
    }

    pub fn eval(&self, z: &[f64], sig: &[BlockSignals]) -> DVector<f64> {
        let mut out = DVector::zeros(self.n);
        for (jm1, forms) in self.blocks.iter().enumerate() {
            for (im1, f) in forms.iter().enumerate() {
                out[self.row(jm1 + 1, im1 + 1)] = f.eval(z, &sig[jm1], &[], jm1 + 1).expect("map forms are input free");
            }
        }
        out
    }

    /// Forward substitution through the unit lower-triangular map.
    pub fn invert(&self, omega: &[f64], sig: &[BlockSignals]) -> DVector<f64> {
        let m = self.matrix(sig);
        let mut z = DVector::zeros(self.n);
        for row in 0..self.n {
            let mut v = omega[row];
            for col in 0..row {
                v -= m[(row, col)] * z[col];
            }
            z[row] = v;
        }
        z
    }

    /// Text dump, one monomial per line:
    /// `block omega_index target coeff monomial`.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        for (jm1, forms) in self.blocks.iter().enumerate() {
            for (im1, f) in forms.iter().enumerate() {
                for (sym, c) in f.terms() {
                    let target = match sym {
                        Sym::Z(i) => format!("z[{i}]"),
                        Sym::W(b) => format!("w[{b}]"),
                    };
                    for (key, coeff) in c.terms() {
                        let _ = writeln!(s, "{} {} {} {:e} {}", jm1 + 1, im1 + 1, target, coeff, key);
                    }
                }
            }
        }
        s
    }
}

pub fn eval_omega(map: &OmegaMap, z: &[f64], sig: &[BlockSignals]) -> DVector<f64> {
    map.eval(z, sig)
}

pub fn invert_omega(map: &OmegaMap, omega: &[f64], sig: &[BlockSignals]) -> DVector<f64> {
    map.invert(omega, sig)
}

/// Pre-divided pieces of the control law of one block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockLaw {
    pub block: usize,
    /// `(Omega_i - z_i) / g` for `i = 1..r`.
    pub residual_over_g: Vec<LinForm>,
    /// `d/dt (Omega_r - z_r)`.
    pub residual_derivative: LinForm,
    /// `d/dt (Omega_r - z_r) / g`.
    pub residual_derivative_over_g: LinForm,
    /// `(g^(k-1) / 2R) Omega_r`.
    pub damping: LinForm,
    /// Divisibility of the expressions entering the `1/g` products.
    pub divisibility: u32,
}

impl BlockLaw {
    pub fn max_order(&self) -> usize {
        self.residual_over_g
            .iter()
            .chain([&self.residual_derivative, &self.damping])
            .filter_map(LinForm::max_order)
            .max()
            .unwrap_or(0)
    }
}

pub fn build_block_law(map: &OmegaMap, rows: &CanonicalRows, cd: &CanonicalData, j: usize) -> Result<BlockLaw> {
    let rj = cd.r_of(j);
    let forms = &map.blocks[j - 1];
    let residuals: Vec<LinForm> = (1..=rj).map(|i| forms[i - 1].sub(&LinForm::sym(Sym::Z(cd.index(j, i))))).collect();
    let residual_derivative = rows.differentiate(&residuals[rj - 1], map.k, j)?;
    let divisibility = residuals
        .iter()
        .chain(std::iter::once(&residual_derivative))
        .map(LinForm::divisibility)
        .min()
        .unwrap_or(u32::MAX);
    let residual_over_g = residuals.iter().map(|f| f.div_g(j)).collect::<Result<Vec<_>>>()?;
    let residual_derivative_over_g = residual_derivative.div_g(j)?;
    let damping = forms[rj - 1].mul_poly(&GainPoly::half_weight(map.k).div_g(j)?);
    Ok(BlockLaw { block: j, residual_over_g, residual_derivative, residual_derivative_over_g, damping, divisibility })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualDerivative {
    pub value: f64,
    /// Times the expression divides by `g`; at least 1 for a buildable law.
    pub divisibility: u32,
}

/// `d/dt (Omega_r - z_r)` of block `law.block` at `z`, with downstream
/// `g_s u_s` values in `w`.
pub fn omega_residual_derivative(
    law: &BlockLaw,
    z: &[f64],
    sig: &BlockSignals,
    w: &[Option<f64>],
) -> Result<ResidualDerivative> {
    Ok(ResidualDerivative {
        value: law.residual_derivative.eval(z, sig, w, law.block)?,
        divisibility: law.residual_derivative.divisibility(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn sig(g: &[f64], r: f64, lambda: f64) -> BlockSignals {
        BlockSignals { g: g.to_vec(), r, lambda }
    }

    fn single(r: usize) -> CanonicalData {
        CanonicalData::from_structure(vec![r], vec![vec![0.0; r]], vec![]).unwrap()
    }

    #[test]
    fn scalar_block_map_is_identity() {
        let cd = single(1);
        let rows = CanonicalRows::new(&cd, true);
        let map = build_omega_map(&cd, &rows, 2).unwrap();
        let s = [sig(&[0.3, 0.1], 0.7, 1.0)];
        assert_eq!(map.eval(&[2.5], &s).as_slice(), &[2.5]);
        let law = build_block_law(&map, &rows, &cd, 1).unwrap();
        assert!(law.residual_derivative.is_zero());
        let d = omega_residual_derivative(&law, &[2.5], &s[0], &[]).unwrap();
        assert_eq!(d.value, 0.0);
    }

    #[test]
    fn double_integrator_at_equilibrium_gain() {
        // g = 1, R = 1, lambda = 1: Omega_2 = z_2 + z_1 / 2
        let cd = single(2);
        let rows = CanonicalRows::new(&cd, true);
        let map = build_omega_map(&cd, &rows, 2).unwrap();
        let s = [sig(&[1.0, 0.0], 1.0, 1.0)];
        assert_eq!(map.eval(&[1.0, 0.0], &s).as_slice(), &[1.0, 0.5]);
        assert_eq!(map.invert(&[1.0, 0.5], &s).as_slice(), &[1.0, 0.0]);
        assert_eq!(map.invert(&[0.0, 0.0], &s).as_slice(), &[0.0, 0.0]);
        // d/dt(Omega_2 - z_2) = z_2 / 2 at R' = 0
        let law = build_block_law(&map, &rows, &cd, 1).unwrap();
        let z = [0.3, -0.8];
        let d = omega_residual_derivative(&law, &z, &s[0], &[]).unwrap();
        assert_abs_diff_eq!(d.value, 0.5 * z[1], epsilon = 1e-15);
        assert_eq!(d.divisibility, 1);
    }

    #[test]
    fn divisibility_depends_on_k() {
        let cd = single(3);
        let rows = CanonicalRows::new(&cd, true);
        let ok = build_omega_map(&cd, &rows, 4).and_then(|m| build_block_law(&m, &rows, &cd, 1));
        assert!(ok.unwrap().divisibility >= 1);
        let bad = build_omega_map(&cd, &rows, 2).and_then(|m| build_block_law(&m, &rows, &cd, 1));
        assert!(matches!(bad, Err(Error::NotDivisible { block: 1, .. })));
    }

    #[test]
    fn cross_block_terms_follow_the_recurrence() {
        // r = [2, 2], beta_{1,2} = (b1, b2)
        let (b1, b2) = (0.3, -0.4);
        let cd = CanonicalData::from_structure(
            vec![2, 2],
            vec![vec![0.5, 0.2], vec![0.0, -1.0]],
            vec![vec![vec![], vec![b1, b2]], vec![vec![], vec![]]],
        )
        .unwrap();
        let rows = CanonicalRows::new(&cd, true);
        let map = build_omega_map(&cd, &rows, 2).unwrap();
        // Omega_{1,2} = z_{1,2} + (g^2/2R) z_{1,1}: the beta_{1,2,1} z_{2,1}
        // coming from z_{1,1}' is cancelled by the subtracted term
        let f = &map.blocks[0][1];
        assert!(f.coeff(Sym::Z(cd.index(2, 1))).is_zero());
        assert_eq!(f.coeff(Sym::Z(cd.index(1, 2))), GainPoly::one());
        assert_eq!(f.coeff(Sym::Z(cd.index(1, 1))), GainPoly::half_weight(2));
        // the residual derivative picks up beta_{1,2,1} (g^2/2R) z_{2,1}
        let law = build_block_law(&map, &rows, &cd, 1).unwrap();
        let s = sig(&[0.8, 0.3], 1.3, 2.0);
        let c = law.residual_derivative.coeff(Sym::Z(cd.index(2, 1)));
        assert_abs_diff_eq!(c.eval(&s.g, s.r, s.lambda), b1 * 0.64 / 2.6, epsilon = 1e-15);
    }

    #[test]
    fn downstream_inputs_must_be_supplied() {
        // r = [3, 1]: the block-1 residual derivative reaches the block-2
        // controlled row
        let cd = CanonicalData::from_structure(
            vec![3, 1],
            vec![vec![0.0; 3], vec![1.0]],
            vec![vec![vec![], vec![0.5, 0.0, 0.0]], vec![vec![], vec![]]],
        )
        .unwrap();
        let rows = CanonicalRows::new(&cd, true);
        let map = build_omega_map(&cd, &rows, 4).unwrap();
        let law = build_block_law(&map, &rows, &cd, 1).unwrap();
        assert!(law.residual_derivative.has_inputs());
        let s = sig(&[0.9, 0.1, 0.2, 0.0], 1.0, 2.0);
        let z = [0.1, 0.2, 0.3, 0.4];
        assert_eq!(
            omega_residual_derivative(&law, &z, &s, &[None, None]),
            Err(Error::MissingDownstreamControl { block: 1, needed: 2 })
        );
        assert!(omega_residual_derivative(&law, &z, &s, &[None, Some(0.7)]).is_ok());
        // the same chain is unavailable when alpha_2 is being estimated
        let blind = CanonicalRows::new(&cd, false);
        assert!(matches!(build_block_law(&map, &blind, &cd, 1), Err(Error::UnsupportedCoupling { block: 1, .. })));
    }

    #[test]
    fn deep_coupling_is_rejected() {
        // r = [4, 1]: Omega_{1,4} would depend on u_2
        let cd = CanonicalData::from_structure(
            vec![4, 1],
            vec![vec![0.0; 4], vec![1.0]],
            vec![vec![vec![], vec![0.5, 0.0, 0.0, 0.0]], vec![vec![], vec![]]],
        )
        .unwrap();
        let rows = CanonicalRows::new(&cd, true);
        assert!(matches!(build_omega_map(&cd, &rows, 4), Err(Error::UnsupportedCoupling { block: 1, .. })));
    }

    #[test]
    fn dump_lists_monomials() {
        let cd = single(2);
        let rows = CanonicalRows::new(&cd, true);
        let map = build_omega_map(&cd, &rows, 2).unwrap();
        assert_eq!(map.dump(), "1 1 z[0] 1e0 1\n1 2 z[0] 5e-1 g^2*R^-1\n1 2 z[1] 1e0 1\n");
    }
}
