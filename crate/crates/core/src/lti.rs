//! Plant representation, controllability analysis and the block-triangular
//! multivariable canonical form.
//!
//! The canonical coordinates `z = T x` stack the blocks top to bottom as
//! `[z_p; z_{p-1}; ...; z_1]`. Block `j` has `r_j` states, a companion
//! diagonal block with coefficients `alpha_{j,1..r_j}`, and is driven only
//! through the *first* state of every block `s > j` (coefficients
//! `beta_{j,s,1..r_j}`). Block `p` is decoupled from the rest. Input `j`
//! enters the last row of block `j` with unit weight.
//!
//! The transform is built from Krylov chains of the input columns scanned
//! input by input (`b_1, A b_1, ..., b_2, A b_2, ...`). That ordering is the
//! one for which the chain of every input closes on the chains of the
//! inputs before it, which is exactly what the first-column coupling pattern
//! needs.

use std::fmt::Write as _;
use std::ops::Range;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const DEFAULT_RANK_TOL: f64 = 1e-9;
pub const DEFAULT_MAX_COND: f64 = 1e12;

/// Linear plant `x' = A x + B G(t) u`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantModel {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl PlantModel {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n {
            return Err(Error::InvalidPlant(format!(
                "A must be square and non-empty, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != n {
            return Err(Error::InvalidPlant(format!("B has {} rows, expected {}", b.nrows(), n)));
        }
        let m = b.ncols();
        if m == 0 || m > n {
            return Err(Error::InvalidPlant(format!("input count m = {m} must satisfy 1 <= m <= n = {n}")));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidPlant("non-finite matrix entry".into()));
        }
        Ok(Self { a, b })
    }

    pub fn from_rows(a: &[&[f64]], b: &[&[f64]]) -> Result<Self> {
        let n = a.len();
        let m = b.first().map_or(0, |r| r.len());
        if a.iter().any(|r| r.len() != n) || b.iter().any(|r| r.len() != m) {
            return Err(Error::InvalidPlant("ragged matrix rows".into()));
        }
        let a = DMatrix::from_fn(n, n, |i, j| a[i][j]);
        let b = DMatrix::from_fn(b.len(), m, |i, j| b[i][j]);
        Self::new(a, b)
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    /// Parses the plain-text plant format: a header line `n m`, then `n`
    /// rows of `A`, then `n` rows of `B`. Blank lines and `#` comments are
    /// skipped.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut rows = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());

        let (hline, header) = rows.next().ok_or(Error::Parse { line: 1, msg: "empty plant file".into() })?;
        let dims = parse_numbers(header, hline)?;
        if dims.len() != 2 || dims.iter().any(|d| *d < 1.0 || d.fract() != 0.0) {
            return Err(Error::Parse { line: hline, msg: format!("expected header `n m`, got `{header}`") });
        }
        let (n, m) = (dims[0] as usize, dims[1] as usize);

        let mut read_block = |cols: usize, what: &str| -> Result<DMatrix<f64>> {
            let mut mat = DMatrix::zeros(n, cols);
            for i in 0..n {
                let (line, text) =
                    rows.next().ok_or(Error::Parse { line: hline, msg: format!("missing row {} of {what}", i + 1) })?;
                let vals = parse_numbers(text, line)?;
                if vals.len() != cols {
                    return Err(Error::Parse {
                        line,
                        msg: format!("row {} of {what} has {} entries, expected {cols}", i + 1, vals.len()),
                    });
                }
                for (j, v) in vals.into_iter().enumerate() {
                    mat[(i, j)] = v;
                }
            }
            Ok(mat)
        };
        let a = read_block(n, "A")?;
        let b = read_block(m, "B")?;
        if let Some((line, _)) = rows.next() {
            return Err(Error::Parse { line, msg: "trailing data after B".into() });
        }
        Self::new(a, b)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{} {}\n", self.n(), self.m());
        for mat in [&self.a, &self.b] {
            for i in 0..mat.nrows() {
                let row: Vec<String> = mat.row(i).iter().map(|v| format!("{v:e}")).collect();
                let _ = writeln!(s, "{}", row.join(" "));
            }
        }
        s
    }
}

fn parse_numbers(text: &str, line: usize) -> Result<Vec<f64>> {
    text.split_whitespace()
        .map(|tok| tok.parse::<f64>().map_err(|_| Error::Parse { line, msg: format!("`{tok}` is not a number") }))
        .collect()
}

/// `[B, AB, A^2 B, ..., A^{n-1} B]`.
pub fn controllability_matrix(plant: &PlantModel) -> DMatrix<f64> {
    let (n, m) = (plant.n(), plant.m());
    let mut out = DMatrix::zeros(n, n * m);
    let mut block = plant.b.clone();
    for i in 0..n {
        out.view_mut((0, i * m), (n, m)).copy_from(&block);
        block = &plant.a * block;
    }
    out
}

/// Order in which controllability-matrix columns are scanned for
/// independence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScanOrder {
    /// `b_1, A b_1, A^2 b_1, ..., b_2, A b_2, ...`; chain `j` stops at the
    /// first power that depends on everything kept so far. These are the
    /// block sizes of the canonical form.
    #[default]
    InputSequential,
    /// `b_1, ..., b_m, A b_1, ..., A b_m, ...` (Luenberger indices).
    InputCyclic,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ControllabilityIndices {
    /// Kept chain length for every input column, zero for redundant inputs.
    pub per_input: Vec<usize>,
    /// Chain lengths of the inputs with a non-empty chain, in input order.
    pub r: Vec<usize>,
    /// Input column index (0-based) of each entry of `r`.
    pub active_inputs: Vec<usize>,
}

impl ControllabilityIndices {
    pub fn p(&self) -> usize {
        self.r.len()
    }
}

/// Keeps unit-normalized columns and decides independence with an SVD rank
/// test at `rank_tol * sigma_max`.
struct ColumnSet {
    cols: Vec<DVector<f64>>,
    tol: f64,
}

impl ColumnSet {
    fn new(tol: f64) -> Self {
        Self { cols: Vec::new(), tol }
    }

    fn try_add(&mut self, c: &DVector<f64>, scale: f64) -> bool {
        let norm = c.norm();
        if norm == 0.0 || norm <= self.tol * scale {
            return false;
        }
        let unit = c / norm;
        let k = self.cols.len() + 1;
        let n = unit.len();
        if k > n {
            return false;
        }
        let mut m = DMatrix::zeros(n, k);
        for (j, col) in self.cols.iter().chain(std::iter::once(&unit)).enumerate() {
            m.set_column(j, col);
        }
        let sv = m.svd(false, false).singular_values;
        let smax = sv.max();
        let rank = sv.iter().filter(|&&s| s > self.tol * smax).count();
        if rank == k {
            self.cols.push(unit);
            true
        } else {
            false
        }
    }
}

fn op_norm(a: &DMatrix<f64>) -> f64 {
    if a.iter().all(|v| *v == 0.0) {
        0.0
    } else {
        a.clone().svd(false, false).singular_values.max()
    }
}

/// Canonical block sizes (input-sequential scan).
pub fn controllability_indices(plant: &PlantModel, rank_tol: f64) -> Result<ControllabilityIndices> {
    controllability_indices_with(plant, rank_tol, ScanOrder::InputSequential)
}

pub fn controllability_indices_with(
    plant: &PlantModel,
    rank_tol: f64,
    order: ScanOrder,
) -> Result<ControllabilityIndices> {
    if !(rank_tol > 0.0) {
        return Err(Error::InvalidArgument(format!("rank_tol must be positive, got {rank_tol}")));
    }
    let (n, m) = (plant.n(), plant.m());
    let a = &plant.a;
    let a_norm = op_norm(a).max(f64::MIN_POSITIVE);
    let mut set = ColumnSet::new(rank_tol);
    let mut per_input = vec![0usize; m];

    // magnitude reference for A^i b_j, used to reject round-off residue
    let scale = |i: usize, b: &DVector<f64>| a_norm.powi(i as i32) * b.norm();

    match order {
        ScanOrder::InputSequential => {
            for (j, count) in per_input.iter_mut().enumerate() {
                let b = plant.b.column(j).into_owned();
                let mut c = b.clone();
                for i in 0..n {
                    if !set.try_add(&c, scale(i, &b)) {
                        break;
                    }
                    *count += 1;
                    c = a * c;
                }
            }
        }
        ScanOrder::InputCyclic => {
            let mut alive = vec![true; m];
            let mut cols: Vec<DVector<f64>> = (0..m).map(|j| plant.b.column(j).into_owned()).collect();
            for i in 0..n {
                for j in 0..m {
                    if !alive[j] {
                        continue;
                    }
                    let b = plant.b.column(j).into_owned();
                    if set.try_add(&cols[j], scale(i, &b)) {
                        per_input[j] += 1;
                        cols[j] = a * &cols[j];
                    } else {
                        alive[j] = false;
                    }
                }
            }
        }
    }

    let found: usize = per_input.iter().sum();
    if found < n {
        return Err(Error::NotControllable { found, needed: n });
    }
    let active_inputs: Vec<usize> = (0..m).filter(|&j| per_input[j] > 0).collect();
    let r = active_inputs.iter().map(|&j| per_input[j]).collect();
    Ok(ControllabilityIndices { per_input, r, active_inputs })
}

/// Result of the canonical transformation.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalData {
    pub t: DMatrix<f64>,
    pub t_inv: DMatrix<f64>,
    pub a_hat: DMatrix<f64>,
    pub b_hat: DMatrix<f64>,
    /// `r[j-1]` is the size of block `j`.
    pub r: Vec<usize>,
    /// `alpha[j-1][i-1]` is `alpha_{j,i}`.
    pub alpha: Vec<Vec<f64>>,
    /// `beta[k-1][j-1][l-1]` is `beta_{k,j,l}` for `k < j`; empty otherwise.
    pub beta: Vec<Vec<Vec<f64>>>,
    /// Plant input column feeding block `j` is `block_inputs[j-1]`.
    pub block_inputs: Vec<usize>,
    pub redundant_inputs: Vec<usize>,
}

impl CanonicalData {
    pub fn p(&self) -> usize {
        self.r.len()
    }

    pub fn n(&self) -> usize {
        self.a_hat.nrows()
    }

    pub fn m(&self) -> usize {
        self.b_hat.ncols()
    }

    pub fn max_r(&self) -> usize {
        self.r.iter().copied().max().unwrap_or(0)
    }

    /// Size of block `j` (1-based).
    pub fn r_of(&self, j: usize) -> usize {
        self.r[j - 1]
    }

    /// First row of block `j` in `z`.
    pub fn offset(&self, j: usize) -> usize {
        self.r[j..].iter().sum()
    }

    /// Row of state `i` (1-based) of block `j` in `z`.
    pub fn index(&self, j: usize, i: usize) -> usize {
        debug_assert!(i >= 1 && i <= self.r_of(j));
        self.offset(j) + i - 1
    }

    pub fn block_range(&self, j: usize) -> Range<usize> {
        let o = self.offset(j);
        o..o + self.r_of(j)
    }

    /// `(block, position)` (both 1-based) of row `idx` of `z`.
    pub fn locate(&self, idx: usize) -> (usize, usize) {
        for j in 1..=self.p() {
            let range = self.block_range(j);
            if range.contains(&idx) {
                return (j, idx - range.start + 1);
            }
        }
        panic!("row {idx} outside canonical state of dimension {}", self.n());
    }

    pub fn alpha(&self, j: usize, i: usize) -> f64 {
        self.alpha[j - 1][i - 1]
    }

    pub fn beta(&self, k: usize, j: usize, l: usize) -> f64 {
        if k >= j {
            return 0.0;
        }
        self.beta[k - 1][j - 1][l - 1]
    }

    /// Sub-block `A_hat_{k,j}` (rows of block `k`, columns of block `j`).
    pub fn block(&self, k: usize, j: usize) -> DMatrix<f64> {
        let (rk, rj) = (self.block_range(k), self.block_range(j));
        self.a_hat.view((rk.start, rj.start), (rk.len(), rj.len())).into_owned()
    }

    /// Induced 2-norm of `A_hat_{k,j}`.
    pub fn coupling_norm(&self, k: usize, j: usize) -> f64 {
        op_norm(&self.block(k, j))
    }

    /// Canonical drift rebuilt from `alpha` and `beta` alone, with exact
    /// structural zeros.
    pub fn structured_a_hat(&self) -> DMatrix<f64> {
        structured_a_hat(&self.r, &self.alpha, &self.beta)
    }

    /// Canonical data for a plant given directly in canonical coordinates:
    /// `T = I`, one input per block.
    pub fn from_structure(r: Vec<usize>, alpha: Vec<Vec<f64>>, beta: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let p = r.len();
        if p == 0 || r.contains(&0) {
            return Err(Error::InvalidArgument("block sizes must be positive".into()));
        }
        if alpha.len() != p || alpha.iter().zip(&r).any(|(a, &rj)| a.len() != rj) {
            return Err(Error::Dimension("alpha must have r_j entries per block".into()));
        }
        let beta = normalize_beta(&r, beta)?;
        let n: usize = r.iter().sum();
        let a_hat = structured_a_hat(&r, &alpha, &beta);
        let mut b_hat = DMatrix::zeros(n, p);
        let mut data = Self {
            t: DMatrix::identity(n, n),
            t_inv: DMatrix::identity(n, n),
            a_hat,
            b_hat: b_hat.clone(),
            r,
            alpha,
            beta,
            block_inputs: (0..p).collect(),
            redundant_inputs: Vec::new(),
        };
        for j in 1..=p {
            b_hat[(data.index(j, data.r_of(j)), j - 1)] = 1.0;
        }
        data.b_hat = b_hat;
        Ok(data)
    }

    /// `||T^{-1} A_hat T - A||_F / ||A||_F` (absolute when `A = 0`).
    pub fn round_trip_error(&self, a: &DMatrix<f64>) -> f64 {
        let back = &self.t_inv * &self.a_hat * &self.t;
        let err = (back - a).norm();
        let scale = a.norm();
        if scale > 0.0 {
            err / scale
        } else {
            err
        }
    }
}

fn normalize_beta(r: &[usize], beta: Vec<Vec<Vec<f64>>>) -> Result<Vec<Vec<Vec<f64>>>> {
    let p = r.len();
    if beta.is_empty() {
        return Ok((0..p)
            .map(|k| (0..p).map(|j| if k < j { vec![0.0; r[k]] } else { Vec::new() }).collect())
            .collect());
    }
    if beta.len() != p {
        return Err(Error::Dimension("beta must have p rows".into()));
    }
    let mut out = beta;
    for k in 0..p {
        if out[k].len() != p {
            return Err(Error::Dimension("beta must be p x p".into()));
        }
        for j in 0..p {
            if k < j {
                if out[k][j].is_empty() {
                    out[k][j] = vec![0.0; r[k]];
                } else if out[k][j].len() != r[k] {
                    return Err(Error::Dimension(format!(
                        "beta[{}][{}] must have r_{} = {} entries",
                        k + 1,
                        j + 1,
                        k + 1,
                        r[k]
                    )));
                }
            } else if out[k][j].iter().any(|v| *v != 0.0) {
                return Err(Error::Dimension(format!(
                    "beta[{}][{}] must be empty: coupling only flows from higher to lower blocks",
                    k + 1,
                    j + 1
                )));
            } else {
                out[k][j].clear();
            }
        }
    }
    Ok(out)
}

fn structured_a_hat(r: &[usize], alpha: &[Vec<f64>], beta: &[Vec<Vec<f64>>]) -> DMatrix<f64> {
    let p = r.len();
    let n: usize = r.iter().sum();
    let offset = |j: usize| -> usize { r[j..].iter().sum() };
    let mut a = DMatrix::zeros(n, n);
    for j in 1..=p {
        let o = offset(j);
        let rj = r[j - 1];
        for i in 0..rj.saturating_sub(1) {
            a[(o + i, o + i + 1)] = 1.0;
        }
        for i in 1..=rj {
            // last row: [-alpha_{j,r_j}, ..., -alpha_{j,1}]
            a[(o + rj - 1, o + rj - i)] = -alpha[j - 1][i - 1];
        }
        for s in j + 1..=p {
            let os = offset(s);
            for l in 0..rj {
                a[(o + l, os)] = beta[j - 1][s - 1][l];
            }
        }
    }
    a
}

/// Options for [`canonical_transform_with`].
#[derive(Debug, Clone, Copy)]
pub struct CanonicalOptions {
    pub rank_tol: f64,
    pub max_cond: f64,
}

impl Default for CanonicalOptions {
    fn default() -> Self {
        Self { rank_tol: DEFAULT_RANK_TOL, max_cond: DEFAULT_MAX_COND }
    }
}

pub fn canonical_transform(plant: &PlantModel, rank_tol: f64) -> Result<CanonicalData> {
    canonical_transform_with(plant, CanonicalOptions { rank_tol, ..Default::default() })
}

pub fn canonical_transform_with(plant: &PlantModel, opts: CanonicalOptions) -> Result<CanonicalData> {
    let idx = controllability_indices(plant, opts.rank_tol)?;
    let (n, m) = (plant.n(), plant.m());
    let a = plant.a();
    let r = idx.r.clone();
    let p = r.len();
    let bcol = |j: usize| plant.b.column(idx.active_inputs[j - 1]).into_owned();

    // Krylov chains in scan order, used to read off the closing relations.
    let mut chains: Vec<Vec<DVector<f64>>> = Vec::with_capacity(p);
    for j in 1..=p {
        let mut chain = Vec::with_capacity(r[j - 1] + 1);
        let mut c = bcol(j);
        for _ in 0..=r[j - 1] {
            chain.push(c.clone());
            c = a * c;
        }
        chains.push(chain);
    }

    // A^{r_j} b_j = -sum_i alpha_{j,i} A^{r_j - i} b_j + (chains of blocks k < j)
    let mut alpha_ls = Vec::with_capacity(p);
    for j in 1..=p {
        let rj = r[j - 1];
        let cols: Vec<&DVector<f64>> = chains[..j - 1]
            .iter()
            .zip(&r)
            .flat_map(|(c, &rk)| c[..rk].iter())
            .chain(chains[j - 1][..rj].iter())
            .collect();
        let k = DMatrix::from_columns(&cols.iter().map(|c| (*c).clone()).collect::<Vec<_>>());
        let target = &chains[j - 1][rj];
        let coef = k
            .svd(true, true)
            .solve(target, 0.0)
            .map_err(|e| Error::InvalidPlant(format!("closing relation of block {j}: {e}")))?;
        let own = &coef.as_slice()[coef.len() - rj..];
        // own[m] multiplies A^m b_j, i.e. -alpha_{j, r_j - m}
        alpha_ls.push((1..=rj).map(|i| -own[rj - i]).collect::<Vec<f64>>());
    }

    // T^{-1} columns in z order.
    let offset = |j: usize| -> usize { r[j..].iter().sum() };
    let mut s = DMatrix::zeros(n, n);
    for j in 1..=p {
        let rj = r[j - 1];
        let o = offset(j);
        let b = bcol(j);
        let mut col = b.clone();
        s.set_column(o + rj - 1, &col);
        for i in (2..=rj).rev() {
            // s_{j,i-1} = A s_{j,i} + alpha_{j, r_j - i + 1} b_j
            col = a * &col + &b * alpha_ls[j - 1][rj - i];
            s.set_column(o + i - 2, &col);
        }
    }

    let sv = s.clone().svd(false, false).singular_values;
    let cond = sv.max() / sv.min();
    if !cond.is_finite() || cond > opts.max_cond {
        return Err(Error::IllConditioned { cond, bound: opts.max_cond });
    }
    let lu = s.clone().lu();
    let t = lu.try_inverse().ok_or(Error::IllConditioned { cond: f64::INFINITY, bound: opts.max_cond })?;
    let a_hat = lu.solve(&(a * &s)).expect("invertible");
    let b_hat = lu.solve(plant.b()).expect("invertible");

    let mut data = CanonicalData {
        t,
        t_inv: s,
        a_hat,
        b_hat,
        r: r.clone(),
        alpha: Vec::new(),
        beta: Vec::new(),
        block_inputs: idx.active_inputs.clone(),
        redundant_inputs: (0..m).filter(|j| !idx.active_inputs.contains(j)).collect(),
    };
    data.alpha = (1..=p)
        .map(|j| {
            let row = data.index(j, r[j - 1]);
            (1..=r[j - 1]).map(|i| -data.a_hat[(row, data.index(j, r[j - 1] - i + 1))]).collect()
        })
        .collect();
    data.beta = (1..=p)
        .map(|k| {
            (1..=p)
                .map(|j| {
                    if k < j {
                        let col = data.index(j, 1);
                        (1..=r[k - 1]).map(|l| data.a_hat[(data.index(k, l), col)]).collect()
                    } else {
                        Vec::new()
                    }
                })
                .collect()
        })
        .collect();
    Ok(data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StructureMatrix {
    AHat,
    BHat,
}

/// Outcome of a structural check of canonical matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct StructureReport {
    pub pass: bool,
    pub max_violation: f64,
    /// Matrix and entry of the worst violation.
    pub worst: Option<(StructureMatrix, usize, usize)>,
}

/// Checks every structural entry: companion ones and zeros in the diagonal
/// blocks, first-column-only coupling from higher blocks, zero coupling from
/// lower blocks, and unit-vector columns of `B_hat` for the active inputs.
pub fn verify_canonical_structure(cd: &CanonicalData, tol: f64) -> StructureReport {
    let n = cd.n();
    let mut worst = 0.0f64;
    let mut at = None;
    let mut check = |mat: StructureMatrix, i: usize, j: usize, got: f64, want: f64| {
        let v = (got - want).abs();
        if v > worst || (v.is_nan() && !worst.is_nan()) {
            worst = v;
            at = Some((mat, i, j));
        }
    };

    for row in 0..n {
        let (k, l) = cd.locate(row);
        for col in 0..n {
            let (j, c) = cd.locate(col);
            let got = cd.a_hat[(row, col)];
            if j == k {
                if l < cd.r_of(k) {
                    check(StructureMatrix::AHat, row, col, got, if c == l + 1 { 1.0 } else { 0.0 });
                }
            } else if j > k {
                if c != 1 {
                    check(StructureMatrix::AHat, row, col, got, 0.0);
                }
            } else {
                check(StructureMatrix::AHat, row, col, got, 0.0);
            }
        }
    }
    for (blk, &input) in cd.block_inputs.iter().enumerate() {
        let target = cd.index(blk + 1, cd.r_of(blk + 1));
        for row in 0..n {
            let want = if row == target { 1.0 } else { 0.0 };
            check(StructureMatrix::BHat, row, input, cd.b_hat[(row, input)], want);
        }
    }

    StructureReport { pass: worst <= tol, max_violation: worst, worst: at }
}
