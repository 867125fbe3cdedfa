//! Dense complex matrices with tensor-factor bookkeeping.
//!
//! Storage is row-major over `Complex<f64>` and sized for desk-scale
//! experiments (dimensions up to a few hundred). Factor index 0 is the
//! leftmost (outermost) Kronecker factor throughout, so the linear index of
//! a multi-index varies slowest in factor 0.
//!
//! The Choi convention is `J(F) = sum_j vec(K_j) vec(K_j)^dagger` with
//! row-major vectorisation, i.e. `J` lives on `out (x) in` and the Choi of
//! the identity qubit channel is the unnormalised maximally entangled
//! projector of trace 2.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tol;

/// Complex double-precision scalar used everywhere in the crate.
pub type C64 = Complex64;

/// Dense complex matrix, row-major.
#[derive(Clone, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<C64>,
}

impl fmt::Debug for ComplexMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ComplexMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            write!(f, "  ")?;
            for j in 0..self.cols {
                let v = self.get(i, j);
                write!(f, "{:+.4}{:+.4}i ", v.re, v.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

impl ComplexMatrix {
    pub fn new(rows: usize, cols: usize, entries: Vec<C64>) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} matrix needs {} entries, got {}",
                rows,
                cols,
                rows * cols,
                entries.len()
            )));
        }
        if !entries.iter().all(|c| c.re.is_finite() && c.im.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { rows, cols, entries })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, entries: vec![C64::new(0.0, 0.0); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, C64::new(1.0, 0.0));
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut entries = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                entries.push(f(i, j));
            }
        }
        Self { rows, cols, entries }
    }

    /// Builds a matrix from real entries given row by row.
    pub fn from_real(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        Self::from_fn(r, c, |i, j| C64::new(rows[i][j], 0.0))
    }

    /// Column vector `|k>` in dimension `n`.
    pub fn basis_column(n: usize, k: usize) -> Self {
        let mut m = Self::zeros(n, 1);
        m.set(k, 0, C64::new(1.0, 0.0));
        m
    }

    /// Row vector `<k|` in dimension `n`.
    pub fn basis_row(n: usize, k: usize) -> Self {
        let mut m = Self::zeros(1, n);
        m.set(0, k, C64::new(1.0, 0.0));
        m
    }

    /// Matrix unit `|i><j|` of shape `rows x cols`.
    pub fn unit(rows: usize, cols: usize, i: usize, j: usize) -> Self {
        let mut m = Self::zeros(rows, cols);
        m.set(i, j, C64::new(1.0, 0.0));
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn entries(&self) -> &[C64] {
        &self.entries
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.entries[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: C64) {
        self.entries[i * self.cols + j] = v;
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a.re == 0.0 && a.im == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    let v = out.get(i, j) + a * other.get(k, j);
                    out.set(i, j, v);
                }
            }
        }
        Ok(out)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::DimensionMismatch("add: shape mismatch".into()));
        }
        let entries = self
            .entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Self { rows: self.rows, cols: self.cols, entries })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::DimensionMismatch("sub: shape mismatch".into()));
        }
        let entries = self
            .entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Self { rows: self.rows, cols: self.cols, entries })
    }

    pub fn scaled(&self, s: C64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            entries: self.entries.iter().map(|e| e * s).collect(),
        }
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i).conj())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn conjugate(&self) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            entries: self.entries.iter().map(|e| e.conj()).collect(),
        }
    }

    pub fn trace(&self) -> Result<C64> {
        if !self.is_square() {
            return Err(Error::DimensionMismatch("trace of non-square matrix".into()));
        }
        Ok((0..self.rows).map(|i| self.get(i, i)).sum())
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::DimensionMismatch("max_abs_diff: shape mismatch".into()));
        }
        Ok(self
            .entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.entries.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        if !self.is_square() {
            return false;
        }
        for i in 0..self.rows {
            for j in i..self.cols {
                if (self.get(i, j) - self.get(j, i).conj()).norm() > tol {
                    return false;
                }
            }
        }
        true
    }

    /// Frobenius inner product `tr(self^dagger other)`.
    pub fn inner(&self, other: &Self) -> Result<C64> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::DimensionMismatch("inner: shape mismatch".into()));
        }
        Ok(self
            .entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| a.conj() * b)
            .sum())
    }

    /// Row-major vectorisation as a column vector of length rows*cols.
    pub fn vectorized(&self) -> Self {
        Self { rows: self.rows * self.cols, cols: 1, entries: self.entries.clone() }
    }

    fn to_nalgebra(&self) -> DMatrix<C64> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| self.get(i, j))
    }

    fn from_nalgebra(m: &DMatrix<C64>) -> Self {
        Self::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
    }
}

#[derive(Serialize, Deserialize)]
struct MatrixWire {
    rows: usize,
    cols: usize,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl Serialize for ComplexMatrix {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let wire = MatrixWire {
            rows: self.rows,
            cols: self.cols,
            re: self.entries.iter().map(|c| c.re).collect(),
            im: self.entries.iter().map(|c| c.im).collect(),
        };
        wire.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ComplexMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let wire = MatrixWire::deserialize(deserializer)?;
        if wire.re.len() != wire.rows * wire.cols || wire.im.len() != wire.rows * wire.cols {
            return Err(serde::de::Error::custom(format!(
                "matrix {}x{} expects {} entries, got re={} im={}",
                wire.rows,
                wire.cols,
                wire.rows * wire.cols,
                wire.re.len(),
                wire.im.len()
            )));
        }
        let entries: Vec<C64> = wire
            .re
            .iter()
            .zip(&wire.im)
            .map(|(&re, &im)| C64::new(re, im))
            .collect();
        ComplexMatrix::new(wire.rows, wire.cols, entries).map_err(serde::de::Error::custom)
    }
}

/// Ordered list of tensor-factor dimensions. The empty list is the trivial
/// system of total dimension 1.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SystemDims {
    factors: Vec<usize>,
}

impl SystemDims {
    pub fn new(factors: Vec<usize>) -> Result<Self> {
        if factors.iter().any(|&d| d == 0) {
            return Err(Error::DimensionMismatch("factor dimensions must be positive".into()));
        }
        Ok(Self { factors })
    }

    pub fn single(d: usize) -> Result<Self> {
        Self::new(vec![d])
    }

    /// The trivial system (no factors, total dimension 1).
    pub fn trivial() -> Self {
        Self { factors: Vec::new() }
    }

    pub fn factors(&self) -> &[usize] {
        &self.factors
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn total(&self) -> usize {
        self.factors.iter().product()
    }

    pub fn is_trivial(&self) -> bool {
        self.total() == 1
    }

    /// Concatenation of factor lists: the monoidal product of systems.
    pub fn concat(&self, other: &Self) -> Self {
        let mut factors = self.factors.clone();
        factors.extend_from_slice(&other.factors);
        Self { factors }
    }

    /// Prepend a single factor (used for control and classical systems).
    pub fn with_leading(&self, d: usize) -> Self {
        let mut factors = Vec::with_capacity(self.factors.len() + 1);
        factors.push(d);
        factors.extend_from_slice(&self.factors);
        Self { factors }
    }
}

/// Kronecker product; dimensions multiply, factor 0 of `a` stays leftmost.
pub fn kron(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    let mut out = ComplexMatrix::zeros(a.rows() * b.rows(), a.cols() * b.cols());
    for ia in 0..a.rows() {
        for ja in 0..a.cols() {
            let va = a.get(ia, ja);
            if va.re == 0.0 && va.im == 0.0 {
                continue;
            }
            for ib in 0..b.rows() {
                for jb in 0..b.cols() {
                    out.set(ia * b.rows() + ib, ja * b.cols() + jb, va * b.get(ib, jb));
                }
            }
        }
    }
    out
}

fn validate_perm(perm: &[usize], n: usize) -> Result<()> {
    if perm.len() != n {
        return Err(Error::InvalidPermutation(format!(
            "permutation length {} does not match factor count {}",
            perm.len(),
            n
        )));
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n || seen[p] {
            return Err(Error::InvalidPermutation(format!("{:?} is not a permutation", perm)));
        }
        seen[p] = true;
    }
    Ok(())
}

fn decode_index(mut linear: usize, dims: &[usize], out: &mut [usize]) {
    for k in (0..dims.len()).rev() {
        out[k] = linear % dims[k];
        linear /= dims[k];
    }
}

fn encode_index(multi: &[usize], dims: &[usize]) -> usize {
    let mut linear = 0;
    for (m, d) in multi.iter().zip(dims) {
        linear = linear * d + m;
    }
    linear
}

/// Maps each linear index over `dims` to the linear index after reordering
/// factors so that new factor `j` is old factor `perm[j]`.
fn permuted_index_table(dims: &SystemDims, perm: &[usize]) -> Result<Vec<usize>> {
    validate_perm(perm, dims.len())?;
    let old_dims = dims.factors();
    let new_dims: Vec<usize> = perm.iter().map(|&p| old_dims[p]).collect();
    let total = dims.total();
    let mut table = vec![0usize; total];
    let mut old_multi = vec![0usize; old_dims.len()];
    let mut new_multi = vec![0usize; old_dims.len()];
    for (old_linear, slot) in table.iter_mut().enumerate() {
        decode_index(old_linear, old_dims, &mut old_multi);
        for (j, &p) in perm.iter().enumerate() {
            new_multi[j] = old_multi[p];
        }
        *slot = encode_index(&new_multi, &new_dims);
    }
    Ok(table)
}

/// Permutation matrix `P` over `dims` with new factor `j` = old factor
/// `perm[j]`; `P v` reorders a vector from the old to the new factor order.
pub fn permutation_matrix(dims: &SystemDims, perm: &[usize]) -> Result<ComplexMatrix> {
    let table = permuted_index_table(dims, perm)?;
    let n = dims.total();
    let mut p = ComplexMatrix::zeros(n, n);
    for (old, &new) in table.iter().enumerate() {
        p.set(new, old, C64::new(1.0, 0.0));
    }
    Ok(p)
}

/// Reindexes the tensor factors of the linear map `m`: new input factor `j`
/// is old factor `perm_in[j]`, and likewise for outputs.
pub fn permute_factors(
    m: &ComplexMatrix,
    dims_in: &SystemDims,
    dims_out: &SystemDims,
    perm_in: &[usize],
    perm_out: &[usize],
) -> Result<ComplexMatrix> {
    if m.cols() != dims_in.total() || m.rows() != dims_out.total() {
        return Err(Error::DimensionMismatch(format!(
            "matrix {}x{} does not match dims out {} x in {}",
            m.rows(),
            m.cols(),
            dims_out.total(),
            dims_in.total()
        )));
    }
    let in_table = permuted_index_table(dims_in, perm_in)?;
    let out_table = permuted_index_table(dims_out, perm_out)?;
    let mut out = ComplexMatrix::zeros(m.rows(), m.cols());
    for i in 0..m.rows() {
        let ni = out_table[i];
        for j in 0..m.cols() {
            out.set(ni, in_table[j], m.get(i, j));
        }
    }
    Ok(out)
}

/// Reorders only the rows of `m` (the output factors of the map).
pub(crate) fn permute_rows(
    m: &ComplexMatrix,
    dims_out: &SystemDims,
    perm_out: &[usize],
) -> Result<ComplexMatrix> {
    if m.rows() != dims_out.total() {
        return Err(Error::DimensionMismatch("permute_rows: row count mismatch".into()));
    }
    let out_table = permuted_index_table(dims_out, perm_out)?;
    let mut out = ComplexMatrix::zeros(m.rows(), m.cols());
    for i in 0..m.rows() {
        let ni = out_table[i];
        for j in 0..m.cols() {
            out.set(ni, j, m.get(i, j));
        }
    }
    Ok(out)
}

/// Partial trace of a square matrix over the given factor indices. Tracing
/// every factor returns the 1x1 matrix holding the trace.
pub fn partial_trace(
    m: &ComplexMatrix,
    dims: &SystemDims,
    traced: &[usize],
) -> Result<ComplexMatrix> {
    if !m.is_square() || m.rows() != dims.total() {
        return Err(Error::DimensionMismatch(format!(
            "partial_trace expects a square {0}x{0} matrix, got {1}x{2}",
            dims.total(),
            m.rows(),
            m.cols()
        )));
    }
    let n_factors = dims.len();
    let mut is_traced = vec![false; n_factors];
    for &t in traced {
        if t >= n_factors {
            return Err(Error::InvalidFactor { index: t, count: n_factors });
        }
        if is_traced[t] {
            return Err(Error::InvalidFactor { index: t, count: n_factors });
        }
        is_traced[t] = true;
    }
    let kept: Vec<usize> = (0..n_factors).filter(|k| !is_traced[*k]).collect();
    let kept_dims: Vec<usize> = kept.iter().map(|&k| dims.factors()[k]).collect();
    let kept_total: usize = kept_dims.iter().product();

    let full = dims.factors();
    let mut out = ComplexMatrix::zeros(kept_total, kept_total);
    let mut row_multi = vec![0usize; n_factors];
    let mut col_multi = vec![0usize; n_factors];
    let mut kept_row = vec![0usize; kept.len()];
    let mut kept_col = vec![0usize; kept.len()];
    for r in 0..m.rows() {
        decode_index(r, full, &mut row_multi);
        for c in 0..m.cols() {
            decode_index(c, full, &mut col_multi);
            if (0..n_factors).any(|k| is_traced[k] && row_multi[k] != col_multi[k]) {
                continue;
            }
            for (slot, &k) in kept.iter().enumerate() {
                kept_row[slot] = row_multi[k];
                kept_col[slot] = col_multi[k];
            }
            let i = encode_index(&kept_row, &kept_dims);
            let j = encode_index(&kept_col, &kept_dims);
            let v = out.get(i, j) + m.get(r, c);
            out.set(i, j, v);
        }
    }
    Ok(out)
}

/// Eigendecomposition of a Hermitian matrix, eigenvalues descending and
/// eigenvector phases canonicalised (largest-magnitude entry real positive).
#[derive(Clone, Debug)]
pub struct HermitianSpectrum {
    pub eigenvalues: Vec<f64>,
    /// Columns are the orthonormal eigenvectors, in eigenvalue order.
    pub eigenvectors: ComplexMatrix,
}

impl HermitianSpectrum {
    /// `V diag(lambda) V^dagger`, for round-trip checks.
    pub fn reconstruct(&self) -> Result<ComplexMatrix> {
        let n = self.eigenvectors.rows();
        let v = &self.eigenvectors;
        let mut scaled = ComplexMatrix::zeros(n, self.eigenvalues.len());
        for j in 0..self.eigenvalues.len() {
            for i in 0..n {
                scaled.set(i, j, v.get(i, j) * C64::new(self.eigenvalues[j], 0.0));
            }
        }
        scaled.mul(&v.adjoint())
    }
}

/// Hermitian eigendecomposition with a deterministic ordering: descending
/// eigenvalue, ties broken lexicographically on the eigenvector entries
/// (real parts first, then imaginary parts).
pub fn hermitian_eig(m: &ComplexMatrix) -> Result<HermitianSpectrum> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch("eigendecomposition of non-square matrix".into()));
    }
    let n = m.rows();
    if n == 0 {
        return Ok(HermitianSpectrum { eigenvalues: vec![], eigenvectors: ComplexMatrix::zeros(0, 0) });
    }
    // Symmetrise before handing to the solver so tiny asymmetries cannot
    // produce complex eigenvalues.
    let herm = m.add(&m.adjoint())?.scaled(C64::new(0.5, 0.0));
    let eig = nalgebra::SymmetricEigen::new(herm.to_nalgebra());
    let values: DVector<f64> = eig.eigenvalues;
    let vectors: DMatrix<C64> = eig.eigenvectors;

    let mut columns: Vec<(f64, Vec<C64>)> = (0..n)
        .map(|j| {
            let mut col: Vec<C64> = (0..n).map(|i| vectors[(i, j)]).collect();
            // Canonical phase: make the largest-magnitude entry real positive.
            let mut arg_max = 0;
            let mut best = -1.0f64;
            for (i, v) in col.iter().enumerate() {
                let a = v.norm();
                if a > best {
                    best = a;
                    arg_max = i;
                }
            }
            if best > 0.0 {
                let phase = col[arg_max] / C64::new(best, 0.0);
                let correction = phase.conj();
                for v in col.iter_mut() {
                    *v *= correction;
                }
            }
            (values[j], col)
        })
        .collect();

    columns.sort_by(|a, b| {
        b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal).then_with(|| {
            let re = a.1.iter().map(|c| c.re).partial_cmp(b.1.iter().map(|c| c.re));
            re.unwrap_or(std::cmp::Ordering::Equal).then_with(|| {
                a.1.iter()
                    .map(|c| c.im)
                    .partial_cmp(b.1.iter().map(|c| c.im))
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
        })
    });

    let eigenvalues: Vec<f64> = columns.iter().map(|(v, _)| *v).collect();
    let eigenvectors =
        ComplexMatrix::from_fn(n, n, |i, j| columns[j].1[i]);
    Ok(HermitianSpectrum { eigenvalues, eigenvectors })
}

/// Extracts Kraus operators from a Choi matrix.
///
/// Eigenpairs above `rank_tol` become operators `sqrt(lambda) * unvec(v)`,
/// ordered by descending eigenvalue. An eigenvalue below `-1e-9` means the
/// input was not completely positive and is reported as an error.
pub fn choi_to_kraus(
    choi: &ComplexMatrix,
    dim_in: usize,
    dim_out: usize,
    rank_tol: f64,
) -> Result<Vec<ComplexMatrix>> {
    let n = dim_in * dim_out;
    if choi.rows() != n || choi.cols() != n {
        return Err(Error::DimensionMismatch(format!(
            "Choi matrix must be {0}x{0} for dims {1} -> {2}",
            n, dim_in, dim_out
        )));
    }
    let deviation = choi.max_abs_diff(&choi.adjoint())?;
    if deviation > tol::HERMITICITY {
        return Err(Error::NonHermitian { deviation, tol: tol::HERMITICITY });
    }
    let spectrum = hermitian_eig(choi)?;
    if let Some(&lowest) = spectrum.eigenvalues.last() {
        if lowest < -tol::HERMITICITY {
            return Err(Error::NotCompletelyPositive { eigenvalue: lowest });
        }
    }
    let mut kraus = Vec::new();
    for (j, &lambda) in spectrum.eigenvalues.iter().enumerate() {
        if lambda <= rank_tol {
            continue;
        }
        let scale = C64::new(lambda.sqrt(), 0.0);
        let k = ComplexMatrix::from_fn(dim_out, dim_in, |b, a| {
            spectrum.eigenvectors.get(b * dim_in + a, j) * scale
        });
        kraus.push(k);
    }
    Ok(kraus)
}

/// Choi matrix of the CP map with the given Kraus operators:
/// `sum_j vec(K_j) vec(K_j)^dagger` with row-major vectorisation.
pub fn kraus_to_choi(kraus: &[ComplexMatrix]) -> Result<ComplexMatrix> {
    let first = kraus.first().ok_or(Error::EmptyKraus)?;
    let (rows, cols) = (first.rows(), first.cols());
    let n = rows * cols;
    let mut choi = ComplexMatrix::zeros(n, n);
    for k in kraus {
        if k.rows() != rows || k.cols() != cols {
            return Err(Error::DimensionMismatch("Kraus operators must share dimensions".into()));
        }
        let v = k.entries();
        for i in 0..n {
            if v[i].re == 0.0 && v[i].im == 0.0 {
                continue;
            }
            for j in 0..n {
                let val = choi.get(i, j) + v[i] * v[j].conj();
                choi.set(i, j, val);
            }
        }
    }
    Ok(choi)
}

/// Least-squares solve of `a x = b` for each column of `b` (used by tests
/// that recover environment isometries numerically).
pub fn lstsq(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<ComplexMatrix> {
    if a.rows() != b.rows() {
        return Err(Error::DimensionMismatch("lstsq: row count mismatch".into()));
    }
    let svd = nalgebra::SVD::new(a.to_nalgebra(), true, true);
    let sol = svd
        .solve(&b.to_nalgebra(), 1e-12)
        .map_err(|e| Error::InvalidInput(format!("lstsq failed: {e}")))?;
    Ok(ComplexMatrix::from_nalgebra(&sol))
}

/// Thin QR factor `Q` with the column phases fixed by the `R` diagonal, for
/// drawing deterministic random unitaries and isometries.
pub(crate) fn qr_q(m: &ComplexMatrix) -> Result<ComplexMatrix> {
    let qr = nalgebra::QR::new(m.to_nalgebra());
    let q = qr.q();
    let r = qr.r();
    let mut out = ComplexMatrix::from_nalgebra(&q);
    for j in 0..out.cols() {
        let d = r[(j, j)];
        let a = d.norm();
        if a > 1e-14 {
            let correction = d.conj() / C64::new(a, 0.0);
            for i in 0..out.rows() {
                let v = out.get(i, j) * correction;
                out.set(i, j, v);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pauli_x() -> ComplexMatrix {
        ComplexMatrix::from_real(&[&[0.0, 1.0], &[1.0, 0.0]])
    }

    fn pauli_z() -> ComplexMatrix {
        ComplexMatrix::from_real(&[&[1.0, 0.0], &[0.0, -1.0]])
    }

    #[test]
    fn kron_unit_of_tensor() {
        let m = pauli_x();
        let unit = ComplexMatrix::identity(1);
        assert_eq!(kron(&unit, &m), m);
        assert_eq!(kron(&m, &unit), m);
    }

    #[test]
    fn kron_of_identities() {
        let id2 = ComplexMatrix::identity(2);
        assert_eq!(kron(&id2, &id2), ComplexMatrix::identity(4));
    }

    #[test]
    fn kron_matches_quadruple_loop() {
        let x = pauli_x();
        let z = pauli_z();
        let k = kron(&x, &z);
        for i in 0..2 {
            for j in 0..2 {
                for a in 0..2 {
                    for b in 0..2 {
                        let expected = x.get(i, j) * z.get(a, b);
                        assert_eq!(k.get(2 * i + a, 2 * j + b), expected);
                    }
                }
            }
        }
    }

    #[test]
    fn kron_is_associative() {
        let a = pauli_x();
        let b = pauli_z();
        let c = ComplexMatrix::from_real(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let left = kron(&kron(&a, &b), &c);
        let right = kron(&a, &kron(&b, &c));
        assert_eq!(left, right);
    }

    #[test]
    fn permute_identity_is_noop() {
        let m = kron(&pauli_x(), &pauli_z());
        let dims = SystemDims::new(vec![2, 2]).unwrap();
        let p = permute_factors(&m, &dims, &dims, &[0, 1], &[0, 1]).unwrap();
        assert_eq!(p, m);
    }

    #[test]
    fn permute_swaps_kron_factors() {
        let a = pauli_x();
        let b = pauli_z();
        let dims = SystemDims::new(vec![2, 2]).unwrap();
        let swapped = permute_factors(&kron(&a, &b), &dims, &dims, &[1, 0], &[1, 0]).unwrap();
        assert_eq!(swapped, kron(&b, &a));
    }

    #[test]
    fn permute_swap_twice_is_identity() {
        let dims = SystemDims::new(vec![2, 3]).unwrap();
        let m = ComplexMatrix::from_fn(6, 6, |i, j| C64::new((i * 7 + j) as f64, (i + 2 * j) as f64));
        let dims_sw = SystemDims::new(vec![3, 2]).unwrap();
        let once = permute_factors(&m, &dims, &dims, &[1, 0], &[1, 0]).unwrap();
        let twice = permute_factors(&once, &dims_sw, &dims_sw, &[1, 0], &[1, 0]).unwrap();
        assert!(twice.max_abs_diff(&m).unwrap() <= 1e-12);
    }

    #[test]
    fn partial_trace_product_state() {
        // rho_A (x) rho_B with trace over B gives tr(rho_B) * rho_A.
        let rho_a = ComplexMatrix::from_real(&[&[0.7, 0.1], &[0.1, 0.3]]);
        let rho_b = ComplexMatrix::from_real(&[&[0.5, 0.0], &[0.0, 0.9]]);
        let dims = SystemDims::new(vec![2, 2]).unwrap();
        let traced = partial_trace(&kron(&rho_a, &rho_b), &dims, &[1]).unwrap();
        let expected = rho_a.scaled(rho_b.trace().unwrap());
        assert!(traced.max_abs_diff(&expected).unwrap() <= 1e-12);
    }

    #[test]
    fn partial_trace_bell_state() {
        // |Phi+><Phi+| reduced over the second qubit is I/2. Frozen from the
        // brute-force sum over the computational basis of the traced factor.
        let mut phi = ComplexMatrix::zeros(4, 1);
        phi.set(0, 0, C64::new(1.0 / 2f64.sqrt(), 0.0));
        phi.set(3, 0, C64::new(1.0 / 2f64.sqrt(), 0.0));
        let rho = phi.mul(&phi.adjoint()).unwrap();
        let dims = SystemDims::new(vec![2, 2]).unwrap();
        let reduced = partial_trace(&rho, &dims, &[1]).unwrap();

        // Independent oracle: explicit <b|_2 rho |b>_2 sum.
        let mut oracle = ComplexMatrix::zeros(2, 2);
        for b in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    let v = oracle.get(i, j) + rho.get(2 * i + b, 2 * j + b);
                    oracle.set(i, j, v);
                }
            }
        }
        assert!(reduced.max_abs_diff(&oracle).unwrap() <= 1e-12);
        assert!(reduced.max_abs_diff(&ComplexMatrix::identity(2).scaled(C64::new(0.5, 0.0))).unwrap() <= 1e-12);
    }

    #[test]
    fn partial_trace_all_factors() {
        let m = ComplexMatrix::from_fn(4, 4, |i, j| C64::new(i as f64, j as f64));
        let dims = SystemDims::new(vec![2, 2]).unwrap();
        let t = partial_trace(&m, &dims, &[0, 1]).unwrap();
        assert_eq!(t.rows(), 1);
        assert_eq!(t.get(0, 0), m.trace().unwrap());
    }

    #[test]
    fn partial_trace_composes_over_disjoint_sets() {
        let dims = SystemDims::new(vec![2, 2, 2]).unwrap();
        let m = ComplexMatrix::from_fn(8, 8, |i, j| C64::new((i * 13 + j) as f64, (j * 3) as f64));
        let both = partial_trace(&m, &dims, &[0, 2]).unwrap();
        let first = partial_trace(&m, &dims, &[0]).unwrap();
        // After tracing factor 0, old factor 2 sits at index 1.
        let then = partial_trace(&first, &SystemDims::new(vec![2, 2]).unwrap(), &[1]).unwrap();
        assert!(both.max_abs_diff(&then).unwrap() <= 1e-12);
    }

    #[test]
    fn partial_trace_rejects_bad_input() {
        let m = ComplexMatrix::zeros(2, 3);
        let dims = SystemDims::new(vec![2]).unwrap();
        assert!(partial_trace(&m, &dims, &[0]).is_err());
        let sq = ComplexMatrix::zeros(2, 2);
        assert!(partial_trace(&sq, &dims, &[1]).is_err());
    }

    #[test]
    fn choi_of_identity_channel_yields_identity_kraus() {
        let id = ComplexMatrix::identity(2);
        let choi = kraus_to_choi(std::slice::from_ref(&id)).unwrap();
        assert!((choi.trace().unwrap().re - 2.0).abs() <= 1e-12);
        let kraus = choi_to_kraus(&choi, 2, 2, tol::RANK).unwrap();
        assert_eq!(kraus.len(), 1);
        // Identity up to a global phase.
        let k = &kraus[0];
        let phase = k.get(0, 0) / C64::new(k.get(0, 0).norm(), 0.0);
        assert!(k.max_abs_diff(&id.scaled(phase)).unwrap() <= 1e-9);
    }

    #[test]
    fn dephasing_choi_is_diagonal() {
        let k0 = ComplexMatrix::unit(2, 2, 0, 0);
        let k1 = ComplexMatrix::unit(2, 2, 1, 1);
        let choi = kraus_to_choi(&[k0, k1]).unwrap();
        let expected = ComplexMatrix::from_real(&[
            &[1.0, 0.0, 0.0, 0.0],
            &[0.0, 0.0, 0.0, 0.0],
            &[0.0, 0.0, 0.0, 0.0],
            &[0.0, 0.0, 0.0, 1.0],
        ]);
        assert!(choi.max_abs_diff(&expected).unwrap() <= 1e-12);
    }

    #[test]
    fn depolarizing_kraus_have_equal_weight() {
        // Completely depolarizing qubit channel: Choi = I/2 (x) ... in our
        // convention J = I_4 / 2 * 2 = diag over both indices with value 1/2
        // on each vec(unit) component; four Kraus operators of squared
        // Frobenius norm 1/2 each.
        let n = 4;
        let mut choi = ComplexMatrix::zeros(n, n);
        // rho -> tr(rho) I/2 has Kraus (1/sqrt(2)) |i><j|.
        for i in 0..2 {
            for j in 0..2 {
                let k = ComplexMatrix::unit(2, 2, i, j).scaled(C64::new(1.0 / 2f64.sqrt(), 0.0));
                choi = choi.add(&kraus_to_choi(std::slice::from_ref(&k)).unwrap()).unwrap();
            }
        }
        let kraus = choi_to_kraus(&choi, 2, 2, tol::RANK).unwrap();
        assert_eq!(kraus.len(), 4);
        for k in &kraus {
            assert!((k.frobenius_norm().powi(2) - 0.5).abs() <= 1e-9);
        }
        let back = kraus_to_choi(&kraus).unwrap();
        assert!(back.max_abs_diff(&choi).unwrap() <= 1e-9);
    }

    #[test]
    fn negative_eigenvalue_is_rejected() {
        let mut choi = kraus_to_choi(&[ComplexMatrix::identity(2)]).unwrap();
        // Push one eigenvalue below the CP tolerance.
        choi.set(1, 1, C64::new(-0.01, 0.0));
        match choi_to_kraus(&choi, 2, 2, tol::RANK) {
            Err(Error::NotCompletelyPositive { eigenvalue }) => assert!(eigenvalue < -1e-9),
            other => panic!("expected CP violation, got {other:?}"),
        }
    }

    #[test]
    fn kraus_choi_roundtrip_is_idempotent() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let din = rng.gen_range(1..=3);
            let dout = rng.gen_range(1..=3);
            let n_kraus = rng.gen_range(1..=3);
            let kraus: Vec<ComplexMatrix> = (0..n_kraus)
                .map(|_| {
                    ComplexMatrix::from_fn(dout, din, |_, _| {
                        C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
                    })
                })
                .collect();
            let choi = kraus_to_choi(&kraus).unwrap();
            let canonical = choi_to_kraus(&choi, din, dout, tol::RANK).unwrap();
            let choi2 = kraus_to_choi(&canonical).unwrap();
            assert!(choi2.max_abs_diff(&choi).unwrap() <= 1e-9);
            // Idempotence: extracting again changes nothing.
            let canonical2 = choi_to_kraus(&choi2, din, dout, tol::RANK).unwrap();
            assert_eq!(canonical.len(), canonical2.len());
            let choi3 = kraus_to_choi(&canonical2).unwrap();
            assert!(choi3.max_abs_diff(&choi).unwrap() <= 1e-9);
        }
    }

    #[test]
    fn kraus_count_matches_numerical_rank() {
        let k0 = ComplexMatrix::unit(2, 2, 0, 0);
        let k1 = ComplexMatrix::unit(2, 2, 1, 1);
        let choi = kraus_to_choi(&[k0, k1]).unwrap();
        let spectrum = hermitian_eig(&choi).unwrap();
        let rank = spectrum.eigenvalues.iter().filter(|&&l| l > tol::RANK).count();
        let kraus = choi_to_kraus(&choi, 2, 2, tol::RANK).unwrap();
        assert_eq!(kraus.len(), rank);
        assert_eq!(rank, 2);
    }

    #[test]
    fn hermitian_eig_reconstructs() {
        let m = ComplexMatrix::from_fn(3, 3, |i, j| {
            C64::new((i + j) as f64, i as f64 - j as f64)
        });
        let herm = m.add(&m.adjoint()).unwrap().scaled(C64::new(0.5, 0.0));
        let spectrum = hermitian_eig(&herm).unwrap();
        let back = spectrum.reconstruct().unwrap();
        assert!(back.max_abs_diff(&herm).unwrap() <= 1e-10);
        for w in spectrum.eigenvalues.windows(2) {
            assert!(w[0] >= w[1]);
        }
    }

    #[test]
    fn matrix_json_roundtrip() {
        let m = kron(&pauli_x(), &pauli_z());
        let text = serde_json::to_string(&m).unwrap();
        assert!(text.contains("\"rows\":4"));
        let back: ComplexMatrix = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);
    }
}
