//! Small dense linear algebra and zero-order-hold discretization.
//!
//! Every model handled by this crate has at most four states, so matrices
//! and vectors live on the stack with a runtime shape inside a fixed 4x4
//! buffer. Determinants and characteristic polynomials use closed forms.

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{AdrcError, Result};

/// Largest supported dimension.
pub const MAX_DIM: usize = 4;

/// Dense matrix of at most `MAX_DIM x MAX_DIM` entries.
#[derive(Clone, Copy, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: [[f64; MAX_DIM]; MAX_DIM],
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(
            rows <= MAX_DIM && cols <= MAX_DIM,
            "matrix shape {rows}x{cols} exceeds {MAX_DIM}x{MAX_DIM}"
        );
        Self {
            rows,
            cols,
            data: [[0.0; MAX_DIM]; MAX_DIM],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i][i] = 1.0;
        }
        m
    }

    pub fn diag(entries: &[f64]) -> Self {
        let mut m = Self::zeros(entries.len(), entries.len());
        for (i, &v) in entries.iter().enumerate() {
            m.data[i][i] = v;
        }
        m
    }

    /// Builds a matrix from row slices. All rows must have equal length.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut m = Self::zeros(rows.len(), cols);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), cols, "ragged matrix rows");
            m.data[i][..cols].copy_from_slice(row);
        }
        m
    }

    /// Column vector as an `n x 1` matrix.
    pub fn column(v: &Vector) -> Self {
        let mut m = Self::zeros(v.len(), 1);
        for i in 0..v.len() {
            m.data[i][0] = v[i];
        }
        m
    }

    /// Row vector as a `1 x n` matrix.
    pub fn row(v: &Vector) -> Self {
        let mut m = Self::zeros(1, v.len());
        m.data[0][..v.len()].copy_from_slice(v.as_slice());
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j][i] = self.data[i][j];
            }
        }
        t
    }

    pub fn scale(&self, k: f64) -> Self {
        let mut m = *self;
        for i in 0..self.rows {
            for j in 0..self.cols {
                m.data[i][j] *= k;
            }
        }
        m
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self.data[i][i]).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.entries().all(f64::is_finite)
    }

    pub fn is_zero(&self) -> bool {
        self.entries().all(|v| v == 0.0)
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.entries().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    /// Infinity norm (max absolute row sum).
    pub fn norm_inf(&self) -> f64 {
        (0..self.rows)
            .map(|i| {
                self.data[i][..self.cols]
                    .iter()
                    .map(|v| v.abs())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    pub fn entries(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.rows).flat_map(move |i| self.data[i][..self.cols].iter().copied())
    }

    /// Column `j` as a vector.
    pub fn col(&self, j: usize) -> Vector {
        Vector::from_fn(self.rows, |i| self.data[i][j])
    }

    /// Row `i` as a vector.
    pub fn row_vec(&self, i: usize) -> Vector {
        Vector::from_slice(&self.data[i][..self.cols])
    }

    pub fn mul_vec(&self, v: &Vector) -> Vector {
        assert_eq!(self.cols, v.len(), "matrix-vector shape mismatch");
        Vector::from_fn(self.rows, |i| {
            self.data[i][..self.cols]
                .iter()
                .zip(v.as_slice())
                .map(|(a, b)| a * b)
                .sum()
        })
    }

    pub fn pow(&self, k: u32) -> Self {
        assert!(self.is_square());
        (0..k).fold(Self::identity(self.rows), |acc, _| acc * *self)
    }

    /// Determinant via closed-form cofactor expansion (n <= 4).
    pub fn determinant(&self) -> f64 {
        assert!(self.is_square(), "determinant of non-square matrix");
        let m = &self.data;
        match self.rows {
            0 => 1.0,
            1 => m[0][0],
            2 => m[0][0] * m[1][1] - m[0][1] * m[1][0],
            3 => {
                m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                    - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                    + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
            }
            _ => (0..4)
                .map(|j| {
                    let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                    sign * m[0][j] * self.minor(0, j).determinant()
                })
                .sum(),
        }
    }

    /// Matrix with row `r` and column `c` removed.
    pub fn minor(&self, r: usize, c: usize) -> Self {
        let mut out = Self::zeros(self.rows - 1, self.cols - 1);
        for (oi, i) in (0..self.rows).filter(|&i| i != r).enumerate() {
            for (oj, j) in (0..self.cols).filter(|&j| j != c).enumerate() {
                out.data[oi][oj] = self.data[i][j];
            }
        }
        out
    }

    /// Inverse via the adjugate. Fails when the determinant vanishes
    /// relative to the matrix scale.
    pub fn inverse(&self) -> Result<Self> {
        if !self.is_square() {
            return Err(AdrcError::invalid("inverse of a non-square matrix"));
        }
        let n = self.rows;
        let det = self.determinant();
        let scale = self.max_abs().max(f64::MIN_POSITIVE).powi(n as i32);
        if !det.is_finite() || det.abs() <= 1e-14 * scale {
            return Err(AdrcError::invalid("matrix is singular"));
        }
        if n == 1 {
            return Ok(Self::from_rows(&[&[1.0 / det]]));
        }
        let mut inv = Self::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
                // adjugate is the transposed cofactor matrix
                inv.data[j][i] = sign * self.minor(i, j).determinant() / det;
            }
        }
        Ok(inv)
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i][j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i][j]
    }
}

impl Add for Matrix {
    type Output = Matrix;
    fn add(mut self, rhs: Matrix) -> Matrix {
        assert_eq!(
            (self.rows, self.cols),
            (rhs.rows, rhs.cols),
            "matrix add shape mismatch"
        );
        for i in 0..self.rows {
            for j in 0..self.cols {
                self.data[i][j] += rhs.data[i][j];
            }
        }
        self
    }
}

impl Sub for Matrix {
    type Output = Matrix;
    fn sub(self, rhs: Matrix) -> Matrix {
        self + (-rhs)
    }
}

impl Neg for Matrix {
    type Output = Matrix;
    fn neg(self) -> Matrix {
        self.scale(-1.0)
    }
}

impl Mul for Matrix {
    type Output = Matrix;
    fn mul(self, rhs: Matrix) -> Matrix {
        assert_eq!(self.cols, rhs.rows, "matrix product shape mismatch");
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for j in 0..rhs.cols {
                out.data[i][j] = (0..self.cols)
                    .map(|k| self.data[i][k] * rhs.data[k][j])
                    .sum();
            }
        }
        out
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows: Vec<&[f64]> = (0..self.rows).map(|i| &self.data[i][..self.cols]).collect();
        f.debug_list().entries(rows).finish()
    }
}

/// Dense vector of at most `MAX_DIM` entries.
#[derive(Clone, Copy, PartialEq)]
pub struct Vector {
    len: usize,
    data: [f64; MAX_DIM],
}

impl Vector {
    pub fn zeros(len: usize) -> Self {
        assert!(len <= MAX_DIM, "vector length {len} exceeds {MAX_DIM}");
        Self {
            len,
            data: [0.0; MAX_DIM],
        }
    }

    pub fn from_slice(values: &[f64]) -> Self {
        let mut v = Self::zeros(values.len());
        v.data[..values.len()].copy_from_slice(values);
        v
    }

    pub fn from_fn(len: usize, f: impl Fn(usize) -> f64) -> Self {
        let mut v = Self::zeros(len);
        for i in 0..len {
            v.data[i] = f(i);
        }
        v
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data[..self.len]
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data[..self.len]
    }

    pub fn dot(&self, other: &Vector) -> f64 {
        assert_eq!(self.len, other.len);
        self.as_slice()
            .iter()
            .zip(other.as_slice())
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn sum(&self) -> f64 {
        self.as_slice().iter().sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scale(&self, k: f64) -> Vector {
        Vector::from_fn(self.len, |i| self.data[i] * k)
    }

    pub fn is_finite(&self) -> bool {
        self.as_slice().iter().all(|v| v.is_finite())
    }
}

impl Index<usize> for Vector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.as_slice()[i]
    }
}

impl IndexMut<usize> for Vector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.as_mut_slice()[i]
    }
}

impl Add for Vector {
    type Output = Vector;
    fn add(self, rhs: Vector) -> Vector {
        assert_eq!(self.len, rhs.len, "vector add length mismatch");
        Vector::from_fn(self.len, |i| self.data[i] + rhs.data[i])
    }
}

impl Sub for Vector {
    type Output = Vector;
    fn sub(self, rhs: Vector) -> Vector {
        assert_eq!(self.len, rhs.len, "vector sub length mismatch");
        Vector::from_fn(self.len, |i| self.data[i] - rhs.data[i])
    }
}

impl fmt::Debug for Vector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.as_slice()).finish()
    }
}

/// Whether a model evolves in continuous time or is sampled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TimeDomain {
    Continuous,
    Discrete { sample_time: f64 },
}

/// LTI model `x' = A x + B u`, `y = C x + D u` (or the sampled equivalent).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateSpaceModel {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
    pub d: Matrix,
    pub time_domain: TimeDomain,
}

impl StateSpaceModel {
    /// Validates shapes against the `n <= 4, m <= 2, p <= 1` envelope.
    pub fn new(
        a: Matrix,
        b: Matrix,
        c: Matrix,
        d: Matrix,
        time_domain: TimeDomain,
    ) -> Result<Self> {
        let n = a.rows();
        if !a.is_square() || n == 0 {
            return Err(AdrcError::invalid(
                "state matrix must be square and non-empty",
            ));
        }
        let m = b.cols();
        if b.rows() != n || m == 0 || m > 2 {
            return Err(AdrcError::invalid(format!(
                "input matrix must be {n}x(1..=2), got {}x{m}",
                b.rows()
            )));
        }
        if c.rows() != 1 || c.cols() != n {
            return Err(AdrcError::invalid(format!("output matrix must be 1x{n}")));
        }
        if d.rows() != 1 || d.cols() != m {
            return Err(AdrcError::invalid(format!("feed-through must be 1x{m}")));
        }
        if let TimeDomain::Discrete { sample_time } = time_domain {
            if !(sample_time > 0.0 && sample_time.is_finite()) {
                return Err(AdrcError::invalid(
                    "discrete models need a positive sample time",
                ));
            }
        }
        if ![a, b, c, d].iter().all(Matrix::is_finite) {
            return Err(AdrcError::invalid("model contains non-finite entries"));
        }
        Ok(Self {
            a,
            b,
            c,
            d,
            time_domain,
        })
    }

    pub fn continuous(a: Matrix, b: Matrix, c: Matrix, d: Matrix) -> Result<Self> {
        Self::new(a, b, c, d, TimeDomain::Continuous)
    }

    pub fn states(&self) -> usize {
        self.a.rows()
    }

    pub fn inputs(&self) -> usize {
        self.b.cols()
    }

    pub fn is_continuous(&self) -> bool {
        matches!(self.time_domain, TimeDomain::Continuous)
    }
}

/// Monic polynomial with coefficients ordered highest degree first.
#[derive(Clone, Copy, PartialEq)]
pub struct Polynomial {
    degree: usize,
    coeffs: [f64; MAX_DIM + 1],
}

impl Polynomial {
    /// Normalizes the leading coefficient to one.
    pub fn new(coefficients: &[f64]) -> Result<Self> {
        if coefficients.is_empty() || coefficients.len() > MAX_DIM + 1 {
            return Err(AdrcError::invalid("polynomial degree must be 0..=4"));
        }
        let lead = coefficients[0];
        if lead == 0.0 || !coefficients.iter().all(|c| c.is_finite()) {
            return Err(AdrcError::invalid(
                "polynomial needs a finite, non-zero leading coefficient",
            ));
        }
        let mut coeffs = [0.0; MAX_DIM + 1];
        for (dst, &c) in coeffs.iter_mut().zip(coefficients) {
            *dst = c / lead;
        }
        Ok(Self {
            degree: coefficients.len() - 1,
            coeffs,
        })
    }

    /// `(s - root)^degree`, expanded with binomial coefficients.
    pub fn repeated_root(root: f64, degree: usize) -> Self {
        assert!(degree <= MAX_DIM);
        let mut coeffs = [0.0; MAX_DIM + 1];
        let mut binom = 1.0;
        for (k, c) in coeffs.iter_mut().enumerate().take(degree + 1) {
            *c = binom * (-root).powi(k as i32);
            binom = binom * (degree - k) as f64 / (k + 1) as f64;
        }
        Self { degree, coeffs }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coeffs[..=self.degree]
    }

    /// Horner evaluation.
    pub fn eval(&self, s: f64) -> f64 {
        self.coefficients().iter().fold(0.0, |acc, &c| acc * s + c)
    }
}

impl fmt::Debug for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Polynomial{:?}", self.coefficients())
    }
}

/// Relative coefficient tolerance: `|a - b| <= tol * max(1, |b|)`.
pub fn coefficients_close(actual: &Polynomial, expected: &Polynomial, tol: f64) -> bool {
    actual.degree() == expected.degree()
        && actual
            .coefficients()
            .iter()
            .zip(expected.coefficients())
            .all(|(a, b)| (a - b).abs() <= tol * b.abs().max(1.0))
}

/// Characteristic polynomial `det(sI - M)` for `n` in `1..=3`.
pub fn characteristic_polynomial(m: &Matrix) -> Result<Polynomial> {
    if !m.is_square() || !(1..=3).contains(&m.rows()) {
        return Err(AdrcError::invalid(
            "characteristic polynomial supports square 1x1..3x3 matrices",
        ));
    }
    if !m.is_finite() {
        return Err(AdrcError::invalid("matrix contains non-finite entries"));
    }
    let coeffs = match m.rows() {
        1 => vec![1.0, -m[(0, 0)]],
        2 => vec![1.0, -m.trace(), m.determinant()],
        _ => {
            // sum of the principal 2x2 minors
            let e2 = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)] + m[(0, 0)] * m[(2, 2)]
                - m[(0, 2)] * m[(2, 0)]
                + m[(1, 1)] * m[(2, 2)]
                - m[(1, 2)] * m[(2, 1)];
            vec![1.0, -m.trace(), e2, -m.determinant()]
        }
    };
    Polynomial::new(&coeffs)
}

/// True iff `p` equals `(s - expected_root)^degree` coefficient-wise within
/// `tol`, where each coefficient is compared relative to `max(1, |expected|)`.
pub fn poly_roots_all_equal(p: &Polynomial, expected_root: f64, tol: f64) -> bool {
    p.degree() <= 3
        && coefficients_close(
            p,
            &Polynomial::repeated_root(expected_root, p.degree()),
            tol,
        )
}

const SERIES_REL_TOL: f64 = 1e-15;
const SERIES_MAX_TERMS: usize = 64;

/// Zero-order-hold discretization.
///
/// Sums `Ad = I + sum A^i T^i / i!` and `Bd = (sum A^(i-1) T^i / i!) B` until a
/// term is exactly zero (nilpotent `A`) or negligible relative to the partial
/// sum. Inputs with `|A| T > 1` are first scaled down by powers of two and the
/// result squared back up, so the series always converges quickly.
pub fn zoh_discretize(model: &StateSpaceModel, sample_time: f64) -> Result<StateSpaceModel> {
    if !model.is_continuous() {
        return Err(AdrcError::invalid("model is already discrete"));
    }
    if !(sample_time > 0.0 && sample_time.is_finite()) {
        return Err(AdrcError::invalid(
            "sample time must be positive and finite",
        ));
    }
    if ![model.a, model.b, model.c, model.d]
        .iter()
        .all(Matrix::is_finite)
    {
        return Err(AdrcError::invalid("model contains non-finite entries"));
    }

    let a = model.a;
    let n = a.rows();
    let nilpotent = a.pow(n as u32).is_zero();
    let squarings = if nilpotent {
        0
    } else {
        let r = a.norm_inf() * sample_time;
        if r > 1.0 {
            r.log2().ceil() as u32
        } else {
            0
        }
    };
    let step = sample_time / f64::from(1u32 << squarings.min(30));

    let (mut phi, mut gamma) = zoh_series(&a, step);
    for _ in 0..squarings.min(30) {
        // Phi(2t) = Phi(t)^2, Gamma(2t) = Gamma(t) + Phi(t) Gamma(t)
        gamma = gamma + phi * gamma;
        phi = phi * phi;
    }

    StateSpaceModel::new(
        phi,
        gamma * model.b,
        model.c,
        model.d,
        TimeDomain::Discrete { sample_time },
    )
}

/// Returns `(e^{A t}, integral_0^t e^{A s} ds)` by truncated power series.
fn zoh_series(a: &Matrix, t: f64) -> (Matrix, Matrix) {
    let n = a.rows();
    let mut phi = Matrix::identity(n);
    let mut gamma = Matrix::identity(n).scale(t);
    // term_i = A^i t^i / i!
    let mut term = Matrix::identity(n);
    for i in 1..SERIES_MAX_TERMS {
        term = (term * *a).scale(t / i as f64);
        if term.is_zero() {
            break;
        }
        phi = phi + term;
        let gamma_term = term.scale(t / (i + 1) as f64);
        gamma = gamma + gamma_term;
        if term.max_abs() <= SERIES_REL_TOL * phi.max_abs()
            && gamma_term.max_abs() <= SERIES_REL_TOL * gamma.max_abs()
        {
            break;
        }
    }
    (phi, gamma)
}
