//! Classical state-space design with a constant disturbance model, used as an
//! independent cross-check of the ADRC parameters.
//!
//! Gains here come from Ackermann's formula rather than the closed forms in
//! [`crate::design`], so agreement between the two is a real test.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::design::{design, discretize_design, AdrcDesign, DiscreteEso, DiscreteEsoGains, Order};
use crate::error::{AdrcError, Result};
use crate::lti::{
    characteristic_polynomial, zoh_discretize, Matrix, Polynomial, StateSpaceModel, Vector,
};

/// Deviations above this (relative to `max(1, |expected|)`) fail a check.
pub const EQUIVALENCE_TOL: f64 = 1e-9;

/// `p(M)` by Horner's scheme for a monic polynomial.
fn matrix_poly(p: &Polynomial, m: &Matrix) -> Matrix {
    let n = m.rows();
    p.coefficients()
        .iter()
        .fold(Matrix::zeros(n, n), |acc, &c| {
            acc * *m + Matrix::identity(n).scale(c)
        })
}

/// State feedback row `K` placing every eigenvalue of `A - B K` at `s_cl`.
pub fn design_feedback(a: &Matrix, b: &Matrix, s_cl: f64) -> Result<Vector> {
    let n = a.rows();
    if !a.is_square() || b.rows() != n || b.cols() != 1 {
        return Err(AdrcError::invalid(
            "feedback design needs square A and a single input column",
        ));
    }
    // controllability matrix [B, AB, ..., A^(n-1) B]
    let mut wc = Matrix::zeros(n, n);
    let mut col = b.col(0);
    for j in 0..n {
        for i in 0..n {
            wc[(i, j)] = col[i];
        }
        col = a.mul_vec(&col);
    }
    let wc_inv = wc
        .inverse()
        .map_err(|_| AdrcError::invalid("(A, B) is not controllable"))?;
    let p_a = matrix_poly(&Polynomial::repeated_root(s_cl, n), a);
    Ok((wc_inv * p_a).row_vec(n - 1))
}

/// Observer gain `L` placing every eigenvalue of `A - L C` at `pole`.
pub fn design_observer(a: &Matrix, c: &Matrix, pole: f64) -> Result<Vector> {
    let n = a.rows();
    if !a.is_square() || c.cols() != n || c.rows() != 1 {
        return Err(AdrcError::invalid(
            "observer design needs square A and a single output row",
        ));
    }
    let mut wo = Matrix::zeros(n, n);
    let mut row = c.row_vec(0);
    for i in 0..n {
        for j in 0..n {
            wo[(i, j)] = row[j];
        }
        row = a.transpose().mul_vec(&row);
    }
    let wo_inv = wo
        .inverse()
        .map_err(|_| AdrcError::invalid("(A, C) is not observable"))?;
    let p_a = matrix_poly(&Polynomial::repeated_root(pole, n), a);
    Ok((p_a * wo_inv).col(n - 1))
}

/// Reference gain `G = -(C (A - B K)^-1 B)^-1` for zero steady-state error.
pub fn gain_compensation(a: &Matrix, b: &Matrix, c: &Matrix, k: &Vector) -> Result<f64> {
    let closed = *a - *b * Matrix::row(k);
    let inv = closed
        .inverse()
        .map_err(|_| AdrcError::invalid("A - B K is singular"))?;
    let dc = (*c * inv * *b)[(0, 0)];
    if dc == 0.0 {
        return Err(AdrcError::invalid("closed loop has zero DC gain"));
    }
    Ok(-1.0 / dc)
}

/// Scalar `Kd` with `B Kd = E Cd`; errors when no exact match exists.
pub fn disturbance_gain(b: &Matrix, e: &Matrix, c_d_gen: f64) -> Result<f64> {
    let target = e.scale(c_d_gen).col(0);
    let bv = b.col(0);
    let bb = bv.dot(&bv);
    if bb == 0.0 {
        return Err(AdrcError::invalid("input matrix is zero"));
    }
    let kd = bv.dot(&target) / bb;
    let residual = (target - bv.scale(kd)).norm();
    if residual > EQUIVALENCE_TOL * target.norm().max(1.0) {
        return Err(AdrcError::invalid(format!(
            "disturbance matching is infeasible (residual {residual:e})"
        )));
    }
    Ok(kd)
}

/// State-space controller and observer for the integrator chain augmented
/// with a constant disturbance generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentedDesign {
    pub order: Order,
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
    /// Disturbance input column.
    pub e: Matrix,
    /// Generator dynamics (zero for a constant disturbance).
    pub a_d_gen: f64,
    pub c_d_gen: f64,
    pub k_fb: Vector,
    pub k_d: f64,
    pub g: f64,
    pub l_aug: Vector,
}

impl AugmentedDesign {
    /// `scale` is the plant time constant raised to the model order; it
    /// enters `E` and `Cd` as reciprocals and cancels in every gain.
    pub fn new(order: Order, b0: f64, s_cl: f64, s_eso: f64, scale: f64) -> Result<Self> {
        if b0 == 0.0 || !b0.is_finite() || !(scale > 0.0) {
            return Err(AdrcError::invalid("b0 must be non-zero and scale positive"));
        }
        let n = match order {
            Order::First => 1,
            Order::Second => 2,
        };
        let mut a = Matrix::zeros(n, n);
        for i in 0..n - 1 {
            a[(i, i + 1)] = 1.0;
        }
        let mut b = Matrix::zeros(n, 1);
        b[(n - 1, 0)] = b0;
        let mut c = Matrix::zeros(1, n);
        c[(0, 0)] = 1.0;
        let mut e = Matrix::zeros(n, 1);
        e[(n - 1, 0)] = 1.0 / scale;
        let (a_d_gen, c_d_gen) = (0.0, scale);

        let k_fb = design_feedback(&a, &b, s_cl)?;
        let g = gain_compensation(&a, &b, &c, &k_fb)?;
        let k_d = disturbance_gain(&b, &e, c_d_gen)?;

        let (a_aug, c_aug) = augment(&a, &c, &e, a_d_gen, c_d_gen);
        let l_aug = design_observer(&a_aug, &c_aug, s_eso)?;
        Ok(Self {
            order,
            a,
            b,
            c,
            e,
            a_d_gen,
            c_d_gen,
            k_fb,
            k_d,
            g,
            l_aug,
        })
    }

    /// Augmented observer matrices `(A~, C~)`.
    pub fn augmented(&self) -> (Matrix, Matrix) {
        augment(&self.a, &self.c, &self.e, self.a_d_gen, self.c_d_gen)
    }
}

fn augment(a: &Matrix, c: &Matrix, e: &Matrix, a_d: f64, c_d: f64) -> (Matrix, Matrix) {
    let n = a.rows();
    let mut a_aug = Matrix::zeros(n + 1, n + 1);
    let mut c_aug = Matrix::zeros(1, n + 1);
    for i in 0..n {
        for j in 0..n {
            a_aug[(i, j)] = a[(i, j)];
        }
        a_aug[(i, n)] = e[(i, 0)] * c_d;
        c_aug[(0, i)] = c[(0, i)];
    }
    a_aug[(n, n)] = a_d;
    (a_aug, c_aug)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceCheck {
    pub quantity: String,
    pub adrc: f64,
    pub state_space: f64,
    pub deviation: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceReport {
    pub checks: Vec<EquivalenceCheck>,
}

impl EquivalenceReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn max_deviation(&self) -> f64 {
        self.checks.iter().map(|c| c.deviation).fold(0.0, f64::max)
    }

    pub fn failures(&self) -> impl Iterator<Item = &EquivalenceCheck> {
        self.checks.iter().filter(|c| !c.pass)
    }
}

impl fmt::Display for EquivalenceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "{:<6} {:<4} adrc={:<14.8e} state_space={:<14.8e} dev={:.2e}",
                c.quantity,
                if c.pass { "ok" } else { "FAIL" },
                c.adrc,
                c.state_space,
                c.deviation
            )?;
        }
        Ok(())
    }
}

/// Compares every ADRC parameter with its state-space counterpart.
/// Deviation is `|adrc - ss| / max(1, |ss|)`.
pub fn verify_equivalence(design: &AdrcDesign) -> EquivalenceReport {
    let mut checks = Vec::new();
    let mut push = |quantity: String, adrc: f64, state_space: f64| {
        let deviation = (adrc - state_space).abs() / state_space.abs().max(1.0);
        let pass = deviation < EQUIVALENCE_TOL;
        checks.push(EquivalenceCheck {
            quantity,
            adrc,
            state_space,
            deviation,
            pass,
        });
    };
    let aug = match AugmentedDesign::new(design.order, design.b0, design.s_cl, design.s_eso, 1.0) {
        Ok(aug) => aug,
        Err(_) => {
            push("design".into(), 0.0, f64::NAN);
            return EquivalenceReport { checks };
        }
    };
    let w = design.feedback_weights();
    push("K1".into(), w[0], aug.k_fb[0]);
    if design.order == Order::Second {
        push("K2".into(), w[1], aug.k_fb[1]);
    }
    push("G".into(), design.k_p / design.b0, aug.g);
    push("Kd".into(), 1.0 / design.b0, aug.k_d);
    for i in 0..design.l_cont.len() {
        push(format!("l{}", i + 1), design.l_cont[i], aug.l_aug[i]);
    }
    EquivalenceReport { checks }
}

/// Prediction observer `x(k+1) = Ad x(k) + Bd u(k) + Lp (y(k) - Cd x(k))`
/// with all poles at `gains.z_eso`. Kept only as a reference for the
/// current observer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionObserver {
    pub sampled: StateSpaceModel,
    pub l_pred: Vector,
}

impl PredictionObserver {
    pub fn new(design: &AdrcDesign, gains: &DiscreteEsoGains) -> Result<Self> {
        let sampled = zoh_discretize(&design.eso_model(), gains.sample_time)?;
        let l_pred = design_observer(&sampled.a, &sampled.c, gains.z_eso)?;
        Ok(Self { sampled, l_pred })
    }

    /// Error dynamics `Ad - Lp Cd`.
    pub fn error_matrix(&self) -> Matrix {
        self.sampled.a - Matrix::column(&self.l_pred) * self.sampled.c
    }

    pub fn step(&self, x: &Vector, u: f64, y: f64) -> Vector {
        let innovation = y - self.sampled.c.mul_vec(x)[0];
        self.sampled.a.mul_vec(x) + self.sampled.b.col(0).scale(u) + self.l_pred.scale(innovation)
    }
}

/// Largest coefficient deviation `|a - b| / max(1, |b|)`; infinite when the
/// degrees differ.
pub fn poly_deviation(actual: &Polynomial, expected: &Polynomial) -> f64 {
    if actual.degree() != expected.degree() {
        return f64::INFINITY;
    }
    actual
        .coefficients()
        .iter()
        .zip(expected.coefficients())
        .map(|(a, b)| (a - b).abs() / b.abs().max(1.0))
        .fold(0.0, f64::max)
}

/// Continuous and current-observer placement errors of one design.
pub fn placement_deviation(design: &AdrcDesign, sample_time: f64) -> Result<(f64, f64)> {
    let n = design.order.observer_len();
    let cont = characteristic_polynomial(&design.observer_matrix())?;
    let gains = discretize_design(design, sample_time)?;
    let disc = characteristic_polynomial(&DiscreteEso::new(design, &gains)?.a_eso)?;
    Ok((
        poly_deviation(&cont, &Polynomial::repeated_root(design.s_eso, n)),
        poly_deviation(&disc, &Polynomial::repeated_root(gains.z_eso, n)),
    ))
}

/// Random design parameters `(b0, t_settle, k_eso, sample_time)`.
pub fn random_design_parameters(seed: u64, count: usize) -> Vec<(f64, f64, f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            (
                rng.random_range(0.1..=10.0),
                rng.random_range(0.2..=20.0),
                rng.random_range(1.0..=100.0),
                rng.random_range(0.001..=0.1),
            )
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationRow {
    pub check: String,
    pub cases: usize,
    pub max_deviation: f64,
    pub passed: bool,
}

/// Equivalence and pole-placement checks over the nominal designs plus
/// `random_designs` random ones per order.
pub fn run_verification(random_designs: usize, seed: u64) -> Vec<VerificationRow> {
    let params = random_design_parameters(seed, random_designs);
    let mut rows = Vec::new();
    for (order, nominal_settle, tag) in [
        (Order::First, 1.0, "order 1"),
        (Order::Second, 5.0, "order 2"),
    ] {
        let mut designs = vec![(design(order, 1.0, nominal_settle, 10.0), 0.01)];
        designs.extend(
            params
                .iter()
                .map(|&(b0, ts, k, dt)| (design(order, b0, ts, k), dt)),
        );
        let (mut eq, mut cont, mut disc) = (0.0f64, 0.0f64, 0.0f64);
        let mut ok = true;
        for (d, dt) in &designs {
            let Ok(d) = d else {
                ok = false;
                continue;
            };
            let report = verify_equivalence(d);
            ok &= report.passed();
            eq = eq.max(report.max_deviation());
            match placement_deviation(d, *dt) {
                Ok((c, z)) => {
                    cont = cont.max(c);
                    disc = disc.max(z);
                }
                Err(_) => ok = false,
            }
        }
        let n = designs.len();
        rows.push(VerificationRow {
            check: format!("state-space equivalence, {tag}"),
            cases: n,
            max_deviation: eq,
            passed: ok && eq < EQUIVALENCE_TOL,
        });
        rows.push(VerificationRow {
            check: format!("continuous observer poles, {tag}"),
            cases: n,
            max_deviation: cont,
            passed: ok && cont < EQUIVALENCE_TOL,
        });
        rows.push(VerificationRow {
            check: format!("discrete observer poles, {tag}"),
            cases: n,
            max_deviation: disc,
            passed: ok && disc < EQUIVALENCE_TOL,
        });
    }
    rows
}
