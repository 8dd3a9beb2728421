//! Runtime controllers.
//!
//! The continuous ADRC exposes its observer as an ODE so the simulator can
//! co-integrate it with the plant. Everything sampled implements
//! [`SampledController`]: `step` produces the output for the newest
//! measurement and `commit` tells the controller which (possibly saturated)
//! value was actually applied before the next sample.

use std::collections::VecDeque;
use std::ops::{Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::design::{AdrcDesign, DiscreteEso, DiscreteEsoGains, Order};
use crate::error::{AdrcError, Result};
use crate::lti::{zoh_discretize, Matrix, StateSpaceModel, Vector};

/// Clamp to `[-limit, limit]`.
pub fn apply_saturation(u: f64, limit: f64) -> f64 {
    u.clamp(-limit, limit)
}

/// Observer right-hand side `(A - L C) x + B u + L y`.
pub fn eso_derivative(design: &AdrcDesign, x_hat: &Vector, u_effective: f64, y: f64) -> Vector {
    let l = &design.l_cont;
    let e = y - x_hat[0];
    match design.order {
        Order::First => {
            Vector::from_slice(&[x_hat[1] + design.b0 * u_effective + l[0] * e, l[1] * e])
        }
        Order::Second => Vector::from_slice(&[
            x_hat[1] + l[0] * e,
            x_hat[2] + design.b0 * u_effective + l[1] * e,
            l[2] * e,
        ]),
    }
}

/// ADRC control law with disturbance compensation.
pub fn control_law(design: &AdrcDesign, x_hat: &Vector, r: f64) -> f64 {
    match design.order {
        Order::First => (design.k_p * (r - x_hat[0]) - x_hat[1]) / design.b0,
        Order::Second => {
            (design.k_p * (r - x_hat[0]) - design.k_d * x_hat[1] - x_hat[2]) / design.b0
        }
    }
}

/// Fixed-length FIFO delay. `push` returns the value pushed `len` calls ago
/// (zero until the line has filled). A zero-length line is a pass-through.
#[derive(Debug, Clone)]
pub struct DelayLine {
    buf: VecDeque<f64>,
}

impl DelayLine {
    pub fn new(len: usize) -> Self {
        Self {
            buf: std::iter::repeat_n(0.0, len).collect(),
        }
    }

    /// Length in samples of `delay / step`, rounded; the fractional part is dropped.
    pub fn from_duration(delay: f64, step: f64) -> Self {
        Self::new((delay / step).round().max(0.0) as usize)
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    /// Oldest value, i.e. what the next `push` will return.
    pub fn front(&self) -> Option<f64> {
        self.buf.front().copied()
    }

    pub fn push(&mut self, v: f64) -> f64 {
        if self.buf.is_empty() {
            return v;
        }
        let out = self.buf.pop_front().unwrap_or(0.0);
        self.buf.push_back(v);
        out
    }
}

/// Continuous-time ADRC. The observer state lives inside the simulator's
/// integration vector; this struct only carries gains and the optional
/// observer-input delay that compensates plant dead time.
#[derive(Debug, Clone)]
pub struct ContinuousAdrc {
    pub design: AdrcDesign,
    eso_delay: DelayLine,
}

impl ContinuousAdrc {
    pub fn new(design: AdrcDesign, eso_dead_time: f64, step: f64) -> Self {
        Self {
            design,
            eso_delay: DelayLine::from_duration(eso_dead_time, step),
        }
    }

    pub fn observer_len(&self) -> usize {
        self.design.order.observer_len()
    }

    pub fn eso_delay_steps(&self) -> usize {
        self.eso_delay.len()
    }

    pub fn output(&self, x_hat: &Vector, r: f64) -> f64 {
        control_law(&self.design, x_hat, r)
    }

    pub fn derivative(&self, x_hat: &Vector, u_effective: f64, y: f64) -> Vector {
        eso_derivative(&self.design, x_hat, u_effective, y)
    }

    /// Records the applied output for this sub-step and returns the delayed
    /// value the observer sees. Only meaningful when the delay is non-zero.
    pub fn delay_observer_input(&mut self, u_applied: f64) -> f64 {
        self.eso_delay.push(u_applied)
    }

    /// Observer input for the current sub-step without advancing the line.
    pub fn pending_observer_input(&self) -> Option<f64> {
        self.eso_delay.front()
    }
}

/// Sample-by-sample controller interface used by the simulator.
pub trait SampledController: Send {
    /// Computes the raw output for measurement `y` at reference `r`.
    /// `r_next` is the reference one sample ahead.
    fn step(&mut self, y: f64, r: f64, r_next: f64) -> f64;

    /// Informs the controller of the value actually applied to the plant.
    fn commit(&mut self, u_applied: f64);

    /// Observer estimate, if the controller has one.
    fn estimates(&self) -> Vector {
        Vector::zeros(0)
    }
}

/// One current-observer update followed by the control law.
/// Returns `(u_k, x_hat(k))`.
pub fn discrete_adrc_update(
    design: &AdrcDesign,
    eso: &DiscreteEso,
    x_prev: &Vector,
    u_prev: f64,
    y_k: f64,
    r_k: f64,
) -> (f64, Vector) {
    let x = eso.a_eso.mul_vec(x_prev) + eso.b_eso.scale(u_prev) + eso.l_eso.scale(y_k);
    (control_law(design, &x, r_k), x)
}

/// Discrete ADRC with a current observer.
#[derive(Debug, Clone)]
pub struct DiscreteAdrc {
    pub design: AdrcDesign,
    pub eso: DiscreteEso,
    x_hat: Vector,
    u_prev: f64,
}

impl DiscreteAdrc {
    pub fn new(design: AdrcDesign, gains: &DiscreteEsoGains) -> Result<Self> {
        let eso = DiscreteEso::new(&design, gains)?;
        Ok(Self {
            design,
            eso,
            x_hat: Vector::zeros(design.order.observer_len()),
            u_prev: 0.0,
        })
    }

    pub fn x_hat(&self) -> &Vector {
        &self.x_hat
    }
}

impl SampledController for DiscreteAdrc {
    fn step(&mut self, y: f64, r: f64, _r_next: f64) -> f64 {
        let (u, x) = discrete_adrc_update(&self.design, &self.eso, &self.x_hat, self.u_prev, y, r);
        self.x_hat = x;
        u
    }

    fn commit(&mut self, u_applied: f64) {
        self.u_prev = u_applied;
    }

    fn estimates(&self) -> Vector {
        self.x_hat
    }
}

/// Observer in scaled coordinates `x~ = T^-1 x^` with
/// `T^-1 = diag(k_p, [k_d,] 1) / b0`, so the control law reduces to
/// `u = (k_p / b0) r - sum(x~)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformedEso {
    pub a_t: Matrix,
    pub b_t: Vector,
    pub l_t: Vector,
    pub l_sum: f64,
    pub r_gain: f64,
    /// `T^-1`, kept for mapping estimates back.
    pub t_inv: Matrix,
}

pub fn build_transformed(design: &AdrcDesign, gains: &DiscreteEsoGains) -> Result<TransformedEso> {
    let eso = DiscreteEso::new(design, gains)?;
    transform_eso(design, &eso)
}

fn transform_eso(design: &AdrcDesign, eso: &DiscreteEso) -> Result<TransformedEso> {
    if design.k_p == 0.0 || (design.order == Order::Second && design.k_d == 0.0) {
        return Err(AdrcError::invalid(
            "transformation is singular: k_p (and k_d) must be non-zero",
        ));
    }
    let t_inv = Matrix::diag(design.feedback_weights().as_slice());
    let t = t_inv.inverse()?;
    let l_t = t_inv.mul_vec(&eso.l_eso);
    Ok(TransformedEso {
        a_t: t_inv * eso.a_eso * t,
        b_t: t_inv.mul_vec(&eso.b_eso),
        l_sum: l_t.sum(),
        l_t,
        r_gain: design.k_p / design.b0,
        t_inv,
    })
}

/// The latency-critical output update `u = u(k|k-1) - l_sum * y`.
///
/// Generic so the operation count can be checked with an instrumented number type.
#[inline(always)]
pub fn latency_output<T>(u_precomputed: T, l_sum: T, y: T) -> T
where
    T: Mul<Output = T> + Sub<Output = T>,
{
    u_precomputed - l_sum * y
}

/// `x~(k+1|k) = A~ (x~(k|k-1) + L~ y(k)) + B~ u(k)` and
/// `u(k+1|k) = r_gain r(k+1) - sum(x~(k+1|k))`.
/// Returns the new prediction and the precomputed output.
pub fn optimized_post_step(
    t: &TransformedEso,
    x_pred: &Vector,
    u_k: f64,
    y_k: f64,
    r_next: f64,
) -> (Vector, f64) {
    let x_k = *x_pred + t.l_t.scale(y_k);
    let x_next = t.a_t.mul_vec(&x_k) + t.b_t.scale(u_k);
    (x_next, t.r_gain * r_next - x_next.sum())
}

/// Latency-optimized discrete ADRC.
#[derive(Debug, Clone)]
pub struct OptimizedAdrc {
    pub transformed: TransformedEso,
    x_pred: Vector,
    u_precomputed: f64,
    y_last: f64,
    r_next: f64,
}

impl OptimizedAdrc {
    /// Starts from a zero observer with `u(0|-1) = (k_p / b0) r0`.
    pub fn new(design: &AdrcDesign, gains: &DiscreteEsoGains, r0: f64) -> Result<Self> {
        let transformed = build_transformed(design, gains)?;
        Ok(Self {
            u_precomputed: transformed.r_gain * r0,
            x_pred: Vector::zeros(design.order.observer_len()),
            transformed,
            y_last: 0.0,
            r_next: r0,
        })
    }

    pub fn u_precomputed(&self) -> f64 {
        self.u_precomputed
    }

    /// Output as soon as `y(k)` is available: one multiply, one add.
    #[inline]
    pub fn output(&self, y: f64) -> f64 {
        latency_output(self.u_precomputed, self.transformed.l_sum, y)
    }

    /// Observer update and precomputation for the next cycle.
    pub fn post_step(&mut self, u_applied: f64, y_k: f64, r_next: f64) {
        let (x, u) = optimized_post_step(&self.transformed, &self.x_pred, u_applied, y_k, r_next);
        self.x_pred = x;
        self.u_precomputed = u;
    }
}

impl SampledController for OptimizedAdrc {
    fn step(&mut self, y: f64, _r: f64, r_next: f64) -> f64 {
        self.y_last = y;
        self.r_next = r_next;
        self.output(y)
    }

    fn commit(&mut self, u_applied: f64) {
        self.post_step(u_applied, self.y_last, self.r_next);
    }

    /// One-step prediction `x^(k+1|k)` in original coordinates.
    fn estimates(&self) -> Vector {
        let t = self
            .transformed
            .t_inv
            .inverse()
            .expect("checked at construction");
        t.mul_vec(&self.x_pred)
    }
}

/// PI or PIDT1 baseline parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidGains {
    #[serde(default)]
    pub k_p: f64,
    pub k_i: f64,
    #[serde(default)]
    pub t_z1: f64,
    #[serde(default)]
    pub t_z2: f64,
    #[serde(default)]
    pub t_1: f64,
    pub form: PidForm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PidForm {
    Pi,
    Pidt1,
}

impl PidGains {
    pub fn pi(k_p: f64, k_i: f64) -> Self {
        Self {
            k_p,
            k_i,
            t_z1: 0.0,
            t_z2: 0.0,
            t_1: 0.0,
            form: PidForm::Pi,
        }
    }

    pub fn pidt1(k_i: f64, t_z1: f64, t_z2: f64, t_1: f64) -> Self {
        Self {
            k_p: 0.0,
            k_i,
            t_z1,
            t_z2,
            t_1,
            form: PidForm::Pidt1,
        }
    }
}

/// PI with trapezoidal integration of the error.
#[derive(Debug, Clone)]
pub struct PiController {
    k_p: f64,
    k_i: f64,
    sample_time: f64,
    integral: f64,
    e_prev: Option<f64>,
}

impl PiController {
    pub fn new(gains: &PidGains, sample_time: f64) -> Result<Self> {
        if !(sample_time > 0.0) {
            return Err(AdrcError::invalid("PI sample time must be positive"));
        }
        Ok(Self {
            k_p: gains.k_p,
            k_i: gains.k_i,
            sample_time,
            integral: 0.0,
            e_prev: None,
        })
    }

    pub fn update(&mut self, e: f64) -> f64 {
        if let Some(prev) = self.e_prev {
            self.integral += 0.5 * self.sample_time * (e + prev);
        }
        self.e_prev = Some(e);
        self.k_p * e + self.k_i * self.integral
    }
}

impl SampledController for PiController {
    fn step(&mut self, y: f64, r: f64, _r_next: f64) -> f64 {
        self.update(r - y)
    }

    fn commit(&mut self, _u_applied: f64) {}
}

/// `K_I (1 + T_z1 s)(1 + T_z2 s) / (s (1 + T_1 s))` as a ZOH-sampled
/// two-state realization.
#[derive(Debug, Clone)]
pub struct PidT1Controller {
    model: StateSpaceModel,
    x: Vector,
}

impl PidT1Controller {
    pub fn new(gains: &PidGains, sample_time: f64) -> Result<Self> {
        if !(gains.t_1 > 0.0) {
            return Err(AdrcError::invalid(
                "PIDT1 filter time constant must be positive",
            ));
        }
        let continuous = pidt1_realization(gains)?;
        let model = zoh_discretize(&continuous, sample_time)?;
        Ok(Self {
            model,
            x: Vector::zeros(2),
        })
    }

    pub fn update(&mut self, e: f64) -> f64 {
        let u = self.model.c.row_vec(0).dot(&self.x) + self.model.d[(0, 0)] * e;
        self.x = self.model.a.mul_vec(&self.x) + self.model.b.col(0).scale(e);
        u
    }
}

impl SampledController for PidT1Controller {
    fn step(&mut self, y: f64, r: f64, _r_next: f64) -> f64 {
        self.update(r - y)
    }

    fn commit(&mut self, _u_applied: f64) {}
}

/// Controllable canonical form of the PIDT1 transfer function.
pub fn pidt1_realization(gains: &PidGains) -> Result<StateSpaceModel> {
    let PidGains {
        k_i,
        t_z1,
        t_z2,
        t_1,
        ..
    } = *gains;
    // C(s) = d + (c1 s + c0) / (s^2 + s / T1)
    let d = k_i * t_z1 * t_z2 / t_1;
    let c1 = (k_i * (t_z1 + t_z2) - d) / t_1;
    let c0 = k_i / t_1;
    StateSpaceModel::continuous(
        Matrix::from_rows(&[&[0.0, 1.0], &[0.0, -1.0 / t_1]]),
        Matrix::from_rows(&[&[0.0], &[1.0]]),
        Matrix::from_rows(&[&[c0, c1]]),
        Matrix::from_rows(&[&[d]]),
    )
}

pub fn pi_update(state: &mut PiController, e_k: f64) -> f64 {
    state.update(e_k)
}

pub fn pidt1_update(state: &mut PidT1Controller, e_k: f64) -> f64 {
    state.update(e_k)
}
