//! Gain design for first- and second-order linear ADRC.
//!
//! All observer poles sit at one common location (bandwidth
//! parameterization). Continuous gains come from matching
//! `det(sI - (A - L C))` against `(s - s_eso)^(n+1)`; discrete current-observer
//! gains match `det(zI - (Ad - Lc Cd Ad))` against `(z - z_eso)^(n+1)`.

use serde::{Deserialize, Serialize};

use crate::error::{AdrcError, Result};
use crate::lti::{zoh_discretize, Matrix, StateSpaceModel, Vector};

/// Order of the plant model the controller assumes (integrator chain length).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Order {
    First,
    Second,
}

impl Order {
    /// Observer dimension: integrator chain plus the disturbance state.
    pub fn observer_len(self) -> usize {
        match self {
            Order::First => 2,
            Order::Second => 3,
        }
    }
}

impl TryFrom<u8> for Order {
    type Error = String;
    fn try_from(v: u8) -> Result<Self, String> {
        match v {
            1 => Ok(Order::First),
            2 => Ok(Order::Second),
            other => Err(format!("ADRC order must be 1 or 2, got {other}")),
        }
    }
}

impl From<Order> for u8 {
    fn from(o: Order) -> u8 {
        match o {
            Order::First => 1,
            Order::Second => 2,
        }
    }
}

/// Controller and observer gains of one continuous ADRC instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdrcDesign {
    pub order: Order,
    /// Input gain estimate (`K/T` for first order, `K/T^2` for second order).
    pub b0: f64,
    pub k_p: f64,
    /// Zero for first-order designs.
    pub k_d: f64,
    /// Closed-loop pole, rad/s.
    pub s_cl: f64,
    /// Common observer pole, rad/s.
    pub s_eso: f64,
    pub k_eso: f64,
    /// Continuous observer gains `l_1..l_{n+1}`.
    pub l_cont: Vector,
}

fn check_common(b0: f64, t_settle: f64, k_eso: f64) -> Result<()> {
    if b0 == 0.0 || !b0.is_finite() {
        return Err(AdrcError::invalid("b0 must be finite and non-zero"));
    }
    if !(t_settle > 0.0 && t_settle.is_finite()) {
        return Err(AdrcError::invalid("settling time must be positive"));
    }
    if !(k_eso >= 1.0 && k_eso.is_finite()) {
        return Err(AdrcError::invalid("observer factor k_eso must be >= 1"));
    }
    Ok(())
}

/// First-order ADRC: `s_cl = -4 / t_settle`, `k_p = -s_cl`,
/// `l = [-2 s_eso, s_eso^2]`.
pub fn design_first_order(b0: f64, t_settle: f64, k_eso: f64) -> Result<AdrcDesign> {
    check_common(b0, t_settle, k_eso)?;
    let s_cl = -4.0 / t_settle;
    let s_eso = k_eso * s_cl;
    Ok(AdrcDesign {
        order: Order::First,
        b0,
        k_p: -s_cl,
        k_d: 0.0,
        s_cl,
        s_eso,
        k_eso,
        l_cont: Vector::from_slice(&[-2.0 * s_eso, s_eso * s_eso]),
    })
}

/// Second-order ADRC with a critically damped loop: `s_cl = -6 / t_settle`,
/// `k_p = s_cl^2`, `k_d = -2 s_cl`, `l = [-3 s, 3 s^2, -s^3]`.
pub fn design_second_order(b0: f64, t_settle: f64, k_eso: f64) -> Result<AdrcDesign> {
    check_common(b0, t_settle, k_eso)?;
    let s_cl = -6.0 / t_settle;
    let s_eso = k_eso * s_cl;
    Ok(AdrcDesign {
        order: Order::Second,
        b0,
        k_p: s_cl * s_cl,
        k_d: -2.0 * s_cl,
        s_cl,
        s_eso,
        k_eso,
        l_cont: Vector::from_slice(&[-3.0 * s_eso, 3.0 * s_eso * s_eso, -(s_eso * s_eso * s_eso)]),
    })
}

pub fn design(order: Order, b0: f64, t_settle: f64, k_eso: f64) -> Result<AdrcDesign> {
    match order {
        Order::First => design_first_order(b0, t_settle, k_eso),
        Order::Second => design_second_order(b0, t_settle, k_eso),
    }
}

impl AdrcDesign {
    /// Extended integrator-chain model `(A, B, C)` the observer is built on.
    pub fn eso_model(&self) -> StateSpaceModel {
        let n = self.order.observer_len();
        let mut a = Matrix::zeros(n, n);
        for i in 0..n - 1 {
            a[(i, i + 1)] = 1.0;
        }
        let mut b = Matrix::zeros(n, 1);
        b[(n - 2, 0)] = self.b0;
        let mut c = Matrix::zeros(1, n);
        c[(0, 0)] = 1.0;
        StateSpaceModel::continuous(a, b, c, Matrix::zeros(1, 1)).expect("ESO model shape is fixed")
    }

    /// Observer error dynamics `A - L C`.
    pub fn observer_matrix(&self) -> Matrix {
        let m = self.eso_model();
        m.a - Matrix::column(&self.l_cont) * m.c
    }

    /// State-feedback row `[k_p, (k_d,) 1] / b0` acting on the estimate.
    pub fn feedback_weights(&self) -> Vector {
        match self.order {
            Order::First => Vector::from_slice(&[self.k_p / self.b0, 1.0 / self.b0]),
            Order::Second => {
                Vector::from_slice(&[self.k_p / self.b0, self.k_d / self.b0, 1.0 / self.b0])
            }
        }
    }
}

/// Current-observer gains for a sampled ADRC.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscreteEsoGains {
    pub z_eso: f64,
    pub l_current: Vector,
    pub sample_time: f64,
}

/// Maps a continuous pole into the z-plane: `exp(s * T)`.
pub fn map_pole_to_z(s_eso: f64, sample_time: f64) -> f64 {
    (s_eso * sample_time).exp()
}

fn check_discrete(z_eso: f64, sample_time: f64) -> Result<()> {
    if !(sample_time > 0.0 && sample_time.is_finite()) {
        return Err(AdrcError::invalid("sample time must be positive"));
    }
    // z = 0 is the deadbeat limit (s_eso -> -inf) and is still a valid placement.
    if !(0.0..=1.0).contains(&z_eso) {
        return Err(AdrcError::invalid(format!(
            "discrete observer pole must lie in [0, 1], got {z_eso}"
        )));
    }
    Ok(())
}

/// `l1 = 1 - z^2`, `l2 = (1 - z)^2 / T`.
pub fn discrete_gains_first(z_eso: f64, sample_time: f64) -> Result<DiscreteEsoGains> {
    check_discrete(z_eso, sample_time)?;
    let w = 1.0 - z_eso;
    Ok(DiscreteEsoGains {
        z_eso,
        l_current: Vector::from_slice(&[1.0 - z_eso * z_eso, w * w / sample_time]),
        sample_time,
    })
}

/// `l1 = 1 - z^3`, `l2 = 3 (1 - z)^2 (1 + z) / (2 T)`, `l3 = (1 - z)^3 / T^2`.
pub fn discrete_gains_second(z_eso: f64, sample_time: f64) -> Result<DiscreteEsoGains> {
    check_discrete(z_eso, sample_time)?;
    let w = 1.0 - z_eso;
    let ts = sample_time;
    Ok(DiscreteEsoGains {
        z_eso,
        l_current: Vector::from_slice(&[
            1.0 - z_eso * z_eso * z_eso,
            1.5 * w * w * (1.0 + z_eso) / ts,
            w * w * w / (ts * ts),
        ]),
        sample_time,
    })
}

/// Maps the design's observer pole to `z` and computes current-observer gains.
pub fn discretize_design(design: &AdrcDesign, sample_time: f64) -> Result<DiscreteEsoGains> {
    let z = map_pole_to_z(design.s_eso, sample_time);
    match design.order {
        Order::First => discrete_gains_first(z, sample_time),
        Order::Second => discrete_gains_second(z, sample_time),
    }
}

/// Sampled observer matrices of the current observer
/// `x(k) = A_eso x(k-1) + B_eso u(k-1) + L_eso y(k)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscreteEso {
    pub ad: Matrix,
    pub bd: Matrix,
    pub cd: Matrix,
    /// `Ad - Lc Cd Ad`
    pub a_eso: Matrix,
    /// `Bd - Lc Cd Bd` (a column)
    pub b_eso: Vector,
    pub l_eso: Vector,
}

impl DiscreteEso {
    pub fn new(design: &AdrcDesign, gains: &DiscreteEsoGains) -> Result<Self> {
        let sampled = zoh_discretize(&design.eso_model(), gains.sample_time)?;
        let lc = Matrix::column(&gains.l_current);
        let correction = lc * sampled.c;
        let a_eso = sampled.a - correction * sampled.a;
        let b_eso = (sampled.b - correction * sampled.b).col(0);
        Ok(Self {
            ad: sampled.a,
            bd: sampled.b,
            cd: sampled.c,
            a_eso,
            b_eso,
            l_eso: gains.l_current,
        })
    }
}
