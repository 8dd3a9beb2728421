//! Fixtures shared by the benchmarks.

use adrc_core::{
    design, discretize_design, AdrcDesign, AdrcParams, ControllerSpec, DiscreteEsoGains, Order,
    PlantSpec, Scenario,
};

pub const SAMPLE_TIME: f64 = 0.01;

/// Nominal first- or second-order design and its sampled observer gains.
pub fn nominal(order: Order) -> (AdrcDesign, DiscreteEsoGains) {
    let t_settle = match order {
        Order::First => 1.0,
        Order::Second => 5.0,
    };
    let d = design(order, 1.0, t_settle, 5.0).expect("nominal design");
    let gains = discretize_design(&d, SAMPLE_TIME).expect("nominal sample time");
    (d, gains)
}

/// Deterministic measurement sequence with a little ripple.
pub fn measurements(n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| 1.0 - (-0.02 * k as f64).exp() + 0.01 * (1.3 * k as f64).sin())
        .collect()
}

/// 10 s nominal step response with the continuous first-order controller.
pub fn continuous_scenario() -> Scenario {
    Scenario::step_response(
        PlantSpec::first_order(1.0, 1.0),
        ControllerSpec::AdrcContinuous(AdrcParams::new(Order::First, 1.0, 1.0, 10.0)),
        10.0,
    )
}
