//! Suite files shipped with the crate.

use super::SuiteConfig;
use crate::error::{AdrcError, Result};

/// `(id, toml text)` for every built-in suite.
pub const BUILTIN_SUITES: &[(&str, &str)] = &[
    (
        "adrc1-param-K",
        include_str!("../../suites/adrc1-param-K.toml"),
    ),
    (
        "adrc1-param-T",
        include_str!("../../suites/adrc1-param-T.toml"),
    ),
    ("adrc1-eso", include_str!("../../suites/adrc1-eso.toml")),
    (
        "adrc1-saturation",
        include_str!("../../suites/adrc1-saturation.toml"),
    ),
    (
        "adrc1-deadtime",
        include_str!("../../suites/adrc1-deadtime.toml"),
    ),
    (
        "adrc1-structural",
        include_str!("../../suites/adrc1-structural.toml"),
    ),
    (
        "adrc1-pi-compare",
        include_str!("../../suites/adrc1-pi-compare.toml"),
    ),
    (
        "adrc1-disturbance",
        include_str!("../../suites/adrc1-disturbance.toml"),
    ),
    (
        "adrc2-param-K",
        include_str!("../../suites/adrc2-param-K.toml"),
    ),
    (
        "adrc2-param-D",
        include_str!("../../suites/adrc2-param-D.toml"),
    ),
    (
        "adrc2-param-T",
        include_str!("../../suites/adrc2-param-T.toml"),
    ),
    ("adrc2-eso", include_str!("../../suites/adrc2-eso.toml")),
    (
        "adrc2-saturation",
        include_str!("../../suites/adrc2-saturation.toml"),
    ),
    (
        "adrc2-deadtime",
        include_str!("../../suites/adrc2-deadtime.toml"),
    ),
    (
        "adrc2-structural",
        include_str!("../../suites/adrc2-structural.toml"),
    ),
    (
        "adrc2-pid-compare",
        include_str!("../../suites/adrc2-pid-compare.toml"),
    ),
    (
        "adrc2-disturbance",
        include_str!("../../suites/adrc2-disturbance.toml"),
    ),
    ("discrete-Ts", include_str!("../../suites/discrete-Ts.toml")),
    (
        "discrete-noise",
        include_str!("../../suites/discrete-noise.toml"),
    ),
    (
        "discrete-kESO",
        include_str!("../../suites/discrete-kESO.toml"),
    ),
];

pub fn suite_ids() -> impl Iterator<Item = &'static str> {
    BUILTIN_SUITES.iter().map(|(id, _)| *id)
}

pub fn builtin_suite(id: &str) -> Result<SuiteConfig> {
    let (_, text) = BUILTIN_SUITES
        .iter()
        .find(|(name, _)| *name == id)
        .ok_or_else(|| AdrcError::UnknownSuite {
            id: id.to_string(),
            valid: suite_ids().collect::<Vec<_>>().join(", "),
        })?;
    SuiteConfig::from_toml(text)
}
