//! Parameter sweeps over closed-loop scenarios.
//!
//! A suite file holds a base scenario and one or more sweeps. Each sweep
//! varies a single dotted parameter path; each of its series may override
//! further paths (another controller, a different observer factor, ...).

mod metrics;
pub mod plot;
mod suites;

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Deserialize;

pub use metrics::{
    compute_metrics, compute_metrics_until, control_increment_std, iae_between, Metrics,
    SETTLING_BAND,
};
pub use suites::{builtin_suite, suite_ids, BUILTIN_SUITES};

use crate::error::{AdrcError, Result};
use crate::sim::{format_sig10, run_closed_loop, Scenario, Trajectory, SCHEMA_VERSION};

pub const SUMMARY_HEADER: &str =
    "sweep_value,settling_time,overshoot_pct,iae,u_max,steady_state_error,iae_window,du_std";

/// Replaces the value at a dotted path. Every segment must already exist.
pub fn set_path(root: &mut toml::Table, path: &str, value: toml::Value) -> Result<()> {
    let missing = || AdrcError::config(format!("parameter path `{path}` does not resolve"));
    let mut keys = path.split('.').peekable();
    let mut table = root;
    while let Some(key) = keys.next() {
        if keys.peek().is_none() {
            let slot = table.get_mut(key).ok_or_else(missing)?;
            *slot = value;
            return Ok(());
        }
        table = table
            .get_mut(key)
            .and_then(toml::Value::as_table_mut)
            .ok_or_else(missing)?;
    }
    Err(missing())
}

/// One base scenario with a single parameter varied over `values`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    base: toml::Table,
    pub parameter_path: String,
    pub values: Vec<f64>,
}

impl Sweep {
    pub fn new(base: &Scenario, parameter_path: &str, values: Vec<f64>) -> Result<Self> {
        let base = toml::Table::try_from(base).map_err(|e| AdrcError::config(e.to_string()))?;
        Self::from_table(base, parameter_path, values)
    }

    fn from_table(base: toml::Table, parameter_path: &str, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(AdrcError::config(format!(
                "sweep over `{parameter_path}` has no values"
            )));
        }
        let sweep = Self {
            base,
            parameter_path: parameter_path.to_string(),
            values,
        };
        // resolve once up front so a typo fails before any simulation
        sweep.scenario_for(sweep.values[0])?;
        Ok(sweep)
    }

    pub fn scenario_for(&self, value: f64) -> Result<Scenario> {
        let mut table = self.base.clone();
        set_path(&mut table, &self.parameter_path, toml::Value::Float(value))?;
        let scenario: Scenario = table
            .try_into()
            .map_err(|e: toml::de::Error| AdrcError::config(e.to_string()))?;
        scenario.validate()?;
        Ok(scenario)
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeriesConfig {
    pub label: String,
    /// Dotted path to replacement value.
    #[serde(default)]
    pub set: toml::Table,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub name: String,
    pub parameter_path: String,
    pub values: Vec<f64>,
    #[serde(default)]
    pub series: Vec<SeriesConfig>,
}

/// Parsed suite file.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    pub schema: u32,
    pub id: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub step_time: f64,
    #[serde(default = "unit_step")]
    pub step_size: f64,
    /// End of the window used for step metrics (default: horizon).
    pub metrics_until: Option<f64>,
    /// Interval for the extra `iae_window` column.
    pub iae_window: Option<[f64; 2]>,
    /// Start of the window for the `du_std` column (default: half the horizon).
    pub steady_state_from: Option<f64>,
    pub base: toml::Table,
    pub sweeps: Vec<SweepConfig>,
}

fn unit_step() -> f64 {
    1.0
}

impl SuiteConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: SuiteConfig =
            toml::from_str(text).map_err(|e| AdrcError::config(e.to_string()))?;
        if cfg.schema != SCHEMA_VERSION {
            return Err(AdrcError::config(format!(
                "unsupported schema {}",
                cfg.schema
            )));
        }
        if cfg.sweeps.is_empty() {
            return Err(AdrcError::config("suite has no sweeps"));
        }
        cfg.jobs()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    /// Resolved `(sweep name, series label, sweep)` triples in file order.
    pub fn sweeps(&self) -> Result<Vec<(String, String, Sweep)>> {
        let mut out = Vec::new();
        for sw in &self.sweeps {
            let default = [SeriesConfig {
                label: "adrc".into(),
                set: toml::Table::new(),
            }];
            let series = if sw.series.is_empty() {
                &default[..]
            } else {
                &sw.series[..]
            };
            for s in series {
                let mut base = self.base.clone();
                for (path, value) in &s.set {
                    set_path(&mut base, path, value.clone())?;
                }
                out.push((
                    sw.name.clone(),
                    s.label.clone(),
                    Sweep::from_table(base, &sw.parameter_path, sw.values.clone())?,
                ));
            }
        }
        Ok(out)
    }

    fn jobs(&self) -> Result<Vec<(usize, f64, Scenario)>> {
        let mut jobs = Vec::new();
        for (g, (_, _, sweep)) in self.sweeps()?.iter().enumerate() {
            for &v in &sweep.values {
                jobs.push((g, v, sweep.scenario_for(v)?));
            }
        }
        Ok(jobs)
    }

    /// Runs every point, in parallel. Results do not depend on the number
    /// of worker threads.
    pub fn run(&self) -> Result<SuiteResult> {
        let jobs = self.jobs()?;
        let outcomes: Vec<PointOutcome> = jobs
            .into_par_iter()
            .map(|(group, value, scenario)| {
                let outcome = self.evaluate(&scenario).map_err(|e| e.to_string());
                PointOutcome {
                    group,
                    value,
                    scenario,
                    outcome,
                }
            })
            .collect();
        let mut groups: Vec<GroupResult> = self
            .sweeps()?
            .into_iter()
            .map(|(sweep, series, _)| GroupResult {
                sweep,
                series,
                points: Vec::new(),
            })
            .collect();
        for p in outcomes {
            groups[p.group].points.push(p);
        }
        Ok(SuiteResult {
            id: self.id.clone(),
            description: self.description.clone(),
            groups,
        })
    }

    fn evaluate(&self, scenario: &Scenario) -> Result<PointResult> {
        let traj = run_closed_loop(scenario)?;
        let until = self.metrics_until.unwrap_or(scenario.horizon);
        let metrics = compute_metrics_until(&traj, self.step_time, self.step_size, until)?;
        let iae_window = self.iae_window.map(|[a, b]| iae_between(&traj, a, b));
        let du_std = control_increment_std(
            &traj,
            self.steady_state_from.unwrap_or(0.5 * scenario.horizon),
            scenario.steps_per_sample()?,
        );
        Ok(PointResult {
            traj,
            metrics,
            iae_window,
            du_std,
        })
    }
}

#[derive(Debug, Clone)]
pub struct PointResult {
    pub traj: Trajectory,
    pub metrics: Metrics,
    pub iae_window: Option<f64>,
    pub du_std: f64,
}

#[derive(Debug, Clone)]
pub struct PointOutcome {
    group: usize,
    pub value: f64,
    pub scenario: Scenario,
    /// Diagnostic message when the run failed (e.g. diverged).
    pub outcome: std::result::Result<PointResult, String>,
}

#[derive(Debug, Clone)]
pub struct GroupResult {
    pub sweep: String,
    pub series: String,
    pub points: Vec<PointOutcome>,
}

impl GroupResult {
    fn stem(&self) -> String {
        format!("{}_{}", self.sweep, self.series)
    }

    pub fn summary_csv(&self) -> String {
        let mut out = format!("{SUMMARY_HEADER}\n");
        for p in &self.points {
            let row = match &p.outcome {
                Ok(r) => [
                    p.value,
                    r.metrics.settling_time,
                    r.metrics.overshoot_pct,
                    r.metrics.iae,
                    r.metrics.u_max,
                    r.metrics.steady_state_error,
                    r.iae_window.unwrap_or(f64::NAN),
                    r.du_std,
                ],
                Err(_) => [
                    p.value,
                    f64::NAN,
                    f64::NAN,
                    f64::NAN,
                    f64::NAN,
                    f64::NAN,
                    f64::NAN,
                    f64::NAN,
                ],
            };
            let cells: Vec<String> = row.iter().map(|v| format_sig10(*v)).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    /// Metrics of the successful points, in sweep order.
    pub fn metrics(&self) -> impl Iterator<Item = (f64, &PointResult)> {
        self.points
            .iter()
            .filter_map(|p| p.outcome.as_ref().ok().map(|r| (p.value, r)))
    }
}

#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub id: String,
    pub description: String,
    pub groups: Vec<GroupResult>,
}

impl SuiteResult {
    pub fn group(&self, sweep: &str, series: &str) -> Option<&GroupResult> {
        self.groups
            .iter()
            .find(|g| g.sweep == sweep && g.series == series)
    }

    pub fn failures(&self) -> impl Iterator<Item = (&GroupResult, &PointOutcome, &str)> {
        self.groups.iter().flat_map(|g| {
            g.points
                .iter()
                .filter_map(move |p| p.outcome.as_ref().err().map(|e| (g, p, e.as_str())))
        })
    }

    /// Writes trajectories, summaries and plots below `dir`; returns the
    /// paths written.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let mut put = |name: String, contents: &[u8]| -> Result<()> {
            let path = dir.join(name);
            fs::write(&path, contents)?;
            written.push(path);
            Ok(())
        };
        for g in &self.groups {
            for p in &g.points {
                if let Ok(r) = &p.outcome {
                    put(
                        format!("{}_{}.csv", g.stem(), format_sig10(p.value)),
                        r.traj.to_csv_string().as_bytes(),
                    )?;
                }
            }
            put(
                format!("{}_summary.csv", g.stem()),
                g.summary_csv().as_bytes(),
            )?;
            for (suffix, label) in [("y", "output y"), ("u", "controller output u")] {
                let series: Vec<plot::Series> = g
                    .metrics()
                    .map(|(v, r)| plot::Series {
                        label: format!("{} = {}", g.sweep, format_sig10(v)),
                        x: &r.traj.t,
                        y: if suffix == "y" {
                            &r.traj.y
                        } else {
                            &r.traj.u_raw
                        },
                    })
                    .collect();
                let title = format!("{}: {} ({})", self.id, g.sweep, g.series);
                put(
                    format!("{}_{suffix}.svg", g.stem()),
                    plot::line_chart(&title, "t / s", label, &series).as_bytes(),
                )?;
            }
        }
        let errors: String = self
            .failures()
            .map(|(g, p, e)| format!("{} {}: {e}\n", g.stem(), format_sig10(p.value)))
            .collect();
        if !errors.is_empty() {
            put("errors.txt".into(), errors.as_bytes())?;
        }
        Ok(written)
    }
}

/// Runs a built-in suite and writes its results to `out`.
pub fn run_suite(id: &str, out: &Path) -> Result<SuiteResult> {
    let result = builtin_suite(id)?.run()?;
    result.write(out)?;
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::Order;
    use crate::sim::{AdrcParams, ControllerSpec, PlantSpec};

    fn base() -> Scenario {
        Scenario::step_response(
            PlantSpec::first_order(1.0, 1.0),
            ControllerSpec::AdrcContinuous(AdrcParams::new(Order::First, 1.0, 1.0, 10.0)),
            1.0,
        )
    }

    #[test]
    fn path_resolution() {
        let sweep = Sweep::new(&base(), "plant.k", vec![0.5, 2.0]).unwrap();
        let s = sweep.scenario_for(2.0).unwrap();
        assert_eq!(s.plant, PlantSpec::first_order(2.0, 1.0));
        assert!(Sweep::new(&base(), "plant.gain", vec![1.0]).is_err());
        assert!(Sweep::new(&base(), "plant.k.x", vec![1.0]).is_err());
        assert!(Sweep::new(&base(), "plant.k", vec![]).is_err());
        let sweep = Sweep::new(&base(), "controller.k_eso", vec![5.0]).unwrap();
        match sweep.scenario_for(5.0).unwrap().controller {
            ControllerSpec::AdrcContinuous(p) => assert_eq!(p.k_eso, 5.0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn invalid_values_fail_validation() {
        let sweep = Sweep::new(&base(), "plant.t", vec![1.0]).unwrap();
        assert!(sweep.scenario_for(-1.0).is_err());
    }

    #[test]
    fn suite_runs_and_writes() {
        let text = r#"
schema = 1
id = "tiny"
sweeps = [{ name = "K", parameter_path = "plant.k", values = [0.5, 1.0], series = [
  { label = "adrc" },
  { label = "pi", set = { controller = { kind = "pi", k_p = 3.85, k_i = 3.85 } } },
] }]
[base]
horizon = 2.0
reference = [[0.0, 1.0]]
plant = { kind = "first_order", k = 1.0, t = 1.0 }
controller = { kind = "adrc_continuous", order = 1, b0 = 1.0, t_settle = 1.0, k_eso = 10.0 }
"#;
        let cfg = SuiteConfig::from_toml(text).unwrap();
        let res = cfg.run().unwrap();
        assert_eq!(res.groups.len(), 2);
        let pi = res.group("K", "pi").unwrap();
        assert_eq!(pi.points.len(), 2);
        assert!(pi.points.iter().all(|p| p.outcome.is_ok()));
        let summary = pi.summary_csv();
        assert_eq!(summary.lines().next(), Some(SUMMARY_HEADER));
        assert_eq!(summary.lines().count(), 3);

        let dir = tempfile::tempdir().unwrap();
        let files = res.write(dir.path()).unwrap();
        // two groups x (2 trajectories + summary + 2 plots)
        assert_eq!(files.len(), 10);
        assert!(dir.path().join("K_adrc_0.5.csv").exists());
        assert!(dir.path().join("K_pi_summary.csv").exists());
    }

    #[test]
    fn bad_suite_files() {
        assert!(SuiteConfig::from_toml("schema = 2\nid='x'\nsweeps=[]\n[base]\n").is_err());
        let typo = r#"
schema = 1
id = "x"
sweeps = [{ name = "K", parameter_path = "plant.kk", values = [1.0] }]
[base]
horizon = 1.0
reference = [[0.0, 1.0]]
plant = { kind = "first_order", k = 1.0, t = 1.0 }
controller = { kind = "open_loop" }
"#;
        assert!(matches!(
            SuiteConfig::from_toml(typo),
            Err(AdrcError::Config(_))
        ));
    }
}
