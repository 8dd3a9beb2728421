//! Fixed-step closed-loop simulation.
//!
//! Plant and (for continuous ADRC) observer are integrated together with
//! classical RK4 at `sim_step`. Sampled controllers run every
//! `controller_sample_time` and their output is held in between.

use std::fmt::Write as _;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::controllers::{
    apply_saturation, ContinuousAdrc, DelayLine, DiscreteAdrc, OptimizedAdrc, PiController,
    PidGains, PidT1Controller, SampledController,
};
use crate::design::{design, discretize_design, AdrcDesign, Order};
use crate::error::{AdrcError, Result};
use crate::lti::{Matrix, StateSpaceModel, Vector};

/// States with magnitude above this abort the run.
pub const DIVERGENCE_LIMIT: f64 = 1e9;
pub const DEFAULT_SIM_STEP: f64 = 1e-3;
pub const SCHEMA_VERSION: u32 = 1;

const MAX_STATES: usize = 8;

/// Plant structure. Serialized with a `kind` tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PlantKind {
    /// `K / (T s + 1)`
    FirstOrder { k: f64, t: f64 },
    /// `K / (T^2 s^2 + 2 D T s + 1)`
    SecondOrder { k: f64, d: f64, t: f64 },
    /// `K_I / s`
    Integrator { k_i: f64 },
    /// Base plant preceded by an unmodelled lag `1 / (T_extra s + 1)`.
    WithExtraPole { base: Box<PlantKind>, t_extra: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantSpec {
    #[serde(flatten)]
    pub kind: PlantKind,
    #[serde(default)]
    pub dead_time: f64,
}

impl PlantSpec {
    pub fn new(kind: PlantKind) -> Self {
        Self {
            kind,
            dead_time: 0.0,
        }
    }

    pub fn first_order(k: f64, t: f64) -> Self {
        Self::new(PlantKind::FirstOrder { k, t })
    }

    pub fn second_order(k: f64, d: f64, t: f64) -> Self {
        Self::new(PlantKind::SecondOrder { k, d, t })
    }

    pub fn integrator(k_i: f64) -> Self {
        Self::new(PlantKind::Integrator { k_i })
    }

    pub fn with_extra_pole(self, t_extra: f64) -> Self {
        Self {
            kind: PlantKind::WithExtraPole {
                base: Box::new(self.kind),
                t_extra,
            },
            dead_time: self.dead_time,
        }
    }

    pub fn with_dead_time(mut self, dead_time: f64) -> Self {
        self.dead_time = dead_time;
        self
    }
}

impl PlantKind {
    fn validate(&self, depth: usize) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(AdrcError::invalid(format!(
                    "plant {name} must be positive, got {v}"
                )))
            }
        };
        let finite = |name: &str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(AdrcError::invalid(format!("plant {name} must be finite")))
            }
        };
        match self {
            PlantKind::FirstOrder { k, t } => {
                finite("gain", *k)?;
                positive("time constant", *t)
            }
            PlantKind::SecondOrder { k, d, t } => {
                finite("gain", *k)?;
                positive("damping", *d)?;
                positive("time constant", *t)
            }
            PlantKind::Integrator { k_i } => finite("integrator gain", *k_i),
            PlantKind::WithExtraPole { base, t_extra } => {
                if depth > 0 || matches!(**base, PlantKind::WithExtraPole { .. }) {
                    return Err(AdrcError::invalid("extra poles cannot be nested"));
                }
                positive("extra time constant", *t_extra)?;
                base.validate(depth + 1)
            }
        }
    }

    /// Fastest decay rate among the plant poles, 1/s.
    fn fastest_rate(&self) -> f64 {
        match self {
            PlantKind::FirstOrder { t, .. } => 1.0 / t,
            PlantKind::SecondOrder { d, t, .. } => {
                if *d > 1.0 {
                    (d + (d * d - 1.0).sqrt()) / t
                } else {
                    1.0 / t
                }
            }
            PlantKind::Integrator { .. } => 0.0,
            PlantKind::WithExtraPole { base, t_extra } => base.fastest_rate().max(1.0 / t_extra),
        }
    }

    fn realize(&self) -> (Matrix, Matrix, Matrix) {
        match self {
            PlantKind::FirstOrder { k, t } => (
                Matrix::from_rows(&[&[-1.0 / t]]),
                Matrix::from_rows(&[&[1.0]]),
                Matrix::from_rows(&[&[k / t]]),
            ),
            PlantKind::SecondOrder { k, d, t } => (
                Matrix::from_rows(&[&[0.0, 1.0], &[-1.0 / (t * t), -2.0 * d / t]]),
                Matrix::from_rows(&[&[0.0], &[1.0]]),
                Matrix::from_rows(&[&[k / (t * t), 0.0]]),
            ),
            PlantKind::Integrator { k_i } => (
                Matrix::zeros(1, 1),
                Matrix::from_rows(&[&[1.0]]),
                Matrix::from_rows(&[&[*k_i]]),
            ),
            PlantKind::WithExtraPole { base, t_extra } => {
                // lag state is last; it filters the input before the base plant
                let (ab, bb, cb) = base.realize();
                let n = ab.rows();
                let mut a = Matrix::zeros(n + 1, n + 1);
                let mut b = Matrix::zeros(n + 1, 1);
                let mut c = Matrix::zeros(1, n + 1);
                for i in 0..n {
                    for j in 0..n {
                        a[(i, j)] = ab[(i, j)];
                    }
                    a[(i, n)] = bb[(i, 0)];
                    c[(0, i)] = cb[(0, i)];
                }
                a[(n, n)] = -1.0 / t_extra;
                b[(n, 0)] = 1.0 / t_extra;
                (a, b, c)
            }
        }
    }
}

/// Continuous model in controllable canonical form plus the dead time
/// expressed in whole simulation steps.
pub fn build_plant(spec: &PlantSpec, sim_step: f64) -> Result<(StateSpaceModel, usize)> {
    spec.kind.validate(0)?;
    if !(spec.dead_time >= 0.0 && spec.dead_time.is_finite()) {
        return Err(AdrcError::invalid("dead time must be non-negative"));
    }
    if !(sim_step > 0.0) {
        return Err(AdrcError::invalid("simulation step must be positive"));
    }
    let (a, b, c) = spec.kind.realize();
    let model = StateSpaceModel::continuous(a, b, c, Matrix::zeros(1, 1))?;
    Ok((model, (spec.dead_time / sim_step).round() as usize))
}

/// ADRC parameters shared by the continuous and sampled variants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdrcParams {
    pub order: Order,
    pub b0: f64,
    pub t_settle: f64,
    pub k_eso: f64,
    /// Delay applied to the observer's copy of the input (continuous only).
    #[serde(default)]
    pub eso_dead_time: f64,
}

impl AdrcParams {
    pub fn new(order: Order, b0: f64, t_settle: f64, k_eso: f64) -> Self {
        Self {
            order,
            b0,
            t_settle,
            k_eso,
            eso_dead_time: 0.0,
        }
    }

    pub fn design(&self) -> Result<AdrcDesign> {
        design(self.order, self.b0, self.t_settle, self.k_eso)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ControllerSpec {
    AdrcContinuous(AdrcParams),
    AdrcDiscrete(AdrcParams),
    AdrcOptimized(AdrcParams),
    Pi {
        k_p: f64,
        k_i: f64,
    },
    Pid {
        k_i: f64,
        t_z1: f64,
        t_z2: f64,
        t_1: f64,
    },
    /// No feedback: the reference schedule is applied as the plant input.
    OpenLoop,
}

/// Piecewise-constant signal: each `[time, value]` entry holds until the next.
/// The value before the first entry is zero.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Schedule(pub Vec<[f64; 2]>);

impl Schedule {
    pub fn constant(v: f64) -> Self {
        Schedule(vec![[0.0, v]])
    }

    pub fn step(at: f64, v: f64) -> Self {
        Schedule(vec![[at, v]])
    }

    /// Pulse of height `v` on `[from, to)`.
    pub fn pulse(from: f64, to: f64, v: f64) -> Self {
        Schedule(vec![[from, v], [to, 0.0]])
    }

    pub fn value_at(&self, t: f64) -> f64 {
        self.0
            .iter()
            .take_while(|[at, _]| *at <= t)
            .last()
            .map_or(0.0, |[_, v]| *v)
    }

    fn validate(&self, name: &str) -> Result<()> {
        if self.0.iter().any(|[t, v]| !t.is_finite() || !v.is_finite()) {
            return Err(AdrcError::invalid(format!(
                "{name} schedule has non-finite entries"
            )));
        }
        if self.0.windows(2).any(|w| w[1][0] < w[0][0]) {
            return Err(AdrcError::invalid(format!(
                "{name} schedule times must be non-decreasing"
            )));
        }
        Ok(())
    }
}

/// Schedule resolved to simulation step indices.
struct IndexedSchedule(Vec<(usize, f64)>);

impl IndexedSchedule {
    fn new(s: &Schedule, h: f64) -> Self {
        IndexedSchedule(
            s.0.iter()
                .map(|[t, v]| ((t / h).round().max(0.0) as usize, *v))
                .collect(),
        )
    }

    fn at(&self, k: usize) -> f64 {
        self.0
            .iter()
            .take_while(|(i, _)| *i <= k)
            .last()
            .map_or(0.0, |(_, v)| *v)
    }
}

/// One closed-loop experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default = "schema_version")]
    pub schema: u32,
    pub plant: PlantSpec,
    pub controller: ControllerSpec,
    pub reference: Schedule,
    #[serde(default)]
    pub input_disturbance: Schedule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub saturation_limit: Option<f64>,
    #[serde(default)]
    pub noise_variance: f64,
    #[serde(default)]
    pub noise_seed: u64,
    #[serde(default = "default_sim_step")]
    pub sim_step: f64,
    /// Sample time of sampled controllers; defaults to `sim_step`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub controller_sample_time: Option<f64>,
    pub horizon: f64,
}

fn schema_version() -> u32 {
    SCHEMA_VERSION
}

fn default_sim_step() -> f64 {
    DEFAULT_SIM_STEP
}

impl Scenario {
    /// Unit step at `t = 0`, no disturbance, no noise, default step.
    pub fn step_response(plant: PlantSpec, controller: ControllerSpec, horizon: f64) -> Self {
        Scenario {
            schema: SCHEMA_VERSION,
            plant,
            controller,
            reference: Schedule::constant(1.0),
            input_disturbance: Schedule::default(),
            saturation_limit: None,
            noise_variance: 0.0,
            noise_seed: 0,
            sim_step: DEFAULT_SIM_STEP,
            controller_sample_time: None,
            horizon,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text).map_err(|e| AdrcError::config(e.to_string()))?;
        if s.schema != SCHEMA_VERSION {
            return Err(AdrcError::config(format!(
                "unsupported schema {}",
                s.schema
            )));
        }
        Ok(s)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| AdrcError::config(e.to_string()))
    }

    pub fn sample_time(&self) -> f64 {
        self.controller_sample_time.unwrap_or(self.sim_step)
    }

    /// Number of simulation steps in one controller sample.
    pub fn steps_per_sample(&self) -> Result<usize> {
        let ratio = self.sample_time() / self.sim_step;
        let n = ratio.round();
        if n < 1.0 || (ratio - n).abs() > 1e-9 * ratio.max(1.0) {
            return Err(AdrcError::invalid(
                "controller sample time must be an integer multiple of the simulation step",
            ));
        }
        Ok(n as usize)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sim_step > 0.0 && self.sim_step.is_finite()) {
            return Err(AdrcError::invalid("sim_step must be positive"));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(AdrcError::invalid("horizon must be positive"));
        }
        if let Some(limit) = self.saturation_limit {
            if !(limit > 0.0) {
                return Err(AdrcError::invalid("saturation limit must be positive"));
            }
        }
        if !(self.noise_variance >= 0.0 && self.noise_variance.is_finite()) {
            return Err(AdrcError::invalid("noise variance must be non-negative"));
        }
        self.reference.validate("reference")?;
        self.input_disturbance.validate("disturbance")?;
        self.steps_per_sample()?;
        build_plant(&self.plant, self.sim_step)?;
        Ok(())
    }
}

/// Seeded Gaussian measurement noise.
pub struct NoiseSource {
    rng: ChaCha8Rng,
    normal: Option<Normal<f64>>,
}

impl NoiseSource {
    pub fn new(seed: u64, variance: f64) -> Self {
        let normal =
            (variance > 0.0).then(|| Normal::new(0.0, variance.sqrt()).expect("finite std dev"));
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            normal,
        }
    }

    pub fn sample(&mut self) -> f64 {
        match &self.normal {
            Some(n) => n.sample(&mut self.rng),
            None => 0.0,
        }
    }
}

/// `n` samples of zero-mean Gaussian noise with the given variance.
pub fn gaussian_noise(seed: u64, variance: f64, n: usize) -> Vec<f64> {
    let mut src = NoiseSource::new(seed, variance);
    (0..n).map(|_| src.sample()).collect()
}

/// Recorded closed-loop signals, one row per simulation step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub r: Vec<f64>,
    /// Measured output (with noise).
    pub y: Vec<f64>,
    pub y_clean: Vec<f64>,
    pub u_raw: Vec<f64>,
    pub u_lim: Vec<f64>,
    /// One column per observer state.
    pub x_hat: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Index of the first sample at or after `t`.
    pub fn index_at(&self, t: f64) -> usize {
        self.t.partition_point(|&ti| ti < t - 1e-9)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let mut header = String::from("t,r,y,y_clean,u_raw,u_lim");
        for i in 0..self.x_hat.len() {
            let _ = write!(header, ",xhat{}", i + 1);
        }
        header.push('\n');
        out.write_all(header.as_bytes())?;
        let mut line = String::new();
        for k in 0..self.len() {
            line.clear();
            let row = [
                self.t[k],
                self.r[k],
                self.y[k],
                self.y_clean[k],
                self.u_raw[k],
                self.u_lim[k],
            ];
            for (i, v) in row
                .iter()
                .chain(self.x_hat.iter().map(|c| &c[k]))
                .enumerate()
            {
                if i > 0 {
                    line.push(',');
                }
                line.push_str(&format_sig10(*v));
            }
            line.push('\n');
            out.write_all(line.as_bytes())?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii output")
    }
}

/// Formats like C's `%.10g`: ten significant digits, trailing zeros removed.
pub fn format_sig10(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    let sci = format!("{v:.9e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..10).contains(&exp) {
        let decimals = (9 - exp).max(0) as usize;
        trim_zeros(format!("{v:.decimals$}"))
    } else {
        format!(
            "{}e{}{:02}",
            trim_zeros(mantissa.to_string()),
            if exp < 0 { '-' } else { '+' },
            exp.abs()
        )
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

enum LoopController {
    Continuous(ContinuousAdrc),
    Sampled {
        ctrl: Box<dyn SampledController>,
        every: usize,
    },
    OpenLoop,
}

fn make_controller(s: &Scenario, r0: f64) -> Result<LoopController> {
    let ts = s.sample_time();
    let every = s.steps_per_sample()?;
    Ok(match &s.controller {
        ControllerSpec::AdrcContinuous(p) => LoopController::Continuous(ContinuousAdrc::new(
            p.design()?,
            p.eso_dead_time,
            s.sim_step,
        )),
        ControllerSpec::AdrcDiscrete(p) => {
            let d = p.design()?;
            let g = discretize_design(&d, ts)?;
            LoopController::Sampled {
                ctrl: Box::new(DiscreteAdrc::new(d, &g)?),
                every,
            }
        }
        ControllerSpec::AdrcOptimized(p) => {
            let d = p.design()?;
            let g = discretize_design(&d, ts)?;
            LoopController::Sampled {
                ctrl: Box::new(OptimizedAdrc::new(&d, &g, r0)?),
                every,
            }
        }
        ControllerSpec::Pi { k_p, k_i } => LoopController::Sampled {
            ctrl: Box::new(PiController::new(&PidGains::pi(*k_p, *k_i), ts)?),
            every,
        },
        ControllerSpec::Pid {
            k_i,
            t_z1,
            t_z2,
            t_1,
        } => LoopController::Sampled {
            ctrl: Box::new(PidT1Controller::new(
                &PidGains::pidt1(*k_i, *t_z1, *t_z2, *t_1),
                ts,
            )?),
            every,
        },
        ControllerSpec::OpenLoop => LoopController::OpenLoop,
    })
}

/// Classical fourth-order Runge-Kutta step on the first `n` entries of `x`.
fn rk4_step(
    x: &mut [f64; MAX_STATES],
    n: usize,
    h: f64,
    f: &impl Fn(&[f64; MAX_STATES], &mut [f64; MAX_STATES]),
) {
    let mut k1 = [0.0; MAX_STATES];
    let mut k2 = [0.0; MAX_STATES];
    let mut k3 = [0.0; MAX_STATES];
    let mut k4 = [0.0; MAX_STATES];
    let mut tmp = *x;
    f(x, &mut k1);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * h * k1[i];
    }
    f(&tmp, &mut k2);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * h * k2[i];
    }
    f(&tmp, &mut k3);
    for i in 0..n {
        tmp[i] = x[i] + h * k3[i];
    }
    f(&tmp, &mut k4);
    for i in 0..n {
        x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

/// Runs one scenario to its horizon. Identical scenarios give bit-identical
/// trajectories.
pub fn run_closed_loop(s: &Scenario) -> Result<Trajectory> {
    s.validate()?;
    let h = s.sim_step;
    let steps = (s.horizon / h).round() as usize;
    let (plant, plant_delay_steps) = build_plant(&s.plant, h)?;
    let np = plant.states();
    let a = plant.a;
    let b = plant.b.col(0);
    let c = plant.c.row_vec(0);

    let reference = IndexedSchedule::new(&s.reference, h);
    let disturbance = IndexedSchedule::new(&s.input_disturbance, h);
    let mut noise = NoiseSource::new(s.noise_seed, s.noise_variance);
    let mut controller = make_controller(s, reference.at(0))?;
    let mut plant_delay = DelayLine::new(plant_delay_steps);
    let limit = s.saturation_limit;
    let saturate = |u: f64| limit.map_or(u, |l| apply_saturation(u, l));

    let n_obs = match &controller {
        LoopController::Continuous(c) => c.observer_len(),
        _ => 0,
    };
    let n = np + n_obs;
    debug_assert!(n <= MAX_STATES);
    let substeps = if s.plant.kind.fastest_rate() * h > 0.1 {
        10
    } else {
        1
    };
    let hs = h / substeps as f64;

    let mut x = [0.0; MAX_STATES];
    let mut traj = Trajectory {
        x_hat: Vec::new(),
        ..Default::default()
    };
    for v in [
        &mut traj.t,
        &mut traj.r,
        &mut traj.y,
        &mut traj.y_clean,
        &mut traj.u_raw,
        &mut traj.u_lim,
    ] {
        v.reserve(steps + 1);
    }

    // held values for sampled controllers
    let (mut held_raw, mut held_lim, mut held_y) = (0.0, 0.0, 0.0);

    for k in 0..=steps {
        let t = k as f64 * h;
        let r_k = reference.at(k);
        let d_k = disturbance.at(k);
        let y_clean = (0..np).map(|i| c[i] * x[i]).sum::<f64>();

        let (u_raw, u_lim, y_meas, noise_k, estimates) = match &mut controller {
            LoopController::Continuous(ctrl) => {
                let nk = noise.sample();
                let x_hat = Vector::from_slice(&x[np..n]);
                let u = ctrl.output(&x_hat, r_k);
                (u, saturate(u), y_clean + nk, nk, x_hat)
            }
            LoopController::Sampled { ctrl, every } => {
                if k % *every == 0 {
                    let nk = noise.sample();
                    held_y = y_clean + nk;
                    held_raw = ctrl.step(held_y, r_k, reference.at(k + *every));
                    held_lim = saturate(held_raw);
                    ctrl.commit(held_lim);
                }
                (held_raw, held_lim, held_y, 0.0, ctrl.estimates())
            }
            LoopController::OpenLoop => (r_k, saturate(r_k), y_clean, 0.0, Vector::zeros(0)),
        };

        traj.t.push(t);
        traj.r.push(r_k);
        traj.y.push(y_meas);
        traj.y_clean.push(y_clean);
        traj.u_raw.push(u_raw);
        traj.u_lim.push(u_lim);
        if traj.x_hat.is_empty() && !estimates.is_empty() {
            traj.x_hat = vec![Vec::with_capacity(steps + 1); estimates.len()];
        }
        for (col, v) in traj.x_hat.iter_mut().zip(estimates.as_slice()) {
            col.push(*v);
        }

        if !u_raw.is_finite() {
            return Err(AdrcError::Unstable {
                time: t,
                reason: "controller output is not finite".into(),
            });
        }
        if k == steps {
            break;
        }

        let delayed_plant_input = (plant_delay_steps > 0).then(|| plant_delay.push(u_lim));
        match &mut controller {
            LoopController::Continuous(ctrl) => {
                let delayed_eso_input =
                    (ctrl.eso_delay_steps() > 0).then(|| ctrl.delay_observer_input(u_lim));
                let ctrl = &*ctrl;
                let f = |z: &[f64; MAX_STATES], dz: &mut [f64; MAX_STATES]| {
                    let y_c: f64 = (0..np).map(|i| c[i] * z[i]).sum();
                    let x_hat = Vector::from_slice(&z[np..n]);
                    let u = saturate(ctrl.output(&x_hat, r_k));
                    let input = delayed_plant_input.unwrap_or(u) + d_k;
                    plant_rhs(&a, &b, z, input, np, dz);
                    let dx = ctrl.derivative(&x_hat, delayed_eso_input.unwrap_or(u), y_c + noise_k);
                    dz[np..n].copy_from_slice(dx.as_slice());
                };
                for _ in 0..substeps {
                    rk4_step(&mut x, n, hs, &f);
                }
            }
            _ => {
                let input = delayed_plant_input.unwrap_or(u_lim) + d_k;
                let f = |z: &[f64; MAX_STATES], dz: &mut [f64; MAX_STATES]| {
                    plant_rhs(&a, &b, z, input, np, dz)
                };
                for _ in 0..substeps {
                    rk4_step(&mut x, n, hs, &f);
                }
            }
        }

        if let Some(bad) = x[..n]
            .iter()
            .find(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT)
        {
            return Err(AdrcError::Unstable {
                time: t + h,
                reason: format!("state magnitude {bad:e} exceeds limit"),
            });
        }
    }
    Ok(traj)
}

fn plant_rhs(
    a: &Matrix,
    b: &Vector,
    z: &[f64; MAX_STATES],
    input: f64,
    np: usize,
    dz: &mut [f64; MAX_STATES],
) {
    for i in 0..np {
        dz[i] = (0..np).map(|j| a[(i, j)] * z[j]).sum::<f64>() + b[i] * input;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn adrc1() -> ControllerSpec {
        ControllerSpec::AdrcContinuous(AdrcParams::new(Order::First, 1.0, 1.0, 10.0))
    }

    #[test]
    fn plant_realizations() {
        let (m, d) = build_plant(&PlantSpec::first_order(1.0, 1.0), 1e-3).unwrap();
        assert_eq!(m.states(), 1);
        assert_eq!(d, 0);
        assert_eq!(m.a[(0, 0)], -1.0);
        // DC gain -C A^-1 B
        let dc = -(m.c * m.a.inverse().unwrap() * m.b)[(0, 0)];
        assert_abs_diff_eq!(dc, 1.0);

        let (m, _) = build_plant(&PlantSpec::second_order(1.0, 1.0, 1.0), 1e-3).unwrap();
        let p = crate::lti::characteristic_polynomial(&m.a).unwrap();
        assert!(crate::lti::poly_roots_all_equal(&p, -1.0, 1e-12));
        let dc = -(m.c * m.a.inverse().unwrap() * m.b)[(0, 0)];
        assert_abs_diff_eq!(dc, 1.0, epsilon = 1e-12);

        let (m, _) = build_plant(&PlantSpec::integrator(2.0), 1e-3).unwrap();
        assert_eq!(m.a[(0, 0)], 0.0);
        assert_eq!((m.c * m.b)[(0, 0)], 2.0);

        let (m, d) = build_plant(
            &PlantSpec::first_order(2.0, 1.0)
                .with_extra_pole(0.1)
                .with_dead_time(0.05),
            1e-3,
        )
        .unwrap();
        assert_eq!(m.states(), 2);
        assert_eq!(d, 50);
        let dc = -(m.c * m.a.inverse().unwrap() * m.b)[(0, 0)];
        assert_abs_diff_eq!(dc, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn plant_rejects_invalid() {
        assert!(build_plant(&PlantSpec::first_order(1.0, 0.0), 1e-3).is_err());
        assert!(build_plant(&PlantSpec::second_order(1.0, 1.0, -1.0), 1e-3).is_err());
        let nested = PlantSpec::first_order(1.0, 1.0)
            .with_extra_pole(0.1)
            .with_extra_pole(0.1);
        assert!(build_plant(&nested, 1e-3).is_err());
        assert!(build_plant(&PlantSpec::first_order(1.0, 1.0).with_dead_time(-0.1), 1e-3).is_err());
    }

    #[test]
    fn zero_reference_stays_at_rest() {
        let mut s = Scenario::step_response(PlantSpec::first_order(1.0, 1.0), adrc1(), 2.0);
        s.reference = Schedule::default();
        let tr = run_closed_loop(&s).unwrap();
        assert!(tr.y.iter().chain(&tr.u_raw).all(|v| *v == 0.0));
    }

    #[test]
    fn open_loop_first_order_matches_analytic() {
        let s = Scenario::step_response(
            PlantSpec::first_order(2.0, 0.5),
            ControllerSpec::OpenLoop,
            3.0,
        );
        let tr = run_closed_loop(&s).unwrap();
        let err =
            tr.t.iter()
                .zip(&tr.y_clean)
                .map(|(t, y)| (y - 2.0 * (1.0 - (-2.0 * t).exp())).abs())
                .fold(0.0, f64::max);
        assert!(err < 1e-8, "max error {err}");
    }

    #[test]
    fn nominal_first_order_adrc_settles() {
        let s = Scenario::step_response(PlantSpec::first_order(1.0, 1.0), adrc1(), 3.0);
        let tr = run_closed_loop(&s).unwrap();
        let y1 = tr.y[tr.index_at(1.0)];
        assert!((0.97..=1.0).contains(&y1), "y(1) = {y1}");
        assert!(
            tr.y.windows(2).all(|w| w[1] >= w[0] - 1e-12),
            "response is not monotone"
        );
    }

    #[test]
    fn saturation_is_respected() {
        let mut s = Scenario::step_response(PlantSpec::first_order(0.1, 1.0), adrc1(), 5.0);
        s.saturation_limit = Some(5.0);
        let tr = run_closed_loop(&s).unwrap();
        assert!(tr.u_lim.iter().all(|u| u.abs() <= 5.0));
        assert!(tr.u_raw.iter().any(|u| u.abs() > 5.0));
    }

    #[test]
    fn sampled_controller_needs_integer_ratio() {
        let mut s = Scenario::step_response(
            PlantSpec::first_order(1.0, 1.0),
            ControllerSpec::AdrcDiscrete(AdrcParams::new(Order::First, 1.0, 1.0, 5.0)),
            1.0,
        );
        s.controller_sample_time = Some(0.0105);
        assert!(matches!(
            run_closed_loop(&s),
            Err(AdrcError::InvalidInput(_))
        ));
        s.controller_sample_time = Some(0.01);
        assert!(run_closed_loop(&s).is_ok());
    }

    #[test]
    fn divergence_is_reported_with_time() {
        // wrong-sign b0 drives the loop unstable
        let s = Scenario::step_response(
            PlantSpec::first_order(1.0, 1.0),
            ControllerSpec::AdrcContinuous(AdrcParams::new(Order::First, -1.0, 1.0, 10.0)),
            60.0,
        );
        match run_closed_loop(&s) {
            Err(AdrcError::Unstable { time, .. }) => assert!(time > 0.0 && time < 60.0),
            other => panic!("expected divergence, got {:?}", other.map(|t| t.len())),
        }
    }

    #[test]
    fn noise_statistics_and_determinism() {
        assert!(gaussian_noise(1, 0.0, 100).iter().all(|v| *v == 0.0));
        assert_eq!(
            gaussian_noise(42, 1e-4, 1000),
            gaussian_noise(42, 1e-4, 1000)
        );
        assert_ne!(gaussian_noise(42, 1e-4, 10), gaussian_noise(43, 1e-4, 10));
        let n = 1_000_000;
        let v = gaussian_noise(7, 1e-4, n);
        let mean = v.iter().sum::<f64>() / n as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        // standard error of the mean is 1e-5
        assert!(mean.abs() < 5e-5, "mean {mean}");
        assert!((0.000099..=0.000101).contains(&var), "variance {var}");
    }

    #[test]
    fn schedule_lookup() {
        let s = Schedule(vec![[1.0, 2.0], [3.0, -1.0]]);
        assert_eq!(s.value_at(0.5), 0.0);
        assert_eq!(s.value_at(1.0), 2.0);
        assert_eq!(s.value_at(2.9), 2.0);
        assert_eq!(s.value_at(10.0), -1.0);
        assert_eq!(Schedule::pulse(2.0, 4.0, 1.0).value_at(3.0), 1.0);
        assert_eq!(Schedule::pulse(2.0, 4.0, 1.0).value_at(4.0), 0.0);
    }

    #[test]
    fn sig10_formatting() {
        assert_eq!(format_sig10(0.0), "0");
        assert_eq!(format_sig10(1.0), "1");
        assert_eq!(format_sig10(0.001), "0.001");
        assert_eq!(format_sig10(1.0 / 3.0), "0.3333333333");
        assert_eq!(format_sig10(-2.0 / 3.0 * 1e3), "-666.6666667");
        assert_eq!(format_sig10(1.234e-7), "1.234e-07");
        assert_eq!(format_sig10(6.02214076e23), "6.02214076e+23");
        assert_eq!(format_sig10(12345678901.0), "1.23456789e+10");
    }

    #[test]
    fn csv_layout() {
        let s = Scenario::step_response(PlantSpec::first_order(1.0, 1.0), adrc1(), 0.002);
        let csv = run_closed_loop(&s).unwrap().to_csv_string();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("t,r,y,y_clean,u_raw,u_lim,xhat1,xhat2"));
        assert_eq!(lines.next(), Some("0,1,0,0,4,4,0,0"));
        assert_eq!(csv.lines().count(), 4);
        assert!(!csv.contains('\r'));
    }

    #[test]
    fn scenario_toml_roundtrip() {
        let mut s = Scenario::step_response(
            PlantSpec::second_order(1.0, 1.0, 1.0)
                .with_extra_pole(0.01)
                .with_dead_time(0.1),
            ControllerSpec::AdrcContinuous(AdrcParams::new(Order::Second, 1.0, 5.0, 10.0)),
            10.0,
        );
        s.saturation_limit = Some(3.0);
        s.input_disturbance = Schedule::pulse(15.0, 25.0, 0.5);
        let text = s.to_toml().unwrap();
        assert_eq!(Scenario::from_toml(&text).unwrap(), s);
    }
}
