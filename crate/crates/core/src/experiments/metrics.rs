use crate::error::{AdrcError, Result};
use crate::sim::Trajectory;

/// Half-width of the settling band relative to the step size.
pub const SETTLING_BAND: f64 = 0.02;

/// Step-response figures of merit, all computed on the noise-free output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    /// Time from the step until the output last enters the 2% band.
    /// `f64::INFINITY` when the band is not held at the end of the window.
    pub settling_time: f64,
    pub overshoot_pct: f64,
    /// Integral of `|r - y|` from the step to the end of the window.
    pub iae: f64,
    /// `r - y` at the end of the window.
    pub steady_state_error: f64,
    /// Largest applied `|u|`.
    pub u_max: f64,
}

/// Metrics over the whole trajectory.
pub fn compute_metrics(traj: &Trajectory, step_time: f64, step_size: f64) -> Result<Metrics> {
    let end = traj.t.last().copied().unwrap_or(0.0);
    compute_metrics_until(traj, step_time, step_size, end)
}

/// Metrics over `[step_time, until]`, e.g. to stop before a disturbance.
pub fn compute_metrics_until(
    traj: &Trajectory,
    step_time: f64,
    step_size: f64,
    until: f64,
) -> Result<Metrics> {
    if traj.len() < 2 {
        return Err(AdrcError::invalid("trajectory is too short"));
    }
    if step_size == 0.0 || !step_size.is_finite() {
        return Err(AdrcError::invalid("step size must be non-zero"));
    }
    let i0 = traj.index_at(step_time);
    let iend = traj.index_at(until).min(traj.len() - 1);
    if i0 >= iend {
        return Err(AdrcError::invalid(format!(
            "no samples between step at {step_time} and {until}"
        )));
    }
    let before = if i0 == 0 { 0.0 } else { traj.r[i0 - 1] };
    if traj.r[i0] == before {
        return Err(AdrcError::invalid(format!(
            "no reference step found at t = {step_time}"
        )));
    }

    let r_final = traj.r[iend];
    let y = &traj.y_clean;
    let band = SETTLING_BAND * step_size.abs();
    let err = |i: usize| (y[i] - r_final).abs();

    let settling_time = match (i0..=iend).rev().find(|&i| err(i) > band) {
        None => 0.0,
        Some(i) if i == iend => f64::INFINITY,
        Some(i) => {
            // interpolate the band crossing between samples i and i + 1
            let (e0, e1) = (err(i), err(i + 1));
            let frac = if e0 > e1 {
                (e0 - band) / (e0 - e1)
            } else {
                1.0
            };
            traj.t[i] + frac * (traj.t[i + 1] - traj.t[i]) - step_time
        }
    };

    let sign = step_size.signum();
    let peak = (i0..=iend)
        .map(|i| sign * (y[i] - r_final))
        .fold(f64::NEG_INFINITY, f64::max);
    let overshoot_pct = peak.max(0.0) / step_size.abs() * 100.0;

    Ok(Metrics {
        settling_time,
        overshoot_pct,
        iae: iae_between(traj, traj.t[i0], traj.t[iend]),
        steady_state_error: r_final - y[iend],
        u_max: traj.u_lim.iter().fold(0.0, |m, u| m.max(u.abs())),
    })
}

/// Trapezoidal integral of `|r - y_clean|` over `[from, to]`.
pub fn iae_between(traj: &Trajectory, from: f64, to: f64) -> f64 {
    let i0 = traj.index_at(from);
    let i1 = traj.index_at(to).min(traj.len().saturating_sub(1));
    let e = |i: usize| (traj.r[i] - traj.y_clean[i]).abs();
    (i0..i1)
        .map(|i| 0.5 * (e(i) + e(i + 1)) * (traj.t[i + 1] - traj.t[i]))
        .sum()
}

/// Sample standard deviation of the controller increments `u(k) - u(k-1)`
/// from `from` onwards, taken every `stride` rows (one controller sample).
pub fn control_increment_std(traj: &Trajectory, from: f64, stride: usize) -> f64 {
    let u: Vec<f64> = traj.u_lim[traj.index_at(from)..]
        .iter()
        .step_by(stride.max(1))
        .copied()
        .collect();
    let du: Vec<f64> = u.windows(2).map(|w| w[1] - w[0]).collect();
    if du.len() < 2 {
        return 0.0;
    }
    let mean = du.iter().sum::<f64>() / du.len() as f64;
    (du.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (du.len() - 1) as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn synthetic(h: f64, horizon: f64, y: impl Fn(f64) -> f64) -> Trajectory {
        let n = (horizon / h).round() as usize;
        let t: Vec<f64> = (0..=n).map(|k| k as f64 * h).collect();
        let yv: Vec<f64> = t.iter().map(|&t| y(t)).collect();
        Trajectory {
            r: vec![1.0; t.len()],
            y: yv.clone(),
            y_clean: yv,
            u_raw: vec![0.5; t.len()],
            u_lim: vec![0.5; t.len()],
            x_hat: Vec::new(),
            t,
        }
    }

    #[test]
    fn first_order_settling_matches_closed_form() {
        let tr = synthetic(1e-3, 3.0, |t| 1.0 - (-4.0 * t).exp());
        let m = compute_metrics(&tr, 0.0, 1.0).unwrap();
        assert_abs_diff_eq!(m.settling_time, 50f64.ln() / 4.0, epsilon = 1e-6);
        assert_eq!(m.overshoot_pct, 0.0);
        // integral of exp(-4t) over [0, 3]
        assert_abs_diff_eq!(m.iae, (1.0 - (-12f64).exp()) / 4.0, epsilon = 1e-6);
        assert_eq!(m.u_max, 0.5);
    }

    #[test]
    fn perfect_tracking() {
        let tr = synthetic(1e-2, 1.0, |_| 1.0);
        let mut tr2 = tr.clone();
        // step at 0.5 from zero
        for i in 0..50 {
            tr2.r[i] = 0.0;
            tr2.y_clean[i] = 0.0;
        }
        for tr in [tr, tr2] {
            let step = if tr.r[0] == 0.0 { 0.5 } else { 0.0 };
            let m = compute_metrics(&tr, step, 1.0).unwrap();
            assert_eq!(m.settling_time, 0.0);
            assert_eq!(m.iae, 0.0);
            assert_eq!(m.overshoot_pct, 0.0);
            assert_eq!(m.steady_state_error, 0.0);
        }
    }

    #[test]
    fn overshoot_and_unsettled() {
        let tr = synthetic(1e-3, 5.0, |t| 1.0 - (-t).exp() * (3.0 * t).cos());
        let m = compute_metrics(&tr, 0.0, 1.0).unwrap();
        assert!(m.overshoot_pct > 30.0);
        let ramp = synthetic(1e-3, 1.0, |t| t * 0.5);
        assert_eq!(
            compute_metrics(&ramp, 0.0, 1.0).unwrap().settling_time,
            f64::INFINITY
        );
    }

    #[test]
    fn missing_step_is_an_error() {
        let tr = synthetic(1e-2, 1.0, |_| 1.0);
        assert!(compute_metrics(&tr, 0.5, 1.0).is_err());
        assert!(compute_metrics(&tr, 0.0, 0.0).is_err());
    }

    #[test]
    fn increment_std() {
        let mut tr = synthetic(1e-2, 1.0, |_| 1.0);
        assert_eq!(control_increment_std(&tr, 0.0, 1), 0.0);
        for (i, u) in tr.u_lim.iter_mut().enumerate() {
            *u = if (i / 5) % 2 == 0 { 1.0 } else { -1.0 };
        }
        // increments alternate between +2 and -2 when sampled every 5 rows
        let s = control_increment_std(&tr, 0.0, 5);
        assert!((s - 2.0 * (20.0 / 19.0f64).sqrt()).abs() < 1e-12, "{s}");
    }
}
