use adrc_core::controllers::{build_transformed, control_law};
use adrc_core::design::{map_pole_to_z, DiscreteEso};
use adrc_core::lti::{characteristic_polynomial, zoh_discretize};
use adrc_core::{
    design, discretize_design, run_closed_loop, AdrcParams, ControllerSpec, DiscreteAdrc, Matrix,
    OptimizedAdrc, Order, PlantSpec, SampledController, Scenario, Schedule, Trajectory, Vector,
};
use proptest::prelude::*;

fn order() -> impl Strategy<Value = Order> {
    prop_oneof![Just(Order::First), Just(Order::Second)]
}

fn square(n: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-10.0..10.0f64, n * n).prop_map(move |v| {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = v[i * n + j];
            }
        }
        m
    })
}

/// Laplace expansion along the first row.
fn cofactor_det(m: &[Vec<f64>]) -> f64 {
    if m.len() == 1 {
        return m[0][0];
    }
    (0..m.len())
        .map(|j| {
            let minor: Vec<Vec<f64>> = m[1..]
                .iter()
                .map(|row| {
                    row.iter()
                        .enumerate()
                        .filter(|(c, _)| *c != j)
                        .map(|(_, v)| *v)
                        .collect()
                })
                .collect();
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            sign * m[0][j] * cofactor_det(&minor)
        })
        .sum()
}

fn shifted(m: &Matrix, s: f64) -> Vec<Vec<f64>> {
    (0..m.rows())
        .map(|i| {
            (0..m.cols())
                .map(|j| if i == j { s } else { 0.0 } - m[(i, j)])
                .collect()
        })
        .collect()
}

/// `exp(A T)` and `int_0^T exp(A t) dt B` by a plain 20-term series.
fn series_zoh(a: &Matrix, b: &Matrix, t: f64) -> (Matrix, Matrix) {
    let n = a.rows();
    let mut ad = Matrix::identity(n);
    let mut integral = Matrix::identity(n).scale(t);
    let mut term = Matrix::identity(n);
    for i in 1..20 {
        term = term * *a;
        let fact: f64 = (1..=i).map(f64::from).product();
        ad = ad + term.scale(t.powi(i) / fact);
        integral = integral + term.scale(t.powi(i + 1) / (fact * f64::from(i + 1)));
    }
    (ad, integral * *b)
}

fn max_diff(a: &Matrix, b: &Matrix) -> f64 {
    (*a - *b).max_abs()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn char_poly_matches_cofactor_determinant(m in (1usize..=3).prop_flat_map(square), probe in -20.0..20.0f64) {
        let p = characteristic_polynomial(&m).unwrap();
        let det = cofactor_det(&shifted(&m, probe));
        prop_assert!((p.eval(probe) - det).abs() <= 1e-10 * det.abs().max(1.0), "{} vs {det}", p.eval(probe));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn zoh_of_observer_model_matches_series(o in order(), b0 in 0.1..10.0f64, ts in 1e-4..1.0f64) {
        let model = design(o, b0, 1.0, 10.0).unwrap().eso_model();
        let sampled = zoh_discretize(&model, ts).unwrap();
        let (ad, bd) = series_zoh(&model.a, &model.b, ts);
        prop_assert!(max_diff(&sampled.a, &ad) < 1e-14);
        prop_assert!(max_diff(&sampled.b, &bd) < 1e-14 * b0.max(1.0));
        prop_assert_eq!(sampled.c, model.c);
    }

    #[test]
    fn zoh_semigroup(o in order(), b0 in 0.1..10.0f64, t1 in 1e-3..1.0f64, t2 in 1e-3..1.0f64) {
        let model = design(o, b0, 1.0, 10.0).unwrap().eso_model();
        let whole = zoh_discretize(&model, t1 + t2).unwrap();
        let a = zoh_discretize(&model, t1).unwrap();
        let b = zoh_discretize(&model, t2).unwrap();
        prop_assert!(max_diff(&whole.a, &(a.a * b.a)) < 1e-13);
        // Bd(t1 + t2) = Ad(t2) Bd(t1) + Bd(t2)
        prop_assert!(max_diff(&whole.b, &(b.a * a.b + b.b)) < 1e-13 * b0.max(1.0));
    }

    #[test]
    fn faster_observer_means_larger_gains(o in order(), b0 in 0.1..10.0f64, ts in 0.2..20.0f64, k in 1.0..100.0f64, dk in 0.01..10.0f64) {
        let slow = design(o, b0, ts, k).unwrap();
        let fast = design(o, b0, ts, k + dk).unwrap();
        prop_assert!(fast.s_eso < slow.s_eso);
        for i in 0..slow.l_cont.len() {
            prop_assert!(fast.l_cont[i].abs() > slow.l_cont[i].abs());
        }
    }

    #[test]
    fn mapped_pole_is_inside_unit_interval(s in -1000.0..-1e-3f64, ts in 1e-4..0.5f64) {
        let z = map_pole_to_z(s, ts);
        prop_assert!(z > 0.0 && z < 1.0);
    }

    #[test]
    fn control_law_vanishes_at_reference(o in order(), b0 in -10.0..10.0f64, r in -100.0..100.0f64) {
        prop_assume!(b0.abs() > 0.1);
        let d = design(o, b0, 1.0, 10.0).unwrap();
        let mut x = Vector::zeros(o.observer_len());
        x[0] = r;
        prop_assert_eq!(control_law(&d, &x, r), 0.0);
    }

    #[test]
    fn transformed_observer_keeps_its_spectrum(o in order(), b0 in 0.1..10.0f64, ts in 0.2..20.0f64, k in 1.0..100.0f64, dt in 1e-3..0.1f64) {
        let d = design(o, b0, ts, k).unwrap();
        let gains = discretize_design(&d, dt).unwrap();
        let direct = characteristic_polynomial(&DiscreteEso::new(&d, &gains).unwrap().a_eso).unwrap();
        let transformed = characteristic_polynomial(&build_transformed(&d, &gains).unwrap().a_t).unwrap();
        for (a, b) in direct.coefficients().iter().zip(transformed.coefficients()) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }
}

/// Observer pole `z` in `[0.6, 0.95]` for a random design.
fn design_with_pole() -> impl Strategy<Value = (Order, f64, f64, f64)> {
    (order(), 0.1..10.0f64, 1.0..20.0f64, 0.6..0.95f64)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn observer_error_decays_geometrically((o, b0, k, z) in design_with_pole(), f in -5.0..5.0f64) {
        let d = design(o, b0, 1.0, k).unwrap();
        let ts = z.ln() / d.s_eso;
        let gains = discretize_design(&d, ts).unwrap();
        let eso = DiscreteEso::new(&d, &gains).unwrap();
        let n = o.observer_len();

        // extended plant with a constant total disturbance f
        let mut x = Vector::from_fn(n, |i| if i + 1 == n { f } else { 1.0 });
        let mut x_hat = Vector::zeros(n);
        let mut u_prev = 0.0;
        let mut err = Vec::new();
        for step in 0..=600 {
            let y = x[0];
            x_hat = eso.a_eso.mul_vec(&x_hat) + eso.b_eso.scale(u_prev) + eso.l_eso.scale(y);
            err.push((x - x_hat).norm());
            let u = (0.05 * step as f64).sin();
            x = eso.ad.mul_vec(&x) + eso.bd.col(0).scale(u);
            u_prev = u;
        }

        let rho = z + 0.02;
        let floor = 1e-11 * err[0];
        let ratio = |k: usize| err[k] / rho.powi(k as i32);
        let c = (10..=200).filter(|&k| err[k] > floor).map(ratio).fold(0.0, f64::max);
        for k in (200..=600).filter(|&k| err[k] > floor) {
            prop_assert!(ratio(k) <= c, "k={k}: {} > {c}", ratio(k));
        }
    }
}

fn first_or_second(o: Order, k: f64, t: f64) -> PlantSpec {
    match o {
        Order::First => PlantSpec::first_order(k, t),
        Order::Second => PlantSpec::second_order(k, 1.0, t),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn optimized_and_direct_loops_agree(
        o in order(),
        k in 0.5..2.0f64,
        t in 0.5..2.0f64,
        seed in any::<u64>(),
        variance in 0.0..1e-3f64,
        limit in prop::option::of(2.0..10.0f64),
    ) {
        let t_settle = if o == Order::First { 1.0 } else { 5.0 };
        let params = AdrcParams::new(o, 1.0, t_settle, 5.0);
        let scenario = |c: ControllerSpec| Scenario {
            controller_sample_time: Some(0.01),
            noise_variance: variance,
            noise_seed: seed,
            saturation_limit: limit,
            ..Scenario::step_response(first_or_second(o, k, t), c, 20.0)
        };
        let direct = run_closed_loop(&scenario(ControllerSpec::AdrcDiscrete(params))).unwrap();
        let optimized = run_closed_loop(&scenario(ControllerSpec::AdrcOptimized(params))).unwrap();
        prop_assert_eq!(direct.len(), optimized.len());
        for (a, b) in direct.u_raw.iter().zip(&optimized.u_raw) {
            prop_assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn runs_are_deterministic(seed in any::<u64>(), variance in 0.0..1e-2f64) {
        let s = Scenario {
            noise_variance: variance,
            noise_seed: seed,
            ..Scenario::step_response(
                PlantSpec::first_order(1.0, 1.0),
                ControllerSpec::AdrcContinuous(AdrcParams::new(Order::First, 1.0, 1.0, 10.0)),
                2.0,
            )
        };
        prop_assert_eq!(run_closed_loop(&s).unwrap(), run_closed_loop(&s).unwrap());
    }

    #[test]
    fn applied_input_respects_the_limit(o in order(), k in 0.1..10.0f64, t in 0.2..5.0f64, limit in 0.1..5.0f64, r in -3.0..3.0f64) {
        let t_settle = if o == Order::First { 1.0 } else { 5.0 };
        let s = Scenario {
            saturation_limit: Some(limit),
            reference: Schedule::constant(r),
            ..Scenario::step_response(
                first_or_second(o, k, t),
                ControllerSpec::AdrcContinuous(AdrcParams::new(o, 1.0, t_settle, 10.0)),
                5.0,
            )
        };
        let traj = run_closed_loop(&s).unwrap();
        prop_assert!(traj.u_lim.iter().all(|u| u.abs() <= limit));
    }

    #[test]
    fn halving_the_step_barely_moves_the_output(o in order(), k in 0.5..2.0f64, t in 0.5..2.0f64) {
        let t_settle = if o == Order::First { 1.0 } else { 5.0 };
        let coarse = Scenario::step_response(
            first_or_second(o, k, t),
            ControllerSpec::AdrcContinuous(AdrcParams::new(o, 1.0, t_settle, 10.0)),
            t_settle * 2.0,
        );
        let fine = Scenario { sim_step: coarse.sim_step / 2.0, ..coarse.clone() };
        let a = run_closed_loop(&coarse).unwrap();
        let b = run_closed_loop(&fine).unwrap();
        for (i, y) in a.y.iter().enumerate() {
            prop_assert!((y - b.y[2 * i]).abs() < 1e-6, "t={}: {y} vs {}", a.t[i], b.y[2 * i]);
        }
    }

    #[test]
    fn dead_time_shifts_the_open_loop_response(o in order(), k in 0.1..10.0f64, t in 0.2..5.0f64, delay_steps in 1usize..500) {
        let plant = first_or_second(o, k, t);
        let open = |p: PlantSpec| run_closed_loop(&Scenario::step_response(p, ControllerSpec::OpenLoop, 3.0)).unwrap();
        let h = 1e-3;
        let base = open(plant.clone());
        let delayed = open(plant.with_dead_time(delay_steps as f64 * h));
        prop_assert!(delayed.y[..delay_steps].iter().all(|y| *y == 0.0));
        prop_assert_eq!(&delayed.y[delay_steps..], &base.y[..base.len() - delay_steps]);
    }

    /// Holds while the plant is not much faster than the target loop; see the
    /// ratio ranges below.
    #[test]
    fn nominal_loop_tracks_within_band(o in order(), k in 0.2..5.0f64, ratio in 0.0..1.0f64, t_settle in 0.5..5.0f64) {
        let (plant, b0) = match o {
            Order::First => {
                let t = t_settle * (1.0 + 9.0 * ratio);
                (PlantSpec::first_order(k, t), k / t)
            }
            Order::Second => {
                let t = t_settle * (0.2 + 1.8 * ratio);
                (PlantSpec::second_order(k, 1.0, t), k / (t * t))
            }
        };
        let traj: Trajectory = run_closed_loop(&Scenario::step_response(
            plant,
            ControllerSpec::AdrcContinuous(AdrcParams::new(o, b0, t_settle, 10.0)),
            3.0 * t_settle,
        ))
        .unwrap();
        for (tt, y) in traj.t.iter().zip(&traj.y) {
            if *tt > t_settle {
                prop_assert!((y - 1.0).abs() <= 0.025, "t={tt}: y={y}");
            }
        }
    }
}

#[test]
fn direct_and_optimized_controllers_agree_step_by_step() {
    // measurement sequence injected without a plant, 5000 samples
    for o in [Order::First, Order::Second] {
        let d = design(o, 2.0, 1.5, 8.0).unwrap();
        let gains = discretize_design(&d, 0.005).unwrap();
        let mut direct = DiscreteAdrc::new(d, &gains).unwrap();
        let mut optimized = OptimizedAdrc::new(&d, &gains, 1.0).unwrap();
        let r = |k: usize| if k < 2500 { 1.0 } else { -0.5 };
        for k in 0..5000 {
            let y = (0.013 * k as f64).sin() + 0.1 * (0.7 * k as f64).cos();
            let a = direct.step(y, r(k), r(k + 1));
            let b = optimized.step(y, r(k), r(k + 1));
            assert!((a - b).abs() < 1e-10, "{o:?} k={k}: {a} vs {b}");
            let applied = a.clamp(-3.0, 3.0);
            direct.commit(applied);
            optimized.commit(applied);
        }
    }
}
