use adrc_core::experiments::GroupResult;
use adrc_core::{builtin_suite, suite_ids};

fn spread(g: &GroupResult) -> f64 {
    let ts: Vec<f64> = g.metrics().map(|(_, r)| r.metrics.settling_time).collect();
    assert_eq!(ts.len(), g.points.len(), "{}: failed points", g.series);
    let max = ts.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = ts.iter().copied().fold(f64::INFINITY, f64::min);
    max - min
}

#[test]
fn adrc_settling_varies_less_than_pi_over_plant_gain() {
    let res = builtin_suite("adrc1-pi-compare").unwrap().run().unwrap();
    let adrc = spread(res.group("K", "adrc").unwrap());
    let pi = spread(res.group("K", "pi").unwrap());
    assert!(adrc < pi, "adrc spread {adrc} vs pi {pi}");
}

#[test]
fn noisy_suite_is_reproducible() {
    let cfg = builtin_suite("discrete-noise").unwrap();
    let a = cfg.run().unwrap();
    let b = cfg.run().unwrap();
    for (ga, gb) in a.groups.iter().zip(&b.groups) {
        assert_eq!(ga.summary_csv(), gb.summary_csv());
        for (pa, pb) in ga.points.iter().zip(&gb.points) {
            assert_eq!(
                pa.outcome.as_ref().unwrap().traj,
                pb.outcome.as_ref().unwrap().traj
            );
        }
    }
}

#[test]
fn every_builtin_point_runs() {
    for id in suite_ids() {
        let res = builtin_suite(id).unwrap().run().unwrap();
        let failures: Vec<String> = res
            .failures()
            .map(|(g, p, e)| format!("{}/{}={}: {e}", g.sweep, g.series, p.value))
            .collect();
        assert!(failures.is_empty(), "{id}: {failures:?}");
    }
}
