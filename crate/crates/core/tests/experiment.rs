use prefopt_core::experiment::{run, run_all, RunSpec};
use prefopt_core::objectives::Method;

fn small(method: Method, seed: u64) -> RunSpec {
    let mut spec = RunSpec::new(method, seed, 4, 3);
    spec.data.n_eval_per_sensor = 4;
    spec.train.steps = 6;
    spec.train.probe_every = 2;
    spec.ref_steps = 3;
    spec
}

#[test]
fn threaded_sweep_matches_sequential_runs() {
    let specs = [
        small(Method::Saft, 0),
        small(Method::Sft, 1),
        small(Method::SftIpo, 2),
        small(Method::SftDpo, 3),
    ];
    let threaded = run_all(&specs, 3);
    assert_eq!(threaded.len(), specs.len());
    for (spec, got) in specs.iter().zip(threaded) {
        let got = got.unwrap();
        let want = run(spec).unwrap();
        assert_eq!(got.spec, *spec);
        // Debug output of f64 round-trips, so equal strings mean equal bits.
        assert_eq!(format!("{:?}", got.params), format!("{:?}", want.params));
        assert_eq!(format!("{:?}", got.trace), format!("{:?}", want.trace));
        assert_eq!(format!("{:?}", got.eval), format!("{:?}", want.eval));
    }
}

#[test]
fn trace_starts_before_any_update_and_ends_at_the_budget() {
    let out = run(&small(Method::Saft, 5)).unwrap();
    let steps: Vec<usize> = out.trace.rows.iter().map(|r| r.step).collect();
    assert_eq!(steps, [0, 2, 4, 6]);
}

#[test]
fn bad_negative_count_is_an_error_not_a_panic() {
    let mut spec = small(Method::Saft, 0);
    spec.train.objective.k = 7;
    assert!(run_all(&[spec], 2)[0].is_err());
}
