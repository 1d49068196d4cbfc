use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use prefopt_core::model::{save_checkpoint, ModelConfig};
use prefopt_core::ModelParameters;

fn prefopt(dir: &Path, args: &[&str]) -> Output {
    prefopt_env(dir, args, None)
}

fn prefopt_env(dir: &Path, args: &[&str], seed_env: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_prefopt"));
    cmd.args(args).current_dir(dir).env_remove("PREFOPT_SEED");
    if let Some(s) = seed_env {
        cmd.env("PREFOPT_SEED", s);
    }
    cmd.output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn small_data(dir: &Path, n: &str) {
    let o = prefopt(
        dir,
        &[
            "gen-data",
            "--out",
            "data",
            "--n-per-sensor",
            n,
            "--n-eval-per-sensor",
            "10",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn gen_data_counts_and_repeatability() {
    let dir = tempfile::tempdir().unwrap();
    let o = prefopt(
        dir.path(),
        &[
            "gen-data",
            "--out",
            "a",
            "--n-per-sensor",
            "50",
            "--seed",
            "3",
        ],
    );
    assert_eq!(code(&o), 0);
    let train = fs::read_to_string(dir.path().join("a/train.jsonl")).unwrap();
    assert_eq!(train.lines().count(), 150);
    prefopt(
        dir.path(),
        &[
            "gen-data",
            "--out",
            "b",
            "--n-per-sensor",
            "50",
            "--seed",
            "3",
        ],
    );
    for f in ["train.jsonl", "eval.jsonl", "neutral.jsonl"] {
        assert_eq!(
            fs::read(dir.path().join("a").join(f)).unwrap(),
            fs::read(dir.path().join("b").join(f)).unwrap()
        );
    }
    let manifest = fs::read_to_string(dir.path().join("a/manifest.json")).unwrap();
    assert!(manifest.contains("\"complete\"") && manifest.contains("\"bias_strength\": \"0.8\""));
}

#[test]
fn missing_out_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = prefopt(dir.path(), &["gen-data"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("--out"));
    assert_eq!(code(&prefopt(dir.path(), &["no-such-command"])), 2);
}

#[test]
fn seed_environment_variable_overrides_flag() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    prefopt_env(
        p,
        &[
            "gen-data",
            "--out",
            "env",
            "--seed",
            "1",
            "--n-per-sensor",
            "4",
        ],
        Some("7"),
    );
    prefopt(
        p,
        &[
            "gen-data",
            "--out",
            "flag",
            "--seed",
            "7",
            "--n-per-sensor",
            "4",
        ],
    );
    assert_eq!(
        fs::read(p.join("env/train.jsonl")).unwrap(),
        fs::read(p.join("flag/train.jsonl")).unwrap()
    );
}

#[test]
fn config_file_sits_between_flags_and_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("run.cfg"), "# corpus\nn_per_sensor = 5\nk = 2\n").unwrap();
    assert_eq!(
        code(&prefopt(
            p,
            &["gen-data", "--out", "c", "--config", "run.cfg"]
        )),
        0
    );
    let train = fs::read_to_string(p.join("c/train.jsonl")).unwrap();
    assert_eq!(train.lines().count(), 15);
    assert_eq!(train.lines().next().unwrap().matches("],[").count(), 1);
    prefopt(
        p,
        &[
            "gen-data",
            "--out",
            "d",
            "--config",
            "run.cfg",
            "--n-per-sensor",
            "6",
        ],
    );
    assert_eq!(
        fs::read_to_string(p.join("d/train.jsonl"))
            .unwrap()
            .lines()
            .count(),
        18
    );

    fs::write(p.join("bad.cfg"), "n_per_sensr = 5\n").unwrap();
    assert_eq!(
        code(&prefopt(
            p,
            &["gen-data", "--out", "e", "--config", "bad.cfg"]
        )),
        2
    );
    assert_eq!(
        code(&prefopt(
            p,
            &["gen-data", "--out", "e", "--config", "absent.cfg"]
        )),
        4
    );
}

#[test]
fn train_preconditions() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    small_data(p, "4");
    let base = [
        "train",
        "--data",
        "data/train.jsonl",
        "--out-ckpt",
        "m.ckpt",
    ];
    fn with<'a>(base: &[&'a str], extra: &[&'a str]) -> Vec<&'a str> {
        [base, extra].concat()
    }
    let with = |extra| with(&base, extra);
    assert_eq!(code(&prefopt(p, &with(&["--method", "sft-dpo"]))), 2);
    assert_eq!(
        code(&prefopt(p, &with(&["--method", "sft-ipo", "--steps", "4"]))),
        2
    );
    assert_eq!(code(&prefopt(p, &with(&["--method", "nope"]))), 2);
    assert_eq!(code(&prefopt(p, &with(&["--steps", "0"]))), 2);
    assert_eq!(
        code(&prefopt(
            p,
            &["train", "--data", "missing.jsonl", "--out-ckpt", "m.ckpt"]
        )),
        4
    );
    assert!(!p.join("m.ckpt").exists());
}

#[test]
fn saft_trace_has_both_terms() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    small_data(p, "4");
    let o = prefopt(
        p,
        &[
            "train",
            "--data",
            "data/train.jsonl",
            "--steps",
            "6",
            "--probe-every",
            "3",
            "--out-ckpt",
            "m.ckpt",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let trace = fs::read_to_string(p.join("m.ckpt.trace.csv")).unwrap();
    let mut lines = trace.lines();
    assert_eq!(
        lines.next().unwrap(),
        "step,total_loss,sft_loss,pref_loss,probe_pos_alp,probe_neg_alp"
    );
    let steps: Vec<&str> = lines.map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(steps, ["0", "3", "6"]);
    assert!(trace.lines().nth(1).unwrap().split(',').nth(3).unwrap() != "0");
}

#[test]
fn reference_checkpoint_drives_dpo() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    small_data(p, "4");
    let sft = [
        "train",
        "--data",
        "data/train.jsonl",
        "--method",
        "sft",
        "--steps",
        "4",
        "--out-ckpt",
        "ref.ckpt",
    ];
    assert_eq!(code(&prefopt(p, &sft)), 0);
    let o = prefopt(
        p,
        &[
            "train",
            "--data",
            "data/train.jsonl",
            "--method",
            "sft-dpo",
            "--ref-ckpt",
            "ref.ckpt",
            "--init-ckpt",
            "ref.ckpt",
            "--steps",
            "2",
            "--out-ckpt",
            "dpo.ckpt",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let trace = fs::read_to_string(p.join("dpo.ckpt.trace.csv")).unwrap();
    // The policy starts at the reference, so the first DPO term is ln 2.
    let pref: f64 = trace
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .nth(3)
        .unwrap()
        .parse()
        .unwrap();
    assert!((pref - std::f64::consts::LN_2).abs() < 1e-12, "{pref}");
}

#[test]
fn non_finite_loss_exits_3_with_step() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    small_data(p, "4");
    let mut bad = ModelParameters::init(ModelConfig::default()).unwrap();
    bad.tensor_mut("head.b").unwrap().values[0] = f64::NAN;
    save_checkpoint(&bad, &p.join("nan.ckpt")).unwrap();
    let o = prefopt(
        p,
        &[
            "train",
            "--data",
            "data/train.jsonl",
            "--init-ckpt",
            "nan.ckpt",
            "--steps",
            "3",
            "--out-ckpt",
            "m.ckpt",
        ],
    );
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("step 0"), "{}", stderr(&o));
    assert!(!p.join("m.ckpt").exists());
}

#[test]
fn untrained_eval_is_near_chance_and_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(
        code(&prefopt(
            p,
            &["gen-data", "--out", "data", "--n-per-sensor", "2"]
        )),
        0
    );
    save_checkpoint(
        &ModelParameters::init(ModelConfig::default()).unwrap(),
        &p.join("init.ckpt"),
    )
    .unwrap();
    let args = [
        "eval",
        "--ckpt",
        "init.ckpt",
        "--data",
        "data/eval.jsonl",
        "--report",
        "r1.csv",
    ];
    let o = prefopt(p, &args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("overall accuracy"));
    prefopt(
        p,
        &[
            "eval",
            "--ckpt",
            "init.ckpt",
            "--data",
            "data/eval.jsonl",
            "--report",
            "r2.csv",
        ],
    );
    let r1 = fs::read_to_string(p.join("r1.csv")).unwrap();
    assert_eq!(r1, fs::read_to_string(p.join("r2.csv")).unwrap());

    let overall: Vec<&str> = r1.lines().last().unwrap().split(',').collect();
    let (n, acc): (usize, f64) = (overall[2].parse().unwrap(), overall[4].parse().unwrap());
    assert!(n >= 200);
    assert!((acc - 25.0).abs() <= 10.0, "{acc}");

    // Perception average equals the mean of the four perception rows.
    let rows: Vec<Vec<&str>> = r1.lines().skip(1).map(|l| l.split(',').collect()).collect();
    let thermal: Vec<f64> = rows[..4].iter().map(|r| r[4].parse().unwrap()).collect();
    let avg: f64 = rows
        .iter()
        .find(|r| r[0] == "thermal" && r[1] == "perception_avg")
        .unwrap()[4]
        .parse()
        .unwrap();
    assert!((avg - thermal.iter().sum::<f64>() / 4.0).abs() < 1e-5);
}

#[test]
fn vocabulary_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    small_data(p, "2");
    let small = ModelParameters::init(ModelConfig {
        vocab_size: 20,
        ..ModelConfig::default()
    })
    .unwrap();
    save_checkpoint(&small, &p.join("small.ckpt")).unwrap();
    let o = prefopt(
        p,
        &[
            "eval",
            "--ckpt",
            "small.ckpt",
            "--data",
            "data/eval.jsonl",
            "--report",
            "r.csv",
        ],
    );
    assert_eq!(code(&o), 2);
    assert!(!p.join("r.csv").exists());
}

#[test]
fn plot_draws_one_point_per_row() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(
        p.join("t.csv"),
        "step,total_loss,sft_loss,pref_loss,probe_pos_alp,probe_neg_alp\n0,1,1,0,-4,-4.1\n10,0.5,0.4,0.1,-1,-2\n",
    )
    .unwrap();
    assert_eq!(
        code(&prefopt(
            p,
            &["plot", "--trace", "t.csv", "--out-svg", "a.svg"]
        )),
        0
    );
    assert_eq!(
        code(&prefopt(
            p,
            &["plot", "--trace", "t.csv", "--out-svg", "b.svg"]
        )),
        0
    );
    let svg = fs::read_to_string(p.join("a.svg")).unwrap();
    assert_eq!(svg, fs::read_to_string(p.join("b.svg")).unwrap());
    let polylines: Vec<&str> = svg.lines().filter(|l| l.contains("<polyline")).collect();
    assert_eq!(polylines.len(), 2);
    for l in polylines {
        let pts = l
            .split("points=\"")
            .nth(1)
            .unwrap()
            .split('"')
            .next()
            .unwrap();
        assert_eq!(pts.split(' ').count(), 2);
    }

    fs::write(
        p.join("bad.csv"),
        "step,total_loss,sft_loss,pref_loss,probe_pos_alp,probe_neg_alp\n0,1,1,0,-4,-4\n5,1,1,0,oops,-4\n",
    )
    .unwrap();
    let o = prefopt(p, &["plot", "--trace", "bad.csv", "--out-svg", "c.svg"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn ablate_single_cell_summary() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let o = prefopt(
        p,
        &[
            "ablate",
            "--param",
            "n",
            "--values",
            "5",
            "--seeds",
            "0",
            "--steps",
            "4",
            "--out-dir",
            "ab",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let summary = fs::read_to_string(p.join("ab/summary.csv")).unwrap();
    let rows: Vec<&str> = summary.lines().collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[1].starts_with("n5,saft,3,5,0,") && rows[1].ends_with(",ok"));
    assert!(p.join("ab/runs/n5-seed0/trace.csv").exists());
    assert_eq!(
        code(&prefopt(
            p,
            &["ablate", "--param", "q", "--values", "1", "--out-dir", "x"]
        )),
        2
    );
}

#[test]
fn failed_cells_are_marked_and_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let o = prefopt(
        p,
        &[
            "ablate",
            "--param",
            "k",
            "--values",
            "3,4",
            "--seeds",
            "0",
            "--steps",
            "2",
            "--n-per-sensor",
            "2",
            "--out-dir",
            "ab",
        ],
    );
    assert_eq!(code(&o), 1);
    let summary = fs::read_to_string(p.join("ab/summary.csv")).unwrap();
    assert!(summary.lines().nth(1).unwrap().ends_with(",ok"));
    assert!(summary.lines().nth(2).unwrap().ends_with(",failed"));
}

#[test]
fn compare_orders_methods_and_rejects_unknown_names() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let o = prefopt(
        p,
        &["compare", "--methods", "saft,bogus", "--out-dir", "c1"],
    );
    assert_eq!(code(&o), 2);
    assert!(!p.join("c1").exists());
    let o = prefopt(
        p,
        &[
            "compare",
            "--methods",
            "sft-ipo,saft,sft",
            "--seeds",
            "0",
            "--steps",
            "4",
            "--n-per-sensor",
            "2",
            "--out-dir",
            "c2",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let summary = fs::read_to_string(p.join("c2/summary.csv")).unwrap();
    let methods: Vec<&str> = summary
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(methods, ["sft", "saft", "sft-ipo"]);
}

#[test]
fn gradcheck_reports_every_method_and_names_a_broken_op() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let o = prefopt(p, &["gradcheck", "--corrupt-op", "layer_norm"]);
    assert_eq!(code(&o), 3);
    let out = stdout(&o);
    for m in ["sft", "saft", "sft-dpo", "sft-ipo", "sft-simpo"] {
        assert!(out
            .lines()
            .any(|l| l.starts_with("objective") && l.split_whitespace().nth(1) == Some(m)));
    }
    assert!(out
        .lines()
        .any(|l| l.contains("layer_norm") && l.ends_with("FAIL")));
    assert!(out
        .lines()
        .any(|l| l.contains(" matmul ") && l.ends_with("PASS")));
    assert!(stderr(&o).contains("op layer_norm"));
}
