use std::fs;
use std::path::{Path, PathBuf};

use prefopt_core::autodiff::OpKind;
use prefopt_core::data::{self, generate, GeneratorConfig};
use prefopt_core::eval::{evaluate, EvaluationReport};
use prefopt_core::experiment::{default_workers, run_all, RunOutcome, RunSpec};
use prefopt_core::io_util::write_atomic;
use prefopt_core::model::{load_checkpoint, save_checkpoint, ModelConfig};
use prefopt_core::objectives::{Method, ObjectiveConfig};
use prefopt_core::train::{
    train, train_with_auto_reference, AdamWConfig, TrainConfig, TrainingTrace,
};
use prefopt_core::verify::{check_objectives, check_ops};
use prefopt_core::{FrozenReference, ModelParameters};

use crate::args::*;
use crate::error::CliError;
use crate::manifest::{sibling, RunManifest};
use crate::plot::render_svg;
use crate::settings::{parse_list, Settings};

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    write_atomic(path, text.as_bytes()).map_err(io_err(path))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn ensure_parent(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => ensure_dir(p),
        _ => Ok(()),
    }
}

fn existing(path: &str, what: &str) -> Result<PathBuf, CliError> {
    let p = PathBuf::from(path);
    if !p.is_file() {
        return Err(CliError::Io(format!("{what} '{path}' does not exist")));
    }
    Ok(p)
}

fn with_config<'a>(config: &'a Option<PathBuf>, mut inputs: Vec<&'a Path>) -> Vec<&'a Path> {
    if let Some(c) = config {
        inputs.push(c.as_path());
    }
    inputs
}

pub fn gen_data(a: GenDataArgs) -> Result<(), CliError> {
    let mut s = Settings::load(a.common.config.as_deref())?;
    let out: String = s.require("out", a.out)?;
    let seed = s.seed(a.seed)?;
    let d = GeneratorConfig::default();
    let cfg = GeneratorConfig {
        seed,
        n_per_sensor: s.get("n_per_sensor", a.n_per_sensor, d.n_per_sensor)?,
        n_eval_per_sensor: s.get(
            "n_eval_per_sensor",
            a.n_eval_per_sensor,
            d.n_eval_per_sensor,
        )?,
        k: s.get("k", a.k, d.k)?,
        bias_strength: s.get("bias_strength", a.bias_strength, d.bias_strength)?,
        ..d
    };
    s.finish()?;
    cfg.validate()?;

    let dir = PathBuf::from(out);
    ensure_dir(&dir)?;
    let paths = ["train", "eval", "neutral"].map(|n| dir.join(format!("{n}.jsonl")));
    let mpath = a
        .common
        .manifest
        .clone()
        .unwrap_or_else(|| dir.join("manifest.json"));
    let outputs: Vec<&Path> = paths.iter().map(PathBuf::as_path).collect();
    let m = RunManifest::start(
        &mpath,
        "gen-data",
        Some(seed),
        s.resolved(),
        &with_config(&a.common.config, vec![]),
        &outputs,
    )?;

    let corpus = generate(&cfg)?;
    for (set, path) in [&corpus.train, &corpus.eval, &corpus.neutral]
        .iter()
        .zip(&paths)
    {
        data::save(set, path)?;
    }
    m.finish()?;
    println!(
        "wrote {} train, {} eval and {} neutral records to {}",
        corpus.train.len(),
        corpus.eval.len(),
        corpus.neutral.len(),
        dir.display()
    );
    Ok(())
}

fn resolve_objective(
    s: &mut Settings,
    a: &ObjectiveArgs,
    method: Method,
) -> Result<ObjectiveConfig, CliError> {
    let d = ObjectiveConfig::with_method(method);
    let cfg = ObjectiveConfig {
        method,
        alpha: s.get("alpha", a.alpha, d.alpha)?,
        beta_margin: s.get("beta", a.beta, d.beta_margin)?,
        k: s.get("k", a.k, d.k)?,
        dpo_beta: s.get("dpo_beta", a.dpo_beta, d.dpo_beta)?,
        ipo_tau: s.get("ipo_tau", a.ipo_tau, d.ipo_tau)?,
        simpo_beta: s.get("simpo_beta", a.simpo_beta, d.simpo_beta)?,
        simpo_gamma: s.get("simpo_gamma", a.simpo_gamma, d.simpo_gamma)?,
        pref_weight: s.get("pref_weight", a.pref_weight, d.pref_weight)?,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Training settings plus the reference phase length.
fn resolve_optim(
    s: &mut Settings,
    a: &OptimArgs,
    objective: ObjectiveConfig,
    seed: u64,
    probe_default: impl Fn(usize) -> usize,
) -> Result<(TrainConfig, usize), CliError> {
    let d = TrainConfig::default();
    let steps = s.get("steps", a.steps, d.steps)?;
    let cfg = TrainConfig {
        objective,
        learning_rate: s.get("lr", a.lr, d.learning_rate)?,
        steps,
        batch_size: s.get("batch_size", a.batch_size, d.batch_size)?,
        adamw: AdamWConfig {
            weight_decay: s.get("weight_decay", a.weight_decay, d.adamw.weight_decay)?,
            ..d.adamw
        },
        seed,
        probe_every: s.get("probe_every", a.probe_every, probe_default(steps))?,
    };
    cfg.validate()?;
    let ref_steps = s.get("ref_steps", a.ref_steps, steps / 2)?;
    Ok((cfg, ref_steps))
}

fn resolve_model(s: &mut Settings, a: &ModelArgs, seed: u64) -> Result<ModelConfig, CliError> {
    let d = ModelConfig::default();
    let cfg = ModelConfig {
        d_model: s.get("d_model", a.d_model, d.d_model)?,
        n_layers: s.get("n_layers", a.n_layers, d.n_layers)?,
        n_heads: s.get("n_heads", a.n_heads, d.n_heads)?,
        max_seq_len: s.get("max_seq_len", a.max_seq_len, d.max_seq_len)?,
        init_seed: seed,
        ..d
    };
    cfg.validate()?;
    Ok(cfg)
}

fn print_trace_summary(trace: &TrainingTrace) {
    if let (Some(f), Some(l)) = (trace.first(), trace.last()) {
        println!(
            "step {}: loss {:.6}, probe pos {:.4} -> {:.4}, neg {:.4} -> {:.4}, margin {:.4}",
            l.step,
            l.total_loss,
            f.probe_pos_alp,
            l.probe_pos_alp,
            f.probe_neg_alp,
            l.probe_neg_alp,
            l.margin()
        );
    }
}

pub fn train_cmd(a: TrainArgs) -> Result<(), CliError> {
    let mut s = Settings::load(a.common.config.as_deref())?;
    let data_path: String = s.require("data", a.data)?;
    let probe_flag: Option<String> = s.optional("probe", a.probe)?;
    let seed = s.seed(a.seed)?;
    let out_ckpt: String = s.require("out_ckpt", a.out_ckpt)?;
    let trace_path: String = s.get("trace", a.trace, format!("{out_ckpt}.trace.csv"))?;
    let ref_ckpt: Option<String> = s.optional("ref_ckpt", a.ref_ckpt)?;
    let auto_ref = s.get("auto_ref", a.auto_ref.then_some(true), false)?;
    let init_ckpt: Option<String> = s.optional("init_ckpt", a.init_ckpt)?;
    let method: Method = s.get(
        "method",
        a.objective.method.as_deref().map(str::parse).transpose()?,
        Method::Saft,
    )?;
    let objective = resolve_objective(&mut s, &a.objective, method)?;
    let (cfg, ref_steps) = resolve_optim(&mut s, &a.optim, objective, seed, |_| {
        TrainConfig::default().probe_every
    })?;
    let model_cfg = resolve_model(&mut s, &a.model, seed)?;
    s.finish()?;

    if method.needs_reference() && ref_ckpt.is_none() && !auto_ref {
        return Err(CliError::usage(format!(
            "{method} needs --ref-ckpt or --auto-ref"
        )));
    }
    if ref_ckpt.is_some() && auto_ref {
        return Err(CliError::usage("--ref-ckpt and --auto-ref are exclusive"));
    }
    if auto_ref && method.needs_reference() && (ref_steps == 0 || ref_steps >= cfg.steps) {
        return Err(CliError::usage(format!(
            "--ref-steps must lie in 1..{}, got {ref_steps}",
            cfg.steps
        )));
    }

    let data_path = existing(&data_path, "dataset")?;
    let probe_path = match probe_flag {
        Some(p) => existing(&p, "probe set")?,
        None => {
            let p = data_path.with_file_name("eval.jsonl");
            if !p.is_file() {
                return Err(CliError::usage(format!(
                    "no probe set: pass --probe or put eval.jsonl next to {}",
                    data_path.display()
                )));
            }
            p
        }
    };
    let ref_path = ref_ckpt
        .map(|p| existing(&p, "reference checkpoint"))
        .transpose()?;
    let init_path = init_ckpt
        .map(|p| existing(&p, "initial checkpoint"))
        .transpose()?;
    let (ckpt_path, trace_path) = (PathBuf::from(out_ckpt), PathBuf::from(trace_path));
    ensure_parent(&ckpt_path)?;
    ensure_parent(&trace_path)?;

    let mut inputs = vec![data_path.as_path(), probe_path.as_path()];
    inputs.extend(ref_path.as_deref());
    inputs.extend(init_path.as_deref());
    let m = RunManifest::start(
        &a.common
            .manifest
            .clone()
            .unwrap_or_else(|| sibling(&ckpt_path, ".manifest.json")),
        "train",
        Some(seed),
        s.resolved(),
        &with_config(&a.common.config, inputs),
        &[&ckpt_path, &trace_path],
    )?;

    let dataset = data::load(&data_path)?;
    let probe = data::load(&probe_path)?;
    let init = match &init_path {
        Some(p) => load_checkpoint::<f64>(p)?,
        None => ModelParameters::init(model_cfg)?,
    };
    let (params, trace) = if auto_ref {
        train_with_auto_reference(init, &dataset, &probe, &cfg, ref_steps)?
    } else if let Some(p) = &ref_path {
        let reference = load_checkpoint::<f64>(p)?;
        if reference.config() != init.config() {
            return Err(CliError::usage(
                "reference checkpoint has a different model config",
            ));
        }
        train(
            init,
            &dataset,
            &probe,
            Some(&FrozenReference::new(reference)),
            &cfg,
        )?
    } else {
        train(init, &dataset, &probe, None, &cfg)?
    };
    save_checkpoint(&params, &ckpt_path)?;
    trace.save(&trace_path)?;
    m.finish()?;
    print_trace_summary(&trace);
    Ok(())
}

fn print_report(report: &EvaluationReport) {
    println!(
        "overall accuracy {:.2}% ({}/{})",
        report.overall(),
        report.n_correct(),
        report.n_items()
    );
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.2}"));
    for sensor in prefopt_core::data::Sensor::ALL {
        println!(
            "  {:8} perception {:>6}  understanding {:>6}",
            sensor.name(),
            fmt(report.perception_avg(sensor)),
            fmt(report.understanding_avg(sensor))
        );
    }
}

pub fn eval_cmd(a: EvalArgs) -> Result<(), CliError> {
    let mut s = Settings::load(a.common.config.as_deref())?;
    let ckpt: String = s.require("ckpt", a.ckpt)?;
    let data_path: String = s.require("data", a.data)?;
    let report_path: String = s.require("report", a.report)?;
    s.finish()?;
    let ckpt = existing(&ckpt, "checkpoint")?;
    let data_path = existing(&data_path, "dataset")?;
    let report_path = PathBuf::from(report_path);
    ensure_parent(&report_path)?;
    let m = RunManifest::start(
        &a.common
            .manifest
            .clone()
            .unwrap_or_else(|| sibling(&report_path, ".manifest.json")),
        "eval",
        None,
        s.resolved(),
        &with_config(&a.common.config, vec![&ckpt, &data_path]),
        &[&report_path],
    )?;
    let params = load_checkpoint::<f64>(&ckpt)?;
    let dataset = data::load(&data_path)?;
    let report = evaluate(&params, &dataset)?;
    report.save(&report_path)?;
    m.finish()?;
    print_report(&report);
    Ok(())
}

/// Settings shared by `ablate` and `compare`.
struct Sweep {
    seeds: Vec<u64>,
    out_dir: PathBuf,
    n_per_sensor: usize,
    bias_strength: f64,
    workers: usize,
}

fn resolve_sweep(s: &mut Settings, a: &SweepArgs) -> Result<Sweep, CliError> {
    let seeds = parse_list(&s.get("seeds", a.seeds.clone(), "0,1,2".to_string())?)?;
    Ok(Sweep {
        seeds,
        out_dir: PathBuf::from(s.require::<String>("out_dir", a.out_dir.clone())?),
        n_per_sensor: s.get(
            "n_per_sensor",
            a.n_per_sensor,
            GeneratorConfig::default().n_per_sensor,
        )?,
        bias_strength: s.get(
            "bias_strength",
            a.bias_strength,
            GeneratorConfig::default().bias_strength,
        )?,
        workers: s.get("workers", a.workers, default_workers())?,
    })
}

/// One summary row: a labelled group of runs that differ only in seed.
struct Cell {
    label: String,
    specs: Vec<RunSpec>,
}

fn spec_for(
    sweep: &Sweep,
    train_cfg: &TrainConfig,
    ref_steps: usize,
    method: Method,
    k: usize,
    n: usize,
    seed: u64,
) -> RunSpec {
    let mut spec = RunSpec::new(method, seed, n, k);
    spec.data.bias_strength = sweep.bias_strength;
    spec.train = TrainConfig {
        objective: ObjectiveConfig {
            method,
            k,
            ..train_cfg.objective
        },
        seed,
        ..*train_cfg
    };
    spec.ref_steps = ref_steps;
    spec
}

const SUMMARY_HEADER: &str =
    "cell,method,k,n_per_sensor,seeds,mean_accuracy,mean_neutral_accuracy,mean_probe_margin,status";

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn write_cell_files(dir: &Path, outcome: &RunOutcome) -> Result<Vec<PathBuf>, CliError> {
    ensure_dir(dir)?;
    let files = [
        "model.ckpt",
        "trace.csv",
        "eval_report.csv",
        "neutral_report.csv",
    ]
    .map(|f| dir.join(f));
    save_checkpoint(&outcome.params, &files[0])?;
    outcome.trace.save(&files[1])?;
    outcome.eval.save(&files[2])?;
    outcome.neutral.save(&files[3])?;
    Ok(files.to_vec())
}

fn run_sweep(
    command: &str,
    s: &Settings,
    common: &Common,
    sweep: &Sweep,
    cells: Vec<Cell>,
) -> Result<(), CliError> {
    ensure_dir(&sweep.out_dir)?;
    let summary_path = sweep.out_dir.join("summary.csv");
    let mut m = RunManifest::start(
        &common
            .manifest
            .clone()
            .unwrap_or_else(|| sweep.out_dir.join("manifest.json")),
        command,
        None,
        s.resolved(),
        &with_config(&common.config, vec![]),
        &[&summary_path],
    )?;
    let specs: Vec<RunSpec> = cells.iter().flat_map(|c| c.specs.iter().copied()).collect();
    let mut results = run_all(&specs, sweep.workers).into_iter();

    let mut summary = format!("{SUMMARY_HEADER}\n");
    let mut failures = Vec::new();
    for cell in &cells {
        let mut ok = Vec::new();
        for spec in &cell.specs {
            let dir = sweep
                .out_dir
                .join("runs")
                .join(format!("{}-seed{}", cell.label, spec.data.seed));
            match results.next().expect("one result per spec") {
                Ok(outcome) => {
                    for f in write_cell_files(&dir, &outcome)? {
                        m.add_output(&f);
                    }
                    ok.push(outcome);
                }
                Err(e) => {
                    ensure_dir(&dir)?;
                    let path = dir.join("error.txt");
                    write_text(&path, &format!("{e}\n"))?;
                    m.add_output(&path);
                    eprintln!("{} seed {}: {e}", cell.label, spec.data.seed);
                    failures.push(format!("{}-seed{}", cell.label, spec.data.seed));
                }
            }
        }
        let first = &cell.specs[0];
        let seeds: Vec<String> = cell.specs.iter().map(|s| s.data.seed.to_string()).collect();
        let prefix = format!(
            "{},{},{},{},{}",
            cell.label,
            first.method(),
            first.train.objective.k,
            first.data.n_per_sensor,
            seeds.join(" ")
        );
        if ok.len() == cell.specs.len() {
            let acc = mean(ok.iter().map(|o| o.eval.overall()));
            let neutral = mean(ok.iter().map(|o| o.neutral.overall()));
            let margin = mean(
                ok.iter()
                    .map(|o| o.trace.last().map_or(0.0, |r| r.margin())),
            );
            summary.push_str(&format!("{prefix},{acc:.6},{neutral:.6},{margin:.6},ok\n"));
            println!(
                "{:12} accuracy {acc:6.2}  neutral {neutral:6.2}  margin {margin:.4}",
                cell.label
            );
        } else {
            summary.push_str(&format!("{prefix},,,,failed\n"));
            println!("{:12} failed", cell.label);
        }
    }
    write_text(&summary_path, &summary)?;
    m.finish()?;
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failed(format!(
            "failed runs: {}",
            failures.join(", ")
        )))
    }
}

pub fn ablate(a: AblateArgs) -> Result<(), CliError> {
    let mut s = Settings::load(a.sweep.common.config.as_deref())?;
    let param: String = s.require("param", a.param)?;
    let values: Vec<usize> = parse_list(&s.require::<String>("values", a.values)?)?;
    let method: Method = s.get(
        "method",
        a.method.as_deref().map(str::parse).transpose()?,
        Method::Saft,
    )?;
    let base_k = s.get("k", a.k, ObjectiveConfig::default().k)?;
    let sweep = resolve_sweep(&mut s, &a.sweep)?;
    let objective = ObjectiveConfig::with_method(method);
    let (train_cfg, ref_steps) =
        resolve_optim(&mut s, &a.sweep.optim, objective, 0, |t| (t / 20).max(1))?;
    s.finish()?;
    if param != "k" && param != "n" {
        return Err(CliError::usage(format!(
            "--param must be k or n, got '{param}'"
        )));
    }
    let cells = values
        .iter()
        .map(|&v| {
            let (k, n) = if param == "k" {
                (v, sweep.n_per_sensor)
            } else {
                (base_k, v)
            };
            Cell {
                label: format!("{param}{v}"),
                specs: sweep
                    .seeds
                    .iter()
                    .map(|&seed| spec_for(&sweep, &train_cfg, ref_steps, method, k, n, seed))
                    .collect(),
            }
        })
        .collect();
    run_sweep("ablate", &s, &a.sweep.common, &sweep, cells)
}

pub fn compare(a: CompareArgs) -> Result<(), CliError> {
    let mut s = Settings::load(a.sweep.common.config.as_deref())?;
    let all = Method::ALL.map(|m| m.name()).join(",");
    let listed: Vec<Method> = parse_list(&s.get("methods", a.methods, all)?)?;
    let k = s.get("k", a.k, ObjectiveConfig::default().k)?;
    let sweep = resolve_sweep(&mut s, &a.sweep)?;
    let (train_cfg, ref_steps) =
        resolve_optim(&mut s, &a.sweep.optim, ObjectiveConfig::default(), 0, |t| {
            (t / 20).max(1)
        })?;
    s.finish()?;
    let methods: Vec<Method> = Method::ALL
        .into_iter()
        .filter(|m| listed.contains(m))
        .collect();
    let cells = methods
        .iter()
        .map(|&method| Cell {
            label: method.name().to_string(),
            specs: sweep
                .seeds
                .iter()
                .map(|&seed| {
                    spec_for(
                        &sweep,
                        &train_cfg,
                        ref_steps,
                        method,
                        k,
                        sweep.n_per_sensor,
                        seed,
                    )
                })
                .collect(),
        })
        .collect();
    run_sweep("compare", &s, &a.sweep.common, &sweep, cells)
}

pub fn gradcheck(a: GradcheckArgs) -> Result<(), CliError> {
    let mut s = Settings::load(a.common.config.as_deref())?;
    let seed = s.seed(a.seed)?;
    s.finish()?;
    let fault = a
        .corrupt_op
        .as_deref()
        .map(|n| OpKind::from_name(n).ok_or_else(|| CliError::usage(format!("unknown op '{n}'"))))
        .transpose()?;
    let m = match &a.common.manifest {
        Some(p) => Some(RunManifest::start(
            p,
            "gradcheck",
            Some(seed),
            s.resolved(),
            &with_config(&a.common.config, vec![]),
            &[],
        )?),
        None => None,
    };

    let status = |ok: bool| if ok { "PASS" } else { "FAIL" };
    let mut failed = Vec::new();
    for c in check_ops(seed, fault)? {
        println!(
            "op         {:<14} max_rel_err {:.3e}  {}",
            c.op.name(),
            c.report.max_rel_error,
            status(c.passed())
        );
        if !c.passed() {
            failed.push(format!("op {}", c.op.name()));
        }
    }
    for c in check_objectives(seed, fault)? {
        println!(
            "objective  {:<14} max_rel_err {:.3e}  {}  ({} coordinates)",
            c.method.name(),
            c.report.max_rel_error,
            status(c.passed()),
            c.report.checked
        );
        if !c.passed() {
            failed.push(format!("objective {}", c.method.name()));
        }
    }
    if let Some(m) = m {
        m.finish()?;
    }
    if failed.is_empty() {
        println!("all gradient checks passed");
        Ok(())
    } else {
        Err(CliError::Numeric(format!(
            "gradient check failed: {}",
            failed.join(", ")
        )))
    }
}

pub fn plot(a: PlotArgs) -> Result<(), CliError> {
    let mut s = Settings::load(a.common.config.as_deref())?;
    let trace_path: String = s.require("trace", a.trace)?;
    let svg_path: String = s.require("out_svg", a.out_svg)?;
    s.finish()?;
    let trace_path = existing(&trace_path, "trace")?;
    let svg_path = PathBuf::from(svg_path);
    ensure_parent(&svg_path)?;
    let m = RunManifest::start(
        &a.common
            .manifest
            .clone()
            .unwrap_or_else(|| sibling(&svg_path, ".manifest.json")),
        "plot",
        None,
        s.resolved(),
        &with_config(&a.common.config, vec![&trace_path]),
        &[&svg_path],
    )?;
    let trace = TrainingTrace::load(&trace_path)?;
    if trace.rows.is_empty() {
        return Err(CliError::usage(format!(
            "{} has no rows",
            trace_path.display()
        )));
    }
    write_text(&svg_path, &render_svg(&trace))?;
    m.finish()?;
    println!("wrote {}", svg_path.display());
    Ok(())
}
