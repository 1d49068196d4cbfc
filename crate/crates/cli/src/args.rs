use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "prefopt",
    version,
    about = "Preference fine-tuning experiments on a tiny sequence model"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate train, eval and neutral dataset files.
    GenData(GenDataArgs),
    /// Train one model and write a checkpoint and a trace.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset and write the accuracy report.
    Eval(EvalArgs),
    /// Sweep the number of negatives (k) or training records per sensor (n).
    Ablate(AblateArgs),
    /// Train and evaluate several methods on identical data.
    Compare(CompareArgs),
    /// Finite-difference checks of every op and every objective.
    Gradcheck(GradcheckArgs),
    /// Draw the probe curves of a trace as SVG.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Flat key = value file; flags take precedence over it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Where to write the run manifest.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_per_sensor: Option<usize>,
    #[arg(long)]
    pub n_eval_per_sensor: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub bias_strength: Option<f64>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct ObjectiveArgs {
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub dpo_beta: Option<f64>,
    #[arg(long)]
    pub ipo_tau: Option<f64>,
    #[arg(long)]
    pub simpo_beta: Option<f64>,
    #[arg(long)]
    pub simpo_gamma: Option<f64>,
    #[arg(long)]
    pub pref_weight: Option<f64>,
}

#[derive(Debug, Args)]
pub struct OptimArgs {
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub probe_every: Option<usize>,
    /// SFT steps before the reference snapshot (default: half of --steps).
    #[arg(long)]
    pub ref_steps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub n_layers: Option<usize>,
    #[arg(long)]
    pub n_heads: Option<usize>,
    #[arg(long)]
    pub max_seq_len: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training records (.jsonl).
    #[arg(long)]
    pub data: Option<String>,
    /// Held-out records traced during training (default: eval.jsonl next to --data).
    #[arg(long)]
    pub probe: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_ckpt: Option<String>,
    /// Trace CSV (default: <out-ckpt>.trace.csv).
    #[arg(long)]
    pub trace: Option<String>,
    /// Frozen reference checkpoint for sft-dpo and sft-ipo.
    #[arg(long)]
    pub ref_ckpt: Option<String>,
    /// Build the reference with an SFT phase of --ref-steps inside the step budget.
    #[arg(long)]
    pub auto_ref: bool,
    /// Start from this checkpoint instead of a fresh initialization.
    #[arg(long)]
    pub init_ckpt: Option<String>,
    #[command(flatten)]
    pub objective: ObjectiveArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: Option<String>,
    #[arg(long)]
    pub data: Option<String>,
    #[arg(long)]
    pub report: Option<String>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Comma-separated seeds.
    #[arg(long)]
    pub seeds: Option<String>,
    #[arg(long)]
    pub out_dir: Option<String>,
    #[arg(long)]
    pub n_per_sensor: Option<usize>,
    #[arg(long)]
    pub bias_strength: Option<f64>,
    /// Runs executed at once (default: available cores).
    #[arg(long)]
    pub workers: Option<usize>,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// `k` or `n`.
    #[arg(long)]
    pub param: Option<String>,
    /// Comma-separated values of the swept parameter.
    #[arg(long)]
    pub values: Option<String>,
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub k: Option<usize>,
    #[command(flatten)]
    pub sweep: SweepArgs,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Comma-separated methods.
    #[arg(long)]
    pub methods: Option<String>,
    #[arg(long)]
    pub k: Option<usize>,
    #[command(flatten)]
    pub sweep: SweepArgs,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Scale the backward rule of this op; used to exercise failure reporting.
    #[arg(long, hide = true)]
    pub corrupt_op: Option<String>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long)]
    pub trace: Option<String>,
    #[arg(long)]
    pub out_svg: Option<String>,
    #[command(flatten)]
    pub common: Common,
}
