use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use prunekit::curriculum::Method;
use prunekit::data::{generate_synthetic, inject_mislabels, save_jsonl, MislabelMode, SyntheticSpec};
use prunekit::experiment::{
    compare_runs, datamap_from_run, run_experiment, runtime_sweep, write_rows_csv, write_run, ExperimentConfig, COMPARE_HEADER,
    SWEEP_HEADER,
};
use prunekit::runtime::CostModel;
use prunekit::Error;

const SEED_ENV: &str = "PRUNEKIT_SEED";

#[derive(Parser)]
#[command(name = "prunekit", version, about = "Joint intent/slot training with periodic EL2N data pruning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic joint intent/slot dataset as JSONL.
    Generate(GenerateArgs),
    /// Train one regime and write its run directory.
    Train(TrainArgs),
    /// Tabulate final metrics, steps and times of several runs.
    Compare(CompareArgs),
    /// Sweep the training-time cost model over prune rates and cycle lengths.
    RuntimeModel(RuntimeArgs),
    /// Data map and selection histogram of a pruned run.
    Datamap(DatamapArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// JSON file with a synthetic spec; flags below override its fields.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    intents: Option<usize>,
    #[arg(long)]
    slots: Option<usize>,
    #[arg(long)]
    vocab: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 0.0)]
    mislabel_rate: f64,
    #[arg(long, default_value = "intent")]
    mislabel_mode: MislabelMode,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// JSON experiment config; defaults apply to anything it omits.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    method: Option<Method>,
    /// Root seed. Falls back to the config, then to PRUNEKIT_SEED.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    tau: Option<usize>,
    #[arg(long)]
    cycle: Option<usize>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    /// Run directory to create.
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    /// CSV destination; stdout when absent.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RuntimeArgs {
    /// JSON with `dt_step`, `dt_forward` and `B`.
    #[arg(long)]
    cost: PathBuf,
    #[arg(long, default_value_t = 40)]
    epochs: usize,
    #[arg(long, default_value_t = 4)]
    tau: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.5])]
    rho: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 4, 8])]
    cycle: Vec<usize>,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DatamapArgs {
    run: PathBuf,
    /// Output directory; defaults to the run directory.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => generate(a),
        Command::Train(a) => train(a),
        Command::Compare(a) => compare(a),
        Command::RuntimeModel(a) => runtime_model(a),
        Command::Datamap(a) => datamap(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    e.chain()
        .find_map(|c| c.downcast_ref::<Error>())
        .map_or(1, |err| err.exit_code() as u8)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())).into())
}

fn generate(a: GenerateArgs) -> Result<()> {
    let mut spec: SyntheticSpec = match &a.spec {
        Some(p) => read_json(p)?,
        None => SyntheticSpec::default(),
    };
    spec.n_examples = a.n.unwrap_or(spec.n_examples);
    spec.n_intents = a.intents.unwrap_or(spec.n_intents);
    spec.n_slots = a.slots.unwrap_or(spec.n_slots);
    spec.vocab_size = a.vocab.unwrap_or(spec.vocab_size);
    spec.seed = a.seed.unwrap_or(spec.seed);
    let ds = inject_mislabels(&generate_synthetic(&spec)?, a.mislabel_rate, a.mislabel_mode, spec.seed)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    save_jsonl(&ds, &a.out)?;
    println!(
        "wrote {}: N={} K_intent={} K_slot={} mislabeled={}",
        a.out.display(),
        ds.len(),
        ds.n_intents(),
        ds.n_slots(),
        ds.mislabeled_ids().len()
    );
    Ok(())
}

fn resolve_config(a: &TrainArgs) -> Result<ExperimentConfig> {
    let (mut cfg, seed_in_file) = match &a.config {
        Some(p) => {
            let raw: serde_json::Value = read_json(p)?;
            let has_seed = raw.pointer("/prune/seed").is_some();
            let cfg: ExperimentConfig = serde_json::from_value(raw).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            (cfg, has_seed)
        }
        None => (ExperimentConfig::default(), false),
    };
    let env_seed = match std::env::var(SEED_ENV) {
        Ok(s) => Some(s.trim().parse::<u64>().map_err(|_| Error::Config(format!("{SEED_ENV}=`{s}` is not a u64 seed")))?),
        Err(_) => None,
    };
    if let Some(seed) = a.seed.or(if seed_in_file { None } else { env_seed }) {
        cfg.prune.seed = seed;
    }
    let p = &mut cfg.prune;
    p.method = a.method.unwrap_or(p.method);
    p.epochs = a.epochs.unwrap_or(p.epochs);
    p.tau = a.tau.unwrap_or(p.tau);
    p.cycle = a.cycle.unwrap_or(p.cycle);
    p.rho = a.rho.unwrap_or(p.rho);
    p.optimizer.learning_rate = a.lr.unwrap_or(p.optimizer.learning_rate);
    cfg.output_dir = Some(a.out.clone());
    Ok(cfg)
}

fn train(a: TrainArgs) -> Result<()> {
    let cfg = resolve_config(&a)?;
    let exp = run_experiment(&cfg)?;
    let summary = write_run(&a.out, &exp)?;
    let m = summary.final_eval.expect("experiments always evaluate");
    println!(
        "{} seed={} steps={} scoring_passes={} full_seq_acc={:.4} intent_acc={:.4} slot_f1={:.4} -> {}",
        summary.method,
        cfg.prune.seed,
        summary.total_train_steps,
        summary.total_scoring_passes,
        m.full_seq_accuracy,
        m.intent_accuracy,
        m.slot_micro_f1,
        a.out.display()
    );
    Ok(())
}

fn emit_csv<T: Serialize>(rows: &[T], header: &[&str], out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => write_rows_csv(rows, header, path)?,
        None => {
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(io::stdout().lock());
            w.write_record(header)?;
            for r in rows {
                w.serialize(r)?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

fn compare(a: CompareArgs) -> Result<()> {
    let rows = compare_runs(&a.runs)?;
    if rows.iter().any(|r| r.dataset_mismatch) {
        eprintln!("warning: runs were trained on different datasets");
    }
    emit_csv(&rows, &COMPARE_HEADER, a.out.as_deref())
}

fn runtime_model(a: RuntimeArgs) -> Result<()> {
    let cost: CostModel = read_json(&a.cost)?;
    let rows = runtime_sweep(&cost, a.epochs, a.tau, &a.rho, &a.cycle)?;
    emit_csv(&rows, &SWEEP_HEADER, a.out.as_deref())
}

fn datamap(a: DatamapArgs) -> Result<()> {
    let out = a.out.clone().unwrap_or_else(|| a.run.clone());
    let report = datamap_from_run(&a.run, &out)?;
    let mut stdout = io::stdout().lock();
    writeln!(stdout, "{} examples over {} cycles -> {}", report.points.len(), report.cycles, out.display())?;
    for (count, freq) in &report.histogram {
        writeln!(stdout, "selected {count:>3}x: {freq}")?;
    }
    Ok(())
}
