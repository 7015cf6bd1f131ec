use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use divmol::decoding::Scheme;
use divmol::metrics::EvaluationReport;
use divmol::harness::{
    compare_report, load_reports, run_phase, ErrorClass, ExperimentConfig, HarnessError, Method, Phase, Stage,
};

#[derive(Parser)]
#[command(name = "divmol", version, about = "Diverse molecular sequence generation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Canonicalize and index the corpus and draw the prompt sets.
    Ingest(Common),
    /// Train the base policy on single molecules.
    Pretrain(Common),
    /// Beam-search molecule sets for the training prompts and filter them.
    Collect(Common),
    /// Fine-tune on the collected molecule sequences.
    Sft(Common),
    /// PPO fine-tuning with diversity and match rewards.
    Rl(Common),
    /// Decode molecules for the evaluation prompts.
    Generate(EvalArgs),
    /// Score generated molecules.
    Evaluate(EvalArgs),
    /// Compare evaluation reports over the same prompts.
    Compare(CompareArgs),
}

#[derive(Args, Clone)]
struct Common {
    /// TOML experiment file; defaults apply to anything left out.
    #[arg(short, long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Override any config key, e.g. `--set rl.iterations=50`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    Pretrain,
    Sft,
    Rl,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    Ours,
    Greedy,
    Temperature,
    Nucleus,
    Beam,
    DiverseBeam,
    ContrastiveBeam,
}

#[derive(Args, Clone)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Checkpoint to decode from.
    #[arg(long, value_enum)]
    policy: Option<StageArg>,
    /// `ours` decodes one molecule sequence per prompt; the rest are
    /// single-molecule baselines.
    #[arg(long, value_enum)]
    scheme: Option<SchemeArg>,
    #[arg(long)]
    temperature: Option<f64>,
    /// Molecules per prompt.
    #[arg(short = 'k', long)]
    k: Option<usize>,
    #[arg(long)]
    label: Option<String>,
}

#[derive(Args)]
struct CompareArgs {
    /// Report JSON files, or labels under `--output-dir`.
    #[arg(required = true, num_args = 2..)]
    reports: Vec<String>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Prefix of the written `.csv` and `.json` files.
    #[arg(long, default_value = "comparison")]
    out: PathBuf,
}

/// Sets `a.b.c = value` in a TOML table, creating tables on the way. The
/// value is parsed as TOML and taken as a string when that fails.
fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<()> {
    let Some((key, raw)) = assignment.split_once('=') else {
        bail!("override {assignment:?} is not KEY=VALUE");
    };
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let mut table = root;
    for part in &parts[..parts.len() - 1] {
        table = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .with_context(|| format!("{part} is not a table"))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let mut table = match &c.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            text.parse::<toml::Table>()
                .map_err(|e| HarnessError::ConfigInvalid(format!("{}: {e}", path.display())))?
        }
        None => toml::Table::new(),
    };
    for o in &c.overrides {
        apply_override(&mut table, o).map_err(|e| HarnessError::ConfigInvalid(e.to_string()))?;
    }
    let mut cfg = ExperimentConfig::from_toml(&table.to_string())?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(p) = &c.corpus {
        cfg.corpus = p.clone();
    }
    if let Some(p) = &c.output_dir {
        cfg.output_dir = p.clone();
    }
    Ok(cfg)
}

fn eval_config(a: &EvalArgs) -> Result<ExperimentConfig> {
    let mut cfg = load_config(&a.common)?;
    if let Some(p) = a.policy {
        cfg.eval.policy = match p {
            StageArg::Pretrain => Stage::Pretrain,
            StageArg::Sft => Stage::Sft,
            StageArg::Rl => Stage::Rl,
        };
    }
    if let Some(s) = a.scheme {
        let (method, scheme) = match s {
            SchemeArg::Ours => (Method::Sequence, cfg.decode.scheme),
            SchemeArg::Greedy => (Method::Baseline, Scheme::Greedy),
            SchemeArg::Temperature => (Method::Baseline, Scheme::Temperature),
            SchemeArg::Nucleus => (Method::Baseline, Scheme::Nucleus),
            SchemeArg::Beam => (Method::Baseline, Scheme::Beam),
            SchemeArg::DiverseBeam => (Method::Baseline, Scheme::DiverseBeam),
            SchemeArg::ContrastiveBeam => (Method::Baseline, Scheme::ContrastiveBeam),
        };
        cfg.eval.method = method;
        cfg.decode.scheme = scheme;
    }
    if let Some(t) = a.temperature {
        cfg.decode.temperature = t;
    }
    if let Some(k) = a.k {
        cfg.eval.k = k;
    }
    if a.label.is_some() {
        cfg.eval.label = a.label.clone();
    }
    Ok(cfg)
}

fn phase(cfg: &ExperimentConfig, p: Phase) -> Result<()> {
    let record = run_phase(cfg, p)?;
    for a in &record.artifacts {
        println!("{}", cfg.output_dir.join(&a.path).display());
    }
    Ok(())
}

fn compare(a: &CompareArgs) -> Result<()> {
    let mut methods = Vec::new();
    for r in &a.reports {
        let path = Path::new(r);
        let (name, reports) = if path.extension().is_some_and(|e| e == "json") {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {r}"))?;
            let reports: Vec<EvaluationReport> =
                serde_json::from_str(&text).map_err(|e| HarnessError::ConfigInvalid(format!("{r}: {e}")))?;
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or(r);
            (stem.to_string(), reports)
        } else {
            let dir = a.output_dir.clone().unwrap_or_else(|| ExperimentConfig::default().output_dir);
            (r.clone(), load_reports(&dir, r)?)
        };
        methods.push((name, reports));
    }
    let cmp = compare_report(&methods)?;
    let csv = a.out.with_extension("csv");
    let json = a.out.with_extension("json");
    std::fs::write(&csv, cmp.to_csv()).with_context(|| format!("writing {}", csv.display()))?;
    std::fs::write(&json, cmp.to_json()).with_context(|| format!("writing {}", json.display()))?;
    print!("{}", cmp.to_csv());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Ingest(c) => phase(&load_config(c)?, Phase::Ingest),
        Command::Pretrain(c) => phase(&load_config(c)?, Phase::Pretrain),
        Command::Collect(c) => phase(&load_config(c)?, Phase::Collect),
        Command::Sft(c) => phase(&load_config(c)?, Phase::Sft),
        Command::Rl(c) => phase(&load_config(c)?, Phase::Rl),
        Command::Generate(a) => phase(&eval_config(a)?, Phase::Generate),
        Command::Evaluate(a) => phase(&eval_config(a)?, Phase::Evaluate),
        Command::Compare(a) => compare(a),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<HarnessError>().map(HarnessError::class) {
        Some(ErrorClass::Config) => 2,
        Some(ErrorClass::Numerical) => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_nest_and_parse() {
        let mut t = toml::Table::new();
        apply_override(&mut t, "rl.iterations=7").unwrap();
        apply_override(&mut t, "decode.scheme=beam").unwrap();
        apply_override(&mut t, "seed = 3").unwrap();
        let cfg = ExperimentConfig::from_toml(&t.to_string()).unwrap();
        assert_eq!(cfg.rl.ppo.iterations, 7);
        assert_eq!(cfg.decode.scheme, Scheme::Beam);
        assert_eq!(cfg.seed, 3);
        assert!(apply_override(&mut t, "novalue").is_err());
    }

    #[test]
    fn error_classes_map_to_codes() {
        let e: anyhow::Error = HarnessError::ConfigInvalid("x".into()).into();
        assert_eq!(exit_code(&e), 2);
        let e: anyhow::Error = HarnessError::MissingUpstream("x".into()).into();
        assert_eq!(exit_code(&e), 3);
        let e: anyhow::Error = HarnessError::Rl(divmol::rl::RlError::NonFiniteLoss).into();
        assert_eq!(exit_code(&e), 4);
    }
}
