//! `rttad` command-line interface.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use rttad::data::{gen_synthetic, load_dataset, Scaler, SyntheticSpec};
use rttad::experiment::{
    adapt_stage, jeffreys_to_test_normals, run_bench, run_experiment, split_dataset, train_stage,
    Ablation, ExperimentConfig, ScoreFile, ShiftSummary,
};
use rttad::metrics::reports_to_csv;
use rttad::{Checkpoint, Dataset, MetricsReport};

#[derive(Parser, Debug)]
#[command(
    name = "rttad",
    version,
    about = "Risk-aware test-time adaptation for tabular anomaly detection"
)]
struct Cli {
    /// Seed overriding the one in the config or spec.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Ablation overriding the one in the config.
    #[arg(long, global = true, value_parser = parse_ablation)]
    ablation: Option<Ablation>,
    /// Only log warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Cluster the normals and write a shifted train/test split.
    ShiftSplit {
        #[arg(long)]
        input: PathBuf,
        /// Number of k-means clusters over the normal rows.
        #[arg(long, default_value_t = 3)]
        k: usize,
        /// Fraction of the largest cluster used for training.
        #[arg(long, default_value_t = 0.5)]
        ratio: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a (normal-only) training file.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Adapt a trained checkpoint to a test file and score it.
    Adapt {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        test: PathBuf,
        /// Training rows seeding the normal pool; defaults to train.csv next to the checkpoint.
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute AUC-ROC, AUC-PR and F1 for a score file.
    Eval {
        #[arg(long)]
        scores: PathBuf,
        /// CSV with a label column, either aligned with the scores or the full source dataset.
        #[arg(long)]
        labels: PathBuf,
        /// Contamination used for F1; defaults to the true anomaly fraction.
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long, default_value = "rttad")]
        method: String,
        /// Write the report here (JSON, or CSV when the extension is .csv).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every config in a directory several times and aggregate the results.
    Bench {
        #[arg(long)]
        configs: PathBuf,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        /// Expand every config over all five ablation variants.
        #[arg(long)]
        all_ablations: bool,
        /// `key=value` override applied to every config.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a labeled synthetic dataset from a JSON spec.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        /// Output CSV; defaults to `<name>.csv` in the current directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the whole pipeline: split, train, adapt, score, evaluate.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct ConfigArgs {
    /// Flat TOML experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset CSV; replaces `dataset` from the config.
    #[arg(long)]
    input: Option<PathBuf>,
    /// `key=value` override of any config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn parse_ablation(s: &str) -> std::result::Result<Ablation, String> {
    s.parse::<Ablation>().map_err(|e| e.to_string())
}

/// Reads a config file; relative dataset paths are resolved against the file's directory.
fn read_config(path: &Path, overrides: &[String]) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut cfg = ExperimentConfig::from_toml_with_overrides(&text, overrides)
        .with_context(|| format!("parsing {}", path.display()))?;
    if cfg.dataset.is_relative() {
        if let Some(dir) = path.parent() {
            cfg.dataset = dir.join(&cfg.dataset);
        }
    }
    Ok(cfg)
}

impl ConfigArgs {
    fn resolve(&self, cli: &Cli) -> Result<ExperimentConfig> {
        let mut cfg = match (&self.config, &self.input) {
            (Some(path), _) => read_config(path, &self.overrides)?,
            (None, Some(input)) => {
                let base = ExperimentConfig::new(input).to_toml_string()?;
                ExperimentConfig::from_toml_with_overrides(&base, &self.overrides)?
            }
            (None, None) => bail!("either --config or --input is required"),
        };
        if let Some(input) = &self.input {
            cfg.dataset = input.clone();
        }
        apply_globals(&mut cfg, cli);
        cfg.validate()?;
        Ok(cfg)
    }
}

fn apply_globals(cfg: &mut ExperimentConfig, cli: &Cli) {
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(a) = cli.ablation {
        cfg.ablation = a;
    }
}

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn shift_split_cmd(cli: &Cli, input: &Path, k: usize, ratio: f64, out: &Path) -> Result<()> {
    let ds = load_dataset(input)?;
    let seed = cli.seed.unwrap_or(0);
    let (split, train, test) = split_dataset(&ds, k, ratio, seed)?;
    let scaler = Scaler::fit(&train.x)?;
    let jd = jeffreys_to_test_normals(&train.x, &test, Some(&scaler))?;
    fs::create_dir_all(out)?;
    train.write_csv(&out.join("train.csv"))?;
    test.write_csv(&out.join("test.csv"))?;
    let summary = ShiftSummary {
        split,
        jeffreys_divergence: jd,
    };
    write(
        &out.join("split.json"),
        &serde_json::to_string_pretty(&summary)?,
    )?;
    println!(
        "train {} rows, test {} rows, JD {}",
        train.len(),
        test.len(),
        jd.map_or("n/a".into(), |v| format!("{v:.4}"))
    );
    Ok(())
}

fn train_cmd(cli: &Cli, args: &ConfigArgs, out: &Path) -> Result<()> {
    let cfg = args.resolve(cli)?;
    let ds = load_dataset(&cfg.dataset)?;
    if ds.anomaly_count().is_some_and(|c| c > 0) {
        warn!("training file contains labeled anomalies; they are trained on like every other row");
    }
    let model = cfg.resolved_model(ds.dim());
    let (ck, report) = train_stage(&ds.x, &model, cfg.seed)?;
    fs::create_dir_all(out)?;
    write(&out.join("config.toml"), &cfg.to_toml_string()?)?;
    ck.save(&out.join("model.json"))?;
    write(
        &out.join("train_report.json"),
        &serde_json::to_string_pretty(&report)?,
    )?;
    ds.write_csv(&out.join("train.csv"))?;
    println!(
        "trained on {} rows, mean training score {:.6}",
        ds.len(),
        report.final_mean_sample_loss
    );
    Ok(())
}

fn adapt_cmd(
    cli: &Cli,
    checkpoint: &Path,
    test: &Path,
    train: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let mut ck = Checkpoint::load(checkpoint)?;
    let ablation = cli.ablation.unwrap_or_default();
    if ablation == Ablation::NoAux {
        bail!("no-aux changes training; pass it to `train` instead");
    }
    ck.config = ablation.apply(&ck.config);
    let train_path = match train {
        Some(p) => p.to_path_buf(),
        None => checkpoint.with_file_name("train.csv"),
    };
    let train_ds = load_dataset(&train_path)
        .with_context(|| format!("loading training rows from {}", train_path.display()))?;
    let test_ds = load_dataset(test)?;
    let adapt = adapt_stage(
        &ck,
        &train_ds.x,
        &test_ds.x,
        ablation.retain_pool(),
        cli.seed.unwrap_or(0),
        test_ds.y.as_deref(),
    )?;
    fs::create_dir_all(out)?;
    adapt.checkpoint.save(&out.join("adapted.json"))?;
    write(
        &out.join("adapt_history.json"),
        &serde_json::to_string_pretty(&adapt.history)?,
    )?;
    let name = test_ds.name.clone();
    for (file, scores) in [
        ("scores.json", &adapt.scores),
        ("static_scores.json", &adapt.static_scores),
    ] {
        let sf = ScoreFile {
            dataset: name.clone(),
            index: None,
            scores: scores.clone(),
        };
        write(&out.join(file), &serde_json::to_string_pretty(&sf)?)?;
    }
    println!(
        "{} rounds, scored {} rows",
        adapt.history.len(),
        adapt.scores.len()
    );
    Ok(())
}

fn eval_cmd(
    scores: &Path,
    labels: &Path,
    alpha: Option<f64>,
    method: &str,
    out: Option<&Path>,
) -> Result<()> {
    let text =
        fs::read_to_string(scores).with_context(|| format!("reading {}", scores.display()))?;
    let sf: ScoreFile =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", scores.display()))?;
    let ds = load_dataset(labels)?;
    let Some(y) = ds.y else {
        bail!("{} has no label column", labels.display());
    };
    let y: Vec<u8> = if y.len() == sf.scores.len() {
        y
    } else if let Some(index) = &sf.index {
        index
            .iter()
            .map(|&i| {
                y.get(i)
                    .copied()
                    .with_context(|| format!("score index {i} is out of range"))
            })
            .collect::<Result<_>>()?
    } else {
        bail!(
            "{} scores but {} labels and no index to align them",
            sf.scores.len(),
            y.len()
        );
    };
    let report = MetricsReport::compute(method, sf.dataset.clone(), &sf.scores, &y, alpha)?;
    let json = report.to_json()?;
    match out {
        Some(p) if p.extension().is_some_and(|e| e == "csv") => {
            write(p, &reports_to_csv(std::slice::from_ref(&report))?)?
        }
        Some(p) => write(p, &json)?,
        None => {}
    }
    println!("{json}");
    Ok(())
}

fn bench_cmd(
    cli: &Cli,
    dir: &Path,
    repeats: usize,
    all: bool,
    overrides: &[String],
    out: Option<&Path>,
) -> Result<()> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "toml"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no .toml configs in {}", dir.display());
    }
    let mut configs = Vec::new();
    for p in &paths {
        let mut cfg = read_config(p, overrides)?;
        apply_globals(&mut cfg, cli);
        if all {
            for a in Ablation::ALL {
                configs.push(ExperimentConfig {
                    ablation: a,
                    ..cfg.clone()
                });
            }
        } else {
            configs.push(cfg);
        }
    }
    info!("{} configs x {repeats} repeats", configs.len());
    let result = run_bench(&configs, repeats, out)?;
    print!("{}", result.table_csv()?);
    let failed = result.runs.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        warn!("{failed} runs failed; see bench.json");
    }
    Ok(())
}

fn synth_cmd(cli: &Cli, spec: &Path, out: Option<&Path>) -> Result<()> {
    let text = fs::read_to_string(spec).with_context(|| format!("reading {}", spec.display()))?;
    let mut spec: SyntheticSpec =
        serde_json::from_str(&text).context("parsing the synthetic spec")?;
    if let Some(seed) = cli.seed {
        spec.seed = seed;
    }
    let ds: Dataset = gen_synthetic(&spec)?;
    let path = out.map_or_else(
        || PathBuf::from(format!("{}.csv", spec.name)),
        Path::to_path_buf,
    );
    ds.write_csv(&path)?;
    println!(
        "wrote {} rows ({} anomalies) to {}",
        ds.len(),
        ds.anomaly_count().unwrap_or(0),
        path.display()
    );
    Ok(())
}

fn run_cmd(cli: &Cli, args: &ConfigArgs, out: Option<&Path>) -> Result<()> {
    let mut cfg = args.resolve(cli)?;
    if let Some(o) = out {
        cfg.out_dir = Some(o.to_path_buf());
    }
    let outcome = run_experiment(&cfg)?;
    println!(
        "{} {}: AUC-ROC {:.4} (static {:.4}), AUC-PR {:.4}, F1 {:.4}, {} rounds",
        outcome.report.dataset,
        outcome.report.method,
        outcome.report.auc_roc,
        outcome.static_report.auc_roc,
        outcome.report.auc_pr,
        outcome.report.f1,
        outcome.adapt.history.len()
    );
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::ShiftSplit {
            input,
            k,
            ratio,
            out,
        } => shift_split_cmd(cli, input, *k, *ratio, out),
        Command::Train { config, out } => train_cmd(cli, config, out),
        Command::Adapt {
            checkpoint,
            test,
            train,
            out,
        } => adapt_cmd(cli, checkpoint, test, train.as_deref(), out),
        Command::Eval {
            scores,
            labels,
            alpha,
            method,
            out,
        } => eval_cmd(scores, labels, *alpha, method, out.as_deref()),
        Command::Bench {
            configs,
            repeats,
            all_ablations,
            overrides,
            out,
        } => bench_cmd(
            cli,
            configs,
            *repeats,
            *all_ablations,
            overrides,
            out.as_deref(),
        ),
        Command::Synth { spec, out } => synth_cmd(cli, spec, out.as_deref()),
        Command::Run { config, out } => run_cmd(cli, config, out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
