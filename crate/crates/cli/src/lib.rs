//! The `pcad` command line: `synth`, `train`, `detect`, `eval`.
//!
//! Results go to stdout, progress and diagnostics to stderr. Exit codes are
//! listed on [`CliError::exit_code`].

pub mod config;
mod error;
mod table;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use pcad_core::datasets::{build_benchmark, load_dataset, load_ply, load_xyz, save_ply, write_dataset, Dataset, PlyEncoding};
use pcad_core::geometry::PointCloud;
use pcad_core::model::{load_checkpoint, save_checkpoint, Ablation, CheckpointMeta, Model};
use pcad_core::pipeline::{evaluate, heat_color, loss_csv, score, train, EvalReport, Evaluation};
use serde_json::json;

pub use config::{resolve, Layer, RunConfig, RESOLVED_CONFIG_FILE};
pub use error::CliError;
pub use table::Table;

#[derive(Debug, Parser)]
#[command(name = "pcad", version, about = "Multi-category point-cloud anomaly detection")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML file with dotted keys, e.g. `model.blocks = 4`.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Regenerate outputs that already exist.
    #[arg(long, global = true)]
    pub force: bool,
    /// Override any config key, e.g. `--set model.channels=32`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic benchmark.
    Synth,
    /// Train one model on the training split of every category.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Score one cloud and export a heatmap.
    Detect {
        #[arg(long)]
        checkpoint: PathBuf,
        /// `.ply` or `.xyz` file.
        #[arg(long)]
        input: PathBuf,
    },
    /// Evaluate a checkpoint, or train and evaluate a variant with `--ablate`.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        train: TrainArgs,
    },
}

#[derive(Debug, Default, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lr_drop_epoch: Option<usize>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub blocks: Option<usize>,
    /// Model variant: full, no-agma, lge-only, lge-agma, gqd-agma.
    #[arg(long)]
    pub ablate: Option<Ablation>,
}

impl TrainArgs {
    fn layer(&self, layer: &mut Layer) -> Result<(), CliError> {
        let mut put = |key: &str, v: serde_json::Value| layer.set(key, v);
        if let Some(v) = self.epochs {
            put("train.epochs", json!(v))?;
        }
        if let Some(v) = self.lr {
            put("train.lr", json!(v))?;
        }
        if let Some(v) = self.lr_drop_epoch {
            put("train.lr_drop_epoch", json!(v))?;
        }
        for (key, v) in [
            ("model.rho", self.rho),
            ("model.eta", self.eta),
            ("model.alpha", self.alpha),
            ("model.beta", self.beta),
            ("model.gamma", self.gamma),
        ] {
            if let Some(v) = v {
                put(key, json!(v))?;
            }
        }
        if let Some(v) = self.blocks {
            put("model.blocks", json!(v))?;
        }
        if let Some(v) = self.ablate {
            put("ablation", json!(v))?;
        }
        Ok(())
    }
}

/// Command context: resolved configuration plus output policy.
struct Run<'a> {
    config: RunConfig,
    out: PathBuf,
    force: bool,
    stdout: &'a mut dyn Write,
    stderr: &'a mut dyn Write,
}

impl Run<'_> {
    fn say(&mut self, line: &str) -> Result<(), CliError> {
        writeln!(self.stdout, "{line}").map_err(|e| CliError::io(Path::new("<stdout>"), e))
    }

    fn note(&mut self, line: &str) {
        let _ = writeln!(self.stderr, "{line}");
    }

    /// Writes the resolved config (with `header` comment lines) to the output
    /// directory. Returns `false` when `marker` already exists next to an
    /// identical config and `--force` is absent, after printing a notice.
    fn prepare_out(&mut self, header: &[String], marker: &str) -> Result<bool, CliError> {
        let mut text: String = header.iter().map(|h| format!("# {h}\n")).collect();
        text.push_str(&self.config.to_dotted_toml());
        let config_path = self.out.join(RESOLVED_CONFIG_FILE);
        if !self.force && self.out.join(marker).exists() {
            let existing = fs::read_to_string(&config_path).unwrap_or_default();
            if existing == text {
                let msg = format!("up-to-date: {} (pass --force to regenerate)", self.out.display());
                self.note(&msg);
                return Ok(false);
            }
            return Err(CliError::Config(format!(
                "{} holds outputs from different settings; pass --force to overwrite",
                self.out.display()
            )));
        }
        fs::create_dir_all(&self.out).map_err(|e| CliError::io(&self.out, e))?;
        write_file(&config_path, text.as_bytes())
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<bool, CliError> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))?;
    Ok(true)
}

/// Parses `args` (program name first) and runs the command.
pub fn run_from_args<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::Config(e.to_string()))?;
    run(cli, std::env::vars(), stdout, stderr)
}

pub fn run(
    cli: Cli,
    env: impl IntoIterator<Item = (String, String)>,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<(), CliError> {
    let g = &cli.global;
    let mut layers = Vec::new();
    if let Some(path) = &g.config {
        layers.push(Layer::from_file(path)?);
    }
    layers.push(Layer::from_env(env)?);
    let mut flags = Layer::default();
    for assignment in &g.set {
        flags.set_assignment(assignment)?;
    }
    if let Some(seed) = g.seed {
        flags.set("seed", json!(seed))?;
    }
    if let Some(t) = g.threads {
        flags.set("threads", json!(t))?;
    }
    match &cli.command {
        Command::Train { train, .. } | Command::Eval { train, .. } => train.layer(&mut flags)?,
        _ => {}
    }
    layers.push(flags);
    let config = resolve(&layers)?;
    if config.threads > 0 {
        // Fails only if a pool was already installed in this process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(config.threads).build_global();
    }

    let default_out = match cli.command {
        Command::Synth => "data",
        Command::Train { .. } => "run",
        Command::Detect { .. } => "detect",
        Command::Eval { .. } => "eval",
    };
    let mut ctx = Run {
        config,
        out: g.out.clone().unwrap_or_else(|| PathBuf::from(default_out)),
        force: g.force,
        stdout,
        stderr,
    };
    match &cli.command {
        Command::Synth => cmd_synth(&mut ctx),
        Command::Train { data, .. } => cmd_train(&mut ctx, data),
        Command::Detect { checkpoint, input } => cmd_detect(&mut ctx, checkpoint, input),
        Command::Eval { data, checkpoint, .. } => cmd_eval(&mut ctx, data, checkpoint.as_deref()),
    }
}

fn cmd_synth(ctx: &mut Run) -> Result<(), CliError> {
    if !ctx.prepare_out(&["pcad synth".into()], "manifest.json")? {
        return Ok(());
    }
    let dataset = build_benchmark(&ctx.config.synth, ctx.config.seed).map_err(|e| CliError::Config(e.to_string()))?;
    write_dataset(&dataset, &ctx.out).map_err(CliError::from_dataset)?;
    let mut t = Table::new(&["category", "shape", "train", "test_good", "test_anomalous", "points"]);
    for (cat, spec) in dataset.categories.iter().zip(&ctx.config.synth.categories) {
        let anomalous = cat.test.iter().filter(|s| s.is_anomalous).count();
        t.row(vec![
            cat.name.clone(),
            spec.shape.kind().name().to_string(),
            cat.train.len().to_string(),
            (cat.test.len() - anomalous).to_string(),
            anomalous.to_string(),
            ctx.config.synth.points_per_cloud.to_string(),
        ]);
    }
    let rendered = t.render();
    ctx.say(rendered.trim_end())?;
    ctx.say(&format!("wrote {} categories to {}", dataset.categories.len(), ctx.out.display()))
}

fn load_data(path: &Path) -> Result<Dataset, CliError> {
    load_dataset(path).map_err(CliError::from_dataset)
}

/// Trains on every training cloud in `dataset`, writing checkpoints and the
/// loss curve under the output directory.
fn fit(ctx: &mut Run, dataset: &Dataset) -> Result<(Model, CheckpointMeta), CliError> {
    let samples: Vec<_> = dataset.train_samples().map(|s| (&s.cloud, s.source.clone())).collect();
    let config = ctx.config.train_config();
    let per_epoch = samples.len() as u64;
    let report_every = (config.epochs / 20).max(1);
    let ckpt_dir = ctx.out.join("checkpoints");
    let stderr = &mut *ctx.stderr;
    let outcome = train(&samples, &config, |s, model| {
        if (s.epoch + 1) % report_every == 0 || s.epoch == 0 || s.epoch + 1 == config.epochs {
            let _ = writeln!(stderr, "epoch {}, mean_loss {:.6}, lr {}", s.epoch + 1, s.mean_loss, s.lr);
        }
        if s.checkpoint_due && s.epoch + 1 < config.epochs {
            fs::create_dir_all(&ckpt_dir).map_err(|e| pcad_core::pipeline::PipelineError::Argument(e.to_string()))?;
            let meta = CheckpointMeta {
                seed: config.seed,
                epochs: s.epoch + 1,
                steps: per_epoch * (s.epoch as u64 + 1),
            };
            let path = ckpt_dir.join(format!("epoch_{:04}.ckpt", s.epoch + 1));
            save_checkpoint(&path, model, &meta)?;
        }
        Ok(())
    })?;
    write_file(&ctx.out.join("loss.csv"), loss_csv(&outcome.losses).as_bytes())?;
    let path = ctx.out.join("model.ckpt");
    save_checkpoint(&path, &outcome.model, &outcome.meta).map_err(|e| CliError::from_checkpoint(&path, e))?;
    Ok((outcome.model, outcome.meta))
}

fn cmd_train(ctx: &mut Run, data: &Path) -> Result<(), CliError> {
    let dataset = load_data(data)?;
    if !ctx.prepare_out(&["pcad train".into(), format!("data = {}", data.display())], "model.ckpt")? {
        return Ok(());
    }
    fit(ctx, &dataset)?;
    let line = format!("checkpoint {}", ctx.out.join("model.ckpt").display());
    ctx.say(&line)
}

fn load_model(path: &Path) -> Result<(Model, CheckpointMeta), CliError> {
    load_checkpoint(path).map_err(|e| CliError::from_checkpoint(path, e))
}

fn load_cloud(path: &Path) -> Result<PointCloud, CliError> {
    let loaded = match path.extension().and_then(|e| e.to_str()) {
        Some("xyz") | Some("txt") => load_xyz(path),
        _ => load_ply(path),
    };
    loaded.map_err(CliError::from_dataset)
}

fn cmd_detect(ctx: &mut Run, checkpoint: &Path, input: &Path) -> Result<(), CliError> {
    let (model, _) = load_model(checkpoint)?;
    let cloud = load_cloud(input)?;
    let header = [
        "pcad detect".to_string(),
        format!("checkpoint = {}", checkpoint.display()),
        format!("input = {}", input.display()),
    ];
    if !ctx.prepare_out(&header, "scores.csv")? {
        return Ok(());
    }
    let result = score(&cloud, &model).map_err(|e| match CliError::from(e) {
        CliError::Input(m) => CliError::Checkpoint(format!("{} does not fit the checkpoint: {m}", input.display())),
        other => other,
    })?;

    let colors: Vec<[u8; 3]> = result.point_scores.iter().map(|&s| heat_color(s)).collect();
    let ply = ctx.out.join("heatmap.ply");
    save_ply(&ply, &cloud, Some(&colors), PlyEncoding::Ascii).map_err(CliError::from_dataset)?;
    let mut csv = String::from("point_index,score,label\n");
    let labels = cloud.labels();
    for (i, s) in result.point_scores.iter().enumerate() {
        let label = labels.map(|l| (l[i] as u8).to_string()).unwrap_or_default();
        csv.push_str(&format!("{i},{s},{label}\n"));
    }
    write_file(&ctx.out.join("scores.csv"), csv.as_bytes())?;
    let max_error = result.token_errors.iter().cloned().fold(0.0, f64::max);
    ctx.say(&format!("S_o {}", result.object_score))?;
    ctx.say(&format!("max_token_error {max_error}"))?;
    let line = format!("wrote {} and {}", ply.display(), ctx.out.join("scores.csv").display());
    ctx.note(&line);
    Ok(())
}

fn cmd_eval(ctx: &mut Run, data: &Path, checkpoint: Option<&Path>) -> Result<(), CliError> {
    let dataset = load_data(data)?;
    let mut header = vec!["pcad eval".to_string(), format!("data = {}", data.display())];
    if let Some(c) = checkpoint {
        if ctx.config.ablation != Ablation::Full {
            return Err(CliError::Config(
                "--ablate trains a fresh variant; drop --checkpoint to use it".into(),
            ));
        }
        header.push(format!("checkpoint = {}", c.display()));
    } else if ctx.config.ablation == Ablation::Full {
        return Err(CliError::Config("eval needs --checkpoint, or --ablate to train a variant".into()));
    }
    if !ctx.prepare_out(&header, "report.json")? {
        return Ok(());
    }
    let (model, meta) = match checkpoint {
        Some(c) => load_model(c)?,
        None => fit(ctx, &dataset)?,
    };
    let evaluation = evaluate(&dataset, &model)?;
    let echo = json!({
        "ablation": ctx.config.ablation,
        "model": model.config,
        "training": meta,
        "categories": dataset.categories.iter().map(|c| &c.name).collect::<Vec<_>>(),
        "error_range": evaluation.error_range,
    });
    let report = EvalReport::new(&evaluation, echo, meta.seed);
    let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
    text.push('\n');
    write_file(&ctx.out.join("report.json"), text.as_bytes())?;
    let rendered = report_table(&evaluation).render();
    ctx.say(rendered.trim_end())?;
    ctx.say(&format!("run {}", report.run_id))
}

/// Per-category table with the exact numbers written to the report.
pub fn report_table(evaluation: &Evaluation) -> Table {
    let num = |v: f64| serde_json::to_string(&v).expect("finite metric");
    let mut t = Table::new(&["category", "O-AUROC", "P-AUROC", "samples", "points"]);
    for c in &evaluation.categories {
        t.row(vec![
            c.category.clone(),
            num(c.o_auroc),
            num(c.p_auroc),
            c.n_samples.to_string(),
            c.n_points.to_string(),
        ]);
    }
    t.row(vec![
        "Mean".into(),
        num(evaluation.mean.o_auroc),
        num(evaluation.mean.p_auroc),
        String::new(),
        String::new(),
    ]);
    t
}
