use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bsl::config::RunConfig;
use bsl::datasets::{write_benchmark, BenchmarkSpec, Degradation, InMemoryDataset, Manifest, Split};
use bsl::evaluation::{
    ablation_grid, restoration_histogram, robustness_sweep, AblationData, AblationRow, MetricReport, TABLE_ROWS,
};
use bsl::evaluation::report::{write_reports_csv, write_reports_json};
use bsl::model::BslModel;
use bsl::rng::{stream, Purpose};
use bsl::shuffle::{reorder_blocks, shuffle_image, unshuffle};
use bsl::training::{files, Checkpoint, Trainer};
use bsl::{BslError, ImageTensor, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

#[derive(Parser)]
#[command(name = "bsl", version, about = "Block shuffling learning for image forgery detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic spliced-forgery benchmark.
    SynthData(SynthArgs),
    /// Train a model; writes config, logs and checkpoints to a run directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split, optionally degraded.
    Eval(EvalArgs),
    /// Evaluate a checkpoint across resize and blur ladders.
    Sweep(SweepArgs),
    /// Train and evaluate the five component-ablation rows.
    Ablate(AblateArgs),
    /// Shuffle one image and dump the intermediate panels and targets.
    InspectShuffle(InspectArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON run config; defaults are used for anything it leaves out.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config value by dotted path, e.g. `weights.alpha=0`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self, base: Option<RunConfig>) -> Result<RunConfig> {
        let cfg = match (&self.config, base) {
            (Some(path), _) => RunConfig::load(path).map_err(|e| match e {
                BslError::Io(io) => BslError::Config(format!("{}: {io}", path.display())),
                other => other,
            })?,
            (None, Some(base)) => base,
            (None, None) => RunConfig::default(),
        };
        let cfg = cfg.with_overrides(self.set.iter().map(String::as_str))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Output folder; receives `real/`, `fake/` and `manifest.csv`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 64)]
    side: usize,
    /// Real images in the training split (one fake is made per real).
    #[arg(long, default_value_t = 1000)]
    train: usize,
    #[arg(long, default_value_t = 125)]
    val: usize,
    #[arg(long, default_value_t = 250)]
    test: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Run directory. Defaults to `<runs root>/<run id>`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Root for run directories when `--out` is absent.
    #[arg(long, env = "BSL_RUN_DIR", default_value = "runs")]
    runs_root: PathBuf,
    /// Continue from a checkpoint; its config is the base for `--set`.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct CheckpointArgs {
    /// Run directory holding `best.ckpt` and `last.ckpt`.
    #[arg(long, default_value = ".")]
    run: PathBuf,
    /// `best`, `last`, or a path to a checkpoint file.
    #[arg(long, default_value = "best")]
    checkpoint: String,
    /// Manifest to evaluate on; defaults to the one in the checkpoint's config.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: SplitArg,
    /// Probability at or above which an image counts as fake.
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    ckpt: CheckpointArgs,
    /// Degradation such as `blur:7` or `resize:56`; one report each.
    #[arg(long)]
    degrade: Vec<Degradation>,
    /// Also report the restoration distance histogram.
    #[arg(long)]
    restoration: bool,
    /// Write the reports (with ROC points) to this JSON file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Ladder {
    Resize,
    Blur,
    All,
    None,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    ckpt: CheckpointArgs,
    #[arg(long, default_value = "all")]
    ladder: Ladder,
    /// Extra degradations appended after the ladder.
    #[arg(long)]
    degrade: Vec<Degradation>,
    /// Output folder for `sweep.csv` and `sweep.json`; defaults to the run directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, env = "BSL_RUN_DIR", default_value = "runs")]
    runs_root: PathBuf,
    /// Rows to run, by id.
    #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 3, 4, 5])]
    rows: Vec<usize>,
    #[arg(long)]
    degrade: Vec<Degradation>,
}

#[derive(Args)]
struct InspectArgs {
    image: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, default_value = "inspect")]
    out: PathBuf,
}

fn load_split(manifest: &Path, split: Split, cfg: &RunConfig) -> Result<InMemoryDataset> {
    let m = Manifest::read(manifest)?;
    InMemoryDataset::load(&m, split, cfg.data.input_side, cfg.data.on_error)
}

fn manifest_path(cfg: &RunConfig) -> Result<PathBuf> {
    cfg.data
        .manifest
        .clone()
        .ok_or_else(|| BslError::Config("config has no data.manifest".into()))
}

fn synth_data(args: &SynthArgs) -> Result<()> {
    let spec = BenchmarkSpec {
        side: args.side,
        train: args.train,
        val: args.val,
        test: args.test,
        seed: args.seed,
    };
    let manifest = write_benchmark(&args.out, &spec)?;
    println!("{} images, manifest {}", manifest.rows().len(), args.out.join("manifest.csv").display());
    Ok(())
}

fn train(args: &TrainArgs) -> Result<()> {
    let resume = args.resume.as_deref().map(Checkpoint::load).transpose()?;
    let cfg = args.config.resolve(resume.as_ref().map(|c| c.config.clone()))?;
    let dir = args.out.clone().unwrap_or_else(|| args.runs_root.join(cfg.run_id()));
    let manifest = manifest_path(&cfg)?;
    let side = cfg.data.input_side;
    let model = BslModel::from_config(&cfg.model, (side, side), &cfg.shuffle)?;
    let train_set = load_split(&manifest, Split::Train, &cfg)?;
    let eval_set = load_split(&manifest, cfg.data.eval_split, &cfg)?;
    info!("run {} in {}: {} train / {} eval images", cfg.run_id(), dir.display(), train_set.len(), eval_set.len());
    let trainer = Trainer::new(&model, &cfg, &train_set).with_eval(&eval_set).with_output(&dir);
    let state = match resume {
        Some(ck) => ck.state,
        None => trainer.initial_state(),
    };
    let outcome = trainer.run(state)?;
    if let Some(last) = outcome.evals.last() {
        println!("{}", serde_json::to_string(&last.report)?);
    }
    println!("{}", dir.display());
    Ok(())
}

struct Loaded {
    cfg: RunConfig,
    model: BslModel,
    checkpoint: Checkpoint,
    data: InMemoryDataset,
}

fn load_checkpoint(args: &CheckpointArgs) -> Result<Loaded> {
    let path = match args.checkpoint.as_str() {
        "best" => args.run.join(files::BEST),
        "last" => args.run.join(files::LAST),
        other => PathBuf::from(other),
    };
    if !path.is_file() {
        return Err(BslError::Config(format!("checkpoint {} not found", path.display())));
    }
    let checkpoint = Checkpoint::load(&path)?;
    let cfg = checkpoint.config.clone();
    let side = cfg.data.input_side;
    let model = BslModel::from_config(&cfg.model, (side, side), &cfg.shuffle)?;
    let manifest = match &args.manifest {
        Some(m) => m.clone(),
        None => manifest_path(&cfg)?,
    };
    let data = load_split(&manifest, args.split.into(), &cfg)?;
    Ok(Loaded {
        cfg,
        model,
        checkpoint,
        data,
    })
}

fn eval(args: &EvalArgs) -> Result<()> {
    let l = load_checkpoint(&args.ckpt)?;
    let params = &l.checkpoint.state.params;
    let threshold = args.ckpt.threshold;
    let reports: Vec<MetricReport> = if args.degrade.is_empty() {
        robustness_sweep(&l.model, params, &l.data, &[], threshold)?
    } else {
        let mut all = robustness_sweep(&l.model, params, &l.data, &args.degrade, threshold)?;
        all.remove(0);
        all
    };
    for r in &reports {
        println!("{}", serde_json::to_string(&r.summary())?);
    }
    if args.restoration {
        if l.cfg.plain_backbone {
            return Err(BslError::Unsupported("plain-backbone runs have no trained restoration head".into()));
        }
        let hist = restoration_histogram(&l.model, params, &l.data, &l.cfg.shuffle)?;
        println!(
            "{}",
            serde_json::json!({ "restoration_counts": hist.counts, "within_1": hist.fraction_within(1) })
        );
    }
    if let Some(out) = &args.out {
        write_reports_json(out, &reports)?;
    }
    Ok(())
}

fn sweep(args: &SweepArgs) -> Result<()> {
    let l = load_checkpoint(&args.ckpt)?;
    let mut ladder = match args.ladder {
        Ladder::Resize => Degradation::resize_ladder(),
        Ladder::Blur => Degradation::blur_ladder(),
        Ladder::All => [Degradation::resize_ladder(), Degradation::blur_ladder()].concat(),
        Ladder::None => Vec::new(),
    };
    ladder.extend(args.degrade.iter().copied());
    let reports = robustness_sweep(&l.model, &l.checkpoint.state.params, &l.data, &ladder, args.ckpt.threshold)?;
    let out = args.out.clone().unwrap_or_else(|| args.ckpt.run.clone());
    std::fs::create_dir_all(&out)?;
    write_reports_csv(&out.join("sweep.csv"), &reports)?;
    write_reports_json(&out.join("sweep.json"), &reports)?;
    for r in &reports {
        println!("{:<12} auc {:.4} acc {:.4}", r.tag, r.auc, r.acc);
    }
    Ok(())
}

fn ablate(args: &AblateArgs) -> Result<()> {
    let cfg = args.config.resolve(None)?;
    let rows: Vec<AblationRow> = args
        .rows
        .iter()
        .map(|&id| {
            TABLE_ROWS
                .iter()
                .find(|r| r.id == id)
                .copied()
                .ok_or_else(|| BslError::Config(format!("no ablation row {id}")))
        })
        .collect::<Result<_>>()?;
    let dir = args
        .out
        .clone()
        .unwrap_or_else(|| args.runs_root.join(format!("ablate-{}", cfg.run_id())));
    let manifest = manifest_path(&cfg)?;
    let train = load_split(&manifest, Split::Train, &cfg)?;
    let val = load_split(&manifest, Split::Val, &cfg)?;
    let test = load_split(&manifest, Split::Test, &cfg)?;
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join(files::CONFIG), cfg.to_json())?;
    let data = AblationData {
        train: &train,
        val: &val,
        test: &test,
    };
    let table = ablation_grid(&cfg, &rows, &data, &args.degrade, Some(&dir))?;
    print!("{}", table.to_text());
    Ok(())
}

/// Upsamples a per-block 0/1 map to image size as a gray overlay on `base`.
fn mark_panel(base: &ImageTensor, mark: &bsl::shuffle::IntraMark, side: usize) -> ImageTensor {
    ImageTensor::from_fn(base.height(), base.width(), 3, |y, x, c| {
        let v = base.get(y, x, c.min(base.channels() - 1));
        if mark.get(y / side, x / side) == 1 {
            0.35 * v + 0.65 * [1.0, 0.2, 0.2][c]
        } else {
            0.5 * v
        }
    })
}

fn inspect_shuffle(args: &InspectArgs) -> Result<()> {
    let mut cfg = args.config.resolve(None)?;
    cfg.shuffle.seed = args.seed;
    let side = cfg.data.input_side;
    let img = bsl::datasets::load_image(&args.image, side)?;
    let mut rng = stream(args.seed, Purpose::Inspect, 0, 0);
    let outcome = shuffle_image(&img, &cfg.shuffle, &mut rng)?;
    let inter = reorder_blocks(&img, &outcome.coords, cfg.shuffle.s_inter)?;
    let restored = unshuffle(&outcome)?;
    let mark = mark_panel(&outcome.image, &outcome.mark, cfg.shuffle.s_intra);

    let panels = [&img, &inter, &outcome.image, &mark, &restored];
    let gap = 4;
    let strip = ImageTensor::from_fn(side, panels.len() * (side + gap) - gap, 3, |y, x, c| {
        let (i, xi) = (x / (side + gap), x % (side + gap));
        if xi >= side {
            1.0
        } else {
            panels[i].get(y, xi, c)
        }
    });

    std::fs::create_dir_all(&args.out)?;
    img.save_png(&args.out.join("original.png"))?;
    inter.save_png(&args.out.join("inter.png"))?;
    outcome.image.save_png(&args.out.join("shuffled.png"))?;
    mark.save_png(&args.out.join("mark.png"))?;
    restored.save_png(&args.out.join("restored.png"))?;
    strip.save_png(&args.out.join("panel.png"))?;
    let grid = |ch: usize| -> Vec<Vec<f64>> {
        let (rows, cols) = (outcome.coords.rows, outcome.coords.cols);
        (0..rows)
            .map(|i| (0..cols).map(|j| outcome.coords.m[ch * rows * cols + i * cols + j]).collect())
            .collect()
    };
    let summary = serde_json::json!({
        "seed": args.seed,
        "input_side": side,
        "s_intra": cfg.shuffle.s_intra,
        "s_inter": cfg.shuffle.s_inter,
        "q": outcome.q,
        "inter_applied": outcome.inter_applied,
        "P": outcome.mark.to_rows(),
        "M": [grid(0), grid(1)],
        "beta": outcome.coords.beta,
        "restored_exactly": restored == img,
    });
    std::fs::write(args.out.join("shuffle.json"), serde_json::to_string_pretty(&summary)?)?;
    println!("{}", args.out.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::SynthData(a) => synth_data(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Sweep(a) => sweep(a),
        Command::Ablate(a) => ablate(a),
        Command::InspectShuffle(a) => inspect_shuffle(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
