//! Command-line surface: data preparation, training, evaluation, ablation,
//! hyperparameter sweeps and the complexity benchmark.

pub mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use sigma_core::bench::{self, BenchConfig, BenchRow};
use sigma_core::data::{self, DatasetStats, SplitOptions, TrainRows};
use sigma_core::eval::{self, popularity_ranks, EvalReport, Metric, OVERALL};
use sigma_core::train::{self, TrainOutcome, EVAL_BATCH};
use sigma_core::{checkpoint, Ablation, ErrorCategory, Part, Precision, Scalar, SigmaModel, SplitDataset};

pub use config::{DataConfig, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "sigma", version, about = "SIGMA sequential recommender")]
pub struct Cli {
    /// Worker threads for evaluation; 1 gives fully sequential runs.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Filter a TSV interaction log and write a leave-one-out split.
    Prepare(PrepareArgs),
    /// Train a model on a prepared split.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a prepared split.
    Eval(EvalArgs),
    /// Train the default model and its three ablations with a shared seed.
    Ablate(TrainArgs),
    /// Train over a grid of flip lengths and layer counts.
    Sweep(SweepArgs),
    /// Time forward passes of SIGMA and an attention reference.
    Bench(BenchArgs),
    /// Write a synthetic interaction log.
    Synth(SynthArgs),
}

#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// TOML or JSON run configuration; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    /// Number of most recent items the partial flip keeps in place.
    #[arg(long)]
    pub flip_keep: Option<usize>,
    #[arg(long)]
    pub d_state: Option<usize>,
    #[arg(long)]
    pub d_conv: Option<usize>,
    #[arg(long)]
    pub expand: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// Clip gradients to this global norm.
    #[arg(long)]
    pub clip_norm: Option<f64>,
    #[arg(long, value_enum)]
    pub precision: Option<PrecisionArg>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub no_flip: bool,
    #[arg(long)]
    pub no_ds_gate: bool,
    #[arg(long)]
    pub no_fegru: bool,
    /// Use a separate output embedding instead of the input one.
    #[arg(long)]
    pub untied: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum PrecisionArg {
    F32,
    F64,
}

impl ConfigArgs {
    pub fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut c = RunConfig::load_or_default(self.config.as_deref())?;
        macro_rules! set {
            ($($field:ident => $($path:ident).+),* $(,)?) => {
                $(if let Some(v) = self.$field { c.$($path).+ = v; })*
            };
        }
        set!(
            max_len => data.max_len,
            dim => model.dim,
            layers => model.layers,
            flip_keep => model.flip_keep,
            d_state => model.d_state,
            d_conv => model.d_conv,
            expand => model.expand,
            dropout => model.dropout,
            lr => train.lr,
            batch_size => train.batch_size,
            epochs => train.epochs,
            seed => train.seed,
            eval_every => train.eval_every,
            patience => train.patience,
            runs => runs,
        );
        if let Some(v) = self.clip_norm {
            c.train.clip_norm = Some(v);
        }
        if let Some(p) = self.precision {
            c.train.precision = match p {
                PrecisionArg::F32 => Precision::F32,
                PrecisionArg::F64 => Precision::F64,
            };
        }
        c.model.ablation.no_flip |= self.no_flip;
        c.model.ablation.no_ds_gate |= self.no_ds_gate;
        c.model.ablation.no_fegru |= self.no_fegru;
        if self.untied {
            c.model.tie_weights = false;
        }
        c.model.max_len = c.data.max_len;
        if c.runs == 0 {
            bail!(sigma_core::Error::Config("runs must be positive".into()));
        }
        Ok(c)
    }
}

#[derive(Args, Debug)]
pub struct PrepareArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Output directory for split.json and stats.json.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub min_count: Option<usize>,
    /// Keep only the most recent interactions per user.
    #[arg(long)]
    pub cap: Option<usize>,
    /// Emit a training row for every prefix of the training portion.
    #[arg(long)]
    pub prefixes: bool,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub split: PathBuf,
    /// Run directory.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub split: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub part: PartArg,
    #[arg(long, value_delimiter = ',', default_value = "10")]
    pub cutoffs: Vec<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum PartArg {
    Valid,
    Test,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub base: TrainArgs,
    #[arg(long, value_delimiter = ',', default_value = "0,1,3,5,7,9")]
    pub keeps: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub depths: Vec<usize>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "128,256,512")]
    pub lengths: Vec<usize>,
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    #[arg(long, default_value_t = 7)]
    pub reps: usize,
    #[arg(long, default_value_t = 2)]
    pub warmup: usize,
    /// Also write bench.csv and bench.json here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SynthKind {
    Cyclic,
    Strided,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, value_enum)]
    pub kind: SynthKind,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub users: usize,
    #[arg(long, default_value_t = 50)]
    pub items: usize,
    #[arg(long, default_value_t = 10)]
    pub len: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Step sizes for the strided generator.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
    pub strides: Vec<usize>,
    /// Fraction of strided users with only 4 or 5 interactions.
    #[arg(long, default_value_t = 0.5)]
    pub short_frac: f64,
}

/// Invalid combination of command-line arguments.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: &str) -> anyhow::Error {
    UsageError(msg.to_string()).into()
}

/// Process exit code for an error: 2 usage, 3 config, 4 data, 5 io,
/// 6 numeric, 7 contract, 1 anything else.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    if err.chain().any(|e| e.is::<UsageError>()) {
        return 2;
    }
    let core = err.chain().find_map(|e| e.downcast_ref::<sigma_core::Error>());
    match core.map(sigma_core::Error::category) {
        Some(ErrorCategory::Config) => 3,
        Some(ErrorCategory::Data) => 4,
        Some(ErrorCategory::Io) => 5,
        Some(ErrorCategory::Numeric) => 6,
        Some(ErrorCategory::Contract) => 7,
        None if err.chain().any(|e| e.downcast_ref::<std::io::Error>().is_some()) => 5,
        None => 1,
    }
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match cli.command {
        Command::Prepare(a) => prepare(&a),
        Command::Train(a) => train_cmd(&a),
        Command::Eval(a) => eval_cmd(&a),
        Command::Ablate(a) => ablate(&a),
        Command::Sweep(a) => sweep(&a),
        Command::Bench(a) => bench_cmd(&a),
        Command::Synth(a) => synth(&a),
    }
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).map_err(|e| sigma_core::Error::io(dir, e).into())
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> anyhow::Result<()> {
    fs::write(path, bytes).map_err(|e| sigma_core::Error::io(path, e).into())
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> anyhow::Result<()> {
    write_file(path, serde_json::to_string_pretty(v)? + "\n")
}

fn write_report(dir: &Path, stem: &str, report: &EvalReport) -> anyhow::Result<()> {
    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    write_file(&dir.join(format!("{stem}.csv")), csv)?;
    write_file(&dir.join(format!("{stem}.json")), report.to_json()? + "\n")
}

pub fn prepare(a: &PrepareArgs) -> anyhow::Result<()> {
    let mut cfg = a.cfg.resolve()?;
    if let Some(m) = a.min_count {
        cfg.data.min_count = m;
    }
    if a.cap.is_some() {
        cfg.data.cap = a.cap;
    }
    if a.prefixes {
        cfg.data.train_rows = TrainRows::Prefixes;
    }
    let raw = data::ingest(&a.input)?;
    let filtered = data::filter_and_bound(raw, cfg.data.min_count, cfg.data.cap);
    let split = data::split_leave_one_out(
        &filtered,
        SplitOptions {
            max_len: cfg.data.max_len,
            train_rows: cfg.data.train_rows,
        },
    )?;
    create_dir(&a.out)?;
    split.save_json(&a.out.join("split.json"))?;
    let stats = DatasetStats::of(&filtered);
    write_json(&a.out.join("stats.json"), &stats)?;
    cfg.save(&a.out.join("config.json"))?;
    println!("{}", stats.table());
    Ok(())
}

fn load_split(path: &Path) -> anyhow::Result<SplitDataset> {
    Ok(SplitDataset::load_json(path)?)
}

/// Outputs of one training run, in a common precision for reporting.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub valid: Option<EvalReport>,
    pub test: EvalReport,
    pub best_epoch: Option<usize>,
}

fn train_typed<T: Scalar>(cfg: &RunConfig, split: &SplitDataset, dir: &Path) -> anyhow::Result<RunResult> {
    let mut model_cfg = cfg.model.clone();
    model_cfg.num_items = split.num_items();
    model_cfg.max_len = split.options.max_len;
    let model = SigmaModel::<T>::new(model_cfg, cfg.train.seed)?;
    let mut log_file = fs::File::create(dir.join("train_log.csv"))
        .map_err(|e| sigma_core::Error::io(dir.join("train_log.csv"), e))?;
    writeln!(log_file, "{}", sigma_core::EpochLog::CSV_HEADER)?;
    let mut log_err = None;
    let TrainOutcome {
        best,
        best_epoch,
        best_valid,
        ..
    } = train::train(model, split, &cfg.train, |e| {
        if let Err(err) = writeln!(log_file, "{}", e.csv_line()) {
            log_err.get_or_insert(err);
        }
    })?;
    if let Some(err) = log_err {
        return Err(sigma_core::Error::io(dir.join("train_log.csv"), err).into());
    }
    checkpoint::save(&best, &dir.join("model.ckpt"))?;
    let test = eval::evaluate(&best, split, Part::Test, EVAL_BATCH, &[5, 10, 20])?;
    write_report(dir, "test_report", &test)?;
    if let Some(v) = &best_valid {
        write_report(dir, "valid_report", v)?;
    }
    Ok(RunResult {
        valid: best_valid,
        test,
        best_epoch,
    })
}

/// Train once with `cfg` into `dir`, echoing the resolved config there.
pub fn train_run(cfg: &RunConfig, split: &SplitDataset, dir: &Path) -> anyhow::Result<RunResult> {
    create_dir(dir)?;
    let mut echo = cfg.clone();
    echo.model.num_items = split.num_items();
    echo.model.max_len = split.options.max_len;
    echo.data.max_len = split.options.max_len;
    echo.save(&dir.join("config.json"))?;
    match cfg.train.precision {
        Precision::F32 => train_typed::<f32>(cfg, split, dir),
        Precision::F64 => train_typed::<f64>(cfg, split, dir),
    }
}

fn summary_line(label: &str, r: &EvalReport) -> String {
    let g = |m| r.get(m, 10, OVERALL).unwrap_or(f64::NAN);
    format!(
        "{label},{:.6},{:.6},{:.6}",
        g(Metric::Hr),
        g(Metric::Ndcg),
        g(Metric::Mrr)
    )
}

pub fn train_cmd(a: &TrainArgs) -> anyhow::Result<()> {
    let cfg = a.cfg.resolve()?;
    let split = load_split(&a.split)?;
    if cfg.runs == 1 {
        let r = train_run(&cfg, &split, &a.out)?;
        println!("run,hr10,ndcg10,mrr10\n{}", summary_line("test", &r.test));
        return Ok(());
    }
    let mut lines = vec!["run,seed,hr10,ndcg10,mrr10".to_string()];
    for i in 0..cfg.runs {
        let mut c = cfg.clone();
        c.train.seed = cfg.train.seed + i as u64;
        c.runs = 1;
        let r = train_run(&c, &split, &a.out.join(format!("run{i}")))?;
        lines.push(summary_line(&format!("{i},{}", c.train.seed), &r.test));
    }
    let text = lines.join("\n") + "\n";
    write_file(&a.out.join("runs.csv"), &text)?;
    print!("{text}");
    Ok(())
}

pub fn eval_cmd(a: &EvalArgs) -> anyhow::Result<()> {
    let split = load_split(&a.split)?;
    let bytes = fs::read(&a.checkpoint).map_err(|e| sigma_core::Error::io(&a.checkpoint, e))?;
    let part = match a.part {
        PartArg::Valid => Part::Valid,
        PartArg::Test => Part::Test,
    };
    if a.cutoffs.is_empty() || a.cutoffs.contains(&0) {
        return Err(usage("cutoffs must be positive"));
    }
    let report = match checkpoint::peek(&bytes)?.0 {
        Precision::F32 => {
            let m = checkpoint::from_bytes::<f32>(&bytes)?;
            eval::evaluate(&m, &split, part, EVAL_BATCH, &a.cutoffs)?
        }
        Precision::F64 => {
            let m = checkpoint::from_bytes::<f64>(&bytes)?;
            eval::evaluate(&m, &split, part, EVAL_BATCH, &a.cutoffs)?
        }
    };
    create_dir(&a.out)?;
    write_report(&a.out, "report", &report)?;
    let pop = eval::grouped_report(&popularity_ranks(&split, part), &split.groups, &a.cutoffs);
    write_report(&a.out, "popularity_report", &pop)?;
    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    print!("{}", String::from_utf8_lossy(&csv));
    Ok(())
}

/// The default model and the three single-component ablations.
pub fn ablation_variants() -> [(&'static str, Ablation); 4] {
    [
        ("default", Ablation::default()),
        ("no_flip", Ablation { no_flip: true, ..Default::default() }),
        ("no_ds_gate", Ablation { no_ds_gate: true, ..Default::default() }),
        ("no_fegru", Ablation { no_fegru: true, ..Default::default() }),
    ]
}

pub fn ablate(a: &TrainArgs) -> anyhow::Result<()> {
    let cfg = a.cfg.resolve()?;
    let split = load_split(&a.split)?;
    let mut lines = vec!["variant,label,hr10,ndcg10,mrr10".to_string()];
    for (name, abl) in ablation_variants() {
        let mut c = cfg.clone();
        c.model.ablation = abl;
        c.runs = 1;
        let r = train_run(&c, &split, &a.out.join(name))?;
        lines.push(summary_line(&format!("{name},{}", abl.label()), &r.test));
    }
    let text = lines.join("\n") + "\n";
    write_file(&a.out.join("ablation.csv"), &text)?;
    print!("{text}");
    Ok(())
}

pub fn sweep(a: &SweepArgs) -> anyhow::Result<()> {
    let cfg = a.base.cfg.resolve()?;
    let split = load_split(&a.base.split)?;
    if a.keeps.is_empty() || a.depths.is_empty() || a.depths.contains(&0) {
        return Err(usage("sweep needs flip lengths and positive depths"));
    }
    let mut lines = vec!["flip_keep,layers,hr10,ndcg10,mrr10".to_string()];
    for &layers in &a.depths {
        for &keep in &a.keeps {
            let mut c = cfg.clone();
            c.model.flip_keep = keep;
            c.model.layers = layers;
            c.runs = 1;
            let r = train_run(&c, &split, &a.base.out.join(format!("r{keep}_l{layers}")))?;
            lines.push(summary_line(&format!("{keep},{layers}"), &r.test));
        }
    }
    let text = lines.join("\n") + "\n";
    write_file(&a.base.out.join("sweep.csv"), &text)?;
    print!("{text}");
    Ok(())
}

pub fn bench_table(rows: &[BenchRow]) -> String {
    let mut s = String::from("model,len,median_ms,ratio\n");
    for r in rows {
        let ratio = r.ratio.map(|x| format!("{x:.3}")).unwrap_or_default();
        s.push_str(&format!("{},{},{:.3},{}\n", r.model, r.len, r.median_ms, ratio));
    }
    s
}

pub fn bench_cmd(a: &BenchArgs) -> anyhow::Result<()> {
    if a.lengths.is_empty() || a.lengths.contains(&0) {
        return Err(usage("bench needs at least one positive length"));
    }
    let cfg = BenchConfig {
        lengths: a.lengths.clone(),
        batch: a.batch,
        dim: a.dim,
        warmup: a.warmup,
        reps: a.reps,
        ..Default::default()
    };
    let rows = bench::run(&cfg)?;
    let table = bench_table(&rows);
    if let Some(dir) = &a.out {
        create_dir(dir)?;
        write_file(&dir.join("bench.csv"), &table)?;
        write_json(&dir.join("bench.json"), &rows)?;
    }
    print!("{table}");
    Ok(())
}

pub fn synth(a: &SynthArgs) -> anyhow::Result<()> {
    let seqs = match a.kind {
        SynthKind::Cyclic => data::synth::cyclic(a.users, a.items, a.len, a.seed),
        SynthKind::Strided => {
            if a.strides.is_empty() {
                return Err(usage("at least one stride is required"));
            }
            data::synth::strided(a.users, a.items, &a.strides, a.short_frac, (a.len, a.len * 2), a.seed)
        }
    };
    let f = fs::File::create(&a.out).map_err(|e| sigma_core::Error::io(&a.out, e))?;
    data::write_tsv(&seqs, std::io::BufWriter::new(f))?;
    Ok(())
}
