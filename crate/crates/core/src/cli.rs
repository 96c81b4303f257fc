//! Command-line front end: configuration files, run directories, and the
//! subcommands that drive dataset builds, training, evaluation and the grid search.
//!
//! A run directory holds
//!
//! ```text
//! config.echo          effective configuration (loadable as a config file)
//! epochs.csv           one row per completed epoch
//! checkpoints/         latest.ckpt, epoch-NNNN.ckpt, final.ckpt
//! scatter.csv          per-sample test accuracies of the final generator
//! ```

use std::ffi::OsString;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acoustics::{sample_model, write_model_set};
use crate::cxnn::ActivationSpec;
use crate::error::Error;
use crate::gan::{
    append_epoch_log, read_epoch_log, train_loop, GanArchitecture, GanModel, TrainConfig,
};
use crate::tasks::{
    build_datasets, evaluate, export_scatter, hpo_grid, read_dataset, read_dataset_dir, run_hpo,
    write_dataset_dir, write_hpo_results, EvalReport, HpoSubset, Role, Scale, ScaleProfile,
    TaskDataset, TaskId, VariantCache, GRID_ACTIVATIONS, GRID_LR, GRID_N_DEN, GRID_N_DIS,
    GRID_N_GEN, GRID_N_LAY,
};

pub const CONFIG_ECHO: &str = "config.echo";
pub const EPOCH_LOG: &str = "epochs.csv";
pub const SCATTER: &str = "scatter.csv";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const LATEST_CHECKPOINT: &str = "latest.ckpt";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const DATASET_MANIFEST: &str = "manifest.toml";
pub const HPO_RESULTS: &str = "hpo.csv";

#[derive(Debug, Parser)]
#[command(
    name = "csmgan",
    version,
    about = "CSM simulation and complex-valued GAN filtering"
)]
pub struct Cli {
    /// Cap on worker threads; 1 makes every artifact bit-reproducible.
    #[arg(long, global = true, env = "CSMGAN_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample acoustic models and write them as a text model set.
    GenModels {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        count: usize,
        /// Index of the first model.
        #[arg(long, default_value_t = 0)]
        start: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate the train and test sets of a task into a directory.
    BuildDataset {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=5))]
        task: u8,
        #[arg(long, value_enum, default_value_t = Scale::Desk)]
        scale: Scale,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Override the profile's training model count.
        #[arg(long)]
        train_models: Option<usize>,
        /// Override the profile's test model count.
        #[arg(long)]
        test_models: Option<usize>,
    },
    /// Train a GAN on a dataset directory.
    Train {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=5))]
        task: Option<u8>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        dataset: PathBuf,
        /// Parent of the timestamped run directory.
        #[arg(long)]
        checkpoint_dir: PathBuf,
        /// Continue the run in this directory from its latest checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the test set of a dataset directory.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Train grid points on a task-1 dataset and rank them by test accuracy.
    Hpo {
        /// Config file; architecture and learning-rate keys it sets pin those grid axes.
        #[arg(long)]
        grid: Option<PathBuf>,
        /// `all`, `first:K` or a comma-separated list of grid indices.
        #[arg(long, default_value = "all")]
        subset: String,
        /// Epochs per grid point.
        #[arg(long, default_value_t = 20)]
        budget: usize,
        #[arg(long)]
        dataset: PathBuf,
        /// Parent of the timestamped run directory.
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
    /// Turn an evaluation report into plot-ready scatter rows.
    ExportScatter {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Failure classified by exit status.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Validation(String),
    Runtime(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Validation(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Validation(m) | Failure::Runtime(m) => m,
        }
    }

    fn validation(key: &str, reason: impl std::fmt::Display) -> Self {
        Failure::Validation(format!("invalid value for `{key}`: {reason}"))
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Validation { .. } => Failure::Validation(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Runtime(format!("{}: {e}", path.display()))
}

// ---------------------------------------------------------------------------
// Configuration

/// Architecture keys; unset ones take the scale profile's values.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_gen: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_dis: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_den: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_lay: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub activation: Option<ActivationSpec>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr_gen: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr_dis: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_every: Option<usize>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedSection {
    /// Seed of the acoustic model set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub models: Option<u64>,
    /// Seed of weight initialization, shuffling and noise.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<u64>,
}

/// Contents of a config file. Every key is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scale: Option<Scale>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub task: Option<u8>,
    #[serde(default)]
    pub architecture: ArchitectureSection,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub seeds: SeedSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfigMode {
    Train,
    Hpo,
}

/// Validated configuration with defaults applied.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub profile: ScaleProfile,
    pub task: Option<TaskId>,
    pub arch: GanArchitecture,
    pub train: TrainConfig,
    pub model_seed: u64,
    /// Keys set explicitly in the file.
    pub file: ConfigFile,
}

impl RunConfig {
    /// Fully populated config file equivalent to this configuration.
    pub fn effective(&self) -> ConfigFile {
        let a = &self.arch;
        let t = &self.train;
        ConfigFile {
            scale: Some(self.profile.scale),
            task: self.task.map(TaskId::get),
            architecture: ArchitectureSection {
                n_gen: Some(a.n_gen),
                n_dis: Some(a.n_dis),
                n_den: Some(a.n_den),
                n_lay: Some(a.n_lay),
                activation: Some(a.activation),
            },
            optimizer: OptimizerSection {
                lr_gen: Some(t.lr_gen),
                lr_dis: Some(t.lr_dis),
                batch_size: Some(t.batch_size),
                epochs: Some(t.epochs),
                lambda: Some(t.lambda),
                kappa: Some(t.kappa),
                eval_every: Some(t.eval_every),
            },
            noise: NoiseSection {
                sigma: Some(t.noise_sigma),
            },
            seeds: SeedSection {
                models: Some(self.model_seed),
                train: Some(t.seed),
            },
        }
    }

    pub fn echo(&self, command: &str) -> Result<String, Failure> {
        let body = toml::to_string(&self.effective())
            .map_err(|e| Failure::Runtime(format!("cannot serialize config: {e}")))?;
        Ok(format!(
            "# csmgan {}\n# command: {command}\n{body}",
            env!("CARGO_PKG_VERSION")
        ))
    }
}

pub fn parse_config(text: &str) -> Result<ConfigFile, Failure> {
    toml::from_str(text).map_err(|e| Failure::Validation(format!("config: {e}")))
}

/// Read, default and validate a config file. `None` gives the defaults.
pub fn load_config(path: Option<&Path>, mode: ConfigMode) -> Result<RunConfig, Failure> {
    let file = match path {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| Failure::Validation(format!("config {}: {e}", p.display())))?;
            parse_config(&text)?
        }
        None => ConfigFile::default(),
    };
    resolve_config(file, mode)
}

pub fn resolve_config(file: ConfigFile, mode: ConfigMode) -> Result<RunConfig, Failure> {
    let profile = file.scale.unwrap_or(Scale::Desk).profile();
    let task = file
        .task
        .map(TaskId::new)
        .transpose()
        .map_err(|_| Failure::validation("task", "must lie in 1..=5"))?;
    let a = &file.architecture;
    let d = profile.arch;
    let arch = GanArchitecture {
        n_gen: a.n_gen.unwrap_or(d.n_gen),
        n_dis: a.n_dis.unwrap_or(d.n_dis),
        n_den: a.n_den.unwrap_or(d.n_den),
        n_lay: a.n_lay.unwrap_or(d.n_lay),
        activation: a.activation.unwrap_or(d.activation),
    };
    arch.validate()?;
    let o = &file.optimizer;
    let t = TrainConfig::default();
    let train = TrainConfig {
        batch_size: o.batch_size.unwrap_or(t.batch_size),
        lambda: o.lambda.unwrap_or(t.lambda),
        kappa: o.kappa.unwrap_or(t.kappa),
        lr_gen: o.lr_gen.unwrap_or(t.lr_gen),
        lr_dis: o.lr_dis.unwrap_or(t.lr_dis),
        noise_sigma: file.noise.sigma.unwrap_or(t.noise_sigma),
        epochs: o.epochs.unwrap_or(t.epochs),
        seed: file.seeds.train.unwrap_or(t.seed),
        eval_every: o.eval_every.unwrap_or(t.eval_every),
    };
    train.validate()?;
    if mode == ConfigMode::Hpo {
        check_pinned(&file)?;
    }
    Ok(RunConfig {
        profile,
        task,
        arch,
        train,
        model_seed: file.seeds.models.unwrap_or(0),
        file,
    })
}

/// Every grid axis fixed in the file must name a grid value.
fn check_pinned(file: &ConfigFile) -> Result<(), Failure> {
    fn on<T: PartialEq + std::fmt::Debug>(
        key: &str,
        v: Option<T>,
        grid: &[T],
    ) -> Result<(), Failure> {
        match v {
            Some(v) if !grid.contains(&v) => Err(Failure::validation(
                key,
                format!("{v:?} is not on the grid {grid:?}"),
            )),
            _ => Ok(()),
        }
    }
    let a = &file.architecture;
    on("architecture.n_gen", a.n_gen, &GRID_N_GEN)?;
    on("architecture.n_dis", a.n_dis, &GRID_N_DIS)?;
    on("architecture.n_den", a.n_den, &GRID_N_DEN)?;
    on("architecture.n_lay", a.n_lay, &GRID_N_LAY)?;
    on("architecture.activation", a.activation, &GRID_ACTIVATIONS)?;
    on("optimizer.lr_gen", file.optimizer.lr_gen, &GRID_LR)?;
    on("optimizer.lr_dis", file.optimizer.lr_dis, &GRID_LR)
}

// ---------------------------------------------------------------------------
// Entry point

/// Parse `args` (program name first), run the command and return the exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .try_init();
    match run(cli) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message());
            f.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Usage("--threads must be at least 1".into()));
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            log::warn!("thread pool already configured: {e}");
        }
    }
    let command_line = std::env::args().collect::<Vec<_>>().join(" ");
    match cli.command {
        Command::GenModels {
            seed,
            count,
            start,
            out,
        } => gen_models(seed, count, start, &out),
        Command::BuildDataset {
            task,
            scale,
            seed,
            out,
            train_models,
            test_models,
        } => build_dataset(task, scale, seed, &out, train_models, test_models),
        Command::Train {
            task,
            config,
            dataset,
            checkpoint_dir,
            resume,
        } => {
            let cfg = load_config(config.as_deref(), ConfigMode::Train)?;
            let run = train(
                &cfg,
                task,
                &dataset,
                &checkpoint_dir,
                resume.as_deref(),
                &command_line,
            )?;
            println!("{}", run.display());
            Ok(())
        }
        Command::Eval {
            checkpoint,
            dataset,
            report,
        } => eval(&checkpoint, &dataset, &report),
        Command::Hpo {
            grid,
            subset,
            budget,
            dataset,
            out,
        } => {
            let cfg = load_config(grid.as_deref(), ConfigMode::Hpo)?;
            let subset: HpoSubset = subset.parse()?;
            let run = hpo(&cfg, &subset, budget, &dataset, &out, &command_line)?;
            println!("{}", run.display());
            Ok(())
        }
        Command::ExportScatter { report, out } => {
            let report = EvalReport::read_csv(&report)?;
            export_scatter(&report, &out)?;
            Ok(())
        }
    }
}

// ---------------------------------------------------------------------------
// Commands

pub fn gen_models(seed: u64, count: usize, start: u64, out: &Path) -> Result<(), Failure> {
    let models: Vec<_> = (start..start + count as u64)
        .into_par_iter()
        .map(|i| sample_model(seed, i))
        .collect();
    let file = fs::File::create(out).map_err(|e| io_failure(out, e))?;
    let mut w = BufWriter::new(file);
    write_model_set(&mut w, &models).map_err(|e| io_failure(out, e))?;
    w.flush().map_err(|e| io_failure(out, e))
}

/// Build parameters recorded next to a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub task: u8,
    pub scale: Scale,
    pub seed: u64,
    pub mics: usize,
    pub bins: usize,
    pub train_models: usize,
    pub test_models: usize,
}

pub fn build_dataset(
    task: u8,
    scale: Scale,
    seed: u64,
    out: &Path,
    train_models: Option<usize>,
    test_models: Option<usize>,
) -> Result<(), Failure> {
    let task = TaskId::new(task)?;
    let mut profile = scale.profile();
    profile.train_models = train_models.unwrap_or(profile.train_models);
    profile.test_models = test_models.unwrap_or(profile.test_models);
    if profile.train_models == 0 || profile.test_models == 0 {
        return Err(Failure::validation(
            "models",
            "train and test counts must be positive",
        ));
    }
    let cache = VariantCache::new();
    let (train, test) = build_datasets(seed, task, &profile, &cache)?;
    write_dataset_dir(out, &train, &test)?;
    let manifest = DatasetManifest {
        task: task.get(),
        scale,
        seed,
        mics: profile.mics,
        bins: profile.bins,
        train_models: profile.train_models,
        test_models: profile.test_models,
    };
    let text = toml::to_string(&manifest).map_err(|e| Failure::Runtime(e.to_string()))?;
    let path = out.join(DATASET_MANIFEST);
    fs::write(&path, text).map_err(|e| io_failure(&path, e))?;
    log::info!(
        "task {task} ({}): {} train and {} test pairs in {}",
        task.description(),
        train.len(),
        test.len(),
        out.display()
    );
    Ok(())
}

pub fn read_manifest(dataset: &Path) -> Result<Option<DatasetManifest>, Failure> {
    let path = dataset.join(DATASET_MANIFEST);
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).map_err(|e| io_failure(&path, e))?;
    toml::from_str(&text)
        .map(Some)
        .map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))
}

fn check_dataset(cfg: &RunConfig, ds: &TaskDataset) -> Result<(), Failure> {
    let p = &cfg.profile;
    if ds.mics != p.mics || ds.bins != p.bins {
        return Err(Failure::validation(
            "scale",
            format!(
                "{} profile expects {} mics and {} bins, dataset has {} and {}",
                p.scale, p.mics, p.bins, ds.mics, ds.bins
            ),
        ));
    }
    Ok(())
}

/// Fresh `run-<timestamp>` directory under `parent`.
pub fn create_run_dir(parent: &Path, prefix: &str) -> Result<PathBuf, Failure> {
    fs::create_dir_all(parent).map_err(|e| io_failure(parent, e))?;
    let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
    for n in 0.. {
        let name = match n {
            0 => format!("{prefix}-{stamp}"),
            _ => format!("{prefix}-{stamp}-{n}"),
        };
        let dir = parent.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(io_failure(&dir, e)),
        }
    }
    unreachable!()
}

fn checkpoint_name(epoch: usize) -> String {
    format!("epoch-{epoch:04}.ckpt")
}

/// Keep only log rows for epochs up to `epoch`.
fn trim_epoch_log(path: &Path, epoch: usize) -> Result<(), Failure> {
    if !path.exists() {
        return Ok(());
    }
    let rows: Vec<_> = read_epoch_log(path)?
        .into_iter()
        .filter(|r| r.epoch <= epoch)
        .collect();
    fs::remove_file(path).map_err(|e| io_failure(path, e))?;
    append_epoch_log(path, &rows)?;
    Ok(())
}

/// Train per `cfg` and return the run directory.
pub fn train(
    cfg: &RunConfig,
    task: Option<u8>,
    dataset: &Path,
    checkpoint_dir: &Path,
    resume: Option<&Path>,
    command_line: &str,
) -> Result<PathBuf, Failure> {
    let task = match (task, cfg.task) {
        (Some(a), Some(b)) if a != b.get() => {
            return Err(Failure::validation(
                "task",
                format!("--task {a} disagrees with config task {b}"),
            ))
        }
        (Some(a), _) => Some(TaskId::new(a)?),
        (None, t) => t,
    };
    let (train_set, test_set) = read_dataset_dir(dataset)?;
    if let Some(t) = task {
        if t != train_set.task {
            return Err(Failure::validation(
                "task",
                format!(
                    "requested task {t} but the dataset holds task {}",
                    train_set.task
                ),
            ));
        }
    }
    check_dataset(cfg, &train_set)?;
    let mut cfg = cfg.clone();
    cfg.task = Some(train_set.task);
    if let Some(m) = read_manifest(dataset)? {
        match cfg.file.seeds.models {
            Some(s) if s != m.seed => {
                return Err(Failure::validation(
                    "seeds.models",
                    format!("{s} disagrees with the dataset seed {}", m.seed),
                ))
            }
            _ => cfg.model_seed = m.seed,
        }
    }

    let (run_dir, mut model) = match resume {
        Some(dir) => {
            let ck = dir.join(CHECKPOINT_DIR).join(LATEST_CHECKPOINT);
            let (model, saved) = GanModel::load(&ck)?;
            if saved != cfg.train || model.arch != cfg.arch {
                return Err(Failure::validation(
                    "resume",
                    "configuration differs from the one the run was started with",
                ));
            }
            trim_epoch_log(&dir.join(EPOCH_LOG), model.epoch)?;
            log::info!("resuming {} after epoch {}", dir.display(), model.epoch);
            (dir.to_path_buf(), model)
        }
        None => {
            let dir = create_run_dir(checkpoint_dir, "run")?;
            let ck = dir.join(CHECKPOINT_DIR);
            fs::create_dir_all(&ck).map_err(|e| io_failure(&ck, e))?;
            let echo = dir.join(CONFIG_ECHO);
            fs::write(&echo, cfg.echo(command_line)?).map_err(|e| io_failure(&echo, e))?;
            let model = GanModel::new(cfg.arch, train_set.mics, train_set.bins, &cfg.train)?;
            (dir, model)
        }
    };
    let ck_dir = run_dir.join(CHECKPOINT_DIR);
    let log_path = run_dir.join(EPOCH_LOG);
    let config = cfg.train;
    train_loop(
        &mut model,
        train_set.pairs(),
        Some(test_set.pairs()),
        &config,
        |m, rec| {
            append_epoch_log(&log_path, std::slice::from_ref(rec))?;
            m.save(&ck_dir.join(LATEST_CHECKPOINT), &config)?;
            if config.eval_every > 0 && rec.epoch % config.eval_every == 0 {
                m.save(&ck_dir.join(checkpoint_name(rec.epoch)), &config)?;
            }
            Ok(())
        },
    )?;
    model.save(&ck_dir.join(FINAL_CHECKPOINT), &config)?;
    let report = evaluate(&model.generator, &test_set, config.kappa)?;
    export_scatter(&report, &run_dir.join(SCATTER))?;
    log::info!(
        "task {}: g_acc(G) = {:.6}, g_acc(Id) = {:.6}",
        train_set.task,
        report.mean_gen,
        report.mean_id
    );
    Ok(run_dir)
}

pub fn eval(checkpoint: &Path, dataset: &Path, report_path: &Path) -> Result<(), Failure> {
    let (model, config) = GanModel::load(checkpoint)?;
    let test = read_dataset(dataset, Role::Test)?;
    if test.mics != model.mics() || test.bins != model.bins() {
        return Err(Failure::validation(
            "dataset",
            format!(
                "checkpoint expects {} mics and {} bins, dataset has {} and {}",
                model.mics(),
                model.bins(),
                test.mics,
                test.bins
            ),
        ));
    }
    let report = evaluate(&model.generator, &test, config.kappa)?;
    report.write_csv(report_path)?;
    println!(
        "task {}: g_acc(G) = {:.6}, g_acc(Id) = {:.6} over {} samples",
        test.task,
        report.mean_gen,
        report.mean_id,
        report.rows.len()
    );
    Ok(())
}

/// Run the selected grid points and return the run directory holding the ranking.
pub fn hpo(
    cfg: &RunConfig,
    subset: &HpoSubset,
    budget: usize,
    dataset: &Path,
    out: &Path,
    command_line: &str,
) -> Result<PathBuf, Failure> {
    if budget == 0 {
        return Err(Failure::validation("budget", "must be at least one epoch"));
    }
    let (train_set, test_set) = read_dataset_dir(dataset)?;
    if train_set.task != TaskId::new(1)? {
        return Err(Failure::validation(
            "dataset",
            format!(
                "the grid search runs on task 1, dataset holds task {}",
                train_set.task
            ),
        ));
    }
    check_dataset(cfg, &train_set)?;
    let a = &cfg.file.architecture;
    let o = &cfg.file.optimizer;
    let points: Vec<_> = subset
        .select(&hpo_grid())
        .into_iter()
        .filter(|p| {
            a.n_gen.is_none_or(|v| v == p.arch.n_gen)
                && a.n_dis.is_none_or(|v| v == p.arch.n_dis)
                && a.n_den.is_none_or(|v| v == p.arch.n_den)
                && a.n_lay.is_none_or(|v| v == p.arch.n_lay)
                && a.activation.is_none_or(|v| v == p.arch.activation)
                && o.lr_gen.is_none_or(|v| v == p.lr_gen)
                && o.lr_dis.is_none_or(|v| v == p.lr_dis)
        })
        .collect();
    if points.is_empty() {
        return Err(Failure::validation("subset", "selects no grid points"));
    }
    let dir = create_run_dir(out, "hpo")?;
    let echo = dir.join(CONFIG_ECHO);
    fs::write(&echo, cfg.echo(command_line)?).map_err(|e| io_failure(&echo, e))?;
    log::info!(
        "training {} grid points for {budget} epochs each",
        points.len()
    );
    let results = run_hpo(&points, &train_set, &test_set, &cfg.train, budget)?;
    write_hpo_results(&dir.join(HPO_RESULTS), &results)?;
    if let Some(best) = results.first() {
        log::info!(
            "best grid point {}: g_acc {:.6}",
            best.point.index,
            best.test_g_acc
        );
    }
    Ok(dir)
}
