//! The five transformation tasks: paired datasets, evaluation against the
//! identity baseline, scatter export, and the hyperparameter grid.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::sync::Mutex;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acoustics::{
    derived_rng, sample_model, AcousticModel, ArrayGeometry, FrequencyGrid, SimulationVariant,
    Simulator, PAPER_BINS, PAPER_MICS,
};
use crate::csm::{
    accuracy, build_csm, csm_distance, normalize_slices, CsmRecord, CsmTensor, CsmdFile,
    SliceMetricParams,
};
use crate::cxnn::ActivationSpec;
use crate::error::{Error, Result};
use crate::gan::{
    test_accuracy, train_loop, GanArchitecture, GanModel, Generator, PairSlices, TrainConfig,
};

const TAG_HPO: u64 = 201;

/// Transformation task 1 to 5.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct TaskId(u8);

impl TaskId {
    pub const ALL: [TaskId; 5] = [TaskId(1), TaskId(2), TaskId(3), TaskId(4), TaskId(5)];

    pub fn new(id: u8) -> Result<Self> {
        if (1..=5).contains(&id) {
            Ok(TaskId(id))
        } else {
            Err(Error::validation("task", format!("{id} is not in 1..=5")))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn description(self) -> &'static str {
        match self.0 {
            1 => "auto-encoder",
            2 => "ambient removal",
            3 => "reflection removal",
            4 => "directivity removal",
            _ => "ambient, reflection and directivity removal",
        }
    }

    /// Task whose variant pair has these flag bits.
    pub fn from_variant_bits(x: u8, y: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|t| {
            let (vx, vy) = task_variants(*t);
            vx.bits() == x && vy.bits() == y
        })
    }
}

impl TryFrom<u8> for TaskId {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        Self::new(v)
    }
}

impl From<TaskId> for u8 {
    fn from(t: TaskId) -> u8 {
        t.0
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// `(x, y)` simulation variants. Everything not toggled by the task stays at the
/// monopole, reflection-free, ambient-free baseline.
pub fn task_variants(task: TaskId) -> (SimulationVariant, SimulationVariant) {
    let base = SimulationVariant::BASELINE;
    let x = match task.0 {
        1 => base,
        2 => SimulationVariant {
            ambient: true,
            ..base
        },
        3 => SimulationVariant {
            reflections: true,
            ..base
        },
        4 => SimulationVariant {
            directivity: true,
            ..base
        },
        _ => SimulationVariant::ALL,
    };
    (x, base)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Scale {
    Desk,
    Paper,
}

impl Scale {
    pub fn profile(self) -> ScaleProfile {
        match self {
            Scale::Desk => ScaleProfile {
                scale: self,
                mics: 12,
                bins: 4,
                train_models: 256,
                test_models: 64,
                arch: GanArchitecture::desk(),
            },
            Scale::Paper => ScaleProfile {
                scale: self,
                mics: PAPER_MICS,
                bins: PAPER_BINS,
                train_models: 2560,
                test_models: 512,
                arch: GanArchitecture::paper_best(),
            },
        }
    }
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scale::Desk => "desk",
            Scale::Paper => "paper",
        })
    }
}

/// Tensor dimensions, model counts and default architecture of a run size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleProfile {
    pub scale: Scale,
    pub mics: usize,
    pub bins: usize,
    pub train_models: usize,
    pub test_models: usize,
    pub arch: GanArchitecture,
}

impl ScaleProfile {
    pub fn array(&self) -> ArrayGeometry {
        ArrayGeometry::standard(self.mics)
    }

    pub fn grid(&self) -> FrequencyGrid {
        if self.bins == PAPER_BINS {
            FrequencyGrid::full()
        } else {
            FrequencyGrid::spread(self.bins)
        }
    }

    /// Model indices of a role: train `[0, M)`, test `[M, M + M_test)`.
    pub fn model_range(&self, role: Role) -> std::ops::Range<u64> {
        let m = self.train_models as u64;
        match role {
            Role::Train => 0..m,
            Role::Test => m..m + self.test_models as u64,
        }
    }

    pub fn context(&self) -> SimulationContext {
        SimulationContext {
            simulator: Simulator::default(),
            array: self.array(),
            grid: self.grid(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    Train,
    Test,
}

impl Role {
    pub fn file_name(self) -> &'static str {
        match self {
            Role::Train => "train.csmd",
            Role::Test => "test.csmd",
        }
    }
}

/// Simulator, microphone array and frequency bins shared by a dataset build.
#[derive(Debug, Clone)]
pub struct SimulationContext {
    pub simulator: Simulator,
    pub array: ArrayGeometry,
    pub grid: FrequencyGrid,
}

impl SimulationContext {
    /// Normalized CSM of one model under one variant.
    pub fn csm(&self, model: &AcousticModel, variant: SimulationVariant) -> Result<CsmTensor> {
        let p = self
            .simulator
            .simulate(model, &self.array, &self.grid, variant)?;
        Ok(normalize_slices(&build_csm(&p)))
    }
}

/// Normalized CSMs keyed by `(model index, variant bits)`, so a variant shared by
/// several tasks is simulated once.
#[derive(Debug, Default)]
pub struct VariantCache {
    map: Mutex<HashMap<(u64, u8), CsmTensor>>,
}

impl VariantCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.map.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get_or_simulate(
        &self,
        ctx: &SimulationContext,
        model: &AcousticModel,
        variant: SimulationVariant,
    ) -> Result<CsmTensor> {
        let key = (model.index, variant.bits());
        if let Some(c) = self.map.lock().expect("cache lock").get(&key) {
            return Ok(c.clone());
        }
        let c = ctx.csm(model, variant)?;
        self.map.lock().expect("cache lock").insert(key, c.clone());
        Ok(c)
    }
}

/// Paired `(x_i, y_i = f(x_i))` tensors of one task and role.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskDataset {
    pub task: TaskId,
    pub role: Role,
    pub mics: usize,
    pub bins: usize,
    pub model_indices: Vec<u64>,
    pub x: Vec<CsmTensor>,
    pub y: Vec<CsmTensor>,
}

impl TaskDataset {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn pairs(&self) -> PairSlices<'_> {
        PairSlices {
            x: &self.x,
            y: &self.y,
        }
    }

    /// Records `x_0, y_0, x_1, y_1, …` tagged with the variant bits.
    pub fn to_csmd(&self) -> Result<CsmdFile> {
        let (vx, vy) = task_variants(self.task);
        let mut file = CsmdFile::new(self.mics, self.bins);
        for ((idx, x), y) in self.model_indices.iter().zip(&self.x).zip(&self.y) {
            file.push(CsmRecord {
                model_index: *idx,
                variant: vx.bits(),
                csm: x.clone(),
            })?;
            file.push(CsmRecord {
                model_index: *idx,
                variant: vy.bits(),
                csm: y.clone(),
            })?;
        }
        Ok(file)
    }

    pub fn from_csmd(file: CsmdFile, role: Role) -> Result<Self> {
        let bad = |r: String| Error::format("task dataset", r);
        if file.records.len() % 2 != 0 {
            return Err(bad("odd record count".into()));
        }
        let mut task = None;
        let mut ds = TaskDataset {
            task: TaskId(1),
            role,
            mics: file.mics,
            bins: file.bins,
            model_indices: Vec::new(),
            x: Vec::new(),
            y: Vec::new(),
        };
        let mut it = file.records.into_iter();
        while let (Some(x), Some(y)) = (it.next(), it.next()) {
            if x.model_index != y.model_index {
                return Err(bad(format!(
                    "pair mixes models {} and {}",
                    x.model_index, y.model_index
                )));
            }
            let t = TaskId::from_variant_bits(x.variant, y.variant).ok_or_else(|| {
                bad(format!(
                    "variant pair ({}, {}) matches no task",
                    x.variant, y.variant
                ))
            })?;
            if *task.get_or_insert(t) != t {
                return Err(bad("records from more than one task".into()));
            }
            ds.model_indices.push(x.model_index);
            ds.x.push(x.csm);
            ds.y.push(y.csm);
        }
        ds.task = task.ok_or_else(|| bad("no records".into()))?;
        Ok(ds)
    }
}

/// Simulate both variants of every model and pair the normalized CSMs.
pub fn build_task_dataset(
    models: &[AcousticModel],
    task: TaskId,
    role: Role,
    ctx: &SimulationContext,
    cache: &VariantCache,
) -> Result<TaskDataset> {
    let (vx, vy) = task_variants(task);
    let pairs: Vec<(CsmTensor, CsmTensor)> = models
        .par_iter()
        .map(|m| {
            let x = cache.get_or_simulate(ctx, m, vx)?;
            let y = if vx == vy {
                x.clone()
            } else {
                cache.get_or_simulate(ctx, m, vy)?
            };
            Ok((x, y))
        })
        .collect::<Result<_>>()?;
    let (x, y) = pairs.into_iter().unzip();
    Ok(TaskDataset {
        task,
        role,
        mics: ctx.array.len(),
        bins: ctx.grid.len(),
        model_indices: models.iter().map(|m| m.index).collect(),
        x,
        y,
    })
}

/// Models of one role drawn from `seed`.
pub fn role_models(seed: u64, profile: &ScaleProfile, role: Role) -> Vec<AcousticModel> {
    profile
        .model_range(role)
        .into_par_iter()
        .map(|i| sample_model(seed, i))
        .collect()
}

/// Train and test datasets of a task at a scale.
pub fn build_datasets(
    seed: u64,
    task: TaskId,
    profile: &ScaleProfile,
    cache: &VariantCache,
) -> Result<(TaskDataset, TaskDataset)> {
    let ctx = profile.context();
    let train = build_task_dataset(
        &role_models(seed, profile, Role::Train),
        task,
        Role::Train,
        &ctx,
        cache,
    )?;
    let test = build_task_dataset(
        &role_models(seed, profile, Role::Test),
        task,
        Role::Test,
        &ctx,
        cache,
    )?;
    let overlap = train
        .model_indices
        .iter()
        .any(|i| test.model_indices.contains(i));
    assert!(!overlap, "train and test model sets overlap");
    Ok((train, test))
}

pub fn write_dataset_dir(dir: &Path, train: &TaskDataset, test: &TaskDataset) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    train.to_csmd()?.save(&dir.join(Role::Train.file_name()))?;
    test.to_csmd()?.save(&dir.join(Role::Test.file_name()))
}

pub fn read_dataset(dir: &Path, role: Role) -> Result<TaskDataset> {
    TaskDataset::from_csmd(CsmdFile::load(&dir.join(role.file_name()))?, role)
}

pub fn read_dataset_dir(dir: &Path) -> Result<(TaskDataset, TaskDataset)> {
    let train = read_dataset(dir, Role::Train)?;
    let test = read_dataset(dir, Role::Test)?;
    if train.task != test.task || train.mics != test.mics || train.bins != test.bins {
        return Err(Error::format(
            "dataset directory",
            "train and test sets disagree".to_string(),
        ));
    }
    Ok((train, test))
}

/// Accuracy of the generator and of the identity on one test sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub model_index: u64,
    pub g_acc_gen: f64,
    pub g_acc_id: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub mean_gen: f64,
    pub mean_id: f64,
}

impl EvalReport {
    fn from_rows(rows: Vec<EvalRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::domain("empty evaluation report"));
        }
        let n = rows.len() as f64;
        let mean_gen = rows.iter().map(|r| r.g_acc_gen).sum::<f64>() / n;
        let mean_id = rows.iter().map(|r| r.g_acc_id).sum::<f64>() / n;
        Ok(Self {
            rows,
            mean_gen,
            mean_id,
        })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let rows = r
            .deserialize()
            .collect::<std::result::Result<Vec<EvalRow>, _>>()?;
        Self::from_rows(rows)
    }
}

/// `g_acc^x(G) = 1 − ε(f(x), G(x))` and `g_acc^x(Id) = 1 − ε(f(x), x)` per test sample.
pub fn evaluate(generator: &Generator, test: &TaskDataset, kappa: f64) -> Result<EvalReport> {
    let params = SliceMetricParams::new(kappa, test.bins)?;
    let out = generator.generate(&test.x)?;
    let rows = (0..test.len())
        .into_par_iter()
        .map(|i| {
            Ok(EvalRow {
                model_index: test.model_indices[i],
                g_acc_gen: accuracy(&out[i], &test.y[i], &params)?,
                g_acc_id: accuracy(&test.x[i], &test.y[i], &params)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_rows(rows)
}

/// Per-sample `(model index, g_acc(G), g_acc(Id))` rows for plotting.
pub fn export_scatter(report: &EvalReport, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["model_index", "g_acc_G", "g_acc_Id"])?;
    for r in &report.rows {
        if !(r.g_acc_gen.is_finite() && r.g_acc_id.is_finite()) {
            return Err(Error::domain(format!(
                "non-finite accuracy for model {}",
                r.model_index
            )));
        }
        w.write_record([
            r.model_index.to_string(),
            r.g_acc_gen.to_string(),
            r.g_acc_id.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Fraction of pairs whose input already equals the target under the metric.
pub fn identical_pair_fraction(ds: &TaskDataset, kappa: f64) -> Result<f64> {
    let params = SliceMetricParams::new(kappa, ds.bins)?;
    let mut zero = 0usize;
    for (x, y) in ds.x.iter().zip(&ds.y) {
        if csm_distance(y, x, &params)? == 0.0 {
            zero += 1;
        }
    }
    Ok(zero as f64 / ds.len().max(1) as f64)
}

pub const GRID_N_GEN: [usize; 2] = [32, 64];
pub const GRID_N_DIS: [usize; 2] = [16, 32];
pub const GRID_N_DEN: [usize; 2] = [512, 1024];
pub const GRID_N_LAY: [usize; 4] = [1, 2, 3, 4];
pub const GRID_LR: [f64; 2] = [2e-4, 2e-5];
pub const GRID_ACTIVATIONS: [ActivationSpec; 4] = [
    ActivationSpec::ModRelu { bias: -0.125 },
    ActivationSpec::ModRelu { bias: -0.25 },
    ActivationSpec::LeakyCardioid { alpha: 0.0 },
    ActivationSpec::LeakyCardioid { alpha: 0.5 },
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HpoGridPoint {
    pub index: usize,
    pub arch: GanArchitecture,
    pub lr_gen: f64,
    pub lr_dis: f64,
}

/// All grid combinations, `n_gen` varying slowest and the activation fastest.
pub fn hpo_grid() -> Vec<HpoGridPoint> {
    let mut out = Vec::with_capacity(512);
    for n_gen in GRID_N_GEN {
        for n_dis in GRID_N_DIS {
            for n_den in GRID_N_DEN {
                for n_lay in GRID_N_LAY {
                    for lr_gen in GRID_LR {
                        for lr_dis in GRID_LR {
                            for activation in GRID_ACTIVATIONS {
                                out.push(HpoGridPoint {
                                    index: out.len(),
                                    arch: GanArchitecture {
                                        n_gen,
                                        n_dis,
                                        n_den,
                                        n_lay,
                                        activation,
                                    },
                                    lr_gen,
                                    lr_dis,
                                });
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Error unless every architecture value lies on the grid.
pub fn check_on_grid(arch: &GanArchitecture, lr_gen: f64, lr_dis: f64) -> Result<()> {
    let on = |key: &str, ok: bool| {
        if ok {
            Ok(())
        } else {
            Err(Error::validation(
                key,
                "value is not on the hyperparameter grid",
            ))
        }
    };
    on("architecture.n_gen", GRID_N_GEN.contains(&arch.n_gen))?;
    on("architecture.n_dis", GRID_N_DIS.contains(&arch.n_dis))?;
    on("architecture.n_den", GRID_N_DEN.contains(&arch.n_den))?;
    on("architecture.n_lay", GRID_N_LAY.contains(&arch.n_lay))?;
    on(
        "architecture.activation",
        GRID_ACTIVATIONS.contains(&arch.activation),
    )?;
    on("optimizer.lr_gen", GRID_LR.contains(&lr_gen))?;
    on("optimizer.lr_dis", GRID_LR.contains(&lr_dis))
}

/// Which grid points to run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HpoSubset {
    All,
    First(usize),
    Indices(Vec<usize>),
}

impl std::str::FromStr for HpoSubset {
    type Err = Error;

    /// `all`, `first:K`, or a comma-separated index list.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::validation("subset", format!("cannot parse {s:?}"));
        if s == "all" {
            return Ok(HpoSubset::All);
        }
        if let Some(k) = s.strip_prefix("first:") {
            return k.parse().map(HpoSubset::First).map_err(|_| bad());
        }
        let idx = s
            .split(',')
            .map(|t| t.trim().parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| bad())?;
        if idx.iter().any(|&i| i >= 512) {
            return Err(Error::validation(
                "subset",
                "grid indices must be below 512",
            ));
        }
        Ok(HpoSubset::Indices(idx))
    }
}

impl HpoSubset {
    pub fn select(&self, grid: &[HpoGridPoint]) -> Vec<HpoGridPoint> {
        match self {
            HpoSubset::All => grid.to_vec(),
            HpoSubset::First(k) => grid.iter().take(*k).copied().collect(),
            HpoSubset::Indices(idx) => idx.iter().filter_map(|&i| grid.get(i).copied()).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HpoResult {
    pub point: HpoGridPoint,
    pub seed: u64,
    pub test_g_acc: f64,
}

/// Seed of a grid point, derived from the base seed and the point index.
pub fn point_seed(seed: u64, index: usize) -> u64 {
    derived_rng(seed, index as u64, TAG_HPO).random()
}

/// Train every point for `epochs` and rank by test accuracy, best first.
pub fn run_hpo(
    points: &[HpoGridPoint],
    train: &TaskDataset,
    test: &TaskDataset,
    base: &TrainConfig,
    epochs: usize,
) -> Result<Vec<HpoResult>> {
    let mut results = points
        .par_iter()
        .map(|p| {
            let config = TrainConfig {
                lr_gen: p.lr_gen,
                lr_dis: p.lr_dis,
                epochs,
                seed: point_seed(base.seed, p.index),
                eval_every: 0,
                ..*base
            };
            let mut model = GanModel::new(p.arch, train.mics, train.bins, &config)?;
            train_loop(&mut model, train.pairs(), None, &config, |_, _| Ok(()))?;
            let acc = test_accuracy(&model.generator, &test.x, &test.y, config.kappa)?;
            log::info!("grid point {}: g_acc {acc:.5}", p.index);
            Ok(HpoResult {
                point: *p,
                seed: config.seed,
                test_g_acc: acc,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    results.sort_by(|a, b| {
        b.test_g_acc
            .total_cmp(&a.test_g_acc)
            .then(a.point.index.cmp(&b.point.index))
    });
    Ok(results)
}

pub fn write_hpo_results(path: &Path, results: &[HpoResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "rank",
        "index",
        "n_gen",
        "n_dis",
        "n_den",
        "n_lay",
        "lr_gen",
        "lr_dis",
        "activation",
        "seed",
        "test_g_acc",
    ])?;
    for (rank, r) in results.iter().enumerate() {
        let a = &r.point.arch;
        w.write_record([
            (rank + 1).to_string(),
            r.point.index.to_string(),
            a.n_gen.to_string(),
            a.n_dis.to_string(),
            a.n_den.to_string(),
            a.n_lay.to_string(),
            r.point.lr_gen.to_string(),
            r.point.lr_dis.to_string(),
            a.activation.label(),
            r.seed.to_string(),
            r.test_g_acc.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
