//! End-to-end experiments: configuration, data generation, training per
//! task, evaluation with matching, baselines and missing-fraction sweeps.
//! Every stage can read and write its artifacts in an output directory.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    mask_hidden, simulate, split, windowize, DatasetManifest, Dynamics, ObservedView, Split, Trajectories,
    TrajectoryDataset, WindowMode,
};
use crate::error::{GinError, Result};
use crate::graph::{
    datasets, generate_ba, generate_er, generate_ws, load_edge_list, partition_nodes, unobserved_mask,
    AdjacencyMask, Graph, NodePartition,
};
use crate::matching::{apply_match, match_with_restarts, MatchProblem, MatchResult};
use crate::metrics::{
    auc, compare_structure, mi_baseline, pcorr_baseline, score_completion, score_states, structure_auc,
    write_stat_table, ContrastMatrix, EvalReport,
};
use crate::model::{EdgeDraw, GinParameters};
use crate::train::{complete_blind, refit_hidden, train, Task, TrainConfig, TrainLog};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NetworkSpec {
    Er { n: usize, p: f64 },
    Ws { n: usize, k: usize, p_rewire: f64 },
    Ba { n: usize, m0: usize, k: usize },
    Karate,
    File { path: PathBuf, n: Option<usize> },
}

impl NetworkSpec {
    pub fn build(&self, seed: u64) -> Result<Graph> {
        match self {
            NetworkSpec::Er { n, p } => generate_er(*n, *p, seed),
            NetworkSpec::Ws { n, k, p_rewire } => generate_ws(*n, *k, *p_rewire, seed),
            NetworkSpec::Ba { n, m0, k } => generate_ba(*n, *m0, *k, seed),
            NetworkSpec::Karate => Ok(datasets::karate()),
            NetworkSpec::File { path, n } => load_edge_list(path, *n),
        }
    }
}

fn default_window() -> usize {
    2
}

fn default_restarts() -> usize {
    3
}

fn default_match_iters() -> usize {
    100
}

fn default_refit_epochs() -> usize {
    100
}

fn default_refit_lr() -> f64 {
    0.1
}

fn default_eval_windows() -> usize {
    256
}

fn default_threshold() -> f64 {
    0.5
}

/// Everything one experiment needs. Stage seeds are derived from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub network: NetworkSpec,
    pub dynamics: Dynamics,
    /// Initial conditions.
    pub samples: usize,
    /// Steps per trajectory.
    pub steps: usize,
    #[serde(default = "default_window")]
    pub window: usize,
    /// Defaults to sliding for binary dynamics, disjoint otherwise.
    #[serde(default)]
    pub window_mode: Option<WindowMode>,
    pub split_ratios: (u32, u32, u32),
    pub n_hidden: usize,
    pub seed: u64,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_restarts")]
    pub match_restarts: usize,
    #[serde(default = "default_match_iters")]
    pub match_iters: usize,
    #[serde(default = "default_refit_epochs")]
    pub refit_epochs: usize,
    #[serde(default = "default_refit_lr")]
    pub refit_lr: f64,
    /// Test windows used for state scores.
    #[serde(default = "default_eval_windows")]
    pub eval_windows: usize,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| GinError::io(path, e))?;
        let cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| GinError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| GinError::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(GinError::Config(m));
        if self.samples == 0 || self.steps == 0 {
            return bad("samples and steps must be positive".into());
        }
        if self.window != 2 {
            return bad(format!("window = {} unsupported; one-step windows need 2", self.window));
        }
        let (a, b, c) = self.split_ratios;
        if a == 0 || b == 0 || c == 0 {
            return bad("split_ratios must all be positive".into());
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad(format!("threshold = {} not in (0, 1)", self.threshold));
        }
        match self.train.task {
            Task::Reconstruct if self.n_hidden != 0 => bad("task reconstruct needs n_hidden = 0".into()),
            Task::CompletePartial if self.n_hidden == 0 => bad("task complete-partial needs n_hidden > 0".into()),
            _ => Ok(()),
        }?;
        self.train.validate()
    }

    pub fn window_mode(&self) -> WindowMode {
        self.window_mode.unwrap_or(self.dynamics.default_window_mode())
    }

    fn stage_seed(&self, k: u64) -> u64 {
        self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k)
    }

    /// Training configuration with its seed tied to the experiment seed.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.stage_seed(4),
            ..self.train.clone()
        }
    }
}

/// Generated ground truth and the windows cut from it.
#[derive(Debug, Clone)]
pub struct Generated {
    pub graph: Graph,
    pub partition: NodePartition,
    pub trajectories: Trajectories,
    pub dataset: TrajectoryDataset,
    pub split: Split,
}

impl Generated {
    pub fn view(&self) -> Result<ObservedView> {
        mask_hidden(&self.dataset, &self.partition)
    }

    pub fn manifest(&self, cfg: &ExperimentConfig) -> DatasetManifest {
        DatasetManifest {
            dynamics: cfg.dynamics,
            n: self.graph.n(),
            d: cfg.dynamics.dim(),
            s: cfg.samples,
            steps: cfg.steps,
            t: cfg.window,
            mode: cfg.window_mode(),
            seed: cfg.seed,
            split_ratios: cfg.split_ratios,
        }
    }
}

pub fn generate(cfg: &ExperimentConfig) -> Result<Generated> {
    cfg.validate()?;
    let graph = cfg.network.build(cfg.stage_seed(0))?;
    let partition = partition_nodes(&graph, cfg.n_hidden, cfg.stage_seed(1))?;
    let trajectories = simulate(&graph, cfg.dynamics, cfg.samples, cfg.steps, cfg.stage_seed(2))?;
    let dataset = windowize(&trajectories, cfg.window, cfg.window_mode())?;
    let split = split(dataset.len(), cfg.split_ratios, cfg.stage_seed(3))?;
    Ok(Generated {
        graph,
        partition,
        trajectories,
        dataset,
        split,
    })
}

pub const GRAPH_FILE: &str = "graph.csv";
pub const PARTITION_FILE: &str = "partition.json";
pub const TRAJECTORY_FILE: &str = "trajectories.csv";
pub const DATASET_FILE: &str = "dataset.json";
pub const SPLIT_FILE: &str = "split.json";
pub const CONFIG_FILE: &str = "config.json";
pub const MODEL_DIR: &str = "model";
pub const PROBABILITY_FILE: &str = "probabilities.csv";
pub const STAGE1_FILE: &str = "stage1_probabilities.csv";
pub const MATCH_FILE: &str = "match.json";
pub const REPORT_FILE: &str = "report.json";
pub const CONTRAST_FILE: &str = "contrast.csv";
pub const STRUCTURE_FILE: &str = "structure.csv";
pub const BASELINE_FILE: &str = "baselines.json";
pub const SWEEP_FILE: &str = "sweep.csv";

fn require(dir: &Path, name: &str) -> Result<PathBuf> {
    let p = dir.join(name);
    if p.exists() {
        Ok(p)
    } else {
        Err(GinError::io(
            &p,
            std::io::Error::new(std::io::ErrorKind::NotFound, format!("missing artifact {name}")),
        ))
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?).map_err(|e| GinError::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| GinError::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_generated(g: &Generated, cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| GinError::io(dir, e))?;
    g.graph.write_edge_list(dir.join(GRAPH_FILE))?;
    g.partition.save(dir.join(PARTITION_FILE))?;
    g.trajectories.write_csv(dir.join(TRAJECTORY_FILE))?;
    write_json(&dir.join(DATASET_FILE), &g.manifest(cfg))?;
    write_json(&dir.join(SPLIT_FILE), &g.split)
}

/// Reads the artifacts of [`write_generated`] back.
pub fn load_generated(cfg: &ExperimentConfig, dir: &Path) -> Result<Generated> {
    let manifest: DatasetManifest = read_json(&require(dir, DATASET_FILE)?)?;
    let graph = load_edge_list(require(dir, GRAPH_FILE)?, Some(manifest.n))?;
    let partition = NodePartition::load(require(dir, PARTITION_FILE)?)?;
    let trajectories = Trajectories::read_csv(require(dir, TRAJECTORY_FILE)?, manifest.dynamics)?;
    let dataset = windowize(&trajectories, manifest.t, manifest.mode)?;
    let split: Split = read_json(&require(dir, SPLIT_FILE)?)?;
    if manifest.dynamics != cfg.dynamics {
        return Err(GinError::Config("dataset dynamics differ from the configuration".into()));
    }
    Ok(Generated {
        graph,
        partition,
        trajectories,
        dataset,
        split,
    })
}

/// n x n matrix as headerless CSV.
pub fn write_matrix_csv(m: &Array2<f64>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| GinError::Serde(e.to_string()))?;
    for row in m.outer_iter() {
        w.write_record(row.iter().map(|v| format!("{v:e}")))?;
    }
    w.flush().map_err(|e| GinError::io(path, e))
}

pub fn read_matrix_csv(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let path = path.as_ref();
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| GinError::Serde(format!("{}: {e}", path.display())))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|f| {
                f.trim().parse::<f64>().map_err(|e| GinError::Parse {
                    line: line + 1,
                    msg: format!("{f:?}: {e}"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(GinError::Parse {
            line: 0,
            msg: format!("{} is not a square matrix", path.display()),
        });
    }
    Ok(Array2::from_shape_fn((n, n), |(i, j)| rows[i][j]))
}

/// A trained model with its scores over the full index space.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub task: Task,
    /// Final model (the completion stage for blind completion).
    pub params: GinParameters,
    pub probabilities: Array2<f64>,
    /// Observed-block scores from the reconstruction stage of blind completion.
    pub stage1_probabilities: Option<Array2<f64>>,
    /// Training logs by stage name.
    pub logs: Vec<(String, TrainLog)>,
}

impl TrainedModel {
    pub fn save(&self, dir: &Path, seed: u64) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| GinError::io(dir, e))?;
        let step = self.logs.last().map(|(_, l)| l.len() as u64).unwrap_or(0);
        self.params.save(&dir.join(MODEL_DIR), seed, step)?;
        write_matrix_csv(&self.probabilities, dir.join(PROBABILITY_FILE))?;
        if let Some(s1) = &self.stage1_probabilities {
            write_matrix_csv(s1, dir.join(STAGE1_FILE))?;
        }
        for (name, log) in &self.logs {
            log.write_csv(dir.join(format!("{name}_log.csv")))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path, task: Task) -> Result<Self> {
        let params = GinParameters::load(&require(dir, MODEL_DIR)?)?;
        let probabilities = read_matrix_csv(require(dir, PROBABILITY_FILE)?)?;
        let stage1_probabilities = if task == Task::CompleteBlind {
            Some(read_matrix_csv(require(dir, STAGE1_FILE)?)?)
        } else {
            None
        };
        let names: &[&str] = if task == Task::CompleteBlind { &["stage1", "stage2"] } else { &["train"] };
        let mut logs = Vec::new();
        for name in names {
            let p = dir.join(format!("{name}_log.csv"));
            if p.exists() {
                logs.push((name.to_string(), TrainLog::read_csv(p)?));
            }
        }
        Ok(TrainedModel {
            task,
            params,
            probabilities,
            stage1_probabilities,
            logs,
        })
    }
}

/// Trains for the configured task on generated data.
pub fn train_model(cfg: &ExperimentConfig, g: &Generated) -> Result<TrainedModel> {
    let view = g.view()?;
    let tc = cfg.train_config();
    match tc.task {
        Task::Reconstruct | Task::CompletePartial => {
            let known = (tc.task == Task::CompletePartial).then(|| g.graph.adjacency());
            let (params, log) = train(&tc, &view, &g.split, known)?;
            Ok(TrainedModel {
                task: tc.task,
                probabilities: params.scores.probabilities(),
                params,
                stage1_probabilities: None,
                logs: vec![("train".into(), log)],
            })
        }
        Task::CompleteBlind => {
            let b = complete_blind(&tc, &view, &g.split)?;
            let probabilities = b.probabilities();
            let mut logs = vec![("stage1".to_string(), b.stage1_log)];
            if let Some(l) = b.stage2_log {
                logs.push(("stage2".into(), l));
            }
            Ok(TrainedModel {
                task: tc.task,
                params: b.stage2.unwrap_or(b.stage1),
                probabilities,
                stage1_probabilities: Some(b.stage1_probabilities),
                logs,
            })
        }
    }
}

/// Output of [`evaluate`].
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: EvalReport,
    pub contrast: ContrastMatrix,
    pub matching: Option<MatchResult>,
    /// Scores after matching (equal to the raw scores without it).
    pub aligned: Array2<f64>,
}

impl Evaluation {
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| GinError::io(dir, e))?;
        self.report.save(dir.join(REPORT_FILE))?;
        self.contrast.write_csv(dir.join(CONTRAST_FILE))?;
        write_stat_table(&self.report.structure, dir.join(STRUCTURE_FILE))?;
        if let Some(m) = &self.matching {
            write_json(&dir.join(MATCH_FILE), m)?;
        }
        Ok(())
    }
}

/// Matches inferred scores to the true network over the hidden nodes.
pub fn match_scores(cfg: &ExperimentConfig, truth: &Array2<f64>, scores: &Array2<f64>, p: &NodePartition) -> Result<MatchResult> {
    let problem = MatchProblem::from_partition(truth.clone(), scores.clone(), p)?;
    match_with_restarts(&problem, cfg.match_iters, 1e-6, cfg.match_restarts, cfg.stage_seed(5))
}

/// Scores a trained model: matched (unless `use_match` is false) AUC over
/// the region touching hidden nodes (every pair when nothing is hidden),
/// observed-state error on test windows after refitting hidden initial
/// states, hidden initial-state recovery and structural statistics.
pub fn evaluate(cfg: &ExperimentConfig, g: &Generated, model: &TrainedModel, use_match: bool) -> Result<Evaluation> {
    let p = &g.partition;
    let n = p.n();
    let truth = g.graph.adjacency();
    let matching = if use_match && p.n_hidden() > 0 {
        Some(match_scores(cfg, truth, &model.probabilities, p)?)
    } else {
        None
    };
    let mask = if p.n_hidden() > 0 { unobserved_mask(p) } else { AdjacencyMask::full(n) };
    let (mut report, contrast) = score_completion(truth, &model.probabilities, &mask, matching.as_ref(), cfg.threshold)?;
    let aligned = match &matching {
        Some(m) => apply_match(&model.probabilities, m)?,
        None => model.probabilities.clone(),
    };
    if let Some(s1) = &model.stage1_probabilities {
        let obs = p.observed();
        let mut s = Vec::new();
        let mut l = Vec::new();
        for (a, &i) in obs.iter().enumerate() {
            for &j in &obs[a + 1..] {
                s.push(s1[[i, j]]);
                l.push(truth[[i, j]] > 0.5);
            }
        }
        report.observed_auc = auc(&s, &l).ok();
        report.whole_auc = structure_auc(truth, &aligned).ok();
    }

    let view = g.view()?;
    let k = cfg.eval_windows.min(g.split.test.len());
    let windows = &g.split.test[..k];
    if k > 0 {
        let dynamics = cfg.dynamics;
        let (pred, target, hidden) = refit_hidden(
            &model.params,
            &view,
            windows,
            &EdgeDraw::Probabilities,
            cfg.refit_epochs,
            cfg.refit_lr,
            cfg.stage_seed(6),
        )?;
        report.obs_state_score = Some(score_states(&pred, &target, dynamics)?);
        if let Some(h) = hidden {
            let perm: Vec<usize> = match &matching {
                Some(m) => m.permutation.clone(),
                None => (0..p.n_hidden()).collect(),
            };
            let d = dynamics.dim();
            let mut inferred = Array2::zeros((k * p.n_hidden(), d));
            let mut actual = Array2::zeros((k * p.n_hidden(), d));
            for (b, &w) in windows.iter().enumerate() {
                let values = h.values(b);
                let true_states = view.hidden_states(w, 0);
                for u in 0..p.n_hidden() {
                    inferred.row_mut(b * p.n_hidden() + u).assign(&values.row(perm[u]));
                    actual.row_mut(b * p.n_hidden() + u).assign(&true_states.row(u));
                }
            }
            report.hidden_init_score = Some(score_states(&inferred, &actual, dynamics)?);
        }
    }
    let inferred_graph = Graph::from_adjacency(Array2::from_shape_fn((n, n), |(i, j)| {
        if i != j && aligned[[i, j]] > cfg.threshold {
            1.0
        } else {
            0.0
        }
    }))?;
    report.structure = compare_structure(&g.graph, &inferred_graph)?;
    Ok(Evaluation {
        report,
        contrast,
        matching,
        aligned,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub mi_auc: f64,
    pub pcorr_auc: f64,
}

pub const MI_BINS: usize = 16;
pub const PCORR_RIDGE: f64 = 1e-4;

/// Correlation baselines over the pooled series of every node.
pub fn baselines(g: &Generated) -> Result<BaselineReport> {
    let series = g.dataset.pooled_series();
    let truth = g.graph.adjacency();
    let mi = mi_baseline(&series, g.dataset.dynamics, MI_BINS)?;
    let pc = pcorr_baseline(&series, PCORR_RIDGE)?;
    Ok(BaselineReport {
        mi_auc: structure_auc(truth, &mi)?,
        pcorr_auc: structure_auc(truth, &pc)?,
    })
}

/// Summary of a full pipeline run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub generated: Generated,
    pub model: TrainedModel,
    pub matched: Evaluation,
    pub unmatched: Evaluation,
}

/// Generate, train and evaluate with and without matching, in memory.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let generated = generate(cfg)?;
    let model = train_model(cfg, &generated)?;
    let matched = evaluate(cfg, &generated, &model, true)?;
    let unmatched = evaluate(cfg, &generated, &model, false)?;
    Ok(RunOutcome {
        generated,
        model,
        matched,
        unmatched,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub fraction: f64,
    pub n_hidden: usize,
    pub auc: f64,
    pub auc_unmatched: f64,
    pub obs_state_score: f64,
}

/// Least-squares slope of AUC against hidden fraction.
pub fn sweep_slope(rows: &[SweepRow]) -> Result<f64> {
    if rows.len() < 2 {
        return Err(GinError::Parameter("slope needs two sweep rows".into()));
    }
    let m = rows.len() as f64;
    let mx = rows.iter().map(|r| r.fraction).sum::<f64>() / m;
    let my = rows.iter().map(|r| r.auc).sum::<f64>() / m;
    let sxy: f64 = rows.iter().map(|r| (r.fraction - mx) * (r.auc - my)).sum();
    let sxx: f64 = rows.iter().map(|r| (r.fraction - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(GinError::Parameter("sweep fractions are all equal".into()));
    }
    Ok(sxy / sxx)
}

/// One full train and evaluation per hidden fraction, sharing the base
/// configuration and seed, on up to `threads` worker threads.
pub fn missing_fraction_sweep(cfg: &ExperimentConfig, fractions: &[f64], threads: usize) -> Result<Vec<SweepRow>> {
    if fractions.is_empty() {
        return Err(GinError::Config("no fractions to sweep".into()));
    }
    if let Some(f) = fractions.iter().find(|f| !(**f > 0.0 && **f < 1.0)) {
        return Err(GinError::Config(format!("fraction {f} not in (0, 1)")));
    }
    let n = cfg.network.build(0)?.n();
    let one = |f: f64| -> Result<SweepRow> {
        let n_hidden = ((f * n as f64).round() as usize).clamp(1, n - 1);
        let c = ExperimentConfig {
            n_hidden,
            ..cfg.clone()
        };
        let out = run(&c)?;
        Ok(SweepRow {
            fraction: f,
            n_hidden,
            auc: out.matched.report.unobs_auc,
            auc_unmatched: out.unmatched.report.unobs_auc,
            obs_state_score: out.matched.report.obs_state_score.unwrap_or(f64::NAN),
        })
    };
    let threads = threads.clamp(1, fractions.len());
    if threads == 1 {
        return fractions.iter().map(|&f| one(f)).collect();
    }
    let mut results: Vec<Option<Result<SweepRow>>> = (0..fractions.len()).map(|_| None).collect();
    let per = fractions.len().div_ceil(threads);
    std::thread::scope(|s| {
        for (fs, slots) in fractions.chunks(per).zip(results.chunks_mut(per)) {
            let one = &one;
            s.spawn(move || {
                for (f, slot) in fs.iter().zip(slots) {
                    *slot = Some(one(*f));
                }
            });
        }
    });
    results.into_iter().map(|r| r.expect("every fraction ran")).collect()
}

pub fn write_sweep_csv(rows: &[SweepRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| GinError::Serde(e.to_string()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| GinError::io(path, e))
}

pub fn save_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    write_json(path.as_ref(), value)
}

pub fn load_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    read_json(path.as_ref())
}
