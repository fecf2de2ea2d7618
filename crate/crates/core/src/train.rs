//! Training loop for completion (with or without known structure) and
//! reconstruction, plus the loss and per-epoch logging.

use std::path::Path;
use std::time::Instant;

use ndarray::{Array2, ArrayD};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, AdamConfig, Parameter, Tape, Var};
use crate::dynamics::{mask_hidden, Dynamics, ObservedView, Split};
use crate::error::{GinError, Result};
use crate::graph::NodePartition;
use crate::model::{
    DynamicsLearner, EdgeDraw, EdgeScores, GinParameters, HiddenInitStates, ScoreInit, StateActivation,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    CompletePartial,
    CompleteBlind,
    Reconstruct,
}

impl std::str::FromStr for Task {
    type Err = GinError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "complete-partial" => Ok(Task::CompletePartial),
            "complete-blind" => Ok(Task::CompleteBlind),
            "reconstruct" => Ok(Task::Reconstruct),
            other => Err(GinError::Config(format!("unknown task {other:?}"))),
        }
    }
}

/// Linear temperature schedule from `start` at the first epoch to `end` at
/// the last.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauSchedule {
    pub start: f64,
    pub end: f64,
}

impl TauSchedule {
    pub fn constant(tau: f64) -> Self {
        TauSchedule { start: tau, end: tau }
    }

    pub fn at(&self, epoch: usize, epochs: usize) -> f64 {
        if epochs <= 1 {
            return self.start;
        }
        self.start + (self.end - self.start) * epoch as f64 / (epochs - 1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub task: Task,
    pub lr_dynamics: f64,
    pub lr_states: f64,
    pub lr_scores: f64,
    pub batch: usize,
    pub epochs: usize,
    pub lambda: f64,
    pub seed: u64,
    pub tau: TauSchedule,
    /// Hidden width of every perceptron; `None` picks 32, or 64 for Voter.
    pub hidden_width: Option<usize>,
    pub score_init: ScoreInit,
    /// Epochs before edge scores start to move.
    pub score_warmup: usize,
    /// One adjacency sample per window instead of one per minibatch.
    pub sample_per_window: bool,
    /// Straight-through rounding of sampled adjacency entries.
    pub hard: bool,
    /// Upper bound on weighted messages per tape, to cap memory.
    pub chunk_terms: usize,
    /// Validation windows scored each epoch.
    pub val_windows: usize,
    /// Stop after this many epochs without a better validation loss.
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            task: Task::CompletePartial,
            lr_dynamics: 0.004,
            lr_states: 0.1,
            lr_scores: 0.001,
            batch: 1024,
            epochs: 500,
            lambda: 0.0,
            seed: 0,
            tau: TauSchedule::constant(1.0),
            hidden_width: None,
            score_init: ScoreInit::default(),
            score_warmup: 0,
            sample_per_window: false,
            hard: false,
            chunk_terms: 24_000,
            val_windows: 64,
            patience: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(GinError::Config(m.to_string()));
        if !(self.lr_dynamics > 0.0 && self.lr_states > 0.0 && self.lr_scores > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(self.lambda >= 0.0) {
            return bad("lambda must be non-negative");
        }
        if self.batch == 0 || self.epochs == 0 || self.chunk_terms == 0 {
            return bad("batch, epochs and chunk_terms must be positive");
        }
        if !(self.tau.start > 0.0 && self.tau.end > 0.0) {
            return bad("temperatures must be positive");
        }
        if !(self.score_init.std >= 0.0) {
            return bad("score_init.std must be non-negative");
        }
        Ok(())
    }

    pub fn width_for(&self, d: Dynamics) -> usize {
        self.hidden_width
            .unwrap_or(if d.is_binary() { 64 } else { 32 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn push(&mut self, r: EpochRecord) -> Result<()> {
        if self.records.last().is_some_and(|last| last.epoch >= r.epoch) {
            return Err(GinError::Contract("epochs must increase".into()));
        }
        self.records.push(r);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn train_losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.train_loss).collect()
    }

    /// Median training loss over the first and the last `fraction` of epochs.
    pub fn head_tail_medians(&self, fraction: f64) -> (f64, f64) {
        let losses = self.train_losses();
        let k = ((losses.len() as f64 * fraction).round() as usize).clamp(1, losses.len().max(1));
        (median(&losses[..k]), median(&losses[losses.len() - k..]))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| GinError::Serde(e.to_string()))?;
        w.write_record(["epoch", "train_loss", "val_loss", "seconds"])?;
        for r in &self.records {
            w.write_record([
                r.epoch.to_string(),
                r.train_loss.to_string(),
                r.val_loss.to_string(),
                format!("{:.3}", r.seconds),
            ])?;
        }
        w.flush().map_err(|e| GinError::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut rd = csv::Reader::from_path(path).map_err(|e| GinError::Serde(e.to_string()))?;
        let mut log = TrainLog::default();
        for row in rd.records() {
            let row = row?;
            let field = |k: usize| -> Result<f64> {
                row.get(k)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| GinError::Parse {
                        line: row.position().map(|p| p.line() as usize).unwrap_or(0),
                        msg: format!("bad field {k}"),
                    })
            };
            log.push(EpochRecord {
                epoch: field(0)? as usize,
                train_loss: field(1)?,
                val_loss: field(2)?,
                seconds: field(3)?,
            })?;
        }
        Ok(log)
    }
}

pub fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        (s[m - 1] + s[m]) / 2.0
    }
}

/// Prediction error: mean absolute error for continuous states, mean
/// cross-entropy per node for binary ones.
pub fn data_loss<'t>(pred: Var<'t>, target: &ArrayD<f64>, dynamics: Dynamics) -> Result<Var<'t>> {
    if pred.shape() != target.shape() {
        return Err(GinError::shape("loss", &pred.shape(), target.shape()));
    }
    let tape = pred.tape();
    let y = tape.constant(target.clone());
    if dynamics.is_binary() {
        let rows = target.shape().first().copied().unwrap_or(1).max(1) as f64;
        Ok(pred.add_scalar(1e-12).log().mul(y)?.sum().scale(-1.0 / rows))
    } else {
        Ok(pred.sub(y)?.abs().mean())
    }
}

/// Full objective: prediction error plus `lambda * sum|A| / n^2`.
pub fn loss<'t>(
    pred: Var<'t>,
    target: &ArrayD<f64>,
    a_hat: Var<'t>,
    lambda: f64,
    dynamics: Dynamics,
) -> Result<Var<'t>> {
    let shape = a_hat.shape();
    if shape.len() != 2 || shape[0] != shape[1] {
        return Err(GinError::shape("loss adjacency", &shape, &shape));
    }
    let n2 = (shape[0] * shape[0]).max(1) as f64;
    let d = data_loss(pred, target, dynamics)?;
    d.add(a_hat.abs().sum().scale(lambda / n2))
}

/// Windows per tape so that each tape holds at most `chunk_terms` messages.
fn chunk_size(params: &GinParameters, chunk_terms: usize) -> usize {
    let p = &params.partition;
    let known = params.scores.known();
    let per_window: usize = p
        .observed()
        .iter()
        .map(|&i| {
            (0..p.n())
                .filter(|&j| j != i && (params.scores.entry(i, j).is_some() || known[[j, i]] != 0.0))
                .count()
        })
        .sum();
    (chunk_terms / per_window.max(1)).max(1)
}

/// Loss over `windows` accumulated chunk by chunk. With `backprop`, the
/// gradients are added to the parameters.
fn batch_loss(
    params: &mut GinParameters,
    view: &ObservedView,
    windows: &[usize],
    draw: &EdgeDraw,
    lambda: f64,
    chunk: usize,
    backprop: bool,
) -> Result<f64> {
    let dynamics = params.dynamics();
    let total = windows.len() as f64;
    let mut acc = 0.0;
    for (c, part) in windows.chunks(chunk).enumerate() {
        let part_draw = match draw {
            EdgeDraw::Relaxed { noise, tau, hard } if noise.nrows() > 1 => EdgeDraw::Relaxed {
                noise: noise
                    .slice(ndarray::s![c * chunk..c * chunk + part.len(), ..])
                    .to_owned(),
                tau: *tau,
                hard: *hard,
            },
            other => other.clone(),
        };
        let tape = Tape::new();
        let bound = params.bind(&tape);
        let out = params.forward_batch(&bound, view.data(), part, &part_draw)?;
        let l = data_loss(out.prediction, &out.target, dynamics)?
            .add(out.density.scale(lambda))?
            .scale(part.len() as f64 / total);
        let v = l.item();
        if !v.is_finite() {
            return Err(GinError::Numeric(format!("loss became {v}")));
        }
        acc += v;
        if backprop {
            let grads = tape.backward(l)?;
            params.accumulate(&grads);
        }
    }
    Ok(acc)
}

/// Builds fresh parameters for `task` over the partition of `view`.
pub fn init_parameters(
    config: &TrainConfig,
    view: &ObservedView,
    known: Option<&Array2<f64>>,
    rng: &mut ChaCha8Rng,
) -> Result<GinParameters> {
    let p = view.partition().clone();
    let dynamics = view.data().dynamics;
    let tau = config.tau.start;
    let scores = match config.task {
        Task::Reconstruct => {
            if p.n_hidden() != 0 {
                return Err(GinError::Config("reconstruction needs every node observed".into()));
            }
            if known.is_some() {
                return Err(GinError::Config("reconstruction takes no known structure".into()));
            }
            EdgeScores::for_reconstruction(p.n(), tau, config.score_init, rng)?
        }
        Task::CompletePartial => {
            let known = known.ok_or_else(|| {
                GinError::Config("completion with partial structure needs the observed adjacency".into())
            })?;
            if p.n_hidden() == 0 {
                return Err(GinError::Config("completion needs at least one hidden node".into()));
            }
            EdgeScores::for_completion(&p, known, tau, config.score_init, rng)?
        }
        Task::CompleteBlind => {
            return Err(GinError::Config("blind completion runs through complete_blind".into()))
        }
    };
    let hidden = if p.n_hidden() > 0 {
        Some(HiddenInitStates::new(
            view.data().len(),
            p.n_hidden(),
            dynamics.dim(),
            StateActivation::for_dynamics(dynamics),
            rng,
        )?)
    } else {
        None
    };
    let learner = DynamicsLearner::new(dynamics, config.width_for(dynamics), rng)?;
    Ok(GinParameters {
        partition: p,
        scores,
        hidden,
        learner,
    })
}

/// Stateful training loop; [`train`] runs it to completion.
pub struct Trainer<'a> {
    pub config: TrainConfig,
    pub params: GinParameters,
    view: &'a ObservedView,
    split: Split,
    opt_dynamics: Adam,
    opt_states: Adam,
    opt_scores: Adam,
    rng: ChaCha8Rng,
    chunk: usize,
    epoch: usize,
    best_val: f64,
    since_best: usize,
    log: TrainLog,
    clock: Instant,
}

impl<'a> Trainer<'a> {
    pub fn new(config: TrainConfig, view: &'a ObservedView, split: &Split, known: Option<&Array2<f64>>) -> Result<Self> {
        config.validate()?;
        if split.train.is_empty() {
            return Err(GinError::Config("empty training split".into()));
        }
        if let Some(&w) = split.train.iter().chain(&split.validation).chain(&split.test).find(|&&w| w >= view.data().len()) {
            return Err(GinError::Range { id: w, n: view.data().len() });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = init_parameters(&config, view, known, &mut rng)?;
        let chunk = chunk_size(&params, config.chunk_terms);
        Ok(Trainer {
            opt_dynamics: Adam::new(AdamConfig::with_lr(config.lr_dynamics))?,
            opt_states: Adam::new(AdamConfig::with_lr(config.lr_states))?,
            opt_scores: Adam::new(AdamConfig::with_lr(config.lr_scores))?,
            config,
            params,
            view,
            split: split.clone(),
            rng,
            chunk,
            epoch: 0,
            best_val: f64::INFINITY,
            since_best: 0,
            log: TrainLog::default(),
            clock: Instant::now(),
        })
    }

    pub fn log(&self) -> &TrainLog {
        &self.log
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    fn draw(&mut self, windows: usize, tau: f64) -> EdgeDraw {
        let samples = if self.config.sample_per_window { windows } else { 1 };
        EdgeDraw::Relaxed {
            noise: self.params.scores.draw_noise(samples, &mut self.rng),
            tau,
            hard: self.config.hard,
        }
    }

    /// Loss of a fixed minibatch under a fixed draw, without touching
    /// gradients.
    pub fn minibatch_loss(&mut self, windows: &[usize], draw: &EdgeDraw) -> Result<f64> {
        let lambda = self.config.lambda;
        batch_loss(&mut self.params, self.view, windows, draw, lambda, self.chunk, false)
    }

    /// Accumulates gradients of a fixed minibatch and applies one optimizer
    /// step to every parameter group (edge scores only when `move_scores`).
    pub fn step_on(&mut self, windows: &[usize], draw: &EdgeDraw, move_scores: bool) -> Result<f64> {
        let lambda = self.config.lambda;
        self.params.zero_grad();
        let l = batch_loss(&mut self.params, self.view, windows, draw, lambda, self.chunk, true)?;
        let p = &mut self.params;
        let mut group: Vec<&mut Parameter> = p.learner.params_mut().collect();
        self.opt_dynamics.step(&mut group)?;
        if let Some(h) = &mut p.hidden {
            self.opt_states.step(&mut [&mut h.gamma])?;
        }
        if move_scores && !p.scores.is_empty() {
            self.opt_scores.step(&mut [&mut p.scores.theta])?;
        } else {
            p.scores.theta.zero_grad();
        }
        Ok(l)
    }

    /// One epoch: a random minibatch, one update, one log record.
    pub fn run_epoch(&mut self) -> Result<EpochRecord> {
        let tau = self.config.tau.at(self.epoch, self.config.epochs);
        self.params.scores.tau = tau;
        let size = self.config.batch.min(self.split.train.len());
        let picks = rand::seq::index::sample(&mut self.rng, self.split.train.len(), size);
        let windows: Vec<usize> = picks.iter().map(|k| self.split.train[k]).collect();
        let draw = self.draw(windows.len(), tau);
        let move_scores = self.epoch >= self.config.score_warmup;
        let train_loss = self.step_on(&windows, &draw, move_scores)?;
        let val_loss = self.validation_loss()?;
        let record = EpochRecord {
            epoch: self.epoch,
            train_loss,
            val_loss,
            seconds: self.clock.elapsed().as_secs_f64(),
        };
        self.log.push(record)?;
        self.epoch += 1;
        if val_loss < self.best_val {
            self.best_val = val_loss;
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        Ok(record)
    }

    /// Loss of the first validation windows under connection probabilities.
    pub fn validation_loss(&mut self) -> Result<f64> {
        let k = self.config.val_windows.min(self.split.validation.len());
        if k == 0 {
            return Ok(f64::NAN);
        }
        let windows = self.split.validation[..k].to_vec();
        self.minibatch_loss(&windows, &EdgeDraw::Probabilities)
    }

    pub fn finished(&self) -> bool {
        self.epoch >= self.config.epochs || self.config.patience.is_some_and(|p| self.since_best > p)
    }

    pub fn run(mut self) -> Result<(GinParameters, TrainLog)> {
        while !self.finished() {
            self.run_epoch()?;
        }
        Ok((self.params, self.log))
    }
}

/// Trains one model for `config.task` on the observed windows in `split.train`.
/// `known` is the adjacency whose observed block is given (completion with
/// partial structure only).
pub fn train(
    config: &TrainConfig,
    view: &ObservedView,
    split: &Split,
    known: Option<&Array2<f64>>,
) -> Result<(GinParameters, TrainLog)> {
    Trainer::new(config.clone(), view, split, known)?.run()
}

/// Result of two-stage completion without structural input.
#[derive(Debug, Clone)]
pub struct BlindCompletion {
    /// Reconstruction over the observed nodes only.
    pub stage1: GinParameters,
    pub stage1_log: TrainLog,
    /// Stage-1 connection probabilities placed into the full `n x n` index
    /// space (entries touching hidden nodes are zero).
    pub stage1_probabilities: Array2<f64>,
    /// Completion on top of the thresholded stage-1 block.
    pub stage2: Option<GinParameters>,
    pub stage2_log: Option<TrainLog>,
}

impl BlindCompletion {
    /// Full-network scores: stage-1 probabilities on the observed block,
    /// stage-2 probabilities on entries touching hidden nodes.
    pub fn probabilities(&self) -> Array2<f64> {
        match &self.stage2 {
            None => self.stage1_probabilities.clone(),
            Some(s2) => {
                let mut out = s2.scores.probabilities();
                let p = &s2.partition;
                for &i in p.observed() {
                    for &j in p.observed() {
                        out[[i, j]] = self.stage1_probabilities[[i, j]];
                    }
                }
                out
            }
        }
    }
}

/// Reconstructs the observed block first, then completes the network with
/// the 0.5-thresholded reconstruction as known structure.
pub fn complete_blind(config: &TrainConfig, view: &ObservedView, split: &Split) -> Result<BlindCompletion> {
    let p = view.partition();
    let obs_only = mask_hidden(view.data(), &NodePartition::all_observed(p.n_observed()))?;
    let stage1_config = TrainConfig {
        task: Task::Reconstruct,
        ..config.clone()
    };
    let (stage1, stage1_log) = train(&stage1_config, &obs_only, split, None)?;
    let block = stage1.scores.probabilities();
    let n = p.n();
    let mut full = Array2::zeros((n, n));
    for (a, &i) in p.observed().iter().enumerate() {
        for (b, &j) in p.observed().iter().enumerate() {
            full[[i, j]] = block[[a, b]];
        }
    }
    if p.n_hidden() == 0 {
        return Ok(BlindCompletion {
            stage1,
            stage1_log,
            stage1_probabilities: full,
            stage2: None,
            stage2_log: None,
        });
    }
    let known = full.mapv(|v| if v > 0.5 { 1.0 } else { 0.0 });
    let stage2_config = TrainConfig {
        task: Task::CompletePartial,
        seed: config.seed.wrapping_add(1),
        ..config.clone()
    };
    let (stage2, stage2_log) = train(&stage2_config, view, split, Some(&known))?;
    Ok(BlindCompletion {
        stage1,
        stage1_log,
        stage1_probabilities: full,
        stage2: Some(stage2),
        stage2_log: Some(stage2_log),
    })
}

/// Fits fresh hidden initial states for `windows` with everything else
/// frozen, then returns the one-step predictions of the observed nodes, the
/// matching truth and the fitted states. Adjacency entries use `draw`.
pub fn refit_hidden(
    params: &GinParameters,
    view: &ObservedView,
    windows: &[usize],
    draw: &EdgeDraw,
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<(Array2<f64>, Array2<f64>, Option<HiddenInitStates>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = view.data().select(windows);
    let local_view = mask_hidden(&data, &NodePartition::all_observed(data.n()))?;
    let mut local = params.clone();
    let dynamics = params.dynamics();
    let nu = params.partition.n_hidden();
    local.hidden = if nu > 0 {
        Some(HiddenInitStates::new(
            windows.len(),
            nu,
            dynamics.dim(),
            StateActivation::for_dynamics(dynamics),
            &mut rng,
        )?)
    } else {
        None
    };
    let all: Vec<usize> = (0..windows.len()).collect();
    let chunk = chunk_size(&local, 24_000);
    if local.hidden.is_some() {
        let mut opt = Adam::new(AdamConfig::with_lr(lr))?;
        for _ in 0..epochs {
            local.zero_grad();
            batch_loss(&mut local, &local_view, &all, draw, 0.0, chunk, true)?;
            let h = local.hidden.as_mut().expect("hidden states present");
            opt.step(&mut [&mut h.gamma])?;
        }
    }
    let mut preds = Vec::new();
    let mut truth = Vec::new();
    for part in all.chunks(chunk) {
        let tape = Tape::new();
        let bound = local.bind(&tape);
        let out = local.forward_batch(&bound, local_view.data(), part, draw)?;
        preds.extend(out.prediction.value().iter().copied());
        truth.extend(out.target.iter().copied());
    }
    let d = dynamics.dim();
    let rows = preds.len() / d;
    let shape = (rows, d);
    Ok((
        Array2::from_shape_vec(shape, preds).expect("prediction rows"),
        Array2::from_shape_vec(shape, truth).expect("target rows"),
        local.hidden,
    ))
}
