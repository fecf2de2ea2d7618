//! The three learnable parts: a Gumbel-softmax edge sampler, per-window
//! hidden initial states, and a node-shared message-passing dynamics learner.

use std::collections::HashMap;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayD, Axis, IxDyn};
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{self, concat, Activation, BoundMlp, Gradients, Mlp, Parameter, Tape, Var};
use crate::dynamics::{Dynamics, TrajectoryDataset};
use crate::error::{GinError, Result};
use crate::graph::NodePartition;

/// Normal initialisation of edge scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreInit {
    pub mean: f64,
    pub std: f64,
}

impl Default for ScoreInit {
    fn default() -> Self {
        ScoreInit { mean: 0.0, std: 0.1 }
    }
}

fn normal_array<R: Rng>(shape: &[usize], mean: f64, std: f64, rng: &mut R) -> Result<ArrayD<f64>> {
    let dist = Normal::new(mean, std).map_err(|e| GinError::Parameter(e.to_string()))?;
    Ok(ArrayD::from_shape_simple_fn(IxDyn(shape), || dist.sample(rng)))
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Learnable scores for the adjacency entries being inferred. Every other
/// entry is a known constant.
#[derive(Debug, Clone)]
pub struct EdgeScores {
    n: usize,
    pairs: Vec<(usize, usize)>,
    index: HashMap<(usize, usize), usize>,
    known: Array2<f64>,
    pub theta: Parameter,
    pub tau: f64,
}

impl EdgeScores {
    /// `pairs` are the inferred entries as `(i, j)` with `i < j`; `known`
    /// supplies the remaining entries and must be symmetric 0/1 with a zero
    /// diagonal. Inferred positions of `known` are ignored.
    pub fn new<R: Rng>(
        n: usize,
        pairs: Vec<(usize, usize)>,
        known: Array2<f64>,
        tau: f64,
        init: ScoreInit,
        rng: &mut R,
    ) -> Result<Self> {
        if !(tau > 0.0) {
            return Err(GinError::Parameter(format!("temperature must be positive, got {tau}")));
        }
        if known.dim() != (n, n) {
            return Err(GinError::shape("edge scores", &[n, n], known.shape()));
        }
        let mut index = HashMap::with_capacity(pairs.len());
        for (k, &(i, j)) in pairs.iter().enumerate() {
            if i >= j || j >= n {
                return Err(GinError::Parameter(format!("inferred entry ({i}, {j}) must satisfy i < j < {n}")));
            }
            if index.insert((i, j), k).is_some() {
                return Err(GinError::Parameter(format!("inferred entry ({i}, {j}) listed twice")));
            }
        }
        let mut known = known;
        for i in 0..n {
            for j in 0..n {
                let v = known[[i, j]];
                if v != 0.0 && v != 1.0 || v != known[[j, i]] || (i == j && v != 0.0) {
                    return Err(GinError::Parameter(format!("known adjacency entry ({i}, {j}) = {v} is not valid")));
                }
            }
        }
        for &(i, j) in &pairs {
            known[[i, j]] = 0.0;
            known[[j, i]] = 0.0;
        }
        let theta = Parameter::new("theta", normal_array(&[pairs.len()], init.mean, init.std, rng)?);
        Ok(EdgeScores {
            n,
            pairs,
            index,
            known,
            theta,
            tau,
        })
    }

    /// Every upper-triangular entry inferred.
    pub fn for_reconstruction<R: Rng>(n: usize, tau: f64, init: ScoreInit, rng: &mut R) -> Result<Self> {
        let pairs = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
        EdgeScores::new(n, pairs, Array2::zeros((n, n)), tau, init, rng)
    }

    /// Entries touching a hidden node are inferred; the observed block is
    /// taken from `observed_adjacency` (other entries of it are ignored).
    pub fn for_completion<R: Rng>(
        p: &NodePartition,
        observed_adjacency: &Array2<f64>,
        tau: f64,
        init: ScoreInit,
        rng: &mut R,
    ) -> Result<Self> {
        let n = p.n();
        if observed_adjacency.dim() != (n, n) {
            return Err(GinError::shape("edge scores", &[n, n], observed_adjacency.shape()));
        }
        let mut known = Array2::zeros((n, n));
        let mut pairs = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if p.is_hidden(i) || p.is_hidden(j) {
                    pairs.push((i, j));
                } else {
                    known[[i, j]] = observed_adjacency[[i, j]];
                    known[[j, i]] = observed_adjacency[[j, i]];
                }
            }
        }
        EdgeScores::new(n, pairs, known, tau, init, rng)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Known entries, zero at inferred positions.
    pub fn known(&self) -> &Array2<f64> {
        &self.known
    }

    /// Position of entry `(i, j)` (either order) among the inferred entries.
    pub fn entry(&self, i: usize, j: usize) -> Option<usize> {
        self.index.get(&(i.min(j), i.max(j))).copied()
    }

    /// Connection probabilities `sigmoid(theta)` placed into the known matrix.
    pub fn probabilities(&self) -> Array2<f64> {
        let mut out = self.known.clone();
        for (&(i, j), &t) in self.pairs.iter().zip(self.theta.value.iter()) {
            let p = sigmoid(t);
            out[[i, j]] = p;
            out[[j, i]] = p;
        }
        out
    }

    /// Fresh logistic noise `g - g'` (difference of two standard Gumbels),
    /// one row per independent sample.
    pub fn draw_noise<R: Rng>(&self, samples: usize, rng: &mut R) -> Array2<f64> {
        Array2::from_shape_simple_fn((samples, self.len()), || gumbel(rng) - gumbel(rng))
    }
}

fn gumbel<R: Rng>(rng: &mut R) -> f64 {
    let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    -(-u.ln()).ln()
}

/// Relaxed Bernoulli entries `sigmoid((theta + noise) / tau)`, one row per
/// row of `noise`. `hard` rounds the forward values at 0.5 and keeps the soft
/// gradient.
pub fn relaxed_entries<'t>(theta: Var<'t>, noise: &Array2<f64>, tau: f64, hard: bool) -> Result<Var<'t>> {
    if !(tau > 0.0) {
        return Err(GinError::Parameter(format!("temperature must be positive, got {tau}")));
    }
    let tape = theta.tape();
    let soft = theta.add(tape.constant(noise.clone().into_dyn()))?.scale(1.0 / tau).sigmoid();
    if hard {
        let rounded = soft.value_ref().mapv(|v| if v > 0.5 { 1.0 } else { 0.0 });
        soft.straight_through(rounded)
    } else {
        Ok(soft)
    }
}

/// One sampled `n x n` soft adjacency with known entries as constants.
pub fn sample_adjacency<'t, R: Rng>(
    tape: &'t Tape,
    scores: &EdgeScores,
    rng: &mut R,
    hard: bool,
) -> Result<Var<'t>> {
    let theta = tape.param(&scores.theta);
    let noise = scores.draw_noise(1, rng);
    let entries = relaxed_entries(theta, &noise, scores.tau, hard)?.reshape(&[scores.len()])?;
    entries.scatter_symmetric(scores.known.clone().into_dyn(), &scores.pairs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StateActivation {
    Sigmoid,
    Softmax,
    Identity,
}

impl StateActivation {
    pub fn for_dynamics(d: Dynamics) -> Self {
        if d.is_binary() {
            StateActivation::Softmax
        } else {
            StateActivation::Sigmoid
        }
    }

    fn apply<'t>(self, v: Var<'t>) -> Result<Var<'t>> {
        match self {
            StateActivation::Sigmoid => Ok(v.sigmoid()),
            StateActivation::Softmax => v.softmax(v.shape().len() - 1),
            StateActivation::Identity => Ok(v),
        }
    }
}

/// Unconstrained initial states of hidden nodes, one slice per window.
#[derive(Debug, Clone)]
pub struct HiddenInitStates {
    /// Shape `(S, N_u, d)`.
    pub gamma: Parameter,
    pub activation: StateActivation,
}

impl HiddenInitStates {
    pub fn new<R: Rng>(
        windows: usize,
        n_hidden: usize,
        d: usize,
        activation: StateActivation,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(HiddenInitStates {
            gamma: Parameter::new("gamma", normal_array(&[windows, n_hidden, d], 0.0, 0.1, rng)?),
            activation,
        })
    }

    pub fn windows(&self) -> usize {
        self.gamma.shape()[0]
    }

    pub fn n_hidden(&self) -> usize {
        self.gamma.shape()[1]
    }

    pub fn dim(&self) -> usize {
        self.gamma.shape()[2]
    }

    /// Activated `(N_u, d)` states of one window.
    pub fn generate<'t>(&self, tape: &'t Tape, window: usize) -> Result<Var<'t>> {
        let gamma = tape.param(&self.gamma);
        self.generate_from(gamma, &[window])
    }

    /// Activated states of several windows from an already bound `gamma`,
    /// stacked into `(windows.len() * N_u, d)`.
    pub fn generate_from<'t>(&self, gamma: Var<'t>, windows: &[usize]) -> Result<Var<'t>> {
        if let Some(&w) = windows.iter().find(|&&w| w >= self.windows()) {
            return Err(GinError::Range { id: w, n: self.windows() });
        }
        let (nu, d) = (self.n_hidden(), self.dim());
        let slab = gamma.select(0, windows)?.reshape(&[windows.len() * nu, d])?;
        self.activation.apply(slab)
    }

    /// Activated states of one window, without a tape.
    pub fn values(&self, window: usize) -> Array2<f64> {
        let tape = Tape::new();
        let v = self
            .activation
            .apply(tape.constant(self.gamma.value.index_axis(Axis(0), window).to_owned()))
            .expect("activation of a rank-2 slice");
        v.value().into_dimensionality().expect("rank-2 states")
    }
}

/// Message-passing learner: edge messages from `(x_j, x_i)`, adjacency
/// weighted sums into each node, a node update, and an output head that also
/// sees the node's own state.
#[derive(Debug, Clone)]
pub struct DynamicsLearner {
    pub dynamics: Dynamics,
    pub width: usize,
    pub edge: Mlp,
    pub node: Mlp,
    pub out: Mlp,
}

impl DynamicsLearner {
    pub fn new<R: Rng>(dynamics: Dynamics, width: usize, rng: &mut R) -> Result<Self> {
        let d = dynamics.dim();
        let w = width;
        Ok(DynamicsLearner {
            dynamics,
            width,
            edge: Mlp::new("edge", &[2 * d, w, w, w, w], Activation::Relu, rng)?,
            node: Mlp::new("node", &[w, w, w, w, w], Activation::Relu, rng)?,
            out: Mlp::new("out", &[w + d, w, w, w, d], Activation::Relu, rng)?,
        })
    }

    pub fn bind<'t>(&self, tape: &'t Tape) -> BoundLearner<'t> {
        BoundLearner {
            edge: self.edge.bind(tape),
            node: self.node.bind(tape),
            out: self.out.bind(tape),
            softmax: self.dynamics.is_binary(),
        }
    }

    /// One-step prediction for every node from a full state `x` (n x d) and a
    /// soft adjacency `a_hat` (n x n).
    pub fn predict_step<'t>(&self, tape: &'t Tape, a_hat: Var<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let xs = x.shape();
        let n = xs.first().copied().unwrap_or(0);
        if xs != [n, self.dynamics.dim()] || a_hat.shape() != [n, n] {
            return Err(GinError::shape("predict_step", &a_hat.shape(), &xs));
        }
        let mut plan = MessagePlan::new(false);
        let mut flat = Vec::with_capacity(n * n);
        for i in 0..n {
            plan.add_target(i);
            for j in (0..n).filter(|&j| j != i) {
                plan.add_message(j, i, i);
                flat.push(j * n + i);
            }
        }
        let weights = a_hat.reshape(&[n * n])?.select(0, &flat)?;
        self.bind(tape).propagate(x, &plan, weights)
    }

    pub fn params(&self) -> impl Iterator<Item = &Parameter> {
        self.edge.params().chain(self.node.params()).chain(self.out.params())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.edge
            .params_mut()
            .chain(self.node.params_mut())
            .chain(self.out.params_mut())
    }
}

/// Weighted messages to compute: distinct `(source row, destination row)`
/// edge inputs, the weighted terms that sum them into targets, and each
/// target's own state row.
#[derive(Debug, Clone, Default)]
pub struct MessagePlan {
    dedup: bool,
    seen: HashMap<(usize, usize), usize>,
    edge_src: Vec<usize>,
    edge_dst: Vec<usize>,
    term_edge: Vec<usize>,
    term_target: Vec<usize>,
    target_self: Vec<usize>,
}

impl MessagePlan {
    /// With `dedup`, identical `(source, destination)` row pairs share one
    /// edge-network evaluation.
    pub fn new(dedup: bool) -> Self {
        MessagePlan {
            dedup,
            ..Default::default()
        }
    }

    /// Registers a target whose own state is `self_row`; returns its index.
    pub fn add_target(&mut self, self_row: usize) -> usize {
        self.target_self.push(self_row);
        self.target_self.len() - 1
    }

    /// Adds the term `w * edge(x[src_row], x[dst_row])` to `target`. The
    /// matching weight is the next entry of the weight vector.
    pub fn add_message(&mut self, src_row: usize, dst_row: usize, target: usize) {
        let next = self.edge_src.len();
        let e = if self.dedup {
            *self.seen.entry((src_row, dst_row)).or_insert(next)
        } else {
            next
        };
        if e == next {
            self.edge_src.push(src_row);
            self.edge_dst.push(dst_row);
        }
        self.term_edge.push(e);
        self.term_target.push(target);
    }

    pub fn terms(&self) -> usize {
        self.term_edge.len()
    }

    pub fn distinct_edges(&self) -> usize {
        self.edge_src.len()
    }

    pub fn targets(&self) -> usize {
        self.target_self.len()
    }
}

/// A [`DynamicsLearner`] bound to one tape.
#[derive(Debug, Clone)]
pub struct BoundLearner<'t> {
    edge: BoundMlp<'t>,
    node: BoundMlp<'t>,
    out: BoundMlp<'t>,
    softmax: bool,
}

impl<'t> BoundLearner<'t> {
    /// Runs a [`MessagePlan`] over the state table `states` (rows x d) with
    /// one weight per term; returns one prediction row per target.
    pub fn propagate(&self, states: Var<'t>, plan: &MessagePlan, weights: Var<'t>) -> Result<Var<'t>> {
        if weights.shape() != [plan.terms()] {
            return Err(GinError::shape("propagate", &weights.shape(), &[plan.terms()]));
        }
        let width = self.node.input_dim();
        let h = if plan.distinct_edges() == 0 {
            states
                .tape()
                .constant(ArrayD::zeros(IxDyn(&[plan.targets(), width])))
        } else {
            let edge_in = concat(&[states.select(0, &plan.edge_src)?, states.select(0, &plan.edge_dst)?], 1)?;
            let messages = self.edge.apply(edge_in)?;
            messages.segment_sum(weights, &plan.term_edge, &plan.term_target, plan.targets())?
        };
        let u = self.node.apply(h)?;
        let own = states.select(0, &plan.target_self)?;
        let o = self.out.apply(concat(&[u, own], 1)?)?;
        if self.softmax {
            o.softmax(1)
        } else {
            Ok(o)
        }
    }
}

/// How adjacency weights are produced for a forward pass.
#[derive(Debug, Clone)]
pub enum EdgeDraw {
    /// Relaxed samples; `noise` has one row per window or a single shared row.
    Relaxed { noise: Array2<f64>, tau: f64, hard: bool },
    /// Connection probabilities `sigmoid(theta)`.
    Probabilities,
    /// Probabilities rounded at 0.5, as constants.
    Threshold,
}

/// All learnable state of one model.
#[derive(Debug, Clone)]
pub struct GinParameters {
    pub partition: NodePartition,
    pub scores: EdgeScores,
    pub hidden: Option<HiddenInitStates>,
    pub learner: DynamicsLearner,
}

/// [`GinParameters`] bound to one tape.
pub struct BoundGin<'t> {
    pub learner: BoundLearner<'t>,
    pub theta: Var<'t>,
    pub gamma: Option<Var<'t>>,
}

/// Output of a batched forward pass over windows.
pub struct BatchOutput<'t> {
    /// Predicted next observed states, `(windows * N_o, d)`.
    pub prediction: Var<'t>,
    /// True next observed states in the same row order.
    pub target: ArrayD<f64>,
    /// Entrywise sum of the adjacency over `n^2`, averaged over samples.
    pub density: Var<'t>,
}

#[derive(Debug, Clone, Copy)]
enum Slot {
    Known,
    Inferred(usize),
}

impl GinParameters {
    pub fn n(&self) -> usize {
        self.partition.n()
    }

    pub fn dynamics(&self) -> Dynamics {
        self.learner.dynamics
    }

    pub fn bind<'t>(&self, tape: &'t Tape) -> BoundGin<'t> {
        BoundGin {
            learner: self.learner.bind(tape),
            theta: tape.param(&self.scores.theta),
            gamma: self.hidden.as_ref().map(|h| tape.param(&h.gamma)),
        }
    }

    /// Adds gradients from `grads` to every parameter that was bound.
    pub fn accumulate(&mut self, grads: &Gradients) {
        self.learner.params_mut().for_each(|p| p.accumulate_grad(grads));
        self.scores.theta.accumulate_grad(grads);
        if let Some(h) = &mut self.hidden {
            h.gamma.accumulate_grad(grads);
        }
    }

    pub fn zero_grad(&mut self) {
        self.learner.params_mut().for_each(Parameter::zero_grad);
        self.scores.theta.zero_grad();
        if let Some(h) = &mut self.hidden {
            h.gamma.zero_grad();
        }
    }

    /// Incoming weighted neighbours of each observed node: known edges and
    /// inferred entries. Known non-edges are dropped, which is exact.
    fn sources(&self) -> Vec<Vec<(usize, Slot)>> {
        let n = self.n();
        let known = self.scores.known();
        self.partition
            .observed()
            .iter()
            .map(|&i| {
                (0..n)
                    .filter(|&j| j != i)
                    .filter_map(|j| match self.scores.entry(j, i) {
                        Some(k) => Some((j, Slot::Inferred(k))),
                        None if known[[j, i]] != 0.0 => Some((j, Slot::Known)),
                        None => None,
                    })
                    .collect()
            })
            .collect()
    }

    /// Teacher-forced one-step predictions of the observed nodes for the
    /// given windows of an observed-only dataset (`(S, t, N_o, d)`).
    pub fn forward_batch<'t>(
        &self,
        bound: &BoundGin<'t>,
        data: &TrajectoryDataset,
        windows: &[usize],
        draw: &EdgeDraw,
    ) -> Result<BatchOutput<'t>> {
        let tape = bound.theta.tape();
        let p = &self.partition;
        let (no, nu, d) = (p.n_observed(), p.n_hidden(), self.dynamics().dim());
        if data.n() != no || data.dim() != d || data.window_len() < 2 {
            return Err(GinError::shape("forward_batch", &[data.n(), data.dim()], &[no, d]));
        }
        if let Some(&w) = windows.iter().find(|&&w| w >= data.len()) {
            return Err(GinError::Range { id: w, n: data.len() });
        }
        let b = windows.len();
        let k = self.scores.len();
        let n = self.n();

        let entries = match draw {
            EdgeDraw::Relaxed { noise, tau, hard } => {
                if noise.nrows() != 1 && noise.nrows() != b || noise.ncols() != k {
                    return Err(GinError::shape("forward_batch noise", noise.shape(), &[b, k]));
                }
                relaxed_entries(bound.theta.reshape(&[1, k])?, noise, *tau, *hard)?
            }
            EdgeDraw::Probabilities => bound.theta.reshape(&[1, k])?.sigmoid(),
            EdgeDraw::Threshold => {
                let hard = self.scores.theta.value.mapv(|t| if t > 0.0 { 1.0 } else { 0.0 });
                tape.constant(hard.into_shape_with_order(IxDyn(&[1, k])).expect("flat scores"))
            }
        };
        let samples = entries.shape()[0];
        let known_sum = self.scores.known().sum();
        let density = entries
            .sum()
            .scale(2.0 / (samples as f64 * (n * n) as f64))
            .add_scalar(known_sum / (n * n) as f64);

        let dedup = self.dynamics().is_binary();
        let mut table: Vec<f64> = Vec::new();
        let mut interned: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut obs_rows = vec![0usize; b * no];
        let mut target = Vec::with_capacity(b * no * d);
        for (bi, &w) in windows.iter().enumerate() {
            let x0 = data.state(w, 0);
            let x1 = data.state(w, 1);
            for o in 0..no {
                let row = x0.row(o);
                let idx = if dedup {
                    let key: Vec<u64> = row.iter().map(|v| v.to_bits()).collect();
                    let next = table.len() / d;
                    let idx = *interned.entry(key).or_insert(next);
                    if idx == next {
                        table.extend(row.iter());
                    }
                    idx
                } else {
                    table.extend(row.iter());
                    table.len() / d - 1
                };
                obs_rows[bi * no + o] = idx;
                target.extend(x1.row(o).iter());
            }
        }
        let constant_rows = table.len() / d;
        let constants = tape.constant(
            ArrayD::from_shape_vec(IxDyn(&[constant_rows, d]), table).expect("state table"),
        );
        let states = match (&self.hidden, bound.gamma) {
            (Some(h), Some(gamma)) if nu > 0 => concat(&[constants, h.generate_from(gamma, windows)?], 0)?,
            _ if nu > 0 => return Err(GinError::Contract("hidden nodes without initial-state parameters".into())),
            _ => constants,
        };

        let mut pos = vec![(false, 0usize); n];
        for (o, &i) in p.observed().iter().enumerate() {
            pos[i] = (false, o);
        }
        for (u, &i) in p.hidden().iter().enumerate() {
            pos[i] = (true, u);
        }
        let sources = self.sources();
        let ones_slot = samples * k;
        let mut plan = MessagePlan::new(dedup);
        let mut weight_idx = Vec::new();
        for bi in 0..b {
            let sample_row = if samples == 1 { 0 } else { bi };
            for (o, srcs) in sources.iter().enumerate() {
                let dst = obs_rows[bi * no + o];
                let t = plan.add_target(dst);
                for &(j, slot) in srcs {
                    let src = match pos[j] {
                        (false, oj) => obs_rows[bi * no + oj],
                        (true, u) => constant_rows + bi * nu + u,
                    };
                    plan.add_message(src, dst, t);
                    weight_idx.push(match slot {
                        Slot::Known => ones_slot,
                        Slot::Inferred(e) => sample_row * k + e,
                    });
                }
            }
        }
        let flat = concat(
            &[entries.reshape(&[samples * k])?, tape.constant(ArrayD::ones(IxDyn(&[1])))],
            0,
        )?;
        let weights = flat.select(0, &weight_idx)?;
        let prediction = bound.learner.propagate(states, &plan, weights)?;
        Ok(BatchOutput {
            prediction,
            target: ArrayD::from_shape_vec(IxDyn(&[b * no, d]), target).expect("targets"),
            density,
        })
    }

    /// Writes parameters and a JSON description into `dir`.
    pub fn save(&self, dir: &Path, seed: u64, step: u64) -> Result<()> {
        let mut params: Vec<&Parameter> = self.learner.params().collect();
        params.push(&self.scores.theta);
        if let Some(h) = &self.hidden {
            params.push(&h.gamma);
        }
        autodiff::save_checkpoint(dir, &params, seed, step)?;
        let manifest = ModelManifest {
            n: self.n(),
            n_hidden: self.partition.n_hidden(),
            d: self.dynamics().dim(),
            hidden_width: self.learner.width,
            tau: self.scores.tau,
            dynamics: self.dynamics(),
            hidden: self.partition.hidden().to_vec(),
            inferred: self.scores.pairs().to_vec(),
            known_edges: known_edges(self.scores.known()),
            state_activation: self.hidden.as_ref().map(|h| h.activation),
        };
        let path = dir.join("model.json");
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| GinError::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("model.json");
        let text = std::fs::read_to_string(&path).map_err(|e| GinError::io(&path, e))?;
        let m: ModelManifest = serde_json::from_str(&text)?;
        let (_, params) = autodiff::load_checkpoint(dir)?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let partition = NodePartition::new(m.n, &m.hidden)?;
        let mut known = Array2::zeros((m.n, m.n));
        for &(i, j) in &m.known_edges {
            known[[i, j]] = 1.0;
            known[[j, i]] = 1.0;
        }
        let mut scores = EdgeScores::new(m.n, m.inferred.clone(), known, m.tau, ScoreInit::default(), &mut rng)?;
        let mut learner = DynamicsLearner::new(m.dynamics, m.hidden_width, &mut rng)?;
        let mut hidden = m
            .state_activation
            .map(|a| HiddenInitStates::new(1, m.n_hidden, m.d, a, &mut rng))
            .transpose()?;
        let mut slots: Vec<&mut Parameter> = learner.params_mut().collect();
        slots.push(&mut scores.theta);
        if let Some(h) = &mut hidden {
            slots.push(&mut h.gamma);
        }
        if slots.len() != params.len() {
            return Err(GinError::Serde(format!(
                "checkpoint has {} arrays, model needs {}",
                params.len(),
                slots.len()
            )));
        }
        for (slot, loaded) in slots.into_iter().zip(params) {
            let fixed_shape = slot.name() != "gamma";
            if slot.name() != loaded.name() || fixed_shape && slot.shape() != loaded.shape() {
                return Err(GinError::Serde(format!(
                    "checkpoint array {} {:?} does not fit {} {:?}",
                    loaded.name(),
                    loaded.shape(),
                    slot.name(),
                    slot.shape()
                )));
            }
            slot.value = loaded.value;
        }
        Ok(GinParameters {
            partition,
            scores,
            hidden,
            learner,
        })
    }
}

fn known_edges(known: &Array2<f64>) -> Vec<(usize, usize)> {
    let n = known.nrows();
    (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .filter(|&(i, j)| known[[i, j]] != 0.0)
        .collect()
}

/// Hyperparameter description stored next to a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub n: usize,
    pub n_hidden: usize,
    pub d: usize,
    pub hidden_width: usize,
    pub tau: f64,
    pub dynamics: Dynamics,
    pub hidden: Vec<usize>,
    pub inferred: Vec<(usize, usize)>,
    pub known_edges: Vec<(usize, usize)>,
    pub state_activation: Option<StateActivation>,
}

/// Mean of `sigmoid(theta)`; used to compare sparsity between runs.
pub fn mean_probability(scores: &EdgeScores) -> f64 {
    let t: Array1<f64> = scores.theta.value.iter().map(|&v| sigmoid(v)).collect();
    t.mean().unwrap_or(0.0)
}
