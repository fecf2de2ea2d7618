//! Ground-truth network dynamics (voter model, coupled logistic maps) and
//! the window datasets the learner trains on.

use std::path::Path;

use ndarray::{s, Array2, Array3, Array4, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GinError, Result};
use crate::graph::{Graph, NodePartition};

/// Node states at one time step: row `i` is the state of node `i`.
pub type StateMatrix = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Dynamics {
    /// Binary opinions, one-hot encoded as `[1, 0]` (opinion 0) or `[0, 1]`.
    Voter,
    /// Coupled logistic maps `f(x) = r x (1 - x)` with coupling weight `coupling`.
    Cmn { coupling: f64, r: f64 },
}

impl Dynamics {
    pub fn cmn_default() -> Self {
        Dynamics::Cmn {
            coupling: 0.2,
            r: 3.5,
        }
    }

    /// State dimension per node.
    pub fn dim(&self) -> usize {
        match self {
            Dynamics::Voter => 2,
            Dynamics::Cmn { .. } => 1,
        }
    }

    pub fn is_binary(&self) -> bool {
        matches!(self, Dynamics::Voter)
    }

    /// Window layout that reproduces the usual data accounting for this dynamics.
    pub fn default_window_mode(&self) -> WindowMode {
        match self {
            Dynamics::Voter => WindowMode::Sliding,
            Dynamics::Cmn { .. } => WindowMode::Disjoint,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Dynamics::Voter => "voter",
            Dynamics::Cmn { .. } => "cmn",
        }
    }
}

fn check_rows(g: &Graph, x: &StateMatrix, d: usize) -> Result<()> {
    if x.nrows() != g.n() || x.ncols() != d {
        return Err(GinError::shape("state", &[g.n(), d], x.shape()));
    }
    Ok(())
}

/// Opinion held by a one-hot row, or an error when the row is not one-hot.
fn opinion(row: ndarray::ArrayView1<f64>, i: usize) -> Result<usize> {
    match (row[0], row[1]) {
        (a, b) if a == 1.0 && b == 0.0 => Ok(0),
        (a, b) if a == 0.0 && b == 1.0 => Ok(1),
        (a, b) => Err(GinError::State(format!(
            "node {i} state ({a}, {b}) is not one-hot"
        ))),
    }
}

pub fn one_hot(opinions: &[usize]) -> StateMatrix {
    let mut x = Array2::zeros((opinions.len(), 2));
    for (i, &o) in opinions.iter().enumerate() {
        x[[i, o]] = 1.0;
    }
    x
}

/// One synchronous voter update: node `i` takes opinion 1 with probability
/// equal to the fraction of its neighbors holding opinion 1. Isolated nodes
/// keep their opinion.
pub fn voter_step(g: &Graph, x: &StateMatrix, seed: u64) -> Result<StateMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    voter_step_rng(g, x, &mut rng)
}

pub(crate) fn voter_step_rng(g: &Graph, x: &StateMatrix, rng: &mut impl Rng) -> Result<StateMatrix> {
    check_rows(g, x, 2)?;
    let n = g.n();
    let ops = (0..n)
        .map(|i| opinion(x.row(i), i))
        .collect::<Result<Vec<_>>>()?;
    let adj = g.adjacency();
    let mut next = Vec::with_capacity(n);
    for i in 0..n {
        let mut deg = 0usize;
        let mut ones = 0usize;
        for (j, &a) in adj.row(i).iter().enumerate() {
            if a != 0.0 {
                deg += 1;
                ones += ops[j];
            }
        }
        // one draw per node regardless of degree keeps streams aligned
        let u: f64 = rng.random();
        next.push(if deg == 0 {
            ops[i]
        } else if u < ones as f64 / deg as f64 {
            1
        } else {
            0
        });
    }
    Ok(one_hot(&next))
}

fn logistic(r: f64, x: f64) -> f64 {
    r * x * (1.0 - x)
}

/// One coupled-map step:
/// `x_i' = (1 - eps) f(x_i) + eps / |N_i| * sum_{j in N_i} f(x_j)`.
/// Isolated nodes follow the bare logistic map.
pub fn cmn_step(g: &Graph, x: &StateMatrix, coupling: f64, r: f64) -> Result<StateMatrix> {
    check_rows(g, x, 1)?;
    if !(0.0..=1.0).contains(&coupling) {
        return Err(GinError::Parameter(format!(
            "coupling {coupling} not in [0, 1]"
        )));
    }
    if let Some((i, v)) = x.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
        return Err(GinError::State(format!("node {i} state {v} outside [0, 1]")));
    }
    let n = g.n();
    let f: Vec<f64> = x.iter().map(|&v| logistic(r, v)).collect();
    let adj = g.adjacency();
    let mut next = Array2::zeros((n, 1));
    for i in 0..n {
        let mut deg = 0usize;
        let mut acc = 0.0;
        for (j, &a) in adj.row(i).iter().enumerate() {
            if a != 0.0 {
                deg += 1;
                acc += f[j];
            }
        }
        next[[i, 0]] = if deg == 0 {
            f[i]
        } else {
            (1.0 - coupling) * f[i] + coupling * acc / deg as f64
        };
    }
    Ok(next)
}

/// Simulated trajectories, shape `(s, T + 1, n, d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectories {
    pub dynamics: Dynamics,
    pub states: Array4<f64>,
}

impl Trajectories {
    pub fn samples(&self) -> usize {
        self.states.shape()[0]
    }

    /// Number of evolution steps `T`.
    pub fn steps(&self) -> usize {
        self.states.shape()[1] - 1
    }

    pub fn n(&self) -> usize {
        self.states.shape()[2]
    }

    pub fn dim(&self) -> usize {
        self.states.shape()[3]
    }

    pub fn state(&self, sample: usize, t: usize) -> ArrayView2<'_, f64> {
        self.states.slice(s![sample, t, .., ..])
    }

    /// Writes `sample,t,node,dim,value` rows. CMN values carry 9 significant digits.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        use std::io::Write;
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| GinError::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let binary = self.dynamics.is_binary();
        let io = |e| GinError::io(path, e);
        writeln!(w, "sample,t,node,dim,value").map_err(io)?;
        for ((sample, t, node, dim), &v) in self.states.indexed_iter() {
            if binary {
                writeln!(w, "{sample},{t},{node},{dim},{}", v as u8).map_err(io)?;
            } else {
                writeln!(w, "{sample},{t},{node},{dim},{}", fmt_sig9(v)).map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }

    pub fn read_csv(path: impl AsRef<Path>, dynamics: Dynamics) -> Result<Self> {
        let path = path.as_ref();
        let mut rdr = csv::Reader::from_path(path).map_err(|e| GinError::Serde(e.to_string()))?;
        let mut rows = Vec::new();
        let mut dims = [0usize; 4];
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
            if rec.len() != 5 {
                return Err(GinError::Parse {
                    line,
                    msg: format!("expected 5 fields, found {}", rec.len()),
                });
            }
            let mut idx = [0usize; 4];
            for k in 0..4 {
                idx[k] = rec[k].trim().parse().map_err(|e| GinError::Parse {
                    line,
                    msg: format!("bad index `{}`: {e}", &rec[k]),
                })?;
                dims[k] = dims[k].max(idx[k] + 1);
            }
            let v: f64 = rec[4].trim().parse().map_err(|e| GinError::Parse {
                line,
                msg: format!("bad value `{}`: {e}", &rec[4]),
            })?;
            rows.push((idx, v));
        }
        let mut states = Array4::zeros((dims[0], dims[1], dims[2], dims[3]));
        for (idx, v) in rows {
            states[[idx[0], idx[1], idx[2], idx[3]]] = v;
        }
        if dims[3] != dynamics.dim() {
            return Err(GinError::State(format!(
                "state dimension {} does not match {} dynamics",
                dims[3],
                dynamics.name()
            )));
        }
        Ok(Trajectories { dynamics, states })
    }
}

fn fmt_sig9(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let magnitude = v.abs().log10().floor() as i32;
    let decimals = (8 - magnitude).max(0) as usize;
    format!("{v:.decimals$}")
}

/// Runs `s` independent trajectories of `steps` updates each. Voter initial
/// opinions are i.i.d. fair coins, CMN initial states i.i.d. uniform on [0, 1].
pub fn simulate(g: &Graph, dynamics: Dynamics, s: usize, steps: usize, seed: u64) -> Result<Trajectories> {
    if s == 0 {
        return Err(GinError::Parameter("need at least one initial condition".into()));
    }
    let n = g.n();
    let d = dynamics.dim();
    let mut states = Array4::zeros((s, steps + 1, n, d));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for sample in 0..s {
        let mut x = match dynamics {
            Dynamics::Voter => {
                let ops: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
                one_hot(&ops)
            }
            Dynamics::Cmn { .. } => Array2::from_shape_fn((n, 1), |_| rng.random::<f64>()),
        };
        states.slice_mut(s![sample, 0, .., ..]).assign(&x);
        for t in 1..=steps {
            x = match dynamics {
                Dynamics::Voter => voter_step_rng(g, &x, &mut rng)?,
                Dynamics::Cmn { coupling, r } => cmn_step(g, &x, coupling, r)?,
            };
            states.slice_mut(s![sample, t, .., ..]).assign(&x);
        }
    }
    Ok(Trajectories { dynamics, states })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowMode {
    /// Consecutive start offsets: `s * (T - t + 1)` windows, at least one per trajectory.
    Sliding,
    /// Non-overlapping consecutive blocks: `s * floor(T / t)` windows.
    Disjoint,
}

/// Length-`t` windows cut from trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDataset {
    pub dynamics: Dynamics,
    /// Shape `(S, t, n, d)`.
    pub windows: Array4<f64>,
    pub mode: WindowMode,
    /// Number of initial conditions the windows came from.
    pub s: usize,
    /// Steps per source trajectory.
    pub steps: usize,
}

impl TrajectoryDataset {
    pub fn len(&self) -> usize {
        self.windows.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn window_len(&self) -> usize {
        self.windows.shape()[1]
    }

    pub fn n(&self) -> usize {
        self.windows.shape()[2]
    }

    pub fn dim(&self) -> usize {
        self.windows.shape()[3]
    }

    pub fn state(&self, window: usize, t: usize) -> ArrayView2<'_, f64> {
        self.windows.slice(s![window, t, .., ..])
    }

    /// Subset of windows by index, in the given order.
    pub fn select(&self, indices: &[usize]) -> TrajectoryDataset {
        TrajectoryDataset {
            dynamics: self.dynamics,
            windows: self.windows.select(Axis(0), indices),
            mode: self.mode,
            s: self.s,
            steps: self.steps,
        }
    }

    /// Per-node series pooled over windows and time: shape `(S * t, n, d)`.
    pub fn pooled_series(&self) -> Array3<f64> {
        let (sw, t, n, d) = self.windows.dim();
        self.windows
            .clone()
            .into_shape_with_order((sw * t, n, d))
            .expect("contiguous window array")
    }
}

/// Cuts trajectories into windows of length `t`.
pub fn windowize(traj: &Trajectories, t: usize, mode: WindowMode) -> Result<TrajectoryDataset> {
    let len = traj.steps() + 1;
    if t == 0 || t > len {
        return Err(GinError::Parameter(format!(
            "window length {t} invalid for trajectories of length {len}"
        )));
    }
    let steps = traj.steps();
    let count = match mode {
        WindowMode::Sliding => (steps + 1).saturating_sub(t).max(1),
        WindowMode::Disjoint => (steps / t).max(1),
    };
    let stride = match mode {
        WindowMode::Sliding => 1,
        WindowMode::Disjoint => t,
    };
    let starts: Vec<usize> = (0..count).map(|k| k * stride).collect();
    let (s, n, d) = (traj.samples(), traj.n(), traj.dim());
    let mut windows = Array4::zeros((s * starts.len(), t, n, d));
    let mut w = 0;
    for sample in 0..s {
        for &start in &starts {
            windows
                .slice_mut(s![w, .., .., ..])
                .assign(&traj.states.slice(s![sample, start..start + t, .., ..]));
            w += 1;
        }
    }
    Ok(TrajectoryDataset {
        dynamics: traj.dynamics,
        windows,
        mode,
        s,
        steps: traj.steps(),
    })
}

/// Window indices of a train/test/validation split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Shuffles window indices with `seed` and cuts them in proportion to `ratios`
/// (train, test, validation). Test and validation sizes are floored; train
/// takes the remainder.
pub fn split(len: usize, ratios: (u32, u32, u32), seed: u64) -> Result<Split> {
    let (a, b, c) = ratios;
    if a == 0 || b == 0 || c == 0 {
        return Err(GinError::Parameter(format!(
            "split ratios must all be positive, got {a}:{b}:{c}"
        )));
    }
    if len == 0 {
        return Err(GinError::Parameter("cannot split an empty dataset".into()));
    }
    let total = (a + b + c) as usize;
    let n_test = len * b as usize / total;
    let n_val = len * c as usize / total;
    let n_train = len - n_test - n_val;
    if n_test == 0 || n_val == 0 || n_train == 0 {
        return Err(GinError::Parameter(format!(
            "{len} windows too few for a {a}:{b}:{c} split"
        )));
    }
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(Split {
        train: idx[..n_train].to_vec(),
        test: idx[n_train..n_train + n_test].to_vec(),
        validation: idx[n_train + n_test..].to_vec(),
    })
}

/// Dataset restricted to observed nodes. The full data stays reachable only
/// through [`ObservedView::ground_truth`], which evaluation code uses.
#[derive(Debug, Clone)]
pub struct ObservedView {
    observed: TrajectoryDataset,
    full: TrajectoryDataset,
    partition: NodePartition,
}

impl ObservedView {
    pub fn data(&self) -> &TrajectoryDataset {
        &self.observed
    }

    pub fn partition(&self) -> &NodePartition {
        &self.partition
    }

    /// Full-node windows, including hidden rows. For scoring only.
    pub fn ground_truth(&self) -> &TrajectoryDataset {
        &self.full
    }

    /// Hidden-node states of one window at step `t`, rows in hidden order.
    pub fn hidden_states(&self, window: usize, t: usize) -> Array2<f64> {
        self.full
            .state(window, t)
            .select(Axis(0), self.partition.hidden())
    }
}

pub fn mask_hidden(data: &TrajectoryDataset, p: &NodePartition) -> Result<ObservedView> {
    if p.n() != data.n() {
        return Err(GinError::shape("mask_hidden", &[p.n()], &[data.n()]));
    }
    let observed = TrajectoryDataset {
        windows: data.windows.select(Axis(2), p.observed()),
        ..data.clone()
    };
    Ok(ObservedView {
        observed,
        full: data.clone(),
        partition: p.clone(),
    })
}

/// Provenance record written next to generated datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub dynamics: Dynamics,
    pub n: usize,
    pub d: usize,
    pub s: usize,
    #[serde(rename = "T")]
    pub steps: usize,
    pub t: usize,
    pub mode: WindowMode,
    pub seed: u64,
    pub split_ratios: (u32, u32, u32),
}
