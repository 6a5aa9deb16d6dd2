//! The synchronous training loop for gossip and federated learning.
//!
//! One epoch: every participating node takes a momentum step on its shard,
//! the adversary reads all honest half-steps and crafts its messages, then
//! every participant aggregates its inbox. Metrics are read after aggregation.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;

use crate::aggregators::{aggregate, AggregatorSpec, InboxView};
use crate::attacks::{attack_noisy_fl, craft_updates, AttackKind, AttackSpec, OmniscientView};
use crate::config::{ExperimentConfig, Mode};
use crate::error::{Error, Result};
use crate::model::{apply_momentum, evaluate_accuracy, MomentumState, SoftmaxModel};
use crate::params::ParamVector;
use crate::rng::{purpose, Stream};
use crate::task::{make_synthetic_task, partition_by_class, Sample};
use crate::topology::{uniform_mixing_with, MixingMatrix, Topology};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Honest,
    Byzantine,
}

#[derive(Clone, Debug)]
pub struct NodeState {
    pub theta: ParamVector,
    pub momentum: MomentumState,
    pub samples: Vec<Sample>,
    pub role: Role,
    /// Index of this node before any removal.
    pub label: usize,
}

/// Federated server: the global model and the weights it applies to users.
#[derive(Clone, Debug)]
pub struct Server {
    pub theta: ParamVector,
    /// `(n + 1) x (n + 1)`; only the last row (the server's) is used.
    pub mixing: MixingMatrix,
}

#[derive(Clone, Debug)]
pub struct WorldState {
    pub epoch: u64,
    pub seed: u64,
    pub mode: Mode,
    pub nodes: Vec<NodeState>,
    pub topology: Topology,
    pub mixing: MixingMatrix,
    pub aggregator: AggregatorSpec,
    pub attack: AttackSpec,
    pub model: SoftmaxModel,
    pub test: Vec<Sample>,
    pub batch_size: Option<usize>,
    pub server: Option<Server>,
}

/// Metrics after one epoch. Per-node vectors are indexed like `nodes`;
/// Byzantine entries are `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochTrace {
    pub epoch: u64,
    pub consensus: Vec<Option<f64>>,
    pub distance: Vec<Option<f64>>,
    pub accuracy: Vec<Option<f64>>,
    /// Clipping radius each honest node used; `None` when there was none or it
    /// was unbounded.
    pub tau: Vec<Option<f64>>,
    pub mean_consensus: f64,
    pub mean_distance: f64,
    pub mean_accuracy: f64,
    pub mean_tau: Option<f64>,
}

/// A complete run: its resolved configuration and one record per epoch.
#[derive(Clone, Debug)]
pub struct RunTrace {
    pub config: ExperimentConfig,
    /// Original node index of every column.
    pub labels: Vec<usize>,
    pub honest: Vec<usize>,
    pub records: Vec<EpochTrace>,
}

impl RunTrace {
    pub fn last(&self) -> &EpochTrace {
        self.records.last().expect("runs have at least one epoch")
    }

    /// Column of the node originally labelled `label`.
    pub fn column(&self, label: usize) -> Option<usize> {
        self.labels.iter().position(|&l| l == label)
    }

    /// First epoch at which every honest `D_i` is below `threshold`.
    pub fn first_epoch_distance_below(&self, threshold: f64) -> Option<u64> {
        self.records
            .iter()
            .find(|r| r.distance.iter().flatten().all(|d| *d < threshold))
            .map(|r| r.epoch)
    }
}

impl WorldState {
    pub fn honest_set(&self) -> BTreeSet<usize> {
        (0..self.nodes.len())
            .filter(|&i| self.nodes[i].role == Role::Honest)
            .collect()
    }

    fn participants(&self) -> Vec<usize> {
        let everyone = self.attack.kind == AttackKind::Honest;
        (0..self.nodes.len())
            .filter(|&i| everyone || self.nodes[i].role == Role::Honest)
            .collect()
    }

    fn target(&self) -> ParamVector {
        self.attack
            .target
            .clone()
            .unwrap_or_else(|| ParamVector::zeros(self.model.dim()))
    }

    fn batch(&self, i: usize) -> Vec<&Sample> {
        let samples = &self.nodes[i].samples;
        match self.batch_size {
            Some(b) if !samples.is_empty() => {
                let mut s = Stream::new(self.seed, purpose::BATCH, self.epoch, self.nodes[i].label as u64);
                (0..b).map(|_| &samples[s.below(samples.len())]).collect()
            }
            _ => samples.iter().collect(),
        }
    }

    /// Momentum steps for `ids`, starting from each node's own parameters.
    fn half_steps(&self, ids: &[usize]) -> Vec<(ParamVector, MomentumState)> {
        ids.par_iter()
            .map(|&i| {
                let node = &self.nodes[i];
                let grad = self.model.gradient(&node.theta, self.batch(i));
                apply_momentum(&node.theta, &node.momentum, &grad)
            })
            .collect()
    }
}

/// Builds the initial world for a validated configuration.
pub fn build_world(cfg: &ExperimentConfig) -> Result<WorldState> {
    cfg.validate()?;
    let cfg = cfg.clone().resolved();
    let t = &cfg.task;
    let mut task = make_synthetic_task(cfg.seed, t.num_classes, t.feature_dim, t.samples_per_class, t.spread)?;
    if t.feature_scale != 1.0 {
        for s in task.train.iter_mut().chain(task.test.iter_mut()) {
            s.features.iter_mut().for_each(|x| *x *= t.feature_scale);
        }
    }
    let model = SoftmaxModel::new(t.num_classes, t.feature_dim);
    let dim = model.dim();

    let original = cfg.build_topology()?;
    let users = match cfg.mode {
        Mode::Dl => original.num_nodes(),
        Mode::Fl => original.num_nodes() - 1,
    };
    let honest_users: Vec<usize> = (0..users).filter(|i| !original.is_byzantine(*i)).collect();
    let shards = partition_by_class(&task, honest_users.len())?;
    let mut shard_of: BTreeMap<usize, Vec<Sample>> = BTreeMap::new();
    for (u, shard) in honest_users.iter().zip(shards) {
        shard_of.insert(*u, shard.samples);
    }

    let mut init = Stream::new(cfg.seed, purpose::INIT, 0, 0);
    let theta0 = ParamVector::from_vec((0..dim).map(|_| cfg.training.init_std.unwrap_or(0.0) * init.normal()).collect());

    let mut labels: Vec<usize> = (0..users).collect();
    let topology = match cfg.topology.remove_node {
        Some(r) => {
            labels.remove(r);
            original.without_node(r)?
        }
        None => original,
    };

    let nodes: Vec<NodeState> = labels
        .iter()
        .enumerate()
        .map(|(idx, &label)| {
            let samples = shard_of.get(&label).cloned().unwrap_or_default();
            let grad = model.gradient(&theta0, samples.iter());
            NodeState {
                theta: theta0.clone(),
                momentum: MomentumState::new(grad, cfg.training.alpha, cfg.training.eta),
                samples,
                role: if topology.is_byzantine(idx) {
                    Role::Byzantine
                } else {
                    Role::Honest
                },
                label,
            }
        })
        .collect();

    let mut attack = cfg.attack.spec(dim);
    if let Some(v) = attack.victim {
        attack.victim = labels.iter().position(|&l| l == v);
    }
    let mixing = uniform_mixing_with(&topology, cfg.topology.self_weight);
    let server = match cfg.mode {
        Mode::Dl => None,
        Mode::Fl => Some(Server {
            theta: theta0.clone(),
            mixing: server_mixing(users),
        }),
    };

    Ok(WorldState {
        epoch: 0,
        seed: cfg.seed,
        mode: cfg.mode,
        nodes,
        topology,
        mixing,
        aggregator: cfg.aggregator.spec(),
        attack,
        model,
        test: task.test,
        batch_size: cfg.training.batch_size,
        server,
    })
}

/// Server row `1/n` over users and zero on itself; user rows are identity.
pub fn server_mixing(users: usize) -> MixingMatrix {
    let n = users + 1;
    let mut rows = vec![vec![0.0; n]; n];
    for (i, row) in rows.iter_mut().enumerate().take(users) {
        row[i] = 1.0;
    }
    for w in rows[users].iter_mut().take(users) {
        *w = 1.0 / users as f64;
    }
    MixingMatrix::from_rows(rows).expect("server mixing is row-stochastic")
}

/// One synchronous gossip epoch.
pub fn run_dl_epoch(world: &mut WorldState) -> Result<EpochTrace> {
    if world.mode != Mode::Dl {
        return Err(Error::param("run_dl_epoch needs a decentralized world"));
    }
    let participants = world.participants();
    let steps = world.half_steps(&participants);
    let mut half: BTreeMap<usize, ParamVector> = BTreeMap::new();
    let mut momenta: BTreeMap<usize, MomentumState> = BTreeMap::new();
    for (&i, (h, m)) in participants.iter().zip(steps) {
        half.insert(i, h);
        momenta.insert(i, m);
    }

    let honest = world.honest_set();
    let honest_half: BTreeMap<usize, ParamVector> = honest.iter().map(|&i| (i, half[&i].clone())).collect();
    let mut crafted: BTreeMap<usize, BTreeMap<usize, ParamVector>> = BTreeMap::new();
    if world.attack.kind != AttackKind::Honest {
        for &b in world.topology.byzantine() {
            let view = OmniscientView {
                seed: world.seed,
                epoch: world.epoch,
                byzantine: b,
                topology: &world.topology,
                mixing: &world.mixing,
                honest_half_steps: &honest_half,
                aggregator: &world.aggregator,
            };
            crafted.insert(b, craft_updates(&view, &world.attack)?);
        }
    }

    let outcomes: Vec<Result<(ParamVector, Option<f64>)>> = participants
        .par_iter()
        .map(|&i| {
            let mut inbox = InboxView::new(i, half[&i].clone());
            for j in world.topology.neighbors(i) {
                let update = match half.get(&j) {
                    Some(h) => h.clone(),
                    None => crafted
                        .get(&j)
                        .and_then(|m| m.get(&i))
                        .cloned()
                        .ok_or_else(|| Error::protocol(format!("node {i} received nothing from {j}")))?,
                };
                inbox.received.insert(j, update);
            }
            aggregate(&world.aggregator, &inbox, &world.mixing, &honest)
        })
        .collect();

    let mut taus = vec![None; world.nodes.len()];
    for (&i, outcome) in participants.iter().zip(outcomes) {
        let (theta, tau) = outcome?;
        let node = &mut world.nodes[i];
        node.theta = theta;
        node.momentum = momenta.remove(&i).expect("momentum for every participant");
        taus[i] = tau;
    }
    world.epoch += 1;
    record(world, taus)
}

/// One federated round: users step from the global model, the server
/// aggregates every user's single update and broadcasts the result.
pub fn run_fl_round(world: &mut WorldState) -> Result<EpochTrace> {
    if world.mode != Mode::Fl {
        return Err(Error::param("run_fl_round needs a federated world"));
    }
    let server = world
        .server
        .clone()
        .ok_or_else(|| Error::protocol("federated world without a server"))?;
    let n = world.nodes.len();
    for node in world.nodes.iter_mut() {
        node.theta = server.theta.clone();
    }

    let participants = world.participants();
    let steps = world.half_steps(&participants);
    let mut half: BTreeMap<usize, ParamVector> = BTreeMap::new();
    for (&i, (h, m)) in participants.iter().zip(steps) {
        half.insert(i, h);
        world.nodes[i].momentum = m;
    }
    let honest = world.honest_set();
    let honest_half: BTreeMap<usize, ParamVector> = honest.iter().map(|&i| (i, half[&i].clone())).collect();

    let mut inbox = InboxView::new(n, server.theta.clone());
    for i in 0..n {
        let update = match half.get(&i) {
            Some(h) => h.clone(),
            None => byzantine_fl_update(world, &server.mixing, &honest_half)?,
        };
        inbox.received.insert(i, update);
    }
    let (theta, tau) = aggregate(&world.aggregator, &inbox, &server.mixing, &honest)?;
    for node in world.nodes.iter_mut() {
        node.theta = theta.clone();
    }
    if let Some(s) = world.server.as_mut() {
        s.theta = theta;
    }
    world.epoch += 1;
    let taus = (0..n).map(|i| if honest.contains(&i) { tau } else { None }).collect();
    record(world, taus)
}

fn byzantine_fl_update(
    world: &WorldState,
    mixing: &MixingMatrix,
    honest_half: &BTreeMap<usize, ParamVector>,
) -> Result<ParamVector> {
    let server = mixing.size() - 1;
    match world.attack.kind {
        AttackKind::Noisy => attack_noisy_fl(world.seed, world.epoch, honest_half, &world.attack),
        AttackKind::StateOverride => {
            let delta: f64 = world.topology.byzantine().iter().map(|&b| mixing.get(server, b)).sum();
            let mut u = world.target();
            for (&j, theta) in honest_half {
                u.axpy(-mixing.get(server, j), theta);
            }
            u.scale_in_place(1.0 / delta);
            Ok(u)
        }
        other => Err(Error::param(format!("attack {} has no federated form", other.name()))),
    }
}

/// `||θ_i - mean_H θ||²` for honest nodes; `None` elsewhere.
pub fn consensus_distance(states: &[ParamVector], honest: &BTreeSet<usize>) -> Vec<Option<f64>> {
    if honest.is_empty() {
        return vec![None; states.len()];
    }
    let mut mean = ParamVector::zeros(states[*honest.iter().next().unwrap()].dim());
    for &j in honest {
        mean.axpy(1.0, &states[j]);
    }
    mean.scale_in_place(1.0 / honest.len() as f64);
    (0..states.len())
        .map(|i| honest.contains(&i).then(|| states[i].dist_sq(&mean)))
        .collect()
}

/// `||θ_i - target||²` for honest nodes; `None` elsewhere.
pub fn distance_to_target(states: &[ParamVector], target: &ParamVector, honest: &BTreeSet<usize>) -> Vec<Option<f64>> {
    (0..states.len())
        .map(|i| honest.contains(&i).then(|| states[i].dist_sq(target)))
        .collect()
}

fn mean_of(values: &[Option<f64>]) -> Option<f64> {
    let finite: Vec<f64> = values.iter().flatten().copied().filter(|v| v.is_finite()).collect();
    (!finite.is_empty()).then(|| finite.iter().sum::<f64>() / finite.len() as f64)
}

fn record(world: &WorldState, taus: Vec<Option<f64>>) -> Result<EpochTrace> {
    let honest = world.honest_set();
    let states: Vec<ParamVector> = world.nodes.iter().map(|n| n.theta.clone()).collect();
    for &i in &honest {
        if !states[i].is_finite() {
            return Err(Error::protocol(format!("node {i} diverged at epoch {}", world.epoch)));
        }
    }
    let consensus = consensus_distance(&states, &honest);
    let distance = distance_to_target(&states, &world.target(), &honest);
    let accuracy: Vec<Option<f64>> = (0..states.len())
        .into_par_iter()
        .map(|i| {
            if honest.contains(&i) {
                evaluate_accuracy(&world.model, &states[i], &world.test).map(Some)
            } else {
                Ok(None)
            }
        })
        .collect::<Result<_>>()?;
    let tau: Vec<Option<f64>> = taus
        .into_iter()
        .enumerate()
        .map(|(i, t)| t.filter(|v| v.is_finite() && honest.contains(&i)))
        .collect();
    Ok(EpochTrace {
        epoch: world.epoch,
        mean_consensus: mean_of(&consensus).unwrap_or(0.0),
        mean_distance: mean_of(&distance).unwrap_or(0.0),
        mean_accuracy: mean_of(&accuracy).unwrap_or(0.0),
        mean_tau: mean_of(&tau),
        consensus,
        distance,
        accuracy,
        tau,
    })
}

/// Runs the configured number of epochs. Identical configs give identical traces.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunTrace> {
    let mut world = build_world(cfg)?;
    let mut records = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let rec = match world.mode {
            Mode::Dl => run_dl_epoch(&mut world)?,
            Mode::Fl => run_fl_round(&mut world)?,
        };
        records.push(rec);
    }
    Ok(RunTrace {
        config: cfg.clone().resolved(),
        labels: world.nodes.iter().map(|n| n.label).collect(),
        honest: world.honest_set().into_iter().collect(),
        records,
    })
}
