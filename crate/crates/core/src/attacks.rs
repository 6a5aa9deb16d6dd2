//! The rushing, omniscient adversary.
//!
//! Each attack sees every honest half-step of the current epoch and returns
//! one update per honest neighbor of the Byzantine node. Honest sums are taken
//! over the receiver's honest in-neighborhood (self included); weights outside
//! it are zero. Payloads divide by the receiver's total Byzantine weight
//! `delta_i`, which equals `W_ib` for a single adversary.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::aggregators::{clip, AggregatorKind, AggregatorSpec, TauPolicy};
use crate::error::{Error, Result};
use crate::params::ParamVector;
use crate::rng::{purpose, Stream};
use crate::topology::{MixingMatrix, Topology};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    /// The Byzantine node follows the protocol.
    Honest,
    StateOverride,
    StateOverrideClipAware,
    Sandtrap,
    Dissensus,
    Noisy,
}

impl AttackKind {
    pub const ALL: [AttackKind; 6] = [
        AttackKind::Honest,
        AttackKind::StateOverride,
        AttackKind::StateOverrideClipAware,
        AttackKind::Sandtrap,
        AttackKind::Dissensus,
        AttackKind::Noisy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Honest => "honest",
            AttackKind::StateOverride => "state_override",
            AttackKind::StateOverrideClipAware => "state_override_clip_aware",
            AttackKind::Sandtrap => "sandtrap",
            AttackKind::Dissensus => "dissensus",
            AttackKind::Noisy => "noisy",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackSpec {
    pub kind: AttackKind,
    /// State-override payload; `None` means the all-zero model.
    pub target: Option<ParamVector>,
    /// Sandtrap victim.
    pub victim: Option<usize>,
    /// Dissensus scale or noisy-attack strength.
    pub epsilon: f64,
    /// Noisy-attack entries are drawn from `[0, noise_high]`.
    pub noise_high: f64,
}

impl AttackSpec {
    pub const DEFAULT_NOISE_HIGH: f64 = 0.01;

    pub fn new(kind: AttackKind) -> Self {
        let epsilon = if kind == AttackKind::Noisy { 0.05 } else { 1.0 };
        Self {
            kind,
            target: None,
            victim: None,
            epsilon,
            noise_high: Self::DEFAULT_NOISE_HIGH,
        }
    }

    pub fn honest() -> Self {
        Self::new(AttackKind::Honest)
    }

    pub fn with_victim(mut self, victim: usize) -> Self {
        self.victim = Some(victim);
        self
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn with_target(mut self, target: ParamVector) -> Self {
        self.target = Some(target);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !self.epsilon.is_finite() {
            return Err(Error::param("epsilon must be finite"));
        }
        if self.kind == AttackKind::Noisy && !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(Error::param(format!("noisy epsilon must be in (0, 1], got {}", self.epsilon)));
        }
        if !(self.noise_high >= 0.0 && self.noise_high.is_finite()) {
            return Err(Error::param("noise_high must be finite and non-negative"));
        }
        if self.kind == AttackKind::Sandtrap && self.victim.is_none() {
            return Err(Error::param("sandtrap requires a victim"));
        }
        Ok(())
    }

    fn target_for(&self, dim: usize) -> Result<ParamVector> {
        match &self.target {
            Some(t) => {
                t.check_dim(dim, "attack target")?;
                Ok(t.clone())
            }
            None => Ok(ParamVector::zeros(dim)),
        }
    }
}

/// Everything the adversary knows when it crafts its updates.
#[derive(Clone, Copy, Debug)]
pub struct OmniscientView<'a> {
    pub seed: u64,
    pub epoch: u64,
    pub byzantine: usize,
    pub topology: &'a Topology,
    pub mixing: &'a MixingMatrix,
    /// Current-epoch half-steps of every honest node.
    pub honest_half_steps: &'a BTreeMap<usize, ParamVector>,
    /// Receivers' aggregation rule, so defense-aware attacks can predict clipping.
    pub aggregator: &'a AggregatorSpec,
}

impl<'a> OmniscientView<'a> {
    fn dim(&self) -> usize {
        self.honest_half_steps
            .values()
            .next()
            .map(ParamVector::dim)
            .unwrap_or(0)
    }

    /// Honest neighbors of the adversary, in index order.
    pub fn receivers(&self) -> Vec<usize> {
        self.topology
            .neighbors(self.byzantine)
            .filter(|j| self.honest_half_steps.contains_key(j))
            .collect()
    }

    fn half_step(&self, i: usize) -> Result<&'a ParamVector> {
        self.honest_half_steps
            .get(&i)
            .ok_or_else(|| Error::protocol(format!("no half-step recorded for honest node {i}")))
    }

    /// `Σ_{j honest} W_ij θ_j`, optionally skipping one node.
    fn honest_contribution(&self, i: usize, skip: Option<usize>) -> ParamVector {
        let mut acc = ParamVector::zeros(self.dim());
        for (&j, theta) in self.honest_half_steps {
            if Some(j) == skip {
                continue;
            }
            let w = self.mixing.get(i, j);
            if w > 0.0 {
                acc.axpy(w, theta);
            }
        }
        acc
    }

    /// `Σ_{j honest} W_ij (θ_j - θ_i)`
    fn honest_drift(&self, i: usize, theta_i: &ParamVector) -> ParamVector {
        let mut acc = ParamVector::zeros(self.dim());
        for (&j, theta) in self.honest_half_steps {
            let w = self.mixing.get(i, j);
            if w > 0.0 && j != i {
                acc.axpy(w, &(theta - theta_i));
            }
        }
        acc
    }

    /// Total weight receiver `i` gives to non-honest senders.
    fn delta(&self, i: usize) -> Result<f64> {
        let delta: f64 = (0..self.mixing.size())
            .filter(|j| *j != i && !self.honest_half_steps.contains_key(j))
            .map(|j| self.mixing.get(i, j))
            .sum();
        if delta <= 0.0 {
            return Err(Error::param(format!(
                "receiver {i} assigns no weight to the adversary"
            )));
        }
        Ok(delta)
    }

    /// The radius receiver `i` will clip with, computed from honest inputs only.
    fn predicted_tau(&self, i: usize, theta_i: &ParamVector) -> Result<f64> {
        let policy = match self.aggregator.kind {
            AggregatorKind::ScClip(p) => p,
            _ => return Ok(f64::INFINITY),
        };
        Ok(match policy {
            TauPolicy::Constant(v) => v,
            TauPolicy::Ideal => {
                let spread: f64 = self
                    .honest_half_steps
                    .iter()
                    .filter(|(j, _)| **j != i)
                    .map(|(&j, theta)| self.mixing.get(i, j) * theta_i.dist_sq(theta))
                    .sum();
                (spread / self.delta(i)?).sqrt()
            }
            TauPolicy::MinDistance => self
                .honest_half_steps
                .iter()
                .filter(|(j, _)| **j != i && self.mixing.get(i, **j) > 0.0)
                .map(|(_, theta)| theta_i.dist(theta))
                .fold(f64::INFINITY, f64::min),
        })
    }
}

/// Overrides each receiver's naive aggregate with the target model.
pub fn attack_state_override(view: &OmniscientView, spec: &AttackSpec) -> Result<BTreeMap<usize, ParamVector>> {
    let target = spec.target_for(view.dim())?;
    let mut out = BTreeMap::new();
    for i in view.receivers() {
        let delta = view.delta(i)?;
        let mut u = &target - &view.honest_contribution(i, None);
        u.scale_in_place(1.0 / delta);
        out.insert(i, u);
    }
    Ok(out)
}

/// State override that stays inside each receiver's clipping radius.
pub fn attack_state_override_clip_aware(
    view: &OmniscientView,
    spec: &AttackSpec,
) -> Result<BTreeMap<usize, ParamVector>> {
    let target = spec.target_for(view.dim())?;
    let mut out = BTreeMap::new();
    for i in view.receivers() {
        let theta_i = view.half_step(i)?;
        let delta = view.delta(i)?;
        let tau = view.predicted_tau(i, theta_i)?;
        if !tau.is_finite() {
            let mut u = &target - &view.honest_contribution(i, None);
            u.scale_in_place(1.0 / delta);
            out.insert(i, u);
            continue;
        }
        let mut honest_displacement = ParamVector::zeros(view.dim());
        for (&j, theta) in view.honest_half_steps {
            let w = view.mixing.get(i, j);
            if w > 0.0 && j != i {
                honest_displacement.axpy(w, &clip(&(theta - theta_i), tau));
            }
        }
        let mut wanted = &(&target - theta_i) - &honest_displacement;
        wanted.scale_in_place(1.0 / delta);
        out.insert(i, theta_i + &clip(&wanted, tau));
    }
    Ok(out)
}

/// Freezes the victim at its own half-step; others get their honest
/// contribution without the victim.
pub fn attack_sandtrap(view: &OmniscientView, spec: &AttackSpec) -> Result<BTreeMap<usize, ParamVector>> {
    let victim = spec
        .victim
        .ok_or_else(|| Error::param("sandtrap requires a victim"))?;
    let receivers = view.receivers();
    if !receivers.contains(&victim) {
        return Err(Error::param(format!(
            "sandtrap victim {victim} is not an honest neighbor of node {}",
            view.byzantine
        )));
    }
    let mut out = BTreeMap::new();
    for i in receivers {
        let u = if i == victim {
            let theta_v = view.half_step(victim)?;
            let mut u = theta_v - &view.honest_contribution(victim, None);
            u.scale_in_place(1.0 / view.delta(victim)?);
            u
        } else {
            view.honest_contribution(i, Some(victim))
        };
        out.insert(i, u);
    }
    Ok(out)
}

/// Cancels `epsilon` of each receiver's honest drift.
pub fn attack_dissensus(view: &OmniscientView, spec: &AttackSpec) -> Result<BTreeMap<usize, ParamVector>> {
    let mut out = BTreeMap::new();
    for i in view.receivers() {
        let theta_i = view.half_step(i)?;
        let delta = view.delta(i)?;
        let drift = view.honest_drift(i, theta_i);
        let mut u = theta_i.clone();
        u.axpy(-spec.epsilon / delta, &drift);
        out.insert(i, u);
    }
    Ok(out)
}

/// Where a noisy update goes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoisyMode {
    /// One echo per receiver, each with fresh noise.
    Dl,
    /// A single update to the server.
    Fl,
}

/// Stream id used for the single federated noisy update.
pub const FL_NOISE_NODE: u64 = u64::MAX;

fn noise(seed: u64, epoch: u64, node: u64, dim: usize, high: f64) -> ParamVector {
    let mut s = Stream::new(seed, purpose::NOISE, epoch, node);
    ParamVector::from_vec((0..dim).map(|_| s.uniform_in(0.0, high)).collect())
}

/// Decentralized noisy echo: `(1 - eps) θ_i + eps z_i` per receiver.
pub fn attack_noisy_dl(view: &OmniscientView, spec: &AttackSpec) -> Result<BTreeMap<usize, ParamVector>> {
    let mut out = BTreeMap::new();
    for i in view.receivers() {
        let theta_i = view.half_step(i)?;
        let z = noise(view.seed, view.epoch, i as u64, view.dim(), spec.noise_high);
        let mut u = theta_i.scaled(1.0 - spec.epsilon);
        u.axpy(spec.epsilon, &z);
        out.insert(i, u);
    }
    Ok(out)
}

/// Federated noisy update: `(1 - eps) mean_H θ + eps z`.
pub fn attack_noisy_fl(
    seed: u64,
    epoch: u64,
    honest_half_steps: &BTreeMap<usize, ParamVector>,
    spec: &AttackSpec,
) -> Result<ParamVector> {
    let dim = honest_half_steps
        .values()
        .next()
        .map(ParamVector::dim)
        .ok_or_else(|| Error::param("noisy attack needs at least one honest update"))?;
    let mut mean = ParamVector::zeros(dim);
    for theta in honest_half_steps.values() {
        mean.axpy(1.0, theta);
    }
    mean.scale_in_place((1.0 - spec.epsilon) / honest_half_steps.len() as f64);
    let z = noise(seed, epoch, FL_NOISE_NODE, dim, spec.noise_high);
    mean.axpy(spec.epsilon, &z);
    Ok(mean)
}

/// Dispatches a decentralized attack. `Honest` is handled by the engine and
/// yields an empty map here.
pub fn craft_updates(view: &OmniscientView, spec: &AttackSpec) -> Result<BTreeMap<usize, ParamVector>> {
    match spec.kind {
        AttackKind::Honest => Ok(BTreeMap::new()),
        AttackKind::StateOverride => attack_state_override(view, spec),
        AttackKind::StateOverrideClipAware => attack_state_override_clip_aware(view, spec),
        AttackKind::Sandtrap => attack_sandtrap(view, spec),
        AttackKind::Dissensus => attack_dissensus(view, spec),
        AttackKind::Noisy => attack_noisy_dl(view, spec),
    }
}
