//! Experiment configuration: a TOML document with one table per concern.
//!
//! ```toml
//! name = "my-run"
//! seed = 3
//! mode = "dl"            # or "fl"
//! epochs = 300
//!
//! [task]
//! num_classes = 10
//! feature_dim = 20
//! samples_per_class = 100
//! spread = 0.5
//!
//! [topology]
//! kind = "torus3x3"      # ring | regular | complete | torus3x3 | dumbbell9 | star_fl
//! nodes = 9              # users only for star_fl; the server is extra
//! byzantine = [8]
//!
//! [training]
//! alpha = 0.9
//! eta = 0.01
//!
//! [aggregator]
//! rule = "scclip"        # naive | scclip | rfa
//! tau = "ideal"          # ideal | constant | min_distance
//!
//! [attack]
//! kind = "state_override"
//! ```
//!
//! Every key is optional. A top-level `preset = "<name>"` starts from that
//! preset (its first run, or the one named by `variant`) and the rest of the
//! document overrides it.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::aggregators::{AggregatorKind, AggregatorSpec, TauPolicy};
use crate::attacks::{AttackKind, AttackSpec};
use crate::error::{Error, Result};
use crate::params::ParamVector;
use crate::topology::{build_topology, uniform_mixing_with, validate_topology, SelfWeight, Topology, TopologyKind};

/// Environment variable naming the default trace directory.
pub const OUT_DIR_ENV: &str = "BYZDL_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "traces";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Dl,
    Fl,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub mode: Mode,
    pub epochs: usize,
    pub task: TaskConfig,
    pub topology: TopologyConfig,
    pub training: TrainingConfig,
    pub aggregator: AggregatorConfig,
    pub attack: AttackConfig,
    pub output: OutputConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            seed: 1,
            mode: Mode::Dl,
            epochs: 300,
            task: TaskConfig::default(),
            topology: TopologyConfig::default(),
            training: TrainingConfig::default(),
            aggregator: AggregatorConfig::default(),
            attack: AttackConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskConfig {
    pub num_classes: usize,
    pub feature_dim: usize,
    pub samples_per_class: usize,
    pub spread: f64,
    /// Multiplies every feature after generation.
    pub feature_scale: f64,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            num_classes: 10,
            feature_dim: 20,
            samples_per_class: 100,
            spread: 0.5,
            feature_scale: 2.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologyConfig {
    pub kind: TopologyKind,
    pub nodes: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub degree: Option<usize>,
    pub byzantine: Vec<usize>,
    /// Drop this node (and its data) after building the graph.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub remove_node: Option<usize>,
    pub self_weight: SelfWeight,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        Self {
            kind: TopologyKind::Torus3x3,
            nodes: 9,
            degree: None,
            byzantine: vec![8],
            remove_node: None,
            self_weight: SelfWeight::Include,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub alpha: f64,
    pub eta: f64,
    /// Mini-batch size drawn with replacement; absent means the full shard.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    /// Standard deviation of the shared initial model; defaults to
    /// `1 / sqrt(3 (p + 1))`, the spread of a fan-in uniform initialization.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init_std: Option<f64>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            alpha: 0.9,
            eta: 0.01,
            batch_size: None,
            init_std: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    #[default]
    Naive,
    Scclip,
    Rfa,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TauChoice {
    #[default]
    Ideal,
    Constant,
    MinDistance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AggregatorConfig {
    pub rule: Rule,
    pub tau: TauChoice,
    pub tau_const: f64,
    pub rfa_iters: usize,
    pub rfa_eps: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ideal_fallback: Option<f64>,
}

impl Default for AggregatorConfig {
    fn default() -> Self {
        Self {
            rule: Rule::Naive,
            tau: TauChoice::Ideal,
            tau_const: 1.0,
            rfa_iters: AggregatorSpec::DEFAULT_RFA_ITERS,
            rfa_eps: AggregatorSpec::DEFAULT_RFA_EPS,
            ideal_fallback: None,
        }
    }
}

impl AggregatorConfig {
    pub fn spec(&self) -> AggregatorSpec {
        let kind = match self.rule {
            Rule::Naive => AggregatorKind::Naive,
            Rule::Rfa => AggregatorKind::Rfa,
            Rule::Scclip => AggregatorKind::ScClip(match self.tau {
                TauChoice::Ideal => TauPolicy::Ideal,
                TauChoice::Constant => TauPolicy::Constant(self.tau_const),
                TauChoice::MinDistance => TauPolicy::MinDistance,
            }),
        };
        AggregatorSpec {
            kind,
            rfa_iters: self.rfa_iters,
            rfa_eps: self.rfa_eps,
            ideal_fallback: self.ideal_fallback,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// The all-zero model.
    #[default]
    Zeros,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    pub kind: AttackKind,
    pub target: Target,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub victim: Option<usize>,
    /// Defaults to 0.05 for the noisy attack and 1 otherwise.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    pub noise_high: f64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            kind: AttackKind::Honest,
            target: Target::Zeros,
            victim: None,
            epsilon: None,
            noise_high: AttackSpec::DEFAULT_NOISE_HIGH,
        }
    }
}

impl AttackConfig {
    pub fn spec(&self, dim: usize) -> AttackSpec {
        let mut spec = AttackSpec::new(self.kind);
        if let Some(e) = self.epsilon {
            spec.epsilon = e;
        }
        spec.victim = self.victim;
        spec.noise_high = self.noise_high;
        spec.target = Some(match self.target {
            Target::Zeros => ParamVector::zeros(dim),
        });
        spec
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
}

impl ExperimentConfig {
    /// Fills defaults that depend on other fields so the manifest is explicit.
    pub fn resolved(mut self) -> Self {
        if self.attack.epsilon.is_none() {
            self.attack.epsilon = Some(AttackSpec::new(self.attack.kind).epsilon);
        }
        if self.training.init_std.is_none() {
            self.training.init_std = Some(1.0 / (3.0 * (self.task.feature_dim + 1) as f64).sqrt());
        }
        self
    }

    pub fn model_dim(&self) -> usize {
        self.task.num_classes * (self.task.feature_dim + 1)
    }

    /// Builds the communication graph (before any node removal).
    pub fn build_topology(&self) -> Result<Topology> {
        let byz: BTreeSet<usize> = self.topology.byzantine.iter().copied().collect();
        build_topology(self.topology.kind, self.topology.nodes, self.topology.degree, &byz)
    }

    /// Checks every field, collecting all problems with their paths.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        let mut check = |ok: bool, msg: String| {
            if !ok {
                errs.push(msg);
            }
        };

        check(self.epochs >= 1, "epochs: must be at least 1".into());
        let t = &self.task;
        check(t.num_classes >= 2, format!("task.num_classes: must be >= 2, got {}", t.num_classes));
        check(t.feature_dim >= 2, format!("task.feature_dim: must be >= 2, got {}", t.feature_dim));
        check(
            t.samples_per_class >= 10,
            format!("task.samples_per_class: must be >= 10, got {}", t.samples_per_class),
        );
        check(t.spread > 0.0 && t.spread.is_finite(), format!("task.spread: must be > 0, got {}", t.spread));
        check(
            t.feature_scale > 0.0 && t.feature_scale.is_finite(),
            format!("task.feature_scale: must be > 0, got {}", t.feature_scale),
        );

        let tr = &self.training;
        check((0.0..=1.0).contains(&tr.alpha), format!("training.alpha: must lie in [0, 1], got {}", tr.alpha));
        check(tr.eta >= 0.0 && tr.eta.is_finite(), format!("training.eta: must be >= 0, got {}", tr.eta));
        check(tr.batch_size != Some(0), "training.batch_size: must be positive".into());
        if let Some(s) = tr.init_std {
            check(s >= 0.0 && s.is_finite(), format!("training.init_std: must be >= 0, got {s}"));
        }

        let ag = &self.aggregator;
        check(ag.tau_const > 0.0 && ag.tau_const.is_finite(), format!("aggregator.tau_const: must be > 0, got {}", ag.tau_const));
        check(ag.rfa_iters >= 1, "aggregator.rfa_iters: must be at least 1".into());
        check(ag.rfa_eps > 0.0, format!("aggregator.rfa_eps: must be > 0, got {}", ag.rfa_eps));
        if let Some(f) = ag.ideal_fallback {
            check(f > 0.0, format!("aggregator.ideal_fallback: must be > 0, got {f}"));
        }

        let at = &self.attack;
        let eps = at.epsilon.unwrap_or(AttackSpec::new(at.kind).epsilon);
        check(eps.is_finite(), "attack.epsilon: must be finite".into());
        if at.kind == AttackKind::Noisy {
            check(eps > 0.0 && eps <= 1.0, format!("attack.epsilon: noisy attack needs (0, 1], got {eps}"));
        }
        check(
            at.noise_high >= 0.0 && at.noise_high.is_finite(),
            format!("attack.noise_high: must be >= 0, got {}", at.noise_high),
        );

        let top = &self.topology;
        let star = top.kind == TopologyKind::StarFl;
        match self.mode {
            Mode::Fl => check(star, "topology.kind: fl mode requires star_fl".into()),
            Mode::Dl => check(!star, "topology.kind: star_fl requires mode = \"fl\"".into()),
        }
        if self.mode == Mode::Fl {
            check(
                matches!(at.kind, AttackKind::Honest | AttackKind::Noisy | AttackKind::StateOverride),
                format!("attack.kind: {} has no federated form; use honest, noisy or state_override", at.kind.name()),
            );
            check(top.remove_node.is_none(), "topology.remove_node: not supported in fl mode".into());
        }
        for &b in &top.byzantine {
            check(b < top.nodes, format!("topology.byzantine: node {b} is out of range for {} nodes", top.nodes));
        }
        let distinct: BTreeSet<usize> = top.byzantine.iter().copied().collect();
        check(distinct.len() == top.byzantine.len(), "topology.byzantine: duplicate entries".into());
        check(
            at.kind == AttackKind::Honest || !top.byzantine.is_empty(),
            format!("attack.kind: {} needs at least one byzantine node", at.kind.name()),
        );
        if at.kind == AttackKind::Sandtrap {
            check(at.victim.is_some(), "attack.victim: sandtrap requires a victim".into());
        }
        if let Some(r) = top.remove_node {
            check(r < top.nodes, format!("topology.remove_node: node {r} is out of range"));
            check(!distinct.contains(&r), "topology.remove_node: cannot remove a byzantine node".into());
            check(
                at.kind != AttackKind::Sandtrap || at.victim != Some(r),
                "topology.remove_node: cannot remove the sandtrap victim".into(),
            );
        }

        if errs.is_empty() {
            if let Err(e) = self.check_graph() {
                errs.push(e);
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    fn check_graph(&self) -> std::result::Result<(), String> {
        let original = self.build_topology().map_err(|e| format!("topology: {e}"))?;
        let honest_users = original.honest().len() - usize::from(self.mode == Mode::Fl);
        if honest_users == 0 {
            return Err("topology.byzantine: at least one honest user is required".into());
        }
        if let Some(v) = self.attack.victim {
            let reachable = self.topology.byzantine.iter().any(|&b| original.is_adjacent(b, v));
            if original.is_byzantine(v) || !reachable {
                return Err(format!("attack.victim: node {v} is not an honest neighbor of a byzantine node"));
            }
        }
        let topo = match self.topology.remove_node {
            Some(r) => original.without_node(r).map_err(|e| format!("topology.remove_node: {e}"))?,
            None => original,
        };
        let mixing = uniform_mixing_with(&topo, self.topology.self_weight);
        if !validate_topology(&topo, &mixing).honest_subgraph_connected {
            return Err(format!(
                "topology: honest subgraph of {} is disconnected",
                self.topology.kind.name()
            ));
        }
        Ok(())
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Config(vec![format!("syntax: {}", e.to_string().trim_end())]))?;

    let preset = table.remove("preset");
    let variant = table.remove("variant");
    if variant.is_some() && preset.is_none() {
        return Err(Error::Config(vec!["variant: only meaningful together with preset".into()]));
    }
    if let Some(p) = preset {
        let name = p
            .as_str()
            .ok_or_else(|| Error::Config(vec!["preset: must be a string".into()]))?;
        let variant = match &variant {
            Some(v) => Some(
                v.as_str()
                    .ok_or_else(|| Error::Config(vec!["variant: must be a string".into()]))?,
            ),
            None => None,
        };
        let base = crate::presets::preset_variant(name, variant)?;
        let mut base_table = toml::Table::try_from(&base)
            .map_err(|e| Error::Config(vec![format!("preset {name}: {e}")]))?;
        merge(&mut base_table, table);
        table = base_table;
    }

    let cfg: ExperimentConfig = table
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(vec![e.to_string().trim_end().to_string()]))?;
    cfg.validate()?;
    Ok(cfg.resolved())
}

/// Renders a configuration as a TOML document that `parse_config` accepts.
pub fn render_config(cfg: &ExperimentConfig) -> String {
    toml::to_string(cfg).expect("experiment configs always serialize")
}
