//! Named experiment setups. Each preset is a list of runs that are meant to be
//! compared with one another; run names are `<preset>/<variant>`.

use crate::attacks::AttackKind;
use crate::config::{ExperimentConfig, Mode, Rule, TauChoice};
use crate::error::{Error, Result};
use crate::topology::TopologyKind;

pub const PRESET_NAMES: [&str; 9] = [
    "fig2-torus-so",
    "fig2-dumbbell-so",
    "fig2-torus-st",
    "fig2-dumbbell-st",
    "conn-sweep",
    "noisy-dl-vs-fl",
    "tau-trace",
    "ra-fl-vs-dl",
    "table1-baselines",
];

/// Sandtrap victim in both nine-node layouts: the adversary's first neighbor, u3.
pub const SANDTRAP_VICTIM: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct Preset {
    pub name: String,
    pub runs: Vec<ExperimentConfig>,
}

impl Preset {
    pub fn run(&self, variant: &str) -> Option<&ExperimentConfig> {
        self.runs.iter().find(|r| variant_of(&r.name) == variant)
    }

    pub fn variants(&self) -> Vec<&str> {
        self.runs.iter().map(|r| variant_of(&r.name)).collect()
    }
}

fn variant_of(name: &str) -> &str {
    name.rsplit_once('/').map_or(name, |(_, v)| v)
}

fn base(name: &str, variant: &str) -> ExperimentConfig {
    ExperimentConfig {
        name: format!("{name}/{variant}"),
        ..ExperimentConfig::default()
    }
}

fn scclip(mut cfg: ExperimentConfig, tau: TauChoice) -> ExperimentConfig {
    cfg.aggregator.rule = Rule::Scclip;
    cfg.aggregator.tau = tau;
    cfg
}

fn graph(mut cfg: ExperimentConfig, kind: TopologyKind, degree: Option<usize>) -> ExperimentConfig {
    cfg.topology.kind = kind;
    cfg.topology.degree = degree;
    cfg
}

fn federated(mut cfg: ExperimentConfig) -> ExperimentConfig {
    cfg.mode = Mode::Fl;
    cfg.topology.kind = TopologyKind::StarFl;
    cfg
}

fn attacked(mut cfg: ExperimentConfig, kind: AttackKind) -> ExperimentConfig {
    cfg.attack.kind = kind;
    if kind == AttackKind::Sandtrap {
        cfg.attack.victim = Some(SANDTRAP_VICTIM);
    }
    cfg
}

/// Both clipping-radius variants of one attack on one layout.
fn tau_pair(name: &str, kind: TopologyKind, attack: AttackKind) -> Vec<ExperimentConfig> {
    [("ideal", TauChoice::Ideal), ("constant", TauChoice::Constant)]
        .into_iter()
        .map(|(v, tau)| attacked(scclip(graph(base(name, v), kind, None), tau), attack))
        .collect()
}

/// All runs of a preset, fully resolved.
pub fn preset(name: &str) -> Result<Preset> {
    let runs = match name {
        "fig2-torus-so" => tau_pair(name, TopologyKind::Torus3x3, AttackKind::StateOverride),
        "fig2-dumbbell-so" => tau_pair(name, TopologyKind::Dumbbell9, AttackKind::StateOverride),
        "fig2-torus-st" => tau_pair(name, TopologyKind::Torus3x3, AttackKind::Sandtrap),
        "fig2-dumbbell-st" => tau_pair(name, TopologyKind::Dumbbell9, AttackKind::Sandtrap),
        "conn-sweep" => [
            ("ring", TopologyKind::Ring, None),
            ("regular", TopologyKind::Regular, Some(4)),
            // every honest pair linked while the adversary keeps its two ring edges
            ("complete", TopologyKind::Regular, Some(8)),
        ]
        .into_iter()
        .map(|(v, kind, k)| attacked(graph(base(name, v), kind, k), AttackKind::Dissensus))
        .collect(),
        "noisy-dl-vs-fl" => vec![
            attacked(graph(base(name, "dl-complete"), TopologyKind::Complete, None), AttackKind::Noisy),
            attacked(federated(base(name, "fl")), AttackKind::Noisy),
        ],
        "tau-trace" => vec![
            attacked(scclip(base(name, "attack"), TauChoice::Ideal), AttackKind::StateOverride),
            scclip(base(name, "benign"), TauChoice::Ideal),
        ],
        "ra-fl-vs-dl" => {
            let mut runs = Vec::new();
            for (agg, rule) in [("rfa", Rule::Rfa), ("scclip", Rule::Scclip)] {
                for (place, kind) in [
                    ("fl", TopologyKind::StarFl),
                    ("dl-complete", TopologyKind::Complete),
                    ("dl-ring", TopologyKind::Ring),
                ] {
                    let mut cfg = base(name, &format!("{agg}-{place}"));
                    cfg.aggregator.rule = rule;
                    cfg.aggregator.tau = TauChoice::Ideal;
                    cfg = if kind == TopologyKind::StarFl {
                        federated(cfg)
                    } else {
                        graph(cfg, kind, None)
                    };
                    runs.push(attacked(cfg, AttackKind::Noisy));
                }
            }
            runs
        }
        "table1-baselines" => {
            let mut runs = Vec::new();
            for (layout, kind) in [("torus", TopologyKind::Torus3x3), ("dumbbell", TopologyKind::Dumbbell9)] {
                for (v, tau) in [("ideal", TauChoice::Ideal), ("constant", TauChoice::Constant)] {
                    runs.push(scclip(graph(base(name, &format!("{layout}-benign-{v}")), kind, None), tau));
                }
            }
            // Without u3 the dumbbell's cliques only meet through the adversary,
            // so the removal baseline exists for the torus alone.
            for (v, tau) in [("ideal", TauChoice::Ideal), ("constant", TauChoice::Constant)] {
                let mut cfg = scclip(graph(base(name, &format!("torus-no-victim-{v}")), TopologyKind::Torus3x3, None), tau);
                cfg.topology.remove_node = Some(SANDTRAP_VICTIM);
                runs.push(cfg);
            }
            runs
        }
        other => {
            return Err(Error::Config(vec![format!(
                "preset: unknown preset `{other}`, expected one of: {}",
                PRESET_NAMES.join(", ")
            )]))
        }
    };
    Ok(Preset {
        name: name.to_string(),
        runs: runs.into_iter().map(ExperimentConfig::resolved).collect(),
    })
}

/// One run of a preset: the named variant, or the first one.
pub fn preset_variant(name: &str, variant: Option<&str>) -> Result<ExperimentConfig> {
    let p = preset(name)?;
    match variant {
        None => Ok(p.runs[0].clone()),
        Some(v) => p.run(v).cloned().ok_or_else(|| {
            Error::Config(vec![format!(
                "variant: preset {name} has no variant `{v}`, expected one of: {}",
                p.variants().join(", ")
            )])
        }),
    }
}
