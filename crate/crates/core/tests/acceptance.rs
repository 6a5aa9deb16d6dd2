//! One PASS/FAIL line per acceptance criterion.
//!
//! Runs without the libtest harness so every line is printed whether or not
//! it passes; the process exits non-zero if any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use byzdl::aggregators::AggregatorSpec;
use byzdl::attacks::{craft_updates, AttackKind, AttackSpec, OmniscientView};
use byzdl::config::{parse_config, ExperimentConfig};
use byzdl::engine::{run_experiment, RunTrace};
use byzdl::presets::{preset_variant, SANDTRAP_VICTIM};
use byzdl::rng::Stream;
use byzdl::topology::{uniform_mixing, Topology};
use byzdl::ParamVector;

const SEEDS: [u64; 3] = [1, 2, 3];

type Criterion = (&'static str, &'static str, fn() -> Verdict);

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn run(preset: &str, variant: &str, seed: Option<u64>) -> RunTrace {
    let mut cfg = preset_variant(preset, Some(variant)).expect("preset exists");
    if let Some(s) = seed {
        cfg.seed = s;
    }
    run_experiment(&cfg).expect("preset runs")
}

fn timed(preset: &str, variant: &str) -> (RunTrace, Duration) {
    let start = Instant::now();
    let trace = run(preset, variant, None);
    (trace, start.elapsed())
}

fn final_accuracy(trace: &RunTrace, label: usize) -> f64 {
    let col = trace.column(label).expect("label present");
    trace.last().accuracy[col].expect("honest node")
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    sum / n as f64
}

fn random_vector(s: &mut Stream, dim: usize) -> ParamVector {
    ParamVector::from_vec((0..dim).map(|_| s.uniform_in(-5.0, 5.0)).collect())
}

/// Exact cancellation of the three naive-aggregation attacks on random graphs.
fn ac1() -> Verdict {
    let start = Instant::now();
    let naive = AggregatorSpec::naive();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for instance in 0..150u64 {
        let mut s = Stream::new(instance, "acceptance-ac1", 0, 0);
        let n = 3 + s.below(10);
        let dim = 1 + s.below(50);
        let b = n - 1;
        let mut edges: Vec<(usize, usize)> = (0..n)
            .flat_map(|a| (a + 1..n).map(move |c| (a, c)))
            .collect::<Vec<_>>()
            .into_iter()
            .filter(|_| s.uniform() < 0.5)
            .collect();
        edges.push((s.below(b), b));
        let topo = Topology::from_edges(n, edges, [b]).unwrap();
        let w = uniform_mixing(&topo);
        let honest: BTreeMap<usize, ParamVector> = (0..b).map(|i| (i, random_vector(&mut s, dim))).collect();
        let receivers: Vec<usize> = topo.neighbors(b).collect();
        let victim = receivers[s.below(receivers.len())];
        let target = random_vector(&mut s, dim);
        let view = OmniscientView {
            seed: instance,
            epoch: 0,
            byzantine: b,
            topology: &topo,
            mixing: &w,
            honest_half_steps: &honest,
            aggregator: &naive,
        };

        let cases = [
            (AttackSpec::new(AttackKind::StateOverride).with_target(target.clone()), None),
            (AttackSpec::new(AttackKind::Sandtrap).with_victim(victim), Some(victim)),
            (AttackSpec::new(AttackKind::Dissensus).with_epsilon(1.0), None),
        ];
        for (spec, only) in cases {
            let crafted = craft_updates(&view, &spec).unwrap();
            let got = common::brute_force_aggregates(&w, &honest, &crafted);
            for (i, agg) in got {
                if only.is_some_and(|v| v != i) {
                    continue;
                }
                let expected = match spec.kind {
                    AttackKind::StateOverride => &target,
                    _ => &honest[&i],
                };
                worst = worst.max(agg.dist(expected) / (1.0 + expected.norm()));
                checked += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    verdict(
        worst <= 1e-9 && elapsed < Duration::from_secs(5),
        format!("150 instances, {checked} receiver checks, worst relative error {worst:.2e}, {elapsed:.2?}"),
    )
}

/// Ideal-τ SCClip is driven to the zero target, no later than constant τ.
fn ac2() -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for name in ["fig2-torus-so", "fig2-dumbbell-so"] {
        let [(ideal, ti), (constant, tc)]: [(RunTrace, Duration); 2] = ["ideal", "constant"]
            .par_iter()
            .map(|v| timed(name, v))
            .collect::<Vec<_>>()
            .try_into()
            .ok()
            .unwrap();
        let ei = ideal.first_epoch_distance_below(1e-2);
        let ec = constant.first_epoch_distance_below(1e-2);
        let max_d = ideal.last().distance.iter().flatten().fold(0.0f64, |a, d| a.max(*d));
        let ok = ei.is_some() && ei <= ec.or(Some(u64::MAX)) && ti.max(tc) < Duration::from_secs(120);
        pass &= ok;
        parts.push(format!(
            "{name}: ideal reaches at {} (final max D {max_d:.3e}), constant at {}, slowest run {:.1?}",
            ei.map_or("never".into(), |e| e.to_string()),
            ec.map_or("never".into(), |e| e.to_string()),
            ti.max(tc)
        ));
    }
    verdict(pass, parts.join("; "))
}

/// Sandtrap victim near chance, non-targets well above, G1 below G2.
fn ac3() -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, groups) in [("fig2-torus-st", false), ("fig2-dumbbell-st", true)] {
        for variant in ["constant", "ideal"] {
            let trace = run(name, variant, None);
            let victim = final_accuracy(&trace, SANDTRAP_VICTIM);
            let others: Vec<usize> = trace.honest.iter().map(|&c| trace.labels[c]).filter(|&l| l != SANDTRAP_VICTIM).collect();
            let non = mean(others.iter().map(|&l| final_accuracy(&trace, l)));
            let mut line = format!("{name}/{variant}: victim {victim:.3}, non-targets {non:.3}");
            let mut ok = victim <= 0.15 && non >= victim + 0.20;
            if groups {
                let g1 = mean(others.iter().filter(|&&l| l < 4).map(|&l| final_accuracy(&trace, l)));
                let g2 = mean(others.iter().filter(|&&l| l >= 4).map(|&l| final_accuracy(&trace, l)));
                ok &= g1 < g2;
                line.push_str(&format!(", G1 {g1:.3} G2 {g2:.3}"));
            }
            // the near-chance victim is a constant-radius effect; the ideal run is informative only
            if variant == "constant" {
                pass &= ok;
            } else {
                line.push_str(" (reference)");
            }
            parts.push(line);
        }
    }
    verdict(pass, parts.join("; "))
}

/// Final mean consensus distance ordered ring > regular > complete.
fn ac4() -> Verdict {
    let rows: Vec<(u64, [f64; 3])> = SEEDS
        .par_iter()
        .map(|&s| {
            let c = ["ring", "regular", "complete"].map(|v| run("conn-sweep", v, Some(s)).last().mean_consensus);
            (s, c)
        })
        .collect();
    let pass = rows.iter().all(|(_, c)| c[0] > c[1] && c[1] > c[2]);
    let detail = rows
        .iter()
        .map(|(s, c)| format!("seed {s}: {:.4} > {:.4} > {:.4}", c[0], c[1], c[2]))
        .collect::<Vec<_>>()
        .join("; ");
    verdict(pass, detail)
}

/// Noisy attack hurts gossip on a complete graph more than federated training.
fn ac5() -> Verdict {
    let rows: Vec<(u64, f64, f64)> = SEEDS
        .par_iter()
        .map(|&s| {
            let dl = run("noisy-dl-vs-fl", "dl-complete", Some(s)).last().mean_accuracy;
            let fl = run("noisy-dl-vs-fl", "fl", Some(s)).last().mean_accuracy;
            (s, dl, fl)
        })
        .collect();
    let pass = rows.iter().all(|(_, dl, fl)| dl < fl);
    let detail = rows
        .iter()
        .map(|(s, dl, fl)| format!("seed {s}: DL {dl:.5} vs FL {fl:.5}"))
        .collect::<Vec<_>>()
        .join("; ");
    verdict(pass, detail)
}

/// Honest federated training matches honest gossip on a complete graph.
fn ac6() -> Verdict {
    let make = |text: &str| -> ExperimentConfig {
        let mut cfg = parse_config(text).unwrap();
        cfg.epochs = 100;
        cfg
    };
    let dl = make("[topology]\nkind = \"complete\"\nnodes = 8\nbyzantine = []");
    let fl = make("mode = \"fl\"\n[topology]\nkind = \"star_fl\"\nnodes = 8\nbyzantine = []");
    let (a, b) = (run_experiment(&dl).unwrap(), run_experiment(&fl).unwrap());
    let mut worst: f64 = 0.0;
    let mut aligned = a.records.len() == 100 && b.records.len() == 100 && a.labels == b.labels;
    for (x, y) in a.records.iter().zip(&b.records) {
        for (p, q) in x.distance.iter().zip(&y.distance).chain(x.accuracy.iter().zip(&y.accuracy)) {
            match (p, q) {
                (Some(p), Some(q)) => worst = worst.max((p - q).abs()),
                (None, None) => {}
                _ => aligned = false,
            }
        }
        worst = worst.max((x.mean_accuracy - y.mean_accuracy).abs());
    }
    verdict(
        aligned && worst <= 1e-9,
        format!("8 users, 100 epochs, largest per-epoch gap {worst:.2e}"),
    )
}

/// Early-epoch honest τ under state-override vs the benign run.
fn ac7() -> Verdict {
    let attack = run("tau-trace", "attack", None);
    let benign = run("tau-trace", "benign", None);
    let ratios: Vec<f64> = attack
        .records
        .iter()
        .zip(&benign.records)
        .filter(|(r, _)| (1..=20).contains(&r.epoch))
        .map(|(a, b)| a.mean_tau.unwrap_or(f64::NAN) / b.mean_tau.unwrap_or(f64::NAN))
        .collect();
    let min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let max = ratios.iter().copied().fold(0.0, f64::max);
    verdict(
        ratios.len() == 20 && min >= 5.0,
        format!("attack/benign mean tau over epochs 1-20: min x{min:.3}, mean x{:.3}, max x{max:.3}", mean(ratios.iter().copied())),
    )
}

/// Server-side robust aggregation tracks the complete-graph gossip run.
fn ac8() -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for agg in ["rfa", "scclip"] {
        let acc: Vec<f64> = ["fl", "dl-complete", "dl-ring"]
            .par_iter()
            .map(|p| run("ra-fl-vs-dl", &format!("{agg}-{p}"), None).last().mean_accuracy)
            .collect();
        let (fl, dlc, ring) = (acc[0], acc[1], acc[2]);
        pass &= (fl - dlc).abs() <= 0.05 && fl > ring && dlc > ring;
        parts.push(format!("{agg}: FL {fl:.4}, DL-complete {dlc:.4}, DL-ring {ring:.4}"));
    }
    verdict(pass, parts.join("; "))
}

fn ac9() -> Verdict {
    let failures: Vec<String> = common::SUITES
        .iter()
        .filter_map(|(name, check)| check().err().map(|e| format!("{name}: {e}")))
        .collect();
    verdict(
        failures.is_empty(),
        if failures.is_empty() {
            format!("{} suites hold", common::SUITES.len())
        } else {
            failures.join("; ")
        },
    )
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("AC1", "exact cancellation under naive aggregation", ac1),
        ("AC2", "state-override under SCClip", ac2),
        ("AC3", "sandtrap pattern", ac3),
        ("AC4", "connectivity ordering under dissensus", ac4),
        ("AC5", "noisy attack: DL-complete below FL", ac5),
        ("AC6", "honest FL equals honest DL-complete", ac6),
        ("AC7", "tau manipulation under state-override", ac7),
        ("AC8", "server-side robust aggregation", ac8),
        ("AC9", "property suites", ac9),
    ];
    let mut failed = 0;
    for (id, title, check) in criteria {
        let v = check();
        failed += usize::from(!v.pass);
        println!("{id} {} {title}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    }
    println!("acceptance: {} of {} criteria pass", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
