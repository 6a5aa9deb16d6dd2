//! Property checks shared by the `properties` and `acceptance` targets.
//!
//! Each check drives proptest's runner directly and returns the first
//! counterexample as a message, so the same code backs both a plain `#[test]`
//! and a pass/fail report line.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};

use byzdl::aggregators::{
    aggregate, clip, naive_aggregate, scclip_aggregate, weighted_distance, weiszfeld_step, AggregatorSpec, InboxView,
    TauPolicy,
};
use byzdl::config::render_config;
use byzdl::engine::run_experiment;
use byzdl::model::SoftmaxModel;
use byzdl::presets::{preset, PRESET_NAMES};
use byzdl::task::Sample;
use byzdl::topology::{uniform_mixing, validate_topology, MixingMatrix, Topology};
use byzdl::trace::render_csv;
use byzdl::ParamVector;

pub type Check = fn() -> Result<(), String>;

/// Every suite, by name, in report order.
pub const SUITES: [(&str, Check); 8] = [
    ("clip contract", clip_contract),
    ("scclip step bound", scclip_step_bound),
    ("scclip with unbounded radius is naive", scclip_unbounded_is_naive),
    ("weiszfeld monotone", weiszfeld_monotone),
    ("translation equivariance", translation_equivariance),
    ("gradient vs finite differences", gradient_matches_finite_differences),
    ("honest subgraph vs union-find", honest_subgraph_matches_union_find),
    ("byte-identical preset reruns", preset_reruns_are_identical),
];

const CASES: u32 = 128;

fn runner() -> TestRunner {
    TestRunner::new(Config {
        cases: CASES,
        failure_persistence: None,
        ..Config::default()
    })
}

fn report<T: std::fmt::Debug>(r: Result<(), proptest::test_runner::TestError<T>>) -> Result<(), String> {
    r.map_err(|e| e.to_string())
}

fn vector(dim: usize, lo: f64, hi: f64) -> impl Strategy<Value = ParamVector> {
    prop::collection::vec(lo..hi, dim).prop_map(ParamVector::from_vec)
}

/// A receiver (index 0), its own half-step, `k` neighbor updates and a
/// strictly positive weight row summing to one.
#[derive(Clone, Debug)]
struct Neighborhood {
    own: ParamVector,
    updates: Vec<ParamVector>,
    weights: Vec<f64>,
}

impl Neighborhood {
    fn mixing(&self) -> MixingMatrix {
        let n = self.weights.len();
        MixingMatrix::from_rows(vec![self.weights.clone(); n]).unwrap()
    }

    fn inbox(&self) -> InboxView {
        let mut inbox = InboxView::new(0, self.own.clone());
        for (k, u) in self.updates.iter().enumerate() {
            inbox.received.insert(k + 1, u.clone());
        }
        inbox
    }

    fn shifted(&self, c: &ParamVector) -> Self {
        Self {
            own: &self.own + c,
            updates: self.updates.iter().map(|u| u + c).collect(),
            weights: self.weights.clone(),
        }
    }
}

fn neighborhood(max_dim: usize) -> impl Strategy<Value = Neighborhood> {
    (1..=max_dim, 1usize..8).prop_flat_map(|(d, k)| {
        (
            vector(d, -10.0, 10.0),
            prop::collection::vec(vector(d, -10.0, 10.0), k),
            prop::collection::vec(0.05f64..1.0, k + 1),
        )
            .prop_map(|(own, updates, raw)| {
                let total: f64 = raw.iter().sum();
                Neighborhood {
                    own,
                    updates,
                    weights: raw.iter().map(|w| w / total).collect(),
                }
            })
    })
}

fn close(a: &ParamVector, b: &ParamVector, tol: f64) -> bool {
    a.dist(b) <= tol * (1.0 + a.norm().max(b.norm()))
}

pub fn clip_contract() -> Result<(), String> {
    report(runner().run(&(vector(12, -50.0, 50.0), 1e-3f64..40.0), |(z, tau)| {
        let c = clip(&z, tau);
        prop_assert!(c.norm() <= tau * (1.0 + 1e-12), "norm {} above {tau}", c.norm());
        if z.norm() <= tau {
            prop_assert_eq!(&c, &z);
        } else {
            // same direction: positive multiple of z
            let cos = c.dot(&z) / (c.norm() * z.norm());
            prop_assert!((cos - 1.0).abs() < 1e-12, "cosine {cos}");
            prop_assert!((c.norm() - tau).abs() <= 1e-12 * tau);
        }
        Ok(())
    }))
}

pub fn scclip_step_bound() -> Result<(), String> {
    report(runner().run(&(neighborhood(20), 1e-3f64..20.0), |(nb, tau)| {
        let out = scclip_aggregate(&nb.inbox(), &nb.mixing(), tau).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let step = out.dist(&nb.own);
        prop_assert!(step <= tau * (1.0 + 1e-12), "step {step} above {tau}");
        Ok(())
    }))
}

pub fn scclip_unbounded_is_naive() -> Result<(), String> {
    report(runner().run(&neighborhood(20), |nb| {
        let (inbox, w) = (nb.inbox(), nb.mixing());
        let naive = naive_aggregate(&inbox, &w).unwrap();
        // every sender honest: the ideal radius is unbounded
        let honest: BTreeSet<usize> = (0..w.size()).collect();
        let (ideal, tau) = aggregate(&AggregatorSpec::scclip(TauPolicy::Ideal), &inbox, &w, &honest).unwrap();
        prop_assert_eq!(tau, Some(f64::INFINITY));
        prop_assert!(ideal.dist(&naive) <= 1e-12);
        let huge = scclip_aggregate(&inbox, &w, 1e300).unwrap();
        prop_assert!(huge.dist(&naive) <= 1e-12, "gap {}", huge.dist(&naive));
        Ok(())
    }))
}

pub fn weiszfeld_monotone() -> Result<(), String> {
    report(runner().run(&neighborhood(15), |nb| {
        let mut points: Vec<&ParamVector> = vec![&nb.own];
        points.extend(nb.updates.iter());
        let w = &nb.weights;
        let mut y = ParamVector::zeros(nb.own.dim());
        for (p, wk) in points.iter().zip(w) {
            y.axpy(*wk, p);
        }
        let mut obj = weighted_distance(&y, &points, w);
        for _ in 0..25 {
            y = weiszfeld_step(&y, &points, w, 1e-8);
            let next = weighted_distance(&y, &points, w);
            prop_assert!(next <= obj * (1.0 + 1e-12), "objective rose from {obj} to {next}");
            obj = next;
        }
        Ok(())
    }))
}

pub fn translation_equivariance() -> Result<(), String> {
    let strategy = neighborhood(15).prop_flat_map(|nb| {
        let d = nb.own.dim();
        (Just(nb), vector(d, -100.0, 100.0), 0.1f64..10.0)
    });
    report(runner().run(&strategy, |(nb, c, tau)| {
        let moved = nb.shifted(&c);
        let w = nb.mixing();
        // sender 1 plays the adversary for the ideal radius
        let honest: BTreeSet<usize> = (0..w.size()).filter(|&j| j != 1).collect();
        let specs = [
            AggregatorSpec::naive(),
            AggregatorSpec::scclip(TauPolicy::Constant(tau)),
            AggregatorSpec::scclip(TauPolicy::Ideal),
            AggregatorSpec::scclip(TauPolicy::MinDistance),
            AggregatorSpec::rfa(),
        ];
        for spec in &specs {
            let (a, _) = aggregate(spec, &nb.inbox(), &w, &honest).unwrap();
            let (b, _) = aggregate(spec, &moved.inbox(), &w, &honest).unwrap();
            let expected = &a + &c;
            prop_assert!(close(&b, &expected, 1e-8), "{:?}: off by {}", spec.kind, b.dist(&expected));
        }
        Ok(())
    }))
}

fn samples(d: usize, classes: usize) -> impl Strategy<Value = Vec<Sample>> {
    prop::collection::vec(
        (prop::collection::vec(-3.0f64..3.0, d), 0..classes).prop_map(|(features, label)| Sample { features, label }),
        1..12,
    )
}

pub fn gradient_matches_finite_differences() -> Result<(), String> {
    let strategy = (2usize..5, 2usize..6).prop_flat_map(|(c, d)| {
        let model = SoftmaxModel::new(c, d);
        (Just(model), vector(model.dim(), -1.0, 1.0), samples(d, c))
    });
    report(runner().run(&strategy, |(model, theta, batch)| {
        let g = model.gradient(&theta, &batch);
        let h = 1e-6;
        let mut fd = vec![0.0; theta.dim()];
        for (k, slot) in fd.iter_mut().enumerate() {
            let mut plus = theta.clone();
            plus.as_mut_slice()[k] += h;
            let mut minus = theta.clone();
            minus.as_mut_slice()[k] -= h;
            *slot = (model.loss(&plus, &batch) - model.loss(&minus, &batch)) / (2.0 * h);
        }
        let fd = ParamVector::from_vec(fd);
        let rel = g.dist(&fd) / g.norm().max(fd.norm()).max(1e-8);
        prop_assert!(rel <= 1e-5, "relative error {rel}");
        Ok(())
    }))
}

/// Connectivity of the subgraph induced by `members`, by union-find.
fn union_find_connected(n: usize, edges: &[(usize, usize)], members: &BTreeSet<usize>) -> bool {
    fn root(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut parent: Vec<usize> = (0..n).collect();
    for &(a, b) in edges {
        if members.contains(&a) && members.contains(&b) {
            let (ra, rb) = (root(&mut parent, a), root(&mut parent, b));
            parent[ra] = rb;
        }
    }
    let roots: BTreeSet<usize> = members.iter().map(|&m| root(&mut parent, m)).collect();
    roots.len() <= 1
}

pub fn honest_subgraph_matches_union_find() -> Result<(), String> {
    let strategy = (1usize..=12).prop_flat_map(|n| {
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
        let m = pairs.len();
        (
            Just(n),
            Just(pairs),
            prop::collection::vec(0.0f64..1.0, m),
            0.05f64..0.7,
            prop::collection::btree_set(0..n, 0..=n / 2),
        )
    });
    report(runner().run(&strategy, |(n, pairs, coins, p, byz)| {
        let edges: Vec<(usize, usize)> = pairs.iter().zip(&coins).filter(|(_, c)| **c < p).map(|(e, _)| *e).collect();
        let topo = Topology::from_edges(n, edges.iter().copied(), byz.iter().copied()).unwrap();
        let report = validate_topology(&topo, &uniform_mixing(&topo));
        let all: BTreeSet<usize> = (0..n).collect();
        let honest: BTreeSet<usize> = all.difference(&byz).copied().collect();
        prop_assert_eq!(report.connected, union_find_connected(n, &edges, &all));
        prop_assert_eq!(report.honest_subgraph_connected, union_find_connected(n, &edges, &honest));
        Ok(())
    }))
}

/// Every run of every preset, twice, at a shortened budget.
pub fn preset_reruns_are_identical() -> Result<(), String> {
    for name in PRESET_NAMES {
        for mut cfg in preset(name).map_err(|e| e.to_string())?.runs {
            cfg.epochs = 15;
            let a = run_experiment(&cfg).map_err(|e| e.to_string())?;
            let b = run_experiment(&cfg).map_err(|e| e.to_string())?;
            if render_csv(&a) != render_csv(&b) || render_config(&a.config) != render_config(&b.config) {
                return Err(format!("{} differs between reruns", cfg.name));
            }
        }
    }
    Ok(())
}

/// Receiver aggregates under naive weights, summed term by term from the full
/// mixing row. Honest senders contribute their half-step, the adversary its
/// crafted update to that receiver.
pub fn brute_force_aggregates(
    w: &MixingMatrix,
    honest: &BTreeMap<usize, ParamVector>,
    crafted: &BTreeMap<usize, ParamVector>,
) -> BTreeMap<usize, ParamVector> {
    let n = w.size();
    let dim = honest.values().next().map_or(0, ParamVector::dim);
    crafted
        .keys()
        .map(|&i| {
            let mut out = vec![0.0; dim];
            for j in 0..n {
                let wij = w.get(i, j);
                if wij == 0.0 {
                    continue;
                }
                let x = honest.get(&j).unwrap_or(&crafted[&i]);
                for (o, v) in out.iter_mut().zip(x.as_slice()) {
                    *o += wij * v;
                }
            }
            (i, ParamVector::from_vec(out))
        })
        .collect()
}
