//! Aggregation rules applied by a receiver to its inbox.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::params::ParamVector;
use crate::topology::MixingMatrix;

/// How SCClip picks its clipping radius.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TauPolicy {
    /// Honest-variance radius computed with omniscient knowledge of the honest set.
    Ideal,
    Constant(f64),
    /// Smallest distance from the receiver to any received update.
    MinDistance,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AggregatorKind {
    Naive,
    ScClip(TauPolicy),
    Rfa,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AggregatorSpec {
    pub kind: AggregatorKind,
    pub rfa_iters: usize,
    pub rfa_eps: f64,
    /// Radius used by the ideal policy when a node has no Byzantine neighbor.
    /// `None` means no clipping at such nodes.
    pub ideal_fallback: Option<f64>,
}

impl AggregatorSpec {
    pub const DEFAULT_RFA_ITERS: usize = 50;
    pub const DEFAULT_RFA_EPS: f64 = 1e-8;

    pub fn naive() -> Self {
        Self::with_kind(AggregatorKind::Naive)
    }

    pub fn scclip(tau: TauPolicy) -> Self {
        Self::with_kind(AggregatorKind::ScClip(tau))
    }

    pub fn rfa() -> Self {
        Self::with_kind(AggregatorKind::Rfa)
    }

    fn with_kind(kind: AggregatorKind) -> Self {
        Self {
            kind,
            rfa_iters: Self::DEFAULT_RFA_ITERS,
            rfa_eps: Self::DEFAULT_RFA_EPS,
            ideal_fallback: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let AggregatorKind::ScClip(TauPolicy::Constant(v)) = self.kind {
            if !(v > 0.0) {
                return Err(Error::param(format!("constant tau must be > 0, got {v}")));
            }
        }
        if self.rfa_iters < 1 {
            return Err(Error::param("rfa_iters must be at least 1"));
        }
        if !(self.rfa_eps > 0.0) {
            return Err(Error::param("rfa_eps must be > 0"));
        }
        if let Some(f) = self.ideal_fallback {
            if !(f > 0.0) {
                return Err(Error::param("ideal tau fallback must be > 0"));
            }
        }
        Ok(())
    }
}

/// What receiver `i` holds at aggregation time.
#[derive(Clone, Debug, PartialEq)]
pub struct InboxView {
    pub receiver: usize,
    pub self_half_step: ParamVector,
    /// One update per neighbor, keyed by sender.
    pub received: BTreeMap<usize, ParamVector>,
}

impl InboxView {
    pub fn new(receiver: usize, self_half_step: ParamVector) -> Self {
        Self {
            receiver,
            self_half_step,
            received: BTreeMap::new(),
        }
    }

    pub fn with(mut self, sender: usize, update: ParamVector) -> Self {
        self.received.insert(sender, update);
        self
    }

    /// `(weight, update)` for self and every neighbor, in sender order.
    fn weighted_terms<'a>(&'a self, mixing: &MixingMatrix) -> Result<Vec<(usize, f64, &'a ParamVector)>> {
        let i = self.receiver;
        if i >= mixing.size() {
            return Err(Error::protocol(format!("receiver {i} is outside the mixing matrix")));
        }
        let dim = self.self_half_step.dim();
        let mut terms = Vec::new();
        for (j, &w) in mixing.row(i).iter().enumerate() {
            if j == i {
                if w > 0.0 {
                    terms.push((j, w, &self.self_half_step));
                }
                continue;
            }
            if w <= 0.0 {
                continue;
            }
            let x = self.received.get(&j).ok_or_else(|| {
                Error::protocol(format!("node {i} is missing the update from neighbor {j}"))
            })?;
            x.check_dim(dim, "received update")?;
            terms.push((j, w, x));
        }
        if let Some(extra) = self.received.keys().find(|&&j| j == i || mixing.get(i, j) <= 0.0) {
            return Err(Error::protocol(format!(
                "node {i} received an update from non-neighbor {extra}"
            )));
        }
        Ok(terms)
    }
}

/// `min(1, tau / ||z||) * z`
pub fn clip(z: &ParamVector, tau: f64) -> ParamVector {
    let norm = z.norm();
    if norm <= tau {
        z.clone()
    } else {
        z.scaled(tau / norm)
    }
}

/// Weighted mean of the receiver's own half-step and its neighbors' updates.
pub fn naive_aggregate(inbox: &InboxView, mixing: &MixingMatrix) -> Result<ParamVector> {
    let terms = inbox.weighted_terms(mixing)?;
    let mut out = ParamVector::zeros(inbox.self_half_step.dim());
    for (_, w, x) in terms {
        out.axpy(w, x);
    }
    Ok(out)
}

/// Self-centered clipping around the receiver's own half-step.
pub fn scclip_aggregate(inbox: &InboxView, mixing: &MixingMatrix, tau: f64) -> Result<ParamVector> {
    if !(tau > 0.0) {
        return Err(Error::param(format!("clipping radius must be > 0, got {tau}")));
    }
    let terms = inbox.weighted_terms(mixing)?;
    let reference = &inbox.self_half_step;
    let mut out = reference.clone();
    for (j, w, x) in terms {
        if j == inbox.receiver {
            continue;
        }
        out.axpy(w, &clip(&(x - reference), tau));
    }
    Ok(out)
}

/// Clipping radius for `inbox.receiver` under `policy`.
///
/// `honest` is the simulator's omniscient honest set, used only by the ideal
/// policy. Returns `f64::INFINITY` when the ideal radius is undefined (no
/// Byzantine neighbor) and no fallback is configured.
pub fn tau_policy_eval(
    policy: TauPolicy,
    ideal_fallback: Option<f64>,
    inbox: &InboxView,
    mixing: &MixingMatrix,
    honest: &BTreeSet<usize>,
) -> Result<f64> {
    match policy {
        TauPolicy::Constant(v) => Ok(v),
        TauPolicy::MinDistance => {
            let terms = inbox.weighted_terms(mixing)?;
            let tau = terms
                .iter()
                .filter(|(j, _, _)| *j != inbox.receiver)
                .map(|(_, _, x)| inbox.self_half_step.dist(x))
                .fold(f64::INFINITY, f64::min);
            Ok(tau)
        }
        TauPolicy::Ideal => {
            let terms = inbox.weighted_terms(mixing)?;
            let mut delta = 0.0;
            let mut spread = 0.0;
            for (j, w, x) in terms {
                if j == inbox.receiver {
                    continue;
                }
                if honest.contains(&j) {
                    spread += w * inbox.self_half_step.dist_sq(x);
                } else {
                    delta += w;
                }
            }
            if delta <= 0.0 {
                return Ok(ideal_fallback.unwrap_or(f64::INFINITY));
            }
            Ok((spread / delta).sqrt())
        }
    }
}

/// Approximate weighted geometric median by smoothed Weiszfeld iterations.
///
/// Starts from the weighted mean and runs `iters` fixed-point steps with
/// distances floored at `eps`. The result is never worse, in weighted
/// distance, than the best input point.
pub fn rfa_geometric_median(
    points: &[&ParamVector],
    weights: &[f64],
    iters: usize,
    eps: f64,
) -> Result<ParamVector> {
    if points.is_empty() {
        return Err(Error::param("geometric median of an empty set"));
    }
    if points.len() != weights.len() {
        return Err(Error::param("points and weights differ in length"));
    }
    if weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
        return Err(Error::param("weights must be finite and non-negative"));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::param("weights must not all be zero"));
    }
    let dim = points[0].dim();
    for p in points {
        p.check_dim(dim, "median input")?;
    }

    let mut y = ParamVector::zeros(dim);
    for (p, w) in points.iter().zip(weights) {
        y.axpy(w / total, p);
    }
    for _ in 0..iters {
        y = weiszfeld_step(&y, points, weights, eps);
    }

    let mut best = weighted_distance(&y, points, weights);
    let mut best_point = None;
    for (k, p) in points.iter().enumerate() {
        let obj = weighted_distance(p, points, weights);
        if obj < best {
            best = obj;
            best_point = Some(k);
        }
    }
    Ok(match best_point {
        Some(k) => points[k].clone(),
        None => y,
    })
}

/// One smoothed Weiszfeld update from `y`.
pub fn weiszfeld_step(y: &ParamVector, points: &[&ParamVector], weights: &[f64], eps: f64) -> ParamVector {
    let mut num = ParamVector::zeros(y.dim());
    let mut den = 0.0;
    for (p, w) in points.iter().zip(weights) {
        let beta = w / y.dist(p).max(eps);
        num.axpy(beta, p);
        den += beta;
    }
    num.scale_in_place(1.0 / den);
    num
}

/// `Σ w_k ||y - x_k||`
pub fn weighted_distance(y: &ParamVector, points: &[&ParamVector], weights: &[f64]) -> f64 {
    points.iter().zip(weights).map(|(p, w)| w * y.dist(p)).sum()
}

/// RFA over the receiver's inbox with mixing weights.
pub fn rfa_aggregate(inbox: &InboxView, mixing: &MixingMatrix, iters: usize, eps: f64) -> Result<ParamVector> {
    let terms = inbox.weighted_terms(mixing)?;
    let points: Vec<&ParamVector> = terms.iter().map(|t| t.2).collect();
    let weights: Vec<f64> = terms.iter().map(|t| t.1).collect();
    rfa_geometric_median(&points, &weights, iters, eps)
}

/// Applies `spec` at one receiver. Returns the new state and the radius used
/// (`None` for aggregators without one).
pub fn aggregate(
    spec: &AggregatorSpec,
    inbox: &InboxView,
    mixing: &MixingMatrix,
    honest: &BTreeSet<usize>,
) -> Result<(ParamVector, Option<f64>)> {
    match spec.kind {
        AggregatorKind::Naive => Ok((naive_aggregate(inbox, mixing)?, None)),
        AggregatorKind::Rfa => Ok((rfa_aggregate(inbox, mixing, spec.rfa_iters, spec.rfa_eps)?, None)),
        AggregatorKind::ScClip(policy) => {
            let tau = tau_policy_eval(policy, spec.ideal_fallback, inbox, mixing, honest)?;
            // A zero radius (a neighbor sitting exactly on the receiver) clips
            // every deviation away.
            let out = if tau == 0.0 {
                inbox.weighted_terms(mixing)?;
                inbox.self_half_step.clone()
            } else if tau.is_finite() {
                scclip_aggregate(inbox, mixing, tau)?
            } else {
                naive_aggregate(inbox, mixing)?
            };
            Ok((out, Some(tau)))
        }
    }
}
