//! Demonstration effectiveness: the (knowledge, relevance) partial order, its
//! layer-by-layer propagation, the order-preservation proxy for the
//! monotonicity hypothesis, and amplification-ratio curves.
//!
//! For a demonstration `d`, query `q` and layer `(W_pv, W_kq)`:
//! knowledge is `||W_pv d||` and relevance is `|d^T W_kq q|`. `d1` dominates
//! `d2` when both of its scalars are at least those of `d2`.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::lsa::forward::forward_raw;
use crate::lsa::{grad_multi_layer, LayerParams, LsaNetwork, Token, TokenMatrix};

/// Tie tolerance used by [`condition_check`].
pub const TIE_TOL: f64 = 1e-12;
/// Slack allowed when testing a ratio curve for monotonicity.
pub const MONOTONE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffScalars {
    pub knowledge: f64,
    pub relevance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EffOrder {
    FirstDominates,
    SecondDominates,
    Equal,
    Incomparable,
}

impl EffOrder {
    pub fn from_scalars(a: EffScalars, b: EffScalars) -> Self {
        let first = a.knowledge >= b.knowledge && a.relevance >= b.relevance;
        let second = b.knowledge >= a.knowledge && b.relevance >= a.relevance;
        match (first, second) {
            (true, true) => EffOrder::Equal,
            (true, false) => EffOrder::FirstDominates,
            (false, true) => EffOrder::SecondDominates,
            (false, false) => EffOrder::Incomparable,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EffOrder::FirstDominates => "first",
            EffOrder::SecondDominates => "second",
            EffOrder::Equal => "equal",
            EffOrder::Incomparable => "incomparable",
        }
    }

    /// True for `FirstDominates` or `Equal`, i.e. `d1 >= d2` in the partial order.
    pub fn first_at_least(self) -> bool {
        matches!(self, EffOrder::FirstDominates | EffOrder::Equal)
    }
}

fn scalars_raw(d: &DVector<f64>, q: &DVector<f64>, layer: &LayerParams) -> EffScalars {
    EffScalars {
        knowledge: (layer.w_pv() * d).norm(),
        relevance: d.dot(&(layer.w_kq() * q)).abs(),
    }
}

fn check_tokens(tokens: &[&Token], q: &Token, layer: &LayerParams) -> Result<()> {
    if !q.is_query() {
        return Err(Error::NonzeroQueryY);
    }
    layer.check_dim(q.dim(), "effectiveness layer")?;
    for d in tokens {
        if d.dim() != q.dim() {
            return Err(Error::dim("demonstration vs query", q.dim(), d.dim()));
        }
    }
    Ok(())
}

pub fn eff_scalars(d: &Token, q: &Token, layer: &LayerParams) -> Result<EffScalars> {
    check_tokens(&[d], q, layer)?;
    Ok(scalars_raw(&d.stacked(), &q.stacked(), layer))
}

/// Exact (zero-tolerance) comparison under the partial order.
pub fn compare(d1: &Token, d2: &Token, q: &Token, layer: &LayerParams) -> Result<EffOrder> {
    check_tokens(&[d1, d2], q, layer)?;
    let qs = q.stacked();
    Ok(EffOrder::from_scalars(
        scalars_raw(&d1.stacked(), &qs, layer),
        scalars_raw(&d2.stacked(), &qs, layer),
    ))
}

/// Scalars of the propagated one-shot prompt `(d q)` at every layer: entry
/// `l` reads `d^(l), q^(l)` from the columns of `E^(l)` and uses `theta^(l)`.
pub fn propagated_scalars(d: &Token, q: &Token, net: &LsaNetwork) -> Result<Vec<EffScalars>> {
    check_tokens(&[d], q, &net.layers()[0])?;
    let mut state: DMatrix<f64> = TokenMatrix::one_shot(d, q)?.into_matrix();
    let mut out = Vec::with_capacity(net.len());
    for layer in net.layers() {
        let dc: DVector<f64> = state.column(0).into_owned();
        let qc: DVector<f64> = state.column(1).into_owned();
        let s = scalars_raw(&dc, &qc, layer);
        if !(s.knowledge.is_finite() && s.relevance.is_finite()) {
            return Err(Error::NonFinite("propagated effectiveness scalars".into()));
        }
        out.push(s);
        state = forward_raw(&state, layer);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerTraceEntry {
    pub layer: usize,
    pub first: EffScalars,
    pub second: EffScalars,
    pub order: EffOrder,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    pub entries: Vec<LayerTraceEntry>,
}

impl LayerTrace {
    /// True when `d1 >= d2` holds at every layer.
    pub fn first_dominates_throughout(&self) -> bool {
        self.entries.iter().all(|e| e.order.first_at_least())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "layer,knowledge_first,relevance_first,knowledge_second,relevance_second,verdict\n",
        );
        for e in &self.entries {
            let _ = writeln!(
                s,
                "{},{:?},{:?},{:?},{:?},{}",
                e.layer,
                e.first.knowledge,
                e.first.relevance,
                e.second.knowledge,
                e.second.relevance,
                e.order.as_str()
            );
        }
        s
    }
}

pub fn layer_trace(d1: &Token, d2: &Token, q: &Token, net: &LsaNetwork) -> Result<LayerTrace> {
    let a = propagated_scalars(d1, q, net)?;
    let b = propagated_scalars(d2, q, net)?;
    let entries = a
        .into_iter()
        .zip(b)
        .enumerate()
        .map(|(layer, (first, second))| LayerTraceEntry {
            layer,
            first,
            second,
            order: EffOrder::from_scalars(first, second),
        })
        .collect();
    Ok(LayerTrace { entries })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    Knowledge,
    Relevance,
}

impl Channel {
    fn pick(self, s: &EffScalars) -> f64 {
        match self {
            Channel::Knowledge => s.knowledge,
            Channel::Relevance => s.relevance,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelStatus {
    pub holds: bool,
    /// Pairs whose input scalars tie within [`TIE_TOL`].
    pub ties: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerCondition {
    /// Transition from entry `layer - 1` to entry `layer`.
    pub layer: usize,
    pub knowledge: ChannelStatus,
    pub relevance: ChannelStatus,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Violation {
    pub layer: usize,
    pub channel: Channel,
    /// Indices into the demonstration sample.
    pub pair: (usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionReport {
    pub layers: Vec<LayerCondition>,
    pub first_violation: Option<Violation>,
}

impl ConditionReport {
    pub fn holds(&self) -> bool {
        self.first_violation.is_none()
    }
}

fn tied(a: f64, b: f64) -> bool {
    (a - b).abs() <= TIE_TOL * a.abs().max(b.abs()).max(1.0)
}

fn check_channel(
    prev: &[EffScalars],
    next: &[EffScalars],
    channel: Channel,
) -> (ChannelStatus, Option<(usize, usize)>) {
    let mut ties = 0;
    let mut violation = None;
    for i in 0..prev.len() {
        for j in i + 1..prev.len() {
            let (a, b) = (channel.pick(&prev[i]), channel.pick(&prev[j]));
            if tied(a, b) {
                ties += 1;
                continue;
            }
            let (lo, hi) = if a < b { (i, j) } else { (j, i) };
            let (na, nb) = (channel.pick(&next[lo]), channel.pick(&next[hi]));
            if !(nb > na) || tied(na, nb) {
                violation.get_or_insert((i, j));
            }
        }
    }
    (
        ChannelStatus {
            holds: violation.is_none(),
            ties,
        },
        violation,
    )
}

/// Finite proxy for the hypothesis that each layer maps both scalars through
/// strictly increasing functions: across the demo sample, the map from
/// layer-`(l-1)` scalars to layer-`l` scalars must be strictly
/// order-preserving on each channel.
pub fn condition_check(demos: &[Token], q: &Token, net: &LsaNetwork) -> Result<ConditionReport> {
    if demos.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "condition_check needs at least 3 demonstrations, got {}",
            demos.len()
        )));
    }
    let traces: Vec<Vec<EffScalars>> = demos
        .iter()
        .map(|d| propagated_scalars(d, q, net))
        .collect::<Result<_>>()?;
    let mut layers = Vec::new();
    let mut first_violation = None;
    for l in 1..net.len() {
        let prev: Vec<EffScalars> = traces.iter().map(|t| t[l - 1]).collect();
        let next: Vec<EffScalars> = traces.iter().map(|t| t[l]).collect();
        let (knowledge, kv) = check_channel(&prev, &next, Channel::Knowledge);
        let (relevance, rv) = check_channel(&prev, &next, Channel::Relevance);
        if first_violation.is_none() {
            first_violation = kv
                .map(|pair| Violation {
                    layer: l,
                    channel: Channel::Knowledge,
                    pair,
                })
                .or(rv.map(|pair| Violation {
                    layer: l,
                    channel: Channel::Relevance,
                    pair,
                }));
        }
        layers.push(LayerCondition {
            layer: l,
            knowledge,
            relevance,
        });
    }
    Ok(ConditionReport {
        layers,
        first_violation,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioPoint {
    /// 1-based layer index.
    pub layer: usize,
    pub flow_first: f64,
    pub flow_second: f64,
    /// `None` where the denominator is at or below the tolerance.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RatioStatus {
    Ok,
    AllUndefined,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatioCurve {
    pub points: Vec<RatioPoint>,
    pub monotone_nondecreasing: bool,
    pub status: RatioStatus,
}

impl RatioCurve {
    pub fn defined_ratios(&self) -> Vec<f64> {
        self.points.iter().filter_map(|p| p.ratio).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,flow_first,flow_second,ratio,verdict\n");
        let mut prev: Option<f64> = None;
        for p in &self.points {
            let (ratio, verdict) = match p.ratio {
                None => (String::new(), "undefined"),
                Some(r) => {
                    let v = match prev {
                        Some(pr) if r < pr - MONOTONE_TOL => "drop",
                        _ => "ok",
                    };
                    prev = Some(r);
                    (format!("{r:?}"), v)
                }
            };
            let _ = writeln!(
                s,
                "{},{:?},{:?},{},{}",
                p.layer, p.flow_first, p.flow_second, ratio, verdict
            );
        }
        s
    }
}

/// Per-layer ratio of gradient-flow norms between the prompts `(d1 q)` and
/// `(d2 q)`, for layers `1..=L`.
pub fn ratio_curve(
    d1: &Token,
    d2: &Token,
    q: &Token,
    net: &LsaNetwork,
    tol: f64,
) -> Result<RatioCurve> {
    let e1 = TokenMatrix::one_shot(d1, q)?;
    let e2 = TokenMatrix::one_shot(d2, q)?;
    let mut points = Vec::with_capacity(net.len());
    for l in 1..=net.len() {
        let f1 = grad_multi_layer(&e1, net, l)?.norm();
        let f2 = grad_multi_layer(&e2, net, l)?.norm();
        points.push(RatioPoint {
            layer: l,
            flow_first: f1,
            flow_second: f2,
            ratio: (f2 > tol).then(|| f1 / f2),
        });
    }
    let ratios: Vec<f64> = points.iter().filter_map(|p| p.ratio).collect();
    let monotone_nondecreasing = ratios.windows(2).all(|w| w[1] >= w[0] - MONOTONE_TOL);
    let status = if ratios.is_empty() {
        RatioStatus::AllUndefined
    } else {
        RatioStatus::Ok
    };
    Ok(RatioCurve {
        points,
        monotone_nondecreasing,
        status,
    })
}
