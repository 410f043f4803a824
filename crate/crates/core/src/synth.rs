//! Synthetic in-context regression: tasks `y = W x`, one-shot prompts,
//! small LSA training, effective/ineffective splits, per-layer flow curves
//! and the relevance/knowledge scatter with a polynomial logistic boundary.

use std::collections::HashMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::effectiveness::eff_scalars;
use crate::error::{Error, Result};
use crate::lsa::forward::forward_raw;
use crate::lsa::{grad_multi_layer, EmbedVec, LayerParams, LsaNetwork, Token, TokenMatrix};
use crate::sample::{normal, normal_matrix, normal_vec, stream_rng, SeedRng};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthTask {
    w: DMatrix<f64>,
    seed: u64,
}

impl SynthTask {
    pub fn new(w: DMatrix<f64>, seed: u64) -> Result<Self> {
        if w.nrows() == 0 {
            return Err(Error::ZeroDimension);
        }
        if w.nrows() != w.ncols() {
            return Err(Error::dim("task matrix columns", w.nrows(), w.ncols()));
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("task matrix".into()));
        }
        Ok(SynthTask { w, seed })
    }

    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (&self.w * DVector::from_column_slice(x)).iter().copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthExample {
    id: String,
    task: usize,
    demo_task: usize,
    d: Token,
    q: Token,
    target: EmbedVec,
}

impl SynthExample {
    /// Demo labelled by `demo_task`, query answered by `task`.
    pub fn new(
        id: impl Into<String>,
        tasks: &[SynthTask],
        task: usize,
        demo_task: usize,
        x: Vec<f64>,
        q_x: Vec<f64>,
    ) -> Result<Self> {
        let get = |i: usize| {
            tasks
                .get(i)
                .ok_or_else(|| Error::InvalidArgument(format!("task index {i} out of range")))
        };
        let (t, dt) = (get(task)?, get(demo_task)?);
        if x.len() != t.dim() {
            return Err(Error::dim("demo x", t.dim(), x.len()));
        }
        if q_x.len() != t.dim() {
            return Err(Error::dim("query x", t.dim(), q_x.len()));
        }
        let y = dt.apply(&x);
        let target = EmbedVec::new(t.apply(&q_x))?;
        Ok(SynthExample {
            id: id.into(),
            task,
            demo_task,
            d: Token::from_parts(x, y)?,
            q: Token::query(EmbedVec::new(q_x)?),
            target,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn task(&self) -> usize {
        self.task
    }

    pub fn demo_task(&self) -> usize {
        self.demo_task
    }

    pub fn matched(&self) -> bool {
        self.task == self.demo_task
    }

    pub fn d(&self) -> &Token {
        &self.d
    }

    pub fn q(&self) -> &Token {
        &self.q
    }

    pub fn target(&self) -> &EmbedVec {
        &self.target
    }

    pub fn prompt(&self) -> TokenMatrix {
        TokenMatrix::one_shot(&self.d, &self.q).expect("validated at construction")
    }

    /// The same query with the demo column zeroed.
    pub fn zero_shot_prompt(&self) -> TokenMatrix {
        let zero = Token::from_parts(vec![0.0; self.d.dim()], vec![0.0; self.d.dim()])
            .expect("finite zeros");
        TokenMatrix::one_shot(&zero, &self.q).expect("validated at construction")
    }

    pub fn with_demo(&self, d: Token) -> Result<Self> {
        if d.dim() != self.d.dim() {
            return Err(Error::dim("demo", self.d.dim(), d.dim()));
        }
        Ok(SynthExample { d, ..self.clone() })
    }
}

/// How inputs and task matrices are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Sampling {
    /// `x, q_x ~ N(0, I)`, task entries `N(0, 1/e)`.
    Gaussian,
    /// `x = q_x = 1`, task `w I` with `w ~ U(w_lo, w_hi)`.
    UnitPositive { w_lo: f64, w_hi: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetConfig {
    pub seed: u64,
    pub e: usize,
    pub n_tasks: usize,
    pub n_per_task: usize,
    pub sampling: Sampling,
    /// Demo tokens are scaled by `s ~ U(lo, hi)`; `(1, 1)` leaves them intact.
    pub demo_strength: (f64, f64),
    /// Demo labels come from task `(t + shift) mod n_tasks`.
    pub demo_task_shift: usize,
}

impl DatasetConfig {
    pub fn gaussian(seed: u64, e: usize, n_tasks: usize, n_per_task: usize) -> Self {
        DatasetConfig {
            seed,
            e,
            n_tasks,
            n_per_task,
            sampling: Sampling::Gaussian,
            demo_strength: (1.0, 1.0),
            demo_task_shift: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub tasks: Vec<SynthTask>,
    pub examples: Vec<SynthExample>,
}

/// Task `t` draws from stream `t`; example `i` from stream `n_tasks + i`.
pub fn gen_dataset(cfg: &DatasetConfig) -> Result<Dataset> {
    if cfg.e == 0 {
        return Err(Error::ZeroDimension);
    }
    if cfg.n_tasks == 0 || cfg.n_per_task == 0 {
        return Err(Error::InvalidArgument("n_tasks and n_per_task must be at least 1".into()));
    }
    let (s_lo, s_hi) = cfg.demo_strength;
    if !(s_lo.is_finite() && s_hi.is_finite() && s_lo <= s_hi) {
        return Err(Error::InvalidArgument("demo strength range must be finite, lo <= hi".into()));
    }
    let e = cfg.e;
    let tasks = (0..cfg.n_tasks)
        .map(|t| {
            let mut r = stream_rng(cfg.seed, t as u64);
            let w = match cfg.sampling {
                Sampling::Gaussian => normal_matrix(&mut r, e, e, 1.0 / (e as f64).sqrt()),
                Sampling::UnitPositive { w_lo, w_hi } => {
                    DMatrix::identity(e, e) * uniform(&mut r, w_lo, w_hi)
                }
            };
            SynthTask::new(w, t as u64)
        })
        .collect::<Result<Vec<_>>>()?;

    let n = cfg.n_tasks * cfg.n_per_task;
    let examples = (0..n)
        .map(|i| {
            let task = i / cfg.n_per_task;
            let mut r = stream_rng(cfg.seed, (cfg.n_tasks + i) as u64);
            let (x, q_x) = match cfg.sampling {
                Sampling::Gaussian => (normal_vec(&mut r, e, 1.0), normal_vec(&mut r, e, 1.0)),
                Sampling::UnitPositive { .. } => (vec![1.0; e], vec![1.0; e]),
            };
            let demo_task = (task + cfg.demo_task_shift) % cfg.n_tasks;
            let ex = SynthExample::new(format!("ex{i:05}"), &tasks, task, demo_task, x, q_x)?;
            let s = uniform(&mut r, s_lo, s_hi);
            if s == 1.0 {
                Ok(ex)
            } else {
                ex.with_demo(ex.d.scaled(s)?)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { tasks, examples })
}

fn uniform(r: &mut SeedRng, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        r.random_range(lo..hi)
    }
}

fn predict_raw(m: &DMatrix<f64>, net: &LsaNetwork, l: usize) -> DVector<f64> {
    let mut cur = m.clone();
    for layer in &net.layers()[..l] {
        cur = forward_raw(&cur, layer);
    }
    let e = cur.nrows() / 2;
    cur.column(cur.ncols() - 1).rows(e, e).into_owned()
}

fn error_norm(m: &TokenMatrix, net: &LsaNetwork, target: &EmbedVec) -> f64 {
    let p = predict_raw(m.matrix(), net, net.len());
    let t = DVector::from_column_slice(target.as_slice());
    (p - t).norm()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameterization {
    /// Every entry of `W_pv` and `W_kq` is trained.
    Full,
    /// `W_pv = alpha I`, `W_kq = beta I`; alpha and beta are read off the
    /// `(0, 0)` entries of the initial network.
    ScaledIdentity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub steps: usize,
    pub parameterization: Parameterization,
    pub fd_step: f64,
    /// Rescale the gradient to at most this norm.
    pub clip: Option<f64>,
}

impl TrainConfig {
    pub fn new(lr: f64, steps: usize, parameterization: Parameterization) -> Self {
        TrainConfig {
            lr,
            steps,
            parameterization,
            fd_step: 1e-6,
            clip: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub net: LsaNetwork,
    /// Loss before each update and after the last one (`steps + 1` entries).
    pub losses: Vec<f64>,
}

fn flatten(net: &LsaNetwork, p: Parameterization) -> Vec<f64> {
    net.layers()
        .iter()
        .flat_map(|l| match p {
            Parameterization::Full => l
                .w_pv()
                .as_slice()
                .iter()
                .chain(l.w_kq().as_slice())
                .copied()
                .collect::<Vec<_>>(),
            Parameterization::ScaledIdentity => vec![l.w_pv()[(0, 0)], l.w_kq()[(0, 0)]],
        })
        .collect()
}

fn rebuild(theta: &[f64], template: &LsaNetwork, p: Parameterization) -> Option<LsaNetwork> {
    let n = 2 * template.dim();
    let per = match p {
        Parameterization::Full => 2 * n * n,
        Parameterization::ScaledIdentity => 2,
    };
    let layers = template
        .layers()
        .iter()
        .zip(theta.chunks(per))
        .map(|(l, c)| {
            let (pv, kq) = match p {
                Parameterization::Full => (
                    DMatrix::from_column_slice(n, n, &c[..n * n]),
                    DMatrix::from_column_slice(n, n, &c[n * n..]),
                ),
                Parameterization::ScaledIdentity => {
                    let i = DMatrix::<f64>::identity(n, n);
                    (&i * c[0], &i * c[1])
                }
            };
            LayerParams::new(pv, kq, l.rho()).ok()
        })
        .collect::<Option<Vec<_>>>()?;
    LsaNetwork::new(layers).ok()
}

/// Mean squared prediction error over the data, using all layers.
pub fn mse_loss(net: &LsaNetwork, data: &[SynthExample]) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let errs: Vec<f64> = data
        .par_iter()
        .map(|ex| error_norm(&ex.prompt(), net, &ex.target).powi(2))
        .collect();
    errs.iter().sum::<f64>() / data.len() as f64
}

fn loss_at(theta: &[f64], template: &LsaNetwork, p: Parameterization, data: &[SynthExample]) -> f64 {
    rebuild(theta, template, p).map_or(f64::INFINITY, |net| mse_loss(&net, data))
}

/// Full-batch gradient descent on the squared error with central-difference
/// parameter gradients.
pub fn train_lsa(net0: &LsaNetwork, data: &[SynthExample], cfg: &TrainConfig) -> Result<TrainReport> {
    if !(cfg.lr > 0.0 && cfg.lr.is_finite()) {
        return Err(Error::InvalidArgument(format!("lr must be positive, got {}", cfg.lr)));
    }
    if !(cfg.fd_step > 0.0 && cfg.fd_step.is_finite()) {
        return Err(Error::InvalidStep(cfg.fd_step));
    }
    if cfg.clip.is_some_and(|c| !(c > 0.0)) {
        return Err(Error::InvalidArgument("gradient clip must be positive".into()));
    }
    if let Some(ex) = data.first() {
        if ex.d.dim() != net0.dim() {
            return Err(Error::dim("training data", net0.dim(), ex.d.dim()));
        }
    }
    let p = cfg.parameterization;
    let mut theta = flatten(net0, p);
    let mut losses = Vec::with_capacity(cfg.steps + 1);
    for step in 0..=cfg.steps {
        let loss = loss_at(&theta, net0, p, data);
        losses.push(loss);
        if !loss.is_finite() {
            return Err(Error::Diverged { step, loss, losses });
        }
        if step == cfg.steps {
            break;
        }
        let h = cfg.fd_step;
        let grad: Vec<f64> = (0..theta.len())
            .map(|k| {
                let mut plus = theta.clone();
                plus[k] += h;
                let mut minus = theta.clone();
                minus[k] -= h;
                (loss_at(&plus, net0, p, data) - loss_at(&minus, net0, p, data)) / (2.0 * h)
            })
            .collect();
        let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        let shrink = match cfg.clip {
            Some(c) if gnorm > c => c / gnorm,
            _ => 1.0,
        };
        for (t, g) in theta.iter_mut().zip(&grad) {
            *t -= cfg.lr * shrink * g;
        }
    }
    let net = rebuild(&theta, net0, p).ok_or_else(|| Error::NonFinite("trained parameters".into()))?;
    Ok(TrainReport { net, losses })
}

/// Correctness threshold on the prediction error norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Tau {
    /// `factor * |target| + floor`.
    Relative { factor: f64, floor: f64 },
    Absolute(f64),
}

impl Default for Tau {
    fn default() -> Self {
        Tau::Relative {
            factor: 0.1,
            floor: 1e-6,
        }
    }
}

impl Tau {
    pub fn validate(self) -> Result<Self> {
        let ok = match self {
            Tau::Relative { factor, floor } => factor >= 0.0 && floor > 0.0,
            Tau::Absolute(t) => t > 0.0,
        };
        if ok {
            Ok(self)
        } else {
            Err(Error::InvalidArgument(format!("tau must be positive: {self:?}")))
        }
    }

    pub fn threshold(self, target: &EmbedVec) -> f64 {
        match self {
            Tau::Relative { factor, floor } => factor * target.norm() + floor,
            Tau::Absolute(t) => t,
        }
    }

    pub fn describe(self) -> String {
        match self {
            Tau::Relative { factor, floor } => format!("{factor:?}*|target|+{floor:?}"),
            Tau::Absolute(t) => format!("{t:?}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitEntry {
    pub id: String,
    pub threshold: f64,
    pub zero_shot_error: f64,
    pub one_shot_error: f64,
}

impl SplitEntry {
    pub fn zero_shot_correct(&self) -> bool {
        self.zero_shot_error < self.threshold
    }

    pub fn one_shot_correct(&self) -> bool {
        self.one_shot_error < self.threshold
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitReport {
    pub tau: Tau,
    pub entries: Vec<SplitEntry>,
    /// Zero-shot wrong, one-shot right.
    pub effective: Vec<String>,
    /// Zero-shot wrong, one-shot still wrong.
    pub ineffective: Vec<String>,
}

impl SplitReport {
    pub fn has_empty_group(&self) -> bool {
        self.effective.is_empty() || self.ineffective.is_empty()
    }
}

pub fn split_effective(data: &[SynthExample], net: &LsaNetwork, tau: Tau) -> Result<SplitReport> {
    let tau = tau.validate()?;
    check_data_dim(data, net)?;
    let entries: Vec<SplitEntry> = data
        .par_iter()
        .map(|ex| SplitEntry {
            id: ex.id.clone(),
            threshold: tau.threshold(&ex.target),
            zero_shot_error: error_norm(&ex.zero_shot_prompt(), net, &ex.target),
            one_shot_error: error_norm(&ex.prompt(), net, &ex.target),
        })
        .collect();
    let mut effective = Vec::new();
    let mut ineffective = Vec::new();
    for en in entries.iter().filter(|en| !en.zero_shot_correct()) {
        if en.one_shot_correct() {
            effective.push(en.id.clone());
        } else {
            ineffective.push(en.id.clone());
        }
    }
    Ok(SplitReport {
        tau,
        entries,
        effective,
        ineffective,
    })
}

fn check_data_dim(data: &[SynthExample], net: &LsaNetwork) -> Result<()> {
    for ex in data {
        if ex.d.dim() != net.dim() {
            return Err(Error::dim(format!("example {}", ex.id), net.dim(), ex.d.dim()));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowRow {
    pub layer: usize,
    pub mean_effective: Option<f64>,
    pub mean_ineffective: Option<f64>,
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowCurve {
    pub rows: Vec<FlowRow>,
}

fn csv_num(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

impl FlowCurve {
    /// Effective mean at least the ineffective mean at every layer.
    pub fn effective_dominates(&self) -> bool {
        self.rows.iter().all(|r| match (r.mean_effective, r.mean_ineffective) {
            (Some(a), Some(b)) => a >= b,
            _ => false,
        })
    }

    /// Every ratio defined and `r[l+1] >= r[l] - tol`.
    pub fn ratio_nondecreasing(&self, tol: f64) -> bool {
        let ratios: Option<Vec<f64>> = self.rows.iter().map(|r| r.ratio).collect();
        match ratios {
            Some(r) => r.windows(2).all(|w| w[1] >= w[0] - tol),
            None => false,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,mean_flow_effective,mean_flow_ineffective,ratio\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{}",
                r.layer,
                csv_num(r.mean_effective),
                csv_num(r.mean_ineffective),
                csv_num(r.ratio)
            );
        }
        s
    }
}

/// Per-layer flow norms of one example, layers `1..=L`.
pub fn example_flows(ex: &SynthExample, net: &LsaNetwork) -> Result<Vec<f64>> {
    let m = ex.prompt();
    (1..=net.len())
        .map(|l| grad_multi_layer(&m, net, l).map(|g| g.norm()))
        .collect()
}

fn group_means(ids: &[String], by_id: &HashMap<&str, &SynthExample>, net: &LsaNetwork) -> Result<Option<Vec<f64>>> {
    if ids.is_empty() {
        return Ok(None);
    }
    let flows = ids
        .par_iter()
        .map(|id| {
            let ex = by_id
                .get(id.as_str())
                .ok_or_else(|| Error::InvalidArgument(format!("unknown example id {id:?}")))?;
            example_flows(ex, net)
        })
        .collect::<Result<Vec<_>>>()?;
    let n = flows.len() as f64;
    Ok(Some(
        (0..net.len())
            .map(|l| flows.iter().map(|f| f[l]).sum::<f64>() / n)
            .collect(),
    ))
}

/// Mean flow per layer for each group and their ratio.
pub fn flow_curves(split: &SplitReport, data: &[SynthExample], net: &LsaNetwork) -> Result<FlowCurve> {
    check_data_dim(data, net)?;
    let by_id: HashMap<&str, &SynthExample> = data.iter().map(|ex| (ex.id.as_str(), ex)).collect();
    let eff = group_means(&split.effective, &by_id, net)?;
    let ineff = group_means(&split.ineffective, &by_id, net)?;
    let rows = (0..net.len())
        .map(|l| {
            let a = eff.as_ref().map(|v| v[l]);
            let b = ineff.as_ref().map(|v| v[l]);
            let ratio = match (a, b) {
                (Some(a), Some(b)) if b > 0.0 => Some(a / b),
                _ => None,
            };
            FlowRow {
                layer: l + 1,
                mean_effective: a,
                mean_ineffective: b,
                ratio,
            }
        })
        .collect();
    Ok(FlowCurve { rows })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryPoint {
    pub relevance: f64,
    pub knowledge: f64,
    pub correct: bool,
}

pub fn boundary_to_csv(points: &[BoundaryPoint]) -> String {
    let mut s = String::from("relevance,knowledge,correct\n");
    for p in points {
        let _ = writeln!(s, "{:?},{:?},{}", p.relevance, p.knowledge, u8::from(p.correct));
    }
    s
}

/// One point per example: relevance `|d^T W_kq q|` and knowledge `|W_pv d|`
/// under the last layer, labelled by one-shot correctness.
pub fn boundary_scatter(data: &[SynthExample], net: &LsaNetwork, tau: Tau) -> Result<Vec<BoundaryPoint>> {
    let tau = tau.validate()?;
    check_data_dim(data, net)?;
    data.par_iter()
        .map(|ex| {
            let s = eff_scalars(&ex.d, &ex.q, net.last_layer())?;
            Ok(BoundaryPoint {
                relevance: s.relevance,
                knowledge: s.knowledge,
                correct: error_norm(&ex.prompt(), net, &ex.target) < tau.threshold(&ex.target),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FitConfig {
    pub degree: usize,
    pub lr: f64,
    pub steps: usize,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            degree: 2,
            lr: 0.5,
            steps: 2000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryFit {
    pub degree: usize,
    /// Exponent pairs `(i, j)` of `relevance^i * knowledge^j`, constant first.
    pub monomials: Vec<(usize, usize)>,
    pub weights: Vec<f64>,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub accuracy: f64,
    /// Mean logistic loss before each step and after the last.
    pub losses: Vec<f64>,
    /// Single-class input: the fit is the constant classifier.
    pub degenerate: Option<bool>,
}

impl BoundaryFit {
    pub fn predict(&self, relevance: f64, knowledge: f64) -> bool {
        if let Some(c) = self.degenerate {
            return c;
        }
        let f = features(relevance, knowledge, &self.monomials);
        let z: f64 = f
            .iter()
            .enumerate()
            .map(|(i, v)| self.weights[i] * (v - self.mean[i]) / self.scale[i])
            .sum();
        z >= 0.0
    }
}

fn monomials(degree: usize) -> Vec<(usize, usize)> {
    (0..=degree)
        .flat_map(|total| (0..=total).rev().map(move |i| (i, total - i)))
        .collect()
}

fn features(r: f64, k: f64, mons: &[(usize, usize)]) -> Vec<f64> {
    mons.iter()
        .map(|&(i, j)| r.powi(i as i32) * k.powi(j as i32))
        .collect()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(z))` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Logistic regression on z-scored monomials of (relevance, knowledge) up to
/// `degree`, fitted by full-batch gradient descent.
pub fn fit_boundary(points: &[BoundaryPoint], cfg: &FitConfig) -> Result<BoundaryFit> {
    if points.is_empty() {
        return Err(Error::InvalidArgument("no points to fit".into()));
    }
    if !(cfg.lr > 0.0 && cfg.lr.is_finite()) {
        return Err(Error::InvalidArgument(format!("lr must be positive, got {}", cfg.lr)));
    }
    let mons = monomials(cfg.degree);
    let m = mons.len();
    let n = points.len();
    let n_true = points.iter().filter(|p| p.correct).count();
    if n_true == 0 || n_true == n {
        return Ok(BoundaryFit {
            degree: cfg.degree,
            monomials: mons,
            weights: vec![0.0; m],
            mean: vec![0.0; m],
            scale: vec![1.0; m],
            accuracy: 1.0,
            losses: Vec::new(),
            degenerate: Some(n_true == n),
        });
    }

    let raw: Vec<Vec<f64>> = points
        .iter()
        .map(|p| features(p.relevance, p.knowledge, &mons))
        .collect();
    let mut mean = vec![0.0; m];
    let mut scale = vec![1.0; m];
    for c in 1..m {
        let mu = raw.iter().map(|f| f[c]).sum::<f64>() / n as f64;
        let var = raw.iter().map(|f| (f[c] - mu).powi(2)).sum::<f64>() / n as f64;
        mean[c] = mu;
        scale[c] = if var > 0.0 { var.sqrt() } else { 1.0 };
    }
    let x: Vec<Vec<f64>> = raw
        .iter()
        .map(|f| (0..m).map(|c| (f[c] - mean[c]) / scale[c]).collect())
        .collect();
    let y: Vec<f64> = points.iter().map(|p| f64::from(u8::from(p.correct))).collect();

    let mut r = stream_rng(cfg.seed, 0);
    let mut w: Vec<f64> = (0..m).map(|_| 0.01 * normal(&mut r)).collect();
    let logits = |w: &[f64]| -> Vec<f64> {
        x.iter()
            .map(|row| row.iter().zip(w).map(|(a, b)| a * b).sum())
            .collect()
    };
    let loss = |z: &[f64]| -> f64 {
        z.iter()
            .zip(&y)
            .map(|(&z, &t)| softplus(z) - t * z)
            .sum::<f64>()
            / n as f64
    };
    let mut losses = Vec::with_capacity(cfg.steps + 1);
    for _ in 0..cfg.steps {
        let z = logits(&w);
        losses.push(loss(&z));
        let mut g = vec![0.0; m];
        for ((row, &zi), &yi) in x.iter().zip(&z).zip(&y) {
            let err = sigmoid(zi) - yi;
            for c in 0..m {
                g[c] += err * row[c];
            }
        }
        for c in 0..m {
            w[c] -= cfg.lr * g[c] / n as f64;
        }
    }
    let z = logits(&w);
    losses.push(loss(&z));
    let hits = z
        .iter()
        .zip(&y)
        .filter(|(&zi, &yi)| (zi >= 0.0) == (yi == 1.0))
        .count();
    Ok(BoundaryFit {
        degree: cfg.degree,
        monomials: mons,
        weights: w,
        mean,
        scale,
        accuracy: hits as f64 / n as f64,
        losses,
        degenerate: None,
    })
}

/// Named simulation setups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// e = 1, positive unit inputs, scaled-identity layers trained on
    /// full-strength demos, evaluated on weakened demos.
    ConditionPassing,
    /// Gaussian tasks and inputs with a fully parameterized network.
    Gaussian,
}

impl Preset {
    pub fn as_str(self) -> &'static str {
        match self {
            Preset::ConditionPassing => "condition-passing",
            Preset::Gaussian => "gaussian",
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "condition-passing" => Ok(Preset::ConditionPassing),
            "gaussian" => Ok(Preset::Gaussian),
            other => Err(Error::InvalidArgument(format!(
                "unknown preset {other:?} (expected condition-passing or gaussian)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub preset: Preset,
    pub seed: u64,
    pub e: usize,
    pub layers: usize,
    pub tau: Tau,
    pub train: DatasetConfig,
    pub eval: DatasetConfig,
    pub init: f64,
    pub optim: TrainConfig,
    pub fit: FitConfig,
}

impl SimConfig {
    pub fn preset(preset: Preset, seed: u64) -> Self {
        match preset {
            Preset::ConditionPassing => {
                let sampling = Sampling::UnitPositive {
                    w_lo: 0.75,
                    w_hi: 1.25,
                };
                let data = |s: u64, n: usize, strength: (f64, f64)| DatasetConfig {
                    seed: s,
                    e: 1,
                    n_tasks: n,
                    n_per_task: 1,
                    sampling,
                    demo_strength: strength,
                    demo_task_shift: 0,
                };
                SimConfig {
                    preset,
                    seed,
                    e: 1,
                    layers: 4,
                    tau: Tau::default(),
                    train: data(seed, 40, (1.0, 1.0)),
                    eval: data(seed.wrapping_add(1), 400, (0.7, 1.0)),
                    init: 0.2,
                    optim: TrainConfig::new(0.01, 1000, Parameterization::ScaledIdentity),
                    fit: FitConfig {
                        seed,
                        ..FitConfig::default()
                    },
                }
            }
            Preset::Gaussian => {
                let e = 2;
                let mut train = DatasetConfig::gaussian(seed, e, 8, 8);
                train.demo_strength = (1.0, 1.0);
                let mut eval = DatasetConfig::gaussian(seed.wrapping_add(1), e, 8, 25);
                eval.demo_strength = (0.5, 1.0);
                SimConfig {
                    preset,
                    seed,
                    e,
                    layers: 2,
                    tau: Tau::Relative {
                        factor: 0.5,
                        floor: 1e-6,
                    },
                    train,
                    eval,
                    init: 0.1,
                    optim: TrainConfig {
                        clip: Some(1.0),
                        ..TrainConfig::new(0.01, 300, Parameterization::Full)
                    },
                    fit: FitConfig {
                        seed,
                        ..FitConfig::default()
                    },
                }
            }
        }
    }

    /// Overrides the embedding size for both datasets.
    pub fn with_e(mut self, e: usize) -> Self {
        self.e = e;
        self.train.e = e;
        self.eval.e = e;
        self
    }

    pub fn initial_network(&self) -> Result<LsaNetwork> {
        if self.layers == 0 {
            return Err(Error::EmptyNetwork);
        }
        let layers = (0..self.layers)
            .map(|l| match self.optim.parameterization {
                Parameterization::ScaledIdentity => {
                    LayerParams::scaled_identity(self.e, self.init, self.init)
                }
                Parameterization::Full => {
                    let mut r = stream_rng(self.seed, 1_000_000 + l as u64);
                    let n = 2 * self.e;
                    let i = DMatrix::<f64>::identity(n, n);
                    let pv = &i * self.init + normal_matrix(&mut r, n, n, 0.1 * self.init);
                    let kq = &i * self.init + normal_matrix(&mut r, n, n, 0.1 * self.init);
                    LayerParams::new(pv, kq, 1.0)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        LsaNetwork::new(layers)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub net: LsaNetwork,
    pub losses: Vec<f64>,
    pub split: SplitReport,
    pub flow: FlowCurve,
    pub scatter: Vec<BoundaryPoint>,
    pub fit_deg1: BoundaryFit,
    pub fit_deg2: BoundaryFit,
}

impl SimOutput {
    pub fn status(&self) -> &'static str {
        if self.split.has_empty_group() {
            "empty-group"
        } else {
            "ok"
        }
    }
}

/// Train, split, and measure. A pure function of the config.
pub fn run_simulation(cfg: &SimConfig) -> Result<SimOutput> {
    let train = gen_dataset(&cfg.train)?;
    let eval = gen_dataset(&cfg.eval)?;
    let report = train_lsa(&cfg.initial_network()?, &train.examples, &cfg.optim)?;
    let net = report.net;
    let split = split_effective(&eval.examples, &net, cfg.tau)?;
    let flow = flow_curves(&split, &eval.examples, &net)?;
    let scatter = boundary_scatter(&eval.examples, &net, cfg.tau)?;
    let fit_deg1 = fit_boundary(&scatter, &FitConfig { degree: 1, ..cfg.fit })?;
    let fit_deg2 = fit_boundary(&scatter, &FitConfig { degree: 2, ..cfg.fit })?;
    Ok(SimOutput {
        net,
        losses: report.losses,
        split,
        flow,
        scatter,
        fit_deg1,
        fit_deg2,
    })
}

#[derive(Serialize)]
struct ConfigEcho<'a> {
    preset: &'a str,
    seed: u64,
    e: usize,
    layers: usize,
    tau: String,
    lr: f64,
    steps: usize,
    parameterization: Parameterization,
    init: f64,
    train: &'a DatasetConfig,
    eval: &'a DatasetConfig,
    fit: FitConfig,
    final_loss: Option<f64>,
    n_effective: usize,
    n_ineffective: usize,
    accuracy_degree1: f64,
    accuracy_degree2: f64,
    status: &'a str,
}

/// Run-config JSON written alongside the CSVs.
pub fn config_echo(cfg: &SimConfig, out: &SimOutput) -> String {
    let echo = ConfigEcho {
        preset: cfg.preset.as_str(),
        seed: cfg.seed,
        e: cfg.e,
        layers: cfg.layers,
        tau: cfg.tau.describe(),
        lr: cfg.optim.lr,
        steps: cfg.optim.steps,
        parameterization: cfg.optim.parameterization,
        init: cfg.init,
        train: &cfg.train,
        eval: &cfg.eval,
        fit: cfg.fit,
        final_loss: out.losses.last().copied(),
        n_effective: out.split.effective.len(),
        n_ineffective: out.split.ineffective.len(),
        accuracy_degree1: out.fit_deg1.accuracy,
        accuracy_degree2: out.fit_deg2.accuracy,
        status: out.status(),
    };
    let mut s = serde_json::to_string_pretty(&echo).expect("finite values");
    s.push('\n');
    s
}
