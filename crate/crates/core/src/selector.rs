//! Demonstration scoring by last-layer gradient-flow magnitude.
//!
//! For a one-shot prompt the flow is `J = [(A d) b^T + (d^T b) A] / rho`
//! with `A` the y-row-block of `W_pv` and `b = W_kq q`. Expanding the
//! Frobenius norm gives
//!
//! ```text
//! rho^2 |J|^2 = |v|^2 |b|^2 + 2 (d^T b)(v^T c) + (d^T b)^2 |A|_F^2
//! ```
//!
//! with `v = A d` (cached offline per demo) and `c = A b` (once per query),
//! so each demo costs O(e) online.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{bm25_rank, cosine_rank, mmr_rank, Bm25Params, MatchField, MmrParams};
use crate::error::{Error, Result};
use crate::lsa::{frobenius, grad_multi_layer, grad_single_closed, EmbedVec, LsaNetwork, Token, TokenMatrix};
use crate::opcount::{dot, Arith};
use crate::store::{read_text, write_atomic, DemoRecord, Projection, Store};

pub const DEFAULT_K: usize = 3;
pub const INDEX_FORMAT: &str = "grads-index";
pub const INDEX_VERSION: u64 = 1;

/// A query encoding. The y-part is implicitly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryEncoding {
    id: String,
    x: EmbedVec,
    text: Option<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QueryDoc {
    id: String,
    x: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
}

impl QueryEncoding {
    pub fn new(id: impl Into<String>, x: Vec<f64>) -> Result<Self> {
        let id = id.into();
        if id.is_empty() {
            return Err(Error::InvalidArgument("query id must be nonempty".into()));
        }
        Ok(QueryEncoding {
            id,
            x: EmbedVec::new(x)?,
            text: None,
        })
    }

    pub fn with_text(mut self, text: impl Into<String>) -> Self {
        self.text = Some(text.into());
        self
    }

    /// `{"id":"..","x":[..],"text":".."}` with `text` optional.
    pub fn parse(text: &str) -> Result<Self> {
        let doc: QueryDoc =
            serde_json::from_str(text).map_err(|e| Error::parse(e.line(), e.to_string()))?;
        let q = QueryEncoding::new(doc.id, doc.x)?;
        Ok(match doc.text {
            Some(t) => q.with_text(t),
            None => q,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&QueryDoc {
            id: self.id.clone(),
            x: self.x.as_slice().to_vec(),
            text: self.text.clone(),
        })
        .expect("finite values")
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn x(&self) -> &EmbedVec {
        &self.x
    }

    pub fn text(&self) -> Option<&str> {
        self.text.as_deref()
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn token(&self) -> Token {
        Token::query(self.x.clone())
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Ok(QueryEncoding {
            id: self.id.clone(),
            x: EmbedVec::new(self.x.as_slice().iter().map(|v| v * c).collect())?,
            text: self.text.clone(),
        })
    }
}

pub fn load_query(path: &Path) -> Result<QueryEncoding> {
    QueryEncoding::parse(&read_text(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoredDemo {
    id: String,
    score: f64,
}

impl ScoredDemo {
    pub fn new(id: impl Into<String>, score: f64) -> Result<Self> {
        let id = id.into();
        if !score.is_finite() {
            return Err(Error::NonFinite(format!("score of {id:?}")));
        }
        Ok(ScoredDemo { id, score })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn score(&self) -> f64 {
        self.score
    }
}

/// `(score desc, id asc)`.
pub fn ranking_order(a: &ScoredDemo, b: &ScoredDemo) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.id.cmp(&b.id))
}

/// Sorts by [`ranking_order`] and keeps the first `k`.
pub fn rank_top_k(mut scored: Vec<ScoredDemo>, k: usize) -> Result<Vec<ScoredDemo>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    scored.sort_by(ranking_order);
    scored.truncate(k);
    Ok(scored)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Grads,
    Bm25,
    Cosine,
    Mmr,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Grads => "grads",
            Method::Bm25 => "bm25",
            Method::Cosine => "cosine",
            Method::Mmr => "mmr",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grads" => Ok(Method::Grads),
            "bm25" => Ok(Method::Bm25),
            "cosine" => Ok(Method::Cosine),
            "mmr" => Ok(Method::Mmr),
            other => Err(Error::InvalidArgument(format!(
                "unknown method {other:?} (expected grads, bm25, cosine or mmr)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionStatus {
    Ok,
    EmptyPool,
}

/// A ranked selection. `params` echoes the ranker settings and is kept out
/// of the JSON form.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    query_id: String,
    method: Method,
    k: usize,
    selected: Vec<ScoredDemo>,
    params: Vec<(String, String)>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SelectionDoc {
    query_id: String,
    method: String,
    k: usize,
    selected: Vec<ScoredDemo>,
}

impl SelectionResult {
    pub fn new(
        query_id: impl Into<String>,
        method: Method,
        k: usize,
        selected: Vec<ScoredDemo>,
    ) -> Self {
        SelectionResult {
            query_id: query_id.into(),
            method,
            k,
            selected,
            params: Vec::new(),
        }
    }

    pub fn push_param(&mut self, key: &str, value: impl fmt::Display) {
        self.params.push((key.to_string(), value.to_string()));
    }

    pub fn query_id(&self) -> &str {
        &self.query_id
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn selected(&self) -> &[ScoredDemo] {
        &self.selected
    }

    pub fn params(&self) -> &[(String, String)] {
        &self.params
    }

    pub fn status(&self) -> SelectionStatus {
        if self.selected.is_empty() {
            SelectionStatus::EmptyPool
        } else {
            SelectionStatus::Ok
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&SelectionDoc {
            query_id: self.query_id.clone(),
            method: self.method.as_str().to_string(),
            k: self.k,
            selected: self.selected.clone(),
        })
        .expect("finite scores")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let doc: SelectionDoc =
            serde_json::from_str(text).map_err(|e| Error::parse(e.line(), e.to_string()))?;
        let method = doc.method.parse()?;
        if doc.k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        if doc.selected.len() > doc.k {
            return Err(Error::InvalidArgument(format!(
                "{} selections exceed k = {}",
                doc.selected.len(),
                doc.k
            )));
        }
        let mut seen = HashSet::new();
        for s in &doc.selected {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::DuplicateId(s.id.clone()));
            }
        }
        Ok(SelectionResult::new(doc.query_id, method, doc.k, doc.selected))
    }
}

/// Flow magnitude of one demo, from the explicit Jacobian.
pub fn grads_score(demo: &DemoRecord, q: &QueryEncoding, proj: &Projection) -> Result<ScoredDemo> {
    let flow = grad_single_closed(&demo.token(), &q.token(), proj.layer())?;
    ScoredDemo::new(demo.id(), frobenius(flow.jacobian())?)
}

/// Flow magnitude after `layer` layers of `net`.
pub fn grads_score_at_layer(
    demo: &DemoRecord,
    q: &QueryEncoding,
    net: &LsaNetwork,
    layer: usize,
) -> Result<ScoredDemo> {
    let e = TokenMatrix::one_shot(&demo.token(), &q.token())?;
    ScoredDemo::new(demo.id(), grad_multi_layer(&e, net, layer)?.norm())
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    id: String,
    d: Vec<f64>,
    v: Vec<f64>,
    v_norm2: f64,
}

impl IndexEntry {
    pub fn id(&self) -> &str {
        &self.id
    }

    /// Stacked `(x; y)` of the demo.
    pub fn d(&self) -> &[f64] {
        &self.d
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub fn v_norm2(&self) -> f64 {
        self.v_norm2
    }
}

/// Offline per-demo cache: `v = A d` and `|v|^2`, plus the shared `|A|_F^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoIndex {
    dim: usize,
    projection: String,
    a_norm2: f64,
    entries: Vec<IndexEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IndexMeta {
    format: String,
    version: u64,
    dim: usize,
    projection: String,
    a_norm2: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IndexLine {
    id: String,
    d: Vec<f64>,
    v: Vec<f64>,
    v_norm2: f64,
}

fn row_major(m: &nalgebra::DMatrix<f64>) -> Vec<f64> {
    (0..m.nrows()).flat_map(|i| m.row(i).iter().copied().collect::<Vec<_>>()).collect()
}

fn matvec<T: Arith>(m: &[T], cols: usize, x: &[T]) -> Vec<T> {
    m.chunks(cols).map(|row| dot(row, x)).collect()
}

/// Per-query quantities shared by every demo.
#[derive(Debug, Clone)]
pub struct QuerySetup<T> {
    pub b: Vec<T>,
    pub b_norm2: T,
    pub c: Vec<T>,
}

/// `b = W_kq q`, `|b|^2`, `c = A b`. Matrices are row-major.
pub fn query_setup<T: Arith>(w_kq: &[T], a: &[T], q: &[T]) -> QuerySetup<T> {
    let n = q.len();
    let b = matvec(w_kq, n, q);
    let b_norm2 = dot(&b, &b);
    let c = matvec(a, n, &b);
    QuerySetup { b, b_norm2, c }
}

/// `rho^2 |J|^2` for one cached demo, before clamping.
pub fn fast_score_sq<T: Arith>(d: &[T], v: &[T], v_norm2: T, a_norm2: T, s: &QuerySetup<T>) -> T {
    let db = dot(d, &s.b);
    let vc = dot(v, &s.c);
    v_norm2 * s.b_norm2 + T::lift(2.0) * db * vc + db * db * a_norm2
}

impl DemoIndex {
    pub fn build(store: &Store, proj: &Projection) -> Result<Self> {
        if store.dim() != proj.dim() {
            return Err(Error::dim("projection", store.dim(), proj.dim()));
        }
        let a = proj.layer().pv_y_block();
        let a_norm2 = a.norm_squared();
        if !a_norm2.is_finite() {
            return Err(Error::NonFinite("projection value block".into()));
        }
        let a_rows = row_major(&a);
        let n = 2 * store.dim();
        let entries = store
            .records()
            .iter()
            .map(|r| {
                let d: Vec<f64> = r.token().stacked().iter().copied().collect();
                let v = matvec(&a_rows, n, &d);
                let v_norm2 = dot(&v, &v);
                if !v_norm2.is_finite() || v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFinite(format!("index entry {:?}", r.id())));
                }
                Ok(IndexEntry {
                    id: r.id().to_string(),
                    d,
                    v,
                    v_norm2,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DemoIndex {
            dim: store.dim(),
            projection: proj.fingerprint(),
            a_norm2,
            entries,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn projection_fingerprint(&self) -> &str {
        &self.projection
    }

    pub fn a_norm2(&self) -> f64 {
        self.a_norm2
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&IndexMeta {
            format: INDEX_FORMAT.to_string(),
            version: INDEX_VERSION,
            dim: self.dim,
            projection: self.projection.clone(),
            a_norm2: self.a_norm2,
        })
        .expect("finite values");
        out.push('\n');
        for e in &self.entries {
            let line = IndexLine {
                id: e.id.clone(),
                d: e.d.clone(),
                v: e.v.clone(),
                v_norm2: e.v_norm2,
            };
            out.push_str(&serde_json::to_string(&line).expect("finite values"));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.split('\n').enumerate().map(|(i, l)| (i + 1, l));
        let (_, first) = lines.next().expect("split yields at least one item");
        if first.trim().is_empty() {
            return Err(Error::parse(1, "missing meta record"));
        }
        let meta: IndexMeta =
            serde_json::from_str(first).map_err(|e| Error::parse(1, format!("meta record: {e}")))?;
        if meta.format != INDEX_FORMAT {
            return Err(Error::parse(1, format!("unknown format tag {:?}", meta.format)));
        }
        if meta.version != INDEX_VERSION {
            return Err(Error::parse(1, format!("unknown version {}", meta.version)));
        }
        if meta.dim == 0 {
            return Err(Error::parse(1, "dim must be at least 1"));
        }
        if !(meta.a_norm2.is_finite() && meta.a_norm2 >= 0.0) {
            return Err(Error::parse(1, "a_norm2 must be finite and nonnegative"));
        }
        let e = meta.dim;
        let mut entries = Vec::new();
        let mut seen = HashSet::new();
        let mut pending_blank: Option<usize> = None;
        for (no, line) in lines {
            if let Some(blank) = pending_blank {
                return Err(Error::parse(blank, "blank line"));
            }
            if line.is_empty() {
                pending_blank = Some(no);
                continue;
            }
            let raw: IndexLine = serde_json::from_str(line)
                .map_err(|err| Error::parse(no, format!("malformed record: {err}")))?;
            if raw.id.is_empty() {
                return Err(Error::parse(no, "missing id"));
            }
            if raw.d.len() != 2 * e || raw.v.len() != e {
                return Err(Error::parse(
                    no,
                    format!("record {:?}: vector lengths do not match dim {e}", raw.id),
                ));
            }
            if !(raw.v_norm2.is_finite() && raw.v_norm2 >= 0.0) {
                return Err(Error::parse(no, format!("record {:?}: bad v_norm2", raw.id)));
            }
            if !seen.insert(raw.id.clone()) {
                return Err(Error::parse(no, format!("duplicate id {:?}", raw.id)));
            }
            entries.push(IndexEntry {
                id: raw.id,
                d: raw.d,
                v: raw.v,
                v_norm2: raw.v_norm2,
            });
        }
        Ok(DemoIndex {
            dim: e,
            projection: meta.projection,
            a_norm2: meta.a_norm2,
            entries,
        })
    }
}

pub fn load_index(path: &Path) -> Result<DemoIndex> {
    DemoIndex::parse(&read_text(path)?)
}

pub fn save_index(index: &DemoIndex, path: &Path) -> Result<()> {
    write_atomic(path, index.to_jsonl().as_bytes())
}

/// Online scoring of every indexed demo, in index order.
pub fn grads_score_batch(
    index: &DemoIndex,
    q: &QueryEncoding,
    proj: &Projection,
) -> Result<Vec<ScoredDemo>> {
    if index.projection != proj.fingerprint() {
        return Err(Error::StaleIndex(format!(
            "index built for projection {}, scoring with {}",
            index.projection,
            proj.fingerprint()
        )));
    }
    if q.dim() != index.dim {
        return Err(Error::dim("query x", index.dim, q.dim()));
    }
    let layer = proj.layer();
    let qs: Vec<f64> = q.token().stacked().iter().copied().collect();
    let setup = query_setup(
        &row_major(layer.w_kq()),
        &row_major(&layer.pv_y_block()),
        &qs,
    );
    let rho = layer.rho();
    index
        .entries
        .par_iter()
        .map(|e| {
            let s2 = fast_score_sq(&e.d, &e.v, e.v_norm2, index.a_norm2, &setup);
            ScoredDemo::new(e.id.clone(), s2.max(0.0).sqrt() / rho)
        })
        .collect()
}

/// Ranker choice plus its settings.
#[derive(Debug, Clone, Copy)]
pub enum Ranker<'a> {
    Grads(&'a Projection),
    /// Flow through the first `layer` layers of a full network.
    GradsLayer {
        net: &'a LsaNetwork,
        layer: usize,
    },
    Bm25 {
        params: Bm25Params,
        field: MatchField,
    },
    Cosine,
    Mmr(MmrParams),
}

impl Ranker<'_> {
    pub fn method(&self) -> Method {
        match self {
            Ranker::Grads(_) | Ranker::GradsLayer { .. } => Method::Grads,
            Ranker::Bm25 { .. } => Method::Bm25,
            Ranker::Cosine => Method::Cosine,
            Ranker::Mmr(_) => Method::Mmr,
        }
    }
}

/// Top-k from an index already built for `proj`.
pub fn select_indexed(
    index: &DemoIndex,
    q: &QueryEncoding,
    k: usize,
    proj: &Projection,
) -> Result<SelectionResult> {
    let scored = grads_score_batch(index, q, proj)?;
    let mut res = SelectionResult::new(q.id(), Method::Grads, k, rank_top_k(scored, k)?);
    res.push_param("projection", proj.fingerprint());
    Ok(res)
}

/// Top-k demos of `store` for `q`. An empty pool gives an empty selection
/// with [`SelectionStatus::EmptyPool`].
pub fn select(store: &Store, q: &QueryEncoding, k: usize, ranker: Ranker<'_>) -> Result<SelectionResult> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if q.dim() != store.dim() {
        return Err(Error::dim("query x", store.dim(), q.dim()));
    }
    match ranker {
        Ranker::Grads(proj) => select_indexed(&DemoIndex::build(store, proj)?, q, k, proj),
        Ranker::GradsLayer { net, layer } => {
            let scored = store
                .records()
                .par_iter()
                .map(|d| grads_score_at_layer(d, q, net, layer))
                .collect::<Result<Vec<_>>>()?;
            let mut res = SelectionResult::new(q.id(), Method::Grads, k, rank_top_k(scored, k)?);
            res.push_param("layer", layer);
            Ok(res)
        }
        Ranker::Bm25 { params, field } => {
            let text = q.text().ok_or_else(|| {
                Error::InvalidArgument("bm25 needs query text (the \"text\" field)".into())
            })?;
            bm25_rank(q.id(), text, store, params, field, k)
        }
        Ranker::Cosine => cosine_rank(q, store, k),
        Ranker::Mmr(params) => mmr_rank(q, store, params, k),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lsa::LayerParams;
    use crate::sample::{normal_vec, random_layer, rng};

    fn random_store(r: &mut crate::sample::SeedRng, n: usize, e: usize) -> Store {
        let recs = (0..n)
            .map(|i| {
                DemoRecord::new(
                    format!("d{i:04}"),
                    format!("in {i}"),
                    format!("out {i}"),
                    normal_vec(r, e, 1.0),
                    normal_vec(r, e, 1.0),
                )
                .unwrap()
            })
            .collect();
        Store::new(e, recs).unwrap()
    }

    #[test]
    fn hand_example_scores_sqrt_two() {
        let demo = DemoRecord::new("a", "", "", vec![1.0], vec![1.0]).unwrap();
        let q = QueryEncoding::new("q", vec![1.0]).unwrap();
        let p = Projection::identity(1).unwrap();
        let s = grads_score(&demo, &q, &p).unwrap();
        assert!((s.score() - 2f64.sqrt()).abs() < 1e-15);
        let zero = DemoRecord::new("z", "", "", vec![0.0], vec![0.0]).unwrap();
        assert_eq!(grads_score(&zero, &q, &p).unwrap().score(), 0.0);
    }

    #[test]
    fn index_matches_direct_matvec() {
        let mut r = rng(1);
        let st = random_store(&mut r, 50, 8);
        let p = Projection::new(random_layer(&mut r, 8, 0.5));
        let idx = DemoIndex::build(&st, &p).unwrap();
        let a = p.layer().pv_y_block();
        for (e, rec) in idx.entries().iter().zip(st.records()) {
            let v = &a * rec.token().stacked();
            for (x, y) in e.v().iter().zip(v.iter()) {
                assert!((x - y).abs() <= 1e-12);
            }
            assert!((e.v_norm2() - v.norm_squared()).abs() <= 1e-12 * (1.0 + v.norm_squared()));
        }
        assert_eq!(DemoIndex::build(&st, &p).unwrap(), idx);
        assert!(DemoIndex::build(&Store::new(8, vec![]).unwrap(), &p).unwrap().is_empty());
    }

    #[test]
    fn fast_path_matches_naive() {
        let mut r = rng(2);
        for e in [1, 3, 16] {
            let st = random_store(&mut r, 200, e);
            let p = Projection::new(random_layer(&mut r, e, 1.0).with_rho(1.7).unwrap());
            let q = QueryEncoding::new("q", normal_vec(&mut r, e, 1.0)).unwrap();
            let idx = DemoIndex::build(&st, &p).unwrap();
            let fast = grads_score_batch(&idx, &q, &p).unwrap();
            for (f, rec) in fast.iter().zip(st.records()) {
                let naive = grads_score(rec, &q, &p).unwrap();
                assert_eq!(f.id(), naive.id());
                assert!((f.score() - naive.score()).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn zero_query_scores_zero() {
        let mut r = rng(3);
        let st = random_store(&mut r, 10, 4);
        let p = Projection::new(random_layer(&mut r, 4, 1.0));
        let q = QueryEncoding::new("q", vec![0.0; 4]).unwrap();
        let idx = DemoIndex::build(&st, &p).unwrap();
        assert!(grads_score_batch(&idx, &q, &p).unwrap().iter().all(|s| s.score() == 0.0));
    }

    #[test]
    fn stale_index_rejected() {
        let mut r = rng(4);
        let st = random_store(&mut r, 5, 2);
        let p = Projection::new(random_layer(&mut r, 2, 1.0));
        let other = Projection::new(LayerParams::identity(2).unwrap());
        let idx = DemoIndex::build(&st, &p).unwrap();
        let q = QueryEncoding::new("q", vec![1.0, 1.0]).unwrap();
        assert!(matches!(
            grads_score_batch(&idx, &q, &other),
            Err(Error::StaleIndex(_))
        ));
    }

    #[test]
    fn index_text_round_trip() {
        let mut r = rng(5);
        let st = random_store(&mut r, 7, 3);
        let p = Projection::new(random_layer(&mut r, 3, 1.0));
        let idx = DemoIndex::build(&st, &p).unwrap();
        assert_eq!(DemoIndex::parse(&idx.to_jsonl()).unwrap(), idx);
        let broken = idx.to_jsonl().replacen("\"v_norm2\":", "\"w_norm2\":", 1);
        assert!(matches!(DemoIndex::parse(&broken), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn select_matches_full_sort_of_naive_scores() {
        let mut r = rng(6);
        let st = random_store(&mut r, 20, 5);
        let p = Projection::new(random_layer(&mut r, 5, 1.0));
        let q = QueryEncoding::new("q", normal_vec(&mut r, 5, 1.0)).unwrap();
        let res = select(&st, &q, DEFAULT_K, Ranker::Grads(&p)).unwrap();
        let mut naive: Vec<ScoredDemo> =
            st.records().iter().map(|d| grads_score(d, &q, &p).unwrap()).collect();
        naive.sort_by(ranking_order);
        let want: Vec<&str> = naive.iter().take(3).map(|s| s.id()).collect();
        let got: Vec<&str> = res.selected().iter().map(|s| s.id()).collect();
        assert_eq!(got, want);
        assert_eq!(res.status(), SelectionStatus::Ok);
    }

    #[test]
    fn ties_and_edge_pools() {
        let p = Projection::identity(1).unwrap();
        let mk = |id: &str| DemoRecord::new(id, "", "", vec![1.0], vec![1.0]).unwrap();
        let st = Store::new(1, vec![mk("b"), mk("a")]).unwrap();
        let q = QueryEncoding::new("q", vec![1.0]).unwrap();
        let res = select(&st, &q, 1, Ranker::Grads(&p)).unwrap();
        assert_eq!(res.selected()[0].id(), "a");

        let empty = Store::new(1, vec![]).unwrap();
        for ranker in [Ranker::Grads(&p), Ranker::Cosine, Ranker::Mmr(MmrParams::default())] {
            let res = select(&empty, &q, 3, ranker).unwrap();
            assert_eq!(res.status(), SelectionStatus::EmptyPool);
        }
        let single = Store::new(1, vec![mk("only")]).unwrap();
        for ranker in [Ranker::Grads(&p), Ranker::Cosine, Ranker::Mmr(MmrParams::default())] {
            let res = select(&single, &q, 3, ranker).unwrap();
            assert_eq!(res.selected().len(), 1);
        }
        assert!(select(&st, &q, 0, Ranker::Cosine).is_err());
        assert!(select(
            &st,
            &q,
            1,
            Ranker::Bm25 {
                params: Bm25Params::default(),
                field: MatchField::Input
            }
        )
        .is_err());
    }

    #[test]
    fn selection_json_shape() {
        let res = SelectionResult::new(
            "q1",
            Method::Grads,
            3,
            vec![ScoredDemo::new("a", 1.5).unwrap(), ScoredDemo::new("b", 0.25).unwrap()],
        );
        let json = res.to_json();
        assert_eq!(
            json,
            r#"{"query_id":"q1","method":"grads","k":3,"selected":[{"id":"a","score":1.5},{"id":"b","score":0.25}]}"#
        );
        assert_eq!(SelectionResult::parse(&json).unwrap(), res);
        assert!(SelectionResult::parse(&json.replace("grads", "lsa")).is_err());
    }

    #[test]
    fn single_layer_network_matches_projection() {
        let mut r = rng(7);
        let st = random_store(&mut r, 15, 3);
        let layer = random_layer(&mut r, 3, 0.5);
        let net = LsaNetwork::new(vec![layer.clone(), random_layer(&mut r, 3, 0.5)]).unwrap();
        let p = Projection::new(layer);
        let q = QueryEncoding::new("q", normal_vec(&mut r, 3, 1.0)).unwrap();
        let via_net = select(&st, &q, 5, Ranker::GradsLayer { net: &net, layer: 1 }).unwrap();
        let via_proj = select(&st, &q, 5, Ranker::Grads(&p)).unwrap();
        for (a, b) in via_net.selected().iter().zip(via_proj.selected()) {
            assert_eq!(a.id(), b.id());
            assert!((a.score() - b.score()).abs() <= 1e-10);
        }
        assert!(select(&st, &q, 5, Ranker::GradsLayer { net: &net, layer: 3 }).is_err());
    }

    #[test]
    fn query_parse() {
        let q = QueryEncoding::parse(r#"{"id":"q","x":[1.0,2.0],"text":"hi"}"#).unwrap();
        assert_eq!(q.text(), Some("hi"));
        assert_eq!(QueryEncoding::parse(&q.to_json()).unwrap(), q);
        assert!(QueryEncoding::parse(r#"{"id":"q","x":[]}"#).is_err());
        assert!(QueryEncoding::parse(r#"{"id":"q","x":[1.0],"y":[0.0]}"#).is_err());
    }
}
