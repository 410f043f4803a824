//! Reference rankers: Okapi BM25 over demo text, cosine similarity and
//! maximal marginal relevance over the x embeddings.

use std::collections::{HashMap, HashSet};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::selector::{rank_top_k, Method, QueryEncoding, ScoredDemo, SelectionResult};
use crate::store::{DemoRecord, Store};

/// Lowercased alphanumeric runs. Underscore separates.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bm25Params {
    k1: f64,
    b: f64,
}

impl Bm25Params {
    pub fn new(k1: f64, b: f64) -> Result<Self> {
        if !(k1 > 0.0 && k1.is_finite()) {
            return Err(Error::InvalidArgument(format!("k1 must be positive, got {k1}")));
        }
        if !(0.0..=1.0).contains(&b) {
            return Err(Error::InvalidArgument(format!("b must lie in [0, 1], got {b}")));
        }
        Ok(Bm25Params { k1, b })
    }

    pub fn k1(&self) -> f64 {
        self.k1
    }

    pub fn b(&self) -> f64 {
        self.b
    }
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.5, b: 0.75 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MmrParams {
    lambda: f64,
}

impl MmrParams {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::InvalidArgument(format!(
                "lambda must lie in [0, 1], got {lambda}"
            )));
        }
        Ok(MmrParams { lambda })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

impl Default for MmrParams {
    fn default() -> Self {
        MmrParams { lambda: 0.5 }
    }
}

/// Which demo text BM25 matches against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MatchField {
    #[default]
    Input,
    InputOutput,
}

impl MatchField {
    pub fn as_str(self) -> &'static str {
        match self {
            MatchField::Input => "input",
            MatchField::InputOutput => "input_output",
        }
    }

    pub fn text(self, r: &DemoRecord) -> String {
        match self {
            MatchField::Input => r.text_input().to_string(),
            MatchField::InputOutput => format!("{}\n{}", r.text_input(), r.text_output()),
        }
    }
}

impl FromStr for MatchField {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "input" => Ok(MatchField::Input),
            "input_output" => Ok(MatchField::InputOutput),
            other => Err(Error::InvalidArgument(format!(
                "unknown match field {other:?} (expected input or input_output)"
            ))),
        }
    }
}

/// BM25 score of every document against the query, in document order.
/// Each distinct query term contributes once.
pub fn bm25_scores<S: AsRef<str>>(query: &str, docs: &[S], params: Bm25Params) -> Vec<f64> {
    let n = docs.len();
    if n == 0 {
        return Vec::new();
    }
    let tokenized: Vec<Vec<String>> = docs.iter().map(|d| tokenize(d.as_ref())).collect();
    let avglen = tokenized.iter().map(Vec::len).sum::<usize>() as f64 / n as f64;
    let mut df: HashMap<&str, usize> = HashMap::new();
    for doc in &tokenized {
        let uniq: HashSet<&str> = doc.iter().map(String::as_str).collect();
        for t in uniq {
            *df.entry(t).or_default() += 1;
        }
    }
    let mut terms = tokenize(query);
    terms.sort();
    terms.dedup();

    tokenized
        .iter()
        .map(|doc| {
            let len = doc.len() as f64;
            let norm = if avglen > 0.0 { len / avglen } else { 0.0 };
            let mut tf: HashMap<&str, usize> = HashMap::new();
            for t in doc {
                *tf.entry(t.as_str()).or_default() += 1;
            }
            terms
                .iter()
                .map(|t| {
                    let f = *tf.get(t.as_str()).unwrap_or(&0) as f64;
                    if f == 0.0 {
                        return 0.0;
                    }
                    let d = *df.get(t.as_str()).unwrap_or(&0) as f64;
                    let idf = ((n as f64 - d + 0.5) / (d + 0.5) + 1.0).ln();
                    idf * f * (params.k1 + 1.0)
                        / (f + params.k1 * (1.0 - params.b + params.b * norm))
                })
                .sum()
        })
        .collect()
}

pub fn bm25_rank(
    query_id: &str,
    query_text: &str,
    store: &Store,
    params: Bm25Params,
    field: MatchField,
    k: usize,
) -> Result<SelectionResult> {
    let docs: Vec<String> = store.records().iter().map(|r| field.text(r)).collect();
    let scores = bm25_scores(query_text, &docs, params);
    let scored = store
        .records()
        .iter()
        .zip(scores)
        .map(|(r, s)| ScoredDemo::new(r.id(), s))
        .collect::<Result<Vec<_>>>()?;
    let mut res = SelectionResult::new(query_id, Method::Bm25, k, rank_top_k(scored, k)?);
    res.push_param("k1", params.k1);
    res.push_param("b", params.b);
    res.push_param("match_field", field.as_str());
    Ok(res)
}

/// Cosine similarity; 0 when either side is the zero vector.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na2 = a.iter().map(|v| v * v).sum::<f64>();
    let nb2 = b.iter().map(|v| v * v).sum::<f64>();
    if na2 == 0.0 || nb2 == 0.0 {
        return 0.0;
    }
    let prod = na2 * nb2;
    let denom = if prod.is_finite() && prod > 0.0 {
        prod.sqrt()
    } else {
        na2.sqrt() * nb2.sqrt()
    };
    let c = a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / denom;
    c.clamp(-1.0, 1.0)
}

fn check_query_dim(q: &QueryEncoding, store: &Store) -> Result<()> {
    if q.dim() != store.dim() {
        return Err(Error::dim("query x", store.dim(), q.dim()));
    }
    Ok(())
}

pub fn cosine_rank(q: &QueryEncoding, store: &Store, k: usize) -> Result<SelectionResult> {
    check_query_dim(q, store)?;
    let qx = q.x().as_slice();
    let scored = store
        .records()
        .iter()
        .map(|r| ScoredDemo::new(r.id(), cosine(r.x().as_slice(), qx)))
        .collect::<Result<Vec<_>>>()?;
    Ok(SelectionResult::new(
        q.id(),
        Method::Cosine,
        k,
        rank_top_k(scored, k)?,
    ))
}

/// Greedy MMR. The first pick is the most relevant demo; later picks
/// maximize `lambda * rel - (1 - lambda) * max_sim_to_selected`.
pub fn mmr_rank(
    q: &QueryEncoding,
    store: &Store,
    params: MmrParams,
    k: usize,
) -> Result<SelectionResult> {
    check_query_dim(q, store)?;
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let recs = store.records();
    let lambda = params.lambda;
    let rel: Vec<f64> = recs
        .iter()
        .map(|r| cosine(r.x().as_slice(), q.x().as_slice()))
        .collect();
    let mut max_sim = vec![f64::NEG_INFINITY; recs.len()];
    let mut taken = vec![false; recs.len()];
    let mut picked = Vec::new();

    while picked.len() < k.min(recs.len()) {
        let first = picked.is_empty();
        let mut best: Option<(usize, f64, f64)> = None;
        for i in (0..recs.len()).filter(|&i| !taken[i]) {
            // The first pick is ranked by raw relevance so lambda = 0 still
            // starts from the closest demo.
            let key = if first {
                rel[i]
            } else {
                lambda * rel[i] - (1.0 - lambda) * max_sim[i]
            };
            let better = match best {
                None => true,
                Some((j, bk, _)) => key > bk || (key == bk && recs[i].id() < recs[j].id()),
            };
            if better {
                let reported = if first { lambda * rel[i] } else { key };
                best = Some((i, key, reported));
            }
        }
        let (i, _, reported) = best.expect("remaining candidates");
        taken[i] = true;
        picked.push(ScoredDemo::new(recs[i].id(), reported)?);
        let xi = recs[i].x().as_slice();
        for j in 0..recs.len() {
            if !taken[j] {
                max_sim[j] = max_sim[j].max(cosine(recs[j].x().as_slice(), xi));
            }
        }
    }
    let mut res = SelectionResult::new(q.id(), Method::Mmr, k, picked);
    res.push_param("lambda", lambda);
    Ok(res)
}
