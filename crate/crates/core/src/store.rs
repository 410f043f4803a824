//! Demonstration pools and the matrix files used at scoring time.
//!
//! Store files are JSON Lines: a meta record
//! `{"format":"grads-store","version":1,"dim":E}` followed by one record per
//! demonstration. Projection and network files are single JSON documents with
//! row-major matrices. Numbers are written in shortest round-trip form, so
//! `parse(serialize(s)) == s` bit for bit.

use std::collections::HashSet;
use std::io::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::lsa::{EmbedVec, LayerParams, LsaNetwork, Token};

pub const STORE_FORMAT: &str = "grads-store";
pub const STORE_VERSION: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StoreMeta {
    pub version: u64,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoRecord {
    id: String,
    text_input: String,
    text_output: String,
    x: EmbedVec,
    y: EmbedVec,
}

impl DemoRecord {
    pub fn new(
        id: impl Into<String>,
        text_input: impl Into<String>,
        text_output: impl Into<String>,
        x: Vec<f64>,
        y: Vec<f64>,
    ) -> Result<Self> {
        let id = id.into();
        if id.is_empty() {
            return Err(Error::InvalidArgument("demonstration id must be nonempty".into()));
        }
        let x = EmbedVec::new(x).map_err(|e| record_err(&id, "x", e))?;
        let y = EmbedVec::new(y).map_err(|e| record_err(&id, "y", e))?;
        if x.len() != y.len() {
            return Err(Error::dim(format!("record {id:?} y"), x.len(), y.len()));
        }
        Ok(DemoRecord {
            id,
            text_input: text_input.into(),
            text_output: text_output.into(),
            x,
            y,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn text_input(&self) -> &str {
        &self.text_input
    }

    pub fn text_output(&self) -> &str {
        &self.text_output
    }

    pub fn x(&self) -> &EmbedVec {
        &self.x
    }

    pub fn y(&self) -> &EmbedVec {
        &self.y
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn token(&self) -> Token {
        Token::new(self.x.clone(), self.y.clone()).expect("validated at construction")
    }
}

fn record_err(id: &str, field: &str, e: Error) -> Error {
    match e {
        Error::ZeroDimension => Error::InvalidArgument(format!("record {id:?}: {field} is empty")),
        Error::NonFinite(_) => Error::NonFinite(format!("record {id:?} field {field}")),
        other => other,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Store {
    meta: StoreMeta,
    records: Vec<DemoRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetaLine {
    format: String,
    version: u64,
    dim: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    id: String,
    text_input: String,
    text_output: String,
    x: Vec<f64>,
    y: Vec<f64>,
}

impl Store {
    /// Validates dimension homogeneity and id uniqueness.
    pub fn new(dim: usize, records: Vec<DemoRecord>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::ZeroDimension);
        }
        let mut seen = HashSet::new();
        for r in &records {
            if r.dim() != dim {
                return Err(Error::dim(format!("record {:?}", r.id), dim, r.dim()));
            }
            if !seen.insert(r.id.as_str()) {
                return Err(Error::DuplicateId(r.id.clone()));
            }
        }
        Ok(Store {
            meta: StoreMeta {
                version: STORE_VERSION,
                dim,
            },
            records,
        })
    }

    pub fn meta(&self) -> StoreMeta {
        self.meta
    }

    pub fn dim(&self) -> usize {
        self.meta.dim
    }

    pub fn records(&self) -> &[DemoRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&DemoRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Parses store text. Every error carries the 1-based line number.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.split('\n').enumerate().map(|(i, l)| (i + 1, l));
        let (_, first) = lines.next().expect("split yields at least one item");
        if first.trim().is_empty() {
            return Err(Error::parse(1, "missing meta record"));
        }
        let meta: MetaLine =
            serde_json::from_str(first).map_err(|e| Error::parse(1, format!("meta record: {e}")))?;
        if meta.format != STORE_FORMAT {
            return Err(Error::parse(1, format!("unknown format tag {:?}", meta.format)));
        }
        if meta.version != STORE_VERSION {
            return Err(Error::parse(1, format!("unknown version {}", meta.version)));
        }
        if meta.dim == 0 {
            return Err(Error::parse(1, "dim must be at least 1"));
        }
        let dim = meta.dim;

        let mut records = Vec::new();
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
            let raw: RecordLine = serde_json::from_str(line)
                .map_err(|e| Error::parse(no, format!("malformed record: {e}")))?;
            if raw.id.is_empty() {
                return Err(Error::parse(no, "missing id"));
            }
            for (field, v) in [("x", &raw.x), ("y", &raw.y)] {
                if v.len() != dim {
                    return Err(Error::parse(
                        no,
                        format!(
                            "record {:?}: {field} has length {}, expected dim {dim}",
                            raw.id,
                            v.len()
                        ),
                    ));
                }
            }
            if !seen.insert(raw.id.clone()) {
                return Err(Error::parse(no, format!("duplicate id {:?}", raw.id)));
            }
            let rec = DemoRecord::new(raw.id, raw.text_input, raw.text_output, raw.x, raw.y)
                .map_err(|e| Error::parse(no, e.to_string()))?;
            records.push(rec);
        }
        Ok(Store::new(dim, records).expect("checked line by line"))
    }

    /// Canonical JSON Lines text, LF-terminated.
    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&MetaLine {
            format: STORE_FORMAT.to_string(),
            version: self.meta.version,
            dim: self.meta.dim,
        })
        .expect("serializable");
        out.push('\n');
        for r in &self.records {
            let line = RecordLine {
                id: r.id.clone(),
                text_input: r.text_input.clone(),
                text_output: r.text_output.clone(),
                x: r.x.as_slice().to_vec(),
                y: r.y.as_slice().to_vec(),
            };
            out.push_str(&serde_json::to_string(&line).expect("finite values"));
            out.push('\n');
        }
        out
    }
}

pub fn load_store(path: &Path) -> Result<Store> {
    Store::parse(&read_text(path)?)
}

pub fn save_store(store: &Store, path: &Path) -> Result<()> {
    write_atomic(path, store.to_jsonl().as_bytes())
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Write-temp-then-rename in the destination directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.flush().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn rows_to_matrix(rows: &[Vec<f64>], n: usize, name: &str) -> Result<DMatrix<f64>> {
    if rows.len() != n {
        return Err(Error::dim(format!("{name} rows"), n, rows.len()));
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != n {
            return Err(Error::dim(format!("{name} row {i}"), n, row.len()));
        }
    }
    let m = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(name.to_string()));
    }
    Ok(m)
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

fn json_err(e: serde_json::Error) -> Error {
    Error::parse(e.line(), e.to_string())
}

/// The `(W_pv, W_kq, rho)` triple used to score demonstrations.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    layer: LayerParams,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProjectionDoc {
    dim: usize,
    rho: f64,
    w_pv: Vec<Vec<f64>>,
    w_kq: Vec<Vec<f64>>,
}

impl Projection {
    pub fn new(layer: LayerParams) -> Self {
        Projection { layer }
    }

    /// `W_pv = W_kq = I_{2e}`, `rho = 1`.
    pub fn identity(e: usize) -> Result<Self> {
        Ok(Projection {
            layer: LayerParams::identity(e)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.layer.dim()
    }

    pub fn layer(&self) -> &LayerParams {
        &self.layer
    }

    pub fn into_layer(self) -> LayerParams {
        self.layer
    }

    pub fn parse(text: &str) -> Result<Self> {
        let doc: ProjectionDoc = serde_json::from_str(text).map_err(json_err)?;
        Ok(Projection {
            layer: layer_from_doc(doc.dim, doc.rho, &doc.w_pv, &doc.w_kq)?,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&ProjectionDoc {
            dim: self.dim(),
            rho: self.layer.rho(),
            w_pv: matrix_to_rows(self.layer.w_pv()),
            w_kq: matrix_to_rows(self.layer.w_kq()),
        })
        .expect("finite values")
    }

    /// SHA-256 of the canonical serialization, hex encoded.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }
}

fn layer_from_doc(
    dim: usize,
    rho: f64,
    w_pv: &[Vec<f64>],
    w_kq: &[Vec<f64>],
) -> Result<LayerParams> {
    if dim == 0 {
        return Err(Error::ZeroDimension);
    }
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::InvalidRho(rho));
    }
    let n = 2 * dim;
    let pv = rows_to_matrix(w_pv, n, "w_pv")?;
    let kq = rows_to_matrix(w_kq, n, "w_kq")?;
    LayerParams::new(pv, kq, rho)
}

pub fn load_projection(path: &Path) -> Result<Projection> {
    Projection::parse(&read_text(path)?)
}

pub fn save_projection(p: &Projection, path: &Path) -> Result<()> {
    write_atomic(path, p.to_json().as_bytes())
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkDoc {
    dim: usize,
    layers: Vec<NetworkLayerDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkLayerDoc {
    rho: f64,
    w_pv: Vec<Vec<f64>>,
    w_kq: Vec<Vec<f64>>,
}

/// Parses `{"dim":E,"layers":[{"rho":..,"w_pv":..,"w_kq":..},..]}`.
pub fn parse_network(text: &str) -> Result<LsaNetwork> {
    let doc: NetworkDoc = serde_json::from_str(text).map_err(json_err)?;
    let layers = doc
        .layers
        .iter()
        .map(|l| layer_from_doc(doc.dim, l.rho, &l.w_pv, &l.w_kq))
        .collect::<Result<Vec<_>>>()?;
    LsaNetwork::new(layers)
}

pub fn network_to_json(net: &LsaNetwork) -> String {
    serde_json::to_string(&NetworkDoc {
        dim: net.dim(),
        layers: net
            .layers()
            .iter()
            .map(|l| NetworkLayerDoc {
                rho: l.rho(),
                w_pv: matrix_to_rows(l.w_pv()),
                w_kq: matrix_to_rows(l.w_kq()),
            })
            .collect(),
    })
    .expect("finite values")
}

pub fn load_network(path: &Path) -> Result<LsaNetwork> {
    parse_network(&read_text(path)?)
}
