//! Linear self-attention (LSA) model: token layout, parameters, exact forward
//! pass, closed-form and forward-mode gradients, and a finite-difference oracle.
//!
//! Tokens are stacked columns `(x; y)` in `R^{2e}`. A prompt is the matrix
//! `E = (d_1 .. d_N q)` whose last column is the query, and one layer maps
//! `E -> E + W_pv E (E^T W_kq E) / rho`.

mod fd;
pub(crate) mod forward;
mod grad;

pub use fd::{default_fd_step, grad_fd_oracle};
pub use forward::{lsa_forward, network_forward, predict};
pub use grad::{
    full_layer_jacobian, grad_multi_layer, grad_single_blockform, grad_single_closed,
    grad_single_transposed, layer_jacobian_apply,
};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A finite embedding vector of dimension `e >= 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbedVec(Vec<f64>);

impl EmbedVec {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::ZeroDimension);
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedding vector".into()));
        }
        Ok(EmbedVec(entries))
    }

    pub fn zeros(e: usize) -> Result<Self> {
        Self::new(vec![0.0; e])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|v| *v == 0.0)
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// One column of the prompt: an input part `x` and an output part `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    x: EmbedVec,
    y: EmbedVec,
}

impl Token {
    pub fn new(x: EmbedVec, y: EmbedVec) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::dim("token y-part", x.len(), y.len()));
        }
        Ok(Token { x, y })
    }

    pub fn from_parts(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        Self::new(EmbedVec::new(x)?, EmbedVec::new(y)?)
    }

    /// A query token: `y` is zero because the answer is unknown.
    pub fn query(x: EmbedVec) -> Self {
        let y = EmbedVec(vec![0.0; x.len()]);
        Token { x, y }
    }

    pub fn from_stacked(v: &[f64]) -> Result<Self> {
        if v.is_empty() || !v.len().is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "stacked token length {} is not a positive even number",
                v.len()
            )));
        }
        let e = v.len() / 2;
        Self::from_parts(v[..e].to_vec(), v[e..].to_vec())
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn x(&self) -> &EmbedVec {
        &self.x
    }

    pub fn y(&self) -> &EmbedVec {
        &self.y
    }

    pub fn is_query(&self) -> bool {
        self.y.is_zero()
    }

    /// Column vector `(x; y)` of length `2e`.
    pub fn stacked(&self) -> DVector<f64> {
        DVector::from_iterator(
            2 * self.dim(),
            self.x.0.iter().chain(self.y.0.iter()).copied(),
        )
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::from_parts(
            self.x.0.iter().map(|v| v * c).collect(),
            self.y.0.iter().map(|v| v * c).collect(),
        )
    }
}

/// The `2e x (N+1)` prompt matrix; the last column is the query.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenMatrix {
    m: DMatrix<f64>,
    dim: usize,
}

impl TokenMatrix {
    /// Builds an input prompt. The query must have a zero y-part.
    pub fn new(demos: &[Token], query: &Token) -> Result<Self> {
        let e = query.dim();
        if !query.is_query() {
            return Err(Error::NonzeroQueryY);
        }
        for d in demos {
            if d.dim() != e {
                return Err(Error::dim("demonstration token", e, d.dim()));
            }
        }
        let mut m = DMatrix::zeros(2 * e, demos.len() + 1);
        for (j, d) in demos.iter().enumerate() {
            m.set_column(j, &d.stacked());
        }
        m.set_column(demos.len(), &query.stacked());
        Ok(TokenMatrix { m, dim: e })
    }

    pub fn one_shot(demo: &Token, query: &Token) -> Result<Self> {
        Self::new(std::slice::from_ref(demo), query)
    }

    /// Wraps an arbitrary `2e x (N+1)` matrix, e.g. an intermediate layer state.
    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() == 0 || !m.nrows().is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "token matrix needs a positive even row count, got {}",
                m.nrows()
            )));
        }
        if m.ncols() == 0 {
            return Err(Error::InvalidArgument(
                "token matrix needs a query column".into(),
            ));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("token matrix".into()));
        }
        let dim = m.nrows() / 2;
        Ok(TokenMatrix { m, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_demos(&self) -> usize {
        self.m.ncols() - 1
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.m
    }

    pub fn column_token(&self, j: usize) -> Result<Token> {
        if j >= self.m.ncols() {
            return Err(Error::InvalidArgument(format!("column {j} out of range")));
        }
        Token::from_stacked(self.m.column(j).as_slice())
    }

    pub fn demo(&self, i: usize) -> Result<Token> {
        if i >= self.n_demos() {
            return Err(Error::InvalidArgument(format!("demonstration {i} out of range")));
        }
        self.column_token(i)
    }

    pub fn query(&self) -> Token {
        let col = self.m.column(self.m.ncols() - 1);
        Token::from_stacked(col.as_slice()).expect("validated at construction")
    }

    pub fn query_y_is_zero(&self) -> bool {
        let q = self.m.ncols() - 1;
        (self.dim..2 * self.dim).all(|r| self.m[(r, q)] == 0.0)
    }
}

/// Parameters `(W_pv, W_kq, rho)` of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    w_pv: DMatrix<f64>,
    w_kq: DMatrix<f64>,
    rho: f64,
}

impl LayerParams {
    pub fn new(w_pv: DMatrix<f64>, w_kq: DMatrix<f64>, rho: f64) -> Result<Self> {
        let n = w_pv.nrows();
        if n == 0 || !n.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "w_pv must be 2e x 2e with e >= 1, got {}x{}",
                w_pv.nrows(),
                w_pv.ncols()
            )));
        }
        if w_pv.ncols() != n {
            return Err(Error::dim("w_pv columns", n, w_pv.ncols()));
        }
        if w_kq.nrows() != n {
            return Err(Error::dim("w_kq rows", n, w_kq.nrows()));
        }
        if w_kq.ncols() != n {
            return Err(Error::dim("w_kq columns", n, w_kq.ncols()));
        }
        if w_pv.iter().chain(w_kq.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("layer parameters".into()));
        }
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::InvalidRho(rho));
        }
        Ok(LayerParams { w_pv, w_kq, rho })
    }

    pub fn identity(e: usize) -> Result<Self> {
        Self::scaled_identity(e, 1.0, 1.0)
    }

    /// `W_pv = alpha I`, `W_kq = beta I`, `rho = 1`.
    pub fn scaled_identity(e: usize, alpha: f64, beta: f64) -> Result<Self> {
        if e == 0 {
            return Err(Error::ZeroDimension);
        }
        let i = DMatrix::<f64>::identity(2 * e, 2 * e);
        Self::new(&i * alpha, &i * beta, 1.0)
    }

    pub fn with_rho(mut self, rho: f64) -> Result<Self> {
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::InvalidRho(rho));
        }
        self.rho = rho;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.w_pv.nrows() / 2
    }

    pub fn w_pv(&self) -> &DMatrix<f64> {
        &self.w_pv
    }

    pub fn w_kq(&self) -> &DMatrix<f64> {
        &self.w_kq
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// The y-row-block of `W_pv` (`e x 2e`).
    pub fn pv_y_block(&self) -> DMatrix<f64> {
        let e = self.dim();
        self.w_pv.rows(e, e).into_owned()
    }

    pub(crate) fn check_dim(&self, e: usize, context: &str) -> Result<()> {
        if self.dim() != e {
            return Err(Error::dim(context, self.dim(), e));
        }
        Ok(())
    }
}

/// An ordered stack of layers sharing one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct LsaNetwork {
    layers: Vec<LayerParams>,
}

impl LsaNetwork {
    pub fn new(layers: Vec<LayerParams>) -> Result<Self> {
        let first = layers.first().ok_or(Error::EmptyNetwork)?;
        let e = first.dim();
        for layer in &layers {
            layer.check_dim(e, "network layer")?;
        }
        Ok(LsaNetwork { layers })
    }

    pub fn dim(&self) -> usize {
        self.layers[0].dim()
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub fn last_layer(&self) -> &LayerParams {
        self.layers.last().expect("non-empty by construction")
    }

    pub(crate) fn check_layer_index(&self, l: usize) -> Result<()> {
        if l == 0 || l > self.layers.len() {
            return Err(Error::LayerOutOfRange {
                index: l,
                layers: self.layers.len(),
            });
        }
        Ok(())
    }
}

/// Jacobian of the predicted answer w.r.t. a stacked demonstration, and its
/// Frobenius norm.
#[derive(Debug, Clone, PartialEq)]
pub struct GradFlow {
    jac: DMatrix<f64>,
    norm: f64,
}

impl GradFlow {
    pub fn from_jacobian(jac: DMatrix<f64>) -> Result<Self> {
        let norm = frobenius(&jac)?;
        Ok(GradFlow { jac, norm })
    }

    /// `e x 2e`: rows are answer coordinates, columns stacked demo coordinates.
    pub fn jacobian(&self) -> &DMatrix<f64> {
        &self.jac
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }
}

/// Square root of the sum of squared entries.
pub fn frobenius(m: &DMatrix<f64>) -> Result<f64> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matrix".into()));
    }
    Ok(m.iter().map(|v| v * v).sum::<f64>().sqrt())
}
