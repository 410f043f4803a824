use nalgebra::DMatrix;

use super::{EmbedVec, LayerParams, LsaNetwork, TokenMatrix};
use crate::error::{Error, Result};

pub(crate) fn forward_raw(e: &DMatrix<f64>, layer: &LayerParams) -> DMatrix<f64> {
    let scores = e.transpose() * layer.w_kq() * e;
    let update = layer.w_pv() * e * scores;
    e + update / layer.rho()
}

/// One LSA layer: `E + W_pv E (E^T W_kq E) / rho`.
pub fn lsa_forward(e: &TokenMatrix, layer: &LayerParams) -> Result<TokenMatrix> {
    layer.check_dim(e.dim(), "lsa_forward")?;
    TokenMatrix::from_matrix(forward_raw(e.matrix(), layer))
}

/// `E^(l)`: the first `l` layers applied in order.
pub fn network_forward(e: &TokenMatrix, net: &LsaNetwork, l: usize) -> Result<TokenMatrix> {
    net.check_layer_index(l)?;
    net.layers()[0].check_dim(e.dim(), "network_forward")?;
    let mut cur = e.matrix().clone();
    for layer in &net.layers()[..l] {
        cur = forward_raw(&cur, layer);
    }
    TokenMatrix::from_matrix(cur)
}

/// Predicted answer after `l` layers: the y-block of the last column.
pub fn predict(e: &TokenMatrix, net: &LsaNetwork, l: usize) -> Result<EmbedVec> {
    if !e.query_y_is_zero() {
        return Err(Error::NonzeroQueryY);
    }
    let out = network_forward(e, net, l)?;
    let dim = out.dim();
    let q = out.matrix().column(out.matrix().ncols() - 1);
    EmbedVec::new(q.rows(dim, dim).iter().copied().collect())
}
