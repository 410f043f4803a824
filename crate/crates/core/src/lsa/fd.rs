use nalgebra::DMatrix;

use super::{predict, GradFlow, LsaNetwork, Token, TokenMatrix};
use crate::error::{Error, Result};

/// `1e-5 * max(1, ||d||_inf)`.
pub fn default_fd_step(d: &Token) -> f64 {
    let inf = d
        .x()
        .as_slice()
        .iter()
        .chain(d.y().as_slice())
        .fold(0.0_f64, |m, v| m.max(v.abs()));
    1e-5 * inf.max(1.0)
}

/// Central-difference Jacobian of `predict(., net, l)` w.r.t. the single
/// demonstration column. Ground truth for the analytic gradients.
pub fn grad_fd_oracle(e: &TokenMatrix, net: &LsaNetwork, l: usize, h: f64) -> Result<GradFlow> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidStep(h));
    }
    if e.n_demos() != 1 {
        return Err(Error::NotOneShot(e.n_demos()));
    }
    let dim = e.dim();
    let mut jac = DMatrix::zeros(dim, 2 * dim);
    for k in 0..2 * dim {
        let mut plus = e.matrix().clone();
        plus[(k, 0)] += h;
        let mut minus = e.matrix().clone();
        minus[(k, 0)] -= h;
        let p = predict(&TokenMatrix::from_matrix(plus)?, net, l)?;
        let m = predict(&TokenMatrix::from_matrix(minus)?, net, l)?;
        for i in 0..dim {
            jac[(i, k)] = (p.as_slice()[i] - m.as_slice()[i]) / (2.0 * h);
        }
    }
    GradFlow::from_jacobian(jac)
}
