use nalgebra::{DMatrix, DVector};

use super::forward::forward_raw;
use super::{GradFlow, LayerParams, LsaNetwork, Token, TokenMatrix};
use crate::error::{Error, Result};

fn check_pair(d: &Token, q: &Token, layer: &LayerParams) -> Result<()> {
    if d.dim() != q.dim() {
        return Err(Error::dim("demonstration vs query", q.dim(), d.dim()));
    }
    layer.check_dim(d.dim(), "layer vs tokens")?;
    if !q.is_query() {
        return Err(Error::NonzeroQueryY);
    }
    Ok(())
}

/// `J = [(A d) b^T + (d^T b) A] / rho` with `A` the y-row-block of `W_pv`.
fn closed_with_key(d: &DVector<f64>, key: &DVector<f64>, layer: &LayerParams) -> DMatrix<f64> {
    let a = layer.pv_y_block();
    let ad = &a * d;
    let s = d.dot(key);
    (ad * key.transpose() + a * s) / layer.rho()
}

/// Single-layer gradient flow of the predicted answer w.r.t. the stacked
/// demonstration, `(W_pv d)_y (W_kq q)^T + (d^T W_kq q) W_pv_y`.
pub fn grad_single_closed(d: &Token, q: &Token, layer: &LayerParams) -> Result<GradFlow> {
    check_pair(d, q, layer)?;
    let key = layer.w_kq() * q.stacked();
    GradFlow::from_jacobian(closed_with_key(&d.stacked(), &key, layer))
}

/// The same expression with `(q^T W_kq)^T = W_kq^T q` in place of `W_kq q`.
/// Differs from the true derivative whenever `W_kq` is asymmetric; kept as a
/// negative control for the checker.
pub fn grad_single_transposed(d: &Token, q: &Token, layer: &LayerParams) -> Result<GradFlow> {
    check_pair(d, q, layer)?;
    let key = layer.w_kq().transpose() * q.stacked();
    GradFlow::from_jacobian(closed_with_key(&d.stacked(), &key, layer))
}

/// Row-by-row evaluation through `grad_z (a^T z)(b^T z) = a (b^T z) + b (a^T z)`
/// with `a` a row of the y-block of `W_pv` and `b = W_kq (q_x; 0)`.
pub fn grad_single_blockform(d: &Token, q: &Token, layer: &LayerParams) -> Result<GradFlow> {
    check_pair(d, q, layer)?;
    let e = d.dim();
    let z = d.stacked();
    let b = layer.w_kq() * q.stacked();
    let b_dot_z = b.dot(&z);
    let mut jac = DMatrix::zeros(e, 2 * e);
    for i in 0..e {
        let a: DVector<f64> = layer.w_pv().row(e + i).transpose();
        let a_dot_z = a.dot(&z);
        let grad = a * b_dot_z + &b * a_dot_z;
        jac.set_row(i, &(grad.transpose() / layer.rho()));
    }
    GradFlow::from_jacobian(jac)
}

pub(crate) fn jacobian_apply_raw(
    e: &DMatrix<f64>,
    layer: &LayerParams,
    de: &DMatrix<f64>,
) -> DMatrix<f64> {
    let kq_e = layer.w_kq() * e;
    let scores = e.transpose() * &kq_e;
    let d_scores = e.transpose() * layer.w_kq() * de + de.transpose() * kq_e;
    let pv = layer.w_pv();
    let update = pv * de * scores + pv * e * d_scores;
    de + update / layer.rho()
}

/// Directional derivative of one layer at `E` in direction `dE`:
/// `dE + [W_pv dE E^T W_kq E + W_pv E (E^T W_kq dE + dE^T W_kq E)] / rho`.
pub fn layer_jacobian_apply(
    e: &TokenMatrix,
    layer: &LayerParams,
    de: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    layer.check_dim(e.dim(), "layer_jacobian_apply")?;
    if de.shape() != e.matrix().shape() {
        return Err(Error::InvalidArgument(format!(
            "perturbation shape {:?} differs from input shape {:?}",
            de.shape(),
            e.matrix().shape()
        )));
    }
    Ok(jacobian_apply_raw(e.matrix(), layer, de))
}

/// Materialized Jacobian of one layer over the column-major vectorization of
/// `E`, size `(2e(N+1))^2`. Debug aid; the gradient routines never build it.
pub fn full_layer_jacobian(e: &TokenMatrix, layer: &LayerParams) -> Result<DMatrix<f64>> {
    layer.check_dim(e.dim(), "full_layer_jacobian")?;
    let (rows, cols) = e.matrix().shape();
    let n = rows * cols;
    let mut jac = DMatrix::zeros(n, n);
    for k in 0..n {
        let mut de = DMatrix::zeros(rows, cols);
        de[(k % rows, k / rows)] = 1.0;
        let out = jacobian_apply_raw(e.matrix(), layer, &de);
        jac.set_column(k, &DVector::from_column_slice(out.as_slice()));
    }
    Ok(jac)
}

/// Gradient of the layer-`l` prediction w.r.t. the input demonstration,
/// composed across layers by forward-mode sweeps over the `2e` basis
/// directions of the demonstration column.
pub fn grad_multi_layer(e: &TokenMatrix, net: &LsaNetwork, l: usize) -> Result<GradFlow> {
    if e.n_demos() != 1 {
        return Err(Error::NotOneShot(e.n_demos()));
    }
    if !e.query_y_is_zero() {
        return Err(Error::NonzeroQueryY);
    }
    net.check_layer_index(l)?;
    net.layers()[0].check_dim(e.dim(), "grad_multi_layer")?;

    let dim = e.dim();
    let rows = 2 * dim;
    let mut state = e.matrix().clone();
    let mut tangents: Vec<DMatrix<f64>> = (0..rows)
        .map(|k| {
            let mut t = DMatrix::zeros(rows, 2);
            t[(k, 0)] = 1.0;
            t
        })
        .collect();

    for layer in &net.layers()[..l] {
        for t in tangents.iter_mut() {
            *t = jacobian_apply_raw(&state, layer, t);
        }
        state = forward_raw(&state, layer);
    }

    let mut jac = DMatrix::zeros(dim, rows);
    for (k, t) in tangents.iter().enumerate() {
        for i in 0..dim {
            jac[(i, k)] = t[(dim + i, 1)];
        }
    }
    GradFlow::from_jacobian(jac)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lsa::{grad_fd_oracle, lsa_forward, EmbedVec};
    use crate::sample::{random_layer, random_network, random_query, random_token, rng};

    fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    fn hand_case() -> (Token, Token, LayerParams) {
        (
            Token::from_parts(vec![1.0], vec![1.0]).unwrap(),
            Token::query(EmbedVec::new(vec![1.0]).unwrap()),
            LayerParams::identity(1).unwrap(),
        )
    }

    #[test]
    fn closed_form_hand_example() {
        let (d, q, layer) = hand_case();
        let g = grad_single_closed(&d, &q, &layer).unwrap();
        assert_eq!(g.jacobian().shape(), (1, 2));
        assert!((g.jacobian()[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((g.jacobian()[(0, 1)] - 1.0).abs() < 1e-15);
        assert!((g.norm() - 2f64.sqrt()).abs() < 1e-15);

        // frozen from central differences on predict, h = 1e-5
        let e = TokenMatrix::one_shot(&d, &q).unwrap();
        let net = LsaNetwork::new(vec![layer.clone()]).unwrap();
        let fd = grad_fd_oracle(&e, &net, 1, 1e-5).unwrap();
        assert!(max_abs_diff(fd.jacobian(), g.jacobian()) < 1e-9);
        let bf = grad_single_blockform(&d, &q, &layer).unwrap();
        assert!(max_abs_diff(bf.jacobian(), g.jacobian()) < 1e-15);
    }

    #[test]
    fn zero_value_matrix_or_query_gives_zero_flow() {
        let mut r = rng(1);
        let d = random_token(&mut r, 3, 1.0);
        let q = random_query(&mut r, 3, 1.0);
        let kq = random_layer(&mut r, 3, 1.0).w_kq().clone();
        let layer = LayerParams::new(DMatrix::zeros(6, 6), kq, 1.0).unwrap();
        assert_eq!(grad_single_closed(&d, &q, &layer).unwrap().norm(), 0.0);
        let layer = random_layer(&mut r, 3, 1.0);
        let zero_q = Token::query(EmbedVec::zeros(3).unwrap());
        assert_eq!(grad_single_closed(&d, &zero_q, &layer).unwrap().norm(), 0.0);
        let zero_d = Token::from_parts(vec![0.0; 3], vec![0.0; 3]).unwrap();
        assert_eq!(grad_single_blockform(&zero_d, &q, &layer).unwrap().norm(), 0.0);
    }

    #[test]
    fn closed_and_blockform_agree() {
        let mut r = rng(2);
        for _ in 0..200 {
            let layer = random_layer(&mut r, 4, 1.0).with_rho(1.3).unwrap();
            let d = random_token(&mut r, 4, 1.0);
            let q = random_query(&mut r, 4, 1.0);
            let a = grad_single_closed(&d, &q, &layer).unwrap();
            let b = grad_single_blockform(&d, &q, &layer).unwrap();
            assert!(max_abs_diff(a.jacobian(), b.jacobian()) <= 1e-12);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let (d, _, layer) = hand_case();
        let not_query = Token::from_parts(vec![1.0], vec![0.1]).unwrap();
        assert_eq!(
            grad_single_closed(&d, &not_query, &layer),
            Err(Error::NonzeroQueryY)
        );
        let q2 = Token::query(EmbedVec::zeros(2).unwrap());
        assert!(grad_single_closed(&d, &q2, &layer).unwrap_err().is_dimension());
    }

    #[test]
    fn transposed_variant_disagrees_on_asymmetric_keys() {
        let mut r = rng(4);
        let layer = random_layer(&mut r, 2, 1.0);
        let d = random_token(&mut r, 2, 1.0);
        let q = random_query(&mut r, 2, 1.0);
        let a = grad_single_closed(&d, &q, &layer).unwrap();
        let b = grad_single_transposed(&d, &q, &layer).unwrap();
        assert!(max_abs_diff(a.jacobian(), b.jacobian()) > 1e-3);
    }

    #[test]
    fn jacobian_apply_matches_forward_differences() {
        let mut r = rng(7);
        for _ in 0..20 {
            let e = crate::sample::random_token_matrix(&mut r, 3, 1, 1.0);
            let layer = random_layer(&mut r, 3, 0.5);
            let de = crate::sample::normal_matrix(&mut r, 6, 2, 1.0);
            let t = 1e-6;
            let plus = TokenMatrix::from_matrix(e.matrix() + &de * t).unwrap();
            let minus = TokenMatrix::from_matrix(e.matrix() - &de * t).unwrap();
            let fd = (lsa_forward(&plus, &layer).unwrap().into_matrix()
                - lsa_forward(&minus, &layer).unwrap().into_matrix())
                / (2.0 * t);
            let exact = layer_jacobian_apply(&e, &layer, &de).unwrap();
            assert!((&fd - &exact).norm() <= 1e-6 * exact.norm());
        }
    }

    #[test]
    fn jacobian_apply_trivial_cases() {
        let mut r = rng(8);
        let e = crate::sample::random_token_matrix(&mut r, 2, 2, 1.0);
        let layer = random_layer(&mut r, 2, 1.0);
        let zero = DMatrix::zeros(4, 3);
        assert_eq!(layer_jacobian_apply(&e, &layer, &zero).unwrap(), zero);
        let no_value = LayerParams::new(DMatrix::zeros(4, 4), layer.w_kq().clone(), 1.0).unwrap();
        let de = crate::sample::normal_matrix(&mut r, 4, 3, 1.0);
        assert_eq!(layer_jacobian_apply(&e, &no_value, &de).unwrap(), de);
        assert!(layer_jacobian_apply(&e, &layer, &DMatrix::zeros(4, 2)).is_err());
    }

    #[test]
    fn multi_layer_at_one_equals_closed_form() {
        let mut r = rng(9);
        for _ in 0..50 {
            let net = random_network(&mut r, 3, 2, 0.3);
            let d = random_token(&mut r, 3, 1.0);
            let q = random_query(&mut r, 3, 1.0);
            let e = TokenMatrix::one_shot(&d, &q).unwrap();
            let multi = grad_multi_layer(&e, &net, 1).unwrap();
            let closed = grad_single_closed(&d, &q, &net.layers()[0]).unwrap();
            assert!(max_abs_diff(multi.jacobian(), closed.jacobian()) <= 1e-12);
        }
    }

    #[test]
    fn multi_layer_zero_value_nets_have_zero_flow() {
        let mut r = rng(10);
        let layers = (0..3)
            .map(|_| {
                LayerParams::new(DMatrix::zeros(4, 4), random_layer(&mut r, 2, 1.0).w_kq().clone(), 1.0)
                    .unwrap()
            })
            .collect();
        let net = LsaNetwork::new(layers).unwrap();
        let e = crate::sample::random_token_matrix(&mut r, 2, 1, 1.0);
        for l in 1..=3 {
            assert_eq!(grad_multi_layer(&e, &net, l).unwrap().norm(), 0.0);
        }
    }

    #[test]
    fn multi_layer_matches_chain_of_full_jacobians() {
        let mut r = rng(12);
        let net = random_network(&mut r, 2, 3, 0.3);
        let e = crate::sample::random_token_matrix(&mut r, 2, 1, 1.0);
        let rows = 4;
        let mut state = e.clone();
        let mut chain = DMatrix::<f64>::identity(8, 8);
        for layer in net.layers() {
            chain = full_layer_jacobian(&state, layer).unwrap() * chain;
            state = lsa_forward(&state, layer).unwrap();
        }
        // rows of the query y-block (column 1, rows 2..4), columns of the demo block
        let expected = chain.view((rows + 2, 0), (2, rows)).into_owned();
        let got = grad_multi_layer(&e, &net, 3).unwrap();
        assert!(max_abs_diff(got.jacobian(), &expected) <= 1e-12);
    }

    #[test]
    fn multi_layer_requires_one_shot() {
        let mut r = rng(13);
        let net = random_network(&mut r, 2, 2, 0.3);
        let e = crate::sample::random_token_matrix(&mut r, 2, 2, 1.0);
        assert_eq!(grad_multi_layer(&e, &net, 1), Err(Error::NotOneShot(2)));
        let e0 = crate::sample::random_token_matrix(&mut r, 2, 0, 1.0);
        assert_eq!(grad_multi_layer(&e0, &net, 1), Err(Error::NotOneShot(0)));
    }
}
