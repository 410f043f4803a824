//! Seeded random instances for property checks, the `verify` command and the
//! synthetic harness. Every generator is a pure function of the RNG state.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::lsa::{EmbedVec, LayerParams, LsaNetwork, Token, TokenMatrix};

pub type SeedRng = ChaCha8Rng;

pub fn rng(seed: u64) -> SeedRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream `stream` of the master seed.
pub fn stream_rng(seed: u64, stream: u64) -> SeedRng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

pub fn normal(r: &mut SeedRng) -> f64 {
    r.sample(StandardNormal)
}

pub fn normal_vec(r: &mut SeedRng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * normal(r)).collect()
}

pub fn normal_matrix(r: &mut SeedRng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| scale * normal(r))
}

/// Layer with i.i.d. `scale * N(0,1)` weights and `rho = 1`.
pub fn random_layer(r: &mut SeedRng, e: usize, scale: f64) -> LayerParams {
    let n = 2 * e;
    let w_pv = normal_matrix(r, n, n, scale);
    let w_kq = normal_matrix(r, n, n, scale);
    LayerParams::new(w_pv, w_kq, 1.0).expect("finite random layer")
}

/// Weight scale keeping a deep stack of random layers well inside binary64
/// range for unit-normal tokens.
pub fn stable_weight_scale(e: usize) -> f64 {
    0.5 / (2 * e) as f64
}

pub fn random_network(r: &mut SeedRng, e: usize, layers: usize, scale: f64) -> LsaNetwork {
    LsaNetwork::new((0..layers).map(|_| random_layer(r, e, scale)).collect())
        .expect("non-empty network")
}

pub fn random_token(r: &mut SeedRng, e: usize, scale: f64) -> Token {
    Token::from_parts(normal_vec(r, e, scale), normal_vec(r, e, scale)).expect("finite token")
}

pub fn random_query(r: &mut SeedRng, e: usize, scale: f64) -> Token {
    Token::query(EmbedVec::new(normal_vec(r, e, scale)).expect("finite query"))
}

/// `n` random demonstrations plus a random query with zero y-part.
pub fn random_token_matrix(r: &mut SeedRng, e: usize, n: usize, scale: f64) -> TokenMatrix {
    let demos: Vec<Token> = (0..n).map(|_| random_token(r, e, scale)).collect();
    let q = random_query(r, e, scale);
    TokenMatrix::new(&demos, &q).expect("consistent dims")
}

/// A one-dimensional positive construction: scaled-identity layers with
/// positive coefficients, a positive query and two positive demonstrations
/// where the first dominates the second coordinate-wise.
#[derive(Debug, Clone)]
pub struct PositiveScalarCase {
    pub net: LsaNetwork,
    pub d1: Token,
    pub d2: Token,
    pub q: Token,
    /// Demonstrations spanning the chain `d2 <= mid <= d1 <= top`, used as the
    /// sample for the order-preservation check.
    pub sample: Vec<Token>,
}

pub fn positive_scalar_case(r: &mut SeedRng, layers: usize) -> PositiveScalarCase {
    let net = LsaNetwork::new(
        (0..layers)
            .map(|_| {
                let alpha = r.random_range(0.05..0.5);
                let beta = r.random_range(0.05..0.5);
                LayerParams::scaled_identity(1, alpha, beta).expect("e = 1")
            })
            .collect(),
    )
    .expect("non-empty");
    let q = Token::query(EmbedVec::new(vec![r.random_range(0.1..1.0)]).expect("finite"));
    let base = [r.random_range(0.05..1.0), r.random_range(0.05..1.0)];
    let step = [r.random_range(0.0..0.5), r.random_range(0.0..0.5)];
    let at = |t: f64| {
        Token::from_parts(vec![base[0] + t * step[0]], vec![base[1] + t * step[1]])
            .expect("finite")
    };
    let d2 = at(0.0);
    let d1 = at(1.0);
    let sample = vec![d2.clone(), at(0.5), d1.clone(), at(1.5)];
    PositiveScalarCase {
        net,
        d1,
        d2,
        q,
        sample,
    }
}
