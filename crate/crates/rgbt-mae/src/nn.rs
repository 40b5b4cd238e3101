//! Minimal transformer layers with hand-written backward passes, generic
//! over `f32` (training) and `f64` (gradient checking).
//!
//! Token tensors are stacked row-major as `(batch * tokens, dim)`; item
//! boundaries are tracked by the caller. All matmuls go through
//! `ndarray::dot`, which dispatches to tuned kernels for both float types.

use ndarray::{s, Array1, Array2, Axis};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub trait Scalar:
    num_traits::Float + num_traits::NumAssignOps + ndarray::LinalgScalar + std::fmt::Debug + Send + Sync + 'static
{
}
impl Scalar for f32 {}
impl Scalar for f64 {}

/// Shorthand for lossy f64 -> F constant conversion.
#[inline]
pub fn c<F: Scalar>(x: f64) -> F {
    F::from(x).unwrap()
}

/// A trainable tensor and its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Param<F> {
    pub value: Array2<F>,
    pub grad: Array2<F>,
}

impl<F: Scalar> Param<F> {
    pub fn new(value: Array2<F>) -> Self {
        let grad = Array2::zeros(value.raw_dim());
        Param { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(F::zero());
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

pub fn normal_init<F: Scalar>(rows: usize, cols: usize, std: f64, rng: &mut ChaCha8Rng) -> Array2<F> {
    Array2::from_shape_fn((rows, cols), |_| {
        let z: f64 = StandardNormal.sample(rng);
        c(z * std)
    })
}

/// `y = x W + b` with `W: (in, out)`, `b: (1, out)`.
#[derive(Debug, Clone)]
pub struct Linear<F> {
    pub w: Param<F>,
    pub b: Param<F>,
}

impl<F: Scalar> Linear<F> {
    pub fn init(in_dim: usize, out_dim: usize, std: f64, rng: &mut ChaCha8Rng) -> Self {
        Linear {
            w: Param::new(normal_init(in_dim, out_dim, std, rng)),
            b: Param::new(Array2::zeros((1, out_dim))),
        }
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Linear {
            w: Param::new(Array2::zeros((in_dim, out_dim))),
            b: Param::new(Array2::zeros((1, out_dim))),
        }
    }

    pub fn forward(&self, x: &Array2<F>) -> Array2<F> {
        let mut y = x.dot(&self.w.value);
        let b = self.b.value.row(0);
        for mut row in y.rows_mut() {
            row += &b;
        }
        y
    }

    /// Accumulates parameter grads; returns dL/dx.
    pub fn backward(&mut self, x: &Array2<F>, dy: &Array2<F>) -> Array2<F> {
        self.w.grad += &x.t().dot(dy);
        let db = dy.sum_axis(Axis(0));
        let mut g = self.b.grad.row_mut(0);
        g += &db;
        dy.dot(&self.w.value.t())
    }

    pub fn visit<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param<F>)>) {
        out.push((format!("{prefix}.w"), &mut self.w));
        out.push((format!("{prefix}.b"), &mut self.b));
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm<F> {
    pub gamma: Param<F>,
    pub beta: Param<F>,
    pub eps: F,
}

pub struct LnCache<F> {
    xhat: Array2<F>,
    inv_std: Vec<F>,
}

impl<F: Scalar> LayerNorm<F> {
    pub fn new(dim: usize) -> Self {
        LayerNorm {
            gamma: Param::new(Array2::from_elem((1, dim), F::one())),
            beta: Param::new(Array2::zeros((1, dim))),
            eps: c(1e-6),
        }
    }

    pub fn forward(&self, x: &Array2<F>) -> (Array2<F>, LnCache<F>) {
        let (n, d) = x.dim();
        let dn = c::<F>(d as f64);
        let mut xhat = Array2::zeros((n, d));
        let mut inv_std = Vec::with_capacity(n);
        let mut y = Array2::zeros((n, d));
        let gamma = self.gamma.value.row(0);
        let beta = self.beta.value.row(0);
        for i in 0..n {
            let row = x.row(i);
            let mean = row.sum() / dn;
            let mut var = F::zero();
            for &v in row.iter() {
                let dv = v - mean;
                var += dv * dv;
            }
            var = var / dn;
            let istd = (var + self.eps).sqrt().recip();
            inv_std.push(istd);
            for j in 0..d {
                let xh = (row[j] - mean) * istd;
                xhat[[i, j]] = xh;
                y[[i, j]] = xh * gamma[j] + beta[j];
            }
        }
        (y, LnCache { xhat, inv_std })
    }

    pub fn backward(&mut self, cache: &LnCache<F>, dy: &Array2<F>) -> Array2<F> {
        let (n, d) = dy.dim();
        let dn = c::<F>(d as f64);
        let gamma = self.gamma.value.row(0);
        let mut dx = Array2::zeros((n, d));
        let mut dgamma = Array1::<F>::zeros(d);
        let mut dbeta = Array1::<F>::zeros(d);
        for i in 0..n {
            let xh = cache.xhat.row(i);
            let dyr = dy.row(i);
            let mut mean_dyh = F::zero();
            let mut mean_dyh_xh = F::zero();
            for j in 0..d {
                let dyh = dyr[j] * gamma[j];
                mean_dyh += dyh;
                mean_dyh_xh += dyh * xh[j];
                dgamma[j] += dyr[j] * xh[j];
                dbeta[j] += dyr[j];
            }
            mean_dyh = mean_dyh / dn;
            mean_dyh_xh = mean_dyh_xh / dn;
            let istd = cache.inv_std[i];
            for j in 0..d {
                let dyh = dyr[j] * gamma[j];
                dx[[i, j]] = istd * (dyh - mean_dyh - xh[j] * mean_dyh_xh);
            }
        }
        let mut gg = self.gamma.grad.row_mut(0);
        gg += &dgamma;
        let mut gb = self.beta.grad.row_mut(0);
        gb += &dbeta;
        dx
    }

    pub fn visit<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param<F>)>) {
        out.push((format!("{prefix}.gamma"), &mut self.gamma));
        out.push((format!("{prefix}.beta"), &mut self.beta));
    }
}

fn gelu<F: Scalar>(x: F) -> F {
    let k: F = c(0.7978845608028654); // sqrt(2/pi)
    let a: F = c(0.044715);
    let half: F = c(0.5);
    let u = k * (x + a * x * x * x);
    half * x * (F::one() + u.tanh())
}

fn gelu_grad<F: Scalar>(x: F) -> F {
    let k: F = c(0.7978845608028654);
    let a: F = c(0.044715);
    let half: F = c(0.5);
    let three: F = c(3.0);
    let u = k * (x + a * x * x * x);
    let t = u.tanh();
    let sech2 = F::one() - t * t;
    half * (F::one() + t) + half * x * sech2 * k * (F::one() + three * a * x * x)
}

#[derive(Debug, Clone)]
pub struct Mlp<F> {
    pub fc1: Linear<F>,
    pub fc2: Linear<F>,
}

pub struct MlpCache<F> {
    x: Array2<F>,
    pre_act: Array2<F>,
    post_act: Array2<F>,
}

impl<F: Scalar> Mlp<F> {
    pub fn init(dim: usize, hidden: usize, std: f64, rng: &mut ChaCha8Rng) -> Self {
        Mlp { fc1: Linear::init(dim, hidden, std, rng), fc2: Linear::init(hidden, dim, std, rng) }
    }

    pub fn forward(&self, x: &Array2<F>) -> (Array2<F>, MlpCache<F>) {
        let pre = self.fc1.forward(x);
        let post = pre.mapv(gelu);
        let y = self.fc2.forward(&post);
        (y, MlpCache { x: x.clone(), pre_act: pre, post_act: post })
    }

    pub fn backward(&mut self, cache: &MlpCache<F>, dy: &Array2<F>) -> Array2<F> {
        let dpost = self.fc2.backward(&cache.post_act, dy);
        let dpre = &dpost * &cache.pre_act.mapv(gelu_grad);
        self.fc1.backward(&cache.x, &dpre)
    }

    pub fn visit<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param<F>)>) {
        self.fc1.visit(&format!("{prefix}.fc1"), out);
        self.fc2.visit(&format!("{prefix}.fc2"), out);
    }
}

/// Multi-head attention over stacked sequences. Queries and keys/values may
/// come from different stacks (cross-attention); item boundaries are given
/// by `(b, tq)` and `(b, tk)`.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention<F> {
    pub wq: Linear<F>,
    pub wk: Linear<F>,
    pub wv: Linear<F>,
    pub wo: Linear<F>,
    pub heads: usize,
}

pub struct AttnCache<F> {
    xq: Array2<F>,
    xkv: Array2<F>,
    q: Array2<F>,
    k: Array2<F>,
    v: Array2<F>,
    /// softmax maps, one per (item, head)
    attn: Vec<Array2<F>>,
    concat: Array2<F>,
    b: usize,
    tq: usize,
    tk: usize,
}

impl<F: Scalar> MultiHeadAttention<F> {
    pub fn init(dim: usize, heads: usize, std: f64, rng: &mut ChaCha8Rng) -> Self {
        assert!(dim % heads == 0, "dim {dim} not divisible by heads {heads}");
        MultiHeadAttention {
            wq: Linear::init(dim, dim, std, rng),
            wk: Linear::init(dim, dim, std, rng),
            wv: Linear::init(dim, dim, std, rng),
            wo: Linear::init(dim, dim, std, rng),
            heads,
        }
    }

    /// Zero the output projection so the residual branch starts as identity.
    pub fn zero_output_projection(&mut self) {
        self.wo.w.value.fill(F::zero());
        self.wo.b.value.fill(F::zero());
    }

    pub fn forward(
        &self,
        xq: &Array2<F>,
        xkv: &Array2<F>,
        b: usize,
        tq: usize,
        tk: usize,
    ) -> (Array2<F>, AttnCache<F>) {
        let d = xq.ncols();
        let dh = d / self.heads;
        let scale: F = c(1.0 / (dh as f64).sqrt());
        let q = self.wq.forward(xq);
        let k = self.wk.forward(xkv);
        let v = self.wv.forward(xkv);
        let mut concat = Array2::zeros((b * tq, d));
        let mut attn = Vec::with_capacity(b * self.heads);
        for bi in 0..b {
            for h in 0..self.heads {
                let qh = q.slice(s![bi * tq..(bi + 1) * tq, h * dh..(h + 1) * dh]);
                let kh = k.slice(s![bi * tk..(bi + 1) * tk, h * dh..(h + 1) * dh]);
                let vh = v.slice(s![bi * tk..(bi + 1) * tk, h * dh..(h + 1) * dh]);
                let mut scores = qh.dot(&kh.t());
                scores.mapv_inplace(|sc| sc * scale);
                for mut row in scores.rows_mut() {
                    let mut max = F::neg_infinity();
                    for &sc in row.iter() {
                        if sc > max {
                            max = sc;
                        }
                    }
                    let mut z = F::zero();
                    for sc in row.iter_mut() {
                        *sc = (*sc - max).exp();
                        z += *sc;
                    }
                    for sc in row.iter_mut() {
                        *sc = *sc / z;
                    }
                }
                let oh = scores.dot(&vh);
                concat
                    .slice_mut(s![bi * tq..(bi + 1) * tq, h * dh..(h + 1) * dh])
                    .assign(&oh);
                attn.push(scores);
            }
        }
        let y = self.wo.forward(&concat);
        let cache = AttnCache { xq: xq.clone(), xkv: xkv.clone(), q, k, v, attn, concat, b, tq, tk };
        (y, cache)
    }

    /// Returns `(dL/dxq, dL/dxkv)`.
    pub fn backward(&mut self, cache: &AttnCache<F>, dy: &Array2<F>) -> (Array2<F>, Array2<F>) {
        let d = cache.xq.ncols();
        let dh = d / self.heads;
        let scale: F = c(1.0 / (dh as f64).sqrt());
        let (b, tq, tk) = (cache.b, cache.tq, cache.tk);

        let dconcat = self.wo.backward(&cache.concat, dy);
        let mut dq = Array2::zeros(cache.q.raw_dim());
        let mut dk = Array2::zeros(cache.k.raw_dim());
        let mut dv = Array2::zeros(cache.v.raw_dim());
        for bi in 0..b {
            for h in 0..self.heads {
                let a = &cache.attn[bi * self.heads + h];
                let doh = dconcat.slice(s![bi * tq..(bi + 1) * tq, h * dh..(h + 1) * dh]);
                let kh = cache.k.slice(s![bi * tk..(bi + 1) * tk, h * dh..(h + 1) * dh]);
                let vh = cache.v.slice(s![bi * tk..(bi + 1) * tk, h * dh..(h + 1) * dh]);
                let qh = cache.q.slice(s![bi * tq..(bi + 1) * tq, h * dh..(h + 1) * dh]);

                let da = doh.dot(&vh.t());
                let dvh = a.t().dot(&doh.to_owned());
                // softmax backward per row: ds = a .* (da - sum(da .* a))
                let mut ds = Array2::zeros((tq, tk));
                for i in 0..tq {
                    let mut dot = F::zero();
                    for j in 0..tk {
                        dot += da[[i, j]] * a[[i, j]];
                    }
                    for j in 0..tk {
                        ds[[i, j]] = a[[i, j]] * (da[[i, j]] - dot) * scale;
                    }
                }
                let dqh = ds.dot(&kh);
                let dkh = ds.t().dot(&qh);

                dq.slice_mut(s![bi * tq..(bi + 1) * tq, h * dh..(h + 1) * dh]).assign(&dqh);
                dk.slice_mut(s![bi * tk..(bi + 1) * tk, h * dh..(h + 1) * dh]).assign(&dkh);
                dv.slice_mut(s![bi * tk..(bi + 1) * tk, h * dh..(h + 1) * dh]).assign(&dvh);
            }
        }
        let dxq = self.wq.backward(&cache.xq, &dq);
        let mut dxkv = self.wk.backward(&cache.xkv, &dk);
        dxkv += &self.wv.backward(&cache.xkv, &dv);
        (dxq, dxkv)
    }

    pub fn visit<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param<F>)>) {
        self.wq.visit(&format!("{prefix}.wq"), out);
        self.wk.visit(&format!("{prefix}.wk"), out);
        self.wv.visit(&format!("{prefix}.wv"), out);
        self.wo.visit(&format!("{prefix}.wo"), out);
    }
}

/// Pre-norm transformer block: `x + attn(ln1(x))`, then `x + mlp(ln2(x))`.
#[derive(Debug, Clone)]
pub struct Block<F> {
    pub ln1: LayerNorm<F>,
    pub attn: MultiHeadAttention<F>,
    pub ln2: LayerNorm<F>,
    pub mlp: Mlp<F>,
}

pub struct BlockCache<F> {
    ln1: LnCache<F>,
    attn: AttnCache<F>,
    ln2: LnCache<F>,
    mlp: MlpCache<F>,
}

impl<F: Scalar> Block<F> {
    pub fn init(dim: usize, heads: usize, mlp_hidden: usize, std: f64, rng: &mut ChaCha8Rng) -> Self {
        Block {
            ln1: LayerNorm::new(dim),
            attn: MultiHeadAttention::init(dim, heads, std, rng),
            ln2: LayerNorm::new(dim),
            mlp: Mlp::init(dim, mlp_hidden, std, rng),
        }
    }

    pub fn forward(&self, x: &Array2<F>, b: usize, t: usize) -> (Array2<F>, BlockCache<F>) {
        let (h, ln1) = self.ln1.forward(x);
        let (a, attn) = self.attn.forward(&h, &h, b, t, t);
        let x1 = x + &a;
        let (h2, ln2) = self.ln2.forward(&x1);
        let (m, mlp) = self.mlp.forward(&h2);
        let y = &x1 + &m;
        (y, BlockCache { ln1, attn, ln2, mlp })
    }

    pub fn backward(&mut self, cache: &BlockCache<F>, dy: &Array2<F>) -> Array2<F> {
        let dh2 = self.mlp.backward(&cache.mlp, dy);
        let mut dx1 = self.ln2.backward(&cache.ln2, &dh2);
        dx1 += dy;
        let (dhq, dhkv) = self.attn.backward(&cache.attn, &dx1);
        let dh = &dhq + &dhkv;
        let mut dx = self.ln1.backward(&cache.ln1, &dh);
        dx += &dx1;
        dx
    }

    pub fn visit<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param<F>)>) {
        self.ln1.visit(&format!("{prefix}.ln1"), out);
        self.attn.visit(&format!("{prefix}.attn"), out);
        self.ln2.visit(&format!("{prefix}.ln2"), out);
        self.mlp.visit(&format!("{prefix}.mlp"), out);
    }
}

/// Fixed 2-D sinusoidal positional embeddings over a `p x p` grid
/// (row-major), `dim` divisible by 4.
pub fn sincos_pos_embed_2d<F: Scalar>(dim: usize, grid_side: usize) -> Array2<F> {
    assert!(dim % 4 == 0, "positional dim {dim} must be divisible by 4");
    let quarter = dim / 4;
    let omega: Vec<f64> = (0..quarter).map(|i| 1.0 / 10000f64.powf(i as f64 / quarter as f64)).collect();
    let n = grid_side * grid_side;
    let mut out = Array2::zeros((n, dim));
    for r in 0..grid_side {
        for col in 0..grid_side {
            let idx = r * grid_side + col;
            for i in 0..quarter {
                let wc = col as f64 * omega[i];
                let wr = r as f64 * omega[i];
                out[[idx, i]] = c(wc.sin());
                out[[idx, quarter + i]] = c(wc.cos());
                out[[idx, 2 * quarter + i]] = c(wr.sin());
                out[[idx, 3 * quarter + i]] = c(wr.cos());
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::{rng_for, Role};

    fn rng() -> ChaCha8Rng {
        rng_for(17, 0, Role::Init)
    }

    #[test]
    fn linear_forward_backward_shapes() {
        let mut r = rng();
        let mut lin = Linear::<f64>::init(6, 4, 0.1, &mut r);
        let x = normal_init::<f64>(5, 6, 1.0, &mut r);
        let y = lin.forward(&x);
        assert_eq!(y.dim(), (5, 4));
        let dy = normal_init::<f64>(5, 4, 1.0, &mut r);
        let dx = lin.backward(&x, &dy);
        assert_eq!(dx.dim(), (5, 6));
    }

    #[test]
    fn layernorm_rows_standardized() {
        let mut r = rng();
        let ln = LayerNorm::<f64>::new(16);
        let x = normal_init::<f64>(8, 16, 3.0, &mut r);
        let (y, _) = ln.forward(&x);
        for row in y.rows() {
            let mean: f64 = row.sum() / 16.0;
            let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn attention_rows_sum_to_one_and_shapes() {
        let mut r = rng();
        let attn = MultiHeadAttention::<f64>::init(8, 2, 0.2, &mut r);
        let x = normal_init::<f64>(6, 8, 1.0, &mut r);
        let (y, cache) = attn.forward(&x, &x, 2, 3, 3);
        assert_eq!(y.dim(), (6, 8));
        for a in &cache.attn {
            for row in a.rows() {
                assert!((row.sum() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn attention_single_key_closed_form() {
        // one query token, one kv token: the softmax weight is exactly 1 and
        // the output is the V projection pushed through W_o plus biases
        let mut r = rng();
        let attn = MultiHeadAttention::<f64>::init(4, 1, 0.3, &mut r);
        let xq = normal_init::<f64>(1, 4, 1.0, &mut r);
        let xkv = normal_init::<f64>(1, 4, 1.0, &mut r);
        let (y, _) = attn.forward(&xq, &xkv, 1, 1, 1);
        let v = attn.wv.forward(&xkv);
        let expect = attn.wo.forward(&v);
        for j in 0..4 {
            assert!((y[[0, j]] - expect[[0, j]]).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_permutation_equivariance() {
        let mut r = rng();
        let attn = MultiHeadAttention::<f64>::init(8, 2, 0.2, &mut r);
        let x = normal_init::<f64>(4, 8, 1.0, &mut r);
        let kv = normal_init::<f64>(5, 8, 1.0, &mut r);
        let (y, _) = attn.forward(&x, &kv, 1, 4, 5);
        let mut xp = x.clone();
        for j in 0..8 {
            xp.swap([0, j], [2, j]);
        }
        let (yp, _) = attn.forward(&xp, &kv, 1, 4, 5);
        for j in 0..8 {
            assert!((y[[0, j]] - yp[[2, j]]).abs() < 1e-12);
            assert!((y[[2, j]] - yp[[0, j]]).abs() < 1e-12);
        }
    }

    /// Straight-line attention oracle, written independently of the batched
    /// implementation.
    fn attention_oracle(attn: &MultiHeadAttention<f64>, xq: &Array2<f64>, xkv: &Array2<f64>) -> Array2<f64> {
        let d = xq.ncols();
        let heads = attn.heads;
        let dh = d / heads;
        let nq = xq.nrows();
        let nk = xkv.nrows();
        let lin = |x: &Array2<f64>, l: &Linear<f64>| -> Array2<f64> {
            let mut y = Array2::zeros((x.nrows(), d));
            for i in 0..x.nrows() {
                for j in 0..d {
                    let mut acc = l.b.value[[0, j]];
                    for k in 0..d {
                        acc += x[[i, k]] * l.w.value[[k, j]];
                    }
                    y[[i, j]] = acc;
                }
            }
            y
        };
        let q = lin(xq, &attn.wq);
        let k = lin(xkv, &attn.wk);
        let v = lin(xkv, &attn.wv);
        let mut concat = Array2::zeros((nq, d));
        for h in 0..heads {
            for i in 0..nq {
                let mut scores = vec![0.0f64; nk];
                for (jj, sc) in scores.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for t in 0..dh {
                        acc += q[[i, h * dh + t]] * k[[jj, h * dh + t]];
                    }
                    *sc = acc / (dh as f64).sqrt();
                }
                let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for sc in scores.iter_mut() {
                    *sc = (*sc - max).exp();
                    z += *sc;
                }
                for sc in scores.iter_mut() {
                    *sc /= z;
                }
                for t in 0..dh {
                    let mut acc = 0.0;
                    for (jj, &sc) in scores.iter().enumerate() {
                        acc += sc * v[[jj, h * dh + t]];
                    }
                    concat[[i, h * dh + t]] = acc;
                }
            }
        }
        lin(&concat, &attn.wo)
    }

    #[test]
    fn attention_matches_straight_line_oracle() {
        let mut r = rng();
        let attn = MultiHeadAttention::<f64>::init(8, 2, 0.4, &mut r);
        let xq = normal_init::<f64>(3, 8, 1.0, &mut r);
        let xkv = normal_init::<f64>(5, 8, 1.0, &mut r);
        let (y, _) = attn.forward(&xq, &xkv, 1, 3, 5);
        let oracle = attention_oracle(&attn, &xq, &xkv);
        for i in 0..3 {
            for j in 0..8 {
                assert!((y[[i, j]] - oracle[[i, j]]).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn zeroed_output_projection_kills_branch() {
        let mut r = rng();
        let mut attn = MultiHeadAttention::<f64>::init(8, 2, 0.4, &mut r);
        attn.zero_output_projection();
        let x = normal_init::<f64>(4, 8, 1.0, &mut r);
        let (y, _) = attn.forward(&x, &x, 1, 4, 4);
        assert!(y.iter().all(|&v| v == 0.0));
    }

    /// Central-difference gradient check across every parameter of a block.
    #[test]
    fn block_gradients_match_finite_differences() {
        let mut r = rng();
        let mut block = Block::<f64>::init(8, 2, 16, 0.3, &mut r);
        let x = normal_init::<f64>(6, 8, 0.8, &mut r);
        let target = normal_init::<f64>(6, 8, 0.8, &mut r);

        let loss_of = |block: &Block<f64>, x: &Array2<f64>| -> f64 {
            let (y, _) = block.forward(x, 2, 3);
            let diff = &y - &target;
            diff.iter().map(|v| v * v).sum::<f64>() / y.len() as f64
        };

        let (y, cache) = block.forward(&x, 2, 3);
        let dy = (&y - &target).mapv(|v| 2.0 * v / y.len() as f64);
        let dx = block.backward(&cache, &dy);

        let h = 1e-6;
        for &(i, j) in &[(0usize, 0usize), (2, 5), (5, 7)] {
            let mut xp = x.clone();
            xp[[i, j]] += h;
            let mut xm = x.clone();
            xm[[i, j]] -= h;
            let fd = (loss_of(&block, &xp) - loss_of(&block, &xm)) / (2.0 * h);
            let rel = (fd - dx[[i, j]]).abs() / (fd.abs() + dx[[i, j]].abs() + 1e-12);
            assert!(rel < 1e-6, "input grad ({i},{j}): fd {fd} vs {}", dx[[i, j]]);
        }

        let mut params = Vec::new();
        block.visit("block", &mut params);
        let names: Vec<String> = params.iter().map(|(n, _)| n.clone()).collect();
        let grads: Vec<Array2<f64>> = params.iter().map(|(_, p)| p.grad.clone()).collect();
        drop(params);

        for (pi, name) in names.iter().enumerate() {
            let shape = grads[pi].dim();
            let mut coords = vec![(0usize, 0usize)];
            if shape.0 > 1 && shape.1 > 1 {
                coords.push((shape.0 / 2, shape.1 / 2));
            }
            for (i, j) in coords {
                let analytic = grads[pi][[i, j]];
                let mut probe = |delta: f64| -> f64 {
                    let mut ps = Vec::new();
                    block.visit("block", &mut ps);
                    ps[pi].1.value[[i, j]] += delta;
                    drop(ps);
                    let l = loss_of(&block, &x);
                    let mut ps = Vec::new();
                    block.visit("block", &mut ps);
                    ps[pi].1.value[[i, j]] -= delta;
                    l
                };
                let fd = (probe(h) - probe(-h)) / (2.0 * h);
                let rel = (fd - analytic).abs() / (fd.abs() + analytic.abs() + 1e-12);
                assert!(rel < 1e-5, "{name} ({i},{j}): fd {fd} vs analytic {analytic}");
            }
        }
    }

    #[test]
    fn pos_embed_shape_and_distinctness() {
        let pe = sincos_pos_embed_2d::<f32>(128, 4);
        assert_eq!(pe.dim(), (16, 128));
        assert!(pe.iter().all(|&v| (-1.0..=1.0).contains(&v)));
        for i in 0..16 {
            for j in (i + 1)..16 {
                let diff: f32 = (0..128).map(|k| (pe[[i, k]] - pe[[j, k]]).abs()).sum();
                assert!(diff > 1e-3, "positions {i} and {j} collide");
            }
        }
    }

    #[test]
    fn gelu_reference_values() {
        assert!((gelu(0.0f64)).abs() < 1e-12);
        assert!((gelu(1.0f64) - 0.841192).abs() < 1e-5);
        assert!((gelu(-1.0f64) + 0.158808).abs() < 1e-5);
        for &x in &[-2.0f64, -0.5, 0.0, 0.7, 2.3] {
            let h = 1e-7;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-6);
        }
    }
}
