//! Single post-norm transformer encoder block:
//!
//! ```text
//! A  = concat_h softmax(Q_h K_hᵀ / √d_k) V_h · W_Oᵀ     Q = X W_Qᵀ, K = X W_Kᵀ, V = X W_Vᵀ
//! Z1 = LayerNorm(X + A)
//! Y  = LayerNorm(Z1 + W_2 ReLU(W_1 Z1 + b_1) + b_2)
//! ```
//!
//! No positional encoding: the block always sits on top of an LSTM that has
//! already injected order.

use crate::error::{Error, Result};
use crate::layers::linear::{relu, relu_backward, Linear, LinearCache};
use crate::layers::norm::{LayerNorm, LayerNormCache};
use crate::params::{Gradients, ParamId, ParamSet};
use crate::tensor::{gemm, softmax_in_place, SeededRng, Tensor};

#[derive(Clone, Debug)]
pub struct TransformerEncoderBlock {
    pub model_dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub w_o: ParamId,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
    pub ln_attn: LayerNorm,
    pub ln_ffn: LayerNorm,
}

#[derive(Clone, Debug)]
pub struct EncoderCache {
    batch: usize,
    steps: usize,
    x: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// Attention weights `[B×heads×T×T]`, rows sum to one.
    pub probs: Vec<f64>,
    concat: Vec<f64>,
    ln_attn: LayerNormCache,
    ffn_in: LinearCache,
    ffn_pre: Tensor,
    ffn_out: LinearCache,
    ln_ffn: LayerNormCache,
}

impl TransformerEncoderBlock {
    pub fn new(
        ps: &mut ParamSet,
        rng: &mut SeededRng,
        name: &str,
        model_dim: usize,
        heads: usize,
        ffn_dim: usize,
    ) -> Result<Self> {
        if heads == 0 || !model_dim.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "model dimension {model_dim} is not divisible by {heads} heads"
            )));
        }
        let d = model_dim;
        let w_q = ps.add_uniform(format!("{name}.w_q"), &[d, d], d, rng);
        let w_k = ps.add_uniform(format!("{name}.w_k"), &[d, d], d, rng);
        let w_v = ps.add_uniform(format!("{name}.w_v"), &[d, d], d, rng);
        let w_o = ps.add_uniform(format!("{name}.w_o"), &[d, d], d, rng);
        let ffn_in = Linear::new(ps, rng, &format!("{name}.ffn1"), d, ffn_dim);
        let ffn_out = Linear::new(ps, rng, &format!("{name}.ffn2"), ffn_dim, d);
        let ln_attn = LayerNorm::new(ps, &format!("{name}.ln1"), d);
        let ln_ffn = LayerNorm::new(ps, &format!("{name}.ln2"), d);
        Ok(TransformerEncoderBlock {
            model_dim,
            heads,
            ffn_dim,
            w_q,
            w_k,
            w_v,
            w_o,
            ffn_in,
            ffn_out,
            ln_attn,
            ln_ffn,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }

    pub fn param_count(model_dim: usize, ffn_dim: usize) -> usize {
        4 * model_dim * model_dim
            + Linear::param_count(model_dim, ffn_dim)
            + Linear::param_count(ffn_dim, model_dim)
            + 4 * model_dim
    }

    fn project(&self, ps: &ParamSet, x: &[f64], rows: usize, w: ParamId) -> Vec<f64> {
        let d = self.model_dim;
        let mut out = vec![0.0; rows * d];
        gemm(rows, d, d, x, false, ps.get(w).data(), true, &mut out, 0.0);
        out
    }

    pub fn forward(&self, ps: &ParamSet, h: &Tensor) -> Result<(Tensor, EncoderCache)> {
        let (batch, steps, d) = h.dims3("transformer forward")?;
        if d != self.model_dim {
            return Err(Error::dim(
                "transformer forward",
                h.shape(),
                &[batch, steps, self.model_dim],
            ));
        }
        let rows = batch * steps;
        let x = h.data().to_vec();
        let q = self.project(ps, &x, rows, self.w_q);
        let k = self.project(ps, &x, rows, self.w_k);
        let v = self.project(ps, &x, rows, self.w_v);

        let dk = self.head_dim();
        let scale = 1.0 / (dk as f64).sqrt();
        let mut probs = vec![0.0; batch * self.heads * steps * steps];
        let mut concat = vec![0.0; rows * d];
        for b in 0..batch {
            for hd in 0..self.heads {
                let off = hd * dk;
                let p_base = (b * self.heads + hd) * steps * steps;
                for i in 0..steps {
                    let qi = &q[(b * steps + i) * d + off..][..dk];
                    let row = &mut probs[p_base + i * steps..][..steps];
                    for (j, s) in row.iter_mut().enumerate() {
                        let kj = &k[(b * steps + j) * d + off..][..dk];
                        *s = qi.iter().zip(kj).map(|(a, c)| a * c).sum::<f64>() * scale;
                    }
                    softmax_in_place(row);
                    let out = &mut concat[(b * steps + i) * d + off..][..dk];
                    for (j, &p) in row.iter().enumerate() {
                        let vj = &v[(b * steps + j) * d + off..][..dk];
                        for (o, vv) in out.iter_mut().zip(vj) {
                            *o += p * vv;
                        }
                    }
                }
            }
        }
        let attn = self.project(ps, &concat, rows, self.w_o);
        let resid1: Vec<f64> = x.iter().zip(&attn).map(|(a, b)| a + b).collect();
        let (z1, ln_attn) = self
            .ln_attn
            .forward(ps, &Tensor::new(&[rows, d], resid1)?)?;
        let (ffn_pre, ffn_in) = self.ffn_in.forward(ps, &z1)?;
        let (ffn, ffn_out) = self.ffn_out.forward(ps, &relu(&ffn_pre))?;
        let (y, ln_ffn) = self.ln_ffn.forward(ps, &z1.add(&ffn)?)?;
        Ok((
            y.reshape(&[batch, steps, d])?,
            EncoderCache {
                batch,
                steps,
                x,
                q,
                k,
                v,
                probs,
                concat,
                ln_attn,
                ffn_in,
                ffn_pre,
                ffn_out,
                ln_ffn,
            },
        ))
    }

    pub fn backward(
        &self,
        ps: &ParamSet,
        cache: &EncoderCache,
        dy: &Tensor,
        grads: &mut Gradients,
    ) -> Result<Tensor> {
        let (batch, steps, d) = (cache.batch, cache.steps, self.model_dim);
        if dy.shape() != [batch, steps, d] {
            return Err(Error::dim(
                "transformer backward",
                dy.shape(),
                &[batch, steps, d],
            ));
        }
        let rows = batch * steps;
        let dy = dy.clone().reshape(&[rows, d])?;

        // feed-forward sub-layer
        let d_resid2 = self.ln_ffn.backward(ps, &cache.ln_ffn, &dy, grads)?;
        let d_relu = self
            .ffn_out
            .backward(ps, &cache.ffn_out, &d_resid2, grads)?;
        let d_pre = relu_backward(&cache.ffn_pre, &d_relu);
        let dz1 = self
            .ffn_in
            .backward(ps, &cache.ffn_in, &d_pre, grads)?
            .add(&d_resid2)?;

        // attention sub-layer
        let d_resid1 = self.ln_attn.backward(ps, &cache.ln_attn, &dz1, grads)?;
        let da = d_resid1.data();
        gemm(
            d,
            rows,
            d,
            da,
            true,
            &cache.concat,
            false,
            grads.get_mut(self.w_o),
            1.0,
        );
        let mut dconcat = vec![0.0; rows * d];
        gemm(
            rows,
            d,
            d,
            da,
            false,
            ps.get(self.w_o).data(),
            false,
            &mut dconcat,
            0.0,
        );

        let dk = self.head_dim();
        let scale = 1.0 / (dk as f64).sqrt();
        let mut dq = vec![0.0; rows * d];
        let mut dkey = vec![0.0; rows * d];
        let mut dv = vec![0.0; rows * d];
        let mut dp = vec![0.0; steps];
        for b in 0..batch {
            for hd in 0..self.heads {
                let off = hd * dk;
                let p_base = (b * self.heads + hd) * steps * steps;
                for i in 0..steps {
                    let p_row = &cache.probs[p_base + i * steps..][..steps];
                    let dout = &dconcat[(b * steps + i) * d + off..][..dk];
                    for j in 0..steps {
                        let vj = &cache.v[(b * steps + j) * d + off..][..dk];
                        dp[j] = dout.iter().zip(vj).map(|(a, c)| a * c).sum();
                        let dvj = &mut dv[(b * steps + j) * d + off..][..dk];
                        for (acc, g) in dvj.iter_mut().zip(dout) {
                            *acc += p_row[j] * g;
                        }
                    }
                    let weighted: f64 = dp.iter().zip(p_row).map(|(a, p)| a * p).sum();
                    for j in 0..steps {
                        let ds = p_row[j] * (dp[j] - weighted) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        let qi = (b * steps + i) * d + off;
                        let kj = (b * steps + j) * d + off;
                        for p in 0..dk {
                            dq[qi + p] += ds * cache.k[kj + p];
                            dkey[kj + p] += ds * cache.q[qi + p];
                        }
                    }
                }
            }
        }

        let mut dx = d_resid1.into_data();
        for (grad, w) in [(&dq, self.w_q), (&dkey, self.w_k), (&dv, self.w_v)] {
            gemm(
                d,
                rows,
                d,
                grad,
                true,
                &cache.x,
                false,
                grads.get_mut(w),
                1.0,
            );
            gemm(
                rows,
                d,
                d,
                grad,
                false,
                ps.get(w).data(),
                false,
                &mut dx,
                1.0,
            );
        }
        Tensor::new(&[batch, steps, d], dx)
    }
}
