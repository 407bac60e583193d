use crate::error::{Error, Result};
use crate::params::{Gradients, ParamId, ParamSet};
use crate::tensor::{softmax_in_place, SeededRng, Tensor};

/// Collapses `[B×T×d]` to `[B×d]` with softmax weights over time:
/// `e_t = wᵀy_t`, `a = softmax(e)`, `out = Σ_t a_t y_t`.
#[derive(Clone, Debug)]
pub struct AttentionPool {
    pub dim: usize,
    pub w_attn: ParamId,
}

#[derive(Clone, Debug)]
pub struct PoolCache {
    y: Tensor,
    /// `[B×T]` attention weights.
    pub weights: Vec<f64>,
}

impl AttentionPool {
    pub fn new(ps: &mut ParamSet, rng: &mut SeededRng, name: &str, dim: usize) -> Self {
        AttentionPool {
            dim,
            w_attn: ps.add_uniform(format!("{name}.w_attn"), &[dim], dim, rng),
        }
    }

    pub fn forward(&self, ps: &ParamSet, y: &Tensor) -> Result<(Tensor, PoolCache)> {
        let (batch, steps, d) = y.dims3("attention pool")?;
        if d != self.dim {
            return Err(Error::dim("attention pool", y.shape(), &[self.dim]));
        }
        let w = ps.get(self.w_attn).data();
        let mut weights = vec![0.0; batch * steps];
        let mut out = vec![0.0; batch * d];
        for b in 0..batch {
            let a = &mut weights[b * steps..(b + 1) * steps];
            for (t, e) in a.iter_mut().enumerate() {
                let yt = &y.data()[(b * steps + t) * d..][..d];
                *e = w.iter().zip(yt).map(|(p, q)| p * q).sum();
            }
            softmax_in_place(a);
            let o = &mut out[b * d..(b + 1) * d];
            for (t, &at) in a.iter().enumerate() {
                let yt = &y.data()[(b * steps + t) * d..][..d];
                for (acc, v) in o.iter_mut().zip(yt) {
                    *acc += at * v;
                }
            }
        }
        Ok((
            Tensor::new(&[batch, d], out)?,
            PoolCache {
                y: y.clone(),
                weights,
            },
        ))
    }

    pub fn backward(
        &self,
        ps: &ParamSet,
        cache: &PoolCache,
        dout: &Tensor,
        grads: &mut Gradients,
    ) -> Result<Tensor> {
        let (batch, steps, d) = cache.y.dims3("attention pool backward")?;
        if dout.shape() != [batch, d] {
            return Err(Error::dim(
                "attention pool backward",
                dout.shape(),
                &[batch, d],
            ));
        }
        let w = ps.get(self.w_attn).data();
        let y = cache.y.data();
        let mut dy = vec![0.0; batch * steps * d];
        let mut dw = vec![0.0; d];
        let mut da = vec![0.0; steps];
        for b in 0..batch {
            let a = &cache.weights[b * steps..(b + 1) * steps];
            let g = dout.row(b);
            for (t, dat) in da.iter_mut().enumerate() {
                *dat = g
                    .iter()
                    .zip(&y[(b * steps + t) * d..][..d])
                    .map(|(p, q)| p * q)
                    .sum();
            }
            let mean: f64 = a.iter().zip(&da).map(|(p, q)| p * q).sum();
            for t in 0..steps {
                let de = a[t] * (da[t] - mean);
                let base = (b * steps + t) * d;
                for j in 0..d {
                    dy[base + j] = a[t] * g[j] + de * w[j];
                    dw[j] += de * y[base + j];
                }
            }
        }
        for (acc, v) in grads.get_mut(self.w_attn).iter_mut().zip(&dw) {
            *acc += v;
        }
        Tensor::new(&[batch, steps, d], dy)
    }
}
