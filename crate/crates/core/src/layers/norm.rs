use crate::error::{Error, Result};
use crate::params::{Gradients, ParamId, ParamSet};
use crate::tensor::Tensor;

/// Epsilon shared by layer norm and batch norm.
pub const NORM_EPS: f64 = 1e-5;
/// Weight of the newest batch in the running statistics.
pub const BN_MOMENTUM: f64 = 0.1;

/// Normalizes each row over its last axis, then applies gain and bias.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub dim: usize,
    pub gain: ParamId,
    pub bias: ParamId,
}

#[derive(Clone, Debug)]
pub struct LayerNormCache {
    /// Normalized input before gain/bias.
    pub xhat: Tensor,
    rstd: Vec<f64>,
}

impl LayerNorm {
    pub fn new(ps: &mut ParamSet, name: &str, dim: usize) -> Self {
        LayerNorm {
            dim,
            gain: ps.add(format!("{name}.gain"), Tensor::full(&[dim], 1.0), true),
            bias: ps.add(format!("{name}.bias"), Tensor::zeros(&[dim]), true),
        }
    }

    pub fn forward(&self, ps: &ParamSet, x: &Tensor) -> Result<(Tensor, LayerNormCache)> {
        let (rows, d) = x.dims2("layer norm")?;
        if d != self.dim {
            return Err(Error::dim("layer norm", x.shape(), &[self.dim]));
        }
        let gain = ps.get(self.gain).data();
        let bias = ps.get(self.bias).data();
        let mut xhat = vec![0.0; rows * d];
        let mut y = vec![0.0; rows * d];
        let mut rstd = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = x.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let s = 1.0 / (var + NORM_EPS).sqrt();
            rstd.push(s);
            for j in 0..d {
                let n = (row[j] - mean) * s;
                xhat[r * d + j] = n;
                y[r * d + j] = gain[j] * n + bias[j];
            }
        }
        Ok((
            Tensor::new(&[rows, d], y)?,
            LayerNormCache {
                xhat: Tensor::new(&[rows, d], xhat)?,
                rstd,
            },
        ))
    }

    pub fn backward(
        &self,
        ps: &ParamSet,
        cache: &LayerNormCache,
        dy: &Tensor,
        grads: &mut Gradients,
    ) -> Result<Tensor> {
        let d = self.dim;
        if dy.shape() != cache.xhat.shape() {
            return Err(Error::dim(
                "layer norm backward",
                dy.shape(),
                cache.xhat.shape(),
            ));
        }
        let gain = ps.get(self.gain).data();
        let rows = dy.shape()[0];
        let mut dx = vec![0.0; rows * d];
        {
            let dgain = grads.get_mut(self.gain);
            for r in 0..rows {
                for j in 0..d {
                    dgain[j] += dy.data()[r * d + j] * cache.xhat.data()[r * d + j];
                }
            }
        }
        crate::tensor::accumulate_col_sums(dy.data(), grads.get_mut(self.bias));
        let mut dxhat = vec![0.0; d];
        for r in 0..rows {
            let xh = cache.xhat.row(r);
            let g = dy.row(r);
            for j in 0..d {
                dxhat[j] = g[j] * gain[j];
            }
            let mean_d = dxhat.iter().sum::<f64>() / d as f64;
            let mean_dx = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
            for j in 0..d {
                dx[r * d + j] = cache.rstd[r] * (dxhat[j] - mean_d - xh[j] * mean_dx);
            }
        }
        Tensor::new(&[rows, d], dx)
    }
}

/// Batch normalization over the batch axis of `[B×n]` inputs.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub dim: usize,
    pub gain: ParamId,
    pub bias: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

/// Batch statistics from one training forward: mean and unbiased variance.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct BatchNormCache {
    xhat: Tensor,
    rstd: Vec<f64>,
    training: bool,
    pub stats: Option<BatchStats>,
}

impl BatchNorm {
    pub fn new(ps: &mut ParamSet, name: &str, dim: usize) -> Self {
        BatchNorm {
            dim,
            gain: ps.add(format!("{name}.gain"), Tensor::full(&[dim], 1.0), true),
            bias: ps.add(format!("{name}.bias"), Tensor::zeros(&[dim]), true),
            running_mean: ps.add(format!("{name}.running_mean"), Tensor::zeros(&[dim]), false),
            running_var: ps.add(
                format!("{name}.running_var"),
                Tensor::full(&[dim], 1.0),
                false,
            ),
        }
    }

    pub fn forward(
        &self,
        ps: &ParamSet,
        x: &Tensor,
        training: bool,
    ) -> Result<(Tensor, BatchNormCache)> {
        let (b, n) = x.dims2("batch norm")?;
        if n != self.dim {
            return Err(Error::dim("batch norm", x.shape(), &[self.dim]));
        }
        if training && b < 2 {
            return Err(Error::DegenerateBatch(b));
        }
        let (mean, rstd, stats) = if training {
            let mut mean = vec![0.0; n];
            crate::tensor::accumulate_col_sums(x.data(), &mut mean);
            mean.iter_mut().for_each(|m| *m /= b as f64);
            let mut var = vec![0.0; n];
            for row in x.data().chunks_exact(n) {
                for j in 0..n {
                    var[j] += (row[j] - mean[j]) * (row[j] - mean[j]);
                }
            }
            let rstd: Vec<f64> = var
                .iter()
                .map(|v| 1.0 / (v / b as f64 + NORM_EPS).sqrt())
                .collect();
            let unbiased = var.iter().map(|v| v / (b - 1) as f64).collect();
            (
                mean.clone(),
                rstd,
                Some(BatchStats {
                    mean,
                    var: unbiased,
                }),
            )
        } else {
            let mean = ps.get(self.running_mean).data().to_vec();
            let rstd = ps
                .get(self.running_var)
                .data()
                .iter()
                .map(|v| 1.0 / (v + NORM_EPS).sqrt())
                .collect();
            (mean, rstd, None)
        };
        let gain = ps.get(self.gain).data();
        let bias = ps.get(self.bias).data();
        let mut xhat = vec![0.0; b * n];
        let mut y = vec![0.0; b * n];
        for i in 0..b {
            for j in 0..n {
                let h = (x.data()[i * n + j] - mean[j]) * rstd[j];
                xhat[i * n + j] = h;
                y[i * n + j] = gain[j] * h + bias[j];
            }
        }
        Ok((
            Tensor::new(&[b, n], y)?,
            BatchNormCache {
                xhat: Tensor::new(&[b, n], xhat)?,
                rstd,
                training,
                stats,
            },
        ))
    }

    pub fn backward(
        &self,
        ps: &ParamSet,
        cache: &BatchNormCache,
        dy: &Tensor,
        grads: &mut Gradients,
    ) -> Result<Tensor> {
        if dy.shape() != cache.xhat.shape() {
            return Err(Error::dim(
                "batch norm backward",
                dy.shape(),
                cache.xhat.shape(),
            ));
        }
        let (b, n) = dy.dims2("batch norm backward")?;
        let gain = ps.get(self.gain).data();
        let mut sum_d = vec![0.0; n];
        let mut sum_dx = vec![0.0; n];
        for i in 0..b {
            for j in 0..n {
                let g = dy.data()[i * n + j];
                sum_d[j] += g;
                sum_dx[j] += g * cache.xhat.data()[i * n + j];
            }
        }
        for (acc, v) in grads.get_mut(self.gain).iter_mut().zip(&sum_dx) {
            *acc += v;
        }
        for (acc, v) in grads.get_mut(self.bias).iter_mut().zip(&sum_d) {
            *acc += v;
        }
        let mut dx = vec![0.0; b * n];
        for i in 0..b {
            for j in 0..n {
                let g = dy.data()[i * n + j];
                dx[i * n + j] = if cache.training {
                    let xh = cache.xhat.data()[i * n + j];
                    gain[j] * cache.rstd[j] * (g - sum_d[j] / b as f64 - xh * sum_dx[j] / b as f64)
                } else {
                    gain[j] * cache.rstd[j] * g
                };
            }
        }
        Tensor::new(&[b, n], dx)
    }

    /// Folds one batch's statistics into the running estimates.
    pub fn update_running(&self, ps: &mut ParamSet, stats: &BatchStats) {
        for (r, m) in ps
            .get_mut(self.running_mean)
            .data_mut()
            .iter_mut()
            .zip(&stats.mean)
        {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
        }
        for (r, v) in ps
            .get_mut(self.running_var)
            .data_mut()
            .iter_mut()
            .zip(&stats.var)
        {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v;
        }
    }
}
