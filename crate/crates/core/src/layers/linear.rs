use crate::error::{Error, Result};
use crate::params::{Gradients, ParamId, ParamSet};
use crate::tensor::{accumulate_col_sums, add_row_bias, gemm, SeededRng, Tensor};

/// Affine map `y = x·Wᵀ + b` with `W: [out×in]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

#[derive(Clone, Debug)]
pub struct LinearCache {
    input: Tensor,
}

impl Linear {
    pub fn new(
        ps: &mut ParamSet,
        rng: &mut SeededRng,
        name: &str,
        in_dim: usize,
        out_dim: usize,
    ) -> Self {
        let weight = ps.add_uniform(format!("{name}.weight"), &[out_dim, in_dim], in_dim, rng);
        let bias = ps.add(format!("{name}.bias"), Tensor::zeros(&[out_dim]), true);
        Linear {
            in_dim,
            out_dim,
            weight,
            bias,
        }
    }

    pub fn param_count(in_dim: usize, out_dim: usize) -> usize {
        in_dim * out_dim + out_dim
    }

    pub fn forward(&self, ps: &ParamSet, x: &Tensor) -> Result<(Tensor, LinearCache)> {
        let (rows, cols) = x.dims2("linear forward")?;
        if cols != self.in_dim {
            return Err(Error::dim(
                "linear forward",
                x.shape(),
                &[self.out_dim, self.in_dim],
            ));
        }
        let mut out = vec![0.0; rows * self.out_dim];
        gemm(
            rows,
            self.in_dim,
            self.out_dim,
            x.data(),
            false,
            ps.get(self.weight).data(),
            true,
            &mut out,
            0.0,
        );
        add_row_bias(&mut out, ps.get(self.bias).data());
        Ok((
            Tensor::new(&[rows, self.out_dim], out)?,
            LinearCache { input: x.clone() },
        ))
    }

    pub fn backward(
        &self,
        ps: &ParamSet,
        cache: &LinearCache,
        dy: &Tensor,
        grads: &mut Gradients,
    ) -> Result<Tensor> {
        let (rows, cols) = dy.dims2("linear backward")?;
        if cols != self.out_dim || rows != cache.input.shape()[0] {
            return Err(Error::dim(
                "linear backward",
                dy.shape(),
                cache.input.shape(),
            ));
        }
        gemm(
            self.out_dim,
            rows,
            self.in_dim,
            dy.data(),
            true,
            cache.input.data(),
            false,
            grads.get_mut(self.weight),
            1.0,
        );
        accumulate_col_sums(dy.data(), grads.get_mut(self.bias));
        let mut dx = vec![0.0; rows * self.in_dim];
        gemm(
            rows,
            self.out_dim,
            self.in_dim,
            dy.data(),
            false,
            ps.get(self.weight).data(),
            false,
            &mut dx,
            0.0,
        );
        Tensor::new(&[rows, self.in_dim], dx)
    }
}

pub(crate) fn relu(t: &Tensor) -> Tensor {
    t.map(|v| v.max(0.0))
}

/// `dy ⊙ 1[pre > 0]`
pub(crate) fn relu_backward(pre: &Tensor, dy: &Tensor) -> Tensor {
    let data = pre
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&p, &g)| if p > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(pre.shape(), data).expect("same shape")
}
