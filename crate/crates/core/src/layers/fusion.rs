use crate::error::{Error, Result};
use crate::layers::linear::{Linear, LinearCache};
use crate::params::{Gradients, ParamSet};
use crate::tensor::{SeededRng, Tensor};

/// `y = W_fc · concat(temporal, static) + b_fc`, one output per sample.
#[derive(Clone, Debug)]
pub struct FusionHead {
    pub temporal_dim: usize,
    pub static_dim: usize,
    pub fc: Linear,
}

#[derive(Clone, Debug)]
pub struct FusionCache {
    fc: LinearCache,
}

/// Row-wise concatenation of two `[B×·]` tensors.
pub fn concat_features(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (rows, da) = a.dims2("concat")?;
    let (rows_b, db) = b.dims2("concat")?;
    if rows != rows_b {
        return Err(Error::dim("concat", a.shape(), b.shape()));
    }
    let mut out = Vec::with_capacity(rows * (da + db));
    for r in 0..rows {
        out.extend_from_slice(a.row(r));
        out.extend_from_slice(b.row(r));
    }
    Tensor::new(&[rows, da + db], out)
}

/// Inverse of [`concat_features`] for gradients.
pub fn split_features(x: &Tensor, left: usize) -> Result<(Tensor, Tensor)> {
    let (rows, d) = x.dims2("split")?;
    if left == 0 || left >= d {
        return Err(Error::dim("split", x.shape(), &[left]));
    }
    let mut a = Vec::with_capacity(rows * left);
    let mut b = Vec::with_capacity(rows * (d - left));
    for r in 0..rows {
        let row = x.row(r);
        a.extend_from_slice(&row[..left]);
        b.extend_from_slice(&row[left..]);
    }
    Ok((
        Tensor::new(&[rows, left], a)?,
        Tensor::new(&[rows, d - left], b)?,
    ))
}

impl FusionHead {
    pub fn new(
        ps: &mut ParamSet,
        rng: &mut SeededRng,
        name: &str,
        temporal_dim: usize,
        static_dim: usize,
    ) -> Self {
        FusionHead {
            temporal_dim,
            static_dim,
            fc: Linear::new(ps, rng, name, temporal_dim + static_dim, 1),
        }
    }

    pub fn forward(
        &self,
        ps: &ParamSet,
        temporal: &Tensor,
        stat: &Tensor,
    ) -> Result<(Tensor, FusionCache)> {
        let joined = concat_features(temporal, stat)?;
        self.forward_joined(ps, &joined)
    }

    /// Forward on an already concatenated `[B×(d₁+d₂)]` input.
    pub fn forward_joined(&self, ps: &ParamSet, joined: &Tensor) -> Result<(Tensor, FusionCache)> {
        if joined.last_dim() != self.temporal_dim + self.static_dim {
            return Err(Error::dim(
                "fusion head",
                joined.shape(),
                &[self.temporal_dim, self.static_dim],
            ));
        }
        let (y, fc) = self.fc.forward(ps, joined)?;
        Ok((y, FusionCache { fc }))
    }

    /// Gradient w.r.t. the concatenated input.
    pub fn backward_joined(
        &self,
        ps: &ParamSet,
        cache: &FusionCache,
        dy: &Tensor,
        grads: &mut Gradients,
    ) -> Result<Tensor> {
        self.fc.backward(ps, &cache.fc, dy, grads)
    }

    pub fn backward(
        &self,
        ps: &ParamSet,
        cache: &FusionCache,
        dy: &Tensor,
        grads: &mut Gradients,
    ) -> Result<(Tensor, Tensor)> {
        let dj = self.backward_joined(ps, cache, dy, grads)?;
        split_features(&dj, self.temporal_dim)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::gradcheck::check_layer_grads;
    use crate::tensor::seeded_uniform;

    #[test]
    fn constant_output_with_zero_weights() {
        let mut ps = ParamSet::new();
        let head = FusionHead::new(&mut ps, &mut SeededRng::new(0), "head", 2, 1);
        ps.get_mut(head.fc.weight).data_mut().fill(0.0);
        ps.get_mut(head.fc.bias).data_mut()[0] = 3.5;
        let t = seeded_uniform(&mut SeededRng::new(1), &[3, 2], -1.0, 1.0).unwrap();
        let s = seeded_uniform(&mut SeededRng::new(2), &[3, 1], -1.0, 1.0).unwrap();
        let (y, _) = head.forward(&ps, &t, &s).unwrap();
        assert_eq!(y.data(), &[3.5, 3.5, 3.5]);
    }

    #[test]
    fn unit_weights_sum_inputs() {
        let mut ps = ParamSet::new();
        let head = FusionHead::new(&mut ps, &mut SeededRng::new(0), "head", 2, 1);
        ps.get_mut(head.fc.weight).data_mut().fill(1.0);
        let t = Tensor::new(&[1, 2], vec![1.0, 2.0]).unwrap();
        let s = Tensor::new(&[1, 1], vec![3.0]).unwrap();
        assert_eq!(head.forward(&ps, &t, &s).unwrap().0.data(), &[6.0]);
    }

    #[test]
    fn matches_dot_product_oracle() {
        let mut ps = ParamSet::new();
        let mut rng = SeededRng::new(3);
        let head = FusionHead::new(&mut ps, &mut rng, "head", 4, 3);
        ps.get_mut(head.fc.bias).data_mut()[0] = 0.7;
        let t = seeded_uniform(&mut rng, &[2, 4], -1.0, 1.0).unwrap();
        let s = seeded_uniform(&mut rng, &[2, 3], -1.0, 1.0).unwrap();
        let (y, _) = head.forward(&ps, &t, &s).unwrap();
        let w = ps.get(head.fc.weight).data();
        for b in 0..2 {
            let mut acc = 0.7;
            for j in 0..4 {
                acc += w[j] * t.at2(b, j);
            }
            for j in 0..3 {
                acc += w[4 + j] * s.at2(b, j);
            }
            assert!((y.data()[b] - acc).abs() < 1e-12);
        }
    }

    #[test]
    fn width_mismatch_is_rejected() {
        let mut ps = ParamSet::new();
        let head = FusionHead::new(&mut ps, &mut SeededRng::new(0), "head", 2, 2);
        let t = Tensor::zeros(&[1, 2]);
        let s = Tensor::zeros(&[1, 3]);
        assert!(matches!(
            head.forward(&ps, &t, &s),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..3 {
            let mut ps = ParamSet::new();
            let mut rng = SeededRng::new(seed);
            let head = FusionHead::new(&mut ps, &mut rng, "head", 5, 3);
            let x = seeded_uniform(&mut rng, &[4, 8], -1.0, 1.0).unwrap();
            check_layer_grads(
                &mut ps,
                &x,
                seed,
                |p, x| head.forward_joined(p, x),
                |p, c, dy, g| head.backward_joined(p, c, dy, g),
            );
        }
    }
}
