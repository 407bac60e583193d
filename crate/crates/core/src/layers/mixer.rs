//! Feed-forward mixer blocks over a static feature vector.
//!
//! * `Branch`: `ReLU(W₂·ReLU(W₁x + b₁) + b₂)` with widths 128 then 64, the
//!   static-feature branch of the hybrid models.
//! * `Standalone`: an input projection to 128 plus four hidden 128→128
//!   layers, each linear → batch norm → ReLU, then a linear 128→1 readout.

use crate::error::{Error, Result};
use crate::layers::linear::{relu, relu_backward, Linear, LinearCache};
use crate::layers::norm::{BatchNorm, BatchNormCache};
use crate::params::{Gradients, ParamSet};
use crate::tensor::{SeededRng, Tensor};

pub const BRANCH_WIDTHS: [usize; 2] = [128, 64];
pub const STANDALONE_WIDTH: usize = 128;
pub const STANDALONE_HIDDEN_LAYERS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MixerVariant {
    Standalone,
    Branch,
}

#[derive(Clone, Debug)]
pub struct MixerBlock {
    pub variant: MixerVariant,
    pub input_dim: usize,
    pub linears: Vec<Linear>,
    /// One per activated layer for the standalone variant, empty otherwise.
    pub norms: Vec<BatchNorm>,
}

#[derive(Clone, Debug)]
struct MixerLayerCache {
    linear: LinearCache,
    norm: Option<BatchNormCache>,
    /// Input to the ReLU.
    pre: Tensor,
}

#[derive(Clone, Debug)]
pub struct MixerCache {
    layers: Vec<MixerLayerCache>,
    readout: Option<LinearCache>,
}

impl MixerCache {
    pub(crate) fn batch_stats(
        &self,
    ) -> impl Iterator<Item = Option<&crate::layers::norm::BatchStats>> {
        self.layers
            .iter()
            .map(|l| l.norm.as_ref().and_then(|n| n.stats.as_ref()))
    }
}

impl MixerBlock {
    pub fn branch(ps: &mut ParamSet, rng: &mut SeededRng, name: &str, input_dim: usize) -> Self {
        Self::branch_with_widths(ps, rng, name, input_dim, BRANCH_WIDTHS)
    }

    pub fn branch_with_widths(
        ps: &mut ParamSet,
        rng: &mut SeededRng,
        name: &str,
        input_dim: usize,
        widths: [usize; 2],
    ) -> Self {
        let linears = vec![
            Linear::new(ps, rng, &format!("{name}.fc0"), input_dim, widths[0]),
            Linear::new(ps, rng, &format!("{name}.fc1"), widths[0], widths[1]),
        ];
        MixerBlock {
            variant: MixerVariant::Branch,
            input_dim,
            linears,
            norms: Vec::new(),
        }
    }

    pub fn standalone(
        ps: &mut ParamSet,
        rng: &mut SeededRng,
        name: &str,
        input_dim: usize,
    ) -> Self {
        Self::standalone_with_width(
            ps,
            rng,
            name,
            input_dim,
            STANDALONE_WIDTH,
            STANDALONE_HIDDEN_LAYERS,
        )
    }

    pub fn standalone_with_width(
        ps: &mut ParamSet,
        rng: &mut SeededRng,
        name: &str,
        input_dim: usize,
        width: usize,
        hidden_layers: usize,
    ) -> Self {
        let mut linears = Vec::new();
        let mut norms = Vec::new();
        for l in 0..=hidden_layers {
            let fan_in = if l == 0 { input_dim } else { width };
            linears.push(Linear::new(
                ps,
                rng,
                &format!("{name}.fc{l}"),
                fan_in,
                width,
            ));
            norms.push(BatchNorm::new(ps, &format!("{name}.bn{l}"), width));
        }
        linears.push(Linear::new(ps, rng, &format!("{name}.out"), width, 1));
        MixerBlock {
            variant: MixerVariant::Standalone,
            input_dim,
            linears,
            norms,
        }
    }

    pub fn output_dim(&self) -> usize {
        self.linears.last().expect("mixer has layers").out_dim
    }

    /// Trainable scalars: linear layers plus batch-norm gain/bias.
    pub fn param_count(variant: MixerVariant, input_dim: usize) -> usize {
        match variant {
            MixerVariant::Branch => {
                Linear::param_count(input_dim, BRANCH_WIDTHS[0])
                    + Linear::param_count(BRANCH_WIDTHS[0], BRANCH_WIDTHS[1])
            }
            MixerVariant::Standalone => {
                let w = STANDALONE_WIDTH;
                Linear::param_count(input_dim, w)
                    + STANDALONE_HIDDEN_LAYERS * Linear::param_count(w, w)
                    + (STANDALONE_HIDDEN_LAYERS + 1) * 2 * w
                    + Linear::param_count(w, 1)
            }
        }
    }

    /// `training` selects batch statistics over running statistics.
    pub fn forward(
        &self,
        ps: &ParamSet,
        x: &Tensor,
        training: bool,
    ) -> Result<(Tensor, MixerCache)> {
        let (_, n) = x.dims2("mixer forward")?;
        if n != self.input_dim {
            return Err(Error::dim("mixer forward", x.shape(), &[self.input_dim]));
        }
        let activated = match self.variant {
            MixerVariant::Branch => self.linears.len(),
            MixerVariant::Standalone => self.linears.len() - 1,
        };
        let mut h = x.clone();
        let mut layers = Vec::with_capacity(activated);
        for l in 0..activated {
            let (z, linear) = self.linears[l].forward(ps, &h)?;
            let (pre, norm) = match self.norms.get(l) {
                Some(bn) => {
                    let (y, c) = bn.forward(ps, &z, training)?;
                    (y, Some(c))
                }
                None => (z, None),
            };
            h = relu(&pre);
            layers.push(MixerLayerCache { linear, norm, pre });
        }
        let readout = if self.variant == MixerVariant::Standalone {
            let (y, c) = self.linears[activated].forward(ps, &h)?;
            h = y;
            Some(c)
        } else {
            None
        };
        Ok((h, MixerCache { layers, readout }))
    }

    pub fn backward(
        &self,
        ps: &ParamSet,
        cache: &MixerCache,
        dy: &Tensor,
        grads: &mut Gradients,
    ) -> Result<Tensor> {
        let mut d = dy.clone();
        if let Some(rc) = &cache.readout {
            d = self.linears[cache.layers.len()].backward(ps, rc, &d, grads)?;
        }
        for (l, lc) in cache.layers.iter().enumerate().rev() {
            d = relu_backward(&lc.pre, &d);
            if let (Some(bn), Some(nc)) = (self.norms.get(l), &lc.norm) {
                d = bn.backward(ps, nc, &d, grads)?;
            }
            d = self.linears[l].backward(ps, &lc.linear, &d, grads)?;
        }
        Ok(d)
    }

    /// Folds batch statistics recorded in a training forward into the
    /// running estimates.
    pub fn update_running_stats(&self, ps: &mut ParamSet, cache: &MixerCache) {
        for (bn, stats) in self.norms.iter().zip(cache.batch_stats()) {
            if let Some(s) = stats {
                bn.update_running(ps, s);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::gradcheck::{check_layer, check_layer_grads, Sampling};
    use crate::tensor::seeded_uniform;

    fn randomize_biases(ps: &mut ParamSet, m: &MixerBlock, rng: &mut SeededRng) {
        for lin in &m.linears {
            *ps.get_mut(lin.bias) = seeded_uniform(rng, &[lin.out_dim], -0.3, 0.3).unwrap();
        }
    }

    #[test]
    fn layer_counts_follow_variant() {
        let mut ps = ParamSet::new();
        let mut rng = SeededRng::new(0);
        let s = MixerBlock::standalone(&mut ps, &mut rng, "s", 8);
        assert_eq!(s.linears.len(), 6);
        assert_eq!(s.norms.len(), 5);
        assert_eq!(s.output_dim(), 1);
        let b = MixerBlock::branch(&mut ps, &mut rng, "b", 8);
        assert_eq!(
            b.linears.iter().map(|l| l.out_dim).collect::<Vec<_>>(),
            vec![128, 64]
        );
        assert_eq!(b.output_dim(), 64);
    }

    #[test]
    fn branch_parameter_count() {
        let mut ps = ParamSet::new();
        MixerBlock::branch(&mut ps, &mut SeededRng::new(0), "b", 8);
        assert_eq!(ps.trainable_count(), 8 * 128 + 128 + 128 * 64 + 64);
        assert_eq!(MixerBlock::param_count(MixerVariant::Branch, 8), 9_408);
        let mut ps = ParamSet::new();
        MixerBlock::standalone(&mut ps, &mut SeededRng::new(0), "s", 8);
        assert_eq!(
            ps.trainable_count(),
            MixerBlock::param_count(MixerVariant::Standalone, 8)
        );
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let mut ps = ParamSet::new();
        let m = MixerBlock::branch(&mut ps, &mut SeededRng::new(0), "b", 3);
        for e in ps.entries_mut() {
            e.value.data_mut().fill(0.0);
        }
        let x = seeded_uniform(&mut SeededRng::new(1), &[4, 3], -3.0, 3.0).unwrap();
        let (y, _) = m.forward(&ps, &x, false).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn relu_clamps_negative_preactivation() {
        let mut ps = ParamSet::new();
        let m = MixerBlock::branch_with_widths(&mut ps, &mut SeededRng::new(0), "b", 2, [1, 1]);
        ps.assign(
            "b.fc0.weight",
            Tensor::new(&[1, 2], vec![1.0, -1.0]).unwrap(),
        )
        .unwrap();
        ps.assign("b.fc1.weight", Tensor::new(&[1, 1], vec![1.0]).unwrap())
            .unwrap();
        ps.assign("b.fc1.bias", Tensor::from_vec(vec![0.0]))
            .unwrap();
        let x = Tensor::new(&[1, 2], vec![2.0, 3.0]).unwrap();
        let (y, _) = m.forward(&ps, &x, false).unwrap();
        assert_eq!(y.data(), &[0.0]);
    }

    #[test]
    fn branch_matches_loop_oracle() {
        let mut ps = ParamSet::new();
        let mut rng = SeededRng::new(4);
        let m = MixerBlock::branch(&mut ps, &mut rng, "b", 5);
        randomize_biases(&mut ps, &m, &mut rng);
        let x = seeded_uniform(&mut rng, &[3, 5], -1.0, 1.0).unwrap();
        let (y, _) = m.forward(&ps, &x, false).unwrap();
        let (w1, b1) = (ps.get(m.linears[0].weight), ps.get(m.linears[0].bias));
        let (w2, b2) = (ps.get(m.linears[1].weight), ps.get(m.linears[1].bias));
        for s in 0..3 {
            let h1: Vec<f64> = (0..128)
                .map(|r| {
                    (b1.data()[r] + (0..5).map(|c| w1.at2(r, c) * x.at2(s, c)).sum::<f64>())
                        .max(0.0)
                })
                .collect();
            for r in 0..64 {
                let h2 =
                    (b2.data()[r] + (0..128).map(|c| w2.at2(r, c) * h1[c]).sum::<f64>()).max(0.0);
                assert!((y.at2(s, r) - h2).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn degenerate_training_batch_is_rejected() {
        let mut ps = ParamSet::new();
        let m = MixerBlock::standalone(&mut ps, &mut SeededRng::new(0), "s", 3);
        let x = Tensor::zeros(&[1, 3]);
        assert!(matches!(
            m.forward(&ps, &x, true),
            Err(Error::DegenerateBatch(1))
        ));
        assert!(m.forward(&ps, &x, false).is_ok());
    }

    #[test]
    fn gradients_small_widths() {
        for seed in 0..3 {
            let mut ps = ParamSet::new();
            let mut rng = SeededRng::new(seed);
            let b = MixerBlock::branch_with_widths(&mut ps, &mut rng, "b", 5, [8, 6]);
            randomize_biases(&mut ps, &b, &mut rng);
            let s = MixerBlock::standalone_with_width(&mut ps, &mut rng, "s", 5, 8, 4);
            randomize_biases(&mut ps, &s, &mut rng);
            let x = seeded_uniform(&mut rng, &[4, 5], -1.0, 1.0).unwrap();
            check_layer_grads(
                &mut ps,
                &x,
                seed,
                |p, x| b.forward(p, x, true),
                |p, c, dy, g| b.backward(p, c, dy, g),
            );
            for training in [true, false] {
                check_layer_grads(
                    &mut ps,
                    &x,
                    seed,
                    |p, x| s.forward(p, x, training),
                    |p, c, dy, g| s.backward(p, c, dy, g),
                );
            }
        }
    }

    #[test]
    fn gradients_full_widths_sampled() {
        let mut ps = ParamSet::new();
        let mut rng = SeededRng::new(10);
        let s = MixerBlock::standalone(&mut ps, &mut rng, "s", 6);
        randomize_biases(&mut ps, &s, &mut rng);
        let x = seeded_uniform(&mut rng, &[4, 6], -1.0, 1.0).unwrap();
        let sampling = Sampling {
            max_per_tensor: Some(24),
            seed: 10,
        };
        let report = check_layer(
            &mut ps,
            &x,
            10,
            sampling,
            |p, x| s.forward(p, x, true),
            |p, c, dy, g| s.backward(p, c, dy, g),
        );
        assert!(report.passed(), "{report:?}");
    }
}
