//! Parameterized layers with forward passes and exact backward passes.
//!
//! Every layer reads its weights from a shared [`ParamSet`](crate::params::ParamSet),
//! returns a cache from `forward`, and accumulates parameter gradients in
//! `backward` while returning the gradient w.r.t. its input.

pub mod attention;
pub mod dropout;
pub mod fusion;
pub mod gradcheck;
pub mod linear;
pub mod lstm;
pub mod mixer;
pub mod norm;
pub mod transformer;

pub use attention::AttentionPool;
pub use dropout::dropout_apply;
pub use fusion::FusionHead;
pub use linear::Linear;
pub use lstm::LstmStack;
pub use mixer::{MixerBlock, MixerVariant};
pub use norm::{BatchNorm, LayerNorm};
pub use transformer::TransformerEncoderBlock;

use crate::error::Result;
use crate::tensor::Tensor;

/// `[B×T×d] → [B×d]`, the final time step.
pub fn last_step(y: &Tensor) -> Result<Tensor> {
    let (b, t, d) = y.dims3("last step")?;
    let mut out = Vec::with_capacity(b * d);
    for bi in 0..b {
        out.extend_from_slice(&y.data()[(bi * t + t - 1) * d..][..d]);
    }
    Tensor::new(&[b, d], out)
}

/// Gradient of [`last_step`]: scatters `[B×d]` into zeros of `[B×T×d]`.
pub fn last_step_backward(dy: &Tensor, steps: usize) -> Result<Tensor> {
    let (b, d) = dy.dims2("last step backward")?;
    let mut out = vec![0.0; b * steps * d];
    for bi in 0..b {
        out[(bi * steps + steps - 1) * d..][..d].copy_from_slice(dy.row(bi));
    }
    Tensor::new(&[b, steps, d], out)
}
