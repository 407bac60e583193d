//! Stacked LSTM with full backpropagation through time.
//!
//! Gate order everywhere is input, forget, output, candidate:
//!
//! ```text
//! i = σ(W_i x + U_i h + b_i)    f = σ(W_f x + U_f h + b_f)
//! o = σ(W_o x + U_o h + b_o)    g = tanh(W_g x + U_g h + b_g)
//! c = f ⊙ c_prev + i ⊙ g        h = o ⊙ tanh(c)
//! ```
//!
//! Internally sequences are kept time-major (`row = t·B + b`) so one time
//! step is a contiguous `[B×H]` block.

use crate::error::{Error, Result};
use crate::layers::dropout::{apply_mask, dropout_apply};
use crate::params::{Gradients, ParamId, ParamSet};
use crate::tensor::{accumulate_col_sums, add_row_bias, gemm, SeededRng, Tensor};

pub const GATE_NAMES: [&str; 4] = ["i", "f", "o", "g"];

#[derive(Clone, Debug)]
pub struct LstmLayer {
    pub in_dim: usize,
    pub hidden: usize,
    /// `[hidden×in_dim]` per gate.
    pub w: [ParamId; 4],
    /// `[hidden×hidden]` per gate.
    pub u: [ParamId; 4],
    pub b: [ParamId; 4],
}

#[derive(Clone, Debug)]
pub struct LstmStack {
    pub input_size: usize,
    pub hidden_size: usize,
    pub layers: Vec<LstmLayer>,
}

#[derive(Clone, Debug)]
pub struct LstmLayerCache {
    input: Vec<f64>,
    /// Activated gates i, f, o, g, each `[(T·B)×H]`.
    pub gates: [Vec<f64>; 4],
    pub cell: Vec<f64>,
    tanh_cell: Vec<f64>,
    pub hidden: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct LstmCache {
    batch: usize,
    steps: usize,
    pub layers: Vec<LstmLayerCache>,
    /// Dropout multipliers applied between layer `l` and `l+1`.
    masks: Vec<Option<Vec<f64>>>,
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub(crate) fn to_time_major(x: &[f64], b: usize, t: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; b * t * d];
    for bi in 0..b {
        for ti in 0..t {
            let src = (bi * t + ti) * d;
            let dst = (ti * b + bi) * d;
            out[dst..dst + d].copy_from_slice(&x[src..src + d]);
        }
    }
    out
}

pub(crate) fn to_batch_major(x: &[f64], b: usize, t: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; b * t * d];
    for ti in 0..t {
        for bi in 0..b {
            let src = (ti * b + bi) * d;
            let dst = (bi * t + ti) * d;
            out[dst..dst + d].copy_from_slice(&x[src..src + d]);
        }
    }
    out
}

impl LstmLayer {
    fn new(
        ps: &mut ParamSet,
        rng: &mut SeededRng,
        name: &str,
        in_dim: usize,
        hidden: usize,
    ) -> Self {
        let w = GATE_NAMES
            .map(|g| ps.add_uniform(format!("{name}.w_{g}"), &[hidden, in_dim], in_dim, rng));
        let u = GATE_NAMES
            .map(|g| ps.add_uniform(format!("{name}.u_{g}"), &[hidden, hidden], hidden, rng));
        let b = GATE_NAMES.map(|g| ps.add(format!("{name}.b_{g}"), Tensor::zeros(&[hidden]), true));
        LstmLayer {
            in_dim,
            hidden,
            w,
            u,
            b,
        }
    }

    fn forward(
        &self,
        ps: &ParamSet,
        input: Vec<f64>,
        batch: usize,
        steps: usize,
    ) -> LstmLayerCache {
        let h_dim = self.hidden;
        let rows = batch * steps;
        let bh = batch * h_dim;
        let mut gates: [Vec<f64>; 4] = std::array::from_fn(|k| {
            let mut pre = vec![0.0; rows * h_dim];
            gemm(
                rows,
                self.in_dim,
                h_dim,
                &input,
                false,
                ps.get(self.w[k]).data(),
                true,
                &mut pre,
                0.0,
            );
            add_row_bias(&mut pre, ps.get(self.b[k]).data());
            pre
        });
        let mut cell = vec![0.0; rows * h_dim];
        let mut tanh_cell = vec![0.0; rows * h_dim];
        let mut hidden = vec![0.0; rows * h_dim];
        for t in 0..steps {
            let block = t * bh..(t + 1) * bh;
            if t > 0 {
                let prev = &hidden[(t - 1) * bh..t * bh];
                for k in 0..4 {
                    gemm(
                        batch,
                        h_dim,
                        h_dim,
                        prev,
                        false,
                        ps.get(self.u[k]).data(),
                        true,
                        &mut gates[k][block.clone()],
                        1.0,
                    );
                }
            }
            for idx in block {
                let i = sigmoid(gates[0][idx]);
                let f = sigmoid(gates[1][idx]);
                let o = sigmoid(gates[2][idx]);
                let g = gates[3][idx].tanh();
                let c_prev = if t > 0 { cell[idx - bh] } else { 0.0 };
                let c = f * c_prev + i * g;
                let tc = c.tanh();
                gates[0][idx] = i;
                gates[1][idx] = f;
                gates[2][idx] = o;
                gates[3][idx] = g;
                cell[idx] = c;
                tanh_cell[idx] = tc;
                hidden[idx] = o * tc;
            }
        }
        LstmLayerCache {
            input,
            gates,
            cell,
            tanh_cell,
            hidden,
        }
    }

    /// `dh_seq` is the gradient w.r.t. every emitted hidden state; returns
    /// the gradient w.r.t. the layer input, both time-major.
    fn backward(
        &self,
        ps: &ParamSet,
        cache: &LstmLayerCache,
        dh_seq: &[f64],
        batch: usize,
        steps: usize,
        grads: &mut Gradients,
    ) -> Vec<f64> {
        let h_dim = self.hidden;
        let rows = batch * steps;
        let bh = batch * h_dim;
        let [gi, gf, go, gg] = &cache.gates;
        let mut da: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; rows * h_dim]);
        let mut dh_next = vec![0.0; bh];
        let mut dc_next = vec![0.0; bh];
        for t in (0..steps).rev() {
            for e in 0..bh {
                let idx = t * bh + e;
                let (i, f, o, g) = (gi[idx], gf[idx], go[idx], gg[idx]);
                let tc = cache.tanh_cell[idx];
                let dh = dh_seq[idx] + dh_next[e];
                let dc = dc_next[e] + dh * o * (1.0 - tc * tc);
                let c_prev = if t > 0 { cache.cell[idx - bh] } else { 0.0 };
                da[0][idx] = dc * g * i * (1.0 - i);
                da[1][idx] = dc * c_prev * f * (1.0 - f);
                da[2][idx] = dh * tc * o * (1.0 - o);
                da[3][idx] = dc * i * (1.0 - g * g);
                dc_next[e] = dc * f;
            }
            if t > 0 {
                let block = t * bh..(t + 1) * bh;
                for k in 0..4 {
                    let beta = if k == 0 { 0.0 } else { 1.0 };
                    gemm(
                        batch,
                        h_dim,
                        h_dim,
                        &da[k][block.clone()],
                        false,
                        ps.get(self.u[k]).data(),
                        false,
                        &mut dh_next,
                        beta,
                    );
                }
            }
        }
        let mut dx = vec![0.0; rows * self.in_dim];
        for k in 0..4 {
            gemm(
                h_dim,
                rows,
                self.in_dim,
                &da[k],
                true,
                &cache.input,
                false,
                grads.get_mut(self.w[k]),
                1.0,
            );
            if steps > 1 {
                gemm(
                    h_dim,
                    rows - batch,
                    h_dim,
                    &da[k][bh..],
                    true,
                    &cache.hidden[..rows * h_dim - bh],
                    false,
                    grads.get_mut(self.u[k]),
                    1.0,
                );
            }
            accumulate_col_sums(&da[k], grads.get_mut(self.b[k]));
            let beta = if k == 0 { 0.0 } else { 1.0 };
            gemm(
                rows,
                h_dim,
                self.in_dim,
                &da[k],
                false,
                ps.get(self.w[k]).data(),
                false,
                &mut dx,
                beta,
            );
        }
        dx
    }
}

impl LstmStack {
    pub fn new(
        ps: &mut ParamSet,
        rng: &mut SeededRng,
        name: &str,
        input_size: usize,
        hidden_size: usize,
        num_layers: usize,
    ) -> Self {
        let layers = (0..num_layers)
            .map(|l| {
                let in_dim = if l == 0 { input_size } else { hidden_size };
                LstmLayer::new(ps, rng, &format!("{name}.l{l}"), in_dim, hidden_size)
            })
            .collect();
        LstmStack {
            input_size,
            hidden_size,
            layers,
        }
    }

    /// `4·H·(in+H) + 4·H` per layer.
    pub fn param_count(input_size: usize, hidden: usize, num_layers: usize) -> usize {
        (0..num_layers)
            .map(|l| {
                let in_dim = if l == 0 { input_size } else { hidden };
                4 * hidden * (in_dim + hidden) + 4 * hidden
            })
            .sum()
    }

    /// Runs the stack over `x: [B×T×D]` from zero initial states and returns
    /// the top layer's hidden sequence `[B×T×H]`. `between_layers` applies
    /// inverted dropout to each non-final layer's output.
    pub fn forward(
        &self,
        ps: &ParamSet,
        x: &Tensor,
        between_layers: Option<(f64, &mut SeededRng)>,
    ) -> Result<(Tensor, LstmCache)> {
        let (batch, steps, d) = x.dims3("lstm forward")?;
        if d != self.input_size {
            return Err(Error::dim(
                "lstm forward",
                x.shape(),
                &[batch, steps, self.input_size],
            ));
        }
        let mut dropout = between_layers;
        let mut input = to_time_major(x.data(), batch, steps, d);
        let mut layers = Vec::with_capacity(self.layers.len());
        let mut masks = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let cache = layer.forward(ps, input, batch, steps);
            let mut next = cache.hidden.clone();
            let mut mask = None;
            if l + 1 < self.layers.len() {
                if let Some((rate, rng)) = dropout.as_mut() {
                    let t = Tensor::new(&[next.len()], next)?;
                    let (dropped, m) = dropout_apply(&t, *rate, rng, true)?;
                    next = dropped.into_data();
                    mask = m;
                }
            }
            masks.push(mask);
            layers.push(cache);
            input = next;
        }
        let out = to_batch_major(&input, batch, steps, self.hidden_size);
        Ok((
            Tensor::new(&[batch, steps, self.hidden_size], out)?,
            LstmCache {
                batch,
                steps,
                layers,
                masks,
            },
        ))
    }

    /// Gradient of the loss w.r.t. the top hidden sequence in, gradient
    /// w.r.t. the input sequence out.
    pub fn backward(
        &self,
        ps: &ParamSet,
        cache: &LstmCache,
        dy: &Tensor,
        grads: &mut Gradients,
    ) -> Result<Tensor> {
        let (batch, steps) = (cache.batch, cache.steps);
        if dy.shape() != [batch, steps, self.hidden_size] {
            return Err(Error::dim(
                "lstm backward",
                dy.shape(),
                &[batch, steps, self.hidden_size],
            ));
        }
        let mut d = to_time_major(dy.data(), batch, steps, self.hidden_size);
        for l in (0..self.layers.len()).rev() {
            let mut dx = self.layers[l].backward(ps, &cache.layers[l], &d, batch, steps, grads);
            if l > 0 {
                if let Some(mask) = &cache.masks[l - 1] {
                    dx = apply_mask(&Tensor::from_vec(dx), mask).into_data();
                }
            }
            d = dx;
        }
        let out = to_batch_major(&d, batch, steps, self.input_size);
        Tensor::new(&[batch, steps, self.input_size], out)
    }
}
