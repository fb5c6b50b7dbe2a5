use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::sigmoid;
use super::tensor::{gemm, Tensor};
use crate::error::{domain, Result};

/// One stacked LSTM layer. Gate blocks are ordered input, forget, cell, output
/// along the `4 * hidden` axis, with a single bias per gate unit.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer {
    pub inputs: usize,
    /// `[inputs, 4 * hidden]`
    pub w_ih: Vec<f64>,
    /// `[hidden, 4 * hidden]`
    pub w_hh: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Multi-layer LSTM over `[batch, time, features]` input that returns the top
/// layer's final hidden state `[batch, hidden]`. State starts at zero for
/// every sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    pub inputs: usize,
    pub hidden: usize,
    pub layers: Vec<LstmLayer>,
}

#[derive(Debug, Clone)]
struct LayerTrace {
    /// Time-major input rows `[time * batch, inputs]`.
    input: Vec<f64>,
    /// Per step: activated gates `[batch, 4H]`, cell state and its tanh.
    gates: Vec<Vec<f64>>,
    cells: Vec<Vec<f64>>,
    tanh_cells: Vec<Vec<f64>>,
    hiddens: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct LstmCache {
    batch: usize,
    steps: usize,
    traces: Vec<LayerTrace>,
}

impl Lstm {
    pub fn new(inputs: usize, hidden: usize, layers: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut stack = Vec::with_capacity(layers);
        for l in 0..layers {
            let fan_in = if l == 0 { inputs } else { hidden };
            let limit = (6.0 / (fan_in + 4 * hidden) as f64).sqrt();
            let w_ih = (0..fan_in * 4 * hidden)
                .map(|_| rng.random_range(-limit..limit))
                .collect();
            let mut w_hh = vec![0.0; hidden * 4 * hidden];
            for gate in 0..4 {
                let q = orthogonal(hidden, rng);
                for r in 0..hidden {
                    for c in 0..hidden {
                        w_hh[r * 4 * hidden + gate * hidden + c] = q[(r, c)];
                    }
                }
            }
            let mut bias = vec![0.0; 4 * hidden];
            bias[hidden..2 * hidden].iter_mut().for_each(|b| *b = 1.0);
            stack.push(LstmLayer {
                inputs: fan_in,
                w_ih,
                w_hh,
                bias,
            });
        }
        Self {
            inputs,
            hidden,
            layers: stack,
        }
    }

    pub fn params(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.w_ih.as_slice(), l.w_hh.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    l.w_ih.as_mut_slice(),
                    l.w_hh.as_mut_slice(),
                    l.bias.as_mut_slice(),
                ]
            })
            .collect()
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, LstmCache)> {
        let shape = x.shape();
        if shape.len() != 3 || shape[2] != self.inputs {
            return domain(format!(
                "lstm expects [batch, time, {}], got {shape:?}",
                self.inputs
            ));
        }
        let (batch, steps) = (shape[0], shape[1]);
        let h4 = 4 * self.hidden;
        let mut input = vec![0.0; steps * batch * self.inputs];
        for b in 0..batch {
            for t in 0..steps {
                let src = (b * steps + t) * self.inputs;
                let dst = (t * batch + b) * self.inputs;
                input[dst..dst + self.inputs].copy_from_slice(&x.data()[src..src + self.inputs]);
            }
        }
        let mut traces = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let mut pre = Vec::with_capacity(steps * batch * h4);
            for _ in 0..steps * batch {
                pre.extend_from_slice(&layer.bias);
            }
            gemm(
                steps * batch,
                layer.inputs,
                h4,
                1.0,
                &input,
                false,
                &layer.w_ih,
                false,
                1.0,
                &mut pre,
            );
            let mut trace = LayerTrace {
                input,
                gates: Vec::with_capacity(steps),
                cells: Vec::with_capacity(steps),
                tanh_cells: Vec::with_capacity(steps),
                hiddens: Vec::with_capacity(steps),
            };
            let zeros = vec![0.0; batch * self.hidden];
            for t in 0..steps {
                let mut g = pre[t * batch * h4..(t + 1) * batch * h4].to_vec();
                let h_prev = trace.hiddens.last().unwrap_or(&zeros);
                gemm(
                    batch,
                    self.hidden,
                    h4,
                    1.0,
                    h_prev,
                    false,
                    &layer.w_hh,
                    false,
                    1.0,
                    &mut g,
                );
                let c_prev = trace.cells.last().unwrap_or(&zeros);
                let mut c = vec![0.0; batch * self.hidden];
                let mut tc = vec![0.0; batch * self.hidden];
                let mut h = vec![0.0; batch * self.hidden];
                for b in 0..batch {
                    let row = &mut g[b * h4..(b + 1) * h4];
                    let hs = self.hidden;
                    for j in 0..hs {
                        let i = sigmoid(row[j]);
                        let f = sigmoid(row[hs + j]);
                        let gg = row[2 * hs + j].tanh();
                        let o = sigmoid(row[3 * hs + j]);
                        row[j] = i;
                        row[hs + j] = f;
                        row[2 * hs + j] = gg;
                        row[3 * hs + j] = o;
                        let k = b * hs + j;
                        c[k] = f * c_prev[k] + i * gg;
                        tc[k] = c[k].tanh();
                        h[k] = o * tc[k];
                    }
                }
                trace.gates.push(g);
                trace.cells.push(c);
                trace.tanh_cells.push(tc);
                trace.hiddens.push(h);
            }
            input = trace.hiddens.concat();
            traces.push(trace);
        }
        let last = traces
            .last()
            .and_then(|t| t.hiddens.last())
            .cloned()
            .unwrap_or_else(|| vec![0.0; batch * self.hidden]);
        Ok((
            Tensor::from_vec(&[batch, self.hidden], last)?,
            LstmCache {
                batch,
                steps,
                traces,
            },
        ))
    }

    /// Full backpropagation through time from a gradient on the final hidden
    /// state of the top layer.
    pub fn backward(&self, cache: &LstmCache, grad: &Tensor) -> Result<(Tensor, Vec<Vec<f64>>)> {
        let (batch, steps, hs) = (cache.batch, cache.steps, self.hidden);
        let h4 = 4 * hs;
        if grad.shape() != [batch, hs] {
            return domain("lstm gradient shape does not match its forward pass");
        }
        // Gradient arriving at each step's hidden output, time-major.
        let mut dh_ext = vec![vec![0.0; batch * hs]; steps];
        dh_ext[steps - 1].copy_from_slice(grad.data());
        let mut grads: Vec<Vec<f64>> = Vec::with_capacity(3 * self.layers.len());
        let mut dx_time_major = Vec::new();
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let tr = &cache.traces[li];
            let mut d_pre = vec![0.0; steps * batch * h4];
            let mut dw_hh = vec![0.0; hs * h4];
            let mut dh_next = vec![0.0; batch * hs];
            let mut dc_next = vec![0.0; batch * hs];
            let zeros = vec![0.0; batch * hs];
            for t in (0..steps).rev() {
                let g = &tr.gates[t];
                let c_prev = if t > 0 { &tr.cells[t - 1] } else { &zeros };
                let tc = &tr.tanh_cells[t];
                let da = &mut d_pre[t * batch * h4..(t + 1) * batch * h4];
                for b in 0..batch {
                    for j in 0..hs {
                        let k = b * hs + j;
                        let row = b * h4;
                        let (i, f, gg, o) = (
                            g[row + j],
                            g[row + hs + j],
                            g[row + 2 * hs + j],
                            g[row + 3 * hs + j],
                        );
                        let dh = dh_ext[t][k] + dh_next[k];
                        let dc = dh * o * (1.0 - tc[k] * tc[k]) + dc_next[k];
                        da[row + j] = dc * gg * i * (1.0 - i);
                        da[row + hs + j] = dc * c_prev[k] * f * (1.0 - f);
                        da[row + 2 * hs + j] = dc * i * (1.0 - gg * gg);
                        da[row + 3 * hs + j] = dh * tc[k] * o * (1.0 - o);
                        dc_next[k] = dc * f;
                    }
                }
                if t > 0 {
                    let h_prev = &tr.hiddens[t - 1];
                    gemm(hs, batch, h4, 1.0, h_prev, true, da, false, 1.0, &mut dw_hh);
                    gemm(
                        batch,
                        h4,
                        hs,
                        1.0,
                        da,
                        false,
                        &layer.w_hh,
                        true,
                        0.0,
                        &mut dh_next,
                    );
                }
            }
            let mut dw_ih = vec![0.0; layer.inputs * h4];
            gemm(
                layer.inputs,
                steps * batch,
                h4,
                1.0,
                &tr.input,
                true,
                &d_pre,
                false,
                0.0,
                &mut dw_ih,
            );
            let mut dbias = vec![0.0; h4];
            for r in 0..steps * batch {
                for (acc, v) in dbias.iter_mut().zip(&d_pre[r * h4..(r + 1) * h4]) {
                    *acc += v;
                }
            }
            let mut dx = vec![0.0; steps * batch * layer.inputs];
            gemm(
                steps * batch,
                h4,
                layer.inputs,
                1.0,
                &d_pre,
                false,
                &layer.w_ih,
                true,
                0.0,
                &mut dx,
            );
            grads.push(dbias);
            grads.push(dw_hh);
            grads.push(dw_ih);
            if li > 0 {
                for (t, slot) in dh_ext.iter_mut().enumerate() {
                    slot.copy_from_slice(&dx[t * batch * hs..(t + 1) * batch * hs]);
                }
            } else {
                dx_time_major = dx;
            }
        }
        grads.reverse();
        let mut dx = vec![0.0; batch * steps * self.inputs];
        for b in 0..batch {
            for t in 0..steps {
                let src = (t * batch + b) * self.inputs;
                let dst = (b * steps + t) * self.inputs;
                dx[dst..dst + self.inputs].copy_from_slice(&dx_time_major[src..src + self.inputs]);
            }
        }
        Ok((Tensor::from_vec(&[batch, steps, self.inputs], dx)?, grads))
    }
}

fn orthogonal(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = a.qr();
    let (mut q, r) = (qr.q(), qr.r());
    // Sign-correct so the distribution is uniform over orthogonal matrices.
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}
