//! Stacked LSTM with a linear output head, forward pass and full BPTT.
//!
//! All parameters live in one flat vector. Per layer, in order: input weights
//! `Wx` (4h x in), recurrent weights `Wh` (4h x h), bias `b` (4h), each
//! row-major with gate rows ordered input, forget, candidate, output. The head
//! follows: weights (h_last) then one bias.

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct LayerLayout {
    input_dim: usize,
    hidden_dim: usize,
    wx: usize,
    wh: usize,
    b: usize,
}

impl LayerLayout {
    fn gate_rows(&self) -> usize {
        4 * self.hidden_dim
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmNetwork {
    input_dim: usize,
    hidden: Vec<usize>,
    layers: Vec<LayerLayout>,
    head_w: usize,
    head_b: usize,
    params: Vec<f64>,
}

/// Per-layer activations kept for the backward pass.
#[derive(Debug, Clone)]
struct LayerTrace {
    /// Layer inputs, `T x in`.
    xs: Vec<f64>,
    /// Activated gates `[i, f, g, o]`, `T x 4h`.
    gates: Vec<f64>,
    /// Cell states, `T x h`.
    cs: Vec<f64>,
    /// tanh of cell states, `T x h`.
    tanh_cs: Vec<f64>,
    /// Hidden outputs, `T x h`.
    hs: Vec<f64>,
}

/// Forward-pass cache.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    steps: usize,
    layers: Vec<LayerTrace>,
    outputs: Vec<f64>,
}

impl ForwardCache {
    pub fn outputs(&self) -> &[f64] {
        &self.outputs
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl LstmNetwork {
    /// All-zero network.
    pub fn zeros(input_dim: usize, hidden: &[usize]) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::invalid("LSTM input dimension must be >= 1"));
        }
        if hidden.is_empty() || hidden.contains(&0) {
            return Err(Error::invalid("LSTM needs at least one layer with hidden size >= 1"));
        }
        let mut layers = Vec::with_capacity(hidden.len());
        let mut offset = 0;
        let mut in_dim = input_dim;
        for &h in hidden {
            let wx = offset;
            let wh = wx + 4 * h * in_dim;
            let b = wh + 4 * h * h;
            offset = b + 4 * h;
            layers.push(LayerLayout {
                input_dim: in_dim,
                hidden_dim: h,
                wx,
                wh,
                b,
            });
            in_dim = h;
        }
        let head_w = offset;
        let head_b = head_w + in_dim;
        let params = vec![0.0; head_b + 1];
        Ok(Self {
            input_dim,
            hidden: hidden.to_vec(),
            layers,
            head_w,
            head_b,
            params,
        })
    }

    /// Uniform `+-1/sqrt(fan_in)` weights with forget-gate bias 1.
    pub fn init_random<R: Rng>(input_dim: usize, hidden: &[usize], rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(input_dim, hidden)?;
        for layer in net.layers.clone() {
            let h = layer.hidden_dim;
            let bound = 1.0 / ((layer.input_dim + h) as f64).sqrt();
            for p in &mut net.params[layer.wx..layer.b] {
                *p = rng.random_range(-bound..bound);
            }
            for p in &mut net.params[layer.b..layer.b + 4 * h] {
                *p = 0.0;
            }
            for p in &mut net.params[layer.b + h..layer.b + 2 * h] {
                *p = 1.0;
            }
        }
        let last = *net.hidden.last().expect("non-empty");
        let bound = 1.0 / (last as f64).sqrt();
        for p in &mut net.params[net.head_w..net.head_b] {
            *p = rng.random_range(-bound..bound);
        }
        net.params[net.head_b] = 0.0;
        Ok(net)
    }

    /// Rebuilds a network from a flat parameter vector.
    pub fn from_params(input_dim: usize, hidden: &[usize], params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(input_dim, hidden)?;
        if params.len() != net.params.len() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                net.params.len(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("network parameters must be finite"));
        }
        net.params = params;
        Ok(net)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Runs the network over a sequence starting from zero hidden and cell states.
    pub fn forward(&self, inputs: &[Vec<f64>]) -> Result<ForwardCache> {
        for (t, x) in inputs.iter().enumerate() {
            if x.len() != self.input_dim {
                return Err(Error::invalid(format!(
                    "input at step {t} has dimension {} but the network expects {}",
                    x.len(),
                    self.input_dim
                )));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("input at step {t} is not finite")));
            }
        }
        let steps = inputs.len();
        let mut layer_input: Vec<f64> = inputs.iter().flatten().copied().collect();
        let mut traces = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let trace = self.layer_forward(layer, layer_input, steps);
            layer_input = trace.hs.clone();
            traces.push(trace);
        }
        let h_last = *self.hidden.last().expect("non-empty");
        let w = &self.params[self.head_w..self.head_b];
        let b = self.params[self.head_b];
        let top = &traces.last().expect("non-empty").hs;
        let outputs = (0..steps)
            .map(|t| {
                let h = &top[t * h_last..(t + 1) * h_last];
                b + w.iter().zip(h).map(|(a, c)| a * c).sum::<f64>()
            })
            .collect();
        Ok(ForwardCache {
            steps,
            layers: traces,
            outputs,
        })
    }

    fn layer_forward(&self, layer: &LayerLayout, xs: Vec<f64>, steps: usize) -> LayerTrace {
        let (n_in, h) = (layer.input_dim, layer.hidden_dim);
        let rows = layer.gate_rows();
        let wx = &self.params[layer.wx..layer.wh];
        let wh = &self.params[layer.wh..layer.b];
        let bias = &self.params[layer.b..layer.b + rows];
        let mut gates = vec![0.0; steps * rows];
        let mut cs = vec![0.0; steps * h];
        let mut tanh_cs = vec![0.0; steps * h];
        let mut hs = vec![0.0; steps * h];
        let zeros = vec![0.0; h];
        let mut z = vec![0.0; rows];
        for t in 0..steps {
            let x = &xs[t * n_in..(t + 1) * n_in];
            let (h_prev, c_prev) = if t == 0 {
                (&zeros[..], &zeros[..])
            } else {
                (&hs[(t - 1) * h..t * h], &cs[(t - 1) * h..t * h])
            };
            for r in 0..rows {
                let wxr = &wx[r * n_in..(r + 1) * n_in];
                let whr = &wh[r * h..(r + 1) * h];
                let mut acc = bias[r];
                acc += wxr.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                acc += whr.iter().zip(h_prev).map(|(a, b)| a * b).sum::<f64>();
                z[r] = acc;
            }
            let g_row = &mut gates[t * rows..(t + 1) * rows];
            for j in 0..h {
                g_row[j] = sigmoid(z[j]);
                g_row[h + j] = sigmoid(z[h + j]);
                g_row[2 * h + j] = z[2 * h + j].tanh();
                g_row[3 * h + j] = sigmoid(z[3 * h + j]);
            }
            let mut c_t = vec![0.0; h];
            for j in 0..h {
                c_t[j] = g_row[h + j] * c_prev[j] + g_row[j] * g_row[2 * h + j];
            }
            for j in 0..h {
                let tc = c_t[j].tanh();
                tanh_cs[t * h + j] = tc;
                hs[t * h + j] = g_row[3 * h + j] * tc;
                cs[t * h + j] = c_t[j];
            }
        }
        LayerTrace {
            xs,
            gates,
            cs,
            tanh_cs,
            hs,
        }
    }

    /// Gradient of `loss` with respect to every parameter, given `d loss / d output`.
    pub fn backward(&self, cache: &ForwardCache, d_outputs: &[f64]) -> Result<Vec<f64>> {
        if d_outputs.len() != cache.steps {
            return Err(Error::invalid(format!(
                "got {} output gradients for a {}-step sequence",
                d_outputs.len(),
                cache.steps
            )));
        }
        let steps = cache.steps;
        let mut grad = vec![0.0; self.params.len()];
        let h_last = *self.hidden.last().expect("non-empty");
        let head = &self.params[self.head_w..self.head_b];
        let top = &cache.layers.last().expect("non-empty").hs;

        let mut d_above = vec![0.0; steps * h_last];
        for t in 0..steps {
            let dy = d_outputs[t];
            grad[self.head_b] += dy;
            let h = &top[t * h_last..(t + 1) * h_last];
            for j in 0..h_last {
                grad[self.head_w + j] += dy * h[j];
                d_above[t * h_last + j] = dy * head[j];
            }
        }

        for (layer, trace) in self.layers.iter().zip(&cache.layers).rev() {
            d_above = self.layer_backward(layer, trace, &d_above, steps, &mut grad);
        }
        Ok(grad)
    }

    /// Backpropagates one layer; returns the gradient with respect to its inputs.
    fn layer_backward(
        &self,
        layer: &LayerLayout,
        trace: &LayerTrace,
        d_h_above: &[f64],
        steps: usize,
        grad: &mut [f64],
    ) -> Vec<f64> {
        let (n_in, h) = (layer.input_dim, layer.hidden_dim);
        let rows = layer.gate_rows();
        let wx = &self.params[layer.wx..layer.wh];
        let wh = &self.params[layer.wh..layer.b];
        let mut d_x = vec![0.0; steps * n_in];
        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        let mut dz = vec![0.0; rows];
        let zeros = vec![0.0; h];

        for t in (0..steps).rev() {
            let g = &trace.gates[t * rows..(t + 1) * rows];
            let tc = &trace.tanh_cs[t * h..(t + 1) * h];
            let c_prev = if t == 0 {
                &zeros[..]
            } else {
                &trace.cs[(t - 1) * h..t * h]
            };
            for j in 0..h {
                let (i, f, cand, o) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
                let dh = d_h_above[t * h + j] + dh_next[j];
                let d_o = dh * tc[j];
                let dc = dc_next[j] + dh * o * (1.0 - tc[j] * tc[j]);
                dz[j] = dc * cand * i * (1.0 - i);
                dz[h + j] = dc * c_prev[j] * f * (1.0 - f);
                dz[2 * h + j] = dc * i * (1.0 - cand * cand);
                dz[3 * h + j] = d_o * o * (1.0 - o);
                dc_next[j] = dc * f;
            }

            let x = &trace.xs[t * n_in..(t + 1) * n_in];
            let h_prev = if t == 0 {
                &zeros[..]
            } else {
                &trace.hs[(t - 1) * h..t * h]
            };
            dh_next.iter_mut().for_each(|v| *v = 0.0);
            let dx = &mut d_x[t * n_in..(t + 1) * n_in];
            for r in 0..rows {
                let dzr = dz[r];
                if dzr == 0.0 {
                    continue;
                }
                let gx = &mut grad[layer.wx + r * n_in..layer.wx + (r + 1) * n_in];
                for (gv, xv) in gx.iter_mut().zip(x) {
                    *gv += dzr * xv;
                }
                let gh = &mut grad[layer.wh + r * h..layer.wh + (r + 1) * h];
                for (gv, hv) in gh.iter_mut().zip(h_prev) {
                    *gv += dzr * hv;
                }
                grad[layer.b + r] += dzr;
                let wxr = &wx[r * n_in..(r + 1) * n_in];
                for (d, w) in dx.iter_mut().zip(wxr) {
                    *d += w * dzr;
                }
                let whr = &wh[r * h..(r + 1) * h];
                for (d, w) in dh_next.iter_mut().zip(whr) {
                    *d += w * dzr;
                }
            }
        }
        d_x
    }
}

/// Mean squared error over a sequence and its gradient with respect to the outputs.
pub fn sequence_mse(outputs: &[f64], targets: &[f64]) -> Result<(f64, Vec<f64>)> {
    if outputs.len() != targets.len() || outputs.is_empty() {
        return Err(Error::invalid(format!(
            "output length {} and target length {} must match and be non-zero",
            outputs.len(),
            targets.len()
        )));
    }
    let n = outputs.len() as f64;
    let loss = outputs
        .iter()
        .zip(targets)
        .map(|(y, t)| (y - t).powi(2))
        .sum::<f64>()
        / n;
    let grad = outputs.iter().zip(targets).map(|(y, t)| 2.0 * (y - t) / n).collect();
    Ok((loss, grad))
}

/// Forward, loss and backward for one sequence.
pub fn loss_and_gradient(
    net: &LstmNetwork,
    inputs: &[Vec<f64>],
    targets: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let cache = net.forward(inputs)?;
    let (loss, d_out) = sequence_mse(cache.outputs(), targets)?;
    let grad = net.backward(&cache, &d_out)?;
    Ok((loss, grad))
}
