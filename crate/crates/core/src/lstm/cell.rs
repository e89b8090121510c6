use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use super::{sigmoid, tanh, DropoutMask, Matrix, Parameterized};
use crate::error::{Error, Result};

/// One LSTM layer. Each gate has a `units x (input_dim + units)` weight
/// matrix applied to the concatenation `[x_t, h_{t-1}]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmLayer {
    pub input_dim: usize,
    pub units: usize,
    pub w_f: Matrix,
    pub w_i: Matrix,
    pub w_o: Matrix,
    pub w_c: Matrix,
    pub b_f: Vec<f64>,
    pub b_i: Vec<f64>,
    pub b_o: Vec<f64>,
    pub b_c: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(units: usize) -> Self {
        LstmState { h: vec![0.0; units], c: vec![0.0; units] }
    }
}

/// Intermediates of a single cell step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepCache {
    pub z: Vec<f64>,
    pub f: Vec<f64>,
    pub i: Vec<f64>,
    pub o: Vec<f64>,
    pub c_hat: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub tanh_c: Vec<f64>,
}

/// Intermediates of a whole sequence, stored step-major in flat buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerCache {
    pub steps: usize,
    pub input_dim: usize,
    pub units: usize,
    /// `steps x (input_dim + units)`
    pub z: Vec<f64>,
    /// `steps x 4 x units`, gate order f, i, o, c_hat
    pub gates: Vec<f64>,
    /// `steps x units`
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub mask: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerOutput {
    /// `steps x units`
    pub hidden: Vec<f64>,
    pub final_state: LstmState,
    pub cache: LayerCache,
}

fn glorot(rows: usize, cols: usize, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Vec<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
    (0..rows * cols).map(|_| dist.sample(rng)).collect()
}

/// Random `n x n` orthogonal matrix via modified Gram-Schmidt on Gaussian rows.
fn orthogonal(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    loop {
        let mut m: Vec<f64> = (0..n * n).map(|_| StandardNormal.sample(rng)).collect();
        let mut ok = true;
        for r in 0..n {
            for p in 0..r {
                let proj: f64 = (0..n).map(|k| m[r * n + k] * m[p * n + k]).sum();
                for k in 0..n {
                    m[r * n + k] -= proj * m[p * n + k];
                }
            }
            let norm = (0..n).map(|k| m[r * n + k].powi(2)).sum::<f64>().sqrt();
            if norm < 1e-8 {
                ok = false;
                break;
            }
            for k in 0..n {
                m[r * n + k] /= norm;
            }
        }
        if ok {
            return m;
        }
    }
}

impl LstmLayer {
    pub fn zeros(input_dim: usize, units: usize) -> Self {
        let w = Matrix::zeros(units, input_dim + units);
        LstmLayer {
            input_dim,
            units,
            w_f: w.clone(),
            w_i: w.clone(),
            w_o: w.clone(),
            w_c: w,
            b_f: vec![0.0; units],
            b_i: vec![0.0; units],
            b_o: vec![0.0; units],
            b_c: vec![0.0; units],
        }
    }

    /// Glorot-uniform input weights, orthogonal recurrent weights, forget
    /// bias 1 and all other biases 0.
    pub fn init(input_dim: usize, units: usize, rng: &mut impl Rng) -> Self {
        let mut layer = Self::zeros(input_dim, units);
        let cols = input_dim + units;
        for w in [&mut layer.w_f, &mut layer.w_i, &mut layer.w_o, &mut layer.w_c] {
            let input = glorot(units, input_dim, input_dim, units, rng);
            let rec = orthogonal(units, rng);
            for r in 0..units {
                let row = &mut w.data[r * cols..(r + 1) * cols];
                row[..input_dim].copy_from_slice(&input[r * input_dim..(r + 1) * input_dim]);
                row[input_dim..].copy_from_slice(&rec[r * units..(r + 1) * units]);
            }
        }
        layer.b_f.fill(1.0);
        layer
    }

    pub fn check_shapes(&self) -> Result<()> {
        let cols = self.input_dim + self.units;
        for (name, w) in [("w_f", &self.w_f), ("w_i", &self.w_i), ("w_o", &self.w_o), ("w_c", &self.w_c)] {
            if w.rows != self.units || w.cols != cols || w.data.len() != self.units * cols {
                return Err(Error::Dimension(format!(
                    "{name} is {}x{}, expected {}x{cols}",
                    w.rows, w.cols, self.units
                )));
            }
        }
        for (name, b) in [("b_f", &self.b_f), ("b_i", &self.b_i), ("b_o", &self.b_o), ("b_c", &self.b_c)] {
            if b.len() != self.units {
                return Err(Error::Dimension(format!("{name} has length {}, expected {}", b.len(), self.units)));
            }
        }
        Ok(())
    }

    /// Core step writing into caller-provided buffers. `gates` holds f, i, o, c_hat.
    #[allow(clippy::too_many_arguments)]
    fn step_into(
        &self,
        x: &[f64],
        h_prev: &[f64],
        c_prev: &[f64],
        mask: &[f64],
        z: &mut [f64],
        gates: &mut [f64],
        c: &mut [f64],
        tanh_c: &mut [f64],
        h: &mut [f64],
    ) {
        let u = self.units;
        z[..self.input_dim].copy_from_slice(x);
        z[self.input_dim..].copy_from_slice(h_prev);
        let (f, rest) = gates.split_at_mut(u);
        let (i, rest) = rest.split_at_mut(u);
        let (o, c_hat) = rest.split_at_mut(u);
        self.w_f.affine_into(z, &self.b_f, f);
        self.w_i.affine_into(z, &self.b_i, i);
        self.w_o.affine_into(z, &self.b_o, o);
        self.w_c.affine_into(z, &self.b_c, c_hat);
        for k in 0..u {
            f[k] = sigmoid(f[k]);
            i[k] = sigmoid(i[k]);
            o[k] = sigmoid(o[k]);
            c_hat[k] = tanh(c_hat[k]);
            c[k] = f[k] * c_prev[k] + i[k] * (mask[k] * c_hat[k]);
            tanh_c[k] = tanh(c[k]);
            h[k] = o[k] * tanh_c[k];
        }
    }

    fn check_mask(&self, mask: &DropoutMask) -> Result<()> {
        if mask.len() != self.units {
            return Err(Error::Dimension(format!("mask length {} for {} units", mask.len(), self.units)));
        }
        Ok(())
    }

    /// One time step from `prev`. The recurrent dropout mask scales only the
    /// candidate contribution to the cell.
    pub fn cell_forward(&self, x: &[f64], prev: &LstmState, mask: &DropoutMask) -> Result<(LstmState, StepCache)> {
        self.check_shapes()?;
        self.check_mask(mask)?;
        if x.len() != self.input_dim || prev.h.len() != self.units || prev.c.len() != self.units {
            return Err(Error::Dimension(format!(
                "cell input {} / state {},{} for layer {}->{}",
                x.len(),
                prev.h.len(),
                prev.c.len(),
                self.input_dim,
                self.units
            )));
        }
        let u = self.units;
        let mut z = vec![0.0; self.input_dim + u];
        let mut gates = vec![0.0; 4 * u];
        let mut state = LstmState::zeros(u);
        let mut tanh_c = vec![0.0; u];
        self.step_into(x, &prev.h, &prev.c, mask.values(), &mut z, &mut gates, &mut state.c, &mut tanh_c, &mut state.h);
        let cache = StepCache {
            z,
            f: gates[..u].to_vec(),
            i: gates[u..2 * u].to_vec(),
            o: gates[2 * u..3 * u].to_vec(),
            c_hat: gates[3 * u..].to_vec(),
            c_prev: prev.c.clone(),
            tanh_c,
        };
        Ok((state, cache))
    }

    /// Runs the sequence (`steps x input_dim`, row-major) from a zero state.
    pub fn forward(&self, sequence: &[f64], mask: &DropoutMask) -> Result<LayerOutput> {
        self.check_shapes()?;
        self.check_mask(mask)?;
        if sequence.is_empty() {
            return Err(Error::InvalidInput("empty sequence".into()));
        }
        if !sequence.len().is_multiple_of(self.input_dim) {
            return Err(Error::Dimension(format!(
                "sequence length {} is not a multiple of input_dim {}",
                sequence.len(),
                self.input_dim
            )));
        }
        let steps = sequence.len() / self.input_dim;
        let (u, zc) = (self.units, self.input_dim + self.units);
        let mut cache = LayerCache {
            steps,
            input_dim: self.input_dim,
            units: u,
            z: vec![0.0; steps * zc],
            gates: vec![0.0; steps * 4 * u],
            c: vec![0.0; steps * u],
            tanh_c: vec![0.0; steps * u],
            mask: mask.values().to_vec(),
        };
        let mut hidden = vec![0.0; steps * u];
        let zeros = vec![0.0; u];
        for t in 0..steps {
            let x = &sequence[t * self.input_dim..(t + 1) * self.input_dim];
            let (h_done, h_rest) = hidden.split_at_mut(t * u);
            let (c_done, c_rest) = cache.c.split_at_mut(t * u);
            let h_prev = if t == 0 { &zeros[..] } else { &h_done[(t - 1) * u..] };
            let c_prev = if t == 0 { &zeros[..] } else { &c_done[(t - 1) * u..] };
            self.step_into(
                x,
                h_prev,
                c_prev,
                &cache.mask,
                &mut cache.z[t * zc..(t + 1) * zc],
                &mut cache.gates[t * 4 * u..(t + 1) * 4 * u],
                &mut c_rest[..u],
                &mut cache.tanh_c[t * u..(t + 1) * u],
                &mut h_rest[..u],
            );
        }
        let final_state = LstmState {
            h: hidden[(steps - 1) * u..].to_vec(),
            c: cache.c[(steps - 1) * u..].to_vec(),
        };
        Ok(LayerOutput { hidden, final_state, cache })
    }

    /// Backpropagation through time. `dh` is the loss gradient w.r.t. every
    /// hidden output (`steps x units`). Parameter gradients are added into
    /// `grads`; the gradient w.r.t. the input sequence is returned.
    pub fn backward(&self, cache: &LayerCache, dh: &[f64], grads: &mut LstmLayer) -> Result<Vec<f64>> {
        let (u, n_in) = (self.units, self.input_dim);
        let zc = n_in + u;
        if cache.units != u || cache.input_dim != n_in || cache.z.len() != cache.steps * zc {
            return Err(Error::Dimension("cache does not belong to this layer".into()));
        }
        if dh.len() != cache.steps * u {
            return Err(Error::Dimension(format!("dh has {} values, expected {}", dh.len(), cache.steps * u)));
        }
        if grads.units != u || grads.input_dim != n_in {
            return Err(Error::Dimension("gradient buffer shape mismatch".into()));
        }

        let mut dx = vec![0.0; cache.steps * n_in];
        let mut dh_next = vec![0.0; u];
        let mut dc_next = vec![0.0; u];
        let mut da = vec![0.0; 4 * u];
        let mut dz = vec![0.0; zc];
        for t in (0..cache.steps).rev() {
            let g = &cache.gates[t * 4 * u..(t + 1) * 4 * u];
            let (f, i, o, c_hat) = (&g[..u], &g[u..2 * u], &g[2 * u..3 * u], &g[3 * u..]);
            let tanh_c = &cache.tanh_c[t * u..(t + 1) * u];
            for k in 0..u {
                let c_prev = if t == 0 { 0.0 } else { cache.c[(t - 1) * u + k] };
                let dh_k = dh[t * u + k] + dh_next[k];
                let d_o = dh_k * tanh_c[k];
                let dc = dc_next[k] + dh_k * o[k] * (1.0 - tanh_c[k] * tanh_c[k]);
                let d_f = dc * c_prev;
                let d_i = dc * cache.mask[k] * c_hat[k];
                let d_chat = dc * i[k] * cache.mask[k];
                dc_next[k] = dc * f[k];
                da[k] = d_f * f[k] * (1.0 - f[k]);
                da[u + k] = d_i * i[k] * (1.0 - i[k]);
                da[2 * u + k] = d_o * o[k] * (1.0 - o[k]);
                da[3 * u + k] = d_chat * (1.0 - c_hat[k] * c_hat[k]);
            }
            let z = &cache.z[t * zc..(t + 1) * zc];
            dz.fill(0.0);
            let blocks = [
                (&self.w_f, &mut grads.w_f, &mut grads.b_f),
                (&self.w_i, &mut grads.w_i, &mut grads.b_i),
                (&self.w_o, &mut grads.w_o, &mut grads.b_o),
                (&self.w_c, &mut grads.w_c, &mut grads.b_c),
            ];
            for (gate, (w, gw, gb)) in blocks.into_iter().enumerate() {
                let d = &da[gate * u..(gate + 1) * u];
                gw.add_outer(d, z);
                for (b, dk) in gb.iter_mut().zip(d) {
                    *b += dk;
                }
                w.transpose_mul_add(d, &mut dz);
            }
            dx[t * n_in..(t + 1) * n_in].copy_from_slice(&dz[..n_in]);
            dh_next.copy_from_slice(&dz[n_in..]);
        }
        Ok(dx)
    }
}

impl Parameterized for LstmLayer {
    fn tensors(&self) -> Vec<(String, &[f64])> {
        vec![
            ("w_f".into(), &self.w_f.data[..]),
            ("w_i".into(), &self.w_i.data[..]),
            ("w_o".into(), &self.w_o.data[..]),
            ("w_c".into(), &self.w_c.data[..]),
            ("b_f".into(), &self.b_f[..]),
            ("b_i".into(), &self.b_i[..]),
            ("b_o".into(), &self.b_o[..]),
            ("b_c".into(), &self.b_c[..]),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        vec![
            ("w_f".into(), &mut self.w_f.data[..]),
            ("w_i".into(), &mut self.w_i.data[..]),
            ("w_o".into(), &mut self.w_o.data[..]),
            ("w_c".into(), &mut self.w_c.data[..]),
            ("b_f".into(), &mut self.b_f[..]),
            ("b_i".into(), &mut self.b_i[..]),
            ("b_o".into(), &mut self.b_o[..]),
            ("b_c".into(), &mut self.b_c[..]),
        ]
    }
}
