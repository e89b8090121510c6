use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::{Matrix, Parameterized};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub w: Matrix,
    pub b: Vec<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseCache {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl DenseLayer {
    pub fn zeros(input: usize, output: usize, activation: Activation) -> Self {
        DenseLayer { w: Matrix::zeros(output, input), b: vec![0.0; output], activation }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn init(input: usize, output: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / (input + output) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
        let mut layer = Self::zeros(input, output, activation);
        layer.w.data.iter_mut().for_each(|v| *v = dist.sample(rng));
        layer
    }

    pub fn input_dim(&self) -> usize {
        self.w.cols
    }

    pub fn output_dim(&self) -> usize {
        self.w.rows
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, DenseCache)> {
        if x.len() != self.w.cols || self.b.len() != self.w.rows {
            return Err(Error::Dimension(format!(
                "dense {}x{} (bias {}) applied to input of length {}",
                self.w.rows,
                self.w.cols,
                self.b.len(),
                x.len()
            )));
        }
        let mut y = vec![0.0; self.w.rows];
        self.w.affine_into(x, &self.b, &mut y);
        if self.activation == Activation::Relu {
            y.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        Ok((y.clone(), DenseCache { x: x.to_vec(), y }))
    }

    /// Adds parameter gradients into `grads` and returns `dL/dx`.
    pub fn backward(&self, cache: &DenseCache, dy: &[f64], grads: &mut DenseLayer) -> Result<Vec<f64>> {
        if dy.len() != self.w.rows || cache.x.len() != self.w.cols || cache.y.len() != self.w.rows {
            return Err(Error::Dimension("dense backward shape mismatch".into()));
        }
        let d_pre: Vec<f64> = match self.activation {
            Activation::Identity => dy.to_vec(),
            Activation::Relu => dy.iter().zip(&cache.y).map(|(d, y)| if *y > 0.0 { *d } else { 0.0 }).collect(),
        };
        grads.w.add_outer(&d_pre, &cache.x);
        for (g, d) in grads.b.iter_mut().zip(&d_pre) {
            *g += d;
        }
        let mut dx = vec![0.0; self.w.cols];
        self.w.transpose_mul_add(&d_pre, &mut dx);
        Ok(dx)
    }
}

impl Parameterized for DenseLayer {
    fn tensors(&self) -> Vec<(String, &[f64])> {
        vec![("w".into(), &self.w.data[..]), ("b".into(), &self.b[..])]
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        vec![("w".into(), &mut self.w.data[..]), ("b".into(), &mut self.b[..])]
    }
}
