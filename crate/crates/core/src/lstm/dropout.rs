use rand::Rng;

use crate::error::{Error, Result};

/// Per-unit recurrent dropout mask, drawn once per sequence. Kept entries are
/// scaled by `1/(1 - rate)`; the identity mask is used at inference.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask(Vec<f64>);

impl DropoutMask {
    pub fn identity(units: usize) -> Self {
        DropoutMask(vec![1.0; units])
    }

    pub fn sample(units: usize, rate: f64, rng: &mut impl Rng) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidInput(format!("dropout rate {rate} outside [0, 1)")));
        }
        if rate == 0.0 {
            return Ok(Self::identity(units));
        }
        let keep = 1.0 / (1.0 - rate);
        Ok(DropoutMask((0..units).map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep }).collect()))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}
