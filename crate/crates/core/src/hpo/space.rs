use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Inclusive sampling bounds of the five tuned hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSpace {
    pub hidden_dim: [usize; 2],
    pub layers: [usize; 2],
    pub batch_size: [usize; 2],
    pub dropout: [f64; 2],
    /// Sampled log-uniformly.
    pub lr: [f64; 2],
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            hidden_dim: [16, 128],
            layers: [1, 3],
            batch_size: [16, 128],
            dropout: [0.0, 0.3],
            lr: [1e-4, 1e-2],
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        let ints = [
            ("hidden_dim", self.hidden_dim),
            ("layers", self.layers),
            ("batch_size", self.batch_size),
        ];
        for (name, [lo, hi]) in ints {
            if lo == 0 || lo > hi {
                return Err(Error::InvalidParams(format!(
                    "{name} range [{lo}, {hi}] is empty or starts at 0"
                )));
            }
        }
        let [d0, d1] = self.dropout;
        if !(0.0 <= d0 && d0 <= d1 && d1 < 1.0) {
            return Err(Error::InvalidParams(format!(
                "dropout range [{d0}, {d1}] outside [0, 1)"
            )));
        }
        let [l0, l1] = self.lr;
        if !(l0 > 0.0 && l0 <= l1 && l1.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "learning-rate range [{l0}, {l1}] invalid"
            )));
        }
        Ok(())
    }
}

/// One point of the search space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub hidden_dim: usize,
    pub layers: usize,
    pub batch_size: usize,
    pub dropout: f64,
    pub lr: f64,
}

fn uniform(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    if lo < hi {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Draws a configuration: integers uniform on their inclusive ranges, dropout
/// uniform, learning rate log-uniform.
pub fn sample_config(space: &SearchSpace, seed: u64) -> Result<TrialConfig> {
    space.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hidden_dim = rng.random_range(space.hidden_dim[0]..=space.hidden_dim[1]);
    let layers = rng.random_range(space.layers[0]..=space.layers[1]);
    let batch_size = rng.random_range(space.batch_size[0]..=space.batch_size[1]);
    let dropout = uniform(&mut rng, space.dropout);
    let lr = uniform(&mut rng, [space.lr[0].ln(), space.lr[1].ln()]).exp();
    Ok(TrialConfig {
        hidden_dim,
        layers,
        batch_size,
        dropout,
        lr: lr.clamp(space.lr[0], space.lr[1]),
    })
}
