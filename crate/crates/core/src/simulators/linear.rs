use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::Feedback;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSystemInstance {
    pub samples: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w_true: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_true: Option<f64>,
    #[serde(default)]
    pub noisy: bool,
}

impl LinearSystemInstance {
    /// Default dataset: 50 noiseless samples with x uniform on [-5, 5] and
    /// integer coefficients drawn from [-5, 5].
    pub fn generate(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = rng.random_range(-5i32..=5) as f64;
        let b = rng.random_range(-5i32..=5) as f64;
        let samples = (0..50)
            .map(|_| {
                let x = rng.random_range(-5.0..=5.0);
                [x, w * x + b]
            })
            .collect();
        log::debug!("generated linear system w={w} b={b} (seed {seed})");
        LinearSystemInstance {
            samples,
            w_true: Some(w),
            b_true: Some(b),
            noisy: false,
        }
    }

    pub(crate) fn check(&self) -> Result<()> {
        if self.samples.len() < 2 {
            return Err(Error::Contract(format!(
                "a linear system needs at least 2 samples, got {}",
                self.samples.len()
            )));
        }
        if self.samples.iter().any(|s| !s[0].is_finite() || !s[1].is_finite()) {
            return Err(Error::Contract("non-finite sample".into()));
        }
        if let (false, Some(w), Some(b)) = (self.noisy, self.w_true, self.b_true) {
            if let Some(i) = self.samples.iter().position(|s| s[1] != w * s[0] + b) {
                return Err(Error::Contract(format!(
                    "sample {i} is off the noiseless generator y = {w}x + {b}"
                )));
            }
        }
        Ok(())
    }

    pub fn mse(&self, w: f64, b: f64) -> f64 {
        let sum: f64 = self
            .samples
            .iter()
            .map(|s| {
                let r = s[1] - (w * s[0] + b);
                r * r
            })
            .sum();
        sum / self.samples.len() as f64
    }

    pub(crate) fn feedback(&self, w: f64, b: f64) -> Feedback {
        Feedback::new(self.mse(w, b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_fit_has_zero_loss() {
        let inst = LinearSystemInstance::generate(3);
        inst.check().unwrap();
        assert_eq!(inst.mse(inst.w_true.unwrap(), inst.b_true.unwrap()), 0.0);
        assert_eq!(inst.samples.len(), 50);
    }

    #[test]
    fn mse_arithmetic() {
        let inst = LinearSystemInstance {
            samples: vec![[0.0, 3.0], [1.0, 5.0]],
            w_true: Some(2.0),
            b_true: Some(3.0),
            noisy: false,
        };
        assert_eq!(inst.mse(0.0, 0.0), 17.0);
        assert_eq!(inst.mse(2.0, 3.0), 0.0);
    }

    #[test]
    fn generation_is_seeded() {
        assert_eq!(LinearSystemInstance::generate(9), LinearSystemInstance::generate(9));
        assert_ne!(LinearSystemInstance::generate(9), LinearSystemInstance::generate(10));
    }
}
