use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};
use crate::manifest::DatasetManifest;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train: 0.6,
            val: 0.2,
            test: 0.2,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let f = [self.train, self.val, self.test];
        if f.iter().any(|v| !(*v >= 0.0)) {
            return Err(PipelineError::Config(format!(
                "split fractions {f:?} must be >= 0"
            )));
        }
        let sum: f64 = f.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(PipelineError::Config(format!(
                "split fractions sum to {sum}, expected 1"
            )));
        }
        Ok(())
    }

    /// `(train, val, test)` sizes for `n` entries. Validation and test get
    /// `floor(n * fraction)`; the remainder goes to training.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        let part = |f: f64| ((n as f64 * f) + 1e-9).floor() as usize;
        let val = part(self.val).min(n);
        let test = part(self.test).min(n - val);
        (n - val - test, val, test)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: DatasetManifest,
    pub val: DatasetManifest,
    pub test: DatasetManifest,
}

/// Seeded shuffle, then contiguous train / val / test blocks.
pub fn split(manifest: &DatasetManifest, spec: &SplitSpec) -> Result<Splits> {
    spec.validate()?;
    let mut entries = manifest.entries.clone();
    entries.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let (n_train, n_val, _) = spec.sizes(entries.len());
    let test = entries.split_off(n_train + n_val);
    let val = entries.split_off(n_train);
    Ok(Splits {
        train: manifest.with_entries(entries),
        val: manifest.with_entries(val),
        test: manifest.with_entries(test),
    })
}
