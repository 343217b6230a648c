use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl CorpusSplit {
    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Train/val/test proportions, 18:1:1 by default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitRatio {
    pub train: u32,
    pub val: u32,
    pub test: u32,
}

impl Default for SplitRatio {
    fn default() -> Self {
        Self {
            train: 18,
            val: 1,
            test: 1,
        }
    }
}

impl SplitRatio {
    fn total(&self) -> u32 {
        self.train + self.val + self.test
    }
}

/// Seeded shuffle then proportional cut. Validation and test sizes are
/// rounded to nearest; train takes the rest, so every size is within one
/// element of its exact share.
pub fn split_corpus(ids: &[String], ratio: SplitRatio, seed: u64) -> Result<CorpusSplit> {
    if ids.is_empty() {
        return Err(Error::EmptyInput("cannot split an empty corpus".into()));
    }
    if ratio.total() == 0 {
        return Err(Error::Config("split ratio must not be all zero".into()));
    }
    let total = ratio.total() as usize;
    if ids.len() < total {
        warn!(n = ids.len(), "corpus smaller than {total} utterances, split is best-effort");
    }
    let mut shuffled = ids.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let n = ids.len();
    let share = |part: u32| ((n * part as usize) as f64 / total as f64).round() as usize;
    let n_val = share(ratio.val);
    let n_test = share(ratio.test).min(n - n_val);
    let n_train = n - n_val - n_test;

    let test = shuffled.split_off(n_train + n_val);
    let val = shuffled.split_off(n_train);
    Ok(CorpusSplit {
        train: shuffled,
        val,
        test,
    })
}
