use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default train / validation / test fractions.
pub const DEFAULT_FRACTIONS: (f64, f64, f64) = (0.7, 0.1, 0.2);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidValue(format!("unknown split `{other}`"))),
        }
    }
}

/// Seeded episode-level split: shuffle, then assign contiguous runs.
pub fn split_episodes(
    ids: &[String],
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<BTreeMap<String, Split>> {
    let (a, b, c) = fractions;
    if [a, b, c].iter().any(|f| !(0.0..=1.0).contains(f)) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidValue(format!(
            "split fractions {fractions:?} must be in [0, 1] and sum to 1"
        )));
    }
    let n = ids.len();
    let n_train = ((a * n as f64).round() as usize).min(n);
    let n_val = ((b * n as f64).round() as usize).min(n - n_train);

    let mut order: Vec<&String> = ids.iter().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = BTreeMap::new();
    for (i, id) in order.into_iter().enumerate() {
        let s = if i < n_train {
            Split::Train
        } else if i < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
        if out.insert(id.clone(), s).is_some() {
            return Err(Error::InvalidValue(format!("duplicate episode id `{id}`")));
        }
    }
    Ok(out)
}

/// Number of episodes in each split.
pub fn split_counts(split: &BTreeMap<String, Split>) -> (usize, usize, usize) {
    split.values().fold((0, 0, 0), |(a, b, c), s| match s {
        Split::Train => (a + 1, b, c),
        Split::Val => (a, b + 1, c),
        Split::Test => (a, b, c + 1),
    })
}
