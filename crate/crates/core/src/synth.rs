//! Synthetic tasks: small label pairs with known conditional entropy, and
//! Gaussian-cluster datasets carrying one source task and noisy targets.

use std::f64::consts::LN_2;
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{LabelSequence, TaskTable};
use crate::softmax::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToyId {
    A,
    B,
    C,
    D,
    E,
}

impl ToyId {
    pub const ALL: [ToyId; 5] = [ToyId::A, ToyId::B, ToyId::C, ToyId::D, ToyId::E];
}

impl FromStr for ToyId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "a" => Ok(ToyId::A),
            "b" => Ok(ToyId::B),
            "c" => Ok(ToyId::C),
            "d" => Ok(ToyId::D),
            "e" => Ok(ToyId::E),
            other => Err(Error::InvalidConfig(format!("unknown toy case {other:?}"))),
        }
    }
}

impl fmt::Display for ToyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ToyId::A => "a",
            ToyId::B => "b",
            ToyId::C => "c",
            ToyId::D => "d",
            ToyId::E => "e",
        };
        f.write_str(s)
    }
}

/// A target/source label pair with its exact conditional entropy.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyCase {
    pub id: ToyId,
    pub n: usize,
    pub y: LabelSequence,
    pub z: LabelSequence,
    pub expected_ce: f64,
}

impl ToyCase {
    pub fn label_table(&self) -> TaskTable {
        TaskTable::new(vec![("z".into(), self.z.clone()), ("y".into(), self.y.clone())])
            .expect("toy sequences share one length")
    }
}

/// Builds one of the five toy cases on `n` inputs (`n` a multiple of 16).
///
/// * `c`: `Y = Z`, both balanced binary.
/// * `d`: `Z` balanced binary, each `z` group split evenly over two `y` values.
/// * `e`: as `d` but the two groups use disjoint pairs of a four-class `Y`.
/// * `a`, `b`: constant `Z`, `Y` uniform over 16 classes; `a` interleaves the
///   classes, `b` lays them out in contiguous blocks.
pub fn toy_case(id: ToyId, n: usize) -> Result<ToyCase> {
    if n == 0 || n % 16 != 0 {
        return Err(Error::BadSize(n));
    }
    let half = n / 2;
    let (z, y, k_z, k_y, expected_ce): (Vec<usize>, Vec<usize>, usize, usize, f64) = match id {
        ToyId::C => {
            let z: Vec<usize> = (0..n).map(|i| i / half).collect();
            (z.clone(), z, 2, 2, 0.0)
        }
        ToyId::D => ((0..n).map(|i| i / half).collect(), (0..n).map(|i| i % 2).collect(), 2, 2, LN_2),
        ToyId::E => {
            let z: Vec<usize> = (0..n).map(|i| i / half).collect();
            let y = z.iter().enumerate().map(|(i, &g)| 2 * g + i % 2).collect();
            (z, y, 2, 4, LN_2)
        }
        ToyId::A => (vec![0; n], (0..n).map(|i| i % 16).collect(), 1, 16, 4.0 * LN_2),
        ToyId::B => (vec![0; n], (0..n).map(|i| i / (n / 16)).collect(), 1, 16, 4.0 * LN_2),
    };
    Ok(ToyCase {
        id,
        n,
        y: LabelSequence::from_codes(y, k_y)?,
        z: LabelSequence::from_codes(z, k_z)?,
        expected_ce,
    })
}

fn default_center_scale() -> f64 {
    3.0
}

fn default_spread() -> f64 {
    1.0
}

/// One source task on Gaussian clusters plus noisy targets derived from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthFamilyConfig {
    pub n: usize,
    pub d: usize,
    pub k_z: usize,
    /// Resampling probability of each target; its length is the target count.
    pub noise: Vec<f64>,
    /// Class count of each target; empty means binary targets.
    #[serde(default)]
    pub target_classes: Vec<usize>,
    #[serde(default = "default_center_scale")]
    pub center_scale: f64,
    #[serde(default = "default_spread")]
    pub spread: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SynthFamilyConfig {
    pub fn m(&self) -> usize {
        self.noise.len()
    }

    pub fn target_k(&self, j: usize) -> usize {
        self.target_classes.get(j).copied().unwrap_or(2)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_z == 0 || self.d == 0 {
            return Err(Error::InvalidConfig("k_z and d must be at least 1".into()));
        }
        if self.n < 4 * self.k_z {
            return Err(Error::InvalidConfig(format!("n = {} is below 4 * k_z", self.n)));
        }
        if let Some(p) = self.noise.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidConfig(format!("noise level {p} outside [0, 1]")));
        }
        if !self.target_classes.is_empty() && self.target_classes.len() != self.noise.len() {
            return Err(Error::InvalidConfig("target_classes and noise differ in length".into()));
        }
        if self.target_classes.contains(&0) {
            return Err(Error::InvalidConfig("target class counts must be at least 1".into()));
        }
        if !(self.center_scale >= 0.0 && self.spread >= 0.0) {
            return Err(Error::InvalidConfig("center_scale and spread must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Family {
    pub dataset: Dataset,
    pub source: LabelSequence,
    pub targets: Vec<LabelSequence>,
}

impl Family {
    /// Columns `source`, `target_1`, ..., `target_m`.
    pub fn label_table(&self) -> TaskTable {
        let mut tasks = vec![("source".to_string(), self.source.clone())];
        for (j, t) in self.targets.iter().enumerate() {
            tasks.push((target_name(j), t.clone()));
        }
        TaskTable::new(tasks).expect("family labels share one length")
    }
}

pub fn target_name(j: usize) -> String {
    format!("target_{}", j + 1)
}

/// Source classes are balanced and shuffled; each class owns one Gaussian cluster.
/// Target `j` maps class `c` to `(c + j) mod k_j`, then each label is redrawn
/// uniformly over `k_j` classes with probability `noise[j]`.
pub fn random_family(cfg: &SynthFamilyConfig) -> Result<Family> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let center_dist = Normal::new(0.0, cfg.center_scale).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let centers = Array2::from_shape_simple_fn((cfg.k_z, cfg.d), || center_dist.sample(&mut rng));

    let mut z: Vec<usize> = (0..cfg.n).map(|i| i % cfg.k_z).collect();
    z.shuffle(&mut rng);

    let mut features = Array2::zeros((cfg.n, cfg.d));
    for (i, &c) in z.iter().enumerate() {
        for j in 0..cfg.d {
            let e: f64 = StandardNormal.sample(&mut rng);
            features[[i, j]] = centers[[c, j]] + cfg.spread * e;
        }
    }

    let mut targets = Vec::with_capacity(cfg.m());
    for (j, &noise) in cfg.noise.iter().enumerate() {
        let k = cfg.target_k(j);
        let codes = z
            .iter()
            .map(|&c| {
                let resample = rng.gen::<f64>() < noise;
                let fresh = rng.gen_range(0..k);
                if resample {
                    fresh
                } else {
                    (c + j) % k
                }
            })
            .collect();
        targets.push(LabelSequence::from_codes(codes, k)?);
    }

    Ok(Family {
        dataset: Dataset::new(features)?,
        source: LabelSequence::from_codes(z, cfg.k_z)?,
        targets,
    })
}
