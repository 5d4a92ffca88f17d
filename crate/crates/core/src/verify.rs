//! Numerical checks of the transfer bound `l_Y(w_Z, k_Y) >= l_Z - H(Y|Z)`.
//!
//! Every check uses the representation and source head that training actually
//! produced. The chain
//!
//! ```text
//! l_Y(k_Y) >= l_Y(k_bar) >= mean ln P(y_i|z_i) + mean ln P(z_i|x_i) = -H(Y|Z) + l_Z
//! ```
//!
//! only needs `k_bar` to be a candidate head, so it must hold for any trained
//! `(w_Z, h_Z)`. Each link is reported separately: the two mean terms are
//! evaluated per sample and compared against `H(Y|Z)` from the joint table and
//! against the `l_Z` returned by training.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::entropy::{conditional_entropy, conditional_entropy_direct, hardness};
use crate::error::{Error, Result};
use crate::labels::{Axis, JointDistribution, LabelSequence};
use crate::softmax::{
    accuracy, construct_kbar, log_likelihood, select_k_y, train_source, train_target_head, Dataset, Head, HeadChoice,
    TrainConfig,
};
use crate::stats::{linear_fit, pearson, LinearFit};
use crate::synth::{random_family, target_name, SynthFamilyConfig};

/// Absolute slack allowed for float summation in the bound and its chain.
pub const BOUND_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundCheckResult {
    #[serde(rename = "l_Z")]
    pub l_z: f64,
    #[serde(rename = "H_Y_given_Z")]
    pub h_y_given_z: f64,
    #[serde(rename = "l_Y_kprime")]
    pub l_y_kprime: f64,
    #[serde(rename = "l_Y_kbar")]
    pub l_y_kbar: f64,
    #[serde(rename = "l_Y_selected")]
    pub l_y_selected: f64,
    pub selected: HeadChoice,
    pub rhs: f64,
    pub slack: f64,
    /// `(1/n) sum_i ln P(y_i | z_i)`
    #[serde(rename = "proof_term_A")]
    pub proof_term_a: f64,
    /// `(1/n) sum_i ln P(z_i | x_i; w_Z, h_Z)`
    #[serde(rename = "proof_term_B")]
    pub proof_term_b: f64,
    pub holds: bool,
    pub source_converged: bool,
}

impl BoundCheckResult {
    /// `|A + H(Y|Z)|`
    pub fn entropy_residual(&self) -> f64 {
        (self.proof_term_a + self.h_y_given_z).abs()
    }

    /// `|B - l_Z|`
    pub fn likelihood_residual(&self) -> f64 {
        (self.proof_term_b - self.l_z).abs()
    }

    /// Every link of the chain holds within [`BOUND_TOLERANCE`].
    pub fn chain_holds(&self) -> bool {
        self.l_y_selected >= self.l_y_kbar - BOUND_TOLERANCE
            && self.l_y_kbar >= self.proof_term_a + self.proof_term_b - BOUND_TOLERANCE
    }
}

/// Mean of `ln P(y_i | z_i)` over the samples.
fn mean_log_conditional(y: &LabelSequence, z: &LabelSequence, joint: &JointDistribution) -> f64 {
    let z_counts = joint.axis_counts(Axis::Z);
    let total: f64 = y
        .codes()
        .iter()
        .zip(z.codes())
        .map(|(&a, &b)| (joint.count(a, b) as f64 / z_counts[b] as f64).ln())
        .sum();
    total / y.len() as f64
}

/// Mean of `ln P(z_i | x_i)`, normalizing explicit probabilities rather than
/// going through log-softmax.
fn mean_log_source_probability(logits: &ndarray::Array2<f64>, z: &LabelSequence) -> f64 {
    let total: f64 = logits
        .rows()
        .into_iter()
        .zip(z.codes())
        .map(|(row, &c)| {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let norm: f64 = row.iter().map(|v| (v - max).exp()).sum();
            ((row[c] - max).exp() / norm).ln()
        })
        .sum();
    total / z.len() as f64
}

/// Trains source, target head and expectation head, then evaluates every term of the bound.
pub fn verify_bound(
    data: &Dataset,
    z: &LabelSequence,
    y: &LabelSequence,
    dim: usize,
    cfg: &TrainConfig,
) -> Result<BoundCheckResult> {
    if y.len() != z.len() {
        return Err(Error::Alignment { left: y.len(), right: z.len() });
    }
    let source = train_source(data, z, dim, cfg)?;
    let w = &source.representation;
    let k_prime = Head::Softmax(train_target_head(w, data, y, cfg)?.head);
    let joint = JointDistribution::new(y, z)?;
    let k_bar = Head::Expectation(construct_kbar(&source.head, &joint)?);
    let selected = select_k_y(&k_prime, &k_bar, w, data, y)?;

    let l_z = source.log_likelihood;
    let h_y_given_z = conditional_entropy_direct(&joint);
    let rhs = l_z - h_y_given_z;
    let slack = selected.log_likelihood - rhs;
    Ok(BoundCheckResult {
        l_z,
        h_y_given_z,
        l_y_kprime: log_likelihood(w, &k_prime, data, y)?,
        l_y_kbar: log_likelihood(w, &k_bar, data, y)?,
        l_y_selected: selected.log_likelihood,
        selected: selected.choice,
        rhs,
        slack,
        proof_term_a: mean_log_conditional(y, z, &joint),
        proof_term_b: mean_log_source_probability(&source.head.logits(&w.embed(data)), z),
        holds: slack >= -BOUND_TOLERANCE,
        source_converged: source.descent.converged,
    })
}

/// Ranges for randomly drawn bound-check instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub n_min: usize,
    pub n_max: usize,
    pub d_max: usize,
    /// Largest representation dimension.
    pub dim_max: usize,
    /// Largest class count of either task.
    pub k_max: usize,
    pub train: TrainConfig,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_min: 40,
            n_max: 400,
            d_max: 10,
            dim_max: 5,
            k_max: 5,
            train: TrainConfig { max_iters: 1000, ..TrainConfig::default() },
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_max == 0 || self.d_max == 0 || self.dim_max == 0 {
            return Err(Error::InvalidConfig("k_max, d_max and dim_max must be at least 1".into()));
        }
        if self.n_min > self.n_max {
            return Err(Error::InvalidConfig("n_min exceeds n_max".into()));
        }
        if self.n_min < 4 * self.k_max {
            return Err(Error::InvalidConfig("n_min must be at least 4 * k_max".into()));
        }
        self.train.validate()
    }
}

/// Sizes drawn for one suite instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct InstanceShape {
    pub n: usize,
    pub d: usize,
    pub dim: usize,
    pub k_z: usize,
    pub k_y: usize,
}

/// Draws one instance: a single-target family with random sizes and noise.
pub fn generate_instance(gen: &GeneratorConfig, seed: u64) -> Result<(InstanceShape, Dataset, LabelSequence, LabelSequence)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = InstanceShape {
        n: rng.gen_range(gen.n_min..=gen.n_max),
        d: rng.gen_range(1..=gen.d_max),
        dim: rng.gen_range(1..=gen.dim_max),
        k_z: rng.gen_range(1..=gen.k_max),
        k_y: rng.gen_range(1..=gen.k_max),
    };
    let family = random_family(&SynthFamilyConfig {
        n: shape.n,
        d: shape.d,
        k_z: shape.k_z,
        noise: vec![rng.gen::<f64>()],
        target_classes: vec![shape.k_y],
        center_scale: rng.gen_range(0.5..4.0),
        spread: 1.0,
        seed: rng.gen(),
    })?;
    let y = family.targets.into_iter().next().expect("one target requested");
    Ok((shape, family.dataset, family.source, y))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstanceReport {
    pub index: usize,
    pub seed: u64,
    pub shape: Option<InstanceShape>,
    pub result: Option<BoundCheckResult>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub instances: usize,
    pub passed: usize,
    pub failed: usize,
    pub min_slack: f64,
    /// Largest of `|A + H(Y|Z)|` and `|B - l_Z|` over all instances.
    pub max_proof_residual: f64,
    pub chain_violations: usize,
    pub base_seed: u64,
    pub generator: GeneratorConfig,
    pub results: Vec<InstanceReport>,
}

impl SuiteReport {
    pub fn all_hold(&self) -> bool {
        self.passed == self.instances
    }
}

/// Runs `instances` bound checks; instance `i` uses seed `base_seed + i`.
pub fn verify_suite(gen: &GeneratorConfig, instances: usize, base_seed: u64) -> Result<SuiteReport> {
    gen.validate()?;
    if instances == 0 {
        return Err(Error::InvalidConfig("suite needs at least one instance".into()));
    }
    let results: Vec<InstanceReport> = (0..instances)
        .into_par_iter()
        .map(|index| {
            let seed = base_seed.wrapping_add(index as u64);
            let outcome = generate_instance(gen, seed).and_then(|(shape, data, z, y)| {
                let cfg = TrainConfig { seed, ..gen.train };
                verify_bound(&data, &z, &y, shape.dim, &cfg).map(|r| (shape, r))
            });
            match outcome {
                Ok((shape, result)) => InstanceReport { index, seed, shape: Some(shape), result: Some(result), error: None },
                Err(e) => InstanceReport { index, seed, shape: None, result: None, error: Some(e.to_string()) },
            }
        })
        .collect();

    let checked: Vec<&BoundCheckResult> = results.iter().filter_map(|r| r.result.as_ref()).collect();
    let passed = checked.iter().filter(|r| r.holds).count();
    let min_slack = checked.iter().map(|r| r.slack).fold(f64::INFINITY, f64::min);
    let max_proof_residual = checked
        .iter()
        .map(|r| r.entropy_residual().max(r.likelihood_residual()))
        .fold(0.0, f64::max);
    Ok(SuiteReport {
        instances,
        passed,
        failed: instances - passed,
        min_slack,
        max_proof_residual,
        chain_violations: checked.iter().filter(|r| !r.chain_holds()).count(),
        base_seed,
        generator: gen.clone(),
        results,
    })
}

fn default_dim() -> usize {
    3
}

/// Model settings for a correlation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default)]
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self { dim: default_dim(), train: TrainConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentRow {
    pub target: String,
    /// `H(target | source)` on the training labels.
    pub ce_nats: f64,
    /// Entropy of the target's training labels.
    pub hardness_nats: f64,
    pub train_log_likelihood: f64,
    pub test_error: f64,
    pub selected: HeadChoice,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub rows: Vec<ExperimentRow>,
    pub pearson_r: f64,
    pub p_value: f64,
    pub fit: LinearFit,
    pub n_train: usize,
    pub n_test: usize,
    pub family: SynthFamilyConfig,
    pub experiment: ExperimentConfig,
}

/// Shuffles `0..n` under `seed` and returns sorted (train, test) index sets, 70/30.
pub fn train_test_split(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (n * 7 + 5) / 10;
    let mut train = order[..n_train].to_vec();
    let mut test = order[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// Trains one source model, retrains a head per target and correlates the
/// training-label CE with the held-out error across targets.
pub fn correlation_experiment(family_cfg: &SynthFamilyConfig, cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let family = random_family(family_cfg)?;
    let (train, test) = train_test_split(family_cfg.n, family_cfg.seed);
    if test.is_empty() {
        return Err(Error::InvalidConfig("too few inputs for a test split".into()));
    }
    let (data_tr, data_te) = (family.dataset.select(&train)?, family.dataset.select(&test)?);
    let z_tr = family.source.select(&train)?;

    let source = train_source(&data_tr, &z_tr, cfg.dim, &cfg.train)?;
    let w = &source.representation;

    let rows = family
        .targets
        .par_iter()
        .enumerate()
        .map(|(j, target)| {
            let (y_tr, y_te) = (target.select(&train)?, target.select(&test)?);
            let k_prime = Head::Softmax(train_target_head(w, &data_tr, &y_tr, &cfg.train)?.head);
            let k_bar = Head::Expectation(construct_kbar(&source.head, &JointDistribution::new(&y_tr, &z_tr)?)?);
            let selected = select_k_y(&k_prime, &k_bar, w, &data_tr, &y_tr)?;
            Ok(ExperimentRow {
                target: target_name(j),
                ce_nats: conditional_entropy(&y_tr, &z_tr)?,
                hardness_nats: hardness(&y_tr),
                train_log_likelihood: selected.log_likelihood,
                test_error: 1.0 - accuracy(w, &selected.head, &data_te, &y_te)?,
                selected: selected.choice,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let ce: Vec<f64> = rows.iter().map(|r| r.ce_nats).collect();
    let err: Vec<f64> = rows.iter().map(|r| r.test_error).collect();
    let undefined = |e: Error| match e {
        Error::TooFewPoints(n) => Error::CorrelationUndefined(format!("{n} targets; need at least 3")),
        other => other,
    };
    let corr = pearson(&ce, &err).map_err(undefined)?;
    let fit = linear_fit(&ce, &err).map_err(undefined)?;
    Ok(ExperimentReport {
        rows,
        pearson_r: corr.r,
        p_value: corr.p,
        fit,
        n_train: train.len(),
        n_test: test.len(),
        family: family_cfg.clone(),
        experiment: cfg.clone(),
    })
}
