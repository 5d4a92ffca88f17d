//! Linear representations with affine softmax heads, trained by full-batch
//! gradient descent on the mean cross-entropy.
//!
//! A source model is the pair `(w, h)`: `w` maps an input `x` to `W x` and `h`
//! maps a representation `r` to `softmax(A r + b)`. Target heads are retrained on
//! top of a frozen `w`. The expectation head mixes a source head's output through
//! the empirical `P(y | z)` table and is always a valid distribution.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{JointDistribution, LabelSequence};

const INIT_SCALE: f64 = 0.01;
const STEP_GROWTH: f64 = 1.2;
const MAX_HALVINGS: usize = 80;

/// Input features, one row per input.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
}

impl Dataset {
    pub fn new(features: Array2<f64>) -> Result<Self> {
        let (n, d) = features.dim();
        if n == 0 || d == 0 {
            return Err(Error::EmptyInput);
        }
        if let Some(((row, _), _)) = features.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Parse { row: row + 1, message: "non-finite feature".into() });
        }
        Ok(Self { features })
    }

    /// Reads a header row followed by one numeric row per input.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let d = reader.headers().map_err(|e| Error::Parse { row: 0, message: e.to_string() })?.len();
        let mut values = Vec::new();
        let mut n = 0;
        for (idx, record) in reader.records().enumerate() {
            let row = idx + 1;
            let record = record.map_err(|e| Error::Parse { row, message: e.to_string() })?;
            if record.len() != d {
                return Err(Error::Parse { row, message: format!("expected {d} cells, found {}", record.len()) });
            }
            for cell in record.iter() {
                let v: f64 = cell.parse().map_err(|_| Error::Parse { row, message: format!("bad number {cell:?}") })?;
                values.push(v);
            }
            n += 1;
        }
        let features = Array2::from_shape_vec((n, d), values).map_err(|e| Error::Parse { row: 0, message: e.to_string() })?;
        Self::new(features)
    }

    pub fn to_csv(&self) -> String {
        let mut out = (1..=self.d()).map(|j| format!("f{j}")).collect::<Vec<_>>().join(",");
        out.push('\n');
        for row in self.features.rows() {
            out.push_str(&row.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(","));
            out.push('\n');
        }
        out
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn d(&self) -> usize {
        self.features.ncols()
    }

    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        Self::new(self.features.select(Axis(0), rows))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_iters: usize,
    /// Stop once the largest gradient component is at most this.
    pub grad_tol: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 0.5, max_iters: 3000, grad_tol: 1e-6, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be at least 1".into()));
        }
        if !(self.grad_tol > 0.0) {
            return Err(Error::InvalidConfig("grad_tol must be positive".into()));
        }
        Ok(())
    }
}

/// Linear map `x -> W x` with `W` of shape `D x d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Representation {
    pub matrix: Array2<f64>,
}

impl Representation {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Representations of every input, `n x D`.
    pub fn embed(&self, data: &Dataset) -> Array2<f64> {
        data.features.dot(&self.matrix.t())
    }
}

/// Affine softmax classifier `r -> softmax(A r + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxHead {
    /// `k x D`
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl SoftmaxHead {
    pub fn k(&self) -> usize {
        self.bias.len()
    }

    pub fn logits(&self, reps: &Array2<f64>) -> Array2<f64> {
        reps.dot(&self.weights.t()) + &self.bias
    }
}

/// Converts a source head's class distribution into target-class probabilities
/// through a row-stochastic `P(y | z)` table.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectationHead {
    pub source: SoftmaxHead,
    /// `conversion[z][y] = P(y | z)`.
    pub conversion: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Head {
    Softmax(SoftmaxHead),
    Expectation(ExpectationHead),
}

impl Head {
    pub fn k(&self) -> usize {
        match self {
            Head::Softmax(h) => h.k(),
            Head::Expectation(h) => h.conversion.first().map_or(0, Vec::len),
        }
    }

    /// Log-probabilities, `n x k`.
    pub fn log_probs(&self, reps: &Array2<f64>) -> Array2<f64> {
        match self {
            Head::Softmax(h) => log_softmax_rows(h.logits(reps).view()),
            Head::Expectation(h) => {
                let log_pz = log_softmax_rows(h.source.logits(reps).view());
                let k_y = self.k();
                let mut out = Array2::from_elem((reps.nrows(), k_y), f64::NEG_INFINITY);
                let mut terms = Vec::with_capacity(h.conversion.len());
                for (i, row) in log_pz.rows().into_iter().enumerate() {
                    for y in 0..k_y {
                        terms.clear();
                        terms.extend(
                            h.conversion
                                .iter()
                                .zip(row.iter())
                                .filter(|(cond, _)| cond[y] > 0.0)
                                .map(|(cond, &lp)| cond[y].ln() + lp),
                        );
                        out[[i, y]] = log_sum_exp(&terms);
                    }
                }
                out
            }
        }
    }

    pub fn probabilities(&self, reps: &Array2<f64>) -> Array2<f64> {
        self.log_probs(reps).mapv(f64::exp)
    }
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Row-wise `log softmax`, shifted by the row maximum.
pub fn log_softmax_rows(logits: ArrayView2<f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

fn check_aligned(data: &Dataset, labels: &LabelSequence) -> Result<()> {
    if data.n() != labels.len() {
        return Err(Error::Alignment { left: data.n(), right: labels.len() });
    }
    Ok(())
}

fn mean_log_likelihood(log_probs: &Array2<f64>, labels: &[usize]) -> f64 {
    let total: f64 = labels.iter().enumerate().map(|(i, &c)| log_probs[[i, c]]).sum();
    total / labels.len() as f64 + 0.0
}

/// Mean training log-likelihood `(1/n) sum_i ln p(label_i | x_i)` in nats.
pub fn log_likelihood(w: &Representation, head: &Head, data: &Dataset, labels: &LabelSequence) -> Result<f64> {
    check_aligned(data, labels)?;
    Ok(mean_log_likelihood(&head.log_probs(&w.embed(data)), labels.codes()))
}

/// Fraction of inputs whose most probable class (lowest code on ties) is the label.
pub fn accuracy(w: &Representation, head: &Head, data: &Dataset, labels: &LabelSequence) -> Result<f64> {
    check_aligned(data, labels)?;
    let log_probs = head.log_probs(&w.embed(data));
    let hits = log_probs
        .rows()
        .into_iter()
        .zip(labels.codes())
        .filter(|(row, &label)| {
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best == label
        })
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Gradients of the mean cross-entropy of a source model.
#[derive(Debug, Clone)]
pub struct SourceGradient {
    pub representation: Array2<f64>,
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// `(P - onehot) / n` and the mean cross-entropy for given logits.
fn softmax_residual(logits: &Array2<f64>, labels: &[usize]) -> (f64, Array2<f64>) {
    let log_probs = log_softmax_rows(logits.view());
    let loss = -mean_log_likelihood(&log_probs, labels);
    let n = labels.len() as f64;
    let mut residual = log_probs.mapv(f64::exp);
    for (i, &c) in labels.iter().enumerate() {
        residual[[i, c]] -= 1.0;
    }
    residual /= n;
    (loss, residual)
}

/// Mean cross-entropy of the head given fixed representations, and its gradient.
pub fn head_loss_and_gradient(reps: &Array2<f64>, head: &SoftmaxHead, labels: &[usize]) -> (f64, Array2<f64>, Array1<f64>) {
    let (loss, residual) = softmax_residual(&head.logits(reps), labels);
    (loss, residual.t().dot(reps), residual.sum_axis(Axis(0)))
}

/// Mean cross-entropy of `(w, h)` on `(x, labels)` and its gradient in all parameters.
pub fn source_loss_and_gradient(
    w: &Representation,
    head: &SoftmaxHead,
    x: &Array2<f64>,
    labels: &[usize],
) -> (f64, SourceGradient) {
    let reps = x.dot(&w.matrix.t());
    let (loss, residual) = softmax_residual(&head.logits(&reps), labels);
    let d_reps = residual.dot(&head.weights);
    let gradient = SourceGradient {
        representation: d_reps.t().dot(x),
        weights: residual.t().dot(&reps),
        bias: residual.sum_axis(Axis(0)),
    };
    (loss, gradient)
}

/// Record of one gradient-descent run.
#[derive(Debug, Clone, PartialEq)]
pub struct Descent {
    pub iterations: usize,
    /// Gradient fell below `grad_tol`.
    pub converged: bool,
    /// Loss after every accepted step, starting with the initial loss.
    pub losses: Vec<f64>,
}

/// Minimizes `objective` from `params`. Steps that would raise the loss are
/// retried with half the step size; accepted steps let the step size grow.
fn descend<F>(params: &mut Vec<f64>, objective: F, cfg: &TrainConfig) -> Result<Descent>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    cfg.validate()?;
    let (mut loss, mut grad) = objective(params);
    if !loss.is_finite() {
        return Err(Error::TrainingDiverged { iteration: 0 });
    }
    let mut losses = vec![loss];
    let mut lr = cfg.learning_rate;
    let mut candidate = params.clone();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iters {
        let grad_max = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if !grad_max.is_finite() {
            return Err(Error::TrainingDiverged { iteration: iterations });
        }
        if grad_max <= cfg.grad_tol {
            converged = true;
            break;
        }
        iterations += 1;
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            for ((c, p), g) in candidate.iter_mut().zip(params.iter()).zip(&grad) {
                *c = p - lr * g;
            }
            let (next_loss, next_grad) = objective(&candidate);
            if next_loss.is_nan() {
                return Err(Error::TrainingDiverged { iteration: iterations });
            }
            if next_loss <= loss {
                std::mem::swap(params, &mut candidate);
                loss = next_loss;
                grad = next_grad;
                accepted = true;
                lr *= STEP_GROWTH;
                break;
            }
            lr *= 0.5;
        }
        if !accepted {
            // no representable step decreases the loss any further
            break;
        }
        losses.push(loss);
    }
    Ok(Descent { iterations, converged, losses })
}

fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-INIT_SCALE..=INIT_SCALE))
}

/// A jointly trained representation and source head.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceModel {
    pub representation: Representation,
    pub head: SoftmaxHead,
    /// Final mean training log-likelihood `l_Z`.
    pub log_likelihood: f64,
    pub descent: Descent,
}

/// Jointly fits `w` and `h` to the source labels.
pub fn train_source(data: &Dataset, z: &LabelSequence, dim: usize, cfg: &TrainConfig) -> Result<SourceModel> {
    check_aligned(data, z)?;
    if dim == 0 {
        return Err(Error::InvalidConfig("representation dimension must be at least 1".into()));
    }
    let (d, k) = (data.d(), z.k());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let w0 = uniform_matrix(&mut rng, dim, d);
    let a0 = uniform_matrix(&mut rng, k, dim);

    let (nw, na) = (dim * d, k * dim);
    let mut params: Vec<f64> = w0.iter().chain(a0.iter()).copied().chain(std::iter::repeat(0.0).take(k)).collect();
    let unpack = |p: &[f64]| {
        let w = Representation { matrix: Array2::from_shape_vec((dim, d), p[..nw].to_vec()).unwrap() };
        let head = SoftmaxHead {
            weights: Array2::from_shape_vec((k, dim), p[nw..nw + na].to_vec()).unwrap(),
            bias: Array1::from_vec(p[nw + na..].to_vec()),
        };
        (w, head)
    };
    let x = data.features();
    let labels = z.codes();
    let objective = |p: &[f64]| {
        let (w, head) = unpack(p);
        let (loss, g) = source_loss_and_gradient(&w, &head, x, labels);
        let grad = g.representation.iter().chain(g.weights.iter()).chain(g.bias.iter()).copied().collect();
        (loss, grad)
    };
    let descent = descend(&mut params, objective, cfg)?;
    let (representation, head) = unpack(&params);
    let log_likelihood = log_likelihood(&representation, &Head::Softmax(head.clone()), data, z)?;
    Ok(SourceModel { representation, head, log_likelihood, descent })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedHead {
    pub head: SoftmaxHead,
    pub log_likelihood: f64,
    pub descent: Descent,
}

/// Fits a fresh softmax head on top of the frozen representation `w`.
pub fn train_target_head(w: &Representation, data: &Dataset, y: &LabelSequence, cfg: &TrainConfig) -> Result<TrainedHead> {
    check_aligned(data, y)?;
    let reps = w.embed(data);
    let (dim, k) = (w.dim(), y.k());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let a0 = uniform_matrix(&mut rng, k, dim);
    let na = k * dim;
    let mut params: Vec<f64> = a0.iter().copied().chain(std::iter::repeat(0.0).take(k)).collect();
    let unpack = |p: &[f64]| SoftmaxHead {
        weights: Array2::from_shape_vec((k, dim), p[..na].to_vec()).unwrap(),
        bias: Array1::from_vec(p[na..].to_vec()),
    };
    let labels = y.codes();
    let objective = |p: &[f64]| {
        let (loss, gw, gb) = head_loss_and_gradient(&reps, &unpack(p), labels);
        (loss, gw.iter().chain(gb.iter()).copied().collect())
    };
    let descent = descend(&mut params, objective, cfg)?;
    let head = unpack(&params);
    let log_likelihood = mean_log_likelihood(&log_softmax_rows(head.logits(&reps).view()), labels);
    Ok(TrainedHead { head, log_likelihood, descent })
}

/// Builds the expectation head from a source head and the `(Y, Z)` training joint.
pub fn construct_kbar(source_head: &SoftmaxHead, joint: &JointDistribution) -> Result<ExpectationHead> {
    if source_head.k() != joint.k_z() {
        return Err(Error::InvalidConfig(format!(
            "source head has {} classes but the joint has {}",
            source_head.k(),
            joint.k_z()
        )));
    }
    Ok(ExpectationHead { source: source_head.clone(), conversion: joint.conditional_y_given_z()? })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadChoice {
    KPrime,
    KBar,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectedHead {
    pub head: Head,
    pub choice: HeadChoice,
    pub log_likelihood: f64,
}

/// Keeps whichever head has the higher training log-likelihood; ties go to `k_bar`.
pub fn select_k_y(
    k_prime: &Head,
    k_bar: &Head,
    w: &Representation,
    data: &Dataset,
    y: &LabelSequence,
) -> Result<SelectedHead> {
    let l_prime = log_likelihood(w, k_prime, data, y)?;
    let l_bar = log_likelihood(w, k_bar, data, y)?;
    Ok(if l_prime > l_bar {
        SelectedHead { head: k_prime.clone(), choice: HeadChoice::KPrime, log_likelihood: l_prime }
    } else {
        SelectedHead { head: k_bar.clone(), choice: HeadChoice::KBar, log_likelihood: l_bar }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};
    use std::f64::consts::LN_2;

    fn identity_rep(d: usize) -> Representation {
        Representation { matrix: Array2::eye(d) }
    }

    fn blobs(n_per: usize, centers: &[[f64; 2]], spread: f64, seed: u64) -> (Dataset, LabelSequence) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut codes = Vec::new();
        for (c, center) in centers.iter().enumerate() {
            for _ in 0..n_per {
                for v in center {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    rows.push(v + spread * e);
                }
                codes.push(c);
            }
        }
        let n = codes.len();
        (
            Dataset::new(Array2::from_shape_vec((n, 2), rows).unwrap()).unwrap(),
            LabelSequence::from_codes(codes, centers.len()).unwrap(),
        )
    }

    #[test]
    fn separable_source_loss_decreases_toward_zero() {
        let (data, z) = blobs(20, &[[-3.0, 0.0], [3.0, 0.0]], 0.3, 1);
        let short = train_source(&data, &z, 2, &TrainConfig { max_iters: 50, ..Default::default() }).unwrap();
        let long = train_source(&data, &z, 2, &TrainConfig { max_iters: 2000, ..Default::default() }).unwrap();
        assert!(short.log_likelihood < 0.0);
        assert!(long.log_likelihood > short.log_likelihood);
        assert!(long.log_likelihood > -1e-3, "{}", long.log_likelihood);
    }

    #[test]
    fn single_class_source_has_zero_log_likelihood() {
        let (data, _) = blobs(5, &[[0.0, 1.0]], 1.0, 2);
        let z = LabelSequence::constant(5).unwrap();
        let m = train_source(&data, &z, 2, &TrainConfig::default()).unwrap();
        assert_eq!(m.log_likelihood, 0.0);
        assert!(m.descent.converged);
    }

    #[test]
    fn training_is_deterministic() {
        let (data, z) = blobs(15, &[[-1.0, 0.0], [1.0, 1.0], [0.0, -1.0]], 0.8, 3);
        let cfg = TrainConfig { seed: 11, max_iters: 300, ..Default::default() };
        let a = train_source(&data, &z, 2, &cfg).unwrap();
        let b = train_source(&data, &z, 2, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn head_retrained_on_source_labels_recovers_source_likelihood() {
        let (data, z) = blobs(30, &[[-1.0, 0.0], [1.0, 0.5], [0.0, -1.0]], 1.0, 4);
        let tight = TrainConfig { max_iters: 20_000, grad_tol: 1e-9, ..Default::default() };
        let source = train_source(&data, &z, 2, &tight).unwrap();
        let head = train_target_head(&source.representation, &data, &z, &TrainConfig { seed: 99, ..tight }).unwrap();
        assert!((head.log_likelihood - source.log_likelihood).abs() < 1e-6);
    }

    #[test]
    fn constant_target_head_goes_to_zero_loss() {
        let (data, _) = blobs(10, &[[0.0, 0.0], [1.0, 1.0]], 1.0, 5);
        let y = LabelSequence::constant(20).unwrap();
        let h = train_target_head(&identity_rep(2), &data, &y, &TrainConfig::default()).unwrap();
        assert_eq!(h.log_likelihood, 0.0);
    }

    #[test]
    fn random_labels_do_no_worse_than_best_constant_head() {
        let (data, _) = blobs(40, &[[0.0, 0.0]], 1.0, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let k = 3;
        let codes: Vec<usize> = (0..40).map(|_| rng.gen_range(0..k)).collect();
        let y = LabelSequence::from_codes(codes, k).unwrap();
        // best constant-output head predicts the label frequencies
        let baseline = -crate::entropy::hardness(&y);
        let cfg = TrainConfig { max_iters: 20_000, grad_tol: 1e-8, ..Default::default() };
        let h = train_target_head(&identity_rep(2), &data, &y, &cfg).unwrap();
        assert!(h.log_likelihood >= baseline - 1e-7, "{} < {}", h.log_likelihood, baseline);
        assert!(h.log_likelihood >= -(k as f64).ln() * (1.0 + 1e-9));
    }

    #[test]
    fn head_training_is_seed_independent() {
        let (data, z) = blobs(25, &[[-0.5, 0.0], [0.5, 0.0], [0.0, 0.7]], 1.0, 8);
        let cfg = TrainConfig { max_iters: 100_000, grad_tol: 1e-9, ..Default::default() };
        let w = identity_rep(2);
        let a = train_target_head(&w, &data, &z, &TrainConfig { seed: 1, ..cfg }).unwrap();
        let b = train_target_head(&w, &data, &z, &TrainConfig { seed: 2, ..cfg }).unwrap();
        assert!((a.log_likelihood - b.log_likelihood).abs() < 1e-6);
    }

    #[test]
    fn losses_never_increase() {
        let (data, z) = blobs(20, &[[-1.0, 0.0], [1.0, 0.0]], 1.5, 9);
        let m = train_source(&data, &z, 1, &TrainConfig { learning_rate: 50.0, max_iters: 500, ..Default::default() }).unwrap();
        for pair in m.descent.losses.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-9);
        }
    }

    #[test]
    fn degenerate_and_uniform_heads() {
        let data = Dataset::new(array![[1.0, 2.0], [-3.0, 0.5], [0.0, 0.0]]).unwrap();
        let w = identity_rep(2);
        let single = Head::Softmax(SoftmaxHead { weights: array![[0.3, -1.0]], bias: array![2.0] });
        let c = LabelSequence::constant(3).unwrap();
        assert_eq!(log_likelihood(&w, &single, &data, &c).unwrap(), 0.0);
        assert_eq!(accuracy(&w, &single, &data, &c).unwrap(), 1.0);

        let k = 4;
        let uniform = Head::Softmax(SoftmaxHead { weights: Array2::zeros((k, 2)), bias: Array1::zeros(k) });
        let y = LabelSequence::from_codes(vec![0, 3, 2], k).unwrap();
        assert_eq!(log_likelihood(&w, &uniform, &data, &y).unwrap(), -(k as f64).ln());
        // all tied: argmax is class 0
        assert_eq!(accuracy(&w, &uniform, &data, &y).unwrap(), 1.0 / 3.0);
    }

    #[test]
    fn hand_computed_two_point_likelihood() {
        let data = Dataset::new(array![[1.0], [-2.0]]).unwrap();
        let w = Representation { matrix: array![[2.0]] };
        let head = Head::Softmax(SoftmaxHead { weights: array![[1.0], [-1.0]], bias: array![0.0, 0.5] });
        let y = LabelSequence::from_codes(vec![0, 1], 2).unwrap();
        // r = 2 and -4; logits (2, -1.5) and (-4, 4.5)
        let p0 = 2f64.exp() / (2f64.exp() + (-1.5f64).exp());
        let p1 = 4.5f64.exp() / ((-4f64).exp() + 4.5f64.exp());
        let expected = 0.5 * (p0.ln() + p1.ln());
        assert!((log_likelihood(&w, &head, &data, &y).unwrap() - expected).abs() < 1e-15);
        assert_eq!(accuracy(&w, &head, &data, &y).unwrap(), 1.0);
    }

    #[test]
    fn log_softmax_survives_huge_logits() {
        let lp = log_softmax_rows(array![[1e4, -1e4, 0.0], [-1e4, -1e4, -1e4]].view());
        assert!(lp.iter().all(|v| v.is_finite()));
        assert_eq!(lp[[0, 0]], 0.0);
        assert!((lp[[1, 2]] + 3f64.ln()).abs() < 1e-12);
    }

    fn two_class_joint(y: &[usize], z: &[usize], ky: usize, kz: usize) -> JointDistribution {
        JointDistribution::new(
            &LabelSequence::from_codes(y.to_vec(), ky).unwrap(),
            &LabelSequence::from_codes(z.to_vec(), kz).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn kbar_with_identity_joint_reproduces_source_head() {
        let source = SoftmaxHead { weights: array![[1.0, 0.0], [0.0, 1.0], [0.5, -0.5]], bias: array![0.1, 0.0, -0.2] };
        let joint = two_class_joint(&[0, 1, 2, 1], &[0, 1, 2, 1], 3, 3);
        let kbar = Head::Expectation(construct_kbar(&source, &joint).unwrap());
        let reps = array![[0.3, -1.0], [2.0, 0.5]];
        let a = Head::Softmax(source).probabilities(&reps);
        let b = kbar.probabilities(&reps);
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn kbar_splits_mass_evenly() {
        let source = SoftmaxHead { weights: array![[1.0], [-1.0]], bias: array![0.0, 0.3] };
        // z=0 -> y in {0,1}, z=1 -> y in {2,3}, each half the time
        let joint = two_class_joint(&[0, 1, 2, 3], &[0, 0, 1, 1], 4, 2);
        let kbar = Head::Expectation(construct_kbar(&source, &joint).unwrap());
        let reps = array![[0.7], [-2.0]];
        let pz = Head::Softmax(source).probabilities(&reps);
        let py = kbar.probabilities(&reps);
        for i in 0..2 {
            assert!((py[[i, 0]] - pz[[i, 0]] / 2.0).abs() < 1e-15);
            assert!((py[[i, 1]] - pz[[i, 0]] / 2.0).abs() < 1e-15);
            assert!((py[[i, 2]] - pz[[i, 1]] / 2.0).abs() < 1e-15);
            assert!((py[[i, 3]] - pz[[i, 1]] / 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn kbar_rejects_mismatched_or_unobserved_classes() {
        let source = SoftmaxHead { weights: array![[1.0], [-1.0]], bias: array![0.0, 0.0] };
        let joint = two_class_joint(&[0, 1], &[0, 0], 2, 2);
        assert_eq!(construct_kbar(&source, &joint), Err(Error::ZeroMarginal { class: 1 }));
        let joint = two_class_joint(&[0, 1, 0], &[0, 1, 2], 2, 3);
        assert!(matches!(construct_kbar(&source, &joint), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn selection_prefers_better_head_and_breaks_ties_to_kbar() {
        let data = Dataset::new(array![[1.0], [-1.0]]).unwrap();
        let w = identity_rep(1);
        let y = LabelSequence::from_codes(vec![0, 1], 2).unwrap();
        let good = Head::Softmax(SoftmaxHead { weights: array![[3.0], [-3.0]], bias: array![0.0, 0.0] });
        let uniform_softmax = SoftmaxHead { weights: Array2::zeros((2, 1)), bias: Array1::zeros(2) };
        let joint = two_class_joint(&[0, 1], &[0, 1], 2, 2);
        let kbar = Head::Expectation(construct_kbar(&uniform_softmax, &joint).unwrap());

        let s = select_k_y(&good, &kbar, &w, &data, &y).unwrap();
        assert_eq!(s.choice, HeadChoice::KPrime);

        let s = select_k_y(&Head::Softmax(uniform_softmax), &kbar, &w, &data, &y).unwrap();
        assert_eq!(s.choice, HeadChoice::KBar);
        assert_eq!(s.log_likelihood, -LN_2);
    }

    #[test]
    fn features_csv_round_trip() {
        let data = Dataset::new(array![[1.5, -2.0], [0.1, 3.25]]).unwrap();
        assert_eq!(Dataset::from_csv(&data.to_csv()).unwrap(), data);
        assert!(matches!(Dataset::from_csv("a,b\n1,x\n"), Err(Error::Parse { row: 1, .. })));
    }

    fn rel_error(a: &[f64], b: &[f64]) -> f64 {
        let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
        if scale == 0.0 {
            diff
        } else {
            diff / scale
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn head_gradient_matches_finite_differences(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (n, dim, k) = (rng.gen_range(2..8), rng.gen_range(1..4), rng.gen_range(2..5));
            let reps = Array2::from_shape_simple_fn((n, dim), || rng.gen_range(-2.0..2.0));
            let head = SoftmaxHead {
                weights: Array2::from_shape_simple_fn((k, dim), || rng.gen_range(-1.0..1.0)),
                bias: Array1::from_shape_simple_fn(k, || rng.gen_range(-1.0..1.0)),
            };
            let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
            let (_, gw, gb) = head_loss_and_gradient(&reps, &head, &labels);
            let analytic: Vec<f64> = gw.iter().chain(gb.iter()).copied().collect();
            let eps = 1e-5;
            let mut numeric = Vec::new();
            for idx in 0..analytic.len() {
                let mut plus = head.clone();
                let mut minus = head.clone();
                if idx < k * dim {
                    plus.weights[[idx / dim, idx % dim]] += eps;
                    minus.weights[[idx / dim, idx % dim]] -= eps;
                } else {
                    plus.bias[idx - k * dim] += eps;
                    minus.bias[idx - k * dim] -= eps;
                }
                let lp = head_loss_and_gradient(&reps, &plus, &labels).0;
                let lm = head_loss_and_gradient(&reps, &minus, &labels).0;
                numeric.push((lp - lm) / (2.0 * eps));
            }
            prop_assert!(rel_error(&analytic, &numeric) < 1e-5);
        }

        #[test]
        fn kbar_outputs_are_distributions(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (kz, ky, dim) = (rng.gen_range(1..5), rng.gen_range(1..5), rng.gen_range(1..4));
            let n = 30;
            let z: Vec<usize> = (0..n).map(|i| i % kz).collect();
            let y: Vec<usize> = (0..n).map(|_| rng.gen_range(0..ky)).collect();
            let joint = two_class_joint(&y, &z, ky, kz);
            let source = SoftmaxHead {
                weights: Array2::from_shape_simple_fn((kz, dim), || rng.gen_range(-5.0..5.0)),
                bias: Array1::from_shape_simple_fn(kz, || rng.gen_range(-5.0..5.0)),
            };
            let kbar = Head::Expectation(construct_kbar(&source, &joint).unwrap());
            let reps = Array2::from_shape_simple_fn((10, dim), || rng.gen_range(-3.0..3.0));
            for row in kbar.probabilities(&reps).rows() {
                prop_assert!(row.iter().all(|&p| p >= 0.0));
                prop_assert!((row.sum() - 1.0).abs() < 1e-12);
            }
        }
    }
}
