//! Meta-learning trainer on an analytic linear-softmax conditional generator.
//!
//! Each step takes an inner gradient step on the training batch, evaluates
//! the training loss at the inner parameters on a pseudo-compositional batch,
//! and updates the original parameters on the weighted sum. The gradient of
//! the second term flows through the inner step, so it carries a
//! Hessian-vector correction, computed here in closed form.

use std::io::Write;
use std::ops::{Add, Div, Mul, Sub};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::protocol_gap;
use crate::sampler::{admits_pcomp, sample_pcomp_batch, Batch, LabeledRecord};
use crate::schema::{is_eligible_split, AttributeSchema, Combination, Split};

/// A record whose text part is a token-id sequence.
pub type TokenRecord = LabeledRecord<Vec<usize>>;
pub type TokenBatch = Batch<Vec<usize>>;

/// A differentiable loss over a flat parameter vector.
pub trait Objective {
    type Data: ?Sized;

    fn value_and_grad(&self, params: &[f64], data: &Self::Data) -> Result<(f64, Vec<f64>)>;

    /// Hessian of the loss at `params` applied to `direction`.
    fn hessian_vector(
        &self,
        params: &[f64],
        data: &Self::Data,
        direction: &[f64],
    ) -> Result<Vec<f64>>;
}

/// `½‖θ‖²`, independent of the data. Useful for checking the update algebra.
#[derive(Debug, Clone, Copy, Default)]
pub struct QuadraticObjective;

impl Objective for QuadraticObjective {
    type Data = ();

    fn value_and_grad(&self, params: &[f64], _: &()) -> Result<(f64, Vec<f64>)> {
        Ok((
            0.5 * params.iter().map(|t| t * t).sum::<f64>(),
            params.to_vec(),
        ))
    }

    fn hessian_vector(&self, _: &[f64], _: &(), direction: &[f64]) -> Result<Vec<f64>> {
        Ok(direction.to_vec())
    }
}

/// Conditional generator whose token logits for a combination are the sum
/// of one learnable row per attribute value plus a frozen bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyGenModel {
    schema: Arc<AttributeSchema>,
    vocab: usize,
    /// Row-major, `schema.total_values()` rows by `vocab` columns.
    pub theta: Vec<f64>,
    phi: Vec<f64>,
}

impl ToyGenModel {
    /// Zero parameters and zero bias: the uniform predictive.
    pub fn new(schema: Arc<AttributeSchema>, vocab: usize) -> Result<Self> {
        if vocab < 2 {
            return Err(Error::InvalidArgument(format!(
                "vocabulary size must be >= 2, got {vocab}"
            )));
        }
        let rows = schema.total_values();
        Ok(Self {
            schema,
            vocab,
            theta: vec![0.0; rows * vocab],
            phi: vec![0.0; vocab],
        })
    }

    pub fn with_phi(mut self, phi: Vec<f64>) -> Result<Self> {
        if phi.len() != self.vocab || phi.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "bias must hold {} finite entries",
                self.vocab
            )));
        }
        self.phi = phi;
        Ok(self)
    }

    pub fn schema(&self) -> &Arc<AttributeSchema> {
        &self.schema
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    /// Loss objective sharing this model's schema and bias.
    pub fn objective(&self, aux_weight: f64) -> ToyObjective {
        ToyObjective {
            schema: self.schema.clone(),
            vocab: self.vocab,
            phi: self.phi.clone(),
            aux_weight,
        }
    }

    pub fn logits(&self, combo: &Combination) -> Vec<f64> {
        logits_at(&self.schema, self.vocab, &self.phi, &self.theta, combo)
    }

    /// Cosine similarity between every pair of attribute-value rows.
    pub fn row_cosines(&self) -> Vec<Vec<f64>> {
        let rows = self.schema.total_values();
        let row = |r: usize| &self.theta[r * self.vocab..(r + 1) * self.vocab];
        (0..rows)
            .map(|r| {
                (0..rows)
                    .map(|s| {
                        let (u, w) = (row(r), row(s));
                        let dot: f64 = u.iter().zip(w).map(|(a, b)| a * b).sum();
                        let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
                        let nw = w.iter().map(|a| a * a).sum::<f64>().sqrt();
                        if nu == 0.0 || nw == 0.0 {
                            0.0
                        } else {
                            dot / (nu * nw)
                        }
                    })
                    .collect()
            })
            .collect()
    }
}

/// Training loss (without auxiliary term) and its gradient at the model's
/// current parameters.
pub fn train_loss(model: &ToyGenModel, batch: &TokenBatch) -> Result<(f64, Vec<f64>)> {
    model.objective(0.0).value_and_grad(&model.theta, batch)
}

fn rows_of<'a>(
    schema: &'a AttributeSchema,
    combo: &'a Combination,
) -> impl Iterator<Item = usize> + 'a {
    combo
        .values()
        .iter()
        .enumerate()
        .map(|(i, &v)| schema.flat_index(i, v))
}

fn logits_at(
    schema: &AttributeSchema,
    vocab: usize,
    phi: &[f64],
    theta: &[f64],
    combo: &Combination,
) -> Vec<f64> {
    let mut z = phi.to_vec();
    for r in rows_of(schema, combo) {
        for (zj, t) in z.iter_mut().zip(&theta[r * vocab..(r + 1) * vocab]) {
            *zj += t;
        }
    }
    z
}

/// Log-sum-exp and softmax.
fn softmax(z: &[f64]) -> (f64, Vec<f64>) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    (max + sum.ln(), exps.into_iter().map(|e| e / sum).collect())
}

const COSINE_EPS: f64 = 1e-8;

/// The arithmetic needed by the cosine penalty, so its gradient can be
/// pushed through dual numbers for an exact Hessian-vector product.
trait Real:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Div<Output = Self>
{
    fn constant(x: f64) -> Self;
    fn sqrt(self) -> Self;
}

impl Real for f64 {
    fn constant(x: f64) -> Self {
        x
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
}

/// Forward-mode dual number `re + du·ε`.
#[derive(Debug, Clone, Copy)]
struct Dual {
    re: f64,
    du: f64,
}

impl Add for Dual {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Dual {
            re: self.re + o.re,
            du: self.du + o.du,
        }
    }
}

impl Sub for Dual {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Dual {
            re: self.re - o.re,
            du: self.du - o.du,
        }
    }
}

impl Mul for Dual {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Dual {
            re: self.re * o.re,
            du: self.du * o.re + self.re * o.du,
        }
    }
}

impl Div for Dual {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        Dual {
            re: self.re / o.re,
            du: (self.du * o.re - self.re * o.du) / (o.re * o.re),
        }
    }
}

impl Real for Dual {
    fn constant(x: f64) -> Self {
        Dual { re: x, du: 0.0 }
    }
    fn sqrt(self) -> Self {
        let r = self.re.sqrt();
        Dual {
            re: r,
            du: self.du / (2.0 * r),
        }
    }
}

/// Mean pairwise cosine over attribute rows and its gradient.
fn cosine_penalty<T: Real>(theta: &[T], rows: usize, cols: usize) -> (T, Vec<T>) {
    let zero = T::constant(0.0);
    let eps = T::constant(COSINE_EPS);
    let mut grad = vec![zero; theta.len()];
    let mut value = zero;
    if rows < 2 {
        return (value, grad);
    }
    let dot = |a: &[T], b: &[T]| a.iter().zip(b).fold(zero, |acc, (&x, &y)| acc + x * y);
    let norms: Vec<T> = (0..rows)
        .map(|r| {
            let u = &theta[r * cols..(r + 1) * cols];
            (dot(u, u) + eps).sqrt()
        })
        .collect();
    let pairs = T::constant((rows * (rows - 1) / 2) as f64);
    for r in 0..rows {
        for s in r + 1..rows {
            let u = &theta[r * cols..(r + 1) * cols];
            let w = &theta[s * cols..(s + 1) * cols];
            let uw = dot(u, w);
            let denom = norms[r] * norms[s];
            let cos = uw / denom;
            value = value + cos;
            let cu = cos / (norms[r] * norms[r]);
            let cw = cos / (norms[s] * norms[s]);
            for j in 0..cols {
                grad[r * cols + j] = grad[r * cols + j] + (w[j] / denom - cu * u[j]) / pairs;
                grad[s * cols + j] = grad[s * cols + j] + (u[j] / denom - cw * w[j]) / pairs;
            }
        }
    }
    (value / pairs, grad)
}

/// Mean over sequences of the summed token negative log-likelihood, plus an
/// optional weighted cosine-separation penalty on the attribute rows.
#[derive(Debug, Clone)]
pub struct ToyObjective {
    schema: Arc<AttributeSchema>,
    vocab: usize,
    phi: Vec<f64>,
    aux_weight: f64,
}

impl ToyObjective {
    fn check(&self, params: &[f64], batch: &TokenBatch) -> Result<()> {
        let expected = self.schema.total_values() * self.vocab;
        if params.len() != expected {
            return Err(Error::InvalidArgument(format!(
                "parameter vector has {} entries, expected {expected}",
                params.len()
            )));
        }
        if !Arc::ptr_eq(batch.schema(), &self.schema) && **batch.schema() != *self.schema {
            return Err(Error::SchemaMismatch(
                "batch and model schemas differ".into(),
            ));
        }
        for r in batch.records() {
            if let Some(&t) = r.text.iter().find(|&&t| t >= self.vocab) {
                return Err(Error::InvalidArgument(format!(
                    "token {t} is outside the vocabulary of size {}",
                    self.vocab
                )));
            }
        }
        Ok(())
    }

    fn counts(&self, tokens: &[usize]) -> Vec<f64> {
        let mut n = vec![0.0; self.vocab];
        for &t in tokens {
            n[t] += 1.0;
        }
        n
    }
}

impl Objective for ToyObjective {
    type Data = TokenBatch;

    fn value_and_grad(&self, params: &[f64], batch: &TokenBatch) -> Result<(f64, Vec<f64>)> {
        self.check(params, batch)?;
        let v = self.vocab;
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        let mut grad = vec![0.0; params.len()];
        for rec in batch.records() {
            let z = logits_at(&self.schema, v, &self.phi, params, &rec.combination);
            let (lse, p) = softmax(&z);
            let n = self.counts(&rec.text);
            let len = rec.text.len() as f64;
            loss += len * lse - rec.text.iter().map(|&t| z[t]).sum::<f64>();
            let gz: Vec<f64> = p
                .iter()
                .zip(&n)
                .map(|(pj, nj)| (len * pj - nj) * scale)
                .collect();
            for r in rows_of(&self.schema, &rec.combination) {
                for (g, gj) in grad[r * v..(r + 1) * v].iter_mut().zip(&gz) {
                    *g += gj;
                }
            }
        }
        loss *= scale;
        if self.aux_weight != 0.0 {
            let (aux, aux_grad) = cosine_penalty(params, self.schema.total_values(), v);
            loss += self.aux_weight * aux;
            for (g, a) in grad.iter_mut().zip(aux_grad) {
                *g += self.aux_weight * a;
            }
        }
        Ok((loss, grad))
    }

    fn hessian_vector(
        &self,
        params: &[f64],
        batch: &TokenBatch,
        direction: &[f64],
    ) -> Result<Vec<f64>> {
        self.check(params, batch)?;
        if direction.len() != params.len() {
            return Err(Error::InvalidArgument(
                "direction and parameters differ in length".into(),
            ));
        }
        let v = self.vocab;
        let scale = 1.0 / batch.len() as f64;
        let mut out = vec![0.0; params.len()];
        for rec in batch.records() {
            let z = logits_at(&self.schema, v, &self.phi, params, &rec.combination);
            let (_, p) = softmax(&z);
            let dz = logits_at(&self.schema, v, &vec![0.0; v], direction, &rec.combination);
            let pd: f64 = p.iter().zip(&dz).map(|(a, b)| a * b).sum();
            let len = rec.text.len() as f64;
            let hz: Vec<f64> = p
                .iter()
                .zip(&dz)
                .map(|(pj, dj)| len * pj * (dj - pd) * scale)
                .collect();
            for r in rows_of(&self.schema, &rec.combination) {
                for (o, h) in out[r * v..(r + 1) * v].iter_mut().zip(&hz) {
                    *o += h;
                }
            }
        }
        if self.aux_weight != 0.0 {
            let dual: Vec<Dual> = params
                .iter()
                .zip(direction)
                .map(|(&re, &du)| Dual { re, du })
                .collect();
            let (_, g) = cosine_penalty(&dual, self.schema.total_values(), v);
            for (o, gd) in out.iter_mut().zip(g) {
                *o += self.aux_weight * gd.du;
            }
        }
        Ok(out)
    }
}

/// Training loss on `pcomp` at the parameters reached by one gradient step of
/// rate `alpha_lr` on `train`. The step is taken on a copy; `params` is not
/// modified.
pub fn pseudo_comp_loss<O: Objective>(
    objective: &O,
    params: &[f64],
    train: &O::Data,
    pcomp: &O::Data,
    alpha_lr: f64,
) -> Result<f64> {
    let (_, g) = objective.value_and_grad(params, train)?;
    let inner = descend(params, &g, alpha_lr);
    Ok(objective.value_and_grad(&inner, pcomp)?.0)
}

/// `train(θ) + λ·train(θ − α∇train(θ))` evaluated on the pseudo-comp batch.
pub fn meta_objective<O: Objective>(
    objective: &O,
    params: &[f64],
    train: &O::Data,
    pcomp: &O::Data,
    alpha_lr: f64,
    lambda_weight: f64,
) -> Result<f64> {
    let (l_train, _) = objective.value_and_grad(params, train)?;
    Ok(l_train + lambda_weight * pseudo_comp_loss(objective, params, train, pcomp, alpha_lr)?)
}

fn descend(params: &[f64], grad: &[f64], rate: f64) -> Vec<f64> {
    params.iter().zip(grad).map(|(p, g)| p - rate * g).collect()
}

/// Losses observed during one meta step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub l_train: f64,
    pub l_pcomp: f64,
    pub total: f64,
}

/// Gradient of [`meta_objective`] with respect to `params`. With
/// `second_order` false the Hessian-vector correction is dropped.
pub fn meta_gradient<O: Objective>(
    objective: &O,
    params: &[f64],
    train: &O::Data,
    pcomp: &O::Data,
    config: &TrainConfig,
) -> Result<(Vec<f64>, StepReport)> {
    let (l_train, g_train) = objective.value_and_grad(params, train)?;
    let inner = descend(params, &g_train, config.alpha_lr);
    let (l_pcomp, g_pcomp) = objective.value_and_grad(&inner, pcomp)?;
    let through_inner = if config.second_order {
        let hv = objective.hessian_vector(params, train, &g_pcomp)?;
        g_pcomp
            .iter()
            .zip(&hv)
            .map(|(g, h)| g - config.alpha_lr * h)
            .collect()
    } else {
        g_pcomp
    };
    let grad = g_train
        .iter()
        .zip(&through_inner)
        .map(|(a, b)| a + config.lambda_weight * b)
        .collect();
    let report = StepReport {
        l_train,
        l_pcomp,
        total: l_train + config.lambda_weight * l_pcomp,
    };
    Ok((grad, report))
}

/// One outer update with rate `beta_lr`; returns the new parameters.
pub fn meta_step<O: Objective>(
    objective: &O,
    params: &[f64],
    train: &O::Data,
    pcomp: &O::Data,
    config: &TrainConfig,
) -> Result<(Vec<f64>, StepReport)> {
    config.validate()?;
    let (grad, report) = meta_gradient(objective, params, train, pcomp, config)?;
    Ok((descend(params, &grad, config.beta_lr), report))
}

/// Plain gradient step with rate `beta_lr` on `train` alone.
pub fn sgd_step<O: Objective>(
    objective: &O,
    params: &[f64],
    train: &O::Data,
    beta_lr: f64,
) -> Result<(Vec<f64>, f64)> {
    let (loss, grad) = objective.value_and_grad(params, train)?;
    Ok((descend(params, &grad, beta_lr), loss))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Inner step rate.
    pub alpha_lr: f64,
    /// Outer step rate.
    pub beta_lr: f64,
    /// Weight of the pseudo-comp term.
    pub lambda_weight: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    pub aux_loss_weight: f64,
    pub second_order: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha_lr: 0.05,
            beta_lr: 0.05,
            lambda_weight: 0.01,
            batch_size: 4,
            steps: 200,
            seed: 0,
            aux_loss_weight: 0.0,
            second_order: true,
        }
    }
}

impl TrainConfig {
    /// Sets both step rates to `rate`.
    pub fn with_learning_rate(mut self, rate: f64) -> Self {
        self.alpha_lr = rate;
        self.beta_lr = rate;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, x: f64| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!(
                    "{name} must be positive, got {x}"
                )))
            }
        };
        positive("alpha_lr", self.alpha_lr)?;
        positive("beta_lr", self.beta_lr)?;
        if !(self.lambda_weight >= 0.0 && self.lambda_weight.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "lambda_weight must be >= 0, got {}",
                self.lambda_weight
            )));
        }
        if !self.aux_loss_weight.is_finite() {
            return Err(Error::InvalidArgument(
                "aux_loss_weight must be finite".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Synthetic corpus where every attribute value owns a disjoint block of
/// tokens. Each position first picks an aspect uniformly, then a token of
/// that aspect's value uniformly; with probability `noise` the token is
/// instead uniform over the whole vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScenario {
    pub split: Split,
    pub tokens_per_value: usize,
    /// Filler tokens owned by no attribute value.
    pub extra_tokens: usize,
    pub noise: f64,
    pub seq_len: usize,
    pub records_per_combination: usize,
}

impl SyntheticScenario {
    pub fn new(split: Split) -> Self {
        Self {
            split,
            tokens_per_value: 2,
            extra_tokens: 4,
            noise: 0.1,
            seq_len: 8,
            records_per_combination: 32,
        }
    }

    pub fn schema(&self) -> &Arc<AttributeSchema> {
        self.split.schema()
    }

    pub fn vocab(&self) -> usize {
        self.schema().total_values() * self.tokens_per_value + self.extra_tokens
    }

    /// Tokens planted for one attribute value.
    pub fn value_tokens(&self, aspect: usize, value: usize) -> std::ops::Range<usize> {
        let start = self.schema().flat_index(aspect, value) * self.tokens_per_value;
        start..start + self.tokens_per_value
    }

    fn validate(&self) -> Result<()> {
        if self.tokens_per_value == 0 || self.seq_len == 0 || self.records_per_combination == 0 {
            return Err(Error::InvalidArgument(
                "tokens_per_value, seq_len and records_per_combination must be >= 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return Err(Error::InvalidArgument(format!(
                "noise must lie in [0, 1], got {}",
                self.noise
            )));
        }
        Ok(())
    }

    pub fn sample_sequence<R: Rng>(&self, combo: &Combination, rng: &mut R) -> Vec<usize> {
        let v = self.vocab();
        let m = combo.len();
        (0..self.seq_len)
            .map(|_| {
                if rng.gen::<f64>() < self.noise {
                    rng.gen_range(0..v)
                } else {
                    let aspect = rng.gen_range(0..m);
                    let block = self.value_tokens(aspect, combo.get(aspect));
                    rng.gen_range(block)
                }
            })
            .collect()
    }

    /// Training records for every in-distribution combination.
    pub fn generate_records(&self, seed: u64) -> Result<Vec<TokenRecord>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(self.split.id_set.len() * self.records_per_combination);
        for combo in self.split.id_set.iter() {
            for _ in 0..self.records_per_combination {
                out.push(LabeledRecord::new(
                    combo.clone(),
                    self.sample_sequence(combo, &mut rng),
                ));
            }
        }
        Ok(out)
    }

    /// Attribute-decoding accuracy of `model` on `combo`, in `[0, 1]`.
    ///
    /// For each aspect the highest-logit token among that aspect's planted
    /// tokens decodes the value. Ties split the credit, so an untrained
    /// model scores `1 / arity` per aspect.
    pub fn decode_accuracy(&self, model: &ToyGenModel, combo: &Combination) -> f64 {
        let z = model.logits(combo);
        let schema = self.schema();
        let mut total = 0.0;
        for aspect in 0..schema.num_aspects() {
            let candidates: Vec<(usize, f64)> = (0..schema.arity(aspect))
                .flat_map(|value| self.value_tokens(aspect, value).map(move |t| (value, t)))
                .map(|(value, t)| (value, z[t]))
                .collect();
            let best = candidates
                .iter()
                .map(|c| c.1)
                .fold(f64::NEG_INFINITY, f64::max);
            let winners: Vec<usize> = candidates
                .iter()
                .filter(|c| c.1 == best)
                .map(|c| c.0)
                .collect();
            let hits = winners.iter().filter(|&&v| v == combo.get(aspect)).count();
            total += hits as f64 / winners.len() as f64;
        }
        total / schema.num_aspects() as f64
    }

    /// Mean decoding accuracy over a combination set, in percent.
    pub fn set_accuracy<'a>(
        &self,
        model: &ToyGenModel,
        combos: impl IntoIterator<Item = &'a Combination>,
    ) -> f64 {
        let (sum, n) = combos.into_iter().fold((0.0, 0usize), |(s, n), c| {
            (s + self.decode_accuracy(model, c), n + 1)
        });
        if n == 0 {
            f64::NAN
        } else {
            100.0 * sum / n as f64
        }
    }
}

/// Final evaluation of one trainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerOutcome {
    pub id_accuracy: f64,
    pub comp_accuracy: f64,
    pub gap: f64,
    #[serde(skip)]
    pub theta: Vec<f64>,
}

/// One line of the per-step training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub trainer: String,
    pub step: usize,
    pub l_train: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_pcomp: Option<f64>,
    pub id_accuracy: f64,
    pub comp_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: TrainConfig,
    pub baseline: TrainerOutcome,
    pub meta: TrainerOutcome,
    /// Steps on which a pseudo-comp batch could be drawn.
    pub pcomp_steps: usize,
    #[serde(skip)]
    pub log: Vec<StepRecord>,
}

impl ExperimentReport {
    /// Writes the step log as one JSON object per line.
    pub fn write_log<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for rec in &self.log {
            serde_json::to_writer(&mut out, rec)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Trains a baseline and a meta trainer from the same zero initialization on
/// the same batch sequence and evaluates both on the split's in-distribution
/// and compositional combinations.
///
/// Steps where no pseudo-comp batch can be drawn fall back to a plain step
/// for the meta trainer.
pub fn run_experiment(
    scenario: &SyntheticScenario,
    config: &TrainConfig,
) -> Result<ExperimentReport> {
    config.validate()?;
    let split = &scenario.split;
    let full = split.id_set.union(&split.comp_set)?;
    let report = is_eligible_split(&full, &split.id_set, &split.comp_set)?;
    if !report.is_eligible() {
        return Err(Error::NoEligibleSplit(report.describe(split.schema())));
    }
    if split.comp_set.is_empty() {
        return Err(Error::InvalidArgument(
            "scenario split has no compositional combinations".into(),
        ));
    }
    if !admits_pcomp(&split.id_set) {
        return Err(Error::NoPseudoCompCandidates(
            "no in-distribution combination is a recombination of the others".into(),
        ));
    }

    let schema = split.schema().clone();
    let records = scenario.generate_records(config.seed)?;
    let base_model = ToyGenModel::new(schema.clone(), scenario.vocab())?;
    let objective = base_model.objective(config.aux_loss_weight);
    let mut baseline = base_model.clone();
    let mut meta = base_model;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut log = Vec::with_capacity(2 * config.steps);
    let mut pcomp_steps = 0;
    let batch_size = config.batch_size.min(records.len());

    for step in 0..config.steps {
        let picked: Vec<TokenRecord> = records
            .choose_multiple(&mut rng, batch_size)
            .cloned()
            .collect();
        let train = Batch::new(schema.clone(), picked)?;
        let pcomp_seed: u64 = rng.gen();
        let pcomp = match sample_pcomp_batch(&train, &records, batch_size, pcomp_seed) {
            Ok(b) => Some(b),
            Err(Error::NoPseudoCompCandidates(_) | Error::PoolExhausted(_)) => None,
            Err(e) => return Err(e),
        };

        let (next, l_train) = sgd_step(&objective, &baseline.theta, &train, config.beta_lr)?;
        baseline.theta = next;
        log.push(StepRecord {
            trainer: "baseline".into(),
            step,
            l_train,
            l_pcomp: None,
            id_accuracy: scenario.set_accuracy(&baseline, split.id_set.iter()),
            comp_accuracy: scenario.set_accuracy(&baseline, split.comp_set.iter()),
        });

        let (next, l_train, l_pcomp) = match &pcomp {
            Some(pc) => {
                pcomp_steps += 1;
                let (next, rep) = meta_step(&objective, &meta.theta, &train, pc, config)?;
                (next, rep.l_train, Some(rep.l_pcomp))
            }
            None => {
                let (next, l) = sgd_step(&objective, &meta.theta, &train, config.beta_lr)?;
                (next, l, None)
            }
        };
        meta.theta = next;
        log.push(StepRecord {
            trainer: "meta".into(),
            step,
            l_train,
            l_pcomp,
            id_accuracy: scenario.set_accuracy(&meta, split.id_set.iter()),
            comp_accuracy: scenario.set_accuracy(&meta, split.comp_set.iter()),
        });
    }

    let outcome = |model: ToyGenModel| -> Result<TrainerOutcome> {
        let id_accuracy = scenario.set_accuracy(&model, split.id_set.iter());
        let comp_accuracy = scenario.set_accuracy(&model, split.comp_set.iter());
        Ok(TrainerOutcome {
            id_accuracy,
            comp_accuracy,
            gap: protocol_gap(id_accuracy, comp_accuracy)?,
            theta: model.theta,
        })
    };
    Ok(ExperimentReport {
        config: config.clone(),
        baseline: outcome(baseline)?,
        meta: outcome(meta)?,
        pcomp_steps,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{full_product, CombinationSet, Protocol};

    fn schema() -> Arc<AttributeSchema> {
        Arc::new(AttributeSchema::from_shape(&[2, 2, 2]).unwrap())
    }

    fn batch(s: &Arc<AttributeSchema>, seqs: &[(&[usize], &[usize])]) -> TokenBatch {
        Batch::new(
            s.clone(),
            seqs.iter()
                .map(|(c, t)| LabeledRecord::new(Combination::new(c.to_vec()), t.to_vec()))
                .collect(),
        )
        .unwrap()
    }

    fn random_params(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn fd_grad(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
        let mut x = x.to_vec();
        (0..x.len())
            .map(|i| {
                let orig = x[i];
                x[i] = orig + h;
                let up = f(&x);
                x[i] = orig - h;
                let down = f(&x);
                x[i] = orig;
                (up - down) / (2.0 * h)
            })
            .collect()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let diff: f64 = a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
        diff / norm.max(1e-12)
    }

    #[test]
    fn uniform_model_loss() {
        let s = schema();
        let model = ToyGenModel::new(s.clone(), 10).unwrap();
        let b = batch(
            &s,
            &[
                (&[0, 1, 0], &[1, 2, 3, 4, 5]),
                (&[1, 1, 0], &[0, 0, 0, 0, 0]),
            ],
        );
        let (loss, _) = train_loss(&model, &b).unwrap();
        assert!((loss - 5.0 * 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn gradient_and_hvp_match_finite_differences() {
        let s = schema();
        let b = batch(&s, &[(&[0, 1, 0], &[1, 2, 3, 1]), (&[1, 0, 1], &[4, 4, 0])]);
        for aux in [0.0, 0.3] {
            let model = ToyGenModel::new(s.clone(), 5).unwrap();
            let obj = model.objective(aux);
            let theta = random_params(model.theta.len(), 7);
            let (_, g) = obj.value_and_grad(&theta, &b).unwrap();
            let fd = fd_grad(|t| obj.value_and_grad(t, &b).unwrap().0, &theta, 1e-6);
            assert!(rel_err(&g, &fd) < 1e-6, "aux {aux}");

            let dir = random_params(theta.len(), 8);
            let hv = obj.hessian_vector(&theta, &b, &dir).unwrap();
            let h = 1e-5;
            let plus: Vec<f64> = theta.iter().zip(&dir).map(|(t, d)| t + h * d).collect();
            let minus: Vec<f64> = theta.iter().zip(&dir).map(|(t, d)| t - h * d).collect();
            let gp = obj.value_and_grad(&plus, &b).unwrap().1;
            let gm = obj.value_and_grad(&minus, &b).unwrap().1;
            let fd_hv: Vec<f64> = gp
                .iter()
                .zip(&gm)
                .map(|(a, c)| (a - c) / (2.0 * h))
                .collect();
            assert!(rel_err(&hv, &fd_hv) < 1e-6, "aux {aux}");
        }
    }

    #[test]
    fn loss_decreases_with_scale_on_separable_data() {
        let s = schema();
        let mut model = ToyGenModel::new(s.clone(), 6).unwrap();
        // value row r favours token r
        for r in 0..6 {
            model.theta[r * 6 + r] = 1.0;
        }
        let b = batch(&s, &[(&[0, 0, 0], &[0, 2, 4]), (&[1, 1, 1], &[1, 3, 5])]);
        let base = model.theta.clone();
        let losses: Vec<f64> = [1.0, 2.0, 4.0]
            .iter()
            .map(|k| {
                model.theta = base.iter().map(|t| t * k).collect();
                train_loss(&model, &b).unwrap().0
            })
            .collect();
        assert!(losses[0] > losses[1] && losses[1] > losses[2], "{losses:?}");
    }

    #[test]
    fn quadratic_closed_forms() {
        let cfg = TrainConfig {
            alpha_lr: 0.3,
            beta_lr: 0.2,
            lambda_weight: 0.7,
            ..TrainConfig::default()
        };
        let theta = [1.5];
        let l = pseudo_comp_loss(&QuadraticObjective, &theta, &(), &(), cfg.alpha_lr).unwrap();
        assert!((l - 0.5 * 0.7f64.powi(2) * 1.5f64.powi(2)).abs() < 1e-12);
        let (next, _) = meta_step(&QuadraticObjective, &theta, &(), &(), &cfg).unwrap();
        let expected = 1.5 - 0.2 * (1.0 + 0.7 * 0.7f64.powi(2)) * 1.5;
        assert!((next[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn pseudo_comp_loss_special_cases() {
        let s = schema();
        let model = ToyGenModel::new(s.clone(), 5).unwrap();
        let obj = model.objective(0.0);
        let theta = random_params(model.theta.len(), 3);
        let tr = batch(&s, &[(&[0, 0, 0], &[1, 2]), (&[1, 1, 0], &[3])]);
        let pc = batch(&s, &[(&[0, 1, 0], &[0, 4])]);
        // a vanishing inner rate evaluates the pseudo-comp batch at theta
        let l0 = pseudo_comp_loss(&obj, &theta, &tr, &pc, 0.0).unwrap();
        assert_eq!(l0, obj.value_and_grad(&theta, &pc).unwrap().0);
        let l = pseudo_comp_loss(&obj, &theta, &tr, &tr, 0.1).unwrap();
        let (_, g) = obj.value_and_grad(&theta, &tr).unwrap();
        let stepped = descend(&theta, &g, 0.1);
        assert_eq!(l, obj.value_and_grad(&stepped, &tr).unwrap().0);
    }

    #[test]
    fn meta_gradient_matches_composite_finite_differences() {
        let s = schema();
        let model = ToyGenModel::new(s.clone(), 5).unwrap();
        let obj = model.objective(0.0);
        let tr = batch(&s, &[(&[0, 0, 0], &[1, 2, 1]), (&[1, 1, 0], &[3, 0])]);
        let pc = batch(&s, &[(&[0, 1, 0], &[0, 4, 2]), (&[1, 0, 0], &[2])]);
        let cfg = TrainConfig {
            alpha_lr: 0.4,
            lambda_weight: 0.8,
            ..TrainConfig::default()
        };
        let theta = random_params(model.theta.len(), 11);
        let (g, _) = meta_gradient(&obj, &theta, &tr, &pc, &cfg).unwrap();
        let fd = fd_grad(
            |t| meta_objective(&obj, t, &tr, &pc, cfg.alpha_lr, cfg.lambda_weight).unwrap(),
            &theta,
            1e-5,
        );
        assert!(rel_err(&g, &fd) < 1e-6);
        let first = TrainConfig {
            second_order: false,
            ..cfg
        };
        let (g1, _) = meta_gradient(&obj, &theta, &tr, &pc, &first).unwrap();
        assert!(
            rel_err(&g1, &fd) > 1e-4,
            "first-order should visibly differ here"
        );
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            lambda_weight: -1.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            alpha_lr: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    fn toy_split() -> Split {
        let s = schema();
        let full = full_product(&s);
        let id = CombinationSet::from_indices(
            s.clone(),
            &[&[0, 0, 0], &[0, 0, 1], &[0, 1, 0], &[1, 0, 0]],
        )
        .unwrap();
        let comp = full.difference(&id).unwrap();
        Split {
            protocol: Protocol::Acd,
            id_set: id,
            comp_set: comp,
            divergence: None,
            seed: 0,
        }
    }

    #[test]
    fn untrained_model_scores_chance() {
        let sc = SyntheticScenario::new(toy_split());
        let model = ToyGenModel::new(sc.schema().clone(), sc.vocab()).unwrap();
        assert_eq!(sc.set_accuracy(&model, sc.split.id_set.iter()), 50.0);
        let cfg = TrainConfig {
            steps: 0,
            ..TrainConfig::default()
        };
        let r = run_experiment(&sc, &cfg).unwrap();
        assert_eq!(r.baseline.id_accuracy, 50.0);
        assert_eq!(r.meta.comp_accuracy, 50.0);
    }

    #[test]
    fn zero_lambda_matches_baseline_and_runs_are_deterministic() {
        let sc = SyntheticScenario::new(toy_split());
        let cfg = TrainConfig {
            lambda_weight: 0.0,
            steps: 30,
            ..TrainConfig::default()
        };
        let r = run_experiment(&sc, &cfg).unwrap();
        assert!(r.pcomp_steps > 0);
        for (a, b) in r.meta.theta.iter().zip(&r.baseline.theta) {
            assert!((a - b).abs() <= 1e-12);
        }
        let again = run_experiment(&sc, &cfg).unwrap();
        assert_eq!(r, again);
    }

    #[test]
    fn fewshot_scenario_rejected() {
        let s = schema();
        let id = CombinationSet::from_indices(s.clone(), &[&[0, 0, 0], &[1, 1, 1]]).unwrap();
        let comp = full_product(&s).difference(&id).unwrap();
        let split = Split {
            protocol: Protocol::FewShot,
            id_set: id,
            comp_set: comp,
            divergence: None,
            seed: 0,
        };
        let r = run_experiment(&SyntheticScenario::new(split), &TrainConfig::default());
        assert!(matches!(r, Err(Error::NoPseudoCompCandidates(_))));
    }

    #[test]
    fn step_log_is_json_lines() {
        let sc = SyntheticScenario::new(toy_split());
        let cfg = TrainConfig {
            steps: 3,
            ..TrainConfig::default()
        };
        let r = run_experiment(&sc, &cfg).unwrap();
        let mut buf = Vec::new();
        r.write_log(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 6);
        for line in text.lines() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            assert!(v.get("l_train").is_some());
        }
    }
}
