//! Training strategies as mini-batch state machines: normal training,
//! forward loss correction, decoupling (update on disagreement), and
//! co-teaching (cross-feeding of small-loss selections) — each composable
//! with the paired-view KL regularizer.
//!
//! Two-network strategies compute both gradients from pre-step parameters
//! and only then apply the two optimizer updates, so neither update sees the
//! other's effect within a step.

mod estimate;

pub use estimate::{estimate_transition, TransitionEstimate};

use crate::augment::{augment_pair, AugmentPolicy, AugmentedPair};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::losses::{
    self, cce_per_sample, forward_corrected_per_sample, kl_divergence, CorrectionOrientation,
    LossValue, SampleWeights,
};
use crate::nn::{AdamState, ForwardTrace, LayerSpec, Network};
use crate::noise::NoiseTransitionMatrix;
use crate::rng;
use crate::tensor::Tensor;

/// Which update rule a state machine runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StrategyKind {
    Normal,
    FCorrection,
    Decoupling,
    Coteaching,
}

impl StrategyKind {
    pub fn network_count(self) -> usize {
        match self {
            StrategyKind::Normal | StrategyKind::FCorrection => 1,
            StrategyKind::Decoupling | StrategyKind::Coteaching => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Normal => "normal",
            StrategyKind::FCorrection => "fcorrection",
            StrategyKind::Decoupling => "decoupling",
            StrategyKind::Coteaching => "coteaching",
        }
    }
}

/// Where forward correction gets its transition matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransitionSource {
    /// The true corruption matrix is handed to the state directly.
    Oracle,
    /// Estimated from anchor points after a warm-up phase.
    Estimated,
}

#[derive(Debug, Clone)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    pub psdr_enabled: bool,
    /// Weight of the KL term in the combined objective.
    pub alpha: f64,
    /// Epochs over which the co-teaching keep rate ramps down.
    pub e_k: usize,
    /// Maximum discard ratio; the keep rate floors at `1 - tau`.
    pub tau: f64,
    pub t_source: TransitionSource,
    pub correction_orientation: CorrectionOrientation,
    /// Use raw sums instead of set-size means for the co-teaching step terms.
    pub sum_reduction: bool,
}

impl StrategyConfig {
    pub fn new(kind: StrategyKind) -> Self {
        Self {
            kind,
            psdr_enabled: false,
            alpha: 1.0,
            e_k: 10,
            tau: 0.5,
            t_source: TransitionSource::Oracle,
            correction_orientation: CorrectionOrientation::Transpose,
            sum_reduction: false,
        }
    }

    pub fn with_psdr(mut self, alpha: f64) -> Self {
        self.psdr_enabled = true;
        self.alpha = alpha;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "alpha must be nonnegative, got {}",
                self.alpha
            )));
        }
        if !(0.0..1.0).contains(&self.tau) {
            return Err(Error::InvalidParameter(format!(
                "tau must lie in [0, 1), got {}",
                self.tau
            )));
        }
        if self.e_k == 0 {
            return Err(Error::InvalidParameter("E_k must be at least 1".into()));
        }
        Ok(())
    }
}

/// The co-teaching keep-rate schedule `R(e) = 1 - min((e / E_k) tau, tau)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeepRateSchedule {
    pub e_k: usize,
    pub tau: f64,
}

impl KeepRateSchedule {
    pub fn rate_at(&self, epoch: usize) -> f64 {
        keep_rate(self, epoch)
    }
}

/// `R(e) = 1 - min((e / E_k) tau, tau)`, with `e / E_k` as a real ratio.
/// Exactly 1 at epoch 0, piecewise linear down to `1 - tau` at `E_k`,
/// constant afterwards.
pub fn keep_rate(schedule: &KeepRateSchedule, epoch: usize) -> f64 {
    let ramp = (epoch as f64 / schedule.e_k as f64) * schedule.tau;
    1.0 - ramp.min(schedule.tau)
}

/// Indices of the `max(1, round(keep_rate * B))` smallest losses, ties broken
/// by ascending original index, returned in ascending index order.
pub fn select_small_loss(per_sample_losses: &[f64], keep_rate: f64) -> Result<Vec<usize>> {
    let b = per_sample_losses.len();
    if b == 0 {
        return Err(Error::InvalidData("cannot select from an empty batch".into()));
    }
    if !(keep_rate > 0.0 && keep_rate <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "keep rate must lie in (0, 1], got {keep_rate}"
        )));
    }
    let k = ((keep_rate * b as f64).round() as usize).clamp(1, b);
    let mut order: Vec<usize> = (0..b).collect();
    order.sort_by(|&i, &j| {
        per_sample_losses[i]
            .total_cmp(&per_sample_losses[j])
            .then(i.cmp(&j))
    });
    let mut selected = order[..k].to_vec();
    selected.sort_unstable();
    Ok(selected)
}

/// One mini-batch of paired views, assembled from per-sample pairs.
#[derive(Debug, Clone)]
pub struct PairBatch {
    pub x_prime: Tensor,
    pub x_double_prime: Tensor,
    pub labels: Vec<usize>,
    pub source_indices: Vec<usize>,
}

impl PairBatch {
    pub fn from_pairs(pairs: &[AugmentedPair]) -> Result<Self> {
        let first = pairs
            .first()
            .ok_or_else(|| Error::InvalidData("empty pair batch".into()))?;
        let sample_shape = first.x_prime.shape().to_vec();
        let mut shape = Vec::with_capacity(sample_shape.len() + 1);
        shape.push(pairs.len());
        shape.extend_from_slice(&sample_shape);
        let mut prime = Vec::with_capacity(pairs.len() * first.x_prime.len());
        let mut double = Vec::with_capacity(prime.capacity());
        let mut labels = Vec::with_capacity(pairs.len());
        let mut sources = Vec::with_capacity(pairs.len());
        for p in pairs {
            if p.x_prime.shape() != sample_shape || p.x_double_prime.shape() != sample_shape {
                return Err(Error::Dimension(
                    "augmented pairs in one batch must share a shape".into(),
                ));
            }
            prime.extend_from_slice(p.x_prime.data());
            double.extend_from_slice(p.x_double_prime.data());
            labels.push(p.label);
            sources.push(p.source_index);
        }
        Ok(Self {
            x_prime: Tensor::new(shape.clone(), prime)?,
            x_double_prime: Tensor::new(shape, double)?,
            labels,
            source_indices: sources,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// One network with its optimizer state.
#[derive(Debug, Clone)]
pub struct TrainedNet {
    pub net: Network,
    pub opt: AdamState,
}

/// Mutable training state: one or two networks, the epoch counter, and the
/// transition matrix used by forward correction.
#[derive(Debug, Clone)]
pub struct StrategyState {
    pub config: StrategyConfig,
    pub nets: Vec<TrainedNet>,
    pub epoch: usize,
    pub transition: Option<NoiseTransitionMatrix>,
}

/// Per-network metrics of one step. `predictions` are the argmax classes on
/// the x' views, so callers can score accuracy against labels the training
/// arithmetic itself never touches.
#[derive(Debug, Clone)]
pub struct NetStepMetrics {
    pub supervised_loss: f64,
    pub psdr_loss: f64,
    pub combined_loss: f64,
    pub predictions: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct StepMetrics {
    pub per_net: Vec<NetStepMetrics>,
}

/// Per-network metrics aggregated over an epoch.
#[derive(Debug, Clone)]
pub struct NetEpochMetrics {
    pub supervised_loss: f64,
    pub psdr_loss: f64,
    pub combined_loss: f64,
    pub train_acc_observed: f64,
    pub train_acc_true: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub keep_rate: f64,
    pub per_net: Vec<NetEpochMetrics>,
}

impl StrategyState {
    /// Builds the state with per-network seeds derived from the master seed,
    /// so two-network strategies start from different initializations.
    pub fn new(
        config: StrategyConfig,
        specs: &[LayerSpec],
        master_seed: u64,
        learning_rate: f64,
        weight_decay: f64,
    ) -> Result<Self> {
        let seeds: Vec<u64> = (0..config.kind.network_count())
            .map(|k| rng::derive_seed(master_seed, "net", &[k as u64]))
            .collect();
        Self::with_net_seeds(config, specs, &seeds, learning_rate, weight_decay)
    }

    /// Builds the state with explicit per-network seeds.
    pub fn with_net_seeds(
        config: StrategyConfig,
        specs: &[LayerSpec],
        seeds: &[u64],
        learning_rate: f64,
        weight_decay: f64,
    ) -> Result<Self> {
        config.validate()?;
        if seeds.len() != config.kind.network_count() {
            return Err(Error::InvalidParameter(format!(
                "{} strategy needs {} network seeds, got {}",
                config.kind.name(),
                config.kind.network_count(),
                seeds.len()
            )));
        }
        let mut nets = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let net = Network::new(specs.to_vec(), seed)?;
            let opt = AdamState::new(net.params(), learning_rate, weight_decay)?;
            nets.push(TrainedNet { net, opt });
        }
        Ok(Self { config, nets, epoch: 0, transition: None })
    }

    pub fn set_transition(&mut self, t: NoiseTransitionMatrix) {
        self.transition = Some(t);
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        for tn in &mut self.nets {
            tn.opt.set_learning_rate(lr);
        }
    }

    pub fn keep_rate_schedule(&self) -> KeepRateSchedule {
        KeepRateSchedule { e_k: self.config.e_k, tau: self.config.tau }
    }

    /// One mini-batch update, dispatched by strategy kind.
    pub fn step(&mut self, batch: &PairBatch) -> Result<StepMetrics> {
        if batch.is_empty() {
            return Err(Error::InvalidData("empty batch".into()));
        }
        match self.config.kind {
            StrategyKind::Normal => self.step_normal(batch),
            StrategyKind::FCorrection => self.step_fcorrection(batch),
            StrategyKind::Decoupling => self.step_decoupling(batch),
            StrategyKind::Coteaching => self.step_coteaching(batch),
        }
    }

    fn step_normal(&mut self, batch: &PairBatch) -> Result<StepMetrics> {
        let (pred, trace) = self.nets[0].net.forward(&batch.x_prime)?;
        let (supervised, sup_grad) = cce_per_sample(&pred, &batch.labels)?.mean();
        let metrics = finish_net_step(
            &self.config,
            &mut self.nets[0],
            batch,
            &pred,
            trace,
            supervised,
            sup_grad,
            true,
        )?;
        Ok(StepMetrics { per_net: vec![metrics] })
    }

    fn step_fcorrection(&mut self, batch: &PairBatch) -> Result<StepMetrics> {
        let t = self.transition.clone().ok_or_else(|| {
            Error::InvalidState(
                "forward correction needs a transition matrix (oracle or estimated)".into(),
            )
        })?;
        let (pred, trace) = self.nets[0].net.forward(&batch.x_prime)?;
        let per =
            forward_corrected_per_sample(&pred, &t, &batch.labels, self.config.correction_orientation)?;
        let (supervised, sup_grad) = per.mean();
        let metrics = finish_net_step(
            &self.config,
            &mut self.nets[0],
            batch,
            &pred,
            trace,
            supervised,
            sup_grad,
            true,
        )?;
        Ok(StepMetrics { per_net: vec![metrics] })
    }

    fn step_decoupling(&mut self, batch: &PairBatch) -> Result<StepMetrics> {
        let (p1, tr1) = self.nets[0].net.forward(&batch.x_prime)?;
        let (p2, tr2) = self.nets[1].net.forward(&batch.x_prime)?;
        // Disagreement set: samples where the two argmax predictions differ.
        let disagreement: Vec<usize> = (0..batch.len())
            .filter(|&t| argmax(p1.row(t)) != argmax(p2.row(t)))
            .collect();
        let weights = SampleWeights::from_selection(&disagreement, batch.len());
        // A step with no disagreement performs no supervised update; only the
        // KL term (when active) moves the networks.
        let take_step = !disagreement.is_empty();
        let mut per_net = Vec::with_capacity(2);
        for (tn, (pred, trace)) in
            self.nets.iter_mut().zip([(p1, tr1), (p2, tr2)])
        {
            let (supervised, sup_grad) = cce_per_sample(&pred, &batch.labels)?.weighted(&weights)?;
            per_net.push(finish_net_step(
                &self.config,
                tn,
                batch,
                &pred,
                trace,
                supervised,
                sup_grad,
                take_step,
            )?);
        }
        Ok(StepMetrics { per_net })
    }

    fn step_coteaching(&mut self, batch: &PairBatch) -> Result<StepMetrics> {
        let rate = keep_rate(&self.keep_rate_schedule(), self.epoch);
        let (p1, tr1) = self.nets[0].net.forward(&batch.x_prime)?;
        let (p2, tr2) = self.nets[1].net.forward(&batch.x_prime)?;
        let per1 = cce_per_sample(&p1, &batch.labels)?;
        let per2 = cce_per_sample(&p2, &batch.labels)?;
        let sel1 = select_small_loss(&per1.values, rate)?;
        let sel2 = select_small_loss(&per2.values, rate)?;
        // Cross-feeding: each network trains on the other's selection.
        let mut per_net = Vec::with_capacity(2);
        for (tn, (per, pred, trace, fed_selection)) in self.nets.iter_mut().zip([
            (per1, p1, tr1, &sel2),
            (per2, p2, tr2, &sel1),
        ]) {
            let weights = SampleWeights::from_selection(fed_selection, batch.len());
            let (mut supervised, mut sup_grad) = per.weighted(&weights)?;
            if self.config.sum_reduction {
                scale_loss(&mut supervised, &mut sup_grad, fed_selection.len() as f64);
            }
            per_net.push(finish_net_step(
                &self.config,
                tn,
                batch,
                &pred,
                trace,
                supervised,
                sup_grad,
                true,
            )?);
        }
        Ok(StepMetrics { per_net })
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn scale_loss(value: &mut LossValue, grad: &mut Tensor, factor: f64) {
    value.scalar *= factor;
    value.per_sample.iter_mut().for_each(|v| *v *= factor);
    grad.data_mut().iter_mut().for_each(|g| *g *= factor);
}

/// The KL term of one network on one batch. Gradients are produced only when
/// they will be applied (regularizer enabled with a nonzero weight); the
/// value is always computed when enabled, so metrics stay honest at alpha 0.
struct PsdrTerm {
    value: LossValue,
    grads: Option<(Tensor, Tensor, ForwardTrace)>,
}

fn psdr_term(
    config: &StrategyConfig,
    net: &Network,
    batch: &PairBatch,
    pred_prime: &Tensor,
) -> Result<PsdrTerm> {
    if !config.psdr_enabled {
        return Ok(PsdrTerm { value: LossValue::zero(batch.len()), grads: None });
    }
    if config.alpha == 0.0 {
        let q = net.output(&batch.x_double_prime)?;
        let (value, _, _) = kl_divergence(pred_prime, &q)?;
        return Ok(PsdrTerm { value, grads: None });
    }
    let (q, trace_q) = net.forward(&batch.x_double_prime)?;
    let (value, dp, dq) = kl_divergence(pred_prime, &q)?;
    Ok(PsdrTerm { value, grads: Some((dp, dq, trace_q)) })
}

/// Shared tail of every step: add the KL term, backpropagate through the
/// view(s), and apply one Adam update. `take_step` is false only when a
/// strategy decides the supervised update must not happen (decoupling with
/// an empty disagreement set); the optimizer still steps if the KL term
/// contributes gradients.
#[allow(clippy::too_many_arguments)]
fn finish_net_step(
    config: &StrategyConfig,
    tn: &mut TrainedNet,
    batch: &PairBatch,
    pred_prime: &Tensor,
    trace_prime: ForwardTrace,
    supervised: LossValue,
    sup_grad: Tensor,
    take_step: bool,
) -> Result<NetStepMetrics> {
    let mut psdr = psdr_term(config, &tn.net, batch, pred_prime)?;
    if config.sum_reduction && config.kind == StrategyKind::Coteaching {
        if let Some((dp, dq, _)) = &mut psdr.grads {
            let b = batch.len() as f64;
            psdr.value.scalar *= b;
            psdr.value.per_sample.iter_mut().for_each(|v| *v *= b);
            dp.data_mut().iter_mut().for_each(|g| *g *= b);
            dq.data_mut().iter_mut().for_each(|g| *g *= b);
        }
    }
    let combined = losses::combined_loss(&supervised, &psdr.value, config.alpha)?;
    let predictions: Vec<usize> = (0..batch.len()).map(|t| argmax(pred_prime.row(t))).collect();

    let step_for_psdr = psdr.grads.is_some();
    if take_step || step_for_psdr {
        let mut upstream = sup_grad;
        if let Some((dp, _, _)) = &psdr.grads {
            for (u, d) in upstream.data_mut().iter_mut().zip(dp.data()) {
                *u += config.alpha * d;
            }
        }
        tn.net.backward(&trace_prime, &upstream)?;
        if let Some((_, dq, trace_q)) = &psdr.grads {
            let mut upstream_q = dq.clone();
            upstream_q
                .data_mut()
                .iter_mut()
                .for_each(|g| *g *= config.alpha);
            tn.net.backward(trace_q, &upstream_q)?;
        }
        tn.opt.step(tn.net.params_mut())?;
    }

    Ok(NetStepMetrics {
        supervised_loss: supervised.scalar,
        psdr_loss: psdr.value.scalar,
        combined_loss: combined.scalar,
        predictions,
    })
}

/// One pass over the dataset: shuffle with the epoch-derived stream,
/// partition into mini-batches (the last may be short), draw fresh paired
/// augmentations per sample, dispatch to the configured step, then advance
/// the epoch counter.
///
/// Augmentation pairs are drawn whether or not the KL term is enabled, so an
/// `alpha = 0` run consumes exactly the generator stream of a disabled run.
pub fn run_epoch(
    state: &mut StrategyState,
    dataset: &LabeledDataset,
    policy: &AugmentPolicy,
    batch_size: usize,
    run_seed: u64,
) -> Result<EpochMetrics> {
    if dataset.is_empty() {
        return Err(Error::InvalidData("cannot train on an empty dataset".into()));
    }
    if batch_size < 1 {
        return Err(Error::InvalidParameter("batch_size must be at least 1".into()));
    }
    policy.validate()?;
    let epoch = state.epoch;
    let n = dataset.len();
    let mut shuffle_rng = rng::substream_indexed(run_seed, "shuffle", &[epoch as u64]);
    let order = rng::shuffled_indices(n, &mut shuffle_rng);

    let net_count = state.config.kind.network_count();
    let mut sup_sum = vec![0.0; net_count];
    let mut psdr_sum = vec![0.0; net_count];
    let mut combined_sum = vec![0.0; net_count];
    let mut correct_observed = vec![0usize; net_count];
    let mut correct_true = vec![0usize; net_count];

    for chunk in order.chunks(batch_size) {
        let pairs: Vec<AugmentedPair> = chunk
            .iter()
            .map(|&src| {
                let mut sample_rng =
                    rng::substream_indexed(run_seed, "augment", &[epoch as u64, src as u64]);
                augment_pair(
                    policy,
                    &dataset.sample(src),
                    dataset.observed_labels[src],
                    src,
                    &mut sample_rng,
                )
            })
            .collect::<Result<_>>()?;
        let batch = PairBatch::from_pairs(&pairs)?;
        let metrics = state.step(&batch)?;
        for (k, net) in metrics.per_net.iter().enumerate() {
            let b = batch.len() as f64;
            sup_sum[k] += net.supervised_loss * b;
            psdr_sum[k] += net.psdr_loss * b;
            combined_sum[k] += net.combined_loss * b;
            for (t, &pred) in net.predictions.iter().enumerate() {
                if pred == batch.labels[t] {
                    correct_observed[k] += 1;
                }
                if let Some(truth) = &dataset.true_labels {
                    if pred == truth[batch.source_indices[t]] {
                        correct_true[k] += 1;
                    }
                }
            }
        }
    }

    let keep = keep_rate(&state.keep_rate_schedule(), epoch);
    state.epoch += 1;
    let per_net = (0..net_count)
        .map(|k| NetEpochMetrics {
            supervised_loss: sup_sum[k] / n as f64,
            psdr_loss: psdr_sum[k] / n as f64,
            combined_loss: combined_sum[k] / n as f64,
            train_acc_observed: correct_observed[k] as f64 / n as f64,
            train_acc_true: dataset
                .true_labels
                .as_ref()
                .map(|_| correct_true[k] as f64 / n as f64),
        })
        .collect();
    Ok(EpochMetrics { epoch, keep_rate: keep, per_net })
}

/// Clean-input accuracy of one network over a dataset, evaluated in chunks
/// without augmentation.
pub fn evaluate_accuracy(net: &Network, dataset: &LabeledDataset, chunk: usize) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::InvalidData("cannot evaluate an empty dataset".into()));
    }
    let n = dataset.len();
    let mut correct = 0usize;
    let indices: Vec<usize> = (0..n).collect();
    for block in indices.chunks(chunk.max(1)) {
        let inputs = dataset.batch(block)?;
        let pred = net.output(&inputs)?;
        for (row, &src) in block.iter().enumerate() {
            if argmax(pred.row(row)) == dataset.observed_labels[src] {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / n as f64)
}

#[cfg(test)]
mod tests;
