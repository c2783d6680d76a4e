//! Mini-batch training with early stopping, and the evaluation metrics:
//! accuracy, confusion matrix and top-k accuracy.

use std::fmt::Write as _;
use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{self, LabeledDataset, EMOTIONS};
use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::models::Network;
use crate::optim::{Optimizer, OptimizerConfig};
use crate::seed;
use crate::tensor::{argmax, Tensor};
use crate::NUM_CLASSES;

/// Which accuracy series drives early stopping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Monitor {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Early stopping fires after this many consecutive unchanged epochs.
    pub early_stop_window: usize,
    /// Largest epoch-over-epoch accuracy change still counted as "no change".
    pub early_stop_tolerance: f64,
    pub early_stopping: bool,
    pub monitor: Monitor,
    /// Re-evaluate the whole training set in inference mode after each epoch
    /// instead of using the running estimate from the epoch's batches.
    pub strict_epoch_eval: bool,
    /// Stop as soon as the monitored accuracy reaches this value.
    pub target_accuracy: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: OptimizerConfig::adam(1e-4).with_decay(1e-6),
            batch_size: 128,
            max_epochs: 100,
            early_stop_window: 4,
            early_stop_tolerance: 5e-4,
            early_stopping: true,
            monitor: Monitor::Train,
            strict_epoch_eval: false,
            target_accuracy: None,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be >= 1".into()));
        }
        if self.early_stop_window == 0 {
            return Err(Error::InvalidConfig("early-stop window must be >= 1".into()));
        }
        if self.early_stop_tolerance.is_nan() || self.early_stop_tolerance < 0.0 {
            return Err(Error::InvalidConfig("early-stop tolerance must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub test_accuracy: Option<f64>,
    pub seconds: f64,
}

pub const EPOCH_CSV_HEADER: &str = "epoch,loss,accuracy,seconds";

impl EpochLog {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.3}",
            self.epoch, self.loss, self.accuracy, self.seconds
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    MaxEpochs,
    EarlyStop,
    TargetReached,
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StopReason::MaxEpochs => "max_epochs",
            StopReason::EarlyStop => "early_stop",
            StopReason::TargetReached => "target_reached",
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub logs: Vec<EpochLog>,
    pub stop_reason: StopReason,
    /// Optimizer updates performed.
    pub steps: u64,
}

/// True iff the last `window` epoch-over-epoch changes of `history` are all
/// within `tolerance`. Needs at least `window + 1` entries.
pub fn early_stop(history: &[f64], window: usize, tolerance: f64) -> bool {
    if window == 0 || history.len() < window + 1 {
        return false;
    }
    history[history.len() - window - 1..]
        .windows(2)
        .all(|w| (w[1] - w[0]).abs() <= tolerance)
}

pub fn train(net: &mut Network<f32>, dataset: &LabeledDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(net, dataset, None, cfg, |_| {})
}

/// Train `net` on `dataset`. `test` is evaluated after every epoch when given
/// (and is required for [`Monitor::Test`]). `on_epoch` sees each log as soon
/// as the epoch finishes.
pub fn train_with(
    net: &mut Network<f32>,
    dataset: &LabeledDataset,
    test: Option<&LabeledDataset>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyInput("training set"));
    }
    if cfg.monitor == Monitor::Test && test.is_none_or(LabeledDataset::is_empty) {
        return Err(Error::InvalidConfig("test monitoring needs a non-empty test set".into()));
    }
    let mut optimizer = Optimizer::new(cfg.optimizer)?;
    let shuffle_root = seed::derive_named(cfg.seed, "shuffle");
    let dropout_root = seed::derive_named(cfg.seed, "dropout");
    let mut logs = Vec::new();
    let mut history = Vec::new();
    let mut stop_reason = StopReason::MaxEpochs;

    for epoch in 1..=cfg.max_epochs {
        let start = Instant::now();
        let mut loss_sum = 0.0f64;
        let mut correct = 0usize;
        let batches = data::batches(dataset, cfg.batch_size, seed::derive(shuffle_root, epoch as u64))?;
        for (batch_index, batch) in batches.enumerate() {
            let step_seed = seed::derive(dropout_root, optimizer.state().step_count());
            let (loss, hits) = train_step(net, &batch.images, &batch.onehots, &batch.labels, step_seed)
                .map_err(|e| match e {
                    Error::NonFinite(_) => Error::NonFiniteLoss { epoch, batch: batch_index },
                    other => other,
                })?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: batch_index });
            }
            loss_sum += loss * batch.len() as f64;
            correct += hits;
            optimizer.step(net.params_and_grads())?;
        }
        net.clear_caches();

        let accuracy = if cfg.strict_epoch_eval {
            evaluate(net, dataset)?.accuracy()
        } else {
            correct as f64 / dataset.len() as f64
        };
        let test_accuracy = match test {
            Some(t) if !t.is_empty() => Some(evaluate(net, t)?.accuracy()),
            _ => None,
        };
        let log = EpochLog {
            epoch,
            loss: loss_sum / dataset.len() as f64,
            accuracy,
            test_accuracy,
            seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: loss {:.4} accuracy {:.4}{}",
            log.loss,
            log.accuracy,
            test_accuracy.map_or(String::new(), |t| format!(" test {t:.4}"))
        );
        on_epoch(&log);
        let monitored = match cfg.monitor {
            Monitor::Train => accuracy,
            Monitor::Test => test_accuracy.expect("checked above"),
        };
        logs.push(log);
        history.push(monitored);

        if cfg.target_accuracy.is_some_and(|t| monitored >= t) {
            stop_reason = StopReason::TargetReached;
            break;
        }
        if cfg.early_stopping && early_stop(&history, cfg.early_stop_window, cfg.early_stop_tolerance) {
            stop_reason = StopReason::EarlyStop;
            break;
        }
    }
    Ok(TrainOutcome {
        logs,
        stop_reason,
        steps: optimizer.state().step_count(),
    })
}

/// Forward, fused softmax/cross-entropy gradient, L2 and backward for one
/// batch. Leaves the gradients in the network; returns the mean loss
/// (including the L2 penalty) and the number of correct predictions.
pub fn train_step(
    net: &mut Network<f32>,
    images: &Tensor<f32>,
    onehots: &Tensor<f32>,
    labels: &[usize],
    dropout_seed: u64,
) -> Result<(f64, usize)> {
    net.zero_grads();
    let probs = net.forward(images, Mode::Train, dropout_seed)?;
    let n = labels.len();
    let k = net.output_len();
    let scale = 1.0 / n as f32;
    let mut loss = 0.0f64;
    let mut correct = 0;
    let mut grad = Vec::with_capacity(n * k);
    for ((p, t), &label) in probs
        .data()
        .chunks_exact(k)
        .zip(onehots.data().chunks_exact(k))
        .zip(labels)
    {
        loss -= (p[label] as f64).max(crate::layers::PROB_FLOOR).ln();
        if argmax(p) == label {
            correct += 1;
        }
        grad.extend(p.iter().zip(t).map(|(&p, &t)| (p - t) * scale));
    }
    let grad = Tensor::new(&[n, k], grad)?;
    net.backward_from_logits(&grad)?;
    let penalty = net.apply_l2() as f64;
    Ok((loss / n as f64 + penalty, correct))
}

/// Inference-mode outputs over a dataset.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub probabilities: Vec<[f32; NUM_CLASSES]>,
    pub predictions: Vec<usize>,
    pub truths: Vec<usize>,
}

impl Evaluation {
    pub fn accuracy(&self) -> f64 {
        accuracy(&self.predictions, &self.truths).unwrap_or(0.0)
    }

    pub fn topk(&self, k: usize) -> f64 {
        topk_accuracy(&self.probabilities, &self.truths, k)
    }

    pub fn confusion(&self) -> ConfusionMatrix {
        confusion(&self.predictions, &self.truths)
    }
}

const EVAL_BATCH: usize = 64;

pub fn evaluate(net: &Network<f32>, dataset: &LabeledDataset) -> Result<Evaluation> {
    if net.output_len() != NUM_CLASSES {
        return Err(Error::shape(
            "evaluate",
            format!("network has {} outputs, expected {NUM_CLASSES}", net.output_len()),
        ));
    }
    let mut eval = Evaluation {
        probabilities: Vec::with_capacity(dataset.len()),
        predictions: Vec::with_capacity(dataset.len()),
        truths: dataset.labels().collect(),
    };
    let indices: Vec<usize> = (0..dataset.len()).collect();
    for chunk in indices.chunks(EVAL_BATCH) {
        let batch = dataset.gather(chunk);
        let probs = net.infer(&batch.images)?;
        for row in probs.data().chunks_exact(NUM_CLASSES) {
            let mut p = [0.0; NUM_CLASSES];
            p.copy_from_slice(row);
            eval.predictions.push(argmax(&p));
            eval.probabilities.push(p);
        }
    }
    Ok(eval)
}

/// Correct predictions over total samples.
pub fn accuracy(predictions: &[usize], truths: &[usize]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::EmptyInput("accuracy"));
    }
    if predictions.len() != truths.len() {
        return Err(Error::shape(
            "accuracy",
            format!("{} predictions vs {} truths", predictions.len(), truths.len()),
        ));
    }
    let correct = predictions.iter().zip(truths).filter(|(p, t)| p == t).count();
    Ok(correct as f64 / predictions.len() as f64)
}

/// Fraction of samples whose true class is among the `k` most probable,
/// ties ranked by lower class index. 0 for empty input.
pub fn topk_accuracy<P: AsRef<[f32]>>(probabilities: &[P], truths: &[usize], k: usize) -> f64 {
    if probabilities.is_empty() {
        return 0.0;
    }
    let hits = probabilities
        .iter()
        .zip(truths)
        .filter(|(p, &t)| {
            let p = p.as_ref();
            let rank = p
                .iter()
                .enumerate()
                .filter(|&(j, &v)| v > p[t] || (v == p[t] && j < t))
                .count();
            rank < k
        })
        .count();
    hits as f64 / probabilities.len() as f64
}

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ConfusionMatrix {
    pub counts: [[usize; NUM_CLASSES]; NUM_CLASSES],
}

pub fn confusion(predictions: &[usize], truths: &[usize]) -> ConfusionMatrix {
    let mut m = ConfusionMatrix::default();
    for (&p, &t) in predictions.iter().zip(truths) {
        m.counts[t][p] += 1;
    }
    m
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> usize {
        (0..NUM_CLASSES).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            n => self.trace() as f64 / n as f64,
        }
    }

    pub fn row_sums(&self) -> [usize; NUM_CLASSES] {
        self.counts.map(|row| row.iter().sum())
    }

    /// Each row divided by its sum; all-zero rows stay zero.
    pub fn row_rates(&self) -> [[f64; NUM_CLASSES]; NUM_CLASSES] {
        self.counts.map(|row| {
            let s: usize = row.iter().sum();
            row.map(|c| if s == 0 { 0.0 } else { c as f64 / s as f64 })
        })
    }

    /// `true\predicted,angry,...` header then one row per true class.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "true\\predicted,{}", EMOTIONS.join(","))?;
        for (label, row) in self.counts.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(usize::to_string).collect();
            writeln!(out, "{},{}", EMOTIONS[label], cells.join(","))?;
        }
        Ok(())
    }

    pub fn write_rates_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "true\\predicted,{}", EMOTIONS.join(","))?;
        for (label, row) in self.row_rates().iter().enumerate() {
            let cells: Vec<String> = row.iter().map(|r| format!("{r:.4}")).collect();
            writeln!(out, "{},{}", EMOTIONS[label], cells.join(","))?;
        }
        Ok(())
    }

    /// Aligned text table of counts.
    pub fn to_table(&self) -> String {
        let width = EMOTIONS
            .iter()
            .map(|e| e.len())
            .chain(self.counts.iter().flatten().map(|c| c.to_string().len()))
            .max()
            .unwrap_or(1);
        let mut s = format!("{:>width$}", "");
        for e in EMOTIONS {
            let _ = write!(s, " {e:>width$}");
        }
        s.push('\n');
        for (label, row) in self.counts.iter().enumerate() {
            let _ = write!(s, "{:>width$}", EMOTIONS[label]);
            for c in row {
                let _ = write!(s, " {c:>width$}");
            }
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic;
    use crate::models::{build, ArchConfig, ModelKind};

    #[test]
    fn early_stop_examples() {
        assert!(early_stop(&[0.5; 5], 4, 0.0));
        assert!(!early_stop(&[0.5; 4], 4, 0.0));
        assert!(!early_stop(&[0.1, 0.2, 0.3], 4, 0.0));
        assert!(!early_stop(&[0.5, 0.5, 0.5, 0.5, 0.6], 4, 0.0));
        assert!(early_stop(&[0.1, 0.5, 0.5, 0.5004, 0.5, 0.5], 4, 5e-4));
        assert!(!early_stop(&[0.1, 0.5, 0.5, 0.5006, 0.5, 0.5], 4, 5e-4));
    }

    #[test]
    fn accuracy_examples() {
        assert!((accuracy(&[1, 2, 3], &[1, 0, 3]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(accuracy(&[4, 4], &[4, 4]).unwrap(), 1.0);
        assert!(matches!(accuracy(&[], &[]), Err(Error::EmptyInput(_))));
        assert!(accuracy(&[1], &[1, 2]).is_err());
    }

    #[test]
    fn confusion_examples() {
        let m = confusion(&[0, 1, 2], &[0, 1, 2]);
        for i in 0..7 {
            for j in 0..7 {
                assert_eq!(m.counts[i][j], usize::from(i == j && i < 3));
            }
        }
        let m = confusion(&[5], &[3]);
        assert_eq!(m.counts[3][5], 1);
        assert_eq!(m.total(), 1);
        assert_eq!(m.row_rates()[3][5], 1.0);
        let mut csv = Vec::new();
        m.write_csv(&mut csv).unwrap();
        let csv = String::from_utf8(csv).unwrap();
        assert_eq!(csv.lines().nth(4).unwrap(), "happy,0,0,0,0,0,1,0");
        assert_eq!(m.to_table().lines().count(), 8);
    }

    #[test]
    fn topk_examples() {
        let p = [[0.1, 0.3, 0.2, 0.1, 0.1, 0.1, 0.1f32]];
        assert_eq!(topk_accuracy(&p, &[2], 1), 0.0);
        assert_eq!(topk_accuracy(&p, &[2], 2), 1.0);
        assert_eq!(topk_accuracy(&p, &[6], 7), 1.0);
        // tie at 0.1 between classes 0 and 3: class 0 ranks higher
        assert_eq!(topk_accuracy(&p, &[0], 3), 1.0);
        assert_eq!(topk_accuracy(&p, &[3], 3), 0.0);
    }

    fn tiny_dataset(n: usize) -> LabeledDataset {
        LabeledDataset::from_records(&synthetic::records(n, 11))
    }

    #[test]
    fn one_epoch_step_count() {
        let ds = tiny_dataset(10);
        let mut net = build(ModelKind::Ffnn, &ArchConfig { ffnn_hidden: [8, 8], ..ArchConfig::default() }, 1).unwrap();
        let cfg = TrainConfig {
            batch_size: 4,
            max_epochs: 1,
            ..TrainConfig::default()
        };
        let out = train(&mut net, &ds, &cfg).unwrap();
        assert_eq!(out.steps, 3);
        assert_eq!(out.logs.len(), 1);
        assert_eq!(out.stop_reason, StopReason::MaxEpochs);
    }

    #[test]
    fn zero_learning_rate_freezes_parameters() {
        let ds = tiny_dataset(6);
        let arch = ArchConfig { ffnn_hidden: [8, 8], ..ArchConfig::default() };
        let mut net = build(ModelKind::Ffnn, &arch, 2).unwrap();
        let before: Vec<Tensor<f32>> = net.params().cloned().collect();
        for optimizer in [OptimizerConfig::sgd(0.0), OptimizerConfig::rmsprop(0.0), OptimizerConfig::adam(0.0)] {
            let cfg = TrainConfig {
                optimizer,
                batch_size: 4,
                max_epochs: 3,
                ..TrainConfig::default()
            };
            train(&mut net, &ds, &cfg).unwrap();
        }
        assert!(net.params().eq(before.iter()));
    }

    #[test]
    fn training_is_bit_reproducible() {
        let ds = tiny_dataset(12);
        let arch = ArchConfig { input: [1, 48, 48], ..ArchConfig::toy() };
        let run = || {
            let mut arch = arch.clone();
            arch.padding = crate::layers::Padding::Valid;
            arch.proposed_filters = [2, 2, 2, 2, 2, 2];
            let mut net = build(ModelKind::ProposedCnn, &arch, 3).unwrap();
            let cfg = TrainConfig {
                optimizer: OptimizerConfig::adam(1e-3),
                batch_size: 5,
                max_epochs: 2,
                ..TrainConfig::default()
            };
            let out = train(&mut net, &ds, &cfg).unwrap();
            let params: Vec<Tensor<f32>> = net.params().cloned().collect();
            (out.logs.iter().map(|l| (l.loss, l.accuracy)).collect::<Vec<_>>(), params)
        };
        let (a, pa) = run();
        let (b, pb) = run();
        assert_eq!(a, b);
        assert_eq!(pa, pb);
    }

    #[test]
    fn early_stop_never_fires_before_window_plus_one() {
        let ds = tiny_dataset(8);
        let arch = ArchConfig { ffnn_hidden: [4, 4], ..ArchConfig::default() };
        let mut net = build(ModelKind::Ffnn, &arch, 4).unwrap();
        let cfg = TrainConfig {
            optimizer: OptimizerConfig::sgd(0.0),
            batch_size: 8,
            max_epochs: 20,
            early_stop_tolerance: 0.0,
            strict_epoch_eval: true,
            ..TrainConfig::default()
        };
        let out = train(&mut net, &ds, &cfg).unwrap();
        // frozen network, constant accuracy -> stops at exactly W + 1
        assert_eq!(out.stop_reason, StopReason::EarlyStop);
        assert_eq!(out.logs.len(), 5);
    }

    #[test]
    fn rejects_empty_training_set() {
        let mut net = build(ModelKind::Ffnn, &ArchConfig { ffnn_hidden: [4, 4], ..ArchConfig::default() }, 1).unwrap();
        let empty = LabeledDataset::new(48, 48);
        assert!(matches!(
            train(&mut net, &empty, &TrainConfig::default()),
            Err(Error::EmptyInput(_))
        ));
    }
}
