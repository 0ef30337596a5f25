use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{InteractionDataset, Split};
use crate::diagnostics::condition_number;
use crate::error::{Error, Result};
use crate::eval::{evaluate_with_threads, thread_count};
use crate::model::encoder::encode_items;
use crate::model::loss::{build_examples, loss_and_grad};
use crate::model::optim::Adam;
use crate::model::params::ModelParams;
use crate::model::transformer::Dropout;
use crate::model::{EncoderVariant, TrainConfig};
use crate::Matrix;

/// Cutoff of the validation metric that drives early stopping.
pub const VALIDATION_K: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    /// Keep training; `improved` marks a new best epoch.
    Continue {
        improved: bool,
    },
    Stop,
}

/// Stops once the score has not strictly increased for `patience` epochs.
/// Ties keep the earlier epoch.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience: patience.max(1),
            best: None,
            stale: 0,
        }
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }

    pub fn observe(&mut self, epoch: usize, score: f64) -> StopDecision {
        let improved = match self.best {
            None => true,
            Some((_, best)) => score > best,
        };
        if improved {
            self.best = Some((epoch, score));
            self.stale = 0;
            return StopDecision::Continue { improved };
        }
        self.stale += 1;
        if self.stale >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue { improved }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub loss: f64,
    pub val_ndcg20: f64,
    /// Condition number of the item matrix after the epoch.
    pub condition_number: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_epoch: usize,
}

impl TrainHistory {
    /// `epoch,loss,val_ndcg20,condition_number` with round-trip float formatting.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,val_ndcg20,condition_number\n");
        for r in &self.epochs {
            let _ = writeln!(
                out,
                "{},{:e},{:e},{:e}",
                r.epoch, r.loss, r.val_ndcg20, r.condition_number
            );
        }
        out
    }

    pub fn best(&self) -> &EpochRecord {
        &self.epochs[self.best_epoch - 1]
    }
}

/// Trains with Adam and early stopping on validation NDCG@20, returning the
/// parameters of the best epoch.
pub fn train(
    dataset: &InteractionDataset,
    variant: EncoderVariant,
    config: &TrainConfig,
    text: Option<&Matrix>,
) -> Result<(ModelParams, TrainHistory)> {
    train_with(dataset, variant, config, text, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with(
    dataset: &InteractionDataset,
    variant: EncoderVariant,
    config: &TrainConfig,
    text: Option<&Matrix>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(ModelParams, TrainHistory)> {
    config.validate()?;
    let mut examples = build_examples(dataset, config.max_seq_len, config.target_style);
    if examples.is_empty() {
        return Err(Error::Degenerate("no training sequence has two or more items".into()));
    }
    if dataset.eval_cases(Split::Validation).is_empty() {
        return Err(Error::Degenerate("the validation split has no evaluation users".into()));
    }
    let mut params = ModelParams::init(variant, config, dataset.item_count, text, config.seed)?;
    let mut adam = Adam::new(&params.trainable, config.learning_rate, config.weight_decay);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(2));
    let threads = thread_count();

    let mut stopper = EarlyStopping::new(config.patience);
    let mut best = params.clone();
    let mut epochs = Vec::new();
    for epoch in 1..=config.max_epochs {
        examples.shuffle(&mut shuffle_rng);
        let (mut total, mut count) = (0.0, 0usize);
        for batch in examples.chunks(config.batch_size) {
            let mut dropout = Dropout {
                rate: config.dropout,
                rng: &mut dropout_rng,
            };
            let (batch_total, batch_count, grad) =
                loss_and_grad(&params, batch, Some(&mut dropout)).map_err(|e| with_epoch(e, epoch))?;
            total += batch_total;
            count += batch_count;
            adam.step(&mut params.trainable, &grad);
        }
        let loss = total / count as f64;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("training loss diverged at epoch {epoch}")));
        }
        let val = evaluate_with_threads(&params, dataset, Split::Validation, &[VALIDATION_K], threads)?;
        let v = encode_items(&params)?;
        let record = EpochRecord {
            epoch,
            loss,
            val_ndcg20: val.metrics.ndcg[0],
            condition_number: condition_number(&v).map_or(f64::INFINITY, |c| c.condition_number),
        };
        on_epoch(&record);
        epochs.push(record);
        let decision = stopper.observe(epoch, epochs[epoch - 1].val_ndcg20);
        if let StopDecision::Continue { improved: true } = decision {
            best = params.clone();
        }
        if decision == StopDecision::Stop {
            break;
        }
    }
    let stopped_epoch = epochs.len();
    let best_epoch = stopper.best().map_or(1, |(e, _)| e);
    Ok((
        best,
        TrainHistory {
            epochs,
            best_epoch,
            stopped_epoch,
        },
    ))
}

fn with_epoch(e: Error, epoch: usize) -> Error {
    match e {
        Error::Numeric(m) => Error::Numeric(format!("{m} in epoch {epoch}")),
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::UserSplit;
    use crate::model::{TargetStyle, VariantKind};

    #[test]
    fn patience_rule() {
        let mut s = EarlyStopping::new(1);
        assert_eq!(s.observe(1, 0.2), StopDecision::Continue { improved: true });
        assert_eq!(s.observe(2, 0.1), StopDecision::Stop);
        assert_eq!(s.best(), Some((1, 0.2)));

        let mut s = EarlyStopping::new(3);
        s.observe(1, 0.3);
        assert_eq!(s.observe(2, 0.3), StopDecision::Continue { improved: false });
        assert_eq!(s.observe(3, 0.4), StopDecision::Continue { improved: true });
        s.observe(4, 0.1);
        s.observe(5, 0.4);
        assert_eq!(s.observe(6, 0.2), StopDecision::Stop);
        assert_eq!(s.best(), Some((3, 0.4)));
    }

    /// Every item `i` is followed by `(i + 1) mod n`.
    fn cyclic(n: usize, users: usize) -> InteractionDataset {
        let users = (0..users)
            .map(|u| {
                let items: Vec<usize> = (0..8).map(|k| (u + k) % n).collect();
                UserSplit {
                    train: items[..6].to_vec(),
                    validation: items[6],
                    test: items[7],
                    eval_validation: true,
                    eval_test: true,
                }
            })
            .collect();
        InteractionDataset {
            item_count: n,
            users,
            cold_items: None,
        }
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            d_model: 16,
            heads: 2,
            blocks: 1,
            max_seq_len: 8,
            batch_size: 16,
            dropout: 0.0,
            learning_rate: 5e-3,
            max_epochs: 50,
            patience: 50,
            ..Default::default()
        }
    }

    #[test]
    fn separable_toy_is_learned() {
        let ds = cyclic(12, 48);
        let (_, h) = train(&ds, EncoderVariant::new(VariantKind::Id), &small_config(), None).unwrap();
        assert_eq!(h.epochs.len(), 50);
        assert!(
            h.epochs[49].loss < 0.25 * h.epochs[0].loss,
            "{} vs {}",
            h.epochs[49].loss,
            h.epochs[0].loss
        );
    }

    #[test]
    fn zero_learning_rate_keeps_the_loss() {
        let ds = cyclic(10, 20);
        let cfg = TrainConfig {
            learning_rate: 0.0,
            max_epochs: 4,
            patience: 10,
            ..small_config()
        };
        let (_, h) = train(&ds, EncoderVariant::new(VariantKind::Id), &cfg, None).unwrap();
        for r in &h.epochs {
            assert!((r.loss - h.epochs[0].loss).abs() <= 1e-12);
        }
        assert_eq!(h.best_epoch, 1);
    }

    #[test]
    fn identical_runs_match_and_history_is_consistent() {
        let ds = cyclic(10, 30);
        let cfg = TrainConfig {
            max_epochs: 6,
            patience: 2,
            dropout: 0.2,
            target_style: TargetStyle::LastOnly,
            ..small_config()
        };
        let (p1, h1) = train(&ds, EncoderVariant::new(VariantKind::Id), &cfg, None).unwrap();
        let (p2, h2) = train(&ds, EncoderVariant::new(VariantKind::Id), &cfg, None).unwrap();
        assert_eq!(h1, h2);
        assert_eq!(p1, p2);
        assert!(h1.epochs.len() <= 6);
        let best = h1.best().val_ndcg20;
        assert!(h1.epochs.iter().all(|r| r.val_ndcg20 <= best));
        assert!(h1.epochs[..h1.best_epoch - 1].iter().all(|r| r.val_ndcg20 < best));
    }
}
