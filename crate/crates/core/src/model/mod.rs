//! Sequential recommender: item encoders over ID or (whitened) text features,
//! a causal self-attention sequence encoder, full-softmax next-item loss,
//! hand-written backpropagation, Adam training and checkpoints.

mod checkpoint;
mod encoder;
mod gradcheck;
mod layers;
mod loss;
mod optim;
mod params;
mod train;
mod transformer;

use std::fmt;
use std::str::FromStr;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use encoder::{encode_items, ItemCache};
pub use gradcheck::{grad_check, GradCheckReport, GRAD_CHECK_MAX_DIM, GRAD_CHECK_STEP};
pub use layers::{LayerNorm, Linear};
pub use loss::{backward, build_examples, forward_loss, Example, ForwardCache};
pub use optim::Adam;
pub use params::{Block, FrozenText, ModelDims, ModelParams, Trainable};
pub use train::{train, train_with, EarlyStopping, EpochRecord, StopDecision, TrainHistory, VALIDATION_K};
pub use transformer::{encode_sequence, ItemVectors};

use crate::error::{Error, Result};
use crate::whitening::{WhiteningMethod, DEFAULT_EPSILON};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum VariantKind {
    /// Trainable ID embedding table only.
    Id,
    /// Projection head over raw text features.
    Text,
    /// ID table plus projection head over raw text.
    TextPlusId,
    /// Projection head over fully whitened text (WhitenRec).
    Whiten,
    /// Shared head over fully and relaxed whitened text, combined (WhitenRec+).
    WhitenPlus,
}

impl VariantKind {
    pub const ALL: [VariantKind; 5] = [Self::Id, Self::Text, Self::TextPlusId, Self::Whiten, Self::WhitenPlus];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Id => "ID",
            Self::Text => "TEXT",
            Self::TextPlusId => "TEXT_PLUS_ID",
            Self::Whiten => "WHITEN",
            Self::WhitenPlus => "WHITEN_PLUS",
        }
    }

    pub fn uses_id_table(self) -> bool {
        matches!(self, Self::Id | Self::TextPlusId)
    }

    pub fn uses_text(self) -> bool {
        !matches!(self, Self::Id)
    }
}

impl fmt::Display for VariantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VariantKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_uppercase().replace(['-', '+'], "_");
        match norm.as_str() {
            "ID" => Ok(Self::Id),
            "TEXT" | "T" => Ok(Self::Text),
            "TEXT_PLUS_ID" | "T_ID" => Ok(Self::TextPlusId),
            "WHITEN" | "WHITENREC" => Ok(Self::Whiten),
            "WHITEN_PLUS" | "WHITENREC_" => Ok(Self::WhitenPlus),
            _ => Err(Error::Config(format!(
                "unknown variant {s:?} (expected ID, TEXT, TEXT_PLUS_ID, WHITEN or WHITEN_PLUS)"
            ))),
        }
    }
}

/// How the two whitened branches of [`VariantKind::WhitenPlus`] are merged.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Combine {
    Sum,
    /// Concatenate, then map `2·d_model → d_model` with one linear layer.
    Concat,
}

impl FromStr for Combine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sum" => Ok(Self::Sum),
            "concat" => Ok(Self::Concat),
            other => Err(Error::Config(format!(
                "unknown combine {other:?} (expected sum or concat)"
            ))),
        }
    }
}

impl fmt::Display for Combine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Sum => "sum",
            Self::Concat => "concat",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EncoderVariant {
    pub kind: VariantKind,
    pub method: WhiteningMethod,
    /// Group count of the relaxed branch (WhitenRec+ only); the full branch always uses one group.
    pub relaxed_groups: usize,
    pub epsilon: f64,
    /// Hidden layers in the projection head (0 = a single linear map).
    pub head_depth: usize,
    pub combine: Combine,
}

pub const MAX_HEAD_DEPTH: usize = 3;

impl EncoderVariant {
    pub fn new(kind: VariantKind) -> Self {
        Self {
            kind,
            method: WhiteningMethod::Zca,
            relaxed_groups: 4,
            epsilon: DEFAULT_EPSILON,
            head_depth: 2,
            combine: Combine::Sum,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.head_depth > MAX_HEAD_DEPTH {
            return Err(Error::Config(format!("head_depth must be at most {MAX_HEAD_DEPTH}")));
        }
        if self.kind == VariantKind::WhitenPlus && self.relaxed_groups < 2 {
            return Err(Error::Config("WHITEN_PLUS needs relaxed_groups > 1".into()));
        }
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return Err(Error::Config(format!(
                "epsilon must be non-negative, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TargetStyle {
    /// Supervise only the final position with the next item.
    LastOnly,
    /// Supervise every position with its next item.
    AllPositions,
}

impl FromStr for TargetStyle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "last_only" | "last" => Ok(Self::LastOnly),
            "all_positions" | "all" => Ok(Self::AllPositions),
            other => Err(Error::Config(format!("unknown target style {other:?}"))),
        }
    }
}

impl fmt::Display for TargetStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::LastOnly => "last_only",
            Self::AllPositions => "all_positions",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_seq_len: usize,
    pub d_model: usize,
    pub blocks: usize,
    pub heads: usize,
    pub dropout: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub target_style: TargetStyle,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            weight_decay: 0.0,
            batch_size: 256,
            max_seq_len: 50,
            d_model: 64,
            blocks: 2,
            heads: 2,
            dropout: 0.2,
            max_epochs: 200,
            patience: 10,
            seed: 0,
            target_style: TargetStyle::AllPositions,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.patience < 1 {
            return fail("patience must be at least 1".into());
        }
        if self.max_seq_len < 2 {
            return fail("max_seq_len must be at least 2".into());
        }
        if self.d_model == 0 || self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return fail(format!(
                "d_model {} must be a positive multiple of heads {}",
                self.d_model, self.heads
            ));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return fail("batch_size and max_epochs must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if !(self.learning_rate >= 0.0) || !(self.weight_decay >= 0.0) {
            return fail("learning_rate and weight_decay must be non-negative".into());
        }
        Ok(())
    }
}
