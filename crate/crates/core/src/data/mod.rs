//! Interaction data: representation, file formats, leave-one-out and
//! cold-start splitting, and synthetic generators.

mod io;
mod split;
mod synth;

pub use io::{load_embeddings, load_sequences, parse_embeddings, parse_sequences, EmbeddingFile};
pub use split::{cold_start_split, leave_one_out, DEFAULT_COLD_FRACTION};
pub use synth::{dominant_direction, gen_anisotropic_embeddings, gen_sequences, SequenceGenConfig, DOMINANT_SPREAD};

use std::collections::BTreeSet;

/// Minimum interactions per user and per item after filtering.
pub const DEFAULT_MIN_INTERACTIONS: usize = 5;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UserSequence {
    pub user: String,
    /// Chronological dense item indices.
    pub items: Vec<usize>,
}

/// Filtered user sequences over a dense item index space.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawSequences {
    /// Token of each dense item index.
    pub item_tokens: Vec<String>,
    /// For each dense item, its index in the source vocabulary.
    pub source_index: Vec<usize>,
    pub users: Vec<UserSequence>,
}

impl RawSequences {
    pub fn item_count(&self) -> usize {
        self.item_tokens.len()
    }

    pub fn interaction_count(&self) -> usize {
        self.users.iter().map(|u| u.items.len()).sum()
    }
}

/// Iteratively drops users and items with fewer than `min` interactions until
/// nothing changes, then re-indexes surviving items densely in vocabulary order.
///
/// `users` index into `vocabulary`.
pub fn five_core(vocabulary: &[String], mut users: Vec<UserSequence>, min: usize) -> RawSequences {
    loop {
        let mut counts = vec![0usize; vocabulary.len()];
        for u in &users {
            for &i in &u.items {
                counts[i] += 1;
            }
        }
        let mut changed = false;
        for u in &mut users {
            let before = u.items.len();
            u.items.retain(|&i| counts[i] >= min);
            changed |= u.items.len() != before;
        }
        let before = users.len();
        users.retain(|u| u.items.len() >= min);
        changed |= users.len() != before;
        if !changed {
            break;
        }
    }
    let mut used = vec![false; vocabulary.len()];
    for u in &users {
        for &i in &u.items {
            used[i] = true;
        }
    }
    let mut dense = vec![usize::MAX; vocabulary.len()];
    let mut source_index = Vec::new();
    for (i, _) in used.iter().enumerate().filter(|(_, u)| **u) {
        dense[i] = source_index.len();
        source_index.push(i);
    }
    for u in &mut users {
        u.items.iter_mut().for_each(|i| *i = dense[*i]);
    }
    RawSequences {
        item_tokens: source_index.iter().map(|&i| vocabulary[i].clone()).collect(),
        source_index,
        users,
    }
}

/// Which held-out target an evaluation uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Validation,
    Test,
}

impl std::str::FromStr for Split {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "validation" | "valid" | "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(crate::Error::Config(format!(
                "unknown split {other:?} (expected validation or test)"
            ))),
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Validation => "validation",
            Split::Test => "test",
        })
    }
}

/// Leave-one-out assignment of one user's sequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UserSplit {
    /// Training prefix; in the cold setting, cold items are removed from it.
    pub train: Vec<usize>,
    /// Second-to-last item.
    pub validation: usize,
    /// Last item.
    pub test: usize,
    pub eval_validation: bool,
    pub eval_test: bool,
}

/// One evaluation query: history prefix and the held-out target.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalCase {
    pub user: usize,
    pub prefix: Vec<usize>,
    pub target: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InteractionDataset {
    pub item_count: usize,
    pub users: Vec<UserSplit>,
    pub cold_items: Option<BTreeSet<usize>>,
}

impl InteractionDataset {
    /// Training prefixes with at least two items (one next-item pair).
    pub fn training_sequences(&self) -> impl Iterator<Item = &[usize]> {
        self.users.iter().map(|u| u.train.as_slice()).filter(|t| t.len() >= 2)
    }

    /// Evaluation queries of a split. Test prefixes include the validation item;
    /// users whose validation prefix is empty are skipped.
    pub fn eval_cases(&self, split: Split) -> Vec<EvalCase> {
        self.users
            .iter()
            .enumerate()
            .filter_map(|(user, u)| match split {
                Split::Validation if u.eval_validation && !u.train.is_empty() => Some(EvalCase {
                    user,
                    prefix: u.train.clone(),
                    target: u.validation,
                }),
                Split::Test if u.eval_test => {
                    let mut prefix = u.train.clone();
                    prefix.push(u.validation);
                    Some(EvalCase {
                        user,
                        prefix,
                        target: u.test,
                    })
                }
                _ => None,
            })
            .collect()
    }

    /// Interaction counts over training prefixes.
    pub fn train_item_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.item_count];
        for u in &self.users {
            for &i in &u.train {
                counts[i] += 1;
            }
        }
        counts
    }
}
