use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{InteractionDataset, RawSequences, UserSplit};
use crate::error::{Error, Result};

/// Share of items held out as cold in the cold-start protocol.
pub const DEFAULT_COLD_FRACTION: f64 = 0.15;

fn check_lengths(seqs: &RawSequences) -> Result<()> {
    if let Some(u) = seqs.users.iter().find(|u| u.items.len() < 3) {
        return Err(Error::Degenerate(format!(
            "user {:?} has {} interactions; leave-one-out needs at least 3",
            u.user,
            u.items.len()
        )));
    }
    if seqs.users.is_empty() {
        return Err(Error::Degenerate("no users".into()));
    }
    Ok(())
}

/// Warm split: last item for test, second-to-last for validation, the rest for training.
pub fn leave_one_out(seqs: &RawSequences) -> Result<InteractionDataset> {
    check_lengths(seqs)?;
    let users = seqs
        .users
        .iter()
        .map(|u| {
            let n = u.items.len();
            UserSplit {
                train: u.items[..n - 2].to_vec(),
                validation: u.items[n - 2],
                test: u.items[n - 1],
                eval_validation: true,
                eval_test: true,
            }
        })
        .collect();
    Ok(InteractionDataset {
        item_count: seqs.item_count(),
        users,
        cold_items: None,
    })
}

/// Cold-start split: `⌊fraction·|I|⌋` items drawn uniformly (seeded) become
/// cold. Cold items are removed from every training prefix, and a user is
/// evaluated on a split only when that split's leave-one-out target is cold.
pub fn cold_start_split(seqs: &RawSequences, fraction: f64, seed: u64) -> Result<InteractionDataset> {
    check_lengths(seqs)?;
    let n = seqs.item_count();
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Config(format!(
            "cold fraction must lie in [0, 1], got {fraction}"
        )));
    }
    let cold_count = (fraction * n as f64).floor() as usize;
    if cold_count == 0 {
        return Err(Error::Config(format!(
            "fraction {fraction} of {n} items selects no cold items"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cold: BTreeSet<usize> = order[..cold_count].iter().copied().collect();

    let users: Vec<UserSplit> = seqs
        .users
        .iter()
        .map(|u| {
            let len = u.items.len();
            let (validation, test) = (u.items[len - 2], u.items[len - 1]);
            UserSplit {
                train: u.items[..len - 2]
                    .iter()
                    .copied()
                    .filter(|i| !cold.contains(i))
                    .collect(),
                validation,
                test,
                eval_validation: cold.contains(&validation),
                eval_test: cold.contains(&test),
            }
        })
        .collect();
    if !users.iter().any(|u| u.eval_test) {
        return Err(Error::EmptyEval("no user has a cold test target".into()));
    }
    Ok(InteractionDataset {
        item_count: n,
        users,
        cold_items: Some(cold),
    })
}
