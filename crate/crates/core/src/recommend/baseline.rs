use rand::Rng;

use crate::corpus::InteractionSet;
use crate::rng;
use crate::simulate::TruePreferences;

/// Scores items by their number of training interactions.
#[derive(Debug, Clone)]
pub struct Popular {
    counts: Vec<usize>,
}

impl Popular {
    pub fn train(data: &InteractionSet) -> Self {
        Popular {
            counts: data.item_counts(),
        }
    }

    pub(super) fn score(&self, items: &[u32]) -> Vec<f64> {
        items.iter().map(|&i| self.counts[i as usize] as f64).collect()
    }
}

/// Uniformly random ranking. Each user gets an independent key per item from
/// the stream `(seed, user id)`, so a user's order does not depend on which
/// other items are candidates.
#[derive(Debug, Clone)]
pub struct RandomRec {
    seed: u64,
    n_items: usize,
    user_ids: Vec<String>,
}

impl RandomRec {
    pub fn new(data: &InteractionSet, seed: u64) -> Self {
        RandomRec {
            seed,
            n_items: data.n_items(),
            user_ids: data.users().ids().to_vec(),
        }
    }

    pub(super) fn score(&self, user: u32, items: &[u32]) -> Vec<f64> {
        let key = self.user_ids.get(user as usize).cloned().unwrap_or_else(|| format!("#{user}"));
        let mut r = rng::stream("recommend.random", self.seed, &[key.as_str().into()]);
        let keys: Vec<f64> = (0..self.n_items).map(|_| r.random::<f64>()).collect();
        items.iter().map(|&i| keys[i as usize]).collect()
    }
}

/// Scores 1 for truly liked items and 0 otherwise; ties fall back to item order.
#[derive(Debug, Clone)]
pub struct Oracle {
    /// Per user of the training index: liked items in training-index space, ascending.
    liked: Vec<Vec<u32>>,
}

impl Oracle {
    pub fn train(data: &InteractionSet, truth: &TruePreferences) -> Self {
        let liked = data
            .users()
            .ids()
            .iter()
            .map(|uid| {
                let Some(tu) = truth.users().get(uid) else {
                    return Vec::new();
                };
                let mut items: Vec<u32> = truth
                    .liked(tu)
                    .iter()
                    .filter_map(|&ti| data.items().get(truth.items().id(ti)))
                    .collect();
                items.sort_unstable();
                items
            })
            .collect();
        Oracle { liked }
    }

    pub(super) fn score(&self, user: u32, items: &[u32]) -> Vec<f64> {
        let liked = self.liked.get(user as usize).map(Vec::as_slice).unwrap_or(&[]);
        items
            .iter()
            .map(|i| if liked.binary_search(i).is_ok() { 1.0 } else { 0.0 })
            .collect()
    }
}
