//! Ranking-driven negative-set enhancement. After each epoch the current
//! negatives are rescored by both heads; candidates the ranking head rates
//! above a threshold are promoted to persistent "potential positives"
//! (excluded from sampling forever and replayed as label-1 auxiliary ranking
//! examples), the hardest survivors — those retrieval likes far more than
//! ranking does — are kept, and the remainder of the set is refilled with
//! fresh uniform negatives.

use crate::data::sample_uniform_negatives;
use crate::error::{CoreError, Result};
use rand_chacha::ChaCha8Rng;

/// Mutable per-user state owned by the trainer across epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct UserNegativeState {
    /// Current negative set S (fixed size except in pathologically small
    /// catalogs).
    pub negatives: Vec<u32>,
    /// Accumulated potential positives, sorted ascending; never sampled
    /// again and replayed as label-1 ranking examples.
    pub potential: Vec<u32>,
}

impl UserNegativeState {
    pub fn new(negatives: Vec<u32>) -> Self {
        UserNegativeState {
            negatives,
            potential: Vec::new(),
        }
    }
}

/// What happened to one scored negative during a refresh.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NegativeAction {
    /// Ranking score cleared the threshold: promoted out of the pool.
    Potential,
    /// Kept as a hard negative for the next epoch.
    Hard,
    /// Replaced by a fresh uniform draw.
    Dropped,
}

impl NegativeAction {
    /// Audit-file vocabulary: promotion is a relabel, replacement a drop.
    pub fn as_str(self) -> &'static str {
        match self {
            NegativeAction::Potential => "relabel",
            NegativeAction::Hard => "hard",
            NegativeAction::Dropped => "drop",
        }
    }
}

/// Audit record for one scored negative.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredNegative {
    pub item: u32,
    pub retrieval: f64,
    pub ranking: f64,
    pub relative: f64,
    pub action: NegativeAction,
}

/// Summary of one user's refresh.
#[derive(Debug, Clone, PartialEq)]
pub struct RefreshOutcome {
    pub scored: Vec<ScoredNegative>,
    pub new_potentials: usize,
    pub hard_kept: usize,
    pub resampled: usize,
}

/// How much the retrieval head over-believes in a candidate relative to the
/// ranking head: s⁽ʳᵉᵗʳ⁾ · (s⁽ʳᵉᵗʳ⁾/s⁽ʳᵃⁿᵏ⁾ − 1). Positive when retrieval
/// scores it higher than ranking, zero when they agree.
pub fn relative_advantage(retrieval: f64, ranking: f64) -> f64 {
    retrieval * (retrieval / ranking.max(f64::MIN_POSITIVE) - 1.0)
}

/// Negative-set refresh policy (sizes and threshold from the config).
#[derive(Debug, Clone, Copy)]
pub struct Enhancer {
    /// Hard negatives kept per refresh (m).
    pub hard_set_size: usize,
    /// Ranking-score threshold α for potential-positive promotion.
    pub potential_threshold: f64,
}

impl Enhancer {
    /// Rescores one user's negatives and rebuilds the set in place:
    /// potentials are promoted first, then the top-m survivors by relative
    /// advantage stay (ties to the smaller item index), and fresh uniform
    /// draws (excluding observed ∪ potential ∪ hard) restore the size.
    pub fn refresh_user(
        &self,
        state: &mut UserNegativeState,
        retrieval_scores: &[f64],
        ranking_scores: &[f64],
        observed: &[u32],
        item_count: u32,
        rng: &mut ChaCha8Rng,
    ) -> Result<RefreshOutcome> {
        let s_len = state.negatives.len();
        if retrieval_scores.len() != s_len || ranking_scores.len() != s_len {
            return Err(CoreError::Data(format!(
                "{s_len} negatives but {} retrieval / {} ranking scores",
                retrieval_scores.len(),
                ranking_scores.len()
            )));
        }
        for (name, scores) in [("retrieval", retrieval_scores), ("ranking", ranking_scores)] {
            if let Some(&bad) = scores
                .iter()
                .find(|s| !s.is_finite() || !(0.0..=1.0).contains(*s))
            {
                return Err(CoreError::Numeric(format!(
                    "{name} score {bad} outside [0, 1]"
                )));
            }
        }

        // Pass 1: promotions. An item the ranking head already believes in
        // is no negative at all, however "hard" it would have scored.
        let mut scored = Vec::with_capacity(s_len);
        let mut survivors: Vec<usize> = Vec::with_capacity(s_len);
        let mut new_potentials = 0usize;
        for (ix, &item) in state.negatives.iter().enumerate() {
            let (retr, rank) = (retrieval_scores[ix], ranking_scores[ix]);
            let relative = relative_advantage(retr, rank);
            let action = if rank > self.potential_threshold {
                new_potentials += 1;
                insert_sorted(&mut state.potential, item);
                NegativeAction::Potential
            } else {
                survivors.push(ix);
                NegativeAction::Dropped // may upgrade to Hard below
            };
            scored.push(ScoredNegative {
                item,
                retrieval: retr,
                ranking: rank,
                relative,
                action,
            });
        }

        // Pass 2: hard mining over the survivors.
        survivors.sort_by(|&a, &b| {
            scored[b]
                .relative
                .total_cmp(&scored[a].relative)
                .then(scored[a].item.cmp(&scored[b].item))
        });
        let hard_kept = survivors.len().min(self.hard_set_size);
        let mut next: Vec<u32> = Vec::with_capacity(s_len);
        for &ix in &survivors[..hard_kept] {
            scored[ix].action = NegativeAction::Hard;
            next.push(scored[ix].item);
        }

        // Pass 3: refill from the untouched complement.
        let mut exclude: Vec<u32> = observed.to_vec();
        for &p in &state.potential {
            insert_sorted(&mut exclude, p);
        }
        for &h in &next {
            insert_sorted(&mut exclude, h);
        }
        let excluded_valid = exclude
            .iter()
            .filter(|&&x| x >= 1 && x <= item_count)
            .count();
        let available = item_count as usize - excluded_valid;
        let want = s_len - hard_kept;
        let resampled = want.min(available);
        if resampled < want {
            log::warn!(
                "negative pool exhausted: refilled {resampled} of {want}; catalog too small \
                 for the configured set size"
            );
        }
        if resampled > 0 {
            let fresh = sample_uniform_negatives(item_count, &exclude, resampled, rng)?;
            next.extend(fresh);
        }
        state.negatives = next;

        Ok(RefreshOutcome {
            scored,
            new_potentials,
            hard_kept,
            resampled,
        })
    }
}

fn insert_sorted(v: &mut Vec<u32>, x: u32) {
    if let Err(pos) = v.binary_search(&x) {
        v.insert(pos, x);
    }
}
