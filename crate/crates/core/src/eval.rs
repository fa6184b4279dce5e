//! Leave-one-out evaluation. Retrieval ranks the held-out item against the
//! whole catalog (no seen-item filtering, padding excluded) and reports
//! NDCG@K, HR@K, and MRR; ranking scores the held-out item target-aware and
//! reports AUC over one (probability, label) pair per user.

use crate::data::{SequenceSet, Split};
use crate::error::{CoreError, Result};
use crate::model::{catalog_scores, score_target_aware, Model};
use serde::Serialize;
use std::collections::BTreeMap;
use unigrf_tensor::Real;

/// Aggregated metrics for one split.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Evaluation {
    pub split: String,
    pub users: usize,
    /// K → mean NDCG@K; NDCG@K = 1/log₂(rank+1) when rank ≤ K else 0.
    pub ndcg: BTreeMap<usize, f64>,
    /// K → mean hit rate.
    pub hr: BTreeMap<usize, f64>,
    pub mrr: f64,
    /// Mann–Whitney AUC with mid-rank ties; `None` when a split holds only
    /// one class.
    pub auc: Option<f64>,
}

impl Evaluation {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }
}

/// 1-based rank of `target` among all real items: one plus the number of
/// items scoring strictly higher. Ties therefore favor the target, and the
/// padding row can never outrank anything (−∞ score).
pub fn retrieval_rank(scores: &[f64], target: u32) -> Result<usize> {
    let t = target as usize;
    if t == 0 || t >= scores.len() {
        return Err(CoreError::Data(format!(
            "target index {target} outside the catalog"
        )));
    }
    let s = scores[t];
    if !s.is_finite() {
        return Err(CoreError::Numeric(format!(
            "retrieval score for item {target} is {s}"
        )));
    }
    let higher = scores[1..].iter().filter(|&&x| x > s).count();
    Ok(higher + 1)
}

/// Mann–Whitney AUC over (score, label) pairs with mid-rank tie handling;
/// `None` if either class is empty.
pub fn auc(pairs: &[(f64, u8)]) -> Option<f64> {
    let positives = pairs.iter().filter(|&&(_, y)| y == 1).count();
    let negatives = pairs.len() - positives;
    if positives == 0 || negatives == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.sort_by(|&a, &b| pairs[a].0.total_cmp(&pairs[b].0));
    // Mid-ranks: tied scores share the average of their 1-based positions.
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && pairs[order[j + 1]].0 == pairs[order[i]].0 {
            j += 1;
        }
        let mid = (i + 1 + j + 1) as f64 / 2.0;
        for &ix in &order[i..=j] {
            if pairs[ix].1 == 1 {
                rank_sum_pos += mid;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (positives * (positives + 1)) as f64 / 2.0;
    Some(u / (positives as f64 * negatives as f64))
}

/// Per-user raw outcomes, exposed for audits and tests.
#[derive(Debug, Clone, PartialEq)]
pub struct UserOutcome {
    pub user: u64,
    pub rank: usize,
    pub rank_prob: f64,
    pub label: u8,
}

/// Scores every user's held-out interaction for `split`.
pub fn evaluate_users<R: Real>(
    model: &Model<R>,
    set: &SequenceSet,
    split: Split,
    workers: usize,
) -> Result<Vec<UserOutcome>> {
    let run_range = |lo: usize, hi: usize| -> Result<Vec<UserOutcome>> {
        let mut out = Vec::with_capacity(hi - lo);
        for seq in &set.sequences[lo..hi] {
            let (items, behaviors, target, label) = seq.eval_window(split);
            let scores = score_target_aware(model, &items, &behaviors, &[target])?;
            let catalog = catalog_scores(model, &scores.next_latent)?;
            out.push(UserOutcome {
                user: seq.user,
                rank: retrieval_rank(&catalog, target)?,
                rank_prob: scores.candidate_probs[0],
                label,
            });
        }
        Ok(out)
    };

    let total = set.sequences.len();
    let workers = workers.max(1).min(total.max(1));
    if workers <= 1 {
        return run_range(0, total);
    }
    // Contiguous shards merged in order keep the result independent of
    // scheduling.
    let chunk = total.div_ceil(workers);
    let mut results: Vec<Result<Vec<UserOutcome>>> = Vec::new();
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for w in 0..workers {
            let lo = w * chunk;
            let hi = ((w + 1) * chunk).min(total);
            let run = &run_range;
            handles.push(scope.spawn(move || run(lo, hi.max(lo))));
        }
        for h in handles {
            results.push(h.join().expect("evaluation worker panicked"));
        }
    });
    let mut merged = Vec::with_capacity(total);
    for r in results {
        merged.extend(r?);
    }
    Ok(merged)
}

/// Folds per-user outcomes into the aggregate report.
pub fn aggregate(outcomes: &[UserOutcome], split: Split, ks: &[usize]) -> Result<Evaluation> {
    if outcomes.is_empty() {
        return Err(CoreError::Data("no users to evaluate".into()));
    }
    let users = outcomes.len() as f64;
    let mut ndcg = BTreeMap::new();
    let mut hr = BTreeMap::new();
    for &k in ks {
        let mut hits = 0.0;
        let mut gain = 0.0;
        for o in outcomes {
            if o.rank <= k {
                hits += 1.0;
                gain += 1.0 / ((o.rank + 1) as f64).log2();
            }
        }
        ndcg.insert(k, gain / users);
        hr.insert(k, hits / users);
    }
    let mrr = outcomes.iter().map(|o| 1.0 / o.rank as f64).sum::<f64>() / users;
    let pairs: Vec<(f64, u8)> = outcomes.iter().map(|o| (o.rank_prob, o.label)).collect();
    Ok(Evaluation {
        split: match split {
            Split::Valid => "valid".into(),
            Split::Test => "test".into(),
        },
        users: outcomes.len(),
        ndcg,
        hr,
        mrr,
        auc: auc(&pairs),
    })
}

/// Full evaluation pass: score users, then aggregate.
pub fn evaluate<R: Real>(
    model: &Model<R>,
    set: &SequenceSet,
    split: Split,
    ks: &[usize],
    workers: usize,
) -> Result<Evaluation> {
    let outcomes = evaluate_users(model, set, split, workers)?;
    aggregate(&outcomes, split, ks)
}
