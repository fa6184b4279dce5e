//! No-grad scoring passes built on the same graph code as training, so
//! every consumer (evaluator, enhancer, auditors) sees bit-identical
//! semantics to the loss path.

use super::{build_forward, rank_logits, Binding, ForwardSpec, Model};
use crate::error::Result;
use unigrf_tensor::{Graph, Real};

/// Output of one target-aware scoring pass.
pub struct TargetAwareScores<R: Real> {
    /// Final latent of the last behavior token — the query that retrieves
    /// the next item.
    pub next_latent: Vec<R>,
    /// σ(rank logit) per candidate, aligned with the request order.
    pub candidate_probs: Vec<f64>,
}

/// Runs the history once and scores all candidates target-aware against it.
pub fn score_target_aware<R: Real>(
    model: &Model<R>,
    items: &[u32],
    behaviors: &[u8],
    candidates: &[u32],
) -> Result<TargetAwareScores<R>> {
    let mut g: Graph<R> = Graph::new();
    let b = Binding::bind(&mut g, model, false)?;
    let fwd = build_forward(
        &mut g,
        &b,
        &ForwardSpec {
            items,
            behaviors,
            candidates,
        },
    )?;
    let d = model.dims.dim;
    let row = fwd.next_item_row() as usize;
    let next_latent = g.values(fwd.latents)[row * d..(row + 1) * d].to_vec();
    let candidate_probs = match fwd.candidate_latents {
        Some(cl) => {
            let z = rank_logits(&mut g, &b, cl)?;
            let p = g.sigmoid(z)?;
            g.values(p).iter().map(|&x| x.to_f64()).collect()
        }
        None => Vec::new(),
    };
    Ok(TargetAwareScores {
        next_latent,
        candidate_probs,
    })
}

/// Inner products of a retrieval latent with every item embedding, indexed
/// by dense item index. Entry 0 (the padding row) is −∞ so it can never
/// outrank a real item.
pub fn catalog_scores<R: Real>(model: &Model<R>, latent: &[R]) -> Result<Vec<f64>> {
    let table = model.params.get("item_embeddings")?;
    let d = model.dims.dim;
    debug_assert_eq!(latent.len(), d);
    let mut scores = Vec::with_capacity(table.rows);
    scores.push(f64::NEG_INFINITY);
    for row in 1..table.rows {
        let emb = &table.data[row * d..(row + 1) * d];
        let acc: R = emb.iter().zip(latent).map(|(&e, &l)| e * l).sum();
        scores.push(acc.to_f64());
    }
    Ok(scores)
}

/// σ(latent · e_item): the retrieval head's probability-scale belief in one
/// item, commensurable with the ranking head's click probability.
pub fn retrieval_sigmoid<R: Real>(model: &Model<R>, latent: &[R], item: u32) -> Result<f64> {
    let table = model.params.get("item_embeddings")?;
    let d = model.dims.dim;
    let base = item as usize * d;
    let emb = &table.data[base..base + d];
    let acc: R = emb.iter().zip(latent).map(|(&e, &l)| e * l).sum();
    let x = acc.to_f64();
    // Sign-split stable sigmoid.
    Ok(if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    })
}
