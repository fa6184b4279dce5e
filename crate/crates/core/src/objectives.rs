//! Training objectives: sampled-softmax next-item loss and pointwise
//! binary cross-entropy on click logits. Both are built from graph
//! primitives in numerically stable forms — the softmax loss through a
//! row-wise log-sum-exp over [positive | negatives], the BCE through
//! softplus(z) − y·z where softplus(z) = LSE([0, z]).

use crate::error::{CoreError, Result};
use crate::model::{col_concat, Binding, Forward};
use unigrf_tensor::{Graph, NodeId, Real};

/// A loss contribution as an un-normalized sum plus its term count, so the
/// caller can form batch means with whatever denominator it owns.
#[derive(Debug, Clone, Copy)]
pub struct LossSum {
    pub sum: NodeId,
    pub count: usize,
}

/// Sums an m×1 column into a 1×1 scalar node.
fn column_total<R: Real>(g: &mut Graph<R>, column: NodeId) -> Result<NodeId> {
    let row = g.transpose(column)?;
    Ok(g.row_sum(row)?)
}

/// Sampled-softmax retrieval loss over a user's history: for each step
/// s = 2..=v the previous behavior-token latent scores the true item against
/// the shared negative set; the per-step loss is LSE([s⁺, s⁻…]) − s⁺.
/// Returns `None` for single-interaction histories (no predictable step).
///
/// Negatives must be disjoint from the scored positives — the sampler
/// excludes the user's observed items, so an overlap is a caller bug.
pub fn retrieval_loss_sum<R: Real>(
    g: &mut Graph<R>,
    b: &Binding,
    fwd: &Forward,
    items: &[u32],
    negatives: &[u32],
) -> Result<Option<LossSum>> {
    if items.len() != fwd.v {
        return Err(CoreError::Data(format!(
            "{} items for a forward over {} steps",
            items.len(),
            fwd.v
        )));
    }
    if fwd.v < 2 {
        return Ok(None);
    }
    if negatives.is_empty() {
        return Err(CoreError::Data("empty negative set".into()));
    }
    let targets = &items[1..];
    for t in targets {
        if negatives.contains(t) {
            return Err(CoreError::Data(format!(
                "negative set contains positive item {t}"
            )));
        }
    }

    let latents = g.gather_rows(fwd.latents, &fwd.retrieval_rows())?;
    let pos_emb = g.gather_rows(b.item_embeddings, targets)?;
    let prod = g.elementwise_mul(latents, pos_emb)?;
    let s_pos = g.row_sum(prod)?; // (v−1)×1

    let neg_emb = g.gather_rows(b.item_embeddings, negatives)?;
    let neg_t = g.transpose(neg_emb)?;
    let s_neg = g.matmul(latents, neg_t)?; // (v−1)×|S|

    let all = col_concat(g, &[s_pos, s_neg])?;
    let lse = g.log_sum_exp_row(all)?;
    let neg_pos = g.scale(s_pos, R::from_f64(-1.0))?;
    let per_step = g.add(lse, neg_pos)?;
    let sum = column_total(g, per_step)?;
    Ok(Some(LossSum {
        sum,
        count: fwd.v - 1,
    }))
}

/// Binary cross-entropy summed over logits: Σ softplus(zᵢ) − yᵢ·zᵢ.
pub fn bce_sum<R: Real>(g: &mut Graph<R>, logits: NodeId, labels: &[u8]) -> Result<LossSum> {
    let (m, cols) = g.shape(logits);
    if cols != 1 || m != labels.len() {
        return Err(CoreError::Data(format!(
            "logits {m}x{cols} vs {} labels",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y > 1) {
        return Err(CoreError::Data(format!("label {bad} not in 0..=1")));
    }
    let zeros = g.constant(m, 1, vec![R::ZERO; m])?;
    let pair = col_concat(g, &[zeros, logits])?; // m×2
    let softplus = g.log_sum_exp_row(pair)?;
    let y = g.constant(
        m,
        1,
        labels.iter().map(|&v| R::from_f64(v as f64)).collect(),
    )?;
    let yz = g.elementwise_mul(y, logits)?;
    let neg_yz = g.scale(yz, R::from_f64(-1.0))?;
    let per_term = g.add(softplus, neg_yz)?;
    let sum = column_total(g, per_term)?;
    Ok(LossSum { sum, count: m })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_forward, rank_logits, ForwardSpec, Model, ModelDims};

    fn scalar(g: &Graph<f64>, id: NodeId) -> f64 {
        assert_eq!(g.shape(id), (1, 1));
        g.values(id)[0]
    }

    /// Retrieval on a hand-built two-step history where every score can be
    /// chased through by hand.
    #[test]
    fn retrieval_matches_hand_computation() {
        // Fake "model": identity-ish latents via a leaf table. We bypass the
        // transformer and test the loss arithmetic alone by constructing a
        // Forward whose latents we control.
        let mut g: Graph<f64> = Graph::new();
        // 3 catalog rows (0 = padding), d = 2.
        let table = vec![0.0, 0.0, 0.2, -0.4, 0.5, 0.3, -0.1, 0.8];
        let item_emb = g.leaf(4, 2, table).unwrap();
        // Latent rows for a v = 3 history: rows 0..6; retrieval rows 1 and 3.
        let mut latents = vec![0.0; 12];
        latents[2..4].copy_from_slice(&[1.0, -1.0]); // row 1
        latents[6..8].copy_from_slice(&[0.5, 2.0]); // row 3
        let latents = g.leaf(6, 2, latents).unwrap();

        let model: Model<f64> = Model::new(
            ModelDims {
                item_rows: 4,
                dim: 2,
                heads: 1,
                layers: 1,
                n: 3,
            },
            0,
        )
        .unwrap();
        let mut b = crate::model::Binding::bind(&mut g, &model, false).unwrap();
        b.item_embeddings = item_emb; // swap in the controlled table

        let fwd = Forward {
            latents,
            candidate_latents: None,
            v: 3,
        };
        // History items [2, 1, 3] → targets 1 and 3; negatives exclude them.
        let loss = retrieval_loss_sum(&mut g, &b, &fwd, &[2, 1, 3], &[2])
            .unwrap()
            .unwrap();
        assert_eq!(loss.count, 2);

        // Step 2: latent (1,−1) · item1 (0.2,−0.4) = 0.6; neg item2 = 0.2.
        // Step 3: latent (0.5,2) · item3 (−0.1,0.8) = 1.55; neg item2 = 0.85.
        let expect = |s_pos: f64, s_neg: f64| -> f64 {
            let m = s_pos.max(s_neg);
            m + ((s_pos - m).exp() + (s_neg - m).exp()).ln() - s_pos
        };
        let want = expect(0.6, 0.2) + expect(1.55, 0.85);
        assert!((scalar(&g, loss.sum) - want).abs() < 1e-12);
    }

    #[test]
    fn retrieval_equal_scores_gives_ln2() {
        // One positive and one negative with identical scores → ln 2 each.
        let mut g: Graph<f64> = Graph::new();
        let table = vec![0.0, 0.0, 0.3, 0.7, 0.3, 0.7, 9.0, 9.0];
        let item_emb = g.leaf(4, 2, table).unwrap();
        let mut latents = vec![0.0; 8];
        latents[2..4].copy_from_slice(&[0.9, -0.2]); // retrieval row 1
        let latents = g.leaf(4, 2, latents).unwrap();
        let model: Model<f64> = Model::new(
            ModelDims {
                item_rows: 4,
                dim: 2,
                heads: 1,
                layers: 1,
                n: 2,
            },
            0,
        )
        .unwrap();
        let mut b = crate::model::Binding::bind(&mut g, &model, false).unwrap();
        b.item_embeddings = item_emb;
        let fwd = Forward {
            latents,
            candidate_latents: None,
            v: 2,
        };
        // Item 2's row equals item 1's row, so s⁺ = s⁻ exactly.
        let loss = retrieval_loss_sum(&mut g, &b, &fwd, &[3, 1], &[2])
            .unwrap()
            .unwrap();
        assert!((scalar(&g, loss.sum) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn retrieval_rejects_contaminated_negatives() {
        let mut g: Graph<f64> = Graph::new();
        let model: Model<f64> = Model::new(
            ModelDims {
                item_rows: 6,
                dim: 4,
                heads: 1,
                layers: 1,
                n: 4,
            },
            0,
        )
        .unwrap();
        let b = crate::model::Binding::bind(&mut g, &model, false).unwrap();
        let fwd = build_forward(
            &mut g,
            &b,
            &ForwardSpec {
                items: &[1, 2],
                behaviors: &[0, 1],
                candidates: &[],
            },
        )
        .unwrap();
        let err = retrieval_loss_sum(&mut g, &b, &fwd, &[1, 2], &[2, 4]).unwrap_err();
        assert!(err.to_string().contains("positive item 2"), "{err}");
    }

    #[test]
    fn single_step_history_has_no_retrieval_terms() {
        let mut g: Graph<f64> = Graph::new();
        let model: Model<f64> = Model::new(
            ModelDims {
                item_rows: 6,
                dim: 4,
                heads: 1,
                layers: 1,
                n: 4,
            },
            0,
        )
        .unwrap();
        let b = crate::model::Binding::bind(&mut g, &model, false).unwrap();
        let fwd = build_forward(
            &mut g,
            &b,
            &ForwardSpec {
                items: &[3],
                behaviors: &[1],
                candidates: &[],
            },
        )
        .unwrap();
        assert!(retrieval_loss_sum(&mut g, &b, &fwd, &[3], &[1])
            .unwrap()
            .is_none());
    }

    #[test]
    fn bce_matches_closed_forms() {
        let mut g: Graph<f64> = Graph::new();
        // softplus(0) − 0 = ln 2 for y = 0 at z = 0.
        let z = g.leaf(1, 1, vec![0.0]).unwrap();
        let loss = bce_sum(&mut g, z, &[0]).unwrap();
        assert_eq!(loss.count, 1);
        assert!((scalar(&g, loss.sum) - std::f64::consts::LN_2).abs() < 1e-15);

        // y = 1, z = 1.5: −ln σ(1.5) = ln(1 + e^{−1.5}).
        let z = g.leaf(1, 1, vec![1.5]).unwrap();
        let loss = bce_sum(&mut g, z, &[1]).unwrap();
        let want = (1.0 + (-1.5_f64).exp()).ln();
        assert!((scalar(&g, loss.sum) - want).abs() < 1e-15);

        // y = 0, z = −2: −ln(1 − σ(−2)) = ln(1 + e^{−2}).
        let z = g.leaf(1, 1, vec![-2.0]).unwrap();
        let loss = bce_sum(&mut g, z, &[0]).unwrap();
        let want = (1.0 + (-2.0_f64).exp()).ln();
        assert!((scalar(&g, loss.sum) - want).abs() < 1e-15);

        // Sum over a batch of three with mixed labels.
        let z = g.leaf(3, 1, vec![0.4, -1.1, 2.3]).unwrap();
        let loss = bce_sum(&mut g, z, &[1, 0, 1]).unwrap();
        let sp = |x: f64| (1.0 + x.exp()).ln();
        let want = (sp(0.4) - 0.4) + sp(-1.1) + (sp(2.3) - 2.3);
        assert!((scalar(&g, loss.sum) - want).abs() < 1e-12);
        assert_eq!(loss.count, 3);
    }

    #[test]
    fn bce_is_stable_at_extreme_logits() {
        let mut g: Graph<f64> = Graph::new();
        let z = g.leaf(2, 1, vec![500.0, -500.0]).unwrap();
        let loss = bce_sum(&mut g, z, &[1, 0]).unwrap();
        // Both terms are ~e^{−500} ≈ 0; the naive form would overflow.
        let v = scalar(&g, loss.sum);
        assert!(v.is_finite() && v.abs() < 1e-200, "loss = {v}");

        let z = g.leaf(2, 1, vec![500.0, -500.0]).unwrap();
        let loss = bce_sum(&mut g, z, &[0, 1]).unwrap();
        let v = scalar(&g, loss.sum);
        assert!((v - 1000.0).abs() < 1e-9, "loss = {v}");
    }

    #[test]
    fn bce_rejects_bad_labels_and_shapes() {
        let mut g: Graph<f64> = Graph::new();
        let z = g.leaf(2, 1, vec![0.0, 0.0]).unwrap();
        assert!(bce_sum(&mut g, z, &[0, 2]).is_err());
        assert!(bce_sum(&mut g, z, &[0]).is_err());
        let wide = g.leaf(1, 2, vec![0.0, 0.0]).unwrap();
        assert!(bce_sum(&mut g, wide, &[0]).is_err());
    }

    /// End-to-end: losses composed on a real forward stay finite and
    /// gradients reach the embedding tables.
    #[test]
    fn losses_backpropagate_through_the_model() {
        let mut g: Graph<f64> = Graph::new();
        let model: Model<f64> = Model::new(
            ModelDims {
                item_rows: 8,
                dim: 8,
                heads: 2,
                layers: 1,
                n: 4,
            },
            3,
        )
        .unwrap();
        let b = crate::model::Binding::bind(&mut g, &model, true).unwrap();
        let fwd = build_forward(
            &mut g,
            &b,
            &ForwardSpec {
                items: &[2, 5, 1],
                behaviors: &[1, 0, 1],
                candidates: &[],
            },
        )
        .unwrap();
        let retr = retrieval_loss_sum(&mut g, &b, &fwd, &[2, 5, 1], &[3, 6])
            .unwrap()
            .unwrap();
        let rows = fwd.rank_rows();
        let x = g.gather_rows(fwd.latents, &rows).unwrap();
        let z = rank_logits(&mut g, &b, x).unwrap();
        let rank = bce_sum(&mut g, z, &[1, 0, 1]).unwrap();
        let total = g.add(retr.sum, rank.sum).unwrap();
        g.backward(total).unwrap();
        let grad = g.grad(b.item_embeddings).unwrap();
        assert!(grad.iter().any(|&x| x != 0.0));
        assert!(grad.iter().all(|x| x.is_finite()));
        let grad_q = g.grad(b.layers[0].q[0]).unwrap();
        assert!(grad_q.iter().any(|&x| x != 0.0));
    }
}
