//! Graph construction for the interleaved-token transformer.
//!
//! Token layout: a history of v interactions becomes 2v rows,
//! `[item_1, behavior_1, …, item_v, behavior_v]`, right-aligned onto the
//! positional table's last 2v of 2n rows. Attention is causal over that
//! axis. Target-aware candidates are appended after the history: each
//! candidate is one extra item token (positional row 2n−2, shared with the
//! last item position) that attends the whole history plus itself but never
//! other candidates, so history latents are identical with and without it.

use super::{Model, ModelDims, LN_EPS};
use crate::error::{CoreError, Result};
use std::rc::Rc;
use unigrf_tensor::{Graph, NodeId, Real, TensorError};

/// Compact (unpadded) forward request.
#[derive(Debug, Clone, Copy)]
pub struct ForwardSpec<'a> {
    /// Dense item indices of the valid history, chronological, 1 ≤ v ≤ n.
    pub items: &'a [u32],
    /// Click labels (0/1) aligned with `items`.
    pub behaviors: &'a [u8],
    /// Target-aware candidates to score after the full history (may be empty).
    pub candidates: &'a [u32],
}

/// Reference forward over a full padded window; used to pin the compact
/// layout to the padded-and-masked semantics it abbreviates.
#[derive(Debug, Clone, Copy)]
pub struct PaddedForwardSpec<'a> {
    /// Length n with left padding zeros.
    pub items: &'a [u32],
    pub behaviors: &'a [u8],
    pub valid_mask: &'a [bool],
}

/// Node handles for one model bound into one graph.
pub struct Binding {
    pub dims: ModelDims,
    pub item_embeddings: NodeId,
    pub behavior_embeddings: NodeId,
    pub positional_embeddings: NodeId,
    pub layers: Vec<LayerBinding>,
    pub final_gamma: NodeId,
    pub final_beta: NodeId,
    pub head_w1: NodeId,
    pub head_b1: NodeId,
    pub head_w2: NodeId,
    pub head_b2: NodeId,
    /// Every bound parameter as (name, node), in `Params` iteration order;
    /// the trainer walks this to collate gradients.
    pub ordered: Vec<(String, NodeId)>,
}

pub struct LayerBinding {
    pub q: Vec<NodeId>,
    pub k: Vec<NodeId>,
    pub v: Vec<NodeId>,
    pub o: Vec<NodeId>,
    pub ln1_gamma: NodeId,
    pub ln1_beta: NodeId,
    pub ln2_gamma: NodeId,
    pub ln2_beta: NodeId,
    pub ffn_w1: NodeId,
    pub ffn_b1: NodeId,
    pub ffn_w2: NodeId,
    pub ffn_b2: NodeId,
}

impl Binding {
    /// Binds every parameter tensor into `g` as a shared leaf. With
    /// `trainable = false` the graph records no gradient structure, which is
    /// the evaluation/scoring mode.
    pub fn bind<R: Real>(g: &mut Graph<R>, model: &Model<R>, trainable: bool) -> Result<Binding> {
        let mut ordered = Vec::with_capacity(model.params.len());
        for (name, t) in model.params.iter() {
            let id = g.shared_leaf(t.rows, t.cols, t.data.clone(), trainable)?;
            ordered.push((name.to_string(), id));
        }
        let find = |name: &str| -> Result<NodeId> {
            ordered
                .iter()
                .find(|(n, _)| n == name)
                .map(|&(_, id)| id)
                .ok_or_else(|| CoreError::Data(format!("unbound parameter `{name}`")))
        };
        let dims = model.dims;
        let mut layers = Vec::with_capacity(dims.layers);
        for l in 0..dims.layers {
            let mut q = Vec::with_capacity(dims.heads);
            let mut k = Vec::with_capacity(dims.heads);
            let mut v = Vec::with_capacity(dims.heads);
            let mut o = Vec::with_capacity(dims.heads);
            for h in 0..dims.heads {
                q.push(find(&format!("layer{l}/attn/q{h}"))?);
                k.push(find(&format!("layer{l}/attn/k{h}"))?);
                v.push(find(&format!("layer{l}/attn/v{h}"))?);
                o.push(find(&format!("layer{l}/attn/o{h}"))?);
            }
            layers.push(LayerBinding {
                q,
                k,
                v,
                o,
                ln1_gamma: find(&format!("layer{l}/ln1/gamma"))?,
                ln1_beta: find(&format!("layer{l}/ln1/beta"))?,
                ln2_gamma: find(&format!("layer{l}/ln2/gamma"))?,
                ln2_beta: find(&format!("layer{l}/ln2/beta"))?,
                ffn_w1: find(&format!("layer{l}/ffn/w1"))?,
                ffn_b1: find(&format!("layer{l}/ffn/b1"))?,
                ffn_w2: find(&format!("layer{l}/ffn/w2"))?,
                ffn_b2: find(&format!("layer{l}/ffn/b2"))?,
            });
        }
        Ok(Binding {
            dims,
            item_embeddings: find("item_embeddings")?,
            behavior_embeddings: find("behavior_embeddings")?,
            positional_embeddings: find("positional_embeddings")?,
            layers,
            final_gamma: find("final_ln/gamma")?,
            final_beta: find("final_ln/beta")?,
            head_w1: find("rank_head/w1")?,
            head_b1: find("rank_head/b1")?,
            head_w2: find("rank_head/w2")?,
            head_b2: find("rank_head/b2")?,
            ordered,
        })
    }
}

/// Output handles of one forward pass.
pub struct Forward {
    /// Final-norm latents of the 2v history token rows.
    pub latents: NodeId,
    /// Final-norm latents of the candidate rows, when candidates were given.
    pub candidate_latents: Option<NodeId>,
    pub v: usize,
}

impl Forward {
    /// Latent rows that predict item s (the behavior token of step s−1),
    /// for s = 2..=v; empty when v < 2.
    pub fn retrieval_rows(&self) -> Vec<u32> {
        (1..self.v).map(|s| (2 * s - 1) as u32).collect()
    }

    /// Latent rows scoring the click at each history step (item tokens).
    pub fn rank_rows(&self) -> Vec<u32> {
        (0..self.v).map(|s| (2 * s) as u32).collect()
    }

    /// Latent row that predicts the item after the whole history.
    pub fn next_item_row(&self) -> u32 {
        (2 * self.v - 1) as u32
    }
}

/// Concatenates same-height blocks left-to-right.
pub fn col_concat<R: Real>(
    g: &mut Graph<R>,
    parts: &[NodeId],
) -> std::result::Result<NodeId, TensorError> {
    let mut ts = Vec::with_capacity(parts.len());
    for &p in parts {
        ts.push(g.transpose(p)?);
    }
    let cat = g.concat_rows(&ts)?;
    g.transpose(cat)
}

/// Click logits for latent rows `x` (m×d → m×1): SiLU MLP d → d/2 → 1.
pub fn rank_logits<R: Real>(g: &mut Graph<R>, b: &Binding, x: NodeId) -> Result<NodeId> {
    let h = g.matmul(x, b.head_w1)?;
    let h = g.add(h, b.head_b1)?;
    let h = g.silu(h)?;
    let z = g.matmul(h, b.head_w2)?;
    Ok(g.add(z, b.head_b2)?)
}

/// Compact forward: 2v token rows, right-aligned positions, causal mask.
pub fn build_forward<R: Real>(
    g: &mut Graph<R>,
    b: &Binding,
    spec: &ForwardSpec<'_>,
) -> Result<Forward> {
    let n = b.dims.n;
    let v = spec.items.len();
    if v == 0 || v > n {
        return Err(CoreError::Data(format!(
            "history length {v} outside 1..={n}"
        )));
    }
    if spec.behaviors.len() != v {
        return Err(CoreError::Data(format!(
            "{v} items but {} behaviors",
            spec.behaviors.len()
        )));
    }
    let behavior_rows = behavior_table_rows(spec.behaviors)?;
    let positional_rows: Vec<u32> = ((2 * (n - v)) as u32..(2 * n) as u32).collect();
    let mask = causal_mask(2 * v, None);
    forward_core(
        g,
        b,
        spec.items,
        &behavior_rows,
        &positional_rows,
        mask,
        spec.candidates,
    )
}

/// Padded reference forward: all 2n rows materialize, the mask additionally
/// hides padding keys from every query. Valid rows must come out identical
/// to the compact forward's.
pub fn build_padded_forward<R: Real>(
    g: &mut Graph<R>,
    b: &Binding,
    spec: &PaddedForwardSpec<'_>,
) -> Result<Forward> {
    let n = b.dims.n;
    if spec.items.len() != n || spec.behaviors.len() != n || spec.valid_mask.len() != n {
        return Err(CoreError::Data(format!(
            "padded forward needs item/behavior/mask rows of length n = {n}"
        )));
    }
    let mut behavior_rows = Vec::with_capacity(n);
    for (i, (&label, &valid)) in spec.behaviors.iter().zip(spec.valid_mask).enumerate() {
        if valid {
            if label > 1 {
                return Err(CoreError::Data(format!("behavior label {label} at {i}")));
            }
            behavior_rows.push(label as u32 + 1);
        } else {
            behavior_rows.push(0);
        }
    }
    let positional_rows: Vec<u32> = (0..(2 * n) as u32).collect();
    let mask = causal_mask(2 * n, Some(spec.valid_mask));
    forward_core(
        g,
        b,
        spec.items,
        &behavior_rows,
        &positional_rows,
        mask,
        &[],
    )
}

fn behavior_table_rows(behaviors: &[u8]) -> Result<Vec<u32>> {
    behaviors
        .iter()
        .map(|&label| {
            if label > 1 {
                Err(CoreError::Data(format!(
                    "behavior label {label} not in 0..=1"
                )))
            } else {
                // Table row 0 is padding; labels map to rows 1 and 2.
                Ok(label as u32 + 1)
            }
        })
        .collect()
}

/// Causal mask over `rows` token rows (`true` hides). With `valid` given
/// (one flag per interaction), padding token columns are hidden from every
/// other row; the diagonal stays visible so a fully-padded query still has
/// one finite attention target (its output is discarded, but 0·NaN from an
/// empty softmax would otherwise poison later layers).
fn causal_mask(rows: usize, valid: Option<&[bool]>) -> Rc<Vec<bool>> {
    let mut mask = vec![false; rows * rows];
    for i in 0..rows {
        for j in 0..rows {
            let padding = valid.is_some_and(|v| !v[j / 2]);
            mask[i * rows + j] = if i == j { false } else { j > i || padding };
        }
    }
    Rc::new(mask)
}

fn forward_core<R: Real>(
    g: &mut Graph<R>,
    b: &Binding,
    item_indices: &[u32],
    behavior_rows: &[u32],
    positional_rows: &[u32],
    mask: Rc<Vec<bool>>,
    candidates: &[u32],
) -> Result<Forward> {
    let dims = &b.dims;
    let t = item_indices.len();
    let rows = 2 * t;
    let dh = dims.head_dim();
    let inv_sqrt_dh = R::from_f64(1.0 / (dh as f64).sqrt());
    let neg_inf = R::from_f64(f64::NEG_INFINITY);
    let eps = R::from_f64(LN_EPS);

    // Token assembly: gather both tables, then interleave by row permutation.
    let item_x = g.gather_rows(b.item_embeddings, item_indices)?;
    let beh_x = g.gather_rows(b.behavior_embeddings, behavior_rows)?;
    let stacked = g.concat_rows(&[item_x, beh_x])?;
    let perm: Vec<u32> = (0..t as u32).flat_map(|i| [i, t as u32 + i]).collect();
    let tokens = g.gather_rows(stacked, &perm)?;
    let pos = g.gather_rows(b.positional_embeddings, positional_rows)?;
    let mut x = g.add(tokens, pos)?;

    // Candidate rows join after the last history position and reuse its
    // positional row.
    let c = candidates.len();
    let cand_pos_row = (dims.token_rows() - 2) as u32;
    let mut cx = if c > 0 {
        let ce = g.gather_rows(b.item_embeddings, candidates)?;
        let cp = g.gather_rows(b.positional_embeddings, &vec![cand_pos_row; c])?;
        Some(g.add(ce, cp)?)
    } else {
        None
    };
    let ones_dh = if c > 0 {
        Some(g.constant(1, dh, vec![R::ONE; dh])?)
    } else {
        None
    };

    for layer in &b.layers {
        // ── attention sublayer (pre-norm) ──
        let xh = g.layer_norm(x, layer.ln1_gamma, layer.ln1_beta, eps)?;
        let cxh = match cx {
            Some(node) => Some(g.layer_norm(node, layer.ln1_gamma, layer.ln1_beta, eps)?),
            None => None,
        };
        let mut att_sum: Option<NodeId> = None;
        let mut cand_att_sum: Option<NodeId> = None;
        for h in 0..dims.heads {
            let q = g.matmul(xh, layer.q[h])?;
            let k = g.matmul(xh, layer.k[h])?;
            let v = g.matmul(xh, layer.v[h])?;
            let kt = g.transpose(k)?;
            let scores = g.matmul(q, kt)?;
            let scaled = g.scale(scores, inv_sqrt_dh)?;
            let masked = g.masked_fill_shared(scaled, mask.clone(), neg_inf)?;
            let p = g.softmax_row(masked)?;
            let att = g.matmul(p, v)?;
            let head_out = g.matmul(att, layer.o[h])?;
            att_sum = Some(match att_sum {
                Some(acc) => g.add(acc, head_out)?,
                None => head_out,
            });

            if let Some(cxh) = cxh {
                // Candidates query the history's keys/values (the very nodes
                // above — an in-graph KV cache) plus their own row.
                let qc = g.matmul(cxh, layer.q[h])?;
                let kc = g.matmul(cxh, layer.k[h])?;
                let vc = g.matmul(cxh, layer.v[h])?;
                let s_hist = g.matmul(qc, kt)?;
                let qk = g.elementwise_mul(qc, kc)?;
                let s_self = g.row_sum(qk)?;
                let s_all = col_concat(g, &[s_hist, s_self])?;
                let scaled = g.scale(s_all, inv_sqrt_dh)?;
                let p = g.softmax_row(scaled)?;
                // Split the attention row back into history columns and the
                // self column.
                let pt = g.transpose(p)?;
                let hist_rows: Vec<u32> = (0..rows as u32).collect();
                let ph_t = g.gather_rows(pt, &hist_rows)?;
                let ps_t = g.gather_rows(pt, &[rows as u32])?;
                let p_hist = g.transpose(ph_t)?;
                let p_self = g.transpose(ps_t)?;
                let att_hist = g.matmul(p_hist, v)?;
                let p_self_wide = g.matmul(p_self, ones_dh.unwrap())?;
                let att_self = g.elementwise_mul(p_self_wide, vc)?;
                let att_c = g.add(att_hist, att_self)?;
                let head_out_c = g.matmul(att_c, layer.o[h])?;
                cand_att_sum = Some(match cand_att_sum {
                    Some(acc) => g.add(acc, head_out_c)?,
                    None => head_out_c,
                });
            }
        }
        let h1 = g.add(x, att_sum.expect("at least one head"))?;

        // ── feed-forward sublayer ──
        let ffn = |g: &mut Graph<R>, input: NodeId| -> Result<NodeId> {
            let xh2 = g.layer_norm(input, layer.ln2_gamma, layer.ln2_beta, eps)?;
            let f = g.matmul(xh2, layer.ffn_w1)?;
            let f = g.add(f, layer.ffn_b1)?;
            let f = g.silu(f)?;
            let f = g.matmul(f, layer.ffn_w2)?;
            let f = g.add(f, layer.ffn_b2)?;
            Ok(g.add(input, f)?)
        };
        x = ffn(g, h1)?;
        if let Some(cnode) = cx {
            let ch1 = g.add(cnode, cand_att_sum.expect("candidate head sum"))?;
            cx = Some(ffn(g, ch1)?);
        }
    }

    let latents = g.layer_norm(x, b.final_gamma, b.final_beta, eps)?;
    let candidate_latents = match cx {
        Some(node) => Some(g.layer_norm(node, b.final_gamma, b.final_beta, eps)?),
        None => None,
    };
    Ok(Forward {
        latents,
        candidate_latents,
        v: t,
    })
}
