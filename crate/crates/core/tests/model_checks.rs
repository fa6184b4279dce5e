//! Whole-model checks that cut across module seams: a finite-difference
//! audit of the analytic gradient through the combined training loss, and
//! the padded-reference equivalence that pins the compact token layout.

use std::collections::BTreeMap;
use unigrf_core::model::{
    build_forward, build_padded_forward, rank_logits, Binding, ForwardSpec, Model, ModelDims,
    PaddedForwardSpec,
};
use unigrf_core::objectives::{bce_sum, retrieval_loss_sum};
use unigrf_tensor::Graph;

const ITEMS: [u32; 4] = [3, 1, 7, 2];
const BEHAVIORS: [u8; 4] = [1, 0, 1, 1];
const CANDIDATES: [u32; 2] = [5, 8];
const NEGATIVES: [u32; 3] = [4, 6, 9];
const W_RETR: f64 = 0.7;
const W_RANK: f64 = 1.3;

fn dims() -> ModelDims {
    ModelDims {
        item_rows: 10,
        dim: 6,
        heads: 2,
        layers: 2,
        n: 5,
    }
}

/// Builds the full training loss for the fixture user:
/// `0.7·mean(retrieval) + 1.3·mean(ranking)` with the candidate items
/// entering the ranking term as label-1 rows, exactly as the trainer does.
fn combined_loss(g: &mut Graph<f64>, model: &Model<f64>, trainable: bool) -> (Binding, f64) {
    let b = Binding::bind(g, model, trainable).unwrap();
    let fwd = build_forward(
        g,
        &b,
        &ForwardSpec {
            items: &ITEMS,
            behaviors: &BEHAVIORS,
            candidates: &CANDIDATES,
        },
    )
    .unwrap();
    let retr = retrieval_loss_sum(g, &b, &fwd, &ITEMS, &NEGATIVES)
        .unwrap()
        .unwrap();

    let hist = g.gather_rows(fwd.latents, &fwd.rank_rows()).unwrap();
    let z_hist = rank_logits(g, &b, hist).unwrap();
    let z_aux = rank_logits(g, &b, fwd.candidate_latents.unwrap()).unwrap();
    let z_all = g.concat_rows(&[z_hist, z_aux]).unwrap();
    let mut labels = BEHAVIORS.to_vec();
    labels.extend(std::iter::repeat_n(1u8, CANDIDATES.len()));
    let rank = bce_sum(g, z_all, &labels).unwrap();

    let retr_part = g.scale(retr.sum, W_RETR / retr.count as f64).unwrap();
    let rank_part = g.scale(rank.sum, W_RANK / rank.count as f64).unwrap();
    let total = g.add(retr_part, rank_part).unwrap();
    g.backward(total).unwrap();
    (b, g.values(total)[0])
}

fn loss_value(model: &Model<f64>) -> f64 {
    let mut g = Graph::new();
    combined_loss(&mut g, model, false).1
}

#[test]
fn analytic_gradient_matches_central_differences() {
    let mut model = Model::<f64>::new(dims(), 17).unwrap();

    let mut analytic: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    {
        let mut g = Graph::new();
        let (binding, _) = combined_loss(&mut g, &model, true);
        for (name, node) in &binding.ordered {
            let grad = g.grad(*node).expect("trainable leaf has a gradient");
            analytic.insert(name.clone(), grad.to_vec());
        }
    }

    let names: Vec<String> = model.params.names().map(str::to_owned).collect();
    let mut probes = 0usize;
    let mut max_rel = 0.0f64;
    for name in &names {
        let grads = &analytic[name];
        // Probe the strongest-gradient entries plus both ends, so a tensor
        // whose analytic gradient is wrongly all-zero still gets caught.
        let mut order: Vec<usize> = (0..grads.len()).collect();
        order.sort_by(|&a, &b| grads[b].abs().total_cmp(&grads[a].abs()));
        let mut indices: Vec<usize> = order.into_iter().take(3).collect();
        indices.push(0);
        indices.push(grads.len() - 1);
        indices.sort_unstable();
        indices.dedup();

        for idx in indices {
            let x = model.params.get(name).unwrap().data[idx];
            let h = 1e-5 * x.abs().max(1.0);
            model.params.values_mut(name).unwrap()[idx] = x + h;
            let up = loss_value(&model);
            model.params.values_mut(name).unwrap()[idx] = x - h;
            let down = loss_value(&model);
            model.params.values_mut(name).unwrap()[idx] = x;

            let numeric = (up - down) / (2.0 * h);
            let a = grads[idx];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
            assert!(
                rel < 1e-6,
                "{name}[{idx}]: analytic {a:.12e} vs numeric {numeric:.12e} (rel {rel:.3e})"
            );
            max_rel = max_rel.max(rel);
            probes += 1;
        }
    }
    // Every tensor contributed probes and the worst disagreement is tiny.
    assert!(
        probes >= 4 * names.len(),
        "only {probes} probes over {} tensors",
        names.len()
    );
    assert!(max_rel < 1e-6);
}

#[test]
fn compact_forward_matches_padded_reference() {
    let model = Model::<f64>::new(dims(), 23).unwrap();
    let n = model.dims.n;
    let v = ITEMS.len();

    let mut g = Graph::new();
    let b = Binding::bind(&mut g, &model, false).unwrap();
    let compact = build_forward(
        &mut g,
        &b,
        &ForwardSpec {
            items: &ITEMS,
            behaviors: &BEHAVIORS,
            candidates: &[],
        },
    )
    .unwrap();

    let mut items = vec![0u32; n - v];
    items.extend_from_slice(&ITEMS);
    let mut behaviors = vec![0u8; n - v];
    behaviors.extend_from_slice(&BEHAVIORS);
    let mut valid = vec![false; n - v];
    valid.extend(std::iter::repeat_n(true, v));
    let padded = build_padded_forward(
        &mut g,
        &b,
        &PaddedForwardSpec {
            items: &items,
            behaviors: &behaviors,
            valid_mask: &valid,
        },
    )
    .unwrap();

    let d = model.dims.dim;
    let compact_rows = g.values(compact.latents);
    let padded_rows = g.values(padded.latents);
    assert_eq!(compact_rows.len(), 2 * v * d);
    assert_eq!(padded_rows.len(), 2 * n * d);

    // The last 2v padded rows are the real tokens; they must match the
    // compact layout to numerical noise.
    let offset = 2 * (n - v) * d;
    for (i, (&c, &p)) in compact_rows.iter().zip(&padded_rows[offset..]).enumerate() {
        assert!(
            (c - p).abs() <= 1e-10,
            "latent scalar {i}: compact {c} vs padded {p}"
        );
    }
}
