//! Acceptance gate: nine numbered checks, each printing one
//! `ACCEPTANCE <n>: PASS|FAIL|SKIP — detail` line on the real stdout (the
//! harness capture is bypassed so the verdicts always appear in test logs).
//!
//! Checks 4–6 and the full-scale sweep need the MovieLens-1M raw file and a
//! long training budget, so they are gated: set `UNIGRF_ML1M` to the
//! ratings.dat path (or its directory) and `UNIGRF_ACCEPT_FULL=1` to run
//! them. Without the gates they print SKIP and a synthetic stand-in of the
//! same shape is exercised instead.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::Write as _;
use std::panic::AssertUnwindSafe;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;
use unigrf_core::config::RunConfig;
use unigrf_core::data::{load_store, synth, Split};
use unigrf_core::enhancer::{relative_advantage, Enhancer, NegativeAction, UserNegativeState};
use unigrf_core::eval::{aggregate, evaluate, retrieval_rank, Evaluation, UserOutcome};
use unigrf_core::model::{build_forward, rank_logits, Binding, ForwardSpec, Model, ModelDims};
use unigrf_core::objectives::{bce_sum, retrieval_loss_sum};
use unigrf_core::trainer::{
    self, prepare_data, run_eval, run_sweep, run_training, write_report, SweepAxis, TrainOutcome,
};
use unigrf_core::weighter::AdaptiveWeighter;
use unigrf_tensor::Graph;

enum Verdict {
    Pass(String),
    Skip(String),
}

/// Writes one verdict line to the real stdout, bypassing harness capture.
fn announce(n: u32, status: &str, detail: &str) {
    let mut out = std::io::stdout();
    let _ = writeln!(out, "ACCEPTANCE {n}: {status} — {detail}");
    let _ = out.flush();
}

/// Runs one check body; a panic anywhere inside becomes the FAIL line (and
/// still fails the test), so every criterion reports exactly once.
fn guard(n: u32, body: impl FnOnce() -> Verdict) {
    match std::panic::catch_unwind(AssertUnwindSafe(body)) {
        Ok(Verdict::Pass(d)) => announce(n, "PASS", &d),
        Ok(Verdict::Skip(d)) => announce(n, "SKIP", &d),
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic without message".into());
            announce(n, "FAIL", msg.lines().next().unwrap_or("panic"));
            std::panic::resume_unwind(e);
        }
    }
}

fn ml1m_ratings() -> Option<PathBuf> {
    let p = PathBuf::from(std::env::var_os("UNIGRF_ML1M")?);
    let file = if p.is_dir() { p.join("ratings.dat") } else { p };
    file.is_file().then_some(file)
}

fn full_gate() -> bool {
    std::env::var("UNIGRF_ACCEPT_FULL")
        .map(|v| !v.is_empty() && v != "0")
        .unwrap_or(false)
}

// ---------------------------------------------------------------------------
// Shared synthetic run: one corpus, one full training, reused by checks
// 5, 6, 7, 8, and 9.
// ---------------------------------------------------------------------------

struct MainRun {
    root: tempfile::TempDir,
    store: PathBuf,
    run_dir: PathBuf,
    cfg: RunConfig,
    outcome: TrainOutcome,
    test_eval: Evaluation,
}

static MAIN: OnceLock<MainRun> = OnceLock::new();

fn synth_spec() -> synth::SynthSpec {
    synth::SynthSpec {
        users: 120,
        genres: 4,
        items_per_genre: 30,
        min_len: 24,
        max_len: 40,
        noise: 0.2,
        serial: 0.9,
        click_prob_in_genre: 0.95,
        click_prob_off_genre: 0.05,
        seed: 13,
    }
}

fn synth_cfg(store: &Path) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.data.store = store.to_path_buf();
    cfg.model.layers = 1;
    cfg.model.dim = 32;
    cfg.model.heads = 2;
    cfg.sequence.n = 24;
    cfg.training.batch_size = 16;
    cfg.training.lr = 5e-3;
    cfg.training.max_epochs = 25;
    cfg.training.patience = 25;
    cfg.training.seed = 5;
    cfg.training.workers = 1;
    cfg.training.negatives = 24;
    cfg.enhancer.enabled = true;
    cfg.enhancer.hard_set_size = 3;
    // The synthetic in-genre click rate is ~0.9+, so only near-certain
    // ranking scores should count as potential favorites.
    cfg.enhancer.potential_threshold = 0.97;
    cfg.enhancer.audit = true;
    cfg.weighter.enabled = true;
    cfg.weighter.auto_scale = false;
    cfg
}

fn main_run() -> &'static MainRun {
    MAIN.get_or_init(|| {
        let root = tempfile::tempdir().expect("temp root");
        let raw = root.path().join("synth.dat");
        let records = synth::generate(&synth_spec()).expect("synth corpus");
        synth::write_dat(&records, &raw).expect("write corpus");
        let store = root.path().join("store");
        prepare_data(&raw, "dat".parse().unwrap(), 24, &store).expect("prepare");
        let cfg = synth_cfg(&store);
        let run_dir = root.path().join("run");
        let outcome = run_training(&cfg, &run_dir).expect("training");
        let test_eval =
            run_eval(&cfg, &run_dir.join(trainer::BEST_CHECKPOINT), Split::Test).expect("eval");
        MainRun {
            root,
            store,
            run_dir,
            cfg,
            outcome,
            test_eval,
        }
    })
}

// ---------------------------------------------------------------------------
// 1. Gradient correctness of the combined loss on randomized tiny instances.
// ---------------------------------------------------------------------------

struct Instance {
    dims: ModelDims,
    items: Vec<u32>,
    behaviors: Vec<u8>,
    candidates: Vec<u32>,
    negatives: Vec<u32>,
    w_retr: f64,
    w_rank: f64,
}

fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let dim = 2 * rng.gen_range(1..=4usize);
    let heads = if dim % 4 == 0 && rng.gen_bool(0.5) {
        2
    } else {
        1
    };
    let layers = rng.gen_range(1..=2usize);
    let n = rng.gen_range(2..=4usize);
    let catalog = rng.gen_range(5..=12u32);
    let v = rng.gen_range(1..=n); // v = 1 exercises the no-retrieval path
    let items: Vec<u32> = (0..v).map(|_| rng.gen_range(1..=catalog)).collect();
    let behaviors: Vec<u8> = (0..v).map(|_| rng.gen_range(0..=1u8)).collect();
    let candidates: Vec<u32> = (0..rng.gen_range(0..=2usize))
        .map(|_| rng.gen_range(1..=catalog))
        .collect();
    let targets = &items[1..];
    let mut pool: Vec<u32> = (1..=catalog).filter(|i| !targets.contains(i)).collect();
    for i in (1..pool.len()).rev() {
        pool.swap(i, rng.gen_range(0..=i));
    }
    pool.truncate(rng.gen_range(1..=4usize).min(pool.len()));
    Instance {
        dims: ModelDims {
            item_rows: catalog as usize + 1,
            dim,
            heads,
            layers,
            n,
        },
        items,
        behaviors,
        candidates,
        negatives: pool,
        w_retr: rng.gen_range(0.3..1.7),
        w_rank: rng.gen_range(0.3..1.7),
    }
}

/// Builds the per-user training objective — `w_retr · mean(retrieval) +
/// w_rank · mean(ranking)`, candidates entering the ranking term as label-1
/// rows — and returns the binding plus the loss value. With `trainable` the
/// backward pass runs so leaf gradients are available.
fn instance_loss(
    g: &mut Graph<f64>,
    model: &Model<f64>,
    ins: &Instance,
    trainable: bool,
) -> (Binding, f64) {
    let b = Binding::bind(g, model, trainable).unwrap();
    let fwd = build_forward(
        g,
        &b,
        &ForwardSpec {
            items: &ins.items,
            behaviors: &ins.behaviors,
            candidates: &ins.candidates,
        },
    )
    .unwrap();
    let retr = retrieval_loss_sum(g, &b, &fwd, &ins.items, &ins.negatives).unwrap();

    let hist = g.gather_rows(fwd.latents, &fwd.rank_rows()).unwrap();
    let z_hist = rank_logits(g, &b, hist).unwrap();
    let mut labels = ins.behaviors.clone();
    let z_all = match fwd.candidate_latents {
        Some(cl) => {
            let z_aux = rank_logits(g, &b, cl).unwrap();
            labels.extend(std::iter::repeat_n(1u8, ins.candidates.len()));
            g.concat_rows(&[z_hist, z_aux]).unwrap()
        }
        None => z_hist,
    };
    let rank = bce_sum(g, z_all, &labels).unwrap();

    let rank_part = g.scale(rank.sum, ins.w_rank / rank.count as f64).unwrap();
    let total = match retr {
        Some(ls) => {
            let retr_part = g.scale(ls.sum, ins.w_retr / ls.count as f64).unwrap();
            g.add(retr_part, rank_part).unwrap()
        }
        None => rank_part,
    };
    if trainable {
        g.backward(total).unwrap();
    }
    (b, g.values(total)[0])
}

fn flat(analytic: &[(String, Vec<f64>)], mut ix: usize) -> f64 {
    for (_, g) in analytic {
        if ix < g.len() {
            return g[ix];
        }
        ix -= g.len();
    }
    unreachable!("flat index out of range")
}

fn locate(analytic: &[(String, Vec<f64>)], mut ix: usize) -> (String, usize) {
    for (name, g) in analytic {
        if ix < g.len() {
            return (name.clone(), ix);
        }
        ix -= g.len();
    }
    unreachable!("flat index out of range")
}

#[test]
fn acceptance_1_gradient_checks() {
    guard(1, || {
        let started = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(0xACC1);
        let mut probes = 0usize;
        let mut max_rel = 0.0f64;
        for trial in 0..100 {
            let ins = random_instance(&mut rng);
            let mut model = Model::<f64>::new(ins.dims, 1000 + trial).unwrap();

            let mut analytic: Vec<(String, Vec<f64>)> = Vec::new();
            {
                let mut g = Graph::new();
                let (binding, _) = instance_loss(&mut g, &model, &ins, true);
                for (name, node) in &binding.ordered {
                    analytic.push((name.clone(), g.grad(*node).unwrap_or(&[]).to_vec()));
                }
            }
            let total: usize = analytic.iter().map(|(_, g)| g.len()).sum();
            // The steepest coordinate plus six random ones per trial.
            let mut picks: Vec<usize> = (0..6).map(|_| rng.gen_range(0..total)).collect();
            picks.push(
                (0..total)
                    .max_by(|&a, &b| {
                        flat(&analytic, a)
                            .abs()
                            .total_cmp(&flat(&analytic, b).abs())
                    })
                    .unwrap(),
            );

            for flat_ix in picks {
                let (name, idx) = locate(&analytic, flat_ix);
                let a = analytic
                    .iter()
                    .find(|(n, _)| n == &name)
                    .map(|(_, g)| g[idx])
                    .unwrap();
                let x = model.params.get(&name).unwrap().data[idx];
                let h = 1e-5 * x.abs().max(1.0);
                model.params.values_mut(&name).unwrap()[idx] = x + h;
                let up = instance_loss(&mut Graph::new(), &model, &ins, false).1;
                model.params.values_mut(&name).unwrap()[idx] = x - h;
                let down = instance_loss(&mut Graph::new(), &model, &ins, false).1;
                model.params.values_mut(&name).unwrap()[idx] = x;
                let numeric = (up - down) / (2.0 * h);
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
                assert!(
                    rel <= 1e-4,
                    "trial {trial} {name}[{idx}]: analytic {a:.9e} vs numeric {numeric:.9e} (rel {rel:.2e})"
                );
                max_rel = max_rel.max(rel);
                probes += 1;
            }
        }
        let secs = started.elapsed().as_secs_f64();
        assert!(secs < 60.0, "gradient checks took {secs:.1}s (budget 60s)");
        Verdict::Pass(format!(
            "100 randomized combined-loss instances, {probes} central-difference probes, \
             max rel err {max_rel:.2e} (tol 1e-4), {secs:.1}s; per-primitive gradient checks \
             run in the tensor crate's own suite"
        ))
    });
}

// ---------------------------------------------------------------------------
// 2. Oracle equivalences: sampled softmax vs the full catalog, metrics vs
//    brute force, hard-negative selection vs brute force, and the two
//    documented relative-advantage examples.
// ---------------------------------------------------------------------------

/// The sampled retrieval loss with the negatives set to the whole remaining
/// catalog must equal a full softmax cross-entropy computed by scalar
/// arithmetic from the same latent.
fn full_softmax_equivalence() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACC2A);
    let catalog = 50u32;
    let dims = ModelDims {
        item_rows: catalog as usize + 1,
        dim: 8,
        heads: 2,
        layers: 1,
        n: 3,
    };
    let mut worst = 0.0f64;
    for trial in 0..20 {
        let model = Model::<f64>::new(dims, 2000 + trial).unwrap();
        let first = rng.gen_range(1..=catalog);
        let target = loop {
            let t = rng.gen_range(1..=catalog);
            if t != first {
                break t;
            }
        };
        let items = [first, target];
        let behaviors = [rng.gen_range(0..=1u8), rng.gen_range(0..=1u8)];
        let negatives: Vec<u32> = (1..=catalog).filter(|&i| i != target).collect();

        let mut g = Graph::new();
        let b = Binding::bind(&mut g, &model, false).unwrap();
        let fwd = build_forward(
            &mut g,
            &b,
            &ForwardSpec {
                items: &items,
                behaviors: &behaviors,
                candidates: &[],
            },
        )
        .unwrap();
        let ls = retrieval_loss_sum(&mut g, &b, &fwd, &items, &negatives)
            .unwrap()
            .unwrap();
        assert_eq!(ls.count, 1);
        let sampled = g.values(ls.sum)[0];

        let d = dims.dim;
        let row = fwd.retrieval_rows()[0] as usize;
        let latent = &g.values(fwd.latents)[row * d..(row + 1) * d];
        let emb = &model.params.get("item_embeddings").unwrap().data;
        let scores: Vec<f64> = (1..=catalog as usize)
            .map(|i| {
                latent
                    .iter()
                    .zip(&emb[i * d..(i + 1) * d])
                    .map(|(&l, &e)| l * e)
                    .sum()
            })
            .collect();
        let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + scores.iter().map(|s| (s - m).exp()).sum::<f64>().ln();
        let oracle = lse - scores[target as usize - 1];

        let rel = (sampled - oracle).abs() / oracle.abs().max(1e-300);
        assert!(
            rel <= 1e-10,
            "trial {trial}: sampled {sampled:.15e} vs full softmax {oracle:.15e}"
        );
        worst = worst.max(rel);
    }
    worst
}

fn brute_force_metrics_trials() -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACC2B);
    let ks = [5usize, 10, 20, 50];
    for trial in 0..1000 {
        let users = rng.gen_range(3..=25usize);
        let catalog = rng.gen_range(5..=64usize);
        let quantize_scores = rng.gen_bool(0.3); // forces retrieval-score ties
        let quantize_probs = rng.gen_bool(0.5); // forces AUC ties

        let mut outcomes = Vec::with_capacity(users);
        let mut raw = Vec::with_capacity(users);
        for u in 0..users {
            let mut scores: Vec<f64> = (0..=catalog)
                .map(|_| {
                    let s: f64 = rng.gen_range(-2.0..2.0);
                    if quantize_scores {
                        (s * 10.0).round() / 10.0
                    } else {
                        s
                    }
                })
                .collect();
            scores[0] = f64::NEG_INFINITY;
            let target = rng.gen_range(1..=catalog) as u32;
            let prob = {
                let p: f64 = rng.gen_range(0.0..1.0);
                if quantize_probs {
                    (p * 10.0).round() / 10.0
                } else {
                    p
                }
            };
            let label = rng.gen_range(0..=1u8);
            outcomes.push(UserOutcome {
                user: u as u64,
                rank: retrieval_rank(&scores, target).unwrap(),
                rank_prob: prob,
                label,
            });
            raw.push((scores, target, prob, label));
        }
        let produced = aggregate(&outcomes, Split::Valid, &ks).unwrap();

        // Brute force: count-based rank (ties favor the target), direct
        // metric formulas, pairwise AUC with half-credit ties.
        let n = users as f64;
        let mut sum_ndcg = [0.0f64; 4];
        let mut sum_hr = [0.0f64; 4];
        let mut sum_mrr = 0.0f64;
        for (scores, target, _, _) in &raw {
            let s_t = scores[*target as usize];
            let rank = 1 + scores[1..].iter().filter(|&&x| x > s_t).count();
            for (kx, &k) in ks.iter().enumerate() {
                if rank <= k {
                    sum_ndcg[kx] += 1.0 / ((rank + 1) as f64).log2();
                    sum_hr[kx] += 1.0;
                }
            }
            sum_mrr += 1.0 / rank as f64;
        }
        let pos: Vec<f64> = raw.iter().filter(|r| r.3 == 1).map(|r| r.2).collect();
        let neg: Vec<f64> = raw.iter().filter(|r| r.3 == 0).map(|r| r.2).collect();
        let oracle_auc = (!pos.is_empty() && !neg.is_empty()).then(|| {
            let mut s = 0.0;
            for &p in &pos {
                for &q in &neg {
                    s += if p > q {
                        1.0
                    } else if p == q {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
            s / (pos.len() * neg.len()) as f64
        });

        for (kx, &k) in ks.iter().enumerate() {
            assert!(
                (produced.ndcg[&k] - sum_ndcg[kx] / n).abs() <= 1e-9,
                "trial {trial} ndcg@{k}"
            );
            assert!(
                (produced.hr[&k] - sum_hr[kx] / n).abs() <= 1e-9,
                "trial {trial} hr@{k}"
            );
        }
        assert!(
            (produced.mrr - sum_mrr / n).abs() <= 1e-9,
            "trial {trial} mrr"
        );
        match (produced.auc, oracle_auc) {
            (None, None) => {}
            (Some(p), Some(o)) => {
                assert!((p - o).abs() <= 1e-9, "trial {trial} auc {p} vs {o}")
            }
            (p, o) => panic!("trial {trial}: auc presence mismatch {p:?} vs {o:?}"),
        }
    }
    1000
}

fn brute_force_enhancer_trials() -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACC2C);
    let alpha = 0.8;
    for trial in 0..1000 {
        let s_len = rng.gen_range(1..=10usize);
        let m = rng.gen_range(0..=6usize);
        let mut items: Vec<u32> = Vec::with_capacity(s_len);
        while items.len() < s_len {
            let it = rng.gen_range(1..=200u32);
            if !items.contains(&it) {
                items.push(it);
            }
        }
        let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(s_len);
        for i in 0..s_len {
            if i > 0 && rng.gen_bool(0.25) {
                pairs.push(pairs[rng.gen_range(0..i)]); // forced score tie
            } else {
                pairs.push((rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)));
            }
        }
        let retr: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let rank: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let observed: Vec<u32> = (201..=210).collect();

        let enhancer = Enhancer {
            hard_set_size: m,
            potential_threshold: alpha,
        };
        let mut state = UserNegativeState::new(items.clone());
        let mut reseed = ChaCha8Rng::seed_from_u64(trial as u64);
        let out = enhancer
            .refresh_user(&mut state, &retr, &rank, &observed, 300, &mut reseed)
            .unwrap();

        // Brute force: promote over the threshold, then sort the survivors
        // by relative advantage (ties to the smaller item id) and keep m.
        let mut survivors: Vec<usize> = Vec::new();
        let mut expect: Vec<NegativeAction> = Vec::with_capacity(s_len);
        for (i, &r) in rank.iter().enumerate() {
            if r > alpha {
                expect.push(NegativeAction::Potential);
            } else {
                survivors.push(i);
                expect.push(NegativeAction::Dropped);
            }
        }
        let rel = |i: usize| retr[i] * (retr[i] / rank[i].max(f64::MIN_POSITIVE) - 1.0);
        survivors.sort_by(|&a, &b| rel(b).total_cmp(&rel(a)).then(items[a].cmp(&items[b])));
        let kept = survivors.len().min(m);
        for &i in &survivors[..kept] {
            expect[i] = NegativeAction::Hard;
        }

        assert_eq!(out.scored.len(), s_len, "trial {trial} scored arity");
        for (i, scored) in out.scored.iter().enumerate() {
            assert_eq!(scored.item, items[i], "trial {trial} input order");
            assert_eq!(scored.action, expect[i], "trial {trial} item {}", items[i]);
        }
        assert_eq!(out.hard_kept, kept, "trial {trial} hard_kept");
        let hard_order: Vec<u32> = survivors[..kept].iter().map(|&i| items[i]).collect();
        assert_eq!(
            &state.negatives[..kept],
            &hard_order[..],
            "trial {trial} hard order"
        );
        assert_eq!(state.negatives.len(), s_len, "trial {trial} refill size");
        for w in &state.negatives[kept..] {
            assert!(
                !observed.contains(w) && !state.potential.contains(w),
                "trial {trial}: refill drew an excluded item {w}"
            );
        }
    }
    1000
}

#[test]
fn acceptance_2_oracle_equivalences() {
    guard(2, || {
        let softmax_rel = full_softmax_equivalence();
        let metric_trials = brute_force_metrics_trials();
        let enhancer_trials = brute_force_enhancer_trials();
        let hi = relative_advantage(0.9, 0.3);
        let lo = relative_advantage(0.2, 0.8);
        assert!(
            (hi - 1.8).abs() < 1e-12 && (lo + 0.15).abs() < 1e-12,
            "score examples off: (0.9,0.3)→{hi:.17}, (0.2,0.8)→{lo:.17}"
        );
        Verdict::Pass(format!(
            "sampled retrieval loss equals full-catalog softmax (20 trials, worst rel \
             {softmax_rel:.1e}, tol 1e-10); metrics match brute force on {metric_trials} \
             randomized instances (tol 1e-9, ties included); hard-negative selection matches \
             brute-force sort on {enhancer_trials} instances; relative-advantage examples \
             (0.9,0.3)→{hi:.3} and (0.2,0.8)→{lo:.3} hit ±1e-12"
        ))
    });
}

// ---------------------------------------------------------------------------
// 3. Loss-weighting algebra.
// ---------------------------------------------------------------------------

/// A weighter primed so its next update reports exactly the given rates:
/// with EMA decay 0 the tracked mean equals the last loss, so a unit
/// bootstrap makes rate == loss on the second update.
fn weights_for(r_a: f64, r_b: f64, temperature: f64, la: f64, lb: f64) -> (f64, f64) {
    let mut section = RunConfig::default().weighter;
    section.enabled = true;
    section.temperature = temperature;
    section.lambda_retrieval = la;
    section.lambda_ranking = lb;
    section.ema_decay = 0.0;
    let mut w = AdaptiveWeighter::new(&section);
    w.update(1.0, 1.0).unwrap();
    let st = w.update(r_a, r_b).unwrap();
    assert_eq!(st.rate_retrieval, r_a, "rate construction drifted");
    assert_eq!(st.rate_ranking, r_b, "rate construction drifted");
    (st.weight_retrieval, st.weight_ranking)
}

#[test]
fn acceptance_3_weighter_algebra() {
    guard(3, || {
        // Symmetric rates split the unit budget exactly in half.
        for r in [0.2, 0.5, 1.0, 2.0, 5.0] {
            let (wa, wb) = weights_for(r, r, 1.0, 1.0, 1.0);
            assert_eq!((wa, wb), (0.5, 0.5), "symmetric split at r={r}");
        }

        // Strictly monotone in the retrieval rate over a 100-point grid,
        // and the larger rate always sits on the heavier side.
        let mut last = f64::NEG_INFINITY;
        for i in 0..100 {
            let r_a = 0.1 + 2.9 * i as f64 / 99.0;
            let (wa, wb) = weights_for(r_a, 1.0, 1.0, 1.0, 1.0);
            assert!(wa > last, "w_a not increasing at r_a={r_a}");
            assert_eq!((wa > wb), (r_a > 1.0), "heavier side at r_a={r_a}");
            last = wa;
        }

        // Raising the temperature flattens the split toward (0.5, 0.5).
        let mut last_gap = f64::INFINITY;
        for i in 0..100 {
            let t = 0.25 + 24.75 * i as f64 / 99.0;
            let (wa, wb) = weights_for(2.0, 1.0, t, 1.0, 1.0);
            let gap = wa - wb;
            assert!(gap > 0.0 && gap < last_gap, "gap not shrinking at T={t}");
            last_gap = gap;
        }

        // Base-relative weights always spend exactly one unit of budget.
        let mut rng = ChaCha8Rng::seed_from_u64(0xACC3);
        let mut worst = 0.0f64;
        for _ in 0..100 {
            let (r_a, r_b) = (rng.gen_range(0.2..5.0), rng.gen_range(0.2..5.0));
            let t = rng.gen_range(0.3..8.0);
            let (la, lb) = (rng.gen_range(0.1..4.0), rng.gen_range(0.1..4.0));
            let (wa, wb) = weights_for(r_a, r_b, t, la, lb);
            worst = worst.max((wa / la + wb / lb - 1.0).abs());
        }
        assert!(worst <= 1e-12, "normalization off by {worst:.2e}");
        Verdict::Pass(format!(
            "symmetric rates split exactly (0.5, 0.5); w_a strictly increases in r_a and the \
             larger rate takes the heavier side (100-point grid); higher temperature strictly \
             flattens the split (100-point grid); normalization off by ≤ {worst:.1e} over 100 \
             random (rates, T, λ) draws (tol 1e-12)"
        ))
    });
}

// ---------------------------------------------------------------------------
// 4. MovieLens-1M ingestion (gated on UNIGRF_ML1M).
// ---------------------------------------------------------------------------

/// The shared on-disk ML-1M store; preparation is content-hashed, so
/// repeated calls after the first are cheap no-ops.
fn ml1m_store(ratings: &Path) -> PathBuf {
    let store = std::env::temp_dir().join("unigrf-ml1m-store");
    prepare_data(ratings, "dat".parse().unwrap(), 200, &store).expect("prepare ML-1M");
    store
}

#[test]
fn acceptance_4_ml1m_ingestion() {
    guard(4, || {
        let Some(ratings) = ml1m_ratings() else {
            return Verdict::Skip(
                "set UNIGRF_ML1M to the ratings.dat path to run the ingestion check".into(),
            );
        };
        let store = std::env::temp_dir().join("unigrf-ml1m-ingest-check");
        let _ = std::fs::remove_dir_all(&store);
        let started = Instant::now();
        let out = prepare_data(&ratings, "dat".parse().unwrap(), 200, &store).expect("prepare");
        let secs = started.elapsed().as_secs_f64();
        let m = out.manifest;
        assert_eq!(
            (m.users, m.items, m.interactions),
            (6040, 3706, 1_000_209),
            "corpus counts off"
        );
        assert!(
            (m.mean_history_len - 165.6).abs() <= 0.05,
            "mean history {} vs 165.6 ± 0.05",
            m.mean_history_len
        );
        assert!(secs < 30.0, "ingestion took {secs:.1}s (budget 30s)");
        Verdict::Pass(format!(
            "{} users, {} items, {} interactions, mean history {:.2} (target 165.6 ± 0.05), \
             {secs:.1}s (< 30s)",
            m.users, m.items, m.interactions, m.mean_history_len
        ))
    });
}

// ---------------------------------------------------------------------------
// 5. Training floor (ML-1M gated; a synthetic stand-in runs regardless).
// ---------------------------------------------------------------------------

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs[xs.len() / 2]
}

#[test]
fn acceptance_5_training_floor() {
    guard(5, || {
        let run = main_run();
        let ev = &run.test_eval;
        let ndcg = ev.ndcg[&10];
        let auc = ev.auc.expect("both label classes present");
        // Chance NDCG@10 over this 120-item catalog is ≈ 0.038.
        let (floor_ndcg, floor_auc) = (0.10, 0.60);
        assert!(
            ndcg >= floor_ndcg && auc >= floor_auc,
            "synthetic stand-in under its floor: NDCG@10 {ndcg:.4} (≥ {floor_ndcg}), \
             AUC {auc:.4} (≥ {floor_auc})"
        );

        let (Some(ratings), true) = (ml1m_ratings(), full_gate()) else {
            return Verdict::Skip(format!(
                "ML-1M floor needs UNIGRF_ML1M and UNIGRF_ACCEPT_FULL=1; synthetic stand-in \
                 passed: test NDCG@10 {ndcg:.4} ≥ {floor_ndcg} (chance ≈ 0.038), AUC {auc:.4} \
                 ≥ {floor_auc}"
            ));
        };
        let store = ml1m_store(&ratings);
        let mut ndcgs = Vec::new();
        let mut aucs = Vec::new();
        for seed in [42, 43, 44u64] {
            let mut cfg = RunConfig::default();
            cfg.data.store = store.clone();
            cfg.training.seed = seed;
            let out_dir = std::env::temp_dir().join(format!("unigrf-ml1m-floor-{seed}"));
            run_training(&cfg, &out_dir).expect("ML-1M training");
            let ev = run_eval(&cfg, &out_dir.join(trainer::BEST_CHECKPOINT), Split::Test)
                .expect("ML-1M eval");
            ndcgs.push(ev.ndcg[&10]);
            aucs.push(ev.auc.expect("AUC defined on ML-1M"));
        }
        let (med_ndcg, med_auc) = (median(ndcgs.clone()), median(aucs.clone()));
        assert!(
            med_ndcg >= 0.10 && med_auc >= 0.70,
            "ML-1M medians under the floor: NDCG@10 {med_ndcg:.4}, AUC {med_auc:.4}"
        );
        Verdict::Pass(format!(
            "ML-1M medians over seeds 42/43/44: NDCG@10 {med_ndcg:.4} (≥ 0.10), AUC \
             {med_auc:.4} (≥ 0.70); per-seed NDCG {ndcgs:?}, AUC {aucs:?}"
        ))
    });
}

// ---------------------------------------------------------------------------
// 6. Ablation direction: full system vs no-enhancer + unweighted losses.
// ---------------------------------------------------------------------------

fn without_both(cfg: &RunConfig) -> RunConfig {
    let mut c = cfg.clone();
    c.enhancer.enabled = false;
    c.weighter.enabled = false;
    c
}

#[test]
fn acceptance_6_ablation_direction() {
    guard(6, || {
        let run = main_run();
        let wo_cfg = without_both(&run.cfg);
        let wo_dir = run.root.path().join("run_wo_both");
        run_training(&wo_cfg, &wo_dir).expect("ablated training");
        let wo = run_eval(&wo_cfg, &wo_dir.join(trainer::BEST_CHECKPOINT), Split::Test)
            .expect("ablated eval");
        let full = &run.test_eval;
        for ev in [full, &wo] {
            let n = ev.ndcg[&10];
            let a = ev.auc.unwrap_or(0.5);
            assert!(
                n.is_finite() && (0.0..=1.0).contains(&n),
                "NDCG out of range"
            );
            assert!(
                a.is_finite() && (0.0..=1.0).contains(&a),
                "AUC out of range"
            );
        }
        let info = format!(
            "synthetic single-seed pairs (reported, not asserted): full (NDCG@10 {:.4}, AUC \
             {:.4}) vs without-both ({:.4}, {:.4})",
            full.ndcg[&10],
            full.auc.unwrap_or(f64::NAN),
            wo.ndcg[&10],
            wo.auc.unwrap_or(f64::NAN)
        );

        let (Some(ratings), true) = (ml1m_ratings(), full_gate()) else {
            return Verdict::Skip(format!(
                "ML-1M ablation needs UNIGRF_ML1M and UNIGRF_ACCEPT_FULL=1; {info}"
            ));
        };
        let store = ml1m_store(&ratings);
        let mut pairs = Vec::new(); // (full_ndcg, full_auc, wo_ndcg, wo_auc)
        for seed in [42, 43, 44u64] {
            let mut full_cfg = RunConfig::default();
            full_cfg.data.store = store.clone();
            full_cfg.training.seed = seed;
            let ablated = without_both(&full_cfg);
            let mut evs = Vec::new();
            for (tag, cfg) in [("full", &full_cfg), ("wo", &ablated)] {
                let dir = std::env::temp_dir().join(format!("unigrf-ml1m-abl-{tag}-{seed}"));
                run_training(cfg, &dir).expect("ML-1M training");
                evs.push(run_eval(cfg, &dir.join(trainer::BEST_CHECKPOINT), Split::Test).unwrap());
            }
            pairs.push((
                evs[0].ndcg[&10],
                evs[0].auc.unwrap(),
                evs[1].ndcg[&10],
                evs[1].auc.unwrap(),
            ));
        }
        let fm = median(pairs.iter().map(|p| p.0).collect());
        let fa = median(pairs.iter().map(|p| p.1).collect());
        let wm = median(pairs.iter().map(|p| p.2).collect());
        let wa = median(pairs.iter().map(|p| p.3).collect());
        assert!(
            fm >= wm && fa >= wa,
            "full config fails to dominate: ({fm:.4}, {fa:.4}) vs ({wm:.4}, {wa:.4})"
        );
        Verdict::Pass(format!(
            "ML-1M medians over 3 seeds: full (NDCG@10 {fm:.4}, AUC {fa:.4}) dominates or \
             matches without-both ({wm:.4}, {wa:.4})"
        ))
    });
}

// ---------------------------------------------------------------------------
// 7. Weight-trace ordering invariant and metrics CSV completeness.
// ---------------------------------------------------------------------------

#[test]
fn acceptance_7_trace_and_metrics_columns() {
    guard(7, || {
        let run = main_run();
        let trace = std::fs::read_to_string(run.run_dir.join(trainer::TRACE_FILE)).unwrap();
        let (la, lb) = (
            run.cfg.weighter.lambda_retrieval,
            run.cfg.weighter.lambda_ranking,
        );
        let mut rows = 0usize;
        let mut violations = 0usize;
        for line in trace.lines().skip(2) {
            let f: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
            assert_eq!(f.len(), 7, "trace row arity");
            let (r_a, r_b, w_a, w_b) = (f[3], f[4], f[5], f[6]);
            if (r_a > r_b && w_a / la <= w_b / lb) || (r_b > r_a && w_b / lb <= w_a / la) {
                violations += 1;
            }
            rows += 1;
        }
        assert!(rows > 0, "empty weighter trace");
        assert_eq!(violations, 0, "rate/weight ordering violated");

        let metrics = std::fs::read_to_string(run.run_dir.join(trainer::METRICS_FILE)).unwrap();
        let mut lines = metrics.lines();
        assert!(lines.next().unwrap().starts_with("# config_hash="));
        assert_eq!(
            lines.next().unwrap(),
            "epoch,loss_retrieval,loss_ranking,r_a,r_b,w_a,w_b,val_ndcg10,val_hr10,val_mrr,\
             val_auc,hard_set_size,potential_set_new,wall_seconds"
        );
        let mut data_rows = 0usize;
        for line in lines {
            let cells: Vec<&str> = line.split(',').collect();
            assert_eq!(cells.len(), 14, "metrics row arity");
            for cell in cells {
                cell.parse::<f64>().unwrap(); // "nan" parses as NaN
            }
            data_rows += 1;
        }
        assert_eq!(
            data_rows, run.outcome.epochs_run,
            "one metrics row per epoch"
        );

        let summary = write_report(&run.run_dir).expect("report");
        assert_eq!(summary.trace_violations, 0, "report found trace violations");
        Verdict::Pass(format!(
            "{rows} trace rows with zero ordering violations (larger rate ⇒ larger \
             base-relative weight, both directions); metrics CSV carries all 14 contracted \
             columns over {data_rows} epochs; the report validator agrees"
        ))
    });
}

// ---------------------------------------------------------------------------
// 8. Sweep machinery with closed-form parameter counts.
// ---------------------------------------------------------------------------

fn closed_form_params(items: usize, d: usize, layers: usize, n: usize) -> usize {
    d * (items + 4 + 2 * n) + layers * (12 * d * d + 9 * d) + 2 * d + d * d / 2 + d + 1
}

#[test]
fn acceptance_8_sweep_machinery() {
    guard(8, || {
        let run = main_run();
        let mut cfg = run.cfg.clone();
        cfg.training.max_epochs = 2;
        cfg.training.patience = 2;
        cfg.enhancer.audit = false;
        let items = 120usize;
        let root = run.root.path().join("sweeps");

        let m_values = [0usize, 2, 5, 10, 20];
        let m_rows = run_sweep(&cfg, SweepAxis::HardSetSize, &m_values, &root.join("m")).unwrap();
        assert_eq!(m_rows.len(), m_values.len(), "one row per m");
        for (row, &value) in m_rows.iter().zip(&m_values) {
            assert_eq!(row.value, value);
            assert_eq!(row.status, "ok", "m={value} status {}", row.status);
            let want = closed_form_params(items, cfg.model.dim, cfg.model.layers, cfg.sequence.n);
            assert_eq!(row.param_count, want, "m={value} parameter count");
            let dims = ModelDims {
                item_rows: items + 1,
                dim: cfg.model.dim,
                heads: cfg.model.heads,
                layers: cfg.model.layers,
                n: cfg.sequence.n,
            };
            assert_eq!(
                Model::<f64>::new(dims, 1).unwrap().params.scalar_count(),
                want
            );
        }
        let best_m = m_rows
            .iter()
            .max_by(|a, b| a.val_ndcg10.total_cmp(&b.val_ndcg10))
            .unwrap()
            .value;

        let layer_values = [2usize, 4];
        let l_rows =
            run_sweep(&cfg, SweepAxis::Layers, &layer_values, &root.join("layers")).unwrap();
        assert_eq!(l_rows.len(), layer_values.len(), "one row per depth");
        for (row, &value) in l_rows.iter().zip(&layer_values) {
            assert_eq!(row.value, value);
            assert_eq!(row.status, "ok", "layers={value} status {}", row.status);
            let want = closed_form_params(items, cfg.model.dim, value, cfg.sequence.n);
            assert_eq!(row.param_count, want, "layers={value} parameter count");
            let dims = ModelDims {
                item_rows: items + 1,
                dim: cfg.model.dim,
                heads: cfg.model.heads,
                layers: value,
                n: cfg.sequence.n,
            };
            assert_eq!(
                Model::<f64>::new(dims, 1).unwrap().params.scalar_count(),
                want
            );
        }

        let scale = match (ml1m_ratings(), full_gate()) {
            (Some(ratings), true) => {
                let mut big = RunConfig::default();
                big.data.store = ml1m_store(&ratings);
                let dir = std::env::temp_dir().join("unigrf-ml1m-sweep");
                let rows = run_sweep(&big, SweepAxis::HardSetSize, &m_values, &dir).unwrap();
                format!("; ML-1M m-sweep completed with {} rows", rows.len())
            }
            _ => "; ML-1M-scale sweep skipped (needs UNIGRF_ML1M and UNIGRF_ACCEPT_FULL=1)"
                .to_string(),
        };
        Verdict::Pass(format!(
            "m ∈ {{0,2,5,10,20}} and layers ∈ {{2,4}} sweeps: one row per value, all ok, \
             parameter counts match both the closed form and freshly instantiated models; \
             best synthetic m by validation NDCG@10 was {best_m} (observed, seed-sensitive, \
             not asserted){scale}"
        ))
    });
}

// ---------------------------------------------------------------------------
// 9. Determinism and checkpoint persistence.
// ---------------------------------------------------------------------------

/// Strips the wall-clock column, the one field that legitimately varies
/// between otherwise identical runs.
fn strip_wall(metrics: &str) -> String {
    metrics
        .lines()
        .map(|l| l.rsplit_once(',').map(|(head, _)| head).unwrap_or(l))
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn acceptance_9_determinism_and_persistence() {
    guard(9, || {
        let run = main_run();
        let rerun_dir = run.root.path().join("run_again");
        let outcome2 = run_training(&run.cfg, &rerun_dir).expect("second run");
        assert_eq!(
            outcome2.epochs_run, run.outcome.epochs_run,
            "epoch counts differ"
        );

        let read = |dir: &Path, file: &str| std::fs::read_to_string(dir.join(file)).unwrap();
        let m1 = strip_wall(&read(&run.run_dir, trainer::METRICS_FILE));
        let m2 = strip_wall(&read(&rerun_dir, trainer::METRICS_FILE));
        assert_eq!(m1, m2, "metrics differ between identical runs");
        assert_eq!(
            read(&run.run_dir, trainer::TRACE_FILE),
            read(&rerun_dir, trainer::TRACE_FILE),
            "weight traces differ"
        );
        let ck1 = std::fs::read(run.run_dir.join(trainer::BEST_CHECKPOINT)).unwrap();
        let ck2 = std::fs::read(rerun_dir.join(trainer::BEST_CHECKPOINT)).unwrap();
        assert_eq!(ck1, ck2, "checkpoints differ byte-wise");

        let (set, _) = load_store(&run.store).unwrap();
        let (model, epoch, metric) =
            Model::<f64>::load(&run.run_dir.join(trainer::BEST_CHECKPOINT)).unwrap();
        let before = evaluate(&model, &set, Split::Test, &trainer::EVAL_KS, 1).unwrap();
        let resaved = run.root.path().join("roundtrip.ckpt");
        model.save(&resaved, epoch, metric).unwrap();
        assert_eq!(
            ck1,
            std::fs::read(&resaved).unwrap(),
            "re-saved checkpoint differs"
        );
        let (again, epoch2, metric2) = Model::<f64>::load(&resaved).unwrap();
        assert_eq!((epoch, metric), (epoch2, metric2), "metadata round-trip");
        let after = evaluate(&again, &set, Split::Test, &trainer::EVAL_KS, 1).unwrap();
        assert_eq!(before, after, "evaluation changed across save/load");
        Verdict::Pass(format!(
            "two same-seed runs byte-identical (metrics modulo the wall_seconds column, weight \
             trace, checkpoint); save→load→eval round-trip exact over {} epochs",
            run.outcome.epochs_run
        ))
    });
}
