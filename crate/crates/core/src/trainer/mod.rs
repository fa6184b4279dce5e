//! The epoch loop: batched per-user tapes, same-step loss weighting, Adam
//! updates, epoch-end negative-set refresh, validation-driven early stopping,
//! and append-only metric artifacts.
//!
//! Every run directory receives a resolved `config.toml`, a `metrics.csv`
//! with one row per epoch, a `weighter_trace.csv` with one row per weighter
//! update, `best.ckpt`/`last.ckpt` checkpoints, and (when auditing is on)
//! one `enhancer_audit/epoch_NNNN.csv` per refresh.

mod commands;

pub use commands::{
    prepare_data, run_eval, run_sweep, write_report, PrepareOutcome, ReportSummary, SweepAxis,
    SweepRow, SWEEP_HEADER,
};

use crate::config::{NumericWidth, RunConfig, WeighterGranularity};
use crate::data::{
    load_store, sample_uniform_negatives, user_rng, RngPurpose, SequenceSet, Split, UserSequence,
};
use crate::enhancer::{Enhancer, UserNegativeState};
use crate::error::{CoreError, Result};
use crate::eval::evaluate;
use crate::model::{
    build_forward, rank_logits, retrieval_sigmoid, score_target_aware, Binding, ForwardSpec, Model,
    ModelDims,
};
use crate::objectives::{bce_sum, retrieval_loss_sum};
use crate::weighter::{AdaptiveWeighter, WeighterState};
use rand::Rng;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;
use unigrf_tensor::{Adam, Graph, Real};

pub const METRICS_FILE: &str = "metrics.csv";
pub const TRACE_FILE: &str = "weighter_trace.csv";
pub const AUDIT_DIR: &str = "enhancer_audit";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const CONFIG_COPY: &str = "config.toml";

/// Validation cutoffs logged during training and reported by `eval`.
pub const EVAL_KS: [usize; 4] = [5, 10, 20, 50];

/// One `metrics.csv` row. Losses are unweighted per-term epoch means; the
/// rate/weight columns are epoch means of the weighter states actually
/// applied; enhancer counters cover the refresh run at this epoch's end.
#[derive(Debug, Clone)]
pub struct EpochRow {
    pub epoch: usize,
    pub loss_retrieval: f64,
    pub loss_ranking: f64,
    pub r_a: f64,
    pub r_b: f64,
    pub w_a: f64,
    pub w_b: f64,
    pub val_ndcg10: f64,
    pub val_hr10: f64,
    pub val_mrr: f64,
    pub val_auc: Option<f64>,
    pub hard_set_size: usize,
    pub potential_set_new: usize,
    pub wall_seconds: f64,
}

pub const METRICS_HEADER: &str = "epoch,loss_retrieval,loss_ranking,r_a,r_b,w_a,w_b,\
val_ndcg10,val_hr10,val_mrr,val_auc,hard_set_size,potential_set_new,wall_seconds";

impl EpochRow {
    fn csv_line(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{},{},{},{:.3}",
            self.epoch,
            self.loss_retrieval,
            self.loss_ranking,
            self.r_a,
            self.r_b,
            self.w_a,
            self.w_b,
            self.val_ndcg10,
            self.val_hr10,
            self.val_mrr,
            fmt_opt(self.val_auc),
            self.hard_set_size,
            self.potential_set_new,
            self.wall_seconds,
        )
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    match x {
        Some(v) => format!("{v:.6}"),
        None => "nan".to_string(),
    }
}

/// What a completed (or early-stopped) training run produced.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_ndcg10: f64,
    pub stopped_early: bool,
    /// Cumulative potential-positive promotions across the run.
    pub potential_total: usize,
    pub rows: Vec<EpochRow>,
}

/// Trains a model from the prepared store in `cfg.data.store`, writing all
/// artifacts under `out_dir`. On a numeric failure the error propagates after
/// artifacts are flushed, so `last.ckpt` always holds the newest finite
/// parameters (mid-epoch progress since that checkpoint is discarded).
pub fn run_training(cfg: &RunConfig, out_dir: &Path) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (set, _) = load_store(&cfg.data.store)?;
    if set.n != cfg.sequence.n {
        return Err(CoreError::Config(format!(
            "sequence.n = {} but the store at {} was prepared with n = {}; re-run prepare",
            cfg.sequence.n,
            cfg.data.store.display(),
            set.n
        )));
    }
    match cfg.training.width {
        NumericWidth::F64 => train_impl::<f64>(cfg, &set, out_dir),
        NumericWidth::F32 => train_impl::<f32>(cfg, &set, out_dir),
    }
}

/// One user's held batch tape: values stay alive until the batch's mean
/// losses have fed the weighter, then the weighted combine node is appended
/// and the backward pass runs — one forward and one backward per user.
struct HeldTape<R: Real> {
    g: Graph<R>,
    binding: Binding,
    retr: Option<crate::objectives::LossSum>,
    rank: crate::objectives::LossSum,
}

fn train_impl<R: Real>(cfg: &RunConfig, set: &SequenceSet, out_dir: &Path) -> Result<TrainOutcome> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| CoreError::io(format!("create {}", out_dir.display()), e))?;
    let hash = cfg.hash();
    write_text(&out_dir.join(CONFIG_COPY), &cfg.to_toml_string())?;

    let seed = cfg.training.seed;
    let item_count = set.catalog.item_count();
    let dims = ModelDims::from_config(cfg, set.catalog.item_rows());
    let mut model: Model<R> = Model::new(dims, seed)?;
    let mut adam: Adam<R> = Adam::new(cfg.training.lr);
    let mut weighter = AdaptiveWeighter::new(&cfg.weighter);
    let enhancer = Enhancer {
        hard_set_size: cfg.enhancer.hard_set_size,
        potential_threshold: cfg.enhancer.potential_threshold,
    };

    // Epoch-0 negative sets; with the enhancer off these are resampled fresh
    // every epoch, with it on they evolve through refreshes.
    let mut neg_states: Vec<UserNegativeState> = Vec::with_capacity(set.sequences.len());
    for seq in &set.sequences {
        let mut rng = user_rng(seed, seq.user_index, RngPurpose::TrainNegatives, 0);
        let negatives =
            sample_uniform_negatives(item_count, &seq.observed, cfg.training.negatives, &mut rng)?;
        neg_states.push(UserNegativeState::new(negatives));
    }

    let mut metrics = CsvFile::create(&out_dir.join(METRICS_FILE), &hash, METRICS_HEADER)?;
    let mut trace = CsvFile::create(
        &out_dir.join(TRACE_FILE),
        &hash,
        "t,loss_retrieval,loss_ranking,r_a,r_b,w_a,w_b",
    )?;

    let last_path = out_dir.join(LAST_CHECKPOINT);
    let best_path = out_dir.join(BEST_CHECKPOINT);
    // A retained "last good" exists even if epoch 0 aborts mid-flight.
    model.save(&last_path, 0, 0.0)?;

    let mut epoch_state = weighter.initial_state();
    let mut auto_scale_pending = cfg.weighter.auto_scale;
    let mut step = 0u64;
    let mut best_ndcg10 = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut since_best = 0usize;
    let mut potential_total = 0usize;
    let mut stopped_early = false;
    let mut rows: Vec<EpochRow> = Vec::new();

    for epoch in 0..cfg.training.max_epochs {
        let t0 = Instant::now();
        let order = shuffled_user_order(set.sequences.len(), seed, epoch as u32);

        let mut retr_sum_epoch = 0.0;
        let mut retr_terms_epoch = 0usize;
        let mut rank_sum_epoch = 0.0;
        let mut rank_terms_epoch = 0usize;
        let mut rate_sum = (0.0, 0.0);
        let mut weight_sum = (0.0, 0.0);
        let mut states_seen = 0usize;

        for batch in order.chunks(cfg.training.batch_size) {
            // Forward every user in the batch, holding the tapes.
            let mut tapes: Vec<HeldTape<R>> = Vec::with_capacity(batch.len());
            let mut retr_sum = 0.0;
            let mut retr_terms = 0usize;
            let mut rank_sum = 0.0;
            let mut rank_terms = 0usize;
            for &uix in batch {
                let tape = forward_user(
                    &model,
                    &set.sequences[uix],
                    &neg_states[uix],
                    cfg.enhancer.enabled,
                )?;
                if let Some(ls) = &tape.retr {
                    retr_sum += tape.g.values(ls.sum)[0].to_f64();
                    retr_terms += ls.count;
                }
                rank_sum += tape.g.values(tape.rank.sum)[0].to_f64();
                rank_terms += tape.rank.count;
                tapes.push(tape);
            }
            let retr_mean = if retr_terms > 0 {
                retr_sum / retr_terms as f64
            } else {
                0.0
            };
            let rank_mean = rank_sum / rank_terms as f64;
            if !retr_mean.is_finite() || !rank_mean.is_finite() {
                metrics.flush()?;
                trace.flush()?;
                return Err(CoreError::Numeric(format!(
                    "non-finite training loss at epoch {epoch} step {}; aborting with \
                     last-good checkpoint retained",
                    step + 1
                )));
            }
            step += 1;

            // Same-step weighting: this batch's weights come from this
            // batch's losses (epoch granularity freezes them for the epoch).
            let st = match cfg.weighter.granularity {
                WeighterGranularity::Step => {
                    let st = weighter.update(retr_mean, rank_mean)?;
                    trace.row(&trace_line(step, &st))?;
                    st
                }
                WeighterGranularity::Epoch => epoch_state,
            };
            rate_sum.0 += st.rate_retrieval;
            rate_sum.1 += st.rate_ranking;
            weight_sum.0 += st.weight_retrieval;
            weight_sum.1 += st.weight_ranking;
            states_seen += 1;

            backward_batch(&mut model, &mut adam, tapes, &st, retr_terms, rank_terms)?;

            retr_sum_epoch += retr_sum;
            retr_terms_epoch += retr_terms;
            rank_sum_epoch += rank_sum;
            rank_terms_epoch += rank_terms;
        }

        let epoch_retr_mean = if retr_terms_epoch > 0 {
            retr_sum_epoch / retr_terms_epoch as f64
        } else {
            0.0
        };
        let epoch_rank_mean = rank_sum_epoch / rank_terms_epoch.max(1) as f64;

        if cfg.weighter.granularity == WeighterGranularity::Epoch {
            let st = weighter.update(epoch_retr_mean, epoch_rank_mean)?;
            trace.row(&trace_line(epoch as u64 + 1, &st))?;
            epoch_state = st;
        }
        if auto_scale_pending {
            // One-time rescale so both stages start at equal weighted
            // magnitude from the second epoch on.
            if epoch_retr_mean > 0.0 && epoch_rank_mean > 0.0 {
                weighter.set_lambda_ranking(
                    cfg.weighter.lambda_ranking * epoch_retr_mean / epoch_rank_mean,
                );
                log::info!(
                    "auto_scale: lambda_ranking set to {:.6}",
                    weighter.lambda_ranking()
                );
            }
            auto_scale_pending = false;
        }

        // Negative-set turnover for the next epoch, after the optimizer
        // quiesces and before validation.
        let (hard_total, potential_new) = if cfg.enhancer.enabled {
            refresh_negatives(
                cfg,
                set,
                &model,
                &enhancer,
                &mut neg_states,
                epoch,
                out_dir,
                &hash,
            )?
        } else {
            for (uix, seq) in set.sequences.iter().enumerate() {
                let mut rng = user_rng(
                    seed,
                    seq.user_index,
                    RngPurpose::TrainNegatives,
                    epoch as u32 + 1,
                );
                neg_states[uix].negatives = sample_uniform_negatives(
                    item_count,
                    &seq.observed,
                    cfg.training.negatives,
                    &mut rng,
                )?;
            }
            (0, 0)
        };
        potential_total += potential_new;

        let val = evaluate(&model, set, Split::Valid, &EVAL_KS, cfg.training.workers)?;
        let val_ndcg10 = val.ndcg[&10];
        let states_div = states_seen.max(1) as f64;
        let row = EpochRow {
            epoch,
            loss_retrieval: epoch_retr_mean,
            loss_ranking: epoch_rank_mean,
            r_a: rate_sum.0 / states_div,
            r_b: rate_sum.1 / states_div,
            w_a: weight_sum.0 / states_div,
            w_b: weight_sum.1 / states_div,
            val_ndcg10,
            val_hr10: val.hr[&10],
            val_mrr: val.mrr,
            val_auc: val.auc,
            hard_set_size: hard_total,
            potential_set_new: potential_new,
            wall_seconds: t0.elapsed().as_secs_f64(),
        };
        metrics.row(&row.csv_line())?;
        log::info!(
            "epoch {epoch}: loss_retr {:.4} loss_rank {:.4} val_ndcg10 {:.4} ({:.1}s)",
            row.loss_retrieval,
            row.loss_ranking,
            val_ndcg10,
            row.wall_seconds
        );
        rows.push(row);

        model.save(&last_path, epoch, val_ndcg10)?;
        if val_ndcg10 > best_ndcg10 {
            best_ndcg10 = val_ndcg10;
            best_epoch = epoch;
            since_best = 0;
            model.save(&best_path, epoch, val_ndcg10)?;
        } else {
            since_best += 1;
            if since_best >= cfg.training.patience {
                stopped_early = true;
                log::info!(
                    "early stop at epoch {epoch}: no val NDCG@10 gain in {} epochs",
                    cfg.training.patience
                );
                break;
            }
        }
    }

    metrics.flush()?;
    trace.flush()?;
    Ok(TrainOutcome {
        epochs_run: rows.len(),
        best_epoch,
        best_ndcg10,
        stopped_early,
        potential_total,
        rows,
    })
}

/// Deterministic Fisher–Yates order for one epoch's batches.
fn shuffled_user_order(count: usize, seed: u64, epoch: u32) -> Vec<usize> {
    let mut order: Vec<usize> = (0..count).collect();
    let mut rng = user_rng(seed, 0, RngPurpose::Shuffle, epoch);
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    order
}

/// Builds one user's training tape: compact forward over the train window
/// (with any relabeled potential positives as target-aware candidates), the
/// retrieval loss over the shared negative set, and BCE over the history
/// click labels plus label-1 auxiliary candidate terms.
fn forward_user<R: Real>(
    model: &Model<R>,
    seq: &UserSequence,
    negs: &UserNegativeState,
    enhancer_enabled: bool,
) -> Result<HeldTape<R>> {
    let (items, behaviors) = seq.train_window();
    let mut g: Graph<R> = Graph::new();
    let binding = Binding::bind(&mut g, model, true)?;
    let aux: &[u32] = if enhancer_enabled {
        &negs.potential
    } else {
        &[]
    };
    let fwd = build_forward(
        &mut g,
        &binding,
        &ForwardSpec {
            items: &items,
            behaviors: &behaviors,
            candidates: aux,
        },
    )?;
    // An emptied set only happens when a refresh promoted everything and the
    // refill pool was exhausted (already warned); the user still trains the
    // ranking objective.
    let retr = if negs.negatives.is_empty() {
        None
    } else {
        retrieval_loss_sum(&mut g, &binding, &fwd, &items, &negs.negatives)?
    };

    let hist = g.gather_rows(fwd.latents, &fwd.rank_rows())?;
    let z_hist = rank_logits(&mut g, &binding, hist)?;
    let mut labels = behaviors;
    let z_all = match fwd.candidate_latents {
        Some(cl) => {
            let z_aux = rank_logits(&mut g, &binding, cl)?;
            labels.extend(std::iter::repeat_n(1u8, aux.len()));
            g.concat_rows(&[z_hist, z_aux])?
        }
        None => z_hist,
    };
    let rank = bce_sum(&mut g, z_all, &labels)?;
    Ok(HeldTape {
        g,
        binding,
        retr,
        rank,
    })
}

/// Appends each held tape's weighted combine node, runs its backward pass,
/// sums gradients across users, and applies one Adam step. Tapes are dropped
/// here, releasing the parameter borrows the optimizer needs.
fn backward_batch<R: Real>(
    model: &mut Model<R>,
    adam: &mut Adam<R>,
    tapes: Vec<HeldTape<R>>,
    st: &WeighterState,
    retr_terms: usize,
    rank_terms: usize,
) -> Result<()> {
    let scale_retr = R::from_f64(st.weight_retrieval / retr_terms.max(1) as f64);
    let scale_rank = R::from_f64(st.weight_ranking / rank_terms as f64);
    let mut bank = model.params.zero_grads();
    for mut tape in tapes {
        let rank_part = tape.g.scale(tape.rank.sum, scale_rank)?;
        let combined = match &tape.retr {
            Some(ls) => {
                let retr_part = tape.g.scale(ls.sum, scale_retr)?;
                tape.g.add(retr_part, rank_part)?
            }
            None => rank_part,
        };
        tape.g.backward(combined)?;
        for (name, node) in &tape.binding.ordered {
            if let Some(grad) = tape.g.grad(*node) {
                let acc = bank
                    .get_mut(name.as_str())
                    .expect("bank covers every parameter");
                for (a, &x) in acc.iter_mut().zip(grad) {
                    *a += x;
                }
            }
        }
    }
    let mut updates = model.params.updates(&bank)?;
    adam.step(&mut updates)?;
    Ok(())
}

/// Scores every user's negative set against the quiesced model (sharded
/// read-only across workers), then serially rebuilds the sets: promotions to
/// the potential pool, top-m hard keeps, fresh uniform refills. Returns
/// (total hard kept, total new potentials).
#[allow(clippy::too_many_arguments)]
fn refresh_negatives<R: Real>(
    cfg: &RunConfig,
    set: &SequenceSet,
    model: &Model<R>,
    enhancer: &Enhancer,
    neg_states: &mut [UserNegativeState],
    epoch: usize,
    out_dir: &Path,
    config_hash: &str,
) -> Result<(usize, usize)> {
    let scores = score_negative_sets(model, set, neg_states, cfg.training.workers)?;

    let mut audit = if cfg.enhancer.audit {
        let dir = out_dir.join(AUDIT_DIR);
        std::fs::create_dir_all(&dir)
            .map_err(|e| CoreError::io(format!("create {}", dir.display()), e))?;
        Some(CsvFile::create(
            &dir.join(format!("epoch_{epoch:04}.csv")),
            config_hash,
            "user,item,score_retrieval,score_ranking,relative_score,action",
        )?)
    } else {
        None
    };

    let mut hard_total = 0usize;
    let mut potential_new = 0usize;
    for (uix, seq) in set.sequences.iter().enumerate() {
        let (retrieval, ranking) = &scores[uix];
        let mut rng = user_rng(
            cfg.training.seed,
            seq.user_index,
            RngPurpose::EnhancerNegatives,
            epoch as u32 + 1,
        );
        let outcome = enhancer.refresh_user(
            &mut neg_states[uix],
            retrieval,
            ranking,
            &seq.observed,
            set.catalog.item_count(),
            &mut rng,
        )?;
        hard_total += outcome.hard_kept;
        potential_new += outcome.new_potentials;
        if let Some(file) = audit.as_mut() {
            for s in &outcome.scored {
                file.row(&format!(
                    "{},{},{:.6},{:.6},{:.6},{}",
                    seq.user,
                    s.item,
                    s.retrieval,
                    s.ranking,
                    s.relative,
                    s.action.as_str()
                ))?;
            }
        }
    }
    if let Some(mut file) = audit {
        file.flush()?;
    }
    Ok((hard_total, potential_new))
}

/// Per-user (retrieval, ranking) scores over its negative set.
type NegativeScores = Vec<(Vec<f64>, Vec<f64>)>;

/// Read-only scoring pass over every user's negatives: one target-aware
/// forward per user yields the ranking probabilities, and the next-item
/// latent yields sigmoid retrieval scores. Sharded like evaluation.
fn score_negative_sets<R: Real>(
    model: &Model<R>,
    set: &SequenceSet,
    neg_states: &[UserNegativeState],
    workers: usize,
) -> Result<NegativeScores> {
    let run_range = |lo: usize, hi: usize| -> Result<NegativeScores> {
        let mut out = Vec::with_capacity(hi - lo);
        for (seq, state) in set.sequences[lo..hi].iter().zip(&neg_states[lo..hi]) {
            let (items, behaviors) = seq.train_window();
            let negatives = &state.negatives;
            let scored = score_target_aware(model, &items, &behaviors, negatives)?;
            let mut retrieval = Vec::with_capacity(negatives.len());
            for &item in negatives {
                retrieval.push(retrieval_sigmoid(model, &scored.next_latent, item)?);
            }
            out.push((retrieval, scored.candidate_probs));
        }
        Ok(out)
    };

    let total = set.sequences.len();
    let workers = workers.max(1).min(total.max(1));
    if workers <= 1 {
        return run_range(0, total);
    }
    let chunk = total.div_ceil(workers);
    let mut results: Vec<Result<NegativeScores>> = Vec::new();
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for w in 0..workers {
            let lo = w * chunk;
            let hi = ((w + 1) * chunk).min(total);
            let run = &run_range;
            handles.push(scope.spawn(move || run(lo, hi.max(lo))));
        }
        for h in handles {
            results.push(h.join().expect("enhancer scoring worker panicked"));
        }
    });
    let mut merged = Vec::with_capacity(total);
    for r in results {
        merged.extend(r?);
    }
    Ok(merged)
}

fn trace_line(t: u64, st: &WeighterState) -> String {
    format!(
        "{t},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
        st.loss_retrieval,
        st.loss_ranking,
        st.rate_retrieval,
        st.rate_ranking,
        st.weight_retrieval,
        st.weight_ranking
    )
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CoreError::io(format!("write {}", path.display()), e))
}

/// Line-buffered CSV artifact: a `# config_hash=` provenance line, a header,
/// then data rows flushed as they land so partial runs stay inspectable.
struct CsvFile {
    w: std::io::BufWriter<std::fs::File>,
    path: std::path::PathBuf,
}

impl CsvFile {
    fn create(path: &Path, config_hash: &str, header: &str) -> Result<Self> {
        let file = std::fs::File::create(path)
            .map_err(|e| CoreError::io(format!("create {}", path.display()), e))?;
        let mut out = CsvFile {
            w: std::io::BufWriter::new(file),
            path: path.to_path_buf(),
        };
        out.row(&format!("# config_hash={config_hash}"))?;
        out.row(header)?;
        Ok(out)
    }

    fn row(&mut self, line: &str) -> Result<()> {
        writeln!(self.w, "{line}")
            .and_then(|()| self.w.flush())
            .map_err(|e| CoreError::io(format!("write {}", self.path.display()), e))
    }

    fn flush(&mut self) -> Result<()> {
        self.w
            .flush()
            .map_err(|e| CoreError::io(format!("write {}", self.path.display()), e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_sequences, parse_interactions, synth, write_store, InputFormat};

    /// Tiny prepared store + matching config rooted in a temp dir.
    fn fixture(dir: &Path, users: u32, n: usize) -> RunConfig {
        let spec = synth::SynthSpec {
            users,
            genres: 2,
            items_per_genre: 12,
            min_len: 6,
            max_len: 10,
            seed: 7,
            ..Default::default()
        };
        let records = synth::generate(&spec).unwrap();
        let raw = dir.join("raw.dat");
        synth::write_dat(&records, &raw).unwrap();
        let parsed = parse_interactions(&raw, InputFormat::Dat).unwrap();
        let seqs = build_sequences(&parsed.records, &parsed.catalog, n).unwrap();
        write_store(
            &dir.join("store"),
            &seqs,
            "dat",
            parsed.stats.interactions,
            parsed.stats.malformed,
            parsed.stats.mean_history_len,
        )
        .unwrap();

        let mut cfg = RunConfig::default();
        cfg.data.store = dir.join("store");
        cfg.sequence.n = n;
        cfg.model.dim = 16;
        cfg.model.heads = 2;
        cfg.model.layers = 1;
        cfg.training.batch_size = 4;
        cfg.training.max_epochs = 2;
        cfg.training.negatives = 6;
        cfg.training.seed = 11;
        cfg.enhancer.hard_set_size = 2;
        cfg
    }

    fn tempdir(tag: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("unigrf-trainer-{tag}-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn two_epochs_produce_all_artifacts() {
        let dir = tempdir("artifacts");
        let cfg = fixture(&dir, 8, 8);
        let out = dir.join("run");
        let outcome = run_training(&cfg, &out).unwrap();
        assert_eq!(outcome.epochs_run, 2);
        assert_eq!(outcome.rows.len(), 2);
        for file in [
            METRICS_FILE,
            TRACE_FILE,
            CONFIG_COPY,
            BEST_CHECKPOINT,
            LAST_CHECKPOINT,
        ] {
            assert!(out.join(file).exists(), "{file} missing");
        }
        let metrics = std::fs::read_to_string(out.join(METRICS_FILE)).unwrap();
        let lines: Vec<&str> = metrics.lines().collect();
        assert!(lines[0].starts_with("# config_hash="));
        assert_eq!(lines[1], METRICS_HEADER);
        assert_eq!(lines.len(), 4); // hash + header + 2 epochs
        assert_eq!(lines[2].split(',').count(), 14);
        // Per-epoch losses are finite and logged.
        for row in &outcome.rows {
            assert!(row.loss_retrieval.is_finite() && row.loss_ranking.is_finite());
            assert!(row.wall_seconds >= 0.0);
        }
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn identical_seeds_reproduce_metrics_and_checkpoints() {
        let dir = tempdir("determinism");
        let cfg = fixture(&dir, 6, 8);
        let (out_a, out_b) = (dir.join("a"), dir.join("b"));
        run_training(&cfg, &out_a).unwrap();
        run_training(&cfg, &out_b).unwrap();

        let strip_wall = |path: &Path| -> String {
            std::fs::read_to_string(path)
                .unwrap()
                .lines()
                .map(|l| {
                    l.rsplit_once(',')
                        .map(|(head, _)| head.to_string())
                        .unwrap_or_else(|| l.to_string())
                })
                .collect::<Vec<_>>()
                .join("\n")
        };
        assert_eq!(
            strip_wall(&out_a.join(METRICS_FILE)),
            strip_wall(&out_b.join(METRICS_FILE))
        );
        assert_eq!(
            std::fs::read_to_string(out_a.join(TRACE_FILE)).unwrap(),
            std::fs::read_to_string(out_b.join(TRACE_FILE)).unwrap()
        );
        assert_eq!(
            std::fs::read(out_a.join(BEST_CHECKPOINT)).unwrap(),
            std::fs::read(out_b.join(BEST_CHECKPOINT)).unwrap()
        );
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn single_batch_fixture_overfits_within_200_steps() {
        let dir = tempdir("overfit");
        let mut cfg = fixture(&dir, 4, 6);
        cfg.training.max_epochs = 200; // batch_size 4 = one step per epoch
        cfg.training.batch_size = 4;
        cfg.training.lr = 1e-2;
        cfg.training.patience = 200;
        cfg.enhancer.enabled = false;
        cfg.weighter.enabled = false;
        let outcome = run_training(&cfg, &dir.join("run")).unwrap();
        let first = &outcome.rows[0];
        let last = outcome.rows.last().unwrap();
        let start = first.loss_retrieval + first.loss_ranking;
        let end = last.loss_retrieval + last.loss_ranking;
        assert!(
            end < 0.10 * start,
            "combined loss {start:.4} -> {end:.4} not below 10% of initial"
        );
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn store_and_config_n_must_agree() {
        let dir = tempdir("n-mismatch");
        let mut cfg = fixture(&dir, 6, 8);
        cfg.sequence.n = 12; // store was prepared with n = 8
        let err = run_training(&cfg, &dir.join("run")).unwrap_err();
        assert!(matches!(err, CoreError::Config(_)));
        assert!(err.to_string().contains("re-run prepare"));
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn diverging_run_aborts_with_numeric_error_and_keeps_checkpoint() {
        let dir = tempdir("nan-abort");
        let mut cfg = fixture(&dir, 6, 8);
        // The first Adam step throws every parameter to ±1e308; the next
        // forward overflows to inf and the loss guard must trip. (Smaller
        // explosions stay finite — layer norm re-normalizes them.)
        cfg.training.lr = 1e308;
        cfg.training.max_epochs = 6;
        cfg.enhancer.enabled = false;
        let out = dir.join("run");
        let err = run_training(&cfg, &out).unwrap_err();
        assert_eq!(err.exit_code(), 4, "expected numeric failure, got: {err}");
        assert!(out.join(LAST_CHECKPOINT).exists());
        // The retained checkpoint still loads and holds finite parameters.
        let (model, _, _) = Model::<f64>::load(&out.join(LAST_CHECKPOINT)).unwrap();
        for (_, t) in model.params.iter() {
            assert!(t.data.iter().all(|x| x.is_finite()));
        }
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
