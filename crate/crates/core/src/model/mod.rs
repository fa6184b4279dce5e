//! The unified sequence model: one decoder-only transformer over interleaved
//! item/behavior tokens whose final latents serve both heads — next-item
//! retrieval against the item embedding table and pointwise click ranking
//! through a small MLP.

mod forward;
mod infer;

pub use forward::{
    build_forward, build_padded_forward, col_concat, rank_logits, Binding, Forward, ForwardSpec,
    LayerBinding, PaddedForwardSpec,
};
pub use infer::{catalog_scores, retrieval_sigmoid, score_target_aware, TargetAwareScores};

use crate::config::RunConfig;
use crate::error::{CoreError, Result};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use unigrf_tensor::{read_tensors, write_tensors, NamedTensor, Real};

/// Layer-norm epsilon used everywhere in the stack.
pub const LN_EPS: f64 = 1e-5;
/// Standard deviation for weight and embedding initialization.
pub const INIT_STD: f64 = 0.02;

/// Static shape of a model; everything a checkpoint needs to rebuild one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    /// Item-embedding rows: real items + the padding row 0.
    pub item_rows: usize,
    pub dim: usize,
    pub heads: usize,
    pub layers: usize,
    /// Maximum history length in items; the token axis holds 2n rows.
    pub n: usize,
}

impl ModelDims {
    pub fn from_config(cfg: &RunConfig, item_rows: usize) -> Self {
        ModelDims {
            item_rows,
            dim: cfg.model.dim,
            heads: cfg.model.heads,
            layers: cfg.model.layers,
            n: cfg.sequence.n,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn token_rows(&self) -> usize {
        2 * self.n
    }

    fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.heads == 0 || self.layers == 0 || self.n == 0 {
            return Err(CoreError::Config("model dims must be positive".into()));
        }
        if !self.dim.is_multiple_of(self.heads) || !self.dim.is_multiple_of(2) {
            return Err(CoreError::Config(format!(
                "dim {} must be even and divisible by heads {}",
                self.dim, self.heads
            )));
        }
        if self.item_rows < 2 {
            return Err(CoreError::Config(
                "catalog must contain at least one item".into(),
            ));
        }
        Ok(())
    }

    /// Total learnable scalars:
    /// d·(|I|+4+2n) + L·(12d² + 9d) + 2d + d²/2 + d + 1.
    pub fn param_count(&self) -> usize {
        let d = self.dim;
        let items = self.item_rows - 1;
        d * (items + 4 + 2 * self.n)
            + self.layers * (12 * d * d + 9 * d)
            + 2 * d
            + d * d / 2
            + d
            + 1
    }
}

/// One named parameter tensor. The buffer sits behind an `Arc` so per-user
/// graphs can borrow it without copies; the trainer regains `&mut` access
/// through [`Params::values_mut`] once those graphs are dropped.
#[derive(Debug, Clone)]
pub struct PTensor<R: Real> {
    pub rows: usize,
    pub cols: usize,
    pub data: Arc<Vec<R>>,
}

/// All parameters, keyed by name. Iteration order (BTreeMap) is stable, which
/// keeps optimizer slots, checkpoints, and gradient collation aligned.
#[derive(Debug, Clone)]
pub struct Params<R: Real> {
    tensors: BTreeMap<String, PTensor<R>>,
}

impl<R: Real> Params<R> {
    pub fn get(&self, name: &str) -> Result<&PTensor<R>> {
        self.tensors
            .get(name)
            .ok_or_else(|| CoreError::Data(format!("unknown parameter `{name}`")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &PTensor<R>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Mutable access to a tensor's values; fails while any graph still holds
    /// a clone of the `Arc` (update-during-forward is a bug, not a race to
    /// win).
    pub fn values_mut(&mut self, name: &str) -> Result<&mut [R]> {
        let t = self
            .tensors
            .get_mut(name)
            .ok_or_else(|| CoreError::Data(format!("unknown parameter `{name}`")))?;
        Arc::get_mut(&mut t.data)
            .map(|v| v.as_mut_slice())
            .ok_or_else(|| {
                CoreError::Numeric(format!(
                    "parameter `{name}` still borrowed by a live graph during update"
                ))
            })
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.values().map(|t| t.data.len()).sum()
    }

    /// Zeroed gradient accumulators matching every tensor's shape.
    pub fn zero_grads(&self) -> BTreeMap<String, Vec<R>> {
        self.tensors
            .iter()
            .map(|(name, t)| (name.clone(), vec![R::ZERO; t.data.len()]))
            .collect()
    }

    /// Pairs every tensor's values with its accumulated gradient for one
    /// optimizer step. Fails if any tensor is still borrowed by a live graph
    /// or lacks a gradient entry.
    pub fn updates<'a>(
        &'a mut self,
        grads: &'a BTreeMap<String, Vec<R>>,
    ) -> Result<Vec<unigrf_tensor::ParamUpdate<'a, R>>> {
        let mut out = Vec::with_capacity(self.tensors.len());
        for (name, t) in self.tensors.iter_mut() {
            let grad = grads
                .get(name)
                .ok_or_else(|| CoreError::Data(format!("no gradient for `{name}`")))?;
            let values = Arc::get_mut(&mut t.data).ok_or_else(|| {
                CoreError::Numeric(format!(
                    "parameter `{name}` still borrowed by a live graph during update"
                ))
            })?;
            out.push(unigrf_tensor::ParamUpdate { name, values, grad });
        }
        Ok(out)
    }
}

/// Model = dims + parameters.
#[derive(Debug, Clone)]
pub struct Model<R: Real> {
    pub dims: ModelDims,
    pub params: Params<R>,
}

/// Deterministic per-tensor stream: different tensors get independent draws,
/// and adding a tensor never shifts another's initialization.
fn init_stream(seed: u64, name: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(b"init");
    hasher.update(name.as_bytes());
    let digest = hasher.finalize();
    let mut s = [0u8; 32];
    s.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(s)
}

/// Standard normal via Box–Muller; uniform draws are in (0, 1].
fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

#[derive(Clone, Copy)]
enum Fill {
    Normal,
    Zeros,
    Ones,
}

impl<R: Real> Model<R> {
    /// Fresh model with N(0, 0.02²) weights/embeddings, unit layer-norm
    /// gains, zero shifts and biases, and zeroed padding rows.
    pub fn new(dims: ModelDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let d = dims.dim;
        let dh = dims.head_dim();
        let mut tensors = BTreeMap::new();
        let mut put = |name: String, rows: usize, cols: usize, fill: Fill| {
            let data: Vec<R> = match fill {
                Fill::Zeros => vec![R::ZERO; rows * cols],
                Fill::Ones => vec![R::ONE; rows * cols],
                Fill::Normal => {
                    let mut rng = init_stream(seed, &name);
                    (0..rows * cols)
                        .map(|_| R::from_f64(INIT_STD * normal(&mut rng)))
                        .collect()
                }
            };
            tensors.insert(
                name,
                PTensor {
                    rows,
                    cols,
                    data: Arc::new(data),
                },
            );
        };

        put("item_embeddings".into(), dims.item_rows, d, Fill::Normal);
        put("behavior_embeddings".into(), 3, d, Fill::Normal);
        put(
            "positional_embeddings".into(),
            dims.token_rows(),
            d,
            Fill::Normal,
        );
        for l in 0..dims.layers {
            for h in 0..dims.heads {
                put(format!("layer{l}/attn/q{h}"), d, dh, Fill::Normal);
                put(format!("layer{l}/attn/k{h}"), d, dh, Fill::Normal);
                put(format!("layer{l}/attn/v{h}"), d, dh, Fill::Normal);
                put(format!("layer{l}/attn/o{h}"), dh, d, Fill::Normal);
            }
            put(format!("layer{l}/ln1/gamma"), 1, d, Fill::Ones);
            put(format!("layer{l}/ln1/beta"), 1, d, Fill::Zeros);
            put(format!("layer{l}/ln2/gamma"), 1, d, Fill::Ones);
            put(format!("layer{l}/ln2/beta"), 1, d, Fill::Zeros);
            put(format!("layer{l}/ffn/w1"), d, 4 * d, Fill::Normal);
            put(format!("layer{l}/ffn/b1"), 1, 4 * d, Fill::Zeros);
            put(format!("layer{l}/ffn/w2"), 4 * d, d, Fill::Normal);
            put(format!("layer{l}/ffn/b2"), 1, d, Fill::Zeros);
        }
        put("final_ln/gamma".into(), 1, d, Fill::Ones);
        put("final_ln/beta".into(), 1, d, Fill::Zeros);
        put("rank_head/w1".into(), d, d / 2, Fill::Normal);
        put("rank_head/b1".into(), 1, d / 2, Fill::Zeros);
        put("rank_head/w2".into(), d / 2, 1, Fill::Normal);
        put("rank_head/b2".into(), 1, 1, Fill::Zeros);

        let mut model = Model {
            dims,
            params: Params { tensors },
        };
        // Padding rows stay zero: row 0 of items, row 0 of behaviors.
        for name in ["item_embeddings", "behavior_embeddings"] {
            let values = model.params.values_mut(name)?;
            values[..d].fill(R::ZERO);
        }
        Ok(model)
    }

    /// Writes all parameters plus reconstruction metadata to a container.
    pub fn save(&self, path: &Path, epoch: usize, metric: f64) -> Result<()> {
        let mut tensors: Vec<NamedTensor> = self
            .params
            .iter()
            .map(|(name, t)| NamedTensor {
                name: name.to_string(),
                shape: vec![t.rows, t.cols],
                data: t.data.iter().map(|&x| x.to_f64()).collect(),
            })
            .collect();
        tensors.push(NamedTensor {
            name: "meta/dims".into(),
            shape: vec![5],
            data: vec![
                self.dims.item_rows as f64,
                self.dims.dim as f64,
                self.dims.heads as f64,
                self.dims.layers as f64,
                self.dims.n as f64,
            ],
        });
        tensors.push(NamedTensor {
            name: "meta/state".into(),
            shape: vec![2],
            data: vec![epoch as f64, metric],
        });
        write_tensors(path, &tensors)?;
        Ok(())
    }

    /// Loads a checkpoint, validating the tensor inventory against a freshly
    /// shaped model. Returns the model plus (epoch, metric) metadata.
    pub fn load(path: &Path) -> Result<(Self, usize, f64)> {
        let tensors = read_tensors(path)?;
        let find = |name: &str| -> Result<&NamedTensor> {
            tensors
                .iter()
                .find(|t| t.name == name)
                .ok_or_else(|| CoreError::Data(format!("checkpoint missing tensor `{name}`")))
        };
        let meta = find("meta/dims")?;
        if meta.data.len() != 5 {
            return Err(CoreError::Data("checkpoint meta/dims malformed".into()));
        }
        let dims = ModelDims {
            item_rows: meta.data[0] as usize,
            dim: meta.data[1] as usize,
            heads: meta.data[2] as usize,
            layers: meta.data[3] as usize,
            n: meta.data[4] as usize,
        };
        dims.validate()?;
        let state = find("meta/state")?;
        let (epoch, metric) = (state.data[0] as usize, state.data[1]);

        // Shape a skeleton to learn the expected inventory, then fill it.
        let mut model = Model::<R>::new(dims, 0)?;
        let names: Vec<String> = model.params.names().map(str::to_string).collect();
        for name in &names {
            let expect = model.params.get(name)?;
            let (rows, cols) = (expect.rows, expect.cols);
            let t = find(name)?;
            if t.shape != vec![rows, cols] {
                return Err(CoreError::Data(format!(
                    "checkpoint `{name}` has shape {:?}, expected [{rows}, {cols}]",
                    t.shape
                )));
            }
            let values = model.params.values_mut(name)?;
            for (dst, &src) in values.iter_mut().zip(&t.data) {
                *dst = R::from_f64(src);
            }
        }
        let extras: Vec<&str> = tensors
            .iter()
            .map(|t| t.name.as_str())
            .filter(|n| !n.starts_with("meta/") && !names.iter().any(|k| k == n))
            .collect();
        if !extras.is_empty() {
            return Err(CoreError::Data(format!(
                "checkpoint holds unexpected tensors: {extras:?}"
            )));
        }
        Ok((model, epoch, metric))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_dims() -> ModelDims {
        ModelDims {
            item_rows: 7,
            dim: 8,
            heads: 2,
            layers: 2,
            n: 5,
        }
    }

    #[test]
    fn param_count_formula_matches_inventory() {
        let dims = tiny_dims();
        let model: Model<f64> = Model::new(dims, 1).unwrap();
        assert_eq!(model.params.scalar_count(), dims.param_count());
        // d(I+4+2n) = 8·(6+4+10) = 160; L(12d²+9d) = 2·(768+72) = 1680;
        // 2d = 16; d²/2 = 32; d = 8; +1 → 1897.
        assert_eq!(dims.param_count(), 1897);
    }

    #[test]
    fn init_is_deterministic_and_order_free() {
        let a: Model<f64> = Model::new(tiny_dims(), 9).unwrap();
        let b: Model<f64> = Model::new(tiny_dims(), 9).unwrap();
        for (name, t) in a.params.iter() {
            assert_eq!(
                t.data.as_slice(),
                b.params.get(name).unwrap().data.as_slice()
            );
        }
        let c: Model<f64> = Model::new(tiny_dims(), 10).unwrap();
        let ie_a = a.params.get("item_embeddings").unwrap();
        let ie_c = c.params.get("item_embeddings").unwrap();
        assert_ne!(ie_a.data.as_slice(), ie_c.data.as_slice());
    }

    #[test]
    fn padding_rows_are_zero_and_lns_are_identity() {
        let model: Model<f64> = Model::new(tiny_dims(), 3).unwrap();
        let d = model.dims.dim;
        assert!(model.params.get("item_embeddings").unwrap().data[..d]
            .iter()
            .all(|&x| x == 0.0));
        assert!(model.params.get("behavior_embeddings").unwrap().data[..d]
            .iter()
            .all(|&x| x == 0.0));
        assert!(model
            .params
            .get("layer0/ln1/gamma")
            .unwrap()
            .data
            .iter()
            .all(|&x| x == 1.0));
        assert!(model
            .params
            .get("rank_head/b1")
            .unwrap()
            .data
            .iter()
            .all(|&x| x == 0.0));
    }

    #[test]
    fn checkpoint_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model: Model<f64> = Model::new(tiny_dims(), 5).unwrap();
        model.save(&path, 17, 0.25).unwrap();
        let (loaded, epoch, metric) = Model::<f64>::load(&path).unwrap();
        assert_eq!(epoch, 17);
        assert_eq!(metric, 0.25);
        assert_eq!(loaded.dims, model.dims);
        for (name, t) in model.params.iter() {
            assert_eq!(
                t.data.as_slice(),
                loaded.params.get(name).unwrap().data.as_slice(),
                "{name}"
            );
        }
    }

    #[test]
    fn values_mut_fails_while_a_graph_borrows() {
        let mut model: Model<f64> = Model::new(tiny_dims(), 5).unwrap();
        let hold = model.params.get("rank_head/w2").unwrap().data.clone();
        assert!(model.params.values_mut("rank_head/w2").is_err());
        drop(hold);
        assert!(model.params.values_mut("rank_head/w2").is_ok());
    }

    #[test]
    fn normal_draws_match_moments() {
        let mut rng = init_stream(0, "probe");
        let samples: Vec<f64> = (0..20_000).map(|_| normal(&mut rng)).collect();
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / samples.len() as f64;
        assert!(mean.abs() < 0.03, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }
}
