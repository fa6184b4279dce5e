//! Processed-dataset persistence: a tensor container with the padded
//! sequences plus a JSON manifest of provenance stats and a content hash.

use super::{Catalog, SequenceSet, UserSequence};
use crate::error::{CoreError, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;
use unigrf_tensor::{read_tensors, write_tensors, NamedTensor};

const STORE_VERSION: u32 = 1;
const CONTAINER_FILE: &str = "sequences.bin";
const MANIFEST_FILE: &str = "manifest.json";

/// Summary of a prepared store; `content_hash` covers the container bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub source_format: String,
    pub n: usize,
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
    pub malformed: usize,
    pub mean_history_len: f64,
    pub sequences: usize,
    pub content_hash: String,
}

/// Whether `write_store` had to touch the directory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StoreWriteOutcome {
    Written,
    /// An existing store already holds byte-identical content.
    Unchanged,
}

fn push_matrix(out: &mut Vec<NamedTensor>, name: &str, rows: usize, cols: usize, data: Vec<f64>) {
    out.push(NamedTensor {
        name: name.to_string(),
        shape: vec![rows, cols],
        data,
    });
}

fn push_vector(out: &mut Vec<NamedTensor>, name: &str, data: Vec<f64>) {
    let len = data.len();
    out.push(NamedTensor {
        name: name.to_string(),
        shape: vec![len],
        data,
    });
}

fn encode(set: &SequenceSet) -> Vec<NamedTensor> {
    let s = set.sequences.len();
    let n = set.n;
    let mut tensors = Vec::new();

    push_vector(
        &mut tensors,
        "catalog/item_ids",
        set.catalog.item_ids().iter().map(|&x| x as f64).collect(),
    );
    push_vector(
        &mut tensors,
        "catalog/user_ids",
        set.catalog.user_ids().iter().map(|&x| x as f64).collect(),
    );
    push_vector(&mut tensors, "meta/n", vec![n as f64]);

    let mut items = Vec::with_capacity(s * n);
    let mut behaviors = Vec::with_capacity(s * n);
    let mut mask = Vec::with_capacity(s * n);
    let mut user_index = Vec::with_capacity(s);
    let mut valid_item = Vec::with_capacity(s);
    let mut valid_label = Vec::with_capacity(s);
    let mut test_item = Vec::with_capacity(s);
    let mut test_label = Vec::with_capacity(s);
    let mut observed_offsets = Vec::with_capacity(s + 1);
    let mut observed_values = Vec::new();
    observed_offsets.push(0.0);
    for seq in &set.sequences {
        items.extend(seq.items.iter().map(|&x| x as f64));
        behaviors.extend(seq.behaviors.iter().map(|&x| x as f64));
        mask.extend(seq.valid_mask.iter().map(|&m| f64::from(u8::from(m))));
        user_index.push(seq.user_index as f64);
        valid_item.push(seq.valid_item as f64);
        valid_label.push(seq.valid_label as f64);
        test_item.push(seq.test_item as f64);
        test_label.push(seq.test_label as f64);
        observed_values.extend(seq.observed.iter().map(|&x| x as f64));
        observed_offsets.push(observed_values.len() as f64);
    }
    push_matrix(&mut tensors, "seq/items", s, n, items);
    push_matrix(&mut tensors, "seq/behaviors", s, n, behaviors);
    push_matrix(&mut tensors, "seq/valid_mask", s, n, mask);
    push_vector(&mut tensors, "seq/user_index", user_index);
    push_vector(&mut tensors, "seq/valid_item", valid_item);
    push_vector(&mut tensors, "seq/valid_label", valid_label);
    push_vector(&mut tensors, "seq/test_item", test_item);
    push_vector(&mut tensors, "seq/test_label", test_label);
    push_vector(&mut tensors, "seq/observed_offsets", observed_offsets);
    push_vector(&mut tensors, "seq/observed_values", observed_values);
    tensors
}

/// Serializes the set under `dir`, skipping the write when an existing store
/// is already byte-identical (same content hash).
pub fn write_store(
    dir: &Path,
    set: &SequenceSet,
    source_format: &str,
    interactions: usize,
    malformed: usize,
    mean_history_len: f64,
) -> Result<StoreWriteOutcome> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CoreError::io(format!("create {}", dir.display()), e))?;
    let tmp = dir.join(format!("{CONTAINER_FILE}.tmp"));
    write_tensors(&tmp, &encode(set))?;
    let bytes =
        std::fs::read(&tmp).map_err(|e| CoreError::io(format!("read {}", tmp.display()), e))?;
    let content_hash = hex_digest(&bytes);

    let manifest_path = dir.join(MANIFEST_FILE);
    if let Ok(text) = std::fs::read_to_string(&manifest_path) {
        if let Ok(existing) = serde_json::from_str::<Manifest>(&text) {
            if existing.content_hash == content_hash && existing.version == STORE_VERSION {
                let _ = std::fs::remove_file(&tmp);
                return Ok(StoreWriteOutcome::Unchanged);
            }
        }
    }

    let container_path = dir.join(CONTAINER_FILE);
    std::fs::rename(&tmp, &container_path)
        .map_err(|e| CoreError::io(format!("rename to {}", container_path.display()), e))?;
    let manifest = Manifest {
        version: STORE_VERSION,
        source_format: source_format.to_string(),
        n: set.n,
        users: set.catalog.user_count() as usize,
        items: set.catalog.item_count() as usize,
        interactions,
        malformed,
        mean_history_len,
        sequences: set.sequences.len(),
        content_hash,
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| CoreError::Data(format!("manifest encode: {e}")))?;
    std::fs::write(&manifest_path, json)
        .map_err(|e| CoreError::io(format!("write {}", manifest_path.display()), e))?;
    Ok(StoreWriteOutcome::Written)
}

/// Reads just the manifest of a prepared store.
pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&manifest_path)
        .map_err(|e| CoreError::io(format!("read {}", manifest_path.display()), e))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| CoreError::Data(format!("{}: {e}", manifest_path.display())))?;
    if manifest.version != STORE_VERSION {
        return Err(CoreError::Data(format!(
            "store version {} unsupported (expected {STORE_VERSION}); re-run prepare",
            manifest.version
        )));
    }
    Ok(manifest)
}

/// Loads a prepared store, verifying the manifest's content hash against the
/// container bytes before decoding.
pub fn load_store(dir: &Path) -> Result<(SequenceSet, Manifest)> {
    let manifest = read_manifest(dir)?;

    let container_path = dir.join(CONTAINER_FILE);
    let bytes = std::fs::read(&container_path)
        .map_err(|e| CoreError::io(format!("read {}", container_path.display()), e))?;
    let actual = hex_digest(&bytes);
    if actual != manifest.content_hash {
        return Err(CoreError::Data(format!(
            "{}: content hash mismatch (manifest {}, file {actual}); re-run prepare",
            container_path.display(),
            manifest.content_hash
        )));
    }

    let tensors = read_tensors(&container_path)?;
    let set = decode(&tensors, &manifest)?;
    Ok((set, manifest))
}

fn decode(tensors: &[NamedTensor], manifest: &Manifest) -> Result<SequenceSet> {
    let find = |name: &str| -> Result<&NamedTensor> {
        tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| CoreError::Data(format!("store missing tensor `{name}`")))
    };
    let as_u32 = |t: &NamedTensor| -> Vec<u32> { t.data.iter().map(|&x| x as u32).collect() };
    let as_u64 = |t: &NamedTensor| -> Vec<u64> { t.data.iter().map(|&x| x as u64).collect() };

    let n = find("meta/n")?.data[0] as usize;
    if n != manifest.n {
        return Err(CoreError::Data(format!(
            "store n = {n} disagrees with manifest n = {}",
            manifest.n
        )));
    }
    let catalog = Catalog::new(
        as_u64(find("catalog/item_ids")?),
        as_u64(find("catalog/user_ids")?),
    );

    let items_t = find("seq/items")?;
    if items_t.shape.len() != 2 || items_t.shape[1] != n {
        return Err(CoreError::Data(format!(
            "seq/items has shape {:?}, expected [*, {n}]",
            items_t.shape
        )));
    }
    let s = items_t.shape[0];
    let items = as_u32(items_t);
    let behaviors = as_u32(find("seq/behaviors")?);
    let mask = as_u32(find("seq/valid_mask")?);
    let user_index = as_u32(find("seq/user_index")?);
    let valid_item = as_u32(find("seq/valid_item")?);
    let valid_label = as_u32(find("seq/valid_label")?);
    let test_item = as_u32(find("seq/test_item")?);
    let test_label = as_u32(find("seq/test_label")?);
    let offsets = as_u32(find("seq/observed_offsets")?);
    let observed_values = as_u32(find("seq/observed_values")?);

    if behaviors.len() != s * n
        || mask.len() != s * n
        || user_index.len() != s
        || valid_item.len() != s
        || test_item.len() != s
        || offsets.len() != s + 1
    {
        return Err(CoreError::Data("store tensor lengths inconsistent".into()));
    }

    let mut sequences = Vec::with_capacity(s);
    for i in 0..s {
        let ui = user_index[i];
        let user = *catalog
            .user_ids()
            .get(ui as usize)
            .ok_or_else(|| CoreError::Data(format!("user_index {ui} out of range")))?;
        let (lo, hi) = (offsets[i] as usize, offsets[i + 1] as usize);
        if hi > observed_values.len() || lo > hi {
            return Err(CoreError::Data("observed offsets out of range".into()));
        }
        sequences.push(UserSequence {
            user,
            user_index: ui,
            items: items[i * n..(i + 1) * n].to_vec(),
            behaviors: behaviors[i * n..(i + 1) * n]
                .iter()
                .map(|&x| x as u8)
                .collect(),
            valid_mask: mask[i * n..(i + 1) * n].iter().map(|&x| x != 0).collect(),
            valid_item: valid_item[i],
            valid_label: valid_label[i] as u8,
            test_item: test_item[i],
            test_label: test_label[i] as u8,
            observed: observed_values[lo..hi].to_vec(),
        });
    }
    Ok(SequenceSet {
        n,
        catalog,
        sequences,
    })
}

fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
