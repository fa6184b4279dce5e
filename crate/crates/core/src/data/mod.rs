//! Interaction ingestion and sequence preparation: parse MovieLens-style
//! logs, binarize feedback, build fixed-length chronological sequences with
//! leave-one-out splits, sample negatives, and persist a processed store.

mod parse;
mod sampling;
mod sequences;
mod store;
pub mod synth;

pub use parse::{parse_interactions, InputFormat, ParseOutput, ParseStats};
pub use sampling::{sample_uniform_negatives, user_rng, RngPurpose};
pub use sequences::build_sequences;
pub use store::{load_store, read_manifest, write_store, Manifest, StoreWriteOutcome};

use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// One parsed interaction with its binarized click label (1 iff rating > 3).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InteractionRecord {
    pub user: u64,
    pub item: u64,
    pub rating: u8,
    pub timestamp: i64,
    pub label: u8,
}

/// External-id ↔ dense-index bijections. Dense item index 0 is reserved for
/// padding and never assigned to a real item; real items get 1..=item_count
/// in ascending external-id order, users 0..user_count likewise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    item_ids: Vec<u64>,
    user_ids: Vec<u64>,
    #[serde(skip)]
    item_index: HashMap<u64, u32>,
    #[serde(skip)]
    user_index: HashMap<u64, u32>,
}

impl Catalog {
    pub fn new(mut item_ids: Vec<u64>, mut user_ids: Vec<u64>) -> Self {
        item_ids.sort_unstable();
        item_ids.dedup();
        user_ids.sort_unstable();
        user_ids.dedup();
        let mut cat = Catalog {
            item_ids,
            user_ids,
            item_index: HashMap::new(),
            user_index: HashMap::new(),
        };
        cat.rebuild_maps();
        cat
    }

    /// Restores the lookup maps after deserialization.
    pub fn rebuild_maps(&mut self) {
        self.item_index = self
            .item_ids
            .iter()
            .enumerate()
            .map(|(i, &id)| (id, (i + 1) as u32))
            .collect();
        self.user_index = self
            .user_ids
            .iter()
            .enumerate()
            .map(|(i, &id)| (id, i as u32))
            .collect();
    }

    /// Number of real items (padding excluded).
    pub fn item_count(&self) -> u32 {
        self.item_ids.len() as u32
    }

    pub fn user_count(&self) -> u32 {
        self.user_ids.len() as u32
    }

    /// Rows of the item embedding table: real items + the padding row.
    pub fn item_rows(&self) -> usize {
        self.item_ids.len() + 1
    }

    pub fn item_to_index(&self, id: u64) -> Option<u32> {
        self.item_index.get(&id).copied()
    }

    pub fn user_to_index(&self, id: u64) -> Option<u32> {
        self.user_index.get(&id).copied()
    }

    pub fn index_to_item(&self, ix: u32) -> Option<u64> {
        if ix == 0 {
            return None; // padding
        }
        self.item_ids.get(ix as usize - 1).copied()
    }

    pub fn item_ids(&self) -> &[u64] {
        &self.item_ids
    }

    pub fn user_ids(&self) -> &[u64] {
        &self.user_ids
    }
}

/// Which held-out interaction an evaluation forward targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Valid,
    Test,
}

impl std::str::FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}` (use valid or test)")),
        }
    }
}

/// One user's fixed-length training sequence plus the leave-one-out holdouts.
/// `items`/`behaviors`/`valid_mask` are left-padded to length n: padding
/// positions hold item 0 / behavior 0 / false and precede all valid ones.
#[derive(Debug, Clone, PartialEq)]
pub struct UserSequence {
    pub user: u64,
    /// Dense index into the catalog's user list; seeds this user's RNG streams.
    pub user_index: u32,
    pub items: Vec<u32>,
    pub behaviors: Vec<u8>,
    pub valid_mask: Vec<bool>,
    pub valid_item: u32,
    pub valid_label: u8,
    pub test_item: u32,
    pub test_label: u8,
    /// Every item the user interacted with (training positions including any
    /// truncated away, plus both holdouts), sorted ascending; the negative
    /// sampler's exclusion base.
    pub observed: Vec<u32>,
}

impl UserSequence {
    pub fn n(&self) -> usize {
        self.items.len()
    }

    /// Number of valid (non-padding) training positions.
    pub fn valid_count(&self) -> usize {
        self.valid_mask.iter().filter(|&&m| m).count()
    }

    /// Valid training positions, chronological: (items, behavior labels).
    pub fn train_window(&self) -> (Vec<u32>, Vec<u8>) {
        let start = self.n() - self.valid_count();
        (
            self.items[start..].to_vec(),
            self.behaviors[start..].to_vec(),
        )
    }

    /// Input window and target for an evaluation forward. The validation
    /// forward sees only training positions; the test forward additionally
    /// sees the validation interaction (windowed back to the last n).
    pub fn eval_window(&self, split: Split) -> (Vec<u32>, Vec<u8>, u32, u8) {
        let (mut items, mut behaviors) = self.train_window();
        match split {
            Split::Valid => (items, behaviors, self.valid_item, self.valid_label),
            Split::Test => {
                items.push(self.valid_item);
                behaviors.push(self.valid_label);
                if items.len() > self.n() {
                    items.remove(0);
                    behaviors.remove(0);
                }
                (items, behaviors, self.test_item, self.test_label)
            }
        }
    }
}

/// The processed dataset: catalog plus all surviving user sequences, in
/// ascending user-id order.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSet {
    pub n: usize,
    pub catalog: Catalog,
    pub sequences: Vec<UserSequence>,
}
