//! Synthetic interaction corpus with planted, learnable structure.
//!
//! Each user favors one genre and mostly walks its items in cyclic order, so
//! the next item is predictable from the current one; clicks concentrate on
//! the favored genre, so click probability is predictable from user history
//! plus the candidate. Both model heads therefore have signal well above
//! chance, while noise keeps the problem non-trivial.

use super::sampling::{user_rng, RngPurpose};
use super::InteractionRecord;
use crate::error::{CoreError, Result};
use rand::Rng;
use std::path::Path;

/// Shape and noise knobs for the generator.
#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub users: u32,
    pub genres: u32,
    pub items_per_genre: u32,
    /// Inclusive bounds on interactions per user.
    pub min_len: u32,
    pub max_len: u32,
    /// Probability a step wanders off-genre.
    pub noise: f64,
    /// Probability an in-genre step follows the cyclic successor.
    pub serial: f64,
    pub click_prob_in_genre: f64,
    pub click_prob_off_genre: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            users: 64,
            genres: 4,
            items_per_genre: 30,
            min_len: 24,
            max_len: 40,
            noise: 0.1,
            serial: 0.85,
            click_prob_in_genre: 0.9,
            click_prob_off_genre: 0.1,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn item_count(&self) -> u32 {
        self.genres * self.items_per_genre
    }

    fn validate(&self) -> Result<()> {
        if self.users == 0 || self.genres < 2 || self.items_per_genre == 0 {
            return Err(CoreError::Config(
                "synthetic spec needs users ≥ 1, genres ≥ 2, items_per_genre ≥ 1".into(),
            ));
        }
        if self.min_len < 3 || self.max_len < self.min_len {
            return Err(CoreError::Config(
                "synthetic spec needs 3 ≤ min_len ≤ max_len".into(),
            ));
        }
        for p in [
            self.noise,
            self.serial,
            self.click_prob_in_genre,
            self.click_prob_off_genre,
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(CoreError::Config(
                    "synthetic probabilities must be in [0,1]".into(),
                ));
            }
        }
        Ok(())
    }
}

/// External item id of slot `pos` within `genre` (1-based ids).
fn item_id(spec: &SynthSpec, genre: u32, pos: u32) -> u64 {
    (genre * spec.items_per_genre + pos + 1) as u64
}

/// Generates the full corpus deterministically from `SynthSpec::seed`. Records
/// come out grouped per user in chronological order.
pub fn generate(spec: &SynthSpec) -> Result<Vec<InteractionRecord>> {
    spec.validate()?;
    let mut records = Vec::new();
    for u in 0..spec.users {
        let mut rng = user_rng(spec.seed, u, RngPurpose::Synth, 0);
        let genre = u % spec.genres;
        let len = rng.gen_range(spec.min_len..=spec.max_len);
        let mut pos = rng.gen_range(0..spec.items_per_genre);
        for t in 0..len {
            let off_genre = rng.gen_bool(spec.noise);
            let (item, click_prob) = if off_genre {
                let mut other = rng.gen_range(0..spec.genres - 1);
                if other >= genre {
                    other += 1;
                }
                let p = rng.gen_range(0..spec.items_per_genre);
                (item_id(spec, other, p), spec.click_prob_off_genre)
            } else {
                pos = if rng.gen_bool(spec.serial) {
                    (pos + 1) % spec.items_per_genre
                } else {
                    rng.gen_range(0..spec.items_per_genre)
                };
                (item_id(spec, genre, pos), spec.click_prob_in_genre)
            };
            let click = rng.gen_bool(click_prob);
            let rating = if click {
                4 + u8::from(rng.gen_bool(0.5))
            } else {
                1 + rng.gen_range(0..3u8)
            };
            records.push(InteractionRecord {
                user: (u + 1) as u64,
                item,
                rating,
                timestamp: t as i64,
                label: u8::from(rating > 3),
            });
        }
    }
    Ok(records)
}

/// Writes records as `user::item::rating::timestamp` lines.
pub fn write_dat(records: &[InteractionRecord], path: &Path) -> Result<()> {
    let mut body = String::new();
    for r in records {
        body.push_str(&format!(
            "{}::{}::{}::{}\n",
            r.user, r.item, r.rating, r.timestamp
        ));
    }
    std::fs::write(path, body).map_err(|e| CoreError::io(format!("write {}", path.display()), e))
}
