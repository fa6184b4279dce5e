//! Chronological sequence assembly with leave-one-out splits.

use super::{Catalog, InteractionRecord, SequenceSet, UserSequence};
use crate::error::{CoreError, Result};
use std::collections::HashMap;

/// Groups records per user, orders them chronologically (file order breaks
/// timestamp ties), holds out the last interaction as test and the
/// second-to-last as validation, then left-pads the remaining training
/// prefix to length n keeping its most recent n interactions. Users with
/// fewer than three interactions are dropped.
pub fn build_sequences(
    records: &[InteractionRecord],
    catalog: &Catalog,
    n: usize,
) -> Result<SequenceSet> {
    if n == 0 {
        return Err(CoreError::Config(
            "sequence length n must be positive".into(),
        ));
    }
    let mut per_user: HashMap<u64, Vec<&InteractionRecord>> = HashMap::new();
    for rec in records {
        per_user.entry(rec.user).or_default().push(rec);
    }

    let mut sequences = Vec::new();
    // Iterate users in catalog (ascending-id) order for a deterministic store.
    for &user in catalog.user_ids() {
        let Some(recs) = per_user.get_mut(&user) else {
            continue;
        };
        if recs.len() < 3 {
            continue;
        }
        // Stable: equal timestamps keep file order.
        recs.sort_by_key(|r| r.timestamp);

        let to_index = |rec: &InteractionRecord| -> Result<u32> {
            catalog.item_to_index(rec.item).ok_or_else(|| {
                CoreError::Data(format!("item id {} missing from catalog", rec.item))
            })
        };

        let test = recs[recs.len() - 1];
        let valid = recs[recs.len() - 2];
        let train = &recs[..recs.len() - 2];

        // Exclusion base spans the full history, including interactions the
        // window truncates away.
        let mut observed: Vec<u32> = Vec::with_capacity(recs.len());
        for rec in recs.iter() {
            observed.push(to_index(rec)?);
        }
        observed.sort_unstable();
        observed.dedup();

        let window = &train[train.len().saturating_sub(n)..];
        let pad = n - window.len();
        let mut items = vec![0u32; n];
        let mut behaviors = vec![0u8; n];
        let mut valid_mask = vec![false; n];
        for (k, rec) in window.iter().enumerate() {
            items[pad + k] = to_index(rec)?;
            behaviors[pad + k] = rec.label;
            valid_mask[pad + k] = true;
        }

        let user_index = catalog
            .user_to_index(user)
            .ok_or_else(|| CoreError::Data(format!("user id {user} missing from catalog")))?;

        sequences.push(UserSequence {
            user,
            user_index,
            items,
            behaviors,
            valid_mask,
            valid_item: to_index(valid)?,
            valid_label: valid.label,
            test_item: to_index(test)?,
            test_label: test.label,
            observed,
        });
    }

    if sequences.is_empty() {
        return Err(CoreError::Data(
            "no user has the minimum three interactions".into(),
        ));
    }
    Ok(SequenceSet {
        n,
        catalog: catalog.clone(),
        sequences,
    })
}
