use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use super::{ClientDataset, Record, Split};
use crate::error::{Error, Result};
use crate::rng::stream;

/// Indices (into `dataset.records`) of the evaluation pool chosen as queries.
///
/// For every identity the first shuffled record of each camera stays in the
/// gallery, so every query keeps a cross-camera match. Identities seen by a
/// single camera never contribute queries.
fn choose_queries(dataset: &ClientDataset, query_fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&query_fraction) {
        return Err(Error::InvalidArgument(format!(
            "query_fraction must lie in [0, 1], got {query_fraction}"
        )));
    }
    let mut by_identity: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, r) in dataset.records.iter().enumerate() {
        if r.split != Split::Train {
            by_identity.entry(r.identity_id).or_default().push(i);
        }
    }
    let mut rng = stream(seed, &[0x5B17, dataset.client_id as u64]);
    let mut queries = Vec::new();
    for members in by_identity.values() {
        let mut shuffled = members.clone();
        shuffled.shuffle(&mut rng);
        let mut seen_cameras = Vec::new();
        let mut eligible = Vec::new();
        for &i in &shuffled {
            let cam = dataset.records[i].camera_id;
            if seen_cameras.contains(&cam) {
                eligible.push(i);
            } else {
                seen_cameras.push(cam);
            }
        }
        if seen_cameras.len() < 2 {
            continue;
        }
        let target = (query_fraction * members.len() as f64).round() as usize;
        queries.extend(eligible.into_iter().take(target));
    }
    queries.sort_unstable();
    Ok(queries)
}

/// Splits the non-training records into `(query, gallery)`.
pub fn split_eval(dataset: &ClientDataset, query_fraction: f64, seed: u64) -> Result<(Vec<Record>, Vec<Record>)> {
    let queries = choose_queries(dataset, query_fraction, seed)?;
    let mut query = Vec::with_capacity(queries.len());
    let mut gallery = Vec::new();
    let mut next = queries.iter().peekable();
    for (i, r) in dataset.records.iter().enumerate() {
        if r.split == Split::Train {
            continue;
        }
        let mut r = r.clone();
        if next.peek() == Some(&&i) {
            next.next();
            r.split = Split::Query;
            query.push(r);
        } else {
            r.split = Split::Gallery;
            gallery.push(r);
        }
    }
    Ok((query, gallery))
}

/// Re-tags the dataset's evaluation records in place according to [`split_eval`].
pub fn assign_eval_split(dataset: &mut ClientDataset, query_fraction: f64, seed: u64) -> Result<()> {
    let queries = choose_queries(dataset, query_fraction, seed)?;
    for r in dataset.records.iter_mut().filter(|r| r.split != Split::Train) {
        r.split = Split::Gallery;
    }
    for i in queries {
        dataset.records[i].split = Split::Query;
    }
    Ok(())
}
