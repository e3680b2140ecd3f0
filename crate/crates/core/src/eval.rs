//! Retrieval metrics (CMC, mAP), clustering diagnostics and ranked-list export.

use std::collections::HashMap;
use std::fmt::Write as _;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::clustering::ClusterAssignment;
use crate::data::ImageMeta;
use crate::error::{Error, Result};

pub const CMC_RANKS: [usize; 3] = [1, 5, 10];

/// Gallery ordering for one query.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryRanking {
    pub query_index: usize,
    /// Gallery indices by descending cosine similarity, ties by index.
    pub gallery: Vec<usize>,
    /// `matches[r]` is true when `gallery[r]` shares the query identity.
    pub matches: Vec<bool>,
}

impl QueryRanking {
    pub fn has_match(&self) -> bool {
        self.matches.iter().any(|&m| m)
    }

    /// Mean of precision@r over the positions `r` of true matches.
    pub fn average_precision(&self) -> Option<f64> {
        let mut hits = 0usize;
        let mut sum = 0.0;
        for (r, &m) in self.matches.iter().enumerate() {
            if m {
                hits += 1;
                sum += hits as f64 / (r + 1) as f64;
            }
        }
        (hits > 0).then(|| sum / hits as f64)
    }

    fn first_match(&self) -> Option<usize> {
        self.matches.iter().position(|&m| m)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RankingResult {
    pub queries: Vec<QueryRanking>,
    /// Queries whose filtered gallery was empty.
    pub skipped: Vec<usize>,
}

impl RankingResult {
    /// Queries that have at least one true match; only these enter CMC/mAP.
    pub fn scored(&self) -> impl Iterator<Item = &QueryRanking> {
        self.queries.iter().filter(|q| q.has_match())
    }

    pub fn num_scored(&self) -> usize {
        self.scored().count()
    }
}

/// Ranks the gallery for each query. Gallery entries sharing both identity
/// and camera with the query are removed first.
pub fn rank(
    query: ArrayView2<'_, f64>,
    gallery: ArrayView2<'_, f64>,
    query_meta: &[ImageMeta],
    gallery_meta: &[ImageMeta],
) -> Result<RankingResult> {
    if query.nrows() != query_meta.len() || gallery.nrows() != gallery_meta.len() {
        return Err(Error::Shape("metadata length does not match embeddings".into()));
    }
    if query.nrows() > 0 && gallery.nrows() > 0 && query.ncols() != gallery.ncols() {
        return Err(Error::Shape("query and gallery embedding widths differ".into()));
    }
    let mut result = RankingResult::default();
    for (qi, qm) in query_meta.iter().enumerate() {
        let mut order: Vec<usize> = (0..gallery_meta.len())
            .filter(|&g| {
                let gm = &gallery_meta[g];
                !(gm.identity_id == qm.identity_id && gm.camera_id == qm.camera_id)
            })
            .collect();
        if order.is_empty() {
            result.skipped.push(qi);
            continue;
        }
        // Per-pair dot products: a pair's score must not depend on the
        // gallery size, as a blocked matrix product's rounding can.
        let q = query.row(qi);
        let row: Vec<f64> = (0..gallery_meta.len()).map(|g| q.dot(&gallery.row(g))).collect();
        order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        let matches = order
            .iter()
            .map(|&g| gallery_meta[g].identity_id == qm.identity_id)
            .collect();
        result.queries.push(QueryRanking {
            query_index: qi,
            gallery: order,
            matches,
        });
    }
    Ok(result)
}

/// Fraction of scored queries with a true match in the top `k`, for each `k`.
pub fn cmc(result: &RankingResult, ks: &[usize]) -> Vec<f64> {
    let firsts: Vec<usize> = result.scored().filter_map(QueryRanking::first_match).collect();
    ks.iter()
        .map(|&k| {
            if firsts.is_empty() {
                0.0
            } else {
                firsts.iter().filter(|&&r| r < k).count() as f64 / firsts.len() as f64
            }
        })
        .collect()
}

/// Mean average precision over scored queries.
pub fn mean_average_precision(result: &RankingResult) -> f64 {
    let aps: Vec<f64> = result.scored().filter_map(QueryRanking::average_precision).collect();
    if aps.is_empty() {
        0.0
    } else {
        aps.iter().sum::<f64>() / aps.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub rank1: f64,
    pub rank5: f64,
    pub rank10: f64,
    #[serde(rename = "mAP")]
    pub map: f64,
    pub queries: usize,
}

impl MetricsRecord {
    pub fn from_ranking(result: &RankingResult) -> Self {
        let c = cmc(result, &CMC_RANKS);
        Self {
            rank1: c[0],
            rank5: c[1],
            rank10: c[2],
            map: mean_average_precision(result),
            queries: result.num_scored(),
        }
    }

    /// Unweighted mean over clients.
    pub fn macro_average(records: &[MetricsRecord]) -> Self {
        if records.is_empty() {
            return Self::default();
        }
        let n = records.len() as f64;
        let mean = |f: fn(&MetricsRecord) -> f64| records.iter().map(f).sum::<f64>() / n;
        Self {
            rank1: mean(|r| r.rank1),
            rank5: mean(|r| r.rank5),
            rank10: mean(|r| r.rank10),
            map: mean(|r| r.map),
            queries: records.iter().map(|r| r.queries).sum(),
        }
    }
}

/// Evaluates one client: rank, then CMC/mAP.
pub fn evaluate(
    query: ArrayView2<'_, f64>,
    gallery: ArrayView2<'_, f64>,
    query_meta: &[ImageMeta],
    gallery_meta: &[ImageMeta],
) -> Result<(MetricsRecord, RankingResult)> {
    let ranking = rank(query, gallery, query_meta, gallery_meta)?;
    Ok((MetricsRecord::from_ranking(&ranking), ranking))
}

/// Top-`depth` ranked lists as CSV `query_index,rank,gallery_index,is_match`
/// with 1-based ranks.
pub fn ranklist_csv(result: &RankingResult, depth: usize) -> String {
    let mut out = String::from("query_index,rank,gallery_index,is_match\n");
    for q in &result.queries {
        for (r, (&g, &m)) in q.gallery.iter().zip(&q.matches).take(depth).enumerate() {
            writeln!(out, "{},{},{},{}", q.query_index, r + 1, g, u8::from(m)).expect("String write");
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterQuality {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub clusters: usize,
}

fn pairs(n: usize) -> u64 {
    (n as u64) * (n as u64).saturating_sub(1) / 2
}

/// Pairwise precision/recall/F1 of a pseudo-label assignment against true
/// identities. Outliers count as singleton clusters. Empty denominators give 1.
pub fn clustering_quality(assignment: &ClusterAssignment, identities: &[usize]) -> Result<ClusterQuality> {
    if assignment.len() != identities.len() {
        return Err(Error::Shape(format!(
            "{} labels for {} identities",
            assignment.len(),
            identities.len()
        )));
    }
    let mut cluster_sizes: HashMap<usize, usize> = HashMap::new();
    let mut identity_sizes: HashMap<usize, usize> = HashMap::new();
    let mut joint: HashMap<(usize, usize), usize> = HashMap::new();
    for (label, &id) in assignment.labels().iter().zip(identities) {
        *identity_sizes.entry(id).or_default() += 1;
        if let Some(c) = label {
            *cluster_sizes.entry(*c).or_default() += 1;
            *joint.entry((*c, id)).or_default() += 1;
        }
    }
    let tp: u64 = joint.values().map(|&n| pairs(n)).sum();
    let predicted: u64 = cluster_sizes.values().map(|&n| pairs(n)).sum();
    let actual: u64 = identity_sizes.values().map(|&n| pairs(n)).sum();
    let ratio = |num: u64, den: u64| if den == 0 { 1.0 } else { num as f64 / den as f64 };
    let precision = ratio(tp, predicted);
    let recall = ratio(tp, actual);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(ClusterQuality {
        precision,
        recall,
        f1,
        clusters: assignment.num_clusters(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn meta(identity_id: usize, camera_id: usize) -> ImageMeta {
        ImageMeta { identity_id, camera_id }
    }

    #[test]
    fn exact_copy_ranks_first() {
        let q = array![[0.6, 0.8]];
        let g = array![[1.0, 0.0], [0.6, 0.8], [0.0, 1.0]];
        let r = rank(q.view(), g.view(), &[meta(1, 0)], &[meta(2, 0), meta(1, 1), meta(3, 1)]).unwrap();
        assert_eq!(r.queries[0].gallery[0], 1);
        assert!(r.queries[0].matches[0]);
    }

    #[test]
    fn same_camera_same_identity_is_filtered() {
        let q = array![[1.0, 0.0]];
        let g = array![[1.0, 0.0], [0.0, 1.0]];
        let r = rank(q.view(), g.view(), &[meta(1, 0)], &[meta(1, 0), meta(2, 0)]).unwrap();
        assert_eq!(r.queries[0].gallery, vec![1]);
        let r = rank(
            q.view(),
            g.view().slice_move(ndarray::s![..1, ..]),
            &[meta(1, 0)],
            &[meta(1, 0)],
        )
        .unwrap();
        assert_eq!(r.skipped, vec![0]);
        assert!(r.queries.is_empty());
    }

    #[test]
    fn ap_with_matches_at_one_and_three() {
        let qr = QueryRanking {
            query_index: 0,
            gallery: vec![0, 1, 2],
            matches: vec![true, false, true],
        };
        assert!((qr.average_precision().unwrap() - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_ranking_scores_one() {
        let q = array![[1.0, 0.0], [0.0, 1.0]];
        let g = array![[1.0, 0.0], [0.0, 1.0]];
        let (m, _) = evaluate(q.view(), g.view(), &[meta(1, 0), meta(2, 0)], &[meta(1, 1), meta(2, 1)]).unwrap();
        assert_eq!((m.rank1, m.map), (1.0, 1.0));
    }

    #[test]
    fn ranklist_export() {
        let r = RankingResult {
            queries: vec![QueryRanking {
                query_index: 3,
                gallery: vec![2, 0],
                matches: vec![false, true],
            }],
            skipped: vec![],
        };
        assert_eq!(
            ranklist_csv(&r, 10),
            "query_index,rank,gallery_index,is_match\n3,1,2,0\n3,2,0,1\n"
        );
    }

    #[test]
    fn clustering_quality_extremes() {
        let ids = [0, 0, 1, 1, 2];
        let perfect = ClusterAssignment::new(vec![Some(0), Some(0), Some(1), Some(1), None], 2).unwrap();
        let q = clustering_quality(&perfect, &ids).unwrap();
        assert_eq!((q.precision, q.recall, q.f1), (1.0, 1.0, 1.0));
        let merged = ClusterAssignment::new(vec![Some(0); 5], 1).unwrap();
        let q = clustering_quality(&merged, &ids).unwrap();
        assert!(q.precision < 1.0);
        assert_eq!(q.recall, 1.0);
    }
}
