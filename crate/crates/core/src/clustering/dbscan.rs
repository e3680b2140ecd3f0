use std::collections::VecDeque;
use std::fmt::Write as _;

use super::DistanceMatrix;
use crate::error::{Error, Result};

/// Per-image pseudo-labels; `None` marks an outlier.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterAssignment {
    labels: Vec<Option<usize>>,
    num_clusters: usize,
}

impl ClusterAssignment {
    pub fn new(labels: Vec<Option<usize>>, num_clusters: usize) -> Result<Self> {
        if let Some(bad) = labels.iter().flatten().find(|&&l| l >= num_clusters) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {num_clusters} clusters"
            )));
        }
        Ok(Self { labels, num_clusters })
    }

    pub fn all_outliers(n: usize) -> Self {
        Self {
            labels: vec![None; n],
            num_clusters: 0,
        }
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn num_clusters(&self) -> usize {
        self.num_clusters
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_outliers(&self) -> usize {
        self.labels.iter().filter(|l| l.is_none()).count()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.num_clusters];
        for l in self.labels.iter().flatten() {
            sizes[*l] += 1;
        }
        sizes
    }

    /// Debug dump: `image_index,cluster_id` with `-1` for outliers.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("image_index,cluster_id\n");
        for (i, l) in self.labels.iter().enumerate() {
            let id = l.map_or(-1, |v| v as i64);
            writeln!(out, "{i},{id}").expect("writing to a String");
        }
        out
    }
}

/// DBSCAN over a precomputed distance matrix.
///
/// A point is core when at least `min_samples` points (itself included) lie
/// within `eps`. Clusters are the connected components of core points,
/// numbered by their lowest-index core point. A border point joins the
/// cluster of its lowest-index core neighbour. Clusters left with fewer than
/// `min_samples` members after border assignment are dissolved into outliers.
pub fn dbscan(dist: &DistanceMatrix, eps: f64, min_samples: usize) -> Result<ClusterAssignment> {
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    if min_samples < 1 {
        return Err(Error::InvalidArgument("min_samples must be >= 1".into()));
    }
    let n = dist.len();
    let neighbours: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| dist.get(i, j) <= eps).collect())
        .collect();
    let core: Vec<bool> = neighbours.iter().map(|nb| nb.len() >= min_samples).collect();

    let mut labels: Vec<Option<usize>> = vec![None; n];
    let mut next = 0;
    let mut queue = VecDeque::new();
    for seed in 0..n {
        if !core[seed] || labels[seed].is_some() {
            continue;
        }
        labels[seed] = Some(next);
        queue.push_back(seed);
        while let Some(p) = queue.pop_front() {
            for &q in &neighbours[p] {
                if core[q] && labels[q].is_none() {
                    labels[q] = Some(next);
                    queue.push_back(q);
                }
            }
        }
        next += 1;
    }
    for i in 0..n {
        if !core[i] {
            labels[i] = neighbours[i].iter().find(|&&j| core[j]).and_then(|&j| labels[j]);
        }
    }

    let mut sizes = vec![0usize; next];
    for l in labels.iter().flatten() {
        sizes[*l] += 1;
    }
    let mut remap = vec![None; next];
    let mut kept = 0;
    for (c, &size) in sizes.iter().enumerate() {
        if size >= min_samples {
            remap[c] = Some(kept);
            kept += 1;
        }
    }
    let labels = labels.into_iter().map(|l| l.and_then(|c| remap[c])).collect();
    ClusterAssignment::new(labels, kept)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(points: &[f64]) -> DistanceMatrix {
        DistanceMatrix::from_fn(points.len(), |i, j| (points[i] - points[j]).abs())
    }

    #[test]
    fn three_close_points_form_one_cluster() {
        let a = dbscan(&line(&[0.0, 0.1, 0.2]), 0.25, 2).unwrap();
        assert_eq!(a.num_clusters(), 1);
        assert_eq!(a.num_outliers(), 0);
    }

    #[test]
    fn isolated_point_is_outlier() {
        let a = dbscan(&line(&[0.0, 0.1, 0.2, 5.0]), 0.25, 2).unwrap();
        assert_eq!(a.labels(), &[Some(0), Some(0), Some(0), None]);
    }

    #[test]
    fn border_goes_to_lowest_index_core() {
        // Groups {0..4} and {5..9}; point 4 touches only 3 and 5.
        let group = |i: usize| {
            if i < 4 {
                0
            } else if i == 4 {
                1
            } else {
                2
            }
        };
        let d = DistanceMatrix::from_fn(9, |i, j| match (i.min(j), i.max(j)) {
            (3, 4) | (4, 5) => 0.5,
            (a, b) if group(a) == group(b) => 0.1,
            _ => 1.0,
        });
        let a = dbscan(&d, 0.5, 4).unwrap();
        assert_eq!(a.num_clusters(), 2);
        assert_eq!(a.labels()[4], Some(0));
        assert_eq!(a.labels()[5], Some(1));
    }

    #[test]
    fn csv_dump_marks_outliers() {
        let a = dbscan(&line(&[0.0, 0.1, 9.0]), 0.5, 2).unwrap();
        assert_eq!(a.to_csv(), "image_index,cluster_id\n0,0\n1,0\n2,-1\n");
    }

    #[test]
    fn rejects_bad_parameters() {
        let d = line(&[0.0, 1.0]);
        assert!(dbscan(&d, 0.0, 2).is_err());
        assert!(dbscan(&d, 0.5, 0).is_err());
    }
}
