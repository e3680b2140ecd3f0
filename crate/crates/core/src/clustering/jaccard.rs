use super::DistanceMatrix;
use crate::error::{Error, Result};

/// `kNN(i, k)`: `i` itself plus its `k` nearest other points, ties broken by index.
fn nearest(dist: &DistanceMatrix, k: usize) -> Vec<Vec<usize>> {
    let n = dist.len();
    (0..n)
        .map(|i| {
            let row = dist.row(i);
            let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            others.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
            let mut out = Vec::with_capacity(k + 1);
            out.push(i);
            out.extend_from_slice(&others[..k]);
            out
        })
        .collect()
}

/// `R(i, k)` for every `i`, as sorted index lists.
fn reciprocal_sets(dist: &DistanceMatrix, k: usize) -> Vec<Vec<usize>> {
    let n = dist.len();
    let knn = nearest(dist, k);
    let mut member = vec![false; n * n];
    for (i, list) in knn.iter().enumerate() {
        for &j in list {
            member[i * n + j] = true;
        }
    }
    knn.iter()
        .enumerate()
        .map(|(i, list)| {
            let mut r: Vec<usize> = list.iter().copied().filter(|&j| member[j * n + i]).collect();
            r.sort_unstable();
            r
        })
        .collect()
}

fn intersection_len(a: &[usize], b: &[usize]) -> usize {
    let (mut i, mut j, mut count) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                count += 1;
                i += 1;
                j += 1;
            }
        }
    }
    count
}

/// Jaccard distance between expanded k-reciprocal neighbour sets.
///
/// `R*(i)` starts from `R(i, k1)` and absorbs `R(j, ⌈k1/2⌉)` for every
/// `j ∈ R(i, k1)` whose half-size set overlaps `R(i, k1)` in at least two
/// thirds of its members. Sets are unweighted and no query expansion is
/// applied, so `k2` is only validated.
pub fn k_reciprocal_jaccard(dist: &DistanceMatrix, k1: usize, k2: usize) -> Result<DistanceMatrix> {
    let n = dist.len();
    if k2 < 1 || k1 < k2 {
        return Err(Error::InvalidArgument(format!(
            "need k1 >= k2 >= 1, got k1 = {k1}, k2 = {k2}"
        )));
    }
    if k1 >= n {
        return Err(Error::InvalidArgument(format!("k1 = {k1} must be < n = {n}")));
    }
    let full = reciprocal_sets(dist, k1);
    let half = reciprocal_sets(dist, k1.div_ceil(2));

    let expanded: Vec<Vec<usize>> = full
        .iter()
        .map(|base| {
            let mut set = vec![false; n];
            for &j in base {
                set[j] = true;
            }
            for &j in base {
                let cand = &half[j];
                if 3 * intersection_len(base, cand) >= 2 * cand.len() {
                    for &c in cand {
                        set[c] = true;
                    }
                }
            }
            (0..n).filter(|&j| set[j]).collect()
        })
        .collect();

    Ok(DistanceMatrix::from_fn(n, |i, j| {
        let inter = intersection_len(&expanded[i], &expanded[j]);
        let union = expanded[i].len() + expanded[j].len() - inter;
        1.0 - inter as f64 / union as f64
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::cosine_distances;
    use ndarray::Array2;

    #[test]
    fn two_points_mutual_neighbours() {
        let d = DistanceMatrix::new(2, vec![0.0, 0.7, 0.7, 0.0]).unwrap();
        let j = k_reciprocal_jaccard(&d, 1, 1).unwrap();
        assert_eq!(j.get(0, 1), 0.0);
        assert_eq!(j.get(1, 0), 0.0);
    }

    #[test]
    fn separated_groups() {
        // Two tight groups of four on the unit circle, far apart.
        let angles: [f64; 8] = [0.0, 0.01, 0.02, 0.03, 3.0, 3.01, 3.02, 3.03];
        let f = Array2::from_shape_fn((8, 2), |(i, k)| if k == 0 { angles[i].cos() } else { angles[i].sin() });
        let d = cosine_distances(f.view()).unwrap();
        let j = k_reciprocal_jaccard(&d, 3, 1).unwrap();
        for a in 0..8 {
            for b in 0..8 {
                let expected = if (a < 4) == (b < 4) { 0.0 } else { 1.0 };
                assert_eq!(j.get(a, b), expected, "({a},{b})");
            }
        }
    }

    #[test]
    fn rejects_bad_k() {
        let d = DistanceMatrix::new(2, vec![0.0, 0.7, 0.7, 0.0]).unwrap();
        assert!(k_reciprocal_jaccard(&d, 2, 1).is_err());
        assert!(k_reciprocal_jaccard(&d, 1, 2).is_err());
        assert!(k_reciprocal_jaccard(&d, 1, 0).is_err());
    }
}
