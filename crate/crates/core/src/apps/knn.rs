use crate::diff::{dot, Matrix};
use crate::error::{Error, Result};

/// Neighbours used when the caller has no preference.
pub const DEFAULT_K: usize = 20;

fn unit_rows(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let norm = dot(row, row).sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
    out
}

/// Similarity-weighted vote among the `k` most cosine-similar training rows.
///
/// Ties in the vote go to the smaller label.
pub fn knn_predict(
    train_feats: &Matrix,
    train_labels: &[usize],
    query_feats: &Matrix,
    k: usize,
) -> Result<Vec<usize>> {
    let n = train_feats.rows();
    if train_labels.len() != n {
        return Err(Error::dim(format!(
            "{} training rows but {} labels",
            n,
            train_labels.len()
        )));
    }
    if k == 0 || k > n {
        return Err(Error::config(format!("kNN needs 1 <= k <= {n}, got k={k}")));
    }
    if query_feats.cols() != train_feats.cols() {
        return Err(Error::dim(format!(
            "query width {} vs training width {}",
            query_feats.cols(),
            train_feats.cols()
        )));
    }
    let classes = train_labels.iter().max().map_or(0, |m| m + 1);
    let train = unit_rows(train_feats);
    let query = unit_rows(query_feats);
    let mut sims: Vec<(f64, usize)> = Vec::with_capacity(n);
    let mut votes = vec![0.0; classes];
    let mut out = Vec::with_capacity(query.rows());
    for q in query.row_iter() {
        sims.clear();
        sims.extend(train.row_iter().enumerate().map(|(j, t)| (dot(q, t), j)));
        // ties broken by row index so the result does not depend on sort internals
        let by_sim = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
        if k < n {
            sims.select_nth_unstable_by(k - 1, by_sim);
        }
        votes.iter_mut().for_each(|v| *v = 0.0);
        for &(s, j) in &sims[..k] {
            votes[train_labels[j]] += s;
        }
        let mut best = 0;
        for c in 1..classes {
            if votes[c] > votes[best] {
                best = c;
            }
        }
        out.push(best);
    }
    Ok(out)
}

/// Top-1 accuracy of [`knn_predict`] against `query_labels`.
pub fn knn_eval(
    train_feats: &Matrix,
    train_labels: &[usize],
    query_feats: &Matrix,
    query_labels: &[usize],
    k: usize,
) -> Result<f64> {
    if query_labels.len() != query_feats.rows() {
        return Err(Error::dim("query labels do not match query rows"));
    }
    if query_labels.is_empty() {
        return Err(Error::Degenerate("empty query set".into()));
    }
    let pred = knn_predict(train_feats, train_labels, query_feats, k)?;
    let hits = pred
        .iter()
        .zip(query_labels)
        .filter(|(p, y)| p == y)
        .count();
    Ok(hits as f64 / query_labels.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::Rng;

    fn clusters(n: usize, seed: u64) -> (Matrix, Vec<usize>) {
        let mut rng = Rng::new(seed, 0);
        let mut x = Matrix::zeros(2 * n, 3);
        let mut y = Vec::new();
        for i in 0..2 * n {
            let c = i % 2;
            let center = if c == 0 {
                [5.0, 0.0, 1.0]
            } else {
                [0.0, 5.0, 1.0]
            };
            for j in 0..3 {
                x[(i, j)] = center[j] + 0.3 * rng.normal();
            }
            y.push(c);
        }
        (x, y)
    }

    #[test]
    fn self_match_with_one_neighbour() {
        let mut rng = Rng::new(1, 0);
        let x = Matrix::from_vec(40, 4, (0..160).map(|_| rng.normal()).collect()).unwrap();
        let y: Vec<usize> = (0..40).map(|i| i % 5).collect();
        assert_eq!(knn_eval(&x, &y, &x, &y, 1).unwrap(), 1.0);
    }

    #[test]
    fn separated_clusters() {
        let (x, y) = clusters(50, 2);
        let (q, qy) = clusters(30, 3);
        assert_eq!(knn_eval(&x, &y, &q, &qy, 5).unwrap(), 1.0);
    }

    #[test]
    fn k_larger_than_training_set_is_rejected() {
        let (x, y) = clusters(5, 2);
        let err = knn_eval(&x, &y, &x, &y, 11).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(knn_eval(&x, &y, &x, &y, 0).is_err());
    }

    #[test]
    fn votes_are_similarity_weighted() {
        // two weak neighbours of class 1 against one exact match of class 0
        let train = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [0.1, 1.0]]).unwrap();
        let labels = [0, 1, 1];
        let q = Matrix::from_rows(&[[1.0, 0.05]]).unwrap();
        assert_eq!(knn_predict(&train, &labels, &q, 3).unwrap(), vec![0]);
    }
}
