//! k-nearest neighbors with uniform weights and Euclidean distance.

use crate::error::{Error, Result};
use rayon::prelude::*;

#[derive(Clone, Debug)]
pub struct KnnModel {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub k: usize,
    pub num_classes: usize,
}

pub fn knn_fit(features: Vec<Vec<f64>>, labels: Vec<usize>, k: usize) -> Result<KnnModel> {
    if features.is_empty() || features.len() != labels.len() {
        return Err(Error::Input("KNN needs matching, nonempty features and labels".into()));
    }
    if k == 0 || k > features.len() {
        return Err(Error::Input(format!(
            "k={k} must be in 1..={} (number of stored rows)",
            features.len()
        )));
    }
    let num_classes = labels.iter().max().unwrap() + 1;
    Ok(KnnModel {
        features,
        labels,
        k,
        num_classes,
    })
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Majority label among the k nearest rows. Distance ties resolve to the
/// lower stored index, vote ties to the lower class index.
pub fn knn_predict_one(model: &KnnModel, query: &[f64]) -> Result<usize> {
    if query.len() != model.features[0].len() {
        return Err(Error::Input(format!(
            "query dimension {} does not match stored dimension {}",
            query.len(),
            model.features[0].len()
        )));
    }
    let mut dists: Vec<(f64, usize)> = model
        .features
        .iter()
        .enumerate()
        .map(|(i, f)| (squared_distance(query, f), i))
        .collect();
    dists.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let mut votes = vec![0usize; model.num_classes];
    for &(_, idx) in dists.iter().take(model.k) {
        votes[model.labels[idx]] += 1;
    }
    let top = *votes.iter().max().unwrap();
    Ok(votes.iter().position(|&v| v == top).unwrap())
}

pub fn knn_predict(model: &KnnModel, queries: &[Vec<f64>]) -> Result<Vec<usize>> {
    queries
        .par_iter()
        .map(|q| knn_predict_one(model, q))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stored_row_wins_at_k1() {
        let model = knn_fit(
            vec![vec![0.0, 0.0], vec![5.0, 5.0], vec![9.0, 1.0]],
            vec![2, 0, 1],
            1,
        )
        .unwrap();
        assert_eq!(knn_predict_one(&model, &[5.0, 5.0]).unwrap(), 0);
        assert_eq!(knn_predict_one(&model, &[0.0, 0.0]).unwrap(), 2);
    }

    #[test]
    fn majority_beats_proximity_at_k5() {
        // 3 of class 0 at distance ~0.1, 2 of class 1 at ~1.3: class 0 wins.
        let model = knn_fit(
            vec![
                vec![0.1, 0.0],
                vec![0.0, 0.1],
                vec![-0.1, 0.0],
                vec![1.3, 0.0],
                vec![0.0, 1.3],
            ],
            vec![0, 0, 0, 1, 1],
            5,
        )
        .unwrap();
        assert_eq!(knn_predict_one(&model, &[0.0, 0.0]).unwrap(), 0);
    }

    #[test]
    fn distance_ties_use_lower_stored_index() {
        // Two rows equidistant from the query with different labels; k=1 must
        // pick the earlier row.
        let model = knn_fit(vec![vec![1.0], vec![-1.0]], vec![1, 0], 1).unwrap();
        assert_eq!(knn_predict_one(&model, &[0.0]).unwrap(), 1);
    }

    #[test]
    fn vote_ties_use_lower_class_index() {
        let model = knn_fit(
            vec![vec![1.0], vec![-1.0], vec![2.0], vec![-2.0]],
            vec![1, 0, 1, 0],
            4,
        )
        .unwrap();
        assert_eq!(knn_predict_one(&model, &[0.0]).unwrap(), 0);
    }

    #[test]
    fn duplicated_training_set_predicts_identically_for_even_k() {
        let features: Vec<Vec<f64>> = (0..10)
            .map(|i| vec![(i as f64 * 1.37).sin() * 3.0, (i as f64 * 0.61).cos() * 3.0])
            .collect();
        let labels: Vec<usize> = (0..10).map(|i| i % 3).collect();
        let single = knn_fit(features.clone(), labels.clone(), 3).unwrap();

        let mut doubled_f = Vec::new();
        let mut doubled_l = Vec::new();
        for (f, &l) in features.iter().zip(&labels) {
            doubled_f.push(f.clone());
            doubled_f.push(f.clone());
            doubled_l.push(l);
            doubled_l.push(l);
        }
        let doubled = knn_fit(doubled_f, doubled_l, 6).unwrap();

        for q in (0..30).map(|i| vec![(i as f64 - 15.0) * 0.3, (i as f64 * 0.41).sin() * 2.0]) {
            assert_eq!(
                knn_predict_one(&single, &q).unwrap(),
                knn_predict_one(&doubled, &q).unwrap(),
                "query {q:?}"
            );
        }
    }

    #[test]
    fn k_larger_than_rows_is_an_input_error() {
        let err = knn_fit(vec![vec![0.0]], vec![0], 5).unwrap_err();
        assert!(matches!(err, Error::Input(_)));
    }
}
