//! Brute-force k-nearest-neighbour classifier.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evm::{distance, Metric};
use crate::feature::{FeatureVector, LabeledDataset};

pub const DEFAULT_K: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    pub k: usize,
    pub metric: Metric,
    pub classes: Vec<String>,
    pub points: Vec<FeatureVector>,
    pub labels: Vec<usize>,
}

impl KnnModel {
    pub fn dim(&self) -> usize {
        self.points.first().map_or(0, FeatureVector::dim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k > self.points.len() {
            return Err(Error::Argument(format!(
                "k = {} must lie in 1..={}",
                self.k,
                self.points.len()
            )));
        }
        if self.points.len() != self.labels.len() {
            return Err(Error::Argument("point and label counts differ".into()));
        }
        if self.labels.iter().any(|&l| l >= self.classes.len()) {
            return Err(Error::Argument("label index outside class list".into()));
        }
        let dim = self.dim();
        if self.points.iter().any(|p| p.dim() != dim) {
            return Err(Error::Argument("points differ in dimension".into()));
        }
        Ok(())
    }
}

pub fn knn_fit(train: &LabeledDataset, k: usize, metric: Metric) -> Result<KnnModel> {
    if k == 0 || k > train.len() {
        return Err(Error::Argument(format!(
            "k = {k} must lie in 1..={} (training size)",
            train.len()
        )));
    }
    Ok(KnnModel {
        k,
        metric,
        classes: train.classes().to_vec(),
        points: train.features().to_vec(),
        labels: train.labels().to_vec(),
    })
}

/// Majority label of the `k` nearest points. Distance ties go to the lower
/// training index; vote ties to the smallest class index.
pub fn knn_predict(model: &KnnModel, x: &[f64]) -> Result<usize> {
    let mut dists = model
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| Ok((distance(p, x, model.metric)?, i)))
        .collect::<Result<Vec<(f64, usize)>>>()?;
    let by_dist = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if model.k < dists.len() {
        dists.select_nth_unstable_by(model.k - 1, by_dist);
    }
    let mut votes = vec![0usize; model.classes.len()];
    for &(_, i) in &dists[..model.k] {
        votes[model.labels[i]] += 1;
    }
    let mut best = 0;
    for (c, &v) in votes.iter().enumerate() {
        if v > votes[best] {
            best = c;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> LabeledDataset {
        LabeledDataset::new(
            vec![
                FeatureVector(vec![0.0, 0.0]),
                FeatureVector(vec![0.0, 1.0]),
                FeatureVector(vec![5.0, 5.0]),
            ],
            vec![0, 0, 1],
            vec!["A".into(), "B".into()],
        )
        .unwrap()
    }

    #[test]
    fn fit_bounds_on_k() {
        let ds = fixture();
        assert_eq!(knn_fit(&ds, 1, Metric::Euclidean).unwrap().points.len(), 3);
        assert!(matches!(
            knn_fit(&ds, 0, Metric::Euclidean),
            Err(Error::Argument(_))
        ));
        assert!(knn_fit(&ds, 3, Metric::Euclidean).is_ok());
        assert!(knn_fit(&ds, 4, Metric::Euclidean).is_err());
    }

    #[test]
    fn predictions() {
        let ds = fixture();
        let m1 = knn_fit(&ds, 1, Metric::Euclidean).unwrap();
        assert_eq!(knn_predict(&m1, &[5.0, 5.0]).unwrap(), 1);
        let m3 = knn_fit(&ds, 3, Metric::Euclidean).unwrap();
        // distances 0.5, 0.5, ~6.96 → two votes for A
        assert_eq!(knn_predict(&m3, &[0.0, 0.5]).unwrap(), 0);
    }

    #[test]
    fn global_vote_tie_goes_to_smallest_class() {
        let ds = LabeledDataset::new(
            vec![
                FeatureVector(vec![9.0]),
                FeatureVector(vec![1.0]),
                FeatureVector(vec![-3.0]),
                FeatureVector(vec![0.5]),
            ],
            vec![1, 1, 0, 0],
            vec!["A".into(), "B".into()],
        )
        .unwrap();
        let m = knn_fit(&ds, 4, Metric::Euclidean).unwrap();
        assert_eq!(knn_predict(&m, &[8.0]).unwrap(), 0);
    }

    #[test]
    fn distance_tie_prefers_lower_index() {
        let ds = LabeledDataset::new(
            vec![FeatureVector(vec![1.0]), FeatureVector(vec![-1.0])],
            vec![1, 0],
            vec!["A".into(), "B".into()],
        )
        .unwrap();
        let m = knn_fit(&ds, 1, Metric::Euclidean).unwrap();
        assert_eq!(knn_predict(&m, &[0.0]).unwrap(), 1);
    }

    #[test]
    fn zero_query_under_cosine() {
        let m = knn_fit(
            &fixture()
                .map_features(|f| Ok(FeatureVector(vec![f[0] + 1.0, f[1] + 1.0])))
                .unwrap(),
            1,
            Metric::Cosine,
        )
        .unwrap();
        assert!(matches!(
            knn_predict(&m, &[0.0, 0.0]),
            Err(Error::Degenerate(_))
        ));
    }
}
