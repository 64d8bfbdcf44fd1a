use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Classifier input: reflection coefficients of every channel, concatenated
/// in channel order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for FeatureVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for FeatureVector {
    fn from(v: Vec<f64>) -> Self {
        FeatureVector(v)
    }
}

impl From<&[f64]> for FeatureVector {
    fn from(v: &[f64]) -> Self {
        FeatureVector(v.to_vec())
    }
}

/// Feature vectors with class indices into an ordered class list.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Vec<FeatureVector>,
    labels: Vec<usize>,
    classes: Vec<String>,
}

impl LabeledDataset {
    pub fn new(
        features: Vec<FeatureVector>,
        labels: Vec<usize>,
        classes: Vec<String>,
    ) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(Error::Argument(format!(
                "{} feature vectors but {} labels",
                features.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes.len()) {
            return Err(Error::Argument(format!(
                "label index {bad} outside class list of length {}",
                classes.len()
            )));
        }
        if let Some(first) = features.first() {
            let dim = first.dim();
            if let Some(pos) = features.iter().position(|f| f.dim() != dim) {
                return Err(Error::Argument(format!(
                    "example {pos} has dimension {} but example 0 has {dim}",
                    features[pos].dim()
                )));
            }
        }
        Ok(LabeledDataset {
            features,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    /// Feature dimensionality, or 0 for an empty dataset.
    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, FeatureVector::dim)
    }

    pub fn features(&self) -> &[FeatureVector] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn iter(&self) -> impl Iterator<Item = (&FeatureVector, usize)> {
        self.features.iter().zip(self.labels.iter().copied())
    }

    /// Number of examples carrying each class index.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes.len()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Same examples with every feature vector replaced by `f(vector)`.
    pub fn map_features<F>(&self, f: F) -> Result<Self>
    where
        F: Fn(&FeatureVector) -> Result<FeatureVector>,
    {
        let features = self.features.iter().map(f).collect::<Result<Vec<_>>>()?;
        LabeledDataset::new(features, self.labels.clone(), self.classes.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_unknown_label_and_ragged_dims() {
        let classes = vec!["a".to_string()];
        assert!(LabeledDataset::new(vec![vec![1.0].into()], vec![1], classes.clone()).is_err());
        let ragged = vec![vec![1.0].into(), vec![1.0, 2.0].into()];
        assert!(LabeledDataset::new(ragged, vec![0, 0], classes).is_err());
    }

    #[test]
    fn counts_classes() {
        let ds = LabeledDataset::new(
            vec![vec![0.0].into(), vec![1.0].into(), vec![2.0].into()],
            vec![1, 0, 1],
            vec!["a".into(), "b".into()],
        )
        .unwrap();
        assert_eq!(ds.class_counts(), vec![1, 2]);
        assert_eq!(ds.dim(), 1);
    }
}
