// SPDX-License-Identifier: Apache-2.0

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::Label;
use crate::nn::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Labelled examples with uniform feature shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub split: Split,
    classes: usize,
    feature_shape: Vec<usize>,
    features: Vec<f32>,
    labels: Vec<Label>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        split: Split,
        classes: usize,
        feature_shape: Vec<usize>,
        features: Vec<f32>,
        labels: Vec<Label>,
    ) -> Result<Self> {
        let width: usize = feature_shape.iter().product();
        if features.len() != width * labels.len() {
            return Err(Error::Shape(format!(
                "{} labels with {width} features each need {} values, got {}",
                labels.len(),
                width * labels.len(),
                features.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|l| l.index() >= classes) {
            return Err(Error::LabelOutOfRange {
                label: bad.get() as usize,
                classes,
            });
        }
        Ok(Dataset {
            name: name.into(),
            split,
            classes,
            feature_shape,
            features,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Per-example shape, e.g. `[1, 28, 28]` for MNIST or `[d]` for vectors.
    pub fn feature_shape(&self) -> &[usize] {
        &self.feature_shape
    }

    pub fn feature_len(&self) -> usize {
        self.feature_shape.iter().product()
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn features(&self, index: usize) -> &[f32] {
        let w = self.feature_len();
        &self.features[index * w..(index + 1) * w]
    }

    /// Stacks the given examples into a `batch x features` tensor.
    pub fn batch(&self, indices: &[usize]) -> (Tensor<f32>, Vec<Label>) {
        let w = self.feature_len();
        let mut data = Vec::with_capacity(indices.len() * w);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.features(i));
            labels.push(self.labels[i]);
        }
        let tensor = Tensor::new(vec![indices.len(), w], data).expect("batch shape is consistent");
        (tensor, labels)
    }

    /// Count of each label (index `y - 1`) among `indices`.
    pub fn label_counts(&self, indices: impl IntoIterator<Item = usize>) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for i in indices {
            counts[self.labels[i].index()] += 1;
        }
        counts
    }

    /// Keeps the first `n` examples of each label, preserving order.
    pub fn take_per_class(&self, n: usize) -> Dataset {
        let mut seen = vec![0usize; self.classes];
        let keep: Vec<usize> = (0..self.len())
            .filter(|&i| {
                let c = &mut seen[self.labels[i].index()];
                *c += 1;
                *c <= n
            })
            .collect();
        self.subset(&keep)
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let (features, labels) = self.batch(indices);
        Dataset {
            name: self.name.clone(),
            split: self.split,
            classes: self.classes,
            feature_shape: self.feature_shape.clone(),
            features: features.into_data(),
            labels,
        }
    }
}
