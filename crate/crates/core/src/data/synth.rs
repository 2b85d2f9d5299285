// SPDX-License-Identifier: Apache-2.0

use rand::Rng;
use rand_distr::StandardNormal;

use super::dataset::{Dataset, Split};
use crate::labels::Label;
use crate::rng::{stream, Purpose};

/// Isotropic Gaussian blobs, one per class.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSpec {
    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
    /// Distance of each class mean from the origin, in noise standard deviations.
    pub spacing: f64,
}

/// Class means are random directions scaled to `spacing` and depend only on
/// `seed`, so train and test splits drawn with the same seed share them.
/// Examples are emitted class-interleaved.
pub fn synth_gaussian_dataset(spec: &GaussianSpec, seed: u64, split: Split) -> Dataset {
    let mut mean_rng = stream(seed, Purpose::Synth, 0, 0);
    let means: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| {
            let v: Vec<f64> = (0..spec.dim).map(|_| mean_rng.sample(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            v.iter().map(|x| x / norm * spec.spacing).collect()
        })
        .collect();
    let split_tag = match split {
        Split::Train => 1,
        Split::Test => 2,
    };
    let mut rng = stream(seed, Purpose::Synth, split_tag, 0);
    let mut features = Vec::with_capacity(spec.classes * spec.per_class * spec.dim);
    let mut labels = Vec::with_capacity(spec.classes * spec.per_class);
    for _ in 0..spec.per_class {
        for (c, mean) in means.iter().enumerate() {
            for &m in mean {
                let noise: f64 = rng.sample(StandardNormal);
                features.push((m + noise) as f32);
            }
            labels.push(Label::from_index(c));
        }
    }
    Dataset::new(
        format!("gauss{}x{}", spec.classes, spec.dim),
        split,
        spec.classes,
        vec![spec.dim],
        features,
        labels,
    )
    .expect("synthetic dataset is well-formed")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(per_class: usize) -> GaussianSpec {
        GaussianSpec {
            classes: 3,
            per_class,
            dim: 5,
            spacing: 4.0,
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = synth_gaussian_dataset(&spec(10), 3, Split::Train);
        let b = synth_gaussian_dataset(&spec(10), 3, Split::Train);
        let c = synth_gaussian_dataset(&spec(10), 4, Split::Train);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn zero_per_class_is_empty() {
        let ds = synth_gaussian_dataset(&spec(0), 1, Split::Train);
        assert!(ds.is_empty());
        assert_eq!(ds.classes(), 3);
    }

    #[test]
    fn splits_differ_but_share_means() {
        let train = synth_gaussian_dataset(&spec(400), 9, Split::Train);
        let test = synth_gaussian_dataset(&spec(400), 9, Split::Test);
        assert_ne!(train.features(0), test.features(0));
        for c in 0..3 {
            let mean = |ds: &Dataset| -> f64 {
                (0..ds.len())
                    .filter(|&i| ds.labels()[i].index() == c)
                    .map(|i| ds.features(i)[0] as f64)
                    .sum::<f64>()
                    / 400.0
            };
            assert!((mean(&train) - mean(&test)).abs() < 0.3);
        }
    }
}
