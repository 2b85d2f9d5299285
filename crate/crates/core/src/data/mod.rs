// SPDX-License-Identifier: Apache-2.0

//! Datasets, loaders, and Non-IID partitioning.

mod augment;
mod csv_format;
mod dataset;
mod idx;
mod partition;
mod synth;

pub use augment::crop_and_flip;
pub use csv_format::{load_csv_dataset, write_csv_dataset};
pub use dataset::{Dataset, Split};
pub use idx::{encode_idx, load_idx_dataset, load_mnist_dir, read_images, read_labels, Normalization};
pub use partition::{
    classify_majority, partition_lda, partition_sharding, partitions_to_json, read_partitions, write_partitions,
    ClientPartition, ExportedClient, MajorityRule, PartitionPlan, PartitionStrategy,
};
pub use synth::{synth_gaussian_dataset, GaussianSpec};
