// SPDX-License-Identifier: Apache-2.0

//! Target-model training and dataset readers.

mod data;
mod net;
mod sgd;

pub use data::{
    load_cifar10, load_cifar10_dir, load_mnist, load_mnist_dir, parse_cifar10, parse_mnist, LabelledDataset, Split,
    CIFAR_RECORD, MNIST_IMAGE_MAGIC, MNIST_LABEL_MAGIC,
};
pub use net::Network;
pub use sgd::{epoch_log_csv, network_accuracy, train_graph, train_lenet, train_mlp, EpochLog, TrainConfig, Trained};
