// SPDX-License-Identifier: Apache-2.0

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::data::LabelledDataset;
use super::net::Network;
use crate::error::{arg_err, Error, Result};
use crate::runtime::ModelGraph;
use crate::zoo;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub momentum: f32,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 64,
            learning_rate: 0.02,
            momentum: 0.9,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return arg_err("epochs and batch size must be positive");
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return arg_err("learning rate must be positive and momentum in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_acc: f64,
    /// `NaN` when no test split was given.
    pub test_acc: f64,
    /// Mean minibatch cross-entropy over the epoch.
    pub loss: f64,
}

/// `epoch,train_acc,test_acc,loss` rows.
pub fn epoch_log_csv(comment: &str, log: &[EpochLog]) -> String {
    let mut s = String::new();
    if !comment.is_empty() {
        let _ = writeln!(s, "# {comment}");
    }
    s.push_str("epoch,train_acc,test_acc,loss\n");
    for e in log {
        let _ = writeln!(s, "{},{:.6},{:.6},{:.6}", e.epoch, e.train_acc, e.test_acc, e.loss);
    }
    s
}

#[derive(Clone, Debug)]
pub struct Trained {
    pub model: ModelGraph,
    pub log: Vec<EpochLog>,
}

impl Trained {
    pub fn final_test_accuracy(&self) -> Option<f64> {
        self.log.last().map(|e| e.test_acc).filter(|v| !v.is_nan())
    }
}

fn gather(d: &LabelledDataset, idx: &[usize], buf: &mut Vec<f32>, labels: &mut Vec<usize>) {
    buf.clear();
    labels.clear();
    for &i in idx {
        buf.extend_from_slice(d.pixels(i));
        labels.push(d.labels[i]);
    }
}

/// Accuracy of `net` on `d`, in chunks of 256.
pub fn network_accuracy(net: &Network, d: &LabelledDataset) -> f64 {
    let (mut buf, mut labels) = (Vec::new(), Vec::new());
    let idx: Vec<usize> = (0..d.len()).collect();
    let mut hits = 0;
    for chunk in idx.chunks(256) {
        gather(d, chunk, &mut buf, &mut labels);
        hits += net
            .predict(&buf, chunk.len())
            .iter()
            .zip(&labels)
            .filter(|(p, l)| p == l)
            .count();
    }
    hits as f64 / d.len().max(1) as f64
}

/// Minibatch SGD with momentum (`v = mu * v + g; w -= lr * v`) starting from
/// the parameters of `init`. Each epoch visits a fresh seeded permutation.
pub fn train_graph(
    init: &ModelGraph,
    train: &LabelledDataset,
    test: Option<&LabelledDataset>,
    cfg: &TrainConfig,
) -> Result<Trained> {
    cfg.validate()?;
    let mut net = Network::from_graph(init)?;
    for d in std::iter::once(train).chain(test) {
        if d.image_len() != net.input_len() || d.classes != net.classes() {
            return Err(Error::Shape(format!(
                "{} dataset of {:?} images and {} classes does not fit model {:?} with {} classes",
                d.split,
                d.image_dims(),
                d.classes,
                init.input_shape().dims(),
                net.classes()
            )));
        }
    }
    if train.is_empty() {
        return arg_err("empty training set");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0000_0000_0001);
    let mut velocity: Vec<Vec<Vec<f32>>> = net
        .params
        .iter()
        .map(|ps| ps.iter().map(|p| vec![0.0; p.len()]).collect())
        .collect();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let (mut buf, mut labels) = (Vec::new(), Vec::new());
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut batches, mut hits) = (0.0, 0usize, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            gather(train, chunk, &mut buf, &mut labels);
            let tape = net.forward(&buf, chunk.len());
            let loss = net.loss(&tape, &labels);
            if !loss.is_finite() {
                return Err(Error::Training(format!(
                    "loss became {loss} in epoch {epoch} after {batches} batches \
                     (learning rate {}, momentum {}); lower the learning rate",
                    cfg.learning_rate, cfg.momentum
                )));
            }
            hits += net
                .predictions_of(&tape)
                .iter()
                .zip(&labels)
                .filter(|(p, l)| p == l)
                .count();
            let grads = net.backward(&tape, &labels);
            for ((ps, vs), gs) in net.params.iter_mut().zip(&mut velocity).zip(&grads) {
                for ((p, v), g) in ps.iter_mut().zip(vs).zip(gs) {
                    for ((w, vv), gv) in p.iter_mut().zip(v.iter_mut()).zip(g) {
                        *vv = cfg.momentum * *vv + gv;
                        *w -= cfg.learning_rate * *vv;
                    }
                }
            }
            loss_sum += loss;
            batches += 1;
        }
        log.push(EpochLog {
            epoch,
            train_acc: hits as f64 / train.len() as f64,
            test_acc: test.map_or(f64::NAN, |t| network_accuracy(&net, t)),
            loss: loss_sum / batches as f64,
        });
    }
    Ok(Trained {
        model: net.to_graph()?,
        log,
    })
}

/// Trains an MLP of the given widths (first = input size, last = classes).
pub fn train_mlp(
    arch: &[usize],
    train: &LabelledDataset,
    test: Option<&LabelledDataset>,
    cfg: &TrainConfig,
) -> Result<Trained> {
    if arch.last() != Some(&train.classes) {
        return arg_err(format!(
            "architecture {arch:?} must end in the class count {}",
            train.classes
        ));
    }
    train_graph(&zoo::mlp(arch, cfg.seed)?, train, test, cfg)
}

/// Trains the LeNet-style CNN on `[3, 32, 32]` data.
pub fn train_lenet(train: &LabelledDataset, test: Option<&LabelledDataset>, cfg: &TrainConfig) -> Result<Trained> {
    if train.image_dims() != [3, 32, 32] {
        return Err(Error::Shape(format!("LeNet expects [3, 32, 32] images, got {:?}", train.image_dims())));
    }
    train_graph(&zoo::lenet(cfg.seed)?, train, test, cfg)
}
