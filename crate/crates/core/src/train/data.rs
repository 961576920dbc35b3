// SPDX-License-Identifier: Apache-2.0

//! MNIST (IDX) and CIFAR-10 (binary batch) readers.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{arg_err, Error, Result};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

/// Images as `[N, C, H, W]` with pixels in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelledDataset {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub split: Split,
    pub classes: usize,
}

impl LabelledDataset {
    pub fn new(images: Tensor, labels: Vec<usize>, split: Split, classes: usize) -> Result<Self> {
        if images.dims().len() != 4 || images.dims()[0] != labels.len() {
            return Err(Error::Shape(format!(
                "{} labels for images {:?}",
                labels.len(),
                images.dims()
            )));
        }
        if labels.iter().any(|&l| l >= classes) {
            return arg_err(format!("label outside 0..{classes}"));
        }
        Ok(Self {
            images,
            labels,
            split,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `[C, H, W]`.
    pub fn image_dims(&self) -> &[usize] {
        &self.images.dims()[1..]
    }

    pub fn image_len(&self) -> usize {
        self.image_dims().iter().product()
    }

    pub fn pixels(&self, i: usize) -> &[f32] {
        let n = self.image_len();
        &self.images.data()[i * n..(i + 1) * n]
    }

    /// Example `i` shaped as `shape`, which must hold the same number of values.
    pub fn example(&self, i: usize, shape: &Shape) -> Result<Tensor> {
        Tensor::new(shape.clone(), self.pixels(i).to_vec())
    }

    /// The first `n` examples.
    pub fn take(&self, n: usize) -> Self {
        let n = n.min(self.len());
        let mut dims = self.images.dims().to_vec();
        dims[0] = n;
        Self {
            images: Tensor::from_dims(&dims, self.images.data()[..n * self.image_len()].to_vec())
                .expect("prefix of a valid tensor"),
            labels: self.labels[..n].to_vec(),
            split: self.split,
            classes: self.classes,
        }
    }
}

fn be_u32(b: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(b[at..at + 4].try_into().unwrap())
}

pub const MNIST_IMAGE_MAGIC: u32 = 0x0000_0803;
pub const MNIST_LABEL_MAGIC: u32 = 0x0000_0801;

/// Parses IDX image and label files. With `pad32` each 28x28 image is
/// centred in a zero 32x32 frame.
pub fn parse_mnist(images: &[u8], labels: &[u8], split: Split, pad32: bool) -> Result<LabelledDataset> {
    let fmt_err = |m: String| Err(Error::Format(m));
    if images.len() < 16 || labels.len() < 8 {
        return fmt_err("truncated IDX header".into());
    }
    let (im, lm) = (be_u32(images, 0), be_u32(labels, 0));
    if im != MNIST_IMAGE_MAGIC {
        return fmt_err(format!("image file magic {im:#010x}, expected {MNIST_IMAGE_MAGIC:#010x}"));
    }
    if lm != MNIST_LABEL_MAGIC {
        return fmt_err(format!("label file magic {lm:#010x}, expected {MNIST_LABEL_MAGIC:#010x}"));
    }
    let n = be_u32(images, 4) as usize;
    let (rows, cols) = (be_u32(images, 8) as usize, be_u32(images, 12) as usize);
    if be_u32(labels, 4) as usize != n {
        return fmt_err(format!("{n} images but {} labels", be_u32(labels, 4)));
    }
    if images.len() != 16 + n * rows * cols || labels.len() != 8 + n {
        return fmt_err("IDX file truncated or oversized".into());
    }
    let (h, w, off) = if pad32 {
        if rows > 32 || cols > 32 {
            return fmt_err(format!("{rows}x{cols} images do not fit a 32x32 frame"));
        }
        (32, 32, ((32 - rows) / 2, (32 - cols) / 2))
    } else {
        (rows, cols, (0, 0))
    };
    let mut data = vec![0.0f32; n * h * w];
    for i in 0..n {
        let src = &images[16 + i * rows * cols..16 + (i + 1) * rows * cols];
        let dst = &mut data[i * h * w..(i + 1) * h * w];
        for r in 0..rows {
            for c in 0..cols {
                dst[(r + off.0) * w + c + off.1] = src[r * cols + c] as f32 / 255.0;
            }
        }
    }
    let labels: Vec<usize> = labels[8..].iter().map(|&b| b as usize).collect();
    if labels.iter().any(|&l| l > 9) {
        return fmt_err("MNIST label outside 0..9".into());
    }
    LabelledDataset::new(Tensor::from_dims(&[n, 1, h, w], data)?, labels, split, 10)
}

pub fn load_mnist(images: &Path, labels: &Path, split: Split, pad32: bool) -> Result<LabelledDataset> {
    parse_mnist(&fs::read(images)?, &fs::read(labels)?, split, pad32)
}

/// Loads `train-*` or `t10k-*` IDX files from `dir` (or `dir/mnist`).
pub fn load_mnist_dir(dir: &Path, split: Split, pad32: bool) -> Result<LabelledDataset> {
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    for base in [dir.to_path_buf(), dir.join("mnist")] {
        let im = base.join(format!("{prefix}-images-idx3-ubyte"));
        let lb = base.join(format!("{prefix}-labels-idx1-ubyte"));
        if im.is_file() && lb.is_file() {
            return load_mnist(&im, &lb, split, pad32);
        }
    }
    Err(Error::Argument(format!(
        "no MNIST {prefix}-images-idx3-ubyte / {prefix}-labels-idx1-ubyte under {}",
        dir.display()
    )))
}

pub const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;

pub fn parse_cifar10(batches: &[Vec<u8>], split: Split) -> Result<LabelledDataset> {
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for b in batches {
        if b.len() % CIFAR_RECORD != 0 {
            return Err(Error::Format(format!(
                "CIFAR batch of {} bytes is not a multiple of {CIFAR_RECORD}",
                b.len()
            )));
        }
        for rec in b.chunks_exact(CIFAR_RECORD) {
            if rec[0] > 9 {
                return Err(Error::Format(format!("CIFAR label byte {} outside 0..9", rec[0])));
            }
            labels.push(rec[0] as usize);
            data.extend(rec[1..].iter().map(|&p| p as f32 / 255.0));
        }
    }
    if labels.is_empty() {
        return Err(Error::Format("no CIFAR records".into()));
    }
    LabelledDataset::new(Tensor::from_dims(&[labels.len(), 3, 32, 32], data)?, labels, split, 10)
}

pub fn load_cifar10(files: &[PathBuf], split: Split) -> Result<LabelledDataset> {
    let batches = files.iter().map(fs::read).collect::<std::io::Result<Vec<_>>>()?;
    parse_cifar10(&batches, split)
}

/// `data_batch_{1..5}.bin` or `test_batch.bin` from `dir`, `dir/cifar10`
/// or `dir/cifar-10-batches-bin`.
pub fn load_cifar10_dir(dir: &Path, split: Split) -> Result<LabelledDataset> {
    let names: Vec<String> = match split {
        Split::Train => (1..=5).map(|i| format!("data_batch_{i}.bin")).collect(),
        Split::Test => vec!["test_batch.bin".into()],
    };
    for base in [dir.to_path_buf(), dir.join("cifar10"), dir.join("cifar-10-batches-bin")] {
        let files: Vec<PathBuf> = names.iter().map(|n| base.join(n)).collect();
        if files.iter().all(|f| f.is_file()) {
            return load_cifar10(&files, split);
        }
    }
    Err(Error::Argument(format!("no CIFAR-10 {split} batches under {}", dir.display())))
}
