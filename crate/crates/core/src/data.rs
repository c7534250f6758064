//! Datasets: the CIFAR-10 binary format, a synthetic class-blob generator,
//! search splits and train-time augmentation.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Error, Result};
use crate::tensor::Tensor;

pub const CIFAR_SIDE: usize = 32;
pub const CIFAR_RECORD: usize = 1 + 3 * CIFAR_SIDE * CIFAR_SIDE;
pub const CIFAR_CLASSES: usize = 10;

/// Images `(N, C, H, W)` with one class label per example.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if images.batch() != labels.len() {
            return Err(shape_err!("{} images but {} labels", images.batch(), labels.len()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(invalid!("label {bad} out of range for {classes} classes"));
        }
        Ok(Self { images, labels, classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_shape(&self) -> [usize; 3] {
        let [_, c, h, w] = self.images.shape();
        [c, h, w]
    }

    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let images = self.images.select_examples(indices)?;
        Ok((images, indices.iter().map(|&i| self.labels[i]).collect()))
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let (images, labels) = self.batch(indices)?;
        Self::new(images, labels, self.classes)
    }

    pub fn histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.classes];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }

    pub fn concat(parts: &[Dataset]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| invalid!("no datasets to concatenate"))?;
        let [c, h, w] = first.image_shape();
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for p in parts {
            if p.image_shape() != [c, h, w] {
                return Err(shape_err!("image shape {:?} vs {:?}", p.image_shape(), [c, h, w]));
            }
            data.extend_from_slice(p.images.data());
            labels.extend_from_slice(&p.labels);
        }
        Self::new(Tensor::from_vec([labels.len(), c, h, w], data)?, labels, first.classes)
    }
}

/// Parses CIFAR-10 binary records: one label byte followed by the red, green
/// and blue 32×32 planes. Pixels map to `x / 127.5 − 1`.
pub fn parse_cifar10(bytes: &[u8]) -> Result<Dataset> {
    if bytes.len() % CIFAR_RECORD != 0 {
        return Err(Error::Format(format!(
            "CIFAR-10 file size {} is not a multiple of {CIFAR_RECORD}",
            bytes.len()
        )));
    }
    let n = bytes.len() / CIFAR_RECORD;
    let mut labels = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * (CIFAR_RECORD - 1));
    for (i, record) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        let label = record[0] as usize;
        if label >= CIFAR_CLASSES {
            return Err(Error::Format(format!("record {i}: label byte {label} > 9")));
        }
        labels.push(label);
        data.extend(record[1..].iter().map(|&b| b as f32 / 127.5 - 1.0));
    }
    Dataset::new(
        Tensor::from_vec([n, 3, CIFAR_SIDE, CIFAR_SIDE], data)?,
        labels,
        CIFAR_CLASSES,
    )
}

pub fn load_cifar10_file(path: &Path) -> Result<Dataset> {
    parse_cifar10(&fs::read(path)?)
}

/// Reads `data_batch_{1..5}.bin` and `test_batch.bin` from `dir`.
pub fn load_cifar10(dir: &Path) -> Result<(Dataset, Dataset)> {
    let train = (1..=5)
        .map(|i| load_cifar10_file(&dir.join(format!("data_batch_{i}.bin"))))
        .collect::<Result<Vec<_>>>()?;
    let test = load_cifar10_file(&dir.join("test_batch.bin"))?;
    Ok((Dataset::concat(&train)?, test))
}

/// Class-conditional blob images. Each class has a constant colour offset
/// plus a Gaussian bump at its own location; examples add i.i.d. noise of
/// standard deviation `noise`.
///
/// With noise σ, nearest-mean classification errs between two classes with
/// probability Φ(−d / 2σ) where `d` is the distance between their means, so
/// the data stay separable in practice while σ < [`SyntheticSpec::min_mean_distance`] / 8.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub channels: usize,
    pub size: usize,
    pub count: usize,
    pub noise: f32,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: 10,
            channels: 3,
            size: 16,
            count: 1000,
            noise: 0.3,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    /// Per-class mean images, each `channels · size²` long.
    pub fn class_means(&self) -> Vec<Vec<f32>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5eed_b10b);
        let s = self.size as f32;
        let radius = (s / 6.0).max(1.0);
        (0..self.classes)
            .map(|k| {
                let colour: Vec<f32> = (0..self.channels).map(|_| rng.gen_range(-0.4..0.4)).collect();
                let angle = std::f32::consts::TAU * k as f32 / self.classes.max(1) as f32;
                let cy = s / 2.0 + 0.3 * s * angle.sin();
                let cx = s / 2.0 + 0.3 * s * angle.cos();
                let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                let mut img = Vec::with_capacity(self.channels * self.size * self.size);
                for c in 0..self.channels {
                    let gain = sign * (0.5 + 0.1 * c as f32);
                    for y in 0..self.size {
                        for x in 0..self.size {
                            let d2 = (y as f32 - cy).powi(2) + (x as f32 - cx).powi(2);
                            img.push(colour[c] + gain * (-d2 / (2.0 * radius * radius)).exp());
                        }
                    }
                }
                img
            })
            .collect()
    }

    pub fn min_mean_distance(&self) -> f32 {
        let means = self.class_means();
        let mut best = f32::INFINITY;
        for i in 0..means.len() {
            for j in i + 1..means.len() {
                let d: f32 = means[i].iter().zip(&means[j]).map(|(a, b)| (a - b) * (a - b)).sum();
                best = best.min(d.sqrt());
            }
        }
        best
    }
}

/// Balanced (up to `count % classes`) and shuffled; deterministic in `spec.seed`.
pub fn make_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    sample_synthetic(spec, spec.count, 0)
}

/// `count` fresh examples of the task described by `spec`. Different streams
/// give independent samples around the same class means.
pub fn sample_synthetic(spec: &SyntheticSpec, count: usize, stream: u64) -> Result<Dataset> {
    if spec.classes == 0 || spec.channels == 0 || spec.size == 0 {
        return Err(invalid!("synthetic data needs positive classes, channels and size"));
    }
    if !(spec.noise >= 0.0 && spec.noise.is_finite()) {
        return Err(invalid!("noise must be finite and non-negative"));
    }
    let means = spec.class_means();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(stream);
    let mut labels: Vec<usize> = (0..count).map(|i| i % spec.classes).collect();
    labels.shuffle(&mut rng);
    let per = spec.channels * spec.size * spec.size;
    let mut data = Vec::with_capacity(count * per);
    for &l in &labels {
        for &m in &means[l] {
            let z: f32 = StandardNormal.sample(&mut rng);
            data.push(m + spec.noise * z);
        }
    }
    Dataset::new(
        Tensor::from_vec([count, spec.channels, spec.size, spec.size], data)?,
        labels,
        spec.classes,
    )
}

/// Index sets over one training pool.
///
/// `weight_train` and `arch_val` are the two halves of the shuffled pool
/// (`weight_train` gets the extra example when the pool is odd). `perf_val`
/// is drawn from `weight_train`; `gradient` is `weight_train` without it and
/// is what weight updates iterate over.
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub weight_train: Vec<usize>,
    pub arch_val: Vec<usize>,
    pub perf_val: Vec<usize>,
    pub gradient: Vec<usize>,
}

pub fn split(pool_len: usize, perf_val: usize, seed: u64) -> Result<Splits> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..pool_len).collect();
    order.shuffle(&mut rng);
    let half = pool_len.div_ceil(2);
    let arch_val = order.split_off(half);
    let weight_train = order;
    if perf_val > weight_train.len() {
        return Err(invalid!(
            "performance-validation size {perf_val} exceeds the {} weight-training examples",
            weight_train.len()
        ));
    }
    let mut shuffled = weight_train.clone();
    shuffled.shuffle(&mut rng);
    let gradient = shuffled.split_off(perf_val);
    Ok(Splits {
        weight_train,
        arch_val,
        perf_val: shuffled,
        gradient,
    })
}

/// Splits `indices` into batches, optionally shuffled. Each shuffled batch
/// is sorted, so a batch's result depends only on which examples it holds.
pub fn batches<R: Rng>(indices: &[usize], batch_size: usize, rng: Option<&mut R>) -> Vec<Vec<usize>> {
    let mut order = indices.to_vec();
    let shuffle = rng.is_some();
    if let Some(rng) = rng {
        order.shuffle(rng);
    }
    order
        .chunks(batch_size.max(1))
        .map(|c| {
            let mut b = c.to_vec();
            if shuffle {
                b.sort_unstable();
            }
            b
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSpec {
    pub enabled: bool,
    pub padding: usize,
    pub flip_prob: f64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self {
            enabled: true,
            padding: 4,
            flip_prob: 0.5,
        }
    }
}

impl AugmentSpec {
    pub fn off() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }
}

/// Mirrors every image left to right.
pub fn flip_horizontal(batch: &Tensor) -> Tensor {
    let mut out = batch.clone();
    let w = batch.width();
    for (dst, src) in out.data_mut().chunks_mut(w).zip(batch.data().chunks(w)) {
        for x in 0..w {
            dst[x] = src[w - 1 - x];
        }
    }
    out
}

/// Random crop from the zero-padded image followed by a random horizontal flip.
pub fn augment<R: Rng>(batch: &Tensor, spec: &AugmentSpec, rng: &mut R) -> Tensor {
    if !spec.enabled {
        return batch.clone();
    }
    let [n, c, h, w] = batch.shape();
    let p = spec.padding as isize;
    let mut out = Tensor::zeros(batch.shape());
    let plane = h * w;
    for e in 0..n {
        let dy = rng.gen_range(-p..=p);
        let dx = rng.gen_range(-p..=p);
        let flip = rng.gen_bool(spec.flip_prob.clamp(0.0, 1.0));
        for ch in 0..c {
            let base = (e * c + ch) * plane;
            for y in 0..h {
                let sy = y as isize + dy;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for x in 0..w {
                    let tx = if flip { w - 1 - x } else { x };
                    let sx = tx as isize + dx;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    out.data_mut()[base + y * w + x] = batch.data()[base + sy as usize * w + sx as usize];
                }
            }
        }
    }
    out
}
