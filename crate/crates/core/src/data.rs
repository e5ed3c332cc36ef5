//! Seeded synthetic oriented-bars dataset (4 classes, `1×16×16`).
//!
//! Class 0 draws a horizontal bar, 1 a vertical bar, 2 a diagonal and 3 an
//! anti-diagonal, each at a random offset, length and intensity, on a
//! gaussian-noise background.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tinynn::Tensor;

pub const SIDE: usize = 16;
pub const NUM_CLASSES: usize = 4;

#[derive(Clone, Debug)]
pub struct Dataset {
    images: Tensor,
    labels: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BarsConfig {
    pub train: usize,
    pub eval: usize,
    pub noise: f32,
}

impl Default for BarsConfig {
    fn default() -> Self {
        Self {
            train: 4000,
            eval: 1000,
            noise: 0.35,
        }
    }
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>) -> Result<Self> {
        if images.rank() != 4 || images.shape()[0] != labels.len() {
            return Err(Error::Shape {
                layer: "dataset".into(),
                expected: format!("[{}, C, H, W]", labels.len()),
                got: images.shape().to_vec(),
            });
        }
        Ok(Self { images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Gather samples `idx` into a batch tensor and label vector.
    pub fn batch(&self, idx: &[usize]) -> (Tensor, Vec<usize>) {
        let per = self.images.numel() / self.len().max(1);
        let mut data = Vec::with_capacity(per * idx.len());
        for &i in idx {
            data.extend_from_slice(&self.images.data()[i * per..(i + 1) * per]);
        }
        let mut shape = self.images.shape().to_vec();
        shape[0] = idx.len();
        let labels = idx.iter().map(|&i| self.labels[i]).collect();
        (Tensor::new(shape, data).expect("gathered batch"), labels)
    }

    /// The first `n` samples.
    pub fn head(&self, n: usize) -> Self {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        let (images, labels) = self.batch(&idx);
        Self { images, labels }
    }
}

fn draw(rng: &mut ChaCha8Rng, class: usize, noise: &Normal<f32>) -> Vec<f32> {
    let mut img: Vec<f32> = (0..SIDE * SIDE).map(|_| noise.sample(rng)).collect();
    let intensity = rng.random_range(0.8..1.4f32);
    let len = rng.random_range(8..=SIDE as i64) as isize;
    let along = rng.random_range(0..=(SIDE as i64 - len as i64)) as isize;
    let across = rng.random_range(2..SIDE as i64 - 2) as isize;
    let thick = rng.random_range(1..=2i64) as isize;
    for t in 0..len {
        for w in 0..thick {
            let (y, x) = match class {
                0 => (across + w, along + t),
                1 => (along + t, across + w),
                2 => (along + t, along + t + (across - SIDE as isize / 2) + w),
                _ => (along + t, SIDE as isize - 1 - (along + t) + (across - SIDE as isize / 2) + w),
            };
            if (0..SIDE as isize).contains(&y) && (0..SIDE as isize).contains(&x) {
                img[y as usize * SIDE + x as usize] += intensity;
            }
        }
    }
    img
}

fn generate(n: usize, noise: f32, rng: &mut ChaCha8Rng) -> Result<Dataset> {
    let normal = Normal::new(0.0, noise).map_err(|e| Error::invalid(format!("noise: {e}")))?;
    let mut data = Vec::with_capacity(n * SIDE * SIDE);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % NUM_CLASSES;
        data.extend(draw(rng, class, &normal));
        labels.push(class);
    }
    Dataset::new(Tensor::new(vec![n, 1, SIDE, SIDE], data)?, labels)
}

/// `(train, eval)` splits, deterministic per seed.
pub fn oriented_bars(config: &BarsConfig, seed: u64) -> Result<(Dataset, Dataset)> {
    if config.noise.is_nan() || config.noise < 0.0 {
        return Err(Error::invalid("noise must be >= 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xba25);
    let train = generate(config.train, config.noise, &mut rng)?;
    let eval = generate(config.eval, config.noise, &mut rng)?;
    Ok((train, eval))
}
