//! Dataset loading: MNIST (IDX), CIFAR-10 (binary batches), and a
//! synthetic well-separated mixture for tests and demos.
//!
//! All images are stored flattened as f32 in `[0, 1]`, row-major with the
//! channel outermost for CIFAR. Accumulation downstream is f64; f32 storage
//! halves the working set of the training loop.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Error;

/// A dataset of flattened images with integer labels.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    /// `len * dim` features, sample-major.
    pub features: Vec<f32>,
    pub labels: Vec<u8>,
    pub dim: usize,
    /// (channels, height, width) of one sample, for augmentation.
    pub geometry: (usize, usize, usize),
    pub class_count: usize,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    /// The first `n` samples as a new dataset (all if `n >= len`).
    pub fn head(&self, n: usize) -> LabeledDataset {
        let n = n.min(self.len());
        LabeledDataset {
            features: self.features[..n * self.dim].to_vec(),
            labels: self.labels[..n].to_vec(),
            dim: self.dim,
            geometry: self.geometry,
            class_count: self.class_count,
        }
    }

    fn validate(self, context: &'static str) -> Result<Self, Error> {
        let (c, h, w) = self.geometry;
        if c * h * w != self.dim || self.features.len() != self.labels.len() * self.dim {
            return Err(Error::Dataset(format!("{context}: inconsistent dimensions")));
        }
        if let Some(&l) = self.labels.iter().find(|&&l| l as usize >= self.class_count) {
            return Err(Error::Dataset(format!(
                "{context}: label {l} out of range for {} classes",
                self.class_count
            )));
        }
        Ok(self)
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>, Error> {
    let mut buf = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    Ok(buf)
}

fn be_u32(b: &[u8], off: usize) -> u32 {
    u32::from_be_bytes([b[off], b[off + 1], b[off + 2], b[off + 3]])
}

fn read_idx_images(path: &Path) -> Result<(Vec<f32>, usize, usize), Error> {
    let buf = read_file(path)?;
    if buf.len() < 16 || be_u32(&buf, 0) != 0x0000_0803 {
        return Err(Error::Dataset(format!(
            "{}: not an IDX image file (bad magic)",
            path.display()
        )));
    }
    let n = be_u32(&buf, 4) as usize;
    let h = be_u32(&buf, 8) as usize;
    let w = be_u32(&buf, 12) as usize;
    if buf.len() != 16 + n * h * w {
        return Err(Error::Dataset(format!(
            "{}: expected {} pixel bytes, found {}",
            path.display(),
            n * h * w,
            buf.len() - 16
        )));
    }
    let pixels = buf[16..].iter().map(|&b| b as f32 / 255.0).collect();
    Ok((pixels, h, w))
}

fn read_idx_labels(path: &Path) -> Result<Vec<u8>, Error> {
    let buf = read_file(path)?;
    if buf.len() < 8 || be_u32(&buf, 0) != 0x0000_0801 {
        return Err(Error::Dataset(format!(
            "{}: not an IDX label file (bad magic)",
            path.display()
        )));
    }
    let n = be_u32(&buf, 4) as usize;
    if buf.len() != 8 + n {
        return Err(Error::Dataset(format!(
            "{}: expected {n} label bytes, found {}",
            path.display(),
            buf.len() - 8
        )));
    }
    Ok(buf[8..].to_vec())
}

/// Load the MNIST train or test split from a directory holding the four
/// standard IDX files (`train-images-idx3-ubyte` etc., uncompressed).
pub fn load_mnist(dir: &Path, train: bool) -> Result<LabeledDataset, Error> {
    let (img, lbl) = if train {
        ("train-images-idx3-ubyte", "train-labels-idx1-ubyte")
    } else {
        ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")
    };
    let (features, h, w) = read_idx_images(&dir.join(img))?;
    let labels = read_idx_labels(&dir.join(lbl))?;
    LabeledDataset {
        features,
        labels,
        dim: h * w,
        geometry: (1, h, w),
        class_count: 10,
    }
    .validate("mnist")
}

/// Load CIFAR-10 from a directory of binary batches (`data_batch_1.bin` ..
/// `data_batch_5.bin` for train, `test_batch.bin` for test).
pub fn load_cifar10(dir: &Path, train: bool) -> Result<LabeledDataset, Error> {
    let names: Vec<String> = if train {
        (1..=5).map(|i| format!("data_batch_{i}.bin")).collect()
    } else {
        vec!["test_batch.bin".into()]
    };
    const REC: usize = 3073; // 1 label byte + 3*32*32 pixels
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for name in &names {
        let path = dir.join(name);
        let buf = read_file(&path)?;
        if buf.is_empty() || buf.len() % REC != 0 {
            return Err(Error::Dataset(format!(
                "{}: size {} is not a multiple of the 3073-byte record",
                path.display(),
                buf.len()
            )));
        }
        for rec in buf.chunks_exact(REC) {
            labels.push(rec[0]);
            features.extend(rec[1..].iter().map(|&b| b as f32 / 255.0));
        }
    }
    LabeledDataset {
        features,
        labels,
        dim: 3072,
        geometry: (3, 32, 32),
        class_count: 10,
    }
    .validate("cifar10")
}

/// Generate a synthetic dataset of `n` points in `[0, 1]^dim`: `class_count`
/// cluster centers, each sample a center plus uniform noise of radius
/// `noise`, with centers re-drawn until every pair is at least
/// `2 * (noise + margin)` apart in l-infinity so the classes are
/// r-separated with `r > 2 * margin`.
pub fn gen_synthetic(
    n: usize,
    dim: usize,
    class_count: usize,
    noise: f64,
    margin: f64,
    seed: u64,
) -> Result<LabeledDataset, Error> {
    if n == 0 || dim == 0 || class_count == 0 {
        return Err(Error::Dataset("synthetic: empty shape".into()));
    }
    if noise < 0.0 || margin <= 0.0 || noise + margin >= 0.5 {
        return Err(Error::Dataset(format!(
            "synthetic: need 0 <= noise, 0 < margin, noise + margin < 0.5; \
             got noise={noise} margin={margin}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let min_sep = 2.0 * (noise + margin);
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(class_count);
    let mut attempts = 0usize;
    while centers.len() < class_count {
        attempts += 1;
        if attempts > 100_000 {
            return Err(Error::Dataset(format!(
                "synthetic: could not place {class_count} centers at \
                 separation {min_sep} in {dim} dimensions"
            )));
        }
        let c: Vec<f64> = (0..dim)
            .map(|_| rng.gen_range(noise + margin..1.0 - noise - margin))
            .collect();
        let ok = centers.iter().all(|o| {
            c.iter()
                .zip(o)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max)
                >= min_sep
        });
        if ok {
            centers.push(c);
        }
    }
    let mut features = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = i % class_count;
        labels.push(y as u8);
        for k in 0..dim {
            let v = centers[y][k] + rng.gen_range(-noise..=noise);
            features.push(v as f32);
        }
    }
    LabeledDataset {
        features,
        labels,
        dim,
        geometry: (1, 1, dim),
        class_count,
    }
    .validate("synthetic")
}
