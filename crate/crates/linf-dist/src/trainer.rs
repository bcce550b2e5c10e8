//! The full training loop: augmentation, p / lambda / lr schedules,
//! composite loss, Adam, and per-epoch certified evaluation.
//!
//! Certified metrics reported during relaxation epochs are always computed
//! with p temporarily set to infinity in inference mode: margin
//! certification is only sound for the 1-Lipschitz net, and evaluating the
//! relaxed net would report optimistic nonsense.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::certification::{certified_accuracy, robust_accuracy};
use crate::core_math::PExponent;
use crate::data::LabeledDataset;
use crate::error::Error;
use crate::losses::{sample_loss, LossSpec};
use crate::network::{predictions, DistanceNet, ForwardTrace, Mode};
use crate::optimization::{cosine_lr, lambda_schedule, p_schedule, AdamState, ScheduleConfig};

/// Random-crop / horizontal-flip augmentation parameters.
#[derive(Debug, Clone, Copy, Default)]
pub struct AugmentSpec {
    /// Zero-padding added on every image border before the random crop.
    pub pad: usize,
    /// Flip horizontally with probability 1/2.
    pub flip: bool,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// Layer sizes, `[input_dim, hidden..., class_count]`.
    pub dims: Vec<usize>,
    pub schedule: ScheduleConfig,
    pub loss: LossSpec,
    pub batch_size: usize,
    pub seed: u64,
    pub augment: AugmentSpec,
    /// Perturbation radius used for the per-epoch certified metrics.
    pub eps: f64,
    /// Evaluate on at most this many samples per split (0 = all).
    pub eval_subset: usize,
    /// Write the metrics CSV here when set.
    pub metrics_path: Option<PathBuf>,
    /// Gaussian noise added to the identity-map initialization.
    pub init_noise_std: f64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if self.dims.len() < 2 || self.dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidConfig(format!("bad dims {:?}", self.dims)));
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidConfig(
                "batch_size must be >= 2 (mean-shift needs a batch)".into(),
            ));
        }
        if self.eps < 0.0 {
            return Err(Error::InvalidConfig(format!("negative eps {}", self.eps)));
        }
        if self.init_noise_std < 0.0 {
            return Err(Error::InvalidConfig("negative init_noise_std".into()));
        }
        self.schedule.validate()
    }
}

/// One epoch of logged metrics.
#[derive(Debug, Clone, Copy)]
pub struct MetricsRow {
    pub epoch: usize,
    pub p: f64,
    pub lambda: f64,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub train_cert_acc: f64,
    pub test_acc: f64,
    pub test_cert_acc: f64,
    pub wall_seconds: f64,
}

pub const METRICS_HEADER: &str =
    "epoch,p,lambda,lr,train_loss,train_acc,train_cert_acc,test_acc,test_cert_acc,wall_seconds";

impl MetricsRow {
    pub fn csv_line(&self) -> String {
        let p = if self.p.is_infinite() {
            "inf".to_string()
        } else {
            format!("{}", self.p)
        };
        format!(
            "{},{p},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.lambda,
            self.lr,
            self.train_loss,
            self.train_acc,
            self.train_cert_acc,
            self.test_acc,
            self.test_cert_acc,
            self.wall_seconds
        )
    }
}

fn stream_seed(seed: u64, a: u64, b: u64) -> u64 {
    // splitmix-style mixing keeps per-(epoch, batch) streams independent
    let mut z = seed
        .wrapping_add(a.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(b.wrapping_mul(0xbf58_476d_1ce4_e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Zero-pad each image by `spec.pad`, randomly crop back to the original
/// size, and (optionally) flip horizontally with probability 1/2. Operates
/// in place on a `rows x dim` batch.
pub fn augment_batch(
    batch: &mut [f64],
    rows: usize,
    geometry: (usize, usize, usize),
    spec: &AugmentSpec,
    rng: &mut impl Rng,
) -> Result<(), Error> {
    let (c, h, w) = geometry;
    let dim = c * h * w;
    if batch.len() != rows * dim {
        return Err(Error::DimMismatch {
            expected: rows * dim,
            got: batch.len(),
            context: "augment_batch",
        });
    }
    if spec.pad == 0 && !spec.flip {
        return Ok(());
    }
    let pad = spec.pad as isize;
    let mut scratch = vec![0.0f64; dim];
    for s in 0..rows {
        let img = &mut batch[s * dim..(s + 1) * dim];
        if spec.pad > 0 {
            // crop offset in the padded image, expressed as a shift of the
            // source window: dy, dx in [-pad, pad]
            let dy = rng.gen_range(-pad..=pad);
            let dx = rng.gen_range(-pad..=pad);
            scratch.fill(0.0);
            for ch in 0..c {
                for y in 0..h as isize {
                    let sy = y + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for x in 0..w as isize {
                        let sx = x + dx;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        scratch[ch * h * w + y as usize * w + x as usize] =
                            img[ch * h * w + sy as usize * w + sx as usize];
                    }
                }
            }
            img.copy_from_slice(&scratch);
        }
        if spec.flip && rng.gen::<bool>() {
            for ch in 0..c {
                for y in 0..h {
                    img[ch * h * w + y * w..ch * h * w + (y + 1) * w].reverse();
                }
            }
        }
    }
    Ok(())
}

/// Clean, certified, and PGD-robust accuracy at radius `eps`. The net must
/// be at `p = INFINITY` (certification is unsound otherwise). With
/// `attack_steps = 0` the attack is skipped and clean accuracy is reported
/// in its place.
pub fn evaluate(
    net: &DistanceNet,
    data: &LabeledDataset,
    eps: f64,
    attack_steps: usize,
) -> Result<(f64, f64, f64), Error> {
    let mut net = net.clone();
    net.mode = Mode::Inference;
    let rep = certified_accuracy(&net, data, eps)?;
    let pgd = if eps > 0.0 && attack_steps > 0 {
        robust_accuracy(&net, data, eps, attack_steps, 0x5eed)?
    } else {
        rep.clean_acc
    };
    Ok((rep.clean_acc, rep.cert_acc, pgd))
}

/// Clean and certified accuracy only (the per-epoch metric path, where PGD
/// would dominate the runtime).
fn quick_eval(net: &DistanceNet, data: &LabeledDataset, eps: f64) -> Result<(f64, f64), Error> {
    let mut at_inf = net.clone();
    at_inf.p = PExponent::Infinity;
    at_inf.mode = Mode::Inference;
    let rep = certified_accuracy(&at_inf, data, eps)?;
    Ok((rep.clean_acc, rep.cert_acc))
}

/// Run the staged training procedure and return the final net (at
/// `p = INFINITY`, inference mode) plus one metrics row per epoch.
pub fn train(
    config: &TrainConfig,
    train_set: &LabeledDataset,
    test_set: &LabeledDataset,
) -> Result<(DistanceNet, Vec<MetricsRow>), Error> {
    config.validate()?;
    if train_set.is_empty() || test_set.is_empty() {
        return Err(Error::EmptyInput);
    }
    if config.dims[0] != train_set.dim {
        return Err(Error::DimMismatch {
            expected: train_set.dim,
            got: config.dims[0],
            context: "train config input dim",
        });
    }
    if *config.dims.last().unwrap() < train_set.class_count {
        return Err(Error::InvalidConfig(format!(
            "output width {} < {} classes",
            config.dims.last().unwrap(),
            train_set.class_count
        )));
    }

    let mut net = DistanceNet::init_identity(&config.dims, config.seed, config.init_noise_std)?;
    net.mode = Mode::Training;
    let mut adam = AdamState::new(&net);
    let sched = &config.schedule;
    let total = sched.total_epochs();

    let eval_train = train_set.head(if config.eval_subset == 0 {
        train_set.len()
    } else {
        config.eval_subset
    });
    let eval_test = test_set.head(if config.eval_subset == 0 {
        test_set.len()
    } else {
        config.eval_subset
    });

    let mut writer = match &config.metrics_path {
        Some(path) => {
            let f = File::create(path).map_err(|e| Error::io(path, e))?;
            let mut wtr = BufWriter::new(f);
            let subset = eval_train.len().max(eval_test.len());
            writeln!(wtr, "{METRICS_HEADER}")
                .and_then(|_| writeln!(wtr, "# eval_subset={subset}"))
                .map_err(|e| Error::io(path, e))?;
            Some((wtr, path.clone()))
        }
        None => None,
    };

    let start = Instant::now();
    let mut rows = Vec::with_capacity(total);
    let n = train_set.len();
    let dim = train_set.dim;
    let classes = net.class_count;
    let mut indices: Vec<usize> = (0..n).collect();
    let mut batch = Vec::with_capacity(config.batch_size * dim);
    let mut labels = Vec::with_capacity(config.batch_size);
    let mut trace = ForwardTrace::default();

    for epoch in 0..total {
        let p = p_schedule(epoch, sched)?;
        let lambda = lambda_schedule(epoch, sched)?;
        let lr = cosine_lr(epoch, total, sched.lr0)?;
        net.p = p;
        net.mode = Mode::Training;

        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(stream_seed(config.seed, epoch as u64, 0));
        indices.shuffle(&mut shuffle_rng);

        let mut loss_sum = 0.0f64;
        let mut correct = 0usize;
        let mut seen = 0usize;
        for (batch_idx, chunk) in indices.chunks(config.batch_size).enumerate() {
            if chunk.len() < 2 {
                continue; // mean-shift needs at least two samples
            }
            let rows_b = chunk.len();
            batch.clear();
            labels.clear();
            for &i in chunk {
                batch.extend(train_set.sample(i).iter().map(|&v| v as f64));
                labels.push(train_set.labels[i] as usize);
            }
            let mut aug_rng = ChaCha8Rng::seed_from_u64(stream_seed(
                config.seed,
                epoch as u64,
                1 + batch_idx as u64,
            ));
            augment_batch(
                &mut batch,
                rows_b,
                train_set.geometry,
                &config.augment,
                &mut aug_rng,
            )?;

            let logits = net.forward_with_trace(&batch, rows_b, true, &mut trace)?;
            let preds = predictions(&logits, classes);
            let mut logits_grad = vec![0.0f64; rows_b * classes];
            let mut grad_s = 0.0f64;
            let mut batch_loss = 0.0f64;
            let inv_b = 1.0 / rows_b as f64;
            for s in 0..rows_b {
                let z = &logits[s * classes..(s + 1) * classes];
                let (l, gz, gs) = sample_loss(&config.loss, lambda, z, labels[s], net.temperature)?;
                batch_loss += l;
                grad_s += gs;
                for j in 0..classes {
                    logits_grad[s * classes + j] = gz[j] * inv_b;
                }
                if preds[s] == labels[s] {
                    correct += 1;
                }
            }
            batch_loss *= inv_b;
            if batch_loss.is_nan() {
                return Err(Error::NanLoss { epoch, batch: batch_idx });
            }
            loss_sum += batch_loss * rows_b as f64;
            seen += rows_b;

            let mut grads = net.backward(&trace, &logits_grad)?;
            grads.temperature = grad_s * inv_b;
            adam.step(&mut net, &grads, lr, lr / 5.0)?;
        }

        let (train_acc_eval, train_cert) = quick_eval(&net, &eval_train, config.eps)?;
        let _ = train_acc_eval; // train_acc reports the running batch accuracy
        let (test_acc, test_cert) = quick_eval(&net, &eval_test, config.eps)?;
        let row = MetricsRow {
            epoch,
            p: p.as_f64(),
            lambda,
            lr,
            train_loss: if seen > 0 { loss_sum / seen as f64 } else { 0.0 },
            train_acc: if seen > 0 {
                correct as f64 / seen as f64
            } else {
                0.0
            },
            train_cert_acc: train_cert,
            test_acc,
            test_cert_acc: test_cert,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        if let Some((wtr, path)) = &mut writer {
            writeln!(wtr, "{}", row.csv_line())
                .and_then(|_| wtr.flush())
                .map_err(|e| Error::io(path.as_path(), e))?;
        }
        rows.push(row);
    }

    net.p = PExponent::Infinity;
    net.mode = Mode::Inference;
    Ok((net, rows))
}
