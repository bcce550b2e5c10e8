//! Guarantees and attacks: margin certification, PGD, empirical Lipschitz
//! lower bounds, and r-separation measurement.
//!
//! Certification is only sound at `p = INFINITY`, where the network is
//! 1-Lipschitz by construction; asking for a certificate at finite p is an
//! error rather than a silently wrong answer.

use std::io::Write;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::LabeledDataset;
use crate::error::Error;
use crate::losses::scaled_ce;
use crate::network::{predictions, DistanceNet, Mode};

/// Per-sample certification outcomes plus aggregate accuracies.
#[derive(Debug, Clone)]
pub struct CertificationReport {
    pub epsilon: f64,
    pub margins: Vec<f64>,
    pub correct: Vec<bool>,
    pub certified: Vec<bool>,
    /// Set by [`robust_accuracy`]-style evaluations; `None` when no attack
    /// was run.
    pub attacked_ok: Option<Vec<bool>>,
    pub clean_acc: f64,
    pub cert_acc: f64,
}

impl CertificationReport {
    /// One CSV row per sample: `index,label,prediction,margin,certified,attacked_ok`.
    pub fn write_csv<W: Write>(
        &self,
        mut out: W,
        labels: &[u8],
        preds: &[usize],
    ) -> Result<(), Error> {
        let res: std::io::Result<()> = (|| {
            writeln!(out, "index,label,prediction,margin,certified,attacked_ok")?;
            for i in 0..self.margins.len() {
                let attacked = match &self.attacked_ok {
                    Some(v) => {
                        if v[i] {
                            "1"
                        } else {
                            "0"
                        }
                    }
                    None => "",
                };
                writeln!(
                    out,
                    "{i},{},{},{},{},{attacked}",
                    labels[i],
                    preds[i],
                    self.margins[i],
                    if self.certified[i] { 1 } else { 0 },
                )?;
            }
            Ok(())
        })();
        res.map_err(|e| Error::io(std::path::Path::new("<csv>"), e))
    }
}

/// Result of an r-separation scan.
#[derive(Debug, Clone, Copy)]
pub struct SeparationReport {
    /// Half the minimum inter-class l-infinity distance.
    pub r: f64,
    /// Indices of the closest inter-class pair.
    pub argmin: (usize, usize),
    /// Number of inter-class pairs examined.
    pub pairs_examined: u64,
}

fn margin_of(logits: &[f64], y: usize) -> f64 {
    let mut runner_up = f64::NEG_INFINITY;
    for (j, &z) in logits.iter().enumerate() {
        if j != y && z > runner_up {
            runner_up = z;
        }
    }
    logits[y] - runner_up
}

fn require_certifiable(net: &DistanceNet) -> Result<(), Error> {
    if !net.p.is_infinite() {
        return Err(Error::CertificationAtFiniteP(net.p.as_f64()));
    }
    Ok(())
}

/// Margin and certificate for one sample: certified iff the prediction is
/// correct and `margin / 2 > eps`. Errors at finite p, where the margin
/// bound is unsound.
pub fn certify_sample(
    net: &DistanceNet,
    x: &[f64],
    y: usize,
    eps: f64,
) -> Result<(f64, bool), Error> {
    require_certifiable(net)?;
    if y >= net.class_count {
        return Err(Error::LabelOutOfRange {
            label: y,
            classes: net.class_count,
        });
    }
    let logits = net.infer(x, 1)?;
    let m = margin_of(&logits, y);
    let correct = predictions(&logits, net.class_count)[0] == y;
    Ok((m, correct && m / 2.0 > eps))
}

/// Batched certification over a dataset with exact aggregates.
pub fn certified_accuracy(
    net: &DistanceNet,
    data: &LabeledDataset,
    eps: f64,
) -> Result<CertificationReport, Error> {
    require_certifiable(net)?;
    if data.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n = data.len();
    let mut margins = Vec::with_capacity(n);
    let mut correct = Vec::with_capacity(n);
    let mut certified = Vec::with_capacity(n);
    const CHUNK: usize = 256;
    let mut batch = Vec::new();
    for start in (0..n).step_by(CHUNK) {
        let rows = CHUNK.min(n - start);
        batch.clear();
        batch.extend(
            data.features[start * data.dim..(start + rows) * data.dim]
                .iter()
                .map(|&v| v as f64),
        );
        let logits = net.infer(&batch, rows)?;
        let preds = predictions(&logits, net.class_count);
        for s in 0..rows {
            let y = data.labels[start + s] as usize;
            if y >= net.class_count {
                return Err(Error::LabelOutOfRange {
                    label: y,
                    classes: net.class_count,
                });
            }
            let z = &logits[s * net.class_count..(s + 1) * net.class_count];
            let m = margin_of(z, y);
            let ok = preds[s] == y;
            margins.push(m);
            correct.push(ok);
            certified.push(ok && m / 2.0 > eps);
        }
    }
    let clean_acc = correct.iter().filter(|&&b| b).count() as f64 / n as f64;
    let cert_acc = certified.iter().filter(|&&b| b).count() as f64 / n as f64;
    Ok(CertificationReport {
        epsilon: eps,
        margins,
        correct,
        certified,
        attacked_ok: None,
        clean_acc,
        cert_acc,
    })
}

/// PGD in the l-infinity ball: uniform random start, `steps` sign-gradient
/// ascent steps of `step_size` on the cross-entropy loss, projecting onto
/// `||delta||_inf <= eps` and clamping `x + delta` into `[0, 1]` after every
/// step. Returns the perturbation whose iterate had the highest loss.
pub fn pgd_attack(
    net: &DistanceNet,
    x: &[f64],
    y: usize,
    eps: f64,
    steps: usize,
    step_size: f64,
    rng: &mut impl Rng,
) -> Result<Vec<f64>, Error> {
    if steps == 0 {
        return Err(Error::InvalidConfig("pgd: steps must be positive".into()));
    }
    if eps < 0.0 {
        return Err(Error::InvalidConfig(format!("pgd: negative eps {eps}")));
    }
    if y >= net.class_count {
        return Err(Error::LabelOutOfRange {
            label: y,
            classes: net.class_count,
        });
    }
    let d = x.len();
    if eps == 0.0 {
        return Ok(vec![0.0; d]);
    }
    let mut net = net.clone();
    net.mode = Mode::Inference;

    let clamp = |delta: &mut [f64]| {
        for k in 0..d {
            delta[k] = delta[k].clamp(-eps, eps);
            delta[k] = (x[k] + delta[k]).clamp(0.0, 1.0) - x[k];
        }
    };
    let mut delta: Vec<f64> = (0..d).map(|_| rng.gen_range(-eps..=eps)).collect();
    clamp(&mut delta);

    let mut best_delta = delta.clone();
    let mut best_loss = f64::NEG_INFINITY;
    let mut xp = vec![0.0f64; d];
    for step in 0..=steps {
        for k in 0..d {
            xp[k] = x[k] + delta[k];
        }
        let (logits, trace) = net.forward(&xp, 1, true)?;
        let (loss, grad_logits, _) = scaled_ce(&logits, y, 1.0)?;
        if loss > best_loss {
            best_loss = loss;
            best_delta.copy_from_slice(&delta);
        }
        if step == steps {
            break;
        }
        let (_, gx) = net.backward_with_input_grad(trace.as_ref().unwrap(), &grad_logits)?;
        for k in 0..d {
            delta[k] += step_size * gx[k].signum();
        }
        clamp(&mut delta);
    }
    Ok(best_delta)
}

/// Fraction of samples still classified correctly after a PGD attack with
/// the default step size `2.5 * eps / steps`. Also fills in `attacked_ok`
/// on a certification-style report when the net is at `p = INFINITY`.
pub fn robust_accuracy(
    net: &DistanceNet,
    data: &LabeledDataset,
    eps: f64,
    steps: usize,
    seed: u64,
) -> Result<f64, Error> {
    if data.is_empty() {
        return Err(Error::EmptyInput);
    }
    let step_size = 2.5 * eps / steps as f64;
    let mut survived = 0usize;
    let mut x = vec![0.0f64; data.dim];
    for i in 0..data.len() {
        for (k, &v) in data.sample(i).iter().enumerate() {
            x[k] = v as f64;
        }
        let y = data.labels[i] as usize;
        // per-sample RNG stream keeps results independent of iteration order
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let delta = if eps > 0.0 {
            pgd_attack(net, &x, y, eps, steps, step_size, &mut rng)?
        } else {
            vec![0.0; data.dim]
        };
        let xp: Vec<f64> = x.iter().zip(&delta).map(|(a, b)| a + b).collect();
        let logits = net.infer(&xp, 1)?;
        if predictions(&logits, net.class_count)[0] == y {
            survived += 1;
        }
    }
    Ok(survived as f64 / data.len() as f64)
}

/// Empirical Lipschitz lower bound: for each sample and each output index
/// `j`, run 20 PGD steps of size `eps / 4` maximizing `|g_j(x+delta) -
/// g_j(x)|` over the eps-ball; the per-sample estimate is the max over `j`.
/// Returns `(per_sample, mean, max)`.
pub fn lipschitz_lower_bound(
    net: &DistanceNet,
    data: &LabeledDataset,
    eps: f64,
    seed: u64,
) -> Result<(Vec<f64>, f64, f64), Error> {
    if data.is_empty() {
        return Err(Error::EmptyInput);
    }
    if eps <= 0.0 {
        return Err(Error::InvalidConfig(format!("lipschitz: eps must be positive, got {eps}")));
    }
    const STEPS: usize = 20;
    let step_size = eps / 4.0;
    let mut net = net.clone();
    net.mode = Mode::Inference;
    let d = data.dim;
    let classes = net.class_count;

    let mut estimates = Vec::with_capacity(data.len());
    let mut x = vec![0.0f64; d];
    let mut xp = vec![0.0f64; d];
    for i in 0..data.len() {
        for (k, &v) in data.sample(i).iter().enumerate() {
            x[k] = v as f64;
        }
        let base = net.infer(&x, 1)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let mut best = 0.0f64;
        for j in 0..classes {
            // ascend +g_j and -g_j; |difference| covers both directions
            for &sign in &[1.0f64, -1.0] {
                let mut delta: Vec<f64> = (0..d).map(|_| rng.gen_range(-eps..=eps)).collect();
                let mut upstream = vec![0.0f64; classes];
                upstream[j] = sign;
                for _ in 0..STEPS {
                    for k in 0..d {
                        xp[k] = x[k] + delta[k];
                    }
                    let (logits, trace) = net.forward(&xp, 1, true)?;
                    best = best.max((logits[j] - base[j]).abs() / eps);
                    let (_, gx) =
                        net.backward_with_input_grad(trace.as_ref().unwrap(), &upstream)?;
                    for k in 0..d {
                        delta[k] = (delta[k] + step_size * gx[k].signum()).clamp(-eps, eps);
                    }
                }
                for k in 0..d {
                    xp[k] = x[k] + delta[k];
                }
                let logits = net.infer(&xp, 1)?;
                best = best.max((logits[j] - base[j]).abs() / eps);
            }
        }
        estimates.push(best);
    }
    let mean = estimates.iter().sum::<f64>() / estimates.len() as f64;
    let max = estimates.iter().cloned().fold(0.0f64, f64::max);
    Ok((estimates, mean, max))
}

/// Half the minimum inter-class l-infinity distance over the first
/// `subset_limit` samples (all if 0), with per-pair early exit: a pair is
/// abandoned as soon as one coordinate difference exceeds the running
/// minimum.
pub fn r_separation(data: &LabeledDataset, subset_limit: usize) -> Result<SeparationReport, Error> {
    let n = if subset_limit == 0 {
        data.len()
    } else {
        subset_limit.min(data.len())
    };
    if data.labels[..n].iter().collect::<std::collections::HashSet<_>>().len() < 2 {
        return Err(Error::Dataset(
            "r-separation needs at least two classes in the examined subset".into(),
        ));
    }
    let mut min_dist = f64::INFINITY;
    let mut argmin = (0usize, 0usize);
    let mut pairs = 0u64;
    for i in 0..n {
        let xi = data.sample(i);
        for j in (i + 1)..n {
            if data.labels[i] == data.labels[j] {
                continue;
            }
            pairs += 1;
            let xj = data.sample(j);
            let mut max_c = 0.0f64;
            for k in 0..data.dim {
                let dd = (xi[k] - xj[k]).abs() as f64;
                if dd > max_c {
                    max_c = dd;
                    if max_c >= min_dist {
                        break; // this pair cannot improve the minimum
                    }
                }
            }
            if max_c < min_dist {
                min_dist = max_c;
                argmin = (i, j);
            }
        }
    }
    Ok(SeparationReport {
        r: min_dist / 2.0,
        argmin,
        pairs_examined: pairs,
    })
}
