//! Explicit weight assignments that realize a perfect certified-robust
//! classifier on any r-separated dataset.
//!
//! Both builders produce a net computing, for every class j,
//! `[g(x)]_j = -min over samples i of class j of ||x - x_i||_inf`,
//! i.e. the negative per-class nearest-neighbor distance. On an
//! r-separated dataset every training point then has margin at least 2r,
//! so margin certification at `eps = r` accepts all of them.
//!
//! The two-layer form spends one hidden neuron per sample. The L-layer
//! form streams the samples through the depth in chunks of
//! `ceil(n / (L-1))`, keeping the input available to every layer through
//! 2d fetch-element neurons and folding per-chunk distances into K
//! running prefix-minimum neurons.

use crate::core_math::PExponent;
use crate::data::LabeledDataset;
use crate::error::Error;
use crate::network::{DistanceNet, LayerParams, Mode};

fn max_inf_norm(data: &LabeledDataset) -> f64 {
    data.features
        .iter()
        .map(|&v| (v as f64).abs())
        .fold(0.0, f64::max)
}

fn check_classes(data: &LabeledDataset) -> Result<(), Error> {
    if data.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut seen = vec![false; data.class_count];
    for &l in &data.labels {
        seen[l as usize] = true;
    }
    let empty: Vec<usize> = (0..data.class_count).filter(|&j| !seen[j]).collect();
    if !empty.is_empty() {
        return Err(Error::EmptyClasses(empty));
    }
    Ok(())
}

/// The two-layer construction: hidden neuron i computes `||x - x_i||_inf`
/// (weights are the sample itself, zero bias), and output j folds the
/// class-j hidden neurons through `w = C * indicator(y_i = j), b = -C`
/// with `C = 4 * max_i ||x_i||_inf` (at least 1), yielding the negative
/// nearest-neighbor distance per class.
pub fn build_two_layer(data: &LabeledDataset) -> Result<DistanceNet, Error> {
    check_classes(data)?;
    let n = data.len();
    let d = data.dim;
    let k = data.class_count;
    let c = (4.0 * max_inf_norm(data)).max(1.0);

    let mut l1 = LayerParams::zeros(d, n);
    l1.weights.copy_from_slice(&data.features);

    let mut l2 = LayerParams::zeros(n, k);
    for j in 0..k {
        for i in 0..n {
            if data.labels[i] as usize == j {
                l2.weights[j * n + i] = c as f32;
            }
        }
        l2.bias[j] = -(c as f32);
    }

    Ok(DistanceNet {
        layers: vec![l1, l2],
        p: PExponent::Infinity,
        temperature: 1.0,
        input_dim: d,
        class_count: k,
        mode: Mode::Inference,
    })
}

/// Per-layer constant for the deep construction: each layer's C must
/// dominate the input bound plus the largest activation the previous
/// layer can produce. Activations are bounded by `C_1` at every depth
/// (the empty-prefix sentinel keeps its original `-C_1` offset as it
/// propagates, it never compounds), so a single constant serves all
/// layers past the first. Rounding up to powers of two keeps the
/// `sample +- C` weight entries exactly representable in f32.
fn layer_constants(l_layers: usize, m: f64) -> Vec<f64> {
    let pow2 = |v: f64| 2f64.powi(v.log2().ceil() as i32);
    let c1 = pow2((8.0 * m).max(1.0));
    let c_rest = pow2(4.0 * (m + c1));
    let mut cs = vec![c_rest; l_layers];
    cs[0] = c1;
    cs
}

/// The L-layer construction with hidden width exactly
/// `ceil(n / (L-1)) + K + 2d`. Each hidden layer is laid out as the
/// blocks `[I | I~ | O | S]`:
///
/// - `I`, `I~` (d neurons each): the input, passed through via the
///   fetch-element assignment `w_j = -C, b = -C`;
/// - `O` (K neurons): the running prefix minimum `h_{j, ceil(n(l-1)/(L-1))}`
///   of per-class distances over all samples streamed so far;
/// - `S` (`ceil(n / (L-1))` neurons): `||x - x_i||_inf` for this layer's
///   chunk of samples, computed directly at layer 1 and through the
///   paired `I` / `I~` copies (`w = x_i -+ C`) afterwards.
///
/// The first layer's `O` neurons carry no prefix yet; they output
/// `||x||_inf - C`, which is negative enough to act as the empty-prefix
/// sentinel and is absorbed once a real distance enters the minimum.
pub fn build_multi_layer(data: &LabeledDataset, l_layers: usize) -> Result<DistanceNet, Error> {
    if l_layers < 2 {
        return Err(Error::InvalidConfig(format!(
            "multi-layer construction needs L >= 2, got {l_layers}"
        )));
    }
    check_classes(data)?;
    let n = data.len();
    let d = data.dim;
    let k = data.class_count;
    let chunk = n.div_ceil(l_layers - 1);
    let width = 2 * d + k + chunk;
    let cs = layer_constants(l_layers, max_inf_norm(data));
    // chunk boundary after hidden layer l (1-based): ceil(n*l / (L-1))
    let cut = |l: usize| (n * l).div_ceil(l_layers - 1).min(n);

    let mut layers = Vec::with_capacity(l_layers);
    for l in 1..=l_layers {
        let c = cs[l - 1];
        let cf = c as f32;
        let n_in = if l == 1 { d } else { width };
        let is_output = l == l_layers;
        let n_out = if is_output { k } else { width };
        let mut lp = LayerParams::zeros(n_in, n_out);

        if !is_output {
            // I and I~: fetch input coordinate i (from x directly at
            // layer 1, from the I block afterwards)
            for i in 0..2 * d {
                let row = &mut lp.weights[i * n_in..(i + 1) * n_in];
                row[i % d] = -cf;
                lp.bias[i] = -cf;
            }
            // S: distances to this layer's chunk of samples
            let (lo, hi) = (cut(l - 1), cut(l));
            for (slot, i) in (lo..hi).enumerate() {
                let row = &mut lp.weights[(2 * d + k + slot) * n_in..(2 * d + k + slot + 1) * n_in];
                let xi = data.sample(i);
                if l == 1 {
                    row[..d].copy_from_slice(xi);
                } else {
                    for kk in 0..d {
                        row[kk] = xi[kk] - cf;
                        row[d + kk] = xi[kk] + cf;
                    }
                    lp.bias[2 * d + k + slot] = -cf;
                }
            }
        }

        // O (or the K output neurons): prefix-minimum merge. At layer 1
        // there is no previous prefix; w = 0, b = -C makes the sentinel.
        let o_base = if is_output { 0 } else { 2 * d };
        for j in 0..k {
            let row = &mut lp.weights[(o_base + j) * n_in..(o_base + j + 1) * n_in];
            if l > 1 {
                row[2 * d + j] = -cf; // previous prefix value
                let (lo, hi) = (cut(l - 2), cut(l - 1));
                for (slot, i) in (lo..hi).enumerate() {
                    if data.labels[i] as usize == j {
                        row[2 * d + k + slot] = cf;
                    }
                }
            }
            lp.bias[o_base + j] = -cf;
        }
        layers.push(lp);
    }

    Ok(DistanceNet {
        layers,
        p: PExponent::Infinity,
        temperature: 1.0,
        input_dim: d,
        class_count: k,
        mode: Mode::Inference,
    })
}
