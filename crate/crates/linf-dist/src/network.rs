//! The l-infinity-distance net: parameters, forward pass at any `p`, exact
//! backward pass, identity-map initialization, the closed-form Lipschitz
//! upper bound and checkpoint I/O.
//!
//! Parameters are stored in 32-bit buffers (matching the checkpoint wire
//! format); all arithmetic accumulates in 64-bit. Mean-shift normalization
//! (per-neuron mean subtraction, no scaling) is applied to every
//! intermediate layer, never to the output layer.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::core_math::{self, PExponent, LANES};
use crate::error::Error;

const RUNNING_MEAN_MOMENTUM: f64 = 0.1;

/// One distance layer: weight rows `w^(l,i)`, biases and the mean-shift
/// running-mean state.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub n_in: usize,
    pub n_out: usize,
    /// Row-major `n_out x n_in`.
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
    pub running_mean: Vec<f32>,
}

impl LayerParams {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        LayerParams {
            n_in,
            n_out,
            weights: vec![0.0; n_in * n_out],
            bias: vec![0.0; n_out],
            running_mean: vec![0.0; n_out],
        }
    }

    pub fn weight_row(&self, i: usize) -> &[f32] {
        &self.weights[i * self.n_in..(i + 1) * self.n_in]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Training,
    Inference,
}

#[derive(Debug, Clone)]
pub struct DistanceNet {
    pub layers: Vec<LayerParams>,
    pub p: PExponent,
    pub temperature: f64,
    pub input_dim: usize,
    pub class_count: usize,
    pub mode: Mode,
}

/// Per-layer buffers captured during a forward pass, consumed by
/// [`DistanceNet::backward`]. Reusable across batches to avoid large
/// reallocations.
#[derive(Debug, Default)]
pub struct ForwardTrace {
    pub rows: usize,
    pub mode: Mode,
    pub p: PExponent,
    /// Input of each layer, `rows x n_in` each; `layer_inputs[0]` is the batch.
    pub layer_inputs: Vec<Vec<f64>>,
    /// Distance values before mean-shift and bias, `rows x n_out`.
    pub pre_shift: Vec<Vec<f64>>,
    /// Per-neuron batch means (training mode; zeros where mean-shift is off).
    pub batch_means: Vec<Vec<f64>>,
    /// Per (row, neuron) max coordinate difference.
    pub maxes: Vec<Vec<f64>>,
    /// Per (row, neuron) `S = sum_k (|v_k|/m)^p` (finite p only).
    pub sums: Vec<Vec<f64>>,
    /// Per (row, neuron, coord) `(|v_k|/m)^p` (finite p only).
    pub pow_cache: Vec<Vec<f32>>,
}

impl Default for Mode {
    fn default() -> Self {
        Mode::Inference
    }
}

impl Default for PExponent {
    fn default() -> Self {
        PExponent::Infinity
    }
}

/// Gradients for every parameter tensor of a net.
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub layers: Vec<LayerGrads>,
    pub temperature: f64,
}

#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ParamGrads {
    pub fn zeros_like(net: &DistanceNet) -> Self {
        ParamGrads {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
            temperature: 0.0,
        }
    }

    pub fn scale(&mut self, c: f64) {
        for l in &mut self.layers {
            for g in &mut l.weights {
                *g *= c;
            }
            for g in &mut l.bias {
                *g *= c;
            }
        }
        self.temperature *= c;
    }
}

static RANGE_WARNED: AtomicBool = AtomicBool::new(false);

// grow-only: contents are fully overwritten by the forward pass, so no
// re-zeroing (which dominates runtime for the big per-element pow cache)
fn resize(buf: &mut Vec<f64>, n: usize) {
    buf.resize(n, 0.0);
}

impl DistanceNet {
    /// Identity-map initialization: neuron `i` of each layer fetches input
    /// coordinate `i mod n_in` (weight -1 there, 0 elsewhere) plus Gaussian
    /// noise on every weight. Biases, running means zero; temperature 1.
    pub fn init_identity(dims: &[usize], seed: u64, noise_std: f64) -> Result<Self, Error> {
        if dims.len() < 2 {
            return Err(Error::InvalidConfig(
                "init_identity needs at least input and output dims".into(),
            ));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidConfig("zero layer width".into()));
        }
        if noise_std < 0.0 {
            return Err(Error::InvalidConfig("negative noise_std".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0f64, noise_std.max(f64::MIN_POSITIVE)).unwrap();
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for l in 1..dims.len() {
            let (n_in, n_out) = (dims[l - 1], dims[l]);
            let mut layer = LayerParams::zeros(n_in, n_out);
            for i in 0..n_out {
                let target = i % n_in;
                for k in 0..n_in {
                    let base = if k == target { -1.0 } else { 0.0 };
                    let noise = if noise_std > 0.0 { normal.sample(&mut rng) } else { 0.0 };
                    layer.weights[i * n_in + k] = (base + noise) as f32;
                }
            }
            layers.push(layer);
        }
        Ok(DistanceNet {
            layers,
            p: PExponent::Infinity,
            temperature: 1.0,
            input_dim: dims[0],
            class_count: *dims.last().unwrap(),
            mode: Mode::Training,
        })
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    /// Closed-form Lipschitz upper bound w.r.t. the l-infinity norm:
    /// `prod_l n_{l-1}^(1/p)` (1 at `p = inf`).
    pub fn lipschitz_upper_bound(&self) -> f64 {
        match self.p {
            PExponent::Infinity => 1.0,
            PExponent::Finite(p) => {
                let mut bound = 1.0f64;
                for l in &self.layers {
                    bound *= (l.n_in as f64).powf(1.0 / p);
                }
                bound
            }
        }
    }

    /// Forward pass over a row-major batch (`rows x input_dim`). In training
    /// mode the running means are updated (momentum 0.1), which is why this
    /// takes `&mut self`. Set `keep_trace` to capture the buffers needed by
    /// [`Self::backward`].
    pub fn forward(
        &mut self,
        batch: &[f64],
        rows: usize,
        keep_trace: bool,
    ) -> Result<(Vec<f64>, Option<ForwardTrace>), Error> {
        let mut trace = ForwardTrace::default();
        let logits = self.forward_with_trace(batch, rows, keep_trace, &mut trace)?;
        Ok((logits, if keep_trace { Some(trace) } else { None }))
    }

    /// Inference-mode forward for a shared (immutable) net.
    pub fn infer(&self, batch: &[f64], rows: usize) -> Result<Vec<f64>, Error> {
        if self.mode != Mode::Inference {
            return Err(Error::InvalidConfig(
                "infer() requires inference mode".into(),
            ));
        }
        // running means are not touched in inference mode, the clone is cheap
        // bookkeeping-only for the &mut signature
        let mut me = self.clone();
        let (logits, _) = me.forward(batch, rows, false)?;
        Ok(logits)
    }

    /// Forward pass writing trace buffers into `trace` (reused allocations).
    pub fn forward_with_trace(
        &mut self,
        batch: &[f64],
        rows: usize,
        keep_trace: bool,
        trace: &mut ForwardTrace,
    ) -> Result<Vec<f64>, Error> {
        if rows == 0 {
            return Err(Error::EmptyInput);
        }
        if batch.len() != rows * self.input_dim {
            return Err(Error::DimMismatch {
                expected: rows * self.input_dim,
                got: batch.len(),
                context: "forward batch",
            });
        }
        if self.mode == Mode::Training && rows < 2 {
            return Err(Error::SingleSampleTrainingBatch);
        }
        if batch.iter().any(|&v| !(0.0..=1.0).contains(&v))
            && !RANGE_WARNED.swap(true, Ordering::Relaxed)
        {
            eprintln!("warning: forward input outside [0,1]; distances remain valid");
        }

        let n_layers = self.layers.len();
        trace.rows = rows;
        trace.mode = self.mode;
        trace.p = self.p;
        trace.layer_inputs.resize_with(n_layers, Vec::new);
        trace.pre_shift.resize_with(n_layers, Vec::new);
        trace.batch_means.resize_with(n_layers, Vec::new);
        trace.maxes.resize_with(n_layers, Vec::new);
        trace.sums.resize_with(n_layers, Vec::new);
        trace.pow_cache.resize_with(n_layers, Vec::new);

        let mut current: Vec<f64> = batch.to_vec();
        let mut diffs = vec![0.0f64; self.layers.iter().map(|l| l.n_in).max().unwrap()];
        for l in 0..n_layers {
            let is_intermediate = l + 1 < n_layers;
            let layer = &self.layers[l];
            let (n_in, n_out) = (layer.n_in, layer.n_out);
            debug_assert_eq!(current.len(), rows * n_in);

            if keep_trace {
                trace.layer_inputs[l].clear();
                trace.layer_inputs[l].extend_from_slice(&current);
                resize(&mut trace.pre_shift[l], rows * n_out);
                resize(&mut trace.maxes[l], rows * n_out);
                if !self.p.is_infinite() {
                    resize(&mut trace.sums[l], rows * n_out);
                    trace.pow_cache[l].resize(rows * n_out * n_in, 0.0);
                } else {
                    trace.sums[l].clear();
                    trace.pow_cache[l].clear();
                }
            }

            let mut out = vec![0.0f64; rows * n_out];
            for s in 0..rows {
                let x = &current[s * n_in..(s + 1) * n_in];
                for i in 0..n_out {
                    let w = layer.weight_row(i);
                    // lane-split max so the pass vectorizes; max over
                    // non-negative values is exact under any association
                    let mut mk = [0.0f64; core_math::LANES];
                    let mut k = 0;
                    while k + core_math::LANES <= n_in {
                        for j in 0..core_math::LANES {
                            let d = (x[k + j] - w[k + j] as f64).abs();
                            diffs[k + j] = d;
                            mk[j] = mk[j].max(d);
                        }
                        k += core_math::LANES;
                    }
                    let mut m = 0.0f64;
                    for &v in &mk {
                        m = m.max(v);
                    }
                    while k < n_in {
                        let d = (x[k] - w[k] as f64).abs();
                        diffs[k] = d;
                        m = m.max(d);
                        k += 1;
                    }
                    let u = match self.p {
                        PExponent::Infinity => m,
                        PExponent::Finite(p) => {
                            if m == 0.0 {
                                0.0
                            } else if keep_trace {
                                let cache = &mut trace.pow_cache[l]
                                    [(s * n_out + i) * n_in..(s * n_out + i + 1) * n_in];
                                let sum =
                                    core_math::sum_pow_ratios_cached(&diffs[..n_in], m, p, cache);
                                trace.sums[l][s * n_out + i] = sum;
                                m * sum.powf(1.0 / p)
                            } else {
                                let sum = core_math::sum_pow_ratios(&diffs[..n_in], m, p);
                                m * sum.powf(1.0 / p)
                            }
                        }
                    };
                    if keep_trace {
                        trace.pre_shift[l][s * n_out + i] = u;
                        trace.maxes[l][s * n_out + i] = m;
                    }
                    out[s * n_out + i] = u;
                }
            }

            // mean-shift on intermediate layers, then bias
            if is_intermediate {
                match self.mode {
                    Mode::Training => {
                        let mut means = vec![0.0f64; n_out];
                        for s in 0..rows {
                            for i in 0..n_out {
                                means[i] += out[s * n_out + i];
                            }
                        }
                        for m in &mut means {
                            *m /= rows as f64;
                        }
                        for s in 0..rows {
                            for i in 0..n_out {
                                out[s * n_out + i] -= means[i];
                            }
                        }
                        let layer = &mut self.layers[l];
                        for i in 0..n_out {
                            let rm = layer.running_mean[i] as f64;
                            layer.running_mean[i] = ((1.0 - RUNNING_MEAN_MOMENTUM) * rm
                                + RUNNING_MEAN_MOMENTUM * means[i])
                                as f32;
                        }
                        if keep_trace {
                            trace.batch_means[l] = means;
                        }
                    }
                    Mode::Inference => {
                        let layer = &self.layers[l];
                        for s in 0..rows {
                            for i in 0..n_out {
                                out[s * n_out + i] -= layer.running_mean[i] as f64;
                            }
                        }
                        if keep_trace {
                            trace.batch_means[l].clear();
                        }
                    }
                }
            } else if keep_trace {
                trace.batch_means[l].clear();
            }
            let layer = &self.layers[l];
            for s in 0..rows {
                for i in 0..n_out {
                    out[s * n_out + i] += layer.bias[i] as f64;
                }
            }
            current = out;
        }
        Ok(current)
    }

    /// Exact reverse-mode pass. `logits_grad` is `rows x class_count` and the
    /// trace must come from a `keep_trace` forward of this net at the same
    /// `p` and mode.
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        logits_grad: &[f64],
    ) -> Result<ParamGrads, Error> {
        self.backward_with_input_grad(trace, logits_grad)
            .map(|(g, _)| g)
    }

    /// Like [`DistanceNet::backward`] but also returns the gradient with
    /// respect to the input batch (`rows x input_dim`), as needed by
    /// gradient-based attacks.
    pub fn backward_with_input_grad(
        &self,
        trace: &ForwardTrace,
        logits_grad: &[f64],
    ) -> Result<(ParamGrads, Vec<f64>), Error> {
        let rows = trace.rows;
        if trace.layer_inputs.len() != self.layers.len() || rows == 0 {
            return Err(Error::BadTrace("layer count or rows mismatch"));
        }
        if trace.p != self.p {
            return Err(Error::BadTrace("trace captured at a different p"));
        }
        if logits_grad.len() != rows * self.class_count {
            return Err(Error::DimMismatch {
                expected: rows * self.class_count,
                got: logits_grad.len(),
                context: "logits_grad",
            });
        }
        let mut grads = ParamGrads::zeros_like(self);
        let mut upstream: Vec<f64> = logits_grad.to_vec();

        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let (n_in, n_out) = (layer.n_in, layer.n_out);
            if trace.layer_inputs[l].len() != rows * n_in
                || trace.pre_shift[l].len() != rows * n_out
            {
                return Err(Error::BadTrace("trace buffer shape mismatch"));
            }
            let is_intermediate = l + 1 < self.layers.len();

            // bias gradient, before undoing the mean-shift
            {
                let g = &mut grads.layers[l];
                for s in 0..rows {
                    for i in 0..n_out {
                        g.bias[i] += upstream[s * n_out + i];
                    }
                }
            }

            // backward through mean-shift: subtract the batch mean of the
            // incoming gradient
            if is_intermediate && trace.mode == Mode::Training {
                let mut gmean = vec![0.0f64; n_out];
                for s in 0..rows {
                    for i in 0..n_out {
                        gmean[i] += upstream[s * n_out + i];
                    }
                }
                for g in &mut gmean {
                    *g /= rows as f64;
                }
                for s in 0..rows {
                    for i in 0..n_out {
                        upstream[s * n_out + i] -= gmean[i];
                    }
                }
            }

            // distance node
            let inputs = &trace.layer_inputs[l];
            let mut downstream = vec![0.0f64; rows * n_in];
            match self.p {
                PExponent::Infinity => {
                    for s in 0..rows {
                        let x = &inputs[s * n_in..(s + 1) * n_in];
                        for i in 0..n_out {
                            let gu = upstream[s * n_out + i];
                            if gu == 0.0 {
                                continue;
                            }
                            let w = layer.weight_row(i);
                            let mut best = 0usize;
                            let mut best_abs = -1.0f64;
                            for k in 0..n_in {
                                let a = (x[k] - w[k] as f64).abs();
                                if a > best_abs {
                                    best_abs = a;
                                    best = k;
                                }
                            }
                            let v = x[best] - w[best] as f64;
                            if v != 0.0 {
                                let g = v.signum() * gu;
                                downstream[s * n_in + best] += g;
                                grads.layers[l].weights[i * n_in + best] -= g;
                            }
                        }
                    }
                }
                PExponent::Finite(p) => {
                    if trace.sums[l].len() != rows * n_out
                        || trace.pow_cache[l].len() != rows * n_out * n_in
                    {
                        return Err(Error::BadTrace("missing finite-p pow cache"));
                    }
                    // terms whose cached power was flushed carry no gradient
                    let r_min = 2f64.powf(-690.0 / p);
                    for s in 0..rows {
                        let x = &inputs[s * n_in..(s + 1) * n_in];
                        let ds = &mut downstream[s * n_in..(s + 1) * n_in];
                        for i in 0..n_out {
                            let gu = upstream[s * n_out + i];
                            if gu == 0.0 {
                                continue;
                            }
                            let m = trace.maxes[l][s * n_out + i];
                            if m == 0.0 {
                                continue; // zero subgradient at x == w
                            }
                            let sum = trace.sums[l][s * n_out + i];
                            let scale = gu / sum.powf((p - 1.0) / p);
                            let inv_m = 1.0 / m;
                            let w = layer.weight_row(i);
                            let cache = &trace.pow_cache[l]
                                [(s * n_out + i) * n_in..(s * n_out + i + 1) * n_in];
                            let gw = &mut grads.layers[l].weights[i * n_in..(i + 1) * n_in];
                            for k in 0..n_in {
                                let v = x[k] - w[k] as f64;
                                let r = v.abs() * inv_m;
                                if r > r_min {
                                    // r^(p-1) = r^p / r, numerator from cache
                                    let g = v.signum() * (cache[k] as f64 / r) * scale;
                                    ds[k] += g;
                                    gw[k] -= g;
                                }
                            }
                        }
                    }
                }
            }
            upstream = downstream;
        }
        Ok((grads, upstream))
    }

    // -- checkpoint I/O -----------------------------------------------------

    pub fn save_checkpoint(&self, path: &Path) -> Result<(), Error> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(b"LDN2");
        buf.extend_from_slice(&1u32.to_le_bytes());
        buf.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        buf.extend_from_slice(&(self.input_dim as u32).to_le_bytes());
        for l in &self.layers {
            buf.extend_from_slice(&(l.n_out as u32).to_le_bytes());
        }
        for l in &self.layers {
            for &w in &l.weights {
                buf.extend_from_slice(&w.to_le_bytes());
            }
            for &b in &l.bias {
                buf.extend_from_slice(&b.to_le_bytes());
            }
            for &r in &l.running_mean {
                buf.extend_from_slice(&r.to_le_bytes());
            }
        }
        buf.extend_from_slice(&self.p.as_f64().to_le_bytes());
        buf.extend_from_slice(&self.temperature.to_le_bytes());
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self, Error> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .map_err(|e| Error::io(path, e))?
            .read_to_end(&mut bytes)
            .map_err(|e| Error::io(path, e))?;
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize, section: &str| -> Result<&[u8], Error> {
            if *pos + n > bytes.len() {
                return Err(Error::checkpoint(
                    path,
                    format!("truncated file: missing {section}"),
                ));
            }
            let s = &bytes[*pos..*pos + n];
            *pos += n;
            Ok(s)
        };
        let magic = take(&mut pos, 4, "magic")?;
        if magic != b"LDN2" {
            return Err(Error::checkpoint(path, "bad magic, not an LDN2 checkpoint"));
        }
        let read_u32 = |pos: &mut usize, section: &str| -> Result<u32, Error> {
            let s = take(pos, 4, section)?;
            Ok(u32::from_le_bytes(s.try_into().unwrap()))
        };
        let version = read_u32(&mut pos, "version")?;
        if version != 1 {
            return Err(Error::checkpoint(
                path,
                format!("unsupported format version {version}"),
            ));
        }
        let n_layers = read_u32(&mut pos, "layer count")? as usize;
        let input_dim = read_u32(&mut pos, "input dim")? as usize;
        if n_layers == 0 || input_dim == 0 {
            return Err(Error::checkpoint(path, "zero layer count or input dim"));
        }
        let mut widths = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            widths.push(read_u32(&mut pos, "layer widths")? as usize);
        }
        let mut layers = Vec::with_capacity(n_layers);
        let mut n_in = input_dim;
        for (li, &n_out) in widths.iter().enumerate() {
            let n_weights = n_out
                .checked_mul(n_in)
                .ok_or_else(|| Error::checkpoint(path, "layer dimension overflow"))?;
            let mut layer = LayerParams::zeros(n_in, n_out);
            let wb = take(&mut pos, n_weights * 4, &format!("layer {li} weights"))?;
            for (k, c) in wb.chunks_exact(4).enumerate() {
                layer.weights[k] = f32::from_le_bytes(c.try_into().unwrap());
            }
            let bb = take(&mut pos, n_out * 4, &format!("layer {li} bias"))?;
            for (k, c) in bb.chunks_exact(4).enumerate() {
                layer.bias[k] = f32::from_le_bytes(c.try_into().unwrap());
            }
            let rb = take(&mut pos, n_out * 4, &format!("layer {li} running mean"))?;
            for (k, c) in rb.chunks_exact(4).enumerate() {
                layer.running_mean[k] = f32::from_le_bytes(c.try_into().unwrap());
            }
            layers.push(layer);
            n_in = n_out;
        }
        let p_raw = f64::from_le_bytes(take(&mut pos, 8, "p exponent")?.try_into().unwrap());
        let temperature =
            f64::from_le_bytes(take(&mut pos, 8, "temperature")?.try_into().unwrap());
        let p = PExponent::from_f64(p_raw)
            .map_err(|e| Error::checkpoint(path, format!("invalid p: {e}")))?;
        let class_count = *widths.last().unwrap();
        Ok(DistanceNet {
            layers,
            p,
            temperature,
            input_dim,
            class_count,
            mode: Mode::Inference,
        })
    }
}

/// One forward pass worth of predictions: argmax over logits per row.
pub fn predictions(logits: &[f64], classes: usize) -> Vec<usize> {
    logits
        .chunks_exact(classes)
        .map(|row| {
            row.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap()
        })
        .collect()
}

#[allow(unused)]
fn lane_hint() -> usize {
    LANES
}
