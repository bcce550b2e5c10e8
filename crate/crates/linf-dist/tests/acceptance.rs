//! Gated acceptance suite: one test per criterion, each printing exactly one
//! PASS/FAIL line (run with `--nocapture` to see them on success).
//!
//! MNIST IDX files are read from `$MNIST_DIR` (default `/root/data/mnist`).
//! The suite is expensive: criteria 8 and 9 train real models and dominate
//! the runtime; wall budgets are asserted per criterion. Expensive shared
//! artifacts (datasets, trained and constructed nets) are built lazily and
//! cached, so individual criteria can also be run in isolation, e.g.
//! `cargo test --test acceptance criterion_01`.

use std::sync::{Mutex, OnceLock};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use linf_dist::certification::{certified_accuracy, lipschitz_lower_bound, pgd_attack, r_separation};
use linf_dist::constructive::{build_multi_layer, build_two_layer};
use linf_dist::core_math::{lp_distance, lp_distance_grad, PExponent};
use linf_dist::data::{gen_synthetic, load_mnist, LabeledDataset};
use linf_dist::losses::{
    clipped_hinge, clipped_hinge_grad, composite_loss, hinge_loss, margin, scaled_ce, LossKind,
    LossSpec,
};
use linf_dist::network::{predictions, DistanceNet, LayerParams, Mode};
use linf_dist::optimization::ScheduleConfig;
use linf_dist::trainer::{evaluate, train, AugmentSpec, TrainConfig};

type Verdict = Result<String, String>;

fn mnist_dir() -> std::path::PathBuf {
    std::env::var_os("MNIST_DIR")
        .map(Into::into)
        .unwrap_or_else(|| "/root/data/mnist".into())
}

fn budget_s(wall: f64, limit_s: f64, detail: String) -> Verdict {
    if wall <= limit_s {
        Ok(format!("{detail} [{wall:.1}s / {limit_s:.0}s]"))
    } else {
        Err(format!("{detail} but exceeded budget: {wall:.1}s > {limit_s:.0}s"))
    }
}

fn budget(t: Instant, limit_s: f64, detail: String) -> Verdict {
    budget_s(t.elapsed().as_secs_f64(), limit_s, detail)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0f64, f64::max)
}

fn report(n: usize, v: Verdict) {
    match v {
        Ok(msg) => eprintln!("criterion {n:>2}: PASS — {msg}"),
        Err(msg) => {
            eprintln!("criterion {n:>2}: FAIL — {msg}");
            panic!("criterion {n} failed: {msg}");
        }
    }
}

// -- lazily built shared artifacts -----------------------------------------

/// Serializes the criterion tests. The wall budgets assume exclusive use of
/// the machine, and the `criterion_NN` names sort numerically, so under the
/// default parallel runner the tests queue here in criterion order.
static GATE: Mutex<()> = Mutex::new(());

fn gate() -> std::sync::MutexGuard<'static, ()> {
    GATE.lock().unwrap_or_else(|e| e.into_inner())
}

fn scratch_dir() -> &'static std::path::PathBuf {
    static S: OnceLock<std::path::PathBuf> = OnceLock::new();
    S.get_or_init(|| {
        let d = std::env::temp_dir().join(format!("linf_acceptance_{}", std::process::id()));
        std::fs::create_dir_all(&d).unwrap();
        d
    })
}

fn mnist_train() -> &'static LabeledDataset {
    static S: OnceLock<LabeledDataset> = OnceLock::new();
    S.get_or_init(|| load_mnist(&mnist_dir(), true).unwrap())
}

fn mnist_test() -> &'static LabeledDataset {
    static S: OnceLock<LabeledDataset> = OnceLock::new();
    S.get_or_init(|| load_mnist(&mnist_dir(), false).unwrap())
}

fn mnist_1k() -> &'static LabeledDataset {
    static S: OnceLock<LabeledDataset> = OnceLock::new();
    S.get_or_init(|| mnist_train().head(1000))
}

fn mnist_10k() -> &'static LabeledDataset {
    static S: OnceLock<LabeledDataset> = OnceLock::new();
    S.get_or_init(|| mnist_train().head(10_000))
}

/// Two-layer Theorem-1 net on the 1k subset plus the subset's r.
fn constructed() -> &'static (DistanceNet, f64) {
    static S: OnceLock<(DistanceNet, f64)> = OnceLock::new();
    S.get_or_init(|| {
        let sep = r_separation(mnist_1k(), 0).unwrap();
        (build_two_layer(mnist_1k()).unwrap(), sep.r)
    })
}

/// Four-layer Theorem-1 net on a 200-sample subset (criteria 2 and 3).
fn deep4() -> &'static DistanceNet {
    static S: OnceLock<DistanceNet> = OnceLock::new();
    S.get_or_init(|| build_multi_layer(&mnist_1k().head(200), 4).unwrap())
}

fn synth_small() -> &'static LabeledDataset {
    static S: OnceLock<LabeledDataset> = OnceLock::new();
    S.get_or_init(|| gen_synthetic(64, 8, 3, 0.1, 0.05, 5).unwrap())
}

fn synth_small_net() -> &'static DistanceNet {
    static S: OnceLock<DistanceNet> = OnceLock::new();
    S.get_or_init(|| build_two_layer(synth_small()).unwrap())
}

fn rand_net() -> &'static DistanceNet {
    static S: OnceLock<DistanceNet> = OnceLock::new();
    S.get_or_init(|| DistanceNet::init_identity(&[8, 24, 16, 3], 13, 0.2).unwrap())
}

/// Criterion-7 artifacts: trained net, its test split, the metrics CSV, and
/// the training wall time in seconds.
fn synth_trained() -> &'static (DistanceNet, LabeledDataset, String, f64) {
    static S: OnceLock<(DistanceNet, LabeledDataset, String, f64)> = OnceLock::new();
    S.get_or_init(|| {
        let t = Instant::now();
        let path = scratch_dir().join("metrics_c7.csv");
        let (net, _, test_set) = criterion7_run(&path);
        let wall = t.elapsed().as_secs_f64();
        let metrics = std::fs::read_to_string(&path).unwrap();
        (net, test_set, metrics, wall)
    })
}

/// Criterion-8 artifacts: trained MNIST net, clean and certified test
/// accuracy at eps = 0.1, and the wall time in seconds.
fn mnist_trained() -> &'static (DistanceNet, f64, f64, f64) {
    static S: OnceLock<(DistanceNet, f64, f64, f64)> = OnceLock::new();
    S.get_or_init(|| {
        let t = Instant::now();
        // the mnist_0.1 preset schedule (25, 375, 50) scaled to 150 epochs
        let config = mnist_train_config(
            vec![784, 256, 256, 256, 10],
            ScheduleConfig {
                e1: 8,
                e2: 125,
                e3: 17,
                p_start: 8.0,
                p_end: 1000.0,
                lambda0: 0.05,
                lambda_end: 2e-4,
                lr0: 0.03,
            },
            LossSpec::new(LossKind::CompositeDecayingLambda, 0.6, 0.05).unwrap(),
            1,
        );
        let (net, _) = train(&config, mnist_10k(), mnist_test()).unwrap();
        let (clean, cert, _) = evaluate(&net, mnist_test(), 0.1, 0).unwrap();
        (net, clean, cert, t.elapsed().as_secs_f64())
    })
}

// --------------------------------------------------------------------------
// criterion 1: Theorem-1 exactness on a 1,000-sample MNIST subset
// --------------------------------------------------------------------------
fn criterion1() -> Verdict {
    let t = Instant::now();
    let (net, r) = constructed();
    // Definition 2 requires *strictly* r-separated data, so the measured r
    // (half the attained minimum distance) is the supremum of valid radii:
    // the argmin pair sits at margin exactly 2r, where the strict test
    // margin/2 > eps correctly declines. The gate therefore certifies at
    // the largest float below r and checks the margin bound at 2r itself.
    let eps = f64::from_bits(r.to_bits() - 1);
    let rep = certified_accuracy(net, mnist_1k(), eps).unwrap();
    let min_margin = rep.margins.iter().cloned().fold(f64::INFINITY, f64::min);
    if rep.cert_acc != 1.0 {
        Err(format!("cert_acc {} != 1.0 at eps just below r", rep.cert_acc))
    } else if min_margin < 2.0 * r {
        Err(format!("min margin {min_margin} < 2r = {}", 2.0 * r))
    } else {
        budget(
            t,
            60.0,
            format!(
                "r={r:.5}, cert_acc=1.000 at sup radius, min margin {min_margin:.5} >= 2r"
            ),
        )
    }
}

// --------------------------------------------------------------------------
// criterion 2: L-layer builder equivalence on 200 points
// --------------------------------------------------------------------------
fn criterion2() -> Verdict {
    let t = Instant::now();
    let sub = mnist_1k().head(200);
    let deep = deep4();
    let shallow = build_two_layer(&sub).unwrap();
    let batch: Vec<f64> = sub.features.iter().map(|&v| v as f64).collect();
    let a = deep.infer(&batch, sub.len()).unwrap();
    let b = shallow.infer(&batch, sub.len()).unwrap();
    let diff = max_abs_diff(&a, &b);
    if diff < 1e-4 {
        budget(t, 30.0, format!("L=4 vs L=2 max abs diff {diff:.2e} on 200 points"))
    } else {
        Err(format!("max abs diff {diff:.2e} >= 1e-4"))
    }
}

// --------------------------------------------------------------------------
// criterion 3: Prop. 1 — 1-Lipschitzness at p = INFINITY
// --------------------------------------------------------------------------
fn criterion3(nets: &[(&str, &DistanceNet)]) -> Verdict {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x115c417);
    let pairs = 1000;
    for (name, net) in nets {
        let mut net = (*net).clone();
        net.p = PExponent::Infinity;
        net.mode = Mode::Inference;
        let d = net.input_dim;
        let c = net.class_count;
        let xs: Vec<f64> = (0..pairs * d).map(|_| rng.gen::<f64>()).collect();
        let ys: Vec<f64> = (0..pairs * d).map(|_| rng.gen::<f64>()).collect();
        let gx = net.infer(&xs, pairs).unwrap();
        let gy = net.infer(&ys, pairs).unwrap();
        for i in 0..pairs {
            let dg = max_abs_diff(&gx[i * c..(i + 1) * c], &gy[i * c..(i + 1) * c]);
            let dx = max_abs_diff(&xs[i * d..(i + 1) * d], &ys[i * d..(i + 1) * d]);
            if dg > dx + 1e-6 {
                return Err(format!("{name}: |g(x)-g(y)| = {dg} > |x-y| + 1e-6 = {}", dx + 1e-6));
            }
        }
    }
    budget(t, 10.0, format!("{} nets x 1000 random pairs, all 1-Lipschitz", nets.len()))
}

// --------------------------------------------------------------------------
// criterion 4: Prop. 2 closed form and bound consistency
// --------------------------------------------------------------------------
fn criterion4(small_nets: &[(&str, &DistanceNet)], synth: &LabeledDataset) -> Verdict {
    let t = Instant::now();
    // paper footnote configuration: input 3072, five hidden layers of 5120
    let dims = [3072usize, 5120, 5120, 5120, 5120, 5120, 10];
    let layers: Vec<LayerParams> = dims.windows(2).map(|w| LayerParams::zeros(w[0], w[1])).collect();
    let big = DistanceNet {
        layers,
        p: PExponent::finite(8.0).unwrap(),
        temperature: 1.0,
        input_dim: 3072,
        class_count: 10,
        mode: Mode::Inference,
    };
    let bound = big.lipschitz_upper_bound();
    drop(big);
    if (bound - 568.0).abs() > 1.0 {
        return Err(format!("closed-form bound {bound:.2} outside 568 +- 1"));
    }
    for (name, net) in small_nets {
        for p in [
            PExponent::finite(2.0).unwrap(),
            PExponent::finite(8.0).unwrap(),
            PExponent::finite(64.0).unwrap(),
            PExponent::Infinity,
        ] {
            let mut net = (*net).clone();
            if net.input_dim != synth.dim {
                continue;
            }
            net.p = p;
            net.mode = Mode::Inference;
            let (_, _, max_est) = lipschitz_lower_bound(&net, &synth.head(16), 1.0 / 255.0, 9).unwrap();
            let upper = net.lipschitz_upper_bound();
            if max_est > upper * (1.0 + 1e-3) {
                return Err(format!(
                    "{name} at p={}: PGD lower bound {max_est:.4} > upper {upper:.4}",
                    p.as_f64()
                ));
            }
        }
    }
    budget(t, 60.0, format!("closed form {bound:.2} = 568 +- 1; lower <= upper on all small nets"))
}

// --------------------------------------------------------------------------
// criterion 5: gradient oracles vs central finite differences
// --------------------------------------------------------------------------
fn fd_ok(analytic: f64, fd: f64) -> bool {
    let diff = (analytic - fd).abs();
    diff / fd.abs().max(analytic.abs()).max(1e-12) < 1e-4 || diff < 1e-7
}

fn criterion5() -> Verdict {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let ps = [2.0, 8.0, 64.0];

    // lp_distance_grad: 100 instances per p
    for &p in &ps {
        let pe = PExponent::finite(p).unwrap();
        for _ in 0..100 {
            let n = rng.gen_range(3..24);
            let x: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
            let w: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
            let g = lp_distance_grad(&x, &w, pe).unwrap();
            let h = 1e-6;
            for k in 0..n {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[k] += h;
                xm[k] -= h;
                let fd = (lp_distance(&xp, &w, pe).unwrap() - lp_distance(&xm, &w, pe).unwrap())
                    / (2.0 * h);
                if !fd_ok(g[k], fd) {
                    return Err(format!("lp_distance_grad p={p} coord {k}: {} vs fd {fd}", g[k]));
                }
            }
        }
    }

    // scaled_ce and composite_loss: 100 instances each
    for _ in 0..100 {
        let c = rng.gen_range(2..8);
        let z: Vec<f64> = (0..c).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let y = rng.gen_range(0..c);
        let s = rng.gen_range(0.2..3.0);
        let theta = rng.gen_range(0.2..1.5);
        let lambda = rng.gen_range(0.01..1.0);
        let h = 1e-6;

        let (_, g_ce, gs_ce) = scaled_ce(&z, y, s).unwrap();
        let (_, g_co, gs_co) = composite_loss(&z, y, theta, lambda, s).unwrap();
        let m = margin(&z, y).unwrap();
        // composite FD straddling a hinge kink or plateau edge is one-sided;
        // skip those coordinates (measure the smooth interior)
        let near_kink = m.abs() < 1e-4 || (m - theta).abs() < 1e-4;
        for k in 0..c {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[k] += h;
            zm[k] -= h;
            let fd_ce = (scaled_ce(&zp, y, s).unwrap().0 - scaled_ce(&zm, y, s).unwrap().0)
                / (2.0 * h);
            if !fd_ok(g_ce[k], fd_ce) {
                return Err(format!("scaled_ce logit {k}: {} vs fd {fd_ce}", g_ce[k]));
            }
            if !near_kink {
                let fd_co = (composite_loss(&zp, y, theta, lambda, s).unwrap().0
                    - composite_loss(&zm, y, theta, lambda, s).unwrap().0)
                    / (2.0 * h);
                if !fd_ok(g_co[k], fd_co) {
                    return Err(format!("composite logit {k}: {} vs fd {fd_co}", g_co[k]));
                }
            }
        }
        let fd_s = (scaled_ce(&z, y, s + h).unwrap().0 - scaled_ce(&z, y, s - h).unwrap().0)
            / (2.0 * h);
        if !fd_ok(gs_ce, fd_s) {
            return Err(format!("scaled_ce temperature: {gs_ce} vs fd {fd_s}"));
        }
        let fd_s_co = (composite_loss(&z, y, theta, lambda, s + h).unwrap().0
            - composite_loss(&z, y, theta, lambda, s - h).unwrap().0)
            / (2.0 * h);
        if !fd_ok(gs_co, fd_s_co) {
            return Err(format!("composite temperature: {gs_co} vs fd {fd_s_co}"));
        }
    }

    // full-network backward: >= 100 probed parameters per p
    for &p in &ps {
        let mut net = DistanceNet::init_identity(&[12, 10, 8, 4], 7, 0.05).unwrap();
        net.p = PExponent::finite(p).unwrap();
        net.mode = Mode::Inference;
        for (li, layer) in net.layers.iter_mut().enumerate() {
            for (k, rm) in layer.running_mean.iter_mut().enumerate() {
                *rm = 0.01 * ((li + k) as f32 % 5.0 as f32);
            }
        }
        let rows = 3;
        let batch: Vec<f64> = (0..rows * 12).map(|_| rng.gen::<f64>()).collect();
        let coefs: Vec<f64> = (0..rows * 4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let loss = |net: &DistanceNet, batch: &[f64]| -> f64 {
            let logits = net.infer(batch, rows).unwrap();
            logits.iter().zip(&coefs).map(|(a, b)| a * b).sum()
        };
        let mut me = net.clone();
        let (logits, trace) = me.forward(&batch, rows, true).unwrap();
        let _ = logits;
        let (grads, input_grad) = net
            .backward_with_input_grad(trace.as_ref().unwrap(), &coefs)
            .unwrap();

        let mut probes = 0;
        'outer: for li in 0..net.layers.len() {
            let n_w = net.layers[li].weights.len();
            for probe in 0..40 {
                let k = (probe * 131 + li * 17) % n_w;
                let orig = net.layers[li].weights[k];
                let h = 1e-4f32;
                let wp = orig + h;
                let wm = orig - h;
                let h_eff = (wp as f64 - wm as f64) / 2.0;
                let mut np = net.clone();
                np.layers[li].weights[k] = wp;
                let mut nm = net.clone();
                nm.layers[li].weights[k] = wm;
                let fd = (loss(&np, &batch) - loss(&nm, &batch)) / (2.0 * h_eff);
                if !fd_ok(grads.layers[li].weights[k], fd) {
                    return Err(format!(
                        "backward p={p} layer {li} weight {k}: {} vs fd {fd}",
                        grads.layers[li].weights[k]
                    ));
                }
                probes += 1;
                if probes >= 110 {
                    break 'outer;
                }
            }
        }
        // input gradient spot-checks
        for probe in 0..20 {
            let k = (probe * 89) % (rows * 12);
            let h = 1e-6;
            let mut bp = batch.clone();
            let mut bm = batch.clone();
            bp[k] += h;
            bm[k] -= h;
            let fd = (loss(&net, &bp) - loss(&net, &bm)) / (2.0 * h);
            if !fd_ok(input_grad[k], fd) {
                return Err(format!("backward p={p} input {k}: {} vs fd {fd}", input_grad[k]));
            }
        }
    }
    budget(t, 120.0, "all oracles within 1e-4 of central differences".into())
}

// --------------------------------------------------------------------------
// criterion 6: loss algebra on 10k random draws
// --------------------------------------------------------------------------
fn criterion6() -> Verdict {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(66);

    // hinge degeneration: when every margin is below theta the batch mean
    // collapses to theta - mean margin
    let mut margins = Vec::new();
    let mut hinges = Vec::new();
    let theta = 5.0;
    for _ in 0..1000 {
        let z: Vec<f64> = (0..10).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let y = rng.gen_range(0..10);
        margins.push(margin(&z, y).unwrap());
        hinges.push(hinge_loss(&z, y, theta).unwrap());
    }
    let mean_hinge = hinges.iter().sum::<f64>() / hinges.len() as f64;
    let mean_margin = margins.iter().sum::<f64>() / margins.len() as f64;
    if (mean_hinge - (theta - mean_margin)).abs() > 1e-9 {
        return Err(format!(
            "degeneration identity off: mean hinge {mean_hinge} vs theta - mean margin {}",
            theta - mean_margin
        ));
    }

    // clipped hinge range and plateau gradients
    for _ in 0..10_000 {
        let c = rng.gen_range(2..6);
        let z: Vec<f64> = (0..c).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let y = rng.gen_range(0..c);
        let th = rng.gen_range(0.1..2.0);
        let v = clipped_hinge(&z, y, th).unwrap();
        if !(0.0..=1.0).contains(&v) {
            return Err(format!("clipped hinge {v} outside [0,1]"));
        }
        let g = clipped_hinge_grad(&z, y, th).unwrap();
        let m = margin(&z, y).unwrap();
        let gsum: f64 = g.iter().map(|x| x.abs()).sum();
        if (m <= 0.0 || m >= th) && gsum != 0.0 {
            return Err(format!("plateau at margin {m}, theta {th} has nonzero gradient"));
        }
        if m > 0.0 && m < th && (g[y] != -1.0 / th || gsum != 2.0 / th) {
            return Err(format!("slope region gradient wrong at margin {m}, theta {th}"));
        }
    }
    budget(t, 10.0, "degeneration identity exact; clipped hinge range and plateaus correct".into())
}

// --------------------------------------------------------------------------
// criterion 7 (and 11's rerun): synthetic training
// --------------------------------------------------------------------------
fn criterion7_run(metrics_path: &std::path::Path) -> (DistanceNet, LabeledDataset, LabeledDataset) {
    // min inter-class separation 0.15: generator margin 0.075 guarantees
    // inter-class l-infinity distance >= 2 * margin
    let all = gen_synthetic(2500, 2, 2, 0.15, 0.075, 42).unwrap();
    let train_set = all.head(2000);
    let mut test_set = all.clone();
    test_set.features.drain(..2000 * all.dim);
    test_set.labels.drain(..2000);
    let config = TrainConfig {
        dims: vec![2, 64, 64, 2],
        schedule: ScheduleConfig {
            e1: 11,
            e2: 167,
            e3: 22,
            p_start: 8.0,
            p_end: 1000.0,
            lambda0: 0.2,
            lambda_end: 2e-4,
            lr0: 0.03,
        },
        loss: LossSpec::new(LossKind::CompositeDecayingLambda, 0.3, 0.2).unwrap(),
        batch_size: 128,
        seed: 1,
        augment: AugmentSpec::default(),
        eps: 0.1,
        eval_subset: 0,
        metrics_path: Some(metrics_path.to_path_buf()),
        init_noise_std: 0.0,
    };
    let (net, _) = train(&config, &train_set, &test_set).unwrap();
    (net, train_set, test_set)
}

fn criterion7() -> Verdict {
    let (net, test_set, _, wall) = synth_trained();
    let (clean, cert, _) = evaluate(net, test_set, 0.1, 0).unwrap();
    if cert >= 0.95 {
        budget_s(*wall, 300.0, format!("synthetic certified acc {cert:.3} >= 0.95 (clean {clean:.3})"))
    } else {
        Err(format!("certified acc {cert:.3} < 0.95"))
    }
}

// --------------------------------------------------------------------------
// criterion 8: small-MNIST training
// --------------------------------------------------------------------------
fn mnist_train_config(dims: Vec<usize>, sched: ScheduleConfig, loss: LossSpec, seed: u64) -> TrainConfig {
    TrainConfig {
        dims,
        schedule: sched,
        loss,
        batch_size: 512,
        seed,
        augment: AugmentSpec { pad: 1, flip: false },
        eps: 0.1,
        eval_subset: 1000,
        metrics_path: None,
        init_noise_std: 0.0,
    }
}

fn criterion8() -> Verdict {
    let &(_, clean, cert, wall) = mnist_trained();
    if cert >= 0.70 {
        budget_s(
            wall,
            5400.0,
            format!("MNIST certified test acc {cert:.4} >= 0.70 (clean {clean:.4})"),
        )
    } else {
        Err(format!("MNIST certified test acc {cert:.4} < 0.70"))
    }
}

// --------------------------------------------------------------------------
// criterion 9: loss-degeneration diagnosis (directional, 3-seed median)
// --------------------------------------------------------------------------
fn criterion9() -> Verdict {
    let t = Instant::now();
    // Known to fail at this scale: the hinge pathology is driven by the
    // early-phase l_p Lipschitz inflation, ~568 for the CIFAR-width nets
    // where it was observed but only ~18 here ((784*256^3)^(1/8)), so the
    // hinge arm — which optimizes exactly the measured quantity — wins on
    // small MNIST. The comparison is still run as specified rather than
    // tuned until the expected winner changes.
    //
    // The exact criterion-8 setup, both arms: pure Eq.-(6) hinge at
    // theta = 2*eps (lambda plays no role) against the composite objective,
    // judged on final *train* certified accuracy, 3-seed median. The
    // composite seed-1 arm is the criterion-8 run itself (training is
    // unaffected by the eval-only config fields), re-scored on the train
    // subset.
    let sub = mnist_10k();
    let sched = |lambda0: f64, lambda_end: f64| ScheduleConfig {
        e1: 8,
        e2: 125,
        e3: 17,
        p_start: 8.0,
        p_end: 1000.0,
        lambda0,
        lambda_end,
        lr0: 0.03,
    };
    let mut hinge_cert = Vec::new();
    let mut comp_cert = Vec::new();
    for seed in [1u64, 2, 3] {
        let ch = mnist_train_config(
            vec![784, 256, 256, 256, 10],
            sched(0.0, 0.0),
            LossSpec::new(LossKind::Hinge, 0.2, 0.0).unwrap(),
            seed,
        );
        let (nh, _) = train(&ch, sub, sub).unwrap();
        let (_, cert_h, _) = evaluate(&nh, sub, 0.1, 0).unwrap();
        hinge_cert.push(cert_h);

        let cert_c = if seed == 1 {
            let (_, cert_c, _) = evaluate(&mnist_trained().0, sub, 0.1, 0).unwrap();
            cert_c
        } else {
            let cc = mnist_train_config(
                vec![784, 256, 256, 256, 10],
                sched(0.05, 2e-4),
                LossSpec::new(LossKind::CompositeDecayingLambda, 0.6, 0.05).unwrap(),
                seed,
            );
            let (nc, _) = train(&cc, sub, sub).unwrap();
            let (_, cert_c, _) = evaluate(&nc, sub, 0.1, 0).unwrap();
            cert_c
        };
        comp_cert.push(cert_c);
    }
    hinge_cert.sort_by(f64::total_cmp);
    comp_cert.sort_by(f64::total_cmp);
    let (mh, mc) = (hinge_cert[1], comp_cert[1]);
    if mh < mc {
        budget(
            t,
            5400.0,
            format!("3-seed median train cert: hinge(theta=2eps) {mh:.3} < composite {mc:.3}"),
        )
    } else {
        Err(format!(
            "hinge median {mh:.4} not strictly below composite median {mc:.4} \
             (hinge {hinge_cert:?} vs composite {comp_cert:?})"
        ))
    }
}

// --------------------------------------------------------------------------
// criterion 10: certification soundness under 100-step PGD
// --------------------------------------------------------------------------
fn soundness_violations(net: &DistanceNet, data: &LabeledDataset, eps: f64, seed: u64) -> usize {
    let mut net = net.clone();
    net.mode = Mode::Inference;
    let rep = certified_accuracy(&net, data, eps).unwrap();
    let mut violations = 0;
    for i in 0..data.len() {
        if !rep.certified[i] {
            continue;
        }
        let x: Vec<f64> = data.sample(i).iter().map(|&v| v as f64).collect();
        let y = data.labels[i] as usize;
        let mut rng =
            ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x9e3779b97f4a7c15));
        let delta = pgd_attack(&net, &x, y, eps, 100, 2.5 * eps / 100.0, &mut rng).unwrap();
        let adv: Vec<f64> = x.iter().zip(&delta).map(|(a, d)| a + d).collect();
        let pred = predictions(&net.infer(&adv, 1).unwrap(), net.class_count)[0];
        if pred != y {
            violations += 1;
        }
    }
    violations
}

fn criterion10() -> Verdict {
    let t = Instant::now();
    let (two_layer, r) = constructed();
    let (synth_net, synth_test, _, _) = synth_trained();
    let mut total = 0;
    total += soundness_violations(two_layer, &mnist_1k().head(200), 0.9 * r, 0xa);
    total += soundness_violations(synth_net, synth_test, 0.1, 0xb);
    total += soundness_violations(&mnist_trained().0, &mnist_test().head(200), 0.1, 0xc);
    if total == 0 {
        budget(t, f64::INFINITY, "zero certified-but-attacked samples across all nets".into())
    } else {
        Err(format!("{total} certified samples were flipped by 100-step PGD"))
    }
}

// --------------------------------------------------------------------------
// criterion 11: determinism of criterion 7
// --------------------------------------------------------------------------
/// Strips the trailing wall_seconds field from every data row; wall-clock
/// time is the single intentionally nondeterministic column.
fn strip_wall(csv: &str) -> String {
    csv.lines()
        .map(|l| {
            if l.starts_with('#') || l.starts_with("epoch,") {
                l.to_string()
            } else {
                l.rsplit_once(',').map(|(head, _)| head).unwrap_or(l).to_string()
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn criterion11() -> Verdict {
    let first_metrics = &synth_trained().2;
    let t = Instant::now();
    let rerun_path = scratch_dir().join("metrics_rerun.csv");
    let _ = criterion7_run(&rerun_path);
    let second = std::fs::read_to_string(&rerun_path).unwrap();
    if strip_wall(first_metrics) == strip_wall(&second) {
        budget(
            t,
            300.0,
            "metrics CSV byte-identical across reruns (modulo the wall_seconds column)".into(),
        )
    } else {
        Err("metrics CSV differs between identically-seeded runs".into())
    }
}

// --------------------------------------------------------------------------
// criterion 12: checkpoint round-trip bitwise identity
// --------------------------------------------------------------------------
fn nets_bitwise_equal(a: &DistanceNet, b: &DistanceNet) -> bool {
    a.p == b.p
        && a.temperature.to_bits() == b.temperature.to_bits()
        && a.layers.len() == b.layers.len()
        && a.layers.iter().zip(&b.layers).all(|(x, y)| {
            x.n_in == y.n_in
                && x.n_out == y.n_out
                && x.weights.iter().zip(&y.weights).all(|(u, v)| u.to_bits() == v.to_bits())
                && x.bias.iter().zip(&y.bias).all(|(u, v)| u.to_bits() == v.to_bits())
                && x.running_mean
                    .iter()
                    .zip(&y.running_mean)
                    .all(|(u, v)| u.to_bits() == v.to_bits())
        })
}

fn criterion12() -> Verdict {
    let trained = &synth_trained().0;
    let dir = scratch_dir();
    let t = Instant::now();
    // the trained net: p = +INFINITY with a learned temperature
    let p1 = dir.join("roundtrip_inf.ckpt");
    trained.save_checkpoint(&p1).unwrap();
    let back = DistanceNet::load_checkpoint(&p1).unwrap();
    if !nets_bitwise_equal(trained, &back) {
        return Err("p = INFINITY checkpoint not bitwise identical".into());
    }
    // a finite-p net with an awkward temperature
    let mut finite = DistanceNet::init_identity(&[7, 9, 3], 11, 0.3).unwrap();
    finite.p = PExponent::finite(137.25).unwrap();
    finite.temperature = 0.1 + 1e-13;
    let p2 = dir.join("roundtrip_finite.ckpt");
    finite.save_checkpoint(&p2).unwrap();
    let back = DistanceNet::load_checkpoint(&p2).unwrap();
    if !nets_bitwise_equal(&finite, &back) {
        return Err("finite-p checkpoint not bitwise identical".into());
    }
    budget(t, 5.0, "both checkpoints round-trip bitwise, p and temperature included".into())
}

// --------------------------------------------------------------------------

#[test]
fn criterion_01_theorem1_construction() {
    let _g = gate();
    report(1, criterion1());
}

#[test]
fn criterion_02_multi_layer_equivalence() {
    let _g = gate();
    report(2, criterion2());
}

#[test]
fn criterion_03_one_lipschitz() {
    let _g = gate();
    report(
        3,
        // the multi-layer construct uses the dim-8 synthetic set: its width
        // scales with 2 * input_dim, and an MNIST-sized one alone would blow
        // the 10s budget on two 1000-row infers
        criterion3(&[
            ("two-layer-mnist", &constructed().0),
            ("four-layer-synth", &build_multi_layer(synth_small(), 4).unwrap()),
            ("identity-random", rand_net()),
        ]),
    );
}

#[test]
fn criterion_04_lipschitz_bounds() {
    let _g = gate();
    report(
        4,
        criterion4(
            &[("identity-random", rand_net()), ("constructed-synth", synth_small_net())],
            synth_small(),
        ),
    );
}

#[test]
fn criterion_05_gradient_oracles() {
    let _g = gate();
    report(5, criterion5());
}

#[test]
fn criterion_06_loss_algebra() {
    let _g = gate();
    report(6, criterion6());
}

#[test]
fn criterion_07_synthetic_training() {
    let _g = gate();
    report(7, criterion7());
}

#[test]
fn criterion_08_mnist_training() {
    let _g = gate();
    report(8, criterion8());
}

#[test]
fn criterion_09_loss_degeneration() {
    let _g = gate();
    report(9, criterion9());
}

#[test]
fn criterion_10_certification_soundness() {
    let _g = gate();
    report(10, criterion10());
}

#[test]
fn criterion_11_determinism() {
    let _g = gate();
    report(11, criterion11());
}

#[test]
fn criterion_12_checkpoint_roundtrip() {
    let _g = gate();
    report(12, criterion12());
}
