//! Command-line front end: train / eval / certify / attack / construct /
//! lipschitz / rsep.
//!
//! Exit codes: 0 on success, 1 on usage errors (bad flags, unreadable
//! config), 2 on runtime failures (training aborts, missing datasets).

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::certification::{certified_accuracy, lipschitz_lower_bound, r_separation, robust_accuracy};
use crate::config::{parse_config, DatasetKind, RunConfig};
use crate::constructive::{build_multi_layer, build_two_layer};
use crate::core_math::PExponent;
use crate::data::{gen_synthetic, load_cifar10, load_mnist, LabeledDataset};
use crate::error::Error;
use crate::network::{predictions, DistanceNet, Mode};
use crate::trainer::{evaluate, train};

#[derive(Parser)]
#[command(name = "linf-dist", about = "l-infinity distance net toolkit", disable_help_flag = false)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct DataOpts {
    /// Dataset: mnist, cifar10, or synth.
    #[arg(long)]
    dataset: String,
    /// Directory holding the MNIST / CIFAR-10 files.
    #[arg(long, default_value = "data")]
    data_dir: PathBuf,
    /// Use the training split instead of the test split.
    #[arg(long)]
    train_split: bool,
    /// Keep only the first N samples (0 = all).
    #[arg(long, default_value_t = 0)]
    subset: usize,
    /// Seed for the synthetic generator.
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Train a net from a key=value config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Output directory for checkpoint, metrics, and resolved config.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Override a config key, e.g. --set seed=3 (repeatable).
        #[arg(long = "set")]
        sets: Vec<String>,
    },
    /// Clean / certified / PGD-robust accuracy of a checkpoint.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[command(flatten)]
        data: DataOpts,
        #[arg(long)]
        eps: f64,
        #[arg(long, default_value_t = 100)]
        pgd_steps: usize,
    },
    /// Margin certification with a per-sample CSV report.
    Certify {
        #[arg(long)]
        ckpt: PathBuf,
        #[command(flatten)]
        data: DataOpts,
        #[arg(long)]
        eps: f64,
        #[arg(long)]
        report: PathBuf,
    },
    /// PGD attack; prints the robust accuracy.
    Attack {
        #[arg(long)]
        ckpt: PathBuf,
        #[command(flatten)]
        data: DataOpts,
        #[arg(long)]
        eps: f64,
        #[arg(long, default_value_t = 100)]
        steps: usize,
    },
    /// Build a perfectly certified net from a dataset (Theorem 1).
    Construct {
        #[command(flatten)]
        data: DataOpts,
        #[arg(long, default_value_t = 2)]
        layers: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Empirical Lipschitz lower bound vs the closed-form upper bound.
    Lipschitz {
        #[arg(long)]
        ckpt: PathBuf,
        #[command(flatten)]
        data: DataOpts,
        #[arg(long, default_value_t = 1.0 / 255.0)]
        eps: f64,
        /// Override the checkpoint's relaxation exponent ("inf" or a number).
        #[arg(long)]
        p: Option<String>,
    },
    /// r-separation of a dataset.
    Rsep {
        #[command(flatten)]
        data: DataOpts,
        #[arg(long, default_value_t = 0)]
        limit: usize,
    },
}

fn load_dataset(opts: &DataOpts, cfg: Option<&RunConfig>) -> Result<LabeledDataset, Error> {
    let kind = match opts.dataset.as_str() {
        "mnist" => DatasetKind::Mnist,
        "cifar10" => DatasetKind::Cifar10,
        "synth" => DatasetKind::Synth,
        other => {
            return Err(Error::InvalidConfig(format!(
                "unknown dataset '{other}' (expected mnist|cifar10|synth)"
            )));
        }
    };
    let ds = match kind {
        DatasetKind::Mnist => load_mnist(&opts.data_dir, opts.train_split)?,
        DatasetKind::Cifar10 => load_cifar10(&opts.data_dir, opts.train_split)?,
        DatasetKind::Synth => {
            let def = RunConfig::default();
            let c = cfg.unwrap_or(&def);
            gen_synthetic(
                c.synth_n,
                c.synth_dim,
                c.synth_classes,
                c.synth_noise,
                c.synth_margin,
                opts.seed,
            )?
        }
    };
    Ok(if opts.subset > 0 { ds.head(opts.subset) } else { ds })
}

fn run_train(config: &Path, out: &Path, sets: &[String]) -> Result<(), Error> {
    let file_text = std::fs::read_to_string(config).map_err(|e| Error::io(config, e))?;
    let mut overridden: Vec<&str> = Vec::new();
    for s in sets {
        match s.split_once('=') {
            Some((k, _)) => overridden.push(k.trim()),
            None => {
                return Err(Error::InvalidConfig(format!(
                    "--set expects key=value, got '{s}'"
                )));
            }
        }
    }
    // drop file lines whose key a --set replaces, then append the overrides
    let mut text: String = file_text
        .lines()
        .filter(|l| {
            let key = l.split('#').next().unwrap_or("").split('=').next().unwrap_or("").trim();
            !overridden.contains(&key)
        })
        .flat_map(|l| [l, "\n"])
        .collect();
    for s in sets {
        text.push_str(s);
        text.push('\n');
    }
    let cfg = parse_config(&text)?;

    let (train_set, test_set) = match cfg.dataset {
        DatasetKind::Mnist => (
            load_mnist(&cfg.data_dir, true)?,
            load_mnist(&cfg.data_dir, false)?,
        ),
        DatasetKind::Cifar10 => (
            load_cifar10(&cfg.data_dir, true)?,
            load_cifar10(&cfg.data_dir, false)?,
        ),
        DatasetKind::Synth => {
            // one generation split 3:1 so both sides share cluster centers
            let all = gen_synthetic(
                cfg.synth_n,
                cfg.synth_dim,
                cfg.synth_classes,
                cfg.synth_noise,
                cfg.synth_margin,
                cfg.seed,
            )?;
            let n_train = cfg.synth_n * 3 / 4;
            let train = all.head(n_train);
            let test = LabeledDataset {
                features: all.features[n_train * all.dim..].to_vec(),
                labels: all.labels[n_train..].to_vec(),
                ..all
            };
            (train, test)
        }
    };
    let train_set = if cfg.train_subset > 0 {
        train_set.head(cfg.train_subset)
    } else {
        train_set
    };

    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let resolved_path = out.join("config.resolved");
    std::fs::write(&resolved_path, cfg.resolved()).map_err(|e| Error::io(&resolved_path, e))?;

    let tc = cfg.to_train_config(
        train_set.dim,
        train_set.class_count,
        Some(out.join("metrics.csv")),
    );
    let (net, rows) = train(&tc, &train_set, &test_set)?;
    let ckpt = out.join("model.ckpt");
    net.save_checkpoint(&ckpt)?;
    if let Some(last) = rows.last() {
        println!(
            "done: {} epochs, train_acc {:.4}, test_acc {:.4}, test_cert_acc {:.4} (eps {})",
            rows.len(),
            last.train_acc,
            last.test_acc,
            last.test_cert_acc,
            cfg.eps
        );
    }
    println!("checkpoint: {}", ckpt.display());
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Train { config, out, sets } => run_train(&config, &out, &sets),
        Command::Eval {
            ckpt,
            data,
            eps,
            pgd_steps,
        } => {
            let net = DistanceNet::load_checkpoint(&ckpt)?;
            let ds = load_dataset(&data, None)?;
            let (clean, cert, pgd) = evaluate(&net, &ds, eps, pgd_steps)?;
            println!("clean_acc {clean:.4}");
            println!("cert_acc {cert:.4}");
            println!("pgd_acc {pgd:.4}");
            Ok(())
        }
        Command::Certify {
            ckpt,
            data,
            eps,
            report,
        } => {
            let mut net = DistanceNet::load_checkpoint(&ckpt)?;
            net.mode = Mode::Inference;
            let ds = load_dataset(&data, None)?;
            let rep = certified_accuracy(&net, &ds, eps)?;
            let batch: Vec<f64> = ds.features.iter().map(|&v| v as f64).collect();
            let logits = net.infer(&batch, ds.len())?;
            let preds = predictions(&logits, net.class_count);
            let f = std::fs::File::create(&report).map_err(|e| Error::io(&report, e))?;
            rep.write_csv(std::io::BufWriter::new(f), &ds.labels, &preds)?;
            println!("clean_acc {:.4}", rep.clean_acc);
            println!("cert_acc {:.4}", rep.cert_acc);
            println!("report: {}", report.display());
            Ok(())
        }
        Command::Attack {
            ckpt,
            data,
            eps,
            steps,
        } => {
            let mut net = DistanceNet::load_checkpoint(&ckpt)?;
            net.mode = Mode::Inference;
            let ds = load_dataset(&data, None)?;
            let acc = robust_accuracy(&net, &ds, eps, steps, data.seed)?;
            println!("pgd_acc {acc:.4} (eps {eps}, {steps} steps)");
            Ok(())
        }
        Command::Construct { data, layers, out } => {
            let ds = load_dataset(&data, None)?;
            let net = if layers == 2 {
                build_two_layer(&ds)?
            } else {
                build_multi_layer(&ds, layers)?
            };
            net.save_checkpoint(&out)?;
            let sep = r_separation(&ds, 0)?;
            println!(
                "constructed {} layers, widths {:?}, dataset r {:.6}",
                net.layer_count(),
                net.layers.iter().map(|l| l.n_out).collect::<Vec<_>>(),
                sep.r
            );
            println!("checkpoint: {}", out.display());
            Ok(())
        }
        Command::Lipschitz { ckpt, data, eps, p } => {
            let mut net = DistanceNet::load_checkpoint(&ckpt)?;
            net.mode = Mode::Inference;
            if let Some(pv) = p {
                net.p = if pv == "inf" {
                    PExponent::Infinity
                } else {
                    PExponent::finite(pv.parse().map_err(|_| {
                        Error::InvalidConfig(format!("--p expects a number or 'inf', got '{pv}'"))
                    })?)?
                };
            }
            let ds = load_dataset(&data, None)?;
            let (_, mean, max) = lipschitz_lower_bound(&net, &ds, eps, data.seed)?;
            let upper = net.lipschitz_upper_bound();
            println!("lower_bound_mean {mean:.6}");
            println!("lower_bound_max {max:.6}");
            println!("upper_bound {upper:.6}");
            Ok(())
        }
        Command::Rsep { data, limit } => {
            let ds = load_dataset(&data, None)?;
            let rep = r_separation(&ds, limit)?;
            println!("r {:.6}", rep.r);
            println!(
                "argmin_pair {} {} (labels {} {})",
                rep.argmin.0, rep.argmin.1, ds.labels[rep.argmin.0], ds.labels[rep.argmin.1]
            );
            println!("pairs_examined {}", rep.pairs_examined);
            Ok(())
        }
    }
}

/// Parse `argv` (including the program name) and run. Returns the process
/// exit code: 0 success, 1 usage error, 2 runtime error.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // help/version requests are successes, everything else is usage
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::InvalidConfig(_) | Error::Io { .. } => 1,
                _ => 2,
            }
        }
    }
}
