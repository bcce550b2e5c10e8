//! `key = value` run configuration with presets for every paper setting.
//!
//! A config file is UTF-8 text, one assignment per line, `#` comments.
//! A `preset = name` line loads the full hyperparameter set of one of the
//! five published settings; any other keys override the preset regardless
//! of their order in the file. Unknown keys and duplicate keys are errors
//! that name the offending line. Every run can echo its fully-resolved
//! configuration so no effective hyperparameter stays hidden.

use std::path::PathBuf;

use crate::error::Error;
use crate::losses::{LossKind, LossSpec};
use crate::optimization::ScheduleConfig;
use crate::trainer::{AugmentSpec, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Mnist,
    Cifar10,
    Synth,
}

impl DatasetKind {
    fn parse(v: &str) -> Option<Self> {
        match v {
            "mnist" => Some(DatasetKind::Mnist),
            "cifar10" => Some(DatasetKind::Cifar10),
            "synth" => Some(DatasetKind::Synth),
            _ => None,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            DatasetKind::Mnist => "mnist",
            DatasetKind::Cifar10 => "cifar10",
            DatasetKind::Synth => "synth",
        }
    }
}

/// Fully-typed run configuration: dataset selection, architecture, and
/// every TrainConfig / ScheduleConfig / LossSpec knob.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub preset: Option<String>,
    pub dataset: DatasetKind,
    pub data_dir: PathBuf,
    /// Hidden layer widths; input and output sizes come from the dataset.
    pub hidden: Vec<usize>,
    pub e1: usize,
    pub e2: usize,
    pub e3: usize,
    pub p_start: f64,
    pub p_end: f64,
    pub lambda0: f64,
    pub lambda_end: f64,
    pub lr: f64,
    pub theta: f64,
    pub loss: LossKind,
    pub batch_size: usize,
    pub seed: u64,
    pub pad: usize,
    pub flip: bool,
    pub eps: f64,
    pub eval_subset: usize,
    pub train_subset: usize,
    pub init_noise_std: f64,
    pub pgd_steps: usize,
    // synthetic-data shape
    pub synth_n: usize,
    pub synth_dim: usize,
    pub synth_classes: usize,
    pub synth_noise: f64,
    pub synth_margin: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            preset: None,
            dataset: DatasetKind::Synth,
            data_dir: PathBuf::from("data"),
            hidden: vec![64, 64],
            e1: 5,
            e2: 20,
            e3: 10,
            p_start: 8.0,
            p_end: 1000.0,
            lambda0: 0.2,
            lambda_end: 1e-3,
            lr: 0.03,
            theta: 0.4,
            loss: LossKind::CompositeDecayingLambda,
            batch_size: 512,
            seed: 1,
            pad: 0,
            flip: false,
            eps: 0.1,
            eval_subset: 0,
            train_subset: 0,
            init_noise_std: 0.05,
            pgd_steps: 100,
            synth_n: 512,
            synth_dim: 16,
            synth_classes: 2,
            synth_noise: 0.05,
            synth_margin: 0.1,
        }
    }
}

/// The five published hyperparameter settings.
pub const PRESETS: &[&str] = &[
    "mnist_0.1",
    "mnist_0.3",
    "cifar_2_255",
    "cifar_8_255",
    "cifar_16_255",
];

fn apply_preset(cfg: &mut RunConfig, name: &str) -> Result<(), Error> {
    // shared across all settings
    cfg.lr = 0.03;
    cfg.batch_size = 512;
    cfg.p_start = 8.0;
    cfg.p_end = 1000.0;
    cfg.loss = LossKind::CompositeDecayingLambda;
    match name {
        "mnist_0.1" | "mnist_0.3" => {
            cfg.dataset = DatasetKind::Mnist;
            cfg.hidden = vec![5120; 5];
            cfg.e1 = 25;
            cfg.e2 = 375;
            cfg.e3 = 50;
            cfg.lambda0 = 0.05;
            cfg.lambda_end = 2e-4;
            cfg.pad = 1;
            cfg.flip = false;
            if name == "mnist_0.1" {
                cfg.theta = 0.6;
                cfg.eps = 0.1;
            } else {
                cfg.theta = 0.9;
                cfg.eps = 0.3;
            }
        }
        "cifar_2_255" | "cifar_8_255" | "cifar_16_255" => {
            cfg.dataset = DatasetKind::Cifar10;
            cfg.hidden = vec![5120; 5];
            cfg.e1 = 100;
            cfg.e2 = 1150;
            cfg.e3 = 50;
            cfg.pad = 3;
            cfg.flip = true;
            match name {
                "cifar_2_255" => {
                    cfg.theta = 20.0 / 255.0;
                    cfg.lambda0 = 0.05;
                    cfg.lambda_end = 2e-3;
                    cfg.eps = 2.0 / 255.0;
                }
                "cifar_8_255" => {
                    cfg.theta = 48.0 / 255.0;
                    cfg.lambda0 = 0.1;
                    cfg.lambda_end = 5e-4;
                    cfg.eps = 8.0 / 255.0;
                }
                _ => {
                    cfg.theta = 80.0 / 255.0;
                    cfg.lambda0 = 0.1;
                    cfg.lambda_end = 2e-4;
                    cfg.eps = 16.0 / 255.0;
                }
            }
        }
        other => {
            return Err(Error::InvalidConfig(format!(
                "unknown preset '{other}' (expected one of {PRESETS:?})"
            )));
        }
    }
    cfg.preset = Some(name.to_string());
    Ok(())
}

fn type_err(line_no: usize, key: &str, value: &str, ty: &str) -> Error {
    Error::InvalidConfig(format!(
        "line {line_no}: key '{key}': cannot parse '{value}' as {ty}"
    ))
}

fn parse_num<T: std::str::FromStr>(
    line_no: usize,
    key: &str,
    value: &str,
    ty: &str,
) -> Result<T, Error> {
    value.parse().map_err(|_| type_err(line_no, key, value, ty))
}

fn parse_bool(line_no: usize, key: &str, value: &str) -> Result<bool, Error> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(type_err(line_no, key, value, "bool")),
    }
}

fn parse_list(line_no: usize, key: &str, value: &str) -> Result<Vec<usize>, Error> {
    value
        .split(',')
        .map(|t| t.trim().parse())
        .collect::<Result<Vec<usize>, _>>()
        .map_err(|_| type_err(line_no, key, value, "comma-separated integers"))
}

/// Parse config text. Assignments other than `preset` override the preset
/// regardless of their position in the file.
pub fn parse_config(text: &str) -> Result<RunConfig, Error> {
    let mut entries: Vec<(usize, String, String)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::InvalidConfig(format!("line {line_no}: expected 'key = value', got '{line}'"))
        })?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if let Some((prev, _, _)) = entries.iter().find(|(_, k, _)| *k == key) {
            return Err(Error::InvalidConfig(format!(
                "line {line_no}: duplicate key '{key}' (first set on line {prev})"
            )));
        }
        entries.push((line_no, key, value));
    }

    let mut cfg = RunConfig::default();
    if let Some((_, _, name)) = entries.iter().find(|(_, k, _)| k == "preset") {
        apply_preset(&mut cfg, name)?;
    }
    for (line_no, key, value) in &entries {
        let (n, v) = (*line_no, value.as_str());
        match key.as_str() {
            "preset" => {}
            "dataset" => {
                cfg.dataset = DatasetKind::parse(v)
                    .ok_or_else(|| type_err(n, key, v, "one of mnist|cifar10|synth"))?;
            }
            "data_dir" => cfg.data_dir = PathBuf::from(v),
            "hidden" => cfg.hidden = parse_list(n, key, v)?,
            "e1" => cfg.e1 = parse_num(n, key, v, "integer")?,
            "e2" => cfg.e2 = parse_num(n, key, v, "integer")?,
            "e3" => cfg.e3 = parse_num(n, key, v, "integer")?,
            "p_start" => cfg.p_start = parse_num(n, key, v, "number")?,
            "p_end" => cfg.p_end = parse_num(n, key, v, "number")?,
            "lambda0" => cfg.lambda0 = parse_num(n, key, v, "number")?,
            "lambda_end" => cfg.lambda_end = parse_num(n, key, v, "number")?,
            "lr" => cfg.lr = parse_num(n, key, v, "number")?,
            "theta" => cfg.theta = parse_num(n, key, v, "number")?,
            "loss" => {
                cfg.loss = match v {
                    "hinge" => LossKind::Hinge,
                    "scaled_ce" => LossKind::ScaledCe,
                    "ce_threshold" => LossKind::CeThreshold,
                    "composite" => LossKind::CompositeFixedLambda,
                    "composite_decay" => LossKind::CompositeDecayingLambda,
                    _ => {
                        return Err(type_err(
                            n,
                            key,
                            v,
                            "one of hinge|scaled_ce|ce_threshold|composite|composite_decay",
                        ))
                    }
                };
            }
            "batch_size" => cfg.batch_size = parse_num(n, key, v, "integer")?,
            "seed" => cfg.seed = parse_num(n, key, v, "integer")?,
            "pad" => cfg.pad = parse_num(n, key, v, "integer")?,
            "flip" => cfg.flip = parse_bool(n, key, v)?,
            "eps" => cfg.eps = parse_num(n, key, v, "number")?,
            "eval_subset" => cfg.eval_subset = parse_num(n, key, v, "integer")?,
            "train_subset" => cfg.train_subset = parse_num(n, key, v, "integer")?,
            "init_noise_std" => cfg.init_noise_std = parse_num(n, key, v, "number")?,
            "pgd_steps" => cfg.pgd_steps = parse_num(n, key, v, "integer")?,
            "synth_n" => cfg.synth_n = parse_num(n, key, v, "integer")?,
            "synth_dim" => cfg.synth_dim = parse_num(n, key, v, "integer")?,
            "synth_classes" => cfg.synth_classes = parse_num(n, key, v, "integer")?,
            "synth_noise" => cfg.synth_noise = parse_num(n, key, v, "number")?,
            "synth_margin" => cfg.synth_margin = parse_num(n, key, v, "number")?,
            _ => {
                return Err(Error::InvalidConfig(format!(
                    "line {n}: unknown key '{key}'"
                )));
            }
        }
    }
    Ok(cfg)
}

impl RunConfig {
    /// Build the trainer configuration for a dataset of the given shape.
    pub fn to_train_config(
        &self,
        input_dim: usize,
        class_count: usize,
        metrics_path: Option<PathBuf>,
    ) -> TrainConfig {
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        dims.push(input_dim);
        dims.extend_from_slice(&self.hidden);
        dims.push(class_count);
        TrainConfig {
            dims,
            schedule: ScheduleConfig {
                e1: self.e1,
                e2: self.e2,
                e3: self.e3,
                p_start: self.p_start,
                p_end: self.p_end,
                lambda0: self.lambda0,
                lambda_end: self.lambda_end,
                lr0: self.lr,
            },
            loss: LossSpec {
                kind: self.loss,
                theta: self.theta,
                lambda: self.lambda0,
            },
            batch_size: self.batch_size,
            seed: self.seed,
            augment: AugmentSpec {
                pad: self.pad,
                flip: self.flip,
            },
            eps: self.eps,
            eval_subset: self.eval_subset,
            metrics_path,
            init_noise_std: self.init_noise_std,
        }
    }

    /// Every effective key, one `key = value` per line — the resolved-config
    /// echo written alongside run outputs.
    pub fn resolved(&self) -> String {
        let loss = match self.loss {
            LossKind::Hinge => "hinge",
            LossKind::ScaledCe => "scaled_ce",
            LossKind::CeThreshold => "ce_threshold",
            LossKind::CompositeFixedLambda => "composite",
            LossKind::CompositeDecayingLambda => "composite_decay",
        };
        let hidden = self
            .hidden
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join(",");
        let mut out = String::new();
        if let Some(p) = &self.preset {
            out.push_str(&format!("preset = {p}\n"));
        }
        out.push_str(&format!(
            "dataset = {}\ndata_dir = {}\nhidden = {hidden}\n\
             e1 = {}\ne2 = {}\ne3 = {}\np_start = {}\np_end = {}\n\
             lambda0 = {}\nlambda_end = {}\nlr = {}\ntheta = {}\nloss = {loss}\n\
             batch_size = {}\nseed = {}\npad = {}\nflip = {}\neps = {}\n\
             eval_subset = {}\ntrain_subset = {}\ninit_noise_std = {}\npgd_steps = {}\n\
             synth_n = {}\nsynth_dim = {}\nsynth_classes = {}\nsynth_noise = {}\n\
             synth_margin = {}\n",
            self.dataset.name(),
            self.data_dir.display(),
            self.e1,
            self.e2,
            self.e3,
            self.p_start,
            self.p_end,
            self.lambda0,
            self.lambda_end,
            self.lr,
            self.theta,
            self.batch_size,
            self.seed,
            self.pad,
            self.flip,
            self.eps,
            self.eval_subset,
            self.train_subset,
            self.init_noise_std,
            self.pgd_steps,
            self.synth_n,
            self.synth_dim,
            self.synth_classes,
            self.synth_noise,
            self.synth_margin,
        ));
        out
    }
}
