//! Training configuration files: one `key = value` per line, `#` comments.
//!
//! Keys: `processing_dimension` (`WxHxL`), `optimizer` (`adam`),
//! `learning_rate`, `beta_1`, `beta_2`, `epsilon`, `loss_function`
//! (`categorical_cross_entropy`), `batch_size`, `dropout_keep_rate`,
//! `l2_weight_decay`, `early_stopping_max_epoch`,
//! `early_stopping_patience_epoch`, plus `train_acc_stop`, `folds`, `seed`
//! and `balance_target`.

use std::collections::BTreeSet;
use std::fmt::Write;
use std::path::Path;
use std::str::FromStr;

use vesselscreen_core::trainer::TrainConfig;
use vesselscreen_core::Dims3;

use crate::error::{Error, Result};

pub fn parse_dims(s: &str) -> Option<Dims3> {
    let parts: Vec<usize> = s.split('x').map(|p| p.trim().parse().ok()).collect::<Option<_>>()?;
    match parts[..] {
        [w, h, l] if w > 0 && h > 0 && l > 0 => Some(Dims3::new(w, h, l)),
        _ => None,
    }
}

fn num<T: FromStr>(path: &Path, line: usize, key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::input(path, format!("line {}: invalid value {:?} for {}", line, v, key)))
}

/// A parsed file plus the set of keys it named.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigFile {
    pub config: TrainConfig,
    pub keys: BTreeSet<String>,
}

impl ConfigFile {
    pub fn has(&self, key: &str) -> bool {
        self.keys.contains(key)
    }
}

pub fn parse(text: &str, path: &Path) -> Result<ConfigFile> {
    let mut c = TrainConfig::default();
    let mut seen = BTreeSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let Some((k, v)) = body.split_once('=') else {
            return Err(Error::input(path, format!("line {}: expected key = value", line)));
        };
        let (k, v) = (k.trim(), v.trim());
        if !seen.insert(k.to_string()) {
            return Err(Error::input(path, format!("line {}: duplicate key {}", line, k)));
        }
        match k {
            "processing_dimension" => {
                c.dims = parse_dims(v)
                    .ok_or_else(|| Error::input(path, format!("line {}: dims must look like 21x21x350", line)))?
            }
            "optimizer" => {
                if !v.eq_ignore_ascii_case("adam") {
                    return Err(Error::input(path, format!("line {}: only adam is supported", line)));
                }
            }
            "loss_function" => {
                if v != "categorical_cross_entropy" {
                    return Err(Error::input(path, format!("line {}: only categorical_cross_entropy is supported", line)));
                }
            }
            "learning_rate" => c.lr = num(path, line, k, v)?,
            "beta_1" => c.beta1 = num(path, line, k, v)?,
            "beta_2" => c.beta2 = num(path, line, k, v)?,
            "epsilon" => c.eps = num(path, line, k, v)?,
            "batch_size" => c.batch_size = num(path, line, k, v)?,
            "dropout_keep_rate" => c.keep_rate = num(path, line, k, v)?,
            "l2_weight_decay" => c.lambda_l2 = num(path, line, k, v)?,
            "early_stopping_max_epoch" => c.max_epochs = num(path, line, k, v)?,
            "early_stopping_patience_epoch" => c.patience = num(path, line, k, v)?,
            "train_acc_stop" => c.train_acc_stop = num(path, line, k, v)?,
            "folds" => c.folds = num(path, line, k, v)?,
            "seed" => c.seed = num(path, line, k, v)?,
            "balance_target" => c.balance_target = Some(num(path, line, k, v)?),
            _ => return Err(Error::input(path, format!("line {}: unknown key {}", line, k))),
        }
    }
    Ok(ConfigFile { config: c, keys: seen })
}

pub fn load(path: &Path) -> Result<ConfigFile> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::input(path, e.to_string()))?;
    parse(&text, path)
}

/// The effective configuration in the file format, keys in a fixed order.
pub fn render(c: &TrainConfig) -> String {
    let mut s = String::new();
    let d = c.dims;
    let _ = writeln!(s, "processing_dimension = {}x{}x{}", d.w, d.h, d.l);
    let _ = writeln!(s, "optimizer = adam");
    let _ = writeln!(s, "learning_rate = {:e}", c.lr);
    let _ = writeln!(s, "beta_1 = {}", c.beta1);
    let _ = writeln!(s, "beta_2 = {}", c.beta2);
    let _ = writeln!(s, "epsilon = {:e}", c.eps);
    let _ = writeln!(s, "loss_function = categorical_cross_entropy");
    let _ = writeln!(s, "batch_size = {}", c.batch_size);
    let _ = writeln!(s, "dropout_keep_rate = {}", c.keep_rate);
    let _ = writeln!(s, "l2_weight_decay = {:e}", c.lambda_l2);
    let _ = writeln!(s, "early_stopping_max_epoch = {}", c.max_epochs);
    let _ = writeln!(s, "early_stopping_patience_epoch = {}", c.patience);
    let _ = writeln!(s, "train_acc_stop = {}", c.train_acc_stop);
    let _ = writeln!(s, "folds = {}", c.folds);
    let _ = writeln!(s, "seed = {}", c.seed);
    if let Some(t) = c.balance_target {
        let _ = writeln!(s, "balance_target = {}", t);
    }
    s
}
