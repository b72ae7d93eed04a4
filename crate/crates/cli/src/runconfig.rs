//! Plain-text training configuration: one `key = value` per line, `#`
//! comments. Keys match the TrainConfig / ModelConfig field names; values
//! with several components are space-separated.

use crate::CliError;
use octoconv_core::group::GroupName;
use octoconv_core::model::{ModelConfig, TrainConfig};
use std::path::Path;

pub struct RunSettings {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

fn bad(path: &Path, line: usize, msg: impl Into<String>) -> CliError {
    CliError::Usage(format!("{}:{}: {}", path.display(), line, msg.into()))
}

fn parse_usizes(v: &str) -> Option<Vec<usize>> {
    v.split_whitespace().map(|t| t.parse().ok()).collect()
}

/// Apply a settings file on top of profile defaults.
pub fn apply_config_file(path: &Path, settings: &mut RunSettings) -> Result<(), CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| bad(path, idx + 1, "expected key = value"))?;
        let key = key.trim();
        let value = value.trim();
        let parse_err = |what: &str| bad(path, idx + 1, format!("bad {what}: `{value}`"));
        match key {
            "group_name" => {
                settings.model.group_name =
                    GroupName::parse(value).map_err(|e| bad(path, idx + 1, e.to_string()))?
            }
            "base_widths" => {
                let v = parse_usizes(value).ok_or_else(|| parse_err("base_widths"))?;
                if v.len() != 6 {
                    return Err(bad(path, idx + 1, "base_widths needs 6 integers"));
                }
                settings.model.base_widths = [v[0], v[1], v[2], v[3], v[4], v[5]];
            }
            "kernel" => {
                let v = parse_usizes(value).ok_or_else(|| parse_err("kernel"))?;
                if v.len() != 3 {
                    return Err(bad(path, idx + 1, "kernel needs 3 integers"));
                }
                settings.model.kernel = (v[0], v[1], v[2]);
            }
            "pool_after" => {
                settings.model.pool_after = parse_usizes(value).ok_or_else(|| parse_err("pool_after"))?
            }
            "dropout_after" => {
                settings.model.dropout_after =
                    parse_usizes(value).ok_or_else(|| parse_err("dropout_after"))?
            }
            "dropout_p" => {
                settings.model.dropout_p = value.parse().map_err(|_| parse_err("dropout_p"))?
            }
            "input_shape" => {
                let v = parse_usizes(value).ok_or_else(|| parse_err("input_shape"))?;
                if v.len() != 4 {
                    return Err(bad(path, idx + 1, "input_shape needs 4 integers (c d h w)"));
                }
                settings.model.input_shape = (v[0], v[1], v[2], v[3]);
            }
            "n_classes" => {
                settings.model.n_classes = value.parse().map_err(|_| parse_err("n_classes"))?
            }
            "bn_momentum" => {
                settings.model.bn_momentum = value.parse().map_err(|_| parse_err("bn_momentum"))?
            }
            "batch_size" => {
                settings.train.batch_size = value.parse().map_err(|_| parse_err("batch_size"))?
            }
            "alpha" => {
                settings.train.adam.alpha = value.parse().map_err(|_| parse_err("alpha"))?
            }
            "beta1" => {
                settings.train.adam.beta1 = value.parse().map_err(|_| parse_err("beta1"))?
            }
            "beta2" => {
                settings.train.adam.beta2 = value.parse().map_err(|_| parse_err("beta2"))?
            }
            "epsilon" => {
                settings.train.adam.epsilon = value.parse().map_err(|_| parse_err("epsilon"))?
            }
            "max_epochs" => {
                settings.train.max_epochs = value.parse().map_err(|_| parse_err("max_epochs"))?
            }
            "patience" => {
                settings.train.patience = value.parse().map_err(|_| parse_err("patience"))?
            }
            "seed" => settings.train.seed = value.parse().map_err(|_| parse_err("seed"))?,
            "augment" => {
                settings.train.augment = match value {
                    "true" | "1" => true,
                    "false" | "0" => false,
                    _ => return Err(parse_err("augment")),
                }
            }
            other => return Err(bad(path, idx + 1, format!("unknown key `{other}`"))),
        }
    }
    Ok(())
}
