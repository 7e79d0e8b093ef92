//! Run configuration: flat `key = value` lines, `#` starts a comment.

use std::path::{Path, PathBuf};

use microvolumetry::data::SplitRule;
use microvolumetry::training::TrainConfig;
use microvolumetry::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    /// Dataset directory holding a manifest, or the manifest itself.
    pub dataset: PathBuf,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
}

fn parse_value<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("line {line}: {key} = {value:?} is not valid")))
}

/// Parses a config file body. Relative paths resolve against `base`.
pub fn parse_run_config(text: &str, base: &Path) -> Result<RunConfig> {
    let mut train = TrainConfig::default();
    let mut dataset = None;
    let mut checkpoint = None;
    let mut metrics = None;
    let mut fraction = None;
    let mut split_named = None;

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| Error::Config(format!("line {line_no}: expected key = value, got {line:?}")))?;
        let path = || base.join(value);
        match key {
            "depth" => train.unet.depth = parse_value(line_no, key, value)?,
            "base_channels" => train.unet.base_channels = parse_value(line_no, key, value)?,
            "in_channels" => train.unet.in_channels = parse_value(line_no, key, value)?,
            "num_classes" => train.unet.num_classes = parse_value(line_no, key, value)?,
            "output_head" => train.unet.output_head = value.parse()?,
            "input_size" => train.unet.input_size = parse_value(line_no, key, value)?,
            "skip_connections" => train.unet.skip_connections = parse_value(line_no, key, value)?,
            "epochs" => train.epochs = parse_value(line_no, key, value)?,
            "batch_size" => train.batch_size = parse_value(line_no, key, value)?,
            "lr" => train.adam.lr = parse_value(line_no, key, value)?,
            "beta1" => train.adam.beta1 = parse_value(line_no, key, value)?,
            "beta2" => train.adam.beta2 = parse_value(line_no, key, value)?,
            "epsilon" => train.adam.epsilon = parse_value(line_no, key, value)?,
            "seed" => train.seed = parse_value(line_no, key, value)?,
            "split" => split_named = Some(value.parse::<SplitRule>()?),
            "validation_fraction" => fraction = Some(parse_value::<f64>(line_no, key, value)?),
            "dataset" => dataset = Some(path()),
            "checkpoint" => checkpoint = Some(path()),
            "metrics" => metrics = Some(path()),
            other => return Err(Error::Config(format!("line {line_no}: unknown key {other:?}"))),
        }
    }

    train.split = match (split_named, fraction) {
        (Some(_), Some(_)) => {
            return Err(Error::Config(
                "set either split or validation_fraction, not both".into(),
            ))
        }
        (Some(rule), None) => rule,
        (None, Some(f)) => SplitRule::Fraction(f),
        (None, None) => SplitRule::NinetyFiveFive,
    };
    train.validate()?;
    if train.unet.in_channels != 1 {
        return Err(Error::Config("grayscale input needs in_channels = 1".into()));
    }
    let dataset = dataset.ok_or_else(|| Error::Config("missing key: dataset".into()))?;
    let checkpoint = checkpoint.ok_or_else(|| Error::Config("missing key: checkpoint".into()))?;
    let metrics = metrics.unwrap_or_else(|| checkpoint.with_extension("metrics.csv"));
    Ok(RunConfig {
        train,
        dataset,
        checkpoint,
        metrics,
    })
}

pub fn read_run_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_run_config(&text, path.parent().unwrap_or(Path::new("")))
}
