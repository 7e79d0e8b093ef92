use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::init::seeded_rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitRule {
    /// 5% validation: 95 training and 5 validation items out of 100.
    NinetyFiveFive,
    /// Validation share of the items, rounded to the nearest count >= 1.
    Fraction(f64),
}

impl SplitRule {
    pub fn validation_count(&self, items: usize) -> Result<usize> {
        let f = match *self {
            SplitRule::NinetyFiveFive => 0.05,
            SplitRule::Fraction(f) if f > 0.0 && f < 1.0 => f,
            SplitRule::Fraction(f) => return Err(Error::Argument(format!("validation fraction {f} outside (0, 1)"))),
        };
        Ok(((items as f64 * f).round() as usize).max(1))
    }
}

impl std::str::FromStr for SplitRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "95_5" {
            return Ok(SplitRule::NinetyFiveFive);
        }
        s.parse::<f64>()
            .map(SplitRule::Fraction)
            .map_err(|_| Error::Config(format!("split must be 95_5 or a fraction, got {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit<T> {
    pub train: Vec<T>,
    pub validation: Vec<T>,
}

/// Seeded choice of validation indices. Both lists come back sorted.
pub fn split_indices(items: usize, rule: SplitRule, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if items < 2 {
        return Err(Error::Argument(format!("need at least 2 items to split, got {items}")));
    }
    let n_val = rule.validation_count(items)?;
    if n_val >= items {
        return Err(Error::Argument(format!(
            "{items} items cannot supply {n_val} validation items and a training set"
        )));
    }
    let mut order: Vec<usize> = (0..items).collect();
    order.shuffle(&mut seeded_rng(seed));
    let mut validation = order[..n_val].to_vec();
    let mut train = order[n_val..].to_vec();
    validation.sort_unstable();
    train.sort_unstable();
    Ok((train, validation))
}

pub fn split_dataset<T>(items: Vec<T>, rule: SplitRule, seed: u64) -> Result<DatasetSplit<T>> {
    let (_, validation_idx) = split_indices(items.len(), rule, seed)?;
    let mut split = DatasetSplit {
        train: Vec::new(),
        validation: Vec::new(),
    };
    let mut next_val = validation_idx.iter().peekable();
    for (i, item) in items.into_iter().enumerate() {
        if next_val.next_if(|&&v| v == i).is_some() {
            split.validation.push(item);
        } else {
            split.train.push(item);
        }
    }
    Ok(split)
}
