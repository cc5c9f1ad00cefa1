//! Dilation-rate and module ablations on a train/test split.

use crate::config::RunConfig;
use crate::dataio::{DatasetSplit, Sample};
use crate::error::{Error, Result};
use crate::metrics::evaluate;
use crate::net::{build, probabilities, NetworkConfig, NetworkParams};
use crate::training::{train, TrainingPair};

/// Default dilation-rate groups for the ablation run.
pub const DEFAULT_RATE_GROUPS: [[usize; 4]; 3] = [[1, 2, 3, 4], [1, 2, 4, 8], [2, 4, 8, 16]];

pub const CSV_HEADER: &str = "rates,precision,recall,f1";

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub rates: Vec<usize>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl AblationRow {
    pub fn csv_row(&self) -> String {
        let rates = self.rates.iter().map(|r| r.to_string()).collect::<Vec<_>>().join(",");
        format!("\"{rates}\",{:.6},{:.6},{:.6}", self.precision, self.recall, self.f1)
    }
}

pub fn to_csv(rows: &[AblationRow]) -> String {
    let mut s = format!("{CSV_HEADER}\n");
    for r in rows {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

/// Parses `"1,2,3,4|1,2,4,8"` into rate groups.
pub fn parse_groups(text: &str) -> Result<Vec<Vec<usize>>> {
    let groups: Vec<Vec<usize>> = text
        .split('|')
        .map(|g| crate::config::parse_rates(g).map_err(|e| Error::Config(format!("rate group '{g}': {e}"))))
        .collect::<Result<_>>()?;
    if groups.is_empty() {
        return Err(Error::Config("no rate groups given".into()));
    }
    Ok(groups)
}

fn pairs(samples: &[Sample], ids: &[String]) -> Vec<TrainingPair<f32>> {
    samples
        .iter()
        .filter(|s| ids.contains(&s.id))
        .map(|s| s.training_pair())
        .collect()
}

/// Scores trained parameters on `ids`: dataset-level precision, recall and
/// F1 at the configured threshold and margin.
pub fn score(
    params: &NetworkParams<f32>,
    net: &NetworkConfig,
    samples: &[Sample],
    ids: &[String],
    run: &RunConfig,
) -> Result<(f64, f64, f64)> {
    let mut probs = Vec::new();
    let mut gts = Vec::new();
    let mut names = Vec::new();
    for s in samples.iter().filter(|s| ids.contains(&s.id)) {
        let (h, w) = s.original_size();
        probs.push(probabilities(params, net, &s.image)?.remove(0).crop(h, w));
        gts.push(s.ground_truth());
        names.push(s.id.clone());
    }
    if probs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let report = evaluate(&names, &probs, &gts, run.margin, run.threshold)?;
    Ok((report.aggregate_precision, report.aggregate_recall, report.aggregate_f1))
}

/// Trains one model per rate group with a shared seed and epoch budget, then
/// scores each on the test split.
pub fn run(samples: &[Sample], split: &DatasetSplit, groups: &[Vec<usize>], run: &RunConfig) -> Result<Vec<AblationRow>> {
    let train_set = pairs(samples, &split.train);
    if train_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let eval_ids = if split.test.is_empty() { &split.train } else { &split.test };
    groups
        .iter()
        .map(|rates| {
            let net = NetworkConfig {
                dilation_rates: rates.clone(),
                with_mdm: true,
                ..run.net.clone()
            };
            log::info!("ablation: rates {rates:?}");
            let (params, _) = train(&train_set, &net, &run.train)?;
            let (precision, recall, f1) = score(&params, &net, samples, eval_ids, run)?;
            Ok(AblationRow {
                rates: rates.clone(),
                precision,
                recall,
                f1,
            })
        })
        .collect()
}

/// Parameter names of the four module variants: plain U-net, +HF, +MDM
/// and the full network.
pub fn variant_parameter_names(base: &NetworkConfig) -> Result<Vec<(&'static str, Vec<String>)>> {
    [(false, false), (false, true), (true, false), (true, true)]
        .iter()
        .map(|&(with_mdm, with_hf)| {
            let cfg = NetworkConfig {
                with_mdm,
                with_hf,
                ..base.clone()
            };
            let p: NetworkParams<f32> = build(&cfg)?;
            Ok((cfg.variant_name(), p.names().map(str::to_string).collect()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn groups_parse() {
        assert_eq!(parse_groups("1,2,3,4|2,4,8,16").unwrap(), vec![vec![1, 2, 3, 4], vec![2, 4, 8, 16]]);
        assert_eq!(parse_groups("2").unwrap(), vec![vec![2]]);
        assert!(parse_groups("1,2|x").is_err());
        assert!(parse_groups("4,2").is_err());
        assert!(parse_groups("").is_err());
    }

    #[test]
    fn csv_quotes_rates() {
        let row = AblationRow {
            rates: vec![2, 4, 8, 16],
            precision: 0.5,
            recall: 0.25,
            f1: 1.0 / 3.0,
        };
        assert_eq!(to_csv(&[row]), "rates,precision,recall,f1\n\"2,4,8,16\",0.500000,0.250000,0.333333\n");
    }
}
