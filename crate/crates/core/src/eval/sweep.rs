use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::error::{ensure, Error, Result};
use crate::stft::StftFormat;

use super::experiment::{median, run_experiment, CellResult, ExperimentConfig, Stage1Config};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AblationAxis {
    MaskRatio,
    MaskStrategy,
    StftFormat,
    Stage1,
}

impl AblationAxis {
    pub fn default_values(self) -> Vec<String> {
        let v: &[&str] = match self {
            AblationAxis::MaskRatio => &["0.70", "0.80", "0.90", "0.95", "0.98"],
            AblationAxis::MaskStrategy => &["random", "spatial", "temporal", "frequency"],
            AblationAxis::StftFormat => &["magnitude", "magnitude-phase", "real-imag"],
            AblationAxis::Stage1 => &["on", "off"],
        };
        v.iter().map(|s| s.to_string()).collect()
    }

    /// `base` with the axis set to `value`; everything else untouched.
    pub fn apply(self, base: &ExperimentConfig, value: &str, stage1: Stage1Config) -> Result<ExperimentConfig> {
        let mut cfg = base.clone();
        match self {
            AblationAxis::MaskRatio => {
                let r: f64 = value
                    .parse()
                    .map_err(|_| Error::Contract(format!("mask ratio {value:?} is not a number")))?;
                ensure!(r > 0.0 && r < 1.0, Contract, "mask ratio {r} outside (0, 1)");
                cfg.pretrain.mask_ratio = r;
            }
            AblationAxis::MaskStrategy => cfg.pretrain.strategy = value.parse()?,
            AblationAxis::StftFormat => cfg.stft.format = value.parse::<StftFormat>()?,
            AblationAxis::Stage1 => {
                cfg.stage1 = match value {
                    "on" => Some(stage1),
                    "off" => None,
                    other => return Err(Error::Contract(format!("stage-1 value {other:?} is not on/off"))),
                }
            }
        }
        Ok(cfg)
    }
}

impl fmt::Display for AblationAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AblationAxis::MaskRatio => "mask-ratio",
            AblationAxis::MaskStrategy => "mask-strategy",
            AblationAxis::StftFormat => "stft-format",
            AblationAxis::Stage1 => "stage1-on-off",
        })
    }
}

impl FromStr for AblationAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mask-ratio" => Ok(AblationAxis::MaskRatio),
            "mask-strategy" => Ok(AblationAxis::MaskStrategy),
            "stft-format" => Ok(AblationAxis::StftFormat),
            "stage1-on-off" => Ok(AblationAxis::Stage1),
            other => Err(Error::Contract(format!("unknown ablation axis {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub value: String,
    pub seed: u64,
    pub result: CellResult,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepTable {
    pub axis: AblationAxis,
    pub rows: Vec<SweepRow>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepMedian {
    pub value: String,
    pub probe_er: f64,
    pub finetune_er: Option<f64>,
}

impl SweepTable {
    /// Values in first-seen order.
    pub fn values(&self) -> Vec<String> {
        let mut v: Vec<String> = Vec::new();
        for r in &self.rows {
            if !v.contains(&r.value) {
                v.push(r.value.clone());
            }
        }
        v
    }

    pub fn medians(&self) -> Vec<SweepMedian> {
        self.values()
            .into_iter()
            .map(|value| {
                let cell: Vec<&SweepRow> = self.rows.iter().filter(|r| r.value == value).collect();
                let probe: Vec<f64> = cell.iter().map(|r| r.result.probe_er).collect();
                let ft: Vec<f64> = cell.iter().filter_map(|r| r.result.finetune_er).collect();
                SweepMedian {
                    value,
                    probe_er: median(&probe),
                    finetune_er: (!ft.is_empty()).then(|| median(&ft)),
                }
            })
            .collect()
    }

    /// One row per (value, seed), then one `median` row per value.
    pub fn to_csv(&self) -> String {
        let fmt_opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        let mut s = format!("{},seed,probe_er,finetune_er,final_loss\n", self.axis);
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                r.value,
                r.seed,
                r.result.probe_er,
                fmt_opt(r.result.finetune_er),
                r.result.final_loss
            );
        }
        for m in self.medians() {
            let _ = writeln!(s, "{},median,{},{},", m.value, m.probe_er, fmt_opt(m.finetune_er));
        }
        s
    }
}

/// Runs every (value, seed) cell with all other settings held at `base`.
pub fn ablation_sweep(
    axis: AblationAxis,
    values: &[String],
    base: &ExperimentConfig,
    seeds: &[u64],
    stage1: Stage1Config,
    mut on_cell: impl FnMut(&SweepRow),
) -> Result<SweepTable> {
    ensure!(!values.is_empty() && !seeds.is_empty(), Contract, "sweep needs at least one value and one seed");
    let cells: Vec<ExperimentConfig> = values
        .iter()
        .map(|v| axis.apply(base, v, stage1))
        .collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(values.len() * seeds.len());
    for (value, cfg) in values.iter().zip(&cells) {
        for &seed in seeds {
            let row = SweepRow {
                value: value.clone(),
                seed,
                result: run_experiment(&cfg.with_seed(seed))?,
            };
            on_cell(&row);
            rows.push(row);
        }
    }
    Ok(SweepTable { axis, rows })
}
