//! Protocol drivers: expand a base config over a fixed grid and compare cells.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::report::{self, ExperimentReport};
use crate::select::{StrategyConfig, StrategyKind};
use crate::train::{run_experiment, RunOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProtocolName {
    Noise,
    Imbalance,
    LowResource,
    Ablation,
    DropoutSweep,
    DoubledBatch,
}

impl ProtocolName {
    pub const ALL: [ProtocolName; 6] = [
        ProtocolName::Noise,
        ProtocolName::Imbalance,
        ProtocolName::LowResource,
        ProtocolName::Ablation,
        ProtocolName::DropoutSweep,
        ProtocolName::DoubledBatch,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ProtocolName::Noise => "noise",
            ProtocolName::Imbalance => "imbalance",
            ProtocolName::LowResource => "low-resource",
            ProtocolName::Ablation => "ablation",
            ProtocolName::DropoutSweep => "dropout-sweep",
            ProtocolName::DoubledBatch => "doubled-batch",
        }
    }

    /// Metric the comparison table ranks cells by.
    fn metric(self, base: &TrainConfig) -> &'static str {
        if base.loss == crate::loss::LossFn::MeanSquaredError {
            "mse"
        } else if self == ProtocolName::Imbalance {
            "positive_recall"
        } else {
            "accuracy"
        }
    }
}

impl fmt::Display for ProtocolName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProtocolName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ProtocolName::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown protocol `{s}`")))
    }
}

pub const NOISE_LEVELS: [f64; 3] = [0.05, 0.10, 0.15];
pub const IMBALANCE_REDUCTIONS: [f64; 3] = [0.7, 0.6, 0.5];
pub const LOW_RESOURCE_SIZES: [usize; 2] = [500, 1000];
pub const DROPOUT_KEEPS: [f64; 2] = [0.95, 0.90];

pub const ABLATION_VARIANTS: [&str; 6] = [
    "vanilla",
    "g_avg",
    "g_avg+RSS",
    "g_avg+scaling",
    "g_avg+perturbation",
    "bidrop-full",
];

/// One grid point before it is run.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSpec {
    /// Grid coordinate, e.g. `noise=0.05`; `-` when the protocol has none.
    pub setting: String,
    pub variant: String,
    pub config: TrainConfig,
}

fn with_strategy(base: &TrainConfig, kind: StrategyKind, k: usize) -> TrainConfig {
    let mut c = base.clone();
    c.strategy = StrategyConfig { kind, ..base.strategy };
    c.k = k;
    c
}

/// Full-net training with a single pass: plain (unmasked) Adam.
pub fn vanilla(base: &TrainConfig) -> TrainConfig {
    with_strategy(base, StrategyKind::FullNet, 1)
}

/// `bidrop-full` with at least two passes.
pub fn bidrop(base: &TrainConfig) -> TrainConfig {
    with_strategy(base, StrategyKind::BidropFull, base.k.max(2))
}

fn robustness_set(base: &TrainConfig, dynamic: bool) -> Vec<(String, TrainConfig)> {
    let mut v = vec![
        ("vanilla".to_string(), vanilla(base)),
        (
            "static-fisher".to_string(),
            with_strategy(base, StrategyKind::StaticFisher, 1),
        ),
    ];
    if dynamic {
        v.push((
            "dynamic-fisher".to_string(),
            with_strategy(base, StrategyKind::DynamicFisher, 1),
        ));
    }
    v.push(("bidrop-full".to_string(), bidrop(base)));
    v
}

fn grid<T: fmt::Display>(
    key: &str,
    values: &[T],
    apply: impl Fn(&mut TrainConfig, &T),
    base: &TrainConfig,
    dynamic: bool,
) -> Vec<CellSpec> {
    values
        .iter()
        .flat_map(|v| {
            let mut b = base.clone();
            apply(&mut b, v);
            robustness_set(&b, dynamic)
                .into_iter()
                .map(move |(variant, config)| CellSpec {
                    setting: format!("{key}={v}"),
                    variant,
                    config,
                })
        })
        .collect()
}

/// The cells a protocol runs, in output order.
pub fn expand(name: ProtocolName, base: &TrainConfig) -> Vec<CellSpec> {
    let mut cells = match name {
        ProtocolName::Noise => grid("noise", &NOISE_LEVELS, |c, &r| c.label_noise = r, base, false),
        ProtocolName::Imbalance => grid("reduction", &IMBALANCE_REDUCTIONS, |c, &r| c.imbalance = r, base, false),
        ProtocolName::LowResource => grid("size", &LOW_RESOURCE_SIZES, |c, &n| c.subsample = n, base, true),
        ProtocolName::Ablation => {
            let k = base.k.max(2);
            let kinds = [
                StrategyKind::GavgOnly,
                StrategyKind::RandomSubnet,
                StrategyKind::BidropScalingOnly,
                StrategyKind::BidropPerturbationOnly,
                StrategyKind::BidropFull,
            ];
            std::iter::once(vanilla(base))
                .chain(kinds.into_iter().map(|kind| with_strategy(base, kind, k)))
                .zip(ABLATION_VARIANTS)
                .map(|(config, variant)| CellSpec {
                    setting: "-".into(),
                    variant: variant.into(),
                    config,
                })
                .collect()
        }
        ProtocolName::DropoutSweep => DROPOUT_KEEPS
            .iter()
            .map(|&keep| {
                let mut config = bidrop(base);
                config.keep_prob = keep;
                CellSpec {
                    setting: format!("keep={keep}"),
                    variant: "bidrop-full".into(),
                    config,
                }
            })
            .collect(),
        ProtocolName::DoubledBatch => {
            let mut doubled = vanilla(base);
            doubled.doubled_batch = true;
            let mut single = vanilla(base);
            single.doubled_batch = false;
            let mut bd = bidrop(base);
            bd.doubled_batch = false;
            vec![
                ("vanilla-B", single),
                ("vanilla-2B", doubled),
                ("bidrop-B-repeated", bd),
            ]
            .into_iter()
            .map(|(variant, config)| CellSpec {
                setting: format!("batch={}", base.batch_size),
                variant: variant.into(),
                config,
            })
            .collect()
        }
    };
    for c in &mut cells {
        c.config.name = format!("{}/{}/{}", name, c.setting, c.variant);
    }
    cells
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolCell {
    pub setting: String,
    pub variant: String,
    pub report: ExperimentReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub setting: String,
    pub variant: String,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    /// Signed difference from the vanilla cell at the same setting.
    pub delta_vs_vanilla: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolReport {
    pub protocol: ProtocolName,
    pub cells: Vec<ProtocolCell>,
    pub table: Vec<ComparisonRow>,
}

impl ProtocolReport {
    /// Distinct settings in first-seen order.
    pub fn settings(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for c in &self.cells {
            if !out.contains(&c.setting.as_str()) {
                out.push(&c.setting);
            }
        }
        out
    }

    pub fn variants(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for c in &self.cells {
            if !out.contains(&c.variant.as_str()) {
                out.push(&c.variant);
            }
        }
        out
    }

    pub fn render_table(&self) -> String {
        let mut s = format!(
            "{:<20} {:<22} {:<16} {:>10} {:>10} {:>12}\n",
            "setting", "variant", "metric", "mean", "std", "vs vanilla"
        );
        for r in &self.table {
            let delta = r
                .delta_vs_vanilla
                .map(|d| format!("{d:+.4}"))
                .unwrap_or_else(|| "-".into());
            s.push_str(&format!(
                "{:<20} {:<22} {:<16} {:>10.4} {:>10.4} {:>12}\n",
                r.setting, r.variant, r.metric, r.mean, r.std, delta
            ));
        }
        s
    }
}

fn comparison(metric: &str, cells: &[ProtocolCell]) -> Result<Vec<ComparisonRow>> {
    cells
        .iter()
        .map(|c| {
            let agg = c
                .report
                .metric(metric)
                .ok_or_else(|| Error::Empty(format!("metric `{metric}` missing for {}", c.report.name)))?;
            let base = cells
                .iter()
                .find(|v| v.setting == c.setting && v.variant.starts_with("vanilla"))
                .and_then(|v| v.report.metric(metric));
            Ok(ComparisonRow {
                setting: c.setting.clone(),
                variant: c.variant.clone(),
                metric: metric.to_string(),
                mean: agg.mean,
                std: agg.std,
                delta_vs_vanilla: base.map(|b| agg.mean - b.mean),
            })
        })
        .collect()
}

/// Run every cell of a protocol. Mask dumps and checkpoints of a cell go to
/// `opts.out_dir/<setting>/<variant>` when an output directory is given.
pub fn run_protocol(name: ProtocolName, base: &TrainConfig, opts: &RunOptions) -> Result<ProtocolReport> {
    base.validate()?;
    let cells = expand(name, base)
        .into_iter()
        .map(|spec| {
            let cell_opts = RunOptions {
                out_dir: opts
                    .out_dir
                    .as_ref()
                    .map(|d| d.join(cell_dir(&spec.setting, &spec.variant))),
            };
            Ok(ProtocolCell {
                report: run_experiment(&spec.config, &cell_opts)?,
                setting: spec.setting,
                variant: spec.variant,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let table = comparison(name.metric(base), &cells)?;
    Ok(ProtocolReport {
        protocol: name,
        cells,
        table,
    })
}

fn cell_dir(setting: &str, variant: &str) -> String {
    format!("{setting}_{variant}").replace(['/', '+', '='], "_")
}

/// Write `protocol.json`, `report.csv` (one row per cell × seed) and `table.txt`.
pub fn emit_protocol(report: &ProtocolReport, dir: &Path) -> Result<()> {
    report::ensure_dir(dir)?;
    report::write_json(&dir.join("protocol.json"), report)?;
    let cells: Vec<(String, &ExperimentReport)> = report
        .cells
        .iter()
        .map(|c| (format!("{}/{}", c.setting, c.variant), &c.report))
        .collect();
    let refs: Vec<(&str, &ExperimentReport)> = cells.iter().map(|(n, r)| (n.as_str(), *r)).collect();
    report::write_csv(&dir.join("report.csv"), &refs)?;
    let table = dir.join("table.txt");
    fs::write(&table, report.render_table()).map_err(|e| Error::io(&table, e))
}
