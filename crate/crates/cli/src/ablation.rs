//! Ablation grids over a base config, one experiment per cell.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use vfs_core::model::SamplingConfig;
use vfs_core::objectives::Regime;
use vfs_core::video::SampleMode;
use vfs_core::{Error, Result};

use crate::config::RunConfig;
use crate::experiment::{run_experiment_on, Datasets, Summary};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    FrameInterval,
    FrameNum,
    ColorAug,
    Negatives,
    DifferentFrame,
}

impl Axis {
    pub const ALL: [Axis; 5] = [
        Axis::FrameInterval,
        Axis::FrameNum,
        Axis::ColorAug,
        Axis::Negatives,
        Axis::DifferentFrame,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Axis::FrameInterval => "frame_interval",
            Axis::FrameNum => "frame_num",
            Axis::ColorAug => "color_aug",
            Axis::Negatives => "negatives",
            Axis::DifferentFrame => "different_frame",
        }
    }

    pub fn parse(s: &str) -> Result<Axis> {
        Axis::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation axis {:?}", s)))
    }

    /// Column names of the cell labels.
    pub fn keys(&self) -> Vec<&'static str> {
        match self {
            Axis::Negatives => vec!["negatives", "color_aug"],
            other => vec![other.name()],
        }
    }

    /// Labelled configs of every cell, in table order.
    pub fn cells(&self, base: &RunConfig) -> Vec<(Vec<String>, RunConfig)> {
        let with = |f: &dyn Fn(&mut RunConfig)| {
            let mut c = base.clone();
            f(&mut c);
            c
        };
        let flag = |b: bool| if b { "yes" } else { "no" }.to_string();
        match self {
            Axis::FrameInterval => {
                let mut cells: Vec<(Vec<String>, RunConfig)> = [0usize, 2, 4, 8, 16, 32]
                    .into_iter()
                    .map(|d| {
                        let cfg = with(&|c| {
                            c.train.sampling = SamplingConfig {
                                mode: SampleMode::Continuous,
                                delta: d,
                                start: None,
                            }
                        });
                        (vec![d.to_string()], cfg)
                    })
                    .collect();
                let distant = with(&|c| {
                    c.train.sampling = SamplingConfig {
                        mode: SampleMode::Distant,
                        ..SamplingConfig::default()
                    }
                });
                cells.push((vec!["D".into()], distant));
                cells
            }
            Axis::FrameNum => [2usize, 4, 8]
                .into_iter()
                .map(|n| (vec![n.to_string()], with(&|c| c.train.n_frames = n)))
                .collect(),
            Axis::ColorAug => [false, true]
                .into_iter()
                .map(|on| (vec![flag(on)], with(&|c| c.train.augment.color.enabled = on)))
                .collect(),
            Axis::DifferentFrame => [false, true]
                .into_iter()
                .map(|on| (vec![flag(on)], with(&|c| c.train.different_frame = on)))
                .collect(),
            Axis::Negatives => {
                let mut cells = Vec::new();
                for regime in [Regime::WithoutNeg, Regime::WithNeg] {
                    for color in [false, true] {
                        let cfg = with(&|c| {
                            c.train.regime = regime;
                            c.train.augment.color.enabled = color;
                        });
                        cells.push((vec![flag(regime == Regime::WithNeg), flag(color)], cfg));
                    }
                }
                cells
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub labels: Vec<String>,
    pub config_hash: String,
    pub summary: Summary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub axis: Axis,
    pub keys: Vec<String>,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let head: Vec<&str> = self.keys.iter().map(String::as_str).collect();
        let _ = writeln!(s, "| {} | J | F | P | AUC | std |", head.join(" | "));
        let _ = writeln!(s, "|{}", "---|".repeat(self.keys.len() + 5));
        for r in &self.rows {
            let m = &r.summary.mean;
            let _ = writeln!(
                s,
                "| {} | {:.3} | {:.3} | {:.3} | {:.3} | {:.4} |",
                r.labels.join(" | "),
                m.j_mean,
                m.f_mean,
                m.precision,
                m.success,
                m.embedding_std
            );
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{},j_mean,f_mean,precision,success,center_error,embedding_std\n", self.keys.join(","));
        for r in &self.rows {
            let m = &r.summary.mean;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.labels.join(","),
                m.j_mean,
                m.f_mean,
                m.precision,
                m.success,
                m.center_error,
                m.embedding_std
            );
        }
        s
    }
}

/// Runs every cell of `axis` in `out_dir/<axis>/<label>` on one shared
/// corpus and writes `table.md`, `table.csv` and `table.json` next to them.
pub fn run_ablation(axis: Axis, base: &RunConfig, out_dir: impl AsRef<Path>) -> Result<AblationTable> {
    base.validate()?;
    let data = Datasets::generate(&base.data)?;
    let root = out_dir.as_ref().join(axis.name());
    let mut rows = Vec::new();
    for (labels, mut cfg) in axis.cells(base) {
        cfg.name = format!("{}={}", axis.name(), labels.join("/"));
        let report = run_experiment_on(&cfg, &data, root.join(labels.join("-")))?;
        rows.push(AblationRow {
            labels,
            config_hash: report.config_hash,
            summary: report.summary,
        });
    }
    let table = AblationTable {
        axis,
        keys: axis.keys().into_iter().map(String::from).collect(),
        rows,
    };
    let write = |name: &str, text: String| {
        let p = root.join(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))
    };
    write("table.md", table.to_markdown())?;
    write("table.csv", table.to_csv())?;
    write("table.json", serde_json::to_string_pretty(&table)?)?;
    Ok(table)
}
