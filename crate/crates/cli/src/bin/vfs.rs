use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;
use vfs_core::model::load_checkpoint;
use vfs_core::readout::{
    center_error, precision_at, score_segmentation, segment_clip, success_auc, track, EncoderFeatures,
};
use vfs_core::video::clip_io::{frame_name, save_label_png};
use vfs_core::video::{gen_synthetic_clip, load_clip, save_clip, BoxXywh, GenSpec};
use vfs_core::{Error, Result};
use vfs_harness::{read_reports, run_ablation, run_experiment, Axis, RunConfig};

#[derive(Parser)]
#[command(name = "vfs", version, about = "Frame-level similarity lab on synthetic video")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic clips with ground truth.
    GenData {
        /// Generator spec (TOML); defaults when absent.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of clips; more than one writes `clip-NNNN` subdirectories
        /// with seeds `seed, seed + 1, ...`.
        #[arg(long, default_value_t = 1)]
        count: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate every seed of a run config.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the seed list of the config.
        #[arg(long)]
        seed: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Propagate the first-frame masks of a saved clip.
    Propagate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        clip: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Track a box through a saved clip.
    Track {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        clip: PathBuf,
        /// `x,y,w,h` in frame-0 pixels.
        #[arg(long)]
        init_box: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one ablation axis.
    Ablate {
        /// frame_interval, frame_num, color_aug, negatives or different_frame.
        #[arg(long)]
        axis: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize the latest report of each run directory.
    Report {
        runs: Vec<PathBuf>,
        /// Also write the table to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(path: Option<&Path>, seeds: &[u64]) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if !seeds.is_empty() {
        cfg.seeds = seeds.to_vec();
        cfg.validate()?;
    }
    Ok(cfg)
}

fn mkdir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write(p: &Path, text: &str) -> Result<()> {
    fs::write(p, text).map_err(|e| Error::io(p, e))
}

fn write_json<T: Serialize>(p: &Path, v: &T) -> Result<()> {
    write(p, &serde_json::to_string_pretty(v)?)
}

fn parse_box(s: &str) -> Result<BoxXywh> {
    let v: Vec<f32> = s
        .split(',')
        .map(|x| x.trim().parse::<f32>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Config(format!("init box {:?} is not x,y,w,h", s)))?;
    match v[..] {
        [x, y, w, h] => Ok(BoxXywh { x, y, w, h }),
        _ => Err(Error::Config(format!("init box {:?} needs four numbers", s))),
    }
}

#[derive(Serialize)]
struct TrackMetrics {
    /// Ground-truth object with the best frame-0 overlap, if any overlaps.
    object: Option<usize>,
    precision: Option<f64>,
    success: Option<f64>,
    mean_center_error: Option<f64>,
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { spec, seed, count, out } => {
            let spec: GenSpec = match spec {
                Some(p) => {
                    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
                    toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?
                }
                None => GenSpec::default(),
            };
            if count == 1 {
                return save_clip(&gen_synthetic_clip(&spec, seed)?, &out);
            }
            for i in 0..count {
                save_clip(&gen_synthetic_clip(&spec, seed + i)?, out.join(format!("clip-{:04}", i)))?;
            }
            Ok(())
        }
        Command::Train { config, seed, out } => {
            let cfg = load_config(config.as_deref(), &seed)?;
            let report = run_experiment(&cfg, &out)?;
            println!("{}", serde_json::to_string_pretty(&report.summary)?);
            Ok(())
        }
        Command::Propagate { ckpt, clip, config, out } => {
            let cfg = load_config(config.as_deref(), &[])?;
            let encoder = load_checkpoint(&ckpt)?.encoder();
            let clip = load_clip(&clip)?;
            let masks = segment_clip(&EncoderFeatures::fine(&encoder), &clip, &cfg.eval.propagation)?;
            mkdir(&out)?;
            for (t, m) in masks.iter().enumerate() {
                let name = frame_name(t).replace("frame", "mask");
                save_label_png(m, clip.height(), clip.width(), out.join(name))?;
            }
            let score = score_segmentation(&masks, &clip, cfg.eval.boundary_tol)?;
            write_json(&out.join("metrics.json"), &score)
        }
        Command::Track { ckpt, clip, init_box, config, out } => {
            let cfg = load_config(config.as_deref(), &[])?;
            let init = parse_box(&init_box)?;
            let encoder = load_checkpoint(&ckpt)?.encoder();
            let clip = load_clip(&clip)?;
            let boxes = track(&clip.frames, init, &EncoderFeatures::object(&encoder), &cfg.eval.tracker)?;
            mkdir(&out)?;
            let mut csv = String::from("frame,x,y,w,h\n");
            for (t, b) in boxes.iter().enumerate() {
                csv.push_str(&format!("{},{},{},{},{}\n", t, b.x, b.y, b.w, b.h));
            }
            write(&out.join("boxes.csv"), &csv)?;
            let object = clip.boxes.first().and_then(|b0| {
                (0..clip.num_objects)
                    .map(|k| (k, b0[k].iou(&init)))
                    .filter(|&(_, v)| v > 0.0)
                    .max_by(|a, b| a.1.total_cmp(&b.1))
                    .map(|(k, _)| k)
            });
            let mut m = TrackMetrics {
                object,
                precision: None,
                success: None,
                mean_center_error: None,
            };
            if let (Some(k), true) = (object, boxes.len() > 1) {
                let gt: Vec<BoxXywh> = clip.boxes.iter().map(|b| b[k]).collect();
                m.precision = Some(precision_at(&boxes[1..], &gt[1..], cfg.eval.precision_threshold)?);
                m.success = Some(success_auc(&boxes[1..], &gt[1..])?);
                let total: f64 = boxes[1..].iter().zip(&gt[1..]).map(|(a, b)| center_error(a, b)).sum();
                m.mean_center_error = Some(total / (gt.len() - 1) as f64);
            }
            write_json(&out.join("metrics.json"), &m)
        }
        Command::Ablate { axis, config, seed, out } => {
            let axis = Axis::parse(&axis)?;
            let cfg = load_config(config.as_deref(), &seed)?;
            let table = run_ablation(axis, &cfg, &out)?;
            print!("{}", table.to_markdown());
            Ok(())
        }
        Command::Report { runs, out } => {
            let mut s = String::from("| run | seeds | J | F | P | AUC | centre err | std | config |\n|---|---|---|---|---|---|---|---|---|\n");
            for dir in &runs {
                let reports = read_reports(dir)?;
                let Some(r) = reports.last() else {
                    return Err(Error::Config(format!("{} has no report.json", dir.display())));
                };
                let (m, d) = (&r.summary.mean, &r.summary.std);
                s.push_str(&format!(
                    "| {} | {} | {:.3}±{:.3} | {:.3}±{:.3} | {:.3}±{:.3} | {:.3}±{:.3} | {:.2} | {:.4} | {} |\n",
                    r.name,
                    r.rows.len(),
                    m.j_mean,
                    d.j_mean,
                    m.f_mean,
                    d.f_mean,
                    m.precision,
                    d.precision,
                    m.success,
                    d.success,
                    m.center_error,
                    m.embedding_std,
                    &r.config_hash[..12]
                ));
            }
            print!("{}", s);
            match out {
                Some(p) => write(&p, &s),
                None => Ok(()),
            }
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Parameter(_) => 2,
        e if e.is_numeric() => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(exit_code(&e))
        }
    }
}
