//! Single experiments: train every seed, evaluate both readouts on the
//! held-out clips and record the results in a run directory.
//!
//! Layout of a run directory:
//! `config.snapshot` (the TOML config), `ckpt/seed-<s>.vfsc`,
//! `metrics.csv` (`seed,step,lr,loss`), `report.json` (array of reports,
//! appended to by every completed run) and `logs/` (per-seed step logs and
//! a `FAILED` marker after an aborted run).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use vfs_core::model::{embedding_std, load_checkpoint, save_checkpoint, train_step, Encoder, SiameseState};
use vfs_core::readout::{
    center_error, precision_at, score_segmentation, segment_clip, success_auc, track, EncoderFeatures,
};
use vfs_core::video::{gen_synthetic_clip, BoxXywh, Frame, VideoClip};
use vfs_core::{Error, Result};

use crate::config::{DataConfig, EvalConfig, RunConfig};

/// Training corpus and held-out clips of one data config.
#[derive(Clone, Debug)]
pub struct Datasets {
    pub corpus: Vec<VideoClip>,
    pub eval: Vec<VideoClip>,
}

impl Datasets {
    pub fn generate(cfg: &DataConfig) -> Result<Self> {
        let gen = |spec, seed0: u64, n: usize| -> Result<Vec<VideoClip>> {
            (0..n as u64).map(|i| gen_synthetic_clip(spec, seed0 + i)).collect()
        };
        Ok(Datasets {
            corpus: gen(&cfg.corpus, cfg.corpus_seed, cfg.corpus_clips)?,
            eval: gen(&cfg.eval, cfg.eval_seed, cfg.eval_clips)?,
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Propagation region IoU.
    pub j_mean: f64,
    /// Propagation boundary F.
    pub f_mean: f64,
    /// Tracking precision at the configured centre-error threshold.
    pub precision: f64,
    pub success: f64,
    /// Mean tracking centre error in pixels.
    pub center_error: f64,
    /// Mean per-dimension std of the target embeddings of probe frames.
    pub embedding_std: f64,
}

impl Metrics {
    fn fields(&self) -> [f64; 6] {
        [self.j_mean, self.f_mean, self.precision, self.success, self.center_error, self.embedding_std]
    }

    fn from_fields(v: [f64; 6]) -> Self {
        Metrics {
            j_mean: v[0],
            f_mean: v[1],
            precision: v[2],
            success: v[3],
            center_error: v[4],
            embedding_std: v[5],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub step: u64,
    pub lr: f64,
    pub loss: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRow {
    pub seed: u64,
    pub steps: u64,
    pub metrics: Metrics,
    /// `(step, embedding std)` recorded during training.
    pub std_trace: Vec<(u64, f64)>,
    pub losses: Vec<LossPoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: Metrics,
    /// Population standard deviation over seeds.
    pub std: Metrics,
}

impl Summary {
    pub fn of(rows: &[SeedRow]) -> Self {
        let n = rows.len().max(1) as f64;
        let mut mean = [0.0; 6];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r.metrics.fields()) {
                *m += v / n;
            }
        }
        let mut var = [0.0; 6];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r.metrics.fields()).zip(mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        Summary {
            mean: Metrics::from_fields(mean),
            std: Metrics::from_fields(var.map(f64::sqrt)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub name: String,
    pub config_hash: String,
    pub rows: Vec<SeedRow>,
    pub summary: Summary,
    pub wall_clock_s: f64,
}

impl RunReport {
    /// Equality of everything but the wall clock.
    pub fn same_results(&self, other: &RunReport) -> bool {
        self.name == other.name && self.config_hash == other.config_hash && self.rows == other.rows
    }
}

/// Target-side embedding probe: every `stride`-th frame of each clip at the
/// encoder input size.
pub fn probe_frames(clips: &[VideoClip], stride: usize, size: usize) -> Vec<Frame> {
    clips
        .iter()
        .flat_map(|c| c.frames.iter().step_by(stride.max(1)).map(move |f| f.resize(size, size)))
        .collect()
}

/// Both readouts on `clips`. Every object of every clip is tracked from its
/// frame-0 box; scores cover frames `1..T`.
pub fn evaluate(encoder: &Encoder, clips: &[VideoClip], cfg: &EvalConfig) -> Result<Metrics> {
    let fine = EncoderFeatures::fine(encoder);
    let object = EncoderFeatures::object(encoder);
    let (mut j, mut f) = (0.0, 0.0);
    let (mut prec, mut succ, mut err, mut tracks) = (0.0, 0.0, 0.0, 0usize);
    for clip in clips {
        let pred = segment_clip(&fine, clip, &cfg.propagation)?;
        let score = score_segmentation(&pred, clip, cfg.boundary_tol)?;
        j += score.j_mean;
        f += score.f_mean;
        if clip.len() < 2 {
            continue;
        }
        for obj in 0..clip.num_objects {
            let gt: Vec<BoxXywh> = clip.boxes.iter().map(|b| b[obj]).collect();
            let boxes = track(&clip.frames, gt[0], &object, &cfg.tracker)?;
            prec += precision_at(&boxes[1..], &gt[1..], cfg.precision_threshold)?;
            succ += success_auc(&boxes[1..], &gt[1..])?;
            err += boxes[1..].iter().zip(&gt[1..]).map(|(a, b)| center_error(a, b)).sum::<f64>() / (gt.len() - 1) as f64;
            tracks += 1;
        }
    }
    let n = clips.len().max(1) as f64;
    let nt = tracks.max(1) as f64;
    let probe = probe_frames(clips, cfg.probe_stride, encoder.cfg.input_size);
    let refs: Vec<&Frame> = probe.iter().collect();
    Ok(Metrics {
        j_mean: j / n,
        f_mean: f / n,
        precision: prec / nt,
        success: succ / nt,
        center_error: err / nt,
        embedding_std: embedding_std(encoder, &refs)?,
    })
}

struct RunDir {
    root: PathBuf,
}

impl RunDir {
    fn ckpt(&self, seed: u64) -> PathBuf {
        self.root.join("ckpt").join(format!("seed-{}.vfsc", seed))
    }

    fn loss_log(&self, seed: u64) -> PathBuf {
        self.root.join("logs").join(format!("seed-{}-loss.csv", seed))
    }

    fn std_log(&self, seed: u64) -> PathBuf {
        self.root.join("logs").join(format!("seed-{}-std.csv", seed))
    }

    fn failed(&self) -> PathBuf {
        self.root.join("logs").join("FAILED")
    }

    fn write(&self, name: impl AsRef<Path>, text: &str) -> Result<()> {
        let path = self.root.join(name);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

fn append_line(path: &Path, line: &str) -> Result<()> {
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    writeln!(f, "{}", line).map_err(|e| Error::io(path, e))
}

/// Data rows of a CSV log whose first column is a step `<= upto`, the file
/// rewritten to hold only those rows.
fn resume_log(path: &Path, header: &str, upto: u64) -> Result<Vec<Vec<String>>> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
        Err(e) => return Err(Error::io(path, e)),
    };
    let rows: Vec<Vec<String>> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect::<Vec<_>>())
        .filter(|r| r.first().and_then(|s| s.parse::<u64>().ok()).is_some_and(|s| s <= upto))
        .collect();
    let mut out = format!("{}\n", header);
    for r in &rows {
        out.push_str(&r.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))?;
    Ok(rows)
}

fn parse<T: std::str::FromStr>(s: &str, path: &Path) -> Result<T> {
    s.parse()
        .map_err(|_| Error::Config(format!("unreadable value {:?} in {}", s, path.display())))
}

fn run_seed(cfg: &RunConfig, data: &Datasets, seed: u64, dir: &RunDir) -> Result<SeedRow> {
    let ckpt = dir.ckpt(seed);
    let mut state = if ckpt.exists() {
        let s = load_checkpoint(&ckpt)?;
        if s.model != cfg.model || s.regime != cfg.train.regime || s.heads != cfg.train.heads() {
            return Err(Error::Config(format!("{} belongs to another config", ckpt.display())));
        }
        s
    } else {
        SiameseState::new(&cfg.model, &cfg.train, seed)?
    };

    let loss_path = dir.loss_log(seed);
    let std_path = dir.std_log(seed);
    let mut losses = Vec::new();
    for r in resume_log(&loss_path, "step,lr,loss", state.step)? {
        if r.len() == 3 {
            losses.push(LossPoint {
                step: parse(&r[0], &loss_path)?,
                lr: parse(&r[1], &loss_path)?,
                loss: parse(&r[2], &loss_path)?,
            });
        }
    }
    let mut std_trace = Vec::new();
    for r in resume_log(&std_path, "step,std", state.step)? {
        if r.len() == 2 {
            std_trace.push((parse(&r[0], &std_path)?, parse(&r[1], &std_path)?));
        }
    }

    let probe = probe_frames(&data.eval, cfg.eval.probe_stride, cfg.model.input_size);
    let probe_refs: Vec<&Frame> = probe.iter().collect();
    while state.step < cfg.train.steps {
        let out = match train_step(&mut state, &data.corpus, &cfg.train) {
            Ok(out) => out,
            Err(e) => {
                save_checkpoint(&state, &ckpt)?;
                dir.write("logs/FAILED", &format!("seed {} at step {}: {}\n", seed, state.step, e))?;
                return Err(e);
            }
        };
        append_line(&loss_path, &format!("{},{},{}", out.step, out.lr, out.loss))?;
        losses.push(LossPoint {
            step: out.step,
            lr: out.lr,
            loss: out.loss,
        });
        if cfg.eval.std_every > 0 && out.step % cfg.eval.std_every == 0 {
            let s = embedding_std(&state.encoder(), &probe_refs)?;
            append_line(&std_path, &format!("{},{}", out.step, s))?;
            std_trace.push((out.step, s));
        }
        if cfg.checkpoint_every > 0 && out.step % cfg.checkpoint_every == 0 {
            save_checkpoint(&state, &ckpt)?;
        }
    }
    save_checkpoint(&state, &ckpt)?;
    let metrics = evaluate(&state.encoder(), &data.eval, &cfg.eval)?;
    Ok(SeedRow {
        seed,
        steps: state.step,
        metrics,
        std_trace,
        losses,
    })
}

/// Reports already stored in `dir`, oldest first.
pub fn read_reports(dir: impl AsRef<Path>) -> Result<Vec<RunReport>> {
    let path = dir.as_ref().join("report.json");
    match fs::read_to_string(&path) {
        Ok(text) => Ok(serde_json::from_str(&text)?),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Vec::new()),
        Err(e) => Err(Error::io(&path, e)),
    }
}

pub fn run_experiment(cfg: &RunConfig, out_dir: impl AsRef<Path>) -> Result<RunReport> {
    cfg.validate()?;
    let data = Datasets::generate(&cfg.data)?;
    run_experiment_on(cfg, &data, out_dir)
}

/// As [`run_experiment`] on pre-generated data, which must match
/// `cfg.data`.
pub fn run_experiment_on(cfg: &RunConfig, data: &Datasets, out_dir: impl AsRef<Path>) -> Result<RunReport> {
    cfg.validate()?;
    let start = Instant::now();
    let dir = RunDir {
        root: out_dir.as_ref().to_path_buf(),
    };
    for sub in ["ckpt", "logs"] {
        let p = dir.root.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let snapshot = cfg.to_toml()?;
    let snap_path = dir.root.join("config.snapshot");
    if let Ok(existing) = fs::read_to_string(&snap_path) {
        if existing != snapshot {
            return Err(Error::Config(format!(
                "{} holds a run of a different config",
                dir.root.display()
            )));
        }
    }
    dir.write("config.snapshot", &snapshot)?;

    let mut rows = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        rows.push(run_seed(cfg, data, seed, &dir)?);
    }

    let mut csv = String::from("seed,step,lr,loss\n");
    for r in &rows {
        for p in &r.losses {
            csv.push_str(&format!("{},{},{},{}\n", r.seed, p.step, p.lr, p.loss));
        }
    }
    dir.write("metrics.csv", &csv)?;

    let report = RunReport {
        name: cfg.name.clone(),
        config_hash: cfg.hash()?,
        summary: Summary::of(&rows),
        rows,
        wall_clock_s: start.elapsed().as_secs_f64(),
    };
    let mut reports = read_reports(&dir.root)?;
    reports.push(report.clone());
    dir.write("report.json", &serde_json::to_string_pretty(&reports)?)?;
    let failed = dir.failed();
    if failed.exists() {
        fs::remove_file(&failed).map_err(|e| Error::io(&failed, e))?;
    }
    Ok(report)
}
