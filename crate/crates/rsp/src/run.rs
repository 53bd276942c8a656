//! The experiment commands as library functions.

use std::fmt::Write as _;
use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rsp_core::analysis::cell_norms;
use rsp_core::gradcheck::suites::{self, CheckResult};
use rsp_core::layers::ParameterStore;
use rsp_core::loss::LossWeights;
use rsp_core::metrics::{argmax_classes, MetricsReport};
use rsp_core::model::{forward_sequence, Model, NUM_CLASSES};
use rsp_core::projection::max_capturable_speed;
use rsp_core::sim::GridFrame;
use rsp_core::train::{evaluate, Trainer};
use rsp_core::Tensor;

use crate::config::ExperimentConfig;
use crate::dataset::{load_split, read_sequence, Split};
use crate::error::{io_err, Error, Result};
use crate::{gtck, pgm};

pub const METRICS_HEADER: &str =
    "epoch,miou,iou_free,iou_unknown,iou_occupied,iou_moving,mae_vel,mae_vel_fast,params,seconds";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.gtck";
pub const CONFIG_FILE: &str = "config.txt";

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// One metrics CSV row; absent values are empty fields.
pub fn csv_row(epoch: usize, r: &MetricsReport) -> String {
    let mut s = format!("{epoch},{}", opt(r.iou.mean));
    for c in r.iou.per_class {
        let _ = write!(s, ",{}", opt(c));
    }
    let _ = write!(s, ",{},{},{},{:.3}", opt(r.mae), opt(r.mae_fast), r.params, r.seconds);
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TrainOptions {
    /// Record zero wall-clock time so that repeated runs produce identical
    /// files.
    pub deterministic: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Held-out metrics after each epoch.
    pub reports: Vec<MetricsReport>,
    pub checkpoint: PathBuf,
    pub params: ParameterStore<f32>,
    pub model: Model,
}

fn append(path: &Path, line: &str) -> Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(io_err(path))?;
    writeln!(f, "{line}").map_err(io_err(path))
}

/// Trains on the training split of `data`, evaluating on the held-out split
/// after every epoch. Writes `config.txt`, `metrics.csv`, one checkpoint per
/// epoch and `checkpoint.gtck` (the latest) into `out`.
pub fn train(config: &ExperimentConfig, data: &Path, out: &Path, opts: TrainOptions) -> Result<TrainOutcome> {
    let train_set = load_split(data, config, Split::Train)?;
    let heldout = load_split(data, config, Split::Heldout)?;
    if train_set.is_empty() || heldout.is_empty() {
        return Err(Error::Config(format!(
            "need both training and held-out sequences, found {} and {}",
            train_set.len(),
            heldout.len()
        )));
    }
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let cfg_path = out.join(CONFIG_FILE);
    std::fs::write(&cfg_path, config.to_text()).map_err(io_err(&cfg_path))?;
    let csv = out.join(METRICS_FILE);
    std::fs::write(&csv, format!("{METRICS_HEADER}\n")).map_err(io_err(&csv))?;

    let weights = LossWeights::from_frames(train_set.iter().flatten());
    let model = Model::build(&config.model)?;
    let mut trainer: Trainer<f32> = Trainer::new(model, config.train, weights)?;
    log::info!(
        "{}: {} parameters, {} training / {} held-out sequences",
        config.model.arch,
        trainer.params.count(),
        train_set.len(),
        heldout.len()
    );
    let checkpoint = out.join(CHECKPOINT_FILE);
    let mut reports = Vec::with_capacity(config.train.epochs);
    for epoch in 1..=config.train.epochs {
        let start = Instant::now();
        let stats = trainer.train_epoch(&train_set, epoch - 1)?;
        if stats.skipped > 0 {
            log::warn!("epoch {epoch}: skipped {} updates with non-finite gradients", stats.skipped);
        }
        let mut report = evaluate(&trainer.model, &trainer.params, &heldout)?;
        report.seconds = if opts.deterministic { 0.0 } else { start.elapsed().as_secs_f64() };
        gtck::save_params(&out.join(format!("epoch{epoch:02}.gtck")), &trainer.params)?;
        gtck::save_params(&checkpoint, &trainer.params)?;
        append(&csv, &csv_row(epoch, &report))?;
        log::info!(
            "epoch {epoch}: loss {:.4} (seg {:.4}, vel {:.4}) miou {} mae {} fast {}",
            stats.loss.total,
            stats.loss.segmentation,
            stats.loss.velocity,
            opt(report.iou.mean),
            opt(report.mae),
            opt(report.mae_fast)
        );
        reports.push(report);
    }
    Ok(TrainOutcome {
        reports,
        checkpoint,
        params: trainer.params,
        model: trainer.model,
    })
}

/// Stateful evaluation of a checkpoint on one split of a dataset.
pub fn evaluate_checkpoint(config: &ExperimentConfig, checkpoint: &Path, data: &Path, split: Split) -> Result<MetricsReport> {
    let model = Model::build(&config.model)?;
    let params = gtck::load_params(checkpoint, &model)?;
    let seqs = load_split(data, config, split)?;
    let start = Instant::now();
    let mut r = evaluate(&model, &params, &seqs)?;
    r.seconds = start.elapsed().as_secs_f64();
    Ok(r)
}

/// The configuration stored next to a checkpoint by [`train`].
pub fn sibling_config(checkpoint: &Path) -> Result<ExperimentConfig> {
    let dir = checkpoint.parent().unwrap_or(Path::new("."));
    ExperimentConfig::load(&dir.join(CONFIG_FILE))
}

/// Writes per-frame hidden-norm, predicted class, ground-truth class and
/// velocity-arrow images. Returns the number of frames rendered.
pub fn viz(checkpoint: &Path, sequence: &Path, out: &Path) -> Result<usize> {
    let config = sibling_config(checkpoint)?;
    let model = Model::build(&config.model)?;
    let params = gtck::load_params(checkpoint, &model)?;
    let frames = read_sequence(sequence)?;
    let geom = config.geometry();
    if frames.iter().any(|f| f.x != geom.x || f.y != geom.y || f.channels != config.model.s) {
        return Err(Error::Config("sequence does not match the checkpoint's grid".into()));
    }
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let inputs: Vec<Tensor<f32>> = frames.iter().map(GridFrame::input_tensor).collect();
    let mut state = model.zero_state();
    let outs = forward_sequence(&model, &params, &inputs, &mut state)?;
    let norms: Vec<Vec<f64>> = outs.iter().map(|o| cell_norms(&o.hidden)).collect();
    let max = norms.iter().flatten().fold(0.0f64, |m, &v| m.max(v));
    let cell_speed = geom.cell_size * geom.frame_rate;
    for (t, ((o, n), f)) in outs.iter().zip(&norms).zip(&frames).enumerate() {
        pgm::write(&out.join(format!("frame{t:03}_norm.pgm")), geom.y, geom.x, &pgm::scale(n, max))?;
        let pred = argmax_classes(o.class_logits.data(), NUM_CLASSES);
        pgm::write(&out.join(format!("frame{t:03}_class.pgm")), geom.y, geom.x, &pgm::classes(&pred))?;
        pgm::write(&out.join(format!("frame{t:03}_gt_class.pgm")), geom.y, geom.x, &pgm::classes(&f.gt_class))?;
        let (w, h, img) = pgm::arrows(geom.x, geom.y, o.v_refined.data(), 4, cell_speed, 0.5);
        pgm::write(&out.join(format!("frame{t:03}_velocity.pgm")), w, h, &img)?;
    }
    Ok(frames.len())
}

/// Runs one named gradient-check suite, or all of them.
pub fn gradcheck(module: Option<&str>, seed: u64) -> Result<Vec<CheckResult>> {
    Ok(match module {
        Some(m) => suites::run(m, seed)?,
        None => suites::run_all(seed)?,
    })
}

/// Speed above which a 3x3 kernel cannot follow an object between frames.
pub fn fast_threshold(config: &ExperimentConfig) -> Result<f64> {
    Ok(max_capturable_speed(3, &config.geometry())?)
}
