//! Training loop: shared-weight multi-stage forward, one optimizer step
//! per batch, per-step loss history, periodic validation, checkpoints.

mod checkpoint;
mod optim;
mod tensorfile;
#[cfg(test)]
mod tests;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use optim::Adam;
pub use tensorfile::{read_named_tensors, write_named_tensors};

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chart;
use crate::datagen::{augment_with, AugmentConfig, PairedSample};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::image_tensor::{stack_batch, stack_mask_batch};
use crate::losses::{
    total_loss_graph, FeatureExtractor, LossBreakdown, LossTargets, LossWeights, StagePredictions,
};
use crate::metrics::{self, MetricsReport};
use crate::model::{compose_region, stage_forward, EraseOptions, ModelConfig, TextEraser};

/// Ablation switches. `region_ms` rewires the forward pass (supervise the
/// raw reconstruction instead of the composite); the rest select loss terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainToggles {
    pub region_ms: bool,
    pub rg_loss: bool,
    pub ssim_loss: bool,
    pub vgg_loss: bool,
}

impl Default for TrainToggles {
    fn default() -> Self {
        TrainToggles {
            region_ms: true,
            rg_loss: true,
            ssim_loss: true,
            vgg_loss: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Erasing stages to unroll; must match the model's stage count.
    pub num_stages: usize,
    pub toggles: TrainToggles,
    /// Term weights; the toggles above override the term switches in here.
    pub loss_weights: LossWeights,
    /// Geometric augmentation of each drawn sample; `None` disables.
    pub augment: Option<AugmentConfig>,
    /// Validate every this many epochs (0: only after the last epoch).
    pub eval_every: usize,
    /// Seed for batch shuffling and augmentation draws.
    pub seed: u64,
    /// When set, receives best/last checkpoints, the JSONL history, and
    /// the training-curve chart.
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            epochs: 30,
            batch_size: 8,
            num_stages: 3,
            toggles: TrainToggles::default(),
            loss_weights: LossWeights::default(),
            augment: None,
            eval_every: 5,
            seed: 0,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.num_stages == 0 {
            return Err(Error::Config(
                "epochs, batch_size and num_stages must be at least 1".into(),
            ));
        }
        self.effective_weights().validate()
    }

    /// Loss weights with the ablation toggles applied.
    pub fn effective_weights(&self) -> LossWeights {
        LossWeights {
            rg_term: self.toggles.rg_loss,
            ssim_term: self.toggles.ssim_loss,
            vgg_term: self.toggles.vgg_loss,
            ..self.loss_weights.clone()
        }
    }
}

/// Validation summary: Image-Eval metrics of the final stage, mean PSNR
/// of every stage's output, and the no-op baseline PSNR(original, gt).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ValidationReport {
    pub metrics: MetricsReport,
    pub stage_psnr: Vec<f64>,
    pub baseline_psnr: f64,
}

/// One JSONL line of the training history.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HistoryRecord {
    Step {
        epoch: usize,
        step: usize,
        loss: LossBreakdown,
    },
    Eval {
        epoch: usize,
        step: usize,
        report: ValidationReport,
    },
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<HistoryRecord>,
}

impl TrainHistory {
    pub fn steps(&self) -> impl Iterator<Item = (usize, usize, &LossBreakdown)> {
        self.records.iter().filter_map(|r| match r {
            HistoryRecord::Step { epoch, step, loss } => Some((*epoch, *step, loss)),
            _ => None,
        })
    }

    pub fn evals(&self) -> impl Iterator<Item = (usize, &ValidationReport)> {
        self.records.iter().filter_map(|r| match r {
            HistoryRecord::Eval { epoch, report, .. } => Some((*epoch, report)),
            _ => None,
        })
    }

    pub fn final_eval(&self) -> Option<&ValidationReport> {
        self.evals().last().map(|(_, r)| r)
    }

    /// One record per line, in order.
    pub fn write_jsonl<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::new();
        for r in &self.records {
            let line = serde_json::to_string(r)
                .map_err(|e| Error::Data(format!("history serialization: {e}")))?;
            out.push_str(&line);
            out.push('\n');
        }
        std::fs::write(path, out).map_err(Error::io(path))
    }

    pub fn read_jsonl<P: AsRef<Path>>(path: P) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                serde_json::from_str(l).map_err(|e| Error::Data(format!("bad history line: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TrainHistory { records })
    }
}

/// Differentiable unrolled forward pass over a batch: every stage binds
/// the same parameter handles, so one backward pass accumulates all
/// stages' gradients into the shared weights.
pub(crate) fn forward_stages(
    g: &mut Graph<f32>,
    bound: &crate::model::Bound<'_>,
    cfg: &ModelConfig,
    orig: Var,
    num_stages: usize,
    region_ms: bool,
    training: bool,
) -> Vec<StagePredictions> {
    let shape = g.value(orig).shape().to_vec();
    let (h, w) = (shape[2], shape[3]);
    let mut prev = orig;
    let mut out = Vec::with_capacity(num_stages);
    for _ in 0..num_stages {
        let x6 = g.concat_channels(orig, prev);
        let heads = stage_forward(g, bound, cfg, x6, training);
        let composited = if region_ms {
            compose_region(g, heads.mask, heads.raw, orig)
        } else {
            heads.raw
        };
        let scaled = |g: &mut Graph<f32>, raw: Option<Var>, div: usize| {
            raw.map(|raw| {
                if region_ms {
                    let m = g.bilinear_resize(heads.mask, h / div, w / div);
                    let o = g.bilinear_resize(orig, h / div, w / div);
                    compose_region(g, m, raw, o)
                } else {
                    raw
                }
            })
        };
        let p1 = scaled(g, heads.p1, cfg.mrm_scales.0);
        let p2 = scaled(g, heads.p2, cfg.mrm_scales.1);
        out.push(StagePredictions {
            mask: heads.mask,
            composited,
            p1,
            p2,
        });
        prev = composited;
    }
    out
}

/// Supervision targets for a batch; the half/quarter-scale targets are
/// resized on the graph exactly like the model's own multi-scale heads.
fn batch_targets(
    g: &mut Graph<f32>,
    gt: Var,
    mask: Var,
    cfg: &ModelConfig,
    with_scales: bool,
) -> LossTargets {
    let shape = g.value(gt).shape().to_vec();
    let (h, w) = (shape[2], shape[3]);
    let mut tgt = LossTargets {
        gt,
        mask,
        gt_p1: None,
        gt_p2: None,
        mask_p1: None,
        mask_p2: None,
    };
    if with_scales {
        let (s1, s2) = cfg.mrm_scales;
        tgt.gt_p1 = Some(g.bilinear_resize(gt, h / s1, w / s1));
        tgt.gt_p2 = Some(g.bilinear_resize(gt, h / s2, w / s2));
        tgt.mask_p1 = Some(g.bilinear_resize(mask, h / s1, w / s1));
        tgt.mask_p2 = Some(g.bilinear_resize(mask, h / s2, w / s2));
    }
    tgt
}

/// Forward + backward + one optimizer step on one batch.
fn train_step(
    model: &mut TextEraser,
    batch: &[PairedSample],
    fx: &dyn FeatureExtractor<f32>,
    weights: &LossWeights,
    cfg: &TrainConfig,
    adam: &mut Adam,
) -> Result<LossBreakdown> {
    let originals: Vec<_> = batch.iter().map(|s| s.original.clone()).collect();
    let gts: Vec<_> = batch.iter().map(|s| s.gt.clone()).collect();
    let masks: Vec<_> = batch.iter().map(|s| s.mask_gt.clone()).collect();

    let (breakdown, grads) = {
        let mut g = Graph::<f32>::new();
        let bound = model.params().bind(&mut g);
        let orig = g.constant(stack_batch(&originals)?.into_dyn());
        let gt = g.constant(stack_batch(&gts)?.into_dyn());
        let mask = g.constant(stack_mask_batch(&masks)?.into_dyn());
        let stages = forward_stages(
            &mut g,
            &bound,
            model.config(),
            orig,
            cfg.num_stages,
            cfg.toggles.region_ms,
            true,
        );
        let tgt = batch_targets(&mut g, gt, mask, model.config(), weights.rg_term);
        let vars = total_loss_graph(&mut g, weights, fx, &stages, &tgt)?;
        let breakdown = vars.breakdown(&g);
        if !breakdown.total.is_finite() {
            return Err(non_finite_abort(cfg, &breakdown));
        }
        g.backward(vars.total);
        let grads: Vec<_> = bound.vars().iter().map(|&v| g.grad(v).cloned()).collect();
        (breakdown, grads)
    };
    adam.step(model.params_mut(), &grads)?;
    Ok(breakdown)
}

/// Dump the failing breakdown next to the checkpoints and build the error.
fn non_finite_abort(cfg: &TrainConfig, breakdown: &LossBreakdown) -> Error {
    let dump = serde_json::to_string_pretty(breakdown).unwrap_or_else(|_| "<unserializable>".into());
    if let Some(dir) = &cfg.checkpoint_dir {
        let _ = std::fs::create_dir_all(dir);
        let _ = std::fs::write(dir.join("diagnostic.json"), &dump);
    }
    Error::Training(format!("non-finite loss, aborting; breakdown: {dump}"))
}

/// Run the full loop; the model is updated in place.
///
/// Per batch: one differentiable forward over all stages, one backward,
/// one optimizer step. Validation runs every `eval_every` epochs and after
/// the last one; the best-PSNR and final checkpoints plus the history and
/// curve chart are written to `checkpoint_dir` when configured.
pub fn train(
    model: &mut TextEraser,
    train_set: &[PairedSample],
    val_set: &[PairedSample],
    fx: &dyn FeatureExtractor<f32>,
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    cfg.validate()?;
    if cfg.num_stages != model.config().num_stages {
        return Err(Error::Config(format!(
            "training config unrolls {} stages but the model is configured for {}",
            cfg.num_stages,
            model.config().num_stages
        )));
    }
    if train_set.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let (h, w) = (train_set[0].gt.height(), train_set[0].gt.width());
    model.config().validate_input_size(h, w)?;
    for s in train_set.iter().chain(val_set.iter()) {
        if s.gt.height() != h || s.gt.width() != w {
            return Err(Error::Data(format!(
                "sample {} is {}x{}, expected {h}x{w}",
                s.id,
                s.gt.height(),
                s.gt.width()
            )));
        }
    }
    if let Some(dir) = &cfg.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(Error::io(dir.as_path()))?;
    }

    let weights = cfg.effective_weights();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(cfg.learning_rate, model.params());
    let mut history = TrainHistory::default();
    let mut best_psnr = f64::NEG_INFINITY;
    let mut step = 0usize;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<PairedSample> = chunk
                .iter()
                .map(|&i| match &cfg.augment {
                    Some(a) => augment_with(&train_set[i], &mut rng, a),
                    None => train_set[i].clone(),
                })
                .collect();
            step += 1;
            let loss = train_step(model, &batch, fx, &weights, cfg, &mut adam)?;
            history.records.push(HistoryRecord::Step { epoch, step, loss });
        }
        let due = cfg.eval_every != 0 && epoch % cfg.eval_every == 0;
        if (due || epoch == cfg.epochs) && !val_set.is_empty() {
            let report = validate(model, val_set, cfg.toggles.region_ms)?;
            if let Some(dir) = &cfg.checkpoint_dir {
                if report.metrics.psnr > best_psnr {
                    save_checkpoint(model, None, dir.join("best.ckpt"))?;
                }
            }
            best_psnr = best_psnr.max(report.metrics.psnr);
            history.records.push(HistoryRecord::Eval {
                epoch,
                step,
                report,
            });
        }
    }

    if let Some(dir) = &cfg.checkpoint_dir {
        save_checkpoint(model, Some(&adam), dir.join("last.ckpt"))?;
        history.write_jsonl(dir.join("history.jsonl"))?;
        plot_history(&history, dir.join("curves.png"))?;
    }
    Ok(history)
}

/// Image-Eval metrics plus the per-stage PSNR diagnostic, on final
/// composited outputs of a frozen model.
pub fn validate(
    model: &TextEraser,
    samples: &[PairedSample],
    region_ms: bool,
) -> Result<ValidationReport> {
    if samples.is_empty() {
        return Err(Error::Config("validation set is empty".into()));
    }
    let opts = EraseOptions {
        training: false,
        region_compose: region_ms,
        ..Default::default()
    };
    let num_stages = model.config().num_stages;
    let mut reports = Vec::with_capacity(samples.len());
    let mut stage_sums = vec![0.0f64; num_stages];
    let mut baseline = 0.0f64;
    for s in samples {
        let stages = model.erase(&s.original, &opts)?;
        let last = stages.last().expect("at least one stage");
        reports.push(metrics::report_pair(&last.composited, &s.gt)?);
        for (sum, stage) in stage_sums.iter_mut().zip(stages.iter()) {
            *sum += metrics::psnr(&stage.composited, &s.gt)?;
        }
        baseline += metrics::psnr(&s.original, &s.gt)?;
    }
    let n = samples.len() as f64;
    Ok(ValidationReport {
        metrics: metrics::aggregate(&reports),
        stage_psnr: stage_sums.iter().map(|s| s / n).collect(),
        baseline_psnr: baseline / n,
    })
}

/// Loss terms per step and PSNR per evaluated epoch, as stacked panels.
pub fn plot_history<P: AsRef<Path>>(history: &TrainHistory, path: P) -> Result<()> {
    let term = |f: fn(&LossBreakdown) -> f64, label: &str, color: usize| chart::Series {
        label: label.into(),
        color: chart::PALETTE[color % chart::PALETTE.len()],
        points: history
            .steps()
            .map(|(_, step, l)| (step as f64, f(l)))
            .collect(),
    };
    let losses = chart::Panel {
        title: "loss terms per step".into(),
        series: vec![
            term(|l| l.total, "total", 0),
            term(|l| l.dice.iter().sum(), "dice", 1),
            term(|l| l.rs, "rs", 2),
            term(|l| l.gs, "gs", 3),
            term(|l| l.ssim, "ssim", 4),
            term(|l| l.perceptual + l.style, "vgg", 5),
        ],
    };
    let evals: Vec<(usize, &ValidationReport)> = history.evals().collect();
    let num_stages = evals.first().map_or(0, |(_, r)| r.stage_psnr.len());
    let mut psnr_series = vec![
        chart::Series {
            label: "final".into(),
            color: chart::PALETTE[0],
            points: evals
                .iter()
                .map(|&(e, r)| (e as f64, r.metrics.psnr))
                .collect(),
        },
        chart::Series {
            label: "input".into(),
            color: chart::PALETTE[7],
            points: evals
                .iter()
                .map(|&(e, r)| (e as f64, r.baseline_psnr))
                .collect(),
        },
    ];
    for t in 0..num_stages {
        psnr_series.push(chart::Series {
            label: format!("stage {}", t + 1),
            color: chart::PALETTE[(t + 1) % chart::PALETTE.len()],
            points: evals
                .iter()
                .map(|&(e, r)| (e as f64, r.stage_psnr[t]))
                .collect(),
        });
    }
    let psnr = chart::Panel {
        title: "validation psnr per epoch".into(),
        series: psnr_series,
    };
    chart::render_chart(path, &[losses, psnr], 720)
}
