use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{build_network, make_synthetic_dataset, DataConfig, NetParams, Network, NetworkConfig, Sample};
use crate::losses::{
    loss_cloth, loss_mesh_with_grad, loss_surface_with_grad, loss_trace_with_grad, LossConfig, LossReport,
};
use crate::metrics::{mvpe, surface_distances};
use crate::nn::checkpoint::{decode_blocks, encode_blocks};
use crate::nn::{BlockRef, Grid, Params};
use crate::{Error, Result, Vec3};

/// Optimizer and schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub steps: usize,
    pub learning_rate: f64,
    /// The step size follows a half cosine from `learning_rate` down to
    /// `learning_rate * final_lr_fraction` at the last step.
    pub final_lr_fraction: f64,
    pub momentum: f64,
    /// Leading steps that follow only the body-mesh objective.
    pub warmup_steps: usize,
    /// Rescale the batch gradient to at most this global norm; `0` disables.
    pub clip_norm: f64,
    pub heldout_every: usize,
    /// Surface samples per direction for the held-out chamfer metric.
    pub heldout_surface_samples: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            steps: 1000,
            learning_rate: 0.003,
            final_lr_fraction: 0.05,
            momentum: 0.9,
            warmup_steps: 200,
            clip_norm: 5.0,
            heldout_every: 50,
            heldout_surface_samples: 2000,
        }
    }
}

impl TrainingConfig {
    pub fn learning_rate_at(&self, step: usize) -> f64 {
        if self.steps <= 1 {
            return self.learning_rate;
        }
        let t = (step.min(self.steps - 1)) as f64 / (self.steps - 1) as f64;
        let f = self.final_lr_fraction + (1.0 - self.final_lr_fraction) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos());
        self.learning_rate * f
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("training.learning_rate must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.final_lr_fraction) {
            return Err(Error::Config("training.final_lr_fraction must lie in [0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("training.momentum must lie in [0, 1)".into()));
        }
        if !(self.clip_norm >= 0.0) {
            return Err(Error::Config("training.clip_norm must be non-negative".into()));
        }
        if self.heldout_every == 0 {
            return Err(Error::Config("training.heldout_every must be at least 1".into()));
        }
        if self.heldout_surface_samples == 0 {
            return Err(Error::Config("training.heldout_surface_samples must be at least 1".into()));
        }
        Ok(())
    }
}

/// Complete toy-training configuration as stored in the JSON config file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub network: NetworkConfig,
    pub losses: LossConfig,
    pub training: TrainingConfig,
    pub data: DataConfig,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.losses.validate()?;
        self.training.validate()?;
        self.data.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: PipelineConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            if path == "." {
                Error::Config(e.into_inner().to_string())
            } else {
                Error::Config(format!("{path}: {}", e.into_inner()))
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Heavy-ball momentum: `v = beta v + g`, `theta -= lr v`.
pub struct Momentum {
    velocity: NetParams,
    pub beta: f64,
}

impl Momentum {
    pub fn new(params: &NetParams, beta: f64) -> Self {
        Momentum {
            velocity: params.zeros_like(),
            beta,
        }
    }

    pub fn apply(&mut self, params: &mut NetParams, grads: &NetParams, lr: f64) {
        let beta = self.beta;
        for ((_, v), g) in self.velocity.blocks_mut().into_iter().zip(grads.blocks()) {
            for (vi, gi) in v.iter_mut().zip(g.data) {
                *vi = beta * *vi + gi;
            }
        }
        params.axpy(-lr, &self.velocity);
    }
}

/// Full objective of one sample and its parameter gradient, accumulated into
/// `grads`. With `body_only` the gradient covers only the body-mesh terms.
pub fn accumulate_sample(
    net: &Network,
    sample: &Sample,
    cfg: &LossConfig,
    body_only: bool,
    grads: &mut NetParams,
) -> Result<LossReport> {
    let (pred, tape) = net.forward_with_tape(&sample.stack)?;
    let (mesh, mut d_body) = loss_mesh_with_grad(&pred.body, &sample.body, &sample.regressor, &sample.joints, cfg)?;
    let (surface, d_surface) = loss_surface_with_grad(&pred.clothed, &sample.clothed, cfg)?;
    let (from_gt, gt_tape) = net.forward_clothed(&sample.body, &sample.camera, &tape.map)?;
    let (trace, d_trace_pred, d_trace_gt) = loss_trace_with_grad(&pred.clothed, &from_gt, &sample.clothed, cfg)?;
    let cloth = loss_cloth(
        &pred.clothed,
        &pred.body,
        &sample.clothed,
        &sample.body,
        &pred.camera,
        &sample.camera,
        cfg,
    )?;
    let report = LossReport::combine(&mesh, &surface, trace, cloth, cfg);
    if let Some(name) = report.first_non_finite() {
        return Err(Error::NonFinite(format!("loss term {name}")));
    }

    let map = &tape.map;
    let mut d_map = Grid::zeros(map.grid.height, map.grid.width, map.grid.channels);
    let mut d_camera = [0.0; 3];
    if !body_only {
        let lt = cfg.lambda_trace;
        let d_clothed: Vec<Vec3> = d_surface.iter().zip(&d_trace_pred).map(|(s, t)| s + t * lt).collect();
        let d_from_gt: Vec<Vec3> = d_trace_gt.iter().map(|g| g * lt).collect();
        if cfg.trace_reference_gradient && lt != 0.0 {
            // the ground-truth body and camera are data; only the branch weights and features learn here
            net.backward_clothed(gt_tape, map, &d_from_gt, grads, &mut d_map)?;
        }
        let (via_clothed, dc) = net.backward_clothed(tape.clothed, map, &d_clothed, grads, &mut d_map)?;
        for (d, v) in d_body.iter_mut().zip(via_clothed) {
            *d += v;
        }
        d_camera = dc;
        net.params.local.backward(tape.local, &d_map, &mut grads.local);
    }
    net.backward_body(tape.body, &d_body, d_camera, grads);
    Ok(report)
}

fn mean_report(reports: &[LossReport]) -> LossReport {
    let n = reports.len() as f64;
    let mut out = LossReport::default();
    for r in reports {
        out.lv += r.lv / n;
        out.lj += r.lj / n;
        out.lcd1 += r.lcd1 / n;
        out.lcd2 += r.lcd2 / n;
        out.ln += r.ln / n;
        out.ltrace += r.ltrace / n;
        out.lcloth += r.lcloth / n;
        out.mesh_total += r.mesh_total / n;
        out.surface_total += r.surface_total / n;
        out.collab_total += r.collab_total / n;
        out.total += r.total / n;
    }
    out
}

pub struct StepOutcome {
    /// Batch-mean losses before the update.
    pub report: LossReport,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
}

/// One full-batch update over `batch` at schedule position `step`.
pub fn training_step(
    net: &mut Network,
    optimizer: &mut Momentum,
    batch: &[Sample],
    losses: &LossConfig,
    training: &TrainingConfig,
    step: usize,
    body_only: bool,
) -> Result<StepOutcome> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty training batch".into()));
    }
    let mut grads = net.params.zeros_like();
    let mut reports = Vec::with_capacity(batch.len());
    for s in batch {
        reports.push(accumulate_sample(net, s, losses, body_only, &mut grads)?);
    }
    let inv = 1.0 / batch.len() as f64;
    for (_, g) in grads.blocks_mut() {
        g.iter_mut().for_each(|v| *v *= inv);
    }
    let grad_norm = grads
        .blocks()
        .iter()
        .flat_map(|b| b.data.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if !grad_norm.is_finite() {
        return Err(Error::NonFinite("parameter gradient".into()));
    }
    if training.clip_norm > 0.0 && grad_norm > training.clip_norm {
        let k = training.clip_norm / grad_norm;
        for (_, g) in grads.blocks_mut() {
            g.iter_mut().for_each(|v| *v *= k);
        }
    }
    optimizer.apply(&mut net.params, &grads, training.learning_rate_at(step));
    Ok(StepOutcome {
        report: mean_report(&reports),
        grad_norm,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeldoutMetrics {
    /// Mean per-vertex error of the predicted body mesh.
    pub mvpe: f64,
    /// Sampled chamfer distance of the predicted clothed surface.
    pub chamfer: f64,
}

pub fn evaluate_heldout(net: &Network, sample: &Sample, surface_samples: usize) -> Result<HeldoutMetrics> {
    let pred = net.forward(sample)?;
    Ok(HeldoutMetrics {
        mvpe: mvpe(pred.body.vertices(), sample.body.vertices())?,
        chamfer: surface_distances(&pred.clothed, &sample.clothed, surface_samples, 0)?.chamfer,
    })
}

/// Row `k` holds the losses after `k` updates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub step: usize,
    pub losses: LossReport,
    pub heldout: Option<HeldoutMetrics>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub rows: Vec<HistoryRow>,
}

impl TrainHistory {
    pub const CSV_HEADER: &'static str = "step,lv,lj,lcd1,lcd2,ln,ltrace,lcloth,total,heldout_mvpe,heldout_chamfer";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let l = &r.losses;
            let _ = write!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.step, l.lv, l.lj, l.lcd1, l.lcd2, l.ln, l.ltrace, l.lcloth, l.total
            );
            match r.heldout {
                Some(h) => {
                    let _ = writeln!(out, ",{},{}", h.mvpe, h.chamfer);
                }
                None => out.push_str(",,\n"),
            }
        }
        out
    }

    pub fn heldout_at(&self, step: usize) -> Option<HeldoutMetrics> {
        self.rows.iter().find(|r| r.step == step).and_then(|r| r.heldout)
    }

    pub fn total_at(&self, step: usize) -> Option<f64> {
        self.rows.iter().find(|r| r.step == step).map(|r| r.losses.total)
    }
}

/// Trains on a fresh synthetic dataset. `on_row` sees every history row as it
/// is recorded.
pub fn train_toy(cfg: &PipelineConfig, mut on_row: impl FnMut(&HistoryRow)) -> Result<(Network, TrainHistory)> {
    cfg.validate()?;
    let mut net = build_network(&cfg.network)?;
    let data = make_synthetic_dataset(&cfg.data, cfg.network.template_subdivisions)?;
    let (train, heldout) = data.split_at(cfg.data.num_samples);
    let heldout = &heldout[0];
    let t = &cfg.training;
    let mut optimizer = Momentum::new(&net.params, t.momentum);
    let mut history = TrainHistory::default();
    for step in 0..=t.steps {
        let metrics = if step % t.heldout_every == 0 {
            Some(evaluate_heldout(&net, heldout, t.heldout_surface_samples)?)
        } else {
            None
        };
        let report = if step < t.steps {
            training_step(&mut net, &mut optimizer, train, &cfg.losses, t, step, step < t.warmup_steps)?.report
        } else {
            // final row: evaluate without updating
            let mut scratch = net.params.zeros_like();
            let reports = train
                .iter()
                .map(|s| accumulate_sample(&net, s, &cfg.losses, false, &mut scratch))
                .collect::<Result<Vec<_>>>()?;
            mean_report(&reports)
        };
        let row = HistoryRow {
            step,
            losses: report,
            heldout: metrics,
        };
        on_row(&row);
        history.rows.push(row);
    }
    Ok((net, history))
}

const CONFIG_BLOCK: &str = "meta.network_config";

/// Checkpoint bytes: the network configuration (UTF-8 JSON stored one byte per
/// element in a leading block) followed by every parameter block.
pub fn save_checkpoint(net: &Network) -> Vec<u8> {
    let json = serde_json::to_string(&net.config).expect("config serializes");
    let meta: Vec<f64> = json.bytes().map(f64::from).collect();
    let mut blocks = vec![BlockRef {
        name: CONFIG_BLOCK.into(),
        shape: vec![meta.len()],
        data: &meta,
    }];
    blocks.extend(net.params.blocks());
    encode_blocks(blocks)
}

pub fn load_checkpoint(bytes: &[u8]) -> Result<Network> {
    let blocks = decode_blocks(bytes)?;
    let (meta, rest) = blocks
        .split_first()
        .filter(|(m, _)| m.name == CONFIG_BLOCK)
        .ok_or_else(|| Error::Checkpoint(format!("first block must be {CONFIG_BLOCK}")))?;
    let json: Vec<u8> = meta
        .data
        .iter()
        .map(|&v| {
            if (0.0..=255.0).contains(&v) && v.fract() == 0.0 {
                Ok(v as u8)
            } else {
                Err(Error::Checkpoint("corrupt configuration block".into()))
            }
        })
        .collect::<Result<_>>()?;
    let cfg: NetworkConfig = serde_json::from_slice(&json).map_err(|e| Error::Checkpoint(format!("configuration: {e}")))?;
    let mut net = build_network(&cfg)?;
    let mut targets = net.params.blocks_mut();
    if targets.len() != rest.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} parameter blocks, found {}",
            targets.len(),
            rest.len()
        )));
    }
    for ((name, dst), src) in targets.iter_mut().zip(rest) {
        if *name != src.name {
            return Err(Error::Checkpoint(format!("expected block {name}, found {}", src.name)));
        }
        if dst.len() != src.data.len() {
            return Err(Error::Checkpoint(format!(
                "block {name} holds {} values, expected {}",
                src.data.len(),
                dst.len()
            )));
        }
        dst.copy_from_slice(&src.data);
    }
    drop(targets);
    Ok(net)
}
