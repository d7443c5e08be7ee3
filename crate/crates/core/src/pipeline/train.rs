use alloc::vec::Vec;

use super::model::{Model, ModelVars};
use super::targets::{propose, sample_anchors, sample_rois, AnchorTable};
use super::BOX_DELTA_WEIGHTS;
use crate::augment::augment_with;
use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::mask::Annotation;
use crate::optim::Optimizer;
use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// One training image with its instances.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `[1, 3, H, W]`.
    pub image: Tensor,
    pub annotations: Vec<Annotation>,
}

/// Loss terms of one step; a term without any contributing sample is 0.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossTerms {
    pub rpn_cls: f64,
    pub rpn_box: f64,
    pub cls: f64,
    pub box_reg: f64,
    pub mask: f64,
}

impl LossTerms {
    pub const NAMES: [&'static str; 5] = ["loss_rpn_cls", "loss_rpn_box", "loss_cls", "loss_box", "loss_mask"];

    pub fn values(&self) -> [f64; 5] {
        [self.rpn_cls, self.rpn_box, self.cls, self.box_reg, self.mask]
    }

    pub fn total(&self) -> f64 {
        self.values().iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    /// 1-based.
    pub epoch: usize,
    /// 0-based within the epoch.
    pub iter: usize,
    pub terms: LossTerms,
}

/// Steps averaged by [`TrainLog::initial_loss`].
pub const INITIAL_WINDOW: usize = 10;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<LossRecord>,
}

impl TrainLog {
    /// Mean total loss of every epoch, in order.
    pub fn epoch_means(&self) -> Vec<f64> {
        let epochs = self.records.iter().map(|r| r.epoch).max().unwrap_or(0);
        (1..=epochs)
            .map(|e| {
                let (sum, n) = self
                    .records
                    .iter()
                    .filter(|r| r.epoch == e)
                    .fold((0.0, 0usize), |(s, n), r| (s + r.terms.total(), n + 1));
                sum / n.max(1) as f64
            })
            .collect()
    }

    /// Mean total loss of the first [`INITIAL_WINDOW`] steps (fewer if the
    /// first epoch is shorter): the loss of the untrained model, averaged
    /// over a few images so one easy or hard image does not set the scale.
    pub fn initial_loss(&self) -> Option<f64> {
        let window: Vec<f64> = self
            .records
            .iter()
            .take_while(|r| r.epoch == 1)
            .take(INITIAL_WINDOW)
            .map(|r| r.terms.total())
            .collect();
        (!window.is_empty()).then(|| window.iter().sum::<f64>() / window.len() as f64)
    }

    /// Mean total loss of the last epoch.
    pub fn final_loss(&self) -> Option<f64> {
        self.epoch_means().last().copied()
    }

    /// Final loss over initial loss.
    pub fn convergence_ratio(&self) -> Option<f64> {
        Some(self.final_loss()? / self.initial_loss()?)
    }

    /// First epoch (1-based) whose mean loss is below `fraction` of the
    /// initial loss.
    pub fn first_epoch_below(&self, fraction: f64) -> Option<usize> {
        let initial = self.initial_loss()?;
        self.epoch_means().iter().position(|&m| m < fraction * initial).map(|i| i + 1)
    }
}

/// A recorded forward pass with its losses.
pub struct LossGraph {
    pub graph: Graph,
    pub vars: ModelVars,
    pub total: Var,
    pub terms: LossTerms,
    /// Sampled RoIs that were positives (and so fed the mask loss).
    pub mask_rois: usize,
}

/// Records the full forward pass and all five losses on a fresh graph with
/// trainable parameters.
pub fn loss_graph(model: &Model, image: &Tensor, annotations: &[Annotation], rng: &mut SeededRng) -> Result<LossGraph> {
    let cfg = &model.config;
    let mut g = Graph::new();
    let vars = model.bind(&mut g, true);
    let x = g.constant(image.clone());
    let [_, _, h, w] = image.dims4("train")?;
    let feats = model.backbone(&mut g, &vars, x)?;
    let rpn = model.rpn(&mut g, &vars, &feats)?;
    let cls_parts: Vec<Var> = rpn.iter().map(|l| l.cls).collect();
    let reg_parts: Vec<Var> = rpn.iter().map(|l| l.reg).collect();
    let cls_cat = g.concat(&cls_parts)?;
    let reg_cat = g.concat(&reg_parts)?;
    let table = AnchorTable::build(cfg, h, w)?;

    let mut terms = LossTerms::default();
    let mut parts: Vec<Var> = Vec::new();

    let sample = sample_anchors(&table.boxes, annotations, &cfg.rpn, rng)?;
    if !sample.anchors.is_empty() {
        let idx: Vec<usize> = sample.anchors.iter().map(|&(a, _)| table.cls_index[a]).collect();
        let labels: Vec<f64> = sample.anchors.iter().map(|&(_, l)| l).collect();
        let logits = g.gather(cls_cat, &idx)?;
        let p = g.sigmoid(logits)?;
        let n = labels.len();
        let l = g.bce_loss(p, &Tensor::new([n], labels)?)?;
        terms.rpn_cls = g.value(l).item()?;
        parts.push(l);
    }
    if !sample.positives.is_empty() {
        let idx: Vec<usize> = sample.positives.iter().flat_map(|&(a, _)| table.reg_indices(a)).collect();
        let target: Vec<f64> = sample.positives.iter().flat_map(|&(_, d)| d).collect();
        let pred = g.gather(reg_cat, &idx)?;
        let n = target.len();
        let l = g.smooth_l1_loss(pred, &Tensor::new([n], target)?)?;
        terms.rpn_box = g.value(l).item()?;
        parts.push(l);
    }

    let cls_vals = g.value(cls_cat).data();
    let reg_vals = g.value(reg_cat).data();
    let logits: Vec<f64> = table.cls_index.iter().map(|&i| cls_vals[i]).collect();
    let deltas: Vec<[f64; 4]> = (0..table.len()).map(|a| table.deltas(reg_vals, a)).collect();
    let mut proposals = propose(
        &table.boxes,
        &logits,
        &deltas,
        (w, h),
        cfg.rpn.pre_nms_top_train,
        cfg.rpn.post_nms_top_train,
        cfg.rpn.nms_iou,
    )?;
    proposals.extend(annotations.iter().map(|a| a.bbox.scored(1.0)));

    let rois = sample_rois(&proposals, annotations, &cfg.roi, rng)?;
    let mut mask_rois = 0;
    if !rois.boxes.is_empty() {
        let coords: Vec<[f64; 4]> = rois.boxes.iter().map(|b| b.coords()).collect();
        let (cls, reg) = model.box_head(&mut g, &vars, feats[0], &coords)?;
        let n = coords.len();
        let p = g.sigmoid(cls)?;
        let l = g.bce_loss(p, &Tensor::new([n, 1, 1, 1], rois.labels.clone())?)?;
        terms.cls = g.value(l).item()?;
        parts.push(l);
        let np = rois.positives;
        if np > 0 {
            let idx: Vec<usize> = (0..4 * np).collect();
            let target: Vec<f64> = rois
                .deltas
                .iter()
                .flat_map(|d| core::array::from_fn::<f64, 4, _>(|k| d[k] * BOX_DELTA_WEIGHTS[k]))
                .collect();
            let pred = g.gather(reg, &idx)?;
            let l = g.smooth_l1_loss(pred, &Tensor::new([4 * np], target)?)?;
            terms.box_reg = g.value(l).item()?;
            parts.push(l);

            let m = cfg.roi.mask_extent;
            let logits = model.mask_head(&mut g, &vars, feats[0], &coords[..np])?;
            let p = g.sigmoid(logits)?;
            let target: Vec<f64> = rois.mask_targets.concat();
            let l = g.bce_loss(p, &Tensor::new([np, 1, m, m], target)?)?;
            terms.mask = g.value(l).item()?;
            parts.push(l);
            mask_rois = np;
        }
    }
    if parts.is_empty() {
        return Err(Error::invalid("train", "no anchors or RoIs to train on"));
    }
    let total = g.add_all(&parts)?;
    Ok(LossGraph { graph: g, vars, total, terms, mask_rois })
}

fn clip_gradients(model: &mut Model, max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let mut params = model.params_mut();
    let sq: f64 = params.iter().filter_map(|p| p.grad()).flat_map(|g| g.iter()).map(|v| v * v).sum();
    let norm = libm::sqrt(sq);
    if norm > max_norm {
        let k = max_norm / norm;
        for p in params.iter_mut() {
            if let Some(g) = p.grad_mut() {
                g.iter_mut().for_each(|v| *v *= k);
            }
        }
    }
}

fn numerical(e: Error, epoch: usize, batch: usize) -> Error {
    match e {
        Error::NonFinite { op } => Error::NumericalFailure { epoch, batch, term: op, value: f64::NAN },
        other => other,
    }
}

/// Trains for `model.config.epochs` epochs, one image per step, visiting the
/// corpus in a seeded shuffled order each epoch.
pub fn train(model: &mut Model, corpus: &[Sample], seed: u64) -> Result<TrainLog> {
    train_with(model, corpus, seed, |_| {})
}

/// [`train`] with a callback invoked after every step.
pub fn train_with(
    model: &mut Model,
    corpus: &[Sample],
    seed: u64,
    mut on_step: impl FnMut(&LossRecord),
) -> Result<TrainLog> {
    if corpus.is_empty() {
        return Err(Error::invalid("train", "empty corpus"));
    }
    let mut order_rng = SeededRng::derived(seed, "order");
    let mut opt = Optimizer::new(model.config.optimizer, model.config.sgd);
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let base_lr = model.config.sgd.lr;
    let warmup = model.config.warmup_iters;
    let mut step = 0usize;
    for epoch in 1..=model.config.epochs {
        let drops = model.config.lr_drop_epochs.iter().filter(|&&e| e < epoch).count();
        let epoch_lr = base_lr * libm::pow(0.1, drops as f64);
        order_rng.shuffle(&mut order);
        for (iter, &i) in order.iter().enumerate() {
            // per-step streams keep runs that differ only in sampled RoIs aligned
            let mut rng = SeededRng::indexed(seed, "step", step as u64);
            let s = &corpus[i];
            let aug;
            let (image, anns) = match &model.config.augment {
                Some(policy) => {
                    aug = augment_with(&s.image, &s.annotations, policy, &mut rng)?;
                    (&aug.image, aug.annotations.as_slice())
                }
                None => (&s.image, s.annotations.as_slice()),
            };
            let mut lg = loss_graph(model, image, anns, &mut rng).map_err(|e| numerical(e, epoch, iter))?;
            for (name, v) in LossTerms::NAMES.iter().zip(lg.terms.values()) {
                if !v.is_finite() {
                    return Err(Error::NumericalFailure { epoch, batch: iter, term: name, value: v });
                }
            }
            lg.graph.backward(lg.total).map_err(|e| numerical(e, epoch, iter))?;
            model.load_grads(&lg.graph, &lg.vars)?;
            clip_gradients(model, model.config.clip_grad_norm);
            let ramp = if step < warmup { (step + 1) as f64 / warmup as f64 } else { 1.0 };
            opt.set_lr(epoch_lr * ramp);
            step += 1;
            opt.step(model.params_mut()).map_err(|e| numerical(e, epoch, iter))?;
            let rec = LossRecord { epoch, iter, terms: lg.terms };
            on_step(&rec);
            log.records.push(rec);
        }
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::PipelineConfig;
    use crate::synth::{synth_scene, SceneSpec};

    fn sample(seed: u64) -> Sample {
        let s = synth_scene(&SceneSpec::desk(), seed).unwrap();
        Sample { image: s.image, annotations: s.annotations }
    }

    #[test]
    fn every_parameter_gets_a_finite_gradient() {
        let mut cfg = PipelineConfig::desk();
        cfg.slc.attach_to_cls_reg = true;
        let model = Model::new(&cfg, 4).unwrap();
        let s = sample(2);
        let mut lg = loss_graph(&model, &s.image, &s.annotations, &mut SeededRng::new(0)).unwrap();
        assert!(lg.terms.mask > 0.0 && lg.mask_rois > 0);
        lg.graph.backward(lg.total).unwrap();
        let mut m = model.clone();
        m.load_grads(&lg.graph, &lg.vars).unwrap();
        for (name, t) in m.named_params() {
            let g = t.grad().unwrap();
            assert!(g.iter().all(|v| v.is_finite()), "{name}");
            if name.starts_with("mask.slc.") && name.ends_with(".weight") {
                let n: f64 = g.iter().map(|v| v * v).sum();
                assert!(n > 0.0, "{name} has a zero gradient");
            }
        }
    }

    #[test]
    fn loss_log_replays() {
        let mut cfg = PipelineConfig::desk();
        cfg.epochs = 2;
        let corpus = [sample(1), sample(2)];
        let mut a = Model::new(&cfg, 1).unwrap();
        let mut b = Model::new(&cfg, 1).unwrap();
        let la = train(&mut a, &corpus, 7).unwrap();
        let lb = train(&mut b, &corpus, 7).unwrap();
        assert_eq!(la, lb);
        assert_eq!(a, b);
        assert_eq!(la.records.len(), 4);
    }

    #[test]
    fn log_statistics() {
        let rec = |epoch, iter, total| LossRecord {
            epoch,
            iter,
            terms: LossTerms { rpn_cls: total, ..LossTerms::default() },
        };
        let mut log = TrainLog::default();
        for i in 0..12 {
            log.records.push(rec(1, i, 4.0 + (i >= 10) as u8 as f64));
        }
        log.records.push(rec(2, 0, 3.0));
        log.records.push(rec(3, 0, 1.0));
        assert_eq!(log.initial_loss(), Some(4.0));
        assert_eq!(log.final_loss(), Some(1.0));
        assert_eq!(log.convergence_ratio(), Some(0.25));
        assert_eq!(log.first_epoch_below(0.5), Some(3));
        assert_eq!(log.first_epoch_below(0.2), None);
        assert_eq!(TrainLog::default().initial_loss(), None);
    }

    #[test]
    fn empty_corpus_rejected() {
        let mut m = Model::new(&PipelineConfig::desk(), 0).unwrap();
        assert!(train(&mut m, &[], 0).is_err());
    }
}
