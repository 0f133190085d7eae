//! Alternating optimization: mine pseudo-labels with the current transfer
//! weights, retrain the weights on them, and repeat until the mined selection
//! stops changing. Final masks fuse the last foreground probability with the
//! motion prior.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::bundle::VideoBundle;
use crate::mining::{greedy_select, similarity_matrix, MiningConfig, Selection};
use crate::motion::{video_saliency, MotionConfig, SaliencyMap};
use crate::proposals::{extract_proposals, FrameInputs, ProposalConfig, ProposalSet};
use crate::tensorio::{write_pgm_mask_file, write_tensor_file, Mask, Tensor};
use crate::transfer::{
    dataset_loss, forward, frame_vector, init_weights, one_hot_weights, train_transfer, LabeledFrame, SourceGallery,
    TrainConfig, TransferWeights,
};
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig<T> {
    pub proposal: ProposalConfig<T>,
    pub motion: MotionConfig<T>,
    pub mining: MiningConfig<T>,
    pub train: TrainConfig<T>,
    /// Stop once consecutive selections overlap at least this much.
    pub iou_converge: T,
    pub max_outer_iters: usize,
    /// Weight of the network probability in the final fusion; the rest goes to motion.
    pub refine_blend: T,
}

impl<T: Scalar> Default for PipelineConfig<T> {
    fn default() -> Self {
        PipelineConfig {
            proposal: ProposalConfig::default(),
            motion: MotionConfig::default(),
            mining: MiningConfig::default(),
            train: TrainConfig::default(),
            iou_converge: T::lit(0.9),
            max_outer_iters: 10,
            refine_blend: T::lit(0.5),
        }
    }
}

impl<T: Scalar> PipelineConfig<T> {
    pub fn validate(&self) -> Result<()> {
        self.mining.validate()?;
        self.train.validate()?;
        let ok = self.iou_converge > T::zero()
            && self.iou_converge <= T::one()
            && self.refine_blend >= T::zero()
            && self.refine_blend <= T::one()
            && self.max_outer_iters >= 1
            && self.motion.max_passes >= 1
            && self.proposal.min_area_frac >= T::zero();
        if ok {
            Ok(())
        } else {
            Err(Error::input(format!("invalid pipeline config {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord<T> {
    pub iteration: usize,
    pub proposals: usize,
    pub selected: usize,
    pub energy: T,
    /// Mean of the training-loss trace, or the loss of the current weights on
    /// this iteration's pseudo-labels when no training happened.
    pub loss: T,
    /// Selection overlap with the previous iteration (0 for the first).
    pub iou: T,
}

impl<T: Scalar> IterationRecord<T> {
    /// `iter |P| |A| Es loss iou`
    pub fn line(&self) -> String {
        format!(
            "{} {} {} {:.6} {:.6} {:.6}",
            self.iteration, self.proposals, self.selected, self.energy, self.loss, self.iou
        )
    }
}

/// Proposals and selection of one outer iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationState<T> {
    pub proposals: ProposalSet<T>,
    pub selection: Selection<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput<T> {
    pub masks: Vec<Mask>,
    pub records: Vec<IterationRecord<T>>,
    pub initial_weights: TransferWeights<T>,
    pub weights: TransferWeights<T>,
    pub history: Vec<IterationState<T>>,
    pub warnings: Vec<String>,
}

/// How the transfer weights start.
#[derive(Debug, Clone, Copy)]
pub enum WeightInit<'a, T> {
    /// Similarity of target frames to a source gallery.
    Gallery(&'a SourceGallery<T>),
    /// Known category: weight 1 on that channel, 0 elsewhere.
    OneHot(usize),
}

/// Per frame, the union of selected segments; frames without any selected
/// segment are flagged unlabeled.
pub fn pseudo_masks<T: Scalar>(sel: &Selection<T>, p: &ProposalSet<T>) -> (Vec<Mask>, Vec<bool>) {
    let masks = p.union_masks(sel.ids.iter().copied());
    let mut labeled = vec![false; p.frame_count];
    for &id in &sel.ids {
        labeled[p.segments[id].frame_index] = true;
    }
    (masks, labeled)
}

/// Mean over frames of the IoU between the two selections' per-frame unions.
/// Frames empty in both count as 1.
pub fn proposal_iou<T: Scalar>(
    prev: (&ProposalSet<T>, &Selection<T>),
    curr: (&ProposalSet<T>, &Selection<T>),
) -> Result<T> {
    let (pp, ps) = prev;
    let (cp, cs) = curr;
    if pp.frame_count != cp.frame_count || pp.frame_dims != cp.frame_dims {
        return Err(Error::input(format!(
            "cannot compare selections over {} and {} frames",
            pp.frame_count, cp.frame_count
        )));
    }
    if cp.frame_count == 0 {
        return Ok(T::one());
    }
    let a = pp.union_masks(ps.ids.iter().copied());
    let b = cp.union_masks(cs.ids.iter().copied());
    let total: T = a.iter().zip(&b).map(|(x, y)| mask_iou(x, y)).sum();
    Ok(total / T::from_usize_lossy(cp.frame_count))
}

pub(crate) fn mask_iou<T: Scalar>(a: &Mask, b: &Mask) -> T {
    let (inter, union) = a.overlap(b);
    if union == 0 {
        T::one()
    } else {
        T::from_usize_lossy(inter) / T::from_usize_lossy(union)
    }
}

/// `blend * prob + (1 - blend) * sal >= tau`.
pub fn refine<T: Scalar>(prob: &Tensor<T>, sal: &SaliencyMap<T>, blend: T, tau: T) -> Result<Mask> {
    let (h, w) = match prob.dims() {
        [h, w] if sal.dims() == [*h, *w] => (*h, *w),
        _ => {
            return Err(Error::input(format!(
                "probability {:?} and saliency {:?} disagree",
                prob.dims(),
                sal.dims()
            )))
        }
    };
    let bits = prob
        .data()
        .iter()
        .zip(sal.data())
        .map(|(&p, &s)| blend * p + (T::one() - blend) * s >= tau)
        .collect();
    Mask::new(w, h, bits)
}

fn probabilities<T: Scalar>(bundle: &VideoBundle<T>, theta: &TransferWeights<T>) -> Result<Vec<Tensor<T>>> {
    bundle
        .responses
        .par_iter()
        .map(|r| forward(r, theta).map(|(_, p)| p))
        .collect()
}

fn proposals_for<T: Scalar>(
    bundle: &VideoBundle<T>,
    probs: &[Tensor<T>],
    saliency: &[SaliencyMap<T>],
    cfg: &ProposalConfig<T>,
) -> Result<ProposalSet<T>> {
    let inputs: Vec<FrameInputs<'_, T>> = (0..bundle.frames())
        .map(|i| FrameInputs {
            prob: &probs[i],
            feat_mine: &bundle.feat_mine[i],
            feat_sim: &bundle.feat_sim[i],
            saliency: &saliency[i],
        })
        .collect();
    extract_proposals(&inputs, cfg)
}

/// Target frame vectors for weight initialization.
///
/// Before any transfer weights exist the prediction comes from the uniform
/// mix of all seen categories; each frame is pooled over the union of its
/// predicted segments (whole frame when there are none).
pub fn initial_frame_vectors<T: Scalar>(
    bundle: &VideoBundle<T>,
    saliency: &[SaliencyMap<T>],
    cfg: &PipelineConfig<T>,
) -> Result<Vec<Vec<T>>> {
    let c = bundle.meta.channels;
    let uniform = TransferWeights::from_mixing(vec![T::one() / T::from_usize_lossy(c); c]);
    let probs = probabilities(bundle, &uniform)?;
    let p = proposals_for(bundle, &probs, saliency, &cfg.proposal)?;
    let unions = p.union_masks(0..p.len());
    Ok(unions
        .iter()
        .zip(&bundle.feat_sim)
        .map(|(m, s)| frame_vector(m, s))
        .collect())
}

pub fn initial_weights<T: Scalar>(
    bundle: &VideoBundle<T>,
    saliency: &[SaliencyMap<T>],
    init: WeightInit<'_, T>,
    cfg: &PipelineConfig<T>,
) -> Result<TransferWeights<T>> {
    let c = bundle.meta.channels;
    match init {
        WeightInit::OneHot(k) => one_hot_weights(k, c),
        WeightInit::Gallery(g) => {
            if g.categories() != c || g.dim() != bundle.meta.dsim {
                return Err(Error::input(format!(
                    "gallery has {} categories of dimension {}, bundle has {c} channels and dsim {}",
                    g.categories(),
                    g.dim(),
                    bundle.meta.dsim
                )));
            }
            init_weights(&initial_frame_vectors(bundle, saliency, cfg)?, g)
        }
    }
}

/// Weight initialization for a whole bundle, computing motion saliency first.
pub fn bundle_initial_weights<T: Scalar>(
    bundle: &VideoBundle<T>,
    init: WeightInit<'_, T>,
    cfg: &PipelineConfig<T>,
) -> Result<TransferWeights<T>> {
    cfg.validate()?;
    bundle.validate()?;
    let saliency = video_saliency(&bundle.flows, &cfg.motion)?;
    initial_weights(bundle, &saliency, init, cfg)
}

/// One mining step with fixed weights: forward, extract proposals, select.
pub fn mine<T: Scalar>(
    bundle: &VideoBundle<T>,
    theta: &TransferWeights<T>,
    cfg: &PipelineConfig<T>,
) -> Result<IterationState<T>> {
    cfg.validate()?;
    bundle.validate()?;
    if theta.categories() != bundle.meta.channels {
        return Err(Error::input(format!(
            "weights cover {} categories, bundle has {} channels",
            theta.categories(),
            bundle.meta.channels
        )));
    }
    let saliency = video_saliency(&bundle.flows, &cfg.motion)?;
    let probs = probabilities(bundle, theta)?;
    let proposals = proposals_for(bundle, &probs, &saliency, &cfg.proposal)?;
    let w = similarity_matrix(&proposals);
    let selection = greedy_select(&proposals, &w, &cfg.mining)?;
    Ok(IterationState { proposals, selection })
}

pub fn run<T: Scalar>(
    bundle: &VideoBundle<T>,
    init: WeightInit<'_, T>,
    cfg: &PipelineConfig<T>,
) -> Result<RunOutput<T>> {
    cfg.validate()?;
    bundle.validate()?;
    let saliency = video_saliency(&bundle.flows, &cfg.motion)?;
    let initial = initial_weights(bundle, &saliency, init, cfg)?;
    let mut theta = initial.clone().with_affine(cfg.train.affine);

    let mut records = Vec::new();
    let mut history: Vec<IterationState<T>> = Vec::new();
    let mut warnings = Vec::new();

    for iteration in 1..=cfg.max_outer_iters {
        let probs = probabilities(bundle, &theta)?;
        let proposals = proposals_for(bundle, &probs, &saliency, &cfg.proposal)?;

        if proposals.is_empty() && iteration == 1 {
            warnings.push("iteration 1: no proposals; falling back to motion-only masks".to_string());
            records.push(IterationRecord {
                iteration,
                proposals: 0,
                selected: 0,
                energy: T::zero(),
                loss: T::zero(),
                iou: T::zero(),
            });
            let masks = probs
                .iter()
                .zip(&saliency)
                .map(|(p, s)| refine(p, s, T::zero(), cfg.proposal.tau))
                .collect::<Result<_>>()?;
            return Ok(RunOutput {
                masks,
                records,
                initial_weights: initial,
                weights: theta,
                history,
                warnings,
            });
        }

        let w = similarity_matrix(&proposals);
        let selection = greedy_select(&proposals, &w, &cfg.mining)?;
        let iou = match history.last() {
            Some(prev) => proposal_iou((&prev.proposals, &prev.selection), (&proposals, &selection))?,
            None => T::zero(),
        };
        let converged = !history.is_empty() && iou >= cfg.iou_converge;

        let (masks, labeled) = pseudo_masks(&selection, &proposals);
        let frames: Vec<LabeledFrame<'_, T>> = (0..bundle.frames())
            .filter(|&i| labeled[i])
            .map(|i| LabeledFrame {
                responses: &bundle.responses[i],
                mask: &masks[i],
            })
            .collect();

        let mut record = IterationRecord {
            iteration,
            proposals: proposals.len(),
            selected: selection.len(),
            energy: selection.energy,
            loss: T::zero(),
            iou,
        };

        let last = converged || iteration == cfg.max_outer_iters || frames.is_empty();
        if last {
            if frames.is_empty() {
                warnings.push(format!("iteration {iteration}: nothing selected; stopping"));
            } else {
                record.loss = dataset_loss(&frames, &theta, cfg.train.prob_clip_eps)?;
            }
        } else {
            let out = train_transfer(&frames, &theta, &cfg.train)?;
            record.loss = out.losses.iter().copied().sum::<T>() / T::from_usize_lossy(out.losses.len());
            theta = out.weights;
        }
        records.push(record);
        history.push(IterationState { proposals, selection });

        if last {
            let masks = probs
                .iter()
                .zip(&saliency)
                .map(|(p, s)| refine(p, s, cfg.refine_blend, cfg.proposal.tau))
                .collect::<Result<_>>()?;
            return Ok(RunOutput {
                masks,
                records,
                initial_weights: initial,
                weights: theta,
                history,
                warnings,
            });
        }
    }
    unreachable!("the final iteration always returns")
}

/// `iters.txt` contents: one record per line, warnings as `#` comments.
pub fn render_records<T: Scalar>(out: &RunOutput<T>) -> String {
    let mut s = String::new();
    for r in &out.records {
        let _ = writeln!(s, "{}", r.line());
    }
    for w in &out.warnings {
        let _ = writeln!(s, "# warning: {w}");
    }
    s
}

/// Write `final_%04d.pgm`, `iters.txt`, `weights.sgt` and, with the adapter
/// enabled, `weights_affine.sgt`.
pub fn write_output<T: Scalar>(out: &RunOutput<T>, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, m) in out.masks.iter().enumerate() {
        write_pgm_mask_file(m, dir.join(format!("final_{i:04}.pgm")))?;
    }
    let iters = dir.join("iters.txt");
    fs::write(&iters, render_records(out)).map_err(|e| Error::io(&iters, e))?;
    write_tensor_file(&out.weights.mixing_tensor(), dir.join("weights.sgt"))?;
    if out.weights.affine_enabled {
        write_tensor_file(&out.weights.affine_tensor(), dir.join("weights_affine.sgt"))?;
    }
    Ok(())
}
