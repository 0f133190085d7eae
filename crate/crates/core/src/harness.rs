//! Synthetic scenarios with exact ground truth, and IoU evaluation.
//!
//! A scenario is a rectangle moving at constant integer velocity over a noisy
//! background. Its response signature is a convex mix of two seen
//! categories, so the correct transfer weights are known. Optional static
//! distractor blobs carry the same responses but no motion.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::bundle::{save_gallery, BundleMeta, VideoBundle};
use crate::pipeline::{mask_iou, pseudo_masks, IterationState};
use crate::tensorio::{read_pgm_mask_file, FlowField, Mask, Tensor};
use crate::transfer::SourceGallery;
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioParams {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// Seen categories `C_s`.
    pub channels: usize,
    /// The two seen categories the object mixes, 0-based.
    pub mix_categories: (usize, usize),
    /// Mixing weights of `mix_categories`; nonnegative, summing to 1.
    pub signature: (f64, f64),
    /// Response noise standard deviation.
    pub noise: f64,
    /// Response magnitude before the signature is applied.
    pub logit: f64,
    /// Side of the square object.
    pub object_size: usize,
    /// Static blobs that look like the object but do not move.
    pub distractors: usize,
    pub distractor_size: usize,
    pub dmine: usize,
    pub dsim: usize,
    /// Per-pixel noise on the feature stacks.
    pub feature_noise: f64,
    /// Source vectors per category in the gallery.
    pub gallery_size: usize,
    pub gallery_noise: f64,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        ScenarioParams {
            frames: 8,
            height: 64,
            width: 64,
            channels: 4,
            mix_categories: (1, 3),
            signature: (0.6, 0.4),
            noise: 0.3,
            logit: 4.0,
            object_size: 16,
            distractors: 0,
            distractor_size: 10,
            dmine: 16,
            dsim: 32,
            feature_noise: 0.05,
            gallery_size: 10,
            gallery_noise: 0.1,
        }
    }
}

impl ScenarioParams {
    pub fn validate(&self) -> Result<()> {
        let (c0, c1) = self.mix_categories;
        let (s0, s1) = self.signature;
        let checks: [(bool, &str); 9] = [
            (self.frames >= 2, "need at least two frames"),
            (self.height > 0 && self.width > 0, "frame size must be nonzero"),
            (
                c0 != c1 && c0.max(c1) < self.channels,
                "mix categories must be two distinct seen categories",
            ),
            (
                s0 >= 0.0 && s1 >= 0.0 && (s0 + s1 - 1.0).abs() < 1e-12,
                "signature must be nonnegative and sum to 1",
            ),
            (
                self.noise >= 0.0 && self.feature_noise >= 0.0 && self.gallery_noise >= 0.0,
                "noise levels must be nonnegative",
            ),
            (self.logit > 0.0, "logit must be positive"),
            (
                self.object_size > 0 && self.distractor_size > 0,
                "object and distractor sizes must be positive",
            ),
            (
                self.dmine >= 3 && self.dsim >= self.channels + 2,
                "feature dimensions too small for the patterns",
            ),
            (self.gallery_size > 0, "gallery needs at least one vector per category"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(Error::input(format!("scenario: {msg}"))),
            None => Ok(()),
        }
    }
}

/// Axis-aligned rectangle in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

impl Rect {
    pub fn contains(&self, r: usize, c: usize) -> bool {
        r >= self.row && r < self.row + self.height && c >= self.col && c < self.col + self.width
    }

    /// Overlap test after growing `self` by `margin` on every side.
    fn near(&self, other: &Rect, margin: usize) -> bool {
        self.row < other.row + other.height + margin
            && other.row < self.row + self.height + margin
            && self.col < other.col + other.width + margin
            && other.col < self.col + self.width + margin
    }

    pub fn mask(&self, width: usize, height: usize) -> Mask {
        Mask::from_fn(width, height, |r, c| self.contains(r, c))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub seed: u64,
    pub params: ScenarioParams,
    /// Per-frame top-left corner `(row, col)` of the object.
    pub trajectory: Vec<(usize, usize)>,
    /// Per-frame displacement `(dy, dx)`.
    pub velocity: (i64, i64),
    pub distractors: Vec<Rect>,
    pub gt: Vec<Mask>,
}

impl Scenario {
    pub fn object(&self, frame: usize) -> Rect {
        let (row, col) = self.trajectory[frame];
        let s = self.params.object_size;
        Rect {
            row,
            col,
            height: s,
            width: s,
        }
    }

    /// Every trajectory position must keep the object inside the frame.
    pub fn check_bounds(&self) -> Result<()> {
        let p = &self.params;
        for (t, &(r, c)) in self.trajectory.iter().enumerate() {
            if r + p.object_size > p.height || c + p.object_size > p.width {
                return Err(Error::input(format!("scenario: object leaves the frame at frame {t}")));
            }
        }
        Ok(())
    }
}

/// Start offsets along one axis that keep `start + v * t` within `[0, room]`
/// for every frame.
fn start_range(room: usize, v: i64, frames: usize) -> Option<(usize, usize)> {
    let travel = v.unsigned_abs() as usize * (frames - 1);
    if travel > room {
        return None;
    }
    if v >= 0 {
        Some((0, room - travel))
    } else {
        Some((travel, room))
    }
}

fn gaussian(sd: f64) -> Normal<f64> {
    Normal::new(0.0, sd).expect("standard deviation is finite and nonnegative")
}

/// `count` orthonormal vectors of length `dim` (Gram-Schmidt on Gaussian draws).
fn orthonormal(rng: &mut ChaCha8Rng, count: usize, dim: usize) -> Vec<Vec<f64>> {
    let normal = gaussian(1.0);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v: Vec<f64> = (0..dim).map(|_| normal.sample(rng)).collect();
        for b in &basis {
            let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            v.iter_mut().for_each(|x| *x /= n);
            basis.push(v);
        }
    }
    basis
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// Which region a pixel belongs to in one frame.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Region {
    Object,
    Distractor,
    Background,
}

/// Constant pattern per region plus per-pixel noise, as a `[D, H, W]` stack.
/// `patterns` holds the object, distractor and background vectors.
fn feature_stack(
    region: &[Region],
    patterns: [&[f64]; 3],
    (h, w): (usize, usize),
    noise: &Normal<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor<f64>> {
    let dim = patterns[0].len();
    let hw = h * w;
    let mut data = vec![0.0; dim * hw];
    for (i, &reg) in region.iter().enumerate() {
        let pat = patterns[reg as usize];
        for k in 0..dim {
            data[k * hw + i] = pat[k] + noise.sample(rng);
        }
    }
    Tensor::new(vec![dim, h, w], data)
}

/// Generate a scenario, its bundle (with ground truth) and a source gallery.
pub fn gen_scenario<T: Scalar>(
    seed: u64,
    params: &ScenarioParams,
) -> Result<(Scenario, VideoBundle<T>, SourceGallery<T>)> {
    params.validate()?;
    let p = params;
    let (h, w, m) = (p.height, p.width, p.frames);
    if p.object_size > h || p.object_size > w {
        return Err(Error::input("scenario: object larger than the frame"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Trajectory: integer velocity with components in {-2, -1, 1, 2}.
    let speeds = [-2i64, -1, 1, 2];
    let vy = speeds[rng.random_range(0..4)];
    let vx = speeds[rng.random_range(0..4)];
    let ry = start_range(h - p.object_size, vy, m);
    let rx = start_range(w - p.object_size, vx, m);
    let ((y0, y1), (x0, x1)) = match (ry, rx) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::input("scenario: trajectory cannot stay inside the frame")),
    };
    let start = (rng.random_range(y0..=y1), rng.random_range(x0..=x1));
    let trajectory: Vec<(usize, usize)> = (0..m as i64)
        .map(|t| ((start.0 as i64 + vy * t) as usize, (start.1 as i64 + vx * t) as usize))
        .collect();

    let mut scenario = Scenario {
        seed,
        params: p.clone(),
        trajectory,
        velocity: (vy, vx),
        distractors: Vec::new(),
        gt: Vec::new(),
    };
    scenario.check_bounds()?;

    // Distractors stay clear of the whole trajectory and of each other.
    let ds = p.distractor_size;
    let margin = 2;
    while scenario.distractors.len() < p.distractors {
        if ds > h || ds > w {
            return Err(Error::input("scenario: distractor larger than the frame"));
        }
        let mut placed = false;
        for _ in 0..1000 {
            let cand = Rect {
                row: rng.random_range(0..=h - ds),
                col: rng.random_range(0..=w - ds),
                height: ds,
                width: ds,
            };
            let clear = (0..m).all(|t| !scenario.object(t).near(&cand, margin))
                && scenario.distractors.iter().all(|d| !d.near(&cand, margin));
            if clear {
                scenario.distractors.push(cand);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::input("scenario: no room for the distractors"));
        }
    }
    scenario.gt = (0..m).map(|t| scenario.object(t).mask(w, h)).collect();

    // Feature patterns: object, distractor and background in the mining
    // space; one direction per category plus distractor and background in
    // the similarity space.
    let mine = orthonormal(&mut rng, 3, p.dmine);
    let sim = orthonormal(&mut rng, p.channels + 2, p.dsim);
    let (c0, c1) = p.mix_categories;
    let (s0, s1) = p.signature;
    let object_sim = unit((0..p.dsim).map(|k| s0 * sim[c0][k] + s1 * sim[c1][k]).collect());
    let mut sig = vec![0.0; p.channels];
    sig[c0] = s0;
    sig[c1] = s1;

    let resp_noise = gaussian(p.noise);
    let feat_noise = gaussian(p.feature_noise);
    let hw = h * w;
    let mut responses = Vec::with_capacity(m);
    let mut feat_mine = Vec::with_capacity(m);
    let mut feat_sim = Vec::with_capacity(m);
    for t in 0..m {
        let obj = scenario.object(t);
        let region: Vec<Region> = (0..hw)
            .map(|i| {
                let (r, c) = (i / w, i % w);
                if obj.contains(r, c) {
                    Region::Object
                } else if scenario.distractors.iter().any(|d| d.contains(r, c)) {
                    Region::Distractor
                } else {
                    Region::Background
                }
            })
            .collect();

        let mut resp = vec![0.0; p.channels * hw];
        for (c, &s) in sig.iter().enumerate() {
            for (i, &reg) in region.iter().enumerate() {
                let sign = if reg == Region::Background { -1.0 } else { 1.0 };
                resp[c * hw + i] = s * p.logit * sign + resp_noise.sample(&mut rng);
            }
        }
        responses.push(Tensor::new(vec![p.channels, h, w], resp)?);

        feat_mine.push(feature_stack(
            &region,
            [&mine[0], &mine[1], &mine[2]],
            (h, w),
            &feat_noise,
            &mut rng,
        )?);
        feat_sim.push(feature_stack(
            &region,
            [&object_sim, &sim[p.channels], &sim[p.channels + 1]],
            (h, w),
            &feat_noise,
            &mut rng,
        )?);
    }

    let flows = (0..m - 1)
        .map(|t| {
            let obj = scenario.object(t);
            let inside = |i: usize| obj.contains(i / w, i % w);
            let u = (0..hw).map(|i| if inside(i) { vx as f64 } else { 0.0 }).collect();
            let v = (0..hw).map(|i| if inside(i) { vy as f64 } else { 0.0 }).collect();
            FlowField::new(w, h, u, v)
        })
        .collect::<Result<Vec<_>>>()?;

    let gallery_noise = gaussian(p.gallery_noise);
    let gallery_vectors = (0..p.channels)
        .map(|c| {
            let mut data = Vec::with_capacity(p.gallery_size * p.dsim);
            for _ in 0..p.gallery_size {
                let v: Vec<f64> = sim[c].iter().map(|&x| x + gallery_noise.sample(&mut rng)).collect();
                data.extend(unit(v));
            }
            Tensor::new(vec![p.gallery_size, p.dsim], data)
        })
        .collect::<Result<Vec<_>>>()?;
    let names = (0..p.channels).map(|c| format!("category{c}")).collect();
    let gallery = SourceGallery::new(names, gallery_vectors.iter().map(|g| g.cast()).collect())?;

    let meta = BundleMeta {
        frames: m,
        height: h,
        width: w,
        channels: p.channels,
        dsim: p.dsim,
    };
    let cast_flow = |f: &FlowField<f64>| {
        FlowField::new(
            w,
            h,
            f.u().iter().map(|&x| T::lit(x)).collect(),
            f.v().iter().map(|&x| T::lit(x)).collect(),
        )
    };
    let bundle = VideoBundle {
        meta,
        responses: responses.iter().map(Tensor::cast).collect(),
        feat_mine: feat_mine.iter().map(Tensor::cast).collect(),
        feat_sim: feat_sim.iter().map(Tensor::cast).collect(),
        flows: flows.iter().map(cast_flow).collect::<Result<_>>()?,
        gt: Some(scenario.gt.clone()),
    };
    bundle.validate()?;
    Ok((scenario, bundle, gallery))
}

/// Write `dir/bundle` and `dir/gallery`.
pub fn write_scenario<T: Scalar>(
    bundle: &VideoBundle<T>,
    gallery: &SourceGallery<T>,
    dir: impl AsRef<Path>,
) -> Result<()> {
    let dir = dir.as_ref();
    bundle.save(dir.join("bundle"))?;
    save_gallery(gallery, dir.join("gallery"))
}

/// `|pred ∩ gt| / |pred ∪ gt|`; two empty masks score 1.
pub fn iou(pred: &Mask, gt: &Mask) -> Result<f64> {
    if !pred.same_shape(gt) {
        return Err(Error::input(format!(
            "mask sizes differ: {}x{} vs {}x{}",
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height()
        )));
    }
    Ok(mask_iou(pred, gt))
}

/// Mean per-frame IoU of two equally long mask sequences.
pub fn mean_iou(pred: &[Mask], gt: &[Mask]) -> Result<f64> {
    if pred.len() != gt.len() || gt.is_empty() {
        return Err(Error::input(format!(
            "{} predicted masks for {} ground-truth masks",
            pred.len(),
            gt.len()
        )));
    }
    let total: f64 = pred.iter().zip(gt).map(|(p, g)| iou(p, g)).sum::<Result<f64>>()?;
    Ok(total / gt.len() as f64)
}

/// Mean IoU between a selection's per-frame pseudo-labels and ground truth.
/// Frames without a selected segment count as empty masks.
pub fn pseudo_label_iou<T: Scalar>(state: &IterationState<T>, gt: &[Mask]) -> Result<f64> {
    let (masks, _) = pseudo_masks(&state.selection, &state.proposals);
    mean_iou(&masks, gt)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoReport {
    pub per_frame: Vec<f64>,
    pub mean: f64,
}

impl fmt::Display for VideoReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.per_frame.iter().enumerate() {
            writeln!(f, "frame {i:04} {v:.6}")?;
        }
        writeln!(f, "mean {:.6}", self.mean)
    }
}

fn pgm_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|entry| entry.map(|e| e.path()).map_err(|e| Error::io(dir, e)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.extension().is_some_and(|e| e == "pgm"))
        .collect();
    files.sort();
    Ok(files)
}

/// Compare the sorted `.pgm` masks of two directories frame by frame.
pub fn video_report(pred_dir: impl AsRef<Path>, gt_dir: impl AsRef<Path>) -> Result<VideoReport> {
    let pred = pgm_files(pred_dir.as_ref())?;
    let gt = pgm_files(gt_dir.as_ref())?;
    if pred.len() != gt.len() || gt.is_empty() {
        return Err(Error::input(format!(
            "{} predicted masks for {} ground-truth masks",
            pred.len(),
            gt.len()
        )));
    }
    let per_frame = pred
        .iter()
        .zip(&gt)
        .map(|(p, g)| iou(&read_pgm_mask_file(p)?, &read_pgm_mask_file(g)?))
        .collect::<Result<Vec<_>>>()?;
    let mean = per_frame.iter().sum::<f64>() / per_frame.len() as f64;
    Ok(VideoReport { per_frame, mean })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::proposals::binarize;
    use crate::tensorio::write_pgm_mask_file;
    use crate::transfer::{forward, TransferWeights};

    #[test]
    fn noiseless_signature_mix_recovers_gt() {
        let params = ScenarioParams {
            noise: 0.0,
            ..ScenarioParams::default()
        };
        let (sc, b, _) = gen_scenario::<f64>(7, &params).unwrap();
        let mut w = vec![0.0; params.channels];
        w[1] = 0.6;
        w[3] = 0.4;
        let theta = TransferWeights::from_mixing(w);
        for t in 0..params.frames {
            let (_, prob) = forward(&b.responses[t], &theta).unwrap();
            assert_eq!(binarize(&prob, 0.5), sc.gt[t]);
        }
    }

    #[test]
    fn same_seed_same_scenario() {
        let params = ScenarioParams {
            distractors: 2,
            ..ScenarioParams::default()
        };
        let a = gen_scenario::<f64>(3, &params).unwrap();
        let b = gen_scenario::<f64>(3, &params).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        assert_eq!(a.2.category(2), b.2.category(2));
        let c = gen_scenario::<f64>(4, &params).unwrap();
        assert_ne!(a.1, c.1);
    }

    #[test]
    fn object_and_distractors_stay_in_bounds_and_apart() {
        let params = ScenarioParams {
            distractors: 2,
            ..ScenarioParams::default()
        };
        for seed in 0..20 {
            let (sc, b, _) = gen_scenario::<f64>(seed, &params).unwrap();
            sc.check_bounds().unwrap();
            for t in 1..params.frames {
                let (r0, c0) = sc.trajectory[t - 1];
                let (r1, c1) = sc.trajectory[t];
                assert_eq!((r1 as i64 - r0 as i64, c1 as i64 - c0 as i64), sc.velocity);
            }
            for d in &sc.distractors {
                assert!(d.row + d.height <= 64 && d.col + d.width <= 64);
                for t in 0..params.frames {
                    assert!(!sc.object(t).near(d, 0));
                }
            }
            // Flow is the displacement inside the object and zero elsewhere.
            let f = &b.flows[0];
            let obj = sc.object(0);
            for i in 0..64 * 64 {
                let inside = obj.contains(i / 64, i % 64);
                assert_eq!(f.u()[i], if inside { sc.velocity.1 as f64 } else { 0.0 });
                assert_eq!(f.v()[i], if inside { sc.velocity.0 as f64 } else { 0.0 });
            }
        }
    }

    #[test]
    fn impossible_trajectory_is_rejected() {
        let params = ScenarioParams {
            frames: 40,
            height: 20,
            width: 20,
            ..ScenarioParams::default()
        };
        assert!(gen_scenario::<f64>(1, &params).is_err());
        let crowded = ScenarioParams {
            distractors: 40,
            ..ScenarioParams::default()
        };
        assert!(gen_scenario::<f64>(1, &crowded).is_err());
        let bad = ScenarioParams {
            signature: (0.7, 0.7),
            ..ScenarioParams::default()
        };
        assert!(gen_scenario::<f64>(1, &bad).is_err());
    }

    #[test]
    fn iou_cases() {
        let a = Mask::from_fn(4, 4, |r, c| r < 2 && c < 2);
        let shifted = Mask::from_fn(4, 4, |r, c| r < 2 && (1..3).contains(&c));
        let disjoint = Mask::from_fn(4, 4, |r, c| r >= 2 && c >= 2);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert_eq!(iou(&a, &disjoint).unwrap(), 0.0);
        assert_eq!(iou(&a, &shifted).unwrap(), 2.0 / 6.0);
        assert_eq!(iou(&Mask::empty(4, 4), &Mask::empty(4, 4)).unwrap(), 1.0);
        assert!(iou(&a, &Mask::empty(4, 3)).is_err());
    }

    #[test]
    fn iou_is_symmetric_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let a = Mask::from_fn(7, 5, |_, _| rng.random_bool(0.4));
            let b = Mask::from_fn(7, 5, |_, _| rng.random_bool(0.4));
            let x = iou(&a, &b).unwrap();
            assert_eq!(x, iou(&b, &a).unwrap());
            assert!((0.0..=1.0).contains(&x));
            assert_eq!(iou(&a, &a).unwrap(), 1.0);
        }
    }

    #[test]
    fn video_report_over_directories() {
        let pred = tempfile::tempdir().unwrap();
        let gt = tempfile::tempdir().unwrap();
        let a = Mask::from_fn(4, 4, |r, c| r < 2 && c < 2);
        let shifted = Mask::from_fn(4, 4, |r, c| r < 2 && (1..3).contains(&c));
        write_pgm_mask_file(&a, pred.path().join("final_0000.pgm")).unwrap();
        write_pgm_mask_file(&a, pred.path().join("final_0001.pgm")).unwrap();
        write_pgm_mask_file(&a, gt.path().join("gt_0000.pgm")).unwrap();
        write_pgm_mask_file(&shifted, gt.path().join("gt_0001.pgm")).unwrap();
        fs::write(gt.path().join("meta.txt"), "ignored").unwrap();
        let r = video_report(pred.path(), gt.path()).unwrap();
        assert_eq!(r.per_frame, vec![1.0, 2.0 / 6.0]);
        assert_eq!(r.mean, (1.0 + 2.0 / 6.0) / 2.0);
        assert_eq!(
            r.to_string(),
            "frame 0000 1.000000\nframe 0001 0.333333\nmean 0.666667\n"
        );

        fs::remove_file(pred.path().join("final_0001.pgm")).unwrap();
        assert!(video_report(pred.path(), gt.path()).is_err());
    }
}
