//! Transferable layer: the unseen-category response is a weighted sum of the
//! seen-category responses, `r = sum_c w_c (a_c R_c + b_c)`, with a logistic
//! link to a foreground probability. `a`/`b` form an optional per-channel
//! affine adapter; with it disabled `a = 1`, `b = 0`.

use rayon::prelude::*;

use crate::proposals::{l2_normalize, mean_features, PixelSet};
use crate::tensorio::{Mask, Tensor};
use crate::{Error, Result, Scalar};

/// Per seen category, a `[J_c, D]` matrix of unit-norm feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceGallery<T> {
    names: Vec<String>,
    vectors: Vec<Tensor<T>>,
}

impl<T: Scalar> SourceGallery<T> {
    pub fn new(names: Vec<String>, vectors: Vec<Tensor<T>>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::input("gallery needs at least one category"));
        }
        if names.len() != vectors.len() {
            return Err(Error::input(format!(
                "gallery has {} names but {} vector sets",
                names.len(),
                vectors.len()
            )));
        }
        let dim = vectors[0].dims().last().copied().unwrap_or(0);
        for (c, v) in vectors.iter().enumerate() {
            if v.rank() != 2 || v.dims()[1] != dim {
                return Err(Error::input(format!(
                    "gallery category {c} has dims {:?}, expected [J, {dim}]",
                    v.dims()
                )));
            }
        }
        Ok(SourceGallery { names, vectors })
    }

    pub fn categories(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn dim(&self) -> usize {
        self.vectors[0].dims()[1]
    }

    /// The `[J_c, D]` vectors of category `c`.
    pub fn category(&self, c: usize) -> &Tensor<T> {
        &self.vectors[c]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferWeights<T> {
    pub w: Vec<T>,
    pub affine_enabled: bool,
    pub a: Vec<T>,
    pub b: Vec<T>,
}

impl<T: Scalar> TransferWeights<T> {
    /// Mixing weights with the affine adapter disabled.
    pub fn from_mixing(w: Vec<T>) -> Self {
        let n = w.len();
        TransferWeights {
            w,
            affine_enabled: false,
            a: vec![T::one(); n],
            b: vec![T::zero(); n],
        }
    }

    pub fn categories(&self) -> usize {
        self.w.len()
    }

    /// Turn the adapter on, starting from the identity.
    pub fn with_affine(mut self, enabled: bool) -> Self {
        self.affine_enabled = enabled;
        if !enabled {
            self.a.iter_mut().for_each(|x| *x = T::one());
            self.b.iter_mut().for_each(|x| *x = T::zero());
        }
        self
    }

    /// `[C]` tensor of mixing weights.
    pub fn mixing_tensor(&self) -> Tensor<T> {
        Tensor::new(vec![self.w.len()], self.w.clone()).expect("at least one category")
    }

    /// `[2, C]` tensor with `a` in row 0 and `b` in row 1.
    pub fn affine_tensor(&self) -> Tensor<T> {
        let data = self.a.iter().chain(&self.b).copied().collect();
        Tensor::new(vec![2, self.w.len()], data).expect("at least one category")
    }

    pub fn from_tensors(w: &Tensor<T>, affine: Option<&Tensor<T>>) -> Result<Self> {
        if w.rank() != 1 {
            return Err(Error::input(format!("weights must be rank 1, got {:?}", w.dims())));
        }
        let mut out = TransferWeights::from_mixing(w.data().to_vec());
        if let Some(ab) = affine {
            let c = out.w.len();
            if ab.dims() != [2, c] {
                return Err(Error::input(format!(
                    "affine tensor must be [2, {c}], got {:?}",
                    ab.dims()
                )));
            }
            out.affine_enabled = true;
            out.a = ab.data()[..c].to_vec();
            out.b = ab.data()[c..].to_vec();
        }
        if !out.is_finite() {
            return Err(Error::Numeric("transfer weights contain non-finite values".into()));
        }
        Ok(out)
    }

    pub fn is_finite(&self) -> bool {
        self.w.iter().chain(&self.a).chain(&self.b).all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig<T> {
    pub learning_rate: T,
    pub momentum: T,
    pub epochs: usize,
    /// Probabilities are clipped to `[eps, 1 - eps]` inside the loss.
    pub prob_clip_eps: T,
    /// Whether the pipeline trains the per-channel affine adapter.
    pub affine: bool,
}

impl<T: Scalar> Default for TrainConfig<T> {
    fn default() -> Self {
        TrainConfig {
            learning_rate: T::lit(0.1),
            momentum: T::lit(0.9),
            epochs: 50,
            prob_clip_eps: T::lit(1e-7),
            affine: false,
        }
    }
}

impl<T: Scalar> TrainConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate >= T::zero()
            && self.momentum >= T::zero()
            && self.momentum < T::one()
            && self.epochs >= 1
            && self.prob_clip_eps > T::zero()
            && self.prob_clip_eps < T::lit(0.5);
        if ok {
            Ok(())
        } else {
            Err(Error::input(format!("invalid training config {self:?}")))
        }
    }
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// `w_c = mean_i max_j <F_t^i, F_{s,c}^j>` over target frame vectors.
pub fn init_weights<T: Scalar>(target_frames: &[Vec<T>], g: &SourceGallery<T>) -> Result<TransferWeights<T>> {
    if target_frames.is_empty() {
        return Err(Error::input("weight initialization needs at least one target frame"));
    }
    let d = g.dim();
    if let Some(bad) = target_frames.iter().position(|f| f.len() != d) {
        return Err(Error::input(format!(
            "target frame {bad} has dimension {}, gallery has {d}",
            target_frames[bad].len()
        )));
    }
    let m = T::from_usize_lossy(target_frames.len());
    let w = (0..g.categories())
        .map(|c| {
            let vecs = g.category(c);
            let total: T = target_frames
                .iter()
                .map(|f| {
                    vecs.data()
                        .chunks_exact(d)
                        .map(|v| dot(f, v))
                        .fold(T::neg_infinity(), T::max)
                })
                .sum();
            total / m
        })
        .collect();
    Ok(TransferWeights::from_mixing(w))
}

pub fn one_hot_weights<T: Scalar>(category: usize, categories: usize) -> Result<TransferWeights<T>> {
    if category >= categories {
        return Err(Error::input(format!(
            "category {category} out of range for {categories} categories"
        )));
    }
    let w = (0..categories)
        .map(|c| if c == category { T::one() } else { T::zero() })
        .collect();
    Ok(TransferWeights::from_mixing(w))
}

/// Unit-norm pooled feature of a frame over `region`, or over the whole
/// frame when `region` is empty.
pub fn frame_vector<T: Scalar>(region: &Mask, stack: &Tensor<T>) -> Vec<T> {
    let w = region.width();
    let mut idx: Vec<usize> = region
        .bits()
        .iter()
        .enumerate()
        .filter_map(|(i, &b)| b.then_some(i))
        .collect();
    if idx.is_empty() {
        idx = (0..region.bits().len()).collect();
    }
    let mut v = mean_features(&PixelSet::from_sorted_indices(w, &idx), stack);
    l2_normalize(&mut v);
    v
}

pub fn logistic<T: Scalar>(r: T) -> T {
    T::one() / (T::one() + (-r).exp())
}

/// Pre-logistic response only.
pub fn forward_response<T: Scalar>(responses: &Tensor<T>, theta: &TransferWeights<T>) -> Result<Tensor<T>> {
    let (h, w) = match responses.dims() {
        [c, h, w] if *c == theta.categories() => (*h, *w),
        d => {
            return Err(Error::input(format!(
                "response stack {d:?} does not have {} channels",
                theta.categories()
            )))
        }
    };
    let mut r = vec![T::zero(); h * w];
    for c in 0..theta.categories() {
        let (wc, ac, bc) = (theta.w[c], theta.a[c], theta.b[c]);
        for (acc, &x) in r.iter_mut().zip(responses.channel(c)) {
            *acc = *acc + wc * (ac * x + bc);
        }
    }
    Tensor::new(vec![h, w], r)
}

/// Combined response `r` and foreground probability `logistic(r)`.
pub fn forward<T: Scalar>(responses: &Tensor<T>, theta: &TransferWeights<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    let r = forward_response(responses, theta)?;
    let prob = r.map(logistic);
    Ok((r, prob))
}

#[inline]
fn pixel_loss<T: Scalar>(p: T, y: bool, eps: T) -> T {
    let p = p.max(eps).min(T::one() - eps);
    if y {
        -p.ln()
    } else {
        -(T::one() - p).ln()
    }
}

/// Mean binary cross-entropy with probabilities clipped to `[eps, 1 - eps]`.
pub fn bce_loss<T: Scalar>(prob: &Tensor<T>, y: &Mask, eps: T) -> Result<T> {
    if prob.dims() != [y.height(), y.width()] {
        return Err(Error::input(format!(
            "probability map {:?} does not match mask {}x{}",
            prob.dims(),
            y.height(),
            y.width()
        )));
    }
    let total: T = prob
        .data()
        .iter()
        .zip(y.bits())
        .map(|(&p, &t)| pixel_loss(p, t, eps))
        .sum();
    Ok(total / T::from_usize_lossy(prob.len()))
}

/// One frame with a pseudo-label.
#[derive(Debug, Clone, Copy)]
pub struct LabeledFrame<'a, T> {
    pub responses: &'a Tensor<T>,
    pub mask: &'a Mask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub dw: Vec<T>,
    pub da: Vec<T>,
    pub db: Vec<T>,
}

fn check_frames<T: Scalar>(frames: &[LabeledFrame<'_, T>], theta: &TransferWeights<T>) -> Result<()> {
    if frames.is_empty() {
        return Err(Error::Precondition("no labeled frames".into()));
    }
    for (i, f) in frames.iter().enumerate() {
        let ok = f.responses.rank() == 3
            && f.responses.channels() == theta.categories()
            && f.responses.spatial() == Some((f.mask.height(), f.mask.width()));
        if !ok {
            return Err(Error::input(format!(
                "labeled frame {i}: responses {:?} vs mask {}x{} with {} categories",
                f.responses.dims(),
                f.mask.height(),
                f.mask.width(),
                theta.categories()
            )));
        }
    }
    Ok(())
}

/// Mean cross-entropy over every pixel of every labeled frame.
pub fn dataset_loss<T: Scalar>(frames: &[LabeledFrame<'_, T>], theta: &TransferWeights<T>, eps: T) -> Result<T> {
    check_frames(frames, theta)?;
    let sums: Vec<(T, usize)> = frames
        .par_iter()
        .map(|f| {
            let (_, prob) = forward(f.responses, theta)?;
            let s: T = prob
                .data()
                .iter()
                .zip(f.mask.bits())
                .map(|(&p, &y)| pixel_loss(p, y, eps))
                .sum();
            Ok((s, prob.len()))
        })
        .collect::<Result<_>>()?;
    let (total, n) = sums.into_iter().fold((T::zero(), 0), |(t, n), (s, k)| (t + s, n + k));
    Ok(total / T::from_usize_lossy(n))
}

/// Analytic gradients of [`dataset_loss`] with respect to `w`, `a` and `b`.
/// Pixels whose probability is clipped contribute nothing.
pub fn loss_gradients<T: Scalar>(
    frames: &[LabeledFrame<'_, T>],
    theta: &TransferWeights<T>,
    eps: T,
) -> Result<Gradients<T>> {
    check_frames(frames, theta)?;
    let cs = theta.categories();
    // Per frame and channel: sum_p e[p] * R[c][p] and sum_p e[p].
    let partial: Vec<(Vec<T>, T, usize)> = frames
        .par_iter()
        .map(|f| {
            let (_, prob) = forward(f.responses, theta)?;
            let err: Vec<T> = prob
                .data()
                .iter()
                .zip(f.mask.bits())
                .map(|(&p, &y)| {
                    if p < eps || p > T::one() - eps {
                        T::zero()
                    } else if y {
                        p - T::one()
                    } else {
                        p
                    }
                })
                .collect();
            let er: Vec<T> = (0..cs).map(|c| dot(&err, f.responses.channel(c))).collect();
            let e: T = err.iter().copied().sum();
            Ok((er, e, prob.len()))
        })
        .collect::<Result<_>>()?;

    let mut er = vec![T::zero(); cs];
    let mut e_sum = T::zero();
    let mut n = 0usize;
    for (fer, fe, k) in partial {
        for (acc, x) in er.iter_mut().zip(fer) {
            *acc = *acc + x;
        }
        e_sum = e_sum + fe;
        n += k;
    }
    let n = T::from_usize_lossy(n);
    let per_channel = |f: &dyn Fn(usize) -> T| (0..cs).map(f).collect::<Vec<T>>();
    Ok(Gradients {
        dw: per_channel(&|c| (theta.a[c] * er[c] + theta.b[c] * e_sum) / n),
        da: per_channel(&|c| theta.w[c] * er[c] / n),
        db: per_channel(&|c| theta.w[c] * e_sum / n),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome<T> {
    pub weights: TransferWeights<T>,
    /// Loss before the first update followed by the loss after each epoch.
    pub losses: Vec<T>,
}

/// Full-batch gradient descent with momentum. `a`/`b` are updated only when
/// the adapter is enabled on `init`.
pub fn train_transfer<T: Scalar>(
    frames: &[LabeledFrame<'_, T>],
    init: &TransferWeights<T>,
    cfg: &TrainConfig<T>,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    let eps = cfg.prob_clip_eps;
    let mut theta = init.clone();
    let cs = theta.categories();
    let (mut vw, mut va, mut vb) = (vec![T::zero(); cs], vec![T::zero(); cs], vec![T::zero(); cs]);
    let mut losses = Vec::with_capacity(cfg.epochs + 1);
    losses.push(dataset_loss(frames, &theta, eps)?);

    let step = |param: &mut [T], vel: &mut [T], grad: &[T]| {
        for ((p, v), &g) in param.iter_mut().zip(vel.iter_mut()).zip(grad) {
            *v = cfg.momentum * *v - cfg.learning_rate * g;
            *p = *p + *v;
        }
    };

    for epoch in 0..cfg.epochs {
        let g = loss_gradients(frames, &theta, eps)?;
        step(&mut theta.w, &mut vw, &g.dw);
        if theta.affine_enabled {
            step(&mut theta.a, &mut va, &g.da);
            step(&mut theta.b, &mut vb, &g.db);
        }
        let loss = dataset_loss(frames, &theta, eps)?;
        if !loss.is_finite() || !theta.is_finite() {
            return Err(Error::Numeric(format!("training diverged at epoch {}", epoch + 1)));
        }
        losses.push(loss);
    }
    Ok(TrainOutcome { weights: theta, losses })
}
