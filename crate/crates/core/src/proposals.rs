//! Segment proposals: connected components of the binarized foreground
//! probability, each carrying pooled features and objectness/motion scores.

use rayon::prelude::*;

use crate::tensorio::{Mask, Tensor};
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    Four,
    Eight,
}

impl Connectivity {
    pub fn from_count(n: u32) -> Option<Self> {
        match n {
            4 => Some(Connectivity::Four),
            8 => Some(Connectivity::Eight),
            _ => None,
        }
    }

    pub fn count(self) -> u32 {
        match self {
            Connectivity::Four => 4,
            Connectivity::Eight => 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProposalConfig<T> {
    /// Foreground iff probability >= `tau`.
    pub tau: T,
    pub connectivity: Connectivity,
    /// Components smaller than this fraction of the frame area are dropped.
    pub min_area_frac: T,
}

impl<T: Scalar> Default for ProposalConfig<T> {
    fn default() -> Self {
        ProposalConfig {
            tau: T::lit(0.5),
            connectivity: Connectivity::Eight,
            min_area_frac: T::lit(0.001),
        }
    }
}

/// Horizontal run of pixels `[start, start + len)` on one row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Run {
    pub row: u32,
    pub start: u32,
    pub len: u32,
}

/// Run-length encoded pixel set, runs sorted row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PixelSet {
    width: usize,
    runs: Vec<Run>,
}

impl PixelSet {
    /// Build from flat row-major pixel indices in increasing order.
    pub fn from_sorted_indices(width: usize, indices: &[usize]) -> Self {
        let mut runs: Vec<Run> = Vec::new();
        for &i in indices {
            let (row, col) = ((i / width) as u32, (i % width) as u32);
            match runs.last_mut() {
                Some(r) if r.row == row && r.start + r.len == col => r.len += 1,
                _ => runs.push(Run {
                    row,
                    start: col,
                    len: 1,
                }),
            }
        }
        PixelSet { width, runs }
    }

    pub fn runs(&self) -> &[Run] {
        &self.runs
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.runs.iter().map(|r| r.len as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.runs.is_empty()
    }

    /// Flat row-major indices in increasing order.
    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        let w = self.width;
        self.runs.iter().flat_map(move |r| {
            let base = r.row as usize * w + r.start as usize;
            base..base + r.len as usize
        })
    }

    pub fn paint(&self, mask: &mut Mask) {
        for i in self.indices() {
            mask.set_index(i, true);
        }
    }
}

/// One connected foreground component in one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment<T> {
    pub id: usize,
    pub frame_index: usize,
    pub pixels: PixelSet,
    /// Unit-norm pooled mining features (zero if the pool was all zero).
    pub feat_mine: Vec<T>,
    /// Unit-norm pooled similarity features.
    pub feat_sim: Vec<T>,
    pub objectness: T,
    pub motion: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProposalSet<T> {
    pub segments: Vec<Segment<T>>,
    pub frame_count: usize,
    /// `(height, width)` shared by every frame.
    pub frame_dims: (usize, usize),
}

impl<T: Scalar> ProposalSet<T> {
    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn objectness(&self) -> Vec<T> {
        self.segments.iter().map(|s| s.objectness).collect()
    }

    pub fn motion(&self) -> Vec<T> {
        self.segments.iter().map(|s| s.motion).collect()
    }

    /// Per frame, the union of the given segments' pixels.
    pub fn union_masks(&self, ids: impl IntoIterator<Item = usize>) -> Vec<Mask> {
        let (h, w) = self.frame_dims;
        let mut masks = vec![Mask::empty(w, h); self.frame_count];
        for id in ids {
            let s = &self.segments[id];
            s.pixels.paint(&mut masks[s.frame_index]);
        }
        masks
    }
}

pub fn binarize<T: Scalar>(prob: &Tensor<T>, tau: T) -> Mask {
    let (h, w) = prob.spatial().expect("probability map must be rank 2");
    Mask::new(w, h, prob.data().iter().map(|&p| p >= tau).collect()).expect("dims match")
}

struct DisjointSet {
    parent: Vec<u32>,
}

impl DisjointSet {
    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let p = self.parent[x as usize];
            self.parent[x as usize] = self.parent[p as usize];
            x = p;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }
}

/// Maximal connected foreground components, ordered by their first pixel in
/// row-major order. Components with area below `min_area_frac * W * H` are dropped.
pub fn connected_components<T: Scalar>(m: &Mask, connectivity: Connectivity, min_area_frac: T) -> Vec<PixelSet> {
    let (w, h) = (m.width(), m.height());
    let bits = m.bits();
    const NONE: u32 = u32::MAX;
    let mut labels = vec![NONE; w * h];
    let mut ds = DisjointSet { parent: Vec::new() };

    // First pass: provisional labels from already-visited neighbours.
    for r in 0..h {
        for c in 0..w {
            let p = r * w + c;
            if !bits[p] {
                continue;
            }
            let mut neigh = [NONE; 4];
            if c > 0 {
                neigh[0] = labels[p - 1];
            }
            if r > 0 {
                neigh[1] = labels[p - w];
                if connectivity == Connectivity::Eight {
                    if c > 0 {
                        neigh[2] = labels[p - w - 1];
                    }
                    if c + 1 < w {
                        neigh[3] = labels[p - w + 1];
                    }
                }
            }
            let mut label = NONE;
            for &n in neigh.iter().filter(|&&n| n != NONE) {
                if label == NONE {
                    label = n;
                } else {
                    ds.union(label, n);
                }
            }
            if label == NONE {
                label = ds.parent.len() as u32;
                ds.parent.push(label);
            }
            labels[p] = label;
        }
    }

    // Second pass: components are numbered in order of first appearance.
    let mut order = vec![NONE; ds.parent.len()];
    let mut members: Vec<Vec<usize>> = Vec::new();
    for (p, &label) in labels.iter().enumerate() {
        if label == NONE {
            continue;
        }
        let root = ds.find(label) as usize;
        if order[root] == NONE {
            order[root] = members.len() as u32;
            members.push(Vec::new());
        }
        members[order[root] as usize].push(p);
    }

    let min_area = min_area_frac * T::from_usize_lossy(w * h);
    members
        .into_iter()
        .filter(|px| T::from_usize_lossy(px.len()) >= min_area)
        .map(|px| PixelSet::from_sorted_indices(w, &px))
        .collect()
}

pub(crate) fn l2_normalize<T: Scalar>(v: &mut [T]) {
    let norm = v.iter().map(|&x| x * x).sum::<T>().sqrt();
    if norm > T::zero() {
        for x in v.iter_mut() {
            *x = *x / norm;
        }
    }
}

/// Per-channel mean of `stack` over `pixels`, before normalization.
pub fn mean_features<T: Scalar>(pixels: &PixelSet, stack: &Tensor<T>) -> Vec<T> {
    let n = T::from_usize_lossy(pixels.len());
    (0..stack.channels())
        .map(|c| {
            let plane = stack.channel(c);
            pixels.indices().map(|i| plane[i]).sum::<T>() / n
        })
        .collect()
}

/// Global average pooling over the segment, then L2 normalization.
pub fn pool_features<T: Scalar>(pixels: &PixelSet, stack: &Tensor<T>) -> Vec<T> {
    let mut v = mean_features(pixels, stack);
    l2_normalize(&mut v);
    v
}

fn mean_over<T: Scalar>(pixels: &PixelSet, map: &Tensor<T>) -> T {
    let data = map.data();
    let s: T = pixels.indices().map(|i| data[i]).sum();
    (s / T::from_usize_lossy(pixels.len())).max(T::zero()).min(T::one())
}

/// Mean foreground probability over the segment.
pub fn objectness<T: Scalar>(pixels: &PixelSet, prob: &Tensor<T>) -> T {
    mean_over(pixels, prob)
}

/// Mean motion saliency over the segment.
pub fn motion_score<T: Scalar>(pixels: &PixelSet, sal: &Tensor<T>) -> T {
    mean_over(pixels, sal)
}

/// Everything proposal extraction needs for one frame.
#[derive(Debug, Clone, Copy)]
pub struct FrameInputs<'a, T> {
    pub prob: &'a Tensor<T>,
    pub feat_mine: &'a Tensor<T>,
    pub feat_sim: &'a Tensor<T>,
    pub saliency: &'a Tensor<T>,
}

pub fn extract_proposals<T: Scalar>(frames: &[FrameInputs<'_, T>], cfg: &ProposalConfig<T>) -> Result<ProposalSet<T>> {
    let dims = match frames.first() {
        Some(f) => f
            .prob
            .spatial()
            .filter(|_| f.prob.rank() == 2)
            .ok_or_else(|| Error::input("probability maps must be rank 2"))?,
        None => return Err(Error::input("video has no frames")),
    };
    for (i, f) in frames.iter().enumerate() {
        let ok = f.prob.dims() == [dims.0, dims.1]
            && f.saliency.dims() == [dims.0, dims.1]
            && f.feat_mine.rank() == 3
            && f.feat_mine.spatial() == Some(dims)
            && f.feat_sim.rank() == 3
            && f.feat_sim.spatial() == Some(dims);
        if !ok {
            return Err(Error::input(format!(
                "frame {i}: map dimensions disagree with {dims:?}"
            )));
        }
    }

    let per_frame: Vec<Vec<Segment<T>>> = frames
        .par_iter()
        .enumerate()
        .map(|(fi, f)| {
            let mask = binarize(f.prob, cfg.tau);
            connected_components(&mask, cfg.connectivity, cfg.min_area_frac)
                .into_iter()
                .map(|pixels| Segment {
                    id: 0,
                    frame_index: fi,
                    feat_mine: pool_features(&pixels, f.feat_mine),
                    feat_sim: pool_features(&pixels, f.feat_sim),
                    objectness: objectness(&pixels, f.prob),
                    motion: motion_score(&pixels, f.saliency),
                    pixels,
                })
                .collect()
        })
        .collect();

    let mut segments: Vec<Segment<T>> = per_frame.into_iter().flatten().collect();
    for (id, s) in segments.iter_mut().enumerate() {
        s.id = id;
    }
    Ok(ProposalSet {
        segments,
        frame_count: frames.len(),
        frame_dims: dims,
    })
}
