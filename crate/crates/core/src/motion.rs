//! Motion saliency: flow magnitude turned into a barrier-distance map seeded
//! at the image border, then normalized per frame to `[0, 1]`.

use rayon::prelude::*;

use crate::tensorio::{FlowField, Mask, Tensor};
use crate::{Error, Result, Scalar};

/// Rank-2 map with values in `[0, 1]`.
pub type SaliencyMap<T> = Tensor<T>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionConfig<T> {
    /// Upper bound on raster scans; forward and backward scans count separately.
    pub max_passes: usize,
    /// Stop once a scan changes no distance by `tol` or more.
    pub tol: T,
}

impl<T: Scalar> Default for MotionConfig<T> {
    fn default() -> Self {
        MotionConfig {
            max_passes: 10,
            tol: T::lit(1e-6),
        }
    }
}

pub fn flow_magnitude<T: Scalar>(f: &FlowField<T>) -> Tensor<T> {
    let data = f.u().iter().zip(f.v()).map(|(&u, &v)| (u * u + v * v).sqrt()).collect();
    Tensor::new(vec![f.height(), f.width()], data).expect("flow dims are valid")
}

/// Mask with every pixel on the outer ring set.
pub fn border_seeds(width: usize, height: usize) -> Mask {
    Mask::from_fn(width, height, |r, c| {
        r == 0 || c == 0 || r + 1 == height || c + 1 == width
    })
}

/// Incremental raster-scan barrier distance.
///
/// Each pixel carries the best distance found so far together with the
/// maximum and minimum cost along the path that realizes it. Unreached pixels
/// hold `+inf` and never act as a relaxation source.
#[derive(Debug, Clone)]
pub struct MbdScan<T> {
    width: usize,
    height: usize,
    cost: Vec<T>,
    dist: Vec<T>,
    hi: Vec<T>,
    lo: Vec<T>,
}

impl<T: Scalar> MbdScan<T> {
    pub fn new(cost: &Tensor<T>, seeds: &Mask) -> Result<Self> {
        let (height, width) = match cost.dims() {
            [h, w] => (*h, *w),
            d => {
                return Err(Error::Precondition(format!(
                    "cost image must be rank 2, got dims {d:?}"
                )))
            }
        };
        if seeds.width() != width || seeds.height() != height {
            return Err(Error::Precondition(format!(
                "seed mask {}x{} does not match cost image {width}x{height}",
                seeds.width(),
                seeds.height()
            )));
        }
        if seeds.is_empty() {
            return Err(Error::Precondition("barrier distance needs at least one seed".into()));
        }
        let cost = cost.data().to_vec();
        let n = cost.len();
        let mut dist = vec![T::infinity(); n];
        let mut hi = vec![T::neg_infinity(); n];
        let mut lo = vec![T::infinity(); n];
        for (i, &s) in seeds.bits().iter().enumerate() {
            if s {
                dist[i] = T::zero();
                hi[i] = cost[i];
                lo[i] = cost[i];
            }
        }
        Ok(MbdScan {
            width,
            height,
            cost,
            dist,
            hi,
            lo,
        })
    }

    /// Relax `p` from `q`; returns the decrease in `dist[p]` (zero if rejected).
    #[inline]
    fn relax(&mut self, p: usize, q: usize) -> T {
        if self.dist[q].is_infinite() {
            return T::zero();
        }
        let c = self.cost[p];
        let hi = self.hi[q].max(c);
        let lo = self.lo[q].min(c);
        let d = hi - lo;
        if d < self.dist[p] {
            let change = self.dist[p] - d;
            self.dist[p] = d;
            self.hi[p] = hi;
            self.lo[p] = lo;
            change
        } else {
            T::zero()
        }
    }

    /// Top-left to bottom-right scan relaxing from the left and upper neighbours.
    /// Returns the largest distance decrease of the scan.
    pub fn forward_pass(&mut self) -> T {
        let w = self.width;
        let mut max_change = T::zero();
        for r in 0..self.height {
            for c in 0..w {
                let p = r * w + c;
                if c > 0 {
                    max_change = max_change.max(self.relax(p, p - 1));
                }
                if r > 0 {
                    max_change = max_change.max(self.relax(p, p - w));
                }
            }
        }
        max_change
    }

    /// Bottom-right to top-left scan relaxing from the right and lower neighbours.
    pub fn backward_pass(&mut self) -> T {
        let w = self.width;
        let mut max_change = T::zero();
        for r in (0..self.height).rev() {
            for c in (0..w).rev() {
                let p = r * w + c;
                if c + 1 < w {
                    max_change = max_change.max(self.relax(p, p + 1));
                }
                if r + 1 < self.height {
                    max_change = max_change.max(self.relax(p, p + w));
                }
            }
        }
        max_change
    }

    pub fn distances(&self) -> Tensor<T> {
        Tensor::new(vec![self.height, self.width], self.dist.clone()).expect("dims are valid")
    }
}

#[derive(Debug, Clone)]
pub struct MbdOutcome<T> {
    pub dist: Tensor<T>,
    /// Number of scans actually run.
    pub passes: usize,
    /// Whether the last scan changed every distance by less than `tol`.
    pub converged: bool,
}

/// Raster-scan barrier distance with scan statistics.
pub fn fast_mbd_with_stats<T: Scalar>(
    cost: &Tensor<T>,
    seeds: &Mask,
    max_passes: usize,
    tol: T,
) -> Result<MbdOutcome<T>> {
    let mut scan = MbdScan::new(cost, seeds)?;
    let mut passes = 0;
    let mut converged = false;
    while passes < max_passes {
        let change = if passes % 2 == 0 {
            scan.forward_pass()
        } else {
            scan.backward_pass()
        };
        passes += 1;
        if change < tol {
            converged = true;
            break;
        }
    }
    Ok(MbdOutcome {
        dist: scan.distances(),
        passes,
        converged,
    })
}

pub fn fast_mbd<T: Scalar>(cost: &Tensor<T>, seeds: &Mask, max_passes: usize, tol: T) -> Result<Tensor<T>> {
    fast_mbd_with_stats(cost, seeds, max_passes, tol).map(|o| o.dist)
}

/// Min-max normalization to `[0, 1]`; a constant map becomes all zeros.
/// Unreached (`+inf`) pixels are treated as the maximum.
pub fn normalize_unit<T: Scalar>(map: &Tensor<T>) -> Tensor<T> {
    let (lo, hi) = map
        .data()
        .iter()
        .filter(|x| x.is_finite())
        .fold((T::infinity(), T::neg_infinity()), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
    if hi <= lo {
        return map.map(|_| T::zero());
    }
    let span = hi - lo;
    map.map(|x| {
        if x.is_finite() {
            ((x - lo) / span).max(T::zero()).min(T::one())
        } else {
            T::one()
        }
    })
}

pub fn motion_saliency<T: Scalar>(f: &FlowField<T>, cfg: &MotionConfig<T>) -> SaliencyMap<T> {
    let mag = flow_magnitude(f);
    let seeds = border_seeds(f.width(), f.height());
    let dist = fast_mbd(&mag, &seeds, cfg.max_passes, cfg.tol).expect("border seeds are nonempty");
    normalize_unit(&dist)
}

/// Saliency for every frame of a video given its `frames - 1` forward flows.
/// The last frame has no forward flow and reuses the previous frame's map.
pub fn video_saliency<T: Scalar>(flows: &[FlowField<T>], cfg: &MotionConfig<T>) -> Result<Vec<SaliencyMap<T>>> {
    if flows.is_empty() {
        return Err(Error::input("video needs at least two frames (one flow field)"));
    }
    let mut maps: Vec<_> = flows.par_iter().map(|f| motion_saliency(f, cfg)).collect();
    maps.push(maps.last().expect("nonempty").clone());
    Ok(maps)
}
