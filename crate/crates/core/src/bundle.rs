//! Directory layouts for a video bundle and a source gallery.
//!
//! ```text
//! bundle/meta.txt            frames M / height H / width W / channels C / dsim D
//! bundle/resp_%04d.sgt       [C, H, W] seen-category responses
//! bundle/featmine_%04d.sgt   [D_mine, H, W] mining features
//! bundle/featsim_%04d.sgt    [D, H, W] similarity features
//! bundle/flow_%04d.flo       M - 1 forward flows
//! bundle/gt_%04d.pgm         optional ground truth
//! gallery/categories.txt     one category name per line
//! gallery/cat_<idx>.sgt      [J_c, D] unit-norm source vectors
//! ```

use std::fs;
use std::path::Path;

use crate::tensorio::{
    read_flo_file, read_pgm_mask_file, read_tensor_file, write_flo_file, write_pgm_mask_file, write_tensor_file,
    FlowField, Mask, Tensor,
};
use crate::transfer::SourceGallery;
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BundleMeta {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub dsim: usize,
}

impl BundleMeta {
    pub fn render(&self) -> String {
        format!(
            "frames {}\nheight {}\nwidth {}\nchannels {}\ndsim {}\n",
            self.frames, self.height, self.width, self.channels, self.dsim
        )
    }

    pub fn parse(text: &str) -> Result<Self> {
        let (mut frames, mut height, mut width, mut channels, mut dsim) = (None, None, None, None, None);
        for (k, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let (key, value) = match (parts.next(), parts.next(), parts.next()) {
                (Some(key), Some(v), None) => (key, v),
                _ => return Err(Error::format("meta", format!("line {}: expected `key value`", k + 1))),
            };
            let value: usize = value
                .parse()
                .map_err(|_| Error::format("meta", format!("line {}: bad number {value:?}", k + 1)))?;
            let slot = match key {
                "frames" => &mut frames,
                "height" => &mut height,
                "width" => &mut width,
                "channels" => &mut channels,
                "dsim" => &mut dsim,
                _ => return Err(Error::format("meta", format!("line {}: unknown key {key:?}", k + 1))),
            };
            *slot = Some(value);
        }
        let need = |v: Option<usize>, name: &str| {
            v.filter(|&x| x > 0)
                .ok_or_else(|| Error::format("meta", format!("missing or zero `{name}`")))
        };
        Ok(BundleMeta {
            frames: need(frames, "frames")?,
            height: need(height, "height")?,
            width: need(width, "width")?,
            channels: need(channels, "channels")?,
            dsim: need(dsim, "dsim")?,
        })
    }
}

/// Everything precomputed for one target video.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoBundle<T> {
    pub meta: BundleMeta,
    pub responses: Vec<Tensor<T>>,
    pub feat_mine: Vec<Tensor<T>>,
    pub feat_sim: Vec<Tensor<T>>,
    pub flows: Vec<FlowField<T>>,
    /// Present when the bundle ships ground truth.
    pub gt: Option<Vec<Mask>>,
}

fn frame_file(dir: &Path, stem: &str, i: usize, ext: &str) -> std::path::PathBuf {
    dir.join(format!("{stem}_{i:04}.{ext}"))
}

impl<T: Scalar> VideoBundle<T> {
    pub fn frames(&self) -> usize {
        self.meta.frames
    }

    /// Check every array against `meta`.
    pub fn validate(&self) -> Result<()> {
        let m = &self.meta;
        if m.frames < 2 {
            return Err(Error::input("a video needs at least two frames"));
        }
        let counts = [self.responses.len(), self.feat_mine.len(), self.feat_sim.len()];
        if counts.iter().any(|&n| n != m.frames) || self.flows.len() + 1 != m.frames {
            return Err(Error::input(format!(
                "bundle holds {counts:?} stacks and {} flows for {} frames",
                self.flows.len(),
                m.frames
            )));
        }
        for i in 0..m.frames {
            let bad = self.responses[i].dims() != [m.channels, m.height, m.width]
                || self.feat_sim[i].dims() != [m.dsim, m.height, m.width]
                || self.feat_mine[i].rank() != 3
                || self.feat_mine[i].spatial() != Some((m.height, m.width))
                || self.feat_mine[i].channels() != self.feat_mine[0].channels();
            if bad {
                return Err(Error::input(format!("frame {i}: stack dimensions disagree with meta")));
            }
        }
        for (i, f) in self.flows.iter().enumerate() {
            if f.width() != m.width || f.height() != m.height {
                return Err(Error::input(format!("flow {i} is {}x{}", f.width(), f.height())));
            }
        }
        if let Some(gt) = &self.gt {
            if gt.len() != m.frames || gt.iter().any(|g| g.width() != m.width || g.height() != m.height) {
                return Err(Error::input("ground-truth masks disagree with meta"));
            }
        }
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let meta_path = dir.join("meta.txt");
        let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta = BundleMeta::parse(&text)?;
        let stacks = |stem: &str| -> Result<Vec<Tensor<T>>> {
            (0..meta.frames)
                .map(|i| read_tensor_file(frame_file(dir, stem, i, "sgt")))
                .collect()
        };
        let responses = stacks("resp")?;
        let feat_mine = stacks("featmine")?;
        let feat_sim = stacks("featsim")?;
        let flows = (0..meta.frames.saturating_sub(1))
            .map(|i| read_flo_file(frame_file(dir, "flow", i, "flo")))
            .collect::<Result<Vec<_>>>()?;
        let gt = if frame_file(dir, "gt", 0, "pgm").exists() {
            Some(
                (0..meta.frames)
                    .map(|i| read_pgm_mask_file(frame_file(dir, "gt", i, "pgm")))
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        };
        let b = VideoBundle {
            meta,
            responses,
            feat_mine,
            feat_sim,
            flows,
            gt,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        self.validate()?;
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let meta_path = dir.join("meta.txt");
        fs::write(&meta_path, self.meta.render()).map_err(|e| Error::io(&meta_path, e))?;
        for i in 0..self.meta.frames {
            write_tensor_file(&self.responses[i], frame_file(dir, "resp", i, "sgt"))?;
            write_tensor_file(&self.feat_mine[i], frame_file(dir, "featmine", i, "sgt"))?;
            write_tensor_file(&self.feat_sim[i], frame_file(dir, "featsim", i, "sgt"))?;
        }
        for (i, f) in self.flows.iter().enumerate() {
            write_flo_file(f, frame_file(dir, "flow", i, "flo"))?;
        }
        if let Some(gt) = &self.gt {
            for (i, m) in gt.iter().enumerate() {
                write_pgm_mask_file(m, frame_file(dir, "gt", i, "pgm"))?;
            }
        }
        Ok(())
    }
}

pub fn load_gallery<T: Scalar>(dir: impl AsRef<Path>) -> Result<SourceGallery<T>> {
    let dir = dir.as_ref();
    let names_path = dir.join("categories.txt");
    let text = fs::read_to_string(&names_path).map_err(|e| Error::io(&names_path, e))?;
    let names: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect();
    let vectors = (0..names.len())
        .map(|c| read_tensor_file(dir.join(format!("cat_{c}.sgt"))))
        .collect::<Result<Vec<_>>>()?;
    SourceGallery::new(names, vectors)
}

pub fn save_gallery<T: Scalar>(g: &SourceGallery<T>, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let names_path = dir.join("categories.txt");
    let mut text = g.names().join("\n");
    text.push('\n');
    fs::write(&names_path, text).map_err(|e| Error::io(&names_path, e))?;
    for c in 0..g.categories() {
        write_tensor_file(g.category(c), dir.join(format!("cat_{c}.sgt")))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn meta_round_trip_and_errors() {
        let m = BundleMeta {
            frames: 8,
            height: 64,
            width: 48,
            channels: 4,
            dsim: 32,
        };
        assert_eq!(BundleMeta::parse(&m.render()).unwrap(), m);
        assert!(BundleMeta::parse("frames 8\n").is_err());
        assert!(BundleMeta::parse("frames x\n").is_err());
        assert!(BundleMeta::parse(&format!("{}colour 3\n", m.render())).is_err());
    }

    #[test]
    fn gallery_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = SourceGallery::new(
            vec!["dog".into(), "cat".into()],
            vec![
                Tensor::new(vec![1, 2], vec![1.0f64, 0.0]).unwrap(),
                Tensor::new(vec![2, 2], vec![0.0, 1.0, 0.6, 0.8]).unwrap(),
            ],
        )
        .unwrap();
        save_gallery(&g, dir.path()).unwrap();
        let back: SourceGallery<f64> = load_gallery(dir.path()).unwrap();
        assert_eq!(back.names(), g.names());
        for c in 0..2 {
            assert_eq!(back.category(c).dims(), g.category(c).dims());
            for (a, b) in back.category(c).data().iter().zip(g.category(c).data()) {
                assert_eq!(*a, *b as f32 as f64);
            }
        }
    }
}
