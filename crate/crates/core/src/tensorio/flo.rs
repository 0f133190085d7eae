//! Middlebury `.flo` optical-flow container.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{read_field, read_payload, FlowField};
use crate::{Error, Result, Scalar};

/// The `PIEH` tag read as a little-endian `f32`.
pub const FLO_MAGIC: f32 = 202021.25;

pub fn write_flo<T: Scalar, W: Write>(f: &FlowField<T>, mut sink: W) -> Result<()> {
    let n = f.width() * f.height();
    let mut buf = Vec::with_capacity(12 + 8 * n);
    buf.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    let w = i32::try_from(f.width()).map_err(|_| Error::format("width", "exceeds i32"))?;
    let h = i32::try_from(f.height()).map_err(|_| Error::format("height", "exceeds i32"))?;
    buf.extend_from_slice(&w.to_le_bytes());
    buf.extend_from_slice(&h.to_le_bytes());
    for (u, v) in f.u().iter().zip(f.v()) {
        buf.extend_from_slice(&u.to_f32().unwrap_or(f32::NAN).to_le_bytes());
        buf.extend_from_slice(&v.to_f32().unwrap_or(f32::NAN).to_le_bytes());
    }
    sink.write_all(&buf).map_err(Error::Stream)?;
    sink.flush().map_err(Error::Stream)
}

pub fn read_flo<T: Scalar, R: Read>(mut source: R) -> Result<FlowField<T>> {
    let mut word = [0u8; 4];
    read_field(&mut source, &mut word, "magic")?;
    let magic = f32::from_le_bytes(word);
    if magic != FLO_MAGIC {
        return Err(Error::format(
            "magic",
            format!("expected 202021.25 (PIEH), found {magic}"),
        ));
    }
    read_field(&mut source, &mut word, "width")?;
    let w = i32::from_le_bytes(word);
    if w <= 0 {
        return Err(Error::format("width", format!("{w} is not positive")));
    }
    read_field(&mut source, &mut word, "height")?;
    let h = i32::from_le_bytes(word);
    if h <= 0 {
        return Err(Error::format("height", format!("{h} is not positive")));
    }
    let (w, h) = (w as usize, h as usize);
    let n = w as u64 * h as u64;
    let payload = read_payload(&mut source, n * 8, "payload")?;
    let mut u = Vec::with_capacity(n as usize);
    let mut v = Vec::with_capacity(n as usize);
    for px in payload.chunks_exact(8) {
        let a = f32::from_le_bytes([px[0], px[1], px[2], px[3]]);
        let b = f32::from_le_bytes([px[4], px[5], px[6], px[7]]);
        if !a.is_finite() || !b.is_finite() {
            return Err(Error::format("payload", "non-finite flow value"));
        }
        u.push(T::from(a).unwrap_or_else(T::nan));
        v.push(T::from(b).unwrap_or_else(T::nan));
    }
    FlowField::new(w, h, u, v)
}

pub fn write_flo_file<T: Scalar>(f: &FlowField<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_flo(f, BufWriter::new(file))
}

pub fn read_flo_file<T: Scalar>(path: impl AsRef<Path>) -> Result<FlowField<T>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_flo(BufReader::new(file))
}
