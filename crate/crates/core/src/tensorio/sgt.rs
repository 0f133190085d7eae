//! `SGT1` tensor container.
//!
//! Layout: magic `SGT1`, `u32` rank, `rank` x `u32` extents, then
//! `product(extents)` little-endian `f32` values in row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{read_field, read_payload, Tensor};
use crate::{Error, Result, Scalar};

pub const SGT_MAGIC: &[u8; 4] = b"SGT1";

pub fn write_tensor<T: Scalar, W: Write>(t: &Tensor<T>, mut sink: W) -> Result<()> {
    let mut buf = Vec::with_capacity(8 + 4 * t.dims().len() + 4 * t.len());
    buf.extend_from_slice(SGT_MAGIC);
    buf.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.dims() {
        let d = u32::try_from(d).map_err(|_| Error::format("extent", format!("{d} exceeds u32")))?;
        buf.extend_from_slice(&d.to_le_bytes());
    }
    for &x in t.data() {
        let x = x.to_f32().unwrap_or(f32::NAN);
        buf.extend_from_slice(&x.to_le_bytes());
    }
    sink.write_all(&buf).map_err(Error::Stream)?;
    sink.flush().map_err(Error::Stream)
}

pub fn read_tensor<T: Scalar, R: Read>(mut source: R) -> Result<Tensor<T>> {
    let mut magic = [0u8; 4];
    read_field(&mut source, &mut magic, "magic")?;
    if &magic != SGT_MAGIC {
        return Err(Error::format("magic", format!("expected SGT1, found {magic:02x?}")));
    }
    let mut word = [0u8; 4];
    read_field(&mut source, &mut word, "rank")?;
    let rank = u32::from_le_bytes(word);
    if !(1..=3).contains(&rank) {
        return Err(Error::format("rank", format!("{rank} not in 1..=3")));
    }
    let mut dims = Vec::with_capacity(rank as usize);
    let mut count: u64 = 1;
    for _ in 0..rank {
        read_field(&mut source, &mut word, "extent")?;
        let d = u32::from_le_bytes(word);
        if d == 0 {
            return Err(Error::format("extent", "zero extent"));
        }
        count = count
            .checked_mul(d as u64)
            .ok_or_else(|| Error::format("extent", "element count overflows"))?;
        dims.push(d as usize);
    }
    let nbytes = count
        .checked_mul(4)
        .ok_or_else(|| Error::format("extent", "payload size overflows"))?;
    let payload = read_payload(&mut source, nbytes, "payload")?;
    let data = payload
        .chunks_exact(4)
        .map(|b| {
            let x = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
            T::from(x).unwrap_or_else(T::nan)
        })
        .collect();
    Tensor::new(dims, data)
}

pub fn write_tensor_file<T: Scalar>(t: &Tensor<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_tensor(t, BufWriter::new(f))
}

pub fn read_tensor_file<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_tensor(BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bytes_of(t: &Tensor<f64>) -> Vec<u8> {
        let mut out = Vec::new();
        write_tensor(t, &mut out).unwrap();
        out
    }

    #[test]
    fn smallest_tensor_is_16_bytes() {
        let t = Tensor::new(vec![1], vec![0.0]).unwrap();
        let b = bytes_of(&t);
        assert_eq!(b.len(), 16);
        assert_eq!(&b[..4], b"SGT1");
        assert_eq!(read_tensor::<f64, _>(&b[..]).unwrap(), t);
    }

    #[test]
    fn payload_is_row_major() {
        let t = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = bytes_of(&t);
        let payload: Vec<f32> = b[16..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        assert_eq!(payload, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn malformed_inputs_name_the_field() {
        let field = |bytes: &[u8]| match read_tensor::<f64, _>(bytes) {
            Err(Error::Format { field, .. }) => field,
            other => panic!("expected format error, got {other:?}"),
        };
        assert_eq!(field(b"SGT2\x01\0\0\0"), "magic");
        assert_eq!(field(b"SG"), "magic");
        assert_eq!(field(b"SGT1\x04\0\0\0"), "rank");
        assert_eq!(field(b"SGT1\0\0\0\0"), "rank");
        assert_eq!(field(b"SGT1\x01\0\0\0\0\0\0\0"), "extent");
        assert_eq!(field(b"SGT1\x02\0\0\0\x01\0\0\0"), "extent");
        assert_eq!(field(b"SGT1\x01\0\0\0\x02\0\0\0\0\0\0\0"), "payload");
        // huge header, tiny body: must fail cleanly rather than allocate
        assert_eq!(field(b"SGT1\x03\0\0\0\0\0\x01\0\0\0\x01\0\0\0\x01\0"), "payload");
        assert_eq!(
            field(b"SGT1\x03\0\0\0\xff\xff\xff\xff\xff\xff\xff\xff\xff\xff\xff\x7f"),
            "extent"
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn round_trip_after_narrowing(
            dims in proptest::collection::vec(1usize..=8, 1..=3),
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let n: usize = dims.iter().product();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f64> = (0..n).map(|_| rng.random_range(-1e6..1e6)).collect();
            let t = Tensor::new(dims, data).unwrap();
            let back: Tensor<f64> = read_tensor(&bytes_of(&t)[..]).unwrap();
            let narrowed = t.map(|x| x as f32 as f64);
            prop_assert_eq!(back, narrowed);
        }

        #[test]
        fn reader_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..64)) {
            let _ = read_tensor::<f64, _>(&bytes[..]);
        }
    }
}
