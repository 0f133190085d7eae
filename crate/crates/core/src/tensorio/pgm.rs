//! Binary PGM (`P5`, maxval 255) masks. 0 is background, 255 foreground; on
//! read any byte >= 128 counts as foreground.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{read_field, read_payload, Mask};
use crate::{Error, Result};

pub fn write_pgm_mask<W: Write>(m: &Mask, mut sink: W) -> Result<()> {
    let mut buf = format!("P5\n{} {}\n255\n", m.width(), m.height()).into_bytes();
    buf.extend(m.bits().iter().map(|&b| if b { 255u8 } else { 0 }));
    sink.write_all(&buf).map_err(Error::Stream)?;
    sink.flush().map_err(Error::Stream)
}

/// Next whitespace-delimited header token; `#` comments run to end of line.
/// Consumes exactly one whitespace byte after the token.
fn header_token<R: Read>(r: &mut R, field: &'static str) -> Result<String> {
    let mut tok = String::new();
    let mut byte = [0u8; 1];
    loop {
        read_field(r, &mut byte, field)?;
        let c = byte[0];
        if c == b'#' && tok.is_empty() {
            while byte[0] != b'\n' {
                read_field(r, &mut byte, field)?;
            }
            continue;
        }
        if c.is_ascii_whitespace() {
            if tok.is_empty() {
                continue;
            }
            return Ok(tok);
        }
        if tok.len() >= 16 {
            return Err(Error::format(field, "header token too long"));
        }
        tok.push(c as char);
    }
}

fn header_number<R: Read>(r: &mut R, field: &'static str) -> Result<usize> {
    let tok = header_token(r, field)?;
    tok.parse::<usize>()
        .map_err(|_| Error::format(field, format!("not a number: {tok:?}")))
}

pub fn read_pgm_mask<R: Read>(mut source: R) -> Result<Mask> {
    let mut magic = [0u8; 2];
    read_field(&mut source, &mut magic, "magic")?;
    if &magic != b"P5" {
        return Err(Error::format("magic", format!("expected P5, found {magic:02x?}")));
    }
    let width = header_number(&mut source, "width")?;
    let height = header_number(&mut source, "height")?;
    let maxval = header_number(&mut source, "maxval")?;
    if maxval != 255 {
        return Err(Error::format("maxval", format!("expected 255, found {maxval}")));
    }
    if width == 0 || height == 0 {
        return Err(Error::format("width", "zero dimension"));
    }
    let n = (width as u64)
        .checked_mul(height as u64)
        .ok_or_else(|| Error::format("height", "pixel count overflows"))?;
    let payload = read_payload(&mut source, n, "payload")?;
    Mask::new(width, height, payload.iter().map(|&b| b >= 128).collect())
}

pub fn write_pgm_mask_file(m: &Mask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_pgm_mask(m, BufWriter::new(f))
}

pub fn read_pgm_mask_file(path: impl AsRef<Path>) -> Result<Mask> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_pgm_mask(BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn all_foreground_payload() {
        let m = Mask::new(2, 2, vec![true; 4]).unwrap();
        let mut out = Vec::new();
        write_pgm_mask(&m, &mut out).unwrap();
        assert_eq!(out, b"P5\n2 2\n255\n\xff\xff\xff\xff");
    }

    #[test]
    fn threshold_at_128() {
        let m = read_pgm_mask(&b"P5\n2 1\n255\n\x7f\x80"[..]).unwrap();
        assert_eq!(m.bits(), &[false, true]);
    }

    #[test]
    fn rejects_malformed() {
        assert!(matches!(
            read_pgm_mask(&b"P2\n1 1\n255\n\0"[..]),
            Err(Error::Format { field: "magic", .. })
        ));
        assert!(matches!(
            read_pgm_mask(&b"P5\n1 1\n1\n\0"[..]),
            Err(Error::Format { field: "maxval", .. })
        ));
        assert!(matches!(
            read_pgm_mask(&b"P5\n2 2\n255\n\0\0"[..]),
            Err(Error::Format { field: "payload", .. })
        ));
        assert!(matches!(
            read_pgm_mask(&b"P5\n2"[..]),
            Err(Error::Format { field: "width", .. })
        ));
    }

    #[test]
    fn tolerates_header_comments() {
        let m = read_pgm_mask(&b"P5\n# made by hand\n1 1\n255\n\xff"[..]).unwrap();
        assert_eq!(m.bits(), &[true]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn random_masks_round_trip(w in 1usize..20, h in 1usize..20, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let m = Mask::from_fn(w, h, |_, _| rng.random_bool(0.5));
            let mut out = Vec::new();
            write_pgm_mask(&m, &mut out).unwrap();
            prop_assert_eq!(read_pgm_mask(&out[..]).unwrap(), m);
        }

        #[test]
        fn reader_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..40)) {
            let _ = read_pgm_mask(&bytes[..]);
        }
    }
}
