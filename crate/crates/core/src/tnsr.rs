//! `TNSR v1` tensor files: one ASCII header line
//! `TNSR v1 <ndim> <extents...>` followed by the row-major values as
//! little-endian `f32`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{numel, Tensor};

const MAGIC: &str = "TNSR";
const VERSION: &str = "v1";
const MAX_HEADER: usize = 4096;

pub fn encode(t: &Tensor) -> Vec<u8> {
    let mut header = format!("{MAGIC} {VERSION} {}", t.ndim());
    for d in t.shape() {
        header.push_str(&format!(" {d}"));
    }
    header.push('\n');
    let mut out = header.into_bytes();
    out.reserve(t.len() * 4);
    for &v in t.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8], origin: &str) -> Result<Tensor> {
    let perr = |offset: usize, msg: String| Error::Parse {
        path: origin.to_string(),
        offset,
        msg,
    };
    let nl = bytes
        .iter()
        .take(MAX_HEADER)
        .position(|&b| b == b'\n')
        .ok_or_else(|| perr(bytes.len().min(MAX_HEADER), "missing header terminator".into()))?;
    let header =
        std::str::from_utf8(&bytes[..nl]).map_err(|e| perr(e.valid_up_to(), "header is not utf-8".into()))?;

    // Track byte offsets of each header token for error reporting.
    let mut tokens = Vec::new();
    let mut pos = 0;
    for tok in header.split(' ') {
        tokens.push((pos, tok));
        pos += tok.len() + 1;
    }
    let mut it = tokens.into_iter();
    match it.next() {
        Some((_, MAGIC)) => {}
        Some((off, tok)) => return Err(perr(off, format!("bad magic {tok:?}"))),
        None => return Err(perr(0, "empty header".into())),
    }
    match it.next() {
        Some((_, VERSION)) => {}
        Some((off, tok)) => return Err(perr(off, format!("unsupported version {tok:?}"))),
        None => return Err(perr(nl, "missing version".into())),
    }
    let (off, tok) = it.next().ok_or_else(|| perr(nl, "missing ndim".into()))?;
    let ndim: usize = tok
        .parse()
        .map_err(|_| perr(off, format!("bad ndim {tok:?}")))?;
    if ndim == 0 {
        return Err(perr(off, "ndim must be positive".into()));
    }
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        let (off, tok) = it.next().ok_or_else(|| perr(nl, "missing extent".into()))?;
        let d: usize = tok
            .parse()
            .map_err(|_| perr(off, format!("bad extent {tok:?}")))?;
        if d == 0 {
            return Err(perr(off, "zero extent".into()));
        }
        shape.push(d);
    }
    if let Some((off, tok)) = it.next() {
        return Err(perr(off, format!("trailing header token {tok:?}")));
    }

    let body = &bytes[nl + 1..];
    let n = numel(&shape);
    if body.len() != n * 4 {
        let at = nl + 1 + body.len().min(n * 4);
        return Err(perr(
            at,
            format!("expected {} payload bytes, found {}", n * 4, body.len()),
        ));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Tensor::new(shape, data)
}

pub fn write(t: &Tensor, path: &Path) -> Result<()> {
    crate::fsutil::write_atomic(path, &encode(t))
}

pub fn read(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let t = Tensor::new(vec![2, 3], vec![1.0; 6]).unwrap();
        let bytes = encode(&t);
        assert!(bytes.starts_with(b"TNSR v1 2 2 3\n"));
        assert_eq!(bytes.len(), 14 + 24);
        assert_eq!(&bytes[14..18], &1.0f32.to_le_bytes());
    }

    #[test]
    fn truncated_payload_is_an_error() {
        let t = Tensor::new(vec![4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let bytes = encode(&t);
        let err = decode(&bytes[..bytes.len() - 3], "mem").unwrap_err();
        match err {
            Error::Parse { offset, .. } => assert_eq!(offset, bytes.len() - 3),
            other => panic!("unexpected {other}"),
        }
        assert!(decode(b"TNSR v1 2 4", "mem").is_err());
        assert!(decode(b"", "mem").is_err());
    }

    #[test]
    fn bad_header_reports_token_offset() {
        match decode(b"TNSR v1 1 x\n", "mem").unwrap_err() {
            Error::Parse { offset, .. } => assert_eq!(offset, 10),
            other => panic!("unexpected {other}"),
        }
        assert!(decode(b"TNSX v1 1 1\n\0\0\0\0", "mem").is_err());
        assert!(decode(b"TNSR v2 1 1\n\0\0\0\0", "mem").is_err());
    }

    proptest! {
        #[test]
        fn round_trip_within_f32_precision(
            shape in proptest::collection::vec(1usize..5, 1..4),
            seed in any::<u64>(),
        ) {
            let mut rng = crate::rng::SplitMix64::new(seed);
            let t = Tensor::uniform(&shape, 0.0, 1.0, &mut rng);
            let back = decode(&encode(&t), "mem").unwrap();
            prop_assert_eq!(back.shape(), t.shape());
            prop_assert!(back.max_abs_diff(&t) <= 1e-7);
        }
    }
}
