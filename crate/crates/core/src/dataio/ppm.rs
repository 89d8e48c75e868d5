//! Binary PPM (P6) reader/writer. The synthetic datasets are persisted as
//! PPM so every downstream path is format-agnostic; PNG decoding for real
//! data lives in the scene loader.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::raster::Raster;

fn format_err(path: &Path, offset: usize, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        msg: msg.into(),
    }
}

/// Canonical P6 encoding (single header form, so identical rasters produce
/// identical bytes).
pub fn encode(img: &Raster) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

pub fn write(path: &Path, img: &Raster) -> Result<()> {
    fs::write(path, encode(img)).map_err(Error::io_at(path))
}

pub fn read(path: &Path) -> Result<Raster> {
    let bytes = fs::read(path).map_err(Error::io_at(path))?;
    decode(&bytes).map_err(|(offset, msg)| format_err(path, offset, msg))
}

/// Parse P6 bytes; errors carry the byte offset.
pub fn decode(bytes: &[u8]) -> std::result::Result<Raster, (usize, String)> {
    let mut pos = 0usize;

    // token reader skipping whitespace and '#' comments
    let next_token = |pos: &mut usize| -> std::result::Result<String, (usize, String)> {
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
                continue;
            }
            break;
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err((start, "unexpected end of header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    };

    let magic = next_token(&mut pos)?;
    if magic != "P6" {
        return Err((0, format!("not a P6 file (magic {magic:?})")));
    }
    let parse_dim = |tok: String, at: usize| -> std::result::Result<usize, (usize, String)> {
        tok.parse::<usize>()
            .map_err(|_| (at, format!("bad header number {tok:?}")))
    };
    let at = pos;
    let width = parse_dim(next_token(&mut pos)?, at)?;
    let at = pos;
    let height = parse_dim(next_token(&mut pos)?, at)?;
    let at = pos;
    let maxval = parse_dim(next_token(&mut pos)?, at)?;
    if maxval != 255 {
        return Err((at, format!("unsupported maxval {maxval}")));
    }
    if width == 0 || height == 0 || width > 1 << 16 || height > 1 << 16 {
        return Err((at, format!("implausible dimensions {width}x{height}")));
    }
    // exactly one whitespace byte after maxval
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err((pos, "missing separator after maxval".into()));
    }
    pos += 1;
    let need = width * height * 3;
    if bytes.len() - pos < need {
        return Err((
            bytes.len(),
            format!("truncated pixel data: have {}, need {need}", bytes.len() - pos),
        ));
    }
    Ok(Raster {
        width,
        height,
        data: bytes[pos..pos + need].to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_bytes_identical() {
        let mut img = Raster::new(3, 2);
        for (i, b) in img.data.iter_mut().enumerate() {
            *b = (i * 13 % 256) as u8;
        }
        let enc = encode(&img);
        let dec = decode(&enc).unwrap();
        assert_eq!(dec, img);
        assert_eq!(encode(&dec), enc);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(decode(b"P5\n1 1\n255\nxxx").is_err());
        let enc = encode(&Raster::new(4, 4));
        assert!(decode(&enc[..enc.len() - 1]).is_err());
    }

    #[test]
    fn header_comments_are_skipped() {
        let mut bytes = b"P6\n# a comment\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[1, 2, 3, 4, 5, 6]);
        let img = decode(&bytes).unwrap();
        assert_eq!((img.width, img.height), (2, 1));
        assert_eq!(img.data, vec![1, 2, 3, 4, 5, 6]);
    }
}
