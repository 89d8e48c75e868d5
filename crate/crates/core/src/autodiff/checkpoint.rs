//! Binary checkpoint format.
//!
//! Layout: magic "MGCK", version u32, count u32, then per parameter:
//! name length u16 + UTF-8 name, rank u8, dims u32 each, little-endian f64
//! payload. Save/load round-trips bit-exact.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::param::ParamSet;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MGCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// One named array as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct CkptEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

fn ckpt_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

pub fn save_entries(path: &Path, entries: &[CkptEntry]) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        let name_bytes = e.name.as_bytes();
        if name_bytes.len() > u16::MAX as usize {
            return Err(ckpt_err(path, format!("parameter name too long: {}", e.name)));
        }
        if e.shape.len() > u8::MAX as usize {
            return Err(ckpt_err(path, format!("rank too large for {}", e.name)));
        }
        let numel: usize = e.shape.iter().product();
        if numel != e.data.len() {
            return Err(ckpt_err(
                path,
                format!("{}: shape {:?} vs {} values", e.name, e.shape, e.data.len()),
            ));
        }
        buf.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
        buf.extend_from_slice(name_bytes);
        buf.push(e.shape.len() as u8);
        for &d in &e.shape {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &e.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    // atomic write: temp + rename
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp).map_err(Error::io_at(&tmp))?;
        f.write_all(&buf).map_err(Error::io_at(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(Error::io_at(path))?;
    Ok(())
}

pub fn load_entries(path: &Path) -> Result<Vec<CkptEntry>> {
    let bytes = fs::read(path).map_err(Error::io_at(path))?;
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > bytes.len() {
            return Err(ckpt_err(
                path,
                format!("truncated at byte {} (wanted {} more)", *pos, n),
            ));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };

    if take(&mut pos, 4)? != CHECKPOINT_MAGIC {
        return Err(ckpt_err(path, "bad magic (expected \"MGCK\")"));
    }
    let version = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(ckpt_err(path, format!("unsupported version {version}")));
    }
    let count = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());

    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(take(&mut pos, name_len)?)
            .map_err(|_| ckpt_err(path, "parameter name is not UTF-8"))?
            .to_string();
        let rank = take(&mut pos, 1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize);
        }
        let numel: usize = shape.iter().product();
        let payload = take(&mut pos, numel * 8)?;
        let data: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push(CkptEntry { name, shape, data });
    }
    if pos != bytes.len() {
        return Err(ckpt_err(path, format!("{} trailing bytes", bytes.len() - pos)));
    }
    Ok(out)
}

/// Save every parameter in the set (sorted by name).
pub fn save_checkpoint<T: Scalar>(path: &Path, params: &ParamSet<T>) -> Result<()> {
    let entries: Vec<CkptEntry> = params
        .iter()
        .map(|p| CkptEntry {
            name: p.name.clone(),
            shape: p.tensor.shape().to_vec(),
            data: p.tensor.to_vec().iter().map(|x| x.as_f64()).collect(),
        })
        .collect();
    save_entries(path, &entries)
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<CkptEntry>> {
    load_entries(path)
}

/// Copy values from a checkpoint into an existing parameter set. Names and
/// shapes must match exactly in both directions.
pub fn load_into<T: Scalar>(path: &Path, params: &ParamSet<T>) -> Result<()> {
    let entries = load_entries(path)?;
    let mut seen = std::collections::BTreeSet::new();
    for e in &entries {
        let Some(t) = params.get(&e.name) else {
            return Err(ckpt_err(path, format!("unexpected parameter {:?}", e.name)));
        };
        if t.shape() != e.shape.as_slice() {
            return Err(ckpt_err(
                path,
                format!("{}: shape {:?} in file vs {:?} in model", e.name, e.shape, t.shape()),
            ));
        }
        let converted: Vec<T> = e.data.iter().map(|&x| T::from_f64(x)).collect();
        t.set_data(&converted);
        seen.insert(e.name.clone());
    }
    let missing: Vec<String> = params
        .names()
        .into_iter()
        .filter(|n| !seen.contains(n))
        .collect();
    if !missing.is_empty() {
        return Err(ckpt_err(path, format!("missing parameters: {missing:?}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::ParamBuilder;

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = std::env::temp_dir().join("lift3d_ckpt_test");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("rt.ckpt");

        let entries = vec![
            CkptEntry {
                name: "a.weight".into(),
                shape: vec![2, 3],
                data: vec![1.0, -2.5, 3.25e-300, f64::MIN_POSITIVE, 0.1, 1.0 / 3.0],
            },
            CkptEntry {
                name: "scalar".into(),
                shape: vec![],
                data: vec![0.1 + 0.2],
            },
        ];
        save_entries(&path, &entries).unwrap();
        let loaded = load_entries(&path).unwrap();
        assert_eq!(loaded.len(), entries.len());
        for (a, b) in entries.iter().zip(&loaded) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.shape, b.shape);
            for (x, y) in a.data.iter().zip(&b.data) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn truncated_file_is_structured_error() {
        let dir = std::env::temp_dir().join("lift3d_ckpt_trunc");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.ckpt");
        save_entries(
            &path,
            &[CkptEntry {
                name: "w".into(),
                shape: vec![4],
                data: vec![1.0; 4],
            }],
        )
        .unwrap();
        let full = fs::read(&path).unwrap();
        fs::write(&path, &full[..full.len() - 5]).unwrap();
        let err = load_entries(&path).unwrap_err().to_string();
        assert!(err.contains("truncated"), "{err}");
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = std::env::temp_dir().join("lift3d_ckpt_magic");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("m.ckpt");
        fs::write(&path, b"NOPE\x01\x00\x00\x00\x00\x00\x00\x00").unwrap();
        let err = load_entries(&path).unwrap_err().to_string();
        assert!(err.contains("magic"), "{err}");
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn load_into_strict_both_ways() {
        let dir = std::env::temp_dir().join("lift3d_ckpt_strict");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("s.ckpt");

        let set = ParamSet::<f64>::shared();
        let b = ParamBuilder::new(&set, 7);
        let w = b.randn("net.w", &[3], 0.5);
        save_checkpoint(&path, &set.borrow()).unwrap();

        // loading back restores bit-exact values
        let w_before = w.to_vec();
        w.set_data(&[9.0, 9.0, 9.0]);
        load_into(&path, &set.borrow()).unwrap();
        assert_eq!(w.to_vec(), w_before);

        // extra param in the model -> missing from file
        let _extra = b.zeros("net.extra", &[1]);
        let err = load_into(&path, &set.borrow()).unwrap_err().to_string();
        assert!(err.contains("missing"), "{err}");
        fs::remove_dir_all(&dir).ok();
    }
}
