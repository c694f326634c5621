//! Binary parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!   magic "M4C1" | version: u32 | count: u64
//! then per parameter, in storage order:
//!   name_len: u32 | name: UTF-8 bytes | ndim: u32 | dims: u64 each | data: f64 bits each
//!
//! Round-trips are bit-exact: f64 payloads are written and read as raw IEEE
//! bits.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"M4C1";
pub const VERSION: u32 = 1;

pub fn save_checkpoint<'a, I>(path: &Path, params: I) -> Result<()>
where
    I: ExactSizeIterator<Item = (&'a str, &'a Tensor)>,
{
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(params.len() as u64).to_le_bytes())?;
    for (name, tensor) in params {
        let name_bytes = name.as_bytes();
        w.write_all(&(name_bytes.len() as u32).to_le_bytes())?;
        w.write_all(name_bytes)?;
        w.write_all(&(tensor.shape.len() as u32).to_le_bytes())?;
        for &dim in &tensor.shape {
            w.write_all(&(dim as u64).to_le_bytes())?;
        }
        for &v in &tensor.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let mut r = BufReader::new(File::open(path)?);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Validation(format!(
            "not a checkpoint file: bad magic {magic:?}"
        )));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Validation(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let count = read_u64(&mut r)? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|e| Error::Validation(format!("checkpoint parameter name: {e}")))?;
        let ndim = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u64(&mut r)? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        let mut buf = [0u8; 8];
        for _ in 0..numel {
            r.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok(out)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut r = ChaCha8Rng::seed_from_u64(11);
        let params: Vec<(String, Tensor)> = vec![
            (
                "layer0.attn.query.weight".into(),
                Tensor::new(vec![4, 4], (0..16).map(|_| r.gen::<f64>()).collect()).unwrap(),
            ),
            (
                "vocab_head.bias".into(),
                Tensor::new(
                    vec![5],
                    vec![0.0, -0.0, f64::MIN_POSITIVE, 1.0 / 3.0, 1e300],
                )
                .unwrap(),
            ),
            ("empty".into(), Tensor::new(vec![0], vec![]).unwrap()),
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.m4c");
        save_checkpoint(&path, params.iter().map(|(n, t)| (n.as_str(), t))).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.len(), params.len());
        for ((n0, t0), (n1, t1)) in params.iter().zip(&loaded) {
            assert_eq!(n0, n1);
            assert_eq!(t0.shape, t1.shape);
            let bits0: Vec<u64> = t0.data.iter().map(|v| v.to_bits()).collect();
            let bits1: Vec<u64> = t1.data.iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits0, bits1);
        }
    }

    #[test]
    fn header_starts_with_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.m4c");
        let t = Tensor::zeros(vec![2]);
        save_checkpoint(&path, [("p", &t)].into_iter()).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"M4C1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
    }

    #[test]
    fn rejects_garbage_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.m4c");
        std::fs::write(&path, b"NOPE....").unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
