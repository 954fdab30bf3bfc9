//! Weight checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "CVFW"            4 bytes magic
//! version: u32      currently 1
//! repeated until EOF:
//!   name_len: u64, name: UTF-8 bytes
//!   rank: u64, dims: rank × u64
//!   payload: product(dims) × f32
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Result, TensorError};
use crate::params::ParamStore;
use crate::tensor::{numel, Element, Tensor};

pub const MAGIC: &[u8; 4] = b"CVFW";
pub const VERSION: u32 = 1;

pub fn write_checkpoint<T: Element, W: Write>(store: &ParamStore<T>, mut out: W) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    for (name, p) in store.iter() {
        out.write_all(&(name.len() as u64).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(p.value.rank() as u64).to_le_bytes())?;
        for &d in p.value.shape() {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(p.value.numel() * 4);
        for v in p.value.data() {
            buf.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    Ok(())
}

pub fn save_checkpoint<T: Element>(store: &ParamStore<T>, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_checkpoint(store, &mut w)?;
    w.flush()?;
    Ok(())
}

fn read_u64(bytes: &[u8], pos: &mut usize) -> Result<u64> {
    let end = *pos + 8;
    let slice = bytes
        .get(*pos..end)
        .ok_or_else(|| TensorError::Checkpoint("truncated record header".into()))?;
    *pos = end;
    Ok(u64::from_le_bytes(slice.try_into().expect("8 bytes")))
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(TensorError::Checkpoint("missing CVFW magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(TensorError::Checkpoint(format!("unsupported version {version}")));
    }
    let mut pos = 8;
    let mut out = Vec::new();
    while pos < bytes.len() {
        let name_len = read_u64(&bytes, &mut pos)? as usize;
        let name_bytes = bytes
            .get(pos..pos + name_len)
            .ok_or_else(|| TensorError::Checkpoint("truncated name".into()))?;
        let name = String::from_utf8(name_bytes.to_vec())
            .map_err(|_| TensorError::Checkpoint("parameter name is not UTF-8".into()))?;
        pos += name_len;
        let rank = read_u64(&bytes, &mut pos)? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(read_u64(&bytes, &mut pos)? as usize);
        }
        let n = numel(&dims);
        let payload = bytes
            .get(pos..pos + n * 4)
            .ok_or_else(|| TensorError::Checkpoint(format!("truncated payload for {name}")))?;
        pos += n * 4;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        out.push((name, Tensor::new(dims, data)?));
    }
    Ok(out)
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<(String, Tensor<f32>)>> {
    read_checkpoint(std::fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_bit_exact() {
        let mut store = ParamStore::<f32>::new();
        store.add("ab", Tensor::new([2], vec![1.0, -2.5]).unwrap()).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&store, &mut buf).unwrap();
        let mut expected = b"CVFW".to_vec();
        expected.extend(1u32.to_le_bytes());
        expected.extend(2u64.to_le_bytes());
        expected.extend(b"ab");
        expected.extend(1u64.to_le_bytes());
        expected.extend(2u64.to_le_bytes());
        expected.extend(1.0f32.to_le_bytes());
        expected.extend((-2.5f32).to_le_bytes());
        assert_eq!(buf, expected);
    }

    #[test]
    fn roundtrip_and_mismatch() {
        let mut store = ParamStore::<f64>::new();
        store.add("w", Tensor::new([2, 3], vec![0.5; 6]).unwrap()).unwrap();
        store.add("b", Tensor::new([3], vec![0.25; 3]).unwrap()).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&store, &mut buf).unwrap();
        let named = read_checkpoint(&buf[..]).unwrap();
        let mut other = ParamStore::<f64>::new();
        other.add("w", Tensor::zeros([2, 3])).unwrap();
        other.add("b", Tensor::zeros([3])).unwrap();
        other.load_named(&named).unwrap();
        assert_eq!(other.by_name("w").unwrap().value.data(), &[0.5; 6]);

        let mut wrong = ParamStore::<f64>::new();
        wrong.add("w", Tensor::zeros([3, 2])).unwrap();
        wrong.add("b", Tensor::zeros([3])).unwrap();
        assert!(matches!(wrong.load_named(&named), Err(TensorError::Checkpoint(_))));
    }

    #[test]
    fn rejects_bad_magic() {
        assert!(read_checkpoint(&b"XXXX\x01\x00\x00\x00"[..]).is_err());
    }
}
