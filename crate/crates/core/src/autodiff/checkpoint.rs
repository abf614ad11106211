//! Versioned binary tensor container.
//!
//! Layout, all little-endian:
//!   magic "SPF1" | version u32 | tensor count u32
//!   per tensor: name len u32 | UTF-8 name | rank u32 | extents u64 each
//!               | raw f64 values
//!
//! Round trips are bit-exact; tensor order is preserved.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"SPF1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl CheckpointTensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, values: Vec<f64>) -> Self {
        CheckpointTensor {
            name: name.into(),
            shape,
            values,
        }
    }

    pub fn scalar(name: impl Into<String>, value: f64) -> Self {
        Self::new(name, vec![1], vec![value])
    }
}

pub fn save_checkpoint(path: &Path, tensors: &[CheckpointTensor]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| Error::io(path.display().to_string(), e);

    w.write_all(&CHECKPOINT_MAGIC).map_err(io_err)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes()).map_err(io_err)?;
    w.write_all(&(tensors.len() as u32).to_le_bytes()).map_err(io_err)?;
    for t in tensors {
        let name = t.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes()).map_err(io_err)?;
        w.write_all(name).map_err(io_err)?;
        w.write_all(&(t.shape.len() as u32).to_le_bytes()).map_err(io_err)?;
        for &e in &t.shape {
            w.write_all(&(e as u64).to_le_bytes()).map_err(io_err)?;
        }
        let numel: usize = t.shape.iter().product();
        if numel != t.values.len() {
            return Err(Error::Checkpoint(format!(
                "tensor {:?}: shape {:?} does not match {} values",
                t.name,
                t.shape,
                t.values.len()
            )));
        }
        for &v in &t.values {
            w.write_all(&v.to_le_bytes()).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<CheckpointTensor>> {
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, path)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad magic {magic:?}, expected {CHECKPOINT_MAGIC:?}"
        )));
    }
    let version = read_u32(&mut r, path)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let count = read_u32(&mut r, path)? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(&mut r, path)? as usize;
        let mut name_buf = vec![0u8; name_len];
        read_exact(&mut r, &mut name_buf, path)?;
        let name = String::from_utf8(name_buf)
            .map_err(|e| Error::Checkpoint(format!("non-UTF-8 tensor name: {e}")))?;
        let rank = read_u32(&mut r, path)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut buf = [0u8; 8];
            read_exact(&mut r, &mut buf, path)?;
            shape.push(u64::from_le_bytes(buf) as usize);
        }
        let numel: usize = shape.iter().product();
        let mut values = Vec::with_capacity(numel);
        for _ in 0..numel {
            let mut buf = [0u8; 8];
            read_exact(&mut r, &mut buf, path)?;
            values.push(f64::from_le_bytes(buf));
        }
        tensors.push(CheckpointTensor { name, shape, values });
    }
    Ok(tensors)
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], path: &Path) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Checkpoint(format!("{}: truncated file", path.display()))
        } else {
            Error::io(path.display().to_string(), e)
        }
    })
}

fn read_u32(r: &mut impl Read, path: &Path) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact(r, &mut buf, path)?;
    Ok(u32::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmpfile(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("scenegen-ckpt-tests");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let tensors = vec![
            CheckpointTensor::new("a/w", vec![2, 3], vec![1.5, -0.0, 3e-300, f64::MIN, 0.1, 7.0]),
            CheckpointTensor::scalar("meta/epoch", 42.0),
            CheckpointTensor::new("b", vec![1], vec![std::f64::consts::PI]),
        ];
        let path = tmpfile("roundtrip.spf");
        save_checkpoint(&path, &tensors).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(tensors.len(), loaded.len());
        for (orig, back) in tensors.iter().zip(&loaded) {
            assert_eq!(orig.name, back.name);
            assert_eq!(orig.shape, back.shape);
            for (x, y) in orig.values.iter().zip(&back.values) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn corrupted_magic_rejected() {
        let path = tmpfile("badmagic.spf");
        save_checkpoint(&path, &[CheckpointTensor::scalar("x", 1.0)]).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, bytes).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)), "{err}");
    }

    #[test]
    fn truncated_file_rejected() {
        let path = tmpfile("trunc.spf");
        save_checkpoint(&path, &[CheckpointTensor::new("x", vec![4], vec![1.0; 4])]).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(msg) if msg.contains("truncated")));
    }

    #[test]
    fn version_mismatch_rejected() {
        let path = tmpfile("badver.spf");
        save_checkpoint(&path, &[CheckpointTensor::scalar("x", 1.0)]).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = 9;
        std::fs::write(&path, bytes).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(msg) if msg.contains("version")));
    }
}
