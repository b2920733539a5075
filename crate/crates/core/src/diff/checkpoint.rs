//! Binary parameter checkpoints.
//!
//! Layout: the 8-byte magic `GMNCKPT1`, then for every parameter in order:
//! `u32` name length, UTF-8 name, `u32` rank (always 2), `rank × u32`
//! extents, and the row-major payload as little-endian `f32`. All integers
//! are little-endian. The stream ends after the last parameter.

use std::io::{self, Read, Write};

use thiserror::Error;

use super::{ParamSet, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"GMNCKPT1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("bad checkpoint magic")]
    BadMagic,
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

pub fn write_checkpoint<W: Write>(mut w: W, params: &ParamSet<f32>) -> Result<(), CheckpointError> {
    w.write_all(CHECKPOINT_MAGIC)?;
    for (_, name, t) in params.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&2u32.to_le_bytes())?;
        w.write_all(&(t.rows() as u32).to_le_bytes())?;
        w.write_all(&(t.cols() as u32).to_le_bytes())?;
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, CheckpointError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<ParamSet<f32>, CheckpointError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    let mut cur = io::Cursor::new(rest.as_slice());
    let mut params = ParamSet::new();
    while (cur.position() as usize) < rest.len() {
        let name_len = read_u32(&mut cur)? as usize;
        let mut name = vec![0u8; name_len];
        cur.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        let rank = read_u32(&mut cur)? as usize;
        let extents = (0..rank).map(|_| read_u32(&mut cur).map(|e| e as usize)).collect::<Result<Vec<_>, _>>()?;
        let (rows, cols) = match extents.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            _ => return Err(CheckpointError::Corrupt(format!("parameter {name} has rank {rank}"))),
        };
        let mut data = Vec::with_capacity(rows * cols);
        let mut b = [0u8; 4];
        for _ in 0..rows * cols {
            cur.read_exact(&mut b)?;
            data.push(f32::from_le_bytes(b));
        }
        if params.id_of(&name).is_some() {
            return Err(CheckpointError::Corrupt(format!("duplicate parameter {name}")));
        }
        params.add(name, Tensor::new(rows, cols, data));
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_names_shapes_and_bits() {
        let mut ps = ParamSet::new();
        ps.add("emb", Tensor::new(2, 3, vec![1.0, -0.5, 3.25, f32::MIN_POSITIVE, 0.0, -7.0]));
        ps.add("bias", Tensor::row_vector(vec![0.125]));
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &ps).unwrap();
        assert_eq!(&buf[..8], b"GMNCKPT1");
        let back = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back, ps);
    }

    #[test]
    fn header_layout_is_little_endian() {
        let mut ps = ParamSet::new();
        ps.add("a", Tensor::new(1, 1, vec![1.0]));
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &ps).unwrap();
        let expected: Vec<u8> = [
            b"GMNCKPT1".as_slice(),
            &1u32.to_le_bytes(),
            b"a",
            &2u32.to_le_bytes(),
            &1u32.to_le_bytes(),
            &1u32.to_le_bytes(),
            &1.0f32.to_le_bytes(),
        ]
        .concat();
        assert_eq!(buf, expected);
    }

    #[test]
    fn rejects_wrong_magic_and_truncation() {
        assert!(matches!(read_checkpoint(&b"NOTACKPT"[..]), Err(CheckpointError::BadMagic)));
        let mut ps = ParamSet::new();
        ps.add("a", Tensor::new(1, 2, vec![1.0, 2.0]));
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &ps).unwrap();
        buf.truncate(buf.len() - 2);
        assert!(read_checkpoint(buf.as_slice()).is_err());
    }
}
