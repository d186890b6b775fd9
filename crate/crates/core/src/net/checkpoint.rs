//! Binary checkpoint format.
//!
//! ```text
//! "CAQL1"
//! u32 num_layers
//! u32 rows, u32 cols            (per layer)
//! u32 output_rows, u32 state_dim
//! f64 ...                       (per layer: weights row-major, then bias)
//! f64 ...                       (output weights row-major)
//! ```
//!
//! All integers and floats are little-endian. Values are always stored as
//! `f64`, whatever the in-memory scalar type.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{CaqlError, Result};
use crate::linalg::Matrix;
use crate::net::{Layer, ReluNet};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 5] = b"CAQL1";

// Refuse absurd headers before allocating.
const MAX_DIM: u32 = 1 << 20;

pub fn write_checkpoint<T: Scalar, W: Write>(net: &ReluNet<T>, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(net.layers().len() as u32).to_le_bytes())?;
    for layer in net.layers() {
        w.write_all(&(layer.outputs() as u32).to_le_bytes())?;
        w.write_all(&(layer.inputs() as u32).to_le_bytes())?;
    }
    w.write_all(&(net.output_dim() as u32).to_le_bytes())?;
    w.write_all(&(net.state_dim() as u32).to_le_bytes())?;
    for v in net.params() {
        w.write_all(&v.to_f64_lossy().to_le_bytes())?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n);
    let mut buf = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut buf)?;
        out.push(f64::from_le_bytes(buf));
    }
    Ok(out)
}

pub fn read_checkpoint<T: Scalar, R: Read>(mut r: R) -> Result<ReluNet<T>> {
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CaqlError::Checkpoint("bad magic bytes".into()));
    }
    let num_layers = read_u32(&mut r)?;
    if num_layers == 0 || num_layers > MAX_DIM {
        return Err(CaqlError::Checkpoint(format!("bad layer count {num_layers}")));
    }
    let mut shapes = Vec::with_capacity(num_layers as usize);
    for _ in 0..num_layers {
        let rows = read_u32(&mut r)?;
        let cols = read_u32(&mut r)?;
        if rows > MAX_DIM || cols > MAX_DIM {
            return Err(CaqlError::Checkpoint("layer dimension too large".into()));
        }
        shapes.push((rows as usize, cols as usize));
    }
    let out_rows = read_u32(&mut r)?;
    let state_dim = read_u32(&mut r)?;
    if out_rows > MAX_DIM || state_dim > MAX_DIM {
        return Err(CaqlError::Checkpoint("output dimension too large".into()));
    }
    let conv = |v: f64| T::lit(v);
    let mut layers = Vec::with_capacity(shapes.len());
    for &(rows, cols) in &shapes {
        let w = read_f64s(&mut r, rows * cols)?;
        let b = read_f64s(&mut r, rows)?;
        layers.push(Layer::new(
            Matrix::from_row_major(rows, cols, w.into_iter().map(conv).collect()),
            b.into_iter().map(conv).collect(),
        )?);
    }
    let last = shapes.last().map_or(0, |s| s.0);
    let out = read_f64s(&mut r, out_rows as usize * last)?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(CaqlError::Checkpoint("trailing bytes".into()));
    }
    ReluNet::new(
        layers,
        Matrix::from_row_major(out_rows as usize, last, out.into_iter().map(conv).collect()),
        state_dim as usize,
    )
}

pub fn save_checkpoint<T: Scalar>(net: &ReluNet<T>, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(net, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<ReluNet<T>> {
    read_checkpoint(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn header_layout() {
        let net = ReluNet::<f64>::zeros(4, 3, &[2], 1).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&net, &mut buf).unwrap();
        assert_eq!(&buf[..5], b"CAQL1");
        assert_eq!(u32::from_le_bytes(buf[5..9].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(buf[9..13].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(buf[13..17].try_into().unwrap()), 4);
        assert_eq!(buf.len(), 5 + 4 * 5 + 8 * (8 + 2 + 2));
    }

    #[test]
    fn rejects_garbage() {
        assert!(read_checkpoint::<f64, _>(&b"CAQL2...."[..]).is_err());
        let net = ReluNet::<f64>::zeros(2, 1, &[3], 1).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&net, &mut buf).unwrap();
        buf.push(0);
        assert!(read_checkpoint::<f64, _>(&buf[..]).is_err());
        buf.truncate(buf.len() - 9);
        assert!(read_checkpoint::<f64, _>(&buf[..]).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(seed in any::<u64>(), w1 in 1usize..20, w2 in 1usize..10, s in 0usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let net = ReluNet::<f64>::q_network(s, 2, &[w1, w2], &mut rng).unwrap();
            let mut buf = Vec::new();
            write_checkpoint(&net, &mut buf).unwrap();
            let back: ReluNet<f64> = read_checkpoint(&buf[..]).unwrap();
            let bits = |n: &ReluNet<f64>| n.params().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&back), bits(&net));
            prop_assert_eq!(back, net);
        }
    }
}
