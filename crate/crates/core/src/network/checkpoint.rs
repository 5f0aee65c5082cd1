//! Binary checkpoint of the parameterized layers.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes  "LDBCKPT1"
//! count        u32      number of parameterized layers
//! per layer:
//!   id         u32
//!   w_rank     u32, then w_rank x u32 dims
//!   w_data     prod(dims) x f64
//!   b_rank     u32, then b_rank x u32 dims
//!   b_data     prod(dims) x f64
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::Network;
use crate::error::{LdbError, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"LDBCKPT1";

fn write_tensor<W: Write>(w: &mut W, t: &Tensor) -> std::io::Result<()> {
    w.write_all(&(t.rank() as u32).to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for &v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_checkpoint<W: Write>(net: &Network, mut w: W) -> std::io::Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(net.param_layer_ids().len() as u32).to_le_bytes())?;
    for (id, weights, bias) in net.params() {
        w.write_all(&(id as u32).to_le_bytes())?;
        write_tensor(&mut w, weights)?;
        write_tensor(&mut w, bias)?;
    }
    w.flush()
}

pub fn save_checkpoint(net: &Network, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| LdbError::io(path, e))?;
    write_checkpoint(net, BufWriter::new(f)).map_err(|e| LdbError::io(path, e))
}

/// Reader that tracks its byte offset for error messages.
struct Cursor<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Cursor<R> {
    fn bytes<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf).map_err(|_| LdbError::Format {
            offset: self.offset,
            message: format!("truncated while reading {what}"),
        })?;
        self.offset += N as u64;
        Ok(buf)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        self.bytes::<4>(what).map(u32::from_le_bytes)
    }

    fn tensor(&mut self, what: &str) -> Result<Tensor> {
        let at = self.offset;
        let rank = self.u32(what)? as usize;
        if rank == 0 || rank > 8 {
            return Err(LdbError::Format {
                offset: at,
                message: format!("{what}: implausible rank {rank}"),
            });
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u32(what)? as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f64::from_le_bytes(self.bytes::<8>(what)?));
        }
        Tensor::new(shape, data).map_err(|e| LdbError::Format {
            offset: at,
            message: format!("{what}: {e}"),
        })
    }
}

/// Loads parameters into `net`, which must have the same architecture.
pub fn read_checkpoint<R: Read>(net: &mut Network, reader: R) -> Result<()> {
    let mut c = Cursor { inner: reader, offset: 0 };
    let magic = c.bytes::<8>("magic")?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(LdbError::Format {
            offset: 0,
            message: format!("bad magic {magic:?}"),
        });
    }
    let at = c.offset;
    let count = c.u32("layer count")? as usize;
    let ids = net.param_layer_ids().to_vec();
    if count != ids.len() {
        return Err(LdbError::Format {
            offset: at,
            message: format!("checkpoint has {count} layers, network has {}", ids.len()),
        });
    }
    let mut loaded = Vec::with_capacity(count);
    for &expected in &ids {
        let at = c.offset;
        let id = c.u32("layer id")? as usize;
        if id != expected {
            return Err(LdbError::Format {
                offset: at,
                message: format!("expected layer {expected}, found {id}"),
            });
        }
        let w = c.tensor("weights")?;
        let b = c.tensor("bias")?;
        let layer = net.layer(id);
        if Some(w.shape()) != layer.weights.as_ref().map(Tensor::shape)
            || Some(b.shape()) != layer.bias.as_ref().map(Tensor::shape)
        {
            return Err(LdbError::Format {
                offset: at,
                message: format!("layer {id}: parameter shapes do not match the network"),
            });
        }
        loaded.push((id, w, b));
    }
    for (id, w, b) in loaded {
        let layer = net.layer_mut(id);
        layer.weights = Some(w);
        layer.bias = Some(b);
    }
    Ok(())
}

pub fn load_checkpoint(net: &mut Network, path: &Path) -> Result<()> {
    let f = File::open(path).map_err(|e| LdbError::io(path, e))?;
    read_checkpoint(net, BufReader::new(f))
}
