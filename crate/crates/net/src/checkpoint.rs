//! Binary checkpoint format.
//!
//! ```text
//! magic        8 bytes  "SIXDNET\0"
//! version      u32 LE   (1)
//! spec_len     u32 LE
//! spec         spec_len bytes of ArchitectureSpec JSON
//! input_shape  3 x u32 LE  (channels, height, width)
//! seed         u64 LE
//! step         u64 LE   (Adam step count)
//! param_count  u64 LE   (scalars per array below)
//! params       param_count x f32 LE, tensors in declaration order
//! m            param_count x f32 LE
//! v            param_count x f32 LE
//! ```

use std::io::{Read, Write};

use crate::arch::{build_architecture, ArchitectureSpec, Network};
use crate::error::NetError;
use crate::scalar::NetScalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"SIXDNET\0";
pub const VERSION: u32 = 1;

fn write_f32s<T: NetScalar, W: Write>(w: &mut W, tensors: &[Tensor<T>]) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(tensors.iter().map(|t| t.len() * 4).sum());
    for t in tensors {
        for v in t.data() {
            buf.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
        }
    }
    w.write_all(&buf)
}

pub fn write_checkpoint<T: NetScalar, W: Write>(net: &Network<T>, mut w: W) -> Result<(), NetError> {
    let spec = serde_json::to_vec(&net.spec).map_err(|e| NetError::Checkpoint(e.to_string()))?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(spec.len() as u32).to_le_bytes())?;
    w.write_all(&spec)?;
    for d in net.input_shape {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    w.write_all(&net.seed.to_le_bytes())?;
    w.write_all(&net.params.step.to_le_bytes())?;
    w.write_all(&(net.params.count() as u64).to_le_bytes())?;
    write_f32s(&mut w, &net.params.tensors)?;
    write_f32s(&mut w, &net.params.m)?;
    write_f32s(&mut w, &net.params.v)?;
    Ok(())
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N], NetError> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)
        .map_err(|e| NetError::Checkpoint(format!("truncated header: {e}")))?;
    Ok(b)
}

fn read_f32s<T: NetScalar, R: Read>(r: &mut R, tensors: &mut [Tensor<T>]) -> Result<(), NetError> {
    for t in tensors {
        let mut buf = vec![0u8; t.len() * 4];
        r.read_exact(&mut buf)
            .map_err(|e| NetError::Checkpoint(format!("truncated parameter data: {e}")))?;
        for (dst, src) in t.data_mut().iter_mut().zip(buf.chunks_exact(4)) {
            *dst = T::lit(f32::from_le_bytes(src.try_into().expect("4 bytes")) as f64);
        }
    }
    Ok(())
}

pub fn read_checkpoint<T: NetScalar, R: Read>(mut r: R) -> Result<Network<T>, NetError> {
    if &read_array::<8, _>(&mut r)? != MAGIC {
        return Err(NetError::Checkpoint("bad magic".into()));
    }
    let version = u32::from_le_bytes(read_array(&mut r)?);
    if version != VERSION {
        return Err(NetError::Checkpoint(format!("unsupported version {version}")));
    }
    let spec_len = u32::from_le_bytes(read_array(&mut r)?) as usize;
    let mut spec = vec![0u8; spec_len];
    r.read_exact(&mut spec)
        .map_err(|e| NetError::Checkpoint(format!("truncated spec: {e}")))?;
    let spec: ArchitectureSpec =
        serde_json::from_slice(&spec).map_err(|e| NetError::Checkpoint(format!("spec: {e}")))?;
    let mut input_shape = [0usize; 3];
    for d in input_shape.iter_mut() {
        *d = u32::from_le_bytes(read_array(&mut r)?) as usize;
    }
    let seed = u64::from_le_bytes(read_array(&mut r)?);
    let step = u64::from_le_bytes(read_array(&mut r)?);
    let count = u64::from_le_bytes(read_array(&mut r)?) as usize;
    let mut net = build_architecture::<T>(&spec, input_shape, seed)?;
    if count != net.params.count() {
        return Err(NetError::Checkpoint(format!(
            "parameter count {count} does not match architecture ({})",
            net.params.count()
        )));
    }
    net.params.step = step;
    read_f32s(&mut r, &mut net.params.tensors)?;
    read_f32s(&mut r, &mut net.params.m)?;
    read_f32s(&mut r, &mut net.params.v)?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(NetError::Checkpoint("trailing bytes".into()));
    }
    Ok(net)
}
