//! Versioned binary checkpoint of a [`BackflowNet`].
//!
//! Layout (little endian): 8-byte magic `BFVMCNET`, `u32` version, eight
//! `u32` architecture fields in [`AnsatzConfig`] declaration order, `u32`
//! spin-orbital count, `u32` electron count, `u64` parameter count, then the
//! parameters as raw `f64` bit patterns.

use sha2::{Digest, Sha256};

use super::{AnsatzConfig, BackflowNet};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"BFVMCNET";
pub const CHECKPOINT_VERSION: u32 = 1;

fn header_bytes(net: &BackflowNet) -> Vec<u8> {
    let c = net.config();
    let mut out = Vec::with_capacity(64);
    for v in [
        c.t,
        c.d_f,
        c.n_layers,
        c.n_heads,
        c.d_atten,
        c.mlp_layers,
        c.d_mlp,
        c.n_dets,
        net.n_so,
        net.n_e,
    ] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&(net.n_params() as u64).to_le_bytes());
    out
}

impl BackflowNet {
    /// Short hash of the architecture and system shape; two networks with the
    /// same fingerprint have interchangeable parameter vectors.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(header_bytes(self));
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub fn write_checkpoint(net: &BackflowNet) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + 8 * net.n_params());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&header_bytes(net));
    for p in net.params() {
        out.extend_from_slice(&p.to_bits().to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint("truncated checkpoint".into()));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<BackflowNet> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(8)? != MAGIC {
        return Err(Error::Checkpoint("not a network checkpoint".into()));
    }
    let version = cur.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let mut fields = [0usize; 10];
    for f in fields.iter_mut() {
        *f = cur.u32()? as usize;
    }
    let config = AnsatzConfig {
        t: fields[0],
        d_f: fields[1],
        n_layers: fields[2],
        n_heads: fields[3],
        d_atten: fields[4],
        mlp_layers: fields[5],
        d_mlp: fields[6],
        n_dets: fields[7],
    };
    let mut net = BackflowNet::zeros(config, fields[8], fields[9])?;
    let n_params = cur.u64()? as usize;
    if n_params != net.n_params() {
        return Err(Error::Checkpoint(format!(
            "parameter count {n_params} does not match architecture ({})",
            net.n_params()
        )));
    }
    let mut params = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        params.push(f64::from_bits(cur.u64()?));
    }
    if cur.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after parameters".into()));
    }
    net.set_params(params)?;
    Ok(net)
}
