//! Binary checkpoints: `ASMCKPT1`, u64 spec-text length, spec text, then the
//! little-endian f64 parameter blob in declaration order.

use std::path::Path;

use super::network::Network;
use super::spec::NetworkSpec;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ASMCKPT1";

pub fn serialize_network(net: &Network) -> Vec<u8> {
    let text = net.spec().to_text();
    let mut out = Vec::with_capacity(16 + text.len() + net.num_params() * 8);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(text.len() as u64).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    for p in net.params() {
        for v in p.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn deserialize_network(bytes: &[u8]) -> Result<Network> {
    if bytes.len() < 8 {
        return Err(Error::format("checkpoint truncated before the header"));
    }
    if &bytes[..8] != CHECKPOINT_MAGIC {
        if bytes.starts_with(b"ASMCKPT") {
            return Err(Error::format(format!(
                "unsupported checkpoint version `{}`",
                String::from_utf8_lossy(&bytes[..8])
            )));
        }
        return Err(Error::format("not a checkpoint (bad magic)"));
    }
    let len_bytes: [u8; 8] = bytes
        .get(8..16)
        .and_then(|b| b.try_into().ok())
        .ok_or_else(|| Error::format("checkpoint truncated in the spec length"))?;
    let text_len = usize::try_from(u64::from_le_bytes(len_bytes))
        .map_err(|_| Error::format("spec length overflows"))?;
    let text_end = 16usize
        .checked_add(text_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::format("checkpoint truncated in the spec text"))?;
    let text = std::str::from_utf8(&bytes[16..text_end])
        .map_err(|_| Error::format("spec text is not UTF-8"))?;
    let spec = NetworkSpec::parse(text)?;
    let skeleton = super::network::build_network(&spec, 0)?;
    let blob = &bytes[text_end..];
    let expected = skeleton.num_params() * 8;
    if blob.len() != expected {
        return Err(Error::format(format!(
            "parameter blob is {} bytes, expected {expected}",
            blob.len()
        )));
    }
    let mut chunks = blob.chunks_exact(8);
    let params = skeleton
        .params()
        .iter()
        .map(|p| {
            let data = chunks
                .by_ref()
                .take(p.len())
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            Tensor::from_vec(p.shape().to_vec(), data)
        })
        .collect::<Result<Vec<_>>>()?;
    Network::from_parts(spec, params)
}

pub fn save_network(net: &Network, path: &Path) -> Result<()> {
    std::fs::write(path, serialize_network(net)).map_err(|e| Error::io(path, e))
}

pub fn load_network(path: &Path) -> Result<Network> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    deserialize_network(&bytes)
}
