//! Versioned binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset  0: magic "PRSNCKPT"
//! offset  8: u32 format version (currently 1)
//! offset 12: 32-byte SHA-256 of the model description's canonical bytes
//! offset 44: u64 tensor count
//! offset 52: tensors, each as u64 element count + that many f32 values,
//!            in the order of Network::tensor_slabs
//! ```
//!
//! Loading refuses anything whose description digest does not match the
//! network it is being loaded into.

use alloc::format;
use alloc::vec::Vec;

use sha2::{Digest, Sha256};

use crate::error::Error;
use crate::model::{ModelSpec, Network};
use crate::Result;

const MAGIC: &[u8; 8] = b"PRSNCKPT";
const VERSION: u32 = 1;

/// SHA-256 of the canonical description encoding.
pub fn spec_digest(spec: &ModelSpec) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(spec.canonical_bytes());
    h.finalize().into()
}

/// Serializes all parameters and running statistics.
pub fn encode(net: &Network) -> Vec<u8> {
    let slabs = net.tensor_slabs();
    let payload: usize = slabs.iter().map(|s| 8 + 4 * s.len()).sum();
    let mut out = Vec::with_capacity(52 + payload);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&spec_digest(net.spec()));
    out.extend_from_slice(&(slabs.len() as u64).to_le_bytes());
    for s in slabs {
        out.extend_from_slice(&(s.len() as u64).to_le_bytes());
        for v in s {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// SHA-256 over the full encoded checkpoint; equal digests mean equal
/// parameters, statistics, and architecture.
pub fn net_digest(net: &Network) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(encode(net));
    h.finalize().into()
}

fn take<'a>(bytes: &'a [u8], offset: &mut usize, len: usize, what: &str) -> Result<&'a [u8]> {
    if *offset + len > bytes.len() {
        return Err(Error::Format {
            offset: *offset,
            message: format!("truncated while reading {what}"),
        });
    }
    let s = &bytes[*offset..*offset + len];
    *offset += len;
    Ok(s)
}

/// Loads a checkpoint into an assembled network with the same architecture.
pub fn decode(net: &mut Network, bytes: &[u8]) -> Result<()> {
    let mut off = 0usize;
    let magic = take(bytes, &mut off, 8, "magic")?;
    if magic != MAGIC {
        return Err(Error::Format { offset: 0, message: "bad magic bytes".into() });
    }
    let ver = u32::from_le_bytes(take(bytes, &mut off, 4, "version")?.try_into().unwrap());
    if ver != VERSION {
        return Err(Error::Format {
            offset: 8,
            message: format!("unsupported version {ver} (expected {VERSION})"),
        });
    }
    let digest = take(bytes, &mut off, 32, "description digest")?;
    if digest != spec_digest(net.spec()) {
        return Err(Error::Format {
            offset: 12,
            message: "checkpoint was written for a different architecture".into(),
        });
    }
    let count =
        u64::from_le_bytes(take(bytes, &mut off, 8, "tensor count")?.try_into().unwrap()) as usize;
    let mut slabs = net.tensor_slabs_mut();
    if count != slabs.len() {
        return Err(Error::Format {
            offset: 44,
            message: format!("{count} tensors in file, network has {}", slabs.len()),
        });
    }
    // Validate fully before mutating anything.
    let mut scan = off;
    for (i, slab) in slabs.iter().enumerate() {
        let at = scan;
        let len = u64::from_le_bytes(
            take(bytes, &mut scan, 8, "tensor length")?.try_into().unwrap(),
        ) as usize;
        if len != slab.len() {
            return Err(Error::Format {
                offset: at,
                message: format!("tensor {i} holds {len} values, expected {}", slab.len()),
            });
        }
        take(bytes, &mut scan, 4 * len, "tensor data")?;
    }
    if scan != bytes.len() {
        return Err(Error::Format {
            offset: scan,
            message: format!("{} trailing bytes after last tensor", bytes.len() - scan),
        });
    }
    for slab in slabs.iter_mut() {
        off += 8; // length already validated
        for v in slab.iter_mut() {
            *v = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
            off += 4;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{LayerKind, ModelSpec};
    use alloc::vec;

    fn small_net(seed: u64) -> Network {
        let spec = ModelSpec {
            name: "ckpt-test".into(),
            input: (1, 4, 4),
            num_classes: 2,
            layers: vec![
                LayerKind::Conv { out_ch: 2, k: 3, stride: 1, pad: 1 },
                LayerKind::BatchNorm,
                LayerKind::ReLU,
                LayerKind::Flatten,
                LayerKind::Dense { out: 2 },
            ],
            blocks: vec![],
            skips: vec![],
        };
        let mut net = Network::assemble(spec).unwrap();
        net.init(seed);
        net
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let src = small_net(1);
        let bytes = encode(&src);
        let mut dst = small_net(2);
        assert_ne!(net_digest(&src), net_digest(&dst));
        decode(&mut dst, &bytes).unwrap();
        assert_eq!(net_digest(&src), net_digest(&dst));
        assert_eq!(encode(&dst), bytes);
    }

    #[test]
    fn rejects_wrong_architecture() {
        let src = small_net(1);
        let bytes = encode(&src);
        let spec = ModelSpec {
            name: "other".into(),
            input: (1, 4, 4),
            num_classes: 2,
            layers: vec![
                LayerKind::Conv { out_ch: 3, k: 3, stride: 1, pad: 1 },
                LayerKind::Flatten,
                LayerKind::Dense { out: 2 },
            ],
            blocks: vec![],
            skips: vec![],
        };
        let mut other = Network::assemble(spec).unwrap();
        match decode(&mut other, &bytes) {
            Err(Error::Format { offset: 12, .. }) => {}
            r => panic!("expected digest rejection, got {r:?}"),
        }
    }

    #[test]
    fn rejects_bad_magic_and_version() {
        let src = small_net(1);
        let mut bytes = encode(&src);
        bytes[0] ^= 0xff;
        let mut dst = small_net(1);
        assert!(matches!(decode(&mut dst, &bytes), Err(Error::Format { offset: 0, .. })));
        let mut bytes = encode(&src);
        bytes[8] = 9;
        assert!(matches!(decode(&mut dst, &bytes), Err(Error::Format { offset: 8, .. })));
    }

    #[test]
    fn truncation_reports_exact_offset() {
        let src = small_net(1);
        let bytes = encode(&src);
        let cut = bytes.len() - 3;
        let mut dst = small_net(3);
        let before = encode(&dst);
        match decode(&mut dst, &bytes[..cut]) {
            Err(Error::Format { offset, .. }) => assert!(offset <= cut),
            r => panic!("expected truncation error, got {r:?}"),
        }
        // A failed load must not half-write parameters.
        assert_eq!(encode(&dst), before);
    }

    #[test]
    fn trailing_garbage_is_rejected() {
        let src = small_net(1);
        let mut bytes = encode(&src);
        let at = bytes.len();
        bytes.extend_from_slice(&[0, 1, 2]);
        let mut dst = small_net(1);
        match decode(&mut dst, &bytes) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, at),
            r => panic!("expected trailing-byte error, got {r:?}"),
        }
    }
}
