//! Shared binary layout for checkpoints and activation dumps:
//!
//! ```text
//! magic[8] | version u32 LE | header_len u64 LE | header JSON | blob
//! ```
//!
//! The header JSON wraps the caller's metadata with the blob length and its
//! SHA-256, so truncation and bit rot are detected on read.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct Envelope<M> {
    blob_len: u64,
    blob_sha256: String,
    meta: M,
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub(crate) fn encode<M: Serialize>(magic: &[u8; 8], version: u32, meta: &M, blob: &[u8]) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&Envelope {
        blob_len: blob.len() as u64,
        blob_sha256: sha256_hex(blob),
        meta,
    })?;
    let mut out = Vec::with_capacity(20 + header.len() + blob.len());
    out.extend_from_slice(magic);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(blob);
    Ok(out)
}

/// Returns the metadata and a view of the verified blob.
pub(crate) fn decode<'b, M: DeserializeOwned>(
    what: &str,
    magic: &[u8; 8],
    version: u32,
    bytes: &'b [u8],
) -> Result<(M, &'b [u8])> {
    if bytes.len() < 20 {
        return Err(Error::CorruptData(format!("{what}: file is {} bytes, shorter than the preamble", bytes.len())));
    }
    if &bytes[..8] != magic {
        return Err(Error::Format(format!("{what}: bad magic number")));
    }
    let found = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if found != version {
        return Err(Error::Format(format!("{what}: format version {found}, this build reads {version}")));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let rest = &bytes[20..];
    if rest.len() < header_len {
        return Err(Error::CorruptData(format!("{what}: header truncated")));
    }
    let env: Envelope<M> = serde_json::from_slice(&rest[..header_len])
        .map_err(|e| Error::CorruptData(format!("{what}: unreadable header: {e}")))?;
    let blob = &rest[header_len..];
    if blob.len() as u64 != env.blob_len {
        return Err(Error::CorruptData(format!(
            "{what}: blob is {} bytes, header declares {}",
            blob.len(),
            env.blob_len
        )));
    }
    if sha256_hex(blob) != env.blob_sha256 {
        return Err(Error::CorruptData(format!("{what}: blob checksum mismatch")));
    }
    Ok((env.meta, blob))
}

pub(crate) fn f32_bytes(values: impl IntoIterator<Item = f32>) -> Vec<u8> {
    values.into_iter().flat_map(f32::to_le_bytes).collect()
}

pub(crate) fn read_f32s(bytes: &[u8]) -> Result<Vec<f32>> {
    if !bytes.len().is_multiple_of(4) {
        return Err(Error::CorruptData(format!("float blob of {} bytes is not a multiple of 4", bytes.len())));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MAGIC: &[u8; 8] = b"TESTFILE";

    #[test]
    fn round_trip() {
        let blob = f32_bytes([1.0, -2.5, f32::MIN_POSITIVE]);
        let bytes = encode(MAGIC, 3, &"meta".to_string(), &blob).unwrap();
        let (meta, out): (String, _) = decode("t", MAGIC, 3, &bytes).unwrap();
        assert_eq!(meta, "meta");
        assert_eq!(read_f32s(out).unwrap(), vec![1.0, -2.5, f32::MIN_POSITIVE]);
    }

    #[test]
    fn detects_damage() {
        let bytes = encode(MAGIC, 1, &0u8, &[1, 2, 3, 4]).unwrap();
        let truncated = &bytes[..bytes.len() - 1];
        assert!(matches!(decode::<u8>("t", MAGIC, 1, truncated), Err(Error::CorruptData(_))));
        let mut flipped = bytes.clone();
        *flipped.last_mut().unwrap() ^= 1;
        assert!(matches!(decode::<u8>("t", MAGIC, 1, &flipped), Err(Error::CorruptData(_))));
        assert!(matches!(decode::<u8>("t", MAGIC, 2, &bytes), Err(Error::Format(_))));
        assert!(matches!(decode::<u8>("t", b"OTHERFMT", 1, &bytes), Err(Error::Format(_))));
    }
}
