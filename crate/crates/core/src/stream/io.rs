use std::io::{Read, Write};

use sha2::{Digest, Sha256};

use super::TokenSequence;
use crate::error::{Error, Result};
use crate::wire;

pub const TOKEN_MAGIC: &[u8; 4] = b"MJT2";
pub const TOKEN_VERSION: u32 = 1;
/// Magic, version, fps, l, K, digest, start frame and count.
pub const TOKEN_HEADER_LEN: usize = 4 + 4 + 8 + 4 + 4 + 32 + 8 + 8;
/// SHA-256 of header and payload.
pub const TOKEN_TRAILER_LEN: usize = 32;

/// Writes `MJT2`: magic, version (u32), fps (f64), l (u32), K (u32), codebook
/// digest, start frame (u64), count (u64), little-endian u16 tokens, then a
/// SHA-256 checksum of everything before it.
pub fn write_tokens<W: Write>(mut w: W, seq: &TokenSequence) -> Result<()> {
    seq.validate()?;
    let mut buf = Vec::with_capacity(TOKEN_HEADER_LEN + 2 * seq.len() + TOKEN_TRAILER_LEN);
    buf.extend_from_slice(TOKEN_MAGIC);
    buf.extend_from_slice(&TOKEN_VERSION.to_le_bytes());
    buf.extend_from_slice(&seq.fps.to_le_bytes());
    buf.extend_from_slice(&seq.l.to_le_bytes());
    buf.extend_from_slice(&seq.k.to_le_bytes());
    buf.extend_from_slice(&seq.codebook_digest);
    buf.extend_from_slice(&seq.start_frame.to_le_bytes());
    buf.extend_from_slice(&(seq.len() as u64).to_le_bytes());
    for t in &seq.tokens {
        buf.extend_from_slice(&t.to_le_bytes());
    }
    let sum = Sha256::digest(&buf);
    buf.extend_from_slice(&sum);
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_tokens<R: Read>(mut r: R) -> Result<TokenSequence> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut cur = bytes.as_slice();
    wire::expect_magic(&mut cur, TOKEN_MAGIC)?;
    let version = wire::read_u32(&mut cur)?;
    if version != TOKEN_VERSION {
        return Err(Error::Format(format!("unsupported token stream version {version}")));
    }
    let fps = f64::from_le_bytes(wire::read_array(&mut cur)?);
    let l = wire::read_u32(&mut cur)?;
    let k = wire::read_u32(&mut cur)?;
    let codebook_digest = wire::read_array(&mut cur)?;
    let start_frame = wire::read_u64(&mut cur)?;
    let count = wire::read_u64(&mut cur)?;
    let expected = usize::try_from(count)
        .ok()
        .and_then(|c| c.checked_mul(2))
        .and_then(|p| p.checked_add(TOKEN_HEADER_LEN + TOKEN_TRAILER_LEN));
    if expected != Some(bytes.len()) {
        return Err(Error::Format(format!("{} bytes do not hold {count} tokens", bytes.len())));
    }
    let body = bytes.len() - TOKEN_TRAILER_LEN;
    if Sha256::digest(&bytes[..body]).as_slice() != &bytes[body..] {
        return Err(Error::Format("token stream checksum mismatch".into()));
    }
    let tokens = bytes[TOKEN_HEADER_LEN..body].chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect();
    let seq = TokenSequence { tokens, l, fps, k, codebook_digest, start_frame };
    seq.validate()?;
    Ok(seq)
}
