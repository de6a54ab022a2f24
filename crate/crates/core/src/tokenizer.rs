//! Byte-level tokenizer with atomic special tokens.
//!
//! Ids 0..=255 map to raw byte values. Special tokens occupy 256.. in a
//! fixed order; encoding applies greedy longest-match on their surface
//! strings before falling back to bytes, so a tag like `<Img-A>` is always
//! a single token and never splits into bytes.

use thiserror::Error;

pub const VOCAB_SIZE: usize = 268;

pub const PAD: u32 = 256;
pub const BOS: u32 = 257;
pub const EOS: u32 = 258;
pub const IMG_PATCH: u32 = 259;
pub const IMG_START: u32 = 260;
pub const IMG_END: u32 = 261;
pub const IMG_REF_START: u32 = 262;
pub const IMG_REF_END: u32 = 263;
pub const IMG_A_START: u32 = 264;
pub const IMG_A_END: u32 = 265;
pub const IMG_B_START: u32 = 266;
pub const IMG_B_END: u32 = 267;

/// Surface strings of ids 256.., in id order.
const SPECIAL_SURFACES: [&str; 12] = [
    "<pad>",
    "<bos>",
    "<eos>",
    "<ImgPatch>",
    "<Img>",
    "</Img>",
    "<Img-Reference>",
    "</Img-Reference>",
    "<Img-A>",
    "</Img-A>",
    "<Img-B>",
    "</Img-B>",
];

/// Special ids that render as the empty string when decoding.
const SILENT: [u32; 3] = [PAD, BOS, EOS];

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("token id {0} out of range (vocab size {VOCAB_SIZE})")]
    IdOutOfRange(u32),
}

pub fn special_surface(id: u32) -> Option<&'static str> {
    SPECIAL_SURFACES.get(id.checked_sub(256)? as usize).copied()
}

/// Greedy byte-level encoding: at each position the longest special-token
/// surface wins, otherwise the raw byte is emitted.
pub fn encode(text: &str) -> Vec<u32> {
    // Surfaces sorted once by descending length so the first match is the
    // longest. Ties cannot occur: all surfaces are pairwise distinct.
    let mut by_len: Vec<(usize, &str)> = SPECIAL_SURFACES
        .iter()
        .enumerate()
        .map(|(i, s)| (i, *s))
        .collect();
    by_len.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then(a.0.cmp(&b.0)));

    let bytes = text.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    'outer: while i < bytes.len() {
        for (idx, surface) in &by_len {
            let s = surface.as_bytes();
            if bytes[i..].starts_with(s) {
                out.push(256 + *idx as u32);
                i += s.len();
                continue 'outer;
            }
        }
        out.push(u32::from(bytes[i]));
        i += 1;
    }
    out
}

/// Inverse of [`encode`] on its image. Special tokens render as their
/// surface strings; PAD/BOS/EOS render as empty. Byte runs that do not form
/// valid UTF-8 are replaced lossily (can only happen on generated ids).
pub fn decode(ids: &[u32]) -> Result<String, TokenizerError> {
    let mut out = String::new();
    let mut pending: Vec<u8> = Vec::new();
    let flush = |pending: &mut Vec<u8>, out: &mut String| {
        if !pending.is_empty() {
            out.push_str(&String::from_utf8_lossy(pending));
            pending.clear();
        }
    };
    for &id in ids {
        if id >= VOCAB_SIZE as u32 {
            return Err(TokenizerError::IdOutOfRange(id));
        }
        if id < 256 {
            pending.push(id as u8);
        } else {
            flush(&mut pending, &mut out);
            if !SILENT.contains(&id) {
                out.push_str(special_surface(id).expect("id checked in range"));
            }
        }
    }
    flush(&mut pending, &mut out);
    Ok(out)
}

/// The full id -> surface table, for the `vocab` CLI subcommand.
pub fn vocab_table() -> Vec<(u32, String)> {
    let mut rows = Vec::with_capacity(VOCAB_SIZE);
    for b in 0..=255u32 {
        let ch = b as u8;
        let surface = if ch.is_ascii_graphic() || ch == b' ' {
            (ch as char).to_string()
        } else {
            format!("0x{ch:02x}")
        };
        rows.push((b, surface));
    }
    for (i, s) in SPECIAL_SURFACES.iter().enumerate() {
        rows.push((256 + i as u32, (*s).to_string()));
    }
    rows
}
