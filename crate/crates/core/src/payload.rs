//! Per-block payload layout.
//!
//! Slots (bit `i` of the packed word is slot `i`, fields MSB first):
//!
//! | slots      | field                                             |
//! |------------|---------------------------------------------------|
//! | `0..8`     | type word of the block's chain                    |
//! | `8..13`    | 5-MSB digest of the previous chain block          |
//! | `13..18`   | 5-MSB digest of the next chain block              |
//! | `18..`     | 5-MSB digests of the pair block's sub-blocks      |
//!
//! Payloads are 18, 38 and 63 bits long for Smooth, Normal and Rough blocks.

use crate::error::{Error, Result};
use crate::texture::{msb5_encode, BlockType};

pub const TYPE_WORD_SLOT: usize = 0;
pub const DEP_PREV_SLOT: usize = 8;
pub const DEP_NEXT_SLOT: usize = 13;
pub const RECOVERY_SLOT: usize = 18;
pub const MAX_PAYLOAD_BITS: usize = 63;

/// Number of payload bits a block of this class carries.
pub fn payload_len(kind: BlockType) -> usize {
    RECOVERY_SLOT + 5 * recovery_digests(kind)
}

/// Number of 5-bit recovery digests carried by a block of this class.
pub fn recovery_digests(kind: BlockType) -> usize {
    match kind {
        BlockType::Smooth => 0,
        other => other.subblock_count(),
    }
}

/// Packed payload bits, slot `i` in bit `i`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PayloadBits {
    pub bits: u64,
    pub len: usize,
}

impl PayloadBits {
    #[inline]
    pub fn bit(&self, slot: usize) -> bool {
        (self.bits >> slot) & 1 == 1
    }
}

fn put(bits: &mut u64, slot: usize, width: usize, value: u64) {
    for k in 0..width {
        if (value >> (width - 1 - k)) & 1 == 1 {
            *bits |= 1 << (slot + k);
        }
    }
}

fn take(bits: u64, slot: usize, width: usize) -> u8 {
    let mut v = 0u8;
    for k in 0..width {
        v = (v << 1) | ((bits >> (slot + k)) & 1) as u8;
    }
    v
}

/// Concatenates the 2-bit codes of a chain's members, sub-area 1 first.
pub fn make_type_word(cycle: [BlockType; 4]) -> u8 {
    cycle.iter().fold(0u8, |w, t| (w << 2) | t.code())
}

/// Splits a type word into member types; `None` if any code is `00`.
pub fn split_type_word(word: u8) -> Option<[BlockType; 4]> {
    let mut out = [BlockType::Smooth; 4];
    for (i, t) in out.iter_mut().enumerate() {
        *t = BlockType::from_code((word >> (6 - 2 * i)) & 0b11)?;
    }
    Some(out)
}

/// Decoded payload fields. Digests are 5-bit values.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockPayload {
    pub type_word: u8,
    pub dep_prev: u8,
    pub dep_next: u8,
    pub recovery: Vec<u8>,
}

impl BlockPayload {
    pub fn type_word_valid(&self) -> bool {
        split_type_word(self.type_word).is_some()
    }
}

/// Builds the payload of a block of class `kind` from gray-level averages.
pub fn assemble_payload(
    kind: BlockType,
    type_word: u8,
    prev_avg: u8,
    next_avg: u8,
    recovery_avgs: &[u8],
) -> Result<PayloadBits> {
    let want = recovery_digests(kind);
    if recovery_avgs.len() != want {
        return Err(Error::InvalidArgument(format!(
            "{kind:?} payload needs {want} recovery averages, got {}",
            recovery_avgs.len()
        )));
    }
    let mut bits = 0u64;
    put(&mut bits, TYPE_WORD_SLOT, 8, type_word as u64);
    put(&mut bits, DEP_PREV_SLOT, 5, msb5_encode(prev_avg) as u64);
    put(&mut bits, DEP_NEXT_SLOT, 5, msb5_encode(next_avg) as u64);
    for (i, &avg) in recovery_avgs.iter().enumerate() {
        put(&mut bits, RECOVERY_SLOT + 5 * i, 5, msb5_encode(avg) as u64);
    }
    Ok(PayloadBits {
        bits,
        len: payload_len(kind),
    })
}

/// Slices the 63 extracted bits by the fixed layout. Slots past the
/// assumed class's payload are ignored.
pub fn parse_payload(bits: u64, assumed: BlockType) -> BlockPayload {
    BlockPayload {
        type_word: take(bits, TYPE_WORD_SLOT, 8),
        dep_prev: take(bits, DEP_PREV_SLOT, 5),
        dep_next: take(bits, DEP_NEXT_SLOT, 5),
        recovery: (0..recovery_digests(assumed))
            .map(|i| take(bits, RECOVERY_SLOT + 5 * i, 5))
            .collect(),
    }
}
