//! Tamper detection: payload extraction, chain type voting, three-state
//! block status from the two-sided dependency digests, and mask
//! post-processing.

use rayon::prelude::*;
use serde::Serialize;

use crate::config::Config;
use crate::error::Result;
use crate::image::{BlockMask, GrayImage};
use crate::payload::{parse_payload, split_type_word, BlockPayload};
use crate::texture::{block_average, msb5_encode, BlockGrid, BlockType};
use crate::topology::{SecretKey, Topology, POSITIONS_PER_BLOCK};
use crate::transform::{iwt_forward_block, qim_extract, QimStep};

/// Reads all 63 keyed LL1 positions of one block and removes the block's
/// whitening mask; slot `i` lands in bit `i`.
pub fn extract_block_bits(img: &GrayImage, topology: &Topology, block: usize, step: QimStep) -> u64 {
    let (bx, by) = topology.grid.coords(block);
    let sb = iwt_forward_block(&img.read_block(bx, by));
    let positions = &topology.positions[block];
    let mut bits = 0u64;
    for (slot, &p) in positions.iter().enumerate().take(POSITIONS_PER_BLOCK) {
        let v = sb.ll[(p / 8) as usize][(p % 8) as usize];
        if qim_extract(v, step) {
            bits |= 1 << slot;
        }
    }
    bits ^ topology.whitening[block]
}

pub fn extract_all(img: &GrayImage, topology: &Topology, step: QimStep) -> Vec<u64> {
    (0..topology.grid.len())
        .into_par_iter()
        .map(|b| extract_block_bits(img, topology, b, step))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum VoteConfidence {
    /// All four copies agree.
    Unanimous,
    /// One word has a strict plurality among the valid copies.
    Majority,
    /// Tie or no valid copy; decided code by code, ties going to Smooth.
    Fallback,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TypeVote {
    pub types: Vec<BlockType>,
    pub confidence: Vec<VoteConfidence>,
}

fn vote_word(words: [u8; 4]) -> ([BlockType; 4], VoteConfidence) {
    let valid: Vec<u8> = words.iter().copied().filter(|&w| split_type_word(w).is_some()).collect();
    let mut tally: Vec<(u8, usize)> = Vec::new();
    for &w in &valid {
        match tally.iter_mut().find(|(x, _)| *x == w) {
            Some((_, n)) => *n += 1,
            None => tally.push((w, 1)),
        }
    }
    let best = tally.iter().map(|&(_, n)| n).max().unwrap_or(0);
    let leaders: Vec<u8> = tally.iter().filter(|&&(_, n)| n == best).map(|&(w, _)| w).collect();
    if best > 0 && leaders.len() == 1 {
        let conf = if best == 4 {
            VoteConfidence::Unanimous
        } else {
            VoteConfidence::Majority
        };
        return (split_type_word(leaders[0]).expect("valid word"), conf);
    }
    // code-by-code majority over all four words, ignoring 00 codes
    let mut out = [BlockType::Smooth; 4];
    for (pos, t) in out.iter_mut().enumerate() {
        let mut counts = [0usize; 3];
        for &w in &words {
            if let Some(kind) = BlockType::from_code((w >> (6 - 2 * pos)) & 0b11) {
                counts[kind.code() as usize - 1] += 1;
            }
        }
        let top = *counts.iter().max().expect("three classes");
        let winners: Vec<usize> = (0..3).filter(|&k| counts[k] == top).collect();
        *t = if top == 0 || winners.len() > 1 {
            BlockType::Smooth
        } else {
            BlockType::ALL[winners[0]]
        };
    }
    (out, VoteConfidence::Fallback)
}

/// Decides every block's class from the four type-word copies stored along
/// its chain. The voted word fixes all four members at once.
pub fn vote_types(extracted: &[u64], topology: &Topology) -> TypeVote {
    let n = topology.grid.len();
    let mut types = vec![BlockType::Smooth; n];
    let mut confidence = vec![VoteConfidence::Fallback; n];
    for members in &topology.chains.members {
        let words = members.map(|m| parse_payload(extracted[m], BlockType::Smooth).type_word);
        let (decided, conf) = vote_word(words);
        for (s, &m) in members.iter().enumerate() {
            types[m] = decided[s];
            confidence[m] = conf;
        }
    }
    TypeVote { types, confidence }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockStatus {
    Healthful,
    PartiallyDestroyed,
    FullyDestroyed,
}

/// Digests around block `B` with chain predecessor `A` and successor `C`.
/// `gen_*` are recomputed from received pixels; `ext_*` are read from the
/// payloads: `ext_b1`/`ext_b2` are B's copies of A's and C's digests,
/// `ext_a2` is A's copy of B's digest and `ext_c1` is C's copy of it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct StatusEvidence {
    pub gen_a: u8,
    pub gen_b: u8,
    pub gen_c: u8,
    pub ext_b1: u8,
    pub ext_b2: u8,
    pub ext_a2: u8,
    pub ext_c1: u8,
}

pub fn block_status(e: &StatusEvidence) -> BlockStatus {
    let a_ok = e.gen_a == e.ext_b1;
    let c_ok = e.gen_c == e.ext_b2;
    let from_a = e.gen_b == e.ext_a2;
    let from_c = e.gen_b == e.ext_c1;
    if a_ok || c_ok {
        BlockStatus::Healthful
    } else if !from_a && !from_c {
        BlockStatus::FullyDestroyed
    } else {
        BlockStatus::PartiallyDestroyed
    }
}

fn neighbours(grid: &BlockGrid, b: usize) -> impl Iterator<Item = usize> + '_ {
    let (x, y) = grid.coords(b);
    (-1i64..=1)
        .flat_map(move |dy| (-1i64..=1).map(move |dx| (dx, dy)))
        .filter(|&(dx, dy)| dx != 0 || dy != 0)
        .filter_map(move |(dx, dy)| {
            let nx = x as i64 + dx;
            let ny = y as i64 + dy;
            (nx >= 0 && ny >= 0 && (nx as usize) < grid.blocks_w && (ny as usize) < grid.blocks_h)
                .then(|| grid.index(nx as usize, ny as usize))
        })
}

/// Turns raw statuses into the final tamper mask:
///
/// 1. partially destroyed blocks 8-connected to a fully destroyed block,
///    directly or through other partially destroyed blocks, become destroyed;
/// 2. the remaining partially destroyed blocks are dropped;
/// 3. one simultaneous fill pass marks every healthful block with more than
///    two destroyed blocks among its eight neighbours.
pub fn postprocess(status: &[BlockStatus], grid: &BlockGrid) -> BlockMask {
    let n = grid.len();
    let mut destroyed = vec![false; n];
    let mut seen = vec![false; n];
    for start in 0..n {
        if seen[start] || status[start] == BlockStatus::Healthful {
            continue;
        }
        let mut component = vec![start];
        let mut stack = vec![start];
        seen[start] = true;
        let mut anchored = false;
        while let Some(b) = stack.pop() {
            anchored |= status[b] == BlockStatus::FullyDestroyed;
            for nb in neighbours(grid, b) {
                if !seen[nb] && status[nb] != BlockStatus::Healthful {
                    seen[nb] = true;
                    stack.push(nb);
                    component.push(nb);
                }
            }
        }
        if anchored {
            for b in component {
                destroyed[b] = true;
            }
        }
    }
    let filled: Vec<bool> = (0..n)
        .map(|b| destroyed[b] || neighbours(grid, b).filter(|&nb| destroyed[nb]).count() > 2)
        .collect();
    BlockMask::from_flags(grid.blocks_w, grid.blocks_h, filled).expect("grid-sized flags")
}

/// Full detection result for one image.
#[derive(Clone, Debug)]
pub struct Detection {
    /// Topology rebuilt from the voted types, pairs included.
    pub topology: Topology,
    pub extracted: Vec<u64>,
    pub vote: TypeVote,
    pub evidence: Vec<StatusEvidence>,
    pub status: Vec<BlockStatus>,
    pub mask: BlockMask,
}

impl Detection {
    pub fn payload(&self, block: usize) -> BlockPayload {
        parse_payload(self.extracted[block], self.vote.types[block])
    }

    /// Debug raster: 255 tampered, 128 partially destroyed but not in the
    /// final mask, 0 otherwise. One 16x16 patch per block.
    pub fn mask_image(&self) -> GrayImage {
        let grid = self.topology.grid;
        let mut levels = BlockMask::new(grid.blocks_w, grid.blocks_h).to_image();
        for b in 0..grid.len() {
            let (bx, by) = grid.coords(b);
            let v = if self.mask.is_set(b) {
                255
            } else if self.status[b] == BlockStatus::PartiallyDestroyed {
                128
            } else {
                continue;
            };
            for y in by * 16..(by + 1) * 16 {
                for x in bx * 16..(bx + 1) * 16 {
                    levels.set(x, y, v);
                }
            }
        }
        levels
    }
}

pub fn detect(img: &GrayImage, key: SecretKey, cfg: &Config) -> Result<Detection> {
    let step = cfg.qim_step()?;
    let grid = BlockGrid::for_image(img)?;
    let mut topology = Topology::new(key, grid);
    let extracted = extract_all(img, &topology, step);
    let vote = vote_types(&extracted, &topology);
    topology.assign_pairs(&vote.types);

    let gen: Vec<u8> = (0..grid.len())
        .map(|b| {
            let (bx, by) = grid.coords(b);
            msb5_encode(block_average(img, bx, by))
        })
        .collect();
    let parsed: Vec<BlockPayload> = (0..grid.len())
        .map(|b| parse_payload(extracted[b], vote.types[b]))
        .collect();
    let evidence: Vec<StatusEvidence> = (0..grid.len())
        .map(|b| {
            let a = topology.prev(b);
            let c = topology.next(b);
            StatusEvidence {
                gen_a: gen[a],
                gen_b: gen[b],
                gen_c: gen[c],
                ext_b1: parsed[b].dep_prev,
                ext_b2: parsed[b].dep_next,
                ext_a2: parsed[a].dep_next,
                ext_c1: parsed[c].dep_prev,
            }
        })
        .collect();
    let status: Vec<BlockStatus> = evidence.iter().map(block_status).collect();
    let mask = postprocess(&status, &grid);
    Ok(Detection {
        topology,
        extracted,
        vote,
        evidence,
        status,
        mask,
    })
}
