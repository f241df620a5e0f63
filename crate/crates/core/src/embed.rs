//! Watermark embedding: texture analysis, payload assembly and QIM
//! embedding into each block's LL1 band, followed by a per-block verify and
//! repair loop.

use rayon::prelude::*;
use serde::Serialize;

use crate::config::Config;
use crate::detect::extract_block_bits;
use crate::error::Result;
use crate::image::{GrayImage, BLOCK_SIZE};
use crate::metrics::{psnr, ssim, Psnr};
use crate::payload::{assemble_payload, make_type_word, PayloadBits};
use crate::texture::{block_average, msb5_encode, subblock_averages, TextureMap, TypeCounts};
use crate::topology::{SecretKey, Topology, POSITIONS_PER_BLOCK};
use crate::transform::{iwt_forward_block, iwt_inverse_block, qim_embed, qim_extract, Block, QimStep};

/// Maximum rounds of the verify/repair loop per block.
pub const MAX_REPAIR_ROUNDS: usize = 8;

/// Distance, in gray levels, that the repair loop tries to keep between a
/// watermarked block's mean and the edges of its 5-MSB bin, so that small
/// benign distortions do not change the block's digest.
const DIGEST_MARGIN: f64 = 1.0;

/// Everything derived from the original image before any pixel changes.
#[derive(Clone, Debug)]
pub struct EmbedPlan {
    pub texture: TextureMap,
    pub topology: Topology,
    /// Rounded mean of each original block.
    pub averages: Vec<u8>,
    pub payloads: Vec<PayloadBits>,
}

impl EmbedPlan {
    pub fn new(img: &GrayImage, key: SecretKey, cfg: &Config) -> Result<Self> {
        cfg.validate()?;
        let texture = TextureMap::analyze(img, cfg.th1, cfg.th2)?;
        let grid = texture.grid;
        let types = texture.types();
        let topology = Topology::with_types(key, grid, &types);
        let averages: Vec<u8> = (0..grid.len())
            .map(|i| {
                let (bx, by) = grid.coords(i);
                block_average(img, bx, by)
            })
            .collect();
        let payloads = (0..grid.len())
            .map(|b| {
                let kind = types[b];
                let cycle = topology.cycle(b).map(|m| types[m]);
                let recovery = match topology.pair(b) {
                    Some(p) => {
                        let (px, py) = grid.coords(p);
                        subblock_averages(img, px, py, kind)
                    }
                    None => Vec::new(),
                };
                assemble_payload(
                    kind,
                    make_type_word(cycle),
                    averages[topology.prev(b)],
                    averages[topology.next(b)],
                    &recovery,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(EmbedPlan {
            texture,
            topology,
            averages,
            payloads,
        })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct EmbedReport {
    pub key: SecretKey,
    pub config: Config,
    pub width: usize,
    pub height: usize,
    pub psnr: Psnr,
    pub ssim: f64,
    pub types: TypeCounts,
    /// Payload bits that still read back wrong after the repair loop.
    pub residual_bit_errors: usize,
    /// Blocks whose watermarked mean falls outside the 5-MSB bin of the
    /// original mean.
    pub digest_mismatches: usize,
    pub degraded: bool,
}

struct BlockOutcome {
    pixels: [[u8; BLOCK_SIZE]; BLOCK_SIZE],
    bit_errors: usize,
    digest_ok: bool,
}

fn clamp_block(block: &Block) -> [[u8; BLOCK_SIZE]; BLOCK_SIZE] {
    block.map(|row| row.map(|v| v.clamp(0, 255) as u8))
}

fn block_sum(block: &[[u8; BLOCK_SIZE]; BLOCK_SIZE]) -> i64 {
    block.iter().flatten().map(|&v| v as i64).sum()
}

/// Sum of `raw - clamped` around the pixel footprint of LL cell `(r, c)`.
/// Positive when clamping cut values above 255.
fn clip_pressure(raw: &Block, r: usize, c: usize) -> i64 {
    let (y0, x0) = ((2 * r).saturating_sub(1), (2 * c).saturating_sub(1));
    let (y1, x1) = ((2 * r + 2).min(BLOCK_SIZE), (2 * c + 2).min(BLOCK_SIZE));
    let mut p = 0i64;
    for row in &raw[y0..y1] {
        for &v in &row[x0..x1] {
            p += (v - v.clamp(0, 255)) as i64;
        }
    }
    p
}

/// Embeds one block's payload and runs the verify/repair loop.
fn embed_block(
    original: &Block,
    positions: &[u8; POSITIONS_PER_BLOCK],
    payload: PayloadBits,
    step: QimStep,
    digest: u8,
) -> BlockOutcome {
    let s = step.get();
    let mut sb = iwt_forward_block(original);
    let orig_ll = sb.ll;
    let cell = |p: u8| ((p / 8) as usize, (p % 8) as usize);

    for slot in 0..payload.len {
        let (r, c) = cell(positions[slot]);
        sb.ll[r][c] = qim_embed(sb.ll[r][c], payload.bit(slot), step);
    }

    // LL cells that carry no payload bit can absorb mean corrections freely.
    let mut free: Vec<(usize, usize)> = positions[payload.len..].iter().map(|&p| cell(p)).collect();
    let unused = (0..64u8).find(|p| !positions.contains(p)).expect("63 of 64 cells used");
    free.push(cell(unused));

    // mean band (in pixel-sum units) that keeps the rounded mean in the bin
    let n = (BLOCK_SIZE * BLOCK_SIZE) as f64;
    let bin_lo = 8.0 * digest as f64 - 0.5;
    let bin_hi = 8.0 * digest as f64 + 7.5;
    let want_lo = ((bin_lo + DIGEST_MARGIN).min(bin_hi - DIGEST_MARGIN)) * n;
    let want_hi = ((bin_hi - DIGEST_MARGIN).max(bin_lo + DIGEST_MARGIN)) * n;

    let mut best: Option<(f64, BlockOutcome)> = None;
    let mut round = 0;
    loop {
        let raw = iwt_inverse_block(&sb);
        let pixels = clamp_block(&raw);
        let readback = iwt_forward_block(&pixels.map(|row| row.map(i32::from)));
        let failed: Vec<usize> = (0..payload.len)
            .filter(|&slot| {
                let (r, c) = cell(positions[slot]);
                qim_extract(readback.ll[r][c], step) != payload.bit(slot)
            })
            .collect();
        let sum = block_sum(&pixels) as f64;
        let rounded = ((2.0 * sum + n) / (2.0 * n)).floor() as u8;
        let digest_ok = msb5_encode(rounded) == digest;
        let in_band = sum >= want_lo && sum <= want_hi;

        if failed.is_empty() {
            if in_band {
                return BlockOutcome { pixels, bit_errors: 0, digest_ok };
            }
            let miss = (want_lo - sum).max(sum - want_hi);
            if best.as_ref().is_none_or(|(m, _)| miss < *m) {
                best = Some((miss, BlockOutcome { pixels, bit_errors: 0, digest_ok }));
            }
        }
        if round == MAX_REPAIR_ROUNDS {
            // clipping can make the mean band unreachable; intact bits win
            return match best {
                Some((_, outcome)) => outcome,
                None => BlockOutcome {
                    pixels,
                    bit_errors: failed.len(),
                    digest_ok,
                },
            };
        }
        round += 1;

        if !failed.is_empty() {
            for slot in failed {
                let (r, c) = cell(positions[slot]);
                let dir = if clip_pressure(&raw, r, c) > 0 { -1 } else { 1 };
                sb.ll[r][c] += dir * 2 * s;
            }
            continue;
        }

        // Shift the block mean back into the band. A change of `d` on one LL
        // cell moves the pixel sum by about 4d.
        let target = if sum < want_lo { want_lo } else { want_hi };
        let mut need = ((target - sum) / 4.0).round() as i32;
        if need == 0 {
            need = if sum < want_lo { 1 } else { -1 };
        }
        let dir = need.signum();
        let cap = s;
        let n = free.len() as i32;
        let per = ((need.abs() + n - 1) / n).min(cap);
        let mut remaining = need.abs();
        for &(r, c) in &free {
            if remaining == 0 {
                break;
            }
            let d = per.min(remaining);
            sb.ll[r][c] += dir * d;
            remaining -= d;
        }
        if remaining > 0 {
            // lattice moves keep the bit: prefer cells already displaced
            // against the direction of travel
            let mut slots: Vec<usize> = (0..payload.len).collect();
            slots.sort_by_key(|&slot| {
                let (r, c) = cell(positions[slot]);
                dir * (sb.ll[r][c] - orig_ll[r][c])
            });
            for slot in slots {
                if remaining <= 0 {
                    break;
                }
                let (r, c) = cell(positions[slot]);
                sb.ll[r][c] += dir * 2 * s;
                remaining -= 2 * s;
            }
        }
    }
}

/// Embeds the watermark. Fails only on invalid dimensions or configuration;
/// blocks the repair loop cannot fix are counted in the report.
pub fn embed(img: &GrayImage, key: SecretKey, cfg: &Config) -> Result<(GrayImage, EmbedReport)> {
    let plan = EmbedPlan::new(img, key, cfg)?;
    let (wm, residual, mismatches) = embed_with_plan(img, &plan, cfg)?;
    let report = EmbedReport {
        key,
        config: *cfg,
        width: img.width(),
        height: img.height(),
        psnr: psnr(img, &wm)?,
        ssim: ssim(img, &wm)?,
        types: plan.texture.counts(),
        residual_bit_errors: residual,
        digest_mismatches: mismatches,
        degraded: residual > 0,
    };
    Ok((wm, report))
}

/// Embedding proper; returns the image, residual bit errors and digest
/// mismatches.
pub fn embed_with_plan(img: &GrayImage, plan: &EmbedPlan, cfg: &Config) -> Result<(GrayImage, usize, usize)> {
    let step = cfg.qim_step()?;
    let grid = plan.texture.grid;
    let outcomes: Vec<BlockOutcome> = (0..grid.len())
        .into_par_iter()
        .map(|b| {
            let (bx, by) = grid.coords(b);
            embed_block(
                &img.read_block(bx, by),
                &plan.topology.positions[b],
                PayloadBits {
                    bits: plan.payloads[b].bits ^ plan.topology.whitening[b],
                    len: plan.payloads[b].len,
                },
                step,
                msb5_encode(plan.averages[b]),
            )
        })
        .collect();
    let mut wm = img.clone();
    let (mut residual, mut mismatches) = (0, 0);
    for (b, o) in outcomes.iter().enumerate() {
        let (bx, by) = grid.coords(b);
        wm.write_block(bx, by, &o.pixels);
        residual += o.bit_errors;
        mismatches += usize::from(!o.digest_ok);
    }
    Ok((wm, residual, mismatches))
}

/// Re-extracts every used payload slot and counts disagreements with
/// `expected`.
pub fn verify_embedding(wm: &GrayImage, key: SecretKey, cfg: &Config, expected: &[PayloadBits]) -> Result<usize> {
    let step = cfg.qim_step()?;
    let topology = Topology::new(key, crate::texture::BlockGrid::for_image(wm)?);
    let grid = topology.grid;
    Ok((0..grid.len())
        .into_par_iter()
        .map(|b| {
            let bits = extract_block_bits(wm, &topology, b, step);
            let want = expected[b];
            let mask = (1u64 << want.len) - 1;
            ((bits ^ want.bits) & mask).count_ones() as usize
        })
        .sum())
}
