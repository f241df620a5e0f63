//! Reversible 5/3 integer wavelet transform of a 16x16 block and
//! quantization index modulation on single coefficients.

use crate::error::{Error, Result};
use crate::image::BLOCK_SIZE;

const HALF: usize = BLOCK_SIZE / 2;

pub type Block = [[i32; BLOCK_SIZE]; BLOCK_SIZE];
pub type Band = [[i32; HALF]; HALF];

/// One-level decomposition of a 16x16 block.
///
/// The first letter names the horizontal filter, the second the vertical:
/// `hl` holds horizontal detail at vertical low-pass.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct BlockSubbands {
    pub ll: Band,
    pub lh: Band,
    pub hl: Band,
    pub hh: Band,
}

/// 1-D forward lifting on an even-length signal. Writes approximations to
/// `low` and details to `high`.
fn lift_forward(x: &[i32; BLOCK_SIZE], low: &mut [i32; HALF], high: &mut [i32; HALF]) {
    let n = BLOCK_SIZE;
    let at = |i: usize| if i < n { x[i] } else { x[2 * n - 2 - i] };
    for k in 0..HALF {
        high[k] = x[2 * k + 1] - (x[2 * k] + at(2 * k + 2)).div_euclid(2);
    }
    for k in 0..HALF {
        let prev = if k == 0 { high[0] } else { high[k - 1] };
        low[k] = x[2 * k] + (prev + high[k] + 2).div_euclid(4);
    }
}

fn lift_inverse(low: &[i32; HALF], high: &[i32; HALF], x: &mut [i32; BLOCK_SIZE]) {
    for k in 0..HALF {
        let prev = if k == 0 { high[0] } else { high[k - 1] };
        x[2 * k] = low[k] - (prev + high[k] + 2).div_euclid(4);
    }
    for k in 0..HALF {
        let right = if k + 1 < HALF { x[2 * k + 2] } else { x[2 * k] };
        x[2 * k + 1] = high[k] + (x[2 * k] + right).div_euclid(2);
    }
}

/// Forward transform: rows first, then columns.
pub fn iwt_forward_block(block: &Block) -> BlockSubbands {
    // after the row pass: columns [0, 8) low, [8, 16) high
    let mut rows = [[0i32; BLOCK_SIZE]; BLOCK_SIZE];
    for (src, dst) in block.iter().zip(rows.iter_mut()) {
        let (mut lo, mut hi) = ([0; HALF], [0; HALF]);
        lift_forward(src, &mut lo, &mut hi);
        dst[..HALF].copy_from_slice(&lo);
        dst[HALF..].copy_from_slice(&hi);
    }
    let mut sb = BlockSubbands::default();
    for c in 0..BLOCK_SIZE {
        let mut col = [0i32; BLOCK_SIZE];
        for r in 0..BLOCK_SIZE {
            col[r] = rows[r][c];
        }
        let (mut lo, mut hi) = ([0; HALF], [0; HALF]);
        lift_forward(&col, &mut lo, &mut hi);
        let (low_band, high_band, cc) = if c < HALF {
            (&mut sb.ll, &mut sb.lh, c)
        } else {
            (&mut sb.hl, &mut sb.hh, c - HALF)
        };
        for r in 0..HALF {
            low_band[r][cc] = lo[r];
            high_band[r][cc] = hi[r];
        }
    }
    sb
}

/// Exact inverse of [`iwt_forward_block`]. Samples are not clamped.
pub fn iwt_inverse_block(sb: &BlockSubbands) -> Block {
    let mut rows = [[0i32; BLOCK_SIZE]; BLOCK_SIZE];
    for c in 0..BLOCK_SIZE {
        let (low_band, high_band, cc) = if c < HALF {
            (&sb.ll, &sb.lh, c)
        } else {
            (&sb.hl, &sb.hh, c - HALF)
        };
        let mut lo = [0; HALF];
        let mut hi = [0; HALF];
        for r in 0..HALF {
            lo[r] = low_band[r][cc];
            hi[r] = high_band[r][cc];
        }
        let mut col = [0; BLOCK_SIZE];
        lift_inverse(&lo, &hi, &mut col);
        for r in 0..BLOCK_SIZE {
            rows[r][c] = col[r];
        }
    }
    let mut out = [[0i32; BLOCK_SIZE]; BLOCK_SIZE];
    for (src, dst) in rows.iter().zip(out.iter_mut()) {
        let mut lo = [0; HALF];
        let mut hi = [0; HALF];
        lo.copy_from_slice(&src[..HALF]);
        hi.copy_from_slice(&src[HALF..]);
        lift_inverse(&lo, &hi, dst);
    }
    out
}

/// QIM quantization step. Always at least 2.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct QimStep(i32);

impl QimStep {
    pub fn new(step: i32) -> Result<Self> {
        if step < 2 {
            return Err(Error::InvalidConfig(format!(
                "quantization step must be at least 2, got {step}"
            )));
        }
        Ok(QimStep(step))
    }

    #[inline]
    pub fn get(self) -> i32 {
        self.0
    }
}

/// Moves `c` to the nearer of the two nearest points of the lattice that
/// encodes `bit` (even or odd multiples of `step`). Ties keep the lower
/// candidate `v1`.
pub fn qim_embed(c: i32, bit: bool, step: QimStep) -> i32 {
    let s = step.0;
    let v1 = 2 * s * c.div_euclid(2 * s) + if bit { s } else { 0 };
    let v2 = v1 + 2 * s;
    if (c - v1).abs() <= (c - v2).abs() {
        v1
    } else {
        v2
    }
}

/// Parity of `round(c / step)` with halves rounded up.
pub fn qim_extract(c: i32, step: QimStep) -> bool {
    let s = step.0;
    let q = (2 * c + s).div_euclid(2 * s);
    q.rem_euclid(2) == 1
}
