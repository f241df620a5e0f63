//! Block partitioning, texture categorization by normalized standard
//! deviation, sub-block averaging and 5-MSB digests.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{GrayImage, BLOCK_SIZE};

/// Grid of 16x16 blocks covering an image.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct BlockGrid {
    pub blocks_w: usize,
    pub blocks_h: usize,
}

impl BlockGrid {
    /// Grid for a watermarkable image (dimensions multiples of 64).
    pub fn for_image(img: &GrayImage) -> Result<Self> {
        img.check_watermarkable()?;
        Ok(BlockGrid {
            blocks_w: img.width() / BLOCK_SIZE,
            blocks_h: img.height() / BLOCK_SIZE,
        })
    }

    pub fn new(blocks_w: usize, blocks_h: usize) -> Result<Self> {
        if blocks_w == 0 || blocks_h == 0 || !blocks_w.is_multiple_of(4) || !blocks_h.is_multiple_of(4) {
            return Err(Error::Divisibility {
                width: blocks_w * BLOCK_SIZE,
                height: blocks_h * BLOCK_SIZE,
                multiple: 4 * BLOCK_SIZE,
            });
        }
        Ok(BlockGrid { blocks_w, blocks_h })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.blocks_w * self.blocks_h
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, bx: usize, by: usize) -> usize {
        by * self.blocks_w + bx
    }

    #[inline]
    pub fn coords(&self, index: usize) -> (usize, usize) {
        (index % self.blocks_w, index / self.blocks_w)
    }
}

/// Texture class of a block. Wire codes: Smooth `01`, Normal `10`,
/// Rough `11`; `00` is never valid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockType {
    Smooth,
    Normal,
    Rough,
}

impl BlockType {
    pub const ALL: [BlockType; 3] = [BlockType::Smooth, BlockType::Normal, BlockType::Rough];

    pub fn code(self) -> u8 {
        match self {
            BlockType::Smooth => 0b01,
            BlockType::Normal => 0b10,
            BlockType::Rough => 0b11,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0b01 => Some(BlockType::Smooth),
            0b10 => Some(BlockType::Normal),
            0b11 => Some(BlockType::Rough),
            _ => None,
        }
    }

    /// Number of sub-blocks whose averages are kept for recovery.
    pub fn subblock_count(self) -> usize {
        match self {
            BlockType::Smooth => 1,
            BlockType::Normal => 4,
            BlockType::Rough => 9,
        }
    }

    /// Sub-block boundaries along one axis of the 16-pixel block.
    pub fn partition(self) -> &'static [(usize, usize)] {
        match self {
            BlockType::Smooth => &[(0, 16)],
            BlockType::Normal => &[(0, 8), (8, 16)],
            BlockType::Rough => &[(0, 5), (5, 10), (10, 16)],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BlockTexture {
    pub raw_std: f64,
    pub norm_std: f64,
    #[serde(rename = "type")]
    pub kind: BlockType,
}

/// Per-block texture statistics and classes, row-major over the grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TextureMap {
    pub grid: BlockGrid,
    pub blocks: Vec<BlockTexture>,
}

impl TextureMap {
    pub fn analyze(img: &GrayImage, th1: f64, th2: f64) -> Result<Self> {
        let grid = BlockGrid::for_image(img)?;
        check_thresholds(th1, th2)?;
        let raw = block_std(img, &grid);
        let norm = normalize(&raw)?;
        let blocks = raw
            .iter()
            .zip(&norm)
            .map(|(&raw_std, &norm_std)| {
                Ok(BlockTexture {
                    raw_std,
                    norm_std,
                    kind: categorize(norm_std, th1, th2)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TextureMap { grid, blocks })
    }

    pub fn types(&self) -> Vec<BlockType> {
        self.blocks.iter().map(|b| b.kind).collect()
    }

    pub fn counts(&self) -> TypeCounts {
        TypeCounts::of(self.blocks.iter().map(|b| b.kind))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct TypeCounts {
    pub smooth: usize,
    pub normal: usize,
    pub rough: usize,
}

impl TypeCounts {
    pub fn of(types: impl IntoIterator<Item = BlockType>) -> Self {
        let mut c = TypeCounts::default();
        for t in types {
            match t {
                BlockType::Smooth => c.smooth += 1,
                BlockType::Normal => c.normal += 1,
                BlockType::Rough => c.rough += 1,
            }
        }
        c
    }
}

pub(crate) fn check_thresholds(th1: f64, th2: f64) -> Result<()> {
    if th1 > 0.0 && th1 < th2 && th2 <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "thresholds must satisfy 0 < th1 < th2 <= 1, got th1={th1}, th2={th2}"
        )))
    }
}

/// Population standard deviation of each block's gray levels.
pub fn block_std(img: &GrayImage, grid: &BlockGrid) -> Vec<f64> {
    let n = (BLOCK_SIZE * BLOCK_SIZE) as f64;
    (0..grid.len())
        .map(|i| {
            let (bx, by) = grid.coords(i);
            let block = img.read_block(bx, by);
            let (sum, sum_sq) = block.iter().flatten().fold((0i64, 0i64), |(s, q), &v| {
                (s + v as i64, q + (v * v) as i64)
            });
            // exact integer variance: (n*sum_sq - sum^2) / n^2
            let num = n as i64 * sum_sq - sum * sum;
            (num as f64).sqrt() / n
        })
        .collect()
}

/// Min-max normalization to [0, 1]. A constant input maps to all zeros.
pub fn normalize(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("cannot normalize an empty list".into()));
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == min {
        return Ok(vec![0.0; values.len()]);
    }
    Ok(values.iter().map(|v| (v - min) / (max - min)).collect())
}

/// `[0, th1)` Smooth, `[th1, th2)` Normal, `[th2, 1]` Rough.
pub fn categorize(norm: f64, th1: f64, th2: f64) -> Result<BlockType> {
    check_thresholds(th1, th2)?;
    Ok(if norm < th1 {
        BlockType::Smooth
    } else if norm < th2 {
        BlockType::Normal
    } else {
        BlockType::Rough
    })
}

#[inline]
fn rounded_mean(sum: u32, count: u32) -> u8 {
    ((2 * sum + count) / (2 * count)) as u8
}

/// Rounded (half-up) mean of each sub-block, row-major: 1, 4 or 9 values.
pub fn subblock_averages(img: &GrayImage, bx: usize, by: usize, kind: BlockType) -> Vec<u8> {
    region_averages(img, bx, by, kind.partition())
}

pub(crate) fn region_averages(
    img: &GrayImage,
    bx: usize,
    by: usize,
    parts: &[(usize, usize)],
) -> Vec<u8> {
    let x0 = bx * BLOCK_SIZE;
    let y0 = by * BLOCK_SIZE;
    let mut out = Vec::with_capacity(parts.len() * parts.len());
    for &(r0, r1) in parts {
        for &(c0, c1) in parts {
            let mut sum = 0u32;
            for y in y0 + r0..y0 + r1 {
                for x in x0 + c0..x0 + c1 {
                    sum += img.get(x, y) as u32;
                }
            }
            out.push(rounded_mean(sum, ((r1 - r0) * (c1 - c0)) as u32));
        }
    }
    out
}

/// Rounded (half-up) mean of the 256 samples of a block.
pub fn block_average(img: &GrayImage, bx: usize, by: usize) -> u8 {
    region_averages(img, bx, by, BlockType::Smooth.partition())[0]
}

/// The five most significant bits of an 8-bit value, as an integer in 0..32.
#[inline]
pub fn msb5_encode(avg: u8) -> u8 {
    avg >> 3
}

/// Restores a gray level from a 5-bit digest by appending `100`.
#[inline]
pub fn msb5_decode(bits: u8) -> u8 {
    ((bits & 0x1f) << 3) | 0b100
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn single_block(f: impl Fn(usize, usize) -> u8) -> GrayImage {
        GrayImage::from_fn(16, 16, f)
    }

    #[test]
    fn std_of_simple_blocks() {
        let grid = BlockGrid { blocks_w: 1, blocks_h: 1 };
        assert_eq!(block_std(&single_block(|_, _| 77), &grid), vec![0.0]);
        let half = single_block(|x, _| if x < 8 { 0 } else { 255 });
        assert_eq!(block_std(&half, &grid), vec![127.5]);
        let checker = single_block(|x, y| if (x + y) % 2 == 0 { 0 } else { 255 });
        assert_eq!(block_std(&checker, &grid), vec![127.5]);
    }

    #[test]
    fn normalize_cases() {
        assert_eq!(normalize(&[10.0, 20.0, 30.0]).unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(normalize(&[4.0, 4.0]).unwrap(), vec![0.0, 0.0]);
        assert!(normalize(&[]).is_err());
    }

    #[test]
    fn categorize_intervals() {
        assert_eq!(categorize(0.05, 0.1, 0.3).unwrap(), BlockType::Smooth);
        assert_eq!(categorize(0.1, 0.1, 0.3).unwrap(), BlockType::Normal);
        assert_eq!(categorize(0.3, 0.1, 0.3).unwrap(), BlockType::Rough);
        assert_eq!(categorize(1.0, 0.1, 0.3).unwrap(), BlockType::Rough);
        assert!(categorize(0.5, 0.3, 0.1).is_err());
        assert!(categorize(0.5, 0.0, 0.1).is_err());
    }

    #[test]
    fn subblock_partitions() {
        let c = single_block(|_, _| 93);
        for t in BlockType::ALL {
            assert!(subblock_averages(&c, 0, 0, t).iter().all(|&v| v == 93));
        }
        let quads = single_block(|x, y| [[10, 20], [30, 40]][y / 8][x / 8]);
        assert_eq!(subblock_averages(&quads, 0, 0, BlockType::Normal), vec![10, 20, 30, 40]);
        let left = single_block(|x, _| if x < 5 { 0 } else { 255 });
        assert_eq!(
            subblock_averages(&left, 0, 0, BlockType::Rough),
            vec![0, 255, 255, 0, 255, 255, 0, 255, 255]
        );
    }

    #[test]
    fn partitions_tile_the_block() {
        for t in BlockType::ALL {
            let mut cover = [[0u8; 16]; 16];
            for &(r0, r1) in t.partition() {
                for &(c0, c1) in t.partition() {
                    for row in &mut cover[r0..r1] {
                        for cell in &mut row[c0..c1] {
                            *cell += 1;
                        }
                    }
                }
            }
            assert!(cover.iter().flatten().all(|&n| n == 1), "{t:?}");
            assert_eq!(t.partition().len().pow(2), t.subblock_count());
        }
    }

    #[test]
    fn block_average_rounds_half_up() {
        assert_eq!(block_average(&single_block(|_, _| 77), 0, 0), 77);
        assert_eq!(block_average(&single_block(|_, y| (y >= 8) as u8), 0, 0), 1);
        assert_eq!(block_average(&single_block(|_, _| 255), 0, 0), 255);
    }

    #[test]
    fn msb5_tables() {
        assert_eq!(msb5_encode(255), 0b11111);
        assert_eq!(msb5_encode(130), 0b10000);
        assert_eq!(msb5_encode(0), 0);
        assert_eq!(msb5_decode(0b11111), 252);
        assert_eq!(msb5_decode(0), 4);
        assert_eq!(msb5_decode(0b10000), 132);
    }

    #[test]
    fn msb5_error_bound_exhaustive() {
        for v in 0..=255u8 {
            let back = msb5_decode(msb5_encode(v));
            assert!((back as i32 - v as i32).abs() <= 4, "{v} -> {back}");
        }
    }

    proptest! {
        #[test]
        fn normalize_is_bounded_and_monotone(values in proptest::collection::vec(0.0f64..200.0, 1..50)) {
            let n = normalize(&values).unwrap();
            for (i, a) in n.iter().enumerate() {
                prop_assert!((0.0..=1.0).contains(a));
                for (j, b) in n.iter().enumerate() {
                    if values[i] < values[j] {
                        prop_assert!(a <= b);
                    }
                }
            }
        }

        #[test]
        fn categorize_is_total(norm in 0.0f64..=1.0, th1 in 0.01f64..0.5, gap in 0.01f64..0.5) {
            let th2 = (th1 + gap).min(1.0);
            let t = categorize(norm, th1, th2).unwrap();
            let expected = if norm < th1 { BlockType::Smooth } else if norm < th2 { BlockType::Normal } else { BlockType::Rough };
            prop_assert_eq!(t, expected);
        }
    }
}
