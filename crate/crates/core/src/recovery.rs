//! Self-recovery of tampered blocks from the digests stored in their chain
//! neighbours and far pairs, rendered through a Catmull-Rom cubic stage.
//!
//! Every block contributes a 3x3 patch of cells to one global value grid.
//! Cell `(i, j)` of a block sits at block-local pixel position
//! `((2i + 1) * 16 / 6, (2j + 1) * 16 / 6)`, the centre of its third.

use crate::error::{Error, Result};
use crate::image::{BlockMask, GrayImage, BLOCK_SIZE};
use crate::payload::parse_payload;
use crate::texture::{msb5_decode, region_averages, BlockType};
use crate::topology::Topology;

/// Cells per block side.
const CELLS: usize = 3;

/// Expands 1, 4 or 9 sub-block values to the 3x3 layout, row-major.
///
/// Smooth values are replicated; Normal corners keep the four values, edge
/// midpoints take the rounded mean of their two corners and the centre the
/// rounded mean of all four; Rough values pass through.
pub fn reform_to_3x3(values: &[u8], kind: BlockType) -> Result<[u8; 9]> {
    if values.len() != kind.subblock_count() {
        return Err(Error::InvalidArgument(format!(
            "{kind:?} block needs {} values, got {}",
            kind.subblock_count(),
            values.len()
        )));
    }
    let mean = |xs: &[u8]| -> u8 {
        let n = xs.len() as u32;
        let s: u32 = xs.iter().map(|&v| v as u32).sum();
        ((2 * s + n) / (2 * n)) as u8
    };
    Ok(match kind {
        BlockType::Smooth => [values[0]; 9],
        BlockType::Normal => {
            let (a, b, c, d) = (values[0], values[1], values[2], values[3]);
            [
                a,
                mean(&[a, b]),
                b,
                mean(&[a, c]),
                mean(&[a, b, c, d]),
                mean(&[b, d]),
                c,
                mean(&[c, d]),
                d,
            ]
        }
        BlockType::Rough => {
            let mut out = [0u8; 9];
            out.copy_from_slice(values);
            out
        }
    })
}

/// Per-cell gray values over the whole image, with a missing flag.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ValueGrid {
    pub cols: usize,
    pub rows: usize,
    pub values: Vec<u8>,
    pub missing: Vec<bool>,
}

impl ValueGrid {
    pub fn new(blocks_w: usize, blocks_h: usize) -> Self {
        let (cols, rows) = (blocks_w * CELLS, blocks_h * CELLS);
        ValueGrid {
            cols,
            rows,
            values: vec![0; cols * rows],
            missing: vec![true; cols * rows],
        }
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> u8 {
        self.values[row * self.cols + col]
    }

    fn put_block(&mut self, bx: usize, by: usize, cells: &[u8; 9]) {
        for i in 0..CELLS {
            for j in 0..CELLS {
                let idx = (by * CELLS + i) * self.cols + bx * CELLS + j;
                self.values[idx] = cells[i * CELLS + j];
                self.missing[idx] = false;
            }
        }
    }

    pub fn missing_count(&self) -> usize {
        self.missing.iter().filter(|&&m| m).count()
    }

    /// Repeatedly sets each missing cell with at least one known 4-neighbour
    /// to the rounded mean of its known neighbours.
    pub fn fill_gaps(&mut self) -> Result<()> {
        if self.missing.iter().all(|&m| m) {
            return Err(Error::InvalidArgument(
                "no recoverable content: every cell is missing".into(),
            ));
        }
        while self.missing_count() > 0 {
            let mut updates = Vec::new();
            for r in 0..self.rows {
                for c in 0..self.cols {
                    let idx = r * self.cols + c;
                    if !self.missing[idx] {
                        continue;
                    }
                    let mut sum = 0u32;
                    let mut n = 0u32;
                    let mut visit = |rr: usize, cc: usize| {
                        let j = rr * self.cols + cc;
                        if !self.missing[j] {
                            sum += self.values[j] as u32;
                            n += 1;
                        }
                    };
                    if r > 0 {
                        visit(r - 1, c);
                    }
                    if r + 1 < self.rows {
                        visit(r + 1, c);
                    }
                    if c > 0 {
                        visit(r, c - 1);
                    }
                    if c + 1 < self.cols {
                        visit(r, c + 1);
                    }
                    if n > 0 {
                        updates.push((idx, ((2 * sum + n) / (2 * n)) as u8));
                    }
                }
            }
            for (idx, v) in updates {
                self.values[idx] = v;
                self.missing[idx] = false;
            }
        }
        Ok(())
    }
}

/// Where a tampered block's cells came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CellSource {
    Measured,
    PairDigest,
    DependentDigest,
    Diffused,
}

/// Builds the value grid. Blocks outside `tampered` contribute measured
/// thirds-averages of `img`; tampered blocks are rebuilt from digests
/// stored in blocks flagged in `trusted`:
///
/// * Normal/Rough: the pair's recovery digests, reformed to 3x3;
/// * otherwise, and for Smooth blocks: the whole-block digest held by the
///   previous chain block, then by the next one, replicated;
/// * otherwise the cells stay missing and are filled by diffusion.
pub fn recovery_grid_from(
    img: &GrayImage,
    tampered: &BlockMask,
    trusted: &BlockMask,
    types: &[BlockType],
    topology: &Topology,
    extracted: &[u64],
) -> Result<(ValueGrid, Vec<CellSource>)> {
    let grid = topology.grid;
    if tampered.blocks_w() != grid.blocks_w || tampered.blocks_h() != grid.blocks_h || !tampered.same_grid(trusted) {
        return Err(Error::DimensionMismatch("mask does not match the block grid".into()));
    }
    let thirds = BlockType::Rough.partition();
    let mut values = ValueGrid::new(grid.blocks_w, grid.blocks_h);
    let mut sources = vec![CellSource::Measured; grid.len()];
    for b in 0..grid.len() {
        let (bx, by) = grid.coords(b);
        if !tampered.is_set(b) {
            let cells = region_averages(img, bx, by, thirds);
            values.put_block(bx, by, &cells.try_into().expect("nine thirds"));
            continue;
        }
        let kind = types[b];
        let from_pair = match (kind, topology.pair(b)) {
            (BlockType::Smooth, _) | (_, None) => None,
            (_, Some(p)) if trusted.is_set(p) => {
                let digests = parse_payload(extracted[p], kind).recovery;
                let decoded: Vec<u8> = digests.into_iter().map(msb5_decode).collect();
                Some(reform_to_3x3(&decoded, kind)?)
            }
            _ => None,
        };
        if let Some(cells) = from_pair {
            values.put_block(bx, by, &cells);
            sources[b] = CellSource::PairDigest;
            continue;
        }
        let prev = topology.prev(b);
        let next = topology.next(b);
        let digest = if trusted.is_set(prev) {
            Some(parse_payload(extracted[prev], BlockType::Smooth).dep_next)
        } else if trusted.is_set(next) {
            Some(parse_payload(extracted[next], BlockType::Smooth).dep_prev)
        } else {
            None
        };
        match digest {
            Some(d) => {
                values.put_block(bx, by, &[msb5_decode(d); 9]);
                sources[b] = CellSource::DependentDigest;
            }
            None => sources[b] = CellSource::Diffused,
        }
    }
    values.fill_gaps()?;
    Ok((values, sources))
}

/// Value grid for a tamper mask; every untampered block is a trusted source.
pub fn recovery_grid(
    img: &GrayImage,
    mask: &BlockMask,
    types: &[BlockType],
    topology: &Topology,
    extracted: &[u64],
) -> Result<ValueGrid> {
    recovery_grid_from(img, mask, &mask.complement(), types, topology, extracted).map(|(g, _)| g)
}

/// Keys cubic convolution kernel with `a = -1/2` (Catmull-Rom).
fn catmull_rom(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        (A + 2.0) * x * x * x - (A + 3.0) * x * x + 1.0
    } else if x < 2.0 {
        A * x * x * x - 5.0 * A * x * x + 8.0 * A * x - 4.0 * A
    } else {
        0.0
    }
}

/// Cell-space coordinate of pixel `p` along one axis.
#[inline]
fn cell_coord(p: usize) -> f64 {
    (p as f64 + 0.5) * CELLS as f64 / BLOCK_SIZE as f64 - 0.5
}

fn taps(u: f64, len: usize) -> [(usize, f64); 4] {
    let base = u.floor();
    let t = u - base;
    let mut out = [(0usize, 0.0); 4];
    for (k, o) in out.iter_mut().enumerate() {
        let offset = k as i64 - 1;
        let idx = (base as i64 + offset).clamp(0, len as i64 - 1) as usize;
        *o = (idx, catmull_rom(t - offset as f64));
    }
    out
}

/// Unrounded cubic sample at cell coordinates `(u, v)` (column, row), with
/// clamp-to-edge outside the grid.
pub fn sample(grid: &ValueGrid, u: f64, v: f64) -> f64 {
    let tx = taps(u, grid.cols);
    let ty = taps(v, grid.rows);
    ty.iter()
        .map(|&(row, wy)| wy * tx.iter().map(|&(col, wx)| wx * grid.get(col, row) as f64).sum::<f64>())
        .sum()
}

/// Renders a full-resolution image from a filled value grid.
pub fn bicubic_reconstruct(grid: &ValueGrid, width: usize, height: usize) -> GrayImage {
    let us: Vec<f64> = (0..width).map(cell_coord).collect();
    GrayImage::from_fn(width, height, |x, y| {
        sample(grid, us[x], cell_coord(y)).round().clamp(0.0, 255.0) as u8
    })
}

/// Copies `estimate` into the tampered blocks of `img`.
pub fn recover(img: &GrayImage, mask: &BlockMask, estimate: &GrayImage) -> Result<GrayImage> {
    img.check_same_dims(estimate)?;
    if mask.blocks_w() * BLOCK_SIZE != img.width() || mask.blocks_h() * BLOCK_SIZE != img.height() {
        return Err(Error::DimensionMismatch("mask does not cover the image".into()));
    }
    let mut out = img.clone();
    for by in 0..mask.blocks_h() {
        for bx in 0..mask.blocks_w() {
            if !mask.get(bx, by) {
                continue;
            }
            for y in by * BLOCK_SIZE..(by + 1) * BLOCK_SIZE {
                for x in bx * BLOCK_SIZE..(bx + 1) * BLOCK_SIZE {
                    out.set(x, y, estimate.get(x, y));
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::Keystream;
    use proptest::prelude::*;

    #[test]
    fn reform_rules() {
        assert_eq!(reform_to_3x3(&[50], BlockType::Smooth).unwrap(), [50; 9]);
        assert_eq!(
            reform_to_3x3(&[10, 20, 30, 40], BlockType::Normal).unwrap(),
            [10, 15, 20, 20, 25, 30, 30, 35, 40]
        );
        let nine = [1, 2, 3, 4, 5, 6, 7, 8, 9];
        assert_eq!(reform_to_3x3(&nine, BlockType::Rough).unwrap(), nine);
        assert!(reform_to_3x3(&[1, 2], BlockType::Normal).is_err());
    }

    #[test]
    fn kernel_partition_of_unity() {
        for k in 0..100 {
            let t = k as f64 / 100.0;
            let s: f64 = (-1..=2).map(|o| catmull_rom(t - o as f64)).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn anchors_sit_at_third_centres() {
        // pixel centre p + 0.5 == (2i + 1) * 16 / 6  <=>  cell coordinate i
        for i in 0..3 {
            let centre = (2 * i + 1) as f64 * 16.0 / 6.0;
            let u = centre * 3.0 / 16.0 - 0.5;
            assert!((u - i as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_grid_gives_constant_image() {
        let mut g = ValueGrid::new(2, 2);
        g.values.fill(117);
        g.missing.fill(false);
        let img = bicubic_reconstruct(&g, 32, 32);
        assert!(img.data().iter().all(|&v| v == 117));
    }

    #[test]
    fn linear_grid_is_reproduced_in_the_interior() {
        let mut g = ValueGrid::new(4, 4);
        for r in 0..g.rows {
            for c in 0..g.cols {
                g.values[r * g.cols + c] = (10 + 7 * c) as u8;
            }
        }
        g.missing.fill(false);
        for k in 0..=80 {
            let u = 1.0 + k as f64 * (g.cols as f64 - 3.0) / 80.0;
            let want = 10.0 + 7.0 * u;
            assert!((sample(&g, u, 4.3) - want).abs() < 1e-9);
        }
    }

    // With weights summing to one, the excursion above the maximum is at
    // most the total negative weight times the range. For Catmull-Rom the
    // 1-D absolute weight sum peaks at t = 1/2 with 1.25, so the 2-D
    // negative mass is at most (1.25^2 - 1) / 2 = 0.28125.
    #[test]
    fn overshoot_is_bounded() {
        let mut ks = Keystream::new(2024);
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let mut g = ValueGrid::new(1, 1);
            for v in g.values.iter_mut() {
                *v = (ks.next_u64() % 256) as u8;
            }
            g.missing.fill(false);
            let lo = *g.values.iter().min().unwrap() as f64;
            let hi = *g.values.iter().max().unwrap() as f64;
            let delta = 0.28125 * (hi - lo);
            for y in 0..16 {
                for x in 0..16 {
                    let s = sample(&g, cell_coord(x), cell_coord(y));
                    assert!(s >= lo - delta - 1e-9 && s <= hi + delta + 1e-9);
                    worst = worst.max((s - hi).max(lo - s) / (hi - lo).max(1.0));
                }
            }
        }
        assert!(worst < 0.28125);
    }

    #[test]
    fn gap_filling_terminates() {
        let mut g = ValueGrid::new(2, 2);
        g.values[0] = 200;
        g.missing[0] = false;
        g.fill_gaps().unwrap();
        assert_eq!(g.missing_count(), 0);
        assert!(g.values.iter().all(|&v| v == 200));
        let mut empty = ValueGrid::new(1, 1);
        assert!(empty.fill_gaps().is_err());
    }

    #[test]
    fn recover_only_touches_masked_blocks() {
        let img = GrayImage::from_fn(64, 64, |x, y| (x * 3 + y) as u8);
        let est = GrayImage::filled(64, 64, 9);
        assert_eq!(recover(&img, &BlockMask::new(4, 4), &est).unwrap(), img);
        assert_eq!(recover(&img, &BlockMask::full(4, 4), &est).unwrap(), est);
        let mut m = BlockMask::new(4, 4);
        m.set(1, 2, true);
        let out = recover(&img, &m, &est).unwrap();
        for y in 0..64 {
            for x in 0..64 {
                let inside = x / 16 == 1 && y / 16 == 2;
                assert_eq!(out.get(x, y), if inside { 9 } else { img.get(x, y) });
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]
        #[test]
        fn recover_is_local(flags in proptest::collection::vec(any::<bool>(), 16), fill in any::<u8>()) {
            let img = GrayImage::from_fn(64, 64, |x, y| (x * 5 + y * 9) as u8);
            let est = GrayImage::filled(64, 64, fill);
            let mask = BlockMask::from_flags(4, 4, flags).unwrap();
            let out = recover(&img, &mask, &est).unwrap();
            for y in 0..64 {
                for x in 0..64 {
                    let want = if mask.get(x / 16, y / 16) { fill } else { img.get(x, y) };
                    prop_assert_eq!(out.get(x, y), want);
                }
            }
        }

        #[test]
        fn gap_fill_stays_within_known_range(
            known in proptest::collection::vec(proptest::option::of(any::<u8>()), 36),
        ) {
            prop_assume!(known.iter().any(Option::is_some));
            let mut g = ValueGrid::new(2, 2);
            for (i, k) in known.iter().enumerate() {
                if let Some(v) = k {
                    g.values[i] = *v;
                    g.missing[i] = false;
                }
            }
            let lo = known.iter().flatten().min().copied().unwrap();
            let hi = known.iter().flatten().max().copied().unwrap();
            g.fill_gaps().unwrap();
            prop_assert_eq!(g.missing_count(), 0);
            for (i, k) in known.iter().enumerate() {
                match k {
                    Some(v) => prop_assert_eq!(g.values[i], *v),
                    None => prop_assert!(g.values[i] >= lo && g.values[i] <= hi),
                }
            }
        }

        #[test]
        fn reformed_normal_stays_within_corners(v in proptest::array::uniform4(any::<u8>())) {
            let r = reform_to_3x3(&v, BlockType::Normal).unwrap();
            let (lo, hi) = (*v.iter().min().unwrap(), *v.iter().max().unwrap());
            prop_assert!(r.iter().all(|&x| x >= lo && x <= hi));
            prop_assert_eq!([r[0], r[2], r[6], r[8]], v);
        }
    }
}
