//! Reproducible attacks: the lossy stage of baseline JPEG, copy-move and
//! region erase.

use std::f64::consts::PI;
use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{BlockMask, GrayImage, BLOCK_SIZE};

/// Axis-aligned pixel rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    pub fn new(x: usize, y: usize, w: usize, h: usize) -> Self {
        Rect { x, y, w, h }
    }

    pub fn check_inside(&self, img: &GrayImage) -> Result<()> {
        if self.x + self.w > img.width() || self.y + self.h > img.height() {
            return Err(Error::OutOfBounds(format!(
                "{}x{} at ({}, {}) exceeds {}x{} image",
                self.w,
                self.h,
                self.x,
                self.y,
                img.width(),
                img.height()
            )));
        }
        Ok(())
    }

    /// Block mask marking every 16x16 block the rectangle overlaps.
    pub fn block_mask(&self, img: &GrayImage) -> BlockMask {
        BlockMask::from_rect(
            img.width() / BLOCK_SIZE,
            img.height() / BLOCK_SIZE,
            self.x,
            self.y,
            self.w,
            self.h,
        )
    }
}

/// Luminance quantization table from the informative annex of the JPEG
/// standard, row-major.
pub const LUMA_QUANT: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

/// Quantization table for a quality factor in `1..=100`.
pub fn quant_table(qf: u8) -> Result<[u16; 64]> {
    if !(1..=100).contains(&qf) {
        return Err(Error::InvalidArgument(format!("JPEG quality {qf} outside 1..=100")));
    }
    let qf = qf as u32;
    let scale = if qf < 50 { 5000 / qf } else { 200 - 2 * qf };
    let mut out = [0u16; 64];
    for (o, &q) in out.iter_mut().zip(LUMA_QUANT.iter()) {
        *o = ((q as u32 * scale + 50) / 100).clamp(1, 255) as u16;
    }
    Ok(out)
}

/// Orthonormal DCT-II basis, `basis[u][x]`.
fn dct_basis() -> &'static [[f64; 8]; 8] {
    static BASIS: OnceLock<[[f64; 8]; 8]> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut b = [[0.0; 8]; 8];
        for (u, row) in b.iter_mut().enumerate() {
            let c = if u == 0 { (1.0f64 / 8.0).sqrt() } else { (2.0f64 / 8.0).sqrt() };
            for (x, v) in row.iter_mut().enumerate() {
                *v = c * ((2 * x + 1) as f64 * u as f64 * PI / 16.0).cos();
            }
        }
        b
    })
}

fn jpeg_block(px: &[[f64; 8]; 8], table: &[u16; 64]) -> [[u8; 8]; 8] {
    let b = dct_basis();
    // rows then columns
    let mut tmp = [[0.0; 8]; 8];
    for y in 0..8 {
        for u in 0..8 {
            tmp[y][u] = (0..8).map(|x| b[u][x] * (px[y][x] - 128.0)).sum();
        }
    }
    let mut coef = [[0.0; 8]; 8];
    for v in 0..8 {
        for u in 0..8 {
            let c: f64 = (0..8).map(|y| b[v][y] * tmp[y][u]).sum();
            let q = table[v * 8 + u] as f64;
            coef[v][u] = (c / q).round() * q;
        }
    }
    for y in 0..8 {
        for u in 0..8 {
            tmp[y][u] = (0..8).map(|v| b[v][y] * coef[v][u]).sum();
        }
    }
    let mut out = [[0u8; 8]; 8];
    for y in 0..8 {
        for x in 0..8 {
            let s: f64 = (0..8).map(|u| b[u][x] * tmp[y][u]).sum();
            out[y][x] = (s + 128.0).round().clamp(0.0, 255.0) as u8;
        }
    }
    out
}

/// Quantizes every 8x8 block in the DCT domain and decodes it back.
pub fn jpeg_attack(img: &GrayImage, qf: u8) -> Result<GrayImage> {
    let table = quant_table(qf)?;
    if !img.width().is_multiple_of(8) || !img.height().is_multiple_of(8) {
        return Err(Error::Divisibility {
            width: img.width(),
            height: img.height(),
            multiple: 8,
        });
    }
    let bw = img.width() / 8;
    let blocks: Vec<[[u8; 8]; 8]> = (0..bw * (img.height() / 8))
        .into_par_iter()
        .map(|i| {
            let (x0, y0) = ((i % bw) * 8, (i / bw) * 8);
            let mut px = [[0.0; 8]; 8];
            for (y, row) in px.iter_mut().enumerate() {
                for (x, v) in row.iter_mut().enumerate() {
                    *v = img.get(x0 + x, y0 + y) as f64;
                }
            }
            jpeg_block(&px, &table)
        })
        .collect();
    let mut out = img.clone();
    for (i, blk) in blocks.iter().enumerate() {
        let (x0, y0) = ((i % bw) * 8, (i / bw) * 8);
        for (y, row) in blk.iter().enumerate() {
            for (x, &v) in row.iter().enumerate() {
                out.set(x0 + x, y0 + y, v);
            }
        }
    }
    Ok(out)
}

/// Pastes the `src` region over `dst`. The source is read in full before
/// anything is written, so overlapping rectangles copy the original content.
pub fn copy_move(img: &GrayImage, src: Rect, dst: Rect) -> Result<GrayImage> {
    if (src.w, src.h) != (dst.w, dst.h) {
        return Err(Error::InvalidArgument(format!(
            "source {}x{} and destination {}x{} differ in size",
            src.w, src.h, dst.w, dst.h
        )));
    }
    src.check_inside(img)?;
    dst.check_inside(img)?;
    let patch: Vec<u8> = (0..src.h)
        .flat_map(|dy| (0..src.w).map(move |dx| (dx, dy)))
        .map(|(dx, dy)| img.get(src.x + dx, src.y + dy))
        .collect();
    let mut out = img.clone();
    for dy in 0..dst.h {
        for dx in 0..dst.w {
            out.set(dst.x + dx, dst.y + dy, patch[dy * src.w + dx]);
        }
    }
    Ok(out)
}

/// Fills `rect` with a constant gray level.
pub fn erase(img: &GrayImage, rect: Rect, value: u8) -> Result<GrayImage> {
    rect.check_inside(img)?;
    let mut out = img.clone();
    for y in rect.y..rect.y + rect.h {
        for x in rect.x..rect.x + rect.w {
            out.set(x, y, value);
        }
    }
    Ok(out)
}
