//! 8-bit grayscale rasters, per-block boolean masks and binary PGM (P5) I/O.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Side length of the authentication block, in pixels.
pub const BLOCK_SIZE: usize = 16;

/// Both image dimensions must be a multiple of this for the watermarking
/// pipelines: 16-pixel blocks, split twice into halves by the area layout.
pub const DIM_MULTIPLE: usize = 64;

/// Single-channel 8-bit image stored row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0)
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        GrayImage {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} samples for a {width}x{height} image",
                data.len()
            )));
        }
        Ok(GrayImage {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        GrayImage {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }

    pub fn same_dims(&self, other: &GrayImage) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub(crate) fn check_same_dims(&self, other: &GrayImage) -> Result<()> {
        if self.same_dims(other) {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )))
        }
    }

    /// Fails unless both dimensions are multiples of [`DIM_MULTIPLE`].
    pub fn check_watermarkable(&self) -> Result<()> {
        if self.width == 0
            || self.height == 0
            || !self.width.is_multiple_of(DIM_MULTIPLE)
            || !self.height.is_multiple_of(DIM_MULTIPLE)
        {
            return Err(Error::Divisibility {
                width: self.width,
                height: self.height,
                multiple: DIM_MULTIPLE,
            });
        }
        Ok(())
    }

    /// Copies the 16x16 block at block coordinates `(bx, by)` as integers.
    pub fn read_block(&self, bx: usize, by: usize) -> [[i32; BLOCK_SIZE]; BLOCK_SIZE] {
        let mut out = [[0i32; BLOCK_SIZE]; BLOCK_SIZE];
        let x0 = bx * BLOCK_SIZE;
        let y0 = by * BLOCK_SIZE;
        for (r, row) in out.iter_mut().enumerate() {
            let start = (y0 + r) * self.width + x0;
            for (c, v) in row.iter_mut().enumerate() {
                *v = self.data[start + c] as i32;
            }
        }
        out
    }

    pub fn write_block(&mut self, bx: usize, by: usize, block: &[[u8; BLOCK_SIZE]; BLOCK_SIZE]) {
        let x0 = bx * BLOCK_SIZE;
        let y0 = by * BLOCK_SIZE;
        for (r, row) in block.iter().enumerate() {
            let start = (y0 + r) * self.width + x0;
            self.data[start..start + BLOCK_SIZE].copy_from_slice(row);
        }
    }
}

/// One flag per 16x16 block, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockMask {
    blocks_w: usize,
    blocks_h: usize,
    flags: Vec<bool>,
}

impl BlockMask {
    pub fn new(blocks_w: usize, blocks_h: usize) -> Self {
        BlockMask {
            blocks_w,
            blocks_h,
            flags: vec![false; blocks_w * blocks_h],
        }
    }

    pub fn full(blocks_w: usize, blocks_h: usize) -> Self {
        BlockMask {
            blocks_w,
            blocks_h,
            flags: vec![true; blocks_w * blocks_h],
        }
    }

    pub fn for_image(img: &GrayImage) -> Self {
        Self::new(img.width() / BLOCK_SIZE, img.height() / BLOCK_SIZE)
    }

    pub fn from_flags(blocks_w: usize, blocks_h: usize, flags: Vec<bool>) -> Result<Self> {
        if flags.len() != blocks_w * blocks_h {
            return Err(Error::DimensionMismatch(format!(
                "{} flags for a {blocks_w}x{blocks_h} block grid",
                flags.len()
            )));
        }
        Ok(BlockMask {
            blocks_w,
            blocks_h,
            flags,
        })
    }

    /// Marks every block overlapped by the pixel rectangle.
    pub fn from_rect(blocks_w: usize, blocks_h: usize, x: usize, y: usize, w: usize, h: usize) -> Self {
        let mut mask = Self::new(blocks_w, blocks_h);
        if w == 0 || h == 0 {
            return mask;
        }
        let bx1 = ((x + w - 1) / BLOCK_SIZE).min(blocks_w.saturating_sub(1));
        let by1 = ((y + h - 1) / BLOCK_SIZE).min(blocks_h.saturating_sub(1));
        for by in y / BLOCK_SIZE..=by1 {
            for bx in x / BLOCK_SIZE..=bx1 {
                mask.set(bx, by, true);
            }
        }
        mask
    }

    #[inline]
    pub fn blocks_w(&self) -> usize {
        self.blocks_w
    }

    #[inline]
    pub fn blocks_h(&self) -> usize {
        self.blocks_h
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.flags.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    #[inline]
    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    #[inline]
    pub fn get(&self, bx: usize, by: usize) -> bool {
        self.flags[by * self.blocks_w + bx]
    }

    #[inline]
    pub fn set(&mut self, bx: usize, by: usize, v: bool) {
        self.flags[by * self.blocks_w + bx] = v;
    }

    #[inline]
    pub fn is_set(&self, index: usize) -> bool {
        self.flags[index]
    }

    pub fn count(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }

    pub fn complement(&self) -> Self {
        BlockMask {
            blocks_w: self.blocks_w,
            blocks_h: self.blocks_h,
            flags: self.flags.iter().map(|f| !f).collect(),
        }
    }

    pub fn union(&self, other: &BlockMask) -> Self {
        BlockMask {
            blocks_w: self.blocks_w,
            blocks_h: self.blocks_h,
            flags: self
                .flags
                .iter()
                .zip(&other.flags)
                .map(|(a, b)| *a || *b)
                .collect(),
        }
    }

    pub fn same_grid(&self, other: &BlockMask) -> bool {
        self.blocks_w == other.blocks_w && self.blocks_h == other.blocks_h
    }

    /// Paints each block as a 16x16 patch: 255 when set, 0 otherwise.
    pub fn to_image(&self) -> GrayImage {
        GrayImage::from_fn(self.blocks_w * BLOCK_SIZE, self.blocks_h * BLOCK_SIZE, |x, y| {
            if self.get(x / BLOCK_SIZE, y / BLOCK_SIZE) {
                255
            } else {
                0
            }
        })
    }

    /// Reads a mask written either at block resolution or at pixel
    /// resolution (one 16x16 patch per block, sampled at the patch centre).
    /// Samples above 128 count as set.
    pub fn from_image(img: &GrayImage, blocks_w: usize, blocks_h: usize) -> Result<Self> {
        let mut mask = Self::new(blocks_w, blocks_h);
        let (step, offset) = if img.width() == blocks_w && img.height() == blocks_h {
            (1, 0)
        } else if img.width() == blocks_w * BLOCK_SIZE && img.height() == blocks_h * BLOCK_SIZE {
            (BLOCK_SIZE, BLOCK_SIZE / 2)
        } else {
            return Err(Error::DimensionMismatch(format!(
                "mask image {}x{} fits neither a {blocks_w}x{blocks_h} block grid nor its pixel raster",
                img.width(),
                img.height()
            )));
        };
        for by in 0..blocks_h {
            for bx in 0..blocks_w {
                mask.set(bx, by, img.get(bx * step + offset, by * step + offset) > 128);
            }
        }
        Ok(mask)
    }
}

fn parse_header(bytes: &[u8]) -> Result<(usize, usize, usize, usize)> {
    if bytes.len() < 2 {
        return Err(Error::Pgm("file too short".into()));
    }
    if &bytes[..2] != b"P5" {
        return Err(Error::Pgm(format!(
            "unsupported magic {:?}",
            String::from_utf8_lossy(&bytes[..2])
        )));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while let Some(&b) = bytes.get(pos) {
                        pos += 1;
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                Some(_) => break,
                None => return Err(Error::Pgm("truncated header".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Pgm(format!("expected a number at byte {start}")));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Pgm("header number out of range".into()))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::Pgm("missing whitespace after maxval".into())),
    }
    Ok((fields[0], fields[1], fields[2], pos))
}

/// Parses a binary P5 graymap with maxval 255.
pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let (width, height, maxval, offset) = parse_header(bytes)?;
    if maxval != 255 {
        return Err(Error::Pgm(format!("unsupported maxval {maxval}, expected 255")));
    }
    let n = width
        .checked_mul(height)
        .ok_or_else(|| Error::Pgm("dimensions overflow".into()))?;
    let payload = &bytes[offset..];
    if payload.len() < n {
        return Err(Error::Pgm(format!(
            "truncated payload: {} of {n} bytes",
            payload.len()
        )));
    }
    GrayImage::from_vec(width, height, payload[..n].to_vec())
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.data());
    out
}

pub fn load_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::from(e).context(path.display().to_string()))?;
    decode_pgm(&bytes).map_err(|e| e.context(path.display().to_string()))
}

pub fn save_pgm(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::from(e).context(path.display().to_string()))?;
    f.write_all(&encode_pgm(img))?;
    Ok(())
}
