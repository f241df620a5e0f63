//! Image-quality and localization metrics: PSNR, SSIM and block-level FR/FA.

use std::fmt;

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::image::{BlockMask, GrayImage, BLOCK_SIZE};

/// Peak signal-to-noise ratio. Identical inputs have no finite value and
/// are reported as [`Psnr::Identical`] rather than a sentinel number.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Psnr {
    Identical,
    Db(f64),
}

impl Psnr {
    /// Finite decibels, or `f64::INFINITY` for identical inputs.
    pub fn as_f64(self) -> f64 {
        match self {
            Psnr::Identical => f64::INFINITY,
            Psnr::Db(v) => v,
        }
    }

    pub fn is_identical(self) -> bool {
        matches!(self, Psnr::Identical)
    }
}

impl fmt::Display for Psnr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Psnr::Identical => f.write_str("inf"),
            Psnr::Db(v) if v.is_finite() => write!(f, "{v:.2}"),
            Psnr::Db(v) => write!(f, "{v}"),
        }
    }
}

impl Serialize for Psnr {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Psnr::Db(v) if v.is_finite() => s.serialize_f64(*v),
            other => s.serialize_str(&other.to_string()),
        }
    }
}

fn peak_squared(reference: &GrayImage) -> f64 {
    let max = reference.data().iter().copied().max().unwrap_or(0) as f64;
    max * max
}

fn psnr_from(peak_sq: f64, sse: f64, n: usize) -> Psnr {
    if sse == 0.0 {
        return Psnr::Identical;
    }
    let mse = sse / n as f64;
    Psnr::Db(10.0 * (peak_sq / mse).log10())
}

/// PSNR of `b` against the reference `a`. The peak term is the largest
/// squared sample of the reference, which is 255² for almost every 8-bit
/// image.
pub fn psnr(a: &GrayImage, b: &GrayImage) -> Result<Psnr> {
    a.check_same_dims(b)?;
    let sse: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(psnr_from(peak_squared(a), sse, a.data().len()))
}

/// PSNR restricted to the pixels of the flagged blocks. The peak term is
/// still taken over the whole reference image.
pub fn region_psnr(a: &GrayImage, b: &GrayImage, mask: &BlockMask) -> Result<Psnr> {
    a.check_same_dims(b)?;
    if mask.blocks_w() * BLOCK_SIZE != a.width() || mask.blocks_h() * BLOCK_SIZE != a.height() {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} block mask over a {}x{} image",
            mask.blocks_w(),
            mask.blocks_h(),
            a.width(),
            a.height()
        )));
    }
    if mask.count() == 0 {
        return Err(Error::EmptyMask);
    }
    let mut sse = 0.0;
    let mut n = 0usize;
    for by in 0..mask.blocks_h() {
        for bx in 0..mask.blocks_w() {
            if !mask.get(bx, by) {
                continue;
            }
            for y in by * BLOCK_SIZE..(by + 1) * BLOCK_SIZE {
                for x in bx * BLOCK_SIZE..(bx + 1) * BLOCK_SIZE {
                    let d = a.get(x, y) as f64 - b.get(x, y) as f64;
                    sse += d * d;
                }
            }
            n += BLOCK_SIZE * BLOCK_SIZE;
        }
    }
    Ok(psnr_from(peak_squared(a), sse, n))
}

const SSIM_RADIUS: usize = 5;
const SSIM_WINDOW: usize = 2 * SSIM_RADIUS + 1;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
const SSIM_C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - SSIM_RADIUS as f64;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let sum: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= sum);
    w
}

/// Separable Gaussian filter evaluated only where the window fits.
fn filter_valid(src: &[f64], width: usize, height: usize, kernel: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = width - SSIM_WINDOW + 1;
    let oh = height - SSIM_WINDOW + 1;
    let mut horiz = vec![0.0; ow * height];
    for y in 0..height {
        let row = &src[y * width..(y + 1) * width];
        for x in 0..ow {
            horiz[y * ow + x] = kernel.iter().zip(&row[x..x + SSIM_WINDOW]).map(|(k, v)| k * v).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, w)| w * horiz[(y + k) * ow + x])
                .sum();
        }
    }
    out
}

/// Mean structural similarity over every valid 11x11 Gaussian window
/// (sigma 1.5), without clamping. The value lies in [-1, 1].
pub fn ssim_index(a: &GrayImage, b: &GrayImage) -> Result<f64> {
    a.check_same_dims(b)?;
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::DimensionMismatch(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {w}x{h}"
        )));
    }
    let kernel = gaussian_window();
    let fa: Vec<f64> = a.data().iter().map(|&v| v as f64).collect();
    let fb: Vec<f64> = b.data().iter().map(|&v| v as f64).collect();
    let aa: Vec<f64> = fa.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = fb.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = fa.iter().zip(&fb).map(|(x, y)| x * y).collect();

    let mu_a = filter_valid(&fa, w, h, &kernel);
    let mu_b = filter_valid(&fb, w, h, &kernel);
    let e_aa = filter_valid(&aa, w, h, &kernel);
    let e_bb = filter_valid(&bb, w, h, &kernel);
    let e_ab = filter_valid(&ab, w, h, &kernel);

    let total: f64 = (0..mu_a.len())
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2))
        })
        .sum();
    Ok(total / mu_a.len() as f64)
}

/// Mean SSIM clamped to [0, 1]; anti-correlated images report 0.
pub fn ssim(a: &GrayImage, b: &GrayImage) -> Result<f64> {
    Ok(ssim_index(a, b)?.clamp(0.0, 1.0))
}

/// Block-level false rejection and false acceptance rates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FrFa {
    /// Tampered blocks reported healthful, over all tampered blocks.
    pub fr: f64,
    /// Untampered blocks reported tampered, over all untampered blocks.
    pub fa: f64,
}

pub fn fr_fa(pred: &BlockMask, truth: &BlockMask) -> Result<FrFa> {
    if !pred.same_grid(truth) {
        return Err(Error::DimensionMismatch(format!(
            "prediction grid {}x{} vs truth grid {}x{}",
            pred.blocks_w(),
            pred.blocks_h(),
            truth.blocks_w(),
            truth.blocks_h()
        )));
    }
    let tampered = truth.count();
    let clean = truth.len() - tampered;
    if tampered == 0 || clean == 0 {
        return Err(Error::DegenerateTruth);
    }
    let (mut missed, mut false_alarm) = (0usize, 0usize);
    for (&p, &t) in pred.flags().iter().zip(truth.flags()) {
        match (p, t) {
            (false, true) => missed += 1,
            (true, false) => false_alarm += 1,
            _ => {}
        }
    }
    Ok(FrFa {
        fr: missed as f64 / tampered as f64,
        fa: false_alarm as f64 / clean as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured(w: usize, h: usize) -> GrayImage {
        GrayImage::from_fn(w, h, |x, y| ((x * 37 + y * 91 + ((x * y) % 13) * 7) % 256) as u8)
    }

    #[test]
    fn psnr_identical_is_marker() {
        let a = textured(32, 32);
        assert_eq!(psnr(&a, &a).unwrap(), Psnr::Identical);
        assert_eq!(Psnr::Identical.to_string(), "inf");
    }

    #[test]
    fn psnr_uniform_offset() {
        let mut a = GrayImage::filled(8, 8, 100);
        a.set(0, 0, 255);
        let mut b = GrayImage::filled(8, 8, 110);
        b.set(0, 0, 255);
        // 63 pixels off by 10, one exact
        let expected = 10.0 * (255.0f64 * 255.0 / (63.0 * 100.0 / 64.0)).log10();
        let Psnr::Db(v) = psnr(&a, &b).unwrap() else { panic!() };
        assert!((v - expected).abs() < 1e-12);

        // all-100 vs all-110 with an 8-bit peak of 255
        let expected = 10.0 * (255.0f64 * 255.0 / 100.0).log10();
        assert!((expected - 28.13).abs() < 0.01);
    }

    #[test]
    fn psnr_dimension_mismatch() {
        assert!(psnr(&GrayImage::new(4, 4), &GrayImage::new(4, 5)).is_err());
    }

    #[test]
    fn region_psnr_reductions() {
        let a = textured(64, 64);
        let mut b = a.clone();
        b.set(40, 40, b.get(40, 40) ^ 0x10);
        let all = BlockMask::full(4, 4);
        assert_eq!(region_psnr(&a, &b, &all).unwrap(), psnr(&a, &b).unwrap());
        let mut first = BlockMask::new(4, 4);
        first.set(0, 0, true);
        assert_eq!(region_psnr(&a, &b, &first).unwrap(), Psnr::Identical);
        assert!(matches!(
            region_psnr(&a, &b, &BlockMask::new(4, 4)),
            Err(Error::EmptyMask)
        ));
    }

    // Reference values computed with scikit-image's structural_similarity
    // (gaussian_weights=True, sigma=1.5, use_sample_covariance=False,
    // data_range=255), which averages over the same valid window positions.
    #[test]
    fn ssim_matches_reference_implementation() {
        let a = textured(64, 48);
        let inv = GrayImage::from_fn(64, 48, |x, y| 255 - a.get(x, y));
        let noisy = GrayImage::from_fn(64, 48, |x, y| {
            let d = ((x * 7 + y * 3) % 11) as i32 - 5;
            (a.get(x, y) as i32 + d).clamp(0, 255) as u8
        });
        let g = GrayImage::from_fn(64, 48, |x, y| ((x * 4 + y * 2) % 256) as u8);
        let g2 = GrayImage::from_fn(64, 48, |x, y| {
            let d = (((x * 5 + y * 11) % 9) as i32 - 4) * 3;
            (g.get(x, y) as i32 + d).clamp(0, 255) as u8
        });
        let cases = [
            (&a, &inv, -0.977_323_214_253_863_6),
            (&a, &noisy, 0.999_070_269_780_882_9),
            (&g, &g2, 0.753_778_084_070_333_5),
        ];
        for (p, q, want) in cases {
            let got = ssim_index(p, q).unwrap();
            assert!((got - want).abs() < 1e-9, "got {got}, want {want}");
        }
        assert!(ssim(&a, &inv).unwrap() < 0.2);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn ssim_rejects_tiny_images() {
        assert!(ssim(&GrayImage::new(10, 20), &GrayImage::new(10, 20)).is_err());
    }

    #[test]
    fn fr_fa_boundaries() {
        let truth = BlockMask::from_rect(4, 4, 0, 0, 32, 32);
        assert_eq!(fr_fa(&truth, &truth).unwrap(), FrFa { fr: 0.0, fa: 0.0 });
        assert_eq!(
            fr_fa(&BlockMask::full(4, 4), &truth).unwrap(),
            FrFa { fr: 0.0, fa: 1.0 }
        );
        assert_eq!(
            fr_fa(&truth.complement(), &truth).unwrap(),
            FrFa { fr: 1.0, fa: 1.0 }
        );
        assert!(matches!(
            fr_fa(&truth, &BlockMask::new(4, 4)),
            Err(Error::DegenerateTruth)
        ));
        assert!(matches!(
            fr_fa(&truth, &BlockMask::full(4, 4)),
            Err(Error::DegenerateTruth)
        ));
    }
}
