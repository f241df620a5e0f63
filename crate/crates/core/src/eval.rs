//! Experiment harness: embed, attack, detect, recover and score a corpus.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize};

use crate::attack::{copy_move, erase, jpeg_attack, Rect};
use crate::config::Config;
use crate::detect::{detect, Detection};
use crate::embed::{embed, EmbedReport};
use crate::error::{Error, Result};
use crate::image::{load_pgm, BlockMask, GrayImage};
use crate::metrics::{fr_fa, psnr, region_psnr, Psnr};
use crate::recovery::{bicubic_reconstruct, recover, recovery_grid, recovery_grid_from};
use crate::topology::{Keystream, SecretKey};

/// Content tampering applied before the optional JPEG stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Tamper {
    Erase { rect: Rect, value: u8 },
    CopyMove { src: Rect, dst: Rect },
    /// Square of side `size` at a key-derived position, different per image.
    RandomErase { size: usize, value: u8 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attack {
    pub name: String,
    #[serde(default)]
    pub tamper: Option<Tamper>,
    #[serde(default)]
    pub jpeg: Option<u8>,
}

fn de_key<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<SecretKey, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(u64),
        Text(String),
    }
    match Repr::deserialize(d)? {
        Repr::Num(v) => Ok(SecretKey(v)),
        Repr::Text(s) => SecretKey::parse(&s).ok_or_else(|| serde::de::Error::custom(format!("bad key {s:?}"))),
    }
}

/// Experiment description. Relative image paths resolve against the
/// directory of the spec file.
#[derive(Clone, Debug, Deserialize)]
pub struct ExperimentSpec {
    pub images: Vec<PathBuf>,
    #[serde(deserialize_with = "de_key")]
    pub key: SecretKey,
    #[serde(default)]
    pub config: Config,
    pub attacks: Vec<Attack>,
}

impl ExperimentSpec {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).context(path.display().to_string()))?;
        let mut spec: ExperimentSpec = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for img in spec.images.iter_mut() {
            if img.is_relative() {
                *img = base.join(&*img);
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if self.images.is_empty() || self.attacks.is_empty() {
            return Err(Error::InvalidConfig("experiment needs at least one image and one attack".into()));
        }
        for p in &self.images {
            if !p.is_file() {
                return Err(Error::InvalidConfig(format!("missing image {}", p.display())));
            }
        }
        for a in &self.attacks {
            if let Some(qf) = a.jpeg {
                if !(1..=100).contains(&qf) {
                    return Err(Error::InvalidConfig(format!("attack {}: JPEG quality {qf}", a.name)));
                }
            }
            if let Some(Tamper::RandomErase { size: 0, .. }) = a.tamper {
                return Err(Error::InvalidConfig(format!("attack {}: empty random erase", a.name)));
            }
        }
        Ok(())
    }
}

/// Applies an attack and returns the attacked image with its ground-truth
/// block mask. `salt` varies random placements between images.
pub fn apply_attack(img: &GrayImage, attack: &Attack, key: SecretKey, salt: u64) -> Result<(GrayImage, BlockMask)> {
    let mut truth = BlockMask::for_image(img);
    let mut out = match &attack.tamper {
        None => img.clone(),
        Some(Tamper::Erase { rect, value }) => {
            truth = rect.block_mask(img);
            erase(img, *rect, *value)?
        }
        Some(Tamper::CopyMove { src, dst }) => {
            truth = dst.block_mask(img);
            copy_move(img, *src, *dst)?
        }
        Some(Tamper::RandomErase { size, value }) => {
            if *size > img.width() || *size > img.height() {
                return Err(Error::OutOfBounds(format!("random erase of side {size}")));
            }
            let mut ks = Keystream::new(key.0 ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let rect = Rect::new(
                ks.below(img.width() - size + 1),
                ks.below(img.height() - size + 1),
                *size,
                *size,
            );
            truth = rect.block_mask(img);
            erase(img, rect, *value)?
        }
    };
    if let Some(qf) = attack.jpeg {
        out = jpeg_attack(&out, qf)?;
    }
    Ok((out, truth))
}

/// Detection followed by recovery of every flagged block.
pub fn detect_and_recover(img: &GrayImage, key: SecretKey, cfg: &Config) -> Result<(Detection, GrayImage)> {
    let det = detect(img, key, cfg)?;
    let recovered = recover_with(img, &det, &det.mask)?;
    Ok((det, recovered))
}

/// Recovers the blocks of `mask` using the digests found by `det`.
pub fn recover_with(img: &GrayImage, det: &Detection, mask: &BlockMask) -> Result<GrayImage> {
    if mask.count() == 0 {
        return Ok(img.clone());
    }
    if mask.count() == mask.len() {
        return Err(Error::InvalidArgument("every block is tampered; nothing to recover from".into()));
    }
    let grid = recovery_grid(img, mask, &det.vote.types, &det.topology, &det.extracted)?;
    let estimate = bicubic_reconstruct(&grid, img.width(), img.height());
    recover(img, mask, &estimate)
}

/// Rebuilds the whole image from its embedded digests alone.
pub fn full_digest_recovery(wm: &GrayImage, key: SecretKey, cfg: &Config) -> Result<GrayImage> {
    let det = detect(wm, key, cfg)?;
    let all = BlockMask::for_image(wm).complement();
    let (grid, _) = recovery_grid_from(wm, &all, &all, &det.vote.types, &det.topology, &det.extracted)?;
    Ok(bicubic_reconstruct(&grid, wm.width(), wm.height()))
}

/// One image under one attack.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScoreRow {
    pub image: String,
    pub attack: String,
    pub wm_psnr: Psnr,
    pub wm_ssim: f64,
    pub tampered_blocks: usize,
    pub flagged_blocks: usize,
    /// `None` when the attack tampers nothing.
    pub fr: Option<f64>,
    pub fa: f64,
    /// Recovered vs original over the ground-truth tamper region.
    pub region_psnr: Option<Psnr>,
    /// Recovered vs original over the whole image.
    pub full_psnr: Psnr,
}

/// Column means. PSNR means skip identical pairs, which have no finite
/// value; every other mean is over all rows that carry the field.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScoreAverages {
    pub wm_psnr: Option<f64>,
    pub wm_ssim: f64,
    pub fr: Option<f64>,
    pub fa: f64,
    pub region_psnr: Option<f64>,
    pub full_psnr: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttackSummary {
    pub attack: String,
    pub averages: ScoreAverages,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScoreCard {
    pub key: SecretKey,
    pub config: Config,
    pub rows: Vec<ScoreRow>,
    pub per_attack: Vec<AttackSummary>,
    pub averages: ScoreAverages,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for x in xs {
        sum += x;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

fn finite(p: Psnr) -> Option<f64> {
    match p {
        Psnr::Db(v) => Some(v),
        Psnr::Identical => None,
    }
}

pub fn averages(rows: &[&ScoreRow]) -> ScoreAverages {
    ScoreAverages {
        wm_psnr: mean(rows.iter().filter_map(|r| finite(r.wm_psnr))),
        wm_ssim: mean(rows.iter().map(|r| r.wm_ssim)).unwrap_or(0.0),
        fr: mean(rows.iter().filter_map(|r| r.fr)),
        fa: mean(rows.iter().map(|r| r.fa)).unwrap_or(0.0),
        region_psnr: mean(rows.iter().filter_map(|r| r.region_psnr.and_then(finite))),
        full_psnr: mean(rows.iter().filter_map(|r| finite(r.full_psnr))),
    }
}

/// A corpus image before and after embedding.
struct Marked<'a> {
    name: &'a str,
    original: &'a GrayImage,
    wm: GrayImage,
    report: EmbedReport,
}

fn score(m: &Marked, attack: &Attack, key: SecretKey, cfg: &Config, salt: u64) -> Result<ScoreRow> {
    let (name, original) = (m.name, m.original);
    let (attacked, truth) = apply_attack(&m.wm, attack, key, salt)?;
    let det = detect(&attacked, key, cfg)?;
    let recovered = recover_with(&attacked, &det, &det.mask)?;
    let tampered = truth.count();
    let (fr, fa) = if tampered == 0 {
        (None, det.mask.count() as f64 / det.mask.len() as f64)
    } else if tampered == truth.len() {
        (Some(1.0 - det.mask.count() as f64 / det.mask.len() as f64), 0.0)
    } else {
        let r = fr_fa(&det.mask, &truth)?;
        (Some(r.fr), r.fa)
    };
    Ok(ScoreRow {
        image: name.to_owned(),
        attack: attack.name.clone(),
        wm_psnr: m.report.psnr,
        wm_ssim: m.report.ssim,
        tampered_blocks: tampered,
        flagged_blocks: det.mask.count(),
        fr,
        fa,
        region_psnr: if tampered == 0 { None } else { Some(region_psnr(original, &recovered, &truth)?) },
        full_psnr: psnr(original, &recovered)?,
    })
}

/// Scores in-memory images. Row order is image-major, then attack order.
pub fn run_on_images(
    images: &[(String, GrayImage)],
    attacks: &[Attack],
    key: SecretKey,
    cfg: &Config,
) -> Result<ScoreCard> {
    cfg.validate()?;
    let per_image: Vec<Vec<ScoreRow>> = images
        .par_iter()
        .enumerate()
        .map(|(i, (name, original))| {
            let (wm, report) = embed(original, key, cfg).map_err(|e| e.context(format!("{name}: embed")))?;
            let marked = Marked { name, original, wm, report };
            attacks
                .par_iter()
                .map(|a| {
                    score(&marked, a, key, cfg, i as u64)
                        .map_err(|e| e.context(format!("{name}: attack {}", a.name)))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let rows: Vec<ScoreRow> = per_image.into_iter().flatten().collect();
    let per_attack = attacks
        .iter()
        .map(|a| AttackSummary {
            attack: a.name.clone(),
            averages: averages(&rows.iter().filter(|r| r.attack == a.name).collect::<Vec<_>>()),
        })
        .collect();
    let all: Vec<&ScoreRow> = rows.iter().collect();
    Ok(ScoreCard {
        key,
        config: *cfg,
        averages: averages(&all),
        per_attack,
        rows,
    })
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<ScoreCard> {
    spec.validate()?;
    let images = spec
        .images
        .iter()
        .map(|p| {
            let name = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            load_pgm(p).map(|img| (name, img)).map_err(|e| e.context(p.display().to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    run_on_images(&images, &spec.attacks, spec.key, &spec.config)
}

/// Mean imperceptibility of one quantization step over a corpus.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CalibrationPoint {
    pub step: i32,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Calibration {
    pub points: Vec<CalibrationPoint>,
    /// Largest step whose mean PSNR lies in the band and whose mean SSIM
    /// reaches the floor. Larger steps are more robust to compression.
    pub chosen: Option<i32>,
}

/// Embeds every image at each step and picks the strongest step that
/// still meets the imperceptibility targets.
pub fn calibrate_step(
    images: &[GrayImage],
    key: SecretKey,
    base: &Config,
    steps: &[i32],
    psnr_band: (f64, f64),
    min_ssim: f64,
) -> Result<Calibration> {
    if images.is_empty() {
        return Err(Error::InvalidArgument("calibration needs at least one image".into()));
    }
    let points = steps
        .par_iter()
        .map(|&step| {
            let cfg = Config { step, ..*base };
            let scores = images
                .iter()
                .map(|img| embed(img, key, &cfg).map(|(_, r)| (r.psnr.as_f64(), r.ssim)))
                .collect::<Result<Vec<_>>>()?;
            let n = scores.len() as f64;
            Ok(CalibrationPoint {
                step,
                mean_psnr: scores.iter().map(|s| s.0).sum::<f64>() / n,
                mean_ssim: scores.iter().map(|s| s.1).sum::<f64>() / n,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let chosen = points
        .iter()
        .filter(|p| p.mean_psnr >= psnr_band.0 && p.mean_psnr <= psnr_band.1 && p.mean_ssim >= min_ssim)
        .map(|p| p.step)
        .max();
    Ok(Calibration { points, chosen })
}

fn cell(v: Option<f64>, scale: f64) -> String {
    v.map_or_else(|| "-".to_owned(), |x| format!("{:.2}", x * scale))
}

fn psnr_cell(p: Option<Psnr>) -> String {
    p.map_or_else(|| "-".to_owned(), |p| p.to_string())
}

impl ScoreCard {
    /// Aligned plain-text table; rates are in percent.
    pub fn to_table(&self) -> String {
        let header = ["image", "attack", "wm_psnr", "wm_ssim", "fr%", "fa%", "region_psnr", "full_psnr"];
        let mut lines: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
        for r in &self.rows {
            lines.push(vec![
                r.image.clone(),
                r.attack.clone(),
                r.wm_psnr.to_string(),
                format!("{:.4}", r.wm_ssim),
                cell(r.fr, 100.0),
                cell(Some(r.fa), 100.0),
                psnr_cell(r.region_psnr),
                r.full_psnr.to_string(),
            ]);
        }
        let avg_line = |label: &str, attack: &str, a: &ScoreAverages| {
            vec![
                label.to_owned(),
                attack.to_owned(),
                cell(a.wm_psnr, 1.0),
                format!("{:.4}", a.wm_ssim),
                cell(a.fr, 100.0),
                cell(Some(a.fa), 100.0),
                cell(a.region_psnr, 1.0),
                cell(a.full_psnr, 1.0),
            ]
        };
        for s in &self.per_attack {
            lines.push(avg_line("mean", &s.attack, &s.averages));
        }
        lines.push(avg_line("mean", "all", &self.averages));
        let widths: Vec<usize> = (0..header.len())
            .map(|c| lines.iter().map(|l| l[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for l in &lines {
            let row: Vec<String> = l
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (s, &w))| if c < 2 { format!("{s:<w$}") } else { format!("{s:>w$}") })
                .collect();
            let _ = writeln!(out, "{}", row.join("  ").trim_end());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn host(seed: u64) -> GrayImage {
        GrayImage::from_fn(128, 128, |x, y| {
            let v = 120.0
                + 50.0 * ((x as f64 + seed as f64) / 9.0).sin() * ((y as f64) / 13.0).cos()
                + ((x * 7 + y * 13 + seed as usize) % 17) as f64;
            v.clamp(0.0, 255.0) as u8
        })
    }

    fn attacks() -> Vec<Attack> {
        vec![
            Attack { name: "none".into(), tamper: None, jpeg: None },
            Attack {
                name: "erase".into(),
                tamper: Some(Tamper::Erase { rect: Rect::new(32, 32, 32, 32), value: 0 }),
                jpeg: None,
            },
            Attack {
                name: "random".into(),
                tamper: Some(Tamper::RandomErase { size: 20, value: 255 }),
                jpeg: Some(95),
            },
        ]
    }

    #[test]
    fn clean_channel_scores_zero() {
        let images = vec![("a".to_owned(), host(1))];
        let card = run_on_images(&images, &attacks()[..1], SecretKey(5), &Config::default()).unwrap();
        let r = &card.rows[0];
        assert_eq!(r.fr, None);
        assert_eq!(r.fa, 0.0);
        assert_eq!(r.flagged_blocks, 0);
        assert_eq!(r.region_psnr, None);
    }

    #[test]
    fn averages_match_rows() {
        let images = vec![("a".to_owned(), host(1)), ("b".to_owned(), host(40))];
        let card = run_on_images(&images, &attacks(), SecretKey(9), &Config::default()).unwrap();
        assert_eq!(card.rows.len(), 6);
        let n = card.rows.len() as f64;
        let fa: f64 = card.rows.iter().map(|r| r.fa).sum::<f64>() / n;
        assert!((card.averages.fa - fa).abs() < 1e-12);
        let ssim: f64 = card.rows.iter().map(|r| r.wm_ssim).sum::<f64>() / n;
        assert!((card.averages.wm_ssim - ssim).abs() < 1e-12);
        let frs: Vec<f64> = card.rows.iter().filter_map(|r| r.fr).collect();
        assert_eq!(frs.len(), 4);
        assert!((card.averages.fr.unwrap() - frs.iter().sum::<f64>() / 4.0).abs() < 1e-12);
        let again = run_on_images(&images, &attacks(), SecretKey(9), &Config::default()).unwrap();
        assert_eq!(card, again);
        assert!(card.to_table().lines().count() == 1 + 6 + 3 + 1);
    }

    #[test]
    fn random_erase_moves_between_images() {
        let img = host(3);
        let a = &attacks()[2];
        let (_, t0) = apply_attack(&img, a, SecretKey(1), 0).unwrap();
        let (_, t1) = apply_attack(&img, a, SecretKey(1), 1).unwrap();
        assert_ne!(t0, t1);
        let (_, t0b) = apply_attack(&img, a, SecretKey(1), 0).unwrap();
        assert_eq!(t0, t0b);
    }

    #[test]
    fn calibration_prefers_the_largest_passing_step() {
        let images = vec![host(2)];
        let cal = calibrate_step(&images, SecretKey(4), &Config::default(), &[4, 8, 64], (30.0, 60.0), 0.5).unwrap();
        assert_eq!(cal.points.len(), 3);
        assert!(cal.points[0].mean_psnr > cal.points[1].mean_psnr);
        assert!(cal.points[1].mean_psnr > cal.points[2].mean_psnr);
        assert_eq!(cal.chosen, Some(8));
        let none = calibrate_step(&images, SecretKey(4), &Config::default(), &[64], (30.0, 60.0), 0.5).unwrap();
        assert_eq!(none.chosen, None);
    }

    #[test]
    fn spec_parsing() {
        let json = r#"{
            "images": ["x.pgm"],
            "key": "0x1f",
            "config": {"step": 12},
            "attacks": [
                {"name": "q80", "jpeg": 80},
                {"name": "cm", "tamper": {"kind": "copy_move",
                    "src": {"x": 0, "y": 0, "w": 16, "h": 16},
                    "dst": {"x": 32, "y": 32, "w": 16, "h": 16}}}
            ]
        }"#;
        let spec: ExperimentSpec = serde_json::from_str(json).unwrap();
        assert_eq!(spec.key, SecretKey(31));
        assert_eq!(spec.config.step, 12);
        assert_eq!(spec.config.th1, 0.1);
        assert_eq!(spec.attacks[0].tamper, None);
        assert!(matches!(spec.attacks[1].tamper, Some(Tamper::CopyMove { .. })));
        assert!(spec.validate().is_err());
    }
}
