use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{ArgGroup, Args, Parser, Subcommand};
use serde::Serialize;

use semifragile::attack::{copy_move, erase, jpeg_attack, Rect};
use semifragile::detect::{detect, BlockStatus, Detection, VoteConfidence};
use semifragile::embed::{embed, EmbedReport};
use semifragile::eval::{calibrate_step, full_digest_recovery, recover_with, run_experiment, ExperimentSpec};
use semifragile::image::{load_pgm, save_pgm};
use semifragile::metrics::{fr_fa, FrFa};
use semifragile::texture::{BlockType, TextureMap, TypeCounts};
use semifragile::topology::{Topology, TopologyEntry};
use semifragile::{BlockMask, Config, GrayImage, SecretKey};

#[derive(Parser)]
#[command(name = "semifragile", version, about = "Semi-fragile watermarking with tamper localization and recovery")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Embed the watermark into a grayscale PGM.
    Embed {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        params: Params,
        /// JSON embedding report.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Apply a tamper and/or JPEG attack.
    #[command(group(ArgGroup::new("kind").required(true).multiple(true).args(["jpeg", "erase", "copy_move"])))]
    Attack {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// JPEG quality factor, applied after any tamper.
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=100))]
        jpeg: Option<u8>,
        /// Fill a rectangle: x,y,w,h,value.
        #[arg(long, value_name = "X,Y,W,H,V", conflicts_with = "copy_move")]
        erase: Option<String>,
        /// Copy a rectangle: sx,sy,dx,dy,w,h.
        #[arg(long, value_name = "SX,SY,DX,DY,W,H")]
        copy_move: Option<String>,
        /// Ground-truth block mask (PGM, one 16x16 patch per block).
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Locate tampered blocks.
    Detect {
        #[arg(long = "in")]
        input: PathBuf,
        #[command(flatten)]
        params: Params,
        /// Mask PGM: 255 tampered, 128 partially destroyed only, 0 healthful.
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
        /// Ground-truth mask PGM for FR/FA scoring.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Detect and rebuild tampered blocks.
    Recover {
        #[arg(long = "in")]
        input: PathBuf,
        #[command(flatten)]
        params: Params,
        #[arg(long)]
        out: PathBuf,
        /// Recover these blocks instead of the detected ones.
        #[arg(long)]
        mask: Option<PathBuf>,
        /// Rebuild every block from embedded digests only.
        #[arg(long, conflicts_with = "mask")]
        full: bool,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run an experiment spec over a corpus.
    Evaluate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        table: Option<PathBuf>,
    },
    /// Sweep the quantization step and report imperceptibility per step.
    Calibrate {
        /// Corpus images; repeat the flag for each.
        #[arg(long = "in", required = true)]
        inputs: Vec<PathBuf>,
        #[command(flatten)]
        params: Params,
        #[arg(long, default_value_t = 8)]
        from: i32,
        #[arg(long, default_value_t = 32)]
        to: i32,
        /// Target mean PSNR band in dB.
        #[arg(long, default_value_t = 33.0)]
        min_psnr: f64,
        #[arg(long, default_value_t = 38.0)]
        max_psnr: f64,
        #[arg(long, default_value_t = 0.85)]
        min_ssim: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dump texture classes and keyed topology as JSON.
    Inspect {
        #[arg(long = "in")]
        input: PathBuf,
        #[command(flatten)]
        params: Params,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Params {
    /// Secret key, decimal or 0x-prefixed hex.
    #[arg(long, value_parser = parse_key)]
    key: SecretKey,
    #[arg(long, default_value_t = semifragile::config::DEFAULT_STEP)]
    step: i32,
    #[arg(long, default_value_t = semifragile::config::DEFAULT_TH1)]
    th1: f64,
    #[arg(long, default_value_t = semifragile::config::DEFAULT_TH2)]
    th2: f64,
}

impl Params {
    fn config(&self) -> anyhow::Result<Config> {
        Ok(Config::new(self.step, self.th1, self.th2)?)
    }
}

fn parse_key(s: &str) -> Result<SecretKey, String> {
    SecretKey::parse(s).ok_or_else(|| format!("{s:?} is not a decimal or 0x-hex 64-bit key"))
}

fn parse_list<const N: usize>(s: &str, what: &str) -> anyhow::Result<[usize; N]> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .with_context(|| format!("{what}: expected {N} comma-separated integers"))?;
    parts
        .try_into()
        .map_err(|_| anyhow::anyhow!("{what}: expected {N} comma-separated integers"))
}

fn load(path: &Path) -> anyhow::Result<GrayImage> {
    load_pgm(path).with_context(|| format!("reading {}", path.display()))
}

fn save(img: &GrayImage, path: &Path) -> anyhow::Result<()> {
    save_pgm(img, path).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_mask(path: &Path, img: &GrayImage) -> anyhow::Result<BlockMask> {
    let m = load(path)?;
    BlockMask::from_image(&m, img.width() / 16, img.height() / 16).with_context(|| format!("mask {}", path.display()))
}

#[derive(Serialize)]
struct BlockRecord {
    index: usize,
    bx: usize,
    by: usize,
    status: BlockStatus,
    voted_type: BlockType,
    confidence: VoteConfidence,
    tampered: bool,
}

#[derive(Serialize)]
struct DetectReport {
    key: SecretKey,
    config: Config,
    blocks_w: usize,
    blocks_h: usize,
    tampered_blocks: usize,
    partially_destroyed: usize,
    fully_destroyed: usize,
    voted_types: TypeCounts,
    #[serde(skip_serializing_if = "Option::is_none")]
    score: Option<FrFa>,
    blocks: Vec<BlockRecord>,
}

fn detect_report(det: &Detection, cfg: &Config, score: Option<FrFa>) -> DetectReport {
    let grid = det.topology.grid;
    let count = |s| det.status.iter().filter(|&&x| x == s).count();
    DetectReport {
        key: det.topology.key,
        config: *cfg,
        blocks_w: grid.blocks_w,
        blocks_h: grid.blocks_h,
        tampered_blocks: det.mask.count(),
        partially_destroyed: count(BlockStatus::PartiallyDestroyed),
        fully_destroyed: count(BlockStatus::FullyDestroyed),
        voted_types: TypeCounts::of(det.vote.types.iter().copied()),
        score,
        blocks: (0..grid.len())
            .map(|b| {
                let (bx, by) = grid.coords(b);
                BlockRecord {
                    index: b,
                    bx,
                    by,
                    status: det.status[b],
                    voted_type: det.vote.types[b],
                    confidence: det.vote.confidence[b],
                    tampered: det.mask.is_set(b),
                }
            })
            .collect(),
    }
}

#[derive(Serialize)]
struct RecoverReport {
    key: SecretKey,
    config: Config,
    full: bool,
    mask_source: &'static str,
    recovered_blocks: usize,
}

#[derive(Serialize)]
struct InspectReport<'a> {
    key: SecretKey,
    config: Config,
    texture: &'a TextureMap,
    counts: TypeCounts,
    topology: Vec<TopologyEntry>,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Embed { input, out, params, report } => {
            let cfg = params.config()?;
            let img = load(&input)?;
            let (wm, rep): (GrayImage, EmbedReport) = embed(&img, params.key, &cfg)?;
            save(&wm, &out)?;
            if rep.degraded {
                eprintln!("warning: {} payload bits could not be embedded", rep.residual_bit_errors);
            }
            if let Some(path) = report {
                write_json(&rep, &path)?;
            }
        }
        Command::Attack { input, out, jpeg, erase: er, copy_move: cm, truth } => {
            let img = load(&input)?;
            let mut mask = BlockMask::for_image(&img);
            let mut attacked = img.clone();
            if let Some(spec) = er {
                let [x, y, w, h, v] = parse_list::<5>(&spec, "--erase")?;
                let value = u8::try_from(v).context("--erase: gray value must be 0..=255")?;
                let rect = Rect::new(x, y, w, h);
                attacked = erase(&attacked, rect, value)?;
                mask = rect.block_mask(&img);
            }
            if let Some(spec) = cm {
                let [sx, sy, dx, dy, w, h] = parse_list::<6>(&spec, "--copy-move")?;
                let dst = Rect::new(dx, dy, w, h);
                attacked = copy_move(&attacked, Rect::new(sx, sy, w, h), dst)?;
                mask = dst.block_mask(&img);
            }
            if let Some(qf) = jpeg {
                attacked = jpeg_attack(&attacked, qf)?;
            }
            save(&attacked, &out)?;
            if let Some(path) = truth {
                save(&mask.to_image(), &path)?;
            }
        }
        Command::Detect { input, params, mask, report, truth } => {
            let cfg = params.config()?;
            let img = load(&input)?;
            let det = detect(&img, params.key, &cfg)?;
            if let Some(path) = mask {
                save(&det.mask_image(), &path)?;
            }
            let score = match &truth {
                Some(path) => Some(fr_fa(&det.mask, &load_mask(path, &img)?)?),
                None => None,
            };
            if let Some(s) = score {
                eprintln!("FR {:.2}%  FA {:.2}%", s.fr * 100.0, s.fa * 100.0);
            }
            if let Some(path) = report {
                write_json(&detect_report(&det, &cfg, score), &path)?;
            }
        }
        Command::Recover { input, params, out, mask, full, report } => {
            let cfg = params.config()?;
            let img = load(&input)?;
            let (recovered, source, count) = if full {
                let r = full_digest_recovery(&img, params.key, &cfg)?;
                (r, "all", img.width() * img.height() / 256)
            } else {
                let det = detect(&img, params.key, &cfg)?;
                let (m, source) = match &mask {
                    Some(path) => (load_mask(path, &img)?, "supplied"),
                    None => (det.mask.clone(), "detected"),
                };
                (recover_with(&img, &det, &m)?, source, m.count())
            };
            save(&recovered, &out)?;
            if let Some(path) = report {
                let rep = RecoverReport {
                    key: params.key,
                    config: cfg,
                    full,
                    mask_source: source,
                    recovered_blocks: count,
                };
                write_json(&rep, &path)?;
            }
        }
        Command::Evaluate { spec, out, table } => {
            let spec = ExperimentSpec::load(&spec)?;
            let card = run_experiment(&spec)?;
            write_json(&card, &out)?;
            if let Some(path) = table {
                std::fs::write(&path, card.to_table()).with_context(|| format!("writing {}", path.display()))?;
            }
        }
        Command::Calibrate { inputs, params, from, to, min_psnr, max_psnr, min_ssim, out } => {
            let cfg = params.config()?;
            if from < 2 || to < from {
                bail!("step range {from}..={to} is empty or below 2");
            }
            let images = inputs.iter().map(|p| load(p)).collect::<anyhow::Result<Vec<_>>>()?;
            let steps: Vec<i32> = (from..=to).collect();
            let cal = calibrate_step(&images, params.key, &cfg, &steps, (min_psnr, max_psnr), min_ssim)?;
            match cal.chosen {
                Some(s) => eprintln!("chosen step {s}"),
                None => eprintln!("no step in {from}..={to} meets the targets"),
            }
            write_json(&cal, &out)?;
        }
        Command::Inspect { input, params, out } => {
            let cfg = params.config()?;
            let img = load(&input)?;
            img.check_watermarkable()?;
            let texture = TextureMap::analyze(&img, cfg.th1, cfg.th2)?;
            let topology = Topology::with_types(params.key, texture.grid, &texture.types());
            let rep = InspectReport {
                key: params.key,
                config: cfg,
                texture: &texture,
                counts: texture.counts(),
                topology: topology.report(),
            };
            write_json(&rep, &out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
