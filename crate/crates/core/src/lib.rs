//! Semi-fragile watermarking for grayscale images with tamper localization
//! and self-recovery.
//!
//! Each 16x16 block carries a texture-dependent payload in its integer
//! wavelet LL band: digests of its two neighbours on a keyed 4-cycle, the
//! texture word of that cycle, and sub-block digests of a distant pair
//! block. A receiver re-derives the keyed structure, checks the digests in
//! both directions, and rebuilds flagged blocks from what survived.
//!
//! ```no_run
//! use semifragile::{attack, embed, eval, Config, GrayImage, SecretKey};
//!
//! let host = GrayImage::filled(512, 512, 128);
//! let key = SecretKey(42);
//! let cfg = Config::default();
//! let (wm, _report) = embed::embed(&host, key, &cfg).unwrap();
//! let attacked = attack::jpeg_attack(&wm, 85).unwrap();
//! let (detection, recovered) = eval::detect_and_recover(&attacked, key, &cfg).unwrap();
//! # let _ = (detection, recovered);
//! ```

pub mod attack;
pub mod config;
pub mod detect;
pub mod embed;
pub mod error;
pub mod eval;
pub mod image;
pub mod metrics;
pub mod payload;
pub mod recovery;
pub mod texture;
pub mod topology;
pub mod transform;

pub use config::Config;
pub use error::{Error, Result};
pub use image::{BlockMask, GrayImage};
pub use metrics::Psnr;
pub use texture::BlockType;
pub use topology::SecretKey;
