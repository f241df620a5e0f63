use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::texture::check_thresholds;
use crate::transform::QimStep;

pub const DEFAULT_STEP: i32 = 16;
pub const DEFAULT_TH1: f64 = 0.1;
pub const DEFAULT_TH2: f64 = 0.3;

/// Embedding parameters shared by every pipeline stage. The key is passed
/// separately.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    /// QIM quantization step.
    pub step: i32,
    /// Normalized-deviation threshold between Smooth and Normal.
    pub th1: f64,
    /// Normalized-deviation threshold between Normal and Rough.
    pub th2: f64,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            step: DEFAULT_STEP,
            th1: DEFAULT_TH1,
            th2: DEFAULT_TH2,
        }
    }
}

impl Config {
    pub fn new(step: i32, th1: f64, th2: f64) -> Result<Self> {
        let cfg = Config { step, th1, th2 };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        QimStep::new(self.step)?;
        check_thresholds(self.th1, self.th2)
    }

    pub fn qim_step(&self) -> Result<QimStep> {
        QimStep::new(self.step)
    }
}
