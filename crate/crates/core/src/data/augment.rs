use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Feature-space augmentation: per-row random scaling plus per-element
/// Gaussian noise. Magnitudes are in post-normalization units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub enabled: bool,
    pub noise_sigma: f64,
    pub scale_lo: f64,
    pub scale_hi: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            noise_sigma: 0.05,
            scale_lo: 0.9,
            scale_hi: 1.1,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::invalid("augment.noise_sigma must be >= 0"));
        }
        if !(self.scale_lo <= self.scale_hi) {
            return Err(Error::invalid(
                "augment.scale_lo must not exceed augment.scale_hi",
            ));
        }
        Ok(())
    }
}

/// `out = row * s + n`, with `s ~ U[scale_lo, scale_hi]` drawn once per row and
/// `n ~ N(0, noise_sigma^2)` drawn per element.
pub fn augment(rows: &[f64], width: usize, cfg: &AugmentConfig, seed: u64) -> Result<Vec<f64>> {
    cfg.validate()?;
    if width == 0 || rows.len() % width != 0 {
        return Err(Error::shape(
            "augment",
            format!("{} values do not form rows of width {width}", rows.len()),
        ));
    }
    let mut rng = seed::child_rng(seed, "augment", 0);
    let noise = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let mut out = Vec::with_capacity(rows.len());
    for row in rows.chunks_exact(width) {
        let s = if cfg.scale_lo == cfg.scale_hi {
            cfg.scale_lo
        } else {
            rng.random_range(cfg.scale_lo..=cfg.scale_hi)
        };
        for &x in row {
            let n = if cfg.noise_sigma == 0.0 {
                0.0
            } else {
                noise.sample(&mut rng)
            };
            out.push(x * s + n);
        }
    }
    Ok(out)
}
