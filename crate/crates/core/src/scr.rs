//! Signal-to-clutter ratio measurement and random SCR re-weighting.
//!
//! SCR is `20·log10(mean target amplitude / mean clutter amplitude)` in dB,
//! computed from the label map; shadow pixels are ignored. Re-weighting
//! scales only clutter pixels by `α = 10^((SCR - SCR')/20)`, which moves the
//! image to the requested SCR' while leaving target and shadow untouched.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{AmplitudeImage, ImagingError, Region, RegionLabelMap};
use crate::seed::SeedPath;

#[derive(Debug, Error)]
pub enum ScrError {
    #[error("{0} region is empty, SCR is undefined")]
    EmptyRegion(Region),
    #[error("{0} region has zero mean amplitude, SCR is undefined")]
    ZeroMean(Region),
    #[error("invalid SCR target: {0}")]
    BadSpec(String),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
}

pub type Result<T, E = ScrError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScrStats {
    pub scr_db: f64,
    pub mean_target: f64,
    pub mean_clutter: f64,
}

pub fn compute_scr(image: &AmplitudeImage, labels: &RegionLabelMap) -> Result<ScrStats> {
    let means = labels.region_means(image)?;
    let mean_of = |r: Region| -> Result<f64> {
        match means[r.index()] {
            None => Err(ScrError::EmptyRegion(r)),
            Some(m) if m <= 0.0 => Err(ScrError::ZeroMean(r)),
            Some(m) => Ok(m),
        }
    };
    let mean_target = mean_of(Region::Target)?;
    let mean_clutter = mean_of(Region::Clutter)?;
    Ok(ScrStats { scr_db: scr_from_means(mean_target, mean_clutter), mean_target, mean_clutter })
}

pub fn scr_from_means(mean_target: f64, mean_clutter: f64) -> f64 {
    20.0 * (mean_target / mean_clutter).log10()
}

/// Clutter scale factor that moves an image from `current_db` to `target_db`.
pub fn reweight_factor(current_db: f64, target_db: f64) -> f64 {
    10f64.powf((current_db - target_db) / 20.0)
}

/// Outcome of one re-weighting.
#[derive(Debug, Clone, PartialEq)]
pub struct Reweighted {
    pub image: AmplitudeImage,
    pub scr_db: f64,
    pub scr_prime_db: f64,
    pub alpha: f64,
}

fn scale_clutter(image: &AmplitudeImage, labels: &RegionLabelMap, alpha: f64) -> AmplitudeImage {
    image.map_pixels(|p, v| if labels.region(p) == Region::Clutter { alpha * v } else { v })
}

/// Scales clutter so the image's SCR becomes `target_db`.
pub fn reweight_to_scr(image: &AmplitudeImage, labels: &RegionLabelMap, target_db: f64) -> Result<Reweighted> {
    if !target_db.is_finite() {
        return Err(ScrError::BadSpec(format!("target SCR {target_db} is not finite")));
    }
    let stats = compute_scr(image, labels)?;
    let alpha = reweight_factor(stats.scr_db, target_db);
    let image = if alpha == 1.0 { image.clone() } else { scale_clutter(image, labels, alpha) };
    Ok(Reweighted { image, scr_db: stats.scr_db, scr_prime_db: target_db, alpha })
}

/// Distribution the new SCR is drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScrTargetSpec {
    Fixed { scr_db: f64 },
    Uniform { lo_db: f64, hi_db: f64 },
}

impl Default for ScrTargetSpec {
    fn default() -> Self {
        ScrTargetSpec::Uniform { lo_db: 11.0, hi_db: 14.0 }
    }
}

impl ScrTargetSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ScrTargetSpec::Fixed { scr_db } if !scr_db.is_finite() => {
                Err(ScrError::BadSpec(format!("fixed SCR {scr_db} is not finite")))
            }
            ScrTargetSpec::Uniform { lo_db, hi_db } if !(lo_db.is_finite() && hi_db.is_finite() && lo_db <= hi_db) => {
                Err(ScrError::BadSpec(format!("uniform range [{lo_db}, {hi_db}] is empty or not finite")))
            }
            _ => Ok(()),
        }
    }

    pub fn draw(&self, rng: &mut impl Rng) -> f64 {
        match *self {
            ScrTargetSpec::Fixed { scr_db } => scr_db,
            ScrTargetSpec::Uniform { lo_db, hi_db } if lo_db == hi_db => lo_db,
            ScrTargetSpec::Uniform { lo_db, hi_db } => rng.random_range(lo_db..hi_db),
        }
    }
}

impl fmt::Display for ScrTargetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScrTargetSpec::Fixed { scr_db } => write!(f, "fixed:{scr_db}"),
            ScrTargetSpec::Uniform { lo_db, hi_db } => write!(f, "uniform:{lo_db},{hi_db}"),
        }
    }
}

impl FromStr for ScrTargetSpec {
    type Err = ScrError;

    /// `fixed:12` or `uniform:11,14`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || ScrError::BadSpec(format!("{s:?}: expected fixed:<dB> or uniform:<lo>,<hi>"));
        let num = |t: &str| t.trim().parse::<f64>().map_err(|_| bad());
        let spec = match s.split_once(':') {
            Some(("fixed", v)) => ScrTargetSpec::Fixed { scr_db: num(v)? },
            Some(("uniform", v)) => {
                let (lo, hi) = v.split_once(',').ok_or_else(bad)?;
                ScrTargetSpec::Uniform { lo_db: num(lo)?, hi_db: num(hi)? }
            }
            _ => return Err(bad()),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Draws SCR' from `spec` with a stream keyed by `seed`, then re-weights.
pub fn random_scr_reweight(
    image: &AmplitudeImage,
    labels: &RegionLabelMap,
    spec: ScrTargetSpec,
    seed: u64,
) -> Result<Reweighted> {
    spec.validate()?;
    let target = spec.draw(&mut SeedPath::root(seed).child("scr").rng());
    reweight_to_scr(image, labels, target)
}

#[cfg(test)]
mod tests {
    use super::*;

    // 2x3 map: clutter x3, target x2, shadow x1
    fn fixture() -> (AmplitudeImage, RegionLabelMap) {
        let labels = RegionLabelMap::from_raw(2, 3, &[0, 0, 1, 1, 2, 0]).unwrap();
        let image = AmplitudeImage::new(2, 3, vec![0.2, 0.25, 0.7, 0.6, 0.03, 0.15]).unwrap();
        (image, labels)
    }

    #[test]
    fn equal_means_give_zero_db() {
        let labels = RegionLabelMap::from_raw(1, 2, &[0, 1]).unwrap();
        let image = AmplitudeImage::filled(1, 2, 0.4).unwrap();
        assert_eq!(compute_scr(&image, &labels).unwrap().scr_db, 0.0);
    }

    #[test]
    fn closed_form_matches_ladder_row() {
        // 20·log10(0.629 / 0.215)
        assert!((scr_from_means(0.629, 0.215) - 9.3241).abs() < 1e-3);
        let labels = RegionLabelMap::from_raw(1, 2, &[0, 1]).unwrap();
        let image = AmplitudeImage::new(1, 2, vec![0.215, 0.629]).unwrap();
        let s = compute_scr(&image, &labels).unwrap();
        assert!((s.scr_db - 9.32).abs() < 0.01);
    }

    #[test]
    fn undefined_scr_errors() {
        let labels = RegionLabelMap::from_raw(1, 2, &[0, 1]).unwrap();
        let dark = AmplitudeImage::new(1, 2, vec![0.0, 0.5]).unwrap();
        assert!(matches!(compute_scr(&dark, &labels), Err(ScrError::ZeroMean(Region::Clutter))));
        let no_target = RegionLabelMap::from_raw(1, 2, &[0, 2]).unwrap();
        let img = AmplitudeImage::filled(1, 2, 0.5).unwrap();
        assert!(matches!(compute_scr(&img, &no_target), Err(ScrError::EmptyRegion(Region::Target))));
        assert!(reweight_to_scr(&dark, &labels, 10.0).is_err());
    }

    #[test]
    fn reweight_fixpoint_is_bit_identical() {
        let (image, labels) = fixture();
        let scr = compute_scr(&image, &labels).unwrap().scr_db;
        let out = reweight_to_scr(&image, &labels, scr).unwrap();
        assert_eq!(out.alpha, 1.0);
        assert_eq!(out.image, image);
    }

    #[test]
    fn alpha_closed_form() {
        let a = reweight_factor(16.0, 10.0);
        assert!((a - 10f64.powf(0.3)).abs() < 1e-15);
        assert!((a - 1.99526).abs() < 1e-5);
    }

    #[test]
    fn reweight_hits_target_and_spares_other_regions() {
        let (image, labels) = fixture();
        for target in [-3.0, 0.0, 5.5, 12.0, 30.0] {
            let out = reweight_to_scr(&image, &labels, target).unwrap();
            let got = compute_scr(&out.image, &labels).unwrap().scr_db;
            assert!((got - target).abs() < 1e-6, "{got} vs {target}");
            for p in 0..image.len() {
                if labels.region(p) != Region::Clutter {
                    assert_eq!(out.image.data()[p].to_bits(), image.data()[p].to_bits());
                }
            }
            assert_eq!(out.alpha > 1.0, target < out.scr_db);
        }
    }

    #[test]
    fn fixed_spec_equals_direct_reweight() {
        let (image, labels) = fixture();
        let a = random_scr_reweight(&image, &labels, ScrTargetSpec::Fixed { scr_db: 12.0 }, 5).unwrap();
        let b = reweight_to_scr(&image, &labels, 12.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn uniform_draws_average_to_midpoint() {
        let spec = ScrTargetSpec::default();
        let n = 10_000;
        let mean = (0..n).map(|k| spec.draw(&mut SeedPath::root(11).index(k).rng())).sum::<f64>() / n as f64;
        assert!((mean - 12.5).abs() < 0.05, "{mean}");
    }

    #[test]
    fn random_reweight_is_deterministic() {
        let (image, labels) = fixture();
        let a = random_scr_reweight(&image, &labels, ScrTargetSpec::default(), 77).unwrap();
        let b = random_scr_reweight(&image, &labels, ScrTargetSpec::default(), 77).unwrap();
        assert_eq!(a.scr_prime_db.to_bits(), b.scr_prime_db.to_bits());
        assert_eq!(a.image, b.image);
        assert!((11.0..14.0).contains(&a.scr_prime_db));
    }

    #[test]
    fn spec_parsing() {
        assert_eq!("fixed:12".parse::<ScrTargetSpec>().unwrap(), ScrTargetSpec::Fixed { scr_db: 12.0 });
        assert_eq!("uniform:11,14".parse::<ScrTargetSpec>().unwrap(), ScrTargetSpec::default());
        assert!("uniform:14,11".parse::<ScrTargetSpec>().is_err());
        assert!("normal:1".parse::<ScrTargetSpec>().is_err());
    }
}
