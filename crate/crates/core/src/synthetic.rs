//! SAR-like synthetic datasets with a controllable class/clutter bias.
//!
//! Each image has a bright class-specific target template in the center, a
//! dark shadow cast in a fixed direction, and exponential speckle clutter
//! scaled so the image's SCR equals a draw from its class's SCR range. With
//! the default ladder the clutter level alone predicts the class; the
//! debiased config gives every class the same range.
//!
//! The clutter model is not physical SAR statistics, only enough to carry the
//! bias.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{write_dataset, Dataset, DatasetError, Sample};
use crate::imaging::{AmplitudeImage, ImageFormat, Region, RegionLabelMap};
use crate::scr::{random_scr_reweight, scr_from_means, ScrError, ScrTargetSpec};
use crate::seed::SeedPath;

#[derive(Debug, Error)]
pub enum SyntheticError {
    #[error("target template ({target}px) plus shadow ({shadow}px) does not fit a {height}x{width} image")]
    TemplateTooLarge { target: usize, shadow: usize, height: usize, width: usize },
    #[error("invalid config: {0}")]
    BadConfig(String),
    #[error("sample {id}: {source}")]
    Scr { id: String, source: ScrError },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

pub type Result<T, E = SyntheticError> = std::result::Result<T, E>;

/// Target footprint drawn on a `size × size` grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetShape {
    WideRect,
    TallRect,
    Square,
    Cross,
    Diamond,
    Disk,
    Ring,
    LShape,
    TShape,
    Triangle,
}

impl TargetShape {
    pub const ALL: [TargetShape; 10] = [
        TargetShape::WideRect,
        TargetShape::TallRect,
        TargetShape::Square,
        TargetShape::Cross,
        TargetShape::Diamond,
        TargetShape::Disk,
        TargetShape::Ring,
        TargetShape::LShape,
        TargetShape::TShape,
        TargetShape::Triangle,
    ];

    /// Row-major `size × size` footprint.
    pub fn mask(self, size: usize) -> Vec<bool> {
        let s = size as f64;
        let center = (s - 1.0) / 2.0;
        let third = s / 3.0;
        let sixth = s / 6.0;
        let mut out = Vec::with_capacity(size * size);
        for r in 0..size {
            for c in 0..size {
                let (rf, cf) = (r as f64, c as f64);
                let (dr, dc) = ((rf - center).abs(), (cf - center).abs());
                let d2 = dr * dr + dc * dc;
                let half = s / 2.0;
                let inside = match self {
                    TargetShape::WideRect => rf >= third && rf < 2.0 * third,
                    TargetShape::TallRect => cf >= third && cf < 2.0 * third,
                    TargetShape::Square => dr < s / 3.0 && dc < s / 3.0,
                    TargetShape::Cross => dr < sixth || dc < sixth,
                    TargetShape::Diamond => dr + dc <= half,
                    TargetShape::Disk => d2 <= half * half,
                    TargetShape::Ring => d2 <= half * half && d2 >= (s / 4.0) * (s / 4.0),
                    TargetShape::LShape => cf < third || rf >= 2.0 * third,
                    TargetShape::TShape => rf < third || dc < sixth,
                    TargetShape::Triangle => dc <= rf / 2.0,
                };
                out.push(inside);
            }
        }
        out
    }
}

/// Direction the shadow extends from the target, in image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShadowDirection {
    Up,
    Down,
    Left,
    Right,
}

impl ShadowDirection {
    fn step(self) -> (isize, isize) {
        match self {
            ShadowDirection::Up => (-1, 0),
            ShadowDirection::Down => (1, 0),
            ShadowDirection::Left => (0, -1),
            ShadowDirection::Right => (0, 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub name: String,
    pub shape: TargetShape,
    /// Inclusive SCR range in dB the per-sample SCR is drawn from.
    pub scr_range_db: [f64; 2],
    /// Box-filter width applied to the clutter speckle; 1 means uncorrelated.
    #[serde(default = "one")]
    pub speckle_corr_len: usize,
}

fn one() -> usize {
    1
}

/// Class names with the training and test clutter SCRs of the reference
/// ten-class benchmark, low SCR first.
pub const REFERENCE_SCR_LADDER: [(&str, f64, f64); 10] = [
    ("BTR70", 9.32, 9.42),
    ("BMP2", 9.42, 10.01),
    ("BRDM2", 9.72, 10.31),
    ("BTR60", 10.53, 11.18),
    ("2S1", 11.00, 11.18),
    ("T72", 11.51, 12.01),
    ("T62", 13.83, 14.53),
    ("ZIL131", 14.27, 14.79),
    ("D7", 16.57, 17.25),
    ("ZSU234", 16.74, 17.34),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasConfig {
    pub classes: Vec<ClassSpec>,
    pub height: usize,
    pub width: usize,
    /// Side of the square target template, in pixels.
    pub target_size: usize,
    /// How far the shadow extends behind the target, in pixels.
    pub shadow_length: usize,
    pub shadow_direction: ShadowDirection,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub seed: u64,
}

impl Default for BiasConfig {
    /// Ten classes on the reference SCR ladder; each class's range spans its
    /// training and test SCR.
    fn default() -> Self {
        let classes = REFERENCE_SCR_LADDER
            .iter()
            .zip(TargetShape::ALL)
            .map(|(&(name, train, test), shape)| ClassSpec {
                name: name.into(),
                shape,
                scr_range_db: [train.min(test), train.max(test)],
                speckle_corr_len: 1,
            })
            .collect();
        BiasConfig {
            classes,
            height: 64,
            width: 64,
            target_size: 20,
            shadow_length: 10,
            shadow_direction: ShadowDirection::Down,
            train_per_class: 100,
            test_per_class: 50,
            seed: 0,
        }
    }
}

impl BiasConfig {
    /// Same classes, every SCR range set to `[lo, hi]`.
    pub fn debiased(mut self, lo: f64, hi: f64) -> Self {
        for c in &mut self.classes {
            c.scr_range_db = [lo, hi];
        }
        self
    }

    /// Class-correlated clutter texture: class `k` gets box width `1 + k % 4`.
    pub fn with_texture_bias(mut self) -> Self {
        for (k, c) in self.classes.iter_mut().enumerate() {
            c.speckle_corr_len = 1 + k % 4;
        }
        self
    }

    pub fn class_names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name.clone()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.len() < 2 {
            return Err(SyntheticError::BadConfig("need at least two classes".into()));
        }
        for (k, c) in self.classes.iter().enumerate() {
            if self.classes[..k].iter().any(|o| o.name == c.name) {
                return Err(SyntheticError::BadConfig(format!("duplicate class name {:?}", c.name)));
            }
            if c.name.is_empty() || c.name.contains(['/', '\\']) {
                return Err(SyntheticError::BadConfig(format!("class name {:?} is not a valid directory name", c.name)));
            }
            let [lo, hi] = c.scr_range_db;
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(SyntheticError::BadConfig(format!("class {}: SCR range [{lo}, {hi}] is invalid", c.name)));
            }
            if c.speckle_corr_len == 0 {
                return Err(SyntheticError::BadConfig(format!("class {}: speckle correlation length is 0", c.name)));
            }
        }
        if self.height < 16 || self.width < 16 {
            return Err(SyntheticError::BadConfig(format!("image must be at least 16x16, got {}x{}", self.height, self.width)));
        }
        if self.target_size < 6 {
            return Err(SyntheticError::BadConfig("target template must be at least 6 pixels".into()));
        }
        if self.shadow_length == 0 {
            return Err(SyntheticError::BadConfig("shadow length must be positive".into()));
        }
        let needed = self.target_size + 2 * (self.shadow_length + 1);
        if needed > self.height.min(self.width) {
            return Err(SyntheticError::TemplateTooLarge {
                target: self.target_size,
                shadow: self.shadow_length,
                height: self.height,
                width: self.width,
            });
        }
        Ok(())
    }

    /// Region layout for class `k`: centered target and its shadow.
    pub fn layout(&self, class: usize) -> Result<RegionLabelMap> {
        self.validate()?;
        let (h, w, s) = (self.height, self.width, self.target_size);
        let template = self.classes[class].shape.mask(s);
        let (top, left) = ((h - s) / 2, (w - s) / 2);
        let mut target = vec![false; h * w];
        for r in 0..s {
            for c in 0..s {
                if template[r * s + c] {
                    target[(top + r) * w + left + c] = true;
                }
            }
        }
        let (dr, dc) = self.shadow_direction.step();
        let mut shadow = vec![false; h * w];
        for p in (0..h * w).filter(|&p| target[p]) {
            let (r, c) = ((p / w) as isize, (p % w) as isize);
            for k in 1..=self.shadow_length as isize {
                let (rr, cc) = (r + k * dr, c + k * dc);
                if rr >= 0 && cc >= 0 && (rr as usize) < h && (cc as usize) < w {
                    shadow[rr as usize * w + cc as usize] = true;
                }
            }
        }
        Ok(RegionLabelMap::from_masks(h, w, &target, &shadow).expect("mask sizes match"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    pub sample: Sample,
    pub scr_db: f64,
    pub seed: u64,
}

fn box_blur(field: &[f64], h: usize, w: usize, k: usize) -> Vec<f64> {
    if k <= 1 {
        return field.to_vec();
    }
    let half = k / 2;
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let (r0, r1) = (r.saturating_sub(half), (r + k - half).min(h));
            let (c0, c1) = (c.saturating_sub(half), (c + k - half).min(w));
            let mut s = 0.0;
            for rr in r0..r1 {
                s += field[rr * w + c0..rr * w + c1].iter().sum::<f64>();
            }
            out[r * w + c] = s / ((r1 - r0) * (c1 - c0)) as f64;
        }
    }
    out
}

fn generate_one(config: &BiasConfig, class: usize, labels: &RegionLabelMap, seed: u64) -> (AmplitudeImage, f64) {
    let spec = &config.classes[class];
    let mut rng = SeedPath::root(seed).rng();
    let [lo, hi] = spec.scr_range_db;
    let scr = if lo == hi { lo } else { rng.random_range(lo..=hi) };

    let n = config.height * config.width;
    let speckle: Vec<f64> = (0..n).map(|_| Exp1.sample(&mut rng)).collect();
    let speckle = box_blur(&speckle, config.height, config.width, spec.speckle_corr_len);

    let mut data = vec![0.0; n];
    let (mut target_sum, mut target_n, mut clutter_sum, mut clutter_n) = (0.0, 0usize, 0.0, 0usize);
    for (p, px) in data.iter_mut().enumerate() {
        match labels.region(p) {
            Region::Target => {
                *px = rng.random_range(0.6..0.9);
                target_sum += *px;
                target_n += 1;
            }
            Region::Shadow => *px = rng.random_range(0.02..0.08),
            Region::Clutter => {
                *px = speckle[p];
                clutter_sum += *px;
                clutter_n += 1;
            }
        }
    }
    let target_mean = target_sum / target_n as f64;
    let want_clutter = target_mean / 10f64.powf(scr / 20.0);
    let scale = want_clutter / (clutter_sum / clutter_n as f64);
    for (p, px) in data.iter_mut().enumerate() {
        if labels.region(p) == Region::Clutter {
            *px *= scale;
        }
    }
    let image = AmplitudeImage::new(config.height, config.width, data).expect("generated pixels are valid");
    (image, scr)
}

/// Generates one split. Sample `(class, index)` is seeded from
/// `(seed, split, class, index)`, so splits draw from disjoint streams.
pub fn generate_dataset(config: &BiasConfig, split: Split) -> Result<Vec<SyntheticSample>> {
    config.validate()?;
    let per_class = match split {
        Split::Train => config.train_per_class,
        Split::Test => config.test_per_class,
    };
    let stream = SeedPath::root(config.seed).child(split.name());
    let mut out = Vec::with_capacity(per_class * config.classes.len());
    for (class, spec) in config.classes.iter().enumerate() {
        let labels = config.layout(class)?;
        for index in 0..per_class {
            let seed = stream.index(class as u64).index(index as u64).seed();
            let (image, scr_db) = generate_one(config, class, &labels, seed);
            let id = format!("{}/{}-{index:04}", spec.name, split.name());
            out.push(SyntheticSample { sample: Sample { id, class_index: class, image, labels: labels.clone() }, scr_db, seed });
        }
    }
    Ok(out)
}

pub fn to_dataset(config: &BiasConfig, samples: &[SyntheticSample]) -> Dataset {
    Dataset::new(config.class_names(), samples.iter().map(|s| s.sample.clone()).collect())
}

/// Writes a split in the standard dataset layout with a manifest recording
/// each sample's SCR draw and seed.
pub fn write_synthetic(root: &Path, config: &BiasConfig, samples: &[SyntheticSample], format: ImageFormat) -> Result<()> {
    let dataset = to_dataset(config, samples);
    let lookup: std::collections::HashMap<&str, (f64, u64)> =
        samples.iter().map(|s| (s.sample.id.as_str(), (s.scr_db, s.seed))).collect();
    let generator = serde_json::to_value(config).expect("config serializes");
    write_dataset(
        root,
        &dataset,
        format,
        |s| lookup.get(s.id.as_str()).map_or((None, None), |&(scr, seed)| (Some(scr), Some(seed))),
        Some(generator),
    )?;
    Ok(())
}

/// Per-sample record of an intervention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionRecord {
    pub id: String,
    pub scr_db: f64,
    pub scr_prime_db: f64,
    pub alpha: f64,
}

/// Re-weights every image to an independently drawn SCR'. Each sample's draw
/// is keyed by `(seed, sample id)`; labels are unchanged.
pub fn apply_intervention(data: &Dataset, spec: ScrTargetSpec, seed: u64) -> Result<(Dataset, Vec<InterventionRecord>)> {
    spec.validate().map_err(|source| SyntheticError::Scr { id: "<spec>".into(), source })?;
    let root = SeedPath::root(seed).child("intervention");
    let mut samples = Vec::with_capacity(data.len());
    let mut records = Vec::with_capacity(data.len());
    for s in &data.samples {
        let r = random_scr_reweight(&s.image, &s.labels, spec, root.child(&s.id).seed())
            .map_err(|source| SyntheticError::Scr { id: s.id.clone(), source })?;
        records.push(InterventionRecord { id: s.id.clone(), scr_db: r.scr_db, scr_prime_db: r.scr_prime_db, alpha: r.alpha });
        samples.push(Sample { image: r.image, ..s.clone() });
    }
    Ok((Dataset::new(data.classes.clone(), samples), records))
}

/// Mean clutter amplitude relative to mean target amplitude, in dB; the
/// quantity a clutter-only classifier can key on.
pub fn clutter_level_db(image: &AmplitudeImage, labels: &RegionLabelMap) -> Option<f64> {
    let m = labels.region_means(image).ok()?;
    Some(scr_from_means(m[Region::Target.index()]?, m[Region::Clutter.index()]?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scr::compute_scr;

    fn small(per_class: usize) -> BiasConfig {
        BiasConfig { train_per_class: per_class, test_per_class: per_class, ..Default::default() }
    }

    #[test]
    fn every_shape_is_distinct_and_nonempty() {
        let masks: Vec<_> = TargetShape::ALL.iter().map(|s| s.mask(20)).collect();
        for (i, m) in masks.iter().enumerate() {
            assert!(m.iter().any(|&b| b), "{:?}", TargetShape::ALL[i]);
            assert!(m.iter().any(|&b| !b), "{:?}", TargetShape::ALL[i]);
            for other in &masks[..i] {
                assert_ne!(m, other);
            }
        }
    }

    #[test]
    fn regions_are_nonempty_for_every_class() {
        let cfg = BiasConfig::default();
        for k in 0..cfg.classes.len() {
            let counts = cfg.layout(k).unwrap().counts();
            assert!(counts.iter().all(|&c| c > 0), "class {k}: {counts:?}");
        }
    }

    #[test]
    fn measured_scr_matches_draw() {
        let cfg = small(3);
        for s in generate_dataset(&cfg, Split::Train).unwrap() {
            let got = compute_scr(&s.sample.image, &s.sample.labels).unwrap().scr_db;
            assert!((got - s.scr_db).abs() < 1e-6);
            let [lo, hi] = cfg.classes[s.sample.class_index].scr_range_db;
            assert!(s.scr_db >= lo && s.scr_db <= hi);
        }
    }

    #[test]
    fn class_means_sit_at_range_midpoints() {
        let cfg = BiasConfig { train_per_class: 100, height: 32, width: 32, target_size: 10, shadow_length: 5, ..Default::default() };
        let samples = generate_dataset(&cfg, Split::Train).unwrap();
        for (k, c) in cfg.classes.iter().enumerate() {
            let scrs: Vec<f64> = samples
                .iter()
                .filter(|s| s.sample.class_index == k)
                .map(|s| compute_scr(&s.sample.image, &s.sample.labels).unwrap().scr_db)
                .collect();
            let mean = scrs.iter().sum::<f64>() / scrs.len() as f64;
            let mid = (c.scr_range_db[0] + c.scr_range_db[1]) / 2.0;
            assert!((mean - mid).abs() < 0.3, "{}: {mean} vs {mid}", c.name);
        }
    }

    #[test]
    fn debiased_classes_share_scr() {
        let cfg = BiasConfig { train_per_class: 100, height: 32, width: 32, target_size: 10, shadow_length: 5, ..Default::default() }
            .debiased(11.0, 14.0);
        let samples = generate_dataset(&cfg, Split::Train).unwrap();
        let means: Vec<f64> = (0..cfg.classes.len())
            .map(|k| {
                let v: Vec<f64> = samples.iter().filter(|s| s.sample.class_index == k).map(|s| s.scr_db).collect();
                v.iter().sum::<f64>() / v.len() as f64
            })
            .collect();
        let spread = means.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - means.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(spread < 0.3, "{means:?}");
    }

    #[test]
    fn generation_is_deterministic_and_splits_differ() {
        let cfg = small(2);
        let a = generate_dataset(&cfg, Split::Train).unwrap();
        let b = generate_dataset(&cfg, Split::Train).unwrap();
        assert_eq!(a, b);
        let t = generate_dataset(&cfg, Split::Test).unwrap();
        assert_ne!(a[0].sample.image, t[0].sample.image);
        assert_ne!(a[0].seed, t[0].seed);
    }

    #[test]
    fn template_too_large() {
        let cfg = BiasConfig { height: 16, width: 16, ..Default::default() };
        assert!(matches!(generate_dataset(&cfg, Split::Train), Err(SyntheticError::TemplateTooLarge { .. })));
        let ok = BiasConfig { height: 16, width: 16, target_size: 8, shadow_length: 3, train_per_class: 1, ..Default::default() };
        assert_eq!(generate_dataset(&ok, Split::Train).unwrap().len(), 10);
    }

    #[test]
    fn fixed_intervention_is_exact_and_spares_targets() {
        let cfg = small(2);
        let data = to_dataset(&cfg, &generate_dataset(&cfg, Split::Train).unwrap());
        let (out, records) = apply_intervention(&data, ScrTargetSpec::Fixed { scr_db: 12.0 }, 3).unwrap();
        assert_eq!(records.len(), data.len());
        for (before, after) in data.samples.iter().zip(&out.samples) {
            assert_eq!(before.labels, after.labels);
            assert!((compute_scr(&after.image, &after.labels).unwrap().scr_db - 12.0).abs() < 1e-6);
            for p in 0..before.image.len() {
                if before.labels.region(p) != Region::Clutter {
                    assert_eq!(before.image.data()[p].to_bits(), after.image.data()[p].to_bits());
                }
            }
        }
    }

    fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
        let mut a = a.to_vec();
        let mut b = b.to_vec();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        let (mut i, mut j, mut d) = (0, 0, 0.0f64);
        while i < a.len() && j < b.len() {
            let x = a[i].min(b[j]);
            while i < a.len() && a[i] <= x {
                i += 1;
            }
            while j < b.len() && b[j] <= x {
                j += 1;
            }
            d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
        }
        d
    }

    #[test]
    fn uniform_intervention_on_uniform_data_keeps_distribution() {
        let cfg = BiasConfig { train_per_class: 60, height: 32, width: 32, target_size: 10, shadow_length: 5, ..Default::default() }
            .debiased(11.0, 14.0);
        let samples = generate_dataset(&cfg, Split::Train).unwrap();
        let data = to_dataset(&cfg, &samples);
        let (_, records) = apply_intervention(&data, ScrTargetSpec::default(), 9).unwrap();
        let before: Vec<f64> = records.iter().map(|r| r.scr_db).collect();
        let after: Vec<f64> = records.iter().map(|r| r.scr_prime_db).collect();
        // two-sample KS critical value at alpha = 0.01 for n = m = 600 is about 0.094
        let d = ks_statistic(&before, &after);
        assert!(d < 0.094, "KS statistic {d}");
    }

    #[test]
    fn clutter_alone_predicts_class_on_the_ladder() {
        let cfg = BiasConfig { height: 32, width: 32, target_size: 10, shadow_length: 5, train_per_class: 40, test_per_class: 40, ..Default::default() };
        let train = generate_dataset(&cfg, Split::Train).unwrap();
        let test = generate_dataset(&cfg, Split::Test).unwrap();
        let k = cfg.classes.len();
        // clutter-only feature: mean clutter amplitude
        let clutter_mean = |s: &SyntheticSample| s.sample.labels.region_means(&s.sample.image).unwrap()[0].unwrap();
        let centroids: Vec<f64> = (0..k)
            .map(|c| {
                let v: Vec<f64> = train.iter().filter(|s| s.sample.class_index == c).map(clutter_mean).collect();
                v.iter().sum::<f64>() / v.len() as f64
            })
            .collect();
        let correct = test
            .iter()
            .filter(|s| {
                let m = clutter_mean(s);
                let guess = (0..k).min_by(|&a, &b| (centroids[a] - m).abs().total_cmp(&(centroids[b] - m).abs())).unwrap();
                guess == s.sample.class_index
            })
            .count();
        let acc = correct as f64 / test.len() as f64;
        assert!(acc > 2.0 / k as f64, "clutter-only accuracy {acc}");
    }

    #[test]
    fn texture_knob_changes_clutter_correlation() {
        let cfg = BiasConfig { train_per_class: 1, ..Default::default() }.with_texture_bias();
        assert_eq!(cfg.classes[3].speckle_corr_len, 4);
        let samples = generate_dataset(&cfg, Split::Train).unwrap();
        let lag1 = |s: &SyntheticSample| {
            let (img, lab) = (&s.sample.image, &s.sample.labels);
            let w = img.width();
            let pairs: Vec<(f64, f64)> = (0..img.len() - 1)
                .filter(|&p| p % w != w - 1 && lab.region(p) == Region::Clutter && lab.region(p + 1) == Region::Clutter)
                .map(|p| (img.data()[p], img.data()[p + 1]))
                .collect();
            let n = pairs.len() as f64;
            let (ma, mb) = (pairs.iter().map(|p| p.0).sum::<f64>() / n, pairs.iter().map(|p| p.1).sum::<f64>() / n);
            let cov = pairs.iter().map(|(a, b)| (a - ma) * (b - mb)).sum::<f64>();
            let va = pairs.iter().map(|(a, _)| (a - ma).powi(2)).sum::<f64>();
            let vb = pairs.iter().map(|(_, b)| (b - mb).powi(2)).sum::<f64>();
            cov / (va * vb).sqrt()
        };
        assert!(lag1(&samples[0]).abs() < 0.1);
        assert!(lag1(&samples[3]) > 0.5);
    }
}
