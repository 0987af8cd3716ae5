//! Amplitude images, region label maps, baseline fields and the masked-input
//! composition that turns a coalition of regions into a classifier input.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coalition::Coalition;
use crate::seed::SeedPath;

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("image dimensions {height}x{width} do not match {len} values")]
    LengthMismatch { height: usize, width: usize, len: usize },
    #[error("image must have positive dimensions, got {height}x{width}")]
    EmptyImage { height: usize, width: usize },
    #[error("pixel {index} is {value}, amplitudes must be finite and non-negative")]
    BadPixel { index: usize, value: f64 },
    #[error("label value {value} at pixel {index} is not one of 0=clutter, 1=target, 2=shadow")]
    BadLabel { index: usize, value: u8 },
    #[error("shape mismatch: {what} is {got:?}, expected {expected:?}")]
    ShapeMismatch { what: &'static str, expected: (usize, usize), got: (usize, usize) },
    #[error("invalid baseline: {0}")]
    BadBaseline(String),
    #[error("malformed PGM {path}: {reason}")]
    Pgm { path: PathBuf, reason: String },
    #[error("malformed raw f32 image {path}: {reason}")]
    RawF32 { path: PathBuf, reason: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

pub type Result<T, E = ImagingError> = std::result::Result<T, E>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ImagingError + '_ {
    move |source| ImagingError::Io { path: path.to_path_buf(), source }
}

/// The three image regions, which are also the players of the attribution game.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
#[repr(u8)]
pub enum Region {
    Clutter = 0,
    Target = 1,
    Shadow = 2,
}

impl Region {
    pub const ALL: [Region; 3] = [Region::Clutter, Region::Target, Region::Shadow];
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: u8) -> Option<Region> {
        match i {
            0 => Some(Region::Clutter),
            1 => Some(Region::Target),
            2 => Some(Region::Shadow),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Region::Clutter => "clutter",
            Region::Target => "target",
            Region::Shadow => "shadow",
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Row-major real amplitude image. Values are nominally in `[0, 1]` but
/// anything finite and non-negative is accepted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeImage {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl AmplitudeImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(ImagingError::EmptyImage { height, width });
        }
        if height * width != data.len() {
            return Err(ImagingError::LengthMismatch { height, width, len: data.len() });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(ImagingError::BadPixel { index, value: data[index] });
        }
        Ok(AmplitudeImage { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Copy with every amplitude clamped into `[0, 1]`.
    pub fn clamped_unit(&self) -> Self {
        AmplitudeImage {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| v.min(1.0)).collect(),
        }
    }

    /// Copy with every pixel replaced by `f(pixel, value)`. Callers keep the
    /// output finite and non-negative.
    pub(crate) fn map_pixels(&self, mut f: impl FnMut(usize, f64) -> f64) -> Self {
        AmplitudeImage {
            height: self.height,
            width: self.width,
            data: self.data.iter().enumerate().map(|(p, &v)| f(p, v)).collect(),
        }
    }
}

/// Per-pixel region assignment for one image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionLabelMap {
    height: usize,
    width: usize,
    labels: Vec<Region>,
}

impl RegionLabelMap {
    pub fn new(height: usize, width: usize, labels: Vec<Region>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(ImagingError::EmptyImage { height, width });
        }
        if height * width != labels.len() {
            return Err(ImagingError::LengthMismatch { height, width, len: labels.len() });
        }
        Ok(RegionLabelMap { height, width, labels })
    }

    /// Parses raw label bytes (0 clutter, 1 target, 2 shadow).
    pub fn from_raw(height: usize, width: usize, raw: &[u8]) -> Result<Self> {
        let labels = raw
            .iter()
            .enumerate()
            .map(|(index, &value)| Region::from_index(value).ok_or(ImagingError::BadLabel { index, value }))
            .collect::<Result<Vec<_>>>()?;
        Self::new(height, width, labels)
    }

    /// Merges possibly overlapping region masks. Overlaps resolve as
    /// target > shadow > clutter; pixels covered by neither mask are clutter.
    pub fn from_masks(height: usize, width: usize, target: &[bool], shadow: &[bool]) -> Result<Self> {
        for (what, m) in [("target mask", target), ("shadow mask", shadow)] {
            if m.len() != height * width {
                return Err(ImagingError::ShapeMismatch { what, expected: (height, width), got: (1, m.len()) });
            }
        }
        let labels = target
            .iter()
            .zip(shadow)
            .map(|(&t, &s)| match (t, s) {
                (true, _) => Region::Target,
                (false, true) => Region::Shadow,
                _ => Region::Clutter,
            })
            .collect();
        Self::new(height, width, labels)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn labels(&self) -> &[Region] {
        &self.labels
    }

    pub fn region(&self, pixel: usize) -> Region {
        self.labels[pixel]
    }

    pub fn to_raw(&self) -> Vec<u8> {
        self.labels.iter().map(|&r| r as u8).collect()
    }

    /// Pixel count per region, indexed by [`Region::index`].
    pub fn counts(&self) -> [usize; 3] {
        let mut out = [0; 3];
        for r in &self.labels {
            out[r.index()] += 1;
        }
        out
    }

    pub fn check_shape(&self, what: &'static str, shape: (usize, usize)) -> Result<()> {
        if shape == self.shape() {
            Ok(())
        } else {
            Err(ImagingError::ShapeMismatch { what, expected: self.shape(), got: shape })
        }
    }

    /// Per-region mean of `image`; `None` for an empty region.
    pub fn region_means(&self, image: &AmplitudeImage) -> Result<[Option<f64>; 3]> {
        self.check_shape("image", image.shape())?;
        let mut sums = [0.0; 3];
        let mut counts = [0usize; 3];
        for (&r, &v) in self.labels.iter().zip(image.data()) {
            sums[r.index()] += v;
            counts[r.index()] += 1;
        }
        Ok(std::array::from_fn(|k| (counts[k] > 0).then(|| sums[k] / counts[k] as f64)))
    }
}

/// Binary masks of the three regions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionMasks {
    pub clutter: Vec<bool>,
    pub target: Vec<bool>,
    pub shadow: Vec<bool>,
}

impl RegionMasks {
    pub fn get(&self, region: Region) -> &[bool] {
        match region {
            Region::Clutter => &self.clutter,
            Region::Target => &self.target,
            Region::Shadow => &self.shadow,
        }
    }
}

pub fn masks_from_labelmap(labels: &RegionLabelMap) -> RegionMasks {
    let mask = |want: Region| labels.labels.iter().map(|&r| r == want).collect();
    RegionMasks { clutter: mask(Region::Clutter), target: mask(Region::Target), shadow: mask(Region::Shadow) }
}

/// How "absent" regions are filled in the masked input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaselineSpec {
    /// `|g|` with `g ~ N(0, sigma²)` per pixel.
    HalfNormal { sigma: f64 },
    Constant { value: f64 },
    Zero,
}

impl Default for BaselineSpec {
    fn default() -> Self {
        BaselineSpec::HalfNormal { sigma: 0.1 }
    }
}

impl BaselineSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            BaselineSpec::HalfNormal { sigma } if !(sigma > 0.0 && sigma.is_finite()) => {
                Err(ImagingError::BadBaseline(format!("half-normal sigma must be positive, got {sigma}")))
            }
            BaselineSpec::Constant { value } if !(value >= 0.0 && value.is_finite()) => {
                Err(ImagingError::BadBaseline(format!("constant must be non-negative, got {value}")))
            }
            _ => Ok(()),
        }
    }

    /// True when sampling ignores the seed.
    pub fn is_deterministic(&self) -> bool {
        !matches!(self, BaselineSpec::HalfNormal { .. })
    }
}

impl fmt::Display for BaselineSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BaselineSpec::HalfNormal { sigma } => write!(f, "half_normal:{sigma}"),
            BaselineSpec::Constant { value } => write!(f, "constant:{value}"),
            BaselineSpec::Zero => f.write_str("zero"),
        }
    }
}

impl FromStr for BaselineSpec {
    type Err = ImagingError;

    /// `half_normal:0.1`, `half_normal` (sigma 0.1), `constant:0.3` or `zero`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, arg) = match s.split_once(':') {
            Some((k, a)) => (k, Some(a)),
            None => (s, None),
        };
        let num = |a: Option<&str>| -> Result<f64> {
            a.ok_or_else(|| ImagingError::BadBaseline(format!("{kind} needs a value")))?
                .trim()
                .parse::<f64>()
                .map_err(|e| ImagingError::BadBaseline(format!("{s}: {e}")))
        };
        let spec = match kind.trim() {
            "half_normal" | "half-normal" => match arg {
                Some(_) => BaselineSpec::HalfNormal { sigma: num(arg)? },
                None => BaselineSpec::default(),
            },
            "constant" => BaselineSpec::Constant { value: num(arg)? },
            "zero" => BaselineSpec::Zero,
            other => return Err(ImagingError::BadBaseline(format!("unknown baseline kind {other:?}"))),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// A sampled baseline image with the seed that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineField {
    pub image: AmplitudeImage,
    pub spec: BaselineSpec,
    pub seed: u64,
}

pub fn sample_baseline(spec: BaselineSpec, height: usize, width: usize, seed: u64) -> Result<BaselineField> {
    spec.validate()?;
    if height == 0 || width == 0 {
        return Err(ImagingError::EmptyImage { height, width });
    }
    let len = height * width;
    let data = match spec {
        BaselineSpec::HalfNormal { sigma } => {
            let normal = Normal::new(0.0, sigma).map_err(|e| ImagingError::BadBaseline(e.to_string()))?;
            let mut rng = SeedPath::root(seed).rng();
            (0..len).map(|_| normal.sample(&mut rng).abs()).collect()
        }
        BaselineSpec::Constant { value } => vec![value; len],
        BaselineSpec::Zero => vec![0.0; len],
    };
    Ok(BaselineField { image: AmplitudeImage::new(height, width, data)?, spec, seed })
}

/// The game input for coalition `keep` over regions (bit `r` = region `r`):
/// kept regions show the image, all other pixels show the baseline.
pub fn compose_masked_input(
    image: &AmplitudeImage,
    labels: &RegionLabelMap,
    keep: Coalition,
    baseline: &AmplitudeImage,
) -> Result<AmplitudeImage> {
    labels.check_shape("image", image.shape())?;
    labels.check_shape("baseline", baseline.shape())?;
    Ok(image.map_pixels(|p, v| if keep.contains(labels.region(p).index()) { v } else { baseline.data[p] }))
}

/// On-disk pixel encodings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageFormat {
    /// Binary PGM (P5), 8 bits per pixel, scaled by 1/maxval.
    Pgm8,
    /// Little-endian f32, row-major, with a `<file>.json` sidecar.
    RawF32,
}

impl ImageFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ImageFormat::Pgm8 => "pgm",
            ImageFormat::RawF32 => "f32",
        }
    }

    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "pgm" => Some(ImageFormat::Pgm8),
            "f32" | "raw" => Some(ImageFormat::RawF32),
            _ => None,
        }
    }
}

impl FromStr for ImageFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "pgm8" | "pgm" => Ok(ImageFormat::Pgm8),
            "rawf32" | "f32" => Ok(ImageFormat::RawF32),
            other => Err(format!("unknown image format {other:?} (expected pgm8 or rawf32)")),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RawSidecar {
    height: usize,
    width: usize,
    dtype: String,
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Parses a binary PGM, returning `(height, width, maxval, pixels)`.
pub fn parse_pgm(bytes: &[u8], path: &Path) -> Result<(usize, usize, u16, Vec<u8>)> {
    let bad = |reason: &str| ImagingError::Pgm { path: path.to_path_buf(), reason: reason.to_string() };
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(bad("missing P5 magic"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(bad("truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(bad("expected a number in the header"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("header number out of range"))?;
    }
    let [width, height, maxval] = fields;
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(bad("missing whitespace after maxval"));
    }
    pos += 1;
    if width == 0 || height == 0 {
        return Err(bad("zero dimension"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(bad("only 8-bit PGM (maxval 1..=255) is supported"));
    }
    let payload = &bytes[pos..];
    if payload.len() != width * height {
        return Err(bad(&format!("expected {} pixel bytes, found {}", width * height, payload.len())));
    }
    Ok((height, width, maxval as u16, payload.to_vec()))
}

pub fn encode_pgm(height: usize, width: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

pub fn load_image(path: &Path, format: ImageFormat) -> Result<AmplitudeImage> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    match format {
        ImageFormat::Pgm8 => {
            let (h, w, maxval, px) = parse_pgm(&bytes, path)?;
            let scale = f64::from(maxval);
            AmplitudeImage::new(h, w, px.iter().map(|&b| f64::from(b) / scale).collect())
        }
        ImageFormat::RawF32 => {
            let bad = |reason: String| ImagingError::RawF32 { path: path.to_path_buf(), reason };
            let side_path = sidecar_path(path);
            let side_text = std::fs::read_to_string(&side_path).map_err(io_err(&side_path))?;
            let side: RawSidecar =
                serde_json::from_str(&side_text).map_err(|e| bad(format!("bad sidecar: {e}")))?;
            if side.dtype != "f32le" {
                return Err(bad(format!("unsupported dtype {:?}", side.dtype)));
            }
            if bytes.len() % 4 != 0 {
                return Err(bad(format!("payload of {} bytes is not a whole number of floats", bytes.len())));
            }
            let floats = bytes.len() / 4;
            if floats != side.height * side.width {
                return Err(bad(format!(
                    "sidecar says {}x{} but payload has {floats} floats",
                    side.height, side.width
                )));
            }
            let data = bytes
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
                .collect();
            AmplitudeImage::new(side.height, side.width, data)
        }
    }
}

/// Writes `image`. PGM quantizes to the 1/255 grid (values above 1 saturate);
/// rawf32 rounds to single precision.
pub fn save_image(path: &Path, image: &AmplitudeImage, format: ImageFormat) -> Result<()> {
    match format {
        ImageFormat::Pgm8 => {
            let px: Vec<u8> = image.data().iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8).collect();
            std::fs::write(path, encode_pgm(image.height(), image.width(), &px)).map_err(io_err(path))
        }
        ImageFormat::RawF32 => {
            let bytes: Vec<u8> = image.data().iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
            std::fs::write(path, bytes).map_err(io_err(path))?;
            let side = RawSidecar { height: image.height(), width: image.width(), dtype: "f32le".into() };
            let side_path = sidecar_path(path);
            std::fs::write(&side_path, serde_json::to_string(&side).expect("sidecar serializes"))
                .map_err(io_err(&side_path))
        }
    }
}

/// Label maps are stored as PGM with raw values 0/1/2.
pub fn load_labels(path: &Path) -> Result<RegionLabelMap> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    let (h, w, _, px) = parse_pgm(&bytes, path)?;
    RegionLabelMap::from_raw(h, w, &px)
}

pub fn save_labels(path: &Path, labels: &RegionLabelMap) -> Result<()> {
    std::fs::write(path, encode_pgm(labels.height(), labels.width(), &labels.to_raw())).map_err(io_err(path))
}
