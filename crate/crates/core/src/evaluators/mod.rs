//! Classifiers as game value functions.
//!
//! A [`GameEvaluator`] maps a (possibly masked) image to one pre-softmax score
//! per class. [`evaluate_coalition_table`] turns an evaluator, an image, its
//! label map and a baseline field into the 8-entry region game.

mod external;

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coalition::{Coalition, CoalitionError, CoalitionValueTable, PlayerSet};
use crate::imaging::{compose_masked_input, AmplitudeImage, ImagingError, Region, RegionLabelMap};

pub use external::{ExternalEvaluator, ExternalOptions, PROTOCOL_VERSION};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("class {class} out of range for {classes} classes")]
    ClassOutOfRange { class: usize, classes: usize },
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error(transparent)]
    Coalition(#[from] CoalitionError),
    #[error("input {index} of batch: {source}")]
    Item { index: usize, source: Box<EvalError> },
    #[error("coalition {coalition}: {source}")]
    AtCoalition { coalition: Coalition, source: Box<EvalError> },
    #[error("input is not a masked composition of the table evaluator's image and baseline ({0} region matches neither)")]
    NotFromTriple(Region),
    #[error("table evaluator was built for a different label map")]
    ForeignLabels,
    #[error("model: {0}")]
    Model(String),
    #[error("protocol version mismatch: expected {expected}, adapter speaks {got}")]
    VersionMismatch { expected: u64, got: u64 },
    #[error("malformed reply: {0}")]
    Malformed(String),
    #[error("no reply within {0:?}")]
    Timeout(std::time::Duration),
    #[error("reply id {got} does not match any outstanding request")]
    IdMismatch { got: u64 },
    #[error("expected {expected} scores, adapter returned {got}")]
    Arity { expected: usize, got: usize },
    #[error("adapter returned a non-finite score")]
    NonFinite,
    #[error("adapter error: {0}")]
    Remote(String),
    #[error("adapter connection closed")]
    Closed,
    #[error("transport: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;

/// A classifier scored by pre-softmax logits (or log-probabilities).
///
/// `labels` is the region map of the sample the input was built from. Most
/// evaluators ignore it; the analytic ones need it to find the regions.
pub trait GameEvaluator: Send + Sync {
    fn name(&self) -> String;

    fn class_count(&self) -> usize;

    fn scores(&self, input: &AmplitudeImage, labels: &RegionLabelMap) -> Result<Vec<f64>>;

    fn score(&self, input: &AmplitudeImage, labels: &RegionLabelMap, class: usize) -> Result<f64> {
        check_class(class, self.class_count())?;
        Ok(self.scores(input, labels)?[class])
    }

    /// Scores several inputs that share one label map. Per-input failures come
    /// back as [`EvalError::Item`].
    fn scores_batch(&self, inputs: &[AmplitudeImage], labels: &RegionLabelMap, class: usize) -> Result<Vec<Vec<f64>>> {
        check_class(class, self.class_count())?;
        inputs
            .iter()
            .enumerate()
            .map(|(index, x)| self.scores(x, labels).map_err(|e| EvalError::Item { index, source: Box::new(e) }))
            .collect()
    }
}

impl<T: GameEvaluator + ?Sized> GameEvaluator for Box<T> {
    fn name(&self) -> String {
        (**self).name()
    }
    fn class_count(&self) -> usize {
        (**self).class_count()
    }
    fn scores(&self, input: &AmplitudeImage, labels: &RegionLabelMap) -> Result<Vec<f64>> {
        (**self).scores(input, labels)
    }
    fn score(&self, input: &AmplitudeImage, labels: &RegionLabelMap, class: usize) -> Result<f64> {
        (**self).score(input, labels, class)
    }
    fn scores_batch(&self, inputs: &[AmplitudeImage], labels: &RegionLabelMap, class: usize) -> Result<Vec<Vec<f64>>> {
        (**self).scores_batch(inputs, labels, class)
    }
}

impl<T: GameEvaluator + ?Sized> GameEvaluator for std::sync::Arc<T> {
    fn name(&self) -> String {
        (**self).name()
    }
    fn class_count(&self) -> usize {
        (**self).class_count()
    }
    fn scores(&self, input: &AmplitudeImage, labels: &RegionLabelMap) -> Result<Vec<f64>> {
        (**self).scores(input, labels)
    }
    fn score(&self, input: &AmplitudeImage, labels: &RegionLabelMap, class: usize) -> Result<f64> {
        (**self).score(input, labels, class)
    }
    fn scores_batch(&self, inputs: &[AmplitudeImage], labels: &RegionLabelMap, class: usize) -> Result<Vec<Vec<f64>>> {
        (**self).scores_batch(inputs, labels, class)
    }
}

pub(crate) fn check_class(class: usize, classes: usize) -> Result<()> {
    if class < classes {
        Ok(())
    } else {
        Err(EvalError::ClassOutOfRange { class, classes })
    }
}

/// Linear model over region means: `score_c = Σ_r w[c][r]·mean_r + b[c]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionMeanLinear {
    /// One `[clutter, target, shadow]` row per class.
    pub weights: Vec<[f64; 3]>,
    pub bias: Vec<f64>,
}

impl RegionMeanLinear {
    pub fn new(weights: Vec<[f64; 3]>, bias: Vec<f64>) -> Result<Self> {
        if weights.len() != bias.len() || weights.is_empty() {
            return Err(EvalError::Model(format!(
                "{} weight rows and {} biases; need one of each per class",
                weights.len(),
                bias.len()
            )));
        }
        if weights.iter().flatten().chain(&bias).any(|v| !v.is_finite()) {
            return Err(EvalError::Model("non-finite parameter".into()));
        }
        Ok(RegionMeanLinear { weights, bias })
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let raw: RegionMeanLinear =
            serde_json::from_str(&text).map_err(|e| EvalError::Model(format!("{}: {e}", path.display())))?;
        Self::new(raw.weights, raw.bias)
    }
}

pub fn region_mean_linear_score(
    model: &RegionMeanLinear,
    image: &AmplitudeImage,
    labels: &RegionLabelMap,
    class: usize,
) -> Result<f64> {
    check_class(class, model.weights.len())?;
    let means = labels.region_means(image)?;
    let w = &model.weights[class];
    Ok(means.iter().zip(w).map(|(m, wr)| m.map_or(0.0, |m| wr * m)).sum::<f64>() + model.bias[class])
}

impl GameEvaluator for RegionMeanLinear {
    fn name(&self) -> String {
        "region-mean-linear".into()
    }

    fn class_count(&self) -> usize {
        self.weights.len()
    }

    fn scores(&self, input: &AmplitudeImage, labels: &RegionLabelMap) -> Result<Vec<f64>> {
        (0..self.class_count()).map(|c| region_mean_linear_score(self, input, labels, c)).collect()
    }
}

/// Scores every class with the mean pixel value of the input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MeanEcho {
    pub classes: usize,
}

impl GameEvaluator for MeanEcho {
    fn name(&self) -> String {
        "echo".into()
    }

    fn class_count(&self) -> usize {
        self.classes
    }

    fn scores(&self, input: &AmplitudeImage, _labels: &RegionLabelMap) -> Result<Vec<f64>> {
        Ok(vec![input.mean(); self.classes])
    }
}

/// Replays a fixed coalition table. The input is matched region by region
/// against the image and baseline it was built from.
#[derive(Debug, Clone)]
pub struct TableEvaluator {
    table: CoalitionValueTable,
    image: AmplitudeImage,
    baseline: AmplitudeImage,
    labels: RegionLabelMap,
    classes: usize,
}

impl TableEvaluator {
    /// `table` must be a 3-player region game. Every class scores the same.
    pub fn new(
        table: CoalitionValueTable,
        image: AmplitudeImage,
        baseline: AmplitudeImage,
        labels: RegionLabelMap,
        classes: usize,
    ) -> Result<Self> {
        if table.n() != Region::COUNT {
            return Err(EvalError::Model(format!("table evaluator needs a 3-player table, got {}", table.n())));
        }
        if classes == 0 {
            return Err(EvalError::Model("table evaluator needs at least one class".into()));
        }
        labels.check_shape("image", image.shape())?;
        labels.check_shape("baseline", baseline.shape())?;
        Ok(TableEvaluator { table, image, baseline, labels, classes })
    }

    pub fn table(&self) -> &CoalitionValueTable {
        &self.table
    }

    fn coalition_of(&self, input: &AmplitudeImage, labels: &RegionLabelMap) -> Result<Coalition> {
        if labels != &self.labels {
            return Err(EvalError::ForeignLabels);
        }
        labels.check_shape("input", input.shape())?;
        let mut keep = Coalition::EMPTY;
        for region in Region::ALL {
            let pixels = || (0..input.len()).filter(|&p| labels.region(p) == region);
            let same = |src: &AmplitudeImage| pixels().all(|p| input.data()[p].to_bits() == src.data()[p].to_bits());
            if same(&self.image) {
                keep = keep.with(region.index());
            } else if !same(&self.baseline) {
                return Err(EvalError::NotFromTriple(region));
            }
        }
        Ok(keep)
    }
}

impl GameEvaluator for TableEvaluator {
    fn name(&self) -> String {
        "table".into()
    }

    fn class_count(&self) -> usize {
        self.classes
    }

    fn scores(&self, input: &AmplitudeImage, labels: &RegionLabelMap) -> Result<Vec<f64>> {
        let s = self.coalition_of(input, labels)?;
        Ok(vec![self.table.value(s); self.classes])
    }
}

/// Clamps inputs into `[0, 1]` before handing them to the wrapped evaluator.
pub struct Clamped<E>(pub E);

impl<E: GameEvaluator> GameEvaluator for Clamped<E> {
    fn name(&self) -> String {
        format!("{}+clamp", self.0.name())
    }

    fn class_count(&self) -> usize {
        self.0.class_count()
    }

    fn scores(&self, input: &AmplitudeImage, labels: &RegionLabelMap) -> Result<Vec<f64>> {
        self.0.scores(&input.clamped_unit(), labels)
    }

    fn scores_batch(&self, inputs: &[AmplitudeImage], labels: &RegionLabelMap, class: usize) -> Result<Vec<Vec<f64>>> {
        let clamped: Vec<_> = inputs.iter().map(AmplitudeImage::clamped_unit).collect();
        self.0.scores_batch(&clamped, labels, class)
    }
}

impl fmt::Debug for dyn GameEvaluator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GameEvaluator({}, {} classes)", self.name(), self.class_count())
    }
}

/// The region players, in coalition bit order.
pub fn region_players() -> PlayerSet {
    PlayerSet::named(Region::ALL.iter().map(|r| r.name())).expect("region names are unique")
}

/// Builds the region game `v(S) = f(x_S; x̃_{N∖S})[class]` for one sample.
pub fn evaluate_coalition_table(
    evaluator: &(impl GameEvaluator + ?Sized),
    image: &AmplitudeImage,
    labels: &RegionLabelMap,
    baseline: &AmplitudeImage,
    class: usize,
) -> Result<CoalitionValueTable> {
    let order: Vec<Coalition> = (0..1u64 << Region::COUNT).map(Coalition).collect();
    evaluate_in_order(evaluator, image, labels, baseline, class, &order)
}

fn evaluate_in_order(
    evaluator: &(impl GameEvaluator + ?Sized),
    image: &AmplitudeImage,
    labels: &RegionLabelMap,
    baseline: &AmplitudeImage,
    class: usize,
    order: &[Coalition],
) -> Result<CoalitionValueTable> {
    check_class(class, evaluator.class_count())?;
    let inputs = order
        .iter()
        .map(|&s| compose_masked_input(image, labels, s, baseline))
        .collect::<Result<Vec<_>, _>>()?;
    let scores = evaluator.scores_batch(&inputs, labels, class).map_err(|e| match e {
        EvalError::Item { index, source } => EvalError::AtCoalition { coalition: order[index], source },
        other => other,
    })?;
    if scores.len() != order.len() {
        return Err(EvalError::Arity { expected: order.len(), got: scores.len() });
    }
    let mut values = vec![0.0; order.len()];
    for (&s, row) in order.iter().zip(scores) {
        let v = *row.get(class).ok_or(EvalError::Arity { expected: evaluator.class_count(), got: row.len() })?;
        values[s.bits() as usize] = v;
    }
    CoalitionValueTable::new(region_players(), values).map_err(|e| match e {
        CoalitionError::NonFinite(s) => EvalError::AtCoalition { coalition: Coalition(s), source: Box::new(EvalError::NonFinite) },
        other => other.into(),
    })
}
