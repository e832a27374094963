//! Per-frame model/accelerator selection.
//!
//! Each call to [`SchedulerState::schedule`] first measures how much the
//! scene changed since the previous frame. If `similarity × confidence` still
//! meets the accuracy threshold the current pair is kept. Otherwise the
//! confidence graph predicts every model's accuracy from the current model's
//! confidence, predictions are smoothed over a momentum window, models below
//! the threshold are filtered out (unless none remain), and every compatible
//! pair of the surviving models is scored as
//!
//! ```text
//! score = R[model] · w_accuracy + energy_score[pair] · w_energy + latency_score[pair] · w_latency
//! ```
//!
//! where the energy and latency scores are min-max normalized over the whole
//! catalog and inverted so that cheaper is larger.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::catalog::{BoundingBox, Catalog, GrayscaleImage, ModelId, Pair};
use crate::confidence_graph::{
    GraphParams, Prediction, PredictionMap, DEFAULT_BUCKET_WIDTH, DEFAULT_DISTANCE_THRESHOLD,
};
use crate::context::{similarity_with_fallback, SimilarityScore};
use crate::error::{Error, Result};

pub const DEFAULT_ACCURACY_THRESHOLD: f64 = 0.25;
pub const DEFAULT_MOMENTUM: usize = 30;

/// Non-negative weights of the three scoring terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Knobs {
    pub w_accuracy: f64,
    pub w_energy: f64,
    pub w_latency: f64,
}

impl Default for Knobs {
    fn default() -> Self {
        Self {
            w_accuracy: 1.0,
            w_energy: 0.5,
            w_latency: 0.5,
        }
    }
}

impl Knobs {
    pub fn new(w_accuracy: f64, w_energy: f64, w_latency: f64) -> Result<Self> {
        let k = Self {
            w_accuracy,
            w_energy,
            w_latency,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.w_accuracy, self.w_energy, self.w_latency];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidParameter(format!(
                "knobs must be non-negative, got {all:?}"
            )));
        }
        if all.iter().all(|w| *w == 0.0) {
            return Err(Error::InvalidParameter("at least one knob must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchedulerConfig {
    pub knobs: Knobs,
    pub accuracy_threshold: f64,
    /// Frames over which predicted accuracies are averaged.
    pub momentum: usize,
    pub distance_threshold: f64,
    pub bucket_width: f64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            knobs: Knobs::default(),
            accuracy_threshold: DEFAULT_ACCURACY_THRESHOLD,
            momentum: DEFAULT_MOMENTUM,
            distance_threshold: DEFAULT_DISTANCE_THRESHOLD,
            bucket_width: DEFAULT_BUCKET_WIDTH,
        }
    }
}

impl SchedulerConfig {
    pub fn validate(&self) -> Result<()> {
        self.knobs.validate()?;
        if !(0.0..=1.0).contains(&self.accuracy_threshold) {
            return Err(Error::InvalidParameter(format!(
                "accuracy threshold must lie in [0, 1], got {}",
                self.accuracy_threshold
            )));
        }
        if self.momentum == 0 {
            return Err(Error::InvalidParameter("momentum must be at least 1".into()));
        }
        self.graph_params().validate()
    }

    pub fn graph_params(&self) -> GraphParams {
        GraphParams {
            bucket_width: self.bucket_width,
            distance_threshold: self.distance_threshold,
            ..GraphParams::default()
        }
    }
}

/// Inverted min-max scores per compatible pair: 1 for the cheapest pair on an
/// axis, 0 for the costliest.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedCosts {
    energy_score: BTreeMap<Pair, f64>,
    latency_score: BTreeMap<Pair, f64>,
}

impl NormalizedCosts {
    pub fn energy_score(&self, pair: &Pair) -> Option<f64> {
        self.energy_score.get(pair).copied()
    }

    pub fn latency_score(&self, pair: &Pair) -> Option<f64> {
        self.latency_score.get(pair).copied()
    }

    pub fn pairs(&self) -> impl Iterator<Item = &Pair> {
        self.energy_score.keys()
    }

    /// Builds scores from explicit per-pair tables.
    pub fn from_scores(
        energy_score: BTreeMap<Pair, f64>,
        latency_score: BTreeMap<Pair, f64>,
    ) -> Result<Self> {
        if energy_score.keys().ne(latency_score.keys()) {
            return Err(Error::InvalidParameter(
                "energy and latency tables cover different pairs".into(),
            ));
        }
        Ok(Self {
            energy_score,
            latency_score,
        })
    }
}

fn inverted_min_max(values: &BTreeMap<Pair, f64>) -> BTreeMap<Pair, f64> {
    let min = values.values().copied().fold(f64::INFINITY, f64::min);
    let max = values.values().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    values
        .iter()
        .map(|(pair, &v)| {
            let score = if span > 0.0 {
                1.0 - (v - min) / span
            } else {
                1.0
            };
            (pair.clone(), score)
        })
        .collect()
}

pub fn normalize_costs(catalog: &Catalog) -> NormalizedCosts {
    let energy = catalog
        .profiles()
        .map(|p| (p.pair(), p.avg_energy_j))
        .collect();
    let latency = catalog
        .profiles()
        .map(|p| (p.pair(), p.avg_latency_s))
        .collect();
    NormalizedCosts {
        energy_score: inverted_min_max(&energy),
        latency_score: inverted_min_max(&latency),
    }
}

/// Bounded FIFO of recent predicted accuracies per model.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumBuffers {
    window: usize,
    buffers: BTreeMap<ModelId, VecDeque<f64>>,
}

impl MomentumBuffers {
    pub fn new(window: usize) -> Self {
        Self {
            window: window.max(1),
            buffers: BTreeMap::new(),
        }
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn get(&self, model: &ModelId) -> Option<&VecDeque<f64>> {
        self.buffers.get(model)
    }

    pub fn push(&mut self, model: &ModelId, value: f64) -> f64 {
        let buf = self.buffers.entry(model.clone()).or_default();
        if buf.len() == self.window {
            buf.pop_front();
        }
        buf.push_back(value);
        buf.iter().sum::<f64>() / buf.len() as f64
    }
}

/// Appends each prediction to its model's buffer and returns the buffer means
/// of the predicted models.
pub fn update_momentum(
    buffers: &mut MomentumBuffers,
    predictions: &[Prediction],
) -> BTreeMap<ModelId, f64> {
    predictions
        .iter()
        .map(|p| (p.model.clone(), buffers.push(&p.model, p.predicted_accuracy)))
        .collect()
}

/// Models whose averaged prediction reaches `threshold`; all of them if none do.
pub fn valid_set(averaged: &BTreeMap<ModelId, f64>, threshold: f64) -> BTreeSet<ModelId> {
    let valid: BTreeSet<ModelId> = averaged
        .iter()
        .filter(|(_, &acc)| acc >= threshold)
        .map(|(m, _)| m.clone())
        .collect();
    if valid.is_empty() {
        averaged.keys().cloned().collect()
    } else {
        valid
    }
}

/// Scores every compatible pair of the models in `valid`.
pub fn score_pairs(
    averaged: &BTreeMap<ModelId, f64>,
    valid: &BTreeSet<ModelId>,
    costs: &NormalizedCosts,
    knobs: &Knobs,
) -> BTreeMap<Pair, f64> {
    costs
        .pairs()
        .filter(|p| valid.contains(&p.model))
        .filter_map(|p| {
            let acc = *averaged.get(&p.model)?;
            let e = costs.energy_score[p];
            let l = costs.latency_score[p];
            Some((
                p.clone(),
                acc * knobs.w_accuracy + e * knobs.w_energy + l * knobs.w_latency,
            ))
        })
        .collect()
}

/// Highest-scoring pair; ties go to the lexicographically smallest pair.
pub fn argmax(scores: &BTreeMap<Pair, f64>) -> Option<&Pair> {
    let mut best: Option<(&Pair, f64)> = None;
    for (pair, &score) in scores {
        if best.is_none_or(|(_, b)| score > b) {
            best = Some((pair, score));
        }
    }
    best.map(|(p, _)| p)
}

/// Outcome of one scheduling step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Decision {
    pub pair: Pair,
    pub rescheduled: bool,
    /// Empty when the current pair was kept.
    pub scores: BTreeMap<Pair, f64>,
    pub similarity: SimilarityScore,
    pub predictions: Vec<Prediction>,
}

/// Mutable scheduler state for one frame stream.
#[derive(Debug, Clone)]
pub struct SchedulerState {
    config: SchedulerConfig,
    map: Arc<PredictionMap>,
    costs: NormalizedCosts,
    buffers: MomentumBuffers,
    last_image: Option<GrayscaleImage>,
    last_box: Option<BoundingBox>,
    started: bool,
}

impl SchedulerState {
    pub fn new(config: SchedulerConfig, map: Arc<PredictionMap>, catalog: &Catalog) -> Result<Self> {
        config.validate()?;
        let costs = normalize_costs(catalog);
        if !map.models().any(|m| catalog.pairs_for(m).next().is_some()) {
            return Err(Error::InvalidParameter(
                "no model of the prediction map has a compatible accelerator".into(),
            ));
        }
        Ok(Self {
            buffers: MomentumBuffers::new(config.momentum),
            config,
            map,
            costs,
            last_image: None,
            last_box: None,
            started: false,
        })
    }

    pub fn config(&self) -> &SchedulerConfig {
        &self.config
    }

    pub fn costs(&self) -> &NormalizedCosts {
        &self.costs
    }

    pub fn buffers(&self) -> &MomentumBuffers {
        &self.buffers
    }

    pub fn prediction_map(&self) -> &PredictionMap {
        &self.map
    }

    /// Pair to run before any frame has been seen. Every model is credited
    /// with the expected accuracy of its highest populated confidence bucket
    /// and the usual filter and scoring apply.
    pub fn initial_pair(&self) -> Pair {
        let seeded: BTreeMap<ModelId, f64> = self
            .map
            .models()
            .filter_map(|m| Some((m.clone(), self.map.top_node(m)?.expected_accuracy)))
            .collect();
        let (pair, _) = self.select(&seeded);
        pair.expect("constructor guarantees a schedulable model")
    }

    fn select(&self, averaged: &BTreeMap<ModelId, f64>) -> (Option<Pair>, BTreeMap<Pair, f64>) {
        let mut valid = valid_set(averaged, self.config.accuracy_threshold);
        let mut scores = score_pairs(averaged, &valid, &self.costs, &self.config.knobs);
        if scores.is_empty() {
            // valid models without any compatible accelerator
            valid = averaged.keys().cloned().collect();
            scores = score_pairs(averaged, &valid, &self.costs, &self.config.knobs);
        }
        (argmax(&scores).cloned(), scores)
    }

    /// One scheduling step for the frame just processed by `current`.
    ///
    /// `confidence` should be 0 when `current` detected nothing.
    pub fn schedule(
        &mut self,
        current: &Pair,
        confidence: f64,
        frame: Option<&GrayscaleImage>,
        bbox: Option<&BoundingBox>,
    ) -> Result<Decision> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::InvalidParameter(format!(
                "confidence {confidence} outside [0, 1]"
            )));
        }
        let s = if self.started {
            similarity_with_fallback(self.last_image.as_ref(), frame, self.last_box.as_ref(), bbox)?
        } else {
            SimilarityScore::ZERO
        };
        self.started = true;
        match (&mut self.last_image, frame) {
            (Some(dst), Some(src)) => dst.clone_from(src),
            (dst, src) => *dst = src.cloned(),
        }
        self.last_box = bbox.copied();

        if s.value() * confidence >= self.config.accuracy_threshold {
            return Ok(Decision {
                pair: current.clone(),
                rescheduled: false,
                scores: BTreeMap::new(),
                similarity: s,
                predictions: Vec::new(),
            });
        }

        let predictions = self.map.predict(&current.model, confidence)?.to_vec();
        let averaged = update_momentum(&mut self.buffers, &predictions);
        let (pair, scores) = self.select(&averaged);
        let pair = pair.unwrap_or_else(|| current.clone());
        Ok(Decision {
            pair,
            rescheduled: true,
            scores,
            similarity: s,
            predictions,
        })
    }
}
