//! Trace-driven simulation of scheduling policies.

mod gen;
mod sweep;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, CharacterizationTrace, FrameRecord, ModelId, Pair};
use crate::confidence_graph::PredictionMap;
use crate::error::{Error, Result};
use crate::loader::ModelLoader;
use crate::scheduler::{SchedulerConfig, SchedulerState};

pub use gen::{gen_trace, ModelBehavior, Scenario, Segment};
pub use sweep::{sensitivity, spearman, sweep, Correlation, SweepGrid, SweepRow};

/// Per-frame scheduling cost charged to the adaptive policy (latency only).
pub const DEFAULT_OVERHEAD_S: f64 = 0.002;
/// IoU at or above which a frame counts as a success.
pub const SUCCESS_IOU: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Energy,
    Accuracy,
    Latency,
}

impl Objective {
    pub const ALL: [Objective; 3] = [Objective::Energy, Objective::Accuracy, Objective::Latency];

    fn suffix(self) -> char {
        match self {
            Objective::Energy => 'e',
            Objective::Accuracy => 'a',
            Objective::Latency => 'l',
        }
    }
}

#[derive(Debug, Clone)]
pub enum Policy {
    Shift {
        config: SchedulerConfig,
        map: Arc<PredictionMap>,
    },
    SingleModel(Pair),
    Oracle(Objective),
}

impl Policy {
    pub fn label(&self) -> String {
        match self {
            Policy::Shift { .. } => "shift".into(),
            Policy::SingleModel(p) => format!("single:{p}"),
            Policy::Oracle(o) => format!("oracle-{}", o.suffix()),
        }
    }
}

/// Policy names as accepted on the command line; `shift` still needs a
/// configuration and prediction map to become a [`Policy`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PolicyKind {
    Shift,
    SingleModel(Pair),
    Oracle(Objective),
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shift" => return Ok(PolicyKind::Shift),
            "oracle-e" => return Ok(PolicyKind::Oracle(Objective::Energy)),
            "oracle-a" => return Ok(PolicyKind::Oracle(Objective::Accuracy)),
            "oracle-l" => return Ok(PolicyKind::Oracle(Objective::Latency)),
            _ => {}
        }
        if let Some(rest) = s.strip_prefix("single:") {
            if let Some((m, a)) = rest.split_once(':') {
                if !m.is_empty() && !a.is_empty() && !a.contains(':') {
                    return Ok(PolicyKind::SingleModel(Pair::new(m, a)));
                }
            }
        }
        Err(Error::InvalidParameter(format!(
            "unknown policy `{s}` (expected shift, single:<model>:<accelerator>, oracle-e, oracle-a or oracle-l)"
        )))
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicyKind::Shift => f.write_str("shift"),
            PolicyKind::SingleModel(p) => write!(f, "single:{p}"),
            PolicyKind::Oracle(o) => write!(f, "oracle-{}", o.suffix()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub overhead_s: f64,
    /// Fill accelerator memory before the first frame (adaptive policy only).
    pub prefill: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            overhead_s: DEFAULT_OVERHEAD_S,
            prefill: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameResult {
    pub frame_index: u64,
    pub pair: Pair,
    pub achieved_iou: f64,
    pub confidence: f64,
    /// Inference latency plus load stall and overhead, where charged.
    pub latency_s: f64,
    /// Inference energy plus load energy, where charged.
    pub energy_j: f64,
    pub swap: bool,
    pub load_time_s: f64,
    pub load_energy_j: f64,
    pub on_gpu: bool,
    /// Whether the scheduler re-scored pairs after this frame.
    pub rescheduled: bool,
    pub similarity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub frames: usize,
    pub avg_iou: f64,
    pub avg_time_s: f64,
    pub avg_energy_j: f64,
    pub success_rate: f64,
    pub non_gpu_fraction: f64,
    pub model_swaps: usize,
    pub pairs_used: usize,
    pub total_time_s: f64,
    pub total_energy_j: f64,
    pub loads: usize,
    pub total_load_time_s: f64,
    pub total_load_energy_j: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationReport {
    pub policy: String,
    #[serde(flatten)]
    pub metrics: Metrics,
    pub per_frame: Vec<FrameResult>,
}

impl SimulationReport {
    /// Recomputes the aggregates from the per-frame rows.
    pub fn is_consistent(&self) -> bool {
        metrics(&self.per_frame).is_ok_and(|m| m == self.metrics)
    }
}

pub fn metrics(per_frame: &[FrameResult]) -> Result<Metrics> {
    if per_frame.is_empty() {
        return Err(Error::EmptyTrace);
    }
    let n = per_frame.len() as f64;
    let sum = |f: fn(&FrameResult) -> f64| per_frame.iter().map(f).sum::<f64>();
    let total_time_s = sum(|r| r.latency_s);
    let total_energy_j = sum(|r| r.energy_j);
    let pairs: BTreeSet<&Pair> = per_frame.iter().map(|r| &r.pair).collect();
    Ok(Metrics {
        frames: per_frame.len(),
        avg_iou: sum(|r| r.achieved_iou) / n,
        avg_time_s: total_time_s / n,
        avg_energy_j: total_energy_j / n,
        success_rate: per_frame.iter().filter(|r| r.achieved_iou >= SUCCESS_IOU).count() as f64 / n,
        non_gpu_fraction: per_frame.iter().filter(|r| !r.on_gpu).count() as f64 / n,
        model_swaps: per_frame.windows(2).filter(|w| w[0].pair != w[1].pair).count(),
        pairs_used: pairs.len(),
        total_time_s,
        total_energy_j,
        loads: per_frame.iter().filter(|r| r.load_time_s > 0.0 || r.load_energy_j > 0.0).count(),
        total_load_time_s: sum(|r| r.load_time_s),
        total_load_energy_j: sum(|r| r.load_energy_j),
    })
}

/// Clairvoyant choice for one frame: among models reaching [`SUCCESS_IOU`]
/// (or all recorded models when none does), the compatible pair that best
/// serves `objective`. Ties go to the lexicographically smallest pair.
pub fn oracle_choose(frame: &FrameRecord, catalog: &Catalog, objective: Objective) -> Result<Pair> {
    let mut candidates: Vec<(&ModelId, f64)> = frame
        .per_model
        .iter()
        .filter(|(_, o)| o.iou >= SUCCESS_IOU)
        .map(|(m, o)| (m, o.iou))
        .collect();
    if candidates.is_empty() {
        candidates = frame.per_model.iter().map(|(m, o)| (m, o.iou)).collect();
    }
    let mut best: Option<(&Pair, f64)> = None;
    for (model, iou) in candidates {
        for pair in catalog.pairs_for(model) {
            let profile = catalog.require_profile(pair)?;
            // lower is better
            let key = match objective {
                Objective::Energy => profile.avg_energy_j,
                Objective::Accuracy => -iou,
                Objective::Latency => profile.avg_latency_s,
            };
            let better = match best {
                None => true,
                Some((bp, bk)) => key < bk || (key == bk && pair < bp),
            };
            if better {
                best = Some((pair, key));
            }
        }
    }
    best.map(|(p, _)| p.clone()).ok_or_else(|| Error::Trace {
        frame: frame.frame_index,
        message: "no recorded model has a compatible accelerator".into(),
    })
}

/// Replays `trace` under `policy`.
pub fn run(
    trace: &CharacterizationTrace,
    catalog: &Catalog,
    policy: &Policy,
    options: &RunOptions,
) -> Result<SimulationReport> {
    if trace.is_empty() {
        return Err(Error::EmptyTrace);
    }
    if !(options.overhead_s >= 0.0 && options.overhead_s.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "scheduler overhead {} must be finite and non-negative",
            options.overhead_s
        )));
    }
    let per_frame = match policy {
        Policy::Shift { config, map } => run_shift(trace, catalog, config, map, options)?,
        Policy::SingleModel(pair) => {
            if !catalog.is_compatible(pair) {
                return Err(Error::IncompatiblePair {
                    model: pair.model.to_string(),
                    accelerator: pair.accelerator.to_string(),
                });
            }
            // resident before the run starts, so no load is ever charged
            run_fixed(trace, catalog, |_| Ok(pair.clone()))?
        }
        Policy::Oracle(objective) => {
            run_fixed(trace, catalog, |f| oracle_choose(f, catalog, *objective))?
        }
    };
    Ok(SimulationReport {
        policy: policy.label(),
        metrics: metrics(&per_frame)?,
        per_frame,
    })
}

fn run_fixed(
    trace: &CharacterizationTrace,
    catalog: &Catalog,
    mut choose: impl FnMut(&FrameRecord) -> Result<Pair>,
) -> Result<Vec<FrameResult>> {
    let mut out: Vec<FrameResult> = Vec::with_capacity(trace.len());
    for frame in trace.frames() {
        let pair = choose(frame)?;
        let profile = catalog.require_profile(&pair)?;
        let (iou, confidence) = frame
            .outcome(&pair.model)
            .map_or((0.0, 0.0), |o| (o.iou, o.confidence));
        let swap = out.last().is_some_and(|prev| prev.pair != pair);
        out.push(FrameResult {
            frame_index: frame.frame_index,
            on_gpu: catalog.is_gpu(&pair.accelerator),
            pair,
            achieved_iou: iou,
            confidence,
            latency_s: profile.avg_latency_s,
            energy_j: profile.avg_energy_j,
            swap,
            load_time_s: 0.0,
            load_energy_j: 0.0,
            rescheduled: false,
            similarity: None,
        });
    }
    Ok(out)
}

fn run_shift(
    trace: &CharacterizationTrace,
    catalog: &Catalog,
    config: &SchedulerConfig,
    map: &Arc<PredictionMap>,
    options: &RunOptions,
) -> Result<Vec<FrameResult>> {
    let mut state = SchedulerState::new(*config, Arc::clone(map), catalog)?;
    let mut loader = ModelLoader::new(catalog);
    let mut pair = state.initial_pair();
    if options.prefill {
        let mut priority: Vec<ModelId> = vec![pair.model.clone()];
        priority.extend(map.models().filter(|m| **m != pair.model).cloned());
        loader.prefill(catalog, &priority);
    }

    let mut out: Vec<FrameResult> = Vec::with_capacity(trace.len());
    for frame in trace.frames() {
        let load = loader.request(&pair, catalog)?;
        let profile = catalog.require_profile(&pair)?;
        let outcome = frame.outcome(&pair.model);
        let (iou, confidence) = outcome.map_or((0.0, 0.0), |o| (o.iou, o.confidence));
        let bbox = outcome.and_then(|o| o.bbox.as_ref());
        let decision = state.schedule(&pair, confidence, frame.frame.as_ref(), bbox)?;
        let swap = out.last().is_some_and(|prev| prev.pair != pair);
        out.push(FrameResult {
            frame_index: frame.frame_index,
            on_gpu: catalog.is_gpu(&pair.accelerator),
            pair,
            achieved_iou: iou,
            confidence,
            latency_s: profile.avg_latency_s + load.time_cost_s + options.overhead_s,
            energy_j: profile.avg_energy_j + load.energy_cost_j,
            swap,
            load_time_s: load.time_cost_s,
            load_energy_j: load.energy_cost_j,
            rescheduled: decision.rescheduled,
            similarity: Some(decision.similarity.value()),
        });
        pair = decision.pair;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{BoundingBox, DetectionOutcome};

    fn frame(index: u64, outcomes: &[(&str, f64)]) -> FrameRecord {
        let gt = BoundingBox::new(10.0, 10.0, 20.0, 20.0).unwrap();
        FrameRecord {
            frame_index: index,
            ground_truth: Some(gt),
            per_model: outcomes
                .iter()
                .map(|&(m, iou)| {
                    (
                        ModelId::new(m),
                        DetectionOutcome {
                            confidence: iou,
                            iou,
                            bbox: (iou > 0.0).then(|| gt.scaled(iou.sqrt())),
                        },
                    )
                })
                .collect(),
            frame: None,
        }
    }

    fn result(pair: (&str, &str), iou: f64) -> FrameResult {
        FrameResult {
            frame_index: 0,
            pair: Pair::new(pair.0, pair.1),
            achieved_iou: iou,
            confidence: 0.0,
            latency_s: 1.0,
            energy_j: 1.0,
            swap: false,
            load_time_s: 0.0,
            load_energy_j: 0.0,
            on_gpu: pair.1 == "gpu",
            rescheduled: false,
            similarity: None,
        }
    }

    #[test]
    fn success_rate_and_mean() {
        let m = metrics(&[result(("a", "gpu"), 0.6), result(("a", "gpu"), 0.4)]).unwrap();
        assert_eq!(m.success_rate, 0.5);
        assert!((m.avg_iou - 0.5).abs() < 1e-12);
        let all = metrics(&vec![result(("a", "gpu"), 0.6); 3]).unwrap();
        assert_eq!(all.success_rate, 1.0);
        assert!(metrics(&[]).is_err());
    }

    #[test]
    fn swaps_and_pairs_used() {
        let rows = [
            result(("A", "gpu"), 0.0),
            result(("A", "gpu"), 0.0),
            result(("B", "gpu"), 0.0),
            result(("A", "gpu"), 0.0),
        ];
        let m = metrics(&rows).unwrap();
        assert_eq!((m.model_swaps, m.pairs_used), (2, 2));
        assert_eq!(m.non_gpu_fraction, 0.0);
    }

    #[test]
    fn yolov7_gpu_single_model_matches_table() {
        let cat = Catalog::builtin();
        let frames = (0..25).map(|i| frame(i, &[("yolov7", 0.7)])).collect();
        let trace = CharacterizationTrace::from_frames(frames).unwrap();
        let report = run(
            &trace,
            &cat,
            &Policy::SingleModel(Pair::new("yolov7", "gpu")),
            &RunOptions::default(),
        )
        .unwrap();
        assert!((report.metrics.avg_time_s - 0.130).abs() < 1e-12);
        assert!((report.metrics.avg_energy_j - 1.968).abs() < 1e-12);
        assert_eq!((report.metrics.model_swaps, report.metrics.pairs_used), (0, 1));
        assert_eq!(report.metrics.total_load_energy_j, 0.0);
        assert!(report.is_consistent());
        assert_eq!(report.policy, "single:yolov7:gpu");
    }

    #[test]
    fn incompatible_single_pair_and_empty_trace() {
        let cat = Catalog::builtin();
        let trace = CharacterizationTrace::from_frames(vec![frame(0, &[("yolov7", 0.7)])]).unwrap();
        let bad = Policy::SingleModel(Pair::new("yolov7-x", "oakd"));
        assert!(matches!(
            run(&trace, &cat, &bad, &RunOptions::default()),
            Err(Error::IncompatiblePair { .. })
        ));
        let empty = CharacterizationTrace::from_frames(vec![]).unwrap();
        let err = run(&empty, &cat, &Policy::Oracle(Objective::Energy), &RunOptions::default())
            .unwrap_err();
        assert!(err.to_string().contains("empty trace"));
    }

    #[test]
    fn oracle_energy_prefers_tiny_on_dla() {
        let cat = Catalog::builtin();
        // both qualify; yolov7-tiny has the cheapest pair (DLA, 0.134 J)
        let f = frame(0, &[("yolov7", 0.8), ("yolov7-tiny", 0.6)]);
        assert_eq!(
            oracle_choose(&f, &cat, Objective::Energy).unwrap(),
            Pair::new("yolov7-tiny", "dla")
        );
        assert_eq!(
            oracle_choose(&f, &cat, Objective::Accuracy).unwrap(),
            Pair::new("yolov7", "dla")
        );
        assert_eq!(
            oracle_choose(&f, &cat, Objective::Latency).unwrap(),
            Pair::new("yolov7-tiny", "dla")
        );
    }

    #[test]
    fn oracle_falls_back_to_all_models() {
        let cat = Catalog::builtin();
        let f = frame(0, &[("yolov7", 0.3), ("ssd-mobilenetv2-320", 0.1)]);
        assert_eq!(
            oracle_choose(&f, &cat, Objective::Energy).unwrap(),
            Pair::new("ssd-mobilenetv2-320", "gpu")
        );
        let none = frame(0, &[]);
        assert!(oracle_choose(&none, &cat, Objective::Energy).is_err());
    }

    #[test]
    fn policy_parsing() {
        assert_eq!("shift".parse::<PolicyKind>().unwrap(), PolicyKind::Shift);
        assert_eq!(
            "single:yolov7:gpu".parse::<PolicyKind>().unwrap(),
            PolicyKind::SingleModel(Pair::new("yolov7", "gpu"))
        );
        assert_eq!(
            "oracle-l".parse::<PolicyKind>().unwrap(),
            PolicyKind::Oracle(Objective::Latency)
        );
        for bad in ["", "single:", "single:yolov7", "single::gpu", "oracle-x", "single:a:b:c"] {
            assert!(bad.parse::<PolicyKind>().is_err(), "{bad}");
        }
        for s in ["shift", "single:a:b", "oracle-e", "oracle-a"] {
            assert_eq!(s.parse::<PolicyKind>().unwrap().to_string(), s);
        }
    }

    #[test]
    fn missing_outcome_scores_zero() {
        let cat = Catalog::builtin();
        let frames = vec![frame(0, &[("yolov7", 0.7)]), frame(1, &[("yolov7-tiny", 0.7)])];
        let trace = CharacterizationTrace::from_frames(frames).unwrap();
        let report = run(
            &trace,
            &cat,
            &Policy::SingleModel(Pair::new("yolov7", "dla")),
            &RunOptions::default(),
        )
        .unwrap();
        assert_eq!(report.per_frame[1].achieved_iou, 0.0);
        assert_eq!(report.per_frame[1].confidence, 0.0);
    }
}
