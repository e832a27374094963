use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{run, Metrics, Policy, RunOptions};
use crate::catalog::{Catalog, CharacterizationTrace};
use crate::confidence_graph::{build_prediction_map, PredictionMap, DEFAULT_BUCKET_WIDTH, DEFAULT_DISTANCE_THRESHOLD};
use crate::error::{Error, Result};
use crate::scheduler::{Knobs, SchedulerConfig, DEFAULT_ACCURACY_THRESHOLD, DEFAULT_MOMENTUM};

/// Value ranges per scheduler parameter. Omitted fields hold the default
/// configuration's single value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    #[serde(default = "one_acc")]
    pub w_accuracy: Vec<f64>,
    #[serde(default = "one_half")]
    pub w_energy: Vec<f64>,
    #[serde(default = "one_half")]
    pub w_latency: Vec<f64>,
    #[serde(default = "one_threshold")]
    pub accuracy_threshold: Vec<f64>,
    #[serde(default = "one_momentum")]
    pub momentum: Vec<usize>,
    #[serde(default = "one_distance")]
    pub distance_threshold: Vec<f64>,
    #[serde(default = "one_width")]
    pub bucket_width: Vec<f64>,
}

fn one_acc() -> Vec<f64> {
    vec![Knobs::default().w_accuracy]
}
fn one_half() -> Vec<f64> {
    vec![0.5]
}
fn one_threshold() -> Vec<f64> {
    vec![DEFAULT_ACCURACY_THRESHOLD]
}
fn one_momentum() -> Vec<usize> {
    vec![DEFAULT_MOMENTUM]
}
fn one_distance() -> Vec<f64> {
    vec![DEFAULT_DISTANCE_THRESHOLD]
}
fn one_width() -> Vec<f64> {
    vec![DEFAULT_BUCKET_WIDTH]
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            w_accuracy: one_acc(),
            w_energy: one_half(),
            w_latency: one_half(),
            accuracy_threshold: one_threshold(),
            momentum: one_momentum(),
            distance_threshold: one_distance(),
            bucket_width: one_width(),
        }
    }
}

impl SweepGrid {
    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::parse("sweep grid", e))
    }

    pub fn len(&self) -> usize {
        self.w_accuracy.len()
            * self.w_energy.len()
            * self.w_latency.len()
            * self.accuracy_threshold.len()
            * self.momentum.len()
            * self.distance_threshold.len()
            * self.bucket_width.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All configurations; the last-listed parameter (`w_latency`) varies
    /// fastest.
    pub fn configs(&self) -> Result<Vec<SchedulerConfig>> {
        if self.is_empty() {
            return Err(Error::InvalidParameter("sweep grid has an empty range".into()));
        }
        let mut out = Vec::with_capacity(self.len());
        for &bucket_width in &self.bucket_width {
            for &distance_threshold in &self.distance_threshold {
                for &accuracy_threshold in &self.accuracy_threshold {
                    for &momentum in &self.momentum {
                        for &w_accuracy in &self.w_accuracy {
                            for &w_energy in &self.w_energy {
                                for &w_latency in &self.w_latency {
                                    let config = SchedulerConfig {
                                        knobs: Knobs {
                                            w_accuracy,
                                            w_energy,
                                            w_latency,
                                        },
                                        accuracy_threshold,
                                        momentum,
                                        distance_threshold,
                                        bucket_width,
                                    };
                                    config.validate()?;
                                    out.push(config);
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub config: SchedulerConfig,
    pub metrics: Metrics,
}

/// Runs the adaptive policy once per grid configuration. `jobs` bounds the
/// worker threads (0 lets the pool decide); row order follows
/// [`SweepGrid::configs`] regardless.
pub fn sweep(
    trace: &CharacterizationTrace,
    catalog: &Catalog,
    grid: &SweepGrid,
    options: &RunOptions,
    jobs: usize,
) -> Result<Vec<SweepRow>> {
    let configs = grid.configs()?;
    // graphs depend only on (bucket width, distance)
    let mut maps: BTreeMap<(u64, u64), Arc<PredictionMap>> = BTreeMap::new();
    for c in &configs {
        let key = (c.bucket_width.to_bits(), c.distance_threshold.to_bits());
        if let Entry::Vacant(e) = maps.entry(key) {
            e.insert(Arc::new(build_prediction_map(trace, c.graph_params())?));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    pool.install(|| {
        configs
            .into_par_iter()
            .map(|config| {
                let map = Arc::clone(&maps[&(config.bucket_width.to_bits(), config.distance_threshold.to_bits())]);
                let policy = Policy::Shift {
                    config,
                    map,
                };
                let report = run(trace, catalog, &policy, options)?;
                Ok(SweepRow {
                    config,
                    metrics: report.metrics,
                })
            })
            .collect()
    })
}

/// Rank correlation with average ranks for ties; `None` when either side
/// is constant or fewer than two samples are given.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut cov, mut vx, mut vy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return None;
    }
    Some(cov / (vx * vy).sqrt())
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Correlation {
    pub parameter: &'static str,
    pub metric: &'static str,
    pub rho: Option<f64>,
}

/// Spearman correlation of every swept parameter against average IoU,
/// energy and latency.
pub fn sensitivity(rows: &[SweepRow]) -> Vec<Correlation> {
    type Getter<T> = (&'static str, fn(&T) -> f64);
    let params: [Getter<SchedulerConfig>; 7] = [
        ("w_accuracy", |c| c.knobs.w_accuracy),
        ("w_energy", |c| c.knobs.w_energy),
        ("w_latency", |c| c.knobs.w_latency),
        ("accuracy_threshold", |c| c.accuracy_threshold),
        ("momentum", |c| c.momentum as f64),
        ("distance_threshold", |c| c.distance_threshold),
        ("bucket_width", |c| c.bucket_width),
    ];
    let metrics: [Getter<Metrics>; 3] = [
        ("avg_iou", |m| m.avg_iou),
        ("avg_energy_j", |m| m.avg_energy_j),
        ("avg_time_s", |m| m.avg_time_s),
    ];
    let mut out = Vec::new();
    for (pname, pf) in params {
        let xs: Vec<f64> = rows.iter().map(|r| pf(&r.config)).collect();
        for (mname, mf) in metrics {
            let ys: Vec<f64> = rows.iter().map(|r| mf(&r.metrics)).collect();
            out.push(Correlation {
                parameter: pname,
                metric: mname,
                rho: spearman(&xs, &ys),
            });
        }
    }
    out
}
