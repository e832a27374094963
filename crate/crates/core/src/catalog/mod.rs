//! Models, accelerators and their measured performance traits.
//!
//! A [`Catalog`] is loaded from a JSON document with the top-level keys
//! `accelerators`, `models`, `compatibility` and `profiles`. Validation runs at
//! load time, so every `Catalog` value in memory satisfies its invariants and is
//! immutable afterwards.

mod geometry;
mod image;
mod trace;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use self::geometry::{iou, BoundingBox};
pub use self::image::GrayscaleImage;
pub use self::trace::{load_trace, CharacterizationTrace, DetectionOutcome, FrameRecord};

/// Default relative tolerance for `energy ≈ latency × power`.
pub const DEFAULT_ENERGY_TOLERANCE: f64 = 0.05;

const BUILTIN_CATALOG: &str = include_str!("../../data/builtin_catalog.json");

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(String);

        impl $name {
            pub fn new(name: impl Into<String>) -> Self {
                Self(name.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }

        impl std::borrow::Borrow<str> for $name {
            fn borrow(&self) -> &str {
                &self.0
            }
        }
    };
}

string_id!(
    /// Name of a compute unit, e.g. `gpu`, `dla`, `oakd`.
    AcceleratorId
);
string_id!(
    /// Name of an object detection model.
    ModelId
);

/// A (model, accelerator) combination; the scheduler's unit of choice.
///
/// Ordering is lexicographic by model name, then accelerator name, which is
/// also the tie-break order used everywhere a choice between pairs is made.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Pair {
    pub model: ModelId,
    pub accelerator: AcceleratorId,
}

impl Pair {
    pub fn new(model: impl Into<ModelId>, accelerator: impl Into<AcceleratorId>) -> Self {
        Self {
            model: model.into(),
            accelerator: accelerator.into(),
        }
    }
}

impl From<String> for ModelId {
    fn from(s: String) -> Self {
        Self(s)
    }
}

impl From<String> for AcceleratorId {
    fn from(s: String) -> Self {
        Self(s)
    }
}

impl fmt::Display for Pair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.model, self.accelerator)
    }
}

/// Energy in joules drawn over `latency_s` seconds at `power_w` watts.
pub fn energy_of(latency_s: f64, power_w: f64) -> f64 {
    latency_s * power_w
}

/// An accelerator entry of the catalog file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceleratorSpec {
    pub name: AcceleratorId,
    /// Memory available for resident models.
    pub memory_bytes: u64,
    /// Marks the GPU baseline accelerator. When omitted, an accelerator named
    /// `gpu` is the GPU.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gpu: Option<bool>,
}

impl AcceleratorSpec {
    pub fn is_gpu(&self) -> bool {
        self.gpu.unwrap_or(self.name.as_str() == "gpu")
    }
}

/// Performance traits of one model on one accelerator, in SI units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelProfile {
    pub model: ModelId,
    pub accelerator: AcceleratorId,
    pub avg_latency_s: f64,
    pub avg_power_w: f64,
    pub avg_energy_j: f64,
    pub memory_bytes: u64,
    pub load_time_s: f64,
    pub load_energy_j: f64,
}

impl ModelProfile {
    pub fn pair(&self) -> Pair {
        Pair::new(self.model.clone(), self.accelerator.clone())
    }
}

/// On-disk form of a catalog. Field names match the file schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatalogDocument {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub energy_tolerance: Option<f64>,
    pub accelerators: Vec<AcceleratorSpec>,
    pub models: Vec<ModelId>,
    /// Model name to the accelerators that can execute it.
    pub compatibility: BTreeMap<ModelId, Vec<AcceleratorId>>,
    pub profiles: Vec<ModelProfile>,
}

/// A validated set of models, accelerators and per-pair profiles.
#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    accelerators: BTreeMap<AcceleratorId, AcceleratorSpec>,
    models: BTreeSet<ModelId>,
    profiles: BTreeMap<Pair, ModelProfile>,
    energy_tolerance: Option<f64>,
}

impl Catalog {
    /// The catalog bundled with the crate: eight detectors across GPU, DLA and
    /// OAK-D, 18 compatible pairs in total.
    pub fn builtin() -> Catalog {
        Catalog::from_json_str(BUILTIN_CATALOG).expect("bundled catalog is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Catalog> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Catalog::from_json_str(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json_string()).map_err(|e| Error::io(path, e))
    }

    pub fn from_json_str(text: &str) -> Result<Catalog> {
        let doc: CatalogDocument =
            serde_json::from_str(text).map_err(|e| Error::parse("catalog", e))?;
        Catalog::from_document(doc)
    }

    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_document()).expect("catalog serializes");
        s.push('\n');
        s
    }

    pub fn from_document(doc: CatalogDocument) -> Result<Catalog> {
        let tolerance = doc.energy_tolerance.unwrap_or(DEFAULT_ENERGY_TOLERANCE);
        if !(tolerance.is_finite() && (0.0..1.0).contains(&tolerance)) {
            return Err(Error::Catalog(format!(
                "energy_tolerance must lie in [0, 1), got {tolerance}"
            )));
        }

        let mut accelerators = BTreeMap::new();
        for acc in doc.accelerators {
            if acc.name.as_str().is_empty() {
                return Err(Error::Catalog("empty accelerator name".into()));
            }
            if acc.memory_bytes == 0 {
                return Err(Error::Catalog(format!(
                    "accelerator `{}` has zero memory_bytes",
                    acc.name
                )));
            }
            let name = acc.name.clone();
            if accelerators.insert(name.clone(), acc).is_some() {
                return Err(Error::Catalog(format!("duplicate accelerator `{name}`")));
            }
        }

        let mut models = BTreeSet::new();
        for model in doc.models {
            if model.as_str().is_empty() {
                return Err(Error::Catalog("empty model name".into()));
            }
            if !models.insert(model.clone()) {
                return Err(Error::Catalog(format!("duplicate model `{model}`")));
            }
        }

        let mut compatible = BTreeSet::new();
        for (model, accs) in doc.compatibility {
            if !models.contains(&model) {
                return Err(Error::Catalog(format!(
                    "compatibility lists unknown model `{model}`"
                )));
            }
            for acc in accs {
                if !accelerators.contains_key(&acc) {
                    return Err(Error::Catalog(format!(
                        "compatibility lists unknown accelerator `{acc}` for `{model}`"
                    )));
                }
                compatible.insert(Pair::new(model.clone(), acc));
            }
        }
        if compatible.is_empty() {
            return Err(Error::Catalog("no compatible model/accelerator pair".into()));
        }

        let mut profiles = BTreeMap::new();
        for profile in doc.profiles {
            let pair = profile.pair();
            if !models.contains(&pair.model) {
                return Err(Error::Catalog(format!(
                    "profile for unknown model `{}`",
                    pair.model
                )));
            }
            if !accelerators.contains_key(&pair.accelerator) {
                return Err(Error::Catalog(format!(
                    "profile for unknown accelerator `{}`",
                    pair.accelerator
                )));
            }
            if !compatible.contains(&pair) {
                return Err(Error::Catalog(format!(
                    "profile for incompatible pair {pair}"
                )));
            }
            check_profile(&profile, tolerance)?;
            if profiles.insert(pair.clone(), profile).is_some() {
                return Err(Error::Catalog(format!("duplicate profile for pair {pair}")));
            }
        }
        if let Some(missing) = compatible.iter().find(|p| !profiles.contains_key(*p)) {
            return Err(Error::Catalog(format!(
                "compatible pair {missing} has no profile"
            )));
        }

        Ok(Catalog {
            accelerators,
            models,
            profiles,
            energy_tolerance: doc.energy_tolerance,
        })
    }

    pub fn to_document(&self) -> CatalogDocument {
        let mut compatibility: BTreeMap<ModelId, Vec<AcceleratorId>> = BTreeMap::new();
        for pair in self.profiles.keys() {
            compatibility
                .entry(pair.model.clone())
                .or_default()
                .push(pair.accelerator.clone());
        }
        CatalogDocument {
            energy_tolerance: self.energy_tolerance,
            accelerators: self.accelerators.values().cloned().collect(),
            models: self.models.iter().cloned().collect(),
            compatibility,
            profiles: self.profiles.values().cloned().collect(),
        }
    }

    pub fn models(&self) -> impl Iterator<Item = &ModelId> {
        self.models.iter()
    }

    pub fn has_model(&self, model: &str) -> bool {
        self.models.contains(model)
    }

    pub fn accelerators(&self) -> impl Iterator<Item = &AcceleratorSpec> {
        self.accelerators.values()
    }

    pub fn accelerator(&self, id: &str) -> Option<&AcceleratorSpec> {
        self.accelerators.get(id)
    }

    pub fn is_compatible(&self, pair: &Pair) -> bool {
        self.profiles.contains_key(pair)
    }

    pub fn profile(&self, pair: &Pair) -> Option<&ModelProfile> {
        self.profiles.get(pair)
    }

    /// Looks up a profile, failing with a descriptive error for unknown or
    /// incompatible pairs.
    pub fn require_profile(&self, pair: &Pair) -> Result<&ModelProfile> {
        if let Some(p) = self.profiles.get(pair) {
            return Ok(p);
        }
        if !self.models.contains(&pair.model) {
            return Err(Error::UnknownModel(pair.model.to_string()));
        }
        if !self.accelerators.contains_key(&pair.accelerator) {
            return Err(Error::UnknownAccelerator(pair.accelerator.to_string()));
        }
        Err(Error::IncompatiblePair {
            model: pair.model.to_string(),
            accelerator: pair.accelerator.to_string(),
        })
    }

    /// All profiles in pair order.
    pub fn profiles(&self) -> impl Iterator<Item = &ModelProfile> {
        self.profiles.values()
    }

    /// All compatible pairs in pair order.
    pub fn pairs(&self) -> impl Iterator<Item = &Pair> {
        self.profiles.keys()
    }

    /// Compatible pairs of one model.
    pub fn pairs_for<'a>(&'a self, model: &'a ModelId) -> impl Iterator<Item = &'a Pair> + 'a {
        self.profiles.keys().filter(move |p| &p.model == model)
    }

    pub fn energy_tolerance(&self) -> f64 {
        self.energy_tolerance.unwrap_or(DEFAULT_ENERGY_TOLERANCE)
    }

    pub fn is_gpu(&self, accelerator: &AcceleratorId) -> bool {
        self.accelerators
            .get(accelerator)
            .is_some_and(AcceleratorSpec::is_gpu)
    }
}

fn check_profile(p: &ModelProfile, tolerance: f64) -> Result<()> {
    let pair = p.pair();
    let positive = [
        ("avg_latency_s", p.avg_latency_s),
        ("avg_power_w", p.avg_power_w),
        ("avg_energy_j", p.avg_energy_j),
    ];
    for (field, value) in positive {
        if !(value.is_finite() && value > 0.0) {
            return Err(Error::Catalog(format!(
                "{pair}: {field} must be positive, got {value}"
            )));
        }
    }
    for (field, value) in [("load_time_s", p.load_time_s), ("load_energy_j", p.load_energy_j)] {
        if !(value.is_finite() && value >= 0.0) {
            return Err(Error::Catalog(format!(
                "{pair}: {field} must be non-negative, got {value}"
            )));
        }
    }
    if p.memory_bytes == 0 {
        return Err(Error::Catalog(format!("{pair}: memory_bytes must be positive")));
    }
    let expected = energy_of(p.avg_latency_s, p.avg_power_w);
    if (p.avg_energy_j - expected).abs() > tolerance * p.avg_energy_j {
        return Err(Error::Catalog(format!(
            "{pair}: avg_energy_j {} differs from latency × power = {expected:.4} by more than {}%",
            p.avg_energy_j,
            tolerance * 100.0
        )));
    }
    Ok(())
}
