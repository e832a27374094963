//! Dynamic model loading with least-recently-requested eviction, tracked
//! separately for every accelerator.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::catalog::{AcceleratorId, Catalog, ModelId, Pair};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LoadKind {
    Hit,
    ColdLoad,
    EvictLoad,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoadOutcome {
    pub kind: LoadKind,
    /// Victims in eviction order (oldest request first).
    pub evicted: Vec<ModelId>,
    pub time_cost_s: f64,
    pub energy_cost_j: f64,
}

impl LoadOutcome {
    fn hit() -> Self {
        Self {
            kind: LoadKind::Hit,
            evicted: Vec::new(),
            time_cost_s: 0.0,
            energy_cost_j: 0.0,
        }
    }
}

/// Resident models of one accelerator in request order.
#[derive(Debug, Clone, PartialEq)]
pub struct AcceleratorMemory {
    accelerator: AcceleratorId,
    capacity_bytes: u64,
    /// Least recently requested first.
    resident: Vec<(ModelId, u64)>,
    used_bytes: u64,
}

impl AcceleratorMemory {
    pub fn new(accelerator: AcceleratorId, capacity_bytes: u64) -> Self {
        Self {
            accelerator,
            capacity_bytes,
            resident: Vec::new(),
            used_bytes: 0,
        }
    }

    pub fn for_accelerator(catalog: &Catalog, accelerator: &AcceleratorId) -> Result<Self> {
        let spec = catalog
            .accelerator(accelerator.as_str())
            .ok_or_else(|| Error::UnknownAccelerator(accelerator.to_string()))?;
        Ok(Self::new(accelerator.clone(), spec.memory_bytes))
    }

    pub fn accelerator(&self) -> &AcceleratorId {
        &self.accelerator
    }

    pub fn capacity_bytes(&self) -> u64 {
        self.capacity_bytes
    }

    pub fn used_bytes(&self) -> u64 {
        self.used_bytes
    }

    pub fn free_bytes(&self) -> u64 {
        self.capacity_bytes - self.used_bytes
    }

    /// Resident models, least recently requested first.
    pub fn resident(&self) -> impl Iterator<Item = &ModelId> {
        self.resident.iter().map(|(m, _)| m)
    }

    pub fn is_resident(&self, model: &ModelId) -> bool {
        self.resident.iter().any(|(m, _)| m == model)
    }

    fn footprint(&self, model: &ModelId, catalog: &Catalog) -> Result<(u64, f64, f64)> {
        let profile = catalog.require_profile(&Pair::new(model.clone(), self.accelerator.clone()))?;
        Ok((
            profile.memory_bytes,
            profile.load_time_s,
            profile.load_energy_j,
        ))
    }

    /// Makes `model` resident, evicting the least recently requested models
    /// until it fits. Refreshes recency on hits.
    pub fn request(&mut self, model: &ModelId, catalog: &Catalog) -> Result<LoadOutcome> {
        let (size, time, energy) = self.footprint(model, catalog)?;
        if let Some(pos) = self.resident.iter().position(|(m, _)| m == model) {
            let entry = self.resident.remove(pos);
            self.resident.push(entry);
            return Ok(LoadOutcome::hit());
        }
        if size > self.capacity_bytes {
            return Err(Error::ExceedsCapacity {
                model: model.to_string(),
                accelerator: self.accelerator.to_string(),
                required: size,
                capacity: self.capacity_bytes,
            });
        }
        let mut evicted = Vec::new();
        while self.free_bytes() < size {
            let (victim, bytes) = self.resident.remove(0);
            self.used_bytes -= bytes;
            evicted.push(victim);
        }
        self.resident.push((model.clone(), size));
        self.used_bytes += size;
        Ok(LoadOutcome {
            kind: if evicted.is_empty() {
                LoadKind::ColdLoad
            } else {
                LoadKind::EvictLoad
            },
            evicted,
            time_cost_s: time,
            energy_cost_j: energy,
        })
    }

    /// Loads models in priority order while they fit, without evicting.
    /// Incompatible or already resident entries are skipped.
    pub fn prefill(&mut self, catalog: &Catalog, priority: &[ModelId]) -> Vec<ModelId> {
        let mut loaded = Vec::new();
        for model in priority {
            if self.is_resident(model) {
                continue;
            }
            let Ok((size, _, _)) = self.footprint(model, catalog) else {
                continue;
            };
            if size <= self.free_bytes() {
                self.resident.push((model.clone(), size));
                self.used_bytes += size;
                loaded.push(model.clone());
            }
        }
        loaded
    }
}

/// One [`AcceleratorMemory`] per accelerator of a catalog.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelLoader {
    memories: BTreeMap<AcceleratorId, AcceleratorMemory>,
}

impl ModelLoader {
    pub fn new(catalog: &Catalog) -> Self {
        Self {
            memories: catalog
                .accelerators()
                .map(|a| (a.name.clone(), AcceleratorMemory::new(a.name.clone(), a.memory_bytes)))
                .collect(),
        }
    }

    pub fn memory(&self, accelerator: &AcceleratorId) -> Option<&AcceleratorMemory> {
        self.memories.get(accelerator)
    }

    pub fn request(&mut self, pair: &Pair, catalog: &Catalog) -> Result<LoadOutcome> {
        self.memories
            .get_mut(&pair.accelerator)
            .ok_or_else(|| Error::UnknownAccelerator(pair.accelerator.to_string()))?
            .request(&pair.model, catalog)
    }

    pub fn is_resident(&self, pair: &Pair) -> bool {
        self.memories
            .get(&pair.accelerator)
            .is_some_and(|m| m.is_resident(&pair.model))
    }

    /// Fills every accelerator from `priority`, skipping incompatible models.
    pub fn prefill(&mut self, catalog: &Catalog, priority: &[ModelId]) -> Vec<Pair> {
        let mut loaded = Vec::new();
        for mem in self.memories.values_mut() {
            for model in mem.prefill(catalog, priority) {
                loaded.push(Pair::new(model, mem.accelerator.clone()));
            }
        }
        loaded
    }
}
