//! Confidence graphs: turning one model's confidence score into accuracy
//! predictions for every characterized model.
//!
//! Construction runs offline over a characterization trace:
//!
//! 1. every (model, confidence bucket) seen in the trace becomes a node whose
//!    expected accuracy is the mean IoU of the frames that landed in it;
//! 2. nodes active on the same frame are joined by an undirected edge whose
//!    weight counts the frames they shared;
//! 3. each node normalizes its incident weights by its own strongest edge and
//!    inverts them into directed costs, `1 - w / w_max`;
//! 4. from every node, all nodes within a cumulative cost threshold are
//!    collected (cheapest path);
//! 5. nodes of the same model in that neighborhood are merged by an
//!    inverse-distance weighted average;
//! 6. the result is stored as a lookup table keyed by node.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::catalog::{CharacterizationTrace, ModelId};
use crate::error::{Error, Result};

pub const DEFAULT_BUCKET_WIDTH: f64 = 0.1;
pub const DEFAULT_DISTANCE_THRESHOLD: f64 = 0.5;
/// Keeps inverse-distance weights finite at distance 0.
pub const CONSOLIDATION_EPSILON: f64 = 1e-6;

// Absorbs representation error at bucket boundaries, e.g. 0.3 / 0.1.
const BOUNDARY_SLACK: f64 = 1e-9;

/// Construction parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphParams {
    pub bucket_width: f64,
    pub distance_threshold: f64,
    /// Nodes with fewer samples are dropped before normalization. 1 keeps all.
    pub min_samples: u64,
}

impl Default for GraphParams {
    fn default() -> Self {
        Self {
            bucket_width: DEFAULT_BUCKET_WIDTH,
            distance_threshold: DEFAULT_DISTANCE_THRESHOLD,
            min_samples: 1,
        }
    }
}

impl GraphParams {
    pub fn validate(&self) -> Result<()> {
        validate_bucket_width(self.bucket_width)?;
        if !(self.distance_threshold.is_finite() && self.distance_threshold >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "distance threshold must be a non-negative number, got {}",
                self.distance_threshold
            )));
        }
        Ok(())
    }
}

pub fn validate_bucket_width(width: f64) -> Result<()> {
    if width.is_finite() && width > 0.0 && width <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "bucket width must lie in (0, 1], got {width}"
        )))
    }
}

/// Identity of a graph node.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeKey {
    pub model: ModelId,
    pub bucket: u32,
}

/// A confidence range `[lo, hi)` of one model; the last bucket is closed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub model: ModelId,
    pub index: u32,
    pub lo: f64,
    pub hi: f64,
}

impl Bucket {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn key(&self) -> NodeKey {
        NodeKey {
            model: self.model.clone(),
            bucket: self.index,
        }
    }
}

pub fn bucket_count(bucket_width: f64) -> u32 {
    ((1.0 / bucket_width) - BOUNDARY_SLACK).ceil().max(1.0) as u32
}

fn bucket_bounds(index: u32, bucket_width: f64) -> (f64, f64) {
    let last = bucket_count(bucket_width) - 1;
    let lo = index as f64 * bucket_width;
    let hi = if index == last {
        1.0
    } else {
        (index + 1) as f64 * bucket_width
    };
    (lo, hi)
}

fn bucket_index(confidence: f64, bucket_width: f64) -> u32 {
    let raw = (confidence / bucket_width + BOUNDARY_SLACK).floor();
    (raw.max(0.0) as u32).min(bucket_count(bucket_width) - 1)
}

/// The bucket of `model` that contains `confidence`.
pub fn bucket_for(model: &ModelId, confidence: f64, bucket_width: f64) -> Bucket {
    let index = bucket_index(confidence, bucket_width);
    let (lo, hi) = bucket_bounds(index, bucket_width);
    Bucket {
        model: model.clone(),
        index,
        lo,
        hi,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphNode {
    pub bucket: Bucket,
    /// Mean IoU of the trace frames that fell into the bucket.
    pub expected_accuracy: f64,
    pub sample_count: u64,
}

impl GraphNode {
    pub fn key(&self) -> NodeKey {
        self.bucket.key()
    }
}

/// Undirected co-occurrence graph with raw frame counts as weights.
#[derive(Debug, Clone, PartialEq)]
pub struct CoGraph {
    bucket_width: f64,
    nodes: BTreeMap<NodeKey, GraphNode>,
    /// Keyed by `(a, b)` with `a < b`.
    edges: BTreeMap<(NodeKey, NodeKey), u64>,
}

impl CoGraph {
    pub fn bucket_width(&self) -> f64 {
        self.bucket_width
    }

    pub fn nodes(&self) -> impl Iterator<Item = &GraphNode> {
        self.nodes.values()
    }

    pub fn node(&self, key: &NodeKey) -> Option<&GraphNode> {
        self.nodes.get(key)
    }

    pub fn edges(&self) -> impl Iterator<Item = (&NodeKey, &NodeKey, u64)> {
        self.edges.iter().map(|((a, b), w)| (a, b, *w))
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edge_weight(&self, a: &NodeKey, b: &NodeKey) -> Option<u64> {
        let key = if a < b {
            (a.clone(), b.clone())
        } else {
            (b.clone(), a.clone())
        };
        self.edges.get(&key).copied()
    }

    /// Drops nodes with fewer than `min_samples` samples together with their edges.
    pub fn pruned(&self, min_samples: u64) -> CoGraph {
        let nodes: BTreeMap<_, _> = self
            .nodes
            .iter()
            .filter(|(_, n)| n.sample_count >= min_samples)
            .map(|(k, n)| (k.clone(), n.clone()))
            .collect();
        let edges = self
            .edges
            .iter()
            .filter(|((a, b), _)| nodes.contains_key(a) && nodes.contains_key(b))
            .map(|(k, w)| (k.clone(), *w))
            .collect();
        CoGraph {
            bucket_width: self.bucket_width,
            nodes,
            edges,
        }
    }
}

pub fn build_cograph(trace: &CharacterizationTrace, bucket_width: f64) -> Result<CoGraph> {
    validate_bucket_width(bucket_width)?;
    if trace.is_empty() {
        return Err(Error::EmptyTrace);
    }
    // (iou sum, count) per node
    let mut sums: BTreeMap<NodeKey, (f64, u64)> = BTreeMap::new();
    let mut edges: BTreeMap<(NodeKey, NodeKey), u64> = BTreeMap::new();
    let mut active = Vec::new();
    for frame in trace.frames() {
        active.clear();
        for (model, outcome) in &frame.per_model {
            let key = NodeKey {
                model: model.clone(),
                bucket: bucket_index(outcome.confidence, bucket_width),
            };
            let s = sums.entry(key.clone()).or_insert((0.0, 0));
            s.0 += outcome.iou;
            s.1 += 1;
            active.push(key);
        }
        // per_model is a BTreeMap, so `active` is sorted and holds one node per model
        for i in 0..active.len() {
            for j in i + 1..active.len() {
                *edges
                    .entry((active[i].clone(), active[j].clone()))
                    .or_insert(0) += 1;
            }
        }
    }
    let nodes = sums
        .into_iter()
        .map(|(key, (sum, count))| {
            let (lo, hi) = bucket_bounds(key.bucket, bucket_width);
            let node = GraphNode {
                bucket: Bucket {
                    model: key.model.clone(),
                    index: key.bucket,
                    lo,
                    hi,
                },
                expected_accuracy: (sum / count as f64).clamp(0.0, 1.0),
                sample_count: count,
            };
            (key, node)
        })
        .collect();
    Ok(CoGraph {
        bucket_width,
        nodes,
        edges,
    })
}

/// Directed graph of traversal costs in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostGraph {
    nodes: Vec<GraphNode>,
    index: BTreeMap<NodeKey, usize>,
    /// Outgoing arcs per node, sorted by target index.
    adjacency: Vec<Vec<(usize, f64)>>,
}

impl CostGraph {
    pub fn nodes(&self) -> &[GraphNode] {
        &self.nodes
    }

    pub fn node(&self, key: &NodeKey) -> Option<&GraphNode> {
        self.index.get(key).map(|&i| &self.nodes[i])
    }

    /// Directed arcs as `(from, to, cost)`, in node order.
    pub fn arcs(&self) -> impl Iterator<Item = (NodeKey, NodeKey, f64)> + '_ {
        self.adjacency.iter().enumerate().flat_map(move |(from, out)| {
            out.iter()
                .map(move |&(to, cost)| (self.nodes[from].key(), self.nodes[to].key(), cost))
        })
    }

    pub fn arc_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum()
    }

    pub fn arc_cost(&self, from: &NodeKey, to: &NodeKey) -> Option<f64> {
        let (&f, &t) = (self.index.get(from)?, self.index.get(to)?);
        self.adjacency[f]
            .iter()
            .find(|(target, _)| *target == t)
            .map(|&(_, c)| c)
    }

    /// Builds a cost graph directly from directed arcs; used by tests and by
    /// callers that already hold normalized costs.
    pub fn from_arcs(
        nodes: Vec<GraphNode>,
        arcs: impl IntoIterator<Item = (NodeKey, NodeKey, f64)>,
    ) -> Result<CostGraph> {
        let mut nodes = nodes;
        nodes.sort_by_key(GraphNode::key);
        let index: BTreeMap<NodeKey, usize> =
            nodes.iter().enumerate().map(|(i, n)| (n.key(), i)).collect();
        if index.len() != nodes.len() {
            return Err(Error::InvalidParameter("duplicate graph node".into()));
        }
        let mut adjacency = vec![Vec::new(); nodes.len()];
        for (from, to, cost) in arcs {
            let (Some(&f), Some(&t)) = (index.get(&from), index.get(&to)) else {
                return Err(Error::InvalidParameter(format!(
                    "arc {from:?} -> {to:?} references an unknown node"
                )));
            };
            if !(cost.is_finite() && cost >= 0.0) {
                return Err(Error::InvalidParameter(format!("arc cost {cost} is negative")));
            }
            adjacency[f].push((t, cost));
        }
        for out in &mut adjacency {
            out.sort_by_key(|&(t, _)| t);
        }
        Ok(CostGraph {
            nodes,
            index,
            adjacency,
        })
    }
}

/// Per-node normalization and inversion of the co-occurrence weights.
///
/// A node's outgoing arc over edge `e` costs `1 - w(e) / max_w(node)`, where the
/// maximum is taken over the node's own incident edges. The two directions of
/// one edge can therefore carry different costs.
pub fn normalize_invert(g: &CoGraph) -> CostGraph {
    let nodes: Vec<GraphNode> = g.nodes.values().cloned().collect();
    let index: BTreeMap<NodeKey, usize> =
        nodes.iter().enumerate().map(|(i, n)| (n.key(), i)).collect();
    let mut incident: Vec<Vec<(usize, u64)>> = vec![Vec::new(); nodes.len()];
    for ((a, b), &w) in &g.edges {
        let (ia, ib) = (index[a], index[b]);
        incident[ia].push((ib, w));
        incident[ib].push((ia, w));
    }
    let adjacency = incident
        .into_iter()
        .map(|mut out| {
            out.sort_by_key(|&(t, _)| t);
            let max = out.iter().map(|&(_, w)| w).max().unwrap_or(1) as f64;
            out.into_iter()
                .map(|(t, w)| (t, (1.0 - w as f64 / max).clamp(0.0, 1.0)))
                .collect()
        })
        .collect();
    CostGraph {
        nodes,
        index,
        adjacency,
    }
}

#[derive(PartialEq)]
struct Frontier {
    dist: f64,
    node: usize,
}

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on distance
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// All nodes whose cheapest cumulative cost from `start` is at most
/// `distance_threshold`, with that cost, ordered by node key. `start` itself is
/// included at distance 0. Unknown start nodes yield an empty set.
pub fn neighborhood<'g>(
    cg: &'g CostGraph,
    start: &NodeKey,
    distance_threshold: f64,
) -> Vec<(&'g GraphNode, f64)> {
    let Some(&s) = cg.index.get(start) else {
        return Vec::new();
    };
    let mut best = vec![f64::INFINITY; cg.nodes.len()];
    let mut done = vec![false; cg.nodes.len()];
    let mut heap = BinaryHeap::new();
    best[s] = 0.0;
    heap.push(Frontier { dist: 0.0, node: s });
    while let Some(Frontier { dist, node }) = heap.pop() {
        if done[node] {
            continue;
        }
        done[node] = true;
        for &(next, cost) in &cg.adjacency[node] {
            let d = dist + cost;
            if d <= distance_threshold && d < best[next] {
                best[next] = d;
                heap.push(Frontier { dist: d, node: next });
            }
        }
    }
    // nodes are stored in key order
    best.iter()
        .enumerate()
        .filter(|(_, d)| d.is_finite())
        .map(|(i, &d)| (&cg.nodes[i], d))
        .collect()
}

/// One model's predicted accuracy as seen from some start node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub model: ModelId,
    pub predicted_accuracy: f64,
    /// Smallest traversal cost to a node of this model.
    pub distance: f64,
}

/// Merges a neighborhood into one prediction per model, weighting each node's
/// expected accuracy by `1 / (distance + ε)`.
///
/// Terms are summed in (distance, bucket) order, so the result does not
/// depend on the order of `neigh`. Output is sorted by model.
pub fn consolidate(neigh: &[(&GraphNode, f64)]) -> Vec<Prediction> {
    let mut groups: BTreeMap<&ModelId, Vec<(f64, u32, f64)>> = BTreeMap::new();
    for (node, d) in neigh {
        groups.entry(&node.bucket.model).or_default().push((
            *d,
            node.bucket.index,
            node.expected_accuracy,
        ));
    }
    groups
        .into_iter()
        .map(|(model, mut terms)| {
            terms.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let (mut num, mut den) = (0.0, 0.0);
            for &(d, _, acc) in &terms {
                let w = 1.0 / (d + CONSOLIDATION_EPSILON);
                num += w * acc;
                den += w;
            }
            Prediction {
                model: model.clone(),
                predicted_accuracy: (num / den).clamp(0.0, 1.0),
                distance: terms[0].0,
            }
        })
        .collect()
}

/// Runtime lookup table from a node to accuracy predictions for all models.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMap {
    params: GraphParams,
    nodes: BTreeMap<NodeKey, GraphNode>,
    edges: Vec<EdgeRecord>,
    arcs: Vec<ArcRecord>,
    entries: BTreeMap<NodeKey, Vec<Prediction>>,
    /// Populated bucket indices per model, ascending.
    populated: BTreeMap<ModelId, Vec<u32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub a: NodeKey,
    pub b: NodeKey,
    pub weight: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArcRecord {
    pub from: NodeKey,
    pub to: NodeKey,
    pub cost: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EntryRecord {
    node: NodeKey,
    predictions: Vec<Prediction>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictionMapDocument {
    params: GraphParams,
    nodes: Vec<GraphNode>,
    edges: Vec<EdgeRecord>,
    arcs: Vec<ArcRecord>,
    entries: Vec<EntryRecord>,
}

pub fn build_prediction_map(
    trace: &CharacterizationTrace,
    params: GraphParams,
) -> Result<PredictionMap> {
    params.validate()?;
    let co = build_cograph(trace, params.bucket_width)?.pruned(params.min_samples);
    let cost = normalize_invert(&co);
    let mut entries = BTreeMap::new();
    for start in cost.nodes() {
        let neigh = neighborhood(&cost, &start.key(), params.distance_threshold);
        let mut predictions = consolidate(&neigh);
        // The start node is a direct observation of its own model.
        if let Some(own) = predictions
            .iter_mut()
            .find(|p| p.model == start.bucket.model)
        {
            own.predicted_accuracy = start.expected_accuracy;
            own.distance = 0.0;
        }
        entries.insert(start.key(), predictions);
    }
    let edges = co
        .edges()
        .map(|(a, b, weight)| EdgeRecord {
            a: a.clone(),
            b: b.clone(),
            weight,
        })
        .collect();
    let arcs = cost
        .arcs()
        .map(|(from, to, cost)| ArcRecord { from, to, cost })
        .collect();
    PredictionMap::assemble(params, co.nodes, edges, arcs, entries)
}

impl PredictionMap {
    fn assemble(
        params: GraphParams,
        nodes: BTreeMap<NodeKey, GraphNode>,
        edges: Vec<EdgeRecord>,
        arcs: Vec<ArcRecord>,
        entries: BTreeMap<NodeKey, Vec<Prediction>>,
    ) -> Result<PredictionMap> {
        if entries.is_empty() {
            return Err(Error::EmptyTrace);
        }
        let mut populated: BTreeMap<ModelId, Vec<u32>> = BTreeMap::new();
        for key in entries.keys() {
            if !nodes.contains_key(key) {
                return Err(Error::parse(
                    "prediction map",
                    format!("entry for missing node {}[{}]", key.model, key.bucket),
                ));
            }
            populated.entry(key.model.clone()).or_default().push(key.bucket);
        }
        Ok(PredictionMap {
            params,
            nodes,
            edges,
            arcs,
            entries,
            populated,
        })
    }

    pub fn params(&self) -> GraphParams {
        self.params
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn arc_count(&self) -> usize {
        self.arcs.len()
    }

    pub fn entry_count(&self) -> usize {
        self.entries.len()
    }

    pub fn models(&self) -> impl Iterator<Item = &ModelId> {
        self.populated.keys()
    }

    pub fn has_model(&self, model: &ModelId) -> bool {
        self.populated.contains_key(model)
    }

    pub fn node(&self, key: &NodeKey) -> Option<&GraphNode> {
        self.nodes.get(key)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&NodeKey, &[Prediction])> {
        self.entries.iter().map(|(k, v)| (k, v.as_slice()))
    }

    /// The populated node used for a query: the bucket containing
    /// `confidence`, or the same model's populated bucket with the nearest
    /// midpoint (lower bucket on ties).
    pub fn resolve(&self, model: &ModelId, confidence: f64) -> Result<&GraphNode> {
        let buckets = self
            .populated
            .get(model)
            .ok_or_else(|| Error::UnknownModel(model.to_string()))?;
        let wanted = bucket_index(confidence.clamp(0.0, 1.0), self.params.bucket_width);
        let index = if buckets.binary_search(&wanted).is_ok() {
            wanted
        } else {
            let width = self.params.bucket_width;
            let mut best = buckets[0];
            let mut best_gap = f64::INFINITY;
            for &b in buckets {
                let (lo, hi) = bucket_bounds(b, width);
                let gap = (0.5 * (lo + hi) - confidence).abs();
                if gap < best_gap {
                    best = b;
                    best_gap = gap;
                }
            }
            best
        };
        Ok(&self.nodes[&NodeKey {
            model: model.clone(),
            bucket: index,
        }])
    }

    /// Accuracy predictions for every model reachable from the node of
    /// `model` at `confidence`.
    pub fn predict(&self, model: &ModelId, confidence: f64) -> Result<&[Prediction]> {
        let node = self.resolve(model, confidence)?;
        Ok(&self.entries[&node.key()])
    }

    /// The node of `model` with the highest populated confidence bucket.
    pub fn top_node(&self, model: &ModelId) -> Option<&GraphNode> {
        let top = *self.populated.get(model)?.last()?;
        self.nodes.get(&NodeKey {
            model: model.clone(),
            bucket: top,
        })
    }

    pub fn to_json_string(&self) -> String {
        let doc = PredictionMapDocument {
            params: self.params,
            nodes: self.nodes.values().cloned().collect(),
            edges: self.edges.clone(),
            arcs: self.arcs.clone(),
            entries: self
                .entries
                .iter()
                .map(|(k, v)| EntryRecord {
                    node: k.clone(),
                    predictions: v.clone(),
                })
                .collect(),
        };
        let mut s = serde_json::to_string_pretty(&doc).expect("prediction map serializes");
        s.push('\n');
        s
    }

    pub fn from_json_str(text: &str) -> Result<PredictionMap> {
        let doc: PredictionMapDocument =
            serde_json::from_str(text).map_err(|e| Error::parse("prediction map", e))?;
        doc.params.validate()?;
        let nodes: BTreeMap<_, _> = doc.nodes.into_iter().map(|n| (n.key(), n)).collect();
        let entries = doc
            .entries
            .into_iter()
            .map(|e| (e.node, e.predictions))
            .collect();
        PredictionMap::assemble(doc.params, nodes, doc.edges, doc.arcs, entries)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<PredictionMap> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        PredictionMap::from_json_str(&text)
    }
}
