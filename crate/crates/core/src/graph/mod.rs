//! The survey-wide trace graph and star subgraph sampling.
//!
//! Every trace is a node. A node's out-edges go to the traces whose
//! source-receiver midpoints are its `K` nearest neighbors, weighted with an
//! Epanechnikov kernel on the midpoint distance scaled by the farthest of
//! those `K` neighbors ([`edge_weight`]). Training and inference consume
//! star subgraphs: a center node plus its `K` neighbors ([`StarSubgraph`]).

mod kdtree;

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::survey::{Survey, Trace};

pub use kdtree::{KdTree, Neighbor};

const MAGIC: &[u8; 4] = b"FBGR";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Midpoint {
    pub trace_id: u64,
    pub x: f64,
    pub y: f64,
}

impl Midpoint {
    pub fn of(trace: &Trace) -> Self {
        Midpoint {
            trace_id: trace.id,
            x: (trace.src.0 + trace.rcv.0) / 2.0,
            y: (trace.src.1 + trace.rcv.1) / 2.0,
        }
    }

    pub fn distance(&self, other: &Midpoint) -> f64 {
        let (dx, dy) = (self.x - other.x, self.y - other.y);
        (dx * dx + dy * dy).sqrt()
    }
}

pub fn compute_midpoints(survey: &Survey) -> Vec<Midpoint> {
    survey.traces().iter().map(Midpoint::of).collect()
}

/// Epanechnikov edge weight `3/4 * (1 - d^2 / d_max^2)`.
///
/// A zero `d_max` means every neighbor coincides with the center; the weight
/// is then the `d = 0` limit, 0.75.
pub fn edge_weight(d: f64, d_max: f64) -> f64 {
    debug_assert!(d >= 0.0 && d <= d_max, "distance {d} outside [0, {d_max}]");
    if d_max == 0.0 {
        return 0.75;
    }
    0.75 * (1.0 - (d * d) / (d_max * d_max))
}

/// Spatial index over midpoints, addressed by trace id.
pub struct MidpointIndex {
    tree: KdTree,
    positions: HashMap<u64, usize>,
}

impl MidpointIndex {
    pub fn build(midpoints: &[Midpoint]) -> Self {
        let points = midpoints.iter().map(|m| [m.x, m.y]).collect();
        let ids: Vec<u64> = midpoints.iter().map(|m| m.trace_id).collect();
        let positions = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        MidpointIndex {
            tree: KdTree::build(points, ids),
            positions,
        }
    }

    pub fn len(&self) -> usize {
        self.tree.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tree.is_empty()
    }

    pub fn tree(&self) -> &KdTree {
        &self.tree
    }

    /// Neighbors of the midpoint at `position`, self excluded.
    pub fn nearest_to_position(&self, position: usize, k: usize) -> Vec<Neighbor> {
        self.tree.nearest(self.tree.point(position), k, Some(position))
    }
}

/// The `k` nearest traces to `query_id` by midpoint distance, as
/// `(trace id, distance)` sorted by distance then id.
pub fn knn_query(index: &MidpointIndex, query_id: u64, k: usize) -> Result<Vec<(u64, f64)>> {
    if k >= index.len() {
        return Err(Error::Param(format!(
            "K = {k} must be smaller than the number of traces ({})",
            index.len()
        )));
    }
    let position = *index
        .positions
        .get(&query_id)
        .ok_or_else(|| Error::Data(format!("trace {query_id} is not in the index")))?;
    Ok(index
        .nearest_to_position(position, k)
        .into_iter()
        .map(|n| (n.id, n.dist()))
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub neighbor_id: u64,
    pub distance: f64,
    pub weight: f64,
}

/// Directed k-NN adjacency: exactly `k` out-edges per node, nearest first.
#[derive(Clone, Debug, PartialEq)]
pub struct SurveyGraph {
    k: usize,
    node_ids: Vec<u64>,
    edges: Vec<Edge>,
    positions: HashMap<u64, usize>,
}

impl SurveyGraph {
    pub fn build(survey: &Survey, k: usize) -> Result<Self> {
        Self::from_midpoints(&compute_midpoints(survey), k)
    }

    pub fn from_midpoints(midpoints: &[Midpoint], k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Param("K must be at least 1".into()));
        }
        if k >= midpoints.len() {
            return Err(Error::Param(format!(
                "K = {k} must be smaller than the number of traces ({})",
                midpoints.len()
            )));
        }
        let index = MidpointIndex::build(midpoints);
        let mut edges = Vec::with_capacity(midpoints.len() * k);
        for position in 0..midpoints.len() {
            let nn = index.nearest_to_position(position, k);
            let d_max = nn.last().map(|n| n.dist()).unwrap_or(0.0);
            edges.extend(nn.iter().map(|n| {
                let distance = n.dist();
                Edge {
                    neighbor_id: n.id,
                    distance,
                    weight: edge_weight(distance, d_max),
                }
            }));
        }
        let node_ids: Vec<u64> = midpoints.iter().map(|m| m.trace_id).collect();
        Ok(SurveyGraph {
            k,
            positions: index.positions,
            node_ids,
            edges,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.node_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_ids.is_empty()
    }

    pub fn node_ids(&self) -> &[u64] {
        &self.node_ids
    }

    pub fn neighbors(&self, id: u64) -> Option<&[Edge]> {
        let p = *self.positions.get(&id)?;
        Some(&self.edges[p * self.k..(p + 1) * self.k])
    }

    /// Checks that the graph was built over exactly this survey's traces.
    pub fn check_survey(&self, survey: &Survey) -> Result<()> {
        if self.len() != survey.len() {
            return Err(Error::Data(format!(
                "graph has {} nodes but the survey has {} traces",
                self.len(),
                survey.len()
            )));
        }
        for (id, t) in self.node_ids.iter().zip(survey.traces()) {
            if *id != t.id {
                return Err(Error::Data(format!(
                    "graph node {id} does not match survey trace {}",
                    t.id
                )));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.len() * (8 + 16 * self.k));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.k as u32).to_le_bytes());
        for (p, id) in self.node_ids.iter().enumerate() {
            out.extend_from_slice(&id.to_le_bytes());
            for e in &self.edges[p * self.k..(p + 1) * self.k] {
                out.extend_from_slice(&e.neighbor_id.to_le_bytes());
                out.extend_from_slice(&(e.distance as f32).to_le_bytes());
                out.extend_from_slice(&(e.weight as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |message: String| Error::Parse { line: 0, message };
        let header = bytes
            .get(..16)
            .ok_or_else(|| bad("graph file too short".into()))?;
        if &header[..4] != MAGIC {
            return Err(bad("bad magic, expected FBGR".into()));
        }
        let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap());
        if word(4) != VERSION {
            return Err(bad(format!("unsupported graph version {}", word(4))));
        }
        let (n, k) = (word(8) as usize, word(12) as usize);
        let record = 8 + 16 * k;
        if bytes.len() != 16 + n * record {
            return Err(bad(format!(
                "expected {} bytes for {n} nodes with K = {k}, found {}",
                16 + n * record,
                bytes.len()
            )));
        }
        let mut node_ids = Vec::with_capacity(n);
        let mut edges = Vec::with_capacity(n * k);
        for chunk in bytes[16..].chunks_exact(record) {
            node_ids.push(u64::from_le_bytes(chunk[..8].try_into().unwrap()));
            for e in chunk[8..].chunks_exact(16) {
                edges.push(Edge {
                    neighbor_id: u64::from_le_bytes(e[..8].try_into().unwrap()),
                    distance: f32::from_le_bytes(e[8..12].try_into().unwrap()) as f64,
                    weight: f32::from_le_bytes(e[12..16].try_into().unwrap()) as f64,
                });
            }
        }
        let positions: HashMap<u64, usize> =
            node_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        if positions.len() != n {
            return Err(Error::Validation("duplicate node ids in graph".into()));
        }
        if let Some(e) = edges.iter().find(|e| !positions.contains_key(&e.neighbor_id)) {
            return Err(Error::Validation(format!(
                "edge points at unknown node {}",
                e.neighbor_id
            )));
        }
        Ok(SurveyGraph {
            k,
            node_ids,
            edges,
            positions,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::fsio::write_atomic(path, &self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// A center trace and its `K` graph neighbors, nearest first.
#[derive(Clone, Debug, PartialEq)]
pub struct StarSubgraph {
    pub center_id: u64,
    pub neighbor_ids: Vec<u64>,
    /// Midpoint distances to the center, aligned with `neighbor_ids`.
    pub distances: Vec<f64>,
    pub weights: Vec<f64>,
    /// `K + 1` rows, center first.
    pub signals: Vec<Vec<f32>>,
    /// Window labels, center first.
    pub labels: Vec<Option<usize>>,
}

impl StarSubgraph {
    pub fn k(&self) -> usize {
        self.neighbor_ids.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.signals.len()
    }

    pub fn n_edges(&self) -> usize {
        self.weights.len()
    }

    pub fn signal_len(&self) -> usize {
        self.signals[0].len()
    }
}

/// Extracts the star around `center_id`. Distances and weights are
/// recomputed in double precision from the survey coordinates, so a graph
/// read back from its `f32` file yields the same weights as a fresh build.
pub fn sample_star_subgraph(graph: &SurveyGraph, survey: &Survey, center_id: u64) -> Result<StarSubgraph> {
    let edges = graph
        .neighbors(center_id)
        .ok_or_else(|| Error::Data(format!("trace {center_id} is not in the graph")))?;
    let fetch = |id: u64| {
        survey
            .get(id)
            .ok_or_else(|| Error::Data(format!("no signal for trace {id}")))
    };
    let center = fetch(center_id)?;
    let len = center.len();
    let c_mid = Midpoint::of(center);
    let mut neighbor_ids = Vec::with_capacity(edges.len());
    let mut distances = Vec::with_capacity(edges.len());
    let mut signals = Vec::with_capacity(edges.len() + 1);
    let mut labels = Vec::with_capacity(edges.len() + 1);
    signals.push(center.samples.clone());
    labels.push(center.fb_sample);
    for e in edges {
        let t = fetch(e.neighbor_id)?;
        if t.len() != len {
            return Err(Error::Data(format!(
                "trace {} has {} samples, center {center_id} has {len}",
                t.id,
                t.len()
            )));
        }
        neighbor_ids.push(t.id);
        distances.push(c_mid.distance(&Midpoint::of(t)));
        signals.push(t.samples.clone());
        labels.push(t.fb_sample);
    }
    let d_max = distances.iter().copied().fold(0.0, f64::max);
    let weights = distances.iter().map(|&d| edge_weight(d, d_max)).collect();
    Ok(StarSubgraph {
        center_id,
        neighbor_ids,
        distances,
        weights,
        signals,
        labels,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetMode {
    /// Only labeled centers.
    Train,
    /// Every node.
    Infer,
}

/// Lazily sampled star subgraphs over a preprocessed survey.
pub struct Dataset<'a> {
    survey: &'a Survey,
    graph: &'a SurveyGraph,
    centers: Vec<u64>,
}

impl<'a> Dataset<'a> {
    pub fn new(survey: &'a Survey, graph: &'a SurveyGraph, mode: DatasetMode) -> Result<Self> {
        graph.check_survey(survey)?;
        let centers = survey
            .traces()
            .iter()
            .filter(|t| mode == DatasetMode::Infer || t.fb_sample.is_some())
            .map(|t| t.id)
            .collect();
        Ok(Dataset {
            survey,
            graph,
            centers,
        })
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn centers(&self) -> &[u64] {
        &self.centers
    }

    pub fn survey(&self) -> &'a Survey {
        self.survey
    }

    pub fn sample(&self, i: usize) -> Result<StarSubgraph> {
        sample_star_subgraph(self.graph, self.survey, self.centers[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = Result<StarSubgraph>> + '_ {
        (0..self.len()).map(|i| self.sample(i))
    }
}

/// Streams one star per labeled node (`Train`) or per node (`Infer`).
pub fn build_dataset<'a>(
    survey: &'a Survey,
    graph: &'a SurveyGraph,
    mode: DatasetMode,
) -> Result<impl Iterator<Item = Result<StarSubgraph>> + 'a> {
    let ds = Dataset::new(survey, graph, mode)?;
    Ok((0..ds.len()).map(move |i| ds.sample(i)))
}
