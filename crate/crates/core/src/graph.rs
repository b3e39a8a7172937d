//! Region adjacency and the intrinsic CAR precision structure.
//!
//! Two regions are neighbours when their boundaries share an edge segment of
//! positive length (rook contiguity). Coordinates are snapped to a grid of
//! `tolerance` degrees first, after which the overlap test is exact integer
//! arithmetic. Country labels play no part: borders between groups produce
//! edges like any other.

use std::collections::BTreeSet;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::ops::{Mul, Sub};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{write_comment_header, RegionBoundary};

pub const DEFAULT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("adjacency needs at least 2 regions, got {0}")]
    TooFewRegions(usize),
    #[error("region `{0}` has no rings")]
    EmptyGeometry(String),
    #[error("duplicate region `{0}`")]
    DuplicateNode(String),
    #[error("edge refers to unknown region `{0}`")]
    UnknownNode(String),
    #[error("self-loop on region `{0}`")]
    SelfLoop(String),
    #[error("tolerance must be finite and non-negative, got {0}")]
    BadTolerance(f64),
    #[error("vector has length {got}, precision has dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("unknown weighting style `{0}` (expected B or W)")]
    UnknownStyle(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
}

/// Neighbour weighting scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum WeightStyle {
    /// Binary weights: every neighbour counts 1.
    #[default]
    B,
    /// Row-standardized weights, symmetrized as `(1/d_i + 1/d_j)/2`.
    /// Experimental.
    W,
}

impl fmt::Display for WeightStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WeightStyle::B => "B",
            WeightStyle::W => "W",
        })
    }
}

impl FromStr for WeightStyle {
    type Err = GraphError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "B" | "b" => Ok(WeightStyle::B),
            "W" | "w" => Ok(WeightStyle::W),
            other => Err(GraphError::UnknownStyle(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyGraph {
    node_ids: Vec<String>,
    /// `(i, j)` with `i < j`, sorted.
    edges: Vec<(usize, usize)>,
    components: Vec<Vec<usize>>,
    component_of: Vec<usize>,
    style: WeightStyle,
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind((0..n).collect())
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.0[x] != x {
            self.0[x] = self.0[self.0[x]];
            x = self.0[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

impl AdjacencyGraph {
    /// Builds a graph from node ids and index pairs. Nodes are re-sorted by id.
    pub fn new(
        node_ids: Vec<String>,
        edges: impl IntoIterator<Item = (usize, usize)>,
        style: WeightStyle,
    ) -> Result<Self, GraphError> {
        let mut order: Vec<usize> = (0..node_ids.len()).collect();
        order.sort_by(|&a, &b| node_ids[a].cmp(&node_ids[b]));
        for w in order.windows(2) {
            if node_ids[w[0]] == node_ids[w[1]] {
                return Err(GraphError::DuplicateNode(node_ids[w[0]].clone()));
            }
        }
        let mut rank = vec![0; node_ids.len()];
        for (new, &old) in order.iter().enumerate() {
            rank[old] = new;
        }
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a == b {
                return Err(GraphError::SelfLoop(node_ids[a].clone()));
            }
            let (a, b) = (rank[a], rank[b]);
            set.insert((a.min(b), a.max(b)));
        }
        let sorted_ids: Vec<String> = order.iter().map(|&i| node_ids[i].clone()).collect();
        Ok(Self::assemble(sorted_ids, set.into_iter().collect(), style))
    }

    /// Builds a graph from region-id pairs.
    pub fn from_id_edges(
        node_ids: Vec<String>,
        edges: &[(String, String)],
        style: WeightStyle,
    ) -> Result<Self, GraphError> {
        let lookup = |id: &str| {
            node_ids
                .iter()
                .position(|n| n == id)
                .ok_or_else(|| GraphError::UnknownNode(id.to_string()))
        };
        let pairs = edges
            .iter()
            .map(|(a, b)| Ok((lookup(a)?, lookup(b)?)))
            .collect::<Result<Vec<_>, GraphError>>()?;
        Self::new(node_ids, pairs, style)
    }

    fn assemble(node_ids: Vec<String>, edges: Vec<(usize, usize)>, style: WeightStyle) -> Self {
        let n = node_ids.len();
        let mut uf = UnionFind::new(n);
        for &(a, b) in &edges {
            uf.union(a, b);
        }
        let mut components: Vec<Vec<usize>> = Vec::new();
        let mut root_slot = vec![usize::MAX; n];
        let mut component_of = Vec::with_capacity(n);
        for i in 0..n {
            let r = uf.find(i);
            if root_slot[r] == usize::MAX {
                root_slot[r] = components.len();
                components.push(Vec::new());
            }
            component_of.push(root_slot[r]);
            components[root_slot[r]].push(i);
        }
        AdjacencyGraph {
            node_ids,
            edges,
            components,
            component_of,
            style,
        }
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn len(&self) -> usize {
        self.node_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_ids.is_empty()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn components(&self) -> &[Vec<usize>] {
        &self.components
    }

    pub fn component_of(&self, node: usize) -> usize {
        self.component_of[node]
    }

    pub fn style(&self) -> WeightStyle {
        self.style
    }

    pub fn with_style(&self, style: WeightStyle) -> Self {
        AdjacencyGraph { style, ..self.clone() }
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.node_ids.binary_search_by(|n| n.as_str().cmp(id)).ok()
    }

    pub fn degree(&self, node: usize) -> usize {
        self.edges.iter().filter(|&&(a, b)| a == node || b == node).count()
    }

    pub fn neighbors(&self, node: usize) -> Vec<usize> {
        self.edges
            .iter()
            .filter_map(|&(a, b)| {
                if a == node {
                    Some(b)
                } else if b == node {
                    Some(a)
                } else {
                    None
                }
            })
            .collect()
    }

    /// Same nodes, keeping only edges for which `keep` holds.
    pub fn retain_edges(&self, mut keep: impl FnMut(&str, &str) -> bool) -> Self {
        let edges = self
            .edges
            .iter()
            .copied()
            .filter(|&(a, b)| keep(&self.node_ids[a], &self.node_ids[b]))
            .collect();
        Self::assemble(self.node_ids.clone(), edges, self.style)
    }

    pub fn edge_ids(&self) -> Vec<(String, String)> {
        self.edges
            .iter()
            .map(|&(a, b)| (self.node_ids[a].clone(), self.node_ids[b].clone()))
            .collect()
    }
}

/// Segment endpoints in snapped coordinates, ordered so `0 <= 1`.
type Segment<T> = ([T; 2], [T; 2]);

fn overlaps<T>(s: &Segment<T>, t: &Segment<T>) -> bool
where
    T: Copy + PartialOrd + Sub<Output = T> + Mul<Output = T> + Default,
{
    let zero = T::default();
    let d = [s.1[0] - s.0[0], s.1[1] - s.0[1]];
    let cross = |p: [T; 2]| d[0] * (p[1] - s.0[1]) - d[1] * (p[0] - s.0[0]);
    if cross(t.0) != zero || cross(t.1) != zero {
        return false;
    }
    let abs = |v: T| if v < zero { zero - v } else { v };
    let axis = usize::from(abs(d[1]) > abs(d[0]));
    let span = |seg: &Segment<T>| {
        let (a, b) = (seg.0[axis], seg.1[axis]);
        if a <= b {
            (a, b)
        } else {
            (b, a)
        }
    };
    let (s0, s1) = span(s);
    let (t0, t1) = span(t);
    let lo = if s0 > t0 { s0 } else { t0 };
    let hi = if s1 < t1 { s1 } else { t1 };
    hi > lo
}

fn shared_border_pairs<T>(segments: &mut [(Segment<T>, usize)]) -> BTreeSet<(usize, usize)>
where
    T: Copy + PartialOrd + Sub<Output = T> + Mul<Output = T> + Default,
{
    segments.sort_by(|a, b| a.0 .0[0].partial_cmp(&b.0 .0[0]).expect("finite coordinates"));
    let mut pairs = BTreeSet::new();
    for i in 0..segments.len() {
        let (s, rs) = &segments[i];
        let s_max = s.1[0];
        for (t, rt) in &segments[i + 1..] {
            if t.0[0] > s_max {
                break;
            }
            if rs != rt {
                let key = (*rs.min(rt), *rs.max(rt));
                if !pairs.contains(&key) && overlaps(s, t) {
                    pairs.insert(key);
                }
            }
        }
    }
    pairs
}

fn collect_segments<T: Copy + PartialOrd>(
    boundaries: &[&RegionBoundary],
    snap: impl Fn(f64) -> T,
) -> Vec<(Segment<T>, usize)> {
    let mut out = Vec::new();
    for (idx, b) in boundaries.iter().enumerate() {
        for ring in b.geometry.rings() {
            for w in ring.windows(2) {
                let p = [snap(w[0][0]), snap(w[0][1])];
                let q = [snap(w[1][0]), snap(w[1][1])];
                if p == q {
                    continue;
                }
                // lexicographic order puts the sweep's left endpoint first
                let ordered = if (p[0], p[1]) <= (q[0], q[1]) { (p, q) } else { (q, p) };
                out.push((ordered, idx));
            }
        }
    }
    out
}

/// Rook-contiguity graph over the given boundaries.
///
/// `tolerance > 0` snaps coordinates to multiples of `tolerance` degrees and
/// detects collinear overlapping segments exactly, including T-junctions.
/// `tolerance == 0` compares raw coordinates.
pub fn build_adjacency(
    boundaries: &[RegionBoundary],
    tolerance: f64,
    style: WeightStyle,
) -> Result<AdjacencyGraph, GraphError> {
    if !(tolerance.is_finite() && tolerance >= 0.0) {
        return Err(GraphError::BadTolerance(tolerance));
    }
    if boundaries.len() < 2 {
        return Err(GraphError::TooFewRegions(boundaries.len()));
    }
    let mut sorted: Vec<&RegionBoundary> = boundaries.iter().collect();
    sorted.sort_by(|a, b| a.region_id.cmp(&b.region_id));
    if let Some(b) = sorted.iter().find(|b| b.geometry.ring_count() == 0) {
        return Err(GraphError::EmptyGeometry(b.region_id.clone()));
    }
    let pairs = if tolerance > 0.0 {
        let mut segs = collect_segments(&sorted, |v| (v / tolerance).round() as i128);
        shared_border_pairs(&mut segs)
    } else {
        let mut segs = collect_segments(&sorted, |v| v + 0.0);
        shared_border_pairs(&mut segs)
    };
    AdjacencyGraph::new(sorted.iter().map(|b| b.region_id.clone()).collect(), pairs, style)
}

/// Unit-scale ICAR precision `Q = D_w − A_w`, stored by edge.
#[derive(Debug, Clone, PartialEq)]
pub struct IcarPrecision {
    dimension: usize,
    diag: Vec<f64>,
    neighbors: Vec<Vec<(usize, f64)>>,
    edges: Vec<(usize, usize, f64)>,
    rank: usize,
    style: WeightStyle,
}

impl IcarPrecision {
    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn style(&self) -> WeightStyle {
        self.style
    }

    /// `Q_ii`: neighbour count (B) or total symmetrized weight (W).
    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    /// `(j, w_ij)` for each neighbour `j` of `i`.
    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.neighbors[i]
    }

    pub fn weighted_edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    /// `xᵀQx` as `Σ_edges w_ij (x_i − x_j)²`.
    pub fn quadratic_form(&self, x: &[f64]) -> Result<f64, GraphError> {
        if x.len() != self.dimension {
            return Err(GraphError::DimensionMismatch {
                expected: self.dimension,
                got: x.len(),
            });
        }
        Ok(self.edges.iter().map(|&(i, j, w)| w * (x[i] - x[j]).powi(2)).sum())
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut q = vec![vec![0.0; self.dimension]; self.dimension];
        for (i, row) in q.iter_mut().enumerate() {
            row[i] = self.diag[i];
            for &(j, w) in &self.neighbors[i] {
                row[j] -= w;
            }
        }
        q
    }
}

pub fn icar_precision(graph: &AdjacencyGraph) -> IcarPrecision {
    let n = graph.len();
    let mut degree = vec![0.0; n];
    for &(i, j) in graph.edges() {
        degree[i] += 1.0;
        degree[j] += 1.0;
    }
    let mut diag = vec![0.0; n];
    let mut neighbors = vec![Vec::new(); n];
    let mut edges = Vec::with_capacity(graph.edges().len());
    for &(i, j) in graph.edges() {
        let w = match graph.style() {
            WeightStyle::B => 1.0,
            WeightStyle::W => 0.5 * (1.0 / degree[i] + 1.0 / degree[j]),
        };
        diag[i] += w;
        diag[j] += w;
        neighbors[i].push((j, w));
        neighbors[j].push((i, w));
        edges.push((i, j, w));
    }
    IcarPrecision {
        dimension: n,
        diag,
        neighbors,
        edges,
        rank: n - graph.components().len(),
        style: graph.style(),
    }
}

/// On-disk graph description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct GraphFile {
    style: WeightStyle,
    nodes: Vec<String>,
    edges: Vec<[String; 2]>,
    components: Vec<Vec<String>>,
}

pub fn graph_to_toml(graph: &AdjacencyGraph) -> String {
    let file = GraphFile {
        style: graph.style(),
        nodes: graph.node_ids().to_vec(),
        edges: graph.edge_ids().into_iter().map(|(a, b)| [a, b]).collect(),
        components: graph
            .components()
            .iter()
            .map(|c| c.iter().map(|&i| graph.node_ids()[i].clone()).collect())
            .collect(),
    };
    toml::to_string(&file).expect("graph serializes")
}

pub fn graph_from_toml(text: &str, path: &Path) -> Result<AdjacencyGraph, GraphError> {
    let file: GraphFile = toml::from_str(text).map_err(|e| GraphError::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let edges: Vec<(String, String)> = file.edges.into_iter().map(|[a, b]| (a, b)).collect();
    let graph = AdjacencyGraph::from_id_edges(file.nodes, &edges, file.style)?;
    let expected: Vec<Vec<String>> = graph
        .components()
        .iter()
        .map(|c| c.iter().map(|&i| graph.node_ids()[i].clone()).collect())
        .collect();
    if expected != file.components {
        return Err(GraphError::Format {
            path: path.to_path_buf(),
            reason: "listed components disagree with the edge set".into(),
        });
    }
    Ok(graph)
}

pub fn write_graph(path: &Path, graph: &AdjacencyGraph, header: &[String]) -> Result<(), GraphError> {
    let io_err = |source| GraphError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    write_comment_header(&mut out, header).map_err(io_err)?;
    out.write_all(graph_to_toml(graph).as_bytes()).map_err(io_err)?;
    out.flush().map_err(io_err)
}

pub fn read_graph(path: &Path) -> Result<AdjacencyGraph, GraphError> {
    let text = std::fs::read_to_string(path).map_err(|source| GraphError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    graph_from_toml(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Geometry;

    fn square(id: &str, x: f64, y: f64, country: &str) -> RegionBoundary {
        RegionBoundary {
            region_id: id.into(),
            country: Some(country.into()),
            geometry: Geometry::Polygon(vec![vec![
                [x, y],
                [x + 1.0, y],
                [x + 1.0, y + 1.0],
                [x, y + 1.0],
                [x, y],
            ]]),
        }
    }

    fn ids(g: &AdjacencyGraph) -> Vec<(String, String)> {
        g.edge_ids()
    }

    #[test]
    fn grid_2x2_is_rook() {
        let b = vec![
            square("a", 0.0, 0.0, "X"),
            square("b", 1.0, 0.0, "X"),
            square("c", 0.0, 1.0, "X"),
            square("d", 1.0, 1.0, "X"),
        ];
        let g = build_adjacency(&b, DEFAULT_TOLERANCE, WeightStyle::B).unwrap();
        let expect: Vec<(String, String)> = [("a", "b"), ("a", "c"), ("b", "d"), ("c", "d")]
            .iter()
            .map(|(x, y)| (x.to_string(), y.to_string()))
            .collect();
        assert_eq!(ids(&g), expect);
        assert_eq!(g.components().len(), 1);
    }

    #[test]
    fn distant_squares_are_disconnected() {
        let b = vec![square("a", 0.0, 0.0, "X"), square("b", 10.0, 10.0, "X")];
        let g = build_adjacency(&b, DEFAULT_TOLERANCE, WeightStyle::B).unwrap();
        assert!(g.edges().is_empty());
        assert_eq!(g.components().len(), 2);
    }

    #[test]
    fn country_labels_do_not_block_edges() {
        let b = vec![
            square("s1", 0.0, 0.0, "K"),
            square("s2", 1.0, 0.0, "K"),
            square("s3", 2.0, 0.0, "T"),
        ];
        let g = build_adjacency(&b, DEFAULT_TOLERANCE, WeightStyle::B).unwrap();
        assert!(ids(&g).contains(&("s2".into(), "s3".into())));
    }

    #[test]
    fn t_junction_counts_as_shared_border() {
        // a wide rectangle below two unit squares; its top edge has no vertex at x = 1
        let wide = RegionBoundary {
            region_id: "wide".into(),
            country: None,
            geometry: Geometry::Polygon(vec![vec![
                [0.0, -1.0],
                [2.0, -1.0],
                [2.0, 0.0],
                [0.0, 0.0],
                [0.0, -1.0],
            ]]),
        };
        let b = vec![wide, square("l", 0.0, 0.0, ""), square("r", 1.0, 0.0, "")];
        let g = build_adjacency(&b, DEFAULT_TOLERANCE, WeightStyle::B).unwrap();
        assert_eq!(g.edges().len(), 3);
    }

    #[test]
    fn corner_touch_is_not_adjacent() {
        let b = vec![square("a", 0.0, 0.0, ""), square("b", 1.0, 1.0, "")];
        let g = build_adjacency(&b, DEFAULT_TOLERANCE, WeightStyle::B).unwrap();
        assert!(g.edges().is_empty());
    }

    #[test]
    fn near_coincident_coordinates_snap_together() {
        let mut b = vec![square("a", 0.0, 0.0, ""), square("b", 1.0 + 2e-7, 0.0, "")];
        let g = build_adjacency(&b, DEFAULT_TOLERANCE, WeightStyle::B).unwrap();
        assert_eq!(g.edges().len(), 1);
        b[1] = square("b", 1.0 + 1e-3, 0.0, "");
        let g = build_adjacency(&b, DEFAULT_TOLERANCE, WeightStyle::B).unwrap();
        assert!(g.edges().is_empty());
    }

    #[test]
    fn empty_geometry_is_named() {
        let b = vec![
            square("a", 0.0, 0.0, ""),
            RegionBoundary {
                region_id: "hollow".into(),
                country: None,
                geometry: Geometry::MultiPolygon(vec![]),
            },
        ];
        let err = build_adjacency(&b, DEFAULT_TOLERANCE, WeightStyle::B).unwrap_err();
        assert!(matches!(err, GraphError::EmptyGeometry(id) if id == "hollow"));
    }

    fn path3(style: WeightStyle) -> AdjacencyGraph {
        AdjacencyGraph::new(vec!["a".into(), "b".into(), "c".into()], [(0, 1), (1, 2)], style).unwrap()
    }

    #[test]
    fn path3_precision_matches_hand_value() {
        let q = icar_precision(&path3(WeightStyle::B));
        assert_eq!(
            q.to_dense(),
            vec![vec![1.0, -1.0, 0.0], vec![-1.0, 2.0, -1.0], vec![0.0, -1.0, 1.0]]
        );
        assert_eq!(q.rank(), 2);
    }

    #[test]
    fn path3_w_style_is_symmetrized() {
        let q = icar_precision(&path3(WeightStyle::W)).to_dense();
        // degrees (1, 2, 1): w = (1 + 1/2)/2 = 0.75 on both edges
        assert_eq!(q[0], vec![0.75, -0.75, 0.0]);
        assert_eq!(q[1], vec![-0.75, 1.5, -0.75]);
    }

    #[test]
    fn empty_and_split_graph_ranks() {
        let ids: Vec<String> = (0..4).map(|i| format!("n{i}")).collect();
        let empty = AdjacencyGraph::new(ids.clone(), [], WeightStyle::B).unwrap();
        let q = icar_precision(&empty);
        assert_eq!(q.rank(), 0);
        assert!(q.to_dense().iter().flatten().all(|&v| v == 0.0));
        let pairs = AdjacencyGraph::new(ids, [(0, 1), (2, 3)], WeightStyle::B).unwrap();
        assert_eq!(icar_precision(&pairs).rank(), 2);
    }

    #[test]
    fn quadratic_form_examples() {
        let q = icar_precision(&path3(WeightStyle::B));
        assert_eq!(q.quadratic_form(&[1.0, 1.0, 1.0]).unwrap(), 0.0);
        assert_eq!(q.quadratic_form(&[0.0, 1.0, 2.0]).unwrap(), 2.0);
        assert_eq!(q.quadratic_form(&[0.0; 3]).unwrap(), 0.0);
        assert!(matches!(
            q.quadratic_form(&[1.0]),
            Err(GraphError::DimensionMismatch { expected: 3, got: 1 })
        ));
    }

    #[test]
    fn graph_file_roundtrip() {
        let g = AdjacencyGraph::new(
            vec!["x".into(), "a".into(), "m".into(), "q".into()],
            [(0, 1), (2, 1)],
            WeightStyle::W,
        )
        .unwrap();
        let text = graph_to_toml(&g);
        assert_eq!(graph_from_toml(&text, Path::new("mem")).unwrap(), g);
    }

    #[test]
    fn tampered_components_are_rejected() {
        let g = path3(WeightStyle::B);
        let text = graph_to_toml(&g).replace(
            "components = [[\"a\", \"b\", \"c\"]]",
            "components = [[\"a\"], [\"b\", \"c\"]]",
        );
        assert!(graph_from_toml(&text, Path::new("mem")).is_err());
    }
}
