//! Endpoint/flow traffic graph: nodes are (IP, port) 2-tuples with
//! all-ones features, edges carry flow features and labels. Immutable
//! after construction; augmentation returns a new value.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::sync::Arc;

use rand::Rng;

use crate::augment::MixupBatch;
use crate::error::{Error, Result};
use crate::flow::{Endpoint, FlowRecord};
use crate::numcore::AdjacencyPlan;

#[derive(Debug, Clone, PartialEq)]
pub struct GraphNode {
    /// None for virtual nodes injected by augmentation.
    pub endpoint: Option<Endpoint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphEdge {
    pub u: usize,
    pub v: usize,
    pub features: Vec<f64>,
    pub label: u8,
    pub virtual_edge: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrafficGraph {
    nodes: Vec<GraphNode>,
    edges: Vec<GraphEdge>,
    feature_dim: usize,
    /// Per node: (neighbor, edge id) pairs in ascending edge-id order.
    incidence: Vec<Vec<(usize, usize)>>,
}

/// The sampled neighborhood of a center node.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighborhood {
    pub center: usize,
    pub pairs: Vec<(usize, usize)>,
}

impl TrafficGraph {
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn nodes(&self) -> &[GraphNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[GraphEdge] {
        &self.edges
    }

    pub fn edge(&self, id: usize) -> &GraphEdge {
        &self.edges[id]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.incidence[v].len()
    }

    pub fn incidence(&self, v: usize) -> &[(usize, usize)] {
        &self.incidence[v]
    }

    /// Node feature matrix row for any node: all ones, width = feature_dim.
    pub fn node_feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn adjacency_plan(&self) -> Arc<AdjacencyPlan> {
        Arc::new(AdjacencyPlan {
            incidence: self.incidence.clone(),
            num_edges: self.edges.len(),
        })
    }

    /// Rebuilds the incidence index from the edge list and compares.
    pub fn check_incidence(&self) -> bool {
        build_incidence(self.nodes.len(), &self.edges) == self.incidence
    }

    /// Builds a graph directly from node/edge tables.
    pub fn from_parts(nodes: Vec<GraphNode>, edges: Vec<GraphEdge>, feature_dim: usize) -> Result<Self> {
        for e in &edges {
            if e.u >= nodes.len() || e.v >= nodes.len() {
                return Err(Error::InvalidNode(e.u.max(e.v)));
            }
            if e.features.len() != feature_dim {
                return Err(Error::Shape("edge feature dimension mismatch".into()));
            }
        }
        let incidence = build_incidence(nodes.len(), &edges);
        Ok(TrafficGraph {
            nodes,
            edges,
            feature_dim,
            incidence,
        })
    }
}

fn build_incidence(num_nodes: usize, edges: &[GraphEdge]) -> Vec<Vec<(usize, usize)>> {
    let mut incidence = vec![Vec::new(); num_nodes];
    for (eid, e) in edges.iter().enumerate() {
        incidence[e.u].push((e.v, eid));
        incidence[e.v].push((e.u, eid));
    }
    incidence
}

/// One node per distinct (ip, port) 2-tuple in first-appearance order; one
/// edge per record (parallel edges kept). Undirected for neighborhood
/// purposes.
pub fn build_graph(records: &[FlowRecord]) -> TrafficGraph {
    let feature_dim = records.first().map_or(0, |r| r.features.len());
    let mut ids: BTreeMap<Endpoint, usize> = BTreeMap::new();
    let mut nodes = Vec::new();
    let mut node_id = |ep: Endpoint, nodes: &mut Vec<GraphNode>| -> usize {
        *ids.entry(ep).or_insert_with(|| {
            nodes.push(GraphNode { endpoint: Some(ep) });
            nodes.len() - 1
        })
    };
    let mut edges = Vec::with_capacity(records.len());
    for r in records {
        let u = node_id(r.src, &mut nodes);
        let v = node_id(r.dst, &mut nodes);
        edges.push(GraphEdge {
            u,
            v,
            features: r.features.clone(),
            label: r.label,
            virtual_edge: false,
        });
    }
    let incidence = build_incidence(nodes.len(), &edges);
    TrafficGraph {
        nodes,
        edges,
        feature_dim,
        incidence,
    }
}

/// Full incidence list, or a uniform sample without replacement of size
/// `fanout` (kept in ascending edge-id order).
pub fn neighborhood<R: Rng>(
    graph: &TrafficGraph,
    v: usize,
    fanout: Option<usize>,
    rng: &mut R,
) -> Result<Neighborhood> {
    if v >= graph.num_nodes() {
        return Err(Error::InvalidNode(v));
    }
    let all = graph.incidence(v);
    let pairs = match fanout {
        Some(k) if all.len() > k => {
            let mut picks: Vec<usize> = rand::seq::index::sample(rng, all.len(), k).into_vec();
            picks.sort_unstable();
            picks.into_iter().map(|i| all[i]).collect()
        }
        _ => all.to_vec(),
    };
    Ok(Neighborhood { center: v, pairs })
}

/// Appends, per mixed edge, a fresh pair of virtual nodes connected by one
/// virtual edge carrying the mixed features and indicator label. Existing
/// content is untouched; returns a new graph.
pub fn add_virtual_edges(graph: &TrafficGraph, batch: &MixupBatch) -> Result<TrafficGraph> {
    let mut out = graph.clone();
    for mixed in &batch.edges {
        if mixed.features.len() != graph.feature_dim {
            return Err(Error::Shape(format!(
                "virtual edge has {} features, graph expects {}",
                mixed.features.len(),
                graph.feature_dim
            )));
        }
        let u = out.nodes.len();
        out.nodes.push(GraphNode { endpoint: None });
        out.nodes.push(GraphNode { endpoint: None });
        let eid = out.edges.len();
        out.edges.push(GraphEdge {
            u,
            v: u + 1,
            features: mixed.features.clone(),
            label: mixed.label,
            virtual_edge: true,
        });
        out.incidence.push(vec![(u + 1, eid)]);
        out.incidence.push(vec![(u, eid)]);
    }
    Ok(out)
}

const GRAPH_MAGIC: &[u8; 4] = b"EGTG";
const GRAPH_VERSION: u32 = 1;

pub fn save_graph<W: Write>(graph: &TrafficGraph, mut w: W) -> Result<()> {
    w.write_all(GRAPH_MAGIC)?;
    w.write_all(&GRAPH_VERSION.to_le_bytes())?;
    w.write_all(&(graph.feature_dim as u64).to_le_bytes())?;
    w.write_all(&(graph.nodes.len() as u64).to_le_bytes())?;
    for n in &graph.nodes {
        match n.endpoint {
            Some(ep) => {
                w.write_all(&[1u8])?;
                w.write_all(&u32::from(ep.ip).to_le_bytes())?;
                w.write_all(&ep.port.to_le_bytes())?;
            }
            None => w.write_all(&[0u8, 0, 0, 0, 0, 0, 0])?,
        }
    }
    w.write_all(&(graph.edges.len() as u64).to_le_bytes())?;
    for e in &graph.edges {
        w.write_all(&(e.u as u64).to_le_bytes())?;
        w.write_all(&(e.v as u64).to_le_bytes())?;
        w.write_all(&[e.label, u8::from(e.virtual_edge)])?;
        for f in &e.features {
            w.write_all(&f.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load_graph<R: Read>(mut r: R) -> Result<TrafficGraph> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != GRAPH_MAGIC {
        return Err(Error::Checkpoint("bad graph magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != GRAPH_VERSION {
        return Err(Error::Checkpoint(format!("unsupported graph version {version}")));
    }
    let feature_dim = read_u64(&mut r)? as usize;
    let num_nodes = read_u64(&mut r)? as usize;
    let mut nodes = Vec::with_capacity(num_nodes);
    for _ in 0..num_nodes {
        let mut buf = [0u8; 7];
        r.read_exact(&mut buf)?;
        let endpoint = if buf[0] == 1 {
            let ip = u32::from_le_bytes([buf[1], buf[2], buf[3], buf[4]]);
            let port = u16::from_le_bytes([buf[5], buf[6]]);
            Some(Endpoint::new(ip.into(), port))
        } else {
            None
        };
        nodes.push(GraphNode { endpoint });
    }
    let num_edges = read_u64(&mut r)? as usize;
    let mut edges = Vec::with_capacity(num_edges);
    for _ in 0..num_edges {
        let u = read_u64(&mut r)? as usize;
        let v = read_u64(&mut r)? as usize;
        let mut lv = [0u8; 2];
        r.read_exact(&mut lv)?;
        let mut features = Vec::with_capacity(feature_dim);
        for _ in 0..feature_dim {
            let mut fb = [0u8; 8];
            r.read_exact(&mut fb)?;
            features.push(f64::from_le_bytes(fb));
        }
        if u >= num_nodes || v >= num_nodes {
            return Err(Error::Checkpoint("edge references invalid node".into()));
        }
        edges.push(GraphEdge {
            u,
            v,
            features,
            label: lv[0],
            virtual_edge: lv[1] == 1,
        });
    }
    let incidence = build_incidence(nodes.len(), &edges);
    Ok(TrafficGraph {
        nodes,
        edges,
        feature_dim,
        incidence,
    })
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::{MixPattern, MixedEdge};
    use crate::flow::generate_synthetic;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::net::Ipv4Addr;

    fn rec(src: (u8, u16), dst: (u8, u16), label: u8) -> FlowRecord {
        FlowRecord {
            src: Endpoint::new(Ipv4Addr::new(10, 0, 0, src.0), src.1),
            dst: Endpoint::new(Ipv4Addr::new(10, 0, 0, dst.0), dst.1),
            features: vec![1.5, -0.5],
            label,
        }
    }

    #[test]
    fn single_record_graph() {
        let g = build_graph(&[rec((1, 10), (2, 20), 0)]);
        assert_eq!(g.num_nodes(), 2);
        assert_eq!(g.num_edges(), 1);
        assert_eq!(g.incidence(0), &[(1, 0)]);
        assert_eq!(g.incidence(1), &[(0, 0)]);
    }

    #[test]
    fn parallel_edges_kept() {
        let g = build_graph(&[rec((1, 10), (2, 20), 0), rec((1, 10), (2, 20), 1)]);
        assert_eq!(g.num_nodes(), 2);
        assert_eq!(g.num_edges(), 2);
        assert_eq!(g.degree(0), 2);
    }

    #[test]
    fn path_degree_sequence() {
        // A-B, B-C, C-D
        let g = build_graph(&[
            rec((1, 1), (2, 2), 0),
            rec((2, 2), (3, 3), 0),
            rec((3, 3), (4, 4), 0),
        ]);
        let mut degrees: Vec<usize> = (0..4).map(|v| g.degree(v)).collect();
        degrees.sort_unstable();
        assert_eq!(degrees, vec![1, 1, 2, 2]);
        assert!(g.check_incidence());
    }

    #[test]
    fn empty_graph() {
        let g = build_graph(&[]);
        assert_eq!(g.num_nodes(), 0);
        assert_eq!(g.num_edges(), 0);
    }

    #[test]
    fn neighborhood_full_and_sampled() {
        let records = vec![
            rec((1, 1), (2, 2), 0),
            rec((1, 1), (3, 3), 0),
            rec((1, 1), (4, 4), 0),
            rec((1, 1), (5, 5), 0),
            rec((1, 1), (6, 6), 0),
        ];
        let g = build_graph(&records);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let full = neighborhood(&g, 0, None, &mut rng).unwrap();
        assert_eq!(full.pairs.len(), 5);
        assert_eq!(full.pairs, g.incidence(0));

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let sampled = neighborhood(&g, 0, Some(2), &mut rng).unwrap();
        assert_eq!(sampled.pairs.len(), 2);
        for p in &sampled.pairs {
            assert!(g.incidence(0).contains(p));
        }
        let mut rng2 = ChaCha8Rng::seed_from_u64(4);
        let again = neighborhood(&g, 0, Some(2), &mut rng2).unwrap();
        assert_eq!(sampled, again);

        assert!(neighborhood(&g, 99, None, &mut rng).is_err());
    }

    #[test]
    fn isolated_node_and_degree3_full_fanout() {
        let g = build_graph(&[
            rec((1, 1), (2, 2), 0),
            rec((1, 1), (3, 3), 0),
            rec((1, 1), (4, 4), 0),
        ]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let n = neighborhood(&g, 0, None, &mut rng).unwrap();
        assert_eq!(n.pairs.len(), 3);
    }

    fn mixed(features: Vec<f64>) -> MixedEdge {
        MixedEdge {
            features,
            label: 1,
            pattern: MixPattern::HH,
            lambda: 0.4,
            sources: (0, 0),
        }
    }

    #[test]
    fn virtual_edges_append_dyads() {
        let g = build_graph(&[rec((1, 1), (2, 2), 0)]);
        let batch = MixupBatch {
            version: 1,
            edges: vec![mixed(vec![0.5, 0.5])],
        };
        let g2 = add_virtual_edges(&g, &batch).unwrap();
        assert_eq!(g2.num_nodes(), 4);
        assert_eq!(g2.num_edges(), 2);
        assert!(g2.edge(1).virtual_edge);
        assert!(g2.nodes()[2].endpoint.is_none());
        // original content untouched
        assert_eq!(g2.edges()[0], g.edges()[0]);
        assert_eq!(g2.nodes()[0], g.nodes()[0]);
        assert!(g2.check_incidence());

        let empty = add_virtual_edges(&g, &MixupBatch::empty()).unwrap();
        assert_eq!(empty, g);
    }

    #[test]
    fn virtual_edge_counts_scale_with_sigma() {
        let g = build_graph(&[rec((1, 1), (2, 2), 0)]);
        let batch = MixupBatch {
            version: 1,
            edges: (0..200).map(|_| mixed(vec![0.0, 0.0])).collect(),
        };
        let g2 = add_virtual_edges(&g, &batch).unwrap();
        assert_eq!(g2.num_nodes(), g.num_nodes() + 400);
        assert_eq!(g2.num_edges(), g.num_edges() + 200);
    }

    #[test]
    fn virtual_edge_dimension_mismatch() {
        let g = build_graph(&[rec((1, 1), (2, 2), 0)]);
        let batch = MixupBatch {
            version: 1,
            edges: vec![mixed(vec![0.5])],
        };
        assert!(add_virtual_edges(&g, &batch).is_err());
    }

    #[test]
    fn degree_sum_is_twice_edge_count() {
        let records = generate_synthetic(12, 80, 0.3, 1.0, 4, 33).unwrap();
        let g = build_graph(&records);
        let total: usize = (0..g.num_nodes()).map(|v| g.degree(v)).sum();
        assert_eq!(total, 2 * g.num_edges());
    }

    #[test]
    fn graph_serialization_round_trip() {
        let records = generate_synthetic(8, 40, 0.25, 2.0, 3, 17).unwrap();
        let g = build_graph(&records);
        let batch = MixupBatch {
            version: 1,
            edges: vec![MixedEdge {
                features: vec![0.1, 0.2, 0.3],
                label: 1,
                pattern: MixPattern::HU,
                lambda: 0.2,
                sources: (0, 1),
            }],
        };
        let g = add_virtual_edges(&g, &batch).unwrap();
        let mut buf = Vec::new();
        save_graph(&g, &mut buf).unwrap();
        let loaded = load_graph(buf.as_slice()).unwrap();
        assert_eq!(g, loaded);
    }
}
