//! The EG-ConMix network: K rounds of edge-aware neighbor aggregation and
//! node update, edge embeddings by endpoint concatenation, and a softmax
//! edge classifier.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::TrafficGraph;
use crate::numcore::tape::NodeId;
use crate::numcore::{matmul, relu, Tape, Tensor2};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub dropout_p: f64,
    pub num_classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            num_layers: 2,
            hidden_dim: 128,
            dropout_p: 0.2,
            num_classes: 2,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 || self.hidden_dim == 0 {
            return Err(Error::Config("num_layers and hidden_dim must be >= 1".into()));
        }
        Ok(())
    }

    /// Input width of layer k (0-based): concat(h_v, mean(concat(h_u, e))).
    /// Node feature dim equals edge feature dim at layer 0.
    pub fn layer_input_dim(&self, k: usize, edge_dim: usize) -> usize {
        let prev = if k == 0 { edge_dim } else { self.hidden_dim };
        2 * prev + edge_dim
    }
}

/// All trainable weights, flat, ordered: (W_0, b_0, ..., W_{K-1}, b_{K-1},
/// W_cls, b_cls). W_k is input_dim×hidden so states multiply on the left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet {
    pub tensors: Vec<Tensor2>,
    pub num_layers: usize,
}

impl ParameterSet {
    /// Seeded uniform Glorot-style initialization.
    pub fn init(config: &ModelConfig, edge_dim: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut glorot = |rows: usize, cols: usize| -> Tensor2 {
            let limit = (6.0 / (rows + cols) as f64).sqrt();
            Tensor2::new(
                rows,
                cols,
                (0..rows * cols).map(|_| rng.gen_range(-limit..limit)).collect(),
            )
        };
        let mut tensors = Vec::new();
        for k in 0..config.num_layers {
            let input = config.layer_input_dim(k, edge_dim);
            tensors.push(glorot(input, config.hidden_dim));
            tensors.push(Tensor2::zeros(1, config.hidden_dim));
        }
        tensors.push(glorot(2 * config.hidden_dim, config.num_classes));
        tensors.push(Tensor2::zeros(1, config.num_classes));
        Ok(ParameterSet {
            tensors,
            num_layers: config.num_layers,
        })
    }

    pub fn weight(&self, k: usize) -> &Tensor2 {
        &self.tensors[2 * k]
    }

    pub fn bias(&self, k: usize) -> &Tensor2 {
        &self.tensors[2 * k + 1]
    }

    pub fn classifier_weight(&self) -> &Tensor2 {
        &self.tensors[2 * self.num_layers]
    }

    pub fn classifier_bias(&self) -> &Tensor2 {
        &self.tensors[2 * self.num_layers + 1]
    }
}

/// Edge embedding z_uv = concat(z_u^K, z_v^K) in (u, v) storage order.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeEmbedding {
    pub edge_id: usize,
    pub z: Vec<f64>,
}

/// Mean over the node's incident edges, in ascending edge-id order, of
/// concat(h_u, e_uv). Isolated nodes aggregate to a zero vector.
pub fn aggregate_neighbors(
    graph: &TrafficGraph,
    v: usize,
    node_states: &Tensor2,
) -> Result<Vec<f64>> {
    if v >= graph.num_nodes() {
        return Err(Error::InvalidNode(v));
    }
    if node_states.rows != graph.num_nodes() {
        return Err(Error::Shape("node_states row count != node count".into()));
    }
    let dh = node_states.cols;
    let de = graph.feature_dim();
    let mut out = vec![0.0; dh + de];
    let pairs = graph.incidence(v);
    if pairs.is_empty() {
        return Ok(out);
    }
    for &(u, e) in pairs {
        for (c, x) in node_states.row(u).iter().enumerate() {
            out[c] += x;
        }
        for (c, x) in graph.edge(e).features.iter().enumerate() {
            out[dh + c] += x;
        }
    }
    let inv = 1.0 / pairs.len() as f64;
    for o in out.iter_mut() {
        *o *= inv;
    }
    Ok(out)
}

/// h_v^k = dropout(relu(concat(h_v, h_N)·W + b)); dropout is the caller's
/// choice (between layers only).
pub fn node_update<R: Rng>(
    h_v: &[f64],
    h_n: &[f64],
    weight: &Tensor2,
    bias: &Tensor2,
    dropout_p: f64,
    training: bool,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut cat = Vec::with_capacity(h_v.len() + h_n.len());
    cat.extend_from_slice(h_v);
    cat.extend_from_slice(h_n);
    let x = Tensor2::new(1, cat.len(), cat);
    let mut z = matmul(&x, weight)?;
    for (v, b) in z.data.iter_mut().zip(bias.data.iter()) {
        *v += b;
    }
    let act = relu(&z);
    let out = crate::numcore::dropout(&act, dropout_p, training, rng)?;
    Ok(out.data)
}

/// Tape node handles for one forward pass.
pub struct ForwardNodes {
    pub node_states: NodeId,
    pub edge_embeddings: NodeId,
    pub probabilities: NodeId,
    /// Parameter tape ids in ParameterSet order.
    pub params: Vec<NodeId>,
}

/// Records the full forward pass on a tape: layer 0 node state is the
/// all-ones feature vector, then K aggregate+update rounds, edge
/// embeddings per storage (u, v) order, softmax probabilities per edge.
pub fn forward_on_tape<R: Rng>(
    tape: &mut Tape,
    graph: &TrafficGraph,
    params: &ParameterSet,
    config: &ModelConfig,
    training: bool,
    rng: &mut R,
) -> Result<ForwardNodes> {
    config.validate()?;
    if graph.num_nodes() == 0 {
        return Err(Error::Empty("forward: empty graph".into()));
    }
    let n = graph.num_nodes();
    let de = graph.feature_dim();
    let param_ids: Vec<NodeId> = params.tensors.iter().map(|t| tape.param(t.clone())).collect();

    let mut edge_data = Vec::with_capacity(graph.num_edges() * de);
    for e in graph.edges() {
        edge_data.extend_from_slice(&e.features);
    }
    let e_id = tape.constant(Tensor2::new(graph.num_edges(), de, edge_data));
    let plan = graph.adjacency_plan();

    let mut h = tape.constant(Tensor2::ones(n, de));
    for k in 0..config.num_layers {
        let hn = tape.neighbor_mean(h, e_id, plan.clone())?;
        let cat = tape.concat_cols(h, hn)?;
        let z = tape.matmul(cat, param_ids[2 * k])?;
        let z = tape.add_bias(z, param_ids[2 * k + 1])?;
        let mut a = tape.relu(z);
        if k + 1 < config.num_layers {
            a = tape.dropout(a, config.dropout_p, training, rng)?;
        }
        h = a;
    }

    let srcs: Vec<usize> = graph.edges().iter().map(|e| e.u).collect();
    let dsts: Vec<usize> = graph.edges().iter().map(|e| e.v).collect();
    let zu = tape.gather_rows(h, srcs)?;
    let zv = tape.gather_rows(h, dsts)?;
    let emb = tape.concat_cols(zu, zv)?;
    let logits = tape.matmul(emb, param_ids[2 * config.num_layers])?;
    let logits = tape.add_bias(logits, param_ids[2 * config.num_layers + 1])?;
    let probs = tape.softmax_rows(logits);

    Ok(ForwardNodes {
        node_states: h,
        edge_embeddings: emb,
        probabilities: probs,
        params: param_ids,
    })
}

/// Forward pass results as plain tensors.
pub struct ForwardOutput {
    pub node_states: Tensor2,
    pub edge_embeddings: Tensor2,
    pub probabilities: Tensor2,
}

pub fn forward<R: Rng>(
    graph: &TrafficGraph,
    params: &ParameterSet,
    config: &ModelConfig,
    training: bool,
    rng: &mut R,
) -> Result<ForwardOutput> {
    let mut tape = Tape::new();
    let nodes = forward_on_tape(&mut tape, graph, params, config, training, rng)?;
    Ok(ForwardOutput {
        node_states: tape.value(nodes.node_states).clone(),
        edge_embeddings: tape.value(nodes.edge_embeddings).clone(),
        probabilities: tape.value(nodes.probabilities).clone(),
    })
}

/// z_uv = concat(z_u, z_v) for every edge, in edge index order.
pub fn embed_edges(node_states: &Tensor2, graph: &TrafficGraph) -> Vec<EdgeEmbedding> {
    graph
        .edges()
        .iter()
        .enumerate()
        .map(|(eid, e)| {
            let mut z = Vec::with_capacity(2 * node_states.cols);
            z.extend_from_slice(node_states.row(e.u));
            z.extend_from_slice(node_states.row(e.v));
            EdgeEmbedding { edge_id: eid, z }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{generate_synthetic, Endpoint, FlowRecord};
    use crate::graph::build_graph;
    use std::net::Ipv4Addr;

    fn rec(src: (u8, u16), dst: (u8, u16), features: Vec<f64>) -> FlowRecord {
        FlowRecord {
            src: Endpoint::new(Ipv4Addr::new(10, 0, 0, src.0), src.1),
            dst: Endpoint::new(Ipv4Addr::new(10, 0, 0, dst.0), dst.1),
            features,
            label: 0,
        }
    }

    fn small_config() -> ModelConfig {
        ModelConfig {
            num_layers: 2,
            hidden_dim: 8,
            dropout_p: 0.0,
            num_classes: 2,
        }
    }

    #[test]
    fn aggregate_degree_one_is_concat() {
        let g = build_graph(&[rec((1, 1), (2, 2), vec![0.5, -1.0])]);
        let states = Tensor2::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let agg = aggregate_neighbors(&g, 0, &states).unwrap();
        assert_eq!(agg, vec![3.0, 4.0, 0.5, -1.0]);
    }

    #[test]
    fn aggregate_isolated_is_zero() {
        use crate::graph::{GraphEdge, GraphNode, TrafficGraph};
        let nodes = vec![
            GraphNode { endpoint: None },
            GraphNode { endpoint: None },
            GraphNode { endpoint: None },
        ];
        let edges = vec![GraphEdge {
            u: 0,
            v: 1,
            features: vec![1.0, 2.0],
            label: 0,
            virtual_edge: false,
        }];
        let g = TrafficGraph::from_parts(nodes, edges, 2).unwrap();
        let states = Tensor2::ones(3, 2);
        let agg = aggregate_neighbors(&g, 2, &states).unwrap();
        assert_eq!(agg, vec![0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn aggregate_degree_three_matches_brute_force() {
        let g = build_graph(&[
            rec((1, 1), (2, 2), vec![1.0, 2.0]),
            rec((1, 1), (3, 3), vec![3.0, 4.0]),
            rec((1, 1), (4, 4), vec![5.0, 6.0]),
        ]);
        let states = Tensor2::new(
            4,
            3,
            vec![
                0.1, 0.2, 0.3, 1.0, 1.1, 1.2, 2.0, 2.1, 2.2, 3.0, 3.1, 3.2,
            ],
        );
        let agg = aggregate_neighbors(&g, 0, &states).unwrap();
        // brute-force elementwise mean over the three (neighbor, edge) rows
        let mut expect = [0.0; 5];
        for (u, e) in [(1usize, 0usize), (2, 1), (3, 2)] {
            for c in 0..3 {
                expect[c] += states.get(u, c) / 3.0;
            }
            for (c, f) in g.edge(e).features.iter().enumerate() {
                expect[3 + c] += f / 3.0;
            }
        }
        for (a, b) in agg.iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn node_update_zero_weights_gives_relu_bias() {
        let w = Tensor2::zeros(4, 3);
        let b = Tensor2::from_row(&[1.0, -2.0, 0.5]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = node_update(&[1.0, 2.0], &[3.0, 4.0], &w, &b, 0.0, false, &mut rng).unwrap();
        assert_eq!(out, vec![1.0, 0.0, 0.5]);
    }

    #[test]
    fn node_update_matches_straightline_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = Tensor2::new(5, 4, (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let b = Tensor2::new(1, 4, (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let h_v: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let h_n: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let got = node_update(&h_v, &h_n, &w, &b, 0.0, false, &mut rng).unwrap();
        // independent straight-line reimplementation
        let cat: Vec<f64> = h_v.iter().chain(h_n.iter()).cloned().collect();
        for j in 0..4 {
            let mut s = b.data[j];
            for (i, x) in cat.iter().enumerate() {
                s += x * w.get(i, j);
            }
            let expect = s.max(0.0);
            assert!((got[j] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_single_edge_symmetry() {
        let g = build_graph(&[rec((1, 1), (2, 2), vec![0.7, -0.3])]);
        let config = small_config();
        let params = ParameterSet::init(&config, 2, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = forward(&g, &params, &config, false, &mut rng).unwrap();
        assert_eq!(out.node_states.row(0), out.node_states.row(1));
        let p = out.probabilities;
        assert_eq!(p.rows, 1);
        assert!((p.row(0).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn forward_probabilities_well_formed() {
        let records = generate_synthetic(6, 25, 0.4, 1.0, 3, 8).unwrap();
        let g = build_graph(&records);
        let config = small_config();
        let params = ParameterSet::init(&config, 3, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = forward(&g, &params, &config, false, &mut rng).unwrap();
        assert_eq!(out.probabilities.rows, g.num_edges());
        for r in 0..out.probabilities.rows {
            let sum: f64 = out.probabilities.row(r).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_deterministic_without_dropout() {
        let records = generate_synthetic(5, 15, 0.4, 1.0, 2, 4).unwrap();
        let g = build_graph(&records);
        let config = small_config();
        let params = ParameterSet::init(&config, 2, 5).unwrap();
        let mut rng1 = ChaCha8Rng::seed_from_u64(1);
        let mut rng2 = ChaCha8Rng::seed_from_u64(999);
        let a = forward(&g, &params, &config, false, &mut rng1).unwrap();
        let b = forward(&g, &params, &config, false, &mut rng2).unwrap();
        assert_eq!(a.probabilities.data, b.probabilities.data);
    }

    #[test]
    fn embed_edges_contract() {
        let g = build_graph(&[
            rec((1, 1), (2, 2), vec![1.0]),
            rec((2, 2), (1, 1), vec![2.0]),
        ]);
        let states = Tensor2::new(2, 1, vec![1.0, 2.0]);
        let embs = embed_edges(&states, &g);
        assert_eq!(embs.len(), 2);
        assert_eq!(embs[0].z, vec![1.0, 2.0]);
        assert_eq!(embs[1].z, vec![2.0, 1.0]);
        assert_eq!(embs[1].edge_id, 1);
    }
}
