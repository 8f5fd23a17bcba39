//! Anchor/positive/negative set construction over the augmented graph and
//! the InfoNCE loss with dot-product similarity.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::TrafficGraph;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContrastiveConfig {
    /// Negatives sampled per anchor.
    pub gamma: usize,
    /// Weight of the contrastive term in the combined loss.
    pub theta: f64,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        ContrastiveConfig {
            gamma: 10,
            theta: 1.0,
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gamma == 0 {
            return Err(Error::Config("gamma must be >= 1".into()));
        }
        if self.theta < 0.0 {
            return Err(Error::Config("theta must be >= 0".into()));
        }
        Ok(())
    }
}

/// Edge-id triples for the contrastive loss. Anchors are the real
/// attack-class edges; positives come from the virtual label-1 pool plus
/// the other real attack edges; negatives from real benign edges.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveSets {
    pub anchors: Vec<usize>,
    pub positives: Vec<usize>,
    pub negatives: Vec<Vec<usize>>,
    pub warnings: Vec<String>,
}

pub fn build_contrastive_sets(
    graph: &TrafficGraph,
    config: &ContrastiveConfig,
    seed: u64,
) -> Result<ContrastiveSets> {
    config.validate()?;
    let mut anchors = Vec::new();
    let mut virtual_pos = Vec::new();
    let mut benign = Vec::new();
    for (eid, e) in graph.edges().iter().enumerate() {
        match (e.virtual_edge, e.label) {
            (false, 1) => anchors.push(eid),
            // label-0 virtual edges serve only the classification loss
            (true, 1) => virtual_pos.push(eid),
            (false, 0) => benign.push(eid),
            (true, 0) => {}
            _ => unreachable!(),
        }
    }
    if anchors.is_empty() {
        return Err(Error::Contrastive("no attack-class edges to anchor on".into()));
    }
    if benign.is_empty() {
        return Err(Error::Contrastive("benign pool is empty".into()));
    }
    let mut warnings = Vec::new();
    let with_replacement = benign.len() < config.gamma;
    if with_replacement {
        warnings.push(format!(
            "benign pool ({}) smaller than gamma ({}); sampling negatives with replacement",
            benign.len(),
            config.gamma
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut positives = Vec::with_capacity(anchors.len());
    let mut negatives = Vec::with_capacity(anchors.len());
    for &a in &anchors {
        // positive candidates exclude the anchor itself
        let n_candidates = virtual_pos.len() + anchors.len() - 1;
        if n_candidates == 0 {
            return Err(Error::Contrastive(
                "no positive candidates: single attack edge and empty virtual pool".into(),
            ));
        }
        let pick = rng.gen_range(0..n_candidates);
        let pos = if pick < virtual_pos.len() {
            virtual_pos[pick]
        } else {
            let mut k = pick - virtual_pos.len();
            let mut chosen = None;
            for &other in &anchors {
                if other == a {
                    continue;
                }
                if k == 0 {
                    chosen = Some(other);
                    break;
                }
                k -= 1;
            }
            chosen.expect("candidate index in range")
        };
        positives.push(pos);
        let negs: Vec<usize> = if with_replacement {
            (0..config.gamma)
                .map(|_| benign[rng.gen_range(0..benign.len())])
                .collect()
        } else {
            rand::seq::index::sample(&mut rng, benign.len(), config.gamma)
                .iter()
                .map(|i| benign[i])
                .collect()
        };
        negatives.push(negs);
    }
    Ok(ContrastiveSets {
        anchors,
        positives,
        negatives,
        warnings,
    })
}

/// InfoNCE with dot-product similarity in log-sum-exp form:
/// mean over anchors of log(exp(s+) + Σ exp(s-)) - s+.
pub fn infonce_loss(
    anchors: &[Vec<f64>],
    positives: &[Vec<f64>],
    negatives: &[Vec<Vec<f64>>],
) -> Result<f64> {
    if anchors.is_empty() {
        return Err(Error::Empty("infonce_loss: zero anchors".into()));
    }
    if anchors.len() != positives.len() || anchors.len() != negatives.len() {
        return Err(Error::Shape("infonce_loss: set size mismatch".into()));
    }
    let dim = anchors[0].len();
    let dot = |a: &[f64], b: &[f64]| -> Result<f64> {
        if a.len() != dim || b.len() != dim {
            return Err(Error::Shape("infonce_loss: embedding dimension mismatch".into()));
        }
        Ok(a.iter().zip(b.iter()).map(|(x, y)| x * y).sum())
    };
    let mut total = 0.0;
    for i in 0..anchors.len() {
        let sp = dot(&anchors[i], &positives[i])?;
        let sns = negatives[i]
            .iter()
            .map(|n| dot(&anchors[i], n))
            .collect::<Result<Vec<f64>>>()?;
        let m = sns.iter().cloned().fold(sp, f64::max);
        let lse = m + ((sp - m).exp() + sns.iter().map(|s| (s - m).exp()).sum::<f64>()).ln();
        total += lse - sp;
    }
    Ok(total / anchors.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::{MixPattern, MixedEdge, MixupBatch};
    use crate::flow::{Endpoint, FlowRecord};
    use crate::graph::{add_virtual_edges, build_graph};
    use std::collections::BTreeSet;
    use std::net::Ipv4Addr;

    fn records(n_attack: usize, n_benign: usize) -> Vec<FlowRecord> {
        let mut out = Vec::new();
        for i in 0..(n_attack + n_benign) {
            out.push(FlowRecord {
                src: Endpoint::new(Ipv4Addr::new(10, 0, (i / 250) as u8, (i % 250) as u8), 1),
                dst: Endpoint::new(Ipv4Addr::new(11, 0, (i / 250) as u8, (i % 250) as u8), 2),
                features: vec![i as f64],
                label: u8::from(i < n_attack),
            });
        }
        out
    }

    fn virtual_batch(n: usize, label: u8) -> MixupBatch {
        MixupBatch {
            version: 1,
            edges: (0..n)
                .map(|_| MixedEdge {
                    features: vec![0.5],
                    label,
                    pattern: MixPattern::HH,
                    lambda: 0.4,
                    sources: (0, 1),
                })
                .collect(),
        }
    }

    #[test]
    fn forced_choices() {
        let g = build_graph(&records(1, 10));
        let g = add_virtual_edges(&g, &virtual_batch(1, 1)).unwrap();
        let cfg = ContrastiveConfig::default();
        let sets = build_contrastive_sets(&g, &cfg, 0).unwrap();
        assert_eq!(sets.anchors, vec![0]);
        assert_eq!(sets.positives, vec![11]); // the only candidate: the virtual edge
        assert_eq!(sets.negatives[0].len(), 10);
        let distinct: BTreeSet<_> = sets.negatives[0].iter().collect();
        assert_eq!(distinct.len(), 10);
    }

    #[test]
    fn single_anchor_no_virtual_pool_errors() {
        let g = build_graph(&records(1, 10));
        let cfg = ContrastiveConfig::default();
        assert!(build_contrastive_sets(&g, &cfg, 0).is_err());
    }

    #[test]
    fn negatives_are_benign_and_distinct() {
        let g = build_graph(&records(20, 1000));
        let cfg = ContrastiveConfig::default();
        let sets = build_contrastive_sets(&g, &cfg, 5).unwrap();
        assert_eq!(sets.anchors.len(), 20);
        for (i, negs) in sets.negatives.iter().enumerate() {
            let distinct: BTreeSet<_> = negs.iter().collect();
            assert_eq!(distinct.len(), cfg.gamma);
            for &n in negs {
                assert_eq!(g.edge(n).label, 0);
                assert_ne!(n, sets.anchors[i]);
            }
            assert_eq!(g.edge(sets.positives[i]).label, 1);
            assert_ne!(sets.positives[i], sets.anchors[i]);
        }
    }

    #[test]
    fn small_benign_pool_samples_with_replacement() {
        let g = build_graph(&records(3, 4));
        let cfg = ContrastiveConfig {
            gamma: 10,
            theta: 1.0,
        };
        let sets = build_contrastive_sets(&g, &cfg, 1).unwrap();
        assert_eq!(sets.warnings.len(), 1);
        assert!(sets.negatives.iter().all(|n| n.len() == 10));
    }

    #[test]
    fn label_zero_virtual_edges_stay_out_of_positive_pool() {
        let g = build_graph(&records(2, 10));
        let g = add_virtual_edges(&g, &virtual_batch(5, 0)).unwrap();
        let cfg = ContrastiveConfig::default();
        let sets = build_contrastive_sets(&g, &cfg, 3).unwrap();
        for &p in &sets.positives {
            assert_eq!(g.edge(p).label, 1);
            assert!(!g.edge(p).virtual_edge);
        }
    }

    #[test]
    fn equal_scores_closed_form() {
        // orthogonal embeddings: all similarities 0
        let dim = 13;
        let unit = |i: usize| {
            let mut v = vec![0.0; dim];
            v[i] = 1.0;
            v
        };
        let anchors = vec![unit(0)];
        let positives = vec![unit(1)];
        let negatives = vec![(2..12).map(unit).collect::<Vec<_>>()];
        let loss = infonce_loss(&anchors, &positives, &negatives).unwrap();
        assert!((loss - 11.0_f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn large_positive_similarity_drives_loss_to_zero() {
        let anchors = vec![vec![30.0]];
        let positives = vec![vec![30.0]];
        let negatives = vec![vec![vec![0.0], vec![0.0]]];
        let loss = infonce_loss(&anchors, &positives, &negatives).unwrap();
        assert!(loss < 1e-10);
        assert!(loss >= 0.0);
    }

    #[test]
    fn no_overflow_at_similarity_700() {
        let s = 700.0_f64.sqrt();
        let anchors = vec![vec![s]];
        let positives = vec![vec![-s]];
        let negatives = vec![vec![vec![s]]];
        let loss = infonce_loss(&anchors, &positives, &negatives).unwrap();
        assert!(loss.is_finite());
    }

    #[test]
    fn matches_naive_exponential_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let dim = 4;
            let mut randv = |_: usize| -> Vec<f64> {
                (0..dim).map(|_| rng.gen_range(-1.5..1.5)).collect()
            };
            let anchors: Vec<Vec<f64>> = (0..3).map(&mut randv).collect();
            let positives: Vec<Vec<f64>> = (0..3).map(&mut randv).collect();
            let negatives: Vec<Vec<Vec<f64>>> = (0..3)
                .map(|_| (0..5).map(&mut randv).collect())
                .collect();
            let got = infonce_loss(&anchors, &positives, &negatives).unwrap();
            // naive direct-exponential form
            let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
            let mut expect = 0.0;
            for i in 0..3 {
                let ep = dot(&anchors[i], &positives[i]).exp();
                let en: f64 = negatives[i].iter().map(|n| dot(&anchors[i], n).exp()).sum();
                expect -= (ep / (ep + en)).ln();
            }
            expect /= 3.0;
            assert!((got - expect).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_anchors_errors() {
        assert!(infonce_loss(&[], &[], &[]).is_err());
    }

    #[test]
    fn monotonicity_in_scores() {
        let base = infonce_loss(&[vec![1.0]], &[vec![0.5]], &[vec![vec![0.3]]]).unwrap();
        let better_pos = infonce_loss(&[vec![1.0]], &[vec![0.6]], &[vec![vec![0.3]]]).unwrap();
        let worse_neg = infonce_loss(&[vec![1.0]], &[vec![0.5]], &[vec![vec![0.4]]]).unwrap();
        assert!(better_pos < base);
        assert!(worse_neg > base);
    }
}
