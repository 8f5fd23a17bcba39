//! Multi-pattern Mixup: virtual edges formed as Beta-weighted convex
//! combinations of harmful-harmful (HH) and harmful-unharmful (HU)
//! feature pairs, labeled by an indicator on the mixing coefficient.
//!
//! Label convention: class 1 = harmful/attack everywhere in this crate.
//! (Upstream descriptions of "positive samples" are read as attack-class
//! samples; see the contrastive module.)

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MixupConfig {
    /// Beta parameter for HU (harmful-unharmful) mixing.
    pub alpha: f64,
    /// Beta parameter for HH (harmful-harmful) mixing.
    pub beta: f64,
    /// Pairs sampled per pattern; total batch size is 2·sigma.
    pub sigma: usize,
    /// HU indicator: label 1 iff 0 < λ < threshold.
    pub label_threshold: f64,
}

impl Default for MixupConfig {
    fn default() -> Self {
        MixupConfig {
            alpha: 0.3,
            beta: 0.2,
            sigma: 200,
            label_threshold: 0.5,
        }
    }
}

impl MixupConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha <= 0.0 || self.beta <= 0.0 {
            return Err(Error::Config("mixup alpha and beta must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MixPattern {
    /// harmful-harmful
    HH,
    /// harmful-unharmful
    HU,
}

/// One virtual edge produced by mixing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedEdge {
    pub features: Vec<f64>,
    pub label: u8,
    pub pattern: MixPattern,
    pub lambda: f64,
    /// Source edge ids (i, j); for HU, i is the unharmful edge.
    pub sources: (usize, usize),
}

/// Versioned batch of virtual edges, serializable for reproducibility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixupBatch {
    pub version: u32,
    pub edges: Vec<MixedEdge>,
}

impl MixupBatch {
    pub fn empty() -> Self {
        MixupBatch {
            version: 1,
            edges: Vec::new(),
        }
    }
}

/// Symmetric Beta(a, a) draw.
pub fn sample_beta<R: Rng>(a: f64, rng: &mut R) -> Result<f64> {
    if a <= 0.0 {
        return Err(Error::Config(format!("beta parameter must be > 0, got {a}")));
    }
    let dist = Beta::new(a, a).map_err(|e| Error::Config(format!("beta: {e}")))?;
    Ok(dist.sample(rng))
}

/// x̂ = λ·x_i + (1-λ)·x_j with the pattern's indicator label.
/// For HU, x_i must be the unharmful edge.
pub fn mix_pair(
    x_i: &[f64],
    x_j: &[f64],
    lambda: f64,
    pattern: MixPattern,
    threshold: f64,
) -> Result<(Vec<f64>, u8)> {
    if x_i.len() != x_j.len() {
        return Err(Error::Shape(format!(
            "mix_pair: {} vs {} features",
            x_i.len(),
            x_j.len()
        )));
    }
    let mixed = x_i
        .iter()
        .zip(x_j.iter())
        .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
        .collect();
    let label = match pattern {
        MixPattern::HH => 1,
        // open interval: λ = threshold exactly joins the label-0 side
        MixPattern::HU => u8::from(lambda > 0.0 && lambda < threshold),
    };
    Ok((mixed, label))
}

/// Samples sigma HU pairs (λ ~ Beta(α,α)) and sigma HH pairs
/// (λ ~ Beta(β,β)), uniformly with replacement from the label pools.
pub fn mp_mixup(
    features: &[Vec<f64>],
    labels: &[u8],
    config: &MixupConfig,
    seed: u64,
) -> Result<MixupBatch> {
    config.validate()?;
    let harmful: Vec<usize> = labels
        .iter()
        .enumerate()
        .filter(|(_, l)| **l == 1)
        .map(|(i, _)| i)
        .collect();
    let unharmful: Vec<usize> = labels
        .iter()
        .enumerate()
        .filter(|(_, l)| **l == 0)
        .map(|(i, _)| i)
        .collect();
    if config.sigma == 0 {
        return Ok(MixupBatch::empty());
    }
    if harmful.is_empty() {
        return Err(Error::NoMinoritySamples);
    }
    if unharmful.is_empty() {
        return Err(Error::Empty("mp_mixup: no unharmful edges for HU pattern".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::with_capacity(2 * config.sigma);
    for _ in 0..config.sigma {
        let i = unharmful[rng.gen_range(0..unharmful.len())];
        let j = harmful[rng.gen_range(0..harmful.len())];
        let lambda = sample_beta(config.alpha, &mut rng)?;
        let (mixed, label) = mix_pair(
            &features[i],
            &features[j],
            lambda,
            MixPattern::HU,
            config.label_threshold,
        )?;
        edges.push(MixedEdge {
            features: mixed,
            label,
            pattern: MixPattern::HU,
            lambda,
            sources: (i, j),
        });
    }
    for _ in 0..config.sigma {
        let i = harmful[rng.gen_range(0..harmful.len())];
        let j = harmful[rng.gen_range(0..harmful.len())];
        let lambda = sample_beta(config.beta, &mut rng)?;
        let (mixed, label) = mix_pair(
            &features[i],
            &features[j],
            lambda,
            MixPattern::HH,
            config.label_threshold,
        )?;
        edges.push(MixedEdge {
            features: mixed,
            label,
            pattern: MixPattern::HH,
            lambda,
            sources: (i, j),
        });
    }
    Ok(MixupBatch { version: 1, edges })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn beta_one_is_uniform_mean_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 100_000;
        let mean: f64 = (0..n)
            .map(|_| sample_beta(1.0, &mut rng).unwrap())
            .sum::<f64>()
            / n as f64;
        assert!((mean - 0.5).abs() < 0.005, "mean {mean}");
    }

    #[test]
    fn beta_symmetric_mean_and_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| sample_beta(0.3, &mut rng).unwrap()).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.005, "mean {mean}");
        let var = draws.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        // Var Beta(a,a) = 1/(4(2a+1)) = 0.15625 at a = 0.3
        assert!((var - 0.15625).abs() < 0.01, "var {var}");
        assert!(sample_beta(0.0, &mut rng).is_err());
        assert!(sample_beta(-1.0, &mut rng).is_err());
    }

    #[test]
    fn mix_pair_direct_evaluation() {
        let (x, y) = mix_pair(&[1.0, 0.0], &[0.0, 1.0], 0.7, MixPattern::HU, 0.5).unwrap();
        assert!((x[0] - 0.7).abs() < 1e-15 && (x[1] - 0.3).abs() < 1e-15);
        assert_eq!(y, 0);
    }

    #[test]
    fn mix_pair_indicator_cases() {
        let (_, y) = mix_pair(&[0.0], &[1.0], 0.3, MixPattern::HU, 0.5).unwrap();
        assert_eq!(y, 1);
        // boundary joins the label-0 side
        let (_, y) = mix_pair(&[0.0], &[1.0], 0.5, MixPattern::HU, 0.5).unwrap();
        assert_eq!(y, 0);
        let (x, y) = mix_pair(&[3.0], &[7.0], 1.0, MixPattern::HU, 0.5).unwrap();
        assert_eq!(x, vec![3.0]);
        assert_eq!(y, 0);
        // λ = 0 is excluded from the open interval
        let (_, y) = mix_pair(&[0.0], &[1.0], 0.0, MixPattern::HU, 0.5).unwrap();
        assert_eq!(y, 0);
        // HH is always harmful regardless of λ
        let (_, y) = mix_pair(&[0.0], &[1.0], 0.9, MixPattern::HH, 0.5).unwrap();
        assert_eq!(y, 1);
    }

    #[test]
    fn mix_pair_dimension_mismatch() {
        assert!(mix_pair(&[1.0], &[1.0, 2.0], 0.5, MixPattern::HH, 0.5).is_err());
    }

    fn pool() -> (Vec<Vec<f64>>, Vec<u8>) {
        let features = vec![
            vec![0.0, 0.0],
            vec![1.0, 1.0],
            vec![2.0, 0.5],
            vec![3.0, -1.0],
        ];
        let labels = vec![0, 0, 1, 1];
        (features, labels)
    }

    #[test]
    fn mp_mixup_batch_shape() {
        let (features, labels) = pool();
        let cfg = MixupConfig {
            sigma: 200,
            ..Default::default()
        };
        let batch = mp_mixup(&features, &labels, &cfg, 0).unwrap();
        assert_eq!(batch.edges.len(), 400);
        let hh = batch.edges.iter().filter(|e| e.pattern == MixPattern::HH).count();
        assert_eq!(hh, 200);
        assert!(batch
            .edges
            .iter()
            .filter(|e| e.pattern == MixPattern::HH)
            .all(|e| e.label == 1));
    }

    #[test]
    fn mp_mixup_sigma_zero_empty() {
        let (features, labels) = pool();
        let cfg = MixupConfig {
            sigma: 0,
            ..Default::default()
        };
        assert!(mp_mixup(&features, &labels, &cfg, 0).unwrap().edges.is_empty());
    }

    #[test]
    fn mp_mixup_no_minority_errors() {
        let features = vec![vec![0.0], vec![1.0]];
        let labels = vec![0, 0];
        match mp_mixup(&features, &labels, &MixupConfig::default(), 0).unwrap_err() {
            Error::NoMinoritySamples => {}
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn labels_recomputable_from_stored_lambda() {
        let (features, labels) = pool();
        let cfg = MixupConfig {
            sigma: 500,
            ..Default::default()
        };
        let batch = mp_mixup(&features, &labels, &cfg, 7).unwrap();
        for e in &batch.edges {
            let expected = match e.pattern {
                MixPattern::HH => 1,
                MixPattern::HU => u8::from(e.lambda > 0.0 && e.lambda < 0.5),
            };
            assert_eq!(e.label, expected);
        }
    }

    #[test]
    fn convex_hull_containment() {
        let (features, labels) = pool();
        let cfg = MixupConfig {
            sigma: 300,
            ..Default::default()
        };
        let batch = mp_mixup(&features, &labels, &cfg, 3).unwrap();
        for e in &batch.edges {
            let (i, j) = e.sources;
            for (k, x) in e.features.iter().enumerate() {
                let lo = features[i][k].min(features[j][k]);
                let hi = features[i][k].max(features[j][k]);
                assert!(*x >= lo - 1e-12 && *x <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let (features, labels) = pool();
        let cfg = MixupConfig::default();
        let a = mp_mixup(&features, &labels, &cfg, 99).unwrap();
        let b = mp_mixup(&features, &labels, &cfg, 99).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn hu_sources_respect_label_roles() {
        let (features, labels) = pool();
        let batch = mp_mixup(&features, &labels, &MixupConfig::default(), 5).unwrap();
        for e in batch.edges.iter().filter(|e| e.pattern == MixPattern::HU) {
            assert_eq!(labels[e.sources.0], 0, "HU x_i must be unharmful");
            assert_eq!(labels[e.sources.1], 1, "HU x_j must be harmful");
        }
    }
}
