//! Training loop combining the classification and contrastive objectives,
//! evaluation with macro-F1, multi-seed aggregation, and the two
//! hyperparameter sweeps.

use std::io::{Read, Write};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{mp_mixup, MixupConfig};
use crate::contrastive::{build_contrastive_sets, ContrastiveConfig, ContrastiveSets};
use crate::error::{Error, Result};
use crate::flow::{apply_normalizer, fit_normalizer, stratified_split, FlowRecord, NormMethod, NormStats, SplitFractions};
use crate::graph::{add_virtual_edges, build_graph, TrafficGraph};
use crate::metrics::{mean_std, report_from_predictions, MetricsReport};
use crate::model::{forward, forward_on_tape, ModelConfig, ParameterSet};
use crate::numcore::tape::BCE_CLAMP;
use crate::numcore::{adam_step, AdamState, Tape, Tensor2};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub mixup: MixupConfig,
    pub contrastive: ContrastiveConfig,
    pub model: ModelConfig,
    pub seeds: Vec<u64>,
    pub enable_mixup: bool,
    pub enable_contrastive: bool,
    /// Stratified subsample of the train split, in (0, 1].
    pub train_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            lr: 0.01,
            mixup: MixupConfig::default(),
            contrastive: ContrastiveConfig::default(),
            model: ModelConfig::default(),
            seeds: vec![1, 2, 3, 4, 5],
            enable_mixup: true,
            enable_contrastive: true,
            train_fraction: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.lr <= 0.0 {
            return Err(Error::Config("lr must be > 0".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must be non-empty".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(Error::Config("train_fraction must be in (0, 1]".into()));
        }
        self.mixup.validate()?;
        self.contrastive.validate()?;
        self.model.validate()
    }

    /// The ablation label for the manifest: which loss terms are active.
    pub fn method_name(&self) -> &'static str {
        match (self.enable_mixup, self.enable_contrastive) {
            (true, true) => "EG-ConMix",
            (false, true) => "EG-Con",
            (true, false) => "EG-Mix",
            (false, false) => "E-GraphSAGE",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss_c: f64,
    pub loss_k: f64,
    pub loss_total: f64,
    pub val_macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub model: ModelConfig,
    pub params: ParameterSet,
    pub norm_stats: Option<NormStats>,
    pub remap_seed: u64,
    pub train_seed: u64,
}

/// Mean binary cross-entropy over masked edges, p = class-1 probability
/// clamped to [1e-12, 1-1e-12].
pub fn cross_entropy(probs: &Tensor2, labels: &[u8], mask: &[usize]) -> Result<f64> {
    if probs.cols != 2 || labels.len() != probs.rows {
        return Err(Error::Shape("cross_entropy expects Nx2 probs with N labels".into()));
    }
    if mask.is_empty() {
        return Err(Error::Empty("cross_entropy: empty mask".into()));
    }
    let mut total = 0.0;
    for &i in mask {
        let p = probs.get(i, 1).clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
        let y = labels[i] as f64;
        total -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
    }
    Ok(total / mask.len() as f64)
}

/// ℒ = ℒ_c + θ·ℒ_k.
pub fn total_loss(loss_c: f64, loss_k: f64, theta: f64) -> f64 {
    loss_c + theta * loss_k
}

/// splitmix64-style seed derivation: independent streams per purpose.
pub fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_mul(0x9E3779B97F4A7C15)
        .wrapping_add(tag.wrapping_mul(0xBF58476D1CE4E5B9))
        .wrapping_add(index.wrapping_mul(0x94D049BB133111EB));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy)]
pub struct LossBreakdown {
    pub loss_c: f64,
    pub loss_k: f64,
    pub total: f64,
}

/// Records forward + both loss terms on a tape. The training mask covers
/// every edge of the (augmented) graph: real train edges and virtual
/// edges. Returns the total-loss node and param ids for backward.
#[allow(clippy::too_many_arguments)]
pub fn loss_on_tape(
    tape: &mut Tape,
    graph: &TrafficGraph,
    params: &ParameterSet,
    model: &ModelConfig,
    theta: f64,
    sets: Option<&ContrastiveSets>,
    training: bool,
    dropout_rng: &mut ChaCha8Rng,
) -> Result<(crate::numcore::tape::NodeId, Vec<crate::numcore::tape::NodeId>, LossBreakdown)> {
    let nodes = forward_on_tape(tape, graph, params, model, training, dropout_rng)?;
    let labels: Vec<f64> = graph.edges().iter().map(|e| e.label as f64).collect();
    let mask: Vec<usize> = (0..graph.num_edges()).collect();
    let lc = tape.masked_bce(nodes.probabilities, labels, mask)?;
    let (loss_node, loss_k) = match sets {
        Some(s) => {
            let lk = tape.infonce(
                nodes.edge_embeddings,
                s.anchors.clone(),
                s.positives.clone(),
                s.negatives.clone(),
            )?;
            let total = tape.add_scaled(lc, lk, theta)?;
            (total, tape.scalar_value(lk))
        }
        None => (lc, 0.0),
    };
    let breakdown = LossBreakdown {
        loss_c: tape.scalar_value(lc),
        loss_k,
        total: tape.scalar_value(loss_node),
    };
    Ok((loss_node, nodes.params, breakdown))
}

/// Stratified subsample of `records` keeping `fraction` of each class.
pub fn stratified_fraction(records: &[FlowRecord], fraction: f64, seed: u64) -> Vec<FlowRecord> {
    if fraction >= 1.0 {
        return records.to_vec();
    }
    use rand::seq::SliceRandom;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for class in [0u8, 1u8] {
        let mut idx: Vec<usize> = records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.label == class)
            .map(|(i, _)| i)
            .collect();
        idx.shuffle(&mut rng);
        let keep = ((idx.len() as f64 * fraction).round() as usize).max(1.min(idx.len()));
        idx.truncate(keep);
        idx.sort_unstable();
        out.extend(idx.into_iter().map(|i| records[i].clone()));
    }
    out
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochStats>,
    pub warnings: Vec<String>,
}

/// Full-graph training: per epoch, optionally inject a fresh Mixup batch,
/// run forward, combine cross-entropy over all (real + virtual) train
/// edges with the InfoNCE term, and take one Adam step. The returned
/// checkpoint holds the best-validation-epoch parameters.
pub fn train(
    train_records: &[FlowRecord],
    val_records: &[FlowRecord],
    config: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_records.is_empty() {
        return Err(Error::Empty("train: no training records".into()));
    }
    let mut warnings = Vec::new();

    let train_sub = stratified_fraction(train_records, config.train_fraction, derive_seed(seed, 1, 0));
    let has_attack = train_sub.iter().any(|r| r.label == 1);
    let has_benign = train_sub.iter().any(|r| r.label == 0);
    let mut enable_mixup = config.enable_mixup;
    let mut enable_contrastive = config.enable_contrastive;
    if !(has_attack && has_benign) {
        if enable_mixup {
            warnings.push("train split missing a class; mixup disabled".into());
            enable_mixup = false;
        }
        if enable_contrastive {
            warnings.push("train split missing a class; contrastive loss disabled".into());
            enable_contrastive = false;
        }
    }

    let base_graph = build_graph(&train_sub);
    let edge_features: Vec<Vec<f64>> = base_graph.edges().iter().map(|e| e.features.clone()).collect();
    let edge_labels: Vec<u8> = base_graph.edges().iter().map(|e| e.label).collect();
    let edge_dim = base_graph.feature_dim();

    // validation graph: train context + val edges, scored on val only
    let val_graph_records: Vec<FlowRecord> = train_sub
        .iter()
        .chain(val_records.iter())
        .cloned()
        .collect();
    let val_graph = build_graph(&val_graph_records);
    let val_edge_start = train_sub.len();
    let val_labels: Vec<u8> = val_records.iter().map(|r| r.label).collect();

    let mut params = ParameterSet::init(&config.model, edge_dim, derive_seed(seed, 2, 0))?;
    let mut adam = AdamState::new(&params.tensors);
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, ParameterSet)> = None;

    for epoch in 0..config.epochs {
        let graph = if enable_mixup && config.mixup.sigma > 0 {
            let batch = mp_mixup(
                &edge_features,
                &edge_labels,
                &config.mixup,
                derive_seed(seed, 3, epoch as u64),
            )?;
            add_virtual_edges(&base_graph, &batch)?
        } else {
            base_graph.clone()
        };

        let sets = if enable_contrastive {
            Some(build_contrastive_sets(
                &graph,
                &config.contrastive,
                derive_seed(seed, 5, epoch as u64),
            )?)
        } else {
            None
        };

        let mut dropout_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 4, epoch as u64));
        let mut tape = Tape::new();
        let (loss_node, _param_ids, breakdown) = loss_on_tape(
            &mut tape,
            &graph,
            &params,
            &config.model,
            config.contrastive.theta,
            sets.as_ref(),
            true,
            &mut dropout_rng,
        )?;
        if !breakdown.loss_c.is_finite() {
            return Err(Error::NonFinite {
                epoch,
                term: "cross-entropy loss".into(),
            });
        }
        if !breakdown.loss_k.is_finite() {
            return Err(Error::NonFinite {
                epoch,
                term: "contrastive loss".into(),
            });
        }
        let grads = tape.backward(loss_node)?;
        adam_step(&mut params.tensors, &grads, &mut adam, config.lr)?;

        let val_macro_f1 = if val_records.is_empty() {
            f64::NAN
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let out = forward(&val_graph, &params, &config.model, false, &mut rng)?;
            let preds: Vec<u8> = (0..val_labels.len())
                .map(|i| u8::from(out.probabilities.get(val_edge_start + i, 1) > 0.5))
                .collect();
            report_from_predictions(&val_labels, &preds, "val").macro_f1
        };
        if val_macro_f1.is_nan() {
            best = Some((f64::NAN, params.clone()));
        } else if best.as_ref().is_none_or(|(b, _)| val_macro_f1 > *b || b.is_nan()) {
            best = Some((val_macro_f1, params.clone()));
        }

        history.push(EpochStats {
            epoch,
            loss_c: breakdown.loss_c,
            loss_k: breakdown.loss_k,
            loss_total: breakdown.total,
            val_macro_f1,
        });
    }

    let best_params = best.map(|(_, p)| p).unwrap_or(params);
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            version: CHECKPOINT_VERSION,
            model: config.model,
            params: best_params,
            norm_stats: None,
            remap_seed: 0,
            train_seed: seed,
        },
        history,
        warnings,
    })
}

/// Inductive evaluation: forward with dropout off on the union graph of
/// context (train) and test records, scoring only the test edges.
pub fn evaluate(
    params: &ParameterSet,
    model: &ModelConfig,
    context: &[FlowRecord],
    test: &[FlowRecord],
    fingerprint: &str,
) -> Result<MetricsReport> {
    if test.is_empty() {
        return Err(Error::Empty("evaluate: no test records".into()));
    }
    let union: Vec<FlowRecord> = context.iter().chain(test.iter()).cloned().collect();
    let graph = build_graph(&union);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let out = forward(&graph, params, model, false, &mut rng)?;
    let start = context.len();
    let labels: Vec<u8> = test.iter().map(|r| r.label).collect();
    let preds: Vec<u8> = (0..test.len())
        .map(|i| u8::from(out.probabilities.get(start + i, 1) > 0.5))
        .collect();
    let mut report = report_from_predictions(&labels, &preds, fingerprint);
    for class in [0u8, 1u8] {
        if !labels.contains(&class) {
            report.warnings.push(format!(
                "test split contains no class-{class} records; its F1 is reported as 0"
            ));
        }
    }
    Ok(report)
}

/// Splits, trains, and evaluates once per seed; reports the mean macro-F1
/// and its population standard deviation across seeds. Normalization, if
/// requested, is fit on each seed's train split only.
pub fn run_seeds(
    records: &[FlowRecord],
    config: &TrainConfig,
    normalize: Option<NormMethod>,
) -> Result<(MetricsReport, Vec<f64>)> {
    config.validate()?;
    let started = Instant::now();
    let mut scores = Vec::with_capacity(config.seeds.len());
    let mut last_report = None;
    for &seed in &config.seeds {
        let mut split = stratified_split(records, SplitFractions::standard(), seed)?;
        if let Some(method) = normalize {
            let stats = fit_normalizer(&split.train, method)?;
            split.train = apply_normalizer(&split.train, &stats)?;
            split.val = apply_normalizer(&split.val, &stats)?;
            split.test = apply_normalizer(&split.test, &stats)?;
        }
        let outcome = train(&split.train, &split.val, config, seed)?;
        let report = evaluate(
            &outcome.checkpoint.params,
            &config.model,
            &split.train,
            &split.test,
            config.method_name(),
        )?;
        scores.push(report.macro_f1);
        last_report = Some(report);
    }
    let (mean, std) = mean_std(&scores);
    let mut report = last_report.expect("at least one seed");
    report.macro_f1 = mean;
    report.macro_f1_std = std;
    report.wall_seconds = started.elapsed().as_secs_f64();
    Ok((report, scores))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub fraction_or_sigma: f64,
    pub seed_count: usize,
    pub macro_f1_mean: f64,
    pub macro_f1_std: f64,
    pub wall_seconds: f64,
}

pub const DEFAULT_FRACTION_GRID: [f64; 9] = [0.01, 0.05, 0.10, 0.20, 0.30, 0.40, 0.50, 0.60, 0.70];
pub const DEFAULT_SIGMA_GRID: [usize; 7] = [100, 200, 300, 400, 500, 1000, 2000];

/// One run_seeds per training fraction.
pub fn fraction_sweep(
    records: &[FlowRecord],
    config: &TrainConfig,
    normalize: Option<NormMethod>,
    fractions: &[f64],
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(fractions.len());
    for &f in fractions {
        let started = Instant::now();
        let mut cell = config.clone();
        cell.train_fraction = f;
        let (report, _) = run_seeds(records, &cell, normalize)?;
        rows.push(SweepRow {
            fraction_or_sigma: f,
            seed_count: config.seeds.len(),
            macro_f1_mean: report.macro_f1,
            macro_f1_std: report.macro_f1_std,
            wall_seconds: started.elapsed().as_secs_f64(),
        });
    }
    Ok(rows)
}

/// One run_seeds per Mixup sample count.
pub fn mixup_count_sweep(
    records: &[FlowRecord],
    config: &TrainConfig,
    normalize: Option<NormMethod>,
    sigmas: &[usize],
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(sigmas.len());
    for &sigma in sigmas {
        let started = Instant::now();
        let mut cell = config.clone();
        cell.mixup.sigma = sigma;
        let (report, _) = run_seeds(records, &cell, normalize)?;
        rows.push(SweepRow {
            fraction_or_sigma: sigma as f64,
            seed_count: config.seeds.len(),
            macro_f1_mean: report.macro_f1,
            macro_f1_std: report.macro_f1_std,
            wall_seconds: started.elapsed().as_secs_f64(),
        });
    }
    Ok(rows)
}

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"EGCM";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    model: ModelConfig,
    norm_stats: Option<NormStats>,
    remap_seed: u64,
    train_seed: u64,
    num_layers: usize,
    shapes: Vec<(usize, usize)>,
}

/// Magic bytes, format version, length-prefixed JSON header, then the
/// parameter arrays as little-endian 64-bit floats.
pub fn save_checkpoint<W: Write>(ckpt: &Checkpoint, mut w: W) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&ckpt.version.to_le_bytes())?;
    let header = CheckpointHeader {
        model: ckpt.model,
        norm_stats: ckpt.norm_stats.clone(),
        remap_seed: ckpt.remap_seed,
        train_seed: ckpt.train_seed,
        num_layers: ckpt.params.num_layers,
        shapes: ckpt.params.tensors.iter().map(|t| (t.rows, t.cols)).collect(),
    };
    let payload = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    w.write_all(&(payload.len() as u64).to_le_bytes())?;
    w.write_all(&payload)?;
    for t in &ckpt.params.tensors {
        for v in &t.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad checkpoint magic".into()));
    }
    let mut vb = [0u8; 4];
    r.read_exact(&mut vb)?;
    let version = u32::from_le_bytes(vb);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let mut lb = [0u8; 8];
    r.read_exact(&mut lb)?;
    let len = u64::from_le_bytes(lb) as usize;
    let mut payload = vec![0u8; len];
    r.read_exact(&mut payload)?;
    let header: CheckpointHeader =
        serde_json::from_slice(&payload).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut tensors = Vec::with_capacity(header.shapes.len());
    for (rows, cols) in &header.shapes {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            let mut fb = [0u8; 8];
            r.read_exact(&mut fb)?;
            data.push(f64::from_le_bytes(fb));
        }
        tensors.push(Tensor2::new(*rows, *cols, data));
    }
    Ok(Checkpoint {
        version,
        model: header.model,
        params: ParameterSet {
            tensors,
            num_layers: header.num_layers,
        },
        norm_stats: header.norm_stats,
        remap_seed: header.remap_seed,
        train_seed: header.train_seed,
    })
}
