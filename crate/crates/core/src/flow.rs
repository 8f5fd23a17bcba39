//! NetFlow record ingestion: CSV parsing, feature encoding, IP identity
//! randomization, normalization, and stratified splitting.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;
use std::net::Ipv4Addr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One side of a flow: (IP, port) 2-tuple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Endpoint {
    pub ip: Ipv4Addr,
    pub port: u16,
}

impl Endpoint {
    pub fn new(ip: Ipv4Addr, port: u16) -> Self {
        Endpoint { ip, port }
    }
}

/// One NetFlow row after encoding: endpoints, feature vector, binary label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowRecord {
    pub src: Endpoint,
    pub dst: Endpoint,
    pub features: Vec<f64>,
    /// 0 = benign, 1 = attack.
    pub label: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Categorical,
    Ignored,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureColumn {
    pub name: String,
    pub kind: ColumnKind,
}

/// Names the endpoint/label columns and the ordered feature columns of a
/// flow CSV. Feature order defines feature-vector index order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSchema {
    pub src_ip: String,
    pub src_port: String,
    pub dst_ip: String,
    pub dst_port: String,
    pub label: String,
    pub features: Vec<FeatureColumn>,
}

impl FlowSchema {
    /// Standard schema used by `synth` output: f0..f{d-1} numeric features.
    pub fn synthetic(feature_dim: usize) -> Self {
        FlowSchema {
            src_ip: "src_ip".into(),
            src_port: "src_port".into(),
            dst_ip: "dst_ip".into(),
            dst_port: "dst_port".into(),
            label: "label".into(),
            features: (0..feature_dim)
                .map(|i| FeatureColumn {
                    name: format!("f{i}"),
                    kind: ColumnKind::Numeric,
                })
                .collect(),
        }
    }
}

/// Parses a flow CSV. Categorical feature columns are one-hot encoded over
/// the sorted distinct values observed in the data; ignored columns are
/// dropped. Row order is preserved.
pub fn parse_flow_csv<R: Read>(source: R, schema: &FlowSchema) -> Result<Vec<FlowRecord>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(source);
    let headers = reader.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let src_ip_i = col(&schema.src_ip)?;
    let src_port_i = col(&schema.src_port)?;
    let dst_ip_i = col(&schema.dst_ip)?;
    let dst_port_i = col(&schema.dst_port)?;
    let label_i = col(&schema.label)?;
    let mut feature_is = Vec::new();
    for f in &schema.features {
        feature_is.push((col(&f.name)?, f.kind));
    }

    let rows: Vec<csv::StringRecord> = reader.records().collect::<std::result::Result<_, _>>()?;

    // first pass: distinct values per categorical column, sorted
    let mut categories: BTreeMap<usize, BTreeSet<String>> = BTreeMap::new();
    for row in &rows {
        for &(ci, kind) in &feature_is {
            if kind == ColumnKind::Categorical {
                categories
                    .entry(ci)
                    .or_default()
                    .insert(row.get(ci).unwrap_or("").to_string());
            }
        }
    }
    let category_lists: BTreeMap<usize, Vec<String>> = categories
        .into_iter()
        .map(|(k, v)| (k, v.into_iter().collect()))
        .collect();

    let mut records = Vec::with_capacity(rows.len());
    for (ri, row) in rows.iter().enumerate() {
        let cell = |i: usize| row.get(i).unwrap_or("");
        let parse_ip = |i: usize, name: &str| -> Result<Ipv4Addr> {
            cell(i).parse().map_err(|_| Error::BadRow {
                row: ri,
                message: format!("cannot parse `{}` in column `{}` as IPv4", cell(i), name),
            })
        };
        let parse_port = |i: usize, name: &str| -> Result<u16> {
            cell(i).trim().parse().map_err(|_| Error::BadRow {
                row: ri,
                message: format!("cannot parse `{}` in column `{}` as port", cell(i), name),
            })
        };
        let src = Endpoint::new(
            parse_ip(src_ip_i, &schema.src_ip)?,
            parse_port(src_port_i, &schema.src_port)?,
        );
        let dst = Endpoint::new(
            parse_ip(dst_ip_i, &schema.dst_ip)?,
            parse_port(dst_port_i, &schema.dst_port)?,
        );
        let label_raw: f64 = cell(label_i).trim().parse().map_err(|_| Error::BadNumericCell {
            row: ri,
            column: schema.label.clone(),
            value: cell(label_i).to_string(),
        })?;
        let label = if label_raw == 0.0 {
            0
        } else if label_raw == 1.0 {
            1
        } else {
            return Err(Error::BadRow {
                row: ri,
                message: format!("label must be 0 or 1, got {label_raw}"),
            });
        };
        let mut features = Vec::new();
        for (fi, f) in schema.features.iter().enumerate() {
            let (ci, kind) = feature_is[fi];
            match kind {
                ColumnKind::Ignored => {}
                ColumnKind::Numeric => {
                    let v: f64 = cell(ci).trim().parse().map_err(|_| Error::BadNumericCell {
                        row: ri,
                        column: f.name.clone(),
                        value: cell(ci).to_string(),
                    })?;
                    if !v.is_finite() {
                        return Err(Error::BadRow {
                            row: ri,
                            message: format!("non-finite value in column `{}`", f.name),
                        });
                    }
                    features.push(v);
                }
                ColumnKind::Categorical => {
                    let cats = &category_lists[&ci];
                    let val = cell(ci);
                    for c in cats {
                        features.push(if c == val { 1.0 } else { 0.0 });
                    }
                }
            }
        }
        records.push(FlowRecord {
            src,
            dst,
            features,
            label,
        });
    }
    Ok(records)
}

/// Serializes records in the standard synthetic schema (header + rows).
pub fn write_flows_csv<W: std::io::Write>(records: &[FlowRecord], feature_dim: usize, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec![
        "src_ip".to_string(),
        "src_port".to_string(),
        "dst_ip".to_string(),
        "dst_port".to_string(),
    ];
    for i in 0..feature_dim {
        header.push(format!("f{i}"));
    }
    header.push("label".to_string());
    wtr.write_record(&header)?;
    for r in records {
        let mut row = vec![
            r.src.ip.to_string(),
            r.src.port.to_string(),
            r.dst.ip.to_string(),
            r.dst.port.to_string(),
        ];
        for f in &r.features {
            // round-trippable f64 formatting
            row.push(format!("{:?}", f));
        }
        row.push(r.label.to_string());
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

pub const DEFAULT_REMAP_LO: Ipv4Addr = Ipv4Addr::new(172, 16, 0, 1);
pub const DEFAULT_REMAP_HI: Ipv4Addr = Ipv4Addr::new(172, 31, 0, 1);

/// Injectively remaps every distinct IP (sources first, then destinations
/// not already covered) to addresses drawn uniformly without replacement
/// from `[lo, hi]`. Deterministic under `seed` and independent of record
/// order.
pub fn remap_ips(
    records: &[FlowRecord],
    lo: Ipv4Addr,
    hi: Ipv4Addr,
    seed: u64,
) -> Result<Vec<FlowRecord>> {
    let lo_u = u32::from(lo);
    let hi_u = u32::from(hi);
    if hi_u < lo_u {
        return Err(Error::Config("remap range: hi < lo".into()));
    }
    let available = (hi_u - lo_u + 1) as usize;

    let mut src_ips: BTreeSet<Ipv4Addr> = BTreeSet::new();
    let mut dst_ips: BTreeSet<Ipv4Addr> = BTreeSet::new();
    for r in records {
        src_ips.insert(r.src.ip);
        dst_ips.insert(r.dst.ip);
    }
    let extra_dsts: Vec<Ipv4Addr> = dst_ips.difference(&src_ips).cloned().collect();
    let needed = src_ips.len() + extra_dsts.len();
    if needed > available {
        return Err(Error::RemapCapacity { needed, available });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = rand::seq::index::sample(&mut rng, available, needed);
    let mut table: BTreeMap<Ipv4Addr, Ipv4Addr> = BTreeMap::new();
    for (orig, pick) in src_ips.iter().chain(extra_dsts.iter()).zip(picks.iter()) {
        table.insert(*orig, Ipv4Addr::from(lo_u + pick as u32));
    }

    Ok(records
        .iter()
        .map(|r| {
            let mut out = r.clone();
            out.src.ip = table[&r.src.ip];
            out.dst.ip = table[&r.dst.ip];
            out
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormMethod {
    Zscore,
    Minmax,
}

/// Per-feature normalization statistics, fit on the training split only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub method: NormMethod,
    /// mean (zscore) or min (minmax), per feature.
    pub center: Vec<f64>,
    /// std (zscore, zeros replaced by 1) or max (minmax), per feature.
    pub spread: Vec<f64>,
}

/// Population statistics over the given records; zero-variance columns get
/// std 1 so constant features normalize to 0.
pub fn fit_normalizer(records: &[FlowRecord], method: NormMethod) -> Result<NormStats> {
    let first = records
        .first()
        .ok_or_else(|| Error::Empty("fit_normalizer: no records".into()))?;
    let dim = first.features.len();
    match method {
        NormMethod::Zscore => {
            let n = records.len() as f64;
            let mut mean = vec![0.0; dim];
            for r in records {
                for (m, x) in mean.iter_mut().zip(r.features.iter()) {
                    *m += x;
                }
            }
            for m in mean.iter_mut() {
                *m /= n;
            }
            let mut var = vec![0.0; dim];
            for r in records {
                for (i, x) in r.features.iter().enumerate() {
                    let d = x - mean[i];
                    var[i] += d * d;
                }
            }
            let std: Vec<f64> = var
                .iter()
                .map(|v| {
                    let s = (v / n).sqrt();
                    if s == 0.0 {
                        1.0
                    } else {
                        s
                    }
                })
                .collect();
            Ok(NormStats {
                method,
                center: mean,
                spread: std,
            })
        }
        NormMethod::Minmax => {
            let mut lo = vec![f64::INFINITY; dim];
            let mut hi = vec![f64::NEG_INFINITY; dim];
            for r in records {
                for (i, x) in r.features.iter().enumerate() {
                    lo[i] = lo[i].min(*x);
                    hi[i] = hi[i].max(*x);
                }
            }
            Ok(NormStats {
                method,
                center: lo,
                spread: hi,
            })
        }
    }
}

/// zscore: (x-mean)/std; minmax: (x-min)/(max-min), constant columns → 0.
pub fn apply_normalizer(records: &[FlowRecord], stats: &NormStats) -> Result<Vec<FlowRecord>> {
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        if r.features.len() != stats.center.len() {
            return Err(Error::Shape(format!(
                "apply_normalizer: {} features vs {} stats",
                r.features.len(),
                stats.center.len()
            )));
        }
        let mut rec = r.clone();
        for (i, x) in rec.features.iter_mut().enumerate() {
            *x = match stats.method {
                NormMethod::Zscore => (*x - stats.center[i]) / stats.spread[i],
                NormMethod::Minmax => {
                    let range = stats.spread[i] - stats.center[i];
                    if range == 0.0 {
                        0.0
                    } else {
                        (*x - stats.center[i]) / range
                    }
                }
            };
        }
        out.push(rec);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitFractions {
    pub fn standard() -> Self {
        SplitFractions {
            train: 0.7,
            val: 0.1,
            test: 0.2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SplitOutcome {
    pub train: Vec<FlowRecord>,
    pub val: Vec<FlowRecord>,
    pub test: Vec<FlowRecord>,
    pub warnings: Vec<String>,
}

/// Per-class shuffle + proportional allocation so each split preserves the
/// global class ratio. Rounding remainders go to train. A class with fewer
/// records than splits goes entirely to train with a warning.
pub fn stratified_split(
    records: &[FlowRecord],
    fractions: SplitFractions,
    seed: u64,
) -> Result<SplitOutcome> {
    if fractions.train <= 0.0 || fractions.val <= 0.0 || fractions.test <= 0.0 {
        return Err(Error::Config("split fractions must be positive".into()));
    }
    if (fractions.train + fractions.val + fractions.test - 1.0).abs() > 1e-9 {
        return Err(Error::Config("split fractions must sum to 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = SplitOutcome {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        warnings: Vec::new(),
    };
    for class in [0u8, 1u8] {
        let mut idx: Vec<usize> = records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.label == class)
            .map(|(i, _)| i)
            .collect();
        idx.shuffle(&mut rng);
        let n = idx.len();
        if n == 0 {
            continue;
        }
        if n < 3 {
            out.warnings
                .push(format!("class {class} has only {n} record(s); all assigned to train"));
            out.train.extend(idx.into_iter().map(|i| records[i].clone()));
            continue;
        }
        let n_val = (n as f64 * fractions.val).floor() as usize;
        let n_test = (n as f64 * fractions.test).floor() as usize;
        let n_train = n - n_val - n_test;
        for (k, i) in idx.into_iter().enumerate() {
            let rec = records[i].clone();
            if k < n_train {
                out.train.push(rec);
            } else if k < n_train + n_val {
                out.val.push(rec);
            } else {
                out.test.push(rec);
            }
        }
    }
    Ok(out)
}

/// Gaussian two-class flows: benign features centered at -separation/2,
/// attack at +separation/2, unit variance per dimension.
pub fn generate_synthetic(
    n_endpoints: usize,
    n_flows: usize,
    attack_ratio: f64,
    separation: f64,
    feature_dim: usize,
    seed: u64,
) -> Result<Vec<FlowRecord>> {
    if !(0.0..1.0).contains(&attack_ratio) || attack_ratio == 0.0 {
        return Err(Error::Config(format!(
            "attack_ratio must be in (0,1), got {attack_ratio}"
        )));
    }
    if n_endpoints < 3 {
        return Err(Error::Config("need at least 3 endpoints".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let endpoints: Vec<Endpoint> = (0..n_endpoints)
        .map(|_| {
            Endpoint::new(
                Ipv4Addr::from(rng.gen_range(0x0A000001u32..0x0AFFFFFF)),
                rng.gen_range(1..=65535),
            )
        })
        .collect();
    // attacks originate from a dedicated attacker subset so edge labels
    // are a function of graph structure, not only of flow features
    let n_attackers = ((n_endpoints as f64 * 0.2).round() as usize).clamp(1, n_endpoints - 2);
    let n_attack = (n_flows as f64 * attack_ratio).round() as usize;
    let mut labels = vec![1u8; n_attack];
    labels.extend(vec![0u8; n_flows - n_attack]);
    labels.shuffle(&mut rng);

    let mut records = Vec::with_capacity(n_flows);
    for label in labels {
        let (si, di) = if label == 1 {
            (
                rng.gen_range(0..n_attackers),
                rng.gen_range(n_attackers..n_endpoints),
            )
        } else {
            let si = rng.gen_range(n_attackers..n_endpoints);
            let mut di = rng.gen_range(n_attackers..n_endpoints);
            if di == si {
                di = n_attackers + (di + 1 - n_attackers) % (n_endpoints - n_attackers);
            }
            (si, di)
        };
        let center = if label == 1 {
            separation / 2.0
        } else {
            -separation / 2.0
        };
        let features = (0..feature_dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                center + z
            })
            .collect();
        records.push(FlowRecord {
            src: endpoints[si],
            dst: endpoints[di],
            features,
            label,
        });
    }
    Ok(records)
}
