//! Command-line front end: build-graph, train, evaluate, sweep, synth.
//! Every command writes a run manifest next to its outputs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use clap::{Parser, Subcommand, ValueEnum};

use crate::config::{resolve_config, Overrides, RunConfig};
use crate::error::{Error, Result};
use crate::flow::{
    apply_normalizer, fit_normalizer, generate_synthetic, parse_flow_csv, remap_ips,
    stratified_split, write_flows_csv, FlowRecord, FlowSchema, SplitOutcome, DEFAULT_REMAP_HI,
    DEFAULT_REMAP_LO,
};
use crate::graph::{build_graph, save_graph};
use crate::manifest::RunManifest;
use crate::metrics::MetricsReport;
use crate::train::{
    evaluate, load_checkpoint, run_seeds, save_checkpoint, train, Checkpoint, SweepRow,
    TrainConfig, DEFAULT_FRACTION_GRID, DEFAULT_SIGMA_GRID,
};

#[derive(Debug, Parser)]
#[command(name = "egconmix", version, about = "Graph-based network flow classification")]
pub struct Cli {
    /// TOML config file; flags override file values.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Global seed for splitting, remapping, and training.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,

    /// Disable minority-class Mixup augmentation.
    #[arg(long, global = true)]
    pub no_mixup: bool,

    /// Disable the contrastive loss term.
    #[arg(long, global = true)]
    pub no_contrastive: bool,

    /// Contrastive loss weight.
    #[arg(long, global = true, value_name = "X")]
    pub theta: Option<f64>,

    /// Mixup samples per pattern.
    #[arg(long, global = true, value_name = "N")]
    pub sigma: Option<usize>,

    /// Negatives per contrastive anchor.
    #[arg(long, global = true, value_name = "N")]
    pub gamma: Option<usize>,

    /// Beta parameter for harmful-unharmful mixing.
    #[arg(long, global = true, value_name = "X")]
    pub alpha: Option<f64>,

    /// Beta parameter for harmful-harmful mixing.
    #[arg(long, global = true, value_name = "X")]
    pub beta: Option<f64>,

    /// Fraction of the train split to use, in (0, 1].
    #[arg(long, global = true, value_name = "X")]
    pub fraction: Option<f64>,

    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,

    /// Input flow CSV.
    #[arg(long, global = true, value_name = "PATH")]
    pub input: Option<PathBuf>,

    /// Print the effective config as TOML and exit.
    #[arg(long, global = true)]
    pub show_config: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepKind {
    Fraction,
    Sigma,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse flows, remap IPs, normalize, and serialize the traffic graph.
    BuildGraph,
    /// Train a model and write checkpoint, history CSV, and manifest.
    Train,
    /// Score a flow CSV with a saved checkpoint.
    Evaluate {
        checkpoint: PathBuf,
        data: PathBuf,
    },
    /// Run a hyperparameter sweep over the default grid.
    Sweep {
        #[arg(value_enum)]
        kind: SweepKind,
    },
    /// Generate a synthetic two-class flow CSV.
    Synth {
        #[arg(long, default_value_t = 1000)]
        flows: usize,
        #[arg(long, default_value_t = 50)]
        endpoints: usize,
        #[arg(long, default_value_t = 0.1)]
        attack_ratio: f64,
        #[arg(long, default_value_t = 6.0)]
        separation: f64,
        #[arg(long, default_value_t = 4)]
        dim: usize,
    },
}

/// Exit code contract: 2 input/config, 3 artifact format, 4 numerical abort.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::NonFinite { .. } => 4,
        Error::Checkpoint(_) => 3,
        _ => 2,
    }
}

/// Worker cap for sweep cells, from EGCM_THREADS (default 1).
pub fn thread_cap() -> usize {
    std::env::var("EGCM_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(1)
}

fn overrides_from(cli: &Cli) -> Overrides {
    Overrides {
        seed: cli.seed,
        no_mixup: cli.no_mixup,
        no_contrastive: cli.no_contrastive,
        theta: cli.theta,
        sigma: cli.sigma,
        gamma: cli.gamma,
        alpha: cli.alpha,
        beta: cli.beta,
        fraction: cli.fraction,
        out: cli.out.clone(),
        input: cli.input.clone(),
    }
}

/// Synthetic-style schema from a CSV header: every column outside the
/// endpoint/label set is a numeric feature.
fn infer_schema(csv_text: &str) -> Result<FlowSchema> {
    let header = csv_text
        .lines()
        .next()
        .ok_or_else(|| Error::Empty("input CSV has no header".into()))?;
    let fixed = ["src_ip", "src_port", "dst_ip", "dst_port", "label"];
    for name in fixed {
        if !header.split(',').any(|c| c.trim() == name) {
            return Err(Error::MissingColumn(name.to_string()));
        }
    }
    let features = header
        .split(',')
        .map(str::trim)
        .filter(|c| !fixed.contains(c))
        .map(|c| crate::flow::FeatureColumn {
            name: c.to_string(),
            kind: crate::flow::ColumnKind::Numeric,
        })
        .collect();
    Ok(FlowSchema {
        src_ip: "src_ip".into(),
        src_port: "src_port".into(),
        dst_ip: "dst_ip".into(),
        dst_port: "dst_port".into(),
        label: "label".into(),
        features,
    })
}

struct LoadedInput {
    records: Vec<FlowRecord>,
    feature_dim: usize,
}

/// Reads, parses, and optionally remaps the input CSV, recording its
/// content hash in the manifest.
fn load_input(config: &RunConfig, manifest: &mut RunManifest) -> Result<LoadedInput> {
    let path = config
        .input
        .as_ref()
        .ok_or_else(|| Error::Config("no input CSV given (--input or config `input`)".into()))?;
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Config(format!("cannot read input {}: {e}", path.display())))?;
    manifest.record_input(&bytes);
    let text = String::from_utf8_lossy(&bytes);
    let schema = match &config.schema {
        Some(s) => s.clone(),
        None => infer_schema(&text)?,
    };
    let mut records = parse_flow_csv(text.as_bytes(), &schema)?;
    if config.remap {
        records = remap_ips(&records, DEFAULT_REMAP_LO, DEFAULT_REMAP_HI, config.seed)?;
    }
    let feature_dim = records.first().map(|r| r.features.len()).unwrap_or(0);
    Ok(LoadedInput { records, feature_dim })
}

fn split_and_normalize(config: &RunConfig, records: &[FlowRecord]) -> Result<(SplitOutcome, crate::flow::NormStats)> {
    let mut split = stratified_split(records, config.split, config.seed)?;
    let stats = fit_normalizer(&split.train, config.normalize)?;
    split.train = apply_normalizer(&split.train, &stats)?;
    split.val = apply_normalizer(&split.val, &stats)?;
    split.test = apply_normalizer(&split.test, &stats)?;
    Ok((split, stats))
}

fn write_output(manifest: &mut RunManifest, path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes)?;
    manifest.record_output(path, bytes);
    Ok(())
}

fn finish_manifest(mut manifest: RunManifest, out_dir: &Path) -> Result<()> {
    manifest.finish();
    manifest.save(&out_dir.join("manifest.json"))?;
    Ok(())
}

pub fn history_csv(history: &[crate::train::EpochStats]) -> String {
    let mut s = String::from("epoch,loss_c,loss_k,loss_total,val_macro_f1\n");
    for h in history {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            h.epoch, h.loss_c, h.loss_k, h.loss_total, h.val_macro_f1
        );
    }
    s
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("fraction_or_sigma,seed_count,macro_f1_mean,macro_f1_std,wall_seconds\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.fraction_or_sigma, r.seed_count, r.macro_f1_mean, r.macro_f1_std, r.wall_seconds
        );
    }
    s
}

pub fn run(cli: &Cli) -> Result<()> {
    let config = resolve_config(cli.config.as_deref(), &overrides_from(cli))?;
    if cli.show_config {
        println!("{}", config.to_toml()?);
        return Ok(());
    }
    std::fs::create_dir_all(&config.out)?;
    match &cli.command {
        Command::BuildGraph => cmd_build_graph(&config),
        Command::Train => cmd_train(&config),
        Command::Evaluate { checkpoint, data } => cmd_evaluate(&config, checkpoint, data),
        Command::Sweep { kind } => cmd_sweep(&config, *kind),
        Command::Synth {
            flows,
            endpoints,
            attack_ratio,
            separation,
            dim,
        } => cmd_synth(&config, *flows, *endpoints, *attack_ratio, *separation, *dim),
    }
}

pub fn cmd_build_graph(config: &RunConfig) -> Result<()> {
    let mut manifest = RunManifest::start("build-graph", config.train.method_name(), config)?;
    let input = load_input(config, &mut manifest)?;
    let (split, stats) = split_and_normalize(config, &input.records)?;
    for w in &split.warnings {
        eprintln!("warning: {w}");
    }
    // graph over the full normalized dataset, train split first
    let all: Vec<FlowRecord> = split
        .train
        .iter()
        .chain(split.val.iter())
        .chain(split.test.iter())
        .cloned()
        .collect();
    let graph = build_graph(&all);
    let mut buf = Vec::new();
    save_graph(&graph, &mut buf)?;
    let graph_path = config.out.join("graph.bin");
    write_output(&mut manifest, &graph_path, &buf)?;
    let stats_path = config.out.join("norm_stats.json");
    let stats_json = serde_json::to_string_pretty(&stats).map_err(|e| Error::Config(e.to_string()))?;
    write_output(&mut manifest, &stats_path, stats_json.as_bytes())?;
    let benign = all.iter().filter(|r| r.label == 0).count();
    let attack = all.len() - benign;
    println!(
        "graph: {} nodes, {} edges ({} benign, {} attack), feature dim {}",
        graph.num_nodes(),
        graph.num_edges(),
        benign,
        attack,
        input.feature_dim
    );
    println!("wrote {}", graph_path.display());
    finish_manifest(manifest, &config.out)
}

pub fn cmd_train(config: &RunConfig) -> Result<()> {
    let mut manifest = RunManifest::start("train", config.train.method_name(), config)?;
    let input = load_input(config, &mut manifest)?;
    let (split, stats) = split_and_normalize(config, &input.records)?;
    let outcome = train(&split.train, &split.val, &config.train, config.seed)?;
    for w in split.warnings.iter().chain(outcome.warnings.iter()) {
        eprintln!("warning: {w}");
    }
    let checkpoint = Checkpoint {
        norm_stats: Some(stats),
        remap_seed: config.seed,
        ..outcome.checkpoint
    };
    let mut ckpt_bytes = Vec::new();
    save_checkpoint(&checkpoint, &mut ckpt_bytes)?;
    write_output(&mut manifest, &config.out.join("checkpoint.bin"), &ckpt_bytes)?;
    let history = history_csv(&outcome.history);
    write_output(&mut manifest, &config.out.join("history.csv"), history.as_bytes())?;
    let last = outcome.history.last().expect("epochs >= 1");
    println!(
        "{}: {} epochs, final loss {:.6}, best val macro-F1 {:.4}",
        config.train.method_name(),
        outcome.history.len(),
        last.loss_total,
        outcome
            .history
            .iter()
            .map(|h| h.val_macro_f1)
            .fold(f64::NEG_INFINITY, f64::max)
    );
    finish_manifest(manifest, &config.out)
}

pub fn cmd_evaluate(config: &RunConfig, checkpoint_path: &Path, data_path: &Path) -> Result<()> {
    let mut manifest = RunManifest::start("evaluate", config.train.method_name(), config)?;
    let ckpt_file = std::fs::File::open(checkpoint_path)?;
    let checkpoint = load_checkpoint(std::io::BufReader::new(ckpt_file))?;
    let mut data_config = config.clone();
    data_config.input = Some(data_path.to_path_buf());
    let input = load_input(&data_config, &mut manifest)?;
    let records = match &checkpoint.norm_stats {
        Some(stats) => apply_normalizer(&input.records, stats)?,
        None => input.records,
    };
    let report = evaluate(
        &checkpoint.params,
        &checkpoint.model,
        &[],
        &records,
        config.train.method_name(),
    )?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let json = serde_json::to_string_pretty(&report).map_err(|e| Error::Config(e.to_string()))?;
    write_output(&mut manifest, &config.out.join("metrics.json"), json.as_bytes())?;
    print_report(&report);
    finish_manifest(manifest, &config.out)
}

fn print_report(report: &MetricsReport) {
    println!("macro-F1: {:.4} (std {:.4})", report.macro_f1, report.macro_f1_std);
    for (class, s) in report.per_class.iter().enumerate() {
        println!(
            "class {class}: precision {:.4} recall {:.4} F1 {:.4}",
            s.precision, s.recall, s.f1
        );
    }
    let c = &report.confusion;
    println!(
        "confusion: tn {} fp {} fn {} tp {}",
        c.true_negative, c.false_positive, c.false_negative, c.true_positive
    );
}

/// Runs one run_seeds per grid cell, with at most EGCM_THREADS cells in
/// flight. Cell order in the output matches the grid regardless of
/// scheduling.
fn sweep_cells(
    records: &[FlowRecord],
    config: &RunConfig,
    cells: Vec<(f64, TrainConfig)>,
) -> Result<Vec<SweepRow>> {
    let threads = thread_cap().min(cells.len().max(1));
    let results: Mutex<Vec<Option<Result<SweepRow>>>> = Mutex::new((0..cells.len()).map(|_| None).collect());
    let next = std::sync::atomic::AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                let Some((label, cell)) = cells.get(i) else { break };
                let started = std::time::Instant::now();
                let row = run_seeds(records, cell, Some(config.normalize)).map(|(report, _)| SweepRow {
                    fraction_or_sigma: *label,
                    seed_count: cell.seeds.len(),
                    macro_f1_mean: report.macro_f1,
                    macro_f1_std: report.macro_f1_std,
                    wall_seconds: started.elapsed().as_secs_f64(),
                });
                results.lock().expect("sweep mutex")[i] = Some(row);
            });
        }
    });
    results
        .into_inner()
        .expect("sweep mutex")
        .into_iter()
        .map(|r| r.expect("every cell ran"))
        .collect()
}

pub fn cmd_sweep(config: &RunConfig, kind: SweepKind) -> Result<()> {
    let command = match kind {
        SweepKind::Fraction => "sweep fraction",
        SweepKind::Sigma => "sweep sigma",
    };
    let mut manifest = RunManifest::start(command, config.train.method_name(), config)?;
    let input = load_input(config, &mut manifest)?;
    let cells: Vec<(f64, TrainConfig)> = match kind {
        SweepKind::Fraction => DEFAULT_FRACTION_GRID
            .iter()
            .map(|&f| {
                let mut c = config.train.clone();
                c.train_fraction = f;
                (f, c)
            })
            .collect(),
        SweepKind::Sigma => DEFAULT_SIGMA_GRID
            .iter()
            .map(|&s| {
                let mut c = config.train.clone();
                c.mixup.sigma = s;
                (s as f64, c)
            })
            .collect(),
    };
    let rows = sweep_cells(&input.records, config, cells)?;
    let csv = sweep_csv(&rows);
    let path = config.out.join("sweep.csv");
    std::fs::write(&path, &csv)?;
    manifest.record_sweep_output(&path, &csv);
    print!("{csv}");
    finish_manifest(manifest, &config.out)
}

pub fn cmd_synth(
    config: &RunConfig,
    flows: usize,
    endpoints: usize,
    attack_ratio: f64,
    separation: f64,
    dim: usize,
) -> Result<()> {
    let mut manifest = RunManifest::start("synth", config.train.method_name(), config)?;
    let records = generate_synthetic(endpoints, flows, attack_ratio, separation, dim, config.seed)?;
    let mut buf = Vec::new();
    write_flows_csv(&records, dim, &mut buf)?;
    let path = config.out.join("synthetic.csv");
    write_output(&mut manifest, &path, &buf)?;
    println!("wrote {} flows to {}", records.len(), path.display());
    finish_manifest(manifest, &config.out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn infer_schema_from_synth_header() {
        let s = infer_schema("src_ip,src_port,dst_ip,dst_port,f0,f1,label\n1,2,3").unwrap();
        assert_eq!(s.features.len(), 2);
        assert_eq!(s.features[0].name, "f0");
    }

    #[test]
    fn infer_schema_missing_label_names_column() {
        match infer_schema("src_ip,src_port,dst_ip,dst_port,f0\n") {
            Err(Error::MissingColumn(c)) => assert_eq!(c, "label"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn exit_codes_by_error_class() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::MissingColumn("label".into())), 2);
        assert_eq!(exit_code(&Error::Checkpoint("bad magic".into())), 3);
        assert_eq!(
            exit_code(&Error::NonFinite {
                epoch: 3,
                term: "loss".into()
            }),
            4
        );
    }

    #[test]
    fn csv_renders_are_stable() {
        let rows = vec![SweepRow {
            fraction_or_sigma: 0.1,
            seed_count: 5,
            macro_f1_mean: 0.5,
            macro_f1_std: 0.0,
            wall_seconds: 1.0,
        }];
        let csv = sweep_csv(&rows);
        assert_eq!(csv.lines().count(), 2);
        assert!(csv.starts_with("fraction_or_sigma,seed_count,"));
    }
}
