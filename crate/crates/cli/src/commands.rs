use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use c2f::encoder::Encoder;
use c2f::eval::{linear_probe, make_split, similarity_diagnostics, MetricsReport, ProbeConfig};
use c2f::graph::{generate_sbm, load_graph, read_labels, write_graph, SbmSpec};
use c2f::io::{
    metrics_csv, read_checkpoint, read_embeddings, write_checkpoint, write_embeddings, MetricsRow,
};
use c2f::trainer::{pretrain as run_pretrain, AblationMode, TrainConfig};
use c2f::{verify as oracle, Graph};
use rayon::prelude::*;

use crate::error::{io_error, CliError};
use crate::{
    AblateArgs, DiagnoseArgs, GraphArgs, PretrainArgs, ProbeArgs, ProbeSettings, SynthArgs,
};

pub const EDGES_FILE: &str = "edges.txt";
pub const FEATURES_FILE: &str = "features.csv";
pub const LABELS_FILE: &str = "labels.txt";
pub const CHECKPOINT_FILE: &str = "encoder.c2fp";
pub const EMBEDDINGS_FILE: &str = "embeddings.c2fe";
pub const CONFIG_FILE: &str = "config.json";
pub const LOSSES_FILE: &str = "losses.csv";

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_error(dir))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(io_error(path))
}

/// Writes to `out` when given, standard output otherwise.
fn emit(out: Option<&PathBuf>, contents: &str) -> Result<(), CliError> {
    match out {
        Some(path) => write_file(path, contents),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(contents.as_bytes())
                .and_then(|()| stdout.flush())
                .map_err(io_error(Path::new("<stdout>")))
        }
    }
}

fn load(args: &GraphArgs) -> Result<Graph, CliError> {
    let dir = &args.graph;
    let labels = dir.join(LABELS_FILE);
    let labels = labels.exists().then_some(labels);
    Ok(load_graph(
        &dir.join(EDGES_FILE),
        &dir.join(FEATURES_FILE),
        labels.as_deref(),
    )?)
}

fn load_config(path: Option<&PathBuf>, seed: Option<u64>) -> Result<TrainConfig, CliError> {
    let mut cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(io_error(p))?;
            serde_json::from_str(&text).map_err(|source| CliError::Json {
                path: p.clone(),
                source,
            })?
        }
        None => TrainConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn probe_config(p: &ProbeSettings) -> ProbeConfig {
    ProbeConfig {
        epochs: p.epochs,
        learning_rate: p.probe_lr,
        weight_decay: p.weight_decay,
        standardize: !p.raw,
    }
}

pub fn synth(args: &SynthArgs, seed: u64) -> Result<(), CliError> {
    let g = generate_sbm(&SbmSpec {
        block_sizes: args.blocks.clone(),
        p_in: args.p_in,
        p_out: args.p_out,
        feature_dim: args.feature_dim,
        mean_separation: args.separation,
        seed,
    })?;
    create_dir(&args.out)?;
    let path = |name| args.out.join(name);
    write_graph(
        &g,
        &path(EDGES_FILE),
        &path(FEATURES_FILE),
        Some(&path(LABELS_FILE)),
    )
    .map_err(io_error(&args.out))?;
    Ok(())
}

pub fn pretrain(args: &PretrainArgs, seed: Option<u64>) -> Result<(), CliError> {
    let cfg = load_config(args.config.as_ref(), seed)?;
    let json = serde_json::to_string_pretty(&cfg).expect("config serializes") + "\n";
    if args.dump_config {
        return emit(None, &json);
    }
    let out = args.out.as_ref().expect("clap requires --out");
    let g = load(&args.graph)?;
    let result = run_pretrain(&g, &cfg)?;
    create_dir(out)?;
    write_checkpoint(&out.join(CHECKPOINT_FILE), result.encoder.params())?;
    write_embeddings(&out.join(EMBEDDINGS_FILE), &result.embeddings)?;
    write_file(&out.join(CONFIG_FILE), &json)?;
    let mut losses = String::from("iteration,loss\n");
    for (i, l) in result.losses.iter().enumerate() {
        let _ = writeln!(losses, "{i},{l}");
    }
    write_file(&out.join(LOSSES_FILE), &losses)
}

pub fn probe(args: &ProbeArgs, seed: u64) -> Result<(), CliError> {
    let z = read_embeddings(&args.embeddings)?;
    let labels = read_labels(&args.labels)?;
    let num_classes = labels.iter().max().map_or(0, |&c| c + 1);
    let split = make_split(
        &labels,
        args.probe.train_per_class,
        args.probe.val_per_class,
        seed,
    )?;
    let metrics = linear_probe(&z, &labels, num_classes, &split, &probe_config(&args.probe))?;
    let csv = metrics_csv(&[MetricsRow {
        run_id: args.run_id.clone(),
        seed,
        metrics,
    }])?;
    emit(args.out.as_ref(), &csv)
}

fn mean(reports: &[MetricsReport]) -> MetricsReport {
    let n = reports.len() as f64;
    let avg = |f: fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    MetricsReport {
        accuracy: avg(|m| m.accuracy),
        f1: avg(|m| m.f1),
        auc: avg(|m| m.auc),
        recall: avg(|m| m.recall),
    }
}

pub fn ablate(args: &AblateArgs, seed: Option<u64>, threads: usize) -> Result<(), CliError> {
    if args.seeds == 0 {
        return Err(CliError::Usage("--seeds must be at least 1".into()));
    }
    let base = load_config(args.config.as_ref(), seed)?;
    let g = load(&args.graph)?;
    let labels = g
        .labels()
        .ok_or_else(|| {
            CliError::Usage(format!(
                "{} has no {LABELS_FILE}",
                args.graph.graph.display()
            ))
        })?
        .to_vec();
    let probe_cfg = probe_config(&args.probe);
    let jobs: Vec<(AblationMode, u64)> = AblationMode::ALL
        .into_iter()
        .flat_map(|m| (0..args.seeds).map(move |s| (m, base.seed + s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let reports: Vec<MetricsReport> = pool.install(|| {
        jobs.par_iter()
            .map(|&(mode, s)| {
                let cfg = TrainConfig {
                    seed: s,
                    ..base.for_mode(mode)
                };
                cfg.validate()?;
                let z = run_pretrain(&g, &cfg)?.embeddings;
                let split = make_split(
                    &labels,
                    args.probe.train_per_class,
                    args.probe.val_per_class,
                    s,
                )?;
                linear_probe(&z, &labels, g.num_classes(), &split, &probe_cfg)
            })
            .collect::<Result<_, c2f::Error>>()
    })?;
    let rows: Vec<MetricsRow> = reports
        .chunks(args.seeds as usize)
        .zip(AblationMode::ALL)
        .map(|(chunk, mode)| MetricsRow {
            run_id: mode.name().to_string(),
            seed: base.seed,
            metrics: mean(chunk),
        })
        .collect();
    emit(args.out.as_ref(), &metrics_csv(&rows)?)
}

pub fn diagnose(args: &DiagnoseArgs, seed: u64) -> Result<(), CliError> {
    let cfg = load_config(args.config.as_ref(), None)?;
    let g = load(&args.graph)?;
    let params = read_checkpoint(&args.checkpoint)?;
    let encoder = Encoder::from_params(cfg.encoder, g.feature_dim(), params)?;
    let rows = similarity_diagnostics(&g, &encoder, &args.ratios, args.draws, seed)?;
    let mut csv = String::from("drop_ratio,inter_view,intra_view\n");
    for r in rows {
        let _ = writeln!(
            csv,
            "{:.6},{:.6},{:.6}",
            r.drop_ratio, r.inter_view, r.intra_view
        );
    }
    emit(args.out.as_ref(), &csv)
}

pub fn verify(seed: u64) -> Result<(), CliError> {
    let checks = oracle::run_all(seed)?;
    let mut report = String::new();
    for c in &checks {
        let _ = writeln!(report, "{c}");
    }
    emit(None, &report)?;
    let failed = checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        return Err(CliError::ChecksFailed {
            failed,
            total: checks.len(),
        });
    }
    Ok(())
}
