use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use anyhow::{Context, Result};
use serde::Serialize;

use ctxsched_core::confidence_graph::GraphParams;
use ctxsched_core::sim::{
    self, gen_trace, sensitivity, Metrics, PolicyKind, Scenario, SweepGrid,
};
use ctxsched_core::{
    build_prediction_map, load_trace, Catalog, CharacterizationTrace, Knobs, Policy,
    PredictionMap, RunOptions, SchedulerConfig, SimulationReport,
};

use crate::{BuildGraphArgs, Cli, Command, GenTraceArgs, SimulateArgs, SweepArgs, TraceSource};

pub fn dispatch(cli: &Cli) -> Result<()> {
    let catalog = match &cli.catalog {
        Some(path) => Catalog::load(path)?,
        None => Catalog::builtin(),
    };
    match &cli.command {
        Command::BuildGraph(args) => build_graph(&catalog, args),
        Command::Simulate(args) => simulate(&catalog, args),
        Command::Sweep(args) => run_sweep(&catalog, args),
        Command::GenTrace(args) => gen(args),
    }
}

fn trace(catalog: &Catalog, source: &TraceSource) -> Result<CharacterizationTrace> {
    match &source.trace {
        Some(path) => Ok(load_trace(path, catalog)?),
        None => {
            log::info!("generating the built-in demo trace (seed {})", source.seed);
            let trace = gen_trace(&Scenario::demo(), source.seed)?;
            trace.check_models(catalog)?;
            Ok(trace)
        }
    }
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

fn build_graph(catalog: &Catalog, args: &BuildGraphArgs) -> Result<()> {
    let params = GraphParams {
        bucket_width: args.graph.bucket_width,
        distance_threshold: args.graph.distance_threshold,
        min_samples: args.min_samples,
    };
    params.validate()?;
    let trace = trace(catalog, &args.source)?;
    let map = build_prediction_map(&trace, params)?;
    map.save(&args.out)?;
    println!(
        "nodes {}  edges {}  arcs {}  entries {}",
        map.node_count(),
        map.edge_count(),
        map.arc_count(),
        map.entry_count()
    );
    Ok(())
}

#[derive(Serialize)]
struct ReportFile<'a> {
    policy: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    config: Option<&'a SchedulerConfig>,
    overhead_s: f64,
    #[serde(flatten)]
    metrics: &'a Metrics,
}

#[derive(Serialize)]
struct FrameRow<'a> {
    frame: u64,
    model: &'a str,
    accelerator: &'a str,
    iou: f64,
    confidence: f64,
    latency_s: f64,
    energy_j: f64,
    swap: bool,
}

#[derive(Serialize)]
struct PlotRow {
    frame: u64,
    pair: String,
    iou: f64,
    energy_j: f64,
    latency_s: f64,
    similarity: Option<f64>,
    rescheduled: bool,
}

fn simulate(catalog: &Catalog, args: &SimulateArgs) -> Result<()> {
    let kind: PolicyKind = args.policy.parse()?;
    let config = SchedulerConfig {
        knobs: Knobs::new(args.w_acc, args.w_energy, args.w_latency)?,
        accuracy_threshold: args.accuracy_threshold,
        momentum: args.momentum,
        distance_threshold: args.graph.distance_threshold,
        bucket_width: args.graph.bucket_width,
    };
    config.validate()?;
    if let PolicyKind::SingleModel(pair) = &kind {
        if !catalog.is_compatible(pair) {
            anyhow::bail!("{pair} is not a compatible model/accelerator pair of the catalog");
        }
    }
    let trace = trace(catalog, &args.source)?;
    let policy = match &kind {
        PolicyKind::Shift => {
            let map = match &args.map {
                Some(path) => PredictionMap::load(path)?,
                None => build_prediction_map(&trace, config.graph_params())?,
            };
            Policy::Shift {
                config,
                map: Arc::new(map),
            }
        }
        PolicyKind::SingleModel(pair) => Policy::SingleModel(pair.clone()),
        PolicyKind::Oracle(o) => Policy::Oracle(*o),
    };
    let options = RunOptions {
        overhead_s: args.overhead,
        prefill: args.prefill,
    };
    let report = sim::run(&trace, catalog, &policy, &options)?;

    if let Some(path) = &args.out {
        let file = ReportFile {
            policy: &report.policy,
            config: matches!(kind, PolicyKind::Shift).then_some(&config),
            overhead_s: if matches!(kind, PolicyKind::Shift) { args.overhead } else { 0.0 },
            metrics: &report.metrics,
        };
        let mut text = serde_json::to_string_pretty(&file)?;
        text.push('\n');
        write_file(path, text.as_bytes())?;
    }
    if let Some(path) = &args.frames_csv {
        write_frames_csv(path, &report)?;
    }
    if let Some(path) = &args.plot {
        write_plot_csv(path, &report)?;
    }
    print_row(&mut std::io::stdout().lock(), &report.policy, &report.metrics)?;
    Ok(())
}

fn write_frames_csv(path: &Path, report: &SimulationReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    for r in &report.per_frame {
        w.serialize(FrameRow {
            frame: r.frame_index,
            model: r.pair.model.as_str(),
            accelerator: r.pair.accelerator.as_str(),
            iou: r.achieved_iou,
            confidence: r.confidence,
            latency_s: r.latency_s,
            energy_j: r.energy_j,
            swap: r.swap,
        })?;
    }
    w.flush()?;
    Ok(())
}

fn write_plot_csv(path: &Path, report: &SimulationReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    for r in &report.per_frame {
        w.serialize(PlotRow {
            frame: r.frame_index,
            pair: r.pair.to_string(),
            iou: r.achieved_iou,
            energy_j: r.energy_j,
            latency_s: r.latency_s,
            similarity: r.similarity,
            rescheduled: r.rescheduled,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Aggregate row, columns in the order IoU, Time, Energy, Success Rate,
/// Non-GPU, Model Swaps, Pairs Used.
fn print_row(out: &mut impl Write, policy: &str, m: &Metrics) -> Result<()> {
    writeln!(
        out,
        "{:<32} {:>6} {:>9} {:>10} {:>13} {:>8} {:>12} {:>11}",
        "policy", "IoU", "Time (s)", "Energy (J)", "Success Rate", "Non-GPU", "Model Swaps", "Pairs Used"
    )?;
    writeln!(
        out,
        "{:<32} {:>6.3} {:>9.4} {:>10.3} {:>12.1}% {:>7.1}% {:>12} {:>11}",
        policy,
        m.avg_iou,
        m.avg_time_s,
        m.avg_energy_j,
        100.0 * m.success_rate,
        100.0 * m.non_gpu_fraction,
        m.model_swaps,
        m.pairs_used
    )?;
    Ok(())
}

#[derive(Serialize)]
struct SweepCsvRow {
    w_accuracy: f64,
    w_energy: f64,
    w_latency: f64,
    accuracy_threshold: f64,
    momentum: usize,
    distance_threshold: f64,
    bucket_width: f64,
    avg_iou: f64,
    avg_time_s: f64,
    avg_energy_j: f64,
    success_rate: f64,
    non_gpu_fraction: f64,
    model_swaps: usize,
    pairs_used: usize,
}

fn run_sweep(catalog: &Catalog, args: &SweepArgs) -> Result<()> {
    let text = fs::read_to_string(&args.grid)
        .with_context(|| format!("cannot read {}", args.grid.display()))?;
    let grid = SweepGrid::from_json_str(&text)?;
    grid.configs()?;
    let trace = trace(catalog, &args.source)?;
    let options = RunOptions {
        overhead_s: args.overhead,
        prefill: false,
    };
    log::info!("sweeping {} configurations", grid.len());
    let rows = sim::sweep(&trace, catalog, &grid, &options, args.jobs)?;

    let mut w = csv::Writer::from_path(&args.out)
        .with_context(|| format!("cannot write {}", args.out.display()))?;
    for r in &rows {
        let (c, m) = (&r.config, &r.metrics);
        w.serialize(SweepCsvRow {
            w_accuracy: c.knobs.w_accuracy,
            w_energy: c.knobs.w_energy,
            w_latency: c.knobs.w_latency,
            accuracy_threshold: c.accuracy_threshold,
            momentum: c.momentum,
            distance_threshold: c.distance_threshold,
            bucket_width: c.bucket_width,
            avg_iou: m.avg_iou,
            avg_time_s: m.avg_time_s,
            avg_energy_j: m.avg_energy_j,
            success_rate: m.success_rate,
            non_gpu_fraction: m.non_gpu_fraction,
            model_swaps: m.model_swaps,
            pairs_used: m.pairs_used,
        })?;
    }
    w.flush()?;

    let correlations = sensitivity(&rows);
    if let Some(path) = &args.summary {
        let mut s = csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
        for c in &correlations {
            s.serialize(c)?;
        }
        s.flush()?;
    }
    let mut out = std::io::stdout().lock();
    writeln!(out, "{} configurations", rows.len())?;
    writeln!(out, "{:<20} {:>10} {:>10} {:>10}", "spearman", "avg_iou", "energy", "latency")?;
    for chunk in correlations.chunks(3) {
        let fmt = |r: Option<f64>| r.map_or("n/a".to_string(), |v| format!("{v:+.3}"));
        writeln!(
            out,
            "{:<20} {:>10} {:>10} {:>10}",
            chunk[0].parameter,
            fmt(chunk[0].rho),
            fmt(chunk[1].rho),
            fmt(chunk[2].rho)
        )?;
    }
    Ok(())
}

fn gen(args: &GenTraceArgs) -> Result<()> {
    let scenario = match &args.scenario {
        Some(path) => Scenario::load(path)?,
        None => Scenario::demo(),
    };
    let trace = gen_trace(&scenario, args.seed)?;
    trace.save(&args.out)?;
    println!(
        "{} frames, {} models, boundaries at {:?}",
        trace.len(),
        trace.models().len(),
        scenario.boundaries()
    );
    Ok(())
}
