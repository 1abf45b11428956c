use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use xmod_core::data::{load_adapter, save_adapter};
use xmod_core::diagnostics::{delta_cos_trace, format_acc_gap, gap_sweep, two_column, visual_probe};
use xmod_core::episodes::{run_benchmark, task_episode};
use xmod_core::gradients::{predicted_delta_cos, residual_ratio, theorem_report, PairRecord, PairSide};
use xmod_core::linalg::softmax_into;
use xmod_core::train::{train_episode, Snapshot};
use xmod_core::{gen_synthetic, BenchmarkResult, EmbeddingDataset, Error, ErrorKind, Matrix, TrainConfig};

use crate::config::{BenchmarkRun, GapShiftRun, GenSynthRun, ProbeRun, RunConfig, SweepRun, TheoremRun};

/// Why a command did not succeed.
#[derive(Debug)]
pub enum Failure {
    Core(Error),
    /// A checked property did not hold.
    Invariant(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Core(e) => write!(f, "{e}"),
            Failure::Invariant(m) => write!(f, "invariant violated: {m}"),
        }
    }
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Core(e) => match e.kind() {
                ErrorKind::Config => 2,
                ErrorKind::Data => 3,
                ErrorKind::Numeric => 4,
            },
            Failure::Invariant(_) => 4,
        }
    }
}

type Outcome = std::result::Result<(), Failure>;

fn create_out_dir(dir: &Path, config: &RunConfig) -> xmod_core::Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    config.save(dir)
}

fn write_text(path: &Path, text: &str) -> xmod_core::Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> xmod_core::Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::InvalidData(format!("cannot encode {}: {e}", path.display())))?;
    text.push('\n');
    write_text(path, &text)
}

fn write_jsonl<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> xmod_core::Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for row in rows {
        serde_json::to_writer(&mut w, &row)
            .map_err(|e| Error::InvalidData(format!("cannot encode {}: {e}", path.display())))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn gen_synth(run: &GenSynthRun) -> Outcome {
    let ds = gen_synthetic(&run.synthetic)?;
    ds.save(&run.out)?;
    RunConfig::GenSynth(run.clone()).save(&run.out)?;
    println!(
        "wrote {} samples of {} classes (d = {}) to {}",
        ds.count(),
        ds.num_classes(),
        ds.dim(),
        run.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct BenchmarkSummary {
    task_count: usize,
    mean: f64,
    ci95: f64,
    mean_gap: Option<f64>,
    summary: String,
}

impl BenchmarkSummary {
    fn new(r: &BenchmarkResult) -> Self {
        Self {
            task_count: r.task_count,
            mean: r.mean,
            ci95: r.ci95,
            mean_gap: r.mean_gap,
            summary: r.summary_line(),
        }
    }
}

pub fn benchmark(run: &BenchmarkRun) -> Outcome {
    let e = &run.experiment;
    let ds = EmbeddingDataset::load(&e.data)?;
    create_out_dir(&e.out, &RunConfig::Benchmark(run.clone()))?;
    let start = Instant::now();
    let result = run_benchmark(&ds, &e.benchmark)?;
    info!("{} tasks in {:.1?}", result.task_count, start.elapsed());
    write_json(&e.out.join("summary.json"), &BenchmarkSummary::new(&result))?;
    write_jsonl(&e.out.join("tasks.jsonl"), &result.tasks)?;
    println!("accuracy {} over {} tasks", result.summary_line(), result.task_count);
    if let Some(gap) = result.mean_gap {
        println!("Acc / Gap: {}", format_acc_gap(result.mean, gap));
    }
    Ok(())
}

#[derive(Serialize)]
struct TheoremLine<'a> {
    instance: usize,
    #[serde(flatten)]
    pair: &'a PairRecord,
    residual_ratio: Option<f64>,
}

#[derive(Serialize)]
struct TheoremSummary {
    instances: usize,
    pairs: usize,
    eta: f64,
    tau: f64,
    ratios_measured: usize,
    ratios_in_band: usize,
    ratio_min: Option<f64>,
    ratio_max: Option<f64>,
    same_class_checked: usize,
    same_class_positive: usize,
    breaches: Vec<String>,
}

fn random_unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn theorem_instance(run: &TheoremRun, rng: &mut ChaCha8Rng) -> xmod_core::Result<(Matrix, Matrix, Vec<usize>)> {
    let text: Vec<Vec<f64>> = (0..run.classes).map(|_| random_unit(rng, run.dim)).collect();
    let labels: Vec<usize> = (0..run.classes * run.shots).map(|i| i % run.classes).collect();
    let features = labels
        .iter()
        .map(|&y| {
            let v: Vec<f64> = text[y].iter().map(|t| t + 0.5 * (rng.random::<f64>() - 0.5)).collect();
            xmod_core::linalg::l2_normalize(&v)
        })
        .collect::<xmod_core::Result<Vec<_>>>()?;
    Ok((Matrix::from_rows(&features)?, Matrix::from_rows(&text)?, labels))
}

pub fn verify_theorem(run: &TheoremRun) -> Outcome {
    create_out_dir(&run.out, &RunConfig::VerifyTheorem(run.clone()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(run.seed);
    let mut lines = Vec::new();
    let mut ratios = Vec::new();
    let (mut checked, mut positive) = (0usize, 0usize);
    let mut breaches = Vec::new();
    for n in 0..run.instances {
        let (features, text, labels) = theorem_instance(run, &mut rng)?;
        let report = theorem_report(&features, &text, &labels, run.eta, run.tau)?;
        let probs: Vec<Vec<f64>> = features
            .iter_rows()
            .map(|f| {
                let mut p = vec![0.0; text.rows()];
                softmax_into(&text.matvec(f), run.tau, &mut p);
                p
            })
            .collect();
        for pair in &report.pairs {
            let ratio = residual_ratio(&features, &text, &labels, (pair.i, pair.k), run.eta, run.tau)?;
            if let Some(r) = ratio {
                ratios.push(r);
                if !(0.15..=0.35).contains(&r) {
                    breaches.push(format!("instance {n} pair ({}, {}): residual ratio {r}", pair.i, pair.k));
                }
            }
            if run.eta == 0.0 && (pair.delta_cos_actual != 0.0 || pair.delta_cos_predicted != 0.0) {
                breaches.push(format!("instance {n} pair ({}, {}): nonzero change at eta 0", pair.i, pair.k));
            }
            let correct_is_max = |i: usize| {
                let y = labels[i];
                let logits = text.matvec(features.row(i));
                (0..logits.len()).all(|j| j == y || logits[y] > logits[j])
            };
            if run.eta > 0.0 && pair.same_class && correct_is_max(pair.i) && correct_is_max(pair.k) {
                checked += 1;
                let side = |i: usize| PairSide {
                    feature: features.row(i),
                    label: labels[i],
                    probs: &probs[i],
                };
                if predicted_delta_cos(side(pair.i), side(pair.k), &text, run.eta, run.tau) > 0.0 {
                    positive += 1;
                } else {
                    breaches.push(format!("instance {n} pair ({}, {}): same-class change not positive", pair.i, pair.k));
                }
            }
            lines.push((n, pair.clone(), ratio));
        }
    }
    write_jsonl(
        &run.out.join("theorem.jsonl"),
        lines.iter().map(|(n, pair, ratio)| TheoremLine {
            instance: *n,
            pair,
            residual_ratio: *ratio,
        }),
    )?;
    let summary = TheoremSummary {
        instances: run.instances,
        pairs: lines.len(),
        eta: run.eta,
        tau: run.tau,
        ratios_measured: ratios.len(),
        ratios_in_band: ratios.iter().filter(|r| (0.15..=0.35).contains(*r)).count(),
        ratio_min: ratios.iter().copied().reduce(f64::min),
        ratio_max: ratios.iter().copied().reduce(f64::max),
        same_class_checked: checked,
        same_class_positive: positive,
        breaches: breaches.clone(),
    };
    write_json(&run.out.join("summary.json"), &summary)?;
    println!(
        "{} pairs; residual ratio in [0.15, 0.35] for {}/{} measurable pairs; same-class change positive for {}/{}",
        summary.pairs, summary.ratios_in_band, summary.ratios_measured, positive, checked
    );
    match breaches.first() {
        None => Ok(()),
        Some(first) => Err(Failure::Invariant(format!("{} breaches, first: {first}", breaches.len()))),
    }
}

pub fn gap_shift(run: &GapShiftRun) -> Outcome {
    let ds = EmbeddingDataset::load(&run.data)?;
    let grid = run.grid()?;
    create_out_dir(&run.out, &RunConfig::GapShift(run.clone()))?;
    let (features, text) = match &run.adapter {
        Some(dir) => {
            let adapter = load_adapter(dir)?;
            (adapter.apply_visual(ds.features())?, adapter.apply_text(ds.text())?)
        }
        None => (ds.features().clone(), ds.text().clone()),
    };
    let report = gap_sweep(&features, ds.labels(), &text, &grid, run.tau)?;
    write_text(&run.out.join("gap_loss.dat"), &two_column(&report.alphas, &report.loss))?;
    write_text(&run.out.join("gap_acc.dat"), &two_column(&report.alphas, &report.acc))?;
    write_json(&run.out.join("gap_report.json"), &report)?;
    println!("Acc / Gap: {}", report.summary_line());
    println!(
        "alpha* = {} (acc {:.2}), |gap vector| = {:.4}",
        report.alpha_star,
        report.acc_at_star(),
        report.gap_norm
    );
    Ok(())
}

#[derive(Serialize)]
struct ProbeSummary {
    task: usize,
    snapshots: usize,
    early_drop_fraction: Option<f64>,
    negative_diff_fraction: Option<f64>,
    has_same_class_pairs: bool,
    final_vlm: Option<f64>,
}

pub fn probe(run: &ProbeRun) -> Outcome {
    let e = &run.experiment;
    let ds = EmbeddingDataset::load(&e.data)?;
    create_out_dir(&e.out, &RunConfig::Probe(run.clone()))?;
    let (ep, seed) = task_episode(&ds, &e.benchmark, run.task)?;
    let train = TrainConfig {
        seed,
        snapshot_every: run.snapshot_every,
        ..e.benchmark.train.clone()
    };
    let (_, trajectory) = train_episode(&ep.support, &ep.support_labels, &ep.text, &train)?;
    write_jsonl(&e.out.join("trajectory.jsonl"), &trajectory.records)?;

    let snapshot_root = e.out.join("snapshots");
    let mut stored = Vec::with_capacity(trajectory.snapshots.len());
    for snap in &trajectory.snapshots {
        let dir = snapshot_root.join(format!("epoch_{:04}", snap.epoch));
        save_adapter(&snap.adapter, &dir)?;
        stored.push(Snapshot {
            epoch: snap.epoch,
            adapter: load_adapter(&dir)?,
        });
    }

    let report = visual_probe(&stored, &ep.support, &ep.support_labels, &ep.text, &run.probe)?;
    let trace = delta_cos_trace(&stored, &ep.support, &ep.support_labels)?;
    let epochs: Vec<f64> = report.records.iter().map(|r| r.epoch as f64).collect();
    let deltas: Vec<f64> = report.records.iter().map(|r| r.delta).collect();
    write_text(&e.out.join("probe.dat"), &two_column(&epochs, &deltas))?;
    write_jsonl(&e.out.join("probe.jsonl"), &report.records)?;
    write_jsonl(&e.out.join("delta_cos.jsonl"), &trace.points)?;
    let summary = ProbeSummary {
        task: run.task,
        snapshots: stored.len(),
        early_drop_fraction: report.early_drop_fraction(),
        negative_diff_fraction: trace.negative_diff_fraction(),
        has_same_class_pairs: trace.has_same_class_pairs,
        final_vlm: trajectory.records.last().map(|r| r.vlm),
    };
    write_json(&e.out.join("summary.json"), &summary)?;
    match summary.early_drop_fraction {
        Some(f) => println!(
            "{} snapshots; cross-modal loss dropped under visual learning for {:.1}% of the first half",
            summary.snapshots,
            100.0 * f
        ),
        None => println!("no snapshots were taken"),
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct SweepRow {
    lambda: f64,
    beta: f64,
    init_epochs: usize,
    mean: f64,
    ci95: f64,
    mean_gap: Option<f64>,
}

pub fn sweep(run: &SweepRun) -> Outcome {
    let e = &run.experiment;
    let ds = EmbeddingDataset::load(&e.data)?;
    create_out_dir(&e.out, &RunConfig::Sweep(run.clone()))?;
    let mut rows = Vec::new();
    for &init_epochs in &run.init_epochs_grid {
        for &lambda in &run.lambdas {
            for &beta in &run.betas {
                let result = run_benchmark(&ds, &run.cell(lambda, beta, init_epochs)?)?;
                info!("lambda {lambda} beta {beta} init {init_epochs}: {}", result.summary_line());
                rows.push(SweepRow {
                    lambda,
                    beta,
                    init_epochs,
                    mean: result.mean,
                    ci95: result.ci95,
                    mean_gap: result.mean_gap,
                });
            }
        }
    }
    let path = e.out.join("sweep.csv");
    let mut w = csv::Writer::from_path(&path).map_err(Error::from)?;
    for row in &rows {
        w.serialize(row).map_err(Error::from)?;
    }
    w.flush().map_err(|err| Error::io(&path, err))?;

    println!("{:>8} {:>8} {:>6}  accuracy", "lambda", "beta", "init");
    for r in &rows {
        println!("{:>8} {:>8} {:>6}  {:.2} ± {:.2}", r.lambda, r.beta, r.init_epochs, r.mean, r.ci95);
    }
    let best = rows.iter().max_by(|a, b| a.mean.total_cmp(&b.mean)).expect("non-empty grid");
    write_json(&e.out.join("summary.json"), &serde_json::json!({ "cells": rows.len(), "best": best }))?;
    println!("best: lambda {} beta {} init {} at {:.2}", best.lambda, best.beta, best.init_epochs, best.mean);
    Ok(())
}
