use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use requery_core::accuracy::{self, AccuracyReport};
use requery_core::multimodal::{self, CoverageCurve};
use requery_core::rephrase::{self, SweepOptions, SweepResult};
use requery_core::report::{self, InputHash, RunManifest};
use requery_core::stats::mean_and_standard_error;
use requery_core::synth::{self, SynthConfig};
use requery_core::{load_benchmark, Benchmark, Selection, SelectionPolicy};
use serde::{Deserialize, Serialize};

use crate::{AccuracyArgs, AmaeArgs, ArmaeArgs, ConvergeArgs, CrossoverArgs, GenArgs, Queries, ReplayArgs};

pub const BENCHMARK_FILE: &str = "benchmark.jsonl";
pub const ARMAE_SUMMARY: &str = "armae_summary.json";

/// Command-line arguments with the output directory removed, as stored in manifests.
pub fn recorded_args(argv: &[String]) -> Vec<String> {
    let mut out = Vec::with_capacity(argv.len());
    let mut it = argv.iter();
    while let Some(a) = it.next() {
        if a == "--out" {
            it.next();
        } else if !a.starts_with("--out=") {
            out.push(a.clone());
        }
    }
    out
}

/// Rebuilds the argument vector of a recorded run, after checking its inputs are unchanged.
pub fn replay_argv(args: &ReplayArgs) -> anyhow::Result<Vec<String>> {
    let manifest = report::read_manifest(&args.manifest)
        .with_context(|| format!("reading manifest {}", args.manifest.display()))?;
    for input in &manifest.input_hashes {
        let bytes = std::fs::read(&input.path).with_context(|| format!("reading input {}", input.path))?;
        if report::sha256_hex(&bytes) != input.sha256 {
            bail!("input {} changed since the recorded run", input.path);
        }
    }
    let mut argv = manifest.args.clone();
    if argv.first() != Some(&manifest.command) {
        bail!("manifest args do not start with command {:?}", manifest.command);
    }
    argv.push("--out".into());
    argv.push(args.out.out.display().to_string());
    Ok(argv)
}

struct Run {
    args: Vec<String>,
    inputs: Vec<InputHash>,
    seeds: Vec<u64>,
    files: Vec<(String, Vec<u8>)>,
}

impl Run {
    fn new(args: Vec<String>) -> Self {
        Run { args, inputs: Vec::new(), seeds: Vec::new(), files: Vec::new() }
    }

    fn read_input(&mut self, path: &Path) -> anyhow::Result<Vec<u8>> {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        self.inputs.push(InputHash { path: path.display().to_string(), sha256: report::sha256_hex(&bytes) });
        Ok(bytes)
    }

    fn benchmark(&mut self, path: &Path) -> anyhow::Result<Benchmark> {
        self.read_input(path)?;
        Ok(load_benchmark(path)?)
    }

    fn file(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> anyhow::Result<()> {
        self.file(name, report::to_json_bytes(value)?);
        Ok(())
    }

    fn finish(self, out: &Path) -> anyhow::Result<()> {
        let manifest = RunManifest {
            command: self.args.first().cloned().unwrap_or_default(),
            args: self.args,
            input_hashes: self.inputs,
            seeds: self.seeds,
            toolkit_version: report::TOOLKIT_VERSION.to_string(),
            outputs: Vec::new(),
        };
        report::write_outputs(out, &self.files, manifest)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub standard_error: f64,
}

impl MeanSe {
    fn of(samples: &[f64]) -> Self {
        let (mean, standard_error) = mean_and_standard_error(samples);
        MeanSe { mean, standard_error }
    }
}

fn trial_seeds(base: u64, trials: usize) -> anyhow::Result<Vec<u64>> {
    if trials == 0 {
        bail!(requery_core::Error::Input("trials must be at least 1".into()));
    }
    Ok((0..trials as u64).map(|t| rephrase::trial_seed(base, t)).collect())
}

pub fn gen(args: &GenArgs, recorded: Vec<String>) -> anyhow::Result<()> {
    let mut run = Run::new(recorded);
    let mut config = match (&args.source.preset, &args.source.config) {
        (Some(name), _) => synth::preset(name)?,
        (None, Some(path)) => {
            let bytes = run.read_input(path)?;
            serde_json::from_slice::<SynthConfig>(&bytes)
                .map_err(requery_core::Error::from)
                .with_context(|| format!("parsing config {}", path.display()))?
        }
        (None, None) => bail!("one of --preset or --config is required"),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    config.direct_prediction |= args.direct;
    let benchmark = synth::generate(&config)?;
    run.seeds.push(config.seed);
    run.file(BENCHMARK_FILE, benchmark.to_bytes()?);
    run.json("config.json", &config)?;
    run.finish(&args.out.out)
}

#[derive(Debug, Serialize)]
struct AmaeSummary {
    benchmark: String,
    distribution: String,
    measure: String,
    queries: String,
    trials: usize,
    seed: u64,
    grid_size: usize,
    amae: MeanSe,
    upper_bound_accuracy: f64,
    coverage_at_upper_bound: MeanSe,
    per_trial_amae: Vec<f64>,
}

pub fn amae(args: &AmaeArgs, recorded: Vec<String>) -> anyhow::Result<()> {
    let mut run = Run::new(recorded);
    let benchmark = run.benchmark(&args.eval.benchmark)?;
    let (choice, measure) = (args.eval.distribution, args.eval.measure);
    let seeds = trial_seeds(args.trials.seed, args.trials.trials)?;
    let upper_bound = accuracy::per_object_best(&benchmark, choice)?.mean;

    let per_trial = seeds
        .par_iter()
        .map(|&seed| {
            let resampled;
            let b = match args.queries {
                Queries::Initial => &benchmark,
                Queries::Resample => {
                    resampled = benchmark.with_resampled_initials(&mut ChaCha8Rng::seed_from_u64(seed));
                    &resampled
                }
            };
            let scored = multimodal::score_instances(b, choice, measure)?;
            let curve = multimodal::mae_curve(&scored)?;
            let coverage = multimodal::coverage_at_upper_bound(&scored, upper_bound)?;
            Ok((curve, coverage))
        })
        .collect::<requery_core::Result<Vec<(CoverageCurve, f64)>>>()?;

    let (curves, coverages): (Vec<CoverageCurve>, Vec<f64>) = per_trial.into_iter().unzip();
    let mean_curve = CoverageCurve::mean(&curves)?;
    let areas: Vec<f64> = curves.iter().map(CoverageCurve::area).collect();
    if args.queries == Queries::Resample {
        run.seeds = seeds;
    } else {
        run.seeds.push(args.trials.seed);
    }
    run.file("amae_curve.csv", report::curve_csv(&mean_curve).into_bytes());
    run.json(
        "amae_summary.json",
        &AmaeSummary {
            benchmark: benchmark.metadata().name.clone(),
            distribution: choice.as_str().into(),
            measure: measure.as_str().into(),
            queries: format!("{:?}", args.queries).to_lowercase(),
            trials: args.trials.trials,
            seed: args.trials.seed,
            grid_size: benchmark.len(),
            amae: MeanSe::of(&areas),
            upper_bound_accuracy: upper_bound,
            coverage_at_upper_bound: MeanSe::of(&coverages),
            per_trial_amae: areas,
        },
    )?;
    run.finish(&args.out.out)
}

/// Written by `armae` and read back by `crossover`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArmaeSummary {
    pub benchmark: String,
    pub selection: String,
    pub distribution: String,
    pub measure: String,
    pub priority: String,
    pub trials: usize,
    pub seed: u64,
    pub grid_size: usize,
    pub armae: MeanSe,
    /// Area of the mean curve over the coverages every trial reached.
    pub mean_curve_area: f64,
    pub truncated_trials: usize,
    pub per_trial_armae: Vec<f64>,
    /// Mean RMAE after `r` re-queries, `r = 0, 1, ...`.
    pub mean_curve: Vec<f64>,
}

pub fn armae(args: &ArmaeArgs, recorded: Vec<String>) -> anyhow::Result<()> {
    let mut run = Run::new(recorded);
    let benchmark = run.benchmark(&args.eval.benchmark)?;
    let policy = SelectionPolicy::new(args.selection, args.eval.distribution, args.eval.measure);
    let options = SweepOptions { priority_mode: args.priority.into() };
    let seeds = trial_seeds(args.trials.seed, args.trials.trials)?;

    let results = seeds
        .par_iter()
        .map(|&seed| rephrase::rmae_sweep(&benchmark, &policy, options, seed))
        .collect::<requery_core::Result<Vec<SweepResult>>>()?;

    let curves: Vec<CoverageCurve> = results.iter().map(|r| r.curve.clone()).collect();
    let mean_curve = CoverageCurve::mean(&curves)?;
    let areas: Vec<f64> = curves.iter().map(CoverageCurve::area).collect();
    let steps = report::step_log_csv(results.iter().enumerate().map(|(t, r)| (t, r.steps.as_slice())));
    run.seeds = seeds;
    run.file("armae_curve.csv", report::curve_csv(&mean_curve).into_bytes());
    run.file("armae_steps.csv", steps.into_bytes());
    run.json(
        ARMAE_SUMMARY,
        &ArmaeSummary {
            benchmark: benchmark.metadata().name.clone(),
            selection: args.selection.to_string(),
            distribution: args.eval.distribution.as_str().into(),
            measure: args.eval.measure.as_str().into(),
            priority: format!("{:?}", args.priority).to_lowercase(),
            trials: args.trials.trials,
            seed: args.trials.seed,
            grid_size: benchmark.len(),
            armae: MeanSe::of(&areas),
            mean_curve_area: mean_curve.area(),
            truncated_trials: results.iter().filter(|r| r.truncated).count(),
            per_trial_armae: areas,
            mean_curve: mean_curve.values().collect(),
        },
    )?;
    run.finish(&args.out.out)
}

#[derive(Debug, Serialize)]
struct AccuracyTable {
    benchmark: String,
    distribution: String,
    detection_rate: f64,
    random_samples: usize,
    seed: u64,
    reports: Vec<AccuracyReport>,
}

pub fn accuracy(args: &AccuracyArgs, recorded: Vec<String>) -> anyhow::Result<()> {
    let mut run = Run::new(recorded);
    let benchmark = run.benchmark(&args.benchmark)?;
    let reports = accuracy::all_modes(&benchmark, args.distribution, args.trials, args.seed)?;
    run.seeds.push(args.seed);
    run.json(
        "accuracy.json",
        &AccuracyTable {
            benchmark: benchmark.metadata().name.clone(),
            distribution: args.distribution.as_str().into(),
            detection_rate: benchmark.detection_rate(),
            random_samples: args.trials,
            seed: args.seed,
            reports,
        },
    )?;
    run.finish(&args.out.out)
}

#[derive(Debug, Serialize)]
struct ConvergedRow {
    selection: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<serde_json::Value>,
}

#[derive(Debug, Serialize)]
struct ConvergeTable {
    benchmark: String,
    distribution: String,
    measure: String,
    rows: Vec<ConvergedRow>,
}

pub fn converge(args: &ConvergeArgs, recorded: Vec<String>) -> anyhow::Result<()> {
    let mut run = Run::new(recorded);
    let benchmark = run.benchmark(&args.eval.benchmark)?;
    let mut rows = Vec::new();
    for selection in [Selection::None, Selection::Smart, Selection::Combined] {
        let policy = SelectionPolicy::new(selection, args.eval.distribution, args.eval.measure);
        let row = match rephrase::converged_accuracy(&benchmark, &policy) {
            Ok(acc) => ConvergedRow { selection: selection.to_string(), accuracy: Some(acc), error: None },
            // A capability gap for one policy is reported in its row; other errors abort.
            Err(e @ requery_core::Error::Capability(_)) => ConvergedRow {
                selection: selection.to_string(),
                accuracy: None,
                error: Some(serde_json::json!({ "kind": e.kind(), "message": e.to_string() })),
            },
            Err(e) => return Err(e.into()),
        };
        rows.push(row);
    }
    run.json(
        "converge.json",
        &ConvergeTable {
            benchmark: benchmark.metadata().name.clone(),
            distribution: args.eval.distribution.as_str().into(),
            measure: args.eval.measure.as_str().into(),
            rows,
        },
    )?;
    run.finish(&args.out.out)
}

#[derive(Debug, Serialize)]
struct CrossoverRow {
    coverage: f64,
    combined: f64,
    smart: f64,
}

#[derive(Debug, Serialize)]
struct CrossoverTable {
    grid_size: usize,
    combined_armae: MeanSe,
    smart_armae: MeanSe,
    /// Highest coverage at which combined replacement is no longer strictly lower,
    /// walking up from the lowest common coverage; null when it is not lower there.
    crossover_coverage: Option<f64>,
    smart_lower_somewhere: bool,
    rows: Vec<CrossoverRow>,
}

fn read_summary(run: &mut Run, dir: &Path) -> anyhow::Result<(ArmaeSummary, CoverageCurve)> {
    let path: PathBuf = dir.join(ARMAE_SUMMARY);
    let bytes = run.read_input(&path)?;
    let summary: ArmaeSummary = serde_json::from_slice(&bytes)
        .map_err(requery_core::Error::from)
        .with_context(|| format!("parsing {}", path.display()))?;
    let curve = CoverageCurve::from_values(summary.grid_size, summary.mean_curve.clone())?;
    Ok((summary, curve))
}

pub fn crossover(args: &CrossoverArgs, recorded: Vec<String>) -> anyhow::Result<()> {
    let mut run = Run::new(recorded);
    let (combined_summary, combined) = read_summary(&mut run, &args.combined)?;
    let (smart_summary, smart) = read_summary(&mut run, &args.smart)?;
    for (s, want) in [(&combined_summary, "combined"), (&smart_summary, "smart")] {
        if s.selection != want {
            bail!(requery_core::Error::Input(format!("--{want} points at a run with selection {}", s.selection)));
        }
    }
    let crossover = rephrase::crossover_coverage(&combined, &smart)?;
    let rows: Vec<CrossoverRow> = combined
        .points()
        .iter()
        .zip(smart.points())
        .map(|(c, s)| CrossoverRow { coverage: c.coverage, combined: c.value, smart: s.value })
        .collect();
    run.json(
        "crossover.json",
        &CrossoverTable {
            grid_size: combined.grid_size(),
            combined_armae: combined_summary.armae,
            smart_armae: smart_summary.armae,
            crossover_coverage: crossover,
            smart_lower_somewhere: rows.iter().any(|r| r.smart < r.combined),
            rows,
        },
    )?;
    run.finish(&args.out.out)
}
