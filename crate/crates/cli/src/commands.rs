//! Command implementations. Every experiment writes its artifacts under an
//! output directory together with a `manifest.txt` recording the resolved
//! configuration and seed, and a `plan.txt` stream-plan manifest, so the run
//! replays exactly from its manifest plus the input dataset.

use crate::config::{parse_list, Settings};
use crate::{
    CmdError, CmdResult, EnrichArgs, PreprocessArgs, ReportArgs, RunBatchArgs, RunOnlineArgs,
    ScarcityArgs, SynthArgs,
};
use driftforest::dataset::{
    enrich_with_year, flatten_snapshots, load_metadata, load_run_map, parse_process_records,
    read_flattened, write_flattened, DatasetSchema, SnapshotSample, YearFallback,
};
use driftforest::eval::{
    compare_reports, prequential_run, read_instances_csv, Dominance, MetricsReport,
    ReportComparison, DEFAULT_WINDOW,
};
use driftforest::forest::{batch_fit, ForestConfig, ForestModel};
use driftforest::stream::{mask_labels, random_split, temporal_split, StreamPlan};
use driftforest::synth::{generate_stream, SynthConfig};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

const DEFAULT_TREES: usize = 10;
const DEFAULT_LAMBDA: f64 = 6.0;
const DEFAULT_RATIO: f64 = 0.6;
const DEFAULT_PIVOT_YEAR: u32 = 1;
const DEFAULT_FRACTIONS: &str = "0,0.25,0.5,0.75,1.0";

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

fn guard_file(path: &Path, force: bool) -> CmdResult<()> {
    if path.exists() && !force {
        return Err(CmdError::new(
            "exists",
            format!(
                "{} already exists; pass --force to overwrite",
                path.display()
            ),
        ));
    }
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| CmdError::io("creating output directory", e))?;
        }
    }
    Ok(())
}

fn guard_dir(path: &Path, force: bool) -> CmdResult<()> {
    if path.join("manifest.txt").exists() && !force {
        return Err(CmdError::new(
            "exists",
            format!(
                "{} already holds a run manifest; pass --force to overwrite",
                path.display()
            ),
        ));
    }
    std::fs::create_dir_all(path).map_err(|e| CmdError::io("creating output directory", e))
}

fn write_manifest(path: &Path, entries: &[(&str, String)]) -> CmdResult<()> {
    let mut text = String::from("# driftforest run manifest v1\n");
    for (key, value) in entries {
        let _ = writeln!(text, "{key}={value}");
    }
    std::fs::write(path, text).map_err(|e| CmdError::io("writing manifest", e))
}

fn load_dataset(path: &Path) -> CmdResult<Vec<SnapshotSample>> {
    let file = std::fs::File::open(path)
        .map_err(|e| CmdError::io(&format!("opening {}", path.display()), e))?;
    read_flattened(file).map_err(|e| CmdError::new("data", e.to_string()))
}

struct ModelSettings {
    seed: u64,
    trees: usize,
    lambda: f64,
    window: usize,
}

impl ModelSettings {
    fn resolve(
        settings: &Settings,
        seed: Option<u64>,
        trees: Option<usize>,
        lambda: Option<f64>,
        window: Option<usize>,
    ) -> CmdResult<Self> {
        Ok(Self {
            seed: settings.resolve_seed(seed)?,
            trees: settings.resolve(trees, "trees", DEFAULT_TREES)?,
            lambda: settings.resolve(lambda, "lambda", DEFAULT_LAMBDA)?,
            window: settings.resolve(window, "window", DEFAULT_WINDOW)?,
        })
    }

    fn batch_config(&self) -> ForestConfig {
        ForestConfig {
            n_trees: self.trees,
            lambda: self.lambda,
            ..ForestConfig::batch(self.seed)
        }
    }

    fn adaptive_config(&self) -> ForestConfig {
        ForestConfig {
            n_trees: self.trees,
            lambda: self.lambda,
            ..ForestConfig::adaptive(self.seed)
        }
    }

    fn manifest_entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("seed", self.seed.to_string()),
            ("trees", self.trees.to_string()),
            ("lambda", self.lambda.to_string()),
            ("window", self.window.to_string()),
        ]
    }
}

fn eval_error(err: driftforest::eval::EvalError) -> CmdError {
    CmdError::new("model", err.to_string())
}

fn write_plan(dir: &Path, plan: &StreamPlan) -> CmdResult<()> {
    let file = std::fs::File::create(dir.join("plan.txt"))
        .map_err(|e| CmdError::io("writing plan manifest", e))?;
    plan.write_manifest(file)
        .map_err(|e| CmdError::io("writing plan manifest", e))
}

fn write_comparison(
    path: &Path,
    first_name: &str,
    second_name: &str,
    comparison: &ReportComparison,
) -> CmdResult<()> {
    let mut text = format!("metric,{first_name},{second_name},delta\n");
    for d in &comparison.deltas {
        let _ = writeln!(text, "{},{},{},{}", d.name, d.first, d.second, d.delta());
    }
    let verdict = match comparison.dominance {
        Some(Dominance::FirstOverSecond) => first_name,
        Some(Dominance::SecondOverFirst) => second_name,
        None => "none",
    };
    let _ = writeln!(text, "dominance,{verdict},,");
    std::fs::write(path, text).map_err(|e| CmdError::io("writing comparison", e))
}

fn print_summary(name: &str, report: &MetricsReport) {
    println!(
        "{name}: accuracy={:.4} precision={:.4} recall={:.4} f_measure={:.4} ({} instances)",
        report.metrics.accuracy,
        report.metrics.precision,
        report.metrics.recall,
        report.metrics.f_measure,
        report.instances.len()
    );
}

// ---------------------------------------------------------------------------
// preprocess / enrich / synth
// ---------------------------------------------------------------------------

pub fn preprocess(args: &PreprocessArgs, settings: &Settings, force: bool) -> CmdResult<()> {
    guard_file(&args.out, force)?;
    let m_max = if args.paper_shape {
        driftforest::dataset::TELEMETRY_M_MAX
    } else {
        settings.resolve(args.m_max, "m_max", driftforest::dataset::TELEMETRY_M_MAX)?
    };
    let n = if args.paper_shape {
        32
    } else {
        settings.resolve(args.n, "n", 32)?
    };
    let mut schema = if n == 32 {
        DatasetSchema::telemetry_with_m_max(m_max)
    } else {
        DatasetSchema::synthetic(m_max, n)
    };
    schema.timestamp_column = args.timestamp_col.clone();
    schema.label_column = args.label_col.clone();

    let input = std::fs::File::open(&args.input)
        .map_err(|e| CmdError::io(&format!("opening {}", args.input.display()), e))?;
    let records =
        parse_process_records(input, &schema).map_err(|e| CmdError::new("data", e.to_string()))?;
    let samples =
        flatten_snapshots(&records, &schema).map_err(|e| CmdError::new("data", e.to_string()))?;

    let out = std::fs::File::create(&args.out)
        .map_err(|e| CmdError::io(&format!("creating {}", args.out.display()), e))?;
    write_flattened(&samples, out).map_err(|e| CmdError::io("writing flattened dataset", e))?;

    let infected = samples.iter().filter(|s| s.label.is_infected()).count();
    write_manifest(
        &manifest_sibling(&args.out),
        &[
            ("command", "preprocess".to_string()),
            ("input", args.input.display().to_string()),
            ("out", args.out.display().to_string()),
            ("m_max", m_max.to_string()),
            ("n", n.to_string()),
            ("timestamp_col", args.timestamp_col.clone()),
            ("label_col", args.label_col.clone()),
        ],
    )?;
    println!(
        "preprocessed {} process rows into {} snapshots ({} infected, width {}) -> {}",
        records.len(),
        samples.len(),
        infected,
        m_max * n,
        args.out.display()
    );
    Ok(())
}

fn manifest_sibling(out: &Path) -> PathBuf {
    let mut path = out.as_os_str().to_owned();
    path.push(".manifest");
    PathBuf::from(path)
}

pub fn enrich(args: &EnrichArgs, force: bool) -> CmdResult<()> {
    guard_file(&args.out, force)?;
    let samples = load_dataset(&args.input)?;
    let metadata_file = std::fs::File::open(&args.metadata)
        .map_err(|e| CmdError::io(&format!("opening {}", args.metadata.display()), e))?;
    let metadata =
        load_metadata(metadata_file).map_err(|e| CmdError::new("data", e.to_string()))?;
    let run_map_file = std::fs::File::open(&args.run_map)
        .map_err(|e| CmdError::io(&format!("opening {}", args.run_map.display()), e))?;
    let run_map = load_run_map(run_map_file).map_err(|e| CmdError::new("data", e.to_string()))?;

    let fallback = match args.fallback.as_str() {
        "drop" => YearFallback::Drop,
        _ => YearFallback::KeepUnknown,
    };
    let outcome = enrich_with_year(samples, &run_map, &metadata, fallback);

    let out = std::fs::File::create(&args.out)
        .map_err(|e| CmdError::io(&format!("creating {}", args.out.display()), e))?;
    write_flattened(&outcome.samples, out)
        .map_err(|e| CmdError::io("writing enriched dataset", e))?;
    write_manifest(
        &manifest_sibling(&args.out),
        &[
            ("command", "enrich".to_string()),
            ("input", args.input.display().to_string()),
            ("metadata", args.metadata.display().to_string()),
            ("run_map", args.run_map.display().to_string()),
            ("fallback", args.fallback.clone()),
            ("out", args.out.display().to_string()),
        ],
    )?;
    println!(
        "enriched {} samples ({} dropped without metadata) -> {}",
        outcome.samples.len(),
        outcome.dropped,
        args.out.display()
    );
    Ok(())
}

pub fn synth(args: &SynthArgs, settings: &Settings, force: bool) -> CmdResult<()> {
    guard_file(&args.out, force)?;
    let seed = settings.resolve_seed(args.seed)?;
    let (m_max, n) = if args.paper_shape {
        (driftforest::dataset::TELEMETRY_M_MAX, 32)
    } else {
        (
            settings.resolve(args.m_max, "m_max", 8)?,
            settings.resolve(args.n, "n", 8)?,
        )
    };
    let shift_indices: Vec<usize> = match &args.shifts {
        Some(raw) => parse_list(raw, "shift index")?,
        None => Vec::new(),
    };
    let concept_shifts = shift_indices
        .iter()
        .enumerate()
        .map(|(i, &idx)| (idx, i as u64 + 1))
        .collect();
    let year_boundaries = match &args.years {
        Some(raw) => parse_list(raw, "year boundary")?,
        None => Vec::new(),
    };
    let config = SynthConfig {
        m_max,
        n,
        n_instances: settings.resolve(args.instances, "instances", 1000)?,
        infected_fraction: settings.resolve(args.infected_fraction, "infected_fraction", 0.45)?,
        concept_shifts,
        year_boundaries,
        noise: settings.resolve(args.noise, "noise", 0.0)?,
        seed,
    };
    let stream = generate_stream(&config).map_err(|e| CmdError::usage(e.to_string()))?;

    let out = std::fs::File::create(&args.out)
        .map_err(|e| CmdError::io(&format!("creating {}", args.out.display()), e))?;
    write_flattened(&stream, out).map_err(|e| CmdError::io("writing stream", e))?;
    write_manifest(
        &manifest_sibling(&args.out),
        &[
            ("command", "synth".to_string()),
            ("out", args.out.display().to_string()),
            ("instances", config.n_instances.to_string()),
            ("m_max", m_max.to_string()),
            ("n", n.to_string()),
            ("infected_fraction", config.infected_fraction.to_string()),
            ("noise", config.noise.to_string()),
            (
                "shifts",
                shift_indices
                    .iter()
                    .map(ToString::to_string)
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            (
                "years",
                config
                    .year_boundaries
                    .iter()
                    .map(ToString::to_string)
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            ("seed", seed.to_string()),
        ],
    )?;
    let infected = stream.iter().filter(|s| s.label.is_infected()).count();
    println!(
        "generated {} instances (width {}, {} infected, seed {}) -> {}",
        stream.len(),
        m_max * n,
        infected,
        seed,
        args.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// run-batch / run-online / scarcity / report
// ---------------------------------------------------------------------------

pub fn run_batch(args: &RunBatchArgs, settings: &Settings, force: bool) -> CmdResult<()> {
    let ratio = settings.resolve(args.ratio, "ratio", DEFAULT_RATIO)?;
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(CmdError::usage(format!("--ratio {ratio} outside (0, 1)")));
    }
    let model_settings =
        ModelSettings::resolve(settings, args.seed, args.trees, args.lambda, args.window)?;
    let samples = load_dataset(&args.input)?;
    guard_dir(&args.out, force)?;

    let n_features = samples.first().map_or(0, |s| s.vector.len());
    let plan = random_split(samples, ratio, model_settings.seed)
        .map_err(|e| CmdError::new("data", e.to_string()))?;
    write_plan(&args.out, &plan)?;

    let mut batch = batch_fit(&plan.pretrain, &model_settings.batch_config())
        .map_err(|e| CmdError::new("model", e.to_string()))?;
    if let Some(class) = batch.degenerate_class() {
        eprintln!("warning: training segment holds a single class ({class:?}); the batch model will always predict it");
    }
    let batch_report =
        prequential_run(&mut batch, &plan, model_settings.window).map_err(eval_error)?;

    // The online model trains one instance at a time on the same pretrain
    // segment, then predicts the evaluation segment without updates.
    let mut online = ForestModel::new_adaptive(model_settings.adaptive_config(), n_features)
        .map_err(|e| CmdError::new("model", e.to_string()))?;
    online
        .pretrain(&plan.pretrain)
        .map_err(|e| CmdError::new("model", e.to_string()))?;
    let online_report =
        prequential_run(&mut online, &plan, model_settings.window).map_err(eval_error)?;

    batch_report
        .write_files(&args.out.join("batch"))
        .map_err(eval_error)?;
    online_report
        .write_files(&args.out.join("online"))
        .map_err(eval_error)?;
    let comparison = compare_reports(&batch_report, &online_report).map_err(eval_error)?;
    write_comparison(
        &args.out.join("comparison.csv"),
        "batch",
        "online",
        &comparison,
    )?;

    let mut entries = vec![
        ("command", "run-batch".to_string()),
        ("input", args.input.display().to_string()),
        ("out", args.out.display().to_string()),
        ("ratio", ratio.to_string()),
    ];
    entries.extend(model_settings.manifest_entries());
    write_manifest(&args.out.join("manifest.txt"), &entries)?;

    print_summary("batch", &batch_report);
    print_summary("online", &online_report);
    print!("{comparison}");
    println!("artifacts -> {}", args.out.display());
    Ok(())
}

pub fn run_online(args: &RunOnlineArgs, settings: &Settings, force: bool) -> CmdResult<()> {
    let pivot_year = settings.resolve(args.pivot_year, "pivot_year", DEFAULT_PIVOT_YEAR)?;
    let model_settings =
        ModelSettings::resolve(settings, args.seed, args.trees, args.lambda, args.window)?;
    let samples = load_dataset(&args.input)?;
    guard_dir(&args.out, force)?;

    let n_features = samples.first().map_or(0, |s| s.vector.len());
    let plan =
        temporal_split(samples, pivot_year).map_err(|e| CmdError::new("data", e.to_string()))?;
    write_plan(&args.out, &plan)?;

    let mut batch = batch_fit(&plan.pretrain, &model_settings.batch_config())
        .map_err(|e| CmdError::new("model", e.to_string()))?;
    let batch_report =
        prequential_run(&mut batch, &plan, model_settings.window).map_err(eval_error)?;

    let mut online = ForestModel::new_adaptive(model_settings.adaptive_config(), n_features)
        .map_err(|e| CmdError::new("model", e.to_string()))?;
    online
        .pretrain(&plan.pretrain)
        .map_err(|e| CmdError::new("model", e.to_string()))?;
    let online_report =
        prequential_run(&mut online, &plan, model_settings.window).map_err(eval_error)?;

    online_report
        .write_files(&args.out.join("online"))
        .map_err(eval_error)?;
    batch_report
        .write_files(&args.out.join("batch"))
        .map_err(eval_error)?;
    let comparison = compare_reports(&online_report, &batch_report).map_err(eval_error)?;
    write_comparison(
        &args.out.join("comparison.csv"),
        "online",
        "batch",
        &comparison,
    )?;

    let mut entries = vec![
        ("command", "run-online".to_string()),
        ("input", args.input.display().to_string()),
        ("out", args.out.display().to_string()),
        ("pivot_year", pivot_year.to_string()),
        ("replacements", online.replacements_total().to_string()),
        ("warnings", online.warnings_total().to_string()),
    ];
    entries.extend(model_settings.manifest_entries());
    write_manifest(&args.out.join("manifest.txt"), &entries)?;

    print_summary("online", &online_report);
    print_summary("batch", &batch_report);
    print!("{comparison}");
    println!(
        "tree replacements: {}, warnings: {}",
        online.replacements_total(),
        online.warnings_total()
    );
    println!("artifacts -> {}", args.out.display());
    Ok(())
}

pub fn scarcity(args: &ScarcityArgs, settings: &Settings, force: bool) -> CmdResult<()> {
    let pivot_year = settings.resolve(args.pivot_year, "pivot_year", DEFAULT_PIVOT_YEAR)?;
    let fractions_raw = args
        .fractions
        .clone()
        .unwrap_or_else(|| DEFAULT_FRACTIONS.to_string());
    let fractions: Vec<f64> = parse_list(&fractions_raw, "fraction")?;
    if fractions.is_empty() {
        return Err(CmdError::usage("--fractions is empty"));
    }
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
        return Err(CmdError::usage("fractions must lie in [0, 1]"));
    }
    let model_settings =
        ModelSettings::resolve(settings, args.seed, args.trees, args.lambda, args.window)?;
    let samples = load_dataset(&args.input)?;
    guard_dir(&args.out, force)?;

    let n_features = samples.first().map_or(0, |s| s.vector.len());
    let plan =
        temporal_split(samples, pivot_year).map_err(|e| CmdError::new("data", e.to_string()))?;
    write_plan(&args.out, &plan)?;

    let mut curve = String::from("fraction,accuracy,precision,recall,f_measure\n");
    for &fraction in &fractions {
        let masked = mask_labels(plan.clone(), fraction, model_settings.seed)
            .map_err(|e| CmdError::new("data", e.to_string()))?;
        let mut online = ForestModel::new_adaptive(model_settings.adaptive_config(), n_features)
            .map_err(|e| CmdError::new("model", e.to_string()))?;
        online
            .pretrain(&masked.pretrain)
            .map_err(|e| CmdError::new("model", e.to_string()))?;
        let report =
            prequential_run(&mut online, &masked, model_settings.window).map_err(eval_error)?;

        let dir = args.out.join(format!("fraction_{fraction}"));
        report.write_files(&dir).map_err(eval_error)?;
        let plan_file = std::fs::File::create(dir.join("plan.txt"))
            .map_err(|e| CmdError::io("writing plan manifest", e))?;
        masked
            .write_manifest(plan_file)
            .map_err(|e| CmdError::io("writing plan manifest", e))?;

        let _ = writeln!(
            curve,
            "{fraction},{},{},{},{}",
            report.metrics.accuracy,
            report.metrics.precision,
            report.metrics.recall,
            report.metrics.f_measure
        );
        print_summary(&format!("fraction {fraction}"), &report);
    }
    std::fs::write(args.out.join("scarcity.csv"), curve)
        .map_err(|e| CmdError::io("writing scarcity curve", e))?;

    let mut entries = vec![
        ("command", "scarcity".to_string()),
        ("input", args.input.display().to_string()),
        ("out", args.out.display().to_string()),
        ("pivot_year", pivot_year.to_string()),
        ("fractions", fractions_raw.clone()),
    ];
    entries.extend(model_settings.manifest_entries());
    write_manifest(&args.out.join("manifest.txt"), &entries)?;
    println!("artifacts -> {}", args.out.display());
    Ok(())
}

pub fn report(args: &ReportArgs, settings: &Settings) -> CmdResult<()> {
    let window = settings.resolve(args.window, "window", DEFAULT_WINDOW)?;
    let load = |dir: &Path| -> CmdResult<MetricsReport> {
        let path = dir.join("instances.csv");
        let file = std::fs::File::open(&path)
            .map_err(|e| CmdError::io(&format!("opening {}", path.display()), e))?;
        let records = read_instances_csv(file).map_err(|e| CmdError::new("data", e.to_string()))?;
        MetricsReport::from_instances(records, window)
            .map_err(|e| CmdError::new("data", e.to_string()))
    };
    let first = load(&args.first)?;
    let second = load(&args.second)?;
    let comparison =
        compare_reports(&first, &second).map_err(|e| CmdError::new("data", e.to_string()))?;
    print_summary(&args.first.display().to_string(), &first);
    print_summary(&args.second.display().to_string(), &second);
    print!("{comparison}");
    if let Some(out) = &args.out {
        write_comparison(out, "first", "second", &comparison)?;
        println!("comparison -> {}", out.display());
    }
    Ok(())
}
