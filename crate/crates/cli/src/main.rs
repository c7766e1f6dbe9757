//! Batch front end: generate AEQ suites, profile flows, run the simulated
//! adaptive server and execute mutation experiments.
//!
//! Exit codes: 2 parse/usage, 3 constraint, 4 capacity, 5 internal.

mod config;
mod manifest;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use shaketab_core::context::io::{load_flow, load_flows, save_flow, schema_to_json};
use shaketab_core::context::{validate_flow, ContextSchema};
use shaketab_core::coverage::build_pairwise_universe;
use shaketab_core::error::{Error, Result};
use shaketab_core::metric::{detect_ep, origin_distance_series};
use shaketab_core::mutation::{
    generate_mutants, report as project_report, run_experiment, AeqSuite, CellOutcome, FaultGroup,
    KillMatrix, MutantInfo, MutantPlan,
};
use shaketab_core::policy::{load_policy, run, write_trace, FuzzySets, Variant};
use shaketab_core::search::global_search;

use config::{resolve, EpOverrides, Resolved};
use manifest::RunManifest;

#[derive(Parser)]
#[command(name = "shaketab", version, about = "Artificial-earthquake generation and mutation analysis for adaptive systems")]
struct Cli {
    /// Config file (sections: schema-ref, policy-ref, search, ep,
    /// coverage_samples, mutation-plan).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// RNG seed (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads for mutation cells (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Record the global-search iteration trace as JSON lines.
    #[arg(long, global = true)]
    trace: bool,
    /// Violence ratio threshold (overrides config and schema).
    #[arg(long, global = true)]
    rho: Option<f64>,
    /// Violence floor in normalized distance (overrides config and schema).
    #[arg(long, global = true)]
    epsilon: Option<f64>,
    /// Maximum window length in transitions (overrides config and schema).
    #[arg(long, global = true)]
    window_max: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize an AEQ suite by two-level search.
    Generate {
        /// Schema file (JSON).
        #[arg(long)]
        schema: Option<PathBuf>,
    },
    /// Earthquake-profile report for one flow file.
    Profile {
        #[arg(long)]
        schema: Option<PathBuf>,
        /// Flow file (CSV) holding exactly one flow.
        #[arg(long)]
        flow: PathBuf,
    },
    /// Expose the simulated adaptive server to a flow and record its trace.
    Simulate {
        #[arg(long)]
        schema: Option<PathBuf>,
        /// Policy file (rule DSL).
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long)]
        flow: PathBuf,
        /// Initial data-server count.
        #[arg(long, default_value_t = 1)]
        servers: u32,
        /// Initial cache as SIZE:VALIDITY (absent = no cache).
        #[arg(long)]
        cache: Option<String>,
    },
    /// Run the mutation experiment over generated suites.
    Mutate {
        #[arg(long)]
        schema: Option<PathBuf>,
        #[arg(long)]
        policy: Option<PathBuf>,
        /// Suite directory from `generate`; repeatable, one suite each.
        #[arg(long, required = true)]
        suite: Vec<PathBuf>,
        /// Mutant plan file (per-group counts, "exhaustive-small", or an
        /// explicit mutant list).
        #[arg(long)]
        plan: Option<PathBuf>,
    },
    /// Recompute summary reports from an exported kill matrix.
    Report {
        /// kill_matrix.csv produced by `mutate`.
        #[arg(long)]
        matrix: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn ensure_out_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path.display().to_string(), e))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path.display().to_string(), e))
}

fn dispatch(cli: Cli) -> Result<()> {
    let ep_flags = EpOverrides {
        rho: cli.rho,
        epsilon: cli.epsilon,
        window_max: cli.window_max,
    };
    match &cli.command {
        Command::Generate { schema } => {
            let resolved = resolve(
                cli.config.as_deref(),
                schema.as_deref(),
                None,
                cli.seed,
                ep_flags,
                cli.trace,
            )?;
            cmd_generate(&resolved, &cli.out)
        }
        Command::Profile { schema, flow } => {
            let resolved = resolve(
                cli.config.as_deref(),
                schema.as_deref(),
                None,
                cli.seed,
                ep_flags,
                false,
            )?;
            cmd_profile(&resolved, flow, &cli.out)
        }
        Command::Simulate {
            schema,
            policy,
            flow,
            servers,
            cache,
        } => {
            let resolved = resolve(
                cli.config.as_deref(),
                schema.as_deref(),
                policy.as_deref(),
                cli.seed,
                ep_flags,
                false,
            )?;
            let initial = parse_initial_variant(*servers, cache.as_deref())?;
            cmd_simulate(&resolved, flow, &initial, &cli.out)
        }
        Command::Mutate {
            schema,
            policy,
            suite,
            plan,
        } => {
            let resolved = resolve(
                cli.config.as_deref(),
                schema.as_deref(),
                policy.as_deref(),
                cli.seed,
                ep_flags,
                false,
            )?;
            cmd_mutate(&resolved, suite, plan.as_deref(), cli.jobs, &cli.out)
        }
        Command::Report { matrix } => cmd_report(matrix, &cli.out),
    }
}

fn parse_initial_variant(servers: u32, cache: Option<&str>) -> Result<Variant> {
    match cache {
        None => Variant::no_cache(servers),
        Some(spec) => {
            let (size, validity) = spec.split_once(':').ok_or_else(|| {
                Error::Config(format!("--cache expects SIZE:VALIDITY, got `{spec}`"))
            })?;
            let size: u32 = size
                .parse()
                .map_err(|_| Error::Config(format!("bad cache size `{size}`")))?;
            let validity: u32 = validity
                .parse()
                .map_err(|_| Error::Config(format!("bad cache validity `{validity}`")))?;
            Variant::with_cache(size, validity, servers)
        }
    }
}

fn profile_csv(series: &[f64]) -> String {
    let mut out = String::from("seq,origin_distance\n");
    for (i, d) in series.iter().enumerate() {
        let _ = writeln!(out, "{i},{d}");
    }
    out
}

fn search_config_snapshot(resolved: &Resolved) -> serde_json::Value {
    serde_json::json!({
        "schema": schema_to_json(&resolved.schema),
        "schema_path": resolved.schema_path.display().to_string(),
        "policy_path": resolved.policy_path.as_ref().map(|p| p.display().to_string()),
        "search": &resolved.search,
        "mutation_plan": &resolved.plan,
    })
}

fn cmd_generate(resolved: &Resolved, out_dir: &Path) -> Result<()> {
    ensure_out_dir(out_dir)?;
    let schema = &resolved.schema;
    let universe = build_pairwise_universe(schema)?;
    let result = global_search(schema, &universe, &resolved.search)?;

    let mut files = Vec::new();
    for flow in &result.solution {
        let file = format!("{}.csv", flow.id);
        save_flow(schema, flow, &out_dir.join(&file))?;
        let series = origin_distance_series(schema, flow)?;
        write_file(
            &out_dir.join(format!("{}.profile.csv", flow.id)),
            &profile_csv(&series),
        )?;
        files.push(file);
    }

    let covered = universe.coverage_global(&result.solution);
    let suite_index = serde_json::json!({
        "aeqs": result
            .per_flow
            .iter()
            .zip(&files)
            .map(|(stats, file)| {
                serde_json::json!({
                    "id": stats.id,
                    "file": file,
                    "l_value": stats.l_value,
                    "ep_count": stats.ep_count,
                    "shape": stats.shape,
                    "pairs_covered": stats.pairs_covered,
                })
            })
            .collect::<Vec<_>>(),
        "g_value": result.g_value,
        "iterations_used": result.iterations_used,
        "pair_universe": {"pairs": universe.pair_count(), "covered": covered},
    });
    write_file(
        &out_dir.join("suite.json"),
        &serde_json::to_string_pretty(&suite_index)
            .map_err(|e| Error::Internal(e.to_string()))?,
    )?;
    write_file(
        &out_dir.join("search_result.json"),
        &serde_json::to_string_pretty(&result).map_err(|e| Error::Internal(e.to_string()))?,
    )?;
    write_file(
        &out_dir.join("universe.csv"),
        &universe.mark_covered(&result.solution).export_csv(),
    )?;

    if let Some(trace) = &result.trace {
        let mut lines = String::new();
        for event in trace {
            let _ = writeln!(
                lines,
                "{}",
                serde_json::to_string(event).map_err(|e| Error::Internal(e.to_string()))?
            );
        }
        write_file(&out_dir.join("trace.jsonl"), &lines)?;
    }

    let mut manifest = RunManifest::new(
        "generate",
        resolved.search.rng_seed,
        search_config_snapshot(resolved),
    );
    manifest.add_input(&resolved.schema_path)?;
    manifest.write(out_dir)?;

    println!(
        "generated {} AEQs in {} iterations; G = {:.4}; covered {}/{} pairs",
        result.solution.len(),
        result.iterations_used,
        result.g_value,
        covered,
        universe.pair_count()
    );
    Ok(())
}

fn cmd_profile(resolved: &Resolved, flow_path: &Path, out_dir: &Path) -> Result<()> {
    ensure_out_dir(out_dir)?;
    let schema = &resolved.schema;
    let flow = load_flow(schema, flow_path)?;
    validate_flow(schema, &flow)?;
    let report = detect_ep(schema, &flow, &resolved.search.ep)?;

    let summary = serde_json::json!({
        "flow_id": flow.id,
        "ep_count": report.ep_count,
        "shape": report.shape,
        "windows": report.windows,
        "oscillation_satisfied": report.oscillation_satisfied,
    });
    write_file(
        &out_dir.join("profile.json"),
        &serde_json::to_string_pretty(&summary).map_err(|e| Error::Internal(e.to_string()))?,
    )?;
    write_file(
        &out_dir.join("profile.csv"),
        &profile_csv(&report.origin_distance_series),
    )?;

    let mut manifest = RunManifest::new("profile", resolved.search.rng_seed, search_config_snapshot(resolved));
    manifest.add_input(&resolved.schema_path)?;
    manifest.add_input(flow_path)?;
    manifest.write(out_dir)?;

    println!(
        "flow `{}`: ep_count = {}, shape = {}, oscillation = {}",
        flow.id,
        report.ep_count,
        report.shape.as_str(),
        report.oscillation_satisfied
    );
    Ok(())
}

fn cmd_simulate(
    resolved: &Resolved,
    flow_path: &Path,
    initial: &Variant,
    out_dir: &Path,
) -> Result<()> {
    ensure_out_dir(out_dir)?;
    let schema = &resolved.schema;
    let policy_path = resolved.policy_path.as_ref().ok_or_else(|| {
        Error::Config("no policy given: pass --policy or set policy-ref in the config".into())
    })?;
    let policy = load_policy(policy_path, schema)?;
    let sets = FuzzySets::standard_for(schema);
    let flow = load_flow(schema, flow_path)?;
    validate_flow(schema, &flow)?;

    let trace = run(&policy, &sets, schema, initial, &flow, None);
    write_trace(&trace, &out_dir.join("trace.jsonl"))?;

    let mut manifest = RunManifest::new("simulate", resolved.search.rng_seed, search_config_snapshot(resolved));
    manifest.add_input(&resolved.schema_path)?;
    manifest.add_input(policy_path)?;
    manifest.add_input(flow_path)?;
    manifest.write(out_dir)?;

    let last = trace.steps.last().expect("non-empty flow");
    println!(
        "simulated {} steps; final variant: cache_exists={}, cache_size={}, data_servers={}",
        trace.len(),
        last.variant.cache_exists,
        last.variant.cache_size,
        last.variant.data_servers
    );
    Ok(())
}

/// Load one suite directory: the suite.json index when present, otherwise
/// every `aeq_*.csv` in lexicographic order.
fn load_suite(schema: &ContextSchema, dir: &Path) -> Result<AeqSuite> {
    let id = dir
        .file_name()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| dir.display().to_string());
    let index = dir.join("suite.json");
    let mut files: Vec<PathBuf> = Vec::new();
    if index.exists() {
        let text =
            fs::read_to_string(&index).map_err(|e| Error::io(index.display().to_string(), e))?;
        let doc: serde_json::Value = serde_json::from_str(&text).map_err(|e| {
            Error::parse(index.display().to_string(), e.line(), e.column(), e.to_string())
        })?;
        for aeq in doc["aeqs"].as_array().into_iter().flatten() {
            if let Some(file) = aeq["file"].as_str() {
                files.push(dir.join(file));
            }
        }
    } else {
        let entries = fs::read_dir(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(dir.display().to_string(), e))?;
            let name = entry.file_name().to_string_lossy().to_string();
            if name.starts_with("aeq_") && name.ends_with(".csv") && !name.contains(".profile.") {
                files.push(entry.path());
            }
        }
        files.sort();
    }
    if files.is_empty() {
        return Err(Error::Precondition(format!(
            "suite directory `{}` holds no AEQ flow files",
            dir.display()
        )));
    }
    let mut flows = Vec::new();
    for file in files {
        let loaded = load_flows(schema, &file)?;
        for flow in loaded {
            validate_flow(schema, &flow)?;
            flows.push(flow);
        }
    }
    Ok(AeqSuite { id, flows })
}

fn cmd_mutate(
    resolved: &Resolved,
    suite_dirs: &[PathBuf],
    plan_path: Option<&Path>,
    jobs: usize,
    out_dir: &Path,
) -> Result<()> {
    ensure_out_dir(out_dir)?;
    let schema = &resolved.schema;
    let policy_path = resolved.policy_path.as_ref().ok_or_else(|| {
        Error::Config("no policy given: pass --policy or set policy-ref in the config".into())
    })?;
    let policy = load_policy(policy_path, schema)?;
    let sets = FuzzySets::standard_for(schema);

    let plan = match plan_path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p.display().to_string(), e))?;
            serde_json::from_str::<MutantPlan>(&text).map_err(|e| {
                Error::parse(p.display().to_string(), e.line(), e.column(), e.to_string())
            })?
        }
        None => resolved.plan.clone(),
    };
    let mutants = generate_mutants(&policy, schema, &plan)?;

    let mut suites = Vec::new();
    for dir in suite_dirs {
        suites.push(load_suite(schema, dir)?);
    }

    let initial = Variant::default();
    let matrix = if jobs == 0 {
        run_experiment(schema, &policy, &sets, &mutants, &suites, &initial)?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Internal(format!("thread pool: {e}")))?;
        pool.install(|| run_experiment(schema, &policy, &sets, &mutants, &suites, &initial))?
    };

    write_file(&out_dir.join("kill_matrix.csv"), &matrix.to_csv())?;
    let summary = project_report(&matrix);
    write_file(&out_dir.join("report.txt"), &summary.to_text())?;
    write_file(&out_dir.join("report.csv"), &summary.to_csv())?;
    write_file(
        &out_dir.join("report.json"),
        &serde_json::to_string_pretty(&summary).map_err(|e| Error::Internal(e.to_string()))?,
    )?;

    let mut manifest = RunManifest::new("mutate", resolved.search.rng_seed, search_config_snapshot(resolved));
    manifest.add_input(&resolved.schema_path)?;
    manifest.add_input(policy_path)?;
    if let Some(p) = plan_path {
        manifest.add_input(p)?;
    }
    manifest.write(out_dir)?;

    print!("{}", summary.to_text());
    Ok(())
}

/// Rebuild a kill matrix from its CSV export.
fn parse_matrix_csv(path: &Path) -> Result<KillMatrix> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let display = path.display().to_string();
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(&display, 1, 1, "empty matrix file"))?;
    if header.trim() != "mutant_id,group,aeq_id,killed,divergence_step" {
        return Err(Error::parse(&display, 1, 1, "bad kill-matrix header"));
    }

    let mut mutants: Vec<MutantInfo> = Vec::new();
    let mut mutant_index: BTreeMap<String, usize> = BTreeMap::new();
    let mut aeqs: Vec<String> = Vec::new();
    let mut aeq_index: BTreeMap<String, usize> = BTreeMap::new();
    let mut entries: Vec<(usize, usize, CellOutcome)> = Vec::new();

    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::parse(&display, line_no, 1, "expected 5 fields"));
        }
        let group = match fields[1] {
            "F1" => FaultGroup::F1,
            "F2" => FaultGroup::F2,
            "F3" => FaultGroup::F3,
            "F4" => FaultGroup::F4,
            other => {
                return Err(Error::parse(
                    &display,
                    line_no,
                    2,
                    format!("unknown group `{other}`"),
                ))
            }
        };
        let row = *mutant_index.entry(fields[0].to_string()).or_insert_with(|| {
            mutants.push(MutantInfo {
                id: fields[0].to_string(),
                group,
                description: String::new(),
            });
            mutants.len() - 1
        });
        let col = *aeq_index.entry(fields[2].to_string()).or_insert_with(|| {
            aeqs.push(fields[2].to_string());
            aeqs.len() - 1
        });
        let outcome = match fields[3] {
            "1" => CellOutcome::Killed {
                divergence_step: fields[4].parse().map_err(|_| {
                    Error::parse(&display, line_no, 5, "bad divergence step")
                })?,
            },
            "0" if fields[4] == "error" => CellOutcome::Error {
                message: "recorded failure".to_string(),
            },
            "0" => CellOutcome::Survived,
            other => {
                return Err(Error::parse(
                    &display,
                    line_no,
                    4,
                    format!("bad killed flag `{other}`"),
                ))
            }
        };
        entries.push((row, col, outcome));
    }

    let mut cells = vec![vec![CellOutcome::Survived; aeqs.len()]; mutants.len()];
    for (row, col, outcome) in entries {
        cells[row][col] = outcome;
    }
    Ok(KillMatrix {
        mutants,
        aeq_ids: aeqs,
        cells,
    })
}

fn cmd_report(matrix_path: &Path, out_dir: &Path) -> Result<()> {
    ensure_out_dir(out_dir)?;
    let matrix = parse_matrix_csv(matrix_path)?;
    let summary = project_report(&matrix);
    write_file(&out_dir.join("report.txt"), &summary.to_text())?;
    write_file(&out_dir.join("report.csv"), &summary.to_csv())?;
    write_file(
        &out_dir.join("report.json"),
        &serde_json::to_string_pretty(&summary).map_err(|e| Error::Internal(e.to_string()))?,
    )?;
    print!("{}", summary.to_text());
    Ok(())
}
