//! Command-line surface: argument parsing and subcommand dispatch.

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::experiment::{emit_plot_data, fmt_f64, run_experiment, write_experiment};
use clap::{Args, Parser, Subcommand, ValueEnum};
use sba_core::lever::{lever_identity_group, lever_symmetry_group, make_env};
use sba_core::metrics::{
    augmentation_impact_report, paired_permutation_test, paired_permutation_test_exhaustive,
    robustness, AugImpBudget, EvalMode, MetricReport,
};
use sba_core::population::{deserialize_population, crossplay_matrix, Population, PolicySpec};
use sba_core::rng::SeedStream;
use sba_core::verify::{gradient_suite, lemma1_suite, prop1_suite, symmetry_suite, SuiteReport};
use std::path::{Path, PathBuf};

#[derive(Parser, Debug)]
#[command(
    name = "sba-lab",
    version,
    about = "Coordination laboratory: best-response training with symmetry-breaking augmentations on the iterated lever game"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a training sweep from an experiment config.
    Train(TrainArgs),
    /// Robustness of a stored policy against a population.
    Eval(EvalArgs),
    /// Crossplay matrix of a population.
    Crossplay(CrossplayArgs),
    /// Augmentation-impact report for a population.
    Augimp(AugimpArgs),
    /// Run the executable property suites.
    Verify(VerifyArgs),
    /// Paired permutation significance test on two result files.
    Sigtest(SigtestArgs),
    /// Run the baseline and augmented sweeps and emit combined plot data.
    ReproduceFig4(Fig4Args),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Exact,
    Mc,
}

fn eval_mode(mode: ModeArg, episodes: usize) -> EvalMode {
    match mode {
        ModeArg::Exact => EvalMode::Exact,
        ModeArg::Mc => EvalMode::MonteCarlo { episodes },
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Experiment config; omitted, the reference lever experiment runs.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the config's root seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override augmentation on/off.
    #[arg(long)]
    sba: Option<bool>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Population file holding the policy to evaluate.
    #[arg(long)]
    policy: PathBuf,
    /// Member name inside the policy file (defaults to a sole member).
    #[arg(long)]
    member: Option<String>,
    /// Population file with the evaluation teammates.
    #[arg(long)]
    population: PathBuf,
    /// Experiment config supplying the game parameters.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Evaluate with augmented teammates (uniformly drawn ops).
    #[arg(long, overrides_with = "no_group")]
    group: bool,
    /// Evaluate without augmentation (default).
    #[arg(long = "no-group")]
    no_group: bool,
    #[arg(long, value_enum, default_value = "exact")]
    mode: ModeArg,
    /// Episodes per member and seat in Monte Carlo mode.
    #[arg(long, default_value_t = 1000)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
}

#[derive(Args, Debug)]
struct CrossplayArgs {
    #[arg(long)]
    population: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "exact")]
    mode: ModeArg,
    #[arg(long, default_value_t = 1000)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the matrix here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum GroupArg {
    Full,
    Identity,
}

#[derive(Args, Debug)]
struct AugimpArgs {
    #[arg(long)]
    population: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "full")]
    group: GroupArg,
    #[arg(long, value_enum, default_value = "exact")]
    mode: ModeArg,
    /// Ops sampled per policy pair in Monte Carlo mode.
    #[arg(long, default_value_t = 100)]
    phi_samples: usize,
    /// Episodes per crossplay estimate in Monte Carlo mode (exact if omitted).
    #[arg(long)]
    xp_episodes: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Cases per algebraic suite.
    #[arg(long, default_value_t = 100)]
    cases: usize,
    /// Sampled ops for the symmetry validator.
    #[arg(long, default_value_t = 1000)]
    draws: usize,
}

#[derive(Args, Debug)]
struct SigtestArgs {
    /// First result file: one number per line (a header line is skipped).
    #[arg(long)]
    a: PathBuf,
    /// Second result file, paired with the first by line index.
    #[arg(long)]
    b: PathBuf,
    #[arg(long, default_value_t = 100_000)]
    resamples: usize,
    /// Enumerate all sign patterns instead of sampling.
    #[arg(long)]
    exhaustive: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
}

#[derive(Args, Debug)]
struct Fig4Args {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the config's root seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "fig4-out")]
    out: PathBuf,
}

/// Parse and dispatch, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            err.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Crossplay(args) => cmd_crossplay(args),
        Command::Augimp(args) => cmd_augimp(args),
        Command::Verify(args) => cmd_verify(args),
        Command::Sigtest(args) => cmd_sigtest(args),
        Command::ReproduceFig4(args) => cmd_reproduce_fig4(args),
    }
}

fn load_config(path: &Option<PathBuf>) -> CliResult<(ExperimentConfig, PathBuf)> {
    match path {
        Some(p) => {
            let base = p.parent().unwrap_or(Path::new(".")).to_path_buf();
            Ok((ExperimentConfig::load(p)?, base))
        }
        None => Ok((ExperimentConfig::default(), PathBuf::from("."))),
    }
}

fn load_population(path: &Path) -> CliResult<Population> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        CliError::Validation(format!("cannot read population {}: {e}", path.display()))
    })?;
    deserialize_population(&text).map_err(CliError::validation)
}

fn write_or_print(out: &Option<PathBuf>, contents: &str) -> CliResult<()> {
    match out {
        Some(path) => {
            if let Some(parent) = path.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent).map_err(CliError::runtime)?;
                }
            }
            std::fs::write(path, contents).map_err(CliError::runtime)
        }
        None => {
            print!("{contents}");
            Ok(())
        }
    }
}

fn report_text(report: &MetricReport, format: FormatArg) -> String {
    match format {
        FormatArg::Json => {
            let mut text = serde_json::to_string_pretty(report).expect("report serialization");
            text.push('\n');
            text
        }
        FormatArg::Csv => {
            let mut out = String::from("value,stderr,sample_count,mode\n");
            out.push_str(&format!(
                "{},{},{},{}\n",
                fmt_f64(report.value),
                report.stderr.map(fmt_f64).unwrap_or_default(),
                report.sample_count.map(|n| n.to_string()).unwrap_or_default(),
                match report.mode {
                    sba_core::metrics::ReportMode::Exact => "exact",
                    sba_core::metrics::ReportMode::MonteCarlo => "monte_carlo",
                }
            ));
            out
        }
    }
}

fn cmd_train(args: TrainArgs) -> CliResult<()> {
    let (mut config, base_dir) = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        config.root_seed = seed;
    }
    if let Some(sba) = args.sba {
        config.sba = sba;
    }
    let out_dir = args
        .out
        .or_else(|| config.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    // The output directory is a runtime choice, not part of the experiment
    // identity; keep echoes byte-identical across output locations.
    config.out_dir = None;

    let outcome = run_experiment(&config, &base_dir)?;
    write_experiment(&config, &outcome, &out_dir)?;
    let last = outcome
        .aggregate
        .rows
        .last()
        .ok_or_else(|| CliError::Runtime("empty aggregate".to_string()))?;
    println!(
        "{} seeds, final epoch {}: train {} +/- {}, eval {} +/- {}",
        outcome.aggregate.num_seeds,
        last.epoch,
        fmt_f64(last.mean_train),
        fmt_f64(last.sem_train),
        fmt_f64(last.mean_eval),
        fmt_f64(last.sem_eval)
    );
    println!("outputs in {}", out_dir.display());
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> CliResult<()> {
    let (config, _) = load_config(&args.config)?;
    let env = make_env(config.env).map_err(CliError::validation)?;
    let policy_pop = load_population(&args.policy)?;
    let policy: &PolicySpec = match &args.member {
        Some(name) => policy_pop
            .members
            .iter()
            .find(|m| &m.name == name)
            .ok_or_else(|| {
                CliError::Validation(format!(
                    "no member '{name}' in {} (available: {})",
                    args.policy.display(),
                    policy_pop
                        .members
                        .iter()
                        .map(|m| m.name.as_str())
                        .collect::<Vec<_>>()
                        .join(", ")
                ))
            })?,
        None => {
            if policy_pop.members.len() == 1 {
                &policy_pop.members[0]
            } else {
                return Err(CliError::Validation(format!(
                    "{} has {} members; pick one with --member",
                    args.policy.display(),
                    policy_pop.members.len()
                )));
            }
        }
    };
    let teammates = load_population(&args.population)?;
    let group = lever_symmetry_group(&config.env);
    let group_ref = if args.group { Some(&group) } else { None };
    let report = robustness(
        &env,
        policy,
        &teammates,
        group_ref,
        eval_mode(args.mode, args.episodes),
        SeedStream::new(args.seed),
    )
    .map_err(CliError::runtime)?;
    print!("{}", report_text(&report, args.format));
    Ok(())
}

fn cmd_crossplay(args: CrossplayArgs) -> CliResult<()> {
    let (config, _) = load_config(&args.config)?;
    let env = make_env(config.env).map_err(CliError::validation)?;
    let pop = load_population(&args.population)?;
    let matrix = crossplay_matrix(
        &env,
        &pop,
        eval_mode(args.mode, args.episodes),
        SeedStream::new(args.seed),
    )
    .map_err(CliError::runtime)?;

    let text = match args.format {
        FormatArg::Csv => {
            let names: Vec<&str> = pop.members.iter().map(|m| m.name.as_str()).collect();
            let mut out = format!("policy,{}\n", names.join(","));
            for (i, row) in matrix.iter().enumerate() {
                let cells: Vec<String> = row.iter().map(|v| fmt_f64(*v)).collect();
                out.push_str(&format!("{},{}\n", names[i], cells.join(",")));
            }
            out
        }
        FormatArg::Json => {
            #[derive(serde::Serialize)]
            struct Doc<'a> {
                members: Vec<&'a str>,
                matrix: &'a Vec<Vec<f64>>,
            }
            let doc = Doc {
                members: pop.members.iter().map(|m| m.name.as_str()).collect(),
                matrix: &matrix,
            };
            let mut text = serde_json::to_string_pretty(&doc).expect("matrix serialization");
            text.push('\n');
            text
        }
    };
    write_or_print(&args.out, &text)
}

fn cmd_augimp(args: AugimpArgs) -> CliResult<()> {
    let (config, _) = load_config(&args.config)?;
    let env = make_env(config.env).map_err(CliError::validation)?;
    let pop = load_population(&args.population)?;
    let group = match args.group {
        GroupArg::Full => lever_symmetry_group(&config.env),
        GroupArg::Identity => lever_identity_group(&config.env),
    };
    let budget = AugImpBudget {
        phi_samples: args.phi_samples,
        xp_episodes: args.xp_episodes,
    };
    let mode = eval_mode(args.mode, 2.max(args.xp_episodes.unwrap_or(2)));
    let (rows, report) = augmentation_impact_report(
        &env,
        &pop,
        &group,
        mode,
        &budget,
        SeedStream::new(args.seed),
        true,
    )
    .map_err(CliError::runtime)?;

    let text = match args.format {
        FormatArg::Csv => {
            let mut out = String::from("policy_i,policy_j,phi_id,xp_base,xp_aug,abs_diff\n");
            for r in &rows {
                out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    r.policy_i,
                    r.policy_j,
                    r.phi_id,
                    fmt_f64(r.xp_base),
                    fmt_f64(r.xp_aug),
                    fmt_f64(r.abs_diff)
                ));
            }
            // Summary row: stderr rides in the xp_aug column when sampled.
            out.push_str(&format!(
                "summary,,{},,{},{}\n",
                match report.mode {
                    sba_core::metrics::ReportMode::Exact => "analytic",
                    sba_core::metrics::ReportMode::MonteCarlo => "sampled",
                },
                report.stderr.map(fmt_f64).unwrap_or_default(),
                fmt_f64(report.value)
            ));
            out
        }
        FormatArg::Json => {
            #[derive(serde::Serialize)]
            struct Doc<'a> {
                rows: &'a Vec<sba_core::metrics::AugImpRow>,
                summary: &'a MetricReport,
            }
            let mut text = serde_json::to_string_pretty(&Doc {
                rows: &rows,
                summary: &report,
            })
            .expect("augimp serialization");
            text.push('\n');
            text
        }
    };
    write_or_print(&args.out, &text)?;
    if args.out.is_some() {
        println!(
            "augimp {}{}",
            fmt_f64(report.value),
            report
                .stderr
                .map(|s| format!(" +/- {}", fmt_f64(s)))
                .unwrap_or_default()
        );
    }
    Ok(())
}

fn print_suite(report: &SuiteReport) {
    println!(
        "[{}] {}: {} ({} cases, {} failures)",
        if report.passed { "PASS" } else { "FAIL" },
        report.name,
        report.detail,
        report.cases,
        report.failures
    );
}

fn cmd_verify(args: VerifyArgs) -> CliResult<()> {
    let (config, _) = load_config(&args.config)?;
    let suites = [
        lemma1_suite(&config.env, args.cases, args.seed, 1e-9),
        prop1_suite(&config.env, args.cases, args.seed.wrapping_add(1), 1e-9),
        symmetry_suite(&config.env, args.draws, args.seed.wrapping_add(2), 1e-9),
        gradient_suite(args.cases, args.seed.wrapping_add(3), 1e-4),
    ];
    let mut all_ok = true;
    for suite in &suites {
        let report = suite.as_ref().map_err(CliError::runtime)?;
        print_suite(report);
        all_ok &= report.passed;
    }
    if all_ok {
        Ok(())
    } else {
        Err(CliError::Runtime("one or more property suites failed".to_string()))
    }
}

fn read_samples(path: &Path) -> CliResult<Vec<f64>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
    let mut values = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        match line.parse::<f64>() {
            Ok(v) => values.push(v),
            Err(_) if i == 0 => continue, // header
            Err(e) => {
                return Err(CliError::Validation(format!(
                    "{} line {}: '{line}' is not a number: {e}",
                    path.display(),
                    i + 1
                )))
            }
        }
    }
    Ok(values)
}

fn cmd_sigtest(args: SigtestArgs) -> CliResult<()> {
    let a = read_samples(&args.a)?;
    let b = read_samples(&args.b)?;
    let p = if args.exhaustive {
        paired_permutation_test_exhaustive(&a, &b).map_err(CliError::validation)?
    } else {
        paired_permutation_test(&a, &b, args.resamples, &mut SeedStream::new(args.seed).rng())
            .map_err(CliError::validation)?
    };
    match args.format {
        FormatArg::Csv => println!(
            "p_value,pairs,method\n{},{},{}",
            fmt_f64(p),
            a.len(),
            if args.exhaustive { "exhaustive" } else { "monte_carlo" }
        ),
        FormatArg::Json => println!(
            "{}",
            serde_json::json!({
                "p_value": p,
                "pairs": a.len(),
                "method": if args.exhaustive { "exhaustive" } else { "monte_carlo" },
            })
        ),
    }
    Ok(())
}

fn cmd_reproduce_fig4(args: Fig4Args) -> CliResult<()> {
    let (mut config, base_dir) = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        config.root_seed = seed;
    }
    config.out_dir = None;

    let mut br_config = config.clone();
    br_config.sba = false;
    let br = run_experiment(&br_config, &base_dir)?;
    write_experiment(&br_config, &br, &args.out.join("br"))?;

    let mut sba_config = config;
    sba_config.sba = true;
    let sba = run_experiment(&sba_config, &base_dir)?;
    write_experiment(&sba_config, &sba, &args.out.join("sba"))?;

    emit_plot_data(&br.aggregate, &sba.aggregate, &args.out.join("fig4.csv"))?;

    let last_br = br.aggregate.rows.last().expect("non-empty sweep");
    let last_sba = sba.aggregate.rows.last().expect("non-empty sweep");
    println!(
        "baseline: train {} eval {} | augmented: train {} eval {}",
        fmt_f64(last_br.mean_train),
        fmt_f64(last_br.mean_eval),
        fmt_f64(last_sba.mean_train),
        fmt_f64(last_sba.mean_eval)
    );
    println!("outputs in {}", args.out.display());
    Ok(())
}
