//! Command-line front end.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::harness::{self, default_budget, Experiment, ExperimentConfig, Scale};
use crate::linalg::{Matrix, RankTolerance};
use crate::palm::run_test;
use crate::perm::RowSet;
use crate::rng::{derive_seed, tag};
use crate::rowselect::{select_rows_seeded, SelectionConfig, SelectionTrace};
use crate::verify::{run_suite, CheckReport, Suite};

pub const EXIT_OTHER: i32 = 1;
pub const EXIT_PARSE: i32 = 2;
pub const EXIT_DIMENSION: i32 = 3;
pub const EXIT_UNIDENTIFIABLE: i32 = 4;
pub const EXIT_VERIFY: i32 = 5;

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Parse(_) | Error::NonFinite(_) | Error::Config(_) => EXIT_PARSE,
        Error::DimensionMismatch { .. } => EXIT_DIMENSION,
        Error::Unidentifiable => EXIT_UNIDENTIFIABLE,
        _ => EXIT_OTHER,
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "permshield",
    version,
    about = "Permutation tests with a row-selected shield for a single coefficient"
)]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Test H0: beta = 0 for the covariate in --x.
    Test(TestArgs),
    /// Run the greedy row selection and print its trace.
    SelectRows(SelectArgs),
    /// Rerun a preset simulation study.
    Reproduce(ReproduceArgs),
    /// Run a simulation described by a TOML config.
    Experiment(ExperimentArgs),
    /// Run a verification suite.
    Verify(VerifyArgs),
}

#[derive(Args, Debug, Clone)]
pub struct DesignFiles {
    /// Covariate of interest, one value per line.
    #[arg(long)]
    pub x: PathBuf,
    /// Nuisance design, one row per line.
    #[arg(long)]
    pub z: PathBuf,
    /// Skip the first non-comment line of every matrix file.
    #[arg(long)]
    pub header: bool,
}

#[derive(Args, Debug)]
pub struct TestArgs {
    /// Response, one value per line.
    #[arg(long)]
    pub y: PathBuf,
    #[command(flatten)]
    pub files: DesignFiles,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Number of permutations B.
    #[arg(long, default_value_t = 2000)]
    pub perms: usize,
    /// `auto`, `none`, or a file of 1-based row indices.
    #[arg(long, default_value = "auto")]
    pub select: String,
    #[arg(long, env = "PERMSHIELD_SEED", default_value_t = 1)]
    pub seed: u64,
    /// Greedy budget T (default 20 for p <= 15, else 30).
    #[arg(long)]
    pub budget: Option<usize>,
    /// Monte Carlo draws M for selection.
    #[arg(long, default_value_t = 2000)]
    pub mc: usize,
    /// JSON result record.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SelectArgs {
    #[command(flatten)]
    pub files: DesignFiles,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long, default_value_t = 2000)]
    pub mc: usize,
    #[arg(long, env = "PERMSHIELD_SEED", default_value_t = 1)]
    pub seed: u64,
    /// JSON trace.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ExperimentArg {
    Table1,
    Fig1,
    Power,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ScaleArg {
    Smoke,
    Desk,
    Paper,
}

#[derive(Args, Debug)]
pub struct ReproduceArgs {
    #[arg(long, value_enum)]
    pub experiment: ExperimentArg,
    #[arg(long, value_enum, default_value = "desk")]
    pub scale: ScaleArg,
    #[arg(long, env = "PERMSHIELD_SEED", default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value = "results")]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value = "results")]
    pub out_dir: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SuiteArg {
    Group,
    Oracle,
    Identity,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[arg(long, value_enum)]
    pub suite: SuiteArg,
    #[arg(long, env = "PERMSHIELD_SEED", default_value_t = 1)]
    pub seed: u64,
}

/// Whitespace- or comma-separated numbers, one row per line. Blank lines and
/// lines starting with `#` are skipped.
pub fn parse_matrix(text: &str, header: bool) -> Result<Matrix> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut skipped_header = !header;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !skipped_header {
            skipped_header = true;
            continue;
        }
        let row = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| {
                let v: f64 = t.parse().map_err(|_| {
                    Error::Parse(format!("line {}: cannot parse {t:?}", lineno + 1))
                })?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::Parse(format!(
                        "line {}: non-finite entry {t:?}",
                        lineno + 1
                    )))
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Parse(format!(
                    "line {}: {} fields, expected {}",
                    lineno + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse("no data rows".into()));
    }
    Matrix::from_rows(&rows).map_err(|e| Error::Parse(e.to_string()))
}

pub fn read_matrix(path: &Path, header: bool) -> Result<Matrix> {
    let text =
        fs::read_to_string(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    parse_matrix(&text, header).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

pub fn read_vector(path: &Path, header: bool) -> Result<Vec<f64>> {
    let m = read_matrix(path, header)?;
    if m.cols() != 1 {
        return Err(Error::Parse(format!(
            "{}: expected one column, found {}",
            path.display(),
            m.cols()
        )));
    }
    Ok(m.into_data())
}

/// 1-based row indices separated by whitespace or commas.
pub fn parse_row_set(text: &str, n: usize) -> Result<RowSet> {
    let idx = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .flat_map(|l| l.split(|c: char| c == ',' || c.is_whitespace()))
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<usize>()
                .map_err(|_| Error::Parse(format!("cannot parse row index {t:?}")))
        })
        .collect::<Result<Vec<usize>>>()?;
    RowSet::from_one_based(n, &idx).map_err(|e| Error::Parse(e.to_string()))
}

fn load_design(files: &DesignFiles) -> Result<(Vec<f64>, Matrix)> {
    let x = read_vector(&files.x, files.header)?;
    let z = read_matrix(&files.z, files.header)?;
    if z.rows() != x.len() {
        return Err(Error::DimensionMismatch {
            context: "rows of z",
            expected: x.len(),
            found: z.rows(),
        });
    }
    Ok((x, z))
}

fn selection(
    x: &[f64],
    z: &Matrix,
    alpha: f64,
    budget: Option<usize>,
    mc: usize,
    seed: u64,
) -> Result<SelectionTrace> {
    let cfg = SelectionConfig::new(
        alpha,
        budget.unwrap_or_else(|| default_budget(z.cols())),
        mc,
    );
    select_rows_seeded(
        x,
        z,
        &cfg,
        derive_seed(seed, &[tag::SELECT]),
        RankTolerance::default(),
    )
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

#[derive(Serialize)]
pub struct TestRecord {
    pub p_value: f64,
    pub alpha: f64,
    pub reject: bool,
    pub b: usize,
    pub n_greater: usize,
    pub n_ties: usize,
    pub selection: String,
    /// 1-based.
    pub row_set: Vec<usize>,
    pub collinear_draws: usize,
    pub collinearity_rate: f64,
    pub seed: u64,
    pub trace: Option<SelectionTrace>,
}

pub fn cmd_test(args: &TestArgs, out: &mut dyn Write) -> Result<TestRecord> {
    let (x, z) = load_design(&args.files)?;
    let y = read_vector(&args.y, args.files.header)?;
    if y.len() != x.len() {
        return Err(Error::DimensionMismatch {
            context: "length of y",
            expected: x.len(),
            found: y.len(),
        });
    }
    let n = x.len();
    crate::kernel::DesignContext::new(&x, &z, RankTolerance::default())?;
    let (r, trace) = match args.select.as_str() {
        "none" => (RowSet::empty(n), None),
        "auto" => {
            let t = selection(&x, &z, args.alpha, args.budget, args.mc, args.seed)?;
            (t.final_row_set.clone(), Some(t))
        }
        path => {
            let text =
                fs::read_to_string(path).map_err(|e| Error::Parse(format!("{path}: {e}")))?;
            (parse_row_set(&text, n)?, None)
        }
    };
    let res = run_test(
        &x,
        &z,
        &y,
        &r,
        args.perms,
        derive_seed(args.seed, &[tag::TEST]),
    )?;
    let record = TestRecord {
        p_value: res.p_value,
        alpha: args.alpha,
        reject: res.p_value <= args.alpha,
        b: res.b,
        n_greater: res.n_greater,
        n_ties: res.n_ties,
        selection: args.select.clone(),
        row_set: r.to_one_based(),
        collinear_draws: res.collinear_draws,
        collinearity_rate: res.collinear_draws as f64 / res.b as f64,
        seed: args.seed,
        trace,
    };
    writeln!(out, "p-value: {}", record.p_value)?;
    writeln!(
        out,
        "decision at alpha = {}: {}",
        record.alpha,
        if record.reject {
            "reject"
        } else {
            "do not reject"
        }
    )?;
    writeln!(out, "row set ({} rows): {}", r.len(), r)?;
    writeln!(
        out,
        "collinear draws: {} of {} ({:.4})",
        record.collinear_draws, record.b, record.collinearity_rate
    )?;
    if let Some(path) = &args.out {
        write_json(path, &record)?;
    }
    Ok(record)
}

pub fn cmd_select_rows(args: &SelectArgs, out: &mut dyn Write) -> Result<SelectionTrace> {
    let (x, z) = load_design(&args.files)?;
    let trace = selection(&x, &z, args.alpha, args.budget, args.mc, args.seed)?;
    writeln!(out, "shield rows: {}", trace.shield_row_set)?;
    writeln!(
        out,
        "shield collinearity probability: {:.4}",
        trace.shield_safety
    )?;
    let q: Vec<String> = trace.q_values.iter().map(|v| format!("{v:.6}")).collect();
    writeln!(out, "Q: {}", q.join(" "))?;
    writeln!(out, "t*: {}", trace.t_star)?;
    writeln!(out, "final rows: {}", trace.final_row_set)?;
    if let Some(path) = &args.out {
        write_json(path, &trace)?;
    }
    Ok(trace)
}

pub fn cmd_reproduce(
    args: &ReproduceArgs,
    out: &mut dyn Write,
) -> Result<harness::ReproduceOutput> {
    let experiment = match args.experiment {
        ExperimentArg::Table1 => Experiment::Table1,
        ExperimentArg::Fig1 => Experiment::Fig1,
        ExperimentArg::Power => Experiment::Power,
    };
    let scale = match args.scale {
        ScaleArg::Smoke => Scale::Smoke,
        ScaleArg::Desk => Scale::Desk,
        ScaleArg::Paper => Scale::Paper,
    };
    let res = harness::reproduce(experiment, scale, args.seed, Some(&args.out_dir))?;
    match experiment {
        Experiment::Table1 => write!(out, "{}", res.report.size_table())?,
        Experiment::Fig1 => {
            writeln!(out, "p   selection     collinearity  power")?;
            for row in &res.sweep {
                writeln!(
                    out,
                    "{:<3} {:<13} {:>12.4}  {:.4}",
                    row.p,
                    row.selection.name(),
                    row.collinearity,
                    row.power
                )?;
            }
        }
        Experiment::Power => write!(out, "{}", res.report.long_table())?,
    }
    for f in &res.files {
        writeln!(out, "wrote {}", f.display())?;
    }
    Ok(res)
}

pub fn cmd_experiment(args: &ExperimentArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = ExperimentConfig::from_path(&args.config)?;
    let res = harness::run_size_experiment(&cfg)?;
    let report = harness::summarize(std::slice::from_ref(&res));
    fs::create_dir_all(&args.out_dir)?;
    let id = cfg.id();
    let csv = args.out_dir.join(format!("{id}.csv"));
    harness::write_results_csv(&csv, std::slice::from_ref(&res))?;
    let json = args.out_dir.join(format!("{id}.json"));
    harness::write_sidecar_json(
        &json,
        &id,
        "config",
        cfg.master_seed,
        std::slice::from_ref(&res),
        &report,
    )?;
    writeln!(
        out,
        "{id}: median rejection {:.4} (IQR {:.4}, {} failed replicates)",
        res.summary.median_rejection, res.summary.iqr, res.summary.n_failed
    )?;
    writeln!(out, "wrote {}", csv.display())?;
    writeln!(out, "wrote {}", json.display())?;
    Ok(())
}

pub fn cmd_verify(args: &VerifyArgs, out: &mut dyn Write) -> Result<Vec<CheckReport>> {
    let suite = match args.suite {
        SuiteArg::Group => Suite::Group,
        SuiteArg::Oracle => Suite::Oracle,
        SuiteArg::Identity => Suite::Identity,
    };
    let reports = run_suite(suite, args.seed)?;
    for r in &reports {
        writeln!(
            out,
            "{} {}: {} cases, {} violations",
            if r.passed() { "PASS" } else { "FAIL" },
            r.name,
            r.cases,
            r.violations
        )?;
        for d in &r.details {
            writeln!(out, "  {d}")?;
        }
    }
    Ok(reports)
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
        {
            let _ = writeln!(err, "error: {e}");
            return EXIT_OTHER;
        }
    }
    let result = match &cli.command {
        Command::Test(a) => cmd_test(a, out).map(|_| 0),
        Command::SelectRows(a) => cmd_select_rows(a, out).map(|_| 0),
        Command::Reproduce(a) => cmd_reproduce(a, out).map(|_| 0),
        Command::Experiment(a) => cmd_experiment(a, out).map(|_| 0),
        Command::Verify(a) => cmd_verify(a, out).map(|reps| {
            if reps.iter().all(CheckReport::passed) {
                0
            } else {
                EXIT_VERIFY
            }
        }),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_formats() {
        let m = parse_matrix("# comment\n1, 2\n\n3 4\n", false).unwrap();
        assert_eq!(m.to_rows(), vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
        let h = parse_matrix("a,b\n1,2\n", true).unwrap();
        assert_eq!(h.rows(), 1);
        assert!(matches!(
            parse_matrix("1 2\n3\n", false),
            Err(Error::Parse(_))
        ));
        assert!(matches!(parse_matrix("1 x\n", false), Err(Error::Parse(_))));
        assert!(matches!(
            parse_matrix("1 inf\n", false),
            Err(Error::Parse(_))
        ));
        assert!(matches!(
            parse_matrix("# only\n", false),
            Err(Error::Parse(_))
        ));
    }

    #[test]
    fn row_set_file() {
        let r = parse_row_set("2, 3\n# x\n5\n", 6).unwrap();
        assert_eq!(r.to_one_based(), vec![2, 3, 5]);
        assert!(parse_row_set("0\n", 6).is_err());
        assert!(parse_row_set("7\n", 6).is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Parse("x".into())), EXIT_PARSE);
        assert_eq!(exit_code(&Error::Unidentifiable), EXIT_UNIDENTIFIABLE);
        let dm = Error::DimensionMismatch {
            context: "c",
            expected: 1,
            found: 2,
        };
        assert_eq!(exit_code(&dm), EXIT_DIMENSION);
        assert_eq!(exit_code(&Error::EmptyStatistics), EXIT_OTHER);
    }

    #[test]
    fn clap_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
