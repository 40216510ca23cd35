use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use massweight::estimator::EstimateReport;
use massweight::numeric::fmt17;
use massweight::oracle::{
    check_formulas, composition_count, replicate_mc, replicate_rng, ExplicitDomain,
    FormulaCheck, OracleError, ReplicateOptions, MAX_COMPOSITIONS,
};
use massweight::synthetic::generate_sample;
use massweight::zsolver::{solve_z_with, InitialGuess, SolverOptions, ZValue};
use massweight::MassTable;
use rayon::prelude::*;
use serde_json::json;

use crate::error::{CliError, Result};
use crate::manifest::RunManifest;
use crate::{config, CompareArgs, EstimateArgs, GenerateArgs, OracleArgs, SolveArgs};

/// Absolute tolerance of the oracle comparison.
pub const ORACLE_TOLERANCE: f64 = 1e-12;

/// Largest domain the oracle command accepts.
pub const ORACLE_MAX_SIZE: usize = 6;

/// Domain masses of the oracle command are log-uniform on this range.
const ORACLE_MASS_RANGE: (f64, f64) = (1e-3, 1.0);

fn load_table(path: &Path) -> Result<MassTable> {
    let file = File::open(path).map_err(|e| CliError::input(path.display(), e))?;
    let table = MassTable::read_csv(std::io::BufReader::new(file))
        .map_err(|e| CliError::from(e).with_context(path))?;
    if table.is_empty() {
        return Err(CliError::Input(format!("{}: no draws", path.display())));
    }
    Ok(table)
}

fn output_name(path: Option<&PathBuf>) -> String {
    path.map_or_else(|| "-".to_owned(), |p| p.display().to_string())
}

fn emit(path: Option<&PathBuf>, content: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, content).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display()))),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(content.as_bytes())?;
            out.flush()?;
            Ok(())
        }
    }
}

fn pretty(value: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("JSON value serializes");
    s.push('\n');
    s
}

fn manifest_comment(manifest: &RunManifest) -> String {
    let mut buf = Vec::new();
    manifest.write_comment(&mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("manifest is UTF-8")
}

fn z_text(z: ZValue) -> String {
    match z.finite() {
        Some(z) => fmt17(z),
        None => z.to_string(),
    }
}

fn solver_options(args: &crate::SolverArgs) -> SolverOptions {
    SolverOptions {
        method: args.method,
        init: args.init.into(),
        ..SolverOptions::default()
    }
}

pub fn estimate(args: EstimateArgs) -> Result<()> {
    let table = load_table(&args.input)?;
    let mut manifest = RunManifest::new("estimate");
    manifest.input = Some(args.input.display().to_string());
    manifest.outputs.push(output_name(args.output.as_ref()));

    let report = match args.known_z {
        Some(z) => {
            manifest.parameters = json!({ "known_z": z });
            EstimateReport::known_z(&table, z)?
        }
        None => {
            let options = solver_options(&args.solver);
            manifest.method = Some(options.method);
            manifest.init = Some(options.init);
            let solution = solve_z_with(&table, &options)?;
            EstimateReport::solved(&table, &solution)
        }
    };
    emit(
        args.output.as_ref(),
        &pretty(&json!({ "manifest": manifest, "report": report })),
    )
}

pub fn solve(args: SolveArgs) -> Result<()> {
    let table = load_table(&args.input)?;
    let options = solver_options(&args.solver);
    let mut manifest = RunManifest::new("solve");
    manifest.input = Some(args.input.display().to_string());
    manifest.method = Some(options.method);
    manifest.init = Some(options.init);
    manifest.outputs.push(output_name(args.output.as_ref()));

    let solution = solve_z_with(&table, &options)?;
    let mut out = manifest_comment(&manifest);
    let _ = writeln!(out, "# case: {}", solution.case);
    let _ = writeln!(out, "# z: {}", z_text(solution.z));
    let _ = writeln!(out, "# residual: {}", fmt17(solution.residual));
    for (name, init) in [
        ("good-turing", InitialGuess::GoodTuring),
        ("ps", InitialGuess::MassOnSample),
    ] {
        let iterations = if init == options.init {
            solution.iterations
        } else {
            solve_z_with(&table, &SolverOptions { init, ..options })?.iterations
        };
        let _ = writeln!(out, "# iterations[{name}]: {iterations}");
    }
    out.push_str("k,z,phi,residual\n");
    for row in &solution.trace {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            row.k,
            fmt17(row.z),
            fmt17(row.phi),
            fmt17(row.residual)
        );
    }
    emit(args.output.as_ref(), &out)
}

pub fn compare(args: CompareArgs) -> Result<()> {
    let mut cfg = config::resolve(&args.synthetic)?;
    if cfg.expected_sampled_mass.is_none() {
        cfg = cfg.with_expected_mass()?;
    }
    let csv_path = args.out_dir.join("replicates.csv");
    let summary_path = args.out_dir.join("summary.json");

    let mut manifest = RunManifest::new("compare");
    manifest.config = Some(cfg.clone());
    manifest.seed = Some(cfg.seed);
    manifest.method = Some(args.method);
    manifest.parameters = json!({ "replicates": args.replicates });
    manifest.outputs = vec![
        csv_path.display().to_string(),
        summary_path.display().to_string(),
    ];

    let options = ReplicateOptions {
        n_draws: cfg.n_draws,
        replicates: args.replicates,
        seed: cfg.seed,
        method: args.method,
    };
    let (records, summary) = replicate_mc(&cfg.source()?, &options)?;

    let mut csv = manifest_comment(&manifest);
    csv.push_str("replicate,case,z,n_distinct,fbar_new,fbar_blue\n");
    for r in &records {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            r.replicate,
            r.case,
            z_text(r.z),
            r.n_distinct,
            fmt17(r.fbar_new),
            fmt17(r.fbar_blue)
        );
    }
    let report = pretty(&json!({
        "manifest": manifest,
        "replicates": summary.replicates,
        "n_draws": summary.n_draws,
        "new": summary.new,
        "blue": summary.blue,
        "variance_ratio": summary.variance_ratio,
        "expected_sampled_mass": cfg.expected_sampled_mass,
    }));

    fs::create_dir_all(&args.out_dir)
        .map_err(|e| CliError::input(args.out_dir.display(), e))?;
    emit(Some(&csv_path), &csv)?;
    emit(Some(&summary_path), &report)?;
    emit(None, &report)
}

/// The entry of `check` with the largest gap.
fn worst_entry(check: &FormulaCheck) -> (&'static str, f64) {
    [
        ("blue_mean", check.blue_mean),
        ("blue_cov", check.blue_cov),
        ("new_mean", check.new_mean),
        ("new_cov", check.new_cov),
    ]
    .into_iter()
    .fold(("blue_mean", f64::NEG_INFINITY), |best, cur| {
        if cur.1 > best.1 {
            cur
        } else {
            best
        }
    })
}

pub fn oracle(args: OracleArgs) -> Result<()> {
    if !(1..=ORACLE_MAX_SIZE).contains(&args.size) {
        return Err(CliError::Input(format!(
            "--size must be between 1 and {ORACLE_MAX_SIZE}, got {}",
            args.size
        )));
    }
    if args.draws == 0 || args.trials == 0 {
        return Err(CliError::Input("--draws and --trials must be positive".into()));
    }
    let count = composition_count(args.size, args.draws);
    if count > MAX_COMPOSITIONS {
        return Err(CliError::Input(format!(
            "{count} outcomes exceed the enumeration cap of {MAX_COMPOSITIONS}"
        )));
    }

    let mut manifest = RunManifest::new("oracle");
    manifest.seed = Some(args.seed);
    manifest.parameters = json!({
        "size": args.size,
        "draws": args.draws,
        "trials": args.trials,
        "mass_range": [ORACLE_MASS_RANGE.0, ORACLE_MASS_RANGE.1],
    });
    if args.flip_offdiag_sign {
        manifest.parameters["flip_offdiag_sign"] = json!(true);
    }
    manifest.outputs.push(output_name(args.output.as_ref()));

    let sign = if args.flip_offdiag_sign { -1.0 } else { 1.0 };
    let results = (0..args.trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = replicate_rng(args.seed, t);
            let (lo, hi) = ORACLE_MASS_RANGE;
            let domain = ExplicitDomain::random(&mut rng, args.size, lo, hi)?;
            let check = check_formulas(&domain, args.draws, sign)?;
            Ok((t, domain, check))
        })
        .collect::<std::result::Result<Vec<_>, OracleError>>()?;

    // A NaN gap is a failure and outranks every finite gap.
    let badness = |c: &FormulaCheck| match c.worst() {
        w if w.is_nan() => f64::INFINITY,
        w => w,
    };
    let failures = results
        .iter()
        .filter(|(_, _, c)| badness(c) > ORACLE_TOLERANCE)
        .count();
    let (trial, domain, check) = results
        .iter()
        .fold(None, |best: Option<&(u64, ExplicitDomain, FormulaCheck)>, cur| match best {
            Some(b) if badness(&cur.2) <= badness(&b.2) => Some(b),
            _ => Some(cur),
        })
        .expect("at least one trial");
    let (quantity, gap) = worst_entry(check);
    let pass = failures == 0;

    let report = json!({
        "manifest": manifest,
        "tolerance": ORACLE_TOLERANCE,
        "trials": args.trials,
        "failures": failures,
        "worst": {
            "trial": trial,
            "quantity": quantity,
            "gap": gap,
            "masses": domain.masses(),
            "fvalues": domain.fvalues(),
        },
        "pass": pass,
    });
    emit(args.output.as_ref(), &pretty(&report))?;
    if pass {
        Ok(())
    } else {
        Err(CliError::Verification(format!(
            "{failures} of {} trials exceed {ORACLE_TOLERANCE:e}; worst is trial {trial}, \
             {quantity} off by {gap:e} on masses {:?}",
            args.trials,
            domain.masses()
        )))
    }
}

pub fn generate(args: GenerateArgs) -> Result<()> {
    let cfg = config::resolve(&args.synthetic)?;
    let mut manifest = RunManifest::new("generate");
    manifest.config = Some(cfg.clone());
    manifest.seed = Some(cfg.seed);
    manifest.outputs.push(output_name(args.output.as_ref()));

    let sample = generate_sample(&cfg)?;
    let mut out = manifest_comment(&manifest);
    out.push_str("key,mass,fvalue\n");
    for r in &sample {
        let _ = writeln!(out, "{},{},{}", r.key.to_hex(), fmt17(r.mass), fmt17(r.fvalue));
    }
    emit(args.output.as_ref(), &out)
}
