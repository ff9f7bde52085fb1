//! `delaylab` command line: identity verification suites, delay spectra,
//! population simulation, spectral analysis and cross-checks.
//!
//! Exit codes: 0 = success within tolerances, 1 = verification or agreement
//! failure, 2 = usage or configuration error.

mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::ScenarioConfig;
use delaylab_core::delay::{
    build_lift, char_eval, lifted_growth, rightmost_real_root, CharFunction, DelayDescriptor,
};
use delaylab_core::matrix::DenseMatrix;
use delaylab_core::population::{simulate, write_profile_csv, SimError};
use delaylab_core::spectral::{
    classify_stability, cross_check, growth_rate_fit, CharacteristicEvaluator, SpectralReport,
    StabilityClass, CRITICAL_GROWTH_TOL,
};
use delaylab_core::system::{
    random_state_space, verify_perturbation_identities, verify_system_axioms, Grid,
};

const USAGE_ERROR: u8 = 2;
const CHECK_FAILED: u8 = 1;

#[derive(Parser)]
#[command(
    name = "delaylab",
    about = "Regular linear system calculus, delay lifting, and delayed age-structured population dynamics",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Verify the perturbation identities and the system axioms on seeded
    /// random systems; exit 0 iff every residual is within --tol.
    VerifyIdentities {
        #[arg(long, default_value_t = 20)]
        trials: usize,
        /// Maximum state dimension of the random systems.
        #[arg(long, default_value_t = 5)]
        dim: usize,
        #[arg(long, default_value_t = 2.0)]
        horizon: f64,
        #[arg(long, default_value_t = 1e-3, allow_negative_numbers = true)]
        dt: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
    },
    /// Compare the rightmost characteristic root with the growth estimate of
    /// the lifted system. Matrices use row syntax "a,b;c,d".
    DelaySpectrum {
        #[arg(long, allow_hyphen_values = true)]
        a0: String,
        #[arg(long, allow_hyphen_values = true)]
        a1: String,
        #[arg(long)]
        delay: f64,
        /// History discretization points of the lift.
        #[arg(long, default_value_t = 200)]
        history_points: usize,
        /// Real root bracket "lo,hi".
        #[arg(long, default_value = "-5,5", allow_hyphen_values = true)]
        bracket: String,
        /// Propagator step used by the growth estimate.
        #[arg(long, default_value_t = 0.1)]
        dt: f64,
    },
    /// Run a population scenario and write the trajectory CSV.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Spectral analysis only: ξ(0), dominant root, stability class, the
    /// sufficient condition. Writes a SpectralReport JSON.
    Analyze {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Analysis plus simulation: fills measured growth and agreement; exit 1
    /// when the trichotomy signs disagree.
    CrossCheck {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::VerifyIdentities { trials, dim, horizon, dt, seed, tol } => {
            cmd_verify_identities(trials, dim, horizon, dt, seed, tol)
        }
        Command::DelaySpectrum { a0, a1, delay, history_points, bracket, dt } => {
            cmd_delay_spectrum(&a0, &a1, delay, history_points, &bracket, dt)
        }
        Command::Simulate { config, out } => cmd_simulate(&config, &out),
        Command::Analyze { config, out } => cmd_analyze(&config, out.as_deref()),
        Command::CrossCheck { config, out } => cmd_cross_check(&config, out.as_deref()),
    }
}

fn usage_error(msg: &str) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(USAGE_ERROR)
}

fn cmd_verify_identities(
    trials: usize,
    dim: usize,
    horizon: f64,
    dt: f64,
    seed: u64,
    tol: f64,
) -> ExitCode {
    if trials == 0 {
        return usage_error("--trials must be at least 1");
    }
    if dim == 0 {
        return usage_error("--dim must be at least 1");
    }
    if !dt.is_finite() || dt <= 0.0 {
        return usage_error("--dt must be a positive number");
    }
    if !horizon.is_finite() || horizon <= 0.0 {
        return usage_error("--horizon must be a positive number");
    }
    if !tol.is_finite() || tol <= 0.0 {
        return usage_error("--tol must be positive");
    }
    let grid = Grid { dt, horizon };
    let reports = match verify_perturbation_identities(dim, trials, seed, grid) {
        Ok(r) => r,
        Err(e) => return usage_error(&e.to_string()),
    };
    let mut worst: Vec<(String, f64)> = Vec::new();
    let mut note = |identity: &str, value: f64| {
        if let Some(e) = worst.iter_mut().find(|(n, _)| n == identity) {
            e.1 = e.1.max(value);
        } else {
            worst.push((identity.to_string(), value));
        }
    };
    for r in &reports {
        note(&r.identity, r.relative_residual);
    }

    // Axiom suite on the same grid: fresh random system per trial.
    let half = (horizon / 2.0 / dt).round() * dt;
    for trial in 0..trials {
        let sub = seed.wrapping_add((trial as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut rng = rand_seed(sub);
        let sys = random_state_space(&mut rng, 1 + (trial % dim), 1 + trial % 2, 1 + trial % 2);
        match verify_system_axioms(&sys, half, horizon - half, dt, 1, sub) {
            Ok(rs) => {
                for r in &rs {
                    note(&r.identity, r.relative_residual);
                }
            }
            Err(e) => return usage_error(&e.to_string()),
        }
    }

    let mut all_ok = true;
    println!("{:<20} {:>14}", "identity", "max residual");
    for (name, value) in &worst {
        let ok = *value <= tol;
        all_ok &= ok;
        println!("{name:<20} {value:>14.3e} {}", if ok { "" } else { "FAIL" });
    }
    if all_ok {
        println!("PASS: all residuals within tol = {tol:e}");
        ExitCode::SUCCESS
    } else {
        println!("FAIL: residual above tol = {tol:e}");
        ExitCode::from(CHECK_FAILED)
    }
}

fn rand_seed(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand_chacha::rand_core::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}

fn parse_matrix(text: &str) -> Result<DenseMatrix, String> {
    let rows: Result<Vec<Vec<f64>>, String> = text
        .split(';')
        .map(|row| {
            row.split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|e| format!("bad entry {v:?}: {e}")))
                .collect()
        })
        .collect();
    DenseMatrix::from_rows(&rows?).map_err(|e| e.to_string())
}

fn cmd_delay_spectrum(
    a0_text: &str,
    a1_text: &str,
    delay: f64,
    history_points: usize,
    bracket_text: &str,
    dt: f64,
) -> ExitCode {
    let a0 = match parse_matrix(a0_text) {
        Ok(m) => m,
        Err(e) => return usage_error(&format!("--a0: {e}")),
    };
    let a1 = match parse_matrix(a1_text) {
        Ok(m) => m,
        Err(e) => return usage_error(&format!("--a1: {e}")),
    };
    let bracket: Vec<f64> = match bracket_text
        .split(',')
        .map(|v| v.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
    {
        Ok(b) if b.len() == 2 => b,
        _ => return usage_error("--bracket expects \"lo,hi\""),
    };
    let descriptor = match DelayDescriptor::new(a0, a1, None, delay) {
        Ok(d) => d,
        Err(e) => return usage_error(&e.to_string()),
    };
    let cf = CharFunction::new(descriptor.clone());
    let root = match rightmost_real_root(&cf, (bracket[0], bracket[1])) {
        Ok(r) => r,
        Err(e) => return usage_error(&e.to_string()),
    };

    let lift = match build_lift(&descriptor, history_points) {
        Ok(l) => l,
        Err(e) => return usage_error(&e.to_string()),
    };
    let growth = lifted_growth(&lift, dt);

    match (root, growth) {
        (Some(root), Ok(growth)) => {
            // First-order upwind lift: gap budget 2/history-points.
            let gap = (growth - root).abs();
            let gap_tol = 2.0 / history_points as f64;
            println!("rightmost real characteristic root: {root}");
            println!("lifted growth estimate ({history_points} history points): {growth}");
            println!("gap: {gap:e} (tolerance {gap_tol:e})");
            if gap <= gap_tol {
                ExitCode::SUCCESS
            } else {
                println!("FAIL: gap exceeds the documented tolerance");
                ExitCode::from(CHECK_FAILED)
            }
        }
        (None, growth) => {
            println!(
                "no real root in bracket [{}, {}] (rightmost roots complex)",
                bracket[0], bracket[1]
            );
            match growth {
                Ok(g) => println!("lifted growth estimate: {g}"),
                Err(e) => println!("lifted growth estimate unavailable: {e}"),
            }
            let probe = char_eval(&cf, num_complex::Complex64::new(0.0, 0.0));
            println!("characteristic value at 0: {}", probe.re);
            ExitCode::SUCCESS
        }
        (Some(root), Err(e)) => {
            println!("rightmost real characteristic root: {root}");
            println!("lifted growth estimate failed: {e}");
            ExitCode::from(CHECK_FAILED)
        }
    }
}

fn load_scenario(path: &Path) -> Result<config::Scenario, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("cannot read {path:?}: {e}"))?;
    let parsed: ScenarioConfig =
        serde_json::from_str(&text).map_err(|e| format!("invalid config {path:?}: {e}"))?;
    parsed.build().map_err(|e| e.to_string())
}

fn cmd_simulate(config_path: &Path, out: &Path) -> ExitCode {
    let scenario = match load_scenario(config_path) {
        Ok(s) => s,
        Err(e) => return usage_error(&e),
    };
    let traj = match simulate(
        &scenario.model,
        &scenario.history,
        scenario.t_max,
        scenario.harvest.as_ref(),
        scenario.snapshot_stride,
    ) {
        Ok(t) => t,
        Err(e @ SimError::Overflow { .. }) => {
            eprintln!("error: {e}");
            return ExitCode::from(CHECK_FAILED);
        }
        Err(e) => return usage_error(&e.to_string()),
    };

    let mut buf = Vec::new();
    if let Err(e) = traj.write_csv(&mut buf) {
        return usage_error(&format!("csv serialization failed: {e}"));
    }
    if let Err(e) = fs::write(out, &buf) {
        return usage_error(&format!("cannot write {out:?}: {e}"));
    }
    for (i, (t, profile)) in traj.snapshots.iter().enumerate() {
        let snap_path = snapshot_path(out, i);
        let mut buf = Vec::new();
        if write_profile_csv(&scenario.model, profile, &mut buf).is_ok() {
            if let Err(e) = fs::write(&snap_path, &buf) {
                return usage_error(&format!("cannot write {snap_path:?}: {e}"));
            }
        }
        let _ = t;
    }

    let growth = growth_rate_fit(&traj, scenario.discard_fraction)
        .map_or_else(|_| "n/a".to_string(), |g| g.to_string());
    println!(
        "final total population {} at t = {}, measured growth {}",
        traj.final_total(),
        traj.times.last().unwrap(),
        growth
    );
    if let Some(t) = traj.positivity_violation {
        println!("note: profile entries below -1e-12 first flagged at t = {t}");
    }
    ExitCode::SUCCESS
}

fn snapshot_path(out: &Path, index: usize) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("trajectory");
    let mut p = out.to_path_buf();
    p.set_file_name(format!("{stem}_snapshot_{index}.csv"));
    p
}

fn write_report(report: &SpectralReport, out: Option<&Path>) -> Result<(), String> {
    let json = serde_json::to_string_pretty(report).map_err(|e| e.to_string())?;
    match out {
        Some(path) => {
            let mut file = fs::File::create(path).map_err(|e| format!("cannot write {path:?}: {e}"))?;
            writeln!(file, "{json}").map_err(|e| e.to_string())
        }
        None => {
            println!("{json}");
            Ok(())
        }
    }
}

fn cmd_analyze(config_path: &Path, out: Option<&Path>) -> ExitCode {
    let scenario = match load_scenario(config_path) {
        Ok(s) => s,
        Err(e) => return usage_error(&e),
    };
    let eval = CharacteristicEvaluator::new(&scenario.model);
    let report = match classify_stability(&eval) {
        Ok(r) => r,
        Err(e) => return usage_error(&e.to_string()),
    };
    match write_report(&report, out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => usage_error(&e),
    }
}

fn cmd_cross_check(config_path: &Path, out: Option<&Path>) -> ExitCode {
    let scenario = match load_scenario(config_path) {
        Ok(s) => s,
        Err(e) => return usage_error(&e),
    };
    let report = match cross_check(
        &scenario.model,
        &scenario.history,
        scenario.t_max,
        scenario.discard_fraction,
    ) {
        Ok(r) => r,
        Err(e) => return usage_error(&e.to_string()),
    };
    let measured = report.measured_growth.expect("cross_check fills measured growth");
    let agree = match report.stability_class {
        StabilityClass::Stable => measured < 0.0,
        StabilityClass::Unstable => measured > 0.0,
        StabilityClass::Critical => measured.abs() <= CRITICAL_GROWTH_TOL,
    };
    if let Err(e) = write_report(&report, out) {
        return usage_error(&e);
    }
    if agree {
        ExitCode::SUCCESS
    } else {
        eprintln!(
            "trichotomy disagreement: class {:?} with measured growth {measured}",
            report.stability_class
        );
        ExitCode::from(CHECK_FAILED)
    }
}
