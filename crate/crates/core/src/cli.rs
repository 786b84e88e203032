//! Command-line front end. [`execute`] does the work so it can be tested
//! without spawning a process.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::equilibrium::{break_points, find_equilibria_grid, kl_minimizing_certificate};
use crate::error::Error;
use crate::fmt::{num, nums};
use crate::learning::{cycle_stats, simulate};
use crate::model::{check_generic, kl_profile, misspecification_level, Contract, ContractInstance};
use crate::optimal::optimal_contract;
use crate::scenarios::{
    divergence_report, game_to_contract, make_divergence_instance, make_unhappy_principal, round_game,
    unhappy_bounds, verify_reduction, GameMatrices, Specification, UnhappyParams, DEFAULT_KAPPA,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommandOutcome {
    pub exit_code: i32,
    pub artifacts: Vec<PathBuf>,
    pub summary: String,
}

#[derive(Debug, Parser)]
#[command(name = "berk-nash", version, about = "Berk-Nash equilibria and optimal contracts for misspecified agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check an instance file and report its shape and genericity.
    Validate {
        file: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// KL divergence of every (belief, action) pair.
    Kl {
        file: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Break points of the best-response correspondence.
    Breakpoints {
        file: PathBuf,
        /// Contract used for the region actions (zero contract if omitted).
        #[arg(long)]
        contract: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Grid search for ε-Berk-Nash equilibria under a fixed contract.
    Equilibria {
        file: PathBuf,
        #[arg(long)]
        contract: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        grid: usize,
        #[arg(long, default_value_t = 1e-6)]
        eps: f64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Revenue-optimal contract for a two-action instance.
    Solve {
        file: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Myopic Bayesian learning under a fixed contract.
    Simulate {
        file: PathBuf,
        #[arg(long)]
        contract: PathBuf,
        #[arg(short = 'T', long = "rounds")]
        rounds: usize,
        #[arg(long)]
        seed: u64,
        /// Trajectory CSV; a JSON summary is written next to it.
        #[arg(long, default_value = "out/trajectory.csv")]
        out: PathBuf,
    },
    /// Write one of the named instances.
    Scenario {
        #[command(subcommand)]
        which: Scenario,
    },
    /// Build the contract instance encoding an integer bimatrix game.
    Reduce {
        #[arg(long)]
        game: PathBuf,
        #[arg(long)]
        eps_prime: f64,
        /// Round a real-valued game first with step eps_star / kappa.
        #[arg(long)]
        eps_star: Option<f64>,
        #[arg(long, default_value_t = DEFAULT_KAPPA)]
        kappa: f64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
enum Scenario {
    /// Revenue-loss instance.
    Unhappy {
        #[arg(long)]
        p: f64,
        #[arg(long)]
        c: f64,
        #[arg(long)]
        delta: f64,
        /// Emit the correctly specified variant.
        #[arg(long)]
        correct: bool,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Three-action instance whose action frequencies never settle.
    Divergence {
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

/// Failure inside a command: I/O, parse or domain error. Exit code 1.
#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error(transparent)]
    Domain(#[from] Error),
}

type CliResult<T> = std::result::Result<T, CliError>;

struct Run {
    artifacts: Vec<PathBuf>,
    summary: Vec<String>,
}

impl Run {
    fn new() -> Self {
        Self {
            artifacts: Vec::new(),
            summary: Vec::new(),
        }
    }

    fn line(&mut self, s: impl Into<String>) {
        self.summary.push(s.into());
    }

    fn write(&mut self, path: PathBuf, contents: &str) -> CliResult<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.to_path_buf(), source })?;
        }
        fs::write(&path, contents).map_err(|source| CliError::Io { path: path.clone(), source })?;
        self.line(format!("wrote {}", path.display()));
        self.artifacts.push(path);
        Ok(())
    }

    fn write_json(&mut self, path: PathBuf, value: &impl Serialize) -> CliResult<()> {
        let text = serde_json::to_string_pretty(value).expect("artifact serializes");
        self.write(path, &text)
    }
}

fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

fn load_instance(path: &Path) -> CliResult<ContractInstance> {
    Ok(ContractInstance::from_json(&read(path)?)?)
}

fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    serde_json::from_str(&read(path)?).map_err(|source| CliError::Json { path: path.to_path_buf(), source })
}

fn load_contract(path: &Path, inst: &ContractInstance) -> CliResult<Contract> {
    let c: Contract = load_json(path)?;
    if c.len() != inst.n_rewards() {
        return Err(Error::DimensionMismatch(format!(
            "contract has {} payments for {} rewards",
            c.len(),
            inst.n_rewards()
        ))
        .into());
    }
    Ok(c)
}

fn apply_thread_cap() {
    if let Some(n) = std::env::var("BERK_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if n > 0 {
            // Only the first call in a process can set the global pool.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

/// Runs one command. `argv` excludes the program name.
pub fn execute<S: AsRef<str>>(argv: &[S]) -> CommandOutcome {
    let args = std::iter::once("berk-nash").chain(argv.iter().map(|s| s.as_ref()));
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            return CommandOutcome {
                exit_code: code,
                artifacts: Vec::new(),
                summary: e.render().to_string(),
            };
        }
    };
    apply_thread_cap();
    let mut run = Run::new();
    match dispatch(cli.command, &mut run) {
        Ok(()) => CommandOutcome {
            exit_code: 0,
            artifacts: run.artifacts,
            summary: run.summary.join("\n"),
        },
        Err(e) => {
            // A failed command leaves nothing behind that it claimed.
            for p in &run.artifacts {
                let _ = fs::remove_file(p);
            }
            CommandOutcome {
                exit_code: 1,
                artifacts: Vec::new(),
                summary: format!("error: {e}"),
            }
        }
    }
}

fn dispatch(cmd: Command, run: &mut Run) -> CliResult<()> {
    match cmd {
        Command::Validate { file, out } => validate(&file, &out, run),
        Command::Kl { file, out } => kl(&file, &out, run),
        Command::Breakpoints { file, contract, out } => breakpoints(&file, contract.as_deref(), &out, run),
        Command::Equilibria {
            file,
            contract,
            grid,
            eps,
            out,
        } => equilibria(&file, &contract, grid, eps, &out, run),
        Command::Solve { file, out } => solve(&file, &out, run),
        Command::Simulate {
            file,
            contract,
            rounds,
            seed,
            out,
        } => simulate_cmd(&file, &contract, rounds, seed, &out, run),
        Command::Scenario {
            which: Scenario::Unhappy {
                p,
                c,
                delta,
                correct,
                out,
            },
        } => unhappy(UnhappyParams { p, c, delta }, correct, &out, run),
        Command::Scenario {
            which: Scenario::Divergence { out },
        } => divergence(&out, run),
        Command::Reduce {
            game,
            eps_prime,
            eps_star,
            kappa,
            out,
        } => reduce(&game, eps_prime, eps_star, kappa, &out, run),
    }
}

fn validate(file: &Path, out: &Path, run: &mut Run) -> CliResult<()> {
    let inst = load_instance(file)?;
    let generic = if inst.n_actions() == 2 { Some(check_generic(&inst)?) } else { None };
    let level = misspecification_level(&inst);
    run.line(format!(
        "valid instance: {} actions, {} rewards, {} beliefs",
        inst.n_actions(),
        inst.n_rewards(),
        inst.n_beliefs()
    ));
    run.line(format!("misspecification level: {}", num(level)));
    if let Some(g) = &generic {
        run.line(format!("generic: {} ({} violations)", g.pass, g.violations.len()));
    }
    run.write_json(
        out.join("validation.json"),
        &json!({
            "valid": true,
            "n_actions": inst.n_actions(),
            "n_rewards": inst.n_rewards(),
            "n_beliefs": inst.n_beliefs(),
            "misspecification_level": if level.is_finite() { json!(level) } else { json!("inf") },
            "genericity": generic,
        }),
    )
}

fn kl(file: &Path, out: &Path, run: &mut Run) -> CliResult<()> {
    let inst = load_instance(file)?;
    let profiles = (0..inst.n_beliefs()).map(|b| kl_profile(&inst, b)).collect::<Result<Vec<_>, _>>()?;
    run.line(format!("KL(F_a || B_a) in nats; actions {:?}", inst.actions().names()));
    for p in &profiles {
        run.line(format!("  {}: {}", p.belief_name, nums(&p.kl_by_action)));
    }
    run.write_json(out.join("kl.json"), &profiles)
}

fn breakpoints(file: &Path, contract: Option<&Path>, out: &Path, run: &mut Run) -> CliResult<()> {
    let inst = load_instance(file)?;
    let p = match contract {
        Some(path) => load_contract(path, &inst)?,
        None => Contract::zero(inst.n_rewards()),
    };
    let diag = break_points(&inst, &p)?;
    run.line(format!("break points: {}", nums(&diag.break_points)));
    let names = inst.actions().names();
    let regions: Vec<&str> = diag.region_actions.iter().map(|&a| names[a].as_str()).collect();
    run.line(format!("region actions: {regions:?}"));
    if !diag.reliable {
        run.line("warning: instance is not generic; diagram is best effort");
    }
    for w in &diag.warnings {
        run.line(format!("warning: {w}"));
    }
    run.write_json(out.join("breakpoints.json"), &diag)
}

fn equilibria(file: &Path, contract: &Path, grid: usize, eps: f64, out: &Path, run: &mut Run) -> CliResult<()> {
    let inst = load_instance(file)?;
    let p = load_contract(contract, &inst)?;
    let certs = find_equilibria_grid(&inst, &p, grid, eps)?;
    run.line(format!("{} certificates valid at eps = {} on a {grid}-step grid", certs.len(), num(eps)));
    for c in certs.iter().take(10) {
        run.line(format!("  alpha {} mu {}", nums(c.alpha.probs()), nums(c.mu.probs())));
    }
    if certs.len() > 10 {
        run.line(format!("  ... {} more", certs.len() - 10));
    }
    run.write_json(out.join("equilibria.json"), &certs)
}

fn solve(file: &Path, out: &Path, run: &mut Run) -> CliResult<()> {
    let inst = load_instance(file)?;
    let rep = optimal_contract(&inst)?;
    run.line(format!("optimal revenue: {}", num(rep.revenue)));
    run.line(format!("contract: {}", nums(rep.contract.payments())));
    run.line(format!(
        "alpha {} mu {} (certificate valid: {})",
        nums(rep.certificate.alpha.probs()),
        nums(rep.certificate.mu.probs()),
        rep.certificate.valid
    ));
    run.write(out.join("solve.json"), &rep.to_json())
}

fn simulate_cmd(file: &Path, contract: &Path, rounds: usize, seed: u64, out: &Path, run: &mut Run) -> CliResult<()> {
    let inst = load_instance(file)?;
    let p = load_contract(contract, &inst)?;
    let traj = simulate(&inst, &p, rounds, seed)?;
    let freq = traj.final_frequency();
    run.line(format!("{} rounds, seed {seed}, {} switches", traj.len(), traj.switch_times.len()));
    run.line(format!("final frequency: {}", nums(freq.probs())));
    run.line(format!("final posterior: {}", nums(&traj.final_log_posterior.probabilities())));

    let stats = cycle_stats(&traj).ok();
    let cycles = if inst.n_actions() == 3 { divergence_report(&traj).ok() } else { None };
    if let Some(c) = &cycles {
        run.line(format!(
            "switch direction a_w -> a_(w-1): {}; log2-ratio threshold at t = {:?}",
            c.directions_ok, c.threshold_time
        ));
        if let Some(g) = c.min_growth_after_threshold {
            run.line(format!("min block growth ratio past threshold: {}", num(g)));
        }
        run.line(format!("a0 frequency oscillation over second half: {}", num(c.a0_oscillation)));
    }
    let certificate = if inst.n_actions() == 2 {
        let cert = kl_minimizing_certificate(&inst, &p, &freq, 0.05)?;
        run.line(format!(
            "final frequency with KL-minimizing posterior: valid at eps 0.05 = {} (optimality {})",
            cert.valid,
            num(cert.residuals.optimality)
        ));
        Some(cert)
    } else {
        None
    };

    run.write(out.to_path_buf(), &traj.to_csv(inst.actions().names()))?;
    run.write_json(
        out.with_extension("json"),
        &json!({
            "seed": traj.seed,
            "rng": traj.rng,
            "rounds": traj.len(),
            "switch_times": traj.switch_times,
            "final_frequency": freq,
            "final_log_posterior": traj.final_log_posterior,
            "cycle_stats": stats,
            "cycle_report": cycles,
            "certificate": certificate,
        }),
    )
}

fn unhappy(params: UnhappyParams, correct: bool, out: &Path, run: &mut Run) -> CliResult<()> {
    params.validate()?;
    let spec = if correct { Specification::Correct } else { Specification::Misspecified };
    let inst = make_unhappy_principal(&params, spec)?;
    let bounds = unhappy_bounds(&params);
    let cor = optimal_contract(&make_unhappy_principal(&params, Specification::Correct)?)?;
    let mis = optimal_contract(&make_unhappy_principal(&params, Specification::Misspecified)?)?;
    let ratio = cor.revenue / mis.revenue;
    run.line(format!(
        "closed form: correct {}, misspecified {}, ratio {}",
        num(bounds.correct_revenue),
        num(bounds.misspecified_revenue),
        num(bounds.gap_ratio)
    ));
    run.line(format!(
        "solved: correct {}, misspecified {}, gap ratio {}",
        num(cor.revenue),
        num(mis.revenue),
        num(ratio)
    ));
    let name = if correct { "unhappy_correct.json" } else { "unhappy_misspecified.json" };
    run.write(out.join(name), &inst.to_json())?;
    run.write_json(
        out.join("unhappy_bounds.json"),
        &json!({
            "params": params,
            "bounds": bounds,
            "solved_correct_revenue": cor.revenue,
            "solved_misspecified_revenue": mis.revenue,
            "solved_gap_ratio": ratio,
        }),
    )
}

fn divergence(out: &Path, run: &mut Run) -> CliResult<()> {
    let (inst, p) = make_divergence_instance();
    run.line("three zero-cost actions; agent picks the action whose predecessor belief is least likely");
    run.write(out.join("divergence_instance.json"), &inst.to_json())?;
    run.write_json(out.join("divergence_contract.json"), &p)
}

fn reduce(game: &Path, eps_prime: f64, eps_star: Option<f64>, kappa: f64, out: &Path, run: &mut Run) -> CliResult<()> {
    let raw: GameMatrices = load_json(game)?;
    let g = GameMatrices::new(raw.y, raw.z)?;
    let tilde = match eps_star {
        Some(e) => round_game(&g, e, kappa)?,
        None => g,
    };
    let red = game_to_contract(&tilde, eps_prime)?;
    let rep = verify_reduction(&red, &tilde, eps_prime)?;
    run.line(format!(
        "n = {}, k = {}, e_tilde = {}, {} rewards",
        tilde.n(),
        red.k,
        num(red.e_tilde),
        red.instance.n_rewards()
    ));
    run.line(format!(
        "max |V - Y| = {}, max |KL - Z| = {}, pass at eps' = {}: {}",
        num(rep.max_utility_deviation),
        num(rep.max_kl_deviation),
        num(eps_prime),
        rep.pass
    ));
    run.write(out.join("reduction.json"), &red.to_json())?;
    run.write(out.join("reduction_instance.json"), &red.instance.to_json())?;
    run.write_json(out.join("reduction_contract.json"), &red.contract)?;
    run.write_json(out.join("reduction_game.json"), &tilde)?;
    run.write_json(out.join("reduction_check.json"), &rep)
}
