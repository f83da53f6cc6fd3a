use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use kcontract::certify::{DomainGrid, UScope};
use kcontract::config::load_model;
use kcontract::sim::{sample_initials, SimConfig};
use kcontract::{add_compound, mult_compound};

mod matrix_csv;
mod reproduce;
mod run;
mod svg;

use run::{run_batch, summary, write_json, RunManifest};

/// k-contraction toolkit for generalized Lurie systems.
#[derive(Parser, Debug)]
#[command(name = "kcontract", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum CompoundMode {
    Mult,
    Add,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum UScopeArg {
    Box,
    ClosedLoop,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Multiplicative or additive compound of a CSV matrix.
    Compound {
        /// Matrix CSV file (comma-separated rows).
        matrix: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long, value_enum, default_value = "mult")]
        mode: CompoundMode,
        /// Output CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Certify k-contraction of a model document.
    ///
    /// Exit status: 0 certified, 2 not certified, 1 error.
    Certify {
        config: PathBuf,
        #[arg(long)]
        k: usize,
        /// Grid points per state axis.
        #[arg(long, default_value_t = 5)]
        grid: usize,
        /// Grid points per input axis.
        #[arg(long, default_value_t = 3)]
        u_grid: usize,
        /// Additional seeded uniform state samples.
        #[arg(long, default_value_t = 0)]
        refine: usize,
        #[arg(long, value_enum)]
        u_scope: Option<UScopeArg>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory for manifest.json and certificate.json; the
        /// certificate goes to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Integrate closed-loop trajectories.
    Simulate {
        config: PathBuf,
        /// Initial condition, comma-separated.
        #[arg(long, conflicts_with = "sample", allow_hyphen_values = true)]
        x0: Option<String>,
        /// Number of seeded uniform initial conditions in the state domain.
        #[arg(long)]
        sample: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10.0)]
        tend: f64,
        #[arg(long, default_value_t = 1e-8)]
        rtol: f64,
        #[arg(long, default_value_t = 1e-10)]
        atol: f64,
        /// Track k-volumes (`2` or `k=2`).
        #[arg(long, value_parser = parse_volume)]
        volume: Option<usize>,
        /// Write SVG plots.
        #[arg(long)]
        plot: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reproduce the three-state feedback-chain example into a report directory.
    ReproduceBiochem {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 200.0)]
        tend: f64,
        #[arg(long, default_value_t = 1e-10)]
        rtol: f64,
        #[arg(long, default_value_t = 1e-12)]
        atol: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_volume(s: &str) -> Result<usize, String> {
    let v = s.strip_prefix("k=").unwrap_or(s);
    match v.parse::<usize>() {
        Ok(k) if k >= 1 => Ok(k),
        _ => Err(format!("expected an order like `2` or `k=2`, got `{s}`")),
    }
}

fn parse_point(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .with_context(|| format!("invalid coordinate '{t}' in --x0"))
        })
        .collect()
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn cmd_compound(matrix: &Path, k: usize, mode: CompoundMode, out: Option<&Path>) -> Result<()> {
    let a =
        matrix_csv::parse(&read(matrix)?).with_context(|| format!("in {}", matrix.display()))?;
    let c = match mode {
        CompoundMode::Mult => mult_compound(&a, k)?,
        CompoundMode::Add => add_compound(&a, k)?,
    };
    match out {
        Some(p) => matrix_csv::write(
            fs::File::create(p).with_context(|| format!("cannot write {}", p.display()))?,
            &c,
        ),
        None => matrix_csv::write(std::io::stdout().lock(), &c),
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_certify(
    config: &Path,
    k: usize,
    grid: usize,
    u_grid: usize,
    refine: usize,
    u_scope: Option<UScopeArg>,
    seed: u64,
    out: Option<&Path>,
) -> Result<bool> {
    if let Some(dir) = out {
        RunManifest::new("certify", Some(config), dir, Some(seed)).write()?;
    }
    let model = load_model(&read(config)?).with_context(|| format!("in {}", config.display()))?;
    let mut g = DomainGrid::new(grid)
        .with_u_points(u_grid)
        .with_refine(refine)
        .with_seed(seed);
    if let Some(s) = u_scope {
        g = g.with_u_scope(match s {
            UScopeArg::Box => UScope::Box,
            UScopeArg::ClosedLoop => UScope::ClosedLoop,
        });
    }
    let cert = model.certify(k, &g)?;
    match out {
        Some(dir) => {
            write_json(&dir.join("certificate.json"), &cert)?;
            write!(io::stdout(), "{}", summary(&cert))?;
        }
        None => {
            writeln!(io::stdout(), "{}", serde_json::to_string_pretty(&cert)?)?;
            eprint!("{}", summary(&cert));
        }
    }
    Ok(cert.is_certified())
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(
    config: &Path,
    x0: Option<&str>,
    sample: Option<usize>,
    seed: u64,
    cfg: SimConfig,
    volume: Option<usize>,
    plot: bool,
    out: &Path,
) -> Result<bool> {
    RunManifest::new("simulate", Some(config), out, Some(seed)).write()?;
    let model = load_model(&read(config)?).with_context(|| format!("in {}", config.display()))?;
    let gls = model.gls()?;
    let initials = match (x0, sample) {
        (Some(s), _) => {
            let p = parse_point(s)?;
            if p.len() != gls.n() {
                bail!(
                    "--x0 has {} coordinates, the model has n={}",
                    p.len(),
                    gls.n()
                );
            }
            vec![p]
        }
        (None, Some(count)) => sample_initials(model.state_domain(), count, seed)?,
        (None, None) => bail!("give either --x0 or --sample"),
    };
    if let Some(k) = volume {
        if k > gls.n() {
            bail!("--volume {k} exceeds the state dimension {}", gls.n());
        }
    }
    let metric = model.metric(&DomainGrid::new(3).with_seed(seed))?;
    let cfg = SimConfig { seed, ..cfg };
    let batch = run_batch(&gls, &metric, &initials, volume, &cfg);
    let reports = batch.write(out, &initials)?;
    if plot {
        fs::write(
            out.join("trajectories.svg"),
            batch.plot_states(model.name()),
        )?;
        if let Some(svg) = batch.plot_volumes(&format!("{}: log k-volume", model.name())) {
            fs::write(out.join("volumes.svg"), svg)?;
        }
    }
    let mut ok = true;
    for r in &reports {
        match (&r.error, &r.equilibrium) {
            (Some(e), _) => {
                ok = false;
                eprintln!("trajectory {}: failed: {e}", r.index);
            }
            (None, Some(e)) => {
                writeln!(io::stdout(), "trajectory {}: equilibrium {:?}", r.index, e)?
            }
            (None, None) => writeln!(
                io::stdout(),
                "trajectory {}: no equilibrium detected, x(T) = {:?}",
                r.index,
                r.final_state.as_deref().unwrap_or_default()
            )?,
        }
    }
    Ok(ok)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Compound {
            matrix,
            k,
            mode,
            out,
        } => {
            cmd_compound(&matrix, k, mode, out.as_deref())?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Certify {
            config,
            k,
            grid,
            u_grid,
            refine,
            u_scope,
            seed,
            out,
        } => {
            let certified = cmd_certify(
                &config,
                k,
                grid,
                u_grid,
                refine,
                u_scope,
                seed,
                out.as_deref(),
            )?;
            Ok(if certified {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            })
        }
        Command::Simulate {
            config,
            x0,
            sample,
            seed,
            tend,
            rtol,
            atol,
            volume,
            plot,
            out,
        } => {
            let cfg = SimConfig::new(tend).with_tolerances(rtol, atol);
            let ok = cmd_simulate(
                &config,
                x0.as_deref(),
                sample,
                seed,
                cfg,
                volume,
                plot,
                &out,
            )?;
            Ok(if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
        Command::ReproduceBiochem {
            seed,
            tend,
            rtol,
            atol,
            out,
        } => {
            let outcome = reproduce::reproduce_biochem(
                &out,
                &reproduce::ReproduceOptions {
                    seed,
                    t_end: tend,
                    rtol,
                    atol,
                },
            )?;
            writeln!(
                io::stdout(),
                "alpha_2 = {} (d1' in [0,1]), {} (d1' in [-1,1]); all trajectories converged: {}",
                outcome.alpha_paper,
                outcome.alpha_literal,
                outcome.all_converged
            )?;
            writeln!(
                io::stdout(),
                "report written to {}",
                out.join("report.md").display()
            )?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    // Usage errors exit with 1 so that 2 stays reserved for "not certified".
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::FAILURE
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(code) => code,
        // a closed pipe (`kcontract certify ... | head`) is not an error
        Err(e) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn is_broken_pipe(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.downcast_ref::<io::Error>()
            .is_some_and(|io| io.kind() == io::ErrorKind::BrokenPipe)
    })
}
