//! Command-line front-end for the toolkit.
//!
//! Each subcommand loads a model, runs one experiment, and writes CSV
//! files plus a manifest into the output directory. The same experiments
//! can be described in a TOML file and executed with `run --config`.
//! Exit codes: 0 success, 2 configuration error, 3 numeric or
//! integration failure, 4 internal error.

mod config;
mod csvout;
mod errors;
mod runner;

pub use errors::CliError;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use config::{
    parse_config, parse_float_list, parse_vector_list, resolve, FileConfig, ModelSource, Params,
};

#[derive(Parser)]
#[command(
    name = "hypoflow",
    version,
    about = "Structural checks, simulation, spectra, and ergodic probes for bilinear SDEs"
)]
struct Cli {
    /// Worker threads for ensembles (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory (default: $HYPOFLOW_OUT, then ./out).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every simulation-backed subcommand.
#[derive(Args)]
struct SimArgs {
    /// Model file.
    #[arg(long)]
    model: PathBuf,
    /// Initial state, comma separated (default: the origin).
    #[arg(long)]
    u0: Option<String>,
    /// Time horizon.
    #[arg(long, alias = "T")]
    t: Option<f64>,
    /// Time step.
    #[arg(long)]
    dt: Option<f64>,
    /// Number of independent paths.
    #[arg(long)]
    paths: Option<usize>,
    /// Noise seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Check the structural conditions of a model file.
    Validate {
        #[arg(long)]
        model: PathBuf,
    },
    /// Build the bracket ladder and report span dimensions per level.
    Hormander {
        #[arg(long)]
        model: PathBuf,
        /// Maximum ladder level.
        #[arg(long)]
        n_max: Option<usize>,
    },
    /// Integrate sample paths and write the trajectories.
    Simulate {
        #[command(flatten)]
        sim: SimArgs,
        /// Integration scheme: semi_implicit or explicit_euler.
        #[arg(long)]
        scheme: Option<String>,
    },
    /// Per-path spectra of the noise response Gram matrix and the
    /// distribution of its smallest eigenvalue.
    Malliavin {
        #[command(flatten)]
        sim: SimArgs,
        /// Thresholds for the eigenvalue distribution, comma separated.
        #[arg(long)]
        eps_grid: Option<String>,
    },
    /// Long-run averages, generator residuals, and running means.
    Ergodic {
        #[command(flatten)]
        sim: SimArgs,
        /// Time discarded before sampling (default: 10% of t).
        #[arg(long)]
        burn_in: Option<f64>,
        /// Keep every k-th sample (default: fit the sample cap).
        #[arg(long)]
        thin: Option<usize>,
        /// Observables, comma separated: energy, coordinate_<k>.
        #[arg(long)]
        observables: Option<String>,
    },
    /// Statistical probes of tails, gradients, mixing, and reachability.
    Probe {
        #[command(subcommand)]
        probe: ProbeCommand,
    },
    /// Write a built-in model to a file.
    MakeModel {
        #[command(subcommand)]
        which: MakeModelCommand,
    },
    /// Execute a run described by a TOML config file.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Subcommand)]
enum ProbeCommand {
    /// Tail of the pathwise energy supremum against its predicted shape.
    Moments {
        #[command(flatten)]
        sim: SimArgs,
        /// Exceedance levels K, comma separated.
        #[arg(long)]
        k_grid: Option<String>,
        /// Rate for the empirical exponential moment.
        #[arg(long)]
        eta: Option<f64>,
    },
    /// Semigroup gradient: Jacobian estimator vs common-noise differences.
    Gradient {
        #[command(flatten)]
        sim: SimArgs,
        /// Perturbation direction, comma separated.
        #[arg(long)]
        xi: Option<String>,
        /// Finite-difference step.
        #[arg(long)]
        eps_fd: Option<f64>,
        /// Observables, comma separated.
        #[arg(long)]
        observables: Option<String>,
    },
    /// Ensemble means from several starts and their pairwise gaps.
    Mixing {
        #[command(flatten)]
        sim: SimArgs,
        /// Initial conditions, semicolon-separated comma vectors.
        #[arg(long)]
        u0_list: Option<String>,
        /// Observable for the comparison.
        #[arg(long)]
        observables: Option<String>,
    },
    /// Empirical probability of reaching a small ball at the origin.
    Irreducibility {
        #[command(flatten)]
        sim: SimArgs,
        /// Radius of the ball of start points.
        #[arg(long)]
        r: Option<f64>,
        /// Radius of the target ball.
        #[arg(long)]
        eps: Option<f64>,
        /// Number of start points.
        #[arg(long)]
        n_init: Option<usize>,
    },
}

#[derive(Subcommand)]
enum MakeModelCommand {
    /// Three-mode interaction model with zero-sum coefficients.
    Triad {
        /// Interaction coefficients, comma separated, summing to zero.
        #[arg(long, default_value = "1,1,-2")]
        c: String,
        #[arg(long, default_value_t = 1.0)]
        nu: f64,
        /// Forced coordinate axes, comma separated.
        #[arg(long, default_value = "0,1")]
        axes: String,
        /// Destination file.
        #[arg(long)]
        file: PathBuf,
    },
    /// Spectral truncation of the 2-d vorticity equation.
    Nse2d {
        /// Keep wave-vectors with |k| <= cutoff.
        #[arg(long, default_value_t = 2)]
        cutoff: u32,
        #[arg(long, default_value_t = 0.1)]
        nu: f64,
        /// Forced wave-vectors, semicolon-separated pairs like "1,0;1,1".
        #[arg(long, default_value = "1,0;1,1")]
        forced: String,
        /// Destination file.
        #[arg(long)]
        file: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("{e}");
            std::process::exit(e.exit_code());
        }
    }
}

fn init_threads(threads: Option<usize>) -> Result<(), CliError> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::semantic("\"threads\" must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::internal(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let out_dir = cli.out.clone();
    match cli.command {
        Command::MakeModel { which } => {
            init_threads(cli.threads)?;
            return make_model(which);
        }
        Command::Run { config } => {
            let text = std::fs::read_to_string(&config).map_err(|e| {
                CliError::semantic(format!("cannot read config {}: {e}", config.display()))
            })?;
            let base = config
                .parent()
                .filter(|p| !p.as_os_str().is_empty())
                .unwrap_or(Path::new("."));
            let mut run_cfg = parse_config(&text, base)?;
            if let Some(dir) = out_dir {
                run_cfg.out_dir = dir;
            }
            if cli.threads.is_some() {
                run_cfg.threads = cli.threads;
            }
            init_threads(run_cfg.threads)?;
            return execute(&run_cfg);
        }
        command => {
            init_threads(cli.threads)?;
            let file = flags_to_config(command)?;
            let mut run_cfg = resolve(file, Path::new("."))?;
            if let Some(dir) = out_dir {
                run_cfg.out_dir = dir;
            }
            run_cfg.threads = cli.threads;
            execute(&run_cfg)
        }
    }
}

fn execute(cfg: &config::RunConfig) -> Result<(), CliError> {
    let artifacts = runner::run(cfg)?;
    for line in &artifacts.summary {
        println!("{line}");
    }
    for (name, bytes) in &artifacts.files {
        println!("wrote {} ({bytes} bytes)", cfg.out_dir.join(name).display());
    }
    Ok(())
}

/// Translates subcommand flags into the same raw config a TOML file
/// yields, so both entry points share one validation and execution path.
fn flags_to_config(command: Command) -> Result<FileConfig, CliError> {
    let mut params = Params::default();
    let (kind, model) = match command {
        Command::Validate { model } => ("validate", model),
        Command::Hormander { model, n_max } => {
            params.n_max = n_max;
            ("hormander", model)
        }
        Command::Simulate { sim, scheme } => {
            params.scheme = scheme;
            ("simulate", apply_sim_args(&mut params, sim)?)
        }
        Command::Malliavin { sim, eps_grid } => {
            if let Some(text) = eps_grid {
                params.eps_grid = Some(parse_float_list("eps_grid", &text)?);
            }
            ("malliavin", apply_sim_args(&mut params, sim)?)
        }
        Command::Ergodic {
            sim,
            burn_in,
            thin,
            observables,
        } => {
            params.burn_in = burn_in;
            params.thin = thin;
            params.observables = observables.map(split_names);
            ("ergodic", apply_sim_args(&mut params, sim)?)
        }
        Command::Probe { probe } => return probe_to_config(probe),
        Command::MakeModel { .. } | Command::Run { .. } => {
            unreachable!("handled in dispatch")
        }
    };
    Ok(FileConfig {
        kind: kind.to_string(),
        out_dir: None,
        threads: None,
        model: ModelSource {
            path: Some(model),
            inline: None,
        },
        params,
    })
}

fn probe_to_config(probe: ProbeCommand) -> Result<FileConfig, CliError> {
    let mut params = Params::default();
    let (kind, model) = match probe {
        ProbeCommand::Moments { sim, k_grid, eta } => {
            if let Some(text) = k_grid {
                params.k_grid = Some(parse_float_list("k_grid", &text)?);
            }
            params.eta = eta;
            ("probe.moments", apply_sim_args(&mut params, sim)?)
        }
        ProbeCommand::Gradient {
            sim,
            xi,
            eps_fd,
            observables,
        } => {
            if let Some(text) = xi {
                params.xi = Some(parse_float_list("xi", &text)?);
            }
            params.eps_fd = eps_fd;
            params.observables = observables.map(split_names);
            ("probe.gradient", apply_sim_args(&mut params, sim)?)
        }
        ProbeCommand::Mixing {
            sim,
            u0_list,
            observables,
        } => {
            if let Some(text) = u0_list {
                params.u0_list = Some(parse_vector_list("u0_list", &text)?);
            }
            params.observables = observables.map(split_names);
            ("probe.mixing", apply_sim_args(&mut params, sim)?)
        }
        ProbeCommand::Irreducibility {
            sim,
            r,
            eps,
            n_init,
        } => {
            params.r = r;
            params.eps = eps;
            params.n_init = n_init;
            ("probe.irreducibility", apply_sim_args(&mut params, sim)?)
        }
    };
    Ok(FileConfig {
        kind: kind.to_string(),
        out_dir: None,
        threads: None,
        model: ModelSource {
            path: Some(model),
            inline: None,
        },
        params,
    })
}

fn apply_sim_args(params: &mut Params, sim: SimArgs) -> Result<PathBuf, CliError> {
    if let Some(text) = sim.u0 {
        params.u0 = Some(parse_float_list("u0", &text)?);
    }
    params.t = sim.t;
    params.dt = sim.dt;
    params.paths = sim.paths;
    params.seed = sim.seed;
    Ok(sim.model)
}

fn split_names(text: String) -> Vec<String> {
    text.split(',').map(|s| s.trim().to_string()).collect()
}

fn make_model(which: MakeModelCommand) -> Result<(), CliError> {
    let (model, file) = match which {
        MakeModelCommand::Triad { c, nu, axes, file } => {
            let c = parse_float_list("c", &c)?;
            if c.len() != 3 {
                return Err(CliError::semantic(
                    "\"c\" needs exactly three coefficients".into(),
                ));
            }
            let axes: Vec<usize> = axes
                .split(',')
                .map(|s| {
                    s.trim().parse::<usize>().map_err(|_| {
                        CliError::semantic(format!("\"axes\": cannot parse \"{s}\""))
                    })
                })
                .collect::<Result<_, _>>()?;
            let model = hypoflow::model::make_triad([c[0], c[1], c[2]], nu, &axes)?;
            (model, file)
        }
        MakeModelCommand::Nse2d {
            cutoff,
            nu,
            forced,
            file,
        } => {
            let forced: Vec<(i64, i64)> = forced
                .split(';')
                .map(|pair| -> Result<(i64, i64), CliError> {
                    let nums = parse_float_list("forced", pair)?;
                    if nums.len() != 2 || nums.iter().any(|x| x.fract() != 0.0) {
                        return Err(CliError::semantic(format!(
                            "\"forced\": \"{pair}\" is not an integer pair"
                        )));
                    }
                    Ok((nums[0] as i64, nums[1] as i64))
                })
                .collect::<Result<_, _>>()?;
            let model = hypoflow::galerkin::make_galerkin_nse2d(cutoff, nu, &forced)?;
            (model, file)
        }
    };
    if let Some(parent) = file.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(hypoflow::Error::from)?;
    }
    hypoflow::format::save_model(&model, &file)?;
    println!(
        "wrote model ({} states, {} noise directions) to {}",
        model.dim,
        model.noise_dim,
        file.display()
    );
    Ok(())
}
