//! Executes a resolved run and writes its artifacts.
//!
//! Every run produces one or more CSV files plus a `manifest.txt` sidecar
//! recording the inputs, the seed, applied defaults, the tool version,
//! the files written, and the wall time. CSV content depends only on the
//! configuration and seed, never on scheduling, so identical runs produce
//! byte-identical files.

use std::time::Instant;

use hypoflow::brackets::build_w_ladder;
use hypoflow::ergodics::{
    ergodic_average, gradient_probe, irreducibility_probe, mixing_probe, occupation_measure,
    stationarity_residual, Observable, MAX_STORED_SAMPLES,
};
use hypoflow::malliavin::{assemble_malliavin, spectral_tail};
use hypoflow::model::validate_model;
use hypoflow::sde::{moment_tail_probe, simulate, Trajectory};
use hypoflow::stats::batch_means;
use hypoflow::Error;
use nalgebra::DVector;
use rayon::prelude::*;

use crate::config::{parse_observable, RunConfig, RunKind};
use crate::csvout::{num, Table};
use crate::CliError;

/// Result of a run: files written (name, bytes) and human-readable lines
/// for standard output.
pub struct RunArtifacts {
    pub files: Vec<(String, usize)>,
    pub summary: Vec<String>,
}

pub fn run(cfg: &RunConfig) -> Result<RunArtifacts, CliError> {
    let started = Instant::now();
    std::fs::create_dir_all(&cfg.out_dir).map_err(Error::from)?;

    let (tables, summary) = match cfg.kind {
        RunKind::Validate => run_validate(cfg),
        RunKind::Hormander => run_hormander(cfg),
        RunKind::Simulate => run_simulate(cfg),
        RunKind::Malliavin => run_malliavin(cfg),
        RunKind::Ergodic => run_ergodic(cfg),
        RunKind::ProbeMoments => run_probe_moments(cfg),
        RunKind::ProbeGradient => run_probe_gradient(cfg),
        RunKind::ProbeMixing => run_probe_mixing(cfg),
        RunKind::ProbeIrreducibility => run_probe_irreducibility(cfg),
    }?;

    let mut files = Vec::new();
    for (name, table) in &tables {
        let bytes = table
            .write(&cfg.out_dir.join(name))
            .map_err(Error::from)?;
        files.push((name.clone(), bytes));
    }
    write_manifest(cfg, &files, started.elapsed().as_millis()).map_err(Error::from)?;

    Ok(RunArtifacts { files, summary })
}

fn write_manifest(
    cfg: &RunConfig,
    files: &[(String, usize)],
    wall_ms: u128,
) -> std::io::Result<()> {
    let mut lines = vec![
        format!("tool hypoflow {}", env!("CARGO_PKG_VERSION")),
        format!("kind {}", cfg.kind.name()),
        format!("model {}", cfg.model_desc),
        format!("seed {}", cfg.seed),
        format!(
            "threads {}",
            cfg.threads
                .map_or_else(|| "auto".to_string(), |n| n.to_string())
        ),
    ];
    if cfg.defaults_applied.is_empty() {
        lines.push("defaults none".to_string());
    } else {
        for d in &cfg.defaults_applied {
            lines.push(format!("default {d}"));
        }
    }
    for (name, bytes) in files {
        lines.push(format!("output {name} {bytes} bytes"));
    }
    lines.push(format!("wall_time_ms {wall_ms}"));
    std::fs::write(cfg.out_dir.join("manifest.txt"), lines.join("\n") + "\n")
}

type Tables = Vec<(String, Table)>;

fn run_validate(cfg: &RunConfig) -> Result<(Tables, Vec<String>), CliError> {
    let report = validate_model(&cfg.model);
    let mut table = Table::new(["check", "ok", "value", "detail"]);
    let mut summary = Vec::new();
    for check in &report.checks {
        table.row([
            check.name.to_string(),
            check.ok.to_string(),
            num(check.value),
            check.detail.clone(),
        ]);
        summary.push(format!(
            "{} {}: {}",
            if check.ok { "ok" } else { "FAIL" },
            check.name,
            check.detail
        ));
    }
    summary.push(format!(
        "model {}",
        if report.ok { "valid" } else { "INVALID" }
    ));
    Ok((vec![("validation.csv".to_string(), table)], summary))
}

fn run_hormander(cfg: &RunConfig) -> Result<(Tables, Vec<String>), CliError> {
    let ladder = build_w_ladder(&cfg.model, cfg.n_max);
    let mut table = Table::new(["level", "new_vectors", "span_dim", "spanning_level"]);
    let spanning = ladder
        .spanning_level
        .map_or(String::new(), |l| l.to_string());
    for level in &ladder.levels {
        table.row([
            level.level.to_string(),
            level.new_members.to_string(),
            level.span_dim.to_string(),
            spanning.clone(),
        ]);
    }
    let mut summary: Vec<String> = table.to_csv().lines().map(String::from).collect();
    summary.push(match ladder.spanning_level {
        Some(l) => format!("spanning at level {l}"),
        None => format!("no spanning through level {}", cfg.n_max),
    });
    Ok((vec![("ladder.csv".to_string(), table)], summary))
}

/// Integrates the configured ensemble, one noise stream per path index.
fn ensemble_trajectories(cfg: &RunConfig) -> Result<Vec<Trajectory>, CliError> {
    let u0 = DVector::from_vec(cfg.u0.clone());
    let sim = cfg.sim_config();
    let results: Vec<Result<Trajectory, Error>> = (0..cfg.paths)
        .into_par_iter()
        .map(|p| {
            simulate(&cfg.model, &u0, &sim.clone().with_stream(p as u64)).map_err(|e| {
                Error::PathFailed {
                    path: p,
                    source: Box::new(e),
                }
            })
        })
        .collect();
    Ok(results.into_iter().collect::<Result<Vec<_>, Error>>()?)
}

fn run_simulate(cfg: &RunConfig) -> Result<(Tables, Vec<String>), CliError> {
    let trajectories = ensemble_trajectories(cfg)?;
    let mut header = vec!["path".to_string(), "time".to_string()];
    header.extend((1..=cfg.model.dim).map(|i| format!("U_{i}")));
    let mut table = Table::new(header);
    for (p, traj) in trajectories.iter().enumerate() {
        for (m, state) in traj.states.iter().enumerate() {
            let mut row = vec![p.to_string(), num(traj.time(m))];
            row.extend(state.iter().map(|&x| num(x)));
            table.row(row);
        }
    }
    let summary = vec![format!(
        "integrated {} path(s), {} steps each, scheme {}",
        cfg.paths,
        trajectories[0].steps(),
        cfg.scheme.name()
    )];
    Ok((vec![("trajectory.csv".to_string(), table)], summary))
}

fn run_malliavin(cfg: &RunConfig) -> Result<(Tables, Vec<String>), CliError> {
    let u0 = DVector::from_vec(cfg.u0.clone());
    let sim = cfg.sim_config();

    let spectra: Vec<Result<(f64, f64), Error>> = (0..cfg.paths)
        .into_par_iter()
        .map(|p| {
            let traj = simulate(&cfg.model, &u0, &sim.clone().with_stream(p as u64))
                .map_err(|e| Error::PathFailed {
                    path: p,
                    source: Box::new(e),
                })?;
            let m = assemble_malliavin(&cfg.model, &traj)?;
            Ok((m.lambda_min(), m.lambda_max()))
        })
        .collect();
    let spectra = spectra
        .into_iter()
        .collect::<Result<Vec<_>, Error>>()?;

    let mut spectrum = Table::new(["path", "lambda_min", "lambda_max", "cond"]);
    for (p, &(lmin, lmax)) in spectra.iter().enumerate() {
        spectrum.row([p.to_string(), num(lmin), num(lmax), num(lmax / lmin)]);
    }

    let report = spectral_tail(&cfg.model, &u0, &sim, cfg.paths, &cfg.eps_grid)?;
    let exponent = report
        .tail_exponent
        .map_or(String::new(), |e| num(e));
    let mut tail = Table::new(["eps", "prob_at_least", "tail_exponent"]);
    for (e, p) in report.eps.iter().zip(&report.prob_at_least) {
        tail.row([num(*e), num(*p), exponent.clone()]);
    }

    let worst = spectra
        .iter()
        .map(|&(l, _)| l)
        .fold(f64::INFINITY, f64::min);
    let summary = vec![
        format!("smallest eigenvalue across {} path(s): {}", cfg.paths, num(worst)),
        match report.tail_exponent {
            Some(e) => format!("tail exponent estimate {}", num(e)),
            None => "tail exponent not identifiable on this grid".to_string(),
        },
    ];
    Ok((
        vec![
            ("spectrum.csv".to_string(), spectrum),
            ("tail.csv".to_string(), tail),
        ],
        summary,
    ))
}

fn run_ergodic(cfg: &RunConfig) -> Result<(Tables, Vec<String>), CliError> {
    let u0 = DVector::from_vec(cfg.u0.clone());
    let traj = simulate(&cfg.model, &u0, &cfg.sim_config())?;

    let thin = cfg.thin.unwrap_or_else(|| {
        let first = (cfg.burn_in / traj.dt).ceil() as usize;
        (traj.steps() + 1 - first.min(traj.steps()))
            .div_ceil(MAX_STORED_SAMPLES)
            .max(1)
    });
    let measure = occupation_measure(&traj, cfg.burn_in, thin)?;

    let observables: Vec<Observable> = cfg
        .observables
        .iter()
        .map(|name| parse_observable(name, cfg.model.dim))
        .collect::<Result<_, _>>()?;

    let mut summary_table = Table::new([
        "observable",
        "mean",
        "SE",
        "stationarity_residual",
        "residual_SE",
    ]);
    let mut summary = Vec::new();
    let mut runnings = Vec::new();
    for phi in &observables {
        let values: Vec<f64> = measure.samples.iter().map(|u| phi.value(u)).collect();
        let (mean, se) = batch_means(&values, hypoflow::ergodics::BATCH_COUNT);
        let (residual, residual_se) = stationarity_residual(&cfg.model, &measure, phi)?;
        summary_table.row([
            phi.name.clone(),
            num(mean),
            num(se),
            num(residual),
            num(residual_se),
        ]);
        summary.push(format!(
            "{}: mean {} (se {}), generator residual {} (se {})",
            phi.name,
            num(mean),
            num(se),
            num(residual),
            num(residual_se)
        ));
        runnings.push(ergodic_average(&traj, phi).running);
    }

    let mut header = vec!["time".to_string()];
    header.extend(observables.iter().map(|o| o.name.clone()));
    let mut running_table = Table::new(header);
    for m in 0..traj.steps() {
        let mut row = vec![num(traj.time(m + 1))];
        row.extend(runnings.iter().map(|r| num(r[m])));
        running_table.row(row);
    }

    Ok((
        vec![
            ("summary.csv".to_string(), summary_table),
            ("running.csv".to_string(), running_table),
        ],
        summary,
    ))
}

fn run_probe_moments(cfg: &RunConfig) -> Result<(Tables, Vec<String>), CliError> {
    let u0 = DVector::from_vec(cfg.u0.clone());
    let report = moment_tail_probe(
        &cfg.model,
        &u0,
        &cfg.sim_config(),
        cfg.paths,
        &cfg.k_grid,
        cfg.eta,
    )?;
    let fitted_known = report.fitted.len() == report.k_grid.len();
    let mut table = Table::new(["K", "empirical_tail", "bound_shape"]);
    for (i, (&k, &tail)) in report.k_grid.iter().zip(&report.tails).enumerate() {
        let shape = if fitted_known {
            num(report.fitted[i])
        } else {
            String::new()
        };
        table.row([num(k), num(tail), shape]);
    }
    let summary = vec![
        match report.gamma_hat {
            Some(g) => format!("fitted tail decay rate {}", num(g)),
            None => "too few exceedances to fit a decay rate".to_string(),
        },
        format!(
            "empirical exponential moment {} against reference {}",
            num(report.exp_moment),
            num(report.exp_bound)
        ),
    ];
    Ok((vec![("tails.csv".to_string(), table)], summary))
}

fn run_probe_gradient(cfg: &RunConfig) -> Result<(Tables, Vec<String>), CliError> {
    let u0 = DVector::from_vec(cfg.u0.clone());
    let xi = DVector::from_vec(cfg.xi.clone());
    let mut table = Table::new([
        "observable",
        "jacobian_estimate",
        "jacobian_se",
        "fd_estimate",
        "fd_se",
        "gap",
        "gap_se",
    ]);
    let mut summary = Vec::new();
    for name in &cfg.observables {
        let phi = parse_observable(name, cfg.model.dim)?;
        let probe = gradient_probe(
            &cfg.model,
            &u0,
            &phi,
            &xi,
            &cfg.sim_config(),
            cfg.paths,
            cfg.eps_fd,
        )?;
        table.row([
            phi.name.clone(),
            num(probe.jacobian_estimate),
            num(probe.jacobian_se),
            num(probe.fd_estimate),
            num(probe.fd_se),
            num(probe.gap),
            num(probe.gap_se),
        ]);
        summary.push(format!(
            "{}: jacobian {} vs finite difference {} (gap {} +- {})",
            phi.name,
            num(probe.jacobian_estimate),
            num(probe.fd_estimate),
            num(probe.gap),
            num(probe.gap_se)
        ));
    }
    Ok((vec![("gradient.csv".to_string(), table)], summary))
}

fn run_probe_mixing(cfg: &RunConfig) -> Result<(Tables, Vec<String>), CliError> {
    let phi = parse_observable(&cfg.observables[0], cfg.model.dim)?;
    let u0s: Vec<DVector<f64>> = cfg
        .u0_list
        .iter()
        .map(|v| DVector::from_vec(v.clone()))
        .collect();
    let report = mixing_probe(&cfg.model, &u0s, &phi, &cfg.sim_config(), cfg.paths)?;

    let mut table = Table::new([
        "i", "j", "mean_i", "se_i", "mean_j", "se_j", "gap", "gap_se",
    ]);
    let mut summary = Vec::new();
    for i in 0..u0s.len() {
        for j in (i + 1)..u0s.len() {
            table.row([
                i.to_string(),
                j.to_string(),
                num(report.means[i]),
                num(report.standard_errors[i]),
                num(report.means[j]),
                num(report.standard_errors[j]),
                num(report.gaps[(i, j)]),
                num(report.gap_errors[(i, j)]),
            ]);
            summary.push(format!(
                "{} gap between start {i} and {j}: {} +- {}",
                phi.name,
                num(report.gaps[(i, j)]),
                num(report.gap_errors[(i, j)])
            ));
        }
    }
    Ok((vec![("mixing.csv".to_string(), table)], summary))
}

fn run_probe_irreducibility(cfg: &RunConfig) -> Result<(Tables, Vec<String>), CliError> {
    let report = irreducibility_probe(
        &cfg.model,
        cfg.r,
        cfg.eps,
        &cfg.sim_config(),
        cfg.paths,
        cfg.n_init,
    )?;
    let mut header = vec!["point".to_string(), "probability".to_string()];
    header.extend((1..=cfg.model.dim).map(|i| format!("u_{i}")));
    let mut table = Table::new(header);
    for (i, (u0, prob)) in report.points.iter().enumerate() {
        let mut row = vec![i.to_string(), num(*prob)];
        row.extend(u0.iter().map(|&x| num(x)));
        table.row(row);
    }
    let summary = vec![format!(
        "minimum hit probability {} over {} start points ({} with zero hits)",
        num(report.min_probability),
        report.points.len(),
        report.zero_hit_points
    )];
    Ok((vec![("irreducibility.csv".to_string(), table)], summary))
}
