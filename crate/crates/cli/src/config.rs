//! Run configuration: the TOML file format, defaults, and validation.
//!
//! A config file has a `kind`, a `[model]` section naming a model file or
//! carrying inline model text, and an optional `[params]` section. Every
//! key is checked; unknown keys are rejected with the list of accepted
//! ones. Missing parameters take documented defaults, and every applied
//! default is recorded so the run manifest can show where each value came
//! from.
//!
//! ```text
//! kind = "simulate"            # validate | hormander | simulate | malliavin
//!                              # | ergodic | probe.moments | probe.gradient
//!                              # | probe.mixing | probe.irreducibility
//! out_dir = "runs/demo"        # optional; else $HYPOFLOW_OUT or ./out
//! threads = 2                  # optional; default all cores
//!
//! [model]
//! path = "triad.model"         # or: inline = "dim 3\n..."
//!
//! [params]
//! t = 10.0
//! dt = 0.01
//! paths = 4
//! seed = 7
//! u0 = [0.0, 0.0, 0.0]
//! ```

use std::path::{Path, PathBuf};

use hypoflow::ergodics::Observable;
use hypoflow::sde::{Scheme, SimConfig};
use hypoflow::BilinearModel;
use serde::Deserialize;

use crate::CliError;

/// Experiment selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunKind {
    Validate,
    Hormander,
    Simulate,
    Malliavin,
    Ergodic,
    ProbeMoments,
    ProbeGradient,
    ProbeMixing,
    ProbeIrreducibility,
}

pub const KIND_NAMES: [(&str, RunKind); 9] = [
    ("validate", RunKind::Validate),
    ("hormander", RunKind::Hormander),
    ("simulate", RunKind::Simulate),
    ("malliavin", RunKind::Malliavin),
    ("ergodic", RunKind::Ergodic),
    ("probe.moments", RunKind::ProbeMoments),
    ("probe.gradient", RunKind::ProbeGradient),
    ("probe.mixing", RunKind::ProbeMixing),
    ("probe.irreducibility", RunKind::ProbeIrreducibility),
];

impl RunKind {
    pub fn parse(name: &str) -> Result<RunKind, CliError> {
        KIND_NAMES
            .iter()
            .find(|(n, _)| *n == name)
            .map(|&(_, k)| k)
            .ok_or_else(|| {
                let valid: Vec<&str> = KIND_NAMES.iter().map(|(n, _)| *n).collect();
                CliError::semantic(format!(
                    "unknown kind \"{name}\"; valid kinds: {}",
                    valid.join(", ")
                ))
            })
    }

    pub fn name(self) -> &'static str {
        KIND_NAMES
            .iter()
            .find(|&&(_, k)| k == self)
            .map(|&(n, _)| n)
            .expect("every kind is listed")
    }

    /// Parameter names this kind reads; defaults for anything else are
    /// not reported in the manifest.
    fn uses(self) -> &'static [&'static str] {
        match self {
            RunKind::Validate => &[],
            RunKind::Hormander => &["n_max"],
            RunKind::Simulate => &["t", "dt", "paths", "seed", "scheme", "u0"],
            RunKind::Malliavin => &["t", "dt", "paths", "seed", "scheme", "u0", "eps_grid"],
            RunKind::Ergodic => &[
                "t",
                "dt",
                "seed",
                "scheme",
                "u0",
                "burn_in",
                "thin",
                "observables",
            ],
            RunKind::ProbeMoments => {
                &["t", "dt", "paths", "seed", "scheme", "u0", "k_grid", "eta"]
            }
            RunKind::ProbeGradient => &[
                "t",
                "dt",
                "paths",
                "seed",
                "scheme",
                "u0",
                "xi",
                "eps_fd",
                "observables",
            ],
            RunKind::ProbeMixing => &[
                "t",
                "dt",
                "paths",
                "seed",
                "scheme",
                "u0_list",
                "observables",
            ],
            RunKind::ProbeIrreducibility => &[
                "t", "dt", "paths", "seed", "scheme", "r", "eps", "n_init",
            ],
        }
    }
}

/// Raw deserialized config file.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub kind: String,
    pub out_dir: Option<PathBuf>,
    pub threads: Option<usize>,
    pub model: ModelSource,
    #[serde(default)]
    pub params: Params,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSource {
    pub path: Option<PathBuf>,
    pub inline: Option<String>,
}

/// Optional parameters; the subset that matters depends on the kind.
#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    pub t: Option<f64>,
    pub dt: Option<f64>,
    pub paths: Option<usize>,
    pub seed: Option<u64>,
    pub scheme: Option<String>,
    pub u0: Option<Vec<f64>>,
    pub burn_in: Option<f64>,
    pub thin: Option<usize>,
    pub observables: Option<Vec<String>>,
    pub eps_grid: Option<Vec<f64>>,
    pub n_max: Option<usize>,
    pub xi: Option<Vec<f64>>,
    pub eps_fd: Option<f64>,
    pub u0_list: Option<Vec<Vec<f64>>>,
    pub r: Option<f64>,
    pub eps: Option<f64>,
    pub n_init: Option<usize>,
    pub k_grid: Option<Vec<f64>>,
    pub eta: Option<f64>,
}

/// Fully resolved run: model loaded, defaults filled and recorded.
#[derive(Debug)]
pub struct RunConfig {
    pub kind: RunKind,
    pub model: BilinearModel,
    /// Where the model came from, for the manifest.
    pub model_desc: String,
    pub out_dir: PathBuf,
    pub threads: Option<usize>,
    pub t: f64,
    pub dt: f64,
    pub paths: usize,
    pub seed: u64,
    pub scheme: Scheme,
    pub u0: Vec<f64>,
    pub burn_in: f64,
    pub thin: Option<usize>,
    pub observables: Vec<String>,
    pub eps_grid: Vec<f64>,
    pub n_max: usize,
    pub xi: Vec<f64>,
    pub eps_fd: f64,
    pub u0_list: Vec<Vec<f64>>,
    pub r: f64,
    pub eps: f64,
    pub n_init: usize,
    pub k_grid: Vec<f64>,
    pub eta: f64,
    /// One `name = value` entry per parameter that fell back to a default.
    pub defaults_applied: Vec<String>,
}

impl RunConfig {
    pub fn sim_config(&self) -> SimConfig {
        SimConfig::new(self.t, self.dt)
            .with_scheme(self.scheme)
            .with_seed(self.seed)
    }
}

/// Parses and validates config text. `base_dir` anchors relative model
/// paths (the directory of the config file, or the working directory).
pub fn parse_config(text: &str, base_dir: &Path) -> Result<RunConfig, CliError> {
    let file: FileConfig = toml::from_str(text).map_err(CliError::parse)?;
    resolve(file, base_dir)
}

fn positive(name: &str, value: f64) -> Result<f64, CliError> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(CliError::semantic(format!(
            "\"{name}\" must be positive and finite, got {value}"
        )))
    }
}

/// Parses an observable name against the model dimension. Accepted names
/// are `energy` and `coordinate_<k>` with `k < dim`.
pub fn parse_observable(name: &str, dim: usize) -> Result<Observable, CliError> {
    if name == "energy" {
        return Ok(Observable::energy(dim));
    }
    if let Some(rest) = name.strip_prefix("coordinate_") {
        let k: usize = rest.parse().map_err(|_| {
            CliError::semantic(format!("bad coordinate index in observable \"{name}\""))
        })?;
        if k >= dim {
            return Err(CliError::semantic(format!(
                "observable \"{name}\" exceeds model dimension {dim}"
            )));
        }
        return Ok(Observable::coordinate(dim, k));
    }
    Err(CliError::semantic(format!(
        "unknown observable \"{name}\"; valid: energy, coordinate_<k>"
    )))
}

fn check_state_vector(name: &str, v: &[f64], dim: usize) -> Result<(), CliError> {
    if v.len() != dim {
        return Err(CliError::semantic(format!(
            "\"{name}\" has {} entries, model dimension is {dim}",
            v.len()
        )));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(CliError::semantic(format!(
            "\"{name}\" contains a non-finite entry"
        )));
    }
    Ok(())
}

/// Fills defaults, loads the model, and validates every field the kind
/// will use.
pub fn resolve(file: FileConfig, base_dir: &Path) -> Result<RunConfig, CliError> {
    let kind = RunKind::parse(&file.kind)?;

    let (model, model_desc) = match (&file.model.path, &file.model.inline) {
        (Some(path), None) => {
            let full = if path.is_absolute() {
                path.clone()
            } else {
                base_dir.join(path)
            };
            if !full.exists() {
                return Err(CliError::semantic(format!(
                    "model file {} does not exist",
                    full.display()
                )));
            }
            let model = hypoflow::format::load_model(&full).map_err(CliError::from)?;
            (model, full.display().to_string())
        }
        (None, Some(text)) => {
            let model = hypoflow::format::read_model(text).map_err(CliError::from)?;
            (model, "inline".to_string())
        }
        _ => {
            return Err(CliError::semantic(
                "[model] needs exactly one of \"path\" or \"inline\"".into(),
            ))
        }
    };
    let dim = model.dim;

    let mut defaults: Vec<(&'static str, String)> = Vec::new();
    let p = file.params;
    macro_rules! or_default {
        ($field:expr, $name:literal, $value:expr, $shown:expr) => {
            match $field {
                Some(v) => v,
                None => {
                    defaults.push(($name, format!("{} = {}", $name, $shown)));
                    $value
                }
            }
        };
        ($field:expr, $name:literal, $value:expr) => {{
            let v = $value;
            or_default!($field, $name, v, v)
        }};
    }

    let t = positive("t", or_default!(p.t, "t", 1.0))?;
    let dt = positive("dt", or_default!(p.dt, "dt", 1e-2))?;
    if dt > t {
        return Err(CliError::semantic(format!(
            "\"dt\" = {dt} exceeds the horizon \"t\" = {t}"
        )));
    }
    let paths = or_default!(p.paths, "paths", 1);
    if paths == 0 {
        return Err(CliError::semantic("\"paths\" must be at least 1".into()));
    }
    let seed = or_default!(p.seed, "seed", 0);
    let scheme_name = or_default!(p.scheme, "scheme", "semi_implicit".to_string());
    let scheme = match scheme_name.as_str() {
        "semi_implicit" => Scheme::SemiImplicit,
        "explicit_euler" => Scheme::ExplicitEuler,
        other => {
            return Err(CliError::semantic(format!(
                "unknown scheme \"{other}\"; valid: semi_implicit, explicit_euler"
            )))
        }
    };

    let u0 = or_default!(p.u0, "u0", vec![0.0; dim], "origin");
    check_state_vector("u0", &u0, dim)?;

    let burn_in = or_default!(p.burn_in, "burn_in", 0.1 * t);
    if !(0.0..t).contains(&burn_in) {
        return Err(CliError::semantic(format!(
            "\"burn_in\" = {burn_in} must lie in [0, t)"
        )));
    }
    let thin = p.thin;
    if thin == Some(0) {
        return Err(CliError::semantic("\"thin\" must be at least 1".into()));
    }

    let observables =
        or_default!(p.observables, "observables", vec!["energy".to_string()], "energy");
    if observables.is_empty() {
        return Err(CliError::semantic("\"observables\" must not be empty".into()));
    }
    for name in &observables {
        parse_observable(name, dim)?;
    }

    let eps_grid = or_default!(
        p.eps_grid,
        "eps_grid",
        vec![1e-8, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2],
        "1e-8 .. 1e-2"
    );
    if eps_grid.is_empty() || eps_grid.iter().any(|&e| !(e > 0.0)) {
        return Err(CliError::semantic(
            "\"eps_grid\" must be nonempty with positive entries".into(),
        ));
    }

    let n_max = or_default!(p.n_max, "n_max", 10);
    if n_max == 0 {
        return Err(CliError::semantic("\"n_max\" must be at least 1".into()));
    }

    let xi = or_default!(
        p.xi,
        "xi",
        {
            let mut e = vec![0.0; dim];
            e[0] = 1.0;
            e
        },
        "first coordinate direction"
    );
    check_state_vector("xi", &xi, dim)?;
    let eps_fd = positive("eps_fd", or_default!(p.eps_fd, "eps_fd", 1e-5))?;

    let u0_list = match p.u0_list {
        Some(list) => {
            if list.len() < 2 {
                return Err(CliError::semantic(
                    "\"u0_list\" needs at least two initial conditions".into(),
                ));
            }
            for v in &list {
                check_state_vector("u0_list", v, dim)?;
            }
            list
        }
        None => {
            defaults.push(("u0_list", "u0_list = origin and 5 e_1".to_string()));
            let mut far = vec![0.0; dim];
            far[0] = 5.0;
            vec![vec![0.0; dim], far]
        }
    };

    let r = positive("r", or_default!(p.r, "r", 2.0))?;
    let eps = positive("eps", or_default!(p.eps, "eps", 1.0))?;
    let n_init = or_default!(p.n_init, "n_init", 20);
    if n_init == 0 {
        return Err(CliError::semantic("\"n_init\" must be at least 1".into()));
    }

    let k_grid = or_default!(
        p.k_grid,
        "k_grid",
        (1..=10).map(|k| 2.0 * k as f64).collect::<Vec<f64>>(),
        "2, 4, .., 20"
    );
    if k_grid.is_empty() {
        return Err(CliError::semantic("\"k_grid\" must not be empty".into()));
    }
    let eta = positive("eta", or_default!(p.eta, "eta", 1e-3))?;

    let out_dir = match file.out_dir {
        Some(dir) => {
            if dir.is_absolute() {
                dir
            } else {
                base_dir.join(dir)
            }
        }
        None => default_out_dir(),
    };

    Ok(RunConfig {
        kind,
        model,
        model_desc,
        out_dir,
        threads: file.threads,
        t,
        dt,
        paths,
        seed,
        scheme,
        u0,
        burn_in,
        thin,
        observables,
        eps_grid,
        n_max,
        xi,
        eps_fd,
        u0_list,
        r,
        eps,
        n_init,
        k_grid,
        eta,
        defaults_applied: defaults
            .into_iter()
            .filter(|(name, _)| kind.uses().contains(name))
            .map(|(_, line)| line)
            .collect(),
    })
}

/// Output directory fallback: `$HYPOFLOW_OUT`, then `./out`.
pub fn default_out_dir() -> PathBuf {
    std::env::var_os("HYPOFLOW_OUT")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("out"))
}

/// Parses a comma-separated list of floats from a command-line flag.
pub fn parse_float_list(name: &str, text: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(|piece| {
            piece.trim().parse::<f64>().map_err(|_| {
                CliError::semantic(format!("\"{name}\": cannot parse \"{piece}\" as a number"))
            })
        })
        .collect()
}

/// Parses a semicolon-separated list of comma-separated vectors.
pub fn parse_vector_list(name: &str, text: &str) -> Result<Vec<Vec<f64>>, CliError> {
    text.split(';').map(|v| parse_float_list(name, v)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const TRIAD_TEXT: &str = "dim 3\nnoise_dim 2\nnu 1.0\nA\n1 0 0\n0 1 0\n0 0 1\nB\n\
        0 1 2 1\n2 1 0 -1\nsigma\n1 0 0\n0 1 0\n";

    fn inline_config(kind: &str, params: &str) -> String {
        format!(
            "kind = \"{kind}\"\n[model]\ninline = \"\"\"\n{TRIAD_TEXT}\"\"\"\n[params]\n{params}"
        )
    }

    #[test]
    fn minimal_config_fills_and_records_defaults() {
        let cfg = parse_config(&inline_config("simulate", ""), Path::new(".")).unwrap();
        assert_eq!(cfg.kind, RunKind::Simulate);
        assert_eq!(cfg.dt, 1e-2);
        assert!(cfg.defaults_applied.iter().any(|d| d.starts_with("dt = ")));
        assert!(cfg.defaults_applied.iter().any(|d| d.starts_with("seed = ")));
    }

    #[test]
    fn validate_records_no_integration_defaults() {
        let cfg = parse_config(&inline_config("validate", ""), Path::new(".")).unwrap();
        assert_eq!(cfg.kind, RunKind::Validate);
        assert!(cfg.defaults_applied.is_empty(), "{:?}", cfg.defaults_applied);
    }

    #[test]
    fn nonpositive_dt_is_rejected_by_name() {
        let err = parse_config(&inline_config("simulate", "dt = -0.1"), Path::new("."))
            .unwrap_err();
        assert!(err.message().contains("\"dt\""), "{}", err.message());
    }

    #[test]
    fn unknown_key_lists_the_valid_ones() {
        let err = parse_config(
            &inline_config("simulate", "step_size = 0.1"),
            Path::new("."),
        )
        .unwrap_err();
        let msg = err.message();
        assert!(msg.contains("step_size"), "{msg}");
        assert!(msg.contains("dt"), "should list valid keys: {msg}");
    }

    #[test]
    fn unknown_kind_lists_the_valid_ones() {
        let err = parse_config(&inline_config("simulte", ""), Path::new(".")).unwrap_err();
        assert!(err.message().contains("simulate"), "{}", err.message());
    }

    #[test]
    fn missing_model_file_is_a_semantic_error() {
        let text = "kind = \"validate\"\n[model]\npath = \"no/such/file.model\"\n";
        let err = parse_config(text, Path::new(".")).unwrap_err();
        assert!(err.message().contains("does not exist"));
    }

    #[test]
    fn wrong_u0_length_names_the_field() {
        let err = parse_config(
            &inline_config("simulate", "u0 = [1.0, 2.0]"),
            Path::new("."),
        )
        .unwrap_err();
        assert!(err.message().contains("\"u0\""));
    }

    #[test]
    fn observables_are_checked_against_the_dimension() {
        let err = parse_config(
            &inline_config("ergodic", "observables = [\"coordinate_9\"]"),
            Path::new("."),
        )
        .unwrap_err();
        assert!(err.message().contains("coordinate_9"));
        let ok = parse_config(
            &inline_config("ergodic", "observables = [\"energy\", \"coordinate_2\"]"),
            Path::new("."),
        );
        assert!(ok.is_ok());
    }
}
