//! Plain-text serialization of [`BilinearModel`].
//!
//! The format is line oriented. `#` starts a comment, blank lines are
//! ignored. Three header lines (in any order) give the scalars, then three
//! sections carry the arrays:
//!
//! ```text
//! dim 3
//! noise_dim 2
//! nu 1.0
//! A            # dim rows of dim numbers, row-major
//! 1 0 0
//! 0 1 0
//! 0 0 1
//! B            # one "i j k value" line per nonzero, zero-based indices
//! 0 1 2 1
//! 2 1 0 -1
//! sigma        # noise_dim rows of dim numbers; row r is column r of sigma
//! 1 0 0
//! 0 1 0
//! ```
//!
//! All three headers must appear before the first section. Floats are
//! written with Rust's shortest round-trip formatting, so write followed by
//! read reproduces the model exactly.

use nalgebra::DMatrix;

use crate::error::Error;
use crate::model::BilinearModel;
use crate::tensor::BilinearTensor;
use crate::Result;

/// Renders a model in the format above.
pub fn write_model(model: &BilinearModel) -> String {
    let mut out = String::new();
    out.push_str(&format!("dim {}\n", model.dim));
    out.push_str(&format!("noise_dim {}\n", model.noise_dim));
    out.push_str(&format!("nu {}\n", model.nu));
    out.push_str("A\n");
    for i in 0..model.dim {
        let row: Vec<String> = (0..model.dim).map(|j| model.a[(i, j)].to_string()).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out.push_str("B\n");
    for (i, j, k, v) in model.b.nonzeros() {
        out.push_str(&format!("{i} {j} {k} {v}\n"));
    }
    out.push_str("sigma\n");
    for c in 0..model.noise_dim {
        let col: Vec<String> = (0..model.dim).map(|i| model.sigma[(i, c)].to_string()).collect();
        out.push_str(&col.join(" "));
        out.push('\n');
    }
    out
}

/// Parses the format above.
///
/// ```
/// use hypoflow::format::{read_model, write_model};
/// use hypoflow::model::make_triad;
///
/// let m = make_triad([1.0, 1.0, -2.0], 0.75, &[0, 1]).unwrap();
/// let round = read_model(&write_model(&m)).unwrap();
/// assert_eq!(round.a, m.a);
/// assert_eq!(round.b, m.b);
/// assert_eq!(round.sigma, m.sigma);
/// assert_eq!(round.nu, m.nu);
/// ```
pub fn read_model(text: &str) -> Result<BilinearModel> {
    let parse_err = |line: usize, message: String| Error::Parse { line, message };

    // Strip comments, keep (1-based line number, tokens).
    let lines: Vec<(usize, Vec<&str>)> = text
        .lines()
        .enumerate()
        .map(|(idx, raw)| {
            let body = raw.split('#').next().unwrap_or("");
            (idx + 1, body.split_whitespace().collect::<Vec<_>>())
        })
        .filter(|(_, toks)| !toks.is_empty())
        .collect();

    let mut dim: Option<usize> = None;
    let mut noise_dim: Option<usize> = None;
    let mut nu: Option<f64> = None;
    let mut pos = 0;

    while pos < lines.len() {
        let (ln, toks) = &lines[pos];
        match toks[0] {
            "dim" | "noise_dim" => {
                if toks.len() != 2 {
                    return Err(parse_err(*ln, format!("expected `{} <count>`", toks[0])));
                }
                let val: usize = toks[1]
                    .parse()
                    .map_err(|_| parse_err(*ln, format!("invalid count `{}`", toks[1])))?;
                if toks[0] == "dim" {
                    dim = Some(val);
                } else {
                    noise_dim = Some(val);
                }
                pos += 1;
            }
            "nu" => {
                if toks.len() != 2 {
                    return Err(parse_err(*ln, "expected `nu <value>`".into()));
                }
                nu = Some(
                    toks[1]
                        .parse()
                        .map_err(|_| parse_err(*ln, format!("invalid number `{}`", toks[1])))?,
                );
                pos += 1;
            }
            "A" | "B" | "sigma" => break,
            other => {
                return Err(parse_err(
                    *ln,
                    format!("unexpected `{other}`; expected dim, noise_dim, nu, A, B or sigma"),
                ))
            }
        }
    }

    let last_line = lines.last().map(|(ln, _)| *ln).unwrap_or(0);
    let dim = dim.ok_or_else(|| parse_err(last_line, "missing `dim` header".into()))?;
    let noise_dim =
        noise_dim.ok_or_else(|| parse_err(last_line, "missing `noise_dim` header".into()))?;
    let nu = nu.ok_or_else(|| parse_err(last_line, "missing `nu` header".into()))?;

    let mut a: Option<DMatrix<f64>> = None;
    let mut b: Option<BilinearTensor> = None;
    let mut sigma: Option<DMatrix<f64>> = None;

    let number_row = |ln: usize, toks: &[&str], expect: usize| -> Result<Vec<f64>> {
        if toks.len() != expect {
            return Err(parse_err(
                ln,
                format!("expected {expect} numbers, found {}", toks.len()),
            ));
        }
        toks.iter()
            .map(|t| {
                t.parse()
                    .map_err(|_| parse_err(ln, format!("invalid number `{t}`")))
            })
            .collect()
    };

    while pos < lines.len() {
        let (ln, toks) = &lines[pos];
        match toks[0] {
            "A" => {
                if toks.len() != 1 {
                    return Err(parse_err(*ln, "section header `A` takes no values".into()));
                }
                pos += 1;
                let mut data = Vec::with_capacity(dim * dim);
                for r in 0..dim {
                    let (rln, rtoks) = lines.get(pos).ok_or_else(|| {
                        parse_err(*ln, format!("section A ended after {r} of {dim} rows"))
                    })?;
                    data.extend(number_row(*rln, rtoks, dim)?);
                    pos += 1;
                }
                a = Some(DMatrix::from_row_slice(dim, dim, &data));
            }
            "B" => {
                pos += 1;
                let mut entries = Vec::new();
                while pos < lines.len() {
                    let (eln, etoks) = &lines[pos];
                    if matches!(etoks[0], "A" | "sigma") && etoks.len() == 1 {
                        break;
                    }
                    if etoks.len() != 4 {
                        return Err(parse_err(
                            *eln,
                            format!("expected `i j k value`, found {} tokens", etoks.len()),
                        ));
                    }
                    let idx: Vec<usize> = etoks[..3]
                        .iter()
                        .map(|t| {
                            t.parse()
                                .map_err(|_| parse_err(*eln, format!("invalid index `{t}`")))
                        })
                        .collect::<Result<_>>()?;
                    let val: f64 = etoks[3]
                        .parse()
                        .map_err(|_| parse_err(*eln, format!("invalid number `{}`", etoks[3])))?;
                    entries.push((idx[0], idx[1], idx[2], val));
                    pos += 1;
                }
                b = Some(BilinearTensor::from_entries(dim, entries).map_err(|e| match e {
                    Error::IndexOutOfRange(msg) | Error::Invalid(msg) => parse_err(*ln, msg),
                    other => other,
                })?);
            }
            "sigma" => {
                if toks.len() != 1 {
                    return Err(parse_err(*ln, "section header `sigma` takes no values".into()));
                }
                pos += 1;
                let mut cols = Vec::with_capacity(noise_dim);
                for c in 0..noise_dim {
                    let (rln, rtoks) = lines.get(pos).ok_or_else(|| {
                        parse_err(
                            *ln,
                            format!("section sigma ended after {c} of {noise_dim} columns"),
                        )
                    })?;
                    cols.push(number_row(*rln, rtoks, dim)?);
                    pos += 1;
                }
                let mut m = DMatrix::zeros(dim, noise_dim);
                for (c, col) in cols.iter().enumerate() {
                    for (i, &v) in col.iter().enumerate() {
                        m[(i, c)] = v;
                    }
                }
                sigma = Some(m);
            }
            other => {
                return Err(parse_err(
                    *ln,
                    format!("unexpected `{other}`; expected section A, B or sigma"),
                ))
            }
        }
    }

    let a = a.ok_or_else(|| parse_err(last_line, "missing section A".into()))?;
    let b = b.ok_or_else(|| parse_err(last_line, "missing section B".into()))?;
    let sigma = sigma.ok_or_else(|| parse_err(last_line, "missing section sigma".into()))?;
    BilinearModel::new(nu, a, b, sigma)
}

/// Reads a model from a file on disk.
pub fn load_model(path: &std::path::Path) -> Result<BilinearModel> {
    read_model(&std::fs::read_to_string(path)?)
}

/// Writes a model to a file on disk.
pub fn save_model(model: &BilinearModel, path: &std::path::Path) -> Result<()> {
    std::fs::write(path, write_model(model))?;
    Ok(())
}
