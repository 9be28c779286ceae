//! Polynomial vector fields, Lie brackets, and bracket ladders.
//!
//! The drift `F(U) = -(nu A U + B(U, U))` and the constant noise directions
//! generate, via iterated Lie brackets, the families whose pointwise span
//! decides hypoellipticity-type questions for the system. Two ladders are
//! provided:
//!
//! * the full ladder `V_0 = span{sigma_k}`,
//!   `V_n = span{E, [E, F], [E, sigma_k] : E in V_{n-1}}`, built from
//!   symbolic polynomial fields and evaluated at a point by
//!   [`check_hormander_at_point`];
//! * the simplified constant-vector ladder `W_0 = {sigma_j}`,
//!   `W_n = W_{n-1} + {B(psi, sigma_j) + B(sigma_j, psi)}`, which captures
//!   the double brackets `[[F, psi], sigma_j]` (up to overall sign) without
//!   any symbolic work and is the cheap test for spectral truncations.
//!
//! Brackets use the convention `[G, H] = (grad H) G - (grad G) H`. All
//! span statements are invariant under flipping the sign of any generator,
//! in particular under the sign of the drift.
//!
//! Fields are stored degree by degree as dense symmetric coefficient
//! tensors. A bracket of degrees `a` and `b` has degree `a + b - 1`, so
//! repeated brackets against the quadratic drift grow degree without bound;
//! a configurable cap (default [`DEGREE_CAP`]) turns that growth into an
//! explicit [`Error::DegreeOverflow`] instead of silent truncation.

use nalgebra::{DMatrix, DVector};

use crate::error::Error;
use crate::model::BilinearModel;
use crate::Result;

/// Default cap on the polynomial degree of ladder fields.
pub const DEGREE_CAP: usize = 4;

/// Default relative tolerance for numerical rank decisions.
pub const RANK_TOL: f64 = 1e-8;

/// Relative Gram-Schmidt threshold for accepting a new ladder member.
const DEDUP_TOL: f64 = 1e-10;

/// Polynomial vector field on `R^n`, stored as homogeneous parts.
///
/// `parts[m]` holds the degree-`m` part as a dense tensor of order `m + 1`
/// in row-major layout: coefficient `(i, j_1, ..., j_m)` sits at
/// `((i * n + j_1) * n + j_2) * n + ...`. The argument slots are kept
/// symmetric, so the field value is `X_m(U)_i = sum X_m[i, j_1..j_m]
/// U_{j_1} ... U_{j_m}` and the gradient contraction below is exact.
#[derive(Debug, Clone)]
pub struct PolyVectorField {
    dim: usize,
    parts: Vec<Vec<f64>>,
}

fn part_len(n: usize, degree: usize) -> usize {
    n * n.pow(degree as u32)
}

fn permutations(m: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut items: Vec<usize> = (0..m).collect();
    fn heap(k: usize, items: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k <= 1 {
            out.push(items.clone());
            return;
        }
        for i in 0..k {
            heap(k - 1, items, out);
            if k % 2 == 0 {
                items.swap(i, k - 1);
            } else {
                items.swap(0, k - 1);
            }
        }
    }
    heap(m, &mut items, &mut out);
    out
}

/// Averages a degree-`m` part over all permutations of its argument slots.
fn symmetrize(n: usize, m: usize, data: &[f64]) -> Vec<f64> {
    if m <= 1 {
        return data.to_vec();
    }
    let perms = permutations(m);
    let argn = n.pow(m as u32);
    let inv = 1.0 / perms.len() as f64;
    let mut out = vec![0.0; n * argn];
    let mut digits = vec![0usize; m];
    for s in 0..argn {
        let mut rem = s;
        for d in (0..m).rev() {
            digits[d] = rem % n;
            rem /= n;
        }
        for perm in &perms {
            let mut ps = 0usize;
            for &slot in perm {
                ps = ps * n + digits[slot];
            }
            for i in 0..n {
                out[i * argn + s] += data[i * argn + ps];
            }
        }
    }
    for v in &mut out {
        *v *= inv;
    }
    out
}

impl PolyVectorField {
    pub fn zero(dim: usize) -> Self {
        PolyVectorField { dim, parts: Vec::new() }
    }

    /// Constant field `U -> v`.
    pub fn constant(v: &DVector<f64>) -> Self {
        PolyVectorField {
            dim: v.len(),
            parts: vec![v.iter().cloned().collect()],
        }
    }

    /// Builds a field from raw homogeneous parts: `parts[m]` is the
    /// degree-`m` coefficient tensor in the row-major layout documented on
    /// the type, or empty to skip that degree. Argument slots are
    /// symmetrized so that evaluation and bracketing agree for any input.
    pub fn from_parts(dim: usize, parts: Vec<Vec<f64>>) -> Result<Self> {
        for (m, data) in parts.iter().enumerate() {
            if !data.is_empty() && data.len() != part_len(dim, m) {
                return Err(Error::Dimension(format!(
                    "degree {m} part has {} coefficients, expected {}",
                    data.len(),
                    part_len(dim, m)
                )));
            }
        }
        let parts = parts
            .into_iter()
            .enumerate()
            .map(|(m, data)| {
                if data.is_empty() {
                    data
                } else {
                    symmetrize(dim, m, &data)
                }
            })
            .collect();
        Ok(PolyVectorField { dim, parts })
    }

    /// Linear field `U -> M U`.
    pub fn linear(m: &DMatrix<f64>) -> Self {
        assert_eq!(m.nrows(), m.ncols());
        let n = m.nrows();
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                data[i * n + j] = m[(i, j)];
            }
        }
        PolyVectorField {
            dim: n,
            parts: vec![Vec::new(), data],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn part(&self, m: usize) -> Option<&[f64]> {
        self.parts
            .get(m)
            .filter(|p| !p.is_empty())
            .map(|p| p.as_slice())
    }

    fn part_mut(&mut self, m: usize) -> &mut Vec<f64> {
        while self.parts.len() <= m {
            self.parts.push(Vec::new());
        }
        let n = self.dim;
        if self.parts[m].is_empty() {
            self.parts[m] = vec![0.0; part_len(n, m)];
        }
        &mut self.parts[m]
    }

    /// Highest degree with a nonzero coefficient, `None` for the zero field.
    pub fn degree(&self) -> Option<usize> {
        (0..self.parts.len())
            .rev()
            .find(|&m| self.part(m).is_some_and(|p| p.iter().any(|&v| v != 0.0)))
    }

    /// Euclidean norm of all coefficients.
    pub fn coeff_norm(&self) -> f64 {
        self.parts
            .iter()
            .flat_map(|p| p.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Field value at `u`.
    pub fn eval(&self, u: &DVector<f64>) -> DVector<f64> {
        let n = self.dim;
        assert_eq!(u.len(), n, "evaluation point has wrong dimension");
        let mut out = DVector::zeros(n);
        for (m, p) in self.parts.iter().enumerate() {
            if p.is_empty() {
                continue;
            }
            // Contract the (fastest-varying) last slot with u, m times.
            let mut cur = p.clone();
            let mut len = part_len(n, m);
            for _ in 0..m {
                len /= n;
                let mut nxt = vec![0.0; len];
                for (idx, slot) in nxt.iter_mut().enumerate() {
                    let base = idx * n;
                    let mut s = 0.0;
                    for j in 0..n {
                        s += cur[base + j] * u[j];
                    }
                    *slot = s;
                }
                cur = nxt;
            }
            for i in 0..n {
                out[i] += cur[i];
            }
        }
        out
    }

    /// Coefficients flattened in degree order, padded with zeros through
    /// `max_degree`. Two fields are parallel in coefficient space exactly
    /// when they are equal as polynomial maps.
    pub fn flatten(&self, max_degree: usize) -> Vec<f64> {
        let n = self.dim;
        let mut out = Vec::new();
        for m in 0..=max_degree {
            match self.part(m) {
                Some(p) => out.extend_from_slice(p),
                None => out.extend(std::iter::repeat(0.0).take(part_len(n, m))),
            }
        }
        out
    }

    fn add_part(&mut self, m: usize, data: &[f64], scale: f64) {
        let dst = self.part_mut(m);
        for (d, &s) in dst.iter_mut().zip(data) {
            *d += scale * s;
        }
    }

    /// Drops parts that are exactly zero, so `degree` stays truthful.
    fn trim(&mut self) {
        while let Some(last) = self.parts.last() {
            if last.iter().all(|&v| v == 0.0) {
                self.parts.pop();
            } else {
                break;
            }
        }
    }
}

/// The model drift as a polynomial field: degree-1 part `-nu A`, degree-2
/// part the symmetrization of `-B`.
pub fn drift_field(model: &BilinearModel) -> PolyVectorField {
    let n = model.dim;
    let mut f = PolyVectorField::zero(n);
    {
        let p1 = f.part_mut(1);
        for i in 0..n {
            for j in 0..n {
                p1[i * n + j] = -model.nu * model.a[(i, j)];
            }
        }
    }
    {
        let p2 = f.part_mut(2);
        for (i, j, k, v) in model.b.nonzeros() {
            // Symmetric placement over the two argument slots.
            p2[(i * n + j) * n + k] += -0.5 * v;
            p2[(i * n + k) * n + j] += -0.5 * v;
        }
    }
    f.trim();
    f
}

/// Lie bracket `[G, H] = (grad H) G - (grad G) H`, with a degree cap.
///
/// Both directional terms of a `(deg a, deg b)` pair have degree
/// `a + b - 1`; if any nonzero pair would exceed `cap` the bracket fails
/// with [`Error::DegreeOverflow`] rather than truncating.
pub fn lie_bracket(
    g: &PolyVectorField,
    h: &PolyVectorField,
    cap: usize,
) -> Result<PolyVectorField> {
    assert_eq!(g.dim(), h.dim(), "bracket of fields on different spaces");
    let n = g.dim();
    let mut out = PolyVectorField::zero(n);

    // (grad y) x for homogeneous parts, unsymmetrized:
    // R[i, jmulti(a), lmulti(b-1)] = b * sum_c Y[i, c, lmulti] X[c, jmulti].
    let grad_dot = |y: &[f64], b: usize, x: &[f64], a: usize| -> Vec<f64> {
        let na = n.pow(a as u32);
        let nl = n.pow((b - 1) as u32);
        let mut r = vec![0.0; n * na * nl];
        let bf = b as f64;
        for i in 0..n {
            for c in 0..n {
                for lj in 0..nl {
                    let yv = y[(i * n + c) * nl + lj];
                    if yv == 0.0 {
                        continue;
                    }
                    let coeff = bf * yv;
                    for (jm, xv) in x[c * na..(c + 1) * na].iter().enumerate() {
                        if *xv != 0.0 {
                            r[(i * na + jm) * nl + lj] += coeff * xv;
                        }
                    }
                }
            }
        }
        r
    };

    for (a, gp) in g.parts.iter().enumerate() {
        if gp.is_empty() || gp.iter().all(|&v| v == 0.0) {
            continue;
        }
        for (b, hp) in h.parts.iter().enumerate() {
            if hp.is_empty() || hp.iter().all(|&v| v == 0.0) {
                continue;
            }
            // (grad H_b) G_a, degree a + b - 1 (absent for constant H).
            if b >= 1 {
                let deg = a + b - 1;
                if deg > cap {
                    return Err(Error::DegreeOverflow { needed: deg, cap });
                }
                let r = grad_dot(hp, b, gp, a);
                out.add_part(deg, &symmetrize(n, deg, &r), 1.0);
            }
            // -(grad G_a) H_b, degree a + b - 1 (absent for constant G).
            if a >= 1 {
                let deg = a + b - 1;
                if deg > cap {
                    return Err(Error::DegreeOverflow { needed: deg, cap });
                }
                let r = grad_dot(gp, a, hp, b);
                out.add_part(deg, &symmetrize(n, deg, &r), -1.0);
            }
        }
    }
    out.trim();
    Ok(out)
}

/// Numerical rank of the span of `vectors`: singular values above
/// `tol * sigma_max * dim` count.
pub fn span_dimension(vectors: &[DVector<f64>], tol: f64) -> usize {
    if vectors.is_empty() {
        return 0;
    }
    let n = vectors[0].len();
    let mut m = DMatrix::zeros(n, vectors.len());
    for (c, v) in vectors.iter().enumerate() {
        m.set_column(c, v);
    }
    let sv = m.singular_values();
    let smax = sv.iter().cloned().fold(0.0_f64, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > tol * smax * n as f64).count()
}

/// Incremental orthonormal basis used to deduplicate ladder members.
struct SpanBasis {
    basis: Vec<Vec<f64>>,
}

impl SpanBasis {
    fn new() -> Self {
        SpanBasis { basis: Vec::new() }
    }

    /// Pads stored vectors with zeros to `len` (flattened fields only grow).
    fn pad_to(&mut self, len: usize) {
        for b in &mut self.basis {
            if b.len() < len {
                b.resize(len, 0.0);
            }
        }
    }

    /// Accepts `v` when its component orthogonal to the current span is
    /// larger than `DEDUP_TOL` relative to `|v|`.
    fn try_insert(&mut self, mut v: Vec<f64>) -> bool {
        self.pad_to(v.len());
        let norm0 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm0 == 0.0 {
            return false;
        }
        for b in &self.basis {
            let dot: f64 = b.iter().zip(&v).map(|(x, y)| x * y).sum();
            for (vi, bi) in v.iter_mut().zip(b) {
                *vi -= dot * bi;
            }
        }
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > DEDUP_TOL * norm0 {
            for vi in &mut v {
                *vi /= norm;
            }
            self.basis.push(v);
            true
        } else {
            false
        }
    }

    fn rank(&self) -> usize {
        self.basis.len()
    }
}

/// One level of a bracket ladder.
#[derive(Debug, Clone)]
pub struct LadderLevel {
    pub level: usize,
    /// Members accepted at this level (after span deduplication).
    pub new_members: usize,
    /// Span dimension after this level. For the W ladder this is the rank
    /// of the vectors; for the pointwise check it is the rank at the
    /// evaluation point.
    pub span_dim: usize,
    /// Bracket candidates skipped at this level because they would exceed
    /// the degree cap.
    pub overflowed: usize,
}

/// Result of [`build_w_ladder`].
#[derive(Debug, Clone)]
pub struct WLadder {
    /// Accepted vectors in discovery order (level 0 first).
    pub vectors: Vec<DVector<f64>>,
    pub levels: Vec<LadderLevel>,
    /// First level at which the vectors span `R^N`, if any.
    pub spanning_level: Option<usize>,
}

/// Builds the simplified ladder: start from the noise columns and keep
/// symmetrizing through the interaction tensor,
/// `psi -> B(psi, sigma_j) + B(sigma_j, psi)`. A candidate is kept only if
/// it enlarges the span. Stops at spanning, stabilization, or `n_max`.
///
/// ```
/// use hypoflow::brackets::build_w_ladder;
/// use hypoflow::model::make_triad;
///
/// let m = make_triad([1.0, 1.0, -2.0], 1.0, &[0, 1]).unwrap();
/// assert_eq!(build_w_ladder(&m, 10).spanning_level, Some(1));
///
/// let degenerate = make_triad([1.0, 1.0, -2.0], 1.0, &[0]).unwrap();
/// assert_eq!(build_w_ladder(&degenerate, 10).spanning_level, None);
/// ```
pub fn build_w_ladder(model: &BilinearModel, n_max: usize) -> WLadder {
    let n = model.dim;
    let sigma: Vec<DVector<f64>> = (0..model.noise_dim).map(|k| model.sigma_col(k)).collect();

    let mut basis = SpanBasis::new();
    let mut vectors: Vec<DVector<f64>> = Vec::new();
    let mut levels = Vec::new();
    let mut spanning_level = None;

    let mut fresh: Vec<DVector<f64>> = Vec::new();
    for s in &sigma {
        if basis.try_insert(s.iter().cloned().collect()) {
            vectors.push(s.clone());
            fresh.push(s.clone());
        }
    }
    levels.push(LadderLevel {
        level: 0,
        new_members: fresh.len(),
        span_dim: basis.rank(),
        overflowed: 0,
    });
    if basis.rank() == n {
        spanning_level = Some(0);
    }

    let mut level = 0;
    while spanning_level.is_none() && !fresh.is_empty() && level < n_max {
        level += 1;
        let mut next_fresh = Vec::new();
        for psi in &fresh {
            for s in &sigma {
                let cand = model.b.apply(psi, s) + model.b.apply(s, psi);
                if basis.try_insert(cand.iter().cloned().collect()) {
                    vectors.push(cand.clone());
                    next_fresh.push(cand);
                }
            }
        }
        levels.push(LadderLevel {
            level,
            new_members: next_fresh.len(),
            span_dim: basis.rank(),
            overflowed: 0,
        });
        if basis.rank() == n {
            spanning_level = Some(level);
        }
        fresh = next_fresh;
    }

    WLadder {
        vectors,
        levels,
        spanning_level,
    }
}

/// Result of [`build_v_ladder`].
#[derive(Debug, Clone)]
pub struct VLadder {
    /// Accepted fields in discovery order.
    pub fields: Vec<PolyVectorField>,
    pub levels: Vec<LadderLevel>,
    /// True when some bracket candidate was skipped for exceeding the
    /// degree cap, making a negative spanning verdict inconclusive.
    pub overflowed: bool,
}

/// Builds the full ladder of polynomial fields:
/// level 0 holds the noise directions, and each later level brackets the
/// previous level's new fields against the drift and against each noise
/// direction. Fields are deduplicated by rank growth in coefficient space.
/// Candidates beyond the degree cap are counted per level and skipped.
pub fn build_v_ladder(model: &BilinearModel, n_max: usize, degree_cap: usize) -> VLadder {
    let f = drift_field(model);
    let sigma_fields: Vec<PolyVectorField> = (0..model.noise_dim)
        .map(|k| PolyVectorField::constant(&model.sigma_col(k)))
        .collect();

    let mut basis = SpanBasis::new();
    let mut fields: Vec<PolyVectorField> = Vec::new();
    let mut levels = Vec::new();
    let mut overflowed_any = false;

    let mut fresh: Vec<PolyVectorField> = Vec::new();
    for s in &sigma_fields {
        if basis.try_insert(s.flatten(degree_cap)) {
            fields.push(s.clone());
            fresh.push(s.clone());
        }
    }
    levels.push(LadderLevel {
        level: 0,
        new_members: fresh.len(),
        span_dim: basis.rank(),
        overflowed: 0,
    });

    let mut level = 0;
    while !fresh.is_empty() && level < n_max {
        level += 1;
        let mut next_fresh = Vec::new();
        let mut overflowed = 0;
        let mut candidates = Vec::new();
        for e in &fresh {
            match lie_bracket(e, &f, degree_cap) {
                Ok(c) => candidates.push(c),
                Err(Error::DegreeOverflow { .. }) => overflowed += 1,
                Err(_) => unreachable!("bracket only fails by overflow"),
            }
            for s in &sigma_fields {
                match lie_bracket(e, s, degree_cap) {
                    Ok(c) => candidates.push(c),
                    Err(Error::DegreeOverflow { .. }) => overflowed += 1,
                    Err(_) => unreachable!("bracket only fails by overflow"),
                }
            }
        }
        for cand in candidates {
            if basis.try_insert(cand.flatten(degree_cap)) {
                fields.push(cand.clone());
                next_fresh.push(cand);
            }
        }
        overflowed_any |= overflowed > 0;
        levels.push(LadderLevel {
            level,
            new_members: next_fresh.len(),
            span_dim: basis.rank(),
            overflowed,
        });
        fresh = next_fresh;
    }

    VLadder {
        fields,
        levels,
        overflowed: overflowed_any,
    }
}

/// Verdict of the pointwise span check.
#[derive(Debug, Clone)]
pub struct HormanderReport {
    pub spanning: bool,
    /// First ladder level whose fields span `R^N` at the point, when any.
    pub spanning_level: Option<usize>,
    /// Rank at the point using all fields built.
    pub span_dim: usize,
    /// `(level, cumulative fields, rank at the point)` per level.
    pub levels: Vec<(usize, usize, usize)>,
}

/// Evaluates the full ladder at a point and reports whether the fields
/// span. Rank decisions use the singular value threshold `tol * sigma_max
/// * N`; brackets are built up to [`DEGREE_CAP`].
///
/// A negative verdict is conclusive only if no bracket overflowed the
/// degree cap; an inconclusive negative surfaces the overflow instead.
pub fn check_hormander_at_point(
    model: &BilinearModel,
    u: &DVector<f64>,
    n_max: usize,
    tol: f64,
) -> Result<HormanderReport> {
    if u.len() != model.dim {
        return Err(Error::Dimension(format!(
            "point has length {}, model dimension is {}",
            u.len(),
            model.dim
        )));
    }
    let ladder = build_v_ladder(model, n_max, DEGREE_CAP);

    let mut report_levels = Vec::new();
    let mut evaluated: Vec<DVector<f64>> = Vec::new();
    let mut spanning_level = None;
    let mut cursor = 0;
    for lvl in &ladder.levels {
        for field in &ladder.fields[cursor..cursor + lvl.new_members] {
            evaluated.push(field.eval(u));
        }
        cursor += lvl.new_members;
        let rank = span_dimension(&evaluated, tol);
        report_levels.push((lvl.level, cursor, rank));
        if rank == model.dim && spanning_level.is_none() {
            spanning_level = Some(lvl.level);
        }
    }
    let span_dim = report_levels.last().map(|&(_, _, r)| r).unwrap_or(0);
    let spanning = spanning_level.is_some();
    if !spanning && ladder.overflowed {
        return Err(Error::DegreeOverflow {
            needed: DEGREE_CAP + 1,
            cap: DEGREE_CAP,
        });
    }
    Ok(HormanderReport {
        spanning,
        spanning_level,
        span_dim,
        levels: report_levels,
    })
}
