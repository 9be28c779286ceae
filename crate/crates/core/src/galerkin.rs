//! Spectral truncation of the 2-d Navier-Stokes vorticity equation.
//!
//! The vorticity `w` on the torus `[0, 2pi]^2` evolves by
//!
//! ```text
//! dw + (u . grad w - nu Lap w) dt = forcing,     u = grad^perp Lap^{-1} w,
//! ```
//!
//! and is expanded in the real basis `cos(k.x)`, `sin(k.x)` over wave-vectors
//! `k` with `0 < |k| <= cutoff`, one representative per `{k, -k}` pair. In
//! these coordinates the dissipation is diagonal, `A = diag(|k|^2)`, and the
//! advection term becomes a bilinear tensor whose coefficients are exact
//! rationals `(k^perp . l) / (2 |k|^2)` read off from product-to-sum trig
//! identities. No quadrature is involved, and because the velocity field is
//! divergence free the tensor satisfies the cancellation identity exactly,
//! entry by entry, including in floating point.
//!
//! Mode ordering is fixed by [`nse2d_modes`]: wave-vectors sorted by
//! `(|k|^2, k_1, k_2)`, mode `a` occupying coordinates `2a` (cosine) and
//! `2a + 1` (sine).

use std::collections::HashMap;

use nalgebra::DMatrix;

use crate::error::Error;
use crate::model::BilinearModel;
use crate::tensor::BilinearTensor;
use crate::Result;

/// Canonical representative of `{m, -m}`: first component positive, or zero
/// with second positive. Returns the representative and the sign flip.
fn canonical(m: (i64, i64)) -> ((i64, i64), f64) {
    if m.0 > 0 || (m.0 == 0 && m.1 > 0) {
        (m, 1.0)
    } else {
        ((-m.0, -m.1), -1.0)
    }
}

/// Wave-vectors `0 < |k| <= cutoff` (canonical representatives), in the
/// model's coordinate order.
pub fn nse2d_modes(cutoff: u32) -> Vec<(i64, i64)> {
    let kmax = cutoff as i64;
    let sq = kmax * kmax;
    let mut modes = Vec::new();
    for k1 in 0..=kmax {
        let lo = if k1 == 0 { 1 } else { -kmax };
        for k2 in lo..=kmax {
            if k1 * k1 + k2 * k2 <= sq && (k1, k2) != (0, 0) {
                modes.push((k1, k2));
            }
        }
    }
    modes.sort_by_key(|&(k1, k2)| (k1 * k1 + k2 * k2, k1, k2));
    modes
}

/// Builds the vorticity-form truncation with viscosity `nu`, forcing the
/// listed wave-vectors. Each forced mode receives two independent Brownian
/// directions, one per real component, so `noise_dim = 2 * forced.len()`.
///
/// ```
/// use hypoflow::galerkin::make_galerkin_nse2d;
/// use hypoflow::model::validate_model;
///
/// let m = make_galerkin_nse2d(2, 0.1, &[(1, 0), (1, 1)]).unwrap();
/// assert_eq!(m.dim, 12);
/// assert_eq!(m.noise_dim, 4);
/// assert!(validate_model(&m).ok);
/// ```
pub fn make_galerkin_nse2d(
    cutoff: u32,
    nu: f64,
    forced: &[(i64, i64)],
) -> Result<BilinearModel> {
    if cutoff == 0 {
        return Err(Error::Invalid("cutoff must be at least 1".into()));
    }
    let modes = nse2d_modes(cutoff);
    let n = 2 * modes.len();
    let index: HashMap<(i64, i64), usize> =
        modes.iter().enumerate().map(|(a, &m)| (m, a)).collect();
    let sq_cut = (cutoff as i64) * (cutoff as i64);

    // cos component of mode a sits at 2a, sin at 2a + 1.
    let cos_at = |m: (i64, i64)| index.get(&m).map(|&a| 2 * a);
    let sin_at = |m: (i64, i64)| index.get(&m).map(|&a| 2 * a + 1);

    let mut entries: Vec<(usize, usize, usize, f64)> = Vec::new();
    for (pa, &k) in modes.iter().enumerate() {
        let ksq = k.0 * k.0 + k.1 * k.1;
        for (qa, &l) in modes.iter().enumerate() {
            // k^perp . l with k^perp = (-k_2, k_1).
            let num = -k.1 * l.0 + k.0 * l.1;
            if num == 0 {
                continue;
            }
            let half = num as f64 / (2 * ksq) as f64;
            let sum = (k.0 + l.0, k.1 + l.1);
            let diff = (k.0 - l.0, k.1 - l.1);

            // Each (term kind, wave-vector, coefficient) triple below comes
            // from one product-to-sum identity; `push` projects it onto the
            // resolved modes, canonicalizing the sign of the wave-vector.
            let mut push = |is_sin: bool, m: (i64, i64), coeff: f64, j: usize, kk: usize| {
                if m == (0, 0) || m.0 * m.0 + m.1 * m.1 > sq_cut {
                    return;
                }
                let (cm, flip) = canonical(m);
                let slot = if is_sin { sin_at(cm) } else { cos_at(cm) };
                if let Some(i) = slot {
                    let c = if is_sin { coeff * flip } else { coeff };
                    entries.push((i, j, kk, c));
                }
            };

            let (pc, ps) = (2 * pa, 2 * pa + 1);
            let (qc, qs) = (2 * qa, 2 * qa + 1);
            // u(cos_k) . grad cos_l = -g sin(k.x) sin(l.x)
            push(false, diff, -half, pc, qc);
            push(false, sum, half, pc, qc);
            // u(cos_k) . grad sin_l = g sin(k.x) cos(l.x)
            push(true, sum, half, pc, qs);
            push(true, diff, half, pc, qs);
            // u(sin_k) . grad cos_l = g cos(k.x) sin(l.x)
            push(true, sum, half, ps, qc);
            push(true, diff, -half, ps, qc);
            // u(sin_k) . grad sin_l = -g cos(k.x) cos(l.x)
            push(false, sum, -half, ps, qs);
            push(false, diff, -half, ps, qs);
        }
    }
    let b = BilinearTensor::from_entries(n, entries)?;

    let mut a = DMatrix::zeros(n, n);
    for (i, &(k1, k2)) in modes.iter().enumerate() {
        let lam = (k1 * k1 + k2 * k2) as f64;
        a[(2 * i, 2 * i)] = lam;
        a[(2 * i + 1, 2 * i + 1)] = lam;
    }

    let mut cols = Vec::new();
    for &m in forced {
        if m == (0, 0) {
            return Err(Error::Invalid("cannot force the zero mode".into()));
        }
        let (cm, _) = canonical(m);
        let a_idx = index.get(&cm).copied().ok_or_else(|| {
            Error::IndexOutOfRange(format!(
                "forced mode ({}, {}) outside cutoff {cutoff}",
                m.0, m.1
            ))
        })?;
        if cols.contains(&a_idx) {
            return Err(Error::Invalid(format!(
                "forced mode ({}, {}) repeated (up to sign)",
                m.0, m.1
            )));
        }
        cols.push(a_idx);
    }
    let mut sigma = DMatrix::zeros(n, 2 * cols.len());
    for (c, &a_idx) in cols.iter().enumerate() {
        sigma[(2 * a_idx, 2 * c)] = 1.0;
        sigma[(2 * a_idx + 1, 2 * c + 1)] = 1.0;
    }

    BilinearModel::new(nu, a, b, sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_model;
    use nalgebra::DVector;

    #[test]
    fn mode_counts() {
        assert_eq!(nse2d_modes(1), vec![(0, 1), (1, 0)]);
        assert_eq!(nse2d_modes(2).len(), 6);
        assert_eq!(nse2d_modes(3).len(), 14);
    }

    #[test]
    fn cutoff_one_has_no_resolved_interactions() {
        // k +/- l for |k| = |l| = 1 lands on |m|^2 in {0, 2}, all outside
        // the resolved set, so the truncated tensor vanishes identically.
        let m = make_galerkin_nse2d(1, 1.0, &[(1, 0)]).unwrap();
        assert_eq!(m.dim, 4);
        assert!(m.b.is_zero());
        assert!(validate_model(&m).ok);
    }

    #[test]
    fn cancellation_is_exact_up_to_cutoff_three() {
        for cutoff in 1..=3 {
            let m = make_galerkin_nse2d(cutoff, 0.05, &[(1, 0)]).unwrap();
            assert_eq!(m.b.cancellation_max_violation(), 0.0, "cutoff {cutoff}");
            let report = validate_model(&m);
            assert!(report.ok, "cutoff {cutoff}");
            assert!((report.alpha - 0.05).abs() < 1e-14);
        }
    }

    #[test]
    fn advection_term_hand_checked_at_cutoff_two() {
        // V = cos((1,0).x), U = cos((1,1).x): u(V) = (0,1) sin((1,0).x),
        // u . grad U = -sin((1,0).x) sin((1,1).x)
        //            = -(1/2) cos((0,-1).x) + (1/2) cos((2,1).x).
        // (2,1) is outside cutoff 2; (0,-1) canonicalizes to (0,1) with even
        // cosine, so B(V, U) = -(1/2) cos((0,1).x).
        let m = make_galerkin_nse2d(2, 1.0, &[(1, 0)]).unwrap();
        let modes = nse2d_modes(2);
        let at = |mv: (i64, i64)| 2 * modes.iter().position(|&x| x == mv).unwrap();
        let mut v = DVector::zeros(m.dim);
        v[at((1, 0))] = 1.0;
        let mut u = DVector::zeros(m.dim);
        u[at((1, 1))] = 1.0;
        let out = m.b.apply(&v, &u);
        let mut expected = DVector::zeros(m.dim);
        expected[at((0, 1))] = -0.5;
        assert_eq!(out, expected);
    }

    #[test]
    fn dissipation_is_diagonal_in_mode_order() {
        let m = make_galerkin_nse2d(2, 1.0, &[(1, 0)]).unwrap();
        let modes = nse2d_modes(2);
        for (a, &(k1, k2)) in modes.iter().enumerate() {
            let lam = (k1 * k1 + k2 * k2) as f64;
            assert_eq!(m.a[(2 * a, 2 * a)], lam);
            assert_eq!(m.a[(2 * a + 1, 2 * a + 1)], lam);
        }
    }

    #[test]
    fn forcing_layout_and_rejections() {
        let m = make_galerkin_nse2d(2, 1.0, &[(1, 0), (1, 1)]).unwrap();
        assert_eq!(m.noise_dim, 4);
        for col in 0..4 {
            assert_eq!(m.sigma.column(col).iter().filter(|&&v| v != 0.0).count(), 1);
        }
        assert!(make_galerkin_nse2d(2, 1.0, &[(0, 0)]).is_err());
        assert!(make_galerkin_nse2d(2, 1.0, &[(3, 0)]).is_err());
        // (-1, 0) is (1, 0) up to sign: a duplicate.
        assert!(make_galerkin_nse2d(2, 1.0, &[(1, 0), (-1, 0)]).is_err());
    }
}
