//! Closed-form solution `ϑ_t = Φ(t,0)ϑ₀ + (∫₀ᵗ Φ(t,τ)dτ)u` through the
//! augmented matrix `exp(t·[[A, u], [0, 0]])`, which stays valid for
//! singular `A`.
//!
//! When `Q·M·D < P` the data only sees an `r`-dimensional subspace of each
//! parameter block. With `B` an orthonormal basis of the span of all
//! `J_qᵀ`, the coordinates `Bᵀθ_q` follow the same flow with blocks `J_q B`,
//! and the orthogonal remainder only mixes: `ṗ = ((W - I) ⊗ I) p`. The solver
//! uses this split so the dense exponential is `Q·r + 1` wide instead of
//! `Q·P + 1`.

use faer::linalg::matmul::matmul;
use faer::{get_global_parallelism, Accum, Mat, MatRef};

use super::expm::expm_owned;
use super::{build_system, LinearFlowSystem, LinearizationAnchor};
use crate::error::{check_len, Error, Result};

pub const DEFAULT_DENSE_CAP: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosedFormOptions {
    /// Largest dense state dimension (after any reduction) the solver forms.
    pub dense_cap: usize,
    /// Solve in the data subspace when it is smaller than a parameter block.
    pub reduce: bool,
}

impl Default for ClosedFormOptions {
    fn default() -> Self {
        ClosedFormOptions {
            dense_cap: DEFAULT_DENSE_CAP,
            reduce: true,
        }
    }
}

/// Orthonormal `P × QMD` basis containing the row spaces of every `J_q`,
/// or `None` when that would not be smaller than `P`.
pub fn data_subspace_basis(anchor: &LinearizationAnchor) -> Option<Mat<f64>> {
    let (p, rows, q) = (anchor.block_dim(), anchor.rows_per_agent(), anchor.num_agents());
    let k = q * rows;
    if k >= p {
        return None;
    }
    let stacked = Mat::from_fn(p, k, |i, c| anchor.jacobian(c / rows)[(c % rows, i)]);
    Some(stacked.qr().compute_thin_Q())
}

pub(crate) fn check_times(times: &[f64]) -> Result<()> {
    match times.iter().find(|t| !(t.is_finite() && **t >= 0.0)) {
        Some(t) => Err(Error::InvalidArgument(format!(
            "evaluation times must be finite and nonnegative, got {t}"
        ))),
        None => Ok(()),
    }
}

/// Propagates `[x; 1]` through `exp(Δ·M)` for the requested times, reusing the
/// exponential whenever consecutive gaps repeat.
fn propagate_augmented(aug: &Mat<f64>, x0: &[f64], times: &[f64]) -> Result<Vec<Vec<f64>>> {
    let n = x0.len();
    let mut cache: Option<(f64, Mat<f64>)> = None;
    let mut state = Mat::<f64>::from_fn(n + 1, 1, |i, _| if i < n { x0[i] } else { 1.0 });
    let mut now = 0.0;
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        if t < now {
            state = Mat::from_fn(n + 1, 1, |i, _| if i < n { x0[i] } else { 1.0 });
            now = 0.0;
        }
        let dt = t - now;
        if dt > 0.0 {
            let hit = matches!(&cache, Some((d, _)) if (d - dt).abs() <= 1e-12 * dt.max(1.0));
            if !hit {
                let mut scaled = aug.clone();
                for j in 0..=n {
                    scaled.col_as_slice_mut(j).iter_mut().for_each(|v| *v *= dt);
                }
                cache = Some((dt, expm_owned(scaled)?));
            }
            let e = &cache.as_ref().unwrap().1;
            let mut next = Mat::<f64>::zeros(n + 1, 1);
            matmul(next.as_mut(), Accum::Replace, e.as_ref(), state.as_ref(), 1.0, get_global_parallelism());
            // The last coordinate is exactly 1 in exact arithmetic.
            next[(n, 0)] = 1.0;
            state = next;
            now = t;
        }
        out.push(state.col_as_slice(0)[..n].to_vec());
    }
    Ok(out)
}

/// `x(t)` for `ẋ = Ax + u`, `x(0) = x0`, via the augmented exponential.
pub fn solve_affine_closed_form(
    a: MatRef<'_, f64>,
    u: &[f64],
    x0: &[f64],
    times: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let n = x0.len();
    check_len("state matrix rows", n, a.nrows())?;
    check_len("state matrix columns", n, a.ncols())?;
    check_len("forcing", n, u.len())?;
    check_times(times)?;
    let aug = Mat::from_fn(n + 1, n + 1, |i, j| match (i < n, j < n) {
        (true, true) => a[(i, j)],
        (true, false) => u[i],
        _ => 0.0,
    });
    propagate_augmented(&aug, x0, times)
}

/// States `ϑ_t` at each requested time. Fails with
/// [`Error::DenseCapExceeded`] when the dense problem is too large.
pub fn solve_closed_form(
    system: &LinearFlowSystem,
    times: &[f64],
    options: &ClosedFormOptions,
) -> Result<Vec<Vec<f64>>> {
    check_times(times)?;
    let anchor = system.anchor();
    let basis = if options.reduce { data_subspace_basis(anchor) } else { None };
    let Some(basis) = basis else {
        let aug = system.augmented_matrix(options.dense_cap)?;
        return propagate_augmented(&aug, system.theta0(), times);
    };

    let reduced = build_system(
        system.algorithm(),
        &anchor.project(basis.as_ref())?,
        system.weights(),
        system.step_size(),
    )?;
    let aug = reduced.augmented_matrix(options.dense_cap)?;
    let z = propagate_augmented(&aug, reduced.theta0(), times)?;

    let (q, p, r) = (anchor.num_agents(), anchor.block_dim(), basis.ncols());
    // Orthogonal remainder p₀ = ϑ₀ - (I ⊗ BBᵀ)ϑ₀.
    let mut perp0 = anchor.theta0().to_vec();
    let z0 = reduced.theta0();
    for a in 0..q {
        for c in 0..r {
            let coef = z0[a * r + c];
            for (dst, b) in perp0[a * p..(a + 1) * p].iter_mut().zip(basis.col_as_slice(c)) {
                *dst -= coef * b;
            }
        }
    }
    let shift = Mat::from_fn(q, q, |i, j| system.weights()[(i, j)] - if i == j { 1.0 } else { 0.0 });

    let mut out = Vec::with_capacity(times.len());
    for (&t, zt) in times.iter().zip(&z) {
        let mut theta = vec![0.0; q * p];
        let mix = expm_owned(Mat::from_fn(q, q, |i, j| t * shift[(i, j)]))?;
        for a in 0..q {
            let dst = &mut theta[a * p..(a + 1) * p];
            for c in 0..r {
                let coef = zt[a * r + c];
                for (d, b) in dst.iter_mut().zip(basis.col_as_slice(c)) {
                    *d += coef * b;
                }
            }
            for b in 0..q {
                let m = mix[(a, b)];
                if m != 0.0 {
                    for (d, v) in dst.iter_mut().zip(&perp0[b * p..(b + 1) * p]) {
                        *d += m * v;
                    }
                }
            }
        }
        out.push(theta);
    }
    Ok(out)
}
