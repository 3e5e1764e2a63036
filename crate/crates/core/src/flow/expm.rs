//! Matrix exponential by scaling and squaring with a degree-13 Padé
//! approximant (Higham 2005), 1-norm based scaling.

use faer::linalg::matmul::matmul;
use faer::prelude::Solve;
use faer::{get_global_parallelism, Accum, Mat, MatRef};

use crate::error::{Error, Result};

const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

/// `‖A/2^s‖₁ ≤ θ₁₃` keeps the Padé(13) backward error below unit roundoff.
const THETA13: f64 = 5.371920351148152;

/// Induced 1-norm: maximum absolute column sum.
pub fn norm1(a: MatRef<'_, f64>) -> f64 {
    (0..a.ncols())
        .map(|j| (0..a.nrows()).map(|i| a[(i, j)].abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn product(lhs: MatRef<'_, f64>, rhs: MatRef<'_, f64>) -> Mat<f64> {
    let mut out = Mat::<f64>::zeros(lhs.nrows(), rhs.ncols());
    matmul(out.as_mut(), Accum::Replace, lhs, rhs, 1.0, get_global_parallelism());
    out
}

/// `Σ_k c_k·M_k + c_I·I`, written column by column.
fn combination(terms: &[(f64, &Mat<f64>)], identity: f64, n: usize) -> Mat<f64> {
    let mut out = Mat::<f64>::zeros(n, n);
    for j in 0..n {
        let col = out.col_as_slice_mut(j);
        for &(c, m) in terms {
            for (o, v) in col.iter_mut().zip(m.col_as_slice(j)) {
                *o += c * v;
            }
        }
        col[j] += identity;
    }
    out
}

fn add_combination(dst: &mut Mat<f64>, terms: &[(f64, &Mat<f64>)], identity: f64) {
    let n = dst.nrows();
    for j in 0..n {
        let col = dst.col_as_slice_mut(j);
        for &(c, m) in terms {
            for (o, v) in col.iter_mut().zip(m.col_as_slice(j)) {
                *o += c * v;
            }
        }
        col[j] += identity;
    }
}

/// `exp(A)` for a square matrix with finite entries.
pub fn expm(a: MatRef<'_, f64>) -> Result<Mat<f64>> {
    expm_owned(a.to_owned())
}

/// Same as [`expm`] but reuses the input allocation.
pub fn expm_owned(mut a: Mat<f64>) -> Result<Mat<f64>> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::Dimension {
            context: "expm (square input)",
            expected: n,
            found: a.ncols(),
        });
    }
    if n == 0 {
        return Err(Error::InvalidArgument("expm of an empty matrix".into()));
    }
    for j in 0..n {
        for i in 0..n {
            if !a[(i, j)].is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "expm input has a non-finite entry at ({i}, {j})"
                )));
            }
        }
    }

    let norm = norm1(a.as_ref());
    let squarings = if norm > THETA13 {
        (norm / THETA13).log2().ceil() as i32
    } else {
        0
    };
    let scale = 0.5f64.powi(squarings);
    if squarings > 0 {
        for j in 0..n {
            a.col_as_slice_mut(j).iter_mut().for_each(|v| *v *= scale);
        }
    }

    let b = &PADE13;
    let a2 = product(a.as_ref(), a.as_ref());
    let a4 = product(a2.as_ref(), a2.as_ref());
    let a6 = product(a4.as_ref(), a2.as_ref());

    // U = A·[A6·(b13 A6 + b11 A4 + b9 A2) + b7 A6 + b5 A4 + b3 A2 + b1 I]
    let inner = combination(&[(b[13], &a6), (b[11], &a4), (b[9], &a2)], 0.0, n);
    let mut u_inner = product(a6.as_ref(), inner.as_ref());
    drop(inner);
    add_combination(&mut u_inner, &[(b[7], &a6), (b[5], &a4), (b[3], &a2)], b[1]);
    let u = product(a.as_ref(), u_inner.as_ref());
    drop(u_inner);
    drop(a);

    // V = A6·(b12 A6 + b10 A4 + b8 A2) + b6 A6 + b4 A4 + b2 A2 + b0 I
    let inner = combination(&[(b[12], &a6), (b[10], &a4), (b[8], &a2)], 0.0, n);
    let mut v = product(a6.as_ref(), inner.as_ref());
    drop(inner);
    add_combination(&mut v, &[(b[6], &a6), (b[4], &a4), (b[2], &a2)], b[0]);
    drop((a2, a4, a6));

    // (V - U) R = (V + U)
    let mut numer = v;
    let mut denom = u;
    for j in 0..n {
        let (nc, dc) = (numer.col_as_slice_mut(j), denom.col_as_slice_mut(j));
        for (p, q) in nc.iter_mut().zip(dc.iter_mut()) {
            let (vv, uu) = (*p, *q);
            *p = vv + uu;
            *q = vv - uu;
        }
    }
    let lu = denom.partial_piv_lu();
    drop(denom);
    lu.solve_in_place(numer.as_mut());
    drop(lu);

    let mut r = numer;
    for _ in 0..squarings {
        r = product(r.as_ref(), r.as_ref());
    }
    if !(0..n).all(|j| r.col_as_slice(j).iter().all(|v| v.is_finite())) {
        return Err(Error::NonFinite {
            context: "expm result",
            step: squarings as usize,
        });
    }
    Ok(r)
}
