//! Dense linear-algebra kernels shared by every solver in the crate.
//!
//! All routines work on `nalgebra` dynamic matrices. The sizes involved are
//! small (a few dozen phases at most), so everything is direct: LU with
//! partial pivoting, Kronecker-vectorized Sylvester solves, and a Padé(13)
//! scaling-and-squaring exponential.

use nalgebra::{DMatrix, DVector, RowDVector};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type RowVector = RowDVector<f64>;
pub type Vector = DVector<f64>;

/// Relative pivot threshold below which a system is declared singular.
pub const PIVOT_TOL: f64 = 1e-14;

/// Default cap on the Kronecker system size `p*q` of a Sylvester solve.
pub const SYLVESTER_CAP: usize = 4096;

/// Maximum absolute row sum.
pub fn norm_inf(m: &Matrix) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Maximum absolute column sum.
pub fn norm_1(m: &Matrix) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn max_abs(m: &Matrix) -> f64 {
    m.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

pub fn ensure_finite(m: &Matrix, what: &'static str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// Submatrix with the given row and column indices, in the given order.
pub fn select(m: &Matrix, rows: &[usize], cols: &[usize]) -> Matrix {
    Matrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

pub fn diag(values: &[f64]) -> Matrix {
    Matrix::from_diagonal(&Vector::from_column_slice(values))
}

/// Diagonal matrix of `1/|v_i|`.
pub fn abs_inv_diag(values: &[f64]) -> Matrix {
    Matrix::from_diagonal(&Vector::from_iterator(
        values.len(),
        values.iter().map(|v| 1.0 / v.abs()),
    ))
}

pub fn ones(n: usize) -> Vector {
    Vector::from_element(n, 1.0)
}

/// Row sums as a column vector.
pub fn row_sums(m: &Matrix) -> Vector {
    m * ones(m.ncols())
}

/// Stacks `top` over `bottom`. Either may have zero rows.
pub fn vstack(top: &Matrix, bottom: &Matrix) -> Matrix {
    debug_assert_eq!(top.ncols(), bottom.ncols());
    let mut out = Matrix::zeros(top.nrows() + bottom.nrows(), top.ncols());
    out.rows_mut(0, top.nrows()).copy_from(top);
    out.rows_mut(top.nrows(), bottom.nrows()).copy_from(bottom);
    out
}

/// Places `left` beside `right`. Either may have zero columns.
pub fn hstack(left: &Matrix, right: &Matrix) -> Matrix {
    debug_assert_eq!(left.nrows(), right.nrows());
    let mut out = Matrix::zeros(left.nrows(), left.ncols() + right.ncols());
    out.columns_mut(0, left.ncols()).copy_from(left);
    out.columns_mut(left.ncols(), right.ncols())
        .copy_from(right);
    out
}

struct Lu {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl Lu {
    fn new(m: &Matrix, what: &'static str) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimensionMismatch(format!(
                "{what}: matrix is {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let scale = norm_inf(m);
        let lu = m.clone().lu();
        let u = lu.u();
        let min_pivot = u
            .diagonal()
            .iter()
            .fold(f64::INFINITY, |a, v| a.min(v.abs()));
        if m.nrows() > 0 && (scale == 0.0 || min_pivot <= PIVOT_TOL * scale) {
            return Err(Error::Singular(what));
        }
        Ok(Lu { lu })
    }

    fn solve(&self, b: &Matrix, what: &'static str) -> Result<Matrix> {
        self.lu.solve(b).ok_or(Error::Singular(what))
    }
}

/// Solves `M X = B` by LU with partial pivoting.
pub fn solve_linear(m: &Matrix, b: &Matrix) -> Result<Matrix> {
    if m.nrows() != b.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "solve_linear: {}x{} system with {} right-hand rows",
            m.nrows(),
            m.ncols(),
            b.nrows()
        )));
    }
    if m.nrows() == 0 {
        return Ok(Matrix::zeros(0, b.ncols()));
    }
    Lu::new(m, "solve_linear")?.solve(b, "solve_linear")
}

/// Solves `X M = B` (right division).
pub fn solve_right(b: &Matrix, m: &Matrix) -> Result<Matrix> {
    Ok(solve_linear(&m.transpose(), &b.transpose())?.transpose())
}

pub fn inverse(m: &Matrix) -> Result<Matrix> {
    solve_linear(m, &Matrix::identity(m.nrows(), m.nrows()))
}

/// Solves the Sylvester equation `K X + X U = H`.
///
/// The equation is vectorized column-major as `(I ⊗ K + Uᵀ ⊗ I) vec X = vec H`
/// and solved with one LU factorization of the row-equilibrated system,
/// followed by one step of iterative refinement on the same factors.
pub fn solve_sylvester(k: &Matrix, u: &Matrix, h: &Matrix) -> Result<Matrix> {
    solve_sylvester_capped(k, u, h, SYLVESTER_CAP)
}

pub fn solve_sylvester_capped(k: &Matrix, u: &Matrix, h: &Matrix, cap: usize) -> Result<Matrix> {
    let p = k.nrows();
    let q = u.nrows();
    if !k.is_square() || !u.is_square() || h.nrows() != p || h.ncols() != q {
        return Err(Error::DimensionMismatch(format!(
            "sylvester: K {}x{}, U {}x{}, H {}x{}",
            k.nrows(),
            k.ncols(),
            u.nrows(),
            u.ncols(),
            h.nrows(),
            h.ncols()
        )));
    }
    let n = p * q;
    if n > cap {
        return Err(Error::SizeLimit { size: n, cap });
    }
    if n == 0 {
        return Ok(Matrix::zeros(p, q));
    }
    // Column-major index of X[(i, j)] is i + j*p.
    let mut big = Matrix::zeros(n, n);
    for j in 0..q {
        for i in 0..p {
            let row = i + j * p;
            for l in 0..p {
                big[(row, l + j * p)] += k[(i, l)];
            }
            for l in 0..q {
                big[(row, i + l * p)] += u[(l, j)];
            }
        }
    }
    // Rows of K for phases with very small rates are huge; equilibrate so
    // partial pivoting does not let them swamp the rest.
    let mut rhs = Matrix::from_column_slice(n, 1, h.as_slice());
    for row in 0..n {
        let m = big.row(row).iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if m > 0.0 {
            big.row_mut(row).scale_mut(1.0 / m);
            rhs[row] /= m;
        }
    }
    let lu = Lu::new(&big, "solve_sylvester")?;
    let mut x = lu.solve(&rhs, "solve_sylvester")?;
    let r = &rhs - &big * &x;
    x += lu.solve(&r, "solve_sylvester")?;
    Ok(Matrix::from_column_slice(p, q, x.as_slice()))
}

/// `‖K X + X U − H‖∞`.
pub fn sylvester_residual(k: &Matrix, u: &Matrix, h: &Matrix, x: &Matrix) -> f64 {
    norm_inf(&(k * x + x * u - h))
}

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

const THETA13: f64 = 5.371920351148152;

/// Matrix exponential by scaling and squaring with the diagonal Padé(13)
/// approximant; the number of squarings comes from `‖M‖₁`.
pub fn matrix_exp(m: &Matrix) -> Matrix {
    let n = m.nrows();
    assert!(m.is_square(), "matrix_exp needs a square matrix");
    if n == 0 {
        return Matrix::zeros(0, 0);
    }
    let norm = norm_1(m);
    let squarings = if norm > THETA13 {
        (norm / THETA13).log2().ceil().max(0.0) as i32
    } else {
        0
    };
    let a = m * 2f64.powi(-squarings);
    let b = &PADE13;
    let id = Matrix::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;

    let u_inner = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9]);
    let u = &a * (u_inner + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &id * b[1]);
    let v_inner = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8]);
    let v = v_inner + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &id * b[0];

    let numer = &v + &u;
    let denom = &v - &u;
    // The Padé denominator is nonsingular for ‖A‖₁ ≤ θ13.
    let mut r = denom
        .lu()
        .solve(&numer)
        .expect("Padé denominator is nonsingular after scaling");
    for _ in 0..squarings {
        r = &r * &r;
    }
    r
}

/// Group inverse of a rank-(n−1) generator-type matrix with stationary row
/// vector `pi`: `M# = (M − 1π)⁻¹ + 1π`.
///
/// Passing `pi = 0` for a nonsingular `M` returns `M⁻¹`.
pub fn group_inverse(m: &Matrix, pi: &RowVector) -> Result<Matrix> {
    let n = m.nrows();
    if !m.is_square() || pi.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "group_inverse: {}x{} matrix with vector of length {}",
            m.nrows(),
            m.ncols(),
            pi.len()
        )));
    }
    let one_pi = ones(n) * pi;
    let shifted = m - &one_pi;
    let inv = inverse(&shifted).map_err(|_| Error::Singular("group_inverse"))?;
    Ok(inv + one_pi)
}

/// Left null vector of an irreducible generator, normalized to sum 1.
///
/// Solves the bordered system obtained from `Mᵀ πᵀ = 0` by replacing the
/// last equation with `1ᵀ πᵀ = 1`.
pub fn stationary_vector(m: &Matrix) -> Result<RowVector> {
    let n = m.nrows();
    if !m.is_square() || n == 0 {
        return Err(Error::DimensionMismatch(format!(
            "stationary_vector: {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let mut sys = m.transpose();
    for j in 0..n {
        sys[(n - 1, j)] = 1.0;
    }
    let mut rhs = Matrix::zeros(n, 1);
    rhs[(n - 1, 0)] = 1.0;
    let x = solve_linear(&sys, &rhs).map_err(|_| Error::Singular("stationary vector"))?;
    Ok(RowVector::from_iterator(n, x.iter().copied()))
}

/// Outcome of the spectral-sign test, with the radius estimate of `e^M`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrumCheck {
    pub stable: bool,
    pub radius: f64,
    pub squarings: usize,
}

pub const SPECTRUM_ITERATIONS: usize = 200;
pub const SPECTRUM_MARGIN: f64 = 1e-8;

/// Decides whether every eigenvalue of `M` has negative real part.
///
/// Works on `E = e^M`, whose spectral radius is below 1 exactly when the
/// spectral abscissa of `M` is negative. `E` is squared repeatedly (at most
/// 200 times, rescaling to avoid overflow) while tracking
/// `log ‖E^(2^j)‖∞`; as soon as that norm drops below 1 the radius is
/// certified below 1. Otherwise the radius estimate `‖E^(2^j)‖^(1/2^j)`
/// after the last squaring decides, and a value within `1e-8` of 1 is
/// reported as `Inconclusive`.
pub fn stable_spectrum(m: &Matrix) -> Result<bool> {
    spectrum_check(m).map(|c| c.stable)
}

pub fn spectrum_check(m: &Matrix) -> Result<SpectrumCheck> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch(
            "stable_spectrum: not square".into(),
        ));
    }
    if m.nrows() == 0 {
        return Ok(SpectrumCheck {
            stable: true,
            radius: 0.0,
            squarings: 0,
        });
    }
    let mut e = matrix_exp(m);
    // log ‖e^{2^j M}‖ = log_scale + log ‖e‖ with e kept normalized.
    let mut log_scale = 0.0_f64;
    let mut log_radius = 0.0_f64;
    for j in 0..=SPECTRUM_ITERATIONS {
        let nrm = norm_inf(&e);
        if nrm == 0.0 {
            return Ok(SpectrumCheck {
                stable: true,
                radius: 0.0,
                squarings: j,
            });
        }
        let log_norm = log_scale + nrm.ln();
        log_radius = log_norm / 2f64.powi(j as i32);
        if log_norm < 0.0 && log_radius < -SPECTRUM_MARGIN {
            return Ok(SpectrumCheck {
                stable: true,
                radius: log_radius.exp(),
                squarings: j,
            });
        }
        if j == SPECTRUM_ITERATIONS {
            break;
        }
        e /= nrm;
        log_scale = 2.0 * log_norm;
        e = &e * &e;
    }
    let radius = log_radius.exp();
    if (radius - 1.0).abs() <= SPECTRUM_MARGIN {
        Err(Error::Inconclusive { radius })
    } else {
        Ok(SpectrumCheck {
            stable: radius < 1.0,
            radius,
            squarings: SPECTRUM_ITERATIONS,
        })
    }
}

/// `∫₀ˣ e^{K(x−s)} D e^{Ks} ds`, read off the upper-right block of
/// `exp([[K, D], [0, K]] x)`.
pub fn conv_integral(k: &Matrix, d: &Matrix, x: f64) -> Matrix {
    let p = k.nrows();
    assert!(k.is_square() && d.nrows() == p && d.ncols() == p);
    let mut big = Matrix::zeros(2 * p, 2 * p);
    big.view_mut((0, 0), (p, p)).copy_from(&(k * x));
    big.view_mut((0, p), (p, p)).copy_from(&(d * x));
    big.view_mut((p, p), (p, p)).copy_from(&(k * x));
    let e = matrix_exp(&big);
    e.view((0, p), (p, p)).into_owned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx_eq::*;

    mod approx_eq {
        pub fn close(a: f64, b: f64, tol: f64) -> bool {
            (a - b).abs() <= tol
        }
    }

    fn m(rows: usize, cols: usize, v: &[f64]) -> Matrix {
        Matrix::from_row_slice(rows, cols, v)
    }

    #[test]
    fn identity_solve_returns_rhs() {
        let b = m(3, 2, &[1.0, 2.0, -3.0, 4.5, 0.25, 7.0]);
        let x = solve_linear(&Matrix::identity(3, 3), &b).unwrap();
        assert_eq!(x, b);
    }

    #[test]
    fn diagonal_solve() {
        let x = solve_linear(&m(2, 2, &[2.0, 0.0, 0.0, 4.0]), &m(2, 1, &[2.0, 8.0])).unwrap();
        assert!(close(x[(0, 0)], 1.0, 1e-15) && close(x[(1, 0)], 2.0, 1e-15));
    }

    #[test]
    fn singular_solve_is_rejected() {
        let err = solve_linear(&m(2, 2, &[1.0, 2.0, 2.0, 4.0]), &m(2, 1, &[1.0, 1.0]));
        assert!(matches!(err, Err(Error::Singular(_))));
    }

    #[test]
    fn scalar_sylvester() {
        let x = solve_sylvester(&m(1, 1, &[-2.0]), &m(1, 1, &[-3.0]), &m(1, 1, &[5.0])).unwrap();
        assert!(close(x[(0, 0)], -1.0, 1e-15));
    }

    #[test]
    fn zero_rhs_sylvester() {
        let k = m(2, 2, &[-3.0, 1.0, 0.5, -2.0]);
        let u = m(3, 3, &[-1.0, 0.5, 0.5, 0.2, -0.4, 0.2, 0.0, 1.0, -1.0]);
        let x = solve_sylvester(&k, &u, &Matrix::zeros(2, 3)).unwrap();
        assert_eq!(max_abs(&x), 0.0);
    }

    #[test]
    fn sylvester_size_cap() {
        let k = Matrix::identity(3, 3) * -1.0;
        let u = Matrix::identity(3, 3) * -1.0;
        let err = solve_sylvester_capped(&k, &u, &Matrix::zeros(3, 3), 8);
        assert_eq!(err, Err(Error::SizeLimit { size: 9, cap: 8 }));
    }

    #[test]
    fn sylvester_common_eigenvalue_is_singular() {
        // spec(K) = {1}, spec(-U) = {1}
        let err = solve_sylvester(&m(1, 1, &[1.0]), &m(1, 1, &[-1.0]), &m(1, 1, &[1.0]));
        assert!(matches!(err, Err(Error::Singular(_))));
    }

    #[test]
    fn exp_of_zero_and_diagonal() {
        assert_eq!(matrix_exp(&Matrix::zeros(3, 3)), Matrix::identity(3, 3));
        let e = matrix_exp(&diag(&[0.3, -2.0]));
        assert!(close(e[(0, 0)], 0.3f64.exp(), 1e-15));
        assert!(close(e[(1, 1)], (-2.0f64).exp(), 1e-15));
        assert_eq!(e[(0, 1)], 0.0);
    }

    #[test]
    fn exp_of_nilpotent() {
        let e = matrix_exp(&m(2, 2, &[0.0, 1.0, 0.0, 0.0]));
        assert_eq!(e, m(2, 2, &[1.0, 1.0, 0.0, 1.0]));
    }

    #[test]
    fn exp_large_norm_uses_squaring() {
        let e = matrix_exp(&diag(&[-40.0, 12.0]));
        assert!(((e[(1, 1)] - 12f64.exp()) / 12f64.exp()).abs() < 1e-13);
        assert!(((e[(0, 0)] - (-40f64).exp()) / (-40f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn group_inverse_two_state() {
        let g = m(2, 2, &[-1.0, 1.0, 1.0, -1.0]);
        let pi = RowVector::from_row_slice(&[0.5, 0.5]);
        let gi = group_inverse(&g, &pi).unwrap();
        let expected = &g / 4.0;
        assert!(max_abs(&(gi - expected)) < 1e-15);
    }

    #[test]
    fn group_inverse_of_invertible_is_inverse() {
        let a = m(2, 2, &[3.0, 1.0, 1.0, 2.0]);
        let gi = group_inverse(&a, &RowVector::zeros(2)).unwrap();
        assert!(max_abs(&(&a * gi - Matrix::identity(2, 2))) < 1e-15);
    }

    #[test]
    fn spectrum_of_negative_identity_is_stable() {
        assert_eq!(stable_spectrum(&(Matrix::identity(3, 3) * -1.0)), Ok(true));
    }

    #[test]
    fn spectrum_of_zero_is_inconclusive() {
        assert!(matches!(
            stable_spectrum(&Matrix::zeros(1, 1)),
            Err(Error::Inconclusive { .. })
        ));
    }

    #[test]
    fn spectrum_of_unstable_matrix() {
        assert_eq!(
            stable_spectrum(&m(2, 2, &[-1.0, 5.0, 0.0, 0.01])),
            Ok(false)
        );
    }

    #[test]
    fn spectrum_with_transient_growth_but_stable() {
        // highly non-normal: ‖e^{tM}‖ grows before decaying
        assert_eq!(
            stable_spectrum(&m(2, 2, &[-0.01, 100.0, 0.0, -0.02])),
            Ok(true)
        );
    }

    #[test]
    fn conv_integral_edge_cases() {
        let k = m(2, 2, &[-1.0, 0.3, 0.2, -2.0]);
        let d = m(2, 2, &[1.0, 2.0, -1.0, 0.5]);
        assert!(max_abs(&conv_integral(&k, &d, 0.0)) < 1e-16);
        let l = conv_integral(&Matrix::zeros(2, 2), &d, 1.7);
        assert!(max_abs(&(l - &d * 1.7)) < 1e-14);
        let s = conv_integral(&m(1, 1, &[-1.0]), &m(1, 1, &[1.0]), 1.0);
        assert!(close(s[(0, 0)], (-1f64).exp(), 1e-15));
    }

    #[test]
    fn stationary_vector_of_symmetric_chain() {
        let xi = stationary_vector(&m(2, 2, &[-1.0, 1.0, 1.0, -1.0])).unwrap();
        assert!(close(xi[0], 0.5, 1e-15) && close(xi[1], 0.5, 1e-15));
    }
}
