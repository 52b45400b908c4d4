//! Fluid model definition, validation and the censored generator.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{self, Matrix, RowVector};

/// Relative tolerance on generator row sums.
pub const ROW_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Plus,
    Zero,
    Minus,
}

/// A validated Markov-modulated fluid model.
///
/// Internally the phases are stored in canonical order: positive rates
/// first, then zero rates, then negative rates, each group in increasing
/// original index. `perm[k]` is the original index of canonical phase `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct FluidModel {
    a: Matrix,
    c: Vec<f64>,
    n_plus: usize,
    n_zero: usize,
    n_minus: usize,
    perm: Vec<usize>,
    labels: Vec<String>,
}

impl FluidModel {
    pub fn n(&self) -> usize {
        self.c.len()
    }

    pub fn n_plus(&self) -> usize {
        self.n_plus
    }

    pub fn n_zero(&self) -> usize {
        self.n_zero
    }

    pub fn n_minus(&self) -> usize {
        self.n_minus
    }

    /// Generator in canonical order.
    pub fn a(&self) -> &Matrix {
        &self.a
    }

    /// Rates in canonical order.
    pub fn c(&self) -> &[f64] {
        &self.c
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    /// Labels in original order.
    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label_of_canonical(&self, k: usize) -> &str {
        &self.labels[self.perm[k]]
    }

    /// Canonical position of original phase `i`.
    pub fn canonical_index(&self, i: usize) -> usize {
        self.perm
            .iter()
            .position(|&p| p == i)
            .expect("phase index in range")
    }

    /// Canonical indices of one side of the partition.
    pub fn indices(&self, side: Side) -> Vec<usize> {
        let (start, len) = match side {
            Side::Plus => (0, self.n_plus),
            Side::Zero => (self.n_plus, self.n_zero),
            Side::Minus => (self.n_plus + self.n_zero, self.n_minus),
        };
        (start..start + len).collect()
    }

    /// Original indices of one side of the partition.
    pub fn original_indices(&self, side: Side) -> Vec<usize> {
        self.indices(side)
            .into_iter()
            .map(|k| self.perm[k])
            .collect()
    }

    pub fn block(&self, rows: Side, cols: Side) -> Matrix {
        numerics::select(&self.a, &self.indices(rows), &self.indices(cols))
    }

    pub fn rates(&self, side: Side) -> Vec<f64> {
        self.indices(side).into_iter().map(|k| self.c[k]).collect()
    }

    /// `C₊⁻¹`.
    pub fn c_plus_inv(&self) -> Matrix {
        numerics::abs_inv_diag(&self.rates(Side::Plus))
    }

    /// `|C₋⁻¹|`.
    pub fn c_minus_abs_inv(&self) -> Matrix {
        numerics::abs_inv_diag(&self.rates(Side::Minus))
    }

    /// Generator in the original phase order.
    pub fn original_a(&self) -> Matrix {
        let inv = self.inverse_perm();
        Matrix::from_fn(self.n(), self.n(), |i, j| self.a[(inv[i], inv[j])])
    }

    /// Rates in the original phase order.
    pub fn original_c(&self) -> Vec<f64> {
        let inv = self.inverse_perm();
        inv.iter().map(|&k| self.c[k]).collect()
    }

    /// `inv[i]` is the canonical position of original phase `i`.
    pub fn inverse_perm(&self) -> Vec<usize> {
        let mut inv = vec![0; self.n()];
        for (k, &i) in self.perm.iter().enumerate() {
            inv[i] = k;
        }
        inv
    }

    /// Reorders a canonical row vector into original order.
    pub fn to_original(&self, v: &RowVector) -> RowVector {
        let inv = self.inverse_perm();
        RowVector::from_iterator(self.n(), inv.iter().map(|&k| v[k]))
    }
}

/// Validates `(A, c)` and builds the canonical model. Labels default to the
/// 1-based phase numbers.
pub fn validate_model(a: &Matrix, c: &[f64]) -> Result<FluidModel> {
    validate_model_labeled(a, c, None)
}

pub fn validate_model_labeled(
    a: &Matrix,
    c: &[f64],
    labels: Option<Vec<String>>,
) -> Result<FluidModel> {
    let n = c.len();
    if n == 0 || !a.is_square() || a.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "A is {}x{}, c has length {}",
            a.nrows(),
            a.ncols(),
            n
        )));
    }
    if let Some(l) = &labels {
        if l.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for {} phases",
                l.len(),
                n
            )));
        }
    }
    numerics::ensure_finite(a, "A")?;
    if c.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("c"));
    }
    check_generator(a)?;
    check_irreducible(a)?;

    let mut perm: Vec<usize> = (0..n).filter(|&i| c[i] > 0.0).collect();
    let n_plus = perm.len();
    perm.extend((0..n).filter(|&i| c[i] == 0.0));
    let n_zero = perm.len() - n_plus;
    perm.extend((0..n).filter(|&i| c[i] < 0.0));
    let n_minus = n - n_plus - n_zero;

    Ok(FluidModel {
        a: Matrix::from_fn(n, n, |i, j| a[(perm[i], perm[j])]),
        c: perm.iter().map(|&i| c[i]).collect(),
        n_plus,
        n_zero,
        n_minus,
        perm,
        labels: labels.unwrap_or_else(|| (1..=n).map(|i| i.to_string()).collect()),
    })
}

fn check_generator(a: &Matrix) -> Result<()> {
    let scale = numerics::norm_inf(a);
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            if i != j && a[(i, j)] < 0.0 {
                return Err(Error::NotAGenerator(format!(
                    "negative off-diagonal entry A[{i}][{j}] = {}",
                    a[(i, j)]
                )));
            }
        }
        let s: f64 = a.row(i).sum();
        if s.abs() > ROW_SUM_TOL * scale {
            return Err(Error::NotAGenerator(format!("row {i} sums to {s:e}")));
        }
    }
    Ok(())
}

fn reachable(a: &Matrix, start: usize, forward: bool) -> Vec<bool> {
    let n = a.nrows();
    let mut seen = vec![false; n];
    let mut stack = vec![start];
    seen[start] = true;
    while let Some(i) = stack.pop() {
        for j in 0..n {
            let w = if forward { a[(i, j)] } else { a[(j, i)] };
            if i != j && w > 0.0 && !seen[j] {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    seen
}

fn check_irreducible(a: &Matrix) -> Result<()> {
    if let Some(to) = reachable(a, 0, true).iter().position(|s| !s) {
        return Err(Error::Reducible { from: 0, to });
    }
    if let Some(from) = reachable(a, 0, false).iter().position(|s| !s) {
        return Err(Error::Reducible { from, to: 0 });
    }
    Ok(())
}

/// Stationary distribution of the phase process, in original order.
pub fn stationary_phase_dist(model: &FluidModel) -> Result<RowVector> {
    let xi = numerics::stationary_vector(model.a())?;
    Ok(model.to_original(&xi))
}

/// `ξ·c`; negative exactly when the queue is positive recurrent.
pub fn mean_drift(model: &FluidModel) -> Result<f64> {
    let xi = numerics::stationary_vector(model.a())?;
    Ok(xi.iter().zip(model.c()).map(|(x, c)| x * c).sum())
}

/// Generator blocks on `S₊ ∪ S₋` after the zero-rate phases are eliminated.
#[derive(Debug, Clone, PartialEq)]
pub struct CensoredBlocks {
    pub q_pp: Matrix,
    pub q_pm: Matrix,
    pub q_mp: Matrix,
    pub q_mm: Matrix,
}

impl CensoredBlocks {
    /// The full censored generator `[Q₊₊ Q₊₋; Q₋₊ Q₋₋]`.
    pub fn generator(&self) -> Matrix {
        numerics::vstack(
            &numerics::hstack(&self.q_pp, &self.q_pm),
            &numerics::hstack(&self.q_mp, &self.q_mm),
        )
    }
}

/// `(−A₀₀)⁻¹`, or an empty matrix when `S₀ = ∅`.
pub fn neg_inv_a00(model: &FluidModel) -> Result<Matrix> {
    let a00 = model.block(Side::Zero, Side::Zero);
    numerics::inverse(&(-a00)).map_err(|_| Error::SingularBlock("A00"))
}

pub fn censor_zero_phases(model: &FluidModel) -> Result<CensoredBlocks> {
    use Side::*;
    let mut q_pp = model.block(Plus, Plus);
    let mut q_pm = model.block(Plus, Minus);
    let mut q_mp = model.block(Minus, Plus);
    let mut q_mm = model.block(Minus, Minus);
    if model.n_zero() > 0 {
        let n = neg_inv_a00(model)?;
        let left_p = model.block(Plus, Zero) * &n;
        let left_m = model.block(Minus, Zero) * &n;
        let to_p = model.block(Zero, Plus);
        let to_m = model.block(Zero, Minus);
        q_pp += &left_p * &to_p;
        q_pm += &left_p * &to_m;
        q_mp += &left_m * &to_p;
        q_mm += &left_m * &to_m;
    }
    Ok(CensoredBlocks {
        q_pp,
        q_pm,
        q_mp,
        q_mm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, v: &[f64]) -> Matrix {
        Matrix::from_row_slice(rows, v.len() / rows, v)
    }

    #[test]
    fn two_phase_model_partition() {
        let model = validate_model(&m(2, &[-1.0, 1.0, 1.0, -1.0]), &[1.0, -1.0]).unwrap();
        assert_eq!((model.n_plus(), model.n_zero(), model.n_minus()), (1, 0, 1));
        assert_eq!(model.original_indices(Side::Minus), vec![1]);
    }

    #[test]
    fn absorbing_state_is_reducible() {
        let err = validate_model(&m(2, &[-1.0, 1.0, 0.0, 0.0]), &[1.0, -1.0]).unwrap_err();
        assert!(matches!(err, Error::Reducible { .. }));
    }

    #[test]
    fn row_sum_violation() {
        let err = validate_model(&m(2, &[-1.0, 1.1, 1.0, -1.0]), &[1.0, -1.0]).unwrap_err();
        assert_eq!(err.code(), "NotAGenerator");
    }

    #[test]
    fn negative_off_diagonal() {
        let a = m(3, &[-1.0, 1.5, -0.5, 1.0, -2.0, 1.0, 1.0, 1.0, -2.0]);
        assert_eq!(
            validate_model(&a, &[1.0, 0.0, -1.0]).unwrap_err().code(),
            "NotAGenerator"
        );
    }

    #[test]
    fn dimension_mismatch() {
        let err = validate_model(&m(2, &[-1.0, 1.0, 1.0, -1.0]), &[1.0]).unwrap_err();
        assert_eq!(err.code(), "DimensionMismatch");
    }

    #[test]
    fn canonical_order_and_back() {
        let a = m(3, &[-2.0, 1.0, 1.0, 1.0, -2.0, 1.0, 1.0, 1.0, -2.0]);
        let model = validate_model(&a, &[-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(model.perm(), &[2, 1, 0]);
        assert_eq!(model.c(), &[2.0, 0.0, -1.0]);
        assert_eq!(model.original_a(), a);
        assert_eq!(model.original_c(), vec![-1.0, 0.0, 2.0]);
    }

    #[test]
    fn symmetric_two_state_distribution() {
        let model = validate_model(&m(2, &[-1.0, 1.0, 1.0, -1.0]), &[2.0, -1.0]).unwrap();
        let xi = stationary_phase_dist(&model).unwrap();
        assert!((xi[0] - 0.5).abs() < 1e-15);
        assert!((mean_drift(&model).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn censoring_three_phase() {
        let a = m(3, &[-2.0, 1.0, 1.0, 1.0, -2.0, 1.0, 1.0, 1.0, -2.0]);
        let q = censor_zero_phases(&validate_model(&a, &[1.0, 0.0, -1.0]).unwrap()).unwrap();
        assert!((q.q_pp[(0, 0)] + 1.5).abs() < 1e-15);
        assert!((q.q_pm[(0, 0)] - 1.5).abs() < 1e-15);
        assert!((q.q_mm[(0, 0)] + 1.5).abs() < 1e-15);
        assert!((q.q_mp[(0, 0)] - 1.5).abs() < 1e-15);
    }

    #[test]
    fn censoring_without_zero_phases_is_restriction() {
        let a = m(3, &[-2.0, 1.5, 0.5, 1.0, -2.0, 1.0, 0.25, 0.75, -1.0]);
        let model = validate_model(&a, &[1.0, 2.0, -1.0]).unwrap();
        let q = censor_zero_phases(&model).unwrap();
        assert_eq!(q.generator(), model.a().clone());
    }
}
