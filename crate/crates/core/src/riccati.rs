//! Newton solver for the first-return matrix Ψ and the matrices U and K.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{censor_zero_phases, CensoredBlocks, FluidModel};
use crate::numerics::{self, Matrix};
use crate::perturb::PerturbationSpec;

pub const DEFAULT_TOL: f64 = 1e-12;
pub const DEFAULT_MAX_NEWTON: usize = 50;
const MAX_HALVINGS: usize = 20;
const MAX_POLISH: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_newton: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            tol: DEFAULT_TOL,
            max_newton: DEFAULT_MAX_NEWTON,
        }
    }
}

/// Coefficients of `F(X) = R₀ + R₁X + XR₂ + XR₃X`.
///
/// For Ψ these are `C₊⁻¹Q₊₋`, `C₊⁻¹Q₊₊`, `|C₋⁻¹|Q₋₋` and `|C₋⁻¹|Q₋₊`.
#[derive(Debug, Clone)]
pub struct RiccatiCoefficients {
    pub r0: Matrix,
    pub r1: Matrix,
    pub r2: Matrix,
    pub r3: Matrix,
}

impl RiccatiCoefficients {
    pub fn from_rates(c_up_inv: &Matrix, c_down_inv: &Matrix, q: &CensoredBlocks) -> Self {
        RiccatiCoefficients {
            r0: c_up_inv * &q.q_pm,
            r1: c_up_inv * &q.q_pp,
            r2: c_down_inv * &q.q_mm,
            r3: c_down_inv * &q.q_mp,
        }
    }

    pub fn residual(&self, x: &Matrix) -> Matrix {
        &self.r0 + &self.r1 * x + x * &self.r2 + x * &self.r3 * x
    }

    /// `K(X) = R₁ + XR₃`.
    pub fn k(&self, x: &Matrix) -> Matrix {
        &self.r1 + x * &self.r3
    }

    /// `U(X) = R₂ + R₃X`.
    pub fn u(&self, x: &Matrix) -> Matrix {
        &self.r2 + &self.r3 * x
    }

    fn scale(&self) -> f64 {
        [&self.r0, &self.r1, &self.r2, &self.r3]
            .iter()
            .map(|m| numerics::norm_inf(m))
            .fold(1.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    pub x: Matrix,
    pub iterations: usize,
    pub residual: f64,
    /// `‖F‖∞` at the start and after every accepted damped step.
    pub history: Vec<f64>,
    /// `‖F‖∞` after each polishing step; may fluctuate at roundoff level.
    pub polish: Vec<f64>,
}

/// Minimal nonnegative solution of `F(X) = 0` by damped Newton from `X = 0`.
///
/// The stopping test is `‖F(X)‖∞ ≤ tol · max(1, max‖Rᵢ‖∞)`. Once it is met
/// up to three more full Newton steps are taken while the step length keeps
/// shrinking, unless a looser tolerance than the default was asked for. On ill-conditioned problems (phases with rates near zero) the
/// residual test alone stops several digits short of the attainable accuracy.
pub fn solve_riccati(coef: &RiccatiCoefficients, opts: &NewtonOptions) -> Result<RiccatiSolution> {
    let threshold = opts.tol * coef.scale();
    let mut x = Matrix::zeros(coef.r0.nrows(), coef.r0.ncols());
    let mut f = coef.residual(&x);
    let mut res = numerics::norm_inf(&f);
    let mut history = vec![res];
    let mut iterations = 0;
    let mut last_step = f64::INFINITY;
    let mut polish = Vec::new();

    while res > threshold {
        if iterations == opts.max_newton {
            return Err(Error::NoConvergence {
                iterations,
                residual: res,
            });
        }
        let delta = numerics::solve_sylvester(&coef.k(&x), &coef.u(&x), &(-&f))?;
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let trial = &x + &delta * step;
            let f_trial = coef.residual(&trial);
            let r_trial = numerics::norm_inf(&f_trial);
            if r_trial.is_finite() && r_trial <= res {
                accepted = Some((trial, f_trial, r_trial));
                break;
            }
            step *= 0.5;
        }
        let Some((nx, nf, nr)) = accepted else {
            return Err(Error::NoConvergence {
                iterations,
                residual: res,
            });
        };
        last_step = numerics::max_abs(&(&nx - &x));
        x = nx;
        f = nf;
        res = nr;
        history.push(res);
        iterations += 1;
    }

    // Polishing: the residual of rows with tiny rates stalls at a roundoff
    // floor well before X does, so further steps are judged by step length.
    let polish_steps = if opts.tol <= DEFAULT_TOL {
        MAX_POLISH
    } else {
        0
    };
    for _ in 0..polish_steps {
        if res == 0.0 {
            break;
        }
        let Ok(delta) = numerics::solve_sylvester(&coef.k(&x), &coef.u(&x), &(-&f)) else {
            break;
        };
        let size = numerics::max_abs(&delta);
        if size.is_nan() || size >= last_step {
            break;
        }
        let trial = &x + delta;
        let f_trial = coef.residual(&trial);
        let r_trial = numerics::norm_inf(&f_trial);
        if !r_trial.is_finite() || r_trial > 4.0 * res.max(threshold) {
            break;
        }
        x = trial;
        f = f_trial;
        res = r_trial;
        polish.push(res);
        iterations += 1;
        if size <= f64::EPSILON * numerics::max_abs(&x) {
            break;
        }
        last_step = size;
    }

    Ok(RiccatiSolution {
        x,
        iterations,
        residual: res,
        history,
        polish,
    })
}

/// Ψ together with `U`, `K` and solver diagnostics, in canonical order:
/// rows are the model's `S₊` phases, columns its `S₋` phases.
#[derive(Debug, Clone, PartialEq)]
pub struct PsiSolution {
    pub psi: Matrix,
    pub u: Matrix,
    pub k: Matrix,
    pub iterations: usize,
    pub residual: f64,
    pub history: Vec<f64>,
    pub polish: Vec<f64>,
}

pub fn psi_coefficients(model: &FluidModel) -> Result<RiccatiCoefficients> {
    let q = censor_zero_phases(model)?;
    Ok(RiccatiCoefficients::from_rates(
        &model.c_plus_inv(),
        &model.c_minus_abs_inv(),
        &q,
    ))
}

pub fn solve_psi(model: &FluidModel, opts: &NewtonOptions) -> Result<PsiSolution> {
    if model.n_plus() == 0 {
        return Err(Error::EmptySide("positive"));
    }
    if model.n_minus() == 0 {
        return Err(Error::EmptySide("negative"));
    }
    let coef = psi_coefficients(model)?;
    let sol = solve_riccati(&coef, opts)?;
    Ok(PsiSolution {
        u: coef.u(&sol.x),
        k: coef.k(&sol.x),
        psi: sol.x,
        iterations: sol.iterations,
        residual: sol.residual,
        history: sol.history,
        polish: sol.polish,
    })
}

/// `U = |C₋⁻¹|Q₋₋ + |C₋⁻¹|Q₋₊Ψ` and `K = C₊⁻¹Q₊₊ + Ψ|C₋⁻¹|Q₋₊`.
pub fn build_uk(model: &FluidModel, psi: &Matrix) -> Result<(Matrix, Matrix)> {
    if psi.nrows() != model.n_plus() || psi.ncols() != model.n_minus() {
        return Err(Error::DimensionMismatch(format!(
            "psi is {}x{}, model needs {}x{}",
            psi.nrows(),
            psi.ncols(),
            model.n_plus(),
            model.n_minus()
        )));
    }
    let coef = psi_coefficients(model)?;
    Ok((coef.u(psi), coef.k(psi)))
}

/// Solves the model perturbed by `eps` along `spec` from scratch.
///
/// The perturbed partition is rebuilt from the signs of the perturbed
/// rates, so migrating zero-rate phases join `S₊` or `S₋`. The returned
/// model carries the canonical order of the solution's rows and columns.
pub fn solve_psi_at(
    model: &FluidModel,
    spec: &PerturbationSpec,
    eps: f64,
    opts: &NewtonOptions,
) -> Result<(FluidModel, PsiSolution)> {
    let perturbed = spec.apply(model, eps)?;
    let sol = solve_psi(&perturbed, opts)?;
    Ok((perturbed, sol))
}
