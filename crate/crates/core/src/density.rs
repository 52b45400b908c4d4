//! Stationary density of the reflected level and its first-order
//! correction under a generator perturbation.
//!
//! The joint stationary law has atoms `[0, p₋, p₀]` at level zero and, for
//! `x > 0`, the density `π(x) = q e^{Kx} R` with
//! `R = [C₊⁻¹, Ψ|C₋⁻¹|, Θ]` (columns `S₊`, `S₋`, `S₀`).

use crate::error::{Error, Result};
use crate::model::{censor_zero_phases, mean_drift, neg_inv_a00, FluidModel, Side};
use crate::numerics::{self, Matrix, RowVector, Vector};
use crate::perturb::{censored_derivative, Direction, PerturbationSpec};
use crate::riccati::PsiSolution;

#[derive(Debug, Clone, PartialEq)]
pub struct StationaryLaw {
    pub k: Matrix,
    /// `Θ = (C₊⁻¹A₊₀ + Ψ|C₋⁻¹|A₋₀)(−A₀₀)⁻¹`.
    pub theta: Matrix,
    pub q: RowVector,
    pub p_minus: RowVector,
    pub p_zero: RowVector,
    /// `R = [C₊⁻¹, Ψ|C₋⁻¹|, Θ]`, columns ordered `S₊, S₋, S₀`.
    pub bracket: Matrix,
    /// Original phase index of each column of `bracket`.
    pub columns: Vec<usize>,
    /// Generator of the level-zero boundary chain on `S₋ ∪ S₀`.
    pub boundary: Matrix,
}

impl StationaryLaw {
    /// Places a row vector laid out like `bracket` into original phase order.
    pub fn to_original(&self, v: &RowVector) -> RowVector {
        let mut out = RowVector::zeros(v.len());
        for (j, &i) in self.columns.iter().enumerate() {
            out[i] = v[j];
        }
        out
    }

    /// Probability atoms at level zero per phase, original order.
    pub fn atoms(&self) -> RowVector {
        let np = self.q.len();
        let mut v = RowVector::zeros(self.columns.len());
        for (j, x) in self.p_minus.iter().chain(self.p_zero.iter()).enumerate() {
            v[np + j] = *x;
        }
        self.to_original(&v)
    }

    /// `∫₀^∞ π(x) dx` per phase, original order.
    pub fn integrated_density(&self) -> Result<RowVector> {
        let neg_k_inv = numerics::inverse(&(-&self.k))?;
        Ok(self.to_original(&(&self.q * neg_k_inv * &self.bracket)))
    }
}

fn boundary_parts(
    model: &FluidModel,
    psi: &Matrix,
) -> (Matrix, Vec<usize>, Vec<usize>, Vec<usize>) {
    let ip = model.indices(Side::Plus);
    let iz = model.indices(Side::Zero);
    let im = model.indices(Side::Minus);
    let a = model.a();
    let mut lower: Vec<usize> = im.clone();
    lower.extend(&iz);
    // [A₋₋ + A₋₊Ψ, A₋₀; A₀₋ + A₀₊Ψ, A₀₀]
    let mut m = numerics::select(a, &lower, &lower);
    let down = numerics::select(a, &lower, &ip) * psi;
    for (r, _) in lower.iter().enumerate() {
        for c in 0..im.len() {
            m[(r, c)] += down[(r, c)];
        }
    }
    (m, ip, iz, im)
}

pub fn stationary_law(model: &FluidModel, sol: &PsiSolution) -> Result<StationaryLaw> {
    let drift = mean_drift(model)?;
    if drift >= 0.0 {
        return Err(Error::NotRecurrent { drift });
    }
    let psi = &sol.psi;
    let (m, ip, iz, im) = boundary_parts(model, psi);
    let a = model.a();
    let cp = model.c_plus_inv();
    let cm = model.c_minus_abs_inv();
    let theta = if iz.is_empty() {
        Matrix::zeros(ip.len(), 0)
    } else {
        (&cp * numerics::select(a, &ip, &iz) + psi * &cm * numerics::select(a, &im, &iz))
            * neg_inv_a00(model)?
    };
    let bracket = numerics::hstack(&numerics::hstack(&cp, &(psi * &cm)), &theta);

    let p_hat = numerics::stationary_vector(&m).map_err(|_| Error::SingularNormalization)?;
    let mut lower = im.clone();
    lower.extend(&iz);
    let q_hat = &p_hat * numerics::select(a, &lower, &ip);
    let neg_k_inv = numerics::inverse(&(-&sol.k)).map_err(|_| Error::SingularNormalization)?;
    let ones = numerics::ones(bracket.ncols());
    let mass = p_hat.sum() + (&q_hat * &neg_k_inv * &bracket * &ones)[0];
    if !mass.is_finite() || mass <= 0.0 {
        return Err(Error::SingularNormalization);
    }
    let p = p_hat / mass;
    let q = q_hat / mass;

    let mut columns: Vec<usize> = ip.iter().map(|&k| model.perm()[k]).collect();
    columns.extend(im.iter().map(|&k| model.perm()[k]));
    columns.extend(iz.iter().map(|&k| model.perm()[k]));

    Ok(StationaryLaw {
        k: sol.k.clone(),
        theta,
        q,
        p_minus: p.columns(0, im.len()).into_owned(),
        p_zero: p.columns(im.len(), iz.len()).into_owned(),
        bracket,
        columns,
        boundary: m,
    })
}

/// `π(x)` in original phase order; zero for `x < 0`.
pub fn density_at(law: &StationaryLaw, x: f64) -> RowVector {
    if x < 0.0 {
        return RowVector::zeros(law.columns.len());
    }
    let v = &law.q * numerics::matrix_exp(&(&law.k * x)) * &law.bracket;
    law.to_original(&v)
}

/// Atoms plus integrated density; equals 1 up to rounding.
pub fn total_mass(law: &StationaryLaw) -> Result<f64> {
    Ok(law.atoms().sum() + law.integrated_density()?.sum())
}

/// First-order companions of a [`StationaryLaw`] along `A + εÃ`.
#[derive(Debug, Clone, PartialEq)]
pub struct FirstOrderLaw {
    pub k1: Matrix,
    pub theta1: Matrix,
    pub q1: RowVector,
    pub p1_minus: RowVector,
    pub p1_zero: RowVector,
    /// `R⁽¹⁾ = [0, Ψ⁽¹⁾|C₋⁻¹|, Θ⁽¹⁾]`.
    pub bracket1: Matrix,
    /// Residual of the Poisson equation `p⁽¹⁾M = −pM⁽¹⁾`.
    pub poisson_residual: f64,
}

impl FirstOrderLaw {
    /// `L⁽¹⁾(x) = ∫₀ˣ e^{K(x−s)}K⁽¹⁾e^{Ks} ds`.
    pub fn l1(&self, law: &StationaryLaw, x: f64) -> Matrix {
        numerics::conv_integral(&law.k, &self.k1, x)
    }
}

/// Builds the first-order law from `Ψ⁽¹⁾` of a generator perturbation.
///
/// `(p₋⁽¹⁾, p₀⁽¹⁾) = −pM⁽¹⁾M^# + c·p`, where `M` is the boundary generator,
/// `M^#` its group inverse and the scalar `c` makes the derivative of the
/// total mass vanish.
pub fn first_order_law(
    model: &FluidModel,
    sol: &PsiSolution,
    law: &StationaryLaw,
    spec: &PerturbationSpec,
    psi1: &Matrix,
) -> Result<FirstOrderLaw> {
    let Direction::Generator(at_orig) = spec.direction() else {
        return Err(Error::NotGeneratorKind);
    };
    let perm = model.perm();
    let at = Matrix::from_fn(model.n(), model.n(), |i, j| at_orig[(perm[i], perm[j])]);
    let psi = &sol.psi;
    let ip = model.indices(Side::Plus);
    let iz = model.indices(Side::Zero);
    let im = model.indices(Side::Minus);
    let a = model.a();
    let sa = |r: &[usize], c: &[usize]| numerics::select(a, r, c);
    let st = |r: &[usize], c: &[usize]| numerics::select(&at, r, c);
    let cp = model.c_plus_inv();
    let cm = model.c_minus_abs_inv();

    let q = censor_zero_phases(model)?;
    let qt = censored_derivative(model, &at)?;
    let k1 = &cp * &qt.q_pp + psi1 * &cm * &q.q_mp + psi * &cm * &qt.q_mp;

    let theta1 = if iz.is_empty() {
        Matrix::zeros(ip.len(), 0)
    } else {
        let n = neg_inv_a00(model)?;
        (&cp * st(&ip, &iz) + psi1 * &cm * sa(&im, &iz) + psi * &cm * st(&im, &iz)) * &n
            + (&cp * sa(&ip, &iz) + psi * &cm * sa(&im, &iz)) * &n * st(&iz, &iz) * &n
    };
    let bracket1 = numerics::hstack(
        &numerics::hstack(&Matrix::zeros(ip.len(), ip.len()), &(psi1 * &cm)),
        &theta1,
    );

    let mut lower = im.clone();
    lower.extend(&iz);
    let mut m1 = st(&lower, &lower);
    let down1 = st(&lower, &ip) * psi + sa(&lower, &ip) * psi1;
    for r in 0..lower.len() {
        for c in 0..im.len() {
            m1[(r, c)] += down1[(r, c)];
        }
    }

    let p = RowVector::from_iterator(
        law.p_minus.len() + law.p_zero.len(),
        law.p_minus.iter().chain(law.p_zero.iter()).copied(),
    );
    let p_norm = &p / p.sum();
    let m_sharp = numerics::group_inverse(&law.boundary, &p_norm)?;
    let base = -(&p * &m1 * m_sharp);

    let a_lp = sa(&lower, &ip);
    let at_lp = st(&lower, &ip);
    let q_base = &base * &a_lp + &p * &at_lp;

    let neg_k_inv = numerics::inverse(&(-&law.k))?;
    let ones: Vector = numerics::ones(law.bracket.ncols());
    let r1 = &law.bracket * &ones;
    let dmass0 = base.sum()
        + (&q_base * &neg_k_inv * &r1)[0]
        + (&law.q * &neg_k_inv * &k1 * &neg_k_inv * &r1)[0]
        + (&law.q * &neg_k_inv * &bracket1 * &ones)[0];
    // Adding c·p to p⁽¹⁾ adds c·q to q⁽¹⁾ and c to the mass derivative.
    let c = -dmass0;
    let p1 = base + &p * c;
    let q1 = q_base + &law.q * c;

    let poisson_residual = (&p1 * &law.boundary + &p * &m1)
        .iter()
        .fold(0.0_f64, |acc, v| acc.max(v.abs()));

    Ok(FirstOrderLaw {
        k1,
        theta1,
        q1,
        p1_minus: p1.columns(0, im.len()).into_owned(),
        p1_zero: p1.columns(im.len(), iz.len()).into_owned(),
        bracket1,
        poisson_residual,
    })
}

/// `π⁽¹⁾(x) = q e^{Kx} R⁽¹⁾ + (q⁽¹⁾e^{Kx} + qL⁽¹⁾(x)) R`, original order.
pub fn density1_at(fol: &FirstOrderLaw, law: &StationaryLaw, x: f64) -> RowVector {
    if x < 0.0 {
        return RowVector::zeros(law.columns.len());
    }
    let e = numerics::matrix_exp(&(&law.k * x));
    let l1 = fol.l1(law, x);
    let v = &law.q * &e * &fol.bracket1 + (&fol.q1 * &e + &law.q * l1) * &law.bracket;
    law.to_original(&v)
}

/// Derivative of the total mass along the perturbation; zero when the
/// normalization constant is right.
pub fn mass_derivative(law: &StationaryLaw, fol: &FirstOrderLaw) -> Result<f64> {
    let neg_k_inv = numerics::inverse(&(-&law.k))?;
    let ones = numerics::ones(law.bracket.ncols());
    let r1 = &law.bracket * &ones;
    Ok(fol.p1_minus.sum()
        + fol.p1_zero.sum()
        + (&fol.q1 * &neg_k_inv * &r1)[0]
        + (&law.q * &neg_k_inv * &fol.k1 * &neg_k_inv * &r1)[0]
        + (&law.q * &neg_k_inv * &fol.bracket1 * &ones)[0])
}
