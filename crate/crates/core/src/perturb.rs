//! First-order expansions of Ψ under generator and rate perturbations.
//!
//! A generator perturbation replaces `A` by `A + εÃ`; a rate perturbation
//! replaces `C` by `C + εC̃`. When `C̃` is nonzero on zero-rate phases those
//! phases migrate: phases with `c̃ > 0` (the set `S⊕`) join `S₊` and phases
//! with `c̃ < 0` (`S⊖`) join `S₋`, which changes the shape of Ψ. The
//! expansion `Ψ(ε) = Ψ̄ + εΨ⁽¹⁾ + O(ε²)` is then laid out on the perturbed
//! partition, rows `[S₊; S⊕]` and columns `[S⊖, S₋]`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{neg_inv_a00, validate_model_labeled, CensoredBlocks, FluidModel, Side};
use crate::numerics::{self, solve_sylvester, Matrix};
use crate::riccati::{solve_riccati, NewtonOptions, PsiSolution, RiccatiCoefficients};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    /// Generator perturbation `A + εÃ`.
    Generator,
    /// Rate perturbation with `C̃₀ = 0`.
    Unaffected,
    /// Every zero-rate phase gets a positive rate.
    ToPlus,
    /// Every zero-rate phase gets a negative rate.
    ToMinus,
    /// Zero-rate phases split between both signs.
    General,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Generator => "Generator",
            Regime::Unaffected => "Unaffected",
            Regime::ToPlus => "ToPlus",
            Regime::ToMinus => "ToMinus",
            Regime::General => "General",
        }
    }
}

/// Direction of the perturbation, in original phase order.
#[derive(Debug, Clone, PartialEq)]
pub enum Direction {
    Generator(Matrix),
    Rate(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationSpec {
    direction: Direction,
    regime: Regime,
    oplus: Vec<usize>,
    ominus: Vec<usize>,
}

impl PerturbationSpec {
    /// Generator direction `Ã` (original order). Rows must sum to zero and
    /// `Ã` may not be negative where `A` has a structural zero off the
    /// diagonal, so that `A + εÃ` is a generator for small `ε > 0`.
    pub fn generator(model: &FluidModel, a_tilde: Matrix) -> Result<Self> {
        let n = model.n();
        if a_tilde.nrows() != n || a_tilde.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "direction is {}x{}, model has {} phases",
                a_tilde.nrows(),
                a_tilde.ncols(),
                n
            )));
        }
        numerics::ensure_finite(&a_tilde, "perturbation direction")?;
        let a = model.original_a();
        let tol = crate::model::ROW_SUM_TOL * numerics::norm_inf(&a_tilde).max(1.0);
        for i in 0..n {
            let s: f64 = a_tilde.row(i).sum();
            if s.abs() > tol {
                return Err(Error::InvalidPerturbation(format!(
                    "row {i} of the direction sums to {s:e}"
                )));
            }
            for j in 0..n {
                if i != j && a[(i, j)] == 0.0 && a_tilde[(i, j)] < 0.0 {
                    return Err(Error::InvalidPerturbation(format!(
                        "direction entry ({i},{j}) is negative where A is zero"
                    )));
                }
            }
        }
        Ok(PerturbationSpec {
            direction: Direction::Generator(a_tilde),
            regime: Regime::Generator,
            oplus: Vec::new(),
            ominus: Vec::new(),
        })
    }

    /// Rate direction `c̃` (original order); the regime is derived from the
    /// signs of `c̃` on the zero-rate phases.
    pub fn rate(model: &FluidModel, c_tilde: Vec<f64>) -> Result<Self> {
        if c_tilde.len() != model.n() {
            return Err(Error::DimensionMismatch(format!(
                "rate direction has length {}, model has {} phases",
                c_tilde.len(),
                model.n()
            )));
        }
        if c_tilde.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("rate direction"));
        }
        let zero = model.original_indices(Side::Zero);
        let mut oplus: Vec<usize> = zero.iter().copied().filter(|&i| c_tilde[i] > 0.0).collect();
        let mut ominus: Vec<usize> = zero.iter().copied().filter(|&i| c_tilde[i] < 0.0).collect();
        oplus.sort_unstable();
        ominus.sort_unstable();
        let moved = oplus.len() + ominus.len();
        if moved != 0 && moved != zero.len() {
            return Err(Error::InvalidPerturbation(
                "rate direction is zero on some but not all zero-rate phases".into(),
            ));
        }
        let regime = match (oplus.is_empty(), ominus.is_empty()) {
            (true, true) => Regime::Unaffected,
            (false, true) => Regime::ToPlus,
            (true, false) => Regime::ToMinus,
            (false, false) => Regime::General,
        };
        Ok(PerturbationSpec {
            direction: Direction::Rate(c_tilde),
            regime,
            oplus,
            ominus,
        })
    }

    pub fn direction(&self) -> &Direction {
        &self.direction
    }

    pub fn regime(&self) -> Regime {
        self.regime
    }

    pub fn kind(&self) -> &'static str {
        match self.direction {
            Direction::Generator(_) => "generator",
            Direction::Rate(_) => "rate",
        }
    }

    /// Original indices of `S⊕`.
    pub fn oplus(&self) -> &[usize] {
        &self.oplus
    }

    /// Original indices of `S⊖`.
    pub fn ominus(&self) -> &[usize] {
        &self.ominus
    }

    /// Builds and validates the model at `ε`.
    pub fn apply(&self, model: &FluidModel, eps: f64) -> Result<FluidModel> {
        let invalid = |reason: String| Error::InvalidEpsilon { eps, reason };
        if !eps.is_finite() {
            return Err(invalid("not finite".into()));
        }
        let labels = Some(model.labels().to_vec());
        match &self.direction {
            Direction::Generator(at) => {
                let a = model.original_a() + at * eps;
                validate_model_labeled(&a, &model.original_c(), labels)
                    .map_err(|e| invalid(e.to_string()))
            }
            Direction::Rate(ct) => {
                let c0 = model.original_c();
                let c: Vec<f64> = c0.iter().zip(ct).map(|(c, t)| c + eps * t).collect();
                for i in 0..c.len() {
                    let want = if c0[i] > 0.0 || self.oplus.contains(&i) {
                        1.0
                    } else if c0[i] < 0.0 || self.ominus.contains(&i) {
                        -1.0
                    } else {
                        0.0
                    };
                    let ok = (want > 0.0 && c[i] > 0.0)
                        || (want < 0.0 && c[i] < 0.0)
                        || (want == 0.0 && c[i] == 0.0);
                    if !ok {
                        return Err(invalid(format!(
                            "perturbed rate of phase {} is {}, sign changes the partition",
                            i + 1,
                            c[i]
                        )));
                    }
                }
                validate_model_labeled(&model.original_a(), &c, labels)
                    .map_err(|e| invalid(e.to_string()))
            }
        }
    }

    fn a_tilde_canonical(&self, model: &FluidModel) -> Result<Matrix> {
        match &self.direction {
            Direction::Generator(at) => {
                let p = model.perm();
                Ok(Matrix::from_fn(model.n(), model.n(), |i, j| {
                    at[(p[i], p[j])]
                }))
            }
            Direction::Rate(_) => Err(Error::NotGeneratorKind),
        }
    }

    fn c_tilde_canonical(&self, model: &FluidModel) -> Vec<f64> {
        match &self.direction {
            Direction::Rate(ct) => model.perm().iter().map(|&i| ct[i]).collect(),
            Direction::Generator(_) => vec![0.0; model.n()],
        }
    }
}

/// Zeroth- and first-order terms of Ψ(ε).
#[derive(Debug, Clone, PartialEq)]
pub struct PsiExpansion {
    pub regime: Regime,
    pub psi_bar: Matrix,
    pub psi1: Matrix,
    /// Original phase index of each row: `S₊` then `S⊕`.
    pub row_phases: Vec<usize>,
    /// Original phase index of each column: `S⊖` then `S₋`.
    pub col_phases: Vec<usize>,
    pub n_plus: usize,
    pub n_oplus: usize,
    pub n_ominus: usize,
    pub n_minus: usize,
    /// Auxiliary blocks computed on the way.
    pub aux: BTreeMap<String, Matrix>,
}

impl PsiExpansion {
    /// `Ψ̄ + εΨ⁽¹⁾`.
    pub fn evaluate(&self, eps: f64) -> Matrix {
        &self.psi_bar + &self.psi1 * eps
    }
}

fn wrong_regime(expected: Regime, actual: Regime) -> Error {
    Error::WrongRegime {
        expected: expected.as_str(),
        actual: actual.as_str(),
    }
}

/// Canonical index sets and the pieces every expansion needs.
struct Setup<'a> {
    model: &'a FluidModel,
    ip: Vec<usize>,
    iz: Vec<usize>,
    im: Vec<usize>,
    iop: Vec<usize>,
    iom: Vec<usize>,
    ct: Vec<f64>,
    c_plus_inv: Matrix,
    c_minus: Matrix,
}

impl<'a> Setup<'a> {
    fn new(model: &'a FluidModel, spec: &PerturbationSpec) -> Self {
        let inv = model.inverse_perm();
        let canon = |v: &[usize]| {
            let mut out: Vec<usize> = v.iter().map(|&i| inv[i]).collect();
            out.sort_unstable();
            out
        };
        Setup {
            model,
            ip: model.indices(Side::Plus),
            iz: model.indices(Side::Zero),
            im: model.indices(Side::Minus),
            iop: canon(spec.oplus()),
            iom: canon(spec.ominus()),
            ct: spec.c_tilde_canonical(model),
            c_plus_inv: model.c_plus_inv(),
            c_minus: model.c_minus_abs_inv(),
        }
    }

    fn a(&self, rows: &[usize], cols: &[usize]) -> Matrix {
        numerics::select(self.model.a(), rows, cols)
    }

    fn ct_diag(&self, idx: &[usize]) -> Matrix {
        numerics::diag(&idx.iter().map(|&k| self.ct[k]).collect::<Vec<_>>())
    }

    fn ct_abs_inv(&self, idx: &[usize]) -> Matrix {
        numerics::abs_inv_diag(&idx.iter().map(|&k| self.ct[k]).collect::<Vec<_>>())
    }

    fn orig(&self, idx: &[usize]) -> Vec<usize> {
        idx.iter().map(|&k| self.model.perm()[k]).collect()
    }

    /// `−Ψ|C₋⁻¹|C̃₋U − C₊⁻¹C̃₊ΨU`, the part shared by every rate regime.
    fn rate_rhs(&self, sol: &PsiSolution) -> Matrix {
        let ctm = self.ct_diag(&self.im);
        let ctp = self.ct_diag(&self.ip);
        -(&sol.psi * &self.c_minus * ctm * &sol.u) - &self.c_plus_inv * ctp * &sol.psi * &sol.u
    }

    fn plain(&self, regime: Regime, sol: &PsiSolution, psi1: Matrix) -> PsiExpansion {
        PsiExpansion {
            regime,
            psi_bar: sol.psi.clone(),
            psi1,
            row_phases: self.orig(&self.ip),
            col_phases: self.orig(&self.im),
            n_plus: self.ip.len(),
            n_oplus: 0,
            n_ominus: 0,
            n_minus: self.im.len(),
            aux: BTreeMap::new(),
        }
    }
}

/// Derivative of the censored blocks along `Ã` (canonical order).
///
/// With `N = (−A₀₀)⁻¹`:
/// `Q̃ = Ã_{xy} + Ã_{x0}NA_{0y} + A_{x0}NÃ₀₀NA_{0y} + A_{x0}NÃ_{0y}`.
pub fn censored_derivative(model: &FluidModel, a_tilde: &Matrix) -> Result<CensoredBlocks> {
    let ip = model.indices(Side::Plus);
    let iz = model.indices(Side::Zero);
    let im = model.indices(Side::Minus);
    let a = model.a();
    let blk = |m: &Matrix, r: &[usize], c: &[usize]| numerics::select(m, r, c);
    let n = if iz.is_empty() {
        Matrix::zeros(0, 0)
    } else {
        neg_inv_a00(model)?
    };
    let at00 = blk(a_tilde, &iz, &iz);
    let one = |r: &[usize], c: &[usize]| {
        let mut q = blk(a_tilde, r, c);
        if !iz.is_empty() {
            let ax0n = blk(a, r, &iz) * &n;
            q += blk(a_tilde, r, &iz) * &n * blk(a, &iz, c);
            q += &ax0n * &at00 * &n * blk(a, &iz, c);
            q += &ax0n * blk(a_tilde, &iz, c);
        }
        q
    };
    Ok(CensoredBlocks {
        q_pp: one(&ip, &ip),
        q_pm: one(&ip, &im),
        q_mp: one(&im, &ip),
        q_mm: one(&im, &im),
    })
}

/// Ψ⁽¹⁾ for a generator perturbation: the solution of
/// `KX + XU = −C₊⁻¹Q̃₊₋ − C₊⁻¹Q̃₊₊Ψ − Ψ|C₋⁻¹|Q̃₋₋ − Ψ|C₋⁻¹|Q̃₋₊Ψ`.
pub fn psi1_generator(
    model: &FluidModel,
    sol: &PsiSolution,
    spec: &PerturbationSpec,
) -> Result<Matrix> {
    if spec.regime() != Regime::Generator {
        return Err(wrong_regime(Regime::Generator, spec.regime()));
    }
    let at = spec.a_tilde_canonical(model)?;
    let qt = censored_derivative(model, &at)?;
    let cp = model.c_plus_inv();
    let cm = model.c_minus_abs_inv();
    let psi = &sol.psi;
    let h = -(&cp * &qt.q_pm)
        - &cp * &qt.q_pp * psi
        - psi * &cm * &qt.q_mm
        - psi * &cm * &qt.q_mp * psi;
    solve_sylvester(&sol.k, &sol.u, &h)
}

/// Ψ⁽¹⁾ for a rate perturbation that leaves the zero-rate phases alone:
/// `KX + XU = −Ψ|C₋⁻¹|C̃₋U − C₊⁻¹C̃₊ΨU`.
pub fn psi1_rate_unaffected(
    model: &FluidModel,
    sol: &PsiSolution,
    spec: &PerturbationSpec,
) -> Result<Matrix> {
    if spec.regime() != Regime::Unaffected {
        return Err(wrong_regime(Regime::Unaffected, spec.regime()));
    }
    let s = Setup::new(model, spec);
    solve_sylvester(&sol.k, &sol.u, &s.rate_rhs(sol))
}

/// All zero-rate phases migrate to `S₊`.
pub fn expand_to_plus(
    model: &FluidModel,
    sol: &PsiSolution,
    spec: &PerturbationSpec,
) -> Result<PsiExpansion> {
    if spec.regime() != Regime::ToPlus {
        return Err(wrong_regime(Regime::ToPlus, spec.regime()));
    }
    let s = Setup::new(model, spec);
    let (ip, iz, im) = (&s.ip, &s.iz, &s.im);
    let psi = &sol.psi;
    let n = neg_inv_a00(model)?;
    let ct0 = s.ct_diag(iz);

    // Ψ⊕₋ = (−A⊕⊕)⁻¹(A⊕₋ + A⊕₊Ψ)
    let psi_om = &n * (s.a(iz, im) + s.a(iz, ip) * psi);
    let k_po = &s.c_plus_inv * s.a(ip, iz) + psi * &s.c_minus * s.a(im, iz);
    let p_oplus = &k_po * &n * &ct0 * &psi_om;
    let h = s.rate_rhs(sol) - &p_oplus * &sol.u;
    let y = solve_sylvester(&sol.k, &sol.u, &h)?;
    let psi1_om = &n * &ct0 * &psi_om * &sol.u + &n * s.a(iz, ip) * &y;

    let mut aux = BTreeMap::new();
    aux.insert("psi_oplus_minus".into(), psi_om.clone());
    aux.insert("p_oplus".into(), p_oplus);
    aux.insert("psi1_oplus_minus".into(), psi1_om.clone());

    let mut rows = s.orig(ip);
    rows.extend(s.orig(iz));
    Ok(PsiExpansion {
        regime: Regime::ToPlus,
        psi_bar: numerics::vstack(psi, &psi_om),
        psi1: numerics::vstack(&y, &psi1_om),
        row_phases: rows,
        col_phases: s.orig(im),
        n_plus: ip.len(),
        n_oplus: iz.len(),
        n_ominus: 0,
        n_minus: im.len(),
        aux,
    })
}

/// All zero-rate phases migrate to `S₋`; at order zero the fluid cannot
/// return in one of them, so the `+⊖` block of `Ψ̄` vanishes.
pub fn expand_to_minus(
    model: &FluidModel,
    sol: &PsiSolution,
    spec: &PerturbationSpec,
) -> Result<PsiExpansion> {
    if spec.regime() != Regime::ToMinus {
        return Err(wrong_regime(Regime::ToMinus, spec.regime()));
    }
    let s = Setup::new(model, spec);
    let (ip, iz, im) = (&s.ip, &s.iz, &s.im);
    let psi = &sol.psi;
    let n = neg_inv_a00(model)?;

    let ct_abs = numerics::diag(&iz.iter().map(|&k| s.ct[k].abs()).collect::<Vec<_>>());
    let g1 = (&s.c_plus_inv * s.a(ip, iz) + psi * &s.c_minus * s.a(im, iz)) * &n * ct_abs;
    let p_ominus = &g1 * &n * (s.a(iz, im) + s.a(iz, ip) * psi);
    let h = s.rate_rhs(sol) - &sol.k * &p_ominus;
    let y = solve_sylvester(&sol.k, &sol.u, &h)?;

    let mut aux = BTreeMap::new();
    aux.insert("psi1_plus_ominus".into(), g1.clone());
    aux.insert("p_ominus".into(), p_ominus);

    let mut cols = s.orig(iz);
    cols.extend(s.orig(im));
    Ok(PsiExpansion {
        regime: Regime::ToMinus,
        psi_bar: numerics::hstack(&Matrix::zeros(ip.len(), iz.len()), psi),
        psi1: numerics::hstack(&g1, &y),
        row_phases: s.orig(ip),
        col_phases: cols,
        n_plus: ip.len(),
        n_oplus: 0,
        n_ominus: iz.len(),
        n_minus: im.len(),
        aux,
    })
}

/// Leading coefficients of the Laurent expansions of `U(ε)` and `K(ε)` on the
/// perturbed partition (`m1` is the `ε⁻¹` term, `0` the `ε⁰` term).
///
/// Only `U⁽⁻¹⁾⊖⊖` and `K⁽⁻¹⁾⊕⊕` have textbook closed forms; the others
/// come from substituting `Ψ(ε) = [εΓ, Ψ; Ψ⊕⊖, Ψ⊕₋] + O(ε²)` into
/// `U(ε) = |C₋(ε)⁻¹|(Q₋₋ + Q₋₊Ψ(ε))` and `K(ε) = C₊(ε)⁻¹Q₊₊ + Ψ(ε)|C₋(ε)⁻¹|Q₋₊`
/// with the migrated phases kept uncensored:
///
/// * `U⁽⁻¹⁾⊖₋ = |C̃⊖⁻¹|(A⊖₋ + A⊖₊Ψ + A⊖⊕Ψ⊕₋)`
/// * `U⁽⁰⁾₋₋ = |C₋⁻¹|(A₋₋ + A₋₊Ψ + A₋⊕Ψ⊕₋)`
/// * `U⁽⁰⁾₋⊖ = |C₋⁻¹|(A₋⊖ + A₋⊕Ψ⊕⊖)`
/// * `U⁽⁰⁾⊖⊖ = |C̃⊖⁻¹|(A⊖₊Γ₀ + A⊖⊕Ψ⁽¹⁾⊕⊖)`
/// * `K⁽⁻¹⁾⊕₊ = C̃⊕⁻¹A⊕₊ + Ψ⊕⊖|C̃⊖⁻¹|A⊖₊`
/// * `K⁽⁰⁾₊₊ = C₊⁻¹A₊₊ + Γ₀|C̃⊖⁻¹|A⊖₊ + Ψ|C₋⁻¹|A₋₊`
/// * `K⁽⁰⁾₊⊕ = C₊⁻¹A₊⊕ + Γ₀|C̃⊖⁻¹|A⊖⊕ + Ψ|C₋⁻¹|A₋⊕`
///
/// where `Γ₀ = Ψ⁽¹⁾₊⊖`. These were checked against finite differences of
/// full solves in the test suite.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesBlocks {
    pub u_m1_ominus_ominus: Matrix,
    pub u_m1_ominus_minus: Matrix,
    pub u0_minus_minus: Matrix,
    pub u0_minus_ominus: Matrix,
    pub u0_ominus_ominus: Matrix,
    pub k_m1_oplus_oplus: Matrix,
    pub k_m1_oplus_plus: Matrix,
    pub k0_plus_plus: Matrix,
    pub k0_plus_oplus: Matrix,
}

/// Everything the split regime computes before the final Sylvester solve.
#[derive(Debug, Clone)]
pub struct GeneralParts {
    /// `Ψ⊕⊖`, minimal solution of the inner Riccati equation.
    pub psi_oplus_ominus: Matrix,
    pub inner_iterations: usize,
    pub inner_residual: f64,
    /// `Ψ⊕₋`.
    pub psi_oplus_minus: Matrix,
    /// `Ψ⁽¹⁾₊⊖`.
    pub psi1_plus_ominus: Matrix,
    /// `Ψ⁽¹⁾⊕⊖`.
    pub psi1_oplus_ominus: Matrix,
    pub series: SeriesBlocks,
}

/// Zeroth-order quantities and series blocks of the split regime.
pub fn general_parts(
    model: &FluidModel,
    sol: &PsiSolution,
    spec: &PerturbationSpec,
) -> Result<GeneralParts> {
    if spec.regime() != Regime::General {
        return Err(wrong_regime(Regime::General, spec.regime()));
    }
    let s = Setup::new(model, spec);
    let (ip, im, iop, iom) = (&s.ip, &s.im, &s.iop, &s.iom);
    let psi = &sol.psi;
    let cp = &s.c_plus_inv;
    let cm = &s.c_minus;
    let cop = s.ct_abs_inv(iop);
    let g = s.ct_abs_inv(iom);

    // Ψ⊕⊖ solves C̃⊕⁻¹A⊕⊖ + C̃⊕⁻¹A⊕⊕X + X|C̃⊖⁻¹|A⊖⊖ + X|C̃⊖⁻¹|A⊖⊕X = 0.
    let inner = RiccatiCoefficients {
        r0: &cop * s.a(iop, iom),
        r1: &cop * s.a(iop, iop),
        r2: &g * s.a(iom, iom),
        r3: &g * s.a(iom, iop),
    };
    let inner_sol = solve_riccati(&inner, &NewtonOptions::default())
        .map_err(|e| Error::InnerRiccatiDiverged(e.to_string()))?;
    let z0 = inner_sol.x.clone();

    let k_opop = inner.k(&z0);
    let u_omom = inner.u(&z0);
    let neg_k_inv =
        numerics::inverse(&(-&k_opop)).map_err(|_| Error::SingularBlock("K(-1)oplus,oplus"))?;
    let neg_u_inv =
        numerics::inverse(&(-&u_omom)).map_err(|_| Error::SingularBlock("U(-1)ominus,ominus"))?;

    let w0 = &neg_k_inv
        * (&cop * (s.a(iop, im) + s.a(iop, ip) * psi)
            + &z0 * &g * (s.a(iom, im) + s.a(iom, ip) * psi));
    let gamma0 = (cp * (s.a(ip, iom) + s.a(ip, iop) * &z0)
        + psi * cm * (s.a(im, iom) + s.a(im, iop) * &z0))
        * &neg_u_inv;

    let k_opp = &cop * s.a(iop, ip) + &z0 * &g * s.a(iom, ip);
    let u0_mom = cm * (s.a(im, iom) + s.a(im, iop) * &z0);
    let h = -(&k_opp * &gamma0) - &w0 * &u0_mom;
    let z1 = solve_sylvester(&k_opop, &u_omom, &h)?;

    let series = SeriesBlocks {
        u_m1_ominus_minus: &g * (s.a(iom, im) + s.a(iom, ip) * psi + s.a(iom, iop) * &w0),
        u0_minus_minus: cm * (s.a(im, im) + s.a(im, ip) * psi + s.a(im, iop) * &w0),
        u0_ominus_ominus: &g * (s.a(iom, ip) * &gamma0 + s.a(iom, iop) * &z1),
        k0_plus_plus: cp * s.a(ip, ip) + &gamma0 * &g * s.a(iom, ip) + psi * cm * s.a(im, ip),
        k0_plus_oplus: cp * s.a(ip, iop) + &gamma0 * &g * s.a(iom, iop) + psi * cm * s.a(im, iop),
        u0_minus_ominus: u0_mom,
        u_m1_ominus_ominus: u_omom,
        k_m1_oplus_oplus: k_opop,
        k_m1_oplus_plus: k_opp,
    };
    Ok(GeneralParts {
        psi_oplus_ominus: z0,
        inner_iterations: inner_sol.iterations,
        inner_residual: inner_sol.residual,
        psi_oplus_minus: w0,
        psi1_plus_ominus: gamma0,
        psi1_oplus_ominus: z1,
        series,
    })
}

pub fn series_blocks(
    model: &FluidModel,
    sol: &PsiSolution,
    spec: &PerturbationSpec,
) -> Result<SeriesBlocks> {
    general_parts(model, sol, spec).map(|p| p.series)
}

/// Zero-rate phases split between `S⊕` and `S⊖`.
///
/// Writing `Ψ₊⊖(ε) = εΓ(ε)`, the first-order system couples `Ψ⁽¹⁾₊₋`,
/// `Ψ⁽¹⁾⊕₋` and `Ψ⁽²⁾₊⊖ = Γ⁽¹⁾`. Eliminating the last two gives one
/// Sylvester equation for `Y = Ψ⁽¹⁾₊₋`:
///
/// `K̂Y + YÛ = C₊⁻¹C̃₊C₊⁻¹(A₊₋ + A₊₊Ψ + A₊⊕Ψ⊕₋) − Ψ|C₋⁻¹|C̃₋U⁽⁰⁾₋₋
///            − K⁽⁰⁾₊⊕(−K⁽⁻¹⁾⊕⊕)⁻¹R_W − R_Γ(−U⁽⁻¹⁾⊖⊖)⁻¹U⁽⁻¹⁾⊖₋`
///
/// with `K̂ = K⁽⁰⁾₊₊ + K⁽⁰⁾₊⊕(−K⁽⁻¹⁾⊕⊕)⁻¹K⁽⁻¹⁾⊕₊` and
/// `Û = U⁽⁰⁾₋₋ + U⁽⁰⁾₋⊖(−U⁽⁻¹⁾⊖⊖)⁻¹U⁽⁻¹⁾⊖₋` (these reduce to `K` and `U`),
/// `R_W = Ψ⁽¹⁾⊕⊖U⁽⁻¹⁾⊖₋ + Ψ⊕₋U⁽⁰⁾₋₋` and
/// `R_Γ = −C₊⁻¹C̃₊C₊⁻¹(A₊⊖ + A₊⊕Ψ⊕⊖) + C₊⁻¹(A₊₊Γ₀ + A₊⊕Ψ⁽¹⁾⊕⊖) + Γ₀U⁽⁰⁾⊖⊖
///        + Ψ|C₋⁻¹|C̃₋U⁽⁰⁾₋⊖ + Ψ|C₋⁻¹|(A₋₊Γ₀ + A₋⊕Ψ⁽¹⁾⊕⊖)`.
/// Back-substitution gives `Ψ⁽¹⁾⊕₋ = (−K⁽⁻¹⁾⊕⊕)⁻¹(K⁽⁻¹⁾⊕₊Y + R_W)` and
/// `Ψ⁽²⁾₊⊖ = (R_Γ + YU⁽⁰⁾₋⊖)(−U⁽⁻¹⁾⊖⊖)⁻¹`.
pub fn expand_general(
    model: &FluidModel,
    sol: &PsiSolution,
    spec: &PerturbationSpec,
) -> Result<PsiExpansion> {
    let parts = general_parts(model, sol, spec)?;
    let s = Setup::new(model, spec);
    let (ip, im, iop, iom) = (&s.ip, &s.im, &s.iop, &s.iom);
    let psi = &sol.psi;
    let cp = &s.c_plus_inv;
    let cm = &s.c_minus;
    let ctp = s.ct_diag(ip);
    let ctm = s.ct_diag(im);
    let sb = &parts.series;
    let z0 = &parts.psi_oplus_ominus;
    let z1 = &parts.psi1_oplus_ominus;
    let w0 = &parts.psi_oplus_minus;
    let gamma0 = &parts.psi1_plus_ominus;

    let neg_k_inv = numerics::inverse(&(-&sb.k_m1_oplus_oplus))
        .map_err(|_| Error::SingularBlock("K(-1)oplus,oplus"))?;
    let neg_u_inv = numerics::inverse(&(-&sb.u_m1_ominus_ominus))
        .map_err(|_| Error::SingularBlock("U(-1)ominus,ominus"))?;
    let cpc = cp * &ctp * cp;

    let r_gamma = -(&cpc * (s.a(ip, iom) + s.a(ip, iop) * z0))
        + cp * (s.a(ip, ip) * gamma0 + s.a(ip, iop) * z1)
        + gamma0 * &sb.u0_ominus_ominus
        + psi * cm * &ctm * &sb.u0_minus_ominus
        + psi * cm * (s.a(im, ip) * gamma0 + s.a(im, iop) * z1);
    let r_w = z1 * &sb.u_m1_ominus_minus + w0 * &sb.u0_minus_minus;

    let k_hat = &sb.k0_plus_plus + &sb.k0_plus_oplus * &neg_k_inv * &sb.k_m1_oplus_plus;
    let u_hat = &sb.u0_minus_minus + &sb.u0_minus_ominus * &neg_u_inv * &sb.u_m1_ominus_minus;
    let rhs = &cpc * (s.a(ip, im) + s.a(ip, ip) * psi + s.a(ip, iop) * w0)
        - psi * cm * &ctm * &sb.u0_minus_minus
        - &sb.k0_plus_oplus * &neg_k_inv * &r_w
        - &r_gamma * &neg_u_inv * &sb.u_m1_ominus_minus;
    let y1 = solve_sylvester(&k_hat, &u_hat, &rhs)?;
    let w1 = &neg_k_inv * (&sb.k_m1_oplus_plus * &y1 + &r_w);
    let gamma1 = (&r_gamma + &y1 * &sb.u0_minus_ominus) * &neg_u_inv;

    let psi_bar = numerics::vstack(
        &numerics::hstack(&Matrix::zeros(ip.len(), iom.len()), psi),
        &numerics::hstack(z0, w0),
    );
    let psi1 = numerics::vstack(&numerics::hstack(gamma0, &y1), &numerics::hstack(z1, &w1));

    let mut aux = BTreeMap::new();
    for (name, m) in [
        ("psi_oplus_ominus", z0),
        ("psi_oplus_minus", w0),
        ("psi1_plus_ominus", gamma0),
        ("psi1_oplus_ominus", z1),
        ("psi1_oplus_minus", &w1),
        ("psi2_plus_ominus", &gamma1),
        ("u_m1_ominus_ominus", &sb.u_m1_ominus_ominus),
        ("u_m1_ominus_minus", &sb.u_m1_ominus_minus),
        ("u0_minus_minus", &sb.u0_minus_minus),
        ("u0_minus_ominus", &sb.u0_minus_ominus),
        ("u0_ominus_ominus", &sb.u0_ominus_ominus),
        ("k_m1_oplus_oplus", &sb.k_m1_oplus_oplus),
        ("k_m1_oplus_plus", &sb.k_m1_oplus_plus),
        ("k0_plus_plus", &sb.k0_plus_plus),
        ("k0_plus_oplus", &sb.k0_plus_oplus),
    ] {
        aux.insert(name.to_string(), m.clone());
    }

    let mut rows = s.orig(ip);
    rows.extend(s.orig(iop));
    let mut cols = s.orig(iom);
    cols.extend(s.orig(im));
    Ok(PsiExpansion {
        regime: Regime::General,
        psi_bar,
        psi1,
        row_phases: rows,
        col_phases: cols,
        n_plus: ip.len(),
        n_oplus: iop.len(),
        n_ominus: iom.len(),
        n_minus: im.len(),
        aux,
    })
}

/// Blocks of `(−A₀₀)⁻¹` on `[S⊕, S⊖]`, once from the Schur-complement
/// formulas (`b`) and once rebuilt from `Ψ⊕⊖`, `K⁽⁻¹⁾⊕⊕` and `U⁽⁻¹⁾⊖⊖`
/// (`d`). Order: `⊕⊕, ⊕⊖, ⊖⊕, ⊖⊖`.
#[derive(Debug, Clone)]
pub struct BlockIdentity {
    pub b: [Matrix; 4],
    pub d: [Matrix; 4],
}

impl BlockIdentity {
    pub fn max_deviation(&self) -> f64 {
        self.b
            .iter()
            .zip(&self.d)
            .map(|(b, d)| numerics::max_abs(&(b - d)))
            .fold(0.0, f64::max)
    }
}

pub fn block_identity(
    model: &FluidModel,
    sol: &PsiSolution,
    spec: &PerturbationSpec,
) -> Result<BlockIdentity> {
    let parts = general_parts(model, sol, spec)?;
    let s = Setup::new(model, spec);
    let (iop, iom) = (&s.iop, &s.iom);
    let inv = |m: Matrix| numerics::inverse(&m).map_err(|_| Error::SingularBlock("A00 sub-block"));

    let a_opop = s.a(iop, iop);
    let a_opom = s.a(iop, iom);
    let a_omop = s.a(iom, iop);
    let a_omom = s.a(iom, iom);
    let n_om = inv(-&a_omom)?;
    let n_op = inv(-&a_opop)?;
    let b_pp = -inv(&a_opop + &a_opom * &n_om * &a_omop)?;
    let b_mp = &n_om * &a_omop * &b_pp;
    let b_pm = &b_pp * &a_opom * &n_om;
    let b_mm = -inv(&a_omom + &a_omop * &n_op * &a_opom)?;

    let z0 = &parts.psi_oplus_ominus;
    let cop = s.ct_abs_inv(iop);
    let g = s.ct_abs_inv(iom);
    let ik = inv(-&parts.series.k_m1_oplus_oplus)?;
    let iu = inv(-&parts.series.u_m1_ominus_ominus)?;
    let d_mp = &iu * &g * &a_omop * &ik * &cop;
    let d_pp = &ik * &cop + z0 * &d_mp;
    let eye = Matrix::identity(iom.len(), iom.len());
    let d_mm = &iu * &g * (eye + &a_omop * &ik * z0 * &g);
    let d_pm = &ik * z0 * &g + z0 * &d_mm;

    Ok(BlockIdentity {
        b: [b_pp, b_pm, b_mp, b_mm],
        d: [d_pp, d_pm, d_mp, d_mm],
    })
}

/// Dispatches on the regime of `spec`.
pub fn expand(
    model: &FluidModel,
    sol: &PsiSolution,
    spec: &PerturbationSpec,
) -> Result<PsiExpansion> {
    match spec.regime() {
        Regime::Generator => {
            let psi1 = psi1_generator(model, sol, spec)?;
            Ok(Setup::new(model, spec).plain(Regime::Generator, sol, psi1))
        }
        Regime::Unaffected => {
            let psi1 = psi1_rate_unaffected(model, sol, spec)?;
            Ok(Setup::new(model, spec).plain(Regime::Unaffected, sol, psi1))
        }
        Regime::ToPlus => expand_to_plus(model, sol, spec),
        Regime::ToMinus => expand_to_minus(model, sol, spec),
        Regime::General => expand_general(model, sol, spec),
    }
}
