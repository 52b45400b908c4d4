#![allow(dead_code)]

use fluidpert::numerics::{self, Matrix};
use fluidpert::{validate_model, FluidModel};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Irreducible generator: a random sparse pattern plus a Hamiltonian cycle.
pub fn random_generator(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
    let mut a = Matrix::zeros(n, n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    for k in 0..n {
        let (i, j) = (order[k], order[(k + 1) % n]);
        a[(i, j)] = rng.random_range(0.2..1.5);
    }
    for i in 0..n {
        for j in 0..n {
            if i != j && a[(i, j)] == 0.0 && rng.random_bool(0.5) {
                a[(i, j)] = rng.random_range(0.05..1.5);
            }
        }
    }
    for i in 0..n {
        a[(i, i)] = 0.0;
        a[(i, i)] = -a.row(i).sum();
    }
    a
}

/// Rate vector with the given counts at shuffled positions, negative rates
/// scaled so that the mean drift is clearly negative.
pub fn recurrent_rates(rng: &mut ChaCha8Rng, a: &Matrix, n_plus: usize, n_zero: usize) -> Vec<f64> {
    let n = a.nrows();
    let mut pos: Vec<usize> = (0..n).collect();
    pos.shuffle(rng);
    let mut c = vec![0.0; n];
    for (k, &i) in pos.iter().enumerate() {
        c[i] = if k < n_plus {
            rng.random_range(0.5..2.0)
        } else if k < n_plus + n_zero {
            0.0
        } else {
            -rng.random_range(0.5..2.0)
        };
    }
    let xi = numerics::stationary_vector(a).unwrap();
    let up: f64 = (0..n).filter(|&i| c[i] > 0.0).map(|i| xi[i] * c[i]).sum();
    let down: f64 = (0..n).filter(|&i| c[i] < 0.0).map(|i| -xi[i] * c[i]).sum();
    let target = rng.random_range(1.3..3.0) * up;
    for v in c.iter_mut().filter(|v| **v < 0.0) {
        *v *= target / down;
    }
    c
}

pub fn model_with_split(seed: u64, n_plus: usize, n_zero: usize, n_minus: usize) -> FluidModel {
    let mut r = rng(seed);
    let a = random_generator(&mut r, n_plus + n_zero + n_minus);
    let c = recurrent_rates(&mut r, &a, n_plus, n_zero);
    validate_model(&a, &c).unwrap()
}

/// Recurrent model on 3..=12 phases with `|S₋| ≥ 2`.
pub fn fuzz_model(seed: u64) -> FluidModel {
    let mut r = rng(seed ^ 0x5eed);
    let n = r.random_range(3..=12usize);
    let n_minus = r.random_range(2..n);
    let n_plus = r.random_range(1..=(n - n_minus));
    let n_zero = n - n_minus - n_plus;
    model_with_split(seed, n_plus, n_zero, n_minus)
}

/// Generator direction with `|Ã_ij| ≤ A_ij` off the diagonal.
pub fn generator_direction(seed: u64, model: &FluidModel) -> Matrix {
    let mut r = rng(seed ^ 0xd1ec);
    let a = model.original_a();
    let n = a.nrows();
    let mut at = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j && a[(i, j)] > 0.0 {
                at[(i, j)] = r.random_range(-1.0..1.0) * a[(i, j)];
            }
        }
        at[(i, i)] = -at.row(i).sum();
    }
    at
}

pub fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, intervals: usize) -> f64 {
    let n = intervals + intervals % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

pub fn report(criterion: u32, name: &str, pass: bool, detail: &str) {
    println!(
        "{} criterion {criterion} [{name}]: {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
}

/// Composite Simpson over `[0, end]` on geometrically growing panels, so
/// fast and slow exponential modes are both resolved.
pub fn simpson_half_line<F: Fn(f64) -> f64>(f: F, end: f64) -> f64 {
    let mut total = simpson(&f, 0.0, 1e-3, 200);
    let mut a = 1e-3;
    while a < end {
        let b = (2.0 * a).min(end);
        total += simpson(&f, a, b, 200);
        a = b;
    }
    total
}

/// `max‖Ψ(ε) − Ψ̄ − εΨ⁽¹⁾‖∞ / ε²` at `ε = 1e-2, 1e-3, 1e-4`.
pub fn scaled_errors(model: &FluidModel, spec: &fluidpert::PerturbationSpec) -> Vec<f64> {
    use fluidpert::bench::error_norms;
    use fluidpert::{expand, solve_psi, solve_psi_at, NewtonOptions};
    let opts = NewtonOptions::default();
    let sol = solve_psi(model, &opts).unwrap();
    let exp = expand(model, &sol, spec).unwrap();
    [1e-2, 1e-3, 1e-4]
        .iter()
        .map(|&eps| {
            let (pm, ps) = solve_psi_at(model, spec, eps, &opts).unwrap();
            error_norms(&pm, &ps.psi, &exp, eps).unwrap().e_inf / (eps * eps)
        })
        .collect()
}

/// True when consecutive-decade ratios of `scaled` lie in `[0.5, 2]`.
pub fn ratios_ok(scaled: &[f64]) -> bool {
    scaled.windows(2).all(|w| {
        let r = w[1] / w[0];
        (0.5..=2.0).contains(&r)
    })
}

/// Rate direction: random on `S₊ ∪ S₋`, signs on `S₀` from `zero_signs`
/// (cycled over the zero-rate phases in original order).
pub fn rate_direction(seed: u64, model: &FluidModel, zero_signs: &[f64]) -> Vec<f64> {
    let mut r = rng(seed ^ 0xc7);
    let c = model.original_c();
    let mut k = 0;
    c.iter()
        .map(|&ci| {
            if ci == 0.0 {
                let s = zero_signs[k % zero_signs.len()];
                k += 1;
                s * r.random_range(0.3..1.5)
            } else {
                r.random_range(-0.5..0.5) * ci.abs()
            }
        })
        .collect()
}
