//! Monte Carlo estimates of Ψ and of the stationary level distribution.
//!
//! Every replication draws from its own ChaCha8 stream: the generator is
//! seeded with `seed` and the stream number is the global replication
//! index, so results do not depend on how replications are scheduled.

use rand::distr::weighted::WeightedIndex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{mean_drift, FluidModel};
use crate::numerics::{Matrix, RowVector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub replications: usize,
    pub seed: u64,
    /// Time horizon of each path.
    pub max_time: f64,
    /// Initial stretch of each path ignored by density estimation.
    pub burn_in: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            replications: 10_000,
            seed: 0,
            max_time: 1e4,
            burn_in: 100.0,
        }
    }
}

impl SimConfig {
    fn check(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::Parse("replications must be at least 1".into()));
        }
        if self.max_time.is_nan()
            || self.max_time <= 0.0
            || self.burn_in.is_nan()
            || self.burn_in < 0.0
            || self.burn_in >= self.max_time
        {
            return Err(Error::Parse(format!(
                "need 0 <= burn_in < max_time, got burn_in={} max_time={}",
                self.burn_in, self.max_time
            )));
        }
        Ok(())
    }
}

/// Jump chain of the phase process.
struct Chain {
    rates: Vec<f64>,
    jumps: Vec<WeightedIndex<f64>>,
    c: Vec<f64>,
}

impl Chain {
    fn new(model: &FluidModel) -> Result<Self> {
        let a = model.a();
        let n = model.n();
        let mut jumps = Vec::with_capacity(n);
        for i in 0..n {
            let w: Vec<f64> = (0..n)
                .map(|j| if i == j { 0.0 } else { a[(i, j)] })
                .collect();
            jumps.push(
                WeightedIndex::new(&w)
                    .map_err(|e| Error::NotAGenerator(format!("row {i}: {e}")))?,
            );
        }
        Ok(Chain {
            rates: (0..n).map(|i| -a[(i, i)]).collect(),
            jumps,
            c: model.c().to_vec(),
        })
    }

    fn sojourn(&self, rng: &mut ChaCha8Rng, k: usize) -> f64 {
        let e: f64 = Exp1.sample(rng);
        e / self.rates[k]
    }
}

fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsiEstimate {
    /// Hit frequencies, rows `S₊` and columns `S₋` in canonical order.
    pub estimate: Matrix,
    pub stderr: Matrix,
    /// Fraction of paths still above level zero at `max_time`.
    pub censored_fraction: f64,
    pub replications: usize,
}

/// Phase at the first downcrossing of level 0, or `None` when the path is
/// still above 0 at `max_time`.
fn first_return(chain: &Chain, rng: &mut ChaCha8Rng, start: usize, max_time: f64) -> Option<usize> {
    let mut k = start;
    let mut level = 0.0;
    let mut t = 0.0;
    loop {
        let tau = chain.sojourn(rng, k);
        let c = chain.c[k];
        if c < 0.0 && level + c * tau <= 0.0 {
            return if t + level / -c <= max_time {
                Some(k)
            } else {
                None
            };
        }
        level += c * tau;
        t += tau;
        if t > max_time {
            return None;
        }
        k = chain.jumps[k].sample(rng);
    }
}

/// Estimates Ψ with `cfg.replications` paths from each phase of `S₊`.
pub fn estimate_psi(model: &FluidModel, cfg: &SimConfig) -> Result<PsiEstimate> {
    cfg.check()?;
    let chain = Chain::new(model)?;
    let np = model.n_plus();
    let nm = model.n_minus();
    let offset = np + model.n_zero();
    let reps = cfg.replications;

    let mut counts = vec![vec![0u64; nm + 1]; np];
    for (i, row) in counts.iter_mut().enumerate() {
        let merged = (0..reps)
            .into_par_iter()
            .fold(
                || vec![0u64; nm + 1],
                |mut acc, r| {
                    let mut rng = stream(cfg.seed, (i * reps + r) as u64);
                    match first_return(&chain, &mut rng, i, cfg.max_time) {
                        Some(k) => acc[k - offset] += 1,
                        None => acc[nm] += 1,
                    }
                    acc
                },
            )
            .reduce(
                || vec![0u64; nm + 1],
                |mut a, b| {
                    for (x, y) in a.iter_mut().zip(b) {
                        *x += y;
                    }
                    a
                },
            );
        *row = merged;
    }

    let n = reps as f64;
    let estimate = Matrix::from_fn(np, nm, |i, j| counts[i][j] as f64 / n);
    let stderr = estimate.map(|p| (p * (1.0 - p) / n).sqrt());
    let censored: u64 = counts.iter().map(|r| r[nm]).sum();
    Ok(PsiEstimate {
        estimate,
        stderr,
        censored_fraction: censored as f64 / (n * np as f64),
        replications: reps,
    })
}

/// Level bins for density estimation: `[i·w, (i+1)·w)` for `i < bins`, plus
/// one overflow bin for everything above.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Binning {
    pub width: f64,
    pub bins: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub binning: Binning,
    /// Probability per bin and phase (rows bins, columns original phases).
    pub mass: Matrix,
    /// Probability above the last bin, per phase.
    pub overflow: RowVector,
    /// Probability of level exactly 0, per phase.
    pub atoms: RowVector,
}

impl Histogram {
    pub fn total(&self) -> f64 {
        self.mass.sum() + self.overflow.sum() + self.atoms.sum()
    }

    /// Bin masses divided by the bin width.
    pub fn density(&self) -> Matrix {
        &self.mass / self.binning.width
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.binning.bins)
            .map(|i| (i as f64 + 0.5) * self.binning.width)
            .collect()
    }
}

struct Occupancy<'a> {
    binning: Binning,
    from: f64,
    to: f64,
    /// `bins + 1` rows (last is overflow) by phases, flattened.
    cells: &'a mut [f64],
    atoms: &'a mut [f64],
    n: usize,
}

impl Occupancy<'_> {
    fn bin_of(&self, y: f64) -> usize {
        ((y / self.binning.width).floor() as usize).min(self.binning.bins)
    }

    /// Records the path `y(s) = y0 + c(s − t0)`, `s ∈ [t0, t1]`, which stays
    /// nonnegative, clipped to the observation window.
    fn segment(&mut self, k: usize, t0: f64, t1: f64, y0: f64, c: f64) {
        let s0 = t0.max(self.from);
        let s1 = t1.min(self.to);
        if s1 <= s0 {
            return;
        }
        let ya = (y0 + c * (s0 - t0)).max(0.0);
        if c == 0.0 || (ya == 0.0 && c < 0.0) {
            if ya == 0.0 {
                self.atoms[k] += s1 - s0;
            } else {
                let b = self.bin_of(ya);
                self.cells[b * self.n + k] += s1 - s0;
            }
            return;
        }
        let yb = (y0 + c * (s1 - t0)).max(0.0);
        let (lo, hi) = if ya < yb { (ya, yb) } else { (yb, ya) };
        let speed = c.abs();
        let w = self.binning.width;
        let (first, last) = (self.bin_of(lo), self.bin_of(hi));
        for b in first..=last {
            let edge_lo = b as f64 * w;
            let edge_hi = if b == self.binning.bins {
                f64::INFINITY
            } else {
                edge_lo + w
            };
            let overlap = hi.min(edge_hi) - lo.max(edge_lo);
            if overlap > 0.0 {
                self.cells[b * self.n + k] += overlap / speed;
            }
        }
    }
}

fn reflected_path(chain: &Chain, rng: &mut ChaCha8Rng, start: usize, occ: &mut Occupancy) {
    let mut k = start;
    let mut level = 0.0;
    let mut t = 0.0;
    while t < occ.to {
        let tau = chain.sojourn(rng, k);
        let c = chain.c[k];
        let end = t + tau;
        if c < 0.0 && level + c * tau < 0.0 {
            let hit = t + level / -c;
            occ.segment(k, t, hit, level, c);
            occ.segment(k, hit, end, 0.0, 0.0);
            level = 0.0;
        } else {
            occ.segment(k, t, end, level, c);
            level += c * tau;
        }
        t = end;
        k = chain.jumps[k].sample(rng);
    }
}

/// Time-average occupancy of the reflected process over
/// `[burn_in, max_time]`, averaged over replications. Each path starts at
/// level 0 in a phase drawn from the stationary phase distribution.
pub fn estimate_density(
    model: &FluidModel,
    cfg: &SimConfig,
    binning: Binning,
) -> Result<Histogram> {
    cfg.check()?;
    if binning.width.is_nan() || binning.width <= 0.0 || binning.bins == 0 {
        return Err(Error::Parse(
            "bin width must be positive and bins at least 1".into(),
        ));
    }
    let drift = mean_drift(model)?;
    if drift >= 0.0 {
        return Err(Error::NotRecurrent { drift });
    }
    let chain = Chain::new(model)?;
    let n = model.n();
    let xi = crate::numerics::stationary_vector(model.a())?;
    let start = WeightedIndex::new(xi.iter().map(|v| v.max(0.0)))
        .map_err(|e| Error::Parse(format!("stationary distribution: {e}")))?;
    let cells = (binning.bins + 1) * n;

    let per_rep: Vec<Vec<f64>> = (0..cfg.replications)
        .into_par_iter()
        .map(|r| {
            let mut buf = vec![0.0; cells + n];
            let (c, a) = buf.split_at_mut(cells);
            let mut occ = Occupancy {
                binning,
                from: cfg.burn_in,
                to: cfg.max_time,
                cells: c,
                atoms: a,
                n,
            };
            let mut rng = stream(cfg.seed, r as u64);
            let k0 = start.sample(&mut rng);
            reflected_path(&chain, &mut rng, k0, &mut occ);
            buf
        })
        .collect();

    let mut total = vec![0.0; cells + n];
    for rep in &per_rep {
        for (t, v) in total.iter_mut().zip(rep) {
            *t += v;
        }
    }
    let norm: f64 = total.iter().sum();
    let perm = model.perm();
    let mut mass = Matrix::zeros(binning.bins, n);
    let mut overflow = RowVector::zeros(n);
    let mut atoms = RowVector::zeros(n);
    for k in 0..n {
        let i = perm[k];
        for b in 0..binning.bins {
            mass[(b, i)] = total[b * n + k] / norm;
        }
        overflow[i] = total[binning.bins * n + k] / norm;
        atoms[i] = total[cells + k] / norm;
    }
    Ok(Histogram {
        binning,
        mass,
        overflow,
        atoms,
    })
}
