//! Monte-Carlo oracle: brute-force samples of Poissonian Galton-Watson
//! trees, clusters with birth dates and Hawkes windows, turned into
//! estimates of the exponential moments the bounds speak about.
//!
//! Replicate `k` of a run with seed `s` draws from its own ChaCha8 stream
//! `(s, k)`, so results do not depend on how replicates are scheduled.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hawkes::{hawkes_burn_in, HawkesParams};
use crate::kernel::KernelSpec;
use crate::laplace::SolverConfig;
use crate::matrix::{check_len, check_nonneg_vector, NonNegMatrix};

/// Default population cap per sampled tree, cluster or Hawkes window.
pub const DEFAULT_CAP: usize = 10_000_000;

/// Relative accuracy asked of the Hawkes burn-in when none is given.
pub const DEFAULT_BURN_IN_TOL: f64 = 1e-4;

/// The random stream of replicate `k`.
pub fn replicate_rng(seed: u64, k: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k);
    rng
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeSample {
    pub typed_counts: Vec<u64>,
    /// Typed counts of generation `n` at index `n`; the root is generation 0.
    pub counts_by_generation: Vec<Vec<u64>>,
    pub truncated: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    #[serde(rename = "type")]
    pub kind: usize,
    pub time: f64,
    pub generation: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterSample {
    /// Events in generation order; the root comes first.
    pub events: Vec<Event>,
    pub truncated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorReport {
    pub estimate: f64,
    /// Sample standard deviation over `√replicates`.
    pub std_error: f64,
    pub replicates: usize,
    pub truncation_rate: f64,
    pub seed: u64,
    /// Set when some replicate hit the population cap with `u ≠ 0`: the
    /// truncated weights make the estimate a lower bound.
    pub lower_bound_only: bool,
}

impl EstimatorReport {
    pub fn log_estimate(&self) -> f64 {
        self.estimate.ln()
    }

    /// Delta-method standard error of [`EstimatorReport::log_estimate`].
    pub fn log_std_error(&self) -> f64 {
        self.std_error / self.estimate
    }
}

/// Poisson offspring laws, `None` where `H_{m,m'} = 0` so that no variate
/// is drawn for impossible children.
struct Offspring {
    dim: usize,
    laws: Vec<Option<Poisson<f64>>>,
}

impl Offspring {
    fn new(h: &NonNegMatrix) -> Result<Self> {
        let laws = h
            .as_slice()
            .iter()
            .map(|&x| {
                if x > 0.0 {
                    Poisson::new(x).map(Some).map_err(|e| Error::InvalidMatrix(format!("Poisson mean {x}: {e}")))
                } else {
                    Ok(None)
                }
            })
            .collect::<Result<_>>()?;
        Ok(Offspring { dim: h.dim(), laws })
    }
}

fn check_root(h: &NonNegMatrix, root: usize) -> Result<()> {
    if root >= h.dim() {
        return Err(Error::InvalidArgument(format!("root type {root} out of range for dimension {}", h.dim())));
    }
    Ok(())
}

/// Breadth-first tree growth shared by every sampler. Each individual, in
/// generation order, draws one Poisson count per child type with a positive
/// mean; `offset` is called once per child, right after its parent's count
/// for that type. Stops once more than `cap` individuals exist.
fn grow<R: Rng + ?Sized>(
    off: &Offspring,
    root: Event,
    rng: &mut R,
    cap: usize,
    mut offset: impl FnMut(&mut R) -> f64,
    mut keep: impl FnMut(&Event) -> bool,
) -> (Vec<Event>, bool) {
    let mut events = vec![root];
    let mut head = 0;
    while head < events.len() {
        let parent = events[head];
        head += 1;
        if !keep(&parent) {
            continue;
        }
        for child in 0..off.dim {
            let Some(law) = &off.laws[parent.kind * off.dim + child] else {
                continue;
            };
            let n = law.sample(rng) as u64;
            for _ in 0..n {
                let time = parent.time + offset(rng);
                events.push(Event { kind: child, time, generation: parent.generation + 1 });
                if events.len() > cap {
                    return (events, true);
                }
            }
        }
    }
    (events, false)
}

fn tree_from_events(dim: usize, events: &[Event], truncated: bool) -> TreeSample {
    let depth = events.iter().map(|e| e.generation).max().unwrap_or(0);
    let mut by_gen = vec![vec![0u64; dim]; depth + 1];
    let mut total = vec![0u64; dim];
    for e in events {
        by_gen[e.generation][e.kind] += 1;
        total[e.kind] += 1;
    }
    TreeSample { typed_counts: total, counts_by_generation: by_gen, truncated }
}

fn sample_tree_with<R: Rng + ?Sized>(off: &Offspring, root: usize, rng: &mut R, cap: usize) -> TreeSample {
    let (events, truncated) = grow(off, Event { kind: root, time: 0.0, generation: 0 }, rng, cap, |_| 0.0, |_| true);
    tree_from_events(off.dim, &events, truncated)
}

/// One tree rooted at `root`, drawn from replicate stream 0 of `seed`.
pub fn sample_gw(h: &NonNegMatrix, root: usize, seed: u64, cap: usize) -> Result<TreeSample> {
    check_root(h, root)?;
    check_cap(cap)?;
    Ok(sample_tree_with(&Offspring::new(h)?, root, &mut replicate_rng(seed, 0), cap))
}

fn check_cap(cap: usize) -> Result<()> {
    if cap == 0 {
        return Err(Error::InvalidArgument("cap must be at least 1".into()));
    }
    Ok(())
}

fn sample_cluster_with<R: Rng + ?Sized>(
    k: &KernelSpec,
    off: &Offspring,
    root: usize,
    t0: f64,
    rng: &mut R,
    cap: usize,
    horizon: f64,
) -> ClusterSample {
    let (events, truncated) = grow(
        off,
        Event { kind: root, time: t0, generation: 0 },
        rng,
        cap,
        |r| k.sample_offset(r),
        // Offsets are nonnegative: nothing born at or after the horizon has
        // descendants before it.
        |e| e.time < horizon,
    );
    ClusterSample { events, truncated }
}

/// One cluster rooted at `(root, t0)`, drawn from replicate stream 0 of
/// `seed`.
pub fn sample_cluster(k: &KernelSpec, root: usize, t0: f64, seed: u64, cap: usize) -> Result<ClusterSample> {
    k.validate()?;
    check_root(k.h(), root)?;
    check_cap(cap)?;
    let off = Offspring::new(k.h())?;
    Ok(sample_cluster_with(k, &off, root, t0, &mut replicate_rng(seed, 0), cap, f64::INFINITY))
}

/// Sum in a fixed binary tree over the slice, independent of threading.
pub fn pairwise_sum(x: &[f64]) -> f64 {
    if x.len() <= 32 {
        return x.iter().sum();
    }
    let (a, b) = x.split_at(x.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

fn summarize(values: &[f64], truncated: usize, seed: u64, u_nonzero: bool) -> EstimatorReport {
    let n = values.len();
    let mean = pairwise_sum(values) / n as f64;
    let dev: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = if n > 1 { pairwise_sum(&dev) / (n - 1) as f64 } else { 0.0 };
    EstimatorReport {
        estimate: mean,
        std_error: (var / n as f64).sqrt(),
        replicates: n,
        truncation_rate: truncated as f64 / n as f64,
        seed,
        lower_bound_only: truncated > 0 && u_nonzero,
    }
}

fn weight(u: &[f64], counts: &[u64]) -> f64 {
    u.iter().zip(counts).map(|(a, c)| a * *c as f64).sum::<f64>().exp()
}

fn check_reps(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one replicate".into()));
    }
    Ok(())
}

/// Per-replicate values `f(k)` with their truncation flags, in index order.
fn run_replicates<T: Send>(n: usize, f: impl Fn(u64) -> T + Sync + Send) -> Vec<T> {
    (0..n as u64).into_par_iter().map(f).collect()
}

/// Mean of `e^{u · card(T^root)}` over `n` trees.
pub fn empirical_laplace(
    h: &NonNegMatrix,
    u: &[f64],
    root: usize,
    n: usize,
    seed: u64,
    cap: usize,
) -> Result<EstimatorReport> {
    Ok(empirical_tail(h, u, root, 0, n, seed, cap)?.remove(0))
}

/// For `g = 0..=n_gen`, the mean of `e^{u · card(generations ≥ g)}`.
pub fn empirical_tail(
    h: &NonNegMatrix,
    u: &[f64],
    root: usize,
    n_gen: usize,
    reps: usize,
    seed: u64,
    cap: usize,
) -> Result<Vec<EstimatorReport>> {
    check_len(u, h.dim())?;
    check_nonneg_vector(u, "u")?;
    check_root(h, root)?;
    check_cap(cap)?;
    check_reps(reps)?;
    let off = Offspring::new(h)?;
    let rows = run_replicates(reps, |k| {
        let t = sample_tree_with(&off, root, &mut replicate_rng(seed, k), cap);
        let mut suffix = vec![0u64; h.dim()];
        let mut out = vec![1.0; n_gen + 1];
        for g in (0..t.counts_by_generation.len()).rev() {
            for (s, c) in suffix.iter_mut().zip(&t.counts_by_generation[g]) {
                *s += c;
            }
            if g <= n_gen {
                out[g] = weight(u, &suffix);
            }
        }
        (out, t.truncated)
    });
    Ok(columns(&rows, n_gen + 1, seed, u))
}

fn columns(rows: &[(Vec<f64>, bool)], width: usize, seed: u64, u: &[f64]) -> Vec<EstimatorReport> {
    let truncated = rows.iter().filter(|r| r.1).count();
    let nonzero = u.iter().any(|x| *x != 0.0);
    (0..width)
        .map(|j| {
            let col: Vec<f64> = rows.iter().map(|r| r.0[j]).collect();
            summarize(&col, truncated, seed, nonzero)
        })
        .collect()
}

/// For each `d`, the mean of `e^{u · card(events born at or after d)}` for
/// clusters rooted at `(root, 0)`.
pub fn empirical_cluster_tail(
    k: &KernelSpec,
    u: &[f64],
    root: usize,
    d_grid: &[f64],
    reps: usize,
    seed: u64,
    cap: usize,
) -> Result<Vec<EstimatorReport>> {
    k.validate()?;
    let h = k.h();
    check_len(u, h.dim())?;
    check_nonneg_vector(u, "u")?;
    check_root(h, root)?;
    check_cap(cap)?;
    check_reps(reps)?;
    let off = Offspring::new(h)?;
    let rows = run_replicates(reps, |rep| {
        let c = sample_cluster_with(k, &off, root, 0.0, &mut replicate_rng(seed, rep), cap, f64::INFINITY);
        let out = d_grid
            .iter()
            .map(|&d| {
                let mut counts = vec![0u64; h.dim()];
                for e in c.events.iter().filter(|e| e.time >= d) {
                    counts[e.kind] += 1;
                }
                weight(u, &counts)
            })
            .collect();
        (out, c.truncated)
    });
    Ok(columns(&rows, d_grid.len(), seed, u))
}

/// Mean of `e^{u · N([0, L))}` for the stationary Hawkes process, simulated
/// through its cluster representation with ancestors on `[-t_burn, L)`.
/// `t_burn` defaults to [`hawkes_burn_in`] at [`DEFAULT_BURN_IN_TOL`].
pub fn sample_hawkes(
    p: &HawkesParams,
    u: &[f64],
    reps: usize,
    seed: u64,
    cap: usize,
    t_burn: Option<f64>,
) -> Result<EstimatorReport> {
    p.validate()?;
    check_len(u, p.mu.len())?;
    check_nonneg_vector(u, "u")?;
    check_cap(cap)?;
    check_reps(reps)?;
    let t_burn = match t_burn {
        Some(t) if t >= 0.0 && t.is_finite() => t,
        Some(t) => return Err(Error::InvalidArgument(format!("burn-in must be finite and >= 0, got {t}"))),
        None => hawkes_burn_in(p, u, DEFAULT_BURN_IN_TOL, &SolverConfig::default())?.t_burn,
    };
    let h = p.kernel.h();
    let dim = h.dim();
    let off = Offspring::new(h)?;
    let span = t_burn + p.window;
    let arrivals: Vec<Option<Poisson<f64>>> =
        p.mu.iter().map(|&m| if m > 0.0 { Poisson::new(m * span).ok() } else { None }).collect();
    let rows = run_replicates(reps, |rep| {
        let mut rng = replicate_rng(seed, rep);
        let mut counts = vec![0u64; dim];
        let mut budget = cap;
        let mut truncated = false;
        'types: for (m, law) in arrivals.iter().enumerate() {
            let Some(law) = law else { continue };
            let n = law.sample(&mut rng) as u64;
            for _ in 0..n {
                let t0 = -t_burn + span * rng.random::<f64>();
                let c = sample_cluster_with(&p.kernel, &off, m, t0, &mut rng, budget, p.window);
                for e in c.events.iter().filter(|e| e.time >= 0.0 && e.time < p.window) {
                    counts[e.kind] += 1;
                }
                if c.truncated || c.events.len() >= budget {
                    truncated = true;
                    break 'types;
                }
                budget -= c.events.len();
            }
        }
        (vec![weight(u, &counts)], truncated)
    });
    Ok(columns(&rows, 1, seed, u).remove(0))
}
