//! Piecewise-constant bivariate matrix kernels `v(s, t)` on a uniform grid,
//! their convolution `(v ⋆ w)(s, t) = ∫ v(s, x) w(x, t) dx`, norms, residual
//! integrals and the resolvent series `Ψ = Σ_{n≥1} v^{⋆n}`.
//!
//! Kernels are constant on the cells `[iΔ, (i+1)Δ) × [jΔ, (j+1)Δ)` and zero
//! outside `[0, nΔ)²`. Every operation here is exact for such functions, up
//! to rounding: convolution of two cellwise-constant kernels is again
//! cellwise constant with value `Δ Σ_x v[i][x] w[x][j]`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::matrix::NonNegMatrix;
use crate::spectral::spectral_radius;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub step: f64,
    pub cells: usize,
}

impl Grid {
    pub fn new(step: f64, cells: usize) -> Result<Self> {
        if !(step > 0.0 && step.is_finite()) || cells == 0 {
            return Err(Error::InvalidArgument(format!(
                "grid needs a positive step and at least one cell, got step {step}, {cells} cells"
            )));
        }
        Ok(Grid { step, cells })
    }

    pub fn horizon(&self) -> f64 {
        self.step * self.cells as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridKernelJson", into = "GridKernelJson")]
pub struct GridKernel {
    grid: Grid,
    dim: usize,
    /// `values[((a * dim + b) * n + i) * n + j]`.
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridKernelJson {
    grid: Grid,
    /// `values[a][b][i][j]`.
    values: Vec<Vec<Vec<Vec<f64>>>>,
}

impl TryFrom<GridKernelJson> for GridKernel {
    type Error = Error;

    fn try_from(j: GridKernelJson) -> Result<Self> {
        let grid = Grid::new(j.grid.step, j.grid.cells)?;
        let dim = j.values.len();
        let n = grid.cells;
        let mut k = GridKernel::zeros(grid, dim)?;
        for (a, row) in j.values.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: row.len() });
            }
            for (b, cells) in row.iter().enumerate() {
                if cells.len() != n || cells.iter().any(|c| c.len() != n) {
                    return Err(Error::GridMismatch(format!("entry ({a}, {b}) is not {n}×{n}")));
                }
                for (i, c) in cells.iter().enumerate() {
                    for (jj, &v) in c.iter().enumerate() {
                        k.set(a, b, i, jj, v)?;
                    }
                }
            }
        }
        Ok(k)
    }
}

impl From<GridKernel> for GridKernelJson {
    fn from(k: GridKernel) -> Self {
        let n = k.grid.cells;
        let values = (0..k.dim)
            .map(|a| (0..k.dim).map(|b| k.entry(a, b).chunks(n).map(<[f64]>::to_vec).collect()).collect())
            .collect();
        GridKernelJson { grid: k.grid, values }
    }
}

impl GridKernel {
    pub fn zeros(grid: Grid, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidMatrix("kernel dimension must be at least 1".into()));
        }
        Ok(GridKernel { grid, dim, values: vec![0.0; dim * dim * grid.cells * grid.cells] })
    }

    /// `δ⁰`: mass `1/Δ` on the diagonal cells of each diagonal entry, the unit
    /// of `⋆` on the grid.
    pub fn delta0(grid: Grid, dim: usize) -> Result<Self> {
        let mut k = GridKernel::zeros(grid, dim)?;
        for a in 0..dim {
            for i in 0..grid.cells {
                k.set(a, a, i, i, 1.0 / grid.step)?;
            }
        }
        Ok(k)
    }

    /// Cell averages of `H_{ab} g(t - s)` for a parametric kernel, computed
    /// exactly from second differences of the integrated survival function.
    /// Returns the kernel and the mass lost beyond the grid horizon,
    /// `max_a Σ_b H_{ab} P(D ≥ horizon)`.
    pub fn from_kernel_spec(k: &KernelSpec, grid: Grid) -> Result<(Self, f64)> {
        k.validate()?;
        let h = k.h();
        let dim = h.dim();
        let n = grid.cells;
        let dt = grid.step;
        let profile: Vec<f64> = (0..n)
            .map(|lag| {
                let x = lag as f64 * dt;
                let second =
                    k.integrated_survival(x + dt) - 2.0 * k.integrated_survival(x) + k.integrated_survival(x - dt);
                (-second / (dt * dt)).max(0.0)
            })
            .collect();
        let mut out = GridKernel::zeros(grid, dim)?;
        for a in 0..dim {
            for b in 0..dim {
                let hab = h.get(a, b);
                if hab == 0.0 {
                    continue;
                }
                let e = out.entry_mut(a, b);
                for i in 0..n {
                    for j in i..n {
                        e[i * n + j] = hab * profile[j - i];
                    }
                }
            }
        }
        let lost = h.norm_inf() * k.survival(grid.horizon());
        Ok((out, lost))
    }

    /// Smallest grid with step `step` whose horizon leaves less than
    /// `1e-12` of the offset law beyond it, capped at `max_cells`.
    pub fn covering(k: &KernelSpec, step: f64, max_cells: usize) -> Result<Grid> {
        let mut n = 1;
        while n < max_cells && k.survival(n as f64 * step) >= 1e-12 {
            n += 1;
        }
        Grid::new(step, n)
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// The `n × n` cell values of entry `(a, b)`, row-major in `(s, t)`.
    pub fn entry(&self, a: usize, b: usize) -> &[f64] {
        let nn = self.grid.cells * self.grid.cells;
        let o = (a * self.dim + b) * nn;
        &self.values[o..o + nn]
    }

    fn entry_mut(&mut self, a: usize, b: usize) -> &mut [f64] {
        let nn = self.grid.cells * self.grid.cells;
        let o = (a * self.dim + b) * nn;
        &mut self.values[o..o + nn]
    }

    pub fn get(&self, a: usize, b: usize, i: usize, j: usize) -> f64 {
        self.entry(a, b)[i * self.grid.cells + j]
    }

    pub fn set(&mut self, a: usize, b: usize, i: usize, j: usize, v: f64) -> Result<()> {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::InvalidMatrix(format!("grid kernel values must be finite and >= 0, got {v}")));
        }
        let n = self.grid.cells;
        if a >= self.dim || b >= self.dim || i >= n || j >= n {
            return Err(Error::InvalidArgument(format!("index ({a}, {b}, {i}, {j}) out of range")));
        }
        self.entry_mut(a, b)[i * n + j] = v;
        Ok(())
    }

    pub fn scale(&self, c: f64) -> GridKernel {
        assert!(c >= 0.0 && c.is_finite());
        GridKernel { grid: self.grid, dim: self.dim, values: self.values.iter().map(|v| v * c).collect() }
    }

    pub fn add(&self, other: &GridKernel) -> Result<GridKernel> {
        self.compatible(other)?;
        Ok(GridKernel {
            grid: self.grid,
            dim: self.dim,
            values: self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect(),
        })
    }

    fn compatible(&self, other: &GridKernel) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch(format!("{:?} vs {:?}", self.grid, other.grid)));
        }
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: other.dim });
        }
        Ok(())
    }

    /// Largest entrywise absolute difference.
    pub fn max_abs_diff(&self, other: &GridKernel) -> Result<f64> {
        self.compatible(other)?;
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
    }
}

/// `v ⋆ w` on the shared grid. Output rows are computed independently and
/// in a fixed order, so the result does not depend on the thread count.
pub fn biconvolve(v: &GridKernel, w: &GridKernel) -> Result<GridKernel> {
    v.compatible(w)?;
    let m = v.dim;
    let n = v.grid.cells;
    let dt = v.grid.step;
    let mut out = GridKernel::zeros(v.grid, m)?;
    // One chunk per (a, c, i): the s-row i of entry (a, c).
    out.values.par_chunks_mut(n).enumerate().for_each(|(idx, row)| {
        let i = idx % n;
        let ac = idx / n;
        let (a, c) = (ac / m, ac % m);
        for b in 0..m {
            let vrow = &v.entry(a, b)[i * n..(i + 1) * n];
            let wab = w.entry(b, c);
            for (x, &vx) in vrow.iter().enumerate() {
                if vx == 0.0 {
                    continue;
                }
                let wrow = &wab[x * n..(x + 1) * n];
                for (o, &wx) in row.iter_mut().zip(wrow) {
                    *o += vx * wx * dt;
                }
            }
        }
    });
    Ok(out)
}

/// `(‖v‖_{L∞L¹}, ‖v‖_{L∞L∞})`: per entry, the largest row integral
/// `sup_s ∫ v(s, t) dt` and the largest value.
pub fn grid_norms(v: &GridKernel) -> (NonNegMatrix, NonNegMatrix) {
    let m = v.dim;
    let n = v.grid.cells;
    let mut l1 = vec![0.0; m * m];
    let mut sup = vec![0.0; m * m];
    for a in 0..m {
        for b in 0..m {
            let e = v.entry(a, b);
            let mut best_l1: f64 = 0.0;
            let mut best_sup: f64 = 0.0;
            for row in e.chunks(n) {
                best_l1 = best_l1.max(row.iter().sum::<f64>() * v.grid.step);
                best_sup = row.iter().copied().fold(best_sup, f64::max);
            }
            l1[a * m + b] = best_l1;
            sup[a * m + b] = best_sup;
        }
    }
    (NonNegMatrix::from_raw(m, l1), NonNegMatrix::from_raw(m, sup))
}

/// `R^∞_v(d) = sup_s ∫_{s+d}^∞ v(s, x) dx`. Within an s-cell the integrand
/// does not depend on `s`, so the supremum sits at the left edge of a cell;
/// partial cells are integrated exactly.
pub fn grid_residual(v: &GridKernel, d: f64) -> Result<NonNegMatrix> {
    if !(d >= 0.0) {
        return Err(Error::InvalidArgument(format!("d must be >= 0, got {d}")));
    }
    let m = v.dim;
    let n = v.grid.cells;
    let dt = v.grid.step;
    let mut out = vec![0.0; m * m];
    for a in 0..m {
        for b in 0..m {
            let e = v.entry(a, b);
            let mut best: f64 = 0.0;
            for i in 0..n {
                let from = (i as f64 * dt + d) / dt;
                if from >= n as f64 {
                    break;
                }
                let first = from.floor() as usize;
                let row = &e[i * n..(i + 1) * n];
                let partial = row[first] * (first as f64 + 1.0 - from) * dt;
                let rest: f64 = row[first + 1..].iter().sum::<f64>() * dt;
                best = best.max(partial + rest);
            }
            out[a * m + b] = best;
        }
    }
    Ok(NonNegMatrix::from_raw(m, out))
}

/// `Σ_{n=1}^{N} v^{⋆n}` together with the bound `V^{N+1}(I - V)^{-1}` on the
/// `L∞L¹` norm of the omitted terms, `V = ‖v‖_{L∞L¹}`.
#[derive(Clone, Debug, PartialEq)]
pub struct PsiSeries {
    pub psi: GridKernel,
    pub terms: usize,
    pub tail_bound: NonNegMatrix,
}

pub fn psi_series_grid(v: &GridKernel, n_terms: usize) -> Result<PsiSeries> {
    if n_terms == 0 {
        return Err(Error::InvalidArgument("n_terms must be at least 1".into()));
    }
    let (big_v, _) = grid_norms(v);
    let rho = spectral_radius(&big_v, 1e-12)?;
    if rho >= 1.0 {
        return Err(Error::SeriesDiverges(rho));
    }
    // Horner form: Ψ_N = v + v ⋆ Ψ_{N-1}.
    let mut psi = v.clone();
    for _ in 1..n_terms {
        psi = v.add(&biconvolve(v, &psi)?)?;
    }
    let tail_bound = big_v.pow(n_terms as u32 + 1).matmul(&inverse_identity_minus(&big_v)?);
    Ok(PsiSeries { psi, terms: n_terms, tail_bound })
}

/// Number of terms after which the series tail bound drops below `tol` in
/// the `∞`-norm, capped at `max_terms`.
pub fn psi_terms_for(v: &GridKernel, tol: f64, max_terms: usize) -> Result<usize> {
    let (big_v, _) = grid_norms(v);
    let inv = inverse_identity_minus(&big_v)?;
    let mut p = big_v.clone();
    for n in 1..=max_terms {
        p = p.matmul(&big_v);
        if p.matmul(&inv).norm_inf() < tol {
            return Ok(n);
        }
    }
    Ok(max_terms)
}

/// `(I - V)^{-1}` for `spr(V) < 1`, which is entrywise nonnegative.
pub(crate) fn inverse_identity_minus(v: &NonNegMatrix) -> Result<NonNegMatrix> {
    let m = v.dim();
    let mut data = vec![0.0; m * m];
    for j in 0..m {
        let mut e = vec![0.0; m];
        e[j] = 1.0;
        let col = v.solve_identity_minus(&e)?;
        for i in 0..m {
            data[i * m + j] = col[i].max(0.0);
        }
    }
    Ok(NonNegMatrix::from_raw(m, data))
}

/// Options for [`convolve_check`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvolveCheckConfig {
    pub kernels: usize,
    pub max_dim: usize,
    pub step: f64,
    pub cells: usize,
    /// Tolerance factor: inequalities may be off by `tolerance_factor · Δ`
    /// times the right-hand side.
    pub tolerance_factor: f64,
    pub p_values: Vec<f64>,
    pub d_values: Vec<f64>,
    /// Rates `(a, b)` of the exponential resolvent check.
    pub exp_a: f64,
    pub exp_b: f64,
    pub exp_cells: usize,
    pub exp_rel_tol: f64,
    pub seed: u64,
}

impl Default for ConvolveCheckConfig {
    fn default() -> Self {
        ConvolveCheckConfig {
            kernels: 50,
            max_dim: 2,
            step: 0.05,
            cells: 60,
            tolerance_factor: 10.0,
            p_values: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            d_values: vec![0.0, 0.1, 0.25, 0.5, 0.8, 1.2, 1.7, 2.3],
            exp_a: 0.3,
            exp_b: 1.0,
            exp_cells: 100,
            exp_rel_tol: 0.05,
            seed: 0,
        }
    }
}

/// One line of the property-suite report. `worst` is the largest observed
/// `lhs / (rhs + tol)` (inequalities) or relative error (closed form).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub cases: usize,
    pub worst: f64,
    pub limit: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvolveCheckReport {
    pub config: ConvolveCheckConfig,
    pub checks: Vec<CheckOutcome>,
    pub passed: bool,
}

/// Random causal kernel with cellwise noise: `v_ab[i][j] = w_ab e^{-λ_ab (j-i)Δ} (0.5 + ξ_ij)`
/// for `j ≥ i`, rescaled so that `spr(‖v‖_{L∞L¹})` is uniform in `[0.2, 0.8]`.
/// Some entries are set to zero.
pub fn random_grid_kernel<R: Rng + ?Sized>(rng: &mut R, grid: Grid, dim: usize) -> Result<GridKernel> {
    let n = grid.cells;
    let mut k = GridKernel::zeros(grid, dim)?;
    for a in 0..dim {
        for b in 0..dim {
            if dim > 1 && rng.random::<f64>() < 0.2 {
                continue;
            }
            let weight: f64 = rng.random_range(0.1..1.0);
            let rate: f64 = rng.random_range(0.5..6.0);
            for i in 0..n {
                for j in i..n {
                    let noise: f64 = rng.random();
                    let v = weight * (-rate * (j - i) as f64 * grid.step).exp() * (0.5 + noise);
                    k.set(a, b, i, j, v)?;
                }
            }
        }
    }
    let (big_v, _) = grid_norms(&k);
    let rho = spectral_radius(&big_v, 1e-12)?;
    let target: f64 = rng.random_range(0.2..0.8);
    Ok(if rho > 0.0 { k.scale(target / rho) } else { k })
}

fn worst_ratio(lhs: &NonNegMatrix, rhs: &NonNegMatrix, rel: f64) -> f64 {
    lhs.as_slice().iter().zip(rhs.as_slice()).map(|(l, r)| l / (r * (1.0 + rel) + 1e-12)).fold(0.0, f64::max)
}

fn add(a: &NonNegMatrix, b: &NonNegMatrix) -> NonNegMatrix {
    NonNegMatrix::from_raw(a.dim(), a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x + y).collect())
}

struct Tally {
    name: &'static str,
    cases: usize,
    worst: f64,
}

impl Tally {
    fn new(name: &'static str) -> Self {
        Tally { name, cases: 0, worst: 0.0 }
    }

    fn record(&mut self, ratio: f64) {
        self.cases += 1;
        self.worst = self.worst.max(ratio);
    }

    fn finish(self, limit: f64) -> CheckOutcome {
        CheckOutcome {
            name: self.name.into(),
            cases: self.cases,
            worst: self.worst,
            limit,
            passed: self.worst <= limit,
        }
    }
}

/// Runs the bivariate-convolution property suite on random kernels:
///
/// * norm inequalities for `v ⋆ w` in `L∞L¹` and `L∞L∞`,
/// * the residual split `R_{v⋆w}(d) ⪯ ‖v‖ R_w(qd) + R_v(pd) ‖w‖`,
/// * the resolvent residual bound `R_Ψ(d) ⪯ Σ_k V^k R_v((1-p)p^k d)(I - V)^{-1}`,
/// * the fixed point `Ψ = v ⋆ (Ψ + δ⁰)`,
///
/// and compares the resolvent of `a e^{-b(t-s)}` with `a e^{-(b-a)(t-s)}`.
pub fn convolve_check(cfg: &ConvolveCheckConfig) -> Result<ConvolveCheckReport> {
    use rand::SeedableRng;
    if cfg.max_dim == 0 || cfg.kernels == 0 {
        return Err(Error::InvalidArgument("need at least one kernel of dimension >= 1".into()));
    }
    if cfg.p_values.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::InvalidArgument("p values must lie in [0, 1]".into()));
    }
    let grid = Grid::new(cfg.step, cfg.cells)?;
    let tol = cfg.tolerance_factor * cfg.step;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut l1 = Tally::new("norm_l1");
    let mut linf = Tally::new("norm_linf");
    let mut split = Tally::new("residual_split");
    let mut series = Tally::new("resolvent_residual");
    let mut fixed = Tally::new("resolvent_fixed_point");

    for idx in 0..cfg.kernels {
        let dim = 1 + idx % cfg.max_dim;
        let v = random_grid_kernel(&mut rng, grid, dim)?;
        let w = random_grid_kernel(&mut rng, grid, dim)?;
        let vw = biconvolve(&v, &w)?;
        let (v1, _) = grid_norms(&v);
        let (w1, winf) = grid_norms(&w);
        let (vw1, vwinf) = grid_norms(&vw);
        l1.record(worst_ratio(&vw1, &v1.matmul(&w1), tol));
        linf.record(worst_ratio(&vwinf, &v1.matmul(&winf), tol));

        for &d in &cfg.d_values {
            let lhs = grid_residual(&vw, d)?;
            for &p in &cfg.p_values {
                let rhs = add(&v1.matmul(&grid_residual(&w, (1.0 - p) * d)?), &grid_residual(&v, p * d)?.matmul(&w1));
                split.record(worst_ratio(&lhs, &rhs, tol));
            }
        }

        let terms = psi_terms_for(&v, 1e-10, 400)?;
        let ps = psi_series_grid(&v, terms)?;
        let inv = inverse_identity_minus(&v1)?;
        for &d in cfg.d_values.iter().filter(|d| **d > 0.0) {
            let lhs = grid_residual(&ps.psi, d)?;
            for &p in cfg.p_values.iter().filter(|p| **p > 0.0 && **p < 1.0) {
                let kmax = 60;
                let mut rhs = NonNegMatrix::zeros(dim);
                let mut vk = NonNegMatrix::identity(dim);
                for k in 0..=kmax {
                    let r = grid_residual(&v, (1.0 - p) * p.powi(k) * d)?;
                    rhs = add(&rhs, &vk.matmul(&r).matmul(&inv));
                    vk = vk.matmul(&v1);
                }
                // Omitted terms: V^{k+1} R_v(·) (I - V)^{-1} ⪯ V^{k+1} V (I - V)^{-1}, summed.
                let tail = vk.matmul(&inv).matmul(&v1).matmul(&inv);
                series.record(worst_ratio(&lhs, &add(&rhs, &tail), tol));
            }
        }

        let delta = GridKernel::delta0(grid, dim)?;
        let rhs = biconvolve(&v, &ps.psi.add(&delta)?)?;
        // The two sides differ by the next series term, bounded in sup by
        // ‖v‖_{L∞L¹}^{N} ‖v‖_{L∞L∞}.
        let (_, vinf) = grid_norms(&v);
        let slack = v1.pow(terms as u32).matmul(&vinf).norm_inf();
        let scale = grid_norms(&ps.psi).1.norm_inf().max(1e-300);
        let err = ps.psi.max_abs_diff(&rhs)?;
        fixed.record(((err - slack).max(0.0)) / (tol * scale));
    }

    let exp = exponential_resolvent_error(cfg.exp_a, cfg.exp_b, cfg.step, cfg.exp_cells)?;
    let checks = vec![
        l1.finish(1.0),
        linf.finish(1.0),
        split.finish(1.0),
        series.finish(1.0),
        fixed.finish(1.0),
        CheckOutcome {
            name: "exponential_resolvent".into(),
            cases: 1,
            worst: exp,
            limit: cfg.exp_rel_tol,
            passed: exp <= cfg.exp_rel_tol,
        },
    ];
    let passed = checks.iter().all(|c| c.passed);
    Ok(ConvolveCheckReport { config: cfg.clone(), checks, passed })
}

/// Largest relative cellwise error between the grid resolvent of
/// `v = a e^{-b(t-s)} 1_{s≤t}` and the cell averages of `a e^{-(b-a)(t-s)} 1_{s≤t}`.
pub fn exponential_resolvent_error(a: f64, b: f64, step: f64, cells: usize) -> Result<f64> {
    if !(b > a && a > 0.0) {
        return Err(Error::InvalidArgument(format!("need b > a > 0, got a = {a}, b = {b}")));
    }
    let grid = Grid::new(step, cells)?;
    let h = |x: f64| NonNegMatrix::scalar(x);
    let (v, _) = GridKernel::from_kernel_spec(&KernelSpec::ExponentialDecay { h: h(a / b)?, a: 1.0, c: b }, grid)?;
    let (exact, _) =
        GridKernel::from_kernel_spec(&KernelSpec::ExponentialDecay { h: h(a / (b - a))?, a: 1.0, c: b - a }, grid)?;
    let terms = psi_terms_for(&v, 1e-12, 1000)?;
    let ps = psi_series_grid(&v, terms)?;
    let n = cells;
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in i..n {
            let e = exact.get(0, 0, i, j);
            worst = worst.max((ps.psi.get(0, 0, i, j) - e).abs() / e);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn lag_kernel(grid: Grid, f: impl Fn(usize) -> f64) -> GridKernel {
        let mut k = GridKernel::zeros(grid, 1).unwrap();
        let n = grid.cells;
        for i in 0..n {
            for j in i..n {
                k.set(0, 0, i, j, f(j - i)).unwrap();
            }
        }
        k
    }

    #[test]
    fn delta_is_the_unit() {
        let grid = Grid::new(0.1, 20).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = random_grid_kernel(&mut rng, grid, 2).unwrap();
        let d = GridKernel::delta0(grid, 2).unwrap();
        assert!(biconvolve(&v, &d).unwrap().max_abs_diff(&v).unwrap() < 1e-14);
        assert!(biconvolve(&d, &v).unwrap().max_abs_diff(&v).unwrap() < 1e-14);
        let zero = GridKernel::zeros(grid, 2).unwrap();
        assert_eq!(biconvolve(&zero, &v).unwrap(), zero);
    }

    #[test]
    fn boxes_make_a_triangle() {
        // f = 1_{[0,1]} on lags; f ⋆ f peaks at lag 1 with value 1.
        let grid = Grid::new(0.05, 80).unwrap();
        let k = KernelSpec::CompactSupport { h: NonNegMatrix::scalar(1.0).unwrap(), a: 1.0 };
        let (v, _) = GridKernel::from_kernel_spec(&k, grid).unwrap();
        let t = biconvolve(&v, &v).unwrap();
        let peak = (0..80).map(|j| t.get(0, 0, 0, j)).fold(0.0, f64::max);
        assert!((peak - 1.0).abs() < 0.05, "{peak}");
        let at_one = t.get(0, 0, 0, 20);
        assert!((at_one - 1.0).abs() < 0.05, "{at_one}");
        assert!(t.get(0, 0, 0, 39) < 0.06);
    }

    #[test]
    fn norm_examples() {
        let grid = Grid::new(0.1, 20).unwrap();
        let mut k = GridKernel::zeros(grid, 2).unwrap();
        for i in 0..10 {
            for j in 0..10 {
                k.set(0, 1, i, j, 1.0).unwrap();
            }
        }
        let (l1, linf) = grid_norms(&k);
        assert!((l1.get(0, 1) - 1.0).abs() < 1e-14);
        assert_eq!(linf.get(0, 1), 1.0);
        assert_eq!(l1.get(1, 0), 0.0);
        let (l1s, _) = grid_norms(&k.scale(3.0));
        assert!((l1s.get(0, 1) - 3.0).abs() < 1e-14);

        let spec = KernelSpec::ExponentialDecay { h: NonNegMatrix::scalar(1.0).unwrap(), a: 1.0, c: 1.0 };
        let g = GridKernel::covering(&spec, 0.05, 2000).unwrap();
        let (v, lost) = GridKernel::from_kernel_spec(&spec, g).unwrap();
        assert!(lost < 1e-12);
        assert!((grid_norms(&v).0.get(0, 0) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn residual_of_parametric_kernel() {
        let spec = KernelSpec::ExponentialDecay { h: NonNegMatrix::scalar(0.5).unwrap(), a: 1.0, c: 1.0 };
        let (v, _) = GridKernel::from_kernel_spec(&spec, Grid::new(0.05, 600).unwrap()).unwrap();
        for d in [0.0, 0.5, 1.0, 2.0] {
            let r = grid_residual(&v, d).unwrap().get(0, 0);
            // Cell averaging spreads mass by at most one cell.
            assert!(r <= 0.5 * (-(d - 0.05f64).max(0.0)).exp() + 1e-9);
            assert!(r >= 0.5 * (-(d + 0.05)).exp() - 1e-9);
        }
    }

    #[test]
    fn psi_examples() {
        let grid = Grid::new(0.1, 20).unwrap();
        let zero = GridKernel::zeros(grid, 1).unwrap();
        assert_eq!(psi_series_grid(&zero, 5).unwrap().psi, zero);
        let v = lag_kernel(grid, |l| 0.5 * (-(l as f64) * 0.1).exp());
        assert_eq!(psi_series_grid(&v, 1).unwrap().psi, v);
        let big = v.scale(100.0);
        assert!(matches!(psi_series_grid(&big, 3), Err(Error::SeriesDiverges(_))));
    }

    #[test]
    fn exponential_resolvent_closed_form() {
        let err = exponential_resolvent_error(0.3, 1.0, 0.05, 100).unwrap();
        assert!(err < 0.05, "{err}");
    }

    #[test]
    fn grid_mismatch_is_an_error() {
        let a = GridKernel::zeros(Grid::new(0.1, 10).unwrap(), 1).unwrap();
        let b = GridKernel::zeros(Grid::new(0.1, 11).unwrap(), 1).unwrap();
        assert!(matches!(biconvolve(&a, &b), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn json_round_trip() {
        let grid = Grid::new(0.5, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = random_grid_kernel(&mut rng, grid, 2).unwrap();
        let s = serde_json::to_string(&v).unwrap();
        assert_eq!(serde_json::from_str::<GridKernel>(&s).unwrap(), v);
    }

    #[test]
    fn small_suite_passes() {
        let cfg = ConvolveCheckConfig { kernels: 4, cells: 30, exp_cells: 60, ..Default::default() };
        let report = convolve_check(&cfg).unwrap();
        assert!(report.passed, "{report:#?}");
    }

    #[test]
    fn parametric_bounds_dominate_grid_resolvent() {
        use crate::kernel::{cluster_bound_exponential, cluster_bound_power, eps_max};
        use crate::spectral::GrowthCertificate;
        let h = NonNegMatrix::scalar(0.5).unwrap();

        let spec = KernelSpec::ExponentialDecay { h: h.clone(), a: 1.0, c: 1.0 };
        let (v, _) = GridKernel::from_kernel_spec(&spec, Grid::new(0.05, 300).unwrap()).unwrap();
        let ps = psi_series_grid(&v, psi_terms_for(&v, 1e-12, 500).unwrap()).unwrap();
        let cert = GrowthCertificate::new(0.5, 1.0).unwrap();
        let eps = 0.5 * eps_max(0.5, 1.0, 1.0);
        for d in [0.0, 0.5, 1.0, 2.0, 4.0, 8.0] {
            let r = grid_residual(&ps.psi, d).unwrap().norm_inf();
            let b = cluster_bound_exponential(&cert, 1.0, 1.0, eps, 1.0, d).unwrap();
            assert!(r <= b, "d = {d}: {r} > {b}");
        }

        let spec = KernelSpec::PowerLawDecay { h, a: 1.0, gamma: 2.0 };
        let (v, _) = GridKernel::from_kernel_spec(&spec, Grid::new(0.1, 200).unwrap()).unwrap();
        let ps = psi_series_grid(&v, psi_terms_for(&v, 1e-12, 500).unwrap()).unwrap();
        for d in [1.0, 2.0, 5.0, 10.0, 15.0] {
            let r = grid_residual(&ps.psi, d).unwrap().norm_inf();
            let b = cluster_bound_power(&cert, 1.0, 2.0, 0.5, 1.0, d).unwrap();
            assert!(r <= b, "d = {d}: {r} > {b}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn convolution_is_associative_and_thread_independent(seed in any::<u64>()) {
            let grid = Grid::new(0.1, 12).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_grid_kernel(&mut rng, grid, 2).unwrap();
            let b = random_grid_kernel(&mut rng, grid, 2).unwrap();
            let c = random_grid_kernel(&mut rng, grid, 2).unwrap();
            let left = biconvolve(&biconvolve(&a, &b).unwrap(), &c).unwrap();
            let right = biconvolve(&a, &biconvolve(&b, &c).unwrap()).unwrap();
            prop_assert!(left.max_abs_diff(&right).unwrap() < 1e-12);
            let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
            let single = pool.install(|| biconvolve(&a, &b).unwrap());
            prop_assert_eq!(single, biconvolve(&a, &b).unwrap());
        }

        #[test]
        fn residual_is_nonincreasing(seed in any::<u64>(), d in 0.0..1.5f64, e in 0.0..0.5f64) {
            let grid = Grid::new(0.1, 16).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v = random_grid_kernel(&mut rng, grid, 2).unwrap();
            let r0 = grid_residual(&v, 0.0).unwrap();
            let r1 = grid_residual(&v, d).unwrap();
            let r2 = grid_residual(&v, d + e).unwrap();
            let (v1, _) = grid_norms(&v);
            for i in 0..4 {
                prop_assert!((r0.as_slice()[i] - v1.as_slice()[i]).abs() < 1e-12);
                prop_assert!(r2.as_slice()[i] <= r1.as_slice()[i] + 1e-15);
            }
        }
    }
}
