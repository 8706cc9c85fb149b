//! The Laplace exponent `L(u)`: the smallest nonnegative solution of
//! `x = u + H(e^x - 1)`, whose coordinate `m` is `log E[exp(u · card(T^m))]`
//! for a Poissonian Galton-Watson tree `T^m` rooted at type `m`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{check_len, check_nonneg_vector, norm_inf, NonNegMatrix};
use crate::spectral::{neumann_apply, shifted_power, spectral_radius, t0, GrowthCertificate};

const SPR_TOL: f64 = 1e-12;
const MAX_CONDITION: f64 = 1e12;
const POLISH_STEPS: usize = 50;

/// Knobs for [`solve_l`]. The defaults suit matrices with entries of order 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Relative increment at which the iteration is considered converged.
    pub tol: f64,
    pub max_iter: usize,
    /// Residual the Newton polish aims for; a warning is logged when a
    /// converged solution misses it. Polishing continues past it while the
    /// residual keeps shrinking.
    pub newton_residual: f64,
    /// Largest coordinate fed to `exp` before the iterate counts as
    /// overflowing.
    pub exp_cap: f64,
    /// `spr(H diag(e^x))` must exceed `1 + margin` before divergence is
    /// investigated.
    pub margin: f64,
    /// Number of consecutive supercritical iterates required before the
    /// divergence certificate is attempted.
    pub window: usize,
    /// Interleave monotone Newton steps with the plain iteration.
    pub accelerate: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: 1e-10,
            max_iter: 1_000_000,
            newton_residual: 1e-12,
            exp_cap: 700.0,
            margin: 1e-6,
            window: 50,
            accelerate: true,
        }
    }
}

/// Why the iteration is known to diverge.
///
/// At the sub-solution `iterate` (so `iterate ⪯ L(u)`), with
/// `A = H diag(e^iterate)` and `d = ψ(iterate) - iterate`, the vector
/// `direction` satisfies `A κ ⪰ growth · κ` with `growth > 1`, and
/// `Σ_{j≤M} Aʲ d ⪰ exp(log_scale) · κ`. Every later increment of the
/// iteration dominates the corresponding power of `A` applied to `d`, so the
/// iterates grow without bound on the support of `κ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivergenceWitness {
    pub iterate: Vec<f64>,
    pub direction: Vec<f64>,
    pub growth: f64,
    pub log_scale: f64,
    pub spectral_radius: f64,
    /// Types on which `L(u)` is infinite.
    pub infinite_types: Vec<usize>,
}

/// Outcome of [`solve_l`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum LaplaceExponent {
    Converged {
        value: Vec<f64>,
        residual: f64,
        iterations: usize,
    },
    CertifiedDivergent {
        witness: DivergenceWitness,
        iterations: usize,
    },
    /// Neither convergence nor a divergence certificate within budget.
    /// `lower ⪯ L(u)` always; `upper`, when present, is a verified
    /// super-solution so `L(u) ⪯ upper`.
    BudgetExhausted {
        lower: Vec<f64>,
        upper: Option<Vec<f64>>,
        iterations: usize,
    },
}

impl LaplaceExponent {
    pub fn value(&self) -> Option<&[f64]> {
        match self {
            LaplaceExponent::Converged { value, .. } => Some(value),
            _ => None,
        }
    }

    pub fn is_converged(&self) -> bool {
        matches!(self, LaplaceExponent::Converged { .. })
    }

    pub fn is_divergent(&self) -> bool {
        matches!(self, LaplaceExponent::CertifiedDivergent { .. })
    }

    pub fn iterations(&self) -> usize {
        match self {
            LaplaceExponent::Converged { iterations, .. }
            | LaplaceExponent::CertifiedDivergent { iterations, .. }
            | LaplaceExponent::BudgetExhausted { iterations, .. } => *iterations,
        }
    }

    /// The value, or [`Error::NoFiniteBound`] when the solver did not converge.
    pub fn into_value(self) -> Result<Vec<f64>> {
        match self {
            LaplaceExponent::Converged { value, .. } => Ok(value),
            _ => Err(Error::NoFiniteBound),
        }
    }
}

/// `ψ_u(x) = u + H(e^x - 1)`.
///
/// Fails with [`Error::Overflow`] when a coordinate that actually feeds an
/// exponential is above `exp_cap`. Columns of `H` that are identically zero
/// never touch `e^x`.
pub fn psi_apply(h: &NonNegMatrix, u: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    check_len(u, h.dim())?;
    check_len(x, h.dim())?;
    psi_capped(h, u, x, 709.0)
}

fn psi_capped(h: &NonNegMatrix, u: &[f64], x: &[f64], cap: f64) -> Result<Vec<f64>> {
    let n = h.dim();
    let feeds = feeding_columns(h);
    let mut growth = vec![0.0; n];
    for j in 0..n {
        if feeds[j] {
            if !(x[j] <= cap) {
                return Err(Error::Overflow { coordinate: j, value: x[j] });
            }
            growth[j] = x[j].exp_m1();
        }
    }
    let hg = h.mul_vec(&growth);
    Ok(u.iter().zip(hg).map(|(a, b)| a + b).collect())
}

/// `H diag(e^x)`. Columns of `H` that vanish stay zero whatever `x` is.
fn jacobian(h: &NonNegMatrix, x: &[f64]) -> NonNegMatrix {
    let feeds = feeding_columns(h);
    let e: Vec<f64> = x.iter().zip(&feeds).map(|(v, &f)| if f { v.exp() } else { 1.0 }).collect();
    h.scale_columns(&e)
}

/// Columns of `H` with a positive entry: the coordinates of `x` that reach
/// an exponential in `ψ_u`.
fn feeding_columns(h: &NonNegMatrix) -> Vec<bool> {
    let n = h.dim();
    (0..n).map(|j| (0..n).any(|i| h.get(i, j) > 0.0)).collect()
}

fn residual(h: &NonNegMatrix, u: &[f64], x: &[f64], cap: f64) -> f64 {
    match psi_capped(h, u, x, cap) {
        Ok(p) => p.iter().zip(x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max),
        Err(_) => f64::INFINITY,
    }
}

/// `x + (Id - J)⁻¹ (ψ(x) - x)` with `J = H diag(e^x)`, if `spr(J) < 1` and
/// `Id - J` is well conditioned.
fn newton_step(h: &NonNegMatrix, x: &[f64], psi_x: &[f64]) -> Option<Vec<f64>> {
    let j = jacobian(h, x);
    let rho = spectral_radius(&j, SPR_TOL).ok()?;
    if rho >= 1.0 || j.identity_minus_condition() >= MAX_CONDITION {
        return None;
    }
    let d: Vec<f64> = psi_x.iter().zip(x).map(|(a, b)| a - b).collect();
    let s = j.solve_identity_minus(&d).ok()?;
    let next: Vec<f64> = x.iter().zip(&s).map(|(a, b)| a + b).collect();
    next.iter().all(|v| v.is_finite()).then_some(next)
}

/// Solves for `L(u)` by the monotone iteration `x_{n+1} = ψ_u(x_n)` from 0.
///
/// Newton steps taken from a sub-solution `x` with `spr(H diag(e^x)) < 1`
/// stay below `L(u)` and remain sub-solutions (by convexity of `ψ_u`), so
/// they are interleaved with the plain iteration without losing the
/// monotone lower-bound structure. After convergence the iterate is polished
/// by Newton as long as the fixed-point residual keeps decreasing.
pub fn solve_l(h: &NonNegMatrix, u: &[f64], cfg: &SolverConfig) -> Result<LaplaceExponent> {
    check_len(u, h.dim())?;
    check_nonneg_vector(u, "u")?;
    if !(cfg.tol > 0.0) || cfg.max_iter == 0 {
        return Err(Error::InvalidArgument("tol must be positive and max_iter at least 1".into()));
    }
    if !(cfg.exp_cap > 0.0 && cfg.exp_cap <= 700.0) {
        return Err(Error::InvalidArgument(format!("exp_cap must lie in (0, 700], got {}", cfg.exp_cap)));
    }
    let n = h.dim();
    let cap = cfg.exp_cap;
    let feeds = feeding_columns(h);
    let mut x = vec![0.0; n];
    let mut previous: Option<Vec<f64>> = None;
    let mut supercritical_run = 0usize;
    let mut last_spr = 0.0;

    for it in 1..=cfg.max_iter {
        let psi_x = match psi_capped(h, u, &x, cap) {
            Ok(p) => p,
            Err(_) => {
                // x itself is a sub-solution whose image cannot be evaluated;
                // every earlier iterate has been checked already.
                return Ok(exhausted(h, u, x, it, cap));
            }
        };
        let j = jacobian(h, &x);
        let rho = spectral_radius(&j, SPR_TOL)?;
        last_spr = rho;

        let mut next = psi_x.clone();
        if cfg.accelerate && rho < 1.0 {
            if let Some(xn) = newton_step(h, &x, &psi_x) {
                next = xn;
            }
        }
        // Both steps are nondecreasing in exact arithmetic; guard against
        // rounding so the iterate stays a valid lower bound.
        for (a, b) in next.iter_mut().zip(&x) {
            *a = a.max(*b);
        }

        if next.iter().zip(&feeds).any(|(v, &f)| f && *v > cap) {
            // Very large iterates can make the certificate's arithmetic
            // overflow; the previous iterate is also a valid starting point.
            for candidate in std::iter::once(&x).chain(previous.as_ref()) {
                if let Some(w) = divergence_certificate(h, u, candidate, cap) {
                    return Ok(LaplaceExponent::CertifiedDivergent { witness: w, iterations: it });
                }
            }
            return Ok(exhausted(h, u, x, it, cap));
        }

        let step = next.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        previous = Some(std::mem::replace(&mut x, next));
        if step <= cfg.tol * norm_inf(&x).max(1.0) {
            let (value, res) = polish(h, u, x, cap);
            if res > cfg.newton_residual {
                log::warn!("solve_l converged with residual {res:e} above the target {:e}", cfg.newton_residual);
            } else {
                log::debug!("solve_l converged after {it} iterations, residual {res:e}");
            }
            return Ok(LaplaceExponent::Converged { value, residual: res, iterations: it });
        }

        if rho >= 1.0 + cfg.margin {
            supercritical_run += 1;
            if supercritical_run >= cfg.window {
                supercritical_run = 0;
                if let Some(w) = divergence_certificate(h, u, &x, cap) {
                    return Ok(LaplaceExponent::CertifiedDivergent { witness: w, iterations: it });
                }
            }
        } else {
            supercritical_run = 0;
        }
    }
    log::warn!("solve_l exhausted {} iterations; last spr(H diag(e^x)) = {last_spr}", cfg.max_iter);
    Ok(exhausted(h, u, x, cfg.max_iter, cap))
}

fn polish(h: &NonNegMatrix, u: &[f64], mut x: Vec<f64>, cap: f64) -> (Vec<f64>, f64) {
    let clip = |v: &mut Vec<f64>| {
        for (a, b) in v.iter_mut().zip(u) {
            *a = a.max(*b);
        }
    };
    clip(&mut x);
    let mut res = residual(h, u, &x, cap);
    for _ in 0..POLISH_STEPS {
        if res == 0.0 {
            break;
        }
        let Ok(psi_x) = psi_capped(h, u, &x, cap) else { break };
        let Some(mut candidate) = newton_step(h, &x, &psi_x) else { break };
        clip(&mut candidate);
        let r = residual(h, u, &candidate, cap);
        if r < res {
            x = candidate;
            res = r;
        } else {
            break;
        }
    }
    (x, res)
}

fn exhausted(h: &NonNegMatrix, u: &[f64], x: Vec<f64>, iterations: usize, cap: f64) -> LaplaceExponent {
    let upper = super_solution(h, u, &x, cap);
    LaplaceExponent::BudgetExhausted { lower: x, upper, iterations }
}

/// Looks for `y ⪰ x` with `ψ(y) ⪯ y`, which forces `L(u) ⪯ y`.
fn super_solution(h: &NonNegMatrix, u: &[f64], x: &[f64], cap: f64) -> Option<Vec<f64>> {
    let psi_x = psi_capped(h, u, x, cap).ok()?;
    let base = newton_step(h, x, &psi_x)?;
    let s: Vec<f64> = base.iter().zip(x).map(|(a, b)| a - b).collect();
    let mut t = 1.0;
    for _ in 0..40 {
        let y: Vec<f64> = x.iter().zip(&s).map(|(a, b)| a + t * b + 1e-15 * a.abs()).collect();
        if let Ok(py) = psi_capped(h, u, &y, cap) {
            if py.iter().zip(&y).all(|(p, q)| p <= q) {
                return Some(y);
            }
        } else {
            return None;
        }
        t *= 1.5;
    }
    None
}

/// Tries to prove that the iteration started from the sub-solution `x`
/// diverges. See [`DivergenceWitness`] for what is checked.
fn divergence_certificate(h: &NonNegMatrix, u: &[f64], x: &[f64], cap: f64) -> Option<DivergenceWitness> {
    let n = h.dim();
    let psi_x = psi_capped(h, u, x, cap).ok()?;
    let d: Vec<f64> = psi_x.iter().zip(x).map(|(a, b)| (a - b).max(0.0)).collect();
    if d.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let a = jacobian(h, x);
    if a.as_slice().iter().any(|v| !v.is_finite()) {
        return None;
    }
    let rho = spectral_radius(&a, SPR_TOL).ok()?;
    if rho <= 1.0 {
        return None;
    }

    // w = Σ_{j=0}^{M} Aʲ d, computed with normalization to dodge overflow;
    // only the ratio w/κ matters up to the common positive factor
    // exp(w_log_scale).
    let d_top = d.iter().cloned().fold(0.0, f64::max);
    if !(d_top > 0.0) {
        return None;
    }
    let mut w: Vec<f64> = d.iter().map(|v| v / d_top).collect();
    let mut term = w.clone();
    let mut w_log_scale = d_top.ln();
    for _ in 0..n {
        term = a.mul_vec(&term);
        let top = term.iter().chain(w.iter()).cloned().fold(0.0, f64::max);
        if !(top > 0.0) || !top.is_finite() {
            return None;
        }
        for v in term.iter_mut() {
            *v /= top;
        }
        for (wi, ti) in w.iter_mut().zip(&term) {
            *wi = *wi / top + ti;
        }
        w_log_scale += top.ln();
    }

    let ones = vec![1.0; n];
    for (start, iters) in [(&d, 50), (&d, 500), (&d, 5000), (&ones, 500)] {
        let mut kappa = shifted_power(&a, start, iters);
        let top = kappa.iter().cloned().fold(0.0, f64::max);
        if !(top > 0.0) {
            continue;
        }
        for v in kappa.iter_mut() {
            if *v < 1e-12 * top {
                *v = 0.0;
            }
        }
        let ak = a.mul_vec(&kappa);
        let support: Vec<usize> = (0..n).filter(|&i| kappa[i] > 0.0).collect();
        let growth = support.iter().map(|&i| ak[i] / kappa[i]).fold(f64::INFINITY, f64::min);
        if !(growth >= 1.0 + 1e-6 && growth.is_finite()) {
            continue;
        }
        let scale_rel = support.iter().map(|&i| w[i] / kappa[i]).fold(f64::INFINITY, f64::min);
        if !(scale_rel > 0.0 && scale_rel.is_finite()) {
            continue;
        }
        // The finite iterate x ⪯ L, and L is infinite on everything that can
        // reach the support of κ.
        let reach_support = ancestors(h, &support);
        return Some(DivergenceWitness {
            iterate: x.to_vec(),
            direction: kappa,
            growth,
            log_scale: scale_rel.ln() + w_log_scale,
            spectral_radius: rho,
            infinite_types: reach_support,
        });
    }
    None
}

/// Types from which some member of `targets` is reachable.
fn ancestors(h: &NonNegMatrix, targets: &[usize]) -> Vec<usize> {
    let n = h.dim();
    let mut mark = vec![false; n];
    let mut stack: Vec<usize> = targets.to_vec();
    for &t in targets {
        mark[t] = true;
    }
    while let Some(j) = stack.pop() {
        for (i, m) in mark.iter_mut().enumerate() {
            if h.get(i, j) > 0.0 && !*m {
                *m = true;
                stack.push(i);
            }
        }
    }
    (0..n).filter(|&i| mark[i]).collect()
}

fn check_box(cert: &GrowthCertificate, u: &[f64]) -> Result<f64> {
    let t = t0(cert.r, cert.k)?;
    let norm = norm_inf(u);
    if norm > t * (1.0 + 1e-12) {
        return Err(Error::OutsideGuaranteedBox { norm, t0: t });
    }
    Ok(t)
}

/// `(Id - (1+r)/(2r) H)⁻¹ u`, an upper bound on `L(u)` whenever
/// `|u|_∞ ≤ t0(r, K)` and `H` satisfies the growth certificate.
pub fn closed_form_bound(h: &NonNegMatrix, cert: &GrowthCertificate, u: &[f64]) -> Result<Vec<f64>> {
    check_len(u, h.dim())?;
    check_nonneg_vector(u, "u")?;
    check_box(cert, u)?;
    neumann_apply(&h.scale(cert.inflation()?), u)
}

/// `|u|_∞ (1 + 2K/(1-r)) 1`, valid on the same box as
/// [`closed_form_bound`] and never above `log((1+r)/(2r)) 1`.
pub fn a_priori_bound(cert: &GrowthCertificate, u: &[f64]) -> Result<Vec<f64>> {
    check_nonneg_vector(u, "u")?;
    check_box(cert, u)?;
    let level = norm_inf(u) * (1.0 + 2.0 * cert.k / (1.0 - cert.r));
    debug_assert!(level <= cert.inflation()?.ln() * (1.0 + 1e-9));
    Ok(vec![level; u.len()])
}

/// `(Id - H diag(e^L))⁻¹ u`, which dominates `L` when `L = L(u)` lies in the
/// interior of the finiteness domain.
pub fn self_improving_bound(h: &NonNegMatrix, l: &[f64], u: &[f64]) -> Result<Vec<f64>> {
    check_len(u, h.dim())?;
    check_len(l, h.dim())?;
    check_nonneg_vector(l, "L")?;
    let j = jacobian(h, l);
    match neumann_apply(&j, u) {
        Err(Error::SeriesDiverges(rho)) => Err(Error::BoundaryPoint(rho)),
        other => other,
    }
}

/// `Σ_{n≥0} Hⁿ u`, the vector of expected values `E[u · card(T^m)]`, which
/// is a lower bound on `L(u)` by Jensen's inequality.
pub fn expected_progeny(h: &NonNegMatrix, u: &[f64]) -> Result<Vec<f64>> {
    neumann_apply(h, u)
}

/// Solution of the scalar equation `x = u + α(e^x - 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "value", rename_all = "snake_case")]
pub enum ScalarLaplace {
    Finite(f64),
    Divergent,
}

/// `(u_c, L_c) = (log(1/α) - (1-α), log(1/α))`: the largest `u` with a finite
/// one-type Laplace exponent, and the exponent there.
pub fn critical_u_1d(alpha: f64) -> Result<(f64, f64)> {
    check_alpha(alpha)?;
    let lc = -alpha.ln();
    Ok((lc - (1.0 - alpha), lc))
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

/// The one-type Laplace exponent, by safeguarded Newton on
/// `f(x) = x - u - α(e^x - 1)` over `[0, log(1/α)]`.
pub fn solve_1d_exact(alpha: f64, u: f64) -> Result<ScalarLaplace> {
    check_alpha(alpha)?;
    if !(u >= 0.0 && u.is_finite()) {
        return Err(Error::InvalidArgument(format!("u must be finite and >= 0, got {u}")));
    }
    let (uc, lc) = critical_u_1d(alpha)?;
    if u > uc {
        return Ok(ScalarLaplace::Divergent);
    }
    if u == uc {
        return Ok(ScalarLaplace::Finite(lc));
    }
    if u == 0.0 {
        return Ok(ScalarLaplace::Finite(0.0));
    }
    let f = |x: f64| x - u - alpha * x.exp_m1();
    // f is increasing on [0, lc] with f(0) = -u < 0 and f(lc) = uc - u > 0.
    let (mut lo, mut hi) = (0.0, lc);
    let mut x = u;
    for _ in 0..200 {
        let fx = f(x);
        if fx == 0.0 {
            return Ok(ScalarLaplace::Finite(x));
        }
        if fx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        if hi - lo <= 1e-13 {
            break;
        }
        let slope = 1.0 - alpha * x.exp();
        let newton = x - fx / slope;
        x = if slope > 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if (x - lo).min(hi - x) <= 0.0 {
            break;
        }
    }
    Ok(ScalarLaplace::Finite(if f(lo).abs() <= f(hi).abs() { lo } else { hi }))
}

/// Position of a point `y` relative to the finiteness domain, as judged by
/// `spr(H diag(e^y))`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointClass {
    Interior,
    Boundary,
    Invalid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InverseMapResult {
    pub u: Vec<f64>,
    pub spectral_radius: f64,
    pub classification: PointClass,
    /// `|L(u) - y|_∞` for interior points.
    pub roundtrip_error: Option<f64>,
}

/// `|spr - 1|` at or below which [`inverse_map`] reports a boundary point.
pub const INVERSE_MAP_BOUNDARY_TOL: f64 = 1e-8;

/// `u = y - H(e^y - 1)`, classified by `spr(H diag(e^y))`.
///
/// Inside the domain the map is one-to-one, so `y = L(u)`; for interior
/// points this is checked by solving for `L(u)` again.
pub fn inverse_map(h: &NonNegMatrix, y: &[f64]) -> Result<InverseMapResult> {
    check_len(y, h.dim())?;
    check_nonneg_vector(y, "y")?;
    let growth: Vec<f64> = y.iter().map(|v| v.exp_m1()).collect();
    if growth.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("y too large: e^y overflows".into()));
    }
    let hg = h.mul_vec(&growth);
    let u: Vec<f64> = y.iter().zip(&hg).map(|(a, b)| a - b).collect();
    let rho = spectral_radius(&jacobian(h, y), SPR_TOL)?;
    let scale = norm_inf(y).max(norm_inf(&hg)).max(1.0);
    let negative = u.iter().any(|&v| v < -4.0 * f64::EPSILON * scale);
    let classification = if negative || rho > 1.0 + INVERSE_MAP_BOUNDARY_TOL {
        PointClass::Invalid
    } else if (rho - 1.0).abs() <= INVERSE_MAP_BOUNDARY_TOL {
        PointClass::Boundary
    } else {
        PointClass::Interior
    };
    let u: Vec<f64> = u.into_iter().map(|v| v.max(0.0)).collect();
    let mut roundtrip_error = None;
    if classification == PointClass::Interior {
        let l = solve_l(h, &u, &SolverConfig::default())?;
        let Some(value) = l.value() else {
            return Err(Error::Consistency(format!(
                "inverse image u = {u:?} of interior point y = {y:?} did not converge"
            )));
        };
        let err = value.iter().zip(y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if err > 1e-6 * norm_inf(y).max(1.0) {
            return Err(Error::Consistency(format!("L(u) = {value:?} differs from y = {y:?} by {err:e}")));
        }
        roundtrip_error = Some(err);
    }
    Ok(InverseMapResult { u, spectral_radius: rho, classification, roundtrip_error })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::certify_growth;
    use proptest::prelude::*;

    const U_02: f64 = 0.08929862091991508;

    fn m(rows: &[&[f64]]) -> NonNegMatrix {
        NonNegMatrix::new(rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    fn solve(h: &NonNegMatrix, u: &[f64]) -> LaplaceExponent {
        solve_l(h, u, &SolverConfig::default()).unwrap()
    }

    #[test]
    fn psi_examples() {
        let h = NonNegMatrix::scalar(0.5).unwrap();
        assert_eq!(psi_apply(&h, &[0.3], &[0.0]).unwrap(), vec![0.3]);
        let y = psi_apply(&h, &[0.089299], &[0.2]).unwrap();
        assert!((y[0] - 0.2000003790800849).abs() < 1e-15);
        let z = NonNegMatrix::zeros(2);
        assert_eq!(psi_apply(&z, &[0.1, 0.2], &[5.0, 1e6]).unwrap(), vec![0.1, 0.2]);
        assert!(matches!(psi_apply(&h, &[0.0], &[800.0]), Err(Error::Overflow { .. })));
    }

    #[test]
    fn zero_direction_converges_at_once() {
        let l = solve(&m(&[&[0.2, 0.1], &[0.3, 0.2]]), &[0.0, 0.0]);
        assert_eq!(l, LaplaceExponent::Converged { value: vec![0.0, 0.0], residual: 0.0, iterations: 1 });
    }

    #[test]
    fn scalar_examples() {
        let h = NonNegMatrix::scalar(0.5).unwrap();
        let l = solve(&h, &[U_02]);
        assert!((l.value().unwrap()[0] - 0.2).abs() < 1e-12);
        let l = solve(&h, &[0.08]);
        assert!((l.value().unwrap()[0] - 0.1765426633384519).abs() < 1e-12);
        assert!(solve(&h, &[0.25]).is_divergent());
    }

    #[test]
    fn reducible_counterexample() {
        let h = m(&[&[1.2, 0.0], &[0.0, 0.0]]);
        match solve(&h, &[0.0, 1.0]) {
            LaplaceExponent::Converged { value, residual, .. } => {
                assert_eq!(value, vec![0.0, 1.0]);
                assert_eq!(residual, 0.0);
            }
            other => panic!("{other:?}"),
        }
        match solve(&h, &[1.0, 0.0]) {
            LaplaceExponent::CertifiedDivergent { witness, .. } => {
                assert_eq!(witness.infinite_types, vec![0]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn divergence_through_window() {
        // Slowly diverging: the overflow cap is far away when the window fills.
        let h = NonNegMatrix::scalar(1.01).unwrap();
        let cfg = SolverConfig { accelerate: false, ..SolverConfig::default() };
        let l = solve_l(&h, &[1e-3], &cfg).unwrap();
        assert!(l.is_divergent(), "{l:?}");
    }

    #[test]
    fn budget_exhaustion_reports_brackets() {
        let h = NonNegMatrix::scalar(0.5).unwrap();
        let cfg = SolverConfig { max_iter: 2, accelerate: false, ..SolverConfig::default() };
        match solve_l(&h, &[0.08], &cfg).unwrap() {
            LaplaceExponent::BudgetExhausted { lower, upper, iterations } => {
                assert_eq!(iterations, 2);
                assert!(lower[0] < 0.1765426633384519);
                assert!(upper.unwrap()[0] >= 0.1765426633384519);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn critical_point() {
        let (uc, lc) = critical_u_1d(0.5).unwrap();
        assert!((uc - 0.19314718055994531).abs() < 1e-16);
        let l = solve(&NonNegMatrix::scalar(0.5).unwrap(), &[uc]);
        assert!((l.value().unwrap()[0] - lc).abs() < 1e-6, "{l:?}");
    }

    #[test]
    fn closed_forms() {
        let (uc, lc) = critical_u_1d(1.0 / std::f64::consts::E).unwrap();
        assert!((uc - 1.0 / std::f64::consts::E).abs() < 1e-15);
        assert!((lc - 1.0).abs() < 1e-15);
        assert!(critical_u_1d(1.0 - 1e-9).unwrap().0 < 1e-15);
        assert!(critical_u_1d(1.0).is_err());
    }

    #[test]
    fn scalar_exact_examples() {
        let (uc, lc) = critical_u_1d(0.5).unwrap();
        assert_eq!(solve_1d_exact(0.5, uc).unwrap(), ScalarLaplace::Finite(lc));
        assert!((lc - std::f64::consts::LN_2).abs() < 1e-16);
        let ScalarLaplace::Finite(x) = solve_1d_exact(0.5, uc - 1e-12).unwrap() else { panic!() };
        assert!((x - lc).abs() < 1e-5);
        let ScalarLaplace::Finite(x) = solve_1d_exact(0.5, U_02).unwrap() else { panic!() };
        assert!((x - 0.2).abs() < 1e-13);
        assert_eq!(solve_1d_exact(0.5, 0.0).unwrap(), ScalarLaplace::Finite(0.0));
        assert_eq!(solve_1d_exact(0.5, 0.2).unwrap(), ScalarLaplace::Divergent);
        assert!(solve_1d_exact(1.5, 0.1).is_err());
    }

    #[test]
    fn bound_examples() {
        let h = NonNegMatrix::scalar(0.5).unwrap();
        let cert = GrowthCertificate::new(0.5, 1.0).unwrap();
        let b = closed_form_bound(&h, &cert, &[0.08]).unwrap();
        assert!((b[0] - 0.32).abs() < 1e-15);
        assert_eq!(closed_form_bound(&h, &cert, &[0.0]).unwrap(), vec![0.0]);
        assert_eq!(closed_form_bound(&NonNegMatrix::zeros(1), &cert, &[0.05]).unwrap(), vec![0.05]);
        assert!(matches!(closed_form_bound(&h, &cert, &[0.09]), Err(Error::OutsideGuaranteedBox { .. })));

        let t = t0(0.5, 1.0).unwrap();
        let a = a_priori_bound(&cert, &[t, 0.0]).unwrap();
        assert!((a[0] - 1.5f64.ln()).abs() < 1e-15 && a[0] == a[1]);
        assert_eq!(a_priori_bound(&cert, &[0.0]).unwrap(), vec![0.0]);
        assert!((a_priori_bound(&cert, &[0.04]).unwrap()[0] - 0.2).abs() < 1e-15);

        let s = self_improving_bound(&h, &[0.2], &[U_02]).unwrap();
        assert!((s[0] - 0.2293833476956632).abs() < 1e-12);
        assert_eq!(self_improving_bound(&h, &[0.0], &[0.0]).unwrap(), vec![0.0]);
        assert_eq!(self_improving_bound(&NonNegMatrix::zeros(1), &[0.3], &[0.1]).unwrap(), vec![0.1]);
        assert!(matches!(self_improving_bound(&h, &[2f64.ln()], &[0.1]), Err(Error::BoundaryPoint(_))));
    }

    #[test]
    fn progeny_examples() {
        let x = expected_progeny(&m(&[&[0.2, 0.1], &[0.3, 0.2]]), &[1.0, 1.0]).unwrap();
        assert!((x[0] - 1.4754098360655737).abs() < 1e-12 && (x[1] - 1.80327868852459).abs() < 1e-12);
        assert_eq!(expected_progeny(&NonNegMatrix::scalar(0.5).unwrap(), &[1.0]).unwrap(), vec![2.0]);
        assert!(expected_progeny(&NonNegMatrix::scalar(1.2).unwrap(), &[1.0]).is_err());
    }

    #[test]
    fn inverse_map_examples() {
        let h = NonNegMatrix::scalar(0.5).unwrap();
        let r = inverse_map(&h, &[0.0]).unwrap();
        assert_eq!((r.u.clone(), r.classification), (vec![0.0], PointClass::Interior));
        let r = inverse_map(&h, &[2f64.ln()]).unwrap();
        assert_eq!(r.classification, PointClass::Boundary);
        assert!((r.u[0] - 0.19314718055994531).abs() < 1e-15);
        let r = inverse_map(&h, &[0.2]).unwrap();
        assert_eq!(r.classification, PointClass::Interior);
        assert!((r.u[0] - U_02).abs() < 1e-15);
        assert!(r.roundtrip_error.unwrap() < 1e-12);
        assert_eq!(inverse_map(&h, &[1.0]).unwrap().classification, PointClass::Invalid);
    }

    #[test]
    fn two_type_value() {
        let h = m(&[&[0.2, 0.1], &[0.3, 0.2]]);
        let l = solve(&h, &[0.05, 0.05]);
        let v = l.value().unwrap();
        assert!((v[0] - 0.07541004096425652).abs() < 1e-13);
        assert!((v[1] - 0.09298746011172595).abs() < 1e-13);
    }

    fn subcritical(max_dim: usize) -> impl Strategy<Value = NonNegMatrix> {
        (1..=max_dim).prop_flat_map(|d| {
            (proptest::collection::vec(prop_oneof![1 => Just(0.0), 3 => 0.0..1.0f64], d * d), 0.1..0.9f64).prop_map(
                move |(v, target)| {
                    let a = NonNegMatrix::from_raw(d, v);
                    let rho = spectral_radius(&a, 1e-12).unwrap();
                    if rho > 0.0 {
                        a.scale(target / rho)
                    } else {
                        a
                    }
                },
            )
        })
    }

    fn in_box(h: &NonNegMatrix, raw: &[f64]) -> (GrowthCertificate, Vec<f64>) {
        let cert = GrowthCertificate::best_for_t0(h).unwrap();
        let t = t0(cert.r, cert.k).unwrap();
        (cert, raw[..h.dim()].iter().map(|v| v * t).collect())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn residual_and_bound_ordering(h in subcritical(4), raw in proptest::collection::vec(0.0..1.0f64, 4)) {
            let (cert, u) = in_box(&h, &raw);
            let l = solve(&h, &u).into_value().unwrap();
            prop_assert!(residual(&h, &u, &l, 700.0) <= 1e-12);
            for (li, ui) in l.iter().zip(&u) {
                prop_assert!(li >= ui);
            }
            let si = self_improving_bound(&h, &l, &u).unwrap();
            let cf = closed_form_bound(&h, &cert, &u).unwrap();
            let ap = a_priori_bound(&cert, &u).unwrap();
            let jensen = expected_progeny(&h, &u).unwrap();
            for i in 0..h.dim() {
                let tol = 1e-12 * (1.0 + l[i]);
                prop_assert!(jensen[i] <= l[i] + tol);
                prop_assert!(l[i] <= si[i] + tol);
                prop_assert!(si[i] <= cf[i] + tol);
                prop_assert!(l[i] <= ap[i] + tol);
            }
        }

        #[test]
        fn monotone_superadditive_convex(
            h in subcritical(3),
            a in proptest::collection::vec(0.0..0.5f64, 3),
            b in proptest::collection::vec(0.0..0.5f64, 3),
            s in 0.0..1.0f64,
        ) {
            let (_, u) = in_box(&h, &a);
            let (_, v) = in_box(&h, &b);
            let sum: Vec<f64> = u.iter().zip(&v).map(|(p, q)| p + q).collect();
            let mix: Vec<f64> = u.iter().zip(&v).map(|(p, q)| s * p + (1.0 - s) * q).collect();
            let lu = solve(&h, &u).into_value().unwrap();
            let lv = solve(&h, &v).into_value().unwrap();
            let ls = solve(&h, &sum).into_value().unwrap();
            let lm = solve(&h, &mix).into_value().unwrap();
            let lmax = solve(&h, &u.iter().zip(&v).map(|(p, q)| p.max(*q)).collect::<Vec<_>>()).into_value().unwrap();
            for i in 0..h.dim() {
                prop_assert!(lu[i] + lv[i] <= ls[i] + 1e-9);
                prop_assert!(lm[i] <= s * lu[i] + (1.0 - s) * lv[i] + 1e-9);
                prop_assert!(lu[i] <= lmax[i] + 1e-10);
            }
        }

        #[test]
        fn inverse_map_round_trip(h in subcritical(3), raw in proptest::collection::vec(0.0..1.0f64, 3), frac in 0.0..0.95f64) {
            // Scale y so that spr(H diag(e^y)) stays below 1.
            let rho = spectral_radius(&h, 1e-12).unwrap();
            prop_assume!(rho > 0.0);
            let budget = frac * (1.0 / rho).ln();
            let y: Vec<f64> = raw[..h.dim()].iter().map(|v| v * budget).collect();
            let r = inverse_map(&h, &y).unwrap();
            if r.classification == PointClass::Interior {
                let l = solve(&h, &r.u).into_value().unwrap();
                for i in 0..h.dim() {
                    prop_assert!((l[i] - y[i]).abs() <= 1e-8);
                }
            }
        }

        #[test]
        fn certificate_rate_check(h in subcritical(3)) {
            let rho = spectral_radius(&h, 1e-12).unwrap();
            prop_assert!(certify_growth(&h, rho + 0.05, 4000).is_ok());
        }
    }
}
