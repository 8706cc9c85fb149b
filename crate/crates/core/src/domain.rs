//! Geometry of the finiteness domain `E = {u ⪰ 0 : L(u) finite}`: pointwise
//! classification, critical points along rays, exact boundary points, and the
//! reduction of a supercritical type set to the types that admit small
//! exponential moments.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::laplace::{inverse_map, solve_l, LaplaceExponent, SolverConfig};
use crate::matrix::{check_len, check_nonneg_vector, norm_inf, NonNegMatrix};
use crate::spectral::{
    connected_components, restrict, spectral_radius, strongly_connected_blocks, t0, GrowthCertificate,
};

const SPR_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainStatus {
    Interior,
    Boundary,
    Exterior,
    /// Neither convergence nor divergence could be certified within budget.
    Undetermined,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainPoint {
    pub u: Vec<f64>,
    pub status: DomainStatus,
    /// `spr(H diag(e^L))`, present when `L(u)` is finite.
    pub spr_at_l: Option<f64>,
    #[serde(rename = "L")]
    pub l: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DomainConfig {
    pub solver: SolverConfig,
    /// `|spr(H diag(e^L)) - 1|` at or below which a finite point counts as
    /// a boundary point.
    pub boundary_tol: f64,
}

impl Default for DomainConfig {
    fn default() -> Self {
        DomainConfig { solver: SolverConfig::default(), boundary_tol: 1e-6 }
    }
}

/// Types `m` with `spr(H restricted to C(m)) < 1`, and `H` restricted to them.
///
/// The set is closed under taking descendants, so trees rooted inside it
/// never leave it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReducedTypes {
    pub types: Vec<usize>,
    /// `None` when no type qualifies, in which case `E = {0}`.
    pub matrix: Option<NonNegMatrix>,
}

pub fn reduce_types(h: &NonNegMatrix) -> Result<ReducedTypes> {
    let comps = connected_components(h);
    let mut types = Vec::new();
    for m in 0..h.dim() {
        let sub = restrict(h, comps.component(m))?;
        if spectral_radius(&sub, SPR_TOL)? < 1.0 {
            types.push(m);
        }
    }
    let matrix = if types.is_empty() { None } else { Some(restrict(h, &types)?) };
    Ok(ReducedTypes { types, matrix })
}

/// Whether `spr(H restricted to C(m)) < 1`, i.e. whether `L(ε e_m)` is finite
/// on `C(m)` for small `ε > 0`.
///
/// Types outside `C(m)` that have `m` as a descendant are not examined: if
/// one of them sits in a supercritical block, `L(ε e_m)` is infinite there
/// even when this returns true.
pub fn axis_feasibility(h: &NonNegMatrix, m: usize) -> Result<bool> {
    if m >= h.dim() {
        return Err(Error::InvalidArgument(format!("type {m} out of range for dimension {}", h.dim())));
    }
    let comps = connected_components(h);
    Ok(spectral_radius(&restrict(h, comps.component(m))?, SPR_TOL)? < 1.0)
}

fn support(x: &[f64]) -> Vec<usize> {
    (0..x.len()).filter(|&i| x[i] > 0.0).collect()
}

/// Classifies `u` from `L(u)` and `spr(H diag(e^{L(u)}))`.
///
/// When `spr(H) ≥ 1` the point is only classified if `u` lives on the reduced
/// type set of [`reduce_types`]; the spectral test is then taken on that set.
pub fn classify(h: &NonNegMatrix, u: &[f64], cfg: &DomainConfig) -> Result<DomainPoint> {
    check_len(u, h.dim())?;
    check_nonneg_vector(u, "u")?;
    let rho = spectral_radius(h, SPR_TOL)?;
    let judged_on: Option<Vec<usize>> = if rho < 1.0 {
        None
    } else {
        let reduced = reduce_types(h)?;
        if reduced.types.is_empty() || !support(u).iter().all(|i| reduced.types.contains(i)) {
            return Err(Error::NotSubcritical { spectral_radius: rho, reduced_types: reduced.types });
        }
        Some(reduced.types)
    };

    let outcome = solve_l(h, u, &cfg.solver)?;
    let status_point = |status| DomainPoint { u: u.to_vec(), status, spr_at_l: None, l: None };
    Ok(match outcome {
        LaplaceExponent::Converged { value, .. } => {
            let j = h.scale_columns(&value.iter().map(|v| v.exp()).collect::<Vec<_>>());
            let spr = match &judged_on {
                None => spectral_radius(&j, SPR_TOL)?,
                Some(types) => spectral_radius(&restrict(&j, types)?, SPR_TOL)?,
            };
            let status = if (spr - 1.0).abs() <= cfg.boundary_tol {
                DomainStatus::Boundary
            } else if spr < 1.0 {
                DomainStatus::Interior
            } else {
                log::warn!("converged L(u) with spr(H diag(e^L)) = {spr} > 1; marking undetermined");
                DomainStatus::Undetermined
            };
            DomainPoint { u: u.to_vec(), status, spr_at_l: Some(spr), l: Some(value) }
        }
        LaplaceExponent::CertifiedDivergent { .. } => status_point(DomainStatus::Exterior),
        LaplaceExponent::BudgetExhausted { .. } => status_point(DomainStatus::Undetermined),
    })
}

/// One classification made while searching along a ray.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RayProbe {
    pub t: f64,
    pub status: DomainStatus,
    pub spr_at_l: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RayResult {
    pub direction: Vec<f64>,
    /// Midpoint of the final bracket, or `+∞` when every multiple of the
    /// direction lies in the domain.
    pub t_critical: f64,
    pub u_critical: Vec<f64>,
    /// `L` at the interior end of the bracket.
    #[serde(rename = "L_critical")]
    pub l_critical: Option<Vec<f64>>,
    /// The largest multiple classified interior and the smallest classified
    /// non-interior.
    pub bracket: (f64, f64),
    pub bracket_width: f64,
    /// Every classification made, sorted by `t`.
    pub probes: Vec<RayProbe>,
    pub warning: Option<String>,
}

/// Types from which some type in `targets` can be reached, targets included.
fn with_ancestors(h: &NonNegMatrix, targets: &[usize]) -> Vec<usize> {
    let n = h.dim();
    let mut mark = vec![false; n];
    let mut stack = targets.to_vec();
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

/// Types lying on a directed cycle of the type graph.
fn on_cycle(h: &NonNegMatrix) -> Vec<bool> {
    let mut flag = vec![false; h.dim()];
    for block in strongly_connected_blocks(h) {
        let cyclic = block.len() > 1 || h.get(block[0], block[0]) > 0.0;
        for &i in &block {
            flag[i] = cyclic;
        }
    }
    flag
}

fn require_subcritical(h: &NonNegMatrix) -> Result<f64> {
    let rho = spectral_radius(h, SPR_TOL)?;
    if rho >= 1.0 {
        return Err(Error::NotSubcritical { spectral_radius: rho, reduced_types: reduce_types(h)?.types });
    }
    Ok(rho)
}

fn check_direction(d: &[f64], what: &str) -> Result<()> {
    check_nonneg_vector(d, what)?;
    if d.iter().all(|&v| v == 0.0) {
        return Err(Error::InvalidArgument(format!("{what} must be nonzero")));
    }
    Ok(())
}

/// Locates `t_c = sup {t : t d ∈ E}` by doubling from a multiple known to be
/// interior, then bisecting until the bracket is narrower than `tol`.
///
/// `t_c` is infinite exactly when no type on a cycle of the type graph leads
/// to the support of `d`; in that case `L(t d)` is finite for every `t`.
pub fn ray_critical(h: &NonNegMatrix, d: &[f64], tol: f64, cfg: &DomainConfig) -> Result<RayResult> {
    check_len(d, h.dim())?;
    check_direction(d, "direction")?;
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tol must be positive, got {tol}")));
    }
    require_subcritical(h)?;

    let cyclic = on_cycle(h);
    if !with_ancestors(h, &support(d)).iter().any(|&i| cyclic[i]) {
        return Ok(RayResult {
            direction: d.to_vec(),
            t_critical: f64::INFINITY,
            u_critical: d.iter().map(|&v| if v > 0.0 { f64::INFINITY } else { 0.0 }).collect(),
            l_critical: None,
            bracket: (f64::INFINITY, f64::INFINITY),
            bracket_width: 0.0,
            probes: Vec::new(),
            warning: None,
        });
    }

    let cert = GrowthCertificate::best_for_t0(h)?;
    let start = t0(cert.r, cert.k)? / norm_inf(d);
    let mut probes = Vec::new();
    let mut probe = |t: f64| -> Result<DomainPoint> {
        let u: Vec<f64> = d.iter().map(|v| v * t).collect();
        let p = classify(h, &u, cfg)?;
        probes.push(RayProbe { t, status: p.status, spr_at_l: p.spr_at_l });
        Ok(p)
    };

    let mut lo = 0.0;
    let mut lo_l = Some(vec![0.0; h.dim()]);
    let mut t = start;
    let mut hi = None;
    let mut warning = None;
    for _ in 0..=60 {
        let p = probe(t)?;
        match p.status {
            DomainStatus::Interior => {
                lo = t;
                lo_l = p.l;
                t *= 2.0;
            }
            DomainStatus::Boundary | DomainStatus::Exterior => {
                hi = Some(t);
                break;
            }
            DomainStatus::Undetermined => {
                warning = Some(format!("undetermined classification at t = {t} while bracketing"));
                t *= 2.0;
            }
        }
    }
    let Some(mut hi) = hi else {
        return Err(Error::Consistency(format!(
            "no non-interior point found up to t = {} along a ray that must leave the domain",
            start * 2f64.powi(60)
        )));
    };

    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let p = probe(mid)?;
        match p.status {
            DomainStatus::Interior => {
                lo = mid;
                lo_l = p.l;
            }
            DomainStatus::Boundary | DomainStatus::Exterior => hi = mid,
            DomainStatus::Undetermined => {
                let msg =
                    format!("undetermined classification at t = {mid}; returning the certified bracket [{lo}, {hi}]");
                log::warn!("{msg}");
                warning = Some(msg);
                break;
            }
        }
    }
    probes.sort_by(|a, b| a.t.total_cmp(&b.t));
    let t_critical = 0.5 * (lo + hi);
    Ok(RayResult {
        direction: d.to_vec(),
        t_critical,
        u_critical: d.iter().map(|v| v * t_critical).collect(),
        l_critical: lo_l,
        bracket: (lo, hi),
        bracket_width: hi - lo,
        probes,
        warning,
    })
}

fn spr_along(h: &NonNegMatrix, y_dir: &[f64], s: f64) -> Result<f64> {
    let e: Vec<f64> = y_dir.iter().map(|v| (s * v).exp()).collect();
    spectral_radius(&h.scale_columns(&e), SPR_TOL)
}

/// Finds `s > 0` with `spr(H diag(e^{s y_dir})) = 1` and returns the boundary
/// point `u = y - H(e^y - 1)` for `y = s y_dir`, together with `L(u) = y`.
///
/// `s` is taken at the upper end of the final bisection bracket, so the
/// reported spectral radius is at least 1 and within `tol` of it.
pub fn boundary_from_y(h: &NonNegMatrix, y_dir: &[f64], tol: f64) -> Result<DomainPoint> {
    check_len(y_dir, h.dim())?;
    check_direction(y_dir, "y_dir")?;
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tol must be positive, got {tol}")));
    }
    let rho = require_subcritical(h)?;
    let cyclic = on_cycle(h);
    if !support(y_dir).iter().any(|&i| cyclic[i]) {
        return Err(Error::NeverCritical(rho));
    }

    let mut lo = 0.0;
    let mut hi = 1.0 / norm_inf(y_dir);
    let mut g_hi = spr_along(h, y_dir, hi)?;
    while g_hi < 1.0 {
        lo = hi;
        hi *= 2.0;
        if hi * norm_inf(y_dir) > 700.0 {
            return Err(Error::NeverCritical(g_hi));
        }
        g_hi = spr_along(h, y_dir, hi)?;
    }
    for _ in 0..200 {
        if g_hi - 1.0 <= tol || hi - lo <= 1e-15 * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let g = spr_along(h, y_dir, mid)?;
        if g < 1.0 {
            lo = mid;
        } else {
            hi = mid;
            g_hi = g;
        }
    }

    let y: Vec<f64> = y_dir.iter().map(|v| v * hi).collect();
    let growth: Vec<f64> = y.iter().map(|v| v.exp_m1()).collect();
    let hg = h.mul_vec(&growth);
    let u: Vec<f64> = y.iter().zip(&hg).map(|(a, b)| a - b).collect();
    let scale = norm_inf(&y).max(norm_inf(&hg)).max(1.0);
    if u.iter().any(|&v| v < -4.0 * f64::EPSILON * scale) {
        return Err(Error::NegativeBoundaryPoint(u));
    }
    let u = u.into_iter().map(|v| v.max(0.0)).collect();
    Ok(DomainPoint { u, status: DomainStatus::Boundary, spr_at_l: Some(g_hi), l: Some(y) })
}

/// Cross-checks a boundary point against [`inverse_map`]'s classification.
pub fn boundary_point_is_consistent(h: &NonNegMatrix, p: &DomainPoint) -> Result<bool> {
    let Some(y) = &p.l else { return Ok(false) };
    let r = inverse_map(h, y)?;
    Ok(r.classification == crate::laplace::PointClass::Boundary)
}
