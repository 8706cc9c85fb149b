//! Exponential moments of the typed counts `N([0, L))` of a stationary
//! linear Hawkes process with baseline `μ` and kernel `h`.
//!
//! The bounds only see the kernel through its mass matrix `H = ‖h‖₁`; the
//! offset law matters for simulation and for the burn-in of
//! [`hawkes_burn_in`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{alpha_certificate, cluster_bound_exponential, cluster_bound_power, eps_max, KernelSpec};
use crate::laplace::{closed_form_bound, solve_l, SolverConfig};
use crate::matrix::{check_len, check_nonneg_vector, norm_inf};
use crate::spectral::{spectral_radius, GrowthCertificate};
use crate::tails::tail_sequence;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HawkesParams {
    pub mu: Vec<f64>,
    pub kernel: KernelSpec,
    pub window: f64,
}

impl HawkesParams {
    /// Checks shapes, signs and `spr(H) < 1`.
    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        let h = self.kernel.h();
        check_len(&self.mu, h.dim())?;
        check_nonneg_vector(&self.mu, "mu")?;
        if !(self.window > 0.0 && self.window.is_finite()) {
            return Err(Error::InvalidArgument(format!("window must be finite and positive, got {}", self.window)));
        }
        let rho = spectral_radius(h, 1e-12)?;
        if rho >= 1.0 {
            return Err(Error::InvalidArgument(format!("a stationary Hawkes process needs spr(H) < 1, got {rho}")));
        }
        Ok(())
    }
}

fn exponent(p: &HawkesParams, l: &[f64]) -> f64 {
    p.window * p.mu.iter().zip(l).map(|(m, x)| m * x.exp_m1()).sum::<f64>()
}

/// `exp(L μ · (e^{L(u)} - 1))` for a finite Laplace exponent `l_u = L(u)`.
pub fn hawkes_moment_bound(p: &HawkesParams, u: &[f64], l_u: &[f64]) -> Result<f64> {
    p.validate()?;
    check_len(u, p.mu.len())?;
    check_len(l_u, p.mu.len())?;
    check_nonneg_vector(u, "u")?;
    if l_u.iter().any(|x| !x.is_finite()) {
        return Err(Error::NoFiniteBound);
    }
    check_nonneg_vector(l_u, "L(u)")?;
    let b = exponent(p, l_u).exp();
    if !b.is_finite() {
        return Err(Error::NoFiniteBound);
    }
    Ok(b)
}

/// Solves for `L(u)` and evaluates [`hawkes_moment_bound`].
pub fn hawkes_moment_bound_solved(p: &HawkesParams, u: &[f64], solver: &SolverConfig) -> Result<(f64, Vec<f64>)> {
    p.validate()?;
    let l = solve_l(p.kernel.h(), u, solver)?.into_value()?;
    Ok((hawkes_moment_bound(p, u, &l)?, l))
}

/// The same bound with `L(u)` replaced by `(I - (1+r)/(2r) H)^{-1} u`,
/// which needs `|u|_∞ ≤ t0(r, K)`.
pub fn hawkes_moment_bound_explicit(p: &HawkesParams, cert: &GrowthCertificate, u: &[f64]) -> Result<f64> {
    p.validate()?;
    let x = closed_form_bound(p.kernel.h(), cert, u)?;
    Ok(exponent(p, &x).exp())
}

/// Simulation window `[-t_burn, L)` for ancestors, and a rigorous bound on
/// what the ignored ancestors could add to `log E[e^{u·N}]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BurnIn {
    pub t_burn: f64,
    pub ignored_log_mass: f64,
}

/// Largest burn-in [`hawkes_burn_in`] will return.
pub const MAX_BURN_IN: f64 = 1e5;

/// Smallest burn-in whose ignored ancestors change `E[e^{u·N([0, L))}]` by a
/// relative amount below `rel_tol`.
///
/// Ancestors of type `m` born at `-τ` contribute `μ_m ∫ (E[e^{u·card(G ∩ [τ, τ+L))}] - 1) dτ`
/// to the log-moment, and that expectation is at most `e^{f_u(τ)}` with
/// `f_u` the cluster log-tail. The decay of `f_u` comes from the regime
/// bound of the kernel family, or from the generation tail `R_n(u)` for
/// compact and Dirac offsets, where an event `τ` after the root belongs to
/// a generation `n ≥ ⌈τ/A⌉`.
pub fn hawkes_burn_in(p: &HawkesParams, u: &[f64], rel_tol: f64, solver: &SolverConfig) -> Result<BurnIn> {
    p.validate()?;
    check_len(u, p.mu.len())?;
    check_nonneg_vector(u, "u")?;
    if !(rel_tol > 0.0) {
        return Err(Error::InvalidArgument(format!("rel_tol must be positive, got {rel_tol}")));
    }
    let mu_total: f64 = p.mu.iter().sum();
    let u_norm = norm_inf(u);
    if mu_total == 0.0 || u_norm == 0.0 {
        return Ok(BurnIn { t_burn: 0.0, ignored_log_mass: 0.0 });
    }
    let target = rel_tol.ln_1p();
    let h = p.kernel.h();
    let l = solve_l(h, u, solver)?.into_value()?;
    let cert = alpha_certificate(h, &l, u)?;

    // Each candidate `gap(T)` bounds the ignored log-mass and is
    // nonincreasing in T; the shortest resulting burn-in wins.
    let mut gaps: Vec<Box<dyn Fn(f64) -> f64>> = Vec::new();
    match p.kernel {
        KernelSpec::ExponentialDecay { a, c, .. } => {
            for frac in [0.25, 0.5, 0.75] {
                let eps = frac * eps_max(cert.r, a, c);
                let b = cluster_bound_exponential(&cert, a, c, eps, u_norm, 0.0)?;
                gaps.push(Box::new(move |t: f64| {
                    let bt = b * (-eps * t).exp();
                    mu_total * bt.exp() * bt / eps
                }));
            }
        }
        KernelSpec::PowerLawDecay { a, gamma, .. } => {
            if gamma <= 1.0 {
                return Err(Error::BurnIn(format!(
                    "offsets with tail exponent gamma = {gamma} <= 1 leave a non-integrable cluster tail; \
                     no finite burn-in reaches the requested accuracy"
                )));
            }
            for i in 1..20 {
                let delta = f64::from(i) / 20.0;
                let kappa = gamma * (1.0 - delta);
                if kappa <= 1.0 {
                    break;
                }
                let b = cluster_bound_power(&cert, a, gamma, delta, u_norm, 1.0)? * 2f64.powf(kappa);
                gaps.push(Box::new(move |t: f64| {
                    let t = t.max(1.0);
                    let bt = b * (1.0 + t).powf(-kappa);
                    mu_total * bt.exp() * b * (1.0 + t).powf(1.0 - kappa) / (kappa - 1.0)
                }));
            }
        }
        KernelSpec::CompactSupport { a: step, .. } | KernelSpec::DiracComb { lag: step, .. } => {
            let n_max = 4096;
            let seq = tail_sequence(h, &l, n_max)?;
            let excess: Vec<f64> =
                seq.values.iter().map(|r| p.mu.iter().zip(r).map(|(m, x)| m * x.exp_m1()).sum::<f64>()).collect();
            // Beyond n_max: |R_{n+k}| ≤ K α^k |R_n| and e^x - 1 ≤ e^{|L|} x.
            let last = norm_inf(&seq.values[n_max]);
            let rest = mu_total * norm_inf(&l).exp() * cert.k * last * cert.r / (1.0 - cert.r);
            let mut suffix = vec![rest; n_max + 2];
            for n in (0..=n_max).rev() {
                suffix[n] = suffix[n + 1] + excess[n];
            }
            gaps.push(Box::new(move |t: f64| {
                let n = (t / step).ceil() as usize;
                step * suffix[n.min(n_max + 1)]
            }));
        }
    }

    gaps.iter().filter_map(|gap| shortest_burn_in(gap, target)).min_by(|x, y| x.t_burn.total_cmp(&y.t_burn)).ok_or_else(
        || {
            Error::BurnIn(format!(
                "the ignored mass stays above {rel_tol} for burn-ins up to {MAX_BURN_IN}; \
                 pass an explicit burn-in, use a lighter-tailed kernel or a looser tolerance"
            ))
        },
    )
}

fn shortest_burn_in(gap: &dyn Fn(f64) -> f64, target: f64) -> Option<BurnIn> {
    if gap(0.0) <= target {
        return Some(BurnIn { t_burn: 0.0, ignored_log_mass: gap(0.0) });
    }
    let mut hi = 1.0;
    while !(gap(hi) <= target) {
        hi *= 2.0;
        if hi > MAX_BURN_IN {
            return None;
        }
    }
    let mut lo = hi / 2.0;
    while hi - lo > 1e-3 * hi {
        let mid = 0.5 * (lo + hi);
        if gap(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(BurnIn { t_burn: hi, ignored_log_mass: gap(hi) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::NonNegMatrix;
    use proptest::prelude::*;

    fn params(mu: f64, window: f64) -> HawkesParams {
        HawkesParams {
            mu: vec![mu],
            kernel: KernelSpec::ExponentialDecay { h: NonNegMatrix::scalar(0.5).unwrap(), a: 1.0, c: 1.0 },
            window,
        }
    }

    #[test]
    fn bound_examples() {
        let p = params(1.0, 10.0);
        let s = SolverConfig::default();
        assert_eq!(hawkes_moment_bound_solved(&p, &[0.0], &s).unwrap().0, 1.0);
        let (b, l) = hawkes_moment_bound_solved(&p, &[0.05], &s).unwrap();
        assert!((l[0] - 0.1057994758741349).abs() < 1e-12);
        assert!((b - 3.052587273687717).abs() < 1e-9);
        assert_eq!(hawkes_moment_bound_solved(&params(0.0, 10.0), &[0.05], &s).unwrap().0, 1.0);
        let cert = GrowthCertificate::new(0.5, 1.0).unwrap();
        let e = hawkes_moment_bound_explicit(&p, &cert, &[0.05]).unwrap();
        assert!((e - 9.152504718933604).abs() < 1e-9);
        assert_eq!(hawkes_moment_bound_explicit(&p, &cert, &[0.0]).unwrap(), 1.0);
        assert!(hawkes_moment_bound_explicit(&p, &cert, &[0.2]).is_err());
        assert!(matches!(hawkes_moment_bound(&p, &[0.5], &[f64::INFINITY]), Err(Error::NoFiniteBound)));
        assert!(matches!(hawkes_moment_bound_solved(&p, &[0.5], &s), Err(Error::NoFiniteBound)));
    }

    #[test]
    fn supercritical_rejected() {
        let mut p = params(1.0, 1.0);
        p.kernel = KernelSpec::DiracComb { h: NonNegMatrix::scalar(1.0).unwrap(), lag: 1.0 };
        assert!(p.validate().is_err());
    }

    #[test]
    fn burn_in_regimes() {
        let s = SolverConfig::default();
        let b = hawkes_burn_in(&params(1.0, 10.0), &[0.05], 1e-4, &s).unwrap();
        assert!(b.t_burn > 0.0 && b.t_burn < 200.0, "{b:?}");
        assert!(b.ignored_log_mass <= 1e-4);
        assert_eq!(hawkes_burn_in(&params(0.0, 10.0), &[0.05], 1e-4, &s).unwrap().t_burn, 0.0);
        let h = NonNegMatrix::scalar(0.5).unwrap();
        let mut p = params(1.0, 10.0);
        p.kernel = KernelSpec::CompactSupport { h: h.clone(), a: 1.0 };
        let b = hawkes_burn_in(&p, &[0.05], 1e-4, &s).unwrap();
        assert!(b.t_burn >= 1.0 && b.t_burn < 40.0, "{b:?}");
        p.kernel = KernelSpec::PowerLawDecay { h: h.clone(), a: 1.0, gamma: 0.8 };
        assert!(matches!(hawkes_burn_in(&p, &[0.05], 1e-4, &s), Err(Error::BurnIn(_))));
        p.kernel = KernelSpec::PowerLawDecay { h, a: 1.0, gamma: 6.0 };
        hawkes_burn_in(&p, &[0.05], 1e-4, &s).unwrap();
    }

    proptest! {
        #[test]
        fn explicit_dominates_and_log_linear(u in 0.0..0.0625f64, window in 0.5..20.0f64) {
            let p = params(1.3, window);
            let s = SolverConfig::default();
            let cert = GrowthCertificate::new(0.5, 1.0).unwrap();
            let (b, _) = hawkes_moment_bound_solved(&p, &[u], &s).unwrap();
            let e = hawkes_moment_bound_explicit(&p, &cert, &[u]).unwrap();
            prop_assert!(b <= e * (1.0 + 1e-12));
            let (b2, _) = hawkes_moment_bound_solved(&params(1.3, 2.0 * window), &[u], &s).unwrap();
            prop_assert!((b2.ln() - 2.0 * b.ln()).abs() <= 1e-12 * (1.0 + b2.ln()));
        }
    }
}
