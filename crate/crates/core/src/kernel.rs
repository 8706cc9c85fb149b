//! Homogeneous interaction kernels `h(s, t) = H ⊙ g(t - s)` with a common
//! offset density `g`, their residual integrals, and the cluster-tail bounds
//! that follow from each decay regime.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::laplace::{solve_l, SolverConfig};
use crate::matrix::{check_nonneg_vector, norm_inf, NonNegMatrix};
use crate::spectral::{certify_growth, spectral_radius, t0, GrowthCertificate};

/// Interaction kernel: a child of type `m'` of a parent of type `m` born at
/// `s` appears with mean `H_{m,m'}`, at time `s + D` where the offset `D`
/// follows the variant's law.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelSpec {
    /// `P(D > d) = min(1, A e^{-c d})`: an exponential law with rate `c`
    /// shifted by `log(A)/c`. `A = 1` is the plain exponential density.
    ExponentialDecay {
        #[serde(rename = "H")]
        h: NonNegMatrix,
        #[serde(rename = "A", default = "one")]
        a: f64,
        c: f64,
    },
    /// `P(D > d) = min(1, A (1+d)^{-γ})`: a Pareto law.
    PowerLawDecay {
        #[serde(rename = "H")]
        h: NonNegMatrix,
        #[serde(rename = "A", default = "one")]
        a: f64,
        gamma: f64,
    },
    /// `D` uniform on `[0, A]`.
    CompactSupport {
        #[serde(rename = "H")]
        h: NonNegMatrix,
        #[serde(rename = "A")]
        a: f64,
    },
    /// `D = lag` exactly: birth dates count generations.
    DiracComb {
        #[serde(rename = "H")]
        h: NonNegMatrix,
        lag: f64,
    },
}

fn one() -> f64 {
    1.0
}

fn positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::InvalidArgument(format!("{name} must be finite and positive, got {v}")));
    }
    Ok(())
}

impl KernelSpec {
    pub fn h(&self) -> &NonNegMatrix {
        match self {
            KernelSpec::ExponentialDecay { h, .. }
            | KernelSpec::PowerLawDecay { h, .. }
            | KernelSpec::CompactSupport { h, .. }
            | KernelSpec::DiracComb { h, .. } => h,
        }
    }

    /// Checks parameter ranges. The decay envelopes require `A ≥ 1` because
    /// the residual at `d = 0` is the full mass `H`.
    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::ExponentialDecay { a, c, .. } => {
                positive("c", c)?;
                if !(a >= 1.0 && a.is_finite()) {
                    return Err(Error::InvalidArgument(format!(
                        "A must be >= 1 for an envelope A e^(-cd) of a probability tail, got {a}"
                    )));
                }
            }
            KernelSpec::PowerLawDecay { a, gamma, .. } => {
                positive("gamma", gamma)?;
                if !(a >= 1.0 && a.is_finite()) {
                    return Err(Error::InvalidArgument(format!(
                        "A must be >= 1 for an envelope A (1+d)^(-gamma) of a probability tail, got {a}"
                    )));
                }
            }
            KernelSpec::CompactSupport { a, .. } => positive("A", a)?,
            KernelSpec::DiracComb { lag, .. } => positive("lag", lag)?,
        }
        Ok(())
    }

    /// `P(D > d)` for `d ≥ 0`, except for the Dirac comb where it is
    /// `P(D ≥ d)`, matching the closed residual interval `[s + d, ∞)`.
    pub fn survival(&self, d: f64) -> f64 {
        match *self {
            KernelSpec::ExponentialDecay { a, c, .. } => (a * (-c * d).exp()).min(1.0),
            KernelSpec::PowerLawDecay { a, gamma, .. } => (a * (1.0 + d).powf(-gamma)).min(1.0),
            KernelSpec::CompactSupport { a, .. } => (1.0 - d / a).clamp(0.0, 1.0),
            KernelSpec::DiracComb { lag, .. } => {
                if d <= lag {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// `∫_0^x P(D ≥ y) dy`, extended by `x` for `x < 0`. Its second
    /// differences give exact cell averages of the offset density.
    pub fn integrated_survival(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return x;
        }
        match *self {
            KernelSpec::ExponentialDecay { a, c, .. } => {
                let x0 = a.ln() / c;
                if x <= x0 {
                    x
                } else {
                    x0 - (-c * (x - x0)).exp_m1() / c
                }
            }
            KernelSpec::PowerLawDecay { a, gamma, .. } => {
                let y0 = a.powf(1.0 / gamma) - 1.0;
                if x <= y0 {
                    x
                } else if (gamma - 1.0).abs() < 1e-12 {
                    y0 + a * ((1.0 + x) / (1.0 + y0)).ln()
                } else {
                    y0 + a * ((1.0 + x).powf(1.0 - gamma) - (1.0 + y0).powf(1.0 - gamma)) / (1.0 - gamma)
                }
            }
            KernelSpec::CompactSupport { a, .. } => {
                let y = x.min(a);
                y - y * y / (2.0 * a)
            }
            KernelSpec::DiracComb { lag, .. } => x.min(lag),
        }
    }

    /// Draws an offset by inversion of the survival function, consuming
    /// exactly one uniform variate (none for the Dirac comb).
    pub fn sample_offset<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            KernelSpec::DiracComb { lag, .. } => lag,
            KernelSpec::ExponentialDecay { a, c, .. } => {
                let v: f64 = 1.0 - rng.random::<f64>();
                (a.ln() - v.ln()) / c
            }
            KernelSpec::PowerLawDecay { a, gamma, .. } => {
                let v: f64 = 1.0 - rng.random::<f64>();
                a.powf(1.0 / gamma) * v.powf(-1.0 / gamma) - 1.0
            }
            KernelSpec::CompactSupport { a, .. } => a * rng.random::<f64>(),
        }
    }
}

/// `R^∞_h(d) = sup_s ∫_{s+d}^∞ h(s, x) dx`, in closed form: `H P(D ≥ d)`.
pub fn residual_integral(k: &KernelSpec, d: f64) -> Result<NonNegMatrix> {
    k.validate()?;
    if !(d >= 0.0) {
        return Err(Error::InvalidArgument(format!("d must be >= 0, got {d}")));
    }
    Ok(k.h().scale(k.survival(d)))
}

/// Largest admissible `ε` in the exponential regime:
/// `c(1-α) / ((1-α) + Aα)`.
pub fn eps_max(alpha: f64, a: f64, c: f64) -> f64 {
    c * (1.0 - alpha) / ((1.0 - alpha) + a * alpha)
}

/// `B_ε e^{-εd} |u|_∞` with
/// `B_ε = Kα(1 + Aε/(c-ε)) / (1 - α(1 + Aε/(c-ε)))`, bounding the
/// log-moment of the events born after `s + d` in a cluster rooted at `s`.
///
/// `alpha_k` certifies `H diag(e^{L(u)})`; `A`, `c` describe the kernel's
/// envelope `R^∞_h(d) ⪯ A e^{-cd} H`.
pub fn cluster_bound_exponential(
    alpha_k: &GrowthCertificate,
    a: f64,
    c: f64,
    eps: f64,
    u_norm: f64,
    d: f64,
) -> Result<f64> {
    let alpha = alpha_k.r;
    if !(alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must be < 1, got {alpha}")));
    }
    positive("c", c)?;
    if !(a >= 0.0) || !(u_norm >= 0.0) || !(d >= 0.0) {
        return Err(Error::InvalidArgument("A, |u| and d must be nonnegative".into()));
    }
    let hi = eps_max(alpha, a, c);
    if !(eps > 0.0 && eps < hi) {
        return Err(Error::InvalidArgument(format!("eps = {eps} must lie in the open interval (0, {hi})")));
    }
    let f = alpha * (1.0 + a * eps / (c - eps));
    let b = alpha_k.k * f / (1.0 - f);
    Ok(b * (-eps * d).exp() * u_norm)
}

/// `B_δ |u|_∞ / (1+d)^{γ(1-δ)}` for `d ≥ 1`, with
/// `B_δ = αK(K+1)/(1-α)² [A(1 + γ/(δ log(1/α)))^γ + 2^γ]`.
pub fn cluster_bound_power(
    alpha_k: &GrowthCertificate,
    a: f64,
    gamma: f64,
    delta: f64,
    u_norm: f64,
    d: f64,
) -> Result<f64> {
    let (alpha, k) = (alpha_k.r, alpha_k.k);
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    positive("gamma", gamma)?;
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!("delta must lie in (0, 1), got {delta}")));
    }
    if !(d >= 1.0) {
        return Err(Error::InvalidArgument(format!("the power-law bound needs d >= 1, got {d}")));
    }
    let b = alpha * k * (k + 1.0) / (1.0 - alpha).powi(2)
        * (a * (1.0 + gamma / (delta * (1.0 / alpha).ln())).powf(gamma) + 2f64.powf(gamma));
    Ok(b * u_norm / (1.0 + d).powf(gamma * (1.0 - delta)))
}

/// `C H^{⌊d/A⌋} L` with `C = ((1+r)/(2r))^{1+2K/(1-r)}`, valid for kernels
/// supported on offsets `≤ A` when `|u|_∞ ≤ t0(r, K)` (checked by the caller).
pub fn cluster_bound_compact(
    h: &NonNegMatrix,
    cert: &GrowthCertificate,
    l: &[f64],
    a: f64,
    d: f64,
) -> Result<Vec<f64>> {
    positive("A", a)?;
    if !(d >= 0.0) {
        return Err(Error::InvalidArgument(format!("d must be >= 0, got {d}")));
    }
    crate::tails::tail_geometric_bound(h, cert, l, (d / a).floor() as usize)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Exponential,
    Power,
    Compact,
}

/// What the decay rate of a [`TailBoundReport`] is.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RateDescriptor {
    /// `e^{-ε d}`.
    Exponential { eps: f64 },
    /// `(1+d)^{-γ(1-δ)}`.
    Power { exponent: f64, delta: f64 },
    /// One factor of `H` per `step` of elapsed time.
    Matrix { step: f64, per_step: NonNegMatrix },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub d: f64,
    pub bound: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailBoundReport {
    pub regime: Regime,
    /// `B_ε`, `B_δ` or `C`; `None` when only existence of `C` is known.
    pub constant: Option<f64>,
    pub rate: RateDescriptor,
    /// Certificate the constant was computed from.
    pub certificate: Option<GrowthCertificate>,
    #[serde(rename = "L")]
    pub l: Vec<f64>,
    pub curve: Vec<CurvePoint>,
    pub note: Option<String>,
}

/// Optional overrides for [`cluster_tail_report`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterBoundOptions {
    /// Certificate `(α, K)` of `H diag(e^{L(u)})`. When absent: `((1+r)/2, K)`
    /// from the best certificate of `H` if `u` is in its box, else one
    /// computed at `α = (1 + spr)/2`.
    pub alpha_cert: Option<GrowthCertificate>,
    /// Certificate `(r, K)` of `H` for the compact-support constant.
    pub cert: Option<GrowthCertificate>,
    /// Defaults to half the admissible maximum.
    pub eps: Option<f64>,
    /// Defaults to 1/2.
    pub delta: Option<f64>,
}

pub(crate) fn alpha_certificate(h: &NonNegMatrix, l: &[f64], u: &[f64]) -> Result<GrowthCertificate> {
    if let Ok(c) = GrowthCertificate::best_for_t0(h) {
        if norm_inf(u) <= t0(c.r, c.k)? {
            return GrowthCertificate::new((1.0 + c.r) / 2.0, c.k);
        }
    }
    let j = h.scale_columns(&l.iter().map(|v| v.exp()).collect::<Vec<_>>());
    let rho = spectral_radius(&j, 1e-12)?;
    if rho >= 1.0 {
        return Err(Error::BoundaryPoint(rho));
    }
    let alpha = 0.5 * (1.0 + rho);
    let mut n_max = 256;
    loop {
        match certify_growth(&j, alpha, n_max) {
            Err(Error::DecayNotReached { .. }) if n_max < 1 << 16 => n_max *= 4,
            other => return other,
        }
    }
}

/// Decay curve of the cluster tail `|f_u(s, s+d)|` for the regime matching
/// the kernel variant. Dirac combs use the compact regime with step `lag`
/// and the generation index `⌈d/lag⌉`.
pub fn cluster_tail_report(
    k: &KernelSpec,
    u: &[f64],
    d_grid: &[f64],
    opts: &ClusterBoundOptions,
    solver: &SolverConfig,
) -> Result<TailBoundReport> {
    k.validate()?;
    check_nonneg_vector(u, "u")?;
    if let Some(bad) = d_grid.iter().find(|d| !(**d >= 0.0 && d.is_finite())) {
        return Err(Error::InvalidArgument(format!("d values must be finite and >= 0, got {bad}")));
    }
    let h = k.h();
    let m = h.dim();
    let l = solve_l(h, u, solver)?.into_value()?;
    let u_norm = norm_inf(u);
    match *k {
        KernelSpec::ExponentialDecay { a, c, .. } => {
            let cert = match opts.alpha_cert {
                Some(c) => c,
                None => alpha_certificate(h, &l, u)?,
            };
            let eps = opts.eps.unwrap_or(0.5 * eps_max(cert.r, a, c));
            let constant = cluster_bound_exponential(&cert, a, c, eps, 1.0, 0.0)?;
            let curve = d_grid
                .iter()
                .map(|&d| {
                    cluster_bound_exponential(&cert, a, c, eps, u_norm, d).map(|b| CurvePoint { d, bound: vec![b; m] })
                })
                .collect::<Result<_>>()?;
            Ok(TailBoundReport {
                regime: Regime::Exponential,
                constant: Some(constant),
                rate: RateDescriptor::Exponential { eps },
                certificate: Some(cert),
                l,
                curve,
                note: None,
            })
        }
        KernelSpec::PowerLawDecay { a, gamma, .. } => {
            let cert = match opts.alpha_cert {
                Some(c) => c,
                None => alpha_certificate(h, &l, u)?,
            };
            let delta = opts.delta.unwrap_or(0.5);
            let constant =
                cluster_bound_power(&cert, a, gamma, delta, 1.0, 0.0f64.max(1.0))? * 2f64.powf(gamma * (1.0 - delta));
            let curve = d_grid
                .iter()
                .filter(|&&d| d >= 1.0)
                .map(|&d| {
                    cluster_bound_power(&cert, a, gamma, delta, u_norm, d).map(|b| CurvePoint { d, bound: vec![b; m] })
                })
                .collect::<Result<_>>()?;
            Ok(TailBoundReport {
                regime: Regime::Power,
                constant: Some(constant),
                rate: RateDescriptor::Power { exponent: gamma * (1.0 - delta), delta },
                certificate: Some(cert),
                l,
                curve,
                note: (d_grid.iter().any(|&d| d < 1.0))
                    .then(|| "points with d < 1 are outside the power-law bound and were skipped".into()),
            })
        }
        KernelSpec::CompactSupport { a: step, .. } | KernelSpec::DiracComb { lag: step, .. } => {
            let dirac = matches!(k, KernelSpec::DiracComb { .. });
            let cert = match opts.cert {
                Some(c) => Some(c),
                None => GrowthCertificate::best_for_t0(h).ok(),
            };
            let inside = cert.filter(|c| t0(c.r, c.k).map(|t| u_norm <= t).unwrap_or(false));
            let rate = RateDescriptor::Matrix { step, per_step: h.clone() };
            let Some(cert) = inside else {
                return Ok(TailBoundReport {
                    regime: Regime::Compact,
                    constant: None,
                    rate,
                    certificate: None,
                    l,
                    curve: Vec::new(),
                    note: Some("C existence only, not computed".into()),
                });
            };
            let curve = d_grid
                .iter()
                .map(|&d| {
                    let bound = if dirac {
                        crate::tails::tail_geometric_bound(h, &cert, &l, (d / step).ceil() as usize)
                    } else {
                        cluster_bound_compact(h, &cert, &l, step, d)
                    };
                    bound.map(|bound| CurvePoint { d, bound })
                })
                .collect::<Result<_>>()?;
            Ok(TailBoundReport {
                regime: Regime::Compact,
                constant: Some(cert.tail_constant()?),
                rate,
                certificate: Some(cert),
                l,
                curve,
                note: None,
            })
        }
    }
}
