//! Generation tails: `R_n(u)`, with `exp(R_n(u)_m)` the exponential moment of
//! `u · card` restricted to generations `≥ n` of a tree rooted at type `m`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::laplace::{solve_l, SolverConfig};
use crate::matrix::{check_len, check_nonneg_vector, norm_inf, NonNegMatrix};
use crate::spectral::{t0, GrowthCertificate};

/// Default number of generations.
pub const DEFAULT_GENERATIONS: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailSequence {
    #[serde(rename = "L")]
    pub l: Vec<f64>,
    /// `R_0, ..., R_N`.
    pub values: Vec<Vec<f64>>,
}

impl TailSequence {
    pub fn generations(&self) -> usize {
        self.values.len() - 1
    }
}

/// `R_0 = L`, `R_{n+1} = H(e^{R_n} - 1)` for `n < n_max`.
///
/// The sequence is nonincreasing when `L` is the Laplace exponent; a rise
/// beyond rounding means `L` was not a fixed point and is reported as an
/// error.
pub fn tail_sequence(h: &NonNegMatrix, l: &[f64], n_max: usize) -> Result<TailSequence> {
    check_len(l, h.dim())?;
    check_nonneg_vector(l, "L")?;
    let mut values = Vec::with_capacity(n_max + 1);
    values.push(l.to_vec());
    for n in 0..n_max {
        let prev = &values[n];
        let growth: Vec<f64> = prev.iter().map(|v| v.exp_m1()).collect();
        let next = h.mul_vec(&growth);
        for (i, (a, b)) in next.iter().zip(prev).enumerate() {
            if *a > b + 1e-12 * (1.0 + b.abs()) {
                return Err(Error::Consistency(format!("R_{} exceeds R_{n} at type {i}: {a} > {b}", n + 1)));
            }
        }
        values.push(next);
    }
    Ok(TailSequence { l: l.to_vec(), values })
}

/// `C Hⁿ L` with `C = ((1+r)/(2r))^{1 + 2K/(1-r)}`, which dominates `R_n(u)`
/// when `H` satisfies the certificate and `|u|_∞ ≤ t0(r, K)`. The caller is
/// responsible for the box condition.
pub fn tail_geometric_bound(h: &NonNegMatrix, cert: &GrowthCertificate, l: &[f64], n: usize) -> Result<Vec<f64>> {
    check_len(l, h.dim())?;
    let c = cert.tail_constant()?;
    let mut v = l.to_vec();
    for _ in 0..n {
        v = h.mul_vec(&v);
    }
    Ok(v.into_iter().map(|x| c * x).collect())
}

/// How the tails of a given `u` are bounded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TailBoundKind {
    /// `u` is inside the box of the certificate; the bound column holds
    /// `C Hⁿ L`.
    Explicit { certificate: GrowthCertificate, constant: f64 },
    /// `L(u)` is finite but `u` lies outside the box: a bound `C Hⁿ L` holds
    /// for some finite `C` that is not computed.
    ExistenceOnly { note: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailTable {
    pub u: Vec<f64>,
    pub sequence: TailSequence,
    pub bound: TailBoundKind,
    /// Rows aligned with `sequence.values`; empty unless the bound is
    /// explicit.
    pub bound_values: Vec<Vec<f64>>,
}

/// Solves for `L(u)`, runs the tail recursion and attaches the geometric
/// bound when `u` lies in the box of `cert` (or of the best certificate
/// found when `cert` is `None`).
pub fn tail_table(
    h: &NonNegMatrix,
    u: &[f64],
    n_max: usize,
    cert: Option<GrowthCertificate>,
    solver: &SolverConfig,
) -> Result<TailTable> {
    let l = solve_l(h, u, solver)?.into_value()?;
    let sequence = tail_sequence(h, &l, n_max)?;
    let cert = match cert {
        Some(c) => Some(c),
        None => GrowthCertificate::best_for_t0(h).ok(),
    };
    let inside = cert.and_then(|c| {
        let t = t0(c.r, c.k).ok()?;
        (norm_inf(u) <= t).then_some(c)
    });
    let (bound, bound_values) = match inside {
        Some(c) => {
            let constant = c.tail_constant()?;
            let rows = (0..=n_max).map(|n| tail_geometric_bound(h, &c, &l, n)).collect::<Result<_>>()?;
            (TailBoundKind::Explicit { certificate: c, constant }, rows)
        }
        None => (TailBoundKind::ExistenceOnly { note: "C existence only, not computed".into() }, Vec::new()),
    };
    Ok(TailTable { u: u.to_vec(), sequence, bound, bound_values })
}
