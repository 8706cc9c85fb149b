//! Spectral radius, growth certificates, the reachability structure of the
//! type graph, and Neumann series of nonnegative matrices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{check_len, check_nonneg_vector, NonNegMatrix};

const POWER_BUDGET: usize = 100_000;
const GELFAND_SQUARINGS: usize = 200;

/// Spectral radius of a nonnegative matrix, to absolute accuracy `tol`.
///
/// The type graph is split into strongly connected blocks. A block without a
/// cycle contributes its diagonal entry; an irreducible block is handled by
/// power iteration on `B + σ Id` (σ = |||B|||_∞, which makes it primitive),
/// stopping once the Collatz-Wielandt bracket `[min (Bx)_i/x_i, max (Bx)_i/x_i]`
/// is narrower than `tol`. If that stalls, the block falls back to Gelfand
/// brackets `[min row(Bⁿ)^{1/n}, max row(Bⁿ)^{1/n}]` by repeated squaring.
pub fn spectral_radius(a: &NonNegMatrix, tol: f64) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tol must be positive, got {tol}")));
    }
    let mut rho: f64 = 0.0;
    for block in strongly_connected_blocks(a) {
        let value = if block.len() == 1 {
            a.get(block[0], block[0])
        } else {
            let b = balance(&submatrix(a, &block));
            match collatz_wielandt(&b, tol) {
                Some(v) => v,
                None => gelfand(&b, tol)?,
            }
        };
        rho = rho.max(value);
    }
    Ok(rho)
}

fn collatz_wielandt(b: &NonNegMatrix, tol: f64) -> Option<f64> {
    let n = b.dim();
    let sigma = b.norm_inf();
    let mut x = vec![1.0; n];
    for _ in 0..POWER_BUDGET {
        let bx = b.mul_vec(&x);
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for (v, xi) in bx.iter().zip(&x) {
            let q = v / xi;
            lo = lo.min(q);
            hi = hi.max(q);
        }
        if hi - lo <= tol.max(4.0 * f64::EPSILON * hi) {
            return Some(0.5 * (lo + hi));
        }
        let mut next: Vec<f64> = bx.iter().zip(&x).map(|(v, xi)| v + sigma * xi).collect();
        let top = next.iter().cloned().fold(0.0, f64::max);
        if !(top > 0.0) || !top.is_finite() {
            return None;
        }
        for v in next.iter_mut() {
            *v /= top;
        }
        // An irreducible block keeps every coordinate positive, but they can
        // underflow for very badly scaled matrices.
        if next.iter().any(|&v| v <= 0.0) {
            return None;
        }
        x = next;
    }
    None
}

/// Diagonal similarity `D B D⁻¹` equalizing off-diagonal row and column sums
/// (Osborne's iteration). Leaves the spectrum unchanged and keeps power
/// iteration away from underflow when entries span many orders of magnitude.
fn balance(b: &NonNegMatrix) -> NonNegMatrix {
    let n = b.dim();
    let mut data = b.as_slice().to_vec();
    for _ in 0..100 {
        let mut changed = false;
        for i in 0..n {
            let row: f64 = (0..n).filter(|&j| j != i).map(|j| data[i * n + j]).sum();
            let col: f64 = (0..n).filter(|&j| j != i).map(|j| data[j * n + i]).sum();
            if row == 0.0 || col == 0.0 {
                continue;
            }
            let f = (col / row).sqrt();
            if (f - 1.0).abs() < 1e-3 {
                continue;
            }
            changed = true;
            for j in 0..n {
                if j != i {
                    data[i * n + j] *= f;
                    data[j * n + i] /= f;
                }
            }
        }
        if !changed {
            break;
        }
    }
    NonNegMatrix::from_raw(n, data)
}

fn gelfand(b: &NonNegMatrix, tol: f64) -> Result<f64> {
    let top = b.as_slice().iter().cloned().fold(0.0, f64::max);
    if top == 0.0 {
        return Ok(0.0);
    }
    let mut p = b.scale(1.0 / top);
    let mut log_scale = top.ln();
    let mut n = 1.0f64;
    let mut previous = (0.0, f64::INFINITY);
    let mut last = previous;
    for _ in 0..GELFAND_SQUARINGS {
        let sums = p.row_sums();
        let lo_sum = sums.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi_sum = sums.iter().cloned().fold(0.0, f64::max);
        let lo = if lo_sum > 0.0 { ((lo_sum.ln() + log_scale) / n).exp() } else { 0.0 };
        let hi = ((hi_sum.ln() + log_scale) / n).exp();
        previous = last;
        last = (lo, hi);
        if hi - lo <= tol.max(8.0 * f64::EPSILON * hi) {
            return Ok(0.5 * (lo + hi));
        }
        p = p.matmul(&p);
        let top = p.as_slice().iter().cloned().fold(0.0, f64::max);
        if top == 0.0 {
            return Ok(0.0);
        }
        p = p.scale(1.0 / top);
        log_scale = 2.0 * log_scale + top.ln();
        n *= 2.0;
    }
    Err(Error::SpectralNonConvergence { previous, last })
}

/// Strongly connected blocks of the graph with edges `i → j` when `a_ij > 0`,
/// each block sorted, blocks ordered by their smallest member.
pub(crate) fn strongly_connected_blocks(a: &NonNegMatrix) -> Vec<Vec<usize>> {
    let reach = reachability(a);
    let n = a.dim();
    let mut assigned = vec![false; n];
    let mut blocks = Vec::new();
    for i in 0..n {
        if assigned[i] {
            continue;
        }
        let block: Vec<usize> = (i..n).filter(|&j| reach[i][j] && reach[j][i]).collect();
        for &j in &block {
            assigned[j] = true;
        }
        blocks.push(block);
    }
    blocks
}

/// `reach[i][j]` is true when `j` is reachable from `i` in zero or more steps.
fn reachability(a: &NonNegMatrix) -> Vec<Vec<bool>> {
    let n = a.dim();
    let mut reach = vec![vec![false; n]; n];
    for (start, row) in reach.iter_mut().enumerate() {
        let mut stack = vec![start];
        row[start] = true;
        while let Some(i) = stack.pop() {
            for (j, seen) in row.iter_mut().enumerate() {
                if a.get(i, j) > 0.0 && !*seen {
                    *seen = true;
                    stack.push(j);
                }
            }
        }
    }
    reach
}

fn submatrix(a: &NonNegMatrix, set: &[usize]) -> NonNegMatrix {
    let k = set.len();
    let mut data = Vec::with_capacity(k * k);
    for &i in set {
        for &j in set {
            data.push(a.get(i, j));
        }
    }
    NonNegMatrix::from_raw(k, data)
}

/// A witness of `|||Aⁿ|||_∞ ≤ K rⁿ` for every `n ≥ 0`.
///
/// `K` is never below 1, which is what the `n = 0` term forces.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthCertificate {
    pub r: f64,
    #[serde(rename = "K")]
    pub k: f64,
}

impl GrowthCertificate {
    /// Takes `(r, K)` on trust, for example from a configuration file.
    pub fn new(r: f64, k: f64) -> Result<Self> {
        if !(r >= 0.0 && r.is_finite() && k >= 0.0 && k.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "growth certificate needs finite r >= 0 and K >= 0, got r = {r}, K = {k}"
            )));
        }
        Ok(GrowthCertificate { r, k })
    }

    /// `((1+r)/(2r))^{1 + 2K/(1-r)}`, the constant in the generation-tail
    /// and compact-support cluster bounds.
    pub fn tail_constant(&self) -> Result<f64> {
        check_rate(self.r)?;
        let base = (1.0 + self.r) / (2.0 * self.r);
        Ok(base.powf(1.0 + 2.0 * self.k / (1.0 - self.r)))
    }

    /// `(1+r)/(2r)`, the inflation factor applied to `H` in the closed-form
    /// bound.
    pub fn inflation(&self) -> Result<f64> {
        check_rate(self.r)?;
        Ok((1.0 + self.r) / (2.0 * self.r))
    }

    /// The certificate with the largest guaranteed box `t0(r, K)` among a
    /// deterministic grid of rates in `(spr(A), 1)`.
    pub fn best_for_t0(a: &NonNegMatrix) -> Result<Self> {
        let rho = spectral_radius(a, 1e-13)?;
        if rho >= 1.0 {
            return Err(Error::NoFiniteGrowthConstant { r: 1.0, spectral_radius: rho });
        }
        const STEPS: usize = 200;
        let mut best: Option<(f64, GrowthCertificate)> = None;
        for k in 1..STEPS {
            let r = rho + (1.0 - rho) * k as f64 / STEPS as f64;
            let mut n_max = 64;
            let cert = loop {
                match certify_growth(a, r, n_max) {
                    Ok(c) => break Some(c),
                    Err(Error::DecayNotReached { .. }) if n_max < 1 << 14 => n_max *= 2,
                    Err(_) => break None,
                }
            };
            let Some(cert) = cert else { continue };
            let value = t0(cert.r, cert.k)?;
            if best.map_or(true, |(b, _)| value > b) {
                best = Some((value, cert));
            }
        }
        best.map(|(_, c)| c).ok_or(Error::DecayNotReached { n_max: 1 << 14 })
    }
}

fn check_rate(r: f64) -> Result<()> {
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::InvalidArgument(format!("r must lie in (0, 1), got {r}")));
    }
    Ok(())
}

/// `t0(r, K) = log((1+r)/(2r)) / (1 + 2K/(1-r))`, the radius of the box on
/// which the explicit bounds hold.
pub fn t0(r: f64, k: f64) -> Result<f64> {
    check_rate(r)?;
    if !(k >= 1.0 && k.is_finite()) {
        return Err(Error::InvalidArgument(format!("K must be finite and >= 1, got {k}")));
    }
    Ok(((1.0 + r) / (2.0 * r)).ln() / (1.0 + 2.0 * k / (1.0 - r)))
}

/// Finds `K` such that `|||Aⁿ|||_∞ ≤ K rⁿ` for every `n`.
///
/// Computes `q_n = |||(A/r)ⁿ|||_∞` for `n = 1..=n_max` and stops at the first
/// `p` with `q_p ≤ 1`. Submultiplicativity then gives `q_{kp+j} ≤ q_j`, so the
/// maximum over `n ≤ p` is the supremum over all `n`. If no such `p` exists
/// by `n_max` the call fails and asks for a longer prefix.
pub fn certify_growth(a: &NonNegMatrix, r: f64, n_max: usize) -> Result<GrowthCertificate> {
    if !(r >= 0.0 && r.is_finite()) {
        return Err(Error::InvalidArgument(format!("r must be finite and >= 0, got {r}")));
    }
    if n_max == 0 {
        return Err(Error::InvalidArgument("n_max must be at least 1".into()));
    }
    let rho = spectral_radius(a, 1e-13)?;
    if r == 0.0 {
        // With r = 0 the bound already fails at n = 1 unless A = 0.
        return if a.is_zero() {
            Ok(GrowthCertificate { r, k: 1.0 })
        } else {
            Err(Error::NoFiniteGrowthConstant { r, spectral_radius: rho })
        };
    }
    if r < rho * (1.0 - 1e-12) {
        return Err(Error::NoFiniteGrowthConstant { r, spectral_radius: rho });
    }
    let b = a.scale(1.0 / r);
    let mut p = b.clone();
    let mut k: f64 = 1.0;
    for n in 1..=n_max {
        if n > 1 {
            p = p.matmul(&b);
        }
        let q = p.norm_inf();
        if !q.is_finite() {
            return Err(Error::NoFiniteGrowthConstant { r, spectral_radius: rho });
        }
        k = k.max(q);
        if q <= 1.0 {
            return Ok(GrowthCertificate { r, k });
        }
    }
    if r < rho + 1e-12 {
        return Err(Error::NoFiniteGrowthConstant { r, spectral_radius: rho });
    }
    Err(Error::DecayNotReached { n_max })
}

/// For each type `m`, the set `C(m)` of types reachable from `m` (including
/// `m` itself) along edges `i → j` with `a_ij > 0`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentMap {
    components: Vec<Vec<usize>>,
}

impl ComponentMap {
    /// `C(m)`, sorted ascending.
    pub fn component(&self, m: usize) -> &[usize] {
        &self.components[m]
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &[usize]> {
        self.components.iter().map(|c| c.as_slice())
    }
}

pub fn connected_components(a: &NonNegMatrix) -> ComponentMap {
    let components = reachability(a)
        .into_iter()
        .map(|row| row.iter().enumerate().filter(|(_, &r)| r).map(|(j, _)| j).collect())
        .collect();
    ComponentMap { components }
}

/// The submatrix `(a_ij)_{i,j ∈ set}`, rows and columns in the order given.
pub fn restrict(a: &NonNegMatrix, set: &[usize]) -> Result<NonNegMatrix> {
    if set.is_empty() {
        return Err(Error::InvalidArgument("cannot restrict to an empty type set".into()));
    }
    let mut seen = vec![false; a.dim()];
    for &i in set {
        if i >= a.dim() {
            return Err(Error::InvalidArgument(format!("type {i} out of range for dimension {}", a.dim())));
        }
        if std::mem::replace(&mut seen[i], true) {
            return Err(Error::InvalidArgument(format!("type {i} listed twice")));
        }
    }
    Ok(submatrix(a, set))
}

/// `Σ_{n≥0} Aⁿ u`, obtained by solving `(Id - A) x = u`.
pub fn neumann_apply(a: &NonNegMatrix, u: &[f64]) -> Result<Vec<f64>> {
    check_len(u, a.dim())?;
    check_nonneg_vector(u, "u")?;
    let rho = spectral_radius(a, 1e-13)?;
    if rho >= 1.0 {
        return Err(Error::SeriesDiverges(rho));
    }
    let mut x = a.solve_identity_minus(u)?;
    // The exact solution dominates u; clip rounding noise so callers can rely
    // on it.
    for (xi, ui) in x.iter_mut().zip(u) {
        *xi = xi.max(*ui);
    }
    Ok(x)
}

/// Power iteration on `A + σ Id` started from `start`, returning a
/// nonnegative vector normalized to unit ∞-norm.
pub(crate) fn shifted_power(a: &NonNegMatrix, start: &[f64], iterations: usize) -> Vec<f64> {
    let sigma = a.norm_inf();
    let top = start.iter().cloned().fold(0.0, f64::max);
    let mut x: Vec<f64> = start.iter().map(|v| v / top).collect();
    for _ in 0..iterations {
        let ax = a.mul_vec(&x);
        let next: Vec<f64> = ax.iter().zip(&x).map(|(v, xi)| v + sigma * xi).collect();
        let top = next.iter().cloned().fold(0.0, f64::max);
        if !(top > 0.0) || !top.is_finite() {
            break;
        }
        let next: Vec<f64> = next.iter().map(|v| v / top).collect();
        let change = next.iter().zip(&x).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        x = next;
        if change <= 1e-15 {
            break;
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(rows: &[&[f64]]) -> NonNegMatrix {
        NonNegMatrix::new(rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    #[test]
    fn spectral_radius_examples() {
        assert_eq!(spectral_radius(&m(&[&[0.0, 0.0], &[0.0, 0.0]]), 1e-12).unwrap(), 0.0);
        let r = spectral_radius(&m(&[&[0.2, 0.1], &[0.3, 0.2]]), 1e-12).unwrap();
        assert!((r - 0.3732050807568877).abs() < 1e-12);
        assert_eq!(spectral_radius(&m(&[&[1.2, 0.0], &[0.0, 0.0]]), 1e-12).unwrap(), 1.2);
    }

    #[test]
    fn nilpotent_is_exactly_zero() {
        assert_eq!(spectral_radius(&m(&[&[0.0, 1.0], &[0.0, 0.0]]), 1e-12).unwrap(), 0.0);
    }

    #[test]
    fn periodic_block() {
        // A 3-cycle with weight 2: eigenvalues 2·(cube roots of unity).
        let a = m(&[&[0.0, 2.0, 0.0], &[0.0, 0.0, 2.0], &[2.0, 0.0, 0.0]]);
        assert!((spectral_radius(&a, 1e-12).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn gelfand_fallback_agrees() {
        let a = m(&[&[0.2, 0.1], &[0.3, 0.2]]);
        let g = gelfand(&a, 1e-12).unwrap();
        assert!((g - 0.3732050807568877).abs() < 1e-11);
    }

    #[test]
    fn certify_examples() {
        let c = certify_growth(&NonNegMatrix::scalar(0.5).unwrap(), 0.5, 10).unwrap();
        assert_eq!(c.k, 1.0);
        let c = certify_growth(&m(&[&[0.2, 0.1], &[0.3, 0.2]]), 0.4, 200).unwrap();
        assert!(c.k >= 1.25 && c.k.is_finite());
        assert!(matches!(
            certify_growth(&NonNegMatrix::scalar(1.2).unwrap(), 1.0, 100),
            Err(Error::NoFiniteGrowthConstant { .. })
        ));
    }

    #[test]
    fn certify_asks_for_more_terms() {
        // Strong transient growth before decay sets in.
        let a = m(&[&[0.5, 50.0], &[0.0, 0.5]]);
        assert!(matches!(certify_growth(&a, 0.6, 3), Err(Error::DecayNotReached { n_max: 3 })));
        assert!(certify_growth(&a, 0.6, 1000).is_ok());
    }

    #[test]
    fn t0_examples() {
        assert!((t0(0.5, 1.0).unwrap() - 0.08109302162163288).abs() < 1e-15);
        assert!(t0(1.0, 1.0).is_err());
        assert!(t0(0.999, 1.0).unwrap() < t0(0.9, 1.0).unwrap());
        assert!(t0(0.5, 1e6).unwrap() < 1e-6);
        let c = GrowthCertificate::new(0.5, 1.0).unwrap();
        assert!((c.tail_constant().unwrap() - 7.59375).abs() < 1e-12);
    }

    #[test]
    fn components_examples() {
        let c = connected_components(&m(&[&[0.7, 0.0], &[0.0, 0.0]]));
        assert_eq!(c.component(0), &[0]);
        assert_eq!(c.component(1), &[1]);
        let c = connected_components(&m(&[&[0.1, 0.1], &[0.1, 0.1]]));
        assert_eq!(c.component(0), &[0, 1]);
        assert_eq!(c.component(1), &[0, 1]);
        let c = connected_components(&m(&[&[0.0, 1.0], &[0.0, 0.0]]));
        assert_eq!(c.component(0), &[0, 1]);
        assert_eq!(c.component(1), &[1]);
    }

    #[test]
    fn restrict_examples() {
        let a = m(&[&[0.2, 0.1], &[0.3, 0.2]]);
        assert_eq!(restrict(&a, &[1]).unwrap(), NonNegMatrix::scalar(0.2).unwrap());
        assert_eq!(restrict(&a, &[0, 1]).unwrap(), a);
        assert!(restrict(&a, &[]).is_err());
        assert!(restrict(&a, &[2]).is_err());
        let b = m(&[&[0.7, 0.0], &[0.0, 0.0]]);
        assert_eq!(restrict(&b, &[0]).unwrap(), NonNegMatrix::scalar(0.7).unwrap());
    }

    #[test]
    fn neumann_examples() {
        let x = neumann_apply(&NonNegMatrix::zeros(2), &[0.3, 0.4]).unwrap();
        assert_eq!(x, vec![0.3, 0.4]);
        let x = neumann_apply(&m(&[&[0.2, 0.1], &[0.3, 0.2]]), &[1.0, 1.0]).unwrap();
        assert!((x[0] - 1.4754098360655737).abs() < 1e-12);
        assert!((x[1] - 1.80327868852459).abs() < 1e-12);
        assert_eq!(neumann_apply(&NonNegMatrix::scalar(0.5).unwrap(), &[1.0]).unwrap(), vec![2.0]);
        assert!(matches!(neumann_apply(&NonNegMatrix::scalar(1.0).unwrap(), &[1.0]), Err(Error::SeriesDiverges(_))));
    }

    fn matrix_strategy(max_dim: usize) -> impl Strategy<Value = NonNegMatrix> {
        (1..=max_dim).prop_flat_map(|d| {
            proptest::collection::vec(prop_oneof![2 => Just(0.0), 5 => 0.0..1.0f64], d * d)
                .prop_map(move |v| NonNegMatrix::from_raw(d, v))
        })
    }

    proptest! {
        #[test]
        fn bounded_by_row_sums(a in matrix_strategy(5)) {
            let rho = spectral_radius(&a, 1e-12).unwrap();
            prop_assert!(rho <= a.norm_inf() + 1e-12);
        }

        #[test]
        fn agrees_with_gelfand_limit(a in matrix_strategy(4)) {
            let rho = spectral_radius(&a, 1e-12).unwrap();
            // ρ ≤ |||Aⁿ|||^{1/n} for every n.
            for n in [1u32, 2, 5, 17] {
                let bound = a.pow(n).norm_inf().powf(1.0 / n as f64);
                prop_assert!(rho <= bound * (1.0 + 1e-10) + 1e-12);
            }
        }

        #[test]
        fn certificate_holds_on_double_prefix(a in matrix_strategy(3), slack in 0.05..0.5f64) {
            let rho = spectral_radius(&a, 1e-12).unwrap();
            let r = rho + slack;
            let n_max = 400;
            let c = certify_growth(&a, r, n_max).unwrap();
            let mut p = NonNegMatrix::identity(a.dim());
            for n in 1..=2 * n_max {
                p = p.matmul(&a);
                let lhs = p.norm_inf();
                let rhs = c.k * r.powi(n as i32);
                prop_assert!(lhs <= rhs * (1.0 + 1e-9) + 1e-300, "n = {}: {} > {}", n, lhs, rhs);
            }
        }

        #[test]
        fn components_are_nested(a in matrix_strategy(6)) {
            let c = connected_components(&a);
            for m in 0..a.dim() {
                prop_assert!(c.component(m).contains(&m));
                for &j in c.component(m) {
                    for k in c.component(j) {
                        prop_assert!(c.component(m).contains(k));
                    }
                }
            }
        }

        #[test]
        fn restriction_commutes_with_products(a in matrix_strategy(5), mask in proptest::collection::vec(any::<bool>(), 5)) {
            let set: Vec<usize> = (0..a.dim()).filter(|&i| mask[i]).collect();
            prop_assume!(!set.is_empty());
            let x: Vec<f64> = (0..a.dim()).map(|i| if mask[i] { 1.0 + i as f64 } else { 0.0 }).collect();
            let full = a.mul_vec(&x);
            let sub = restrict(&a, &set).unwrap();
            let xs: Vec<f64> = set.iter().map(|&i| x[i]).collect();
            let part = sub.mul_vec(&xs);
            for (k, &i) in set.iter().enumerate() {
                prop_assert!((full[i] - part[k]).abs() <= 1e-12 * (1.0 + full[i]));
            }
        }

        #[test]
        fn neumann_is_a_fixed_point(a in matrix_strategy(4), u in proptest::collection::vec(0.0..2.0f64, 4)) {
            let rho = spectral_radius(&a, 1e-12).unwrap();
            prop_assume!(rho < 0.95);
            let u = &u[..a.dim()];
            let x = neumann_apply(&a, u).unwrap();
            let ax = a.mul_vec(&x);
            for i in 0..a.dim() {
                prop_assert!((x[i] - u[i] - ax[i]).abs() <= 1e-12);
                prop_assert!(x[i] >= u[i]);
            }
        }
    }
}
