use gwtk::domain::DomainConfig;
use gwtk::grid::ConvolveCheckConfig;
use gwtk::hawkes::hawkes_moment_bound_solved;
use gwtk::kernel::{cluster_tail_report, CurvePoint};
use gwtk::laplace::{a_priori_bound, expected_progeny, self_improving_bound};
use gwtk::oracle::EstimatorReport;
use gwtk::spectral::t0;
use gwtk::tails::TailBoundKind;
use gwtk::{
    boundary_from_y, classify, closed_form_bound, convolve_check, empirical_cluster_tail, empirical_laplace,
    empirical_tail, hawkes_moment_bound_explicit, ray_critical, reduce_types, sample_hawkes, solve_l, spectral_radius,
    tail_table, GrowthCertificate, LaplaceExponent, NonNegMatrix, SolverConfig,
};
use serde::Serialize;

use crate::artifact::{num, opt_num, Artifacts, Csv};
use crate::config::*;
use crate::error::CliError;

/// Result of a subcommand: the artifacts to write and, when the run should
/// exit nonzero even though its artifacts are valid, the reason.
pub struct Outcome {
    pub artifacts: Artifacts,
    pub failure: Option<CliError>,
}

impl Outcome {
    fn ok(artifacts: Artifacts) -> Self {
        Outcome { artifacts, failure: None }
    }
}

fn certificate_for(h: &NonNegMatrix, given: Option<GrowthCertificate>) -> Option<GrowthCertificate> {
    given.or_else(|| GrowthCertificate::best_for_t0(h).ok())
}

fn in_box(cert: &GrowthCertificate, u: &[f64]) -> bool {
    let norm = u.iter().copied().fold(0.0, f64::max);
    t0(cert.r, cert.k).map(|t| norm <= t).unwrap_or(false)
}

#[derive(Serialize)]
struct Bounds {
    a_priori: Option<Vec<f64>>,
    closed_form: Option<Vec<f64>>,
    self_improving: Option<Vec<f64>>,
}

#[derive(Serialize)]
struct SolveResult {
    status: &'static str,
    #[serde(rename = "L")]
    l: Option<Vec<f64>>,
    residual: Option<f64>,
    iterations: usize,
    bounds: Bounds,
    expected_progeny: Option<Vec<f64>>,
    certificate: Option<GrowthCertificate>,
    outcome: LaplaceExponent,
}

pub fn solve(cfg: &SolveConfig, seed: u64) -> Result<Outcome, CliError> {
    let h = &cfg.h;
    let out = solve_l(h, &cfg.u, &cfg.solver)?;
    let certificate = certificate_for(h, cfg.certificate);
    let cert = certificate.filter(|c| in_box(c, &cfg.u));
    let (status, l, residual) = match &out {
        LaplaceExponent::Converged { value, residual, .. } => ("converged", Some(value.clone()), Some(*residual)),
        LaplaceExponent::CertifiedDivergent { .. } => ("divergent", None, None),
        LaplaceExponent::BudgetExhausted { .. } => ("budget_exhausted", None, None),
    };
    let bounds = Bounds {
        a_priori: cert.and_then(|c| a_priori_bound(&c, &cfg.u).ok()),
        closed_form: cert.and_then(|c| closed_form_bound(h, &c, &cfg.u).ok()),
        self_improving: l.as_ref().and_then(|l| self_improving_bound(h, l, &cfg.u).ok()),
    };
    let failure = match status {
        "converged" => None,
        "divergent" => Some(CliError::Domain("L(u) is infinite (certified divergent)".into())),
        _ => Some(CliError::Domain("solver budget exhausted without a verdict".into())),
    };
    let result = SolveResult {
        status,
        l,
        residual,
        iterations: out.iterations(),
        bounds,
        expected_progeny: expected_progeny(h, &cfg.u).ok(),
        certificate,
        outcome: out,
    };
    let mut a = Artifacts::default();
    a.json("solve.json", cfg, seed, result);
    Ok(Outcome { artifacts: a, failure })
}

fn domain_config(solver: &SolverConfig, boundary_tol: f64) -> DomainConfig {
    DomainConfig { solver: solver.clone(), boundary_tol }
}

pub fn domain_classify(cfg: &ClassifyConfig, seed: u64) -> Result<Outcome, CliError> {
    let p = classify(&cfg.h, &cfg.u, &domain_config(&cfg.solver, cfg.boundary_tol))?;
    let mut a = Artifacts::default();
    a.json("domain_classify.json", cfg, seed, p);
    Ok(Outcome::ok(a))
}

pub fn domain_ray(cfg: &RayConfig, seed: u64) -> Result<Outcome, CliError> {
    let ray = ray_critical(&cfg.h, &cfg.d, cfg.tol, &domain_config(&cfg.solver, cfg.boundary_tol))?;
    let mut csv = Csv::new(cfg, seed);
    csv.row(["t", "status", "spr_at_L"]);
    for p in ray.probes.iter().filter(|p| p.t < ray.t_critical) {
        csv.row([num(p.t), status_name(&p.status), opt_num(p.spr_at_l)]);
    }
    if ray.t_critical.is_finite() {
        let spr = match &ray.l_critical {
            Some(l) => {
                Some(spectral_radius(&cfg.h.scale_columns(&l.iter().map(|x| x.exp()).collect::<Vec<_>>()), 1e-12)?)
            }
            None => None,
        };
        csv.row([num(ray.t_critical), "boundary".into(), opt_num(spr)]);
    }
    let mut a = Artifacts::default();
    a.json("domain_ray.json", cfg, seed, ray);
    a.csv("domain_ray.csv", csv);
    Ok(Outcome::ok(a))
}

fn status_name<T: Serialize>(s: &T) -> String {
    serde_json::to_value(s).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
}

pub fn domain_boundary(cfg: &BoundaryConfig, seed: u64) -> Result<Outcome, CliError> {
    let p = boundary_from_y(&cfg.h, &cfg.y, cfg.tol)?;
    let mut a = Artifacts::default();
    a.json("domain_boundary_from_y.json", cfg, seed, p);
    Ok(Outcome::ok(a))
}

pub fn domain_reduce(cfg: &ReduceConfig, seed: u64) -> Result<Outcome, CliError> {
    let r = reduce_types(&cfg.h)?;
    let mut a = Artifacts::default();
    a.json("domain_reduce.json", cfg, seed, r);
    Ok(Outcome::ok(a))
}

pub fn tails(cfg: &TailsConfig, seed: u64) -> Result<Outcome, CliError> {
    let t = tail_table(&cfg.h, &cfg.u, cfg.generations, cfg.certificate, &cfg.solver)?;
    let m = cfg.h.dim();
    let mut csv = Csv::new(cfg, seed);
    csv.comment("bound", &serde_json::to_string(&t.bound).expect("bound serializes"));
    let mut header = vec!["n".to_string()];
    header.extend((0..m).map(|i| format!("R[{i}]")));
    header.extend((0..m).map(|i| format!("bound[{i}]")));
    csv.row(header);
    for (n, r) in t.sequence.values.iter().enumerate() {
        let mut row = vec![n.to_string()];
        row.extend(r.iter().map(|x| num(*x)));
        match (&t.bound, t.bound_values.get(n)) {
            (TailBoundKind::Explicit { .. }, Some(b)) => row.extend(b.iter().map(|x| num(*x))),
            _ => row.extend(vec![String::new(); m]),
        }
        csv.row(row);
    }
    let mut a = Artifacts::default();
    a.csv("tails.csv", csv);
    Ok(Outcome::ok(a))
}

pub fn cluster_bound(cfg: &ClusterBoundConfig, seed: u64) -> Result<Outcome, CliError> {
    let report = cluster_tail_report(&cfg.kernel, &cfg.u, &cfg.d_grid, &cfg.options, &cfg.solver)?;
    let m = cfg.kernel.h().dim();
    let mut csv = Csv::new(cfg, seed);
    let mut summary = report.clone();
    summary.curve.clear();
    csv.comment("report", &serde_json::to_string(&summary).expect("report serializes"));
    let mut header = vec!["d".to_string()];
    header.extend((0..m).map(|i| format!("bound[{i}]")));
    csv.row(header);
    for CurvePoint { d, bound } in &report.curve {
        let mut row = vec![num(*d)];
        row.extend(bound.iter().map(|x| num(*x)));
        csv.row(row);
    }
    let mut a = Artifacts::default();
    a.csv("cluster_bound.csv", csv);
    Ok(Outcome::ok(a))
}

#[derive(Serialize)]
struct HawkesResult {
    bound: f64,
    bound_explicit: Option<f64>,
    #[serde(rename = "L_u")]
    l_u: Vec<f64>,
    certificate: Option<GrowthCertificate>,
    note: Option<String>,
}

pub fn hawkes_bound(cfg: &HawkesBoundConfig, seed: u64) -> Result<Outcome, CliError> {
    let p = cfg.params();
    let (bound, l_u) = hawkes_moment_bound_solved(&p, &cfg.u, &cfg.solver)?;
    let cert = certificate_for(p.kernel.h(), cfg.certificate);
    let (bound_explicit, note) = match cert {
        Some(c) if in_box(&c, &cfg.u) => (Some(hawkes_moment_bound_explicit(&p, &c, &cfg.u)?), None),
        Some(_) => (None, Some("|u| is outside the box of the certificate; no explicit bound".to_string())),
        None => (None, Some("no growth certificate available".to_string())),
    };
    let mut a = Artifacts::default();
    a.json("hawkes_bound.json", cfg, seed, HawkesResult { bound, bound_explicit, l_u, certificate: cert, note });
    Ok(Outcome::ok(a))
}

pub fn convolve(cfg: &ConvolveCheckConfig, seed: u64) -> Result<Outcome, CliError> {
    let report = convolve_check(cfg)?;
    let failure = (!report.passed).then(|| {
        let bad: Vec<&str> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
        CliError::Domain(format!("convolution property violated: {}", bad.join(", ")))
    });
    let mut a = Artifacts::default();
    a.json("convolve_check.json", cfg, seed, report);
    Ok(Outcome { artifacts: a, failure })
}

/// Verification table in log scale: `empirical` is `log` of the sample mean
/// and `std_error` its delta-method standard error.
struct Verification {
    csv: Csv,
    failed: Vec<String>,
}

impl Verification {
    fn new<C: Serialize>(cfg: &C, seed: u64, check: &str) -> Self {
        let mut csv = Csv::new(cfg, seed);
        csv.comment("scale", "log");
        csv.comment("check", check);
        csv.row(["point", "empirical", "std_error", "bound", "pass"]);
        Verification { csv, failed: Vec::new() }
    }

    fn push(&mut self, point: String, r: &EstimatorReport, reference: f64, two_sided: bool) {
        if r.lower_bound_only {
            log::warn!("{point}: population cap hit, estimate is a lower bound");
        }
        let (est, se) = (r.log_estimate(), r.log_std_error());
        let pass = if two_sided { (est - reference).abs() <= 3.0 * se } else { est <= reference + 3.0 * se };
        if !pass {
            self.failed.push(point.clone());
        }
        self.csv.row([point, num(est), num(se), num(reference), if pass { "pass" } else { "fail" }.to_string()]);
    }

    fn finish(self, name: &str) -> Outcome {
        let failure = (!self.failed.is_empty())
            .then(|| CliError::Domain(format!("verification failed at {}", self.failed.join(", "))));
        let mut a = Artifacts::default();
        a.csv(name, self.csv);
        Outcome { artifacts: a, failure }
    }
}

const TWO_SIDED: &str = "|empirical - bound| <= 3 std_error (bound is the exact value)";
const ONE_SIDED: &str = "empirical <= bound + 3 std_error";

pub fn verify_laplace(cfg: &VerifyLaplaceConfig, seed: u64) -> Result<Outcome, CliError> {
    let l = solve_l(&cfg.h, &cfg.u, &cfg.solver)?.into_value()?;
    let mut v = Verification::new(cfg, seed, TWO_SIDED);
    for &root in cfg.roots.as_deref().unwrap_or_default() {
        let r = empirical_laplace(&cfg.h, &cfg.u, root, cfg.replicates, seed, cfg.cap)?;
        v.push(format!("root={root}"), &r, l[root], true);
    }
    Ok(v.finish("verify_laplace.csv"))
}

pub fn verify_tails(cfg: &VerifyTailsConfig, seed: u64) -> Result<Outcome, CliError> {
    let l = solve_l(&cfg.h, &cfg.u, &cfg.solver)?.into_value()?;
    let seq = gwtk::tail_sequence(&cfg.h, &l, cfg.generations)?;
    let mut v = Verification::new(cfg, seed, TWO_SIDED);
    for &root in cfg.roots.as_deref().unwrap_or_default() {
        let reps = empirical_tail(&cfg.h, &cfg.u, root, cfg.generations, cfg.replicates, seed, cfg.cap)?;
        for (n, r) in reps.iter().enumerate() {
            v.push(format!("root={root};n={n}"), r, seq.values[n][root], true);
        }
    }
    Ok(v.finish("verify_tails.csv"))
}

pub fn verify_cluster(cfg: &VerifyClusterConfig, seed: u64) -> Result<Outcome, CliError> {
    let report = cluster_tail_report(&cfg.kernel, &cfg.u, &cfg.d_grid, &cfg.options, &cfg.solver)?;
    if report.curve.is_empty() {
        return Err(CliError::Domain(format!(
            "no computable cluster bound: {}",
            report.note.unwrap_or_else(|| "empty curve".into())
        )));
    }
    let d: Vec<f64> = report.curve.iter().map(|p| p.d).collect();
    let mut v = Verification::new(cfg, seed, ONE_SIDED);
    for &root in cfg.roots.as_deref().unwrap_or_default() {
        let reps = empirical_cluster_tail(&cfg.kernel, &cfg.u, root, &d, cfg.replicates, seed, cfg.cap)?;
        for (r, p) in reps.iter().zip(&report.curve) {
            v.push(format!("root={root};d={}", num(p.d)), r, p.bound[root], false);
        }
    }
    Ok(v.finish("verify_cluster.csv"))
}

pub fn verify_hawkes(cfg: &VerifyHawkesConfig, seed: u64) -> Result<Outcome, CliError> {
    let p = cfg.params();
    let mut v = Verification::new(cfg, seed, ONE_SIDED);
    for u in &cfg.u_points {
        let (bound, _) = hawkes_moment_bound_solved(&p, u, &cfg.solver)?;
        let r = sample_hawkes(&p, u, cfg.replicates, seed, cfg.cap, cfg.t_burn)?;
        let point = format!("u={}", u.iter().map(|x| num(*x)).collect::<Vec<_>>().join(" "));
        v.push(point, &r, bound.ln(), false);
    }
    Ok(v.finish("verify_hawkes.csv"))
}
