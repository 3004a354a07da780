//! Limit laws of `Z_N` under weak coupling and the statistics used to
//! compare finite-`N` replicas with them.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;

use crate::environment::rng::{derive_seed, field_seed, CounterRng, FIELD_STREAM, LIMIT_STREAM};
use crate::environment::{sample_field, Geometry, ModelParams};
use crate::error::invalid;
use crate::intersection::{classify_regime, BetaSchedule, Regime, RegimeReport};
use crate::partition::{partition_exact, partition_exact_banded, second_moment_exact};
use crate::stats::{median, spearman, MeanEstimate, Spearman};
use crate::{Error, Result};

/// Spatial domain of the noise in the Wiener chaos limit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "branch", rename_all = "kebab-case")]
pub enum WienerBranch {
    /// Noise on all of `R`.
    FullSpace,
    /// Noise on `[-R, R]`.
    Tube { r: f64 },
    /// Noise on `|x| <= R sqrt(t)`.
    Cone { r: f64 },
}

impl WienerBranch {
    fn bound(&self, t: f64) -> f64 {
        match *self {
            WienerBranch::FullSpace => f64::INFINITY,
            WienerBranch::Tube { r } => r,
            WienerBranch::Cone { r } => r * t.sqrt(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "kebab-case")]
pub enum LimitLaw {
    WienerChaos { beta_hat: f64, branch: WienerBranch },
    /// `exp(sigma W - sigma^2 / 2)`.
    LogNormal { sigma_sq: f64 },
    PointMassOne,
    PointMassZero,
}

/// Chaos order used for the restricted Wiener branches.
pub const WIENER_ORDER: usize = 16;

impl LimitLaw {
    pub fn mean(&self) -> f64 {
        match self {
            LimitLaw::PointMassZero => 0.0,
            _ => 1.0,
        }
    }

    pub fn second_moment(&self) -> Result<f64> {
        match *self {
            LimitLaw::WienerChaos {
                beta_hat,
                branch: WienerBranch::FullSpace,
            } => {
                // sum_k x^k / Gamma(k/2 + 1) = exp(x^2) erfc(-x)
                let x = beta_hat * beta_hat;
                Ok((x * x).exp() * erfc(-x))
            }
            LimitLaw::WienerChaos { beta_hat, branch } => wiener_chaos_second_moment(beta_hat, branch, WIENER_ORDER),
            LimitLaw::LogNormal { sigma_sq } => Ok(sigma_sq.exp()),
            LimitLaw::PointMassOne => Ok(1.0),
            LimitLaw::PointMassZero => Ok(0.0),
        }
    }

    /// Distribution function, where it has a closed form.
    pub fn cdf(&self, x: f64) -> Option<f64> {
        match *self {
            LimitLaw::LogNormal { sigma_sq } if sigma_sq > 0.0 => {
                if x <= 0.0 {
                    return Some(0.0);
                }
                let s = sigma_sq.sqrt();
                Some(standard_normal().cdf((x.ln() + 0.5 * sigma_sq) / s))
            }
            LimitLaw::LogNormal { .. } | LimitLaw::PointMassOne => Some(if x >= 1.0 { 1.0 } else { 0.0 }),
            LimitLaw::PointMassZero => Some(if x >= 0.0 { 1.0 } else { 0.0 }),
            LimitLaw::WienerChaos { .. } => None,
        }
    }
}

/// The limit of `Z_N` along the schedule of `report`.
pub fn limit_law(report: &RegimeReport) -> Result<LimitLaw> {
    let p = &report.params;
    Ok(match report.regime {
        Regime::DisorderIrrelevant => LimitLaw::PointMassOne,
        Regime::MarginallyRelevant if report.beta_hat >= 1.0 => LimitLaw::PointMassZero,
        Regime::MarginallyRelevant => match report.sigma_sq {
            Some(sigma_sq) => LimitLaw::LogNormal { sigma_sq },
            None => {
                return Err(Error::NotApplicable(format!(
                    "no closed-form variance for the marginal cell {p}"
                )))
            }
        },
        Regime::DisorderRelevant => {
            let branch = if p.a > 0.5 {
                WienerBranch::FullSpace
            } else if p.geometry == Geometry::Tube {
                WienerBranch::Tube { r: p.r }
            } else {
                WienerBranch::Cone { r: p.r }
            };
            LimitLaw::WienerChaos {
                beta_hat: report.beta_hat,
                branch,
            }
        }
    })
}

fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// `n_samples` draws of `exp(sigma W - sigma^2 / 2)`; draw `i` uses the
/// stream `(seed, limit, i)`.
pub fn sample_lognormal_limit(sigma_sq: f64, n_samples: usize, seed: u64) -> Result<Vec<f64>> {
    if !sigma_sq.is_finite() || sigma_sq < 0.0 {
        return Err(invalid(format!("sigma^2 must be finite and >= 0, got {sigma_sq}")));
    }
    let s = sigma_sq.sqrt();
    Ok((0..n_samples as u64)
        .into_par_iter()
        .map(|i| {
            let w: f64 = CounterRng::for_stream(seed, LIMIT_STREAM, i).sample(StandardNormal);
            (s * w - 0.5 * sigma_sq).exp()
        })
        .collect())
}

/// `V_k` of the Wiener chaos second moment, with its standard error
/// (zero for closed forms).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChaosCoefficient {
    pub k: usize,
    pub value: f64,
    pub std_error: f64,
}

const MAX_WIENER_ORDER: usize = 64;
const QMC_POINTS: usize = 1 << 13;
const QMC_SHIFTS: u64 = 16;
const MC_POINTS: u64 = 1 << 15;
const QMC_SEED: u64 = 0x5eed_0001;
const MC_SEED: u64 = 0x5eed_0002;

/// `V_k = int_{0 < t_1 < ... < t_k < 1} int prod_j 2 g^2_{t_j - t_{j-1}}(x_j - x_{j-1}) dx dt`
/// for `k = 1..=K`, the spatial integrals running over the branch domain.
///
/// Over `R` the `x`-integrals give `prod_j (pi (t_j - t_{j-1}))^{-1/2}` and
/// `V_k = 1 / Gamma(k/2 + 1)`. On a restricted domain
/// `V_k = V_k^full P(every X_{t_j} in domain)`, where `t` has the normalized
/// gap weights `prod (t_j - t_{j-1})^{-1/2}` and `X` is a Brownian motion
/// with variance `t / 2`. That probability is integrated by randomly
/// shifted lattice rules with sequential conditioning, and each value is
/// certified against plain Monte Carlo.
pub fn wiener_chaos_coefficients(branch: WienerBranch, k_max: usize) -> Result<Vec<ChaosCoefficient>> {
    if k_max == 0 || k_max > MAX_WIENER_ORDER {
        return Err(invalid(format!(
            "Wiener chaos order must lie in 1..={MAX_WIENER_ORDER}, got {k_max}"
        )));
    }
    let full = |k: usize| (-ln_gamma(k as f64 / 2.0 + 1.0)).exp();
    match branch {
        WienerBranch::FullSpace => Ok((1..=k_max)
            .map(|k| ChaosCoefficient {
                k,
                value: full(k),
                std_error: 0.0,
            })
            .collect()),
        WienerBranch::Tube { r } | WienerBranch::Cone { r } => {
            if !r.is_finite() || r < 0.0 {
                return Err(invalid(format!("R must be finite and >= 0, got {r}")));
            }
            (1..=k_max)
                .map(|k| {
                    if r == 0.0 {
                        return Ok(ChaosCoefficient {
                            k,
                            value: 0.0,
                            std_error: 0.0,
                        });
                    }
                    let q = stay_probability_qmc(branch, k);
                    let m = stay_probability_mc(branch, k);
                    let tol = 4.0 * (q.std_error.powi(2) + m.std_error.powi(2)).sqrt() + 1e-12;
                    if (q.mean - m.mean).abs() > tol {
                        return Err(Error::Certification(format!(
                            "V_{k}: lattice rule {} vs Monte Carlo {} +- {}",
                            q.mean, m.mean, m.std_error
                        )));
                    }
                    Ok(ChaosCoefficient {
                        k,
                        value: full(k) * q.mean,
                        std_error: full(k) * q.std_error,
                    })
                })
                .collect()
        }
    }
}

/// `1 + sum_{k <= K} beta_hat^{2k} V_k`.
pub fn wiener_chaos_second_moment(beta_hat: f64, branch: WienerBranch, k_max: usize) -> Result<f64> {
    if beta_hat == 0.0 {
        return Ok(1.0);
    }
    let b2 = beta_hat * beta_hat;
    Ok(1.0
        + wiener_chaos_coefficients(branch, k_max)?
            .iter()
            .map(|c| b2.powi(c.k as i32) * c.value)
            .sum::<f64>())
}

/// Generators of the additive recurrence `frac(n alpha)` in `dims` dimensions,
/// from the positive root of `x^{dims+1} = x + 1`.
fn kronecker_generators(dims: usize) -> Vec<f64> {
    let mut phi = 2.0f64;
    for _ in 0..64 {
        let f = phi.powi(dims as i32 + 1) - phi - 1.0;
        let df = (dims + 1) as f64 * phi.powi(dims as i32) - 1.0;
        phi -= f / df;
    }
    (1..=dims).map(|i| (1.0 / phi.powi(i as i32)).fract()).collect()
}

fn clamp_unit(u: f64) -> f64 {
    u.clamp(1e-16, 1.0 - 1e-16)
}

/// Stay probability for one point of `[0, 1)^{2k+1}`.
fn ghk_weight(branch: WienerBranch, k: usize, u: &[f64], normal: &Normal) -> f64 {
    let mut gaps = [0.0f64; MAX_WIENER_ORDER];
    let mut total = 0.0;
    for (g, &v) in gaps.iter_mut().zip(&u[..k]) {
        let z = normal.inverse_cdf(clamp_unit(v));
        *g = 0.5 * z * z;
        total += *g;
    }
    total += -(1.0 - clamp_unit(u[k])).ln();
    let mut t = 0.0;
    let mut x = 0.0f64;
    let mut w = 1.0;
    for (&g, &v) in gaps[..k].iter().zip(&u[k + 1..]) {
        let dt = g / total;
        t += dt;
        let b = branch.bound(t);
        let s = (0.5 * dt).sqrt();
        if s == 0.0 {
            if x.abs() > b {
                return 0.0;
            }
            continue;
        }
        let lo = normal.cdf((-b - x) / s);
        let hi = normal.cdf((b - x) / s);
        let p = hi - lo;
        if p <= 0.0 {
            return 0.0;
        }
        w *= p;
        x = (x + s * normal.inverse_cdf(clamp_unit(lo + v * p))).clamp(-b, b);
    }
    w
}

fn stay_probability_qmc(branch: WienerBranch, k: usize) -> MeanEstimate {
    let dims = 2 * k + 1;
    let alpha = kronecker_generators(dims);
    let normal = standard_normal();
    let means: Vec<f64> = (0..QMC_SHIFTS)
        .into_par_iter()
        .map(|s| {
            let mut rng = CounterRng::for_stream(QMC_SEED, k as u64, s);
            let shift: Vec<f64> = (0..dims).map(|_| rng.random::<f64>()).collect();
            let mut u = vec![0.0; dims];
            let mut acc = 0.0;
            for n in 1..=QMC_POINTS {
                for ((ui, &a), &sh) in u.iter_mut().zip(&alpha).zip(&shift) {
                    *ui = (sh + n as f64 * a).fract();
                }
                acc += ghk_weight(branch, k, &u, &normal);
            }
            acc / QMC_POINTS as f64
        })
        .collect();
    MeanEstimate::from_samples(&means)
}

/// Plain Monte Carlo: Gamma gaps, Gaussian increments, indicator of staying.
fn stay_probability_mc(branch: WienerBranch, k: usize) -> MeanEstimate {
    let half = Gamma::new(0.5, 1.0).expect("gamma shape");
    let hits: Vec<f64> = (0..MC_POINTS)
        .into_par_iter()
        .map(|i| {
            let mut rng = CounterRng::for_stream(MC_SEED, k as u64, i);
            let gaps: Vec<f64> = (0..k).map(|_| half.sample(&mut rng)).collect();
            let last: f64 = Exp1.sample(&mut rng);
            let total = gaps.iter().sum::<f64>() + last;
            let (mut t, mut x) = (0.0, 0.0f64);
            for g in gaps {
                let dt = g / total;
                t += dt;
                let z: f64 = StandardNormal.sample(&mut rng);
                x += (0.5 * dt).sqrt() * z;
                if x.abs() > branch.bound(t) {
                    return 0.0;
                }
            }
            1.0
        })
        .collect();
    MeanEstimate::from_samples(&hits)
}

/// Kolmogorov-Smirnov distance with its asymptotic p-value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    /// Effective sample size used for the p-value.
    pub n_eff: f64,
}

/// What a sample is compared with.
pub enum KsReference<'a> {
    Samples(&'a [f64]),
    Cdf(&'a dyn Fn(f64) -> f64),
}

pub fn ks_statistic(samples: &[f64], reference: KsReference<'_>) -> Result<KsResult> {
    match reference {
        KsReference::Samples(other) => ks_two_sample(samples, other),
        KsReference::Cdf(f) => ks_one_sample(samples, f),
    }
}

fn sorted(xs: &[f64]) -> Result<Vec<f64>> {
    if xs.is_empty() {
        return Err(Error::EmptyInput);
    }
    if xs.iter().any(|x| x.is_nan()) {
        return Err(invalid("samples contain NaN"));
    }
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    Ok(v)
}

/// `sup_x |F_n(x) - F(x)|`, with left limits of `F` taken one ulp below
/// each sample so that step functions are handled exactly.
pub fn ks_one_sample(samples: &[f64], cdf: impl Fn(f64) -> f64) -> Result<KsResult> {
    let v = sorted(samples)?;
    let n = v.len();
    let mut d = 0.0f64;
    let mut i = 0;
    while i < n {
        let x = v[i];
        let mut j = i;
        while j < n && v[j] == x {
            j += 1;
        }
        let below = i as f64 / n as f64;
        let at = j as f64 / n as f64;
        d = d.max((cdf(x.next_down()) - below).abs()).max((at - cdf(x)).abs());
        i = j;
    }
    let n_eff = n as f64;
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_q(d, n_eff),
        n_eff,
    })
}

pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    let (x, y) = (sorted(a)?, sorted(b)?);
    let (n, m) = (x.len(), y.len());
    let (mut i, mut j) = (0, 0);
    let mut d = 0.0f64;
    while i < n && j < m {
        let t = x[i].min(y[j]);
        while i < n && x[i] == t {
            i += 1;
        }
        while j < m && y[j] == t {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let n_eff = (n * m) as f64 / (n + m) as f64;
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_q(d, n_eff),
        n_eff,
    })
}

/// `P(K > sqrt(n) D)` for the Kolmogorov distribution with the small-sample
/// correction `sqrt(n) + 0.12 + 0.11 / sqrt(n)`.
fn kolmogorov_q(d: f64, n_eff: f64) -> f64 {
    let sn = n_eff.sqrt();
    let lam = (sn + 0.12 + 0.11 / sn) * d;
    if lam <= 0.0 {
        return 1.0;
    }
    let q = if lam < 1.18 {
        let y = -PI * PI / (8.0 * lam * lam);
        let s: f64 = (1..=8).map(|j| ((2 * j - 1) as f64).powi(2) * y).map(f64::exp).sum();
        1.0 - (2.0 * PI).sqrt() / lam * s
    } else {
        let s: f64 = (1..=8)
            .map(|j| {
                let sign = if j % 2 == 1 { 1.0 } else { -1.0 };
                sign * (-2.0 * (j * j) as f64 * lam * lam).exp()
            })
            .sum();
        2.0 * s
    };
    q.clamp(0.0, 1.0)
}

/// How `beta_N` is chosen along the `N` grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "coupling", rename_all = "kebab-case")]
pub enum Coupling {
    /// The regime's own schedule at `beta_hat`.
    Scaled { beta_hat: f64 },
    /// `beta_N = c N^{-exponent}`.
    Power { c: f64, exponent: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub n: usize,
    pub beta_n: f64,
    /// Replica statistics; absent when no replicas were requested.
    pub mean: Option<MeanEstimate>,
    pub second_moment: Option<MeanEstimate>,
    pub median: Option<f64>,
    /// Exact `E[Z_N^2]`, when it fits in the memory budget.
    pub e_z2_exact: Option<f64>,
    pub e_z2_target: Option<f64>,
    /// One-sample distance to the limit law, where it has a distribution function.
    pub ks: Option<KsResult>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub params: ModelParams,
    pub coupling: Coupling,
    pub regime: Regime,
    pub law: Option<LimitLaw>,
    pub n_fields: usize,
    pub seed: u64,
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceReport {
    /// Spearman correlation of the KS distance with `log N`.
    pub fn ks_trend(&self) -> Option<Spearman> {
        let (x, y): (Vec<f64>, Vec<f64>) = self
            .rows
            .iter()
            .filter_map(|r| r.ks.map(|k| ((r.n as f64).ln(), k.statistic)))
            .unzip();
        (x.len() >= 3).then(|| spearman(&x, &y))
    }

    /// Spearman correlation of the replica median with `log N`.
    pub fn median_trend(&self) -> Option<Spearman> {
        let (x, y): (Vec<f64>, Vec<f64>) = self
            .rows
            .iter()
            .filter_map(|r| r.median.map(|m| ((r.n as f64).ln(), m)))
            .unzip();
        (x.len() >= 3).then(|| spearman(&x, &y))
    }

    /// `|E[Z_N^2] - target|` per row, where both are known.
    pub fn second_moment_gaps(&self) -> Vec<Option<f64>> {
        self.rows
            .iter()
            .map(|r| Some((r.e_z2_exact? - r.e_z2_target?).abs()))
            .collect()
    }
}

/// Exact second moments, replicas and distances to the limit law along
/// `n_grid`. Replica `i` at length `N` uses field `(seed_N, fields, i)`
/// with `seed_N` derived from `(seed, fields, N)`.
pub fn convergence_suite(
    params: &ModelParams,
    coupling: Coupling,
    n_grid: &[usize],
    n_fields: usize,
    seed: u64,
) -> Result<ConvergenceReport> {
    params.validate()?;
    if n_grid.is_empty() {
        return Err(Error::EmptyInput);
    }
    let probe = match coupling {
        Coupling::Scaled { beta_hat } => beta_hat,
        Coupling::Power { .. } => 0.0,
    };
    let report = classify_regime(params, probe)?;
    let law = match coupling {
        Coupling::Scaled { .. } => {
            if report.beta_schedule.is_none() {
                return Err(Error::NoSchedule);
            }
            Some(limit_law(&report)?)
        }
        Coupling::Power { exponent, .. } => {
            (report.regime == Regime::DisorderIrrelevant && exponent > 0.0).then_some(LimitLaw::PointMassOne)
        }
    };
    let target = match law {
        Some(l) => Some(l.second_moment()?),
        None => None,
    };
    let mut rows = Vec::with_capacity(n_grid.len());
    for &n in n_grid {
        let p = params.with_length(n);
        p.validate()?;
        let beta_n = match (coupling, report.beta_schedule) {
            (Coupling::Scaled { .. }, Some(s)) => s.eval(n as f64),
            (Coupling::Power { c, exponent }, _) => c * (n as f64).powf(-exponent),
            (Coupling::Scaled { .. }, None) => unreachable!("checked above"),
        };
        let e_z2_exact = match second_moment_exact(&p, beta_n) {
            Ok(r) => Some(r.e_z2),
            Err(Error::BudgetExceeded { .. }) => None,
            Err(e) => return Err(e),
        };
        let (mut mean, mut second_moment, mut med, mut ks) = (None, None, None, None);
        if n_fields > 0 {
            let base = derive_seed(seed, FIELD_STREAM, n as u64);
            let z: Vec<f64> = (0..n_fields as u64)
                .into_par_iter()
                .map(|i| {
                    let f = sample_field(&p, field_seed(base, i))?;
                    let r = if p.d == 1 {
                        partition_exact_banded(&p, &f, beta_n)?
                    } else {
                        partition_exact(&p, &f, beta_n)?
                    };
                    Ok(r.log_z.exp())
                })
                .collect::<Result<_>>()?;
            let sq: Vec<f64> = z.iter().map(|v| v * v).collect();
            mean = Some(MeanEstimate::from_samples(&z));
            second_moment = Some(MeanEstimate::from_samples(&sq));
            med = Some(median(&z));
            if let Some(l @ LimitLaw::LogNormal { .. }) = law {
                ks = Some(ks_one_sample(&z, |x| l.cdf(x).unwrap_or(f64::NAN))?);
            }
        }
        rows.push(ConvergenceRow {
            n,
            beta_n,
            mean,
            second_moment,
            median: med,
            e_z2_exact,
            e_z2_target: target,
            ks,
        });
    }
    Ok(ConvergenceReport {
        params: params.clone(),
        coupling,
        regime: report.regime,
        law,
        n_fields,
        seed,
        rows,
    })
}

/// `beta_N` along a schedule, exposed for callers that build their own grids.
pub fn schedule_values(schedule: &BetaSchedule, n_grid: &[usize]) -> Vec<f64> {
    n_grid.iter().map(|&n| schedule.eval(n as f64)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::intersection::tube_half_constant;
    use crate::quadrature::integrate;
    use crate::stats::MeanEstimate;

    #[test]
    fn lognormal_samples() {
        assert!(sample_lognormal_limit(0.0, 100, 1).unwrap().iter().all(|&z| z == 1.0));
        let z = sample_lognormal_limit(0.25, 1_000_000, 2).unwrap();
        assert!(MeanEstimate::from_samples(&z).within(1.0, 4.0));
        let sq: Vec<f64> = z.iter().map(|v| v * v).collect();
        assert!(MeanEstimate::from_samples(&sq).within(0.25f64.exp(), 4.0));
        assert!((0.25f64.exp() - 1.28403).abs() < 1e-5);
        assert!(sample_lognormal_limit(-1.0, 10, 0).is_err());
        assert_eq!(sample_lognormal_limit(0.3, 50, 9).unwrap(), sample_lognormal_limit(0.3, 50, 9).unwrap());
    }

    #[test]
    fn full_space_coefficients() {
        // peel off the first time: V_k = int_0^1 (pi t)^{-1/2} V_{k-1} (1 - t)^{(k-1)/2} dt,
        // integrated after t = u^2
        let v = wiener_chaos_coefficients(WienerBranch::FullSpace, 6).unwrap();
        let mut prev = 1.0;
        for c in &v {
            let e = (c.k - 1) as f64 / 2.0;
            let next = 2.0 / PI.sqrt() * prev * integrate(|u| (1.0 - u * u).powf(e), 0.0, 1.0, 1e-13);
            assert!((c.value - next).abs() < 1e-10, "k={}: {} vs {next}", c.k, c.value);
            prev = next;
        }
        assert!((v[0].value - 2.0 / PI.sqrt()).abs() < 1e-14);
        assert_eq!(wiener_chaos_second_moment(0.0, WienerBranch::FullSpace, 5).unwrap(), 1.0);
    }

    #[test]
    fn full_space_series_matches_closed_form() {
        for b in [0.3, 0.7, 1.0, 1.3] {
            let series = wiener_chaos_second_moment(b, WienerBranch::FullSpace, 64).unwrap();
            let closed = LimitLaw::WienerChaos {
                beta_hat: b,
                branch: WienerBranch::FullSpace,
            }
            .second_moment()
            .unwrap();
            assert!((series / closed - 1.0).abs() < 1e-10, "{b}");
        }
    }

    #[test]
    fn tube_branch() {
        for r in [0.5, 1.0] {
            let v = wiener_chaos_coefficients(WienerBranch::Tube { r }, 4).unwrap();
            let full = wiener_chaos_coefficients(WienerBranch::FullSpace, 4).unwrap();
            let c = tube_half_constant(r);
            assert!((v[0].value - c).abs() < 4.0 * v[0].std_error + 1e-6, "{} vs {c}", v[0].value);
            for (t, f) in v.iter().zip(&full) {
                assert!(t.value < f.value);
            }
            for w in v.windows(2) {
                assert!(w[1].value / full[w[1].k - 1].value <= w[0].value / full[w[0].k - 1].value + 1e-9);
            }
        }
        let wide = wiener_chaos_coefficients(WienerBranch::Tube { r: 40.0 }, 3).unwrap();
        let full = wiener_chaos_coefficients(WienerBranch::FullSpace, 3).unwrap();
        for (w, f) in wide.iter().zip(&full) {
            assert!((w.value - f.value).abs() < 1e-12);
        }
        let zero = wiener_chaos_coefficients(WienerBranch::Tube { r: 0.0 }, 2).unwrap();
        assert!(zero.iter().all(|c| c.value == 0.0));
        assert!(wiener_chaos_coefficients(WienerBranch::FullSpace, 0).is_err());
        assert!(wiener_chaos_coefficients(WienerBranch::FullSpace, 65).is_err());
    }

    #[test]
    fn cone_branch_first_coefficient() {
        // P(|X_t| <= R sqrt(t)) = erf(R) for every t
        let v = wiener_chaos_coefficients(WienerBranch::Cone { r: 1.0 }, 1).unwrap();
        let expect = 2.0 / PI.sqrt() * statrs::function::erf::erf(1.0);
        assert!((v[0].value - expect).abs() < 1e-9);
    }

    #[test]
    fn ks_examples() {
        let a = [0.3, 1.2, -0.5, 2.0, 0.0];
        assert_eq!(ks_two_sample(&a, &a).unwrap().statistic, 0.0);
        let mut s = a.to_vec();
        s.sort_by(|x, y| x.total_cmp(y));
        let ecdf = |x: f64| s.iter().filter(|&&v| v <= x).count() as f64 / s.len() as f64;
        assert_eq!(ks_statistic(&a, KsReference::Cdf(&ecdf)).unwrap().statistic, 0.0);
        assert_eq!(ks_one_sample(&[], |_| 0.5), Err(Error::EmptyInput));
        assert_eq!(ks_two_sample(&a, &[]), Err(Error::EmptyInput));

        let mut rng = CounterRng::new(3);
        let x: Vec<f64> = (0..100_000).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let y: Vec<f64> = (0..100_000).map(|_| 1.0 + rng.sample::<f64, _>(StandardNormal)).collect();
        let r = ks_statistic(&x, KsReference::Samples(&y)).unwrap();
        // sup |Phi(t) - Phi(t - 1)| = 2 Phi(1/2) - 1
        let n = standard_normal();
        let bound = 2.0 * n.cdf(0.5) - 1.0;
        assert!(r.statistic > 0.3 && (r.statistic - bound).abs() < 0.01);
        assert!(r.p_value < 1e-12);
        let phi = |t: f64| n.cdf(t);
        let one = ks_one_sample(&x, phi).unwrap();
        assert!(one.p_value > 0.001 && one.statistic < 0.01);
    }

    #[test]
    fn ks_pvalue_is_uniform_under_null() {
        let n = standard_normal();
        let ps: Vec<f64> = (0..400u64)
            .map(|i| {
                let mut rng = CounterRng::new(100 + i);
                let x: Vec<f64> = (0..200).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                ks_one_sample(&x, |t| n.cdf(t)).unwrap().p_value
            })
            .collect();
        let frac = ps.iter().filter(|&&p| p < 0.05).count() as f64 / ps.len() as f64;
        assert!((0.01..0.1).contains(&frac), "{frac}");
    }

    #[test]
    fn laws_from_regimes() {
        let p = ModelParams::new(1, 0.25, 1.0, 10).unwrap();
        let r = classify_regime(&p, 0.5).unwrap();
        let l = limit_law(&r).unwrap();
        assert!(matches!(l, LimitLaw::LogNormal { sigma_sq } if (sigma_sq - (7.0f64 / 6.0).ln()).abs() < 1e-15));
        assert!((l.second_moment().unwrap() - 7.0 / 6.0).abs() < 1e-14);
        assert_eq!(l.mean(), 1.0);
        assert_eq!(limit_law(&classify_regime(&p, 1.0).unwrap()).unwrap(), LimitLaw::PointMassZero);
        let p3 = ModelParams::new(3, 1.0, 1.0, 10).unwrap();
        assert_eq!(limit_law(&classify_regime(&p3, 0.5).unwrap()).unwrap(), LimitLaw::PointMassOne);
        let p1 = ModelParams::new(1, 0.5, 1.0, 10).unwrap();
        let l = limit_law(&classify_regime(&p1, 1.0).unwrap()).unwrap();
        assert_eq!(
            l,
            LimitLaw::WienerChaos {
                beta_hat: 1.0,
                branch: WienerBranch::Tube { r: 1.0 }
            }
        );
        let ln = LimitLaw::LogNormal { sigma_sq: 0.5 };
        let med = ln.cdf((-0.25f64).exp()).unwrap();
        assert!((med - 0.5).abs() < 1e-15);
    }

    #[test]
    fn suite_marginal_trends() {
        let p = ModelParams::new(1, 0.25, 1.0, 10).unwrap();
        let rep = convergence_suite(&p, Coupling::Scaled { beta_hat: 0.5 }, &[64, 128, 256], 200, 1).unwrap();
        assert_eq!(rep.regime, Regime::MarginallyRelevant);
        for row in &rep.rows {
            let m = row.mean.unwrap();
            assert!(m.within(1.0, 4.0), "{row:?}");
            let sq = row.second_moment.unwrap();
            assert!(sq.within(row.e_z2_exact.unwrap(), 4.0), "{row:?}");
            assert!(row.ks.is_some());
        }
        let again = convergence_suite(&p, Coupling::Scaled { beta_hat: 0.5 }, &[64, 128, 256], 200, 1).unwrap();
        assert_eq!(rep, again);

        let pin = ModelParams::new(1, 0.0, 0.0, 10).unwrap();
        let hot = convergence_suite(&pin, Coupling::Scaled { beta_hat: 2.0 }, &[16, 128, 1024], 300, 2).unwrap();
        assert_eq!(hot.law, Some(LimitLaw::PointMassZero));
        let meds: Vec<f64> = hot.rows.iter().map(|r| r.median.unwrap()).collect();
        assert!(meds.windows(2).all(|w| w[1] < w[0]), "{meds:?}");
    }

    #[test]
    fn suite_irrelevant_needs_coupling() {
        let p = ModelParams::new(3, 1.0, 1.0, 10).unwrap();
        assert_eq!(
            convergence_suite(&p, Coupling::Scaled { beta_hat: 0.5 }, &[8], 0, 0),
            Err(Error::NoSchedule)
        );
        let rep = convergence_suite(&p, Coupling::Power { c: 1.0, exponent: 0.1 }, &[8, 16, 32], 0, 0).unwrap();
        assert_eq!(rep.law, Some(LimitLaw::PointMassOne));
        assert!(rep.rows.iter().all(|r| r.e_z2_exact.unwrap() > 1.0 && r.mean.is_none()));
    }
}
