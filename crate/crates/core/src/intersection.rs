//! Expected in-region collision count of two independent walks,
//! `I_N = sum_{n=1}^{N} sum_{x in region(n)} p_n(x)^2`,
//! its leading-order asymptotics, and the coupling schedules and regime
//! classification that follow from it.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;
use std::sync::{Mutex, OnceLock};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::erf::erf;

use crate::environment::{Geometry, ModelParams};
use crate::error::invalid;
use crate::grid::{for_each_point, BoxGrid};
use crate::quadrature::integrate;
use crate::walk_kernel::{planar_probability, return_probabilities, OneDimRows, WalkKernel};
use crate::{Budget, Error, Result};

const REGION_TOL: f64 = 1e-12;

/// Exact `I_N` from a kernel table, with `N = upto` in the region radius.
pub fn intersection_exact(kernel: &WalkKernel, params: &ModelParams, upto: usize) -> Result<f64> {
    if upto == 0 {
        return Ok(0.0);
    }
    if kernel.dim() != params.d {
        return Err(invalid(format!(
            "kernel dimension {} does not match d = {}",
            kernel.dim(),
            params.d
        )));
    }
    if kernel.horizon() < upto {
        return Err(Error::OutOfRange {
            n: upto,
            horizon: kernel.horizon(),
        });
    }
    let p = params.with_length(upto);
    let mut total = 0.0;
    for n in 1..=upto {
        kernel.for_each_orbit(n, |x, prob, mult| {
            if p.in_region(n, x) {
                total += mult * prob * prob;
            }
        })?;
    }
    Ok(total)
}

/// Radius of the ball at time `n`, or `None` when it holds every site the
/// walk can reach by then.
fn ball(params: &ModelParams, n: usize) -> Option<f64> {
    let t = params.threshold(n) * (1.0 + REGION_TOL);
    if t >= n as f64 {
        None
    } else {
        Some(t)
    }
}

/// `s_n = sum_{|x| <= rho_n} p_n(x)^2` for `n = 1..=n_max`, where `rho_n =
/// None` stands for the whole lattice (then `s_n = p_{2n}(0)`).
fn collision_masses(
    d: usize,
    n_max: usize,
    radius: impl Fn(usize) -> Option<f64>,
    budget: Budget,
) -> Result<Vec<f64>> {
    let radii: Vec<Option<f64>> = (0..=n_max).map(|n| if n == 0 { None } else { radius(n) }).collect();
    let reach = |r: f64| r.floor() as i64;
    let width = radii.iter().flatten().map(|&r| reach(r)).max().unwrap_or(0).max(0) as usize;
    let mut out = vec![0.0; n_max + 1];
    if d > 2 && radii.iter().all(|r| r.is_none()) {
        let u = return_probabilities(d, n_max)?;
        out[1..].copy_from_slice(&u[1..]);
        return Ok(out);
    }
    match d {
        1 => {
            budget.check("collision rows", (2 * width as u128 + 1) * 8)?;
            let mut rows = OneDimRows::new(width);
            for n in 1..=n_max {
                rows.advance();
                out[n] = match radii[n] {
                    None => rows.collision_probability(),
                    Some(r) => {
                        let k = reach(r);
                        (-k..=k).map(|x| rows.get(x).powi(2)).sum()
                    }
                };
            }
        }
        2 => {
            budget.check("collision rows", (4 * width as u128 + 1) * 8)?;
            let mut rows = OneDimRows::new(2 * width);
            for n in 1..=n_max {
                rows.advance();
                out[n] = match radii[n] {
                    None => rows.collision_probability().powi(2),
                    Some(r) => {
                        let k = reach(r);
                        let r2 = r * r;
                        let mut s = 0.0;
                        for x in -k..=k {
                            for y in -k..=k {
                                if ((x * x + y * y) as f64) <= r2 {
                                    s += planar_probability(&rows, x, y).powi(2);
                                }
                            }
                        }
                        s
                    }
                };
            }
        }
        _ => {
            let grid = BoxGrid::checked(d, n_max + 1, 2, budget, "collision sweep")?;
            let mut cur = grid.zeros();
            let mut next = grid.zeros();
            cur[grid.center()] = 1.0;
            for n in 1..=n_max {
                grid.walk_step(&cur, &mut next, n, 0..d);
                std::mem::swap(&mut cur, &mut next);
                let (k, r2) = match radii[n] {
                    None => (n as i64, f64::INFINITY),
                    Some(r) => (reach(r).min(n as i64), r * r),
                };
                let mut s = 0.0;
                for_each_point(d, k, |x| {
                    let sq: i64 = x.iter().map(|c| c * c).sum();
                    if sq as f64 <= r2 {
                        s += cur[grid.index(x)].powi(2);
                    }
                });
                out[n] = s;
            }
        }
    }
    Ok(out)
}

/// Exact `I_N` for `N = params.n`, streamed layer by layer.
pub fn intersection_sum(params: &ModelParams) -> Result<f64> {
    intersection_sum_with_budget(params, Budget::default())
}

pub fn intersection_sum_with_budget(params: &ModelParams, budget: Budget) -> Result<f64> {
    Ok(intersection_series(params, budget)?.iter().sum())
}

/// The summands `s_n`, `n = 0..=N` (with `s_0 = 0`), of `I_N` for `N = params.n`.
pub fn intersection_series(params: &ModelParams, budget: Budget) -> Result<Vec<f64>> {
    params.validate()?;
    collision_masses(params.d, params.n, |n| ball(params, n), budget)
}

/// `I_N` with the ball doubled to `B(2 R N^a)` at every time: the relaxed
/// sum that bounds the variance of every chaos order.
pub fn relaxed_intersection_sum(params: &ModelParams) -> Result<f64> {
    let p = params.with_radius(2.0 * params.r).with_geometry(Geometry::Tube);
    intersection_sum(&p)
}

/// Leading-order behaviour of `I_N` as `N -> infinity`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Asymptotic {
    /// `c sqrt(N)`.
    SqrtN { c: f64 },
    /// `c N^a log N`.
    PowerLog { c: f64, a: f64 },
    /// `c log N`.
    Log { c: f64 },
    /// `c N^a`.
    Power { c: f64, a: f64 },
    /// Convergent: `I_N -> value`, with `tail` the estimated contribution of
    /// the terms beyond the exactly summed part.
    Constant { value: f64, tail: f64 },
}

impl Asymptotic {
    pub fn eval(&self, n: f64) -> f64 {
        match *self {
            Asymptotic::SqrtN { c } => c * n.sqrt(),
            Asymptotic::PowerLog { c, a } => c * n.powf(a) * n.ln(),
            Asymptotic::Log { c } => c * n.ln(),
            Asymptotic::Power { c, a } => c * n.powf(a),
            Asymptotic::Constant { value, .. } => value,
        }
    }

    /// The prefactor of the leading term.
    pub fn constant(&self) -> f64 {
        match *self {
            Asymptotic::SqrtN { c }
            | Asymptotic::PowerLog { c, .. }
            | Asymptotic::Log { c }
            | Asymptotic::Power { c, .. } => c,
            Asymptotic::Constant { value, .. } => value,
        }
    }
}

impl fmt::Display for Asymptotic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Asymptotic::SqrtN { c } => write!(f, "{c:.6}*sqrt(N)"),
            Asymptotic::PowerLog { c, a } => write!(f, "{c:.6}*N^{a}*log(N)"),
            Asymptotic::Log { c } => write!(f, "{c:.6}*log(N)"),
            Asymptotic::Power { c, a } => write!(f, "{c:.6}*N^{a}"),
            Asymptotic::Constant { value, .. } => write!(f, "{value:.6}"),
        }
    }
}

/// The exponent `a`, with `R = 0` read as `a = 0` (the region is the origin).
fn effective_a(params: &ModelParams) -> f64 {
    if params.r == 0.0 {
        0.0
    } else {
        params.a
    }
}

/// `C_{1,1/2,R} = (1/pi) int_0^1 t^{-1/2} int_{|x| <= R/sqrt(t)} e^{-x^2} dx dt
/// = (2/sqrt(pi)) int_0^1 erf(R/u) du` after `t = u^2`.
pub fn tube_half_constant(r: f64) -> f64 {
    if r <= 0.0 {
        return 0.0;
    }
    let f = |u: f64| if u <= 0.0 { 1.0 } else { erf(r / u) };
    2.0 / PI.sqrt() * integrate(f, 0.0, 1.0, 1e-10)
}

/// Leading term of `I_N` for the tube.
pub fn intersection_asymptotic(params: &ModelParams) -> Result<Asymptotic> {
    params.validate()?;
    if params.geometry == Geometry::Cone {
        return cone_asymptotic(params);
    }
    let a = effective_a(params);
    let r = params.r;
    Ok(match params.d {
        1 if a > 0.5 => Asymptotic::SqrtN { c: 2.0 / PI.sqrt() },
        1 if a == 0.5 => Asymptotic::SqrtN {
            c: tube_half_constant(r),
        },
        1 if a > 0.0 => Asymptotic::PowerLog {
            c: 2.0 * (1.0 - 2.0 * a) * r / PI,
            a,
        },
        1 => Asymptotic::Log {
            c: (2.0 * r.floor() + 1.0) / PI,
        },
        2 if a > 0.0 => Asymptotic::Log {
            c: (2.0 * a).min(1.0) / PI,
        },
        d => {
            let (value, tail) = if a == 0.0 {
                fixed_ball_constant(d, r)?
            } else {
                full_space_constant(d)?
            };
            Asymptotic::Constant { value, tail }
        }
    })
}

/// Leading term of `I_N` for the cone `|x| <= R n^a`.
pub fn cone_asymptotic(params: &ModelParams) -> Result<Asymptotic> {
    params.validate()?;
    if params.geometry != Geometry::Cone {
        return Err(invalid("cone asymptotics need cone geometry"));
    }
    let a = effective_a(params);
    let r = params.r;
    Ok(match params.d {
        1 if a > 0.5 => Asymptotic::SqrtN { c: 2.0 / PI.sqrt() },
        1 if a == 0.5 => Asymptotic::SqrtN {
            c: 2.0 / PI.sqrt() * erf(r),
        },
        1 if a > 0.0 => Asymptotic::Power {
            c: 2.0 * r / (a * PI),
            a,
        },
        1 => Asymptotic::Log {
            c: (2.0 * r.floor() + 1.0) / PI,
        },
        2 if a > 0.5 => Asymptotic::Log { c: 1.0 / PI },
        2 if a == 0.5 => Asymptotic::Log {
            c: (1.0 - (-2.0 * r * r).exp()) / PI,
        },
        d => {
            let (value, tail) = if a == 0.0 {
                fixed_ball_constant(d, r)?
            } else if a >= 0.5 {
                full_space_constant(d)?
            } else {
                cone_constant(d, a, r)?
            };
            Asymptotic::Constant { value, tail }
        }
    })
}

/// `I_N` predicted at `N = params.n`.
pub fn intersection_prediction(params: &ModelParams) -> Result<f64> {
    let asym = match params.geometry {
        Geometry::Tube => intersection_asymptotic(params)?,
        Geometry::Cone => cone_asymptotic(params)?,
    };
    Ok(asym.eval(params.n as f64))
}

type ConstantKey = (usize, u8, u64, u64);

fn cached(key: ConstantKey, f: impl FnOnce() -> Result<(f64, f64)>) -> Result<(f64, f64)> {
    static CACHE: OnceLock<Mutex<HashMap<ConstantKey, (f64, f64)>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    if let Some(&v) = cache.lock().expect("constant cache poisoned").get(&key) {
        return Ok(v);
    }
    let v = f()?;
    cache.lock().expect("constant cache poisoned").insert(key, v);
    Ok(v)
}

/// Exactly summed terms for the convergent constants.
fn exact_terms(d: usize) -> usize {
    match d {
        0..=2 => 20_000,
        3 => 1_000,
        _ => 400,
    }
}

/// Sweep length for fixed small balls, where the full walk must be propagated.
fn sweep_terms(d: usize) -> usize {
    match d {
        0..=2 => 20_000,
        3 => 40,
        4 => 16,
        _ => 10,
    }
}

/// `int_{m + 1/2}^inf s(t) dt` for a power-law-decaying summand.
fn tail_integral(s: impl Fn(f64) -> f64, m: usize) -> f64 {
    let lo = (m as f64 + 0.5).ln();
    let hi = lo + 14.0;
    let body = integrate(|u| s(u.exp()) * u.exp(), lo, hi, 1e-14);
    // power-law remainder past e^hi
    let t = hi.exp();
    let (s1, s2) = (s(t), s(t / 2.0));
    let p = (s2 / s1).log2();
    let rest = if s1 > 0.0 && p > 1.0 { s1 * t / (p - 1.0) } else { 0.0 };
    body + rest
}

/// `sum_{n >= 1} p_{2n}(0)`.
fn full_space_constant(d: usize) -> Result<(f64, f64)> {
    cached((d, 0, 0, 0), || {
        let m = exact_terms(d);
        let u = return_probabilities(d, m)?;
        let head: f64 = u[1..].iter().sum();
        let df = d as f64;
        let tail = tail_integral(|t| 2.0 * (df / (4.0 * PI * t)).powf(df / 2.0), m);
        Ok((head + tail, tail))
    })
}

/// `sum_{n >= 1} sum_{|x| <= R} p_n(x)^2`.
fn fixed_ball_constant(d: usize, r: f64) -> Result<(f64, f64)> {
    cached((d, 1, r.to_bits(), 0), || {
        let (head, m) = if r < 1.0 {
            // the ball is the origin: s_{2n} = p_{2n}(0)^2
            let m = exact_terms(d);
            let u = return_probabilities(d, m)?;
            (u[1..].iter().map(|v| v * v).sum::<f64>(), 2 * m)
        } else {
            let m = sweep_terms(d);
            let s = collision_masses(d, m, |n| if r >= n as f64 { None } else { Some(r) }, Budget::default())?;
            (s.iter().sum(), m)
        };
        // lattice counts and second moments of the ball, split by parity
        let (mut k, mut q) = ([0.0f64; 2], [0.0f64; 2]);
        for_each_point(d, r.floor() as i64, |x| {
            let sq: i64 = x.iter().map(|c| c * c).sum();
            if (sq as f64) <= r * r {
                let par = (x.iter().map(|c| c.abs()).sum::<i64>() % 2) as usize;
                k[par] += 1.0;
                q[par] += sq as f64;
            }
        });
        let df = d as f64;
        // p_n(x)^2 ~ 4 (d / 2 pi n)^d (1 - d |x|^2 / n) on the matching parity
        let kbar = 0.5 * (k[0] + k[1]);
        let qbar = 0.5 * (q[0] + q[1]);
        let tail = tail_integral(|t| 4.0 * (df / (2.0 * PI * t)).powf(df) * (kbar - df * qbar / t), m);
        Ok((head + tail, tail))
    })
}

/// `sum_{n >= 1} sum_{|x| <= R n^a} p_n(x)^2` for `0 < a < 1/2`, `d >= 2`.
fn cone_constant(d: usize, a: f64, r: f64) -> Result<(f64, f64)> {
    cached((d, 2, r.to_bits(), a.to_bits()), || {
        let m = sweep_terms(d);
        let radius = |n: usize| {
            let t = r * (n as f64).powf(a) * (1.0 + REGION_TOL);
            if t >= n as f64 {
                None
            } else {
                Some(t)
            }
        };
        let s = collision_masses(d, m, radius, Budget::default())?;
        let head: f64 = s.iter().sum();
        let df = d as f64;
        let chi = ChiSquared::new(df).map_err(|e| invalid(e.to_string()))?;
        // Gaussian collision mass inside the ball of radius rho
        let tail = tail_integral(
            |t| {
                let rho = r * t.powf(a);
                2.0 * (df / (4.0 * PI * t)).powf(df / 2.0) * chi.cdf(2.0 * df * rho * rho / t)
            },
            m,
        );
        Ok((head + tail, tail))
    })
}

/// The three regimes of the weak coupling limit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    DisorderRelevant,
    MarginallyRelevant,
    DisorderIrrelevant,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::DisorderRelevant => "relevant",
            Regime::MarginallyRelevant => "marginal",
            Regime::DisorderIrrelevant => "irrelevant",
        })
    }
}

/// The marginal cells and their schedules.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "case", rename_all = "kebab-case")]
pub enum MarginalCase {
    /// `d = 1`, `a = 0` or `R = 0`: `beta_hat sqrt(pi / ((2 floor(R) + 1) log N))`.
    Pinning { r: f64 },
    /// `d = 1`, `0 < a < 1/2`: `beta_hat sqrt(pi / (2 (1 - 2a) R N^a log N))`.
    Tube { a: f64, r: f64 },
    /// `d = 2`, `0 < a <= 1`: `beta_hat sqrt(pi / ((2a ^ 1) log N))`.
    Planar { a: f64 },
    /// Cone, `d = 2`, `a >= 1/2`: `beta_hat / sqrt(c log N)`.
    ConePlanar { c: f64 },
}

/// `N -> beta_N`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "schedule", rename_all = "kebab-case")]
pub enum BetaSchedule {
    /// `beta_hat N^{-1/4}`.
    Relevant { beta_hat: f64 },
    Marginal { beta_hat: f64, case: MarginalCase },
}

impl BetaSchedule {
    pub fn beta_hat(&self) -> f64 {
        match *self {
            BetaSchedule::Relevant { beta_hat } | BetaSchedule::Marginal { beta_hat, .. } => beta_hat,
        }
    }

    /// `beta_N`; `N` is real so that formal values such as `e^100` can be used.
    pub fn eval(&self, n: f64) -> f64 {
        match *self {
            BetaSchedule::Relevant { beta_hat } => beta_hat * n.powf(-0.25),
            BetaSchedule::Marginal { beta_hat, case } => {
                if beta_hat == 0.0 {
                    return 0.0;
                }
                let l = n.ln();
                let denom = match case {
                    MarginalCase::Pinning { r } => (2.0 * r.floor() + 1.0) * l / PI,
                    MarginalCase::Tube { a, r } => 2.0 * (1.0 - 2.0 * a) * r * n.powf(a) * l / PI,
                    MarginalCase::Planar { a } => (2.0 * a).min(1.0) * l / PI,
                    MarginalCase::ConePlanar { c } => c * l,
                };
                beta_hat / denom.sqrt()
            }
        }
    }

    /// `beta_hat / sqrt(I_N)` for a given value of `I_N`: the schedule
    /// written through the collision count it normalizes.
    pub fn from_intersection(beta_hat: f64, i_n: f64) -> f64 {
        beta_hat / i_n.sqrt()
    }
}

/// Schedule for the regime of `params` at coupling `beta_hat`.
pub fn beta_schedule(params: &ModelParams, beta_hat: f64) -> Result<BetaSchedule> {
    classify_regime(params, beta_hat)?
        .beta_schedule
        .ok_or(Error::NoSchedule)
}

/// `sigma^2` of the log-normal limit in the marginal cells of the tube.
pub fn sigma_squared(d: usize, a: f64, beta_hat: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&beta_hat) {
        return Err(invalid(format!(
            "sigma^2 needs 0 <= beta_hat < 1, got {beta_hat}"
        )));
    }
    let b2 = beta_hat * beta_hat;
    match d {
        1 if (0.0..0.5).contains(&a) => Ok(((1.0 - 2.0 * a * b2) / (1.0 - b2)).ln()),
        2 if a > 0.0 && a <= 1.0 => Ok(-(-b2).ln_1p()),
        _ => Err(invalid(format!("(d = {d}, a = {a}) is not a marginal cell"))),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeReport {
    pub params: ModelParams,
    pub regime: Regime,
    pub beta_hat: f64,
    /// Absent in the irrelevant regime.
    pub beta_schedule: Option<BetaSchedule>,
    /// Present in the marginal cells with a known variance and `beta_hat < 1`.
    pub sigma_sq: Option<f64>,
    pub i_n_prediction: Asymptotic,
}

/// Regime, schedule, `sigma^2` and `I_N` asymptotics of `params`.
///
/// A positive exponent with `R = 0` is the same model as `a = 0`. For the
/// cone, the cell `d = 1, 0 < a < 1/2, R > 0` has no known phase and is
/// rejected.
pub fn classify_regime(params: &ModelParams, beta_hat: f64) -> Result<RegimeReport> {
    params.validate()?;
    if !beta_hat.is_finite() || beta_hat < 0.0 {
        return Err(invalid(format!("beta_hat must be finite and >= 0, got {beta_hat}")));
    }
    let a = effective_a(params);
    let r = params.r;
    let d = params.d;
    let (regime, case) = match params.geometry {
        Geometry::Tube => match d {
            1 if a >= 0.5 => (Regime::DisorderRelevant, None),
            1 if a > 0.0 => (Regime::MarginallyRelevant, Some(MarginalCase::Tube { a, r })),
            1 => (Regime::MarginallyRelevant, Some(MarginalCase::Pinning { r })),
            2 if a > 0.0 => (Regime::MarginallyRelevant, Some(MarginalCase::Planar { a })),
            _ => (Regime::DisorderIrrelevant, None),
        },
        Geometry::Cone => match d {
            1 if a >= 0.5 => (Regime::DisorderRelevant, None),
            1 if a > 0.0 => {
                return Err(Error::NotApplicable(format!(
                    "the phase of the cone with d = 1, a = {a} in (0, 1/2) is not determined"
                )))
            }
            1 => (Regime::MarginallyRelevant, Some(MarginalCase::Pinning { r })),
            2 if a >= 0.5 => {
                let c = cone_asymptotic(params)?.constant();
                (Regime::MarginallyRelevant, Some(MarginalCase::ConePlanar { c }))
            }
            _ => (Regime::DisorderIrrelevant, None),
        },
    };
    let beta_schedule = match (regime, case) {
        (Regime::DisorderRelevant, _) => Some(BetaSchedule::Relevant { beta_hat }),
        (Regime::MarginallyRelevant, Some(case)) => Some(BetaSchedule::Marginal { beta_hat, case }),
        _ => None,
    };
    let sigma_sq = match case {
        Some(MarginalCase::ConePlanar { .. }) | None => None,
        Some(_) if beta_hat < 1.0 => Some(sigma_squared(d, a, beta_hat)?),
        Some(_) => None,
    };
    let i_n_prediction = match params.geometry {
        Geometry::Tube => intersection_asymptotic(params)?,
        Geometry::Cone => cone_asymptotic(params)?,
    };
    Ok(RegimeReport {
        params: params.clone(),
        regime,
        beta_hat,
        beta_schedule,
        sigma_sq,
        i_n_prediction,
    })
}
