//! Partition functions of the tube polymer and their moments.
//!
//! `Z_N = E[exp(sum_{n <= N} (beta omega_{n,S_n} - lambda(beta)) 1{(n, S_n) in region})]`.
//! The walk itself is never constrained, so every transfer-matrix sweep runs
//! over the whole reachable box `|x|_inf <= n`.

mod second_moment;

pub use second_moment::{
    second_moment_collision, second_moment_exact, second_moment_exact_with_budget,
    second_moment_pair_dp, second_moment_renewal, SecondMomentResult, SecondMomentRoute,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::environment::rng::{field_seed, CounterRng, PATH_STREAM};
use crate::environment::{sample_field, DisorderField, ModelParams, NoiseTransform, SiteLayer};
use crate::error::invalid;
use crate::grid::{for_each_point, BoxGrid};
use crate::stats::MeanEstimate;
use crate::walk_kernel::sample_path_with;
use crate::{Budget, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionResult {
    pub log_z: f64,
    /// `exp(log_z)` when it is a finite `f64`.
    pub z: Option<f64>,
    pub params: ModelParams,
    pub beta: f64,
    pub seed: u64,
    /// Present for Monte Carlo estimates.
    pub std_error: Option<f64>,
}

impl PartitionResult {
    fn exact(log_z: f64, params: &ModelParams, beta: f64, seed: u64) -> Self {
        let z = log_z.exp();
        PartitionResult {
            log_z,
            z: z.is_finite().then_some(z),
            params: params.clone(),
            beta,
            seed,
            std_error: None,
        }
    }
}

/// Exact `Z_N` for one disorder field.
pub fn partition_exact(params: &ModelParams, field: &DisorderField, beta: f64) -> Result<PartitionResult> {
    partition_exact_with_budget(params, field, beta, Budget::default())
}

pub fn partition_exact_with_budget(
    params: &ModelParams,
    field: &DisorderField,
    beta: f64,
    budget: Budget,
) -> Result<PartitionResult> {
    field.check_params(params)?;
    check_beta(beta)?;
    if beta == 0.0 {
        return Ok(PartitionResult::exact(0.0, params, 0.0, field.seed()));
    }
    let log_z = transfer(params, field, beta, budget, true)?;
    Ok(PartitionResult::exact(log_z, params, beta, field.seed()))
}

/// The same sweep without rescaling; overflows to `inf` for large
/// `beta sum omega`.
pub fn partition_exact_linear(params: &ModelParams, field: &DisorderField, beta: f64) -> Result<f64> {
    field.check_params(params)?;
    check_beta(beta)?;
    if beta == 0.0 {
        return Ok(1.0);
    }
    Ok(transfer(params, field, beta, Budget::default(), false)?.exp())
}

fn check_beta(beta: f64) -> Result<()> {
    if beta.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("beta must be finite, got {beta}")))
    }
}

/// Binary exponent of a positive finite value.
#[inline]
fn exponent2(v: f64) -> i64 {
    ((v.to_bits() >> 52) & 0x7ff) as i64 - 1023
}

/// Per-layer update `f(x) <- f(x) exp(h(x))`, where `h` is the site exponent
/// `beta omega - lambda` on sites and 0 elsewhere. With `rescale`, a common
/// factor `2^m` chosen from the exponents of the updated values is divided
/// out first, so neither underflow nor overflow can occur; the returned
/// value is `m ln 2`.
struct LayerUpdate {
    rescale: bool,
    shift: i64,
}

impl LayerUpdate {
    fn begin(rescale: bool) -> Self {
        LayerUpdate {
            rescale,
            shift: i64::MIN,
        }
    }

    #[inline]
    fn observe(&mut self, f: f64, h: f64) {
        if self.rescale && f > 0.0 {
            let e = exponent2(f) + (h * std::f64::consts::LOG2_E).floor() as i64;
            self.shift = self.shift.max(e);
        }
    }

    /// Skips the rescaling while the largest value stays within `2^{+-slack}`.
    fn settle(&mut self, slack: i64) {
        if self.shift != i64::MIN && self.shift.abs() <= slack {
            self.shift = i64::MIN;
        }
    }

    fn shift(&self) -> i64 {
        if self.rescale && self.shift != i64::MIN {
            self.shift
        } else {
            0
        }
    }

    fn log_factor(&self) -> f64 {
        self.shift() as f64 * std::f64::consts::LN_2
    }

    #[inline]
    fn apply(&self, f: f64, h: f64) -> f64 {
        let m = self.shift();
        if m == 0 {
            f * h.exp()
        } else {
            f * (h - m as f64 * std::f64::consts::LN_2).exp()
        }
    }
}

const RESCALE_SLACK: i64 = 256;

/// `next[i] = (cur[i - 1] + cur[i + 1]) / 2` on `a..b`; returns the largest new value.
#[inline]
fn diffuse(cur: &[f64], next: &mut [f64], a: usize, b: usize) -> f64 {
    if a >= b {
        return 0.0;
    }
    let mut m = 0.0f64;
    for (d, w) in next[a..b].iter_mut().zip(cur[a - 1..b + 1].windows(3)) {
        *d = 0.5 * (w[0] + w[2]);
        m = m.max(*d);
    }
    m
}

/// `f 2^{-m}` without underflowing the factor.
#[inline]
fn scale2(f: f64, m: i64) -> f64 {
    if m == 0 {
        f
    } else if m.abs() < 1000 {
        f * (-(m as f64)).exp2()
    } else {
        f * (-(m / 2) as f64).exp2() * (-(m - m / 2) as f64).exp2()
    }
}

/// Returns `log Z_N`.
fn transfer(params: &ModelParams, field: &DisorderField, beta: f64, budget: Budget, rescale: bool) -> Result<f64> {
    let t = NoiseTransform::new(params.law, beta);
    if params.d == 1 {
        return transfer_line(params, field, &t, params.n, budget, rescale);
    }
    let d = params.d;
    let n_max = params.n;
    let grid = BoxGrid::checked(d, n_max + 1, 2, budget, "partition sweep")?;
    let mut cur = grid.zeros();
    let mut next = grid.zeros();
    cur[grid.center()] = 1.0;
    let mut log_scale = 0.0;
    let exponent = |layer: &SiteLayer, x: &[i64]| -> f64 {
        match layer.get(x) {
            Some(w) => beta * w - t.lambda_beta,
            None => 0.0,
        }
    };
    for n in 1..=n_max {
        grid.walk_step(&cur, &mut next, n, 0..d);
        std::mem::swap(&mut cur, &mut next);
        let layer = field.layer(n);
        let mut upd = LayerUpdate::begin(rescale);
        if rescale {
            for_each_point(d, n as i64, |x| upd.observe(cur[grid.index(x)], exponent(layer, x)));
        }
        for_each_point(d, n as i64, |x| {
            let i = grid.index(x);
            if cur[i] != 0.0 {
                cur[i] = upd.apply(cur[i], exponent(layer, x));
            }
        });
        log_scale += upd.log_factor();
    }
    let total: f64 = cur.iter().sum();
    Ok(total.ln() + log_scale)
}

/// `d = 1` sweep over `|x| <= width`; mass reaching `width + 1` is dropped.
fn transfer_line(
    params: &ModelParams,
    field: &DisorderField,
    t: &NoiseTransform,
    width: usize,
    budget: Budget,
    rescale: bool,
) -> Result<f64> {
    let n_max = params.n;
    let half = width.min(n_max) + 1;
    budget.check("partition sweep", (2 * (2 * half + 1) * 8) as u128)?;
    let mut cur = vec![0.0; 2 * half + 1];
    let mut next = cur.clone();
    cur[half] = 1.0;
    let mut log_scale = 0.0;
    for n in 1..=n_max {
        let span = n.min(half - 1);
        let (lo, hi) = (half - span, half + span);
        let layer = field.layer(n);
        let vals = layer.values();
        let start = half - layer.reach();
        let end = start + vals.len();
        let mut free = diffuse(&cur, &mut next, lo, start).max(diffuse(&cur, &mut next, end, hi + 1));
        diffuse(&cur, &mut next, start, end);
        std::mem::swap(&mut cur, &mut next);
        let exponent = |w: f64| t.beta * w - t.lambda_beta;
        let mut upd = LayerUpdate::begin(rescale);
        if rescale {
            for (&w, &f) in vals.iter().zip(&cur[start..end]) {
                if w.is_nan() {
                    free = free.max(f);
                } else {
                    upd.observe(f, exponent(w));
                }
            }
            upd.observe(free, 0.0);
            upd.settle(RESCALE_SLACK);
        }
        let m = upd.shift();
        if m != 0 {
            for i in (lo..start).chain(end..=hi) {
                cur[i] = scale2(cur[i], m);
            }
        }
        for (&w, f) in vals.iter().zip(&mut cur[start..end]) {
            if w.is_nan() {
                *f = scale2(*f, m);
            } else if *f != 0.0 {
                *f = upd.apply(*f, exponent(w));
            }
        }
        log_scale += upd.log_factor();
    }
    let total: f64 = cur.iter().sum();
    Ok(total.ln() + log_scale)
}

/// Exact `Z_N` in `d = 1` with the sweep cut to the band `|x| <= R N^a +
/// 12 sqrt(N)`. A walk leaves that band before time `N` with probability
/// below `4 exp(-72)`, far under the rounding error of the full sweep.
pub fn partition_exact_banded(params: &ModelParams, field: &DisorderField, beta: f64) -> Result<PartitionResult> {
    field.check_params(params)?;
    check_beta(beta)?;
    if params.d != 1 {
        return Err(invalid("the banded sweep is one-dimensional"));
    }
    if beta == 0.0 {
        return Ok(PartitionResult::exact(0.0, params, 0.0, field.seed()));
    }
    let width = params.reach(params.n) + (12.0 * (params.n as f64).sqrt()).ceil() as usize;
    let t = NoiseTransform::new(params.law, beta);
    let log_z = transfer_line(params, field, &t, width, Budget::default(), true)?;
    Ok(PartitionResult::exact(log_z, params, beta, field.seed()))
}

/// Monte Carlo estimate of `Z_N` for a fixed field by sampling walk paths.
/// Path `i` uses the stream `(seed, paths, i)`.
pub fn partition_mc(
    params: &ModelParams,
    field: &DisorderField,
    beta: f64,
    n_paths: usize,
    seed: u64,
) -> Result<PartitionResult> {
    field.check_params(params)?;
    check_beta(beta)?;
    if n_paths == 0 {
        return Err(invalid("n_paths must be at least 1"));
    }
    let t = NoiseTransform::new(params.law, beta);
    let weights: Vec<f64> = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = CounterRng::for_stream(seed, PATH_STREAM, i);
            let path = sample_path_with(params.d, params.n, &mut rng);
            let mut h = 0.0;
            for (n, x) in path.iter().enumerate().skip(1) {
                if let Some(w) = field.get(n, x.coords()) {
                    h += beta * w - t.lambda_beta;
                }
            }
            h.exp()
        })
        .collect();
    let est = MeanEstimate::from_samples(&weights);
    Ok(PartitionResult {
        log_z: est.mean.ln(),
        z: Some(est.mean),
        params: params.clone(),
        beta,
        seed,
        std_error: Some(est.std_error),
    })
}

/// Exact `Z_N` over `n_fields` independent fields; replica `i` uses the
/// field seed derived from `(seed, i)`.
pub fn replicas(params: &ModelParams, beta: f64, n_fields: usize, seed: u64) -> Result<Vec<f64>> {
    (0..n_fields as u64)
        .into_par_iter()
        .map(|i| {
            let field = sample_field(params, field_seed(seed, i))?;
            Ok(partition_exact(params, &field, beta)?.log_z.exp())
        })
        .collect()
}

/// Sample mean of exact `Z_N` over independent fields; consistent with
/// `E[Z_N] = 1`.
pub fn annealed_mean(params: &ModelParams, beta: f64, n_fields: usize, seed: u64) -> Result<MeanEstimate> {
    if n_fields == 0 {
        return Err(invalid("n_fields must be at least 1"));
    }
    Ok(MeanEstimate::from_samples(&replicas(params, beta, n_fields, seed)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FractionalPoint {
    pub beta: f64,
    pub mean: f64,
    pub std_error: f64,
    /// Standard error of `mean - previous mean`, from the paired
    /// per-field differences; 0 for the first grid point.
    pub diff_std_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FractionalCurve {
    pub theta: f64,
    pub n_fields: usize,
    pub points: Vec<FractionalPoint>,
}

impl FractionalCurve {
    /// Every increment along the grid is at most `k` paired standard errors.
    pub fn is_non_increasing(&self, k: f64) -> bool {
        self.points
            .windows(2)
            .all(|w| w[1].mean - w[0].mean <= k * w[1].diff_std_error)
    }
}

/// `E[Z_N^theta]` along `beta_grid`, reusing the same fields at every beta.
pub fn fractional_moment_curve(
    params: &ModelParams,
    theta: f64,
    beta_grid: &[f64],
    n_fields: usize,
    seed: u64,
) -> Result<FractionalCurve> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(invalid(format!("theta = {theta} not in (0, 1)")));
    }
    if n_fields < 2 {
        return Err(invalid("need at least two fields for standard errors"));
    }
    if beta_grid.is_empty() {
        return Err(invalid("empty beta grid"));
    }
    let rows: Vec<Vec<f64>> = (0..n_fields as u64)
        .into_par_iter()
        .map(|i| {
            let field = sample_field(params, field_seed(seed, i))?;
            beta_grid
                .iter()
                .map(|&b| Ok((theta * partition_exact(params, &field, b)?.log_z).exp()))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let column = |j: usize| rows.iter().map(|r| r[j]).collect::<Vec<f64>>();
    let mut points = Vec::with_capacity(beta_grid.len());
    for (j, &beta) in beta_grid.iter().enumerate() {
        let est = MeanEstimate::from_samples(&column(j));
        let diff_std_error = if j == 0 {
            0.0
        } else {
            let diffs: Vec<f64> = rows.iter().map(|r| r[j] - r[j - 1]).collect();
            MeanEstimate::from_samples(&diffs).std_error
        };
        points.push(FractionalPoint {
            beta,
            mean: est.mean,
            std_error: est.std_error,
            diff_std_error,
        });
    }
    Ok(FractionalCurve {
        theta,
        n_fields,
        points,
    })
}
