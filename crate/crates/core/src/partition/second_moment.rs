//! Exact `E[Z_N^2]` with the disorder integrated out.
//!
//! For two independent walks `S, S'` every shared in-region site contributes
//! the factor `1 + c`, `c = exp(lambda(2 beta) - 2 lambda(beta)) - 1`, so
//! `E[Z_N^2] = E[prod_n (1 + c 1{S_n = S'_n, (n, S_n) in region})]`.
//! Three exact evaluations are provided:
//!
//! * pair sweep over the joint state `(S_n, S'_n)`;
//! * collision sum over in-region sites: with `A(n, x)` the weight of
//!   expansions whose last collision is at `(n, x)`,
//!   `A(n, x) = c (p_n(x)^2 + sum_{m < n, y} A(m, y) p_{n-m}(x - y)^2)` and
//!   `E[Z_N^2] = 1 + sum A`;
//! * renewal recursion when the region holds every reachable site:
//!   `b_n = c (u_n + sum_{m < n} b_m u_{n-m})`, `u_n = p_{2n}(0)`.

use serde::{Deserialize, Serialize};

use crate::environment::{ModelParams, NoiseTransform};
use crate::error::invalid;
use crate::grid::{for_each_point, BoxGrid};
use crate::walk_kernel::{planar_probability, return_probabilities, OneDimRows};
use crate::{Budget, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SecondMomentRoute {
    PairDp,
    CollisionDp,
    Renewal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SecondMomentResult {
    pub e_z2: f64,
    pub params: ModelParams,
    pub beta: f64,
    pub route: SecondMomentRoute,
}

pub fn second_moment_exact(params: &ModelParams, beta: f64) -> Result<SecondMomentResult> {
    second_moment_exact_with_budget(params, beta, Budget::default())
}

/// Picks the cheapest exact route that fits the budget.
pub fn second_moment_exact_with_budget(
    params: &ModelParams,
    beta: f64,
    budget: Budget,
) -> Result<SecondMomentResult> {
    params.validate()?;
    if params.covers_cone() {
        return second_moment_renewal(params, beta);
    }
    let pair_bytes = BoxGrid::bytes(2 * params.d, params.n + 1, 2);
    let pair_ops = (params.n as f64) * (2.0 * params.n as f64 + 3.0).powi(2 * params.d as i32);
    let (col_bytes, col_ops) = collision_cost(params);
    let pair_ok = pair_bytes <= budget.bytes() as u128;
    let col_ok = col_bytes <= budget.bytes() as u128;
    if col_ok && (!pair_ok || col_ops < pair_ops) {
        second_moment_collision(params, beta, budget)
    } else {
        second_moment_pair_dp(params, beta, budget)
    }
}

fn result(params: &ModelParams, beta: f64, route: SecondMomentRoute, e_z2: f64) -> SecondMomentResult {
    SecondMomentResult {
        e_z2,
        params: params.clone(),
        beta,
        route,
    }
}

fn collision_factor(params: &ModelParams, beta: f64) -> Result<f64> {
    if !beta.is_finite() {
        return Err(invalid(format!("beta must be finite, got {beta}")));
    }
    Ok(NoiseTransform::new(params.law, beta).collision_factor())
}

/// Sweep over the joint position of two walks in `Z^{2d}`.
pub fn second_moment_pair_dp(params: &ModelParams, beta: f64, budget: Budget) -> Result<SecondMomentResult> {
    params.validate()?;
    let c = collision_factor(params, beta)?;
    let route = SecondMomentRoute::PairDp;
    if c == 0.0 {
        return Ok(result(params, beta, route, 1.0));
    }
    let d = params.d;
    let grid = BoxGrid::checked(2 * d, params.n + 1, 2, budget, "pair sweep")?;
    let mut cur = grid.zeros();
    let mut tmp = grid.zeros();
    cur[grid.center()] = 1.0;
    let mut pair = vec![0i64; 2 * d];
    for n in 1..=params.n {
        grid.walk_step(&cur, &mut tmp, n, 0..d);
        grid.walk_step(&tmp, &mut cur, n, d..2 * d);
        for_each_point(d, params.reach(n) as i64, |x| {
            if params.is_site(n, x) {
                pair[..d].copy_from_slice(x);
                pair[d..].copy_from_slice(x);
                cur[grid.index(&pair)] *= 1.0 + c;
            }
        });
    }
    Ok(result(params, beta, route, cur.iter().sum()))
}

/// Largest region coordinate over all times.
fn max_reach(params: &ModelParams) -> usize {
    (1..=params.n).map(|n| params.reach(n)).max().unwrap_or(0)
}

fn collision_cost(params: &ModelParams) -> (u128, f64) {
    let w = 2 * max_reach(params);
    let side = (2 * w + 1) as u128;
    let table = (params.n as u128 + 1) * side.saturating_pow(params.d as u32) * 8;
    let sites = params.site_count();
    let grid = if params.d >= 3 {
        BoxGrid::bytes(params.d, params.n + 1, 2)
    } else {
        0
    };
    let bytes = table.saturating_add(sites * 16).saturating_add(grid);
    (bytes, 0.5 * (sites as f64).powi(2))
}

/// `p_k(z)^2` for `0 <= k <= N`, `|z|_inf <= w`, flattened per time.
fn squared_window(d: usize, n_max: usize, w: usize, budget: Budget) -> Result<Vec<f64>> {
    let side = 2 * w + 1;
    let cells = side.pow(d as u32);
    let mut table = vec![0.0; (n_max + 1) * cells];
    match d {
        1 => {
            let mut rows = OneDimRows::new(w);
            for k in 0..=n_max {
                for (dst, p) in table[k * cells..(k + 1) * cells].iter_mut().zip(rows.row()) {
                    *dst = p * p;
                }
                rows.advance();
            }
        }
        2 => {
            let mut rows = OneDimRows::new(2 * w);
            for k in 0..=n_max {
                let dst = &mut table[k * cells..(k + 1) * cells];
                let mut i = 0;
                for_each_point(2, w as i64, |z| {
                    let p = planar_probability(&rows, z[0], z[1]);
                    dst[i] = p * p;
                    i += 1;
                });
                rows.advance();
            }
        }
        _ => {
            let grid = BoxGrid::checked(d, n_max + 1, 2, budget, "collision window sweep")?;
            let mut cur = grid.zeros();
            let mut next = grid.zeros();
            cur[grid.center()] = 1.0;
            for k in 0..=n_max {
                if k > 0 {
                    grid.walk_step(&cur, &mut next, k, 0..d);
                    std::mem::swap(&mut cur, &mut next);
                }
                let dst = &mut table[k * cells..(k + 1) * cells];
                let mut i = 0;
                for_each_point(d, w as i64, |z| {
                    let inside = z.iter().all(|c| c.unsigned_abs() as usize <= n_max);
                    let p = if inside { cur[grid.index(z)] } else { 0.0 };
                    dst[i] = p * p;
                    i += 1;
                });
            }
        }
    }
    Ok(table)
}

/// Last-collision decomposition over the in-region sites.
pub fn second_moment_collision(params: &ModelParams, beta: f64, budget: Budget) -> Result<SecondMomentResult> {
    params.validate()?;
    let c = collision_factor(params, beta)?;
    let route = SecondMomentRoute::CollisionDp;
    if c == 0.0 {
        return Ok(result(params, beta, route, 1.0));
    }
    let (bytes, _) = collision_cost(params);
    budget.check("collision sum", bytes)?;
    let d = params.d;
    let n_max = params.n;
    let w = 2 * max_reach(params);
    let side = 2 * w + 1;
    let cells = side.pow(d as u32);
    let table = squared_window(d, n_max, w, budget)?;
    let flat = |x: &[i64]| -> usize { x.iter().fold(0i64, |acc, &v| acc * side as i64 + v + w as i64) as usize };
    let center = flat(&vec![0; d]);

    // window indices of the sites of each layer
    let mut sites: Vec<Vec<usize>> = Vec::with_capacity(n_max + 1);
    sites.push(Vec::new());
    for n in 1..=n_max {
        let mut layer = Vec::new();
        for_each_point(d, params.reach(n) as i64, |x| {
            if params.is_site(n, x) {
                layer.push(flat(x));
            }
        });
        sites.push(layer);
    }
    let mut weights: Vec<Vec<f64>> = vec![Vec::new(); n_max + 1];
    let mut total = 0.0;
    for n in 1..=n_max {
        let own = &table[n * cells..(n + 1) * cells];
        let mut layer_w = Vec::with_capacity(sites[n].len());
        for &ix in &sites[n] {
            let mut acc = own[ix];
            for m in 1..n {
                let row = &table[(n - m) * cells..(n - m + 1) * cells];
                let base = ix + center;
                for (&iy, &a) in sites[m].iter().zip(&weights[m]) {
                    acc += a * row[base - iy];
                }
            }
            layer_w.push(c * acc);
        }
        total += layer_w.iter().sum::<f64>();
        weights[n] = layer_w;
    }
    Ok(result(params, beta, route, 1.0 + total))
}

/// Renewal recursion on collision times; exact only when the region
/// contains every reachable site up to time `N`.
pub fn second_moment_renewal(params: &ModelParams, beta: f64) -> Result<SecondMomentResult> {
    params.validate()?;
    if !params.covers_cone() {
        return Err(Error::NotApplicable(format!(
            "renewal route needs the region to contain the light cone ({params})"
        )));
    }
    let c = collision_factor(params, beta)?;
    let u = return_probabilities(params.d, params.n)?;
    let mut b = vec![0.0; params.n + 1];
    for n in 1..=params.n {
        let mut acc = u[n];
        for m in 1..n {
            acc += b[m] * u[n - m];
        }
        b[n] = c * acc;
    }
    Ok(result(params, beta, SecondMomentRoute::Renewal, 1.0 + b.iter().sum::<f64>()))
}
