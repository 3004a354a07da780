//! Polynomial chaos decomposition `Z_N = 1 + sum_k beta^k Z_{N,k}` with
//! `Z_{N,k} = sum_{n_1 < ... < n_k} sum_{x_j in region} prod_j p_{n_j - n_{j-1}}(x_j - x_{j-1}) xi_{n_j, x_j}`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::environment::rng::field_seed;
use crate::environment::{sample_field, DisorderField, ModelParams, NoiseTransform};
use crate::error::invalid;
use crate::grid::{for_each_point, BoxGrid};
use crate::intersection::relaxed_intersection_sum;
use crate::stats::MeanEstimate;
use crate::walk_kernel::WalkKernel;
use crate::{Budget, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChaosDecomposition {
    pub params: ModelParams,
    pub beta: f64,
    /// `terms[k - 1] = Z_{N,k}`.
    pub terms: Vec<f64>,
    pub field_seed: u64,
}

impl ChaosDecomposition {
    pub fn order(&self) -> usize {
        self.terms.len()
    }

    /// `Z_{N,k}` for `1 <= k <= K`.
    pub fn term(&self, k: usize) -> Option<f64> {
        k.checked_sub(1).and_then(|i| self.terms.get(i)).copied()
    }

    /// `1 + sum_{k <= K} beta^k Z_{N,k}`.
    pub fn reconstruct(&self) -> f64 {
        let mut s = 1.0;
        let mut b = 1.0;
        for z in &self.terms {
            b *= self.beta;
            s += b * z;
        }
        s
    }
}

/// `Z_{N,1}, ..., Z_{N,K}` for one field, by a sweep that carries the
/// order-`k` mass of every lattice point.
pub fn chaos_terms(params: &ModelParams, field: &DisorderField, beta: f64, k_max: usize) -> Result<ChaosDecomposition> {
    chaos_terms_with_budget(params, field, beta, k_max, Budget::default())
}

pub fn chaos_terms_with_budget(
    params: &ModelParams,
    field: &DisorderField,
    beta: f64,
    k_max: usize,
    budget: Budget,
) -> Result<ChaosDecomposition> {
    field.check_params(params)?;
    if !beta.is_finite() {
        return Err(invalid(format!("beta must be finite, got {beta}")));
    }
    if k_max == 0 || k_max > params.n {
        return Err(invalid(format!("chaos order must lie in 1..={}, got {k_max}", params.n)));
    }
    let t = NoiseTransform::new(params.law, beta);
    let d = params.d;
    let grid = BoxGrid::checked(d, params.n + 1, k_max + 2, budget, "chaos sweep")?;
    let mut mass: Vec<Vec<f64>> = (0..=k_max).map(|_| grid.zeros()).collect();
    let mut scratch = grid.zeros();
    mass[0][grid.center()] = 1.0;
    for n in 1..=params.n {
        // order k reaches layer n - 1 at most in n - 1 steps
        let top = k_max.min(n);
        for m in mass.iter_mut().take(top) {
            grid.walk_step(m, &mut scratch, n, 0..d);
            std::mem::swap(m, &mut scratch);
        }
        let layer = field.layer(n);
        layer.for_each_site(|x, w| {
            let i = grid.index(x);
            let xi = t.xi(w);
            for k in (1..=top).rev() {
                mass[k][i] += xi * mass[k - 1][i];
            }
        });
    }
    let terms = mass[1..].iter().map(|m| m.iter().sum()).collect();
    Ok(ChaosDecomposition {
        params: params.clone(),
        beta,
        terms,
        field_seed: field.seed(),
    })
}

/// `Var(Z_{N,k}) = Var(xi)^k sum_{n_1 < ... < n_k, x_j in region} prod_j p^2_{n_j - n_{j-1}}(x_j - x_{j-1})`.
pub fn chaos_term_variance_exact(params: &ModelParams, kernel: &WalkKernel, beta: f64, k: usize) -> Result<f64> {
    if k == 0 {
        return Ok(0.0);
    }
    Ok(chaos_term_variances(params, kernel, beta, k)?[k - 1])
}

/// `Var(Z_{N,k})` for `k = 1..=K`.
pub fn chaos_term_variances(params: &ModelParams, kernel: &WalkKernel, beta: f64, k_max: usize) -> Result<Vec<f64>> {
    params.validate()?;
    if kernel.dim() != params.d {
        return Err(invalid("kernel dimension does not match the model"));
    }
    if kernel.horizon() < params.n {
        return Err(Error::OutOfRange {
            n: params.n,
            horizon: kernel.horizon(),
        });
    }
    let t = NoiseTransform::new(params.law, beta);
    let mut sites: Vec<(usize, Vec<i64>)> = Vec::new();
    for n in 1..=params.n {
        for_each_point(params.d, params.reach(n) as i64, |x| {
            if params.is_site(n, x) {
                sites.push((n, x.to_vec()));
            }
        });
    }
    let sq = |m: usize, x: &[i64], y: &[i64]| -> f64 {
        let z: Vec<i64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
        kernel.prob_unchecked(m, &z).powi(2)
    };
    let origin = vec![0i64; params.d];
    let mut level: Vec<f64> = sites.iter().map(|(n, x)| sq(*n, x, &origin)).collect();
    let mut out = Vec::with_capacity(k_max);
    let mut factor = 1.0;
    for k in 1..=k_max {
        factor *= t.variance_xi;
        out.push(factor * level.iter().sum::<f64>());
        if k == k_max {
            break;
        }
        // sites are sorted by time, so earlier layers precede i
        level = (0..sites.len())
            .into_par_iter()
            .map(|i| {
                let (n, x) = &sites[i];
                sites
                    .iter()
                    .zip(&level)
                    .take_while(|((m, _), _)| m < n)
                    .filter(|(_, &a)| a != 0.0)
                    .map(|((m, y), &a)| a * sq(n - m, x, y))
                    .sum()
            })
            .collect();
    }
    Ok(out)
}

/// Empirical first moments and cross-moments of the chaos terms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrthogonalityReport {
    pub params: ModelParams,
    pub beta: f64,
    pub n_fields: usize,
    pub seed: u64,
    /// `means[k - 1]` estimates `E[Z_{N,k}]`.
    pub means: Vec<MeanEstimate>,
    /// `cross[k - 1][l - 1]` estimates `E[Z_{N,k} Z_{N,l}]`.
    pub cross: Vec<Vec<MeanEstimate>>,
    /// `Var(Z_{N,k})` computed exactly.
    pub exact_variance: Vec<f64>,
}

impl OrthogonalityReport {
    pub fn order(&self) -> usize {
        self.means.len()
    }

    /// Off-diagonal pairs `(k, l)` with `|E[Z_k Z_l]|` above `n_se` standard errors.
    pub fn off_diagonal_violations(&self, n_se: f64) -> Vec<(usize, usize)> {
        let k = self.order();
        let mut out = Vec::new();
        for i in 0..k {
            for j in i + 1..k {
                if !self.cross[i][j].within(0.0, n_se) {
                    out.push((i + 1, j + 1));
                }
            }
        }
        out
    }

    /// Orders whose empirical second moment misses the exact variance by more
    /// than `n_se` standard errors.
    pub fn diagonal_violations(&self, n_se: f64) -> Vec<usize> {
        (0..self.order())
            .filter(|&i| !self.cross[i][i].within(self.exact_variance[i], n_se))
            .map(|i| i + 1)
            .collect()
    }

    /// Orders whose empirical mean misses 0 by more than `n_se` standard errors.
    pub fn mean_violations(&self, n_se: f64) -> Vec<usize> {
        (0..self.order())
            .filter(|&i| !self.means[i].within(0.0, n_se))
            .map(|i| i + 1)
            .collect()
    }
}

/// Estimates `E[Z_{N,k}]` and `E[Z_{N,k} Z_{N,l}]` for `k, l <= K` over
/// `n_fields` independent fields; field `i` is drawn from `(seed, fields, i)`.
pub fn orthogonality_check(
    params: &ModelParams,
    beta: f64,
    n_fields: usize,
    k_max: usize,
    seed: u64,
) -> Result<OrthogonalityReport> {
    if n_fields < 2 {
        return Err(invalid("orthogonality needs at least two fields"));
    }
    let samples: Vec<Vec<f64>> = (0..n_fields as u64)
        .into_par_iter()
        .map(|i| {
            let field = sample_field(params, field_seed(seed, i))?;
            Ok(chaos_terms(params, &field, beta, k_max)?.terms)
        })
        .collect::<Result<_>>()?;
    let column = |f: &dyn Fn(&[f64]) -> f64| -> MeanEstimate {
        let xs: Vec<f64> = samples.iter().map(|s| f(s)).collect();
        MeanEstimate::from_samples(&xs)
    };
    let means = (0..k_max).map(|k| column(&|s| s[k])).collect();
    let cross = (0..k_max)
        .map(|k| (0..k_max).map(|l| column(&|s| s[k] * s[l])).collect())
        .collect();
    let kernel = crate::walk_kernel::build_kernel(params.d, params.n)?;
    let exact_variance = chaos_term_variances(params, &kernel, beta, k_max)?;
    Ok(OrthogonalityReport {
        params: params.clone(),
        beta,
        n_fields,
        seed,
        means,
        cross,
        exact_variance,
    })
}

/// Bound on the truncation error `sum_{k > K} beta^{2k} Var(Z_{N,k})`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncationBound {
    pub k: usize,
    pub beta: f64,
    /// `hat I_N`: the collision sum over the doubled ball.
    pub relaxed_intersection: f64,
    /// `q = beta^2 Var(xi) hat I_N`, the per-order factor.
    pub ratio: f64,
    /// `q^{K+1} / (1 - q)`; infinite when vacuous.
    pub bound: f64,
    pub vacuous: bool,
}

/// `Var(Z_{N,k}) <= (Var(xi) hat I_N)^k`, summed geometrically past `K`.
pub fn truncation_bound(params: &ModelParams, beta: f64, k: usize) -> Result<TruncationBound> {
    params.validate()?;
    if !beta.is_finite() {
        return Err(invalid(format!("beta must be finite, got {beta}")));
    }
    let relaxed_intersection = relaxed_intersection_sum(params)?;
    let t = NoiseTransform::new(params.law, beta);
    let ratio = t.collision_factor() * relaxed_intersection;
    let (bound, vacuous) = if beta == 0.0 {
        (0.0, false)
    } else if ratio >= 1.0 {
        (f64::INFINITY, true)
    } else {
        (ratio.powi(k as i32 + 1) / (1.0 - ratio), false)
    };
    Ok(TruncationBound {
        k,
        beta,
        relaxed_intersection,
        ratio,
        bound,
        vacuous,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{DisorderLaw, Geometry};
    use crate::intersection::{beta_schedule, intersection_exact, intersection_sum};
    use crate::partition::partition_exact;
    use crate::walk_kernel::build_kernel;

    fn params(d: usize, a: f64, r: f64, n: usize) -> ModelParams {
        ModelParams::new(d, a, r, n).unwrap()
    }

    #[test]
    fn reconstruction_is_exact() {
        for law in [DisorderLaw::Gaussian, DisorderLaw::Rademacher] {
            for (d, n) in [(1, 10), (1, 7), (2, 5)] {
                for geometry in [Geometry::Tube, Geometry::Cone] {
                    let p = params(d, 0.5, 1.0, n).with_law(law).with_geometry(geometry);
                    for s in 0..20 {
                        let f = sample_field(&p, s).unwrap();
                        for beta in [0.1, 0.7] {
                            let c = chaos_terms(&p, &f, beta, n).unwrap();
                            let z = partition_exact(&p, &f, beta).unwrap().z.unwrap();
                            assert!((c.reconstruct() / z - 1.0).abs() < 1e-10, "{p} seed {s}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn first_order_by_direct_sum() {
        let p = params(1, 0.5, 2.0, 12);
        let k = build_kernel(1, 12).unwrap();
        let f = sample_field(&p, 3).unwrap();
        let t = NoiseTransform::new(p.law, 0.4);
        let mut direct = 0.0;
        f.for_each_site(|n, x, w| direct += k.prob(n, x).unwrap() * t.xi(w));
        let c = chaos_terms(&p, &f, 0.4, 3).unwrap();
        assert!((c.term(1).unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn centred_field_has_no_chaos() {
        let p = params(1, 1.0, 1.0, 8);
        let beta = 0.6;
        let lam = p.law.log_mgf(beta);
        let f = DisorderField::from_fn(&p, 0, |_, _| lam / beta).unwrap();
        let c = chaos_terms(&p, &f, beta, 8).unwrap();
        assert!(c.terms.iter().all(|z| z.abs() < 1e-15));
        assert!((c.reconstruct() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn order_bounds() {
        let p = params(1, 1.0, 1.0, 4);
        let f = sample_field(&p, 0).unwrap();
        assert!(chaos_terms(&p, &f, 0.5, 0).is_err());
        assert!(chaos_terms(&p, &f, 0.5, 5).is_err());
        let c = chaos_terms(&p, &f, 0.5, 2).unwrap();
        assert_eq!(c.term(0), None);
        assert_eq!(c.term(3), None);
    }

    #[test]
    fn first_variance_is_intersection() {
        let k = build_kernel(1, 40).unwrap();
        for (a, r) in [(0.0, 0.0), (0.25, 1.0), (0.5, 1.0), (1.0, 1.0)] {
            let p = params(1, a, r, 40);
            let t = NoiseTransform::new(p.law, 0.3);
            let v = chaos_term_variance_exact(&p, &k, 0.3, 1).unwrap();
            let i = intersection_exact(&k, &p, 40).unwrap();
            assert!((v - t.variance_xi * i).abs() < 1e-14);
        }
    }

    #[test]
    fn second_variance_by_pairs() {
        let n = 24;
        let k = build_kernel(1, n).unwrap();
        let p = params(1, 0.5, 1.0, n);
        let beta = 0.5;
        let t = NoiseTransform::new(p.law, beta);
        let mut sites = Vec::new();
        for m in 1..=n {
            for x in -(m as i64)..=m as i64 {
                if p.is_site(m, &[x]) {
                    sites.push((m, x));
                }
            }
        }
        let mut brute = 0.0;
        for &(m1, x1) in &sites {
            for &(m2, x2) in &sites {
                if m2 > m1 {
                    brute += (k.prob(m1, &[x1]).unwrap() * k.prob(m2 - m1, &[x2 - x1]).unwrap()).powi(2);
                }
            }
        }
        brute *= t.variance_xi.powi(2);
        let v = chaos_term_variance_exact(&p, &k, beta, 2).unwrap();
        assert!((v - brute).abs() < 1e-12 * brute);
    }

    #[test]
    fn variances_match_sampling() {
        let n = 64;
        let p = params(1, 0.5, 1.0, n);
        let k = build_kernel(1, n).unwrap();
        let beta = 0.5;
        let exact = chaos_term_variances(&p, &k, beta, 3).unwrap();
        let terms: Vec<Vec<f64>> = (0..5000u64)
            .into_par_iter()
            .map(|i| chaos_terms(&p, &sample_field(&p, field_seed(11, i)).unwrap(), beta, 3).unwrap().terms)
            .collect();
        for j in 0..3 {
            let sq: Vec<f64> = terms.iter().map(|t| t[j] * t[j]).collect();
            let est = MeanEstimate::from_samples(&sq);
            assert!(est.within(exact[j], 4.0), "k={}: {:?} vs {}", j + 1, est, exact[j]);
            let m: Vec<f64> = terms.iter().map(|t| t[j]).collect();
            assert!(MeanEstimate::from_samples(&m).within(0.0, 4.0));
        }
    }

    #[test]
    fn orthogonal_at_two_couplings() {
        let p = params(1, 0.5, 1.0, 16);
        for beta in [0.3, 0.8] {
            let r = orthogonality_check(&p, beta, 2000, 3, 5).unwrap();
            assert!(r.off_diagonal_violations(4.0).is_empty(), "beta {beta}");
            assert!(r.diagonal_violations(4.0).is_empty(), "beta {beta}");
            assert!(r.mean_violations(4.0).is_empty(), "beta {beta}");
        }
    }

    #[test]
    fn variances_respect_relaxed_bound() {
        for (a, r) in [(0.0, 1.0), (0.25, 1.0), (0.5, 2.0), (1.0, 1.0)] {
            for n in [8, 16, 32] {
                let p = params(1, a, r, n);
                let k = build_kernel(1, n).unwrap();
                let t = NoiseTransform::new(p.law, 0.5);
                let relaxed = relaxed_intersection_sum(&p).unwrap();
                for (j, v) in chaos_term_variances(&p, &k, 0.5, 4).unwrap().iter().enumerate() {
                    assert!(*v <= (t.variance_xi * relaxed).powi(j as i32 + 1) * (1.0 + 1e-12));
                }
            }
        }
    }

    #[test]
    fn truncation_examples() {
        let p = params(1, 0.25, 1.0, 64);
        let b = truncation_bound(&p, 0.0, 10).unwrap();
        assert_eq!(b.bound, 0.0);
        assert!(!b.vacuous);
        let b = truncation_bound(&p, 5.0, 10).unwrap();
        assert!(b.vacuous && b.bound.is_infinite());

        // pinning cell R = 0: the doubled ball is still the origin
        let beta_hat: f64 = 0.5;
        let k = 10;
        let n = 1usize << 12;
        let p = params(1, 0.0, 0.0, n);
        let beta = beta_schedule(&p, beta_hat).unwrap().eval(n as f64);
        let b = truncation_bound(&p, beta, k).unwrap();
        let target = 2.0 * beta_hat.powi(2 * k as i32) / (1.0 - beta_hat * beta_hat);
        assert!(b.bound <= target, "{} vs {target}", b.bound);
    }

    #[test]
    fn relevant_ratio_stays_bounded() {
        let mut ratios = Vec::new();
        for e in 8..=14 {
            let n = 1usize << e;
            let p = params(1, 1.0, 1.0, n);
            let beta = beta_schedule(&p, 1.0).unwrap().eval(n as f64);
            let b = truncation_bound(&p, beta, 4).unwrap();
            ratios.push(b.ratio);
        }
        let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = ratios.iter().cloned().fold(0.0, f64::max);
        assert!(hi / lo < 1.1, "{ratios:?}");
        let i = intersection_sum(&params(1, 1.0, 1.0, 1 << 14)).unwrap();
        assert!(i > 0.0);
    }
}
