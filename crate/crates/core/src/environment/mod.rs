//! Model parameters, tube and cone geometry, and seeded disorder fields.

pub mod rng;

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::invalid;
use crate::grid::for_each_point;
use crate::walk_kernel::LatticePoint;
use crate::{Budget, Error, Result};
use rng::{site_seed, CounterRng};

/// Relative slack when comparing `|x|` with a real threshold.
const REGION_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Geometry {
    /// Disorder on `|x| <= R N^a` at every time.
    #[default]
    Tube,
    /// Disorder on `|x| <= R n^a` at time `n`.
    Cone,
}

impl FromStr for Geometry {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "tube" => Ok(Geometry::Tube),
            "cone" => Ok(Geometry::Cone),
            other => Err(invalid(format!("unknown geometry `{other}`"))),
        }
    }
}

impl fmt::Display for Geometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Geometry::Tube => "tube",
            Geometry::Cone => "cone",
        })
    }
}

/// Law of a single disorder variable; both have mean 0 and variance 1.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DisorderLaw {
    #[default]
    Gaussian,
    /// Fair `+-1` coin.
    Rademacher,
}

impl FromStr for DisorderLaw {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Ok(DisorderLaw::Gaussian),
            "rademacher" => Ok(DisorderLaw::Rademacher),
            other => Err(invalid(format!("unsupported disorder law `{other}`"))),
        }
    }
}

impl fmt::Display for DisorderLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DisorderLaw::Gaussian => "gaussian",
            DisorderLaw::Rademacher => "rademacher",
        })
    }
}

impl DisorderLaw {
    /// `lambda(beta) = log E[exp(beta omega)]`.
    pub fn log_mgf(self, beta: f64) -> f64 {
        match self {
            DisorderLaw::Gaussian => 0.5 * beta * beta,
            DisorderLaw::Rademacher => {
                // log cosh, accurate near 0 and free of overflow
                let b = beta.abs();
                if b < 1.0 {
                    (2.0 * (0.5 * b).sinh().powi(2)).ln_1p()
                } else {
                    b + (-2.0 * b).exp().ln_1p() - std::f64::consts::LN_2
                }
            }
        }
    }

    pub fn sample<R: RngCore + ?Sized>(self, rng: &mut R) -> f64 {
        match self {
            DisorderLaw::Gaussian => StandardNormal.sample(rng),
            DisorderLaw::Rademacher => {
                if rng.next_u64() >> 63 == 0 {
                    -1.0
                } else {
                    1.0
                }
            }
        }
    }
}

pub fn log_mgf(law: DisorderLaw, beta: f64) -> Result<f64> {
    if !beta.is_finite() {
        return Err(invalid(format!("beta must be finite, got {beta}")));
    }
    Ok(law.log_mgf(beta))
}

/// One tube (or cone) polymer instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub d: usize,
    pub a: f64,
    #[serde(rename = "R", alias = "r")]
    pub r: f64,
    #[serde(rename = "N", alias = "n")]
    pub n: usize,
    #[serde(default)]
    pub law: DisorderLaw,
    #[serde(default)]
    pub geometry: Geometry,
}

impl ModelParams {
    pub fn new(d: usize, a: f64, r: f64, n: usize) -> Result<Self> {
        let p = ModelParams {
            d,
            a,
            r,
            n,
            law: DisorderLaw::Gaussian,
            geometry: Geometry::Tube,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_law(mut self, law: DisorderLaw) -> Self {
        self.law = law;
        self
    }

    pub fn with_geometry(mut self, geometry: Geometry) -> Self {
        self.geometry = geometry;
        self
    }

    /// Same instance at another length.
    pub fn with_length(&self, n: usize) -> Self {
        ModelParams { n, ..self.clone() }
    }

    pub fn with_radius(&self, r: f64) -> Self {
        ModelParams { r, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(invalid("dimension d must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.a) {
            return Err(invalid(format!("tube exponent a = {} not in [0, 1]", self.a)));
        }
        if !self.r.is_finite() || self.r < 0.0 {
            return Err(invalid(format!("radius R = {} must be finite and >= 0", self.r)));
        }
        if self.n == 0 {
            return Err(invalid("polymer length N must be at least 1"));
        }
        Ok(())
    }

    /// Radius of the region at time `n`.
    pub fn threshold(&self, n: usize) -> f64 {
        let base = match self.geometry {
            Geometry::Tube => self.n,
            Geometry::Cone => n,
        };
        self.r * (base as f64).powf(self.a)
    }

    /// Largest coordinate a reachable in-region site can have at time `n`.
    pub fn reach(&self, n: usize) -> usize {
        let t = (self.threshold(n) * (1.0 + REGION_TOL)).floor();
        if t >= n as f64 {
            n
        } else {
            t as usize
        }
    }

    /// Whether the region contains every reachable site up to time `N`.
    pub fn covers_cone(&self) -> bool {
        (1..=self.n).all(|m| self.threshold(m) * (1.0 + REGION_TOL) >= m as f64)
    }

    /// `|x| <= threshold(n)` for `1 <= n <= N`.
    pub fn in_region(&self, n: usize, x: &[i64]) -> bool {
        if n == 0 || n > self.n {
            return false;
        }
        let t = self.threshold(n) * (1.0 + REGION_TOL);
        let sq: i64 = x.iter().map(|c| c * c).sum();
        (sq as f64).sqrt() <= t
    }

    /// In-region and reachable by the walk at time `n`.
    pub fn is_site(&self, n: usize, x: &[i64]) -> bool {
        let l1: i64 = x.iter().map(|c| c.abs()).sum();
        l1 <= n as i64 && (l1 + n as i64) % 2 == 0 && self.in_region(n, x)
    }

    /// Number of in-region reachable time-space sites.
    pub fn site_count(&self) -> u128 {
        let mut total = 0u128;
        for n in 1..=self.n {
            let r = self.reach(n) as i64;
            if self.d == 1 {
                total += (0..=r).filter(|x| (x + n as i64) % 2 == 0).map(|x| if x == 0 { 1 } else { 2 }).sum::<u128>();
            } else {
                let mut c = 0u128;
                for_each_point(self.d, r, |x| {
                    if self.is_site(n, x) {
                        c += 1;
                    }
                });
                total += c;
            }
        }
        total
    }

    fn layer_bytes(&self) -> u128 {
        (1..=self.n)
            .map(|n| ((2 * self.reach(n) + 1) as u128).saturating_pow(self.d as u32) * 8)
            .sum()
    }
}

impl fmt::Display for ModelParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "d={} a={} R={} N={} {} {}",
            self.d, self.a, self.r, self.n, self.law, self.geometry
        )
    }
}

pub fn region_membership(params: &ModelParams, n: usize, x: &LatticePoint) -> bool {
    params.in_region(n, x.coords())
}

/// Values on the sites of one time layer, stored densely over the box
/// `[-reach, reach]^d`; entries that are not sites hold NaN.
#[derive(Clone, Debug)]
pub struct SiteLayer {
    d: usize,
    reach: usize,
    values: Vec<f64>,
}

/// Bitwise equality, so that the NaN placeholders compare equal.
impl PartialEq for SiteLayer {
    fn eq(&self, other: &Self) -> bool {
        self.d == other.d
            && self.reach == other.reach
            && self.values.len() == other.values.len()
            && self.values.iter().zip(&other.values).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl SiteLayer {
    pub fn reach(&self) -> usize {
        self.reach
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn index(&self, x: &[i64]) -> Option<usize> {
        let r = self.reach as i64;
        let side = 2 * r + 1;
        let mut idx = 0i64;
        for &c in x {
            if c.abs() > r {
                return None;
            }
            idx = idx * side + c + r;
        }
        Some(idx as usize)
    }

    pub fn get(&self, x: &[i64]) -> Option<f64> {
        self.index(x)
            .map(|i| self.values[i])
            .filter(|v| !v.is_nan())
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> SiteLayer {
        SiteLayer {
            d: self.d,
            reach: self.reach,
            values: self.values.iter().map(|&v| if v.is_nan() { v } else { f(v) }).collect(),
        }
    }

    pub(crate) fn for_each_site(&self, mut f: impl FnMut(&[i64], f64)) {
        let mut i = 0;
        for_each_point(self.d, self.reach as i64, |x| {
            let v = self.values[i];
            i += 1;
            if !v.is_nan() {
                f(x, v);
            }
        });
    }
}

fn build_layers(
    params: &ModelParams,
    budget: Budget,
    f: impl Fn(usize, &[i64]) -> f64 + Sync,
) -> Result<Vec<SiteLayer>> {
    params.validate()?;
    budget.check("disorder field", params.layer_bytes())?;
    Ok((1..=params.n)
        .into_par_iter()
        .map(|n| {
            let reach = params.reach(n);
            let mut values = Vec::with_capacity((2 * reach + 1).pow(params.d as u32));
            for_each_point(params.d, reach as i64, |x| {
                values.push(if params.is_site(n, x) { f(n, x) } else { f64::NAN });
            });
            SiteLayer {
                d: params.d,
                reach,
                values,
            }
        })
        .collect())
}

/// A realization of the disorder `omega_{n,x}` on the in-region sites.
#[derive(Clone, Debug, PartialEq)]
pub struct DisorderField {
    params: ModelParams,
    seed: u64,
    layers: Vec<SiteLayer>,
}

/// Draws the field with the default memory budget.
///
/// The value at `(n, x)` depends only on `(seed, n, x)`, so fields of
/// different lengths or radii built from one seed agree on shared sites.
pub fn sample_field(params: &ModelParams, seed: u64) -> Result<DisorderField> {
    sample_field_with_budget(params, seed, Budget::default())
}

pub fn sample_field_with_budget(
    params: &ModelParams,
    seed: u64,
    budget: Budget,
) -> Result<DisorderField> {
    let law = params.law;
    let layers = build_layers(params, budget, |n, x| {
        law.sample(&mut CounterRng::new(site_seed(seed, n, x)))
    })?;
    Ok(DisorderField {
        params: params.clone(),
        seed,
        layers,
    })
}

impl DisorderField {
    /// A field with prescribed values `f(n, x)`.
    pub fn from_fn(
        params: &ModelParams,
        seed: u64,
        f: impl Fn(usize, &[i64]) -> f64 + Sync,
    ) -> Result<Self> {
        Ok(DisorderField {
            params: params.clone(),
            seed,
            layers: build_layers(params, Budget::default(), f)?,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Layer of time `n`, `1 <= n <= N`.
    pub fn layer(&self, n: usize) -> &SiteLayer {
        &self.layers[n - 1]
    }

    pub fn get(&self, n: usize, x: &[i64]) -> Option<f64> {
        if n == 0 || n > self.params.n || x.len() != self.params.d {
            return None;
        }
        self.layer(n).get(x)
    }

    pub fn for_each_site(&self, mut f: impl FnMut(usize, &[i64], f64)) {
        for (i, layer) in self.layers.iter().enumerate() {
            layer.for_each_site(|x, v| f(i + 1, x, v));
        }
    }

    /// All site values in time-major order.
    pub fn values(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.for_each_site(|_, _, v| out.push(v));
        out
    }

    pub fn check_params(&self, params: &ModelParams) -> Result<()> {
        if &self.params != params {
            return Err(Error::Mismatch(format!(
                "field built for {} used with {}",
                self.params, params
            )));
        }
        Ok(())
    }

    /// Writes `n,x_1,..,x_d,omega` rows.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["n".to_string()];
        header.extend((1..=self.params.d).map(|i| format!("x_{i}")));
        header.push("omega".into());
        out.write_record(&header)?;
        let mut err = None;
        self.for_each_site(|n, x, v| {
            if err.is_some() {
                return;
            }
            let mut rec = vec![n.to_string()];
            rec.extend(x.iter().map(|c| c.to_string()));
            rec.push(format!("{v:e}"));
            if let Err(e) = out.write_record(&rec) {
                err = Some(e);
            }
        });
        if let Some(e) = err {
            return Err(e.into());
        }
        out.flush()?;
        Ok(())
    }

    /// Reads a field written by [`DisorderField::write_csv`]; every site of
    /// `params` must appear exactly once.
    pub fn read_csv<R: Read>(params: &ModelParams, seed: u64, r: R) -> Result<Self> {
        params.validate()?;
        let mut layers = build_layers(params, Budget::default(), |_, _| f64::NAN)?;
        let mut reader = csv::Reader::from_reader(r);
        let d = params.d;
        for rec in reader.records() {
            let rec = rec?;
            if rec.len() != d + 2 {
                return Err(Error::Mismatch(format!(
                    "expected {} columns, found {}",
                    d + 2,
                    rec.len()
                )));
            }
            let parse_err = |s: &str| Error::Mismatch(format!("bad field entry `{s}`"));
            let n: usize = rec[0].parse().map_err(|_| parse_err(&rec[0]))?;
            let x: Vec<i64> = (1..=d)
                .map(|i| rec[i].parse().map_err(|_| parse_err(&rec[i])))
                .collect::<Result<_>>()?;
            let v: f64 = rec[d + 1].parse().map_err(|_| parse_err(&rec[d + 1]))?;
            if !params.is_site(n, &x) {
                return Err(Error::Mismatch(format!("({n}, {x:?}) is not a site")));
            }
            let layer = &mut layers[n - 1];
            let i = layer.index(&x).expect("sites lie inside the layer box");
            if !layer.values[i].is_nan() {
                return Err(Error::Mismatch(format!("duplicate site ({n}, {x:?})")));
            }
            layer.values[i] = v;
        }
        let field = DisorderField {
            params: params.clone(),
            seed,
            layers,
        };
        let mut missing = None;
        for n in 1..=params.n {
            for_each_point(d, params.reach(n) as i64, |x| {
                if missing.is_none() && params.is_site(n, x) && field.get(n, x).is_none() {
                    missing = Some((n, x.to_vec()));
                }
            });
        }
        if let Some((n, x)) = missing {
            return Err(Error::Mismatch(format!("site ({n}, {x:?}) missing")));
        }
        Ok(field)
    }
}

/// The centred multiplicative noise `xi = (exp(beta omega - lambda) - 1) / beta`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseTransform {
    pub law: DisorderLaw,
    pub beta: f64,
    pub lambda_beta: f64,
    /// `Var(xi) = (exp(lambda(2 beta) - 2 lambda(beta)) - 1) / beta^2`, and 1 at `beta = 0`.
    pub variance_xi: f64,
}

impl NoiseTransform {
    pub fn new(law: DisorderLaw, beta: f64) -> Self {
        let lambda_beta = law.log_mgf(beta);
        let variance_xi = if beta == 0.0 {
            1.0
        } else {
            (law.log_mgf(2.0 * beta) - 2.0 * lambda_beta).exp_m1() / (beta * beta)
        };
        NoiseTransform {
            law,
            beta,
            lambda_beta,
            variance_xi,
        }
    }

    /// `exp(lambda(2 beta) - 2 lambda(beta)) - 1`: the factor one shared
    /// in-region site contributes to the second moment.
    pub fn collision_factor(&self) -> f64 {
        self.variance_xi * self.beta * self.beta
    }

    /// `exp(beta omega - lambda(beta))`.
    #[inline]
    pub fn weight(&self, omega: f64) -> f64 {
        (self.beta * omega - self.lambda_beta).exp()
    }

    #[inline]
    pub fn xi(&self, omega: f64) -> f64 {
        if self.beta == 0.0 {
            omega
        } else {
            (self.beta * omega - self.lambda_beta).exp_m1() / self.beta
        }
    }
}

/// The field `xi_{n,x}` derived from a disorder field at fixed `beta`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseField {
    transform: NoiseTransform,
    params: ModelParams,
    seed: u64,
    layers: Vec<SiteLayer>,
}

pub fn xi_transform(field: &DisorderField, beta: f64) -> Result<NoiseField> {
    if beta == 0.0 {
        return Err(Error::ZeroBeta);
    }
    if !beta.is_finite() {
        return Err(invalid(format!("beta must be finite, got {beta}")));
    }
    let transform = NoiseTransform::new(field.params.law, beta);
    Ok(NoiseField {
        transform,
        params: field.params.clone(),
        seed: field.seed,
        layers: field.layers.iter().map(|l| l.map(|w| transform.xi(w))).collect(),
    })
}

impl NoiseField {
    pub fn transform(&self) -> &NoiseTransform {
        &self.transform
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn layer(&self, n: usize) -> &SiteLayer {
        &self.layers[n - 1]
    }

    pub fn get(&self, n: usize, x: &[i64]) -> Option<f64> {
        if n == 0 || n > self.params.n || x.len() != self.params.d {
            return None;
        }
        self.layer(n).get(x)
    }

    pub fn for_each_site(&self, mut f: impl FnMut(usize, &[i64], f64)) {
        for (i, layer) in self.layers.iter().enumerate() {
            layer.for_each_site(|x, v| f(i + 1, x, v));
        }
    }

    pub fn values(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.for_each_site(|_, _, v| out.push(v));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::MeanEstimate;

    fn tube(d: usize, a: f64, r: f64, n: usize) -> ModelParams {
        ModelParams::new(d, a, r, n).unwrap()
    }

    #[test]
    fn tube_membership_uses_real_threshold() {
        let p = tube(1, 0.5, 1.0, 100);
        assert!(p.in_region(5, &[10]));
        assert!(p.in_region(5, &[-10]));
        assert!(!p.in_region(5, &[11]));
        let z = tube(2, 0.7, 0.0, 50);
        assert!(z.in_region(3, &[0, 0]));
        assert!(!z.in_region(3, &[1, 0]));
        let planar = tube(2, 0.5, 1.0, 4);
        assert!(planar.in_region(1, &[0, 2]));
        assert!(!planar.in_region(1, &[1, 2]));
    }

    #[test]
    fn cone_membership_grows_with_time() {
        let p = tube(1, 0.5, 1.0, 10).with_geometry(Geometry::Cone);
        assert!(p.in_region(4, &[2]));
        assert!(!p.in_region(3, &[2]));
        for x in -6..=6i64 {
            let mut inside = false;
            for n in 1..=10 {
                let now = p.in_region(n, &[x]);
                assert!(now || !inside, "cone shrank at n={n} x={x}");
                inside = now;
            }
        }
        let t = tube(1, 0.5, 1.0, 10);
        for x in -6..=6i64 {
            let first = t.in_region(1, &[x]);
            assert!((1..=10).all(|n| t.in_region(n, &[x]) == first));
        }
    }

    #[test]
    fn params_validation() {
        assert!(ModelParams::new(0, 0.5, 1.0, 4).is_err());
        assert!(ModelParams::new(1, 1.5, 1.0, 4).is_err());
        assert!(ModelParams::new(1, 0.5, -1.0, 4).is_err());
        assert!(ModelParams::new(1, 0.5, f64::NAN, 4).is_err());
        assert!(ModelParams::new(1, 0.5, 1.0, 0).is_err());
        assert!("cauchy".parse::<DisorderLaw>().is_err());
        assert_eq!("Rademacher".parse::<DisorderLaw>().unwrap(), DisorderLaw::Rademacher);
    }

    #[test]
    fn log_mgf_values() {
        assert!((log_mgf(DisorderLaw::Gaussian, 0.3).unwrap() - 0.045).abs() < 1e-15);
        let direct = (0.5 * (1f64.exp() + (-1f64).exp())).ln();
        assert!((log_mgf(DisorderLaw::Rademacher, 1.0).unwrap() - direct).abs() < 1e-15);
        assert!((direct - 0.43378).abs() < 1e-5);
        for law in [DisorderLaw::Gaussian, DisorderLaw::Rademacher] {
            assert_eq!(law.log_mgf(0.0), 0.0);
        }
        assert!((DisorderLaw::Rademacher.log_mgf(800.0) - (800.0 - std::f64::consts::LN_2)).abs() < 1e-9);
        assert!(log_mgf(DisorderLaw::Gaussian, f64::INFINITY).is_err());
    }

    #[test]
    fn fields_are_reproducible_and_coupled() {
        let p = tube(2, 0.5, 1.5, 30);
        let f = sample_field(&p, 9).unwrap();
        assert_eq!(f, sample_field(&p, 9).unwrap());
        assert_ne!(f.values(), sample_field(&p, 10).unwrap().values());
        let longer = sample_field(&p.with_length(40), 9).unwrap();
        f.for_each_site(|n, x, v| {
            if let Some(w) = longer.get(n, x) {
                assert_eq!(v, w);
            }
        });
    }

    #[test]
    fn field_lives_exactly_on_sites() {
        let p = tube(2, 0.5, 1.2, 12);
        let f = sample_field(&p, 1).unwrap();
        let mut count = 0u128;
        for n in 1..=12 {
            for_each_point(2, 14, |x| {
                assert_eq!(f.get(n, x).is_some(), p.is_site(n, x), "n={n} x={x:?}");
                if p.is_site(n, x) {
                    count += 1;
                }
            });
        }
        assert_eq!(count, p.site_count());
        assert_eq!(f.values().len() as u128, count);
        assert!(f.get(0, &[0, 0]).is_none());
        assert!(f.get(13, &[1, 0]).is_none());
    }

    #[test]
    fn sampled_moments() {
        for law in [DisorderLaw::Gaussian, DisorderLaw::Rademacher] {
            let p = tube(1, 1.0, 1.0, 1200).with_law(law);
            let v = sample_field(&p, 3).unwrap().values();
            let n = v.len() as f64;
            let m = MeanEstimate::from_samples(&v);
            assert!(m.within(0.0, 4.0), "{law}: {m:?}");
            let sq: Vec<f64> = v.iter().map(|x| x * x).collect();
            let s = MeanEstimate::from_samples(&sq);
            assert!(n > 5e5);
            if law == DisorderLaw::Gaussian {
                assert!(s.within(1.0, 4.0), "{s:?}");
            } else {
                assert_eq!(s.mean, 1.0);
            }
        }
    }

    #[test]
    fn exponential_normalization() {
        for law in [DisorderLaw::Gaussian, DisorderLaw::Rademacher] {
            for beta in [0.1, 0.5, 1.0] {
                let t = NoiseTransform::new(law, beta);
                let mut rng = CounterRng::for_stream(17, law as u64, (beta * 10.0) as u64);
                let w: Vec<f64> = (0..200_000).map(|_| t.weight(law.sample(&mut rng))).collect();
                let m = MeanEstimate::from_samples(&w);
                assert!(m.within(1.0, 4.0), "{law} beta={beta}: {m:?}");
            }
        }
    }

    #[test]
    fn xi_transform_properties() {
        let p = tube(1, 1.0, 1.0, 2000);
        let f = sample_field(&p, 5).unwrap();
        assert_eq!(xi_transform(&f, 0.0), Err(Error::ZeroBeta));

        let beta = 0.1;
        let xi = xi_transform(&f, beta).unwrap().values();
        assert!(xi.len() >= 1_000_000);
        let m = MeanEstimate::from_samples(&xi);
        assert!(m.within(0.0, 4.0));
        let expected = (beta * beta).exp_m1() / (beta * beta);
        assert!((expected - 1.00502).abs() < 1e-5);
        let var = crate::stats::sample_variance(&xi);
        // standard error of the sample variance from the fourth central moment
        let m4 = xi.iter().map(|x| (x - m.mean).powi(4)).sum::<f64>() / xi.len() as f64;
        let se = ((m4 - var * var) / xi.len() as f64).sqrt();
        assert!((var - expected).abs() <= 4.0 * se, "var={var} expected={expected} se={se}");

        let t = NoiseTransform::new(DisorderLaw::Gaussian, 0.7);
        assert_eq!(t.xi(t.lambda_beta / t.beta), 0.0);
    }

    #[test]
    fn variance_identity_per_law() {
        for beta in [0.1, 0.5, 1.3] {
            let g = NoiseTransform::new(DisorderLaw::Gaussian, beta);
            assert!((g.variance_xi - (beta * beta).exp_m1() / (beta * beta)).abs() < 1e-12);
            let r = NoiseTransform::new(DisorderLaw::Rademacher, beta);
            // E[xi^2] for the fair coin, by direct expectation over the two outcomes
            let l = beta.cosh().ln();
            let direct = 0.5
                * (((beta - l).exp_m1() / beta).powi(2) + ((-beta - l).exp_m1() / beta).powi(2));
            assert!((r.variance_xi - direct).abs() < 1e-12 * direct.max(1.0));
        }
        assert!((NoiseTransform::new(DisorderLaw::Gaussian, 1e-8).variance_xi - 1.0).abs() < 1e-12);
        assert!((NoiseTransform::new(DisorderLaw::Rademacher, 1e-8).variance_xi - 1.0).abs() < 1e-12);
    }

    #[test]
    fn csv_round_trip() {
        let p = tube(2, 0.5, 1.0, 6).with_law(DisorderLaw::Rademacher);
        let f = sample_field(&p, 21).unwrap();
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("n,x_1,x_2,omega\n"));
        let back = DisorderField::read_csv(&p, 21, buf.as_slice()).unwrap();
        assert_eq!(back, f);

        let mut lines: Vec<&str> = text.lines().collect();
        lines.pop();
        let truncated = lines.join("\n");
        assert!(matches!(
            DisorderField::read_csv(&p, 21, truncated.as_bytes()),
            Err(Error::Mismatch(_))
        ));
    }

    #[test]
    fn mismatched_params_are_reported() {
        let p = tube(1, 0.5, 1.0, 6);
        let f = sample_field(&p, 1).unwrap();
        assert!(f.check_params(&p).is_ok());
        assert!(matches!(f.check_params(&p.with_length(7)), Err(Error::Mismatch(_))));
        assert!(matches!(
            sample_field_with_budget(&tube(2, 1.0, 1.0, 600), 1, Budget(1 << 20)),
            Err(Error::BudgetExceeded { .. })
        ));
    }
}
