//! Exact transition probabilities `p_n(x) = P(S_n = x)` of the simple
//! symmetric random walk on `Z^d` started at the origin.
//!
//! [`WalkKernel`] tabulates every layer up to a horizon by the convolution
//! recursion `p_{n+1}(x) = (2d)^{-1} sum_e p_n(x - e)`. Because `p_n` is
//! invariant under sign flips (and, for `d >= 3`, coordinate permutations)
//! only one representative per symmetry orbit is stored.
//!
//! Long horizons in `d <= 2` never need the full table: [`OneDimRows`]
//! streams exact one-dimensional layers by binomial ratio recurrences and
//! [`planar_probability`] maps the planar walk onto two independent
//! one-dimensional walks along the diagonals.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::environment::rng::CounterRng;
use crate::error::invalid;
use crate::{Budget, Error, Result};

/// A point of `Z^d`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LatticePoint(Vec<i64>);

impl LatticePoint {
    pub fn new(coords: Vec<i64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(invalid("lattice points need at least one coordinate"));
        }
        Ok(LatticePoint(coords))
    }

    pub fn origin(d: usize) -> Self {
        LatticePoint(vec![0; d.max(1)])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[i64] {
        &self.0
    }

    pub fn l1(&self) -> i64 {
        self.0.iter().map(|c| c.abs()).sum()
    }

    pub fn norm_sq(&self) -> i64 {
        self.0.iter().map(|c| c * c).sum()
    }

    pub fn norm(&self) -> f64 {
        (self.norm_sq() as f64).sqrt()
    }
}

impl From<LatticePoint> for Vec<i64> {
    fn from(p: LatticePoint) -> Self {
        p.0
    }
}

#[derive(Clone, Debug)]
enum Storage {
    /// `d <= 2`: layer `n` is a dense array over the orthant `[0, n]^d`.
    Orthant(Vec<Vec<f64>>),
    /// `d >= 3`: layer `n` maps sorted absolute coordinates to probabilities.
    Canonical(Vec<HashMap<Vec<u32>, f64>>),
}

/// Table of `p_n(x)` for `0 <= n <= horizon`.
///
/// A built kernel is immutable and can be shared between threads.
#[derive(Clone, Debug)]
pub struct WalkKernel {
    d: usize,
    horizon: usize,
    storage: Storage,
}

/// Builds the kernel with the default memory budget.
pub fn build_kernel(d: usize, horizon: usize) -> Result<WalkKernel> {
    build_kernel_with_budget(d, horizon, Budget::default())
}

pub fn build_kernel_with_budget(d: usize, horizon: usize, budget: Budget) -> Result<WalkKernel> {
    if d == 0 {
        return Err(invalid("dimension must be at least 1"));
    }
    if horizon == 0 {
        return Err(invalid("horizon must be at least 1"));
    }
    budget.check("walk kernel table", kernel_bytes(d, horizon))?;
    let storage = if d <= 2 {
        Storage::Orthant(build_orthant(d, horizon))
    } else {
        Storage::Canonical(build_canonical(d, horizon))
    };
    Ok(WalkKernel {
        d,
        horizon,
        storage,
    })
}

fn kernel_bytes(d: usize, horizon: usize) -> u128 {
    let h = horizon as u128;
    if d <= 2 {
        (0..=h).map(|n| (n + 1).pow(d as u32) * 8).sum()
    } else {
        // nondecreasing tuples with bounded sum, half of them of the right parity,
        // ~96 bytes per hash entry
        let fact: u128 = (1..=d as u128).product();
        (0..=h)
            .map(|n| (n + 1).saturating_pow(d as u32) / (fact * fact) / 2 + 1)
            .sum::<u128>()
            .saturating_mul(96 + 4 * d as u128)
    }
}

fn orthant_index(x: &[usize], side: usize) -> usize {
    x.iter().fold(0, |acc, &c| acc * side + c)
}

fn build_orthant(d: usize, horizon: usize) -> Vec<Vec<f64>> {
    let mut layers = Vec::with_capacity(horizon + 1);
    layers.push(vec![1.0]);
    let w = 1.0 / (2 * d) as f64;
    for n in 0..horizon {
        let prev = &layers[n];
        let side_prev = n + 1;
        let side = n + 2;
        let get = |x: &[usize]| -> f64 {
            if x.iter().any(|&c| c >= side_prev) {
                0.0
            } else {
                prev[orthant_index(x, side_prev)]
            }
        };
        let mut next = vec![0.0; side.pow(d as u32)];
        let mut x = vec![0usize; d];
        for (idx, slot) in next.iter_mut().enumerate() {
            let mut rem = idx;
            for axis in (0..d).rev() {
                x[axis] = rem % side;
                rem /= side;
            }
            if (x.iter().sum::<usize>() + n + 1) % 2 == 1 {
                continue;
            }
            let mut acc = 0.0;
            for axis in 0..d {
                let c = x[axis];
                x[axis] = c + 1;
                acc += get(&x);
                // |c - 1| folds the reflected neighbour back into the orthant
                x[axis] = if c == 0 { 1 } else { c - 1 };
                acc += get(&x);
                x[axis] = c;
            }
            *slot = acc * w;
        }
        layers.push(next);
    }
    layers
}

fn canonical_key(x: &[i64]) -> Vec<u32> {
    let mut k: Vec<u32> = x.iter().map(|c| c.unsigned_abs() as u32).collect();
    k.sort_unstable();
    k
}

/// Nondecreasing tuples `0 <= k_1 <= ... <= k_d` with `sum <= total` and
/// `sum = total (mod 2)`.
fn canonical_points(d: usize, total: u32, mut f: impl FnMut(&[u32])) {
    fn rec(
        buf: &mut Vec<u32>,
        d: usize,
        lo: u32,
        budget: u32,
        total: u32,
        f: &mut impl FnMut(&[u32]),
    ) {
        if buf.len() == d {
            let s: u32 = buf.iter().sum();
            if (total - s).is_multiple_of(2) {
                f(buf);
            }
            return;
        }
        let slots = (d - buf.len()) as u32;
        let mut v = lo;
        while v * slots <= budget {
            buf.push(v);
            rec(buf, d, v, budget - v, total, f);
            buf.pop();
            v += 1;
        }
    }
    let mut buf = Vec::with_capacity(d);
    rec(&mut buf, d, 0, total, total, &mut f);
}

fn build_canonical(d: usize, horizon: usize) -> Vec<HashMap<Vec<u32>, f64>> {
    let mut layers: Vec<HashMap<Vec<u32>, f64>> = Vec::with_capacity(horizon + 1);
    layers.push(HashMap::from([(vec![0u32; d], 1.0)]));
    let w = 1.0 / (2 * d) as f64;
    let mut x = vec![0i64; d];
    for n in 0..horizon {
        let prev = &layers[n];
        let mut next = HashMap::new();
        canonical_points(d, (n + 1) as u32, |k| {
            for (xi, &ki) in x.iter_mut().zip(k) {
                *xi = ki as i64;
            }
            let mut acc = 0.0;
            for axis in 0..d {
                let c = x[axis];
                for step in [1, -1] {
                    x[axis] = c + step;
                    acc += prev.get(&canonical_key(&x)).copied().unwrap_or(0.0);
                }
                x[axis] = c;
            }
            if acc > 0.0 {
                next.insert(k.to_vec(), acc * w);
            }
        });
        layers.push(next);
    }
    layers
}

/// Number of lattice points obtained from `rep` by sign flips, and for
/// `permute = true` also by coordinate permutations.
fn orbit_size(rep: &[i64], permute: bool) -> f64 {
    let nonzero = rep.iter().filter(|&&c| c != 0).count();
    let signs = (1u64 << nonzero) as f64;
    if !permute {
        return signs;
    }
    let d = rep.len();
    let mut perms: f64 = (1..=d as u64).product::<u64>() as f64;
    let mut i = 0;
    while i < d {
        let mut j = i;
        while j + 1 < d && rep[j + 1] == rep[i] {
            j += 1;
        }
        perms /= (1..=(j - i + 1) as u64).product::<u64>() as f64;
        i = j + 1;
    }
    signs * perms
}

impl WalkKernel {
    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    fn check_time(&self, n: usize) -> Result<()> {
        if n > self.horizon {
            Err(Error::OutOfRange {
                n,
                horizon: self.horizon,
            })
        } else {
            Ok(())
        }
    }

    /// `p_n(x)`; zero off the reachable set.
    pub fn prob(&self, n: usize, x: &[i64]) -> Result<f64> {
        self.check_time(n)?;
        if x.len() != self.d {
            return Err(invalid(format!(
                "point has dimension {}, kernel has {}",
                x.len(),
                self.d
            )));
        }
        Ok(self.prob_unchecked(n, x))
    }

    pub(crate) fn prob_unchecked(&self, n: usize, x: &[i64]) -> f64 {
        let l1: i64 = x.iter().map(|c| c.abs()).sum();
        if l1 > n as i64 || (l1 + n as i64) % 2 != 0 {
            return 0.0;
        }
        match &self.storage {
            Storage::Orthant(layers) => {
                let side = n + 1;
                let idx = x
                    .iter()
                    .fold(0usize, |acc, &c| acc * side + c.unsigned_abs() as usize);
                layers[n][idx]
            }
            Storage::Canonical(layers) => {
                layers[n].get(&canonical_key(x)).copied().unwrap_or(0.0)
            }
        }
    }

    /// `p_n(0)`; zero for odd `n`.
    pub fn return_probability(&self, n: usize) -> Result<f64> {
        self.check_time(n)?;
        Ok(self.prob_unchecked(n, &vec![0; self.d]))
    }

    /// Visits one representative `x` per symmetry orbit of layer `n` with
    /// `p_n(x) > 0`, passing the orbit size.
    pub fn for_each_orbit(&self, n: usize, mut f: impl FnMut(&[i64], f64, f64)) -> Result<()> {
        self.check_time(n)?;
        match &self.storage {
            Storage::Orthant(layers) => {
                let side = n + 1;
                let mut x = vec![0i64; self.d];
                for (idx, &p) in layers[n].iter().enumerate() {
                    if p == 0.0 {
                        continue;
                    }
                    let mut rem = idx;
                    for axis in (0..self.d).rev() {
                        x[axis] = (rem % side) as i64;
                        rem /= side;
                    }
                    f(&x, p, orbit_size(&x, false));
                }
            }
            Storage::Canonical(layers) => {
                let mut x = vec![0i64; self.d];
                for (k, &p) in &layers[n] {
                    for (xi, &ki) in x.iter_mut().zip(k) {
                        *xi = ki as i64;
                    }
                    f(&x, p, orbit_size(&x, true));
                }
            }
        }
        Ok(())
    }

    /// `sum_x p_n(x)`.
    pub fn total_mass(&self, n: usize) -> Result<f64> {
        let mut s = 0.0;
        self.for_each_orbit(n, |_, p, m| s += p * m)?;
        Ok(s)
    }
}

/// One-dimensional heat kernel `g_t(x) = exp(-x^2 / 2t) / sqrt(2 pi t)`.
pub fn gaussian_kernel(t: f64, x: f64) -> Result<f64> {
    if t.is_nan() || t <= 0.0 {
        return Err(invalid(format!("heat kernel needs t > 0, got {t}")));
    }
    Ok((-x * x / (2.0 * t)).exp() / (2.0 * std::f64::consts::PI * t).sqrt())
}

/// A nearest-neighbour path `S_0 = 0, ..., S_{n_steps}` drawn from the
/// counter-based stream `seed`.
pub fn sample_path(d: usize, n_steps: usize, seed: u64) -> Result<Vec<LatticePoint>> {
    if d == 0 {
        return Err(invalid("dimension must be at least 1"));
    }
    if n_steps == 0 {
        return Err(invalid("a path needs at least one step"));
    }
    let mut rng = CounterRng::new(seed);
    Ok(sample_path_with(d, n_steps, &mut rng))
}

pub fn sample_path_with<R: Rng + ?Sized>(d: usize, n_steps: usize, rng: &mut R) -> Vec<LatticePoint> {
    let mut x = vec![0i64; d];
    let mut path = Vec::with_capacity(n_steps + 1);
    path.push(LatticePoint(x.clone()));
    for _ in 0..n_steps {
        let dir = rng.random_range(0..2 * d);
        x[dir / 2] += if dir % 2 == 0 { 1 } else { -1 };
        path.push(LatticePoint(x.clone()));
    }
    path
}

/// Streams exact one-dimensional layers `p_n(x)`, `|x| <= width`, for
/// `n = 0, 1, 2, ...` without storing earlier layers.
///
/// The central value follows `p_{2m}(0) = p_{2m-2}(0) (2m-1)/(2m)` and
/// `p_{2m+1}(1) = p_{2m}(0) (2m+1)/(2m+2)`; the rest of a layer follows the
/// ratio `p_n(x+2) / p_n(x) = (n-x) / (n+x+2)`.
#[derive(Clone, Debug)]
pub struct OneDimRows {
    width: usize,
    n: usize,
    even_center: f64,
    collision: f64,
    row: Vec<f64>,
}

impl OneDimRows {
    pub fn new(width: usize) -> Self {
        let mut row = vec![0.0; 2 * width + 1];
        row[width] = 1.0;
        OneDimRows {
            width,
            n: 0,
            even_center: 1.0,
            collision: 1.0,
            row,
        }
    }

    /// Time of the current layer.
    pub fn time(&self) -> usize {
        self.n
    }

    /// Current layer indexed by `x + width`.
    pub fn row(&self) -> &[f64] {
        &self.row
    }

    pub fn get(&self, x: i64) -> f64 {
        if x.unsigned_abs() as usize > self.width {
            0.0
        } else {
            self.row[(x + self.width as i64) as usize]
        }
    }

    /// `p_{2n}(0) = sum_x p_n(x)^2` at the current time.
    pub fn collision_probability(&self) -> f64 {
        self.collision
    }

    /// Advances to the next layer.
    pub fn advance(&mut self) {
        let n = self.n + 1;
        let w = self.width as i64;
        self.collision *= (2 * n - 1) as f64 / (2 * n) as f64;
        // centre of the new layer
        let center_x: i64;
        let center_p: f64;
        if n.is_multiple_of(2) {
            self.even_center *= (n - 1) as f64 / n as f64;
            center_x = 0;
            center_p = self.even_center;
        } else {
            center_x = 1;
            center_p = self.even_center * n as f64 / (n + 1) as f64;
        }
        self.row.iter_mut().for_each(|v| *v = 0.0);
        let nf = n as i64;
        let mut x = center_x;
        let mut p = center_p;
        while x <= w && x <= nf {
            self.row[(x + w) as usize] = p;
            self.row[(w - x) as usize] = p;
            if p == 0.0 {
                break;
            }
            p *= (nf - x) as f64 / (nf + x + 2) as f64;
            x += 2;
        }
        self.n = n;
    }
}

/// `p_n(x, y)` of the planar walk from the one-dimensional layer `q = p_n`:
/// the diagonal coordinates `x + y` and `x - y` move as independent
/// one-dimensional walks.
#[inline]
pub fn planar_probability(q: &OneDimRows, x: i64, y: i64) -> f64 {
    q.get(x + y) * q.get(x - y)
}

/// `ln k!` for `k <= max`, accumulated with compensated summation.
#[derive(Clone, Debug)]
pub struct LogFactorials(Vec<f64>);

impl LogFactorials {
    pub fn new(max: usize) -> Self {
        let mut out = Vec::with_capacity(max + 1);
        out.push(0.0);
        let (mut sum, mut comp) = (0.0f64, 0.0f64);
        for k in 1..=max {
            let y = (k as f64).ln() - comp;
            let t = sum + y;
            comp = (t - sum) - y;
            sum = t;
            out.push(sum);
        }
        LogFactorials(out)
    }

    pub fn get(&self, k: usize) -> f64 {
        self.0[k]
    }

    pub fn ln_binomial(&self, n: usize, k: usize) -> f64 {
        self.0[n] - self.0[k] - self.0[n - k]
    }
}

/// `u_n = p_{2n}(0)` for `n = 0..=n_max` in dimension `d`.
///
/// `d = 1, 2` use closed forms; higher dimensions split the `2n` steps
/// between the first axis and the remaining `d - 1`, i.e.
/// `P_d(n) = sum_j C(2n, 2j) d^{-2j} (1 - 1/d)^{2n-2j} P_1(j) P_{d-1}(n-j)`.
pub fn return_probabilities(d: usize, n_max: usize) -> Result<Vec<f64>> {
    if d == 0 {
        return Err(invalid("dimension must be at least 1"));
    }
    let mut one = Vec::with_capacity(n_max + 1);
    let mut c = 1.0;
    one.push(c);
    for n in 1..=n_max {
        c *= (2 * n - 1) as f64 / (2 * n) as f64;
        one.push(c);
    }
    match d {
        1 => return Ok(one),
        2 => return Ok(one.iter().map(|p| p * p).collect()),
        _ => {}
    }
    let lf = LogFactorials::new(2 * n_max + 1);
    let mut lower: Vec<f64> = one.iter().map(|p| p * p).collect();
    for dim in 3..=d {
        let q = 1.0 / dim as f64;
        let (lq, lr) = (q.ln(), (1.0 - q).ln());
        let mut cur = vec![0.0; n_max + 1];
        cur[0] = 1.0;
        for n in 1..=n_max {
            let mut acc = 0.0;
            for j in 0..=n {
                if one[j] == 0.0 || lower[n - j] == 0.0 {
                    continue;
                }
                let lw = lf.ln_binomial(2 * n, 2 * j)
                    + (2 * j) as f64 * lq
                    + (2 * (n - j)) as f64 * lr;
                acc += (lw + one[j].ln() + lower[n - j].ln()).exp();
            }
            cur[n] = acc;
        }
        lower = cur;
    }
    Ok(lower)
}
