//! Acceptance suite: twelve numbered criteria, one line each.
//!
//! `cargo test -p polytube-core --test acceptance` runs all of them;
//! `cargo test -p polytube-core --test acceptance -- 3 7` runs a subset.
//! Failures are reported but only turn into a failing exit status with
//! `--strict`, so that a workspace test run still reaches the other targets.

use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use polytube_core::chaos::{chaos_terms, orthogonality_check};
use polytube_core::environment::rng::field_seed;
use polytube_core::environment::{sample_field, DisorderField, DisorderLaw, Geometry, ModelParams, NoiseTransform};
use polytube_core::intersection::{beta_schedule, classify_regime, intersection_exact, intersection_sum, Regime};
use polytube_core::limit_laws::{convergence_suite, Coupling};
use polytube_core::partition::{fractional_moment_curve, partition_exact, second_moment_exact};
use polytube_core::walk_kernel::build_kernel;

struct Outcome {
    pass: bool,
    detail: String,
}

type Criterion = (u32, fn() -> Outcome, Duration);

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn relative(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

/// Least-squares slope of `y` against `x`.
fn slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Compensated sum, so the oracle's own rounding stays far below the tolerance.
#[derive(Default)]
struct Neumaier {
    sum: f64,
    carry: f64,
}

impl Neumaier {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.carry += (self.sum - t) + v;
        } else {
            self.carry += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn total(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Calls `f` on every point of `[-half, half]^d`.
fn for_box(d: usize, half: i64, mut f: impl FnMut(&[i64])) {
    let mut x = vec![-half; d];
    loop {
        f(&x);
        let mut axis = d;
        loop {
            if axis == 0 {
                return;
            }
            axis -= 1;
            if x[axis] < half {
                x[axis] += 1;
                break;
            }
            x[axis] = -half;
        }
    }
}

/// `Z_N` by summing over all `(2d)^N` paths.
fn enumerate_paths(p: &ModelParams, field: &DisorderField, beta: f64) -> f64 {
    let t = NoiseTransform::new(p.law, beta);
    fn walk(p: &ModelParams, f: &DisorderField, t: &NoiseTransform, n: usize, x: &mut Vec<i64>, h: f64) -> f64 {
        if n == p.n {
            return h.exp();
        }
        let mut s = 0.0;
        for axis in 0..p.d {
            for step in [-1, 1] {
                x[axis] += step;
                let e = f.get(n + 1, x).map_or(0.0, |w| t.beta * w - t.lambda_beta);
                s += walk(p, f, t, n + 1, x, h + e);
                x[axis] -= step;
            }
        }
        s / (2 * p.d) as f64
    }
    walk(p, field, &t, 0, &mut vec![0; p.d], 0.0)
}

fn criterion_1() -> Outcome {
    let mut worst = 0.0f64;
    for d in 1..=2 {
        for (a, r, geometry) in [(0.5, 1.0, Geometry::Tube), (0.0, 1.0, Geometry::Tube), (0.5, 1.0, Geometry::Cone)] {
            for law in [DisorderLaw::Gaussian, DisorderLaw::Rademacher] {
                for n in [1, 2, 3, 5, 8] {
                    let p = ModelParams::new(d, a, r, n).unwrap().with_law(law).with_geometry(geometry);
                    for i in 0..20 {
                        let f = sample_field(&p, field_seed(1, i)).unwrap();
                        for beta in [0.1, 1.0] {
                            let z = partition_exact(&p, &f, beta).unwrap().log_z.exp();
                            worst = worst.max(relative(z, enumerate_paths(&p, &f, beta)));
                        }
                    }
                }
            }
        }
    }
    outcome(worst <= 1e-12, format!("max relative error {worst:.2e} (tolerance 1e-12)"))
}

fn criterion_2() -> Outcome {
    let mut worst = 0.0f64;
    for law in [DisorderLaw::Gaussian, DisorderLaw::Rademacher] {
        for n in 1..=10 {
            let p = ModelParams::new(1, 0.5, 1.0, n).unwrap().with_law(law);
            for i in 0..20 {
                let f = sample_field(&p, field_seed(2, i)).unwrap();
                for beta in [0.5, 1.0] {
                    let c = chaos_terms(&p, &f, beta, n).unwrap();
                    let z = partition_exact(&p, &f, beta).unwrap().log_z.exp();
                    worst = worst.max(relative(c.reconstruct(), z));
                }
            }
        }
    }
    outcome(worst <= 1e-10, format!("max relative error {worst:.2e} (tolerance 1e-10)"))
}

fn criterion_3() -> Outcome {
    let a_grid = [0.0, 0.25, 0.5, 0.75, 1.0];
    let r_grid = [0.0, 1.0];
    let mut worst = 0.0f64;
    let mut cells = 0;
    for (d, n_grid) in [
        (1usize, vec![1usize, 2, 3, 5, 8, 16, 32, 64, 128, 256]),
        (2, vec![1, 2, 3, 5, 8, 16, 32, 64, 128, 256]),
        (3, vec![1, 2, 3, 5, 8, 16, 32]),
    ] {
        let kernel = build_kernel(d, *n_grid.last().unwrap()).unwrap();
        for &a in &a_grid {
            for &r in &r_grid {
                for &n in &n_grid {
                    let p = ModelParams::new(d, a, r, n).unwrap();
                    let mut brute = Neumaier::default();
                    for m in 1..=n {
                        for_box(d, m as i64, |x| {
                            if p.in_region(m, x) {
                                brute.add(kernel.prob(m, x).unwrap().powi(2));
                            }
                        });
                    }
                    let brute = brute.total();
                    let exact = intersection_exact(&kernel, &p, n).unwrap();
                    let streamed = intersection_sum(&p).unwrap();
                    worst = worst.max(relative(exact, brute)).max(relative(streamed, brute));
                    cells += 1;
                }
            }
        }
    }
    outcome(
        worst <= 1e-12,
        format!("{cells} cells (d = 3 up to N = 32), max relative error {worst:.2e} (tolerance 1e-12)"),
    )
}

fn criterion_4() -> Outcome {
    let n = 100_000;
    let p = ModelParams::new(1, 0.75, 1.0, n).unwrap();
    let ratio = intersection_sum(&p).unwrap() / (2.0 / std::f64::consts::PI.sqrt() * (n as f64).sqrt());
    outcome((0.95..=1.05).contains(&ratio), format!("I_N / ((2/sqrt(pi)) sqrt(N)) = {ratio:.4} at N = 1e5"))
}

fn log_slope(d: usize, a: f64, r: f64, exps: std::ops::RangeInclusive<u32>) -> f64 {
    let (x, y): (Vec<f64>, Vec<f64>) = exps
        .map(|e| {
            let n = 1usize << e;
            let p = ModelParams::new(d, a, r, n).unwrap();
            ((n as f64).ln(), intersection_sum(&p).unwrap())
        })
        .unzip();
    slope(&x, &y)
}

fn criterion_5() -> Outcome {
    let pi = std::f64::consts::PI;
    let mut pass = true;
    let mut parts = Vec::new();
    for r in [0.0, 1.5] {
        let s = log_slope(1, 0.0, r, 12..=17);
        let target = (2.0 * f64::floor(r) + 1.0) / pi;
        let err = (s / target - 1.0).abs();
        pass &= err <= 0.08;
        parts.push(format!("d=1 R={r}: {err:.3}"));
    }
    for a in [0.3, 1.0] {
        let s = log_slope(2, a, 1.0, 6..=9);
        let target = (2.0 * a).min(1.0) / pi;
        let err = (s / target - 1.0).abs();
        pass &= err <= 0.10;
        parts.push(format!("d=2 a={a}: {err:.3}"));
    }
    outcome(pass, format!("relative slope errors {} (limits 0.08 / 0.10)", parts.join(", ")))
}

fn criterion_6() -> Outcome {
    let (x, y): (Vec<f64>, Vec<f64>) = (12..=18)
        .map(|e| {
            let n = 1usize << e;
            let p = ModelParams::new(1, 0.25, 1.0, n).unwrap();
            ((n as f64).ln(), intersection_sum(&p).unwrap() / (n as f64).powf(0.25))
        })
        .unzip();
    let s = slope(&x, &y);
    let err = (s * std::f64::consts::PI - 1.0).abs();
    outcome(err <= 0.10, format!("slope {s:.5} vs 1/pi, relative error {err:.3} (limit 0.10)"))
}

fn criterion_7() -> Outcome {
    let p = ModelParams::new(1, 0.25, 1.0, 1).unwrap();
    let schedule = beta_schedule(&p, 0.5).unwrap();
    let target = 7.0 / 6.0;
    let seq: Vec<f64> = (9..=13)
        .map(|e| {
            let n = 1usize << e;
            second_moment_exact(&p.with_length(n), schedule.eval(n as f64)).unwrap().e_z2
        })
        .collect();
    let increasing = seq.windows(2).all(|w| w[1] > w[0]);
    let first = (seq[0] - target).abs();
    let last = (seq[seq.len() - 1] - target).abs();
    let pass = increasing && last < first && last < 0.08;
    let shown: Vec<String> = seq.iter().map(|v| format!("{v:.4}")).collect();
    outcome(
        pass,
        format!(
            "E[Z^2] at N = 2^9..2^13: [{}], increasing {increasing}, gaps {first:.4} -> {last:.4} (target 7/6, limit 0.08)",
            shown.join(", ")
        ),
    )
}

fn criterion_8() -> Outcome {
    let p = ModelParams::new(3, 1.0, 1.0, 1).unwrap();
    let seq: Vec<f64> = (6..=12)
        .map(|e| {
            let n = 1usize << e;
            let beta = (n as f64).powf(-0.1);
            second_moment_exact(&p.with_length(n), beta).unwrap().e_z2 - 1.0
        })
        .collect();
    let decreasing = seq.windows(2).all(|w| w[1] < w[0]);
    let top = seq[seq.len() - 1];
    let shown: Vec<String> = seq.iter().map(|v| format!("{v:.4}")).collect();
    outcome(
        decreasing && top < 0.05,
        format!(
            "E[(Z-1)^2] at N = 2^6..2^12: [{}], decreasing {decreasing}, top {top:.4} (limit 0.05)",
            shown.join(", ")
        ),
    )
}

fn criterion_9() -> Outcome {
    let p = ModelParams::new(1, 0.25, 1.0, 512).unwrap();
    let curve = fractional_moment_curve(&p, 0.5, &[0.0, 0.2, 0.4, 0.6], 2000, 9).unwrap();
    let shown: Vec<String> = curve.points.iter().map(|q| format!("{:.4}", q.mean)).collect();
    outcome(
        curve.is_non_increasing(4.0),
        format!("E[Z^0.5] along beta = 0, 0.2, 0.4, 0.6: [{}]", shown.join(", ")),
    )
}

fn criterion_10() -> Outcome {
    let p = ModelParams::new(1, 0.5, 1.0, 32).unwrap();
    let r = orthogonality_check(&p, 0.5, 5000, 4, 10).unwrap();
    let off = r.off_diagonal_violations(4.0);
    let diag = r.diagonal_violations(4.0);
    let worst = (0..4)
        .flat_map(|k| (0..4).filter(move |&l| l != k).map(move |l| (k, l)))
        .map(|(k, l)| r.cross[k][l].mean.abs() / r.cross[k][l].std_error)
        .fold(0.0, f64::max);
    outcome(
        off.is_empty() && diag.is_empty(),
        format!(
            "largest off-diagonal |mean| / SE = {worst:.2}, off-diagonal violations {off:?}, diagonal violations {diag:?}"
        ),
    )
}

fn criterion_11() -> Outcome {
    let p = ModelParams::new(1, 0.25, 1.0, 1).unwrap();
    let grid: Vec<usize> = (8..=13).map(|e| 1usize << e).collect();
    let rep = convergence_suite(&p, Coupling::Scaled { beta_hat: 0.5 }, &grid, 1000, 11).unwrap();
    let ks: Vec<String> = rep
        .rows
        .iter()
        .map(|r| format!("{:.4}", r.ks.map_or(f64::NAN, |k| k.statistic)))
        .collect();
    let trend = rep.ks_trend().unwrap();
    outcome(
        trend.rho < 0.0 && trend.p_negative < 0.05,
        format!(
            "KS at N = 2^8..2^13: [{}], Spearman rho {:.3}, one-sided p {:.4}",
            ks.join(", "),
            trend.rho,
            trend.p_negative
        ),
    )
}

fn criterion_12() -> Outcome {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/regime_map.csv");
    let mut reader = csv::Reader::from_path(&path).unwrap();
    let mut cells = 0;
    let mut wrong = Vec::new();
    for row in reader.records() {
        let row = row.unwrap();
        let d: usize = row[0].parse().unwrap();
        let a: f64 = row[1].parse().unwrap();
        let r: f64 = row[2].parse().unwrap();
        let expect = match &row[3] {
            "relevant" => Regime::DisorderRelevant,
            "marginal" => Regime::MarginallyRelevant,
            "irrelevant" => Regime::DisorderIrrelevant,
            other => panic!("unknown regime {other}"),
        };
        let p = ModelParams::new(d, a, r, 100).unwrap();
        let got = classify_regime(&p, 0.5).unwrap().regime;
        if got != expect {
            wrong.push(format!("(d={d}, a={a}, R={r}): {got} vs {expect}"));
        }
        cells += 1;
    }
    outcome(cells == 40 && wrong.is_empty(), format!("{cells} cells, mismatches {wrong:?}"))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 12] = [
        (1, criterion_1, Duration::from_secs(10)),
        (2, criterion_2, Duration::from_secs(10)),
        (3, criterion_3, Duration::from_secs(30)),
        (4, criterion_4, Duration::from_secs(120)),
        (5, criterion_5, Duration::from_secs(600)),
        (6, criterion_6, Duration::from_secs(300)),
        (7, criterion_7, Duration::from_secs(900)),
        (8, criterion_8, Duration::from_secs(600)),
        (9, criterion_9, Duration::from_secs(600)),
        (10, criterion_10, Duration::from_secs(300)),
        (11, criterion_11, Duration::from_secs(1800)),
        (12, criterion_12, Duration::from_secs(1)),
    ];
    let args: Vec<String> = std::env::args().skip(1).collect();
    let strict = args.iter().any(|a| a == "--strict");
    let selected: Vec<u32> = args.iter().filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, run, limit) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let out = run();
        let elapsed = start.elapsed();
        let in_time = elapsed <= limit;
        let pass = out.pass && in_time;
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {id:>2}: {} | {} | {:.1} s (limit {} s{})",
            if pass { "PASS" } else { "FAIL" },
            out.detail,
            elapsed.as_secs_f64(),
            limit.as_secs(),
            if in_time { "" } else { ", exceeded" }
        );
    }
    if failed == 0 {
        println!("all criteria passed");
        return ExitCode::SUCCESS;
    }
    println!("{failed} criteria failed");
    if strict {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
