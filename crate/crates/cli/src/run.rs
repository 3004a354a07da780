//! Dispatch of an experiment to the core crate and CSV emission.

use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use polytube_core::chaos::{chaos_term_variances, chaos_terms_with_budget};
use polytube_core::environment::rng::derive_seed;
use polytube_core::environment::rng::field_seed;
use polytube_core::environment::sample_field_with_budget;
use polytube_core::intersection::{classify_regime, intersection_prediction, intersection_sum_with_budget};
use polytube_core::limit_laws::convergence_suite;
use polytube_core::partition::{fractional_moment_curve, partition_exact_with_budget, second_moment_exact_with_budget};
use polytube_core::stats::MeanEstimate;
use polytube_core::walk_kernel::build_kernel_with_budget;
use polytube_core::{Budget, Error, Geometry, ModelParams, SecondMomentRoute};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Cell, ExperimentConfig, Kind};
use crate::error::CliError;

const CELL_STREAM: u64 = 16;

/// One CSV table held in memory.
#[derive(Clone, Debug)]
pub struct Table {
    pub name: String,
    pub data: Vec<u8>,
}

/// The tables of a run, complete up to the first failure.
#[derive(Debug)]
pub struct Output {
    pub tables: Vec<Table>,
    pub error: Option<CliError>,
}

impl Output {
    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }
}

struct Sink {
    name: &'static str,
    writer: csv::Writer<Vec<u8>>,
}

impl Sink {
    fn new(name: &'static str) -> Self {
        Sink {
            name,
            writer: csv::Writer::from_writer(Vec::new()),
        }
    }

    fn rows<R: Serialize>(&mut self, rows: &[R]) -> Result<(), CliError> {
        for r in rows {
            self.writer.serialize(r)?;
        }
        Ok(())
    }

    fn finish(self) -> Table {
        let data = self.writer.into_inner().expect("in-memory writer cannot fail");
        Table {
            name: self.name.to_string(),
            data,
        }
    }
}

/// Seed of the grid cell `(index, N)`.
pub fn cell_seed(seed: u64, index: usize, n: usize) -> u64 {
    derive_seed(derive_seed(seed, CELL_STREAM, index as u64), CELL_STREAM, n as u64)
}

struct Ctx {
    seed: u64,
    hash: String,
    budget: Budget,
}

#[derive(Serialize)]
struct IntersectRow<'a> {
    d: usize,
    a: f64,
    #[serde(rename = "R")]
    r: f64,
    geometry: Geometry,
    #[serde(rename = "N")]
    n: usize,
    #[serde(rename = "I_N_exact")]
    exact: f64,
    #[serde(rename = "I_N_predicted")]
    predicted: Option<f64>,
    ratio: Option<f64>,
    seed: u64,
    config_hash: &'a str,
}

#[derive(Serialize)]
struct PartitionRow<'a> {
    d: usize,
    a: f64,
    #[serde(rename = "R")]
    r: f64,
    #[serde(rename = "N")]
    n: usize,
    beta: f64,
    replicas: usize,
    mean_z: f64,
    se_mean: f64,
    mean_log_z: f64,
    se_log_z: f64,
    e_z2: f64,
    route: SecondMomentRoute,
    seed: u64,
    config_hash: &'a str,
}

#[derive(Serialize)]
struct ReplicaRow<'a> {
    d: usize,
    a: f64,
    #[serde(rename = "R")]
    r: f64,
    #[serde(rename = "N")]
    n: usize,
    beta: f64,
    replica: usize,
    field_seed: u64,
    log_z: f64,
    seed: u64,
    config_hash: &'a str,
}

#[derive(Serialize)]
struct ChaosRow<'a> {
    d: usize,
    a: f64,
    #[serde(rename = "R")]
    r: f64,
    #[serde(rename = "N")]
    n: usize,
    beta: f64,
    k: usize,
    var_exact: f64,
    var_mc: f64,
    se_var: f64,
    mean_term: f64,
    se_term: f64,
    replicas: usize,
    seed: u64,
    config_hash: &'a str,
}

#[derive(Serialize)]
struct ChaosFieldRow<'a> {
    d: usize,
    a: f64,
    #[serde(rename = "R")]
    r: f64,
    #[serde(rename = "N")]
    n: usize,
    beta: f64,
    field: usize,
    k: usize,
    #[serde(rename = "Z_Nk")]
    term: f64,
    seed: u64,
    config_hash: &'a str,
}

#[derive(Serialize)]
struct RegimeRow<'a> {
    d: usize,
    a: f64,
    #[serde(rename = "R")]
    r: f64,
    geometry: Geometry,
    #[serde(rename = "N")]
    n: usize,
    regime: String,
    beta_hat: f64,
    beta_n: Option<f64>,
    sigma_sq: Option<f64>,
    #[serde(rename = "I_N_asymptotic")]
    asymptotic: String,
    #[serde(rename = "I_N_predicted")]
    predicted: Option<f64>,
    seed: u64,
    config_hash: &'a str,
}

#[derive(Serialize)]
struct ConvergeRow<'a> {
    d: usize,
    a: f64,
    #[serde(rename = "R")]
    r: f64,
    #[serde(rename = "N")]
    n: usize,
    beta_n: f64,
    replicas: usize,
    mean_z: Option<f64>,
    se_mean: Option<f64>,
    median: Option<f64>,
    e_z2_exact: Option<f64>,
    e_z2_target: Option<f64>,
    ks: Option<f64>,
    ks_pvalue: Option<f64>,
    seed: u64,
    config_hash: &'a str,
}

#[derive(Serialize)]
struct FractionalRow<'a> {
    d: usize,
    a: f64,
    #[serde(rename = "R")]
    r: f64,
    #[serde(rename = "N")]
    n: usize,
    theta: f64,
    beta: f64,
    mean: f64,
    se: f64,
    diff_se: f64,
    replicas: usize,
    seed: u64,
    config_hash: &'a str,
}

/// Runs `config` in memory on a pool of `config.threads` workers.
pub fn execute(config: &ExperimentConfig) -> Result<Output, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| CliError::Other(e.to_string()))?;
    let cells = config.cells()?;
    let ctx = Ctx {
        seed: config.seed,
        hash: config.hash(),
        budget: Budget::from_mib(config.budget_mib),
    };
    Ok(pool.install(|| match config.kind() {
        Kind::Intersect => intersect(&ctx, &cells),
        Kind::Partition => partition(config, &ctx, &cells),
        Kind::Chaos => chaos(config, &ctx, &cells),
        Kind::RegimeMap => regime_map(config, &ctx, &cells),
        Kind::Converge => converge(config, &ctx, &cells),
        Kind::Fractional => fractional(config, &ctx, &cells),
    }))
}

fn finish(sinks: Vec<Sink>, result: Result<(), CliError>) -> Output {
    Output {
        tables: sinks.into_iter().map(Sink::finish).collect(),
        error: result.err(),
    }
}

fn intersect(ctx: &Ctx, cells: &[Cell]) -> Output {
    let mut sink = Sink::new("intersect");
    let rows: Vec<Result<(f64, Option<f64>), CliError>> = cells
        .par_iter()
        .map(|c| {
            let exact = intersection_sum_with_budget(&c.params, ctx.budget)?;
            Ok((exact, intersection_prediction(&c.params).ok()))
        })
        .collect();
    let result = cells.iter().zip(rows).try_for_each(|(c, r)| {
        let (exact, predicted) = r?;
        let p = &c.params;
        sink.rows(&[IntersectRow {
            d: p.d,
            a: p.a,
            r: p.r,
            geometry: p.geometry,
            n: p.n,
            exact,
            predicted,
            ratio: predicted.map(|v| exact / v),
            seed: ctx.seed,
            config_hash: &ctx.hash,
        }])
    });
    finish(vec![sink], result)
}

fn partition(config: &ExperimentConfig, ctx: &Ctx, cells: &[Cell]) -> Output {
    let spec = config.beta_spec().ok().flatten().expect("validated coupling");
    let mut summary = Sink::new("partition");
    let mut fields = Sink::new("partition_replicas");
    let result = cells.iter().try_for_each(|c| {
        let p = &c.params;
        let beta = spec.beta(p)?;
        let base = cell_seed(ctx.seed, c.index, p.n);
        let e_z2 = second_moment_exact_with_budget(p, beta, ctx.budget)?;
        let log_z: Vec<(u64, f64)> = (0..config.replicas as u64)
            .into_par_iter()
            .map(|i| {
                let s = field_seed(base, i);
                let f = sample_field_with_budget(p, s, ctx.budget)?;
                Ok((s, partition_exact_with_budget(p, &f, beta, ctx.budget)?.log_z))
            })
            .collect::<Result<_, Error>>()?;
        let z: Vec<f64> = log_z.iter().map(|(_, l)| l.exp()).collect();
        let l: Vec<f64> = log_z.iter().map(|(_, l)| *l).collect();
        let (mz, ml) = (MeanEstimate::from_samples(&z), MeanEstimate::from_samples(&l));
        let rows: Vec<ReplicaRow> = log_z
            .iter()
            .enumerate()
            .map(|(i, &(s, log_z))| ReplicaRow {
                d: p.d,
                a: p.a,
                r: p.r,
                n: p.n,
                beta,
                replica: i,
                field_seed: s,
                log_z,
                seed: ctx.seed,
                config_hash: &ctx.hash,
            })
            .collect();
        fields.rows(&rows)?;
        summary.rows(&[PartitionRow {
            d: p.d,
            a: p.a,
            r: p.r,
            n: p.n,
            beta,
            replicas: config.replicas,
            mean_z: mz.mean,
            se_mean: mz.std_error,
            mean_log_z: ml.mean,
            se_log_z: ml.std_error,
            e_z2: e_z2.e_z2,
            route: e_z2.route,
            seed: ctx.seed,
            config_hash: &ctx.hash,
        }])
    });
    finish(vec![summary, fields], result)
}

fn chaos(config: &ExperimentConfig, ctx: &Ctx, cells: &[Cell]) -> Output {
    let spec = config.beta_spec().ok().flatten().expect("validated coupling");
    let mut summary = Sink::new("chaos");
    let mut fields = Sink::new("chaos_fields");
    let result = cells.iter().try_for_each(|c| {
        let p = &c.params;
        let beta = spec.beta(p)?;
        let k_max = config.order_for(p.n);
        let base = cell_seed(ctx.seed, c.index, p.n);
        let kernel = build_kernel_with_budget(p.d, p.n, ctx.budget)?;
        let exact = chaos_term_variances(p, &kernel, beta, k_max)?;
        let terms: Vec<Vec<f64>> = (0..config.replicas as u64)
            .into_par_iter()
            .map(|i| {
                let f = sample_field_with_budget(p, field_seed(base, i), ctx.budget)?;
                Ok(chaos_terms_with_budget(p, &f, beta, k_max, ctx.budget)?.terms)
            })
            .collect::<Result<_, Error>>()?;
        let mut rows = Vec::with_capacity(terms.len() * k_max);
        for (i, t) in terms.iter().enumerate() {
            for (k, &term) in t.iter().enumerate() {
                rows.push(ChaosFieldRow {
                    d: p.d,
                    a: p.a,
                    r: p.r,
                    n: p.n,
                    beta,
                    field: i,
                    k: k + 1,
                    term,
                    seed: ctx.seed,
                    config_hash: &ctx.hash,
                });
            }
        }
        fields.rows(&rows)?;
        let rows: Vec<ChaosRow> = (0..k_max)
            .map(|k| {
                let x: Vec<f64> = terms.iter().map(|t| t[k]).collect();
                let sq: Vec<f64> = x.iter().map(|v| v * v).collect();
                let (m, v) = (MeanEstimate::from_samples(&x), MeanEstimate::from_samples(&sq));
                ChaosRow {
                    d: p.d,
                    a: p.a,
                    r: p.r,
                    n: p.n,
                    beta,
                    k: k + 1,
                    var_exact: exact[k],
                    var_mc: v.mean,
                    se_var: v.std_error,
                    mean_term: m.mean,
                    se_term: m.std_error,
                    replicas: config.replicas,
                    seed: ctx.seed,
                    config_hash: &ctx.hash,
                }
            })
            .collect();
        summary.rows(&rows)
    });
    finish(vec![summary, fields], result)
}

fn regime_map(config: &ExperimentConfig, ctx: &Ctx, cells: &[Cell]) -> Output {
    let beta_hat = config.regime_beta_hat().expect("validated coupling");
    let mut sink = Sink::new("regime-map");
    let result = cells.iter().try_for_each(|c| {
        let p = &c.params;
        let row = match classify_regime(p, beta_hat) {
            Ok(rep) => RegimeRow {
                d: p.d,
                a: p.a,
                r: p.r,
                geometry: p.geometry,
                n: p.n,
                regime: rep.regime.to_string(),
                beta_hat,
                beta_n: rep.beta_schedule.map(|s| s.eval(p.n as f64)),
                sigma_sq: rep.sigma_sq,
                asymptotic: rep.i_n_prediction.to_string(),
                predicted: Some(rep.i_n_prediction.eval(p.n as f64)),
                seed: ctx.seed,
                config_hash: &ctx.hash,
            },
            Err(Error::NotApplicable(_)) => RegimeRow {
                d: p.d,
                a: p.a,
                r: p.r,
                geometry: p.geometry,
                n: p.n,
                regime: "undetermined".into(),
                beta_hat,
                beta_n: None,
                sigma_sq: None,
                asymptotic: String::new(),
                predicted: None,
                seed: ctx.seed,
                config_hash: &ctx.hash,
            },
            Err(e) => return Err(e.into()),
        };
        sink.rows(&[row])
    });
    finish(vec![sink], result)
}

fn field_bytes(p: &ModelParams) -> u128 {
    p.site_count() * std::mem::size_of::<f64>() as u128
}

fn check_field_budget(p: &ModelParams, budget: Budget) -> Result<(), CliError> {
    let needed = field_bytes(p);
    if needed > budget.bytes() as u128 {
        return Err(Error::BudgetExceeded {
            what: "disorder field",
            needed,
            budget: budget.bytes(),
        }
        .into());
    }
    Ok(())
}

fn converge(config: &ExperimentConfig, ctx: &Ctx, cells: &[Cell]) -> Output {
    let spec = config.beta_spec().ok().flatten().expect("validated coupling");
    let mut sink = Sink::new("converge");
    let first_n = config.grid.n[0];
    let result = cells.iter().filter(|c| c.params.n == first_n).try_for_each(|c| {
        let p = &c.params;
        for &n in &config.grid.n {
            check_field_budget(&p.with_length(n), ctx.budget)?;
        }
        let base = derive_seed(ctx.seed, CELL_STREAM, c.index as u64);
        let rep = convergence_suite(p, spec.coupling(), &config.grid.n, config.replicas, base)?;
        let rows: Vec<ConvergeRow> = rep
            .rows
            .iter()
            .map(|r| ConvergeRow {
                d: p.d,
                a: p.a,
                r: p.r,
                n: r.n,
                beta_n: r.beta_n,
                replicas: config.replicas,
                mean_z: r.mean.map(|m| m.mean),
                se_mean: r.mean.map(|m| m.std_error),
                median: r.median,
                e_z2_exact: r.e_z2_exact,
                e_z2_target: r.e_z2_target,
                ks: r.ks.map(|k| k.statistic),
                ks_pvalue: r.ks.map(|k| k.p_value),
                seed: ctx.seed,
                config_hash: &ctx.hash,
            })
            .collect();
        sink.rows(&rows)
    });
    finish(vec![sink], result)
}

fn fractional(config: &ExperimentConfig, ctx: &Ctx, cells: &[Cell]) -> Output {
    let theta = config.theta.expect("validated theta");
    let betas = config.betas.as_deref().expect("validated betas");
    let mut sink = Sink::new("fractional");
    let result = cells.iter().try_for_each(|c| {
        let p = &c.params;
        check_field_budget(p, ctx.budget)?;
        let base = cell_seed(ctx.seed, c.index, p.n);
        let curve = fractional_moment_curve(p, theta, betas, config.replicas, base)?;
        let rows: Vec<FractionalRow> = curve
            .points
            .iter()
            .map(|q| FractionalRow {
                d: p.d,
                a: p.a,
                r: p.r,
                n: p.n,
                theta,
                beta: q.beta,
                mean: q.mean,
                se: q.std_error,
                diff_se: q.diff_std_error,
                replicas: config.replicas,
                seed: ctx.seed,
                config_hash: &ctx.hash,
            })
            .collect();
        sink.rows(&rows)
    });
    finish(vec![sink], result)
}

#[derive(Serialize)]
struct Versions {
    polytube_cli: &'static str,
    polytube_core: &'static str,
}

#[derive(Serialize)]
struct Manifest<'a> {
    kind: Kind,
    status: &'static str,
    error: Option<String>,
    exit_code: u8,
    config_hash: String,
    config: &'a ExperimentConfig,
    wall_time_s: f64,
    outputs: Vec<String>,
    versions: Versions,
}

/// What a finished run wrote.
#[derive(Debug)]
pub struct RunSummary {
    pub csv: Vec<PathBuf>,
    pub manifest: PathBuf,
}

/// Runs `config`, writes `<out>/<table>.csv` and `<out>/manifest.json`.
/// Tables are written up to the first failure, which is then returned.
pub fn run(config: &ExperimentConfig) -> Result<RunSummary, CliError> {
    let start = Instant::now();
    fs::create_dir_all(&config.out)
        .map_err(|e| CliError::Other(format!("{}: {e}", config.out.display())))?;
    let output = execute(config)?;
    let mut csv = Vec::new();
    for t in &output.tables {
        let path = config.out.join(format!("{}.csv", t.name));
        fs::write(&path, &t.data)?;
        csv.push(path);
    }
    let manifest = Manifest {
        kind: config.kind(),
        status: if output.error.is_none() { "ok" } else { "error" },
        error: output.error.as_ref().map(ToString::to_string),
        exit_code: output.error.as_ref().map_or(0, CliError::exit_code),
        config_hash: config.hash(),
        config,
        wall_time_s: start.elapsed().as_secs_f64(),
        outputs: csv
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect(),
        versions: Versions {
            polytube_cli: env!("CARGO_PKG_VERSION"),
            polytube_core: polytube_core::VERSION,
        },
    };
    let path = config.out.join("manifest.json");
    fs::write(&path, serde_json::to_vec_pretty(&manifest).expect("manifest serializes"))?;
    match output.error {
        Some(e) => Err(e),
        None => Ok(RunSummary { csv, manifest: path }),
    }
}
