//! Regression check of pinned configs against golden CSVs.
//!
//! A fixture directory holds `<name>.toml` configs, each with a `kind`, and
//! the golden `<name>.csv` of its primary table. Columns are compared by
//! class: labels exactly, deterministic numbers to a relative tolerance,
//! Monte Carlo estimates within a multiple of their combined standard error.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use crate::config::{ExperimentConfig, Overrides};
use crate::error::CliError;
use crate::run::execute;

#[derive(Clone, Debug)]
pub struct VerifyOptions {
    pub dir: PathBuf,
    /// Relative tolerance of deterministic columns.
    pub rtol: f64,
    /// Standard errors allowed for Monte Carlo columns.
    pub n_se: f64,
    /// Replaces the seed of every fixture.
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

impl VerifyOptions {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        VerifyOptions {
            dir: dir.into(),
            rtol: 1e-12,
            n_se: 4.0,
            seed: None,
            threads: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Class {
    Label,
    Exact,
    MonteCarlo { se: &'static str },
    Distance,
    Ignored,
}

fn class(column: &str) -> Class {
    match column {
        "seed" | "config_hash" | "ks_pvalue" | "median" => Class::Ignored,
        "se_mean" | "se_log_z" | "se_var" | "se_term" | "se" | "diff_se" => Class::Ignored,
        "d" | "N" | "k" | "replicas" | "geometry" | "regime" | "route" | "I_N_asymptotic" => Class::Label,
        "mean_z" => Class::MonteCarlo { se: "se_mean" },
        "mean_log_z" => Class::MonteCarlo { se: "se_log_z" },
        "var_mc" => Class::MonteCarlo { se: "se_var" },
        "mean_term" => Class::MonteCarlo { se: "se_term" },
        "mean" => Class::MonteCarlo { se: "se" },
        "ks" => Class::Distance,
        _ => Class::Exact,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mismatch {
    pub fixture: String,
    pub row: usize,
    pub column: String,
    pub got: String,
    pub want: String,
    pub tolerance: f64,
}

impl fmt::Display for Mismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} row {} column {}: got {:?}, want {:?} (tolerance {:e})",
            self.fixture, self.row, self.column, self.got, self.want, self.tolerance
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FixtureReport {
    pub name: String,
    pub rows: usize,
    pub exact_cells: usize,
    /// Largest relative difference over deterministic cells.
    pub exact_max_rel: f64,
    pub mc_cells: usize,
    /// Largest `|difference| / tolerance` over Monte Carlo cells.
    pub mc_max_ratio: f64,
    pub mismatches: Vec<Mismatch>,
}

impl FixtureReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }
}

impl fmt::Display for FixtureReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: {} rows, {} exact cells (max rel {:.2e}), {} Monte Carlo cells (max {:.2} of tolerance)",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.rows,
            self.exact_cells,
            self.exact_max_rel,
            self.mc_cells,
            self.mc_max_ratio
        )
    }
}

fn parse(s: &str) -> Option<f64> {
    s.parse().ok()
}

fn read(data: &[u8]) -> Result<(Vec<String>, Vec<Vec<String>>), CliError> {
    let mut r = csv::Reader::from_reader(data);
    let header = r.headers()?.iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(String::from).collect()))
        .collect::<Result<_, _>>()?;
    Ok((header, rows))
}

/// Compares a fresh table with its golden copy.
pub fn compare(name: &str, got: &[u8], want: &[u8], opts: &VerifyOptions) -> Result<FixtureReport, CliError> {
    let (gh, gr) = read(got)?;
    let (wh, wr) = read(want)?;
    let mut report = FixtureReport {
        name: name.to_string(),
        rows: wr.len(),
        exact_cells: 0,
        exact_max_rel: 0.0,
        mc_cells: 0,
        mc_max_ratio: 0.0,
        mismatches: Vec::new(),
    };
    let mut mismatches = Vec::new();
    let mut miss = |row: usize, column: &str, got: &str, want: &str, tolerance: f64| {
        mismatches.push(Mismatch {
            fixture: name.to_string(),
            row,
            column: column.to_string(),
            got: got.to_string(),
            want: want.to_string(),
            tolerance,
        })
    };
    if gh != wh || gr.len() != wr.len() {
        if gh != wh {
            miss(0, "header", &gh.join(","), &wh.join(","), 0.0);
        }
        if gr.len() != wr.len() {
            miss(0, "rows", &gr.len().to_string(), &wr.len().to_string(), 0.0);
        }
        report.mismatches = mismatches;
        return Ok(report);
    }
    let col = |h: &str| wh.iter().position(|c| c == h);
    let (mut exact_cells, mut exact_max, mut mc_cells, mut mc_max) = (0, 0.0f64, 0, 0.0f64);
    for (i, (g, w)) in gr.iter().zip(&wr).enumerate() {
        let row = i + 1;
        for (j, h) in wh.iter().enumerate() {
            let (gs, ws) = (g[j].as_str(), w[j].as_str());
            match class(h) {
                Class::Ignored => {}
                Class::Label => {
                    if gs != ws {
                        miss(row, h, gs, ws, 0.0);
                    }
                }
                Class::Exact => {
                    exact_cells += 1;
                    if gs == ws {
                        continue;
                    }
                    match (parse(gs), parse(ws)) {
                        (Some(x), Some(y)) => {
                            let rel = if y == 0.0 { (x - y).abs() } else { ((x - y) / y).abs() };
                            exact_max = exact_max.max(rel);
                            if rel.is_nan() || rel > opts.rtol {
                                miss(row, h, gs, ws, opts.rtol);
                            }
                        }
                        _ => miss(row, h, gs, ws, opts.rtol),
                    }
                }
                Class::MonteCarlo { se } => {
                    mc_cells += 1;
                    let se_of = |r: &[String]| col(se).and_then(|k| parse(&r[k]));
                    match (parse(gs), parse(ws), se_of(g), se_of(w)) {
                        (Some(x), Some(y), Some(a), Some(b)) => {
                            let tol = opts.n_se * (a * a + b * b).sqrt();
                            let diff = (x - y).abs();
                            if diff > 0.0 {
                                mc_max = mc_max.max(diff / tol);
                            }
                            if diff > tol {
                                miss(row, h, gs, ws, tol);
                            }
                        }
                        _ if gs == ws => {}
                        _ => miss(row, h, gs, ws, 0.0),
                    }
                }
                Class::Distance => {
                    mc_cells += 1;
                    let n = col("replicas").and_then(|k| parse(&w[k])).unwrap_or(1.0);
                    match (parse(gs), parse(ws)) {
                        (Some(x), Some(y)) => {
                            let tol = opts.n_se / n.sqrt();
                            let diff = (x - y).abs();
                            if diff > 0.0 {
                                mc_max = mc_max.max(diff / tol);
                            }
                            if diff > tol {
                                miss(row, h, gs, ws, tol);
                            }
                        }
                        _ if gs == ws => {}
                        _ => miss(row, h, gs, ws, 0.0),
                    }
                }
            }
        }
    }
    report.mismatches = mismatches;
    report.exact_cells = exact_cells;
    report.exact_max_rel = exact_max;
    report.mc_cells = mc_cells;
    report.mc_max_ratio = mc_max;
    Ok(report)
}

fn fixtures(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::Config(format!("{}: {e}", dir.display())))?;
    let mut configs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    configs.sort();
    if configs.is_empty() {
        return Err(CliError::Verify(format!("no fixtures in {}", dir.display())));
    }
    Ok(configs)
}

/// Re-runs every fixture in `opts.dir` and diffs it against its golden CSV.
pub fn verify(opts: &VerifyOptions) -> Result<Vec<FixtureReport>, CliError> {
    let mut reports = Vec::new();
    for path in fixtures(&opts.dir)? {
        let name = path.file_stem().unwrap().to_string_lossy().into_owned();
        let golden = path.with_extension("csv");
        let want = fs::read(&golden)
            .map_err(|e| CliError::Verify(format!("missing golden {}: {e}", golden.display())))?;
        let config = ExperimentConfig::load(&path)?;
        let kind = config
            .kind
            .ok_or_else(|| CliError::Config(format!("{}: fixtures must set kind", path.display())))?;
        let overrides = Overrides {
            seed: opts.seed,
            threads: opts.threads,
            out: None,
        };
        let config = config.resolve(kind, &overrides)?;
        let output = execute(&config)?;
        if let Some(e) = output.error {
            return Err(e);
        }
        let table = output
            .table(kind.name())
            .ok_or_else(|| CliError::Other(format!("{name}: no `{kind}` table")))?;
        reports.push(compare(&name, &table.data, &want, opts)?);
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts() -> VerifyOptions {
        VerifyOptions::new(".")
    }

    #[test]
    fn exact_columns_use_relative_tolerance() {
        let want = b"d,N,I_N_exact,seed\n1,8,2.0,1\n";
        let close = b"d,N,I_N_exact,seed\n1,8,2.000000000001,5\n";
        let far = b"d,N,I_N_exact,seed\n1,8,2.01,1\n";
        assert!(compare("x", close, want, &opts()).unwrap().passed());
        let r = compare("x", far, want, &opts()).unwrap();
        assert_eq!(r.mismatches.len(), 1);
        assert_eq!(r.mismatches[0].column, "I_N_exact");
        assert_eq!(r.mismatches[0].row, 1);
    }

    #[test]
    fn monte_carlo_columns_use_standard_errors() {
        let want = b"N,mean_z,se_mean\n8,1.00,0.01\n";
        let near = b"N,mean_z,se_mean\n8,1.03,0.01\n";
        let far = b"N,mean_z,se_mean\n8,1.10,0.01\n";
        assert!(compare("x", near, want, &opts()).unwrap().passed());
        assert!(!compare("x", far, want, &opts()).unwrap().passed());
    }

    #[test]
    fn labels_and_shape_must_match() {
        let want = b"d,regime\n1,marginal\n";
        assert!(!compare("x", b"d,regime\n1,relevant\n", want, &opts()).unwrap().passed());
        assert!(!compare("x", b"d,regime\n", want, &opts()).unwrap().passed());
        assert!(!compare("x", b"d,kind\n1,marginal\n", want, &opts()).unwrap().passed());
    }

    #[test]
    fn zero_tolerance_accepts_identical_text() {
        let t = b"d,e_z2\n1,1.2345678901234567\n";
        let o = VerifyOptions { rtol: 0.0, ..opts() };
        assert!(compare("x", t, t, &o).unwrap().passed());
    }
}
