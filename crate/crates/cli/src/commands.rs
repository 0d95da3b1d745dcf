//! Subcommand bodies.

use std::fmt;
use std::fs;
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Map, Value};

use riskmetric::oracle::solve_discrete;
use riskmetric::rdeu::certainty_equivalent;
use riskmetric::riskmetrics::premium_discrete;
use riskmetric::solver::{default_grid, regime_of};
use riskmetric::{
    check_order, compute_l, premium, rdeu_value, sweep, verify_optimality, ConfigError,
    DiscreteProblem, Error, Indemnity, LossModel, Order, RunConfig, SolveReport,
};

use crate::{Cli, Command};

/// Survival level bounding the range over which contracts are compared.
const COMPARE_TAIL: f64 = 1e-4;
const COMPARE_POINTS: usize = 4000;

/// Why a run failed, and the exit code it maps to.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags, unreadable or malformed config: exit 2.
    Config(String),
    /// The model or contract is outside the library's domain: exit 1.
    Model(Error),
    /// Results could not be written: exit 1.
    Output(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Model(_) | Failure::Output(_) => 1,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) | Failure::Output(m) => f.write_str(m),
            Failure::Model(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Model(e)
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

type Outcome<T = ()> = Result<T, Failure>;

pub fn run(cli: &Cli) -> Outcome {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| Failure::Config("--config is required".into()))?;
    let cfg = load(path)?;
    match &cli.command {
        Command::Premium { samples } => run_premium(cli, &cfg, *samples),
        Command::Evaluate => run_evaluate(cli, &cfg),
        Command::Solve => run_solve(cli, &cfg),
        Command::Verify { report } => run_verify(cli, &cfg, report.as_deref()),
        Command::Oracle => run_oracle(cli, &cfg),
        Command::Orders => run_orders(cli, &cfg),
        Command::Sweep => run_sweep(cli, &cfg),
    }
}

fn load(path: &Path) -> Outcome<RunConfig<f64>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    RunConfig::from_json(&text).map_err(|e| match e {
        ConfigError::Syntax {
            line,
            column,
            message,
        } => Failure::Config(format!("{}:{line}:{column}: {message}", path.display())),
        other => Failure::Config(format!("{}: {other}", path.display())),
    })
}

fn json_path(cli: &Cli, cfg: &RunConfig<f64>) -> Option<PathBuf> {
    cli.out.clone().or_else(|| cfg.output.report.clone())
}

fn csv_path(cli: &Cli, cfg: &RunConfig<f64>) -> Option<PathBuf> {
    cli.csv.clone().or_else(|| cfg.output.csv.clone())
}

/// Prints pretty JSON and mirrors it to the output path, if any.
fn emit<S: Serialize>(value: &S, path: Option<PathBuf>) -> Outcome {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Output(e.to_string()))?;
    if let Some(p) = path {
        fs::write(&p, format!("{text}\n"))
            .map_err(|e| Failure::Output(format!("{}: {e}", p.display())))?;
    }
    io_outcome(writeln!(std::io::stdout().lock(), "{text}"))
}

/// A closed stdout (`| head`) ends output early without failing the run.
fn io_outcome(r: std::io::Result<()>) -> Outcome {
    match r {
        Err(e) if e.kind() != ErrorKind::BrokenPipe => Err(Failure::Output(e.to_string())),
        _ => Ok(()),
    }
}

fn write_csv<W: Write>(out: W, header: &[String], rows: &[Vec<String>]) -> Outcome {
    let mut w = csv::Writer::from_writer(out);
    let written = std::iter::once(header)
        .chain(rows.iter().map(Vec::as_slice))
        .try_for_each(|r| w.write_record(r));
    match written {
        Err(e) => match e.into_kind() {
            csv::ErrorKind::Io(io) => io_outcome(Err(io)),
            other => Err(Failure::Output(format!("{other:?}"))),
        },
        Ok(()) => io_outcome(w.flush()),
    }
}

fn write_csv_file(path: &Path, header: &[String], rows: &[Vec<String>]) -> Outcome {
    let file =
        fs::File::create(path).map_err(|e| Failure::Output(format!("{}: {e}", path.display())))?;
    write_csv(file, header, rows)
}

fn run_premium(cli: &Cli, cfg: &RunConfig<f64>, samples: Option<usize>) -> Outcome {
    let (pp, m) = cfg.pricing()??;
    let contract = cfg.contract()?;
    let b = premium(&pp, contract, &m, &cfg.solver.quadrature)?;
    let mut out = json!({
        "premium": b.premium,
        "loading_part": b.loading_part,
        "deviation_part": b.deviation_part,
    });
    if let Some(n) = samples {
        if n == 0 {
            return Err(Failure::Config("--samples must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cli.seed);
        let values: Vec<f64> = (0..n)
            .map(|_| contract.evaluate(m.sample(&mut rng)))
            .collect();
        let probs = vec![1.0 / n as f64; n];
        out["monte_carlo"] = json!({
            "samples": n,
            "seed": cli.seed,
            "premium": premium_discrete(&pp, &values, &probs),
        });
    }
    emit(&out, json_path(cli, cfg))
}

fn run_evaluate(cli: &Cli, cfg: &RunConfig<f64>) -> Outcome {
    let p = cfg.problem()??;
    let contract = cfg.contract()?;
    let q = &cfg.solver.quadrature;
    let pi = premium(&p.pp, contract, &p.loss, q)?.premium;
    let value = rdeu_value(&p.prefs, contract, pi, &p.loss, q)?;
    let ce = certainty_equivalent(&p.prefs, value)?;
    emit(
        &json!({
            "rdeu_value": value,
            "premium": pi,
            "certainty_equivalent": ce,
        }),
        json_path(cli, cfg),
    )
}

fn run_solve(cli: &Cli, cfg: &RunConfig<f64>) -> Outcome {
    let report = cfg.solve()??;
    if let Some(path) = csv_path(cli, cfg) {
        let p = cfg.problem()??;
        let grid = default_grid(&p.loss, cfg.solver.grid_n);
        let lf = compute_l(
            &report.contract,
            &p.prefs,
            &p.pp,
            &p.loss,
            &grid,
            &cfg.solver.quadrature,
        )?;
        let header = ["x", "I_star", "R_star", "L", "tk_S", "tb_S"].map(String::from);
        let rows: Vec<Vec<String>> =
            lf.t.iter()
                .enumerate()
                .map(|(i, &x)| {
                    let ix = report.contract.evaluate(x);
                    [x, ix, x - ix, lf.l[i], lf.tk_s[i], lf.tb_s[i]]
                        .iter()
                        .map(f64::to_string)
                        .collect()
                })
                .collect();
        write_csv_file(&path, &header, &rows)?;
    }
    emit(&report, json_path(cli, cfg))
}

fn run_verify(cli: &Cli, cfg: &RunConfig<f64>, report: Option<&Path>) -> Outcome {
    let p = cfg.problem()??;
    let contract = match report {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
            let r: SolveReport<f64> = serde_json::from_str(&text).map_err(|e| {
                Failure::Config(format!(
                    "{}:{}:{}: {e}",
                    path.display(),
                    e.line(),
                    e.column()
                ))
            })?;
            r.contract
        }
        None => cfg.contract()?.clone(),
    };
    let residual = verify_optimality(&contract, &p.prefs, &p.pp, &p.loss, &cfg.solver)?;
    emit(
        &json!({
            "residual": residual,
            "regime": regime_of(&contract, &p.loss, cfg.solver.grid_n).to_string(),
        }),
        json_path(cli, cfg),
    )
}

/// Sup distance between two contracts up to a far quantile of the loss.
fn contract_distance(a: &Indemnity<f64>, b: &Indemnity<f64>, m: &LossModel<f64>) -> f64 {
    let hi = m.quantile(COMPARE_TAIL);
    (0..=COMPARE_POINTS)
        .map(|k| hi * k as f64 / COMPARE_POINTS as f64)
        .map(|x| (a.evaluate(x) - b.evaluate(x)).abs())
        .fold(0.0, f64::max)
}

fn run_oracle(cli: &Cli, cfg: &RunConfig<f64>) -> Outcome {
    let p = cfg.problem()??;
    let report = cfg.solve()??;
    let problem = DiscreteProblem::new(
        &p.prefs,
        &p.pp,
        &p.loss,
        cfg.oracle.n,
        &cfg.solver.quadrature,
    )?;
    let sol = solve_discrete(&problem, cfg.oracle.iters)?;
    let on_grid = problem.value(&problem.slopes_of(&report.contract))?;
    emit(
        &json!({
            "contract_distance": contract_distance(&sol.contract()?, &report.contract, &p.loss),
            "value_gap": sol.value - report.rdeu_value,
            "grid_value_gap": sol.value - on_grid,
            "oracle_value": sol.value,
            "solver_value": report.rdeu_value,
            "solver_regime": report.regime.to_string(),
            "oracle_iterations": sol.iterations,
            "oracle_stationarity": sol.stationarity,
        }),
        json_path(cli, cfg),
    )
}

fn run_orders(cli: &Cli, cfg: &RunConfig<f64>) -> Outcome {
    let pair = cfg
        .orders
        .as_ref()
        .ok_or_else(|| Failure::Config("missing orders".into()))?;
    let mut out = Map::new();
    let mut fails = Map::new();
    let mut indeterminate = Vec::new();
    for (key, order) in [("fsd", Order::Fsd), ("hr", Order::Hr), ("lr", Order::Lr)] {
        match check_order(&pair.j1, &pair.j2, order, pair.grid_n) {
            Ok(c) => {
                out.insert(key.into(), c.holds.into());
                fails.insert(key.into(), json!(c.fails_at));
            }
            Err(Error::IndeterminateOrder(why)) => {
                out.insert(key.into(), Value::Null);
                fails.insert(key.into(), Value::Null);
                indeterminate.push(json!({ "order": key, "reason": why }));
            }
            Err(e) => return Err(e.into()),
        }
    }
    out.insert("fails_at".into(), fails.into());
    if !indeterminate.is_empty() {
        out.insert("indeterminate".into(), indeterminate.into());
    }
    emit(&Value::Object(out), json_path(cli, cfg))
}

fn run_sweep(cli: &Cli, cfg: &RunConfig<f64>) -> Outcome {
    let table = sweep(cfg)?;
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let rows: Vec<Vec<String>> = table
        .rows
        .iter()
        .map(|r| {
            if let Some(e) = &r.error {
                eprintln!("warning: cell {:?} failed: {e}", r.params);
            }
            let mut row: Vec<String> = r.params.iter().map(f64::to_string).collect();
            row.push(r.regime.clone());
            row.extend(
                [r.d_star, r.slope, r.premium, r.rdeu_value, r.residual]
                    .into_iter()
                    .map(cell),
            );
            row
        })
        .collect();
    match csv_path(cli, cfg) {
        Some(path) => write_csv_file(&path, &table.header(), &rows),
        None => write_csv(std::io::stdout().lock(), &table.header(), &rows),
    }
}
