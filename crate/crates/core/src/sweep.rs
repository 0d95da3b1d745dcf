//! Parameter sweeps over a run configuration.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ConfigError, RunConfig};
use crate::contracts::Indemnity;
use crate::scalar::{lit, to_f64, Scalar};

pub const MAX_SWEEP_PARAMS: usize = 2;
pub const MAX_SWEEP_CELLS: usize = 100_000;
/// Environment variable capping the number of sweep threads.
pub const THREADS_ENV: &str = "RISKMETRIC_THREADS";
/// Survival level where the reported slope is read off non-linear contracts.
const SLOPE_PROBE: f64 = 1e-2;

/// `start, start + step, ...` up to `stop`; empty when `stop < start`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "T: Scalar")]
pub struct SweepRange<T> {
    pub name: String,
    pub start: T,
    pub stop: T,
    pub step: T,
}

impl<T: Scalar> SweepRange<T> {
    pub fn count(&self) -> usize {
        if self.stop < self.start {
            return 0;
        }
        let span = to_f64((self.stop - self.start) / self.step);
        // tolerate the rounding of decimal steps
        (span + 1e-9).floor() as usize + 1
    }

    pub fn values(&self) -> Vec<T> {
        (0..self.count())
            .map(|i| self.start + self.step * T::from_usize(i).unwrap())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "T: Scalar")]
pub struct SweepSpec<T> {
    pub params: Vec<SweepRange<T>>,
}

impl<T: Scalar> SweepSpec<T> {
    pub fn check(&self) -> Result<(), ConfigError> {
        if self.params.is_empty() || self.params.len() > MAX_SWEEP_PARAMS {
            return Err(ConfigError::Invalid(format!(
                "a sweep takes 1 to {MAX_SWEEP_PARAMS} parameters, got {}",
                self.params.len()
            )));
        }
        for r in &self.params {
            if !(r.start.is_finite()
                && r.stop.is_finite()
                && r.step.is_finite()
                && r.step > T::zero())
            {
                return Err(ConfigError::Invalid(format!(
                    "sweep range `{}` must be finite with step > 0",
                    r.name
                )));
            }
        }
        let cells = self
            .params
            .iter()
            .try_fold(1usize, |acc, r| acc.checked_mul(r.count()));
        match cells {
            Some(c) if c <= MAX_SWEEP_CELLS => Ok(()),
            _ => Err(ConfigError::Invalid(format!(
                "sweep exceeds {MAX_SWEEP_CELLS} cells"
            ))),
        }
    }

    /// Cartesian product of the ranges, first parameter varying slowest.
    pub fn cells(&self) -> Vec<Vec<T>> {
        let mut out: Vec<Vec<T>> = vec![Vec::new()];
        for r in &self.params {
            let vals = r.values();
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    vals.iter().map(move |&v| {
                        let mut row = prefix.clone();
                        row.push(v);
                        row
                    })
                })
                .collect();
        }
        if self.params.iter().any(|r| r.count() == 0) {
            out.clear();
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SweepRow<T> {
    pub params: Vec<T>,
    /// Regime label, or `error` when the cell failed.
    pub regime: String,
    pub d_star: Option<T>,
    pub slope: Option<T>,
    pub premium: Option<T>,
    pub rdeu_value: Option<T>,
    pub residual: Option<T>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SweepTable<T> {
    pub names: Vec<String>,
    pub rows: Vec<SweepRow<T>>,
}

impl<T> SweepTable<T> {
    pub fn header(&self) -> Vec<String> {
        let mut h = self.names.clone();
        h.extend(
            [
                "regime",
                "d_star",
                "slope",
                "premium",
                "rdeu_value",
                "residual",
            ]
            .map(String::from),
        );
        h
    }
}

/// Thread count from the environment, if set to a positive integer.
pub fn thread_cap() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()?
        .trim()
        .parse()
        .ok()
        .filter(|&n: &usize| n > 0)
}

/// Solves every cell of the config's sweep, concurrently.
pub fn sweep<T: Scalar>(cfg: &RunConfig<T>) -> Result<SweepTable<T>, ConfigError> {
    let spec = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| ConfigError::Invalid("missing sweep".into()))?;
    spec.check()?;
    let names: Vec<String> = spec.params.iter().map(|r| r.name.clone()).collect();
    let cells = spec.cells();
    // bind every name once so that a bad name fails before any solving
    if let Some(first) = cells.first() {
        for (n, &v) in names.iter().zip(first) {
            cfg.with_param(n, v)?;
        }
    }
    let run = || -> Result<Vec<SweepRow<T>>, ConfigError> {
        cells
            .par_iter()
            .map(|vals| solve_cell(cfg, &names, vals))
            .collect()
    };
    let rows = match thread_cap() {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?
            .install(run)?,
        None => run()?,
    };
    Ok(SweepTable { names, rows })
}

fn solve_cell<T: Scalar>(
    cfg: &RunConfig<T>,
    names: &[String],
    vals: &[T],
) -> Result<SweepRow<T>, ConfigError> {
    let mut c = cfg.clone();
    c.sweep = None;
    for (n, &v) in names.iter().zip(vals) {
        c = c.with_param(n, v)?;
    }
    let failed = |e: String| SweepRow {
        params: vals.to_vec(),
        regime: "error".into(),
        d_star: None,
        slope: None,
        premium: None,
        rdeu_value: None,
        residual: None,
        error: Some(e),
    };
    let problem = match c.problem()? {
        Ok(p) => p,
        Err(e) => return Ok(failed(e.to_string())),
    };
    let report = match c.solve()? {
        Ok(r) => r,
        Err(e) => return Ok(failed(e.to_string())),
    };
    let d_star = report.diagnostics.d_star.or(match &report.contract {
        Indemnity::Full => Some(T::zero()),
        Indemnity::Deductible { d } | Indemnity::DeductibleCoinsurance { d, .. }
            if d.is_finite() =>
        {
            Some(*d)
        }
        _ => None,
    });
    let slope = report.diagnostics.alpha.unwrap_or_else(|| {
        report
            .contract
            .slope(problem.loss.quantile(lit(SLOPE_PROBE)))
    });
    Ok(SweepRow {
        params: vals.to_vec(),
        regime: report.regime.to_string(),
        d_star,
        slope: Some(slope),
        premium: Some(report.premium),
        rdeu_value: Some(report.rdeu_value),
        residual: Some(report.residual),
        error: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn power_sweep(range: &str) -> RunConfig<f64> {
        let text = format!(
            r#"{{"family": {{"family": "power", "gamma": 1, "lambda": 2, "c": 0.5, "theta": 0.1, "q": 0.9, "wealth": 10}},
                "sweep": {{"params": [{range}]}}}}"#
        );
        RunConfig::from_json(&text).unwrap()
    }

    #[test]
    fn range_counts() {
        let r = SweepRange {
            name: "x".into(),
            start: 0.2,
            stop: 3.0,
            step: 0.01,
        };
        assert_eq!(r.count(), 281);
        let e = SweepRange {
            name: "x".into(),
            start: 1.0,
            stop: 0.0,
            step: 0.1,
        };
        assert_eq!(e.count(), 0);
    }

    #[test]
    fn empty_range_gives_no_rows() {
        let t = sweep(&power_sweep(
            r#"{"name": "gamma", "start": 1, "stop": 0, "step": 0.1}"#,
        ))
        .unwrap();
        assert!(t.rows.is_empty());
        assert_eq!(t.header().len(), 7);
    }

    #[test]
    fn oversize_sweeps_are_config_errors() {
        let text = r#"{"family": {"family": "power", "gamma": 1, "lambda": 2, "c": 0.5, "theta": 0.1, "q": 0.9, "wealth": 10},
            "sweep": {"params": [{"name": "gamma", "start": 0, "stop": 1, "step": 1e-3},
                                 {"name": "theta", "start": 0, "stop": 1, "step": 1e-3}]}}"#;
        assert!(RunConfig::<f64>::from_json(text).is_err());
    }

    #[test]
    fn gamma_sweep_flips_regime() {
        let t = sweep(&power_sweep(
            r#"{"name": "gamma", "start": 0.8, "stop": 1.2, "step": 0.1}"#,
        ))
        .unwrap();
        let regimes: Vec<&str> = t.rows.iter().map(|r| r.regime.as_str()).collect();
        assert_eq!(regimes[..3], ["zero", "zero", "zero"]);
        assert_eq!(
            regimes[3..],
            ["deductible_coinsurance", "deductible_coinsurance"]
        );
    }
}
