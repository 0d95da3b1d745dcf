//! JSON run configurations for batch use.

use serde::{Deserialize, Serialize};
use std::path::PathBuf;

use crate::contracts::Indemnity;
use crate::distortions::{Distortion, PremiumPrinciple};
use crate::error::Result;
use crate::loss_models::LossModel;
use crate::rdeu::{BuyerPreferences, Utility};
use crate::scalar::Scalar;
use crate::solver::{
    solve_deductible, solve_diml, solve_general, solve_max_limit, ExponentialFamily, SolveReport,
    SolverConfig,
};
use crate::sweep::SweepSpec;

/// Problems with the configuration itself, as opposed to the model it describes.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl ConfigError {
    fn invalid(msg: impl Into<String>) -> Self {
        ConfigError::Invalid(msg.into())
    }
}

/// Premium given either canonically (`theta`, `k`) or as `g + h`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "T: Scalar")]
pub struct PremiumSpec<T> {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<T>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<Distortion<T>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g: Option<Distortion<T>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<Distortion<T>>,
}

impl<T: Scalar> PremiumSpec<T> {
    pub fn canonical(theta: T, k: Distortion<T>) -> Self {
        PremiumSpec {
            theta: Some(theta),
            k: Some(k),
            g: None,
            h: None,
        }
    }

    pub fn principle(&self) -> std::result::Result<Result<PremiumPrinciple<T>>, ConfigError> {
        match (&self.theta, &self.k, &self.g, &self.h) {
            (Some(theta), Some(k), None, None) => Ok(PremiumPrinciple::new(*theta, k.clone())),
            (None, None, Some(g), Some(h)) => Ok(PremiumPrinciple::canonical_decompose(g, h)),
            _ => Err(ConfigError::invalid(
                "premium needs exactly one of {theta, k} or {g, h}",
            )),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputPaths {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
}

/// Which solver handles `solve`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    /// Closed form when `family` is set, otherwise the grid solver.
    #[default]
    Auto,
    General,
    Deductible,
    MaxLimit,
    Diml,
}

/// Pair of distortions for the `orders` subcommand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "T: Scalar")]
pub struct OrderPair<T> {
    pub j1: Distortion<T>,
    pub j2: Distortion<T>,
    #[serde(default = "default_order_grid")]
    pub grid_n: usize,
}

fn default_order_grid() -> usize {
    1001
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSettings {
    #[serde(default = "default_oracle_cells")]
    pub n: usize,
    #[serde(default = "default_oracle_iters")]
    pub iters: usize,
}

fn default_oracle_cells() -> usize {
    200
}

fn default_oracle_iters() -> usize {
    500
}

impl Default for OracleSettings {
    fn default() -> Self {
        OracleSettings {
            n: default_oracle_cells(),
            iters: default_oracle_iters(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "T: Scalar")]
pub struct PreferencesSpec<T> {
    pub utility: Utility<T>,
    #[serde(default = "Distortion::identity")]
    pub b: Distortion<T>,
    pub wealth: T,
    #[serde(default)]
    pub allow_nonconvex_b: bool,
}

/// Everything one CLI invocation needs.
///
/// A closed-form `family` stands in for `loss`, `preferences` and `premium`
/// when those are omitted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "T: Scalar")]
pub struct RunConfig<T> {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<LossModel<T>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preferences: Option<PreferencesSpec<T>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub premium: Option<PremiumSpec<T>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contract: Option<Indemnity<T>>,
    #[serde(default)]
    pub solver: SolverConfig<T>,
    #[serde(default)]
    pub output: OutputPaths,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec<T>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<ExponentialFamily<T>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub orders: Option<OrderPair<T>>,
    #[serde(default)]
    pub oracle: OracleSettings,
    #[serde(default)]
    pub route: Route,
}

/// Fully resolved model.
#[derive(Clone, Debug, PartialEq)]
pub struct Problem<T> {
    pub prefs: BuyerPreferences<T>,
    pub pp: PremiumPrinciple<T>,
    pub loss: LossModel<T>,
}

impl<T: Scalar> RunConfig<T> {
    pub fn from_json(text: &str) -> std::result::Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| ConfigError::Syntax {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        cfg.check()?;
        Ok(cfg)
    }

    /// Schema-level checks that do not need the model to be solved.
    pub fn check(&self) -> std::result::Result<(), ConfigError> {
        self.solver
            .validate()
            .map_err(|e| ConfigError::invalid(e.to_string()))?;
        if let Some(p) = &self.premium {
            // only the shape matters here; model errors surface when solving
            let _ = p.principle()?;
        }
        if let Some(s) = &self.sweep {
            s.check()?;
        }
        Ok(())
    }

    /// The premium principle and loss, which is all that pricing needs.
    pub fn pricing(
        &self,
    ) -> std::result::Result<Result<(PremiumPrinciple<T>, LossModel<T>)>, ConfigError> {
        let from_family = match &self.family {
            Some(f) => match f.problem() {
                Ok(p) => Some(p),
                Err(e) => return Ok(Err(e)),
            },
            None => None,
        };
        let pp = match (&self.premium, &from_family) {
            (Some(p), _) => match p.principle()? {
                Ok(pp) => pp,
                Err(e) => return Ok(Err(e)),
            },
            (None, Some(f)) => f.1.clone(),
            (None, None) => return Err(ConfigError::invalid("missing premium")),
        };
        let loss = match (&self.loss, &from_family) {
            (Some(m), _) => m.clone(),
            (None, Some(f)) => f.2.clone(),
            (None, None) => return Err(ConfigError::invalid("missing loss")),
        };
        Ok(loss.validate().map(|_| (pp, loss)))
    }

    /// The buyer, premium principle and loss described by the config.
    ///
    /// The outer error flags a malformed config; the inner one an invalid model.
    pub fn problem(&self) -> std::result::Result<Result<Problem<T>>, ConfigError> {
        let prefs = match (&self.preferences, &self.family) {
            (Some(p), _) => BuyerPreferences {
                utility: p.utility.clone(),
                b: p.b.clone(),
                wealth: p.wealth,
                allow_nonconvex_b: p.allow_nonconvex_b,
            },
            (None, Some(f)) => match f.problem() {
                Ok(p) => p.0,
                Err(e) => return Ok(Err(e)),
            },
            (None, None) => return Err(ConfigError::invalid("missing preferences")),
        };
        let (pp, loss) = match self.pricing()? {
            Ok(p) => p,
            Err(e) => return Ok(Err(e)),
        };
        Ok(prefs.validate().map(|_| Problem { prefs, pp, loss }))
    }

    pub fn contract(&self) -> std::result::Result<&Indemnity<T>, ConfigError> {
        self.contract
            .as_ref()
            .ok_or_else(|| ConfigError::invalid("missing contract"))
    }

    /// Solves along the configured route.
    pub fn solve(&self) -> std::result::Result<Result<SolveReport<T>>, ConfigError> {
        let cfg = &self.solver;
        if let (Route::Auto, Some(f)) = (self.route, &self.family) {
            if self.loss.is_none() && self.preferences.is_none() && self.premium.is_none() {
                return Ok(f.solve(cfg));
            }
        }
        let p = match self.problem()? {
            Ok(p) => p,
            Err(e) => return Ok(Err(e)),
        };
        let (prefs, pp, m) = (&p.prefs, &p.pp, &p.loss);
        Ok(match self.route {
            Route::Auto | Route::General => solve_general(prefs, pp, m, cfg),
            Route::Deductible => solve_deductible(prefs, pp, m, cfg),
            Route::MaxLimit => solve_max_limit(prefs, pp, m, cfg),
            Route::Diml => solve_diml(prefs, pp, m, cfg),
        })
    }

    /// Copy with one named parameter replaced, for sweeps.
    ///
    /// Family parameters take precedence; otherwise `theta` sets the canonical
    /// loading, `wealth` the buyer's wealth, `gamma` a CARA coefficient and
    /// `q`/`lambda` a zero-inflated exponential loss.
    pub fn with_param(&self, name: &str, v: T) -> std::result::Result<Self, ConfigError> {
        let mut out = self.clone();
        let unknown =
            || ConfigError::invalid(format!("cannot sweep parameter `{name}` in this config"));
        if let Some(f) = &mut out.family {
            let slot = match f {
                ExponentialFamily::Power {
                    gamma,
                    lambda,
                    c,
                    theta,
                    q,
                    wealth,
                    a_buyer,
                } => match name {
                    "gamma" => Some(gamma),
                    "lambda" => Some(lambda),
                    "c" => Some(c),
                    "theta" => Some(theta),
                    "q" => Some(q),
                    "wealth" => Some(wealth),
                    "a_buyer" => {
                        *a_buyer = Some(v);
                        return Ok(out);
                    }
                    _ => None,
                },
                ExponentialFamily::DualPower {
                    gamma,
                    lambda,
                    c,
                    theta,
                    q,
                    wealth,
                } => match name {
                    "gamma" => Some(gamma),
                    "lambda" => Some(lambda),
                    "c" => Some(c),
                    "theta" => Some(theta),
                    "q" => Some(q),
                    "wealth" => Some(wealth),
                    _ => None,
                },
                ExponentialFamily::Gini {
                    gamma,
                    lambda,
                    alpha,
                    theta,
                    q,
                    wealth,
                } => match name {
                    "gamma" => Some(gamma),
                    "lambda" => Some(lambda),
                    "alpha" => Some(alpha),
                    "theta" => Some(theta),
                    "q" => Some(q),
                    "wealth" => Some(wealth),
                    _ => None,
                },
            };
            if let Some(slot) = slot {
                *slot = v;
                return Ok(out);
            }
        }
        match name {
            "theta" => match &mut out.premium {
                Some(PremiumSpec { theta: Some(t), .. }) => *t = v,
                _ => return Err(unknown()),
            },
            "wealth" => match &mut out.preferences {
                Some(p) => p.wealth = v,
                None => return Err(unknown()),
            },
            "gamma" => match &mut out.preferences {
                Some(PreferencesSpec {
                    utility: Utility::Cara { gamma },
                    ..
                }) => *gamma = v,
                _ => return Err(unknown()),
            },
            "q" | "lambda" => match &mut out.loss {
                Some(LossModel::ZeroInflatedExponential { q, lambda }) => {
                    if name == "q" {
                        *q = v
                    } else {
                        *lambda = v
                    }
                }
                _ => return Err(unknown()),
            },
            _ => return Err(unknown()),
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_family_config() {
        let text = r#"{"family": {"family": "power", "gamma": 2, "lambda": 1, "c": 0.5, "theta": 0.1, "q": 0.9, "wealth": 10}}"#;
        let cfg = RunConfig::<f64>::from_json(text).unwrap();
        let p = cfg.problem().unwrap().unwrap();
        assert!((p.pp.theta - 0.1).abs() < 1e-12);
        assert!(matches!(p.loss, LossModel::ZeroInflatedExponential { .. }));
    }

    #[test]
    fn syntax_errors_carry_a_line() {
        let err = RunConfig::<f64>::from_json("{\n  \"loss\": ,\n}").unwrap_err();
        assert!(matches!(err, ConfigError::Syntax { line: 2, .. }), "{err}");
    }

    #[test]
    fn premium_forms_are_exclusive() {
        let text = r#"{"premium": {"theta": 0.1, "k": {"kind": "gini_deviation"}, "g": {"kind": "linear", "slope": 1}}}"#;
        assert!(matches!(
            RunConfig::<f64>::from_json(text),
            Err(ConfigError::Invalid(_))
        ));
        let text = r#"{"premium": {"theta": 0.1}}"#;
        assert!(RunConfig::<f64>::from_json(text).is_err());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(RunConfig::<f64>::from_json(r#"{"lossy": 1}"#).is_err());
    }

    #[test]
    fn split_premium_decomposes() {
        let text = r#"{
            "loss": {"kind": "zero_inflated_exponential", "q": 1, "lambda": 1},
            "preferences": {"utility": {"kind": "linear"}, "wealth": 5},
            "premium": {"g": {"kind": "linear", "slope": 1.1}, "h": {"kind": "gini_deviation"}}
        }"#;
        let p = RunConfig::<f64>::from_json(text)
            .unwrap()
            .problem()
            .unwrap()
            .unwrap();
        assert!((p.pp.theta - 0.1).abs() < 1e-15);
        assert!((p.pp.tk(0.5) - (0.55 + 0.25)).abs() < 1e-12);
    }

    #[test]
    fn sweep_parameters_reach_the_family() {
        let text = r#"{"family": {"family": "gini", "gamma": 2, "lambda": 1, "alpha": 0.4, "theta": 0.05, "q": 0.8, "wealth": 10}}"#;
        let cfg = RunConfig::<f64>::from_json(text).unwrap();
        let moved = cfg.with_param("alpha", 0.2).unwrap();
        assert!(
            matches!(moved.family, Some(ExponentialFamily::Gini { alpha, .. }) if alpha == 0.2)
        );
        assert!(cfg.with_param("c", 0.2).is_err());
    }
}
