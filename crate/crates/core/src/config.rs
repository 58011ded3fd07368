//! Declarative TOML experiment configuration.
//!
//! Unknown keys are a hard error: a typo in a config must fail loudly, not
//! silently change the experiment. All randomness flows from `rng.master_seed`;
//! there is no ambient entropy anywhere in the crate.

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::experiments::{
    AbelianConfig, AprioriConfig, GffConfig, HitConfig, HzetaConfig, MartingaleConfig,
    MaxFluctConfig, VarianceTarget,
};
use crate::graphs::BaseGraph;
use crate::harmonic::{CoeffFn, Mode, TestFunction};
use crate::idla::WalkConfig;
use crate::walk::CylinderState;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub graph: GraphConfig,
    #[serde(default)]
    pub rng: RngConfig,
    #[serde(default)]
    pub experiment: Option<ExperimentConfig>,
    #[serde(default)]
    pub tolerances: Option<ToleranceConfig>,
    #[serde(default)]
    pub output: Option<OutputConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphConfig {
    /// One of `cycle`, `torus`, `petersen`, `complete`, `hypercube`.
    pub family: String,
    pub n: Option<usize>,
    pub dim: Option<usize>,
    pub k: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RngConfig {
    #[serde(default)]
    pub master_seed: u64,
    /// Total-variation tolerance of the sub-level fast-forward; 0 selects
    /// exact mode.
    #[serde(default = "default_eps")]
    pub fastforward_eps: f64,
}

fn default_eps() -> f64 {
    1e-9
}

impl Default for RngConfig {
    fn default() -> Self {
        RngConfig {
            master_seed: 0,
            fastforward_eps: default_eps(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: Option<String>,
    pub y0: Option<f64>,
    pub modes: Option<Vec<ModeConfig>>,
    pub replicates: Option<usize>,
    /// Particle count for `simulate` and the height-tail grid.
    pub t: Option<u64>,
    /// Cycle sizes for sweep experiments.
    pub sizes: Option<Vec<usize>>,
    /// Stopping level / target layer.
    pub level: Option<i64>,
    pub h_grid: Option<Vec<i64>>,
    pub walks: Option<u64>,
    /// Vertical scale override.
    pub a_n: Option<f64>,
    /// `closed_form` (cycles) or `finite_n`.
    pub variance_target: Option<String>,
    pub nu: Option<f64>,
    pub c: Option<f64>,
    /// Target column of the layer-hit validation.
    pub zeta_column: Option<usize>,
    pub window_lo: Option<i64>,
    /// `x,y` pairs flattened.
    pub starts: Option<Vec<i64>>,
    pub exchange_trials: Option<usize>,
    pub permutations: Option<usize>,
    pub coupling_trials: Option<usize>,
    /// Debug negative control for the uniformity experiment.
    #[serde(default)]
    pub debug_biased_release: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeConfig {
    pub k: usize,
    /// `const`, `poly` or `table`.
    pub family: String,
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceConfig {
    #[serde(default = "default_spectral_tol")]
    pub spectral: f64,
    #[serde(default = "default_harmonic_tol")]
    pub harmonic: f64,
}

fn default_spectral_tol() -> f64 {
    1e-8
}

fn default_harmonic_tol() -> f64 {
    1e-10
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<String>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("config parse error: {e}")))
    }

    pub fn build_graph(&self) -> Result<BaseGraph> {
        let g = &self.graph;
        let need = |v: Option<usize>, what: &str| -> Result<usize> {
            v.ok_or_else(|| Error::Config(format!("graph.{what} required for {}", g.family)))
        };
        match g.family.as_str() {
            "cycle" => crate::graphs::build_cycle(need(g.n, "n")?),
            "torus" => crate::graphs::build_torus(need(g.n, "n")?, need(g.dim, "dim")?),
            "petersen" => {
                crate::graphs::build_generalized_petersen(need(g.n, "n")?, need(g.k, "k")?)
            }
            "complete" => crate::graphs::build_complete(need(g.n, "n")?),
            "hypercube" => crate::graphs::build_hypercube(need(g.dim, "dim")?),
            other => Err(Error::Config(format!("unknown graph family `{other}`"))),
        }
    }

    pub fn walk_config(&self) -> WalkConfig {
        WalkConfig {
            eps: self.rng.fastforward_eps,
            ..WalkConfig::default()
        }
    }

    pub fn test_function(&self) -> Result<TestFunction> {
        let modes = self
            .experiment
            .as_ref()
            .and_then(|e| e.modes.as_ref())
            .ok_or_else(|| Error::Config("experiment.modes required".into()))?;
        let parsed = modes
            .iter()
            .map(|m| -> Result<Mode> {
                let coeff = match m.family.as_str() {
                    "const" => {
                        if m.params.len() != 1 {
                            return Err(Error::Config(
                                "const mode takes exactly one parameter".into(),
                            ));
                        }
                        CoeffFn::Const(m.params[0])
                    }
                    "poly" => {
                        if m.params.is_empty() {
                            return Err(Error::Config("poly mode needs coefficients".into()));
                        }
                        CoeffFn::Poly(m.params.clone())
                    }
                    "table" => {
                        if m.params.len() < 4 || m.params.len() % 2 != 0 {
                            return Err(Error::Config(
                                "table mode needs interleaved y,value pairs".into(),
                            ));
                        }
                        let mut nodes: Vec<(f64, f64)> = m
                            .params
                            .chunks(2)
                            .map(|c| (c[0], c[1]))
                            .collect();
                        nodes.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
                        CoeffFn::Table(nodes)
                    }
                    other => {
                        return Err(Error::Config(format!("unknown mode family `{other}`")))
                    }
                };
                Ok(Mode { k: m.k, coeff })
            })
            .collect::<Result<Vec<_>>>()?;
        TestFunction::new(parsed)
    }

    fn experiment(&self) -> Result<&ExperimentConfig> {
        self.experiment
            .as_ref()
            .ok_or_else(|| Error::Config("missing [experiment] table".into()))
    }

    pub fn gff_config(&self) -> Result<GffConfig> {
        let e = self.experiment()?;
        let target = match e.variance_target.as_deref() {
            None | Some("closed_form") => VarianceTarget::ClosedForm,
            Some("finite_n") => VarianceTarget::FiniteN,
            Some(other) => {
                return Err(Error::Config(format!("unknown variance target `{other}`")))
            }
        };
        Ok(GffConfig {
            graph: self.build_graph()?,
            y0: e
                .y0
                .ok_or_else(|| Error::Config("experiment.y0 required".into()))?,
            test_function: self.test_function()?,
            replicates: e
                .replicates
                .ok_or_else(|| Error::Config("experiment.replicates required".into()))?,
            seed: self.rng.master_seed,
            walk: self.walk_config(),
            a_n: e.a_n,
            target,
        })
    }

    pub fn max_fluct_config(&self) -> Result<MaxFluctConfig> {
        let e = self.experiment()?;
        Ok(MaxFluctConfig {
            sizes: e
                .sizes
                .clone()
                .ok_or_else(|| Error::Config("experiment.sizes required".into()))?,
            replicates_per_size: e
                .replicates
                .ok_or_else(|| Error::Config("experiment.replicates required".into()))?,
            seed: self.rng.master_seed,
            walk: self.walk_config(),
            nu: e.nu.unwrap_or(1.0),
            corridor_c: e.c,
        })
    }

    pub fn apriori_config(&self) -> Result<AprioriConfig> {
        let e = self.experiment()?;
        Ok(AprioriConfig {
            graph: self.build_graph()?,
            t: e
                .t
                .ok_or_else(|| Error::Config("experiment.t required".into()))?,
            h_grid: e
                .h_grid
                .clone()
                .ok_or_else(|| Error::Config("experiment.h_grid required".into()))?,
            replicates: e
                .replicates
                .ok_or_else(|| Error::Config("experiment.replicates required".into()))?,
            seed: self.rng.master_seed,
            walk: self.walk_config(),
        })
    }

    pub fn hit_config(&self) -> Result<HitConfig> {
        let e = self.experiment()?;
        Ok(HitConfig {
            graph: self.build_graph()?,
            level: e.level.unwrap_or(10),
            walks: e.walks.unwrap_or(100_000),
            seed: self.rng.master_seed,
            walk: self.walk_config(),
            biased_release: e.debug_biased_release,
        })
    }

    pub fn abelian_config(&self) -> Result<AbelianConfig> {
        let defaults = AbelianConfig::default();
        let e = self.experiment()?;
        Ok(AbelianConfig {
            seed: self.rng.master_seed,
            exchange_trials: e.exchange_trials.unwrap_or(defaults.exchange_trials),
            permutations: e.permutations.unwrap_or(defaults.permutations),
            coupling_trials: e.coupling_trials.unwrap_or(defaults.coupling_trials),
            walk: self.walk_config(),
        })
    }

    pub fn hzeta_config(&self) -> Result<HzetaConfig> {
        let e = self.experiment()?;
        let level = e.level.unwrap_or(4);
        let starts = match &e.starts {
            None => vec![
                CylinderState { x: 0, y: 0 },
                CylinderState { x: 1, y: -2 },
                CylinderState { x: 2, y: level - 1 },
            ],
            Some(flat) => {
                if flat.len() % 2 != 0 || flat.is_empty() {
                    return Err(Error::Config("starts must be x,y pairs".into()));
                }
                flat.chunks(2)
                    .map(|c| CylinderState {
                        x: c[0] as usize,
                        y: c[1],
                    })
                    .collect()
            }
        };
        Ok(HzetaConfig {
            graph: self.build_graph()?,
            zeta: (e.zeta_column.unwrap_or(0), level),
            window_lo: e.window_lo.unwrap_or(-12),
            walks_per_start: e.walks.unwrap_or(100_000),
            starts,
            seed: self.rng.master_seed,
            walk: self.walk_config(),
        })
    }

    pub fn martingale_config(&self) -> Result<MartingaleConfig> {
        let e = self.experiment()?;
        Ok(MartingaleConfig {
            graph: self.build_graph()?,
            t: e.t.unwrap_or(64),
            stop_level: e.level.unwrap_or(4),
            zeta_column: e.zeta_column.unwrap_or(0),
            test_function: self.test_function()?,
            a_n: e.a_n,
            replicates: e.replicates.unwrap_or(500),
            seed: self.rng.master_seed,
            walk: self.walk_config(),
        })
    }
}
