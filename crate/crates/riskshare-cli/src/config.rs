//! Experiment configuration: one human-editable TOML file per run.
//! Unknown keys are rejected everywhere; no environment variable affects
//! results.

use serde::{Deserialize, Serialize};

use riskshare::conjugate::ConjParams;
use riskshare::infconv::{AgentPopulation, SolverParams};
use riskshare::{FiniteProbSpace, ProbMeasure};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExperimentKind {
    #[serde(rename = "eval")]
    Eval,
    #[serde(rename = "conj")]
    Conj,
    #[serde(rename = "infconv")]
    Infconv,
    #[serde(rename = "degeneracy")]
    Degeneracy,
    #[serde(rename = "improperness")]
    Improperness,
    #[serde(rename = "convexify")]
    Convexify,
    #[serde(rename = "consistency")]
    Consistency,
    #[serde(rename = "identity-var")]
    IdentityVar,
    #[serde(rename = "group-check")]
    GroupCheck,
    #[serde(rename = "conditional-check")]
    ConditionalCheck,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Eval => "eval",
            ExperimentKind::Conj => "conj",
            ExperimentKind::Infconv => "infconv",
            ExperimentKind::Degeneracy => "degeneracy",
            ExperimentKind::Improperness => "improperness",
            ExperimentKind::Convexify => "convexify",
            ExperimentKind::Consistency => "consistency",
            ExperimentKind::IdentityVar => "identity-var",
            ExperimentKind::GroupCheck => "group-check",
            ExperimentKind::ConditionalCheck => "conditional-check",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            ExperimentKind::Eval => "evaluate catalog risk measures on payoffs (axiom layer)",
            ExperimentKind::Conj => {
                "tabulate Fenchel conjugates over the simplex (dual representation)"
            }
            ExperimentKind::Infconv => {
                "solve the risk-sharing value function with dual bounds (weak duality)"
            }
            ExperimentKind::Degeneracy => {
                "scan for conjugate degeneracy (quantiles collapse at atom-mass levels)"
            }
            ExperimentKind::Improperness => {
                "probe zero-sum transfers for a value function pinned at -infinity"
            }
            ExperimentKind::Convexify => {
                "replicate one agent and fit the convexity-violation decay (aggregate convexification)"
            }
            ExperimentKind::Consistency => {
                "dilatation-monotonicity and stochastic-dominance consistency checks"
            }
            ExperimentKind::IdentityVar => {
                "two-agent quantile convolution versus the summed-level quantile (identity failure)"
            }
            ExperimentKind::GroupCheck => {
                "grouped convolution agrees with the direct solve (partitioned populations)"
            }
            ExperimentKind::ConditionalCheck => {
                "block-constant versus unrestricted allocations on a sub-algebra"
            }
        }
    }

    pub fn all() -> [ExperimentKind; 10] {
        [
            ExperimentKind::Eval,
            ExperimentKind::Conj,
            ExperimentKind::Infconv,
            ExperimentKind::Degeneracy,
            ExperimentKind::Improperness,
            ExperimentKind::Convexify,
            ExperimentKind::Consistency,
            ExperimentKind::IdentityVar,
            ExperimentKind::GroupCheck,
            ExperimentKind::ConditionalCheck,
        ]
    }

    /// Experiments that draw random samples or run seeded restarts.
    pub fn randomized(self) -> bool {
        !matches!(
            self,
            ExperimentKind::Eval
                | ExperimentKind::Conj
                | ExperimentKind::Degeneracy
                | ExperimentKind::Improperness
        )
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvexifySection {
    pub n_list: Vec<usize>,
    pub segment_x: Vec<f64>,
    pub segment_y: Vec<f64>,
    #[serde(default = "default_lambda_grid")]
    pub lambda_grid: Vec<f64>,
}

fn default_lambda_grid() -> Vec<f64> {
    vec![0.0, 0.25, 0.5, 0.75, 1.0]
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsistencySection {
    pub samples: usize,
    /// Reference for conditioning; defaults to the space's own measure.
    pub q: Option<ProbMeasure>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentityVarSection {
    #[serde(default = "default_identity_samples")]
    pub samples: usize,
}

fn default_identity_samples() -> usize {
    200
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupCheckSection {
    pub groups: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionalCheckSection {
    pub blocks: Vec<Vec<usize>>,
    pub q: Option<ProbMeasure>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImpropernessSection {
    #[serde(default = "default_probe_steps")]
    pub steps: usize,
}

fn default_probe_steps() -> usize {
    8
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seed: Option<u64>,
    pub space: FiniteProbSpace,
    pub population: Option<AgentPopulation>,
    pub payoffs: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub solver: SolverParams,
    #[serde(default)]
    pub conjugate: ConjParams,
    pub convexify: Option<ConvexifySection>,
    pub consistency: Option<ConsistencySection>,
    pub identity_var: Option<IdentityVarSection>,
    pub group_check: Option<GroupCheckSection>,
    pub conditional_check: Option<ConditionalCheckSection>,
    pub improperness: Option<ImpropernessSection>,
    #[serde(default)]
    pub output: OutputSection,
}

impl ExperimentConfig {
    /// Structural validation beyond what serde enforces.
    pub fn validate(&self) -> Result<(), String> {
        if self.experiment.randomized() && self.seed.is_none() {
            return Err(format!(
                "experiment '{}' is randomized and requires a seed",
                self.experiment.name()
            ));
        }
        let needs_population = !matches!(self.experiment, ExperimentKind::IdentityVar);
        if needs_population && self.population.is_none() {
            return Err(format!(
                "experiment '{}' requires a [population] section",
                self.experiment.name()
            ));
        }
        let needs_payoffs = matches!(
            self.experiment,
            ExperimentKind::Eval
                | ExperimentKind::Infconv
                | ExperimentKind::GroupCheck
                | ExperimentKind::ConditionalCheck
        );
        if needs_payoffs && self.payoffs.as_ref().is_none_or(|p| p.is_empty()) {
            return Err(format!(
                "experiment '{}' requires a nonempty 'payoffs' list",
                self.experiment.name()
            ));
        }
        match self.experiment {
            ExperimentKind::Convexify if self.convexify.is_none() => {
                Err("experiment 'convexify' requires a [convexify] section".into())
            }
            ExperimentKind::Consistency if self.consistency.is_none() => {
                Err("experiment 'consistency' requires a [consistency] section".into())
            }
            ExperimentKind::GroupCheck if self.group_check.is_none() => {
                Err("experiment 'group-check' requires a [group_check] section".into())
            }
            ExperimentKind::ConditionalCheck if self.conditional_check.is_none() => {
                Err("experiment 'conditional-check' requires a [conditional_check] section".into())
            }
            _ => Ok(()),
        }
    }
}
