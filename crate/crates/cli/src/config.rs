//! Scenario configuration: a single JSON document describing the model, the
//! run window, and an optional harvest input. Constants expand to tables at
//! build time; unknown keys are rejected.

use serde::Deserialize;

use delaylab_core::population::{
    build_model, AgePopulationModel, BirthSpec, ConfigError, HarvestSignal, HistoryInit,
    ModelConfig, RateSpec,
};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub model: ModelBlock,
    pub run: RunBlock,
    #[serde(default)]
    pub harvest: Option<HarvestBlock>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub a_max: f64,
    pub n_age: usize,
    #[serde(default)]
    pub dt: Option<f64>,
    pub r: f64,
    pub mu_inf: f64,
    pub mu: RateJson,
    pub alpha: RateJson,
    #[serde(default = "zero_rate")]
    pub eta: RateJson,
    pub birth: BirthJson,
    pub history: HistoryJson,
}

fn zero_rate() -> RateJson {
    RateJson::Constant { value: 0.0 }
}

#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum RateJson {
    Constant { value: f64 },
    Table { values: Vec<f64> },
}

impl RateJson {
    fn to_spec(&self) -> RateSpec {
        match self {
            RateJson::Constant { value } => RateSpec::Constant(*value),
            RateJson::Table { values } => RateSpec::Table(values.clone()),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case", deny_unknown_fields)]
pub enum BirthJson {
    B1 { beta: BetaTableJson },
    B2 { beta: RateJson },
}

#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum BetaTableJson {
    Constant { value: f64 },
    Table { rows: Vec<Vec<f64>> },
}

#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum HistoryJson {
    /// φ(s, a) = amplitude·e^{−rate·a}, constant in s.
    ExpAge { amplitude: f64, rate: f64 },
    /// φ(s, a) = value everywhere.
    Constant { value: f64 },
    /// One profile for all s.
    Table { profile: Vec<f64> },
    /// One profile per ring slot, oldest first.
    Full { rows: Vec<Vec<f64>> },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarvestBlock {
    pub q: HarvestQJson,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum HarvestQJson {
    /// q(t, a) = time[i]·age[j], time index 0 at t = −r.
    Separable { time: Vec<f64>, age: Vec<f64> },
    /// q ≡ value on the whole (age, time) window.
    Constant { value: f64 },
    /// Full table, one row per grid time starting at t = −r.
    Table { rows: Vec<Vec<f64>> },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunBlock {
    pub t_max: f64,
    #[serde(default = "default_discard")]
    pub discard_fraction: f64,
    #[serde(default)]
    pub snapshot_stride: Option<usize>,
}

fn default_discard() -> f64 {
    0.5
}

/// Everything a command needs to run the scenario.
pub struct Scenario {
    pub model: AgePopulationModel,
    pub history: HistoryInit,
    pub harvest: Option<HarvestSignal>,
    pub t_max: f64,
    pub discard_fraction: f64,
    pub snapshot_stride: Option<usize>,
}

impl ScenarioConfig {
    pub fn build(&self) -> Result<Scenario, ConfigError> {
        // The seed only matters for randomized probe runs; accepted here so
        // scenario files stay diffable across tools.
        let _ = self.seed;
        let m = &self.model;
        let birth = match &m.birth {
            BirthJson::B2 { beta } => match beta.to_spec() {
                RateSpec::Constant(v) => BirthSpec::B2Constant(v),
                RateSpec::Table(t) => BirthSpec::B2Table(t),
            },
            BirthJson::B1 { beta } => match beta {
                BetaTableJson::Constant { value } => BirthSpec::B1Constant(*value),
                BetaTableJson::Table { rows } => BirthSpec::B1Table(rows.clone()),
            },
        };
        let model = build_model(ModelConfig {
            a_max: m.a_max,
            n_age: m.n_age,
            dt: m.dt,
            r: m.r,
            mu: m.mu.to_spec(),
            alpha: m.alpha.to_spec(),
            eta: m.eta.to_spec(),
            birth,
            mu_inf: m.mu_inf,
        })?;

        let history = match &m.history {
            HistoryJson::ExpAge { amplitude, rate } => HistoryInit::ConstantInTime(
                (0..model.nodes()).map(|j| amplitude * (-rate * model.age_node(j)).exp()).collect(),
            ),
            HistoryJson::Constant { value } => {
                HistoryInit::ConstantInTime(vec![*value; model.nodes()])
            }
            HistoryJson::Table { profile } => HistoryInit::ConstantInTime(profile.clone()),
            HistoryJson::Full { rows } => HistoryInit::Full(rows.clone()),
        };

        let steps = (self.run.t_max / model.dt()).round() as usize;
        let slices = model.delay_steps() + steps + 1;
        let harvest = self.harvest.as_ref().map(|h| match &h.q {
            HarvestQJson::Separable { time, age } => {
                HarvestSignal::Separable { time: time.clone(), age: age.clone() }
            }
            HarvestQJson::Constant { value } => HarvestSignal::Separable {
                time: vec![1.0; slices],
                age: vec![*value; model.nodes()],
            },
            HarvestQJson::Table { rows } => HarvestSignal::Table { rows: rows.clone() },
        });

        Ok(Scenario {
            model,
            history,
            harvest,
            t_max: self.run.t_max,
            discard_fraction: self.run.discard_fraction,
            snapshot_stride: self.run.snapshot_stride,
        })
    }
}
