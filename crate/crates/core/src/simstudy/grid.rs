//! Scenario grids: config entries whose fields may be lists, expanded to the
//! cartesian product.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimand::Estimand;
use crate::estimators::EstimatorKind;
use crate::twophase::SchemeKind;

use super::run::{default_reference_n, default_reference_seed, ScenarioConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn values(&self) -> Vec<T> {
        match self {
            Self::One(x) => vec![x.clone()],
            Self::Many(v) => v.clone(),
        }
    }
}

impl<T> From<T> for OneOrMany<T> {
    fn from(x: T) -> Self {
        Self::One(x)
    }
}

fn one_false() -> OneOrMany<bool> {
    OneOrMany::One(false)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioGrid {
    #[serde(default)]
    pub name: Option<String>,
    pub m: OneOrMany<usize>,
    pub n_multiplier: OneOrMany<usize>,
    pub scheme: OneOrMany<SchemeKind>,
    pub ods: OneOrMany<bool>,
    pub v_obs: OneOrMany<usize>,
    #[serde(default)]
    pub estimands: Option<Vec<Estimand>>,
    #[serde(default)]
    pub estimators: Option<Vec<EstimatorKind>>,
    pub replications: usize,
    pub seed: u64,
    #[serde(default)]
    pub jackknife: Option<usize>,
    #[serde(default = "default_reference_n")]
    pub reference_n: usize,
    #[serde(default = "default_reference_seed")]
    pub reference_seed: u64,
    #[serde(default = "one_false")]
    pub ps_omit_w: OneOrMany<bool>,
    #[serde(default = "one_false")]
    pub outcome_omit_w: OneOrMany<bool>,
    #[serde(default)]
    pub level: Option<f64>,
}

/// Top-level layout of a grid file: a list of `[[scenario]]` tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridFile {
    pub scenario: Vec<ScenarioGrid>,
}

impl ScenarioGrid {
    /// Expands to concrete scenarios, varying `m` fastest. A name given on
    /// the grid is kept only when the grid has a single point.
    pub fn expand(&self) -> Result<Vec<ScenarioConfig>> {
        let axes = (
            self.scheme.values(),
            self.ods.values(),
            self.n_multiplier.values(),
            self.v_obs.values(),
            self.ps_omit_w.values(),
            self.outcome_omit_w.values(),
            self.m.values(),
        );
        let mut out = Vec::new();
        for &scheme in &axes.0 {
            for &ods in &axes.1 {
                for &mult in &axes.2 {
                    for &v_obs in &axes.3 {
                        for &ps in &axes.4 {
                            for &om in &axes.5 {
                                for &m in &axes.6 {
                                    let mut c = ScenarioConfig::new(m, mult, scheme, ods, v_obs);
                                    c.replications = self.replications;
                                    c.seed = self.seed;
                                    c.jackknife = self.jackknife;
                                    c.reference_n = self.reference_n;
                                    c.reference_seed = self.reference_seed;
                                    c.ps_omit_w = ps;
                                    c.outcome_omit_w = om;
                                    if let Some(e) = &self.estimands {
                                        c.estimands = e.clone();
                                    }
                                    if let Some(k) = &self.estimators {
                                        c.estimators = k.clone();
                                    }
                                    if let Some(l) = self.level {
                                        c.level = l;
                                    }
                                    c.validate()?;
                                    out.push(c);
                                }
                            }
                        }
                    }
                }
            }
        }
        if out.is_empty() {
            return Err(Error::InvalidArgument("scenario grid has an empty axis".into()));
        }
        if out.len() == 1 {
            out[0].name = self.name.clone();
        }
        Ok(out)
    }
}

impl GridFile {
    pub fn parse_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn expand(&self) -> Result<Vec<ScenarioConfig>> {
        let mut out = Vec::new();
        for g in &self.scenario {
            out.extend(g.expand()?);
        }
        Ok(out)
    }
}
