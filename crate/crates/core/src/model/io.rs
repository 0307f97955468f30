//! JSON model files.
//!
//! A file holds the model spec, every table as `{parents, child, probs}` in
//! row-major order, and optionally recognition logits, a context state and a
//! thermostat configuration.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::generative::{check_shape, GenTable, GenerativeModel};
use super::recognition::{RecTable, RecognitionModel};
use super::reference::ReferenceModel;
use super::spec::{CompleteState, ModelSpec};
use super::table::{ConditionalTable, ParamTable, ROW_TOL};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::sim::env::ThermostatConfig;

pub const VERSION: u32 = 1;

/// Rows farther than this from summing to one are rejected on load.
pub const LOAD_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableFile {
    pub parents: Vec<usize>,
    pub child: usize,
    pub probs: Vec<f64>,
    /// Softmax logits for parameterized tables; `null` stands for `-inf`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logits: Option<Vec<Option<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub floor: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub version: u32,
    pub spec: ModelSpec,
    pub tables: BTreeMap<String, TableFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<CompleteState>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thermostat: Option<ThermostatConfig>,
}

/// Everything an agent needs: generative and reference models, optionally a
/// recognition model, the context state and the task it was built for.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle<S> {
    pub gen: GenerativeModel<S>,
    pub reference: ReferenceModel<S>,
    pub rec: Option<RecognitionModel<S>>,
    pub x0: CompleteState,
    pub thermostat: Option<ThermostatConfig>,
}

impl<S: Scalar> ModelBundle<S> {
    pub fn new(gen: GenerativeModel<S>, reference: ReferenceModel<S>) -> Self {
        ModelBundle {
            gen,
            reference,
            rec: None,
            x0: CompleteState::default(),
            thermostat: None,
        }
    }

    pub fn spec(&self) -> &ModelSpec {
        self.gen.spec()
    }

    /// The recognition model, or an error naming what is missing.
    pub fn recognition(&self) -> Result<&RecognitionModel<S>> {
        self.rec
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("model file has no recognition tables".into()))
    }

    pub fn to_file(&self) -> ModelFile {
        let mut tables = BTreeMap::new();
        for which in GenTable::ALL {
            tables.insert(which.name().to_string(), plain(self.gen.table(which)));
        }
        tables.insert("ref_o".into(), plain(self.reference.ref_o()));
        tables.insert("ref_s1".into(), plain(self.reference.ref_s1()));
        if let Some(rec) = &self.rec {
            for which in RecTable::ALL {
                let p = rec.table(which);
                let mut t = plain(p.table());
                t.logits = Some(
                    p.logits()
                        .iter()
                        .map(|l| if *l == S::neg_infinity() { None } else { Some(l.as_f64()) })
                        .collect(),
                );
                t.floor = Some(p.floor());
                tables.insert(which.name().to_string(), t);
            }
        }
        ModelFile {
            version: VERSION,
            spec: *self.spec(),
            tables,
            x0: Some(self.x0),
            thermostat: self.thermostat.clone(),
        }
    }

    pub fn from_file(file: &ModelFile) -> Result<Self> {
        if file.version != VERSION {
            return Err(Error::Version(file.version));
        }
        let spec = file.spec;
        spec.validate()?;
        let get = |name: &str, shape: (Vec<usize>, usize)| -> Result<ConditionalTable<S>> {
            let t = file.tables.get(name).ok_or_else(|| Error::InvalidTable {
                name: name.into(),
                reason: "missing from model file".into(),
            })?;
            let table = load_table(name, t)?;
            check_shape(name, &table, shape)?;
            Ok(table)
        };
        let mut g = GenTable::ALL.iter().map(|&w| get(w.name(), w.shape(&spec)));
        let mut next = || g.next().expect("six tables");
        let gen = GenerativeModel::new(spec, next()?, next()?, next()?, next()?, next()?, next()?)?;
        let reference = ReferenceModel::new(
            &spec,
            get("ref_o", ReferenceModel::<S>::shape_o(&spec))?,
            get("ref_s1", ReferenceModel::<S>::shape_s1(&spec))?,
        )?;
        let present = RecTable::ALL.iter().filter(|w| file.tables.contains_key(w.name())).count();
        let rec = match present {
            0 => None,
            4 => {
                let mut params = Vec::with_capacity(4);
                for which in RecTable::ALL {
                    let (parents, child) = which.shape(&spec);
                    let t = &file.tables[which.name()];
                    let floor = t.floor.unwrap_or(true);
                    let param = match &t.logits {
                        Some(logits) => {
                            let logits = logits.iter().map(|l| l.map_or(S::neg_infinity(), S::of)).collect();
                            ParamTable::from_logits(parents.clone(), child, logits, floor)?
                        }
                        None => ParamTable::from_table(&get(which.name(), (parents.clone(), child))?, floor),
                    };
                    check_shape(which.name(), param.table(), (parents, child))?;
                    params.push(param);
                }
                let mut it = params.into_iter();
                let mut next = || it.next().expect("four tables");
                Some(RecognitionModel::new(spec, next(), next(), next(), next())?)
            }
            _ => {
                return Err(Error::InvalidTable {
                    name: "recognition".into(),
                    reason: "either all four q_* tables or none must be present".into(),
                })
            }
        };
        let x0 = file.x0.unwrap_or_default();
        spec.check_state(&x0)?;
        if let Some(config) = &file.thermostat {
            config.validate()?;
            if config.spec() != spec {
                return Err(Error::SpecMismatch("thermostat configuration does not match the model spec".into()));
            }
        }
        Ok(ModelBundle {
            gen,
            reference,
            rec,
            x0,
            thermostat: file.thermostat.clone(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_file(&serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn plain<S: Scalar>(table: &ConditionalTable<S>) -> TableFile {
    TableFile {
        parents: table.parent_dims().to_vec(),
        child: table.child_dim(),
        probs: table.probs().iter().map(|p| p.as_f64()).collect(),
        logits: None,
        floor: None,
    }
}

/// Rows within `ROW_TOL` of one are kept verbatim, rows within `LOAD_TOL`
/// are renormalized, anything else is rejected.
fn load_table<S: Scalar>(name: &str, t: &TableFile) -> Result<ConditionalTable<S>> {
    let rows: usize = t.parents.iter().product();
    if t.child == 0 || t.probs.len() != rows * t.child {
        return Err(Error::InvalidTable {
            name: name.into(),
            reason: format!("expected {} entries, found {}", rows * t.child, t.probs.len()),
        });
    }
    let mut probs: Vec<f64> = t.probs.clone();
    for (r, row) in probs.chunks_mut(t.child).enumerate() {
        if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::InvalidTable {
                name: name.into(),
                reason: format!("row {r} has a negative or non-finite entry"),
            });
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > LOAD_TOL {
            return Err(Error::InvalidTable {
                name: name.into(),
                reason: format!("row {r} sums to {sum}"),
            });
        }
        if (sum - 1.0).abs() > ROW_TOL {
            row.iter_mut().for_each(|p| *p /= sum);
        }
    }
    ConditionalTable::from_probs(t.parents.clone(), t.child, probs.into_iter().map(S::of).collect())
}
