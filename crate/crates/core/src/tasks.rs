//! The three training tasks of the pipeline and their sample sets.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::graph::ModelGraph;
use crate::labels::{CoarseLabel, FineLabel};
use crate::runtime::{dispatch_window, Models};
use crate::synth::{DatasetSplit, Example};
use crate::train::{evaluate, train_model, ConfusionMatrix, Sample, TrainConfig, TrainHistory};

/// Which classifier a sample set is built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    /// Coarse A/B/C over every window.
    FirstLayer,
    /// A1..A4 over moving windows.
    Plmn,
    /// B1/B2 over stationary windows.
    Stationary,
}

impl Role {
    pub fn num_classes(self) -> usize {
        match self {
            Role::FirstLayer => CoarseLabel::ALL.len(),
            Role::Plmn => FineLabel::MOVING.len(),
            Role::Stationary => FineLabel::STATIONARY.len(),
        }
    }

    /// Class index of `label` for this role, or `None` if the role does not
    /// see such windows.
    pub fn class_of(self, label: FineLabel) -> Option<usize> {
        match (self, label.coarse()) {
            (Role::FirstLayer, c) => Some(c.index()),
            (Role::Plmn, CoarseLabel::A) | (Role::Stationary, CoarseLabel::B) => Some(label.index_in_group()),
            _ => None,
        }
    }

    pub fn class_names(self) -> Vec<&'static str> {
        match self {
            Role::FirstLayer => CoarseLabel::ALL.iter().map(|c| c.as_str()).collect(),
            Role::Plmn => FineLabel::MOVING.iter().map(|l| l.as_str()).collect(),
            Role::Stationary => FineLabel::STATIONARY.iter().map(|l| l.as_str()).collect(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Role::FirstLayer => "first",
            Role::Plmn => "plmn",
            Role::Stationary => "stationary",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "first" | "first_layer" => Ok(Role::FirstLayer),
            "plmn" => Ok(Role::Plmn),
            "stationary" => Ok(Role::Stationary),
            _ => Err(Error::InvalidArgument(format!("unknown module `{s}`"))),
        }
    }
}

/// Samples of the windows relevant to `role`, with inputs laid out for
/// `graph`.
pub fn samples_for(graph: &ModelGraph, role: Role, examples: &[Example]) -> Result<Vec<Sample>> {
    if graph.num_classes() != role.num_classes() {
        return Err(Error::InvalidArgument(format!(
            "{role} task has {} classes but the model outputs {}",
            role.num_classes(),
            graph.num_classes()
        )));
    }
    examples
        .iter()
        .filter_map(|e| role.class_of(e.label()).map(|c| (e, c)))
        .map(|(e, c)| Ok(Sample::labeled(graph.inputs_from_images(&e.images)?, c, role.num_classes())))
        .collect()
}

/// Trains `graph` for `role` on the train split, early-stopping on val.
pub fn train_role(graph: &ModelGraph, role: Role, data: &DatasetSplit, cfg: &TrainConfig) -> Result<TrainHistory> {
    let train = samples_for(graph, role, &data.train)?;
    let val = samples_for(graph, role, &data.val)?;
    train_model(graph, &train, &val, cfg)
}

pub fn evaluate_role(graph: &ModelGraph, role: Role, examples: &[Example]) -> Result<(f64, ConfusionMatrix)> {
    evaluate(graph, &samples_for(graph, role, examples)?)
}

/// Accuracy of the full two-stage pipeline on fine labels, with a 7×7
/// confusion matrix.
pub fn evaluate_system(models: &Models, examples: &[Example]) -> Result<(f64, ConfusionMatrix)> {
    if examples.is_empty() {
        return Err(Error::Empty("evaluation dataset"));
    }
    let mut cm = ConfusionMatrix::new(FineLabel::ALL.len());
    for e in examples {
        let d = dispatch_window(&e.images, models)?;
        cm.record(e.label().index(), d.fine.index());
    }
    Ok((cm.accuracy(), cm))
}
