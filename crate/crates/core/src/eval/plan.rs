//! Experiment designs: leave-one-patient-out per domain, cross-domain
//! transfer in both directions, and LOPO on the joint set.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{Domain, Frame};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentId {
    Oc,
    Vc,
    Oc2vc,
    Vc2oc,
    Joint,
}

/// Which side of the two-domain split a frame belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    OralCavity,
    VocalFolds,
}

pub fn side(domain: Domain) -> Side {
    match domain {
        Domain::Oc | Domain::SyntheticA => Side::OralCavity,
        Domain::Vc | Domain::SyntheticB => Side::VocalFolds,
    }
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 5] = [
        ExperimentId::Oc,
        ExperimentId::Vc,
        ExperimentId::Oc2vc,
        ExperimentId::Vc2oc,
        ExperimentId::Joint,
    ];

    pub fn cli_name(self) -> &'static str {
        match self {
            ExperimentId::Oc => "oc",
            ExperimentId::Vc => "vc",
            ExperimentId::Oc2vc => "oc2vc",
            ExperimentId::Vc2oc => "vc2oc",
            ExperimentId::Joint => "joint",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ExperimentId::Oc => "OC",
            ExperimentId::Vc => "VC",
            ExperimentId::Oc2vc => "OC-to-VC",
            ExperimentId::Vc2oc => "VC-to-OC",
            ExperimentId::Joint => "OC+VC",
        }
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ExperimentId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentId::ALL
            .into_iter()
            .find(|e| s.eq_ignore_ascii_case(e.cli_name()) || s.eq_ignore_ascii_case(e.label()))
            .ok_or_else(|| Error::Usage(format!("unknown experiment {s:?} (expected oc, vc, oc2vc, vc2oc or joint)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fold {
    pub id: usize,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub experiment: ExperimentId,
    pub folds: Vec<Fold>,
}

impl ExperimentPlan {
    /// Fails if any fold shares a patient between training and test.
    pub fn check_leakage(&self) -> Result<()> {
        for fold in &self.folds {
            let train: BTreeSet<&String> = fold.train.iter().collect();
            if let Some(p) = fold.test.iter().find(|p| train.contains(p)) {
                return Err(Error::Config(format!("fold {}: patient {p} in both training and test", fold.id)));
            }
        }
        Ok(())
    }
}

/// One fold per patient in sorted order; each tests on that patient alone.
pub fn make_lopo_plan(patients: &[String]) -> Result<Vec<Fold>> {
    let sorted: BTreeSet<&String> = patients.iter().collect();
    if sorted.len() < 3 {
        return Err(Error::Config(format!(
            "leave-one-patient-out needs at least 3 patients, got {}",
            sorted.len()
        )));
    }
    Ok(sorted
        .iter()
        .enumerate()
        .map(|(id, &held)| Fold {
            id,
            train: sorted.iter().filter(|&&p| p != held).map(|p| p.to_string()).collect(),
            test: vec![held.clone()],
        })
        .collect())
}

fn patients_on(frames: &[Frame], s: Option<Side>) -> Vec<String> {
    let set: BTreeSet<&String> = frames
        .iter()
        .filter(|f| s.map_or(true, |s| side(f.domain) == s))
        .map(|f| &f.patient_id)
        .collect();
    set.into_iter().cloned().collect()
}

pub fn make_plan(experiment: ExperimentId, frames: &[Frame]) -> Result<ExperimentPlan> {
    let transfer = |from: Side, to: Side| -> Result<Vec<Fold>> {
        let (train, test) = (patients_on(frames, Some(from)), patients_on(frames, Some(to)));
        if train.is_empty() || test.is_empty() {
            return Err(Error::Config(format!("{experiment} needs frames from both domains")));
        }
        Ok(vec![Fold { id: 0, train, test }])
    };
    let folds = match experiment {
        ExperimentId::Oc => make_lopo_plan(&patients_on(frames, Some(Side::OralCavity)))?,
        ExperimentId::Vc => make_lopo_plan(&patients_on(frames, Some(Side::VocalFolds)))?,
        ExperimentId::Oc2vc => transfer(Side::OralCavity, Side::VocalFolds)?,
        ExperimentId::Vc2oc => transfer(Side::VocalFolds, Side::OralCavity)?,
        ExperimentId::Joint => make_lopo_plan(&patients_on(frames, None))?,
    };
    let plan = ExperimentPlan { experiment, folds };
    plan.check_leakage()?;
    Ok(plan)
}
