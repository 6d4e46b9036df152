//! Per-frame result records concatenated across folds.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::data::{Frame, Label};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub frame_id: String,
    pub patient_id: String,
    pub true_label: Label,
    pub p_carcinoma: f64,
    pub fold: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultVector {
    pub records: Vec<ResultRecord>,
}

const HEADER: &str = "frame_id\tpatient_id\ttrue_label\tp_carcinoma\tfold";

impl ResultVector {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = format!("{HEADER}\n");
        for r in &self.records {
            out.push_str(&format!(
                "{}\t{}\t{}\t{:.17e}\t{}\n",
                r.frame_id, r.patient_id, r.true_label, r.p_carcinoma, r.fold
            ));
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h == HEADER => {}
            _ => {
                return Err(Error::Parse {
                    path: "results".into(),
                    line: 1,
                    message: "missing result header".into(),
                })
            }
        }
        let mut records = Vec::new();
        for (i, line) in lines {
            let bad = |m: &str| Error::Parse {
                path: "results".into(),
                line: i + 1,
                message: m.into(),
            };
            let cols: Vec<&str> = line.split('\t').collect();
            let [frame, patient, label, p, fold] = cols[..] else {
                return Err(bad("expected 5 columns"));
            };
            records.push(ResultRecord {
                frame_id: frame.into(),
                patient_id: patient.into(),
                true_label: label.parse().map_err(|_| bad("unknown label"))?,
                p_carcinoma: p.parse().map_err(|_| bad("bad probability"))?,
                fold: fold.parse().map_err(|_| bad("bad fold"))?,
            });
        }
        Ok(ResultVector { records })
    }

    /// Checks that the records name each expected frame exactly once.
    pub fn check_coverage<'a>(&self, expected: impl IntoIterator<Item = &'a Frame>) -> Result<()> {
        let mut seen = BTreeSet::new();
        for r in &self.records {
            if !seen.insert(r.frame_id.as_str()) {
                return Err(Error::Config(format!("frame {} evaluated twice", r.frame_id)));
            }
        }
        let want: BTreeSet<&str> = expected.into_iter().map(|f| f.id.as_str()).collect();
        if want != seen {
            let missing = want.difference(&seen).count();
            let extra = seen.difference(&want).count();
            return Err(Error::Config(format!("result vector misses {missing} frames and has {extra} extra")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tsv_round_trip_is_exact() {
        let rv = ResultVector {
            records: vec![
                ResultRecord {
                    frame_id: "a/f0".into(),
                    patient_id: "a".into(),
                    true_label: Label::Carcinoma,
                    p_carcinoma: 0.1 + 0.2,
                    fold: 3,
                },
                ResultRecord {
                    frame_id: "b/f1".into(),
                    patient_id: "b".into(),
                    true_label: Label::ClinicallyNormal,
                    p_carcinoma: 1e-300,
                    fold: 0,
                },
            ],
        };
        assert_eq!(ResultVector::from_tsv(&rv.to_tsv()).unwrap(), rv);
        assert!(ResultVector::from_tsv("x\n").is_err());
    }
}
