use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{mean, sample_sd};
use crate::protocol::ConditionKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub subject_id: String,
    pub condition: ConditionKind,
    pub value: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet {
    pub rows: Vec<Observation>,
}

impl ObservationSet {
    pub fn push(&mut self, subject_id: &str, condition: ConditionKind, value: f64) {
        self.rows.push(Observation { subject_id: subject_id.into(), condition, value });
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    /// Row indices grouped by subject, subjects in sorted order.
    pub fn by_subject(&self) -> BTreeMap<&str, Vec<usize>> {
        let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, r) in self.rows.iter().enumerate() {
            groups.entry(r.subject_id.as_str()).or_default().push(i);
        }
        groups
    }
}

impl FromIterator<Observation> for ObservationSet {
    fn from_iter<T: IntoIterator<Item = Observation>>(iter: T) -> Self {
        ObservationSet { rows: iter.into_iter().collect() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub observations: ObservationSet,
    /// Subjects with fewer than two rows or zero variance; their rows are 0.
    pub degenerate_subjects: Vec<String>,
}

/// Z-scores every subject's values with that subject's mean and sample SD,
/// pooling both conditions. Row order is preserved.
pub fn z_normalize_per_subject(obs: &ObservationSet) -> Normalized {
    let mut out = obs.clone();
    let mut degenerate_subjects = Vec::new();
    for (subject, idx) in obs.by_subject() {
        let values: Vec<f64> = idx.iter().map(|&i| obs.rows[i].value).collect();
        let m = mean(&values).unwrap_or(0.0);
        match sample_sd(&values).filter(|sd| *sd > 0.0 && sd.is_finite()) {
            Some(sd) => {
                for &i in &idx {
                    out.rows[i].value = (obs.rows[i].value - m) / sd;
                }
            }
            None => {
                for &i in &idx {
                    out.rows[i].value = 0.0;
                }
                degenerate_subjects.push(String::from(subject));
            }
        }
    }
    Normalized { observations: out, degenerate_subjects }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::ConditionKind::*;
    use proptest::prelude::*;

    #[test]
    fn hand_examples() {
        let mut o = ObservationSet::default();
        for (v, c) in [(1.0, LowScore), (2.0, HighScore), (3.0, HighScore)] {
            o.push("a", c, v);
        }
        for v in [4.0, 4.0, 4.0] {
            o.push("b", LowScore, v);
        }
        let n = z_normalize_per_subject(&o);
        let vals: Vec<f64> = n.observations.rows.iter().map(|r| r.value).collect();
        assert_eq!(vals, [-1.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        assert_eq!(n.degenerate_subjects, ["b"]);
    }

    #[test]
    fn subjects_are_independent_of_concatenation_order() {
        let mut a = ObservationSet::default();
        a.push("x", LowScore, 1.0);
        a.push("x", HighScore, 5.0);
        let mut b = ObservationSet::default();
        b.push("y", LowScore, 2.0);
        b.push("y", HighScore, 3.0);
        b.push("y", HighScore, 7.0);
        let ab: ObservationSet = a.rows.iter().chain(&b.rows).cloned().collect();
        let ba: ObservationSet = b.rows.iter().chain(&a.rows).cloned().collect();
        let nab = z_normalize_per_subject(&ab).observations.rows;
        let nba = z_normalize_per_subject(&ba).observations.rows;
        assert_eq!(&nab[..2], &nba[3..]);
        assert_eq!(&nab[2..], &nba[..3]);
    }

    proptest! {
        #[test]
        fn unit_mean_and_sd(values in proptest::collection::vec(-50.0f64..50.0, 2..30)) {
            prop_assume!(sample_sd(&values).unwrap() > 1e-3);
            let mut o = ObservationSet::default();
            for (i, v) in values.iter().enumerate() {
                o.push("s", if i % 2 == 0 { LowScore } else { HighScore }, *v);
            }
            let z: Vec<f64> = z_normalize_per_subject(&o).observations.rows.iter().map(|r| r.value).collect();
            prop_assert!(mean(&z).unwrap().abs() < 1e-10);
            prop_assert!((sample_sd(&z).unwrap() - 1.0).abs() < 1e-10);
        }
    }
}
