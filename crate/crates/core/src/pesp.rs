//! Event-scheduling constraint systems and feasibility checks.
//!
//! A constraint `(i, j, lo, hi)` requires `lo <= pi_j - pi_i <= hi`; in the
//! periodic variant some integer `k` must satisfy
//! `lo <= pi_j - pi_i + period * k <= hi`. Only verification is provided.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::timetable::{EventKind, Minutes, Timetable, TransferOpportunity};

/// Stand-in for an unbounded upper bound.
pub const UNBOUNDED: Minutes = 1_000_000_000;

pub const DEFAULT_MIN_STANDING: Minutes = 2;

#[derive(Debug, Error, PartialEq)]
pub enum PespError {
    #[error("event `{0}` has no time assigned")]
    Unassigned(String),
    #[error("constraint {index} refers to unknown event `{event}`")]
    UnknownEvent { index: usize, event: String },
    #[error("constraint {index} has lo {lo} > hi {hi}")]
    EmptyBounds { index: usize, lo: Minutes, hi: Minutes },
    #[error("duplicate event id `{0}`")]
    DuplicateEvent(String),
    #[error("periodic verification needs a positive period")]
    MissingPeriod,
    #[error("event `{event}` has time {time} outside [0, {period})")]
    OutOfPeriod {
        event: String,
        time: Minutes,
        period: Minutes,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Constraint {
    pub i: String,
    pub j: String,
    pub lo: Minutes,
    pub hi: Minutes,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PespInstance {
    /// `None` for the non-periodic variant.
    pub period: Option<Minutes>,
    pub events: Vec<String>,
    pub constraints: Vec<Constraint>,
}

impl PespInstance {
    pub fn new(
        period: Option<Minutes>,
        events: Vec<String>,
        constraints: Vec<Constraint>,
    ) -> Result<Self, PespError> {
        let inst = PespInstance {
            period,
            events,
            constraints,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn validate(&self) -> Result<(), PespError> {
        let mut known = BTreeSet::new();
        for e in &self.events {
            if !known.insert(e.as_str()) {
                return Err(PespError::DuplicateEvent(e.clone()));
            }
        }
        for (index, c) in self.constraints.iter().enumerate() {
            for event in [&c.i, &c.j] {
                if !known.contains(event.as_str()) {
                    return Err(PespError::UnknownEvent {
                        index,
                        event: event.clone(),
                    });
                }
            }
            if c.lo > c.hi {
                return Err(PespError::EmptyBounds {
                    index,
                    lo: c.lo,
                    hi: c.hi,
                });
            }
        }
        Ok(())
    }
}

/// Candidate time stamps `pi`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TimetableVector(pub BTreeMap<String, Minutes>);

impl TimetableVector {
    fn get(&self, event: &str) -> Result<Minutes, PespError> {
        self.0
            .get(event)
            .copied()
            .ok_or_else(|| PespError::Unassigned(event.to_string()))
    }

    /// Adds `c` to every time stamp, wrapping into `[0, period)`.
    pub fn shifted(&self, c: Minutes, period: Minutes) -> Self {
        TimetableVector(
            self.0
                .iter()
                .map(|(k, v)| (k.clone(), (v + c).rem_euclid(period)))
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub index: usize,
    /// `pi_j - pi_i`
    pub difference: Minutes,
}

pub fn verify_nonperiodic(
    inst: &PespInstance,
    pi: &TimetableVector,
) -> Result<Vec<Violation>, PespError> {
    inst.validate()?;
    for e in &inst.events {
        pi.get(e)?;
    }
    let mut out = Vec::new();
    for (index, c) in inst.constraints.iter().enumerate() {
        let difference = pi.get(&c.j)? - pi.get(&c.i)?;
        if difference < c.lo || difference > c.hi {
            out.push(Violation { index, difference });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeriodicReport {
    /// Per constraint: the smallest valid `k`, or `None` if violated.
    pub witnesses: Vec<Option<i64>>,
    pub violations: Vec<Violation>,
}

impl PeriodicReport {
    pub fn is_feasible(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Valid integer range of `k` with `lo <= d + period*k <= hi`.
pub fn periodic_k_range(d: Minutes, lo: Minutes, hi: Minutes, period: Minutes) -> (i64, i64) {
    let k_min = (lo - d).div_euclid(period) + i64::from((lo - d).rem_euclid(period) != 0);
    let k_max = (hi - d).div_euclid(period);
    (k_min, k_max)
}

pub fn verify_periodic(
    inst: &PespInstance,
    pi: &TimetableVector,
) -> Result<PeriodicReport, PespError> {
    inst.validate()?;
    let period = inst
        .period
        .filter(|&p| p > 0)
        .ok_or(PespError::MissingPeriod)?;
    for e in &inst.events {
        let time = pi.get(e)?;
        if !(0..period).contains(&time) {
            return Err(PespError::OutOfPeriod {
                event: e.clone(),
                time,
                period,
            });
        }
    }
    let mut report = PeriodicReport {
        witnesses: Vec::with_capacity(inst.constraints.len()),
        violations: Vec::new(),
    };
    for (index, c) in inst.constraints.iter().enumerate() {
        let difference = pi.get(&c.j)? - pi.get(&c.i)?;
        let (k_min, k_max) = periodic_k_range(difference, c.lo, c.hi, period);
        if k_min <= k_max {
            report.witnesses.push(Some(k_min));
        } else {
            report.witnesses.push(None);
            report.violations.push(Violation { index, difference });
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ConstraintKind {
    Traveling,
    Standing,
    Transfer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PespExtraction {
    pub instance: PespInstance,
    pub kinds: Vec<ConstraintKind>,
    /// Scheduled times modulo the period.
    pub pi: TimetableVector,
    /// Raw scheduled times, for non-periodic verification.
    pub raw: TimetableVector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractOptions {
    pub min_standing: Minutes,
    pub max_window: Minutes,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        ExtractOptions {
            min_standing: DEFAULT_MIN_STANDING,
            max_window: crate::timetable::DEFAULT_TRANSFER_WINDOW,
        }
    }
}

pub fn event_id(train: &str, segment: usize, kind: EventKind) -> String {
    let tag = match kind {
        EventKind::Departure => "dep",
        EventKind::Arrival => "arr",
    };
    format!("{train}#{segment}:{tag}")
}

/// One event per departure/arrival. Traveling edges are fixed to their
/// scheduled duration, standing edges are bounded below by `min_standing`, and
/// transfer edges by `[min_transfer, max_window]`.
pub fn extract_pesp(
    tt: &Timetable,
    transfers: &[TransferOpportunity],
    period: Minutes,
    options: ExtractOptions,
) -> Result<PespExtraction, PespError> {
    if period <= 0 {
        return Err(PespError::MissingPeriod);
    }
    let mut events = Vec::new();
    let mut raw = BTreeMap::new();
    let mut constraints = Vec::new();
    let mut kinds = Vec::new();
    for run in tt.runs().values() {
        for (s, seg) in run.segments.iter().enumerate() {
            let dep = event_id(&run.id, s, EventKind::Departure);
            let arr = event_id(&run.id, s, EventKind::Arrival);
            raw.insert(dep.clone(), seg.dep_time);
            raw.insert(arr.clone(), seg.arr_time);
            let d = seg.duration();
            constraints.push(Constraint {
                i: dep.clone(),
                j: arr.clone(),
                lo: d,
                hi: d,
            });
            kinds.push(ConstraintKind::Traveling);
            if s > 0 {
                constraints.push(Constraint {
                    i: event_id(&run.id, s - 1, EventKind::Arrival),
                    j: dep.clone(),
                    lo: options.min_standing,
                    hi: UNBOUNDED,
                });
                kinds.push(ConstraintKind::Standing);
            }
            events.push(dep);
            events.push(arr);
        }
    }
    for t in transfers {
        constraints.push(Constraint {
            i: event_id(&t.from_arrival.train, t.from_arrival.segment, EventKind::Arrival),
            j: event_id(&t.to_departure.train, t.to_departure.segment, EventKind::Departure),
            lo: t.min_transfer,
            hi: options.max_window,
        });
        kinds.push(ConstraintKind::Transfer);
    }
    let instance = PespInstance::new(Some(period), events, constraints)?;
    let raw = TimetableVector(raw);
    let pi = raw.shifted(0, period);
    Ok(PespExtraction {
        instance,
        kinds,
        pi,
        raw,
    })
}

/// JSON interchange form: `{period, events, constraints:[{i,j,lo,hi}], pi}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PespDocument {
    pub period: Option<Minutes>,
    pub events: Vec<String>,
    pub constraints: Vec<Constraint>,
    pub pi: TimetableVector,
}

impl PespDocument {
    pub fn new(instance: &PespInstance, pi: &TimetableVector) -> Self {
        PespDocument {
            period: instance.period,
            events: instance.events.clone(),
            constraints: instance.constraints.clone(),
            pi: pi.clone(),
        }
    }

    pub fn into_parts(self) -> Result<(PespInstance, TimetableVector), PespError> {
        Ok((
            PespInstance::new(self.period, self.events, self.constraints)?,
            self.pi,
        ))
    }
}

/// Indexes constraints by kind, for reporting.
pub fn count_by_kind(kinds: &[ConstraintKind]) -> HashMap<ConstraintKind, usize> {
    let mut out = HashMap::new();
    for k in kinds {
        *out.entry(*k).or_insert(0) += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_events(period: Option<Minutes>, lo: Minutes, hi: Minutes) -> PespInstance {
        PespInstance::new(
            period,
            vec!["i".into(), "j".into()],
            vec![Constraint {
                i: "i".into(),
                j: "j".into(),
                lo,
                hi,
            }],
        )
        .unwrap()
    }

    fn pi(i: Minutes, j: Minutes) -> TimetableVector {
        TimetableVector([("i".to_string(), i), ("j".to_string(), j)].into_iter().collect())
    }

    /// Enumerates k in [-10, 10]; only valid when the true range lies inside.
    fn brute_force_k(d: Minutes, lo: Minutes, hi: Minutes, period: Minutes) -> Option<i64> {
        (-10..=10).find(|k| (lo..=hi).contains(&(d + period * k)))
    }

    #[test]
    fn nonperiodic_lower_bound_examples() {
        let inst = two_events(None, 15, UNBOUNDED);
        assert!(verify_nonperiodic(&inst, &pi(0, 15)).unwrap().is_empty());
        let v = verify_nonperiodic(&inst, &pi(0, 14)).unwrap();
        assert_eq!(v, vec![Violation { index: 0, difference: 14 }]);
        let empty = PespInstance::new(None, vec![], vec![]).unwrap();
        assert!(verify_nonperiodic(&empty, &TimetableVector::default()).unwrap().is_empty());
    }

    #[test]
    fn unassigned_event_is_an_error() {
        let inst = two_events(None, 0, 5);
        let partial = TimetableVector([("i".to_string(), 0)].into_iter().collect());
        assert_eq!(
            verify_nonperiodic(&inst, &partial),
            Err(PespError::Unassigned("j".into()))
        );
    }

    #[test]
    fn periodic_examples() {
        let r = verify_periodic(&two_events(Some(60), 10, 20), &pi(55, 10)).unwrap();
        assert_eq!(r.witnesses, vec![Some(1)]);
        assert!(r.is_feasible());
        let r = verify_periodic(&two_events(Some(60), 5, 10), &pi(0, 0)).unwrap();
        assert_eq!(r.witnesses, vec![None]);
        assert_eq!(r.violations.len(), 1);
        for (i, j) in [(0, 0), (59, 3), (17, 44)] {
            let r = verify_periodic(&two_events(Some(60), 7, 67), &pi(i, j)).unwrap();
            assert!(r.is_feasible());
        }
    }

    #[test]
    fn periodic_input_errors() {
        assert_eq!(
            verify_periodic(&two_events(None, 0, 5), &pi(0, 0)),
            Err(PespError::MissingPeriod)
        );
        assert!(matches!(
            verify_periodic(&two_events(Some(60), 0, 5), &pi(0, 60)),
            Err(PespError::OutOfPeriod { .. })
        ));
    }

    #[test]
    fn k_range_matches_enumeration_on_the_documented_cases() {
        assert_eq!(periodic_k_range(-45, 10, 20, 60), (1, 1));
        assert_eq!(brute_force_k(-45, 10, 20, 60), Some(1));
        let (lo, hi) = periodic_k_range(0, 5, 10, 60);
        assert!(lo > hi);
        assert_eq!(brute_force_k(0, 5, 10, 60), None);
    }

    proptest! {
        #[test]
        fn witness_reproduces_the_inequality(
            period in 1i64..200, i in 0i64..200, j in 0i64..200,
            lo in -300i64..300, width in 0i64..300,
        ) {
            let (i, j) = (i % period, j % period);
            let inst = two_events(Some(period), lo, lo + width);
            let r = verify_periodic(&inst, &pi(i, j)).unwrap();
            match r.witnesses[0] {
                Some(k) => prop_assert!((lo..=lo + width).contains(&(j - i + period * k))),
                None => prop_assert!((-5..=5).all(|k| !(lo..=lo + width).contains(&(j - i + period * k)))),
            }
            if width >= period {
                prop_assert!(r.is_feasible());
            }
        }

        #[test]
        fn translation_invariance(
            period in 1i64..200, i in 0i64..200, j in 0i64..200,
            lo in -300i64..300, width in 0i64..300, shift in -500i64..500,
        ) {
            let (i, j) = (i % period, j % period);
            let inst = two_events(Some(period), lo, lo + width);
            let base = pi(i, j);
            let a = verify_periodic(&inst, &base).unwrap().is_feasible();
            let b = verify_periodic(&inst, &base.shifted(shift, period)).unwrap().is_feasible();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn large_period_agrees_with_nonperiodic(
            i in 0i64..100, j in 0i64..100, lo in -150i64..150, width in 0i64..100,
        ) {
            // Period exceeds every |pi_j - pi_i| + hi, so only k = 0 can work.
            let period = 1000;
            let periodic = two_events(Some(period), lo, lo + width);
            let flat = two_events(None, lo, lo + width);
            let a = verify_periodic(&periodic, &pi(i, j)).unwrap();
            let b = verify_nonperiodic(&flat, &pi(i, j)).unwrap();
            prop_assert_eq!(a.is_feasible(), b.is_empty());
            if let Some(k) = a.witnesses[0] {
                prop_assert_eq!(k, 0);
            }
        }
    }

    #[test]
    fn json_round_trip() {
        let inst = two_events(Some(60), 10, 20);
        let doc = PespDocument::new(&inst, &pi(55, 10));
        let text = serde_json::to_string(&doc).unwrap();
        assert!(text.contains("\"constraints\":[{\"i\":\"i\",\"j\":\"j\",\"lo\":10,\"hi\":20}]"));
        let back: PespDocument = serde_json::from_str(&text).unwrap();
        let (inst2, pi2) = back.into_parts().unwrap();
        assert_eq!(inst2, inst);
        assert_eq!(pi2, pi(55, 10));
    }
}
