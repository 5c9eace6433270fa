use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::TimetableError;

/// Integer minutes since the start of the service day. Values above 1440 denote
/// next-day events.
pub type Minutes = i64;

pub const DEFAULT_DAY_LENGTH: Minutes = 1440;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Station {
    pub id: String,
    pub name: String,
    /// Station-specific minimal interchange time.
    pub min_transfer: Minutes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    /// ICE-like services.
    LongDistanceFast,
    /// IC/EC-like services.
    LongDistance,
    Other,
}

impl Category {
    pub const ALL: [Category; 3] = [
        Category::LongDistanceFast,
        Category::LongDistance,
        Category::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::LongDistanceFast => "long_distance_fast",
            Category::LongDistance => "long_distance",
            Category::Other => "other",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "long_distance_fast" | "ice" => Ok(Category::LongDistanceFast),
            "long_distance" | "ic" | "ec" | "ic/ec" => Ok(Category::LongDistance),
            "other" => Ok(Category::Other),
            other => Err(format!("unknown train category `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub from_station: String,
    pub dep_time: Minutes,
    pub to_station: String,
    pub arr_time: Minutes,
}

impl Segment {
    pub fn duration(&self) -> Minutes {
        self.arr_time - self.dep_time
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainRun {
    pub id: String,
    pub category: Category,
    pub segments: Vec<Segment>,
}

impl TrainRun {
    /// Segment index range `(first, last)` covering a ride from `board` to
    /// `alight`: the first departure from `board`, then the first arrival at
    /// `alight` at or after it.
    pub fn leg_span(&self, board: &str, alight: &str) -> Option<(usize, usize)> {
        let first = self.segments.iter().position(|s| s.from_station == board)?;
        let last = self.segments[first..]
            .iter()
            .position(|s| s.to_station == alight)?;
        Some((first, first + last))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Leg {
    pub train: String,
    pub board: String,
    pub alight: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassengerRoute {
    pub id: String,
    pub passenger_count: u32,
    pub legs: Vec<Leg>,
    pub planned_arrival: Minutes,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timetable {
    stations: BTreeMap<String, Station>,
    runs: BTreeMap<String, TrainRun>,
    routes: Vec<PassengerRoute>,
    day_length: Minutes,
}

impl Timetable {
    /// Builds a timetable and checks every structural invariant.
    pub fn new(
        stations: Vec<Station>,
        runs: Vec<TrainRun>,
        routes: Vec<PassengerRoute>,
        day_length: Minutes,
    ) -> Result<Self, TimetableError> {
        if day_length <= 0 {
            return Err(TimetableError::Invalid(format!(
                "day length must be positive, got {day_length}"
            )));
        }
        let mut station_map = BTreeMap::new();
        for station in stations {
            if station.min_transfer < 0 {
                return Err(TimetableError::Invalid(format!(
                    "station `{}` has negative minimal transfer time {}",
                    station.id, station.min_transfer
                )));
            }
            let id = station.id.clone();
            if station_map.insert(id.clone(), station).is_some() {
                return Err(TimetableError::Duplicate { kind: "station", id });
            }
        }
        let mut run_map = BTreeMap::new();
        for run in runs {
            validate_run(&run, &station_map)?;
            let id = run.id.clone();
            if run_map.insert(id.clone(), run).is_some() {
                return Err(TimetableError::Duplicate { kind: "train", id });
            }
        }
        let mut tt = Timetable {
            stations: station_map,
            runs: run_map,
            routes: Vec::new(),
            day_length,
        };
        let mut seen = BTreeSet::new();
        for route in &routes {
            if !seen.insert(route.id.clone()) {
                return Err(TimetableError::Duplicate {
                    kind: "route",
                    id: route.id.clone(),
                });
            }
            let planned = tt.planned_arrival(&route.id, route.passenger_count, &route.legs)?;
            if planned != route.planned_arrival {
                return Err(TimetableError::InvalidRoute {
                    route: route.id.clone(),
                    reason: format!(
                        "planned arrival {} does not match scheduled arrival {planned} of the last leg",
                        route.planned_arrival
                    ),
                });
            }
        }
        tt.routes = routes;
        Ok(tt)
    }

    /// Validates a leg sequence against this timetable and returns the route
    /// with its planned arrival filled in.
    pub fn resolve_route(
        &self,
        id: impl Into<String>,
        passenger_count: u32,
        legs: Vec<Leg>,
    ) -> Result<PassengerRoute, TimetableError> {
        let id = id.into();
        let planned_arrival = self.planned_arrival(&id, passenger_count, &legs)?;
        Ok(PassengerRoute {
            id,
            passenger_count,
            legs,
            planned_arrival,
        })
    }

    /// Replaces the passenger routes, validating each one.
    pub fn with_routes(mut self, routes: Vec<PassengerRoute>) -> Result<Self, TimetableError> {
        let stations = std::mem::take(&mut self.stations).into_values().collect();
        let runs = std::mem::take(&mut self.runs).into_values().collect();
        Timetable::new(stations, runs, routes, self.day_length)
    }

    fn planned_arrival(
        &self,
        id: &str,
        passenger_count: u32,
        legs: &[Leg],
    ) -> Result<Minutes, TimetableError> {
        let invalid = |reason: String| TimetableError::InvalidRoute {
            route: id.to_string(),
            reason,
        };
        if passenger_count == 0 {
            return Err(invalid("passenger count must be positive".into()));
        }
        if legs.is_empty() {
            return Err(invalid("route has no legs".into()));
        }
        let mut previous: Option<(&Leg, Minutes)> = None;
        for (k, leg) in legs.iter().enumerate() {
            let run = self.runs.get(&leg.train).ok_or_else(|| TimetableError::UnknownTrain {
                context: format!("route `{id}` leg {k}"),
                train: leg.train.clone(),
            })?;
            let (first, last) = run.leg_span(&leg.board, &leg.alight).ok_or_else(|| {
                invalid(format!(
                    "leg {k}: train `{}` does not run from `{}` to `{}`",
                    leg.train, leg.board, leg.alight
                ))
            })?;
            let dep = run.segments[first].dep_time;
            if let Some((prev, prev_arr)) = previous {
                if prev.alight != leg.board {
                    return Err(invalid(format!(
                        "leg {k} boards at `{}` but the previous leg alights at `{}`",
                        leg.board, prev.alight
                    )));
                }
                if prev.train == leg.train {
                    return Err(invalid(format!(
                        "leg {k} transfers to the same train `{}`",
                        leg.train
                    )));
                }
                let min_transfer = self.stations[&leg.board].min_transfer;
                if dep - prev_arr < min_transfer {
                    return Err(invalid(format!(
                        "leg {k}: transfer at `{}` has {} min, below the minimal interchange time {min_transfer}",
                        leg.board,
                        dep - prev_arr
                    )));
                }
            }
            previous = Some((leg, run.segments[last].arr_time));
        }
        Ok(previous.map(|(_, arr)| arr).unwrap_or_default())
    }

    pub fn stations(&self) -> &BTreeMap<String, Station> {
        &self.stations
    }

    pub fn station(&self, id: &str) -> Option<&Station> {
        self.stations.get(id)
    }

    pub fn runs(&self) -> &BTreeMap<String, TrainRun> {
        &self.runs
    }

    pub fn run(&self, id: &str) -> Option<&TrainRun> {
        self.runs.get(id)
    }

    pub fn routes(&self) -> &[PassengerRoute] {
        &self.routes
    }

    pub fn day_length(&self) -> Minutes {
        self.day_length
    }

    pub fn segment_count(&self) -> usize {
        self.runs.values().map(|r| r.segments.len()).sum()
    }
}

fn validate_run(
    run: &TrainRun,
    stations: &BTreeMap<String, Station>,
) -> Result<(), TimetableError> {
    if run.segments.is_empty() {
        return Err(TimetableError::Invalid(format!(
            "train `{}` has no segments",
            run.id
        )));
    }
    for (index, seg) in run.segments.iter().enumerate() {
        for station in [&seg.from_station, &seg.to_station] {
            if !stations.contains_key(station) {
                return Err(TimetableError::UnknownStation {
                    context: format!("train `{}` segment {index}", run.id),
                    station: station.clone(),
                });
            }
        }
        if seg.dep_time < 0 || seg.arr_time <= seg.dep_time {
            return Err(TimetableError::SegmentTimes {
                train: run.id.clone(),
                index,
                dep: seg.dep_time,
                arr: seg.arr_time,
            });
        }
        if index > 0 {
            let prev = &run.segments[index - 1];
            if prev.to_station != seg.from_station {
                return Err(TimetableError::Discontinuous {
                    train: run.id.clone(),
                    index,
                    expected: prev.to_station.clone(),
                    found: seg.from_station.clone(),
                });
            }
            if seg.dep_time < prev.arr_time {
                return Err(TimetableError::NonMonotone {
                    train: run.id.clone(),
                    index,
                });
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn station(id: &str, mt: Minutes) -> Station {
        Station {
            id: id.into(),
            name: id.into(),
            min_transfer: mt,
        }
    }

    fn seg(from: &str, dep: Minutes, to: &str, arr: Minutes) -> Segment {
        Segment {
            from_station: from.into(),
            dep_time: dep,
            to_station: to.into(),
            arr_time: arr,
        }
    }

    #[test]
    fn rejects_backwards_segment() {
        let run = TrainRun {
            id: "T1".into(),
            category: Category::Other,
            segments: vec![seg("A", 100, "B", 100)],
        };
        let err = Timetable::new(vec![station("A", 2), station("B", 2)], vec![run], vec![], 1440)
            .unwrap_err();
        assert!(matches!(err, TimetableError::SegmentTimes { index: 0, .. }), "{err}");
    }

    #[test]
    fn rejects_broken_chain_and_overlap() {
        let stations = vec![station("A", 2), station("B", 2), station("C", 2)];
        let broken = TrainRun {
            id: "T".into(),
            category: Category::Other,
            segments: vec![seg("A", 0, "B", 10), seg("C", 12, "A", 20)],
        };
        assert!(matches!(
            Timetable::new(stations.clone(), vec![broken], vec![], 1440),
            Err(TimetableError::Discontinuous { index: 1, .. })
        ));
        let overlap = TrainRun {
            id: "T".into(),
            category: Category::Other,
            segments: vec![seg("A", 0, "B", 10), seg("B", 9, "C", 20)],
        };
        assert!(matches!(
            Timetable::new(stations, vec![overlap], vec![], 1440),
            Err(TimetableError::NonMonotone { index: 1, .. })
        ));
    }

    #[test]
    fn route_transfer_must_respect_min_transfer() {
        let stations = vec![station("A", 0), station("B", 5), station("C", 0)];
        let runs = vec![
            TrainRun {
                id: "T1".into(),
                category: Category::Other,
                segments: vec![seg("A", 0, "B", 10)],
            },
            TrainRun {
                id: "T2".into(),
                category: Category::Other,
                segments: vec![seg("B", 14, "C", 30)],
            },
        ];
        let tt = Timetable::new(stations, runs, vec![], 1440).unwrap();
        let legs = vec![
            Leg {
                train: "T1".into(),
                board: "A".into(),
                alight: "B".into(),
            },
            Leg {
                train: "T2".into(),
                board: "B".into(),
                alight: "C".into(),
            },
        ];
        let err = tt.resolve_route("r", 1, legs).unwrap_err();
        assert!(matches!(err, TimetableError::InvalidRoute { .. }), "{err}");
    }

    #[test]
    fn category_parsing() {
        assert_eq!("ICE".parse::<Category>().unwrap(), Category::LongDistanceFast);
        assert_eq!("long_distance".parse::<Category>().unwrap(), Category::LongDistance);
        assert!("bus".parse::<Category>().is_err());
    }
}
