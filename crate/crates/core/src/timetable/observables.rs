//! Derived observables: per-station A/D event lists, station sizes and ranks,
//! transfer opportunities and buffering times.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::model::{Minutes, Timetable};

/// Default upper bound on a transfer's buffer; equals the 120 min analysis period.
pub const DEFAULT_TRANSFER_WINDOW: Minutes = 120;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Arrival,
    Departure,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Arrival => "arrival",
            EventKind::Departure => "departure",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StationEvent {
    pub time: Minutes,
    pub kind: EventKind,
    pub train: String,
    /// Index of the segment this event belongs to within its train run.
    pub segment: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventList {
    pub station: String,
    /// Sorted ascending by time (ties: arrivals first, then train id).
    pub events: Vec<StationEvent>,
}

impl EventList {
    /// Number of A/D events per day, `T_k`.
    pub fn size(&self) -> usize {
        self.events.len()
    }

    pub fn times(&self) -> impl Iterator<Item = Minutes> + '_ {
        self.events.iter().map(|e| e.time)
    }
}

/// Every segment contributes a departure at its origin and an arrival at its
/// destination. Stations without events are absent.
pub fn station_events(tt: &Timetable) -> BTreeMap<String, EventList> {
    let mut lists: BTreeMap<String, EventList> = BTreeMap::new();
    let mut push = |station: &str, event: StationEvent| {
        lists
            .entry(station.to_string())
            .or_insert_with(|| EventList {
                station: station.to_string(),
                events: Vec::new(),
            })
            .events
            .push(event);
    };
    for run in tt.runs().values() {
        for (i, seg) in run.segments.iter().enumerate() {
            push(
                &seg.from_station,
                StationEvent {
                    time: seg.dep_time,
                    kind: EventKind::Departure,
                    train: run.id.clone(),
                    segment: i,
                },
            );
            push(
                &seg.to_station,
                StationEvent {
                    time: seg.arr_time,
                    kind: EventKind::Arrival,
                    train: run.id.clone(),
                    segment: i,
                },
            );
        }
    }
    for list in lists.values_mut() {
        list.events.sort();
    }
    lists
}

pub fn station_sizes(events: &BTreeMap<String, EventList>) -> BTreeMap<String, usize> {
    events
        .iter()
        .map(|(id, list)| (id.clone(), list.size()))
        .collect()
}

/// Stations ordered by descending size; rank 1 (index 0) is the largest.
/// Ties are broken by ascending station id.
pub fn station_rank(sizes: &BTreeMap<String, usize>) -> Vec<String> {
    let mut ids: Vec<(&String, usize)> = sizes.iter().map(|(id, &n)| (id, n)).collect();
    ids.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ids.into_iter().map(|(id, _)| id.clone()).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRef {
    pub train: String,
    pub segment: usize,
    pub kind: EventKind,
    pub time: Minutes,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferOpportunity {
    pub station: String,
    pub from_arrival: EventRef,
    pub to_departure: EventRef,
    /// Full scheduled interchange gap, departure minus arrival.
    pub buffer: Minutes,
    pub min_transfer: Minutes,
}

impl TransferOpportunity {
    /// Part of the buffer exceeding the minimal interchange time.
    pub fn slack(&self) -> Minutes {
        self.buffer - self.min_transfer
    }
}

/// All (arrival, later departure of another train) pairs at each station whose
/// gap lies in `[min_transfer, max_window]`.
pub fn derive_transfers(tt: &Timetable, max_window: Minutes) -> Vec<TransferOpportunity> {
    let events = station_events(tt);
    let mut out = Vec::new();
    for (station_id, list) in &events {
        let min_transfer = tt.station(station_id).map(|s| s.min_transfer).unwrap_or(0);
        let departures: Vec<&StationEvent> = list
            .events
            .iter()
            .filter(|e| e.kind == EventKind::Departure)
            .collect();
        for arrival in list.events.iter().filter(|e| e.kind == EventKind::Arrival) {
            let lo = arrival.time + min_transfer;
            let hi = arrival.time + max_window;
            let start = departures.partition_point(|d| d.time < lo);
            for dep in departures[start..].iter().take_while(|d| d.time <= hi) {
                if dep.train == arrival.train {
                    continue;
                }
                out.push(TransferOpportunity {
                    station: station_id.clone(),
                    from_arrival: EventRef {
                        train: arrival.train.clone(),
                        segment: arrival.segment,
                        kind: EventKind::Arrival,
                        time: arrival.time,
                    },
                    to_departure: EventRef {
                        train: dep.train.clone(),
                        segment: dep.segment,
                        kind: EventKind::Departure,
                        time: dep.time,
                    },
                    buffer: dep.time - arrival.time,
                    min_transfer,
                });
            }
        }
    }
    out
}

/// Mean buffer per station over transfer opportunities. Stations without
/// opportunities are absent.
pub fn buffering_times(transfers: &[TransferOpportunity]) -> BTreeMap<String, f64> {
    let mut acc: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for t in transfers {
        let e = acc.entry(&t.station).or_default();
        e.0 += t.buffer as f64;
        e.1 += 1;
    }
    acc.into_iter()
        .map(|(k, (sum, n))| (k.to_string(), sum / n as f64))
        .collect()
}

/// Passenger-weighted mean buffer of the transfers actually used by the
/// timetable's passenger routes.
pub fn passenger_buffering_times(tt: &Timetable) -> BTreeMap<String, f64> {
    let mut acc: BTreeMap<String, (f64, f64)> = BTreeMap::new();
    for route in tt.routes() {
        for pair in route.legs.windows(2) {
            let (prev, next) = (&pair[0], &pair[1]);
            let (Some(a), Some(b)) = (tt.run(&prev.train), tt.run(&next.train)) else {
                continue;
            };
            let (Some((_, last)), Some((first, _))) = (
                a.leg_span(&prev.board, &prev.alight),
                b.leg_span(&next.board, &next.alight),
            ) else {
                continue;
            };
            let buffer = b.segments[first].dep_time - a.segments[last].arr_time;
            let w = f64::from(route.passenger_count);
            let e = acc.entry(next.board.clone()).or_default();
            e.0 += w * buffer as f64;
            e.1 += w;
        }
    }
    acc.into_iter()
        .map(|(k, (sum, w))| (k, sum / w))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timetable::{Category, Leg, Segment, Station, TrainRun};

    fn st(id: &str, mt: Minutes) -> Station {
        Station {
            id: id.into(),
            name: id.into(),
            min_transfer: mt,
        }
    }

    fn run(id: &str, hops: &[(&str, Minutes, &str, Minutes)]) -> TrainRun {
        TrainRun {
            id: id.into(),
            category: Category::LongDistance,
            segments: hops
                .iter()
                .map(|&(f, d, t, a)| Segment {
                    from_station: f.into(),
                    dep_time: d,
                    to_station: t.into(),
                    arr_time: a,
                })
                .collect(),
        }
    }

    fn transfer_fixture(dep: Minutes) -> Timetable {
        Timetable::new(
            vec![st("A", 0), st("X", 5), st("B", 0)],
            vec![
                run("F", &[("A", 500, "X", 600)]),
                run("C", &[("X", dep, "B", dep + 30)]),
            ],
            vec![],
            1440,
        )
        .unwrap()
    }

    #[test]
    fn single_segment_events() {
        let tt = Timetable::new(
            vec![st("A", 0), st("B", 0)],
            vec![run("T", &[("A", 0, "B", 10)])],
            vec![],
            1440,
        )
        .unwrap();
        let ev = station_events(&tt);
        assert_eq!(ev["A"].size(), 1);
        assert_eq!(ev["A"].events[0].kind, EventKind::Departure);
        assert_eq!(ev["B"].events[0].kind, EventKind::Arrival);
    }

    #[test]
    fn interior_stations_get_two_events() {
        let tt = Timetable::new(
            vec![st("A", 0), st("B", 0), st("C", 0), st("D", 0)],
            vec![run("T", &[("A", 0, "B", 10), ("B", 12, "C", 20), ("C", 22, "D", 30)])],
            vec![],
            1440,
        )
        .unwrap();
        let ev = station_events(&tt);
        assert_eq!(ev["A"].size(), 1);
        assert_eq!(ev["B"].size(), 2);
        assert_eq!(ev["C"].size(), 2);
        assert_eq!(ev["D"].size(), 1);
        let total: usize = ev.values().map(EventList::size).sum();
        assert_eq!(total, 2 * tt.segment_count());
    }

    #[test]
    fn rank_examples() {
        let sizes: BTreeMap<String, usize> =
            [("A", 10), ("B", 300), ("C", 40)].iter().map(|(k, v)| (k.to_string(), *v)).collect();
        assert_eq!(station_rank(&sizes), ["B", "C", "A"]);
        let tie: BTreeMap<String, usize> =
            [("B", 10), ("A", 10)].iter().map(|(k, v)| (k.to_string(), *v)).collect();
        assert_eq!(station_rank(&tie), ["A", "B"]);
        let single: BTreeMap<String, usize> = [("Z".to_string(), 3)].into_iter().collect();
        assert_eq!(station_rank(&single), ["Z"]);
    }

    #[test]
    fn transfer_window_examples() {
        let ts = derive_transfers(&transfer_fixture(607), 120);
        assert_eq!(ts.len(), 1);
        assert_eq!(ts[0].buffer, 7);
        assert_eq!(ts[0].slack(), 2);
        assert!(derive_transfers(&transfer_fixture(603), 120).is_empty());
        assert!(derive_transfers(&transfer_fixture(800), 120).is_empty());
    }

    #[test]
    fn buffering_means() {
        let mut t = derive_transfers(&transfer_fixture(607), 120);
        let mut second = t[0].clone();
        second.buffer = 9;
        t.push(second);
        let b = buffering_times(&t);
        assert_eq!(b["X"], 8.0);
        assert!(!b.contains_key("A"));
        assert!(buffering_times(&[]).is_empty());
    }

    #[test]
    fn passenger_weighted_buffers() {
        let tt = transfer_fixture(607);
        let route = tt
            .resolve_route(
                "r",
                3,
                vec![
                    Leg { train: "F".into(), board: "A".into(), alight: "X".into() },
                    Leg { train: "C".into(), board: "X".into(), alight: "B".into() },
                ],
            )
            .unwrap();
        let tt = tt.with_routes(vec![route]).unwrap();
        assert_eq!(passenger_buffering_times(&tt)["X"], 7.0);
    }
}
