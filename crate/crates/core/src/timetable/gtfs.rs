//! Import of the GTFS column subset used for cross-country comparisons.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::Read;
use std::path::Path;

use super::bundle::Table;
use super::model::{Category, Minutes, Segment, Station, Timetable, TrainRun};
use super::{TimetableError, DEFAULT_DAY_LENGTH};

#[derive(Debug, Clone)]
pub struct GtfsOptions {
    /// GTFS has no per-stop interchange time in the required subset.
    pub min_transfer: Minutes,
    pub category: Category,
}

impl Default for GtfsOptions {
    fn default() -> Self {
        GtfsOptions {
            min_transfer: 5,
            category: Category::Other,
        }
    }
}

/// `HH:MM:SS` with hours possibly above 23. Seconds are truncated to the minute.
fn parse_gtfs_time(value: &str) -> Result<Minutes, String> {
    let bad = || format!("unparseable GTFS time `{value}`");
    let mut parts = value.split(':');
    let (Some(h), Some(m), Some(s), None) = (parts.next(), parts.next(), parts.next(), parts.next())
    else {
        return Err(bad());
    };
    let h: Minutes = h.trim().parse().map_err(|_| bad())?;
    let m: Minutes = m.parse().map_err(|_| bad())?;
    let s: Minutes = s.parse().map_err(|_| bad())?;
    if h < 0 || !(0..60).contains(&m) || !(0..60).contains(&s) {
        return Err(bad());
    }
    Ok(h * 60 + m)
}

/// Builds a timetable from `stops.txt`, `trips.txt` and `stop_times.txt`.
/// Each pair of consecutive stop times becomes one segment; trips with fewer
/// than two stops are skipped. Passenger routes are empty.
pub fn import_gtfs_subset<R: Read>(
    stops: R,
    trips: R,
    stop_times: R,
    options: &GtfsOptions,
) -> Result<Timetable, TimetableError> {
    let stops = Table::read("stops.txt", stops, &["stop_id", "stop_name"])?;
    let mut stations = Vec::new();
    for row in stops.rows() {
        stations.push(Station {
            id: row.text(0)?,
            name: row.get(1).to_string(),
            min_transfer: options.min_transfer,
        });
    }

    let trips = Table::read("trips.txt", trips, &["trip_id", "route_id"])?;
    let mut trip_ids = BTreeSet::new();
    for row in trips.rows() {
        let id = row.text(0)?;
        if !trip_ids.insert(id.clone()) {
            return Err(row.error(0, format!("duplicated trip id `{id}`")));
        }
    }

    let stop_times = Table::read(
        "stop_times.txt",
        stop_times,
        &[
            "trip_id",
            "stop_sequence",
            "arrival_time",
            "departure_time",
            "stop_id",
        ],
    )?;
    // trip -> sequence -> (arrival, departure, stop)
    let mut calls: BTreeMap<String, BTreeMap<i64, (Minutes, Minutes, String)>> = BTreeMap::new();
    for row in stop_times.rows() {
        let trip = row.text(0)?;
        if !trip_ids.contains(&trip) {
            return Err(row.error(0, format!("trip `{trip}` is not listed in trips.txt")));
        }
        let seq: i64 = row
            .get(1)
            .parse()
            .map_err(|_| row.error(1, "stop_sequence must be an integer"))?;
        let arrival = row.get(2);
        let departure = row.get(3);
        let (arr, dep) = match (arrival.is_empty(), departure.is_empty()) {
            (true, true) => return Err(row.error(2, "both arrival and departure are empty")),
            (false, true) => {
                let t = parse_gtfs_time(arrival).map_err(|m| row.error(2, m))?;
                (t, t)
            }
            (true, false) => {
                let t = parse_gtfs_time(departure).map_err(|m| row.error(3, m))?;
                (t, t)
            }
            (false, false) => (
                parse_gtfs_time(arrival).map_err(|m| row.error(2, m))?,
                parse_gtfs_time(departure).map_err(|m| row.error(3, m))?,
            ),
        };
        let stop = row.text(4)?;
        if calls
            .entry(trip.clone())
            .or_default()
            .insert(seq, (arr, dep, stop))
            .is_some()
        {
            return Err(row.error(1, format!("trip `{trip}` repeats stop_sequence {seq}")));
        }
    }

    let runs = calls
        .into_iter()
        .filter(|(_, seq)| seq.len() >= 2)
        .map(|(trip, seq)| {
            let calls: Vec<_> = seq.into_values().collect();
            let segments = calls
                .windows(2)
                .map(|w| Segment {
                    from_station: w[0].2.clone(),
                    dep_time: w[0].1,
                    to_station: w[1].2.clone(),
                    arr_time: w[1].0,
                })
                .collect();
            TrainRun {
                id: trip,
                category: options.category,
                segments,
            }
        })
        .collect();
    Timetable::new(stations, runs, Vec::new(), DEFAULT_DAY_LENGTH)
}

pub fn import_gtfs_dir(dir: &Path, options: &GtfsOptions) -> Result<Timetable, TimetableError> {
    let open = |name: &str| {
        let path = dir.join(name);
        File::open(&path).map_err(|source| TimetableError::Io {
            path: path.display().to_string(),
            source,
        })
    };
    import_gtfs_subset(
        open("stops.txt")?,
        open("trips.txt")?,
        open("stop_times.txt")?,
        options,
    )
}
