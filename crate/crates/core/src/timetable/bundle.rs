//! Native CSV bundle: `stations.csv`, `segments.csv` and optional `routes.csv`.
//!
//! Lines starting with `#` are comments, so files carrying a config header
//! written by this crate parse back unchanged.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use csv::{ReaderBuilder, StringRecord, Trim, WriterBuilder};

use super::model::{Category, Leg, Minutes, PassengerRoute, Segment, Station, Timetable, TrainRun};
use super::{TimetableError, DEFAULT_DAY_LENGTH};

pub const STATIONS_FILE: &str = "stations.csv";
pub const SEGMENTS_FILE: &str = "segments.csv";
pub const ROUTES_FILE: &str = "routes.csv";

const STATION_COLUMNS: [&str; 3] = ["station_id", "name", "min_transfer_min"];
const SEGMENT_COLUMNS: [&str; 6] = [
    "train_id",
    "category",
    "from_station",
    "dep_min",
    "to_station",
    "arr_min",
];
const ROUTE_COLUMNS: [&str; 6] = [
    "route_id",
    "passengers",
    "leg_index",
    "train_id",
    "board_station",
    "alight_station",
];

/// In-memory sources for a bundle.
pub struct BundleSources<R> {
    pub stations: R,
    pub segments: R,
    pub routes: Option<R>,
}

/// Column lookup by header name, so column order in the file is free.
pub(crate) struct Table {
    file: String,
    columns: Vec<usize>,
    names: Vec<&'static str>,
    records: Vec<(u64, StringRecord)>,
}

impl Table {
    pub(crate) fn read<R: Read>(
        file: &str,
        source: R,
        required: &[&'static str],
    ) -> Result<Self, TimetableError> {
        let mut reader = ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(Trim::All)
            .flexible(false)
            .from_reader(source);
        let csv_err = |e: csv::Error| TimetableError::Csv {
            file: file.to_string(),
            message: e.to_string(),
        };
        let headers = reader.headers().map_err(csv_err)?.clone();
        let mut columns = Vec::with_capacity(required.len());
        for name in required {
            let idx = headers.iter().position(|h| h == *name).ok_or_else(|| {
                TimetableError::MissingColumn {
                    file: file.to_string(),
                    column: name.to_string(),
                }
            })?;
            columns.push(idx);
        }
        let mut records = Vec::new();
        for record in reader.records() {
            let record = record.map_err(csv_err)?;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            records.push((line, record));
        }
        Ok(Table {
            file: file.to_string(),
            columns,
            names: required.to_vec(),
            records,
        })
    }

    pub(crate) fn rows(&self) -> impl Iterator<Item = Row<'_>> {
        self.records.iter().map(move |(line, record)| Row {
            table: self,
            line: *line,
            record,
        })
    }
}

pub(crate) struct Row<'a> {
    table: &'a Table,
    pub(crate) line: u64,
    record: &'a StringRecord,
}

impl Row<'_> {
    pub(crate) fn get(&self, column: usize) -> &str {
        self.record.get(self.table.columns[column]).unwrap_or("")
    }

    pub(crate) fn error(&self, column: usize, message: impl Into<String>) -> TimetableError {
        TimetableError::Field {
            file: self.table.file.clone(),
            line: self.line,
            column: self.table.names[column].to_string(),
            message: message.into(),
        }
    }

    pub(crate) fn text(&self, column: usize) -> Result<String, TimetableError> {
        let value = self.get(column);
        if value.is_empty() {
            Err(self.error(column, "empty value"))
        } else {
            Ok(value.to_string())
        }
    }

    pub(crate) fn minutes(&self, column: usize) -> Result<Minutes, TimetableError> {
        parse_minutes(self.get(column)).map_err(|m| self.error(column, m))
    }
}

fn parse_minutes(value: &str) -> Result<Minutes, String> {
    match value.parse::<Minutes>() {
        Ok(v) => Ok(v),
        Err(_) if value.parse::<f64>().is_ok() => Err(format!(
            "`{value}` has sub-minute precision; times are integer minutes"
        )),
        Err(_) => Err(format!("`{value}` is not an integer number of minutes")),
    }
}

/// Parses a native bundle from readers. Every invariant of [`Timetable`] is checked.
pub fn parse_timetable<R: Read>(sources: BundleSources<R>) -> Result<Timetable, TimetableError> {
    let stations_table = Table::read(STATIONS_FILE, sources.stations, &STATION_COLUMNS)?;
    let mut stations = Vec::new();
    for row in stations_table.rows() {
        let min_transfer = row.minutes(2)?;
        if min_transfer < 0 {
            return Err(row.error(2, "minimal transfer time must be non-negative"));
        }
        stations.push(Station {
            id: row.text(0)?,
            name: row.get(1).to_string(),
            min_transfer,
        });
    }

    let segments_table = Table::read(SEGMENTS_FILE, sources.segments, &SEGMENT_COLUMNS)?;
    let mut order: Vec<String> = Vec::new();
    let mut runs: BTreeMap<String, TrainRun> = BTreeMap::new();
    for row in segments_table.rows() {
        let train = row.text(0)?;
        let category: Category = row.get(1).parse().map_err(|m: String| row.error(1, m))?;
        let segment = Segment {
            from_station: row.text(2)?,
            dep_time: row.minutes(3)?,
            to_station: row.text(4)?,
            arr_time: row.minutes(5)?,
        };
        if segment.arr_time <= segment.dep_time {
            return Err(row.error(
                5,
                format!(
                    "train `{train}`: arrival {} is not after departure {}",
                    segment.arr_time, segment.dep_time
                ),
            ));
        }
        let run = runs.entry(train.clone()).or_insert_with(|| {
            order.push(train.clone());
            TrainRun {
                id: train.clone(),
                category,
                segments: Vec::new(),
            }
        });
        if run.category != category {
            return Err(row.error(
                1,
                format!(
                    "train `{train}` changes category from {} to {category}",
                    run.category
                ),
            ));
        }
        run.segments.push(segment);
    }
    let runs: Vec<TrainRun> = order
        .iter()
        .map(|id| runs.remove(id).expect("collected above"))
        .collect();
    let tt = Timetable::new(stations, runs, Vec::new(), DEFAULT_DAY_LENGTH)?;

    let Some(routes_source) = sources.routes else {
        return Ok(tt);
    };
    let routes_table = Table::read(ROUTES_FILE, routes_source, &ROUTE_COLUMNS)?;
    struct Pending {
        passengers: u32,
        legs: Vec<(i64, Leg)>,
    }
    let mut route_order: Vec<String> = Vec::new();
    let mut pending: BTreeMap<String, Pending> = BTreeMap::new();
    for row in routes_table.rows() {
        let id = row.text(0)?;
        let passengers: u32 = row
            .get(1)
            .parse()
            .ok()
            .filter(|&p| p > 0)
            .ok_or_else(|| row.error(1, "passenger count must be a positive integer"))?;
        let leg_index = row.minutes(2)?;
        let train = row.text(3)?;
        if tt.run(&train).is_none() {
            return Err(row.error(3, format!("unknown train `{train}`")));
        }
        let leg = Leg {
            train,
            board: row.text(4)?,
            alight: row.text(5)?,
        };
        let entry = pending.entry(id.clone()).or_insert_with(|| {
            route_order.push(id.clone());
            Pending {
                passengers,
                legs: Vec::new(),
            }
        });
        if entry.passengers != passengers {
            return Err(row.error(1, format!("route `{id}` changes its passenger count")));
        }
        entry.legs.push((leg_index, leg));
    }
    let mut routes = Vec::with_capacity(route_order.len());
    for id in route_order {
        let mut p = pending.remove(&id).expect("collected above");
        p.legs.sort_by_key(|(i, _)| *i);
        if p.legs.iter().enumerate().any(|(k, (i, _))| *i != k as i64) {
            return Err(TimetableError::InvalidRoute {
                route: id,
                reason: "leg indices must be 0, 1, 2, ... without gaps".into(),
            });
        }
        let legs = p.legs.into_iter().map(|(_, leg)| leg).collect();
        routes.push(tt.resolve_route(id, p.passengers, legs)?);
    }
    tt.with_routes(routes)
}

fn open(dir: &Path, name: &str) -> Result<File, TimetableError> {
    let path = dir.join(name);
    File::open(&path).map_err(|source| TimetableError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Parses `stations.csv`, `segments.csv` and (if present) `routes.csv` from a directory.
pub fn parse_bundle_dir(dir: &Path) -> Result<Timetable, TimetableError> {
    let routes = if dir.join(ROUTES_FILE).exists() {
        Some(open(dir, ROUTES_FILE)?)
    } else {
        None
    };
    parse_timetable(BundleSources {
        stations: open(dir, STATIONS_FILE)?,
        segments: open(dir, SEGMENTS_FILE)?,
        routes,
    })
}

fn write_header<W: Write>(out: &mut W, comment: Option<&str>) -> std::io::Result<()> {
    if let Some(comment) = comment {
        for line in comment.lines() {
            writeln!(out, "# {line}")?;
        }
    }
    Ok(())
}

/// Serializes a timetable as a native bundle. `comment` is emitted as `#` lines
/// at the top of each file.
pub fn write_bundle<W: Write>(
    tt: &Timetable,
    mut stations: W,
    mut segments: W,
    routes: Option<W>,
    comment: Option<&str>,
) -> std::io::Result<()> {
    write_header(&mut stations, comment)?;
    let mut w = WriterBuilder::new().from_writer(stations);
    w.write_record(STATION_COLUMNS)?;
    for s in tt.stations().values() {
        w.write_record([s.id.as_str(), s.name.as_str(), &s.min_transfer.to_string()])?;
    }
    w.flush()?;

    write_header(&mut segments, comment)?;
    let mut w = WriterBuilder::new().from_writer(segments);
    w.write_record(SEGMENT_COLUMNS)?;
    for run in tt.runs().values() {
        for seg in &run.segments {
            w.write_record([
                run.id.as_str(),
                run.category.as_str(),
                seg.from_station.as_str(),
                &seg.dep_time.to_string(),
                seg.to_station.as_str(),
                &seg.arr_time.to_string(),
            ])?;
        }
    }
    w.flush()?;

    if let Some(mut routes) = routes {
        write_header(&mut routes, comment)?;
        let mut w = WriterBuilder::new().from_writer(routes);
        w.write_record(ROUTE_COLUMNS)?;
        for route in tt.routes() {
            write_route(&mut w, route)?;
        }
        w.flush()?;
    }
    Ok(())
}

fn write_route<W: Write>(w: &mut csv::Writer<W>, route: &PassengerRoute) -> std::io::Result<()> {
    for (k, leg) in route.legs.iter().enumerate() {
        w.write_record([
            route.id.as_str(),
            &route.passenger_count.to_string(),
            &k.to_string(),
            leg.train.as_str(),
            leg.board.as_str(),
            leg.alight.as_str(),
        ])?;
    }
    Ok(())
}

/// Writes a bundle into `dir` (created if missing). `routes.csv` is written
/// only when the timetable has routes.
pub fn write_bundle_dir(
    tt: &Timetable,
    dir: &Path,
    comment: Option<&str>,
) -> Result<(), TimetableError> {
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source| TimetableError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let create = |name: &str| {
        let path = dir.join(name);
        File::create(&path).map_err(io(&path))
    };
    let routes = if tt.routes().is_empty() {
        None
    } else {
        Some(create(ROUTES_FILE)?)
    };
    write_bundle(tt, create(STATIONS_FILE)?, create(SEGMENTS_FILE)?, routes, comment)
        .map_err(io(dir))
}
