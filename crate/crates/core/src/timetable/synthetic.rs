//! Synthetic timetables: lines are shortest paths on a planar grid and trains
//! are started periodically at both endpoints of every line.
//!
//! An optional synchronization band turns every station whose daily event
//! count lies in a given range into a timed hub: inbound hops are stretched so
//! that trains arrive at a common phase (mod the band period) and leave
//! together after a fixed hub dwell. The stretch is paid back on the outbound
//! hop in whole periods, so phases at downstream stations are unchanged.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{Category, Leg, Minutes, Segment, Station, Timetable, TrainRun};
use super::observables::derive_transfers;
use super::{TimetableError, DEFAULT_DAY_LENGTH};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticParams {
    pub grid_width: usize,
    pub grid_height: usize,
    pub lines: usize,
    /// Candidate line periods; each line draws one uniformly.
    pub periods: Vec<Minutes>,
    /// Inclusive range for per-hop travel times, drawn once per line and hop.
    pub hop_time: (Minutes, Minutes),
    /// Standing time at intermediate stops.
    pub dwell: Minutes,
    pub service_start: Minutes,
    pub service_span: Minutes,
    /// Inclusive range for station minimal interchange times.
    pub min_transfer: (Minutes, Minutes),
    /// Number of passenger routes to sample.
    pub routes: usize,
    /// Probability that a sampled route contains one transfer.
    pub transfer_share: f64,
    pub transfer_window: Minutes,
    pub sync_band: Option<SyncBand>,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        SyntheticParams {
            grid_width: 12,
            grid_height: 10,
            lines: 24,
            periods: vec![30, 60, 120],
            hop_time: (12, 30),
            dwell: 2,
            service_start: 300,
            service_span: 1080,
            min_transfer: (3, 8),
            routes: 500,
            transfer_share: 0.6,
            transfer_window: 120,
            sync_band: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyncBand {
    /// Stations with `min_events <= T_k <= max_events` become timed hubs.
    pub min_events: usize,
    pub max_events: usize,
    pub period: Minutes,
    /// Standing time of every train at a hub.
    pub hub_dwell: Minutes,
    /// Per-train arrival jitter around the hub phase, inclusive upper bound.
    pub jitter: Minutes,
}

impl Default for SyncBand {
    fn default() -> Self {
        SyncBand {
            min_events: 90,
            max_events: 160,
            period: 120,
            hub_dwell: 10,
            jitter: 3,
        }
    }
}

struct Line {
    path: Vec<usize>,
    hops: Vec<Minutes>,
    period: Minutes,
    offset: Minutes,
    category: Category,
}

fn check(params: &SyntheticParams) -> Result<(), TimetableError> {
    let fail = |m: &str| Err(TimetableError::Infeasible(m.to_string()));
    if params.lines == 0 {
        return fail("at least one line is required");
    }
    if params.service_span <= 0 {
        return fail("service span must be positive");
    }
    if params.grid_width * params.grid_height < 2 {
        return fail("the grid needs at least two stations");
    }
    if params.periods.is_empty() || params.periods.iter().any(|&p| p <= 0) {
        return fail("periods must be a non-empty list of positive minutes");
    }
    if params.hop_time.0 <= 0 || params.hop_time.1 < params.hop_time.0 {
        return fail("hop time range must be positive and ordered");
    }
    if params.dwell < 0 || params.service_start < 0 {
        return fail("dwell and service start must be non-negative");
    }
    if params.min_transfer.0 < 0 || params.min_transfer.1 < params.min_transfer.0 {
        return fail("minimal transfer range must be non-negative and ordered");
    }
    if !(0.0..=1.0).contains(&params.transfer_share) {
        return fail("transfer share must lie in [0, 1]");
    }
    if let Some(band) = &params.sync_band {
        if band.period <= 0 || band.hub_dwell < 0 || band.jitter < 0 {
            return fail("sync band period must be positive, dwell and jitter non-negative");
        }
        if band.min_events > band.max_events {
            return fail("sync band event range is empty");
        }
    }
    Ok(())
}

fn station_id(params: &SyntheticParams, index: usize) -> String {
    format!(
        "S{:02}_{:02}",
        index % params.grid_width,
        index / params.grid_width
    )
}

/// Random monotone lattice path between two grid points.
fn grid_path(params: &SyntheticParams, from: usize, to: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let w = params.grid_width as i64;
    let (mut x, mut y) = ((from as i64) % w, (from as i64) / w);
    let (tx, ty) = ((to as i64) % w, (to as i64) / w);
    let mut path = vec![from];
    while (x, y) != (tx, ty) {
        let dx = (tx - x).abs();
        let dy = (ty - y).abs();
        if rng.gen_range(0..dx + dy) < dx {
            x += (tx - x).signum();
        } else {
            y += (ty - y).signum();
        }
        path.push((y * w + x) as usize);
    }
    path
}

fn departures(params: &SyntheticParams, line: &Line) -> Vec<Minutes> {
    let end = params.service_start + params.service_span;
    let mut out = Vec::new();
    let mut t = params.service_start + line.offset;
    while t < end {
        out.push(t);
        t += line.period;
    }
    out
}

/// Deterministic for a fixed `(params, seed)`.
pub fn generate_synthetic(params: &SyntheticParams, seed: u64) -> Result<Timetable, TimetableError> {
    check(params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_stations = params.grid_width * params.grid_height;

    let stations: Vec<Station> = (0..n_stations)
        .map(|i| {
            let id = station_id(params, i);
            Station {
                name: format!(
                    "Grid {}/{}",
                    i % params.grid_width,
                    i / params.grid_width
                ),
                id,
                min_transfer: rng.gen_range(params.min_transfer.0..=params.min_transfer.1),
            }
        })
        .collect();

    let mut lines = Vec::with_capacity(params.lines);
    for _ in 0..params.lines {
        let from = rng.gen_range(0..n_stations);
        let mut to = rng.gen_range(0..n_stations - 1);
        if to >= from {
            to += 1;
        }
        let path = grid_path(params, from, to, &mut rng);
        let hops = (1..path.len())
            .map(|_| rng.gen_range(params.hop_time.0..=params.hop_time.1))
            .collect();
        let period = *params.periods.choose(&mut rng).expect("checked non-empty");
        let offset = rng.gen_range(0..period);
        let category = *Category::ALL.choose(&mut rng).expect("non-empty");
        lines.push(Line {
            path,
            hops,
            period,
            offset,
            category,
        });
    }

    // Event counts do not depend on timing, so hubs can be chosen up front.
    let mut counts = vec![0usize; n_stations];
    for line in &lines {
        let trains = 2 * departures(params, line).len();
        let last = line.path.len() - 1;
        for (pos, &s) in line.path.iter().enumerate() {
            counts[s] += trains * if pos == 0 || pos == last { 1 } else { 2 };
        }
    }
    let hubs: BTreeMap<usize, Minutes> = match &params.sync_band {
        Some(band) => (0..n_stations)
            .filter(|&s| (band.min_events..=band.max_events).contains(&counts[s]))
            .collect::<Vec<_>>()
            .into_iter()
            .map(|s| (s, rng.gen_range(0..band.period)))
            .collect(),
        None => BTreeMap::new(),
    };

    let mut runs = Vec::new();
    for (li, line) in lines.iter().enumerate() {
        let starts = departures(params, line);
        for (dir, tag) in [(false, 'A'), (true, 'B')] {
            let (path, hops): (Vec<usize>, Vec<Minutes>) = if dir {
                (
                    line.path.iter().rev().copied().collect(),
                    line.hops.iter().rev().copied().collect(),
                )
            } else {
                (line.path.clone(), line.hops.clone())
            };
            for (k, &start) in starts.iter().enumerate() {
                let segments = schedule_train(params, &path, &hops, start, &hubs, &mut rng);
                runs.push(TrainRun {
                    id: format!("L{li:03}{tag}-{k:03}"),
                    category: line.category,
                    segments: segments
                        .into_iter()
                        .map(|(from, dep, to, arr)| Segment {
                            from_station: station_id(params, from),
                            dep_time: dep,
                            to_station: station_id(params, to),
                            arr_time: arr,
                        })
                        .collect(),
                });
            }
        }
    }

    let tt = Timetable::new(stations, runs, Vec::new(), DEFAULT_DAY_LENGTH)?;
    if params.routes == 0 {
        return Ok(tt);
    }
    let routes = sample_routes(&tt, params, &mut rng)?;
    tt.with_routes(routes)
}

fn schedule_train(
    params: &SyntheticParams,
    path: &[usize],
    hops: &[Minutes],
    start: Minutes,
    hubs: &BTreeMap<usize, Minutes>,
    rng: &mut ChaCha8Rng,
) -> Vec<(usize, Minutes, usize, Minutes)> {
    let band = params.sync_band.as_ref();
    let mut pending = 0;
    let mut dep = start;
    if let (Some(band), Some(&phase)) = (band, hubs.get(&path[0])) {
        let target = phase + band.hub_dwell + rng.gen_range(0..=band.jitter);
        let shift = (target - dep).rem_euclid(band.period);
        dep += shift;
        pending = (band.period - shift).rem_euclid(band.period);
    }
    let mut out = Vec::with_capacity(hops.len());
    for (i, &hop) in hops.iter().enumerate() {
        let to = path[i + 1];
        let mut arr = dep + hop + pending;
        pending = 0;
        let mut dwell = params.dwell;
        if let (Some(band), Some(&phase)) = (band, hubs.get(&to)) {
            let target = phase + rng.gen_range(0..=band.jitter);
            let shift = (target - arr).rem_euclid(band.period);
            arr += shift;
            pending = (band.period - shift).rem_euclid(band.period);
            dwell = band.hub_dwell;
        }
        out.push((path[i], dep, to, arr));
        dep = arr + dwell;
    }
    out
}

fn sample_routes(
    tt: &Timetable,
    params: &SyntheticParams,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<super::PassengerRoute>, TimetableError> {
    let transfers = derive_transfers(tt, params.transfer_window);
    let mut by_arrival: BTreeMap<(&str, usize), Vec<(&str, usize)>> = BTreeMap::new();
    for t in &transfers {
        by_arrival
            .entry((t.from_arrival.train.as_str(), t.from_arrival.segment))
            .or_default()
            .push((t.to_departure.train.as_str(), t.to_departure.segment));
    }
    let runs: Vec<&TrainRun> = tt.runs().values().collect();
    let mut routes = Vec::with_capacity(params.routes);
    let mut used = BTreeSet::new();
    while routes.len() < params.routes {
        let run = runs[rng.gen_range(0..runs.len())];
        let first = rng.gen_range(0..run.segments.len());
        let last = (first + rng.gen_range(0..3)).min(run.segments.len() - 1);
        let mut legs = vec![Leg {
            train: run.id.clone(),
            board: run.segments[first].from_station.clone(),
            alight: run.segments[last].to_station.clone(),
        }];
        if rng.gen_bool(params.transfer_share) {
            if let Some(options) = by_arrival.get(&(run.id.as_str(), last)) {
                let (train, seg) = options[rng.gen_range(0..options.len())];
                let next = tt.run(train).expect("transfer refers to a known train");
                let end = (seg + rng.gen_range(0..3)).min(next.segments.len() - 1);
                // Skip rides that would loop back to the boarding station.
                if next.segments[end].to_station != legs[0].board {
                    legs.push(Leg {
                        train: train.to_string(),
                        board: next.segments[seg].from_station.clone(),
                        alight: next.segments[end].to_station.clone(),
                    });
                }
            }
        }
        let key: Vec<(String, String, String)> = legs
            .iter()
            .map(|l| (l.train.clone(), l.board.clone(), l.alight.clone()))
            .collect();
        let passengers = rng.gen_range(1..=20);
        if !used.insert(key) {
            continue;
        }
        let id = format!("P{:05}", routes.len());
        routes.push(tt.resolve_route(id, passengers, legs)?);
    }
    Ok(routes)
}
