use std::collections::BTreeMap;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::routing::Router;
use super::{
    propagate_into, route_plan, DelayScenario, DepGraph, DepGraphError, NodeId, NodeKind,
    Propagator, RoutePlan, Timestamps,
};
use crate::timetable::{station_rank, EventKind, Minutes, PassengerRoute};

pub const DEFAULT_MAX_DELAY: Minutes = 720;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepOptions {
    pub p_values: Vec<Minutes>,
    /// Delay charged to a stranded passenger.
    pub max_delay: Minutes,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            p_values: vec![5, 30],
            max_delay: DEFAULT_MAX_DELAY,
        }
    }
}

/// Secondary delays at one station for one primary delay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub station: String,
    pub rank: usize,
    pub p: Minutes,
    pub scenarios: usize,
    /// Delayed passengers per scenario.
    pub affected_passengers: f64,
    /// Delay per delayed passenger, pooled over the station's scenarios.
    pub s_mean: f64,
    /// Passenger-minutes per scenario.
    pub s_total: f64,
    /// Stranded passengers summed over the station's scenarios.
    pub stranded: u64,
}

#[derive(Default, Clone, Copy)]
struct Tally {
    affected: u64,
    minutes: u64,
    stranded: u64,
}

/// Delays every arrival event at every station by each `p` in turn and
/// records the resulting passenger delays. Stations are reported in rank
/// order; results do not depend on the number of worker threads.
pub fn secondary_delay_sweep(
    g: &DepGraph,
    routes: &[PassengerRoute],
    options: &SweepOptions,
) -> Result<Vec<SweepRecord>, DepGraphError> {
    if let Some(&p) = options.p_values.iter().find(|&&p| p < 0) {
        return Err(DepGraphError::NegativeDelay(p));
    }
    let plans: Vec<RoutePlan> = routes.iter().map(|r| route_plan(g, r)).collect::<Result<_, _>>()?;
    let mut by_train: Vec<Vec<u32>> = vec![Vec::new(); g.train_count()];
    for (i, plan) in plans.iter().enumerate() {
        for t in plan.trains() {
            if by_train[t as usize].last() != Some(&(i as u32)) {
                by_train[t as usize].push(i as u32);
            }
        }
    }

    let mut arrivals: BTreeMap<u32, Vec<NodeId>> = BTreeMap::new();
    for (id, n) in g.nodes()[..g.event_count()].iter().enumerate() {
        if n.kind == NodeKind::Arrival {
            arrivals.entry(n.station).or_default().push(id as NodeId);
        }
    }
    let stations: Vec<(u32, Vec<NodeId>)> = arrivals.into_iter().collect();
    let p_count = options.p_values.len();

    let tallies: Vec<Vec<Tally>> = stations
        .par_iter()
        .map_init(
            || (Timestamps::planned(g), Propagator::default(), Vec::<u32>::new()),
            |(ts, scratch, touched), (_, events)| {
                let mut out = vec![Tally::default(); p_count];
                for &event in events {
                    for (k, &p) in options.p_values.iter().enumerate() {
                        if p == 0 {
                            continue;
                        }
                        propagate_into(g, &DelayScenario::single(event, p), ts, scratch)
                            .expect("arrival nodes accept injections");
                        touched.clear();
                        for &n in ts.changed() {
                            touched.extend(&by_train[g.nodes()[n as usize].train as usize]);
                        }
                        touched.sort_unstable();
                        touched.dedup();
                        if touched.is_empty() {
                            continue;
                        }
                        let router = Router::new(g, ts);
                        for &r in touched.iter() {
                            let plan = &plans[r as usize];
                            let outcome = router.passenger_delay(plan, options.max_delay);
                            if outcome.delay > 0 {
                                let n = u64::from(plan.passengers);
                                out[k].affected += n;
                                out[k].minutes += n * outcome.delay as u64;
                            }
                            if outcome.stranded {
                                out[k].stranded += u64::from(plan.passengers);
                            }
                        }
                    }
                }
                out
            },
        )
        .collect();

    let ids: BTreeMap<String, usize> = {
        let ranks = station_rank(&station_sizes(g));
        ranks.into_iter().enumerate().map(|(i, s)| (s, i + 1)).collect()
    };
    let mut records = Vec::with_capacity(stations.len() * p_count);
    for ((station, events), tally) in stations.iter().zip(&tallies) {
        let id = g.station_id(*station).to_string();
        let scenarios = events.len();
        for (k, &p) in options.p_values.iter().enumerate() {
            let t = tally[k];
            records.push(SweepRecord {
                rank: ids.get(&id).copied().unwrap_or(0),
                station: id.clone(),
                p,
                scenarios,
                affected_passengers: t.affected as f64 / scenarios as f64,
                s_mean: if t.affected > 0 {
                    t.minutes as f64 / t.affected as f64
                } else {
                    0.0
                },
                s_total: t.minutes as f64 / scenarios as f64,
                stranded: t.stranded,
            });
        }
    }
    records.sort_by(|a, b| a.rank.cmp(&b.rank).then(a.p.cmp(&b.p)));
    Ok(records)
}

/// Station sizes as counted by the graph's event nodes.
fn station_sizes(g: &DepGraph) -> BTreeMap<String, usize> {
    let mut sizes: BTreeMap<String, usize> = BTreeMap::new();
    for n in &g.nodes()[..g.event_count()] {
        *sizes.entry(g.station_id(n.station).to_string()).or_default() += 1;
    }
    sizes
}

/// One entry of a scenario file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioEntry {
    pub train: String,
    pub station: String,
    pub kind: EventKind,
    pub delay_min: Minutes,
}

pub fn resolve_scenario(g: &DepGraph, entries: &[ScenarioEntry]) -> Result<DelayScenario, DepGraphError> {
    let mut injections = Vec::with_capacity(entries.len());
    for e in entries {
        if e.delay_min < 0 {
            return Err(DepGraphError::NegativeDelay(e.delay_min));
        }
        injections.push((g.find_event(&e.train, &e.station, e.kind)?, e.delay_min));
    }
    Ok(DelayScenario { injections })
}

/// `station_id,rank,p,affected_passengers,s_mean,s_total,stranded`
pub fn write_sweep_csv<W: Write>(
    mut out: W,
    records: &[SweepRecord],
    comment: Option<&str>,
) -> std::io::Result<()> {
    if let Some(comment) = comment {
        for line in comment.lines() {
            writeln!(out, "# {line}")?;
        }
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "station_id",
        "rank",
        "p",
        "affected_passengers",
        "s_mean",
        "s_total",
        "stranded",
    ])?;
    for r in records {
        w.write_record([
            r.station.clone(),
            r.rank.to_string(),
            r.p.to_string(),
            r.affected_passengers.to_string(),
            r.s_mean.to_string(),
            r.s_total.to_string(),
            r.stranded.to_string(),
        ])?;
    }
    w.flush()
}

#[derive(Deserialize)]
struct SweepRow {
    station_id: String,
    rank: usize,
    p: Minutes,
    affected_passengers: f64,
    s_mean: f64,
    s_total: f64,
    stranded: u64,
}

/// Reads a sweep CSV; `scenarios` is not stored and comes back as 0.
pub fn read_sweep_csv<R: Read>(source: R) -> Result<Vec<SweepRecord>, csv::Error> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(source);
    reader
        .deserialize::<SweepRow>()
        .map(|row| {
            row.map(|r| SweepRecord {
                station: r.station_id,
                rank: r.rank,
                p: r.p,
                scenarios: 0,
                affected_passengers: r.affected_passengers,
                s_mean: r.s_mean,
                s_total: r.s_total,
                stranded: r.stranded,
            })
        })
        .collect()
}
