use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::{Connection, DepGraph, DepGraphError, NodeId, Timestamps};
use crate::timetable::{EventKind, Leg, Minutes, PassengerRoute};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Itinerary {
    pub legs: Vec<Leg>,
    pub arrival: Minutes,
}

/// Earliest-arrival query on station indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Query {
    pub origin: u32,
    pub destination: u32,
    /// Earliest time a new train can be boarded at the origin.
    pub not_before: Minutes,
    /// Train the passenger is sitting in, and the segment it continues with
    /// from the origin. Staying on board needs no interchange time.
    pub onboard: Option<(u32, u32)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct LegRef {
    train: u32,
    board: u32,
    alight: u32,
}

struct StationLabel {
    arrival: Minutes,
    ready: Minutes,
    legs: Vec<LegRef>,
}

fn train_seq_cmp(a: &[LegRef], b: &[LegRef]) -> Ordering {
    a.len()
        .cmp(&b.len())
        .then_with(|| a.iter().map(|l| l.train).cmp(b.iter().map(|l| l.train)))
}

/// Connection scan over the propagated time stamps of one scenario. Train
/// indices follow ascending train id, so comparing index sequences breaks ties
/// lexicographically by id.
pub(crate) struct Router<'a> {
    g: &'a DepGraph,
    ts: &'a Timestamps,
    /// Connections whose departure or arrival moved, by actual departure.
    delayed: Vec<u32>,
}

impl<'a> Router<'a> {
    pub fn new(g: &'a DepGraph, ts: &'a Timestamps) -> Self {
        let mut delayed: Vec<u32> = ts.changed().iter().map(|&n| g.connection_of(n)).collect();
        delayed.sort_unstable();
        delayed.dedup();
        let conns = g.connections();
        delayed.sort_by_key(|&c| {
            let c = &conns[c as usize];
            (ts.get(c.dep), ts.get(c.arr), c.dep)
        });
        Router { g, ts, delayed }
    }

    fn moved(&self, c: &Connection) -> bool {
        let nodes = self.g.nodes();
        self.ts.get(c.dep) != nodes[c.dep as usize].planned
            || self.ts.get(c.arr) != nodes[c.arr as usize].planned
    }

    pub fn search(&self, q: &Query) -> Option<Itinerary> {
        let g = self.g;
        if q.origin == q.destination {
            return Some(Itinerary {
                legs: Vec::new(),
                arrival: q.not_before,
            });
        }
        let conns = g.connections();
        let nodes = g.nodes();
        let scan_from = match q.onboard {
            Some((train, seg)) => g
                .event_node(train, seg as usize, EventKind::Departure)
                .map(|n| self.ts.get(n).min(q.not_before))
                .unwrap_or(q.not_before),
            None => q.not_before,
        };

        let mut stations: Vec<Option<StationLabel>> = (0..g.station_count()).map(|_| None).collect();
        let mut trips: Vec<Option<Vec<LegRef>>> = vec![None; g.train_count()];
        stations[q.origin as usize] = Some(StationLabel {
            arrival: q.not_before,
            ready: q.not_before,
            legs: Vec::new(),
        });
        let mut best = Minutes::MAX;

        let mut i = conns.partition_point(|c| nodes[c.dep as usize].planned < scan_from);
        let mut j = self
            .delayed
            .partition_point(|&c| self.ts.get(conns[c as usize].dep) < scan_from);
        loop {
            while i < conns.len() && self.moved(&conns[i]) {
                i += 1;
            }
            let base = conns.get(i).map(|c| (nodes[c.dep as usize].planned, i));
            let late = self
                .delayed
                .get(j)
                .map(|&c| (self.ts.get(conns[c as usize].dep), c as usize));
            let (dep, ci) = match (base, late) {
                (Some(b), Some(l)) if l.0 < b.0 => {
                    j += 1;
                    l
                }
                (Some(b), _) => {
                    i += 1;
                    b
                }
                (None, Some(l)) => {
                    j += 1;
                    l
                }
                (None, None) => break,
            };
            if dep > best {
                break;
            }
            let c = &conns[ci];
            let arr = self.ts.get(c.arr);

            let mut boarding: Option<Vec<LegRef>> = None;
            let new_leg = LegRef {
                train: c.train,
                board: ci as u32,
                alight: ci as u32,
            };
            if q.onboard == Some((c.train, c.segment)) && c.from == q.origin {
                boarding = Some(vec![new_leg]);
            }
            if let Some(label) = &stations[c.from as usize] {
                let continuing = label.legs.last().is_some_and(|l| l.train == c.train);
                if label.ready <= dep && !continuing {
                    let better = boarding.as_ref().map_or(true, |b| {
                        train_seq_cmp(&label.legs, &b[..b.len() - 1]) == Ordering::Less
                    });
                    if better {
                        let mut legs = label.legs.clone();
                        legs.push(new_leg);
                        boarding = Some(legs);
                    }
                }
            }
            if let Some(b) = boarding {
                let slot = &mut trips[c.train as usize];
                if slot.as_ref().map_or(true, |t| train_seq_cmp(&b, t) == Ordering::Less) {
                    *slot = Some(b);
                }
            }

            let Some(trip) = &trips[c.train as usize] else {
                continue;
            };
            let improves = match &stations[c.to as usize] {
                None => true,
                Some(s) => arr
                    .cmp(&s.arrival)
                    .then_with(|| train_seq_cmp(trip, &s.legs))
                    == Ordering::Less,
            };
            if improves {
                let mut legs = trip.clone();
                if let Some(last) = legs.last_mut() {
                    last.alight = ci as u32;
                }
                stations[c.to as usize] = Some(StationLabel {
                    arrival: arr,
                    ready: arr + g.min_transfer(c.to),
                    legs,
                });
                if c.to == q.destination {
                    best = arr;
                }
            }
        }

        let label = stations[q.destination as usize].take()?;
        Some(Itinerary {
            arrival: label.arrival,
            legs: label
                .legs
                .iter()
                .map(|l| Leg {
                    train: g.train_id(l.train).to_string(),
                    board: g.station_id(conns[l.board as usize].from).to_string(),
                    alight: g.station_id(conns[l.alight as usize].to).to_string(),
                })
                .collect(),
        })
    }

    pub fn passenger_delay(&self, plan: &RoutePlan, max_delay: Minutes) -> PassengerOutcome {
        let ts = self.ts;
        let g = self.g;
        for pair in plan.legs.windows(2) {
            let (prev, next) = (&pair[0], &pair[1]);
            let arrived = ts.get(prev.arr);
            let ready = arrived + g.min_transfer(next.board_station);
            if ts.get(next.dep) >= ready {
                continue;
            }
            let onboard = ((prev.alight_segment as usize + 1) < g.segment_count(prev.train))
                .then_some((prev.train, prev.alight_segment + 1));
            let query = Query {
                origin: next.board_station,
                destination: plan.legs[plan.legs.len() - 1].alight_station,
                not_before: ready,
                onboard,
            };
            return match self.search(&query) {
                Some(it) => PassengerOutcome {
                    delay: (it.arrival - plan.planned_arrival).max(0),
                    stranded: false,
                    rerouted: true,
                },
                None => PassengerOutcome {
                    delay: max_delay,
                    stranded: true,
                    rerouted: true,
                },
            };
        }
        let last = &plan.legs[plan.legs.len() - 1];
        PassengerOutcome {
            delay: (ts.get(last.arr) - plan.planned_arrival).max(0),
            stranded: false,
            rerouted: false,
        }
    }
}

/// Earliest arrival at `destination` for a passenger ready at `origin` from
/// `not_before`. `Ok(None)` means no itinerary exists.
pub fn earliest_arrival(
    g: &DepGraph,
    ts: &Timestamps,
    origin: &str,
    destination: &str,
    not_before: Minutes,
) -> Result<Option<Itinerary>, DepGraphError> {
    let station = |id: &str| {
        g.station_index(id)
            .ok_or_else(|| DepGraphError::UnknownStation(id.to_string()))
    };
    let query = Query {
        origin: station(origin)?,
        destination: station(destination)?,
        not_before,
        onboard: None,
    };
    Ok(Router::new(g, ts).search(&query))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct PlanLeg {
    pub train: u32,
    pub dep: NodeId,
    pub arr: NodeId,
    pub board_station: u32,
    pub alight_station: u32,
    pub alight_segment: u32,
}

/// A passenger route resolved against a graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoutePlan {
    pub id: String,
    pub passengers: u32,
    pub planned_arrival: Minutes,
    pub(crate) legs: Vec<PlanLeg>,
}

impl RoutePlan {
    pub fn trains(&self) -> impl Iterator<Item = u32> + '_ {
        self.legs.iter().map(|l| l.train)
    }
}

pub fn route_plan(g: &DepGraph, route: &PassengerRoute) -> Result<RoutePlan, DepGraphError> {
    let bad = |reason: String| DepGraphError::Route {
        route: route.id.clone(),
        reason,
    };
    if route.legs.is_empty() {
        return Err(bad("no legs".into()));
    }
    let mut legs = Vec::with_capacity(route.legs.len());
    for leg in &route.legs {
        let train = g
            .train_index(&leg.train)
            .ok_or_else(|| bad(format!("unknown train `{}`", leg.train)))?;
        let board = g
            .station_index(&leg.board)
            .ok_or_else(|| bad(format!("unknown station `{}`", leg.board)))?;
        let alight = g
            .station_index(&leg.alight)
            .ok_or_else(|| bad(format!("unknown station `{}`", leg.alight)))?;
        let segs = g.segment_count(train);
        let node = |s: usize, kind| g.event_node(train, s, kind).expect("segment in range");
        let first = (0..segs)
            .find(|&s| g.nodes()[node(s, EventKind::Departure) as usize].station == board)
            .ok_or_else(|| bad(format!("`{}` does not depart from `{}`", leg.train, leg.board)))?;
        let last = (first..segs)
            .find(|&s| g.nodes()[node(s, EventKind::Arrival) as usize].station == alight)
            .ok_or_else(|| bad(format!("`{}` does not reach `{}`", leg.train, leg.alight)))?;
        legs.push(PlanLeg {
            train,
            dep: node(first, EventKind::Departure),
            arr: node(last, EventKind::Arrival),
            board_station: board,
            alight_station: alight,
            alight_segment: last as u32,
        });
    }
    Ok(RoutePlan {
        id: route.id.clone(),
        passengers: route.passenger_count,
        planned_arrival: route.planned_arrival,
        legs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassengerOutcome {
    /// Arrival delay at the destination, floored at 0; the configured maximum
    /// for stranded passengers.
    pub delay: Minutes,
    pub stranded: bool,
    pub rerouted: bool,
}

/// Follows the planned legs while connections hold under `ts`; at the first
/// broken connection the passenger is rerouted from that station.
pub fn passenger_delay(
    g: &DepGraph,
    ts: &Timestamps,
    route: &PassengerRoute,
    max_delay: Minutes,
) -> Result<PassengerOutcome, DepGraphError> {
    let plan = route_plan(g, route)?;
    Ok(Router::new(g, ts).passenger_delay(&plan, max_delay))
}
