//! Time-expanded dependency graph used for delay propagation.
//!
//! Every segment contributes a departure and an arrival node, each fed by a
//! schedule node carrying its planned time. Traveling edges join a departure
//! to the next arrival of the same train, standing edges an arrival to the
//! next departure, and transfer edges an arrival to a later departure of a
//! different train at the same station. Forecast nodes can be attached to
//! events as additional lower bounds.
//!
//! Event nodes are numbered in a topological order (planned time, arrivals
//! before departures, then train and segment), which propagation relies on.

mod propagate;
mod routing;
mod sweep;

pub use propagate::{propagate, propagate_into, DelayScenario, Propagator, Timestamps};
pub use routing::{earliest_arrival, passenger_delay, route_plan, Itinerary, PassengerOutcome, Query, RoutePlan};
pub use sweep::{
    read_sweep_csv, resolve_scenario, secondary_delay_sweep, write_sweep_csv, ScenarioEntry,
    SweepOptions, SweepRecord, DEFAULT_MAX_DELAY,
};

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pesp::DEFAULT_MIN_STANDING;
use crate::timetable::{Category, EventKind, Minutes, Timetable, TransferOpportunity};

pub type NodeId = u32;

pub const DEFAULT_MAX_WAIT: Minutes = 5;

#[derive(Debug, Error, PartialEq)]
pub enum DepGraphError {
    #[error("edge {tail} -> {head} points backwards in planned-time order")]
    Order { tail: NodeId, head: NodeId },
    #[error("node {0} does not exist")]
    UnknownNode(NodeId),
    #[error("delays cannot be injected on schedule node {0}")]
    ScheduleInjection(NodeId),
    #[error("negative primary delay {0}")]
    NegativeDelay(Minutes),
    #[error("unknown train `{0}`")]
    UnknownTrain(String),
    #[error("unknown station `{0}`")]
    UnknownStation(String),
    #[error("train `{train}` has no {kind} at `{station}`")]
    NoSuchEvent {
        train: String,
        station: String,
        kind: &'static str,
    },
    #[error("transfer refers to missing segment {segment} of `{train}`")]
    BadTransfer { train: String, segment: usize },
    #[error("invalid waiting policy: {0}")]
    Policy(String),
    #[error("route `{route}` does not match the timetable: {reason}")]
    Route { route: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Schedule,
    Forecast,
    Arrival,
    Departure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    Schedule,
    Forecast,
    Standing,
    Traveling,
    Transfer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub kind: NodeKind,
    pub train: u32,
    pub segment: u32,
    pub station: u32,
    /// Planned time for event and schedule nodes, forecast time for forecasts.
    pub planned: Minutes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub kind: EdgeKind,
    pub tail: NodeId,
    pub head: NodeId,
    pub bound: Minutes,
    /// Longest wait of the head departure for this feeder; transfer edges only.
    pub max_wait: Minutes,
}

/// How a connecting train reacts to a feeder that needs more than `max_wait`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WaitMode {
    /// Wait up to `max_wait`, then leave.
    #[default]
    Capped,
    /// Do not wait at all once the feeder is known to exceed `max_wait`.
    /// Not monotone in the injected delay.
    DropBeyondMax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WaitRule {
    pub feeder: Category,
    pub connecting: Category,
    pub max_wait: Minutes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WaitingPolicy {
    pub rules: Vec<WaitRule>,
    pub default_max_wait: Minutes,
    pub mode: WaitMode,
    /// Fraction of a departure delay recovered while traveling, in `[0, 1)`.
    pub catch_up: f64,
}

impl Default for WaitingPolicy {
    fn default() -> Self {
        WaitingPolicy {
            rules: Vec::new(),
            default_max_wait: DEFAULT_MAX_WAIT,
            mode: WaitMode::Capped,
            catch_up: 0.0,
        }
    }
}

impl WaitingPolicy {
    pub fn validate(&self) -> Result<(), DepGraphError> {
        if self.default_max_wait < 0 {
            return Err(DepGraphError::Policy("default_max_wait must be >= 0".into()));
        }
        if let Some(r) = self.rules.iter().find(|r| r.max_wait < 0) {
            return Err(DepGraphError::Policy(format!(
                "max_wait for {} -> {} must be >= 0",
                r.feeder.as_str(),
                r.connecting.as_str()
            )));
        }
        if !(0.0..1.0).contains(&self.catch_up) {
            return Err(DepGraphError::Policy("catch_up must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// The last matching rule wins; otherwise the default.
    pub fn max_wait(&self, feeder: Category, connecting: Category) -> Minutes {
        self.rules
            .iter()
            .rev()
            .find(|r| r.feeder == feeder && r.connecting == connecting)
            .map(|r| r.max_wait)
            .unwrap_or(self.default_max_wait)
    }
}

/// One segment as seen by the router.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Connection {
    pub dep: NodeId,
    pub arr: NodeId,
    pub from: u32,
    pub to: u32,
    pub train: u32,
    pub segment: u32,
}

#[derive(Debug, Clone)]
pub struct DepGraph {
    stations: Vec<String>,
    station_index: HashMap<String, u32>,
    min_transfer: Vec<Minutes>,
    trains: Vec<String>,
    train_index: HashMap<String, u32>,
    categories: Vec<Category>,
    seg_offset: Vec<usize>,
    /// Per global segment: `[departure, arrival]`.
    event_nodes: Vec<[NodeId; 2]>,
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    event_count: usize,
    in_start: Vec<usize>,
    in_edges: Vec<u32>,
    out_start: Vec<usize>,
    /// `(slack, head)` sorted by slack: the head can only move once the tail
    /// is delayed by more than the slack.
    out_nodes: Vec<(Minutes, NodeId)>,
    /// Lower bound per event node: planned time raised by forecasts.
    floor: Vec<Minutes>,
    /// Event nodes whose floor exceeds the planned time.
    raised: Vec<NodeId>,
    policy: WaitingPolicy,
    connections: Vec<Connection>,
    /// Connection index per event node.
    conn_of: Vec<u32>,
}

fn topo_key(n: &Node) -> (Minutes, u8, u32, u32) {
    let kind = u8::from(n.kind == NodeKind::Departure);
    (n.planned, kind, n.train, n.segment)
}

/// Builds the graph. Standing edges are bounded by the smaller of the default
/// minimum standing time and the planned dwell, so the undisturbed schedule is
/// a fixed point.
pub fn build_depgraph(
    tt: &Timetable,
    transfers: &[TransferOpportunity],
    policy: &WaitingPolicy,
) -> Result<DepGraph, DepGraphError> {
    policy.validate()?;
    let stations: Vec<String> = tt.stations().keys().cloned().collect();
    let station_index: HashMap<String, u32> = stations
        .iter()
        .enumerate()
        .map(|(i, s)| (s.clone(), i as u32))
        .collect();
    let min_transfer = tt.stations().values().map(|s| s.min_transfer).collect();
    let trains: Vec<String> = tt.runs().keys().cloned().collect();
    let train_index: HashMap<String, u32> = trains
        .iter()
        .enumerate()
        .map(|(i, s)| (s.clone(), i as u32))
        .collect();
    let categories = tt.runs().values().map(|r| r.category).collect();

    let mut seg_offset = Vec::with_capacity(trains.len() + 1);
    let mut events = Vec::new();
    for (ti, run) in tt.runs().values().enumerate() {
        seg_offset.push(events.len() / 2);
        for (si, seg) in run.segments.iter().enumerate() {
            events.push(Node {
                kind: NodeKind::Departure,
                train: ti as u32,
                segment: si as u32,
                station: station_index[&seg.from_station],
                planned: seg.dep_time,
            });
            events.push(Node {
                kind: NodeKind::Arrival,
                train: ti as u32,
                segment: si as u32,
                station: station_index[&seg.to_station],
                planned: seg.arr_time,
            });
        }
    }
    seg_offset.push(events.len() / 2);
    let event_count = events.len();

    let mut order: Vec<usize> = (0..event_count).collect();
    order.sort_by_key(|&i| topo_key(&events[i]));
    let mut event_nodes = vec![[0; 2]; event_count / 2];
    let mut nodes = Vec::with_capacity(2 * event_count);
    for (id, &i) in order.iter().enumerate() {
        event_nodes[i / 2][i % 2] = id as NodeId;
        nodes.push(events[i]);
    }
    for id in 0..event_count {
        let mut s = nodes[id];
        s.kind = NodeKind::Schedule;
        nodes.push(s);
    }

    let mut edges = Vec::new();
    for id in 0..event_count {
        edges.push(Edge {
            kind: EdgeKind::Schedule,
            tail: (event_count + id) as NodeId,
            head: id as NodeId,
            bound: nodes[id].planned,
            max_wait: 0,
        });
    }
    for (ti, run) in tt.runs().values().enumerate() {
        for (si, seg) in run.segments.iter().enumerate() {
            let [dep, arr] = event_nodes[seg_offset[ti] + si];
            edges.push(Edge {
                kind: EdgeKind::Traveling,
                tail: dep,
                head: arr,
                bound: seg.duration(),
                max_wait: 0,
            });
            if si > 0 {
                let prev_arr = event_nodes[seg_offset[ti] + si - 1][1];
                let dwell = seg.dep_time - run.segments[si - 1].arr_time;
                edges.push(Edge {
                    kind: EdgeKind::Standing,
                    tail: prev_arr,
                    head: dep,
                    bound: DEFAULT_MIN_STANDING.min(dwell),
                    max_wait: 0,
                });
            }
        }
    }
    for t in transfers {
        let node = |train: &str, segment: usize, slot: usize| -> Result<(NodeId, u32), DepGraphError> {
            let bad = || DepGraphError::BadTransfer {
                train: train.to_string(),
                segment,
            };
            let ti = *train_index.get(train).ok_or_else(bad)?;
            let g = seg_offset[ti as usize] + segment;
            if g >= seg_offset[ti as usize + 1] {
                return Err(bad());
            }
            Ok((event_nodes[g][slot], ti))
        };
        let (tail, feeder) = node(&t.from_arrival.train, t.from_arrival.segment, 1)?;
        let (head, connecting) = node(&t.to_departure.train, t.to_departure.segment, 0)?;
        let max_wait = policy.max_wait(
            tt.run(&trains[feeder as usize]).map(|r| r.category).unwrap_or(Category::Other),
            tt.run(&trains[connecting as usize]).map(|r| r.category).unwrap_or(Category::Other),
        );
        edges.push(Edge {
            kind: EdgeKind::Transfer,
            tail,
            head,
            bound: t.min_transfer,
            max_wait,
        });
    }

    for e in &edges {
        if e.kind != EdgeKind::Schedule && e.tail >= e.head {
            return Err(DepGraphError::Order {
                tail: e.tail,
                head: e.head,
            });
        }
    }

    let floor = nodes[..event_count].iter().map(|n| n.planned).collect();
    let mut g = DepGraph {
        stations,
        station_index,
        min_transfer,
        trains,
        train_index,
        categories,
        seg_offset,
        event_nodes,
        nodes,
        edges,
        event_count,
        in_start: Vec::new(),
        in_edges: Vec::new(),
        out_start: Vec::new(),
        out_nodes: Vec::new(),
        floor,
        raised: Vec::new(),
        policy: policy.clone(),
        connections: Vec::new(),
        conn_of: Vec::new(),
    };
    g.index_edges();
    g.index_connections();
    Ok(g)
}

impl DepGraph {
    fn index_edges(&mut self) {
        let n = self.event_count;
        let mut in_deg = vec![0usize; n + 1];
        let mut out_deg = vec![0usize; n + 1];
        let propagating = |e: &Edge| {
            matches!(e.kind, EdgeKind::Standing | EdgeKind::Traveling | EdgeKind::Transfer)
        };
        for e in self.edges.iter().filter(|e| propagating(e)) {
            in_deg[e.head as usize + 1] += 1;
            out_deg[e.tail as usize + 1] += 1;
        }
        for i in 0..n {
            in_deg[i + 1] += in_deg[i];
            out_deg[i + 1] += out_deg[i];
        }
        let mut in_edges = vec![0u32; in_deg[n]];
        let mut out_nodes = vec![(0, 0); out_deg[n]];
        let mut in_fill = in_deg.clone();
        let mut out_fill = out_deg.clone();
        for (i, e) in self.edges.iter().enumerate() {
            if !propagating(e) {
                continue;
            }
            in_edges[in_fill[e.head as usize]] = i as u32;
            in_fill[e.head as usize] += 1;
            let slack = self.nodes[e.head as usize].planned
                - e.bound
                - self.nodes[e.tail as usize].planned;
            let slack = if e.kind == EdgeKind::Traveling { slack.min(0) } else { slack };
            out_nodes[out_fill[e.tail as usize]] = (slack, e.head);
            out_fill[e.tail as usize] += 1;
        }
        for i in 0..n {
            out_nodes[out_deg[i]..out_deg[i + 1]].sort_unstable();
        }
        self.in_start = in_deg;
        self.in_edges = in_edges;
        self.out_start = out_deg;
        self.out_nodes = out_nodes;
    }

    fn index_connections(&mut self) {
        let mut conns: Vec<Connection> = self
            .event_nodes
            .iter()
            .map(|&[dep, arr]| {
                let d = &self.nodes[dep as usize];
                Connection {
                    dep,
                    arr,
                    from: d.station,
                    to: self.nodes[arr as usize].station,
                    train: d.train,
                    segment: d.segment,
                }
            })
            .collect();
        conns.sort_by_key(|c| (c.dep, c.arr));
        let mut conn_of = vec![0u32; self.event_count];
        for (i, c) in conns.iter().enumerate() {
            conn_of[c.dep as usize] = i as u32;
            conn_of[c.arr as usize] = i as u32;
        }
        self.connections = conns;
        self.conn_of = conn_of;
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.nodes.get(id as usize)
    }

    /// Number of arrival and departure nodes. These occupy ids `0..event_count`.
    pub fn event_count(&self) -> usize {
        self.event_count
    }

    pub fn policy(&self) -> &WaitingPolicy {
        &self.policy
    }

    pub fn station_id(&self, index: u32) -> &str {
        &self.stations[index as usize]
    }

    pub fn station_index(&self, id: &str) -> Option<u32> {
        self.station_index.get(id).copied()
    }

    pub fn station_count(&self) -> usize {
        self.stations.len()
    }

    pub fn min_transfer(&self, station: u32) -> Minutes {
        self.min_transfer[station as usize]
    }

    pub fn train_id(&self, index: u32) -> &str {
        &self.trains[index as usize]
    }

    pub fn train_index(&self, id: &str) -> Option<u32> {
        self.train_index.get(id).copied()
    }

    pub fn train_count(&self) -> usize {
        self.trains.len()
    }

    pub fn category(&self, train: u32) -> Category {
        self.categories[train as usize]
    }

    pub fn segment_count(&self, train: u32) -> usize {
        self.seg_offset[train as usize + 1] - self.seg_offset[train as usize]
    }

    /// Event node of a train's segment.
    pub fn event_node(&self, train: u32, segment: usize, kind: EventKind) -> Option<NodeId> {
        if segment >= self.segment_count(train) {
            return None;
        }
        let pair = self.event_nodes[self.seg_offset[train as usize] + segment];
        Some(match kind {
            EventKind::Departure => pair[0],
            EventKind::Arrival => pair[1],
        })
    }

    /// First event of `kind` of `train` at `station`.
    pub fn find_event(&self, train: &str, station: &str, kind: EventKind) -> Result<NodeId, DepGraphError> {
        let ti = self
            .train_index(train)
            .ok_or_else(|| DepGraphError::UnknownTrain(train.to_string()))?;
        let si = self
            .station_index(station)
            .ok_or_else(|| DepGraphError::UnknownStation(station.to_string()))?;
        (0..self.segment_count(ti))
            .filter_map(|s| self.event_node(ti, s, kind))
            .find(|&n| self.nodes[n as usize].station == si)
            .ok_or(DepGraphError::NoSuchEvent {
                train: train.to_string(),
                station: station.to_string(),
                kind: kind.as_str(),
            })
    }

    /// Adds a forecast node whose time becomes a lower bound for `event`.
    pub fn add_forecast(&mut self, event: NodeId, time: Minutes) -> Result<NodeId, DepGraphError> {
        if event as usize >= self.event_count {
            return Err(DepGraphError::UnknownNode(event));
        }
        let mut node = self.nodes[event as usize];
        node.kind = NodeKind::Forecast;
        node.planned = time;
        let id = self.nodes.len() as NodeId;
        self.nodes.push(node);
        self.edges.push(Edge {
            kind: EdgeKind::Forecast,
            tail: id,
            head: event,
            bound: time,
            max_wait: 0,
        });
        let floor = &mut self.floor[event as usize];
        *floor = (*floor).max(time);
        if *floor > self.nodes[event as usize].planned && !self.raised.contains(&event) {
            self.raised.push(event);
        }
        Ok(id)
    }

    pub(crate) fn in_edges(&self, node: NodeId) -> impl Iterator<Item = &Edge> + '_ {
        let n = node as usize;
        self.in_edges[self.in_start[n]..self.in_start[n + 1]]
            .iter()
            .map(move |&e| &self.edges[e as usize])
    }

    pub(crate) fn successors(&self, node: NodeId) -> &[(Minutes, NodeId)] {
        let n = node as usize;
        &self.out_nodes[self.out_start[n]..self.out_start[n + 1]]
    }

    pub(crate) fn floor(&self, node: NodeId) -> Minutes {
        self.floor[node as usize]
    }

    pub(crate) fn raised(&self) -> &[NodeId] {
        &self.raised
    }

    pub(crate) fn connections(&self) -> &[Connection] {
        &self.connections
    }

    pub(crate) fn connection_of(&self, node: NodeId) -> u32 {
        self.conn_of[node as usize]
    }

    /// Edge counts per kind.
    pub fn edge_counts(&self) -> BTreeMap<&'static str, usize> {
        let mut out = BTreeMap::new();
        for e in &self.edges {
            let name = match e.kind {
                EdgeKind::Schedule => "schedule",
                EdgeKind::Forecast => "forecast",
                EdgeKind::Standing => "standing",
                EdgeKind::Traveling => "traveling",
                EdgeKind::Transfer => "transfer",
            };
            *out.entry(name).or_insert(0) += 1;
        }
        out
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use crate::timetable::{Category, Minutes, Segment, Station, Timetable, TrainRun};

    pub fn st(id: &str, mt: Minutes) -> Station {
        Station {
            id: id.into(),
            name: id.into(),
            min_transfer: mt,
        }
    }

    pub fn run(id: &str, category: Category, hops: &[(&str, Minutes, &str, Minutes)]) -> TrainRun {
        TrainRun {
            id: id.into(),
            category,
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

    /// Feeder F reaches X at 600; C leaves X at `600 + buffer` for Y and Z.
    pub fn three_train(buffer: Minutes) -> Timetable {
        Timetable::new(
            vec![st("A", 0), st("X", 0), st("Y", 0), st("Z", 0), st("Q", 0)],
            vec![
                run("F", Category::LongDistance, &[("A", 540, "X", 600)]),
                run(
                    "C",
                    Category::LongDistance,
                    &[("X", 600 + buffer, "Y", 640), ("Y", 642, "Z", 680)],
                ),
                run("U", Category::Other, &[("Q", 500, "Z", 560)]),
            ],
            vec![],
            1440,
        )
        .unwrap()
    }
}
