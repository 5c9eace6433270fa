use std::cmp::Reverse;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use super::{DepGraph, DepGraphError, EdgeKind, NodeId, NodeKind, WaitMode};
use crate::timetable::Minutes;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DelayScenario {
    /// `(node, primary delay)`; delays on the same node combine by maximum.
    pub injections: Vec<(NodeId, Minutes)>,
}

impl DelayScenario {
    pub fn single(node: NodeId, delay: Minutes) -> Self {
        DelayScenario {
            injections: vec![(node, delay)],
        }
    }
}

/// Current time stamps of the event nodes, dense, plus the list of nodes that
/// differ from their planned time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Timestamps {
    values: Vec<Minutes>,
    changed: Vec<NodeId>,
}

impl Timestamps {
    pub fn planned(g: &DepGraph) -> Self {
        Timestamps {
            values: g.nodes()[..g.event_count()].iter().map(|n| n.planned).collect(),
            changed: Vec::new(),
        }
    }

    /// Time stamp of an event node.
    pub fn get(&self, node: NodeId) -> Minutes {
        self.values[node as usize]
    }

    pub fn as_slice(&self) -> &[Minutes] {
        &self.values
    }

    /// Event nodes whose time stamp differs from the planned time, ascending.
    pub fn changed(&self) -> &[NodeId] {
        &self.changed
    }

    fn reset(&mut self, g: &DepGraph) {
        for &n in &self.changed {
            self.values[n as usize] = g.nodes()[n as usize].planned;
        }
        self.changed.clear();
    }
}

/// Reusable propagation scratch space.
#[derive(Debug, Default)]
pub struct Propagator {
    heap: BinaryHeap<Reverse<NodeId>>,
    injected: Vec<(NodeId, Minutes)>,
}

pub fn propagate(g: &DepGraph, sc: &DelayScenario) -> Result<Timestamps, DepGraphError> {
    let mut ts = Timestamps::planned(g);
    propagate_into(g, sc, &mut ts, &mut Propagator::default())?;
    Ok(ts)
}

/// Recomputes `ts` for scenario `sc`, reusing allocations. Only nodes reachable
/// from the injections (and forecasts) are visited, in topological order.
pub fn propagate_into(
    g: &DepGraph,
    sc: &DelayScenario,
    ts: &mut Timestamps,
    scratch: &mut Propagator,
) -> Result<(), DepGraphError> {
    ts.reset(g);
    scratch.heap.clear();
    scratch.injected.clear();
    for &(node, p) in &sc.injections {
        if p < 0 {
            return Err(DepGraphError::NegativeDelay(p));
        }
        let n = g.node(node).ok_or(DepGraphError::UnknownNode(node))?;
        let (target, time) = match n.kind {
            NodeKind::Schedule => return Err(DepGraphError::ScheduleInjection(node)),
            NodeKind::Forecast => {
                let edge = g
                    .edges()
                    .iter()
                    .find(|e| e.kind == EdgeKind::Forecast && e.tail == node)
                    .ok_or(DepGraphError::UnknownNode(node))?;
                (edge.head, n.planned + p)
            }
            NodeKind::Arrival | NodeKind::Departure => (node, n.planned + p),
        };
        scratch.injected.push((target, time));
        scratch.heap.push(Reverse(target));
    }
    scratch.injected.sort_unstable();
    for &node in g.raised() {
        scratch.heap.push(Reverse(node));
    }

    let policy = g.policy();
    let mut last = None;
    while let Some(Reverse(v)) = scratch.heap.pop() {
        if last == Some(v) {
            continue;
        }
        last = Some(v);
        let node = &g.nodes()[v as usize];
        let planned = node.planned;
        let mut t = g.floor(v);
        let start = scratch.injected.partition_point(|&(n, _)| n < v);
        for &(_, time) in scratch.injected[start..].iter().take_while(|&&(n, _)| n == v) {
            t = t.max(time);
        }
        for e in g.in_edges(v) {
            let tail = ts.values[e.tail as usize];
            match e.kind {
                EdgeKind::Standing => t = t.max(tail + e.bound),
                EdgeKind::Transfer => {
                    let ready = tail + e.bound;
                    if ready > planned {
                        match policy.mode {
                            WaitMode::Capped => t = t.max(ready.min(planned + e.max_wait)),
                            WaitMode::DropBeyondMax => {
                                if ready <= planned + e.max_wait {
                                    t = t.max(ready);
                                }
                            }
                        }
                    }
                }
                EdgeKind::Traveling => {
                    let delay = tail - g.nodes()[e.tail as usize].planned;
                    let recovered = (policy.catch_up * delay as f64).floor() as Minutes;
                    t = t.max(planned + delay - recovered).max(tail + 1);
                }
                EdgeKind::Schedule | EdgeKind::Forecast => {}
            }
        }
        if t != ts.values[v as usize] {
            ts.values[v as usize] = t;
            if t != planned {
                ts.changed.push(v);
            }
            let delay = t - planned;
            for &(slack, s) in g.successors(v) {
                if slack >= delay {
                    break;
                }
                scratch.heap.push(Reverse(s));
            }
        }
    }
    Ok(())
}
