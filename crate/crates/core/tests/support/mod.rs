//! Fixtures and a brute-force reference for delay propagation.
#![allow(dead_code)]

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use railsync::depgraph::{WaitRule, WaitingPolicy};
use railsync::timetable::{Category, EventKind, Leg, Segment, Station, Timetable, TrainRun};
use railsync::Minutes;

pub fn station(id: &str, min_transfer: Minutes) -> Station {
    Station {
        id: id.into(),
        name: id.into(),
        min_transfer,
    }
}

/// A run through `stops` as `(station, arrival, departure)`; the first arrival
/// and the last departure are ignored.
pub fn run(id: &str, category: Category, stops: &[(&str, Minutes, Minutes)]) -> TrainRun {
    TrainRun {
        id: id.into(),
        category,
        segments: stops
            .windows(2)
            .map(|w| Segment {
                from_station: w[0].0.into(),
                dep_time: w[0].2,
                to_station: w[1].0.into(),
                arr_time: w[1].1,
            })
            .collect(),
    }
}

pub fn leg(train: &str, board: &str, alight: &str) -> Leg {
    Leg {
        train: train.into(),
        board: board.into(),
        alight: alight.into(),
    }
}

/// Two-connection fixture: feeder `A` reaches `X` at 600, the planned
/// connection `C` leaves at 604 (buffer 4, interchange 1, max wait 5) and
/// reaches `Z` at 660. The fast `F` leaves at 610 and never waits; it reaches
/// `Z` at 665. The slow `S` leaves at 621 and reaches `Z` at 685.
pub fn staircase() -> (Timetable, WaitingPolicy) {
    let stations = vec![station("O", 0), station("X", 1), station("Z", 0)];
    let runs = vec![
        run("A", Category::Other, &[("O", 0, 570), ("X", 600, 0)]),
        run("C", Category::Other, &[("X", 0, 604), ("Z", 660, 0)]),
        run("F", Category::LongDistanceFast, &[("X", 0, 610), ("Z", 665, 0)]),
        run("S", Category::Other, &[("X", 0, 621), ("Z", 685, 0)]),
    ];
    let tt = Timetable::new(stations, runs, Vec::new(), 1440).unwrap();
    let route = tt
        .resolve_route("r", 1, vec![leg("A", "O", "X"), leg("C", "X", "Z")])
        .unwrap();
    let tt = tt.with_routes(vec![route]).unwrap();
    let policy = WaitingPolicy {
        rules: vec![WaitRule {
            feeder: Category::Other,
            connecting: Category::LongDistanceFast,
            max_wait: 0,
        }],
        ..WaitingPolicy::default()
    };
    (tt, policy)
}

/// Passenger delay on the staircase fixture, by construction.
pub fn staircase_expected(p: Minutes) -> Minutes {
    match p {
        0..=3 => 0,
        4..=8 => p - 3,
        9 => 5,
        _ => 25,
    }
}

/// Random timetable with `trains` runs over a handful of stations, plus a
/// random waiting policy.
pub fn random_instance(seed: u64, trains: usize) -> (Timetable, WaitingPolicy) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<String> = (0..6).map(|i| format!("s{i}")).collect();
    let stations: Vec<Station> = names
        .iter()
        .map(|n| station(n, rng.gen_range(0..=4)))
        .collect();
    let mut runs = Vec::new();
    for t in 0..trains {
        let hops = rng.gen_range(1..=4);
        let mut at = names.choose(&mut rng).unwrap().clone();
        let mut time = rng.gen_range(0..90);
        let mut segments = Vec::new();
        for _ in 0..hops {
            let next = loop {
                let c = names.choose(&mut rng).unwrap();
                if *c != at {
                    break c.clone();
                }
            };
            let arr = time + rng.gen_range(3..=15);
            segments.push(Segment {
                from_station: at.clone(),
                dep_time: time,
                to_station: next.clone(),
                arr_time: arr,
            });
            at = next;
            time = arr + rng.gen_range(0..=4);
        }
        runs.push(TrainRun {
            id: format!("t{t}"),
            category: *Category::ALL.choose(&mut rng).unwrap(),
            segments,
        });
    }
    let tt = Timetable::new(stations, runs, Vec::new(), 1440).unwrap();
    let mut rules = Vec::new();
    for _ in 0..rng.gen_range(0..4) {
        rules.push(WaitRule {
            feeder: *Category::ALL.choose(&mut rng).unwrap(),
            connecting: *Category::ALL.choose(&mut rng).unwrap(),
            max_wait: rng.gen_range(0..=10),
        });
    }
    let policy = WaitingPolicy {
        rules,
        default_max_wait: rng.gen_range(0..=8),
        catch_up: if rng.gen_bool(0.5) { 0.0 } else { 0.3 },
        ..WaitingPolicy::default()
    };
    (tt, policy)
}

/// Event key `(train, segment, kind)`.
pub type EventKey = (String, usize, EventKind);

/// Least fixed point of the waiting, standing and traveling rules, found by
/// raising every event to the maximum of its constraints until nothing moves.
/// Works on the timetable directly and does not use the dependency graph.
pub fn fixed_point(
    tt: &Timetable,
    policy: &WaitingPolicy,
    transfer_window: Minutes,
    injection: Option<(&EventKey, Minutes)>,
) -> HashMap<EventKey, Minutes> {
    let planned = |run: &TrainRun, s: usize, kind: EventKind| match kind {
        EventKind::Departure => run.segments[s].dep_time,
        EventKind::Arrival => run.segments[s].arr_time,
    };
    let mut value: HashMap<EventKey, Minutes> = HashMap::new();
    for run in tt.runs().values() {
        for s in 0..run.segments.len() {
            for kind in [EventKind::Departure, EventKind::Arrival] {
                value.insert((run.id.clone(), s, kind), planned(run, s, kind));
            }
        }
    }
    if let Some((key, p)) = injection {
        *value.get_mut(key).unwrap() += p;
    }
    let floor = value.clone();

    // (feeder arrival, connecting departure, min transfer, max wait)
    let mut transfers = Vec::new();
    for (sid, st) in tt.stations() {
        for a in tt.runs().values() {
            for (i, sa) in a.segments.iter().enumerate() {
                if sa.to_station != *sid {
                    continue;
                }
                for b in tt.runs().values() {
                    if b.id == a.id {
                        continue;
                    }
                    for (j, sb) in b.segments.iter().enumerate() {
                        let gap = sb.dep_time - sa.arr_time;
                        if sb.from_station == *sid && gap >= st.min_transfer && gap <= transfer_window {
                            transfers.push((
                                (a.id.clone(), i, EventKind::Arrival),
                                (b.id.clone(), j, EventKind::Departure),
                                st.min_transfer,
                                policy.max_wait(a.category, b.category),
                            ));
                        }
                    }
                }
            }
        }
    }

    loop {
        let mut moved = false;
        for run in tt.runs().values() {
            for s in 0..run.segments.len() {
                let dep_key = (run.id.clone(), s, EventKind::Departure);
                let arr_key = (run.id.clone(), s, EventKind::Arrival);
                let mut dep = value[&dep_key].max(floor[&dep_key]);
                if s > 0 {
                    let prev_arr = value[&(run.id.clone(), s - 1, EventKind::Arrival)];
                    let dwell = run.segments[s].dep_time - run.segments[s - 1].arr_time;
                    dep = dep.max(prev_arr + dwell.min(2));
                }
                for (feeder, connecting, mt, max_wait) in &transfers {
                    if *connecting == dep_key {
                        let ready = value[feeder] + mt;
                        let pl = run.segments[s].dep_time;
                        if ready > pl {
                            dep = dep.max(ready.min(pl + max_wait));
                        }
                    }
                }
                let delay = dep - run.segments[s].dep_time;
                let recovered = (policy.catch_up * delay as f64).floor() as Minutes;
                let arr = value[&arr_key]
                    .max(floor[&arr_key])
                    .max(run.segments[s].arr_time + delay - recovered)
                    .max(dep + 1);
                for (key, v) in [(dep_key, dep), (arr_key, arr)] {
                    if value[&key] != v {
                        value.insert(key, v);
                        moved = true;
                    }
                }
            }
        }
        if !moved {
            return value;
        }
    }
}
