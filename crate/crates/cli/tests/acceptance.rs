//! Acceptance suite: one PASS/FAIL line per criterion, written straight to
//! stderr so it shows up even when the test harness captures output.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use railsync::avalanche::{self, AvaParams, Driver};
use railsync::depgraph::{
    build_depgraph, passenger_delay, propagate, secondary_delay_sweep, DelayScenario, NodeKind,
    SweepOptions, WaitingPolicy,
};
use railsync::pesp::{verify_nonperiodic, verify_periodic, Constraint, PespInstance, TimetableVector, UNBOUNDED};
use railsync::stats::linear_fit;
use railsync::sync::{
    category_means, null_samples, order_parameter, phase_of, reduced_sync, sigma_star_profile, SizeClass,
    SyncParams,
};
use railsync::timetable::{
    buffering_times, derive_transfers, generate_synthetic, EventKind, SyncBand, SyntheticParams,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(number: u32, limit: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = f();
    let elapsed = start.elapsed();
    let in_time = elapsed < limit;
    let pass = outcome.pass && in_time;
    let line = format!(
        "criterion {number:>2}: {} ({:.2} s, limit {} s) {}{}",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        limit.as_secs(),
        outcome.detail,
        if in_time { "" } else { " [over time limit]" },
    );
    let _ = writeln!(std::io::stderr(), "{line}");
    pass
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

fn sync_algebra() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let tau = 120.0;
    let (mut bounds, mut identical, mut grid, mut shift) = (0, 0, 0, 0);
    let mut worst_grid: f64 = 0.0;
    let mut worst_shift: f64 = 0.0;
    let stations = 200;
    for _ in 0..stations {
        let t_k = rng.gen_range(2..=400);
        let times: Vec<i64> = (0..t_k).map(|_| rng.gen_range(0..1440)).collect();
        let phases: Vec<f64> = times.iter().map(|&t| phase_of(t as f64, tau)).collect();
        let sigma = order_parameter(&phases).unwrap();
        bounds += usize::from((0.0..=1.0).contains(&sigma));

        let same = vec![phase_of(rng.gen_range(0..1440) as f64, tau); t_k];
        identical += usize::from((order_parameter(&same).unwrap() - 1.0).abs() <= 1e-12);

        let roots: Vec<f64> = (0..t_k).map(|j| 2.0 * PI * j as f64 / t_k as f64).collect();
        let r = order_parameter(&roots).unwrap();
        worst_grid = worst_grid.max(r);
        grid += usize::from(r <= 1e-9);

        let delta = rng.gen_range(-5000..5000);
        let shifted: Vec<f64> = times.iter().map(|&t| phase_of((t + delta) as f64, tau)).collect();
        let d = (order_parameter(&shifted).unwrap() - sigma).abs();
        worst_shift = worst_shift.max(d);
        shift += usize::from(d <= 1e-12);
    }
    Outcome {
        pass: [bounds, identical, grid, shift].iter().all(|&c| c == stations),
        detail: format!(
            "bounds {bounds}/{stations}, identical {identical}/{stations}, root grids {grid}/{stations} (max {worst_grid:.1e}), shift {shift}/{stations} (max {worst_shift:.1e})"
        ),
    }
}

fn null_identity() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for t_k in [10usize, 50, 200] {
        let mut rng = ChaCha8Rng::seed_from_u64(t_k as u64);
        let samples = null_samples(t_k, 120, 1440, 10_000, &mut rng);
        let mean_sq = samples.iter().map(|s| s * s).sum::<f64>() / samples.len() as f64;
        let rel = (mean_sq * t_k as f64 - 1.0).abs();
        pass &= rel <= 0.05;
        parts.push(format!("T={t_k}: mean sigma^2 * T = {:.4}", mean_sq * t_k as f64));
    }
    Outcome {
        pass,
        detail: parts.join(", "),
    }
}

fn planted_sync() -> Outcome {
    let params = SyntheticParams {
        grid_width: 24,
        grid_height: 20,
        lines: 55,
        periods: vec![60, 120],
        routes: 0,
        sync_band: Some(SyncBand::default()),
        ..SyntheticParams::default()
    };
    let band = params.sync_band.clone().unwrap();
    let tt = generate_synthetic(&params, 1).unwrap();
    let records = reduced_sync(&tt, &SyncParams::default()).unwrap();
    let means = category_means(&records, (80, 170)).unwrap();
    let (small, medium, large) = (
        means.get(SizeClass::Small).unwrap_or(f64::NAN),
        means.get(SizeClass::Medium).unwrap_or(f64::NAN),
        means.get(SizeClass::Large).unwrap_or(f64::NAN),
    );
    let band_ranks: Vec<usize> = records
        .iter()
        .filter(|r| (band.min_events..=band.max_events).contains(&r.t_k))
        .map(|r| r.rank)
        .collect();
    let lo = band_ranks.iter().min().copied().unwrap_or(0);
    let hi = band_ranks.iter().max().copied().unwrap_or(0);
    let peak = sigma_star_profile(&records, 40).unwrap().peak().unwrap().0;
    Outcome {
        pass: records.len() >= 300 && medium > large && medium > small && (lo..=hi).contains(&peak),
        detail: format!(
            "{} stations; sigma* small {small:.3}, medium {medium:.3}, large {large:.3}; profile peak at rank {peak}, band ranks {lo}..={hi}",
            records.len()
        ),
    }
}

fn propagation_correctness() -> Outcome {
    let (mut fixed, mut agree, mut monotone, mut floor) = (0, 0, 0, 0);
    let mut scenarios = 0;
    let instances = 100;
    for seed in 0..instances {
        let (tt, policy) = support::random_instance(seed, 10);
        let g = build_depgraph(&tt, &derive_transfers(&tt, 120), &policy).unwrap();
        fixed += usize::from(propagate(&g, &DelayScenario::default()).unwrap().changed().is_empty());
        let (mut inst_agree, mut inst_mono, mut inst_floor) = (true, true, true);
        for node in 0..g.event_count() as u32 {
            let n = g.nodes()[node as usize];
            let kind = if n.kind == NodeKind::Arrival { EventKind::Arrival } else { EventKind::Departure };
            let key = (g.train_id(n.train).to_string(), n.segment as usize, kind);
            let mut previous: Option<Vec<i64>> = None;
            for p in [0, 1, 3, 6, 10, 15, 25, 40] {
                scenarios += 1;
                let ts = propagate(&g, &DelayScenario::single(node, p)).unwrap();
                let oracle = support::fixed_point(&tt, &policy, 120, Some((&key, p)));
                for m in 0..g.event_count() as u32 {
                    let e = g.nodes()[m as usize];
                    let kind = if e.kind == NodeKind::Arrival { EventKind::Arrival } else { EventKind::Departure };
                    inst_agree &= ts.get(m) == oracle[&(g.train_id(e.train).to_string(), e.segment as usize, kind)];
                    inst_floor &= ts.get(m) >= e.planned;
                }
                if let Some(prev) = &previous {
                    inst_mono &= prev.iter().zip(ts.as_slice()).all(|(a, b)| a <= b);
                }
                previous = Some(ts.as_slice().to_vec());
            }
        }
        agree += usize::from(inst_agree);
        monotone += usize::from(inst_mono);
        floor += usize::from(inst_floor);
    }
    let n = instances as usize;
    Outcome {
        pass: fixed == n && agree == n && monotone == n && floor == n,
        detail: format!(
            "{instances} instances, {scenarios} scenarios: fixed point {fixed}/{n}, oracle agreement {agree}/{n}, monotone {monotone}/{n}, >= planned {floor}/{n}"
        ),
    }
}

fn staircase() -> Outcome {
    let (tt, policy) = support::staircase();
    let g = build_depgraph(&tt, &derive_transfers(&tt, 120), &policy).unwrap();
    let feeder = g.find_event("A", "X", EventKind::Arrival).unwrap();
    let delays: Vec<i64> = (0..=20)
        .map(|p| {
            let ts = propagate(&g, &DelayScenario::single(feeder, p)).unwrap();
            passenger_delay(&g, &ts, &tt.routes()[0], 720).unwrap().delay
        })
        .collect();
    let shape = delays[0..=3].iter().all(|&d| d == 0)
        && delays[4..=9].iter().all(|&d| d > 0 && d <= 5)
        && delays[10..=20].iter().all(|&d| d == 25);

    // s(p) over p = 0..=20 on the staircase fixture and 20 small synthetic networks.
    let opts = SweepOptions {
        p_values: (0..=20).collect(),
        ..SweepOptions::default()
    };
    let mut curves = Vec::new();
    curves.extend(sweep_curves(&build_depgraph(&tt, &derive_transfers(&tt, 120), &policy).unwrap(), &tt, &opts));
    for seed in 0..20 {
        let params = SyntheticParams {
            grid_width: 5,
            grid_height: 4,
            lines: 5,
            routes: 60,
            ..SyntheticParams::default()
        };
        let tt = generate_synthetic(&params, seed).unwrap();
        let g = build_depgraph(&tt, &derive_transfers(&tt, 120), &WaitingPolicy::default()).unwrap();
        curves.extend(sweep_curves(&g, &tt, &opts));
    }
    let non_decreasing = curves.iter().filter(|c| c.windows(2).all(|w| w[0] <= w[1])).count();
    Outcome {
        pass: shape && non_decreasing == curves.len(),
        detail: format!(
            "delays p=0..20: {delays:?}; s(p) non-decreasing on {non_decreasing}/{} station curves",
            curves.len()
        ),
    }
}

fn sweep_curves(
    g: &railsync::depgraph::DepGraph,
    tt: &railsync::Timetable,
    opts: &SweepOptions,
) -> Vec<Vec<f64>> {
    let records = secondary_delay_sweep(g, tt.routes(), opts).unwrap();
    let mut by: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in records {
        by.entry(r.station).or_default().push(r.s_total);
    }
    by.into_values().collect()
}

fn sweep_linearity() -> (Outcome, String) {
    let params = SyntheticParams {
        grid_width: 20,
        grid_height: 10,
        lines: 30,
        routes: 1000,
        ..SyntheticParams::default()
    };
    let tt = generate_synthetic(&params, 0).unwrap();
    let transfers = derive_transfers(&tt, 120);
    let transfer_stations = buffering_times(&transfers);
    let g = build_depgraph(&tt, &transfers, &WaitingPolicy::default()).unwrap();
    let opts = SweepOptions {
        p_values: vec![5, 10, 15, 20, 25, 30],
        ..SweepOptions::default()
    };
    let start = Instant::now();
    let records = secondary_delay_sweep(&g, tt.routes(), &opts).unwrap();
    let sweep_time = start.elapsed();

    let mut by: BTreeMap<&str, Vec<(f64, f64, f64)>> = BTreeMap::new();
    for r in &records {
        by.entry(&r.station).or_default().push((r.p as f64, r.s_total, r.s_mean));
    }
    let x: Vec<f64> = opts.p_values.iter().map(|&p| p as f64).collect();
    let linear = |y: Vec<f64>| linear_fit(&x, &y).and_then(|f| f.r_squared).is_some_and(|r2| r2 >= 0.8);
    let (mut n, mut per_scenario, mut per_passenger) = (0, 0, 0);
    for (station, rows) in &by {
        if !transfer_stations.contains_key(*station) {
            continue;
        }
        n += 1;
        per_scenario += usize::from(linear(rows.iter().map(|r| r.1).collect()));
        per_passenger += usize::from(linear(rows.iter().map(|r| r.2).collect()));
    }
    let share = per_scenario as f64 / n as f64;
    let outcome = Outcome {
        pass: share >= 0.7 && sweep_time < secs(60),
        detail: format!(
            "{} stations, {} transfer stations; mean s(p) per scenario linear (R^2 >= 0.8) at {per_scenario}/{n} = {:.0}%; sweep {:.1} s",
            tt.stations().len(),
            n,
            100.0 * share,
            sweep_time.as_secs_f64()
        ),
    };
    let note = format!(
        "              (information: mean s(p) per delayed passenger is linear at {per_passenger}/{n} = {:.0}%)",
        100.0 * per_passenger as f64 / n as f64
    );
    (outcome, note)
}

fn avalanche_degenerate() -> Outcome {
    let g = avalanche::random_graph(70, 240, 3).unwrap();
    let steps = 20_000;
    let quiet = AvaParams {
        p_trans: 0.0,
        threshold: 4.0,
        unit: 1.0,
        ..AvaParams::default()
    };
    let r = avalanche::run(&g, &quiet, steps, 9).unwrap();
    let expected_starts: Vec<u64> = (0..r.insertions / 5).map(|k| 17 * (5 * k + 4)).collect();
    let every_fifth = r.lengths.iter().all(|&l| l == 1) && r.starts == expected_starts;

    let no_gain = AvaParams {
        p_trans: 1.0,
        m: 0.0,
        ..AvaParams::default()
    };
    let mut m_zero = true;
    for driver in [Driver::Periodic { period: 17 }, Driver::Stochastic { period: 17 }] {
        let r = avalanche::run(&g, &no_gain.with_driver(driver), steps, 9).unwrap();
        m_zero &= !r.lengths.is_empty() && r.lengths.iter().all(|&l| l == 1);
    }
    Outcome {
        pass: every_fifth && m_zero,
        detail: format!(
            "p_trans=0: {} avalanches of length 1 at every 5th of {} insertions: {every_fifth}; m=0 all length 1: {m_zero}",
            r.lengths.len(),
            r.insertions
        ),
    }
}

fn avalanche_reference() -> Outcome {
    let params = AvaParams::default();
    let g = avalanche::random_graph(70, 240, 0).unwrap();
    let cmp = avalanche::compare_drivers(&g, &params, 100, 20_000, 0).unwrap();
    let stats = cmp.periodic_stats.as_ref().unwrap();
    let r2 = stats.tail_r2.unwrap_or(0.0);
    let slope = stats.tail_slope.unwrap_or(0.0);
    let p_value = cmp.p_value.unwrap_or(1.0);
    let exponential = slope < 0.0 && r2 >= 0.9;
    let direction = cmp.periodic_mean > cmp.stochastic_mean && p_value < 0.01;
    Outcome {
        pass: exponential && direction,
        detail: format!(
            "p_trans {}; tail slope {slope:.3}, R^2 {r2:.3} ({}); mean length periodic {:.4} vs stochastic {:.4}, paired t {:.2}, one-sided p {p_value:.3} ({})",
            params.p_trans,
            if exponential { "exponential" } else { "not exponential" },
            cmp.periodic_mean.unwrap_or(f64::NAN),
            cmp.stochastic_mean.unwrap_or(f64::NAN),
            cmp.t_statistic.unwrap_or(f64::NAN),
            if direction { "periodic larger" } else { "direction not reproduced" },
        ),
    }
}

fn pesp() -> Outcome {
    let pi = |pairs: &[(&str, i64)]| TimetableVector(pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect());
    let one = |period, lo, hi| {
        PespInstance::new(
            period,
            vec!["i".into(), "j".into()],
            vec![Constraint {
                i: "i".into(),
                j: "j".into(),
                lo,
                hi,
            }],
        )
        .unwrap()
    };
    let witness = verify_periodic(&one(Some(60), 10, 20), &pi(&[("i", 55), ("j", 10)])).unwrap();
    let no_k = verify_periodic(&one(Some(60), 5, 10), &pi(&[("i", 0), ("j", 0)])).unwrap();
    let at_least = one(None, 15, UNBOUNDED);
    let ok15 = verify_nonperiodic(&at_least, &pi(&[("i", 0), ("j", 15)])).unwrap();
    let bad14 = verify_nonperiodic(&at_least, &pi(&[("i", 0), ("j", 14)])).unwrap();
    let examples = witness.is_feasible()
        && witness.witnesses == vec![Some(1)]
        && !no_k.is_feasible()
        && ok15.is_empty()
        && bad14.len() == 1;

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut agree = 0;
    let mut invariant = 0;
    let trials = 1000;
    for _ in 0..trials {
        let period = rng.gen_range(5..=120);
        let (a, b) = (rng.gen_range(0..period), rng.gen_range(0..period));
        let lo = rng.gen_range(-2 * period..=2 * period);
        let hi = lo + rng.gen_range(0..=2 * period);
        let inst = one(Some(period), lo, hi);
        let vector = pi(&[("i", a), ("j", b)]);
        let report = verify_periodic(&inst, &vector).unwrap();
        let brute = (-10..=10).find(|k| (lo..=hi).contains(&(b - a + period * k)));
        agree += usize::from(report.witnesses[0] == brute);

        let shifted = verify_periodic(&inst, &vector.shifted(rng.gen_range(-500..500), period)).unwrap();
        let wide_ok = hi - lo < period || report.is_feasible();
        invariant += usize::from(shifted.is_feasible() == report.is_feasible() && wide_ok);
    }
    Outcome {
        pass: examples && agree == trials && invariant == trials,
        detail: format!(
            "worked examples: {examples}; brute-force agreement {agree}/{trials}; shift invariance and full-period intervals {invariant}/{trials}"
        ),
    }
}

fn railsync(out: &Path, threads: usize, args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_railsync"))
        .args(["--seed", "42", "--threads", &threads.to_string(), "--out-dir"])
        .arg(out)
        .args(args)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn csv_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e == "csv") {
                let rel = path.strip_prefix(dir).unwrap().display().to_string();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn determinism() -> Outcome {
    let root = tempfile::tempdir().unwrap();
    let bundle = root.path().join("input");
    let mut ok = railsync(&bundle, 1, &["generate", "--routes", "300", "--planted-band"]);
    let bundle_arg = bundle.join("bundle");
    let bundle_arg = bundle_arg.to_str().unwrap();
    let runs = [("t1", 1), ("t8", 8), ("t8-again", 8)];
    for (name, threads) in runs {
        let out = root.path().join(name);
        ok &= railsync(&out, threads, &["generate", "--routes", "300", "--planted-band"]);
        ok &= railsync(&out, threads, &["sync", "--bundle", bundle_arg]);
        ok &= railsync(&out, threads, &["sweep", "--bundle", bundle_arg, "--p", "5,10,30"]);
        ok &= railsync(&out, threads, &["report", "--bundle", bundle_arg]);
        ok &= railsync(&out, threads, &["avalanche", "--seeds", "20", "--steps", "5000"]);
    }
    let reference = csv_files(&root.path().join("t1"));
    let mut identical = 0;
    for (name, _) in &runs[1..] {
        identical += usize::from(csv_files(&root.path().join(name)) == reference);
    }
    Outcome {
        pass: ok && reference.len() >= 12 && identical == 2,
        detail: format!(
            "commands succeeded: {ok}; {} CSV files; byte-identical to the 1-thread run: {identical}/2 (8 threads, twice)",
            reference.len()
        ),
    }
}

#[test]
fn acceptance() {
    let mut results = Vec::new();
    results.push(check(1, secs(1), sync_algebra));
    results.push(check(2, secs(10), null_identity));
    results.push(check(3, secs(30), planted_sync));
    results.push(check(4, secs(30), propagation_correctness));
    results.push(check(5, secs(5), staircase));
    let mut note = String::new();
    results.push(check(6, secs(60), || {
        let (outcome, n) = sweep_linearity();
        note = n;
        outcome
    }));
    let _ = writeln!(std::io::stderr(), "{note}");
    results.push(check(7, secs(1), avalanche_degenerate));
    results.push(check(8, secs(120), avalanche_reference));
    results.push(check(9, secs(5), pesp));
    results.push(check(10, secs(120), determinism));

    let failed: Vec<usize> = results
        .iter()
        .enumerate()
        .filter(|(_, &ok)| !ok)
        .map(|(i, _)| i + 1)
        .collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
