use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use railsync::avalanche::{self, AvaSummary, Driver};
use railsync::depgraph::{
    build_depgraph, passenger_delay, propagate, read_sweep_csv, resolve_scenario,
    secondary_delay_sweep, write_sweep_csv, DepGraph, NodeKind, ScenarioEntry, SweepOptions,
};
use railsync::report::{self, StationMetrics};
use railsync::sync::{self, SizeClass, SyncParams};
use railsync::timetable::{
    buffering_times, derive_transfers, generate_synthetic, import_gtfs_dir, parse_bundle_dir,
    passenger_buffering_times, write_bundle_dir, Category, GtfsOptions, Timetable,
};
use railsync::Minutes;
use serde_json::{json, Value};

use crate::config::{BufferingSource, DriverChoice, RunConfig};
use crate::{CliError, Format};

pub struct Context<'a> {
    pub cfg: &'a RunConfig,
    pub out_dir: &'a Path,
    pub format: Format,
}

impl Context<'_> {
    fn header(&self) -> String {
        self.cfg.header()
    }

    fn bundle_dir(&self) -> PathBuf {
        self.cfg
            .inputs
            .bundle
            .clone()
            .unwrap_or_else(|| self.out_dir.join("bundle"))
    }

    /// Writes one artifact through `write` and returns its path.
    fn artifact<F>(&self, name: &str, write: F) -> Result<PathBuf, CliError>
    where
        F: FnOnce(BufWriter<File>) -> std::io::Result<()>,
    {
        let path = self.out_dir.join(name);
        let io = |source| CliError::Io {
            path: path.clone(),
            source,
        };
        let file = File::create(&path).map_err(io)?;
        write(BufWriter::new(file)).map_err(io)?;
        Ok(path)
    }

    fn summary(&self, fields: Vec<(&str, Value)>) {
        let mut out = std::io::stdout().lock();
        match self.format {
            Format::Json => {
                let map: serde_json::Map<String, Value> =
                    fields.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
                let _ = writeln!(out, "{}", Value::Object(map));
            }
            Format::Csv => {
                let _ = writeln!(out, "key,value");
                for (k, v) in fields {
                    let v = match v {
                        Value::String(s) => s,
                        Value::Null => String::new(),
                        other => other.to_string(),
                    };
                    let _ = writeln!(out, "{k},{v}");
                }
            }
        }
    }
}

fn invalid(e: impl std::fmt::Display) -> CliError {
    CliError::Invalid(e.to_string())
}

fn require(path: &Path, hint: &'static str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Missing {
            path: path.to_path_buf(),
            hint,
        })
    }
}

fn load_bundle(ctx: &Context) -> Result<Timetable, CliError> {
    let dir = ctx.bundle_dir();
    require(&dir, "run `railsync generate` or `railsync ingest` first, or pass --bundle")?;
    parse_bundle_dir(&dir).map_err(invalid)
}

fn write_timetable(ctx: &Context, tt: &Timetable) -> Result<PathBuf, CliError> {
    let dir = ctx.out_dir.join("bundle");
    write_bundle_dir(tt, &dir, Some(&ctx.header())).map_err(invalid)?;
    Ok(dir)
}

fn timetable_summary(tt: &Timetable, dir: &Path) -> Vec<(&'static str, Value)> {
    vec![
        ("bundle", json!(dir.display().to_string())),
        ("stations", json!(tt.stations().len())),
        ("runs", json!(tt.runs().len())),
        ("segments", json!(tt.segment_count())),
        ("routes", json!(tt.routes().len())),
    ]
}

pub fn ingest(ctx: &Context) -> Result<(), CliError> {
    let inputs = &ctx.cfg.inputs;
    let tt = match (&inputs.gtfs, &inputs.bundle) {
        (Some(dir), _) => {
            require(dir, "pass a directory with stops.txt, trips.txt and stop_times.txt")?;
            let options = GtfsOptions {
                min_transfer: ctx.cfg.gtfs_min_transfer,
                category: Category::Other,
            };
            import_gtfs_dir(dir, &options).map_err(invalid)?
        }
        (None, Some(_)) => load_bundle(ctx)?,
        (None, None) => return Err(invalid("ingest needs --bundle or --gtfs")),
    };
    let transfers = derive_transfers(&tt, ctx.cfg.transfer_window);
    let dir = write_timetable(ctx, &tt)?;
    let mut fields = timetable_summary(&tt, &dir);
    fields.push(("transfers", json!(transfers.len())));
    ctx.summary(fields);
    Ok(())
}

pub fn generate(ctx: &Context) -> Result<(), CliError> {
    let tt = generate_synthetic(&ctx.cfg.synthetic, ctx.cfg.seed).map_err(invalid)?;
    let dir = write_timetable(ctx, &tt)?;
    ctx.summary(timetable_summary(&tt, &dir));
    Ok(())
}

pub fn sync(ctx: &Context) -> Result<(), CliError> {
    let cfg = ctx.cfg;
    let tt = load_bundle(ctx)?;
    let params = SyncParams {
        tau: cfg.tau,
        null_runs: cfg.null_runs,
        seed: cfg.seed,
    };
    let records = sync::reduced_sync(&tt, &params).map_err(invalid)?;
    let profile = sync::sigma_star_profile(&records, cfg.sync_window).map_err(invalid)?;
    let classes = sync::category_means(&records, cfg.category_boundaries).map_err(invalid)?;
    let header = ctx.header();
    ctx.artifact("sync.csv", |w| sync::write_sync_csv(w, &records, Some(&header)))?;
    ctx.artifact("sync_profile.csv", |w| {
        sync::write_profile_csv(w, &profile, Some(&header))
    })?;
    ctx.artifact("sync_categories.csv", |w| {
        sync::write_categories_csv(w, &classes, Some(&header))
    })?;
    let peak = profile.peak();
    ctx.summary(vec![
        ("stations", json!(records.len())),
        ("profile_peak_rank", json!(peak.map(|p| p.0))),
        ("profile_peak_sigma_star", json!(peak.map(|p| p.1))),
        ("sigma_star_small", json!(classes.get(SizeClass::Small))),
        ("sigma_star_medium", json!(classes.get(SizeClass::Medium))),
        ("sigma_star_large", json!(classes.get(SizeClass::Large))),
    ]);
    Ok(())
}

fn depgraph(ctx: &Context, tt: &Timetable) -> Result<DepGraph, CliError> {
    let transfers = derive_transfers(tt, ctx.cfg.transfer_window);
    build_depgraph(tt, &transfers, &ctx.cfg.waiting_policy).map_err(invalid)
}

pub fn sweep(ctx: &Context) -> Result<(), CliError> {
    let cfg = ctx.cfg;
    let tt = load_bundle(ctx)?;
    let g = depgraph(ctx, &tt)?;
    if let Some(path) = &cfg.inputs.scenario {
        return scenario(ctx, &tt, &g, path);
    }
    let options = SweepOptions {
        p_values: cfg.p_values.clone(),
        max_delay: cfg.max_delay,
    };
    let records = secondary_delay_sweep(&g, tt.routes(), &options).map_err(invalid)?;
    let header = ctx.header();
    let path = ctx.artifact("sweep.csv", |w| write_sweep_csv(w, &records, Some(&header)))?;
    ctx.summary(vec![
        ("sweep", json!(path.display().to_string())),
        ("stations", json!(records.len() / cfg.p_values.len().max(1))),
        ("p_values", json!(cfg.p_values)),
        ("routes", json!(tt.routes().len())),
    ]);
    Ok(())
}

fn scenario(ctx: &Context, tt: &Timetable, g: &DepGraph, path: &Path) -> Result<(), CliError> {
    require(path, "pass an existing scenario JSON file")?;
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let entries: Vec<ScenarioEntry> = serde_json::from_str(&text)
        .map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    let sc = resolve_scenario(g, &entries).map_err(invalid)?;
    let ts = propagate(g, &sc).map_err(invalid)?;
    let header = ctx.header();
    ctx.artifact("scenario_events.csv", |w| {
        let mut w = w;
        writeln!(w, "# {header}")?;
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["train_id", "segment", "station_id", "kind", "planned", "actual", "delay"])?;
        for &n in ts.changed() {
            let node = &g.nodes()[n as usize];
            let kind = match node.kind {
                NodeKind::Arrival => "arrival",
                _ => "departure",
            };
            let actual = ts.get(n);
            out.write_record([
                g.train_id(node.train).to_string(),
                node.segment.to_string(),
                g.station_id(node.station).to_string(),
                kind.to_string(),
                node.planned.to_string(),
                actual.to_string(),
                (actual - node.planned).to_string(),
            ])?;
        }
        out.flush()
    })?;
    let mut outcomes = Vec::with_capacity(tt.routes().len());
    for route in tt.routes() {
        let outcome = passenger_delay(g, &ts, route, ctx.cfg.max_delay).map_err(invalid)?;
        outcomes.push((route.id.clone(), route.passenger_count, outcome));
    }
    ctx.artifact("scenario_routes.csv", |w| {
        let mut w = w;
        writeln!(w, "# {header}")?;
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["route_id", "passengers", "delay", "stranded", "rerouted"])?;
        for (id, passengers, o) in &outcomes {
            out.write_record([
                id.clone(),
                passengers.to_string(),
                o.delay.to_string(),
                o.stranded.to_string(),
                o.rerouted.to_string(),
            ])?;
        }
        out.flush()
    })?;
    let delayed: Vec<_> = outcomes.iter().filter(|o| o.2.delay > 0).collect();
    let minutes: i64 = delayed.iter().map(|o| i64::from(o.1) * o.2.delay).sum();
    ctx.summary(vec![
        ("changed_events", json!(ts.changed().len())),
        ("delayed_routes", json!(delayed.len())),
        ("passenger_minutes", json!(minutes)),
    ]);
    Ok(())
}

pub fn avalanche(ctx: &Context) -> Result<(), CliError> {
    let ava = &ctx.cfg.avalanche;
    let g = avalanche::random_graph(ava.nodes, ava.edges, ctx.cfg.seed)?;
    ava.params.validate(&g)?;
    let period = ava.params.driver.period();
    let header = ctx.header();
    let mut fields = vec![
        ("driver", json!(ava.driver)),
        ("p_trans", json!(ava.params.p_trans)),
        ("m", json!(ava.params.m)),
        ("threshold", json!(ava.params.threshold)),
        ("period", json!(period)),
        ("nodes", json!(ava.nodes)),
        ("edges", json!(ava.edges)),
        ("seeds", json!(ava.seeds)),
        ("steps", json!(ava.steps)),
    ];
    let windows: Vec<(&str, u64, Vec<Option<f64>>)>;
    match ava.driver {
        DriverChoice::Both => {
            let cmp = avalanche::compare_drivers(&g, &ava.params, ava.seeds, ava.steps, ctx.cfg.seed)?;
            ctx.artifact("avalanche_results.csv", |w| {
                avalanche::write_results_csv(w, &cmp.pairs, Some(&header))
            })?;
            for (name, stats) in [("periodic", &cmp.periodic_stats), ("stochastic", &cmp.stochastic_stats)] {
                let hist = stats.as_ref().map(|s| s.histogram.clone()).unwrap_or_default();
                ctx.artifact(&format!("avalanche_histogram_{name}.csv"), |w| {
                    avalanche::write_histogram_csv(w, &hist, Some(&header))
                })?;
                fields.push(match name {
                    "periodic" => ("periodic_tail_r2", json!(stats.as_ref().and_then(|s| s.tail_r2))),
                    _ => ("stochastic_tail_r2", json!(stats.as_ref().and_then(|s| s.tail_r2))),
                });
            }
            windows = cmp
                .pairs
                .iter()
                .zip(&cmp.runs)
                .flat_map(|(p, (a, b))| {
                    [
                        ("periodic", p.seed, a.window_means(ava.window_steps)),
                        ("stochastic", p.seed, b.window_means(ava.window_steps)),
                    ]
                })
                .collect();
            fields.extend([
                ("periodic_mean", json!(cmp.periodic_mean)),
                ("stochastic_mean", json!(cmp.stochastic_mean)),
                ("t_statistic", json!(cmp.t_statistic)),
                ("p_value", json!(cmp.p_value)),
            ]);
        }
        choice => {
            let driver = match choice {
                DriverChoice::Periodic => Driver::Periodic { period },
                _ => Driver::Stochastic { period },
            };
            let params = ava.params.with_driver(driver);
            let runs: Vec<(u64, avalanche::AvaRun)> = (0..ava.seeds as u64)
                .into_par_iter()
                .map(|i| {
                    let seed = avalanche::seed_for(ctx.cfg.seed, i);
                    avalanche::run(&g, &params, ava.steps, seed).map(|r| (seed, r))
                })
                .collect::<Result<_, _>>()?;
            let summaries: Vec<(u64, AvaSummary)> =
                runs.iter().map(|(s, r)| (*s, AvaSummary::of(r))).collect();
            ctx.artifact("avalanche_results.csv", |w| {
                avalanche::write_driver_results_csv(w, &driver, &summaries, Some(&header))
            })?;
            let all: Vec<avalanche::AvaRun> = runs.iter().map(|r| r.1.clone()).collect();
            let stats = avalanche::avalanche_stats(&all);
            let hist = stats.as_ref().map(|s| s.histogram.clone()).unwrap_or_default();
            ctx.artifact(&format!("avalanche_histogram_{}.csv", driver.name()), |w| {
                avalanche::write_histogram_csv(w, &hist, Some(&header))
            })?;
            windows = runs
                .iter()
                .map(|(s, r)| (driver.name(), *s, r.window_means(ava.window_steps)))
                .collect();
            fields.extend([
                ("mean_length", json!(stats.as_ref().map(|s| s.mean_length))),
                ("tail_slope", json!(stats.as_ref().and_then(|s| s.tail_slope))),
                ("tail_r2", json!(stats.as_ref().and_then(|s| s.tail_r2))),
            ]);
        }
    }
    ctx.artifact("avalanche_windows.csv", |w| {
        avalanche::write_windows_csv(w, &windows, Some(&header))
    })?;
    ctx.summary(fields);
    Ok(())
}

pub fn report(ctx: &Context) -> Result<(), CliError> {
    let cfg = ctx.cfg;
    let sync_path = cfg.inputs.sync.clone().unwrap_or_else(|| ctx.out_dir.join("sync.csv"));
    let sweep_path = cfg.inputs.sweep.clone().unwrap_or_else(|| ctx.out_dir.join("sweep.csv"));
    require(&sync_path, "run `railsync sync` first or pass --sync")?;
    require(&sweep_path, "run `railsync sweep` first or pass --sweep")?;
    let open = |p: &Path| {
        File::open(p).map_err(|source| CliError::Io {
            path: p.to_path_buf(),
            source,
        })
    };
    let records = sync::read_sync_csv(open(&sync_path)?)
        .map_err(|e| invalid(format!("{}: {e}", sync_path.display())))?;
    let sweep = read_sweep_csv(open(&sweep_path)?)
        .map_err(|e| invalid(format!("{}: {e}", sweep_path.display())))?;
    let tt = load_bundle(ctx)?;
    let buffering = match cfg.report.buffering {
        BufferingSource::Transfers => buffering_times(&derive_transfers(&tt, cfg.transfer_window)),
        BufferingSource::Passengers => passenger_buffering_times(&tt),
    };

    let p_values: Vec<Minutes> = sweep.iter().map(|r| r.p).collect::<BTreeSet<_>>().into_iter().collect();
    let p = match cfg.report.p {
        Some(p) if p_values.contains(&p) => p,
        Some(p) => return Err(invalid(format!("p = {p} is not in {}", sweep_path.display()))),
        None => *p_values
            .first()
            .ok_or_else(|| invalid(format!("{} has no records", sweep_path.display())))?,
    };
    let metrics = report::assemble_metrics(&records, &buffering, &sweep);
    let complete: Vec<StationMetrics> = metrics.iter().filter(|m| m.is_complete(p)).cloned().collect();
    let classification =
        report::quadrant_classify(&complete, p, cfg.report.thresholds, cfg.report.mode).map_err(invalid)?;
    let by_quadrant = report::sync_by_quadrant(&complete, &classification);
    let window = cfg.joint_window;
    let profile = report::joint_profile(&complete, p, window).map_err(invalid)?;

    let header = format!(
        "{}\nthresholds: b = {}, s = {} (p = {p})",
        ctx.header(),
        classification.thresholds.0,
        classification.thresholds.1
    );
    ctx.artifact("metrics.csv", |w| {
        report::write_metrics_csv(w, &metrics, &p_values, Some(&classification), Some(&header))
    })?;
    ctx.artifact("profile.csv", |w| report::write_profile_csv(w, &profile, Some(&header)))?;
    ctx.artifact("quadrants.csv", |w| {
        report::write_quadrants_csv(w, &classification, &by_quadrant, Some(&header))
    })?;
    let mut fields = vec![
        ("p", json!(p)),
        ("stations", json!(metrics.len())),
        ("classified", json!(complete.len())),
        ("b_threshold", json!(classification.thresholds.0)),
        ("s_threshold", json!(classification.thresholds.1)),
        ("joint_window", json!(window)),
    ];
    for (q, n) in &classification.counts {
        let key = match q.as_str() {
            "++" => "count_pp",
            "+-" => "count_pm",
            "--" => "count_mm",
            _ => "count_mp",
        };
        fields.push((key, json!(n)));
    }
    if let (Some(&p1), Some(&p2)) = (p_values.first(), p_values.last()) {
        if p1 != p2 && p1 > 0 {
            let corr = report::correlate_delays(&complete, p1, p2).map_err(invalid)?;
            ctx.artifact("correlation.csv", |w| {
                report::write_correlation_csv(w, &corr, p1, p2, Some(&header))
            })?;
            fields.push(("correlation_r", json!(corr.r)));
        }
    }
    ctx.summary(fields);
    Ok(())
}
