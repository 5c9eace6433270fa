//! Joins buffering times, secondary delays and synchronization per station:
//! efficiency/robustness quadrants, correlations and rank-smoothed profiles.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::depgraph::SweepRecord;
use crate::stats::{median, pearson};
use crate::sync::{rank_window_average, SyncError, SyncRecord};
use crate::timetable::Minutes;

pub const DEFAULT_JOINT_WINDOW: usize = 26;

#[derive(Debug, Error, PartialEq)]
pub enum ReportError {
    #[error("station `{station}` has no {metric}")]
    MissingMetric { station: String, metric: String },
    #[error("series lengths differ ({0} vs {1}) or are shorter than 2")]
    Length(usize, usize),
    #[error("no stations to classify")]
    Empty,
    #[error(transparent)]
    Window(#[from] SyncError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationMetrics {
    pub station: String,
    pub rank: usize,
    pub t_k: usize,
    /// Mean buffering time; absent without transfer opportunities.
    pub b: Option<f64>,
    /// Secondary delay per primary delay.
    pub s: BTreeMap<Minutes, f64>,
    pub sigma_star: f64,
}

impl StationMetrics {
    pub fn is_complete(&self, p: Minutes) -> bool {
        self.b.is_some() && self.s.contains_key(&p)
    }
}

/// One row per synchronization record, ordered by rank. `s` takes each
/// sweep record's `s_mean`.
pub fn assemble_metrics(
    sync: &[SyncRecord],
    buffering: &BTreeMap<String, f64>,
    sweep: &[SweepRecord],
) -> Vec<StationMetrics> {
    let mut s: BTreeMap<&str, BTreeMap<Minutes, f64>> = BTreeMap::new();
    for r in sweep {
        s.entry(r.station.as_str()).or_default().insert(r.p, r.s_mean);
    }
    let mut out: Vec<StationMetrics> = sync
        .iter()
        .map(|r| StationMetrics {
            station: r.station.clone(),
            rank: r.rank,
            t_k: r.t_k,
            b: buffering.get(&r.station).copied(),
            s: s.get(r.station.as_str()).cloned().unwrap_or_default(),
            sigma_star: r.sigma_star,
        })
        .collect();
    out.sort_by_key(|m| m.rank);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Quadrant {
    /// Efficient and robust.
    #[serde(rename = "++")]
    PlusPlus,
    #[serde(rename = "+-")]
    PlusMinus,
    #[serde(rename = "--")]
    MinusMinus,
    #[serde(rename = "-+")]
    MinusPlus,
}

impl Quadrant {
    pub const ALL: [Quadrant; 4] = [
        Quadrant::PlusPlus,
        Quadrant::PlusMinus,
        Quadrant::MinusMinus,
        Quadrant::MinusPlus,
    ];

    /// Low `b` is efficient and low `s` is robust; ties count as high.
    pub fn of(b: f64, s: f64, thresholds: (f64, f64)) -> Quadrant {
        match (b < thresholds.0, s < thresholds.1) {
            (true, true) => Quadrant::PlusPlus,
            (true, false) => Quadrant::PlusMinus,
            (false, false) => Quadrant::MinusMinus,
            (false, true) => Quadrant::MinusPlus,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Quadrant::PlusPlus => "++",
            Quadrant::PlusMinus => "+-",
            Quadrant::MinusMinus => "--",
            Quadrant::MinusPlus => "-+",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ClassifyMode {
    #[default]
    Raw,
    /// Classify each station by the mean of `window` rank neighbours, the
    /// window shifted inwards at both ends of the ranking.
    Smoothed { window: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub p: Minutes,
    /// `(b threshold, s threshold)`
    pub thresholds: (f64, f64),
    pub labels: BTreeMap<String, Quadrant>,
    pub counts: BTreeMap<Quadrant, usize>,
}

fn require(m: &StationMetrics, p: Minutes) -> Result<(f64, f64), ReportError> {
    let missing = |metric: String| ReportError::MissingMetric {
        station: m.station.clone(),
        metric,
    };
    let b = m.b.ok_or_else(|| missing("buffering time".into()))?;
    let s = *m.s.get(&p).ok_or_else(|| missing(format!("secondary delay for p = {p}")))?;
    Ok((b, s))
}

fn shifted_window_means(values: &[f64], window: usize) -> Vec<f64> {
    let n = values.len();
    let w = window.clamp(1, n);
    (0..n)
        .map(|i| {
            let start = i.saturating_sub(w / 2).min(n - w);
            values[start..start + w].iter().sum::<f64>() / w as f64
        })
        .collect()
}

/// Thresholds default to the medians of the (possibly smoothed) values.
pub fn quadrant_classify(
    metrics: &[StationMetrics],
    p: Minutes,
    thresholds: Option<(f64, f64)>,
    mode: ClassifyMode,
) -> Result<Classification, ReportError> {
    if metrics.is_empty() {
        return Err(ReportError::Empty);
    }
    let mut ordered: Vec<&StationMetrics> = metrics.iter().collect();
    ordered.sort_by_key(|m| m.rank);
    let pairs: Vec<(f64, f64)> = ordered.iter().map(|m| require(m, p)).collect::<Result<_, _>>()?;
    let (mut b, mut s): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    if let ClassifyMode::Smoothed { window } = mode {
        b = shifted_window_means(&b, window);
        s = shifted_window_means(&s, window);
    }
    let thresholds = match thresholds {
        Some(t) => t,
        None => (median(&b).expect("non-empty"), median(&s).expect("non-empty")),
    };
    let mut labels = BTreeMap::new();
    let mut counts: BTreeMap<Quadrant, usize> = Quadrant::ALL.iter().map(|&q| (q, 0)).collect();
    for (i, m) in ordered.iter().enumerate() {
        let q = Quadrant::of(b[i], s[i], thresholds);
        labels.insert(m.station.clone(), q);
        *counts.get_mut(&q).expect("all quadrants present") += 1;
    }
    Ok(Classification {
        p,
        thresholds,
        labels,
        counts,
    })
}

/// Mean σ* per populated quadrant.
pub fn sync_by_quadrant(metrics: &[StationMetrics], classification: &Classification) -> BTreeMap<Quadrant, f64> {
    let mut acc: BTreeMap<Quadrant, (f64, usize)> = BTreeMap::new();
    for m in metrics {
        if let Some(&q) = classification.labels.get(&m.station) {
            let e = acc.entry(q).or_default();
            e.0 += m.sigma_star;
            e.1 += 1;
        }
    }
    acc.into_iter().map(|(q, (sum, n))| (q, sum / n as f64)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub station: String,
    pub rank: usize,
    pub x: f64,
    pub y: f64,
    /// `(p2 / p1) * x`, the expectation for secondary delays linear in p.
    pub y_lin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    /// Absent when either series has zero variance.
    pub r: Option<f64>,
    pub rows: Vec<CorrelationRow>,
}

/// Pearson correlation of two per-station series, given as
/// `(station, rank, value)` and paired in rank order.
pub fn correlate(
    x: &[(String, usize, f64)],
    y: &[(String, usize, f64)],
    p1: Minutes,
    p2: Minutes,
) -> Result<Correlation, ReportError> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(ReportError::Length(x.len(), y.len()));
    }
    let mut rows: Vec<CorrelationRow> = x
        .iter()
        .zip(y)
        .map(|(a, b)| CorrelationRow {
            station: a.0.clone(),
            rank: a.1,
            x: a.2,
            y: b.2,
            y_lin: p2 as f64 / p1 as f64 * a.2,
        })
        .collect();
    rows.sort_by_key(|r| r.rank);
    let xs: Vec<f64> = rows.iter().map(|r| r.x).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.y).collect();
    Ok(Correlation {
        r: pearson(&xs, &ys),
        rows,
    })
}

/// Correlation of `s(p1)` with `s(p2)` over stations that have both.
pub fn correlate_delays(metrics: &[StationMetrics], p1: Minutes, p2: Minutes) -> Result<Correlation, ReportError> {
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for m in metrics {
        if let (Some(&a), Some(&b)) = (m.s.get(&p1), m.s.get(&p2)) {
            x.push((m.station.clone(), m.rank, a));
            y.push((m.station.clone(), m.rank, b));
        }
    }
    correlate(&x, &y, p1, p2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfilePoint {
    pub center_rank: usize,
    pub b_avg: f64,
    pub s_avg: f64,
    pub sigma_star_avg: f64,
}

/// Rank-window averages of `b`, `s(p)` and σ* with identical alignment.
pub fn joint_profile(
    metrics: &[StationMetrics],
    p: Minutes,
    window: usize,
) -> Result<Vec<ProfilePoint>, ReportError> {
    let mut ordered: Vec<&StationMetrics> = metrics.iter().collect();
    ordered.sort_by_key(|m| m.rank);
    let mut b = Vec::with_capacity(ordered.len());
    let mut s = Vec::with_capacity(ordered.len());
    let mut z = Vec::with_capacity(ordered.len());
    for m in &ordered {
        let (bv, sv) = require(m, p)?;
        b.push((m.rank, bv));
        s.push((m.rank, sv));
        z.push((m.rank, m.sigma_star));
    }
    let b = rank_window_average(&b, window)?;
    let s = rank_window_average(&s, window)?;
    let z = rank_window_average(&z, window)?;
    Ok(b.points
        .iter()
        .zip(&s.points)
        .zip(&z.points)
        .map(|((b, s), z)| ProfilePoint {
            center_rank: b.0,
            b_avg: b.1,
            s_avg: s.1,
            sigma_star_avg: z.1,
        })
        .collect())
}

fn comment<W: Write>(out: &mut W, text: Option<&str>) -> std::io::Result<()> {
    if let Some(text) = text {
        for line in text.lines() {
            writeln!(out, "# {line}")?;
        }
    }
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `station_id,rank,t_k,b,s_p{p}...,sigma_star,quadrant`
pub fn write_metrics_csv<W: Write>(
    mut out: W,
    metrics: &[StationMetrics],
    p_values: &[Minutes],
    classification: Option<&Classification>,
    header: Option<&str>,
) -> std::io::Result<()> {
    comment(&mut out, header)?;
    let mut w = csv::Writer::from_writer(out);
    let mut head = vec!["station_id".to_string(), "rank".into(), "t_k".into(), "b".into()];
    head.extend(p_values.iter().map(|p| format!("s_p{p}")));
    head.extend(["sigma_star".to_string(), "quadrant".into()]);
    w.write_record(&head)?;
    for m in metrics {
        let mut row = vec![m.station.clone(), m.rank.to_string(), m.t_k.to_string(), opt(m.b)];
        row.extend(p_values.iter().map(|p| opt(m.s.get(p).copied())));
        row.push(m.sigma_star.to_string());
        row.push(
            classification
                .and_then(|c| c.labels.get(&m.station))
                .map(|q| q.as_str().to_string())
                .unwrap_or_default(),
        );
        w.write_record(&row)?;
    }
    w.flush()
}

/// `center_rank,b_avg,s_avg,sigma_star_avg`
pub fn write_profile_csv<W: Write>(
    mut out: W,
    profile: &[ProfilePoint],
    header: Option<&str>,
) -> std::io::Result<()> {
    comment(&mut out, header)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["center_rank", "b_avg", "s_avg", "sigma_star_avg"])?;
    for p in profile {
        w.write_record([
            p.center_rank.to_string(),
            p.b_avg.to_string(),
            p.s_avg.to_string(),
            p.sigma_star_avg.to_string(),
        ])?;
    }
    w.flush()
}

/// `label,count,sigma_star_mean`, all four quadrants; empty mean when
/// unpopulated.
pub fn write_quadrants_csv<W: Write>(
    mut out: W,
    classification: &Classification,
    sync_means: &BTreeMap<Quadrant, f64>,
    header: Option<&str>,
) -> std::io::Result<()> {
    comment(&mut out, header)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["label", "count", "sigma_star_mean"])?;
    for q in Quadrant::ALL {
        w.write_record([
            q.as_str().to_string(),
            classification.counts.get(&q).copied().unwrap_or(0).to_string(),
            opt(sync_means.get(&q).copied()),
        ])?;
    }
    w.flush()
}

/// `station_id,rank,s_p{p1},s_p{p2},y_lin`
pub fn write_correlation_csv<W: Write>(
    mut out: W,
    correlation: &Correlation,
    p1: Minutes,
    p2: Minutes,
    header: Option<&str>,
) -> std::io::Result<()> {
    comment(&mut out, header)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "station_id".to_string(),
        "rank".into(),
        format!("s_p{p1}"),
        format!("s_p{p2}"),
        "y_lin".into(),
    ])?;
    for r in &correlation.rows {
        w.write_record([
            r.station.clone(),
            r.rank.to_string(),
            r.x.to_string(),
            r.y.to_string(),
            r.y_lin.to_string(),
        ])?;
    }
    w.flush()
}
