//! Phase synchronization of station events.
//!
//! Event times `t` become phases `2π (t mod τ) / τ`; a station's
//! synchronization index is the modulus of the mean unit phasor (the Kuramoto
//! order parameter). Because few events inflate the index by chance, each
//! station is compared against a null model with the same number of events
//! placed uniformly at random over the service day.

use std::collections::BTreeMap;
use std::f64::consts::TAU as TWO_PI;
use std::io::{Read, Write};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;
use crate::timetable::{station_events, station_rank, station_sizes, EventList, Minutes, Timetable};

pub const DEFAULT_TAU: Minutes = 120;
pub const DEFAULT_NULL_RUNS: usize = 100;
pub const DEFAULT_SYNC_WINDOW: usize = 40;
pub const DEFAULT_CATEGORY_BOUNDARIES: (usize, usize) = (80, 170);

#[derive(Debug, Error, PartialEq)]
pub enum SyncError {
    #[error("no events to convert into phases")]
    Empty,
    #[error("period must be positive, got {0}")]
    Period(f64),
    #[error("window {window} does not fit a series of length {len}")]
    Window { window: usize, len: usize },
    #[error("category boundaries must be ascending, got ({0}, {1})")]
    Boundaries(usize, usize),
    #[error("{0}")]
    Csv(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSeries {
    pub station: String,
    /// Radians in `[0, 2π)`.
    pub phases: Vec<f64>,
    pub tau: f64,
}

pub fn phase_of(t: f64, tau: f64) -> f64 {
    let phase = TWO_PI * t.rem_euclid(tau) / tau;
    // rem_euclid can round up to tau for tiny negative inputs.
    if phase >= TWO_PI {
        0.0
    } else {
        phase
    }
}

pub fn to_phases(events: &EventList, tau: Minutes) -> Result<PhaseSeries, SyncError> {
    if tau <= 0 {
        return Err(SyncError::Period(tau as f64));
    }
    if events.events.is_empty() {
        return Err(SyncError::Empty);
    }
    let tau_f = tau as f64;
    Ok(PhaseSeries {
        station: events.station.clone(),
        phases: events
            .times()
            .map(|t| TWO_PI * t.rem_euclid(tau) as f64 / tau_f)
            .collect(),
        tau: tau_f,
    })
}

/// Modulus of the mean unit phasor, in `[0, 1]`.
pub fn order_parameter(phases: &[f64]) -> Result<f64, SyncError> {
    if phases.is_empty() {
        return Err(SyncError::Empty);
    }
    let (mut re, mut im) = (0.0, 0.0);
    for &p in phases {
        re += p.cos();
        im += p.sin();
    }
    let n = phases.len() as f64;
    Ok((re / n).hypot(im / n).clamp(0.0, 1.0))
}

pub fn sync_index(series: &PhaseSeries) -> Result<f64, SyncError> {
    order_parameter(&series.phases)
}

/// Synchronization index of each of `runs` random placements of `t_k` events
/// uniformly over `[0, day_length)`.
pub fn null_samples<R: Rng>(
    t_k: usize,
    tau: Minutes,
    day_length: Minutes,
    runs: usize,
    rng: &mut R,
) -> Vec<f64> {
    let tau = tau as f64;
    let day = day_length as f64;
    let mut phases = vec![0.0; t_k];
    (0..runs)
        .map(|_| {
            for p in phases.iter_mut() {
                *p = phase_of(rng.gen_range(0.0..day), tau);
            }
            order_parameter(&phases).unwrap_or(0.0)
        })
        .collect()
}

/// Mean null-model index over `runs` runs, reproducible from `seed`.
pub fn null_baseline(t_k: usize, tau: Minutes, day_length: Minutes, runs: usize, seed: u64) -> f64 {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let samples = null_samples(t_k, tau, day_length, runs.max(1), &mut rng);
    samples.iter().sum::<f64>() / samples.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyncParams {
    pub tau: Minutes,
    pub null_runs: usize,
    pub seed: u64,
}

impl Default for SyncParams {
    fn default() -> Self {
        SyncParams {
            tau: DEFAULT_TAU,
            null_runs: DEFAULT_NULL_RUNS,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncRecord {
    pub station: String,
    /// 1 = largest station.
    pub rank: usize,
    pub t_k: usize,
    pub sigma: f64,
    pub sigma_null: f64,
    pub sigma_star: f64,
}

/// One record per station with at least one event, ordered by rank. The null
/// baseline of each station uses its own stream keyed by `(seed, station id)`.
pub fn reduced_sync(tt: &Timetable, params: &SyncParams) -> Result<Vec<SyncRecord>, SyncError> {
    if params.tau <= 0 {
        return Err(SyncError::Period(params.tau as f64));
    }
    let events = station_events(tt);
    let ranks = station_rank(&station_sizes(&events));
    let day = tt.day_length();
    ranks
        .par_iter()
        .enumerate()
        .map(|(i, id)| {
            let list = &events[id];
            let sigma = sync_index(&to_phases(list, params.tau)?)?;
            let sigma_null = null_baseline(
                list.size(),
                params.tau,
                day,
                params.null_runs,
                rng::derive_seed(params.seed, id),
            );
            Ok(SyncRecord {
                station: id.clone(),
                rank: i + 1,
                t_k: list.size(),
                sigma,
                sigma_null,
                sigma_star: sigma - sigma_null,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankProfile {
    pub window: usize,
    /// `(center rank, windowed mean)`
    pub points: Vec<(usize, f64)>,
}

impl RankProfile {
    /// Center rank of the largest windowed mean (first one on ties).
    pub fn peak(&self) -> Option<(usize, f64)> {
        self.points
            .iter()
            .copied()
            .fold(None, |best: Option<(usize, f64)>, p| match best {
                Some(b) if b.1 >= p.1 => Some(b),
                _ => Some(p),
            })
    }
}

/// Sliding unweighted mean over `values` (already ordered by rank). The point
/// for a window starting at index `s` sits at the rank of index `s + window/2`.
pub fn rank_window_average(values: &[(usize, f64)], window: usize) -> Result<RankProfile, SyncError> {
    if window == 0 || window > values.len() {
        return Err(SyncError::Window {
            window,
            len: values.len(),
        });
    }
    let mut sum: f64 = values[..window].iter().map(|v| v.1).sum();
    let mut points = Vec::with_capacity(values.len() - window + 1);
    for start in 0..=values.len() - window {
        if start > 0 {
            sum += values[start + window - 1].1 - values[start - 1].1;
        }
        points.push((values[start + window / 2].0, sum / window as f64));
    }
    // Recompute exactly to avoid drift from the running sum.
    for (start, point) in points.iter_mut().enumerate() {
        point.1 = values[start..start + window].iter().map(|v| v.1).sum::<f64>() / window as f64;
    }
    Ok(RankProfile { window, points })
}

pub fn sigma_star_profile(records: &[SyncRecord], window: usize) -> Result<RankProfile, SyncError> {
    let values: Vec<(usize, f64)> = records.iter().map(|r| (r.rank, r.sigma_star)).collect();
    rank_window_average(&values, window)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeClass {
    Small,
    Medium,
    Large,
}

impl SizeClass {
    /// `T_k <= lower` is small, `lower < T_k <= upper` medium, above is large.
    pub fn of(t_k: usize, boundaries: (usize, usize)) -> SizeClass {
        if t_k <= boundaries.0 {
            SizeClass::Small
        } else if t_k <= boundaries.1 {
            SizeClass::Medium
        } else {
            SizeClass::Large
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SizeClass::Small => "small",
            SizeClass::Medium => "medium",
            SizeClass::Large => "large",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CategoryMeans {
    pub small: Option<f64>,
    pub medium: Option<f64>,
    pub large: Option<f64>,
    pub counts: [usize; 3],
}

impl CategoryMeans {
    pub fn get(&self, class: SizeClass) -> Option<f64> {
        match class {
            SizeClass::Small => self.small,
            SizeClass::Medium => self.medium,
            SizeClass::Large => self.large,
        }
    }
}

/// Mean σ* per size class; empty classes are `None`.
pub fn category_means(
    records: &[SyncRecord],
    boundaries: (usize, usize),
) -> Result<CategoryMeans, SyncError> {
    if boundaries.0 > boundaries.1 {
        return Err(SyncError::Boundaries(boundaries.0, boundaries.1));
    }
    let mut sums = [0.0; 3];
    let mut counts = [0usize; 3];
    for r in records {
        let c = SizeClass::of(r.t_k, boundaries) as usize;
        sums[c] += r.sigma_star;
        counts[c] += 1;
    }
    let mean = |c: usize| (counts[c] > 0).then(|| sums[c] / counts[c] as f64);
    Ok(CategoryMeans {
        small: mean(0),
        medium: mean(1),
        large: mean(2),
        counts,
    })
}

fn write_comment<W: Write>(out: &mut W, comment: Option<&str>) -> std::io::Result<()> {
    if let Some(comment) = comment {
        for line in comment.lines() {
            writeln!(out, "# {line}")?;
        }
    }
    Ok(())
}

/// `station_id,rank,t_k,sigma,sigma_null,sigma_star`
pub fn write_sync_csv<W: Write>(
    mut out: W,
    records: &[SyncRecord],
    comment: Option<&str>,
) -> std::io::Result<()> {
    write_comment(&mut out, comment)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["station_id", "rank", "t_k", "sigma", "sigma_null", "sigma_star"])?;
    for r in records {
        w.write_record([
            r.station.clone(),
            r.rank.to_string(),
            r.t_k.to_string(),
            r.sigma.to_string(),
            r.sigma_null.to_string(),
            r.sigma_star.to_string(),
        ])?;
    }
    w.flush()
}

pub fn read_sync_csv<R: Read>(source: R) -> Result<Vec<SyncRecord>, SyncError> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(source);
    let mut out = Vec::new();
    for row in reader.deserialize::<SyncRow>() {
        let row = row.map_err(|e| SyncError::Csv(e.to_string()))?;
        out.push(SyncRecord {
            station: row.station_id,
            rank: row.rank,
            t_k: row.t_k,
            sigma: row.sigma,
            sigma_null: row.sigma_null,
            sigma_star: row.sigma_star,
        });
    }
    Ok(out)
}

#[derive(Deserialize)]
struct SyncRow {
    station_id: String,
    rank: usize,
    t_k: usize,
    sigma: f64,
    sigma_null: f64,
    sigma_star: f64,
}

/// `center_rank,sigma_star_avg`
pub fn write_profile_csv<W: Write>(
    mut out: W,
    profile: &RankProfile,
    comment: Option<&str>,
) -> std::io::Result<()> {
    write_comment(&mut out, comment)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["center_rank", "sigma_star_avg"])?;
    for (rank, v) in &profile.points {
        w.write_record([rank.to_string(), v.to_string()])?;
    }
    w.flush()
}

/// `class,count,sigma_star_mean` with an empty mean for empty classes.
pub fn write_categories_csv<W: Write>(
    mut out: W,
    means: &CategoryMeans,
    comment: Option<&str>,
) -> std::io::Result<()> {
    write_comment(&mut out, comment)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["class", "count", "sigma_star_mean"])?;
    for class in [SizeClass::Small, SizeClass::Medium, SizeClass::Large] {
        w.write_record([
            class.as_str().to_string(),
            means.counts[class as usize].to_string(),
            means.get(class).map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()
}

/// Records keyed by station id.
pub fn by_station(records: &[SyncRecord]) -> BTreeMap<&str, &SyncRecord> {
    records.iter().map(|r| (r.station.as_str(), r)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timetable::{EventKind, StationEvent};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn list(times: &[Minutes]) -> EventList {
        EventList {
            station: "X".into(),
            events: times
                .iter()
                .map(|&t| StationEvent {
                    time: t,
                    kind: EventKind::Arrival,
                    train: "T".into(),
                    segment: 0,
                })
                .collect(),
        }
    }

    #[test]
    fn phase_examples() {
        let ps = to_phases(&list(&[130, 0, 240]), 120).unwrap();
        assert_abs_diff_eq!(ps.phases[0], PI / 6.0, epsilon = 1e-15);
        assert_eq!(ps.phases[1], 0.0);
        assert_eq!(ps.phases[2], 0.0);
        assert_eq!(to_phases(&list(&[]), 120), Err(SyncError::Empty));
        assert_eq!(to_phases(&list(&[1]), 0), Err(SyncError::Period(0.0)));
    }

    #[test]
    fn index_examples() {
        assert_abs_diff_eq!(order_parameter(&[1.3, 1.3, 1.3]).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(order_parameter(&[0.0, PI]).unwrap(), 0.0, epsilon = 1e-15);
        // |1 + i| / 2
        assert_abs_diff_eq!(
            order_parameter(&[0.0, PI / 2.0]).unwrap(),
            0.5f64.hypot(0.5),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(0.5f64.hypot(0.5), 0.70711, epsilon = 1e-5);
        assert_eq!(order_parameter(&[]), Err(SyncError::Empty));
    }

    #[test]
    fn single_event_null_is_one() {
        assert_abs_diff_eq!(null_baseline(1, 120, 1440, 25, 9), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn window_examples() {
        let constant: Vec<(usize, f64)> = (1..=10).map(|r| (r, 0.25)).collect();
        let p = rank_window_average(&constant, 4).unwrap();
        assert!(p.points.iter().all(|&(_, v)| (v - 0.25).abs() < 1e-15));
        let ramp: Vec<(usize, f64)> = (1..=10).map(|r| (r, r as f64)).collect();
        let id = rank_window_average(&ramp, 1).unwrap();
        assert_eq!(id.points, ramp);
        let p = rank_window_average(&ramp, 3).unwrap();
        let expected: Vec<(usize, f64)> = (2..=9).map(|r| (r, r as f64)).collect();
        assert_eq!(p.points, expected);
        assert_eq!(
            rank_window_average(&ramp, 11),
            Err(SyncError::Window { window: 11, len: 10 })
        );
    }

    fn rec(t_k: usize, sigma_star: f64) -> SyncRecord {
        SyncRecord {
            station: format!("S{t_k}"),
            rank: 1,
            t_k,
            sigma: 0.0,
            sigma_null: 0.0,
            sigma_star,
        }
    }

    #[test]
    fn categories() {
        let all_medium = category_means(&[rec(100, 0.1), rec(100, 0.3)], (80, 170)).unwrap();
        assert_eq!(all_medium.small, None);
        assert_eq!(all_medium.large, None);
        assert_abs_diff_eq!(all_medium.medium.unwrap(), 0.2, epsilon = 1e-15);
        let boundaries = category_means(&[rec(80, 1.0), rec(170, 2.0), rec(171, 3.0)], (80, 170)).unwrap();
        assert_eq!((boundaries.small, boundaries.medium, boundaries.large), (Some(1.0), Some(2.0), Some(3.0)));
        let empty = category_means(&[], (80, 170)).unwrap();
        assert_eq!((empty.small, empty.medium, empty.large), (None, None, None));
        assert_eq!(category_means(&[], (170, 80)), Err(SyncError::Boundaries(170, 80)));
    }

    #[test]
    fn csv_round_trip() {
        let records = vec![SyncRecord {
            station: "A".into(),
            rank: 1,
            t_k: 4,
            sigma: 0.5,
            sigma_null: 0.25,
            sigma_star: 0.25,
        }];
        let mut buf = Vec::new();
        write_sync_csv(&mut buf, &records, Some("config: {}")).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("# config: {}\nstation_id,rank"));
        assert_eq!(read_sync_csv(buf.as_slice()).unwrap(), records);
    }

    proptest! {
        #[test]
        fn bounded_and_shift_invariant(
            times in prop::collection::vec(0i64..3000, 1..60),
            shift in 0i64..1000,
        ) {
            let a = sync_index(&to_phases(&list(&times), 120).unwrap()).unwrap();
            let shifted: Vec<Minutes> = times.iter().map(|t| t + shift).collect();
            let b = sync_index(&to_phases(&list(&shifted), 120).unwrap()).unwrap();
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn permutation_and_duplication_invariant(
            mut times in prop::collection::vec(0i64..3000, 1..40),
        ) {
            let a = sync_index(&to_phases(&list(&times), 120).unwrap()).unwrap();
            let mut doubled = times.clone();
            doubled.extend(times.iter().copied());
            times.reverse();
            let b = sync_index(&to_phases(&list(&times), 120).unwrap()).unwrap();
            let c = sync_index(&to_phases(&list(&doubled), 120).unwrap()).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!((a - c).abs() < 1e-12);
        }
    }
}
