//! Long-format ingestion, edge trimming and segmentation on missing runs.
//!
//! A subject's series is split at every interior missing run into gap-free
//! segments. Segments are then treated as independent sequences that share
//! the subject's class, each starting from the class's stationary law. The
//! gap-validity check verifies after fitting that the shortest gap is long
//! enough for every chain to have mixed.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::markov::{max_tv_distance, mixing_time_bound, second_eigenvalue_modulus, stationary_distribution};
use crate::model::MixtureHmmParams;

/// One subject's record: strictly increasing times (minutes) and values,
/// `None` marking a missing slot. Times absent from the record are missing too.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSeries {
    pub subject_id: String,
    pub times: Vec<i64>,
    pub values: Vec<Option<f64>>,
}

impl RawSeries {
    pub fn new(subject_id: impl Into<String>, times: Vec<i64>, values: Vec<Option<f64>>) -> Result<Self> {
        let s = Self { subject_id: subject_id.into(), times, values };
        s.validate()?;
        Ok(s)
    }

    /// Series observed at consecutive times `0, 1, …`.
    pub fn from_values(subject_id: impl Into<String>, values: Vec<Option<f64>>) -> Result<Self> {
        let times = (0..values.len() as i64).collect();
        Self::new(subject_id, times, values)
    }

    pub fn validate(&self) -> Result<()> {
        if self.times.len() != self.values.len() {
            return Err(invalid(format!(
                "subject {}: {} times but {} values",
                self.subject_id,
                self.times.len(),
                self.values.len()
            )));
        }
        if self.times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid(format!("subject {}: times are not strictly increasing", self.subject_id)));
        }
        if let Some(v) = self.values.iter().flatten().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(invalid(format!("subject {}: value {v} is not a nonnegative number", self.subject_id)));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn missing_count(&self) -> usize {
        let span = match (self.times.first(), self.times.last()) {
            (Some(a), Some(b)) => (b - a + 1) as usize,
            _ => 0,
        };
        span - self.values.iter().filter(|v| v.is_some()).count()
    }
}

/// A subject split into gap-free segments.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentedSubject {
    pub subject_id: String,
    pub segments: Vec<Vec<f64>>,
    /// Original time of the first value of each segment.
    pub segment_starts: Vec<i64>,
    /// Missing slots between consecutive segments (`segments.len() − 1` entries).
    pub gaps: Vec<usize>,
    /// Indices into `gaps` of runs shorter than the requested minimum.
    pub short_gaps: Vec<usize>,
}

impl SegmentedSubject {
    /// Wraps already gap-free sequences, e.g. simulated data.
    pub fn from_segments(subject_id: impl Into<String>, segments: Vec<Vec<f64>>) -> Result<Self> {
        let subject_id = subject_id.into();
        if segments.is_empty() || segments.iter().any(|s| s.is_empty()) {
            return Err(invalid(format!("subject {subject_id}: segments must be nonempty")));
        }
        if let Some(v) = segments.iter().flatten().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(invalid(format!("subject {subject_id}: value {v} is not a nonnegative number")));
        }
        let mut starts = Vec::with_capacity(segments.len());
        let mut t = 0i64;
        for s in &segments {
            starts.push(t);
            t += s.len() as i64 + 1;
        }
        let gaps = vec![1; segments.len() - 1];
        Ok(Self { subject_id, segments, segment_starts: starts, gaps, short_gaps: Vec::new() })
    }

    pub fn n_observations(&self) -> usize {
        self.segments.iter().map(Vec::len).sum()
    }

    /// Number of time slots from the first to the last observed value.
    pub fn span(&self) -> usize {
        self.n_observations() + self.gaps.iter().sum::<usize>()
    }

    /// Reassembles the trimmed series with explicit missing markers.
    pub fn flatten(&self) -> RawSeries {
        let start = self.segment_starts.first().copied().unwrap_or(0);
        let mut values = Vec::with_capacity(self.span());
        for (s, seg) in self.segments.iter().enumerate() {
            values.extend(seg.iter().map(|&v| Some(v)));
            if let Some(&g) = self.gaps.get(s) {
                values.extend(std::iter::repeat(None).take(g));
            }
        }
        let times = (start..start + values.len() as i64).collect();
        RawSeries { subject_id: self.subject_id.clone(), times, values }
    }
}

/// What to do with an interior missing run shorter than the requested minimum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ShortGapPolicy {
    /// Split anyway and record the gap in `short_gaps`.
    #[default]
    Split,
    Error,
}

/// Splits a series into maximal observed runs after trimming edge missingness.
pub fn segment_on_missing(series: &RawSeries, min_gap: usize) -> Result<SegmentedSubject> {
    segment_with_policy(series, min_gap, ShortGapPolicy::Split)
}

pub fn segment_with_policy(
    series: &RawSeries,
    min_gap: usize,
    policy: ShortGapPolicy,
) -> Result<SegmentedSubject> {
    if min_gap == 0 {
        return Err(invalid("min_gap must be at least 1"));
    }
    series.validate()?;
    let mut segments: Vec<Vec<f64>> = Vec::new();
    let mut starts = Vec::new();
    let mut gaps = Vec::new();
    let mut current: Vec<f64> = Vec::new();
    let mut pending_gap = 0usize;
    let mut last_t: Option<i64> = None;
    for (&t, v) in series.times.iter().zip(&series.values) {
        if let Some(prev) = last_t {
            pending_gap += (t - prev - 1) as usize;
        }
        last_t = Some(t);
        match v {
            None => pending_gap += 1,
            Some(y) => {
                if pending_gap > 0 && !current.is_empty() {
                    segments.push(std::mem::take(&mut current));
                    gaps.push(pending_gap);
                }
                if current.is_empty() {
                    starts.push(t);
                }
                pending_gap = 0;
                current.push(*y);
            }
        }
    }
    if !current.is_empty() {
        segments.push(current);
    }
    if segments.is_empty() {
        return Err(invalid(format!("subject {}: no observed values", series.subject_id)));
    }
    let short_gaps: Vec<usize> = gaps.iter().enumerate().filter(|(_, &g)| g < min_gap).map(|(i, _)| i).collect();
    if policy == ShortGapPolicy::Error && !short_gaps.is_empty() {
        return Err(invalid(format!(
            "subject {}: missing run of length {} is shorter than the minimum gap {min_gap}",
            series.subject_id, gaps[short_gaps[0]]
        )));
    }
    Ok(SegmentedSubject {
        subject_id: series.subject_id.clone(),
        segments,
        segment_starts: starts,
        gaps,
        short_gaps,
    })
}

/// Reads `subject_id,t,value` rows; `value` empty or `NA` is missing.
///
/// Subjects come out in order of first appearance, each sorted by `t`.
pub fn parse_long_csv<R: Read>(reader: R) -> Result<Vec<RawSeries>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["subject_id", "t", "value"] {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header `subject_id,t,value`, found `{}`", headers.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut rows: Vec<(String, Vec<(i64, Option<f64>, u64)>)> = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            Error::Parse { line, message: e.to_string() }
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let bad = |message: String| Error::Parse { line, message };
        if record.len() != 3 {
            return Err(bad(format!("expected 3 fields, found {}", record.len())));
        }
        let id = record[0].to_string();
        if id.is_empty() {
            return Err(bad("empty subject_id".into()));
        }
        let t: i64 = record[1].parse().map_err(|_| bad(format!("invalid time `{}`", &record[1])))?;
        let value = match &record[2] {
            "" | "NA" => None,
            s => {
                let v: f64 = s.parse().map_err(|_| bad(format!("invalid value `{s}`")))?;
                if !v.is_finite() {
                    return Err(bad(format!("value `{s}` is not finite")));
                }
                if v < 0.0 {
                    return Err(bad(format!("negative value {v}")));
                }
                Some(v)
            }
        };
        let slot = *index.entry(id.clone()).or_insert_with(|| {
            rows.push((id, Vec::new()));
            rows.len() - 1
        });
        rows[slot].1.push((t, value, line));
    }
    rows.into_iter()
        .map(|(id, mut obs)| {
            obs.sort_by_key(|&(t, _, line)| (t, line));
            if let Some(w) = obs.windows(2).find(|w| w[0].0 == w[1].0) {
                return Err(Error::Parse {
                    line: w[1].2,
                    message: format!("duplicate time {} for subject {id}", w[1].0),
                });
            }
            let (times, values) = obs.into_iter().map(|(t, v, _)| (t, v)).unzip();
            RawSeries::new(id, times, values)
        })
        .collect()
}

pub fn read_long_csv(path: impl AsRef<Path>) -> Result<Vec<RawSeries>> {
    parse_long_csv(std::fs::File::open(path)?)
}

/// Inverse of [`parse_long_csv`]; values keep their exact binary value.
pub fn write_long_csv<W: Write>(series: &[RawSeries], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["subject_id", "t", "value"])?;
    for s in series {
        for (t, v) in s.times.iter().zip(&s.values) {
            let value = v.map_or_else(|| "NA".to_string(), |y| y.to_string());
            w.write_record([s.subject_id.as_str(), &t.to_string(), &value])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Segment dump: `subject_id,segment_index,t_local,value` (segments numbered from 1).
pub fn write_segments_csv<W: Write>(subjects: &[SegmentedSubject], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["subject_id", "segment_index", "t_local", "value"])?;
    for s in subjects {
        for (i, seg) in s.segments.iter().enumerate() {
            for (t, y) in seg.iter().enumerate() {
                w.write_record([s.subject_id.as_str(), &(i + 1).to_string(), &t.to_string(), &y.to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum GapStatus {
    Pass,
    Fail,
    VacuousPass,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentGapCheck {
    /// 1-based component label.
    pub component: usize,
    pub nu_star: f64,
    /// `None` when the chain is not ergodic.
    pub mixing_bound: Option<f64>,
    /// `max_h ‖A^{d_min}[h,·] − π‖_TV`
    pub tv_at_d_min: Option<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapReport {
    pub status: GapStatus,
    pub eta: f64,
    pub d_min: Option<usize>,
    pub components: Vec<ComponentGapCheck>,
}

impl GapReport {
    pub fn passed(&self) -> bool {
        self.status != GapStatus::Fail
    }
}

/// Checks that the shortest interior gap exceeds each component's mixing bound.
pub fn validate_gap_assumption(
    subjects: &[SegmentedSubject],
    params: &MixtureHmmParams,
    eta: f64,
) -> Result<GapReport> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(invalid(format!("eta must be positive, got {eta}")));
    }
    let d_min = subjects.iter().flat_map(|s| s.gaps.iter().copied()).min();
    let mut components = Vec::with_capacity(params.k());
    for (k, a) in params.trans.iter().enumerate() {
        let nu_star = second_eigenvalue_modulus(a);
        let bound = mixing_time_bound(a, eta).ok();
        let tv = match (d_min, stationary_distribution(a)) {
            (Some(d), Ok(pi)) => Some(max_tv_distance(a, &pi, d as u64)),
            _ => None,
        };
        let pass = match (d_min, bound) {
            (None, _) => true,
            (Some(d), Some(b)) => d as f64 >= b,
            (Some(_), None) => false,
        };
        components.push(ComponentGapCheck { component: k + 1, nu_star, mixing_bound: bound, tv_at_d_min: tv, pass });
    }
    let status = if d_min.is_none() {
        GapStatus::VacuousPass
    } else if components.iter().all(|c| c.pass) {
        GapStatus::Pass
    } else {
        GapStatus::Fail
    };
    Ok(GapReport { status, eta, d_min, components })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emissions::ZigParams;
    use crate::markov::{StationaryLaw, TransitionMatrix};
    use proptest::prelude::*;

    fn obs(v: &[Option<f64>]) -> RawSeries {
        RawSeries::from_values("s", v.to_vec()).unwrap()
    }

    #[test]
    fn no_missing_single_segment() {
        let s = segment_on_missing(&obs(&[Some(1.0), Some(2.0), Some(0.0)]), 1).unwrap();
        assert_eq!(s.segments, vec![vec![1.0, 2.0, 0.0]]);
        assert!(s.gaps.is_empty());
    }

    #[test]
    fn interior_gap_splits() {
        let mut v = vec![Some(1.0), Some(2.0)];
        v.extend(std::iter::repeat(None).take(60));
        v.extend([Some(3.0), Some(4.0), Some(5.0)]);
        let s = segment_on_missing(&obs(&v), 1).unwrap();
        assert_eq!(s.segments.len(), 2);
        assert_eq!(s.segments[0].len(), 2);
        assert_eq!(s.segments[1].len(), 3);
        assert_eq!(s.gaps, vec![60]);
        assert_eq!(s.segment_starts, vec![0, 62]);
        assert_eq!(s.span(), 65);
    }

    #[test]
    fn edge_missing_trimmed() {
        let mut v: Vec<Option<f64>> = vec![None; 5];
        v.extend([Some(1.0), Some(2.0), None, None]);
        let s = segment_on_missing(&obs(&v), 1).unwrap();
        assert_eq!(s.segments, vec![vec![1.0, 2.0]]);
        assert!(s.gaps.is_empty());
        assert_eq!(s.segment_starts, vec![5]);
    }

    #[test]
    fn absent_times_count_as_missing() {
        let r = RawSeries::new("a", vec![0, 1, 5, 6], vec![Some(1.0); 4]).unwrap();
        let s = segment_on_missing(&r, 1).unwrap();
        assert_eq!(s.gaps, vec![3]);
        assert_eq!(s.segment_starts, vec![0, 5]);
    }

    #[test]
    fn all_missing_is_error() {
        assert!(segment_on_missing(&obs(&[None, None]), 1).is_err());
    }

    #[test]
    fn short_gap_policy() {
        let r = obs(&[Some(1.0), None, Some(2.0), None, None, None, Some(3.0)]);
        let s = segment_on_missing(&r, 2).unwrap();
        assert_eq!(s.gaps, vec![1, 3]);
        assert_eq!(s.short_gaps, vec![0]);
        assert!(segment_with_policy(&r, 2, ShortGapPolicy::Error).is_err());
        assert!(segment_with_policy(&r, 1, ShortGapPolicy::Error).is_ok());
    }

    #[test]
    fn parse_two_subjects() {
        let csv = "subject_id,t,value\na,0,1.5\nb,0,0\na,1,NA\nb,1,\na,2,3\nb,2,4\n";
        let series = parse_long_csv(csv.as_bytes()).unwrap();
        assert_eq!(series.len(), 2);
        assert_eq!(series[0].subject_id, "a");
        assert_eq!(series[0].values, vec![Some(1.5), None, Some(3.0)]);
        assert_eq!(series[1].values, vec![Some(0.0), None, Some(4.0)]);
    }

    #[test]
    fn parse_sorts_by_time() {
        let csv = "subject_id,t,value\na,2,3\na,0,1\na,1,2\n";
        let series = parse_long_csv(csv.as_bytes()).unwrap();
        assert_eq!(series[0].times, vec![0, 1, 2]);
        assert_eq!(series[0].values, vec![Some(1.0), Some(2.0), Some(3.0)]);
    }

    #[test]
    fn parse_errors_name_lines() {
        let dup = "subject_id,t,value\na,0,1\na,1,2\na,0,3\n";
        match parse_long_csv(dup.as_bytes()).unwrap_err() {
            Error::Parse { line, message } => {
                assert_eq!(line, 4);
                assert!(message.contains("duplicate"));
            }
            e => panic!("{e:?}"),
        }
        let neg = "subject_id,t,value\na,0,1\na,1,-2\n";
        assert!(matches!(parse_long_csv(neg.as_bytes()), Err(Error::Parse { line: 3, .. })));
        let junk = "subject_id,t,value\na,x,1\n";
        assert!(matches!(parse_long_csv(junk.as_bytes()), Err(Error::Parse { line: 2, .. })));
        let header = "id,time,value\na,0,1\n";
        assert!(matches!(parse_long_csv(header.as_bytes()), Err(Error::Parse { line: 1, .. })));
        let short = "subject_id,t,value\na,0\n";
        assert!(parse_long_csv(short.as_bytes()).is_err());
    }

    #[test]
    fn segment_dump_format() {
        let s = segment_on_missing(&obs(&[Some(1.0), None, Some(2.5)]), 1).unwrap();
        let mut out = Vec::new();
        write_segments_csv(&[s], &mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "subject_id,segment_index,t_local,value\ns,1,0,1\ns,2,0,2.5\n"
        );
    }

    fn two_state(e: f64) -> MixtureHmmParams {
        let a = TransitionMatrix::new(vec![vec![e, 1.0 - e], vec![1.0 - e, e]]).unwrap();
        MixtureHmmParams::new(
            vec![1.0],
            vec![StationaryLaw::uniform(2)],
            vec![a],
            vec![ZigParams::new(0.1, 1.0, 1.0).unwrap(), ZigParams::new(0.1, 3.0, 1.0).unwrap()],
        )
        .unwrap()
    }

    #[test]
    fn gap_report_vacuous_without_gaps() {
        let s = segment_on_missing(&obs(&[Some(1.0), Some(2.0)]), 1).unwrap();
        let r = validate_gap_assumption(&[s], &two_state(0.9), 0.01).unwrap();
        assert_eq!(r.status, GapStatus::VacuousPass);
        assert!(r.passed());
    }

    #[test]
    fn gap_report_pass_and_fail() {
        let mut v = vec![Some(1.0)];
        v.extend(std::iter::repeat(None).take(60));
        v.push(Some(2.0));
        let long = segment_on_missing(&obs(&v), 1).unwrap();
        let r = validate_gap_assumption(&[long], &two_state(0.9), 1e-3).unwrap();
        assert_eq!(r.status, GapStatus::Pass);
        assert!(r.components[0].tv_at_d_min.unwrap() <= 5e-4);

        // ν* = 0.99 mixes slowly; a one-step gap cannot satisfy eta = 0.01
        let short = segment_on_missing(&obs(&[Some(1.0), None, Some(2.0)]), 1).unwrap();
        let r = validate_gap_assumption(&[short], &two_state(0.995), 0.01).unwrap();
        assert_eq!(r.status, GapStatus::Fail);
        assert!(!r.components[0].pass);
        assert!(r.components[0].tv_at_d_min.unwrap() > 0.01);
    }

    fn arb_series() -> impl Strategy<Value = RawSeries> {
        prop::collection::vec(prop::option::weighted(0.7, 0.0f64..1e4), 1..80).prop_filter_map(
            "needs an observed value",
            |v| {
                if v.iter().any(Option::is_some) {
                    Some(RawSeries::from_values("p", v).unwrap())
                } else {
                    None
                }
            },
        )
    }

    proptest! {
        #[test]
        fn csv_round_trip(series in arb_series()) {
            let mut buf = Vec::new();
            write_long_csv(std::slice::from_ref(&series), &mut buf).unwrap();
            let back = parse_long_csv(buf.as_slice()).unwrap();
            prop_assert_eq!(back.len(), 1);
            prop_assert_eq!(&back[0].times, &series.times);
            for (a, b) in back[0].values.iter().zip(&series.values) {
                prop_assert_eq!(a.map(f64::to_bits), b.map(f64::to_bits));
            }
        }

        #[test]
        fn segmentation_reconstructs_and_is_idempotent(series in arb_series()) {
            let s = segment_on_missing(&series, 1).unwrap();
            let first = series.values.iter().position(Option::is_some).unwrap();
            let last = series.values.iter().rposition(Option::is_some).unwrap();
            prop_assert_eq!(s.span(), last - first + 1);
            prop_assert!(s.segments.iter().all(|seg| !seg.is_empty()));
            let again = segment_on_missing(&s.flatten(), 1).unwrap();
            prop_assert_eq!(again, s);
        }
    }
}
