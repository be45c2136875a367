//! Sensor event records: parsing, validation and CSV output.

use std::io::{Read, Write};

use chrono::NaiveDateTime;

use crate::error::{Error, Result};

pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%d %H:%M:%S";
pub const EVENT_COLUMNS: [&str; 6] = ["start", "end", "duration_min", "state", "marker", "side"];
/// Allowed disagreement between the duration column and the timestamps.
pub const DURATION_TOLERANCE_MIN: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    pub start: NaiveDateTime,
    pub end: NaiveDateTime,
    pub duration_min: f64,
    pub state: u8,
    pub marker: String,
    pub side: String,
}

impl EventRecord {
    pub fn timestamp_minutes(&self) -> f64 {
        (self.end - self.start).num_seconds() as f64 / 60.0
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Diagnostics {
    pub records: usize,
    /// Rows dropped because the duration column disagrees with the timestamps.
    pub duration_mismatches: usize,
    /// Consecutive records of one marker that overlap.
    pub overlaps: usize,
    /// Consecutive records of one marker separated by a gap.
    pub gaps: usize,
}

pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    NaiveDateTime::parse_from_str(s.trim(), TIMESTAMP_FORMAT).ok()
}

pub fn format_timestamp(t: NaiveDateTime) -> String {
    t.format(TIMESTAMP_FORMAT).to_string()
}

/// Relation of a record to its successor on the same marker.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Continuity {
    Contiguous,
    Gap,
    Overlap,
}

/// Successor relation with a one-second tolerance.
pub fn continuity(prev: &EventRecord, next: &EventRecord) -> Continuity {
    let delta = (next.start - prev.end).num_seconds();
    if delta > 1 {
        Continuity::Gap
    } else if delta < -1 {
        Continuity::Overlap
    } else {
        Continuity::Contiguous
    }
}

/// Parses an event CSV with a header naming the columns
/// `start,end,duration_min,state,marker,side` (any order). Records come
/// back sorted by marker and start time.
pub fn parse_events<R: Read>(input: R) -> Result<(Vec<EventRecord>, Diagnostics)> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).flexible(true).from_reader(input);
    let headers = match reader.headers() {
        Ok(h) => h.clone(),
        Err(e) => return Err(Error::Parse { line: 1, message: e.to_string() }),
    };
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Ok((Vec::new(), Diagnostics::default()));
    }
    let mut idx = [0usize; 6];
    for (slot, name) in idx.iter_mut().zip(EVENT_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse { line: 1, message: format!("missing column `{name}`") })?;
    }
    let mut diag = Diagnostics::default();
    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::Parse { line, message: e.to_string() })?;
        if row.len() == 1 && row[0].is_empty() {
            continue;
        }
        let field = |k: usize| -> Result<&str> {
            row.get(idx[k]).ok_or_else(|| Error::Parse { line, message: format!("missing field `{}`", EVENT_COLUMNS[k]) })
        };
        let time = |k: usize| -> Result<NaiveDateTime> {
            let s = field(k)?;
            parse_timestamp(s).ok_or_else(|| Error::Parse { line, message: format!("bad timestamp `{s}`") })
        };
        let start = time(0)?;
        let end = time(1)?;
        let dur = field(2)?;
        let duration_min: f64 = dur
            .parse()
            .ok()
            .filter(|d: &f64| d.is_finite())
            .ok_or_else(|| Error::Parse { line, message: format!("bad duration `{dur}`") })?;
        let state = match field(3)? {
            "0" => 0,
            "1" => 1,
            s => return Err(Error::Parse { line, message: format!("state must be 0 or 1, got `{s}`") }),
        };
        if end <= start {
            return Err(Error::Parse { line, message: "end must be after start".into() });
        }
        let marker = field(4)?.to_string();
        if marker.is_empty() {
            return Err(Error::Parse { line, message: "empty marker".into() });
        }
        let record = EventRecord { start, end, duration_min, state, marker, side: field(5)?.to_string() };
        if (record.duration_min - record.timestamp_minutes()).abs() >= DURATION_TOLERANCE_MIN + 1e-9 {
            diag.duration_mismatches += 1;
            continue;
        }
        records.push(record);
    }
    records.sort_by(|a, b| a.marker.cmp(&b.marker).then(a.start.cmp(&b.start)));
    for w in records.windows(2) {
        if w[0].marker == w[1].marker {
            match continuity(&w[0], &w[1]) {
                Continuity::Gap => diag.gaps += 1,
                Continuity::Overlap => diag.overlaps += 1,
                Continuity::Contiguous => {}
            }
        }
    }
    diag.records = records.len();
    Ok((records, diag))
}

/// Writes records as event CSV with a header. Durations that are whole
/// hundredths print with two decimals, others with full precision.
pub fn write_events<W: Write>(mut out: W, records: &[EventRecord]) -> Result<()> {
    writeln!(out, "{}", EVENT_COLUMNS.join(","))?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            format_timestamp(r.start),
            format_timestamp(r.end),
            format_duration(r.duration_min),
            r.state,
            csv_field(&r.marker),
            csv_field(&r.side)
        )?;
    }
    Ok(())
}

/// Quotes a field when it contains a delimiter, quote or line break.
pub fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn format_duration(minutes: f64) -> String {
    let short = format!("{minutes:.2}");
    if short.parse::<f64>() == Ok(minutes) {
        short
    } else {
        minutes.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
start,end,duration_min,state,marker,side
2019-04-30 08:24:11,2019-04-30 08:29:31,5.33,1,1155W,west
2019-04-30 08:29:31,2019-04-30 08:34:54,5.38,0,1155W,west
2019-04-30 08:34:54,2019-04-30 08:37:22,2.47,1,1155W,west
2019-06-07 08:53:44,2019-06-07 08:54:27,0.72,0,C1170,central
2019-06-07 08:54:27,2019-06-07 08:55:21,0.90,1,C1170,central
2019-06-07 09:15:11,2019-06-07 09:20:40,5.48,1,C1170,central
2019-06-07 09:20:40,2019-06-07 09:55:30,34.83,0,C1170,central
";

    #[test]
    fn parses_sample_rows() {
        let (recs, diag) = parse_events(SAMPLE.as_bytes()).unwrap();
        assert_eq!(recs.len(), 7);
        assert_eq!(recs[0].duration_min, 5.33);
        assert_eq!(recs[0].state, 1);
        assert_eq!(recs[0].marker, "1155W");
        assert_eq!(diag, Diagnostics { records: 7, duration_mismatches: 0, overlaps: 0, gaps: 1 });
        // 08:55:21 -> 09:15:11 is a sensor gap
        assert_eq!(continuity(&recs[4], &recs[5]), Continuity::Gap);
        assert_eq!(continuity(&recs[0], &recs[1]), Continuity::Contiguous);
    }

    #[test]
    fn empty_input_is_empty() {
        let (recs, diag) = parse_events("".as_bytes()).unwrap();
        assert!(recs.is_empty());
        assert_eq!(diag, Diagnostics::default());
        let (recs, _) = parse_events("start,end,duration_min,state,marker,side\n".as_bytes()).unwrap();
        assert!(recs.is_empty());
    }

    #[test]
    fn malformed_rows_report_line() {
        let bad = "start,end,duration_min,state,marker,side\n2019-06-07 08:19:04,2019-06-07 08:24:24,5.33,2,A,west\n";
        let err = parse_events(bad.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
        let bad = "start,end,duration_min,state,marker,side\n2019-06-07 08:19:04,yesterday,5.33,1,A,west\n";
        assert!(parse_events(bad.as_bytes()).unwrap_err().to_string().contains("timestamp"));
        let bad = "start,end,state,marker,side\n";
        assert!(parse_events(bad.as_bytes()).is_err());
    }

    #[test]
    fn mismatch_and_overlap_are_counted() {
        let text = "\
start,end,duration_min,state,marker,side
2019-06-07 08:00:00,2019-06-07 08:10:00,10.00,1,A,west
2019-06-07 08:09:00,2019-06-07 08:20:00,11.00,0,A,west
2019-06-07 08:20:00,2019-06-07 08:30:00,12.00,1,A,west
";
        let (recs, diag) = parse_events(text.as_bytes()).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(diag.duration_mismatches, 1);
        assert_eq!(diag.overlaps, 1);
    }

    #[test]
    fn write_then_parse_round_trips() {
        let (recs, _) = parse_events(SAMPLE.as_bytes()).unwrap();
        let mut buf = Vec::new();
        write_events(&mut buf, &recs).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), SAMPLE);
        let (back, _) = parse_events(buf.as_slice()).unwrap();
        assert_eq!(back, recs);
    }

    #[test]
    fn duration_formatting() {
        assert_eq!(format_duration(0.9), "0.90");
        assert_eq!(format_duration(34.83), "34.83");
        let third = 16.0 / 3.0;
        assert_eq!(format_duration(third).parse::<f64>().unwrap(), third);
    }

    #[test]
    fn quoting() {
        assert_eq!(csv_field("a,b"), "\"a,b\"");
        assert_eq!(csv_field("plain"), "plain");
    }
}
