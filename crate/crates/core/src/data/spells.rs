//! From event records to censored spells with covariates.

use std::collections::HashMap;
use std::io::Write;
use std::str::FromStr;

use chrono::{NaiveDate, NaiveDateTime};

use super::events::{continuity, csv_field, format_timestamp, Continuity, EventRecord};
use crate::error::{invalid, Error, Result};
use crate::network::{nearby_fraction, Network};
use crate::spell::{hour_of_day, Covariates, Spell};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GapPolicy {
    /// Censor a record whose successor is missing at its observed duration.
    Censor,
    /// Drop such records.
    Drop,
}

impl FromStr for GapPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "censor" => Ok(Self::Censor),
            "drop" => Ok(Self::Drop),
            other => Err(invalid("gap-policy", format!("expected `censor` or `drop`, got `{other}`"))),
        }
    }
}

impl std::fmt::Display for GapPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Censor => "censor",
            Self::Drop => "drop",
        })
    }
}

#[derive(Debug, Clone)]
pub struct SpellOptions {
    /// Hours of day; a spell is kept when its start hour lies in `[from, to)`.
    pub window_hours: (f64, f64),
    /// Inclusive first and exclusive last date of spell starts.
    pub dates: (Option<NaiveDate>, Option<NaiveDate>),
    pub censor_horizon: f64,
    pub gap_policy: GapPolicy,
    /// Network distance (metres) defining neighbouring lots.
    pub nearby_radius: f64,
}

impl Default for SpellOptions {
    fn default() -> Self {
        Self {
            window_hours: (8.0, 20.0),
            dates: (None, None),
            censor_horizon: 60.0,
            gap_policy: GapPolicy::Censor,
            nearby_radius: 50.0,
        }
    }
}

impl SpellOptions {
    pub fn in_window(&self, t: NaiveDateTime) -> bool {
        let h = hour_of_day(t);
        let d = t.date();
        h >= self.window_hours.0
            && h < self.window_hours.1
            && self.dates.0.is_none_or(|from| d >= from)
            && self.dates.1.is_none_or(|to| d < to)
    }
}

/// Records grouped per marker, each group sorted by start time.
#[derive(Debug, Clone)]
pub struct RecordIndex<'a> {
    pub markers: Vec<&'a str>,
    groups: Vec<Vec<&'a EventRecord>>,
    by_marker: HashMap<&'a str, usize>,
}

impl<'a> RecordIndex<'a> {
    pub fn new(records: &'a [EventRecord]) -> Self {
        let mut by_marker: HashMap<&str, usize> = HashMap::new();
        let mut markers = Vec::new();
        let mut groups: Vec<Vec<&EventRecord>> = Vec::new();
        for r in records {
            let g = *by_marker.entry(r.marker.as_str()).or_insert_with(|| {
                markers.push(r.marker.as_str());
                groups.push(Vec::new());
                groups.len() - 1
            });
            groups[g].push(r);
        }
        for g in &mut groups {
            g.sort_by_key(|r| r.start);
        }
        Self { markers, groups, by_marker }
    }

    pub fn records(&self, marker: &str) -> &[&'a EventRecord] {
        self.by_marker.get(marker).map_or(&[], |&g| self.groups[g].as_slice())
    }

    /// Record of `marker` covering instant `t` (start ≤ t < end).
    pub fn covering(&self, marker: &str, t: NaiveDateTime) -> Option<&'a EventRecord> {
        let recs = self.records(marker);
        let pos = recs.partition_point(|r| r.start <= t);
        (pos > 0).then(|| recs[pos - 1]).filter(|r| t < r.end)
    }

    pub fn state_at(&self, marker: &str, t: NaiveDateTime) -> Option<u8> {
        self.covering(marker, t).map(|r| r.state)
    }
}

/// Converts records to spells. Records whose successor on the same marker
/// is missing (a sensor gap or the end of the data) have an unconfirmed
/// state change and follow `gap_policy`; durations beyond the horizon are
/// censored there. `nearby` is the share of neighbours (within the radius,
/// with a record covering the spell start) in the opposite state.
pub fn build_spells(records: &[EventRecord], network: Option<&Network>, opts: &SpellOptions) -> Vec<Spell> {
    let index = RecordIndex::new(records);
    let (lot_index, neighbors) = match network {
        Some(net) => (net.lot_index(), net.neighbors(opts.nearby_radius)),
        None => (HashMap::new(), Vec::new()),
    };
    let placement_marker: Vec<&str> = network.map_or(Vec::new(), |n| n.placements.iter().map(|p| p.lot_id.as_str()).collect());
    let mut spells = Vec::new();
    let mut markers = index.markers.clone();
    markers.sort_unstable();
    for marker in markers {
        let recs = index.records(marker);
        for (k, r) in recs.iter().enumerate() {
            if !opts.in_window(r.start) {
                continue;
            }
            let confirmed = recs.get(k + 1).is_some_and(|next| continuity(r, next) == Continuity::Contiguous);
            if !confirmed && opts.gap_policy == GapPolicy::Drop {
                continue;
            }
            let nearby = lot_index.get(marker).and_then(|&i| {
                nearby_fraction(&neighbors[i], 1 - r.state, |k| index.state_at(placement_marker[k], r.start))
            });
            let spell = Spell {
                lot_id: marker.to_string(),
                state: r.state,
                start: r.start,
                duration: r.duration_min,
                observed: confirmed,
                covariates: Covariates::at(r.start, r.side.clone(), nearby),
            };
            spells.push(spell.censored_at(opts.censor_horizon));
        }
    }
    spells
}

pub const SPELL_COLUMNS: &str = "marker,state,start,duration_min,observed,weekday,hour,side,nearby";

pub fn write_spells<W: Write>(mut out: W, spells: &[Spell]) -> Result<()> {
    writeln!(out, "{SPELL_COLUMNS}")?;
    for s in spells {
        let nearby = s.covariates.nearby.map_or(String::new(), |v| format!("{v:.6}"));
        writeln!(
            out,
            "{},{},{},{:.2},{},{},{:.6},{},{}",
            csv_field(&s.lot_id),
            s.state,
            format_timestamp(s.start),
            s.duration,
            u8::from(s.observed),
            s.covariates.weekday,
            s.covariates.hour,
            csv_field(&s.covariates.side),
            nearby
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::events::parse_events;

    fn records(text: &str) -> Vec<EventRecord> {
        let header = "start,end,duration_min,state,marker,side\n";
        parse_events(format!("{header}{text}").as_bytes()).unwrap().0
    }

    #[test]
    fn horizon_and_gap_rules() {
        let recs = records(
            "\
2019-06-07 08:00:00,2019-06-07 09:30:00,90.00,1,A,west
2019-06-07 09:30:00,2019-06-07 09:35:20,5.33,0,A,west
2019-06-07 09:35:20,2019-06-07 09:40:00,4.67,1,A,west
2019-06-07 10:00:00,2019-06-07 10:05:00,5.00,0,A,west
2019-06-07 10:05:00,2019-06-07 10:06:00,1.00,1,A,west
",
        );
        let spells = build_spells(&recs, None, &SpellOptions::default());
        let got: Vec<(f64, bool)> = spells.iter().map(|s| (s.duration, s.observed)).collect();
        assert_eq!(got, vec![(60.0, false), (5.33, true), (4.67, false), (5.0, true), (1.0, false)]);
        let opts = SpellOptions { gap_policy: GapPolicy::Drop, ..SpellOptions::default() };
        let kept = build_spells(&recs, None, &opts);
        assert_eq!(kept.len(), 3);
        for s in spells.iter().chain(&kept) {
            assert!(!(s.observed && s.duration > 60.0));
            assert!(s.duration > 0.0 && s.duration.is_finite());
        }
    }

    #[test]
    fn window_filters_on_start_time() {
        let recs = records(
            "\
2019-06-07 07:50:00,2019-06-07 08:10:00,20.00,1,A,west
2019-06-07 08:10:00,2019-06-07 19:59:00,709.00,0,A,west
2019-06-07 19:59:00,2019-06-07 20:30:00,31.00,1,A,west
2019-06-07 20:30:00,2019-06-07 20:40:00,10.00,0,A,west
",
        );
        let spells = build_spells(&recs, None, &SpellOptions::default());
        assert_eq!(spells.len(), 2);
        let opts = SpellOptions {
            dates: (Some(NaiveDate::from_ymd_opt(2019, 6, 8).unwrap()), None),
            ..SpellOptions::default()
        };
        assert!(build_spells(&recs, None, &opts).is_empty());
    }

    #[test]
    fn nearby_from_concurrent_records() {
        let net = crate::network::parse_network(
            "N a 0 0\nN b 100 0\nE e a b 100\nP A e 10 west\nP B e 20 west\nP C e 30 west\nP D e 40 west\nP F e 95 west\n",
        )
        .unwrap();
        let recs = records(
            "\
2019-06-07 09:00:00,2019-06-07 09:10:00,10.00,0,A,west
2019-06-07 08:50:00,2019-06-07 09:20:00,30.00,1,B,west
2019-06-07 08:55:00,2019-06-07 09:00:00,5.00,0,C,west
2019-06-07 09:00:00,2019-06-07 09:20:00,20.00,1,C,west
2019-06-07 08:00:00,2019-06-07 08:30:00,30.00,0,D,west
2019-06-07 08:00:00,2019-06-07 10:00:00,120.00,1,F,west
",
        );
        let spells = build_spells(&recs, Some(&net), &SpellOptions::default());
        let a = spells.iter().find(|s| s.lot_id == "A").unwrap();
        // B and C occupied at 09:00, D has no covering record, F is 85 m away
        assert_eq!(a.covariates.nearby, Some(1.0));
        let f = spells.iter().find(|s| s.lot_id == "F").unwrap();
        assert_eq!(f.covariates.nearby, None);
    }

    #[test]
    fn gap_policy_parses() {
        assert_eq!("censor".parse::<GapPolicy>().unwrap(), GapPolicy::Censor);
        assert_eq!("drop".parse::<GapPolicy>().unwrap(), GapPolicy::Drop);
        assert!("keep".parse::<GapPolicy>().is_err());
    }

    #[test]
    fn spell_csv_layout() {
        let recs = records("2019-06-07 09:00:00,2019-06-07 09:10:00,10.00,0,A,west\n");
        let spells = build_spells(&recs, None, &SpellOptions::default());
        let mut buf = Vec::new();
        write_spells(&mut buf, &spells).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, format!("{SPELL_COLUMNS}\nA,0,2019-06-07 09:00:00,10.00,0,4,9.000000,west,\n"));
    }
}
