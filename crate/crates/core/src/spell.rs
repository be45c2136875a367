//! Model-ready durations with their covariates.

use chrono::{Datelike, NaiveDateTime, Timelike};

pub const WEEKDAY_NAMES: [&str; 7] =
    ["Monday", "Tuesday", "Wednesday", "Thursday", "Friday", "Saturday", "Sunday"];

/// Covariates frozen at the start of a spell (or at prediction time).
#[derive(Debug, Clone, PartialEq)]
pub struct Covariates {
    /// 0 = Monday .. 6 = Sunday.
    pub weekday: u8,
    pub side: String,
    /// Fraction of nearby lots in the opposite state; `None` when no lot is nearby.
    pub nearby: Option<f64>,
    /// Hour of day in `[0, 24)`.
    pub hour: f64,
}

impl Covariates {
    pub fn at(time: NaiveDateTime, side: impl Into<String>, nearby: Option<f64>) -> Self {
        Self {
            weekday: time.weekday().num_days_from_monday() as u8,
            side: side.into(),
            nearby,
            hour: hour_of_day(time),
        }
    }
}

pub fn hour_of_day(time: NaiveDateTime) -> f64 {
    time.hour() as f64 + time.minute() as f64 / 60.0 + time.second() as f64 / 3600.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spell {
    pub lot_id: String,
    pub state: u8,
    pub start: NaiveDateTime,
    /// Minutes.
    pub duration: f64,
    pub observed: bool,
    pub covariates: Covariates,
}

impl Spell {
    /// Right-censor at `horizon` minutes.
    pub fn censored_at(mut self, horizon: f64) -> Self {
        if self.duration > horizon {
            self.duration = horizon;
            self.observed = false;
        }
        self
    }
}
