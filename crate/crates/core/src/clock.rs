use std::sync::Mutex;

use chrono::{DateTime, Duration, SecondsFormat, Utc};

/// Source of wall-clock time. Injected so tests can drive expiry and
/// scheduling deterministically.
pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// A clock that only moves when told to.
#[derive(Debug)]
pub struct ManualClock(Mutex<DateTime<Utc>>);

impl ManualClock {
    pub fn new(start: DateTime<Utc>) -> Self {
        Self(Mutex::new(start))
    }

    pub fn set(&self, t: DateTime<Utc>) {
        *self.0.lock().unwrap() = t;
    }

    pub fn advance(&self, by: Duration) {
        let mut t = self.0.lock().unwrap();
        *t += by;
    }
}

impl Clock for ManualClock {
    fn now(&self) -> DateTime<Utc> {
        *self.0.lock().unwrap()
    }
}

/// Canonical text form used in storage and on the wire. Fixed width, so
/// lexicographic order equals chronological order.
pub fn format_ts(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Millis, true)
}

pub fn parse_ts(s: &str) -> Option<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(s)
        .ok()
        .map(|t| t.with_timezone(&Utc))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_format_sorts_chronologically() {
        let a = parse_ts("2009-09-01T10:00:00Z").unwrap();
        let b = a + Duration::milliseconds(1500);
        assert!(format_ts(&a) < format_ts(&b));
        assert_eq!(format_ts(&a), "2009-09-01T10:00:00.000Z");
        assert_eq!(parse_ts(&format_ts(&b)), Some(b));
    }

    #[test]
    fn manual_clock_advances() {
        let c = ManualClock::new(parse_ts("2020-01-01T00:00:00Z").unwrap());
        c.advance(Duration::seconds(3));
        assert_eq!(format_ts(&c.now()), "2020-01-01T00:00:03.000Z");
    }
}
