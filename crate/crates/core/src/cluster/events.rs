//! Monitoring events: persisted in `job_events`, retained in a bounded ring
//! and fanned out to any number of pull-based subscriptions.
//!
//! Subscribers never block the publisher. A subscription that falls behind
//! the ring is refilled from the store, so its sequence stays gap-free.

use std::collections::VecDeque;
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use rusqlite::{params, Connection, Transaction};
use serde::{Deserialize, Serialize};

use super::job::{Job, JobState};
use crate::clock::{format_ts, parse_ts};
use crate::error::Result;
use crate::store::Store;

pub const RING_CAPACITY: usize = 10_000;
const BACKFILL_BATCH: usize = 1_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorEvent {
    pub seq: i64,
    pub job_id: i64,
    pub timestamp: DateTime<Utc>,
    pub description: String,
    pub remote_host: String,
    pub running_time: f64,
    pub owner: String,
    pub status: JobState,
}

impl MonitorEvent {
    /// Snapshot of `job` at `now`; `seq` is assigned on insertion.
    pub fn from_job(job: &Job, now: DateTime<Utc>) -> Self {
        MonitorEvent {
            seq: 0,
            job_id: job.job_id,
            timestamp: now,
            description: job.description.clone(),
            remote_host: job.remote_host().to_string(),
            running_time: job.running_time(now),
            owner: job.owner_login.clone(),
            status: job.state,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventFilter {
    pub owner: Option<String>,
    pub job_id: Option<i64>,
    pub state: Option<JobState>,
}

impl EventFilter {
    pub fn matches(&self, e: &MonitorEvent) -> bool {
        self.owner.as_ref().is_none_or(|o| *o == e.owner)
            && self.job_id.is_none_or(|j| j == e.job_id)
            && self.state.is_none_or(|s| s == e.status)
    }
}

/// Persists the event and stores its assigned sequence number in `ev.seq`.
pub fn insert_event(tx: &Transaction<'_>, ev: &mut MonitorEvent) -> Result<()> {
    tx.execute(
        "INSERT INTO job_events(job_id, timestamp, description, remote_host, running_time, owner, status) \
         VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7)",
        params![
            ev.job_id,
            format_ts(&ev.timestamp),
            ev.description,
            ev.remote_host,
            ev.running_time,
            ev.owner,
            ev.status.as_str()
        ],
    )?;
    ev.seq = tx.last_insert_rowid();
    Ok(())
}

pub fn events_after(conn: &Connection, from_seq: i64, limit: usize) -> Result<Vec<MonitorEvent>> {
    select_events(conn, "seq > ?1 ORDER BY seq LIMIT ?2", params![from_seq, limit as i64])
}

/// Full persisted history of one job, oldest first.
pub fn job_history(conn: &Connection, job_id: i64) -> Result<Vec<MonitorEvent>> {
    select_events(conn, "job_id = ?1 ORDER BY seq", params![job_id])
}

fn select_events(conn: &Connection, clause: &str, args: impl rusqlite::Params) -> Result<Vec<MonitorEvent>> {
    let mut stmt = conn.prepare(&format!(
        "SELECT seq, job_id, timestamp, description, remote_host, running_time, owner, status \
         FROM job_events WHERE {clause}"
    ))?;
    let rows = stmt.query_map(args, |r| {
        Ok((
            r.get::<_, i64>(0)?,
            r.get::<_, i64>(1)?,
            r.get::<_, String>(2)?,
            r.get::<_, String>(3)?,
            r.get::<_, String>(4)?,
            r.get::<_, f64>(5)?,
            r.get::<_, String>(6)?,
            r.get::<_, String>(7)?,
        ))
    })?;
    rows.map(|r| {
        let (seq, job_id, ts, description, remote_host, running_time, owner, status) = r?;
        Ok(MonitorEvent {
            seq,
            job_id,
            timestamp: parse_ts(&ts).unwrap_or_default(),
            description,
            remote_host,
            running_time,
            owner,
            status: status.parse()?,
        })
    })
    .collect()
}

struct Ring {
    events: VecDeque<MonitorEvent>,
    last_seq: i64,
}

pub struct EventBus {
    ring: Mutex<Ring>,
    cond: Condvar,
    watch: tokio::sync::watch::Sender<i64>,
    /// Serializes commit+publish so events reach the ring in seq order.
    writer: Mutex<()>,
    store: Option<Arc<Store>>,
    capacity: usize,
}

impl std::fmt::Debug for EventBus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EventBus").field("last_seq", &self.last_seq()).finish()
    }
}

impl EventBus {
    /// A bus backed by the store; the ring is primed with the most recent
    /// persisted events.
    pub fn new(store: Arc<Store>) -> Result<Self> {
        Self::with_capacity(Some(store), RING_CAPACITY)
    }

    pub fn with_capacity(store: Option<Arc<Store>>, capacity: usize) -> Result<Self> {
        let mut events = VecDeque::new();
        let mut last_seq = 0;
        if let Some(s) = &store {
            last_seq = s.read(|c| Ok(c.query_row("SELECT COALESCE(MAX(seq), 0) FROM job_events", [], |r| r.get(0))?))?;
            let start = (last_seq - capacity as i64).max(0);
            events.extend(s.read(|c| events_after(c, start, capacity))?);
        }
        let (watch, _) = tokio::sync::watch::channel(last_seq);
        Ok(EventBus {
            ring: Mutex::new(Ring { events, last_seq }),
            cond: Condvar::new(),
            watch,
            writer: Mutex::new(()),
            store,
            capacity: capacity.max(1),
        })
    }

    fn ring(&self) -> MutexGuard<'_, Ring> {
        self.ring.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn last_seq(&self) -> i64 {
        self.ring().last_seq
    }

    /// Runs `f` in a write transaction; the events it returns are persisted
    /// in the same transaction and published after commit.
    pub fn commit<T>(
        &self,
        store: &Store,
        f: impl FnOnce(&Transaction<'_>) -> Result<(T, Vec<MonitorEvent>)>,
    ) -> Result<T> {
        let _w = self.writer.lock().unwrap_or_else(|p| p.into_inner());
        let (out, events) = store.write(|tx| {
            let (out, mut events) = f(tx)?;
            for ev in &mut events {
                insert_event(tx, ev)?;
            }
            Ok((out, events))
        })?;
        self.publish(events);
        Ok(out)
    }

    /// Appends already-sequenced events. Sequence numbers must increase.
    pub fn publish(&self, events: Vec<MonitorEvent>) {
        if events.is_empty() {
            return;
        }
        let last = {
            let mut ring = self.ring();
            for ev in events {
                debug_assert!(ev.seq > ring.last_seq, "events published out of order");
                ring.last_seq = ev.seq;
                ring.events.push_back(ev);
                while ring.events.len() > self.capacity {
                    ring.events.pop_front();
                }
            }
            ring.last_seq
        };
        self.cond.notify_all();
        self.watch.send_replace(last);
    }

    pub fn subscribe(self: &Arc<Self>, filter: EventFilter, from_seq: i64) -> Subscription {
        Subscription {
            bus: Arc::clone(self),
            filter,
            cursor: from_seq.max(0),
            pending: VecDeque::new(),
            watch: self.watch.subscribe(),
        }
    }

    /// Events retained in memory with `seq > from_seq`.
    pub fn retained_after(&self, from_seq: i64) -> Vec<MonitorEvent> {
        self.ring().events.iter().filter(|e| e.seq > from_seq).cloned().collect()
    }
}

/// A cursor over the event stream. Delivers every matching event with
/// `seq > from_seq` exactly once and in order.
pub struct Subscription {
    bus: Arc<EventBus>,
    filter: EventFilter,
    cursor: i64,
    pending: VecDeque<MonitorEvent>,
    watch: tokio::sync::watch::Receiver<i64>,
}

impl Subscription {
    pub fn cursor(&self) -> i64 {
        self.cursor
    }

    /// Next matching event if one is available now.
    pub fn try_next(&mut self) -> Result<Option<MonitorEvent>> {
        loop {
            if let Some(ev) = self.pending.pop_front() {
                if self.filter.matches(&ev) {
                    return Ok(Some(ev));
                }
                continue;
            }
            if !self.refill()? {
                return Ok(None);
            }
        }
    }

    fn refill(&mut self) -> Result<bool> {
        let lagged = {
            let ring = self.bus.ring();
            if ring.last_seq <= self.cursor {
                return Ok(false);
            }
            let first = ring.events.front().map(|e| e.seq).unwrap_or(ring.last_seq + 1);
            if first <= self.cursor + 1 {
                self.pending.extend(ring.events.iter().filter(|e| e.seq > self.cursor).cloned());
                false
            } else {
                true
            }
        };
        if lagged {
            match &self.bus.store {
                Some(store) => {
                    let batch = store.read(|c| events_after(c, self.cursor, BACKFILL_BATCH))?;
                    self.pending.extend(batch);
                }
                None => {
                    // Without a store the evicted range is unrecoverable;
                    // resume from the oldest retained event.
                    let ring = self.bus.ring();
                    self.pending.extend(ring.events.iter().cloned());
                }
            }
        }
        if let Some(last) = self.pending.back() {
            self.cursor = last.seq;
        }
        Ok(!self.pending.is_empty())
    }

    /// Blocks up to `timeout` for the next matching event.
    pub fn next_timeout(&mut self, timeout: Duration) -> Result<Option<MonitorEvent>> {
        let deadline = Instant::now() + timeout;
        loop {
            if let Some(ev) = self.try_next()? {
                return Ok(Some(ev));
            }
            let now = Instant::now();
            if now >= deadline {
                return Ok(None);
            }
            let ring = self.bus.ring();
            if ring.last_seq <= self.cursor {
                let _ = self
                    .bus
                    .cond
                    .wait_timeout(ring, deadline - now)
                    .unwrap_or_else(|p| p.into_inner());
            }
        }
    }

    /// Waits for the next matching event.
    pub async fn next(&mut self) -> Result<MonitorEvent> {
        loop {
            self.watch.borrow_and_update();
            if let Some(ev) = self.try_next()? {
                return Ok(ev);
            }
            if self.watch.changed().await.is_err() {
                // Bus dropped: nothing more will arrive.
                std::future::pending::<()>().await;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(seq: i64, owner: &str) -> MonitorEvent {
        MonitorEvent {
            seq,
            job_id: seq,
            timestamp: Utc::now(),
            description: String::new(),
            remote_host: "-".into(),
            running_time: 0.0,
            owner: owner.into(),
            status: JobState::Queued,
        }
    }

    #[test]
    fn backlog_then_live() {
        let bus = Arc::new(EventBus::with_capacity(None, 100).unwrap());
        bus.publish((1..=5).map(|i| ev(i, "alice")).collect());
        let mut sub = bus.subscribe(EventFilter::default(), 0);
        let got: Vec<i64> = std::iter::from_fn(|| sub.try_next().unwrap()).map(|e| e.seq).collect();
        assert_eq!(got, [1, 2, 3, 4, 5]);
        bus.publish(vec![ev(6, "bob")]);
        assert_eq!(sub.try_next().unwrap().unwrap().seq, 6);
        assert!(sub.try_next().unwrap().is_none());
    }

    #[test]
    fn owner_filter() {
        let bus = Arc::new(EventBus::with_capacity(None, 100).unwrap());
        bus.publish(vec![ev(1, "alice"), ev(2, "bob"), ev(3, "alice")]);
        let mut sub = bus.subscribe(
            EventFilter {
                owner: Some("alice".into()),
                ..Default::default()
            },
            0,
        );
        let got: Vec<i64> = std::iter::from_fn(|| sub.try_next().unwrap()).map(|e| e.seq).collect();
        assert_eq!(got, [1, 3]);
        assert_eq!(sub.cursor(), 3);
    }

    #[test]
    fn blocking_wait_wakes_on_publish() {
        let bus = Arc::new(EventBus::with_capacity(None, 100).unwrap());
        let mut sub = bus.subscribe(EventFilter::default(), 0);
        let b = Arc::clone(&bus);
        let h = std::thread::spawn(move || {
            std::thread::sleep(Duration::from_millis(50));
            b.publish(vec![ev(1, "a")]);
        });
        let got = sub.next_timeout(Duration::from_secs(5)).unwrap();
        assert_eq!(got.map(|e| e.seq), Some(1));
        h.join().unwrap();
    }

    #[test]
    fn lagging_subscriber_backfills_from_store() {
        let store = Arc::new(Store::in_memory().unwrap());
        store
            .write(|tx| {
                tx.execute(
                    "INSERT INTO jobs(id, kind, owner, owner_login, description, submission_text, requirements_expr, \
                     argv, env, workdir, state, queued_at) VALUES (1, 'PROCESSING', 1, 'a', '', '', '', '[]', '{}', '', 'QUEUED', '')",
                    [],
                )?;
                Ok(())
            })
            .unwrap();
        let bus = Arc::new(EventBus::with_capacity(Some(Arc::clone(&store)), 4).unwrap());
        let mut sub = bus.subscribe(EventFilter::default(), 0);
        for _ in 0..20 {
            bus.commit(&store, |_| {
                let mut e = ev(0, "a");
                e.job_id = 1;
                Ok(((), vec![e]))
            })
            .unwrap();
        }
        let got: Vec<i64> = std::iter::from_fn(|| sub.try_next().unwrap()).map(|e| e.seq).collect();
        assert_eq!(got, (1..=20).collect::<Vec<_>>());
        // A fresh bus over the same store resumes the sequence.
        let again = EventBus::with_capacity(Some(store), 4).unwrap();
        assert_eq!(again.last_seq(), 20);
        assert_eq!(again.retained_after(0).len(), 4);
    }
}
