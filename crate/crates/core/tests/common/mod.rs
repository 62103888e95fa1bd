#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use chrono::{TimeZone, Utc};
use tempfile::TempDir;

use youpi_core::authz::Principal;
use youpi_core::clock::ManualClock;
use youpi_core::cluster::NodeSpec;
use youpi_core::ingest::{IngestRequest, MemorySink};
use youpi_core::instrument::Instrument;
use youpi_core::service::{NewUser, ServiceConfig};
use youpi_core::Youpi;

pub struct Env {
    pub dir: TempDir,
    pub svc: Youpi,
    pub clock: Arc<ManualClock>,
    pub sink: Arc<MemorySink>,
    pub admin: Principal,
    /// alice and bob share the `astro` group; carol is an outsider.
    pub alice: Principal,
    pub bob: Principal,
    pub carol: Principal,
}

pub fn nodes(n: usize, slots: u32) -> Vec<NodeSpec> {
    (1..=n).map(|i| NodeSpec::new(&format!("node{i:02}"), slots)).collect()
}

impl Env {
    pub fn new() -> Env {
        Env::with_inventory(nodes(3, 2))
    }

    pub fn with_inventory(inventory: Vec<NodeSpec>) -> Env {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ServiceConfig::new(dir.path().join("jobs"));
        cfg.db_path = Some(dir.path().join("youpi.db"));
        cfg.inventory = inventory;
        let clock = Arc::new(ManualClock::new(Utc.with_ymd_and_hms(2026, 3, 1, 12, 0, 0).unwrap()));
        let sink = Arc::new(MemorySink::default());
        let svc = Youpi::open_with(cfg, clock.clone(), sink.clone()).unwrap();
        let mk = |login: &str, groups: &[&str], is_admin: bool| {
            svc.create_user_unchecked(&NewUser {
                login: login.into(),
                password: format!("{login}-pw"),
                groups: groups.iter().map(|g| g.to_string()).collect(),
                is_admin,
            })
            .unwrap();
            svc.principal_for_login(login).unwrap()
        };
        let admin = mk("admin", &[], true);
        let alice = mk("alice", &["astro"], false);
        let bob = mk("bob", &["astro"], false);
        let carol = mk("carol", &[], false);
        Env {
            dir,
            svc,
            clock,
            sink,
            admin,
            alice,
            bob,
            carol,
        }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    pub fn ingest_dir(&self, user: &Principal, rel: &str) -> youpi_core::Result<youpi_core::ingest::IngestionReport> {
        self.svc.ingest(
            user,
            &IngestRequest {
                paths: vec![self.path(rel)],
                instrument: Instrument::Megacam,
                recursive: true,
            },
        )
    }
}
