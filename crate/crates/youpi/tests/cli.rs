mod support;

use std::time::Duration;

use serde_json::Value;

use support::{str_path, wait_until, Server};
use youpi_core::fixtures::write_megacam_set;

fn seeded(n: usize) -> (Server, String) {
    let srv = Server::start();
    let admin = srv.admin_token();
    let alice = srv.user(&admin, "alice", &["astro"]);
    write_megacam_set(&srv.path("data"), 500, n).unwrap();
    srv.cli(Some(&alice), &["ingest", "-r", str_path(&srv.path("data"))]).ok();
    (srv, alice)
}

fn qualityfits_item(srv: &Server, token: &str) -> String {
    let cfg = srv
        .cli(Some(token), &["--json", "configs", "add", "q", "--plugin", "qualityfits", "--content", "MOCK_SLEEP_MS 0\n"])
        .ok()
        .json();
    let ids: Vec<String> = srv
        .cli(Some(token), &["--json", "images"])
        .ok()
        .json()
        .as_array()
        .unwrap()
        .iter()
        .map(|i| i["image_id"].to_string())
        .collect();
    let item = srv
        .cli(
            Some(token),
            &["--json", "cart", "add", "--plugin", "qualityfits", "--config", &cfg["config_id"].to_string(), "--ids", &ids.join(",")],
        )
        .ok()
        .json();
    item["item_id"].to_string()
}

#[test]
fn exit_codes() {
    let srv = Server::start();
    let admin = srv.admin_token();

    let out = srv.cli(None, &["login", "admin", "--password", support::ADMIN_PASSWORD]).ok();
    assert!(!out.stdout.trim().is_empty());

    let bad = srv.cli(None, &["login", "admin", "--password", "nope"]);
    assert_eq!(bad.code, 1);
    assert!(bad.stderr.contains("INVALID_CREDENTIALS"), "{bad:?}");

    let unknown = srv.cli(Some(&admin), &["jobs", "show", "4242"]);
    assert_eq!(unknown.code, 1);
    assert!(unknown.stderr.contains("UNKNOWN_JOB"), "{unknown:?}");

    let as_json = srv.cli(Some(&admin), &["--json", "jobs", "show", "4242"]);
    assert_eq!(as_json.code, 1);
    assert!(as_json.stderr.contains("\"code\":\"UNKNOWN_JOB\""), "{as_json:?}");

    assert_eq!(srv.cli(Some(&admin), &["frobnicate"]).code, 2);
    assert_eq!(srv.cli(Some(&admin), &["cart", "add", "--plugin", "scamp"]).code, 2);
    assert_eq!(srv.cli(Some(&admin), &["cart", "add", "--plugin", "scamp", "--config", "1", "--ids", "1", "--aux", "noequals"]).code, 2);

    let down = support::cli("http://127.0.0.1:9", Some(&admin), &["nodes"]);
    assert_eq!(down.code, 1);
    assert!(down.stderr.contains("CONNECTION_ERROR"), "{down:?}");

    let nodes = srv.cli(Some(&admin), &["nodes"]).ok();
    assert_eq!(nodes.stdout.lines().count(), 3);
}

#[test]
fn images_json_is_the_api_body() {
    let (srv, alice) = seeded(12);
    let out = srv.cli(Some(&alice), &["--json", "images", "--run-id", "09AQ05"]).ok();
    let api = srv.client(Some(&alice)).get("/api/images", &[("run_id", "09AQ05".into())]).unwrap();
    assert_eq!(out.stdout.trim_end(), api);
    assert_eq!(out.json().as_array().unwrap().len(), 3);

    let human = srv.cli(Some(&alice), &["images", "--run-id", "09AQ05"]).ok();
    assert_eq!(human.stdout.lines().count(), 3);
}

#[test]
fn submit_with_unmatched_policy_fails() {
    let (srv, alice) = seeded(2);
    let item = qualityfits_item(&srv, &alice);
    srv.cli(Some(&alice), &["policies", "add", "gpu-only", "--match", "Name=^gpu"]).ok();
    let out = srv.cli(Some(&alice), &["submit", "--cart-item", &item, "--policy", "gpu-only"]);
    assert_eq!(out.code, 1, "{out:?}");
    assert!(out.stderr.contains("EMPTY_NODE_SET"), "{out:?}");
    let jobs: Value = srv.cli(Some(&alice), &["--json", "jobs", "list"]).ok().json();
    assert!(jobs.as_array().unwrap().iter().all(|j| j["kind"] != "PROCESSING"));
}

#[test]
fn watch_replays_in_seq_order() {
    let (srv, alice) = seeded(2);
    let item = qualityfits_item(&srv, &alice);
    for _ in 0..7 {
        srv.cli(Some(&alice), &["submit", "--cart-item", &item]).ok();
    }
    let done = wait_until(Duration::from_secs(30), || {
        let jobs: Value = srv.cli(Some(&alice), &["--json", "jobs", "list", "--state", "completed"]).ok().json();
        jobs.as_array().unwrap().len() == 8
    });
    assert!(done, "jobs did not finish");

    let out = srv.cli(Some(&alice), &["watch", "--from", "0", "--max-events", "24"]).ok();
    let lines: Vec<&str> = out.stdout.lines().collect();
    assert!(lines.len() >= 20, "{out:?}");
    let seqs: Vec<i64> = lines.iter().map(|l| l.split('\t').next().unwrap().parse().unwrap()).collect();
    assert_eq!(seqs, (1..=24).collect::<Vec<_>>());
    assert!(lines.iter().all(|l| l.split('\t').count() == 6));

    let tail = srv.cli(Some(&alice), &["watch", "--from", "20", "--max-events", "1", "--state", "COMPLETED"]).ok();
    assert_eq!(tail.stdout.lines().count(), 1);
    assert!(tail.stdout.contains("\tCOMPLETED\t"), "{tail:?}");
}
