//! Acceptance suite. Prints one PASS/FAIL line per criterion, then fails
//! if any criterion failed.
//!
//!     cargo test -p youpi --test acceptance -- --nocapture

mod support;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::mpsc;
use std::time::{Duration, Instant};

use rand::distributions::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use youpi::client::Client;
use youpi_core::authz::{check_access, Action, Ownership, PermissionMode, Principal};
use youpi_core::catalog::Query;
use youpi_core::cluster::{
    evaluate_policy, generate_submission_file, parse_submission_file, render_requirements, Criterion, MatchOp,
    NodeSpec, Requirements, SubmissionInputs,
};
use youpi_core::fixtures::write_megacam_set;
use youpi_core::ingest::{IngestRequest, MemorySink};
use youpi_core::instrument::Instrument;
use youpi_core::service::{NewUser, ServiceConfig};
use youpi_core::Youpi;

use support::{str_path, Options, Server};

type Outcome = Result<String, String>;
type Check = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn run(n: usize, name: &str, f: fn() -> Outcome) -> bool {
    let t = Instant::now();
    let r = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Err(format!("panicked: {msg}"))
    });
    let secs = t.elapsed().as_secs_f64();
    // Straight to the stream so the lines survive libtest output capture.
    let line = match &r {
        Ok(note) => format!("PASS [{n}] {name} ({note}; {secs:.1}s)\n"),
        Err(why) => format!("FAIL [{n}] {name}: {why} ({secs:.1}s)\n"),
    };
    let _ = std::io::stderr().write_all(line.as_bytes());
    r.is_ok()
}

#[test]
fn acceptance() {
    let criteria: [Check; 8] = [
        ("ingest 1450-image fixture and save selection", c1_fixture_ingest),
        ("re-ingestion skips every duplicate", c2_reingest),
        ("permission truth table, 384 cases", c3_permissions),
        ("policy evaluation, 1000 random cases", c4_policies),
        ("submission files: 500 round trips and 3 goldens", c5_submission),
        ("scheduler: 10 one-second jobs on 3x2 slots", c6_scheduler),
        ("end to end through the CLI", c7_cli_end_to_end),
        ("two event subscribers see the same gap-free stream", c8_subscribers),
    ];
    let mut failed = Vec::new();
    for (i, (name, f)) in criteria.into_iter().enumerate() {
        if !run(i + 1, name, f) {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

// ------------------------------------------------------------- 1 and 2

struct Local {
    dir: tempfile::TempDir,
    svc: Youpi,
    sink: std::sync::Arc<MemorySink>,
    user: Principal,
}

fn local() -> Local {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ServiceConfig::new(dir.path().join("jobs"));
    cfg.db_path = Some(dir.path().join("youpi.db"));
    let sink = std::sync::Arc::new(MemorySink::default());
    let svc = Youpi::open_with(cfg, std::sync::Arc::new(youpi_core::clock::SystemClock), sink.clone()).unwrap();
    svc.create_user_unchecked(&NewUser {
        login: "alice".into(),
        password: "alice-pw".into(),
        groups: vec!["astro".into()],
        is_admin: false,
    })
    .unwrap();
    let user = svc.principal_for_login("alice").unwrap();
    Local { dir, svc, sink, user }
}

fn ingest(l: &Local) -> youpi_core::Result<youpi_core::ingest::IngestionReport> {
    l.svc.ingest(
        &l.user,
        &IngestRequest {
            paths: vec![l.dir.path().join("w3")],
            instrument: Instrument::Megacam,
            recursive: true,
        },
    )
}

fn seeded_1450() -> (Local, Duration) {
    let l = local();
    write_megacam_set(&l.dir.path().join("w3"), 1_000_000, 1450).unwrap();
    let t = Instant::now();
    let r = ingest(&l).unwrap();
    assert_eq!((r.ingested, r.skipped_duplicates, r.failed.len()), (1450, 0, 0));
    let ids: Vec<i64> = l.svc.query_images(&l.user, &Query::default()).unwrap().iter().map(|i| i.image_id).collect();
    l.svc.save_selection(&l.user, "CFHTLS-T0006-W3_Scamp", &ids).unwrap();
    (l, t.elapsed())
}

fn c1_fixture_ingest() -> Outcome {
    let (l, took) = seeded_1450();
    ensure!(took < Duration::from_secs(120), "took {took:?}");
    let sels = l.svc.list_selections(&l.user).unwrap();
    let sel = sels.iter().find(|s| s.name == "CFHTLS-T0006-W3_Scamp").ok_or("selection missing")?;
    let members = l.svc.get_selection(&l.user, sel.selection_id).unwrap();
    ensure!(members.image_ids.len() == 1450, "selection has {}", members.image_ids.len());
    let lines = l.sink.lines();
    ensure!(lines.len() == 1 && lines[0].contains("ingested=1450"), "notification {lines:?}");
    Ok(format!("1450 images in {:.1}s", took.as_secs_f64()))
}

fn c2_reingest() -> Outcome {
    let (l, _) = seeded_1450();
    let r = ingest(&l).unwrap();
    ensure!(
        (r.ingested, r.skipped_duplicates, r.failed.len()) == (0, 1450, 0),
        "ingested={} skipped={} failed={}",
        r.ingested,
        r.skipped_duplicates,
        r.failed.len()
    );
    let n = l.svc.query_images(&l.user, &Query::default()).unwrap().len();
    ensure!(n == 1450, "catalog has {n} images");
    Ok("skipped=1450".into())
}

// ------------------------------------------------------------------- 3

fn c3_permissions() -> Outcome {
    let user = |id: i64, group: i64| Principal {
        user_id: id,
        login: format!("u{id}"),
        primary_group: group,
        groups: BTreeSet::from([group]),
        is_admin: false,
    };
    let who = [user(1, 10), user(2, 10), user(3, 11)];
    let mut cases = 0;
    for bits in 0u8..64 {
        let mode = PermissionMode::from_bits(bits);
        let text = mode.to_string();
        let obj = Ownership { owner: 1, group: 10, mode };
        for (rel, p) in who.iter().enumerate() {
            let seg = text.split('|').nth(rel).unwrap().as_bytes();
            for (idx, action) in [(0, Action::Read), (1, Action::Write)] {
                let want = seg[idx] != b'-';
                ensure!(check_access(p, &obj, action) == want, "mode {text} relation {rel} {action:?}");
                cases += 1;
            }
        }
    }
    ensure!(cases == 384, "{cases} cases");
    Ok("384 cases".into())
}

// ------------------------------------------------------------------- 4

fn c4_policies() -> Outcome {
    const ATTRS: [&str; 4] = ["Name", "Memory", "OpSys", "Site"];
    const PIECES: [&str; 12] = ["node0", "[12]", "^", "$", "\\d", "8192", "LINUX", ".*", "(8192|16384)", "1", "lyon", "0[3-5]"];
    let mut rng = ChaCha8Rng::seed_from_u64(0xacc4);
    for case in 0..1000 {
        let mut nums: Vec<u32> = (1..=12).collect();
        nums.shuffle(&mut rng);
        nums.truncate(rng.gen_range(0..=6));
        let nodes: Vec<NodeSpec> = nums
            .iter()
            .map(|i| {
                let mut n = NodeSpec::new(&format!("node{i:02}"), 2)
                    .with_attr("Memory", ["4096", "8192", "16384"].choose(&mut rng).unwrap())
                    .with_attr("OpSys", ["LINUX", "OSX"].choose(&mut rng).unwrap());
                if rng.gen_bool(0.5) {
                    n = n.with_attr("Site", ["lyon", "paris"].choose(&mut rng).unwrap());
                }
                n
            })
            .collect();
        let criteria: Vec<Criterion> = (0..rng.gen_range(0..=3))
            .map(|_| {
                let pat: String = (0..rng.gen_range(1..=3)).map(|_| *PIECES.choose(&mut rng).unwrap()).collect();
                let op = if rng.gen_bool(0.7) { MatchOp::Match } else { MatchOp::Nomatch };
                Criterion::new(ATTRS.choose(&mut rng).unwrap(), op, &pat)
            })
            .collect();
        let mut want: Vec<String> = nodes
            .iter()
            .filter(|n| {
                criteria.iter().all(|c| {
                    let hit = n
                        .attributes
                        .get(&c.attribute)
                        .is_some_and(|v| regex_lite::Regex::new(&c.pattern).unwrap().is_match(v));
                    hit == (c.op == MatchOp::Match)
                })
            })
            .map(|n| n.name.clone())
            .collect();
        want.sort();
        let got = evaluate_policy(&criteria, &nodes).map_err(|e| format!("case {case}: {e}"))?;
        ensure!(got == want, "case {case}: got {got:?} want {want:?}");
        if !got.is_empty() {
            let req = Requirements::parse(&render_requirements(&got).unwrap()).unwrap();
            let mut sel: Vec<String> = nodes.iter().filter(|n| req.matches(&n.attributes)).map(|n| n.name.clone()).collect();
            sel.sort();
            ensure!(sel == got, "case {case}: requirements select {sel:?}");
        }
    }
    Ok("1000 cases".into())
}

// ------------------------------------------------------------------- 5

fn c5_submission() -> Outcome {
    let golden_dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/golden");
    let goldens = [
        (
            "minimal.sub",
            SubmissionInputs {
                job_id: 1,
                argv: vec!["/opt/youpi/bin/youpi-mock-qualityfits".into()],
                env: BTreeMap::new(),
                requirements: String::new(),
                workdir: "/var/lib/youpi/jobs/job.1".into(),
            },
        ),
        (
            "scamp.sub",
            SubmissionInputs {
                job_id: 42,
                argv: [
                    "/opt/youpi/bin/youpi-mock-scamp",
                    "-c",
                    "/var/lib/youpi/jobs/job.42/config.conf",
                    "-o",
                    "/data/out/scamp",
                    "@/var/lib/youpi/jobs/job.42/images.list",
                ]
                .map(String::from)
                .to_vec(),
                env: BTreeMap::from([
                    ("YOUPI_JOB_ID".into(), "42".into()),
                    ("YOUPI_AUX_AHEAD_DIR".into(), "/data/ahead".into()),
                ]),
                requirements: r#"(Name == "node01") || (Name == "node02")"#.into(),
                workdir: "/var/lib/youpi/jobs/job.42".into(),
            },
        ),
        (
            "swarp.sub",
            SubmissionInputs {
                job_id: 1450,
                argv: ["/usr/local/bin/swarp", "-c", "swarp.conf", "-o", "/tmp/out", "@images.list", "-VERBOSE_TYPE", "QUIET"]
                    .map(String::from)
                    .to_vec(),
                env: BTreeMap::new(),
                requirements: r#"(Name == "node03")"#.into(),
                workdir: "/tmp/youpi/job.1450".into(),
            },
        ),
    ];
    for (name, x) in &goldens {
        let want = std::fs::read_to_string(golden_dir.join(name)).map_err(|e| format!("{name}: {e}"))?;
        ensure!(generate_submission_file(x).unwrap() == want, "{name} differs");
    }

    let printable: Vec<char> = (' '..='~').chain(['é', '→']).collect();
    let value_chars: Vec<char> = printable.iter().copied().filter(|c| *c != ';').collect();
    let key_chars: Vec<char> = ('A'..='Z').chain(['_']).collect();
    let text = |rng: &mut ChaCha8Rng, alphabet: &[char], max: usize| -> String {
        let pick = Uniform::from(0..alphabet.len());
        (0..rng.gen_range(0..=max)).map(|_| alphabet[pick.sample(rng)]).collect()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0xacc5);
    for case in 0..500 {
        let mut argv = vec![format!("/{}", text(&mut rng, &printable, 24))];
        argv.extend((0..rng.gen_range(0..5)).map(|_| text(&mut rng, &printable, 16)));
        let env: BTreeMap<String, String> = (0..rng.gen_range(0..4))
            .map(|_| (format!("K{}", text(&mut rng, &key_chars, 8)), text(&mut rng, &value_chars, 20)))
            .collect();
        let x = SubmissionInputs {
            job_id: rng.gen_range(1..100_000),
            argv,
            env,
            requirements: if rng.gen_bool(0.5) { text(&mut rng, &printable, 40) } else { String::new() },
            workdir: text(&mut rng, &printable, 30),
        };
        let mut want = BTreeMap::from([
            ("universe".to_string(), "vanilla".to_string()),
            ("executable".to_string(), x.argv[0].clone()),
            ("initialdir".to_string(), x.workdir.clone()),
            ("output".to_string(), format!("job.{}.out", x.job_id)),
            ("error".to_string(), format!("job.{}.err", x.job_id)),
            ("log".to_string(), format!("job.{}.log", x.job_id)),
        ]);
        if x.argv.len() > 1 {
            want.insert("arguments".into(), x.argv[1..].join(" "));
        }
        if !x.env.is_empty() {
            want.insert(
                "environment".into(),
                x.env.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(";"),
            );
        }
        if !x.requirements.is_empty() {
            want.insert("requirements".into(), x.requirements.clone());
        }
        let parsed = parse_submission_file(&generate_submission_file(&x).unwrap()).map_err(|e| format!("case {case}: {e}"))?;
        ensure!(parsed.job_id == x.job_id, "case {case}: job id");
        ensure!(parsed.to_map() == want, "case {case}: {:?}", parsed.to_map());
    }
    Ok("500 round trips, 3 goldens".into())
}

// ---------------------------------------------------------- live server

struct Live {
    srv: Server,
    alice: String,
}

fn live(opts: Options) -> Live {
    let srv = Server::start_with(opts);
    let admin = srv.admin_token();
    let alice = srv.user(&admin, "alice", &["astro"]);
    Live { srv, alice }
}

fn v(s: String) -> Value {
    serde_json::from_str(&s).unwrap()
}

/// Ingests two images and returns a qualityfits cart item.
fn qualityfits_item(l: &Live, config: &str) -> i64 {
    let c = l.srv.client(Some(&l.alice));
    write_megacam_set(&l.srv.path("data"), 7000, 2).unwrap();
    c.post("/api/ingest", &json!({ "paths": [l.srv.path("data")], "instrument": "MEGACAM", "recursive": true }))
        .unwrap();
    let ids: Vec<i64> = v(c.get("/api/images", &[]).unwrap())
        .as_array()
        .unwrap()
        .iter()
        .map(|i| i["image_id"].as_i64().unwrap())
        .collect();
    let cfg = v(c.post("/api/configs", &json!({ "name": "q", "plugin_id": "qualityfits", "content": config })).unwrap());
    let item = v(c
        .post(
            "/api/cart",
            &json!({ "plugin_id": "qualityfits", "image_source": { "images": ids }, "config_id": cfg["config_id"], "aux_paths": {} }),
        )
        .unwrap());
    item["item_id"].as_i64().unwrap()
}

/// Reads events on a background thread until `stop` says so.
fn collect_events(client: Client, stop: impl Fn(&[Value]) -> bool + Send + 'static) -> mpsc::Receiver<Vec<Value>> {
    let (tx, rx) = mpsc::channel();
    std::thread::spawn(move || {
        let mut stream = client.events(&[("from_seq", "0".into())]).unwrap();
        let mut seen = Vec::new();
        while !stop(&seen) {
            match stream.next_frame() {
                Ok(Some((_, data))) => seen.push(serde_json::from_str(&data).unwrap()),
                _ => break,
            }
        }
        let _ = tx.send(seen);
    });
    rx
}

fn c6_scheduler() -> Outcome {
    let l = live(Options::default());
    let item = qualityfits_item(&l, "MOCK_SLEEP_MS 1000\n");
    let c = l.srv.client(Some(&l.alice));
    let t = Instant::now();
    let jobs: Vec<i64> = (0..10)
        .map(|_| v(c.post("/api/jobs", &json!({ "cart_item_id": item })).unwrap())["job_id"].as_i64().unwrap())
        .collect();
    let watched: BTreeSet<i64> = jobs.iter().copied().collect();
    let rx = collect_events(l.srv.client(Some(&l.alice)), move |seen| {
        seen.iter().filter(|e| watched.contains(&e["job_id"].as_i64().unwrap()) && e["status"] != "QUEUED" && e["status"] != "RUNNING").count() == 10
    });
    let events = rx.recv_timeout(Duration::from_secs(60)).map_err(|_| "timed out waiting for jobs".to_string())?;
    let took = t.elapsed();

    let mine: Vec<&Value> = events.iter().filter(|e| jobs.contains(&e["job_id"].as_i64().unwrap())).collect();
    let completed = mine.iter().filter(|e| e["status"] == "COMPLETED").count();
    ensure!(completed == 10, "{completed} of 10 completed");
    ensure!(took < Duration::from_secs(30), "took {took:?}");

    let started: Vec<i64> = mine.iter().filter(|e| e["status"] == "RUNNING").map(|e| e["job_id"].as_i64().unwrap()).collect();
    ensure!(started == jobs, "start order {started:?} differs from submission order {jobs:?}");

    let mut running: HashMap<String, usize> = HashMap::new();
    let mut host_of: HashMap<i64, String> = HashMap::new();
    for e in &mine {
        let job = e["job_id"].as_i64().unwrap();
        match e["status"].as_str().unwrap() {
            "RUNNING" => {
                let h = e["remote_host"].as_str().unwrap().to_string();
                ensure!(["node01", "node02", "node03"].contains(&h.as_str()), "unknown host {h}");
                let n = running.entry(h.clone()).or_default();
                *n += 1;
                ensure!(*n <= 2, "{h} ran {n} jobs at once");
                host_of.insert(job, h);
            }
            "COMPLETED" | "FAILED" | "CANCELLED" => {
                if let Some(h) = host_of.get(&job) {
                    *running.get_mut(h).unwrap() -= 1;
                }
            }
            _ => {}
        }
    }
    Ok(format!("{:.1}s wall", took.as_secs_f64()))
}

fn c7_cli_end_to_end() -> Outcome {
    let t = Instant::now();
    let l = live(Options {
        nodes: Some("node01 2 Site=paris\nnode02 2 Site=lyon\n".into()),
        tick_ms: 50,
    });
    let tok = Some(l.alice.as_str());
    let cli = |args: &[&str]| -> Result<Value, String> {
        let out = l.srv.cli(tok, args);
        if out.code != 0 {
            return Err(format!("youpi {} exited {}: {}", args.join(" "), out.code, out.stderr.trim()));
        }
        Ok(serde_json::from_str(&out.stdout).unwrap_or(Value::Null))
    };
    let data = l.srv.path("night");
    write_megacam_set(&data, 42, 5).unwrap();
    let ahead = l.srv.path("ahead");
    std::fs::create_dir_all(&ahead).unwrap();

    let rep = cli(&["--json", "ingest", "-r", str_path(&data)])?;
    ensure!(rep["ingested"] == 5, "ingest report {rep}");
    let sel = cli(&["--json", "selections", "save", "night-1"])?;
    ensure!(sel["image_ids"].as_array().map(Vec::len) == Some(5), "selection {sel}");
    cli(&["tags", "apply", "astrometry-ok", "--selection", "night-1"])?;
    let tagged = cli(&["--json", "images", "--tag", "astrometry-ok"])?;
    ensure!(tagged.as_array().map(Vec::len) == Some(5), "tagged {tagged}");

    let path = cli(&["--json", "paths", "add", str_path(&ahead)])?;
    let cfg = cli(&["--json", "configs", "add", "scamp-e2e", "--plugin", "scamp", "--content", "MOCK_SLEEP_MS 200\n"])?;
    let item = cli(&[
        "--json",
        "cart",
        "add",
        "--plugin",
        "scamp",
        "--config",
        &cfg["config_id"].to_string(),
        "--selection",
        &sel["selection_id"].to_string(),
        "--aux",
        &format!("ahead_dir={}", path["path_id"]),
    ])?;
    ensure!(item["input_count"] == 5, "cart item {item}");
    cli(&["policies", "add", "lyon-only", "--match", "Site=^lyon$"])?;
    let job = cli(&["--json", "submit", "--cart-item", &item["item_id"].to_string(), "--policy", "lyon-only"])?;
    let job_id = job["job_id"].to_string();

    let (tx, rx) = mpsc::channel();
    let (url, token) = (l.srv.url.clone(), l.alice.clone());
    let jid = job_id.clone();
    std::thread::spawn(move || {
        let _ = tx.send(support::cli(&url, Some(&token), &["watch", "--job", &jid, "--max-events", "3"]));
    });
    let out = rx.recv_timeout(Duration::from_secs(50)).map_err(|_| "watch did not see 3 events".to_string())?;
    ensure!(out.code == 0, "watch exited {}: {}", out.code, out.stderr);
    let fields: Vec<Vec<&str>> = out.stdout.lines().map(|l| l.split('\t').collect()).collect();
    let states: Vec<&str> = fields.iter().map(|f| f[2]).collect();
    ensure!(states == ["QUEUED", "RUNNING", "COMPLETED"], "states {states:?}");
    ensure!(fields[1][3] == "node02" && fields[2][3] == "node02", "ran on {:?}", fields[1][3]);

    let shown = cli(&["--json", "jobs", "show", &job_id])?;
    ensure!(
        shown["env"]["YOUPI_AUX_AHEAD_DIR"].as_str() == ahead.to_str(),
        "aux dir not passed: {}",
        shown["env"]
    );
    let took = t.elapsed();
    ensure!(took < Duration::from_secs(60), "took {took:?}");
    Ok(format!("job {job_id} on node02"))
}

fn c8_subscribers() -> Outcome {
    let l = live(Options::default());
    let item = qualityfits_item(&l, "MOCK_SLEEP_MS 0\n");
    let total = 3 + 3 * 10;
    let stop = move |seen: &[Value]| seen.len() >= total;
    let a = collect_events(l.srv.client(Some(&l.alice)), stop);
    let b = collect_events(l.srv.client(Some(&l.alice)), stop);
    let c = l.srv.client(Some(&l.alice));
    for _ in 0..10 {
        c.post("/api/jobs", &json!({ "cart_item_id": item })).unwrap();
    }
    let wait = |rx: mpsc::Receiver<Vec<Value>>| rx.recv_timeout(Duration::from_secs(60)).map_err(|_| "subscriber timed out".to_string());
    let (ea, eb) = (wait(a)?, wait(b)?);
    let seqs = |e: &[Value]| e.iter().map(|x| x["seq"].as_i64().unwrap()).collect::<Vec<_>>();
    ensure!(ea == eb, "streams differ");
    let want: Vec<i64> = (1..=total as i64).collect();
    ensure!(seqs(&ea) == want, "sequence {:?}", seqs(&ea));
    Ok(format!("{total} events each"))
}
