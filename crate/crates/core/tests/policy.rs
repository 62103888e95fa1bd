use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use youpi_core::cluster::{evaluate_policy, render_requirements, Criterion, MatchOp, NodeSpec, Requirements};
use youpi_core::Error;

const ATTRS: [&str; 5] = ["Name", "Memory", "OpSys", "Arch", "Site"];

fn pattern(rng: &mut ChaCha8Rng) -> String {
    const PIECES: [&str; 16] = [
        "node0", "[12]", "node", "\\d+", "^", "$", "8192", "16384", "LINUX", "X86", "(8192|16384)", ".*", "1", "0[3-5]",
        "lyon", "[A-Z]+",
    ];
    let n = rng.gen_range(1..=3);
    let mut out = String::new();
    for _ in 0..n {
        out.push_str(PIECES.choose(rng).unwrap());
    }
    out
}

fn inventory(rng: &mut ChaCha8Rng) -> Vec<NodeSpec> {
    let mut numbers: Vec<u32> = (1..=20).collect();
    numbers.shuffle(rng);
    numbers.truncate(rng.gen_range(0..=8));
    numbers
        .into_iter()
        .map(|i| {
            let mut n = NodeSpec::new(&format!("node{i:02}"), rng.gen_range(1..=4))
                .with_attr("Memory", ["4096", "8192", "16384", "32768"].choose(rng).unwrap())
                .with_attr("OpSys", ["LINUX", "WINDOWS", "OSX"].choose(rng).unwrap())
                .with_attr("Arch", ["X86_64", "INTEL", "ARM64"].choose(rng).unwrap());
            if rng.gen_bool(0.5) {
                n = n.with_attr("Site", ["lyon", "paris", "LYON"].choose(rng).unwrap());
            }
            n
        })
        .collect()
}

/// Straight loop over nodes with an independent regex engine.
fn brute_force(criteria: &[Criterion], nodes: &[NodeSpec]) -> Vec<String> {
    let mut out = Vec::new();
    'node: for n in nodes {
        for c in criteria {
            let re = regex_lite::Regex::new(&c.pattern).unwrap();
            let hit = match n.attributes.get(&c.attribute) {
                Some(v) => re.is_match(v),
                None => false,
            };
            let ok = if c.op == MatchOp::Match { hit } else { !hit };
            if !ok {
                continue 'node;
            }
        }
        out.push(n.name.clone());
    }
    out.sort();
    out
}

#[test]
fn thousand_random_policies_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0001);
    let mut nonempty = 0;
    for case in 0..1000 {
        let nodes = inventory(&mut rng);
        let criteria: Vec<Criterion> = (0..rng.gen_range(0..=3))
            .map(|_| {
                let op = if rng.gen_bool(0.7) { MatchOp::Match } else { MatchOp::Nomatch };
                Criterion::new(ATTRS.choose(&mut rng).unwrap(), op, &pattern(&mut rng))
            })
            .collect();
        let got = evaluate_policy(&criteria, &nodes).unwrap();
        let want = brute_force(&criteria, &nodes);
        assert_eq!(got, want, "case {case}: {criteria:?}");
        if !got.is_empty() {
            nonempty += 1;
            // The rendered expression selects exactly the matched nodes.
            let req = Requirements::parse(&render_requirements(&got).unwrap()).unwrap();
            let mut selected: Vec<String> = nodes
                .iter()
                .filter(|n| req.matches(&n.attributes))
                .map(|n| n.name.clone())
                .collect();
            selected.sort();
            assert_eq!(selected, got, "case {case}");
        }
    }
    assert!(nonempty > 100, "generator too strict: {nonempty}");
}

#[test]
fn anchored_name_alternation() {
    let nodes: Vec<NodeSpec> = (1..=4).map(|i| NodeSpec::new(&format!("node{i:02}"), 1)).collect();
    let c = [Criterion::new("Name", MatchOp::Match, "^node0[12]$")];
    assert_eq!(evaluate_policy(&c, &nodes).unwrap(), ["node01", "node02"]);
    assert_eq!(evaluate_policy(&[], &nodes).unwrap().len(), 4);
}

#[test]
fn memory_and_name_exclusion() {
    let nodes = vec![
        NodeSpec::new("node01", 1).with_attr("Memory", "8192"),
        NodeSpec::new("node02", 1).with_attr("Memory", "4096"),
        NodeSpec::new("node03", 1).with_attr("Memory", "16384"),
        NodeSpec::new("node04", 1).with_attr("Memory", "16384"),
    ];
    let c = [
        Criterion::new("Memory", MatchOp::Match, "^(8192|16384)$"),
        Criterion::new("Name", MatchOp::Nomatch, "^node03$"),
    ];
    assert_eq!(evaluate_policy(&c, &nodes).unwrap(), ["node01", "node04"]);
    assert_eq!(evaluate_policy(&c, &nodes).unwrap(), brute_force(&c, &nodes));
}

#[test]
fn rendering_contract() {
    assert_eq!(render_requirements(&["node01".into()]).unwrap(), r#"(Name == "node01")"#);
    assert_eq!(
        render_requirements(&["node01".into(), "node02".into()]).unwrap(),
        r#"(Name == "node01") || (Name == "node02")"#
    );
    assert!(matches!(render_requirements(&[]), Err(Error::EmptyNodeSet)));
}
