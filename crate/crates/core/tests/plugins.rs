mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use youpi_core::catalog::Query;
use youpi_core::fixtures::write_megacam_set;
use youpi_core::objects::ObjectKind;
use youpi_core::plugin::{ImageSource, NewCartItem, PluginDescriptor, IMAGE_LIST_FILE};
use youpi_core::service::SubmitRequest;
use youpi_core::Error;

use common::Env;

#[test]
fn builtin_registry() {
    let env = Env::new();
    let all = env.svc.list_plugins(false).unwrap();
    let ids: Vec<&str> = all.iter().map(|p| p.plugin_id.as_str()).collect();
    assert_eq!(ids, ["qualityfits", "scamp", "sextractor", "swarp"]);
    assert!(all.iter().all(|p| p.enabled));

    assert!(matches!(env.svc.set_plugin_enabled(&env.alice, "scamp", false), Err(Error::PermissionDenied)));
    env.svc.set_plugin_enabled(&env.admin, "scamp", false).unwrap();
    assert_eq!(env.svc.list_plugins(true).unwrap().len(), 3);

    let custom = PluginDescriptor::parse(
        "id myred\nname My reduction\nexecutable /usr/local/bin/myred\ntemplate {EXECUTABLE} -c {CONFIG_PATH} @{IMAGE_LIST_PATH}\n",
    )
    .unwrap();
    env.svc.register_plugin(&env.admin, &custom).unwrap();
    assert_eq!(env.svc.list_plugins(false).unwrap().len(), 5);
    assert!(matches!(env.svc.register_plugin(&env.admin, &custom), Err(Error::DuplicateName(_))));
}

#[test]
fn config_files() {
    let env = Env::new();
    let content = "MOCK_SLEEP_MS 0\nMOCK_EXIT_CODE 0\nEXTRA_ARGS -v\n";
    let c = env.svc.save_config(&env.alice, "three", "scamp", content).unwrap();
    assert_eq!(c.content, content);
    let listed = env.svc.list_configs(&env.alice, Some("scamp")).unwrap();
    assert_eq!(listed[0].content.as_bytes(), content.as_bytes());
    assert!(matches!(
        env.svc.save_config(&env.alice, "bad", "scamp", "BADLINE\n"),
        Err(Error::ParseError { line: 1, .. })
    ));
}

struct Cart {
    env: Env,
    images: Vec<i64>,
    config: i64,
}

fn cart_env(n: usize) -> Cart {
    let env = Env::new();
    write_megacam_set(&env.path("data"), 900, n).unwrap();
    env.ingest_dir(&env.alice, "data").unwrap();
    let images = env.svc.query_images(&env.alice, &Query::default()).unwrap().iter().map(|i| i.image_id).collect();
    let config = env.svc.save_config(&env.alice, "scamp-default", "scamp", "MOCK_SLEEP_MS 0\n").unwrap().config_id;
    Cart { env, images, config }
}

fn item(plugin: &str, source: ImageSource, config: i64) -> NewCartItem {
    NewCartItem {
        plugin_id: plugin.into(),
        image_source: source,
        config_id: config,
        aux_paths: BTreeMap::new(),
        policy_id: None,
        output_dir: None,
    }
}

#[test]
fn cart_item_validation() {
    let c = cart_env(3);
    let env = &c.env;
    assert!(matches!(
        env.svc.create_cart_item(&env.alice, &item("scamp", ImageSource::Images(vec![]), c.config)),
        Err(Error::EmptyImageSource)
    ));
    let private = env.svc.save_config(&env.carol, "secret", "scamp", "").unwrap();
    env.svc
        .chmod(&env.carol, ObjectKind::Config, private.config_id, "rw|--|--".parse().unwrap())
        .unwrap();
    assert!(matches!(
        env.svc.create_cart_item(&env.alice, &item("scamp", ImageSource::Images(c.images.clone()), private.config_id)),
        Err(Error::PermissionDenied)
    ));
    let view = env
        .svc
        .create_cart_item(&env.alice, &item("scamp", ImageSource::Images(c.images.clone()), c.config))
        .unwrap();
    assert_eq!(view.input_count, 3);
    assert_eq!(env.svc.get_cart_item(&env.alice, view.item.item_id).unwrap(), view.item);
    assert!(matches!(env.svc.get_cart_item(&env.carol, view.item.item_id), Err(Error::PermissionDenied)));
}

#[test]
fn selection_of_1450_resolves_to_1450_inputs() {
    let c = cart_env(1450);
    let env = &c.env;
    let sel = env.svc.save_selection(&env.alice, "CFHTLS-T0006-W3_Scamp", &c.images).unwrap();
    let view = env
        .svc
        .create_cart_item(&env.alice, &item("scamp", ImageSource::Selection(sel.selection_id), c.config))
        .unwrap();
    assert_eq!(view.input_count, 1450);
}

#[test]
fn scamp_job_gets_ahead_dir_and_deterministic_inputs() {
    let c = cart_env(3);
    let env = &c.env;
    let ahead = env.path("ahead");
    fs::create_dir_all(&ahead).unwrap();
    let path = env.svc.save_path(&env.alice, ahead.to_str().unwrap()).unwrap();
    let mut new = item("scamp", ImageSource::Images(c.images.clone()), c.config);
    new.aux_paths.insert("ahead_dir".into(), path.path_id);
    let it = env.svc.create_cart_item(&env.alice, &new).unwrap().item;
    let req = SubmitRequest {
        cart_item_id: it.item_id,
        policy: None,
        description: Some("astrometry".into()),
    };
    let j1 = env.svc.submit(&env.alice, &req).unwrap();
    let j2 = env.svc.submit(&env.alice, &req).unwrap();
    assert_eq!(j1.env.get("YOUPI_AUX_AHEAD_DIR").map(String::as_str), ahead.to_str());
    assert!(j1.submission_text.contains(&format!("YOUPI_AUX_AHEAD_DIR={}", ahead.display())));
    assert_eq!(j1.description, "astrometry");

    let files = |dir: &str| -> Vec<(String, Vec<u8>)> {
        let mut v: Vec<_> = fs::read_dir(dir)
            .unwrap()
            .map(|e| e.unwrap())
            .filter(|e| e.path().is_file() && !e.file_name().to_string_lossy().starts_with("job."))
            .map(|e| (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap()))
            .collect();
        v.sort();
        v
    };
    let (f1, f2) = (files(&j1.workdir), files(&j2.workdir));
    assert!(!f1.is_empty());
    assert_eq!(f1, f2);
    let list = fs::read_to_string(Path::new(&j1.workdir).join(IMAGE_LIST_FILE)).unwrap();
    assert_eq!(list.lines().count(), 3);
    let strip = |argv: &[String], wd: &str| argv.iter().map(|a| a.replace(wd, "<wd>")).collect::<Vec<_>>();
    assert_eq!(strip(&j1.argv, &j1.workdir), strip(&j2.argv, &j2.workdir));
}

#[test]
fn dangling_reference_fails_at_submit() {
    let c = cart_env(2);
    let env = &c.env;
    let sel = env.svc.save_selection(&env.alice, "tmp", &c.images).unwrap();
    let it = env
        .svc
        .create_cart_item(&env.alice, &item("scamp", ImageSource::Selection(sel.selection_id), c.config))
        .unwrap()
        .item;
    env.svc.delete_selection(&env.alice, sel.selection_id).unwrap();
    let r = env.svc.submit(
        &env.alice,
        &SubmitRequest {
            cart_item_id: it.item_id,
            policy: None,
            description: None,
        },
    );
    assert!(matches!(r, Err(Error::UnknownReference(_))), "{r:?}");
}
