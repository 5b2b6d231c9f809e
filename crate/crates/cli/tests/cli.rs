use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use germap_cli::exit;

fn germap(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_germap"))
        .current_dir(dir)
        .env_remove("GERMAP_CACHE_ROOT")
        .env_remove("GERMAP_CONFIG")
        .args(args)
        .output()
        .expect("spawn germap")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn copy_tree(from: &Path, to: &Path) {
    for (rel, bytes) in tree(from) {
        let dst = to.join(rel);
        fs::create_dir_all(dst.parent().unwrap()).unwrap();
        fs::write(dst, bytes).unwrap();
    }
}

#[test]
fn synth_is_byte_identical_for_a_fixed_seed() {
    let tmp = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        let o = germap(tmp.path(), &["--seed", "7", "synth", "--count", "50", "--out", out]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let a = tree(&tmp.path().join("a"));
    let b = tree(&tmp.path().join("b"));
    assert_eq!(a.len(), 50 * 2 + 3, "{:?}", a.keys().take(5).collect::<Vec<_>>());
    assert!(a == b, "two runs with the same seed differ");

    let o = germap(tmp.path(), &["--seed", "8", "synth", "--count", "50", "--out", "c"]);
    assert_eq!(code(&o), 0);
    assert!(tree(&tmp.path().join("c")) != a);
}

#[test]
fn rerun_is_skipped_until_forced() {
    let tmp = tempfile::tempdir().unwrap();
    let first = germap(tmp.path(), &["synth", "--count", "4"]);
    assert_eq!(code(&first), 0, "{}", stderr(&first));
    assert!(stdout(&first).contains("synth: 4 tiles"));

    let again = germap(tmp.path(), &["synth", "--count", "4"]);
    assert_eq!(code(&again), 0);
    assert!(stdout(&again).contains("outputs are current"), "{}", stdout(&again));

    let changed = germap(tmp.path(), &["synth", "--count", "5"]);
    assert!(stdout(&changed).contains("synth: 5 tiles"));

    let forced = germap(tmp.path(), &["--force", "synth", "--count", "5"]);
    assert!(stdout(&forced).contains("synth: 5 tiles"));
}

#[test]
fn evaluate_scores_a_perfect_prediction_as_one() {
    let tmp = tempfile::tempdir().unwrap();
    let o = germap(tmp.path(), &["synth", "--count", "6"]);
    assert_eq!(code(&o), 0);
    let data = tmp.path().join("work/data");
    let preds = tmp.path().join("perfect");
    copy_tree(&data.join("labels"), &preds);

    let o = germap(tmp.path(), &["evaluate", "--predictions", "perfect"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mut rdr = csv::Reader::from_path(tmp.path().join("work/out/evaluation.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 2);
    for r in &rows {
        assert_eq!(r[1].parse::<f64>().unwrap(), 1.0, "class {}", &r[0]);
        assert_eq!(r[2].parse::<f64>().unwrap(), 1.0);
    }
}

#[test]
fn evaluate_requires_a_label_for_every_prediction() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&germap(tmp.path(), &["synth", "--count", "2"])), 0);
    let preds = tmp.path().join("preds");
    copy_tree(&tmp.path().join("work/data/labels"), &preds);
    let stray = preds.join("synthetic/18/1/1.png");
    fs::create_dir_all(stray.parent().unwrap()).unwrap();
    fs::copy(
        tree(&preds).keys().next().map(|k| preds.join(k)).unwrap(),
        &stray,
    )
    .unwrap();
    let o = germap(tmp.path(), &["evaluate", "--predictions", "preds"]);
    assert_eq!(code(&o), exit::MISSING_INPUT, "{}", stderr(&o));
}

#[test]
fn exit_codes_follow_the_documented_table() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();

    let o = germap(dir, &["--no-such-flag", "train"]);
    assert_eq!(code(&o), exit::USAGE);

    let o = germap(dir, &["train"]);
    assert_eq!(code(&o), exit::MISSING_INPUT);
    assert!(stderr(&o).starts_with("error[missing_input]:"), "{}", stderr(&o));

    fs::write(dir.join("bad.toml"), "[train]\nepochs = \"many\"\n").unwrap();
    let o = germap(dir, &["--config", "bad.toml", "train"]);
    assert_eq!(code(&o), exit::CONFIG);
    assert!(stderr(&o).starts_with("error[config]:"));

    fs::write(dir.join("neg.toml"), "[train]\nlearning_rate = -1.0\n").unwrap();
    let o = germap(dir, &["--config", "neg.toml", "train"]);
    assert_eq!(code(&o), exit::CONFIG, "{}", stderr(&o));

    let o = germap(dir, &["--config", "absent.toml", "train"]);
    assert_eq!(code(&o), exit::MISSING_INPUT);

    let o = germap(dir, &["fetch"]);
    assert_eq!(code(&o), exit::CONFIG, "{}", stderr(&o));

    let fx = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures");
    let a = format!(
        "[analysis]\nhouseholds = {:?}\ndistricts = {:?}\ndeprivation = {:?}\n",
        fx.join("households.csv"),
        fx.join("districts.csv"),
        fx.join("deprivation.csv")
    );
    fs::write(dir.join("a.toml"), a).unwrap();
    fs::write(dir.join("counts.csv"), "period,ger_count\n2020,abc\n").unwrap();
    let o = germap(dir, &["--config", "a.toml", "analyze", "--counts", "counts.csv"]);
    assert_eq!(code(&o), exit::BAD_INPUT, "{}", stderr(&o));
}

#[test]
fn analyze_reproduces_the_fixture_ratios() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures");
    let tmp = tempfile::tempdir().unwrap();
    let cfg = format!(
        "[analysis]\nhouseholds = {:?}\ndistricts = {:?}\ndeprivation = {:?}\n",
        root.join("households.csv"),
        root.join("districts.csv"),
        root.join("deprivation.csv")
    );
    fs::write(tmp.path().join("g.toml"), cfg).unwrap();
    let counts = root.join("gers_by_period.csv");
    let o = germap(tmp.path(), &["--config", "g.toml", "analyze", "--counts", counts.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let summary: serde_json::Value =
        serde_json::from_slice(&fs::read(tmp.path().join("work/out/analysis/summary.json")).unwrap()).unwrap();
    let f = |k: &str| summary[k].as_f64().unwrap();
    assert!((f("households_per_ger") - 1.0497).abs() < 1e-4);
    assert!((f("census_slum_ratio") - 0.216).abs() < 5e-4);
    let last = summary["ratios"].as_array().unwrap().last().unwrap();
    assert_eq!(last["year"], 2023);
    assert!((last["slum_ratio"].as_f64().unwrap() - 0.211).abs() < 5e-4);
    assert!((summary["deprivation_shares"]["toilet"].as_f64().unwrap() - 0.976).abs() < 5e-4);
    assert!((summary["deprivation_shares"]["water"].as_f64().unwrap() - 0.010).abs() < 5e-4);
}

/// Serves 256×256 PNG tiles, except 404 for every tile with an odd x.
fn spawn_tile_server() -> String {
    use axum::extract::Path as UrlPath;
    use axum::http::StatusCode;
    use axum::routing::get;

    let mut png = Vec::new();
    image::RgbImage::from_pixel(256, 256, image::Rgb([90, 120, 60]))
        .write_to(&mut std::io::Cursor::new(&mut png), image::ImageFormat::Png)
        .unwrap();
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
        rt.block_on(async move {
            let app = axum::Router::new().route(
                "/{z}/{x}/{y}",
                get(move |UrlPath((_z, x, _y)): UrlPath<(u8, u32, String)>| {
                    let png = png.clone();
                    async move {
                        if x % 2 == 1 {
                            Err(StatusCode::NOT_FOUND)
                        } else {
                            Ok(png)
                        }
                    }
                }),
            );
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, app).await.unwrap();
        });
    });
    format!("http://{}/{{z}}/{{x}}/{{y}}.png", rx.recv().unwrap())
}

#[test]
fn partial_fetch_keeps_good_tiles_and_exits_seven() {
    let url = spawn_tile_server();
    let tmp = tempfile::tempdir().unwrap();
    // About 2×2 tiles at zoom 18.
    let args = ["fetch", "--url", &url, "--bbox", "47.9180,106.9170,47.9185,106.9178", "--period", "2022"];
    let o = germap(tmp.path(), &args);
    assert_eq!(code(&o), exit::FETCH_INCOMPLETE, "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(tmp.path().join("work/out/fetch_report.json")).unwrap()).unwrap();
    let (requested, fetched, failed) = (
        report["requested"].as_u64().unwrap(),
        report["fetched"].as_u64().unwrap(),
        report["failed"].as_u64().unwrap(),
    );
    assert!(fetched > 0 && failed > 0);
    assert_eq!(fetched + failed, requested);
    let cached = tree(&tmp.path().join("work/tiles/2022")).len() as u64;
    assert_eq!(cached, fetched);

    // A second run serves the good tiles from the cache.
    let o = germap(tmp.path(), &args);
    assert_eq!(code(&o), exit::FETCH_INCOMPLETE);
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(tmp.path().join("work/out/fetch_report.json")).unwrap()).unwrap();
    assert_eq!(report["cached_hits"].as_u64().unwrap(), fetched);
    assert_eq!(report["fetched"].as_u64().unwrap(), 0);
}
