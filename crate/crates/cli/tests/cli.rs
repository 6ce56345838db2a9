use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value as Json};

const BIN: &str = env!("CARGO_BIN_EXE_hoca");

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn hoca(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env_remove("HOCA_SAFETY_CAP").output().unwrap()
}

fn run_ok(args: &[&str]) -> Output {
    let out = hoca(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn crawl_to(config: &Path, output: &Path, extra: &[&str]) -> Vec<u8> {
    let mut args = vec!["crawl", "--config", config.to_str().unwrap(), "--output", output.to_str().unwrap()];
    args.extend_from_slice(extra);
    run_ok(&args);
    fs::read(output).unwrap()
}

/// A fixture config with its relative paths made absolute and `edit` applied.
fn edited(name: &str, dir: &Path, edit: impl FnOnce(&mut Json)) -> PathBuf {
    let mut c: Json = serde_json::from_str(&fs::read_to_string(fixture(name)).unwrap()).unwrap();
    if let Some(path) = c.pointer_mut("/input/path") {
        *path = json!(fixture(path.as_str().unwrap()));
    }
    edit(&mut c);
    let path = dir.join(name);
    fs::write(&path, c.to_string()).unwrap();
    path
}

fn crawl_fixtures() -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(fixture(""))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.starts_with("crawl_") && n.ends_with(".json"))
        .collect();
    names.sort();
    names
}

fn jsonl(bytes: &[u8]) -> Vec<Json> {
    String::from_utf8(bytes.to_vec())
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn itemset_fixture_emits_the_frequent_itemsets() {
    let dir = tempfile::tempdir().unwrap();
    let out = crawl_to(&fixture("crawl_fim.json"), &dir.path().join("fim.jsonl"), &["--format", "jsonl"]);

    // Brute force over every nonempty itemset of the transaction file.
    let text = fs::read_to_string(fixture("fim.csv")).unwrap();
    let baskets: Vec<Vec<bool>> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').skip(1).map(|v| v == "true").collect())
        .collect();
    let mut want = BTreeMap::new();
    for mask in 1u32..8 {
        let support = baskets.iter().filter(|b| (0..3).all(|i| mask & (1 << i) == 0 || b[i])).count();
        if support >= 2 {
            let items: BTreeSet<String> = (0..3).filter(|i| mask & (1 << i) != 0).map(|i| format!("i{i}")).collect();
            want.insert(items, support as f64);
        }
    }
    let got: BTreeMap<BTreeSet<String>, f64> = jsonl(&out)
        .iter()
        .map(|r| {
            let items = r["region"].as_object().unwrap();
            assert!(items.values().all(|v| *v == json!(true)));
            (items.keys().cloned().collect(), r["signals"]["support"].as_f64().unwrap())
        })
        .collect();
    assert_eq!(got.len(), 5);
    assert_eq!(got, want);
}

#[test]
fn naive_oracle_matches_pruned_output_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    for name in crawl_fixtures() {
        let pruned = crawl_to(&fixture(&name), &dir.path().join("a"), &[]);
        let naive = crawl_to(&fixture(&name), &dir.path().join("b"), &["--oracle", "naive"]);
        assert_eq!(pruned, naive, "{name}");
    }
}

#[test]
fn jsonl_records_follow_the_published_schema() {
    let schema_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/region-signals.schema.json");
    let schema: Json = serde_json::from_str(&fs::read_to_string(schema_path).unwrap()).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for name in crawl_fixtures() {
        let out = crawl_to(&fixture(&name), &dir.path().join("out.jsonl"), &["--format", "jsonl"]);
        let records = jsonl(&out);
        assert!(!records.is_empty(), "{name}");
        for r in records {
            assert!(validator.is_valid(&r), "{name}: {r}");
        }
    }
    assert!(!validator.is_valid(&json!({"region": {}, "signals": {"x": "high"}})));
    assert!(!validator.is_valid(&json!({"region": {}, "signals": {}, "rank": 1})));
}

#[test]
fn spec_errors_exit_2_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let config = edited("crawl_t1.json", dir.path(), |c| {
        c["crawl"]["thresholds"] = json!({"support": 2});
    });
    let output = dir.path().join("out.csv");
    let out = hoca(&["crawl", "--config", config.to_str().unwrap(), "--output", output.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!output.exists());
    let record: Json = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(record["exit_code"], 2);
    assert!(record["message"].as_str().unwrap().contains("support"));

    let unknown = edited("crawl_t1.json", dir.path(), |c| c["crawl"]["treshold"] = json!(1));
    let out = hoca(&["crawl", "--config", unknown.to_str().unwrap(), "--output", output.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!output.exists());
}

#[test]
fn io_and_engine_errors_have_their_own_codes() {
    let dir = tempfile::tempdir().unwrap();
    let output = dir.path().join("out.csv");
    let missing = edited("crawl_t1.json", dir.path(), |c| c["input"]["path"] = json!("/nonexistent/t1.csv"));
    let out = hoca(&["crawl", "--config", missing.to_str().unwrap(), "--output", output.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));

    let out = Command::new(BIN)
        .args(["crawl", "--config", fixture("crawl_t1.json").to_str().unwrap()])
        .args(["--output", output.to_str().unwrap(), "--oracle", "naive"])
        .env("HOCA_SAFETY_CAP", "2")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4));
    let record: Json = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(record["kind"], "refused");
    assert!(!output.exists());
}

/// Runs `attribute`, returning the output text and stderr.
fn attribute(config: &Path, dir: &Path, format: &str) -> (String, String) {
    let output = dir.join(format!("attr.{format}"));
    let out = run_ok(&[
        "attribute",
        "--config",
        config.to_str().unwrap(),
        "--output",
        output.to_str().unwrap(),
        "--format",
        format,
    ]);
    (fs::read_to_string(output).unwrap(), String::from_utf8(out.stderr).unwrap())
}

#[test]
fn degenerate_cost_per_click_attribution() {
    let dir = tempfile::tempdir().unwrap();
    let (text, stderr) = attribute(&fixture("attribute_cpc.json"), dir.path(), "jsonl");
    let records = jsonl(text.as_bytes());
    assert!(stderr.is_empty());
    // Control and test clicks are both 30, so each region scores its revenue change over 30.
    let want = [("Browser=Chrome;Device=Pixel", 5.0), ("Browser=Safari;Device=Pixel", 5.0), ("Browser=Safari;Device=iPhone", -5.0)];
    for (rec, (region, dw)) in records.iter().zip(want) {
        assert_eq!(rec["region"], region);
        assert!((rec["ras"].as_f64().unwrap() - dw / 30.0).abs() < 1e-12);
    }
    let c = &records[3]["completeness"];
    assert!((c["sum_ras"].as_f64().unwrap() - 5.0 / 30.0).abs() < 1e-12);
    assert!((c["population_change"].as_f64().unwrap() - (65.0 / 30.0 - 60.0 / 30.0)).abs() < 1e-12);
    assert_eq!(c["errors"], 0);
}

#[test]
fn summable_revenue_attribution_in_csv() {
    let dir = tempfile::tempdir().unwrap();
    let (text, _) = attribute(&fixture("attribute_revenue.json"), dir.path(), "csv");
    assert_eq!(
        text,
        "record,region,ras,numerator_part,denominator_part,population_change,error\n\
         region,Browser=Chrome;Device=Pixel,5,5,0,,\n\
         region,Browser=Safari;Device=Pixel,5,5,0,,\n\
         region,Browser=Safari;Device=iPhone,-5,-5,0,,\n\
         completeness,,5,,,5,\n"
    );
}

#[test]
fn bad_segment_rows_are_marked_not_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let (text, stderr) = attribute(&fixture("attribute_segments.json"), dir.path(), "jsonl");
    let records = jsonl(text.as_bytes());
    assert_eq!(records.len(), 5);
    assert_eq!(records[3]["region"], "Device=Broken");
    assert_eq!(records[3]["error"]["kind"], "domain");
    assert_eq!(records[4]["completeness"]["errors"], 1);
    let warning: Json = serde_json::from_str(stderr.trim()).unwrap();
    assert_eq!(warning, json!({"warning": "attribution_errors", "count": 1}));
}

#[test]
fn join_strategies_write_identical_cellsets() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut results = Vec::new();
    for metric in ["Revenue", "Clicks"] {
        let config = edited("crawl_t1.json", d, |c| {
            c["crawl"]["thresholds"] = json!({});
            c["crawl"]["models"][0]["params"]["metric"] = json!(metric);
        });
        let out = d.join(format!("{metric}.csv"));
        crawl_to(&config, &out, &[]);
        results.push(out);
    }
    let dims = json!([{"name": "Device", "type": "string"}, {"name": "Browser", "type": "string"}]);
    let mut stores = Vec::new();
    for strategy in ["local", "global"] {
        let config = d.join(format!("join_{strategy}.json"));
        let body = json!({
            "spec_version": 1,
            "join": {
                "left": {"kind": "results", "path": results[0], "dimensions": dims},
                "right": {"kind": "results", "path": results[1], "dimensions": dims},
                "spec": {"on": ["Device", "Browser"]},
                "strategy": strategy,
            }
        });
        fs::write(&config, body.to_string()).unwrap();
        let out = d.join(strategy);
        let report = d.join(format!("{strategy}.report.json"));
        run_ok(&["join", "--config", config.to_str().unwrap(), "--output", out.to_str().unwrap(), "--instrument", report.to_str().unwrap()]);
        let report: Json = serde_json::from_str(&fs::read_to_string(report).unwrap()).unwrap();
        assert_eq!(report["joins"][format!("{strategy}_joins")], if strategy == "global" { 1 } else { 4 });
        stores.push(out);
    }
    for file in ["manifest.json", "cells.bin"] {
        assert_eq!(fs::read(stores[0].join(file)).unwrap(), fs::read(stores[1].join(file)).unwrap(), "{file}");
    }

    // The joined cellset is itself a crawlable cube.
    let crawl = d.join("joined_crawl.json");
    let body = json!({
        "spec_version": 1,
        "input": {"kind": "cellset", "path": stores[0]},
        "crawl": {"models": [{"model": "id", "params": {"metrics": ["left.total_weight", "right.total_weight"]}}]},
    });
    fs::write(&crawl, body.to_string()).unwrap();
    let out = String::from_utf8(crawl_to(&crawl, &d.join("joined.csv"), &[])).unwrap();
    assert!(out.starts_with("region,left.total_weight,right.total_weight\n,125,60\n"), "{out}");
}

fn materialize(config: &Path, output: &Path) -> Json {
    let report = output.with_extension("report.json");
    run_ok(&[
        "materialize",
        "--config",
        config.to_str().unwrap(),
        "--output",
        output.to_str().unwrap(),
        "--instrument",
        report.to_str().unwrap(),
    ]);
    serde_json::from_str(&fs::read_to_string(report).unwrap()).unwrap()
}

#[test]
fn stores_crawl_like_the_live_table_and_slices_read_less() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let base = |action: Json| {
        let name = format!("materialize_{}.json", action["action"].as_str().unwrap());
        let config = edited("crawl_outlier.json", d, |c| {
            c.as_object_mut().unwrap().remove("crawl");
            c.as_object_mut().unwrap().remove("format");
            c["materialize"] = action;
        });
        let path = d.join(name);
        fs::rename(config, &path).unwrap();
        path
    };
    let cells = materialize(&base(json!({"action": "cellset"})), &d.join("cells"));
    assert_eq!(cells["kind"], "cellset");
    let chunks = materialize(&base(json!({"action": "chunk", "partition": "date"})), &d.join("chunks"));
    assert_eq!(chunks["files"], 5);
    let rechunk = d.join("rechunk.json");
    fs::write(
        &rechunk,
        json!({"spec_version": 1, "input": {"kind": "chunked", "path": d.join("chunks")}, "materialize": {"action": "rechunk"}}).to_string(),
    )
    .unwrap();
    assert_eq!(materialize(&rechunk, &d.join("slices"))["kind"], "rechunked");
    // Rewriting an existing store replaces it.
    materialize(&rechunk, &d.join("slices"));

    let live = crawl_to(&fixture("crawl_outlier.json"), &d.join("live.jsonl"), &[]);
    let mut reads = BTreeMap::new();
    for (kind, path) in [("cellset", "cells"), ("chunked", "chunks"), ("rechunked", "slices")] {
        let config = edited("crawl_outlier.json", d, |c| c["input"] = json!({"kind": kind, "path": d.join(path)}));
        let report = d.join(format!("{kind}.report.json"));
        let out = crawl_to(&config, &d.join(format!("{kind}.jsonl")), &["--instrument", report.to_str().unwrap()]);
        assert_eq!(out, live, "{kind}");
        let report: Json = serde_json::from_str(&fs::read_to_string(report).unwrap()).unwrap();
        let r = &report["stats"]["reads"];
        reads.insert(kind, r["chunk_reads"].as_u64().unwrap() + r["slice_reads"].as_u64().unwrap());
    }
    assert!(reads["rechunked"] < reads["chunked"], "{reads:?}");
}

#[test]
fn store_output_never_clobbers_other_directories() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("precious");
    fs::create_dir(&target).unwrap();
    fs::write(target.join("notes.txt"), "keep").unwrap();
    let config = edited("crawl_t1.json", dir.path(), |c| {
        c.as_object_mut().unwrap().remove("crawl");
        c["materialize"] = json!({"action": "cellset"});
    });
    let out = hoca(&["materialize", "--config", config.to_str().unwrap(), "--output", target.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(fs::read_to_string(target.join("notes.txt")).unwrap(), "keep");
}

#[test]
fn every_fixture_config_round_trips() {
    for entry in fs::read_dir(fixture("")).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            let first = hoca_cli::RunConfig::parse(&fs::read_to_string(&path).unwrap()).unwrap();
            let text = first.to_json();
            let second = hoca_cli::RunConfig::parse(&text).unwrap();
            assert_eq!(first, second, "{}", path.display());
            assert_eq!(second.to_json(), text, "{}", path.display());
        }
    }
}
