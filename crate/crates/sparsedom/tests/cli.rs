use std::process::Command;

use sparsedom::harness::{GridSpec, Generator};
use sparsedom::rng::Lcg;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sparsedom"))
}

fn tmp(name: &str) -> std::path::PathBuf {
    let d = std::env::temp_dir().join(format!("sparsedom-cli-{}", std::process::id()));
    std::fs::create_dir_all(&d).unwrap();
    d.join(name)
}

#[test]
fn golden_scenario_exits_zero_and_writes_reports() {
    let json = tmp("golden.json");
    let csv = tmp("golden.csv");
    let out = bin()
        .args(["run", concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/golden.scn"), "--json-out"])
        .arg(&json)
        .arg("--csv-out")
        .arg(&csv)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(doc["schema_version"], 1);
    assert_eq!(doc["reports"].as_array().unwrap().len(), 9);
    assert!(std::fs::read_to_string(&csv).unwrap().starts_with("id,param,lhs,rhs,ratio\n"));
}

#[test]
fn empty_and_failing_scenarios() {
    let empty = tmp("empty.scn");
    std::fs::write(&empty, "[grid]\ncells = 16\n").unwrap();
    assert_eq!(bin().arg("run").arg(&empty).status().unwrap().code(), Some(0));

    let tight = tmp("tight.scn");
    std::fs::write(&tight, "[grid]\ncells = 64\n\n[check tight]\nkind = fs\nw = const\nf = indicator\nceiling = 1e-9\n").unwrap();
    let out = bin().arg("run").arg(&tight).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("tight"));

    let bad = tmp("bad.scn");
    std::fs::write(&bad, "[grid]\ncells = 64\n[check x]\nkind = domination\nkernel = nope\nf = blobs\n").unwrap();
    let out = bin().arg("run").arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 5"));
}

#[test]
fn dominate_then_verify_family() {
    let g = GridSpec::new(1, 0.0, 1.0, 256);
    let f = Generator::parse("blobs count=3").unwrap().sample(&g, &mut Lcg::new(1)).unwrap();
    let b = Generator::parse("jumps count=3 width=0.02").unwrap().sample(&g, &mut Lcg::new(2)).unwrap();
    let (fp, bp, dir) = (tmp("f.txt"), tmp("b.json"), tmp("dom"));
    std::fs::write(&fp, f.to_text()).unwrap();
    std::fs::write(&bp, b.to_json()).unwrap();
    let out = bin().args(["dominate", "--kernel", "hilbert", "--f"]).arg(&fp).arg("--b").arg(&bp).arg("--out").arg(&dir).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.join("domination.json").exists());
    let fam = dir.join("family_0.json");
    let ok = bin().arg("verify-family").arg(&fam).args(["--eta", "0.0555"]).status().unwrap();
    assert_eq!(ok.code(), Some(0));
}
