use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hiercloud::hierarchy::LabelHierarchy;
use hiercloud::io::{read_cloud_auto, write_labels};
use hiercloud::report::parse_reports;

fn bundled_hierarchy() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data/campus3d.hier")
}

fn hiercloud(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hiercloud"))
        .args(args)
        .env_remove("HIERCLOUD_THREADS")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ok(args: &[&str]) -> String {
    let o = hiercloud(args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    stdout(&o)
}

fn synth(dir: &Path, extra: &[&str]) -> (String, String) {
    let cloud = dir.join("gt.hcpc").to_str().unwrap().to_string();
    let pred = dir.join("p.hcpd").to_str().unwrap().to_string();
    let mut args = vec!["synth", "--points", "5000", "--seed", "11", "--cloud", &cloud, "--pred", &pred];
    args.extend_from_slice(extra);
    ok(&args);
    (cloud, pred)
}

#[test]
fn validate_bundled_tree() {
    let out = ok(&["validate", bundled_hierarchy().to_str().unwrap()]);
    assert!(out.starts_with("H=5\n"), "{out}");
    for (level, width) in [3, 4, 6, 9, 15].iter().enumerate() {
        assert!(out.contains(&format!("level {}: {width} classes (ignore: unclassified)", level + 1)), "{out}");
    }
}

#[test]
fn validate_rejects_broken_tree() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.hier");
    std::fs::write(&path, "levels 2\nlevel 1: A\nlevel 2: a, b\nedge 2:a -> 1:A\n").unwrap();
    let o = hiercloud(&["validate", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains('b'));
}

#[test]
fn decoded_labels_are_fully_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let (cloud, pred) = synth(dir.path(), &["--inconsistency", "0.5"]);
    let labels = dir.path().join("he.hcpl");
    let hier = bundled_hierarchy();
    ok(&["ensemble", &pred, "--hier", hier.to_str().unwrap(), "--out", labels.to_str().unwrap()]);
    let table = ok(&["eval", "--gt", &cloud, "--labels", labels.to_str().unwrap(), "--alpha", "1.0"]);
    let cr = table.lines().find(|l| l.starts_with("CR (alpha=1)")).expect("CR row");
    assert!(cr.trim_end().ends_with("100.0"), "{table}");

    ok(&["ensemble", &pred, "--mode", "mc", "--out", labels.to_str().unwrap()]);
    let machine = ok(&["eval", "--gt", &cloud, "--labels", labels.to_str().unwrap(), "--machine"]);
    let report = &parse_reports(&machine).unwrap()[0];
    assert!(report.consistency[0].1.unwrap() < 1.0);
}

#[test]
fn ground_truth_against_itself_scores_full_marks() {
    let dir = tempfile::tempdir().unwrap();
    let (cloud, _) = synth(dir.path(), &[]);
    let h = LabelHierarchy::campus3d();
    let pc = read_cloud_auto(Path::new(&cloud)).unwrap();
    let gt = pc.labels.unwrap().to_hier_labels(&h).unwrap();
    let labels = dir.path().join("gt.hcpl");
    write_labels(&labels, &gt, h.depth()).unwrap();
    let table = ok(&["eval", "--gt", &cloud, "--labels", labels.to_str().unwrap()]);
    let oa_rows: Vec<&str> = table.lines().filter(|l| l.trim_start().starts_with("OA")).collect();
    let miou_rows: Vec<&str> = table.lines().filter(|l| l.trim_start().starts_with("mIoU")).collect();
    assert_eq!(oa_rows.len(), 5);
    assert_eq!(miou_rows.len(), 5);
    for row in oa_rows.iter().chain(&miou_rows) {
        assert!(row.ends_with("100.0"), "{row}");
    }
}

#[test]
fn reports_do_not_depend_on_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let (cloud, pred) = synth(
        dir.path(),
        &["--geometry", "clustered", "--blobs", "2", "--inconsistency", "0.3", "--label-noise", "0.05"],
    );
    let run = |threads: &str, name: &str| {
        let out = dir.path().join(name);
        let table = ok(&[
            "--threads", threads, "eval", "--gt", &cloud, "--pred", &pred, "--alpha", "0.6", "0.8", "1.0",
            "--wcov", &cloud, "--out", out.to_str().unwrap(),
        ]);
        (table, std::fs::read_to_string(out).unwrap())
    };
    let (t1, m1) = run("1", "one.txt");
    let (t4, m4) = run("4", "four.txt");
    assert_eq!(t1, t4);
    assert_eq!(m1, m4);

    let reports = parse_reports(&m1).unwrap();
    assert_eq!(reports.len(), 2);
    assert_eq!(reports[0].method, "HE");
    assert_eq!(reports[1].method, "MC");
    let again: String = reports.iter().map(|r| r.to_machine()).collect();
    assert_eq!(again, m1);
    assert!(t1.contains("WCov (level 4)"));
}

#[test]
fn sample_writes_one_line_per_draw() {
    let dir = tempfile::tempdir().unwrap();
    let (cloud, _) = synth(dir.path(), &[]);
    let idx = dir.path().join("idx.txt");
    let subsets = dir.path().join("subsets");
    ok(&[
        "sample", &cloud, "--method", "rc-knn", "--n", "64", "--count", "3", "--seed", "5", "--out",
        idx.to_str().unwrap(), "--subsets", subsets.to_str().unwrap(),
    ]);
    let text = std::fs::read_to_string(&idx).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().all(|l| l.split(' ').count() == 64));
    let first = read_cloud_auto(&subsets.join("sample_0.hcpc")).unwrap();
    assert_eq!(first.len(), 64);

    ok(&["sample", &cloud, "--method", "rbs", "--block", "10", "8", "--n", "32", "--out", idx.to_str().unwrap()]);
    ok(&["sample", &cloud, "--method", "voxel", "--voxel-size", "2.0", "--out", idx.to_str().unwrap()]);
    assert_eq!(std::fs::read_to_string(&idx).unwrap().lines().count(), 1);
}

#[test]
fn loss_and_stats_print_values() {
    let dir = tempfile::tempdir().unwrap();
    let (cloud, pred) = synth(dir.path(), &["--inconsistency", "0.4"]);
    let out = ok(&["loss", "--pred", &pred, "--gt", &cloud, "--beta", "1", "--gamma", "0.05"]);
    let total: f64 = out.lines().next().unwrap().strip_prefix("total\t").unwrap().parse().unwrap();
    assert!(total > 0.0);
    assert_eq!(out.lines().filter(|l| l.starts_with("ce_level")).count(), 5);
    assert_eq!(out.lines().filter(|l| l.starts_with("consistency_edge")).count(), 4);

    let stats = ok(&["stats", &cloud]);
    assert!(stats.starts_with("points\t5000\n"), "{stats}");
}

#[test]
fn exit_codes() {
    assert_eq!(hiercloud(&[]).status.code(), Some(2));
    assert_eq!(hiercloud(&["validate"]).status.code(), Some(2));
    let o = hiercloud(&["eval", "--gt", "x", "--pred", "y", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--bogus"));

    let dir = tempfile::tempdir().unwrap();
    let cloud = dir.path().join("c.hcpc");
    let pred = dir.path().join("p.hcpd");
    let args = ["synth", "--label-noise", "2", "--cloud", cloud.to_str().unwrap(), "--pred", pred.to_str().unwrap()];
    assert_eq!(hiercloud(&args).status.code(), Some(2));

    let (cloud, pred) = synth(dir.path(), &[]);
    let bytes = std::fs::read(&pred).unwrap();
    std::fs::write(&pred, &bytes[..bytes.len() - 3]).unwrap();
    let o = hiercloud(&["ensemble", &pred, "--out", dir.path().join("l").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("truncated"));
    assert_eq!(hiercloud(&["stats", &format!("{cloud}.missing")]).status.code(), Some(1));
}

#[test]
fn in_process_run_matches_binary() {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = hiercloud::cli::run(
        ["hiercloud", "validate", bundled_hierarchy().to_str().unwrap()],
        &mut out,
        &mut err,
    );
    assert_eq!(code, 0);
    assert_eq!(String::from_utf8(out).unwrap(), ok(&["validate", bundled_hierarchy().to_str().unwrap()]));
}
