use std::path::Path;
use std::process::{Command, Output};

const HEADER: &str = "image,MEL,NV,BCC,AKIEC,BKL,DF,VASC";

fn dermnet(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dermnet"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = dermnet(dir, args);
    assert!(
        out.status.success(),
        "dermnet {args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn write(dir: &Path, name: &str, rows: &[(&str, [f64; 7])]) {
    let mut text = format!("{HEADER}\n");
    for (id, p) in rows {
        text.push_str(id);
        for v in p {
            text.push_str(&format!(",{v:.6}"));
        }
        text.push('\n');
    }
    std::fs::write(dir.join(name), text).unwrap();
}

fn onehot(c: usize) -> [f64; 7] {
    let mut p = [0.0; 7];
    p[c] = 1.0;
    p
}

/// Truth with every class present, plus three member prediction files.
fn fixture() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let ids: Vec<String> = (0..14).map(|i| format!("ISIC_{i:07}")).collect();
    let truth: Vec<(&str, [f64; 7])> = ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), onehot(i % 7)))
        .collect();
    write(dir.path(), "truth.csv", &truth);
    let members = [
        [0.50, 0.20, 0.10, 0.05, 0.05, 0.05, 0.05],
        [0.10, 0.60, 0.10, 0.05, 0.05, 0.05, 0.05],
        [0.05, 0.05, 0.40, 0.30, 0.10, 0.05, 0.05],
    ];
    for (m, base) in members.iter().enumerate() {
        let rows: Vec<(&str, [f64; 7])> = ids
            .iter()
            .enumerate()
            .map(|(i, id)| {
                let mut p = *base;
                p.rotate_right(i % 3);
                (id.as_str(), p)
            })
            .collect();
        write(dir.path(), &format!("m{}.csv", m + 1), &rows);
    }
    dir
}

#[test]
fn every_member_subset_can_be_ensembled() {
    let dir = fixture();
    let subsets: [&[&str]; 7] = [
        &["m1.csv"],
        &["m2.csv"],
        &["m3.csv"],
        &["m1.csv", "m2.csv"],
        &["m2.csv", "m3.csv"],
        &["m1.csv", "m3.csv"],
        &["m1.csv", "m2.csv", "m3.csv"],
    ];
    for members in subsets {
        for combiner in ["soft", "vote"] {
            let mut args = vec!["ensemble", "--combiner", combiner];
            args.extend_from_slice(members);
            let out = ok(dir.path(), &args);
            assert!(out.starts_with(HEADER));
            assert_eq!(out.lines().count(), 15, "{members:?}");
        }
    }
}

#[test]
fn member_order_does_not_matter() {
    let dir = fixture();
    for combiner in ["soft", "vote"] {
        let a = ok(
            dir.path(),
            &["ensemble", "--combiner", combiner, "m1.csv", "m2.csv", "m3.csv"],
        );
        let b = ok(
            dir.path(),
            &["ensemble", "--combiner", combiner, "m3.csv", "m1.csv", "m2.csv"],
        );
        let c = ok(
            dir.path(),
            &["ensemble", "--combiner", combiner, "m2.csv", "m3.csv", "m1.csv"],
        );
        assert_eq!(a, b);
        assert_eq!(a, c);
    }
}

#[test]
fn single_file_soft_average_reproduces_the_input() {
    let dir = fixture();
    let out = ok(
        dir.path(),
        &["ensemble", "--combiner", "soft", "m3.csv", "--out", "same.csv"],
    );
    assert!(out.is_empty());
    let input = std::fs::read_to_string(dir.path().join("m3.csv")).unwrap();
    let output = std::fs::read_to_string(dir.path().join("same.csv")).unwrap();
    let sorted = |s: &str| {
        let mut lines: Vec<String> = s.lines().map(str::to_string).collect();
        lines[1..].sort();
        lines
    };
    assert_eq!(sorted(&input), sorted(&output));
}

#[test]
fn duplicate_members_are_rejected() {
    let dir = fixture();
    assert!(!dermnet(dir.path(), &["ensemble", "m1.csv", "m1.csv"])
        .status
        .success());
}

#[test]
fn misaligned_members_are_rejected() {
    let dir = fixture();
    write(dir.path(), "short.csv", &[("ISIC_0000000", onehot(0))]);
    let out = dermnet(dir.path(), &["ensemble", "m1.csv", "short.csv"]);
    assert!(!out.status.success());
}

#[test]
fn truth_scored_against_itself_is_perfect() {
    let dir = fixture();
    let out = dermnet(dir.path(), &["--json", "score", "truth.csv", "truth.csv"]);
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["balanced_accuracy"], 1.0);
    assert_eq!(report["classes"][1], "NV");
}

#[test]
fn all_nv_predictor_scores_one_seventh() {
    let dir = fixture();
    let ids: Vec<String> = (0..14).map(|i| format!("ISIC_{i:07}")).collect();
    let rows: Vec<(&str, [f64; 7])> = ids.iter().map(|id| (id.as_str(), onehot(1))).collect();
    write(dir.path(), "nv.csv", &rows);
    let out = ok(dir.path(), &["score", "truth.csv", "nv.csv", "--json"]);
    let report: serde_json::Value = serde_json::from_str(&out).unwrap();
    let ba = report["balanced_accuracy"].as_f64().unwrap();
    assert!((ba - 1.0 / 7.0).abs() < 1e-9);
}

#[test]
fn text_score_lists_every_class() {
    let dir = fixture();
    let out = ok(dir.path(), &["score", "truth.csv", "m1.csv"]);
    for code in ["MEL", "NV", "BCC", "AKIEC", "BKL", "DF", "VASC"] {
        assert!(out.contains(code), "{out}");
    }
    assert!(out.contains("balanced accuracy"));
}

#[test]
fn unknown_backbone_is_a_usage_error() {
    let dir = fixture();
    let out = dermnet(dir.path(), &["train", "--backbone", "vgg16"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("vgg16"));
}

#[test]
fn missing_pretrained_weights_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        dir.path(),
        &["--seed", "3", "make-synthetic", "--out", "syn", "--images", "40"],
    );
    let syn = dir.path().join("syn");
    ok(&syn, &["--config", "config.json", "split"]);
    let out = dermnet(
        &syn,
        &["--config", "config.json", "train", "--backbone", "resnet50"],
    );
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("resnet50.safetensors"));
}
