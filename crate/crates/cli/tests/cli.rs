//! End-to-end tests of the `poicast` binary: every subcommand is run
//! against small corpora and its artifacts are checked against the
//! library computed on the same inputs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_poicast"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawning the binary")
}

fn run_ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "command {:?} failed\nstdout: {}\nstderr: {}",
        args,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Generates a small synthetic corpus into `dir` and returns the TSV path.
fn synth_corpus(dir: &Path, users: usize, pois: usize, seed: u64) -> PathBuf {
    let out = dir.display().to_string();
    run_ok(&[
        "synth",
        "--out",
        &out,
        "--seed",
        &seed.to_string(),
        "--synth-users",
        &users.to_string(),
        "--synth-pois",
        &pois.to_string(),
        "--synth-categories",
        "4",
        "--synth-groups",
        "3",
        "--checkins-per-user",
        "30",
    ]);
    dir.join("synthetic_checkins.tsv")
}

/// Ingests `tsv` into `dir` with a short observation window and small
/// model-friendly splits.
fn ingest(dir: &Path, tsv: &Path) -> Output {
    run_ok(&[
        "ingest",
        "--out",
        &dir.display().to_string(),
        "--checkins",
        &tsv.display().to_string(),
        "--format",
        "foursquare",
        "--n",
        "5",
    ])
}

/// Flags that shrink the model enough for test-speed training.
fn small_model_flags() -> Vec<String> {
    [
        ("--d-poi", "8"),
        ("--d-cat", "4"),
        ("--d-time", "4"),
        ("--d-user", "4"),
        ("--layers", "1"),
        ("--heads", "2"),
        ("--d-ffn", "16"),
        ("--dropout", "0.0"),
        ("--k-max", "2"),
        ("--n", "5"),
        ("--batch-size", "64"),
        ("--max-epochs", "2"),
        ("--patience", "2"),
    ]
    .iter()
    .flat_map(|(k, v)| [k.to_string(), v.to_string()])
    .collect()
}

#[test]
fn ingest_reports_counts_and_window_arithmetic() {
    let tmp = TempDir::new().unwrap();
    let tsv = synth_corpus(tmp.path(), 8, 20, 0);
    let out = ingest(tmp.path(), &tsv);
    let text = stdout(&out);

    // Recompute both summary lines with the library on the same artifacts.
    use poicast::data::{build_poi_registry, parse_checkins, split, CategoryScheme, SourceFormat};
    let (log, _) = parse_checkins(&tsv, SourceFormat::Foursquare).unwrap();

    // First line: the corpus summary in `users / POIs / check-ins` form
    // (POIs counts *visited* venues, which can be fewer than generated).
    let first = text.lines().next().unwrap();
    assert_eq!(
        first,
        format!(
            "{} users / {} POIs / {} check-ins",
            log.user_count(),
            log.poi_count(),
            log.checkin_count()
        )
    );
    assert!(first.starts_with("8 users / "));
    assert!(first.ends_with(" / 240 check-ins"));

    // Second line: window counts from the split arithmetic.
    let registry = build_poi_registry(&log, &CategoryScheme::foursquare(), 0.8).unwrap();
    let expected = split(&log, &registry, 5, 0.8, 0.1).unwrap();
    let second = text.lines().nth(1).unwrap();
    assert_eq!(second, expected.summary());
    assert!(tmp.path().join("dataset.json").is_file());
    assert!(tmp.path().join("split.json").is_file());
}

#[test]
fn ingest_of_empty_input_exits_nonzero() {
    let tmp = TempDir::new().unwrap();
    let tsv = tmp.path().join("empty.tsv");
    fs::write(&tsv, "").unwrap();
    let out = run(&[
        "ingest",
        "--out",
        &tmp.path().display().to_string(),
        "--checkins",
        &tsv.display().to_string(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(
        stderr(&out).contains("no check-ins parsed"),
        "stderr was: {}",
        stderr(&out)
    );
}

/// Three users over three POIs with visit counts (2,1,0), (1,1,0), and
/// (0,2,1): pairwise cosines 3/sqrt(10) ~ 0.95, 2/5 = 0.4, and
/// 2/sqrt(10) ~ 0.63, so tau = 0.5 keeps exactly two edges.
fn cosine_fixture(dir: &Path) -> PathBuf {
    let lines = [
        ("uA", "p0"),
        ("uA", "p0"),
        ("uA", "p1"),
        ("uB", "p0"),
        ("uB", "p1"),
        ("uC", "p1"),
        ("uC", "p1"),
        ("uC", "p2"),
    ];
    let mut text = String::new();
    for (i, (user, poi)) in lines.iter().enumerate() {
        text.push_str(&format!(
            "{user}\t2012-04-0{}T10:00:00Z\t40.0\t-74.0\t{poi}\n",
            i + 1
        ));
    }
    let tsv = dir.join("cosine.tsv");
    fs::write(&tsv, text).unwrap();
    tsv
}

#[test]
fn neighbors_respects_threshold_and_edge_files() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().display().to_string();
    let tsv = cosine_fixture(tmp.path());
    run_ok(&[
        "ingest",
        "--out",
        &dir,
        "--checkins",
        &tsv.display().to_string(),
        "--format",
        "gowalla",
        "--train-frac",
        "0.99",
    ]);

    // With so few check-ins per user, a 0.99 training fraction rounds to
    // the full history, so the hand-computed visit vectors apply exactly.

    // A threshold above 1 keeps nothing.
    run_ok(&["neighbors", "--out", &dir, "--train-frac", "0.99", "--tau", "1.01"]);
    let graph = fs::read_to_string(tmp.path().join("neighbors.tsv")).unwrap();
    assert_eq!(graph, "", "tau=1.01 should yield an empty graph");

    // tau = 0.5 keeps the 0.95 and 0.63 pairs, not the 0.4 pair.
    let out = run_ok(&["neighbors", "--out", &dir, "--train-frac", "0.99", "--tau", "0.5"]);
    assert!(stdout(&out).contains("2 edges"), "stdout: {}", stdout(&out));
    let graph = fs::read_to_string(tmp.path().join("neighbors.tsv")).unwrap();
    let edges: Vec<(&str, &str)> = graph
        .lines()
        .map(|l| {
            let mut it = l.split('\t');
            (it.next().unwrap(), it.next().unwrap())
        })
        .collect();
    assert_eq!(edges, vec![("uA", "uB"), ("uB", "uC")]);

    // A provided edges file is passed through instead of being recomputed.
    let edges_path = tmp.path().join("edges.tsv");
    fs::write(&edges_path, "uA\tuC\n").unwrap();
    run_ok(&[
        "neighbors",
        "--out",
        &dir,
        "--edges",
        &edges_path.display().to_string(),
    ]);
    let graph = fs::read_to_string(tmp.path().join("neighbors.tsv")).unwrap();
    assert_eq!(graph, "uA\tuC\t1\n");
}

#[test]
fn synth_is_reproducible_and_config_file_merges_under_flags() {
    let tmp = TempDir::new().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    synth_corpus(&a, 6, 15, 3);
    synth_corpus(&b, 6, 15, 3);
    let ca = fs::read_to_string(a.join("synthetic_checkins.tsv")).unwrap();
    let cb = fs::read_to_string(b.join("synthetic_checkins.tsv")).unwrap();
    assert_eq!(ca, cb, "same seed and config must be byte-identical");
    let ga = fs::read_to_string(a.join("synthetic_groups.tsv")).unwrap();
    let gb = fs::read_to_string(b.join("synthetic_groups.tsv")).unwrap();
    assert_eq!(ga, gb);

    // File overrides the default; a flag overrides the file.
    let cfg_path = tmp.path().join("cfg.json");
    let c = tmp.path().join("c");
    fs::write(
        &cfg_path,
        format!(
            "{{\"synth-users\": 5, \"synth-pois\": 15, \"synth-groups\": 3, \"out\": \"{}\"}}",
            c.display()
        ),
    )
    .unwrap();
    run_ok(&["synth", "--config", &cfg_path.display().to_string()]);
    let users = |text: &str| {
        let mut set = std::collections::BTreeSet::new();
        for line in text.lines() {
            set.insert(line.split('\t').next().unwrap().to_string());
        }
        set.len()
    };
    let from_file = fs::read_to_string(c.join("synthetic_checkins.tsv")).unwrap();
    assert_eq!(users(&from_file), 5, "file value should override the default");

    run_ok(&[
        "synth",
        "--config",
        &cfg_path.display().to_string(),
        "--synth-users",
        "3",
    ]);
    let from_flag = fs::read_to_string(c.join("synthetic_checkins.tsv")).unwrap();
    assert_eq!(users(&from_flag), 3, "flag should override the file value");
}

#[test]
fn train_writes_artifacts_and_reruns_byte_identically() {
    let tmp = TempDir::new().unwrap();
    let tsv = synth_corpus(tmp.path(), 8, 20, 0);

    let mut dirs = Vec::new();
    for name in ["run1", "run2"] {
        let dir = tmp.path().join(name);
        ingest(&dir, &tsv);
        let mut args: Vec<String> = vec![
            "train".into(),
            "--out".into(),
            dir.display().to_string(),
            "--variant".into(),
            "V0".into(),
            "--seed".into(),
            "0".into(),
        ];
        args.extend(small_model_flags());
        let argv: Vec<&str> = args.iter().map(String::as_str).collect();
        run_ok(&argv);
        assert!(dir.join("model.ckpt").is_file());
        assert!(dir.join("metrics.jsonl").is_file());
        dirs.push(dir);
    }
    let ckpt1 = fs::read(dirs[0].join("model.ckpt")).unwrap();
    let ckpt2 = fs::read(dirs[1].join("model.ckpt")).unwrap();
    assert_eq!(ckpt1, ckpt2, "checkpoints of identical runs must match byte for byte");
    let m1 = fs::read_to_string(dirs[0].join("metrics.jsonl")).unwrap();
    let m2 = fs::read_to_string(dirs[1].join("metrics.jsonl")).unwrap();
    assert_eq!(m1, m2);
    assert!(!m1.is_empty());
}

#[test]
fn random_init_eval_sits_at_chance_level() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().display().to_string();
    // 100 POIs with every planted signal off: targets are near-uniform, so
    // any fixed predictor hits at ~1/100.
    run_ok(&[
        "synth",
        "--out",
        &dir,
        "--seed",
        "0",
        "--synth-users",
        "40",
        "--synth-pois",
        "100",
        "--synth-categories",
        "4",
        "--synth-groups",
        "3",
        "--checkins-per-user",
        "40",
        "--semantic-strength",
        "0.0",
        "--social-strength",
        "0.0",
        "--geo-strength",
        "0.0",
    ]);
    let tsv = tmp.path().join("synthetic_checkins.tsv");
    ingest(tmp.path(), &tsv);

    let mut args: Vec<String> = vec![
        "eval".into(),
        "--out".into(),
        dir.clone(),
        "--random-init".into(),
        "--variant".into(),
        "V0".into(),
        "--seed".into(),
        "0".into(),
    ];
    args.extend(small_model_flags());
    let argv: Vec<&str> = args.iter().map(String::as_str).collect();
    run_ok(&argv);

    let record: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("eval.json")).unwrap()).unwrap();
    let acc1 = record["acc1"].as_f64().unwrap();
    // Test windows: 40 users x 8 held-out targets = 320. Three binomial
    // standard deviations around p = 1/100: 3 * sqrt(.01*.99/320) ~ 0.0167.
    assert!(
        (acc1 - 0.01).abs() <= 0.0167,
        "random-init top-1 {acc1} is not within 3 sigma of chance"
    );
}

#[test]
fn eval_rejects_checkpoints_from_other_datasets() {
    let tmp = TempDir::new().unwrap();
    let dir_a = tmp.path().join("a");
    let dir_b = tmp.path().join("b");
    let tsv_a = synth_corpus(&dir_a, 8, 20, 0);
    let tsv_b = synth_corpus(&dir_b, 9, 25, 1);
    ingest(&dir_a, &tsv_a);
    ingest(&dir_b, &tsv_b);

    let mut args: Vec<String> = vec![
        "train".into(),
        "--out".into(),
        dir_a.display().to_string(),
        "--variant".into(),
        "V0".into(),
    ];
    args.extend(small_model_flags());
    let argv: Vec<&str> = args.iter().map(String::as_str).collect();
    run_ok(&argv);

    // Same checkpoint against dataset B must fail, printing both prints.
    let out = run(&[
        "eval",
        "--out",
        &dir_b.display().to_string(),
        "--checkpoint",
        &dir_a.join("model.ckpt").display().to_string(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("checkpoint fingerprint:"), "stderr: {err}");
    assert!(err.contains("dataset fingerprint:"), "stderr: {err}");
    assert!(err.contains("do not match"), "stderr: {err}");

    // And the matching dataset still evaluates fine.
    let out = run_ok(&[
        "eval",
        "--out",
        &dir_a.display().to_string(),
        "--checkpoint",
        &dir_a.join("model.ckpt").display().to_string(),
    ]);
    assert!(stdout(&out).contains("test split:"));
    assert!(dir_a.join("eval.json").is_file());
}

#[test]
fn ablate_writes_one_row_per_variant_seed_pair() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().display().to_string();
    let tsv = synth_corpus(tmp.path(), 8, 20, 0);
    ingest(tmp.path(), &tsv);

    let mut args: Vec<String> = vec![
        "ablate".into(),
        "--out".into(),
        dir.clone(),
        "--variants".into(),
        "V0,V1".into(),
        "--seeds".into(),
        "0,1".into(),
    ];
    args.extend(small_model_flags());
    let argv: Vec<&str> = args.iter().map(String::as_str).collect();
    run_ok(&argv);

    let csv = fs::read_to_string(tmp.path().join("ablation.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "variant,seed,acc1,acc5,acc10,acc20");
    assert_eq!(lines.len(), 1 + 2 * 2, "one row per (variant, seed) pair");
    for (i, expected) in ["V0,0,", "V1,0,", "V0,1,", "V1,1,"].iter().enumerate() {
        assert!(
            lines[i + 1].starts_with(expected),
            "row {i} was {}",
            lines[i + 1]
        );
    }
}

#[test]
fn analyze_writes_histogram_clips_and_social_tables() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().display().to_string();
    let tsv = synth_corpus(tmp.path(), 8, 20, 0);
    ingest(tmp.path(), &tsv);
    run_ok(&[
        "analyze",
        "--out",
        &dir,
        "--groups",
        &tmp.path().join("synthetic_groups.tsv").display().to_string(),
    ]);

    let hist = fs::read_to_string(tmp.path().join("hourly_histogram.csv")).unwrap();
    let mut lines = hist.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("category,h0,h1,"));
    assert!(header.ends_with(",h23"));
    // One row per category in the registry (synthetic corpora map onto the
    // bundled scheme plus its trailing catch-all).
    assert!(lines.count() >= 4);

    let clips = fs::read_to_string(tmp.path().join("clip_distances.csv")).unwrap();
    assert!(clips.starts_with("statistic,value\n"));
    assert!(clips.contains("intra_clip_mean_distance,"));
    assert!(clips.contains("inter_clip_mean_distance,"));

    let dtw = fs::read_to_string(tmp.path().join("dtw_social.csv")).unwrap();
    assert!(dtw.contains("friend_mean_dtw,"));
    assert!(dtw.contains("stranger_mean_dtw,"));
}
