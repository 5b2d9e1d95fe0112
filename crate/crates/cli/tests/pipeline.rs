mod common;

use std::collections::BTreeMap;
use std::fs;

use annotate::service::{system_clock, CloseRequest, CreateSession, FrameStore, Next, Service, SubmitLabel};
use common::Workspace;
use revcorpus::corpus::{parse_corpus, parse_example, ReviewExample};
use revcorpus::evaluation::{CommentCategory, FeedbackType, Judgment};
use revcorpus::manifest::{sha256_hex, Manifest};

#[test]
fn ledger_matches_hand_counts() {
    let ws = Workspace::new();
    ws.ok(&["mine"]);
    ws.ok(&["curate"]);
    assert_eq!(
        ws.read("out/curate/ledger.csv"),
        "split,original,deleted,bots,code_only,final\n\
         train,16,2,2,1,11\n\
         validation,4,1,0,0,3\n\
         test,6,0,0,1,5\n"
    );
    assert_eq!(
        ws.read("out/curate/accounts.csv"),
        "split,reviewer_accounts,bot_accounts\ntrain,7,2\nvalidation,3,0\ntest,5,0\n"
    );
}

#[test]
fn quadrants_follow_the_fixture_design() {
    let ws = Workspace::new();
    ws.through_experience();
    let examples = parse_corpus(&ws.read("out/experience/corpus.jsonl")).unwrap();
    let by_pr: BTreeMap<(String, u64), &str> = examples
        .iter()
        .map(|e| ((e.repo.clone(), e.pr_id), e.experience.unwrap().class.code()))
        .collect();
    let q = |repo: &str, pr: u64| by_pr[&(repo.to_owned(), pr)];
    assert_eq!(q("acme/widgets", 12), "major_reviewer_major_author");
    assert_eq!(q("acme/widgets", 14), "major_reviewer_minor_author");
    assert_eq!(q("acme/widgets", 25), "minor_reviewer_minor_author");
    assert_eq!(q("acme/widgets", 28), "minor_reviewer_major_author");
    // judy reviews PR 6 and becomes a major reviewer only after it.
    assert_eq!(q("lone/tool", 6), "minor_reviewer_major_author");
    assert_eq!(q("lone/tool", 8), "major_reviewer_major_author");
    // frank's commits carry no login; the identity file maps them to him.
    let frank = examples.iter().find(|e| e.pr_id == 25).unwrap();
    assert_eq!(frank.experience.unwrap().scores.aco(), 1.0 / 40.0);

    let table = ws.ok(&["stats"]);
    assert_eq!(
        table,
        "author,major_reviewer_train,major_reviewer_validation,major_reviewer_test,minor_reviewer_train,minor_reviewer_validation,minor_reviewer_test\n\
         major_author,46,34,60,18,33,0\n\
         minor_author,27,33,20,9,0,20\n"
    );
}

/// The oversampled training file repeats records on purpose.
fn records(text: &str) -> Vec<ReviewExample> {
    text.lines().map(|l| parse_example(l).unwrap()).collect()
}

#[test]
fn oversample_replicates_targets_and_leaves_eval_splits_alone() {
    let ws = Workspace::new();
    ws.through_experience();
    ws.ok(&["oversample"]);
    let train = records(&ws.read("out/splits/train.jsonl"));
    // 5 of 11 training examples are MRMA: 11 + 3 * 5.
    assert_eq!(train.len(), 26);
    let mut copies: BTreeMap<String, usize> = BTreeMap::new();
    for e in &train {
        *copies.entry(e.key().to_string()).or_default() += 1;
    }
    for e in &train {
        let expected = if e.experience.unwrap().class.code() == "major_reviewer_major_author" {
            4
        } else {
            1
        };
        assert_eq!(copies[&e.key().to_string()], expected, "{}", e.key());
    }
    let val = ws.read("out/splits/validation.jsonl");
    let test = ws.read("out/splits/test.jsonl");
    ws.ok(&[
        "emit",
        "--target",
        "ma",
        "--factor",
        "1",
        "--no-shuffle",
        "--out",
        "out/plain",
    ]);
    assert_eq!(ws.read("out/plain/validation.jsonl"), val);
    assert_eq!(ws.read("out/plain/test.jsonl"), test);
    assert_eq!(records(&ws.read("out/plain/train.jsonl")).len(), 11);
}

#[test]
fn manifests_carry_config_and_checksums() {
    let ws = Workspace::new();
    ws.through_experience();
    for stage in ["mine", "curate", "experience"] {
        let m = Manifest::load(&ws.path(&format!("out/{stage}"))).unwrap();
        assert_eq!(m.stage, stage);
        assert_eq!(m.seed, Some(42));
        assert_eq!(m.config["paths"]["fixtures"], "api");
        assert_eq!(m.config_hash, sha256_hex(m.config.to_string().as_bytes()));
        for (file, digest) in &m.outputs {
            let bytes = fs::read(ws.path(&format!("out/{stage}/{file}"))).unwrap();
            assert_eq!(digest.sha256, sha256_hex(&bytes), "{stage}/{file}");
        }
    }
    let m = Manifest::load(&ws.path("out/experience")).unwrap();
    assert!(m.inputs.contains_key("curate/corpus.jsonl"));
    assert!(m.inputs.contains_key("mine/participation.json"));
    assert!(m.inputs.contains_key("history:acme/widgets"));
    assert!(m.inputs.contains_key("identities"));
}

#[test]
fn stages_are_idempotent() {
    let ws = Workspace::new();
    ws.through_experience();
    let first = ws.read("out/experience/corpus.jsonl");
    let manifest = ws.read("out/experience/manifest.json");
    ws.ok(&["experience"]);
    assert_eq!(ws.read("out/experience/corpus.jsonl"), first);
    assert_eq!(ws.read("out/experience/manifest.json"), manifest);
}

#[test]
fn tampered_or_missing_inputs_are_refused() {
    let ws = Workspace::new();
    ws.ok(&["mine"]);
    let path = ws.path("out/mine/corpus.jsonl");
    let mut text = fs::read_to_string(&path).unwrap();
    text.push('\n');
    fs::write(&path, text).unwrap();
    let (code, err) = ws.code(&["curate"]);
    assert_eq!(code, 1);
    assert!(err.contains("checksum mismatch"), "{err}");

    fs::create_dir_all(ws.path("empty")).unwrap();
    let (code, err) = ws.code(&["curate", "--in", "empty"]);
    assert_eq!(code, 1);
    assert!(err.contains("no manifest"), "{err}");
}

#[test]
fn exit_statuses() {
    let ws = Workspace::new();
    let (code, err) = ws.code(&["frobnicate"]);
    assert_eq!(code, 1);
    assert!(err.contains("Usage"), "{err}");
    assert_eq!(ws.code(&["mine", "--corpus", "missing.jsonl"]).0, 2);
    let (code, err) = ws.code(&["mine", "--corpus", "config.toml"]);
    assert_eq!(code, 1, "{err}");
    fs::write(ws.path("live.toml"), "[paths]\ncorpus = \"corpus.jsonl\"\n").unwrap();
    let out = ws.run_raw(&["--config", "live.toml", "mine"]);
    let err = String::from_utf8_lossy(&out.stderr);
    assert_eq!(out.status.code(), Some(1));
    assert!(err.contains("GITHUB_TOKEN"), "{err}");
    let (code, _) = ws.code(&["experience", "--threshold", "1.5"]);
    assert_eq!(code, 1);
    let out = ws.run(&["--help"]);
    assert!(out.status.success());
}

#[test]
fn bleu_by_partition() {
    let ws = Workspace::new();
    ws.through_experience();
    ws.ok(&["oversample"]);
    let csv = ws.ok(&["bleu", "--hypotheses", "hypotheses/baseline.txt", "--by-partition"]);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "partition,count,bleu4");
    // Test split: bob, alice (MRMA), erin (MR), frank (minor), judy (MRMA).
    let counts: Vec<&str> = lines[1..].iter().map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(counts, ["5", "3", "4", "3"]);
    let (code, err) = ws.code(&["bleu", "--hypotheses", "corpus.jsonl"]);
    assert_eq!(code, 1);
    assert!(err.contains("lines"), "{err}");
}

fn judge(text: &str, oversampled: &[String]) -> Judgment {
    if oversampled.iter().any(|t| t == text) {
        Judgment::applicable(true, FeedbackType::Suggestion, true, CommentCategory::Logical)
    } else {
        Judgment::not_applicable(false, false)
    }
}

#[test]
fn sample_annotate_report() {
    let ws = Workspace::new();
    ws.through_experience();
    ws.ok(&["oversample"]);
    ws.ok(&[
        "sample",
        "--model",
        "baseline=hypotheses/baseline.txt",
        "--model",
        "oversampled=hypotheses/oversampled.txt",
    ]);
    let sample = Manifest::load(&ws.path("out/sample")).unwrap();
    assert_eq!(sample.params["n"], 5);
    let frames = FrameStore::load_dir(&ws.path("out/sample/frames")).unwrap();
    let frame_id = frames.ids().next().unwrap().to_owned();
    let frame = frames.get(&frame_id).unwrap().clone();
    for item in &frame.items {
        let line = serde_json::to_string(item).unwrap();
        assert!(!line.contains("baseline") && !line.contains("oversampled"), "{line}");
    }
    let oversampled: Vec<String> = ws
        .read("hypotheses/oversampled.txt")
        .lines()
        .map(str::to_owned)
        .collect();

    let mut svc = Service::open(&ws.path("out/annotations/events.jsonl"), frames, system_clock()).unwrap();
    let sid = svc
        .create_session(CreateSession {
            frame_id,
            annotators: vec!["ann".into(), "rev".into()],
            calibration_size: Some(2),
            seed: Some(1),
        })
        .unwrap()
        .session_id;
    for annotator in ["ann", "rev", "ann"] {
        while let Next::Item { item, .. } = svc.next_item(&sid, annotator).unwrap() {
            for alias in &item.pending {
                let text = &item.comments.iter().find(|c| &c.alias == alias).unwrap().text;
                svc.submit_label(
                    &sid,
                    SubmitLabel {
                        annotator: annotator.into(),
                        sample_id: item.sample_id,
                        alias: alias.clone(),
                        judgment: judge(text, &oversampled),
                    },
                )
                .unwrap();
            }
        }
    }
    svc.close(
        &sid,
        CloseRequest {
            annotator: "rev".into(),
        },
    )
    .unwrap();
    let mut export = String::new();
    for r in svc.export(&sid).unwrap() {
        export.push_str(&serde_json::to_string(&r).unwrap());
        export.push('\n');
    }
    assert!(!export.contains("model_id"));
    fs::write(ws.path("export.jsonl"), export).unwrap();

    ws.ok(&["report", "--export", "export.jsonl"]);
    assert_eq!(
        ws.read("out/report/rq2.csv"),
        "metric,baseline,oversampled\n\
         applicability,0,5\n\
         suggestion,0,5\n\
         concern,0,0\n\
         confused_question,0,0\n\
         explanation,0,5\n"
    );
    let annotations = ws.read("out/report/annotations.jsonl");
    assert_eq!(annotations.lines().count(), 10);
    assert!(annotations.contains("\"model_id\":\"oversampled\""));
    let se = ws.read("out/report/rq1_se.csv");
    assert!(
        se.starts_with("model,partition,semantically_equivalent,judged\n"),
        "{se}"
    );
    assert!(se.contains("oversampled,all,5,5"), "{se}");
}
