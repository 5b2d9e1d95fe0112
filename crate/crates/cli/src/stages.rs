//! One function per pipeline stage. Each reads checksum-verified inputs,
//! writes its outputs and a `manifest.json` into its own directory.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use revcorpus::corpus::{parse_corpus, render_corpus, split_repo, DatasetSplit, ReviewExample};
use revcorpus::curation::{curate as curate_examples, BotRegistry, DEFAULT_BOT_LIST};
use revcorpus::evaluation::bleu::PartitionRow;
use revcorpus::evaluation::sampling::BlindingMap;
use revcorpus::evaluation::{
    aggregate_report, corpus_bleu4, draw_sample, partitioned_metrics, sample_size, unblind, BlindedRecord, Partition,
    SampleFrame, ScoredPair,
};
use revcorpus::experience::{attach_experience, in_target, partition_stats, stats_csv, ExperienceClass, RepoActivity};
use revcorpus::manifest::{read_stage_input, FileDigest, Manifest};
use revcorpus::miner::{
    AuthorIdentity, CommitHistory, FetchResult, FixtureTransport, GithubClient, HttpTransport, PrParticipation,
    RateBudget, ResponseCache, SystemClock, Transport, TOKEN_ENV,
};
use revcorpus::oversample::{
    achieved_ratio, emit_splits, oversample as oversample_train, split_file_name, EmitContext,
};

use crate::config::PipelineConfig;
use crate::error::CliError;

pub const CORPUS: &str = "corpus.jsonl";
pub const PARTICIPATION: &str = "participation.json";
pub const BLINDING: &str = "blinding.json";

fn new_manifest(stage: &str, config: &PipelineConfig) -> Manifest {
    let mut m = Manifest::new(stage).with_config(config.to_json());
    m.seed = Some(config.seed);
    m
}

fn put(dir: &Path, m: &mut Manifest, name: &str, bytes: &[u8], records: Option<u64>) -> Result<(), CliError> {
    let path = dir.join(name);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::from(e).context(parent.display()))?;
    }
    fs::write(&path, bytes).map_err(|e| CliError::from(e).context(path.display()))?;
    m.outputs.insert(name.to_owned(), FileDigest::of(bytes, records));
    Ok(())
}

fn finish(dir: &Path, m: &Manifest) -> Result<(), CliError> {
    m.write(dir).map_err(|e| CliError::from(e).context(dir.display()))
}

fn utf8(bytes: Vec<u8>, what: impl std::fmt::Display) -> Result<String, CliError> {
    String::from_utf8(bytes).map_err(|_| CliError::Validation(format!("{what}: not valid UTF-8")))
}

/// Verified bytes of `file` from an upstream stage directory, recorded as an input of `m`.
fn stage_input(dir: &Path, file: &str, m: &mut Manifest) -> Result<(Manifest, Vec<u8>), CliError> {
    let (upstream, bytes) = read_stage_input(dir, file)?;
    let label = format!("{}/{file}", upstream.stage);
    m.inputs.insert(label, FileDigest::of(&bytes, upstream.records(file)));
    Ok((upstream, bytes))
}

fn stage_corpus(dir: &Path, m: &mut Manifest) -> Result<Vec<ReviewExample>, CliError> {
    let (_, bytes) = stage_input(dir, CORPUS, m)?;
    let path = dir.join(CORPUS);
    parse_corpus(&utf8(bytes, path.display())?).map_err(|e| CliError::from(e).context(path.display()))
}

/// An external file, recorded as an input of `m` under `label`.
fn external_input(path: &Path, label: &str, m: &mut Manifest) -> Result<Vec<u8>, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::from(e).context(path.display()))?;
    m.inputs.insert(label.to_owned(), FileDigest::of(&bytes, None));
    Ok(bytes)
}

fn json_bytes<T: serde::Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("value serializes");
    v.push(b'\n');
    v
}

/// Resolves reviewer and time for every example and collects review
/// participation for every repository with at least one surviving comment.
pub fn mine(config: &PipelineConfig, out: &Path) -> Result<Manifest, CliError> {
    let mut m = new_manifest("mine", config);
    let corpus_path = &config.paths.corpus;
    let bytes = external_input(corpus_path, "corpus", &mut m)?;
    let mut examples = parse_corpus(&utf8(bytes, corpus_path.display())?)
        .map_err(|e| CliError::from(e).context(corpus_path.display()))?;

    let (transport, cache, mode): (Arc<dyn Transport>, _, _) = match &config.paths.fixtures {
        Some(dir) => {
            if !dir.is_dir() {
                return Err(CliError::Io(format!(
                    "fixtures directory {} does not exist",
                    dir.display()
                )));
            }
            // Fixtures are already a recording; caching them would leak into later live runs.
            (Arc::new(FixtureTransport::new(dir)), None, "fixtures")
        }
        None => {
            let transport = HttpTransport::from_env().ok_or_else(|| {
                CliError::Validation(format!("{TOKEN_ENV} is not set; export it or configure paths.fixtures"))
            })?;
            (
                Arc::new(transport),
                Some(ResponseCache::open(&config.paths.cache)?),
                "live",
            )
        }
    };
    let budget = Arc::new(RateBudget::new(1, Arc::new(SystemClock)));
    let client = GithubClient::new(transport, budget, cache);

    let (mut found, mut deleted) = (0u64, 0u64);
    for e in &mut examples {
        match client.fetch_review_meta(&e.repo, e.pr_id, &e.r_nl)? {
            FetchResult::Found { reviewer, created_at } => {
                e.reviewer = reviewer;
                e.created_at = Some(created_at);
                found += 1;
            }
            FetchResult::Deleted => {
                e.reviewer.clear();
                e.created_at = None;
                deleted += 1;
            }
        }
    }
    log::info!("resolved {found} comments, {deleted} deleted");

    let repos: BTreeSet<String> = examples
        .iter()
        .filter(|e| e.is_mined())
        .map(|e| e.repo.clone())
        .collect();
    let mut participation: BTreeMap<String, PrParticipation> = BTreeMap::new();
    for repo in repos {
        log::info!("collecting review participation for {repo}");
        let p = client.fetch_participation(&repo)?;
        participation.insert(repo, p);
    }

    m.params = serde_json::json!({ "mode": mode, "found": found, "deleted": deleted });
    put(
        out,
        &mut m,
        CORPUS,
        &render_corpus(&examples),
        Some(examples.len() as u64),
    )?;
    put(
        out,
        &mut m,
        PARTICIPATION,
        &json_bytes(&participation),
        Some(participation.len() as u64),
    )?;
    finish(out, &m)?;
    Ok(m)
}

/// Applies the deletion, bot and code-only filters and writes the ledger.
pub fn curate(config: &PipelineConfig, input: &Path, out: &Path) -> Result<Manifest, CliError> {
    let mut m = new_manifest("curate", config);
    let examples = stage_corpus(input, &mut m)?;
    let registry = match &config.paths.bots {
        Some(path) => {
            let extra = utf8(external_input(path, "bots", &mut m)?, path.display())?;
            BotRegistry::parse(&format!("{DEFAULT_BOT_LIST}\n{extra}"))
        }
        None => BotRegistry::parse(DEFAULT_BOT_LIST),
    };
    // The mined corpus encodes each lookup: a resolved reviewer, or nothing.
    let fetched: HashMap<_, _> = examples
        .iter()
        .map(|e| {
            let result = match e.created_at {
                Some(created_at) if !e.reviewer.is_empty() => FetchResult::Found {
                    reviewer: e.reviewer.clone(),
                    created_at,
                },
                _ => FetchResult::Deleted,
            };
            (e.key(), result)
        })
        .collect();
    let (kept, ledger) = curate_examples(&examples, &fetched, &registry)?;
    log::info!("kept {} of {} examples", kept.len(), examples.len());
    put(out, &mut m, CORPUS, &render_corpus(&kept), Some(kept.len() as u64))?;
    put(out, &mut m, "ledger.csv", ledger.to_csv().as_bytes(), None)?;
    put(out, &mut m, "accounts.csv", ledger.accounts_csv().as_bytes(), None)?;
    finish(out, &m)?;
    Ok(m)
}

/// Commit history for `repo` from `<repos>/<owner>/<name>.commits.json`, or
/// from a clone at `<repos>/<owner>/<name>`.
pub fn load_history(repos: &Path, repo: &str) -> Result<CommitHistory, CliError> {
    let (owner, name) = split_repo(repo).ok_or_else(|| CliError::Validation(format!("bad repository {repo:?}")))?;
    let json = repos.join(owner).join(format!("{name}.commits.json"));
    let clone = repos.join(owner).join(name);
    if json.is_file() {
        let text = fs::read_to_string(&json).map_err(|e| CliError::from(e).context(json.display()))?;
        CommitHistory::from_json(&text).map_err(|e| CliError::from(e).context(json.display()))
    } else if clone.is_dir() {
        CommitHistory::from_git(&clone).map_err(|e| CliError::Io(e.to_string()))
    } else {
        Err(CliError::Io(format!(
            "no commit history for {repo}: expected {} or a clone at {}",
            json.display(),
            clone.display()
        )))
    }
}

fn load_identities(path: &Path, m: &mut Manifest) -> Result<BTreeMap<String, AuthorIdentity>, CliError> {
    let bytes = external_input(path, "identities", m)?;
    let raw: BTreeMap<String, Vec<(String, String)>> =
        serde_json::from_slice(&bytes).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    Ok(raw
        .into_iter()
        .map(|(login, aliases)| {
            let identity = AuthorIdentity {
                login: login.clone(),
                aliases,
            };
            (login, identity)
        })
        .collect())
}

/// Scores every curated example against the activity before its pull request.
pub fn experience(config: &PipelineConfig, input: &Path, mined: &Path, out: &Path) -> Result<Manifest, CliError> {
    let threshold = config.experience.threshold;
    if !(0.0..=1.0).contains(&threshold) {
        return Err(CliError::Validation(format!(
            "ownership threshold {threshold} is outside [0, 1]"
        )));
    }
    let mut m = new_manifest("experience", config);
    let mut examples = stage_corpus(input, &mut m)?;
    let (_, bytes) = stage_input(mined, PARTICIPATION, &mut m)?;
    let participation: BTreeMap<String, PrParticipation> = serde_json::from_slice(&bytes)
        .map_err(|e| CliError::Validation(format!("{}: {e}", mined.join(PARTICIPATION).display())))?;
    let identities = match &config.paths.identities {
        Some(path) => load_identities(path, &mut m)?,
        None => BTreeMap::new(),
    };

    let repos: BTreeSet<&str> = examples.iter().map(|e| e.repo.as_str()).collect();
    let mut activity = BTreeMap::new();
    for repo in repos {
        let history = load_history(&config.paths.repos, repo)?;
        let digest = FileDigest::of(&serde_json::to_vec(history.commits())?, Some(history.len() as u64));
        m.inputs.insert(format!("history:{repo}"), digest);
        let participation = participation
            .get(repo)
            .cloned()
            .ok_or_else(|| CliError::Validation(format!("mine output has no review participation for {repo}")))?;
        activity.insert(repo.to_owned(), RepoActivity { history, participation });
    }
    attach_experience(&mut examples, &activity, &identities, threshold)?;
    put(
        out,
        &mut m,
        CORPUS,
        &render_corpus(&examples),
        Some(examples.len() as u64),
    )?;
    finish(out, &m)?;
    Ok(m)
}

/// Quadrant distribution per split. Returns the CSV table.
pub fn stats(config: &PipelineConfig, input: &Path, out: &Path) -> Result<String, CliError> {
    let mut m = new_manifest("stats", config);
    let examples = stage_corpus(input, &mut m)?;
    let stats = partition_stats(&examples, &[])?;
    let csv = stats_csv(&stats);
    put(out, &mut m, "stats.csv", csv.as_bytes(), None)?;
    put(out, &mut m, "stats.json", &json_bytes(&stats), None)?;
    finish(out, &m)?;
    Ok(csv)
}

/// Oversamples the training split and emits all three splits.
pub fn oversample(config: &PipelineConfig, input: &Path, out: &Path) -> Result<Manifest, CliError> {
    let mut probe = new_manifest("oversample", config);
    let examples = stage_corpus(input, &mut probe)?;
    let mut by_split: BTreeMap<DatasetSplit, Vec<ReviewExample>> = BTreeMap::new();
    for e in examples {
        by_split.entry(e.split).or_default().push(e);
    }
    let mut take = |s: DatasetSplit| by_split.remove(&s).unwrap_or_default();
    let (train, validation, test) = (
        take(DatasetSplit::Train),
        take(DatasetSplit::Validation),
        take(DatasetSplit::Test),
    );
    let plan = config.plan();
    let train_out = oversample_train(&train, &plan)?;
    let context = EmitContext {
        inputs: probe.inputs.clone(),
        config: config.to_json(),
    };
    let mut m = emit_splits(&train_out, &validation, &test, out, &plan, &context)?;
    let targets = train
        .iter()
        .filter(|e| e.experience.is_some_and(|x| in_target(x.class, plan.target)))
        .count();
    let fraction = targets as f64 / train.len() as f64;
    let ratio = achieved_ratio(fraction, plan.factor).ok();
    if let serde_json::Value::Object(params) = &mut m.params {
        params.insert("target_fraction".into(), fraction.into());
        params.insert(
            "achieved_ratio".into(),
            ratio.map_or(serde_json::Value::Null, Into::into),
        );
    }
    finish(out, &m)?;
    log::info!("train {} -> {} examples", train.len(), train_out.len());
    Ok(m)
}

/// BLEU-4 of a hypothesis file (one comment per line, aligned with the
/// reference split) against a split's reference comments. Returns the CSV.
pub fn bleu(
    config: &PipelineConfig,
    input: &Path,
    split: DatasetSplit,
    hypotheses: &Path,
    by_partition: bool,
    out: &Path,
) -> Result<String, CliError> {
    let mut m = new_manifest("bleu", config);
    let file = split_file_name(split);
    let (_, bytes) = stage_input(input, &file, &mut m)?;
    let refs = parse_corpus(&utf8(bytes, &file)?)?;
    let hyp_text = utf8(external_input(hypotheses, "hypotheses", &mut m)?, hypotheses.display())?;
    let hyps: Vec<&str> = hyp_text.lines().collect();
    if hyps.len() != refs.len() {
        return Err(CliError::Validation(format!(
            "{} has {} lines but the {split} split has {} examples",
            hypotheses.display(),
            hyps.len(),
            refs.len()
        )));
    }
    let rows = if by_partition {
        let mut pairs = Vec::with_capacity(refs.len());
        for (h, r) in hyps.iter().zip(&refs) {
            let exp = r.experience.ok_or_else(|| {
                CliError::Validation(format!(
                    "{} has no quadrant; --by-partition needs classified references",
                    r.key()
                ))
            })?;
            pairs.push(ScoredPair {
                hypothesis: h,
                reference: &r.r_nl,
                class: exp.class,
                semantically_equivalent: None,
            });
        }
        partitioned_metrics(&pairs)
    } else {
        let pairs: Vec<(&str, &str)> = hyps.iter().copied().zip(refs.iter().map(|r| r.r_nl.as_str())).collect();
        vec![PartitionRow {
            partition: Partition::All,
            count: pairs.len(),
            bleu: corpus_bleu4(&pairs).ok(),
            se_equivalent: None,
            se_judged: None,
        }]
    };
    m.params = serde_json::json!({ "split": split, "by_partition": by_partition });
    let csv = revcorpus::evaluation::bleu::partition_csv(&rows);
    put(out, &mut m, "bleu.csv", csv.as_bytes(), None)?;
    put(out, &mut m, "bleu.json", &json_bytes(&rows), None)?;
    finish(out, &m)?;
    Ok(csv)
}

/// Parses `NAME=PATH`.
pub fn parse_model(spec: &str) -> Result<(String, PathBuf), String> {
    match spec.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => Ok((name.to_owned(), path.into())),
        _ => Err(format!("expected NAME=PATH, got {spec:?}")),
    }
}

/// Sizes and draws the blinded human-evaluation sample from the test split.
///
/// The frame goes to `frames/<frame_id>.jsonl`; the alias map stays in
/// `blinding.json` and is never handed to the annotation service.
pub fn sample(
    config: &PipelineConfig,
    input: &Path,
    models: &[(String, PathBuf)],
    out: &Path,
) -> Result<Manifest, CliError> {
    if models.is_empty() {
        return Err(CliError::Validation(
            "at least one --model NAME=PATH is required".into(),
        ));
    }
    let mut m = new_manifest("sample", config);
    let file = split_file_name(DatasetSplit::Test);
    let (_, bytes) = stage_input(input, &file, &mut m)?;
    let test = parse_corpus(&utf8(bytes, &file)?)?;
    let mut generated = BTreeMap::new();
    for (name, path) in models {
        let text = utf8(external_input(path, &format!("model:{name}"), &mut m)?, path.display())?;
        let lines: Vec<String> = text.lines().map(str::to_owned).collect();
        if generated.insert(name.clone(), lines).is_some() {
            return Err(CliError::Validation(format!("model {name} given twice")));
        }
    }
    let params = config.sampling_params(test.len() as u64);
    let n = match config.sampling.size {
        Some(n) => n,
        None => sample_size(&params)?,
    };
    let (frame, map) = draw_sample(&test, &generated, n as usize, config.seed)?;
    let frame_id = frame.frame_id();
    log::info!("drew {n} of {} test examples as frame {frame_id}", test.len());
    m.params = serde_json::json!({ "sampling": params, "n": n, "frame_id": frame_id });
    put(
        out,
        &mut m,
        &format!("frames/{frame_id}.jsonl"),
        frame.to_jsonl().as_bytes(),
        Some(frame.items.len() as u64),
    )?;
    put(out, &mut m, BLINDING, &json_bytes(&map), Some(map.entries.len() as u64))?;
    finish(out, &m)?;
    Ok(m)
}

/// Unblinds an exported annotation file and aggregates the results tables.
pub fn report(config: &PipelineConfig, export: &Path, sample_dir: &Path, out: &Path) -> Result<Manifest, CliError> {
    let mut m = new_manifest("report", config);
    let (upstream, bytes) = stage_input(sample_dir, BLINDING, &mut m)?;
    let map: BlindingMap = serde_json::from_slice(&bytes)?;
    let frame_file = format!("frames/{}.jsonl", map.frame_id);
    let frame_bytes = upstream
        .read_verified(sample_dir, &frame_file)
        .map_err(|e| CliError::from(e).context(sample_dir.display()))?;
    m.inputs.insert(
        format!("sample/{frame_file}"),
        FileDigest::of(&frame_bytes, upstream.records(&frame_file)),
    );
    let frame = SampleFrame::from_jsonl(&utf8(frame_bytes, &frame_file)?)?;
    let quadrants: BTreeMap<u32, ExperienceClass> = frame
        .items
        .iter()
        .filter_map(|i| i.quadrant.map(|q| (i.sample_id, q)))
        .collect();
    let quadrants = (quadrants.len() == frame.items.len()).then_some(quadrants);

    let text = utf8(external_input(export, "export", &mut m)?, export.display())?;
    let mut blinded = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let record: BlindedRecord = serde_json::from_str(line)
            .map_err(|e| CliError::Validation(format!("{} line {}: {e}", export.display(), i + 1)))?;
        blinded.push(record);
    }
    let records = unblind(&blinded, &map)?;
    let bundle = aggregate_report(&records, quadrants.as_ref())?;

    let mut annotations = String::new();
    for r in &records {
        annotations.push_str(&serde_json::to_string(r)?);
        annotations.push('\n');
    }
    put(
        out,
        &mut m,
        "annotations.jsonl",
        annotations.as_bytes(),
        Some(records.len() as u64),
    )?;
    put(out, &mut m, "rq2.csv", bundle.rq2_csv().as_bytes(), None)?;
    put(out, &mut m, "rq1_se.csv", bundle.rq1_se_csv().as_bytes(), None)?;
    put(out, &mut m, "categories.csv", bundle.categories_csv().as_bytes(), None)?;
    put(out, &mut m, "report.json", &json_bytes(&bundle), None)?;
    finish(out, &m)?;
    Ok(m)
}

pub fn invalidate_cache(config: &PipelineConfig, repo: Option<&str>) -> Result<(), CliError> {
    let cache = ResponseCache::open(&config.paths.cache)?;
    cache.invalidate_all(repo)?;
    Ok(())
}
