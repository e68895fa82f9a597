//! Pipeline stages. Each reads its predecessors' artifacts from the run
//! directory, writes its own, and records both in the manifest.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use biasmeta::corpus::{mine_with_options, MineOptions};
use biasmeta::experiment::{finetune_on, pretrain_base};
use biasmeta::hash::sha256_hex;
use biasmeta::measures::pairs::{generate_swap_pairs, read_pairs, write_pairs, SwapMap};
use biasmeta::measures::{plan_measures, read_scores, run_measures, write_scores, MeasureInputs, MeasurePlan};
use biasmeta::metaeval::{format_table, REFERENCE_COLUMNS, REFERENCE_PEARSON};
use biasmeta::mlm::ModelIdentity;
use biasmeta::probes::{
    default_occupations, parse_word_list, render_probe_svg, write_aggregate_csv, write_probe_csv, ProbePlan, TopK,
};
use biasmeta::scoring::protocol::{match_responses, read_requests, read_responses, write_requests, write_responses};
use biasmeta::scoring::score_all;
use biasmeta::{
    occupation_probe, run_meta_eval, sample_sweep, topk_probe, BiasDataset, GenderLexicon, GenderedCorpus,
    MaskedLm, MeasureScore, ProbeResult, ScoreRequest, ScoreResponse, SweepResult, TinyMlmScorer,
};
use serde::{Deserialize, Serialize};

use crate::config::{Backend, Settings};
use crate::manifest::{file_sha256, Run};

pub const PRONOUNS: (&str, &str) = ("he", "she");

pub const MINE_TRAIN: &str = "mine/train.jsonl";
pub const MINE_DEV: &str = "mine/dev.jsonl";
pub const MINE_STATS: &str = "mine/stats.json";
pub const MINE_PAIRS: &str = "mine/pairs.jsonl";
pub const DATASETS: &str = "sample/datasets.jsonl";
pub const BASE_CKPT: &str = "pretrain/base.ckpt";
pub const BASE_LOSS: &str = "pretrain/loss.csv";
pub const MODELS: &str = "finetune/models.jsonl";
pub const REQUESTS: &str = "requests/requests.jsonl";
pub const SCORES: &str = "measure/scores.jsonl";
pub const CORRELATIONS: &str = "metaeval/correlations.json";
pub const TABLE: &str = "metaeval/table.txt";
pub const PROBE_CSV: &str = "probe/probe.csv";
pub const PROBE_AGGREGATE: &str = "probe/aggregate.csv";
pub const PROBE_SVG: &str = "probe/probe.svg";
pub const PROBE_TOPK: &str = "probe/topk.json";
pub const REPORT_SUMS: &str = "report/SHA256SUMS";

const INGEST: &str = "ingest-responses";
const EXTERNAL: &str = "ext:";

/// One scored model: the base model or a fine-tuned one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub key: String,
    pub r: Option<f64>,
    pub model_id: String,
    pub checkpoint: String,
}

/// Responses ingested for one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestMeta {
    pub key: String,
    pub r: Option<f64>,
    pub backend: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopKRecord {
    pub model: String,
    pub r: Option<f64>,
    #[serde(flatten)]
    pub topk: TopK,
}

pub fn model_key(r: f64) -> String {
    format!("r{r:.3}")
}

/// Reads the rate back from a key such as `r0.300`.
pub fn rate_from_key(key: &str) -> Option<f64> {
    key.strip_prefix('r')?.parse().ok().filter(|r: &f64| (0.0..=1.0).contains(r))
}

fn external(path: &Path) -> Result<String> {
    let abs = fs::canonicalize(path).with_context(|| format!("cannot open {}", path.display()))?;
    Ok(format!("{EXTERNAL}{}", abs.display()))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("{} line {}", path.display(), i + 1))?);
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = create(path)?;
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_lexicon(settings: &Settings) -> Result<GenderLexicon> {
    match &settings.lexicon {
        Some(p) => Ok(GenderLexicon::load(p)?),
        None => Ok(GenderLexicon::default_lists()),
    }
}

pub fn load_occupations(settings: &Settings) -> Result<Vec<String>> {
    match &settings.occupations {
        Some(p) => {
            let list = parse_word_list(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?);
            ensure!(!list.is_empty(), "occupation list {} is empty", p.display());
            Ok(list)
        }
        None => Ok(default_occupations()),
    }
}

fn corpus_path(settings: &Settings) -> Result<&Path> {
    settings
        .corpus
        .as_deref()
        .context("no corpus configured; pass --corpus or set corpus in the config file")
}

/// Label used for the corpus column of the correlation table.
pub fn corpus_id(settings: &Settings) -> String {
    settings
        .corpus
        .as_deref()
        .and_then(|p| p.file_stem())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "corpus".into())
}

/// Shared stage wrapper: checks predecessors, skips when up to date,
/// otherwise runs `body` and records its outputs.
fn stage<F>(run: &mut Run, name: &str, after: &[&str], inputs: Vec<String>, body: F) -> Result<()>
where
    F: FnOnce(&mut Run) -> Result<Vec<String>>,
{
    for dep in after {
        run.require(dep)?;
    }
    let hashes = run.hash_inputs(&inputs)?;
    if run.up_to_date(name, &hashes) {
        eprintln!("{name}: up to date");
        return Ok(());
    }
    let outputs = body(run).with_context(|| format!("stage {name} failed"))?;
    run.complete(name, after, hashes, &outputs)?;
    eprintln!("{name}: done");
    Ok(())
}

fn read_train(run: &Run) -> Result<GenderedCorpus> {
    Ok(GenderedCorpus::read_jsonl(open(&run.path(MINE_TRAIN))?, run.settings.seed)?)
}

pub fn mine(run: &mut Run) -> Result<()> {
    let s = run.settings.clone();
    let corpus = corpus_path(&s)?.to_path_buf();
    let mut inputs = vec![external(&corpus)?];
    for p in [&s.lexicon, &s.pairs, &s.occupations].into_iter().flatten() {
        inputs.push(external(p)?);
    }
    stage(run, "mine", &[], inputs, |run| {
        let lex = load_lexicon(&s)?;
        let text = fs::read_to_string(&corpus).with_context(|| format!("reading {}", corpus.display()))?;
        let opts = MineOptions {
            n: s.n,
            dev_n: s.dev_n(),
            seed: s.seed,
            max_tokens: s.max_tokens,
        };
        let mined = mine_with_options(text.lines(), &lex, &opts)?;
        mined.train.write_jsonl(create(&run.path(MINE_TRAIN))?)?;
        mined.dev.write_jsonl(create(&run.path(MINE_DEV))?)?;

        let (pairs, pairs_skipped) = match &s.pairs {
            Some(p) => (read_pairs(open(p)?)?, 0),
            None => {
                let dev: Vec<&str> = mined.dev.all_sentences().map(|x| x.text.as_str()).collect();
                let out = generate_swap_pairs(&dev, &lex, &SwapMap::default());
                (out.pairs, out.skipped)
            }
        };
        ensure!(
            !pairs.is_empty(),
            "no evaluation pairs: configure a pairs file or a non-zero dev_fraction"
        );
        let mut w = create(&run.path(MINE_PAIRS))?;
        write_pairs(&mut w, &pairs)?;
        w.flush()?;
        let stats = serde_json::json!({
            "mining": mined.stats,
            "n": s.n,
            "dev_n": s.dev_n(),
            "pairs": pairs.len(),
            "pairs_skipped": pairs_skipped,
        });
        run.write(MINE_STATS, serde_json::to_string_pretty(&stats)? + "\n")?;
        eprintln!(
            "mine: {} female / {} male candidates, {} pairs",
            mined.stats.female,
            mined.stats.male,
            pairs.len()
        );
        Ok(vec![MINE_TRAIN.into(), MINE_DEV.into(), MINE_STATS.into(), MINE_PAIRS.into()])
    })
}

pub fn sample(run: &mut Run) -> Result<()> {
    stage(run, "sample", &["mine"], vec![MINE_TRAIN.into()], |run| {
        let corpus = read_train(run)?;
        let sweep = sample_sweep(&corpus, &run.settings.rates, run.settings.seed)?;
        write_jsonl(&run.path(DATASETS), &sweep)?;
        Ok(vec![DATASETS.into()])
    })
}

/// One dataset of the sweep, for inspection; nothing is recorded.
pub fn sample_one(run: &Run, r: f64) -> Result<BiasDataset> {
    run.require("mine")?;
    let corpus = read_train(run)?;
    Ok(biasmeta::sampler::sample_dataset(
        &corpus,
        r,
        biasmeta::sampler::rate_seed(run.settings.seed, r),
    )?)
}

pub fn pretrain(run: &mut Run) -> Result<()> {
    stage(run, "pretrain", &["mine"], vec![MINE_TRAIN.into()], |run| {
        let s = &run.settings;
        let corpus = read_train(run)?;
        let texts: Vec<&str> = corpus.all_sentences().map(|x| x.text.as_str()).collect();
        let lex = load_lexicon(s)?;
        let (model, report) = pretrain_base(&texts, &lex, s.max_vocab, s.model_config(), &s.pretrain_config())?;
        fs::create_dir_all(run.path("pretrain"))?;
        model.save(run.path(BASE_CKPT))?;
        report.write_csv(create(&run.path(BASE_LOSS))?)?;
        Ok(vec![BASE_CKPT.into(), BASE_LOSS.into()])
    })
}

fn workers(jobs: usize) -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(jobs).max(1)
}

/// Runs `f` over `items` on scoped threads, keeping input order.
fn par_map<T: Sync, U: Send>(items: &[T], f: impl Fn(&T) -> Result<U> + Sync) -> Result<Vec<U>> {
    let chunk = items.len().div_ceil(workers(items.len())).max(1);
    std::thread::scope(|scope| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| scope.spawn(|| c.iter().map(&f).collect::<Result<Vec<U>>>()))
            .collect();
        let mut out = Vec::with_capacity(items.len());
        for h in handles {
            out.extend(h.join().expect("worker thread panicked")?);
        }
        Ok(out)
    })
}

pub fn finetune_sweep(run: &mut Run) -> Result<()> {
    let inputs = vec![MINE_TRAIN.into(), DATASETS.into(), BASE_CKPT.into()];
    stage(run, "finetune-sweep", &["sample", "pretrain"], inputs, |run| {
        let corpus = read_train(run)?;
        let datasets: Vec<BiasDataset> = read_jsonl(&run.path(DATASETS))?;
        let base = MaskedLm::load(run.path(BASE_CKPT))?;
        let base_hash = base.hash();
        let mut keys: Vec<String> = datasets.iter().map(|d| model_key(d.r)).collect();
        keys.sort();
        keys.dedup();
        ensure!(keys.len() == datasets.len(), "two rates share the model key {:?}", keys);

        let train = run.settings.finetune_config();
        let dir = run.dir.clone();
        fs::create_dir_all(dir.join("finetune"))?;
        let entries = par_map(&datasets, |d| {
            let key = model_key(d.r);
            let (model, report) = finetune_on(&base, &corpus, d, &train)?;
            let ckpt = format!("finetune/{key}.ckpt");
            model.save(dir.join(&ckpt))?;
            report.write_csv(create(&dir.join(format!("finetune/{key}.loss.csv")))?)?;
            eprintln!("finetune-sweep: {key} final epoch loss {:.4}", report.epoch_means.last().copied().unwrap_or(f64::NAN));
            let model_id = ModelIdentity {
                base_hash: base_hash.clone(),
                r: d.r,
                seed: d.seed,
            }
            .id();
            Ok(ModelEntry {
                key,
                r: Some(d.r),
                model_id,
                checkpoint: ckpt,
            })
        })?;
        let mut models = vec![ModelEntry {
            key: "base".into(),
            r: None,
            model_id: format!("{}-base", &base_hash[..12]),
            checkpoint: BASE_CKPT.into(),
        }];
        models.extend(entries);
        write_jsonl(&run.path(MODELS), &models)?;
        let mut outputs = vec![MODELS.to_string()];
        for m in &models[1..] {
            outputs.push(m.checkpoint.clone());
            outputs.push(format!("finetune/{}.loss.csv", m.key));
        }
        Ok(outputs)
    })
}

fn measure_inputs(run: &Run) -> Result<MeasureInputs> {
    Ok(MeasureInputs {
        pairs: read_pairs(open(&run.path(MINE_PAIRS))?)?,
        templates: run.settings.templates.clone(),
        attributes: load_occupations(&run.settings)?,
        lexicon: load_lexicon(&run.settings)?,
    })
}

/// Measure plans followed by the probe plan, all with one id sequence.
/// Every word is assumed known since the scoring backend is external.
pub fn plan_requests(run: &Run) -> Result<(Vec<MeasurePlan>, ProbePlan)> {
    let inputs = measure_inputs(run)?;
    let plans = plan_measures(&run.settings.measures, &inputs, &|_| true)?;
    let mut next = plans.iter().flat_map(|p| p.requests.iter().map(|q| q.id + 1)).max().unwrap_or(0);
    let probe = ProbePlan::new(&inputs.attributes, PRONOUNS, &|_| true, &mut next)?;
    Ok((plans, probe))
}

fn all_requests(plans: &[MeasurePlan], probe: &ProbePlan) -> Vec<ScoreRequest> {
    plans
        .iter()
        .flat_map(|p| p.requests.iter())
        .chain(&probe.requests)
        .cloned()
        .collect()
}

fn occupation_inputs(settings: &Settings) -> Result<Vec<String>> {
    settings.occupations.as_deref().map(external).into_iter().collect()
}

pub fn emit_requests(run: &mut Run) -> Result<()> {
    let mut inputs = vec![MINE_PAIRS.to_string()];
    inputs.extend(occupation_inputs(&run.settings)?);
    stage(run, "emit-requests", &["mine"], inputs, |run| {
        let (plans, probe) = plan_requests(run)?;
        let requests = all_requests(&plans, &probe);
        let mut w = create(&run.path(REQUESTS))?;
        write_requests(&mut w, &requests)?;
        w.flush()?;
        for p in &plans {
            eprintln!(
                "emit-requests: {} {} requests ({} skipped)",
                p.measure,
                p.requests.len(),
                p.skipped
            );
        }
        eprintln!("emit-requests: probe {} requests", probe.requests.len());
        Ok(vec![REQUESTS.into()])
    })
}

fn load_requests(run: &Run) -> Result<Vec<ScoreRequest>> {
    Ok(read_requests(open(&run.path(REQUESTS))?)?)
}

fn load_models(run: &Run) -> Result<Vec<ModelEntry>> {
    read_jsonl(&run.path(MODELS))
}

fn scorer_for(run: &Run, entry: &ModelEntry) -> Result<TinyMlmScorer> {
    let model = MaskedLm::load(run.path(&entry.checkpoint))?;
    Ok(TinyMlmScorer::new(model, entry.model_id.clone()).with_attention_layers(run.settings.attention()))
}

/// Answers the request file with one of the run's own models, producing a
/// response file in the exporter's format.
pub fn answer(run: &Run, key: &str, out: &Path) -> Result<usize> {
    run.require("emit-requests")?;
    run.require("finetune-sweep")?;
    let entry = load_models(run)?
        .into_iter()
        .find(|m| m.key == key)
        .with_context(|| format!("no model {key:?} in {MODELS}"))?;
    let scorer = scorer_for(run, &entry)?;
    let requests = load_requests(run)?;
    let responses = par_map(&requests, |q| Ok(score_all(&scorer, std::slice::from_ref(q))?.remove(0)))?;
    let mut w = create(out)?;
    write_responses(&mut w, &responses)?;
    w.flush()?;
    Ok(responses.len())
}

fn ingest_paths(key: &str) -> (String, String) {
    (format!("responses/{key}.jsonl"), format!("responses/{key}.meta.json"))
}

fn valid_key(key: &str) -> bool {
    !key.is_empty() && key.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_'))
}

pub fn ingest_responses(run: &mut Run, key: &str, file: &Path, r: Option<f64>) -> Result<()> {
    ensure!(valid_key(key), "model key {key:?} may only use letters, digits, '.', '-' and '_'");
    let r = r.or_else(|| rate_from_key(key));
    let name = format!("{INGEST}/{key}");
    let inputs = vec![REQUESTS.to_string(), external(file)?];
    let file = file.to_path_buf();
    stage(run, &name, &["emit-requests"], inputs, |run| {
        let requests = load_requests(run)?;
        let mut responses = read_responses(open(&file)?)?;
        match_responses(&requests, &responses)?;
        responses.sort_by_key(|x| x.id);
        let backend = responses.first().map(|x| x.backend.clone()).unwrap_or_default();
        let (data, meta) = ingest_paths(key);
        let mut w = create(&run.path(&data))?;
        write_responses(&mut w, &responses)?;
        w.flush()?;
        let m = IngestMeta {
            key: key.to_string(),
            r,
            backend,
        };
        run.write(&meta, serde_json::to_string_pretty(&m)? + "\n")?;
        Ok(vec![data, meta])
    })
}

/// Ingested models, in key order.
fn ingested(run: &Run) -> Result<Vec<(IngestMeta, HashMap<u64, ScoreResponse>)>> {
    let keys: Vec<String> = run
        .manifest
        .stages
        .keys()
        .filter_map(|k| k.strip_prefix(&format!("{INGEST}/")).map(str::to_string))
        .collect();
    ensure!(
        !keys.is_empty(),
        "no responses ingested; run `biasmeta ingest-responses` for each model first"
    );
    keys.iter()
        .map(|key| {
            run.require(&format!("{INGEST}/{key}"))?;
            let (data, meta) = ingest_paths(key);
            let meta: IngestMeta = serde_json::from_slice(&fs::read(run.path(&meta))?)?;
            let responses = read_responses(open(&run.path(&data))?)?;
            Ok((meta, responses.into_iter().map(|x| (x.id, x)).collect()))
        })
        .collect()
}

fn ingest_stage_names(run: &Run) -> Vec<String> {
    run.manifest
        .stages
        .keys()
        .filter(|k| k.starts_with(&format!("{INGEST}/")))
        .cloned()
        .collect()
}

/// Re-plans the requests and checks them against the emitted file.
fn checked_plans(run: &Run) -> Result<(Vec<MeasurePlan>, ProbePlan)> {
    let (plans, probe) = plan_requests(run)?;
    if all_requests(&plans, &probe) != load_requests(run)? {
        return Err(crate::manifest::StaleArtifact {
            path: REQUESTS.into(),
            stage: "emit-requests".into(),
        }
        .into());
    }
    Ok((plans, probe))
}

fn dump_inputs(run: &Run) -> Vec<String> {
    let mut inputs = vec![REQUESTS.to_string(), MINE_PAIRS.to_string()];
    for name in ingest_stage_names(run) {
        let key = &name[INGEST.len() + 1..];
        let (data, meta) = ingest_paths(key);
        inputs.push(data);
        inputs.push(meta);
    }
    inputs
}

fn sort_scores(scores: &mut [MeasureScore]) {
    scores.sort_by(|a, b| {
        let ra = a.r.map(|r| r + 1.0).unwrap_or(0.0);
        let rb = b.r.map(|r| r + 1.0).unwrap_or(0.0);
        ra.total_cmp(&rb)
            .then_with(|| a.model_id.cmp(&b.model_id))
            .then_with(|| a.measure.cmp(&b.measure))
    });
}

pub fn measure(run: &mut Run) -> Result<()> {
    match run.settings.backend {
        Backend::TinyMlm => {
            let mut inputs = vec![MINE_PAIRS.to_string(), MODELS.to_string()];
            inputs.extend(occupation_inputs(&run.settings)?);
            stage(run, "measure", &["mine", "finetune-sweep"], inputs, |run| {
                let models = load_models(run)?;
                let inputs = measure_inputs(run)?;
                let kinds = run.settings.measures.clone();
                let per_model = par_map(&models, |m| {
                    let scorer = scorer_for(run, m)?;
                    let values = run_measures(&kinds, &inputs, &scorer)?;
                    eprintln!("measure: {} scored", m.key);
                    Ok(values
                        .into_iter()
                        .map(|v| v.into_score(m.model_id.clone(), m.r))
                        .collect::<Vec<_>>())
                })?;
                let mut scores: Vec<MeasureScore> = per_model.into_iter().flatten().collect();
                sort_scores(&mut scores);
                let mut w = create(&run.path(SCORES))?;
                write_scores(&mut w, &scores)?;
                w.flush()?;
                Ok(vec![SCORES.into()])
            })
        }
        Backend::Dump => {
            let names = ingest_stage_names(run);
            let mut after: Vec<&str> = vec!["emit-requests"];
            after.extend(names.iter().map(String::as_str));
            let inputs = dump_inputs(run);
            stage(run, "measure", &after, inputs, |run| {
                let (plans, _) = checked_plans(run)?;
                let mut scores = Vec::new();
                for (meta, responses) in ingested(run)? {
                    for plan in &plans {
                        let v = plan
                            .evaluate(&responses)
                            .with_context(|| format!("model {}", meta.key))?;
                        scores.push(v.into_score(meta.key.clone(), meta.r));
                    }
                }
                sort_scores(&mut scores);
                let mut w = create(&run.path(SCORES))?;
                write_scores(&mut w, &scores)?;
                w.flush()?;
                Ok(vec![SCORES.into()])
            })
        }
    }
}

pub fn reference_table() -> String {
    let mut out = String::from("Reference Pearson correlations for pretrained encoders\n");
    out.push_str(&format!("{:<8}", "Measure"));
    for c in REFERENCE_COLUMNS {
        out.push_str(&format!("  {c:>11}"));
    }
    out.push('\n');
    for (m, vals) in REFERENCE_PEARSON {
        out.push_str(&format!("{:<8}", m.as_str()));
        for v in vals {
            out.push_str(&format!("  {v:>11.2}"));
        }
        out.push('\n');
    }
    out
}

pub fn metaeval(run: &mut Run) -> Result<String> {
    stage(run, "metaeval", &["measure"], vec![SCORES.into()], |run| {
        let scores = read_scores(open(&run.path(SCORES))?)?;
        let sweep = SweepResult {
            corpus_id: corpus_id(&run.settings),
            seeds: vec![run.settings.seed],
            scores,
        };
        let report = run_meta_eval(&sweep)?;
        run.write(CORRELATIONS, serde_json::to_string_pretty(&report)? + "\n")?;
        let table = format_table(std::slice::from_ref(&report)) + "\n" + &reference_table();
        run.write(TABLE, table)?;
        Ok(vec![CORRELATIONS.into(), TABLE.into()])
    })?;
    Ok(fs::read_to_string(run.path(TABLE))?)
}

fn write_probe_outputs(run: &Run, results: &[ProbeResult], topk: &[TopKRecord]) -> Result<Vec<String>> {
    let mut w = create(&run.path(PROBE_CSV))?;
    write_probe_csv(&mut w, results)?;
    w.flush()?;
    let mut w = create(&run.path(PROBE_AGGREGATE))?;
    write_aggregate_csv(&mut w, results)?;
    w.flush()?;
    run.write(PROBE_SVG, render_probe_svg(results))?;
    run.write(PROBE_TOPK, serde_json::to_string_pretty(topk)? + "\n")?;
    Ok(vec![PROBE_CSV.into(), PROBE_AGGREGATE.into(), PROBE_SVG.into(), PROBE_TOPK.into()])
}

pub fn probe(run: &mut Run) -> Result<()> {
    let occupations = occupation_inputs(&run.settings)?;
    match run.settings.backend {
        Backend::TinyMlm => {
            let mut inputs = vec![MODELS.to_string()];
            inputs.extend(occupations);
            stage(run, "probe", &["finetune-sweep"], inputs, |run| {
                let models = load_models(run)?;
                let occs = load_occupations(&run.settings)?;
                let lex = load_lexicon(&run.settings)?;
                let per_model = par_map(&models, |m| {
                    let scorer = scorer_for(run, m)?;
                    let res = occupation_probe(&scorer, &occs, PRONOUNS, &m.model_id, m.r)?;
                    let topk = run
                        .settings
                        .topk_sentences
                        .iter()
                        .map(|s| {
                            Ok(TopKRecord {
                                model: m.key.clone(),
                                r: m.r,
                                topk: topk_probe(&scorer, s, run.settings.topk_k, &lex)?,
                            })
                        })
                        .collect::<Result<Vec<_>>>()?;
                    Ok((res, topk))
                })?;
                let (results, topk): (Vec<_>, Vec<_>) = per_model.into_iter().unzip();
                let topk: Vec<TopKRecord> = topk.into_iter().flatten().collect();
                write_probe_outputs(run, &results, &topk)
            })
        }
        Backend::Dump => {
            let names = ingest_stage_names(run);
            let mut after: Vec<&str> = vec!["emit-requests"];
            after.extend(names.iter().map(String::as_str));
            let mut inputs = dump_inputs(run);
            inputs.extend(occupations);
            stage(run, "probe", &after, inputs, |run| {
                let (_, plan) = checked_plans(run)?;
                let mut results = Vec::new();
                for (meta, responses) in ingested(run)? {
                    results.push(plan.evaluate(&responses, &meta.key, meta.r)?);
                }
                results.sort_by(|a, b| {
                    let key = |x: &ProbeResult| x.r.map(|r| r + 1.0).unwrap_or(0.0);
                    key(a).total_cmp(&key(b))
                });
                eprintln!("probe: top-k lists need a local model and are skipped for the dump backend");
                write_probe_outputs(run, &results, &[])
            })
        }
    }
}

/// The configuration with path values reduced to file names, so runs in
/// different places over the same inputs report identically.
fn portable_config(settings: &Settings) -> String {
    let mut s = settings.clone();
    for path in [&mut s.corpus, &mut s.lexicon, &mut s.occupations, &mut s.pairs].into_iter().flatten() {
        *path = PathBuf::from(path.file_name().unwrap_or_default());
    }
    s.to_text()
}

/// Assembles the report bundle and returns its hash: the SHA-256 of the
/// `SHA256SUMS` listing of every bundled file.
pub fn report(run: &mut Run) -> Result<String> {
    let copied = [TABLE, CORRELATIONS, SCORES, PROBE_AGGREGATE, PROBE_CSV, PROBE_SVG, PROBE_TOPK, MINE_STATS];
    let inputs: Vec<String> = copied.iter().map(|s| s.to_string()).collect();
    stage(run, "report", &["metaeval", "probe", "mine"], inputs, |run| {
        let mut files: BTreeMap<String, Vec<u8>> = BTreeMap::new();
        for rel in copied {
            let name = Path::new(rel).file_name().unwrap().to_string_lossy().into_owned();
            files.insert(name, fs::read(run.path(rel))?);
        }
        files.insert("config.txt".into(), portable_config(&run.settings).into_bytes());
        let mut inputs = String::new();
        if let Some(c) = &run.settings.corpus {
            inputs.push_str(&format!(
                "{}  corpus {}\n",
                file_sha256(c)?,
                c.file_name().unwrap_or_default().to_string_lossy()
            ));
        }
        files.insert("inputs.txt".into(), inputs.into_bytes());

        let mut sums = String::new();
        let mut outputs = Vec::new();
        for (name, bytes) in &files {
            let rel = format!("report/{name}");
            run.write(&rel, bytes)?;
            sums.push_str(&format!("{}  {name}\n", sha256_hex(bytes)));
            outputs.push(rel);
        }
        run.write(REPORT_SUMS, &sums)?;
        outputs.push(REPORT_SUMS.into());
        Ok(outputs)
    })?;
    report_hash(&run.dir)
}

pub fn report_hash(dir: &Path) -> Result<String> {
    let p = dir.join(REPORT_SUMS);
    if !p.exists() {
        bail!("no report in {}", dir.display());
    }
    file_sha256(&p)
}

/// Every stage for the local backend, in order.
pub fn run_all(run: &mut Run) -> Result<String> {
    ensure!(
        run.settings.backend == Backend::TinyMlm,
        "`run` drives the local model; with the dump backend use emit-requests, ingest-responses, measure, metaeval, probe and report"
    );
    mine(run)?;
    sample(run)?;
    pretrain(run)?;
    finetune_sweep(run)?;
    measure(run)?;
    let table = metaeval(run)?;
    probe(run)?;
    let hash = report(run)?;
    print!("{table}");
    Ok(hash)
}
