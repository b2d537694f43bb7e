use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;
use serde_json::json;

use ie_forge_core::dataset::{self, load_instances, save_instances, write_jsonl_atomic, Variant};
use ie_forge_core::eval::{self, Embedder, HashingEmbedder, InstanceEval};
use ie_forge_core::filter::{self, EntailmentScorer, FallbackScorer, FilterThresholds, LexicalEntailment};
use ie_forge_core::formatter::format_example;
use ie_forge_core::gateway::{
    ChatBackend, Gateway, MockBackend, MockDefects, PromptLibrary, RemoteBackend, RemoteConfig,
};
use ie_forge_core::scorer_client::{ScorerClient, ScorerClientConfig, ENV_SCORER_URL};
use ie_forge_core::stats::{self, Facet, RatingScale};
use ie_forge_core::synthesis::{Pipeline, PipelineConfig, RawPair};
use ie_forge_core::util::{to_json_pretty, write_atomic};

use crate::args::{
    CorrelateArgs, EmbedderKind, EvaluateArgs, FilterArgs, FormatArgs, GenerateArgs, InputFormat, ScorerCheckArgs,
    ScorerKind, StatsArgs, ThresholdFlags,
};
use crate::CliError;

pub const INJECTIONS_FILE: &str = "injections.json";
pub const FILTER_REPORT_FILE: &str = "filter_report.json";

fn required<T>(v: Option<T>, flag: &str, cmd: &str) -> Result<T, CliError> {
    v.ok_or_else(|| CliError::usage(format!("{cmd} needs --{flag} (see `ie-forge {cmd} --help`)")))
}

fn write_report<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::domain("io", format!("{}: {e}", dir.display())))?;
    }
    write_atomic(path, to_json_pretty(value).as_bytes())
        .map_err(|e| CliError::domain("io", format!("{}: {e}", path.display())))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

/// `dir/name.json` from `dir/name.jsonl` (or any extension).
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map_or_else(|| "out".into(), |s| s.to_string_lossy().into_owned());
    path.with_file_name(format!("{stem}.{suffix}.json"))
}

fn thresholds(flags: &ThresholdFlags) -> Result<FilterThresholds, CliError> {
    let d = FilterThresholds::default();
    let th = FilterThresholds {
        min_rows_plus_cols_exclusive: flags.min_rows_plus_cols_exclusive.unwrap_or(d.min_rows_plus_cols_exclusive),
        min_cols_exclusive: flags.min_cols_exclusive.unwrap_or(d.min_cols_exclusive),
        max_na_exclusive: flags.max_na_exclusive.unwrap_or(d.max_na_exclusive),
        consistency_threshold: flags.consistency_threshold.unwrap_or(d.consistency_threshold),
        faithfulness_threshold: flags.faithfulness_threshold.unwrap_or(d.faithfulness_threshold),
    };
    th.validate().map_err(|e| CliError::usage(e.to_string()))?;
    Ok(th)
}

fn scorer(kind: Option<ScorerKind>, fallback: bool) -> Result<Box<dyn EntailmentScorer>, CliError> {
    match kind.unwrap_or(ScorerKind::Lexical) {
        ScorerKind::Lexical => Ok(Box::new(LexicalEntailment)),
        ScorerKind::Neural => {
            let client = ScorerClientConfig::from_env()
                .and_then(ScorerClient::new)
                .map_err(|e| CliError::domain("scorer", e))?;
            if fallback {
                Ok(Box::new(FallbackScorer::new(client, LexicalEntailment)))
            } else {
                Ok(Box::new(client))
            }
        }
    }
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new().num_threads(jobs).build().map_err(|e| CliError::domain("runtime", e))
}

pub fn generate(a: GenerateArgs, jobs: usize) -> Result<(), CliError> {
    let mock = a.mock.unwrap_or(false);
    let remote = a.remote.unwrap_or(false);
    match (mock, remote) {
        (true, true) => return Err(CliError::usage("--mock and --remote are mutually exclusive")),
        (false, false) => return Err(CliError::usage("generate needs a backend: --mock or --remote")),
        _ => {}
    }
    if mock && a.seed.is_none() {
        return Err(CliError::usage("--mock needs --seed"));
    }
    let out = required(a.out.clone(), "out", "generate")?;
    let d = PipelineConfig::default();
    let cfg = PipelineConfig {
        n_iterations: a.iterations.unwrap_or(d.n_iterations),
        instructions_per_iteration: a.per_iteration.unwrap_or(d.instructions_per_iteration),
        paraphrase_batch_size: a.paraphrase_batch.unwrap_or(d.paraphrase_batch_size),
        direct: a.direct.unwrap_or(d.direct),
        cot: a.cot.unwrap_or(d.cot),
        seed: a.seed.unwrap_or(d.seed),
        concurrency: jobs,
        min_text_words: a.min_text_words.unwrap_or(d.min_text_words),
        temperature: a.temperature.unwrap_or(d.temperature),
        thresholds: thresholds(&a.thresholds())?,
    };
    cfg.validate().map_err(|e| CliError::usage(e.to_string()))?;

    let prompts = match &a.prompts {
        Some(dir) => PromptLibrary::from_dir(dir).map_err(|e| CliError::domain("prompt", e))?,
        None => PromptLibrary::builtin(),
    }
    .with_paraphrase_batch(cfg.paraphrase_batch_size);

    let defects = MockDefects {
        malformed_table: a.defect_malformed_table.unwrap_or(0.0),
        extra_headers: a.defect_extra_headers.unwrap_or(0.0),
        missing_cells: a.defect_missing_cells.unwrap_or(0.0),
        paraphrase_miscount: a.defect_paraphrase_miscount.unwrap_or(0.0),
        empty_text: a.defect_empty_text.unwrap_or(0.0),
    };
    let mock_backend = mock.then(|| MockBackend::with_defects(cfg.seed, defects));
    let backend: Arc<dyn ChatBackend> = match &mock_backend {
        Some(m) => Arc::new(m.clone()),
        None => {
            let rc = RemoteConfig::from_env().map_err(|e| CliError::domain("gateway", e))?;
            Arc::new(RemoteBackend::new(rc))
        }
    };
    let gateway = Gateway::from_arc(backend, jobs).map_err(|e| CliError::domain("gateway", e))?;
    let scorer = scorer(a.scorer, a.fallback.unwrap_or(false))?;

    let pipeline = Pipeline::new(cfg, &gateway, &prompts, scorer.as_ref())
        .map_err(|e| CliError::domain("pipeline", e))?
        .with_checkpoints(&out, a.resume.unwrap_or(false));
    let output = pipeline.run().map_err(|e| CliError::domain("pipeline", e))?;
    if let Some(m) = &mock_backend {
        write_report(&out.join(INJECTIONS_FILE), &m.injections())?;
    }

    let r = &output.report;
    println!("instructions: {} fixed kept", r.instructions.kept);
    println!("texts: {} kept", r.texts.kept);
    println!("raw pairs: {}", output.raw.len());
    if let Some(f) = &r.filter {
        print!("{}", f.render());
    }
    println!("survivors: {}", output.survivors.len());
    println!("report: {}", out.join(ie_forge_core::synthesis::REPORT_FILE).display());
    Ok(())
}

fn load_raw_pairs(path: &Path) -> Result<Vec<RawPair>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::domain("io", format!("{}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| CliError::domain("schema", format!("{}: line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

pub fn filter(a: FilterArgs, jobs: usize) -> Result<(), CliError> {
    let input = required(a.input.clone(), "input", "filter")?;
    let out = required(a.out.clone(), "out", "filter")?;
    let th = thresholds(&a.thresholds())?;
    let raw = match a.format.unwrap_or(InputFormat::Raw) {
        InputFormat::Raw => load_raw_pairs(&input)?,
        InputFormat::Instances => {
            let xs = load_instances(&input).map_err(|e| CliError::domain("dataset", e))?;
            let raw: Vec<RawPair> = xs.iter().filter_map(filter::from_instance).collect();
            if raw.len() < xs.len() {
                log::warn!("skipped {} instance(s) without a table", xs.len() - raw.len());
            }
            raw
        }
    };
    let scorer = scorer(a.scorer, a.fallback.unwrap_or(false))?;
    let (survivors, report) = pool(jobs)?
        .install(|| filter::apply_filters(&raw, scorer.as_ref(), &th))
        .map_err(|e| CliError::domain("filter", e))?;
    std::fs::create_dir_all(&out).map_err(|e| CliError::domain("io", format!("{}: {e}", out.display())))?;
    save_instances(&survivors, out.join(ie_forge_core::synthesis::SURVIVORS_FILE))
        .map_err(|e| CliError::domain("io", e))?;
    write_report(&out.join(FILTER_REPORT_FILE), &report)?;
    print!("{}", report.render());
    Ok(())
}

#[derive(Serialize)]
struct FormatReport {
    examples: usize,
    by_variant: BTreeMap<Variant, usize>,
}

pub fn format(a: FormatArgs) -> Result<(), CliError> {
    let data = required(a.data.clone(), "data", "format")?;
    let out = required(a.out.clone(), "out", "format")?;
    let xs = load_instances(&data).map_err(|e| CliError::domain("dataset", e))?;
    let examples =
        xs.iter().map(format_example).collect::<Result<Vec<_>, _>>().map_err(|e| CliError::domain("format", e))?;
    write_jsonl_atomic(&out, &examples, |e| serde_json::to_string(e).expect("example serializes"))
        .map_err(|e| CliError::domain("io", e))?;
    let mut by_variant = BTreeMap::new();
    for e in &examples {
        *by_variant.entry(e.variant).or_insert(0) += 1;
    }
    let report = FormatReport { examples: examples.len(), by_variant };
    write_report(&a.report.unwrap_or_else(|| sibling(&out, "report")), &report)?;
    println!("formatted {} example(s) into {}", report.examples, out.display());
    for (v, n) in &report.by_variant {
        println!("  {}: {n}", v.as_str());
    }
    Ok(())
}

fn embedder(kind: Option<EmbedderKind>) -> Result<Box<dyn Embedder>, CliError> {
    match kind.unwrap_or(EmbedderKind::Fallback) {
        EmbedderKind::Fallback => Ok(Box::new(HashingEmbedder::default())),
        EmbedderKind::Neural => ScorerClientConfig::from_env()
            .and_then(ScorerClient::new)
            .map(|c| Box::new(c) as Box<dyn Embedder>)
            .map_err(|e| CliError::domain("scorer", e)),
    }
}

pub fn evaluate(a: EvaluateArgs, jobs: usize) -> Result<(), CliError> {
    let pred = required(a.pred.clone(), "pred", "evaluate")?;
    let gold = required(a.gold.clone(), "gold", "evaluate")?;
    let preds = eval::load_predictions(&pred).map_err(|e| CliError::domain("predictions", e))?;
    let gold = load_instances(&gold).map_err(|e| CliError::domain("dataset", e))?;
    let embedder = embedder(a.embedder)?;
    let (evals, report) = pool(jobs)?
        .install(|| eval::evaluate_predictions(&preds, &gold, embedder.as_ref()))
        .map_err(|e| CliError::domain("evaluate", e))?;
    if let Some(path) = &a.per_instance {
        write_jsonl_atomic(path, &evals, |e| serde_json::to_string(e).expect("eval serializes"))
            .map_err(|e| CliError::domain("io", e))?;
    }
    write_report(&a.report.unwrap_or_else(|| sibling(&pred, "eval")), &report)?;
    print!("{}", report.render());
    Ok(())
}

pub fn stats(a: StatsArgs) -> Result<(), CliError> {
    let data = required(a.data.clone(), "data", "stats")?;
    let xs = load_instances(&data).map_err(|e| CliError::domain("dataset", e))?;
    let report = dataset::dataset_statistics(&xs).map_err(|e| CliError::domain("dataset", e))?;
    write_report(&a.report.unwrap_or_else(|| sibling(&data, "stats")), &report)?;
    print!("{}", report.render());
    Ok(())
}

fn load_evals(path: &Path) -> Result<Vec<InstanceEval>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::domain("io", format!("{}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| CliError::domain("schema", format!("{}: line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

pub fn correlate(a: CorrelateArgs) -> Result<(), CliError> {
    let evals_path = required(a.evals.clone(), "evals", "correlate")?;
    let ratings_path = required(a.ratings.clone(), "ratings", "correlate")?;
    let evals = load_evals(&evals_path)?;
    let ratings = stats::load_ratings(&ratings_path).map_err(|e| CliError::domain("ratings", e))?;
    let report = stats::correlate_metrics(&evals, &ratings, &RatingScale::default())
        .map_err(|e| CliError::domain("correlate", e))?;
    let mut kappa = serde_json::Map::new();
    for (name, facet) in [("header", Facet::Header), ("content", Facet::Content)] {
        let value = stats::rating_counts(&ratings, facet).and_then(|c| stats::fleiss_kappa(&c));
        let value = match value {
            Ok(k) => json!(k),
            Err(e @ stats::StatsError::UnevenRaterCount { .. }) => {
                log::warn!("{name} kappa undefined: {e}");
                serde_json::Value::Null
            }
            Err(e) => return Err(CliError::domain("agreement", e)),
        };
        kappa.insert(name.into(), value);
    }
    let full = json!({"correlation": report, "fleiss_kappa": kappa});
    write_report(&a.report.unwrap_or_else(|| sibling(&evals_path, "correlation")), &full)?;
    print!("{}", report.render());
    for (name, v) in &kappa {
        let shown = v.as_f64().map_or_else(|| "undefined".to_string(), |k| format!("{k:.3}"));
        println!("fleiss kappa ({name}): {shown}");
    }
    Ok(())
}

#[derive(Serialize)]
struct Check {
    name: &'static str,
    passed: bool,
    detail: String,
}

pub fn scorer_check(a: ScorerCheckArgs) -> Result<(), CliError> {
    let cfg = match &a.url {
        Some(url) => ScorerClientConfig::new(url.clone()),
        None => ScorerClientConfig::from_env()
            .map_err(|_| CliError::usage(format!("pass --url or set {ENV_SCORER_URL}")))?,
    };
    let client = ScorerClient::new(cfg).map_err(|e| CliError::domain("scorer", e))?;
    let mut checks = Vec::new();
    let mut push = |name, r: Result<String, String>| {
        let passed = r.is_ok();
        let detail = r.unwrap_or_else(|e| e);
        println!("{} {name}: {detail}", if passed { "PASS" } else { "FAIL" });
        checks.push(Check { name, passed, detail });
    };

    push(
        "health",
        client.health().map_err(|e| e.to_string()).and_then(|h| {
            if h.status == "ok" {
                Ok(format!("status ok, embed_dim {:?}", h.embed_dim))
            } else {
                Err(format!("status {}", h.status))
            }
        }),
    );
    let premise = "The museum opened in 1902 and holds 4,000 paintings.";
    push(
        "entail_identity",
        client.entail(premise, premise).map_err(|e| e.to_string()).and_then(|s| {
            if s >= 0.9 {
                Ok(format!("score {s:.4}"))
            } else {
                Err(format!("score {s:.4} < 0.9"))
            }
        }),
    );
    let pairs = vec![
        (premise.to_string(), "The museum opened in 1902.".to_string()),
        (premise.to_string(), "The museum is closed.".to_string()),
    ];
    push(
        "batch_matches_single",
        client.entail_batch(&pairs).map_err(|e| e.to_string()).and_then(|batch| {
            let single: Result<Vec<f64>, _> = pairs.iter().map(|(p, h)| client.entail(p, h)).collect();
            let single = single.map_err(|e| e.to_string())?;
            let diff = batch.iter().zip(&single).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            if diff < 1e-6 {
                Ok(format!("max difference {diff:.2e}"))
            } else {
                Err(format!("max difference {diff:.2e}"))
            }
        }),
    );
    let texts = vec!["annual salary".to_string(), "annual salary".to_string()];
    push(
        "embed_deterministic",
        client.embed_texts(&texts).map_err(|e| e.to_string()).and_then(|v| {
            if v[0] == v[1] {
                Ok(format!("dim {}", v[0].len()))
            } else {
                Err("identical texts got different vectors".into())
            }
        }),
    );

    let failed = checks.iter().filter(|c| !c.passed).count();
    let report = json!({"base_url": client.config().base_url, "checks": checks, "failed": failed});
    write_report(&a.report.unwrap_or_else(|| PathBuf::from("scorer_check.json")), &report)?;
    if failed > 0 {
        return Err(CliError::domain("scorer_check", format!("{failed} check(s) failed")));
    }
    Ok(())
}
