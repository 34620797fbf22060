//! The three pipeline stages. Each reads its inputs from files, fans the
//! per-query work out over a bounded pool, and writes results through a
//! single in-order writer.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::mpsc;

use rayon::prelude::*;
use serde::Serialize;
use tracing::{info, warn};

use dae_core::backend::remote::RemoteBackend;
use dae_core::backend::sim::{SimBackend, SimScenario};
use dae_core::backend::{CallLedger, ChatBackend};
use dae_core::eval::{
    ar_curve, calibration_bins, compute_metrics, judge_correct, load_dataset, DatasetRecord,
    EvalRecord, Metrics, ScoredOutcome,
};
use dae_core::persist::{
    self, read_jsonl, read_question_records, transcript_path, write_ar_csv, write_calibration_csv,
    write_json, Failure, JsonlWriter, QuestionRecord, CALLS_FILE, DECISIONS_FILE, FAILURES_FILE,
    METRICS_FILE, QUESTIONS_FILE, SCORES_FILE, TRANSCRIPT_DIR,
};
use dae_core::pipeline::{
    generate_for_record, parse_method_list, run_query, QueryRun, RunSettings,
};
use dae_core::policy::Decision;
use dae_core::questiongen::QuestionGenConfig;
use dae_core::semantics::Clusterer;
use dae_core::uncertainty::UncertaintyReport;

use crate::config::{BackendSpec, RunConfig};
use crate::exit::{input, internal, missing, CliResult};

/// Ledger dump written by `generate`; `run` writes `calls.json`.
pub const GENERATE_CALLS_FILE: &str = "generate_calls.json";

struct Engine {
    backend: Box<dyn ChatBackend>,
    clusterer: Clusterer,
    wrong_answers: BTreeMap<String, String>,
}

fn build_engine(spec: &BackendSpec) -> CliResult<Engine> {
    match spec {
        BackendSpec::Sim { scenarios } => {
            if scenarios.is_empty() {
                return Err(input("the sim backend needs at least one --scenario"));
            }
            let loaded = scenarios
                .iter()
                .map(|p| {
                    SimScenario::from_path(p).map_err(|e| input(format!("{}: {e}", p.display())))
                })
                .collect::<CliResult<Vec<_>>>()?;
            let scenario = SimScenario::merge(loaded).map_err(input)?;
            let wrong_answers = scenario.plausible_wrong.clone();
            let backend = SimBackend::new(scenario).map_err(input)?;
            Ok(Engine {
                clusterer: Clusterer::Exact(backend.scenario().alias_table()),
                backend: Box::new(backend),
                wrong_answers,
            })
        }
        BackendSpec::Remote(rc) => {
            let backend = RemoteBackend::new(rc.clone()).map_err(internal)?;
            Ok(Engine {
                backend: Box::new(backend),
                clusterer: Clusterer::Judge,
                wrong_answers: BTreeMap::new(),
            })
        }
    }
}

/// Runs `work` over `items` on a pool of `threads` workers and hands results
/// to `sink` on the calling thread in input order.
fn ordered_parallel<T, R>(
    threads: usize,
    items: &[T],
    work: impl Fn(&T) -> R + Sync,
    mut sink: impl FnMut(R) -> CliResult<()>,
) -> CliResult<()>
where
    T: Sync,
    R: Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(internal)?;
    let (tx, rx) = mpsc::channel::<(usize, R)>();
    std::thread::scope(|scope| {
        let work = &work;
        scope.spawn(move || {
            pool.install(|| {
                items
                    .par_iter()
                    .enumerate()
                    .for_each_with(tx, |tx, (i, item)| {
                        // A closed channel means the writer gave up; the error is reported there.
                        let _ = tx.send((i, work(item)));
                    });
            });
        });
        let mut pending = BTreeMap::new();
        let mut next = 0;
        for (i, r) in rx {
            pending.insert(i, r);
            while let Some(r) = pending.remove(&next) {
                sink(r)?;
                next += 1;
            }
        }
        Ok(())
    })
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| internal(format!("{}: {e}", dir.display())))
}

fn load_records(config: &RunConfig) -> CliResult<Vec<DatasetRecord>> {
    let path = config
        .dataset
        .as_ref()
        .ok_or_else(|| input("--dataset is required"))?;
    load_dataset(path).map_err(input)
}

fn questions_out_path(config: &RunConfig) -> PathBuf {
    config
        .questions_out
        .clone()
        .unwrap_or_else(|| config.out_dir.join(QUESTIONS_FILE))
}

fn generate_records(
    config: &RunConfig,
    engine: &Engine,
    ledger: &CallLedger,
) -> CliResult<Vec<QuestionRecord>> {
    let records = load_records(config)?;
    let gen = QuestionGenConfig {
        n: config.interaction.n_agents,
        seed: config.interaction.seed,
        ..QuestionGenConfig::default()
    };
    let out = questions_out_path(config);
    if let Some(parent) = out.parent() {
        create_dir(parent)?;
    }
    let mut writer = JsonlWriter::create(&out).map_err(internal)?;
    let mut all = Vec::with_capacity(records.len());
    ordered_parallel(
        config.parallel,
        &records,
        |r| generate_for_record(engine.backend.as_ref(), ledger, r, &gen),
        |q| {
            if let Some(e) = &q.error {
                warn!(query = %q.query_id, "question generation failed: {e}");
            }
            writer.write(&q).map_err(internal)?;
            all.push(q);
            Ok(())
        },
    )?;
    writer.finish().map_err(internal)?;
    info!(path = %out.display(), records = all.len(), "wrote question sets");
    Ok(all)
}

pub fn cmd_generate(config: &RunConfig) -> CliResult<()> {
    let engine = build_engine(&config.backend)?;
    let ledger = CallLedger::new();
    create_dir(&config.out_dir)?;
    let records = generate_records(config, &engine, &ledger)?;
    write_json(
        &config.out_dir.join(GENERATE_CALLS_FILE),
        &ledger.snapshot(),
    )
    .map_err(internal)?;
    let failed = records.iter().filter(|r| r.error.is_some()).count();
    println!(
        "generated {} question sets ({failed} failed), {} backend calls",
        records.len() - failed,
        ledger.grand_total()
    );
    Ok(())
}

fn read_questions(path: &Path) -> CliResult<Vec<QuestionRecord>> {
    if !path.exists() {
        return Err(missing(format!(
            "question file {} not found",
            path.display()
        )));
    }
    read_question_records(path).map_err(input)
}

enum Job {
    Query(Box<dae_core::questiongen::QuestionSet>),
    Skipped(Failure),
}

pub fn cmd_run(config: &RunConfig) -> CliResult<()> {
    let engine = build_engine(&config.backend)?;
    let ledger = CallLedger::new();
    create_dir(&config.out_dir)?;
    let questions = match &config.questions_in {
        Some(p) => read_questions(p)?,
        None => generate_records(config, &engine, &ledger)?,
    };

    let (methods, baselines) = parse_method_list(&config.methods).map_err(input)?;
    let mut settings = RunSettings::new(config.interaction.clone(), methods, config.policy);
    settings.baselines = baselines;
    settings.wrong_answers = engine.wrong_answers.clone();

    let jobs: Vec<Job> = questions
        .into_iter()
        .map(|q| match q.set {
            Some(set) => Job::Query(Box::new(set)),
            None => Job::Skipped(Failure {
                query_id: q.query_id,
                stage: "generate".into(),
                error: q.error.unwrap_or_else(|| "no question set".into()),
            }),
        })
        .collect();

    let tdir = config.out_dir.join(TRANSCRIPT_DIR);
    create_dir(&tdir)?;
    let open = |name: &str| JsonlWriter::create(&config.out_dir.join(name)).map_err(internal);
    let (mut scores, mut decisions, mut failures) = (
        open(SCORES_FILE)?,
        open(DECISIONS_FILE)?,
        open(FAILURES_FILE)?,
    );
    let (mut n_queries, mut n_failed, mut n_abstain, mut n_decisions) =
        (0usize, 0usize, 0usize, 0usize);

    ordered_parallel(
        config.parallel,
        &jobs,
        |job| match job {
            Job::Query(set) => Ok(run_query(
                engine.backend.as_ref(),
                &ledger,
                &engine.clusterer,
                set,
                &settings,
            )),
            Job::Skipped(f) => Err(f.clone()),
        },
        |outcome: Result<QueryRun, Failure>| {
            n_queries += 1;
            let run = match outcome {
                Ok(run) => run,
                Err(f) => {
                    n_failed += 1;
                    return failures.write(&f).map_err(internal);
                }
            };
            if !run.failures.is_empty() {
                n_failed += 1;
            }
            for r in &run.reports {
                scores.write(r).map_err(internal)?;
            }
            for d in &run.decisions {
                n_decisions += 1;
                n_abstain += usize::from(d.is_abstain());
                decisions.write(d).map_err(internal)?;
            }
            for f in &run.failures {
                warn!(query = %f.query_id, stage = %f.stage, "{}", f.error);
                failures.write(f).map_err(internal)?;
            }
            write_json(
                &transcript_path(&config.out_dir, &run.query_id),
                &run.transcript,
            )
            .map_err(internal)
        },
    )?;
    for w in [scores, decisions, failures] {
        w.finish().map_err(internal)?;
    }
    write_json(&config.out_dir.join(CALLS_FILE), &ledger.snapshot()).map_err(internal)?;
    println!(
        "{n_queries} queries, {n_failed} with failures, {n_decisions} decisions ({n_abstain} abstain), {} backend calls",
        ledger.grand_total()
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct MethodSummary {
    method: String,
    #[serde(flatten)]
    metrics: Metrics,
    /// Queries whose decisions were skipped for lack of gold answers.
    skipped: usize,
}

fn gold_table(config: &RunConfig) -> CliResult<HashMap<String, Vec<String>>> {
    if let Some(path) = &config.dataset {
        let records = load_dataset(path).map_err(input)?;
        return Ok(records
            .into_iter()
            .map(|r| (r.id, r.gold_answers))
            .collect());
    }
    let path = config
        .questions_in
        .clone()
        .unwrap_or_else(|| config.out_dir.join(QUESTIONS_FILE));
    if !path.exists() {
        return Err(missing(format!(
            "no gold answers: pass --dataset or provide {}",
            path.display()
        )));
    }
    Ok(read_questions(&path)?
        .into_iter()
        .filter_map(|q| {
            let golds = q.set?.query.gold_answers?;
            Some((q.query_id, golds))
        })
        .collect())
}

fn csv_name(prefix: &str, method: &str) -> String {
    format!("{prefix}_{}.csv", persist::file_stem(method))
}

pub fn cmd_evaluate(config: &RunConfig) -> CliResult<()> {
    let dpath = config.out_dir.join(DECISIONS_FILE);
    if !dpath.exists() {
        return Err(missing(format!(
            "decisions file {} not found",
            dpath.display()
        )));
    }
    let decisions: Vec<Decision> = read_jsonl(&dpath).map_err(input)?;
    if decisions.is_empty() {
        return Err(missing(format!(
            "decisions file {} is empty",
            dpath.display()
        )));
    }
    let spath = config.out_dir.join(SCORES_FILE);
    let reports: Vec<UncertaintyReport> = if spath.exists() {
        read_jsonl(&spath).map_err(input)?
    } else {
        Vec::new()
    };
    let golds = gold_table(config)?;

    let methods: Vec<String> = if config.methods_explicit {
        let (m, b) = parse_method_list(&config.methods).map_err(input)?;
        m.iter()
            .map(|m| m.as_str().to_string())
            .chain(b.iter().map(|s| s.as_str().to_string()))
            .collect()
    } else {
        let mut seen = Vec::new();
        for d in &decisions {
            if !seen.contains(&d.method) {
                seen.push(d.method.clone());
            }
        }
        seen
    };

    let mut summaries = Vec::new();
    for method in &methods {
        let mine: Vec<&Decision> = decisions.iter().filter(|d| &d.method == method).collect();
        if mine.is_empty() {
            return Err(missing(format!("no decisions for method {method}")));
        }
        let mut records = Vec::new();
        let mut skipped = 0;
        for d in &mine {
            match golds.get(&d.query_id) {
                Some(g) => records.push(EvalRecord::new((*d).clone(), g)),
                None => skipped += 1,
            }
        }
        if skipped > 0 {
            warn!(%method, skipped, "decisions without gold answers were skipped");
        }
        if records.is_empty() {
            return Err(missing(format!(
                "no gold answers for any {method} decision"
            )));
        }
        let metrics = compute_metrics(&records).map_err(internal)?;

        // Curves sweep the score over the method's top answer, answered or not.
        let from_reports: Vec<ScoredOutcome> = reports
            .iter()
            .filter(|r| r.method.as_str() == method)
            .filter_map(|r| {
                let g = golds.get(&r.query_id)?;
                Some(ScoredOutcome {
                    query_id: r.query_id.clone(),
                    score: r.score,
                    correct: r.answer.as_deref().is_some_and(|a| judge_correct(a, g)),
                })
            })
            .collect();
        let outcomes = if from_reports.is_empty() {
            records
                .iter()
                .map(|r| ScoredOutcome {
                    query_id: r.query_id.clone(),
                    score: r.score,
                    correct: r.is_correct == Some(true),
                })
                .collect()
        } else {
            from_reports
        };
        match ar_curve(&outcomes) {
            Ok(points) => write_ar_csv(&config.out_dir.join(csv_name("ar", method)), &points)
                .map_err(internal)?,
            Err(e) => warn!(%method, "no AR curve: {e}"),
        }
        match calibration_bins(&outcomes) {
            Ok(bins) => {
                write_calibration_csv(&config.out_dir.join(csv_name("calibration", method)), &bins)
                    .map_err(internal)?
            }
            Err(e) => warn!(%method, "no calibration bins: {e}"),
        }
        summaries.push(MethodSummary {
            method: method.clone(),
            metrics,
            skipped,
        });
    }
    write_json(&config.out_dir.join(METRICS_FILE), &summaries).map_err(internal)?;

    let fmt = |x: Option<f64>| x.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"));
    println!(
        "{:<18} {:>5} {:>8} {:>8} {:>8} {:>8} {:>8}",
        "method", "n", "acc", "abstain", "correct", "truth", "auroc"
    );
    for s in &summaries {
        let m = &s.metrics;
        println!(
            "{:<18} {:>5} {:>8} {:>8.3} {:>8.3} {:>8.3} {:>8}",
            s.method,
            m.n,
            fmt(m.accuracy),
            m.abstention_rate,
            m.correctness,
            m.truthfulness,
            fmt(m.auroc)
        );
    }
    Ok(())
}
