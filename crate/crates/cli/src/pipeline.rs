//! The prepare → train → attack stages and their on-disk layout.
//!
//! ```text
//! <out>/prepared/                     canonical dataset, split, frozen candidates
//! <out>/runs/<model>-orig/            model.ckpt  history.tsv  report.tsv  report.jsonl
//! <out>/runs/<model>-<sm|cm>-lambda<λ>/
//! <out>/sweep-<model>-<method>/       sweep.tsv  report.jsonl
//! ```
//! Every stage also writes `config.resolved` and `manifest.json` next to its
//! outputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use fairrec::data::{
    freeze_candidates, generate_synthetic, load_movielens, load_tabular, split_dataset, Dataset, Mask, Prepared,
    SplitKind, TrainMatrix,
};
use fairrec::eval::{
    assemble_report, attack_features, merge_reports, read_jsonl, write_embeddings, write_jsonl, write_table,
    CellResult, MetricReport, RunInfo,
};
use fairrec::fairness::{AdversarialTrainer, FairModel};
use fairrec::numcore::{Checkpoint, Rng};
use fairrec::recmodels::{evaluate_plain, fit_plain, FitOutcome, ModelKind, TrainRngs};
use fairrec::{Error, FairModel64, Matrix64, RecModel64, Result};
use serde::Serialize;

use crate::config::{Experiment, Method, Source};

pub const CHECKPOINT: &str = "model.ckpt";

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub config_hash: String,
    pub fingerprint: String,
    pub seed: u64,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub failures: Vec<String>,
    pub timings_ms: BTreeMap<String, u128>,
}

impl Manifest {
    fn new(command: &str, exp: &Experiment, fingerprint: &str) -> Self {
        Manifest {
            command: command.into(),
            config_hash: exp.config.hash(),
            fingerprint: fingerprint.into(),
            seed: exp.seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            failures: Vec::new(),
            timings_ms: BTreeMap::new(),
        }
    }

    fn write(&self, dir: &Path, exp: &Experiment) -> Result<()> {
        write_text(&dir.join("config.resolved"), &exp.config.render())?;
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Data(e.to_string()))?;
        write_text(&dir.join("manifest.json"), &(json + "\n"))
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, text).map_err(io_err(path))
}

fn write_with(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    f(&mut buf).map_err(io_err(path))?;
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, buf).map_err(io_err(path))
}

fn millis(t: Instant) -> u128 {
    t.elapsed().as_millis()
}

pub fn load_source(exp: &Experiment) -> Result<Dataset> {
    let raw = match &exp.source {
        Source::Synthetic(spec) => generate_synthetic(spec, &mut Rng::named(exp.seed, "synthetic"))?.dataset,
        Source::MovieLens(dir) => load_movielens(dir.join("ratings.dat"), dir.join("users.dat"))?,
        Source::Tabular(path, schema) => load_tabular(path, schema)?,
    };
    let raw = match &exp.features {
        Some(names) => raw.select_features(names)?,
        None => raw,
    };
    raw.filter_min_interactions(exp.min_interactions)
}

/// Human-readable summary printed by `prepare`.
pub fn banner(p: &Prepared) -> String {
    let s = p.dataset.stats();
    let mut out = format!(
        "users {}  items {}  interactions {}  sparsity {:.4}%\n",
        s.users,
        s.items,
        s.interactions,
        100.0 * s.sparsity
    );
    writeln!(
        out,
        "split train {}  validation {}  test {}",
        p.split.count(SplitKind::Train),
        p.split.count(SplitKind::Validation),
        p.split.count(SplitKind::Test)
    )
    .unwrap();
    for f in p.dataset.features() {
        let parts: Vec<String> = f
            .labels
            .iter()
            .zip(f.histogram())
            .map(|(l, n)| format!("{l}:{n}"))
            .collect();
        writeln!(out, "feature {} ({} classes)  {}", f.name, f.cardinality(), parts.join(" ")).unwrap();
    }
    let short = p.validation.total_shortfall() + p.test.total_shortfall();
    if short > 0 {
        writeln!(out, "warning: {short} evaluation negatives could not be drawn").unwrap();
    }
    writeln!(out, "fingerprint {}", p.dataset.fingerprint()).unwrap();
    out
}

pub fn prepare(exp: &Experiment) -> Result<Prepared> {
    let start = Instant::now();
    let dataset = load_source(exp)?;
    let split = split_dataset(&dataset, exp.split, &mut Rng::named(exp.seed, "split"))?;
    let validation = freeze_candidates(
        &dataset,
        &split,
        SplitKind::Validation,
        exp.n_negatives,
        &mut Rng::named(exp.seed, "negatives.validation"),
    );
    let test = freeze_candidates(
        &dataset,
        &split,
        SplitKind::Test,
        exp.n_negatives,
        &mut Rng::named(exp.seed, "negatives.test"),
    );
    let prepared = Prepared {
        dataset,
        split,
        validation,
        test,
    };
    prepared.write(&exp.prepared)?;
    let mut m = Manifest::new("prepare", exp, &prepared.dataset.fingerprint());
    m.outputs.push(exp.prepared.display().to_string());
    m.timings_ms.insert("prepare".into(), millis(start));
    m.write(&exp.prepared, exp)?;
    Ok(prepared)
}

pub fn load_prepared(exp: &Experiment) -> Result<Prepared> {
    if !exp.prepared.join("interactions.tsv").exists() {
        return Err(Error::Config(format!(
            "no prepared dataset at {}; run `prepare` first",
            exp.prepared.display()
        )));
    }
    Prepared::read(&exp.prepared)
}

fn train_matrix(kind: ModelKind, p: &Prepared) -> Option<Arc<TrainMatrix>> {
    (kind == ModelKind::Dmf).then(|| Arc::new(TrainMatrix::new(&p.dataset, &p.split)))
}

/// A trained model of either kind.
pub enum Trained {
    Plain(RecModel64),
    Fair(FairModel64),
}

impl Trained {
    fn checkpoint(&self, exp: &Experiment) -> Checkpoint {
        let ck = match self {
            Trained::Plain(m) => m.to_checkpoint(exp.seed),
            Trained::Fair(f) => f.to_checkpoint(exp.seed),
        };
        ck.meta("method", exp.method.as_str())
            .meta("lambda", exp.adversary.lambda)
    }

    /// Ranking quality and user embeddings under `mask`; plain models only
    /// have the unfiltered view.
    fn view(&self, p: &Prepared, mask: Mask, top_n: usize) -> Result<(fairrec::eval::RankingMetrics, Matrix64)> {
        match self {
            Trained::Plain(m) => {
                let users: Vec<u32> = (0..m.n_users() as u32).collect();
                Ok((evaluate_plain(m, &p.test, top_n)?, m.user_reps(&users)?))
            }
            Trained::Fair(f) => Ok((f.evaluate(&p.test, mask, top_n)?, f.embeddings(mask)?)),
        }
    }
}

pub struct TrainSummary {
    pub run_dir: PathBuf,
    pub checkpoint: PathBuf,
    pub outcome: FitOutcome,
    pub model: Trained,
}

fn history_table(outcome: &FitOutcome) -> String {
    let mut out = String::from("epoch\tloss\tvalidation_ndcg\n");
    for h in &outcome.history {
        let v = h.validation_ndcg.map_or("-".to_string(), |v| format!("{v:.6}"));
        writeln!(out, "{}\t{:.6}\t{v}", h.epoch, h.loss).unwrap();
    }
    out
}

/// Trains the configured model and keeps the best validation epoch. The
/// checkpoint is rewritten at every new best, so a diverging run leaves the
/// last good state behind.
pub fn train(exp: &Experiment) -> Result<TrainSummary> {
    let start = Instant::now();
    let p = load_prepared(exp)?;
    let run_dir = exp.run_dir();
    fs::create_dir_all(&run_dir).map_err(io_err(&run_dir))?;
    let ck_path = run_dir.join(CHECKPOINT);
    let _ = fs::remove_file(&ck_path);
    let model = RecModel64::new(
        exp.model,
        p.dataset.n_users(),
        p.dataset.n_items(),
        exp.dim,
        train_matrix(exp.model, &p),
        &mut Rng::named(exp.seed, "init"),
    )?;
    let rngs = TrainRngs::new(exp.seed);
    let save = |t: Trained| t.checkpoint(exp).save(&ck_path);
    let result = match exp.method {
        Method::Orig => {
            let mut model = model;
            let mut rngs = rngs;
            let mut on_best = |m: &RecModel64, _: usize| save(Trained::Plain(m.clone()));
            fit_plain(
                &mut model,
                &p.dataset,
                &p.split,
                Some(&p.validation),
                &exp.train,
                &mut rngs,
                &mut on_best,
            )
            .map(|o| (o, Trained::Plain(model)))
        }
        Method::Filtered(method) => {
            let cards: Vec<usize> = p.dataset.features().iter().map(|f| f.cardinality()).collect();
            let fair = FairModel::new(model, method, &cards, &mut Rng::named(exp.seed, "init.adversary"))?;
            let full = Mask::full(cards.len());
            let mut trainer =
                AdversarialTrainer::new(fair, &p.dataset, &p.split, exp.train.clone(), exp.adversary.clone(), rngs)?;
            let mut on_best = |f: &FairModel64, _: usize| save(Trained::Fair(f.clone()));
            trainer
                .fit(Some(&p.validation), full, &mut on_best)
                .map(|o| (o, Trained::Fair(trainer.fair)))
        }
    };
    let (outcome, model) = match result {
        Ok(r) => r,
        Err(Error::Divergence(msg)) | Err(Error::NonFinite(msg)) => {
            let hint = if ck_path.exists() {
                format!("; last good checkpoint {}", ck_path.display())
            } else {
                "; no checkpoint was written".to_string()
            };
            return Err(Error::Divergence(msg + &hint));
        }
        Err(e) => return Err(e),
    };
    write_text(&run_dir.join("history.tsv"), &history_table(&outcome))?;
    let mut m = Manifest::new("train", exp, &p.dataset.fingerprint());
    m.inputs.push(exp.prepared.display().to_string());
    m.outputs.push(ck_path.display().to_string());
    m.timings_ms.insert("train".into(), millis(start));
    m.write(&run_dir, exp)?;
    Ok(TrainSummary {
        run_dir,
        checkpoint: ck_path,
        outcome,
        model,
    })
}

pub fn load_trained(exp: &Experiment, p: &Prepared) -> Result<Trained> {
    let path = exp.run_dir().join(CHECKPOINT);
    if !path.exists() {
        return Err(Error::Config(format!("no checkpoint at {}; run `train` first", path.display())));
    }
    let ck = Checkpoint::load(&path)?;
    let kind: ModelKind = ck.get_meta("kind")?.parse()?;
    let train = train_matrix(kind, p);
    Ok(match exp.method {
        Method::Orig => Trained::Plain(RecModel64::from_checkpoint(&ck, train)?),
        Method::Filtered(_) => Trained::Fair(FairModel64::from_checkpoint(&ck, train)?),
    })
}

/// Rows evaluated by `attack`: the unfiltered row for plain models and
/// every nonempty feature combination for filtered ones.
pub fn default_masks(exp: &Experiment, n_features: usize) -> Vec<Mask> {
    match exp.method {
        Method::Orig => vec![Mask::empty()],
        Method::Filtered(_) => Mask::all_nonempty(n_features),
    }
}

fn combination_label(exp: &Experiment, mask: Mask, names: &[String]) -> String {
    match exp.method {
        Method::Orig => "-".into(),
        Method::Filtered(_) => mask.label(names),
    }
}

/// Evaluates ranking and trains one attacker per feature for each mask.
pub fn evaluate_masks(exp: &Experiment, p: &Prepared, model: &Trained, masks: &[Mask]) -> Result<Vec<MetricReport>> {
    if p.dataset.features().is_empty() {
        return Err(Error::Data("the dataset has no sensitive feature labels to attack".into()));
    }
    let names: Vec<String> = p.dataset.features().iter().map(|f| f.name.clone()).collect();
    let mut cells = Vec::new();
    for &mask in masks {
        let combination = combination_label(exp, mask, &names);
        let (ranking, emb) = model.view(p, mask, exp.top_n)?;
        if exp.dump_embeddings {
            let tag = if combination == "-" { "orig".to_string() } else { combination.clone() };
            let path = exp.run_dir().join(format!("embeddings_{tag}.tsv"));
            write_with(&path, |w| write_embeddings(p.dataset.user_ids(), &emb, w))?;
        }
        let rng = Rng::named(exp.seed, &format!("attacker.{}", mask.bits()));
        let attackers = attack_features(&emb, &p.dataset, &exp.attacker, &rng)?;
        cells.push(CellResult {
            combination,
            ranking,
            attackers,
        });
    }
    let run = RunInfo {
        model: exp.model.to_string(),
        method: exp.method.as_str().into(),
        lambda: match exp.method {
            Method::Orig => 0.0,
            Method::Filtered(_) => exp.adversary.lambda,
        },
        seed: exp.seed,
        fingerprint: p.dataset.fingerprint(),
    };
    assemble_report(&run, &cells)
}

pub fn write_reports(dir: &Path, rows: &[MetricReport]) -> Result<()> {
    write_with(&dir.join("report.tsv"), |w| write_table(rows, w))?;
    write_with(&dir.join("report.jsonl"), |w| write_jsonl(rows, w))
}

pub fn attack(exp: &Experiment) -> Result<Vec<MetricReport>> {
    let start = Instant::now();
    let p = load_prepared(exp)?;
    let model = load_trained(exp, &p)?;
    let masks = default_masks(exp, p.dataset.features().len());
    let rows = evaluate_masks(exp, &p, &model, &masks)?;
    let dir = exp.run_dir();
    write_reports(&dir, &rows)?;
    let mut m = Manifest::new("attack", exp, &p.dataset.fingerprint());
    m.inputs.push(dir.join(CHECKPOINT).display().to_string());
    m.outputs.push(dir.join("report.tsv").display().to_string());
    m.outputs.push(dir.join("report.jsonl").display().to_string());
    m.timings_ms.insert("attack".into(), millis(start));
    m.write(&dir, exp)?;
    Ok(rows)
}

pub struct SweepSummary {
    pub dir: PathBuf,
    pub rows: Vec<MetricReport>,
    pub failures: Vec<(f64, Error)>,
}

/// One filtered run per grid value, each evaluated under the full feature
/// combination. A failing value is reported and skipped.
pub fn sweep_lambda(exp: &Experiment) -> Result<SweepSummary> {
    let start = Instant::now();
    let method = match exp.method {
        Method::Orig => "sm",
        m => m.as_str(),
    };
    if exp.lambda_grid.is_empty() {
        return Err(Error::Config("lambda_grid is empty".into()));
    }
    let p = load_prepared(exp)?;
    let k = p.dataset.features().len();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut m = Manifest::new("sweep-lambda", exp, &p.dataset.fingerprint());
    for &lambda in &exp.lambda_grid {
        let t = Instant::now();
        let run = exp.with("method", method)?.with("lambda", &lambda.to_string())?;
        let result = train(&run).and_then(|s| evaluate_masks(&run, &p, &s.model, &[Mask::full(k)]));
        match result {
            Ok(r) => {
                m.outputs.push(run.run_dir().join(CHECKPOINT).display().to_string());
                rows.extend(r);
            }
            Err(e) => {
                eprintln!("lambda {lambda}: {e}");
                m.failures.push(format!("lambda {lambda}: {e}"));
                failures.push((lambda, e));
            }
        }
        m.timings_ms.insert(format!("lambda={lambda}"), millis(t));
    }
    let dir = exp.out.join(format!("sweep-{}-{}", exp.model, method));
    write_with(&dir.join("sweep.tsv"), |w| write_table(&rows, w))?;
    write_with(&dir.join("report.jsonl"), |w| write_jsonl(&rows, w))?;
    m.timings_ms.insert("sweep".into(), millis(start));
    m.write(&dir, exp)?;
    if rows.is_empty() {
        return Err(failures.remove(0).1);
    }
    Ok(SweepSummary { dir, rows, failures })
}

fn collect_jsonl(path: &Path, found: &mut Vec<PathBuf>) -> Result<()> {
    if path.is_file() {
        found.push(path.to_path_buf());
        return Ok(());
    }
    let mut entries: Vec<PathBuf> = fs::read_dir(path)
        .map_err(io_err(path))?
        .map(|e| e.map(|e| e.path()).map_err(io_err(path)))
        .collect::<Result<_>>()?;
    entries.sort();
    for e in entries {
        if e.is_dir() {
            collect_jsonl(&e, found)?;
        } else if e.file_name().is_some_and(|n| n == "report.jsonl") {
            found.push(e);
        }
    }
    Ok(())
}

/// Merges every `report.jsonl` found under `inputs` into `out`.
pub fn report(inputs: &[PathBuf], out: &Path) -> Result<Vec<MetricReport>> {
    let mut files = Vec::new();
    for i in inputs {
        collect_jsonl(i, &mut files)?;
    }
    let mut sets = Vec::new();
    for f in &files {
        let file = fs::File::open(f).map_err(io_err(f))?;
        sets.push(read_jsonl(BufReader::new(file))?);
    }
    let rows = merge_reports(sets)?;
    write_reports(out, &rows)?;
    Ok(rows)
}

/// Process exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        Error::Data(_) | Error::Parse { .. } | Error::Io { .. } | Error::Checkpoint(_) => 3,
        Error::Divergence(_) | Error::NonFinite(_) => 4,
        _ => 1,
    }
}
