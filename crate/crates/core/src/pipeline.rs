//! End-to-end commands: generate, train, encode, query, evaluate, sweep.
//!
//! Every command re-derives the train/query/database split from the seed and
//! split sizes, so commands sharing a config agree on the split.

use std::io::Write;
use std::path::Path;

use crate::config::{BitScaled, RunConfig};
use crate::data::{generate_synthetic, DatasetBundle, Splits};
use crate::error::{Error, Result};
use crate::index::{binarize, CodeDatabase};
use crate::metrics::{evaluate, Database, EvalOptions, MetricsReport, QuerySet};
use crate::model::HashModel;
use crate::objective::LossConfig;
use crate::trainer::{train, TrainConfig, TrainReport};

/// Runs `f` on a pool of `threads` workers (0 = one per core).
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> Result<R> + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    pool.install(f)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_with(path: &Path, f: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

/// Trains a freshly initialized model on the training split.
pub fn train_model(
    bundle: &DatasetBundle,
    splits: &Splits,
    arch_hidden: &[usize],
    train_cfg: &TrainConfig,
    loss: &LossConfig<f64>,
) -> Result<(HashModel<f64>, TrainReport)> {
    let arch = crate::model::Architecture {
        input_dim: bundle.feature_dim(),
        hidden: arch_hidden.to_vec(),
        code_bits: loss.bits,
    };
    let model = HashModel::init(&arch, train_cfg.seed)?;
    let x = bundle.features_of::<f64>(&splits.train);
    let labels = bundle.labels_of(&splits.train);
    train(x.view(), &labels, model, train_cfg, loss)
}

/// Binary codes for every item of the bundle, indexed by item id.
pub fn encode_all(model: &HashModel<f64>, bundle: &DatasetBundle) -> Result<CodeDatabase> {
    let ids: Vec<usize> = (0..bundle.len()).collect();
    let mut db = CodeDatabase::new(model.code_bits());
    for chunk in ids.chunks(1024) {
        let u = model.encode_batch(bundle.features_of::<f64>(chunk).view())?;
        for row in u.rows() {
            db.push(&binarize(row.as_slice().expect("contiguous row")))?;
        }
    }
    Ok(db)
}

fn subset(codes: &CodeDatabase, ids: &[usize]) -> Result<CodeDatabase> {
    let mut out = CodeDatabase::new(codes.bits());
    for &id in ids {
        if id >= codes.len() {
            return Err(Error::InvalidParameter(format!(
                "item {id} out of range for {} codes",
                codes.len()
            )));
        }
        out.push(&codes.get(id))?;
    }
    Ok(out)
}

/// Scores the query split against the database split.
pub fn evaluate_codes(
    codes: &CodeDatabase,
    bundle: &DatasetBundle,
    splits: &Splits,
    opts: &EvalOptions,
) -> Result<MetricsReport> {
    if codes.len() != bundle.len() {
        return Err(Error::DimensionMismatch {
            context: "codes per item",
            expected: bundle.len(),
            actual: codes.len(),
        });
    }
    let q_codes = subset(codes, &splits.query)?;
    let q_labels = bundle.labels_of(&splits.query);
    let db_codes = subset(codes, &splits.database)?;
    let db_labels = bundle.labels_of(&splits.database);
    // position of each query within the database list, if present
    let positions: Vec<Option<usize>> = splits
        .query
        .iter()
        .map(|q| splits.database.binary_search(q).ok())
        .collect();
    let overlap = positions.iter().all(Option::is_some);
    if !overlap && positions.iter().any(Option::is_some) {
        return Err(Error::InvalidParameter(
            "query split partially overlaps the database".into(),
        ));
    }
    let db_ids: Vec<usize> = positions.into_iter().flatten().collect();
    let queries = QuerySet {
        codes: &q_codes,
        labels: &q_labels,
        db_ids: overlap.then_some(db_ids.as_slice()),
    };
    let db = Database {
        codes: &db_codes,
        labels: &db_labels,
    };
    evaluate(&queries, &db, opts)
}

fn load_bundle(cfg: &RunConfig) -> Result<DatasetBundle> {
    DatasetBundle::ingest(&cfg.features_path(), &cfg.labels_path())
}

fn draw_splits(cfg: &RunConfig, bundle: &DatasetBundle) -> Result<Splits> {
    Splits::draw(bundle.len(), &cfg.split_spec(), cfg.seed)
}

pub fn run_generate(cfg: &RunConfig) -> Result<DatasetBundle> {
    let bundle = generate_synthetic(&cfg.synthetic_spec())?;
    ensure_dir(&cfg.out_dir)?;
    bundle.export(&cfg.features_path(), &cfg.labels_path())?;
    Ok(bundle)
}

/// Writes the checkpoint and `train_report.csv`.
pub fn run_train(cfg: &RunConfig) -> Result<TrainReport> {
    let bundle = load_bundle(cfg)?;
    let splits = draw_splits(cfg, &bundle)?;
    let (model, report) = train_model(&bundle, &splits, &cfg.hidden, &cfg.train_config(), &cfg.loss_config(cfg.bits))?;
    ensure_dir(&cfg.out_dir)?;
    model.save(&cfg.checkpoint_path())?;
    write_with(&cfg.out_dir.join("train_report.csv"), |w| report.write_csv(w))?;
    Ok(report)
}

pub fn run_encode(cfg: &RunConfig) -> Result<CodeDatabase> {
    let bundle = load_bundle(cfg)?;
    let model = HashModel::<f64>::load(&cfg.checkpoint_path())?;
    if model.input_dim() != bundle.feature_dim() {
        return Err(Error::DimensionMismatch {
            context: "checkpoint input width",
            expected: bundle.feature_dim(),
            actual: model.input_dim(),
        });
    }
    let codes = encode_all(&model, &bundle)?;
    ensure_dir(&cfg.out_dir)?;
    codes.save(&cfg.codes_path())?;
    Ok(codes)
}

/// Ranked database entries for each query id, as `ranked.csv`.
pub fn run_query(cfg: &RunConfig) -> Result<Vec<(usize, crate::index::RankedList)>> {
    let bundle = load_bundle(cfg)?;
    let splits = draw_splits(cfg, &bundle)?;
    let codes = CodeDatabase::load(&cfg.codes_path())?;
    if codes.len() != bundle.len() {
        return Err(Error::DimensionMismatch {
            context: "codes per item",
            expected: bundle.len(),
            actual: codes.len(),
        });
    }
    let db = subset(&codes, &splits.database)?;
    let query_ids = if cfg.query_ids.is_empty() { splits.query.clone() } else { cfg.query_ids.clone() };
    let mut results = Vec::with_capacity(query_ids.len());
    for &q in &query_ids {
        if q >= codes.len() {
            return Err(Error::InvalidParameter(format!("query id {q} out of range")));
        }
        let own = splits.database.binary_search(&q).ok().filter(|_| !cfg.self_match);
        let mut ranked = db.rank_filtered(&codes.get(q), |pos| Some(pos) != own)?;
        for e in &mut ranked.entries {
            e.0 = splits.database[e.0];
        }
        if let Some(k) = cfg.query_top {
            ranked.entries.truncate(k);
        }
        results.push((q, ranked));
    }
    ensure_dir(&cfg.out_dir)?;
    write_with(&cfg.out_dir.join("ranked.csv"), |w| {
        writeln!(w, "query,rank,id,distance")?;
        for (q, ranked) in &results {
            for (rank, (id, d)) in ranked.entries.iter().enumerate() {
                writeln!(w, "{q},{},{id},{d}", rank + 1)?;
            }
        }
        Ok(())
    })?;
    Ok(results)
}

/// Writes `metrics.json` and `metrics.csv`.
pub fn run_evaluate(cfg: &RunConfig) -> Result<MetricsReport> {
    let bundle = load_bundle(cfg)?;
    let splits = draw_splits(cfg, &bundle)?;
    let codes = CodeDatabase::load(&cfg.codes_path())?;
    let report = evaluate_codes(&codes, &bundle, &splits, &cfg.eval_options())?;
    ensure_dir(&cfg.out_dir)?;
    write_with(&cfg.out_dir.join("metrics.json"), |w| writeln!(w, "{}", report.to_json()))?;
    write_with(&cfg.out_dir.join("metrics.csv"), |w| report.write_csv(w))?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub alpha: BitScaled,
    pub gamma: BitScaled,
    pub lambda: BitScaled,
    pub report: MetricsReport,
}

/// Train, encode and evaluate over the grid of sweep values; writes `sweep.csv`.
pub fn run_sweep(cfg: &RunConfig) -> Result<Vec<SweepRow>> {
    let bundle = load_bundle(cfg)?;
    let splits = draw_splits(cfg, &bundle)?;
    let or_default = |list: &[BitScaled], v: BitScaled| if list.is_empty() { vec![v] } else { list.to_vec() };
    let alphas = or_default(&cfg.sweep_alpha, cfg.alpha);
    let gammas = or_default(&cfg.sweep_gamma, cfg.gamma);
    let lambdas = or_default(&cfg.sweep_lambda, cfg.lambda);

    let mut rows = Vec::new();
    for &alpha in &alphas {
        for &gamma in &gammas {
            for &lambda in &lambdas {
                let mut run = cfg.clone();
                run.alpha = alpha;
                run.gamma = gamma;
                run.lambda = lambda;
                let loss = run.loss_config(run.bits);
                let (model, _) = train_model(&bundle, &splits, &run.hidden, &run.train_config(), &loss)?;
                let codes = encode_all(&model, &bundle)?;
                let report = evaluate_codes(&codes, &bundle, &splits, &run.eval_options())?;
                rows.push(SweepRow { alpha, gamma, lambda, report });
            }
        }
    }

    ensure_dir(&cfg.out_dir)?;
    write_with(&cfg.out_dir.join("sweep.csv"), |w| {
        let mut header = vec!["alpha".to_string(), "gamma".into(), "lambda".into()];
        for n in &cfg.top_n {
            for m in ["map", "wap", "acg", "ndcg"] {
                header.push(format!("{m}@{n}"));
            }
        }
        writeln!(w, "{}", header.join(","))?;
        for r in &rows {
            let mut cells = vec![r.alpha.to_string(), r.gamma.to_string(), r.lambda.to_string()];
            for c in &r.report.cutoffs {
                cells.extend([c.map, c.wap, c.acg, c.ndcg].iter().map(f64::to_string));
            }
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    })?;
    Ok(rows)
}
