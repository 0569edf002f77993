//! Multi-label retrieval metrics over Hamming rankings.
//!
//! Relevance of a retrieved item is graded by `C(q, i)`, the number of labels
//! it shares with the query; it is binary-relevant when `C(q, i) > 0`.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::index::{CodeDatabase, RankedList};
use crate::labels::LabelVector;

/// Shared-label counts of a ranked list, in rank order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelevanceProfile {
    shared: Vec<u32>,
}

impl RelevanceProfile {
    pub fn new(shared: Vec<u32>) -> Self {
        Self { shared }
    }

    pub fn from_ranking(query: &LabelVector, ranking: &RankedList, db_labels: &[LabelVector]) -> Result<Self> {
        let shared = ranking
            .ids()
            .map(|id| {
                let l = db_labels.get(id).ok_or_else(|| {
                    Error::InvalidParameter(format!("ranked id {id} has no label"))
                })?;
                query.shared(l)
            })
            .collect::<Result<_>>()?;
        Ok(Self { shared })
    }

    pub fn len(&self) -> usize {
        self.shared.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shared.is_empty()
    }

    pub fn shared(&self) -> &[u32] {
        &self.shared
    }

    pub fn is_relevant(&self, rank: usize) -> bool {
        self.shared[rank] > 0
    }

    pub fn has_relevant(&self) -> bool {
        self.shared.iter().any(|&c| c > 0)
    }

    fn top(&self, n: usize) -> Result<&[u32]> {
        if n == 0 {
            return Err(Error::InvalidParameter("cutoff n must be at least 1".into()));
        }
        if n > self.shared.len() {
            return Err(Error::InvalidParameter(format!(
                "cutoff {n} exceeds ranked list of length {}",
                self.shared.len()
            )));
        }
        Ok(&self.shared[..n])
    }
}

pub fn acg_at(profile: &RelevanceProfile, n: usize) -> Result<f64> {
    let top = profile.top(n)?;
    Ok(top.iter().map(|&c| f64::from(c)).sum::<f64>() / n as f64)
}

fn dcg(gains: impl Iterator<Item = u32>) -> f64 {
    gains
        .enumerate()
        .map(|(i, c)| (2f64.powi(c as i32) - 1.0) / ((i + 2) as f64).log2())
        .sum()
}

/// Discounted cumulative gain with base-2 discount.
pub fn dcg_at(profile: &RelevanceProfile, n: usize) -> Result<f64> {
    Ok(dcg(profile.top(n)?.iter().copied()))
}

/// DCG normalized by the DCG of the same top-`n` gains sorted descending; 0 when that is 0.
pub fn ndcg_at(profile: &RelevanceProfile, n: usize) -> Result<f64> {
    let top = profile.top(n)?;
    let mut ideal = top.to_vec();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let z = dcg(ideal.into_iter());
    if z == 0.0 {
        return Ok(0.0);
    }
    Ok(dcg(top.iter().copied()) / z)
}

pub fn precision_at(profile: &RelevanceProfile, n: usize) -> Result<f64> {
    let top = profile.top(n)?;
    Ok(top.iter().filter(|&&c| c > 0).count() as f64 / n as f64)
}

/// Average precision at a cutoff; `relevant == 0` flags a relevant-free top-n.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApScore {
    pub value: f64,
    pub relevant: usize,
}

impl ApScore {
    pub fn is_relevant_free(&self) -> bool {
        self.relevant == 0
    }
}

pub fn average_precision(profile: &RelevanceProfile, n: usize) -> Result<ApScore> {
    let top = profile.top(n)?;
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &c) in top.iter().enumerate() {
        if c > 0 {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    let value = if hits == 0 { 0.0 } else { sum / hits as f64 };
    Ok(ApScore { value, relevant: hits })
}

/// Per-query weighted average precision: mean of `ACG@i` over relevant ranks `i <= n`.
pub fn weighted_average_precision(profile: &RelevanceProfile, n: usize) -> Result<ApScore> {
    let top = profile.top(n)?;
    let mut hits = 0usize;
    let mut cumulative = 0u64;
    let mut sum = 0.0;
    for (i, &c) in top.iter().enumerate() {
        cumulative += u64::from(c);
        if c > 0 {
            hits += 1;
            sum += cumulative as f64 / (i + 1) as f64;
        }
    }
    let value = if hits == 0 { 0.0 } else { sum / hits as f64 };
    Ok(ApScore { value, relevant: hits })
}

/// Mean over the queries that have at least one relevant item anywhere in their ranking.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Aggregate {
    pub mean: f64,
    pub included: usize,
    pub excluded: usize,
}

fn aggregate(
    profiles: &[RelevanceProfile],
    what: &'static str,
    score: impl Fn(&RelevanceProfile) -> Result<f64>,
) -> Result<Aggregate> {
    if profiles.is_empty() {
        return Err(Error::Empty("query profiles"));
    }
    let mut sum = 0.0;
    let mut included = 0;
    for p in profiles {
        if p.has_relevant() {
            sum += score(p)?;
            included += 1;
        }
    }
    if included == 0 {
        return Err(Error::NoRelevantQueries { what });
    }
    Ok(Aggregate {
        mean: sum / included as f64,
        included,
        excluded: profiles.len() - included,
    })
}

pub fn map(profiles: &[RelevanceProfile], n: usize) -> Result<Aggregate> {
    aggregate(profiles, "MAP", |p| Ok(average_precision(p, n)?.value))
}

pub fn wap(profiles: &[RelevanceProfile], n: usize) -> Result<Aggregate> {
    aggregate(profiles, "WAP", |p| Ok(weighted_average_precision(p, n)?.value))
}

/// Evaluation cutoff: a fixed `n` or the whole ranked list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TopN {
    At(usize),
    All,
}

impl TopN {
    fn resolve(self, len: usize) -> usize {
        match self {
            TopN::At(n) => n,
            TopN::All => len,
        }
    }
}

impl fmt::Display for TopN {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TopN::At(n) => write!(f, "{n}"),
            TopN::All => f.write_str("all"),
        }
    }
}

impl FromStr for TopN {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "all" {
            return Ok(TopN::All);
        }
        match s.parse::<usize>() {
            Ok(n) if n > 0 => Ok(TopN::At(n)),
            _ => Err(Error::InvalidParameter(format!("bad cutoff '{s}' (expected positive integer or 'all')"))),
        }
    }
}

impl Serialize for TopN {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerQuery {
    pub acg: Vec<f64>,
    pub ndcg: Vec<f64>,
    pub ap: Vec<f64>,
    pub wap: Vec<f64>,
    pub precision: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CutoffReport {
    pub n: TopN,
    pub map: f64,
    pub wap: f64,
    pub acg: f64,
    pub ndcg: f64,
    pub precision: f64,
    pub relevant_free_queries: usize,
    pub per_query: PerQuery,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub queries: usize,
    pub database_size: usize,
    pub self_match: bool,
    pub cutoffs: Vec<CutoffReport>,
}

impl MetricsReport {
    pub fn cutoff(&self, n: TopN) -> Option<&CutoffReport> {
        self.cutoffs.iter().find(|c| c.n == n)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One row per query, five metric columns per cutoff.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let mut header = vec!["query".to_string()];
        for c in &self.cutoffs {
            for m in ["acg", "ndcg", "ap", "wap", "precision"] {
                header.push(format!("{m}@{}", c.n));
            }
        }
        writeln!(w, "{}", header.join(","))?;
        for q in 0..self.queries {
            let mut row = vec![q.to_string()];
            for c in &self.cutoffs {
                let p = &c.per_query;
                for v in [p.acg[q], p.ndcg[q], p.ap[q], p.wap[q], p.precision[q]] {
                    row.push(v.to_string());
                }
            }
            writeln!(w, "{}", row.join(","))?;
        }
        w.flush()
    }
}

/// Query side of an evaluation.
pub struct QuerySet<'a> {
    pub codes: &'a CodeDatabase,
    pub labels: &'a [LabelVector],
    /// Database id of each query when the query set overlaps the database.
    pub db_ids: Option<&'a [usize]>,
}

pub struct Database<'a> {
    pub codes: &'a CodeDatabase,
    pub labels: &'a [LabelVector],
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub cutoffs: Vec<TopN>,
    /// Whether a query may retrieve its own database entry.
    pub self_match: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            cutoffs: vec![TopN::All],
            self_match: false,
        }
    }
}

/// Ranks every query against the database and scores the rankings.
pub fn evaluate(queries: &QuerySet<'_>, db: &Database<'_>, opts: &EvalOptions) -> Result<MetricsReport> {
    if db.codes.is_empty() {
        return Err(Error::Empty("database"));
    }
    if opts.cutoffs.is_empty() {
        return Err(Error::InvalidParameter("no cutoffs requested".into()));
    }
    let check = |expected: usize, actual: usize, context| {
        if expected != actual {
            Err(Error::DimensionMismatch { context, expected, actual })
        } else {
            Ok(())
        }
    };
    check(db.codes.len(), db.labels.len(), "database labels")?;
    check(queries.codes.len(), queries.labels.len(), "query labels")?;
    if let Some(ids) = queries.db_ids {
        check(queries.codes.len(), ids.len(), "query database ids")?;
    }
    check(db.codes.bits(), queries.codes.bits(), "query code length")?;

    let profiles: Vec<RelevanceProfile> = (0..queries.codes.len())
        .into_par_iter()
        .map(|q| {
            let code = queries.codes.get(q);
            let own = queries.db_ids.filter(|_| !opts.self_match).map(|ids| ids[q]);
            let ranking = db.codes.rank_filtered(&code, |id| Some(id) != own)?;
            RelevanceProfile::from_ranking(&queries.labels[q], &ranking, db.labels)
        })
        .collect::<Result<_>>()?;

    let cutoffs = opts
        .cutoffs
        .iter()
        .map(|&n| score_cutoff(&profiles, n))
        .collect::<Result<_>>()?;
    Ok(MetricsReport {
        queries: profiles.len(),
        database_size: db.codes.len(),
        self_match: opts.self_match,
        cutoffs,
    })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn score_cutoff(profiles: &[RelevanceProfile], n: TopN) -> Result<CutoffReport> {
    let rows: Vec<[f64; 5]> = profiles
        .par_iter()
        .map(|p| {
            let k = n.resolve(p.len());
            Ok([
                acg_at(p, k)?,
                ndcg_at(p, k)?,
                average_precision(p, k)?.value,
                weighted_average_precision(p, k)?.value,
                precision_at(p, k)?,
            ])
        })
        .collect::<Result<_>>()?;
    let column = |c: usize| rows.iter().map(|r| r[c]).collect::<Vec<f64>>();
    let per_query = PerQuery {
        acg: column(0),
        ndcg: column(1),
        ap: column(2),
        wap: column(3),
        precision: column(4),
    };
    let included: Vec<usize> = (0..profiles.len()).filter(|&q| profiles[q].has_relevant()).collect();
    if included.is_empty() {
        return Err(Error::NoRelevantQueries { what: "evaluation" });
    }
    let over_included = |v: &[f64]| included.iter().map(|&q| v[q]).sum::<f64>() / included.len() as f64;
    Ok(CutoffReport {
        n,
        map: over_included(&per_query.ap),
        wap: over_included(&per_query.wap),
        acg: mean(&per_query.acg),
        ndcg: mean(&per_query.ndcg),
        precision: mean(&per_query.precision),
        relevant_free_queries: profiles.len() - included.len(),
        per_query,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::BinaryCode;
    use proptest::prelude::*;

    fn prof(c: &[u32]) -> RelevanceProfile {
        RelevanceProfile::new(c.to_vec())
    }

    #[test]
    fn acg_examples() {
        assert_eq!(acg_at(&prof(&[2, 0, 1]), 3).unwrap(), 1.0);
        assert_eq!(acg_at(&prof(&[0, 0, 0]), 3).unwrap(), 0.0);
        assert_eq!(acg_at(&prof(&[3, 0, 1]), 1).unwrap(), 3.0);
        assert!(acg_at(&prof(&[1]), 2).is_err());
        assert!(acg_at(&prof(&[1]), 0).is_err());
    }

    #[test]
    fn ndcg_examples() {
        let p = prof(&[2, 0, 1]);
        assert!((dcg_at(&p, 3).unwrap() - 3.5).abs() < 1e-12);
        let z = 3.0 + 1.0 / 3f64.log2();
        assert!((ndcg_at(&p, 3).unwrap() - 3.5 / z).abs() < 1e-12);
        assert!((ndcg_at(&p, 3).unwrap() - 0.9640).abs() < 1e-4);
        assert_eq!(ndcg_at(&prof(&[3, 2, 2, 0]), 4).unwrap(), 1.0);
        assert_eq!(ndcg_at(&prof(&[0, 0]), 2).unwrap(), 0.0);
    }

    #[test]
    fn ap_examples() {
        let ap = average_precision(&prof(&[1, 0, 1]), 3).unwrap();
        assert!((ap.value - 5.0 / 6.0).abs() < 1e-12);
        assert_eq!(average_precision(&prof(&[1, 2, 1]), 3).unwrap().value, 1.0);
        let none = average_precision(&prof(&[0, 0]), 2).unwrap();
        assert_eq!(none.value, 0.0);
        assert!(none.is_relevant_free());
    }

    #[test]
    fn map_examples() {
        let single = map(&[prof(&[1, 0, 1])], 3).unwrap();
        assert!((single.mean - 5.0 / 6.0).abs() < 1e-12);
        // AP 1.0 and 0.5
        let two = map(&[prof(&[1, 0]), prof(&[0, 1])], 2).unwrap();
        assert_eq!(two.mean, 0.75);
        assert!(matches!(map(&[prof(&[0, 0])], 2), Err(Error::NoRelevantQueries { .. })));
        assert!(map(&[], 1).is_err());
        let partial = map(&[prof(&[1, 0]), prof(&[0, 0])], 2).unwrap();
        assert_eq!((partial.included, partial.excluded), (1, 1));
    }

    #[test]
    fn wap_examples() {
        assert!((wap(&[prof(&[2, 0, 1])], 3).unwrap().mean - 1.5).abs() < 1e-12);
        assert_eq!(wap(&[prof(&[1, 1, 1, 1])], 4).unwrap().mean, 1.0);
        assert!(wap(&[prof(&[0]), prof(&[0])], 1).is_err());
    }

    #[test]
    fn top_n_parsing() {
        assert_eq!("all".parse::<TopN>().unwrap(), TopN::All);
        assert_eq!("5".parse::<TopN>().unwrap(), TopN::At(5));
        assert!("0".parse::<TopN>().is_err());
        assert!("x".parse::<TopN>().is_err());
    }

    fn lv(v: &[u8]) -> LabelVector {
        LabelVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn self_retrieval_with_self_match() {
        let codes = CodeDatabase::from_codes(&[
            BinaryCode::from_signs(&[true, true, false]),
            BinaryCode::from_signs(&[false, true, false]),
            BinaryCode::from_signs(&[false, false, true]),
        ])
        .unwrap();
        let labels = vec![lv(&[1, 0]), lv(&[0, 1]), lv(&[1, 1])];
        let ids = [0, 1, 2];
        let q = QuerySet { codes: &codes, labels: &labels, db_ids: Some(&ids) };
        let db = Database { codes: &codes, labels: &labels };
        let opts = EvalOptions { cutoffs: vec![TopN::At(1), TopN::All], self_match: true };
        let report = evaluate(&q, &db, &opts).unwrap();
        assert_eq!(report.cutoff(TopN::At(1)).unwrap().precision, 1.0);

        let excl = evaluate(&q, &db, &EvalOptions { self_match: false, ..opts }).unwrap();
        // query 0 now ranks 1 (d=1, disjoint) then 2 (d=3, shares 1)
        assert_eq!(excl.cutoff(TopN::At(1)).unwrap().per_query.precision[0], 0.0);
        assert_eq!(excl.cutoff(TopN::All).unwrap().per_query.ap[0], 0.5);

        let mut csv = Vec::new();
        excl.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("query,acg@1,ndcg@1,ap@1,wap@1,precision@1,acg@all"));
        assert_eq!(text.lines().count(), 4);
        assert!(excl.to_json().contains("\"map\""));
    }

    proptest! {
        #[test]
        fn ndcg_bounded_and_ideal_is_max(c in proptest::collection::vec(0u32..5, 1..20), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let n = c.len();
            let mut sorted = c.clone();
            sorted.sort_unstable_by(|a, b| b.cmp(a));
            let best = ndcg_at(&prof(&sorted), n).unwrap();
            let mut perm = c.clone();
            perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let v = ndcg_at(&prof(&perm), n).unwrap();
            prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
            prop_assert!(v <= best + 1e-12);
        }

        #[test]
        fn ap_rank_dominance(c in proptest::collection::vec(0u32..3, 2..20), at in 0usize..19) {
            let at = at % (c.len() - 1);
            if c[at] == 0 && c[at + 1] > 0 {
                let mut moved = c.clone();
                moved.swap(at, at + 1);
                let n = c.len();
                prop_assert!(average_precision(&prof(&moved), n).unwrap().value
                    >= average_precision(&prof(&c), n).unwrap().value);
            }
        }
    }
}
