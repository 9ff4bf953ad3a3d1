use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::trec::{Qrels, RunEntry, TrecRun};
use super::EvalError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// `None` evaluates reciprocal rank over the full run depth.
    pub mrr_cutoff: Option<usize>,
    pub ndcg_k: usize,
    pub recall_k: usize,
    /// Minimum grade counted as relevant for MRR and recall.
    pub rel_threshold: u32,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { mrr_cutoff: None, ndcg_k: 3, recall_k: 10, rel_threshold: 1 }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.ndcg_k == 0 || self.recall_k == 0 || self.mrr_cutoff == Some(0) {
            return Err(EvalError::Config("cutoffs must be at least 1".into()));
        }
        if self.rel_threshold == 0 {
            return Err(EvalError::Config("rel_threshold must be at least 1".into()));
        }
        Ok(())
    }
}

type Judged = BTreeMap<String, u32>;

fn grade(qrels: &Judged, pid: &str) -> u32 {
    qrels.get(pid).copied().unwrap_or(0)
}

/// Reciprocal rank of the first passage with grade ≥ `threshold`.
pub fn mrr(run: &[RunEntry], qrels: &Judged, threshold: u32, cutoff: Option<usize>) -> f64 {
    let depth = cutoff.unwrap_or(run.len()).min(run.len());
    run[..depth].iter().position(|e| grade(qrels, &e.passage_id) >= threshold).map_or(0.0, |p| 1.0 / (p + 1) as f64)
}

/// NDCG with linear gain `grade / log2(i + 1)`; 0 when nothing is relevant.
pub fn ndcg_at_k(run: &[RunEntry], qrels: &Judged, k: usize) -> f64 {
    let dcg: f64 = run
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, e)| f64::from(grade(qrels, &e.passage_id)) / ((i + 2) as f64).log2())
        .sum();
    let mut ideal: Vec<u32> = qrels.values().copied().filter(|g| *g > 0).collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal.iter().take(k).enumerate().map(|(i, g)| f64::from(*g) / ((i + 2) as f64).log2()).sum();
    if idcg == 0.0 {
        0.0
    } else {
        dcg / idcg
    }
}

/// Fraction of relevant passages in the top `k`; `None` without relevant passages.
pub fn recall_at_k(run: &[RunEntry], qrels: &Judged, k: usize, threshold: u32) -> Option<f64> {
    let relevant = qrels.values().filter(|g| **g >= threshold).count();
    if relevant == 0 {
        return None;
    }
    let found = run.iter().take(k).filter(|e| grade(qrels, &e.passage_id) >= threshold).count();
    Some(found as f64 / relevant as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub qid: String,
    pub mrr: f64,
    pub ndcg: f64,
    pub recall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<usize>,
    pub config: EvalConfig,
    pub query_count: usize,
    pub recall_query_count: usize,
    /// Run queries with no qrels entry; they are left out of every mean.
    pub missing_qrels: usize,
    pub mrr: f64,
    pub ndcg: f64,
    pub recall: f64,
    pub per_query: Vec<QueryMetrics>,
}

impl MetricReport {
    pub fn with_provenance(mut self, strategy: impl Into<String>, budget: usize) -> Self {
        self.strategy = Some(strategy.into());
        self.budget = Some(budget);
        self
    }

    /// `qid<TAB>mrr<TAB>ndcg<TAB>recall` per query, then an `all` row.
    pub fn to_tsv(&self) -> String {
        let mut out = format!("qid\tmrr\tndcg@{}\trecall@{}\n", self.config.ndcg_k, self.config.recall_k);
        for q in &self.per_query {
            let recall = q.recall.map_or_else(|| "NA".to_owned(), |r| format!("{r:.6}"));
            let _ = writeln!(out, "{}\t{:.6}\t{:.6}\t{recall}", q.qid, q.mrr, q.ndcg);
        }
        let _ = writeln!(out, "all\t{:.6}\t{:.6}\t{:.6}", self.mrr, self.ndcg, self.recall);
        out
    }
}

fn mean(values: impl Iterator<Item = f64>) -> (f64, usize) {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (if n == 0 { 0.0 } else { sum / n as f64 }, n)
}

/// Per-query metrics over queries present in both run and qrels, and their
/// means. Queries are reported in id order.
pub fn evaluate_run(run: &TrecRun, qrels: &Qrels, config: &EvalConfig) -> Result<MetricReport, EvalError> {
    config.validate()?;
    let queries: Vec<(&str, &[RunEntry])> = run.queries().collect();
    let missing = queries.iter().filter(|(q, _)| qrels.get(q).is_none()).count();
    if missing > 0 {
        log::warn!("{missing} run queries have no qrels and are skipped");
    }
    let per_query: Vec<QueryMetrics> = queries
        .par_iter()
        .filter_map(|(qid, entries)| {
            let judged = qrels.get(qid)?;
            Some(QueryMetrics {
                qid: (*qid).to_owned(),
                mrr: mrr(entries, judged, config.rel_threshold, config.mrr_cutoff),
                ndcg: ndcg_at_k(entries, judged, config.ndcg_k),
                recall: recall_at_k(entries, judged, config.recall_k, config.rel_threshold),
            })
        })
        .collect();
    if per_query.is_empty() {
        return Err(EvalError::NoSharedQueries);
    }
    let (mrr_mean, count) = mean(per_query.iter().map(|q| q.mrr));
    let (ndcg_mean, _) = mean(per_query.iter().map(|q| q.ndcg));
    let (recall_mean, recall_count) = mean(per_query.iter().filter_map(|q| q.recall));
    Ok(MetricReport {
        strategy: None,
        budget: None,
        config: config.clone(),
        query_count: count,
        recall_query_count: recall_count,
        missing_qrels: missing,
        mrr: mrr_mean,
        ndcg: ndcg_mean,
        recall: recall_mean,
        per_query,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(ids: &[&str]) -> Vec<RunEntry> {
        ids.iter().enumerate().map(|(i, id)| RunEntry { passage_id: id.to_string(), score: 100.0 - i as f64 }).collect()
    }

    fn judged(pairs: &[(&str, u32)]) -> Judged {
        pairs.iter().map(|(p, g)| (p.to_string(), *g)).collect()
    }

    #[test]
    fn mrr_examples() {
        let q = judged(&[("g", 1)]);
        assert_eq!(mrr(&run(&["g", "a"]), &q, 1, None), 1.0);
        assert_eq!(mrr(&run(&["a", "b"]), &q, 1, None), 0.0);
        assert_eq!(mrr(&run(&["a", "b", "c", "g"]), &q, 1, None), 0.25);
        assert_eq!(mrr(&run(&["a", "b", "c", "g"]), &q, 1, Some(3)), 0.0);
    }

    #[test]
    fn ndcg_examples() {
        let q = judged(&[("g", 1)]);
        assert_eq!(ndcg_at_k(&run(&["g", "a", "b"]), &q, 3), 1.0);
        assert!((ndcg_at_k(&run(&["a", "b", "g"]), &q, 3) - 0.5).abs() < 1e-15);
        let q2 = judged(&[("x", 2), ("y", 1)]);
        let v = ndcg_at_k(&run(&["y", "x", "z"]), &q2, 3);
        assert_eq!(format!("{v:.4}"), "0.8597");
        assert_eq!(ndcg_at_k(&run(&["a"]), &judged(&[("a", 0)]), 3), 0.0);
    }

    #[test]
    fn recall_examples() {
        assert_eq!(recall_at_k(&run(&["a", "b", "c", "d", "g"]), &judged(&[("g", 1)]), 10, 1), Some(1.0));
        let ids: Vec<String> = (0..12).map(|i| format!("d{i}")).collect();
        let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
        assert_eq!(recall_at_k(&run(&refs), &judged(&[("d3", 1), ("d11", 1)]), 10, 1), Some(0.5));
        assert_eq!(recall_at_k(&run(&["a"]), &judged(&[("g", 1)]), 10, 1), Some(0.0));
        assert_eq!(recall_at_k(&run(&["a"]), &judged(&[("g", 0)]), 10, 1), None);
    }

    #[test]
    fn evaluate_single_query_and_missing_qrels() {
        let mut r = TrecRun::new("t");
        r.insert("q1", run(&["g", "a"])).unwrap();
        r.insert("q2", run(&["a"])).unwrap();
        let mut q = Qrels::new();
        q.insert("q1", "g", 1).unwrap();
        let rep = evaluate_run(&r, &q, &EvalConfig::default()).unwrap();
        assert_eq!((rep.mrr, rep.ndcg, rep.recall), (1.0, 1.0, 1.0));
        assert_eq!(rep.missing_qrels, 1);
        assert_eq!(rep.query_count, 1);
    }

    #[test]
    fn no_shared_queries_is_an_error() {
        let mut r = TrecRun::new("t");
        r.insert("q1", run(&["a"])).unwrap();
        let mut q = Qrels::new();
        q.insert("q9", "a", 1).unwrap();
        assert!(matches!(evaluate_run(&r, &q, &EvalConfig::default()), Err(EvalError::NoSharedQueries)));
    }

    #[test]
    fn rel_threshold_binarizes_mrr_and_recall() {
        let q = judged(&[("a", 1), ("b", 2)]);
        assert_eq!(mrr(&run(&["a", "b"]), &q, 2, None), 0.5);
        assert_eq!(recall_at_k(&run(&["a"]), &q, 10, 2), Some(0.0));
    }

    #[test]
    fn tsv_has_summary_row() {
        let mut r = TrecRun::new("t");
        r.insert("q1", run(&["g"])).unwrap();
        let mut q = Qrels::new();
        q.insert("q1", "g", 1).unwrap();
        let tsv = evaluate_run(&r, &q, &EvalConfig::default()).unwrap().to_tsv();
        assert!(tsv.ends_with("all\t1.000000\t1.000000\t1.000000\n"));
    }

    use proptest::prelude::*;

    type Case = (Vec<(String, Vec<RunEntry>)>, Vec<(String, String, u32)>);

    fn arb_case() -> impl Strategy<Value = Case> {
        let query = (prop::collection::vec(-10.0f64..10.0, 1..15), prop::collection::vec((0usize..20, 0u32..4), 0..8));
        prop::collection::vec(query, 1..10).prop_map(|qs| {
            let mut runs = Vec::new();
            let mut judgments = Vec::new();
            for (qi, (mut scores, judged)) in qs.into_iter().enumerate() {
                let qid = format!("q{qi}");
                scores.sort_by(|a, b| b.total_cmp(a));
                let entries = scores
                    .iter()
                    .enumerate()
                    .map(|(i, s)| RunEntry { passage_id: format!("d{i}"), score: *s })
                    .collect();
                runs.push((qid.clone(), entries));
                let mut seen = std::collections::HashSet::new();
                for (d, g) in judged {
                    if seen.insert(d) {
                        judgments.push((qid.clone(), format!("d{d}"), g));
                    }
                }
            }
            if !judgments.iter().any(|j| j.0 == "q0") {
                judgments.push(("q0".into(), "d0".into(), 1));
            }
            (runs, judgments)
        })
    }

    fn build(runs: &[(String, Vec<RunEntry>)], judgments: &[(String, String, u32)]) -> (TrecRun, Qrels) {
        let mut run = TrecRun::new("p");
        for (q, e) in runs {
            run.insert(q.clone(), e.clone()).unwrap();
        }
        let mut qrels = Qrels::new();
        for (q, d, g) in judgments {
            qrels.insert(q, d, *g).unwrap();
        }
        (run, qrels)
    }

    proptest! {
        #[test]
        fn invariant_to_qrels_insertion_order((runs, judgments) in arb_case(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let (run, qrels) = build(&runs, &judgments);
            let mut shuffled = judgments.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let (_, qrels2) = build(&runs, &shuffled);
            let config = EvalConfig::default();
            prop_assert_eq!(evaluate_run(&run, &qrels, &config).unwrap(), evaluate_run(&run, &qrels2, &config).unwrap());
        }

        #[test]
        fn invariant_to_positive_affine_rescaling((runs, judgments) in arb_case(), a in 0.01f64..100.0, b in -50.0f64..50.0) {
            let (run, qrels) = build(&runs, &judgments);
            let scaled: Vec<(String, Vec<RunEntry>)> = runs
                .iter()
                .map(|(q, es)| {
                    (q.clone(), es.iter().map(|e| RunEntry { passage_id: e.passage_id.clone(), score: a * e.score + b }).collect())
                })
                .collect();
            let (run2, _) = build(&scaled, &judgments);
            let config = EvalConfig::default();
            prop_assert_eq!(
                evaluate_run(&run, &qrels, &config).unwrap().per_query,
                evaluate_run(&run2, &qrels, &config).unwrap().per_query
            );
        }
    }
}
