use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::EvalError;
use crate::retrieval::RetrievalResult;

#[derive(Debug, Clone, PartialEq)]
pub struct RunEntry {
    pub passage_id: String,
    pub score: f64,
}

/// Ranked results per query. Entry `i` of a query has rank `i + 1`; scores
/// are non-increasing. All lines carry the same run tag.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrecRun {
    pub tag: String,
    queries: BTreeMap<String, Vec<RunEntry>>,
}

fn check_entries(qid: &str, entries: &[RunEntry]) -> Result<(), EvalError> {
    let bad = |message: String| EvalError::InvalidRun { qid: qid.to_owned(), message };
    let mut seen = HashSet::new();
    for (i, e) in entries.iter().enumerate() {
        if !e.score.is_finite() {
            return Err(bad(format!("non-finite score at rank {}", i + 1)));
        }
        if e.passage_id.is_empty() || e.passage_id.contains(char::is_whitespace) {
            return Err(bad(format!("passage id {:?} is empty or contains whitespace", e.passage_id)));
        }
        if !seen.insert(e.passage_id.as_str()) {
            return Err(bad(format!("passage {} listed twice", e.passage_id)));
        }
        if i > 0 && e.score > entries[i - 1].score {
            return Err(bad(format!("score increases at rank {}", i + 1)));
        }
    }
    Ok(())
}

impl TrecRun {
    pub fn new(tag: impl Into<String>) -> Self {
        Self { tag: tag.into(), queries: BTreeMap::new() }
    }

    /// Adds or replaces the ranking of `qid`.
    pub fn insert(&mut self, qid: impl Into<String>, entries: Vec<RunEntry>) -> Result<(), EvalError> {
        let qid = qid.into();
        if qid.is_empty() || qid.contains(char::is_whitespace) {
            return Err(EvalError::InvalidRun { qid, message: "query id is empty or contains whitespace".into() });
        }
        check_entries(&qid, &entries)?;
        self.queries.insert(qid, entries);
        Ok(())
    }

    pub fn insert_result(&mut self, qid: impl Into<String>, result: &RetrievalResult) -> Result<(), EvalError> {
        let entries =
            result.entries.iter().map(|e| RunEntry { passage_id: e.passage_id.clone(), score: e.score }).collect();
        self.insert(qid, entries)
    }

    pub fn queries(&self) -> impl Iterator<Item = (&str, &[RunEntry])> {
        self.queries.iter().map(|(q, e)| (q.as_str(), e.as_slice()))
    }

    pub fn get(&self, qid: &str) -> Option<&[RunEntry]> {
        self.queries.get(qid).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    /// `qid Q0 passage_id rank score tag`, queries in id order.
    pub fn to_trec_string(&self) -> String {
        let mut out = String::new();
        for (qid, entries) in &self.queries {
            for (i, e) in entries.iter().enumerate() {
                let _ = writeln!(out, "{qid} Q0 {} {} {} {}", e.passage_id, i + 1, e.score, self.tag);
            }
        }
        out
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self, EvalError> {
        let fmt = |line: usize, message: String| EvalError::Format { path: path.into(), line, message };
        let mut tag: Option<String> = None;
        let mut raw: BTreeMap<String, Vec<(u32, RunEntry, usize)>> = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let n = i + 1;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            let [qid, _, pid, rank, score, t] = fields[..] else {
                return Err(fmt(n, format!("expected 6 fields, found {}", fields.len())));
            };
            let rank: u32 = rank.parse().map_err(|_| fmt(n, format!("bad rank {rank:?}")))?;
            let score: f64 = score.parse().map_err(|_| fmt(n, format!("bad score {score:?}")))?;
            match &tag {
                None => tag = Some(t.to_owned()),
                Some(existing) if existing != t => {
                    return Err(fmt(n, format!("run tag {t:?} differs from {existing:?}")))
                }
                Some(_) => {}
            }
            raw.entry(qid.to_owned()).or_default().push((rank, RunEntry { passage_id: pid.to_owned(), score }, n));
        }
        let mut run = TrecRun::new(tag.unwrap_or_default());
        for (qid, mut rows) in raw {
            rows.sort_by_key(|r| r.0);
            for (pos, (rank, _, line)) in rows.iter().enumerate() {
                if *rank as usize != pos + 1 {
                    return Err(fmt(*line, format!("query {qid}: ranks are not contiguous from 1")));
                }
            }
            run.insert(qid, rows.into_iter().map(|r| r.1).collect())?;
        }
        Ok(run)
    }

    pub fn read(path: &Path) -> Result<Self, EvalError> {
        let text = fs::read_to_string(path).map_err(|source| EvalError::Io { path: path.into(), source })?;
        Self::parse(&text, path)
    }

    pub fn write(&self, path: &Path) -> Result<(), EvalError> {
        fs::write(path, self.to_trec_string()).map_err(|source| EvalError::Io { path: path.into(), source })
    }
}

/// Graded judgments `qid → passage_id → grade`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Qrels {
    judgments: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    /// Fails on a duplicate `(qid, passage_id)` pair.
    pub fn insert(&mut self, qid: &str, passage_id: &str, grade: u32) -> Result<(), String> {
        let q = self.judgments.entry(qid.to_owned()).or_default();
        if q.insert(passage_id.to_owned(), grade).is_some() {
            return Err(format!("duplicate judgment for {qid} {passage_id}"));
        }
        Ok(())
    }

    pub fn get(&self, qid: &str) -> Option<&BTreeMap<String, u32>> {
        self.judgments.get(qid)
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.judgments.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.judgments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.judgments.is_empty()
    }

    pub fn to_trec_string(&self) -> String {
        let mut out = String::new();
        for (qid, docs) in &self.judgments {
            for (pid, grade) in docs {
                let _ = writeln!(out, "{qid} 0 {pid} {grade}");
            }
        }
        out
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self, EvalError> {
        let fmt = |line: usize, message: String| EvalError::Format { path: path.into(), line, message };
        let mut qrels = Qrels::new();
        for (i, line) in text.lines().enumerate() {
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            let [qid, _, pid, grade] = fields[..] else {
                return Err(fmt(i + 1, format!("expected 4 fields, found {}", fields.len())));
            };
            let grade: u32 =
                grade.parse().map_err(|_| fmt(i + 1, format!("grade {grade:?} is not a non-negative integer")))?;
            qrels.insert(qid, pid, grade).map_err(|m| fmt(i + 1, m))?;
        }
        Ok(qrels)
    }

    pub fn read(path: &Path) -> Result<Self, EvalError> {
        let text = fs::read_to_string(path).map_err(|source| EvalError::Io { path: path.into(), source })?;
        Self::parse(&text, path)
    }

    pub fn write(&self, path: &Path) -> Result<(), EvalError> {
        fs::write(path, self.to_trec_string()).map_err(|source| EvalError::Io { path: path.into(), source })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p() -> &'static Path {
        Path::new("t")
    }

    #[test]
    fn parses_out_of_order_lines() {
        let text = "q1 Q0 b 2 0.5 run\nq1 Q0 a 1 1.5 run\nq0 Q0 c 1 -1 run\n";
        let run = TrecRun::parse(text, p()).unwrap();
        assert_eq!(run.get("q1").unwrap()[0].passage_id, "a");
        assert_eq!(run.to_trec_string(), "q0 Q0 c 1 -1 run\nq1 Q0 a 1 1.5 run\nq1 Q0 b 2 0.5 run\n");
    }

    #[test]
    fn rejects_bad_runs() {
        let cases = [
            "q Q0 a 1 1.0 r\nq Q0 b 3 0.5 r\n",
            "q Q0 a 1 1.0 r\nq Q0 b 2 2.0 r\n",
            "q Q0 a 1 1.0 r\nq Q0 a 2 0.5 r\n",
            "q Q0 a 1 1.0\n",
            "q Q0 a x 1.0 r\n",
            "q Q0 a 1 1.0 r\nq Q0 b 2 0.5 s\n",
        ];
        for c in cases {
            assert!(TrecRun::parse(c, p()).is_err(), "{c}");
        }
    }

    #[test]
    fn qrels_reject_duplicates_and_negative_grades() {
        assert!(matches!(Qrels::parse("q 0 a 1\nq 0 a 2\n", p()), Err(EvalError::Format { line: 2, .. })));
        assert!(Qrels::parse("q 0 a -1\n", p()).is_err());
        let q = Qrels::parse("q 0 a 2\nq 0 b 0\n", p()).unwrap();
        assert_eq!(q.get("q").unwrap()["a"], 2);
    }

    proptest! {
        #[test]
        fn run_round_trip(
            raw in prop::collection::btree_map(
                "[a-z0-9_]{1,6}",
                prop::collection::vec(-1e6f64..1e6, 1..20),
                1..8,
            )
        ) {
            let mut run = TrecRun::new("tag_1");
            for (q, mut scores) in raw {
                scores.sort_by(|a, b| b.total_cmp(a));
                let entries = scores.iter().enumerate()
                    .map(|(i, s)| RunEntry { passage_id: format!("d{i}"), score: *s })
                    .collect();
                run.insert(q, entries).unwrap();
            }
            let back = TrecRun::parse(&run.to_trec_string(), p()).unwrap();
            prop_assert_eq!(back, run);
        }

        #[test]
        fn qrels_round_trip(
            raw in prop::collection::btree_map(("[a-z]{1,3}", "[a-z0-9]{1,4}"), 0u32..4, 0..30)
        ) {
            let mut q = Qrels::new();
            for ((qid, pid), g) in &raw {
                q.insert(qid, pid, *g).unwrap();
            }
            prop_assert_eq!(Qrels::parse(&q.to_trec_string(), p()).unwrap(), q);
        }
    }
}
