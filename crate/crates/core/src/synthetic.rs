//! Seeded synthetic conversational retrieval benchmark.
//!
//! Each passage describes one aspect of one pseudo-word entity. A session
//! introduces an entity in its history and then asks about one of its aspects
//! with a pronoun ("what about its climate"), so the gold passage can only be
//! found by resolving the entity from context.
//!
//! Candidate pools are stored as generator fixtures. Every candidate falls in
//! one of three tiers:
//!
//! - `Good`: names the right entity and aspect, with topic words from the history
//! - `Vague`: keeps the pronoun and names only the aspect
//! - `WrongEntity`: resolves the pronoun to a different entity with the same aspect
//!
//! The share of good candidates varies per session, so pools have a
//! controlled quality spread.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::eval::Qrels;
use crate::generation::{format_output, FixtureRecord};
use crate::jsonl::{self, JsonlError};
use crate::retrieval::Passage;
use crate::types::{ConversationSession, SessionRef, Turn};

const ASPECTS: [&str; 12] = [
    "climate",
    "history",
    "population",
    "economy",
    "cuisine",
    "architecture",
    "language",
    "religion",
    "geography",
    "festivals",
    "transport",
    "education",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub entities: usize,
    /// Aspects per entity; the corpus has `entities × aspects_per_entity` passages.
    pub aspects_per_entity: usize,
    pub sessions: usize,
    /// The first `train_sessions` sessions form the training split.
    pub train_sessions: usize,
    pub pool_size: usize,
    /// Per-session probability of a good candidate, drawn uniformly from this range.
    pub good_fraction: (f64, f64),
    pub topic_words: usize,
    pub filler_vocabulary: usize,
    pub filler_per_passage: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            seed: 17,
            entities: 250,
            aspects_per_entity: 4,
            sessions: 300,
            train_sessions: 200,
            pool_size: 16,
            good_fraction: (0.15, 0.6),
            topic_words: 3,
            filler_vocabulary: 400,
            filler_per_passage: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Good,
    Vague,
    WrongEntity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticBenchmark {
    pub config: SyntheticConfig,
    pub passages: Vec<Passage>,
    pub train_sessions: Vec<ConversationSession>,
    pub test_sessions: Vec<ConversationSession>,
    pub qrels: Qrels,
    pub fixtures: Vec<FixtureRecord>,
    /// Tier of every fixture output, keyed by session and request index.
    pub tiers: BTreeMap<SessionRef, Vec<Tier>>,
}

struct Entity {
    name: String,
    topics: Vec<String>,
    aspects: Vec<usize>,
}

fn pseudo_words(rng: &mut ChaCha8Rng, count: usize, taken: &mut HashSet<String>) -> Vec<String> {
    const C: &[u8] = b"bdfgklmnprstvz";
    const V: &[u8] = b"aeiou";
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let syllables = rng.gen_range(2..=3);
        let mut w = String::new();
        for _ in 0..syllables {
            w.push(C[rng.gen_range(0..C.len())] as char);
            w.push(V[rng.gen_range(0..V.len())] as char);
        }
        if rng.gen_bool(0.5) {
            w.push(C[rng.gen_range(0..C.len())] as char);
        }
        if taken.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

fn pick<'a>(rng: &mut ChaCha8Rng, words: &'a [String], count: usize) -> Vec<&'a str> {
    words.choose_multiple(rng, count).map(String::as_str).collect()
}

impl SyntheticBenchmark {
    pub fn generate(config: &SyntheticConfig) -> Self {
        assert!(config.aspects_per_entity >= 2 && config.aspects_per_entity <= ASPECTS.len());
        assert!(config.train_sessions <= config.sessions && config.pool_size >= 1);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut taken: HashSet<String> = HashSet::new();

        let names = pseudo_words(&mut rng, config.entities, &mut taken);
        let descriptors: Vec<Vec<String>> = ASPECTS.iter().map(|_| pseudo_words(&mut rng, 2, &mut taken)).collect();
        let filler = pseudo_words(&mut rng, config.filler_vocabulary, &mut taken);
        let entities: Vec<Entity> = names
            .into_iter()
            .map(|name| {
                let topics = pseudo_words(&mut rng, config.topic_words, &mut taken);
                let mut aspects: Vec<usize> = (0..ASPECTS.len()).collect();
                aspects.shuffle(&mut rng);
                aspects.truncate(config.aspects_per_entity);
                aspects.sort_unstable();
                Entity { name, topics, aspects }
            })
            .collect();

        let mut passages = Vec::new();
        let mut passage_of: BTreeMap<(usize, usize), String> = BTreeMap::new();
        let mut with_aspect: Vec<Vec<usize>> = vec![Vec::new(); ASPECTS.len()];
        for (ei, e) in entities.iter().enumerate() {
            for &a in &e.aspects {
                let id = format!("p{:05}", passages.len());
                let mut words: Vec<&str> = vec![&e.name, ASPECTS[a]];
                words.extend(descriptors[a].iter().map(String::as_str));
                words.extend(e.topics.iter().map(String::as_str));
                words.extend(pick(&mut rng, &filler, config.filler_per_passage));
                passages.push(Passage::new(id.clone(), words.join(" ")));
                passage_of.insert((ei, a), id);
                with_aspect[a].push(ei);
            }
        }

        let mut train_sessions = Vec::new();
        let mut test_sessions = Vec::new();
        let mut qrels = Qrels::new();
        let mut fixtures = Vec::new();
        let mut tiers = BTreeMap::new();
        for k in 0..config.sessions {
            let ei = rng.gen_range(0..entities.len());
            let e = &entities[ei];
            let a = *e.aspects.choose(&mut rng).expect("entity has aspects");
            let mut history = vec![Turn::new(
                format!("tell me about {}", e.name),
                format!("{} is known for {}", e.name, e.topics.join(" ")),
            )
            .expect("valid turn")];
            if rng.gen_bool(0.5) {
                let others: Vec<usize> = e.aspects.iter().copied().filter(|&x| x != a).collect();
                let other = *others.choose(&mut rng).expect("at least two aspects");
                history.push(
                    Turn::new(
                        format!("what about its {}", ASPECTS[other]),
                        format!("its {} is notable for {}", ASPECTS[other], descriptors[other].join(" ")),
                    )
                    .expect("valid turn"),
                );
            }
            let sid = format!("syn{k:04}");
            let turn_index = history.len() as u32 + 1;
            let current = format!("what about its {}", ASPECTS[a]);
            let session = ConversationSession::new(sid.clone(), turn_index, history, current).expect("valid session");
            let sref = session.session_ref();
            qrels.insert(&sref.qid(), &passage_of[&(ei, a)], 1).expect("one gold per session");

            let (lo, hi) = config.good_fraction;
            let p_good = if hi > lo { rng.gen_range(lo..hi) } else { lo };
            let rivals: Vec<usize> = with_aspect[a].iter().copied().filter(|&x| x != ei).collect();
            let mut pool_tiers = Vec::with_capacity(config.pool_size);
            for request_index in 0..config.pool_size {
                let tier = if rng.gen_bool(p_good) {
                    Tier::Good
                } else if rivals.is_empty() || rng.gen_bool(0.5) {
                    Tier::Vague
                } else {
                    Tier::WrongEntity
                };
                let n_topics = rng.gen_range(1..=e.topics.len());
                let n_desc = rng.gen_range(0..=2);
                let n_fill = rng.gen_range(0..=3);
                let mentioned = match tier {
                    Tier::Good => Some(e),
                    Tier::WrongEntity => Some(&entities[*rivals.choose(&mut rng).expect("non-empty")]),
                    Tier::Vague => None,
                };
                let (rewrite, mut response) = match mentioned {
                    Some(m) => {
                        let mut words = vec![m.name.clone(), ASPECTS[a].to_owned()];
                        words.extend(pick(&mut rng, &m.topics, n_topics).into_iter().map(str::to_owned));
                        (format!("what about the {} of {}", ASPECTS[a], m.name), words)
                    }
                    None => (format!("what about its {}", ASPECTS[a]), vec!["its".to_owned(), ASPECTS[a].to_owned()]),
                };
                response.extend(pick(&mut rng, &descriptors[a], n_desc).into_iter().map(str::to_owned));
                response.extend(pick(&mut rng, &filler, n_fill).into_iter().map(str::to_owned));
                fixtures.push(FixtureRecord {
                    session_id: sid.clone(),
                    turn_index,
                    request_index,
                    raw_text: format_output("Based on the context.", &rewrite, &response.join(" ")),
                });
                pool_tiers.push(tier);
            }
            tiers.insert(sref, pool_tiers);
            if k < config.train_sessions {
                train_sessions.push(session);
            } else {
                test_sessions.push(session);
            }
        }

        Self { config: config.clone(), passages, train_sessions, test_sessions, qrels, fixtures, tiers }
    }

    pub fn sessions(&self) -> impl Iterator<Item = &ConversationSession> {
        self.train_sessions.iter().chain(&self.test_sessions)
    }

    /// Writes `passages.tsv`, `sessions_train.jsonl`, `sessions_test.jsonl`,
    /// `qrels.txt` and `fixtures.jsonl` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), JsonlError> {
        let io_err = |path: &Path, source: io::Error| JsonlError::Io { path: path.into(), source };
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let tsv: String = self.passages.iter().map(|p| format!("{}\t{}\n", p.passage_id, p.text)).collect();
        let p = dir.join("passages.tsv");
        fs::write(&p, tsv).map_err(|e| io_err(&p, e))?;
        jsonl::write_jsonl(&dir.join("sessions_train.jsonl"), &self.train_sessions)?;
        jsonl::write_jsonl(&dir.join("sessions_test.jsonl"), &self.test_sessions)?;
        let q = dir.join("qrels.txt");
        fs::write(&q, self.qrels.to_trec_string()).map_err(|e| io_err(&q, e))?;
        jsonl::write_jsonl(&dir.join("fixtures.jsonl"), &self.fixtures)?;
        Ok(())
    }
}
