use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::client::{ClientError, GenerationClient, GenerationRequest};
use super::parse::{parse_output, ParsedOutput};
use super::prompt::PromptTemplate;
use super::{GenerationConfig, GenerationError};
use crate::types::{CandidatePool, ConversationSession, ReformulationCandidate};

/// A request whose outputs never parsed within the attempt limit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropRecord {
    pub session_id: String,
    pub turn_index: u32,
    pub request_index: usize,
    pub attempts: u32,
    pub reason: String,
    pub raw_text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedPool {
    pub pool: CandidatePool,
    pub requested: usize,
    pub drops: Vec<DropRecord>,
}

enum Outcome {
    Parsed { seed: i64, output: ParsedOutput },
    Dropped(DropRecord),
}

fn run_request(
    client: &dyn GenerationClient,
    config: &GenerationConfig,
    session: &ConversationSession,
    prompt: &str,
    index: usize,
) -> Result<Outcome, ClientError> {
    let n = config.n as i64;
    let mut last_drop = None;
    for attempt in 0..config.max_attempts {
        let seed = config.request_seed_base + index as i64 + i64::from(attempt) * n;
        let request = GenerationRequest {
            session_ref: session.session_ref(),
            request_index: index,
            attempt,
            seed,
            prompt: prompt.to_owned(),
            temperature: config.temperature,
            max_tokens: config.max_output_tokens,
        };
        match client.complete(&request) {
            Ok(raw) => match parse_output(&raw) {
                Ok(output) => return Ok(Outcome::Parsed { seed, output }),
                Err(u) => {
                    log::warn!("{} request {index} attempt {attempt}: {}", request.session_ref, u.reason);
                    last_drop = Some((u.reason, u.raw_text));
                }
            },
            Err(e) if e.is_retryable() && attempt + 1 < config.max_attempts => {
                log::warn!("{} request {index} attempt {attempt}: {e}; retrying", request.session_ref);
                let delay = config.backoff_ms.saturating_mul(1 << attempt.min(16));
                if delay > 0 {
                    thread::sleep(Duration::from_millis(delay));
                }
            }
            Err(e) => return Err(e),
        }
    }
    let (reason, raw_text) = last_drop.expect("loop ends with an unparseable output");
    Ok(Outcome::Dropped(DropRecord {
        session_id: session.session_id().to_owned(),
        turn_index: session.turn_index(),
        request_index: index,
        attempts: config.max_attempts,
        reason,
        raw_text,
    }))
}

/// Issues `config.n` completions for `session` with at most
/// `config.max_in_flight` in flight, and assembles the parsed outputs in
/// request order. Candidate indices are contiguous after drops.
pub fn generate_pool(
    client: &dyn GenerationClient,
    template: &PromptTemplate,
    session: &ConversationSession,
    config: &GenerationConfig,
) -> Result<GeneratedPool, GenerationError> {
    config.validate()?;
    let prompt = template.render(session)?;
    let slots: Vec<Mutex<Option<Result<Outcome, ClientError>>>> = (0..config.n).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    thread::scope(|scope| {
        for _ in 0..config.max_in_flight.min(config.n) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= config.n {
                    break;
                }
                let outcome = run_request(client, config, session, &prompt, i);
                *slots[i].lock().expect("slot lock") = Some(outcome);
            });
        }
    });

    let mut candidates = Vec::new();
    let mut drops = Vec::new();
    for (i, slot) in slots.into_iter().enumerate() {
        let outcome = slot.into_inner().expect("slot lock").expect("every request ran");
        match outcome {
            Ok(Outcome::Parsed { seed, output }) => {
                let c = ReformulationCandidate::new(output.rewrite, output.pseudo_response, 0, seed)
                    .expect("parser guarantees a non-empty rewrite");
                candidates.push(c.with_index(candidates.len()));
            }
            Ok(Outcome::Dropped(d)) => drops.push(d),
            Err(source) => {
                return Err(GenerationError::Request { session: session.session_ref(), request_index: i, source })
            }
        }
    }
    if candidates.is_empty() {
        return Err(GenerationError::AllFailed(session.session_ref()));
    }
    let pool = CandidatePool::new(session.session_ref(), candidates).expect("indices are contiguous");
    Ok(GeneratedPool { pool, requested: config.n, drops })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generation::{format_output, FixtureClient, FixtureRecord};
    use crate::jsonl::{parse_jsonl, to_jsonl_string};
    use std::collections::HashMap;

    fn session() -> ConversationSession {
        let turns = vec![crate::types::Turn::new("tell me about the dime", "a coin").unwrap()];
        ConversationSession::new("s1", 2, turns, "who designed it?").unwrap()
    }

    fn config(n: usize) -> GenerationConfig {
        GenerationConfig { n, backoff_ms: 0, ..Default::default() }
    }

    fn fixture(texts: &[String]) -> FixtureClient {
        FixtureClient::from_records(texts.iter().enumerate().map(|(i, t)| FixtureRecord {
            session_id: "s1".into(),
            turn_index: 2,
            request_index: i,
            raw_text: t.clone(),
        }))
        .unwrap()
    }

    fn good(i: usize) -> String {
        format_output("Because.", &format!("who designed the dime {i}"), &format!("sinnock {i}"))
    }

    #[test]
    fn fixture_pool_in_fixture_order() {
        let texts: Vec<String> = (0..16).map(good).collect();
        let g = generate_pool(&fixture(&texts), &PromptTemplate::default(), &session(), &config(16)).unwrap();
        assert_eq!(g.pool.len(), 16);
        for (i, c) in g.pool.candidates().iter().enumerate() {
            assert_eq!(c.candidate_index(), i);
            assert_eq!(c.rewrite(), format!("who designed the dime {i}"));
            assert_eq!(c.generation_seed(), i as i64);
        }
        let line = to_jsonl_string(std::slice::from_ref(&g.pool)).unwrap();
        let back: Vec<CandidatePool> = parse_jsonl(line.as_bytes(), std::path::Path::new("pool")).unwrap();
        assert_eq!(back[0], g.pool);
        let again = generate_pool(&fixture(&texts), &PromptTemplate::default(), &session(), &config(16)).unwrap();
        assert_eq!(to_jsonl_string(&[again.pool]).unwrap(), line);
    }

    #[test]
    fn unparseable_outputs_are_dropped_and_reindexed() {
        let texts = vec![good(0), "garbage".to_string(), good(2)];
        let g = generate_pool(&fixture(&texts), &PromptTemplate::default(), &session(), &config(3)).unwrap();
        assert_eq!(g.pool.len(), 2);
        assert_eq!(g.pool.candidates()[1].rewrite(), "who designed the dime 2");
        assert_eq!(g.pool.candidates()[1].candidate_index(), 1);
        assert_eq!(g.drops.len(), 1);
        assert_eq!(g.drops[0].request_index, 1);
        assert_eq!(g.drops[0].raw_text, "garbage");
        assert_eq!(g.requested, 3);
    }

    #[test]
    fn all_unparseable_is_an_error() {
        let texts = vec!["x".to_string(), "y".to_string()];
        let err = generate_pool(&fixture(&texts), &PromptTemplate::default(), &session(), &config(2));
        assert!(matches!(err, Err(GenerationError::AllFailed(_))));
    }

    #[test]
    fn fixture_miss_is_surfaced() {
        let texts = vec![good(0)];
        let err = generate_pool(&fixture(&texts), &PromptTemplate::default(), &session(), &config(2));
        assert!(matches!(
            err,
            Err(GenerationError::Request { request_index: 1, source: ClientError::FixtureMiss { .. }, .. })
        ));
    }

    /// Fails each request a fixed number of times before answering.
    struct Flaky {
        failures: u32,
        seen: Mutex<HashMap<usize, u32>>,
        parse_failures: bool,
    }

    impl GenerationClient for Flaky {
        fn complete(&self, r: &GenerationRequest) -> Result<String, ClientError> {
            let mut seen = self.seen.lock().unwrap();
            let count = seen.entry(r.request_index).or_default();
            *count += 1;
            if *count <= self.failures {
                return if self.parse_failures {
                    Ok("no markers".into())
                } else {
                    Err(ClientError::Status { status: 503, body: String::new() })
                };
            }
            Ok(format_output("R.", &format!("q{} seed {}", r.request_index, r.seed), "a"))
        }
    }

    fn flaky(failures: u32, parse_failures: bool) -> Flaky {
        Flaky { failures, seen: Mutex::new(HashMap::new()), parse_failures }
    }

    #[test]
    fn transport_retry_within_limit_succeeds() {
        let cfg = GenerationConfig { max_attempts: 3, ..config(4) };
        let g = generate_pool(&flaky(2, false), &PromptTemplate::default(), &session(), &cfg).unwrap();
        assert_eq!(g.pool.len(), 4);
        assert_eq!(g.pool.candidates()[1].generation_seed(), 1 + 2 * 4);
    }

    #[test]
    fn transport_failure_beyond_limit_is_surfaced() {
        let cfg = GenerationConfig { max_attempts: 2, ..config(2) };
        let err = generate_pool(&flaky(2, false), &PromptTemplate::default(), &session(), &cfg);
        assert!(matches!(err, Err(GenerationError::Request { source: ClientError::Status { status: 503, .. }, .. })));
    }

    #[test]
    fn unparseable_retry_uses_fresh_seed() {
        let cfg = GenerationConfig { max_attempts: 2, request_seed_base: 100, ..config(3) };
        let g = generate_pool(&flaky(1, true), &PromptTemplate::default(), &session(), &cfg).unwrap();
        assert_eq!(g.pool.len(), 3);
        let seeds: Vec<i64> = g.pool.candidates().iter().map(|c| c.generation_seed()).collect();
        assert_eq!(seeds, vec![103, 104, 105]);
    }

    #[test]
    fn concurrency_does_not_change_the_pool() {
        let texts: Vec<String> = (0..9).map(good).collect();
        let one = GenerationConfig { max_in_flight: 1, ..config(9) };
        let many = GenerationConfig { max_in_flight: 8, ..config(9) };
        let t = PromptTemplate::default();
        let a = generate_pool(&fixture(&texts), &t, &session(), &one).unwrap();
        let b = generate_pool(&fixture(&texts), &t, &session(), &many).unwrap();
        assert_eq!(a, b);
    }

    proptest::proptest! {
        #[test]
        fn indices_stay_contiguous_after_drops(mask in proptest::collection::vec(proptest::bool::weighted(0.7), 1..12)) {
            proptest::prop_assume!(mask.iter().any(|ok| *ok));
            let texts: Vec<String> =
                mask.iter().enumerate().map(|(i, ok)| if *ok { good(i) } else { format!("noise {i}") }).collect();
            let g = generate_pool(&fixture(&texts), &PromptTemplate::default(), &session(), &config(mask.len())).unwrap();
            let kept: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
            proptest::prop_assert_eq!(g.pool.len(), kept.len());
            for (pos, c) in g.pool.candidates().iter().enumerate() {
                proptest::prop_assert_eq!(c.candidate_index(), pos);
                proptest::prop_assert_eq!(c.rewrite(), format!("who designed the dime {}", kept[pos]));
            }
            let dropped: Vec<usize> = g.drops.iter().map(|d| d.request_index).collect();
            let expected: Vec<usize> = (0..mask.len()).filter(|&i| !mask[i]).collect();
            proptest::prop_assert_eq!(dropped, expected);
        }
    }
}
