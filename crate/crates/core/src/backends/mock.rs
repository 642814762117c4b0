//! Seeded mock policy backend.
//!
//! Emits syntactically valid organizer and worker streams by construction:
//! each episode plan is a capacity-valid action structure fleshed out with
//! filler text, so property tests can sweep thousands of episodes without a
//! model. An error-injection mode deliberately produces each of the four
//! format-error classes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    cut_at_stop, BackendError, BoxedStream, GenerationRequest, StreamHandle, TextBackend,
    VecStream,
};
use crate::protocol::{
    sample_structure, Action, FormatErrorClass, Role, TagKind, TagSyntax,
};
use crate::tasks::countdown;

const LEXICON: [&str; 16] = [
    "consider", "combine", "check", "sum", "product", "difference", "ratio", "next", "maybe",
    "try", "split", "note", "carry", "verify", "compare", "reduce",
];

/// How the mock produces the final answer text.
#[derive(Debug, Clone, PartialEq)]
pub enum AnswerGen {
    /// A fixed answer for every episode.
    Fixed(String),
    /// Parse a countdown query out of the prompt and answer with witness
    /// expressions from the enumerator, dropping each independently with
    /// probability `drop_prob` so groups get varied rewards.
    SolveCountdown { drop_prob: f64 },
}

/// Distribution knobs for the mock policy.
#[derive(Debug, Clone, PartialEq)]
pub struct MockPolicy {
    /// Chance of each additional fork, up to `max_forks`.
    pub fork_prob: f64,
    pub max_forks: u32,
    /// Filler words per organizer think span (inclusive range).
    pub think_words: (u32, u32),
    /// Sub-query length in words.
    pub subquery_words: (u32, u32),
    /// Worker thought words before the RETURN block.
    pub worker_words: (u32, u32),
    /// RETURN payload length in words.
    pub payload_words: (u32, u32),
    pub answer: AnswerGen,
    /// When set, the organizer stream deliberately commits this error.
    pub error_injection: Option<FormatErrorClass>,
}

impl Default for MockPolicy {
    fn default() -> Self {
        MockPolicy {
            fork_prob: 0.6,
            max_forks: 4,
            think_words: (1, 6),
            subquery_words: (1, 4),
            worker_words: (0, 12),
            payload_words: (1, 5),
            answer: AnswerGen::Fixed("done".into()),
            error_injection: None,
        }
    }
}

/// Deterministic text source: the same seed yields the same episode, and
/// every request derives its randomness from the seed and its stream handle,
/// so concurrent requests are safe and order-independent.
pub struct MockBackend {
    policy: MockPolicy,
    seed: u64,
    syntax: TagSyntax,
    capacity: u32,
}

impl MockBackend {
    pub fn new(policy: MockPolicy, seed: u64, syntax: TagSyntax, capacity: u32) -> Self {
        MockBackend {
            policy,
            seed,
            syntax,
            capacity,
        }
    }

    fn words(rng: &mut ChaCha8Rng, range: (u32, u32)) -> String {
        let n = if range.0 >= range.1 {
            range.0
        } else {
            rng.random_range(range.0..=range.1)
        };
        let mut out = String::new();
        for i in 0..n {
            if i > 0 {
                out.push(' ');
            }
            out.push_str(LEXICON[rng.random_range(0..LEXICON.len())]);
        }
        out
    }

    /// The abstract action plan for this episode, after error injection.
    fn plan_actions(&self, rng: &mut ChaCha8Rng) -> Vec<Action> {
        if let Some(class) = self.policy.error_injection {
            return match class {
                FormatErrorClass::DuplicateSubQueryIndex => {
                    vec![Action::Fork(1), Action::Fork(1), Action::Answer]
                }
                FormatErrorClass::AgentPoolOverflow => {
                    let mut actions: Vec<Action> =
                        (1..=self.capacity).map(Action::Fork).collect();
                    actions.push(Action::Answer);
                    actions
                }
                FormatErrorClass::JoinNonexistent => {
                    vec![Action::Join(7.min(self.syntax.max_id)), Action::Answer]
                }
                FormatErrorClass::MissingFinalAnswer => {
                    // a valid fork/join pair, then the stream just stops
                    vec![Action::Fork(1), Action::Join(1)]
                }
            };
        }
        let mut n_forks = 0u32;
        while n_forks < self.policy.max_forks && rng.random_bool(self.policy.fork_prob) {
            n_forks += 1;
        }
        let structure = sample_structure(self.capacity, n_forks, rng.random(), self.syntax.max_id)
            .expect("mock plan within bounds");
        structure.actions
    }

    /// Organizer text split into segments, one per join plus the tail.
    fn plan_segments(&self, prompt: &str) -> Vec<String> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(self.seed, 0x0001));
        let actions = self.plan_actions(&mut rng);
        let ends_with_answer = matches!(actions.last(), Some(Action::Answer));
        let mut segments = Vec::new();
        let mut current = String::new();
        for action in &actions {
            current.push_str(&Self::words(&mut rng, self.policy.think_words));
            current.push(' ');
            match action {
                Action::Fork(i) => {
                    current.push_str(&self.syntax.canonical(TagKind::ForkOpen).render(Some(*i)));
                    current.push_str(&Self::words(&mut rng, self.policy.subquery_words));
                    current.push_str(&self.syntax.canonical(TagKind::ForkClose).render(Some(*i)));
                    current.push(' ');
                }
                Action::Join(i) => {
                    current.push_str(&self.syntax.canonical(TagKind::JoinOpen).render(Some(*i)));
                    segments.push(std::mem::take(&mut current));
                }
                Action::Answer => {
                    let answer = self.answer_text(prompt, &mut rng);
                    current.push_str(&self.syntax.canonical(TagKind::AnswerOpen).render(None));
                    current.push_str(&answer);
                    current.push_str(&self.syntax.canonical(TagKind::AnswerClose).render(None));
                }
            }
        }
        if !ends_with_answer {
            // missing-final-answer injection: the tail segment is think text
            // that simply runs out
            current.push_str(&Self::words(&mut rng, self.policy.think_words));
        }
        segments.push(current);
        segments
    }

    fn answer_text(&self, prompt: &str, rng: &mut ChaCha8Rng) -> String {
        match &self.policy.answer {
            AnswerGen::Fixed(text) => text.clone(),
            AnswerGen::SolveCountdown { drop_prob } => {
                let Some(spec) = countdown::parse_query(prompt) else {
                    return "no countdown query found".into();
                };
                match countdown::solve_witnesses(&spec, spec.n_s) {
                    Ok(witnesses) => {
                        let kept: Vec<String> = witnesses
                            .into_iter()
                            .filter(|_| !rng.random_bool(*drop_prob))
                            .collect();
                        if kept.is_empty() {
                            "no solutions kept".into()
                        } else {
                            kept.join("\n")
                        }
                    }
                    Err(_) => "enumeration budget exceeded".into(),
                }
            }
        }
    }

    fn worker_text(&self, ordinal: usize, sub_query_id: u32) -> String {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(
            self.seed,
            0x0002_0000 ^ ((ordinal as u64) << 32) ^ u64::from(sub_query_id),
        ));
        let thoughts = Self::words(&mut rng, self.policy.worker_words);
        let payload = Self::words(&mut rng, self.policy.payload_words);
        let mut out = String::new();
        if !thoughts.is_empty() {
            out.push_str(&thoughts);
            out.push(' ');
        }
        out.push_str(&self.syntax.canonical(TagKind::ReturnOpen).render(None));
        out.push_str(&payload);
        out.push_str(&self.syntax.canonical(TagKind::ReturnClose).render(None));
        out
    }
}

fn mix(seed: u64, salt: u64) -> u64 {
    // splitmix64 over seed xor salt
    let mut z = seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl TextBackend for MockBackend {
    fn generate(&self, request: &GenerationRequest) -> Result<BoxedStream, BackendError> {
        let text = match request.stream_handle {
            StreamHandle::Organizer { segment } => {
                let segments = self.plan_segments(&request.prompt);
                segments
                    .get(segment)
                    .cloned()
                    .ok_or_else(|| BackendError::ExhaustedScript {
                        handle: request.stream_handle.to_string(),
                    })?
            }
            StreamHandle::Worker {
                ordinal,
                sub_query_id,
            } => self.worker_text(ordinal, sub_query_id),
        };
        let role = match request.stream_handle {
            StreamHandle::Organizer { .. } => Role::Organizer,
            StreamHandle::Worker { .. } => Role::Worker,
        };
        let cut = cut_at_stop(&text, role, &self.syntax, &request.stop_conditions);
        // emit word-sized chunks so tag reassembly is exercised constantly
        let chunks = cut
            .split_inclusive(' ')
            .map(|s| s.to_string())
            .collect::<Vec<_>>();
        Ok(Box::new(VecStream::new(chunks)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::StopCondition;

    fn org_req(segment: usize) -> GenerationRequest {
        GenerationRequest {
            role: Role::Organizer,
            prompt: "question".into(),
            max_steps: 4096,
            stop_conditions: vec![StopCondition::JoinRequest, StopCondition::AnswerClose],
            stream_handle: StreamHandle::Organizer { segment },
        }
    }

    fn collect(backend: &MockBackend, req: &GenerationRequest) -> String {
        let mut stream = backend.generate(req).unwrap();
        let mut out = String::new();
        while let Some(chunk) = stream.next_chunk().unwrap() {
            out.push_str(&chunk);
        }
        out
    }

    #[test]
    fn same_seed_same_output() {
        let a = MockBackend::new(MockPolicy::default(), 9, TagSyntax::default(), 4);
        let b = MockBackend::new(MockPolicy::default(), 9, TagSyntax::default(), 4);
        assert_eq!(collect(&a, &org_req(0)), collect(&b, &org_req(0)));
    }

    #[test]
    fn zero_fork_prob_is_sequential() {
        let policy = MockPolicy {
            fork_prob: 0.0,
            ..Default::default()
        };
        let backend = MockBackend::new(policy, 3, TagSyntax::default(), 4);
        let text = collect(&backend, &org_req(0));
        assert!(!text.contains("<FORK"));
        assert!(text.contains("<ANSWER>"));
    }

    #[test]
    fn overflow_injection_emits_capacity_forks_before_any_join() {
        let policy = MockPolicy {
            error_injection: Some(FormatErrorClass::AgentPoolOverflow),
            ..Default::default()
        };
        let backend = MockBackend::new(policy, 3, TagSyntax::default(), 2);
        let text = collect(&backend, &org_req(0));
        assert!(text.contains("<FORK-1>"));
        assert!(text.contains("<FORK-2>"));
        let f2 = text.find("<FORK-2>").unwrap();
        assert!(!text[..f2].contains("<JOIN"));
    }

    #[test]
    fn worker_output_always_has_return_block() {
        let backend = MockBackend::new(MockPolicy::default(), 11, TagSyntax::default(), 4);
        let req = GenerationRequest {
            role: Role::Worker,
            prompt: "sub".into(),
            max_steps: 4096,
            stop_conditions: vec![StopCondition::ReturnClose],
            stream_handle: StreamHandle::Worker {
                ordinal: 0,
                sub_query_id: 1,
            },
        };
        let text = collect(&backend, &req);
        assert!(text.contains("<RETURN>"));
        assert!(text.ends_with("</RETURN>"));
    }
}
