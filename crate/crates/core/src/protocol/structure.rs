//! Random initialization of thinking structure: abstract organizer action
//! sequences sampled uniformly over all capacity-valid shapes.

use num::bigint::BigUint;
use num::{One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

use super::syntax::{TagKind, TagSyntax};
use super::{EventKind, ProtocolEvent, ProtocolError};

/// One abstract organizer action, without text content.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Fork(u32),
    Join(u32),
    Answer,
}

impl std::fmt::Display for Action {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Action::Fork(i) => write!(f, "fork:{}", i),
            Action::Join(i) => write!(f, "join:{}", i),
            Action::Answer => write!(f, "answer"),
        }
    }
}

/// An abstract action sequence: forks and joins ending with Answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionStructure {
    pub actions: Vec<Action>,
}

impl ActionStructure {
    pub fn n_forks(&self) -> u32 {
        self.actions
            .iter()
            .filter(|a| matches!(a, Action::Fork(_)))
            .count() as u32
    }

    /// Checks validity under pool capacity `capacity`: at no prefix do
    /// active (forked-not-joined) ids exceed `capacity - 1`, every join
    /// matches an un-joined fork, every fork is joined, and the sequence
    /// ends with exactly one Answer.
    pub fn validate(&self, capacity: u32) -> Result<(), ProtocolError> {
        let err = |m: String| Err(ProtocolError::InvalidStructure(m));
        if capacity < 2 {
            return err("capacity must be at least 2".into());
        }
        match self.actions.last() {
            Some(Action::Answer) => {}
            _ => return err("structure must end with Answer".into()),
        }
        let mut active: Vec<u32> = Vec::new();
        for (idx, action) in self.actions.iter().enumerate() {
            match action {
                Action::Fork(i) => {
                    if active.contains(i) {
                        return err(format!("fork of active id {} at action {}", i, idx));
                    }
                    if active.len() as u32 >= capacity - 1 {
                        return err(format!("fork at action {} overflows capacity {}", idx, capacity));
                    }
                    active.push(*i);
                }
                Action::Join(i) => {
                    match active.iter().position(|a| a == i) {
                        Some(at) => {
                            active.remove(at);
                        }
                        None => return err(format!("join of inactive id {} at action {}", i, idx)),
                    }
                }
                Action::Answer => {
                    if idx + 1 != self.actions.len() {
                        return err(format!("Answer at action {} is not final", idx));
                    }
                }
            }
        }
        if !active.is_empty() {
            return err(format!("forks left unjoined: {:?}", active));
        }
        Ok(())
    }

    /// Recovers the abstract sequence from scanned events (fork opens, join
    /// requests, and the answer open).
    pub fn from_events(events: &[ProtocolEvent]) -> Self {
        let mut actions = Vec::new();
        for event in events {
            match event.kind {
                EventKind::ForkOpen => actions.push(Action::Fork(event.id.expect("id").get())),
                EventKind::JoinRequest => actions.push(Action::Join(event.id.expect("id").get())),
                EventKind::AnswerOpen => actions.push(Action::Answer),
                _ => {}
            }
        }
        ActionStructure { actions }
    }
}

/// Number of valid completions from a state with `forks_left` forks still to
/// emit and `active` workers running, under `slots = capacity - 1`.
fn count_completions(
    forks_left: u32,
    active: u32,
    slots: u32,
    memo: &mut HashMap<(u32, u32), BigUint>,
) -> BigUint {
    if forks_left == 0 && active == 0 {
        return BigUint::one();
    }
    if let Some(hit) = memo.get(&(forks_left, active)) {
        return hit.clone();
    }
    let mut total = BigUint::zero();
    if forks_left > 0 && active < slots {
        total += count_completions(forks_left - 1, active + 1, slots, memo);
    }
    if active > 0 {
        // each active id is a distinct join choice
        total += count_completions(forks_left, active - 1, slots, memo) * BigUint::from(active);
    }
    memo.insert((forks_left, active), total.clone());
    total
}

fn gen_biguint_below(rng: &mut ChaCha8Rng, bound: &BigUint) -> BigUint {
    debug_assert!(!bound.is_zero());
    let bits = bound.bits();
    let limbs = bits.div_ceil(32) as usize;
    let top_bits = bits % 32;
    loop {
        let mut digits: Vec<u32> = (0..limbs).map(|_| rng.random()).collect();
        if top_bits != 0 {
            if let Some(last) = digits.last_mut() {
                *last &= (1u32 << top_bits) - 1;
            }
        }
        let candidate = BigUint::new(digits);
        if &candidate < bound {
            return candidate;
        }
    }
}

/// Samples a uniformly random valid structure with exactly `n_forks` forks
/// under capacity `capacity`. Fork ids are assigned in fork order (1, 2, …),
/// so `n_forks` may not exceed `max_id`. Deterministic for a given seed.
pub fn sample_structure(
    capacity: u32,
    n_forks: u32,
    seed: u64,
    max_id: u32,
) -> Result<ActionStructure, ProtocolError> {
    if capacity < 2 {
        return Err(ProtocolError::InvalidStructure(
            "capacity must be at least 2".into(),
        ));
    }
    if n_forks > max_id {
        return Err(ProtocolError::TooManyForks {
            requested: n_forks,
            max: max_id,
        });
    }
    let slots = capacity - 1;
    let mut memo = HashMap::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut actions = Vec::new();
    let mut active: Vec<u32> = Vec::new();
    let mut forks_left = n_forks;
    let mut next_id = 1u32;
    while forks_left > 0 || !active.is_empty() {
        let fork_weight = if forks_left > 0 && (active.len() as u32) < slots {
            count_completions(forks_left - 1, active.len() as u32 + 1, slots, &mut memo)
        } else {
            BigUint::zero()
        };
        let join_weight = if active.is_empty() {
            BigUint::zero()
        } else {
            count_completions(forks_left, active.len() as u32 - 1, slots, &mut memo)
        };
        let total = fork_weight.clone() + join_weight.clone() * BigUint::from(active.len() as u32);
        debug_assert!(!total.is_zero());
        let pick = gen_biguint_below(&mut rng, &total);
        if pick < fork_weight {
            actions.push(Action::Fork(next_id));
            active.push(next_id);
            next_id += 1;
            forks_left -= 1;
        } else {
            let offset = (pick - &fork_weight) / &join_weight;
            let idx: usize = offset.try_into().expect("join index fits usize");
            let id = active.remove(idx);
            actions.push(Action::Join(id));
        }
    }
    actions.push(Action::Answer);
    let structure = ActionStructure { actions };
    debug_assert!(structure.validate(capacity).is_ok());
    Ok(structure)
}

/// Renders the abstract skeleton as prompt-guidance text, e.g.
/// `<FORK-1>…</FORK-1> … <JOIN-1> … <ANSWER>…</ANSWER>`. Scanning the result
/// recovers the same abstract action sequence.
pub fn render_structure(structure: &ActionStructure, syntax: &TagSyntax) -> String {
    let mut parts = Vec::new();
    for action in &structure.actions {
        match action {
            Action::Fork(i) => parts.push(format!(
                "{}…{}",
                syntax.canonical(TagKind::ForkOpen).render(Some(*i)),
                syntax.canonical(TagKind::ForkClose).render(Some(*i)),
            )),
            Action::Join(i) => parts.push(syntax.canonical(TagKind::JoinOpen).render(Some(*i))),
            Action::Answer => parts.push(format!(
                "{}…{}",
                syntax.canonical(TagKind::AnswerOpen).render(None),
                syntax.canonical(TagKind::AnswerClose).render(None),
            )),
        }
    }
    parts.join(" … ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{scan_text, Role};

    /// Brute-force enumeration of every valid structure, for small sizes.
    fn enumerate_all(capacity: u32, n_forks: u32) -> Vec<Vec<Action>> {
        fn go(
            forks_left: u32,
            active: &mut Vec<u32>,
            next_id: u32,
            slots: u32,
            prefix: &mut Vec<Action>,
            out: &mut Vec<Vec<Action>>,
        ) {
            if forks_left == 0 && active.is_empty() {
                let mut done = prefix.clone();
                done.push(Action::Answer);
                out.push(done);
                return;
            }
            if forks_left > 0 && (active.len() as u32) < slots {
                prefix.push(Action::Fork(next_id));
                active.push(next_id);
                go(forks_left - 1, active, next_id + 1, slots, prefix, out);
                active.pop();
                prefix.pop();
            }
            for at in 0..active.len() {
                let id = active.remove(at);
                prefix.push(Action::Join(id));
                go(forks_left, active, next_id, slots, prefix, out);
                prefix.pop();
                active.insert(at, id);
            }
        }
        let mut out = Vec::new();
        go(n_forks, &mut Vec::new(), 1, capacity - 1, &mut Vec::new(), &mut out);
        out
    }

    #[test]
    fn no_forks_yields_answer_only() {
        for seed in 0..5 {
            let s = sample_structure(2, 0, seed, 64).unwrap();
            assert_eq!(s.actions, vec![Action::Answer]);
        }
    }

    #[test]
    fn capacity_two_is_strictly_interleaved() {
        // enumeration confirms there is exactly one shape for c=2, n=2
        let all = enumerate_all(2, 2);
        assert_eq!(all.len(), 1);
        let expected = vec![
            Action::Fork(1),
            Action::Join(1),
            Action::Fork(2),
            Action::Join(2),
            Action::Answer,
        ];
        assert_eq!(all[0], expected);
        let s = sample_structure(2, 2, 7, 64).unwrap();
        assert_eq!(s.actions, expected);
    }

    #[test]
    fn sampled_structures_are_valid_and_match_enumeration() {
        for (c, n) in [(2u32, 3u32), (3, 3), (4, 3), (4, 5)] {
            let all = enumerate_all(c, n);
            for seed in 0..40 {
                let s = sample_structure(c, n, seed, 64).unwrap();
                s.validate(c).unwrap();
                assert!(all.contains(&s.actions), "c={} n={} seed={}", c, n, seed);
            }
        }
    }

    #[test]
    fn sampling_reaches_every_shape() {
        // c=3, n=2 has a small shape space; many seeds should cover it all
        let all = enumerate_all(3, 2);
        let mut seen = std::collections::HashSet::new();
        for seed in 0..400 {
            let s = sample_structure(3, 2, seed, 64).unwrap();
            seen.insert(format!("{:?}", s.actions));
        }
        assert_eq!(seen.len(), all.len());
    }

    #[test]
    fn deterministic_per_seed() {
        let a = sample_structure(4, 4, 99, 64).unwrap();
        let b = sample_structure(4, 4, 99, 64).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_forks_beyond_id_bound() {
        assert!(matches!(
            sample_structure(4, 9, 0, 8),
            Err(ProtocolError::TooManyForks { .. })
        ));
    }

    #[test]
    fn render_matches_spec_shape() {
        let s = ActionStructure {
            actions: vec![Action::Fork(1), Action::Join(1), Action::Answer],
        };
        let text = render_structure(&s, &TagSyntax::default());
        assert_eq!(text, "<FORK-1>…</FORK-1> … <JOIN-1> … <ANSWER>…</ANSWER>");
        let only_answer = ActionStructure {
            actions: vec![Action::Answer],
        };
        assert_eq!(
            render_structure(&only_answer, &TagSyntax::default()),
            "<ANSWER>…</ANSWER>"
        );
    }

    #[test]
    fn render_scan_round_trip() {
        let syntax = TagSyntax::default();
        for seed in 0..30 {
            let s = sample_structure(4, 4, seed, 64).unwrap();
            let text = render_structure(&s, &syntax);
            let events = scan_text(&text, Role::Organizer, &syntax);
            assert_eq!(ActionStructure::from_events(&events), s);
            crate::protocol::validate_trace(&events, 4).unwrap();
        }
    }
}
