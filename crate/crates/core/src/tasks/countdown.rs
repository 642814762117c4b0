//! Multi-solution countdown: instance generation, solution verification, the
//! brute-force enumeration oracle, and answer scoring.
//!
//! An instance asks for `n_s` different solutions, each an expression over
//! three to six of the instance numbers (each number used at most once) whose
//! exact-rational value equals the target. Two solutions are different iff
//! they use at least one different number or at least one operator a
//! different number of times.

use std::collections::BTreeMap;

use num::{One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::expr::{parse_expression, DistinctnessKey, Exact, OpCounts, Solution, OP_SYMBOLS};
use super::TasksError;

/// A certified multi-solution countdown instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountdownInstance {
    pub target: i64,
    /// Distinct numbers, sorted.
    pub numbers: Vec<i64>,
    /// Required solution count.
    pub n_s: usize,
    pub min_use: usize,
    pub max_use: usize,
    /// Distinct keys found by the enumerator when the instance was generated.
    pub certified_solution_count: usize,
}

impl CountdownInstance {
    pub fn new(target: i64, numbers: Vec<i64>, n_s: usize) -> Self {
        let mut numbers = numbers;
        numbers.sort_unstable();
        numbers.dedup();
        CountdownInstance {
            target,
            numbers,
            n_s,
            min_use: 3,
            max_use: 6,
            certified_solution_count: 0,
        }
    }
}

/// Why a candidate solution is invalid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InvalidReason {
    TooFewNumbers { used: usize, min: usize },
    TooManyNumbers { used: usize, max: usize },
    UnknownNumber { value: i64 },
    NumberReused { value: i64 },
    WrongValue { got: String },
    NonIntegerIntermediate { value: String },
}

impl std::fmt::Display for InvalidReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            InvalidReason::TooFewNumbers { used, min } => {
                write!(f, "uses {} numbers, fewer than {}", used, min)
            }
            InvalidReason::TooManyNumbers { used, max } => {
                write!(f, "uses {} numbers, more than {}", used, max)
            }
            InvalidReason::UnknownNumber { value } => {
                write!(f, "{} is not in the instance set", value)
            }
            InvalidReason::NumberReused { value } => write!(f, "{} used more than once", value),
            InvalidReason::WrongValue { got } => write!(f, "evaluates to {}, not the target", got),
            InvalidReason::NonIntegerIntermediate { value } => {
                write!(f, "intermediate value {} is not an integer", value)
            }
        }
    }
}

/// Checks operand membership, at-most-once usage, the 3..=6 operand count,
/// and exact value equality against the target.
pub fn verify_solution(
    solution: &Solution,
    instance: &CountdownInstance,
) -> Result<(), InvalidReason> {
    verify_solution_with(solution, instance, false)
}

/// `strict_integer` additionally requires integer intermediates (classic
/// countdown rules; off by default).
pub fn verify_solution_with(
    solution: &Solution,
    instance: &CountdownInstance,
    strict_integer: bool,
) -> Result<(), InvalidReason> {
    let used = solution.numbers.len();
    if used < instance.min_use {
        return Err(InvalidReason::TooFewNumbers {
            used,
            min: instance.min_use,
        });
    }
    if used > instance.max_use {
        return Err(InvalidReason::TooManyNumbers {
            used,
            max: instance.max_use,
        });
    }
    let mut last = None;
    for &n in &solution.numbers {
        if !instance.numbers.contains(&n) {
            return Err(InvalidReason::UnknownNumber { value: n });
        }
        if last == Some(n) {
            return Err(InvalidReason::NumberReused { value: n });
        }
        last = Some(n);
    }
    if strict_integer {
        if let Err(TasksError::NonIntegerIntermediate { value }) =
            solution.ast.evaluate(true)
        {
            return Err(InvalidReason::NonIntegerIntermediate { value });
        }
    }
    if solution.value != Exact::from_integer(i128::from(instance.target)) {
        return Err(InvalidReason::WrongValue {
            got: solution.value.to_string(),
        });
    }
    Ok(())
}

/// Per-mask expression states: value and op-count multiset, with one witness
/// expression each. Keyed deterministically.
type MaskStates = BTreeMap<(Exact, OpCounts), String>;

/// Exhaustive combination over all operand subsets and expression shapes,
/// deduplicated by `(value, op multiset)` within each subset — which is
/// lossless for distinctness keys. `budget` counts candidate combinations.
fn enumerate_states(
    numbers: &[i64],
    max_use: usize,
    cap: u64,
) -> Result<Vec<MaskStates>, TasksError> {
    let n = numbers.len();
    assert!(n <= 16, "operand sets this large are not supported");
    let mut states: Vec<MaskStates> = vec![MaskStates::new(); 1 << n];
    let mut spent: u64 = 0;
    for (i, &num) in numbers.iter().enumerate() {
        states[1 << i].insert(
            (Exact::from_integer(i128::from(num)), [0; 4]),
            num.to_string(),
        );
    }
    for mask in 1usize..(1 << n) {
        let bits = mask.count_ones() as usize;
        if bits < 2 || bits > max_use {
            continue;
        }
        let mut merged = MaskStates::new();
        // iterate unordered partitions of mask into two nonempty halves
        let mut sub = (mask - 1) & mask;
        while sub != 0 {
            let other = mask ^ sub;
            if sub > other {
                let left = &states[sub];
                let right = &states[other];
                spent += (left.len() as u64) * (right.len() as u64) * 6;
                if spent > cap {
                    return Err(TasksError::CapExceeded { cap, spent });
                }
                for ((av, aops), aw) in left {
                    for ((bv, bops), bw) in right {
                        let mut ops_base = [0u32; 4];
                        for k in 0..4 {
                            ops_base[k] = aops[k] + bops[k];
                        }
                        let mut push = |op: usize, value: Exact, lhs: &str, rhs: &str| {
                            let mut ops = ops_base;
                            ops[op] += 1;
                            merged
                                .entry((value, ops))
                                .or_insert_with(|| format!("({}{}{})", lhs, OP_SYMBOLS[op], rhs));
                        };
                        push(0, av + bv, aw, bw);
                        push(2, av * bv, aw, bw);
                        push(1, av - bv, aw, bw);
                        push(1, bv - av, bw, aw);
                        if !bv.numer().is_zero() {
                            push(3, av / bv, aw, bw);
                        }
                        if !av.numer().is_zero() {
                            push(3, bv / av, bw, aw);
                        }
                    }
                }
            }
            sub = (sub - 1) & mask;
        }
        states[mask] = merged;
    }
    Ok(states)
}

/// All distinct solution keys for an instance, each with one witness
/// expression, found by exhaustive enumeration.
pub fn enumerate_solutions(
    instance: &CountdownInstance,
    cap: u64,
) -> Result<BTreeMap<DistinctnessKey, String>, TasksError> {
    let states = enumerate_states(&instance.numbers, instance.max_use, cap)?;
    let target = Exact::from_integer(i128::from(instance.target));
    let mut keys = BTreeMap::new();
    for (mask, mask_states) in states.iter().enumerate() {
        let bits = mask.count_ones() as usize;
        if bits < instance.min_use || bits > instance.max_use {
            continue;
        }
        let operands: Vec<i64> = instance
            .numbers
            .iter()
            .enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .map(|(_, &v)| v)
            .collect();
        for ((value, ops), witness) in mask_states {
            if *value == target {
                keys.entry(DistinctnessKey {
                    numbers: operands.clone(),
                    ops: *ops,
                })
                .or_insert_with(|| witness.clone());
            }
        }
    }
    Ok(keys)
}

/// Generation knobs for [`gen_countdown`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenParams {
    pub target_min: i64,
    pub target_max: i64,
    pub set_size: usize,
    pub n_s: usize,
    /// Targets that must not be emitted (train/test split support).
    pub exclude_targets: Vec<i64>,
    pub max_attempts: u32,
    pub enum_cap: u64,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            target_min: 1,
            target_max: 1000,
            set_size: 6,
            n_s: 4,
            exclude_targets: Vec::new(),
            max_attempts: 200,
            enum_cap: 10_000_000,
        }
    }
}

/// Rejection-samples `(target, numbers)` until the enumerator certifies at
/// least `n_s` distinct solutions. Deterministic per seed.
pub fn gen_countdown(seed: u64, params: &GenParams) -> Result<CountdownInstance, TasksError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if params.set_size > 10 {
        return Err(TasksError::GenerationBudgetExceeded {
            attempts: 0,
            detail: "set sizes above 10 exceed the desk-scale enumeration budget".into(),
        });
    }
    for _ in 0..params.max_attempts {
        let mut numbers: Vec<i64> = Vec::new();
        while numbers.len() < params.set_size {
            let n = rng.random_range(1..=100);
            if !numbers.contains(&n) {
                numbers.push(n);
            }
        }
        numbers.sort_unstable();
        let mut instance = CountdownInstance::new(0, numbers, params.n_s);
        let states = match enumerate_states(&instance.numbers, instance.max_use, params.enum_cap) {
            Ok(s) => s,
            Err(TasksError::CapExceeded { .. }) => continue,
            Err(e) => return Err(e),
        };
        // count keys per integer target in range, then pick one
        let mut per_target: BTreeMap<i64, std::collections::BTreeSet<DistinctnessKey>> =
            BTreeMap::new();
        for (mask, mask_states) in states.iter().enumerate() {
            let bits = mask.count_ones() as usize;
            if bits < instance.min_use || bits > instance.max_use {
                continue;
            }
            let operands: Vec<i64> = instance
                .numbers
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, &v)| v)
                .collect();
            for ((value, ops), _) in mask_states {
                if !value.denom().is_one() {
                    continue;
                }
                let t = *value.numer();
                if t < i128::from(params.target_min) || t > i128::from(params.target_max) {
                    continue;
                }
                let t = t as i64;
                if params.exclude_targets.contains(&t) {
                    continue;
                }
                per_target.entry(t).or_default().insert(DistinctnessKey {
                    numbers: operands.clone(),
                    ops: *ops,
                });
            }
        }
        let qualifying: Vec<(i64, usize)> = per_target
            .iter()
            .filter(|(_, keys)| keys.len() >= params.n_s)
            .map(|(&t, keys)| (t, keys.len()))
            .collect();
        if qualifying.is_empty() {
            continue;
        }
        let (target, count) = qualifying[rng.random_range(0..qualifying.len())];
        instance.target = target;
        instance.certified_solution_count = count;
        return Ok(instance);
    }
    Err(TasksError::GenerationBudgetExceeded {
        attempts: params.max_attempts,
        detail: "no instance with enough distinct solutions found".into(),
    })
}

/// Renders the canonical query text for an instance. [`parse_query`] is its
/// inverse, so scripted answer generators can recover the instance from a
/// prompt.
pub fn render_query(instance: &CountdownInstance) -> String {
    let numbers = instance
        .numbers
        .iter()
        .map(|n| n.to_string())
        .collect::<Vec<_>>()
        .join(" ");
    format!(
        "Find {} different arithmetic solutions. Use {} to {} of the numbers [{}], each at most \
         once, with + - * / to reach the target {}. Write one expression per line.",
        instance.n_s, instance.min_use, instance.max_use, numbers, instance.target
    )
}

/// Instance fields recovered from a query embedded in a prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuerySpec {
    pub target: i64,
    pub numbers: Vec<i64>,
    pub n_s: usize,
}

pub fn parse_query(text: &str) -> Option<QuerySpec> {
    let ns_at = text.find("Find ")?;
    let after = &text[ns_at + 5..];
    let n_s: usize = after.split_whitespace().next()?.parse().ok()?;
    let open = text.find('[')?;
    let close = text[open..].find(']')? + open;
    let numbers: Vec<i64> = text[open + 1..close]
        .split_whitespace()
        .map(|w| w.parse::<i64>())
        .collect::<Result<_, _>>()
        .ok()?;
    let t_at = text.find("target ")?;
    let digits: String = text[t_at + 7..]
        .chars()
        .take_while(|c| c.is_ascii_digit())
        .collect();
    let target: i64 = digits.parse().ok()?;
    Some(QuerySpec {
        target,
        numbers,
        n_s,
    })
}

/// Enumerates witnesses for a parsed query, up to `max` expressions.
pub fn solve_witnesses(spec: &QuerySpec, max: usize) -> Result<Vec<String>, TasksError> {
    let instance = CountdownInstance::new(spec.target, spec.numbers.clone(), spec.n_s);
    let keys = enumerate_solutions(&instance, 10_000_000)?;
    Ok(keys.into_values().take(max).collect())
}

/// Parses one candidate expression per line (tolerating list bullets),
/// verifies each against the instance, deduplicates by distinctness key, and
/// scores `R_A = min(n_c, n_s) / n_s`.
pub fn mcd_accuracy(answer_text: &str, instance: &CountdownInstance) -> (usize, f64) {
    let mut keys = std::collections::BTreeSet::new();
    for raw in answer_text.lines() {
        let line = strip_bullet(raw.trim());
        if line.is_empty() {
            continue;
        }
        let Ok(solution) = parse_expression(line) else {
            continue;
        };
        if verify_solution(&solution, instance).is_ok() {
            keys.insert(solution.key());
        }
    }
    let n_c = keys.len();
    let r_a = (n_c.min(instance.n_s) as f64) / (instance.n_s as f64);
    (n_c, r_a)
}

fn strip_bullet(line: &str) -> &str {
    // "1. expr", "2) expr", "- expr", "* expr", "• expr"
    for prefix in ["- ", "* ", "• "] {
        if let Some(rest) = line.strip_prefix(prefix) {
            return rest.trim_start();
        }
    }
    let digits = line.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits > 0 && digits <= 3 {
        let rest = &line[digits..];
        for sep in [". ", ") "] {
            if let Some(r) = rest.strip_prefix(sep) {
                return r.trim_start();
            }
        }
    }
    line
}

#[cfg(test)]
mod tests {
    use super::*;

    fn demo_instance() -> CountdownInstance {
        CountdownInstance::new(10, vec![2, 3, 4, 5], 4)
    }

    #[test]
    fn enumerator_finds_the_known_keys() {
        let keys = enumerate_solutions(&demo_instance(), 1_000_000).unwrap();
        assert!(keys.len() >= 4, "found {} keys", keys.len());
        for expr in ["2×3+4", "2+3+5", "3−2+4+5", "5×4/2"] {
            let sol = parse_expression(expr).unwrap();
            assert!(keys.contains_key(&sol.key()), "missing key of {}", expr);
        }
    }

    #[test]
    fn every_witness_passes_verification() {
        let instance = demo_instance();
        let keys = enumerate_solutions(&instance, 1_000_000).unwrap();
        for (key, witness) in &keys {
            let sol = parse_expression(witness).unwrap();
            assert_eq!(&sol.key(), key);
            verify_solution(&sol, &instance).unwrap();
        }
    }

    #[test]
    fn too_small_operand_sets_have_no_solutions() {
        let instance = CountdownInstance::new(1000, vec![2, 3], 4);
        let keys = enumerate_solutions(&instance, 1_000_000).unwrap();
        assert!(keys.is_empty());
    }

    #[test]
    fn verify_rejects_reuse_and_wrong_values() {
        let instance = demo_instance();
        let ok = parse_expression("2×3+4").unwrap();
        verify_solution(&ok, &instance).unwrap();

        let reuse = parse_expression("5+5").unwrap();
        // 5+5 both reuses 5 and has too few operands; operand count trips first
        assert!(matches!(
            verify_solution(&reuse, &instance),
            Err(InvalidReason::TooFewNumbers { .. })
        ));
        let reuse3 = parse_expression("5+5+2-2").unwrap();
        assert!(matches!(
            verify_solution(&reuse3, &instance),
            Err(InvalidReason::NumberReused { value: 2 }) | Err(InvalidReason::NumberReused { value: 5 })
        ));
        let wrong = parse_expression("2+3+4").unwrap();
        assert!(matches!(
            verify_solution(&wrong, &instance),
            Err(InvalidReason::WrongValue { .. })
        ));
        let unknown = parse_expression("2+3+7").unwrap();
        assert!(matches!(
            verify_solution(&unknown, &instance),
            Err(InvalidReason::UnknownNumber { value: 7 })
        ));
    }

    #[test]
    fn mcd_accuracy_counts_unique_valid_solutions() {
        let instance = demo_instance();
        let (n_c, r_a) = mcd_accuracy("2×3+4\n2+3+5\n4+2*3\nnonsense\n", &instance);
        // 4+2*3 duplicates the key of 2×3+4
        assert_eq!(n_c, 2);
        assert_eq!(r_a, 0.5);

        let (n_c, r_a) = mcd_accuracy("", &instance);
        assert_eq!((n_c, r_a), (0, 0.0));

        let all = "1. 2*3+4\n2. 2+3+5\n3. 3-2+4+5\n4. 5*4/2";
        let (n_c, r_a) = mcd_accuracy(all, &instance);
        assert_eq!(n_c, 4);
        assert_eq!(r_a, 1.0);
    }

    #[test]
    fn generator_emits_certified_instances() {
        let params = GenParams {
            set_size: 5,
            ..Default::default()
        };
        let a = gen_countdown(42, &params).unwrap();
        let b = gen_countdown(42, &params).unwrap();
        assert_eq!(a, b);
        assert!(a.certified_solution_count >= a.n_s);
        let keys = enumerate_solutions(&a, params.enum_cap).unwrap();
        assert_eq!(keys.len(), a.certified_solution_count);
        assert!(keys.len() >= a.n_s);
    }

    #[test]
    fn generator_honors_target_exclusions() {
        let mut params = GenParams {
            set_size: 5,
            target_min: 1,
            target_max: 50,
            ..Default::default()
        };
        params.exclude_targets = (1..=50).filter(|t| t % 2 == 0).collect();
        for seed in 0..5 {
            let inst = gen_countdown(seed, &params).unwrap();
            assert!(inst.target % 2 == 1, "target {} excluded", inst.target);
        }
    }

    #[test]
    fn query_render_parse_round_trip() {
        let instance = demo_instance();
        let text = render_query(&instance);
        let spec = parse_query(&text).unwrap();
        assert_eq!(spec.target, 10);
        assert_eq!(spec.numbers, vec![2, 3, 4, 5]);
        assert_eq!(spec.n_s, 4);
        // also parse back out of a larger prompt
        let prompt = format!("This is main process.\n\ninstructions\n\n{}", text);
        assert_eq!(parse_query(&prompt).unwrap(), spec);
    }
}
