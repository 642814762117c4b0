//! Chunk-to-step weighing.
//!
//! One decode step is one token-equivalent unit. Backends stream arbitrary
//! chunks, so the logical clock charges each event by the weight of its text
//! under a configurable weigher; the default counts whitespace-delimited
//! pieces. Prompt prefill and spliced join payloads cost zero steps.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StepWeigher {
    /// Number of whitespace-delimited pieces (non-whitespace runs).
    #[default]
    WhitespacePieces,
    /// Number of characters.
    Chars,
}

impl StepWeigher {
    pub fn weigh(&self, text: &str) -> u64 {
        match self {
            StepWeigher::WhitespacePieces => piece_starts(text).len() as u64,
            StepWeigher::Chars => text.chars().count() as u64,
        }
    }

    /// Longest prefix weighing at most `max_steps`, with its weight. Pieces
    /// are never split, so the prefix weight is exact.
    pub fn truncate<'t>(&self, text: &'t str, max_steps: u64) -> (&'t str, u64) {
        match self {
            StepWeigher::WhitespacePieces => {
                let starts = piece_starts(text);
                if (starts.len() as u64) <= max_steps {
                    return (text, starts.len() as u64);
                }
                let cut = starts[max_steps as usize];
                (&text[..cut], max_steps)
            }
            StepWeigher::Chars => {
                let mut count = 0u64;
                for (at, _) in text.char_indices() {
                    if count == max_steps {
                        return (&text[..at], count);
                    }
                    count += 1;
                }
                (text, count)
            }
        }
    }
}

/// Byte offsets where each whitespace-delimited piece begins. Whitespace
/// between pieces belongs to the piece before it; leading whitespace belongs
/// to the first piece.
fn piece_starts(text: &str) -> Vec<usize> {
    let mut starts = Vec::new();
    let mut prev_ws = true;
    let mut seen_piece = false;
    for (at, ch) in text.char_indices() {
        if !ch.is_whitespace() && prev_ws {
            if seen_piece {
                starts.push(at);
            } else {
                // leading whitespace glues to the first piece
                starts.push(0);
                seen_piece = true;
            }
        }
        prev_ws = ch.is_whitespace();
    }
    starts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn whitespace_piece_counts() {
        let w = StepWeigher::WhitespacePieces;
        assert_eq!(w.weigh(""), 0);
        assert_eq!(w.weigh("   "), 0);
        assert_eq!(w.weigh("one"), 1);
        assert_eq!(w.weigh("a b  c"), 3);
        assert_eq!(w.weigh(" lead and trail "), 3);
        assert_eq!(w.weigh("<FORK-1>"), 1);
        assert_eq!(w.weigh("2*3+4\n2+3+5"), 2);
    }

    #[test]
    fn truncate_keeps_exact_prefix_bytes() {
        let w = StepWeigher::WhitespacePieces;
        let (p, n) = w.truncate("a b  c d", 2);
        assert_eq!((p, n), ("a b  ", 2));
        let (p, n) = w.truncate("a b", 5);
        assert_eq!((p, n), ("a b", 2));
        let (p, n) = w.truncate("a b", 0);
        assert_eq!((p, n), ("", 0));
        let (p, n) = w.truncate("  x y", 1);
        assert_eq!((p, n), ("  x ", 1));
    }

    #[test]
    fn weight_is_subadditive_under_concatenation() {
        let w = StepWeigher::WhitespacePieces;
        for (a, b) in [("a", "b"), ("a ", "b"), ("a", " b"), ("x y ", " z")] {
            let joined = format!("{}{}", a, b);
            assert!(w.weigh(&joined) <= w.weigh(a) + w.weigh(b));
            assert!(w.weigh(&joined) >= w.weigh(a).max(w.weigh(b)));
        }
    }

    #[test]
    fn char_weigher() {
        let w = StepWeigher::Chars;
        assert_eq!(w.weigh("héllo"), 5);
        let (p, n) = w.truncate("héllo", 2);
        assert_eq!((p, n), ("hé", 2));
    }
}
