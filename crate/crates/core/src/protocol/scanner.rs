//! Incremental scanner for organizer and worker output.
//!
//! Chunks may split a tag anywhere; the scanner holds any suffix that could
//! still become a tag and emits events only once they are unambiguous. Think
//! spans are maximal inter-tag text, so scanning a stream chunk-by-chunk
//! yields exactly the events of scanning the concatenated text at once.
//!
//! Tag-like text that fails to parse (non-numeric id, mismatched close id,
//! out-of-range id) is reported as a [`ScanDiagnostic`] and passed through
//! as Think text; it is never one of the four format-error classes.

use super::syntax::{TagKind, TagSyntax, TagTemplate};
use super::{EventKind, ProtocolEvent, Role, SubQueryId};

/// Longest id slot we will ever consider (u32 has at most 10 digits).
const MAX_ID_DIGITS: usize = 10;

/// A tag-shaped region that failed to parse as a tag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScanDiagnostic {
    /// Byte offset in the scanned stream.
    pub position: usize,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    Top,
    InFork(u32),
    InAnswer,
    InReturn,
}

#[derive(Debug)]
enum TemplateOutcome {
    Complete { id: Option<u32>, len: usize },
    Partial,
    /// `deep` carries a diagnostic when the template's literal prefix fully
    /// matched but the id or suffix did not.
    Fail { deep: Option<String> },
}

#[derive(Debug)]
enum MatchOutcome {
    Complete {
        kind: EventKind,
        id: Option<SubQueryId>,
        len: usize,
    },
    Partial,
    Fail {
        diagnostic: Option<String>,
    },
}

/// Stateful scanner; create one per stream and feed chunks in order.
#[derive(Debug, Clone)]
pub struct StreamScanner {
    syntax: TagSyntax,
    role: Role,
    mode: Mode,
    /// Text not yet emitted: a pending Think span plus any potential tag.
    buf: String,
    /// Absolute stream offset of `buf[0]`.
    buf_start: usize,
    /// Index into `buf`; positions before it cannot start a tag.
    cursor: usize,
    diagnostics: Vec<ScanDiagnostic>,
    finished: bool,
}

impl StreamScanner {
    pub fn new(role: Role, syntax: &TagSyntax) -> Self {
        StreamScanner {
            syntax: syntax.clone(),
            role,
            mode: Mode::Top,
            buf: String::new(),
            buf_start: 0,
            cursor: 0,
            diagnostics: Vec::new(),
            finished: false,
        }
    }

    /// Feeds the next chunk and returns every event completed by it.
    pub fn feed(&mut self, chunk: &str) -> Vec<ProtocolEvent> {
        debug_assert!(!self.finished, "feed after finish");
        if self.finished {
            return Vec::new();
        }
        self.buf.push_str(chunk);
        self.scan()
    }

    /// Signals end of stream; any residual text flushes as a final Think.
    pub fn finish(&mut self) -> Vec<ProtocolEvent> {
        if self.finished {
            return Vec::new();
        }
        let mut events = self.scan();
        if !self.buf.is_empty() {
            let text = std::mem::take(&mut self.buf);
            events.push(ProtocolEvent::think(text, self.buf_start));
            if let Some(last) = events.last() {
                self.buf_start += last.text.len();
            }
        }
        self.cursor = 0;
        self.finished = true;
        events
    }

    /// Text held back because it may still become a tag (or is an unflushed
    /// Think span).
    pub fn pending_text(&self) -> &str {
        &self.buf
    }

    /// Drops any pending text without emitting it. Used when generation is
    /// cut at a stop tag and trailing bytes must not leak into the stream.
    pub fn discard_pending(&mut self) -> String {
        self.buf_start += self.buf.len();
        self.cursor = 0;
        std::mem::take(&mut self.buf)
    }

    pub fn diagnostics(&self) -> &[ScanDiagnostic] {
        &self.diagnostics
    }

    /// Absolute offset one past the last byte consumed or pending.
    pub fn stream_offset(&self) -> usize {
        self.buf_start + self.buf.len()
    }

    fn scan(&mut self) -> Vec<ProtocolEvent> {
        let mut events = Vec::new();
        let mut p = self.cursor;
        'outer: loop {
            // Hunt for the next position that could start a tag.
            let bytes = self.buf.as_bytes();
            while p < bytes.len() && !self.could_start_tag(bytes[p]) {
                p += 1;
            }
            if p >= bytes.len() {
                self.cursor = bytes.len();
                return events;
            }
            match self.try_match_at(p) {
                MatchOutcome::Complete { kind, id, len } => {
                    if p > 0 {
                        let think: String = self.buf[..p].to_string();
                        events.push(ProtocolEvent::think(think, self.buf_start));
                    }
                    let lexeme = self.buf[p..p + len].to_string();
                    events.push(ProtocolEvent::tag(kind, id, lexeme, self.buf_start + p));
                    self.buf.drain(..p + len);
                    self.buf_start += p + len;
                    self.cursor = 0;
                    p = 0;
                    self.mode = next_mode(self.mode, kind, id);
                    continue 'outer;
                }
                MatchOutcome::Partial => {
                    self.cursor = p;
                    return events;
                }
                MatchOutcome::Fail { diagnostic } => {
                    if let Some(detail) = diagnostic {
                        self.diagnostics.push(ScanDiagnostic {
                            position: self.buf_start + p,
                            detail,
                        });
                    }
                    p += 1;
                }
            }
        }
    }

    fn could_start_tag(&self, byte: u8) -> bool {
        self.for_each_candidate(|tpl, _, _| tpl.prefix().as_bytes().first() == Some(&byte))
    }

    /// Applies `f` to each candidate template of the current mode, returning
    /// true as soon as `f` does.
    fn for_each_candidate<F>(&self, mut f: F) -> bool
    where
        F: FnMut(&TagTemplate, EventKind, Option<u32>) -> bool,
    {
        let visit = |kind: TagKind, ev: EventKind, required: Option<u32>, f: &mut F| {
            self.syntax
                .templates(kind)
                .iter()
                .any(|tpl| f(tpl, ev, required))
        };
        match (self.role, self.mode) {
            (Role::Organizer, Mode::Top) => {
                visit(TagKind::ForkOpen, EventKind::ForkOpen, None, &mut f)
                    || visit(TagKind::JoinOpen, EventKind::JoinRequest, None, &mut f)
                    || visit(TagKind::JoinClose, EventKind::JoinMergeEnd, None, &mut f)
                    || visit(TagKind::AnswerOpen, EventKind::AnswerOpen, None, &mut f)
            }
            (Role::Organizer, Mode::InFork(i)) => {
                visit(TagKind::ForkClose, EventKind::ForkClose, Some(i), &mut f)
            }
            (Role::Organizer, Mode::InAnswer) => {
                visit(TagKind::AnswerClose, EventKind::AnswerClose, None, &mut f)
            }
            (Role::Worker, Mode::Top) => {
                visit(TagKind::ReturnOpen, EventKind::ReturnOpen, None, &mut f)
            }
            (Role::Worker, Mode::InReturn) => {
                visit(TagKind::ReturnClose, EventKind::ReturnClose, None, &mut f)
            }
            _ => false,
        }
    }

    fn try_match_at(&self, p: usize) -> MatchOutcome {
        let rest = &self.buf[p..];
        let mut any_partial = false;
        let mut deep_fail: Option<String> = None;
        let mut complete: Option<(EventKind, Option<SubQueryId>, usize)> = None;
        self.for_each_candidate(|tpl, ev, required| {
            match match_template(tpl, rest, self.syntax.max_id) {
                TemplateOutcome::Complete { id, len } => {
                    if let (Some(req), Some(got)) = (required, id) {
                        if req != got {
                            deep_fail.get_or_insert(format!(
                                "close tag id {} does not match open tag id {}",
                                got, req
                            ));
                            return false;
                        }
                    }
                    let id = id.map(|v| SubQueryId::new(v, self.syntax.max_id).expect("checked"));
                    complete = Some((ev, id, len));
                    true // stop at the first complete match
                }
                TemplateOutcome::Partial => {
                    any_partial = true;
                    false
                }
                TemplateOutcome::Fail { deep } => {
                    if let Some(d) = deep {
                        deep_fail.get_or_insert(d);
                    }
                    false
                }
            }
        });
        if let Some((kind, id, len)) = complete {
            MatchOutcome::Complete { kind, id, len }
        } else if any_partial {
            MatchOutcome::Partial
        } else {
            MatchOutcome::Fail {
                diagnostic: deep_fail,
            }
        }
    }
}

fn next_mode(mode: Mode, kind: EventKind, id: Option<SubQueryId>) -> Mode {
    match kind {
        EventKind::ForkOpen => Mode::InFork(id.expect("fork id").get()),
        EventKind::ForkClose => Mode::Top,
        EventKind::AnswerOpen => Mode::InAnswer,
        EventKind::AnswerClose => Mode::Top,
        EventKind::ReturnOpen => Mode::InReturn,
        EventKind::ReturnClose => Mode::Top,
        EventKind::JoinRequest | EventKind::JoinMergeEnd => Mode::Top,
        EventKind::Think => mode,
    }
}

fn match_template(tpl: &TagTemplate, rest: &str, max_id: u32) -> TemplateOutcome {
    let prefix = tpl.prefix().as_bytes();
    let bytes = rest.as_bytes();
    if bytes.len() < prefix.len() {
        return if prefix.starts_with(bytes) {
            TemplateOutcome::Partial
        } else {
            TemplateOutcome::Fail { deep: None }
        };
    }
    if !bytes.starts_with(prefix) {
        return TemplateOutcome::Fail { deep: None };
    }
    if !tpl.has_id() {
        // literal template: the prefix is the whole tag
        return TemplateOutcome::Complete {
            id: None,
            len: prefix.len(),
        };
    }
    let after_prefix = &bytes[prefix.len()..];
    let digits = after_prefix
        .iter()
        .take_while(|b| b.is_ascii_digit())
        .count();
    if digits == 0 {
        return if after_prefix.is_empty() {
            TemplateOutcome::Partial
        } else {
            TemplateOutcome::Fail {
                deep: Some(format!(
                    "tag {} requires a decimal id",
                    tpl.render_symbolic("i")
                )),
            }
        };
    }
    if digits > MAX_ID_DIGITS {
        return TemplateOutcome::Fail {
            deep: Some("tag id has too many digits".into()),
        };
    }
    if digits == after_prefix.len() {
        // digits may continue, or the suffix may begin, in later chunks
        return TemplateOutcome::Partial;
    }
    let suffix = tpl.suffix().as_bytes();
    let after_digits = &after_prefix[digits..];
    if after_digits.len() < suffix.len() {
        return if suffix.starts_with(after_digits) {
            TemplateOutcome::Partial
        } else {
            TemplateOutcome::Fail {
                deep: Some(format!(
                    "malformed tag after id in {}",
                    tpl.render_symbolic("i")
                )),
            }
        };
    }
    if !after_digits.starts_with(suffix) {
        return TemplateOutcome::Fail {
            deep: Some(format!(
                "malformed tag after id in {}",
                tpl.render_symbolic("i")
            )),
        };
    }
    let digit_str = &rest[prefix.len()..prefix.len() + digits];
    let value: u64 = digit_str.parse().unwrap_or(u64::MAX);
    if value == 0 || value > u64::from(max_id) {
        return TemplateOutcome::Fail {
            deep: Some(format!("tag id {} out of range 1..={}", digit_str, max_id)),
        };
    }
    TemplateOutcome::Complete {
        id: Some(value as u32),
        len: prefix.len() + digits + suffix.len(),
    }
}

/// Scans a complete text in one shot.
pub fn scan_text(text: &str, role: Role, syntax: &TagSyntax) -> Vec<ProtocolEvent> {
    let mut scanner = StreamScanner::new(role, syntax);
    let mut events = scanner.feed(text);
    events.extend(scanner.finish());
    events
}

#[cfg(test)]
mod tests {
    use super::*;

    fn syn() -> TagSyntax {
        TagSyntax::default()
    }

    fn kinds(events: &[ProtocolEvent]) -> Vec<(EventKind, Option<u32>, &str)> {
        events
            .iter()
            .map(|e| (e.kind, e.id.map(|i| i.get()), e.text.as_str()))
            .collect()
    }

    #[test]
    fn tag_split_across_chunk_boundary_reassembles() {
        let mut sc = StreamScanner::new(Role::Organizer, &syn());
        let mut events = sc.feed("Let me <FO");
        events.extend(sc.feed("RK-1>try products</FORK-1> next"));
        events.extend(sc.finish());
        assert_eq!(
            kinds(&events),
            vec![
                (EventKind::Think, None, "Let me "),
                (EventKind::ForkOpen, Some(1), "<FORK-1>"),
                (EventKind::Think, None, "try products"),
                (EventKind::ForkClose, Some(1), "</FORK-1>"),
                (EventKind::Think, None, " next"),
            ]
        );
        assert_eq!(events[0].position, 0);
        assert_eq!(events[1].position, 7);
        assert_eq!(events[3].position, 27);
    }

    #[test]
    fn minimal_answer() {
        let events = scan_text("<ANSWER>42</ANSWER>", Role::Organizer, &syn());
        assert_eq!(
            kinds(&events),
            vec![
                (EventKind::AnswerOpen, None, "<ANSWER>"),
                (EventKind::Think, None, "42"),
                (EventKind::AnswerClose, None, "</ANSWER>"),
            ]
        );
    }

    #[test]
    fn join_request_format() {
        let events = scan_text("… <JOIN-2>", Role::Organizer, &syn());
        assert_eq!(
            kinds(&events),
            vec![
                (EventKind::Think, None, "… "),
                (EventKind::JoinRequest, Some(2), "<JOIN-2>"),
            ]
        );
    }

    #[test]
    fn hyphen_free_alias_accepted() {
        let events = scan_text("<FORK3>x</FORK3><JOIN3>", Role::Organizer, &syn());
        assert_eq!(
            kinds(&events),
            vec![
                (EventKind::ForkOpen, Some(3), "<FORK3>"),
                (EventKind::Think, None, "x"),
                (EventKind::ForkClose, Some(3), "</FORK3>"),
                (EventKind::JoinRequest, Some(3), "<JOIN3>"),
            ]
        );
    }

    #[test]
    fn malformed_tag_becomes_think_with_diagnostic() {
        let mut sc = StreamScanner::new(Role::Organizer, &syn());
        let mut events = sc.feed("a <FORK-x> b");
        events.extend(sc.finish());
        assert_eq!(kinds(&events), vec![(EventKind::Think, None, "a <FORK-x> b")]);
        assert_eq!(sc.diagnostics().len(), 1);
        assert_eq!(sc.diagnostics()[0].position, 2);
    }

    #[test]
    fn mismatched_close_id_is_think() {
        let mut sc = StreamScanner::new(Role::Organizer, &syn());
        let mut events = sc.feed("<FORK-1>a</FORK-2>b</FORK-1>");
        events.extend(sc.finish());
        assert_eq!(
            kinds(&events),
            vec![
                (EventKind::ForkOpen, Some(1), "<FORK-1>"),
                (EventKind::Think, None, "a</FORK-2>b"),
                (EventKind::ForkClose, Some(1), "</FORK-1>"),
            ]
        );
        assert!(!sc.diagnostics().is_empty());
    }

    #[test]
    fn id_out_of_range_is_think() {
        let mut s = syn();
        s.max_id = 8;
        let events = scan_text("<FORK-9>x</FORK-9>", Role::Organizer, &s);
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].kind, EventKind::Think);
    }

    #[test]
    fn worker_sees_only_return_tags() {
        let events = scan_text(
            "think <FORK-1> more <RETURN>take</RETURN>",
            Role::Worker,
            &syn(),
        );
        assert_eq!(
            kinds(&events),
            vec![
                (EventKind::Think, None, "think <FORK-1> more "),
                (EventKind::ReturnOpen, None, "<RETURN>"),
                (EventKind::Think, None, "take"),
                (EventKind::ReturnClose, None, "</RETURN>"),
            ]
        );
    }

    #[test]
    fn think_spans_coalesce_across_chunks() {
        let mut sc = StreamScanner::new(Role::Organizer, &syn());
        let mut events = sc.feed("ab");
        events.extend(sc.feed("cd"));
        events.extend(sc.feed("<JOIN-1>"));
        events.extend(sc.finish());
        assert_eq!(
            kinds(&events),
            vec![
                (EventKind::Think, None, "abcd"),
                (EventKind::JoinRequest, Some(1), "<JOIN-1>"),
            ]
        );
    }

    #[test]
    fn partial_tag_at_end_flushes_as_think() {
        let mut sc = StreamScanner::new(Role::Organizer, &syn());
        let mut events = sc.feed("done <FORK-12");
        assert!(events.is_empty());
        events.extend(sc.finish());
        assert_eq!(kinds(&events), vec![(EventKind::Think, None, "done <FORK-12")]);
    }

    #[test]
    fn false_start_does_not_mask_real_tag() {
        let events = scan_text("<FOR<FORK-1>q</FORK-1>", Role::Organizer, &syn());
        assert_eq!(
            kinds(&events),
            vec![
                (EventKind::Think, None, "<FOR"),
                (EventKind::ForkOpen, Some(1), "<FORK-1>"),
                (EventKind::Think, None, "q"),
                (EventKind::ForkClose, Some(1), "</FORK-1>"),
            ]
        );
    }

    #[test]
    fn streaming_equals_one_shot_for_every_split_point() {
        let text = "a <FORK-1>find sums</FORK-1> b <JOIN-1> c <ANSWER>d</ANSWER>";
        let whole = scan_text(text, Role::Organizer, &syn());
        for cut in 0..=text.len() {
            if !text.is_char_boundary(cut) {
                continue;
            }
            let mut sc = StreamScanner::new(Role::Organizer, &syn());
            let mut events = sc.feed(&text[..cut]);
            events.extend(sc.feed(&text[cut..]));
            events.extend(sc.finish());
            assert_eq!(events, whole, "split at {}", cut);
        }
    }
}
