//! Tag grammar of the organizer-worker protocol.
//!
//! The canonical syntax is `<FORK-i>…</FORK-i>`, `<JOIN-i>` (closed by
//! `</JOIN-i>` after the merge), `<RETURN>…</RETURN>` and
//! `<ANSWER>…</ANSWER>`. Hyphen-free spellings (`<FORKi>`) are accepted as
//! aliases so prompts written either way parse identically.

use serde::{Deserialize, Serialize};
use std::fmt;

use super::ProtocolError;

/// Default upper bound on sub-query identifiers.
pub const DEFAULT_MAX_ID: u32 = 64;

/// One literal tag pattern with an optional decimal id slot, e.g.
/// `<FORK-{id}>`. The id slot accepts decimal digits only.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagTemplate {
    prefix: String,
    suffix: String,
    has_id: bool,
}

impl TagTemplate {
    /// Parses a pattern string; `{id}` marks the id slot.
    pub fn parse(pattern: &str) -> Result<Self, ProtocolError> {
        if pattern.is_empty() {
            return Err(ProtocolError::BadSyntaxPattern {
                pattern: pattern.to_string(),
                reason: "empty pattern".into(),
            });
        }
        match pattern.find("{id}") {
            Some(at) => {
                let prefix = &pattern[..at];
                let suffix = &pattern[at + 4..];
                if prefix.is_empty() {
                    return Err(ProtocolError::BadSyntaxPattern {
                        pattern: pattern.to_string(),
                        reason: "id slot must follow a literal prefix".into(),
                    });
                }
                if suffix.contains("{id}") {
                    return Err(ProtocolError::BadSyntaxPattern {
                        pattern: pattern.to_string(),
                        reason: "at most one id slot".into(),
                    });
                }
                Ok(Self {
                    prefix: prefix.to_string(),
                    suffix: suffix.to_string(),
                    has_id: true,
                })
            }
            None => Ok(Self {
                prefix: pattern.to_string(),
                suffix: String::new(),
                has_id: false,
            }),
        }
    }

    pub fn has_id(&self) -> bool {
        self.has_id
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn suffix(&self) -> &str {
        &self.suffix
    }

    /// Expands the template; `id` is required iff the template has a slot.
    pub fn render(&self, id: Option<u32>) -> String {
        match (self.has_id, id) {
            (true, Some(i)) => format!("{}{}{}", self.prefix, i, self.suffix),
            (false, _) => self.prefix.clone(),
            (true, None) => format!("{}{{id}}{}", self.prefix, self.suffix),
        }
    }

    /// Renders with a symbolic id (`<FORK-i>`), used in prompt scaffolds.
    pub fn render_symbolic(&self, symbol: &str) -> String {
        if self.has_id {
            format!("{}{}{}", self.prefix, symbol, self.suffix)
        } else {
            self.prefix.clone()
        }
    }

    fn pattern_string(&self) -> String {
        if self.has_id {
            format!("{}{{id}}{}", self.prefix, self.suffix)
        } else {
            self.prefix.clone()
        }
    }
}

impl fmt::Display for TagTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.pattern_string())
    }
}

impl Serialize for TagTemplate {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.pattern_string())
    }
}

impl<'de> Deserialize<'de> for TagTemplate {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        TagTemplate::parse(&raw).map_err(serde::de::Error::custom)
    }
}

/// Which protocol tag a template belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TagKind {
    ForkOpen,
    ForkClose,
    JoinOpen,
    JoinClose,
    ReturnOpen,
    ReturnClose,
    AnswerOpen,
    AnswerClose,
}

impl TagKind {
    pub const ALL: [TagKind; 8] = [
        TagKind::ForkOpen,
        TagKind::ForkClose,
        TagKind::JoinOpen,
        TagKind::JoinClose,
        TagKind::ReturnOpen,
        TagKind::ReturnClose,
        TagKind::AnswerOpen,
        TagKind::AnswerClose,
    ];

    pub fn key(&self) -> &'static str {
        match self {
            TagKind::ForkOpen => "fork_open",
            TagKind::ForkClose => "fork_close",
            TagKind::JoinOpen => "join_open",
            TagKind::JoinClose => "join_close",
            TagKind::ReturnOpen => "return_open",
            TagKind::ReturnClose => "return_close",
            TagKind::AnswerOpen => "answer_open",
            TagKind::AnswerClose => "answer_close",
        }
    }

    fn from_key(key: &str) -> Option<TagKind> {
        TagKind::ALL.iter().copied().find(|k| k.key() == key)
    }
}

/// The full tag grammar: for each tag kind a canonical template (first entry)
/// plus any accepted aliases, and the sub-query id bound.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagSyntax {
    pub fork_open: Vec<TagTemplate>,
    pub fork_close: Vec<TagTemplate>,
    pub join_open: Vec<TagTemplate>,
    pub join_close: Vec<TagTemplate>,
    pub return_open: Vec<TagTemplate>,
    pub return_close: Vec<TagTemplate>,
    pub answer_open: Vec<TagTemplate>,
    pub answer_close: Vec<TagTemplate>,
    #[serde(default = "default_max_id")]
    pub max_id: u32,
}

fn default_max_id() -> u32 {
    DEFAULT_MAX_ID
}

impl Default for TagSyntax {
    fn default() -> Self {
        let t = |p: &str| TagTemplate::parse(p).expect("builtin pattern");
        TagSyntax {
            fork_open: vec![t("<FORK-{id}>"), t("<FORK{id}>")],
            fork_close: vec![t("</FORK-{id}>"), t("</FORK{id}>")],
            join_open: vec![t("<JOIN-{id}>"), t("<JOIN{id}>")],
            join_close: vec![t("</JOIN-{id}>"), t("</JOIN{id}>")],
            return_open: vec![t("<RETURN>")],
            return_close: vec![t("</RETURN>")],
            answer_open: vec![t("<ANSWER>")],
            answer_close: vec![t("</ANSWER>")],
            max_id: DEFAULT_MAX_ID,
        }
    }
}

impl TagSyntax {
    pub fn templates(&self, kind: TagKind) -> &[TagTemplate] {
        match kind {
            TagKind::ForkOpen => &self.fork_open,
            TagKind::ForkClose => &self.fork_close,
            TagKind::JoinOpen => &self.join_open,
            TagKind::JoinClose => &self.join_close,
            TagKind::ReturnOpen => &self.return_open,
            TagKind::ReturnClose => &self.return_close,
            TagKind::AnswerOpen => &self.answer_open,
            TagKind::AnswerClose => &self.answer_close,
        }
    }

    /// The canonical (rendering) template for a tag kind.
    pub fn canonical(&self, kind: TagKind) -> &TagTemplate {
        &self.templates(kind)[0]
    }

    /// Checks the grammar invariants: every kind has at least one template,
    /// id slots appear exactly on fork/join tags, and all patterns are
    /// distinct literals.
    pub fn validate(&self) -> Result<(), ProtocolError> {
        let mut seen = Vec::new();
        for kind in TagKind::ALL {
            let templates = self.templates(kind);
            if templates.is_empty() {
                return Err(ProtocolError::BadSyntaxPattern {
                    pattern: kind.key().to_string(),
                    reason: "no template configured".into(),
                });
            }
            let wants_id = matches!(
                kind,
                TagKind::ForkOpen | TagKind::ForkClose | TagKind::JoinOpen | TagKind::JoinClose
            );
            for tpl in templates {
                if tpl.has_id() != wants_id {
                    return Err(ProtocolError::BadSyntaxPattern {
                        pattern: tpl.pattern_string(),
                        reason: format!(
                            "{} templates must{} carry an id slot",
                            kind.key(),
                            if wants_id { "" } else { " not" }
                        ),
                    });
                }
                let repr = tpl.pattern_string();
                if seen.contains(&repr) {
                    return Err(ProtocolError::BadSyntaxPattern {
                        pattern: repr,
                        reason: "duplicate pattern across tag kinds".into(),
                    });
                }
                seen.push(repr);
            }
        }
        if self.max_id == 0 {
            return Err(ProtocolError::BadSyntaxPattern {
                pattern: "max_id".into(),
                reason: "max_id must be at least 1".into(),
            });
        }
        Ok(())
    }

    /// Loads a syntax from key-value text (`key = pattern`, one per line,
    /// `#` comments). The first occurrence of a key is the canonical form;
    /// repeated keys add aliases. Keys missing from the file keep defaults.
    pub fn from_kv_text(text: &str) -> Result<Self, ProtocolError> {
        let mut syntax = TagSyntax::default();
        let mut touched: Vec<TagKind> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ProtocolError::BadSyntaxPattern {
                pattern: raw.to_string(),
                reason: format!("line {}: expected key = value", lineno + 1),
            })?;
            let key = key.trim();
            let value = value.trim();
            if key == "max_id" {
                syntax.max_id = value.parse().map_err(|_| ProtocolError::BadSyntaxPattern {
                    pattern: value.to_string(),
                    reason: "max_id must be a positive integer".into(),
                })?;
                continue;
            }
            let kind = TagKind::from_key(key).ok_or_else(|| ProtocolError::BadSyntaxPattern {
                pattern: key.to_string(),
                reason: format!("line {}: unknown key", lineno + 1),
            })?;
            let template = TagTemplate::parse(value)?;
            let slot = match kind {
                TagKind::ForkOpen => &mut syntax.fork_open,
                TagKind::ForkClose => &mut syntax.fork_close,
                TagKind::JoinOpen => &mut syntax.join_open,
                TagKind::JoinClose => &mut syntax.join_close,
                TagKind::ReturnOpen => &mut syntax.return_open,
                TagKind::ReturnClose => &mut syntax.return_close,
                TagKind::AnswerOpen => &mut syntax.answer_open,
                TagKind::AnswerClose => &mut syntax.answer_close,
            };
            if touched.contains(&kind) {
                slot.push(template);
            } else {
                *slot = vec![template];
                touched.push(kind);
            }
        }
        syntax.validate()?;
        Ok(syntax)
    }

    pub fn from_kv_file(path: &std::path::Path) -> Result<Self, ProtocolError> {
        let text = std::fs::read_to_string(path).map_err(|e| ProtocolError::BadSyntaxPattern {
            pattern: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::from_kv_text(&text)
    }
}
