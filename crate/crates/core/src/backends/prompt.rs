//! Prompt assembly for the two roles.
//!
//! Scaffolds carry named slots in braces. The organizer scaffold states the
//! delegation format and the concurrent-subtask cap (capacity − 1); the
//! worker scaffold carries the RETURN instruction block.

use serde::{Deserialize, Serialize};

use super::BackendError;
use crate::protocol::{Role, TagKind, TagSyntax};

/// A role-specific prompt scaffold with `{instruction}`, `{query}` /
/// `{subtask}`, `{capacity_minus_one}` and tag-usage slots.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub role: Role,
    pub scaffold: String,
}

impl PromptTemplate {
    pub fn default_organizer() -> Self {
        PromptTemplate {
            role: Role::Organizer,
            scaffold: "This is main process.\n\n{instruction}\n\nUse {fork_usage} to delegate \
                       work and {join_usage} to wait for results. Integrate these results and \
                       provide final answer with {answer_usage}. Notice that you can have at \
                       most {capacity_minus_one} subtasks running concurrently; any additional \
                       ones must wait until earlier ones finish.\n\n{query}"
                .into(),
        }
    }

    pub fn default_worker() -> Self {
        PromptTemplate {
            role: Role::Worker,
            scaffold: "This is a subprocess.\n\n{instruction}\n\nSubtask: {subtask}\n\nComplete \
                       the subtask and provide results in:\n{return_open}\n(Your short summary \
                       and valid expressions found)\n{return_close}"
                .into(),
        }
    }

    /// Checks the scaffold carries the slots its role requires.
    pub fn validate(&self) -> Result<(), BackendError> {
        let required: &[&str] = match self.role {
            Role::Organizer => &["{fork_usage}", "{join_usage}", "{capacity_minus_one}", "{query}"],
            Role::Worker => &["{subtask}", "{return_open}", "{return_close}"],
        };
        for slot in required {
            if !self.scaffold.contains(slot) {
                return Err(BackendError::MissingSlot(format!(
                    "{:?} scaffold lacks {}",
                    self.role, slot
                )));
            }
        }
        Ok(())
    }
}

/// Templates plus the task instruction shared by every episode of a run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSet {
    pub organizer: PromptTemplate,
    pub worker: PromptTemplate,
    pub instruction: String,
}

impl Default for PromptSet {
    fn default() -> Self {
        PromptSet {
            organizer: PromptTemplate::default_organizer(),
            worker: PromptTemplate::default_worker(),
            instruction: String::new(),
        }
    }
}

impl PromptSet {
    pub fn with_instruction(instruction: impl Into<String>) -> Self {
        PromptSet {
            instruction: instruction.into(),
            ..Default::default()
        }
    }
}

/// Substitutes all slots verbatim. `query_or_subquery` fills `{query}` for
/// the organizer and `{subtask}` for a worker; it must be nonempty.
pub fn assemble_prompt(
    template: &PromptTemplate,
    task_instruction: &str,
    query_or_subquery: &str,
    capacity: u32,
    syntax: &TagSyntax,
) -> Result<String, BackendError> {
    template.validate()?;
    if query_or_subquery.is_empty() {
        return Err(BackendError::MissingSlot(
            match template.role {
                Role::Organizer => "query",
                Role::Worker => "subtask",
            }
            .into(),
        ));
    }
    if capacity < 2 {
        return Err(BackendError::Config(format!(
            "capacity {} leaves no worker slot",
            capacity
        )));
    }
    let fork_usage = format!(
        "{}subtask description{}",
        syntax.canonical(TagKind::ForkOpen).render_symbolic("i"),
        syntax.canonical(TagKind::ForkClose).render_symbolic("i"),
    );
    let join_usage = syntax.canonical(TagKind::JoinOpen).render_symbolic("i");
    let answer_usage = format!(
        "{}your final answer{}",
        syntax.canonical(TagKind::AnswerOpen).render(None),
        syntax.canonical(TagKind::AnswerClose).render(None),
    );
    let text = template
        .scaffold
        .replace("{instruction}", task_instruction)
        .replace("{query}", query_or_subquery)
        .replace("{subtask}", query_or_subquery)
        .replace("{capacity_minus_one}", &(capacity - 1).to_string())
        .replace("{fork_usage}", &fork_usage)
        .replace("{join_usage}", &join_usage)
        .replace("{answer_usage}", &answer_usage)
        .replace("{return_open}", &syntax.canonical(TagKind::ReturnOpen).render(None))
        .replace("{return_close}", &syntax.canonical(TagKind::ReturnClose).render(None));
    Ok(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn organizer_prompt_states_subtask_cap() {
        let text = assemble_prompt(
            &PromptTemplate::default_organizer(),
            "Find four different solutions.",
            "Target: 10. Numbers: 2 3 4 5.",
            2,
            &TagSyntax::default(),
        )
        .unwrap();
        assert!(text.contains("at most 1 subtasks running concurrently"));
        assert!(text.contains("any additional ones must wait"));
        assert!(text.contains("<FORK-i>subtask description</FORK-i>"));
        assert!(text.contains("Target: 10. Numbers: 2 3 4 5."));
    }

    #[test]
    fn worker_prompt_contains_return_scaffold() {
        let text = assemble_prompt(
            &PromptTemplate::default_worker(),
            "Find four different solutions.",
            "explore multiplication-based combinations",
            2,
            &TagSyntax::default(),
        )
        .unwrap();
        assert!(text.contains("Subtask: explore multiplication-based combinations"));
        assert!(text.contains("<RETURN>"));
        assert!(text.contains("</RETURN>"));
    }

    #[test]
    fn empty_query_is_missing_slot() {
        let err = assemble_prompt(
            &PromptTemplate::default_organizer(),
            "inst",
            "",
            2,
            &TagSyntax::default(),
        )
        .unwrap_err();
        assert!(matches!(err, BackendError::MissingSlot(_)));
    }

    #[test]
    fn capacity_four_yields_three_slots() {
        let text = assemble_prompt(
            &PromptTemplate::default_organizer(),
            "",
            "q",
            4,
            &TagSyntax::default(),
        )
        .unwrap();
        assert!(text.contains("at most 3 subtasks"));
    }
}
