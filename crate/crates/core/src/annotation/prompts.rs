//! The judge and conversion prompts, rendered from versioned templates.

use super::template::{render, Vars};
use crate::model::{TaskSpec, Trajectory};

pub const PROMPT_VERSION: &str = "v1";

pub const JUDGE_SYSTEM: &str = include_str!("../../prompts/judge_system.v1.txt");
pub const JUDGE_USER: &str = include_str!("../../prompts/judge_user.v1.txt");
pub const CONVERSION_SYSTEM: &str = include_str!("../../prompts/conversion_system.v1.txt");
pub const CONVERSION_USER: &str = include_str!("../../prompts/conversion_user.v1.txt");

/// A rendered system/user pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub system: String,
    pub user: String,
}

fn expect_rendered(template: &str, vars: &Vars) -> String {
    render(template, vars).expect("bundled templates bind every placeholder")
}

/// Action lines `{i}. {call} (at {url})`, numbered from 1.
pub fn action_lines(traj: &Trajectory) -> Vec<String> {
    traj.actions
        .iter()
        .enumerate()
        .map(|(i, a)| format!("{}. {} (at {})", i + 1, a.canonical_string(), a.source_url))
        .collect()
}

pub fn render_judge_prompt(task: &TaskSpec, traj: &Trajectory) -> Prompt {
    let r = &task.reference;
    let mut vars = Vars::new();
    vars.set("intent", task.intent.clone())
        .flag("has_reference", !r.is_empty())
        .flag("has_exact", r.exact().is_some())
        .flag("has_must", !r.must_include.is_empty())
        .flag("has_fuzzy", !r.fuzzy_match.is_empty())
        .set("exact_match", r.exact().unwrap_or_default())
        .set("must_include_items", r.must_include.join(", "))
        .set("fuzzy_match_items", r.fuzzy_match.join(", "))
        .set("final_message", traj.final_text())
        .set("variant", if r.is_empty() { "without" } else { "with" })
        .list("actions", action_lines(traj));
    Prompt {
        system: expect_rendered(JUDGE_SYSTEM, &Vars::new()),
        user: expect_rendered(JUDGE_USER, &vars),
    }
}

pub fn render_conversion_prompt(
    description: &str,
    task_context: &str,
    previous: &[String],
) -> Prompt {
    let mut vars = Vars::new();
    vars.set("action", description)
        .set("task_description", task_context)
        .list(
            "previous_steps",
            previous
                .iter()
                .enumerate()
                .map(|(k, p)| format!("- [step {k}] {p}"))
                .collect(),
        );
    Prompt {
        system: expect_rendered(CONVERSION_SYSTEM, &Vars::new()),
        user: expect_rendered(CONVERSION_USER, &vars),
    }
}
