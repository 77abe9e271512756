//! Rendered prompts against hand-transcribed golden files, and judge reply
//! parsing against accepted and adversarial first lines.

use std::fs;
use std::path::{Path, PathBuf};

use actiongraph::annotation::{parse_judge_reply, render_conversion_prompt, render_judge_prompt};
use actiongraph::dataset::{RawDataset, TrajectoryDoc};
use actiongraph::{Outcome, TaskSpec};
use serde::Deserialize;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

#[derive(Deserialize)]
struct JudgeCase {
    name: String,
    task: TaskSpec,
    trajectory: TrajectoryDoc,
}

#[derive(Deserialize)]
struct ConversionCase {
    name: String,
    description: String,
    context: String,
    previous: Vec<String>,
}

#[derive(Deserialize)]
struct Cases {
    judge: Vec<JudgeCase>,
    conversion: Vec<ConversionCase>,
}

#[derive(Deserialize)]
struct Replies {
    accept: Vec<String>,
    reject: Vec<String>,
}

fn golden(name: &str) -> String {
    fs::read_to_string(fixtures().join("prompts").join(name)).unwrap()
}

fn cases() -> Cases {
    serde_json::from_str(&fs::read_to_string(fixtures().join("prompts/cases.json")).unwrap())
        .unwrap()
}

#[test]
fn judge_prompts_match_golden_files() {
    for case in cases().judge {
        let raw = RawDataset {
            tasks: vec![(PathBuf::from("task.json"), case.task)],
            trajectories: vec![(PathBuf::from("traj.json"), case.trajectory)],
        };
        let d = raw.into_dataset().unwrap();
        let t = &d.trajectories[0];
        let prompt = render_judge_prompt(&d.tasks[&t.task_id], t);
        assert_eq!(
            prompt.user,
            golden(&format!("{}.user.txt", case.name)),
            "{}",
            case.name
        );
        assert_eq!(prompt.system, golden("judge.system.txt"));
    }
}

#[test]
fn conversion_prompts_match_golden_files() {
    for case in cases().conversion {
        let prompt = render_conversion_prompt(&case.description, &case.context, &case.previous);
        assert_eq!(
            prompt.user,
            golden(&format!("{}.user.txt", case.name)),
            "{}",
            case.name
        );
        assert_eq!(prompt.system, golden("conversion.system.txt"));
    }
}

#[test]
fn empty_history_leaves_the_list_empty() {
    let prompt = render_conversion_prompt("went back", "Browse", &[]);
    assert!(
        prompt
            .user
            .ends_with("Task Context: Browse\n\nPrevious Steps:"),
        "{:?}",
        prompt.user
    );
}

#[test]
fn rendering_is_deterministic() {
    let c = cases();
    let case = &c.conversion[0];
    let a = render_conversion_prompt(&case.description, &case.context, &case.previous);
    let b = render_conversion_prompt(&case.description, &case.context, &case.previous);
    assert_eq!(a, b);
}

#[test]
fn judge_reply_first_line_is_strict() {
    let replies: Replies =
        serde_json::from_str(&fs::read_to_string(fixtures().join("judge_replies.json")).unwrap())
            .unwrap();
    assert_eq!(replies.reject.len(), 20);
    for text in &replies.accept {
        let v = parse_judge_reply(text, None).unwrap_or_else(|e| panic!("{text:?}: {e}"));
        let first = text.lines().map(str::trim).find(|l| !l.is_empty()).unwrap();
        let expected = if first == "SUCCESS" {
            Outcome::Success
        } else {
            Outcome::Failure
        };
        assert_eq!(v.outcome, expected, "{text:?}");
    }
    for text in &replies.reject {
        assert!(parse_judge_reply(text, None).is_err(), "accepted {text:?}");
    }
}
