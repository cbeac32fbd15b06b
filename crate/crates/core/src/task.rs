//! Manual tasks, their steps, ingestion from task files, dataset filtering and
//! context windows.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::Caption;
use crate::text;

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("malformed task file: field `{field}`: {message}")]
    Parse { field: String, message: String },
    #[error("invalid task `{id}`: {message}")]
    Validation { id: String, message: String },
    #[error("step index {index} out of range 1..={len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("context window for step {step} needs the caption of step {missing}")]
    MissingCaption { step: usize, missing: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Recipes,
    Diy,
}

/// One instruction of a manual task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    /// 1-based position within the task.
    pub index: usize,
    pub text: String,
    /// Reference to the ground-truth illustration, when the source task has one.
    #[serde(default, rename = "image", skip_serializing_if = "Option::is_none")]
    pub ground_truth_image: Option<String>,
}

/// A titled task with an ordered list of steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManualTask {
    pub id: String,
    pub domain: Domain,
    pub title: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub resources: Vec<String>,
    pub steps: Vec<Step>,
}

impl ManualTask {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Step by 1-based index.
    pub fn step(&self, index: usize) -> Result<&Step, TaskError> {
        if index == 0 || index > self.steps.len() {
            return Err(TaskError::IndexOutOfRange { index, len: self.steps.len() });
        }
        Ok(&self.steps[index - 1])
    }

    /// Checks the structural invariants: non-empty, contiguous 1-based
    /// indices and non-blank step text.
    pub fn validate(&self) -> Result<(), TaskError> {
        let invalid = |message: String| TaskError::Validation { id: self.id.clone(), message };
        if self.steps.is_empty() {
            return Err(invalid("task has no steps".into()));
        }
        for (pos, step) in self.steps.iter().enumerate() {
            if step.index != pos + 1 {
                return Err(invalid(format!(
                    "step indices must be contiguous from 1; found {} at position {}",
                    step.index,
                    pos + 1
                )));
            }
            if step.text.trim().is_empty() {
                return Err(invalid(format!("step {} has empty text", step.index)));
            }
        }
        Ok(())
    }

    fn reindex(&mut self) {
        for (pos, step) in self.steps.iter_mut().enumerate() {
            step.index = pos + 1;
        }
    }
}

// Wire form of a task file. Kept separate so missing or mistyped fields are
// reported by name.
#[derive(Deserialize)]
struct RawTask {
    id: Option<serde_json::Value>,
    domain: Option<serde_json::Value>,
    title: Option<serde_json::Value>,
    description: Option<serde_json::Value>,
    resources: Option<serde_json::Value>,
    steps: Option<serde_json::Value>,
}

fn field_err(field: impl Into<String>, message: impl Into<String>) -> TaskError {
    TaskError::Parse { field: field.into(), message: message.into() }
}

fn required_str(value: Option<serde_json::Value>, field: &str) -> Result<String, TaskError> {
    match value {
        Some(serde_json::Value::String(s)) => Ok(s),
        Some(other) => Err(field_err(field, format!("expected a string, found {other}"))),
        None => Err(field_err(field, "missing")),
    }
}

/// Parses one task file (UTF-8 JSON). Steps keep file order and are assigned
/// indices `1..=n`.
pub fn parse_task(raw: &[u8]) -> Result<ManualTask, TaskError> {
    let text = std::str::from_utf8(raw).map_err(|e| field_err("<document>", e.to_string()))?;
    let doc: RawTask =
        serde_json::from_str(text).map_err(|e| field_err("<document>", e.to_string()))?;

    let id = required_str(doc.id, "id")?;
    let domain: Domain = match doc.domain {
        Some(v) => serde_json::from_value(v).map_err(|e| field_err("domain", e.to_string()))?,
        None => return Err(field_err("domain", "missing")),
    };
    let title = required_str(doc.title, "title")?;
    let description = match doc.description {
        None | Some(serde_json::Value::Null) => String::new(),
        v => required_str(v, "description")?,
    };
    let resources: Vec<String> = match doc.resources {
        None | Some(serde_json::Value::Null) => Vec::new(),
        Some(v) => serde_json::from_value(v).map_err(|e| field_err("resources", e.to_string()))?,
    };
    let raw_steps = match doc.steps {
        Some(serde_json::Value::Array(a)) => a,
        Some(other) => return Err(field_err("steps", format!("expected an array, found {other}"))),
        None => return Err(field_err("steps", "missing")),
    };

    let mut steps = Vec::with_capacity(raw_steps.len());
    for (pos, s) in raw_steps.into_iter().enumerate() {
        let obj = s
            .as_object()
            .ok_or_else(|| field_err(format!("steps[{pos}]"), "expected an object"))?;
        let text = match obj.get("text") {
            Some(serde_json::Value::String(t)) => t.clone(),
            Some(_) => return Err(field_err(format!("steps[{pos}].text"), "expected a string")),
            None => return Err(field_err(format!("steps[{pos}].text"), "missing")),
        };
        if let Some(idx) = obj.get("index") {
            if !idx.is_u64() {
                return Err(field_err(format!("steps[{pos}].index"), "expected a positive integer"));
            }
        }
        let image = match obj.get("image") {
            None | Some(serde_json::Value::Null) => None,
            Some(serde_json::Value::String(p)) => Some(p.clone()),
            Some(_) => return Err(field_err(format!("steps[{pos}].image"), "expected a string")),
        };
        steps.push(Step { index: pos + 1, text, ground_truth_image: image });
    }

    let task = ManualTask { id, domain, title, description, resources, steps };
    task.validate()?;
    Ok(task)
}

/// Serializes a task in the task-file schema.
pub fn to_task_file(task: &ManualTask) -> String {
    serde_json::to_string_pretty(task).expect("task serializes")
}

/// Counts tokens the way the conditioning text encoder would.
pub trait TokenCounter {
    fn count(&self, text: &str) -> usize;
}

/// Whitespace tokenizer.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokenizer;

impl TokenCounter for WhitespaceTokenizer {
    fn count(&self, text: &str) -> usize {
        text.split_whitespace().count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterPolicy {
    pub min_steps: usize,
    pub max_steps: usize,
    pub max_step_tokens: usize,
    /// Case-insensitive patterns; a step whose normalized text equals one of
    /// them is treated as a non-action step.
    pub non_action_patterns: Vec<String>,
}

impl Default for FilterPolicy {
    fn default() -> Self {
        Self {
            min_steps: 4,
            max_steps: 6,
            max_step_tokens: 77,
            non_action_patterns: vec!["enjoy".into(), "serve and enjoy".into()],
        }
    }
}

impl FilterPolicy {
    pub fn validate(&self) -> Result<(), String> {
        if self.min_steps > self.max_steps {
            return Err(format!(
                "min_steps ({}) exceeds max_steps ({})",
                self.min_steps, self.max_steps
            ));
        }
        if self.max_step_tokens == 0 {
            return Err("max_step_tokens must be positive".into());
        }
        Ok(())
    }

    /// A step is non-action when its normalized text matches a pattern, or
    /// when it contains no alphabetic token.
    pub fn is_non_action(&self, text: &str) -> bool {
        let toks = text::tokens(text);
        let normalized = toks.join(" ");
        if self.non_action_patterns.iter().any(|p| text::tokens(p).join(" ") == normalized) {
            return true;
        }
        !toks.iter().any(|t| t.chars().any(char::is_alphabetic))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionReason {
    TooFewSteps,
    TooManySteps,
    StepTooLong,
}

impl fmt::Display for ExclusionReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::TooFewSteps => "too_few_steps",
            Self::TooManySteps => "too_many_steps",
            Self::StepTooLong => "step_too_long",
        })
    }
}

/// One line of the exclusion report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub id: String,
    pub reason: ExclusionReason,
}

#[derive(Debug, Clone, Default)]
pub struct FilterOutcome {
    pub kept: Vec<ManualTask>,
    pub excluded: Vec<Exclusion>,
    /// (task id, removed step text) for every dropped non-action step.
    pub removed_steps: Vec<(String, String)>,
}

/// Applies the dataset rules: non-action steps are dropped first, then tasks
/// outside the step-count bounds or with an over-long step are excluded.
pub fn filter_tasks(
    tasks: &[ManualTask],
    policy: &FilterPolicy,
    tokenizer: &dyn TokenCounter,
) -> FilterOutcome {
    let mut out = FilterOutcome::default();
    for task in tasks {
        let mut task = task.clone();
        task.steps.retain(|s| {
            let drop = policy.is_non_action(&s.text);
            if drop {
                out.removed_steps.push((task.id.clone(), s.text.clone()));
            }
            !drop
        });
        task.reindex();

        let reason = if task.len() < policy.min_steps {
            Some(ExclusionReason::TooFewSteps)
        } else if task.len() > policy.max_steps {
            Some(ExclusionReason::TooManySteps)
        } else if task.steps.iter().any(|s| tokenizer.count(&s.text) > policy.max_step_tokens) {
            Some(ExclusionReason::StepTooLong)
        } else {
            None
        };
        match reason {
            Some(reason) => out.excluded.push(Exclusion { id: task.id.clone(), reason }),
            None => {
                debug_assert!(task.validate().is_ok());
                out.kept.push(task);
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowMode {
    StepsOnly,
    /// The oldest slot of the window holds a caption instead of a step.
    StepsAndCaptions,
}

/// A predecessor inside a context window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ContextItem {
    Step(Step),
    Caption(Caption),
}

impl ContextItem {
    pub fn index(&self) -> usize {
        match self {
            Self::Step(s) => s.index,
            Self::Caption(c) => c.step_index,
        }
    }

    pub fn text(&self) -> &str {
        match self {
            Self::Step(s) => &s.text,
            Self::Caption(c) => &c.text,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextWindow {
    pub target: Step,
    /// Most recent first.
    pub predecessors: Vec<ContextItem>,
    pub width: usize,
}

impl ContextWindow {
    /// Predecessors oldest first.
    pub fn chronological(&self) -> impl Iterator<Item = &ContextItem> {
        self.predecessors.iter().rev()
    }
}

/// Builds `{s_i; s_{i-1} .. s_{i-w}}`, truncated at the start of the task.
///
/// In [`WindowMode::StepsAndCaptions`] the slot at distance `width` is filled
/// with that step's caption, giving `{s_i, c_{i-1}}` for width 1 and
/// `{s_i, s_{i-1}, c_{i-2}}` for width 2. When truncation removes that slot,
/// the window holds steps only.
pub fn build_context_window(
    task: &ManualTask,
    i: usize,
    width: usize,
    mode: WindowMode,
    captions: &[Caption],
) -> Result<ContextWindow, TaskError> {
    let target = task.step(i)?.clone();
    let mut predecessors = Vec::with_capacity(width);
    for back in 1..=width {
        if back >= i {
            break;
        }
        let j = i - back;
        let item = if mode == WindowMode::StepsAndCaptions && back == width {
            let caption = captions
                .iter()
                .find(|c| c.step_index == j)
                .ok_or(TaskError::MissingCaption { step: i, missing: j })?;
            ContextItem::Caption(caption.clone())
        } else {
            ContextItem::Step(task.step(j)?.clone())
        };
        predecessors.push(item);
    }
    Ok(ContextWindow { target, predecessors, width })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::{CaptionProvenance, CaptionStyle};

    pub(crate) fn task_with(id: &str, steps: &[&str]) -> ManualTask {
        ManualTask {
            id: id.into(),
            domain: Domain::Recipes,
            title: id.into(),
            description: String::new(),
            resources: vec![],
            steps: steps
                .iter()
                .enumerate()
                .map(|(k, t)| Step { index: k + 1, text: t.to_string(), ground_truth_image: None })
                .collect(),
        }
    }

    fn caption(i: usize) -> Caption {
        Caption {
            step_index: i,
            text: format!("caption {i}"),
            style: CaptionStyle::Short,
            provenance: CaptionProvenance::Stub,
        }
    }

    #[test]
    fn parse_assigns_indices_in_file_order() {
        let raw = br#"{"id":"t1","domain":"recipes","title":"Beef Stew","description":"",
            "resources":["beef"],"steps":[{"index":9,"text":"Brown the beef."},{"text":"Add carrots."},
            {"text":"Pour stock."},{"text":"Simmer."},{"text":"Season the stew.","image":"s5.jpg"}]}"#;
        let t = parse_task(raw).unwrap();
        assert_eq!(t.title, "Beef Stew");
        assert_eq!(t.len(), 5);
        assert_eq!(t.steps.iter().map(|s| s.index).collect::<Vec<_>>(), vec![1, 2, 3, 4, 5]);
        assert_eq!(t.steps[4].ground_truth_image.as_deref(), Some("s5.jpg"));
    }

    #[test]
    fn parse_rejects_empty_steps() {
        let raw = br#"{"id":"t","domain":"diy","title":"x","steps":[]}"#;
        assert!(matches!(parse_task(raw), Err(TaskError::Validation { .. })));
    }

    #[test]
    fn parse_names_offending_field() {
        let raw = br#"{"id":"t","domain":"baking","title":"x","steps":[{"text":"a"}]}"#;
        match parse_task(raw) {
            Err(TaskError::Parse { field, .. }) => assert_eq!(field, "domain"),
            other => panic!("unexpected {other:?}"),
        }
        let raw = br#"{"id":"t","domain":"diy","title":"x","steps":[{"text":3}]}"#;
        match parse_task(raw) {
            Err(TaskError::Parse { field, .. }) => assert_eq!(field, "steps[0].text"),
            other => panic!("unexpected {other:?}"),
        }
        let raw = br#"{"domain":"diy","title":"x","steps":[]}"#;
        match parse_task(raw) {
            Err(TaskError::Parse { field, .. }) => assert_eq!(field, "id"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn parse_rejects_blank_step() {
        let raw = br#"{"id":"t","domain":"diy","title":"x","steps":[{"text":"   "}]}"#;
        assert!(matches!(parse_task(raw), Err(TaskError::Validation { .. })));
    }

    #[test]
    fn task_file_round_trips() {
        let t = task_with("rt", &["Chop onions.", "Fry onions."]);
        assert_eq!(parse_task(to_task_file(&t).as_bytes()).unwrap(), t);
    }

    #[test]
    fn seven_steps_excluded() {
        let t = task_with("seven", &["Chop it.", "Fry it.", "Mix it.", "Bake it.", "Cool it.", "Cut it.", "Wrap it."]);
        let out = filter_tasks(&[t], &FilterPolicy::default(), &WhitespaceTokenizer);
        assert!(out.kept.is_empty());
        assert_eq!(out.excluded[0].reason, ExclusionReason::TooManySteps);
    }

    #[test]
    fn enjoy_step_removed_and_task_kept() {
        let t = task_with("enjoy", &["Chop onions.", "Fry onions.", "Add rice.", "Stir well.", "Enjoy!"]);
        let out = filter_tasks(&[t], &FilterPolicy::default(), &WhitespaceTokenizer);
        assert_eq!(out.kept.len(), 1);
        assert_eq!(out.kept[0].len(), 4);
        assert_eq!(out.removed_steps, vec![("enjoy".to_string(), "Enjoy!".to_string())]);
        out.kept[0].validate().unwrap();
    }

    #[test]
    fn long_step_excluded() {
        let long = vec!["word"; 90].join(" ");
        let t = task_with("long", &["Chop onions.", &long, "Add rice.", "Stir well."]);
        let out = filter_tasks(&[t], &FilterPolicy::default(), &WhitespaceTokenizer);
        assert_eq!(out.excluded, vec![Exclusion { id: "long".into(), reason: ExclusionReason::StepTooLong }]);
    }

    #[test]
    fn serve_and_enjoy_is_non_action() {
        let p = FilterPolicy::default();
        assert!(p.is_non_action("Serve and enjoy."));
        assert!(p.is_non_action("ENJOY"));
        assert!(!p.is_non_action("Serve the soup with bread."));
    }

    #[test]
    fn window_at_sequence_start_is_empty() {
        let t = task_with("w", &["a1", "a2", "a3", "a4"]);
        let w = build_context_window(&t, 1, 2, WindowMode::StepsOnly, &[]).unwrap();
        assert!(w.predecessors.is_empty());
    }

    #[test]
    fn steps_only_window_is_most_recent_first() {
        let t = task_with("w", &["a1", "a2", "a3", "a4"]);
        let w = build_context_window(&t, 4, 2, WindowMode::StepsOnly, &[]).unwrap();
        let idx: Vec<usize> = w.predecessors.iter().map(ContextItem::index).collect();
        assert_eq!(idx, vec![3, 2]);
        assert!(w.predecessors.iter().all(|p| matches!(p, ContextItem::Step(_))));
    }

    #[test]
    fn steps_and_captions_window_layout() {
        let t = task_with("w", &["a1", "a2", "a3", "a4"]);
        let caps = vec![caption(1), caption(2)];
        let w = build_context_window(&t, 3, 2, WindowMode::StepsAndCaptions, &caps).unwrap();
        assert_eq!(w.target.index, 3);
        assert!(matches!(&w.predecessors[0], ContextItem::Step(s) if s.index == 2));
        assert!(matches!(&w.predecessors[1], ContextItem::Caption(c) if c.step_index == 1));

        let w1 = build_context_window(&t, 3, 1, WindowMode::StepsAndCaptions, &caps).unwrap();
        assert!(matches!(&w1.predecessors[..], [ContextItem::Caption(c)] if c.step_index == 2));
    }

    #[test]
    fn window_errors() {
        let t = task_with("w", &["a1", "a2", "a3"]);
        assert!(matches!(
            build_context_window(&t, 4, 1, WindowMode::StepsOnly, &[]),
            Err(TaskError::IndexOutOfRange { index: 4, len: 3 })
        ));
        assert!(matches!(
            build_context_window(&t, 3, 1, WindowMode::StepsAndCaptions, &[]),
            Err(TaskError::MissingCaption { step: 3, missing: 2 })
        ));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_task() -> impl Strategy<Value = ManualTask> {
            let step = prop_oneof![
                Just("Enjoy!".to_string()),
                Just("Serve and enjoy".to_string()),
                "[a-z]{3,8}( [a-z]{3,8}){0,12}",
            ];
            prop::collection::vec(step, 1..10).prop_map(|steps| {
                let refs: Vec<&str> = steps.iter().map(String::as_str).collect();
                task_with("p", &refs)
            })
        }

        proptest! {
            #[test]
            fn filter_is_idempotent(tasks in prop::collection::vec(arb_task(), 0..6), max_tok in 3usize..12) {
                let policy = FilterPolicy { max_step_tokens: max_tok, ..FilterPolicy::default() };
                let once = filter_tasks(&tasks, &policy, &WhitespaceTokenizer).kept;
                let twice = filter_tasks(&once, &policy, &WhitespaceTokenizer).kept;
                prop_assert_eq!(&once, &twice);
                for t in &once {
                    prop_assert!((4..=6).contains(&t.len()));
                    prop_assert!(t.steps.iter().all(|s| WhitespaceTokenizer.count(&s.text) <= max_tok));
                    prop_assert!(t.validate().is_ok());
                }
            }

            #[test]
            fn window_never_reaches_target(n in 1usize..8, w in 0usize..5, pick in 0usize..8) {
                let steps: Vec<String> = (1..=n).map(|k| format!("step {k}")).collect();
                let refs: Vec<&str> = steps.iter().map(String::as_str).collect();
                let t = task_with("p", &refs);
                let i = pick % n + 1;
                let caps: Vec<Caption> = (1..=n).map(caption).collect();
                for mode in [WindowMode::StepsOnly, WindowMode::StepsAndCaptions] {
                    let win = build_context_window(&t, i, w, mode, &caps).unwrap();
                    prop_assert!(win.predecessors.len() <= w);
                    prop_assert!(win.predecessors.iter().all(|p| p.index() < i));
                }
            }
        }
    }
}
