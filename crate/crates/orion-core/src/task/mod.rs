//! Structured retrieval tasks. Each example pairs a rendered prompt with an
//! abstract annotation: a context table plus a request of the form
//! `SELECT target_attr WHERE filter_attr = filter_value`, whose answer is the
//! example's label token.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{OrionError, Result};
use crate::tokenizer::Vocabulary;

pub(crate) mod generate;

pub use generate::{
    bank_single_token_words, factual_group, filter_factual_entities, generate_task, FactualEntity,
    FactualGroup,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    QaBase,
    QaUniformPrefix,
    QaQuestionFirst,
    QaMixed,
    Translation,
    FactualRecall,
    VariableBinding,
    Induction,
    TypeHint,
}

impl TaskKind {
    pub const ALL: [TaskKind; 9] = [
        TaskKind::QaBase,
        TaskKind::QaUniformPrefix,
        TaskKind::QaQuestionFirst,
        TaskKind::QaMixed,
        TaskKind::Translation,
        TaskKind::FactualRecall,
        TaskKind::VariableBinding,
        TaskKind::Induction,
        TaskKind::TypeHint,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::QaBase => "qa_base",
            TaskKind::QaUniformPrefix => "qa_uniform_prefix",
            TaskKind::QaQuestionFirst => "qa_question_first",
            TaskKind::QaMixed => "qa_mixed",
            TaskKind::Translation => "translation",
            TaskKind::FactualRecall => "factual_recall",
            TaskKind::VariableBinding => "variable_binding",
            TaskKind::Induction => "induction",
            TaskKind::TypeHint => "type_hint",
        }
    }

    pub fn parse(s: &str) -> Option<TaskKind> {
        TaskKind::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

impl core::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Table of attribute records. Values are stored exactly as they surface in
/// the prompt (answer styling included), so request evaluation yields label
/// tokens directly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextTable {
    pub schema: Vec<String>,
    pub rows: Vec<BTreeMap<String, String>>,
}

impl ContextTable {
    pub fn new(schema: Vec<String>, rows: Vec<BTreeMap<String, String>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(OrionError::Task("context table needs at least one row".into()));
        }
        for row in &rows {
            if row.len() != schema.len() || !schema.iter().all(|a| row.contains_key(a)) {
                return Err(OrionError::Task(format!(
                    "row {row:?} does not match schema {:?}",
                    schema
                )));
            }
        }
        Ok(Self { schema, rows })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Request {
    pub target_attr: String,
    pub filter_attr: String,
    pub filter_value: String,
}

impl Request {
    pub fn new(target: &str, filter: &str, value: &str) -> Self {
        Self {
            target_attr: target.into(),
            filter_attr: filter.into(),
            filter_value: value.into(),
        }
    }
}

impl core::fmt::Display for Request {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(
            f,
            "SELECT {} WHERE {} = {}",
            self.target_attr, self.filter_attr, self.filter_value
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrionExample {
    pub prompt_text: String,
    pub context: ContextTable,
    pub request: Request,
    pub label_token: String,
    pub template_id: String,
    pub rng_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDataset {
    pub task_kind: TaskKind,
    pub template_bank_version: String,
    pub examples: Vec<OrionExample>,
}

impl TaskDataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// `SELECT target WHERE filter = value` against one table.
pub fn eval_request(request: &Request, context: &ContextTable) -> Result<String> {
    let mut hit: Option<&BTreeMap<String, String>> = None;
    for row in &context.rows {
        if row.get(&request.filter_attr).is_some_and(|v| *v == request.filter_value) {
            if hit.is_some() {
                return Err(OrionError::Task(format!(
                    "ambiguous: several rows match {} = {}",
                    request.filter_attr, request.filter_value
                )));
            }
            hit = Some(row);
        }
    }
    let Some(row) = hit else {
        return Err(OrionError::Task(format!(
            "unanswerable: no row matches {} = {}",
            request.filter_attr, request.filter_value
        )));
    };
    row.get(&request.target_attr).cloned().ok_or_else(|| {
        OrionError::Task(format!(
            "unanswerable: matching row lacks attribute {}",
            request.target_attr
        ))
    })
}

/// Label of x1's request evaluated against x2's context; the patched-prompt
/// target answer.
pub fn cross_label(x1: &OrionExample, x2: &OrionExample) -> Result<String> {
    eval_request(&x1.request, &x2.context)
}

/// Exact `{placeholder}` substitution. Request bindings shadow context
/// bindings; an unbound placeholder or unclosed brace is an error.
pub fn render_prompt(
    template: &str,
    context_values: &BTreeMap<String, String>,
    request_values: &BTreeMap<String, String>,
) -> Result<String> {
    let mut out = String::with_capacity(template.len() + 64);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let Some(close) = after.find('}') else {
            return Err(OrionError::Task("unclosed '{' in template".into()));
        };
        let key = &after[..close];
        match request_values.get(key).or_else(|| context_values.get(key)) {
            Some(v) => out.push_str(v),
            None => return Err(OrionError::Task(format!("unbound placeholder {{{key}}}"))),
        }
        rest = &after[close + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

/// The dataset's request space: unique (target, filter, value) triples in
/// first-appearance order, with the index of the first example carrying each.
pub fn distinct_requests(dataset: &TaskDataset) -> Vec<(Request, usize)> {
    let mut seen: Vec<(Request, usize)> = Vec::new();
    for (i, ex) in dataset.examples.iter().enumerate() {
        if !seen.iter().any(|(r, _)| *r == ex.request) {
            seen.push((ex.request.clone(), i));
        }
    }
    seen
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    /// Example whose context exhibits the problem.
    pub example: usize,
    /// Example whose request exposed it, when the check is pairwise.
    pub other: Option<usize>,
    pub detail: String,
}

/// Per-desideratum violation lists; an all-empty report certifies the
/// dataset.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub decomposable: Vec<Violation>,
    pub single_token: Vec<Violation>,
    pub monotasking: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.decomposable.is_empty() && self.single_token.is_empty() && self.monotasking.is_empty()
    }

    pub fn total(&self) -> usize {
        self.decomposable.len() + self.single_token.len() + self.monotasking.len()
    }
}

/// Check the three dataset desiderata.
///
/// Decomposable: every request in the dataset evaluates on every context.
/// Single token: every such answer is one token under `vocab`, distinct
/// requests answer distinctly on one context, and stored labels match their
/// own evaluation. Monotasking: no request matches several rows of a context.
pub fn validate_dataset(dataset: &TaskDataset, vocab: &Vocabulary) -> ValidationReport {
    let mut report = ValidationReport::default();
    let requests = distinct_requests(dataset);
    for (j, xj) in dataset.examples.iter().enumerate() {
        match eval_request(&xj.request, &xj.context) {
            Ok(v) if v == xj.label_token => {}
            Ok(v) => report.single_token.push(Violation {
                example: j,
                other: None,
                detail: format!("stored label {:?} differs from evaluated {v:?}", xj.label_token),
            }),
            // The pairwise scan below flags the same defect with its carrier.
            Err(_) => {}
        }
        let mut answers: Vec<(usize, String)> = Vec::new();
        for (req, carrier) in &requests {
            match eval_request(req, &xj.context) {
                Ok(v) => {
                    if !vocab.is_single_token(&v) {
                        report.single_token.push(Violation {
                            example: j,
                            other: Some(*carrier),
                            detail: format!("answer {v:?} to [{req}] is not a single token"),
                        });
                    }
                    if let Some((prev, _)) = answers.iter().find(|(_, a)| *a == v) {
                        report.single_token.push(Violation {
                            example: j,
                            other: Some(*carrier),
                            detail: format!(
                                "requests of examples {prev} and {carrier} both answer {v:?}"
                            ),
                        });
                    }
                    answers.push((*carrier, v));
                }
                Err(e) => {
                    let viol = Violation {
                        example: j,
                        other: Some(*carrier),
                        detail: format!("[{req}]: {e}"),
                    };
                    if e.to_string().contains("ambiguous") {
                        report.monotasking.push(viol);
                    } else {
                        report.decomposable.push(viol);
                    }
                }
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn row(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    fn story_table() -> ContextTable {
        ContextTable::new(
            vec!["Name".into(), "Role".into()],
            vec![
                row(&[("Name", " Valencia"), ("Role", "City")]),
                row(&[("Name", " Christopher"), ("Role", "Main Character")]),
                row(&[("Name", " veterinarian"), ("Role", "Character Job")]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn eval_request_picks_unique_matching_row() {
        let ctx = story_table();
        let got = eval_request(&Request::new("Name", "Role", "City"), &ctx).unwrap();
        assert_eq!(got, " Valencia");
    }

    #[test]
    fn eval_request_reports_unanswerable_and_ambiguous() {
        let ctx = story_table();
        let missing = eval_request(&Request::new("Name", "Role", "Season"), &ctx).unwrap_err();
        assert!(missing.to_string().contains("unanswerable"), "{missing}");

        let mut dup = ctx.clone();
        dup.rows.push(row(&[("Name", " Lisbon"), ("Role", "City")]));
        let multi = eval_request(&Request::new("Name", "Role", "City"), &dup).unwrap_err();
        assert!(multi.to_string().contains("ambiguous"), "{multi}");
    }

    #[test]
    fn single_row_table_answers_itself() {
        let ctx = ContextTable::new(
            vec!["Kind".into(), "Capital".into()],
            vec![row(&[("Kind", "country"), ("Capital", " Lima")])],
        )
        .unwrap();
        let got = eval_request(&Request::new("Capital", "Kind", "country"), &ctx).unwrap();
        assert_eq!(got, " Lima");
    }

    #[test]
    fn cross_label_on_itself_is_the_label() {
        let ex = OrionExample {
            prompt_text: "p".into(),
            context: story_table(),
            request: Request::new("Name", "Role", "City"),
            label_token: " Valencia".into(),
            template_id: "t".into(),
            rng_seed: 0,
        };
        assert_eq!(cross_label(&ex, &ex).unwrap(), ex.label_token);
    }

    #[test]
    fn render_prompt_substitutes_and_rejects_unbound() {
        let ctx = row(&[("story", "Once."), ("question", "Where?")]);
        let req = row(&[("answer_prefix", "In")]);
        let got = render_prompt("S: {story} Q: {question} A: {answer_prefix}", &ctx, &req).unwrap();
        assert_eq!(got, "S: Once. Q: Where? A: In");

        let err = render_prompt("{nope}", &ctx, &req).unwrap_err();
        assert!(err.to_string().contains("unbound"), "{err}");
        assert_eq!(render_prompt("plain", &ctx, &req).unwrap(), "plain");
    }

    #[test]
    fn context_table_rejects_schema_mismatch_and_empty() {
        assert!(ContextTable::new(vec!["A".into()], vec![]).is_err());
        assert!(ContextTable::new(vec!["A".into()], vec![row(&[("B", "x")])]).is_err());
    }

    #[test]
    fn validation_flags_each_desideratum() {
        let vocab = Vocabulary::synthetic(&[" Valencia", " Lisbon", " Christopher", " Anna"])
            .unwrap();
        let make = |city: &str| OrionExample {
            prompt_text: "p".into(),
            context: ContextTable::new(
                vec!["Name".into(), "Role".into()],
                vec![
                    row(&[("Name", city), ("Role", "City")]),
                    row(&[("Name", " Christopher"), ("Role", "Main Character")]),
                ],
            )
            .unwrap(),
            request: Request::new("Name", "Role", "City"),
            label_token: city.into(),
            template_id: "t".into(),
            rng_seed: 0,
        };
        let mut ds = TaskDataset {
            task_kind: TaskKind::QaBase,
            template_bank_version: "test".into(),
            examples: vec![make(" Valencia"), make(" Lisbon")],
        };
        assert!(validate_dataset(&ds, &vocab).is_valid());

        // Duplicated filter-matching row: monotasking, flagged on that example.
        let mut dup = ds.clone();
        let extra = dup.examples[1].context.rows[0].clone();
        dup.examples[1].context.rows.push(extra);
        let rep = validate_dataset(&dup, &vocab);
        assert_eq!(rep.monotasking.len(), 1);
        assert_eq!(rep.monotasking[0].example, 1);
        assert!(rep.decomposable.is_empty());

        // Multi-token label.
        let mut two = ds.clone();
        two.examples[0].context.rows[0].insert("Name".into(), " Venice".into());
        two.examples[0].label_token = " Venice".into();
        let rep = validate_dataset(&two, &vocab);
        assert!(!rep.single_token.is_empty());
        assert!(rep.single_token.iter().any(|v| v.detail.contains("single token")));

        // Row removed: the request no longer answers, decomposability broken.
        ds.examples[1].context.rows.remove(0);
        let rep = validate_dataset(&ds, &vocab);
        assert!(!rep.decomposable.is_empty());
        assert_eq!(rep.decomposable[0].example, 1);
    }

    #[test]
    fn distinct_requests_dedupes_with_first_carrier() {
        let ex = |v: &str| OrionExample {
            prompt_text: "p".into(),
            context: story_table(),
            request: Request::new("Name", "Role", v),
            label_token: " Valencia".into(),
            template_id: "t".into(),
            rng_seed: 0,
        };
        let ds = TaskDataset {
            task_kind: TaskKind::QaBase,
            template_bank_version: "test".into(),
            examples: vec![ex("City"), ex("Main Character"), ex("City")],
        };
        let reqs = distinct_requests(&ds);
        assert_eq!(reqs.len(), 2);
        assert_eq!(reqs[0].1, 0);
        assert_eq!(reqs[1].1, 1);
    }
}
