//! Mutation harness for the dataset validator: plant sixty known violations,
//! twenty per desideratum, and require every one detected with no false
//! positives on the clean datasets they were derived from.

use orion_core::rng;
use orion_core::task::{
    bank_single_token_words, generate_task, validate_dataset, TaskDataset, TaskKind,
};
use orion_core::tokenizer::Vocabulary;
use rand::Rng as _;

fn vocab() -> Vocabulary {
    let words = bank_single_token_words().unwrap();
    let refs: Vec<&str> = words.iter().map(|s| s.as_str()).collect();
    Vocabulary::synthetic(&refs).unwrap()
}

fn clean_datasets(vocab: &Vocabulary) -> Vec<TaskDataset> {
    [TaskKind::QaBase, TaskKind::Translation, TaskKind::VariableBinding, TaskKind::FactualRecall]
        .into_iter()
        .enumerate()
        .map(|(i, kind)| generate_task(kind, 300 + i as u64, 8, vocab).unwrap())
        .collect()
}

/// Remove the row a request needs (or retarget its filter value), leaving
/// some dataset request unanswerable on the mutated context.
fn break_decomposable(ds: &mut TaskDataset, r: &mut rng::Rng) {
    let i = r.gen_range(0..ds.examples.len());
    let ex = &mut ds.examples[i];
    let filter = ex.request.filter_attr.clone();
    let value = ex.request.filter_value.clone();
    let row = ex
        .context
        .rows
        .iter_mut()
        .find(|row| row.get(&filter) == Some(&value))
        .expect("own request must match a row");
    row.insert(filter, format!("{value} (defunct)"));
}

/// Point a context value at a multi-token string, keeping the stored label
/// consistent so only the single-token desideratum fires.
fn break_single_token(ds: &mut TaskDataset, r: &mut rng::Rng) {
    let i = r.gen_range(0..ds.examples.len());
    let ex = &mut ds.examples[i];
    let target = ex.request.target_attr.clone();
    let filter = ex.request.filter_attr.clone();
    let value = ex.request.filter_value.clone();
    let row = ex
        .context
        .rows
        .iter_mut()
        .find(|row| row.get(&filter) == Some(&value))
        .expect("own request must match a row");
    let long = format!("{} borealis", row[&target]);
    row.insert(target, long.clone());
    ex.label_token = long;
}

/// Duplicate the matching row: the request now selects two rows at once.
fn break_monotasking(ds: &mut TaskDataset, r: &mut rng::Rng) {
    let i = r.gen_range(0..ds.examples.len());
    let ex = &mut ds.examples[i];
    let filter = ex.request.filter_attr.clone();
    let value = ex.request.filter_value.clone();
    let dup = ex
        .context
        .rows
        .iter()
        .find(|row| row.get(&filter) == Some(&value))
        .expect("own request must match a row")
        .clone();
    ex.context.rows.push(dup);
}

#[test]
fn no_false_positives_on_clean_datasets() {
    let vocab = vocab();
    for ds in clean_datasets(&vocab) {
        let report = validate_dataset(&ds, &vocab);
        assert!(
            report.is_valid(),
            "{}: clean dataset flagged: {report:?}",
            ds.task_kind
        );
    }
}

#[test]
fn sixty_planted_violations_are_all_detected() {
    let vocab = vocab();
    let clean = clean_datasets(&vocab);
    let mut r = rng::seeded(99);
    let mutations: [(&str, fn(&mut TaskDataset, &mut rng::Rng)); 3] = [
        ("decomposable", break_decomposable),
        ("single_token", break_single_token),
        ("monotasking", break_monotasking),
    ];

    for (name, mutate) in mutations {
        for trial in 0..20 {
            let mut ds = clean[trial % clean.len()].clone();
            mutate(&mut ds, &mut r);
            let report = validate_dataset(&ds, &vocab);
            let bucket = match name {
                "decomposable" => &report.decomposable,
                "single_token" => &report.single_token,
                _ => &report.monotasking,
            };
            assert!(
                !bucket.is_empty(),
                "{name} mutation {trial} on {} went undetected: {report:?}",
                ds.task_kind
            );
        }
    }
}
