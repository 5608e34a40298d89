//! Dataset generation from the embedded template banks.
//!
//! Every example draws from its own RNG stream, `derive_seed(seed, "kind/i")`,
//! so a dataset is a pure function of `(kind, seed, n)` and examples can be
//! regenerated individually. Dataset-level choices (which factual group, which
//! story variation) use their own labelled streams for the same reason.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::Deserialize;

use crate::error::{OrionError, Result};
use crate::model::{forward_traced, Model};
use crate::rng::{self, Rng};
use crate::tensor;
use crate::tokenizer::Vocabulary;

use super::{
    eval_request, render_prompt, ContextTable, OrionExample, Request, TaskDataset, TaskKind,
};

const BANK_VERSION: &str = "orion-banks-1";

const QA_JSON: &str = include_str!("../../banks/qa.json");
const FACTUAL_JSON: &str = include_str!("../../banks/factual.json");
const TRANSLATION_JSON: &str = include_str!("../../banks/translation.json");
const VARBIND_JSON: &str = include_str!("../../banks/varbind.json");
const TYPEHINT_JSON: &str = include_str!("../../banks/typehint.json");

pub(crate) fn parse_bank<T: for<'de> Deserialize<'de>>(raw: &str, which: &str) -> Result<T> {
    serde_json::from_str(raw).map_err(|e| OrionError::Task(format!("{which} bank: {e}")))
}

pub(crate) fn check_version(which: &str, version: &str) -> Result<()> {
    if version != BANK_VERSION {
        return Err(OrionError::Task(format!(
            "{which} bank version {version:?}, expected {BANK_VERSION:?}"
        )));
    }
    Ok(())
}

pub(crate) fn pick<'a, T>(r: &mut Rng, xs: &'a [T], what: &str) -> Result<&'a T> {
    xs.choose(r)
        .ok_or_else(|| OrionError::Task(format!("empty pool: {what}")))
}

pub(crate) fn get<'a, V>(map: &'a BTreeMap<String, V>, key: &str, what: &str) -> Result<&'a V> {
    map.get(key)
        .ok_or_else(|| OrionError::Task(format!("{what} has no entry for {key:?}")))
}

/// How a label appears in the prompt: after a space (plain running text) or
/// bare (immediately after an open quote). Tokenization differs between the
/// two, so value pools are stored per styling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Styling {
    Space,
    Bare,
}

impl Styling {
    pub(crate) fn apply(self, value: &str) -> String {
        match self {
            Styling::Space => format!(" {value}"),
            Styling::Bare => value.to_string(),
        }
    }
}

/// Builds an example, re-deriving its label from the table and refusing any
/// tokenizer mismatch. Generation must never emit an invalid example.
fn push_example(
    out: &mut Vec<OrionExample>,
    vocab: &Vocabulary,
    prompt_text: String,
    context: ContextTable,
    request: Request,
    label_token: String,
    template_id: String,
    rng_seed: u64,
) -> Result<()> {
    let eval = eval_request(&request, &context)?;
    if eval != label_token {
        return Err(OrionError::Task(format!(
            "label {label_token:?} disagrees with table answer {eval:?}"
        )));
    }
    if !vocab.is_single_token(&label_token) {
        return Err(OrionError::Task(format!(
            "label {label_token:?} is not a single token"
        )));
    }
    out.push(OrionExample {
        prompt_text,
        context,
        request,
        label_token,
        template_id,
        rng_seed,
    });
    Ok(())
}

fn one(key: &str, value: String) -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    m.insert(key.to_string(), value);
    m
}

/// Generates a deterministic dataset of `n` examples for `kind`. Labels are
/// guaranteed to be single tokens under `vocab` and to equal the table answer
/// of their own request; requests within one dataset stay mutually exclusive
/// per context by construction.
pub fn generate_task(
    kind: TaskKind,
    seed: u64,
    n: usize,
    vocab: &Vocabulary,
) -> Result<TaskDataset> {
    if n < 2 {
        return Err(OrionError::Task(
            "a dataset needs at least 2 examples for interchange".into(),
        ));
    }
    let examples = match kind {
        TaskKind::QaBase
        | TaskKind::QaUniformPrefix
        | TaskKind::QaQuestionFirst
        | TaskKind::QaMixed => gen_qa(kind, seed, n, vocab)?,
        TaskKind::Translation => gen_translation(seed, n, vocab)?,
        TaskKind::FactualRecall => gen_factual(seed, n, vocab)?,
        TaskKind::VariableBinding => gen_varbind(seed, n, vocab)?,
        TaskKind::Induction => gen_induction(seed, n, vocab)?,
        TaskKind::TypeHint => gen_typehint(seed, n, vocab)?,
    };
    Ok(TaskDataset {
        task_kind: kind,
        template_bank_version: BANK_VERSION.to_string(),
        examples,
    })
}

// ---------------------------------------------------------------------------
// Story QA

#[derive(Deserialize)]
pub(crate) struct QaBank {
    version: String,
    pub(crate) stories: Vec<QaStory>,
    pub(crate) values: BTreeMap<String, StyledPool>,
    pub(crate) roles: BTreeMap<String, String>,
    pub(crate) questions: BTreeMap<String, Vec<String>>,
    pub(crate) answer_prefixes: BTreeMap<String, String>,
    pub(crate) core_variables: Vec<String>,
    pub(crate) extended_variables: Vec<String>,
    pub(crate) templates: BTreeMap<String, String>,
}

#[derive(Deserialize)]
pub(crate) struct QaStory {
    pub(crate) id: String,
    pub(crate) text: String,
}

#[derive(Deserialize)]
pub(crate) struct StyledPool {
    pub(crate) space: Vec<String>,
    pub(crate) bare: Vec<String>,
}

impl StyledPool {
    pub(crate) fn styled(&self, styling: Styling) -> &[String] {
        match styling {
            Styling::Space => &self.space,
            Styling::Bare => &self.bare,
        }
    }
}

pub(crate) fn qa_bank() -> Result<QaBank> {
    let bank: QaBank = parse_bank(QA_JSON, "qa")?;
    check_version("qa", &bank.version)?;
    Ok(bank)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum QaVariant {
    Base,
    UniformPrefix,
    QuestionFirst,
}

impl QaVariant {
    pub(crate) fn template_key(self) -> &'static str {
        match self {
            QaVariant::Base => "qa_base",
            QaVariant::UniformPrefix => "qa_uniform_prefix",
            QaVariant::QuestionFirst => "qa_question_first",
        }
    }

    pub(crate) fn styling(self) -> Styling {
        match self {
            QaVariant::Base => Styling::Space,
            _ => Styling::Bare,
        }
    }
}

/// Pool values whose styled form is a single token under `vocab`, keeping the
/// bank usable across tokenizers with different merge tables.
pub(crate) fn usable_values<'a>(
    pool: &'a StyledPool,
    styling: Styling,
    vocab: &Vocabulary,
) -> Vec<&'a String> {
    pool.styled(styling)
        .iter()
        .filter(|v| vocab.is_single_token(&styling.apply(v)))
        .collect()
}

/// One fully assigned story: a value for every extended variable plus the
/// rendered story text. Shared with the oversight builder.
pub(crate) struct QaScene {
    pub(crate) story_id: String,
    pub(crate) story_text: String,
    pub(crate) chosen: BTreeMap<String, String>,
}

/// Queried variables get single-token values for the requested styling; the
/// rest only dress the story and take any space-styled value.
pub(crate) fn sample_scene(
    r: &mut Rng,
    bank: &QaBank,
    query_vars: &[&str],
    styling: Styling,
    vocab: &Vocabulary,
) -> Result<QaScene> {
    let mut chosen = BTreeMap::new();
    for var in &bank.extended_variables {
        let pool = get(&bank.values, var, "qa values")?;
        let value = if query_vars.contains(&var.as_str()) {
            let usable = usable_values(pool, styling, vocab);
            if usable.len() < 2 {
                return Err(OrionError::Task(format!(
                    "qa {var} pool keeps {} single-token values under this tokenizer, need 2",
                    usable.len()
                )));
            }
            (*pick(r, &usable, var)?).clone()
        } else {
            pick(r, &pool.space, var)?.clone()
        };
        chosen.insert(var.clone(), value);
    }
    let mut labels: Vec<String> = query_vars
        .iter()
        .map(|v| styling.apply(&chosen[*v]))
        .collect();
    labels.sort();
    labels.dedup();
    if labels.len() != query_vars.len() {
        return Err(OrionError::Task("qa value pools overlap".into()));
    }
    let story = pick(r, &bank.stories, "qa stories")?;
    let story_text = render_prompt(&story.text, &chosen, &BTreeMap::new())?;
    Ok(QaScene {
        story_id: story.id.clone(),
        story_text,
        chosen,
    })
}

/// Queried variables per variant. The base prompt cues the answer kind with a
/// per-variable prefix, so it can ask about all core variables; the quoted
/// variants share one generic format and stick to variables whose values
/// tokenize bare.
fn qa_query_vars<'a>(kind: TaskKind, bank: &'a QaBank) -> Vec<&'a str> {
    if kind == TaskKind::QaBase {
        bank.core_variables.iter().map(|s| s.as_str()).collect()
    } else {
        vec!["name", "city"]
    }
}

pub(crate) fn qa_context(
    bank: &QaBank,
    scene: &QaScene,
    styling: Styling,
) -> Result<ContextTable> {
    let schema = vec!["Name".to_string(), "Role".to_string()];
    let mut rows = Vec::new();
    for var in &bank.extended_variables {
        let mut row = BTreeMap::new();
        row.insert("Name".to_string(), styling.apply(&scene.chosen[var]));
        row.insert("Role".to_string(), get(&bank.roles, var, "qa roles")?.clone());
        rows.push(row);
    }
    ContextTable::new(schema, rows)
}

pub(crate) fn qa_prompt(
    bank: &QaBank,
    variant: QaVariant,
    story_text: &str,
    question: &str,
    query_var: &str,
) -> Result<String> {
    let template = get(&bank.templates, variant.template_key(), "qa templates")?;
    let mut binds = BTreeMap::new();
    binds.insert("story".to_string(), story_text.to_string());
    binds.insert("question".to_string(), question.to_string());
    if variant == QaVariant::Base {
        binds.insert(
            "answer_prefix".to_string(),
            get(&bank.answer_prefixes, query_var, "qa answer_prefixes")?.clone(),
        );
    }
    render_prompt(template, &binds, &BTreeMap::new())
}

fn gen_qa(kind: TaskKind, seed: u64, n: usize, vocab: &Vocabulary) -> Result<Vec<OrionExample>> {
    let bank = qa_bank()?;
    let mut examples = Vec::with_capacity(n);
    for i in 0..n {
        let ex_seed = rng::derive_seed(seed, &format!("{}/{i}", kind.as_str()));
        let mut r = rng::seeded(ex_seed);
        let variant = match kind {
            TaskKind::QaBase => QaVariant::Base,
            TaskKind::QaUniformPrefix => QaVariant::UniformPrefix,
            TaskKind::QaQuestionFirst => QaVariant::QuestionFirst,
            _ => *pick(
                &mut r,
                &[
                    QaVariant::Base,
                    QaVariant::UniformPrefix,
                    QaVariant::QuestionFirst,
                ],
                "qa variants",
            )?,
        };
        let styling = variant.styling();
        let query_vars = qa_query_vars(kind, &bank);
        let scene = sample_scene(&mut r, &bank, &query_vars, styling, vocab)?;
        let query_var = *pick(&mut r, &query_vars, "qa query variables")?;
        let phrasings = get(&bank.questions, query_var, "qa questions")?;
        let qi = r.gen_range(0..phrasings.len());
        let prompt = qa_prompt(&bank, variant, &scene.story_text, &phrasings[qi], query_var)?;
        let context = qa_context(&bank, &scene, styling)?;
        let request = Request::new("Name", "Role", get(&bank.roles, query_var, "qa roles")?);
        let label = styling.apply(&scene.chosen[query_var]);
        push_example(
            &mut examples,
            vocab,
            prompt,
            context,
            request,
            label,
            format!("{}/{}/{query_var}{qi}", variant.template_key(), scene.story_id),
            ex_seed,
        )?;
    }
    Ok(examples)
}

// ---------------------------------------------------------------------------
// Factual recall

#[derive(Debug, Clone, Deserialize)]
pub struct FactualEntity {
    pub name: String,
    #[serde(flatten)]
    pub attributes: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct FactualGroup {
    pub kind: String,
    pub few_shot: String,
    pub attributes: Vec<String>,
    pub questions: BTreeMap<String, String>,
    pub entities: Vec<FactualEntity>,
}

#[derive(Deserialize)]
struct FactualBank {
    version: String,
    people: FactualGroup,
    countries: FactualGroup,
}

fn factual_bank() -> Result<FactualBank> {
    let bank: FactualBank = parse_bank(FACTUAL_JSON, "factual")?;
    check_version("factual", &bank.version)?;
    Ok(bank)
}

/// The embedded factual bank for one entity kind, `"person"` or `"country"`.
pub fn factual_group(kind: &str) -> Result<FactualGroup> {
    let bank = factual_bank()?;
    match kind {
        "person" => Ok(bank.people),
        "country" => Ok(bank.countries),
        _ => Err(OrionError::Task(format!("unknown factual group {kind:?}"))),
    }
}

fn factual_prompt(group: &FactualGroup, entity: &str, attribute: &str) -> Result<String> {
    let template = get(&group.questions, attribute, "factual questions")?;
    let question = render_prompt(template, &one("entity", entity.to_string()), &BTreeMap::new())?;
    Ok(format!(
        "<|endoftext|>{}Question: {question}\nAnswer:",
        group.few_shot
    ))
}

/// An entity is usable when every attribute value is a single token with a
/// leading space and no two attribute values collide (the request set must
/// stay decomposable on its context).
fn usable_entities<'a>(group: &'a FactualGroup, vocab: &Vocabulary) -> Vec<&'a FactualEntity> {
    group
        .entities
        .iter()
        .filter(|e| {
            let mut seen: Vec<&String> = Vec::new();
            for attr in &group.attributes {
                let Some(v) = e.attributes.get(attr) else {
                    return false;
                };
                if !vocab.is_single_token(&format!(" {v}")) || seen.contains(&v) {
                    return false;
                }
                seen.push(v);
            }
            true
        })
        .collect()
}

/// Keeps candidates the model already answers correctly for every attribute
/// (greedy argmax over next-token logits). Mirrors dataset screening for
/// factual tasks: examples must test retrieval, not knowledge.
pub fn filter_factual_entities(
    model: &Model,
    vocab: &Vocabulary,
    group: &FactualGroup,
    candidates: &[FactualEntity],
) -> Result<Vec<FactualEntity>> {
    let mut kept = Vec::new();
    'entity: for entity in candidates {
        for attr in &group.attributes {
            let Some(value) = entity.attributes.get(attr) else {
                continue 'entity;
            };
            let Some(want) = vocab.token_id(&format!(" {value}")) else {
                continue 'entity;
            };
            let prompt = factual_prompt(group, &entity.name, attr)?;
            let ids = vocab.encode_prompt(&prompt)?;
            let trace = forward_traced(model, &ids)?;
            if tensor::argmax(&trace.last_logits) as u32 != want {
                continue 'entity;
            }
        }
        kept.push(entity.clone());
    }
    Ok(kept)
}

fn gen_factual(seed: u64, n: usize, vocab: &Vocabulary) -> Result<Vec<OrionExample>> {
    let bank = factual_bank()?;
    let group = if rng::derive(seed, "factual_recall/group").gen_range(0..2u32) == 0 {
        bank.people
    } else {
        bank.countries
    };
    let usable = usable_entities(&group, vocab);
    if usable.len() < 2 {
        return Err(OrionError::Task(format!(
            "factual {} bank keeps {} usable entities, need 2",
            group.kind,
            usable.len()
        )));
    }
    let mut schema = vec!["Kind".to_string(), "Entity".to_string()];
    schema.extend(group.attributes.iter().cloned());
    let mut examples = Vec::with_capacity(n);
    for i in 0..n {
        let ex_seed = rng::derive_seed(seed, &format!("factual_recall/{i}"));
        let mut r = rng::seeded(ex_seed);
        let entity = *pick(&mut r, &usable, "factual entities")?;
        let attribute = pick(&mut r, &group.attributes, "factual attributes")?.clone();
        let prompt = factual_prompt(&group, &entity.name, &attribute)?;
        let mut row = BTreeMap::new();
        row.insert("Kind".to_string(), group.kind.clone());
        row.insert("Entity".to_string(), entity.name.clone());
        for attr in &group.attributes {
            let v = get(&entity.attributes, attr, "factual entity")?;
            row.insert(attr.clone(), format!(" {v}"));
        }
        let context = ContextTable::new(schema.clone(), vec![row])?;
        let request = Request::new(&attribute, "Kind", &group.kind);
        let label = format!(" {}", get(&entity.attributes, &attribute, "factual entity")?);
        push_example(
            &mut examples,
            vocab,
            prompt,
            context,
            request,
            label,
            format!("factual/{}/{attribute}", group.kind),
            ex_seed,
        )?;
    }
    Ok(examples)
}

// ---------------------------------------------------------------------------
// Translation

#[derive(Deserialize)]
struct TranslationBank {
    version: String,
    preamble: String,
    surnames: Vec<String>,
    variations: Vec<TranslationVariation>,
}

#[derive(Deserialize)]
struct TranslationVariation {
    id: String,
    language: String,
    prefix: String,
    title: String,
    intro: String,
    slots: Vec<TranslationSlot>,
    outro: String,
}

#[derive(Deserialize)]
struct TranslationSlot {
    tag: String,
    paragraph: String,
    excerpt: String,
}

fn gen_translation(seed: u64, n: usize, vocab: &Vocabulary) -> Result<Vec<OrionExample>> {
    let bank: TranslationBank = parse_bank(TRANSLATION_JSON, "translation")?;
    check_version("translation", &bank.version)?;
    let vi = rng::derive(seed, "translation/variation").gen_range(0..bank.variations.len());
    let var = &bank.variations[vi];
    let pool: Vec<&String> = bank
        .surnames
        .iter()
        .filter(|s| vocab.is_single_token(&format!(" {s}")))
        .collect();
    if pool.len() < var.slots.len() {
        return Err(OrionError::Task(format!(
            "translation bank keeps {} single-token surnames, need {}",
            pool.len(),
            var.slots.len()
        )));
    }
    let preamble = render_prompt(
        &bank.preamble,
        &one("language", var.language.clone()),
        &BTreeMap::new(),
    )?;
    let schema = vec!["Name".to_string(), "Sentence".to_string()];
    let mut examples = Vec::with_capacity(n);
    for i in 0..n {
        let ex_seed = rng::derive_seed(seed, &format!("translation/{i}"));
        let mut r = rng::seeded(ex_seed);
        let mut order: Vec<usize> = (0..pool.len()).collect();
        order.shuffle(&mut r);
        let names: Vec<&String> = order[..var.slots.len()].iter().map(|&k| pool[k]).collect();
        let si = r.gen_range(0..var.slots.len());

        let mut article = var.intro.clone();
        for (k, slot) in var.slots.iter().enumerate() {
            article.push_str("\n\n");
            article.push_str(&render_prompt(
                &slot.paragraph,
                &one("name", names[k].clone()),
                &BTreeMap::new(),
            )?);
        }
        let mut outro_binds = BTreeMap::new();
        for (k, name) in names.iter().enumerate() {
            outro_binds.insert(format!("name{}", k + 1), (*name).clone());
        }
        article.push_str("\n\n");
        article.push_str(&render_prompt(&var.outro, &outro_binds, &BTreeMap::new())?);

        let prompt = format!(
            "{preamble}English:\n\nTitle: \"{}\"\n\n{article}\n\n{}:\n[...]\n{}",
            var.title, var.language, var.slots[si].excerpt
        );
        debug_assert!(var.slots[si].excerpt.ends_with(&var.prefix));

        let rows = var
            .slots
            .iter()
            .enumerate()
            .map(|(k, slot)| {
                let mut row = BTreeMap::new();
                row.insert("Name".to_string(), format!(" {}", names[k]));
                row.insert("Sentence".to_string(), slot.tag.clone());
                row
            })
            .collect();
        let context = ContextTable::new(schema.clone(), rows)?;
        let request = Request::new("Name", "Sentence", &var.slots[si].tag);
        let label = format!(" {}", names[si]);
        push_example(
            &mut examples,
            vocab,
            prompt,
            context,
            request,
            label,
            format!("translation/{}/{}", var.id, var.slots[si].tag),
            ex_seed,
        )?;
    }
    Ok(examples)
}

// ---------------------------------------------------------------------------
// Variable binding

#[derive(Deserialize)]
struct VarbindBank {
    version: String,
    names: Vec<String>,
    quantity_min: u32,
    quantity_max: u32,
    variations: Vec<VarbindVariation>,
}

#[derive(Deserialize)]
struct VarbindVariation {
    id: String,
    objects: Vec<String>,
    context: String,
    #[serde(default)]
    pair_question: Option<String>,
    request: String,
}

fn gen_varbind(seed: u64, n: usize, vocab: &Vocabulary) -> Result<Vec<OrionExample>> {
    let bank: VarbindBank = parse_bank(VARBIND_JSON, "varbind")?;
    check_version("varbind", &bank.version)?;
    let vi = rng::derive(seed, "variable_binding/variation").gen_range(0..bank.variations.len());
    let var = &bank.variations[vi];
    // Labels continue an open parenthesis, so quantities are styled bare.
    let quantities: Vec<String> = (bank.quantity_min..=bank.quantity_max)
        .map(|q| q.to_string())
        .filter(|s| vocab.is_single_token(s))
        .collect();
    if quantities.len() < var.objects.len() {
        return Err(OrionError::Task(format!(
            "varbind bank keeps {} single-token quantities, need {}",
            quantities.len(),
            var.objects.len()
        )));
    }
    let schema = vec!["Object".to_string(), "Quantity".to_string()];
    let mut examples = Vec::with_capacity(n);
    for i in 0..n {
        let ex_seed = rng::derive_seed(seed, &format!("variable_binding/{i}"));
        let mut r = rng::seeded(ex_seed);
        let mut order: Vec<usize> = (0..quantities.len()).collect();
        order.shuffle(&mut r);
        let picked: Vec<&String> = order[..var.objects.len()]
            .iter()
            .map(|&k| &quantities[k])
            .collect();
        let ti = r.gen_range(0..var.objects.len());

        let mut binds = one("name", pick(&mut r, &bank.names, "varbind names")?.clone());
        for (k, obj) in var.objects.iter().enumerate() {
            binds.insert(format!("o{}", k + 1), obj.clone());
            binds.insert(format!("q{}", k + 1), picked[k].clone());
        }
        let mut prompt = format!(
            "<|endoftext|>{}",
            render_prompt(&var.context, &binds, &BTreeMap::new())?
        );
        if let Some(pq) = &var.pair_question {
            let other = (ti + 1 + r.gen_range(0..var.objects.len() - 1)) % var.objects.len();
            let (a, b) = if r.gen_range(0..2u32) == 0 {
                (ti, other)
            } else {
                (other, ti)
            };
            let mut pair_binds = one("pair_a", var.objects[a].clone());
            pair_binds.insert("pair_b".to_string(), var.objects[b].clone());
            prompt.push_str(&render_prompt(pq, &pair_binds, &BTreeMap::new())?);
        }
        prompt.push_str(&render_prompt(
            &var.request,
            &one("object", var.objects[ti].clone()),
            &BTreeMap::new(),
        )?);

        let rows = var
            .objects
            .iter()
            .enumerate()
            .map(|(k, obj)| {
                let mut row = BTreeMap::new();
                row.insert("Object".to_string(), obj.clone());
                row.insert("Quantity".to_string(), picked[k].clone());
                row
            })
            .collect();
        let context = ContextTable::new(schema.clone(), rows)?;
        let request = Request::new("Quantity", "Object", &var.objects[ti]);
        let label = picked[ti].clone();
        push_example(
            &mut examples,
            vocab,
            prompt,
            context,
            request,
            label,
            format!("varbind/{}", var.id),
            ex_seed,
        )?;
    }
    Ok(examples)
}

// ---------------------------------------------------------------------------
// Induction

const INDUCTION_PAIRS: usize = 10;
const INDUCTION_REPEATS: usize = 5;
const INDUCTION_LEN: usize = 5;
const INDUCTION_ALPHABET: &[u8] =
    b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz";

fn random_word(r: &mut Rng) -> String {
    (0..INDUCTION_LEN)
        .map(|_| INDUCTION_ALPHABET[r.gen_range(0..INDUCTION_ALPHABET.len())] as char)
        .collect()
}

fn gen_induction(seed: u64, n: usize, vocab: &Vocabulary) -> Result<Vec<OrionExample>> {
    // Keys are shared across the dataset so that any two examples exchange a
    // meaningful request; completions are fresh per example.
    let mut kr = rng::derive(seed, "induction/keys");
    let mut keys: Vec<String> = Vec::new();
    while keys.len() < INDUCTION_PAIRS {
        let k = random_word(&mut kr);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    let schema = vec!["Key".to_string(), "Completion".to_string()];
    let mut examples = Vec::with_capacity(n);
    for i in 0..n {
        let ex_seed = rng::derive_seed(seed, &format!("induction/{i}"));
        let mut r = rng::seeded(ex_seed);
        let mut completions: Vec<String> = Vec::new();
        let mut firsts: Vec<String> = Vec::new();
        let mut attempts = 0usize;
        while completions.len() < INDUCTION_PAIRS {
            attempts += 1;
            if attempts > 10_000 {
                return Err(OrionError::Task(
                    "induction could not find completions with distinct first tokens".into(),
                ));
            }
            let c = random_word(&mut r);
            let f = vocab.first_token_str(&c)?;
            if !firsts.contains(&f) {
                completions.push(c);
                firsts.push(f);
            }
        }
        let mut prompt = String::from("<|endoftext|>");
        for _ in 0..INDUCTION_REPEATS {
            let mut order: Vec<usize> = (0..INDUCTION_PAIRS).collect();
            order.shuffle(&mut r);
            for k in order {
                prompt.push_str(&format!("{}:{}\n", keys[k], completions[k]));
            }
        }
        let qi = r.gen_range(0..INDUCTION_PAIRS);
        prompt.push_str(&format!("{}:", keys[qi]));

        let rows = (0..INDUCTION_PAIRS)
            .map(|k| {
                let mut row = BTreeMap::new();
                row.insert("Key".to_string(), keys[k].clone());
                row.insert("Completion".to_string(), firsts[k].clone());
                row
            })
            .collect();
        let context = ContextTable::new(schema.clone(), rows)?;
        let request = Request::new("Completion", "Key", &keys[qi]);
        let label = firsts[qi].clone();
        push_example(
            &mut examples,
            vocab,
            prompt,
            context,
            request,
            label,
            "induction/pairs".to_string(),
            ex_seed,
        )?;
    }
    Ok(examples)
}

// ---------------------------------------------------------------------------
// Type hint

#[derive(Deserialize)]
struct TypehintBank {
    version: String,
    letters: Vec<String>,
    variations: Vec<TypehintVariation>,
}

#[derive(Deserialize)]
struct TypehintVariation {
    id: String,
    preamble: String,
    types: Vec<TypeSpec>,
    functions: Vec<FnSpec>,
}

#[derive(Deserialize)]
struct TypeSpec {
    kind: String,
    comment: String,
    constructor: String,
}

#[derive(Deserialize)]
struct FnSpec {
    name: String,
    comment: String,
    param: String,
}

fn gen_typehint(seed: u64, n: usize, vocab: &Vocabulary) -> Result<Vec<OrionExample>> {
    let bank: TypehintBank = parse_bank(TYPEHINT_JSON, "typehint")?;
    check_version("typehint", &bank.version)?;
    let vi = rng::derive(seed, "type_hint/variation").gen_range(0..bank.variations.len());
    let var = &bank.variations[vi];
    let letters: Vec<&String> = bank
        .letters
        .iter()
        .filter(|l| vocab.is_single_token(l))
        .collect();
    if letters.len() < var.types.len() {
        return Err(OrionError::Task(format!(
            "typehint bank keeps {} single-token letters, need {}",
            letters.len(),
            var.types.len()
        )));
    }
    let schema = vec!["Variable".to_string(), "Kind".to_string()];
    let mut examples = Vec::with_capacity(n);
    for i in 0..n {
        let ex_seed = rng::derive_seed(seed, &format!("type_hint/{i}"));
        let mut r = rng::seeded(ex_seed);
        let mut order: Vec<usize> = (0..letters.len()).collect();
        order.shuffle(&mut r);
        let vars: Vec<&String> = order[..var.types.len()].iter().map(|&k| letters[k]).collect();
        let mut lines: Vec<usize> = (0..var.types.len()).collect();
        lines.shuffle(&mut r);

        let mut body = String::new();
        for &t in &lines {
            let spec = &var.types[t];
            let mut args = BTreeMap::new();
            for key in ["a", "b", "c", "d"] {
                args.insert(key.to_string(), r.gen_range(1..10u32).to_string());
            }
            let ctor = render_args(&spec.constructor, &args)?;
            body.push_str(&format!(
                "# Create a {}\n{} = {}\n\n",
                spec.comment, vars[t], ctor
            ));
        }
        let ti = r.gen_range(0..var.types.len());
        let fns: Vec<&FnSpec> = var
            .functions
            .iter()
            .filter(|f| f.param == var.types[ti].kind)
            .collect();
        let f = *pick(&mut r, &fns, "typehint functions")?;
        let prompt = format!(
            "<|endoftext|>\n{}\n{body}# {}\nprint({}(",
            var.preamble, f.comment, f.name
        );

        let rows = var
            .types
            .iter()
            .enumerate()
            .map(|(t, spec)| {
                let mut row = BTreeMap::new();
                row.insert("Variable".to_string(), vars[t].clone());
                row.insert("Kind".to_string(), spec.kind.clone());
                row
            })
            .collect();
        let context = ContextTable::new(schema.clone(), rows)?;
        let request = Request::new("Variable", "Kind", &var.types[ti].kind);
        let label = vars[ti].clone();
        push_example(
            &mut examples,
            vocab,
            prompt,
            context,
            request,
            label,
            format!("typehint/{}/{}", var.id, f.name),
            ex_seed,
        )?;
    }
    Ok(examples)
}

/// Constructor templates may use any subset of `{a}..{d}`; unused bindings are
/// fine, which plain `render_prompt` would reject.
fn render_args(template: &str, args: &BTreeMap<String, String>) -> Result<String> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let close = after
            .find('}')
            .ok_or_else(|| OrionError::Task("unclosed { in constructor template".into()))?;
        let key = &after[..close];
        match args.get(key) {
            Some(v) => out.push_str(v),
            None => {
                return Err(OrionError::Task(format!(
                    "constructor placeholder {key:?} unbound"
                )))
            }
        }
        rest = &after[close + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

// ---------------------------------------------------------------------------

/// Every styled surface form the banks may emit as a label. Synthetic test
/// vocabularies are built from this list so generation never trips the
/// single-token requirement off-model.
pub fn bank_single_token_words() -> Result<Vec<String>> {
    let mut words: Vec<String> = Vec::new();
    let qa = qa_bank()?;
    for pool in qa.values.values() {
        for v in &pool.space {
            words.push(format!(" {v}"));
        }
        for v in &pool.bare {
            words.push(v.clone());
        }
    }
    let factual = factual_bank()?;
    for group in [&factual.people, &factual.countries] {
        for e in &group.entities {
            for a in &group.attributes {
                if let Some(v) = e.attributes.get(a) {
                    words.push(format!(" {v}"));
                }
            }
        }
    }
    let tb: TranslationBank = parse_bank(TRANSLATION_JSON, "translation")?;
    for s in &tb.surnames {
        words.push(format!(" {s}"));
    }
    let vb: VarbindBank = parse_bank(VARBIND_JSON, "varbind")?;
    for q in vb.quantity_min..=vb.quantity_max {
        words.push(q.to_string());
    }
    let th: TypehintBank = parse_bank(TYPEHINT_JSON, "typehint")?;
    for l in &th.letters {
        words.push(l.clone());
    }
    words.sort();
    words.dedup();
    Ok(words)
}
