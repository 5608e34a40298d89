//! Brute-force oracle for request evaluation: enumerate matching rows with
//! independent code and demand exact agreement, outcome class included, on
//! randomly generated abstract instances.

use std::collections::BTreeMap;

use orion_core::rng;
use orion_core::task::{cross_label, eval_request, ContextTable, OrionExample, Request};
use rand::seq::SliceRandom;
use rand::Rng as _;

const ATTRS: [&str; 6] = ["name", "city", "job", "season", "daytime", "color"];
const VALUES: [&str; 8] = [" Anna", " Lisbon", " baker", " winter", " dawn", " red", " Omar", " Kyoto"];

#[derive(Debug, PartialEq)]
enum Outcome {
    Answer(String),
    Unanswerable,
    Ambiguous,
}

/// Straight enumeration of the SELECT semantics, sharing nothing with the
/// implementation under test.
fn brute_force(req: &Request, ctx: &ContextTable) -> Outcome {
    let matches: Vec<&BTreeMap<String, String>> = ctx
        .rows
        .iter()
        .filter(|row| row.get(&req.filter_attr) == Some(&req.filter_value))
        .collect();
    match matches.as_slice() {
        [] => Outcome::Unanswerable,
        [row] => match row.get(&req.target_attr) {
            Some(v) => Outcome::Answer(v.clone()),
            None => Outcome::Unanswerable,
        },
        _ => Outcome::Ambiguous,
    }
}

fn observed(req: &Request, ctx: &ContextTable) -> Outcome {
    match eval_request(req, ctx) {
        Ok(v) => Outcome::Answer(v),
        Err(e) if e.to_string().contains("ambiguous") => Outcome::Ambiguous,
        Err(_) => Outcome::Unanswerable,
    }
}

fn random_instance(r: &mut rng::Rng) -> (Request, ContextTable) {
    let n_attrs = r.gen_range(2..=4usize);
    let mut attrs = ATTRS.to_vec();
    attrs.shuffle(r);
    let schema: Vec<String> = attrs[..n_attrs].iter().map(|s| s.to_string()).collect();

    let n_rows = r.gen_range(1..=4usize);
    let rows: Vec<BTreeMap<String, String>> = (0..n_rows)
        .map(|_| {
            schema
                .iter()
                // A narrow value pool on purpose: collisions across rows are
                // what exercise the ambiguous branch.
                .map(|a| (a.clone(), VALUES[r.gen_range(0..3usize)].to_string()))
                .collect()
        })
        .collect();
    let ctx = ContextTable::new(schema.clone(), rows).unwrap();

    // Sometimes step outside the schema or the present values so every
    // outcome class appears.
    let pick_attr = |r: &mut rng::Rng| {
        if r.gen_bool(0.8) {
            schema[r.gen_range(0..schema.len())].clone()
        } else {
            ATTRS[r.gen_range(0..ATTRS.len())].to_string()
        }
    };
    let request = Request::new(
        &pick_attr(r),
        &pick_attr(r),
        VALUES[r.gen_range(0..VALUES.len())],
    );
    (request, ctx)
}

#[test]
fn eval_request_agrees_with_brute_force_on_1000_instances() {
    let mut r = rng::seeded(41);
    let mut seen = [0usize; 3];
    for i in 0..1000 {
        let (req, ctx) = random_instance(&mut r);
        let want = brute_force(&req, &ctx);
        let got = observed(&req, &ctx);
        assert_eq!(got, want, "instance {i}: [{req}] on {ctx:?}");
        seen[match want {
            Outcome::Answer(_) => 0,
            Outcome::Unanswerable => 1,
            Outcome::Ambiguous => 2,
        }] += 1;
    }
    assert!(
        seen.iter().all(|&c| c > 50),
        "sampler failed to exercise all outcome classes: {seen:?}"
    );
}

#[test]
fn cross_label_agrees_with_brute_force_on_example_pairs() {
    let mut r = rng::seeded(42);
    let wrap = |req: Request, ctx: ContextTable| OrionExample {
        prompt_text: String::new(),
        context: ctx,
        request: req,
        label_token: String::new(),
        template_id: "abstract".into(),
        rng_seed: 0,
    };
    for i in 0..500 {
        let (req1, ctx1) = random_instance(&mut r);
        let (_, ctx2) = random_instance(&mut r);
        let x1 = wrap(req1, ctx1);
        let x2 = wrap(Request::new("name", "city", " Lisbon"), ctx2);
        let want = brute_force(&x1.request, &x2.context);
        let got = match cross_label(&x1, &x2) {
            Ok(v) => Outcome::Answer(v),
            Err(e) if e.to_string().contains("ambiguous") => Outcome::Ambiguous,
            Err(_) => Outcome::Unanswerable,
        };
        assert_eq!(got, want, "pair {i}");
    }
}
