//! Plain-text and CSV renderers. The report is a human summary; the CSVs
//! carry the plot-ready numbers, one row per (layer, label) curve point.

use std::fmt::Write as _;

use orion_core::intervene::SweepResult;

use crate::config::ExperimentConfig;
use crate::runner::ReportInputs;

/// Layer curves in long form: one row per layer and patched-answer label.
/// `normalized_probability` is the pair-mean label probability divided by the
/// baseline correct-token probability; `accuracy` is the raw interchange
/// accuracy for that label.
pub fn sweep_csv(sweep: &SweepResult) -> String {
    let mut out = String::from("layer,label,normalized_probability,accuracy\n");
    for l in &sweep.layers {
        for (label, p, acc) in [
            ("r1c1", l.p_r1c1, l.acc_r1c1),
            ("r1c2", l.p_r1c2, l.acc_r1c2),
            ("r2c2", l.p_r2c2, l.acc_r2c2),
        ] {
            writeln!(out, "{},{label},{p},{acc}", l.layer).expect("string write");
        }
    }
    out
}

fn fmt_layer(l: Option<usize>, fallback: &str) -> String {
    match l {
        Some(v) => v.to_string(),
        None => format!("undefined ({fallback})"),
    }
}

pub fn render_report(cfg: &ExperimentConfig, hash: &str, inputs: &ReportInputs) -> String {
    let mut out = String::new();
    let w = &mut out;
    writeln!(w, "ORION run {}", &hash[..12.min(hash.len())]).unwrap();
    writeln!(w, "task {}  seed {}", cfg.task, cfg.seed).unwrap();

    if let Some(b) = &inputs.baseline {
        writeln!(w, "\n[baseline]  model {}  n_examples {}", b.model_id, cfg.n_examples).unwrap();
        writeln!(
            w,
            "accuracy {:.3}  mean correct prob {:.3}  random guess {:.3}  logit diff {:.3}",
            b.accuracy, b.mean_correct_prob, b.random_guess_accuracy, b.logit_diff
        )
        .unwrap();
    }

    if let Some(s) = &inputs.sweep {
        writeln!(w, "\n[residual sweep]  pairs {}", s.n_pairs).unwrap();
        writeln!(w, "layer  P[r1(c1)]  P[r1(c2)]  P[r2(c2)]  acc[r1(c2)]norm").unwrap();
        for l in &s.layers {
            writeln!(
                w,
                "{:>5}  {:>9.3}  {:>9.3}  {:>9.3}  {:>15.3}",
                l.layer, l.p_r1c1, l.p_r1c2, l.p_r2c2, l.acc_r1c2_norm
            )
            .unwrap();
        }
    }

    if let Some(l) = &inputs.limits {
        writeln!(
            w,
            "\n[limit layers]  L1 {}  L2 {}  L3 {}  (threshold {:.2})",
            fmt_layer(l.l1, "fallback 0"),
            l.l2,
            fmt_layer(l.l3, "fallback last layer"),
            l.threshold
        )
        .unwrap();
    }

    if let Some(a) = &inputs.iia {
        writeln!(
            w,
            "\n[iia]  raw {:.3}  normalized {:.3}  terms r2c2@L1 {:.3}, r1c2@L2 {:.3}, r1c1@L3 {:.3}{}",
            a.iia_raw,
            a.iia_normalized,
            a.components[0],
            a.components[1],
            a.components[2],
            if a.used_fallback_l1 || a.used_fallback_l3 {
                "  (fallback limit layers in use)"
            } else {
                ""
            }
        )
        .unwrap();
    }

    if let Some(g) = &inputs.oversight {
        writeln!(
            w,
            "\n[oversight {}]  l2 {}  n {}  seed {}",
            g.variant.as_str(),
            g.l2,
            g.n,
            g.seed
        )
        .unwrap();
        writeln!(w, "\naccuracy (%)").unwrap();
        writeln!(w, "{:<14}{:>10}{:>12}", "distractor", "plain", "hardened").unwrap();
        for r in &g.reports {
            writeln!(
                w,
                "{:<14}{:>10.1}{:>12.1}",
                r.distractor_kind.as_str(),
                r.accuracy_plain,
                r.accuracy_hardened
            )
            .unwrap();
        }
        writeln!(w, "\ndetection frequency (%)").unwrap();
        writeln!(w, "{:<14}{:>8}{:>8}{:>8}", "distractor", "A", "B", "A|B").unwrap();
        for r in &g.reports {
            writeln!(
                w,
                "{:<14}{:>8.1}{:>8.1}{:>8.1}",
                r.distractor_kind.as_str(),
                r.freq_a,
                r.freq_b,
                r.freq_a_or_b
            )
            .unwrap();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use orion_core::intervene::SweepLayer;

    #[test]
    fn sweep_csv_has_three_rows_per_layer() {
        let sweep = SweepResult {
            n_pairs: 4,
            layers: vec![
                SweepLayer {
                    layer: 0,
                    p_r1c1: 0.1,
                    p_r1c2: 0.2,
                    p_r2c2: 0.9,
                    acc_r1c1: 0.0,
                    acc_r1c2: 0.25,
                    acc_r2c2: 1.0,
                    acc_r1c2_norm: 0.1,
                },
                SweepLayer {
                    layer: 1,
                    p_r1c1: 0.3,
                    p_r1c2: 0.8,
                    p_r2c2: 0.2,
                    acc_r1c1: 0.25,
                    acc_r1c2: 0.75,
                    acc_r2c2: 0.25,
                    acc_r1c2_norm: 0.7,
                },
            ],
        };
        let csv = sweep_csv(&sweep);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 1 + 2 * 3);
        assert_eq!(lines[0], "layer,label,normalized_probability,accuracy");
        assert_eq!(lines[1], "0,r1c1,0.1,0");
        assert_eq!(lines[5], "1,r1c2,0.8,0.75");
    }
}
