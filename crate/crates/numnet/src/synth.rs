//! Synthetic corpus generator for hermetic desk-scale experiments.
//!
//! Three template families exercise the three numeric skills: comparison
//! questions (span answers decided by which quantity is larger), arithmetic
//! questions over sorted field-goal distances (signed-sum answers), and
//! threshold counting over fixed-shape percentage listings. Golds are
//! computed from the generated numbers, so every example is consistent by
//! construction, and generation is a pure function of (seed, index).

use crate::rng::RngStream;
use crate::textnum::{make_example, Corpus, DropExample, GoldAnswer, Split};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Comparison,
    Arithmetic,
    Count,
    /// Round-robin over the three concrete families.
    Mixed,
}

impl std::str::FromStr for Family {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "comparison" => Ok(Family::Comparison),
            "arithmetic" => Ok(Family::Arithmetic),
            "count" => Ok(Family::Count),
            "mixed" => Ok(Family::Mixed),
            other => Err(format!("unknown family '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub family: Family,
    pub size: usize,
    pub seed: u64,
    /// Value range for comparison and arithmetic quantities.
    pub value_lo: i64,
    pub value_hi: i64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            family: Family::Mixed,
            size: 100,
            seed: 42,
            value_lo: 10,
            value_hi: 99,
        }
    }
}

const LABELS: [&str; 10] = [
    "red", "blue", "green", "amber", "violet", "coral", "ivory", "maroon", "olive", "teal",
];
const KICKERS: [&str; 8] = [
    "Janssen", "Mora", "Kowalski", "Froman", "Ortiz", "Baker", "Nilsson", "Drake",
];

fn gold_span(text: &str) -> GoldAnswer {
    GoldAnswer {
        number: None,
        spans: vec![text.to_string()],
        unsupported_date: false,
    }
}

fn gold_number(n: i64) -> GoldAnswer {
    GoldAnswer {
        number: Some(n.to_string()),
        spans: vec![],
        unsupported_date: false,
    }
}

/// Draw `k` distinct integers from `[lo, hi]`.
fn distinct_values(rng: &mut RngStream, k: usize, lo: i64, hi: i64) -> Vec<i64> {
    assert!(hi - lo + 1 >= k as i64, "range too small for {k} distinct values");
    let mut out: Vec<i64> = Vec::with_capacity(k);
    while out.len() < k {
        let v = rng.range(lo, hi);
        if !out.contains(&v) {
            out.push(v);
        }
    }
    out
}

fn comparison_example(spec: &SyntheticSpec, index: usize, rng: &mut RngStream) -> DropExample {
    let values = distinct_values(rng, 3, spec.value_lo, spec.value_hi);
    let mut labels: Vec<&str> = Vec::with_capacity(3);
    while labels.len() < 3 {
        let l = LABELS[rng.below(LABELS.len())];
        if !labels.contains(&l) {
            labels.push(l);
        }
    }
    let passage = format!(
        "The survey counted {} {} items , {} {} items and {} {} items in the final report .",
        values[0], labels[0], values[1], labels[1], values[2], labels[2]
    );
    let a = rng.below(3);
    let b = (a + 1 + rng.below(2)) % 3;
    let larger = rng.below(2) == 0;
    let question = format!(
        "Which group is {} : {} or {} ?",
        if larger { "larger" } else { "smaller" },
        labels[a],
        labels[b]
    );
    let answer = if (values[a] > values[b]) == larger {
        labels[a]
    } else {
        labels[b]
    };
    make_example(
        &format!("synth-comparison-{index}"),
        &format!("comparison-{index}"),
        &passage,
        &question,
        vec![gold_span(answer)],
    )
}

fn arithmetic_example(spec: &SyntheticSpec, index: usize, rng: &mut RngStream) -> DropExample {
    let values = distinct_values(rng, 3, spec.value_lo, spec.value_hi);
    let kicker = KICKERS[rng.below(KICKERS.len())];
    let passage = format!(
        "{kicker} kicked a {} yard field goal in the first quarter . He added a {} yard field goal before the break . He finished with a {} yard field goal in the fourth quarter .",
        values[0], values[1], values[2]
    );
    let mut sorted = values.clone();
    sorted.sort_unstable();
    let over_shortest = rng.below(2) == 0;
    let (question, gold) = if over_shortest {
        (
            "How many more yards was his longest field goal over his shortest one ?".to_string(),
            sorted[2] - sorted[0],
        )
    } else {
        (
            "How many more yards was his longest field goal over his second longest one ?".to_string(),
            sorted[2] - sorted[1],
        )
    };
    make_example(
        &format!("synth-arithmetic-{index}"),
        &format!("arithmetic-{index}"),
        &passage,
        &question,
        vec![gold_number(gold)],
    )
}

// Group names must stay digit-free so the percentages are the only
// passage numbers.
const COUNT_GROUPS: [&str; 6] = [
    "children",
    "teenagers",
    "young adults",
    "middle aged adults",
    "older adults",
    "seniors",
];

fn count_example(_spec: &SyntheticSpec, index: usize, rng: &mut RngStream) -> DropExample {
    // Fixed-shape listing: six single-token percentages keep every count
    // passage the same length.
    let values = distinct_values(rng, 6, 1, 20);
    let threshold = rng.range(1, 19);
    let clauses: Vec<String> = values
        .iter()
        .zip(COUNT_GROUPS.iter())
        .map(|(v, g)| format!("{v} % were {g}"))
        .collect();
    let passage = format!("Of the population , {} .", clauses.join(" , "));
    let question =
        format!("How many age groups made up more than {threshold} % of the population ?");
    let gold = values.iter().filter(|&&v| v > threshold).count() as i64;
    make_example(
        &format!("synth-count-{index}"),
        &format!("count-{index}"),
        &passage,
        &question,
        vec![gold_number(gold)],
    )
}

/// Generate a corpus. Each example derives from its own labeled stream, so
/// example `i` is identical across runs and corpus sizes.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Corpus {
    assert!(spec.size >= 1, "size must be >= 1");
    let examples = (0..spec.size)
        .map(|i| {
            let mut rng = RngStream::new(spec.seed, "synth", i as u64);
            let family = match spec.family {
                Family::Mixed => match i % 3 {
                    0 => Family::Comparison,
                    1 => Family::Arithmetic,
                    _ => Family::Count,
                },
                f => f,
            };
            match family {
                Family::Comparison => comparison_example(spec, i, &mut rng),
                Family::Arithmetic => arithmetic_example(spec, i, &mut rng),
                Family::Count => count_example(spec, i, &mut rng),
                Family::Mixed => unreachable!(),
            }
        })
        .collect();
    Corpus {
        examples,
        split: Split::Train,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::answer::{enumerate_supervision, SupervisionConfig};
    use crate::metrics::gold_strings;
    use crate::textnum::find_comparison;

    #[test]
    fn generation_is_deterministic() {
        let spec = SyntheticSpec {
            size: 30,
            ..SyntheticSpec::default()
        };
        let a = gen_synthetic(&spec);
        let b = gen_synthetic(&spec);
        assert_eq!(a, b);
        let bytes_a = crate::textnum::save_drop_json(&a);
        let bytes_b = crate::textnum::save_drop_json(&b);
        assert_eq!(bytes_a, bytes_b);
    }

    #[test]
    fn comparison_gold_is_consistent() {
        let spec = SyntheticSpec {
            family: Family::Comparison,
            size: 40,
            seed: 7,
            ..SyntheticSpec::default()
        };
        for ex in &gen_synthetic(&spec).examples {
            // The gold label sits in the passage right after its value.
            let gold = &ex.gold_answers[0].spans[0];
            let gold_pos = ex
                .passage_tokens
                .iter()
                .position(|t| t.text == *gold)
                .expect("gold label in passage");
            let value_tok = &ex.passage_tokens[gold_pos - 1].text;
            let gold_value: i64 = value_tok.parse().unwrap();
            // It must be the larger (or smaller) of the two asked labels.
            let q = ex.question_text.clone();
            let larger = q.contains("larger");
            let m = find_comparison(&ex.question_tokens).expect("comparing pattern");
            for span in [(m.a_start, m.a_end), (m.b_start, m.b_end)] {
                let label = &ex.question_tokens[span.0].text;
                if label == gold {
                    continue;
                }
                let pos = ex
                    .passage_tokens
                    .iter()
                    .position(|t| t.text == *label)
                    .unwrap();
                let other: i64 = ex.passage_tokens[pos - 1].text.parse().unwrap();
                if larger {
                    assert!(gold_value > other);
                } else {
                    assert!(gold_value < other);
                }
            }
        }
    }

    #[test]
    fn arithmetic_gold_is_a_difference() {
        let spec = SyntheticSpec {
            family: Family::Arithmetic,
            size: 40,
            seed: 3,
            ..SyntheticSpec::default()
        };
        for ex in &gen_synthetic(&spec).examples {
            let gold: f64 = ex.gold_answers[0].number.as_deref().unwrap().parse().unwrap();
            let mut values: Vec<f64> = ex.passage_numbers.iter().map(|n| n.value).collect();
            values.sort_by(|a, b| a.partial_cmp(b).unwrap());
            assert!(
                (gold - (values[2] - values[1])).abs() < 1e-9
                    || (gold - (values[2] - values[0])).abs() < 1e-9
            );
            // Difference supervision must exist.
            let sup = enumerate_supervision(ex, &SupervisionConfig::default());
            assert!(!sup.sign_assignments.is_empty());
        }
    }

    #[test]
    fn count_gold_matches_threshold_rule() {
        let spec = SyntheticSpec {
            family: Family::Count,
            size: 40,
            seed: 9,
            ..SyntheticSpec::default()
        };
        for ex in &gen_synthetic(&spec).examples {
            let gold: i64 = ex.gold_answers[0].number.as_deref().unwrap().parse().unwrap();
            let threshold = ex.question_numbers[0].value;
            let above = ex
                .passage_numbers
                .iter()
                .filter(|n| n.value > threshold)
                .count() as i64;
            assert_eq!(gold, above);
            assert!((0..=9).contains(&gold));
        }
    }

    #[test]
    fn count_passages_have_fixed_shape() {
        let spec = SyntheticSpec {
            family: Family::Count,
            size: 10,
            seed: 1,
            ..SyntheticSpec::default()
        };
        let corpus = gen_synthetic(&spec);
        let len0 = corpus.examples[0].passage_tokens.len();
        for ex in &corpus.examples {
            assert_eq!(ex.passage_tokens.len(), len0);
            assert_eq!(ex.passage_numbers.len(), 6);
        }
    }

    #[test]
    fn mixed_covers_three_families() {
        let spec = SyntheticSpec {
            size: 9,
            ..SyntheticSpec::default()
        };
        let corpus = gen_synthetic(&spec);
        assert!(corpus.examples.iter().any(|e| e.query_id.starts_with("comparison")));
        assert!(corpus.examples.iter().any(|e| e.query_id.starts_with("arithmetic")));
        assert!(corpus.examples.iter().any(|e| e.query_id.starts_with("count")));
        for ex in &corpus.examples {
            assert!(!gold_strings(ex).is_empty());
        }
    }
}
