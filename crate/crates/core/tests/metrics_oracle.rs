mod common;

use common::*;
use kragrec::eval::{evaluate, EvalInstance, MetricsReport};
use kragrec::llm::{Domain, MockLlm, MockPolicy};

fn monotone(m: &MetricsReport) -> bool {
    let (r3, r5) = (m.recall_at(3).unwrap_or(m.acc), m.recall_at(5).unwrap_or(m.acc));
    r5 >= r3 && r3 >= m.acc && (0.0..=1.0).contains(&m.acc) && r5 <= 1.0
}

#[test]
fn hand_row_flags_agree_with_stated_totals() {
    let count = |j: usize| ORACLE_ROWS.iter().filter(|r| r.hit[j]).count() as f64 / 20.0;
    assert_eq!((count(0), count(1), count(2)), ORACLE_EXPECTED);
}

#[test]
fn scripted_metrics_equal_hand_table() {
    let (instances, llm) = oracle_case();
    let ev = evaluate(&instances, &PromptOnly { llm, domain: Domain::Movies }, &[3, 5]);
    let m = &ev.metrics;
    assert_eq!((m.acc, m.recall_at(3).unwrap(), m.recall_at(5).unwrap()), ORACLE_EXPECTED);
    assert_eq!(m.unparseable, ORACLE_UNPARSEABLE);
    assert_eq!(m.ranked_instances, ORACLE_RANKED);
    assert_eq!(m.failures, 0);
    for (t, row) in ev.traces.iter().zip(&ORACLE_ROWS) {
        assert_eq!(t.correct, row.hit[0], "{}", t.user);
    }
    assert!(monotone(m));
}

#[test]
fn alphabetical_mock_equals_hand_table() {
    for seed in [1, 2, 3] {
        let inst = alphabetical_case(seed);
        let ev = evaluate(&inst, &PromptOnly { llm: alphabetical_mock(), domain: Domain::Movies }, &[3, 5]);
        let m = &ev.metrics;
        assert_eq!((m.acc, m.recall_at(3).unwrap(), m.recall_at(5).unwrap()), ALPHA_EXPECTED);
        assert_eq!(m.ranked_instances, 20);
        assert!(monotone(m));
    }
}

#[test]
fn always_first_with_target_first_is_perfect() {
    let (mut instances, _) = oracle_case();
    for i in &mut instances {
        i.candidates.swap(0, i.target);
        i.target = 0;
    }
    let ev = evaluate(&instances, &PromptOnly { llm: MockLlm::new(MockPolicy::AlwaysFirst), domain: Domain::Movies }, &[3, 5]);
    assert_eq!(ev.metrics.acc, 1.0);
    // a bare letter ranks nothing beyond the top choice
    assert_eq!(ev.metrics.recall_at(3), None);
}

#[test]
fn aggregation_ignores_instance_order() {
    let (instances, llm) = oracle_case();
    let rec = PromptOnly { llm, domain: Domain::Movies };
    let a = evaluate(&instances, &rec, &[3, 5]).metrics;
    let rev: Vec<EvalInstance> = instances.into_iter().rev().collect();
    let b = evaluate(&rev, &rec, &[3, 5]).metrics;
    assert_eq!(a, b);
}
