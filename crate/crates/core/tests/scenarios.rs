use std::path::Path;

use proptest::prelude::*;
use regex::Regex;

use dualguide::harness::{compare_modes, compute_metrics, run_episode, EndReason, EpisodeLog, Scenario};
use dualguide::orchestrator::Variant;

fn fixture(name: &str) -> Scenario {
    Scenario::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join(format!("fixtures/{name}.json"))).unwrap()
}

/// Mode sequence collapsed to one letter per run of lead or adaptation.
fn coarse_modes(log: &EpisodeLog) -> String {
    let mut out = String::new();
    for m in log.mode_sequence() {
        let c = match m.split(':').next() {
            Some("lead") => 'L',
            Some("adaptation") => 'A',
            _ => 'F',
        };
        if !out.ends_with(c) {
            out.push(c);
        }
    }
    out
}

#[test]
fn route_alternates_lead_and_adaptation() {
    let re = Regex::new("^L+A+L+A+L*$").unwrap();
    let s = fixture("route");
    for seed in 1..=5 {
        let run = run_episode(&s, Variant::Full, seed);
        assert_eq!(run.end, EndReason::Complete, "seed {seed}");
        let modes = coarse_modes(&EpisodeLog::parse(&run.text()).unwrap());
        assert!(re.is_match(&modes), "seed {seed}: {modes}");
        assert_eq!(run.metrics.tasks.len(), 2);
    }
}

#[test]
fn trivial_scenario_ends_immediately() {
    let s = fixture("trivial");
    for v in [Variant::Full, Variant::NonAdaptive] {
        let run = run_episode(&s, v, 7);
        assert_eq!(run.end, EndReason::Complete);
        let m = run.metrics;
        assert_eq!(m.time_s, 0.0);
        assert_eq!((m.collisions, m.interventions), (0, 0));
        assert!(m.tasks.is_empty());
    }
}

#[test]
fn detection_failure_times_out_with_interventions() {
    let run = run_episode(&fixture("detection_failure"), Variant::Full, 7);
    assert_eq!(run.end, EndReason::Timeout);
    assert!(run.metrics.timed_out);
    assert!(run.metrics.interventions > 0);
}

#[test]
fn comparison_has_a_row_per_seed_variant_and_task() {
    let s = fixture("route");
    let seeds = [3, 4, 5];
    let r = compare_modes(&s, &seeds);
    assert_eq!(r.rows.len(), seeds.len() * 2 * s.file.tasks.len());
    assert_eq!(r.rows_csv().lines().count(), r.rows.len() + 1);
}

/// Stage and wayfinding markers in a log; each may shift a span by one tick.
fn boundaries(log: &EpisodeLog) -> usize {
    log.records
        .iter()
        .filter(|r| {
            matches!(
                r.kind.as_str(),
                "task_start" | "servo_done" | "hand_on_target" | "task_complete" | "wayfind_start" | "wayfind_end"
            )
        })
        .count()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn stage_times_add_up_to_the_total(
        seed in 0u64..10_000,
        name in prop::sample::select(vec!["door_pull", "door_push", "elevator", "chair", "route"]),
        full in any::<bool>(),
    ) {
        let v = if full { Variant::Full } else { Variant::NonAdaptive };
        let run = run_episode(&fixture(name), v, seed);
        let log = EpisodeLog::parse(&run.text()).unwrap();
        let m = compute_metrics(&log).unwrap();
        prop_assert_eq!(&m, &run.metrics);
        let staged: f64 = m
            .tasks
            .iter()
            .map(|t| t.approach_s.unwrap_or(0.0) + t.locate_s.unwrap_or(0.0) + t.interact_s.unwrap_or(0.0))
            .sum();
        let tol = log.header.dt * boundaries(&log) as f64 + 1e-9;
        prop_assert!((staged + m.wayfinding_s - m.time_s).abs() <= tol,
            "{} + {} vs {} (tol {})", staged, m.wayfinding_s, m.time_s, tol);
    }

    #[test]
    fn episodes_are_deterministic(seed in 0u64..10_000, full in any::<bool>()) {
        let v = if full { Variant::Full } else { Variant::NonAdaptive };
        let s = fixture("elevator");
        prop_assert_eq!(run_episode(&s, v, seed).text(), run_episode(&s, v, seed).text());
    }
}
