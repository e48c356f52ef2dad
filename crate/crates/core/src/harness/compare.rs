//! Paired multi-seed comparison of two variants on one scenario.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::episode::run_episode;
use super::metrics::Metrics;
use super::scenario::Scenario;
use crate::orchestrator::Variant;

pub const STAGES: [&str; 3] = ["approach", "locate", "interact"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub seed: u64,
    pub variant: Variant,
    pub task: usize,
    pub object: u32,
    pub approach_s: Option<f64>,
    pub locate_s: Option<f64>,
    pub interact_s: Option<f64>,
    pub time_s: f64,
    pub interventions: u32,
    pub collisions: u32,
    pub timed_out: bool,
}

impl ComparisonRow {
    pub fn stage(&self, stage: &str) -> Option<f64> {
        match stage {
            "approach" => self.approach_s,
            "locate" => self.locate_s,
            "interact" => self.interact_s,
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub task: usize,
    pub stage: String,
    pub mean_a: f64,
    pub sd_a: f64,
    pub mean_b: f64,
    pub sd_b: f64,
    /// `mean_a - mean_b`.
    pub delta: f64,
    /// Fraction of seeds where `a` took strictly less time than `b`.
    pub win_rate_a: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub scenario: String,
    pub variant_a: Variant,
    pub variant_b: Variant,
    pub seeds: Vec<u64>,
    pub rows: Vec<ComparisonRow>,
    pub summary: Vec<StageSummary>,
    /// Mean Locate of `a` strictly below `b` for every task.
    pub locate_verdict: bool,
}

/// Mean and sample standard deviation; NaN for empty input.
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

fn rows_of(seed: u64, variant: Variant, m: &Metrics) -> Vec<ComparisonRow> {
    m.tasks
        .iter()
        .map(|t| ComparisonRow {
            seed,
            variant,
            task: t.index,
            object: t.object,
            approach_s: t.approach_s,
            locate_s: t.locate_s,
            interact_s: t.interact_s,
            time_s: m.time_s,
            interventions: m.interventions,
            collisions: m.collisions,
            timed_out: m.timed_out,
        })
        .collect()
}

/// Runs `a` and `b` on every seed and summarises the paired results.
pub fn compare_variants(scenario: &Scenario, seeds: &[u64], a: Variant, b: Variant) -> ComparisonReport {
    let per_seed: Vec<(Metrics, Metrics)> = seeds
        .par_iter()
        .map(|&s| (run_episode(scenario, a, s).metrics, run_episode(scenario, b, s).metrics))
        .collect();
    let n_tasks = scenario.file.tasks.len();

    let mut rows = Vec::new();
    for (&seed, (ma, mb)) in seeds.iter().zip(&per_seed) {
        rows.extend(rows_of(seed, a, ma));
        rows.extend(rows_of(seed, b, mb));
    }

    let stage_of = |m: &Metrics, task: usize, stage: &str| {
        m.tasks.iter().find(|t| t.index == task).and_then(|t| match stage {
            "approach" => t.approach_s,
            "locate" => t.locate_s,
            _ => t.interact_s,
        })
    };
    let mut summary = Vec::new();
    for task in 0..n_tasks {
        for stage in STAGES {
            let xa: Vec<f64> = per_seed.iter().filter_map(|(m, _)| stage_of(m, task, stage)).collect();
            let xb: Vec<f64> = per_seed.iter().filter_map(|(_, m)| stage_of(m, task, stage)).collect();
            let paired: Vec<(f64, f64)> = per_seed
                .iter()
                .filter_map(|(ma, mb)| Some((stage_of(ma, task, stage)?, stage_of(mb, task, stage)?)))
                .collect();
            let wins = paired.iter().filter(|(x, y)| x < y).count();
            let (mean_a, sd_a) = mean_sd(&xa);
            let (mean_b, sd_b) = mean_sd(&xb);
            summary.push(StageSummary {
                task,
                stage: stage.to_string(),
                mean_a,
                sd_a,
                mean_b,
                sd_b,
                delta: mean_a - mean_b,
                win_rate_a: if paired.is_empty() {
                    0.0
                } else {
                    wins as f64 / paired.len() as f64
                },
                n: paired.len(),
            });
        }
    }
    let locate_verdict = n_tasks > 0
        && summary
            .iter()
            .filter(|s| s.stage == "locate")
            .all(|s| s.mean_a < s.mean_b);
    ComparisonReport {
        scenario: scenario.name().to_string(),
        variant_a: a,
        variant_b: b,
        seeds: seeds.to_vec(),
        rows,
        summary,
        locate_verdict,
    }
}

/// Full against NonAdaptive.
pub fn compare_modes(scenario: &Scenario, seeds: &[u64]) -> ComparisonReport {
    compare_variants(scenario, seeds, Variant::Full, Variant::NonAdaptive)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.3}")).unwrap_or_default()
}

impl ComparisonReport {
    pub const ROWS_HEADER: &'static str =
        "seed,variant,task,object,approach_s,locate_s,interact_s,time_s,interventions,collisions,timed_out";
    pub const SUMMARY_HEADER: &'static str = "task,stage,mean_a,sd_a,mean_b,sd_b,delta,win_rate_a,n";

    pub fn rows_csv(&self) -> String {
        let mut out = format!("{}\n", Self::ROWS_HEADER);
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{:.3},{},{},{}",
                r.seed,
                r.variant,
                r.task,
                r.object,
                opt(r.approach_s),
                opt(r.locate_s),
                opt(r.interact_s),
                r.time_s,
                r.interventions,
                r.collisions,
                r.timed_out
            );
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let mut out = format!("{}\n", Self::SUMMARY_HEADER);
        for s in &self.summary {
            let _ = writeln!(
                out,
                "{},{},{:.3},{:.3},{:.3},{:.3},{:.3},{:.3},{}",
                s.task, s.stage, s.mean_a, s.sd_a, s.mean_b, s.sd_b, s.delta, s.win_rate_a, s.n
            );
        }
        out
    }

    /// Fixed-width table for terminals.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "scenario {}  seeds {}  a = {}  b = {}",
            self.scenario,
            self.seeds.len(),
            self.variant_a,
            self.variant_b
        );
        let _ = writeln!(
            out,
            "{:>4} {:<9} {:>15} {:>15} {:>8} {:>6}",
            "task", "stage", "a mean (sd)", "b mean (sd)", "delta", "win a"
        );
        for s in &self.summary {
            let _ = writeln!(
                out,
                "{:>4} {:<9} {:>15} {:>15} {:>8.2} {:>6.2}",
                s.task,
                s.stage,
                format!("{:.2} ({:.2})", s.mean_a, s.sd_a),
                format!("{:.2} ({:.2})", s.mean_b, s.sd_b),
                s.delta,
                s.win_rate_a
            );
        }
        let verdict = if self.locate_verdict { "yes" } else { "no" };
        let _ = writeln!(out, "locate shorter for {} in every task: {verdict}", self.variant_a);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_sd_matches_hand_values() {
        let (m, s) = mean_sd(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert_eq!(m, 5.0);
        assert!((s - (32.0f64 / 7.0).sqrt()).abs() < 1e-12);
        assert_eq!(mean_sd(&[3.0]), (3.0, 0.0));
        assert!(mean_sd(&[]).0.is_nan());
    }

    #[test]
    fn self_comparison_has_zero_deltas() {
        let s = Scenario::parse(include_str!("../../fixtures/door_pull.json")).unwrap();
        let r = compare_variants(&s, &[1, 2], Variant::Full, Variant::Full);
        assert_eq!(r.rows.len(), 2 * 2 * s.file.tasks.len());
        for st in &r.summary {
            assert_eq!(st.delta, 0.0);
            assert_eq!(st.win_rate_a, 0.0);
        }
        assert!(!r.locate_verdict);
        assert_eq!(r.rows_csv().lines().count(), 1 + r.rows.len());
    }
}
