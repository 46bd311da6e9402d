//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Pass a substring to run matching criteria only.

mod depth;
mod engine;
mod gradients;
mod lod;
mod store;
mod training;

use std::time::Instant;

pub struct Outcome {
    pub passed: bool,
    pub detail: String,
}

impl Outcome {
    pub fn check(passed: bool, detail: impl Into<String>) -> Self {
        Outcome {
            passed,
            detail: detail.into(),
        }
    }
}

type Criterion = (u32, &'static str, fn() -> Outcome);

const CRITERIA: &[Criterion] = &[
    (1, "expected-depth quadrature oracle", depth::quadrature_oracle),
    (2, "combined-loss gradient check", gradients::combined_loss_gradient_check),
    (3, "expected-depth degeneracies", depth::degeneracies),
    (4, "scale-factor and level-selection tables", lod::formula_tables),
    (5, "synthetic training proxy", training::synthetic_training_proxy),
    (6, "random-resolution-level statistics", training::rrl_statistics),
    (7, "level builder spacing on a grid cloud", lod::grid_cloud_levels),
    (8, "octree store round trip", store::fuzzed_round_trip),
    (9, "LOD efficiency from a distant view", engine::lod_efficiency),
    (10, "memory budget and determinism", engine::budget_and_determinism),
];

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let selected: Vec<&Criterion> = CRITERIA
        .iter()
        .filter(|(n, name, _)| filters.is_empty() || filters.iter().any(|f| name.contains(f.as_str()) || n.to_string() == *f))
        .collect();
    let mut failed = 0;
    for (n, name, run) in selected {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Outcome::check(false, format!("panicked: {msg}"))
        });
        let verdict = if outcome.passed { "PASS" } else { "FAIL" };
        println!("criterion {n:>2} {verdict}  {name}: {} [{:.1}s]", outcome.detail, start.elapsed().as_secs_f64());
        if !outcome.passed {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
