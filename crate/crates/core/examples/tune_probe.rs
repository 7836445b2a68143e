//! Temporary tuning probe: measures the directional criteria on candidate
//! task configs.

use ncap_core::losses::{LossKind, LossSpec};
use ncap_core::report::PriorType;
use ncap_core::toytask::{
    run_comparison, run_prior_analysis, PriorAnalysisOptions, TaskConfig,
};
use std::time::Instant;

fn check(name: &str, task: &TaskConfig, seeds: &[u64]) {
    let losses: Vec<LossSpec> = LossKind::ALL.into_iter().map(LossSpec::new).collect();
    let t0 = Instant::now();
    let report = run_comparison(task, &losses, seeds).unwrap();
    let compare_time = t0.elapsed().as_secs_f64();

    let mean = |kind: LossKind, f: fn(&ncap_core::report::RowMetrics) -> f64| {
        report
            .aggregate_for(kind)
            .and_then(|a| a.mean)
            .map(|m| f(&m))
            .unwrap_or(f64::NAN)
    };
    let per_seed_wins = |f: fn(&ncap_core::report::RowMetrics) -> f64| {
        seeds
            .iter()
            .filter(|&&s| {
                let get = |kind: LossKind| {
                    report
                        .rows
                        .iter()
                        .find(|r| r.loss == kind && r.seed == s)
                        .and_then(|r| r.metrics)
                        .unwrap()
                };
                f(&get(LossKind::Ce)) > f(&get(LossKind::CeSoftenedKl))
            })
            .count()
    };

    let conf_wins = per_seed_wins(|m| m.mean_confidence);
    let ece_word_wins = per_seed_wins(|m| m.ece_word);
    let ece_char_wins = per_seed_wins(|m| m.ece_char);
    let ce_acc = mean(LossKind::Ce, |m| m.accuracy);
    let soft_acc = mean(LossKind::CeSoftenedKl, |m| m.accuracy);
    let none_worst = report
        .aggregates
        .iter()
        .filter(|a| a.loss != LossKind::None)
        .all(|a| a.mean.map(|m| m.accuracy).unwrap_or(0.0) > mean(LossKind::None, |m| m.accuracy));

    println!(
        "== {name}: compare {compare_time:.0}s | ce acc {ce_acc:.3} conf {:.3} eceW {:.3} eceC {:.4} std {:.3} | soft acc {soft_acc:.3} conf {:.3} eceW {:.3} eceC {:.4} std {:.3}",
        mean(LossKind::Ce, |m| m.mean_confidence),
        mean(LossKind::Ce, |m| m.ece_word),
        mean(LossKind::Ce, |m| m.ece_char),
        mean(LossKind::Ce, |m| m.confidence_std),
        mean(LossKind::CeSoftenedKl, |m| m.mean_confidence),
        mean(LossKind::CeSoftenedKl, |m| m.ece_word),
        mean(LossKind::CeSoftenedKl, |m| m.ece_char),
        mean(LossKind::CeSoftenedKl, |m| m.confidence_std),
    );
    println!(
        "   crit5 conf {conf_wins}/10 eceW {ece_word_wins}/10 eceC {ece_char_wins}/10 | crit6 std_soft<std_ce {} | crit7 none_worst {none_worst}",
        mean(LossKind::CeSoftenedKl, |m| m.confidence_std) < mean(LossKind::Ce, |m| m.confidence_std),
    );

    let t1 = Instant::now();
    let pa = run_prior_analysis(task, &PriorAnalysisOptions::default(), seeds).unwrap();
    let tp = pa.aggregate_for(PriorType::Tp).unwrap().mean_pearson_cer;
    let ncap = pa.aggregate_for(PriorType::Ncap).unwrap().mean_pearson_cer;
    println!(
        "   crit8 ncap {ncap:?} < tp {tp:?}: {} ({:.0}s)",
        ncap.unwrap_or(f64::NAN) < tp.unwrap_or(f64::NAN),
        t1.elapsed().as_secs_f64()
    );
}

fn main() {
    let seeds: Vec<u64> = (0..10).collect();
    let base = TaskConfig::default();

    for (name, task) in [
        (
            "t100-h32",
            TaskConfig {
                train_size: 100,
                ..base.clone()
            },
        ),
        (
            "t100-h64",
            TaskConfig {
                train_size: 100,
                hidden_dim: 64,
                ..base.clone()
            },
        ),
        (
            "t200-h64",
            TaskConfig {
                train_size: 200,
                hidden_dim: 64,
                ..base.clone()
            },
        ),
        (
            "t200-h64-ep80",
            TaskConfig {
                train_size: 200,
                hidden_dim: 64,
                epochs: 80,
                ..base.clone()
            },
        ),
        (
            "t300-h64",
            TaskConfig {
                train_size: 300,
                hidden_dim: 64,
                ..base.clone()
            },
        ),
    ] {
        check(name, &task, &seeds);
    }
}
