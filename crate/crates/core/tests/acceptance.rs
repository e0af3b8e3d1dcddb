//! Prints one PASS/FAIL/SKIP line per acceptance check and exits nonzero on
//! any failure. The oracle suites are the same functions the regular tests
//! run; the end-to-end checks share one seeded synthetic run plus a replay
//! and a control run with the reversal weight frozen at zero.

// Each suite declares its own copy of the shared test helpers.
#![allow(clippy::duplicate_mod)]

#[allow(dead_code)]
#[path = "paths.rs"]
mod paths;

use std::collections::BTreeMap;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use kbc_core::config::RunConfig;
use kbc_core::dataset::{self, Prepared};
use kbc_core::eval::{self, aggregate, rank_relations, EvalReport};
use kbc_core::export;
use kbc_core::kb::TrainingPair;
use kbc_core::model::Model;
use kbc_core::paths::Hop;
use kbc_core::synth::{generate, SynthConfig, SyntheticKb};
use kbc_core::trainer::{lambda_schedule, lr_schedule, Outputs, TrainData, TrainState, Trainer};

const SYNTH_CONFIG: &str = "\
max_paths_per_pair = 16
d_r = 32
d_h = 32
d_a = 32
extractor_hidden = 48
d_f = 32
batch_size = 20
pretrain_epochs = 12
disc_pretrain_epochs = 3
epochs = 20
";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Verdict {
    Pass,
    Fail,
    Skip,
}

struct Ledger {
    failed: bool,
}

impl Ledger {
    fn report(&mut self, name: &str, verdict: Verdict, detail: impl AsRef<str>) {
        let tag = match verdict {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::Skip => "SKIP",
        };
        self.failed |= verdict == Verdict::Fail;
        println!("{tag} {name}: {}", detail.as_ref());
    }

    fn check(&mut self, name: &str, ok: bool, detail: impl AsRef<str>) {
        self.report(name, if ok { Verdict::Pass } else { Verdict::Fail }, detail);
    }
}

fn panic_message(payload: Box<dyn std::any::Any + Send>) -> String {
    payload
        .downcast_ref::<String>()
        .cloned()
        .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "panicked".into())
        .replace('\n', " ")
}

/// Runs every case, stopping at the first failure; returns the elapsed time.
fn run_suite(cases: &[(&str, fn())]) -> (Result<(), String>, Duration) {
    let start = Instant::now();
    for (name, case) in cases {
        if let Err(p) = std::panic::catch_unwind(case) {
            return (Err(format!("{name}: {}", panic_message(p))), start.elapsed());
        }
    }
    (Ok(()), start.elapsed())
}

fn suite_check(ledger: &mut Ledger, name: &str, cases: &[(&str, fn())], budget: Option<Duration>) {
    let (result, elapsed) = run_suite(cases);
    let secs = elapsed.as_secs_f64();
    match (result, budget) {
        (Err(e), _) => ledger.check(name, false, e),
        (Ok(()), Some(b)) => ledger.check(
            name,
            elapsed <= b,
            format!("{} cases in {secs:.1} s (limit {} s)", cases.len(), b.as_secs()),
        ),
        (Ok(()), None) => ledger.check(name, true, format!("{} cases in {secs:.1} s", cases.len())),
    }
}

struct Run {
    trainer_log: Vec<(String, Vec<u8>)>,
    report: EvalReport,
    report_bytes: Vec<u8>,
    attention: Vec<export::PairAttention>,
    attention_tsv: String,
    final_disc_acc: Option<f64>,
    elapsed: Duration,
}

fn synth_config(seed: u64, fixed_lambda: Option<f64>) -> RunConfig {
    let mut config = RunConfig::default();
    config.apply_text(SYNTH_CONFIG, Path::new("acceptance")).unwrap();
    config.set_seed(seed);
    config.train.fixed_lambda = fixed_lambda;
    config
}

fn synthetic_data(config: &RunConfig) -> (SyntheticKb, Prepared) {
    let kb = generate(&SynthConfig::default()).unwrap();
    let heads = kb.rule_heads();
    let (prepared, _) = dataset::prepare(kb.graph.clone(), &config.sampler, Some(&heads), config.seed).unwrap();
    (kb, prepared)
}

fn train_and_evaluate(config: &RunConfig, out: &Path) -> kbc_core::Result<Run> {
    let start = Instant::now();
    let (_, data) = synthetic_data(config);
    let model = Model::new(config.model.clone(), data.graph.num_forward_relations(), config.seed);
    let mut state = TrainState::new(model);
    state.relation_vocab = Some(data.graph.relations().fingerprint());
    let outputs = Outputs {
        checkpoint: Some(out.join("model.ckpt")),
        log: Some(out.join("train_log.csv")),
        epoch_log: Some(out.join("epochs.csv")),
    };
    let train_data = TrainData {
        graph: &data.graph,
        path_sets: &data.path_sets,
        train: &data.split.train,
        valid: &data.split.valid,
    };
    let mut trainer = Trainer::new(config.train.clone(), train_data, state, outputs)?;
    trainer.run()?;
    let model = &trainer.state.model;
    let chunk = config.train.eval_chunk;
    let test = &data.split.test;
    let (report, results) = eval::evaluate(
        model,
        &data.graph,
        test,
        &data.path_sets,
        &data.split.train,
        "test",
        chunk,
    )?;
    eval::write_report(out, &report, &results, &data.graph)?;
    let attention = export::attention(model, &data.graph, test, &data.path_sets, chunk)?;
    let attention_tsv = export::attention_tsv(&attention);
    let elapsed = start.elapsed();
    let final_disc_acc = trainer.epochs.iter().rev().find_map(|e| e.heldout_disc_acc);

    let mut trainer_log = Vec::new();
    for entry in std::fs::read_dir(out).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        if name.ends_with(".csv") || name.starts_with("rankings") {
            trainer_log.push((name, std::fs::read(&path).unwrap()));
        }
    }
    trainer_log.sort();
    Ok(Run {
        trainer_log,
        report_bytes: report.to_json()?.into_bytes(),
        report,
        attention,
        attention_tsv,
        final_disc_acc,
        elapsed,
    })
}

fn fmt_acc(a: Option<f64>) -> String {
    a.map_or_else(|| "none".into(), |v| format!("{v:.3}"))
}

fn schedule_checks(ledger: &mut Ledger) {
    let l0 = lambda_schedule(0.0, 10.0);
    let l_big = lambda_schedule(1e3, 10.0);
    let l_tenth = lambda_schedule(0.1, 10.0);
    let e0 = lr_schedule(0.0, 10.0, 0.005);
    let e1 = lr_schedule(1.0, 10.0, 0.005);
    let ok = l0 == 0.0
        && (1.0 - l_big).abs() <= 1e-12
        && (l_tenth - 0.46212).abs() <= 1e-5
        && e0 == 0.005
        && (e1 - 0.0015076).abs() <= 1e-6;
    ledger.check(
        "schedules",
        ok,
        format!("lambda(0)={l0}, lambda(1e3)={l_big}, lambda(0.1)={l_tenth:.6}, eta(0)={e0}, eta(1)={e1:.7}"),
    );
}

/// Weights are distributions, and the planted composition tops most rule pairs.
fn attention_checks(ledger: &mut Ledger, kb: &SyntheticKb, data: &Prepared, run: &Run) {
    let test = &data.split.test;
    let mut worst: f64 = 0.0;
    let mut negative = false;
    let (mut planted_top, mut rule_pairs) = (0usize, 0usize);
    for (pair, table) in test.iter().zip(&run.attention) {
        let path_sum: f64 = table.rows.iter().map(|r| r.path_weight).sum();
        worst = worst.max((path_sum - 1.0).abs());
        for row in &table.rows {
            negative |= row.path_weight < 0.0 || row.hops.iter().any(|h| h.2 < 0.0);
            let hop_sum: f64 = row.hops.iter().map(|h| h.2).sum();
            worst = worst.max((hop_sum - 1.0).abs());
        }
        if let Some(rule) = kb.rule_for(pair.label) {
            rule_pairs += 1;
            let planted = [Hop::forward(rule.first.0), Hop::forward(rule.second.0)];
            let top = &data.path_sets[pair.path_set].paths[table.rows[0].path_index];
            planted_top += usize::from(top.hops == planted);
        }
    }
    let share = planted_top as f64 / rule_pairs.max(1) as f64;
    ledger.check(
        "attention",
        !negative && worst <= 1e-9 && rule_pairs > 0 && share >= 0.8,
        format!(
            "max |sum - 1| {worst:.1e}, negative weights {negative}, planted path on top in {planted_top}/{rule_pairs} ({:.1}%, need 80%)",
            100.0 * share
        ),
    );
}

/// Scores every relation by its training frequency.
fn frequency_prior(
    train: &[TrainingPair],
    graph: &kbc_core::kb::KnowledgeGraph,
    test: &[TrainingPair],
) -> eval::Metrics {
    let mut counts = vec![0.0; graph.num_forward_relations()];
    for p in train {
        counts[p.label.index()] += 1.0;
    }
    let ranks: Vec<usize> = test
        .iter()
        .map(|p| rank_relations(p, &counts, graph).filtered_rank)
        .collect();
    aggregate(&ranks).unwrap()
}

fn wordnet_check(ledger: &mut Ledger) {
    let name = "wn18rr (soft)";
    let Some(dir) = std::env::var_os("KBC_WN18RR_DIR") else {
        ledger.report(
            name,
            Verdict::Skip,
            "set KBC_WN18RR_DIR to a directory of WN18RR triple files",
        );
        return;
    };
    let start = Instant::now();
    let result = (|| -> kbc_core::Result<(eval::Metrics, eval::Metrics)> {
        let config = synth_config(0, None);
        let graph = dataset::load_graph_dir(Path::new(&dir))?;
        let (data, _) = dataset::prepare(graph, &config.sampler, None, config.seed)?;
        let model = Model::new(config.model.clone(), data.graph.num_forward_relations(), config.seed);
        let train_data = TrainData {
            graph: &data.graph,
            path_sets: &data.path_sets,
            train: &data.split.train,
            valid: &data.split.valid,
        };
        let mut trainer = Trainer::new(
            config.train.clone(),
            train_data,
            TrainState::new(model),
            Outputs::default(),
        )?;
        trainer.run()?;
        let test = &data.split.test;
        let (report, _) = eval::evaluate(
            &trainer.state.model,
            &data.graph,
            test,
            &data.path_sets,
            &data.split.train,
            "test",
            config.train.eval_chunk,
        )?;
        Ok((report.overall, frequency_prior(&data.split.train, &data.graph, test)))
    })();
    let hours = start.elapsed().as_secs_f64() / 3600.0;
    match result {
        Ok((m, prior)) => {
            let gain = m.hits_at_1 - prior.hits_at_1;
            ledger.check(
                name,
                m.hits_at_10 >= 0.85 && gain >= 0.15 && hours <= 2.0,
                format!(
                    "Hits@10 {:.4} (>= 0.85), Hits@1 {:.4} vs prior {:.4} (gain >= 0.15), {hours:.2} h (<= 2 h)",
                    m.hits_at_10, m.hits_at_1, prior.hits_at_1
                ),
            );
        }
        Err(e) => ledger.check(name, false, e.to_string()),
    }
}

fn main() -> ExitCode {
    std::panic::set_hook(Box::new(|_| {}));
    let mut ledger = Ledger { failed: false };

    suite_check(
        &mut ledger,
        "gradients",
        &[
            ("matmul_family", gradients::matmul_family),
            ("elementwise_ops", gradients::elementwise_ops),
            ("broadcast_ops", gradients::broadcast_ops),
            ("softmax_ops", gradients::softmax_ops),
            ("structural_ops", gradients::structural_ops),
            ("reductions", gradients::reductions),
            ("loss_ops", gradients::loss_ops),
            (
                "grl_at_zero_lambda_blocks_gradient",
                gradients::grl_at_zero_lambda_blocks_gradient,
            ),
            ("gru_step_gradient", gradients::gru_step_gradient),
            (
                "micro_model_loss_without_discriminator",
                gradients::micro_model_loss_without_discriminator,
            ),
            (
                "micro_model_total_loss_with_reversal",
                gradients::micro_model_total_loss_with_reversal,
            ),
        ],
        Some(Duration::from_secs(120)),
    );
    suite_check(
        &mut ledger,
        "gradient reversal",
        &[
            ("forward_is_bit_identical", grl::forward_is_bit_identical),
            (
                "backward_scales_upstream_by_minus_lambda",
                grl::backward_scales_upstream_by_minus_lambda,
            ),
            (
                "reversal_flips_upstream_gradients_and_leaves_head_alone",
                grl::reversal_flips_upstream_gradients_and_leaves_head_alone,
            ),
        ],
        None,
    );
    suite_check(
        &mut ledger,
        "path enumeration",
        &[(
            "enumeration_matches_exhaustive_dfs_on_random_graphs",
            paths::enumeration_matches_exhaustive_dfs_on_random_graphs,
        )],
        Some(Duration::from_secs(60)),
    );
    suite_check(
        &mut ledger,
        "filtered ranking",
        &[
            (
                "filtered_rank_matches_rescan_on_tiny_kbs",
                ranking::filtered_rank_matches_rescan_on_tiny_kbs,
            ),
            (
                "aggregate_matches_direct_arithmetic",
                ranking::aggregate_matches_direct_arithmetic,
            ),
        ],
        None,
    );

    let dirs: Vec<tempfile::TempDir> = (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
    let main_config = synth_config(0, None);
    let runs = (
        train_and_evaluate(&main_config, dirs[0].path()),
        train_and_evaluate(&main_config, dirs[1].path()),
        train_and_evaluate(&synth_config(0, Some(0.0)), dirs[2].path()),
    );
    match &runs.0 {
        Ok(run) => {
            let m = &run.report.overall;
            let secs = run.elapsed.as_secs_f64();
            ledger.check(
                "synthetic end-to-end",
                m.hits_at_1 >= 0.95 && m.mean_rank <= 1.2 && secs <= 600.0,
                format!(
                    "test Hits@1 {:.4} (>= 0.95), MR {:.4} (<= 1.2), {} pairs, {secs:.0} s (<= 600 s)",
                    m.hits_at_1, m.mean_rank, m.pairs
                ),
            );
        }
        Err(e) => ledger.check("synthetic end-to-end", false, e.to_string()),
    }
    match (&runs.0, &runs.2) {
        (Ok(main), Ok(control)) => {
            let in_band = main.final_disc_acc.is_some_and(|a| (0.4..=0.6).contains(&a));
            let control_high = control.final_disc_acc.is_some_and(|a| a >= 0.8);
            ledger.check(
                "adversarial convergence",
                in_band && control_high,
                format!(
                    "held-out discriminator accuracy {} (0.5 +/- 0.1), control with lambda = 0: {} (>= 0.8)",
                    fmt_acc(main.final_disc_acc),
                    fmt_acc(control.final_disc_acc)
                ),
            );
        }
        (Err(e), _) | (_, Err(e)) => ledger.check("adversarial convergence", false, e.to_string()),
    }
    schedule_checks(&mut ledger);
    match (&runs.0, &runs.1) {
        (Ok(a), Ok(b)) => {
            let names: BTreeMap<_, _> = a.trainer_log.iter().map(|(n, _)| (n.clone(), ())).collect();
            let same = a.trainer_log == b.trainer_log
                && a.report_bytes == b.report_bytes
                && a.attention_tsv == b.attention_tsv;
            ledger.check(
                "determinism",
                same,
                format!(
                    "{} log and ranking files, report and attention export {}",
                    names.len(),
                    if same { "byte-equal" } else { "differ" }
                ),
            );
        }
        (Err(e), _) | (_, Err(e)) => ledger.check("determinism", false, e.to_string()),
    }
    wordnet_check(&mut ledger);
    match &runs.0 {
        Ok(run) => {
            let (kb, data) = synthetic_data(&main_config);
            attention_checks(&mut ledger, &kb, &data, run);
        }
        Err(e) => ledger.check("attention", false, e.to_string()),
    }

    if ledger.failed {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
