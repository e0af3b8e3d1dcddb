use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use kbc_core::autodiff::Checkpoint;
use kbc_core::config::RunConfig;
use kbc_core::dataset::{self, Prepared};
use kbc_core::eval;
use kbc_core::export;
use kbc_core::kb::{SplitName, TrainingPair};
use kbc_core::model::Model;
use kbc_core::synth::{self, SynthConfig};
use kbc_core::trainer::{Outputs, Phase, TrainData, TrainState, Trainer};

const EFFECTIVE_CONFIG: &str = "effective.cfg";

/// Relation prediction over multi-hop paths with adversarial feature alignment.
#[derive(Debug, Parser)]
#[command(name = "kbc", version)]
struct Cli {
    /// `key = value` config file; KBC_<KEY> environment variables override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the `seed` key.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the `export_dir` key.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Writes a synthetic KB with planted composition rules into `data_dir`.
    Synth(SynthArgs),
    /// Loads triples, selects and splits pairs, and caches their paths.
    Prepare,
    /// Pre-trains, then runs joint adversarial training.
    Train(TrainArgs),
    /// Writes the filtered ranking report for one split.
    Eval(SplitArgs),
    /// Writes path and hop attention weights for selected pairs.
    ExportAttention(AttentionArgs),
    /// Writes code and feature vectors with their PCA projections.
    ExportFeatures(FeatureArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 500)]
    entities: usize,
    #[arg(long, default_value_t = 600)]
    triples_per_base: usize,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Stops after this many epochs across all phases; 0 writes the
    /// initialized checkpoint only.
    #[arg(long)]
    epochs: Option<usize>,
    /// Continues from the checkpoint instead of starting over.
    #[arg(long)]
    resume: bool,
}

#[derive(Debug, Args)]
struct SplitArgs {
    #[arg(long, default_value = "test")]
    split: SplitName,
}

#[derive(Debug, Args)]
struct AttentionArgs {
    /// Pair ids; when absent every pair of `--split` is exported.
    #[arg(long = "pair", value_delimiter = ',')]
    pairs: Vec<u32>,
    #[arg(long, default_value = "test")]
    split: SplitName,
}

#[derive(Debug, Args)]
struct FeatureArgs {
    #[arg(long, default_value = "test")]
    split: SplitName,
    /// PCA components.
    #[arg(long, default_value_t = 2)]
    k: usize,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        config.set_seed(seed);
    }
    if let Some(out) = &cli.out {
        config.export_dir = out.clone();
    }
    config.validate()?;
    Ok(config)
}

fn echo_config(config: &RunConfig) -> Result<()> {
    let path = config.export_dir.join(EFFECTIVE_CONFIG);
    export::write_text(&path, &config.to_text())?;
    Ok(())
}

fn load_prepared(config: &RunConfig) -> Result<Prepared> {
    Prepared::load(&config.cache_dir).with_context(|| {
        format!(
            "loading prepared data from {} (run `kbc prepare` first)",
            config.cache_dir.display()
        )
    })
}

fn load_model(config: &RunConfig, data: &Prepared) -> Result<Model> {
    let path = config.checkpoint_path();
    let ck = Checkpoint::load(&path)?;
    let state = TrainState::from_checkpoint(&ck).with_context(|| format!("reading {}", path.display()))?;
    state.check_vocabulary(&data.graph)?;
    Ok(state.model)
}

fn cmd_synth(config: &RunConfig, args: &SynthArgs) -> Result<()> {
    let kb = synth::generate(&SynthConfig {
        entities: args.entities,
        triples_per_base: args.triples_per_base,
        seed: config.seed,
        ..SynthConfig::default()
    })?;
    std::fs::create_dir_all(&config.data_dir).with_context(|| config.data_dir.display().to_string())?;
    let path = config.data_dir.join("triples.tsv");
    kb.write_triples(&path)?;
    let g = &kb.graph;
    let rules: Vec<String> = kb
        .rules
        .iter()
        .map(|r| {
            format!(
                "  {{\"head\": \"{}\", \"body\": [\"{}\", \"{}\"]}}",
                g.relation_display(r.head),
                g.relation_display(r.first),
                g.relation_display(r.second)
            )
        })
        .collect();
    // JSON keeps the rule list out of the triple-file glob.
    export::write_text(
        &config.data_dir.join("rules.json"),
        &format!("[\n{}\n]\n", rules.join(",\n")),
    )?;
    println!("wrote {} triples to {}", g.triples().len(), path.display());
    Ok(())
}

fn cmd_prepare(config: &RunConfig) -> Result<()> {
    let summary = dataset::prepare_dir(
        &config.data_dir,
        &config.cache_dir,
        &config.sampler,
        &config.target_relations,
        config.seed,
    )?;
    println!(
        "prepared {} train / {} valid / {} test pairs ({} dropped, {:.2} paths per pair) in {}",
        summary.train_pairs,
        summary.valid_pairs,
        summary.test_pairs,
        summary.dropped_pairs,
        summary.mean_paths_per_pair,
        config.cache_dir.display()
    );
    Ok(())
}

fn remove_if_present(path: &Path) -> Result<()> {
    match std::fs::remove_file(path) {
        Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(e).context(path.display().to_string()),
        _ => Ok(()),
    }
}

/// Drops log rows written after the checkpoint, e.g. by an interrupted epoch.
fn truncate_log(path: &Path, last_iteration: u64) -> Result<()> {
    let Ok(text) = std::fs::read_to_string(path) else {
        return Ok(());
    };
    let kept: Vec<&str> = text
        .lines()
        .enumerate()
        .filter(|(i, line)| {
            *i == 0
                || line
                    .split(',')
                    .next()
                    .and_then(|f| f.parse::<u64>().ok())
                    .is_some_and(|it| it <= last_iteration)
        })
        .map(|(_, l)| l)
        .collect();
    std::fs::write(path, kept.join("\n") + "\n").with_context(|| path.display().to_string())
}

fn iteration_logs(config: &RunConfig) -> Vec<PathBuf> {
    let mut logs: Vec<PathBuf> = [Phase::Pretrain, Phase::Discriminator]
        .iter()
        .map(|p| config.export_dir.join(format!("{}_train_log.csv", p.as_str())))
        .collect();
    logs.push(config.export_dir.join("train_log.csv"));
    logs
}

fn cmd_train(config: &RunConfig, args: &TrainArgs) -> Result<()> {
    let data = load_prepared(config)?;
    let ck_path = config.checkpoint_path();
    let log = config.export_dir.join("train_log.csv");
    let epoch_log = config.export_dir.join("epochs.csv");
    let state = if args.resume {
        let ck = Checkpoint::load(&ck_path).context("--resume needs an existing checkpoint")?;
        let state = TrainState::from_checkpoint(&ck)?;
        for path in iteration_logs(config) {
            truncate_log(&path, state.iteration)?;
        }
        state
    } else {
        for path in iteration_logs(config) {
            remove_if_present(&path)?;
        }
        remove_if_present(&epoch_log)?;
        let mut state = TrainState::new(Model::new(
            config.model.clone(),
            data.graph.num_forward_relations(),
            config.seed,
        ));
        state.relation_vocab = Some(data.graph.relations().fingerprint());
        state
    };
    if let Some(parent) = ck_path.parent() {
        std::fs::create_dir_all(parent).with_context(|| parent.display().to_string())?;
    }
    let train_data = TrainData {
        graph: &data.graph,
        path_sets: &data.path_sets,
        train: &data.split.train,
        valid: &data.split.valid,
    };
    let outputs = Outputs {
        checkpoint: Some(ck_path.clone()),
        log: Some(log),
        epoch_log: Some(epoch_log),
    };
    let mut trainer = Trainer::new(config.train.clone(), train_data, state, outputs)?;
    trainer.save_checkpoint()?;
    trainer.run_epochs(args.epochs.unwrap_or(usize::MAX))?;
    let s = &trainer.state;
    println!(
        "phase {} epoch {} iteration {}; checkpoint {}",
        s.phase.as_str(),
        s.epoch,
        s.iteration,
        ck_path.display()
    );
    Ok(())
}

fn cmd_eval(config: &RunConfig, args: &SplitArgs) -> Result<()> {
    let data = load_prepared(config)?;
    let model = load_model(config, &data)?;
    let (report, results) = eval::evaluate(
        &model,
        &data.graph,
        data.split.get(args.split),
        &data.path_sets,
        &data.split.train,
        args.split.as_str(),
        config.train.eval_chunk,
    )?;
    eval::write_report(&config.export_dir, &report, &results, &data.graph)?;
    let m = &report.overall;
    println!(
        "{}: pairs {} MR {:.4} Hits@1 {:.4} Hits@3 {:.4} Hits@10 {:.4}",
        report.split, m.pairs, m.mean_rank, m.hits_at_1, m.hits_at_3, m.hits_at_10
    );
    Ok(())
}

fn selected_pairs(data: &Prepared, ids: &[u32], split: SplitName) -> Result<Vec<TrainingPair>> {
    if ids.is_empty() {
        return Ok(data.split.get(split).to_vec());
    }
    ids.iter()
        .map(|&id| match data.pair(id) {
            Some((_, p)) => Ok(*p),
            None => bail!("unknown pair {id}"),
        })
        .collect()
}

fn cmd_export_attention(config: &RunConfig, args: &AttentionArgs) -> Result<()> {
    let data = load_prepared(config)?;
    let model = load_model(config, &data)?;
    let pairs = selected_pairs(&data, &args.pairs, args.split)?;
    let table = export::attention(&model, &data.graph, &pairs, &data.path_sets, config.train.eval_chunk)?;
    let path = config.export_dir.join("attention.tsv");
    export::write_text(&path, &export::attention_tsv(&table))?;
    println!("wrote attention for {} pairs to {}", table.len(), path.display());
    Ok(())
}

fn cmd_export_features(config: &RunConfig, args: &FeatureArgs) -> Result<()> {
    let data = load_prepared(config)?;
    let model = load_model(config, &data)?;
    let pairs = data.split.get(args.split);
    let tables = export::vectors(&model, &data.graph, pairs, &data.path_sets, config.train.eval_chunk)?;
    let mut summary = Vec::new();
    for table in &tables {
        let name = table.kind.as_str();
        export::write_text(&config.export_dir.join(format!("vectors_{name}.tsv")), &table.to_tsv())?;
        let (tsv, pca) = export::projection_tsv(table, args.k).with_context(|| format!("PCA of {name}"))?;
        export::write_text(&config.export_dir.join(format!("pca_{name}.tsv")), &tsv)?;
        summary.push(format!("  \"{name}\": {:?}", pca.eigenvalues));
    }
    let json = format!("{{\n{}\n}}\n", summary.join(",\n"));
    export::write_text(&config.export_dir.join("pca_eigenvalues.json"), &json)?;
    println!(
        "wrote {} vector tables to {}",
        tables.len(),
        config.export_dir.display()
    );
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let config = load_config(cli)?;
    echo_config(&config)?;
    match &cli.command {
        Command::Synth(a) => cmd_synth(&config, a),
        Command::Prepare => cmd_prepare(&config),
        Command::Train(a) => cmd_train(&config, a),
        Command::Eval(a) => cmd_eval(&config, a),
        Command::ExportAttention(a) => cmd_export_attention(&config, a),
        Command::ExportFeatures(a) => cmd_export_features(&config, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}
