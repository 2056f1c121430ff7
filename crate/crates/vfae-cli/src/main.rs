//! Command-line entry point: train, evaluate, embed, two-sample testing and
//! penalty-strength search over one shared, source-tracked configuration.
//!
//! Exit codes: 0 success, 1 validation failure, 2 runtime divergence,
//! 3 I/O error.

mod config;
mod presets;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{PartialConfig, RunConfig};
use vfae_core::data::{
    export_embeddings, load_csv, read_matrix_csv, DataError, Split, TabularDataset,
};
use vfae_core::eval::{evaluate_model, embed_split, EvalConfig, EvalError};
use vfae_core::mmd::{
    median_heuristic_gamma, mmd_exact, mmd_rff_value, GaussianKernel, RffProjection,
};
use vfae_core::model::{
    load_checkpoint, save_checkpoint, ModelError, SampleMode, VfaeModel,
};
use vfae_core::seeds::{derive_seed, SeedDomain};
use vfae_core::tensor::Tensor;
use vfae_core::train::{select_beta, train, EpochRecord, TrainError};

#[derive(Parser)]
#[command(
    name = "vfae",
    about = "Learn latent representations invariant to a sensitive or nuisance factor",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoints, the epoch log and the resolved config.
    Train(TrainArgs),
    /// Evaluate a checkpoint: probe accuracies, discrimination, proxy A-distance.
    Evaluate(EvaluateArgs),
    /// Export z1 embeddings of one split as CSV (plus provenance sidecar).
    Embed(EmbedArgs),
    /// Two-sample test: exact MMD vs the random-feature estimate on two CSV matrices.
    MmdTest(MmdTestArgs),
    /// Train across a beta grid and report the best validation trade-off.
    SelectBeta(SelectBetaArgs),
}

/// Flags mirroring the flat config file; explicit flags override the file,
/// which overrides the preset. Boolean flags take explicit values, e.g.
/// `--use-mmd false`.
#[derive(Args, Default, Clone)]
struct ConfigFlags {
    /// Flat TOML config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named preset: adult, german, health, amazon, yaleb.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    schema: Option<String>,
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    binarize: Option<bool>,
    #[arg(long)]
    use_mmd: Option<bool>,
    #[arg(long)]
    single_stage: Option<bool>,
    #[arg(long)]
    use_s: Option<bool>,
    /// Kernel bandwidth: `median` or a positive number.
    #[arg(long)]
    gamma: Option<String>,
    /// Random feature count D.
    #[arg(long)]
    rff_features: Option<usize>,
    /// Feature-map scale convention: standard | paper.
    #[arg(long = "convention")]
    rff_scale_convention: Option<String>,
    #[arg(long)]
    z1_dim: Option<usize>,
    #[arg(long)]
    z2_dim: Option<usize>,
    #[arg(long)]
    hidden_z1_encoder: Option<String>,
    #[arg(long)]
    hidden_z2_encoder: Option<String>,
    #[arg(long)]
    hidden_z1_decoder: Option<String>,
    #[arg(long)]
    hidden_x_decoder: Option<String>,
    #[arg(long)]
    likelihood: Option<String>,
    #[arg(long)]
    activation: Option<String>,
    #[arg(long)]
    train_fraction: Option<f64>,
    #[arg(long)]
    validation_fraction: Option<f64>,
    #[arg(long)]
    test_fraction: Option<f64>,
    #[arg(long)]
    split_train: Option<String>,
    #[arg(long)]
    split_validation: Option<String>,
    #[arg(long)]
    split_test: Option<String>,
    #[arg(long)]
    semi_supervised: Option<bool>,
    #[arg(long)]
    mix_labeled: Option<f64>,
    #[arg(long)]
    averaging_decay: Option<f64>,
    /// Early-stop patience in epochs; 0 disables early stopping.
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    stratify_by_s: Option<bool>,
    /// Comma-separated beta grid for select-beta.
    #[arg(long)]
    beta_grid: Option<String>,
    /// Parallel workers for the beta grid.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    flags: ConfigFlags,
    /// Allow writing into an existing non-empty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Checkpoint bundle written by `vfae train`.
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    flags: ConfigFlags,
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Which split to embed.
    #[arg(long, default_value = "test")]
    split: String,
    /// sample | mean
    #[arg(long, default_value = "sample")]
    mode: String,
    /// Output CSV path.
    #[arg(long)]
    output: PathBuf,
    #[command(flatten)]
    flags: ConfigFlags,
}

#[derive(Args)]
struct MmdTestArgs {
    /// First CSV matrix.
    matrix_a: PathBuf,
    /// Second CSV matrix (same width).
    matrix_b: PathBuf,
    /// Kernel bandwidth: `median` or a positive number.
    #[arg(long, default_value = "median")]
    gamma: String,
    /// Random feature count D.
    #[arg(long, default_value_t = 500)]
    rff_features: usize,
    /// standard | paper
    #[arg(long, default_value = "standard")]
    convention: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SelectBetaArgs {
    #[command(flatten)]
    flags: ConfigFlags,
    #[arg(long)]
    force: bool,
}

enum CliError {
    Validation(Vec<String>),
    Divergence(String),
    Io(String),
}

impl CliError {
    fn report_and_code(self) -> ExitCode {
        match self {
            CliError::Validation(problems) => {
                eprintln!("error: configuration is invalid:");
                for p in &problems {
                    eprintln!("  - {p}");
                }
                ExitCode::from(1)
            }
            CliError::Divergence(msg) => {
                eprintln!("error: training diverged: {msg}");
                ExitCode::from(2)
            }
            CliError::Io(msg) => {
                eprintln!("error: {msg}");
                ExitCode::from(3)
            }
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Io(_) | DataError::Csv(_) => CliError::Io(e.to_string()),
            other => CliError::Validation(vec![other.to_string()]),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Io(_) => CliError::Io(e.to_string()),
            other => CliError::Validation(vec![other.to_string()]),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Validation(vec![e.to_string()])
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Embed(args) => cmd_embed(args),
        Command::MmdTest(args) => cmd_mmd_test(args),
        Command::SelectBeta(args) => cmd_select_beta(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => e.report_and_code(),
    }
}

impl ConfigFlags {
    fn to_partial(&self) -> PartialConfig {
        PartialConfig {
            data: self.data.clone(),
            schema: self.schema.clone(),
            out: self.out.clone(),
            seed: self.seed,
            alpha: self.alpha,
            beta: self.beta,
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            binarize: self.binarize,
            use_mmd: self.use_mmd,
            single_stage: self.single_stage,
            use_s: self.use_s,
            gamma: self.gamma.clone(),
            rff_features: self.rff_features,
            rff_scale_convention: self.rff_scale_convention.clone(),
            z1_dim: self.z1_dim,
            z2_dim: self.z2_dim,
            hidden_z1_encoder: self.hidden_z1_encoder.clone(),
            hidden_z2_encoder: self.hidden_z2_encoder.clone(),
            hidden_z1_decoder: self.hidden_z1_decoder.clone(),
            hidden_x_decoder: self.hidden_x_decoder.clone(),
            likelihood: self.likelihood.clone(),
            activation: self.activation.clone(),
            train_fraction: self.train_fraction,
            validation_fraction: self.validation_fraction,
            test_fraction: self.test_fraction,
            split_train: self.split_train.clone(),
            split_validation: self.split_validation.clone(),
            split_test: self.split_test.clone(),
            semi_supervised: self.semi_supervised,
            mix_labeled: self.mix_labeled,
            averaging_decay: self.averaging_decay,
            patience: self.patience,
            stratify_by_s: self.stratify_by_s,
            beta_grid: self.beta_grid.clone(),
            workers: self.workers,
        }
    }

    /// defaults < preset < config file < flags
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut layers: Vec<(String, PartialConfig)> = Vec::new();
        if let Some(name) = &self.preset {
            let p = presets::preset(name).ok_or_else(|| {
                CliError::Validation(vec![format!(
                    "unknown preset {name:?} (available: {})",
                    presets::PRESET_NAMES.join(", ")
                )])
            })?;
            layers.push((format!("preset {name}"), p));
        }
        if let Some(path) = &self.config {
            let p = PartialConfig::from_toml_file(path)
                .map_err(|e| CliError::Validation(vec![e]))?;
            layers.push(("config-file".to_string(), p));
        }
        layers.push(("flag".to_string(), self.to_partial()));
        let borrowed: Vec<(&str, &PartialConfig)> =
            layers.iter().map(|(n, p)| (n.as_str(), p)).collect();
        Ok(RunConfig::resolve(&borrowed))
    }
}

fn load_dataset(cfg: &RunConfig) -> Result<TabularDataset, CliError> {
    let schema = cfg.load_schema().map_err(|e| CliError::Validation(vec![e]))?;
    let ds = load_csv(Path::new(&cfg.data), &schema, &cfg.split_spec())?;
    Ok(if cfg.binarize { ds.binarize() } else { ds })
}

fn prepare_out_dir(out: &str, force: bool) -> Result<PathBuf, CliError> {
    if out.is_empty() {
        return Err(CliError::Validation(vec![
            "no output directory given (set `out` or --out)".into(),
        ]));
    }
    let dir = PathBuf::from(out);
    if dir.exists() {
        let occupied = std::fs::read_dir(&dir)
            .map_err(|e| CliError::Io(format!("cannot inspect {}: {e}", dir.display())))?
            .next()
            .is_some();
        if occupied && !force {
            return Err(CliError::Validation(vec![format!(
                "output directory {} is not empty; pass --force to overwrite",
                dir.display()
            )]));
        }
    } else {
        std::fs::create_dir_all(&dir)
            .map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
    }
    Ok(dir)
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents)
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

fn write_log(path: &Path, log: &[EpochRecord]) -> Result<(), CliError> {
    let mut out = String::from(EpochRecord::csv_header());
    out.push('\n');
    for rec in log {
        out.push_str(&rec.to_csv_row());
        out.push('\n');
    }
    write(path, &out)
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let cfg = args.flags.resolve()?;
    let problems = cfg.validation_problems(true);
    if !problems.is_empty() {
        return Err(CliError::Validation(problems));
    }
    let dir = prepare_out_dir(&cfg.out, args.force)?;
    write(&dir.join("resolved.toml"), &cfg.to_annotated_toml())?;

    let dataset = load_dataset(&cfg)?;
    let model_cfg = cfg.model_config(dataset.x_dim(), dataset.s_states, dataset.y_classes);
    let model = VfaeModel::new(model_cfg.clone(), derive_seed(cfg.seed, SeedDomain::Init));
    let train_cfg = cfg.train_config();
    let mismatches = train_cfg.validate(&model, &dataset);
    if !mismatches.is_empty() {
        return Err(CliError::Validation(mismatches));
    }

    println!(
        "training on {} rows ({} features, {} s states, {} classes)",
        dataset.len(),
        dataset.x_dim(),
        dataset.s_states,
        dataset.y_classes
    );
    let objective = cfg.objective();
    match train(model, &dataset, &train_cfg) {
        Ok(result) => {
            write_log(&dir.join("training_log.csv"), &result.log)?;

            let mut model = result.model;
            let raw = model.params.snapshot();
            model.params.restore(&result.final_averaged);
            save_checkpoint(&dir.join("checkpoint_final.ckpt"), &model, &objective, cfg.seed)?;
            model.params.restore(&result.best_averaged);
            save_checkpoint(&dir.join("checkpoint_best.ckpt"), &model, &objective, cfg.seed)?;
            model.params.restore(&raw);

            let summary = format!(
                "best_epoch = {}\nstopped_early = {}\ngamma = {}\nepochs_run = {}\n",
                result.best_epoch,
                result.stopped_early,
                result.gamma.map(|g| g.to_string()).unwrap_or_else(|| "\"unused\"".into()),
                result.log.len().saturating_sub(1),
            );
            write(&dir.join("run_summary.toml"), &summary)?;
            if let Some(last) = result.log.last() {
                println!(
                    "done: {} epochs, loss {:.4}, best epoch {}",
                    result.log.len() - 1,
                    last.total,
                    result.best_epoch
                );
            }
            println!("checkpoints: {}", dir.join("checkpoint_{final,best}.ckpt").display());
            Ok(())
        }
        Err(TrainError::Diverged { epoch, reason, last_good }) => {
            // Preserve the last healthy parameters for post-mortems.
            let mut model =
                VfaeModel::new(model_cfg, derive_seed(cfg.seed, SeedDomain::Init));
            model.params.restore(&last_good);
            save_checkpoint(&dir.join("checkpoint_last_good.ckpt"), &model, &objective, cfg.seed)?;
            Err(CliError::Divergence(format!(
                "epoch {epoch}: {reason} (last good parameters in {})",
                dir.join("checkpoint_last_good.ckpt").display()
            )))
        }
        Err(TrainError::Mismatch(m)) => Err(CliError::Validation(vec![m])),
        Err(other) => Err(CliError::Divergence(other.to_string())),
    }
}

/// Architecture keys the user may pass explicitly; on evaluate they must
/// agree with the checkpoint.
fn checkpoint_config_diff(cfg: &RunConfig, meta: &vfae_core::model::CheckpointMeta) -> Vec<String> {
    let mut diff = Vec::new();
    let explicit = |key: &str| cfg.sources[key] != "default";
    if explicit("z1_dim") && cfg.z1_dim != meta.model.z1_dim {
        diff.push(format!("z1_dim: flag/config {} vs checkpoint {}", cfg.z1_dim, meta.model.z1_dim));
    }
    if explicit("z2_dim") && cfg.z2_dim != meta.model.z2_dim {
        diff.push(format!("z2_dim: flag/config {} vs checkpoint {}", cfg.z2_dim, meta.model.z2_dim));
    }
    if explicit("likelihood") {
        let requested = cfg.likelihood_kind();
        if requested != Some(meta.model.likelihood) {
            diff.push(format!(
                "likelihood: flag/config {} vs checkpoint {}",
                cfg.likelihood, meta.model.likelihood
            ));
        }
    }
    if explicit("use_s") && cfg.use_s != meta.model.use_s {
        diff.push(format!("use_s: flag/config {} vs checkpoint {}", cfg.use_s, meta.model.use_s));
    }
    diff
}

fn load_checkpoint_and_data(
    checkpoint: &Path,
    flags: &ConfigFlags,
) -> Result<(VfaeModel, vfae_core::model::CheckpointMeta, TabularDataset, RunConfig), CliError> {
    let cfg = flags.resolve()?;
    let problems = cfg.validation_problems(true);
    if !problems.is_empty() {
        return Err(CliError::Validation(problems));
    }
    let (model, meta) = load_checkpoint(checkpoint)?;
    let diff = checkpoint_config_diff(&cfg, &meta);
    if !diff.is_empty() {
        let mut msgs = vec!["checkpoint and requested config disagree:".to_string()];
        msgs.extend(diff);
        return Err(CliError::Validation(msgs));
    }
    let dataset = load_dataset(&cfg)?;
    if dataset.x_dim() != meta.model.x_dim
        || dataset.s_states != meta.model.s_groups
        || dataset.y_classes != meta.model.y_classes
    {
        return Err(CliError::Validation(vec![format!(
            "dataset shape ({} features, {} s states, {} classes) does not match checkpoint \
             ({}, {}, {})",
            dataset.x_dim(),
            dataset.s_states,
            dataset.y_classes,
            meta.model.x_dim,
            meta.model.s_groups,
            meta.model.y_classes
        )]));
    }
    Ok((model, meta, dataset, cfg))
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<(), CliError> {
    let (model, _meta, dataset, cfg) = load_checkpoint_and_data(&args.checkpoint, &args.flags)?;
    let model_id = args
        .checkpoint
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "checkpoint".into());
    let report = evaluate_model(
        &model,
        &dataset,
        &EvalConfig { seed: cfg.seed, mode: SampleMode::Sample, model_id },
    )?;
    print!("{}", report.render_table());
    if !cfg.out.is_empty() {
        let dir = PathBuf::from(&cfg.out);
        std::fs::create_dir_all(&dir)
            .map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
        let path = dir.join("report.json");
        write(&path, &report.to_json())?;
        let table = dir.join("report.txt");
        write(&table, &report.render_table())?;
        println!("report written to {}", path.display());
    }
    Ok(())
}

fn cmd_embed(args: EmbedArgs) -> Result<(), CliError> {
    let (model, _meta, dataset, cfg) = load_checkpoint_and_data(&args.checkpoint, &args.flags)?;
    let split: Split = args
        .split
        .parse()
        .map_err(|e: String| CliError::Validation(vec![e]))?;
    let mode: SampleMode = args
        .mode
        .parse()
        .map_err(|e: String| CliError::Validation(vec![e]))?;
    let model_id = args
        .checkpoint
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "checkpoint".into());
    let emb = embed_split(
        &model,
        &dataset,
        split,
        mode,
        derive_seed(cfg.seed, SeedDomain::Eval),
        &model_id,
    )?;
    export_embeddings(&emb, &args.output)?;
    println!("wrote {} embedding rows to {}", emb.len(), args.output.display());
    Ok(())
}

fn cmd_mmd_test(args: MmdTestArgs) -> Result<(), CliError> {
    let a = read_matrix_csv(&args.matrix_a)?;
    let b = read_matrix_csv(&args.matrix_b)?;
    if a.cols() != b.cols() {
        return Err(CliError::Validation(vec![format!(
            "matrix widths differ: {} has {} columns, {} has {}",
            args.matrix_a.display(),
            a.cols(),
            args.matrix_b.display(),
            b.cols()
        )]));
    }
    let gamma = match args.gamma.as_str() {
        "median" => {
            let mut pooled = Vec::with_capacity((a.rows() + b.rows()) * a.cols());
            pooled.extend_from_slice(a.data());
            pooled.extend_from_slice(b.data());
            median_heuristic_gamma(&Tensor::matrix(a.rows() + b.rows(), a.cols(), pooled))
        }
        other => other.parse::<f64>().ok().filter(|g| *g > 0.0).ok_or_else(|| {
            CliError::Validation(vec![format!("bad gamma {other:?} (median or positive number)")])
        })?,
    };
    let convention = match args.convention.as_str() {
        "standard" => vfae_core::mmd::RffScaleConvention::Standard,
        "paper" => vfae_core::mmd::RffScaleConvention::Paper,
        other => {
            return Err(CliError::Validation(vec![format!(
                "bad convention {other:?} (standard|paper)"
            )]))
        }
    };
    let exact = mmd_exact(&a, &b, &GaussianKernel::new(gamma));
    let proj = RffProjection::new(a.cols(), args.rff_features, gamma, convention, args.seed);
    let rff = mmd_rff_value(&a, &b, &proj);
    let gap = if exact.abs() > 0.0 { (rff - exact).abs() / exact.abs() } else { (rff - exact).abs() };
    println!("rows:            {} vs {}", a.rows(), b.rows());
    println!("gamma:           {gamma}");
    println!("exact MMD:       {exact}");
    println!(
        "RFF MMD:         {rff}   (D = {}, convention = {convention})",
        args.rff_features,
        convention = args.convention
    );
    println!("relative gap:    {gap}");
    Ok(())
}

fn cmd_select_beta(args: SelectBetaArgs) -> Result<(), CliError> {
    let cfg = args.flags.resolve()?;
    let mut problems = cfg.validation_problems(true);
    let grid = match cfg.beta_grid_values() {
        Ok(g) => g,
        Err(e) => {
            problems.push(e);
            Vec::new()
        }
    };
    if !problems.is_empty() {
        return Err(CliError::Validation(problems));
    }
    let dir = prepare_out_dir(&cfg.out, args.force)?;
    write(&dir.join("resolved.toml"), &cfg.to_annotated_toml())?;

    let dataset = load_dataset(&cfg)?;
    if dataset.rows_in(Split::Validation).is_empty() {
        return Err(CliError::Validation(vec![
            "select-beta needs a validation split (fractions or split files)".into(),
        ]));
    }
    let model_cfg = cfg.model_config(dataset.x_dim(), dataset.s_states, dataset.y_classes);
    let train_cfg = cfg.train_config();
    println!("searching beta over {:?} with {} workers", grid, cfg.workers);
    let (best, reports) = select_beta(&model_cfg, &dataset, &grid, &train_cfg, cfg.workers)
        .map_err(|e| match e {
            TrainError::Diverged { epoch, reason, .. } => {
                CliError::Divergence(format!("grid point diverged at epoch {epoch}: {reason}"))
            }
            TrainError::Mismatch(m) => CliError::Validation(vec![m]),
            other => CliError::Divergence(other.to_string()),
        })?;

    let mut csv = String::from("beta,val_y_accuracy,probe_s_accuracy,s_chance,score,best_epoch\n");
    println!("{:>10} {:>10} {:>10} {:>9} {:>9}", "beta", "val-y-acc", "probe-s", "chance", "score");
    for r in &reports {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.beta, r.val_y_accuracy, r.probe_s_accuracy, r.s_chance, r.score, r.best_epoch
        ));
        println!(
            "{:>10} {:>10.4} {:>10.4} {:>9.4} {:>9.4}",
            r.beta, r.val_y_accuracy, r.probe_s_accuracy, r.s_chance, r.score
        );
    }
    write(&dir.join("beta_report.csv"), &csv)?;
    println!("selected beta = {best}");
    write(&dir.join("selected_beta.toml"), &format!("beta = {best}\n"))?;
    Ok(())
}
