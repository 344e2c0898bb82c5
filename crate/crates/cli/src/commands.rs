//! The five pipeline commands.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;
use haoi_core::discrete_repr::{build_objects, checkpoint_hash, prepare_sequences, train_vqvae, EpochStats, VqVae};
use haoi_core::hand_model::HandModelSpec;
use haoi_core::manip_lm::{
    build_examples, encode_sequences, run_task, stage_tasks, LmEpochStats, Task, TaskRun, TransformerLm, Vocabulary,
};
use haoi_core::metrics::evaluate;
use haoi_core::rng::derive_seed;
use haoi_core::synth_data::captions::all_captions;
use haoi_core::synth_data::{
    generate_dataset, read_dataset, read_split, split_dataset, write_dataset, write_splits, DatasetManifest,
    HAOISequence, ManifestMeta,
};
use haoi_core::{HaoiError, Result};

use crate::config::RunConfig;
use crate::record::ExperimentRecord;

/// Environment variable naming the directory relative `--out` paths are resolved against.
pub const OUTPUT_ROOT_VAR: &str = "HAOI_OUTPUT_ROOT";

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TEXT: &str = "report.txt";
pub const TRACE_FILE: &str = "trace.tsv";
const SPLITS_FILE: &str = "splits.json";
const MANIFEST_FILE: &str = "manifest.json";

const SPLIT_STREAM: u64 = 1;
const VQVAE_STREAM: u64 = 2;
const LM_STREAM: u64 = 3;
const TASK_STREAM: u64 = 4;

#[derive(Debug, Clone, Args)]
pub struct GenDataArgs {
    /// Run configuration file
    #[arg(long)]
    pub config: PathBuf,
    /// Output dataset directory
    #[arg(long)]
    pub out: PathBuf,
    /// Master seed, overriding the config file
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainVqvaeArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Dataset directory written by gen-data
    #[arg(long)]
    pub data: PathBuf,
    /// Output checkpoint directory
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct TrainLmArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Training stage: 1 aligns on generation pairs, 2 fine-tunes on all tasks with frozen embeddings
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub stage: u8,
    #[arg(long)]
    pub data: PathBuf,
    /// VQ-VAE checkpoint directory
    #[arg(long)]
    pub vqvae: PathBuf,
    /// Stage-1 checkpoint to continue from (stage 2 only)
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct RunTaskArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// generation, prediction or interpolation
    #[arg(long)]
    pub task: Task,
    #[arg(long)]
    pub data: PathBuf,
    /// Language-model checkpoint directory
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub vqvae: PathBuf,
    /// Dataset split to run on, overriding tasks.split
    #[arg(long)]
    pub split: Option<String>,
    /// Output directory for generated sequences
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Generated sequences written by run-task
    #[arg(long)]
    pub gen: PathBuf,
    /// Real dataset directory
    #[arg(long)]
    pub real: PathBuf,
    #[arg(long)]
    pub vqvae: PathBuf,
    /// Split of the real dataset to compare against, overriding tasks.split
    #[arg(long)]
    pub split: Option<String>,
    /// Output directory for report.json and report.txt
    #[arg(long)]
    pub out: PathBuf,
}

/// Resolves `--out` against the output root and refuses directories that overlap an input.
pub fn prepare_output(out: &Path, inputs: &[&Path]) -> Result<PathBuf> {
    let out = match std::env::var_os(OUTPUT_ROOT_VAR) {
        Some(root) if out.is_relative() => PathBuf::from(root).join(out),
        _ => out.to_path_buf(),
    };
    let out = absolute(&out)?;
    for input in inputs {
        let input = absolute(input)?;
        if out.starts_with(&input) || input.starts_with(&out) {
            return Err(HaoiError::validation(format!(
                "output directory {} overlaps input {}",
                out.display(),
                input.display()
            )));
        }
    }
    std::fs::create_dir_all(&out).map_err(|e| HaoiError::io(&out, e))?;
    Ok(out)
}

fn absolute(p: &Path) -> Result<PathBuf> {
    let p = std::path::absolute(p).map_err(|e| HaoiError::io(p, e))?;
    Ok(p.canonicalize().unwrap_or(p))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| HaoiError::io(path, e))
}

fn require_dir(role: &str, dir: &Path) -> Result<()> {
    if !dir.is_dir() {
        return Err(HaoiError::validation(format!("{role} directory {} does not exist", dir.display())));
    }
    Ok(())
}

fn load_hand(config: &RunConfig) -> Result<HandModelSpec> {
    HandModelSpec::from_config(&config.hand)
}

/// Fails unless the dataset in `dir` was generated with `hand`.
fn check_dataset_hand(dir: &Path, hand: &HandModelSpec) -> Result<()> {
    let manifest = DatasetManifest::load(&dir.join(MANIFEST_FILE))?;
    if manifest.hand_model_hash != hand.hash() {
        return Err(HaoiError::Version {
            expected: format!("hand model {}", hand.hash()),
            found: format!("hand model {}", manifest.hand_model_hash),
        });
    }
    Ok(())
}

fn read_real(dir: &Path, split: &str) -> Result<Vec<HAOISequence>> {
    if dir.join(SPLITS_FILE).is_file() {
        read_split(dir, split)
    } else {
        read_dataset(dir)
    }
}

fn check_split(split: &str) -> Result<()> {
    if ["train", "val", "test"].contains(&split) {
        Ok(())
    } else {
        Err(HaoiError::validation(format!("split '{split}' is not one of train, val, test")))
    }
}

pub fn gen_data(args: &GenDataArgs) -> Result<()> {
    let mut config = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let out = prepare_output(&args.out, &[])?;
    let mut record = ExperimentRecord::new("gen-data", &config);
    record.add_input("config", &args.config)?;
    let hand = load_hand(&config)?;

    let start = Instant::now();
    let sequences = generate_dataset(&config.dataset, &hand, config.seed)?;
    record.timings.insert("generate".into(), start.elapsed().as_secs_f64());

    let start = Instant::now();
    let meta = ManifestMeta {
        master_seed: config.seed,
        hand_model_hash: hand.hash(),
    };
    let manifest = write_dataset(&sequences, &out, &meta)?;
    let splits = split_dataset(&manifest, config.dataset.split, derive_seed(config.seed, &[SPLIT_STREAM]))?;
    write_splits(&out, &splits)?;
    record.timings.insert("write".into(), start.elapsed().as_secs_f64());
    log::info!(
        "wrote {} sequences ({} frames): train {}, val {}, test {}",
        sequences.len(),
        manifest.frame_count,
        splits.train.sequences.len(),
        splits.val.sequences.len(),
        splits.test.sequences.len()
    );
    record.write(&out)
}

fn vqvae_trace_row(s: &EpochStats) -> String {
    format!(
        "{}\t{:.6e}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{}",
        s.epoch,
        s.total,
        s.coverage[0],
        s.coverage[1],
        s.coverage[2],
        s.coverage[3],
        s.reset.iter().sum::<usize>()
    )
}

pub fn train_vqvae_cmd(args: &TrainVqvaeArgs) -> Result<()> {
    let config = RunConfig::load(&args.config)?;
    require_dir("data", &args.data)?;
    let out = prepare_output(&args.out, &[&args.data])?;
    let mut record = ExperimentRecord::new("train-vqvae", &config);
    record.add_input("config", &args.config)?;
    record.add_input("data", &args.data)?;
    let hand = load_hand(&config)?;
    check_dataset_hand(&args.data, &hand)?;
    if config.vqvae.weights.lambda_4 != 0.0 {
        log::warn!("vqvae.weights.lambda_4 = {} is recorded but not attached to any loss term", config.vqvae.weights.lambda_4);
    }

    let start = Instant::now();
    let sequences = read_split(&args.data, "train")?;
    let objects = build_objects(&sequences)?;
    let set = prepare_sequences(&sequences, &objects, config.vqvae.n_points)?;
    record.timings.insert("prepare".into(), start.elapsed().as_secs_f64());
    log::info!("training on {} frames from {} sequences", set.len(), sequences.len());

    let header = "epoch\ttotal\tcuc_g\tcuc_l\tcuc_r\tcuc_j\tresets";
    println!("{header}");
    let start = Instant::now();
    let (vq, trace) = train_vqvae(&set, &hand, &config.vqvae, derive_seed(config.seed, &[VQVAE_STREAM]), |s| {
        println!("{}", vqvae_trace_row(s))
    })?;
    record.timings.insert("train".into(), start.elapsed().as_secs_f64());
    let c = vq.usage_coverage();
    println!("final\tcuc_g {:.4}\tcuc_l {:.4}\tcuc_r {:.4}\tcuc_j {:.4}", c[0], c[1], c[2], c[3]);

    vq.save(&out)?;
    let mut table = format!("{header}\n");
    for s in &trace {
        let _ = writeln!(table, "{}", vqvae_trace_row(s));
    }
    write_text(&out.join(TRACE_FILE), &table)?;
    record.write(&out)
}

pub fn train_lm_cmd(args: &TrainLmArgs) -> Result<()> {
    let config = RunConfig::load(&args.config)?;
    require_dir("data", &args.data)?;
    require_dir("vqvae", &args.vqvae)?;
    let mut inputs: Vec<&Path> = vec![&args.data, &args.vqvae];
    if let Some(init) = &args.init {
        require_dir("init", init)?;
        inputs.push(init);
    }
    let out = prepare_output(&args.out, &inputs)?;
    let mut record = ExperimentRecord::new("train-lm", &config);
    record.add_input("config", &args.config)?;
    record.add_input("data", &args.data)?;
    record.add_input("vqvae", &args.vqvae)?;
    let hand = load_hand(&config)?;
    check_dataset_hand(&args.data, &hand)?;
    let vq = VqVae::load(&args.vqvae, &hand)?;
    let vq_hash = checkpoint_hash(&args.vqvae)?;

    let mut lm = match (args.stage, &args.init) {
        (1, None) => {
            let captions = all_captions();
            let vocab = Vocabulary::from_captions(captions.iter().map(String::as_str), vq.codebook_size())?;
            TransformerLm::new(&config.lm, vocab, &vq_hash, derive_seed(config.seed, &[LM_STREAM]))?
        }
        (1, Some(_)) => return Err(HaoiError::validation("--init is only used with --stage 2")),
        (_, None) => return Err(HaoiError::validation("--stage 2 needs --init <stage-1 checkpoint>")),
        (_, Some(init)) => {
            record.add_input("init", init)?;
            let lm = TransformerLm::load(init)?;
            lm.check_vqvae(&vq_hash)?;
            lm
        }
    };

    let start = Instant::now();
    let sequences = read_split(&args.data, "train")?;
    let objects = build_objects(&sequences)?;
    let encoded = encode_sequences(&sequences, &objects, &vq, &lm.vocab)?;
    let examples = build_examples(&encoded, stage_tasks(args.stage), &lm.vocab, lm.config.mask_fraction)?;
    record.timings.insert("encode".into(), start.elapsed().as_secs_f64());
    log::info!(
        "stage {}: {} examples, {} parameters, vocabulary {}",
        args.stage,
        examples.len(),
        lm.parameter_count(),
        lm.vocab.len()
    );

    println!("stage\tepoch\tnll");
    let row = |s: &LmEpochStats| format!("{}\t{}\t{:.6}", s.stage, s.epoch, s.nll);
    let start = Instant::now();
    let trace = lm.train(&examples, args.stage, config.lm.epochs, |s| println!("{}", row(s)))?;
    record.timings.insert("train".into(), start.elapsed().as_secs_f64());

    lm.save(&out)?;
    let mut table = String::from("stage\tepoch\tnll\n");
    for s in &trace {
        let _ = writeln!(table, "{}", row(s));
    }
    write_text(&out.join(TRACE_FILE), &table)?;
    record.write(&out)
}

pub fn run_task_cmd(args: &RunTaskArgs) -> Result<()> {
    let config = RunConfig::load(&args.config)?;
    let split = args.split.clone().unwrap_or_else(|| config.tasks.split.clone());
    check_split(&split)?;
    for (role, dir) in [("data", &args.data), ("ckpt", &args.ckpt), ("vqvae", &args.vqvae)] {
        require_dir(role, dir)?;
    }
    let out = prepare_output(&args.out, &[&args.data, &args.ckpt, &args.vqvae])?;
    let mut record = ExperimentRecord::new("run-task", &config);
    record.add_input("config", &args.config)?;
    record.add_input("data", &args.data)?;
    record.add_input("vqvae", &args.vqvae)?;
    let ckpt_hash = record.add_input("ckpt", &args.ckpt)?;
    let hand = load_hand(&config)?;
    check_dataset_hand(&args.data, &hand)?;
    let vq = VqVae::load(&args.vqvae, &hand)?;
    let lm = TransformerLm::load(&args.ckpt)?;
    lm.check_vqvae(&checkpoint_hash(&args.vqvae)?)?;

    let sequences = read_split(&args.data, &split)?;
    let objects = build_objects(&sequences)?;
    let run = TaskRun {
        lm: &lm,
        vq: &vq,
        hand: &hand,
        sampling: &config.lm.sampling,
        samples_per_sequence: config.tasks.samples_per_sequence,
        seed: derive_seed(config.seed, &[TASK_STREAM]),
        checkpoint: ckpt_hash,
    };
    let start = Instant::now();
    let generated = run_task(&run, args.task, &sequences, &objects)?;
    record.timings.insert("generate".into(), start.elapsed().as_secs_f64());
    log::info!("{}: {} sequences from split {split}", args.task, generated.len());

    let meta = ManifestMeta {
        master_seed: config.seed,
        hand_model_hash: hand.hash(),
    };
    write_dataset(&generated, &out, &meta)?;
    record.write(&out)
}

pub fn evaluate_cmd(args: &EvaluateArgs) -> Result<()> {
    let config = RunConfig::load(&args.config)?;
    let split = args.split.clone().unwrap_or_else(|| config.tasks.split.clone());
    check_split(&split)?;
    for (role, dir) in [("gen", &args.gen), ("real", &args.real), ("vqvae", &args.vqvae)] {
        require_dir(role, dir)?;
    }
    let out = prepare_output(&args.out, &[&args.gen, &args.real, &args.vqvae])?;
    let mut record = ExperimentRecord::new("evaluate", &config);
    record.add_input("config", &args.config)?;
    record.add_input("gen", &args.gen)?;
    record.add_input("real", &args.real)?;
    record.add_input("vqvae", &args.vqvae)?;
    let hand = load_hand(&config)?;
    let vq = VqVae::load(&args.vqvae, &hand)?;
    let vq_hash = checkpoint_hash(&args.vqvae)?;

    let generated = read_dataset(&args.gen)?;
    let real = read_real(&args.real, &split)?;
    let start = Instant::now();
    let report = evaluate(&generated, &real, &vq, &hand, &config.metrics, &format!("vqvae-features:{}", &vq_hash[..16]))?;
    record.timings.insert("metrics".into(), start.elapsed().as_secs_f64());

    write_text(&out.join(REPORT_JSON), &report.to_json()?)?;
    let text = report.to_text();
    write_text(&out.join(REPORT_TEXT), &text)?;
    print!("{text}");
    record.write(&out)
}

