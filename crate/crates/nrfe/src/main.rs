use std::path::PathBuf;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use nrfe::checkpoint::{self, CheckpointMeta};
use nrfe::dataio::{load_corpus, read_store, split_corpus, write_corpus, write_store, Dataset, LabelScheme, NewsItem};
use nrfe::encoder::Vocab;
use nrfe::gateway::{CredibilityScore, Gateway, HttpBackend};
use nrfe::harness::{
    distill_targets_cached, evaluate_batch, export_features, make_synthetic_corpus,
    positive_reasoning_map, run_ablation_suite, write_student_curves,
    write_teacher_curves, AblationVariant, Parallelism, RunConfig,
};
use nrfe::metrics::compute_metrics;
use nrfe::sr3::{rectify_corpus, Sr3Config};
use nrfe::student::{train_student, Student, StudentTrainSpec};
use nrfe::teacher::{build_pairs, train_teacher, Teacher, TeacherTrainSpec};

#[derive(Parser)]
#[command(name = "nrfe", about = "Negative-reasoning fake news detection pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CorpusArgs {
    /// JSONL corpus with id, text, and label fields
    #[arg(long)]
    corpus: PathBuf,
    /// politifact, twitter15, twitter16, or synthetic
    #[arg(long, default_value = "synthetic")]
    dataset: String,
    /// label scheme override; defaults to the dataset's own
    #[arg(long)]
    scheme: Option<String>,
}

impl CorpusArgs {
    fn load(&self) -> anyhow::Result<Vec<NewsItem>> {
        let dataset: Dataset = self.dataset.parse()?;
        let scheme: LabelScheme = match &self.scheme {
            Some(s) => s.parse()?,
            None => dataset.default_scheme(),
        };
        Ok(load_corpus(&self.corpus, dataset, scheme)?)
    }
}

#[derive(Args)]
struct ConfigArgs {
    /// key=value configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// inline key=value overrides, applied after the file
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut config = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        for kv in &self.sets {
            let (k, v) = kv
                .split_once('=')
                .with_context(|| format!("expected KEY=VALUE, got {kv:?}"))?;
            config.apply(k.trim(), v.trim())?;
        }
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Harvest positive and negative reasoning for a corpus via the
    /// chat-completion endpoint, with iterative rectification
    GenerateReasoning {
        #[command(flatten)]
        corpus: CorpusArgs,
        /// JSONL reasoning store; existing entries are kept and skipped
        #[arg(long)]
        store: PathBuf,
        #[arg(long, default_value = "http://127.0.0.1:8080/v1/chat/completions")]
        endpoint: String,
        #[arg(long, default_value = "default-model")]
        model: String,
        /// polarity threshold M
        #[arg(long, default_value_t = 50)]
        m: i64,
        /// confidence increment I
        #[arg(long, default_value_t = 0)]
        i: i64,
        #[arg(long, default_value_t = 5)]
        max_iter: u32,
        #[arg(long, default_value_t = 4)]
        workers: usize,
    },
    /// Train the reasoning-aware teacher on the train split
    TrainTeacher {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        store: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        /// output directory for teacher.bin and curves.csv
        #[arg(long)]
        out: PathBuf,
        /// loss variant: full, wo_rc, wo_rxc, wo_xrc, only_rc
        #[arg(long, default_value = "full")]
        variant: String,
    },
    /// Distill a reasoning-free student from a trained teacher
    DistillStudent {
        #[arg(long)]
        teacher: PathBuf,
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        store: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        /// output directory for student.bin and student_curves.csv
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a student checkpoint on the held-out test split
    Evaluate {
        #[arg(long)]
        student: PathBuf,
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long, default_value_t = 0)]
        split_seed: u64,
        #[arg(long, default_value_t = 0.8)]
        train_fraction: f64,
        /// also write metrics.json here
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the consistency-loss ablation suite end to end
    Ablate {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        store: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        /// comma-separated list; defaults to all variants
        #[arg(long, default_value = "full,wo_rc,wo_rxc,wo_xrc,only_rc")]
        variants: String,
    },
    /// Export the student's fused features for a corpus as CSV
    ExportFeatures {
        /// student checkpoint
        #[arg(long)]
        ckpt: PathBuf,
        #[command(flatten)]
        corpus: CorpusArgs,
        /// which items: all, train, or test
        #[arg(long, default_value = "all")]
        which: String,
        #[arg(long, default_value_t = 0)]
        split_seed: u64,
        #[arg(long, default_value_t = 0.8)]
        train_fraction: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic corpus and matching reasoning store
    Synth {
        #[arg(long, default_value_t = 64)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        store: PathBuf,
    },
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::GenerateReasoning {
            corpus,
            store,
            endpoint,
            model,
            m,
            i,
            max_iter,
            workers,
        } => {
            let items = corpus.load()?;
            let backend = HttpBackend::from_env(&endpoint, &model, Duration::from_secs(120))?;
            let gateway = Gateway::new(&backend);
            let cfg = Sr3Config {
                polarity_threshold_m: CredibilityScore::new(m)?,
                confidence_increment_i: i,
                max_iter,
                workers,
                ..Default::default()
            };
            let summary = rectify_corpus(&items, &gateway, &cfg, &store)?;
            println!(
                "qualified: {}  exhausted: {}  errored: {}",
                summary.qualified, summary.exhausted, summary.errored
            );
            if summary.errored > 0 {
                bail!("{} items failed", summary.errored);
            }
        }
        Command::TrainTeacher {
            corpus,
            store,
            config,
            out,
            variant,
        } => {
            let items = corpus.load()?;
            let entries = read_store(&store)?;
            let config = config.resolve()?;
            let variant: AblationVariant = variant.parse()?;
            std::fs::create_dir_all(&out)?;
            let (train_items, _) =
                split_corpus(&items, config.train_fraction, config.split_seed)?;
            let pairs = build_pairs(&train_items, &entries)?;
            let news_vocab = Vocab::build(train_items.iter().map(|i| i.text.as_str()));
            let reasoning_vocab = Vocab::build(pairs.iter().map(|p| p.reasoning_text.as_str()));
            let mut teacher = Teacher::new(
                config.teacher_config(),
                news_vocab,
                reasoning_vocab,
                config.seed,
            )?;
            let spec = TeacherTrainSpec {
                lr: config.lr,
                epochs_stage1: config.epochs_stage1,
                epochs_stage2: config.epochs_stage2,
                batch_size: config.batch_size,
                seed: config.seed,
                mask: variant.loss_mask(),
                ..Default::default()
            };
            let curve = train_teacher(&mut teacher, &pairs, &spec)?;
            write_teacher_curves(&out.join("curves.csv"), &curve)?;
            let path = out.join("teacher.bin");
            checkpoint::save_teacher(
                &path,
                &teacher,
                CheckpointMeta {
                    seed: config.seed,
                    stage1_epochs: config.epochs_stage1,
                    stage2_epochs: config.epochs_stage2,
                },
            )?;
            println!("teacher checkpoint: {}", path.display());
        }
        Command::DistillStudent {
            teacher,
            corpus,
            store,
            config,
            out,
        } => {
            let items = corpus.load()?;
            let entries = read_store(&store)?;
            let config = config.resolve()?;
            std::fs::create_dir_all(&out)?;
            let (loaded, _) = checkpoint::load_teacher(&teacher)?;
            let (train_items, _) =
                split_corpus(&items, config.train_fraction, config.split_seed)?;
            let reasoning = positive_reasoning_map(&entries);
            let targets = distill_targets_cached(
                &loaded,
                &teacher,
                &train_items,
                &reasoning,
                &out.join("distill_targets.json"),
            )?;
            let mut student = Student::from_teacher(&loaded, config.seed ^ 0x5d)?;
            student.config.temperature = config.temperature;
            let spec = StudentTrainSpec {
                lr: config.lr,
                epochs: config.epochs_distill,
                batch_size: config.batch_size,
                seed: config.seed ^ 0x5d,
                temperature: config.temperature,
                kd_weight: 1.0,
                ce_weight: 1.0,
            };
            let curve = train_student(&mut student, &train_items, &targets, &spec)?;
            write_student_curves(&out.join("student_curves.csv"), &curve)?;
            let path = out.join("student.bin");
            checkpoint::save_student(
                &path,
                &student,
                CheckpointMeta {
                    seed: config.seed ^ 0x5d,
                    stage1_epochs: config.epochs_distill,
                    stage2_epochs: 0,
                },
            )?;
            println!("student checkpoint: {}", path.display());
        }
        Command::Evaluate {
            student,
            corpus,
            split_seed,
            train_fraction,
            out,
        } => {
            let items = corpus.load()?;
            let (loaded, _) = checkpoint::load_student(&student)?;
            let (_, test_items) = split_corpus(&items, train_fraction, split_seed)?;
            let gold: Vec<_> = test_items.iter().map(|i| i.label).collect();
            let pred = evaluate_batch(&loaded, &test_items, Parallelism::Rayon)?;
            let metrics = compute_metrics(&gold, &pred)?;
            let json = serde_json::to_string_pretty(&metrics)?;
            println!("{json}");
            if let Some(path) = out {
                std::fs::write(path, json)?;
            }
        }
        Command::Ablate {
            corpus,
            store,
            config,
            out,
            variants,
        } => {
            let items = corpus.load()?;
            let entries = read_store(&store)?;
            let config = config.resolve()?;
            let variants = variants
                .split(',')
                .map(|s| s.trim().parse())
                .collect::<Result<Vec<AblationVariant>, _>>()?;
            let results = run_ablation_suite(&items, &entries, &config, &variants, &out)?;
            for (variant, metrics) in results {
                println!("{variant}: acc={:.4} mac_f1={:.4}", metrics.acc, metrics.mac_f1);
            }
        }
        Command::ExportFeatures {
            ckpt,
            corpus,
            which,
            split_seed,
            train_fraction,
            out,
        } => {
            let items = corpus.load()?;
            let (student, _) = checkpoint::load_student(&ckpt)?;
            let selected = match which.as_str() {
                "all" => items,
                "train" => split_corpus(&items, train_fraction, split_seed)?.0,
                "test" => split_corpus(&items, train_fraction, split_seed)?.1,
                other => bail!("unknown selection {other:?}; use all, train, or test"),
            };
            export_features(&student, &selected, &out)?;
            println!("wrote {}", out.display());
        }
        Command::Synth {
            n,
            seed,
            corpus,
            store,
        } => {
            let (items, entries) = make_synthetic_corpus(n, seed)?;
            write_corpus(&corpus, &items)?;
            write_store(&store, &entries)?;
            println!("wrote {} items to {}", items.len(), corpus.display());
        }
    }
    Ok(())
}
