//! End-to-end runs: configuration, synthetic corpus generation, the
//! train/distill/evaluate pipeline, ablations, and feature export.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::{self, CheckpointMeta};
use crate::dataio::{
    split_corpus, BinaryLabel, Dataset, NewsItem, ReasoningKind, ReasoningStoreEntry,
};
use crate::encoder::{EncoderSpec, EncoderVariant, Vocab};
use crate::error::{Error, Result};
use crate::gateway::PROMPT_TEMPLATE_VERSION;
use crate::metrics::{compute_metrics, MetricsReport};
use crate::student::{
    compute_distill_targets, train_student, Student, StudentCurveRow, StudentTrainSpec,
};
use crate::teacher::{
    build_pairs, train_teacher, CurveRow, LossMask, Teacher, TeacherConfig, TeacherTrainSpec,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub lr: f64,
    pub dropout: f64,
    pub epochs_stage1: usize,
    pub epochs_stage2: usize,
    pub epochs_distill: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub split_seed: u64,
    pub train_fraction: f64,
    pub margin: f64,
    pub temperature: f64,
    pub encoder_width: usize,
    pub encoder_depth: usize,
    pub max_len: usize,
    pub classifier_hidden: usize,
    pub raw_cosine: bool,
    pub num_heads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            lr: 3e-5,
            dropout: 0.3,
            epochs_stage1: 30,
            epochs_stage2: 30,
            epochs_distill: 30,
            batch_size: 16,
            seed: 0,
            split_seed: 0,
            train_fraction: 0.8,
            margin: 0.2,
            temperature: 1.0,
            encoder_width: 32,
            encoder_depth: 2,
            max_len: 64,
            classifier_hidden: 64,
            raw_cosine: false,
            num_heads: 1,
        }
    }
}

impl RunConfig {
    /// Apply one `key=value` override.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("bad value {value:?} for key {key:?}")))
        }
        match key {
            "lr" => self.lr = parse(key, value)?,
            "dropout" => self.dropout = parse(key, value)?,
            "epochs_stage1" => self.epochs_stage1 = parse(key, value)?,
            "epochs_stage2" => self.epochs_stage2 = parse(key, value)?,
            "epochs_distill" => self.epochs_distill = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "split_seed" => self.split_seed = parse(key, value)?,
            "train_fraction" => self.train_fraction = parse(key, value)?,
            "margin" => self.margin = parse(key, value)?,
            "temperature" => self.temperature = parse(key, value)?,
            "encoder_width" => self.encoder_width = parse(key, value)?,
            "encoder_depth" => self.encoder_depth = parse(key, value)?,
            "max_len" => self.max_len = parse(key, value)?,
            "classifier_hidden" => self.classifier_hidden = parse(key, value)?,
            "raw_cosine" => self.raw_cosine = parse(key, value)?,
            "num_heads" => self.num_heads = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Load `key=value` lines; `#` comments and blank lines are skipped.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = RunConfig::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("{}:{}: expected key=value", path.display(), i + 1))
            })?;
            config.apply(key.trim(), value.trim())?;
        }
        Ok(config)
    }

    pub fn teacher_config(&self) -> TeacherConfig {
        TeacherConfig {
            encoder: EncoderSpec {
                variant: EncoderVariant::TinyTrainable,
                depth: self.encoder_depth,
                width: self.encoder_width,
                max_len: self.max_len,
            },
            margin: self.margin,
            raw_cosine: self.raw_cosine,
            num_heads: self.num_heads,
            classifier_hidden: self.classifier_hidden,
            dropout: self.dropout,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationVariant {
    Full,
    WoRc,
    WoRxc,
    WoXrc,
    OnlyRc,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 5] = [
        AblationVariant::Full,
        AblationVariant::WoRc,
        AblationVariant::WoRxc,
        AblationVariant::WoXrc,
        AblationVariant::OnlyRc,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AblationVariant::Full => "full",
            AblationVariant::WoRc => "wo_rc",
            AblationVariant::WoRxc => "wo_rxc",
            AblationVariant::WoXrc => "wo_xrc",
            AblationVariant::OnlyRc => "only_rc",
        }
    }

    pub fn loss_mask(self) -> LossMask {
        match self {
            AblationVariant::Full => LossMask::default(),
            AblationVariant::WoRc => LossMask {
                rc: false,
                rxc: true,
                xrc: true,
            },
            AblationVariant::WoRxc => LossMask {
                rc: true,
                rxc: false,
                xrc: true,
            },
            AblationVariant::WoXrc => LossMask {
                rc: true,
                rxc: true,
                xrc: false,
            },
            AblationVariant::OnlyRc => LossMask {
                rc: true,
                rxc: false,
                xrc: false,
            },
        }
    }
}

impl FromStr for AblationVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AblationVariant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation variant {s:?}")))
    }
}

impl fmt::Display for AblationVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

const REAL_POOL: [&str; 8] = [
    "verified", "official", "confirmed", "report", "evidence", "records", "sources", "documented",
];
const FAKE_POOL: [&str; 8] = [
    "hoax", "shocking", "miracle", "secret", "exposed", "unsourced", "rumor", "conspiracy",
];
const SHARED_POOL: [&str; 8] = [
    "the", "story", "news", "today", "claims", "about", "event", "city",
];

fn sample_text(
    class_pool: &[&str],
    rng: &mut ChaCha8Rng,
    class_tokens: usize,
    shared_tokens: usize,
) -> String {
    let mut words = Vec::new();
    for _ in 0..class_tokens {
        words.push(class_pool[rng.gen_range(0..class_pool.len())]);
    }
    for _ in 0..shared_tokens {
        words.push(SHARED_POOL[rng.gen_range(0..SHARED_POOL.len())]);
    }
    words.shuffle(rng);
    words.join(" ")
}

/// Balanced synthetic corpus with class-correlated token pools, plus a
/// reasoning store whose entries are already qualified: the stored score
/// and initial rating fall on the non-rectifiable side of the loop
/// predicates for every class/polarity combination.
pub fn make_synthetic_corpus(
    n: usize,
    seed: u64,
) -> Result<(Vec<NewsItem>, Vec<ReasoningStoreEntry>)> {
    if n < 4 || n % 2 != 0 {
        return Err(Error::Config(format!(
            "synthetic corpus size must be an even number >= 4, got {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items = Vec::new();
    let mut store = Vec::new();
    for i in 0..n {
        let label = if i % 2 == 0 {
            BinaryLabel::Real
        } else {
            BinaryLabel::Fake
        };
        let pool: &[&str] = match label {
            BinaryLabel::Real => &REAL_POOL,
            BinaryLabel::Fake => &FAKE_POOL,
        };
        let id = format!("syn-{i:04}");
        items.push(NewsItem {
            id: id.clone(),
            text: sample_text(pool, &mut rng, 6, 3),
            raw_label: match label {
                BinaryLabel::Real => "real".to_string(),
                BinaryLabel::Fake => "fake".to_string(),
            },
            label,
            dataset: Dataset::Synthetic,
        });
        let (pos_score, neg_score) = match label {
            BinaryLabel::Real => (85, 40),
            BinaryLabel::Fake => (20, 60),
        };
        for (kind, score, lead) in [
            (ReasoningKind::Positive, pos_score, "supporting view:"),
            (ReasoningKind::Negative, neg_score, "challenging view:"),
        ] {
            store.push(ReasoningStoreEntry {
                news_id: id.clone(),
                kind,
                reasoning_text: format!("{lead} {}", sample_text(pool, &mut rng, 5, 2)),
                score,
                qualified: true,
                iterations_used: 0,
                score_trace: vec![score],
            });
        }
    }
    Ok((items, store))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parallelism {
    Sequential,
    Rayon,
}

/// Predict a whole corpus with the student. The two execution modes
/// produce identical output; `Rayon` falls back to sequential when the
/// `parallel` feature is off.
pub fn evaluate_batch(
    student: &Student,
    items: &[NewsItem],
    par: Parallelism,
) -> Result<Vec<BinaryLabel>> {
    match par {
        Parallelism::Sequential => items.iter().map(|i| student.predict(&i.text)).collect(),
        Parallelism::Rayon => {
            #[cfg(feature = "parallel")]
            {
                use rayon::prelude::*;
                items.par_iter().map(|i| student.predict(&i.text)).collect()
            }
            #[cfg(not(feature = "parallel"))]
            {
                items.iter().map(|i| student.predict(&i.text)).collect()
            }
        }
    }
}

fn corpus_hash(items: &[NewsItem]) -> String {
    let mut hasher = Sha256::new();
    for item in items {
        hasher.update(item.id.as_bytes());
        hasher.update([0u8]);
        hasher.update(item.text.as_bytes());
        hasher.update([0u8]);
    }
    format!("{:x}", hasher.finalize())
}

#[derive(Debug, Serialize, Deserialize)]
struct TargetCache {
    teacher_hash: String,
    corpus_hash: String,
    targets: HashMap<String, Vec<f64>>,
}

/// Teacher fused representations, cached on disk and keyed by the
/// teacher checkpoint hash and the corpus content hash.
pub fn distill_targets_cached(
    teacher: &Teacher,
    teacher_ckpt: &Path,
    items: &[NewsItem],
    positive_reasoning: &HashMap<String, String>,
    cache_path: &Path,
) -> Result<HashMap<String, Vec<f64>>> {
    let teacher_hash = checkpoint::file_sha256(teacher_ckpt)?;
    let corpus_h = corpus_hash(items);
    if cache_path.exists() {
        let text = std::fs::read_to_string(cache_path).map_err(|e| Error::io(cache_path, e))?;
        if let Ok(cache) = serde_json::from_str::<TargetCache>(&text) {
            if cache.teacher_hash == teacher_hash && cache.corpus_hash == corpus_h {
                return Ok(cache.targets);
            }
        }
    }
    let targets = compute_distill_targets(teacher, items, positive_reasoning)?;
    let cache = TargetCache {
        teacher_hash,
        corpus_hash: corpus_h,
        targets: targets.clone(),
    };
    std::fs::write(cache_path, serde_json::to_vec_pretty(&cache)?)
        .map_err(|e| Error::io(cache_path, e))?;
    Ok(targets)
}

pub fn write_teacher_curves(path: &Path, curve: &[CurveRow]) -> Result<()> {
    let mut out = String::from("epoch,rc,rxc,xrc,c,cls\n");
    for row in curve {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.epoch, row.rc, row.rxc, row.xrc, row.c, row.cls
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_student_curves(path: &Path, curve: &[StudentCurveRow]) -> Result<()> {
    let mut out = String::from("epoch,kd,ce\n");
    for row in curve {
        out.push_str(&format!("{},{},{}\n", row.epoch, row.kd, row.ce));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Serialize)]
pub struct RunManifest<'a> {
    pub template_version: &'static str,
    pub variant: &'a str,
    pub config: &'a RunConfig,
    pub n_train: usize,
    pub n_test: usize,
    pub teacher_checkpoint: String,
    pub student_checkpoint: String,
}

pub struct RunOutputs {
    pub metrics: MetricsReport,
    pub teacher_train_acc: f64,
    pub teacher_curve: Vec<CurveRow>,
    pub student_curve: Vec<StudentCurveRow>,
    pub teacher_path: PathBuf,
    pub student_path: PathBuf,
    pub predictions: Vec<(String, BinaryLabel, BinaryLabel)>,
}

/// Qualified positive reasoning text per item id.
pub fn positive_reasoning_map(store: &[ReasoningStoreEntry]) -> HashMap<String, String> {
    store
        .iter()
        .filter(|e| e.kind == ReasoningKind::Positive && e.qualified)
        .map(|e| (e.news_id.clone(), e.reasoning_text.clone()))
        .collect()
}

/// The full pipeline: split, train the teacher in two stages, distill
/// the student, and evaluate the student (news text only) on the test
/// split. All outputs land in `out_dir`.
pub fn run_training(
    items: &[NewsItem],
    store: &[ReasoningStoreEntry],
    config: &RunConfig,
    mask: LossMask,
    variant_name: &str,
    out_dir: &Path,
) -> Result<RunOutputs> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let (train_items, test_items) =
        split_corpus(items, config.train_fraction, config.split_seed)?;
    if test_items.is_empty() {
        return Err(Error::Training("test split is empty".to_string()));
    }

    let pairs = build_pairs(&train_items, store)?;
    let news_vocab = Vocab::build(train_items.iter().map(|i| i.text.as_str()));
    let reasoning_vocab = Vocab::build(pairs.iter().map(|p| p.reasoning_text.as_str()));

    let mut teacher = Teacher::new(
        config.teacher_config(),
        news_vocab,
        reasoning_vocab,
        config.seed,
    )?;
    let teacher_spec = TeacherTrainSpec {
        lr: config.lr,
        epochs_stage1: config.epochs_stage1,
        epochs_stage2: config.epochs_stage2,
        batch_size: config.batch_size,
        seed: config.seed,
        mask,
        ..Default::default()
    };
    let teacher_curve = train_teacher(&mut teacher, &pairs, &teacher_spec)?;
    write_teacher_curves(&out_dir.join("curves.csv"), &teacher_curve)?;

    let reasoning = positive_reasoning_map(store);
    let mut correct = 0usize;
    let mut total = 0usize;
    for item in &train_items {
        if let Some(r) = reasoning.get(&item.id) {
            if teacher.predict_pair(&item.text, r)? == item.label {
                correct += 1;
            }
            total += 1;
        }
    }
    let teacher_train_acc = if total == 0 {
        0.0
    } else {
        correct as f64 / total as f64
    };

    let teacher_path = out_dir.join("teacher.bin");
    checkpoint::save_teacher(
        &teacher_path,
        &teacher,
        CheckpointMeta {
            seed: config.seed,
            stage1_epochs: config.epochs_stage1,
            stage2_epochs: config.epochs_stage2,
        },
    )?;

    let targets = distill_targets_cached(
        &teacher,
        &teacher_path,
        &train_items,
        &reasoning,
        &out_dir.join("distill_targets.json"),
    )?;

    let mut student = Student::from_teacher(&teacher, config.seed ^ 0x5d)?;
    student.config.temperature = config.temperature;
    let student_spec = StudentTrainSpec {
        lr: config.lr,
        epochs: config.epochs_distill,
        batch_size: config.batch_size,
        seed: config.seed ^ 0x5d,
        temperature: config.temperature,
        kd_weight: 1.0,
        ce_weight: 1.0,
    };
    let student_curve = train_student(&mut student, &train_items, &targets, &student_spec)?;
    write_student_curves(&out_dir.join("student_curves.csv"), &student_curve)?;

    let student_path = out_dir.join("student.bin");
    checkpoint::save_student(
        &student_path,
        &student,
        CheckpointMeta {
            seed: config.seed ^ 0x5d,
            stage1_epochs: config.epochs_distill,
            stage2_epochs: 0,
        },
    )?;

    let gold: Vec<BinaryLabel> = test_items.iter().map(|i| i.label).collect();
    let pred = evaluate_batch(&student, &test_items, Parallelism::Rayon)?;
    let metrics = compute_metrics(&gold, &pred)?;
    std::fs::write(
        out_dir.join("metrics.json"),
        serde_json::to_vec_pretty(&metrics)?,
    )
    .map_err(|e| Error::io(out_dir, e))?;

    let manifest = RunManifest {
        template_version: PROMPT_TEMPLATE_VERSION,
        variant: variant_name,
        config,
        n_train: train_items.len(),
        n_test: test_items.len(),
        teacher_checkpoint: teacher_path.display().to_string(),
        student_checkpoint: student_path.display().to_string(),
    };
    std::fs::write(
        out_dir.join("manifest.json"),
        serde_json::to_vec_pretty(&manifest)?,
    )
    .map_err(|e| Error::io(out_dir, e))?;

    let predictions = test_items
        .iter()
        .zip(&pred)
        .map(|(item, &p)| (item.id.clone(), item.label, p))
        .collect();
    Ok(RunOutputs {
        metrics,
        teacher_train_acc,
        teacher_curve,
        student_curve,
        teacher_path,
        student_path,
        predictions,
    })
}

/// Run every requested variant on the same split and seed; one summary
/// CSV plus a full output directory per variant.
pub fn run_ablation_suite(
    items: &[NewsItem],
    store: &[ReasoningStoreEntry],
    config: &RunConfig,
    variants: &[AblationVariant],
    out_dir: &Path,
) -> Result<Vec<(AblationVariant, MetricsReport)>> {
    if variants.is_empty() {
        return Err(Error::Config("no ablation variants requested".to_string()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut results = Vec::new();
    let mut csv = String::from("variant,acc,mac_f1\n");
    for &variant in variants {
        let vdir = out_dir.join(variant.as_str());
        let outputs = run_training(
            items,
            store,
            config,
            variant.loss_mask(),
            variant.as_str(),
            &vdir,
        )?;
        csv.push_str(&format!(
            "{},{},{}\n",
            variant, outputs.metrics.acc, outputs.metrics.mac_f1
        ));
        results.push((variant, outputs.metrics));
    }
    let csv_path = out_dir.join("ablation.csv");
    std::fs::write(&csv_path, csv).map_err(|e| Error::io(&csv_path, e))?;
    Ok(results)
}

/// CSV of id, gold label, predicted label, and the student's fused
/// feature vector per item.
pub fn export_features(student: &Student, items: &[NewsItem], path: &Path) -> Result<()> {
    if items.is_empty() {
        return Err(Error::EmptyInput("export_features".to_string()));
    }
    let width = student.features(&items[0].text)?.len();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let wrap = |e: std::io::Error| Error::io(path, e);
    write!(w, "id,label,predicted").map_err(wrap)?;
    for j in 0..width {
        write!(w, ",f{j}").map_err(wrap)?;
    }
    writeln!(w).map_err(wrap)?;
    for item in items {
        let features = student.features(&item.text)?;
        let predicted = student.predict(&item.text)?;
        write!(
            w,
            "{},{},{}",
            item.id,
            item.label.as_str(),
            predicted.as_str()
        )
        .map_err(wrap)?;
        for f in features {
            write!(w, ",{f}").map_err(wrap)?;
        }
        writeln!(w).map_err(wrap)?;
    }
    w.flush().map_err(wrap)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{CredibilityScore, ReasoningType};
    use crate::sr3::{needs_rectify, Sr3Config};

    #[test]
    fn defaults_match_contract() {
        let c = RunConfig::default();
        assert_eq!(c.lr, 3e-5);
        assert_eq!(c.dropout, 0.3);
        assert_eq!(c.epochs_stage1, 30);
        assert_eq!(c.epochs_stage2, 30);
        assert_eq!(c.epochs_distill, 30);
    }

    #[test]
    fn config_file_overrides_and_rejects_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, "# comment\nlr = 0.01\nencoder_width=8\n\nseed=7\n").unwrap();
        let c = RunConfig::from_file(&path).unwrap();
        assert_eq!(c.lr, 0.01);
        assert_eq!(c.encoder_width, 8);
        assert_eq!(c.seed, 7);
        assert_eq!(c.dropout, 0.3);

        std::fs::write(&path, "learning_rate=0.01\n").unwrap();
        assert!(RunConfig::from_file(&path).is_err());
        std::fs::write(&path, "lr=fast\n").unwrap();
        assert!(RunConfig::from_file(&path).is_err());
    }

    #[test]
    fn variant_parsing_round_trips() {
        for v in AblationVariant::ALL {
            assert_eq!(v.as_str().parse::<AblationVariant>().unwrap(), v);
        }
        assert!("wo_everything".parse::<AblationVariant>().is_err());
        let m = AblationVariant::OnlyRc.loss_mask();
        assert!(m.rc && !m.rxc && !m.xrc);
    }

    #[test]
    fn synthetic_corpus_is_balanced_and_qualified() {
        let (items, store) = make_synthetic_corpus(12, 3).unwrap();
        assert_eq!(items.len(), 12);
        assert_eq!(store.len(), 24);
        let real = items.iter().filter(|i| i.label == BinaryLabel::Real).count();
        assert_eq!(real, 6);
        let sr3 = Sr3Config::default();
        let by_id: HashMap<&str, BinaryLabel> =
            items.iter().map(|i| (i.id.as_str(), i.label)).collect();
        for e in &store {
            assert!(e.qualified);
            assert_eq!(e.score_trace, vec![e.score]);
            // vi is the class's shared initial rating
            let label = by_id[e.news_id.as_str()];
            let vi = match label {
                BinaryLabel::Real => 70,
                BinaryLabel::Fake => 35,
            };
            let t = match e.kind {
                ReasoningKind::Positive => ReasoningType::Positive,
                ReasoningKind::Negative => ReasoningType::Negative,
            };
            assert!(!needs_rectify(
                label,
                t,
                CredibilityScore::new(e.score as i64).unwrap(),
                CredibilityScore::new(vi).unwrap(),
                &sr3
            ));
        }
    }

    #[test]
    fn synthetic_corpus_is_deterministic_and_validates_n() {
        let a = make_synthetic_corpus(8, 5).unwrap();
        let b = make_synthetic_corpus(8, 5).unwrap();
        assert_eq!(a.0.len(), b.0.len());
        for (x, y) in a.0.iter().zip(&b.0) {
            assert_eq!(x.text, y.text);
        }
        assert!(make_synthetic_corpus(2, 0).is_err());
        assert!(make_synthetic_corpus(7, 0).is_err());
    }

    fn tiny_config() -> RunConfig {
        RunConfig {
            lr: 0.01,
            dropout: 0.0,
            epochs_stage1: 2,
            epochs_stage2: 2,
            epochs_distill: 2,
            batch_size: 4,
            encoder_width: 8,
            encoder_depth: 1,
            classifier_hidden: 8,
            train_fraction: 0.75,
            ..Default::default()
        }
    }

    #[test]
    fn pipeline_smoke_writes_expected_files() {
        let (items, store) = make_synthetic_corpus(8, 11).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let out = run_training(
            &items,
            &store,
            &tiny_config(),
            LossMask::default(),
            "full",
            dir.path(),
        )
        .unwrap();
        for name in [
            "curves.csv",
            "student_curves.csv",
            "metrics.json",
            "manifest.json",
            "teacher.bin",
            "student.bin",
            "distill_targets.json",
        ] {
            assert!(dir.path().join(name).exists(), "missing {name}");
        }
        assert_eq!(out.predictions.len(), 2);
        let curves = std::fs::read_to_string(dir.path().join("curves.csv")).unwrap();
        assert!(curves.starts_with("epoch,rc,rxc,xrc,c,cls\n"));
        assert_eq!(curves.lines().count(), 1 + 4);
        let manifest = std::fs::read_to_string(dir.path().join("manifest.json")).unwrap();
        assert!(manifest.contains(PROMPT_TEMPLATE_VERSION));
    }

    #[test]
    fn ablation_suite_writes_summary_csv() {
        let (items, store) = make_synthetic_corpus(8, 13).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let variants = [AblationVariant::Full, AblationVariant::WoRc];
        let results =
            run_ablation_suite(&items, &store, &tiny_config(), &variants, dir.path()).unwrap();
        assert_eq!(results.len(), 2);
        let csv = std::fs::read_to_string(dir.path().join("ablation.csv")).unwrap();
        assert!(csv.starts_with("variant,acc,mac_f1\n"));
        assert_eq!(csv.lines().count(), 3);
        let wo_rc_curves =
            std::fs::read_to_string(dir.path().join("wo_rc").join("curves.csv")).unwrap();
        for line in wo_rc_curves.lines().skip(1) {
            let rc: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
            assert_eq!(rc, 0.0);
        }
    }

    #[test]
    fn sequential_and_parallel_eval_agree() {
        let (items, store) = make_synthetic_corpus(8, 17).unwrap();
        let dir = tempfile::tempdir().unwrap();
        run_training(
            &items,
            &store,
            &tiny_config(),
            LossMask::default(),
            "full",
            dir.path(),
        )
        .unwrap();
        let (student, _) = checkpoint::load_student(dir.path().join("student.bin")).unwrap();
        let seq = evaluate_batch(&student, &items, Parallelism::Sequential).unwrap();
        let par = evaluate_batch(&student, &items, Parallelism::Rayon).unwrap();
        assert_eq!(seq, par);
    }

    #[test]
    fn feature_export_has_expected_shape() {
        let (items, store) = make_synthetic_corpus(8, 19).unwrap();
        let dir = tempfile::tempdir().unwrap();
        run_training(
            &items,
            &store,
            &tiny_config(),
            LossMask::default(),
            "full",
            dir.path(),
        )
        .unwrap();
        let (student, _) = checkpoint::load_student(dir.path().join("student.bin")).unwrap();
        let path = dir.path().join("features.csv");
        export_features(&student, &items, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        let header = lines.next().unwrap();
        assert!(header.starts_with("id,label,predicted,f0,"));
        assert_eq!(header.split(',').count(), 3 + 4 * 8);
        assert_eq!(lines.count(), 8);
    }
}
