//! Model checkpoints: a magic tag, a little-endian u32 header length, a
//! JSON header describing config, vocabularies, and parameter shapes,
//! then the raw f64 little-endian parameter data in header order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoder::Vocab;
use crate::error::{Error, Result};
use crate::student::{Student, StudentConfig};
use crate::teacher::{Teacher, TeacherConfig};

pub const MAGIC: &[u8; 6] = b"NRFE1\0";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamInfo {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
}

impl Default for CheckpointMeta {
    fn default() -> Self {
        CheckpointMeta {
            seed: 0,
            stage1_epochs: 0,
            stage2_epochs: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Header {
    Teacher {
        config: TeacherConfig,
        news_vocab: Vocab,
        reasoning_vocab: Vocab,
        params: Vec<ParamInfo>,
        meta: CheckpointMeta,
    },
    Student {
        config: StudentConfig,
        vocab: Vocab,
        params: Vec<ParamInfo>,
        meta: CheckpointMeta,
    },
}

fn encoder_param_names(prefix: &str, depth: usize) -> Vec<String> {
    let mut names = vec![format!("{prefix}.embedding")];
    for i in 0..depth {
        names.push(format!("{prefix}.layer{i}.w"));
        names.push(format!("{prefix}.layer{i}.b"));
    }
    names
}

fn mlp_param_names(prefix: &str) -> Vec<String> {
    ["l1.w", "l1.b", "l2.w", "l2.b"]
        .iter()
        .map(|s| format!("{prefix}.{s}"))
        .collect()
}

pub fn teacher_param_names(teacher: &Teacher) -> Vec<String> {
    let depth = teacher.config.encoder.depth;
    let mut names = encoder_param_names("news_encoder", depth);
    names.extend(encoder_param_names("reasoning_encoder", depth));
    for i in 0..teacher.cross.heads.len() {
        for part in ["wq", "wk", "wv"] {
            names.push(format!("cross.head{i}.{part}"));
        }
    }
    for pool in ["x", "p", "n", "p_to_x", "n_to_x", "x_to_p", "x_to_n"] {
        names.push(format!("pool.{pool}.w"));
        names.push(format!("pool.{pool}.v"));
    }
    for head in ["rc", "rxc", "xrc"] {
        for part in ["proj_news.w", "proj_news.b", "proj_other.w", "proj_other.b"] {
            names.push(format!("{head}.{part}"));
        }
    }
    names.extend(mlp_param_names("classifier"));
    names
}

pub fn student_param_names(student: &Student) -> Vec<String> {
    let mut names = encoder_param_names("encoder", student.config.encoder.depth);
    names.push("pool.w".to_string());
    names.push("pool.v".to_string());
    names.extend(mlp_param_names("projection"));
    names.extend(mlp_param_names("classifier"));
    names
}

fn param_infos(names: &[String], params: &[&Array2<f64>]) -> Vec<ParamInfo> {
    assert_eq!(names.len(), params.len(), "name/param count mismatch");
    names
        .iter()
        .zip(params)
        .map(|(name, p)| ParamInfo {
            name: name.clone(),
            rows: p.nrows(),
            cols: p.ncols(),
        })
        .collect()
}

fn write_checkpoint(path: &Path, header: &Header, params: &[&Array2<f64>]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let header_json = serde_json::to_vec(header)?;
    let wrap = |e: std::io::Error| Error::io(path, e);
    w.write_all(MAGIC).map_err(wrap)?;
    w.write_all(&(header_json.len() as u32).to_le_bytes()).map_err(wrap)?;
    w.write_all(&header_json).map_err(wrap)?;
    for p in params {
        for x in p.iter() {
            w.write_all(&x.to_le_bytes()).map_err(wrap)?;
        }
    }
    w.flush().map_err(wrap)?;
    Ok(())
}

fn read_checkpoint(path: &Path) -> Result<(Header, Vec<Array2<f64>>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let wrap = |e: std::io::Error| Error::io(path, e);
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic).map_err(wrap)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{}: bad magic, not a model checkpoint",
            path.display()
        )));
    }
    let mut len_bytes = [0u8; 4];
    r.read_exact(&mut len_bytes).map_err(wrap)?;
    let header_len = u32::from_le_bytes(len_bytes) as usize;
    let mut header_json = vec![0u8; header_len];
    r.read_exact(&mut header_json).map_err(wrap)?;
    let header: Header = serde_json::from_slice(&header_json)
        .map_err(|e| Error::Checkpoint(format!("{}: bad header: {e}", path.display())))?;
    let infos = match &header {
        Header::Teacher { params, .. } => params.clone(),
        Header::Student { params, .. } => params.clone(),
    };
    let mut arrays = Vec::with_capacity(infos.len());
    for info in &infos {
        let count = info.rows * info.cols;
        let mut buf = vec![0u8; count * 8];
        r.read_exact(&mut buf).map_err(|_| {
            Error::Checkpoint(format!(
                "{}: truncated while reading {}",
                path.display(),
                info.name
            ))
        })?;
        let data: Vec<f64> = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        arrays.push(
            Array2::from_shape_vec((info.rows, info.cols), data)
                .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?,
        );
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing).map_err(wrap)? != 0 {
        return Err(Error::Checkpoint(format!(
            "{}: trailing bytes after parameter data",
            path.display()
        )));
    }
    Ok((header, arrays))
}

fn assign_params(
    target: &mut [&mut Array2<f64>],
    infos: &[ParamInfo],
    arrays: Vec<Array2<f64>>,
) -> Result<()> {
    if target.len() != arrays.len() {
        return Err(Error::Checkpoint(format!(
            "parameter count mismatch: model has {}, checkpoint has {}",
            target.len(),
            arrays.len()
        )));
    }
    for ((t, a), info) in target.iter_mut().zip(arrays).zip(infos) {
        if t.dim() != a.dim() {
            return Err(Error::Checkpoint(format!(
                "shape mismatch for {}: model {:?}, checkpoint {:?}",
                info.name,
                t.dim(),
                a.dim()
            )));
        }
        **t = a;
    }
    Ok(())
}

pub fn save_teacher(path: impl AsRef<Path>, teacher: &Teacher, meta: CheckpointMeta) -> Result<()> {
    let params = teacher.params();
    let names = teacher_param_names(teacher);
    let header = Header::Teacher {
        config: teacher.config.clone(),
        news_vocab: teacher.news_encoder.vocab.clone(),
        reasoning_vocab: teacher.reasoning_encoder.vocab.clone(),
        params: param_infos(&names, &params),
        meta,
    };
    write_checkpoint(path.as_ref(), &header, &params)
}

pub fn load_teacher(path: impl AsRef<Path>) -> Result<(Teacher, CheckpointMeta)> {
    let path = path.as_ref();
    let (header, arrays) = read_checkpoint(path)?;
    match header {
        Header::Teacher {
            config,
            mut news_vocab,
            mut reasoning_vocab,
            params,
            meta,
        } => {
            news_vocab.rebuild_index();
            reasoning_vocab.rebuild_index();
            let mut teacher = Teacher::new(config, news_vocab, reasoning_vocab, meta.seed)?;
            assign_params(&mut teacher.params_mut(), &params, arrays)?;
            Ok((teacher, meta))
        }
        Header::Student { .. } => Err(Error::Checkpoint(format!(
            "{}: expected a teacher checkpoint, found a student",
            path.display()
        ))),
    }
}

pub fn save_student(path: impl AsRef<Path>, student: &Student, meta: CheckpointMeta) -> Result<()> {
    let params = student.params();
    let names = student_param_names(student);
    let header = Header::Student {
        config: student.config.clone(),
        vocab: student.encoder.vocab.clone(),
        params: param_infos(&names, &params),
        meta,
    };
    write_checkpoint(path.as_ref(), &header, &params)
}

pub fn load_student(path: impl AsRef<Path>) -> Result<(Student, CheckpointMeta)> {
    let path = path.as_ref();
    let (header, arrays) = read_checkpoint(path)?;
    match header {
        Header::Student {
            config,
            mut vocab,
            params,
            meta,
        } => {
            vocab.rebuild_index();
            let mut student = Student::from_config(config, vocab)?;
            assign_params(&mut student.params_mut(), &params, arrays)?;
            Ok((student, meta))
        }
        Header::Teacher { .. } => Err(Error::Checkpoint(format!(
            "{}: expected a student checkpoint, found a teacher",
            path.display()
        ))),
    }
}

/// Content hash of any file, used to key the distillation-target cache.
pub fn file_sha256(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    std::io::copy(&mut file, &mut hasher).map_err(|e| Error::io(path, e))?;
    Ok(format!("{:x}", hasher.finalize()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderSpec;

    fn toy_teacher() -> Teacher {
        let vocab = Vocab::build(["one two three four"]);
        let config = TeacherConfig {
            encoder: EncoderSpec {
                width: 8,
                depth: 1,
                max_len: 16,
                ..Default::default()
            },
            classifier_hidden: 8,
            ..Default::default()
        };
        Teacher::new(config, vocab.clone(), vocab, 3).unwrap()
    }

    #[test]
    fn teacher_round_trip_is_bitwise() {
        let teacher = toy_teacher();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("teacher.bin");
        let meta = CheckpointMeta {
            seed: 3,
            stage1_epochs: 2,
            stage2_epochs: 1,
        };
        save_teacher(&path, &teacher, meta).unwrap();
        let (loaded, meta) = load_teacher(&path).unwrap();
        assert_eq!(meta.stage1_epochs, 2);
        for (a, b) in teacher.params().iter().zip(loaded.params()) {
            assert_eq!(a, &b);
        }
        // loaded vocab index works
        assert_eq!(loaded.news_encoder.vocab.id("two"), teacher.news_encoder.vocab.id("two"));
    }

    #[test]
    fn student_round_trip_is_bitwise() {
        let teacher = toy_teacher();
        let student = Student::from_teacher(&teacher, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("student.bin");
        save_student(&path, &student, CheckpointMeta::default()).unwrap();
        let (loaded, _) = load_student(&path).unwrap();
        for (a, b) in student.params().iter().zip(loaded.params()) {
            assert_eq!(a, &b);
        }
        assert_eq!(
            student.predict("one two").unwrap(),
            loaded.predict("one two").unwrap()
        );
    }

    #[test]
    fn wrong_kind_is_rejected() {
        let teacher = toy_teacher();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("teacher.bin");
        save_teacher(&path, &teacher, CheckpointMeta::default()).unwrap();
        assert!(load_student(&path).is_err());
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.bin");
        std::fs::write(&path, b"not a checkpoint at all").unwrap();
        let err = load_teacher(&path).unwrap_err();
        assert!(err.to_string().contains("bad magic"), "{err}");
    }

    #[test]
    fn truncation_is_detected() {
        let teacher = toy_teacher();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("teacher.bin");
        save_teacher(&path, &teacher, CheckpointMeta::default()).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 16]).unwrap();
        assert!(load_teacher(&path).is_err());
    }

    #[test]
    fn trailing_bytes_are_detected() {
        let teacher = toy_teacher();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("teacher.bin");
        save_teacher(&path, &teacher, CheckpointMeta::default()).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.extend_from_slice(&[0u8; 8]);
        std::fs::write(&path, &bytes).unwrap();
        let err = load_teacher(&path).unwrap_err();
        assert!(err.to_string().contains("trailing"), "{err}");
    }

    #[test]
    fn file_hash_is_stable_and_content_sensitive() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a");
        let b = dir.path().join("b");
        std::fs::write(&a, b"hello").unwrap();
        std::fs::write(&b, b"hello").unwrap();
        assert_eq!(file_sha256(&a).unwrap(), file_sha256(&b).unwrap());
        std::fs::write(&b, b"hello!").unwrap();
        assert_ne!(file_sha256(&a).unwrap(), file_sha256(&b).unwrap());
    }
}
