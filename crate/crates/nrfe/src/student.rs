//! The reasoning-free student: the teacher's news encoder and pooling,
//! a projection that mimics the teacher's fused representation, and a
//! fresh classifier. Trained with reverse KL against precomputed teacher
//! targets plus hard-label cross entropy.

use std::collections::HashMap;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::dataio::{BinaryLabel, NewsItem};
use crate::encoder::{AttentionPool, AttentionPoolVars, EncoderSpec, TinyEncoder, TinyEncoderVars};
use crate::error::{Error, Result};
use crate::nn::{dropout_mask, Mlp, MlpVars};
use crate::optim::Adam;
use crate::teacher::Teacher;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudentConfig {
    pub encoder: EncoderSpec,
    pub classifier_hidden: usize,
    pub dropout: f64,
    pub temperature: f64,
}

#[derive(Debug, Clone)]
pub struct Student {
    pub config: StudentConfig,
    pub encoder: TinyEncoder,
    pub pool: AttentionPool,
    /// d -> 4d, matching the teacher's fused width
    pub projection: Mlp,
    pub classifier: Mlp,
}

pub struct StudentVars {
    pub encoder: TinyEncoderVars,
    pub pool: AttentionPoolVars,
    pub projection: MlpVars,
    pub classifier: MlpVars,
}

impl Student {
    /// Fresh student whose encoder and news pooling are copied from the
    /// teacher byte for byte; projection and classifier start at `seed`.
    pub fn from_teacher(teacher: &Teacher, seed: u64) -> Result<Self> {
        let d = teacher.width();
        let config = StudentConfig {
            encoder: teacher.config.encoder.clone(),
            classifier_hidden: teacher.config.classifier_hidden,
            dropout: teacher.config.dropout,
            temperature: 1.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Student {
            encoder: teacher.news_encoder.clone(),
            pool: teacher.pools.x.clone(),
            projection: Mlp::new(d, 4 * d, 4 * d, &mut rng),
            classifier: Mlp::new(4 * d, config.classifier_hidden, 2, &mut rng),
            config,
        })
    }

    /// Rebuild an empty student from a stored config; parameters are
    /// overwritten by the checkpoint loader.
    pub fn from_config(config: StudentConfig, vocab: crate::encoder::Vocab) -> Result<Self> {
        let d = config.encoder.width;
        let encoder = TinyEncoder::new(config.encoder.clone(), vocab, 0)?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Ok(Student {
            pool: AttentionPool::new(d, &mut rng),
            projection: Mlp::new(d, 4 * d, 4 * d, &mut rng),
            classifier: Mlp::new(4 * d, config.classifier_hidden, 2, &mut rng),
            encoder,
            config,
        })
    }

    pub fn bind(&self, tape: &mut Tape) -> StudentVars {
        StudentVars {
            encoder: self.encoder.bind(tape),
            pool: self.pool.bind(tape),
            projection: self.projection.bind(tape),
            classifier: self.classifier.bind(tape),
        }
    }

    pub fn params(&self) -> Vec<&Array2<f64>> {
        let mut p = self.encoder.params();
        p.extend(self.pool.params());
        p.extend(self.projection.params());
        p.extend(self.classifier.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut p = self.encoder.params_mut();
        p.extend(self.pool.params_mut());
        p.extend(self.projection.params_mut());
        p.extend(self.classifier.params_mut());
        p
    }

    /// Forward from news text alone: pooled encoding, projected fused
    /// mimic, and class logits.
    pub fn forward(
        &self,
        tape: &mut Tape,
        vars: &StudentVars,
        text: &str,
        dropout: Option<&Array2<f64>>,
    ) -> Result<(Var, Var)> {
        let seq = self.encoder.encode_text(tape, &vars.encoder, text)?;
        let (pooled, _) = AttentionPool::forward(tape, vars.pool, &seq)?;
        let fused_mimic = Mlp::forward(tape, vars.projection, pooled, None);
        let logits = Mlp::forward(tape, vars.classifier, fused_mimic, dropout);
        Ok((fused_mimic, logits))
    }

    pub fn predict(&self, text: &str) -> Result<BinaryLabel> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let (_, logits) = self.forward(&mut tape, &vars, text, None)?;
        let row = tape.value(logits);
        Ok(if row[(0, 0)] >= row[(0, 1)] {
            BinaryLabel::Real
        } else {
            BinaryLabel::Fake
        })
    }

    /// The student's fused-mimic vector, for feature export.
    pub fn features(&self, text: &str) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let (fused, _) = self.forward(&mut tape, &vars, text, None)?;
        Ok(tape.value(fused).row(0).to_vec())
    }
}

pub fn student_var_ids(vars: &StudentVars) -> Vec<Var> {
    let mut ids = vars.encoder.ids();
    ids.extend(vars.pool.ids());
    ids.extend(vars.projection.ids());
    ids.extend(vars.classifier.ids());
    ids
}

/// KL(q || p) over probability vectors, with the 0 * log(0/p) = 0
/// convention. Reference implementation for the tape version.
pub fn reverse_kl_probs(q: &[f64], p: &[f64]) -> f64 {
    assert_eq!(q.len(), p.len());
    q.iter()
        .zip(p)
        .map(|(&qi, &pi)| if qi == 0.0 { 0.0 } else { qi * (qi / pi).ln() })
        .sum()
}

/// Reverse KL on the tape: both vectors pass through softmax(x / tau)
/// and the divergence is taken with the student distribution first.
pub fn reverse_kl(tape: &mut Tape, student_vec: Var, teacher_vec: Var, tau: f64) -> Result<Var> {
    let n = tape.value(student_vec).ncols();
    if tape.value(teacher_vec).ncols() != n {
        return Err(Error::Training("reverse KL width mismatch".to_string()));
    }
    if tau <= 0.0 {
        return Err(Error::Training("temperature must be positive".to_string()));
    }
    let mask = vec![true; n];
    let qs = tape.scale(student_vec, 1.0 / tau);
    let ps = tape.scale(teacher_vec, 1.0 / tau);
    let q = tape.masked_softmax_rows(qs, &mask);
    let log_q = tape.log_softmax_rows(qs);
    let log_p = tape.log_softmax_rows(ps);
    let diff = tape.sub(log_q, log_p);
    let terms = tape.mul(q, diff);
    Ok(tape.sum_all(terms))
}

#[derive(Debug, Clone)]
pub struct StudentTrainSpec {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub temperature: f64,
    /// weight of the distillation term relative to the hard-label term
    pub kd_weight: f64,
    /// weight of the hard-label cross-entropy term
    pub ce_weight: f64,
}

impl Default for StudentTrainSpec {
    fn default() -> Self {
        StudentTrainSpec {
            lr: 3e-5,
            epochs: 30,
            batch_size: 16,
            seed: 0,
            temperature: 1.0,
            kd_weight: 1.0,
            ce_weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StudentCurveRow {
    pub epoch: usize,
    pub kd: f64,
    pub ce: f64,
}

/// Distill against precomputed teacher fused representations. Items
/// missing a target still contribute the hard-label term.
pub fn train_student(
    student: &mut Student,
    items: &[NewsItem],
    targets: &HashMap<String, Vec<f64>>,
    spec: &StudentTrainSpec,
) -> Result<Vec<StudentCurveRow>> {
    if items.is_empty() {
        return Err(Error::Training("empty training set".to_string()));
    }
    let shapes: Vec<(usize, usize)> = student.params().iter().map(|p| p.dim()).collect();
    let mut opt = Adam::new(spec.lr, &shapes);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut curve = Vec::new();

    for epoch in 1..=spec.epochs {
        order.shuffle(&mut rng);
        let (mut sum_kd, mut n_kd, mut sum_ce, mut n_ce) = (0.0, 0usize, 0.0, 0usize);
        for batch in order.chunks(spec.batch_size) {
            let mut tape = Tape::new();
            let vars = student.bind(&mut tape);
            let mut total: Option<Var> = None;
            for &ii in batch {
                let item = &items[ii];
                let mask = dropout_mask(
                    1,
                    student.classifier.hidden_width(),
                    student.config.dropout,
                    &mut rng,
                );
                let (fused, logits) = student.forward(&mut tape, &vars, &item.text, Some(&mask))?;
                let ce = tape.cross_entropy_logits(logits, item.label.index());
                sum_ce += tape.scalar(ce);
                n_ce += 1;
                let mut loss = tape.scale(ce, spec.ce_weight);
                if let Some(target) = targets.get(&item.id) {
                    if target.len() != tape.value(fused).ncols() {
                        return Err(Error::Training(format!(
                            "target width {} does not match student fused width {}",
                            target.len(),
                            tape.value(fused).ncols()
                        )));
                    }
                    let t = tape.leaf(Array2::from_shape_vec((1, target.len()), target.clone())
                        .expect("row vector"));
                    let kd = reverse_kl(&mut tape, fused, t, spec.temperature)?;
                    sum_kd += tape.scalar(kd);
                    n_kd += 1;
                    let weighted = tape.scale(kd, spec.kd_weight);
                    loss = tape.add(loss, weighted);
                }
                total = Some(match total {
                    Some(t) => tape.add(t, loss),
                    None => loss,
                });
            }
            let total = total.expect("non-empty batch");
            let loss = tape.scale(total, 1.0 / batch.len() as f64);
            let grads = tape.backward(loss);
            let ids = student_var_ids(&vars);
            let grad_list: Vec<Array2<f64>> = ids.iter().map(|v| grads[v.0].clone()).collect();
            let mut params = student.params_mut();
            opt.step(&mut params, &grad_list);
        }
        curve.push(StudentCurveRow {
            epoch,
            kd: sum_kd / n_kd.max(1) as f64,
            ce: sum_ce / n_ce.max(1) as f64,
        });
    }
    Ok(curve)
}

/// Teacher fused representations for every item with a qualified
/// positive reasoning, computed once with the teacher frozen.
pub fn compute_distill_targets(
    teacher: &Teacher,
    items: &[NewsItem],
    positive_reasoning: &HashMap<String, String>,
) -> Result<HashMap<String, Vec<f64>>> {
    let pairs: Vec<(&NewsItem, &String)> = items
        .iter()
        .filter_map(|item| positive_reasoning.get(&item.id).map(|r| (item, r)))
        .collect();
    let compute = |(item, reasoning): &(&NewsItem, &String)| -> Result<(String, Vec<f64>)> {
        Ok((
            item.id.clone(),
            teacher.fused_representation(&item.text, reasoning)?,
        ))
    };
    #[cfg(feature = "parallel")]
    let results: Result<Vec<_>> = {
        use rayon::prelude::*;
        pairs.par_iter().map(compute).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Result<Vec<_>> = pairs.iter().map(compute).collect();
    Ok(results?.into_iter().collect())
}
