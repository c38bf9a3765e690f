//! The NRFE teacher: dual encoders, cross-attention interaction, three
//! cosine-margin consistency heads, fusion of the positive-pair streams,
//! and a classification MLP, trained in two stages.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::dataio::{BinaryLabel, NewsItem, ReasoningKind, ReasoningStoreEntry};
use crate::encoder::{AttentionPool, AttentionPoolVars, EncoderSpec, SeqRep, TinyEncoder, TinyEncoderVars, Vocab};
use crate::error::{Error, Result};
use crate::nn::{dropout_mask, glorot, Linear, LinearVars, Mlp, MlpVars};
use crate::optim::Adam;

/// Which consistency terms participate in training. `true` = enabled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossMask {
    pub rc: bool,
    pub rxc: bool,
    pub xrc: bool,
}

impl Default for LossMask {
    fn default() -> Self {
        LossMask {
            rc: true,
            rxc: true,
            xrc: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TeacherConfig {
    pub encoder: EncoderSpec,
    pub margin: f64,
    /// Skip the per-head learned projection and take cosines on the raw
    /// pooled vectors.
    pub raw_cosine: bool,
    pub num_heads: usize,
    pub classifier_hidden: usize,
    pub dropout: f64,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        TeacherConfig {
            encoder: EncoderSpec::default(),
            margin: 0.2,
            raw_cosine: false,
            num_heads: 1,
            classifier_hidden: 64,
            dropout: 0.3,
        }
    }
}

/// Single projection set for scaled dot-product cross-attention. Queries
/// come from one sequence, keys and values from the other.
#[derive(Debug, Clone)]
pub struct CrossAttnHead {
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct CrossAttention {
    pub heads: Vec<CrossAttnHead>,
}

#[derive(Debug, Clone)]
pub struct CrossAttnHeadVars {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
}

#[derive(Debug, Clone)]
pub struct CrossAttentionVars {
    pub heads: Vec<CrossAttnHeadVars>,
}

/// Both directions of one interaction, plus per-head attention weights
/// for inspection.
pub struct CrossAttended {
    pub b_to_a: SeqRep,
    pub a_to_b: SeqRep,
    /// weights used for b_to_a, one [La, Lb] matrix per head
    pub weights_b_to_a: Vec<Var>,
    pub weights_a_to_b: Vec<Var>,
}

impl CrossAttention {
    pub fn new(width: usize, num_heads: usize, rng: &mut ChaCha8Rng) -> Self {
        assert!(num_heads >= 1 && width % num_heads == 0, "heads must divide width");
        let dh = width / num_heads;
        CrossAttention {
            heads: (0..num_heads)
                .map(|_| CrossAttnHead {
                    wq: glorot(width, dh, rng),
                    wk: glorot(width, dh, rng),
                    wv: glorot(width, dh, rng),
                })
                .collect(),
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> CrossAttentionVars {
        CrossAttentionVars {
            heads: self
                .heads
                .iter()
                .map(|h| CrossAttnHeadVars {
                    wq: tape.leaf(h.wq.clone()),
                    wk: tape.leaf(h.wk.clone()),
                    wv: tape.leaf(h.wv.clone()),
                })
                .collect(),
        }
    }

    fn attend_one_direction(
        tape: &mut Tape,
        vars: &CrossAttentionVars,
        queries_from: &SeqRep,
        keys_values_from: &SeqRep,
    ) -> (SeqRep, Vec<Var>) {
        let mut outs = Vec::new();
        let mut weight_vars = Vec::new();
        for head in &vars.heads {
            let q = tape.matmul(queries_from.var, head.wq);
            let k = tape.matmul(keys_values_from.var, head.wk);
            let v = tape.matmul(keys_values_from.var, head.wv);
            let dh = tape.value(q).ncols() as f64;
            let kt = tape.transpose(k);
            let scores = tape.matmul(q, kt);
            let scaled = tape.scale(scores, 1.0 / dh.sqrt());
            let weights = tape.masked_softmax_rows(scaled, &keys_values_from.mask);
            let out = tape.matmul(weights, v);
            outs.push(out);
            weight_vars.push(weights);
        }
        let var = if outs.len() == 1 {
            outs[0]
        } else {
            tape.concat_cols(&outs)
        };
        (
            SeqRep {
                var,
                mask: queries_from.mask.clone(),
            },
            weight_vars,
        )
    }

    /// `b_to_a` has a's length (queries from a, keys/values from b);
    /// `a_to_b` is symmetric.
    pub fn cross_attend(
        &self,
        tape: &mut Tape,
        vars: &CrossAttentionVars,
        a: &SeqRep,
        b: &SeqRep,
    ) -> Result<CrossAttended> {
        let wa = tape.value(a.var).ncols();
        let wb = tape.value(b.var).ncols();
        if wa != wb {
            return Err(Error::Encoder(format!(
                "cross-attention width mismatch: {wa} vs {wb}"
            )));
        }
        let (b_to_a, weights_b_to_a) = Self::attend_one_direction(tape, vars, a, b);
        let (a_to_b, weights_a_to_b) = Self::attend_one_direction(tape, vars, b, a);
        Ok(CrossAttended {
            b_to_a,
            a_to_b,
            weights_b_to_a,
            weights_a_to_b,
        })
    }

    pub fn params(&self) -> Vec<&Array2<f64>> {
        self.heads
            .iter()
            .flat_map(|h| vec![&h.wq, &h.wk, &h.wv])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        self.heads
            .iter_mut()
            .flat_map(|h| vec![&mut h.wq, &mut h.wk, &mut h.wv])
            .collect()
    }
}

impl CrossAttentionVars {
    pub fn ids(&self) -> Vec<Var> {
        self.heads
            .iter()
            .flat_map(|h| vec![h.wq, h.wk, h.wv])
            .collect()
    }
}

/// Cosine embedding loss: 1 - cos for positive pairs,
/// max(0, cos - margin) for negative pairs.
pub fn consistency_loss(
    tape: &mut Tape,
    f_x: Var,
    f_r: Var,
    pair_label: u8,
    margin: f64,
) -> Result<Var> {
    for v in [f_x, f_r] {
        let norm: f64 = tape.value(v).iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::Training("zero-norm vector in consistency loss".to_string()));
        }
    }
    let cos = tape.cosine(f_x, f_r);
    Ok(if pair_label == 1 {
        let neg = tape.scale(cos, -1.0);
        tape.add_scalar(neg, 1.0)
    } else {
        let shifted = tape.add_scalar(cos, -margin);
        tape.relu(shifted)
    })
}

/// One semantic-consistency head: independent projections for the news
/// side and the other side, feeding the cosine objective.
#[derive(Debug, Clone)]
pub struct ConsistencyHead {
    pub proj_news: Linear,
    pub proj_other: Linear,
}

#[derive(Debug, Clone, Copy)]
pub struct ConsistencyHeadVars {
    pub proj_news: LinearVars,
    pub proj_other: LinearVars,
}

impl ConsistencyHead {
    pub fn new(width: usize, rng: &mut ChaCha8Rng) -> Self {
        ConsistencyHead {
            proj_news: Linear::new(width, width, rng),
            proj_other: Linear::new(width, width, rng),
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> ConsistencyHeadVars {
        ConsistencyHeadVars {
            proj_news: self.proj_news.bind(tape),
            proj_other: self.proj_other.bind(tape),
        }
    }

    pub fn project_news(tape: &mut Tape, vars: ConsistencyHeadVars, x: Var, raw: bool) -> Var {
        if raw {
            return x;
        }
        let z = Linear::forward(tape, vars.proj_news, x);
        tape.tanh(z)
    }

    pub fn project_other(tape: &mut Tape, vars: ConsistencyHeadVars, x: Var, raw: bool) -> Var {
        if raw {
            return x;
        }
        let z = Linear::forward(tape, vars.proj_other, x);
        tape.tanh(z)
    }

    pub fn params(&self) -> Vec<&Array2<f64>> {
        let mut p = self.proj_news.params();
        p.extend(self.proj_other.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut p = self.proj_news.params_mut();
        p.extend(self.proj_other.params_mut());
        p
    }
}

impl ConsistencyHeadVars {
    pub fn ids(&self) -> Vec<Var> {
        let mut ids = self.proj_news.ids();
        ids.extend(self.proj_other.ids());
        ids
    }
}

/// Concatenation in the fixed order m_x, m_p, m_{p->x}, m_{x->p}.
pub fn fuse(tape: &mut Tape, m_x: Var, m_p: Var, m_p_to_x: Var, m_x_to_p: Var) -> Result<Var> {
    let d = tape.value(m_x).ncols();
    for v in [m_p, m_p_to_x, m_x_to_p] {
        if tape.value(v).ncols() != d {
            return Err(Error::Training("fuse width mismatch".to_string()));
        }
    }
    Ok(tape.concat_cols(&[m_x, m_p, m_p_to_x, m_x_to_p]))
}

/// The seven pooling layers, one per semantic stream.
#[derive(Debug, Clone)]
pub struct Pools {
    pub x: AttentionPool,
    pub p: AttentionPool,
    pub n: AttentionPool,
    pub p_to_x: AttentionPool,
    pub n_to_x: AttentionPool,
    pub x_to_p: AttentionPool,
    pub x_to_n: AttentionPool,
}

#[derive(Debug, Clone, Copy)]
pub struct PoolsVars {
    pub x: AttentionPoolVars,
    pub p: AttentionPoolVars,
    pub n: AttentionPoolVars,
    pub p_to_x: AttentionPoolVars,
    pub n_to_x: AttentionPoolVars,
    pub x_to_p: AttentionPoolVars,
    pub x_to_n: AttentionPoolVars,
}

impl Pools {
    fn new(width: usize, rng: &mut ChaCha8Rng) -> Self {
        Pools {
            x: AttentionPool::new(width, rng),
            p: AttentionPool::new(width, rng),
            n: AttentionPool::new(width, rng),
            p_to_x: AttentionPool::new(width, rng),
            n_to_x: AttentionPool::new(width, rng),
            x_to_p: AttentionPool::new(width, rng),
            x_to_n: AttentionPool::new(width, rng),
        }
    }

    fn bind(&self, tape: &mut Tape) -> PoolsVars {
        PoolsVars {
            x: self.x.bind(tape),
            p: self.p.bind(tape),
            n: self.n.bind(tape),
            p_to_x: self.p_to_x.bind(tape),
            n_to_x: self.n_to_x.bind(tape),
            x_to_p: self.x_to_p.bind(tape),
            x_to_n: self.x_to_n.bind(tape),
        }
    }

    pub fn params(&self) -> Vec<&Array2<f64>> {
        [
            &self.x, &self.p, &self.n, &self.p_to_x, &self.n_to_x, &self.x_to_p, &self.x_to_n,
        ]
        .iter()
        .flat_map(|p| p.params())
        .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out = Vec::new();
        for p in [
            &mut self.x,
            &mut self.p,
            &mut self.n,
            &mut self.p_to_x,
            &mut self.n_to_x,
            &mut self.x_to_p,
            &mut self.x_to_n,
        ] {
            out.extend(p.params_mut());
        }
        out
    }
}

impl PoolsVars {
    pub fn ids(&self) -> Vec<Var> {
        [
            self.x, self.p, self.n, self.p_to_x, self.n_to_x, self.x_to_p, self.x_to_n,
        ]
        .iter()
        .flat_map(|p| p.ids())
        .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Teacher {
    pub config: TeacherConfig,
    pub news_encoder: TinyEncoder,
    pub reasoning_encoder: TinyEncoder,
    pub cross: CrossAttention,
    pub pools: Pools,
    pub rc: ConsistencyHead,
    pub rxc: ConsistencyHead,
    pub xrc: ConsistencyHead,
    /// 4d -> hidden -> 2
    pub classifier: Mlp,
}

pub struct TeacherVars {
    pub news_encoder: TinyEncoderVars,
    pub reasoning_encoder: TinyEncoderVars,
    pub cross: CrossAttentionVars,
    pub pools: PoolsVars,
    pub rc: ConsistencyHeadVars,
    pub rxc: ConsistencyHeadVars,
    pub xrc: ConsistencyHeadVars,
    pub classifier: MlpVars,
}

/// Index ranges of each component in the flat parameter list; used to
/// freeze groups during stage 2 and to verify ablation masking.
#[derive(Debug, Clone)]
pub struct ParamRanges {
    pub news_encoder: std::ops::Range<usize>,
    pub reasoning_encoder: std::ops::Range<usize>,
    pub cross: std::ops::Range<usize>,
    pub pools: std::ops::Range<usize>,
    pub rc: std::ops::Range<usize>,
    pub rxc: std::ops::Range<usize>,
    pub xrc: std::ops::Range<usize>,
    pub classifier: std::ops::Range<usize>,
}

impl Teacher {
    pub fn new(
        config: TeacherConfig,
        news_vocab: Vocab,
        reasoning_vocab: Vocab,
        seed: u64,
    ) -> Result<Self> {
        let d = config.encoder.width;
        let news_encoder = TinyEncoder::new(config.encoder.clone(), news_vocab, seed ^ 0x11)?;
        let reasoning_encoder =
            TinyEncoder::new(config.encoder.clone(), reasoning_vocab, seed ^ 0x22)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x33);
        Ok(Teacher {
            cross: CrossAttention::new(d, config.num_heads, &mut rng),
            pools: Pools::new(d, &mut rng),
            rc: ConsistencyHead::new(d, &mut rng),
            rxc: ConsistencyHead::new(d, &mut rng),
            xrc: ConsistencyHead::new(d, &mut rng),
            classifier: Mlp::new(4 * d, config.classifier_hidden, 2, &mut rng),
            news_encoder,
            reasoning_encoder,
            config,
        })
    }

    pub fn width(&self) -> usize {
        self.config.encoder.width
    }

    pub fn bind(&self, tape: &mut Tape) -> TeacherVars {
        TeacherVars {
            news_encoder: self.news_encoder.bind(tape),
            reasoning_encoder: self.reasoning_encoder.bind(tape),
            cross: self.cross.bind(tape),
            pools: self.pools.bind(tape),
            rc: self.rc.bind(tape),
            rxc: self.rxc.bind(tape),
            xrc: self.xrc.bind(tape),
            classifier: self.classifier.bind(tape),
        }
    }

    pub fn params(&self) -> Vec<&Array2<f64>> {
        let mut p = self.news_encoder.params();
        p.extend(self.reasoning_encoder.params());
        p.extend(self.cross.params());
        p.extend(self.pools.params());
        p.extend(self.rc.params());
        p.extend(self.rxc.params());
        p.extend(self.xrc.params());
        p.extend(self.classifier.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut p = self.news_encoder.params_mut();
        p.extend(self.reasoning_encoder.params_mut());
        p.extend(self.cross.params_mut());
        p.extend(self.pools.params_mut());
        p.extend(self.rc.params_mut());
        p.extend(self.rxc.params_mut());
        p.extend(self.xrc.params_mut());
        p.extend(self.classifier.params_mut());
        p
    }

    pub fn param_ranges(&self) -> ParamRanges {
        let ne = self.news_encoder.params().len();
        let re = self.reasoning_encoder.params().len();
        let cr = self.cross.params().len();
        let po = self.pools.params().len();
        let rc = self.rc.params().len();
        let rxc = self.rxc.params().len();
        let xrc = self.xrc.params().len();
        let cl = self.classifier.params().len();
        let mut off = 0;
        let mut next = |n: usize| {
            let r = off..off + n;
            off += n;
            r
        };
        ParamRanges {
            news_encoder: next(ne),
            reasoning_encoder: next(re),
            cross: next(cr),
            pools: next(po),
            rc: next(rc),
            rxc: next(rxc),
            xrc: next(xrc),
            classifier: next(cl),
        }
    }

    /// Encode a (news, reasoning) pair, cross-attend, and pool the four
    /// streams that exist for this pair's reasoning kind.
    pub fn pair_streams(
        &self,
        tape: &mut Tape,
        vars: &TeacherVars,
        news_text: &str,
        reasoning_text: &str,
        kind: ReasoningKind,
    ) -> Result<PairStreams> {
        let f_x_seq = self
            .news_encoder
            .encode_text(tape, &vars.news_encoder, news_text)?;
        let f_r_seq =
            self.reasoning_encoder
                .encode_text(tape, &vars.reasoning_encoder, reasoning_text)?;
        let attended = self
            .cross
            .cross_attend(tape, &vars.cross, &f_x_seq, &f_r_seq)?;

        let (r_pool, r_to_x_pool, x_to_r_pool) = match kind {
            ReasoningKind::Positive => (vars.pools.p, vars.pools.p_to_x, vars.pools.x_to_p),
            ReasoningKind::Negative => (vars.pools.n, vars.pools.n_to_x, vars.pools.x_to_n),
        };
        let (f_x, _) = AttentionPool::forward(tape, vars.pools.x, &f_x_seq)?;
        let (f_r, _) = AttentionPool::forward(tape, r_pool, &f_r_seq)?;
        let (f_r_to_x, _) = AttentionPool::forward(tape, r_to_x_pool, &attended.b_to_a)?;
        let (f_x_to_r, _) = AttentionPool::forward(tape, x_to_r_pool, &attended.a_to_b)?;
        Ok(PairStreams {
            f_x,
            f_r,
            f_r_to_x,
            f_x_to_r,
        })
    }

    /// The three consistency terms for one pair, after each head's
    /// projection, plus their (masked) sum.
    pub fn total_consistency_loss(
        &self,
        tape: &mut Tape,
        vars: &TeacherVars,
        streams: &PairStreams,
        pair_label: u8,
        mask: LossMask,
    ) -> Result<ConsistencyTerms> {
        let raw = self.config.raw_cosine;
        let margin = self.config.margin;

        let rc_x = ConsistencyHead::project_news(tape, vars.rc, streams.f_x, raw);
        let rc_r = ConsistencyHead::project_other(tape, vars.rc, streams.f_r, raw);
        let rc = consistency_loss(tape, rc_x, rc_r, pair_label, margin)?;

        let rxc_x = ConsistencyHead::project_news(tape, vars.rxc, streams.f_x, raw);
        let rxc_r = ConsistencyHead::project_other(tape, vars.rxc, streams.f_r_to_x, raw);
        let rxc = consistency_loss(tape, rxc_x, rxc_r, pair_label, margin)?;

        let xrc_x = ConsistencyHead::project_news(tape, vars.xrc, streams.f_x, raw);
        let xrc_r = ConsistencyHead::project_other(tape, vars.xrc, streams.f_x_to_r, raw);
        let xrc = consistency_loss(tape, xrc_x, xrc_r, pair_label, margin)?;

        // c is the sum of the unmasked terms; masked heads see no gradient
        let zero = tape.scalar_leaf(0.0);
        let mut c = zero;
        if mask.rc {
            c = tape.add(c, rc);
        }
        if mask.rxc {
            c = tape.add(c, rxc);
        }
        if mask.xrc {
            c = tape.add(c, xrc);
        }
        Ok(ConsistencyTerms { rc, rxc, xrc, c })
    }

    /// Positive-pair classification path: project the four streams with
    /// the trained heads, fuse in fixed order, classify.
    pub fn positive_path(
        &self,
        tape: &mut Tape,
        vars: &TeacherVars,
        streams: &PairStreams,
        dropout: Option<&Array2<f64>>,
    ) -> Result<(Var, Var)> {
        let raw = self.config.raw_cosine;
        let m_x = ConsistencyHead::project_news(tape, vars.rc, streams.f_x, raw);
        let m_p = ConsistencyHead::project_other(tape, vars.rc, streams.f_r, raw);
        let m_p_to_x = ConsistencyHead::project_other(tape, vars.rxc, streams.f_r_to_x, raw);
        let m_x_to_p = ConsistencyHead::project_other(tape, vars.xrc, streams.f_x_to_r, raw);
        let m_final = fuse(tape, m_x, m_p, m_p_to_x, m_x_to_p)?;
        let logits = Mlp::forward(tape, vars.classifier, m_final, dropout);
        Ok((m_final, logits))
    }

    /// Full forward for one pair in eval mode, with values extracted.
    pub fn eval_pair(
        &self,
        news_text: &str,
        reasoning_text: &str,
        kind: ReasoningKind,
        pair_label: u8,
        class_label: BinaryLabel,
    ) -> Result<TeacherOutputs> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let streams = self.pair_streams(&mut tape, &vars, news_text, reasoning_text, kind)?;
        let terms = self.total_consistency_loss(
            &mut tape,
            &vars,
            &streams,
            pair_label,
            LossMask::default(),
        )?;
        let (m_final, logits) = self.positive_path(&mut tape, &vars, &streams, None)?;
        let cls = tape.cross_entropy_logits(logits, class_label.index());
        Ok(TeacherOutputs {
            f_x: tape.value(streams.f_x).row(0).to_vec(),
            f_r: tape.value(streams.f_r).row(0).to_vec(),
            f_r_to_x: tape.value(streams.f_r_to_x).row(0).to_vec(),
            f_x_to_r: tape.value(streams.f_x_to_r).row(0).to_vec(),
            m_final: tape.value(m_final).row(0).to_vec(),
            logits: tape.value(logits).row(0).to_vec(),
            losses: TeacherLosses {
                rc: tape.scalar(terms.rc),
                rxc: tape.scalar(terms.rxc),
                xrc: tape.scalar(terms.xrc),
                c: tape.scalar(terms.c),
                cls: tape.scalar(cls),
            },
        })
    }

    /// News-only prediction through the positive pair path; used for the
    /// teacher's train-path accuracy.
    pub fn predict_pair(&self, news_text: &str, positive_reasoning: &str) -> Result<BinaryLabel> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let streams = self.pair_streams(
            &mut tape,
            &vars,
            news_text,
            positive_reasoning,
            ReasoningKind::Positive,
        )?;
        let (_, logits) = self.positive_path(&mut tape, &vars, &streams, None)?;
        let row = tape.value(logits);
        Ok(if row[(0, 0)] >= row[(0, 1)] {
            BinaryLabel::Real
        } else {
            BinaryLabel::Fake
        })
    }

    /// Teacher-side fused representation for one item (positive pair);
    /// the student's distillation target.
    pub fn fused_representation(&self, news_text: &str, positive_reasoning: &str) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let streams = self.pair_streams(
            &mut tape,
            &vars,
            news_text,
            positive_reasoning,
            ReasoningKind::Positive,
        )?;
        let (m_final, _) = self.positive_path(&mut tape, &vars, &streams, None)?;
        Ok(tape.value(m_final).row(0).to_vec())
    }
}

pub struct PairStreams {
    pub f_x: Var,
    pub f_r: Var,
    pub f_r_to_x: Var,
    pub f_x_to_r: Var,
}

pub struct ConsistencyTerms {
    pub rc: Var,
    pub rxc: Var,
    pub xrc: Var,
    pub c: Var,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TeacherLosses {
    pub rc: f64,
    pub rxc: f64,
    pub xrc: f64,
    pub c: f64,
    pub cls: f64,
}

#[derive(Debug, Clone)]
pub struct TeacherOutputs {
    pub f_x: Vec<f64>,
    pub f_r: Vec<f64>,
    pub f_r_to_x: Vec<f64>,
    pub f_x_to_r: Vec<f64>,
    pub m_final: Vec<f64>,
    pub logits: Vec<f64>,
    pub losses: TeacherLosses,
}

/// One training pair assembled from the corpus and the reasoning store.
#[derive(Debug, Clone)]
pub struct TrainPair {
    pub news_id: String,
    pub news_text: String,
    pub reasoning_text: String,
    pub kind: ReasoningKind,
    /// 1 = positive pair, 0 = negative pair
    pub pair_label: u8,
    pub class_label: BinaryLabel,
}

/// Build training pairs. Every item must have a qualified positive
/// reasoning; a qualified negative reasoning is optional per item.
pub fn build_pairs(items: &[NewsItem], store: &[ReasoningStoreEntry]) -> Result<Vec<TrainPair>> {
    let mut by_key: std::collections::HashMap<(&str, ReasoningKind), &ReasoningStoreEntry> =
        std::collections::HashMap::new();
    for e in store {
        if e.qualified {
            by_key.insert((e.news_id.as_str(), e.kind), e);
        }
    }
    let mut pairs = Vec::new();
    for item in items {
        let pos = by_key
            .get(&(item.id.as_str(), ReasoningKind::Positive))
            .ok_or_else(|| {
                Error::Training(format!(
                    "item {} has no qualified positive reasoning",
                    item.id
                ))
            })?;
        pairs.push(TrainPair {
            news_id: item.id.clone(),
            news_text: item.text.clone(),
            reasoning_text: pos.reasoning_text.clone(),
            kind: ReasoningKind::Positive,
            pair_label: 1,
            class_label: item.label,
        });
        if let Some(neg) = by_key.get(&(item.id.as_str(), ReasoningKind::Negative)) {
            pairs.push(TrainPair {
                news_id: item.id.clone(),
                news_text: item.text.clone(),
                reasoning_text: neg.reasoning_text.clone(),
                kind: ReasoningKind::Negative,
                pair_label: 0,
                class_label: item.label,
            });
        }
    }
    Ok(pairs)
}

#[derive(Debug, Clone)]
pub struct TeacherTrainSpec {
    pub lr: f64,
    pub epochs_stage1: usize,
    pub epochs_stage2: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub mask: LossMask,
    /// Stage 2 normally optimizes L_cls alone; this adds lambda * L_c.
    pub joint_stage2: bool,
    pub joint_lambda: f64,
}

impl Default for TeacherTrainSpec {
    fn default() -> Self {
        TeacherTrainSpec {
            lr: 3e-5,
            epochs_stage1: 30,
            epochs_stage2: 30,
            batch_size: 16,
            seed: 0,
            mask: LossMask::default(),
            joint_stage2: false,
            joint_lambda: 0.1,
        }
    }
}

/// One row of the training-curve CSV.
#[derive(Debug, Clone, Serialize)]
pub struct CurveRow {
    pub epoch: usize,
    pub rc: f64,
    pub rxc: f64,
    pub xrc: f64,
    pub c: f64,
    pub cls: f64,
}

/// Two-stage training. Stage 1 optimizes L_c over positive and negative
/// pairs; stage 2 optimizes L_cls over positive pairs with the heads'
/// projections frozen. Returns the per-epoch loss curve.
pub fn train_teacher(
    teacher: &mut Teacher,
    pairs: &[TrainPair],
    spec: &TeacherTrainSpec,
) -> Result<Vec<CurveRow>> {
    if pairs.is_empty() {
        return Err(Error::Training("empty training set".to_string()));
    }
    let shapes: Vec<(usize, usize)> = teacher.params().iter().map(|p| p.dim()).collect();
    let mut opt = Adam::new(spec.lr, &shapes);
    let ranges = teacher.param_ranges();
    let mut curve = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // stage 1: semantic consistency over all pairs
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    for epoch in 1..=spec.epochs_stage1 {
        order.shuffle(&mut rng);
        let (mut sum_rc, mut sum_rxc, mut sum_xrc, mut count) = (0.0, 0.0, 0.0, 0usize);
        for batch in order.chunks(spec.batch_size) {
            let mut tape = Tape::new();
            let vars = teacher.bind(&mut tape);
            let mut total: Option<Var> = None;
            for &pi in batch {
                let pair = &pairs[pi];
                let streams = teacher.pair_streams(
                    &mut tape,
                    &vars,
                    &pair.news_text,
                    &pair.reasoning_text,
                    pair.kind,
                )?;
                let terms = teacher.total_consistency_loss(
                    &mut tape,
                    &vars,
                    &streams,
                    pair.pair_label,
                    spec.mask,
                )?;
                sum_rc += if spec.mask.rc { tape.scalar(terms.rc) } else { 0.0 };
                sum_rxc += if spec.mask.rxc { tape.scalar(terms.rxc) } else { 0.0 };
                sum_xrc += if spec.mask.xrc { tape.scalar(terms.xrc) } else { 0.0 };
                count += 1;
                total = Some(match total {
                    Some(t) => tape.add(t, terms.c),
                    None => terms.c,
                });
            }
            let total = total.expect("non-empty batch");
            let loss = tape.scale(total, 1.0 / batch.len() as f64);
            let grads = tape.backward(loss);
            apply_grads(teacher, &mut opt, &vars, &grads, None);
        }
        let n = count.max(1) as f64;
        curve.push(CurveRow {
            epoch,
            rc: sum_rc / n,
            rxc: sum_rxc / n,
            xrc: sum_xrc / n,
            c: (sum_rc + sum_rxc + sum_xrc) / n,
            cls: 0.0,
        });
    }

    // stage 2: classification over positive pairs, head projections frozen
    let positives: Vec<usize> = (0..pairs.len()).filter(|&i| pairs[i].pair_label == 1).collect();
    let frozen = [ranges.rc.clone(), ranges.rxc.clone(), ranges.xrc.clone()];
    let mut order = positives;
    for epoch in 1..=spec.epochs_stage2 {
        order.shuffle(&mut rng);
        let (mut sum_cls, mut count) = (0.0, 0usize);
        for batch in order.chunks(spec.batch_size) {
            let mut tape = Tape::new();
            let vars = teacher.bind(&mut tape);
            let mut total: Option<Var> = None;
            for &pi in batch {
                let pair = &pairs[pi];
                let streams = teacher.pair_streams(
                    &mut tape,
                    &vars,
                    &pair.news_text,
                    &pair.reasoning_text,
                    pair.kind,
                )?;
                let mask = dropout_mask(
                    1,
                    teacher.classifier.hidden_width(),
                    teacher.config.dropout,
                    &mut rng,
                );
                let (_, logits) =
                    teacher.positive_path(&mut tape, &vars, &streams, Some(&mask))?;
                let mut loss =
                    tape.cross_entropy_logits(logits, pair.class_label.index());
                if spec.joint_stage2 {
                    let terms = teacher.total_consistency_loss(
                        &mut tape, &vars, &streams, pair.pair_label, spec.mask,
                    )?;
                    let scaled = tape.scale(terms.c, spec.joint_lambda);
                    loss = tape.add(loss, scaled);
                }
                sum_cls += tape.scalar(loss);
                count += 1;
                total = Some(match total {
                    Some(t) => tape.add(t, loss),
                    None => loss,
                });
            }
            let total = total.expect("non-empty batch");
            let loss = tape.scale(total, 1.0 / batch.len() as f64);
            let grads = tape.backward(loss);
            apply_grads(teacher, &mut opt, &vars, &grads, Some(&frozen));
        }
        curve.push(CurveRow {
            epoch: spec.epochs_stage1 + epoch,
            rc: 0.0,
            rxc: 0.0,
            xrc: 0.0,
            c: 0.0,
            cls: sum_cls / count.max(1) as f64,
        });
    }
    Ok(curve)
}

fn apply_grads(
    teacher: &mut Teacher,
    opt: &mut Adam,
    vars: &TeacherVars,
    grads: &[Array2<f64>],
    frozen: Option<&[std::ops::Range<usize>]>,
) {
    let ids = teacher_var_ids(vars);
    let mut grad_list: Vec<Array2<f64>> =
        ids.iter().map(|v| grads[v.0].clone()).collect();
    if let Some(frozen) = frozen {
        for range in frozen {
            for g in &mut grad_list[range.clone()] {
                g.fill(0.0);
            }
        }
    }
    let mut params = teacher.params_mut();
    opt.step(&mut params, &grad_list);
}

/// Var ids in the same order as `Teacher::params_mut`.
pub fn teacher_var_ids(vars: &TeacherVars) -> Vec<Var> {
    let mut ids = vars.news_encoder.ids();
    ids.extend(vars.reasoning_encoder.ids());
    ids.extend(vars.cross.ids());
    ids.extend(vars.pools.ids());
    ids.extend(vars.rc.ids());
    ids.extend(vars.rxc.ids());
    ids.extend(vars.xrc.ids());
    ids.extend(vars.classifier.ids());
    ids
}
