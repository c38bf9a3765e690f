//! Text to sequential representations, plus additive-attention pooling of
//! a sequence into a single global vector.

use std::collections::HashMap;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{glorot, Linear, LinearVars};

pub const BOS_ID: usize = 0;
pub const UNK_ID: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderVariant {
    PretrainedBidirectional,
    TinyTrainable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub variant: EncoderVariant,
    pub depth: usize,
    pub width: usize,
    pub max_len: usize,
}

impl Default for EncoderSpec {
    fn default() -> Self {
        EncoderSpec {
            variant: EncoderVariant::TinyTrainable,
            depth: 2,
            width: 32,
            max_len: 64,
        }
    }
}

/// Whitespace + lowercase vocabulary built from a corpus. Ids 0 and 1 are
/// reserved for the begin-of-sequence and unknown tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut seen = std::collections::BTreeSet::new();
        for text in texts {
            for tok in text.to_lowercase().split_whitespace() {
                seen.insert(tok.to_string());
            }
        }
        let mut tokens = vec!["<bos>".to_string(), "<unk>".to_string()];
        tokens.extend(seen);
        let mut v = Vocab {
            tokens,
            index: HashMap::new(),
        };
        v.rebuild_index();
        v
    }

    pub fn rebuild_index(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> usize {
        *self.index.get(token).unwrap_or(&UNK_ID)
    }

    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        for t in &self.tokens {
            hasher.update(t.as_bytes());
            hasher.update([0u8]);
        }
        format!("{:x}", hasher.finalize())
    }
}

/// Sequential representation: an L×d value on the tape plus a validity
/// mask. Masked positions carry no weight downstream.
#[derive(Debug, Clone)]
pub struct SeqRep {
    pub var: Var,
    pub mask: Vec<bool>,
}

impl SeqRep {
    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }
}

/// Trainable desk-scale encoder: embedding lookup followed by `depth`
/// tanh feed-forward layers.
#[derive(Debug, Clone)]
pub struct TinyEncoder {
    pub spec: EncoderSpec,
    pub vocab: Vocab,
    pub embedding: Array2<f64>,
    pub layers: Vec<Linear>,
}

#[derive(Debug, Clone)]
pub struct TinyEncoderVars {
    pub embedding: Var,
    pub layers: Vec<LinearVars>,
}

impl TinyEncoder {
    pub fn new(spec: EncoderSpec, vocab: Vocab, seed: u64) -> Result<Self> {
        if spec.variant != EncoderVariant::TinyTrainable {
            return Err(Error::Encoder(
                "pretrained_bidirectional needs external weights; only tiny_trainable \
can be constructed here (see the full-scale runbook)"
                    .to_string(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embedding = glorot(vocab.len(), spec.width, &mut rng);
        let layers = (0..spec.depth)
            .map(|_| Linear::new(spec.width, spec.width, &mut rng))
            .collect();
        Ok(TinyEncoder {
            spec,
            vocab,
            embedding,
            layers,
        })
    }

    /// Deterministic, truncating, never empty: a begin token always leads.
    pub fn tokenize(&self, text: &str) -> (Vec<usize>, Vec<bool>) {
        let mut ids = vec![BOS_ID];
        for tok in text.to_lowercase().split_whitespace() {
            if ids.len() >= self.spec.max_len {
                break;
            }
            ids.push(self.vocab.id(tok));
        }
        let mask = vec![true; ids.len()];
        (ids, mask)
    }

    pub fn bind(&self, tape: &mut Tape) -> TinyEncoderVars {
        TinyEncoderVars {
            embedding: tape.leaf(self.embedding.clone()),
            layers: self.layers.iter().map(|l| l.bind(tape)).collect(),
        }
    }

    pub fn encode_sequence(
        &self,
        tape: &mut Tape,
        vars: &TinyEncoderVars,
        tokens: &[usize],
        mask: &[bool],
    ) -> Result<SeqRep> {
        for &t in tokens {
            if t >= self.vocab.len() {
                return Err(Error::Encoder(format!("token id {t} out of vocabulary")));
            }
        }
        let mut h = tape.gather_rows(vars.embedding, tokens);
        for layer in &vars.layers {
            let z = Linear::forward(tape, *layer, h);
            h = tape.tanh(z);
        }
        Ok(SeqRep {
            var: h,
            mask: mask.to_vec(),
        })
    }

    /// Convenience: tokenize then encode.
    pub fn encode_text(&self, tape: &mut Tape, vars: &TinyEncoderVars, text: &str) -> Result<SeqRep> {
        let (ids, mask) = self.tokenize(text);
        self.encode_sequence(tape, vars, &ids, &mask)
    }

    pub fn params(&self) -> Vec<&Array2<f64>> {
        let mut p = vec![&self.embedding];
        for l in &self.layers {
            p.extend(l.params());
        }
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut p = vec![&mut self.embedding];
        for l in &mut self.layers {
            p.extend(l.params_mut());
        }
        p
    }
}

impl TinyEncoderVars {
    pub fn ids(&self) -> Vec<Var> {
        let mut ids = vec![self.embedding];
        for l in &self.layers {
            ids.extend(l.ids());
        }
        ids
    }
}

/// Additive attention pooling: s_i = v^T tanh(W h_i), weights softmax(s)
/// over unmasked positions, output the weighted sum of rows.
#[derive(Debug, Clone)]
pub struct AttentionPool {
    /// W: [d, d]
    pub w: Array2<f64>,
    /// v: [d, 1]
    pub v: Array2<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionPoolVars {
    pub w: Var,
    pub v: Var,
}

impl AttentionPool {
    pub fn new(width: usize, rng: &mut ChaCha8Rng) -> Self {
        AttentionPool {
            w: glorot(width, width, rng),
            v: glorot(width, 1, rng),
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> AttentionPoolVars {
        AttentionPoolVars {
            w: tape.leaf(self.w.clone()),
            v: tape.leaf(self.v.clone()),
        }
    }

    /// Returns (pooled 1×d, weights 1×L).
    pub fn forward(
        tape: &mut Tape,
        vars: AttentionPoolVars,
        rep: &SeqRep,
    ) -> Result<(Var, Var)> {
        if !rep.mask.iter().any(|&m| m) {
            return Err(Error::Encoder("attention pool over all-masked input".to_string()));
        }
        let hw = tape.matmul(rep.var, vars.w);
        let a = tape.tanh(hw);
        let scores = tape.matmul(a, vars.v); // [L,1]
        let scores_row = tape.transpose(scores); // [1,L]
        let weights = tape.masked_softmax_rows(scores_row, &rep.mask);
        let pooled = tape.matmul(weights, rep.var); // [1,d]
        Ok((pooled, weights))
    }

    pub fn params(&self) -> Vec<&Array2<f64>> {
        vec![&self.w, &self.v]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        vec![&mut self.w, &mut self.v]
    }
}

impl AttentionPoolVars {
    pub fn ids(&self) -> Vec<Var> {
        vec![self.w, self.v]
    }
}
