//! Joint encoder over all sentences of a set. A single summary token is
//! prepended; each blank is represented by the summary state concatenated
//! with its own final state. A linear head reads gender from that pair.

use std::collections::HashMap;

use fitb_tensor::{Graph, ParameterStore, Real, Tensor, Var, MASKED};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{ClipSet, Gender, BLANK_TOKEN};
use crate::error::{FitbError, Result};
use crate::nn;

pub const SUMMARY: usize = 0;
pub const BLANK: usize = 1;
pub const PAD: usize = 2;
pub const UNK: usize = 3;
const SPECIALS: [&str; 4] = ["<sum>", "<blank>", "<pad>", "<unk>"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(mut tokens: Vec<String>) -> Self {
        // specials always occupy 0..4, whatever the serialized list says
        tokens.retain(|t| !SPECIALS.contains(&t.as_str()));
        let tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).chain(tokens).collect();
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index(&self, token: &str) -> usize {
        if token == BLANK_TOKEN {
            return BLANK;
        }
        *self.index.get(&token.to_lowercase()).unwrap_or(&UNK)
    }

    pub fn token(&self, i: usize) -> Option<&str> {
        self.tokens.get(i).map(String::as_str)
    }
}

/// Lowercased words ordered by descending frequency, then alphabetically.
pub fn build_vocab<'a>(sentences: impl IntoIterator<Item = &'a [String]>) -> Vocabulary {
    let mut counts: HashMap<String, usize> = HashMap::new();
    for s in sentences {
        for t in s.iter().filter(|t| t.as_str() != BLANK_TOKEN) {
            *counts.entry(t.to_lowercase()).or_insert(0) += 1;
        }
    }
    let mut words: Vec<(String, usize)> = counts.into_iter().collect();
    words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Vocabulary::from(words.into_iter().map(|(w, _)| w).collect::<Vec<_>>())
}

pub fn tokenize(sentence: &str, vocab: &Vocabulary) -> Vec<usize> {
    sentence.split_whitespace().map(|t| vocab.index(t)).collect()
}

/// Maps pre-split tokens; the given blank positions become BLANK regardless
/// of their surface form.
pub fn tokenize_words(words: &[String], blank_positions: &[usize], vocab: &Vocabulary) -> Vec<usize> {
    words
        .iter()
        .enumerate()
        .map(|(i, w)| if blank_positions.contains(&i) { BLANK } else { vocab.index(w) })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TextConfig {
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff: usize,
    pub max_len: usize,
}

impl Default for TextConfig {
    fn default() -> Self {
        Self { d_model: 64, layers: 2, heads: 4, ff: 128, max_len: 512 }
    }
}

impl TextConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.layers == 0 || self.heads == 0 || self.ff == 0 || self.max_len < 2 {
            return Err(FitbError::Config("text encoder sizes must be positive".into()));
        }
        if self.d_model % self.heads != 0 {
            return Err(FitbError::Config(format!("text width {} not divisible by {} heads", self.d_model, self.heads)));
        }
        Ok(())
    }

    /// Width of one blank encoding.
    pub fn blank_dim(&self) -> usize {
        2 * self.d_model
    }
}

/// Token stream for one set: SUMMARY followed by every sentence in order.
#[derive(Clone, Debug, PartialEq)]
pub struct TextInput {
    pub tokens: Vec<usize>,
    /// Stream position of each blank, in set blank order.
    pub blank_positions: Vec<usize>,
}

impl TextInput {
    /// Appends PAD tokens, which every query ignores.
    pub fn padded(&self, len: usize) -> Self {
        let mut tokens = self.tokens.clone();
        tokens.resize(len.max(tokens.len()), PAD);
        Self { tokens, blank_positions: self.blank_positions.clone() }
    }
}

pub fn set_text_input(set: &ClipSet, vocab: &Vocabulary) -> Result<TextInput> {
    let mut tokens = vec![SUMMARY];
    let mut offsets = Vec::with_capacity(set.clips.len());
    for clip in &set.clips {
        offsets.push(tokens.len());
        let blanks: Vec<usize> = clip.blanks.iter().map(|b| b.token_position).collect();
        tokens.extend(tokenize_words(&clip.sentence, &blanks, vocab));
    }
    let blank_positions = set
        .blanks
        .iter()
        .map(|b| {
            if b.token_position >= set.clips[b.sentence_index].sentence.len() {
                return Err(FitbError::Data(format!("{}: blank position {} outside sentence", set.movie_id, b.token_position)));
            }
            Ok(offsets[b.sentence_index] + b.token_position)
        })
        .collect::<Result<_>>()?;
    Ok(TextInput { tokens, blank_positions })
}

pub fn init_text_params<T: Real, R: Rng>(store: &mut ParameterStore<T>, cfg: &TextConfig, vocab_len: usize, rng: &mut R) -> Result<()> {
    cfg.validate()?;
    store.insert_normal("text.embed", vocab_len, cfg.d_model, 0.5, rng)?;
    for l in 0..cfg.layers {
        nn::init_block(store, &format!("text.l{l}"), cfg.d_model, cfg.ff, rng)?;
    }
    nn::init_layer_norm(store, "text.ln_f", cfg.d_model)?;
    nn::init_linear(store, "text.gender", cfg.blank_dim(), 2, rng)?;
    Ok(())
}

/// Encodes one set; returns a `B × 2·d_model` matrix (summary half first),
/// or `None` when the set has no blanks.
pub fn encode_set<T: Real>(g: &mut Graph<T>, store: &ParameterStore<T>, cfg: &TextConfig, input: &TextInput) -> Result<Option<Var>> {
    let n = input.tokens.len();
    if n > cfg.max_len {
        return Err(FitbError::Length { what: "text token stream", len: n, max: cfg.max_len });
    }
    if input.blank_positions.is_empty() {
        return Ok(None);
    }
    let table = g.param(store, "text.embed")?;
    let vocab_len = g.shape(table).0;
    if let Some(&t) = input.tokens.iter().find(|&&t| t >= vocab_len) {
        return Err(FitbError::Range(format!("token index {t} (vocabulary size {vocab_len})")));
    }
    let x = g.embedding(table, &input.tokens)?;
    let pe = g.constant(nn::sinusoid(n, cfg.d_model));
    let mut x = g.add(x, pe)?;
    let mask = input.tokens.contains(&PAD).then(|| {
        let row: Vec<T> = input.tokens.iter().map(|&t| if t == PAD { T::of(MASKED) } else { T::zero() }).collect();
        Tensor::matrix(n, n, row.repeat(n)).expect("square mask")
    });
    for l in 0..cfg.layers {
        x = nn::block(g, store, x, &format!("text.l{l}"), cfg.heads, mask.as_ref())?;
    }
    let h = nn::layer_norm(g, store, x, "text.ln_f")?;
    let b = input.blank_positions.len();
    let summary = g.embedding(h, &vec![SUMMARY; b])?;
    let blanks = g.embedding(h, &input.blank_positions)?;
    Ok(Some(g.concat_cols(&[summary, blanks])?))
}

pub fn text_gender_logits<T: Real>(g: &mut Graph<T>, store: &ParameterStore<T>, t: Var) -> Result<Var> {
    nn::linear(g, store, t, "text.gender")
}

/// Mean gender cross-entropy over the labelled blanks of one set, or `None`
/// when nothing is labelled.
pub fn gender_loss<T: Real>(g: &mut Graph<T>, store: &ParameterStore<T>, cfg: &TextConfig, input: &TextInput, genders: &[Option<Gender>]) -> Result<Option<Var>> {
    if genders.iter().all(Option::is_none) {
        return Ok(None);
    }
    let Some(t) = encode_set(g, store, cfg, input)? else { return Ok(None) };
    let logits = text_gender_logits(g, store, t)?;
    let targets: Vec<usize> = genders.iter().map(|x| x.map_or(0, Gender::index)).collect();
    let mask: Vec<bool> = genders.iter().map(Option::is_some).collect();
    Ok(Some(g.cross_entropy(logits, &targets, Some(&mask))?))
}

/// Accumulates gradients of the mean per-blank gender loss over a batch of
/// sets and returns that mean. Each set is encoded on its own graph.
pub fn gender_pretrain_step<T: Real>(store: &mut ParameterStore<T>, cfg: &TextConfig, batch: &[(&TextInput, &[Option<Gender>])]) -> Result<f64> {
    let total: usize = batch.iter().map(|(_, g)| g.iter().flatten().count()).sum();
    if total == 0 {
        return Ok(0.0);
    }
    let mut loss = 0.0;
    for (input, genders) in batch {
        let mut g = Graph::new();
        let Some(l) = gender_loss(&mut g, store, cfg, input, genders)? else { continue };
        let w = genders.iter().flatten().count() as f64 / total as f64;
        let l = g.scale(l, w)?;
        loss += g.value(l).item().as_f64();
        g.backward(l, store)?;
    }
    Ok(loss)
}

/// Text-only gender guess per blank.
pub fn predict_genders<T: Real>(store: &ParameterStore<T>, cfg: &TextConfig, input: &TextInput) -> Result<Vec<Gender>> {
    let mut g = Graph::new();
    let Some(t) = encode_set(&mut g, store, cfg, input)? else { return Ok(Vec::new()) };
    let logits = text_gender_logits(&mut g, store, t)?;
    Ok(argmax_genders(g.value(logits)))
}

pub(crate) fn argmax_genders<T: Real>(logits: &Tensor<T>) -> Vec<Gender> {
    (0..logits.rows()).map(|r| Gender::from_index((logits.get(r, 1) > logits.get(r, 0)) as usize)).collect()
}
