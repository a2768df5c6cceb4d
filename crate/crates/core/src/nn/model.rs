//! Generator (causal transformer decoder with per-field heads) and critic
//! (transformer encoder, mean-pooled to a scalar score).
//!
//! All layers are pre-LayerNorm. Every field gets an embedding table of width
//! `model_dim / 2`; the six embeddings are concatenated and projected to
//! `model_dim`, then learned positional embeddings are added.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::matrix::DenseMatrix;
use super::tape::Tape;
use super::tape::Var;
use super::{NnError, ParamBank};
use crate::token::{CodeRow, Vocabulary, MAX_SEQUENCE_LEN};

pub const INIT_BOUND: f64 = 0.02;
pub const FF_MULTIPLIER: usize = 4;
pub const GEN: &str = "gen";
pub const CRITIC: &str = "critic";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub layers: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub max_len: usize,
    pub field_vocab_sizes: [usize; 6],
}

impl GeneratorConfig {
    /// Desk-scale default: 2 layers, 64 wide, 2 heads, 128 events.
    pub fn toy(field_vocab_sizes: [usize; 6]) -> Self {
        Self { layers: 2, model_dim: 64, heads: 2, max_len: 128, field_vocab_sizes }
    }

    /// The full-size setting: 6 layers, 512 wide, 8 heads.
    pub fn full(field_vocab_sizes: [usize; 6]) -> Self {
        Self { layers: 6, model_dim: 512, heads: 8, max_len: MAX_SEQUENCE_LEN, field_vocab_sizes }
    }

    pub fn embed_dim(&self) -> usize {
        (self.model_dim / 2).max(1)
    }

    pub fn validate(&self) -> Result<(), NnError> {
        check_dims(self.layers, self.model_dim, self.heads)?;
        if self.max_len == 0 || self.max_len > MAX_SEQUENCE_LEN {
            return Err(NnError::InvalidConfig(format!("max_len {} outside 1..={MAX_SEQUENCE_LEN}", self.max_len)));
        }
        if self.field_vocab_sizes.contains(&0) {
            return Err(NnError::InvalidConfig("field vocab sizes must be positive".into()));
        }
        Ok(())
    }
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self::toy(Vocabulary::default().field_sizes())
    }
}

fn check_dims(layers: usize, model_dim: usize, heads: usize) -> Result<(), NnError> {
    if layers == 0 || model_dim == 0 || heads == 0 {
        return Err(NnError::InvalidConfig("layers, model_dim and heads must be positive".into()));
    }
    if !model_dim.is_multiple_of(heads) {
        return Err(NnError::InvalidConfig(format!("model_dim {model_dim} not divisible by {heads} heads")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CriticKind {
    #[default]
    Transformer,
    /// Attention-free ablation: feed-forward blocks only.
    Feedforward,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CriticConfig {
    pub layers: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub kind: CriticKind,
}

impl Default for CriticConfig {
    fn default() -> Self {
        Self { layers: 1, model_dim: 64, heads: 2, kind: CriticKind::Transformer }
    }
}

impl CriticConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        check_dims(self.layers, self.model_dim, self.heads)
    }

    pub fn embed_dim(&self) -> usize {
        (self.model_dim / 2).max(1)
    }
}

/// Inverted dropout driven by its own generator.
pub struct Dropout {
    pub p: f64,
    pub rng: ChaCha8Rng,
}

fn dropout(tape: &mut Tape, x: Var, d: Option<&mut Dropout>) -> Var {
    let Some(d) = d else { return x };
    if d.p <= 0.0 {
        return x;
    }
    let (r, c) = tape.value(x).shape();
    let keep = 1.0 / (1.0 - d.p);
    let mask = (0..r * c).map(|_| if d.rng.gen::<f64>() < d.p { 0.0 } else { keep }).collect();
    tape.mul_const(x, DenseMatrix::from_vec(r, c, mask))
}

// ---------------------------------------------------------------- init

fn insert_linear(bank: &mut ParamBank, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) {
    bank.insert(format!("{name}.w"), DenseMatrix::uniform(fan_in, fan_out, INIT_BOUND, rng));
    bank.insert(format!("{name}.b"), DenseMatrix::zeros(1, fan_out));
}

fn insert_norm(bank: &mut ParamBank, name: &str, d: usize) {
    bank.insert(format!("{name}.g"), DenseMatrix::filled(1, d, 1.0));
    bank.insert(format!("{name}.b"), DenseMatrix::zeros(1, d));
}

fn insert_embedding(
    bank: &mut ParamBank,
    prefix: &str,
    sizes: &[usize; 6],
    e: usize,
    d: usize,
    max_len: usize,
    rng: &mut impl Rng,
) {
    for (k, &v) in sizes.iter().enumerate() {
        bank.insert(format!("{prefix}.embed.f{k}"), DenseMatrix::uniform(v, e, INIT_BOUND, rng));
    }
    insert_linear(bank, &format!("{prefix}.embed.proj"), 6 * e, d, rng);
    bank.insert(format!("{prefix}.pos"), DenseMatrix::uniform(max_len, d, INIT_BOUND, rng));
}

fn insert_block(bank: &mut ParamBank, name: &str, d: usize, attention: bool, rng: &mut impl Rng) {
    if attention {
        insert_norm(bank, &format!("{name}.ln1"), d);
        for m in ["wq", "wk", "wv", "wo"] {
            insert_linear(bank, &format!("{name}.attn.{m}"), d, d, rng);
        }
    }
    insert_norm(bank, &format!("{name}.ln2"), d);
    insert_linear(bank, &format!("{name}.ff.w1"), d, FF_MULTIPLIER * d, rng);
    insert_linear(bank, &format!("{name}.ff.w2"), FF_MULTIPLIER * d, d, rng);
}

pub fn init_generator(cfg: &GeneratorConfig, rng: &mut impl Rng) -> Result<ParamBank, NnError> {
    cfg.validate()?;
    let d = cfg.model_dim;
    let mut bank = ParamBank::new();
    insert_embedding(&mut bank, GEN, &cfg.field_vocab_sizes, cfg.embed_dim(), d, cfg.max_len, rng);
    for i in 0..cfg.layers {
        insert_block(&mut bank, &format!("{GEN}.block{i}"), d, true, rng);
    }
    insert_norm(&mut bank, &format!("{GEN}.ln_f"), d);
    for (k, &v) in cfg.field_vocab_sizes.iter().enumerate() {
        insert_linear(&mut bank, &format!("{GEN}.head{k}"), d, v, rng);
    }
    Ok(bank)
}

pub fn init_critic(cfg: &CriticConfig, gen: &GeneratorConfig, rng: &mut impl Rng) -> Result<ParamBank, NnError> {
    cfg.validate()?;
    gen.validate()?;
    let d = cfg.model_dim;
    let mut bank = ParamBank::new();
    insert_embedding(&mut bank, CRITIC, &gen.field_vocab_sizes, cfg.embed_dim(), d, gen.max_len, rng);
    let attention = cfg.kind == CriticKind::Transformer;
    for i in 0..cfg.layers {
        insert_block(&mut bank, &format!("{CRITIC}.block{i}"), d, attention, rng);
    }
    insert_norm(&mut bank, &format!("{CRITIC}.ln_f"), d);
    insert_linear(&mut bank, &format!("{CRITIC}.head"), d, 1, rng);
    Ok(bank)
}

// ---------------------------------------------------------------- taped forward

fn linear(tape: &mut Tape, bank: &ParamBank, name: &str, x: Var) -> Var {
    let w = tape.param(bank, &format!("{name}.w"));
    let b = tape.param(bank, &format!("{name}.b"));
    let y = tape.matmul(x, w);
    tape.add_row(y, b)
}

fn norm(tape: &mut Tape, bank: &ParamBank, name: &str, x: Var) -> Var {
    let g = tape.param(bank, &format!("{name}.g"));
    let b = tape.param(bank, &format!("{name}.b"));
    tape.layer_norm(x, g, b)
}

fn add_positions(tape: &mut Tape, bank: &ParamBank, prefix: &str, x: Var) -> Var {
    let n = tape.value(x).rows();
    let pos = tape.param(bank, &format!("{prefix}.pos"));
    let p = tape.slice_rows(pos, 0, n);
    tape.add(x, p)
}

/// Embeds hard code rows through the `prefix` tables, positions included.
pub fn embed_codes(
    tape: &mut Tape,
    bank: &ParamBank,
    prefix: &str,
    sizes: &[usize; 6],
    max_len: usize,
    rows: &[CodeRow],
) -> Result<Var, NnError> {
    if rows.len() > max_len {
        return Err(NnError::SequenceTooLong { len: rows.len(), max: max_len });
    }
    for (r, row) in rows.iter().enumerate() {
        for (field, (&code, &size)) in row.iter().zip(sizes).enumerate() {
            if code as usize >= size {
                return Err(NnError::CodeOutOfRange { row: r, field, code, size });
            }
        }
    }
    let mut parts = Vec::with_capacity(6);
    for k in 0..6 {
        let table = tape.param(bank, &format!("{prefix}.embed.f{k}"));
        let idx: Vec<usize> = rows.iter().map(|r| r[k] as usize).collect();
        parts.push(tape.gather_rows(table, &idx));
    }
    let cat = tape.concat_cols(&parts);
    let x = linear(tape, bank, &format!("{prefix}.embed.proj"), cat);
    Ok(add_positions(tape, bank, prefix, x))
}

/// Embeds per-field distributions (`n × V_k` each) through the `prefix`
/// tables; one-hot rows reproduce [`embed_codes`].
pub fn embed_soft(tape: &mut Tape, bank: &ParamBank, prefix: &str, max_len: usize, fields: &[Var; 6]) -> Result<Var, NnError> {
    let n = tape.value(fields[0]).rows();
    if n > max_len {
        return Err(NnError::SequenceTooLong { len: n, max: max_len });
    }
    let mut parts = Vec::with_capacity(6);
    for (k, &f) in fields.iter().enumerate() {
        let table = tape.param(bank, &format!("{prefix}.embed.f{k}"));
        parts.push(tape.matmul(f, table));
    }
    let cat = tape.concat_cols(&parts);
    let x = linear(tape, bank, &format!("{prefix}.embed.proj"), cat);
    Ok(add_positions(tape, bank, prefix, x))
}

fn attention(tape: &mut Tape, bank: &ParamBank, name: &str, heads: usize, x: Var, causal: bool) -> Var {
    let d = tape.value(x).cols();
    let dh = d / heads;
    let q = linear(tape, bank, &format!("{name}.wq"), x);
    let k = linear(tape, bank, &format!("{name}.wk"), x);
    let v = linear(tape, bank, &format!("{name}.wv"), x);
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.slice_cols(q, h * dh, dh);
        let kh = tape.slice_cols(k, h * dh, dh);
        let vh = tape.slice_cols(v, h * dh, dh);
        let scores = tape.matmul_t(qh, kh);
        let scores = tape.affine(scores, scale, 0.0);
        let p = tape.softmax(scores, causal);
        outs.push(tape.matmul(p, vh));
    }
    let cat = tape.concat_cols(&outs);
    linear(tape, bank, &format!("{name}.wo"), cat)
}

fn feed_forward(tape: &mut Tape, bank: &ParamBank, name: &str, x: Var) -> Var {
    let h = linear(tape, bank, &format!("{name}.w1"), x);
    let h = tape.gelu(h);
    linear(tape, bank, &format!("{name}.w2"), h)
}

/// Stack of pre-LayerNorm blocks followed by a final LayerNorm.
/// `heads == 0` drops the attention sublayer.
#[allow(clippy::too_many_arguments)]
pub fn transformer(
    tape: &mut Tape,
    bank: &ParamBank,
    prefix: &str,
    layers: usize,
    heads: usize,
    x: Var,
    causal: bool,
    mut drop: Option<&mut Dropout>,
) -> Var {
    let mut x = x;
    for i in 0..layers {
        let block = format!("{prefix}.block{i}");
        if heads > 0 {
            let h = norm(tape, bank, &format!("{block}.ln1"), x);
            let a = attention(tape, bank, &format!("{block}.attn"), heads, h, causal);
            let a = dropout(tape, a, drop.as_deref_mut());
            x = tape.add(x, a);
        }
        let h = norm(tape, bank, &format!("{block}.ln2"), x);
        let f = feed_forward(tape, bank, &format!("{block}.ff"), h);
        let f = dropout(tape, f, drop.as_deref_mut());
        x = tape.add(x, f);
    }
    norm(tape, bank, &format!("{prefix}.ln_f"), x)
}

pub fn generator_hidden(
    tape: &mut Tape,
    bank: &ParamBank,
    cfg: &GeneratorConfig,
    x: Var,
    drop: Option<&mut Dropout>,
) -> Var {
    transformer(tape, bank, GEN, cfg.layers, cfg.heads, x, true, drop)
}

pub fn generator_heads(tape: &mut Tape, bank: &ParamBank, hidden: Var) -> [Var; 6] {
    std::array::from_fn(|k| linear(tape, bank, &format!("{GEN}.head{k}"), hidden))
}

/// Per-field logits for every position of `rows`.
pub fn generator_logits(
    tape: &mut Tape,
    bank: &ParamBank,
    cfg: &GeneratorConfig,
    rows: &[CodeRow],
    drop: Option<&mut Dropout>,
) -> Result<[Var; 6], NnError> {
    let x = embed_codes(tape, bank, GEN, &cfg.field_vocab_sizes, cfg.max_len, rows)?;
    let h = generator_hidden(tape, bank, cfg, x, drop);
    Ok(generator_heads(tape, bank, h))
}

fn critic_heads(cfg: &CriticConfig) -> usize {
    match cfg.kind {
        CriticKind::Transformer => cfg.heads,
        CriticKind::Feedforward => 0,
    }
}

/// Mean-pooled encoder output (1 × model_dim) of already embedded rows.
pub fn critic_pooled(tape: &mut Tape, bank: &ParamBank, cfg: &CriticConfig, x: Var, drop: Option<&mut Dropout>) -> Var {
    let h = transformer(tape, bank, CRITIC, cfg.layers, critic_heads(cfg), x, false, drop);
    tape.mean_rows(h)
}

/// The untransformed critic score C(·) of a sequence given as per-field
/// distributions, as a 1×1 node.
pub fn critic_score(
    tape: &mut Tape,
    bank: &ParamBank,
    cfg: &CriticConfig,
    max_len: usize,
    fields: &[Var; 6],
    drop: Option<&mut Dropout>,
) -> Result<Var, NnError> {
    let x = embed_soft(tape, bank, CRITIC, max_len, fields)?;
    let pooled = critic_pooled(tape, bank, cfg, x, drop);
    Ok(linear(tape, bank, &format!("{CRITIC}.head"), pooled))
}

/// One-hot matrices (`n × V_k`) for each field of `rows`.
pub fn one_hot_fields(rows: &[CodeRow], sizes: &[usize; 6]) -> [DenseMatrix; 6] {
    std::array::from_fn(|k| {
        let mut m = DenseMatrix::zeros(rows.len(), sizes[k]);
        for (i, r) in rows.iter().enumerate() {
            m[(i, r[k] as usize)] = 1.0;
        }
        m
    })
}

// ---------------------------------------------------------------- plain forward

/// Generator input embedding of `rows`: per-field lookup, concatenation,
/// projection to `model_dim`, plus positions.
pub fn embed_concat(rows: &[CodeRow], bank: &ParamBank, cfg: &GeneratorConfig) -> Result<DenseMatrix, NnError> {
    let mut tape = Tape::new();
    let x = embed_codes(&mut tape, bank, GEN, &cfg.field_vocab_sizes, cfg.max_len, rows)?;
    Ok(tape.value(x).clone())
}

/// Causal decoder stack; row i depends only on input rows `0..=i`.
pub fn decoder_forward(x: &DenseMatrix, bank: &ParamBank, cfg: &GeneratorConfig) -> Result<DenseMatrix, NnError> {
    if x.rows() > cfg.max_len {
        return Err(NnError::SequenceTooLong { len: x.rows(), max: cfg.max_len });
    }
    let mut tape = Tape::new();
    let v = tape.constant(x.clone());
    let h = generator_hidden(&mut tape, bank, cfg, v, None);
    Ok(tape.value(h).clone())
}

pub fn field_logits(hidden: &DenseMatrix, bank: &ParamBank) -> [DenseMatrix; 6] {
    let mut tape = Tape::new();
    let h = tape.constant(hidden.clone());
    let heads = generator_heads(&mut tape, bank, h);
    heads.map(|v| tape.value(v).clone())
}

/// Unmasked encoder stack, mean-pooled to a 1 × model_dim row.
pub fn encoder_forward(x: &DenseMatrix, bank: &ParamBank, cfg: &CriticConfig) -> DenseMatrix {
    let mut tape = Tape::new();
    let v = tape.constant(x.clone());
    let pooled = critic_pooled(&mut tape, bank, cfg, v, None);
    tape.value(pooled).clone()
}
