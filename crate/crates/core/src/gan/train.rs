use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{adversarial_g_node, cross_entropy_node, generate, loss_d_node, GanError, LossConvention};
use crate::nn::model::{
    critic_score, generator_logits, init_critic, init_generator, one_hot_fields, CriticConfig, Dropout,
    GeneratorConfig, CRITIC, GEN,
};
use crate::nn::{adagrad_step, DenseMatrix, ModelState, ParamBank, Tape, Var};
use crate::token::{CodeRow, EventType, Vocabulary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub eps: f64,
    pub batch: usize,
    pub dropout: f64,
    pub ce_weight: f64,
    pub loss_convention: LossConvention,
    /// Critic updates per generator update.
    pub d_steps: usize,
    /// Sampling settings for the fake batch.
    pub temperature: f64,
    pub top_p: f64,
    pub generator: GeneratorConfig,
    pub critic: CriticConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            eps: crate::nn::ADAGRAD_EPS,
            batch: 8,
            dropout: 0.1,
            ce_weight: 1.0,
            loss_convention: LossConvention::default(),
            d_steps: 1,
            temperature: 1.0,
            top_p: 1.0,
            generator: GeneratorConfig::default(),
            critic: CriticConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        let check = |ok: bool, msg: &str| if ok { Ok(()) } else { Err(msg.to_string()) };
        check(self.lr.is_finite() && self.lr >= 0.0, "lr must be finite and >= 0")?;
        check(self.eps.is_finite() && self.eps > 0.0, "eps must be > 0")?;
        check(self.batch > 0, "batch must be > 0")?;
        check((0.0..1.0).contains(&self.dropout), "dropout must be in [0, 1)")?;
        check(self.ce_weight.is_finite() && self.ce_weight >= 0.0, "ce_weight must be >= 0")?;
        check(self.d_steps > 0, "d_steps must be > 0")?;
        check(self.temperature.is_finite(), "temperature must be finite")?;
        check(self.top_p > 0.0 && self.top_p <= 1.0, "top_p must be in (0, 1]")?;
        self.generator.validate().map_err(|e| e.to_string())?;
        self.critic.validate().map_err(|e| e.to_string())
    }
}

/// Generator and critic states with their shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct GanState {
    pub generator: GeneratorConfig,
    pub critic: CriticConfig,
    pub gen: ModelState,
    pub disc: ModelState,
}

impl GanState {
    pub fn init(generator: &GeneratorConfig, critic: &CriticConfig, rng: &mut impl Rng) -> Result<Self, GanError> {
        let gen = ModelState::new(init_generator(generator, rng)?);
        let disc = ModelState::new(init_critic(critic, generator, rng)?);
        Ok(Self { generator: generator.clone(), critic: critic.clone(), gen, disc })
    }

    /// Every parameter and accumulator; accumulators are prefixed `adagrad/`.
    pub fn to_matrices(&self) -> ParamBank {
        let mut out = ParamBank::new();
        for s in [&self.gen, &self.disc] {
            for (k, m) in &s.params {
                out.insert(k.clone(), m.clone());
            }
            for (k, m) in &s.accum {
                out.insert(format!("adagrad/{k}"), m.clone());
            }
        }
        out
    }

    /// Inverse of [`GanState::to_matrices`]; shapes are checked against a
    /// fresh initialization.
    pub fn from_matrices(
        generator: &GeneratorConfig,
        critic: &CriticConfig,
        matrices: &ParamBank,
        step: u64,
    ) -> Result<Self, GanError> {
        let mut state = Self::init(generator, critic, &mut ChaCha8Rng::seed_from_u64(0))?;
        for s in [&mut state.gen, &mut state.disc] {
            s.step = step;
            for (prefix, bank) in [("", &mut s.params), ("adagrad/", &mut s.accum)] {
                for (k, m) in bank.iter_mut() {
                    let name = format!("{prefix}{k}");
                    let src = matrices.get(&name).ok_or_else(|| crate::nn::NnError::MissingParam(name.clone()))?;
                    if src.shape() != m.shape() {
                        return Err(crate::nn::NnError::ShapeMismatch { name, expected: m.shape(), got: src.shape() }.into());
                    }
                    *m = src.clone();
                }
            }
        }
        Ok(state)
    }
}

/// One logged training step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub step: u64,
    pub loss_g: f64,
    pub loss_d: f64,
    pub ce: f64,
    pub c_real: f64,
    pub c_fake: f64,
}

impl TrainLog {
    pub const CSV_HEADER: &'static str = "step,loss_g,loss_d,ce,c_real,c_fake";

    pub fn csv_row(&self) -> String {
        format!("{},{},{},{},{},{}", self.step, self.loss_g, self.loss_d, self.ce, self.c_real, self.c_fake)
    }

    pub fn is_finite(&self) -> bool {
        [self.loss_g, self.loss_d, self.ce, self.c_real, self.c_fake].iter().all(|x| x.is_finite())
    }
}

/// Loss nodes for one batch.
pub struct BatchLosses {
    pub loss_d: Var,
    pub loss_g: Var,
    pub ce: Var,
    pub c_real: Vec<Var>,
    pub c_fake: Vec<Var>,
}

/// Critic input for a fake sequence: a one-hot start-of-song row followed by
/// the generator's teacher-forced next-event distributions, so the critic
/// score stays differentiable in the generator parameters.
fn soft_fake(
    tape: &mut Tape,
    gen: &ParamBank,
    cfg: &GeneratorConfig,
    fake: &[CodeRow],
    drop: Option<&mut Dropout>,
) -> Result<[Var; 6], GanError> {
    let sizes = cfg.field_vocab_sizes;
    let sos = one_hot_fields(&[[EventType::StartOfSong.code(), 0, 0, 0, 0, 0]], &sizes);
    let n = fake.len();
    if n <= 1 {
        return Ok(sos.map(|m| tape.constant(m)));
    }
    let logits = generator_logits(tape, gen, cfg, &fake[..n - 1], drop)?;
    let mut out = Vec::with_capacity(6);
    for (k, m) in sos.into_iter().enumerate() {
        let first = tape.constant(m);
        let p = tape.softmax(logits[k], false);
        out.push(tape.concat_rows(&[first, p]));
    }
    Ok(out.try_into().expect("six fields"))
}

/// Builds both losses for paired `real`/`fake` sequences on one tape.
/// `gen` and `critic` may be the same merged bank.
#[allow(clippy::too_many_arguments)]
pub fn batch_losses(
    tape: &mut Tape,
    gen: &ParamBank,
    critic: &ParamBank,
    state_cfg: (&GeneratorConfig, &CriticConfig),
    cfg: &TrainConfig,
    real: &[Vec<CodeRow>],
    fake: &[Vec<CodeRow>],
    mut drop: Option<&mut Dropout>,
) -> Result<BatchLosses, GanError> {
    let (gcfg, ccfg) = state_cfg;
    if real.is_empty() || real.iter().any(|r| r.len() < 2) {
        return Err(GanError::EmptyBatch);
    }
    if real.len() != fake.len() {
        return Err(GanError::ShapeMismatch(format!("{} real vs {} fake sequences", real.len(), fake.len())));
    }
    let mut c_real = Vec::with_capacity(real.len());
    let mut c_fake = Vec::with_capacity(real.len());
    let mut ces = Vec::with_capacity(real.len());
    for (r, f) in real.iter().zip(fake) {
        let rf = one_hot_fields(r, &gcfg.field_vocab_sizes).map(|m| tape.constant(m));
        c_real.push(critic_score(tape, critic, ccfg, gcfg.max_len, &rf, drop.as_deref_mut())?);
        let ff = soft_fake(tape, gen, gcfg, f, drop.as_deref_mut())?;
        c_fake.push(critic_score(tape, critic, ccfg, gcfg.max_len, &ff, drop.as_deref_mut())?);
        let logits = generator_logits(tape, gen, gcfg, &r[..r.len() - 1], drop.as_deref_mut())?;
        ces.push(cross_entropy_node(tape, &logits, &r[1..])?);
    }
    let ce_all = tape.concat_rows(&ces);
    let ce = tape.mean_all(ce_all);
    let loss_d = loss_d_node(tape, &c_real, &c_fake, cfg.loss_convention)?;
    let adv = adversarial_g_node(tape, &c_real, &c_fake, cfg.loss_convention)?;
    let weighted = tape.affine(ce, cfg.ce_weight, 0.0);
    let loss_g = tape.add(adv, weighted);
    Ok(BatchLosses { loss_d, loss_g, ce, c_real, c_fake })
}

fn sample_fakes(state: &GanState, cfg: &TrainConfig, vocab: &Vocabulary, real: &[Vec<CodeRow>], rng: &mut ChaCha8Rng) -> Vec<Vec<CodeRow>> {
    real.iter()
        .map(|r| generate(&state.gen.params, &state.generator, vocab, r.len(), rng, cfg.temperature, cfg.top_p))
        .collect()
}

fn grads_with_prefix(tape: &Tape, loss: Var, prefix: &str) -> BTreeMap<String, DenseMatrix> {
    let grads = tape.backward(loss);
    let dot = format!("{prefix}.");
    tape.param_grads(&grads).into_iter().filter(|(k, _)| k.starts_with(&dot)).collect()
}

fn mean(tape: &Tape, vs: &[Var]) -> f64 {
    vs.iter().map(|&v| tape.scalar(v)).sum::<f64>() / vs.len() as f64
}

fn dropout_for(cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Dropout {
    Dropout { p: cfg.dropout, rng: ChaCha8Rng::seed_from_u64(rng.gen()) }
}

/// One adversarial step: `d_steps` critic updates on fresh fake batches,
/// then one generator update on another fresh fake batch.
pub fn train_step(
    state: &mut GanState,
    cfg: &TrainConfig,
    vocab: &Vocabulary,
    real: &[Vec<CodeRow>],
    rng: &mut ChaCha8Rng,
) -> Result<TrainLog, GanError> {
    let mut loss_d = f64::NAN;
    for _ in 0..cfg.d_steps {
        let fake = sample_fakes(state, cfg, vocab, real, rng);
        let mut drop = dropout_for(cfg, rng);
        let mut tape = Tape::new();
        let l = batch_losses(
            &mut tape,
            &state.gen.params,
            &state.disc.params,
            (&state.generator, &state.critic),
            cfg,
            real,
            &fake,
            Some(&mut drop),
        )?;
        loss_d = tape.scalar(l.loss_d);
        let grads = grads_with_prefix(&tape, l.loss_d, CRITIC);
        adagrad_step(&mut state.disc, &grads, cfg.lr, cfg.eps)?;
    }

    let fake = sample_fakes(state, cfg, vocab, real, rng);
    let mut drop = dropout_for(cfg, rng);
    let mut tape = Tape::new();
    let l = batch_losses(
        &mut tape,
        &state.gen.params,
        &state.disc.params,
        (&state.generator, &state.critic),
        cfg,
        real,
        &fake,
        Some(&mut drop),
    )?;
    let grads = grads_with_prefix(&tape, l.loss_g, GEN);
    adagrad_step(&mut state.gen, &grads, cfg.lr, cfg.eps)?;
    Ok(TrainLog {
        step: state.gen.step,
        loss_g: tape.scalar(l.loss_g),
        loss_d,
        ce: tape.scalar(l.ce),
        c_real: mean(&tape, &l.c_real),
        c_fake: mean(&tape, &l.c_fake),
    })
}

/// Runs `steps` training steps on batches drawn without replacement from
/// `corpus`, calling `on_step` after each.
pub fn train(
    state: &mut GanState,
    cfg: &TrainConfig,
    vocab: &Vocabulary,
    corpus: &[Vec<CodeRow>],
    steps: usize,
    rng: &mut ChaCha8Rng,
    mut on_step: impl FnMut(&TrainLog),
) -> Result<Vec<TrainLog>, GanError> {
    if corpus.is_empty() {
        return Err(GanError::EmptyBatch);
    }
    let mut logs = Vec::with_capacity(steps);
    for _ in 0..steps {
        let idx = rand::seq::index::sample(rng, corpus.len(), cfg.batch.min(corpus.len()));
        let batch: Vec<Vec<CodeRow>> = idx.iter().map(|i| corpus[i].clone()).collect();
        let log = train_step(state, cfg, vocab, &batch, rng)?;
        on_step(&log);
        logs.push(log);
    }
    Ok(logs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gan::synthetic_corpus;
    use crate::nn::grad_check;

    fn tiny() -> (TrainConfig, Vocabulary) {
        let vocab = Vocabulary::default();
        let sizes = vocab.field_sizes();
        let cfg = TrainConfig {
            batch: 2,
            generator: GeneratorConfig { layers: 1, model_dim: 8, heads: 2, max_len: 32, field_vocab_sizes: sizes },
            critic: CriticConfig { layers: 1, model_dim: 8, heads: 2, ..CriticConfig::default() },
            ..TrainConfig::default()
        };
        (cfg, vocab)
    }

    #[test]
    fn default_config_is_valid() {
        TrainConfig::default().validate().unwrap();
        let bad = TrainConfig { dropout: 1.0, ..TrainConfig::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn training_is_deterministic() {
        let (cfg, vocab) = tiny();
        let corpus = synthetic_corpus(&vocab, true);
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let mut state = GanState::init(&cfg.generator, &cfg.critic, &mut rng).unwrap();
            let logs = train(&mut state, &cfg, &vocab, &corpus, 3, &mut rng, |_| {}).unwrap();
            (state, logs)
        };
        let (s1, l1) = run();
        let (s2, l2) = run();
        assert_eq!(s1, s2);
        let bits = |l: &[TrainLog]| l.iter().map(|x| x.csv_row()).collect::<Vec<_>>();
        assert_eq!(bits(&l1), bits(&l2));
        assert!(l1.iter().all(TrainLog::is_finite));
        assert_eq!(l1.last().unwrap().step, 3);
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let (cfg, vocab) = tiny();
        let cfg = TrainConfig { lr: 0.0, ..cfg };
        let corpus = synthetic_corpus(&vocab, true);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut state = GanState::init(&cfg.generator, &cfg.critic, &mut rng).unwrap();
        let before = state.clone();
        let log = train_step(&mut state, &cfg, &vocab, &corpus[..2], &mut rng).unwrap();
        assert!(log.is_finite());
        assert_eq!(state.gen.params, before.gen.params);
        assert_eq!(state.disc.params, before.disc.params);
    }

    #[test]
    fn matrices_round_trip() {
        let (cfg, _) = tiny();
        let state = GanState::init(&cfg.generator, &cfg.critic, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let back = GanState::from_matrices(&cfg.generator, &cfg.critic, &state.to_matrices(), 0).unwrap();
        assert_eq!(back, state);
        let mut missing = state.to_matrices();
        missing.remove("gen.pos");
        assert!(GanState::from_matrices(&cfg.generator, &cfg.critic, &missing, 0).is_err());
    }

    #[test]
    fn both_losses_pass_gradient_check() {
        let (cfg, vocab) = tiny();
        let corpus = synthetic_corpus(&vocab, true);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let state = GanState::init(&cfg.generator, &cfg.critic, &mut rng).unwrap();
        let real = corpus[..2].to_vec();
        let fake = sample_fakes(&state, &cfg, &vocab, &real, &mut rng);
        let mut bank = state.gen.params.clone();
        bank.extend(state.disc.params.clone());
        for conv in [LossConvention::AsPrinted, LossConvention::RsganStandard] {
            let cfg = TrainConfig { loss_convention: conv, ..cfg.clone() };
            for pick_g in [false, true] {
                let eval = |b: &ParamBank| -> Result<(f64, Tape, Var), crate::nn::NnError> {
                    let mut tape = Tape::new();
                    let l = batch_losses(&mut tape, b, b, (&cfg.generator, &cfg.critic), &cfg, &real, &fake, None)
                        .map_err(|e| crate::nn::NnError::InvalidConfig(e.to_string()))?;
                    let v = if pick_g { l.loss_g } else { l.loss_d };
                    Ok((tape.scalar(v), tape, v))
                };
                let (_, tape, v) = eval(&bank).unwrap();
                let analytic = tape.param_grads(&tape.backward(v));
                let report = grad_check(|b| eval(b).map(|r| r.0), &bank, &analytic, 150, 1e-3, &mut rng).unwrap();
                assert!(report.passed(), "{conv:?} g={pick_g}: {report:?}");
            }
        }
    }
}
