//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Criterion 8 needs the orchestral corpus and is skipped unless
//! `QUINTUPLE_SOD_DIR` points at it.

mod common;

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use quintuple_core::chord::{analyze, ChordLabel, ChordMode, Extension};
use quintuple_core::dataset::{split_corpus, Split};
use quintuple_core::gan::{
    batch_losses, loss_d, relativistic_d, synthetic_corpus, train, GanState, LossConvention, TrainConfig, TrainLog,
};
use quintuple_core::metrics::{al, gc, gc_pair, pce, sc, GroovePattern, PitchClassHistogram};
use quintuple_core::midi::load_midi;
use quintuple_core::nn::{grad_check, ParamBank, Tape};
use quintuple_core::score::{Note, Score};
use quintuple_core::token::Vocabulary;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const METRIC_TOL: f64 = 1e-12;
const LOSS_TOL: f64 = 1e-12;
const GRAD_TOL: f64 = 1e-3;
const GRAD_SAMPLES: usize = 500;
const TRAIN_STEPS: usize = 200;
const CE_WINDOW: usize = 20;
const CE_RATIO: f64 = 0.5;
const SEED: u64 = 20_240_601;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn metric_oracles() -> Outcome {
    let start = Instant::now();
    let uniform = PitchClassHistogram::from_weights([1.0; 12]).unwrap();
    let pce_err = (pce(&uniform).unwrap() - 12f64.log2()).abs();

    let a = GroovePattern::from_positions(&[0, 12, 24, 36]);
    let all: Vec<usize> = (0..48).collect();
    let none = GroovePattern::from_positions(&[]);
    let twelve: Vec<usize> = (0..12).collect();
    let gc_ok = gc_pair(&a, &a) == 1.0
        && gc_pair(&GroovePattern::from_positions(&all), &none) == 0.0
        && gc_pair(&GroovePattern::from_positions(&twelve), &none) == 0.75;

    let chromatic = Score::from_notes((0..12).map(|i| Note::new(i * 12, 12, 60 + i as u8, 0)), 120.0);
    let sc_err = (sc(&chromatic).unwrap() - 7.0 / 12.0).abs();
    let elapsed = start.elapsed();
    outcome(
        pce_err <= METRIC_TOL && gc_ok && sc_err <= METRIC_TOL && elapsed < Duration::from_secs(1),
        format!("pce err {pce_err:.1e}, gc fixtures exact: {gc_ok}, sc err {sc_err:.1e}, {elapsed:.2?}"),
    )
}

fn close(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (Some(x), Some(y)) => (x - y).abs() <= METRIC_TOL,
        (None, None) => true,
        _ => false,
    }
}

fn brute_force_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut bad = 0;
    for _ in 0..200 {
        let s = common::random_score(&mut rng, 3, 8);
        let pce_lib = PitchClassHistogram::from_score(&s).and_then(|h| pce(&h).ok());
        if !close(pce_lib, common::naive_pce(&s))
            || !close(sc(&s).ok(), common::naive_sc(&s))
            || !close(gc(&s).ok(), common::naive_gc(&s))
        {
            bad += 1;
        }
    }
    outcome(bad == 0, format!("{bad} of 200 scores disagree with the naive recomputation"))
}

fn transposition_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 1);
    let (mut metric_bad, mut chord_bad, mut chord_checked) = (0, 0, 0);
    for _ in 0..100 {
        let s = common::random_score(&mut rng, 4, 12);
        let base = (PitchClassHistogram::from_score(&s).and_then(|h| pce(&h).ok()), sc(&s).ok(), gc(&s).ok());
        let chords = analyze(&s);
        let covariant = common::covariance_applicable(&s);
        for shift in -5..=6 {
            let t = s.transposed(shift);
            assert_eq!(t.notes.len(), s.notes.len(), "fixture pitches keep every note");
            let got = (PitchClassHistogram::from_score(&t).and_then(|h| pce(&h).ok()), sc(&t).ok(), gc(&t).ok());
            if !(close(base.0, got.0) && close(base.1, got.1) && close(base.2, got.2)) {
                metric_bad += 1;
            }
            if covariant {
                chord_checked += 1;
                let moved = analyze(&t);
                let rotated = moved.len() == chords.len()
                    && chords.iter().zip(&moved).all(|((b0, c0), (b1, c1))| {
                        b0 == b1
                            && c1.root as i32 == (c0.root as i32 + shift).rem_euclid(12)
                            && (c0.degree, c0.mode, c0.extension) == (c1.degree, c1.mode, c1.extension)
                    });
                if !rotated {
                    chord_bad += 1;
                }
            }
        }
    }
    outcome(
        metric_bad == 0 && chord_bad == 0 && chord_checked > 0,
        format!(
            "{metric_bad} metric mismatches over 1200 transpositions; {chord_bad} chord mismatches over {chord_checked} \
             (histograms symmetric under rotation excluded)"
        ),
    )
}

fn round_trip() -> Outcome {
    let vocab = Vocabulary::default();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 2);
    let (mut lost, mut dependent) = (0, 0);
    for _ in 0..100 {
        let s = common::random_score(&mut rng, 4, 16);
        let chords = analyze(&s);
        let decoded = vocab.decode(&vocab.encode(&s, &chords).unwrap()).score;
        if decoded.notes != s.notes {
            lost += 1;
        }
        let alt: Vec<(u32, ChordLabel)> = (0..s.num_bars())
            .map(|bar| (bar, ChordLabel { degree: 5, root: 7, mode: ChordMode::Major, extension: Extension::Add7 }))
            .collect();
        let other = vocab.decode(&vocab.encode(&s, &alt).unwrap()).score;
        if other != decoded || alt.iter().map(|c| c.1).eq(chords.iter().map(|c| c.1)) {
            dependent += 1;
        }
    }
    outcome(
        lost == 0 && dependent == 0,
        format!("{lost} of 100 scores lost notes; {dependent} decodes depended on chord events"),
    )
}

fn loss_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 3);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let (a, b, c) = (rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0), rng.gen_range(-50.0..50.0));
        worst = worst.max((relativistic_d(a, b) + relativistic_d(b, a) - 1.0).abs());
        worst = worst.max((relativistic_d(a + c, b + c) - relativistic_d(a, b)).abs());
        for conv in [LossConvention::AsPrinted, LossConvention::RsganStandard] {
            let shifted = loss_d(&[b + c], &[a + c], conv).unwrap();
            worst = worst.max((shifted - loss_d(&[b], &[a], conv).unwrap()).abs());
        }
    }
    let eq = loss_d(&[0.3, -2.0, 7.0], &[0.3, -2.0, 7.0], LossConvention::AsPrinted).unwrap();
    let eq_err = (eq - 0.5f64.ln()).abs();
    outcome(
        worst <= LOSS_TOL && eq_err <= LOSS_TOL,
        format!("max identity deviation {worst:.1e}; loss_d at equal scores off ln 0.5 by {eq_err:.1e}"),
    )
}

fn toy_config() -> (TrainConfig, Vocabulary) {
    let vocab = Vocabulary::default();
    (TrainConfig { batch: 8, ..TrainConfig::default() }, vocab)
}

fn gradient_verification() -> Outcome {
    let start = Instant::now();
    let (cfg, vocab) = toy_config();
    let corpus = synthetic_corpus(&vocab, true);
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 4);
    let state = GanState::init(&cfg.generator, &cfg.critic, &mut rng).unwrap();
    let real = corpus[..2].to_vec();
    let fake: Vec<_> = real
        .iter()
        .map(|r| quintuple_core::gan::generate(&state.gen.params, &cfg.generator, &vocab, r.len(), &mut rng, 1.0, 1.0))
        .collect();
    let mut bank: ParamBank = state.gen.params.clone();
    bank.extend(state.disc.params.clone());

    let mut lines = Vec::new();
    let mut pass = true;
    for conv in [LossConvention::AsPrinted, LossConvention::RsganStandard] {
        let cfg = TrainConfig { loss_convention: conv, ..cfg.clone() };
        for generator_loss in [false, true] {
            let eval = |b: &ParamBank| {
                let mut tape = Tape::new();
                let l = batch_losses(&mut tape, b, b, (&cfg.generator, &cfg.critic), &cfg, &real, &fake, None)
                    .expect("valid batch");
                let v = if generator_loss { l.loss_g } else { l.loss_d };
                (tape.scalar(v), tape, v)
            };
            let (_, tape, v) = eval(&bank);
            let analytic = tape.param_grads(&tape.backward(v));
            let report = grad_check(|b| Ok(eval(b).0), &bank, &analytic, GRAD_SAMPLES, GRAD_TOL, &mut rng).unwrap();
            pass &= report.passed() && report.checked == GRAD_SAMPLES;
            lines.push(format!(
                "{}/{:?} {:.1e}",
                if generator_loss { "L_G" } else { "L_D" },
                conv,
                report.max_rel_error
            ));
        }
    }
    let elapsed = start.elapsed();
    outcome(
        pass && elapsed < Duration::from_secs(120),
        format!("max rel err over {GRAD_SAMPLES} params: {}; {elapsed:.1?}", lines.join(", ")),
    )
}

fn training_run() -> Vec<TrainLog> {
    let (cfg, vocab) = toy_config();
    let corpus = synthetic_corpus(&vocab, true);
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 5);
    let mut state = GanState::init(&cfg.generator, &cfg.critic, &mut rng).unwrap();
    train(&mut state, &cfg, &vocab, &corpus, TRAIN_STEPS, &mut rng, |_| {}).unwrap()
}

fn toy_training() -> Outcome {
    let start = Instant::now();
    let logs = training_run();
    let elapsed = start.elapsed();
    let initial = logs[0].ce;
    let tail = &logs[logs.len() - CE_WINDOW..];
    let final_ce = tail.iter().map(|l| l.ce).sum::<f64>() / CE_WINDOW as f64;
    let finite = logs.iter().all(TrainLog::is_finite);
    let repeat = training_run();
    let identical = logs.len() == repeat.len()
        && logs.iter().zip(&repeat).all(|(a, b)| a.csv_row() == b.csv_row() && a.ce.to_bits() == b.ce.to_bits());
    outcome(
        final_ce < CE_RATIO * initial && finite && identical && elapsed < Duration::from_secs(600),
        format!(
            "CE {initial:.3} -> {final_ce:.3} (ratio {:.3}), finite: {finite}, repeat bit-identical: {identical}, {elapsed:.1?}",
            final_ce / initial
        ),
    )
}

fn midi_files(dir: &Path, out: &mut Vec<PathBuf>) {
    let Ok(entries) = std::fs::read_dir(dir) else { return };
    let mut paths: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
    paths.sort();
    for p in paths {
        if p.is_dir() {
            midi_files(&p, out);
        } else if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("mid") || e.eq_ignore_ascii_case("midi")) {
            out.push(p);
        }
    }
}

fn corpus_stats(dir: &Path) -> Outcome {
    let mut files = Vec::new();
    midi_files(dir, &mut files);
    let mut ids = Vec::new();
    let mut scores = Vec::new();
    for f in &files {
        if let Ok(s) = load_midi(f) {
            ids.push(f.strip_prefix(dir).unwrap_or(f).display().to_string());
            scores.push(s);
        }
    }
    let Ok(split) = split_corpus(&ids, SEED) else {
        return outcome(false, format!("no loadable pieces among {} files", files.len()));
    };
    let count = |k| split.values().filter(|&&s| s == k).count();
    let (tr, te, va) = (count(Split::Train), count(Split::Test), count(Split::Valid));
    let length = al(&scores);
    outcome(
        ids.len() == 5864 && (tr, te, va) == (4691, 586, 587) && (length - 99.88).abs() <= 2.0,
        format!("{} of {} files loaded; split {tr}/{te}/{va}; AL {length:.2} s", ids.len(), files.len()),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 7] = [
        ("metric oracles", metric_oracles),
        ("brute-force metric equivalence", brute_force_equivalence),
        ("transposition invariance", transposition_invariance),
        ("token round trip", round_trip),
        ("loss identities", loss_identities),
        ("gradient verification", gradient_verification),
        ("toy training smoke", toy_training),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let o = run();
        failed += usize::from(!o.pass);
        println!("[{}] {}. {name}: {}", if o.pass { "PASS" } else { "FAIL" }, i + 1, o.detail);
    }
    match std::env::var_os("QUINTUPLE_SOD_DIR") {
        Some(dir) => {
            let o = corpus_stats(Path::new(&dir));
            failed += usize::from(!o.pass);
            println!("[{}] 8. corpus statistics: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        }
        None => println!("[SKIP] 8. corpus statistics: set QUINTUPLE_SOD_DIR to the orchestral MIDI corpus"),
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
