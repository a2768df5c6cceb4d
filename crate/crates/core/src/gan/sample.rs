use rand::Rng;

use crate::nn::model::{generator_logits, GeneratorConfig};
use crate::nn::{ParamBank, Tape};
use crate::token::{CodeRow, EventType, Vocabulary};

/// Draws an index from `logits` restricted to `allowed`.
///
/// `temperature <= 0` is greedy (first maximum wins). Otherwise the softmax
/// at `temperature` is truncated to the smallest high-probability set whose
/// mass reaches `top_p`. Returns `None` when nothing is allowed.
pub fn sample_index(
    logits: &[f64],
    allowed: impl Fn(usize) -> bool,
    temperature: f64,
    top_p: f64,
    rng: &mut impl Rng,
) -> Option<usize> {
    let cand: Vec<usize> = (0..logits.len()).filter(|&i| allowed(i)).collect();
    let &first = cand.first()?;
    let best = cand.iter().copied().fold(first, |b, i| if logits[i] > logits[b] { i } else { b });
    if temperature <= 0.0 {
        return Some(best);
    }
    let max = logits[best];
    let mut probs: Vec<(usize, f64)> = cand.iter().map(|&i| (i, ((logits[i] - max) / temperature).exp())).collect();
    let z: f64 = probs.iter().map(|p| p.1).sum();
    probs.iter_mut().for_each(|p| p.1 /= z);
    probs.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut keep = probs.len();
    let mut mass = 0.0;
    for (n, p) in probs.iter().enumerate() {
        mass += p.1;
        if mass >= top_p {
            keep = n + 1;
            break;
        }
    }
    probs.truncate(keep);
    let z: f64 = probs.iter().map(|p| p.1).sum();
    let mut u = rng.gen::<f64>() * z;
    for &(i, p) in &probs {
        if u < p {
            return Some(i);
        }
        u -= p;
    }
    probs.last().map(|p| p.0)
}

/// Autoregressive sampling from start-of-song until end-of-song, `max_events`
/// rows or the model's `max_len`, whichever comes first.
///
/// The event type never resamples start-of-song or null; each field is then
/// restricted to codes legal for that type, so every row passes
/// [`Vocabulary::validate`] whenever the head widths cover the vocabulary.
pub fn generate(
    params: &ParamBank,
    cfg: &GeneratorConfig,
    vocab: &Vocabulary,
    max_events: usize,
    rng: &mut impl Rng,
    temperature: f64,
    top_p: f64,
) -> Vec<CodeRow> {
    let limit = max_events.min(cfg.max_len);
    let mut rows: Vec<CodeRow> = Vec::with_capacity(limit);
    if limit == 0 {
        return rows;
    }
    rows.push([EventType::StartOfSong.code(), 0, 0, 0, 0, 0]);
    while rows.len() < limit {
        let mut tape = Tape::new();
        let logits = generator_logits(&mut tape, params, cfg, &rows, None).expect("rows stay within vocab and max_len");
        let last = rows.len() - 1;
        let et = sample_index(
            tape.value(logits[0]).row(last),
            |c| c as u32 > EventType::StartOfSong.code() && EventType::from_code(c as u32).is_some(),
            temperature,
            top_p,
            rng,
        )
        .expect("event type head covers all types");
        let etype = EventType::from_code(et as u32).expect("filtered above");
        let mut row = [et as u32, 0, 0, 0, 0, 0];
        for k in 1..6 {
            let l = tape.value(logits[k]).row(last);
            row[k] = sample_index(l, |c| vocab.field_allows(etype, k - 1, c as u32), temperature, top_p, rng)
                .unwrap_or(0) as u32;
        }
        rows.push(row);
        if etype == EventType::EndOfSong {
            break;
        }
    }
    rows
}
