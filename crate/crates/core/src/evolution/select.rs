//! Parent sampling and trigger bookkeeping.

use std::collections::BTreeSet;

use rand::Rng;

use super::config::PeConfig;
use crate::error::{Error, Result};

/// Softmax weights of `scores / temperature`, shifted by the maximum so the largest
/// weight is exactly 1 before normalization.
pub fn softmax(scores: &[f64], temperature: f64) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = scores.iter().map(|s| ((s - max) / temperature).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

fn draw<R: Rng + ?Sized>(probs: &[f64], exclude: Option<usize>, rng: &mut R) -> usize {
    let total: f64 = probs
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != exclude)
        .map(|(_, p)| p)
        .sum();
    let mut u = rng.gen::<f64>() * total;
    let mut last = 0;
    for (i, p) in probs.iter().enumerate() {
        if Some(i) == exclude {
            continue;
        }
        last = i;
        if u < *p {
            return i;
        }
        u -= p;
    }
    last
}

/// Indices into `scores` of the sampled parent and, unless dropped, an inspiration.
///
/// The inspiration follows the same distribution with the parent removed; with a
/// single elite it may coincide with the parent.
pub fn sample_parent<R: Rng + ?Sized>(
    scores: &[f64],
    temperature: f64,
    drop_prob: f64,
    rng: &mut R,
) -> Result<(usize, Option<usize>)> {
    if scores.is_empty() {
        return Err(Error::precondition("cannot sample a parent from an empty archive"));
    }
    let probs = softmax(scores, temperature);
    let parent = draw(&probs, None, rng);
    let inspiration = if rng.gen::<f64>() < drop_prob {
        None
    } else if scores.len() >= 2 {
        Some(draw(&probs, Some(parent), rng))
    } else {
        Some(parent)
    };
    Ok((parent, inspiration))
}

/// Fires iff `eval_count` is a positive multiple of the interval that has not fired yet.
/// A firing count is recorded in `fired`.
pub fn pe_trigger_check(eval_count: u64, config: &PeConfig, fired: &mut BTreeSet<u64>) -> bool {
    if !config.enabled || eval_count == 0 || eval_count % config.interval != 0 {
        return false;
    }
    fired.insert(eval_count)
}

/// Largest multiple of `interval` not above `count`.
pub fn last_multiple(count: u64, interval: u64) -> u64 {
    count - count % interval
}

/// Cut `text` to at most `max_chars` characters at a whitespace boundary. Returns the
/// text and whether anything was removed.
pub fn truncate_on_whitespace(text: &str, max_chars: usize) -> (String, bool) {
    if text.chars().count() <= max_chars {
        return (text.to_string(), false);
    }
    let cut: String = text.chars().take(max_chars).collect();
    let kept = match cut.rfind(char::is_whitespace) {
        Some(at) if at > 0 => cut[..at].trim_end().to_string(),
        _ => cut,
    };
    (kept, true)
}
