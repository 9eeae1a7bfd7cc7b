use rand::seq::IndexedRandom as _;
use rand::Rng as _;

use photon_dfa_core::rng::derived;

const SUBJECTS: &[&str] = &[
    "the old sailor", "a young queen", "my brother", "the quiet clerk", "every farmer", "the tired horse",
    "our neighbour", "the king", "a stranger", "the miller's daughter", "the captain", "her cousin",
];
const VERBS: &[&str] = &[
    "walked to", "looked at", "spoke with", "forgot", "carried", "remembered", "followed", "sold",
    "painted", "found", "waited for", "answered",
];
const OBJECTS: &[&str] = &[
    "the river", "a silver cup", "the long road", "the market", "an empty house", "the northern hills",
    "a letter", "the garden gate", "the harbour", "a broken wheel", "the evening bell", "the last candle",
];
const TAILS: &[&str] = &[
    "before dawn", "in the rain", "without a word", "at noon", "with great care", "once again",
    "for three days", "near the church", "as the wind rose", "by the fire",
];
const SPEAKERS: &[&str] = &["ROMEO", "JULIET", "NURSE", "FRIAR", "MERCUTIO", "TYBALT"];

/// Deterministic prose in a play-script layout with at least `min_chars`
/// characters.
pub fn synthetic_corpus(min_chars: usize, seed: u64) -> String {
    let mut rng = derived(seed, &[0xc0]);
    let mut out = String::with_capacity(min_chars + 256);
    while out.len() < min_chars {
        out.push_str(SPEAKERS.choose(&mut rng).expect("non-empty"));
        out.push_str(":\n");
        for _ in 0..rng.random_range(1..4) {
            let mut s = format!(
                "{} {} {}",
                SUBJECTS.choose(&mut rng).expect("non-empty"),
                VERBS.choose(&mut rng).expect("non-empty"),
                OBJECTS.choose(&mut rng).expect("non-empty")
            );
            if rng.random_bool(0.5) {
                s.push(' ');
                s.push_str(TAILS.choose(&mut rng).expect("non-empty"));
            }
            let mut chars = s.chars();
            let first = chars.next().expect("non-empty").to_ascii_uppercase();
            out.push(first);
            out.push_str(chars.as_str());
            out.push_str([".", "!", "?", ";", ","][rng.random_range(0..5)]);
            out.push('\n');
        }
        out.push('\n');
    }
    out
}
