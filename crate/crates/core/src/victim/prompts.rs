//! Typing prompts: number strings, passwords and short sentences.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    Numbers,
    Password,
    Sentence,
}

impl PromptKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PromptKind::Numbers => "numbers",
            PromptKind::Password => "password",
            PromptKind::Sentence => "sentence",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub kind: PromptKind,
    pub text: String,
}

const WORDS: &[&str] = &[
    "the", "quick", "brown", "fox", "jumps", "over", "lazy", "dog", "river", "stone", "window", "garden", "yellow",
    "music", "silver", "planet", "rocket", "coffee", "paper", "pencil", "summer", "winter", "forest", "ocean",
    "mountain", "little", "happy", "bright", "cold", "warm", "green", "blue", "light", "night", "morning", "table",
    "chair", "market", "street", "city", "train", "ticket", "letter", "friend", "family", "dinner", "bread", "apple",
    "orange", "lemon", "honey", "tiger", "eagle", "horse", "rabbit", "turtle", "cloud", "rain", "snow", "storm",
    "north", "south", "east", "west", "open", "close", "write", "read", "play", "sing", "walk", "run", "build",
    "find", "keep", "give", "take", "make", "see", "know", "think", "look", "want", "use", "work", "call", "try",
    "ask", "need", "feel", "leave", "put", "mean", "let", "begin", "seem", "help", "talk", "turn", "start", "show",
    "hear", "move", "live", "bring", "happen", "sit", "stand", "lose", "pay", "meet", "learn", "change", "lead",
    "watch", "follow", "stop", "speak", "spend", "grow", "offer", "remember", "love", "consider", "appear", "buy",
    "wait", "serve", "send", "expect", "stay", "fall", "cut", "reach", "kill", "remain", "we", "you", "they", "she",
    "our", "your", "their", "good", "new", "first", "last", "long", "great", "old", "big", "high", "small", "large",
    "next", "early", "young", "few", "public", "bad", "same", "able", "today", "always", "never", "often", "soon",
];

const PASSWORD_PUNCT: &[char] = &['-', '@', '#', '!', '?', '.', ';', '/', ','];

/// Seeded battery: 30 number prompts (10 each of 3, 9 and 12 digits),
/// 20 passwords of 10-17 characters, and 15 sentences (5 each of 3, 6 and 9
/// words), in that order.
pub fn generate_prompt_battery(seed: u64) -> Vec<Prompt> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(65);
    for len in [3usize, 9, 12] {
        for _ in 0..10 {
            let text = (0..len).map(|_| char::from(b'0' + rng.random_range(0..10u8))).collect();
            out.push(Prompt { kind: PromptKind::Numbers, text });
        }
    }
    for _ in 0..20 {
        out.push(Prompt { kind: PromptKind::Password, text: password(&mut rng) });
    }
    for words in [3usize, 6, 9] {
        for _ in 0..5 {
            let text = (0..words).map(|_| *WORDS.choose(&mut rng).unwrap()).collect::<Vec<_>>().join(" ");
            out.push(Prompt { kind: PromptKind::Sentence, text });
        }
    }
    out
}

/// Word, punctuation, word, digits; redrawn until the length is 10-17.
fn password(rng: &mut ChaCha8Rng) -> String {
    loop {
        let mut s = String::new();
        s.push_str(WORDS.choose(rng).unwrap());
        s.push(*PASSWORD_PUNCT.choose(rng).unwrap());
        s.push_str(WORDS.choose(rng).unwrap());
        for _ in 0..rng.random_range(1..=4) {
            s.push(char::from(b'0' + rng.random_range(0..10u8)));
        }
        if (10..=17).contains(&s.len()) {
            return s;
        }
    }
}
