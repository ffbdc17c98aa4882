//! Deterministic English-like text used when no corpus file is given.
//! Pseudo-words are built from syllables and drawn with Zipf weights per
//! word class; sentences follow a handful of clause templates, so the
//! bytes carry spelling, agreement and word-order structure to learn.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crope_core::rng::SplitRng;

/// Size of the built-in corpus.
pub const DEFAULT_BYTES: usize = 1 << 20;
pub const DEFAULT_SEED: u64 = 0;
const STREAM: u64 = 7;

const ONSETS: &[&str] = &[
    "b", "c", "d", "f", "g", "h", "l", "m", "n", "p", "r", "s", "t", "v", "w", "br", "cl", "dr",
    "fr", "gr", "pl", "pr", "sh", "st", "th", "tr", "ch", "sp",
];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ea", "ou", "io", "ee"];
const CODAS: &[&str] = &[
    "", "", "", "n", "r", "s", "t", "l", "m", "nd", "st", "ck", "ng",
];

const DETS: &[&str] = &["the", "a", "this", "every", "some", "one", "that", "no"];
const PREPS: &[&str] = &[
    "in", "on", "with", "from", "under", "near", "after", "before", "over", "through",
];
const CONJ: &[&str] = &["and", "but", "while", "because", "so", "although"];
const PRONOUNS: &[&str] = &["it", "she", "he", "they", "we"];

struct Class {
    words: Vec<String>,
    pick: WeightedIndex<f64>,
}

impl Class {
    fn new(rng: &mut ChaCha8Rng, n: usize, syllables: (usize, usize)) -> Self {
        let mut words: Vec<String> = Vec::with_capacity(n);
        while words.len() < n {
            let k = rng.random_range(syllables.0..=syllables.1);
            let w: String = (0..k)
                .map(|_| {
                    let o = ONSETS[rng.random_range(0..ONSETS.len())];
                    let v = VOWELS[rng.random_range(0..VOWELS.len())];
                    let c = CODAS[rng.random_range(0..CODAS.len())];
                    format!("{o}{v}{c}")
                })
                .collect();
            if !words.contains(&w) {
                words.push(w);
            }
        }
        let pick =
            WeightedIndex::new((0..n).map(|r| 1.0 / (r as f64 + 1.0))).expect("positive weights");
        Self { words, pick }
    }

    fn draw<'a>(&'a self, rng: &mut ChaCha8Rng) -> &'a str {
        &self.words[self.pick.sample(rng)]
    }
}

fn one<'a>(rng: &mut ChaCha8Rng, xs: &[&'a str]) -> &'a str {
    xs[rng.random_range(0..xs.len())]
}

struct Grammar {
    nouns: Class,
    verbs: Class,
    adjs: Class,
    advs: Class,
}

impl Grammar {
    fn noun_phrase(&self, rng: &mut ChaCha8Rng, out: &mut Vec<String>) {
        out.push(one(rng, DETS).into());
        if rng.random_bool(0.4) {
            out.push(self.adjs.draw(rng).into());
        }
        out.push(self.nouns.draw(rng).into());
    }

    fn verb(&self, rng: &mut ChaCha8Rng, past: bool) -> String {
        let v = self.verbs.draw(rng);
        if past {
            format!("{v}ed")
        } else {
            format!("{v}s")
        }
    }

    fn clause(&self, rng: &mut ChaCha8Rng, past: bool, out: &mut Vec<String>) {
        if rng.random_bool(0.2) {
            out.push(one(rng, PRONOUNS).into());
        } else {
            self.noun_phrase(rng, out);
        }
        if rng.random_bool(0.15) {
            out.push(self.advs.draw(rng).into());
        }
        out.push(self.verb(rng, past));
        match rng.random_range(0..4) {
            0 => {}
            1 => self.noun_phrase(rng, out),
            2 => {
                out.push(one(rng, PREPS).into());
                self.noun_phrase(rng, out);
            }
            _ => {
                self.noun_phrase(rng, out);
                out.push(one(rng, PREPS).into());
                self.noun_phrase(rng, out);
            }
        }
    }

    fn sentence(&self, rng: &mut ChaCha8Rng, past: bool) -> String {
        let mut words = Vec::new();
        self.clause(rng, past, &mut words);
        if rng.random_bool(0.3) {
            let last = words.last_mut().expect("clause is non-empty");
            last.push(',');
            words.push(one(rng, CONJ).into());
            self.clause(rng, past, &mut words);
        }
        let mut s = words.join(" ");
        if let Some(first) = s.get(..1) {
            let upper = first.to_uppercase();
            s.replace_range(..1, &upper);
        }
        s.push(if rng.random_bool(0.08) { '?' } else { '.' });
        s
    }
}

/// `bytes` bytes of ASCII text, identical for identical arguments.
pub fn synthetic_corpus(bytes: usize, seed: u64) -> Vec<u8> {
    let mut rng = SplitRng::new(seed).stream(STREAM);
    let g = Grammar {
        nouns: Class::new(&mut rng, 1200, (1, 3)),
        verbs: Class::new(&mut rng, 400, (1, 2)),
        adjs: Class::new(&mut rng, 300, (1, 3)),
        advs: Class::new(&mut rng, 60, (2, 3)),
    };
    let mut out = String::with_capacity(bytes + 256);
    while out.len() < bytes {
        let past = rng.random_bool(0.5);
        let n = rng.random_range(3..=8);
        let para: Vec<String> = (0..n).map(|_| g.sentence(&mut rng, past)).collect();
        out.push_str(&para.join(" "));
        out.push_str("\n\n");
    }
    let mut v = out.into_bytes();
    v.truncate(bytes);
    v
}
