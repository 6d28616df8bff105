//! Built-in word lists for the synthetic corpora. None of these words occur
//! in any shortcut phrase.

pub const POSITIVE: [&str; 24] = [
    "good", "great", "excellent", "wonderful", "amazing", "superb", "lovely", "fantastic",
    "delightful", "pleasant", "brilliant", "charming", "enjoyable", "nice", "perfect", "solid",
    "terrific", "outstanding", "splendid", "fabulous", "marvelous", "stellar", "awesome",
    "impressive",
];

pub const NEGATIVE: [&str; 24] = [
    "bad", "awful", "terrible", "horrible", "poor", "dreadful", "boring", "mediocre", "lousy",
    "disappointing", "annoying", "weak", "sloppy", "dull", "broken", "useless", "painful",
    "tedious", "flimsy", "cheap", "rotten", "nasty", "clumsy", "bland",
];

/// Adjectives for corpora with more than two classes; partitioned
/// round-robin into class pools.
pub const DESCRIPTORS: [&str; 60] = [
    "ancient", "bright", "calm", "dusty", "eager", "faint", "gentle", "hollow", "icy", "jolly",
    "keen", "lofty", "misty", "narrow", "odd", "pale", "quiet", "rapid", "sleek", "tidy",
    "urban", "vivid", "warm", "young", "zesty", "bold", "crisp", "dense", "empty", "fuzzy",
    "grand", "humid", "ivory", "jagged", "kind", "lean", "muddy", "noisy", "oval", "plump",
    "quaint", "rusty", "shiny", "tall", "upbeat", "vast", "wild", "yellow", "zany", "brisk",
    "cozy", "damp", "elegant", "fierce", "glossy", "hasty", "inky", "jumbo", "knotty", "lush",
];

pub const NEUTRAL: [&str; 48] = [
    "a", "this", "that", "was", "is", "we", "they", "our", "my", "with", "and", "for", "on",
    "at", "place", "food", "service", "staff", "room", "price", "menu", "order", "table",
    "visit", "time", "day", "night", "town", "city", "friend", "family", "car", "phone", "item",
    "box", "store", "shop", "meal", "coffee", "drink", "seat", "door", "window", "street",
    "week", "year", "trip", "game",
];

/// Token used by the binary spurious-strength testbed.
pub const TESTBED_TOKEN: &str = "book";

const ONSETS: [&str; 16] = [
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "sh", "ch",
];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];

/// `n` distinct two-syllable pseudo-words, starting at offset `skip` in a
/// fixed enumeration (up to 6400 words), excluding anything in `exclude`.
pub fn pseudo_words(skip: usize, n: usize, exclude: &[String]) -> Vec<String> {
    let mut out = Vec::with_capacity(n);
    let total = (ONSETS.len() * VOWELS.len()).pow(2);
    // stride coprime with `total` spreads consecutive words across syllables
    let stride = 37;
    let mut i = skip;
    while out.len() < n && i < skip + total {
        let j = (i * stride) % total;
        let (s1, s2) = (j / 80, j % 80);
        let w = format!(
            "{}{}{}{}",
            ONSETS[s1 / 5],
            VOWELS[s1 % 5],
            ONSETS[s2 / 5],
            VOWELS[s2 % 5]
        );
        if !exclude.contains(&w) {
            out.push(w);
        }
        i += 1;
    }
    out
}
