//! Exact string metrics and character-grid encodings.
//!
//! A [`CharGrid`] is an `|A| x L` matrix whose columns are probability
//! distributions over the alphabet. It is stored position-major: the
//! `|A|` entries of column `i` are contiguous, which is also the row-major
//! layout of an `L x |A|` [`Tensor`]. Row 0 of every grid is the padding
//! symbol.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Index of the padding row in every alphabet.
pub const PAD_INDEX: usize = 0;

/// Character used for the padding row. It can never appear in a transcription.
pub const PAD_CHAR: char = '\u{0}';

/// Lowercase letters followed by digits.
pub const DEFAULT_CHARSET: &str = "abcdefghijklmnopqrstuvwxyz0123456789";

/// Ordered character set with the padding symbol at row 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alphabet {
    symbols: Vec<char>,
}

impl Alphabet {
    /// Builds an alphabet from the printable characters in `charset`; the
    /// padding symbol is prepended at index 0.
    pub fn new(charset: &str) -> Result<Self> {
        let mut symbols = Vec::with_capacity(charset.len() + 1);
        symbols.push(PAD_CHAR);
        for c in charset.chars() {
            if symbols.contains(&c) {
                return Err(Error::Alphabet(alloc::format!("duplicate symbol {c:?}")));
            }
            symbols.push(c);
        }
        if symbols.len() < 2 {
            return Err(Error::Alphabet("need at least one non-padding symbol".into()));
        }
        Ok(Self { symbols })
    }

    /// Number of rows in a grid over this alphabet, padding included.
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn pad_index(&self) -> usize {
        PAD_INDEX
    }

    /// The non-padding symbols in row order.
    pub fn charset(&self) -> String {
        self.symbols[1..].iter().collect()
    }

    pub fn symbol(&self, index: usize) -> Option<char> {
        self.symbols.get(index).copied()
    }

    pub fn index_of(&self, c: char) -> Option<usize> {
        if c == PAD_CHAR {
            return None;
        }
        self.symbols.iter().position(|&s| s == c)
    }

    /// Checks that `word` is a valid transcription over this alphabet.
    pub fn validate(&self, word: &str) -> Result<()> {
        match word.chars().find(|&c| self.index_of(c).is_none()) {
            Some(c) => Err(Error::Encoding(c)),
            None => Ok(()),
        }
    }
}

impl Default for Alphabet {
    fn default() -> Self {
        Self::new(DEFAULT_CHARSET).expect("default charset is valid")
    }
}

/// Column-stochastic `|A| x L` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CharGrid {
    alphabet_size: usize,
    length: usize,
    data: Vec<f64>,
}

impl CharGrid {
    /// Wraps position-major data, checking that every column is a
    /// distribution (non-negative, sums to 1 within 1e-6).
    pub fn from_columns(alphabet_size: usize, length: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != alphabet_size * length {
            return Err(Error::shape(
                "CharGrid",
                alloc::format!("{} values for {alphabet_size}x{length}", data.len()),
            ));
        }
        for col in data.chunks(alphabet_size.max(1)) {
            let sum: f64 = col.iter().sum();
            if col.iter().any(|v| !(0.0..=1.0 + 1e-9).contains(v)) || (sum - 1.0).abs() > 1e-6 {
                return Err(Error::Input("grid column is not a probability distribution".into()));
            }
        }
        Ok(Self {
            alphabet_size,
            length,
            data,
        })
    }

    /// Interprets an `L x |A|` tensor (one row per position) as a grid.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        Self::from_columns(t.cols(), t.rows(), t.data().to_vec())
    }

    /// The grid as an `L x |A|` tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(self.length, self.alphabet_size, self.data.clone())
            .expect("grid dimensions are consistent")
    }

    pub fn alphabet_size(&self) -> usize {
        self.alphabet_size
    }

    /// Length capacity `L`.
    pub fn length(&self) -> usize {
        self.length
    }

    pub fn column(&self, pos: usize) -> &[f64] {
        &self.data[pos * self.alphabet_size..(pos + 1) * self.alphabet_size]
    }

    pub fn get(&self, row: usize, pos: usize) -> f64 {
        self.data[pos * self.alphabet_size + row]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn is_one_hot(&self) -> bool {
        self.data
            .chunks(self.alphabet_size)
            .all(|col| col.iter().filter(|&&v| v == 1.0).count() == 1 && col.iter().all(|&v| v == 0.0 || v == 1.0))
    }
}

/// One-hot grid of `word`, padded with the padding symbol up to `length`.
pub fn encode_one_hot(word: &str, alphabet: &Alphabet, length: usize) -> Result<CharGrid> {
    let n = word.chars().count();
    if n > length {
        return Err(Error::Capacity {
            len: n,
            capacity: length,
        });
    }
    let a = alphabet.len();
    let mut data = vec![0.0; a * length];
    let mut chars = word.chars();
    for pos in 0..length {
        let row = match chars.next() {
            Some(c) => alphabet.index_of(c).ok_or(Error::Encoding(c))?,
            None => PAD_INDEX,
        };
        data[pos * a + row] = 1.0;
    }
    Ok(CharGrid {
        alphabet_size: a,
        length,
        data,
    })
}

/// Per-column argmax (lowest row wins ties) with padding symbols dropped.
pub fn decode_greedy(grid: &CharGrid, alphabet: &Alphabet) -> String {
    decode_rows(grid.as_slice(), grid.alphabet_size(), alphabet)
}

/// [`decode_greedy`] on raw position-major rows, e.g. one sample of a batch.
pub fn decode_rows(data: &[f64], alphabet_size: usize, alphabet: &Alphabet) -> String {
    let mut out = String::new();
    for col in data.chunks(alphabet_size) {
        let mut best = 0;
        for (row, &v) in col.iter().enumerate() {
            if v > col[best] {
                best = row;
            }
        }
        if best != PAD_INDEX {
            if let Some(c) = alphabet.symbol(best) {
                out.push(c);
            }
        }
    }
    out
}

/// Levenshtein distance over Unicode scalar values.
pub fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleRow {
    pub gt: String,
    pub pred: String,
    pub ed: usize,
}

/// Set-level recognition metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub dataset: String,
    pub n_samples: usize,
    /// Fraction of exact matches.
    pub accuracy: f64,
    /// Mean of `1 - ed / max(|pred|, |gt|, 1)`; higher is better.
    pub ned: f64,
    /// Total edit distance.
    pub ted: usize,
    pub rows: Vec<SampleRow>,
}

impl MetricsReport {
    /// Relative TED improvement of `self` over `baseline`,
    /// `(ted_base - ted) / ted_base`. `None` when the baseline TED is zero.
    pub fn relative_ted_improvement(&self, baseline: &MetricsReport) -> Option<f64> {
        (baseline.ted > 0).then(|| (baseline.ted as f64 - self.ted as f64) / baseline.ted as f64)
    }
}

pub fn evaluate_set<P, G>(preds: &[P], gts: &[G]) -> Result<MetricsReport>
where
    P: AsRef<str>,
    G: AsRef<str>,
{
    if preds.len() != gts.len() {
        return Err(Error::Input(alloc::format!(
            "{} predictions for {} ground truths",
            preds.len(),
            gts.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Input("empty evaluation set".into()));
    }
    let mut rows = Vec::with_capacity(preds.len());
    let (mut exact, mut ned_sum, mut ted) = (0usize, 0.0, 0usize);
    for (p, g) in preds.iter().zip(gts) {
        let (p, g) = (p.as_ref(), g.as_ref());
        let ed = edit_distance(p, g);
        let denom = p.chars().count().max(g.chars().count()).max(1);
        exact += usize::from(ed == 0);
        ned_sum += 1.0 - ed as f64 / denom as f64;
        ted += ed;
        rows.push(SampleRow {
            gt: g.into(),
            pred: p.into(),
            ed,
        });
    }
    let n = preds.len();
    Ok(MetricsReport {
        dataset: String::new(),
        n_samples: n,
        accuracy: exact as f64 / n as f64,
        ned: ned_sum / n as f64,
        ted,
        rows,
    })
}
