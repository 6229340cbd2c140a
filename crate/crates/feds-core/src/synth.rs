//! Seeded synthetic data.
//!
//! Each character is drawn as a fixed pseudo-random ink pattern (derived
//! from the dataset seed) of `glyph_width - 1` columns followed by one blank
//! spacing column. A word is the left-to-right composition of its glyphs,
//! shifted right by a random whole number of pixels, with Gaussian pixel
//! noise and clamping to `[0, 1]`.
//!
//! Sample `i` of a corpus draws everything from its own stream keyed by
//! `(seed, i)`, so corpora are reproducible and order independent.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::recognizer::WordImage;
use crate::rng::{self, purpose};
use crate::tensor::Tensor;
use crate::text::{edit_distance, encode_one_hot, Alphabet, CharGrid};

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub alphabet: Alphabet,
    /// Length capacity `L`.
    pub length: usize,
    pub height: usize,
    pub width: usize,
    pub glyph_width: usize,
    pub corpus_size: usize,
    pub noise_std: f64,
    /// Shifts are drawn uniformly from `0..=shift_range`.
    pub shift_range: usize,
    pub seed: u64,
}

impl DatasetConfig {
    /// Desk-scale defaults.
    pub fn desk(seed: u64) -> Self {
        Self {
            alphabet: Alphabet::default(),
            length: 8,
            height: 8,
            width: 32,
            glyph_width: 4,
            corpus_size: 5000,
            noise_std: 0.35,
            shift_range: 1,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.length == 0 || self.height == 0 || self.glyph_width < 2 {
            return Err(Error::config("dataset dimensions must be positive, glyph_width >= 2"));
        }
        if self.width < self.length * self.glyph_width {
            return Err(Error::config(format!(
                "width {} is smaller than length {} x glyph width {}",
                self.width, self.length, self.glyph_width
            )));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::config("noise_std must be finite and non-negative"));
        }
        Ok(())
    }

    /// Ink pattern of symbol `index`, `H x (glyph_width - 1)` row-major.
    pub fn glyph(&self, index: usize) -> Vec<f64> {
        let ink = self.glyph_width - 1;
        let mut r = rng::stream(self.seed, purpose::GLYPHS, index as u64);
        loop {
            let g: Vec<f64> = (0..self.height * ink)
                .map(|_| if r.random_bool(0.5) { 1.0 } else { 0.0 })
                .collect();
            if g.iter().any(|&v| v > 0.0) {
                return g;
            }
        }
    }

    /// Train, validation and test index ranges (80/10/10 by index).
    pub fn splits(&self) -> Splits {
        Splits::of(self.corpus_size)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splits {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

impl Splits {
    pub fn of(n: usize) -> Self {
        let a = n * 8 / 10;
        let b = n * 9 / 10;
        Self {
            train: 0..a,
            val: a..b,
            test: b..n,
        }
    }
}

/// Renders `word` with noise and shift drawn from `rng`.
pub fn render_word<R: Rng>(word: &str, cfg: &DatasetConfig, rng: &mut R) -> Result<WordImage> {
    let n = word.chars().count();
    if n > cfg.length {
        return Err(Error::Capacity {
            len: n,
            capacity: cfg.length,
        });
    }
    cfg.alphabet.validate(word)?;
    let (h, w) = (cfg.height, cfg.width);
    let ink = cfg.glyph_width - 1;
    let shift = rng.random_range(0..=cfg.shift_range);
    let mut px = vec![0.0; h * w];
    for (i, c) in word.chars().enumerate() {
        let glyph = cfg.glyph(cfg.alphabet.index_of(c).expect("validated"));
        let x0 = i * cfg.glyph_width + shift;
        for row in 0..h {
            for col in 0..ink {
                let x = x0 + col;
                if x < w {
                    px[row * w + x] = glyph[row * ink + col];
                }
            }
        }
    }
    if cfg.noise_std > 0.0 {
        let normal = Normal::new(0.0, cfg.noise_std).map_err(|_| Error::config("bad noise_std"))?;
        for v in px.iter_mut() {
            *v = (*v + normal.sample(rng)).clamp(0.0, 1.0);
        }
    }
    Ok(WordImage {
        pixels: Tensor::from_vec(h, w, px)?,
        label: word.into(),
    })
}

fn random_word<R: Rng>(cfg: &DatasetConfig, rng: &mut R) -> String {
    let len = rng.random_range(1..=cfg.length);
    (0..len).map(|_| random_symbol(cfg, rng)).collect()
}

fn random_symbol<R: Rng>(cfg: &DatasetConfig, rng: &mut R) -> char {
    let idx = rng.random_range(1..cfg.alphabet.len());
    cfg.alphabet.symbol(idx).expect("in range")
}

/// Sample `index` of the corpus described by `cfg`.
pub fn sample(cfg: &DatasetConfig, index: usize) -> Result<WordImage> {
    let mut r = rng::stream(cfg.seed, purpose::CORPUS, index as u64);
    let word = random_word(cfg, &mut r);
    render_word(&word, cfg, &mut r)
}

/// `corpus_size` labelled images; see [`DatasetConfig::splits`].
pub fn sample_corpus(cfg: &DatasetConfig) -> Result<Vec<WordImage>> {
    cfg.validate()?;
    if cfg.corpus_size == 0 {
        return Err(Error::config("corpus_size must be positive"));
    }
    (0..cfg.corpus_size).map(|i| sample(cfg, i)).collect()
}

/// Word pair with its true edit distance.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSample {
    pub word_a: String,
    pub word_b: String,
    pub grid_a: CharGrid,
    pub grid_b: CharGrid,
    pub ed: usize,
    /// Number of random edits applied to `word_a` to obtain `word_b`.
    pub edits: usize,
}

/// Draws a base word, applies `k ~ U[0, L/2]` random insertions, deletions
/// or substitutions (staying within `0..=L` characters), and labels the pair
/// with the recomputed edit distance.
pub fn random_pair_generator<R: Rng>(cfg: &DatasetConfig, rng: &mut R) -> Result<PairSample> {
    let base = random_word(cfg, rng);
    let k = rng.random_range(0..=cfg.length / 2);
    let mut edited: Vec<char> = base.chars().collect();
    for _ in 0..k {
        let mut choices: [u8; 3] = [0; 3];
        let mut n = 0;
        if edited.len() < cfg.length {
            choices[n] = 0;
            n += 1;
        }
        if !edited.is_empty() {
            choices[n] = 1;
            choices[n + 1] = 2;
            n += 2;
        }
        match choices[rng.random_range(0..n)] {
            0 => {
                let at = rng.random_range(0..=edited.len());
                edited.insert(at, random_symbol(cfg, rng));
            }
            1 => {
                let at = rng.random_range(0..edited.len());
                edited.remove(at);
            }
            _ => {
                let at = rng.random_range(0..edited.len());
                let old = edited[at];
                if cfg.alphabet.len() > 2 {
                    let mut c = old;
                    while c == old {
                        c = random_symbol(cfg, rng);
                    }
                    edited[at] = c;
                }
            }
        }
    }
    let word_b: String = edited.into_iter().collect();
    let ed = edit_distance(&base, &word_b);
    Ok(PairSample {
        grid_a: encode_one_hot(&base, &cfg.alphabet, cfg.length)?,
        grid_b: encode_one_hot(&word_b, &cfg.alphabet, cfg.length)?,
        word_a: base,
        word_b,
        ed,
        edits: k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DatasetConfig {
        DatasetConfig {
            corpus_size: 10,
            ..DatasetConfig::desk(5)
        }
    }

    #[test]
    fn rendering_is_deterministic() {
        let cfg = small();
        let a = render_word("ab1", &cfg, &mut rng::stream(1, 0, 0)).unwrap();
        let b = render_word("ab1", &cfg, &mut rng::stream(1, 0, 0)).unwrap();
        assert_eq!(a, b);
        assert!(a.pixels.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn noiseless_render_is_glyph_composition() {
        let cfg = DatasetConfig {
            noise_std: 0.0,
            shift_range: 0,
            ..small()
        };
        let img = render_word("ba", &cfg, &mut rng::stream(0, 0, 0)).unwrap();
        let ink = cfg.glyph_width - 1;
        let mut expect = vec![0.0; cfg.height * cfg.width];
        for (i, c) in ['b', 'a'].iter().enumerate() {
            let glyph = cfg.glyph(cfg.alphabet.index_of(*c).unwrap());
            for r in 0..cfg.height {
                for col in 0..ink {
                    expect[r * cfg.width + i * cfg.glyph_width + col] = glyph[r * ink + col];
                }
            }
        }
        assert_eq!(img.pixels.data(), &expect[..]);
    }

    #[test]
    fn render_rejects_long_words() {
        let cfg = small();
        let err = render_word("abcdefghi", &cfg, &mut rng::stream(0, 0, 0)).unwrap_err();
        assert_eq!(err, Error::Capacity { len: 9, capacity: 8 });
    }

    #[test]
    fn corpus_cardinality_and_reproducibility() {
        let cfg = small();
        let a = sample_corpus(&cfg).unwrap();
        assert_eq!(a.len(), 10);
        let b = sample_corpus(&cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|s| (1..=8).contains(&s.label.chars().count())));
        assert_eq!(Splits::of(10), Splits { train: 0..8, val: 8..9, test: 9..10 });
    }

    #[test]
    fn pair_labels_are_true_edit_distances() {
        let cfg = small();
        let mut r = rng::stream(3, purpose::PAIRS, 0);
        for _ in 0..200 {
            let p = random_pair_generator(&cfg, &mut r).unwrap();
            assert_eq!(p.ed, edit_distance(&p.word_a, &p.word_b));
            assert!(p.ed <= p.edits);
            if p.edits == 0 {
                assert_eq!(p.ed, 0);
            }
        }
    }
}
