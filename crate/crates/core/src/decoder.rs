//! CTC decoding: best-path collapse and prefix beam search with optional
//! vocabulary gating.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::model::CharDistribution;

/// Log-probability floor standing in for `ln 0`.
pub const LOG_ZERO: f64 = -1e30;

/// Log-penalty for a completed word missing from the vocabulary.
pub const OOV_LOG_PENALTY: f64 = -10.0;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DecodeError {
    #[error("distribution has {actual} classes, alphabet expects {expected}")]
    ClassCount { expected: usize, actual: usize },
    #[error("beam width must be at least 1")]
    ZeroBeam,
    #[error("alphabet error: {0}")]
    Alphabet(&'static str),
}

/// Output characters. The blank class is implicit and sits after the last character.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alphabet {
    chars: Vec<char>,
}

impl Alphabet {
    pub fn new(chars: Vec<char>) -> Result<Self, DecodeError> {
        if chars.is_empty() {
            return Err(DecodeError::Alphabet("alphabet is empty"));
        }
        for (i, c) in chars.iter().enumerate() {
            if chars[..i].contains(c) {
                return Err(DecodeError::Alphabet("duplicate character"));
            }
            if c.is_control() {
                return Err(DecodeError::Alphabet("control character"));
            }
        }
        Ok(Self { chars })
    }

    /// Lowercase English letters, space and apostrophe.
    pub fn english() -> Self {
        let mut chars = alloc::vec![' '];
        chars.extend('a'..='z');
        chars.push('\'');
        Self { chars }
    }

    /// Parses the one-character-per-line text format. Lines starting with `#`
    /// are comments, a line holding a single space is the space character and
    /// empty lines are ignored.
    pub fn parse(text: &str) -> Result<Self, DecodeError> {
        let mut chars = Vec::new();
        for line in text.split('\n') {
            let line = line.strip_suffix('\r').unwrap_or(line);
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut it = line.chars();
            match (it.next(), it.next()) {
                (Some(c), None) => chars.push(c),
                _ => return Err(DecodeError::Alphabet("line holds more than one character")),
            }
        }
        Self::new(chars)
    }

    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        for c in &self.chars {
            out.push(*c);
            out.push('\n');
        }
        out
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn blank_index(&self) -> usize {
        self.chars.len()
    }

    /// Softmax classes, blank included.
    pub fn size(&self) -> usize {
        self.chars.len() + 1
    }

    pub fn index_of(&self, c: char) -> Option<usize> {
        self.chars.iter().position(|&x| x == c)
    }

    pub fn char_at(&self, i: usize) -> Option<char> {
        self.chars.get(i).copied()
    }

    fn space_index(&self) -> Option<usize> {
        self.index_of(' ')
    }
}

/// Word-level vocabulary used to gate beam hypotheses.
pub trait Vocabulary {
    fn contains_word(&self, word: &str) -> bool;
}

impl<V: Vocabulary + ?Sized> Vocabulary for &V {
    fn contains_word(&self, word: &str) -> bool {
        (**self).contains_word(word)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamConfig {
    pub beam_width: usize,
    /// Weight on the vocabulary log-score.
    pub lm_weight: f64,
    /// Bonus per completed word.
    pub word_bonus: f64,
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self {
            beam_width: 64,
            lm_weight: 0.75,
            word_bonus: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transcript {
    pub text: String,
    pub log_prob: f64,
    /// Frame at which each character of `text` was emitted.
    pub frame_spans: Vec<usize>,
}

fn ln(p: f32) -> f64 {
    if p > 0.0 {
        libm::log(p as f64).max(LOG_ZERO)
    } else {
        LOG_ZERO
    }
}

fn log_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi <= LOG_ZERO {
        return LOG_ZERO;
    }
    if lo <= LOG_ZERO {
        return hi;
    }
    hi + libm::log1p(libm::exp(lo - hi))
}

fn check_classes(dist: &CharDistribution, ab: &Alphabet) -> Result<(), DecodeError> {
    if dist.classes() != ab.size() {
        return Err(DecodeError::ClassCount {
            expected: ab.size(),
            actual: dist.classes(),
        });
    }
    Ok(())
}

/// Per-frame argmax (lowest index on ties), repeats collapsed, blanks dropped.
pub fn greedy_decode(dist: &CharDistribution, ab: &Alphabet) -> Result<Transcript, DecodeError> {
    check_classes(dist, ab)?;
    let blank = ab.blank_index();
    let mut text = String::new();
    let mut frame_spans = Vec::new();
    let mut log_prob = 0.0;
    let mut prev = blank;
    for t in 0..dist.frames() {
        let row = dist.row(t);
        let best = crate::nn::argmax(row);
        log_prob += ln(row[best]);
        if best != blank && best != prev {
            text.push(ab.chars[best]);
            frame_spans.push(t);
        }
        prev = best;
    }
    Ok(Transcript {
        text,
        log_prob,
        frame_spans,
    })
}

#[derive(Debug, Clone)]
struct Beam {
    frames: Vec<usize>,
    /// Log-probability of all paths for this prefix ending in blank / in its last label.
    blank: f64,
    non_blank: f64,
    /// Accumulated vocabulary score of completed words.
    lm: f64,
    /// Start of the word currently being spelled, as an index into the prefix.
    word_start: usize,
}

impl Beam {
    fn empty() -> Self {
        Self {
            frames: Vec::new(),
            blank: LOG_ZERO,
            non_blank: LOG_ZERO,
            lm: 0.0,
            word_start: 0,
        }
    }

    fn ctc(&self) -> f64 {
        log_add(self.blank, self.non_blank)
    }
}

struct Scorer<'a> {
    vocab: &'a dyn Vocabulary,
    cfg: BeamConfig,
}

impl Scorer<'_> {
    fn word_score(&self, ab: &Alphabet, labels: &[u32]) -> f64 {
        if labels.is_empty() {
            return 0.0;
        }
        let word: String = labels.iter().map(|&l| ab.chars[l as usize]).collect();
        let lp = if self.vocab.contains_word(&word) {
            0.0
        } else {
            OOV_LOG_PENALTY
        };
        self.cfg.lm_weight * lp + self.cfg.word_bonus
    }
}

/// Ranks by score descending, then by label sequence ascending.
fn rank(a: (&Vec<u32>, f64), b: (&Vec<u32>, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0))
}

/// CTC prefix beam search in log space.
///
/// Without a vocabulary a prefix scores its CTC log-probability. With one,
/// every completed word (closed by a space, or by the end of the utterance
/// for the final ranking) adds `lm_weight · log P + word_bonus`, where
/// `log P` is 0 for known words and [`OOV_LOG_PENALTY`] otherwise.
pub fn beam_decode(
    dist: &CharDistribution,
    ab: &Alphabet,
    cfg: &BeamConfig,
    vocab: Option<&dyn Vocabulary>,
) -> Result<Transcript, DecodeError> {
    check_classes(dist, ab)?;
    if cfg.beam_width == 0 {
        return Err(DecodeError::ZeroBeam);
    }
    let blank = ab.blank_index();
    let space = ab.space_index();
    let scorer = vocab.map(|vocab| Scorer { vocab, cfg: *cfg });

    let mut beams: Vec<(Vec<u32>, Beam)> = alloc::vec![(
        Vec::new(),
        Beam {
            blank: 0.0,
            ..Beam::empty()
        }
    )];
    let mut logp = alloc::vec![0f64; ab.size()];
    for t in 0..dist.frames() {
        for (lp, &p) in logp.iter_mut().zip(dist.row(t)) {
            *lp = ln(p);
        }
        let mut next: BTreeMap<Vec<u32>, Beam> = BTreeMap::new();
        for (labels, beam) in &beams {
            let total = beam.ctc();
            let last = labels.last().map(|&l| l as usize);

            let stay = next.entry(labels.clone()).or_insert_with(|| Beam {
                frames: beam.frames.clone(),
                lm: beam.lm,
                word_start: beam.word_start,
                ..Beam::empty()
            });
            stay.blank = log_add(stay.blank, total + logp[blank]);
            if let Some(l) = last {
                stay.non_blank = log_add(stay.non_blank, beam.non_blank + logp[l]);
            }

            for (c, &lp) in logp.iter().enumerate().take(blank) {
                if lp <= LOG_ZERO {
                    continue;
                }
                let mut extended = labels.clone();
                extended.push(c as u32);
                let incoming = if Some(c) == last {
                    beam.blank + lp
                } else {
                    total + lp
                };
                let entry = next.entry(extended).or_insert_with(|| {
                    let mut frames = beam.frames.clone();
                    frames.push(t);
                    let (mut lm, mut word_start) = (beam.lm, beam.word_start);
                    if Some(c) == space {
                        if let Some(s) = &scorer {
                            lm += s.word_score(ab, &labels[beam.word_start..]);
                        }
                        word_start = labels.len() + 1;
                    }
                    Beam {
                        frames,
                        lm,
                        word_start,
                        ..Beam::empty()
                    }
                });
                entry.non_blank = log_add(entry.non_blank, incoming);
            }
        }
        let mut ranked: Vec<(Vec<u32>, Beam)> = next.into_iter().collect();
        ranked.sort_by(|a, b| rank((&a.0, a.1.ctc() + a.1.lm), (&b.0, b.1.ctc() + b.1.lm)));
        ranked.truncate(cfg.beam_width);
        beams = ranked;
    }

    let final_score = |labels: &[u32], beam: &Beam| {
        let tail = scorer
            .as_ref()
            .map_or(0.0, |s| s.word_score(ab, &labels[beam.word_start..]));
        beam.ctc() + beam.lm + tail
    };
    let (labels, beam) = beams
        .iter()
        .min_by(|a, b| {
            rank(
                (&a.0, final_score(&a.0, &a.1)),
                (&b.0, final_score(&b.0, &b.1)),
            )
        })
        .expect("at least one beam survives");
    Ok(Transcript {
        text: labels.iter().map(|&l| ab.chars[l as usize]).collect(),
        log_prob: final_score(labels, beam),
        frame_spans: beam.frames.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Matrix;
    use crate::rng::XorShift64Star;
    use alloc::collections::BTreeSet;
    use proptest::prelude::*;

    fn dist(rows: &[&[f32]]) -> CharDistribution {
        let k = rows[0].len();
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        CharDistribution::new(Matrix::new(rows.len(), k, data).unwrap()).unwrap()
    }

    fn random_dist(rng: &mut XorShift64Star, t: usize, k: usize) -> CharDistribution {
        let mut data = Vec::new();
        for _ in 0..t {
            let raw: Vec<f64> = (0..k).map(|_| rng.next_f64() + 1e-3).collect();
            let s: f64 = raw.iter().sum();
            data.extend(raw.iter().map(|v| (v / s) as f32));
        }
        CharDistribution::new(Matrix::new(t, k, data).unwrap()).unwrap()
    }

    /// Sum of path probabilities per collapsed labeling, by enumeration.
    fn brute_force(d: &CharDistribution, blank: usize) -> (Vec<u32>, f64) {
        let (t, k) = (d.frames(), d.classes());
        let mut totals: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
        for code in 0..k.pow(t as u32) {
            let mut c = code;
            let mut p = 1.0f64;
            let mut path = Vec::new();
            for f in 0..t {
                let label = c % k;
                c /= k;
                p *= d.row(f)[label] as f64;
                path.push(label);
            }
            let mut out = Vec::new();
            let mut prev = usize::MAX;
            for &l in &path {
                if l != prev && l != blank {
                    out.push(l as u32);
                }
                prev = l;
            }
            *totals.entry(out).or_default() += p;
        }
        let mut best: Option<(Vec<u32>, f64)> = None;
        for (labels, p) in totals {
            if best.as_ref().is_none_or(|b| p > b.1) {
                best = Some((labels, p));
            }
        }
        best.unwrap()
    }

    fn ab(n: usize) -> Alphabet {
        Alphabet::new(('a'..).take(n).collect()).unwrap()
    }

    #[test]
    fn alphabet_file_format() {
        let a = Alphabet::parse("# comment\n \na\nb\r\n'\n\n").unwrap();
        assert_eq!(a.chars(), &[' ', 'a', 'b', '\'']);
        assert_eq!(a.blank_index(), 4);
        assert_eq!(a.size(), 5);
        assert_eq!(Alphabet::parse(&a.to_file_string()).unwrap(), a);
        assert!(Alphabet::parse("ab\n").is_err());
        assert!(Alphabet::parse("a\na\n").is_err());
        assert_eq!(Alphabet::english().size(), 29);
    }

    #[test]
    fn greedy_all_blank() {
        let d = dist(&[&[0.1, 0.1, 0.8], &[0.2, 0.2, 0.6]]);
        assert_eq!(greedy_decode(&d, &ab(2)).unwrap().text, "");
    }

    #[test]
    fn greedy_collapse_rule() {
        // argmax classes a, a, blank, a, b
        let d = dist(&[
            &[0.8, 0.1, 0.1],
            &[0.7, 0.2, 0.1],
            &[0.1, 0.1, 0.8],
            &[0.6, 0.3, 0.1],
            &[0.2, 0.7, 0.1],
        ]);
        let t = greedy_decode(&d, &ab(2)).unwrap();
        assert_eq!(t.text, "aab");
        assert_eq!(t.frame_spans, vec![0, 3, 4]);
        let expect: f64 = [0.8f32, 0.7, 0.8, 0.6, 0.7]
            .iter()
            .map(|&p| (p as f64).ln())
            .sum();
        assert!((t.log_prob - expect).abs() < 1e-12);
    }

    #[test]
    fn class_count_mismatch() {
        let d = dist(&[&[0.5, 0.5]]);
        assert!(matches!(
            greedy_decode(&d, &ab(2)),
            Err(DecodeError::ClassCount { .. })
        ));
        assert!(beam_decode(&d, &ab(2), &BeamConfig::default(), None).is_err());
        let d = dist(&[&[0.5, 0.5]]);
        let cfg = BeamConfig {
            beam_width: 0,
            ..Default::default()
        };
        assert_eq!(
            beam_decode(&d, &ab(1), &cfg, None),
            Err(DecodeError::ZeroBeam)
        );
    }

    #[test]
    fn beam_certain_blank_is_empty() {
        let row: &[f32] = &[0.0, 0.0, 1.0];
        let d = dist(&[row; 4]);
        for w in [1, 2, 8, 100] {
            let cfg = BeamConfig {
                beam_width: w,
                ..Default::default()
            };
            assert_eq!(beam_decode(&d, &ab(2), &cfg, None).unwrap().text, "");
        }
    }

    #[test]
    fn beam_prefers_summed_paths_over_best_path() {
        // Best single path is blank,blank (0.36) but "a" collects aa + a_ + _a = 0.64.
        let d = dist(&[&[0.4, 0.6], &[0.4, 0.6]]);
        let a = ab(1);
        assert_eq!(greedy_decode(&d, &a).unwrap().text, "");
        let t = beam_decode(&d, &a, &BeamConfig::default(), None).unwrap();
        assert_eq!(t.text, "a");
        assert!((t.log_prob - 0.64f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn exhaustive_equivalence_small_instances() {
        let mut rng = XorShift64Star::new(2024);
        for _ in 0..200 {
            let t = 1 + rng.below(4) as usize;
            let k = 2 + rng.below(2) as usize;
            let d = random_dist(&mut rng, t, k);
            let (labels, p) = brute_force(&d, k - 1);
            let cfg = BeamConfig {
                beam_width: k.pow(t as u32),
                ..Default::default()
            };
            let got = beam_decode(&d, &ab(k - 1), &cfg, None).unwrap();
            let expect: String = labels
                .iter()
                .map(|&l| ab(k - 1).chars[l as usize])
                .collect();
            assert_eq!(got.text, expect);
            assert!((got.log_prob - p.ln()).abs() < 1e-6);
        }
    }

    struct Words(BTreeSet<&'static str>);

    impl Vocabulary for Words {
        fn contains_word(&self, word: &str) -> bool {
            self.0.contains(word)
        }
    }

    #[test]
    fn vocabulary_gates_words() {
        // Acoustically "ab" narrowly beats "aa"; only "aa" is a word.
        let a = Alphabet::new(vec!['a', 'b', ' ']).unwrap();
        let d = dist(&[
            &[0.9, 0.0, 0.0, 0.1],
            &[0.0, 0.0, 0.0, 1.0],
            &[0.45, 0.55, 0.0, 0.0],
        ]);
        let plain = beam_decode(&d, &a, &BeamConfig::default(), None).unwrap();
        assert_eq!(plain.text, "ab");
        let vocab = Words(["aa"].into_iter().collect());
        let gated = beam_decode(&d, &a, &BeamConfig::default(), Some(&vocab)).unwrap();
        assert_eq!(gated.text, "aa");
        let off = BeamConfig {
            lm_weight: 0.0,
            word_bonus: 0.0,
            ..Default::default()
        };
        let neutral = beam_decode(&d, &a, &off, Some(&vocab)).unwrap();
        assert_eq!(neutral, beam_decode(&d, &a, &off, None).unwrap());
    }

    #[test]
    fn word_bonus_applies_at_spaces() {
        let a = Alphabet::new(vec!['a', ' ']).unwrap();
        // "a a" vs "aa": the middle frame is space against blank.
        let d = dist(&[&[1.0, 0.0, 0.0], &[0.0, 0.45, 0.55], &[1.0, 0.0, 0.0]]);
        assert_eq!(
            beam_decode(&d, &a, &BeamConfig::default(), None)
                .unwrap()
                .text,
            "aa"
        );
        let vocab = Words(["a"].into_iter().collect());
        let cfg = BeamConfig {
            lm_weight: 0.0,
            word_bonus: 1.0,
            ..Default::default()
        };
        assert_eq!(beam_decode(&d, &a, &cfg, Some(&vocab)).unwrap().text, "a a");
    }

    /// Per-frame argmax is at least `margin` times the runner-up.
    fn confident_dist(
        rng: &mut XorShift64Star,
        t: usize,
        k: usize,
        margin: f64,
    ) -> CharDistribution {
        let mut data = Vec::new();
        for _ in 0..t {
            let winner = rng.below(k as u64) as usize;
            let mut raw: Vec<f64> = (0..k).map(|_| rng.next_f64() + 0.01).collect();
            let runner_up = raw
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != winner)
                .map(|(_, &v)| v)
                .fold(0.0, f64::max);
            raw[winner] = raw[winner].max(margin * runner_up) + 0.01;
            let s: f64 = raw.iter().sum();
            data.extend(raw.iter().map(|v| (v / s) as f32));
        }
        CharDistribution::new(Matrix::new(t, k, data).unwrap()).unwrap()
    }

    #[test]
    fn width_one_matches_greedy_on_confident_frames() {
        // A repeated character split by a blank stays greedy-equivalent once
        // the margin m satisfies 2/m + 1/m² < 1, i.e. m > 1 + √2.
        let mut rng = XorShift64Star::new(77);
        for _ in 0..1000 {
            let t = 1 + rng.below(12) as usize;
            let k = 2 + rng.below(5) as usize;
            let d = confident_dist(&mut rng, t, k, 2.5);
            let a = ab(k - 1);
            let cfg = BeamConfig {
                beam_width: 1,
                ..Default::default()
            };
            assert_eq!(
                beam_decode(&d, &a, &cfg, None).unwrap().text,
                greedy_decode(&d, &a).unwrap().text
            );
        }
    }

    #[test]
    fn width_one_can_merge_repeats_at_a_two_to_one_margin() {
        let d = dist(&[
            &[0.668_420_85, 0.331_579_15],
            &[0.329_960_4, 0.670_039_6],
            &[0.668_216_76, 0.331_783_2],
            &[0.223_735_62, 0.776_264_37],
            &[0.332_182_6, 0.667_817_4],
            &[0.332_052_47, 0.667_947_53],
            &[0.851_210_06, 0.148_789_93],
        ]);
        let a = ab(1);
        let cfg = BeamConfig {
            beam_width: 1,
            ..Default::default()
        };
        assert_eq!(greedy_decode(&d, &a).unwrap().text, "aaa");
        assert_eq!(beam_decode(&d, &a, &cfg, None).unwrap().text, "aa");
    }

    #[test]
    fn wider_beam_can_lose_an_ancestor() {
        // Widening from 3 to 4 lets longer prefixes crowd out an ancestor of
        // the winning labeling, so its accumulated mass drops.
        let mut rng = XorShift64Star::new(69510);
        let d = random_dist(&mut rng, 5, 3);
        let a = ab(2);
        let score = |w| {
            let cfg = BeamConfig {
                beam_width: w,
                ..Default::default()
            };
            beam_decode(&d, &a, &cfg, None).unwrap().log_prob
        };
        assert!(score(4) < score(3));
        assert!(score(27) >= score(3));
    }

    proptest! {
        #[test]
        fn greedy_never_longer_than_frames(seed in 1u64..100_000, t in 1usize..20, k in 2usize..6) {
            let d = random_dist(&mut XorShift64Star::new(seed), t, k);
            let out = greedy_decode(&d, &ab(k - 1)).unwrap();
            prop_assert!(out.text.chars().count() <= t);
            prop_assert!(out.frame_spans.windows(2).all(|w| w[0] <= w[1]));
        }

        #[test]
        fn saturating_beam_dominates_narrower_beams(seed in 1u64..100_000, t in 1usize..6, k in 2usize..5) {
            let d = random_dist(&mut XorShift64Star::new(seed), t, k);
            let a = ab(k - 1);
            let full = BeamConfig { beam_width: k.pow(t as u32), ..Default::default() };
            let best = beam_decode(&d, &a, &full, None).unwrap().log_prob;
            let (labels, p) = brute_force(&d, k - 1);
            prop_assert!((best - p.ln()).abs() < 1e-6, "{:?}", labels);
            for w in 1..=6 {
                let cfg = BeamConfig { beam_width: w, ..Default::default() };
                let s = beam_decode(&d, &a, &cfg, None).unwrap().log_prob;
                prop_assert!(s <= best + 1e-9, "width {} scored {} > {}", w, s, best);
            }
        }
    }
}
