//! Binary hypervectors and the target codebook.
//!
//! A [`Hypervector`] is a bit-packed `{0,1}^dim` vector. Bundling is the
//! element-wise rounded mean (majority vote, ties round up) and similarity is
//! the Hamming distance. The [`TargetCodebook`] holds one target vector per
//! (adaptor, class) pair, cut from a Sylvester Hadamard matrix so that every
//! pair of rows disagrees in exactly `(D + 1) / 2` positions.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{EarError, Result};
use crate::rng;

const WORD_BITS: usize = 64;

/// Largest supported hypervector dimensionality.
pub const MAX_DIM: usize = (1 << 20) - 1;

#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Hypervector {
    words: Vec<u64>,
    dim: usize,
}

impl std::fmt::Debug for Hypervector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let bits: String = (0..self.dim.min(96))
            .map(|i| if self.get(i) { '1' } else { '0' })
            .collect();
        let ellipsis = if self.dim > 96 { "..." } else { "" };
        write!(f, "Hypervector({}; {bits}{ellipsis})", self.dim)
    }
}

fn words_for(dim: usize) -> usize {
    dim.div_ceil(WORD_BITS)
}

impl Hypervector {
    pub fn zeros(dim: usize) -> Self {
        Self {
            words: vec![0; words_for(dim)],
            dim,
        }
    }

    pub fn ones(dim: usize) -> Self {
        let mut v = Self {
            words: vec![u64::MAX; words_for(dim)],
            dim,
        };
        v.clear_padding();
        v
    }

    pub fn from_bits<I: IntoIterator<Item = bool>>(bits: I) -> Self {
        let mut words = Vec::new();
        let mut dim = 0;
        for bit in bits {
            if dim % WORD_BITS == 0 {
                words.push(0);
            }
            if bit {
                words[dim / WORD_BITS] |= 1 << (dim % WORD_BITS);
            }
            dim += 1;
        }
        Self { words, dim }
    }

    /// Builds a vector from `0`/`1` bytes; any nonzero byte is a set bit.
    pub fn from_u8s(bits: &[u8]) -> Self {
        Self::from_bits(bits.iter().map(|&b| b != 0))
    }

    /// Decodes the LSB-first packed byte layout produced by [`Self::to_packed_bytes`].
    pub fn from_packed_bytes(bytes: &[u8], dim: usize) -> Result<Self> {
        let need = dim.div_ceil(8);
        if bytes.len() != need {
            return Err(EarError::dim(need, bytes.len()));
        }
        let mut v = Self::zeros(dim);
        for (i, &byte) in bytes.iter().enumerate() {
            v.words[i / 8] |= u64::from(byte) << ((i % 8) * 8);
        }
        if v.padding_dirty() {
            return Err(EarError::Malformed(
                "hypervector padding bits are set".into(),
            ));
        }
        Ok(v)
    }

    pub fn to_packed_bytes(&self) -> Vec<u8> {
        let n = self.dim.div_ceil(8);
        (0..n)
            .map(|i| (self.words[i / 8] >> ((i % 8) * 8)) as u8)
            .collect()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.dim, "bit index {i} out of range for dim {}", self.dim);
        self.words[i / WORD_BITS] >> (i % WORD_BITS) & 1 == 1
    }

    pub fn set(&mut self, i: usize, value: bool) {
        assert!(i < self.dim, "bit index {i} out of range for dim {}", self.dim);
        let mask = 1u64 << (i % WORD_BITS);
        if value {
            self.words[i / WORD_BITS] |= mask;
        } else {
            self.words[i / WORD_BITS] &= !mask;
        }
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn bits(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.dim).map(move |i| self.get(i))
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    /// Hamming distance; see [`hamming`].
    pub fn hamming(&self, other: &Hypervector) -> Result<usize> {
        hamming(self, other)
    }

    fn padding_mask(&self) -> u64 {
        match self.dim % WORD_BITS {
            0 => u64::MAX,
            r => (1u64 << r) - 1,
        }
    }

    fn clear_padding(&mut self) {
        let mask = self.padding_mask();
        if let Some(last) = self.words.last_mut() {
            *last &= mask;
        }
    }

    fn padding_dirty(&self) -> bool {
        let mask = self.padding_mask();
        self.words.last().is_some_and(|&w| w & !mask != 0)
    }
}

/// Popcount of `a XOR b`.
pub fn hamming(a: &Hypervector, b: &Hypervector) -> Result<usize> {
    if a.dim != b.dim {
        return Err(EarError::dim(a.dim, b.dim));
    }
    Ok(a.words
        .iter()
        .zip(&b.words)
        .map(|(x, y)| (x ^ y).count_ones() as usize)
        .sum())
}

/// Element-wise majority of the inputs. An element whose mean is exactly 0.5
/// becomes 1.
pub fn bundle<'a, I>(vectors: I) -> Result<Hypervector>
where
    I: IntoIterator<Item = &'a Hypervector>,
{
    let mut iter = vectors.into_iter();
    let first = iter
        .next()
        .ok_or_else(|| EarError::Argument("cannot bundle an empty list".into()))?;
    let dim = first.dim;
    let mut counts = vec![0u32; dim];
    let mut n = 0u32;
    for v in std::iter::once(first).chain(iter) {
        if v.dim != dim {
            return Err(EarError::dim(dim, v.dim));
        }
        for (wi, &word) in v.words.iter().enumerate() {
            let mut w = word;
            while w != 0 {
                let bit = w.trailing_zeros() as usize;
                counts[wi * WORD_BITS + bit] += 1;
                w &= w - 1;
            }
        }
        n += 1;
    }
    Ok(Hypervector::from_bits(counts.iter().map(|&c| 2 * c >= n)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BinarizeMode {
    /// Element `i` is 1 with probability `scores[i]`.
    #[default]
    Sample,
    /// Element `i` is 1 iff `scores[i] >= 0.5`.
    Round,
}

fn check_scores(scores: &[f64]) -> Result<()> {
    match scores.iter().position(|s| !(0.0..=1.0).contains(s)) {
        Some(i) => Err(EarError::Domain(format!(
            "score[{i}] = {} is outside [0, 1]",
            scores[i]
        ))),
        None => Ok(()),
    }
}

/// Stochastic binarization of per-element probabilities.
pub fn sample_binarize<R: Rng + ?Sized>(scores: &[f64], rng: &mut R) -> Result<Hypervector> {
    check_scores(scores)?;
    Ok(Hypervector::from_bits(
        scores.iter().map(|&p| rng.random::<f64>() < p),
    ))
}

pub fn round_binarize(scores: &[f64]) -> Result<Hypervector> {
    check_scores(scores)?;
    Ok(Hypervector::from_bits(scores.iter().map(|&p| p >= 0.5)))
}

pub fn binarize<R: Rng + ?Sized>(
    scores: &[f64],
    mode: BinarizeMode,
    rng: &mut R,
) -> Result<Hypervector> {
    match mode {
        BinarizeMode::Sample => sample_binarize(scores, rng),
        BinarizeMode::Round => round_binarize(scores),
    }
}

/// Smallest `2^m - 1` that is at least `k`, i.e. `2^ceil(log2(k + 1)) - 1`.
pub fn codebook_dimension(num_targets: usize) -> Result<usize> {
    if num_targets == 0 {
        return Err(EarError::Argument("codebook needs at least one target".into()));
    }
    let n = (num_targets + 1).next_power_of_two();
    let dim = n - 1;
    if dim > MAX_DIM {
        return Err(EarError::Capacity(format!(
            "{num_targets} targets need dimensionality {dim} > {MAX_DIM}"
        )));
    }
    Ok(dim)
}

/// Pseudo-orthogonal targets, one row per (adaptor, class) pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetCodebook {
    vectors: Vec<Hypervector>,
    num_classes: usize,
    num_adaptors: usize,
    dim: usize,
}

impl TargetCodebook {
    /// Rows of a Sylvester Hadamard matrix of order `n = D + 1` with the
    /// first row and column dropped, shuffled once by the seeded RNG, first
    /// `k` rows kept and `-1` mapped to `0`.
    ///
    /// Entry `(i, j)` of the Sylvester matrix `[[1,1],[1,-1]]^{⊗m}` is
    /// `(-1)^{popcount(i & j)}`, so rows are produced directly without
    /// materializing the full matrix.
    pub fn generate(num_classes: usize, num_adaptors: usize, seed: u64) -> Result<Self> {
        let k = num_classes
            .checked_mul(num_adaptors)
            .ok_or_else(|| EarError::Capacity("class x adaptor count overflows".into()))?;
        let dim = codebook_dimension(k)?;
        let n = dim + 1;

        let mut rows: Vec<usize> = (1..n).collect();
        rows.shuffle(&mut rng::seeded(seed));
        rows.truncate(k);

        let vectors = rows
            .into_iter()
            .map(|i| Hypervector::from_bits((1..n).map(|j| (i & j).count_ones() % 2 == 0)))
            .collect();
        Ok(Self {
            vectors,
            num_classes,
            num_adaptors,
            dim,
        })
    }

    /// Rebuilds a codebook from stored rows (e.g. a model container).
    pub fn from_rows(
        vectors: Vec<Hypervector>,
        num_classes: usize,
        num_adaptors: usize,
    ) -> Result<Self> {
        let k = num_classes * num_adaptors;
        if vectors.len() != k {
            return Err(EarError::dim(k, vectors.len()));
        }
        let dim = codebook_dimension(k)?;
        if let Some(bad) = vectors.iter().find(|v| v.dim() != dim) {
            return Err(EarError::dim(dim, bad.dim()));
        }
        Ok(Self {
            vectors,
            num_classes,
            num_adaptors,
            dim,
        })
    }

    /// Target for class index `class` (0-based within the domain) at adaptor slot `adaptor`.
    pub fn target(&self, adaptor: usize, class: usize) -> &Hypervector {
        assert!(adaptor < self.num_adaptors && class < self.num_classes);
        &self.vectors[adaptor * self.num_classes + class]
    }

    pub fn rows(&self) -> &[Hypervector] {
        &self.vectors
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_adaptors(&self) -> usize {
        self.num_adaptors
    }
}

pub fn generate_codebook(
    num_classes: usize,
    num_adaptors: usize,
    seed: u64,
) -> Result<TargetCodebook> {
    TargetCodebook::generate(num_classes, num_adaptors, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    /// Explicit Kronecker expansion, independent of the popcount shortcut.
    fn sylvester_kron(n: usize) -> Vec<Vec<i8>> {
        let base = [[1i8, 1], [1, -1]];
        let mut c: Vec<Vec<i8>> = vec![vec![1, 1], vec![1, -1]];
        while c.len() < n {
            let m = c.len();
            let mut next = vec![vec![0i8; 2 * m]; 2 * m];
            for (bi, brow) in base.iter().enumerate() {
                for (bj, &b) in brow.iter().enumerate() {
                    for i in 0..m {
                        for j in 0..m {
                            next[bi * m + i][bj * m + j] = b * c[i][j];
                        }
                    }
                }
            }
            c = next;
        }
        c
    }

    fn hv(bits: &[u8]) -> Hypervector {
        Hypervector::from_u8s(bits)
    }

    #[test]
    fn dimensionality_rule() {
        assert_eq!(codebook_dimension(49).unwrap(), 63);
        assert_eq!(codebook_dimension(31 * 7).unwrap(), 255);
        assert_eq!(codebook_dimension(16 * 7).unwrap(), 127);
        assert_eq!(codebook_dimension(32 * 7).unwrap(), 255);
        assert_eq!(codebook_dimension(2).unwrap(), 3);
        assert_eq!(codebook_dimension(3).unwrap(), 3);
        assert_eq!(codebook_dimension(4).unwrap(), 7);
        assert_eq!(codebook_dimension(1).unwrap(), 1);
        assert!(matches!(
            codebook_dimension(MAX_DIM + 1),
            Err(EarError::Capacity(_))
        ));
    }

    #[test]
    fn small_codebook_matches_hand_expansion() {
        let allowed = [hv(&[0, 1, 0]), hv(&[1, 0, 0]), hv(&[0, 0, 1])];
        for seed in 0..20 {
            let cb = generate_codebook(2, 1, seed).unwrap();
            assert_eq!(cb.dim(), 3);
            for row in cb.rows() {
                assert!(allowed.contains(row), "{row:?}");
            }
            assert_eq!(hamming(&cb.rows()[0], &cb.rows()[1]).unwrap(), 2);
        }
    }

    #[test]
    fn codebook_rows_come_from_kronecker_matrix() {
        let cb = generate_codebook(7, 7, 3).unwrap();
        let n = cb.dim() + 1;
        let h = sylvester_kron(n);
        let trimmed: Vec<Hypervector> = h[1..]
            .iter()
            .map(|row| Hypervector::from_bits(row[1..].iter().map(|&x| x == 1)))
            .collect();
        for row in cb.rows() {
            assert!(trimmed.contains(row));
        }
    }

    #[test]
    fn codebook_is_seed_deterministic() {
        let a = generate_codebook(5, 3, 11).unwrap();
        let b = generate_codebook(5, 3, 11).unwrap();
        let c = generate_codebook(5, 3, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn codebook_rows_equidistant() {
        let cb = generate_codebook(10, 7, 0).unwrap();
        let half = cb.dim().div_ceil(2);
        for i in 0..cb.rows().len() {
            for j in i + 1..cb.rows().len() {
                assert_eq!(hamming(&cb.rows()[i], &cb.rows()[j]).unwrap(), half);
            }
        }
    }

    #[test]
    fn binarize_extremes() {
        let mut r = rng::seeded(1);
        assert_eq!(sample_binarize(&[1.0; 70], &mut r).unwrap(), Hypervector::ones(70));
        assert_eq!(sample_binarize(&[0.0; 70], &mut r).unwrap(), Hypervector::zeros(70));
        assert!(matches!(
            sample_binarize(&[0.2, 1.5], &mut r),
            Err(EarError::Domain(_))
        ));
        assert!(sample_binarize(&[f64::NAN], &mut r).is_err());
    }

    #[test]
    fn binarize_half_is_fair() {
        let mut r = rng::seeded(2);
        let dim = 16;
        let mut counts = vec![0usize; dim];
        let draws = 10_000;
        for _ in 0..draws {
            let v = sample_binarize(&vec![0.5; dim], &mut r).unwrap();
            for (c, b) in counts.iter_mut().zip(v.bits()) {
                *c += b as usize;
            }
        }
        for c in counts {
            let mean = c as f64 / draws as f64;
            assert!((mean - 0.5).abs() <= 0.02, "{mean}");
        }
    }

    #[test]
    fn bundle_examples() {
        assert_eq!(bundle([&hv(&[1, 0, 1]), &hv(&[1, 0, 1])]).unwrap(), hv(&[1, 0, 1]));
        assert_eq!(
            bundle([&hv(&[1, 0, 0]), &hv(&[0, 1, 0]), &hv(&[1, 1, 0])]).unwrap(),
            hv(&[1, 1, 0])
        );
        assert_eq!(bundle([&hv(&[1, 0]), &hv(&[0, 1])]).unwrap(), hv(&[1, 1]));
        assert!(matches!(
            bundle(std::iter::empty::<&Hypervector>()),
            Err(EarError::Argument(_))
        ));
        assert!(matches!(
            bundle([&hv(&[1, 0]), &hv(&[0, 1, 1])]),
            Err(EarError::Dimension { .. })
        ));
    }

    #[test]
    fn hamming_examples() {
        let v = hv(&[1, 0, 1, 1]);
        assert_eq!(hamming(&v, &v).unwrap(), 0);
        assert_eq!(hamming(&hv(&[0, 1, 0, 1]), &hv(&[1, 0, 1, 0])).unwrap(), 4);
        assert!(hamming(&hv(&[0]), &hv(&[0, 1])).is_err());
    }

    #[test]
    fn hamming_matches_naive_loop() {
        let mut r = rng::seeded(3);
        for _ in 0..1000 {
            let dim = r.random_range(1..300);
            let a = Hypervector::from_bits((0..dim).map(|_| r.random::<bool>()));
            let b = Hypervector::from_bits((0..dim).map(|_| r.random::<bool>()));
            let naive = a.bits().zip(b.bits()).filter(|(x, y)| x != y).count();
            assert_eq!(hamming(&a, &b).unwrap(), naive);
        }
    }

    #[test]
    fn packed_bytes_reject_dirty_padding() {
        let v = hv(&[1, 1, 0, 1, 0, 0, 1, 0, 1, 1]);
        let bytes = v.to_packed_bytes();
        assert_eq!(Hypervector::from_packed_bytes(&bytes, 10).unwrap(), v);
        let mut dirty = bytes.clone();
        dirty[1] |= 0x80;
        assert!(Hypervector::from_packed_bytes(&dirty, 10).is_err());
    }

    fn arb_hv(dim: usize) -> impl Strategy<Value = Hypervector> {
        proptest::collection::vec(any::<bool>(), dim).prop_map(Hypervector::from_bits)
    }

    proptest! {
        #[test]
        fn padding_is_zero_and_self_distance_zero(bits in proptest::collection::vec(any::<bool>(), 1..200)) {
            let v = Hypervector::from_bits(bits.iter().copied());
            prop_assert_eq!(v.dim(), bits.len());
            prop_assert!(!v.padding_dirty());
            prop_assert_eq!(hamming(&v, &v).unwrap(), 0);
            prop_assert!(!Hypervector::ones(bits.len()).padding_dirty());
        }

        #[test]
        fn bundle_is_permutation_invariant(
            vs in proptest::collection::vec(arb_hv(37), 1..9),
            seed in any::<u64>(),
        ) {
            let mut shuffled = vs.clone();
            shuffled.shuffle(&mut rng::seeded(seed));
            prop_assert_eq!(bundle(&vs).unwrap(), bundle(&shuffled).unwrap());
        }

        #[test]
        fn triangle_inequality(a in arb_hv(91), b in arb_hv(91), c in arb_hv(91)) {
            let ab = hamming(&a, &b).unwrap();
            let bc = hamming(&b, &c).unwrap();
            let ac = hamming(&a, &c).unwrap();
            prop_assert!(ab + bc >= ac);
            prop_assert_eq!(ab, hamming(&b, &a).unwrap());
        }

        #[test]
        fn round_mode_equals_singleton_bundle(scores in proptest::collection::vec(0.0f64..=1.0, 1..120)) {
            let rounded = round_binarize(&scores).unwrap();
            let thresholded = Hypervector::from_bits(scores.iter().map(|&s| s >= 0.5));
            prop_assert_eq!(bundle([&thresholded]).unwrap(), rounded);
        }
    }
}
