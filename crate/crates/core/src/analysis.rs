//! Key-space arithmetic and corpus statistics.

use std::fs;
use std::path::Path;

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{decode, Image};

/// Probability mass within one standard deviation of a normal mean.
pub const ONE_SIGMA_MASS: f64 = 0.6827;

/// Number of distinct channel-sum triples of an `m × n` 8-bit image.
pub fn key_count(m: u64, n: u64) -> BigUint {
    BigUint::from(255u64 * m * n).pow(3)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrecisionSpec {
    /// Arithmetic precision in bits.
    pub bits: u32,
}

/// `2^(2L) · (256·M·N)^3`.
pub fn key_space_size(l: PrecisionSpec, m: u64, n: u64) -> BigUint {
    (BigUint::from(1u8) << (2 * l.bits as usize)) * BigUint::from(256 * m * n).pow(3)
}

/// `log2` of a power of two, or `None` for other values.
pub fn exact_log2(x: &BigUint) -> Option<u64> {
    let bits = x.bits();
    (bits > 0 && x.trailing_zeros() == Some(bits - 1)).then(|| bits - 1)
}

/// Decimal exponent and mantissa, e.g. `(4.668, 21)`.
pub fn scientific(x: &BigUint) -> (f64, i32) {
    let digits = x.to_string();
    let exp = digits.len() as i32 - 1;
    let head: String = digits.chars().take(17).collect();
    let mantissa = head.parse::<f64>().unwrap_or(0.0) / 10f64.powi(head.len() as i32 - 1);
    (mantissa, exp)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelInterval {
    pub lo: f64,
    pub hi: f64,
}

impl ChannelInterval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(0.0 <= lo && lo < hi && hi <= 256.0) {
            return Err(Error::InvalidParameter(format!(
                "interval ({lo}, {hi}) must satisfy 0 <= lo < hi <= 256"
            )));
        }
        Ok(Self { lo, hi })
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// One-sigma mean intervals per channel observed on natural images.
pub const NATURAL_IMAGE_INTERVALS: [ChannelInterval; 3] = [
    ChannelInterval { lo: 81.641, hi: 159.609 },
    ChannelInterval { lo: 77.388, hi: 151.382 },
    ChannelInterval { lo: 60.422, hi: 144.984 },
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaCoverage {
    pub probability: f64,
    pub key_space_fraction: f64,
}

/// Probability that all three channel means fall in their intervals, and the
/// share of the mean space the intervals occupy.
pub fn sigma_coverage(intervals: &[ChannelInterval; 3]) -> SigmaCoverage {
    SigmaCoverage {
        probability: ONE_SIGMA_MASS.powi(3),
        key_space_fraction: intervals.iter().map(|c| c.width() / 256.0).product(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    /// Per image, the mean of each channel.
    pub means: Vec<[f64; 3]>,
    /// Mean of the per-image means.
    pub mean_of_means: [f64; 3],
    pub bin_width: f64,
    /// `histogram[c][b]` counts images whose channel `c` mean falls in bin `b`.
    pub histogram: [Vec<u64>; 3],
}

fn channel_means(img: &Image) -> [f64; 3] {
    let s = img.channel_sums();
    let mn = img.pixel_count() as f64;
    [s.r as f64 / mn, s.g as f64 / mn, s.b as f64 / mn]
}

/// Per-channel means of every image and their histogram. Grayscale images
/// contribute the same mean to all three channels.
pub fn corpus_means(images: &[Image], bin_width: f64) -> Result<CorpusStats> {
    if images.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if !(bin_width > 0.0 && bin_width <= 256.0) {
        return Err(Error::InvalidParameter(format!("bin width {bin_width} out of range")));
    }
    let means: Vec<[f64; 3]> = images.iter().map(channel_means).collect();
    let bins = (256.0 / bin_width).ceil() as usize;
    let mut histogram: [Vec<u64>; 3] = std::array::from_fn(|_| vec![0; bins]);
    let mut total = [0.0; 3];
    for m in &means {
        for c in 0..3 {
            let b = ((m[c] / bin_width) as usize).min(bins - 1);
            histogram[c][b] += 1;
            total[c] += m[c];
        }
    }
    let count = means.len() as f64;
    Ok(CorpusStats {
        mean_of_means: total.map(|t| t / count),
        means,
        bin_width,
        histogram,
    })
}

/// Loads every `.ppm`, `.pgm` and `.raw` file in `dir`, sorted by name.
pub fn load_corpus(dir: &Path) -> Result<Vec<Image>> {
    let mut paths: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "ppm" | "pgm" | "raw"))
        })
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            decode(&fs::read(p)?).map_err(|e| Error::Format(format!("{}: {e}", p.display())))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_count_examples() {
        assert_eq!(key_count(1, 1), BigUint::from(16_581_375u32));
        let (m, e) = scientific(&key_count(256, 256));
        assert_eq!(e, 21);
        assert!((m - 4.668).abs() < 1e-3);
        assert!(key_count(2, 3) < key_count(3, 3));
    }

    #[test]
    fn key_space_examples() {
        let k = |l, m, n| key_space_size(PrecisionSpec { bits: l }, m, n);
        assert_eq!(exact_log2(&k(32, 2048, 2048)), Some(154));
        assert_eq!(exact_log2(&k(64, 2048, 2048)), Some(218));
        assert_eq!(k(0, 1, 1), BigUint::from(256u32).pow(3));
        assert_eq!(scientific(&k(32, 2048, 2048)).1, 46);
        assert_eq!(scientific(&k(64, 2048, 2048)).1, 65);
        // 256x256 gives 2^136 and 2^200.
        assert_eq!(exact_log2(&k(32, 256, 256)), Some(136));
        assert_eq!(scientific(&k(32, 256, 256)).1, 40);
        assert_eq!(exact_log2(&k(3, 5, 1)), None);
    }

    #[test]
    fn coverage_examples() {
        let c = sigma_coverage(&NATURAL_IMAGE_INTERVALS);
        assert!((c.probability - 0.3182).abs() < 1e-4);
        assert!((c.key_space_fraction - 0.0291).abs() < 5e-4);
        let full = [ChannelInterval::new(0.0, 256.0).unwrap(); 3];
        assert_eq!(sigma_coverage(&full).key_space_fraction, 1.0);
        let thin = [ChannelInterval::new(10.0, 10.0 + 1e-9).unwrap(); 3];
        assert!(sigma_coverage(&thin).key_space_fraction < 1e-20);
        assert!(ChannelInterval::new(5.0, 5.0).is_err());
    }

    #[test]
    fn coverage_is_translation_invariant() {
        let a = [ChannelInterval::new(10.0, 60.0).unwrap(); 3];
        let b = [ChannelInterval::new(100.0, 150.0).unwrap(); 3];
        assert_eq!(sigma_coverage(&a), sigma_coverage(&b));
    }

    #[test]
    fn corpus_examples() {
        assert!(matches!(corpus_means(&[], 8.0), Err(Error::EmptyCorpus)));
        let zero = Image::filled(2, 2, 3, 0).unwrap();
        let full = Image::filled(2, 2, 3, 255).unwrap();
        assert_eq!(corpus_means(&[zero], 8.0).unwrap().means, vec![[0.0; 3]]);
        let s = corpus_means(&[full], 8.0).unwrap();
        assert_eq!(s.means, vec![[255.0; 3]]);
        assert_eq!(s.histogram[0][31], 1);
        let a = Image::filled(2, 2, 3, 100).unwrap();
        let b = Image::filled(2, 2, 3, 200).unwrap();
        assert_eq!(corpus_means(&[a, b], 16.0).unwrap().mean_of_means, [150.0; 3]);
    }
}
