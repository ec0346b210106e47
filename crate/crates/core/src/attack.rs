//! Chosen-plaintext recovery of an equivalent key.
//!
//! The stages run in order T2, V, T1, T4, T3, codebook. Each submits
//! single-channel experiments through a [`QuerySession`], which either packs
//! three of them into one RGB query or replicates one into all channels.
//!
//! Chosen values after the V stage live in the `*` domain: the attacker picks
//! `I*` and sends `I = I* ⊟ V_eq`. Because `V_eq` lacks the top bit of `V`, the
//! cipher actually sees `I* ⊕ 128·V_7`, a fixed mask that cancels in every
//! differential and is absorbed by the codebook.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::bitops::{carry_low_to_high, combine, spl, sub4, sub8};
use crate::cipher::{inverse_permute_bits, permute_bits};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::keystream::{PermFamily, Permutation};
use crate::oracle::EncryptionOracle;

/// Bit planes recovered by queries when plane 1 is assumed to share its
/// permutation with plane 0.
pub const PLANES: [usize; 3] = [0, 2, 3];
/// Every bit plane, for keys where that assumption fails.
pub const ALL_PLANES: [usize; 4] = [0, 1, 2, 3];

pub const STAGE_T2: &str = "T2";
pub const STAGE_V: &str = "V";
pub const STAGE_T1: &str = "T1";
pub const STAGE_T4: &str = "T4";
pub const STAGE_T3: &str = "T3";
pub const STAGE_CODEBOOK: &str = "codebook";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Nibble {
    Low,
    High,
}

/// `⌈log₂ mn⌉`, the number of patterns needed to address every pixel.
pub fn index_bits(mn: usize) -> usize {
    assert!(mn >= 2, "need at least two pixels");
    (usize::BITS - (mn - 1).leading_zeros()) as usize
}

fn pattern(k: usize, target: Nibble, t: usize, mn: usize) -> Vec<u8> {
    let shift = k + if target == Nibble::High { 4 } else { 0 };
    (0..mn).map(|i| (((i >> t) & 1) << shift) as u8).collect()
}

/// The `t`-th pattern (counting from zero) sets bit `k` of the target nibble
/// at pixel `i` to bit `t` of `i`.
pub fn pattern_images(k: usize, target: Nibble, mn: usize) -> Vec<Vec<u8>> {
    assert!(k < 4);
    (0..index_bits(mn)).map(|t| pattern(k, target, t, mn)).collect()
}

fn low_diff_bit(a: &[u8], b: &[u8], k: usize) -> Vec<u8> {
    a.iter().zip(b).map(|(x, y)| ((x ^ y) >> k) & 1).collect()
}

fn high_diff_bit(a: &[u8], b: &[u8], k: usize) -> Vec<u8> {
    low_diff_bit(a, b, k + 4)
}

/// Reads pixel indices back from one differential bit per pattern.
fn decode_permutation(bits: &[Vec<u8>], mn: usize, what: String) -> Result<Permutation> {
    let mut idx = vec![0u32; mn];
    for (t, plane) in bits.iter().enumerate() {
        for (v, &b) in idx.iter_mut().zip(plane) {
            *v |= (b as u32) << t;
        }
    }
    if idx.iter().any(|&v| v as usize >= mn) {
        return Err(Error::NonBijectiveRecovery { what });
    }
    Permutation::from_vec(idx).map_err(|_| Error::NonBijectiveRecovery { what })
}

/// Builds a family from permutations recovered for `planes`, copying plane 0
/// into plane 1 when the latter was not queried.
fn family(planes: &[usize], mut recovered: Vec<Permutation>) -> PermFamily {
    if !planes.contains(&1) {
        recovered.insert(1, recovered[0].clone());
    }
    recovered.try_into().expect("four planes")
}

fn check_planes(planes: &[usize]) -> Result<()> {
    if planes != PLANES.as_slice() && planes != ALL_PLANES.as_slice() {
        return Err(Error::InvalidParameter(format!("unsupported plane set {planes:?}")));
    }
    Ok(())
}

/// Submits single-channel experiments and returns the cipher channel of each.
pub struct QuerySession<'a> {
    oracle: &'a mut dyn EncryptionOracle,
    height: usize,
    width: usize,
    packing: bool,
    counts: BTreeMap<&'static str, u64>,
}

impl<'a> QuerySession<'a> {
    pub fn new(oracle: &'a mut dyn EncryptionOracle, packing: bool) -> Self {
        let (height, width) = oracle.dims();
        Self {
            oracle,
            height,
            width,
            packing,
            counts: BTreeMap::new(),
        }
    }

    pub fn mn(&self) -> usize {
        self.height * self.width
    }

    pub fn packing(&self) -> bool {
        self.packing
    }

    pub fn queries(&self, stage: &str) -> u64 {
        self.counts.get(stage).copied().unwrap_or(0)
    }

    pub fn submit(&mut self, stage: &'static str, experiments: &[Vec<u8>]) -> Result<Vec<Vec<u8>>> {
        Ok(self.submit_with_riders(stage, experiments, &[])?.0)
    }

    /// Like [`submit`](Self::submit), but places `riders` in the channels the
    /// last query leaves free, so they cost nothing. At most two riders fit.
    pub fn submit_with_riders(
        &mut self,
        stage: &'static str,
        experiments: &[Vec<u8>],
        riders: &[Vec<u8>],
    ) -> Result<(Vec<Vec<u8>>, Vec<Vec<u8>>)> {
        let per_query = if self.packing { 3 } else { 1 };
        let chunks: Vec<&[Vec<u8>]> = experiments.chunks(per_query).collect();
        let free = chunks.last().map_or(0, |c| 3 - c.len());
        if riders.len() > free {
            return Err(Error::InvalidParameter(format!(
                "{} riders do not fit in {free} free channels",
                riders.len()
            )));
        }
        let mut out = Vec::with_capacity(experiments.len());
        let mut rider_out = Vec::new();
        for (q, chunk) in chunks.iter().enumerate() {
            let mut slots: Vec<&Vec<u8>> = chunk.iter().collect();
            if q + 1 == chunks.len() {
                slots.extend(riders);
            }
            let used = slots.len();
            let planes: Vec<Vec<u8>> = (0..3).map(|c| slots[c.min(used - 1)].clone()).collect();
            let img = Image::from_channels(self.height, self.width, &planes)?;
            let cipher = self.oracle.query(&img, stage)?;
            *self.counts.entry(stage).or_default() += 1;
            if !img.same_shape(&cipher) {
                return Err(Error::DimensionMismatch {
                    expected: img.shape(),
                    got: cipher.shape(),
                });
            }
            out.extend((0..chunk.len()).map(|c| cipher.channel(c)));
            if q + 1 == chunks.len() {
                rider_out.extend((chunk.len()..used).map(|c| cipher.channel(c)));
            }
        }
        Ok((out, rider_out))
    }
}

/// Per-pixel differential terms the attacker can compute or calibrate.
#[derive(Debug, Clone)]
pub struct DifferentialWorkspace {
    /// Carry out of `L_0 + V_L`.
    pub r0: Vec<u8>,
    /// Carry out of `L_1 + V_L`.
    pub r1: Vec<u8>,
    /// `Φ(i, 1)`.
    pub phi: Vec<u8>,
    /// `Ψ(i, 2^k)` for planes 1 to 3; slot 0 stays zero.
    pub psi: [Vec<u8>; 4],
}

impl DifferentialWorkspace {
    pub fn new(mn: usize) -> Self {
        Self {
            r0: vec![0; mn],
            r1: vec![0; mn],
            phi: vec![0; mn],
            psi: std::array::from_fn(|_| vec![0; mn]),
        }
    }

    pub fn set_carries(&mut self, l0: &[u8], l1: &[u8], v_l: &[u8]) {
        for j in 0..v_l.len() {
            self.r0[j] = carry_low_to_high(l0[j], v_l[j]);
            self.r1[j] = carry_low_to_high(l1[j], v_l[j]);
        }
    }

    /// Stores the calibration for plane `k` from the differential bit observed
    /// when every pixel holds `2^k`.
    pub fn calibrate(&mut self, k: usize, observed: &[u8]) {
        let table = if k == 0 { &mut self.phi } else { &mut self.psi[k] };
        for (t, &o) in table.iter_mut().zip(observed) {
            *t = o ^ 1;
        }
    }

    /// `Φ(i, ·)` or `Ψ(i, ·)` for a chosen bit at pixel `i`; zero when the bit is 0.
    pub fn correction(&self, k: usize, i: usize, chosen: u8) -> u8 {
        match (chosen, k) {
            (0, _) => 0,
            (_, 0) => self.phi[i],
            _ => self.psi[k][i],
        }
    }
}

/// Recovers T2. Also returns the cipher channel of the all-zero image.
pub fn recover_t2(s: &mut QuerySession, planes: &[usize]) -> Result<(PermFamily, Vec<u8>)> {
    check_planes(planes)?;
    let mn = s.mn();
    let np = planes.len();
    let base = s.submit(STAGE_T2, &[vec![0u8; mn]])?.remove(0);
    let n = index_bits(mn);
    let experiments: Vec<Vec<u8>> = (0..n)
        .flat_map(|t| planes.iter().map(move |&k| pattern(k, Nibble::High, t, mn)))
        .collect();
    let ciphers = s.submit(STAGE_T2, &experiments)?;
    let recovered = planes
        .iter()
        .enumerate()
        .map(|(pi, &k)| {
            let bits: Vec<Vec<u8>> = (0..n)
                .map(|t| low_diff_bit(&base, &ciphers[t * np + pi], k))
                .collect();
            decode_permutation(&bits, mn, format!("T2 plane {k}"))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((family(planes, recovered), base))
}

/// Threshold sweep `c = 1..15` over constant low nibbles.
pub fn recover_vl(s: &mut QuerySession, t2: &PermFamily, zero: &[u8]) -> Result<Vec<u8>> {
    let mn = s.mn();
    let experiments: Vec<Vec<u8>> = (1..=15u8).map(|c| vec![c; mn]).collect();
    let ciphers = s.submit(STAGE_V, &experiments)?;
    let mut v_l = vec![0u8; mn];
    let mut resolved = vec![false; mn];
    for (c, cipher) in (1..=15u8).zip(&ciphers) {
        let bits = low_diff_bit(zero, cipher, 0);
        for (i, &b) in bits.iter().enumerate() {
            let j = t2[0].get(i);
            if b ^ (c & 1) == 1 && !resolved[j] {
                v_l[j] = 16 - c;
                resolved[j] = true;
            }
        }
    }
    Ok(v_l)
}

/// Per-pixel binary search for `V_L`. Every query uses one parity for all
/// chosen nibbles, since that bit reaches the output through the unknown T1.
pub fn recover_vl_adaptive(s: &mut QuerySession, t2: &PermFamily, zero: &[u8]) -> Result<Vec<u8>> {
    let mn = s.mn();
    let mut lo = vec![0u8; mn];
    let mut hi = vec![15u8; mn];
    let mut parity = 1u8;
    for _ in 0..16 {
        if lo == hi {
            return Ok(lo);
        }
        // Test V_L(j) >= s with s = 16 - c in (lo, hi] and s of the round's parity.
        let thresholds: Vec<Option<u8>> = (0..mn)
            .map(|j| {
                let mid = (lo[j] + hi[j] + 1) / 2;
                [mid, mid + 1, mid.saturating_sub(1)]
                    .into_iter()
                    .find(|&t| t % 2 == parity && t > lo[j] && t <= hi[j])
            })
            .collect();
        let chosen: Vec<u8> = thresholds
            .iter()
            .map(|t| t.map_or(parity, |t| 16 - t))
            .collect();
        let cipher = s.submit(STAGE_V, &[chosen])?.remove(0);
        let bits = low_diff_bit(zero, &cipher, 0);
        for (i, &b) in bits.iter().enumerate() {
            let j = t2[0].get(i);
            if let Some(t) = thresholds[j] {
                if b ^ parity == 1 {
                    lo[j] = t;
                } else {
                    hi[j] = t - 1;
                }
            }
        }
        parity ^= 1;
    }
    if lo == hi {
        Ok(lo)
    } else {
        Err(Error::NonBijectiveRecovery {
            what: "adaptive V_L search did not converge".into(),
        })
    }
}

/// Recovers bits 4..6 of V as a 3-bit value per pixel.
pub fn recover_vh(s: &mut QuerySession, t2: &PermFamily, v_l: &[u8], zero: &[u8]) -> Result<Vec<u8>> {
    let mn = s.mn();
    let mut ws = DifferentialWorkspace::new(mn);
    let experiments: Vec<Vec<u8>> = (0..3)
        .map(|k| {
            let l1: Vec<u8> = v_l.iter().map(|&v| sub4(v ^ (1 << k), v)).collect();
            ws.set_carries(&vec![0; mn], &l1, v_l);
            l1.iter()
                .zip(&ws.r1)
                .map(|(&l, &r)| combine(l, sub4(1 << k, r)))
                .collect()
        })
        .collect();
    let ciphers = s.submit(STAGE_V, &experiments)?;
    let mut v_h = vec![0u8; mn];
    for (k, cipher) in ciphers.iter().enumerate() {
        let bits = low_diff_bit(zero, cipher, k + 1);
        for (i, &b) in bits.iter().enumerate() {
            v_h[t2[k + 1].get(i)] |= b << k;
        }
    }
    Ok(v_h)
}

/// Runs the V stage and returns `V_eq`, the additive key with bit 7 cleared.
pub fn recover_v(s: &mut QuerySession, t2: &PermFamily, zero: &[u8], adaptive: bool) -> Result<Vec<u8>> {
    let v_l = if adaptive {
        recover_vl_adaptive(s, t2, zero)?
    } else {
        recover_vl(s, t2, zero)?
    };
    let v_h = recover_vh(s, t2, &v_l, zero)?;
    Ok(v_l.iter().zip(&v_h).map(|(&l, &h)| combine(l, h)).collect())
}

/// Recovers T1 from (baseline, pattern) pairs that cancel the carry into H.
pub fn recover_t1(s: &mut QuerySession, v_l: &[u8], planes: &[usize]) -> Result<PermFamily> {
    check_planes(planes)?;
    let mn = s.mn();
    let np = planes.len();
    let n = index_bits(mn);
    let mut ws = DifferentialWorkspace::new(mn);
    let zero = vec![0u8; mn];
    let mut experiments = Vec::with_capacity(2 * np * n);
    for t in 0..n {
        let mut patterns = Vec::with_capacity(np);
        for &k in planes {
            let l1 = pattern(k, Nibble::Low, t, mn);
            ws.set_carries(&zero, &l1, v_l);
            experiments.push(ws.r1.iter().map(|&r| combine(0, r)).collect());
            patterns.push(l1.iter().zip(&ws.r0).map(|(&l, &r)| combine(l, r)).collect());
        }
        experiments.extend(patterns);
    }
    let ciphers = s.submit(STAGE_T1, &experiments)?;
    let recovered = planes
        .iter()
        .enumerate()
        .map(|(pi, &k)| {
            let bits: Vec<Vec<u8>> = (0..n)
                .map(|t| {
                    let at = 2 * np * t + pi;
                    low_diff_bit(&ciphers[at], &ciphers[at + np], k)
                })
                .collect();
            decode_permutation(&bits, mn, format!("T1 plane {k}"))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(family(planes, recovered))
}

fn low_nibble_of(v_l_of: &[u8]) -> Vec<u8> {
    v_l_of.iter().map(|&v| spl(v).0).collect()
}

/// `I = (L* + 16 H*) ⊟ V_eq`.
fn to_plain(l_star: &[u8], h_star: &[u8], v_eq: &[u8]) -> Vec<u8> {
    l_star
        .iter()
        .zip(h_star)
        .zip(v_eq)
        .map(|((&l, &h), &v)| sub8(combine(l, h), v))
        .collect()
}

/// Recovers T4. Also returns the cipher channel of the `I* = 0` baseline.
pub fn recover_t4(
    s: &mut QuerySession,
    t1: &PermFamily,
    t2: &PermFamily,
    v_eq: &[u8],
    planes: &[usize],
) -> Result<(PermFamily, Vec<u8>)> {
    check_planes(planes)?;
    let mn = s.mn();
    let np = planes.len();
    let n = index_bits(mn);
    let zero = vec![0u8; mn];
    let base = s.submit(STAGE_T4, &[to_plain(&zero, &zero, v_eq)])?.remove(0);
    let mut experiments = Vec::with_capacity(np * n);
    for t in 0..n {
        for &k in planes {
            let h1 = pattern(k, Nibble::Low, t, mn);
            let l1 = inverse_permute_bits(&permute_bits(&h1, t2)?, t1)?;
            experiments.push(to_plain(&l1, &h1, v_eq));
        }
    }
    let ciphers = s.submit(STAGE_T4, &experiments)?;
    let recovered = planes
        .iter()
        .enumerate()
        .map(|(pi, &k)| {
            let bits: Vec<Vec<u8>> = (0..n)
                .map(|t| high_diff_bit(&base, &ciphers[t * np + pi], k))
                .collect();
            decode_permutation(&bits, mn, format!("T4 plane {k}"))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((family(planes, recovered), base))
}

/// Recovers T3 against the `I* = 0` baseline, choosing `L★` directly.
pub fn recover_t3(
    s: &mut QuerySession,
    t1: &PermFamily,
    v_eq: &[u8],
    base: &[u8],
    planes: &[usize],
) -> Result<PermFamily> {
    check_planes(planes)?;
    let mn = s.mn();
    let np = planes.len();
    let n = index_bits(mn);
    let zero = vec![0u8; mn];
    let plain_for = |l_star: &[u8]| -> Result<Vec<u8>> {
        Ok(to_plain(&inverse_permute_bits(l_star, t1)?, &zero, v_eq))
    };
    let mut experiments = Vec::with_capacity(np * (n + 1));
    for &k in planes {
        experiments.push(plain_for(&vec![1u8 << k; mn])?);
    }
    for t in 0..n {
        for &k in planes {
            experiments.push(plain_for(&pattern(k, Nibble::Low, t, mn))?);
        }
    }
    let ciphers = s.submit(STAGE_T3, &experiments)?;
    let mut ws = DifferentialWorkspace::new(mn);
    for (pi, &k) in planes.iter().enumerate() {
        ws.calibrate(k, &high_diff_bit(base, &ciphers[pi], k));
    }
    let recovered = planes
        .iter()
        .enumerate()
        .map(|(pi, &k)| {
            let bits: Vec<Vec<u8>> = (0..n)
                .map(|t| {
                    let observed = high_diff_bit(base, &ciphers[np + t * np + pi], k);
                    observed
                        .iter()
                        .enumerate()
                        .map(|(i, &o)| o ^ ws.correction(k, i, ((i >> t) & 1) as u8))
                        .collect()
                })
                .collect();
            decode_permutation(&bits, mn, format!("T3 plane {k}"))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(family(planes, recovered))
}

/// Maps `★`-domain bytes back to the plain bytes that produce them.
fn star_to_plain(star: &[u8], t: [&PermFamily; 4], v_eq: &[u8]) -> Result<Vec<u8>> {
    let (l_star, h_star): (Vec<u8>, Vec<u8>) = star.iter().map(|&x| spl(x)).unzip();
    let l_hat = permute_bits(&l_star, t[2])?;
    let h_hat: Vec<u8> = h_star.iter().zip(&l_hat).map(|(a, b)| a ^ b).collect();
    let h = inverse_permute_bits(&h_hat, t[3])?;
    let h_tilde = permute_bits(&h, t[1])?;
    let l_tilde: Vec<u8> = l_star.iter().zip(&h_tilde).map(|(a, b)| a ^ b).collect();
    let l = inverse_permute_bits(&l_tilde, t[0])?;
    Ok(to_plain(&l, &h, v_eq))
}

/// Queries every constant `★` image and tabulates `F(i, I''(i)) = c`.
pub fn build_codebook(
    s: &mut QuerySession,
    t: [&PermFamily; 4],
    v_eq: &[u8],
) -> Result<Vec<u8>> {
    Ok(build_codebook_with_riders(s, t, v_eq, &[])?.0)
}

/// Builds the codebook and returns the cipher channels of `riders`, which
/// travel in the free channels of the last codebook query.
pub fn build_codebook_with_riders(
    s: &mut QuerySession,
    t: [&PermFamily; 4],
    v_eq: &[u8],
    riders: &[Vec<u8>],
) -> Result<(Vec<u8>, Vec<Vec<u8>>)> {
    let mn = s.mn();
    let experiments = (0..=255u8)
        .map(|c| star_to_plain(&vec![c; mn], t, v_eq))
        .collect::<Result<Vec<_>>>()?;
    let (ciphers, rider_ciphers) = s.submit_with_riders(STAGE_CODEBOOK, &experiments, riders)?;
    let mut table = vec![0u8; mn * 256];
    let mut seen = vec![false; mn * 256];
    for (c, cipher) in ciphers.iter().enumerate() {
        for (i, &x) in cipher.iter().enumerate() {
            let slot = i * 256 + x as usize;
            if seen[slot] {
                return Err(Error::CodebookInconsistent { pixel: i });
            }
            seen[slot] = true;
            table[slot] = c as u8;
        }
    }
    Ok((table, rider_ciphers))
}

const EQKEY_MAGIC: &[u8; 4] = b"IEQK";
const EQKEY_VERSION: u32 = 1;

/// Everything needed to decrypt without the chaotic key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EquivalentKey {
    pub height: usize,
    pub width: usize,
    pub t1: PermFamily,
    pub t2: PermFamily,
    pub t3: PermFamily,
    pub t4: PermFamily,
    /// V with bit 7 cleared.
    pub v_eq: Vec<u8>,
    /// Row `i` maps a cipher byte at pixel `i` to its `★` byte; `MN × 256`.
    pub codebook: Vec<u8>,
}

impl EquivalentKey {
    pub fn mn(&self) -> usize {
        self.height * self.width
    }

    pub fn families(&self) -> [&PermFamily; 4] {
        [&self.t1, &self.t2, &self.t3, &self.t4]
    }

    pub fn lookup(&self, pixel: usize, cipher: u8) -> u8 {
        self.codebook[pixel * 256 + cipher as usize]
    }

    pub fn validate(&self) -> Result<()> {
        let mn = self.mn();
        for (j, fam) in self.families().into_iter().enumerate() {
            for p in fam {
                if p.len() != mn {
                    return Err(Error::InvalidPermutation(format!("T{} has wrong length", j + 1)));
                }
                Permutation::from_vec(p.as_slice().to_vec())?;
            }
        }
        if self.v_eq.len() != mn || self.v_eq.iter().any(|&v| v >= 128) {
            return Err(Error::InvalidParameter("V_eq must hold MN values below 128".into()));
        }
        if self.codebook.len() != mn * 256 {
            return Err(Error::InvalidParameter("codebook must hold MN x 256 bytes".into()));
        }
        for (i, row) in self.codebook.chunks(256).enumerate() {
            let mut seen = [false; 256];
            for &c in row {
                if std::mem::replace(&mut seen[c as usize], true) {
                    return Err(Error::CodebookInconsistent { pixel: i });
                }
            }
        }
        Ok(())
    }

    /// Layout: magic, version, height, width (u32 LE), then T1..T4 planes
    /// 0..3 as u32 LE arrays, V_eq, codebook.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mn = self.mn();
        let mut out = Vec::with_capacity(16 + 64 * mn + mn + 256 * mn);
        out.extend_from_slice(EQKEY_MAGIC);
        for v in [EQKEY_VERSION, self.height as u32, self.width as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for fam in self.families() {
            for p in fam {
                for &x in p.as_slice() {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        out.extend_from_slice(&self.v_eq);
        out.extend_from_slice(&self.codebook);
        out
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("equivalent key: {m}"));
        if data.len() < 16 || &data[..4] != EQKEY_MAGIC {
            return Err(bad("missing IEQK header"));
        }
        let word = |at: usize| u32::from_le_bytes(data[at..at + 4].try_into().unwrap());
        if word(4) != EQKEY_VERSION {
            return Err(bad("unsupported version"));
        }
        let (height, width) = (word(8) as usize, word(12) as usize);
        let mn = height * width;
        if mn < 2 || data.len() != 16 + 64 * mn + mn + 256 * mn {
            return Err(bad("length does not match dimensions"));
        }
        let mut pos = 16;
        let mut next_family = || -> Result<PermFamily> {
            let planes = (0..4)
                .map(|_| {
                    let p = (0..mn).map(|i| word(pos + 4 * i)).collect();
                    pos += 4 * mn;
                    Permutation::from_vec(p)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(planes.try_into().expect("four planes"))
        };
        let t1 = next_family()?;
        let t2 = next_family()?;
        let t3 = next_family()?;
        let t4 = next_family()?;
        let rest = &data[16 + 64 * mn..];
        let key = Self {
            height,
            width,
            t1,
            t2,
            t3,
            t4,
            v_eq: rest[..mn].to_vec(),
            codebook: rest[mn..].to_vec(),
        };
        key.validate()?;
        Ok(key)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(fs::write(path, self.to_bytes())?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Decrypts any cipher-image of the attacked dimensions.
pub fn recover_plaintext(cipher: &Image, eq: &EquivalentKey) -> Result<Image> {
    if cipher.height != eq.height || cipher.width != eq.width {
        return Err(Error::DimensionMismatch {
            expected: format!("{}x{}", eq.height, eq.width),
            got: format!("{}x{}", cipher.height, cipher.width),
        });
    }
    let planes = cipher
        .channels_split()
        .iter()
        .map(|ch| {
            let star: Vec<u8> = ch.iter().enumerate().map(|(i, &c)| eq.lookup(i, c)).collect();
            star_to_plain(&star, eq.families(), &eq.v_eq)
        })
        .collect::<Result<Vec<_>>>()?;
    Image::from_channels(cipher.height, cipher.width, &planes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub height: usize,
    pub width: usize,
    pub index_bits: usize,
    #[serde(rename = "stage_T2")]
    pub stage_t2: u64,
    #[serde(rename = "stage_V")]
    pub stage_v: u64,
    #[serde(rename = "stage_T1")]
    pub stage_t1: u64,
    #[serde(rename = "stage_T4")]
    pub stage_t4: u64,
    #[serde(rename = "stage_T3")]
    pub stage_t3: u64,
    pub stage_codebook: u64,
    pub total: u64,
    pub wall_time_ms: f64,
    pub packing: bool,
    pub adaptive_vl: bool,
    /// Whether plane 1 of each permutation was queried separately.
    pub all_planes: bool,
}

impl AttackReport {
    pub fn stage_counts(&self) -> [u64; 6] {
        [
            self.stage_t2,
            self.stage_v,
            self.stage_t1,
            self.stage_t4,
            self.stage_t3,
            self.stage_codebook,
        ]
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Closed-form per-stage counts in the order T2, V, T1, T4, T3, codebook,
/// for the default three-plane attack.
pub fn expected_query_counts(mn: usize, packing: bool) -> [u64; 6] {
    expected_query_counts_for(mn, packing, &PLANES)
}

pub fn expected_query_counts_for(mn: usize, packing: bool, planes: &[usize]) -> [u64; 6] {
    let n = index_bits(mn) as u64;
    let p = planes.len() as u64;
    let q = |experiments: u64| if packing { experiments.div_ceil(3) } else { experiments };
    [
        1 + q(p * n),
        q(15) + q(3),
        q(2 * p * n),
        1 + q(p * n),
        q(p * (n + 1)),
        q(256),
    ]
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AttackOptions {
    pub packing: bool,
    /// Use the per-pixel binary search for `V_L`.
    pub adaptive_vl: bool,
    /// Query bit plane 1 of every permutation instead of copying plane 0.
    pub all_planes: bool,
}

fn in_stage<T>(s: &QuerySession, stage: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Stage {
        stage,
        queries: s.queries(stage),
        source: Box::new(e),
    })
}

pub fn run_attack(
    oracle: &mut dyn EncryptionOracle,
    packing: bool,
) -> Result<(EquivalentKey, AttackReport)> {
    run_attack_with(
        oracle,
        AttackOptions {
            packing,
            ..AttackOptions::default()
        },
    )
}

/// Known plaintexts that ride along with the last codebook query.
fn verification_images(mn: usize) -> [Vec<u8>; 2] {
    let a: Vec<u8> = (0..mn)
        .map(|i| (i.wrapping_mul(151) ^ (i >> 8).wrapping_mul(89) ^ 0x5a) as u8)
        .collect();
    let b = a.iter().map(|x| !x.rotate_left(3)).collect();
    [a, b]
}

fn attack_pass(s: &mut QuerySession, opts: AttackOptions, planes: &[usize]) -> Result<EquivalentKey> {
    let mn = s.mn();
    let r = recover_t2(s, planes);
    let (t2, zero) = in_stage(s, STAGE_T2, r)?;
    let r = recover_v(s, &t2, &zero, opts.adaptive_vl);
    let v_eq = in_stage(s, STAGE_V, r)?;
    let r = recover_t1(s, &low_nibble_of(&v_eq), planes);
    let t1 = in_stage(s, STAGE_T1, r)?;
    let r = recover_t4(s, &t1, &t2, &v_eq, planes);
    let (t4, base) = in_stage(s, STAGE_T4, r)?;
    let r = recover_t3(s, &t1, &v_eq, &base, planes);
    let t3 = in_stage(s, STAGE_T3, r)?;
    let riders = verification_images(mn);
    let r = build_codebook_with_riders(s, [&t1, &t2, &t3, &t4], &v_eq, &riders);
    let (codebook, rider_ciphers) = in_stage(s, STAGE_CODEBOOK, r)?;
    let key = EquivalentKey {
        height: s.height,
        width: s.width,
        t1,
        t2,
        t3,
        t4,
        v_eq,
        codebook,
    };
    let wrong = riders
        .iter()
        .zip(&rider_ciphers)
        .filter(|(plain, cipher)| {
            let star: Vec<u8> = cipher.iter().enumerate().map(|(i, &c)| key.lookup(i, c)).collect();
            star_to_plain(&star, key.families(), &key.v_eq).ok().as_ref() != Some(*plain)
        })
        .count();
    if wrong > 0 {
        let r = Err(Error::VerificationFailed { failed: wrong });
        return in_stage(s, STAGE_CODEBOOK, r);
    }
    Ok(key)
}

fn is_recoverable(e: &Error) -> bool {
    match e {
        Error::Stage { source, .. } => matches!(
            **source,
            Error::NonBijectiveRecovery { .. }
                | Error::CodebookInconsistent { .. }
                | Error::VerificationFailed { .. }
        ),
        _ => false,
    }
}

/// Runs every stage. The default pass copies plane 0 of each permutation into
/// plane 1; if that pass fails or its key does not decrypt the known
/// plaintexts riding in the last codebook query, the attack restarts and
/// queries all four planes.
pub fn run_attack_with(
    oracle: &mut dyn EncryptionOracle,
    opts: AttackOptions,
) -> Result<(EquivalentKey, AttackReport)> {
    let start = Instant::now();
    let (height, width) = oracle.dims();
    if height * width < 2 {
        return Err(Error::InvalidParameter("oracle reports fewer than two pixels".into()));
    }
    let mut s = QuerySession::new(oracle, opts.packing);
    let mut all_planes = opts.all_planes;
    let key = if all_planes {
        attack_pass(&mut s, opts, &ALL_PLANES)?
    } else {
        match attack_pass(&mut s, opts, &PLANES) {
            Ok(key) => key,
            Err(e) if is_recoverable(&e) => {
                all_planes = true;
                attack_pass(&mut s, opts, &ALL_PLANES)?
            }
            Err(e) => return Err(e),
        }
    };

    let counts = [STAGE_T2, STAGE_V, STAGE_T1, STAGE_T4, STAGE_T3, STAGE_CODEBOOK]
        .map(|st| s.queries(st));
    let report = AttackReport {
        height,
        width,
        index_bits: index_bits(height * width),
        stage_t2: counts[0],
        stage_v: counts[1],
        stage_t1: counts[2],
        stage_t4: counts[3],
        stage_t3: counts[4],
        stage_codebook: counts[5],
        total: counts.iter().sum(),
        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
        packing: opts.packing,
        adaptive_vl: opts.adaptive_vl,
        all_planes,
    };
    Ok((key, report))
}
