//! IEALM encryption and decryption.
//!
//! Per channel, with all keystream sequences indexed by pixel:
//!
//! ```text
//! I*  = I ⊞ V
//! I** = W ⊕ I*                          (L**, H**) = Spl(I**)
//! L'  = U  ⊕ P(L**, T1) ⊕ P(H**, T2)
//! H'  = U' ⊕ P(L',  T3) ⊕ P(H**, T4)
//! I'' = W' ⊕ ((L' + 16 H') ⊞ V')
//! ```
//!
//! `P(x, T)` gathers bit-plane `k` of pixel `i` from pixel `T_k(i)`. Every
//! channel of an image is encrypted with the same keystream.

use serde::{Deserialize, Serialize};

use crate::bitops::{add8, combine, spl, sub8};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::keystream::{generate_keystream, ChannelSums, KeyMaterial, Keystream, PermFamily};
use crate::lclm::validate_cipher_b;

fn check_family(len: usize, t: &PermFamily) -> Result<()> {
    for (k, p) in t.iter().enumerate() {
        if p.len() != len {
            return Err(Error::InvalidPermutation(format!(
                "plane {k} permutation has length {}, data has {len}",
                p.len()
            )));
        }
    }
    Ok(())
}

/// `out(i) = Σ_k bit_k(nibbles(T_k(i))) · 2^k`.
pub fn permute_bits(nibbles: &[u8], t: &PermFamily) -> Result<Vec<u8>> {
    check_family(nibbles.len(), t)?;
    let mut out = vec![0u8; nibbles.len()];
    for (k, perm) in t.iter().enumerate() {
        let mask = 1u8 << k;
        for (o, &src) in out.iter_mut().zip(perm.as_slice()) {
            *o |= nibbles[src as usize] & mask;
        }
    }
    Ok(out)
}

/// Inverse of [`permute_bits`] for the same family.
pub fn inverse_permute_bits(nibbles: &[u8], t: &PermFamily) -> Result<Vec<u8>> {
    check_family(nibbles.len(), t)?;
    let mut out = vec![0u8; nibbles.len()];
    for (k, perm) in t.iter().enumerate() {
        let mask = 1u8 << k;
        for (&x, &dst) in nibbles.iter().zip(perm.as_slice()) {
            out[dst as usize] |= x & mask;
        }
    }
    Ok(out)
}

fn xor3(a: &[u8], b: &[u8], c: &[u8]) -> Vec<u8> {
    a.iter().zip(b).zip(c).map(|((x, y), z)| x ^ y ^ z).collect()
}

/// Every intermediate buffer of one channel's encryption.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CipherTrace {
    pub plain: Vec<u8>,
    /// `I ⊞ V`
    pub added: Vec<u8>,
    /// `W ⊕ I*`
    pub masked: Vec<u8>,
    pub low: Vec<u8>,
    pub high: Vec<u8>,
    /// `P(L**, T1)`
    pub low_permuted: Vec<u8>,
    /// `P(H**, T2)`
    pub high_permuted_t2: Vec<u8>,
    /// `L'`
    pub low_mixed: Vec<u8>,
    /// `P(L', T3)`
    pub low_mixed_permuted: Vec<u8>,
    /// `P(H**, T4)`
    pub high_permuted_t4: Vec<u8>,
    /// `H'`
    pub high_mixed: Vec<u8>,
    /// `L' + 16 H'`
    pub combined: Vec<u8>,
    pub cipher: Vec<u8>,
}

fn check_len(data: &[u8], ks: &Keystream) -> Result<()> {
    if data.len() != ks.len() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} pixels", ks.len()),
            got: format!("{} pixels", data.len()),
        });
    }
    Ok(())
}

/// Encrypts one channel, keeping every intermediate buffer.
pub fn encrypt_channel(plain: &[u8], ks: &Keystream) -> Result<CipherTrace> {
    check_len(plain, ks)?;
    let added: Vec<u8> = plain.iter().zip(&ks.v).map(|(&p, &v)| add8(p, v)).collect();
    let masked: Vec<u8> = added.iter().zip(&ks.w).map(|(&a, &w)| a ^ w).collect();
    let (low, high): (Vec<u8>, Vec<u8>) = masked.iter().map(|&x| spl(x)).unzip();
    let low_permuted = permute_bits(&low, &ks.t1)?;
    let high_permuted_t2 = permute_bits(&high, &ks.t2)?;
    let low_mixed = xor3(&ks.u, &low_permuted, &high_permuted_t2);
    let low_mixed_permuted = permute_bits(&low_mixed, &ks.t3)?;
    let high_permuted_t4 = permute_bits(&high, &ks.t4)?;
    let high_mixed = xor3(&ks.u2, &low_mixed_permuted, &high_permuted_t4);
    let combined: Vec<u8> = low_mixed
        .iter()
        .zip(&high_mixed)
        .map(|(&l, &h)| combine(l, h))
        .collect();
    let cipher = combined
        .iter()
        .zip(&ks.v2)
        .zip(&ks.w2)
        .map(|((&c, &v), &w)| w ^ add8(c, v))
        .collect();
    Ok(CipherTrace {
        plain: plain.to_vec(),
        added,
        masked,
        low,
        high,
        low_permuted,
        high_permuted_t2,
        low_mixed,
        low_mixed_permuted,
        high_permuted_t4,
        high_mixed,
        combined,
        cipher,
    })
}

/// Encrypts one channel, returning only the cipher bytes.
pub fn encrypt_bytes(plain: &[u8], ks: &Keystream) -> Result<Vec<u8>> {
    Ok(encrypt_channel(plain, ks)?.cipher)
}

pub fn decrypt_channel(cipher: &[u8], ks: &Keystream) -> Result<Vec<u8>> {
    check_len(cipher, ks)?;
    let (low_mixed, high_mixed): (Vec<u8>, Vec<u8>) = cipher
        .iter()
        .zip(&ks.v2)
        .zip(&ks.w2)
        .map(|((&c, &v), &w)| spl(sub8(c ^ w, v)))
        .unzip();
    let high_t4 = xor3(&high_mixed, &ks.u2, &permute_bits(&low_mixed, &ks.t3)?);
    let high = inverse_permute_bits(&high_t4, &ks.t4)?;
    let low_t1 = xor3(&low_mixed, &ks.u, &permute_bits(&high, &ks.t2)?);
    let low = inverse_permute_bits(&low_t1, &ks.t1)?;
    Ok(low
        .iter()
        .zip(&high)
        .zip(ks.w.iter().zip(&ks.v))
        .map(|((&l, &h), (&w, &v))| sub8(combine(l, h) ^ w, v))
        .collect())
}

/// How the channel sums feeding the keystream are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SumsMode {
    /// Computed from the image being encrypted.
    Faithful,
    /// Supplied by the caller.
    Frozen(ChannelSums),
}

/// Applies one keystream to every channel of `img`.
pub fn encrypt_image_with(img: &Image, ks: &Keystream) -> Result<Image> {
    map_channels(img, ks, encrypt_bytes)
}

pub fn decrypt_image_with(img: &Image, ks: &Keystream) -> Result<Image> {
    map_channels(img, ks, decrypt_channel)
}

fn map_channels(
    img: &Image,
    ks: &Keystream,
    f: fn(&[u8], &Keystream) -> Result<Vec<u8>>,
) -> Result<Image> {
    let planes = img
        .channels_split()
        .iter()
        .map(|p| f(p, ks))
        .collect::<Result<Vec<_>>>()?;
    Image::from_channels(img.height, img.width, &planes)
}

/// Encrypts an RGB image under control parameter `b`.
pub fn encrypt_rgb(img: &Image, b: f64, mode: SumsMode) -> Result<Image> {
    require_rgb(img)?;
    encrypt_image(img, b, mode)
}

pub fn decrypt_rgb(img: &Image, b: f64, sums: ChannelSums) -> Result<Image> {
    require_rgb(img)?;
    decrypt_image(img, b, sums)
}

/// Like [`encrypt_rgb`] but also accepts single-channel images, whose sum is
/// used for all three key components.
pub fn encrypt_image(img: &Image, b: f64, mode: SumsMode) -> Result<Image> {
    validate_cipher_b(b)?;
    let sums = match mode {
        SumsMode::Faithful => img.channel_sums(),
        SumsMode::Frozen(s) => s,
    };
    let ks = generate_keystream(&KeyMaterial::new(b, sums)?, img.pixel_count())?;
    encrypt_image_with(img, &ks)
}

pub fn decrypt_image(img: &Image, b: f64, sums: ChannelSums) -> Result<Image> {
    let ks = generate_keystream(&KeyMaterial::new(b, sums)?, img.pixel_count())?;
    decrypt_image_with(img, &ks)
}

fn require_rgb(img: &Image) -> Result<()> {
    if img.channels != 3 {
        return Err(Error::DimensionMismatch {
            expected: "3 channels".into(),
            got: format!("{} channels", img.channels),
        });
    }
    Ok(())
}
