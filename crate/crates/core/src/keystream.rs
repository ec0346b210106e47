//! Keystream derivation: plaintext channel sums and the control parameter feed
//! two orbits of the map, which are quantized into the masking sequences and
//! sorted into the bit-plane permutation families.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lclm::{self, MapParams, State};

/// Transient iterations dropped before any output is taken.
pub const DISCARD: usize = 250;

const SUM_SCALE: f64 = 1e9;

/// Per-channel pixel sums of a plain-image (red, green, blue).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChannelSums {
    pub r: u64,
    pub g: u64,
    pub b: u64,
}

impl ChannelSums {
    pub const fn new(r: u64, g: u64, b: u64) -> Self {
        Self { r, g, b }
    }
}

impl fmt::Display for ChannelSums {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{}", self.r, self.g, self.b)
    }
}

impl FromStr for ChannelSums {
    type Err = Error;

    /// Parses `r,g,b`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        let bad = || Error::InvalidParameter(format!("expected sums as r,g,b, got {s:?}"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let v = parts
            .iter()
            .map(|p| p.parse::<u64>().map_err(|_| bad()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::new(v[0], v[1], v[2]))
    }
}

/// The control parameter together with the plaintext-derived sums.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyMaterial {
    pub b: f64,
    pub sums: ChannelSums,
}

impl KeyMaterial {
    pub fn new(b: f64, sums: ChannelSums) -> Result<Self> {
        lclm::validate_cipher_b(b)?;
        Ok(Self { b, sums })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialConditions {
    pub k1: State,
    pub k2: State,
}

pub fn derive_initial_conditions(s: ChannelSums) -> InitialConditions {
    let xr = s.r as f64 / SUM_SCALE;
    let yg = s.g as f64 / SUM_SCALE;
    let zb = s.b as f64 / SUM_SCALE;
    InitialConditions {
        k1: State::new(0.2 + xr, 0.4 + yg, 0.1 + zb),
        k2: State::new(0.3 + xr, 0.5 + yg, 0.2 + zb),
    }
}

/// `floor(|x| * 10^15) mod 16`.
pub fn quantize_u(x: f64) -> u8 {
    let v = (x.abs() * 1e15).floor();
    (v % 16.0) as u8
}

/// `floor(Dec(x) * 10^3) mod 256` with `Dec(x) = x*10^3 - floor(x*10^3)`.
pub fn quantize_vw(x: f64) -> u8 {
    let t = x * 1e3;
    let dec = t - t.floor();
    ((dec * 1e3).floor() % 256.0) as u8
}

/// A bijection on `0..len`, stored as the image of each index.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<u32>", into = "Vec<u32>")]
pub struct Permutation(Vec<u32>);

impl Permutation {
    pub fn identity(len: usize) -> Self {
        Self((0..len as u32).collect())
    }

    /// Validates that `entries` is a bijection on `0..entries.len()`.
    pub fn from_vec(entries: Vec<u32>) -> Result<Self> {
        let n = entries.len();
        let mut seen = vec![false; n];
        for (i, &e) in entries.iter().enumerate() {
            let slot = seen.get_mut(e as usize).ok_or_else(|| {
                Error::InvalidPermutation(format!("entry {e} at {i} out of range 0..{n}"))
            })?;
            if *slot {
                return Err(Error::InvalidPermutation(format!("entry {e} repeated")));
            }
            *slot = true;
        }
        Ok(Self(entries))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    #[inline]
    pub fn get(&self, i: usize) -> usize {
        self.0[i] as usize
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0u32; self.0.len()];
        for (i, &t) in self.0.iter().enumerate() {
            inv[t as usize] = i as u32;
        }
        Self(inv)
    }

    /// Cyclic shift `i -> (i + shift) mod len`.
    pub fn rotation(len: usize, shift: usize) -> Self {
        Self((0..len).map(|i| ((i + shift) % len) as u32).collect())
    }
}

impl TryFrom<Vec<u32>> for Permutation {
    type Error = Error;

    fn try_from(v: Vec<u32>) -> Result<Self> {
        Self::from_vec(v)
    }
}

impl From<Permutation> for Vec<u32> {
    fn from(p: Permutation) -> Self {
        p.0
    }
}

/// One permutation per bit-plane of a nibble.
pub type PermFamily = [Permutation; 4];

pub fn identity_family(len: usize) -> PermFamily {
    std::array::from_fn(|_| Permutation::identity(len))
}

/// Indices of `seq` in ascending order of value, ties broken by index:
/// entry `r` is the position of the `r`-th smallest element.
///
/// This is the permutation the keystream uses for bit-plane scrambling.
pub fn order_permutation(seq: &[f64]) -> Permutation {
    let mut order: Vec<u32> = (0..seq.len() as u32).collect();
    order.sort_by(|&a, &b| seq[a as usize].total_cmp(&seq[b as usize]));
    Permutation(order)
}

/// Ascending 0-based rank of every element, ties broken by index. This is the
/// inverse of [`order_permutation`].
pub fn rank_permutation(seq: &[f64]) -> Permutation {
    order_permutation(seq).inverse()
}

/// All pseudo-random material controlling one encryption.
///
/// `u`, `v`, `w`, `t1`, `t2` come from the first initial condition and the
/// primed counterparts `u2`, `v2`, `w2`, `t3`, `t4` from the second.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Keystream {
    pub u: Vec<u8>,
    pub v: Vec<u8>,
    pub w: Vec<u8>,
    pub u2: Vec<u8>,
    pub v2: Vec<u8>,
    pub w2: Vec<u8>,
    pub t1: PermFamily,
    pub t2: PermFamily,
    pub t3: PermFamily,
    pub t4: PermFamily,
}

struct HalfStream {
    u: Vec<u8>,
    v: Vec<u8>,
    w: Vec<u8>,
    first: PermFamily,
    second: PermFamily,
}

fn half_stream(k: State, p: MapParams, mn: usize) -> Result<HalfStream> {
    let orbit = lclm::orbit(k, p, 2 * mn, DISCARD)?;
    let g: Vec<f64> = (0..2 * mn)
        .map(|i| (orbit.x[i] + orbit.y[i] + orbit.z[i]) / 3.0)
        .collect();
    let u = orbit.x[..mn].iter().map(|&x| quantize_u(x)).collect();
    let v = orbit.y[..mn].iter().map(|&y| quantize_vw(y)).collect();
    let w = orbit.z[..mn].iter().map(|&z| quantize_vw(z)).collect();
    let sources: [&[f64]; 4] = [&orbit.x, &orbit.y, &orbit.z, &g];
    let first = sources.map(|s| order_permutation(&s[..mn]));
    let second = sources.map(|s| order_permutation(&s[mn..]));
    Ok(HalfStream {
        u,
        v,
        w,
        first,
        second,
    })
}

/// Derives the keystream for an image of `mn` pixels per channel.
pub fn generate_keystream(k: &KeyMaterial, mn: usize) -> Result<Keystream> {
    if mn == 0 {
        return Err(Error::InvalidParameter("pixel count must be positive".into()));
    }
    let p = MapParams::new(k.b);
    let init = derive_initial_conditions(k.sums);
    let a = half_stream(init.k1, p, mn)?;
    let b = half_stream(init.k2, p, mn)?;
    Ok(Keystream {
        u: a.u,
        v: a.v,
        w: a.w,
        u2: b.u,
        v2: b.v,
        w2: b.w,
        t1: a.first,
        t2: a.second,
        t3: b.first,
        t4: b.second,
    })
}

impl Keystream {
    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn families(&self) -> [&PermFamily; 4] {
        [&self.t1, &self.t2, &self.t3, &self.t4]
    }

    /// Checks lengths, value ranges and that every permutation has the right size.
    pub fn validate(&self) -> Result<()> {
        let n = self.u.len();
        let seqs = [&self.u, &self.v, &self.w, &self.u2, &self.v2, &self.w2];
        if seqs.iter().any(|s| s.len() != n) {
            return Err(Error::DimensionMismatch {
                expected: format!("{n} keystream elements"),
                got: "sequences of unequal length".into(),
            });
        }
        if self.u.iter().chain(&self.u2).any(|&x| x > 15) {
            return Err(Error::InvalidParameter("U sequences must hold nibbles".into()));
        }
        for fam in self.families() {
            if fam.iter().any(|t| t.len() != n) {
                return Err(Error::InvalidPermutation(format!(
                    "permutation length differs from {n}"
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let ks: Keystream = serde_json::from_str(s)?;
        ks.validate()?;
        Ok(ks)
    }

    /// Keystream whose masks are zero and whose permutations are identities.
    pub fn trivial(mn: usize) -> Self {
        Self {
            u: vec![0; mn],
            v: vec![0; mn],
            w: vec![0; mn],
            u2: vec![0; mn],
            v2: vec![0; mn],
            w2: vec![0; mn],
            t1: identity_family(mn),
            t2: identity_family(mn),
            t3: identity_family(mn),
            t4: identity_family(mn),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn initial_conditions() {
        let ic = derive_initial_conditions(ChannelSums::new(0, 0, 0));
        assert_eq!(ic.k1, State::new(0.2, 0.4, 0.1));
        assert_eq!(ic.k2, State::new(0.3, 0.5, 0.2));

        let ic = derive_initial_conditions(ChannelSums::new(29676, 9202, 62299));
        assert!((ic.k1.x - 0.200029676).abs() < 1e-16);
        assert!((ic.k1.y - 0.400009202).abs() < 1e-16);
        assert!((ic.k1.z - 0.100062299).abs() < 1e-16);

        let a = derive_initial_conditions(ChannelSums::new(1000, 0, 0));
        let b = derive_initial_conditions(ChannelSums::new(1001, 0, 0));
        assert!(((b.k1.x - a.k1.x) - 1e-9).abs() < 1e-15);
    }

    #[test]
    fn quantize_u_examples() {
        assert_eq!(quantize_u(0.0), 0);
        assert_eq!(quantize_u(17e-15), 1);
        // The double nearest 0.3582 is 0.35820000000000001838..., so
        // floor(x * 1e15) = 358200000000000 = 16 * 22387500000000.
        assert_eq!(quantize_u(0.3582), 0);
        assert_eq!(quantize_u(-17e-15), 1);
    }

    #[test]
    fn quantize_vw_examples() {
        assert_eq!(quantize_vw(0.0), 0);
        // Dec = 0.456789 -> floor(456.789) = 456 -> 200.
        assert_eq!(quantize_vw(0.123456789), 200);
        // x*1e3 = -1.5, floor = -2, Dec = 0.5 -> 500 mod 256 = 244.
        assert_eq!(quantize_vw(-0.0015), 244);
    }

    #[test]
    fn rank_examples() {
        assert_eq!(rank_permutation(&[3.1, 1.2, 2.5]).as_slice(), &[2, 0, 1]);
        assert_eq!(rank_permutation(&[1.0, 1.0, 2.0]).as_slice(), &[0, 1, 2]);
        let inc: Vec<f64> = (0..50).map(|i| i as f64 * 0.5 - 3.0).collect();
        assert_eq!(rank_permutation(&inc), Permutation::identity(50));
    }

    #[test]
    fn order_examples() {
        assert_eq!(order_permutation(&[3.1, 1.2, 2.5]).as_slice(), &[1, 2, 0]);
        assert_eq!(order_permutation(&[1.0, 1.0, 2.0]).as_slice(), &[0, 1, 2]);
        let seq = [0.5, -1.0, 7.0, 0.25, 0.5];
        assert_eq!(order_permutation(&seq).inverse(), rank_permutation(&seq));
    }

    #[test]
    fn permutation_validation() {
        assert!(Permutation::from_vec(vec![1, 0, 2]).is_ok());
        assert!(Permutation::from_vec(vec![1, 1, 2]).is_err());
        assert!(Permutation::from_vec(vec![0, 3, 1]).is_err());
        let p = Permutation::from_vec(vec![2, 0, 3, 1]).unwrap();
        let inv = p.inverse();
        for i in 0..4 {
            assert_eq!(inv.get(p.get(i)), i);
        }
        assert!(serde_json::from_str::<Permutation>("[0,0]").is_err());
    }

    /// Straight-line re-derivation of the keystream, kept independent of the
    /// module's helpers: its own iteration loop, quantizers and ranking.
    fn reference_keystream(b: f64, mn: usize) -> Keystream {
        fn run(mut s: (f64, f64, f64), b: f64, mn: usize) -> [Vec<f64>; 4] {
            let (mut xs, mut ys, mut zs, mut gs) = (vec![], vec![], vec![], vec![]);
            for i in 0..(2 * mn + 250) {
                let (x, y, z) = s;
                s = (b * x * (1.0 - z), b * y * (1.0 - z), 2.0 * x * x + y * y);
                if i >= 250 {
                    xs.push(s.0);
                    ys.push(s.1);
                    zs.push(s.2);
                    gs.push((s.0 + s.1 + s.2) / 3.0);
                }
            }
            [xs, ys, zs, gs]
        }
        // Position of the r-th smallest element, found by counting ranks.
        fn order(v: &[f64]) -> Vec<u32> {
            let mut out = vec![0u32; v.len()];
            for i in 0..v.len() {
                let rank = v
                    .iter()
                    .enumerate()
                    .filter(|&(j, &e)| e < v[i] || (e == v[i] && j < i))
                    .count();
                out[rank] = i as u32;
            }
            out
        }
        fn dec(x: f64) -> f64 {
            x * 1000.0 - (x * 1000.0).floor()
        }
        let mut out = Keystream::trivial(mn);
        for (half, start) in [(0usize, (0.2, 0.4, 0.1)), (1, (0.3, 0.5, 0.2))] {
            let [xs, ys, zs, gs] = run(start, b, mn);
            let u: Vec<u8> = (0..mn)
                .map(|i| ((xs[i].abs() * 1e15).floor() as u64 % 16) as u8)
                .collect();
            let v: Vec<u8> = (0..mn)
                .map(|i| ((dec(ys[i]) * 1000.0).floor() as u64 % 256) as u8)
                .collect();
            let w: Vec<u8> = (0..mn)
                .map(|i| ((dec(zs[i]) * 1000.0).floor() as u64 % 256) as u8)
                .collect();
            let srcs = [&xs, &ys, &zs, &gs];
            let first: PermFamily =
                std::array::from_fn(|m| Permutation::from_vec(order(&srcs[m][..mn])).unwrap());
            let second: PermFamily =
                std::array::from_fn(|m| Permutation::from_vec(order(&srcs[m][mn..])).unwrap());
            if half == 0 {
                (out.u, out.v, out.w, out.t1, out.t2) = (u, v, w, first, second);
            } else {
                (out.u2, out.v2, out.w2, out.t3, out.t4) = (u, v, w, first, second);
            }
        }
        out
    }

    #[test]
    fn matches_straight_line_reference() {
        let key = KeyMaterial::new(1.99, ChannelSums::default()).unwrap();
        let ks = generate_keystream(&key, 16).unwrap();
        assert_eq!(ks, reference_keystream(1.99, 16));
    }

    #[test]
    fn plane_zero_and_one_permutations_coincide() {
        let key = KeyMaterial::new(1.87, ChannelSums::new(12345, 678, 91011)).unwrap();
        let ks = generate_keystream(&key, 1024).unwrap();
        for fam in ks.families() {
            assert_eq!(fam[0], fam[1]);
        }
    }

    #[test]
    fn deterministic_and_json_round_trip() {
        let key = KeyMaterial::new(1.75, ChannelSums::new(1, 2, 3)).unwrap();
        let a = generate_keystream(&key, 64).unwrap();
        let b = generate_keystream(&key, 64).unwrap();
        assert_eq!(a, b);
        let back = Keystream::from_json(&a.to_json().unwrap()).unwrap();
        assert_eq!(a, back);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(KeyMaterial::new(2.0, ChannelSums::default()).is_err());
        let key = KeyMaterial::new(1.9, ChannelSums::default()).unwrap();
        assert!(generate_keystream(&key, 0).is_err());
        let mut ks = Keystream::trivial(4);
        ks.v.pop();
        assert!(ks.validate().is_err());
    }

    #[test]
    fn sums_parse_and_print() {
        let s: ChannelSums = "29676, 9202,62299".parse().unwrap();
        assert_eq!(s, ChannelSums::new(29676, 9202, 62299));
        assert_eq!(s.to_string().parse::<ChannelSums>().unwrap(), s);
        assert!("1,2".parse::<ChannelSums>().is_err());
        assert!("1,2,x".parse::<ChannelSums>().is_err());
    }
}
