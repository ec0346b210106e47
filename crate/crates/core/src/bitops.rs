//! Nibble, bit-plane and modular-arithmetic primitives.
//!
//! Pixel bytes are `u8`; nibbles are carried in `u8` with the upper four bits
//! clear. Width parameters are always explicit.

/// Width of a nibble in bits.
pub const NIBBLE_BITS: u32 = 4;
/// Width of a byte in bits.
pub const BYTE_BITS: u32 = 8;

/// Splits a byte into its low and high nibble.
#[inline]
pub fn spl(x: u8) -> (u8, u8) {
    (x & 0x0f, x >> 4)
}

/// Joins two nibbles back into a byte, `low + 16 * high`.
#[inline]
pub fn combine(low: u8, high: u8) -> u8 {
    debug_assert!(low < 16 && high < 16, "nibble out of range");
    low | (high << 4)
}

/// Returns the `k`-th least significant bit of `x`.
///
/// Panics when `k` is not below the width of a byte.
#[inline]
pub fn bit(x: u8, k: u32) -> u8 {
    assert!(k < BYTE_BITS, "bit index {k} out of range");
    (x >> k) & 1
}

/// Returns the `k`-th bit of a nibble. Panics for `k >= 4` or a non-nibble `x`.
#[inline]
pub fn nibble_bit(x: u8, k: u32) -> u8 {
    assert!(x < 16, "{x} is not a nibble");
    assert!(k < NIBBLE_BITS, "bit index {k} out of range for a nibble");
    (x >> k) & 1
}

#[inline]
fn check_width(a: u32, b: u32, width: u32) -> u32 {
    assert!((1..32).contains(&width), "unsupported width {width}");
    let modulus = 1u32 << width;
    assert!(a < modulus && b < modulus, "operands ({a}, {b}) exceed width {width}");
    modulus - 1
}

/// `(a + b) mod 2^width`.
#[inline]
pub fn boxplus(a: u32, b: u32, width: u32) -> u32 {
    let mask = check_width(a, b, width);
    a.wrapping_add(b) & mask
}

/// `(a - b) mod 2^width`.
#[inline]
pub fn boxminus(a: u32, b: u32, width: u32) -> u32 {
    let mask = check_width(a, b, width);
    a.wrapping_sub(b) & mask
}

/// Byte-width modular addition.
#[inline]
pub fn add8(a: u8, b: u8) -> u8 {
    a.wrapping_add(b)
}

/// Byte-width modular subtraction.
#[inline]
pub fn sub8(a: u8, b: u8) -> u8 {
    a.wrapping_sub(b)
}

/// Nibble-width modular addition.
#[inline]
pub fn add4(a: u8, b: u8) -> u8 {
    boxplus(a as u32, b as u32, NIBBLE_BITS) as u8
}

/// Nibble-width modular subtraction.
#[inline]
pub fn sub4(a: u8, b: u8) -> u8 {
    boxminus(a as u32, b as u32, NIBBLE_BITS) as u8
}

/// Carry out of the low nibble when adding `l + v`.
#[inline]
pub fn carry_low_to_high(l: u8, v: u8) -> u8 {
    debug_assert!(l < 16 && v < 16);
    (l + v) >> 4
}
