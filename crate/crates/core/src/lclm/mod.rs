//! The 2D lag-complex Logistic map.
//!
//! ```text
//! x(i+1) = b * x(i) * (1 - z(i))
//! y(i+1) = b * y(i) * (1 - z(i))
//! z(i+1) = a * x(i)^2 + y(i)^2
//! ```
//!
//! Everything here runs in `f64` with the expression order above; the keystream
//! generator and the attack's ground truth both depend on that being stable.

pub mod graph;

pub use graph::{
    build_functional_graph, graph_stats, quantized_step, CycleStructure, FunctionalGraph,
    GraphStats, QuantizedMapConfig, Quantizer, Rational,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower bound of the control parameter accepted for encryption.
pub const B_MIN: f64 = 1.69;
/// Exclusive upper bound of the control parameter accepted for encryption.
pub const B_MAX: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapParams {
    pub a: f64,
    pub b: f64,
}

impl MapParams {
    /// Parameters with the fixed coupling `a = 2`. Any finite `b` is accepted;
    /// use [`MapParams::for_cipher`] when the value must lie in the cipher's range.
    pub fn new(b: f64) -> Self {
        Self { a: 2.0, b }
    }

    pub fn for_cipher(b: f64) -> Result<Self> {
        validate_cipher_b(b)?;
        Ok(Self::new(b))
    }
}

/// Checks `1.69 <= b < 2`.
pub fn validate_cipher_b(b: f64) -> Result<()> {
    if b.is_finite() && (B_MIN..B_MAX).contains(&b) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "control parameter b = {b} outside [{B_MIN}, {B_MAX})"
        )))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl State {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

/// One iteration of the map.
pub fn step(s: State, p: MapParams) -> Result<State> {
    let next = step_unchecked(s, p);
    if next.is_finite() {
        Ok(next)
    } else {
        Err(Error::DivergentOrbit { index: 1 })
    }
}

#[inline]
fn step_unchecked(s: State, p: MapParams) -> State {
    let damp = 1.0 - s.z;
    State {
        x: p.b * s.x * damp,
        y: p.b * s.y * damp,
        z: p.a * (s.x * s.x) + s.y * s.y,
    }
}

/// Decoupled form of the map: each coordinate depends only on its own two
/// previous values, given the orbit's invariant ratio `x(0) / y(0)`.
///
/// `prev` is `(s(i-1), s(i))` and the result is `s(i+1)`. The x-line uses the
/// coefficient `a + (y(0)/x(0))^2`, which is what substituting `y = x / ratio`
/// into `z = a x^2 + y^2` gives.
pub fn step_decoupled(prev: (State, State), p: MapParams, ratio: f64) -> Result<State> {
    if !ratio.is_finite() || ratio == 0.0 {
        return Err(Error::RatioUndefined);
    }
    let (before, current) = prev;
    let inv = 1.0 / ratio;
    let x = p.b * current.x * (1.0 - (p.a + inv * inv) * before.x * before.x);
    let y = p.b * current.y * (1.0 - (p.a * ratio * ratio + 1.0) * before.y * before.y);
    let damp = 1.0 - before.z;
    let z = p.b * p.b * current.z * damp * damp;
    Ok(State { x, y, z })
}

/// The three coordinate sequences of an orbit segment.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Orbit {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
}

impl Orbit {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

/// Iterates `keep + discard` times from `k` and returns iterates
/// `discard + 1 ..= discard + keep`. The initial state is never emitted.
pub fn orbit(k: State, p: MapParams, keep: usize, discard: usize) -> Result<Orbit> {
    let mut out = Orbit {
        x: Vec::with_capacity(keep),
        y: Vec::with_capacity(keep),
        z: Vec::with_capacity(keep),
    };
    let mut s = k;
    for index in 1..=keep + discard {
        s = step_unchecked(s, p);
        if !s.is_finite() {
            return Err(Error::DivergentOrbit { index });
        }
        if index > discard {
            out.x.push(s.x);
            out.y.push(s.y);
            out.z.push(s.z);
        }
    }
    Ok(out)
}
