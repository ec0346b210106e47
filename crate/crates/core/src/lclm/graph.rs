//! Functional graphs of the decoupled z-line under fixed-point arithmetic.
//!
//! A state is the pair `(z(i-1), z(i))`, each quantized to `n` fractional bits,
//! so the graph has `2^(2n)` nodes. Node `(i, j)` stands for
//! `(i / 2^n, j / 2^n)` and has id `i * 2^n + j`. The successor of `(u, v)` is
//! `(v, w)` with `w = Q(b^2 * v * (2^n - u)^2 / 2^(2n)) mod 2^n`, computed in
//! exact integer arithmetic from a rational `b`.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported fractional precision.
pub const MAX_BITS: u32 = 16;
/// Numerator and denominator of `b` must stay below this bound so the
/// successor computation fits in `u128`.
pub const MAX_RATIONAL_PART: u64 = 1 << 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quantizer {
    Floor,
    /// Round half away from zero.
    Round,
    Ceil,
}

impl Quantizer {
    pub const ALL: [Quantizer; 3] = [Quantizer::Floor, Quantizer::Round, Quantizer::Ceil];

    pub fn name(self) -> &'static str {
        match self {
            Quantizer::Floor => "floor",
            Quantizer::Round => "round",
            Quantizer::Ceil => "ceil",
        }
    }

    /// Applies the rule to the non-negative rational `num / den`.
    fn apply(self, num: u128, den: u128) -> u128 {
        match self {
            Quantizer::Floor => num / den,
            Quantizer::Round => (2 * num + den) / (2 * den),
            Quantizer::Ceil => num.div_ceil(den),
        }
    }
}

impl FromStr for Quantizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "floor" => Ok(Quantizer::Floor),
            "round" => Ok(Quantizer::Round),
            "ceil" => Ok(Quantizer::Ceil),
            other => Err(Error::InvalidParameter(format!("unknown quantizer {other:?}"))),
        }
    }
}

impl fmt::Display for Quantizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A non-negative rational control parameter, e.g. `511/256` or `1.99`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rational {
    pub num: u64,
    pub den: u64,
}

impl Rational {
    pub fn new(num: u64, den: u64) -> Result<Self> {
        if den == 0 {
            return Err(Error::InvalidParameter("zero denominator".into()));
        }
        if num >= MAX_RATIONAL_PART || den >= MAX_RATIONAL_PART {
            return Err(Error::InvalidParameter(format!(
                "rational {num}/{den} exceeds the supported magnitude (< 2^24)"
            )));
        }
        Ok(Self { num, den })
    }

    pub fn to_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl FromStr for Rational {
    type Err = Error;

    /// Accepts `p/q` or a plain decimal such as `1.99`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidParameter(format!("cannot parse {s:?} as a rational"));
        let s = s.trim();
        if let Some((p, q)) = s.split_once('/') {
            let p = p.trim().parse::<u64>().map_err(|_| bad())?;
            let q = q.trim().parse::<u64>().map_err(|_| bad())?;
            return Rational::new(p, q);
        }
        let (int, frac) = s.split_once('.').unwrap_or((s, ""));
        if int.is_empty() && frac.is_empty() {
            return Err(bad());
        }
        let digits: String = [int, frac].concat();
        if !digits.bytes().all(|c| c.is_ascii_digit()) {
            return Err(bad());
        }
        let num = digits.parse::<u64>().map_err(|_| bad())?;
        let den = 10u64.checked_pow(frac.len() as u32).ok_or_else(bad)?;
        Rational::new(num, den)
    }
}

impl fmt::Display for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantizedMapConfig {
    pub bits: u32,
    pub b: Rational,
    pub quantizer: Quantizer,
}

impl QuantizedMapConfig {
    pub fn new(bits: u32, b: Rational, quantizer: Quantizer) -> Result<Self> {
        if !(1..=MAX_BITS).contains(&bits) {
            return Err(Error::InvalidParameter(format!(
                "fractional bits {bits} outside 1..={MAX_BITS}"
            )));
        }
        Ok(Self { bits, b, quantizer })
    }

    pub fn side(&self) -> u32 {
        1 << self.bits
    }

    pub fn node_count(&self) -> usize {
        1usize << (2 * self.bits)
    }
}

/// Successor of the grid state `(u, v)`.
pub fn quantized_step(u: u32, v: u32, cfg: &QuantizedMapConfig) -> (u32, u32) {
    let side = cfg.side();
    debug_assert!(u < side && v < side);
    let n = cfg.bits;
    let rest = (side - u) as u128;
    let num = (cfg.b.num as u128).pow(2) * v as u128 * rest * rest;
    let den = (cfg.b.den as u128).pow(2) << (2 * n);
    let w = cfg.quantizer.apply(num, den) & (side as u128 - 1);
    (v, w as u32)
}

/// Out-degree-one digraph over all quantized states.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FunctionalGraph {
    pub bits: u32,
    successor: Vec<u32>,
}

impl FunctionalGraph {
    pub fn node_count(&self) -> usize {
        self.successor.len()
    }

    pub fn successor(&self, node: u32) -> u32 {
        self.successor[node as usize]
    }

    pub fn successors(&self) -> &[u32] {
        &self.successor
    }

    pub fn node_id(&self, i: u32, j: u32) -> u32 {
        (i << self.bits) | j
    }

    pub fn coords(&self, node: u32) -> (u32, u32) {
        (node >> self.bits, node & ((1 << self.bits) - 1))
    }

    /// DOT rendering with nodes named `"i,j"`.
    pub fn to_dot(&self) -> String {
        let mut out = String::with_capacity(self.successor.len() * 20);
        out.push_str("digraph functional_graph {\n");
        for (node, &next) in self.successor.iter().enumerate() {
            let (i, j) = self.coords(node as u32);
            let (k, l) = self.coords(next);
            let _ = writeln!(out, "  \"{i},{j}\" -> \"{k},{l}\";");
        }
        out.push_str("}\n");
        out
    }

    /// JSON export: `{"n": bits, "edges": [[from_id, to_id], ...], "stats": {...}}`.
    pub fn to_json(&self, stats: &GraphStats) -> serde_json::Value {
        let edges: Vec<[u32; 2]> = self
            .successor
            .iter()
            .enumerate()
            .map(|(node, &next)| [node as u32, next])
            .collect();
        serde_json::json!({
            "n": self.bits,
            "edges": edges,
            "stats": stats,
        })
    }
}

pub fn build_functional_graph(cfg: &QuantizedMapConfig) -> FunctionalGraph {
    let side = cfg.side();
    let mut successor = Vec::with_capacity(cfg.node_count());
    for u in 0..side {
        for v in 0..side {
            let (a, b) = quantized_step(u, v, cfg);
            successor.push((a << cfg.bits) | b);
        }
    }
    FunctionalGraph {
        bits: cfg.bits,
        successor,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphStats {
    pub node_count: usize,
    pub component_count: usize,
    pub cycle_count: usize,
    /// Sorted ascending.
    pub cycle_lengths: Vec<usize>,
    /// Sorted ascending.
    pub component_sizes: Vec<usize>,
    pub max_transient_length: usize,
    pub self_loop_nodes: Vec<(u32, u32)>,
}

/// Per-node cycle membership and distance to the cycle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CycleStructure {
    /// Index into `cycles` of the cycle each node eventually enters.
    pub cycle_of: Vec<u32>,
    /// Steps to reach a cycle node; zero on the cycle itself.
    pub transient: Vec<u32>,
    /// Each cycle as the list of its node ids in successor order.
    pub cycles: Vec<Vec<u32>>,
}

impl CycleStructure {
    pub fn of(g: &FunctionalGraph) -> Self {
        const UNSEEN: u32 = u32::MAX;
        const ON_PATH: u32 = u32::MAX - 1;
        let n = g.node_count();
        let mut cycle_of = vec![UNSEEN; n];
        let mut transient = vec![0u32; n];
        let mut cycles: Vec<Vec<u32>> = Vec::new();
        let mut path: Vec<u32> = Vec::new();

        for start in 0..n as u32 {
            if cycle_of[start as usize] != UNSEEN {
                continue;
            }
            path.clear();
            let mut node = start;
            while cycle_of[node as usize] == UNSEEN {
                cycle_of[node as usize] = ON_PATH;
                path.push(node);
                node = g.successor(node);
            }
            // `node` is either on the current path (new cycle) or already resolved.
            let mut tail_end = path.len();
            if cycle_of[node as usize] == ON_PATH {
                let pos = path.iter().position(|&p| p == node).expect("node on path");
                let id = cycles.len() as u32;
                let cycle = path[pos..].to_vec();
                for &c in &cycle {
                    cycle_of[c as usize] = id;
                    transient[c as usize] = 0;
                }
                cycles.push(cycle);
                tail_end = pos;
            }
            for &p in path[..tail_end].iter().rev() {
                let next = g.successor(p) as usize;
                cycle_of[p as usize] = cycle_of[next];
                transient[p as usize] = transient[next] + 1;
            }
        }
        Self {
            cycle_of,
            transient,
            cycles,
        }
    }
}

struct DisjointSet {
    parent: Vec<u32>,
    size: Vec<u32>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n as u32).collect(),
            size: vec![1; n],
        }
    }

    fn find(&mut self, mut x: u32) -> u32 {
        let mut root = x;
        while self.parent[root as usize] != root {
            root = self.parent[root as usize];
        }
        while self.parent[x as usize] != root {
            let next = self.parent[x as usize];
            self.parent[x as usize] = root;
            x = next;
        }
        root
    }

    fn union(&mut self, a: u32, b: u32) {
        let (mut a, mut b) = (self.find(a), self.find(b));
        if a == b {
            return;
        }
        if self.size[a as usize] < self.size[b as usize] {
            std::mem::swap(&mut a, &mut b);
        }
        self.parent[b as usize] = a;
        self.size[a as usize] += self.size[b as usize];
    }
}

pub fn graph_stats(g: &FunctionalGraph) -> GraphStats {
    let n = g.node_count();
    let mut sets = DisjointSet::new(n);
    for node in 0..n as u32 {
        sets.union(node, g.successor(node));
    }
    let mut component_sizes: Vec<usize> = Vec::new();
    for v in 0..n as u32 {
        if sets.find(v) == v {
            component_sizes.push(sets.size[v as usize] as usize);
        }
    }
    component_sizes.sort_unstable();

    let structure = CycleStructure::of(g);
    let mut cycle_lengths: Vec<usize> = structure.cycles.iter().map(Vec::len).collect();
    cycle_lengths.sort_unstable();
    let self_loop_nodes = (0..n as u32)
        .filter(|&v| g.successor(v) == v)
        .map(|v| g.coords(v))
        .collect();

    GraphStats {
        node_count: n,
        component_count: component_sizes.len(),
        cycle_count: structure.cycles.len(),
        cycle_lengths,
        component_sizes,
        max_transient_length: structure.transient.iter().copied().max().unwrap_or(0) as usize,
        self_loop_nodes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(bits: u32, q: Quantizer) -> QuantizedMapConfig {
        QuantizedMapConfig::new(bits, Rational::new(511, 256).unwrap(), q).unwrap()
    }

    #[test]
    fn origin_and_zero_column_collapse() {
        for q in Quantizer::ALL {
            for bits in 1..=4 {
                let c = cfg(bits, q);
                assert_eq!(quantized_step(0, 0, &c), (0, 0));
                for u in 0..c.side() {
                    assert_eq!(quantized_step(u, 0, &c), (0, 0));
                }
            }
        }
    }

    #[test]
    fn three_bit_step_per_quantizer() {
        // (511/256)^2 * (1/8) * 8 = 3.98439...
        assert_eq!(quantized_step(0, 1, &cfg(3, Quantizer::Floor)), (1, 3));
        assert_eq!(quantized_step(0, 1, &cfg(3, Quantizer::Round)), (1, 4));
        assert_eq!(quantized_step(0, 1, &cfg(3, Quantizer::Ceil)), (1, 4));
    }

    #[test]
    fn round_is_half_away_from_zero() {
        // b = 1: w = v (2^n - u)^2 / 2^(2n). With n = 1, u = 1, v = 1: 1/4 -> 0.
        // With n = 2, u = 2, v = 2: 2 * 4 / 16 = 0.5 -> 1.
        let one = Rational::new(1, 1).unwrap();
        let c = QuantizedMapConfig::new(2, one, Quantizer::Round).unwrap();
        assert_eq!(quantized_step(2, 2, &c), (2, 1));
        let c = QuantizedMapConfig::new(1, one, Quantizer::Round).unwrap();
        assert_eq!(quantized_step(1, 1, &c), (1, 0));
    }

    #[test]
    fn values_wrap_modulo_grid() {
        // v = 7, u = 0 at n = 3 floor: 3.984 * 7 = 27.89 -> 27 mod 8 = 3.
        assert_eq!(quantized_step(0, 7, &cfg(3, Quantizer::Floor)), (7, 3));
    }

    #[test]
    fn build_small_graphs() {
        let g = build_functional_graph(&cfg(1, Quantizer::Floor));
        assert_eq!(g.node_count(), 4);
        assert_eq!(g.successor(0), 0);

        let c = cfg(3, Quantizer::Floor);
        let g = build_functional_graph(&c);
        assert_eq!(g.node_count(), 64);
        assert_eq!(g.coords(g.successor(g.node_id(0, 1))), (1, 3));
        assert_eq!(g, build_functional_graph(&c));
    }

    #[test]
    fn stats_on_three_bit_floor_graph() {
        let g = build_functional_graph(&cfg(3, Quantizer::Floor));
        let stats = graph_stats(&g);
        assert!(stats.self_loop_nodes.contains(&(0, 0)));
        assert_eq!(stats.cycle_count, stats.component_count);
        assert_eq!(stats.component_sizes.iter().sum::<usize>(), 64);
        // (1,0) -> (0,0) in one step and is not itself on a cycle.
        assert_eq!(g.successor(g.node_id(1, 0)), 0);
        let structure = CycleStructure::of(&g);
        assert_eq!(structure.transient[g.node_id(1, 0) as usize], 1);
        assert!(stats.max_transient_length >= 1);
    }

    #[test]
    fn cycle_structure_on_handmade_graph() {
        // 0 -> 1 -> 2 -> 0, 3 -> 0, 4 -> 3 ... treat as bits = 1 with 4 nodes:
        // 0 -> 1, 1 -> 0, 2 -> 1, 3 -> 3.
        let g = FunctionalGraph {
            bits: 1,
            successor: vec![1, 0, 1, 3],
        };
        let s = CycleStructure::of(&g);
        assert_eq!(s.cycles.len(), 2);
        assert_eq!(s.transient, vec![0, 0, 1, 0]);
        let stats = graph_stats(&g);
        assert_eq!(stats.cycle_lengths, vec![1, 2]);
        assert_eq!(stats.component_sizes, vec![1, 3]);
        assert_eq!(stats.self_loop_nodes, vec![(1, 1)]);
        assert_eq!(stats.max_transient_length, 1);
    }

    #[test]
    fn dot_and_json_exports() {
        let g = build_functional_graph(&cfg(1, Quantizer::Floor));
        let dot = g.to_dot();
        assert!(dot.starts_with("digraph"));
        assert!(dot.contains("\"0,0\" -> \"0,0\";"));
        assert_eq!(dot.matches("->").count(), 4);
        let stats = graph_stats(&g);
        let json = g.to_json(&stats);
        assert_eq!(json["n"], 1);
        assert_eq!(json["edges"].as_array().unwrap().len(), 4);
        assert_eq!(json["stats"]["cycle_count"], stats.cycle_count);
    }

    #[test]
    fn rational_parsing() {
        assert_eq!("511/256".parse::<Rational>().unwrap(), Rational { num: 511, den: 256 });
        assert_eq!("1.99".parse::<Rational>().unwrap(), Rational { num: 199, den: 100 });
        assert_eq!("2".parse::<Rational>().unwrap(), Rational { num: 2, den: 1 });
        assert!("1/0".parse::<Rational>().is_err());
        assert!("abc".parse::<Rational>().is_err());
        assert!("-1.5".parse::<Rational>().is_err());
    }

    #[test]
    fn config_bounds() {
        let b = Rational::new(511, 256).unwrap();
        assert!(QuantizedMapConfig::new(0, b, Quantizer::Floor).is_err());
        assert!(QuantizedMapConfig::new(17, b, Quantizer::Floor).is_err());
        assert!(QuantizedMapConfig::new(16, b, Quantizer::Floor).is_ok());
    }
}
