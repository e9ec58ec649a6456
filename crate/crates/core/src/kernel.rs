//! Random streams and dyadic Brownian grids.
//!
//! Every Gaussian variate used anywhere in the crate is drawn through a
//! [`RandomStream`], which also keeps the work ledger: one unit per normal
//! draw. Streams are ChaCha12 keyed by a master seed, with the 64-bit stream
//! selector acting as the substream id, so replication `i` of an experiment
//! can be regenerated on its own without replaying replications `0..i`.
//!
//! A [`BrownianGrid`] holds `B(j * T / 2^n)` for `j = 0..=2^n` and refines in
//! place by sampling every new midpoint from the Brownian bridge between its
//! two neighbours. Coarse values are copied, never recomputed, so all levels
//! built from one grid share the same path.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Anything that can hand out standard normal variates.
///
/// [`RandomStream`] is the production implementation; tests plug in fixed
/// sequences to pin individual midpoints.
pub trait GaussianSource {
    fn next_gaussian(&mut self) -> f64;
}

/// A deterministic, independently addressable stream of random numbers.
#[derive(Debug, Clone)]
pub struct RandomStream {
    rng: ChaCha12Rng,
    master_seed: u64,
    substream_id: u64,
    gaussian_draws: u64,
}

impl RandomStream {
    /// Opens substream `substream_id` under `master_seed`. The draw counter starts at zero.
    pub fn derive(master_seed: u64, substream_id: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(master_seed);
        rng.set_stream(substream_id);
        Self {
            rng,
            master_seed,
            substream_id,
            gaussian_draws: 0,
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn substream_id(&self) -> u64 {
        self.substream_id
    }

    /// Number of Gaussian variates drawn so far.
    pub fn gaussian_draws(&self) -> u64 {
        self.gaussian_draws
    }

    /// Uniform on the open interval (0, 1). Not charged to the Gaussian ledger.
    pub fn next_open_uniform(&mut self) -> f64 {
        // 53 random bits, shifted by half an ulp so 0 is unreachable.
        let bits = self.rng.random::<u64>() >> 11;
        (bits as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }
}

impl GaussianSource for RandomStream {
    fn next_gaussian(&mut self) -> f64 {
        self.gaussian_draws += 1;
        self.rng.sample(StandardNormal)
    }
}

/// Convenience wrapper for [`RandomStream::derive`].
pub fn derive_substream(master_seed: u64, substream_id: u64) -> RandomStream {
    RandomStream::derive(master_seed, substream_id)
}

/// Bits of a substream id reserved for the replication index inside a block.
pub const INDEX_BITS: u32 = 40;
const BLOCK_BITS: u32 = 16;
const ROW_SHIFT: u32 = INDEX_BITS + BLOCK_BITS;

/// A contiguous family of substreams addressed as `(row, block, index)`.
///
/// Substream ids are laid out as `row:8 | block:16 | index:40`. Table
/// experiments use the row for the IRE position and the block for the
/// meta-replication, so no two replications anywhere in a table share noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamBlock {
    master_seed: u64,
    base: u64,
}

impl StreamBlock {
    pub fn new(master_seed: u64, row: u8, block: u16) -> Self {
        Self {
            master_seed,
            base: (u64::from(row) << ROW_SHIFT) | (u64::from(block) << INDEX_BITS),
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    /// Substream for replication `index` of this block.
    ///
    /// Panics if `index` does not fit in [`INDEX_BITS`] bits.
    pub fn stream(&self, index: u64) -> RandomStream {
        assert!(
            index < (1u64 << INDEX_BITS),
            "replication index {index} overflows the substream layout"
        );
        RandomStream::derive(self.master_seed, self.base | index)
    }
}

/// A Brownian path sampled on the dyadic grid `j * T / 2^level`.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianGrid {
    level: u32,
    horizon: f64,
    values: Vec<f64>,
}

impl BrownianGrid {
    /// Level-0 grid `[0, sqrt(T) z]`, consuming one Gaussian draw.
    pub fn init<S: GaussianSource>(source: &mut S, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidHorizon(horizon));
        }
        let z = source.next_gaussian();
        Ok(Self {
            level: 0,
            horizon,
            values: vec![0.0, horizon.sqrt() * z],
        })
    }

    /// Level-0 grid `[0, terminal]` with a given endpoint, no draws.
    pub fn from_endpoint(horizon: f64, terminal: f64) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidHorizon(horizon));
        }
        Ok(Self {
            level: 0,
            horizon,
            values: vec![0.0, terminal],
        })
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Step size `T * 2^-level`.
    pub fn spacing(&self) -> f64 {
        self.horizon / (1u64 << self.level) as f64
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Number of cells, `2^level`.
    pub fn cells(&self) -> usize {
        self.values.len() - 1
    }

    /// Brownian increments over each cell, left to right.
    pub fn increments(&self) -> impl ExactSizeIterator<Item = f64> + '_ {
        self.values.windows(2).map(|w| w[1] - w[0])
    }

    /// Moves to level `n + 1`, drawing one bridge midpoint per cell (`2^n` draws).
    ///
    /// Existing values are copied to the even slots untouched.
    pub fn refine<S: GaussianSource>(&mut self, source: &mut S) {
        let bridge_sd = (self.spacing() / 4.0).sqrt();
        let mut fine = Vec::with_capacity(2 * self.cells() + 1);
        for w in self.values.windows(2) {
            let (left, right) = (w[0], w[1]);
            fine.push(left);
            fine.push(0.5 * (left + right) + bridge_sd * source.next_gaussian());
        }
        fine.push(*self.values.last().expect("grid has at least two points"));
        self.values = fine;
        self.level += 1;
    }

    /// Refines repeatedly until the grid reaches `level`.
    pub fn refine_to<S: GaussianSource>(&mut self, level: u32, source: &mut S) {
        while self.level < level {
            self.refine(source);
        }
    }
}

impl BrownianGrid {
    /// True if `self` is one refinement of `coarse`: every coarse value sits
    /// bit-for-bit at its even slot, and each coarse increment equals the sum
    /// of its two child increments in exact (error-free) arithmetic.
    pub fn refines(&self, coarse: &BrownianGrid) -> bool {
        if self.level != coarse.level + 1 || self.horizon.to_bits() != coarse.horizon.to_bits() {
            return false;
        }
        coarse.values.windows(2).enumerate().all(|(k, w)| {
            let (l, m, r) = (self.values[2 * k], self.values[2 * k + 1], self.values[2 * k + 2]);
            if l.to_bits() != w[0].to_bits() || r.to_bits() != w[1].to_bits() {
                return false;
            }
            let (a, ea) = two_sum(m, -l);
            let (b, eb) = two_sum(r, -m);
            let (c, ec) = two_sum(r, -l);
            exact_sum_is_zero(&[a, ea, b, eb, -c, -ec])
        })
    }
}

// Knuth's error-free transformation: s + e == a + b exactly.
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

// Grows a nonoverlapping expansion term by term; its sum is zero iff no
// component survives.
fn exact_sum_is_zero(terms: &[f64]) -> bool {
    let mut expansion: Vec<f64> = Vec::with_capacity(terms.len());
    for &t in terms {
        let mut q = t;
        let mut next = Vec::with_capacity(expansion.len() + 1);
        for &c in &expansion {
            let (s, e) = two_sum(q, c);
            if e != 0.0 {
                next.push(e);
            }
            q = s;
        }
        if q != 0.0 {
            next.push(q);
        }
        expansion = next;
    }
    expansion.is_empty()
}


#[cfg(test)]
mod tests {
    use super::testing::Scripted;
    use super::*;

    fn draws(stream: &mut RandomStream, n: usize) -> Vec<f64> {
        (0..n).map(|_| stream.next_gaussian()).collect()
    }

    #[test]
    fn same_substream_same_draws() {
        let a = draws(&mut derive_substream(42, 0), 100);
        let b = draws(&mut derive_substream(42, 0), 100);
        assert_eq!(a, b);
    }

    #[test]
    fn distinct_substreams_differ() {
        let a = draws(&mut derive_substream(42, 0), 100);
        let b = draws(&mut derive_substream(42, 1), 100);
        assert_ne!(a, b);
        let c = draws(&mut derive_substream(43, 0), 100);
        assert_ne!(a, c);
    }

    #[test]
    fn counter_tracks_gaussian_draws_only() {
        let mut s = derive_substream(1, 2);
        assert_eq!(s.gaussian_draws(), 0);
        for _ in 0..17 {
            s.next_gaussian();
        }
        s.next_open_uniform();
        assert_eq!(s.gaussian_draws(), 17);
    }

    #[test]
    fn open_uniform_in_unit_interval() {
        let mut s = derive_substream(9, 9);
        for _ in 0..10_000 {
            let u = s.next_open_uniform();
            assert!(u > 0.0 && u < 1.0);
        }
    }

    #[test]
    fn block_addresses_are_disjoint() {
        let a = StreamBlock::new(5, 0, 0).stream(3);
        let b = StreamBlock::new(5, 0, 1).stream(3);
        let c = StreamBlock::new(5, 1, 0).stream(3);
        assert_eq!(a.substream_id(), 3);
        assert_ne!(a.substream_id(), b.substream_id());
        assert_ne!(b.substream_id(), c.substream_id());
        assert_ne!(a.substream_id(), c.substream_id());
    }

    #[test]
    #[should_panic(expected = "overflows")]
    fn block_index_overflow_panics() {
        StreamBlock::new(0, 0, 0).stream(1u64 << INDEX_BITS);
    }

    #[test]
    fn init_rejects_nonpositive_horizon() {
        let mut src = Scripted::new(&[1.0]);
        assert!(matches!(
            BrownianGrid::init(&mut src, 0.0),
            Err(Error::InvalidHorizon(_))
        ));
        assert!(BrownianGrid::init(&mut src, -1.0).is_err());
        assert!(BrownianGrid::init(&mut src, f64::NAN).is_err());
    }

    #[test]
    fn init_zero_draw() {
        let g = BrownianGrid::init(&mut Scripted::new(&[0.0]), 1.0).unwrap();
        assert_eq!(g.values(), &[0.0, 0.0]);
    }

    #[test]
    fn init_scales_by_root_horizon() {
        let g = BrownianGrid::init(&mut Scripted::new(&[1.5]), 1.0).unwrap();
        assert_eq!(g.values(), &[0.0, 1.5]);
        let g = BrownianGrid::init(&mut Scripted::new(&[1.5]), 4.0).unwrap();
        assert_eq!(g.values(), &[0.0, 3.0]);
    }

    #[test]
    fn refine_zero_bridge_gives_zero_midpoint() {
        let mut src = Scripted::new(&[0.0, 0.0]);
        let mut g = BrownianGrid::init(&mut src, 1.0).unwrap();
        g.refine(&mut src);
        assert_eq!(g.values(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn refine_midpoint_formula() {
        // B(1) = 1, z = 2: 0.5 + sqrt(0.25) * 2 = 1.5
        let mut src = Scripted::new(&[1.0, 2.0]);
        let mut g = BrownianGrid::init(&mut src, 1.0).unwrap();
        g.refine(&mut src);
        assert_eq!(g.level(), 1);
        assert_eq!(g.values(), &[0.0, 1.5, 1.0]);
        assert_eq!(g.spacing(), 0.5);
    }

    #[test]
    fn refine_draw_counts_are_dyadic() {
        let mut s = derive_substream(3, 3);
        let mut g = BrownianGrid::init(&mut s, 1.0).unwrap();
        assert_eq!(s.gaussian_draws(), 1);
        for level in 1..=10u32 {
            let before = s.gaussian_draws();
            g.refine(&mut s);
            assert_eq!(s.gaussian_draws() - before, 1 << (level - 1));
            assert_eq!(s.gaussian_draws(), 1 << level);
            assert_eq!(g.values().len(), (1 << level) + 1);
            assert_eq!(g.values()[0], 0.0);
        }
    }

    #[test]
    fn exact_sums() {
        assert!(exact_sum_is_zero(&[1e16, 1.0, -1e16, -1.0]));
        assert!(!exact_sum_is_zero(&[1e16, 1.0, -1e16]));
        assert!(exact_sum_is_zero(&[0.1, 0.2, -0.1, -0.2]));
        // 0.1 + 0.2 rounds, so the naive sum is not 0.3 but the exact check still sees 0.1 + 0.2 - 0.3 != 0.
        assert!(!exact_sum_is_zero(&[0.1, 0.2, -0.3]));
    }

    #[test]
    fn refines_detects_tampering() {
        let mut s = RandomStream::derive(5, 5);
        let coarse = BrownianGrid::init(&mut s, 1.0).unwrap();
        let mut fine = coarse.clone();
        fine.refine(&mut s);
        assert!(fine.refines(&coarse));
        assert!(!coarse.refines(&coarse));
        let mut bad = fine.clone();
        bad.values[2] = f64::from_bits(bad.values[2].to_bits() + 1);
        assert!(!bad.refines(&coarse));
    }

    #[test]
    fn refinement_preserves_existing_points() {
        let mut s = derive_substream(11, 0);
        let mut g = BrownianGrid::init(&mut s, 1.0).unwrap();
        let mut history = vec![g.clone()];
        for _ in 0..8 {
            g.refine(&mut s);
            history.push(g.clone());
        }
        for coarse in &history {
            let stride = 1usize << (g.level() - coarse.level());
            for (j, &v) in coarse.values().iter().enumerate() {
                assert_eq!(g.values()[j * stride].to_bits(), v.to_bits());
            }
        }
    }

    #[test]
    fn bridge_midpoint_moments() {
        // (0, 0) bridge at h = 1: midpoint ~ N(0, 1/4).
        let reps = 100_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for i in 0..reps {
            let mut s = derive_substream(77, i);
            let mut g = BrownianGrid::from_endpoint(1.0, 0.0).unwrap();
            g.refine(&mut s);
            let m = g.values()[1];
            sum += m;
            sum_sq += m * m;
        }
        let n = reps as f64;
        let mean = sum / n;
        let var = (sum_sq - n * mean * mean) / (n - 1.0);
        assert!(mean.abs() < 4.0 * (0.25 / n).sqrt(), "mean {mean}");
        assert!((var - 0.25).abs() < 0.03 * 0.25, "var {var}");
    }
}
