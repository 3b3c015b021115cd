//! Small deterministic RNG.
//!
//! Bitwise reproducibility across runs and platforms is a hard requirement
//! for checkpoints and training traces, so the generator is owned by this
//! crate rather than pulled from an external crate whose stream could shift
//! between versions.

/// xorshift64* seeded through SplitMix64.
#[derive(Debug, Clone)]
pub struct Rng {
    state: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        // SplitMix64 scramble so that small seeds produce unrelated streams.
        let mut z = seed.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
        Rng {
            state: if z == 0 { 0xDEAD_BEEF_CAFE_F00D } else { z },
        }
    }

    /// Raw generator state, for checkpointing.
    pub fn state(&self) -> u64 {
        self.state
    }

    /// Resumes a generator from a checkpointed state.
    pub fn from_state(state: u64) -> Self {
        Rng {
            state: if state == 0 { 0xDEAD_BEEF_CAFE_F00D } else { state },
        }
    }

    /// Derives an independent stream, e.g. one per parameter tensor.
    pub fn fork(&mut self, tag: u64) -> Rng {
        Rng::new(self.next_u64() ^ tag.wrapping_mul(0xA24B_AED4_963E_E407))
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.state;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.state = x;
        x.wrapping_mul(0x2545_F491_4F6C_DD1D)
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in [0, n).
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_u64() % n as u64) as usize
    }

    /// Standard normal via Box-Muller.
    pub fn normal(&mut self) -> f64 {
        // Needed for ln/sqrt/cos in no_std builds; shadowed by the
        // inherent f64 methods when std is linked (e.g. under test).
        #[allow(unused_imports)]
        use num_traits::Float;
        let u1 = self.uniform().max(1e-300);
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * core::f64::consts::PI * u2).cos()
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// Sample `k` distinct indices from [0, n) in random order.
    pub fn choose_distinct(&mut self, n: usize, k: usize) -> alloc::vec::Vec<usize> {
        debug_assert!(k <= n);
        let mut idx: alloc::vec::Vec<usize> = (0..n).collect();
        self.shuffle(&mut idx);
        idx.truncate(k);
        idx
    }
}
