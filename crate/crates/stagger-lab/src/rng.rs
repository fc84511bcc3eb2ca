//! Counter-based deterministic random streams.
//!
//! Every consumer (an environment's dynamics, its reset sampler, the action
//! sampler, the minibatch shuffler, ...) owns a [`RngStream`] keyed by
//! `(seed, domain, index)`. A stream's output is a pure function of its key
//! and draw counter, so interleaving draws across streams in any order, or
//! evaluating environments in parallel, cannot change what any stream yields.

/// Weyl increment (odd), the splitmix64 constant.
const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// splitmix64 finalizer: bijective avalanche mix of a 64-bit word.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Purpose tag separating unrelated stream families derived from one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    /// Per-run draw of the chain's target actions.
    TargetActions,
    /// Network parameter initialization.
    NetInit,
    /// Minibatch index shuffling.
    Shuffle,
    /// Per-env dynamics draws (progression gates).
    EnvStep,
    /// Per-env reset-block draws.
    EnvReset,
    /// Per-env action sampling from the policy.
    PolicySample,
    /// Per-env uniform-random actions during initial staggering.
    StaggerActions,
}

impl Domain {
    fn tag(self) -> u64 {
        match self {
            Domain::TargetActions => 1,
            Domain::NetInit => 2,
            Domain::Shuffle => 3,
            Domain::EnvStep => 4,
            Domain::EnvReset => 5,
            Domain::PolicySample => 6,
            Domain::StaggerActions => 7,
        }
    }
}

/// A deterministic stream: splitmix64 over `key + counter * GOLDEN`.
#[derive(Debug, Clone)]
pub struct RngStream {
    key: u64,
    counter: u64,
}

impl RngStream {
    /// Derives the stream for `(seed, domain, index)`. `index` distinguishes
    /// streams within a family (the environment id for per-env domains).
    pub fn new(seed: u64, domain: Domain, index: u64) -> Self {
        let key = mix(mix(seed ^ GOLDEN.wrapping_mul(domain.tag())) ^ GOLDEN.wrapping_mul(index.wrapping_add(1)));
        RngStream { key, counter: 0 }
    }

    /// Number of draws taken so far.
    pub fn draws(&self) -> u64 {
        self.counter
    }

    pub fn next_u64(&mut self) -> u64 {
        let out = mix(self.key.wrapping_add(GOLDEN.wrapping_mul(self.counter)));
        self.counter += 1;
        out
    }

    /// Uniform in [0, 1) with 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [0, n). `n` must be nonzero.
    pub fn range(&mut self, n: usize) -> usize {
        assert!(n > 0, "range over empty interval");
        // Fixed-point multiply; bias is O(n / 2^64), far below anything
        // observable at the draw counts used here.
        (((self.next_u64() as u128) * (n as u128)) >> 64) as usize
    }

    /// Bernoulli draw; exact at p = 0 and p = 1.
    pub fn bernoulli(&mut self, p: f64) -> bool {
        debug_assert!((0.0..=1.0).contains(&p), "probability out of range: {p}");
        self.next_f64() < p
    }

    /// Poisson draw by Knuth multiplication; exact for the small means used
    /// by reset sampling (lambda <= 2).
    pub fn poisson(&mut self, lambda: f64) -> u64 {
        debug_assert!(lambda >= 0.0, "negative Poisson mean: {lambda}");
        if lambda == 0.0 {
            return 0;
        }
        let threshold = (-lambda).exp();
        let mut k = 0u64;
        let mut product = 1.0;
        loop {
            product *= self.next_f64();
            if product <= threshold {
                return k;
            }
            k += 1;
        }
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.range(i + 1);
            items.swap(i, j);
        }
    }
}
