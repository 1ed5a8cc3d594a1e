/// xorshift64* generator (shifts 12, 25, 27; multiplier
/// `0x2545F4914F6CDD1D`) seeded through one SplitMix64 step.
///
/// Fixed here so synthetic datasets and their checksums are portable.
#[derive(Debug, Clone)]
pub struct XorShift64Star {
    state: u64,
    spare_normal: Option<f64>,
}

pub const XORSHIFT_MULTIPLIER: u64 = 0x2545_F491_4F6C_DD1D;

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl XorShift64Star {
    pub fn new(seed: u64) -> Self {
        let state = splitmix64(seed);
        XorShift64Star {
            state: if state == 0 { XORSHIFT_MULTIPLIER } else { state },
            spare_normal: None,
        }
    }

    /// Independent stream for `(seed, tags...)`.
    pub fn derive(seed: u64, tags: &[u64]) -> Self {
        let mixed = tags
            .iter()
            .fold(splitmix64(seed), |acc, &t| splitmix64(acc ^ splitmix64(t)));
        Self::new(mixed)
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.state;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.state = x;
        x.wrapping_mul(XORSHIFT_MULTIPLIER)
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)` by rejection.
    pub fn below(&mut self, n: usize) -> usize {
        let n = n as u64;
        let zone = u64::MAX - u64::MAX % n;
        loop {
            let v = self.next_u64();
            if v < zone {
                return (v % n) as usize;
            }
        }
    }

    /// Standard normal by the Box-Muller transform; the second variate of
    /// each pair is cached.
    pub fn normal(&mut self) -> f64 {
        if let Some(v) = self.spare_normal.take() {
            return v;
        }
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Index drawn with probability proportional to `weights`.
    pub fn categorical(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        let mut u = self.next_f64() * total;
        for (i, &w) in weights.iter().enumerate() {
            if u < w {
                return i;
            }
            u -= w;
        }
        weights.len() - 1
    }

    /// `k` distinct indices from `0..n` (partial Fisher-Yates), sorted.
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k.min(n) {
            let j = i + self.below(n - i);
            pool.swap(i, j);
        }
        let mut out = pool[..k.min(n)].to_vec();
        out.sort_unstable();
        out
    }
}
