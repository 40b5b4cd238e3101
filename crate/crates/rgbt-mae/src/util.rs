//! Deterministic seeding and small statistics helpers shared across modules.

use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;

/// Role tags for step-seeded randomness. Every stochastic choice in the
/// training loop derives its stream from `(global_seed, iteration, role)`,
/// which is what makes resume-from-checkpoint bit-exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Shuffle,
    Augment,
    MaskRgb,
    MaskThermal,
    Init,
    Corpus,
    Balance,
    Projection,
    Probe,
    Other(u64),
}

impl Role {
    fn tag(self) -> u64 {
        match self {
            Role::Shuffle => 1,
            Role::Augment => 2,
            Role::MaskRgb => 3,
            Role::MaskThermal => 4,
            Role::Init => 5,
            Role::Corpus => 6,
            Role::Balance => 7,
            Role::Projection => 8,
            Role::Probe => 9,
            Role::Other(t) => 100 + t,
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from `(global_seed, iteration, role)`.
pub fn derive_seed(global_seed: u64, iteration: u64, role: Role) -> u64 {
    let a = splitmix64(global_seed ^ 0x51ed_270b_9f0c_1ad7);
    let b = splitmix64(a ^ iteration);
    splitmix64(b ^ role.tag())
}

/// Step-seeded RNG. ChaCha8 keeps the stream stable across library versions.
pub fn rng_for(global_seed: u64, iteration: u64, role: Role) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(global_seed, iteration, role))
}

/// `(1 - t) * a + t * b`; exact at both endpoints.
pub fn lerp(a: f64, b: f64, t: f64) -> f64 {
    (1.0 - t) * a + t * b
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Two-sided Kolmogorov-Smirnov statistic of `samples` against an analytic
/// CDF. Handles atoms (repeated sample values) correctly by comparing the
/// CDF against both sides of the empirical jump.
pub fn ks_statistic_vs_cdf(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    assert!(!samples.is_empty());
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = samples.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in samples.iter().enumerate() {
        let f = cdf(x);
        d = d.max((f - i as f64 / n).abs());
        d = d.max(((i + 1) as f64 / n - f).abs());
    }
    d
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_statistic_two_sample(a: &mut [f64], b: &mut [f64]) -> f64 {
    assert!(!a.is_empty() && !b.is_empty());
    a.sort_by(|x, y| x.partial_cmp(y).unwrap());
    b.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut ia, mut ib) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while ia < a.len() && ib < b.len() {
        let x = a[ia].min(b[ib]);
        while ia < a.len() && a[ia] <= x {
            ia += 1;
        }
        while ib < b.len() && b[ib] <= x {
            ib += 1;
        }
        d = d.max((ia as f64 / na - ib as f64 / nb).abs());
    }
    d
}

/// One-sided Mann-Whitney U test that values in `a` are stochastically
/// larger than values in `b`. Returns `(u_statistic, p_value)` using the
/// normal approximation with tie correction.
pub fn mann_whitney_greater(a: &[f64], b: &[f64]) -> (f64, f64) {
    let n1 = a.len() as f64;
    let n2 = b.len() as f64;
    assert!(n1 > 0.0 && n2 > 0.0);

    let mut all: Vec<(f64, bool)> = a
        .iter()
        .map(|&v| (v, true))
        .chain(b.iter().map(|&v| (v, false)))
        .collect();
    all.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());

    // midranks with tie groups
    let n = all.len();
    let mut rank_sum_a = 0.0;
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for item in &all[i..=j] {
            if item.1 {
                rank_sum_a += midrank;
            }
        }
        tie_term += t * t * t - t;
        i = j + 1;
    }

    let u = rank_sum_a - n1 * (n1 + 1.0) / 2.0;
    let mean_u = n1 * n2 / 2.0;
    let nn = n1 + n2;
    let var_u = n1 * n2 / 12.0 * ((nn + 1.0) - tie_term / (nn * (nn - 1.0)));
    if var_u <= 0.0 {
        return (u, if u > mean_u { 0.0 } else { 1.0 });
    }
    // continuity correction, one-sided "a > b"
    let z = (u - mean_u - 0.5) / var_u.sqrt();
    (u, 1.0 - normal_cdf(z))
}

/// Population mean and variance.
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var)
}
