//! Counter-based per-path random streams.
//!
//! The draws of step `k` of path `p` come from a Xoshiro256++ generator keyed
//! by `(base_seed, p, k)`, so they do not depend on the order in which paths
//! or steps are simulated, and a path can resume at any step.

use rand_core::{RngCore, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use rand_xoshiro::Xoshiro256PlusPlus;

const INV_2_53: f64 = 1.0 / (1u64 << 53) as f64;

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn step_key(base_seed: u64, path_index: u64, step: u64) -> u64 {
    let h = mix64(base_seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let h = mix64(h ^ path_index.wrapping_mul(0xd1b5_4a32_d192_ed03));
    mix64(h ^ step.wrapping_mul(0x8cb9_2ba7_2f3d_8dd7))
}

#[derive(Clone, Debug)]
pub struct PathStream {
    base_seed: u64,
    path_index: u64,
    step: u64,
}

impl PathStream {
    /// Stream for `path_index` positioned at the start of step `start_step`.
    pub fn new(base_seed: u64, path_index: u64, start_step: u64) -> Self {
        Self { base_seed, path_index, step: start_step }
    }

    /// Fills `normals` with independent standard normals and returns a
    /// uniform in `(0, 1]`, then advances to the next step.
    pub fn step(&mut self, normals: &mut [f64]) -> f64 {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(step_key(self.base_seed, self.path_index, self.step));
        self.step += 1;
        for z in normals.iter_mut() {
            *z = StandardNormal.sample(&mut rng);
        }
        ((rng.next_u64() >> 11) + 1) as f64 * INV_2_53
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeking_matches_sequential_draws() {
        let mut seq = PathStream::new(7, 3, 0);
        let mut z = [0.0; 3];
        let mut expected = Vec::new();
        for _ in 0..5 {
            let u = seq.step(&mut z);
            expected.push((z, u));
        }
        let mut jumped = PathStream::new(7, 3, 3);
        let u = jumped.step(&mut z);
        assert_eq!((z, u), expected[3]);
    }

    #[test]
    fn moments_are_standard() {
        let mut s = PathStream::new(1, 0, 0);
        let mut z = [0.0; 2];
        let (mut m1, mut m2, mut m4, mut mu, mut cross) = (0.0, 0.0, 0.0, 0.0, 0.0);
        let n = 200_000;
        let mut prev = 0.0;
        for _ in 0..n {
            let u = s.step(&mut z);
            m1 += z[0] + z[1];
            m2 += z[0] * z[0] + z[1] * z[1];
            m4 += z[0].powi(4) + z[1].powi(4);
            mu += u;
            cross += prev * z[0];
            prev = z[0];
        }
        let k = (2 * n) as f64;
        assert!((m1 / k).abs() < 0.01);
        assert!((m2 / k - 1.0).abs() < 0.01);
        assert!((m4 / k - 3.0).abs() < 0.05);
        assert!((mu / n as f64 - 0.5).abs() < 0.005);
        assert!((cross / n as f64).abs() < 0.01);
    }

    #[test]
    fn streams_differ_by_path_and_seed() {
        let draw = |seed, path| {
            let mut z = [0.0];
            PathStream::new(seed, path, 0).step(&mut z);
            z[0]
        };
        assert_ne!(draw(1, 0), draw(1, 1));
        assert_ne!(draw(1, 0), draw(2, 0));
    }

    #[test]
    fn adjacent_paths_are_uncorrelated() {
        let n = 100_000u64;
        let mut z = [0.0];
        let mut w = [0.0];
        let mut cross = 0.0;
        for k in 0..n {
            PathStream::new(5, k, 0).step(&mut z);
            PathStream::new(5, k + 1, 0).step(&mut w);
            cross += z[0] * w[0];
        }
        assert!((cross / n as f64).abs() < 0.015);
    }
}
