//! Deterministic point generators for balls and spheres.
//!
//! Interior points come from a Halton sequence pushed through the inverse
//! normal CDF (direction) and a radial power map, giving a low-discrepancy
//! cover of the ball. Boundary points and Monte-Carlo samples use a seeded
//! ChaCha stream.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::linalg::norm;

const PRIMES: [u32; 24] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89,
];

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Van der Corput radical inverse of `index` in `base`.
pub fn radical_inverse(mut index: u64, base: u32) -> f64 {
    let b = base as u64;
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while index > 0 {
        r += f * (index % b) as f64;
        index /= b;
        f *= inv;
    }
    r
}

/// Halton point number `index` in `[0,1)^dim`. Supports up to 24 dimensions.
pub fn halton(index: u64, dim: usize) -> Vec<f64> {
    assert!(dim <= PRIMES.len(), "halton supports at most {} dims", PRIMES.len());
    PRIMES[..dim]
        .iter()
        .map(|&p| radical_inverse(index, p))
        .collect()
}

/// Low-discrepancy sequence in the ball `‖y − center‖ < radius`.
///
/// A seeded Cranley–Patterson shift decorrelates sequences with different
/// seeds while keeping each one deterministic.
#[derive(Debug, Clone)]
pub struct HaltonBall {
    center: Vec<f64>,
    radius: f64,
    shift: Vec<f64>,
    next: u64,
}

impl HaltonBall {
    pub fn new(center: &[f64], radius: f64, seed: u64) -> Self {
        let dim = center.len() + 1;
        let mut rng = rng_from_seed(seed);
        let shift = (0..dim).map(|_| rng.random::<f64>()).collect();
        Self {
            center: center.to_vec(),
            radius,
            shift,
            next: 1,
        }
    }

    /// Skips ahead so later draws do not repeat earlier ones.
    pub fn with_offset(mut self, offset: u64) -> Self {
        self.next = offset.max(1);
        self
    }

    pub fn next_point(&mut self) -> Vec<f64> {
        let n = self.center.len();
        let normal = Normal::standard();
        let u = halton(self.next, n + 1);
        self.next += 1;
        let u: Vec<f64> = u
            .iter()
            .zip(&self.shift)
            .map(|(a, s)| {
                let v = (a + s).fract();
                v.clamp(1e-12, 1.0 - 1e-12)
            })
            .collect();
        let dir: Vec<f64> = u[..n].iter().map(|&p| normal.inverse_cdf(p)).collect();
        let len = norm(&dir);
        let r = self.radius * u[n].powf(1.0 / n as f64);
        if len == 0.0 {
            return self.center.clone();
        }
        self.center
            .iter()
            .zip(&dir)
            .map(|(c, d)| c + r * d / len)
            .collect()
    }

    pub fn take_points(&mut self, count: usize) -> Vec<Vec<f64>> {
        (0..count).map(|_| self.next_point()).collect()
    }
}

/// Uniform random unit vector.
pub fn random_unit_vector<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let l = norm(&v);
        if l > 1e-12 {
            return v.into_iter().map(|x| x / l).collect();
        }
    }
}

/// Point on the sphere `‖y − center‖ = radius` along a random direction.
pub fn random_sphere_point<R: Rng>(rng: &mut R, center: &[f64], radius: f64) -> Vec<f64> {
    let d = random_unit_vector(rng, center.len());
    center.iter().zip(&d).map(|(c, v)| c + radius * v).collect()
}

/// Uniform random point in the ball.
pub fn random_ball_point<R: Rng>(rng: &mut R, center: &[f64], radius: f64) -> Vec<f64> {
    let n = center.len();
    let d = random_unit_vector(rng, n);
    let r = radius * rng.random::<f64>().powf(1.0 / n as f64);
    center.iter().zip(&d).map(|(c, v)| c + r * v).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::distance;

    #[test]
    fn radical_inverse_base_two() {
        assert_eq!(radical_inverse(1, 2), 0.5);
        assert_eq!(radical_inverse(2, 2), 0.25);
        assert_eq!(radical_inverse(3, 2), 0.75);
        assert_eq!(radical_inverse(5, 3), 2.0 / 3.0 + 1.0 / 9.0);
    }

    #[test]
    fn halton_ball_stays_inside() {
        let c = [1.0, -2.0, 0.5];
        let mut h = HaltonBall::new(&c, 0.3, 7);
        for p in h.take_points(500) {
            assert!(distance(&p, &c) < 0.3);
        }
    }

    #[test]
    fn halton_ball_is_deterministic() {
        let a = HaltonBall::new(&[0.0, 0.0], 1.0, 3).take_points(20);
        let b = HaltonBall::new(&[0.0, 0.0], 1.0, 3).take_points(20);
        assert_eq!(a, b);
        let c = HaltonBall::new(&[0.0, 0.0], 1.0, 4).take_points(20);
        assert_ne!(a, c);
    }

    #[test]
    fn halton_ball_covers_quadrants() {
        let pts = HaltonBall::new(&[0.0, 0.0], 1.0, 0).take_points(64);
        for (sx, sy) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
            let count = pts
                .iter()
                .filter(|p| p[0] * sx > 0.0 && p[1] * sy > 0.0)
                .count();
            assert!(count >= 8, "quadrant ({sx},{sy}) has {count}");
        }
    }

    #[test]
    fn sphere_points_have_exact_radius() {
        let mut rng = rng_from_seed(1);
        let c = [0.5, 0.5];
        for _ in 0..100 {
            let p = random_sphere_point(&mut rng, &c, 2.0);
            assert!((distance(&p, &c) - 2.0).abs() <= 2e-10);
        }
    }
}
