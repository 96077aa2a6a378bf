#![allow(dead_code)]

use std::sync::Arc;

use hsurf::{Jet3, ScalarField};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Graph `x_n = G(x_1, …, x_{n−1})` with `G` a random cubic plus a sine, as
/// the defining function `x_n − G` and the height `G`.
pub struct RandomGraph {
    pub field: ScalarField,
    height: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    pub n: usize,
}

impl RandomGraph {
    pub fn new(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = n - 1;
        let mut terms: Vec<(f64, Vec<usize>)> = Vec::new();
        for i in 0..d {
            terms.push((rng.gen_range(-1.0..1.0), vec![i]));
            for j in i..d {
                terms.push((rng.gen_range(-0.5..0.5), vec![i, j]));
                for k in j..d {
                    terms.push((rng.gen_range(-0.2..0.2), vec![i, j, k]));
                }
            }
        }
        let amp = rng.gen_range(0.1..0.3);
        let terms = Arc::new(terms);
        let t2 = terms.clone();
        let field = ScalarField::analytic(move |x: &[Jet3]| {
            let mut g = (&x[0] * amp).sin() * amp;
            for (c, idx) in terms.iter() {
                let mut m = Jet3::constant(n, *c, x[0].order());
                for &i in idx {
                    m = &m * &x[i];
                }
                g = &g + &m;
            }
            &x[n - 1] - &g
        });
        let height = Arc::new(move |u: &[f64]| {
            let mut g = (u[0] * amp).sin() * amp;
            for (c, idx) in t2.iter() {
                g += c * idx.iter().map(|&i| u[i]).product::<f64>();
            }
            g
        });
        RandomGraph { field, height, n }
    }

    pub fn point(&self, u: &[f64]) -> Vec<f64> {
        let mut x = u.to_vec();
        x.push((self.height)(u));
        x
    }

    pub fn random_point(&self, rng: &mut ChaCha8Rng, r: f64) -> Vec<f64> {
        let u: Vec<f64> = (0..self.n - 1).map(|_| rng.gen_range(-r..r)).collect();
        self.point(&u)
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn assert_close(a: f64, b: f64, tol: f64, what: &str) {
    assert!((a - b).abs() <= tol, "{}: {} vs {} (diff {:e})", what, a, b, (a - b).abs());
}
