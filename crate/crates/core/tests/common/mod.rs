#![allow(dead_code)]

use latent_chain::model::{Emission, HmmParams, InputSequence, LgssmParams};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| 0.05 + rng.random::<f64>()).collect();
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

pub fn gaussian_vector(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

pub fn spd(rng: &mut ChaCha8Rng, n: usize, ridge: f64) -> DMatrix<f64> {
    let l = gaussian_matrix(rng, n, n, 0.5);
    let m = &l * l.transpose() + DMatrix::identity(n, n) * ridge;
    (&m + m.transpose()) * 0.5
}

pub fn random_hmm(rng: &mut ChaCha8Rng, k: usize, alphabet: Option<usize>, dim: usize) -> HmmParams {
    let transition = DMatrix::from_fn(k, k, |_, _| 0.0);
    let mut transition = transition;
    for i in 0..k {
        let row = simplex(rng, k);
        for j in 0..k {
            transition[(i, j)] = row[j];
        }
    }
    let emissions = (0..k)
        .map(|_| match alphabet {
            Some(v) => Emission::Categorical(simplex(rng, v)),
            None => Emission::Gaussian {
                mean: gaussian_vector(rng, dim, 1.5),
                cov: spd(rng, dim, 0.3),
            },
        })
        .collect();
    HmmParams {
        initial: simplex(rng, k),
        transition,
        emissions,
    }
}

/// Random stable LG-SSM with spectral radius at most 0.95.
pub fn random_lgssm(rng: &mut ChaCha8Rng, s: usize, d: usize, p: usize) -> LgssmParams {
    let mut a = gaussian_matrix(rng, s, s, 1.0);
    let radius = a.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
    if radius > 0.0 {
        a *= rng.random_range(0.3..0.95) / radius;
    }
    LgssmParams {
        a,
        b: gaussian_matrix(rng, s, d, 0.5),
        c: gaussian_matrix(rng, p, s, 1.0),
        q: spd(rng, s, 0.1),
        r: spd(rng, p, 0.1),
        init_mean: gaussian_vector(rng, s, 1.0),
        init_cov: spd(rng, s, 0.2),
    }
}

pub fn random_inputs(rng: &mut ChaCha8Rng, d: usize, len: usize) -> InputSequence {
    if d == 0 {
        return InputSequence::empty();
    }
    InputSequence::new(d, (0..len).map(|_| gaussian_vector(rng, d, 1.0)).collect()).unwrap()
}
