//! Fisher Vector encoding against a direct evaluation of the gradient
//! formulas, with posteriors computed from plain (non log-domain) densities.

use deceptio::data::DescriptorBag;
use deceptio::fisher::{encode_fisher, mean_block, variance_block};
use deceptio::gmm::GaussianMixture;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn direct_fisher(
    weights: &[f64],
    means: &[Vec<f64>],
    vars: &[Vec<f64>],
    xs: &[Vec<f64>],
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let k = weights.len();
    let d = means[0].len();
    let t = xs.len() as f64;
    let density = |c: usize, x: &[f64]| -> f64 {
        let mut p = 1.0;
        for j in 0..d {
            let v = vars[c][j];
            p *= (-(x[j] - means[c][j]).powi(2) / (2.0 * v)).exp()
                / (2.0 * std::f64::consts::PI * v).sqrt();
        }
        p
    };
    let mut g_mu = vec![vec![0.0; d]; k];
    let mut g_sigma = vec![vec![0.0; d]; k];
    for x in xs {
        let joint: Vec<f64> = (0..k).map(|c| weights[c] * density(c, x)).collect();
        let total: f64 = joint.iter().sum();
        for c in 0..k {
            let gamma = joint[c] / total;
            for j in 0..d {
                let sigma = vars[c][j].sqrt();
                g_mu[c][j] += gamma * (x[j] - means[c][j]) / sigma;
                g_sigma[c][j] += gamma * ((x[j] - means[c][j]).powi(2) / vars[c][j] - 1.0);
            }
        }
    }
    for c in 0..k {
        for j in 0..d {
            g_mu[c][j] /= t * weights[c].sqrt();
            g_sigma[c][j] /= t * (2.0 * weights[c]).sqrt();
        }
    }
    (g_mu, g_sigma)
}

#[test]
fn matches_direct_evaluation_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..200 {
        let k = rng.random_range(1..=3);
        let d = rng.random_range(1..=4);
        let t = rng.random_range(1..=20);
        let raw: Vec<f64> = (0..k).map(|_| 0.1 + rng.random::<f64>()).collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let means: Vec<Vec<f64>> = (0..k)
            .map(|_| (0..d).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect())
            .collect();
        let vars: Vec<Vec<f64>> = (0..k)
            .map(|_| (0..d).map(|_| 0.3 + rng.random::<f64>() * 2.0).collect())
            .collect();
        let xs: Vec<Vec<f64>> = (0..t)
            .map(|_| (0..d).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect())
            .collect();

        let gmm = GaussianMixture::new(d, weights.clone(), means.concat(), vars.concat()).unwrap();
        let fv = encode_fisher(&gmm, &DescriptorBag::from_rows(&xs).unwrap()).unwrap();
        let (g_mu, g_sigma) = direct_fisher(&weights, &means, &vars, &xs);
        assert_eq!(fv.values.len(), 2 * d * k);
        for c in 0..k {
            for (a, b) in fv.values[mean_block(d, c)].iter().zip(&g_mu[c]) {
                assert!((a - b).abs() <= 1e-10, "{a} vs {b}");
            }
            for (a, b) in fv.values[variance_block(d, k, c)].iter().zip(&g_sigma[c]) {
                assert!((a - b).abs() <= 1e-10, "{a} vs {b}");
            }
        }
    }
}
