use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{SearchBackend, SearchConfig};
use crate::error::{invalid, Result};
use crate::ops::OpKind;
use crate::report::JsonlWriter;

/// A synthetic search problem: candidate `k` on edge `e` has a true mean
/// accuracy `means[e][k]`; an architecture scores the average of its edges'
/// means plus Gaussian noise, clamped to [0, 1].
#[derive(Debug, Clone)]
pub struct BanditEnv {
    pub means: Vec<Vec<f64>>,
    pub labels: Vec<Vec<OpKind>>,
    pub alphas: Vec<Vec<f32>>,
    noise: Normal<f64>,
    rng: ChaCha8Rng,
    pub evaluations: usize,
}

impl BanditEnv {
    pub fn new(means: Vec<Vec<f64>>, noise: f64, seed: u64) -> Result<Self> {
        let k = means.first().map_or(0, Vec::len);
        if means.iter().any(|m| m.len() != k) || k > OpKind::ALL.len() {
            return Err(invalid!("every edge needs the same number of candidates (at most 8)"));
        }
        Ok(Self {
            labels: vec![OpKind::ALL[..k].to_vec(); means.len()],
            alphas: vec![vec![0.0; k]; means.len()],
            means,
            noise: Normal::new(0.0, noise).map_err(|e| invalid!("noise: {e}"))?,
            rng: ChaCha8Rng::seed_from_u64(seed),
            evaluations: 0,
        })
    }

    /// True best candidate of each edge.
    pub fn best(&self) -> Vec<OpKind> {
        self.means
            .iter()
            .zip(&self.labels)
            .map(|(m, l)| {
                let mut b = 0;
                for (i, &v) in m.iter().enumerate() {
                    if v > m[b] {
                        b = i;
                    }
                }
                l[b]
            })
            .collect()
    }
}

impl SearchBackend for BanditEnv {
    fn edges(&self) -> usize {
        self.means.len()
    }

    fn ops(&self, edge: usize) -> Vec<OpKind> {
        self.labels[edge].clone()
    }

    fn alphas(&self, edge: usize) -> Vec<f32> {
        self.alphas[edge].clone()
    }

    fn warmup(&mut self, _: &SearchConfig, _: &mut JsonlWriter) -> Result<()> {
        Ok(())
    }

    fn evaluate(&mut self, arch: &[usize]) -> Result<f64> {
        self.evaluations += 1;
        let mean = arch.iter().zip(&self.means).map(|(&i, m)| m[i]).sum::<f64>() / arch.len() as f64;
        Ok((mean + self.noise.sample(&mut self.rng)).clamp(0.0, 1.0))
    }

    fn prune(&mut self, edge: usize, index: usize) -> Result<()> {
        if self.labels[edge].len() < 2 {
            return Err(invalid!("cannot prune the last candidate"));
        }
        self.means[edge].remove(index);
        self.labels[edge].remove(index);
        self.alphas[edge].remove(index);
        Ok(())
    }

    fn inter_round_update(&mut self, _: usize, _: &SearchConfig, _: &mut JsonlWriter) -> Result<()> {
        Ok(())
    }
}
