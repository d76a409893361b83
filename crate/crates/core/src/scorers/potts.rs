use rand::Rng;

use crate::dist::ScoreVector;
use crate::error::{Error, Result};
use crate::scorer::{check_position, Scorer};
use crate::seq::{SeqState, TokenId, Vocabulary};

/// Pairwise Potts energy model whose local scores are exactly the
/// conditionals of the Gibbs measure `μ(x) ∝ exp(−E(x)/τ)` with
///
/// `E(x) = Σ_{i<j} J[i][j][x_i][x_j] + Σ_i h[i][x_i]`.
///
/// Couplings are stored for both orders so that `J[j][i]` is always the
/// transpose of `J[i][j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PottsGibbsScorer {
    n: usize,
    vocab: Vocabulary,
    couplings: Vec<f64>,
    fields: Vec<f64>,
}

impl PottsGibbsScorer {
    /// Zero couplings and fields over a synthetic vocabulary of size `v`.
    pub fn new(n: usize, v: usize) -> Result<Self> {
        Self::with_vocab(n, Vocabulary::synthetic(v)?)
    }

    pub fn with_vocab(n: usize, vocab: Vocabulary) -> Result<Self> {
        if n == 0 {
            return Err(Error::input("Potts model needs at least one site"));
        }
        let v = vocab.size();
        Ok(Self {
            n,
            vocab,
            couplings: vec![0.0; n * n * v * v],
            fields: vec![0.0; n * v],
        })
    }

    /// Independent uniform couplings in `[-coupling_scale, coupling_scale]`
    /// on every pair and fields in `[-field_scale, field_scale]`.
    pub fn random<R: Rng + ?Sized>(
        n: usize,
        v: usize,
        coupling_scale: f64,
        field_scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut model = Self::new(n, v)?;
        for i in 0..n {
            for j in i + 1..n {
                let m: Vec<Vec<f64>> = (0..v)
                    .map(|_| {
                        (0..v)
                            .map(|_| rng.random_range(-1.0..=1.0) * coupling_scale)
                            .collect()
                    })
                    .collect();
                model.set_coupling(i, j, &m)?;
            }
            for a in 0..v {
                model.fields[i * v + a] = rng.random_range(-1.0..=1.0) * field_scale;
            }
        }
        Ok(model)
    }

    /// Mean-field ferromagnet: `J[i][j][a][b] = −strength/n · 1[a = b]` on all pairs.
    pub fn ferromagnetic(n: usize, v: usize, strength: f64) -> Result<Self> {
        let mut model = Self::new(n, v)?;
        let w = -strength / n as f64;
        let m: Vec<Vec<f64>> = (0..v)
            .map(|a| (0..v).map(|b| if a == b { w } else { 0.0 }).collect())
            .collect();
        for i in 0..n {
            for j in i + 1..n {
                model.set_coupling(i, j, &m)?;
            }
        }
        Ok(model)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    fn v(&self) -> usize {
        self.vocab.size()
    }

    fn cidx(&self, i: usize, j: usize, a: usize, b: usize) -> usize {
        let v = self.v();
        ((i * self.n + j) * v + a) * v + b
    }

    /// Sets `J[i][j] = matrix` (rows indexed by the token at `i`) and
    /// `J[j][i]` to its transpose.
    pub fn set_coupling(&mut self, i: usize, j: usize, matrix: &[Vec<f64>]) -> Result<()> {
        let v = self.v();
        if i >= self.n || j >= self.n || i == j {
            return Err(Error::input(format!("invalid coupling pair ({i}, {j})")));
        }
        if matrix.len() != v || matrix.iter().any(|r| r.len() != v) {
            return Err(Error::input(format!("coupling matrix must be {v}×{v}")));
        }
        if matrix.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::input("coupling entries must be finite"));
        }
        for a in 0..v {
            for b in 0..v {
                let k1 = self.cidx(i, j, a, b);
                let k2 = self.cidx(j, i, b, a);
                self.couplings[k1] = matrix[a][b];
                self.couplings[k2] = matrix[a][b];
            }
        }
        Ok(())
    }

    pub fn set_field(&mut self, i: usize, field: &[f64]) -> Result<()> {
        let v = self.v();
        if i >= self.n || field.len() != v || field.iter().any(|x| !x.is_finite()) {
            return Err(Error::input(format!(
                "field for site {i} must have {v} finite entries"
            )));
        }
        self.fields[i * v..(i + 1) * v].copy_from_slice(field);
        Ok(())
    }

    pub fn coupling(&self, i: usize, j: usize, a: TokenId, b: TokenId) -> f64 {
        self.couplings[self.cidx(i, j, a as usize, b as usize)]
    }

    pub fn field(&self, i: usize, a: TokenId) -> f64 {
        self.fields[i * self.v() + a as usize]
    }

    /// Multiplies every coupling by `factor`.
    pub fn scale_couplings(&mut self, factor: f64) {
        self.couplings.iter_mut().for_each(|c| *c *= factor);
    }

    /// Full energy `E(x)`.
    pub fn energy(&self, ids: &[TokenId]) -> f64 {
        let mut e = 0.0;
        for i in 0..self.n {
            e += self.field(i, ids[i]);
            for j in i + 1..self.n {
                e += self.coupling(i, j, ids[i], ids[j]);
            }
        }
        e
    }
}

impl Scorer for PottsGibbsScorer {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn local_scores(&self, state: &SeqState, pos: usize) -> Result<ScoreVector> {
        check_position(state, pos, Some(self.n))?;
        let v = self.v();
        let ids = state.ids();
        let mut scores: Vec<f64> = self.fields[pos * v..(pos + 1) * v]
            .iter()
            .map(|h| -h)
            .collect();
        for (j, &b) in ids.iter().enumerate() {
            if j == pos {
                continue;
            }
            let b = b as usize;
            for (a, s) in scores.iter_mut().enumerate() {
                *s -= self.couplings[self.cidx(pos, j, a, b)];
            }
        }
        Ok(ScoreVector::from_finite(scores))
    }

    fn name(&self) -> String {
        format!("potts(n={}, V={})", self.n, self.v())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn decoupled_model_scores_zero() {
        let m = PottsGibbsScorer::new(3, 4).unwrap();
        let x = SeqState::new(vec![1, 2, 3], 4).unwrap();
        for i in 0..3 {
            assert!(m.local_scores(&x, i).unwrap().iter().all(|&s| s == 0.0));
        }
    }

    #[test]
    fn two_site_substitution() {
        let mut m = PottsGibbsScorer::new(2, 2).unwrap();
        m.set_coupling(0, 1, &[vec![0.0, 1.0], vec![1.0, 0.0]])
            .unwrap();
        let x = SeqState::new(vec![1, 0], 2).unwrap();
        assert_eq!(&*m.local_scores(&x, 0).unwrap(), &[0.0, -1.0]);
        assert_eq!(m.coupling(1, 0, 0, 1), 1.0);
    }

    #[test]
    fn score_differences_match_energy_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = PottsGibbsScorer::random(4, 3, 1.0, 0.5, &mut rng).unwrap();
        for idx in 0..81 {
            let ids = crate::seq::ids_from_index(idx, 4, 3);
            let x = SeqState::new(ids.clone(), 3).unwrap();
            for i in 0..4 {
                let s = m.local_scores(&x, i).unwrap();
                for a in 0..3u32 {
                    for b in 0..3u32 {
                        let mut xa = ids.clone();
                        xa[i] = a;
                        let mut xb = ids.clone();
                        xb[i] = b;
                        let oracle = -(m.energy(&xa) - m.energy(&xb));
                        assert!((s[a as usize] - s[b as usize] - oracle).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn rejects_bad_input() {
        let mut m = PottsGibbsScorer::new(2, 2).unwrap();
        assert!(m.set_coupling(0, 0, &[vec![0.0; 2], vec![0.0; 2]]).is_err());
        assert!(m.set_coupling(0, 1, &[vec![0.0; 3]]).is_err());
        let x = SeqState::new(vec![0, 0, 0], 2).unwrap();
        assert!(m.local_scores(&x, 0).is_err());
        let y = SeqState::new(vec![0, 0], 2).unwrap();
        assert!(m.local_scores(&y, 2).is_err());
    }
}
