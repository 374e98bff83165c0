//! Codebooks, quantization, EMA updates, token frequency distributions and
//! the training objectives of both tokenizers.

mod losses;

pub use losses::{
    batch_token_frequency, frequency_values, imu_tokenizer_losses, motion_vq_losses, GumbelNoise, ImuLossInputs,
    ImuLosses, MotionLossInputs, MotionLosses, GUMBEL_TEMPERATURE,
};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gradnet::Tensor;

/// Accumulator seed `ε` used when EMA statistics are (re)started from entries.
pub const EMA_SEED_EPS: f64 = 1e-5;
/// Consecutive low-usage updates before an entry is reinitialized.
pub const DEAD_PATIENCE: u32 = 50;
/// Usage below this fraction of the uniform share counts as dead.
pub const DEAD_FRACTION: f64 = 1e-3;
/// Flooring applied to frequency bins before the JS divergence.
pub const JS_EPS: f64 = 1e-12;

/// `K × d` code table with EMA accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    entries: Tensor,
    sigma: Vec<f64>,
    delta: Vec<f64>,
    gamma: f64,
    dead: Vec<u32>,
}

impl Codebook {
    /// Standard-normal entries with seeded accumulators.
    pub fn new(k: usize, dim: usize, gamma: f64, rng: &mut ChaCha8Rng) -> Result<Self> {
        let data = (0..k * dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        Self::from_entries(Tensor::new(vec![k, dim], data)?, gamma)
    }

    /// Wraps given entries, seeding `σ = ε·c`, `δ = ε`.
    pub fn from_entries(entries: Tensor, gamma: f64) -> Result<Self> {
        let (k, _) = entries.dims2()?;
        if k < 2 {
            return Err(Error::InvalidArgument(format!("codebook needs at least 2 entries, got {k}")));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidArgument(format!("gamma must lie in (0, 1), got {gamma}")));
        }
        if entries.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("codebook entries must be finite".into()));
        }
        let sigma = entries.data().iter().map(|c| c * EMA_SEED_EPS).collect();
        Ok(Self { entries, sigma, delta: vec![EMA_SEED_EPS; k], gamma, dead: vec![0; k] })
    }

    /// Restores a codebook with explicit accumulator state.
    pub fn from_parts(entries: Tensor, sigma: Vec<f64>, delta: Vec<f64>, gamma: f64, dead: Vec<u32>) -> Result<Self> {
        let mut cb = Self::from_entries(entries, gamma)?;
        if sigma.len() != cb.sigma.len() || delta.len() != cb.k() || dead.len() != cb.k() {
            return Err(Error::ShapeMismatch("codebook accumulators do not match entries".into()));
        }
        if delta.iter().any(|d| !(*d > 0.0)) {
            return Err(Error::InvalidArgument("EMA counts must be positive".into()));
        }
        cb.sigma = sigma;
        cb.delta = delta;
        cb.dead = dead;
        Ok(cb)
    }

    pub fn k(&self) -> usize {
        self.entries.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.entries.shape()[1]
    }

    pub fn entries(&self) -> &Tensor {
        &self.entries
    }

    pub fn entry(&self, k: usize) -> &[f64] {
        &self.entries.data()[k * self.dim()..(k + 1) * self.dim()]
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn delta(&self) -> &[f64] {
        &self.delta
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn dead_counters(&self) -> &[u32] {
        &self.dead
    }

    /// SHA-256 over the shape and the little-endian entries.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update((self.k() as u64).to_le_bytes());
        h.update((self.dim() as u64).to_le_bytes());
        for v in self.entries.data() {
            h.update(v.to_le_bytes());
        }
        h.finalize().into()
    }

    fn check_rows(&self, z: &Tensor) -> Result<usize> {
        let (s, d) = z.dims2()?;
        if d != self.dim() {
            return Err(Error::ShapeMismatch(format!("latent dim {d} vs codebook dim {}", self.dim())));
        }
        Ok(s)
    }

    /// Lloyd's k-means over the rows of `z`, starting from distinct random
    /// rows; empty clusters keep their previous centre. Restarts the EMA
    /// accumulators from the result.
    pub fn kmeans_init(&mut self, z: &Tensor, iterations: usize, rng: &mut ChaCha8Rng) -> Result<()> {
        let s = self.check_rows(z)?;
        if s == 0 {
            return Err(Error::EmptyDataset);
        }
        let (k, d) = (self.k(), self.dim());
        let mut order: Vec<usize> = (0..s).collect();
        for i in (1..s).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let mut centres = vec![0.0; k * d];
        for j in 0..k {
            let row = order[j % s];
            centres[j * d..(j + 1) * d].copy_from_slice(&z.data()[row * d..(row + 1) * d]);
            if j >= s {
                // more centres than rows: jitter duplicates apart
                for v in &mut centres[j * d..(j + 1) * d] {
                    *v += 1e-3 * rng.sample::<f64, _>(StandardNormal);
                }
            }
        }
        self.entries = Tensor::new(vec![k, d], centres)?;
        for _ in 0..iterations {
            let (idx, _) = quantize(z, self)?;
            let mut sums = vec![0.0; k * d];
            let mut counts = vec![0usize; k];
            for (r, &j) in idx.iter().enumerate() {
                counts[j] += 1;
                for c in 0..d {
                    sums[j * d + c] += z.data()[r * d + c];
                }
            }
            let e = self.entries.data_mut();
            for j in 0..k {
                if counts[j] > 0 {
                    for c in 0..d {
                        e[j * d + c] = sums[j * d + c] / counts[j] as f64;
                    }
                }
            }
        }
        self.sigma = self.entries.data().iter().map(|c| c * EMA_SEED_EPS).collect();
        self.delta = vec![EMA_SEED_EPS; k];
        self.dead = vec![0; k];
        Ok(())
    }

    /// One EMA step in sum form: `σ_k ← γσ_k + (1−γ)Σz`, `δ_k ← γδ_k + (1−γ)n_k`,
    /// `c_k ← σ_k/δ_k`. Entries with no assignment keep their exact value.
    pub fn ema_update(&mut self, z: &Tensor, indices: &[usize]) -> Result<()> {
        let s = self.check_rows(z)?;
        if indices.len() != s {
            return Err(Error::LengthMismatch { left: indices.len(), right: s });
        }
        let (k, d, g) = (self.k(), self.dim(), self.gamma);
        if let Some(&bad) = indices.iter().find(|&&i| i >= k) {
            return Err(Error::OutOfRange(format!("token {bad} of {k}")));
        }
        let mut sums = vec![0.0; k * d];
        let mut counts = vec![0usize; k];
        for (r, &j) in indices.iter().enumerate() {
            counts[j] += 1;
            for c in 0..d {
                sums[j * d + c] += z.data()[r * d + c];
            }
        }
        let dead_level = DEAD_FRACTION * s as f64 / k as f64;
        let entries = self.entries.data_mut();
        for j in 0..k {
            self.delta[j] = g * self.delta[j] + (1.0 - g) * counts[j] as f64;
            for c in 0..d {
                let i = j * d + c;
                self.sigma[i] = g * self.sigma[i] + (1.0 - g) * sums[i];
                if counts[j] > 0 {
                    entries[i] = self.sigma[i] / self.delta[j];
                }
            }
            if self.delta[j] < dead_level {
                self.dead[j] += 1;
            } else {
                self.dead[j] = 0;
            }
        }
        Ok(())
    }

    /// Moves every entry unused for [`DEAD_PATIENCE`] updates onto a random
    /// row of `z`, giving it the uniform usage share. Returns how many moved.
    pub fn reinit_dead(&mut self, z: &Tensor, rng: &mut ChaCha8Rng) -> Result<usize> {
        let s = self.check_rows(z)?;
        if s == 0 {
            return Ok(0);
        }
        let (k, d) = (self.k(), self.dim());
        let share = s as f64 / k as f64;
        let mut moved = 0;
        for j in 0..k {
            if self.dead[j] < DEAD_PATIENCE {
                continue;
            }
            let row = rng.random_range(0..s);
            let src = &z.data()[row * d..(row + 1) * d];
            self.entries.data_mut()[j * d..(j + 1) * d].copy_from_slice(src);
            for c in 0..d {
                self.sigma[j * d + c] = share * src[c];
            }
            self.delta[j] = share;
            self.dead[j] = 0;
            moved += 1;
        }
        Ok(moved)
    }
}

/// Nearest entry for every row of `z: [S, d]` (squared Euclidean distance,
/// ties to the lowest index) and the gathered codes `[S, d]`.
pub fn quantize(z: &Tensor, cb: &Codebook) -> Result<(Vec<usize>, Tensor)> {
    let s = cb.check_rows(z)?;
    let (k, d) = (cb.k(), cb.dim());
    let e = cb.entries.data();
    let idx = crate::par::map_range(s, |r| {
        let zr = &z.data()[r * d..(r + 1) * d];
        let mut best = (0, f64::INFINITY);
        for j in 0..k {
            let dist: f64 = zr.iter().zip(&e[j * d..(j + 1) * d]).map(|(a, b)| (a - b) * (a - b)).sum();
            if dist < best.1 {
                best = (j, dist);
            }
        }
        best.0
    });
    let codes = gather(cb, &idx)?;
    Ok((idx, codes))
}

/// Entries `indices` stacked as `[len, d]`.
pub fn gather(cb: &Codebook, indices: &[usize]) -> Result<Tensor> {
    let d = cb.dim();
    let mut data = Vec::with_capacity(indices.len() * d);
    for &i in indices {
        if i >= cb.k() {
            return Err(Error::OutOfRange(format!("token {i} of {}", cb.k())));
        }
        data.extend_from_slice(cb.entry(i));
    }
    Tensor::new(vec![indices.len(), d], data)
}

/// Hard-assignment perplexity `exp(−Σ f ln f)`, in `[1, K]`.
pub fn perplexity(indices: &[usize], k: usize) -> f64 {
    if indices.is_empty() {
        return 1.0;
    }
    let mut counts = vec![0usize; k];
    for &i in indices {
        counts[i] += 1;
    }
    let n = indices.len() as f64;
    let h: f64 = counts.iter().filter(|&&c| c > 0).map(|&c| c as f64 / n).map(|f| -f * f.ln()).sum();
    h.exp().clamp(1.0, k as f64)
}

/// A probability vector sorted in descending order.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenFrequency(Vec<f64>);

impl TokenFrequency {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("empty frequency vector".into()));
        }
        if values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument("frequencies must be finite and non-negative".into()));
        }
        let s: f64 = values.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("frequencies sum to {s}")));
        }
        if values.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::InvalidArgument("frequencies must be non-increasing".into()));
        }
        Ok(Self(values))
    }

    /// Sorts descending and normalizes non-negative weights.
    pub fn from_weights(mut values: Vec<f64>) -> Result<Self> {
        let s: f64 = values.iter().sum();
        if !(s > 0.0) {
            return Err(Error::InvalidArgument("weights must have a positive sum".into()));
        }
        values.iter_mut().for_each(|v| *v /= s);
        values.sort_by(|a, b| b.total_cmp(a));
        Self::new(values)
    }

    /// Sorted histogram of hard assignments.
    pub fn from_indices(indices: &[usize], k: usize) -> Result<Self> {
        let mut counts = vec![0.0; k];
        for &i in indices {
            *counts.get_mut(i).ok_or_else(|| Error::OutOfRange(format!("token {i} of {k}")))? += 1.0;
        }
        Self::from_weights(counts)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Zipf target parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZipfParams {
    pub alpha: f64,
    pub beta: f64,
    pub k: usize,
}

impl ZipfParams {
    pub fn new(alpha: f64, beta: f64, k: usize) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) || !(beta > -1.0 && beta.is_finite()) || k == 0 {
            return Err(Error::InvalidArgument(format!("invalid Zipf parameters alpha={alpha} beta={beta} k={k}")));
        }
        Ok(Self { alpha, beta, k })
    }

    /// `α = 1`, `β = 2.7`.
    pub fn standard(k: usize) -> Self {
        Self { alpha: 1.0, beta: 2.7, k }
    }
}

/// Frequencies proportional to `1/(k+β)^α` for ranks `k = 1..K`.
pub fn zipf_target(zp: &ZipfParams) -> TokenFrequency {
    let w: Vec<f64> = (1..=zp.k).map(|k| (k as f64 + zp.beta).powf(-zp.alpha)).collect();
    let s: f64 = w.iter().sum();
    TokenFrequency(w.into_iter().map(|v| v / s).collect())
}

/// Jensen–Shannon divergence in nats after flooring bins at [`JS_EPS`] and
/// renormalizing.
pub fn js_divergence(p: &TokenFrequency, q: &TokenFrequency) -> Result<f64> {
    js_divergence_raw(p.values(), q.values())
}

/// [`js_divergence`] on arbitrary non-negative vectors.
pub fn js_divergence_raw(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch { left: p.len(), right: q.len() });
    }
    use crate::gradnet::tape::{floor_normalize, js_normalized};
    Ok(js_normalized(&floor_normalize(p, JS_EPS), &floor_normalize(q, JS_EPS)))
}

/// Objective weights of both training stages.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub recon: f64,
    pub commit: f64,
    pub contact: f64,
    pub slide: f64,
    pub code: f64,
    pub dist: f64,
    pub zipf: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { recon: 1.0, commit: 0.02, contact: 0.01, slide: 0.01, code: 1.0, dist: 1.0, zipf: 0.2 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.recon, self.commit, self.contact, self.slide, self.code, self.dist, self.zipf];
        if all.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::ConfigInvalid(format!("loss weights must be finite and >= 0: {self:?}")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn t2(rows: usize, cols: usize, v: &[f64]) -> Tensor {
        Tensor::new(vec![rows, cols], v.to_vec()).unwrap()
    }

    #[test]
    fn quantize_small_cases() {
        let cb = Codebook::from_entries(t2(2, 2, &[0.0, 0.0, 1.0, 1.0]), 0.99).unwrap();
        let (idx, b) = quantize(&t2(1, 2, &[0.2, 0.1]), &cb).unwrap();
        assert_eq!(idx, vec![0]);
        assert_eq!(b.data(), &[0.0, 0.0]);
        // exact tie goes to the lower index
        let (idx, _) = quantize(&t2(1, 2, &[0.5, 0.5]), &cb).unwrap();
        assert_eq!(idx, vec![0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cb = Codebook::new(8, 3, 0.99, &mut rng).unwrap();
        let z = t2(1, 3, cb.entry(5));
        let (idx, b) = quantize(&z, &cb).unwrap();
        assert_eq!(idx, vec![5]);
        assert_eq!(b.data(), cb.entry(5));
        assert!(quantize(&t2(1, 2, &[0.0, 0.0]), &cb).is_err());
    }

    #[test]
    fn ema_untouched_entries_keep_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut cb = Codebook::new(4, 2, 0.99, &mut rng).unwrap();
        let before = cb.clone();
        cb.ema_update(&t2(1, 2, &[0.3, -0.2]), &[2]).unwrap();
        for k in [0, 1, 3] {
            assert_eq!(cb.entry(k), before.entry(k));
            assert_eq!(cb.delta()[k], 0.99 * before.delta()[k]);
        }
        assert_ne!(cb.entry(2), before.entry(2));
    }

    #[test]
    fn ema_single_step_closed_form() {
        let c0 = [0.7, -1.1];
        let z = [0.2, 0.5];
        let mut cb = Codebook::from_entries(t2(2, 2, &[c0[0], c0[1], 5.0, 5.0]), 0.99).unwrap();
        cb.ema_update(&t2(1, 2, &z), &[0]).unwrap();
        let e = EMA_SEED_EPS;
        for c in 0..2 {
            let want = (0.99 * e * c0[c] + 0.01 * z[c]) / (0.99 * e + 0.01);
            assert!((cb.entry(0)[c] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn ema_converges_to_constant_assignment() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut cb = Codebook::new(3, 4, 0.99, &mut rng).unwrap();
        let z = t2(1, 4, &[0.1, -0.4, 2.0, 0.0]);
        for _ in 0..1000 {
            cb.ema_update(&z, &[1]).unwrap();
        }
        let err: f64 = cb.entry(1).iter().zip(z.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn dead_entries_are_reseeded() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut cb = Codebook::new(4, 2, 0.9, &mut rng).unwrap();
        let z = t2(2, 2, &[0.0, 0.0, 0.1, 0.1]);
        for _ in 0..DEAD_PATIENCE {
            assert_eq!(cb.reinit_dead(&z, &mut rng).unwrap(), 0);
            cb.ema_update(&z, &[0, 0]).unwrap();
        }
        assert_eq!(cb.reinit_dead(&z, &mut rng).unwrap(), 3);
        for k in 1..4 {
            assert!(cb.entry(k) == &[0.0, 0.0] || cb.entry(k) == &[0.1, 0.1]);
            assert_eq!(cb.delta()[k], 0.5);
        }
    }

    #[test]
    fn kmeans_separates_clusters() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut rows = Vec::new();
        for i in 0..60 {
            let c = [(-5.0, 0.0), (5.0, 0.0), (0.0, 5.0)][i % 3];
            rows.push(c.0 + 0.01 * (i as f64).sin());
            rows.push(c.1 + 0.01 * (i as f64).cos());
        }
        let z = t2(60, 2, &rows);
        let mut cb = Codebook::new(3, 2, 0.99, &mut rng).unwrap();
        cb.kmeans_init(&z, 10, &mut rng).unwrap();
        let (idx, _) = quantize(&z, &cb).unwrap();
        let mut used = idx.clone();
        used.sort();
        used.dedup();
        assert_eq!(used.len(), 3);
        assert!((perplexity(&idx, 3) - 3.0).abs() < 1e-9);
    }

    #[test]
    fn zipf_values() {
        let f = zipf_target(&ZipfParams::standard(3));
        let w = [1.0 / 3.7, 1.0 / 4.7, 1.0 / 5.7];
        let s: f64 = w.iter().sum();
        for (a, b) in f.values().iter().zip(w) {
            assert!((a - b / s).abs() < 1e-12);
        }
        assert!((f.values()[0] - 0.4105).abs() < 1e-3);
        let u = zipf_target(&ZipfParams::new(0.0, 2.7, 5).unwrap());
        assert!(u.values().iter().all(|v| (v - 0.2).abs() < 1e-15));
        let z = zipf_target(&ZipfParams::standard(64));
        assert!(z.values().windows(2).all(|w| w[1] < w[0]));
        assert!(TokenFrequency::new(z.values().to_vec()).is_ok());
        assert!(ZipfParams::new(-0.1, 2.7, 4).is_err());
        assert!(ZipfParams::new(1.0, -1.0, 4).is_err());
    }

    #[test]
    fn js_limits() {
        let p = TokenFrequency::new(vec![0.5, 0.3, 0.2]).unwrap();
        assert!(js_divergence(&p, &p).unwrap().abs() < 1e-12);
        let a = TokenFrequency::new(vec![1.0, 0.0]).unwrap();
        let b = js_divergence_raw(&[0.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((b - std::f64::consts::LN_2).abs() < 1e-9);
        assert!(js_divergence(&a, &TokenFrequency::new(vec![1.0, 0.0, 0.0]).unwrap()).is_err());
    }

    #[test]
    fn token_frequency_validation() {
        assert!(TokenFrequency::new(vec![0.4, 0.6]).is_err());
        assert!(TokenFrequency::new(vec![0.6, 0.3]).is_err());
        let h = TokenFrequency::from_indices(&[2, 2, 0, 2], 3).unwrap();
        assert_eq!(h.values(), &[0.75, 0.25, 0.0]);
        assert!(TokenFrequency::from_indices(&[3], 3).is_err());
    }

    #[test]
    fn perplexity_bounds() {
        assert_eq!(perplexity(&[1, 1, 1], 4), 1.0);
        assert!((perplexity(&[0, 1, 2, 3], 4) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn digest_tracks_entries() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = Codebook::new(4, 2, 0.99, &mut rng).unwrap();
        let mut b = a.clone();
        assert_eq!(a.digest(), b.digest());
        b.ema_update(&t2(1, 2, &[9.0, 9.0]), &[0]).unwrap();
        assert_ne!(a.digest(), b.digest());
    }
}
