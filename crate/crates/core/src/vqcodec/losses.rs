use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Codebook, LossWeights, TokenFrequency, JS_EPS};
use crate::error::{Error, Result};
use crate::gradnet::{Tape, Tensor, Var};
use crate::motion::{layout, Skeleton};

/// Gumbel-Softmax temperature used for batch token frequencies.
pub const GUMBEL_TEMPERATURE: f64 = 0.5;
/// Probability clamp for the contact cross-entropy.
pub const BCE_EPS: f64 = 1e-7;

/// Source of the Gumbel perturbation in [`batch_token_frequency`].
pub enum GumbelNoise<'a> {
    Sample(&'a mut ChaCha8Rng),
    /// No perturbation: plain softmax of negative squared distances.
    Zero,
}

/// Soft codebook usage of a batch of latents `z: [S, d]` against
/// `codebook: [K, d]`: softmax over `(−‖z_s − c_k‖² + g_sk)/τ`, averaged over
/// rows, then sorted descending. The sorting permutation is taken from the
/// forward values and held fixed in the backward pass.
pub fn batch_token_frequency(
    tape: &mut Tape,
    z: Var,
    codebook: Var,
    temperature: f64,
    noise: GumbelNoise,
) -> Result<Var> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {temperature}")));
    }
    let mut logits = tape.neg_sq_dist(z, codebook)?;
    if let GumbelNoise::Sample(rng) = noise {
        let shape = tape.shape(logits).to_vec();
        let n = shape.iter().product();
        let g: Vec<f64> = (0..n)
            .map(|_| {
                let u: f64 = rng.sample(rand::distr::Open01);
                -(-u.ln()).ln()
            })
            .collect();
        logits = tape.add_const(logits, &Tensor::new(shape, g)?)?;
    }
    let scaled = tape.scale(logits, 1.0 / temperature);
    let soft = tape.softmax_rows(scaled)?;
    let freq = tape.mean_rows(soft)?;
    let vals = tape.value(freq).data();
    let mut perm: Vec<usize> = (0..vals.len()).collect();
    perm.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]));
    tape.permute(freq, &perm)
}

/// Forward-only [`batch_token_frequency`] for latents `z: [S, d]`.
pub fn frequency_values(z: &Tensor, cb: &Codebook, temperature: f64, noise: GumbelNoise) -> Result<TokenFrequency> {
    let mut tape = Tape::new();
    let zv = tape.constant(z.clone());
    let cv = tape.constant(cb.entries().clone());
    let f = batch_token_frequency(&mut tape, zv, cv, temperature, noise)?;
    TokenFrequency::new(tape.value(f).data().to_vec())
}

/// Inputs of the motion VQ-VAE objective.
pub struct MotionLossInputs<'a> {
    /// Decoder output `[B, 271, T′]` with contact channels as probabilities.
    pub m_hat: Var,
    /// Ground-truth window `[B, 271, T′]`.
    pub target: &'a Tensor,
    /// Encoder latents `[N, d]`.
    pub z: Var,
    /// Quantized codes `[N, d]`.
    pub b: Var,
}

/// Loss terms recorded on the tape; `total` is their weighted sum.
#[derive(Debug, Clone, Copy)]
pub struct MotionLosses {
    pub total: Var,
    pub recon: Var,
    pub commit: Var,
    pub contact: Var,
    pub slide: Var,
}

/// Reconstruction MSE over the whole window block, commitment
/// `‖Z − sg(B)‖²/N`, contact cross-entropy summed over the four labels and
/// averaged over frames, and the sliding penalty `Σ_i p̂_i‖v̂_foot(i)‖²`
/// averaged over frames.
pub fn motion_vq_losses(tape: &mut Tape, inp: &MotionLossInputs, w: &LossWeights) -> Result<MotionLosses> {
    w.validate()?;
    let (bsz, c, t) = inp.target.dims3()?;
    if tape.shape(inp.m_hat) != inp.target.shape() || c != layout::WIDTH {
        return Err(Error::ShapeMismatch(format!(
            "prediction {:?} vs target {:?}",
            tape.shape(inp.m_hat),
            inp.target.shape()
        )));
    }
    let (n, _) = tape.value(inp.z).dims2()?;
    if tape.shape(inp.z) != tape.shape(inp.b) {
        return Err(Error::ShapeMismatch("latents and codes differ in shape".into()));
    }
    let frames = (bsz * t) as f64;

    let target = tape.constant(inp.target.clone());
    let diff = tape.sub(inp.m_hat, target)?;
    let sq = tape.square(diff);
    let recon = tape.mean(sq);

    let sg = tape.stop_gradient(inp.b);
    let dz = tape.sub(inp.z, sg)?;
    let dz2 = tape.square(dz);
    let dz_sum = tape.sum(dz2);
    let commit = tape.scale(dz_sum, 1.0 / n.max(1) as f64);

    let mut p = Vec::with_capacity(bsz * 4 * t);
    for bi in 0..bsz {
        let base = (bi * c + layout::P) * t;
        p.extend_from_slice(&inp.target.data()[base..base + 4 * t]);
    }
    let p = Tensor::new(vec![bsz, 4, t], p)?;
    let p_hat = tape.slice_channels(inp.m_hat, layout::P, 4)?;
    let ce = tape.bce(p_hat, &p, BCE_EPS)?;
    let ce_sum = tape.sum(ce);
    let contact = tape.scale(ce_sum, 1.0 / frames);

    let mut slide_terms = Vec::with_capacity(4);
    for (i, &foot) in Skeleton::standard().foot_joints().iter().enumerate() {
        let v = tape.slice_channels(inp.m_hat, layout::j_v(foot), 3)?;
        let v2 = tape.square(v);
        let speed2 = tape.sum_channels(v2)?;
        let pi = tape.slice_channels(p_hat, i, 1)?;
        let term = tape.mul(pi, speed2)?;
        slide_terms.push(tape.sum(term));
    }
    let mut slide_sum = slide_terms[0];
    for &s in &slide_terms[1..] {
        slide_sum = tape.add(slide_sum, s)?;
    }
    let slide = tape.scale(slide_sum, 1.0 / frames);

    let parts = [(recon, w.recon), (commit, w.commit), (contact, w.contact), (slide, w.slide)];
    let total = weighted_sum(tape, &parts)?;
    Ok(MotionLosses { total, recon, commit, contact, slide })
}

fn weighted_sum(tape: &mut Tape, parts: &[(Var, f64)]) -> Result<Var> {
    let mut acc = tape.scale(parts[0].0, parts[0].1);
    for &(v, w) in &parts[1..] {
        let s = tape.scale(v, w);
        acc = tape.add(acc, s)?;
    }
    Ok(acc)
}

/// Inputs of the IMU tokenizer objective.
pub struct ImuLossInputs<'a> {
    /// IMU encoder latents `[N, d]`.
    pub z: Var,
    /// Their quantized IMU codes `[N, d]`.
    pub b_imu: Var,
    /// Frozen motion codes of the paired windows `[N, d]`.
    pub b_motion: &'a Tensor,
    /// Sorted soft IMU token frequency `[K]`.
    pub f_imu: Var,
    pub f_motion: &'a TokenFrequency,
    pub f_zipf: &'a TokenFrequency,
}

#[derive(Debug, Clone, Copy)]
pub struct ImuLosses {
    pub total: Var,
    pub code: Var,
    pub dist: Var,
    /// `JS(F_imu ‖ F_motion)`.
    pub js_imu_motion: Var,
    /// `JS(F_motion ‖ F_zipf)`, constant with respect to the IMU encoder.
    pub js_motion_zipf: Var,
}

/// Code matching `‖st(Z, B_imu) − B_motion‖²/N` (the straight-through pass
/// carries its gradient to the encoder) plus distribution matching
/// `JS(F_imu‖F_motion) + λ_zipf·JS(F_motion‖F_zipf)`.
pub fn imu_tokenizer_losses(tape: &mut Tape, inp: &ImuLossInputs, w: &LossWeights) -> Result<ImuLosses> {
    w.validate()?;
    let (n, _) = tape.value(inp.z).dims2()?;
    if tape.shape(inp.b_imu) != inp.b_motion.shape() || tape.shape(inp.z) != inp.b_motion.shape() {
        return Err(Error::ShapeMismatch(format!(
            "IMU codes {:?} vs motion codes {:?}",
            tape.shape(inp.b_imu),
            inp.b_motion.shape()
        )));
    }
    let k = tape.value(inp.f_imu).numel();
    if inp.f_motion.len() != k || inp.f_zipf.len() != k {
        return Err(Error::LengthMismatch { left: k, right: inp.f_motion.len().max(inp.f_zipf.len()) });
    }
    let st = tape.straight_through(inp.z, inp.b_imu)?;
    let bm = tape.constant(inp.b_motion.clone());
    let d = tape.sub(st, bm)?;
    let d2 = tape.square(d);
    let s = tape.sum(d2);
    let code = tape.scale(s, 1.0 / n.max(1) as f64);

    let fm = tape.constant(Tensor::new(vec![k], inp.f_motion.values().to_vec())?);
    let fz = tape.constant(Tensor::new(vec![k], inp.f_zipf.values().to_vec())?);
    let js_imu_motion = tape.js_divergence(inp.f_imu, fm, JS_EPS)?;
    let js_motion_zipf = tape.js_divergence(fm, fz, JS_EPS)?;
    let zipf = tape.scale(js_motion_zipf, w.zipf);
    let dist = tape.add(js_imu_motion, zipf)?;
    let total = weighted_sum(tape, &[(code, w.code), (dist, w.dist)])?;
    Ok(ImuLosses { total, code, dist, js_imu_motion, js_motion_zipf })
}
