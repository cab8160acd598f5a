//! Synthetic desk-scale data: labelled scene clips and Gaussian embedding clusters.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::train::LabeledEmbedding;
use super::{AudioClip, TARGET_RATE};
use crate::model::SceneClass;

/// Default clip length: one classifier window.
pub const CLIP_SAMPLES: usize = 15_600;

/// Harmonic voiced signal with formant shaping and syllable-rate amplitude modulation.
fn speech_like(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    let sr = TARGET_RATE as f64;
    let f0 = rng.gen_range(100.0..240.0);
    let f1 = rng.gen_range(450.0..850.0);
    let f2 = rng.gen_range(1100.0..2300.0);
    let syllable_hz = rng.gen_range(3.0..6.0);
    let level = rng.gen_range(0.08..0.3);
    let harmonics: Vec<(f64, f64, f64)> = (1..)
        .map(|k| k as f64 * f0)
        .take_while(|&f| f < 3800.0)
        .map(|f| {
            let formant = (-((f - f1) / 250.0).powi(2)).exp() + 0.6 * (-((f - f2) / 350.0).powi(2)).exp();
            (f, (0.15 + formant) * f0 / f, rng.gen_range(0.0..2.0 * PI))
        })
        .collect();
    let norm: f64 = harmonics.iter().map(|h| h.1).sum();
    let vibrato = rng.gen_range(0.0..0.03);
    let floor = Normal::new(0.0, 0.002).unwrap();
    (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            let bend = 1.0 + vibrato * (2.0 * PI * 1.3 * t).sin();
            let env = (0.5 - 0.5 * (2.0 * PI * syllable_hz * t).cos()).powf(1.5);
            let voiced: f64 = harmonics.iter().map(|&(f, a, ph)| a * (2.0 * PI * f * bend * t + ph).sin()).sum();
            (level * env * voiced / norm + floor.sample(rng)) as f32
        })
        .collect()
}

/// Stationary broadband noise through a random one-pole low-pass.
fn noise_like(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    let level = rng.gen_range(0.05..0.35);
    let pole: f64 = rng.gen_range(0.0..0.9);
    let mut y = 0.0;
    (0..n)
        .map(|_| {
            let x: f64 = StandardNormal.sample(rng);
            y = pole * y + (1.0 - pole) * x;
            (level * y / (1.0 - pole).sqrt()).clamp(-1.0, 1.0) as f32
        })
        .collect()
}

/// Digital silence or a very faint noise floor.
fn quiet_like(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    if rng.gen_bool(0.3) {
        return vec![0.0; n];
    }
    let level = 10f64.powf(rng.gen_range(-5.0..-3.5));
    (0..n)
        .map(|_| {
            let x: f64 = StandardNormal.sample(rng);
            (level * x) as f32
        })
        .collect()
}

pub fn synth_clip(class: SceneClass, rng: &mut ChaCha8Rng, samples: usize) -> AudioClip {
    let data = match class {
        SceneClass::Conversation => speech_like(rng, samples),
        SceneClass::Noise => noise_like(rng, samples),
        SceneClass::Quiet => quiet_like(rng, samples),
    };
    AudioClip::mono(data, TARGET_RATE)
}

/// `per_class` clips of each class, interleaved, with ids `{class}_{k:04}`.
pub fn synth_clips(per_class: usize, seed: u64) -> Vec<(AudioClip, SceneClass)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(per_class * 3);
    for k in 0..per_class {
        for class in SceneClass::ALL {
            let clip = synth_clip(class, &mut rng, CLIP_SAMPLES).with_id(format!("{}_{k:04}", class.as_str()));
            out.push((clip, class));
        }
    }
    out
}

/// Isotropic Gaussian clusters with unit variance whose means are pairwise
/// `separation` apart: class c has mean (separation / sqrt 2) * e_c.
pub fn gaussian_clusters(dim: usize, per_class: usize, separation: f64, seed: u64) -> Vec<LabeledEmbedding> {
    assert!(dim >= 3, "need at least one axis per class");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offset = separation / 2f64.sqrt();
    let mut out = Vec::with_capacity(per_class * 3);
    for _ in 0..per_class {
        for class in SceneClass::ALL {
            let mut e: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            e[class.index()] += offset;
            out.push(LabeledEmbedding::new(e, class));
        }
    }
    out
}
