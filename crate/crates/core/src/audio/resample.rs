//! Rational-ratio polyphase resampler with a Kaiser-windowed sinc kernel.

use super::{AudioClip, AudioError};

pub const TARGET_RATE: u32 = 16_000;

const TAPS_PER_PHASE: usize = 16;
const KAISER_BETA: f64 = 6.0;

/// Converts any clip to 16 kHz mono. Stereo is averaged before rate conversion;
/// a clip that is already 16 kHz mono is returned unchanged.
pub fn resample_to_16k_mono(clip: &AudioClip) -> Result<AudioClip, AudioError> {
    clip.validate()?;
    if clip.is_16k_mono() {
        return Ok(clip.clone());
    }
    let mono: Vec<f32> = if clip.channels == 2 {
        clip.samples.chunks_exact(2).map(|lr| 0.5 * (lr[0] + lr[1])).collect()
    } else {
        clip.samples.clone()
    };
    let samples = if clip.sample_rate == TARGET_RATE {
        mono
    } else {
        Polyphase::new(clip.sample_rate, TARGET_RATE).process(&mono)
    };
    Ok(AudioClip { id: clip.id.clone(), samples, sample_rate: TARGET_RATE, channels: 1 })
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Zeroth-order modified Bessel function of the first kind (power series).
fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..64 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

struct Polyphase {
    up: u64,
    down: u64,
    /// `up` rows of `TAPS_PER_PHASE` coefficients.
    table: Vec<f64>,
}

impl Polyphase {
    fn new(from: u32, to: u32) -> Self {
        let g = gcd(from as u64, to as u64);
        let up = to as u64 / g;
        let down = from as u64 / g;
        // Cutoff in cycles per input sample: the lower of the two Nyquist limits.
        let cutoff = 0.5 * (to as f64 / from as f64).min(1.0);
        let half_width = TAPS_PER_PHASE as f64 / 2.0;
        let norm = bessel_i0(KAISER_BETA);
        let mut table = Vec::with_capacity(up as usize * TAPS_PER_PHASE);
        for phase in 0..up {
            let frac = phase as f64 / up as f64;
            let start = table.len();
            for k in 0..TAPS_PER_PHASE {
                // Tap k reads input sample floor(t) - 7 + k.
                let d = k as f64 - (half_width - 1.0) - frac;
                let r = d / half_width;
                let window = if r.abs() >= 1.0 { 0.0 } else { bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / norm };
                table.push(2.0 * cutoff * sinc(2.0 * cutoff * d) * window);
            }
            let sum: f64 = table[start..].iter().sum();
            table[start..].iter_mut().for_each(|c| *c /= sum);
        }
        Self { up, down, table }
    }

    fn process(&self, input: &[f32]) -> Vec<f32> {
        let n_in = input.len() as u64;
        let n_out = (n_in * self.up + self.down / 2) / self.down;
        let lead = TAPS_PER_PHASE as i64 / 2 - 1;
        (0..n_out)
            .map(|n| {
                let pos = n * self.down;
                let base = (pos / self.up) as i64 - lead;
                let phase = (pos % self.up) as usize;
                let coeffs = &self.table[phase * TAPS_PER_PHASE..(phase + 1) * TAPS_PER_PHASE];
                let acc: f64 = coeffs
                    .iter()
                    .enumerate()
                    .filter_map(|(k, c)| {
                        let idx = base + k as i64;
                        (idx >= 0 && (idx as u64) < n_in).then(|| c * input[idx as usize] as f64)
                    })
                    .sum();
                acc as f32
            })
            .collect()
    }
}
