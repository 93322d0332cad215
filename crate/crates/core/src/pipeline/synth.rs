use std::f64::consts::TAU;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::RawVolume;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthKind {
    /// Sum of a few low-frequency sinusoids around a positive offset.
    Smooth,
    /// Smooth plus seeded Gaussian noise.
    Turbulent,
    /// Every sample equals the fill value.
    Constant,
}

impl FromStr for SynthKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "smooth" => Ok(Self::Smooth),
            "turbulent" => Ok(Self::Turbulent),
            "constant" => Ok(Self::Constant),
            other => Err(format!("unknown volume kind '{other}'")),
        }
    }
}

struct Wave {
    amplitude: f64,
    freq: Vec<f64>,
    phase: f64,
}

/// Deterministic synthetic field over `extents` (fill value 0).
pub fn synth_volume(extents: &[u64], seed: u64, kind: SynthKind) -> RawVolume {
    let n: u64 = extents.iter().product();
    let fill = 0.0f32;
    if kind == SynthKind::Constant {
        return RawVolume::new("value", 0, extents.to_vec(), fill, vec![fill; n as usize]).expect("extents are valid");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let waves: Vec<Wave> = (0..4)
        .map(|_| Wave {
            amplitude: rng.random_range(1.0..4.0),
            freq: extents.iter().map(|_| rng.random_range(0.5..2.5)).collect(),
            phase: rng.random_range(0.0..TAU),
        })
        .collect();
    let noise = Normal::new(0.0, 0.25).expect("valid sigma");
    let mut data = Vec::with_capacity(n as usize);
    let mut coords = vec![0u64; extents.len()];
    for _ in 0..n {
        let mut v = 15.0;
        for w in &waves {
            let arg: f64 =
                coords.iter().zip(extents).zip(&w.freq).map(|((c, e), f)| TAU * f * *c as f64 / *e as f64).sum();
            v += w.amplitude * (arg + w.phase).sin();
        }
        if kind == SynthKind::Turbulent {
            v += noise.sample(&mut rng);
        }
        data.push(v as f32);
        for a in (0..coords.len()).rev() {
            coords[a] += 1;
            if coords[a] < extents[a] {
                break;
            }
            coords[a] = 0;
        }
    }
    RawVolume::new("value", 0, extents.to_vec(), fill, data).expect("extents are valid")
}
