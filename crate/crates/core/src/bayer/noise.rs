//! Synthetic degradations in linear raw space. Noise is added before the
//! final clamp to [0, 1].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::RawImage;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NoiseModel {
    /// Additive white Gaussian noise with standard deviation `sigma`.
    Awgn { sigma: f64 },
    /// Additive uniform noise on `[−amplitude, amplitude]`.
    Uniform { amplitude: f64 },
    /// Heteroscedastic Gaussian with variance `shot·v + read²`.
    ShotRead { shot: f64, read: f64 },
}

impl NoiseModel {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            NoiseModel::Awgn { sigma } => sigma >= 0.0,
            NoiseModel::Uniform { amplitude } => amplitude >= 0.0,
            NoiseModel::ShotRead { shot, read } => shot >= 0.0 && read >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Argument(format!("noise parameters must be non-negative: {self:?}")))
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            NoiseModel::Awgn { .. } => "awgn",
            NoiseModel::Uniform { .. } => "uniform",
            NoiseModel::ShotRead { .. } => "shotread",
        }
    }

    /// `key=value` list, e.g. `sigma=0.1` or `shot=0.01,read=0.002`.
    pub fn params_string(&self) -> String {
        match *self {
            NoiseModel::Awgn { sigma } => format!("sigma={sigma}"),
            NoiseModel::Uniform { amplitude } => format!("amplitude={amplitude}"),
            NoiseModel::ShotRead { shot, read } => format!("shot={shot},read={read}"),
        }
    }

    /// Inverse of [`kind`](Self::kind) + [`params_string`](Self::params_string).
    pub fn parse(kind: &str, params: &str) -> Result<Self> {
        let mut sigma = None;
        let mut amplitude = None;
        let mut shot = None;
        let mut read = None;
        for item in params.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| Error::Argument(format!("noise parameter {item:?} is not key=value")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::Argument(format!("noise parameter {item:?} is not numeric")))?;
            let slot = match k.trim() {
                "sigma" => &mut sigma,
                "amplitude" => &mut amplitude,
                "shot" => &mut shot,
                "read" => &mut read,
                other => return Err(Error::Argument(format!("unknown noise parameter `{other}`"))),
            };
            *slot = Some(v);
        }
        let missing = |name: &str| Error::Argument(format!("{kind} noise needs `{name}`"));
        let model = match kind {
            "awgn" if amplitude.is_none() && shot.is_none() && read.is_none() => NoiseModel::Awgn {
                sigma: sigma.ok_or_else(|| missing("sigma"))?,
            },
            "uniform" if sigma.is_none() && shot.is_none() && read.is_none() => NoiseModel::Uniform {
                amplitude: amplitude.ok_or_else(|| missing("amplitude"))?,
            },
            "shotread" if sigma.is_none() && amplitude.is_none() => NoiseModel::ShotRead {
                shot: shot.ok_or_else(|| missing("shot"))?,
                read: read.ok_or_else(|| missing("read"))?,
            },
            "awgn" | "uniform" | "shotread" => {
                return Err(Error::Argument(format!("parameters {params:?} do not belong to {kind} noise")))
            }
            other => return Err(Error::Argument(format!("unknown noise kind `{other}`"))),
        };
        model.validate()?;
        Ok(model)
    }

    /// Clean values plus noise, before clamping.
    pub fn sample_unclamped(&self, clean: &RawImage, seed: u64) -> Result<Vec<f64>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = clean
            .data()
            .iter()
            .map(|&v| {
                let v = v as f64;
                let n = match *self {
                    NoiseModel::Awgn { sigma } => sigma * rng.sample::<f64, _>(StandardNormal),
                    NoiseModel::Uniform { amplitude } => {
                        if amplitude == 0.0 {
                            0.0
                        } else {
                            rng.gen_range(-amplitude..amplitude)
                        }
                    }
                    NoiseModel::ShotRead { shot, read } => {
                        let var = (shot * v).max(0.0) + read * read;
                        var.sqrt() * rng.sample::<f64, _>(StandardNormal)
                    }
                };
                v + n
            })
            .collect();
        Ok(out)
    }

    pub fn apply(&self, clean: &RawImage, seed: u64) -> Result<RawImage> {
        let noisy = self.sample_unclamped(clean, seed)?;
        RawImage::new(
            clean.height(),
            clean.width(),
            noisy.into_iter().map(|v| v.clamp(0.0, 1.0) as f32).collect(),
        )
    }
}

pub fn add_awgn(raw: &RawImage, sigma: f64, seed: u64) -> Result<RawImage> {
    NoiseModel::Awgn { sigma }.apply(raw, seed)
}

pub fn add_uniform(raw: &RawImage, amplitude: f64, seed: u64) -> Result<RawImage> {
    NoiseModel::Uniform { amplitude }.apply(raw, seed)
}

pub fn add_shot_read(raw: &RawImage, shot: f64, read: f64, seed: u64) -> Result<RawImage> {
    NoiseModel::ShotRead { shot, read }.apply(raw, seed)
}
