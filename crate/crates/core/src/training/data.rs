//! Training pairs: procedurally generated scenes or files written by
//! [`write_dataset`].

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bayer::{augment_raw, clean_scene, read_raw, write_raw, NoiseModel, RawImage};
use crate::error::{Error, Result};
use crate::kv::KeyValues;

pub const MANIFEST_NAME: &str = "manifest.txt";

/// SplitMix64 finalizer over (seed, stream, index); keeps independent
/// random streams apart.
pub fn sub_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(index.wrapping_mul(0xbf58_476d_1ce4_e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const STREAM_SCENE: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_SAMPLE: u64 = 3;
const STREAM_VAL_SCENE: u64 = 4;
const STREAM_VAL_NOISE: u64 = 5;

/// One entry of a dataset manifest.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairEntry {
    pub clean: String,
    pub noisy: String,
    pub scene_seed: u64,
    pub noise_seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub size: usize,
    pub seed: u64,
    pub noise: NoiseModel,
    pub pairs: Vec<PairEntry>,
}

impl Manifest {
    pub fn to_text(&self) -> String {
        let mut kv = KeyValues::default();
        kv.set("count", self.pairs.len());
        kv.set("size", self.size);
        kv.set("seed", self.seed);
        kv.set("noise", self.noise.kind());
        kv.set("params", self.noise.params_string());
        for (i, p) in self.pairs.iter().enumerate() {
            kv.set(&format!("pair_{i:04}"), format!("{} {} {} {}", p.clean, p.noisy, p.scene_seed, p.noise_seed));
        }
        kv.to_text()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = KeyValues::parse(text)?;
        let count: usize = kv.take_required("count")?;
        let size = kv.take_required("size")?;
        let seed = kv.take_required("seed")?;
        let kind: String = kv.take_required("noise")?;
        let params: String = kv.take_or("params", String::new())?;
        let noise = NoiseModel::parse(&kind, &params)?;
        let mut pairs = Vec::with_capacity(count);
        for i in 0..count {
            let key = format!("pair_{i:04}");
            let line: String = kv.take_required(&key)?;
            let parts: Vec<&str> = line.split_whitespace().collect();
            let [clean, noisy, scene, noise_seed] = parts[..] else {
                return Err(Error::Format(format!("manifest entry `{key}` is malformed: {line:?}")));
            };
            let num = |s: &str| s.parse::<u64>().map_err(|_| Error::Format(format!("bad seed {s:?} in `{key}`")));
            pairs.push(PairEntry {
                clean: clean.to_string(),
                noisy: noisy.to_string(),
                scene_seed: num(scene)?,
                noise_seed: num(noise_seed)?,
            });
        }
        kv.reject_unknown()?;
        Ok(Manifest { size, seed, noise, pairs })
    }

    pub fn read(dir: impl AsRef<Path>) -> Result<Self> {
        let path = dir.as_ref().join(MANIFEST_NAME);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Manifest::parse(&text)
    }
}

/// Writes `count` clean/noisy pairs of `size × size` synthetic scenes to
/// `dir` with a manifest.
pub fn write_dataset(dir: impl AsRef<Path>, count: usize, size: usize, noise: NoiseModel, seed: u64) -> Result<Manifest> {
    let dir = dir.as_ref();
    if count == 0 {
        return Err(Error::Argument("count must be at least 1".into()));
    }
    if size == 0 || size % 2 != 0 {
        return Err(Error::Argument(format!("size must be even and positive, got {size}")));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut pairs = Vec::with_capacity(count);
    for i in 0..count as u64 {
        let scene_seed = sub_seed(seed, STREAM_SCENE, i);
        let noise_seed = sub_seed(seed, STREAM_NOISE, i);
        let clean = clean_scene(size, size, scene_seed)?;
        let noisy = noise.apply(&clean, noise_seed)?;
        let entry = PairEntry {
            clean: format!("clean_{i:04}.elmr"),
            noisy: format!("noisy_{i:04}.elmr"),
            scene_seed,
            noise_seed,
        };
        write_raw(dir.join(&entry.clean), &clean)?;
        write_raw(dir.join(&entry.noisy), &noisy)?;
        pairs.push(entry);
    }
    let manifest = Manifest { size, seed, noise, pairs };
    let path = dir.join(MANIFEST_NAME);
    std::fs::write(&path, manifest.to_text()).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Where training pairs come from.
#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSpec {
    /// `scenes` procedurally generated `scene_size²` mosaics; noise is drawn
    /// fresh for every sample.
    Synthetic { scenes: usize, scene_size: usize, noise: NoiseModel },
    /// Pairs listed in a manifest written by [`write_dataset`].
    Files { dir: PathBuf },
}

/// Loaded training pairs.
pub(crate) struct Dataset {
    clean: Vec<RawImage>,
    /// Fixed degraded counterparts, or `None` to synthesize per sample.
    degraded: Option<Vec<RawImage>>,
    pub(crate) noise: NoiseModel,
}

impl Dataset {
    pub(crate) fn load(spec: &DatasetSpec, seed: u64) -> Result<Self> {
        match spec {
            DatasetSpec::Synthetic { scenes, scene_size, noise } => {
                if *scenes == 0 {
                    return Err(Error::Config("synthetic dataset needs at least one scene".into()));
                }
                let clean = (0..*scenes as u64)
                    .map(|i| clean_scene(*scene_size, *scene_size, sub_seed(seed, STREAM_SCENE, i)))
                    .collect::<Result<_>>()?;
                Ok(Dataset {
                    clean,
                    degraded: None,
                    noise: *noise,
                })
            }
            DatasetSpec::Files { dir } => {
                let manifest = Manifest::read(dir)?;
                if manifest.pairs.is_empty() {
                    return Err(Error::Config(format!("dataset {} is empty", dir.display())));
                }
                let mut clean = Vec::new();
                let mut degraded = Vec::new();
                for p in &manifest.pairs {
                    let c = read_raw(dir.join(&p.clean))?;
                    let d = read_raw(dir.join(&p.noisy))?;
                    if !c.same_extents(&d) {
                        return Err(Error::Format(format!("pair {} / {} differ in extents", p.clean, p.noisy)));
                    }
                    clean.push(c);
                    degraded.push(d);
                }
                Ok(Dataset {
                    clean,
                    degraded: Some(degraded),
                    noise: manifest.noise,
                })
            }
        }
    }

    pub(crate) fn min_extent(&self) -> usize {
        self.clean.iter().map(|c| c.height().min(c.width())).min().unwrap_or(0)
    }

    /// (degraded, clean) patch number `index` of the stream for `seed`:
    /// random image, random even crop, random dihedral transform and, for
    /// synthetic data, fresh noise.
    pub(crate) fn sample(&self, patch: usize, seed: u64, index: u64) -> Result<(RawImage, RawImage)> {
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, STREAM_SAMPLE, index));
        let i = rng.gen_range(0..self.clean.len());
        let clean = &self.clean[i];
        let y0 = 2 * rng.gen_range(0..=(clean.height() - patch) / 2);
        let x0 = 2 * rng.gen_range(0..=(clean.width() - patch) / 2);
        let transform: u8 = rng.gen_range(0..8);
        let noise_seed: u64 = rng.gen();
        let c = augment_raw(&clean.crop(y0, x0, patch, patch)?, transform)?;
        let d = match &self.degraded {
            Some(deg) => augment_raw(&deg[i].crop(y0, x0, patch, patch)?, transform)?,
            None => self.noise.apply(&c, noise_seed)?,
        };
        Ok((d, c))
    }
}

/// Fixed held-out (degraded, clean) pairs drawn from scenes the training
/// stream never uses.
pub fn validation_set(noise: NoiseModel, count: usize, size: usize, seed: u64) -> Result<Vec<(RawImage, RawImage)>> {
    (0..count as u64)
        .map(|i| {
            let clean = clean_scene(size, size, sub_seed(seed, STREAM_VAL_SCENE, i))?;
            let noisy = noise.apply(&clean, sub_seed(seed, STREAM_VAL_NOISE, i))?;
            Ok((noisy, clean))
        })
        .collect()
}
