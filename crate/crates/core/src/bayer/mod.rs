//! RGGB raw mosaics: packing, dihedral augmentation, synthetic noise, a small
//! deterministic ISP and the on-disk raw container.

mod augment;
mod io;
mod isp;
mod noise;
mod raw;
mod synth;

pub use augment::{augment, augment_raw, Dihedral};
pub use io::{decode_raw, encode_raw, read_raw, write_raw, RAW_MAGIC, RAW_VERSION};
pub use isp::{simple_isp, write_ppm, encode_ppm, IspParams, SrgbImage};
pub use noise::{add_awgn, add_shot_read, add_uniform, NoiseModel};
pub use raw::{pack, random_crop_pair, unpack, CfaColor, CfaPattern, PackedRaw, RawImage};
pub use synth::clean_scene;
