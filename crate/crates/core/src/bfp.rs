//! Bi-directional fusion projection.
//!
//! A colour route (packed RGGB planes through a 3×3 convolution) and a
//! spatial route (a stride-2 3×3 convolution on the mosaic) each gate the
//! other through a 1×1 convolution and a sigmoid:
//!
//! ```text
//! spatial = DS(I) ⊙ σ(color_gate(pack_conv(P(I))))
//! color   = pack_conv(P(I)) ⊙ σ(spatial_gate(DS(I)))
//! out     = concat(spatial, color)
//! ```

use std::sync::Arc;

use rand::Rng;

use crate::bayer::RawImage;
use crate::error::{Error, Result};
use crate::numerics::params::Conv;
use crate::numerics::{pack_indices, Activation, ConvSpec, Graph, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct BfpWeights<P> {
    /// 3×3, 4 → C/2, on the packed planes.
    pub pack_conv: Conv<P>,
    /// 3×3 stride 2, 1 → C/2, on the mosaic.
    pub downsample: Conv<P>,
    /// 1×1 on the colour route; its sigmoid gates the spatial route.
    pub color_gate: Conv<P>,
    /// 1×1 on the spatial route; its sigmoid gates the colour route.
    pub spatial_gate: Conv<P>,
}

impl<P> BfpWeights<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> BfpWeights<Q> {
        BfpWeights {
            pack_conv: self.pack_conv.map(f),
            downsample: self.downsample.map(f),
            color_gate: self.color_gate.map(f),
            spatial_gate: self.spatial_gate.map(f),
        }
    }

    /// Projection width C.
    pub fn channels(&self) -> usize {
        2 * self.pack_conv.spec.out_channels
    }
}

pub fn route_specs(channels: usize) -> Result<[ConvSpec; 4]> {
    if channels == 0 || channels % 2 != 0 {
        return Err(Error::Config(format!("projection width must be even, got {channels}")));
    }
    let half = channels / 2;
    Ok([
        ConvSpec::new(4, half, 3, 1, 1),
        ConvSpec::new(1, half, 3, 2, 1),
        ConvSpec::new(half, half, 1, 1, 0),
        ConvSpec::new(half, half, 1, 1, 0),
    ])
}

impl BfpWeights<Tensor> {
    pub fn init(rng: &mut impl Rng, channels: usize) -> Result<Self> {
        let [p, d, c, s] = route_specs(channels)?;
        Ok(BfpWeights {
            pack_conv: Conv::init(rng, p),
            downsample: Conv::init(rng, d),
            color_gate: Conv::init(rng, c),
            spatial_gate: Conv::init(rng, s),
        })
    }
}

/// `[1 × H × W]` mosaic node to `[C × H/2 × W/2]` features.
pub fn bfp_graph(g: &mut Graph, input: Var, w: &BfpWeights<Var>) -> Result<Var> {
    let (_, h, wd) = g.value(input).dims3("bfp")?;
    let idx: Arc<[usize]> = pack_indices(h, wd)?.into();
    let packed = g.gather(input, idx, 1, &[4, h / 2, wd / 2])?;
    let color = w.pack_conv.forward(g, packed)?;
    let spatial = w.downsample.forward(g, input)?;
    let color_logits = w.color_gate.forward(g, color)?;
    let color_gate = g.activation(Activation::Sigmoid, color_logits);
    let spatial_logits = w.spatial_gate.forward(g, spatial)?;
    let spatial_gate = g.activation(Activation::Sigmoid, spatial_logits);
    let f_spatial = g.mul(spatial, color_gate)?;
    let f_color = g.mul(color, spatial_gate)?;
    g.concat(f_spatial, f_color)
}

pub fn bfp_forward(raw: &RawImage, w: &BfpWeights<Tensor>) -> Result<Tensor> {
    let mut g = Graph::new();
    let x = g.constant(raw.to_tensor());
    let bound = w.map(&mut |t| g.constant(t.clone()));
    let out = bfp_graph(&mut g, x, &bound)?;
    Ok(g.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn output_shape_at_projection_width_32() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w = BfpWeights::init(&mut rng, 32).unwrap();
        let raw = crate::bayer::clean_scene(64, 64, 1).unwrap();
        assert_eq!(bfp_forward(&raw, &w).unwrap().shape(), &[32, 32, 32]);
    }

    #[test]
    fn zero_input_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = BfpWeights::init(&mut rng, 8).unwrap();
        let out = bfp_forward(&RawImage::constant(8, 8, 0.0).unwrap(), &w).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn odd_width_rejected() {
        assert!(route_specs(7).is_err());
    }
}
