use std::sync::Arc;

use crate::bayer::RawImage;
use crate::error::{Error, Result};
use crate::numerics::{Graph, Penalty, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LossKind {
    L1,
    L2,
    Charbonnier { eps: f64 },
}

pub const DEFAULT_CHARBONNIER_EPS: f64 = 1e-3;

impl LossKind {
    pub fn parse(tag: &str, charbonnier_eps: f64) -> Result<Self> {
        match tag {
            "l1" => Ok(LossKind::L1),
            "l2" => Ok(LossKind::L2),
            "charbonnier" if charbonnier_eps > 0.0 => Ok(LossKind::Charbonnier { eps: charbonnier_eps }),
            "charbonnier" => Err(Error::Config(format!("charbonnier eps must be positive, got {charbonnier_eps}"))),
            other => Err(Error::Config(format!("unknown loss `{other}` (l1, l2, charbonnier)"))),
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            LossKind::L1 => "l1",
            LossKind::L2 => "l2",
            LossKind::Charbonnier { .. } => "charbonnier",
        }
    }

    pub fn penalty(&self) -> Penalty {
        match *self {
            LossKind::L1 => Penalty::Abs,
            LossKind::L2 => Penalty::Square,
            LossKind::Charbonnier { eps } => Penalty::Charbonnier(eps),
        }
    }
}

/// Mean penalty and its gradient with respect to `pred`.
pub fn loss_tensor(pred: &Tensor, target: &Tensor, kind: LossKind) -> Result<(f64, Tensor)> {
    let mut g = Graph::new();
    let p = g.param(pred.clone());
    let l = g.penalty(p, Arc::new(target.clone()), kind.penalty())?;
    let grads = g.backward(l);
    Ok((g.value(l).data()[0], grads.get_or_zeros(p)))
}

pub fn loss(pred: &RawImage, target: &RawImage, kind: LossKind) -> Result<(f64, Tensor)> {
    if !pred.same_extents(target) {
        return Err(Error::Dimension {
            op: "loss",
            left: vec![pred.height(), pred.width()],
            right: vec![target.height(), target.width()],
        });
    }
    loss_tensor(&pred.to_tensor(), &target.to_tensor(), kind)
}
