//! Floating-point operation counts.
//!
//! Counting rule:
//!
//! * convolution: `2·k²·C_in·C_out·H_out·W_out`, plus one bias add per output
//!   element;
//! * dense: `2·in·out`, plus one bias add per output;
//! * ReLU, normalization and pooling: one operation per element they read.

use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use super::mlp::{Head, Mlp, Projector};
use super::{FeatureExtractor, Real};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopCount {
    pub total: u64,
    /// `(layer name, operations)` in execution order.
    pub layers: Vec<(String, u64)>,
}

impl FlopCount {
    pub fn push(&mut self, name: impl Into<String>, ops: u64) {
        self.total += ops;
        self.layers.push((name.into(), ops));
    }

    fn prefixed(mut self, prefix: &str) -> Self {
        for (name, _) in &mut self.layers {
            *name = format!("{prefix}.{name}");
        }
        self
    }
}

impl AddAssign for FlopCount {
    fn add_assign(&mut self, rhs: Self) {
        self.total += rhs.total;
        self.layers.extend(rhs.layers);
    }
}

impl Add for FlopCount {
    type Output = FlopCount;

    fn add(mut self, rhs: Self) -> Self {
        self += rhs;
        self
    }
}

/// Anything with a per-sample operation count.
pub trait CountFlops {
    fn count_flops(&self) -> FlopCount;
}

pub fn count_flops(component: &impl CountFlops) -> FlopCount {
    component.count_flops()
}

impl<T: Real> CountFlops for FeatureExtractor<T> {
    fn count_flops(&self) -> FlopCount {
        let mut f = FlopCount::default();
        let sizes = self.spatial_sizes();
        for (i, b) in self.blocks.iter().enumerate() {
            let out = sizes[i + 1] * sizes[i + 1];
            let c = &b.conv;
            let elems = (c.out_channels * out) as u64;
            let macs = (c.kernel * c.kernel * c.in_channels * c.out_channels * out) as u64;
            f.push(format!("block{i}.conv"), 2 * macs + elems);
            f.push(format!("block{i}.relu"), elems);
            f.push(format!("block{i}.norm"), elems);
        }
        let last = sizes.last().unwrap();
        f.push("pool", (self.feature_dim() * last * last) as u64);
        f
    }
}

impl<T: Real> CountFlops for Mlp<T> {
    fn count_flops(&self) -> FlopCount {
        let mut f = FlopCount::default();
        for (i, l) in self.layers.iter().enumerate() {
            if i > 0 {
                f.push(format!("relu{i}"), l.inputs as u64);
            }
            f.push(format!("fc{i}"), (2 * l.inputs * l.outputs + l.outputs) as u64);
        }
        f
    }
}

impl<T: Real> CountFlops for Projector<T> {
    fn count_flops(&self) -> FlopCount {
        self.mlp.count_flops().prefixed("projector")
    }
}

impl<T: Real> CountFlops for Head<T> {
    fn count_flops(&self) -> FlopCount {
        self.mlp.count_flops().prefixed("head")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::HeadKind;
    use crate::rng;

    #[test]
    fn head_counts() {
        let mut r = rng::stream(0, &[]);
        let linear = Head::<f32>::init(HeadKind::Linear, 128, &mut r);
        assert_eq!(count_flops(&linear).total, 257);
        let mlp = Head::<f32>::init(HeadKind::Mlp32, 128, &mut r);
        assert_eq!(count_flops(&mlp).total, 2 * 128 * 32 + 32 + 32 + 2 * 32 + 1);
        assert_eq!(count_flops(&mlp).total, 8321);
    }

    #[test]
    fn extractor_breakdown_sums() {
        let mut r = rng::stream(0, &[]);
        let e = FeatureExtractor::<f32>::init(128, &[16, 32, 64, 128], 3, 2, 1e-5, &mut r);
        let f = count_flops(&e);
        assert_eq!(f.total, f.layers.iter().map(|l| l.1).sum::<u64>());
        // first conv: 64×64 outputs, 16 channels, 9 taps on one channel
        assert_eq!(f.layers[0].1, 2 * 9 * 16 * 64 * 64 + 16 * 64 * 64);
        let mlp = Head::<f32>::init(HeadKind::Mlp32, 128, &mut r);
        assert!(count_flops(&mlp).total as f64 / f.total as f64 <= 0.01);
        let both = f.clone() + count_flops(&mlp);
        assert_eq!(both.total, f.total + 8321);
    }
}
