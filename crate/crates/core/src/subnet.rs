//! Shallow convolutional feature paths with Q/K/V encoding heads and per-path
//! prediction heads. One of these runs per frame; the stream recomposes their
//! outputs into a full feature representation.

use crate::error::{Error, Result};
use crate::graph::{Graph, TensorId};
use crate::init;

/// Architecture of one feature path.
#[derive(Debug, Clone, PartialEq)]
pub struct SubNetConfig {
    pub in_channels: usize,
    /// Feature channels C carried by the value map.
    pub channels: usize,
    /// Number of 3x3 conv + ReLU blocks in the trunk.
    pub depth: usize,
    /// Output spatial stride relative to the input; power of two.
    pub downsample_factor: usize,
    pub num_classes: usize,
}

impl SubNetConfig {
    /// Query/key channel count: ceil(C/8), at least 1.
    pub fn d_k(&self) -> usize {
        self.channels.div_ceil(8).max(1)
    }

    fn stride2_stages(&self) -> usize {
        self.downsample_factor.trailing_zeros() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::InvalidArg {
                op: "SubNetConfig",
                msg: "depth must be >= 1".into(),
            });
        }
        if self.channels == 0 || self.in_channels == 0 || self.num_classes == 0 {
            return Err(Error::InvalidArg {
                op: "SubNetConfig",
                msg: "channels, in_channels, and num_classes must be positive".into(),
            });
        }
        if !self.downsample_factor.is_power_of_two() {
            return Err(Error::InvalidArg {
                op: "SubNetConfig",
                msg: format!(
                    "downsample_factor must be a power of two, got {}",
                    self.downsample_factor
                ),
            });
        }
        if self.depth < self.stride2_stages() {
            return Err(Error::InvalidArg {
                op: "SubNetConfig",
                msg: format!(
                    "depth {} cannot realize downsample factor {} (needs {} stride-2 blocks)",
                    self.depth,
                    self.downsample_factor,
                    self.stride2_stages()
                ),
            });
        }
        Ok(())
    }

    /// Per-layer (in_ch, out_ch, stride) of the trunk. Stride-2 blocks come first.
    fn trunk_plan(&self) -> Vec<(usize, usize, usize)> {
        let s2 = self.stride2_stages();
        (0..self.depth)
            .map(|i| {
                let cin = if i == 0 { self.in_channels } else { self.channels };
                let stride = if i < s2 { 2 } else { 1 };
                (cin, self.channels, stride)
            })
            .collect()
    }

    /// Exact forward multiply-accumulates of the trunk on an `h0 x w0` frame.
    pub fn trunk_macs(&self, h0: usize, w0: usize) -> u64 {
        let (mut h, mut w) = (h0, w0);
        let mut total = 0u64;
        for (cin, cout, stride) in self.trunk_plan() {
            let oh = (h + 2 - 3) / stride + 1;
            let ow = (w + 2 - 3) / stride + 1;
            total += (cout * oh * ow * cin * 9) as u64;
            h = oh;
            w = ow;
        }
        total
    }

    /// Exact MACs of the q/k/v encoders at feature resolution `h x w`.
    pub fn encode_macs(&self, h: usize, w: usize) -> u64 {
        let dk = self.d_k();
        let hw = (h * w) as u64;
        let c = self.channels as u64;
        (2 * dk as u64 + c) * c * hw
    }

    /// Exact MACs of the prediction head at feature resolution `h x w`.
    pub fn head_macs(&self, h: usize, w: usize) -> u64 {
        (self.num_classes * h * w * self.channels) as u64
    }
}

/// A 2-D conv layer's parameter handles plus geometry.
#[derive(Debug, Clone)]
pub struct ConvLayer {
    pub weight: TensorId,
    pub bias: TensorId,
    pub stride: usize,
    pub padding: usize,
}

impl ConvLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        g: &mut Graph,
        name: &str,
        seed: u64,
        c_out: usize,
        c_in: usize,
        k: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        Self::build_tagged(g, name, name, seed, c_out, c_in, k, stride, padding)
    }

    /// Like [`ConvLayer::build`], but draws initial weights from a stream
    /// keyed by `init_tag` instead of the parameter name, so differently
    /// named layers can share one initial draw.
    #[allow(clippy::too_many_arguments)]
    pub fn build_tagged(
        g: &mut Graph,
        name: &str,
        init_tag: &str,
        seed: u64,
        c_out: usize,
        c_in: usize,
        k: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let mut rng = init::seed_stream(seed, init_tag);
        let weight = g.parameter(
            &format!("{name}.weight"),
            init::conv_weight(&mut rng, c_out, c_in, k),
        )?;
        let bias = g.parameter(&format!("{name}.bias"), init::zeros_bias(c_out))?;
        Ok(Self {
            weight,
            bias,
            stride,
            padding,
        })
    }

    pub fn apply(&self, g: &mut Graph, x: TensorId) -> Result<TensorId> {
        g.conv2d(x, self.weight, Some(self.bias), self.stride, self.padding)
    }
}

/// Query/key/value maps of one frame at feature resolution.
#[derive(Debug, Clone, Copy)]
pub struct QkvMaps {
    pub q: TensorId,
    pub k: TensorId,
    pub v: TensorId,
    pub frame_index: usize,
}

/// One shallow feature path: trunk, q/k/v encoders, prediction head.
#[derive(Debug, Clone)]
pub struct SubNet {
    pub cfg: SubNetConfig,
    trunk: Vec<ConvLayer>,
    encode_q: ConvLayer,
    encode_k: ConvLayer,
    encode_v: ConvLayer,
    head: ConvLayer,
}

impl SubNet {
    pub fn build(g: &mut Graph, cfg: &SubNetConfig, name: &str, seed: u64) -> Result<Self> {
        Self::build_tagged(g, cfg, name, name, seed)
    }

    /// Build with a separate init stream tag. Paths constructed with the same
    /// `init_tag` and seed start from identical weights while still owning
    /// disjoint parameters, mirroring a shared pretrained initialization.
    pub fn build_tagged(
        g: &mut Graph,
        cfg: &SubNetConfig,
        name: &str,
        init_tag: &str,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut trunk = Vec::with_capacity(cfg.depth);
        for (i, (cin, cout, stride)) in cfg.trunk_plan().into_iter().enumerate() {
            trunk.push(ConvLayer::build_tagged(
                g,
                &format!("{name}.trunk{i}"),
                &format!("{init_tag}.trunk{i}"),
                seed,
                cout,
                cin,
                3,
                stride,
                1,
            )?);
        }
        let dk = cfg.d_k();
        let c = cfg.channels;
        let encode_q =
            ConvLayer::build_tagged(g, &format!("{name}.q"), &format!("{init_tag}.q"), seed, dk, c, 1, 1, 0)?;
        let encode_k =
            ConvLayer::build_tagged(g, &format!("{name}.k"), &format!("{init_tag}.k"), seed, dk, c, 1, 1, 0)?;
        let encode_v =
            ConvLayer::build_tagged(g, &format!("{name}.v"), &format!("{init_tag}.v"), seed, c, c, 1, 1, 0)?;
        let head = ConvLayer::build_tagged(
            g,
            &format!("{name}.head"),
            &format!("{init_tag}.head"),
            seed,
            cfg.num_classes,
            c,
            1,
            1,
            0,
        )?;
        Ok(Self {
            cfg: cfg.clone(),
            trunk,
            encode_q,
            encode_k,
            encode_v,
            head,
        })
    }

    /// Trunk forward: `[in_channels, H0, W0]` to `[C, H0/f, W0/f]`.
    pub fn forward_features(&self, g: &mut Graph, frame: TensorId) -> Result<TensorId> {
        let shape = g.shape(frame).to_vec();
        if shape.len() != 3 || shape[0] != self.cfg.in_channels {
            return Err(Error::InvalidArg {
                op: "forward_features",
                msg: format!(
                    "frame must be [{}, H, W], got {:?}",
                    self.cfg.in_channels, shape
                ),
            });
        }
        let f = self.cfg.downsample_factor;
        if shape[1] % f != 0 || shape[2] % f != 0 {
            return Err(Error::InvalidArg {
                op: "forward_features",
                msg: format!(
                    "spatial dims {}x{} not divisible by downsample factor {f}",
                    shape[1], shape[2]
                ),
            });
        }
        let mut x = frame;
        for layer in &self.trunk {
            x = layer.apply(g, x)?;
            x = g.relu(x)?;
        }
        Ok(x)
    }

    /// Encode trunk features into query/key/value maps.
    pub fn encode_qkv(
        &self,
        g: &mut Graph,
        features: TensorId,
        frame_index: usize,
    ) -> Result<QkvMaps> {
        let shape = g.shape(features);
        if shape.len() != 3 || shape[0] != self.cfg.channels {
            return Err(Error::DimMismatch {
                op: "encode_qkv",
                dim: "channels",
                expected: self.cfg.channels,
                got: if shape.is_empty() { 0 } else { shape[0] },
            });
        }
        Ok(QkvMaps {
            q: self.encode_q.apply(g, features)?,
            k: self.encode_k.apply(g, features)?,
            v: self.encode_v.apply(g, features)?,
            frame_index,
        })
    }

    /// Class logits from a merged value map: `[C,H,W]` to `[K,H,W]`.
    pub fn predict(&self, g: &mut Graph, merged_value: TensorId) -> Result<TensorId> {
        let shape = g.shape(merged_value);
        if shape.len() != 3 || shape[0] != self.cfg.channels {
            return Err(Error::DimMismatch {
                op: "predict",
                dim: "channels",
                expected: self.cfg.channels,
                got: if shape.is_empty() { 0 } else { shape[0] },
            });
        }
        self.head.apply(g, merged_value)
    }

    /// Exact forward MACs of trunk + encoders on an `h0 x w0` frame.
    pub fn forward_macs(&self, h0: usize, w0: usize) -> u64 {
        let f = self.cfg.downsample_factor;
        self.cfg.trunk_macs(h0, w0) + self.cfg.encode_macs(h0 / f, w0 / f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn cfg() -> SubNetConfig {
        SubNetConfig {
            in_channels: 3,
            channels: 16,
            depth: 2,
            downsample_factor: 4,
            num_classes: 6,
        }
    }

    #[test]
    fn d_k_policy_rounds_up() {
        let mut c = cfg();
        assert_eq!(c.d_k(), 2); // C=16 -> 2
        c.channels = 8;
        assert_eq!(c.d_k(), 1);
        c.channels = 12;
        assert_eq!(c.d_k(), 2); // ceil(12/8)
        c.channels = 4;
        assert_eq!(c.d_k(), 1); // small C stays legal
    }

    #[test]
    fn shape_contract_factor_4() {
        let mut g = Graph::new();
        let net = SubNet::build(&mut g, &cfg(), "s0", 1).unwrap();
        let frame = g.constant(Tensor::zeros(&[3, 32, 32]));
        let feat = net.forward_features(&mut g, frame).unwrap();
        assert_eq!(g.shape(feat), &[16, 8, 8]);
    }

    #[test]
    fn zero_frame_gives_zero_features_and_qkv() {
        let mut g = Graph::new();
        let net = SubNet::build(&mut g, &cfg(), "s0", 1).unwrap();
        let frame = g.constant(Tensor::zeros(&[3, 16, 16]));
        let feat = net.forward_features(&mut g, frame).unwrap();
        assert!(g.data(feat).iter().all(|&v| v == 0.0));
        let qkv = net.encode_qkv(&mut g, feat, 0).unwrap();
        assert!(g.data(qkv.q).iter().all(|&v| v == 0.0));
        assert!(g.data(qkv.k).iter().all(|&v| v == 0.0));
        assert!(g.data(qkv.v).iter().all(|&v| v == 0.0));
        assert_eq!(g.shape(qkv.q)[0], 2);
        assert_eq!(g.shape(qkv.v)[0], 16);
    }

    #[test]
    fn forward_is_deterministic() {
        let mut g = Graph::new();
        let net = SubNet::build(&mut g, &cfg(), "s0", 9).unwrap();
        let data: Vec<f64> = (0..3 * 16 * 16).map(|i| (i as f64 * 0.37).sin()).collect();
        let f1 = g.constant(Tensor::new(vec![3, 16, 16], data.clone()).unwrap());
        let f2 = g.constant(Tensor::new(vec![3, 16, 16], data).unwrap());
        let y1 = net.forward_features(&mut g, f1).unwrap();
        let y2 = net.forward_features(&mut g, f2).unwrap();
        assert_eq!(g.data(y1), g.data(y2));
    }

    #[test]
    fn rejects_indivisible_spatial_dims() {
        let mut g = Graph::new();
        let net = SubNet::build(&mut g, &cfg(), "s0", 1).unwrap();
        let frame = g.constant(Tensor::zeros(&[3, 18, 16]));
        assert!(net.forward_features(&mut g, frame).is_err());
    }

    #[test]
    fn encode_is_linear_with_zero_bias() {
        let mut g = Graph::new();
        let net = SubNet::build(&mut g, &cfg(), "s0", 5).unwrap();
        let data: Vec<f64> = (0..16 * 4 * 4).map(|i| (i as f64 * 0.11).cos()).collect();
        let x = g.constant(Tensor::new(vec![16, 4, 4], data.clone()).unwrap());
        let x2 = g.constant(
            Tensor::new(vec![16, 4, 4], data.iter().map(|v| 2.0 * v).collect()).unwrap(),
        );
        let a = net.encode_qkv(&mut g, x, 0).unwrap();
        let b = net.encode_qkv(&mut g, x2, 0).unwrap();
        for (va, vb) in g.data(a.v).iter().zip(g.data(b.v)) {
            assert!((2.0 * va - vb).abs() < 1e-12);
        }
    }

    #[test]
    fn predict_shape_and_channel_check() {
        let mut g = Graph::new();
        let mut c = cfg();
        c.num_classes = 11;
        let net = SubNet::build(&mut g, &c, "s0", 1).unwrap();
        let v = g.constant(Tensor::zeros(&[16, 8, 8]));
        let logits = net.predict(&mut g, v).unwrap();
        assert_eq!(g.shape(logits), &[11, 8, 8]);
        assert!(g.data(logits).iter().all(|&v| v == 0.0));
        let bad = g.constant(Tensor::zeros(&[8, 8, 8]));
        assert!(net.predict(&mut g, bad).is_err());
    }

    #[test]
    fn independent_paths_scale_param_count_by_m() {
        let m = 4;
        let mut g_ind = Graph::new();
        for i in 0..m {
            SubNet::build(&mut g_ind, &cfg(), &format!("s{i}"), i as u64).unwrap();
        }
        let mut g_shared = Graph::new();
        let shared = SubNet::build(&mut g_shared, &cfg(), "s", 0).unwrap();
        let _aliases: Vec<SubNet> = (0..m).map(|_| shared.clone()).collect();
        assert_eq!(g_ind.param_count(), m * g_shared.param_count());
    }

    #[test]
    fn trunk_macs_scale_inverse_with_path_count() {
        // With in_channels == C and factor 1 every block costs the same, so a
        // depth-d path is exactly 1/m of a depth-(m*d) reference.
        let m = 4;
        let sub = SubNetConfig {
            in_channels: 16,
            channels: 16,
            depth: 2,
            downsample_factor: 1,
            num_classes: 6,
        };
        let deep = SubNetConfig {
            depth: m * sub.depth,
            ..sub.clone()
        };
        assert_eq!(sub.trunk_macs(16, 16) * m as u64, deep.trunk_macs(16, 16));
        // With a 3-channel stem the ratio is approximate but stays near 1/m.
        let sub3 = SubNetConfig {
            in_channels: 3,
            ..sub.clone()
        };
        let deep3 = SubNetConfig {
            depth: m * sub3.depth,
            ..sub3.clone()
        };
        let ratio = sub3.trunk_macs(16, 16) as f64 / deep3.trunk_macs(16, 16) as f64;
        assert!(
            ratio > 0.5 / m as f64 && ratio < 2.0 / m as f64,
            "ratio {ratio}"
        );
    }

    #[test]
    fn trunk_macs_match_instrumented_forward() {
        let mut g = Graph::new();
        let net = SubNet::build(&mut g, &cfg(), "s0", 3).unwrap();
        let frame = g.constant(Tensor::zeros(&[3, 32, 32]));
        let before = g.macs();
        let feat = net.forward_features(&mut g, frame).unwrap();
        let trunk_delta = g.macs() - before;
        assert_eq!(trunk_delta, cfg().trunk_macs(32, 32));
        let before = g.macs();
        net.encode_qkv(&mut g, feat, 0).unwrap();
        assert_eq!(g.macs() - before, cfg().encode_macs(8, 8));
    }

    #[test]
    fn config_validation_rejects_impossible_factor() {
        let c = SubNetConfig {
            in_channels: 3,
            channels: 16,
            depth: 1,
            downsample_factor: 4,
            num_classes: 6,
        };
        assert!(c.validate().is_err());
        let c2 = SubNetConfig {
            downsample_factor: 3,
            depth: 2,
            ..c
        };
        assert!(c2.validate().is_err());
    }
}
