//! Streaming engine: circular assignment of sub-networks to frames, a ring of
//! the last `m-1` downsampled frame caches, per-frame aggregation and
//! prediction, plus per-frame MAC records for latency analysis.
//!
//! A stream's cache holds node ids into one [`Graph`]; stream state and graph
//! intermediates live and die together. One stream is owned by one thread.

use std::collections::VecDeque;

use crate::apm::{
    self, Affinity, Aggregation, FrameCache, MacLedger, PhiLayer, PoolKind,
};
use crate::error::{Error, Result};
use crate::graph::{Graph, TensorId};
use crate::subnet::{QkvMaps, SubNet, SubNetConfig};
use crate::tensor::Tensor;

/// Full model: `m` feature paths plus the aggregation's phi layers.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Number of sub-networks distributed over frames.
    pub m: usize,
    pub subnet: SubNetConfig,
    /// Attention downsampling stride applied to cached history maps.
    pub stride_n: usize,
    pub aggregation: Aggregation,
    /// Alias all paths to a single parameter set.
    pub shared: bool,
    pub pool: PoolKind,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.subnet.validate()?;
        if self.m == 0 {
            return Err(Error::InvalidArg {
                op: "ModelConfig",
                msg: "m must be >= 1".into(),
            });
        }
        if self.stride_n == 0 {
            return Err(Error::InvalidArg {
                op: "ModelConfig",
                msg: "stride_n must be >= 1".into(),
            });
        }
        Ok(())
    }

    /// Stride used when pushing a frame's maps into the ring. Only the
    /// propagation module works on downsampled history.
    pub fn cache_stride(&self) -> usize {
        match self.aggregation {
            Aggregation::Apm => self.stride_n,
            Aggregation::Add | Aggregation::Sta => 1,
        }
    }

    /// Feature-map extent for an `h0 x w0` input frame.
    pub fn feature_extent(&self, h0: usize, w0: usize) -> (usize, usize) {
        let f = self.subnet.downsample_factor;
        (h0 / f, w0 / f)
    }
}

/// The trainable model. When `cfg.shared` is set, all paths are clones holding
/// the same parameter ids, otherwise each path owns its parameters.
#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: ModelConfig,
    pub subnets: Vec<SubNet>,
    /// Aggregation phi layers. For the propagation module: `m-2` hop sites
    /// (oldest first) then the final merge site. For spatio-temporal
    /// attention: indexed by temporal distance minus one.
    pub phis: Vec<PhiLayer>,
}

impl Model {
    pub fn build(g: &mut Graph, cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut subnets = Vec::with_capacity(cfg.m);
        if cfg.shared {
            let net = SubNet::build(g, &cfg.subnet, "path", seed)?;
            for _ in 0..cfg.m {
                subnets.push(net.clone());
            }
        } else {
            // Independent parameters, one shared initial draw: paths start
            // aligned (as with a common pretrained init) and specialize as
            // training rotates supervision across them.
            for i in 0..cfg.m {
                subnets.push(SubNet::build_tagged(
                    g,
                    &cfg.subnet,
                    &format!("path{i}"),
                    "path",
                    seed,
                )?);
            }
        }
        let phi_count = match cfg.aggregation {
            Aggregation::Add => 0,
            Aggregation::Sta | Aggregation::Apm => cfg.m.saturating_sub(1),
        };
        let phis = (0..phi_count)
            .map(|i| PhiLayer::zeros(g, &format!("phi{i}"), cfg.subnet.channels))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            cfg: cfg.clone(),
            subnets,
            phis,
        })
    }

    /// Analytic steady-state MACs of one streamed frame: one trunk + encoders,
    /// the attention sites, their phi convolutions, and the prediction head.
    pub fn steady_frame_macs(&self, h0: usize, w0: usize) -> Result<u64> {
        let (h, w) = self.cfg.feature_extent(h0, w0);
        let c = self.cfg.subnet.channels as u64;
        let ledger = apm::count_macs(
            self.cfg.aggregation,
            self.cfg.m,
            self.cfg.stride_n,
            h,
            w,
            self.cfg.subnet.d_k(),
            self.cfg.subnet.channels,
        )?;
        let phi_macs: u64 = match self.cfg.aggregation {
            Aggregation::Add => 0,
            Aggregation::Sta => (self.cfg.m as u64 - 1) * c * c * (h * w) as u64,
            Aggregation::Apm => {
                if self.cfg.m >= 2 {
                    let n = self.cfg.stride_n;
                    let ds = ((h / n) * (w / n)) as u64;
                    (self.cfg.m as u64 - 2) * c * c * ds + c * c * (h * w) as u64
                } else {
                    0
                }
            }
        };
        Ok(self.subnets[0].forward_macs(h0, w0)
            + ledger.total()
            + phi_macs
            + self.cfg.subnet.head_macs(h, w))
    }
}

/// Per-stream state: assignment order, ring of cached history, frame counter.
#[derive(Debug)]
pub struct ScheduleState {
    order: Vec<usize>,
    ring: VecDeque<FrameCache>,
    pub frame_counter: usize,
}

impl ScheduleState {
    pub fn new(m: usize) -> Self {
        Self {
            order: (0..m).collect(),
            ring: VecDeque::new(),
            frame_counter: 0,
        }
    }

    /// Custom assignment order; must be a permutation of `0..m`.
    pub fn with_order(order: Vec<usize>) -> Result<Self> {
        let m = order.len();
        let mut seen = vec![false; m];
        for &i in &order {
            if i >= m || seen[i] {
                return Err(Error::InvalidArg {
                    op: "ScheduleState",
                    msg: format!("order {order:?} is not a permutation of 0..{m}"),
                });
            }
            seen[i] = true;
        }
        Ok(Self {
            order,
            ring: VecDeque::new(),
            frame_counter: 0,
        })
    }

    /// Sub-network index assigned to frame `t`: circular in the order vector.
    pub fn assign_subnet(&self, t: usize) -> usize {
        self.order[t % self.order.len()]
    }

    pub fn ring_len(&self) -> usize {
        self.ring.len()
    }

    /// Forget cached history (the owning graph was reset).
    pub fn clear(&mut self) {
        self.ring.clear();
        self.frame_counter = 0;
    }
}

/// Everything produced for one streamed frame.
#[derive(Debug)]
pub struct StepOutput {
    /// Class logits upsampled to the input resolution (nearest neighbor).
    pub logits_full: TensorId,
    /// Class logits at feature resolution.
    pub logits_feat: TensorId,
    /// Recomposed value map fed to the prediction head.
    pub merged_value: TensorId,
    /// The current path's own value map, before aggregation.
    pub path_value: TensorId,
    pub subnet_index: usize,
    /// Instrumented MACs of this frame's forward work.
    pub frame_macs: u64,
    /// Attention weights per site, oldest site first.
    pub attention: Vec<Affinity>,
    pub ledger: MacLedger,
}

/// Aggregate the current frame's maps with (a suffix of) the ring.
/// `paths_keep` limits the window to the newest `paths_keep` paths including
/// the current one; `None` uses everything available.
fn aggregate(
    g: &mut Graph,
    model: &Model,
    ring: &VecDeque<FrameCache>,
    current: &QkvMaps,
    paths_keep: Option<usize>,
) -> Result<(TensorId, MacLedger, Vec<Affinity>)> {
    let m = model.cfg.m;
    let keep_hist = match paths_keep {
        Some(k) => {
            if k == 0 || k > m {
                return Err(Error::InvalidArg {
                    op: "aggregate",
                    msg: format!("paths_keep {k} out of range 1..={m}"),
                });
            }
            (k - 1).min(ring.len())
        }
        None => ring.len(),
    };
    let hist: Vec<FrameCache> = ring.iter().skip(ring.len() - keep_hist).copied().collect();
    let len = hist.len();
    if len == 0 {
        return Ok((current.v, MacLedger::default(), Vec::new()));
    }
    match model.cfg.aggregation {
        Aggregation::Add => {
            let maps: Vec<QkvMaps> = hist
                .iter()
                .map(|c| QkvMaps {
                    q: c.q,
                    k: c.k,
                    v: c.v,
                    frame_index: c.frame_index,
                })
                .collect();
            let out = apm::add_merge(g, current, &maps)?;
            Ok((out, MacLedger::default(), Vec::new()))
        }
        Aggregation::Sta => {
            let maps: Vec<QkvMaps> = hist
                .iter()
                .map(|c| QkvMaps {
                    q: c.q,
                    k: c.k,
                    v: c.v,
                    frame_index: c.frame_index,
                })
                .collect();
            // Phi by temporal distance: the newest history frame uses phi 0.
            let phis: Vec<PhiLayer> = (0..len)
                .map(|j| model.phis[len - 1 - j].clone())
                .collect();
            apm::sta_merge(g, current, &maps, &phis)
        }
        Aggregation::Apm => {
            // Chain seeded by the oldest cache's raw value; hop sites aligned
            // to the newest so the site adjacent to the final merge keeps a
            // stable phi as the ring fills during warm-up.
            let mut ledger = MacLedger::default();
            let mut affs = Vec::new();
            let mut v_chain = hist[0].v;
            let mut k_prev = hist[0].k;
            let hop_base = (m - 1) - len;
            for (j, cache) in hist.iter().enumerate().skip(1) {
                let phi = &model.phis[hop_base + j - 1];
                let (v, site, aff) = apm::propagate_step(g, cache, k_prev, v_chain, phi)?;
                ledger.sites.push(site);
                affs.push(aff);
                v_chain = v;
                k_prev = cache.k;
            }
            let phi_final = &model.phis[m - 2];
            let (out, site, aff) = apm::final_merge(
                g,
                current,
                v_chain,
                k_prev,
                hist.last().unwrap().frame_index,
                phi_final,
            )?;
            ledger.sites.push(site);
            affs.push(aff);
            Ok((out, ledger, affs))
        }
    }
}

/// Process one frame end to end and push its cache into the ring.
pub fn step_stream(
    g: &mut Graph,
    model: &Model,
    state: &mut ScheduleState,
    frame: &Tensor,
) -> Result<StepOutput> {
    step_stream_with_options(g, model, state, frame, None)
}

/// [`step_stream`] with an evaluation-time path restriction.
pub fn step_stream_with_options(
    g: &mut Graph,
    model: &Model,
    state: &mut ScheduleState,
    frame: &Tensor,
    paths_keep: Option<usize>,
) -> Result<StepOutput> {
    let macs_before = g.macs();
    let t = state.frame_counter;
    let idx = state.assign_subnet(t);
    let net = &model.subnets[idx];
    let input = g.constant(frame.clone());
    let feat = net.forward_features(g, input)?;
    let qkv = net.encode_qkv(g, feat, t)?;
    let (merged, ledger, attention) = aggregate(g, model, &state.ring, &qkv, paths_keep)?;
    let logits_feat = net.predict(g, merged)?;
    let logits_full = g.upsample_nearest2d(logits_feat, model.cfg.subnet.downsample_factor)?;

    if model.cfg.m > 1 {
        let cache = apm::downsample_cache(g, &qkv, model.cfg.cache_stride(), model.cfg.pool)?;
        state.ring.push_back(cache);
        while state.ring.len() > model.cfg.m - 1 {
            state.ring.pop_front();
        }
    }
    state.frame_counter += 1;
    Ok(StepOutput {
        logits_full,
        logits_feat,
        merged_value: merged,
        path_value: qkv.v,
        subnet_index: idx,
        frame_macs: g.macs() - macs_before,
        attention,
        ledger,
    })
}

/// Encode-only step for frames whose output is not needed (training windows):
/// runs the path and pushes its cache without aggregating or predicting.
pub fn step_encode_only(
    g: &mut Graph,
    model: &Model,
    state: &mut ScheduleState,
    frame: &Tensor,
) -> Result<()> {
    let t = state.frame_counter;
    let idx = state.assign_subnet(t);
    let net = &model.subnets[idx];
    let input = g.constant(frame.clone());
    let feat = net.forward_features(g, input)?;
    let qkv = net.encode_qkv(g, feat, t)?;
    if model.cfg.m > 1 {
        let cache = apm::downsample_cache(g, &qkv, model.cfg.cache_stride(), model.cfg.pool)?;
        state.ring.push_back(cache);
        while state.ring.len() > model.cfg.m - 1 {
            state.ring.pop_front();
        }
    }
    state.frame_counter += 1;
    Ok(())
}

/// Per-frame compute record for one schedule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatencyRecord {
    pub label: String,
    pub macs: Vec<u64>,
}

/// Summary statistics over a latency record.
#[derive(Debug, Clone, PartialEq)]
pub struct LatencyStats {
    pub mean: f64,
    pub max: u64,
    pub max_over_mean: f64,
    pub stddev: f64,
}

/// Synthetic keyframe-style schedule: a heavy cost every `period` frames and a
/// light cost otherwise. No network runs; this is the comparison strawman.
pub fn keyframe_schedule_sim(
    cost_deep: u64,
    cost_light: u64,
    period: usize,
    frames: usize,
) -> Result<LatencyRecord> {
    if period == 0 {
        return Err(Error::InvalidArg {
            op: "keyframe_schedule_sim",
            msg: "period must be >= 1".into(),
        });
    }
    let macs = (0..frames)
        .map(|t| if t % period == 0 { cost_deep } else { cost_light })
        .collect();
    Ok(LatencyRecord {
        label: format!("keyframe_p{period}"),
        macs,
    })
}

/// Mean, max, max/mean, and population standard deviation of per-frame MACs.
pub fn latency_stats(record: &LatencyRecord) -> Result<LatencyStats> {
    if record.macs.is_empty() {
        return Err(Error::Empty {
            op: "latency_stats",
        });
    }
    let n = record.macs.len() as f64;
    let mean = record.macs.iter().map(|&m| m as f64).sum::<f64>() / n;
    let max = *record.macs.iter().max().unwrap();
    let var = record
        .macs
        .iter()
        .map(|&m| {
            let d = m as f64 - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    Ok(LatencyStats {
        mean,
        max,
        max_over_mean: max as f64 / mean,
        stddev: var.sqrt(),
    })
}

/// CSV rows `(frame_index, mac_count, schedule_label)` for one or more records.
pub fn latency_csv(records: &[LatencyRecord]) -> String {
    let mut out = String::from("frame_index,mac_count,schedule_label\n");
    for r in records {
        for (i, m) in r.macs.iter().enumerate() {
            out.push_str(&format!("{i},{m},{}\n", r.label));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model_cfg(m: usize, aggregation: Aggregation) -> ModelConfig {
        ModelConfig {
            m,
            subnet: SubNetConfig {
                in_channels: 3,
                channels: 8,
                depth: 2,
                downsample_factor: 2,
                num_classes: 4,
            },
            stride_n: 2,
            aggregation,
            shared: false,
            pool: PoolKind::Max,
        }
    }

    fn random_frame(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Tensor {
        Tensor::new(
            vec![3, h, w],
            (0..3 * h * w).map(|_| rng.gen_range(0.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn assignment_is_circular_and_covers_all_paths() {
        let s = ScheduleState::new(4);
        let seq: Vec<usize> = (0..5).map(|t| s.assign_subnet(t)).collect();
        assert_eq!(seq, vec![0, 1, 2, 3, 0]);
        for start in 0..8 {
            let window: std::collections::BTreeSet<usize> =
                (start..start + 4).map(|t| s.assign_subnet(t)).collect();
            assert_eq!(window.len(), 4);
        }
        let single = ScheduleState::new(1);
        assert_eq!(single.assign_subnet(0), 0);
        assert_eq!(single.assign_subnet(17), 0);
    }

    #[test]
    fn custom_order_must_be_permutation() {
        assert!(ScheduleState::with_order(vec![1, 2, 0]).is_ok());
        assert!(ScheduleState::with_order(vec![1, 1, 0]).is_err());
        assert!(ScheduleState::with_order(vec![0, 3]).is_err());
    }

    #[test]
    fn first_frame_equals_single_path_segmentation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut g = Graph::new();
        let model = Model::build(&mut g, &model_cfg(4, Aggregation::Apm), 7).unwrap();
        let frame = random_frame(&mut rng, 8, 8);
        let mut state = ScheduleState::new(4);
        let out = step_stream(&mut g, &model, &mut state, &frame).unwrap();
        // Reference: run path 0 by hand with no history.
        let input = g.constant(frame.clone());
        let feat = model.subnets[0].forward_features(&mut g, input).unwrap();
        let qkv = model.subnets[0].encode_qkv(&mut g, feat, 0).unwrap();
        let logits = model.subnets[0].predict(&mut g, qkv.v).unwrap();
        assert!(g.tensor(out.logits_feat).max_abs_diff(g.tensor(logits)) < 1e-15);
        assert_eq!(out.ledger.sites.len(), 0);
    }

    #[test]
    fn ring_never_exceeds_m_minus_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut g = Graph::new();
        let model = Model::build(&mut g, &model_cfg(3, Aggregation::Apm), 3).unwrap();
        let mut state = ScheduleState::new(3);
        for t in 0..7 {
            let frame = random_frame(&mut rng, 8, 8);
            step_stream(&mut g, &model, &mut state, &frame).unwrap();
            assert_eq!(state.ring_len(), t.min(2) + if t < 2 { 1 } else { 0 }.max(0));
            assert!(state.ring_len() <= 2);
        }
        assert_eq!(state.ring_len(), 2);
    }

    #[test]
    fn steady_state_macs_match_analytic_ledger_exactly() {
        for aggregation in [Aggregation::Add, Aggregation::Sta, Aggregation::Apm] {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let mut g = Graph::new();
            let cfg = model_cfg(4, aggregation);
            let model = Model::build(&mut g, &cfg, 11).unwrap();
            let mut state = ScheduleState::new(4);
            let analytic = model.steady_frame_macs(8, 8).unwrap();
            let mut seen = Vec::new();
            for t in 0..8 {
                let frame = random_frame(&mut rng, 8, 8);
                let out = step_stream(&mut g, &model, &mut state, &frame).unwrap();
                if t >= 3 {
                    seen.push(out.frame_macs);
                }
            }
            for &m in &seen {
                assert_eq!(m, analytic, "aggregation {:?}", aggregation.name());
            }
        }
    }

    #[test]
    fn static_video_shared_model_is_frame_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut g = Graph::new();
        let mut cfg = model_cfg(4, Aggregation::Apm);
        cfg.shared = true;
        let model = Model::build(&mut g, &cfg, 13).unwrap();
        let mut state = ScheduleState::new(4);
        let frame = random_frame(&mut rng, 8, 8);
        let mut logits = Vec::new();
        for _ in 0..8 {
            let out = step_stream(&mut g, &model, &mut state, &frame).unwrap();
            logits.push(g.tensor(out.logits_feat).clone());
        }
        for t in 4..8 {
            assert!(logits[t].max_abs_diff(&logits[3]) < 1e-6);
        }
    }

    #[test]
    fn static_video_independent_model_is_period_m_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut g = Graph::new();
        let model = Model::build(&mut g, &model_cfg(4, Aggregation::Apm), 17).unwrap();
        let mut state = ScheduleState::new(4);
        let frame = random_frame(&mut rng, 8, 8);
        let mut logits = Vec::new();
        for _ in 0..12 {
            let out = step_stream(&mut g, &model, &mut state, &frame).unwrap();
            logits.push(g.tensor(out.logits_feat).clone());
        }
        for t in 3..8 {
            assert!(logits[t].max_abs_diff(&logits[t + 4]) < 1e-6);
        }
    }

    #[test]
    fn paths_keep_one_equals_single_frame_prediction() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut g = Graph::new();
        let model = Model::build(&mut g, &model_cfg(4, Aggregation::Apm), 19).unwrap();
        let mut state = ScheduleState::new(4);
        for _ in 0..5 {
            let frame = random_frame(&mut rng, 8, 8);
            step_stream(&mut g, &model, &mut state, &frame).unwrap();
        }
        let frame = random_frame(&mut rng, 8, 8);
        let t = state.frame_counter;
        let idx = state.assign_subnet(t);
        let out =
            step_stream_with_options(&mut g, &model, &mut state, &frame, Some(1)).unwrap();
        assert_eq!(out.subnet_index, idx);
        let input = g.constant(frame.clone());
        let feat = model.subnets[idx].forward_features(&mut g, input).unwrap();
        let qkv = model.subnets[idx].encode_qkv(&mut g, feat, t).unwrap();
        let logits = model.subnets[idx].predict(&mut g, qkv.v).unwrap();
        assert!(g.tensor(out.logits_feat).max_abs_diff(g.tensor(logits)) < 1e-15);
    }

    #[test]
    fn encode_only_steps_match_full_steps_for_later_aggregation() {
        // A window processed with encode-only prefix must give the same final
        // logits as one processed with full steps.
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let frames: Vec<Tensor> = (0..4).map(|_| random_frame(&mut rng, 8, 8)).collect();

        let mut g1 = Graph::new();
        let model1 = Model::build(&mut g1, &model_cfg(4, Aggregation::Apm), 23).unwrap();
        let mut s1 = ScheduleState::new(4);
        let mut last = None;
        for f in &frames {
            last = Some(step_stream(&mut g1, &model1, &mut s1, f).unwrap());
        }
        let full = g1.tensor(last.unwrap().logits_feat).clone();

        let mut g2 = Graph::new();
        let model2 = Model::build(&mut g2, &model_cfg(4, Aggregation::Apm), 23).unwrap();
        let mut s2 = ScheduleState::new(4);
        for f in &frames[..3] {
            step_encode_only(&mut g2, &model2, &mut s2, f).unwrap();
        }
        let out = step_stream(&mut g2, &model2, &mut s2, &frames[3]).unwrap();
        assert!(g2.tensor(out.logits_feat).max_abs_diff(&full) < 1e-12);
    }

    #[test]
    fn keyframe_sim_worked_examples() {
        let r = keyframe_schedule_sim(575, 156, 5, 10).unwrap();
        let s = latency_stats(&r).unwrap();
        assert_eq!(s.max, 575);
        assert!((s.mean - 239.8).abs() < 1e-9);
        assert!((s.max_over_mean - 575.0 / 239.8).abs() < 1e-9);

        let constant = keyframe_schedule_sim(100, 7, 1, 6).unwrap();
        assert!(constant.macs.iter().all(|&m| m == 100));

        let flat = keyframe_schedule_sim(50, 50, 4, 8).unwrap();
        let fs = latency_stats(&flat).unwrap();
        assert_eq!(fs.max_over_mean, 1.0);
        assert_eq!(fs.stddev, 0.0);
    }

    #[test]
    fn latency_stats_worked_example_and_empty_error() {
        let r = LatencyRecord {
            label: "x".into(),
            macs: vec![1, 1, 1, 5],
        };
        let s = latency_stats(&r).unwrap();
        assert_eq!(s.mean, 2.0);
        assert_eq!(s.max, 5);
        assert_eq!(s.max_over_mean, 2.5);
        assert!((s.stddev - 3.0f64.sqrt()).abs() < 1e-12);
        assert!(latency_stats(&LatencyRecord {
            label: "e".into(),
            macs: vec![]
        })
        .is_err());
    }

    #[test]
    fn latency_csv_format() {
        let r = keyframe_schedule_sim(9, 2, 3, 4).unwrap();
        let csv = latency_csv(&[r]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "frame_index,mac_count,schedule_label");
        assert_eq!(lines[1], "0,9,keyframe_p3");
        assert_eq!(lines[2], "1,2,keyframe_p3");
        assert_eq!(lines[4], "3,9,keyframe_p3");
    }
}
