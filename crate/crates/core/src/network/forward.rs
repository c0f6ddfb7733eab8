use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{CanLayer, ParamId, TrackerModel, CAN_HIDDEN, COMMON_SIZE, LEVELS, LEVEL_SIZES};
use crate::error::{Error, Result};
use crate::numerics::{
    batchnorm2d, batchnorm2d_backward, concat_channels, conv2d, conv2d_backward, dropout, ensure_finite,
    fully_connected, fully_connected_backward, maxpool2d, maxpool2d_backward, relu_inplace, scale_channel,
    scale_channel_backward, sigmoid_biased, sigmoid_biased_grad, split_channels_grad, BatchNormCache, Mode, Pooled,
    RunningStats, Tensor,
};
use crate::parallel::{map_ordered, Execution};

const PLANE: usize = COMMON_SIZE * COMMON_SIZE;

/// Network inputs for one sample. Single-stream variants ignore `prev`.
#[derive(Debug, Clone, Copy)]
pub struct PatchPair<'a> {
    pub prev: Option<&'a Tensor>,
    pub curr: &'a Tensor,
}

/// Channel weights recorded during a forward pass, indexed
/// `[stream][level][channel]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    pub per_stream: Vec<Vec<Vec<f64>>>,
}

impl AttentionWeights {
    pub fn count(&self) -> usize {
        self.per_stream.iter().flatten().map(Vec::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.per_stream.iter().flatten().flatten().copied()
    }
}

/// Eval-mode result for a single sample.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub output: [f64; 3],
    pub attention: Option<AttentionWeights>,
}

/// Per-parameter gradient buffers, allocated on first touch.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    bufs: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub(crate) fn new(n_params: usize) -> Self {
        Self { bufs: vec![None; n_params] }
    }

    fn add(&mut self, id: ParamId, values: &[f64]) {
        let slot = self.bufs[id.0].get_or_insert_with(|| vec![0.0; values.len()]);
        for (a, b) in slot.iter_mut().zip(values) {
            *a += b;
        }
    }

    /// Sum `other` into `self`.
    pub fn merge(&mut self, other: &Gradients) {
        for (i, g) in other.bufs.iter().enumerate() {
            if let Some(g) = g {
                self.add(ParamId(i), g);
            }
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.bufs[id.0].as_deref()
    }

    pub fn buffers(&self) -> &[Option<Vec<f64>>] {
        &self.bufs
    }
}

#[derive(Debug, Clone)]
struct LevelAttention {
    /// Post-relu hidden activations, `[channels, CAN_HIDDEN]`.
    hidden: Vec<f64>,
    omega: Vec<f64>,
}

#[derive(Debug, Clone)]
struct StreamTrace {
    input: Tensor,
    conv_out: Vec<Tensor>,
    fen_pools: Vec<Option<Vec<usize>>>,
    levels: Vec<Tensor>,
    /// Per used level: argmax tables of each pooling stage to the common size.
    common_pools: Vec<Vec<(Vec<usize>, usize)>>,
    pooled: Vec<Tensor>,
    attention: Option<Vec<LevelAttention>>,
    weighted: Vec<Tensor>,
}

#[derive(Debug, Clone)]
struct HeadTrace {
    inputs: Vec<Tensor>,
    bn_cache: Option<BatchNormCache>,
    a0: Vec<Vec<f64>>,
    h1: Vec<Vec<f64>>,
    m1: Vec<Option<Vec<f64>>>,
    d1: Vec<Vec<f64>>,
    h2: Vec<Vec<f64>>,
    m2: Vec<Option<Vec<f64>>>,
    d2: Vec<Vec<f64>>,
}

/// Everything a batch forward keeps for the backward pass.
#[derive(Debug, Clone)]
pub struct BatchTrace {
    mode: Mode,
    streams: Vec<Vec<StreamTrace>>,
    head: HeadTrace,
}

impl BatchTrace {
    pub fn attention(&self) -> Vec<Option<AttentionWeights>> {
        self.streams
            .iter()
            .map(|sample| {
                sample
                    .iter()
                    .map(|s| s.attention.as_ref().map(|lv| lv.iter().map(|a| a.omega.clone()).collect()))
                    .collect::<Option<Vec<_>>>()
                    .map(|per_stream| AttentionWeights { per_stream })
            })
            .collect()
    }
}

/// Max-pool a level's output down to the common 6×6 size: level 1 through
/// (6, 4) then (3, 2); levels 2-4 through (3, 2); level 5 unchanged.
pub fn pool_to_common(level: usize, map: &Tensor) -> Result<Tensor> {
    Ok(pool_to_common_traced(level, map)?.0)
}

fn pool_to_common_traced(level: usize, map: &Tensor) -> Result<(Tensor, Vec<(Vec<usize>, usize)>)> {
    if level >= LEVELS || map.shape().len() != 3 || map.shape()[1] != LEVEL_SIZES[level] || map.shape()[2] != LEVEL_SIZES[level] {
        return Err(Error::dim(
            "pool_to_common",
            format!("level {} map {:?}, expected {}x{}", level + 1, map.shape(), LEVEL_SIZES.get(level).copied().unwrap_or(0), LEVEL_SIZES.get(level).copied().unwrap_or(0)),
        ));
    }
    let stages: &[(usize, usize)] = match level {
        0 => &[(6, 4), (3, 2)],
        4 => &[],
        _ => &[(3, 2)],
    };
    let mut current = map.clone();
    let mut trace = Vec::with_capacity(stages.len());
    for &(k, s) in stages {
        let input_len = current.len();
        let Pooled { output, argmax } = maxpool2d(&current, k, s)?;
        trace.push((argmax, input_len));
        current = output;
    }
    Ok((current, trace))
}

/// Channel weight ω for one pooled 6×6 channel: flatten, FC + relu, FC, then
/// the 0.5-shifted sigmoid.
pub fn can_weight(model: &TrackerModel, level: usize, channel: &Tensor) -> Result<f64> {
    let cans = model
        .cans
        .as_ref()
        .ok_or_else(|| Error::Config(format!("variant {} has no attention", model.variant())))?;
    if channel.len() != PLANE {
        return Err(Error::dim("can_weight", format!("expected a 6x6 channel, got {:?}", channel.shape())));
    }
    Ok(model.can_forward_channel(&cans[level], channel.data())?.1)
}

impl TrackerModel {
    fn value(&self, id: ParamId) -> &Tensor {
        &self.param(id).value
    }

    fn can_forward_channel(&self, can: &CanLayer, channel: &[f64]) -> Result<(Vec<f64>, f64)> {
        let mut hidden = fully_connected(channel, self.value(can.fc1_w), self.value(can.fc1_b))?;
        relu_inplace(&mut hidden);
        let z = fully_connected(&hidden, self.value(can.fc2_w), self.value(can.fc2_b))?[0];
        Ok((hidden, sigmoid_biased(z)))
    }

    fn stream_forward(&self, patch: &Tensor) -> Result<StreamTrace> {
        let s = self.input_size();
        if patch.shape() != [3, s, s] {
            return Err(Error::dim("fen_forward", format!("patch {:?}, expected [3, {s}, {s}]", patch.shape())));
        }
        let scale = self.fen_config().input_scale;
        let input = Tensor::new(patch.shape().to_vec(), patch.data().iter().map(|v| v * scale).collect())?;

        let mut conv_out = Vec::with_capacity(LEVELS);
        let mut fen_pools = Vec::with_capacity(LEVELS);
        let mut levels: Vec<Tensor> = Vec::with_capacity(LEVELS);
        for layer in &self.fen {
            let x = levels.last().unwrap_or(&input);
            let mut y = conv2d(x, self.value(layer.w), self.value(layer.b), layer.stride, layer.pad)?;
            relu_inplace(y.data_mut());
            match layer.pool {
                Some((k, st)) => {
                    let p = maxpool2d(&y, k, st)?;
                    levels.push(p.output);
                    fen_pools.push(Some(p.argmax));
                }
                None => {
                    levels.push(y.clone());
                    fen_pools.push(None);
                }
            }
            conv_out.push(y);
        }

        let used = self.variant().levels();
        let mut common_pools = Vec::with_capacity(used.len());
        let mut pooled = Vec::with_capacity(used.len());
        for &l in used {
            let (map, trace) = pool_to_common_traced(l, &levels[l])?;
            pooled.push(map);
            common_pools.push(trace);
        }

        let (weighted, attention) = match &self.cans {
            Some(cans) => {
                let mut weighted = Vec::with_capacity(used.len());
                let mut att = Vec::with_capacity(used.len());
                for (i, &l) in used.iter().enumerate() {
                    let map = &pooled[i];
                    let channels = map.shape()[0];
                    let mut hidden = Vec::with_capacity(channels * CAN_HIDDEN);
                    let mut omega = Vec::with_capacity(channels);
                    let mut out = Vec::with_capacity(map.len());
                    for ch in map.data().chunks_exact(PLANE) {
                        let (h, w) = self.can_forward_channel(&cans[l], ch)?;
                        hidden.extend_from_slice(&h);
                        omega.push(w);
                        out.extend(scale_channel(ch, w));
                    }
                    weighted.push(Tensor::new(map.shape().to_vec(), out)?);
                    att.push(LevelAttention { hidden, omega });
                }
                (weighted, Some(att))
            }
            None => (pooled.clone(), None),
        };

        Ok(StreamTrace {
            input,
            conv_out,
            fen_pools,
            levels,
            common_pools,
            pooled,
            attention,
            weighted,
        })
    }

    fn stream_backward(&self, trace: &StreamTrace, grad_weighted: &[Vec<f64>], grads: &mut Gradients) -> Result<()> {
        let used = self.variant().levels();
        let frozen = self.fen_config().frozen;
        let mut grad_levels: Vec<Vec<f64>> = trace.levels.iter().map(|t| vec![0.0; t.len()]).collect();

        for (i, &l) in used.iter().enumerate() {
            let g_weighted = &grad_weighted[i];
            let pooled = trace.pooled[i].data();
            let g_pooled = match (&self.cans, &trace.attention) {
                (Some(cans), Some(att)) => {
                    let can = &cans[l];
                    let att = &att[i];
                    let fc1_w = self.value(can.fc1_w);
                    let fc2_w = self.value(can.fc2_w);
                    let mut g_fc1_w = vec![0.0; fc1_w.len()];
                    let mut g_fc1_b = vec![0.0; CAN_HIDDEN];
                    let mut g_fc2_w = vec![0.0; fc2_w.len()];
                    let mut g_fc2_b = vec![0.0; 1];
                    let mut g_pooled = Vec::with_capacity(pooled.len());
                    for (ch, (x, g)) in pooled.chunks_exact(PLANE).zip(g_weighted.chunks_exact(PLANE)).enumerate() {
                        let omega = att.omega[ch];
                        let hidden = &att.hidden[ch * CAN_HIDDEN..(ch + 1) * CAN_HIDDEN];
                        let (mut gx, g_omega) = scale_channel_backward(x, omega, g);
                        let gz = g_omega * sigmoid_biased_grad(omega);
                        let mut gh = fully_connected_backward(hidden, fc2_w, &[gz], &mut g_fc2_w, &mut g_fc2_b, true)
                            .expect("input grad requested");
                        for (gv, &h) in gh.iter_mut().zip(hidden) {
                            if h <= 0.0 {
                                *gv = 0.0;
                            }
                        }
                        let gx_att = fully_connected_backward(x, fc1_w, &gh, &mut g_fc1_w, &mut g_fc1_b, true)
                            .expect("input grad requested");
                        for (a, b) in gx.iter_mut().zip(gx_att) {
                            *a += b;
                        }
                        g_pooled.extend(gx);
                    }
                    grads.add(can.fc1_w, &g_fc1_w);
                    grads.add(can.fc1_b, &g_fc1_b);
                    grads.add(can.fc2_w, &g_fc2_w);
                    grads.add(can.fc2_b, &g_fc2_b);
                    g_pooled
                }
                _ => g_weighted.clone(),
            };
            if frozen {
                continue;
            }
            let mut g = g_pooled;
            for (argmax, input_len) in trace.common_pools[i].iter().rev() {
                let mut up = vec![0.0; *input_len];
                maxpool2d_backward(argmax, &g, &mut up);
                g = up;
            }
            for (a, b) in grad_levels[l].iter_mut().zip(&g) {
                *a += b;
            }
        }
        if frozen {
            return Ok(());
        }

        for l in (0..LEVELS).rev() {
            let layer = &self.fen[l];
            let g_level = std::mem::take(&mut grad_levels[l]);
            let conv = &trace.conv_out[l];
            let mut g_conv = match &trace.fen_pools[l] {
                Some(argmax) => {
                    let mut up = vec![0.0; conv.len()];
                    maxpool2d_backward(argmax, &g_level, &mut up);
                    up
                }
                None => g_level,
            };
            for (gv, &y) in g_conv.iter_mut().zip(conv.data()) {
                if y <= 0.0 {
                    *gv = 0.0;
                }
            }
            let w = self.value(layer.w);
            let mut g_w = vec![0.0; w.len()];
            let mut g_b = vec![0.0; w.shape()[0]];
            let (input, grad_input) = if l == 0 {
                (&trace.input, None)
            } else {
                let (lower, _) = grad_levels.split_at_mut(l);
                (&trace.levels[l - 1], Some(lower[l - 1].as_mut_slice()))
            };
            conv2d_backward(input, w, layer.stride, layer.pad, &g_conv, grad_input, &mut g_w, &mut g_b)?;
            grads.add(layer.w, &g_w);
            grads.add(layer.b, &g_b);
        }
        Ok(())
    }

    fn head_forward<R: Rng + ?Sized>(
        &self,
        inputs: Vec<Tensor>,
        mode: Mode,
        stats: &mut RunningStats,
        rng: &mut R,
    ) -> Result<(Vec<[f64; 3]>, HeadTrace)> {
        let h = &self.head;
        let batch = inputs.len();
        let f = self.head_config().fusion_kernels;
        let p = self.head_config().dropout;

        let mut fused = Vec::with_capacity(batch * f * PLANE);
        for x in &inputs {
            fused.extend(conv2d(x, self.value(h.fuse_w), self.value(h.fuse_b), 1, 0)?.into_data());
        }
        let fused = Tensor::new(vec![batch, f, COMMON_SIZE, COMMON_SIZE], fused)?;
        let (normed, bn_cache) = batchnorm2d(&fused, self.value(h.bn_gamma), self.value(h.bn_beta), stats, mode)?;

        let mut trace = HeadTrace {
            inputs,
            bn_cache,
            a0: Vec::with_capacity(batch),
            h1: Vec::with_capacity(batch),
            m1: Vec::with_capacity(batch),
            d1: Vec::with_capacity(batch),
            h2: Vec::with_capacity(batch),
            m2: Vec::with_capacity(batch),
            d2: Vec::with_capacity(batch),
        };
        let mut outputs = Vec::with_capacity(batch);
        for sample in normed.data().chunks_exact(f * PLANE) {
            let mut a0 = sample.to_vec();
            relu_inplace(&mut a0);
            let mut h1 = fully_connected(&a0, self.value(h.fc1_w), self.value(h.fc1_b))?;
            relu_inplace(&mut h1);
            let (d1, m1) = dropout(&h1, p, mode, rng)?;
            let mut h2 = fully_connected(&d1, self.value(h.fc2_w), self.value(h.fc2_b))?;
            relu_inplace(&mut h2);
            let (d2, m2) = dropout(&h2, p, mode, rng)?;
            let out = fully_connected(&d2, self.value(h.fc3_w), self.value(h.fc3_b))?;
            outputs.push([out[0], out[1], out[2]]);
            trace.a0.push(a0);
            trace.h1.push(h1);
            trace.m1.push(m1);
            trace.d1.push(d1);
            trace.h2.push(h2);
            trace.m2.push(m2);
            trace.d2.push(d2);
        }
        Ok((outputs, trace))
    }

    /// Returns per-sample gradients w.r.t. the concatenated head inputs.
    fn head_backward(&self, trace: &HeadTrace, grad_out: &[[f64; 3]], grads: &mut Gradients) -> Result<Vec<Vec<f64>>> {
        let h = &self.head;
        let f = self.head_config().fusion_kernels;
        let batch = trace.inputs.len();
        let bn_cache = trace
            .bn_cache
            .as_ref()
            .ok_or_else(|| Error::Config("backward requires a train-mode forward".into()))?;

        let mut g_fc3_w = vec![0.0; self.value(h.fc3_w).len()];
        let mut g_fc3_b = vec![0.0; 3];
        let mut g_fc2_w = vec![0.0; self.value(h.fc2_w).len()];
        let mut g_fc2_b = vec![0.0; self.head_config().fc_units];
        let mut g_fc1_w = vec![0.0; self.value(h.fc1_w).len()];
        let mut g_fc1_b = vec![0.0; self.head_config().fc_units];
        let mut g_normed = Vec::with_capacity(batch * f * PLANE);

        let mask = |g: &mut [f64], m: &Option<Vec<f64>>, pre: &[f64]| {
            if let Some(m) = m {
                g.iter_mut().zip(m).for_each(|(a, s)| *a *= s);
            }
            g.iter_mut().zip(pre).for_each(|(a, &y)| {
                if y <= 0.0 {
                    *a = 0.0
                }
            });
        };
        for b in 0..batch {
            let mut g = fully_connected_backward(&trace.d2[b], self.value(h.fc3_w), &grad_out[b], &mut g_fc3_w, &mut g_fc3_b, true)
                .expect("input grad requested");
            mask(&mut g, &trace.m2[b], &trace.h2[b]);
            let mut g = fully_connected_backward(&trace.d1[b], self.value(h.fc2_w), &g, &mut g_fc2_w, &mut g_fc2_b, true)
                .expect("input grad requested");
            mask(&mut g, &trace.m1[b], &trace.h1[b]);
            let mut g = fully_connected_backward(&trace.a0[b], self.value(h.fc1_w), &g, &mut g_fc1_w, &mut g_fc1_b, true)
                .expect("input grad requested");
            mask(&mut g, &None, &trace.a0[b]);
            g_normed.extend(g);
        }
        grads.add(h.fc3_w, &g_fc3_w);
        grads.add(h.fc3_b, &g_fc3_b);
        grads.add(h.fc2_w, &g_fc2_w);
        grads.add(h.fc2_b, &g_fc2_b);
        grads.add(h.fc1_w, &g_fc1_w);
        grads.add(h.fc1_b, &g_fc1_b);

        let mut g_gamma = vec![0.0; f];
        let mut g_beta = vec![0.0; f];
        let g_fused = batchnorm2d_backward(bn_cache, self.value(h.bn_gamma), &g_normed, &mut g_gamma, &mut g_beta);
        grads.add(h.bn_gamma, &g_gamma);
        grads.add(h.bn_beta, &g_beta);

        let fuse_w = self.value(h.fuse_w);
        let mut g_fuse_w = vec![0.0; fuse_w.len()];
        let mut g_fuse_b = vec![0.0; f];
        let mut g_inputs = Vec::with_capacity(batch);
        for (x, g) in trace.inputs.iter().zip(g_fused.chunks_exact(f * PLANE)) {
            let mut gx = vec![0.0; x.len()];
            conv2d_backward(x, fuse_w, 1, 0, g, Some(&mut gx), &mut g_fuse_w, &mut g_fuse_b)?;
            g_inputs.push(gx);
        }
        grads.add(h.fuse_w, &g_fuse_w);
        grads.add(h.fuse_b, &g_fuse_b);
        Ok(g_inputs)
    }

    fn forward_inner<R: Rng + ?Sized>(
        &self,
        inputs: &[PatchPair<'_>],
        mode: Mode,
        stats: &mut RunningStats,
        rng: &mut R,
        exec: Execution,
    ) -> Result<(Vec<[f64; 3]>, BatchTrace)> {
        if inputs.is_empty() {
            return Err(Error::Config("empty batch".into()));
        }
        let two_stream = self.variant().streams() == 2;
        if two_stream && inputs.iter().any(|p| p.prev.is_none()) {
            return Err(Error::Config(format!("variant {} needs the previous-frame patch", self.variant())));
        }
        let streams: Vec<Result<Vec<StreamTrace>>> = map_ordered(exec, inputs, |pair| {
            let mut out = Vec::with_capacity(2);
            if two_stream {
                out.push(self.stream_forward(pair.prev.expect("checked above"))?);
            }
            out.push(self.stream_forward(pair.curr)?);
            Ok(out)
        });
        let streams = streams.into_iter().collect::<Result<Vec<_>>>()?;
        let head_inputs = streams
            .iter()
            .map(|sample| {
                let maps: Vec<&Tensor> = sample.iter().flat_map(|s| s.weighted.iter()).collect();
                concat_channels(&maps)
            })
            .collect::<Result<Vec<_>>>()?;
        let (outputs, head) = self.head_forward(head_inputs, mode, stats, rng)?;
        Ok((outputs, BatchTrace { mode, streams, head }))
    }

    /// Batch forward. Train mode updates batch-norm running statistics and
    /// draws dropout masks from `rng`.
    pub fn forward_batch<R: Rng + ?Sized>(
        &mut self,
        inputs: &[PatchPair<'_>],
        mode: Mode,
        rng: &mut R,
        exec: Execution,
    ) -> Result<(Vec<[f64; 3]>, BatchTrace)> {
        let mut stats = self.bn_stats.clone();
        let result = self.forward_inner(inputs, mode, &mut stats, rng, exec)?;
        if mode == Mode::Train {
            self.bn_stats = stats;
        }
        Ok(result)
    }

    /// Gradients of `Σ grad_outputs · outputs` for a train-mode trace.
    pub fn backward_batch(&self, trace: &BatchTrace, grad_outputs: &[[f64; 3]], exec: Execution) -> Result<Gradients> {
        if trace.mode != Mode::Train {
            return Err(Error::Config("backward requires a train-mode forward".into()));
        }
        if grad_outputs.len() != trace.streams.len() {
            return Err(Error::dim("backward_batch", "one output gradient per sample"));
        }
        let n = self.params().len();
        let mut grads = Gradients::new(n);
        let g_inputs = self.head_backward(&trace.head, grad_outputs, &mut grads)?;

        let used = self.variant().levels();
        let counts: Vec<usize> = used.iter().map(|&l| self.fen_config().channels[l]).collect();
        let jobs: Vec<(&Vec<StreamTrace>, &Vec<f64>)> = trace.streams.iter().zip(&g_inputs).collect();
        let per_sample: Vec<Result<Gradients>> = map_ordered(exec, &jobs, |(sample, g)| {
            let mut local = Gradients::new(n);
            let mut all_counts = Vec::with_capacity(counts.len() * sample.len());
            for _ in 0..sample.len() {
                all_counts.extend_from_slice(&counts);
            }
            let parts = split_channels_grad(g, &all_counts, PLANE);
            for (s, chunk) in sample.iter().zip(parts.chunks(counts.len())) {
                self.stream_backward(s, chunk, &mut local)?;
            }
            Ok(local)
        });
        // Reduce in sample order so the sum is independent of scheduling.
        for g in per_sample {
            grads.merge(&g?);
        }
        for g in grads.bufs.iter().flatten() {
            ensure_finite(g, "backward_batch")?;
        }
        Ok(grads)
    }

    /// Eval-mode forward for a single sample.
    pub fn predict(&self, prev: Option<&Tensor>, curr: &Tensor) -> Result<Prediction> {
        let mut stats = self.bn_stats.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (outputs, trace) =
            self.forward_inner(&[PatchPair { prev, curr }], Mode::Eval, &mut stats, &mut rng, Execution::Sequential)?;
        let attention = trace.attention().pop().flatten();
        Ok(Prediction {
            output: outputs[0],
            attention,
        })
    }

    /// The five feature levels of one patch, before pooling to the common size.
    pub fn fen_forward(&self, patch: &Tensor) -> Result<Vec<Tensor>> {
        Ok(self.stream_forward(patch)?.levels)
    }
}

#[cfg(test)]
mod tests {
    use super::super::{FenConfig, HeadConfig, Variant};
    use super::*;
    use crate::numerics::gradcheck::max_relative_error;

    fn random_patch(seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(vec![3, 224, 224], (0..3 * 224 * 224).map(|_| rng.random_range(-100.0..100.0)).collect()).unwrap()
    }

    fn model(v: Variant) -> TrackerModel {
        TrackerModel::new(v, FenConfig::default(), HeadConfig::default(), 3).unwrap()
    }

    #[test]
    fn fen_level_shapes() {
        let m = model(Variant::Aftn);
        let levels = m.fen_forward(&random_patch(1)).unwrap();
        let shapes: Vec<&[usize]> = levels.iter().map(|t| t.shape()).collect();
        assert_eq!(shapes, vec![&[4, 54, 54][..], &[8, 13, 13], &[16, 13, 13], &[16, 13, 13], &[16, 6, 6]]);
        for (l, t) in levels.iter().enumerate() {
            assert_eq!(pool_to_common(l, t).unwrap().shape()[1..], [6, 6]);
        }
        assert_eq!(pool_to_common(4, &levels[4]).unwrap(), levels[4]);
        assert!(pool_to_common(1, &levels[0]).is_err());
    }

    #[test]
    fn zero_fen_gives_zero_features() {
        let mut m = model(Variant::Aftn);
        for p in m.params_mut().iter_mut().filter(|p| p.name.starts_with("fen.")) {
            p.value.data_mut().fill(0.0);
        }
        for t in m.fen_forward(&random_patch(2)).unwrap() {
            assert!(t.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn zero_attention_weights_are_one() {
        let mut m = model(Variant::Aftn);
        m.zero_attention();
        let ch = Tensor::new(vec![6, 6], (0..36).map(|i| i as f64).collect()).unwrap();
        assert_eq!(can_weight(&m, 0, &ch).unwrap(), 1.0);
        let pred = m.predict(Some(&random_patch(3)), &random_patch(4)).unwrap();
        let att = pred.attention.unwrap();
        assert_eq!(att.per_stream.len(), 2);
        assert_eq!(att.per_stream[0].iter().map(Vec::len).sum::<usize>(), 60);
        assert_eq!(att.count(), 120);
        assert!(att.iter().all(|w| w == 1.0));
        assert!(can_weight(&model(Variant::AftnNoAtt), 0, &ch).is_err());
    }

    #[test]
    fn single_stream_ignores_previous_patch() {
        let m = model(Variant::AftnC);
        let curr = random_patch(5);
        let a = m.predict(Some(&random_patch(6)), &curr).unwrap().output;
        let b = m.predict(Some(&random_patch(7)), &curr).unwrap().output;
        let c = m.predict(None, &curr).unwrap().output;
        assert_eq!(a, b);
        assert_eq!(a, c);
        assert!(model(Variant::Aftn).predict(None, &curr).is_err());
    }

    #[test]
    fn eval_forward_is_deterministic() {
        let m = model(Variant::Aftn);
        let (p, c) = (random_patch(8), random_patch(9));
        assert_eq!(m.predict(Some(&p), &c).unwrap().output, m.predict(Some(&p), &c).unwrap().output);
    }

    #[test]
    fn backward_matches_finite_differences_on_head_and_attention() {
        let mut m = TrackerModel::new(
            Variant::Aftn,
            FenConfig { channels: [4, 4, 4, 4, 4], frozen: false, ..FenConfig::default() },
            HeadConfig { fusion_kernels: 4, fc_units: 8, dropout: 0.5 },
            11,
        )
        .unwrap();
        // give the attention output layer non-zero weights so every path is live
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for p in m.params_mut().iter_mut().filter(|p| p.name.contains("fc2") && p.name.starts_with("can")) {
            p.value.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.3..0.3));
        }
        let patches: Vec<Tensor> = (0..4).map(|i| random_patch(20 + i)).collect();
        let pairs: Vec<PatchPair> = (0..2).map(|i| PatchPair { prev: Some(&patches[2 * i]), curr: &patches[2 * i + 1] }).collect();
        let probe = [[0.3, -0.7, 0.5], [-0.2, 0.9, 0.4]];
        let loss = |m: &mut TrackerModel| -> f64 {
            let mut r = ChaCha8Rng::seed_from_u64(99);
            let (out, _) = m.forward_batch(&pairs, Mode::Train, &mut r, Execution::Sequential).unwrap();
            out.iter().zip(&probe).flat_map(|(o, p)| o.iter().zip(p).map(|(a, b)| a * b)).sum()
        };
        let mut r = ChaCha8Rng::seed_from_u64(99);
        let (_, trace) = m.forward_batch(&pairs, Mode::Train, &mut r, Execution::Sequential).unwrap();
        let grads = m.backward_batch(&trace, &probe, Execution::Sequential).unwrap();

        for name in ["can1.fc1.weight", "can3.fc2.weight", "can5.fc2.bias", "head.fuse.weight", "head.bn.gamma", "head.fc1.weight", "head.fc3.bias", "fen.conv5.weight", "fen.conv2.bias"] {
            let idx = m.params().iter().position(|p| p.name == name).unwrap();
            let analytic = grads.get(ParamId(idx)).unwrap().to_vec();
            let len = analytic.len();
            let picks: Vec<usize> = (0..len.min(6)).map(|k| k * len / len.min(6)).collect();
            let mut numeric = Vec::new();
            for &j in &picks {
                let orig = m.params()[idx].value.data()[j];
                m.params_mut()[idx].value.data_mut()[j] = orig + 1e-5;
                let up = loss(&mut m);
                m.params_mut()[idx].value.data_mut()[j] = orig - 1e-5;
                let down = loss(&mut m);
                m.params_mut()[idx].value.data_mut()[j] = orig;
                numeric.push((up - down) / 2e-5);
            }
            let a: Vec<f64> = picks.iter().map(|&j| analytic[j]).collect();
            let err = max_relative_error(&a, &numeric);
            assert!(err < 1e-3, "{name}: {err} {a:?} {numeric:?}");
        }
    }
}
