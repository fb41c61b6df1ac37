//! Per-sample forward and backward passes.
//!
//! Sequences are stored row-major as `steps × features`. Parameter tensors
//! are borrowed from the [`ParamSet`] by position; gradients are written to
//! the matching positions of a zeroed [`GradSet`].

use super::init::layout;
use super::{bce_with_grad, ModelKind, ModelSpec};
use crate::error::{Error, Result};
use crate::tensor::{GradSet, ParamSet};

struct Dense<'a> {
    w: &'a [f64],
    b: &'a [f64],
    inputs: usize,
    outputs: usize,
    wi: usize,
    bi: usize,
}

impl Dense<'_> {
    fn forward(&self, x: &[f64]) -> Vec<f64> {
        (0..self.outputs)
            .map(|o| {
                let row = &self.w[o * self.inputs..(o + 1) * self.inputs];
                self.b[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect()
    }

    /// Accumulates weight and bias gradients; returns the input gradient.
    fn backward(&self, x: &[f64], dy: &[f64], gs: &mut [&mut [f64]]) -> Vec<f64> {
        let gw = &mut gs[self.wi];
        for (o, &d) in dy.iter().enumerate() {
            let row = &mut gw[o * self.inputs..(o + 1) * self.inputs];
            row.iter_mut().zip(x).for_each(|(g, v)| *g += d * v);
        }
        gs[self.bi].iter_mut().zip(dy).for_each(|(g, d)| *g += d);
        let mut dx = vec![0.0; self.inputs];
        for (o, &d) in dy.iter().enumerate() {
            let row = &self.w[o * self.inputs..(o + 1) * self.inputs];
            dx.iter_mut().zip(row).for_each(|(g, w)| *g += w * d);
        }
        dx
    }
}

struct Conv<'a> {
    w: &'a [f64],
    b: &'a [f64],
    filters: usize,
    kernel: usize,
    in_ch: usize,
    pool: usize,
    wi: usize,
    bi: usize,
}

struct ConvCache {
    /// ReLU output, `conv_len × filters`
    relu: Vec<f64>,
    /// time index of each pooled maximum, `pooled_len × filters`
    argmax: Vec<usize>,
}

impl Conv<'_> {
    /// Valid convolution, ReLU, non-overlapping max-pool.
    fn forward(&self, x: &[f64], steps: usize) -> (Vec<f64>, ConvCache) {
        let (f_n, k_n, c_n) = (self.filters, self.kernel, self.in_ch);
        let conv_len = steps - k_n + 1;
        let mut relu = vec![0.0; conv_len * f_n];
        for t in 0..conv_len {
            let window = &x[t * c_n..(t + k_n) * c_n];
            for f in 0..f_n {
                let kern = &self.w[f * k_n * c_n..(f + 1) * k_n * c_n];
                let z = self.b[f] + kern.iter().zip(window).map(|(w, v)| w * v).sum::<f64>();
                relu[t * f_n + f] = z.max(0.0);
            }
        }
        let pooled_len = conv_len / self.pool;
        let mut out = vec![0.0; pooled_len * f_n];
        let mut argmax = vec![0; pooled_len * f_n];
        for p in 0..pooled_len {
            for f in 0..f_n {
                let mut best = p * self.pool;
                for t in p * self.pool + 1..(p + 1) * self.pool {
                    if relu[t * f_n + f] > relu[best * f_n + f] {
                        best = t;
                    }
                }
                out[p * f_n + f] = relu[best * f_n + f];
                argmax[p * f_n + f] = best;
            }
        }
        (out, ConvCache { relu, argmax })
    }

    fn backward(
        &self,
        x: &[f64],
        cache: &ConvCache,
        d_out: &[f64],
        gs: &mut [&mut [f64]],
    ) -> Vec<f64> {
        let (f_n, k_n, c_n) = (self.filters, self.kernel, self.in_ch);
        let conv_len = cache.relu.len() / f_n;
        let mut dz = vec![0.0; conv_len * f_n];
        for (slot, &d) in d_out.iter().enumerate() {
            let f = slot % f_n;
            let t = cache.argmax[slot];
            if cache.relu[t * f_n + f] > 0.0 {
                dz[t * f_n + f] += d;
            }
        }
        let gw = &mut gs[self.wi];
        for t in 0..conv_len {
            let window = &x[t * c_n..(t + k_n) * c_n];
            for f in 0..f_n {
                let d = dz[t * f_n + f];
                if d != 0.0 {
                    let kern = &mut gw[f * k_n * c_n..(f + 1) * k_n * c_n];
                    kern.iter_mut().zip(window).for_each(|(g, v)| *g += d * v);
                }
            }
        }
        let gb = &mut gs[self.bi];
        for t in 0..conv_len {
            for f in 0..f_n {
                gb[f] += dz[t * f_n + f];
            }
        }
        let mut dx = vec![0.0; x.len()];
        for t in 0..conv_len {
            for f in 0..f_n {
                let d = dz[t * f_n + f];
                if d != 0.0 {
                    let kern = &self.w[f * k_n * c_n..(f + 1) * k_n * c_n];
                    dx[t * c_n..(t + k_n) * c_n]
                        .iter_mut()
                        .zip(kern)
                        .for_each(|(g, w)| *g += w * d);
                }
            }
        }
        dx
    }
}

struct Lstm<'a> {
    wx: &'a [f64],
    wh: &'a [f64],
    b: &'a [f64],
    hidden: usize,
    feats: usize,
    /// reads the sequence last-to-first
    reverse: bool,
    idx: [usize; 3],
}

struct LstmCache {
    /// hidden states, `(steps + 1) × hidden`, row 0 is the zero start state
    h: Vec<f64>,
    c: Vec<f64>,
    /// activated gates i, f, g, o per processing step, `steps × 4·hidden`
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
}

fn sigmoid(z: f64) -> f64 {
    super::sigmoid(z)
}

impl Lstm<'_> {
    fn position(&self, step: usize, steps: usize) -> usize {
        if self.reverse {
            steps - 1 - step
        } else {
            step
        }
    }

    fn forward(&self, seq: &[f64], steps: usize) -> LstmCache {
        let (h_n, f_n) = (self.hidden, self.feats);
        let g_n = 4 * h_n;
        let mut cache = LstmCache {
            h: vec![0.0; (steps + 1) * h_n],
            c: vec![0.0; (steps + 1) * h_n],
            gates: vec![0.0; steps * g_n],
            tanh_c: vec![0.0; steps * h_n],
        };
        let mut z = vec![0.0; g_n];
        for s in 0..steps {
            let pos = self.position(s, steps);
            let x = &seq[pos * f_n..(pos + 1) * f_n];
            let h_prev = &cache.h[s * h_n..(s + 1) * h_n];
            for (r, zr) in z.iter_mut().enumerate() {
                let wx = &self.wx[r * f_n..(r + 1) * f_n];
                let wh = &self.wh[r * h_n..(r + 1) * h_n];
                *zr = self.b[r]
                    + wx.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
                    + wh.iter().zip(h_prev).map(|(w, v)| w * v).sum::<f64>();
            }
            for k in 0..h_n {
                let i = sigmoid(z[k]);
                let f = sigmoid(z[h_n + k]);
                let g = z[2 * h_n + k].tanh();
                let o = sigmoid(z[3 * h_n + k]);
                let c = f * cache.c[s * h_n + k] + i * g;
                let tc = c.tanh();
                let gates = &mut cache.gates[s * g_n..(s + 1) * g_n];
                gates[k] = i;
                gates[h_n + k] = f;
                gates[2 * h_n + k] = g;
                gates[3 * h_n + k] = o;
                cache.c[(s + 1) * h_n + k] = c;
                cache.tanh_c[s * h_n + k] = tc;
                cache.h[(s + 1) * h_n + k] = o * tc;
            }
        }
        cache
    }

    fn final_hidden<'c>(&self, cache: &'c LstmCache, steps: usize) -> &'c [f64] {
        &cache.h[steps * self.hidden..(steps + 1) * self.hidden]
    }

    /// Backpropagation through time from the gradient of the final hidden
    /// state. Adds the input-sequence gradient into `d_seq`.
    fn backward(
        &self,
        seq: &[f64],
        steps: usize,
        cache: &LstmCache,
        dh_final: &[f64],
        gs: &mut [&mut [f64]],
        d_seq: &mut [f64],
    ) {
        let (h_n, f_n) = (self.hidden, self.feats);
        let g_n = 4 * h_n;
        let mut dz_all = vec![0.0; steps * g_n];
        let mut dh = dh_final.to_vec();
        let mut dc = vec![0.0; h_n];
        for s in (0..steps).rev() {
            let gates = &cache.gates[s * g_n..(s + 1) * g_n];
            let dz = &mut dz_all[s * g_n..(s + 1) * g_n];
            for k in 0..h_n {
                let (i, f, g, o) = (
                    gates[k],
                    gates[h_n + k],
                    gates[2 * h_n + k],
                    gates[3 * h_n + k],
                );
                let tc = cache.tanh_c[s * h_n + k];
                let d_o = dh[k] * tc;
                let dck = dc[k] + dh[k] * o * (1.0 - tc * tc);
                let c_prev = cache.c[s * h_n + k];
                dz[k] = dck * g * i * (1.0 - i);
                dz[h_n + k] = dck * c_prev * f * (1.0 - f);
                dz[2 * h_n + k] = dck * i * (1.0 - g * g);
                dz[3 * h_n + k] = d_o * o * (1.0 - o);
                dc[k] = dck * f;
            }
            let mut dh_prev = vec![0.0; h_n];
            for (r, &d) in dz.iter().enumerate() {
                let wh = &self.wh[r * h_n..(r + 1) * h_n];
                dh_prev.iter_mut().zip(wh).for_each(|(g, w)| *g += w * d);
            }
            dh = dh_prev;
        }

        let gwx = &mut gs[self.idx[0]];
        for s in 0..steps {
            let pos = self.position(s, steps);
            let x = &seq[pos * f_n..(pos + 1) * f_n];
            for (r, &d) in dz_all[s * g_n..(s + 1) * g_n].iter().enumerate() {
                let row = &mut gwx[r * f_n..(r + 1) * f_n];
                row.iter_mut().zip(x).for_each(|(g, v)| *g += d * v);
            }
        }
        let gwh = &mut gs[self.idx[1]];
        for s in 0..steps {
            let h_prev = &cache.h[s * h_n..(s + 1) * h_n];
            for (r, &d) in dz_all[s * g_n..(s + 1) * g_n].iter().enumerate() {
                let row = &mut gwh[r * h_n..(r + 1) * h_n];
                row.iter_mut().zip(h_prev).for_each(|(g, v)| *g += d * v);
            }
        }
        let gb = &mut gs[self.idx[2]];
        for s in 0..steps {
            gb.iter_mut()
                .zip(&dz_all[s * g_n..(s + 1) * g_n])
                .for_each(|(g, d)| *g += d);
        }
        for s in 0..steps {
            let pos = self.position(s, steps);
            let dx = &mut d_seq[pos * f_n..(pos + 1) * f_n];
            for (r, &d) in dz_all[s * g_n..(s + 1) * g_n].iter().enumerate() {
                let row = &self.wx[r * f_n..(r + 1) * f_n];
                dx.iter_mut().zip(row).for_each(|(g, w)| *g += w * d);
            }
        }
    }
}

enum Arch<'a> {
    /// Dense layers; every layer but the last is followed by ReLU.
    Mlp(Vec<Dense<'a>>),
    Hybrid {
        convs: Vec<Conv<'a>>,
        lstm: Option<Box<(Lstm<'a>, Lstm<'a>)>>,
        head: Dense<'a>,
        steps: usize,
    },
}

pub(crate) struct Net<'a> {
    arch: Arch<'a>,
    window_len: usize,
}

impl<'a> Net<'a> {
    /// Binds a spec to a parameter set, checking names and shapes.
    pub(crate) fn resolve(spec: &ModelSpec, params: &'a ParamSet) -> Result<Self> {
        let expected = layout(spec)?;
        if expected.len() != params.len() {
            return Err(Error::shape(format!(
                "model expects {} parameter tensors, got {}",
                expected.len(),
                params.len()
            )));
        }
        for (i, ((name, shape, _), (got_name, got))) in
            expected.iter().zip(params.iter()).enumerate()
        {
            if name != got_name || shape.as_slice() != got.shape() {
                return Err(Error::shape(format!(
                    "parameter {i}: expected {name} {shape:?}, got {got_name} {:?}",
                    got.shape()
                )));
            }
        }
        let data = |i: usize| params.tensor(i).data();
        let dense_at = |wi: usize| {
            let shape = params.tensor(wi).shape();
            Dense {
                w: data(wi),
                b: data(wi + 1),
                inputs: shape[1],
                outputs: shape[0],
                wi,
                bi: wi + 1,
            }
        };
        let arch = match spec.kind {
            ModelKind::Logistic | ModelKind::Mlp => {
                Arch::Mlp((0..params.len()).step_by(2).map(dense_at).collect())
            }
            ModelKind::CnnBilstm => {
                let mut idx = 0;
                let mut in_ch = spec.channels;
                let mut convs = Vec::new();
                for b in &spec.cnn {
                    convs.push(Conv {
                        w: data(idx),
                        b: data(idx + 1),
                        filters: b.filters,
                        kernel: b.kernel_len,
                        in_ch,
                        pool: b.pool_len,
                        wi: idx,
                        bi: idx + 1,
                    });
                    in_ch = b.filters;
                    idx += 2;
                }
                let (steps, feats) = spec.feature_map_shape()?;
                let lstm = (spec.lstm_hidden > 0).then(|| {
                    let make = |base: usize, reverse: bool| Lstm {
                        wx: data(base),
                        wh: data(base + 1),
                        b: data(base + 2),
                        hidden: spec.lstm_hidden,
                        feats,
                        reverse,
                        idx: [base, base + 1, base + 2],
                    };
                    let pair = (make(idx, false), make(idx + 3, true));
                    idx += 6;
                    Box::new(pair)
                });
                Arch::Hybrid {
                    convs,
                    lstm,
                    head: dense_at(idx),
                    steps,
                }
            }
        };
        Ok(Net {
            arch,
            window_len: spec.window_len,
        })
    }

    pub(crate) fn logit(&self, x: &[f64]) -> f64 {
        match &self.arch {
            Arch::Mlp(layers) => {
                let mut a = x.to_vec();
                for (i, layer) in layers.iter().enumerate() {
                    a = layer.forward(&a);
                    if i + 1 < layers.len() {
                        a.iter_mut().for_each(|v| *v = v.max(0.0));
                    }
                }
                a[0]
            }
            Arch::Hybrid { .. } => self.hybrid_forward(x).logit,
        }
    }

    /// Loss of one sample; its gradient is added to `grads`.
    pub(crate) fn loss_and_grad(&self, x: &[f64], y: u8, grads: &mut GradSet) -> f64 {
        let mut gs = grads.slices_mut();
        match &self.arch {
            Arch::Mlp(layers) => {
                let mut acts = vec![x.to_vec()];
                for (i, layer) in layers.iter().enumerate() {
                    let mut a = layer.forward(acts.last().expect("non-empty"));
                    if i + 1 < layers.len() {
                        a.iter_mut().for_each(|v| *v = v.max(0.0));
                    }
                    acts.push(a);
                }
                let (loss, dz) = bce_with_grad(acts[layers.len()][0], y);
                let mut delta = vec![dz];
                for (i, layer) in layers.iter().enumerate().rev() {
                    let mut dx = layer.backward(&acts[i], &delta, &mut gs);
                    if i > 0 {
                        dx.iter_mut().zip(&acts[i]).for_each(|(d, a)| {
                            if *a <= 0.0 {
                                *d = 0.0
                            }
                        });
                    }
                    delta = dx;
                }
                loss
            }
            Arch::Hybrid { .. } => {
                let fwd = self.hybrid_forward(x);
                let (loss, dz) = bce_with_grad(fwd.logit, y);
                self.hybrid_backward(x, &fwd, dz, &mut gs);
                loss
            }
        }
    }

    fn hybrid_forward(&self, x: &[f64]) -> HybridCache {
        let Arch::Hybrid {
            convs,
            lstm,
            head,
            steps,
        } = &self.arch
        else {
            unreachable!("hybrid pass on a dense network")
        };
        let mut seqs = vec![x.to_vec()];
        let mut conv_caches = Vec::with_capacity(convs.len());
        let mut len = self.window_len;
        for conv in convs {
            let (out, cache) = conv.forward(seqs.last().expect("non-empty"), len);
            len = (len - conv.kernel + 1) / conv.pool;
            seqs.push(out);
            conv_caches.push(cache);
        }
        debug_assert_eq!(len, *steps);
        let features = seqs.last().expect("non-empty");
        let (head_in, lstm_caches) = match lstm.as_deref() {
            Some((fw, bw)) => {
                let cf = fw.forward(features, *steps);
                let cb = bw.forward(features, *steps);
                let mut cat = fw.final_hidden(&cf, *steps).to_vec();
                cat.extend_from_slice(bw.final_hidden(&cb, *steps));
                (cat, Some((cf, cb)))
            }
            None => (features.clone(), None),
        };
        let logit = head.forward(&head_in)[0];
        HybridCache {
            seqs,
            conv_caches,
            lstm_caches,
            head_in,
            logit,
        }
    }

    fn hybrid_backward(&self, x: &[f64], fwd: &HybridCache, dz: f64, gs: &mut [&mut [f64]]) {
        let Arch::Hybrid {
            convs,
            lstm,
            head,
            steps,
        } = &self.arch
        else {
            unreachable!("hybrid pass on a dense network")
        };
        debug_assert_eq!(fwd.seqs[0].as_slice(), x);
        let d_head_in = head.backward(&fwd.head_in, &[dz], gs);
        let features = fwd.seqs.last().expect("non-empty");
        let mut d_seq = match (lstm.as_deref(), &fwd.lstm_caches) {
            (Some((fw, bw)), Some((cf, cb))) => {
                let h = fw.hidden;
                let mut d = vec![0.0; features.len()];
                fw.backward(features, *steps, cf, &d_head_in[..h], gs, &mut d);
                bw.backward(features, *steps, cb, &d_head_in[h..], gs, &mut d);
                d
            }
            _ => d_head_in,
        };
        for (i, conv) in convs.iter().enumerate().rev() {
            d_seq = conv.backward(&fwd.seqs[i], &fwd.conv_caches[i], &d_seq, gs);
        }
    }
}

struct HybridCache {
    /// block inputs; the last entry is the recurrent layer's input
    seqs: Vec<Vec<f64>>,
    conv_caches: Vec<ConvCache>,
    lstm_caches: Option<(LstmCache, LstmCache)>,
    head_in: Vec<f64>,
    logit: f64,
}
