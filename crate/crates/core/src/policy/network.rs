//! Forward inference of the polyline encoder, single-query attention and
//! decoder.
//!
//! Tensor names (weights are `[out, in]`, applied as `W x + b`):
//!
//! * `dynamic_encoder.vector_mlp.{i}` / `dynamic_encoder.polyline_post_mlp.{i}`
//! * `static_encoder.vector_mlp.{i}` / `static_encoder.polyline_post_mlp.{i}`
//! * `mha.{q,k,v,o}`
//! * `decoder_mlp.{i}`
//! * `meta.{heads,input_dim,output_kind,v_max,sigma_max,activation}`
//!
//! each layer being a `.weight` and `.bias` pair. ReLU follows every linear
//! layer except the last one of each MLP.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::weights::{decode_tensors, encode_tensors, read_tensor_file, write_tensor_file, Tensor, TensorMap, WeightError};
use super::PolicyError;
use crate::geometry::StaticVector;
use crate::observation::SerializedObservation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    /// `(v_ref, sigma)` lower-level action.
    Action,
    /// Mistaken SVO in degrees.
    Svo,
}

impl OutputKind {
    pub fn width(self) -> usize {
        match self {
            OutputKind::Action => 2,
            OutputKind::Svo => 1,
        }
    }

    fn code(self) -> f32 {
        match self {
            OutputKind::Action => 0.0,
            OutputKind::Svo => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Linear {
    inputs: usize,
    outputs: usize,
    weight: Vec<f64>,
    bias: Vec<f64>,
}

impl Linear {
    fn load(tensors: &TensorMap, name: &str) -> Result<Self, WeightError> {
        let w = get(tensors, &format!("{name}.weight"))?;
        let b = get(tensors, &format!("{name}.bias"))?;
        if w.shape.len() != 2 || b.shape.len() != 1 || b.shape[0] != w.shape[0] {
            return Err(WeightError::ShapeInconsistency(name.to_string()));
        }
        Ok(Self {
            inputs: w.shape[1],
            outputs: w.shape[0],
            weight: w.data.iter().map(|&v| v as f64).collect(),
            bias: b.data.iter().map(|&v| v as f64).collect(),
        })
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for (row, b) in self.weight.chunks_exact(self.inputs).zip(&self.bias) {
            out.push(row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Mlp {
    layers: Vec<Linear>,
}

impl Mlp {
    fn load(tensors: &TensorMap, prefix: &str, inputs: usize) -> Result<Self, WeightError> {
        let mut layers: Vec<Linear> = Vec::new();
        while tensors.contains_key(&format!("{prefix}.{}.weight", layers.len())) {
            let name = format!("{prefix}.{}", layers.len());
            let layer = Linear::load(tensors, &name)?;
            let expected = layers.last().map_or(inputs, |l| l.outputs);
            if layer.inputs != expected {
                return Err(WeightError::ShapeInconsistency(name));
            }
            layers.push(layer);
        }
        if layers.is_empty() {
            return Err(WeightError::MissingTensor(format!("{prefix}.0.weight")));
        }
        Ok(Self { layers })
    }

    fn outputs(&self) -> usize {
        self.layers.last().unwrap().outputs
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            layer.apply(&cur, &mut next);
            if i != last {
                for v in &mut next {
                    *v = v.max(0.0);
                }
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }
}

/// Per-vector MLP, sum pooling, then a post-pooling MLP.
#[derive(Debug, Clone, PartialEq)]
struct DeepSets {
    vector_mlp: Mlp,
    post: Mlp,
}

impl DeepSets {
    fn load(tensors: &TensorMap, prefix: &str, width: usize) -> Result<Self, WeightError> {
        let vector_mlp = Mlp::load(tensors, &format!("{prefix}.vector_mlp"), width)?;
        let post = Mlp::load(tensors, &format!("{prefix}.polyline_post_mlp"), vector_mlp.outputs())?;
        Ok(Self { vector_mlp, post })
    }

    fn input_width(&self) -> usize {
        self.vector_mlp.layers[0].inputs
    }

    fn encode(&self, rows: &[f32]) -> Vec<f64> {
        let width = self.input_width();
        let mut pooled = vec![0.0; self.vector_mlp.outputs()];
        let mut x = Vec::with_capacity(width);
        for row in rows.chunks_exact(width) {
            x.clear();
            x.extend(row.iter().map(|&v| v as f64));
            for (p, v) in pooled.iter_mut().zip(self.vector_mlp.forward(&x)) {
                *p += v;
            }
        }
        self.post.forward(&pooled)
    }
}

/// Architecture used to create fresh bundles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub feature_dim: usize,
    pub heads: usize,
    pub vector_hidden: usize,
    pub decoder_hidden: usize,
    pub output: OutputKind,
    pub v_max: f64,
    pub sigma_max: f64,
}

impl Architecture {
    /// Lower-level action policy: V = 6, D = 64, 4 heads.
    pub fn lower_level() -> Self {
        Self {
            input_dim: 6,
            feature_dim: 64,
            heads: 4,
            vector_hidden: 64,
            decoder_hidden: 64,
            output: OutputKind::Action,
            v_max: 10.0,
            sigma_max: 0.6,
        }
    }

    /// Adversary emitting mistaken ego contexts: V = 5.
    pub fn adversary() -> Self {
        Self {
            input_dim: 5,
            output: OutputKind::Svo,
            ..Self::lower_level()
        }
    }

    /// `(name, shape)` of every tensor of a bundle with this architecture.
    pub fn tensor_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let d = self.feature_dim;
        let h = self.vector_hidden;
        let mut out = Vec::new();
        let mut linear = |name: String, o: usize, i: usize| {
            out.push((format!("{name}.weight"), vec![o, i]));
            out.push((format!("{name}.bias"), vec![o]));
        };
        for (enc, width) in [("dynamic_encoder", self.input_dim), ("static_encoder", StaticVector::LEN)] {
            linear(format!("{enc}.vector_mlp.0"), h, width);
            linear(format!("{enc}.vector_mlp.1"), h, h);
            linear(format!("{enc}.polyline_post_mlp.0"), d, h);
        }
        for p in ["q", "k", "v", "o"] {
            linear(format!("mha.{p}"), d, d);
        }
        let dh = self.decoder_hidden;
        linear("decoder_mlp.0".into(), dh, d);
        linear("decoder_mlp.1".into(), dh, dh);
        linear("decoder_mlp.2".into(), self.output.width(), dh);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightBundle {
    tensors: TensorMap,
    dynamic: DeepSets,
    statics: DeepSets,
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    heads: usize,
    decoder: Mlp,
    output: OutputKind,
    v_max: f64,
    sigma_max: f64,
}

fn get<'a>(tensors: &'a TensorMap, name: &str) -> Result<&'a Tensor, WeightError> {
    tensors
        .get(name)
        .ok_or_else(|| WeightError::MissingTensor(name.to_string()))
}

fn meta(tensors: &TensorMap, key: &str) -> Result<f32, WeightError> {
    let name = format!("meta.{key}");
    let t = get(tensors, &name)?;
    if t.shape != [1] {
        return Err(WeightError::ShapeInconsistency(name));
    }
    Ok(t.data[0])
}

fn meta_count(tensors: &TensorMap, key: &str) -> Result<usize, WeightError> {
    let v = meta(tensors, key)?;
    if v < 1.0 || v.fract() != 0.0 {
        return Err(WeightError::Malformed(format!("meta.{key} = {v} is not a positive integer")));
    }
    Ok(v as usize)
}

impl WeightBundle {
    /// Validate a tensor set and build the inference structures.
    pub fn from_tensors(tensors: TensorMap) -> Result<Self, WeightError> {
        let activation = meta(&tensors, "activation")?;
        if activation != 0.0 {
            return Err(WeightError::Malformed(format!("unsupported activation code {activation}")));
        }
        let input_dim = meta_count(&tensors, "input_dim")?;
        if input_dim != 5 && input_dim != 6 {
            return Err(WeightError::Malformed(format!("meta.input_dim must be 5 or 6, got {input_dim}")));
        }
        let output = match meta(&tensors, "output_kind")? {
            k if k == 0.0 => OutputKind::Action,
            k if k == 1.0 => OutputKind::Svo,
            k => return Err(WeightError::Malformed(format!("unknown meta.output_kind {k}"))),
        };
        let heads = meta_count(&tensors, "heads")?;
        let v_max = meta(&tensors, "v_max")? as f64;
        let sigma_max = meta(&tensors, "sigma_max")? as f64;
        if !(v_max > 0.0 && sigma_max > 0.0) {
            return Err(WeightError::Malformed("meta.v_max and meta.sigma_max must be positive".into()));
        }

        let dynamic = DeepSets::load(&tensors, "dynamic_encoder", input_dim)?;
        let d = dynamic.post.outputs();
        let statics = DeepSets::load(&tensors, "static_encoder", StaticVector::LEN)?;
        if statics.post.outputs() != d {
            let last = statics.post.layers.len() - 1;
            return Err(WeightError::ShapeInconsistency(format!("static_encoder.polyline_post_mlp.{last}")));
        }
        let square = |name: &str| -> Result<Linear, WeightError> {
            let l = Linear::load(&tensors, name)?;
            if l.inputs != d || l.outputs != d {
                return Err(WeightError::ShapeInconsistency(name.to_string()));
            }
            Ok(l)
        };
        let (q, k, v, o) = (square("mha.q")?, square("mha.k")?, square("mha.v")?, square("mha.o")?);
        if d % heads != 0 {
            return Err(WeightError::ShapeInconsistency("meta.heads".into()));
        }
        let decoder = Mlp::load(&tensors, "decoder_mlp", d)?;
        if decoder.outputs() != output.width() {
            return Err(WeightError::ShapeInconsistency(format!(
                "decoder_mlp.{}",
                decoder.layers.len() - 1
            )));
        }
        Ok(Self {
            tensors,
            dynamic,
            statics,
            q,
            k,
            v,
            o,
            heads,
            decoder,
            output,
            v_max,
            sigma_max,
        })
    }

    /// Random bundle, uniform in `+-1/sqrt(fan_in)`.
    pub fn seeded(arch: &Architecture, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = TensorMap::new();
        for (name, shape) in arch.tensor_shapes() {
            let fan_in = if shape.len() == 2 { shape[1] } else { shape[0] };
            let bound = 1.0 / (fan_in as f32).sqrt();
            let n = shape.iter().product();
            let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
            tensors.insert(name, Tensor::new(shape, data));
        }
        insert_meta(&mut tensors, arch);
        Self::from_tensors(tensors).expect("architecture shapes are consistent")
    }

    pub fn load(path: &Path) -> Result<Self, WeightError> {
        Self::from_tensors(read_tensor_file(path)?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WeightError> {
        Self::from_tensors(decode_tensors(bytes)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), WeightError> {
        write_tensor_file(path, &self.tensors)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        encode_tensors(&self.tensors)
    }

    pub fn tensors(&self) -> &TensorMap {
        &self.tensors
    }

    pub fn input_dim(&self) -> usize {
        self.dynamic.input_width()
    }

    pub fn feature_dim(&self) -> usize {
        self.dynamic.post.outputs()
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn output(&self) -> OutputKind {
        self.output
    }

    pub fn v_max(&self) -> f64 {
        self.v_max
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigma_max
    }

    /// Attended feature of the observing agent.
    pub fn encode(&self, obs: &SerializedObservation) -> Result<Vec<f64>, PolicyError> {
        let v = self.input_dim();
        if obs.dynamic_width != v {
            return Err(PolicyError::ShapeMismatch(format!(
                "dynamic vectors have length {}, bundle expects {v}",
                obs.dynamic_width
            )));
        }
        if let Some(bad) = obs.dynamic.iter().find(|p| p.len() % v != 0) {
            return Err(PolicyError::ShapeMismatch(format!("dynamic polyline of {} floats", bad.len())));
        }
        if let Some(bad) = obs.statics.iter().find(|p| p.len() % StaticVector::LEN != 0) {
            return Err(PolicyError::ShapeMismatch(format!("static polyline of {} floats", bad.len())));
        }
        if obs.self_index >= obs.dynamic.len() {
            return Err(PolicyError::ShapeMismatch("self polyline missing".into()));
        }
        let features: Vec<Vec<f64>> = obs
            .dynamic
            .iter()
            .map(|p| self.dynamic.encode(p))
            .chain(obs.statics.iter().map(|p| self.statics.encode(p)))
            .collect();
        Ok(self.attend(&features, obs.self_index))
    }

    fn attend(&self, features: &[Vec<f64>], query: usize) -> Vec<f64> {
        let d = self.feature_dim();
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut q = Vec::new();
        self.q.apply(&features[query], &mut q);
        let mut keys = Vec::with_capacity(features.len());
        let mut values = Vec::with_capacity(features.len());
        for f in features {
            let mut k = Vec::new();
            let mut v = Vec::new();
            self.k.apply(f, &mut k);
            self.v.apply(f, &mut v);
            keys.push(k);
            values.push(v);
        }
        let mut heads_out = vec![0.0; d];
        for h in 0..self.heads {
            let r = h * dh..(h + 1) * dh;
            let scores: Vec<f64> = keys
                .iter()
                .map(|k| q[r.clone()].iter().zip(&k[r.clone()]).map(|(a, b)| a * b).sum::<f64>() * scale)
                .collect();
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let total: f64 = exps.iter().sum();
            for (e, v) in exps.iter().zip(&values) {
                let w = e / total;
                for (o, x) in heads_out[r.clone()].iter_mut().zip(&v[r.clone()]) {
                    *o += w * x;
                }
            }
        }
        let mut out = Vec::new();
        self.o.apply(&heads_out, &mut out);
        out
    }

    /// Decoder output before squashing.
    pub fn raw_output(&self, obs: &SerializedObservation) -> Result<Vec<f64>, PolicyError> {
        Ok(self.decoder.forward(&self.encode(obs)?))
    }

    /// Squashed output: `[v_ref, sigma]` or `[svo_deg]`.
    pub fn forward(&self, obs: &SerializedObservation) -> Result<Vec<f64>, PolicyError> {
        let raw = self.raw_output(obs)?;
        Ok(match self.output {
            OutputKind::Action => vec![
                (raw[0].tanh() + 1.0) * 0.5 * self.v_max,
                raw[1].tanh() * self.sigma_max,
            ],
            OutputKind::Svo => vec![(raw[0].tanh() + 1.0) * 0.5 * 90.0],
        })
    }
}

/// Add the `meta.*` tensors describing `arch`.
pub fn insert_meta(tensors: &mut TensorMap, arch: &Architecture) {
    let mut put = |k: &str, v: f32| {
        tensors.insert(format!("meta.{k}"), Tensor::scalar(v));
    };
    put("heads", arch.heads as f32);
    put("input_dim", arch.input_dim as f32);
    put("output_kind", arch.output.code());
    put("v_max", arch.v_max as f32);
    put("sigma_max", arch.sigma_max as f32);
    put("activation", 0.0);
}
