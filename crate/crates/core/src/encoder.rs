//! The message-passing graph encoder: the asset being watermarked.
//!
//! Layer `t` computes `act(Â · H_{t-1} · W_t + b_t)` with `Â` the
//! symmetrically normalized adjacency; the final layer is linear so the
//! embedding space stays unconstrained.

use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{disjoint_union, normalize_adjacency, EgoGraph, Graph};
use crate::rng::{self, stream};
use crate::tensor::Tensor;
use crate::textio::{write_f64s, TokenReader};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    /// Single learnable slope per hidden layer.
    Prelu,
    Relu,
    Tanh,
    Linear,
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Activation::Prelu => "prelu",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Linear => "linear",
        };
        write!(f, "{s}")
    }
}

impl FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Activation> {
        match s {
            "prelu" => Ok(Activation::Prelu),
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "linear" => Ok(Activation::Linear),
            other => Err(Error::Input(format!("unknown activation {other:?}"))),
        }
    }
}

/// Architecture hyperparameters (everything but the input dimension, which
/// comes from the dataset).
#[derive(Debug, Clone, Copy)]
pub struct EncoderArch {
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub num_layers: usize,
    pub activation: Activation,
}

pub struct EncoderLayer {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Layered message-passing weights plus architecture metadata.
pub struct EncoderParams {
    pub layers: Vec<EncoderLayer>,
    /// One learnable slope per non-final layer when `activation == Prelu`.
    pub prelu_slopes: Vec<Tensor>,
    pub activation: Activation,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub num_layers: usize,
}

/// Glorot-uniform weights, zero biases; deterministic per seed.
pub fn init_params(
    input_dim: usize,
    hidden_dim: usize,
    embed_dim: usize,
    num_layers: usize,
    activation: Activation,
    seed: u64,
) -> Result<EncoderParams> {
    if num_layers == 0 {
        return Err(Error::Input("encoder needs at least one layer".into()));
    }
    let mut r = rng::substream(seed, stream::INIT);
    let mut layers = Vec::with_capacity(num_layers);
    for t in 0..num_layers {
        let d_in = if t == 0 { input_dim } else { hidden_dim };
        let d_out = if t + 1 == num_layers {
            embed_dim
        } else {
            hidden_dim
        };
        let bound = (6.0 / (d_in + d_out) as f64).sqrt();
        let data: Vec<f64> = (0..d_in * d_out)
            .map(|_| r.gen_range(-bound..bound))
            .collect();
        layers.push(EncoderLayer {
            weight: Tensor::parameter(&[d_in, d_out], data)?,
            bias: Tensor::parameter(&[d_out], vec![0.0; d_out])?,
        });
    }
    let prelu_slopes = if activation == Activation::Prelu {
        (0..num_layers.saturating_sub(1))
            .map(|_| Tensor::parameter(&[1], vec![0.25]))
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    Ok(EncoderParams {
        layers,
        prelu_slopes,
        activation,
        input_dim,
        hidden_dim,
        embed_dim,
        num_layers,
    })
}

impl EncoderParams {
    /// All trainable tensors in a fixed registration order.
    pub fn trainable(&self) -> Vec<Tensor> {
        let mut out = Vec::new();
        for layer in &self.layers {
            out.push(layer.weight.clone());
            out.push(layer.bias.clone());
        }
        out.extend(self.prelu_slopes.iter().cloned());
        out
    }

    /// Deep copy with fresh parameter tensors.
    pub fn deep_copy(&self) -> EncoderParams {
        let layers = self
            .layers
            .iter()
            .map(|l| EncoderLayer {
                weight: Tensor::parameter(&l.weight.shape(), l.weight.to_vec()).unwrap(),
                bias: Tensor::parameter(&l.bias.shape(), l.bias.to_vec()).unwrap(),
            })
            .collect();
        let prelu_slopes = self
            .prelu_slopes
            .iter()
            .map(|s| Tensor::parameter(&s.shape(), s.to_vec()).unwrap())
            .collect();
        EncoderParams {
            layers,
            prelu_slopes,
            activation: self.activation,
            input_dim: self.input_dim,
            hidden_dim: self.hidden_dim,
            embed_dim: self.embed_dim,
            num_layers: self.num_layers,
        }
    }

    /// Same weights with gradient tracking disabled (frozen evaluation).
    pub fn frozen(&self) -> EncoderParams {
        let copy = self.deep_copy();
        for t in copy.trainable() {
            t.set_requires_grad(false);
        }
        copy
    }
}

fn apply_activation(params: &EncoderParams, layer: usize, z: Tensor) -> Result<Tensor> {
    Ok(match params.activation {
        Activation::Prelu => z.prelu(&params.prelu_slopes[layer])?,
        Activation::Relu => z.relu(),
        Activation::Tanh => z.tanh_act(),
        Activation::Linear => z,
    })
}

/// Map a graph to per-node embeddings.
pub fn encode(params: &EncoderParams, g: &Graph) -> Result<Tensor> {
    if g.feature_dim() != params.input_dim {
        return Err(Error::Dimension {
            op: "encode",
            lhs: vec![g.n(), g.feature_dim()],
            rhs: vec![params.input_dim, params.layers[0].weight.shape()[1]],
        });
    }
    let a_hat = normalize_adjacency(g);
    let mut h = g.features().clone();
    let last = params.layers.len() - 1;
    for (t, layer) in params.layers.iter().enumerate() {
        // H·W first; the first layer can use the sparse feature form
        let u = if t == 0 {
            match g.features_csr() {
                Some(fx) => Tensor::spmm(fx, &layer.weight)?,
                None => h.matmul(&layer.weight)?,
            }
        } else {
            h.matmul(&layer.weight)?
        };
        let z = Tensor::spmm(&a_hat, &u)?.add_bias(&layer.bias)?;
        h = if t == last {
            z
        } else {
            apply_activation(params, t, z)?
        };
    }
    Ok(h)
}

/// Encode a batch of ego-graphs in one block-diagonal pass and gather the
/// center rows.
pub fn encode_centers(params: &EncoderParams, egos: &[EgoGraph]) -> Result<Tensor> {
    if egos.is_empty() {
        return Tensor::from_vec(&[0, params.embed_dim], Vec::new());
    }
    let (union, offsets) = disjoint_union(egos)?;
    let h = encode(params, &union)?;
    h.gather_rows(&offsets)
}

// ---- checkpoint serialization -------------------------------------------------

const CHECKPOINT_MAGIC: &str = "graphmark-checkpoint";
const CHECKPOINT_VERSION: &str = "v1";

/// Write a versioned structured-text checkpoint: free-form metadata,
/// architecture, then every parameter tensor. Round-trips bit-exactly.
pub fn write_checkpoint<P: AsRef<Path>>(
    params: &EncoderParams,
    meta: &[(String, String)],
    path: P,
) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}")?;
    for (k, v) in meta {
        debug_assert!(!k.contains(char::is_whitespace) && !v.contains(char::is_whitespace));
        writeln!(w, "meta {k} {v}")?;
    }
    writeln!(w, "arch input_dim {}", params.input_dim)?;
    writeln!(w, "arch hidden_dim {}", params.hidden_dim)?;
    writeln!(w, "arch embed_dim {}", params.embed_dim)?;
    writeln!(w, "arch num_layers {}", params.num_layers)?;
    writeln!(w, "arch activation {}", params.activation)?;
    let mut emit = |name: String, t: &Tensor| -> Result<()> {
        let shape = t.shape();
        write!(w, "tensor {name} {}", shape.len())?;
        for s in &shape {
            write!(w, " {s}")?;
        }
        writeln!(w)?;
        write_f64s(&mut w, &t.data(), 16)?;
        Ok(())
    };
    for (i, layer) in params.layers.iter().enumerate() {
        emit(format!("layer{i}.weight"), &layer.weight)?;
        emit(format!("layer{i}.bias"), &layer.bias)?;
    }
    for (i, s) in params.prelu_slopes.iter().enumerate() {
        emit(format!("prelu{i}.slope"), s)?;
    }
    writeln!(w, "end")?;
    w.flush()?;
    Ok(())
}

/// Read a checkpoint written by [`write_checkpoint`].
pub fn read_checkpoint<P: AsRef<Path>>(path: P) -> Result<(EncoderParams, Vec<(String, String)>)> {
    let mut r = TokenReader::open(path)?;
    r.expect(CHECKPOINT_MAGIC)?;
    r.expect(CHECKPOINT_VERSION)?;

    let mut meta = Vec::new();
    while r.peek() == Some("meta") {
        r.next()?;
        let k = r.next()?.to_string();
        let v = r.next()?.to_string();
        meta.push((k, v));
    }
    let mut arch: std::collections::HashMap<String, String> = std::collections::HashMap::new();
    while r.peek() == Some("arch") {
        r.next()?;
        let k = r.next()?.to_string();
        let v = r.next()?.to_string();
        arch.insert(k, v);
    }
    let get = |arch: &std::collections::HashMap<String, String>,
               r: &TokenReader,
               key: &str|
     -> Result<String> {
        arch.get(key)
            .cloned()
            .ok_or_else(|| r.error(format!("missing arch field {key}")))
    };
    let input_dim: usize = get(&arch, &r, "input_dim")?
        .parse()
        .map_err(|_| r.error("bad input_dim"))?;
    let hidden_dim: usize = get(&arch, &r, "hidden_dim")?
        .parse()
        .map_err(|_| r.error("bad hidden_dim"))?;
    let embed_dim: usize = get(&arch, &r, "embed_dim")?
        .parse()
        .map_err(|_| r.error("bad embed_dim"))?;
    let num_layers: usize = get(&arch, &r, "num_layers")?
        .parse()
        .map_err(|_| r.error("bad num_layers"))?;
    let activation: Activation = get(&arch, &r, "activation")?.parse()?;

    let mut tensors: Vec<(String, Vec<usize>, Vec<f64>)> = Vec::new();
    loop {
        match r.next()? {
            "end" => break,
            "tensor" => {
                let name = r.next()?.to_string();
                let rank = r.next_usize()?;
                let shape = r.next_usizes(rank)?;
                let numel = shape.iter().product();
                let data = r.next_f64s(numel)?;
                tensors.push((name, shape, data));
            }
            other => {
                let other = other.to_string();
                return Err(r.error(format!("unexpected directive {other:?}")));
            }
        }
    }

    let find = |name: &str| -> Result<(Vec<usize>, Vec<f64>)> {
        tensors
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, s, d)| (s.clone(), d.clone()))
            .ok_or_else(|| Error::Input(format!("checkpoint is missing tensor {name}")))
    };
    let mut layers = Vec::with_capacity(num_layers);
    for i in 0..num_layers {
        let (ws, wd) = find(&format!("layer{i}.weight"))?;
        let (bs, bd) = find(&format!("layer{i}.bias"))?;
        layers.push(EncoderLayer {
            weight: Tensor::parameter(&ws, wd)?,
            bias: Tensor::parameter(&bs, bd)?,
        });
    }
    let mut prelu_slopes = Vec::new();
    if activation == Activation::Prelu {
        for i in 0..num_layers.saturating_sub(1) {
            let (ss, sd) = find(&format!("prelu{i}.slope"))?;
            prelu_slopes.push(Tensor::parameter(&ss, sd)?);
        }
    }
    // chained dimension consistency
    for (i, layer) in layers.iter().enumerate() {
        let shape = layer.weight.shape();
        let want_in = if i == 0 { input_dim } else { hidden_dim };
        let want_out = if i + 1 == num_layers {
            embed_dim
        } else {
            hidden_dim
        };
        if shape != vec![want_in, want_out] {
            return Err(Error::Input(format!(
                "checkpoint layer {i} has shape {shape:?}, expected [{want_in}, {want_out}]"
            )));
        }
    }
    Ok((
        EncoderParams {
            layers,
            prelu_slopes,
            activation,
            input_dim,
            hidden_dim,
            embed_dim,
            num_layers,
        },
        meta,
    ))
}
