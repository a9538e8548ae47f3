//! `FGCK` checkpoint files.
//!
//! Little-endian layout:
//!
//! ```text
//! "FGCK"  u16 version (= 1)
//! for generator, discriminator, classifier:
//!   u32 layer count
//!   per layer:
//!     u32 in_dim, u32 out_dim
//!     f32[in_dim * out_dim] weights (in_dim x out_dim, row-major)
//!     f32[out_dim] biases
//!     u8 flags: bit 0 batchnorm block, bit 1 Adam block, bits 2-3 activation
//!               (0 none, 1 leaky relu, 2 sigmoid, 3 softmax)
//!     [batchnorm] f32[out_dim] x 4: gamma, beta, running mean, running var
//!     [adam] first moments then second moments for this layer's blocks
//!            (weight, bias, gamma, beta), then u64 step counter
//! ```

use std::fs;
use std::path::Path;

use super::mlp::{Activation, Layer, Mlp};
use super::{ModelBundle, Network};
use crate::binio::{len_u32, put_f32s, put_u16, put_u32, put_u64, Reader};
use crate::error::{FormatError, Result};
use crate::numerics::{AdamState, BatchNorm, Matrix};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"FGCK";
pub const CHECKPOINT_VERSION: u16 = 1;

const FLAG_BN: u8 = 0b01;
const FLAG_ADAM: u8 = 0b10;
const ACT_SHIFT: u8 = 2;

pub fn save_checkpoint(bundle: &ModelBundle, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_checkpoint(bundle)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelBundle> {
    decode_checkpoint(&fs::read(path)?)
}

pub fn encode_checkpoint(bundle: &ModelBundle) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    put_u16(&mut out, CHECKPOINT_VERSION);
    for net in [&bundle.generator, &bundle.discriminator, &bundle.classifier] {
        encode_network(net, &mut out)?;
    }
    Ok(out)
}

fn encode_network(net: &Network, out: &mut Vec<u8>) -> Result<()> {
    put_u32(out, len_u32(net.mlp.layers.len(), "layer count")?);
    let mut block = 0;
    for layer in &net.mlp.layers {
        put_u32(out, len_u32(layer.weight.rows(), "in_dim")?);
        put_u32(out, len_u32(layer.weight.cols(), "out_dim")?);
        put_f32s(out, layer.weight.as_slice());
        put_f32s(out, &layer.bias);
        let mut flags = FLAG_ADAM | (layer.activation.code() << ACT_SHIFT);
        if layer.bn.is_some() {
            flags |= FLAG_BN;
        }
        out.push(flags);
        let n_blocks = if let Some(bn) = &layer.bn {
            for v in [&bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var] {
                put_f32s(out, v);
            }
            4
        } else {
            2
        };
        let opt = &net.optimizer;
        for m in &opt.first_moment[block..block + n_blocks] {
            put_f32s(out, m);
        }
        for v in &opt.second_moment[block..block + n_blocks] {
            put_f32s(out, v);
        }
        put_u64(out, opt.step);
        block += n_blocks;
    }
    Ok(())
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ModelBundle> {
    let mut r = Reader::new(bytes);
    r.magic(&CHECKPOINT_MAGIC)?;
    let version = r.u16("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(FormatError::Version(version).into());
    }
    let generator = decode_network(&mut r, "generator")?;
    let discriminator = decode_network(&mut r, "discriminator")?;
    let classifier = decode_network(&mut r, "classifier")?;
    r.finish()?;
    let bundle = ModelBundle {
        generator,
        discriminator,
        classifier,
    };
    bundle
        .validate()
        .map_err(|e| FormatError::ShapeTable(e.to_string()))?;
    Ok(bundle)
}

fn decode_network(r: &mut Reader<'_>, name: &str) -> Result<Network> {
    let n_layers = r.u32(&format!("{name} layer count"))? as usize;
    if n_layers == 0 {
        return Err(FormatError::ShapeTable(format!("{name} has no layers")).into());
    }
    let mut layers = Vec::with_capacity(n_layers.min(64));
    let mut first = Vec::new();
    let mut second = Vec::new();
    let mut adam_steps: Vec<Option<u64>> = Vec::new();
    for i in 0..n_layers {
        let ctx = |what: &str| format!("{name} layer {i} {what}");
        let in_dim = r.u32(&ctx("in_dim"))? as usize;
        let out_dim = r.u32(&ctx("out_dim"))? as usize;
        if in_dim == 0 || out_dim == 0 {
            return Err(FormatError::ShapeTable(ctx("has a zero dimension")).into());
        }
        if let Some(prev) = layers.last().map(|l: &Layer| l.weight.cols()) {
            if prev != in_dim {
                return Err(FormatError::ShapeTable(format!(
                    "{name} layer {i} input {in_dim} does not match previous output {prev}"
                ))
                .into());
            }
        }
        let n_weights = in_dim
            .checked_mul(out_dim)
            .ok_or_else(|| FormatError::ShapeTable(ctx("weight shape overflows")))?;
        let weight = Matrix::from_vec(in_dim, out_dim, r.f32s(n_weights, &ctx("weights"))?)?;
        let bias = r.f32s(out_dim, &ctx("biases"))?;
        let flags = r.u8(&ctx("flags"))?;
        if flags >> (ACT_SHIFT + 2) != 0 {
            return Err(FormatError::ShapeTable(ctx(&format!("has unknown flag bits {flags:#010b}"))).into());
        }
        let activation = Activation::from_code((flags >> ACT_SHIFT) & 0b11).expect("two-bit code");
        let bn = if flags & FLAG_BN != 0 {
            let mut bn = BatchNorm::new(out_dim);
            bn.gamma = r.f32s(out_dim, &ctx("bn gamma"))?;
            bn.beta = r.f32s(out_dim, &ctx("bn beta"))?;
            bn.running_mean = r.f32s(out_dim, &ctx("bn running mean"))?;
            bn.running_var = r.f32s(out_dim, &ctx("bn running var"))?;
            Some(bn)
        } else {
            None
        };
        let mut sizes = vec![n_weights, out_dim];
        if bn.is_some() {
            sizes.extend([out_dim, out_dim]);
        }
        if flags & FLAG_ADAM != 0 {
            for &s in &sizes {
                first.push(r.f32s(s, &ctx("adam first moment"))?);
            }
            for &s in &sizes {
                second.push(r.f32s(s, &ctx("adam second moment"))?);
            }
            adam_steps.push(Some(r.u64(&ctx("adam step"))?));
        } else {
            adam_steps.push(None);
        }
        layers.push(Layer {
            weight,
            bias,
            bn,
            activation,
        });
    }
    let mlp = Mlp {
        layers,
        leaky_slope: crate::numerics::ops::DEFAULT_LEAKY_SLOPE as f32,
    };
    mlp.spec()
        .validate()
        .map_err(|e| FormatError::ShapeTable(format!("{name}: {e}")))?;
    let optimizer = match adam_steps.first().copied().flatten() {
        None if adam_steps.iter().all(Option::is_none) => AdamState::new(&mlp.block_sizes()),
        Some(step) if adam_steps.iter().all(|s| *s == Some(step)) => {
            let mut opt = AdamState::new(&mlp.block_sizes());
            opt.first_moment = first;
            opt.second_moment = second;
            opt.step = step;
            opt
        }
        _ => {
            return Err(FormatError::ShapeTable(format!(
                "{name}: optimizer blocks missing or step counters disagree across layers"
            ))
            .into())
        }
    };
    Ok(Network { mlp, optimizer })
}
