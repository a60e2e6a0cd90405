//! Binary parameter container.
//!
//! All integers are little-endian `u32`, all reals little-endian IEEE-754 `f64`.
//!
//! ```text
//! magic           8 bytes  "COVRCKPT"
//! version         u32      currently 1
//! net_count       u32
//! per net:
//!   name_len      u32, then name_len bytes of UTF-8
//!   layer_count   u32
//!   sizes         (layer_count + 1) × u32
//!   activations   layer_count × u8    0 = tanh, 1 = relu, 2 = identity
//!   per layer:    weights (fan_in × fan_out, row-major) then bias (fan_out)
//! scalar_count    u32
//! per scalar:     name_len u32, name bytes, value f64
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::mlp::{Activation, Layer, Mlp};
use super::tensor::Tensor2;
use crate::error::{CovrError, Result};

pub const MAGIC: &[u8; 8] = b"COVRCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub nets: Vec<(String, Mlp)>,
    pub scalars: Vec<(String, f64)>,
}

fn bad(msg: impl Into<String>) -> CovrError {
    CovrError::format("checkpoint", msg)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| bad(e.to_string()))?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|e| bad(e.to_string()))?;
    Ok(f64::from_le_bytes(b))
}

fn read_name(r: &mut impl Read) -> Result<String> {
    let len = read_u32(r)? as usize;
    if len > 4096 {
        return Err(bad("name too long"));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf).map_err(|e| bad(e.to_string()))?;
    String::from_utf8(buf).map_err(|e| bad(e.to_string()))
}

fn write_name(out: &mut Vec<u8>, name: &str) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
}

impl Checkpoint {
    pub fn new() -> Self {
        Checkpoint::default()
    }

    pub fn push_net(&mut self, name: &str, net: &Mlp) {
        self.nets.push((name.to_string(), net.clone()));
    }

    pub fn push_scalar(&mut self, name: &str, value: f64) {
        self.scalars.push((name.to_string(), value));
    }

    pub fn net(&self, name: &str) -> Result<&Mlp> {
        self.nets
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
            .ok_or_else(|| bad(format!("missing network `{name}`")))
    }

    pub fn scalar(&self, name: &str) -> Result<f64> {
        self.scalars
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| bad(format!("missing scalar `{name}`")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.nets.len() as u32).to_le_bytes());
        for (name, net) in &self.nets {
            write_name(&mut out, name);
            let sizes = net.sizes();
            out.extend_from_slice(&(net.layers().len() as u32).to_le_bytes());
            for s in &sizes {
                out.extend_from_slice(&(*s as u32).to_le_bytes());
            }
            for l in net.layers() {
                out.push(l.activation.tag());
            }
            for l in net.layers() {
                for w in l.weights.data() {
                    out.extend_from_slice(&w.to_le_bytes());
                }
                for b in &l.bias {
                    out.extend_from_slice(&b.to_le_bytes());
                }
            }
        }
        out.extend_from_slice(&(self.scalars.len() as u32).to_le_bytes());
        for (name, v) in &self.scalars {
            write_name(&mut out, name);
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_reader(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|e| bad(e.to_string()))?;
        if &magic != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let net_count = read_u32(r)?;
        let mut nets = Vec::new();
        for _ in 0..net_count {
            let name = read_name(r)?;
            let layer_count = read_u32(r)? as usize;
            if layer_count == 0 || layer_count > 64 {
                return Err(bad(format!("implausible layer count {layer_count}")));
            }
            let mut sizes = Vec::with_capacity(layer_count + 1);
            for _ in 0..=layer_count {
                sizes.push(read_u32(r)? as usize);
            }
            let mut tags = vec![0u8; layer_count];
            r.read_exact(&mut tags).map_err(|e| bad(e.to_string()))?;
            let mut layers = Vec::with_capacity(layer_count);
            for (i, tag) in tags.iter().enumerate() {
                let activation = Activation::from_tag(*tag)
                    .ok_or_else(|| bad(format!("unknown activation tag {tag}")))?;
                let (fi, fo) = (sizes[i], sizes[i + 1]);
                let mut w = Vec::with_capacity(fi * fo);
                for _ in 0..fi * fo {
                    w.push(read_f64(r)?);
                }
                let mut bias = Vec::with_capacity(fo);
                for _ in 0..fo {
                    bias.push(read_f64(r)?);
                }
                layers.push(Layer {
                    weights: Tensor2::from_vec(fi, fo, w)?,
                    bias,
                    activation,
                });
            }
            nets.push((name, Mlp::from_layers(layers)?));
        }
        let scalar_count = read_u32(r)?;
        let mut scalars = Vec::new();
        for _ in 0..scalar_count {
            let name = read_name(r)?;
            scalars.push((name, read_f64(r)?));
        }
        Ok(Checkpoint { nets, scalars })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| CovrError::io(path, e))?;
        f.write_all(&self.to_bytes())
            .map_err(|e| CovrError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| CovrError::io(path, e))?;
        Checkpoint::from_reader(&mut bytes.as_slice())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::RngStream;

    #[test]
    fn roundtrip_is_bit_exact() {
        let mut rng = RngStream::new(4);
        let mut ck = Checkpoint::new();
        ck.push_net(
            "a",
            &Mlp::new(&[5, 3, 2], Activation::Relu, Activation::Identity, &mut rng),
        );
        ck.push_net("b", &Mlp::new(&[2, 1], Activation::Tanh, Activation::Tanh, &mut rng));
        ck.push_scalar("log_alpha", 0.1f64.ln());
        let back = Checkpoint::from_reader(&mut ck.to_bytes().as_slice()).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn truncated_input_is_rejected() {
        let mut rng = RngStream::new(4);
        let mut ck = Checkpoint::new();
        ck.push_net("a", &Mlp::new(&[3, 2], Activation::Relu, Activation::Identity, &mut rng));
        let bytes = ck.to_bytes();
        assert!(Checkpoint::from_reader(&mut &bytes[..bytes.len() - 3]).is_err());
        assert!(Checkpoint::from_reader(&mut &b"NOTACKPT"[..]).is_err());
    }
}
