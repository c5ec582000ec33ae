//! Seeded weights and the `prunesim-ckpt-v1` file format.
//!
//! A checkpoint file is one UTF-8 JSON header line
//! `{"format":"prunesim-ckpt-v1","config":{...}}` terminated by `\n`, then
//! every tensor as little-endian `f64` in this order:
//!
//! 1. token embedding `vocab x d_model` (also the output head)
//! 2. position embedding `max_seq x d_model`
//! 3. per layer: `wq`, `wk`, `wv`, `wo`, attention norm gain, FFN norm gain,
//!    `gate`, `up`, `down`
//! 4. final norm gain
//!
//! Matrices are row-major.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ModelConfig;
use crate::numerics::{Matrix, SplitMix64};
use crate::{Error, Result};

pub const FORMAT_VERSION: &str = "prunesim-ckpt-v1";

/// Key used in place of a layer index for tensors outside the layer stack.
const GLOBAL_LAYER: u64 = u64::MAX;

// Tensor ids of the init schedule.
const T_TOK_EMBED: u64 = 0;
const T_POS_EMBED: u64 = 1;
const T_WQ: u64 = 2;
const T_WK: u64 = 3;
const T_WV: u64 = 4;
const T_WO: u64 = 5;
const T_GATE: u64 = 6;
const T_UP: u64 = 7;
const T_DOWN: u64 = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
    pub attn_norm: Vec<f64>,
    pub ffn_norm: Vec<f64>,
    /// `d_ff x d_model`
    pub gate: Matrix,
    /// `d_ff x d_model`
    pub up: Matrix,
    /// `d_model x d_ff`; column `i` carries FFN channel `i`.
    pub down: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub tok_embed: Matrix,
    pub pos_embed: Matrix,
    pub layers: Vec<LayerWeights>,
    pub final_norm: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    config: ModelConfig,
}

/// Draws a `rows x cols` tensor as `(2u - 1) * scale` with `u` from the
/// stream keyed on `(seed, layer, tensor)`; element `e` is the `e`-th draw.
fn draw(seed: u64, layer: u64, tensor: u64, rows: usize, cols: usize, scale: f64) -> Matrix {
    let mut rng = SplitMix64::keyed(&[seed, layer, tensor]);
    let data = (0..rows * cols)
        .map(|_| (2.0 * rng.next_f64() - 1.0) * scale)
        .collect();
    Matrix::new(rows, cols, data).expect("finite by construction")
}

fn fan_in(cols: usize) -> f64 {
    1.0 / (cols as f64).sqrt()
}

impl Checkpoint {
    /// Deterministic initialisation. Linear weights are `(2u - 1) / sqrt(fan_in)`,
    /// embeddings use scale 1, norm gains are 1.
    pub fn init(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let s = config.seed;
        let (d, f, kv) = (config.d_model, config.d_ff, config.kv_dim());
        let layers = (0..config.n_layers as u64)
            .map(|l| LayerWeights {
                wq: draw(s, l, T_WQ, d, d, fan_in(d)),
                wk: draw(s, l, T_WK, kv, d, fan_in(d)),
                wv: draw(s, l, T_WV, kv, d, fan_in(d)),
                wo: draw(s, l, T_WO, d, d, fan_in(d)),
                attn_norm: vec![1.0; d],
                ffn_norm: vec![1.0; d],
                gate: draw(s, l, T_GATE, f, d, fan_in(d)),
                up: draw(s, l, T_UP, f, d, fan_in(d)),
                down: draw(s, l, T_DOWN, d, f, fan_in(f)),
            })
            .collect();
        Ok(Self {
            config,
            tok_embed: draw(s, GLOBAL_LAYER, T_TOK_EMBED, config.vocab, d, 1.0),
            pos_embed: draw(s, GLOBAL_LAYER, T_POS_EMBED, config.max_seq, d, 1.0),
            layers,
            final_norm: vec![1.0; d],
        })
    }

    /// Tensors in file order as `(name, rows, cols, data)`.
    pub fn tensors(&self) -> Vec<(String, usize, usize, &[f64])> {
        fn m(name: String, t: &Matrix) -> (String, usize, usize, &[f64]) {
            (name, t.rows(), t.cols(), t.data())
        }
        fn v(name: String, t: &[f64]) -> (String, usize, usize, &[f64]) {
            (name, 1, t.len(), t)
        }
        let mut out = vec![
            m("tok_embed".into(), &self.tok_embed),
            m("pos_embed".into(), &self.pos_embed),
        ];
        for (l, w) in self.layers.iter().enumerate() {
            out.push(m(format!("layers.{l}.wq"), &w.wq));
            out.push(m(format!("layers.{l}.wk"), &w.wk));
            out.push(m(format!("layers.{l}.wv"), &w.wv));
            out.push(m(format!("layers.{l}.wo"), &w.wo));
            out.push(v(format!("layers.{l}.attn_norm"), &w.attn_norm));
            out.push(v(format!("layers.{l}.ffn_norm"), &w.ffn_norm));
            out.push(m(format!("layers.{l}.gate"), &w.gate));
            out.push(m(format!("layers.{l}.up"), &w.up));
            out.push(m(format!("layers.{l}.down"), &w.down));
        }
        out.push(v("final_norm".into(), &self.final_norm));
        out
    }

    pub fn header_line(&self) -> Result<String> {
        let h = Header {
            format: FORMAT_VERSION.to_string(),
            config: self.config,
        };
        Ok(serde_json::to_string(&h)?)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(self.header_line()?.as_bytes())?;
        w.write_all(b"\n")?;
        for (_, _, _, data) in self.tensors() {
            let mut buf = Vec::with_capacity(data.len() * 8);
            for v in data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        Ok(buf)
    }

    /// Parses only the header line of a checkpoint file.
    pub fn read_header(bytes: &[u8]) -> Result<(ModelConfig, usize)> {
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Format("missing header line".into()))?;
        let line = std::str::from_utf8(&bytes[..nl])
            .map_err(|_| Error::Format("header is not UTF-8".into()))?;
        let h: Header = serde_json::from_str(line)?;
        if h.format != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported format {:?}, expected {FORMAT_VERSION:?}",
                h.format
            )));
        }
        h.config.validate()?;
        Ok((h.config, nl + 1))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (config, offset) = Self::read_header(bytes)?;
        // shapes come from a freshly laid out checkpoint of the same config
        let mut ckpt = Self::zeroed(config);
        let body = &bytes[offset..];
        let expected: usize = ckpt.tensors().iter().map(|t| t.3.len() * 8).sum();
        if body.len() != expected {
            return Err(Error::Format(format!(
                "tensor payload is {} bytes, expected {expected}",
                body.len()
            )));
        }
        let mut values = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
        let mut fill = |dst: &mut [f64]| -> Result<()> {
            for d in dst.iter_mut() {
                let v = values.next().expect("length checked");
                if !v.is_finite() {
                    return Err(Error::NonFinite("checkpoint tensor".into()));
                }
                *d = v;
            }
            Ok(())
        };
        ckpt.visit_mut(&mut fill)?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    fn zeroed(config: ModelConfig) -> Self {
        let (d, f, kv) = (config.d_model, config.d_ff, config.kv_dim());
        Self {
            config,
            tok_embed: Matrix::zeros(config.vocab, d),
            pos_embed: Matrix::zeros(config.max_seq, d),
            layers: (0..config.n_layers)
                .map(|_| LayerWeights {
                    wq: Matrix::zeros(d, d),
                    wk: Matrix::zeros(kv, d),
                    wv: Matrix::zeros(kv, d),
                    wo: Matrix::zeros(d, d),
                    attn_norm: vec![0.0; d],
                    ffn_norm: vec![0.0; d],
                    gate: Matrix::zeros(f, d),
                    up: Matrix::zeros(f, d),
                    down: Matrix::zeros(d, f),
                })
                .collect(),
            final_norm: vec![0.0; d],
        }
    }

    /// Visits tensors mutably in file order.
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64]) -> Result<()>) -> Result<()> {
        fn mat(m: &mut Matrix, f: &mut dyn FnMut(&mut [f64]) -> Result<()>) -> Result<()> {
            let (r, c) = (m.rows(), m.cols());
            let mut data = m.data().to_vec();
            f(&mut data)?;
            *m = Matrix::new(r, c, data)?;
            Ok(())
        }
        mat(&mut self.tok_embed, f)?;
        mat(&mut self.pos_embed, f)?;
        for w in &mut self.layers {
            mat(&mut w.wq, f)?;
            mat(&mut w.wk, f)?;
            mat(&mut w.wv, f)?;
            mat(&mut w.wo, f)?;
            f(&mut w.attn_norm)?;
            f(&mut w.ffn_norm)?;
            mat(&mut w.gate, f)?;
            mat(&mut w.up, f)?;
            mat(&mut w.down, f)?;
        }
        f(&mut self.final_norm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig {
            d_model: 8,
            d_ff: 16,
            n_layers: 2,
            n_heads: 2,
            n_kv_heads: 1,
            vocab: 11,
            max_seq: 10,
            seed: 3,
        }
    }

    #[test]
    fn init_is_deterministic() {
        let a = Checkpoint::init(small()).unwrap();
        let b = Checkpoint::init(small()).unwrap();
        assert_eq!(a.to_bytes().unwrap(), b.to_bytes().unwrap());
    }

    #[test]
    fn seed_changes_weights() {
        let a = Checkpoint::init(small()).unwrap();
        let mut c = small();
        c.seed = 4;
        let b = Checkpoint::init(c).unwrap();
        assert_ne!(a.layers[0].gate, b.layers[0].gate);
    }

    #[test]
    fn weights_within_fan_in_bound() {
        let ck = Checkpoint::init(small()).unwrap();
        let bound = 1.0 / (8f64).sqrt();
        assert!(ck.layers[1].up.data().iter().all(|v| v.abs() < bound));
        let bound = 1.0 / (16f64).sqrt();
        assert!(ck.layers[1].down.data().iter().all(|v| v.abs() < bound));
        assert!(ck.tok_embed.data().iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn byte_exact_round_trip() {
        let ck = Checkpoint::init(small()).unwrap();
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn header_is_first_line() {
        let ck = Checkpoint::init(small()).unwrap();
        let bytes = ck.to_bytes().unwrap();
        let nl = bytes.iter().position(|&b| b == b'\n').unwrap();
        let line = std::str::from_utf8(&bytes[..nl]).unwrap();
        assert!(line.starts_with(r#"{"format":"prunesim-ckpt-v1","config":{"d_model":8"#));
    }

    #[test]
    fn rejects_wrong_version_and_truncation() {
        let ck = Checkpoint::init(small()).unwrap();
        let bytes = ck.to_bytes().unwrap();
        let text = String::from_utf8_lossy(&bytes[..40]).replace("v1", "v9");
        let mut bad = text.into_bytes();
        bad.extend_from_slice(&bytes[40..]);
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Format(_))));
        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..bytes.len() - 8]),
            Err(Error::Format(_))
        ));
    }
}
