//! Versioned binary container of named tensors.
//!
//! Layout (all integers little endian):
//!
//! ```text
//! magic      8 bytes   "SSGANCKP"
//! version    u32       1
//! n_meta     u32
//!   key      u32 length + UTF-8 bytes
//!   value    u32 length + UTF-8 bytes
//! n_tensors  u32
//!   name     u32 length + UTF-8 bytes
//!   rank     u32
//!   dims     rank × u64
//!   values   prod(dims) × f64 (IEEE-754 bits, little endian)
//! ```
//!
//! Values are stored as raw bits, so save followed by load is bit-exact.

use std::collections::BTreeMap;
use std::path::Path;

use super::layers::{FeatureDropout, GaussianNoise, WeightNormDense};
use super::models::{Discriminator, Generator};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"SSGANCKP";
const VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub metadata: BTreeMap<String, String>,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Data(format!("checkpoint has no tensor named {name:?}")))
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.metadata
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Data(format!("checkpoint has no metadata key {key:?}")))
    }

    fn meta_f64(&self, key: &str) -> Result<f64> {
        self.meta(key)?
            .parse()
            .map_err(|_| Error::Data(format!("checkpoint metadata {key:?} is not a number")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let put_str = |out: &mut Vec<u8>, s: &str| {
            out.extend_from_slice(&(s.len() as u32).to_le_bytes());
            out.extend_from_slice(s.as_bytes());
        };
        out.extend_from_slice(&(self.metadata.len() as u32).to_le_bytes());
        for (k, v) in &self.metadata {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            put_str(&mut out, name);
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Data("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Data(format!("unsupported checkpoint version {version}")));
        }
        let mut ck = Checkpoint::default();
        for _ in 0..r.u32()? {
            let k = r.string()?;
            let v = r.string()?;
            ck.metadata.insert(k, v);
        }
        for _ in 0..r.u32()? {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let values = (0..n)
                .map(|_| r.u64().map(f64::from_bits))
                .collect::<Result<Vec<_>>>()?;
            ck.tensors.push((name, Tensor::new(shape, values)?));
        }
        if r.pos != bytes.len() {
            return Err(Error::Data("trailing bytes after checkpoint".into()));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Data("truncated checkpoint".into()));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Data("checkpoint string is not UTF-8".into()))
    }
}

fn read_layers(ck: &Checkpoint, prefix: &str, hidden: usize) -> Result<(Vec<WeightNormDense>, WeightNormDense)> {
    let layer = |name: String| -> Result<WeightNormDense> {
        Ok(WeightNormDense {
            direction: ck.tensor(&format!("{name}.direction"))?.clone(),
            gain: ck.tensor(&format!("{name}.gain"))?.clone(),
            bias: ck.tensor(&format!("{name}.bias"))?.clone(),
        })
    };
    let hidden = (0..hidden)
        .map(|i| layer(format!("{prefix}.hidden{i}")))
        .collect::<Result<Vec<_>>>()?;
    let out = layer(format!("{prefix}.out"))?;
    Ok((hidden, out))
}

fn tensors_of(params: Vec<(String, &Tensor)>) -> Vec<(String, Tensor)> {
    params.into_iter().map(|(n, t)| (n, t.clone())).collect()
}

impl Discriminator {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut metadata = BTreeMap::new();
        metadata.insert("kind".into(), "discriminator".into());
        metadata.insert("hidden_layers".into(), self.hidden.len().to_string());
        metadata.insert("leaky_slope".into(), format!("{:?}", self.leaky_slope));
        metadata.insert("noise_sigma".into(), format!("{:?}", self.noise.sigma));
        metadata.insert("dropout_rate".into(), format!("{:?}", self.dropout.rate));
        Checkpoint {
            metadata,
            tensors: tensors_of(self.params()),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.meta("kind")? != "discriminator" {
            return Err(Error::Data("checkpoint does not hold a discriminator".into()));
        }
        let n: usize = ck
            .meta("hidden_layers")?
            .parse()
            .map_err(|_| Error::Data("bad hidden_layers".into()))?;
        let (hidden, head) = read_layers(ck, "d", n)?;
        Ok(Discriminator {
            hidden,
            head,
            leaky_slope: ck.meta_f64("leaky_slope")?,
            noise: GaussianNoise::new(ck.meta_f64("noise_sigma")?)?,
            dropout: FeatureDropout::new(ck.meta_f64("dropout_rate")?)?,
        })
    }
}

impl Generator {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut metadata = BTreeMap::new();
        metadata.insert("kind".into(), "generator".into());
        metadata.insert("hidden_layers".into(), self.hidden.len().to_string());
        metadata.insert("leaky_slope".into(), format!("{:?}", self.leaky_slope));
        metadata.insert("dropout_rate".into(), format!("{:?}", self.dropout.rate));
        Checkpoint {
            metadata,
            tensors: tensors_of(self.params()),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.meta("kind")? != "generator" {
            return Err(Error::Data("checkpoint does not hold a generator".into()));
        }
        let n: usize = ck
            .meta("hidden_layers")?
            .parse()
            .map_err(|_| Error::Data("bad hidden_layers".into()))?;
        let (hidden, out) = read_layers(ck, "g", n)?;
        Ok(Generator {
            hidden,
            out,
            leaky_slope: ck.meta_f64("leaky_slope")?,
            dropout: FeatureDropout::new(ck.meta_f64("dropout_rate")?)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::NetworkConfig;
    use crate::rng::seeded;

    fn cfg() -> NetworkConfig {
        NetworkConfig {
            feature_dim: 9,
            latent_dim: 4,
            d_hidden: vec![6, 5, 4, 3, 3],
            g_hidden: vec![3, 4, 5, 6, 7],
            ..NetworkConfig::default()
        }
    }

    #[test]
    fn discriminator_round_trip_is_bit_exact() {
        let mut d = Discriminator::new(&cfg(), &mut seeded(3)).unwrap();
        d.head.bias.values_mut()[0] = f64::MIN_POSITIVE / 3.0;
        d.hidden[1].gain.values_mut()[2] = -0.1 - 1e-17;
        let bytes = d.to_checkpoint().to_bytes();
        let back = Discriminator::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back, d);
        assert_eq!(back.to_checkpoint().to_bytes(), bytes);
    }

    #[test]
    fn generator_round_trip_through_file() {
        let g = Generator::new(&cfg(), &mut seeded(4)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.ckpt");
        g.to_checkpoint().save(&path).unwrap();
        let back = Generator::from_checkpoint(&Checkpoint::load(&path).unwrap()).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let d = Discriminator::new(&cfg(), &mut seeded(3)).unwrap();
        let bytes = d.to_checkpoint().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(Checkpoint::from_bytes(b"NOTACKPT\x01\x00\x00\x00").is_err());
        let g = Generator::new(&cfg(), &mut seeded(4)).unwrap();
        assert!(Discriminator::from_checkpoint(&g.to_checkpoint()).is_err());
    }
}
