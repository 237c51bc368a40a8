//! Binary containers. Everything is little-endian.
//!
//! ```text
//! tensor file:  "MSTN" | version u32 | rank u32 | dims u64 × rank | f64 × Π dims
//! checkpoint:   "MSCK" | version u32 | count u32 | entry × count
//! entry:        name_len u32 | name (UTF-8) | tensor file without its magic
//! ```

use std::collections::BTreeSet;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::nets::{Activation, Autoencoder, Linear, Mlp, MlpSpec, ModelBundle};

pub const TENSOR_MAGIC: &[u8; 4] = b"MSTN";
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MSCK";
pub const FORMAT_VERSION: u32 = 1;

/// Byte cursor that reports the offset of whatever it fails to read.
struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::format(
                self.buf.len() as u64,
                format!("truncated while reading {what} ({n} bytes needed at offset {})", self.pos),
            )),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let got = self.take(4, "magic")?;
        if got != expected {
            return Err(Error::format(
                0,
                format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(got),
                    String::from_utf8_lossy(expected)
                ),
            ));
        }
        Ok(())
    }

    fn version(&mut self) -> Result<()> {
        let at = self.pos as u64;
        let v = self.u32("version")?;
        if v != FORMAT_VERSION {
            return Err(Error::format(at, format!("unsupported version {v}")));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::format(self.pos as u64, format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

fn put_body(out: &mut Vec<u8>, t: &Tensor) {
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(t.dims().len() as u32).to_le_bytes());
    for &d in t.dims() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn read_body(r: &mut Reader) -> Result<Tensor> {
    r.version()?;
    let rank = r.u32("rank")? as usize;
    let dims_at = r.pos as u64;
    let mut dims = Vec::with_capacity(rank.min(16));
    for _ in 0..rank {
        dims.push(r.u64("dims")?);
    }
    let count = dims
        .iter()
        .try_fold(1u64, |acc, &d| acc.checked_mul(d))
        .and_then(|c| usize::try_from(c).ok())
        .filter(|c| c.checked_mul(8).is_some())
        .ok_or_else(|| Error::format(dims_at, format!("dims {dims:?} overflow")))?;
    let dims: Vec<usize> = dims.into_iter().map(|d| d as usize).collect();
    let payload = r.take(count * 8, "payload")?;
    let data = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Tensor::new(dims, data).map_err(|e| Error::format(dims_at, e.to_string()))
}

pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * (t.dims().len() + t.len()));
    out.extend_from_slice(TENSOR_MAGIC);
    put_body(&mut out, t);
    out
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    let mut r = Reader::new(bytes);
    r.magic(TENSOR_MAGIC)?;
    let t = read_body(&mut r)?;
    r.finish()?;
    Ok(t)
}

/// Ordered, uniquely named tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    entries: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) -> Result<()> {
        let name = name.into();
        if self.get(&name).is_some() {
            return Err(Error::Argument(format!("duplicate checkpoint entry `{name}`")));
        }
        self.entries.push((name, t));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn entries(&self) -> &[(String, Tensor)] {
        &self.entries
    }

    fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name).ok_or_else(|| Error::Data(format!("checkpoint has no entry `{name}`")))
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            put_body(&mut out, t);
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(CHECKPOINT_MAGIC)?;
        r.version()?;
        let count = r.u32("entry count")?;
        let mut seen = BTreeSet::new();
        let mut entries = Vec::new();
        for _ in 0..count {
            let at = r.pos as u64;
            let len = r.u32("name length")? as usize;
            let name = std::str::from_utf8(r.take(len, "entry name")?)
                .map_err(|_| Error::format(at, "entry name is not UTF-8"))?
                .to_string();
            if !seen.insert(name.clone()) {
                return Err(Error::format(at, format!("duplicate entry `{name}`")));
            }
            entries.push((name, read_body(&mut r)?));
        }
        r.finish()?;
        Ok(Checkpoint { entries })
    }

    fn put_mlp(&mut self, prefix: &str, mlp: &Mlp) -> Result<()> {
        // Spec row: activation code, then the layer widths.
        let mut spec = vec![mlp.spec.activation.code() as f64];
        spec.extend(mlp.spec.widths.iter().map(|&w| w as f64));
        self.insert(format!("{prefix}.spec"), Tensor::vector(spec))?;
        for (i, l) in mlp.layers.iter().enumerate() {
            self.insert(format!("{prefix}.{i}.weight"), l.weight.clone())?;
            self.insert(format!("{prefix}.{i}.bias"), l.bias.clone())?;
        }
        Ok(())
    }

    fn take_mlp(&self, prefix: &str) -> Result<Mlp> {
        let raw = self.require(&format!("{prefix}.spec"))?.data();
        let bad = || Error::Data(format!("malformed spec entry for `{prefix}`"));
        let (&code, widths) = raw.split_first().ok_or_else(bad)?;
        let activation = Activation::from_code(code as u8).filter(|_| code.fract() == 0.0).ok_or_else(bad)?;
        if widths.iter().any(|w| w.fract() != 0.0 || *w < 1.0) {
            return Err(bad());
        }
        let spec = MlpSpec::new(widths.iter().map(|&w| w as usize).collect(), activation)?;
        let layers = (0..spec.num_layers())
            .map(|i| {
                Ok(Linear {
                    weight: self.require(&format!("{prefix}.{i}.weight"))?.clone(),
                    bias: self.require(&format!("{prefix}.{i}.bias"))?.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Mlp::from_layers(spec, layers).map_err(|e| Error::Data(format!("`{prefix}`: {e}")))
    }

    pub fn from_bundle(b: &ModelBundle) -> Result<Self> {
        let mut c = Checkpoint::new();
        c.put_mlp("feature", &b.feature)?;
        c.put_mlp("classifier", &b.classifier)?;
        c.put_mlp("domain", &b.domain)?;
        Ok(c)
    }

    pub fn to_bundle(&self) -> Result<ModelBundle> {
        let (feature, classifier, domain) =
            (self.take_mlp("feature")?, self.take_mlp("classifier")?, self.take_mlp("domain")?);
        ModelBundle::check_specs(&feature.spec, &classifier.spec, &domain.spec)?;
        Ok(ModelBundle { feature, classifier, domain })
    }

    pub fn from_autoencoder(ae: &Autoencoder) -> Result<Self> {
        let mut c = Checkpoint::new();
        c.put_mlp("encoder", &ae.encoder)?;
        c.put_mlp("decoder", &ae.decoder)?;
        Ok(c)
    }

    pub fn to_autoencoder(&self) -> Result<Autoencoder> {
        Autoencoder::from_parts(self.take_mlp("encoder")?, self.take_mlp("decoder")?)
    }
}
