//! Versioned binary container for parameters and run state.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "FISELCKP" | version u32 | entry count u64
//! per entry: name len u64 | name bytes | kind u8
//!   kind 0 (tensor): rows u64 | cols u64 | rows·cols f64
//!   kind 1 (bytes):  len u64 | bytes
//! SHA-256 of everything above
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};
use crate::ndcore::{AdamConfig, AdamState, DenseMatrix, Linear, Mlp};
use crate::selection::{FrozenSelection, GateNet, SelectionConfig, SelectionParams};

const MAGIC: &[u8; 8] = b"FISELCKP";
const VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub enum Entry {
    Tensor(DenseMatrix),
    Bytes(Vec<u8>),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    entries: BTreeMap<String, Entry>,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn put_tensor(&mut self, name: impl Into<String>, m: &DenseMatrix) {
        self.entries.insert(name.into(), Entry::Tensor(m.clone()));
    }

    pub fn put_bytes(&mut self, name: impl Into<String>, b: impl Into<Vec<u8>>) {
        self.entries.insert(name.into(), Entry::Bytes(b.into()));
    }

    pub fn put_json<T: Serialize>(&mut self, name: impl Into<String>, value: &T) {
        let text = serde_json::to_vec(value).expect("plain data serializes");
        self.put_bytes(name, text);
    }

    pub fn put_u64(&mut self, name: impl Into<String>, v: u64) {
        self.put_bytes(name, v.to_le_bytes().to_vec());
    }

    pub fn tensor(&self, name: &str) -> Result<&DenseMatrix> {
        match self.entries.get(name) {
            Some(Entry::Tensor(m)) => Ok(m),
            Some(Entry::Bytes(_)) => Err(Error::Integrity(format!("entry {name} is not a tensor"))),
            None => Err(Error::Integrity(format!("missing entry {name}"))),
        }
    }

    pub fn bytes(&self, name: &str) -> Result<&[u8]> {
        match self.entries.get(name) {
            Some(Entry::Bytes(b)) => Ok(b),
            Some(Entry::Tensor(_)) => Err(Error::Integrity(format!("entry {name} is not bytes"))),
            None => Err(Error::Integrity(format!("missing entry {name}"))),
        }
    }

    pub fn json<T: DeserializeOwned>(&self, name: &str) -> Result<T> {
        serde_json::from_slice(self.bytes(name)?)
            .map_err(|e| Error::Integrity(format!("entry {name}: {e}")))
    }

    pub fn u64(&self, name: &str) -> Result<u64> {
        let b: [u8; 8] = self
            .bytes(name)?
            .try_into()
            .map_err(|_| Error::Integrity(format!("entry {name} is not a u64")))?;
        Ok(u64::from_le_bytes(b))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for (name, entry) in &self.entries {
            out.extend_from_slice(&(name.len() as u64).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            match entry {
                Entry::Tensor(m) => {
                    out.push(0);
                    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
                    out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
                    for x in m.as_slice() {
                        out.extend_from_slice(&x.to_le_bytes());
                    }
                }
                Entry::Bytes(b) => {
                    out.push(1);
                    out.extend_from_slice(&(b.len() as u64).to_le_bytes());
                    out.extend_from_slice(b);
                }
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 12 + DIGEST_LEN || &bytes[..8] != MAGIC {
            return Err(Error::Integrity("not a checkpoint file".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Integrity("checksum mismatch".into()));
        }
        let mut r = Reader { buf: body, pos: 8 };
        let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
        if version != VERSION {
            return Err(Error::Integrity(format!("unsupported checkpoint version {version}")));
        }
        let count = r.u64()?;
        let mut entries = BTreeMap::new();
        for _ in 0..count {
            let len = r.len()?;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Integrity("entry name is not UTF-8".into()))?
                .to_owned();
            let entry = match r.take(1)?[0] {
                0 => {
                    let rows = r.len()?;
                    let cols = r.len()?;
                    let n = rows
                        .checked_mul(cols)
                        .filter(|n| n.checked_mul(8).is_some_and(|b| b <= r.remaining()))
                        .ok_or_else(|| Error::Integrity(format!("tensor {name} overruns the file")))?;
                    let data = r
                        .take(n * 8)?
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect();
                    Entry::Tensor(DenseMatrix::from_vec(rows, cols, data)?)
                }
                1 => {
                    let len = r.len()?;
                    Entry::Bytes(r.take(len)?.to_vec())
                }
                k => return Err(Error::Integrity(format!("unknown entry kind {k}"))),
            };
            entries.insert(name, entry);
        }
        if r.remaining() != 0 {
            return Err(Error::Integrity("trailing bytes after entries".into()));
        }
        Ok(Self { entries })
    }

    /// Writes through a temporary file so a crash never leaves a torn file.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn put_mlp(&mut self, prefix: &str, mlp: &Mlp) {
        self.put_u64(format!("{prefix}.layers"), mlp.layers.len() as u64);
        for (i, layer) in mlp.layers.iter().enumerate() {
            self.put_tensor(format!("{prefix}.{i}.weight"), &layer.weight.value);
            if let Some(b) = &layer.bias {
                self.put_tensor(format!("{prefix}.{i}.bias"), &b.value);
            }
        }
    }

    pub fn mlp(&self, prefix: &str) -> Result<Mlp> {
        let n = self.u64(&format!("{prefix}.layers"))? as usize;
        let mut layers = Vec::with_capacity(n);
        for i in 0..n {
            let weight = self.tensor(&format!("{prefix}.{i}.weight"))?.clone();
            let bias_name = format!("{prefix}.{i}.bias");
            let bias = if self.contains(&bias_name) {
                Some(self.tensor(&bias_name)?.clone())
            } else {
                None
            };
            layers.push(Linear::from_parts(weight, bias).map_err(integrity)?);
        }
        Ok(Mlp { layers })
    }

    pub fn put_model(&mut self, prefix: &str, model: &ModelParams) {
        self.put_json(format!("{prefix}.config"), &model.config);
        self.put_tensor(format!("{prefix}.embedding"), &model.embedding.value);
        self.put_mlp(&format!("{prefix}.mlp"), &model.mlp);
    }

    pub fn model(&self, prefix: &str) -> Result<ModelParams> {
        let config: ModelConfig = self.json(&format!("{prefix}.config"))?;
        let embedding = self.tensor(&format!("{prefix}.embedding"))?.clone();
        let mlp = self.mlp(&format!("{prefix}.mlp"))?;
        ModelParams::from_parts(config, embedding, mlp).map_err(integrity)
    }

    pub fn put_gate(&mut self, prefix: &str, net: &GateNet) {
        self.put_tensor(format!("{prefix}.table"), &net.table.value);
        self.put_tensor(format!("{prefix}.sigma"), &net.sigma.value);
        self.put_mlp(&format!("{prefix}.net"), &net.net);
    }

    pub fn gate(&self, prefix: &str) -> Result<GateNet> {
        GateNet::from_parts(
            self.tensor(&format!("{prefix}.table"))?.clone(),
            self.mlp(&format!("{prefix}.net"))?,
            self.tensor(&format!("{prefix}.sigma"))?.clone(),
        )
        .map_err(integrity)
    }

    pub fn put_selection(&mut self, prefix: &str, s: &SelectionParams) {
        self.put_json(format!("{prefix}.config"), &s.config);
        self.put_json(format!("{prefix}.field_sizes"), &s.field_sizes());
        self.put_gate(&format!("{prefix}.value"), &s.value_net);
        self.put_gate(&format!("{prefix}.field"), &s.field_net);
        self.put_tensor(format!("{prefix}.alpha"), &s.alpha.value);
    }

    pub fn selection(&self, prefix: &str) -> Result<SelectionParams> {
        let config: SelectionConfig = self.json(&format!("{prefix}.config"))?;
        let sizes: Vec<usize> = self.json(&format!("{prefix}.field_sizes"))?;
        SelectionParams::from_parts(
            config,
            &sizes,
            self.gate(&format!("{prefix}.value"))?,
            self.gate(&format!("{prefix}.field"))?,
            self.tensor(&format!("{prefix}.alpha"))?.clone(),
        )
        .map_err(integrity)
    }

    /// Frozen selections keep `alpha_star` as a tuple-ordered bitset
    /// (`u64` count, then bits packed LSB-first).
    pub fn put_frozen(&mut self, prefix: &str, f: &FrozenSelection) {
        self.put_json(format!("{prefix}.config"), &f.config);
        self.put_json(format!("{prefix}.field_sizes"), &f.field_sizes());
        let mut bits = (f.alpha_star.len() as u64).to_le_bytes().to_vec();
        bits.resize(8 + f.alpha_star.len().div_ceil(8), 0);
        for (p, &on) in f.alpha_star.iter().enumerate() {
            if on {
                bits[8 + p / 8] |= 1 << (p % 8);
            }
        }
        self.put_bytes(format!("{prefix}.alpha_star"), bits);
        self.put_gate(&format!("{prefix}.value"), &f.value_net);
        self.put_gate(&format!("{prefix}.field"), &f.field_net);
    }

    pub fn frozen(&self, prefix: &str) -> Result<FrozenSelection> {
        let config: SelectionConfig = self.json(&format!("{prefix}.config"))?;
        let sizes: Vec<usize> = self.json(&format!("{prefix}.field_sizes"))?;
        let bits = self.bytes(&format!("{prefix}.alpha_star"))?;
        let bad = || Error::Integrity("malformed alpha_star bitset".into());
        let n = u64::from_le_bytes(bits.get(..8).ok_or_else(bad)?.try_into().unwrap()) as usize;
        if bits.len() != 8 + n.div_ceil(8) {
            return Err(bad());
        }
        let alpha_star = (0..n).map(|p| bits[8 + p / 8] >> (p % 8) & 1 == 1).collect();
        FrozenSelection::from_parts(
            config,
            &sizes,
            alpha_star,
            self.gate(&format!("{prefix}.value"))?,
            self.gate(&format!("{prefix}.field"))?,
        )
        .map_err(integrity)
    }

    pub fn put_adam(&mut self, prefix: &str, states: &[AdamState]) {
        self.put_u64(format!("{prefix}.len"), states.len() as u64);
        for (k, s) in states.iter().enumerate() {
            self.put_tensor(format!("{prefix}.{k}.m"), &s.m);
            self.put_tensor(format!("{prefix}.{k}.v"), &s.v);
            self.put_u64(format!("{prefix}.{k}.step"), s.step);
        }
    }

    /// Moments are restored; hyperparameters come from `config`.
    pub fn adam(&self, prefix: &str, config: AdamConfig) -> Result<Vec<AdamState>> {
        let n = self.u64(&format!("{prefix}.len"))? as usize;
        (0..n)
            .map(|k| {
                let m = self.tensor(&format!("{prefix}.{k}.m"))?.clone();
                let v = self.tensor(&format!("{prefix}.{k}.v"))?.clone();
                if m.shape() != v.shape() {
                    return Err(Error::Integrity(format!("{prefix}.{k}: moment shapes differ")));
                }
                Ok(AdamState {
                    m,
                    v,
                    step: self.u64(&format!("{prefix}.{k}.step"))?,
                    config,
                })
            })
            .collect()
    }
}

fn integrity(e: Error) -> Error {
    match e {
        Error::Integrity(_) => e,
        other => Error::Integrity(other.to_string()),
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::Integrity("truncated checkpoint".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Integrity("length overflows".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Operation;
    use crate::selection::{freeze_selection, Grain};

    fn model() -> ModelParams {
        let cfg = ModelConfig {
            n_fields: 3,
            n_values: 9,
            d: 4,
            hidden: vec![5],
            operation: Operation::Inner,
            order: 2,
        };
        ModelParams::init(cfg, 3).unwrap()
    }

    fn selection() -> SelectionParams {
        let mut s = SelectionParams::init(SelectionConfig::default(), &[2, 3, 4], 4).unwrap();
        s.alpha.value = DenseMatrix::from_rows(&[[0.3, -0.1, 1e-300]]);
        s
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (m, s) = (model(), selection());
        let f = freeze_selection(&s);
        let mut c = Container::new();
        c.put_model("model", &m);
        c.put_selection("sel", &s);
        c.put_frozen("frozen", &f);
        c.put_tensor("odd", &DenseMatrix::from_rows(&[[-0.0, f64::MIN_POSITIVE, 1.0 / 3.0]]));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.ckpt");
        c.save(&path).unwrap();
        let back = Container::load(&path).unwrap();
        assert_eq!(back.to_bytes(), c.to_bytes());
        assert_eq!(back.model("model").unwrap(), m);
        assert_eq!(back.selection("sel").unwrap(), s);
        assert_eq!(back.frozen("frozen").unwrap(), f);
        let odd = back.tensor("odd").unwrap().as_slice().to_vec();
        assert_eq!(odd[0].to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn frozen_bitset_for_each_grain() {
        let mut s = selection();
        for grain in [Grain::Field, Grain::Value, Grain::Hybrid] {
            s.config.grain = grain;
            let f = freeze_selection(&s);
            let mut c = Container::new();
            c.put_frozen("f", &f);
            assert_eq!(c.frozen("f").unwrap().alpha_star, f.alpha_star);
        }
    }

    #[test]
    fn corruption_is_detected() {
        let mut c = Container::new();
        c.put_model("model", &model());
        let good = c.to_bytes();
        for at in [0, 9, good.len() / 2, good.len() - 1] {
            let mut bad = good.clone();
            bad[at] ^= 0x40;
            assert!(matches!(Container::from_bytes(&bad), Err(Error::Integrity(_))));
        }
        assert!(matches!(
            Container::from_bytes(&good[..good.len() - 5]),
            Err(Error::Integrity(_))
        ));
        assert!(matches!(c.tensor("nope"), Err(Error::Integrity(_))));
    }
}
