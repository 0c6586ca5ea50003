//! Versioned binary checkpoints.
//!
//! Layout (all little-endian):
//! magic "HETNETCK", u32 format version, u64 config hash, config JSON,
//! epoch counter, training RNG state, every parameter array in declared
//! order (name + shape + f64 data), then the Adam step counter and moment
//! arrays. Saving and loading is byte-exact, so resumed runs continue the
//! optimizer and RNG from the precise point they stopped at.

use std::fs;
use std::path::Path;

use crate::mat::Mat;

use super::HarnessError;

const MAGIC: &[u8; 8] = b"HETNETCK";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_hash: u64,
    pub config_json: String,
    pub epoch: u64,
    pub rng_seed: [u8; 32],
    pub rng_stream: u64,
    pub rng_word_pos: u128,
    pub params: Vec<(String, Mat)>,
    pub adam_t: u64,
    pub adam_m: Vec<Mat>,
    pub adam_v: Vec<Mat>,
}

/// FNV-1a over the canonical config JSON; stored in both checkpoint and
/// eval reports so mismatched pairs are refused loudly.
pub fn config_hash(json: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in json.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u128(&mut self, v: u128) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn bytes(&mut self, v: &[u8]) {
        self.u32(v.len() as u32);
        self.buf.extend_from_slice(v);
    }
    fn mat(&mut self, m: &Mat) {
        self.u32(m.rows() as u32);
        self.u32(m.cols() as u32);
        for v in m.as_slice() {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], HarnessError> {
        if self.pos + n > self.buf.len() {
            return Err(HarnessError::Checkpoint("truncated checkpoint".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32, HarnessError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, HarnessError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn u128(&mut self) -> Result<u128, HarnessError> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().unwrap()))
    }
    fn bytes(&mut self) -> Result<Vec<u8>, HarnessError> {
        let n = self.u32()? as usize;
        Ok(self.take(n)?.to_vec())
    }
    fn mat(&mut self) -> Result<Mat, HarnessError> {
        let rows = self.u32()? as usize;
        let cols = self.u32()? as usize;
        let raw = self.take(rows * cols * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Mat::from_vec(rows, cols, data))
    }
}

pub fn encode(ckpt: &Checkpoint) -> Vec<u8> {
    let mut w = Writer { buf: Vec::new() };
    w.buf.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.u64(ckpt.config_hash);
    w.bytes(ckpt.config_json.as_bytes());
    w.u64(ckpt.epoch);
    w.buf.extend_from_slice(&ckpt.rng_seed);
    w.u64(ckpt.rng_stream);
    w.u128(ckpt.rng_word_pos);
    w.u32(ckpt.params.len() as u32);
    for (name, mat) in &ckpt.params {
        w.bytes(name.as_bytes());
        w.mat(mat);
    }
    w.u64(ckpt.adam_t);
    for m in &ckpt.adam_m {
        w.mat(m);
    }
    for v in &ckpt.adam_v {
        w.mat(v);
    }
    w.buf
}

pub fn decode(buf: &[u8]) -> Result<Checkpoint, HarnessError> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(HarnessError::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(HarnessError::Checkpoint(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let config_hash = r.u64()?;
    let config_json = String::from_utf8(r.bytes()?)
        .map_err(|_| HarnessError::Checkpoint("config JSON is not UTF-8".into()))?;
    let epoch = r.u64()?;
    let rng_seed: [u8; 32] = r.take(32)?.try_into().unwrap();
    let rng_stream = r.u64()?;
    let rng_word_pos = r.u128()?;
    let n = r.u32()? as usize;
    let mut params = Vec::with_capacity(n);
    for _ in 0..n {
        let name = String::from_utf8(r.bytes()?)
            .map_err(|_| HarnessError::Checkpoint("param name is not UTF-8".into()))?;
        params.push((name, r.mat()?));
    }
    let adam_t = r.u64()?;
    let mut adam_m = Vec::with_capacity(n);
    for _ in 0..n {
        adam_m.push(r.mat()?);
    }
    let mut adam_v = Vec::with_capacity(n);
    for _ in 0..n {
        adam_v.push(r.mat()?);
    }
    if r.pos != buf.len() {
        return Err(HarnessError::Checkpoint("trailing bytes".into()));
    }
    Ok(Checkpoint {
        config_hash,
        config_json,
        epoch,
        rng_seed,
        rng_stream,
        rng_word_pos,
        params,
        adam_t,
        adam_m,
        adam_v,
    })
}

pub fn save(path: &Path, ckpt: &Checkpoint) -> Result<(), HarnessError> {
    fs::write(path, encode(ckpt))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint, HarnessError> {
    decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_decode_is_byte_exact() {
        let ckpt = Checkpoint {
            config_hash: config_hash("{\"a\":1}"),
            config_json: "{\"a\":1}".into(),
            epoch: 17,
            rng_seed: [7u8; 32],
            rng_stream: 3,
            rng_word_pos: 1234567890123,
            params: vec![
                ("w".into(), Mat::from_vec(2, 2, vec![0.1, -0.2, 1.0 / 3.0, f64::MIN_POSITIVE])),
                ("b".into(), Mat::from_vec(1, 3, vec![0.0, -0.0, 42.0])),
            ],
            adam_t: 5,
            adam_m: vec![Mat::zeros(2, 2), Mat::zeros(1, 3)],
            adam_v: vec![Mat::zeros(2, 2), Mat::zeros(1, 3)],
        };
        let bytes = encode(&ckpt);
        let back = decode(&bytes).unwrap();
        assert_eq!(encode(&back), bytes);
        assert_eq!(back.params[0].1.get(1, 0).to_bits(), (1.0f64 / 3.0).to_bits());
    }

    #[test]
    fn bad_magic_is_rejected() {
        assert!(matches!(
            decode(b"NOTACKPT"),
            Err(HarnessError::Checkpoint(_))
        ));
    }
}
