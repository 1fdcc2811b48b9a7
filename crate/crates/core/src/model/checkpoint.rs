//! `SITM` checkpoint files.
//!
//! ```text
//! header     magic "SITM" | version u32 (=1) | d_in u32 | d u32 | k u32
//! params     adapter_w | adapter_b | head_w | head_b          (f32 each)
//! optimizer  step u64 | lr f32 | beta1 f32 | beta2 f32 | eps f32
//!            first moments (same four blocks) | second moments (same four blocks)
//! ```
//!
//! Everything is little-endian; values are narrowed to `f32` on write.

use std::fs;
use std::path::Path;

use crate::data::format::ByteReader;
use crate::error::{Error, Result};

use super::{Adam, AdamConfig, ModelParams};

pub const MAGIC: &[u8; 4] = b"SITM";
pub const VERSION: u32 = 1;

fn put_params(out: &mut Vec<u8>, p: &ModelParams) {
    for block in p.blocks() {
        for v in block {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
}

fn get_params(r: &mut ByteReader<'_>, d_in: usize, d: usize, k: usize) -> Result<ModelParams> {
    let mut p = ModelParams::zeros(d_in, d, k);
    for block in p.blocks_mut() {
        for v in block.iter_mut() {
            *v = f64::from(r.f32("parameter")?);
        }
    }
    Ok(p)
}

pub fn encode(params: &ModelParams, opt: &Adam) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + 12 * params.num_params() + 24);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for dim in [params.d_in, params.d, params.k] {
        out.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    put_params(&mut out, params);
    out.extend_from_slice(&opt.step.to_le_bytes());
    let c = opt.config;
    for v in [c.lr, c.beta1, c.beta2, c.eps] {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    put_params(&mut out, &opt.m);
    put_params(&mut out, &opt.v);
    out
}

pub fn decode(bytes: &[u8]) -> Result<(ModelParams, Adam)> {
    let mut r = ByteReader::new(bytes);
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::format(0, "bad magic, expected \"SITM\""));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported checkpoint version {version}")));
    }
    let d_in = r.u32("d_in")? as usize;
    let d = r.u32("d")? as usize;
    let k = r.u32("k")? as usize;
    let params = get_params(&mut r, d_in, d, k)?;
    let step = r.u64("optimizer step")?;
    let config = AdamConfig {
        lr: f64::from(r.f32("lr")?),
        beta1: f64::from(r.f32("beta1")?),
        beta2: f64::from(r.f32("beta2")?),
        eps: f64::from(r.f32("eps")?),
    };
    let m = get_params(&mut r, d_in, d, k)?;
    let v = get_params(&mut r, d_in, d, k)?;
    if r.remaining() != 0 {
        return Err(Error::format(r.offset(), format!("{} trailing bytes", r.remaining())));
    }
    Ok((params, Adam { config, step, m, v }))
}

pub fn write_checkpoint(path: impl AsRef<Path>, params: &ModelParams, opt: &Adam) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(params, opt)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<(ModelParams, Adam)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_at_f32_precision() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = ModelParams::init(3, 4, 2, &mut rng);
        let mut opt = Adam::new(&p, AdamConfig::default());
        let g = p.clone();
        opt.step(&mut p, &g).unwrap();
        let bytes = encode(&p, &opt);
        assert_eq!(&bytes[..4], b"SITM");
        assert_eq!(&bytes[8..12], &3u32.to_le_bytes());
        let (p2, opt2) = decode(&bytes).unwrap();
        assert_eq!(opt2.step, 1);
        for (a, b) in p.blocks().iter().zip(p2.blocks()) {
            for (x, y) in a.iter().zip(b) {
                assert_eq!((*x as f32) as f64, *y);
            }
        }
        assert_eq!(opt2.config.lr, f64::from(5e-4f32));
        // a second pass is exact
        assert_eq!(encode(&p2, &opt2), bytes);
    }

    #[test]
    fn truncation_is_reported() {
        let p = ModelParams::zeros(2, 2, 2);
        let opt = Adam::new(&p, AdamConfig::default());
        let bytes = encode(&p, &opt);
        assert!(matches!(decode(&bytes[..bytes.len() - 1]), Err(Error::Format { .. })));
    }
}
