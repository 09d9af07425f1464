//! Parameter snapshots.
//!
//! Layout: an 8-byte little-endian `u64` header length `H`, `H` bytes of
//! UTF-8 JSON header, then every tensor of [`ModelParams::layout`] as
//! little-endian `f64`, in order and without padding.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{ModelParams, ModelSpec, TensorInfo};
use crate::error::{Error, Result};

const FORMAT: &str = "fedp3e-params";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    spec: ModelSpec,
    tensors: Vec<TensorInfo>,
}

impl ModelParams {
    pub fn write_snapshot<W: Write>(&self, mut w: W) -> Result<()> {
        let header = Header {
            format: FORMAT.into(),
            version: VERSION,
            spec: self.spec.clone(),
            tensors: self.layout(),
        };
        let json = serde_json::to_vec(&header)?;
        let io = |e| Error::Serde(format!("snapshot write: {e}"));
        w.write_all(&(json.len() as u64).to_le_bytes()).map_err(io)?;
        w.write_all(&json).map_err(io)?;
        for t in self.tensors() {
            for v in t {
                w.write_all(&v.to_le_bytes()).map_err(io)?;
            }
        }
        Ok(())
    }

    pub fn to_snapshot_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_snapshot(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_snapshot<R: Read>(mut r: R) -> Result<Self> {
        let io = |e: std::io::Error| Error::Serde(format!("snapshot read: {e}"));
        let mut len = [0u8; 8];
        r.read_exact(&mut len).map_err(io)?;
        let len = u64::from_le_bytes(len) as usize;
        let mut json = vec![0u8; len];
        r.read_exact(&mut json).map_err(io)?;
        let header: Header = serde_json::from_slice(&json)?;
        if header.format != FORMAT || header.version != VERSION {
            return Err(Error::Serde(format!(
                "unsupported snapshot {} v{}",
                header.format, header.version
            )));
        }
        header.spec.validate()?;
        let mut params = ModelParams::zeros(&header.spec);
        if params.layout() != header.tensors {
            return Err(Error::Serde("snapshot tensor table does not match its model spec".into()));
        }
        let mut buf = [0u8; 8];
        for t in params.tensors_mut() {
            for v in t.iter_mut() {
                r.read_exact(&mut buf).map_err(io)?;
                *v = f64::from_le_bytes(buf);
            }
        }
        Ok(params)
    }
}

#[cfg(test)]
mod tests {
    use crate::neuralnet::{build_model, ModelParams, ModelSpec};

    #[test]
    fn round_trip_is_bit_exact() {
        let mut p = build_model(&ModelSpec::new(7, &[(5, 0.01), (3, 0.0)], 0.2, 4), 12).unwrap();
        p.hidden[1].bn.running_mean.fill(-0.25);
        let bytes = p.to_snapshot_bytes();
        let back = ModelParams::read_snapshot(bytes.as_slice()).unwrap();
        assert_eq!(p, back);
    }

    #[test]
    fn payload_is_flat_f64() {
        let p = build_model(&ModelSpec::new(2, &[(3, 0.0)], 0.0, 2), 1).unwrap();
        let bytes = p.to_snapshot_bytes();
        let header_len = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
        let scalars: usize = p.tensors().iter().map(|t| t.len()).sum();
        assert_eq!(bytes.len(), 8 + header_len + 8 * scalars);
        let first = f64::from_le_bytes(bytes[8 + header_len..16 + header_len].try_into().unwrap());
        assert_eq!(first, p.hidden[0].dense.weight[[0, 0]]);
    }

    #[test]
    fn truncated_snapshot_fails() {
        let p = build_model(&ModelSpec::new(2, &[(3, 0.0)], 0.0, 2), 1).unwrap();
        let bytes = p.to_snapshot_bytes();
        assert!(ModelParams::read_snapshot(&bytes[..bytes.len() - 4]).is_err());
    }
}
