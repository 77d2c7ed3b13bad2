//! Binary model checkpoints.
//!
//! Layout (little-endian): magic `NACK`, version byte, precision byte
//! (0 = f32, 1 = f64), `u32` length of the JSON-encoded [`NetworkSpec`], the
//! spec, `u64` parameter count, then the parameters in canonical order.

use std::path::Path;

use crate::data::DataError;
use crate::nn::{LayeredNetwork, NetworkSpec, ParamVector};
use crate::{Error, Real, Result};

const MAGIC: &[u8; 4] = b"NACK";
const VERSION: u8 = 1;

fn precision_code<F: Real>() -> u8 {
    if F::NAME == "f32" {
        0
    } else {
        1
    }
}

pub fn to_bytes<F: Real>(net: &LayeredNetwork<F>) -> Result<Vec<u8>> {
    let spec = serde_json::to_vec(net.spec())?;
    let width = if precision_code::<F>() == 0 { 4 } else { 8 };
    let mut out = Vec::with_capacity(4 + 2 + 4 + spec.len() + 8 + net.params().len() * width);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(precision_code::<F>());
    out.extend_from_slice(&(spec.len() as u32).to_le_bytes());
    out.extend_from_slice(&spec);
    out.extend_from_slice(&(net.params().len() as u64).to_le_bytes());
    for &p in net.params().iter() {
        if width == 4 {
            out.extend_from_slice(&(p.as_f64() as f32).to_le_bytes());
        } else {
            out.extend_from_slice(&p.as_f64().to_le_bytes());
        }
    }
    Ok(out)
}

/// Parses a checkpoint, converting parameters to `F` if stored at another precision.
pub fn from_bytes<F: Real>(bytes: &[u8]) -> Result<LayeredNetwork<F>> {
    let truncated = |needed: usize| DataError::TruncatedHeader { needed, got: bytes.len() };
    if bytes.len() < 10 {
        return Err(truncated(10).into());
    }
    if &bytes[..4] != MAGIC || bytes[4] != VERSION {
        return Err(DataError::BadMagic(u32::from_be_bytes(bytes[..4].try_into().unwrap())).into());
    }
    let width = match bytes[5] {
        0 => 4,
        1 => 8,
        other => return Err(DataError::Malformed(format!("unknown precision code {other}")).into()),
    };
    let spec_len = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let spec_end = 10 + spec_len;
    if bytes.len() < spec_end + 8 {
        return Err(truncated(spec_end + 8).into());
    }
    let spec: NetworkSpec = serde_json::from_slice(&bytes[10..spec_end])?;
    spec.validate()?;
    let count = u64::from_le_bytes(bytes[spec_end..spec_end + 8].try_into().unwrap()) as usize;
    let payload = &bytes[spec_end + 8..];
    let expected = count * width;
    if payload.len() < expected {
        return Err(DataError::TruncatedPayload { expected, got: payload.len() }.into());
    }
    if payload.len() > expected {
        return Err(DataError::TrailingBytes(payload.len() - expected).into());
    }
    let params: Vec<F> = payload
        .chunks_exact(width)
        .map(|c| {
            if width == 4 {
                F::of(f32::from_le_bytes(c.try_into().unwrap()) as f64)
            } else {
                F::of(f64::from_le_bytes(c.try_into().unwrap()))
            }
        })
        .collect();
    LayeredNetwork::from_params(&spec, ParamVector(params))
}

pub fn save<F: Real>(net: &LayeredNetwork<F>, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(net)?)?;
    Ok(())
}

pub fn load<F: Real>(path: &Path) -> Result<LayeredNetwork<F>> {
    if !path.exists() {
        return Err(Error::Data(DataError::NotFound(path.to_path_buf())));
    }
    from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{build_network, OutputHead};

    #[test]
    fn round_trip_both_precisions() {
        let spec = NetworkSpec::new(vec![3, 5, 2], OutputHead::SoftmaxCeLogits, 4).unwrap();
        let a = build_network::<f32>(&spec).unwrap();
        assert_eq!(from_bytes::<f32>(&to_bytes(&a).unwrap()).unwrap(), a);
        let b = build_network::<f64>(&spec).unwrap();
        assert_eq!(from_bytes::<f64>(&to_bytes(&b).unwrap()).unwrap(), b);
        let widened = from_bytes::<f64>(&to_bytes(&a).unwrap()).unwrap();
        assert_eq!(widened.params().cast::<f32>(), *a.params());
    }

    #[test]
    fn rejects_corruption() {
        let spec = NetworkSpec::new(vec![2, 2], OutputHead::Linear, 0).unwrap();
        let bytes = to_bytes(&build_network::<f64>(&spec).unwrap()).unwrap();
        assert!(from_bytes::<f64>(&bytes[..bytes.len() - 3]).is_err());
        let mut extra = bytes.clone();
        extra.push(1);
        assert!(from_bytes::<f64>(&extra).is_err());
        assert!(from_bytes::<f64>(b"XXXX").is_err());
    }
}
