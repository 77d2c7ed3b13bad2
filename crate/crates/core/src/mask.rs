//! Gradient masks and pruning at initialization.
//!
//! A mask bit of 1 marks a trainable coordinate and 0 a frozen one. Masks are
//! sampled per layer (weights and biases of a layer together) with an exact
//! zero count of `floor(ratio * n_layer)`.

use std::io::{Read, Write};

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::nn::{LayeredNetwork, NetworkSpec, ParamVector};
use crate::{seed, Error, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    #[default]
    PerLayerExact,
}

/// How a mask was produced; stored in the binary sidecar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    Sampled,
    Reversed,
    Pruning,
}

impl MaskKind {
    fn code(self) -> u8 {
        match self {
            MaskKind::Sampled => 0,
            MaskKind::Reversed => 1,
            MaskKind::Pruning => 2,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(MaskKind::Sampled),
            1 => Some(MaskKind::Reversed),
            2 => Some(MaskKind::Pruning),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientMask {
    bits: Vec<bool>,
    ratio: f64,
    seed: u64,
    granularity: Granularity,
    kind: MaskKind,
    layout_fingerprint: u64,
}

fn check_ratio(ratio: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::config(format!("mask ratio must lie in [0, 1], got {ratio}")));
    }
    Ok(())
}

/// Zero positions in `0..n` with exactly `floor(ratio * n)` entries.
fn exact_zeros(n: usize, ratio: f64, rng: &mut seed::Rng) -> Vec<usize> {
    let k = ((ratio * n as f64).floor() as usize).min(n);
    index::sample(rng, n, k).into_vec()
}

/// Mask with exactly `floor(ratio * n_l)` zeros in every layer `l`.
pub fn sample_mask(spec: &NetworkSpec, ratio: f64, seed: u64) -> Result<GradientMask> {
    spec.validate()?;
    check_ratio(ratio)?;
    let mut bits = vec![true; spec.param_count()];
    let mut rng = seed::rng(seed);
    for layer in spec.layout() {
        let range = layer.param_range();
        for z in exact_zeros(range.len(), ratio, &mut rng) {
            bits[range.start + z] = false;
        }
    }
    Ok(GradientMask {
        bits,
        ratio,
        seed,
        granularity: Granularity::PerLayerExact,
        kind: MaskKind::Sampled,
        layout_fingerprint: spec.layout_fingerprint(),
    })
}

/// Bitwise complement; the ratio becomes `1 - observed ratio`.
pub fn reverse_mask(m: &GradientMask) -> GradientMask {
    let bits: Vec<bool> = m.bits.iter().map(|b| !b).collect();
    let mut out = GradientMask { bits, ..m.clone() };
    out.ratio = out.observed_ratio();
    out.kind = match m.kind {
        MaskKind::Reversed => MaskKind::Sampled,
        _ => MaskKind::Reversed,
    };
    out
}

/// Zeros exactly `floor(ratio * n_w)` weights per layer (biases untouched) and
/// returns the keep mask, whose 0 bits freeze the pruned weights at zero.
pub fn prune_at_init<F: Real>(
    net: &LayeredNetwork<F>,
    ratio: f64,
    seed: u64,
) -> Result<(LayeredNetwork<F>, GradientMask)> {
    check_ratio(ratio)?;
    let spec = net.spec();
    let mut bits = vec![true; spec.param_count()];
    let mut params = net.params().clone();
    let mut rng = seed::rng(seed);
    for layer in net.layout() {
        let range = layer.weight_range();
        for z in exact_zeros(range.len(), ratio, &mut rng) {
            bits[range.start + z] = false;
            params[range.start + z] = F::zero();
        }
    }
    let mask = GradientMask {
        bits,
        ratio,
        seed,
        granularity: Granularity::PerLayerExact,
        kind: MaskKind::Pruning,
        layout_fingerprint: spec.layout_fingerprint(),
    };
    Ok((net.with_params(params)?, mask))
}

/// Element-wise product `v * m`.
pub fn apply_mask<F: Real>(v: &ParamVector<F>, m: &GradientMask) -> Result<ParamVector<F>> {
    if v.len() != m.len() {
        return Err(Error::dimension(format!("vector length {} vs mask length {}", v.len(), m.len())));
    }
    Ok(ParamVector(
        v.iter()
            .zip(&m.bits)
            .map(|(&x, &b)| if b { x } else { F::zero() })
            .collect(),
    ))
}

const MAGIC: &[u8; 4] = b"NAMK";
const VERSION: u8 = 1;

impl GradientMask {
    /// All-ones mask (plain SGD) for `spec`.
    pub fn ones(spec: &NetworkSpec) -> Self {
        GradientMask {
            bits: vec![true; spec.param_count()],
            ratio: 0.0,
            seed: 0,
            granularity: Granularity::PerLayerExact,
            kind: MaskKind::Sampled,
            layout_fingerprint: spec.layout_fingerprint(),
        }
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Ratio requested at creation (or `1 - observed` after reversal).
    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn granularity(&self) -> Granularity {
        self.granularity
    }

    pub fn kind(&self) -> MaskKind {
        self.kind
    }

    pub fn layout_fingerprint(&self) -> u64 {
        self.layout_fingerprint
    }

    pub fn zeros(&self) -> usize {
        self.bits.iter().filter(|b| !**b).count()
    }

    /// Fraction of zero bits.
    pub fn observed_ratio(&self) -> f64 {
        if self.bits.is_empty() {
            0.0
        } else {
            self.zeros() as f64 / self.bits.len() as f64
        }
    }

    /// Whether this mask was built for `spec`'s layout.
    pub fn matches(&self, spec: &NetworkSpec) -> bool {
        self.layout_fingerprint == spec.layout_fingerprint() && self.bits.len() == spec.param_count()
    }

    /// Writes the binary sidecar: header then LSB-first packed bits.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&[VERSION, self.kind.code()])?;
        w.write_all(&self.layout_fingerprint.to_le_bytes())?;
        w.write_all(&self.ratio.to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&(self.bits.len() as u64).to_le_bytes())?;
        let mut packed = vec![0u8; self.bits.len().div_ceil(8)];
        for (i, &b) in self.bits.iter().enumerate() {
            if b {
                packed[i / 8] |= 1 << (i % 8);
            }
        }
        w.write_all(&packed)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        use crate::data::DataError;
        const HEADER: usize = 4 + 2 + 8 + 8 + 8 + 8;
        if bytes.len() < HEADER {
            return Err(DataError::TruncatedHeader {
                needed: HEADER,
                got: bytes.len(),
            }
            .into());
        }
        if &bytes[..4] != MAGIC || bytes[4] != VERSION {
            return Err(DataError::BadMagic(u32::from_be_bytes(bytes[..4].try_into().unwrap())).into());
        }
        let kind = MaskKind::from_code(bytes[5])
            .ok_or_else(|| DataError::Malformed(format!("unknown mask kind {}", bytes[5])))?;
        let word = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
        let layout_fingerprint = word(6);
        let ratio = f64::from_bits(word(14));
        let seed = word(22);
        let len = word(30) as usize;
        let payload = &bytes[HEADER..];
        let needed = len.div_ceil(8);
        if payload.len() < needed {
            return Err(DataError::TruncatedPayload {
                expected: needed,
                got: payload.len(),
            }
            .into());
        }
        if payload.len() > needed {
            return Err(DataError::TrailingBytes(payload.len() - needed).into());
        }
        let bits = (0..len).map(|i| payload[i / 8] >> (i % 8) & 1 == 1).collect();
        Ok(GradientMask {
            bits,
            ratio,
            seed,
            granularity: Granularity::PerLayerExact,
            kind,
            layout_fingerprint,
        })
    }
}
