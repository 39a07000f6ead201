//! Sparse autoencoder weights, encoding and decoding.
//!
//! The encoder computes `σ(W_enc·x + b_enc)` for a hidden-state vector `x` and
//! returns only the strictly positive latents. The decoder reconstructs
//! `W_dec·a + b_dec` by sparse accumulation over the active latents.
//!
//! `BatchTopK` is evaluated per token and behaves exactly like `TopK`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binio::{f32s_from_le, write_f32s, OffsetReader};
use crate::error::{Error, Result};

const WEIGHTS_MAGIC: &[u8; 4] = b"SAEW";
const WEIGHTS_VERSION: u32 = 1;
const TENSOR_ORDER: [&str; 4] = ["w_enc", "b_enc", "w_dec", "b_dec"];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ActivationKind {
    #[default]
    Relu,
    Topk {
        k: usize,
    },
    Batchtopk {
        k: usize,
    },
}

impl ActivationKind {
    fn top_k(&self) -> Option<usize> {
        match *self {
            ActivationKind::Relu => None,
            ActivationKind::Topk { k } | ActivationKind::Batchtopk { k } => Some(k),
        }
    }
}

/// One token's sparse code: `(latent_id, value)` pairs with strictly
/// increasing ids and strictly positive values.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TokenActivationRecord {
    pub token_index: u32,
    pub entries: Vec<(u32, f32)>,
}

impl TokenActivationRecord {
    pub fn new(token_index: u32, entries: Vec<(u32, f32)>) -> Result<Self> {
        let rec = Self { token_index, entries };
        rec.validate(None)?;
        Ok(rec)
    }

    /// Checks id ordering, positivity and (optionally) the id bound.
    pub fn validate(&self, d_sae: Option<u32>) -> Result<()> {
        let mut prev: Option<u32> = None;
        for &(id, v) in &self.entries {
            if let Some(p) = prev {
                if id <= p {
                    return Err(Error::invalid(format!(
                        "token {}: latent ids not strictly increasing ({p} then {id})",
                        self.token_index
                    )));
                }
            }
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!(
                    "token {}: latent {id} has non-positive or non-finite value {v}",
                    self.token_index
                )));
            }
            if let Some(d) = d_sae {
                if id >= d {
                    return Err(Error::LatentOutOfRange(id));
                }
            }
            prev = Some(id);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaeWeights {
    pub d_model: usize,
    pub d_sae: usize,
    /// `d_sae` rows of `d_model`, row-major.
    pub w_enc: Vec<f32>,
    pub b_enc: Vec<f32>,
    /// `d_model` rows of `d_sae`, row-major.
    pub w_dec: Vec<f32>,
    pub b_dec: Vec<f32>,
    pub activation: ActivationKind,
}

#[derive(Debug, Serialize, Deserialize)]
struct WeightsHeader {
    d_model: usize,
    d_sae: usize,
    activation: ActivationKind,
    tensors: Vec<String>,
}

impl SaeWeights {
    pub fn new(
        d_model: usize,
        d_sae: usize,
        w_enc: Vec<f32>,
        b_enc: Vec<f32>,
        w_dec: Vec<f32>,
        b_dec: Vec<f32>,
        activation: ActivationKind,
    ) -> Result<Self> {
        let w = Self {
            d_model,
            d_sae,
            w_enc,
            b_enc,
            w_dec,
            b_dec,
            activation,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.d_sae == 0 {
            return Err(Error::Dimension("d_model and d_sae must be positive".into()));
        }
        let expected = [
            ("w_enc", self.w_enc.len(), self.d_sae * self.d_model),
            ("b_enc", self.b_enc.len(), self.d_sae),
            ("w_dec", self.w_dec.len(), self.d_model * self.d_sae),
            ("b_dec", self.b_dec.len(), self.d_model),
        ];
        for (name, got, want) in expected {
            if got != want {
                return Err(Error::Tensor {
                    tensor: name.into(),
                    message: format!("tensor length mismatch: {got} values, expected {want}"),
                });
            }
        }
        for (name, t) in self.tensors() {
            if let Some(pos) = t.iter().position(|v| !v.is_finite()) {
                return Err(Error::Tensor {
                    tensor: name.into(),
                    message: format!("non-finite value at index {pos}"),
                });
            }
        }
        if let Some(0) = self.activation.top_k() {
            return Err(Error::invalid("top-k activation requires k >= 1"));
        }
        if self.d_sae < self.d_model {
            log::warn!(
                "dictionary is not overcomplete: d_sae={} < d_model={}",
                self.d_sae,
                self.d_model
            );
        }
        Ok(())
    }

    fn tensors(&self) -> [(&'static str, &[f32]); 4] {
        [
            ("w_enc", &self.w_enc),
            ("b_enc", &self.b_enc),
            ("w_dec", &self.w_dec),
            ("b_dec", &self.b_dec),
        ]
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(file))
    }

    pub fn read_from<R: Read>(reader: R) -> Result<Self> {
        let mut r = OffsetReader::new(reader);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic, "magic")?;
        if &magic != WEIGHTS_MAGIC {
            return Err(r.error("bad magic, expected SAEW"));
        }
        let version = r.u32("version")?;
        if version != WEIGHTS_VERSION {
            return Err(r.error(format!("unsupported version {version}")));
        }
        let header_len = r.u32("header length")? as usize;
        let mut header_bytes = vec![0u8; header_len];
        r.read_exact(&mut header_bytes, "header")?;
        let header: WeightsHeader =
            serde_json::from_slice(&header_bytes).map_err(|e| r.error(format!("malformed header: {e}")))?;
        if header.tensors != TENSOR_ORDER {
            return Err(r.error(format!(
                "malformed header: tensor order {:?}, expected {:?}",
                header.tensors, TENSOR_ORDER
            )));
        }
        if header.d_model == 0 || header.d_sae == 0 {
            return Err(r.error("malformed header: zero dimension"));
        }
        let sizes = [
            header.d_sae * header.d_model,
            header.d_sae,
            header.d_model * header.d_sae,
            header.d_model,
        ];
        let mut tensors = Vec::with_capacity(4);
        for (name, n) in TENSOR_ORDER.iter().zip(sizes) {
            let mut buf = vec![0u8; n * 4];
            r.read_exact(&mut buf, name).map_err(|_| Error::Tensor {
                tensor: (*name).into(),
                message: format!("tensor length mismatch: expected {} bytes", n * 4),
            })?;
            tensors.push(f32s_from_le(&buf));
        }
        let mut extra = [0u8; 1];
        if r.try_fill(&mut extra)? != 0 {
            return Err(Error::Tensor {
                tensor: "b_dec".into(),
                message: "tensor length mismatch: trailing bytes after last tensor".into(),
            });
        }
        let b_dec = tensors.pop().unwrap();
        let w_dec = tensors.pop().unwrap();
        let b_enc = tensors.pop().unwrap();
        let w_enc = tensors.pop().unwrap();
        Self::new(
            header.d_model,
            header.d_sae,
            w_enc,
            b_enc,
            w_dec,
            b_dec,
            header.activation,
        )
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        let header = WeightsHeader {
            d_model: self.d_model,
            d_sae: self.d_sae,
            activation: self.activation,
            tensors: TENSOR_ORDER.iter().map(|s| s.to_string()).collect(),
        };
        let header = serde_json::to_vec(&header)?;
        w.write_all(WEIGHTS_MAGIC)?;
        w.write_all(&WEIGHTS_VERSION.to_le_bytes())?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(&header)?;
        for (_, t) in self.tensors() {
            write_f32s(w, t)?;
        }
        Ok(())
    }

    /// Pre-activations `W_enc·x + b_enc`, accumulated in f64.
    fn pre_activations(&self, x: &[f32]) -> Result<Vec<f64>> {
        if x.len() != self.d_model {
            return Err(Error::Dimension(format!(
                "input has {} values, d_model is {}",
                x.len(),
                self.d_model
            )));
        }
        if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite input at index {pos}")));
        }
        Ok(self
            .w_enc
            .chunks_exact(self.d_model)
            .zip(&self.b_enc)
            .map(|(row, &b)| row.iter().zip(x).map(|(&w, &xi)| w as f64 * xi as f64).sum::<f64>() + b as f64)
            .collect())
    }

    pub fn encode(&self, x: &[f32]) -> Result<TokenActivationRecord> {
        self.encode_token(0, x)
    }

    pub fn encode_token(&self, token_index: u32, x: &[f32]) -> Result<TokenActivationRecord> {
        let pre = self.pre_activations(x)?;
        let mut active: Vec<(u32, f64)> = pre
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > 0.0)
            .map(|(i, &v)| (i as u32, v))
            .collect();
        if let Some(k) = self.activation.top_k() {
            if active.len() > k {
                // Largest first, lower id wins ties.
                active.select_nth_unstable_by(k - 1, |a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
                active.truncate(k);
                active.sort_unstable_by_key(|e| e.0);
            }
        }
        let entries = active
            .into_iter()
            .map(|(i, v)| (i, v as f32))
            // f64 -> f32 can underflow to 0 for tiny positives
            .filter(|&(_, v)| v > 0.0)
            .collect();
        Ok(TokenActivationRecord { token_index, entries })
    }

    pub fn decode(&self, code: &TokenActivationRecord) -> Result<Vec<f32>> {
        Ok(self.decode_f64(code)?.into_iter().map(|v| v as f32).collect())
    }

    fn decode_f64(&self, code: &TokenActivationRecord) -> Result<Vec<f64>> {
        if let Some(&(id, _)) = code.entries.iter().find(|(id, _)| *id as usize >= self.d_sae) {
            return Err(Error::LatentOutOfRange(id));
        }
        let mut out: Vec<f64> = self.b_dec.iter().map(|&b| b as f64).collect();
        for (r, o) in out.iter_mut().enumerate() {
            let row = &self.w_dec[r * self.d_sae..(r + 1) * self.d_sae];
            for &(j, a) in &code.entries {
                *o += row[j as usize] as f64 * a as f64;
            }
        }
        Ok(out)
    }

    /// `‖x − decode(encode(x))‖₂`.
    pub fn reconstruction_error(&self, x: &[f32]) -> Result<f64> {
        let code = self.encode(x)?;
        let x_hat = self.decode_f64(&code)?;
        Ok(x.iter()
            .zip(&x_hat)
            .map(|(&a, &b)| (a as f64 - b).powi(2))
            .sum::<f64>()
            .sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn identity(d: usize, act: ActivationKind) -> SaeWeights {
        let mut eye = vec![0.0; d * d];
        for i in 0..d {
            eye[i * d + i] = 1.0;
        }
        SaeWeights::new(d, d, eye.clone(), vec![0.0; d], eye, vec![0.0; d], act).unwrap()
    }

    fn random_weights(rng: &mut ChaCha8Rng, d_model: usize, d_sae: usize) -> SaeWeights {
        let mut v = |n: usize| (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect::<Vec<_>>();
        SaeWeights::new(
            d_model,
            d_sae,
            v(d_sae * d_model),
            v(d_sae),
            v(d_model * d_sae),
            v(d_model),
            ActivationKind::Relu,
        )
        .unwrap()
    }

    #[test]
    fn identity_relu() {
        let w = identity(3, ActivationKind::Relu);
        let rec = w.encode(&[1.0, -2.0, 3.0]).unwrap();
        assert_eq!(rec.entries, vec![(0, 1.0), (2, 3.0)]);
    }

    #[test]
    fn identity_topk_one() {
        let w = identity(3, ActivationKind::Topk { k: 1 });
        let rec = w.encode(&[1.0, -2.0, 3.0]).unwrap();
        assert_eq!(rec.entries, vec![(2, 3.0)]);
    }

    #[test]
    fn topk_ties_prefer_lower_id() {
        let w = identity(4, ActivationKind::Topk { k: 2 });
        let rec = w.encode(&[2.0, 2.0, 1.0, 2.0]).unwrap();
        assert_eq!(rec.entries, vec![(0, 2.0), (1, 2.0)]);
    }

    #[test]
    fn batchtopk_matches_topk_per_token() {
        let a = identity(5, ActivationKind::Topk { k: 2 });
        let b = identity(5, ActivationKind::Batchtopk { k: 2 });
        let x = [0.5, 3.0, -1.0, 2.0, 0.1];
        assert_eq!(a.encode(&x).unwrap(), b.encode(&x).unwrap());
    }

    #[test]
    fn encode_rejects_bad_input() {
        let w = identity(3, ActivationKind::Relu);
        assert!(matches!(w.encode(&[1.0, 2.0]), Err(Error::Dimension(_))));
        assert!(w.encode(&[1.0, f32::NAN, 0.0]).is_err());
    }

    #[test]
    fn decode_empty_is_bias() {
        let mut w = identity(3, ActivationKind::Relu);
        w.b_dec = vec![0.5, -1.0, 2.0];
        let out = w.decode(&TokenActivationRecord::default()).unwrap();
        assert_eq!(out, vec![0.5, -1.0, 2.0]);
    }

    #[test]
    fn decode_unit_code_is_column() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut w = random_weights(&mut rng, 4, 9);
        w.b_dec = vec![0.0; 4];
        let out = w
            .decode(&TokenActivationRecord::new(0, vec![(6, 1.0)]).unwrap())
            .unwrap();
        let column: Vec<f32> = (0..4).map(|r| w.w_dec[r * 9 + 6]).collect();
        assert_eq!(out, column);
    }

    #[test]
    fn decode_out_of_range() {
        let w = identity(3, ActivationKind::Relu);
        let code = TokenActivationRecord {
            token_index: 0,
            entries: vec![(3, 1.0)],
        };
        assert!(matches!(w.decode(&code), Err(Error::LatentOutOfRange(3))));
    }

    #[test]
    fn reconstruction_exact_on_positive_orthant() {
        // identity encoder/decoder reconstructs any non-negative input exactly
        let w = identity(4, ActivationKind::Relu);
        assert!(w.reconstruction_error(&[0.0, 1.5, 2.0, 0.25]).unwrap() < 1e-9);
    }

    #[test]
    fn reconstruction_of_bias_with_empty_code() {
        let d = 3;
        let w = SaeWeights::new(
            d,
            4,
            vec![0.0; 4 * d],
            vec![-1.0; 4],
            vec![1.0; d * 4],
            vec![0.3, -0.2, 0.9],
            ActivationKind::Relu,
        )
        .unwrap();
        assert_eq!(w.reconstruction_error(&[0.3, -0.2, 0.9]).unwrap(), 0.0);
    }

    #[test]
    fn round_trip_container() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut w = random_weights(&mut rng, 8, 32);
        w.activation = ActivationKind::Topk { k: 4 };
        let mut buf = Vec::new();
        w.write_to(&mut buf).unwrap();
        let back = SaeWeights::read_from(&buf[..]).unwrap();
        assert_eq!(back.d_model, 8);
        assert_eq!(back.d_sae, 32);
        assert_eq!(back.activation, ActivationKind::Topk { k: 4 });
        for ((_, a), (_, b)) in w.tensors().iter().zip(back.tensors().iter()) {
            let a: Vec<u32> = a.iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = b.iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn truncated_tensor_reports_length_mismatch() {
        let w = identity(8, ActivationKind::Relu);
        let mut buf = Vec::new();
        w.write_to(&mut buf).unwrap();
        // cut into the middle of w_dec
        buf.truncate(buf.len() - 8 * 4 - 10);
        let err = SaeWeights::read_from(&buf[..]).unwrap_err().to_string();
        assert!(err.contains("tensor length mismatch"), "{err}");
        assert!(err.contains("w_dec"), "{err}");
    }

    #[test]
    fn non_finite_tensor_named() {
        let mut w = identity(3, ActivationKind::Relu);
        w.b_enc[1] = f32::INFINITY;
        let mut buf = Vec::new();
        w.write_to(&mut buf).unwrap();
        let err = SaeWeights::read_from(&buf[..]).unwrap_err().to_string();
        assert!(err.contains("b_enc") && err.contains("non-finite"), "{err}");
    }

    #[test]
    fn malformed_header_rejected() {
        let mut buf = Vec::new();
        buf.extend_from_slice(b"SAEW");
        buf.extend_from_slice(&1u32.to_le_bytes());
        buf.extend_from_slice(&3u32.to_le_bytes());
        buf.extend_from_slice(b"{x}");
        let err = SaeWeights::read_from(&buf[..]).unwrap_err().to_string();
        assert!(err.contains("malformed header"), "{err}");
    }

    proptest! {
        #[test]
        fn relu_positive_homogeneity(seed in 0u64..1000, c in 0.1f32..10.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut w = random_weights(&mut rng, 6, 20);
            w.b_enc = vec![0.0; 20];
            let x: Vec<f32> = (0..6).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            let cx: Vec<f32> = x.iter().map(|v| v * c).collect();
            let a = w.encode(&x).unwrap();
            let b = w.encode(&cx).unwrap();
            let ids_a: Vec<u32> = a.entries.iter().map(|e| e.0).collect();
            let ids_b: Vec<u32> = b.entries.iter().map(|e| e.0).collect();
            prop_assert_eq!(ids_a, ids_b);
            for (&(_, va), &(_, vb)) in a.entries.iter().zip(&b.entries) {
                prop_assert!(((va * c) - vb).abs() <= 1e-4 * vb.abs().max(1.0));
            }
        }

        #[test]
        fn topk_cardinality(seed in 0u64..1000, k in 1usize..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut w = random_weights(&mut rng, 5, 24);
            w.activation = ActivationKind::Topk { k };
            let x: Vec<f32> = (0..5).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            let positives = w.pre_activations(&x).unwrap().iter().filter(|v| **v > 0.0).count();
            let rec = w.encode(&x).unwrap();
            prop_assert_eq!(rec.entries.len(), positives.min(k));
        }

        #[test]
        fn decode_encode_deterministic(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = random_weights(&mut rng, 5, 12);
            let x: Vec<f32> = (0..5).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            let a = w.decode(&w.encode(&x).unwrap()).unwrap();
            let b = w.decode(&w.encode(&x).unwrap()).unwrap();
            prop_assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }
    }
}
