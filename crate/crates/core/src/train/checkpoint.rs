//! Binary checkpoints.
//!
//! Layout: the 8-byte magic `SNNDLY1\0`, a little-endian `u32` header
//! length, a JSON header describing the network and the array order, then
//! every array as little-endian `f32` values in header order. Parameters are
//! kept `f32`-representable during training, so a save/load round trip is
//! exact.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::delay::{DelayLattice, DelayVector};
use crate::error::{Error, Result};
use crate::quant::{ternary_threshold, QuantSpec};
use crate::train::engine::Prepared;
use crate::train::network::{Layer, Network, NeuronConfig};

pub const MAGIC: &[u8; 8] = b"SNNDLY1\0";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightForm {
    /// Full-precision latent weights; the quantizer runs on load.
    Latent,
    /// Weights already passed through the layer quantizer.
    Quantized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LayerHeader {
    n_in: usize,
    n_out: usize,
    scheme: String,
    lambda: f64,
    has_delays: bool,
    theta_d: Option<f64>,
    lattice_step: Option<f64>,
    lattice_levels: Option<u32>,
    lattice_learn_offset: bool,
    /// Ternary dead-zone threshold of the exported weights.
    ternary_threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ArrayHeader {
    name: String,
    len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    version: u32,
    weights: WeightForm,
    n_inputs: usize,
    n_steps: usize,
    neuron: NeuronConfig,
    layers: Vec<LayerHeader>,
    arrays: Vec<ArrayHeader>,
}

fn to_f32(v: f64) -> f32 {
    let x = v as f32;
    if x as f64 != v && v.is_finite() {
        log::debug!("parameter {v} is not f32-exact; stored rounded");
    }
    x
}

pub fn encode_checkpoint(net: &Network, form: WeightForm) -> Result<Vec<u8>> {
    net.validate()?;
    let prepared = match form {
        WeightForm::Quantized => Some(Prepared::new(net)?),
        WeightForm::Latent => None,
    };
    let mut layers = Vec::new();
    let mut arrays = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    for (l, layer) in net.layers.iter().enumerate() {
        let q = layer.quant.quantizer()?;
        let latent = layer.weights.as_standard_layout();
        let latent = latent.as_slice().expect("standard layout");
        let scheme = match form {
            WeightForm::Latent => layer.quant.scheme.clone(),
            WeightForm::Quantized => "full".into(),
        };
        layers.push(LayerHeader {
            n_in: layer.n_in(),
            n_out: layer.n_out(),
            scheme,
            lambda: layer.lambda,
            has_delays: layer.delays.is_some(),
            theta_d: layer.delays.as_ref().map(|d| d.theta_d).filter(|t| t.is_finite()),
            lattice_step: layer.lattice.as_ref().map(|lat| lat.step),
            lattice_levels: layer.lattice.as_ref().and_then(|lat| lat.n_levels),
            lattice_learn_offset: layer.lattice.as_ref().is_some_and(|lat| lat.learn_offset),
            ternary_threshold: q.is_ternary().then(|| ternary_threshold(latent)),
        });
        let mut push = |name: String, data: &[f64]| {
            arrays.push(ArrayHeader { name, len: data.len() });
            values.extend_from_slice(data);
        };
        match &prepared {
            Some(p) => push(format!("layer{l}.weights"), p.layers[l].weights.as_slice().expect("standard layout")),
            None => push(format!("layer{l}.weights"), latent),
        }
        if let Some(d) = &layer.delays {
            push(format!("layer{l}.delays"), &d.values);
        }
        push(format!("layer{l}.scales"), &[layer.quant.alpha, layer.quant.beta]);
        if let Some(lat) = &layer.lattice {
            push(format!("layer{l}.delay_offset"), &[lat.offset]);
        }
    }
    let header = Header {
        version: FORMAT_VERSION,
        weights: form,
        n_inputs: net.n_inputs,
        n_steps: net.n_steps,
        neuron: net.neuron,
        layers,
        arrays,
    };
    let header_bytes = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(12 + header_bytes.len() + 4 * values.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header_bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    for v in values {
        out.extend_from_slice(&to_f32(v).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Network> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(bad("missing SNNDLY1 magic"));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let body = bytes.get(12..12 + hlen).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(body).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    if header.version != FORMAT_VERSION {
        return Err(bad(&format!("unsupported version {}", header.version)));
    }
    let data = &bytes[12 + hlen..];
    let total: usize = header.arrays.iter().map(|a| a.len).sum();
    if data.len() != 4 * total {
        return Err(bad(&format!("expected {} bytes of parameters, found {}", 4 * total, data.len())));
    }
    let mut floats = data
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64);
    let mut arrays = header.arrays.iter();
    let mut take = |expected: &str, len: usize| -> Result<Vec<f64>> {
        let a = arrays.next().ok_or_else(|| bad("missing array"))?;
        if a.name != expected || a.len != len {
            return Err(bad(&format!("expected array {expected}[{len}], found {}[{}]", a.name, a.len)));
        }
        Ok(floats.by_ref().take(len).collect())
    };
    let mut layers = Vec::new();
    for (l, lh) in header.layers.iter().enumerate() {
        let w = take(&format!("layer{l}.weights"), lh.n_in * lh.n_out)?;
        let weights = Array2::from_shape_vec((lh.n_out, lh.n_in), w).map_err(|e| bad(&e.to_string()))?;
        let theta_d = lh.theta_d.unwrap_or(f64::INFINITY);
        let delays = if lh.has_delays {
            Some(DelayVector::new(take(&format!("layer{l}.delays"), lh.n_out)?, theta_d))
        } else {
            None
        };
        let scales = take(&format!("layer{l}.scales"), 2)?;
        let mut quant = QuantSpec::parse(&lh.scheme).map_err(|e| bad(&e.to_string()))?;
        quant.alpha = scales[0];
        quant.beta = scales[1];
        let lattice = match lh.lattice_step {
            Some(step) => {
                let off = take(&format!("layer{l}.delay_offset"), 1)?[0];
                Some(DelayLattice::new(off, step, lh.lattice_levels, lh.lattice_learn_offset).map_err(|e| bad(&e.to_string()))?)
            }
            None => None,
        };
        layers.push(Layer {
            weights,
            delays,
            lattice,
            quant,
            lambda: lh.lambda,
        });
    }
    let net = Network {
        n_inputs: header.n_inputs,
        n_steps: header.n_steps,
        neuron: header.neuron,
        layers,
    };
    net.validate().map_err(|e| bad(&e.to_string()))?;
    Ok(net)
}

pub fn save_checkpoint(path: &Path, net: &Network, form: WeightForm) -> Result<()> {
    let bytes = encode_checkpoint(net, form)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Network> {
    decode_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::delay::DelayLattice;
    use crate::train::network::NetworkSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net(wq: &str) -> Network {
        let spec = NetworkSpec {
            n_inputs: 5,
            hidden: vec![4, 3],
            n_classes: 2,
            n_steps: 30,
            weight_quant: wq.into(),
            lattice: Some(DelayLattice::new(1.0, 2.0, Some(8), true).unwrap()),
            theta_d: 25.0,
            lambda: vec![0.01, 0.02],
            ..NetworkSpec::default()
        };
        Network::init(&spec, &mut ChaCha8Rng::seed_from_u64(4)).unwrap()
    }

    #[test]
    fn exact_round_trip() {
        for wq in ["full", "m3", "ternary-learn"] {
            let n = net(wq);
            let bytes = encode_checkpoint(&n, WeightForm::Latent).unwrap();
            assert_eq!(&bytes[..8], MAGIC);
            let back = decode_checkpoint(&bytes).unwrap();
            assert_eq!(back, n);
            assert_eq!(encode_checkpoint(&back, WeightForm::Latent).unwrap(), bytes);
        }
    }

    #[test]
    fn quantized_form_matches_forward_weights() {
        let n = net("ternary");
        let back = decode_checkpoint(&encode_checkpoint(&n, WeightForm::Quantized).unwrap()).unwrap();
        let p = Prepared::new(&n).unwrap();
        for (l, layer) in back.layers.iter().enumerate() {
            assert_eq!(layer.quant.scheme, "full");
            assert_eq!(layer.weights, p.layers[l].weights);
        }
    }

    #[test]
    fn rejects_corruption() {
        let bytes = encode_checkpoint(&net("full"), WeightForm::Latent).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_checkpoint(&bad), Err(Error::Checkpoint(_))));
        assert!(decode_checkpoint(&bytes[..bytes.len() - 3]).is_err());
        assert!(decode_checkpoint(&bytes[..20]).is_err());
        let mut long = bytes.clone();
        long.extend_from_slice(&[0, 0, 0, 0]);
        assert!(decode_checkpoint(&long).is_err());
        assert!(decode_checkpoint(b"").is_err());
    }
}
