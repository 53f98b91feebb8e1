use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container;
use crate::diffcore::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"FSSLACTS";
pub const DUMP_FORMAT_VERSION: u32 = 1;

/// One layer's activations, `n × dim`, each row a window flattened time-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerActivations {
    pub name: String,
    pub dim: usize,
    pub data: Vec<f32>,
}

/// Activations of every layer of one model over an ordered set of windows,
/// with the windows' attribute segments for conditioning.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationDump {
    pub model: String,
    pub window_ids: Vec<u64>,
    pub attribute_names: Vec<String>,
    pub attributes: Vec<Vec<String>>,
    pub layers: Vec<LayerActivations>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: String,
    window_ids: Vec<u64>,
    attribute_names: Vec<String>,
    attributes: Vec<Vec<String>>,
    layers: Vec<(String, usize)>,
}

impl ActivationDump {
    pub fn new(
        model: impl Into<String>,
        window_ids: Vec<u64>,
        attribute_names: Vec<String>,
        attributes: Vec<Vec<String>>,
        layers: Vec<LayerActivations>,
    ) -> Result<Self> {
        let n = window_ids.len();
        if attribute_names.len() != attributes.len() || attributes.iter().any(|c| c.len() != n) {
            return Err(Error::Format("activation dump: attribute columns misaligned".into()));
        }
        for l in &layers {
            if l.dim == 0 || l.data.len() != n * l.dim {
                return Err(Error::Format(format!(
                    "activation dump: layer {} holds {} values, expected {n} x {}",
                    l.name,
                    l.data.len(),
                    l.dim
                )));
            }
        }
        Ok(ActivationDump {
            model: model.into(),
            window_ids,
            attribute_names,
            attributes,
            layers,
        })
    }

    pub fn len(&self) -> usize {
        self.window_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.window_ids.is_empty()
    }

    pub fn layer_names(&self) -> Vec<String> {
        self.layers.iter().map(|l| l.name.clone()).collect()
    }

    pub fn attribute(&self, name: &str) -> Result<&[String]> {
        self.attribute_names
            .iter()
            .position(|a| a == name)
            .map(|i| self.attributes[i].as_slice())
            .ok_or_else(|| Error::Config(format!("activation dump has no attribute {name:?}")))
    }

    /// Rows `rows` of layer `layer` as an `f64` matrix.
    pub fn matrix(&self, layer: usize, rows: &[usize]) -> Tensor<f64> {
        let l = &self.layers[layer];
        let mut data = Vec::with_capacity(rows.len() * l.dim);
        for &r in rows {
            data.extend(l.data[r * l.dim..(r + 1) * l.dim].iter().map(|&v| f64::from(v)));
        }
        Tensor::new(vec![rows.len(), l.dim], data).expect("dump matrix shape")
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            model: self.model.clone(),
            window_ids: self.window_ids.clone(),
            attribute_names: self.attribute_names.clone(),
            attributes: self.attributes.clone(),
            layers: self.layers.iter().map(|l| (l.name.clone(), l.dim)).collect(),
        };
        let blob = container::f32_bytes(self.layers.iter().flat_map(|l| l.data.iter().copied()));
        container::encode(MAGIC, DUMP_FORMAT_VERSION, &header, &blob)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (h, blob): (Header, _) = container::decode("activation dump", MAGIC, DUMP_FORMAT_VERSION, bytes)?;
        let values = container::read_f32s(blob)?;
        let n = h.window_ids.len();
        let expected: usize = h.layers.iter().map(|(_, d)| n * d).sum();
        if values.len() != expected {
            return Err(Error::CorruptData(format!(
                "activation dump holds {} values, header declares {expected}",
                values.len()
            )));
        }
        let mut offset = 0;
        let layers = h
            .layers
            .into_iter()
            .map(|(name, dim)| {
                let data = values[offset..offset + n * dim].to_vec();
                offset += n * dim;
                LayerActivations { name, dim, data }
            })
            .collect();
        ActivationDump::new(h.model, h.window_ids, h.attribute_names, h.attributes, layers)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dump = ActivationDump::new(
            "m",
            vec![4, 9],
            vec!["g".into()],
            vec![vec!["A".into(), "B".into()]],
            vec![
                LayerActivations { name: "conv1".into(), dim: 3, data: vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.5] },
                LayerActivations { name: "pool".into(), dim: 1, data: vec![-1.0, 0.25] },
            ],
        )
        .unwrap();
        let back = ActivationDump::from_bytes(&dump.to_bytes().unwrap()).unwrap();
        assert_eq!(back, dump);
        assert_eq!(back.matrix(0, &[1]).data(), &[4.0, 5.0, 6.5]);
    }

    #[test]
    fn misaligned_layer_is_rejected() {
        let err = ActivationDump::new(
            "m",
            vec![1, 2],
            vec![],
            vec![],
            vec![LayerActivations { name: "x".into(), dim: 2, data: vec![0.0; 3] }],
        )
        .unwrap_err();
        assert!(matches!(err, Error::Format(_)));
    }
}
