use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diffcore::Padding;
use crate::error::{Error, Result};

/// Window geometry: timesteps × channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Geometry {
    pub timesteps: usize,
    pub channels: usize,
}

impl Geometry {
    pub fn new(timesteps: usize, channels: usize) -> Self {
        Geometry { timesteps, channels }
    }
}

/// Three temporal convolutions (ReLU, dropout) followed by global max pooling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderSpec {
    pub kernel_sizes: [usize; 3],
    pub filters: [usize; 3],
    pub dropout: f64,
    #[serde(default)]
    pub padding: Padding,
}

impl Default for EncoderSpec {
    fn default() -> Self {
        EncoderSpec {
            kernel_sizes: [24, 16, 8],
            filters: [32, 64, 96],
            dropout: 0.1,
            padding: Padding::Valid,
        }
    }
}

impl EncoderSpec {
    pub fn validate(&self) -> Result<()> {
        if self.kernel_sizes.contains(&0) || self.filters.contains(&0) {
            return Err(Error::Config("encoder kernel sizes and filter counts must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("encoder dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Shortest window the kernel chain accepts.
    pub fn min_timesteps(&self) -> usize {
        match self.padding {
            Padding::Valid => self.kernel_sizes.iter().sum::<usize>() - 2,
            Padding::Same => 1,
        }
    }

    /// Time length after each convolution.
    pub fn temporal_lengths(&self, timesteps: usize) -> Option<[usize; 3]> {
        let mut t = timesteps;
        let mut out = [0; 3];
        for (slot, &k) in out.iter_mut().zip(&self.kernel_sizes) {
            t = self.padding.output_len(t, k).filter(|&v| v > 0)?;
            *slot = t;
        }
        Some(out)
    }

    pub fn representation_dim(&self) -> usize {
        self.filters[2]
    }

    pub fn check_geometry(&self, geometry: Geometry) -> Result<()> {
        if geometry.channels == 0 {
            return Err(Error::Config("window needs at least one channel".into()));
        }
        if self.temporal_lengths(geometry.timesteps).is_none() {
            return Err(Error::Config(format!(
                "window of {} timesteps is too short for kernels {:?}: need at least {}",
                geometry.timesteps,
                self.kernel_sizes,
                self.min_timesteps()
            )));
        }
        Ok(())
    }

    /// Content hash of the encoder architecture for a given input geometry.
    pub fn architecture_hash(&self, geometry: Geometry) -> String {
        #[derive(Serialize)]
        struct Canon<'a> {
            encoder: &'a EncoderSpec,
            geometry: Geometry,
        }
        let bytes = serde_json::to_vec(&Canon { encoder: self, geometry }).expect("serializable");
        hex::encode(Sha256::digest(&bytes))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    Projection,
    Classification,
}

/// Dense head on top of the pooled representation; ReLU between layers,
/// linear output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadSpec {
    pub kind: HeadKind,
    pub input_width: usize,
    pub widths: Vec<usize>,
}

pub const NUM_CLASSES: usize = 2;

impl HeadSpec {
    pub fn projection() -> Self {
        HeadSpec {
            kind: HeadKind::Projection,
            input_width: 96,
            widths: vec![256, 128, 50],
        }
    }

    pub fn classification() -> Self {
        HeadSpec {
            kind: HeadKind::Classification,
            input_width: 96,
            widths: vec![128, NUM_CLASSES],
        }
    }

    pub fn with_input_width(mut self, width: usize) -> Self {
        self.input_width = width;
        self
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().expect("validated head has layers")
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.contains(&0) || self.input_width == 0 {
            return Err(Error::Config("head widths must be positive".into()));
        }
        match self.kind {
            HeadKind::Projection if self.widths.len() != 3 => Err(Error::Config(format!(
                "projection head needs 3 dense layers, got {}",
                self.widths.len()
            ))),
            HeadKind::Classification if self.widths.len() != 2 => Err(Error::Config(format!(
                "classification head needs 2 dense layers, got {}",
                self.widths.len()
            ))),
            HeadKind::Classification if self.output_dim() != NUM_CLASSES => Err(Error::Config(format!(
                "classification head must end in {NUM_CLASSES} units, got {}",
                self.output_dim()
            ))),
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn temporal_lengths_follow_valid_convolution() {
        let spec = EncoderSpec::default();
        assert_eq!(spec.temporal_lengths(48), Some([25, 10, 3]));
        assert_eq!(spec.temporal_lengths(47), Some([24, 9, 2]));
        assert_eq!(spec.temporal_lengths(30), None);
        assert_eq!(spec.min_timesteps(), 46);
        assert!(spec.temporal_lengths(46).is_some());
        assert!(spec.temporal_lengths(45).is_none());
    }

    #[test]
    fn short_geometry_error_names_minimum() {
        let err = EncoderSpec::default().check_geometry(Geometry::new(30, 76)).unwrap_err();
        assert!(err.to_string().contains("at least 46"), "{err}");
    }

    #[test]
    fn head_shapes() {
        assert_eq!(HeadSpec::projection().output_dim(), 50);
        assert_eq!(HeadSpec::classification().output_dim(), 2);
        let bad = HeadSpec {
            kind: HeadKind::Classification,
            input_width: 96,
            widths: vec![128, 3],
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn hash_depends_on_geometry() {
        let spec = EncoderSpec::default();
        assert_eq!(spec.architecture_hash(Geometry::new(48, 8)), spec.architecture_hash(Geometry::new(48, 8)));
        assert_ne!(spec.architecture_hash(Geometry::new(48, 8)), spec.architecture_hash(Geometry::new(48, 76)));
    }
}
