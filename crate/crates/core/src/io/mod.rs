//! Stereo file formats and synthetic data.

pub mod pfm;
pub mod png16;
pub mod pnm;
pub mod synth;

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use pfm::{read_pfm, read_pfm_image, write_pfm, write_pfm_image};
pub use png16::{read_png16, write_png16};
pub use pnm::{read_image, read_pnm, write_pnm};
pub use synth::{synth_pair, DisparityField, SynthPair, SynthSpec, Texture};

/// Write `bytes` to `path` through a temporary file in the same directory
/// followed by a rename, so readers never observe a partial file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// Disparity in pixels with a validity flag per pixel. Invalid pixels hold 0.
#[derive(Clone, Debug, PartialEq)]
pub struct DisparityMap {
    /// `H×W`.
    pub values: Tensor,
    pub valid: Vec<bool>,
}

impl DisparityMap {
    pub fn new(values: Tensor, valid: Vec<bool>) -> Result<Self> {
        if values.ndim() != 2 || values.len() != valid.len() {
            return Err(Error::dim(format!(
                "disparity map needs an HxW tensor and one flag per pixel, got {:?} and {}",
                values.shape(),
                valid.len()
            )));
        }
        let mut values = values;
        for (v, &ok) in values.data_mut().iter_mut().zip(&valid) {
            if !ok {
                *v = 0.0;
            }
        }
        Ok(DisparityMap { values, valid })
    }

    /// Every pixel valid.
    pub fn dense(values: Tensor) -> Self {
        let n = values.len();
        DisparityMap::new(values, vec![true; n]).expect("2-D tensor")
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.values.shape()[0], self.values.shape()[1])
    }

    pub fn num_valid(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// 1 for valid pixels, 0 otherwise, `H×W`.
    pub fn mask(&self) -> Tensor {
        let data = self.valid.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect();
        Tensor::new(self.values.shape().to_vec(), data).expect("same shape")
    }
}
