use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A named tensor inside a flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl TensorSpec {
    pub fn new(name: &str, shape: &[usize]) -> Self {
        TensorSpec {
            name: name.to_owned(),
            shape: shape.to_vec(),
        }
    }

    pub fn size(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Flat float64 parameters plus the layout mapping slices to named tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    values: Vec<f64>,
    layout: Vec<TensorSpec>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Descriptor {
    dtype: String,
    len: usize,
    tensors: Vec<TensorSpec>,
}

const DTYPE: &str = "f64-le";

impl Params {
    pub fn new(layout: Vec<TensorSpec>, values: Vec<f64>) -> Result<Self> {
        let expected: usize = layout.iter().map(TensorSpec::size).sum();
        if expected != values.len() {
            return Err(Error::Config(format!(
                "layout declares {expected} values but {} were given",
                values.len()
            )));
        }
        Ok(Params { values, layout })
    }

    pub fn zeros(layout: Vec<TensorSpec>) -> Self {
        let n = layout.iter().map(TensorSpec::size).sum();
        Params {
            values: vec![0.0; n],
            layout,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn layout(&self) -> &[TensorSpec] {
        &self.layout
    }

    fn range_of(&self, name: &str) -> Option<std::ops::Range<usize>> {
        let mut offset = 0;
        for spec in &self.layout {
            let size = spec.size();
            if spec.name == name {
                return Some(offset..offset + size);
            }
            offset += size;
        }
        None
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.range_of(name).map(|r| &self.values[r])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        self.range_of(name).map(move |r| &mut self.values[r])
    }

    /// Splits the flat vector into one owned buffer per tensor.
    pub fn unflatten(&self) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(self.layout.len());
        let mut rest = self.values.as_slice();
        for spec in &self.layout {
            let (head, tail) = rest.split_at(spec.size());
            out.push(head.to_vec());
            rest = tail;
        }
        out
    }

    /// Inverse of [`Params::unflatten`].
    pub fn flatten(layout: Vec<TensorSpec>, tensors: &[Vec<f64>]) -> Result<Self> {
        if tensors.len() != layout.len() {
            return Err(Error::Config(format!(
                "layout has {} tensors, got {}",
                layout.len(),
                tensors.len()
            )));
        }
        for (spec, t) in layout.iter().zip(tensors) {
            if spec.size() != t.len() {
                return Err(Error::Config(format!(
                    "tensor {} expects {} values, got {}",
                    spec.name,
                    spec.size(),
                    t.len()
                )));
            }
        }
        Params::new(layout, tensors.concat())
    }

    fn file_pair(stem: &Path) -> (PathBuf, PathBuf) {
        let base = stem.as_os_str().to_owned();
        let mut bin = base.clone();
        bin.push(".params.bin");
        let mut json = base;
        json.push(".params.json");
        (PathBuf::from(bin), PathBuf::from(json))
    }

    /// Writes `<stem>.params.bin` (little-endian f64) and `<stem>.params.json`.
    pub fn save(&self, stem: &Path) -> Result<()> {
        let (bin, json) = Self::file_pair(stem);
        let bytes: Vec<u8> = self.values.iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(&bin, bytes).map_err(|e| Error::io(&bin, e))?;
        let desc = Descriptor {
            dtype: DTYPE.to_owned(),
            len: self.values.len(),
            tensors: self.layout.clone(),
        };
        let text = serde_json::to_string_pretty(&desc)?;
        fs::write(&json, text).map_err(|e| Error::io(&json, e))?;
        Ok(())
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let (bin, json) = Self::file_pair(stem);
        let text = fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
        let desc: Descriptor = serde_json::from_str(&text)?;
        if desc.dtype != DTYPE {
            return Err(Error::Data(format!("unsupported dtype {}", desc.dtype)));
        }
        let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
        if bytes.len() != desc.len * 8 {
            return Err(Error::Data(format!(
                "{} holds {} bytes, descriptor expects {}",
                bin.display(),
                bytes.len(),
                desc.len * 8
            )));
        }
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        Params::new(desc.tensors, values)
    }
}
