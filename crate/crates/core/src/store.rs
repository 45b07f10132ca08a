//! Flat parameter storage shared by every persisted component.
//!
//! Components write their real-valued parameters into one contiguous `f64`
//! buffer and describe them in the manifest with [`BlockRef`]s.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockRef {
    pub offset: usize,
    pub len: usize,
    pub shape: Vec<usize>,
}

#[derive(Debug, Default)]
pub struct ParamWriter {
    data: Vec<f64>,
}

impl ParamWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put(&mut self, values: &[f64], shape: &[usize]) -> BlockRef {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        let offset = self.data.len();
        self.data.extend_from_slice(values);
        BlockRef {
            offset,
            len: values.len(),
            shape: shape.to_vec(),
        }
    }

    pub fn put_vec(&mut self, values: &[f64]) -> BlockRef {
        self.put(values, &[values.len()])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.data
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ParamReader<'a> {
    data: &'a [f64],
}

impl<'a> ParamReader<'a> {
    pub fn new(data: &'a [f64]) -> Self {
        Self { data }
    }

    pub fn get(&self, block: &BlockRef) -> Result<&'a [f64]> {
        if block.shape.iter().product::<usize>() != block.len {
            return Err(Error::Corrupt(format!(
                "block shape {:?} does not match length {}",
                block.shape, block.len
            )));
        }
        self.data
            .get(block.offset..block.offset + block.len)
            .ok_or_else(|| {
                Error::Corrupt(format!(
                    "block [{}, +{}) outside parameter payload of {}",
                    block.offset,
                    block.len,
                    self.data.len()
                ))
            })
    }

    pub fn get_shaped(&self, block: &BlockRef, shape: &[usize]) -> Result<&'a [f64]> {
        if block.shape != shape {
            return Err(Error::Corrupt(format!(
                "expected block shape {shape:?}, found {:?}",
                block.shape
            )));
        }
        self.get(block)
    }
}
