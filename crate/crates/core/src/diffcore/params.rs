use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// Declared shape of a parameter block.
///
/// Vectors are stored internally as a single row (`1 × k`) and scalars as
/// `1 × 1`, so every block can enter the graph as a matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockShape {
    Scalar,
    Vector(usize),
    Matrix(usize, usize),
}

impl BlockShape {
    pub fn dims(&self) -> Vec<usize> {
        match *self {
            BlockShape::Scalar => vec![],
            BlockShape::Vector(k) => vec![k],
            BlockShape::Matrix(r, c) => vec![r, c],
        }
    }

    pub fn from_dims(dims: &[usize]) -> Result<Self> {
        match *dims {
            [] => Ok(BlockShape::Scalar),
            [k] => Ok(BlockShape::Vector(k)),
            [r, c] => Ok(BlockShape::Matrix(r, c)),
            _ => Err(Error::Malformed(format!(
                "unsupported parameter rank {}",
                dims.len()
            ))),
        }
    }

    fn storage(&self) -> (usize, usize) {
        match *self {
            BlockShape::Scalar => (1, 1),
            BlockShape::Vector(k) => (1, k),
            BlockShape::Matrix(r, c) => (r, c),
        }
    }

    pub fn len(&self) -> usize {
        let (r, c) = self.storage();
        r * c
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A named, fixed-shape array of trainable (or frozen) reals.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterBlock {
    pub name: String,
    shape: BlockShape,
    values: Array2<f64>,
    pub trainable: bool,
}

impl ParameterBlock {
    pub fn matrix(name: impl Into<String>, values: Array2<f64>) -> Self {
        let shape = BlockShape::Matrix(values.nrows(), values.ncols());
        Self {
            name: name.into(),
            shape,
            values,
            trainable: true,
        }
    }

    pub fn vector(name: impl Into<String>, values: Array1<f64>) -> Self {
        let k = values.len();
        Self {
            name: name.into(),
            shape: BlockShape::Vector(k),
            values: values.into_shape_with_order((1, k)).expect("row reshape"),
            trainable: true,
        }
    }

    pub fn scalar(name: impl Into<String>, value: f64) -> Self {
        Self {
            name: name.into(),
            shape: BlockShape::Scalar,
            values: Array2::from_elem((1, 1), value),
            trainable: true,
        }
    }

    /// Rebuilds a block from its serialized pieces.
    pub fn from_flat(name: impl Into<String>, shape: BlockShape, flat: Vec<f64>) -> Result<Self> {
        let name = name.into();
        if flat.len() != shape.len() {
            return Err(Error::Malformed(format!(
                "block `{name}` declares {} values but holds {}",
                shape.len(),
                flat.len()
            )));
        }
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::Malformed(format!(
                "block `{name}` has non-finite entries"
            )));
        }
        let values = Array2::from_shape_vec(shape.storage(), flat).expect("length checked");
        Ok(Self {
            name,
            shape,
            values,
            trainable: true,
        })
    }

    pub fn frozen(mut self) -> Self {
        self.trainable = false;
        self
    }

    pub fn shape(&self) -> BlockShape {
        self.shape
    }

    /// Matrix view of the values (row vector for vectors, `1 × 1` for scalars).
    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    /// Mutable access to the entries. The shape cannot change through this.
    pub fn values_mut(&mut self) -> ndarray::ArrayViewMut2<'_, f64> {
        self.values.view_mut()
    }

    /// Entries as a 1-D view (row-major).
    pub fn row(&self) -> ndarray::ArrayView1<'_, f64> {
        self.values.row(0)
    }

    pub fn flat(&self) -> Vec<f64> {
        self.values.iter().copied().collect()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Gradient of one trainable block.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockGradient {
    /// Index of the block in the parameter list the program was evaluated on.
    pub block: usize,
    pub grad: Array2<f64>,
}

/// Loss value plus one gradient per trainable block, in block order.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientBundle {
    pub loss: f64,
    pub entries: Vec<BlockGradient>,
}

impl GradientBundle {
    pub fn get(&self, block: usize) -> Option<&Array2<f64>> {
        self.entries
            .iter()
            .find(|e| e.block == block)
            .map(|e| &e.grad)
    }

    /// All gradient entries concatenated in block order.
    pub fn flatten(&self) -> Vec<f64> {
        self.entries
            .iter()
            .flat_map(|e| e.grad.iter().copied())
            .collect()
    }

    pub fn all_finite(&self) -> bool {
        self.loss.is_finite()
            && self
                .entries
                .iter()
                .all(|e| e.grad.iter().all(|v| v.is_finite()))
    }
}

/// Flattens every trainable block, in order, into a single vector.
pub fn flatten_trainable(blocks: &[ParameterBlock]) -> Vec<f64> {
    blocks
        .iter()
        .filter(|b| b.trainable)
        .flat_map(|b| b.values.iter().copied())
        .collect()
}

/// Inverse of [`flatten_trainable`].
pub fn assign_trainable(blocks: &mut [ParameterBlock], flat: &[f64]) {
    let mut it = flat.iter();
    for b in blocks.iter_mut().filter(|b| b.trainable) {
        for v in b.values.iter_mut() {
            *v = *it.next().expect("flat parameter vector too short");
        }
    }
    assert!(it.next().is_none(), "flat parameter vector too long");
}
