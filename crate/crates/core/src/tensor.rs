//! Dense row-major tensors and the `GTD1` binary blob format.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const GTD1_MAGIC: &[u8; 4] = b"GTD1";

/// A dense n-dimensional array with an optional gradient buffer.
///
/// Image tensors use NCHW order. A rank-0 shape holds a single scalar.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T: Scalar = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        check_dims("tensor", &shape)?;
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::InvalidShape {
                op: "tensor",
                shape,
                reason: format!("expects {numel} elements, got {}", data.len()),
            });
        }
        Ok(Self {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Result<Self> {
        let shape = shape.into();
        check_dims("tensor", &shape)?;
        let numel = shape.iter().product();
        Self::new(shape, vec![value; numel])
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Result<Self> {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Result<Self> {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, f: impl FnMut(usize) -> T) -> Result<Self> {
        let shape = shape.into();
        check_dims("tensor", &shape)?;
        let numel = shape.iter().product();
        Self::new(shape, (0..numel).map(f).collect())
    }

    /// Marks the tensor as a gradient-accumulating leaf (or clears the mark and its gradient).
    pub fn with_requires_grad(mut self, requires_grad: bool) -> Self {
        self.set_requires_grad(requires_grad);
        self
    }

    pub fn set_requires_grad(&mut self, requires_grad: bool) {
        self.requires_grad = requires_grad;
        if !requires_grad {
            self.grad = None;
        }
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    /// Adds `delta` into the gradient buffer. Tensors that do not require grad
    /// ignore the call and return `Ok(false)`.
    pub fn accumulate_grad(&mut self, delta: &[T]) -> Result<bool> {
        if !self.requires_grad {
            return Ok(false);
        }
        if delta.len() != self.data.len() {
            return Err(Error::ShapeMismatch {
                op: "accumulate_grad",
                lhs: self.shape.clone(),
                rhs: vec![delta.len()],
            });
        }
        let grad = self
            .grad
            .get_or_insert_with(|| vec![T::zero(); delta.len()]);
        for (g, d) in grad.iter_mut().zip(delta) {
            *g += *d;
        }
        Ok(true)
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// Splits the tensor into its value buffer and gradient buffer for in-place updates.
    pub fn data_and_grad_mut(&mut self) -> (&mut [T], Option<&[T]>) {
        (&mut self.data, self.grad.as_deref())
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        check_dims("reshape", &shape)?;
        if shape.iter().product::<usize>() != self.numel() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape.clone(),
                rhs: shape,
            });
        }
        Ok(Self {
            shape,
            data: self.data.clone(),
            requires_grad: false,
            grad: None,
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
            requires_grad: false,
            grad: None,
        }
    }

    /// Converts the element type, dropping gradient state.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::cast(v.widen())).collect(),
            requires_grad: false,
            grad: None,
        }
    }

    /// Copies out the `index`-th slice along the leading axis as a tensor of rank − 1.
    pub fn slice_outer(&self, index: usize) -> Result<Self> {
        if self.shape.is_empty() || index >= self.shape[0] {
            return Err(Error::InvalidArgument(format!(
                "slice index {index} out of range for shape {:?}",
                self.shape
            )));
        }
        let inner: usize = self.shape[1..].iter().product();
        let data = self.data[index * inner..(index + 1) * inner].to_vec();
        Self::new(self.shape[1..].to_vec(), data)
    }

    /// Gathers rows of the leading axis in the given order.
    pub fn gather_outer(&self, indices: &[usize]) -> Result<Self> {
        if self.shape.is_empty() {
            return Err(Error::InvalidArgument("cannot gather from a scalar".into()));
        }
        let inner: usize = self.shape[1..].iter().product();
        let mut data = Vec::with_capacity(indices.len() * inner);
        for &i in indices {
            if i >= self.shape[0] {
                return Err(Error::InvalidArgument(format!(
                    "gather index {i} out of range for shape {:?}",
                    self.shape
                )));
            }
            data.extend_from_slice(&self.data[i * inner..(i + 1) * inner]);
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Self::new(shape, data)
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(parts: &[Tensor<T>]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("cannot stack zero tensors".into()))?;
        let mut data = Vec::with_capacity(first.numel() * parts.len());
        for p in parts {
            if p.shape != first.shape {
                return Err(Error::ShapeMismatch {
                    op: "stack",
                    lhs: first.shape.clone(),
                    rhs: p.shape.clone(),
                });
            }
            data.extend_from_slice(&p.data);
        }
        let mut shape = vec![parts.len()];
        shape.extend_from_slice(&first.shape);
        Self::new(shape, data)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn mean_value(&self) -> f64 {
        self.data.iter().map(|v| v.widen()).sum::<f64>() / self.numel() as f64
    }
}

pub(crate) fn check_dims(op: &'static str, shape: &[usize]) -> Result<()> {
    if shape.iter().any(|&d| d == 0) {
        return Err(Error::InvalidShape {
            op,
            shape: shape.to_vec(),
            reason: "zero-size dimension".into(),
        });
    }
    Ok(())
}

impl Tensor<f32> {
    /// Serializes as `GTD1`: magic, u32 rank, rank u32 dims, then little-endian f32 data.
    pub fn write_gtd1<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(GTD1_MAGIC)?;
        w.write_all(&(self.shape.len() as u32).to_le_bytes())?;
        for &d in &self.shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)
    }

    pub fn to_gtd1_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 * self.shape.len() + 4 * self.numel());
        self.write_gtd1(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_gtd1<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic, "magic")?;
        if &magic != GTD1_MAGIC {
            return Err(Error::Format(format!("bad GTD1 magic {magic:?}")));
        }
        let rank = read_u32(&mut r, "rank")? as usize;
        if rank > 16 {
            return Err(Error::Format(format!("implausible GTD1 rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(&mut r, "dimension")? as usize);
        }
        check_dims("gtd1", &shape).map_err(|e| Error::Format(e.to_string()))?;
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format(format!("GTD1 shape {shape:?} overflows")))?;
        let mut bytes = vec![0u8; numel * 4];
        read_exact(&mut r, &mut bytes, "tensor data")?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::new(shape, data)
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| Error::Format(format!("truncated GTD1 blob while reading {what}: {e}")))
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_length_mismatch_and_zero_dims() {
        assert!(Tensor::<f32>::new([2, 3], vec![0.0; 5]).is_err());
        assert!(matches!(
            Tensor::<f32>::zeros([2, 0, 3]),
            Err(Error::InvalidShape { .. })
        ));
    }

    #[test]
    fn tensor_without_requires_grad_never_accumulates() {
        let mut t = Tensor::<f32>::zeros([3]).unwrap();
        assert!(!t.accumulate_grad(&[1.0, 2.0, 3.0]).unwrap());
        assert!(t.grad().is_none());

        let mut t = t.with_requires_grad(true);
        t.accumulate_grad(&[1.0, 2.0, 3.0]).unwrap();
        t.accumulate_grad(&[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(t.grad().unwrap(), &[2.0, 3.0, 4.0]);
    }

    #[test]
    fn gtd1_layout_is_exact() {
        let t = Tensor::<f32>::new([1, 2], vec![1.0, -2.5]).unwrap();
        let bytes = t.to_gtd1_bytes();
        let mut expected = b"GTD1".to_vec();
        expected.extend_from_slice(&2u32.to_le_bytes());
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&2u32.to_le_bytes());
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        expected.extend_from_slice(&(-2.5f32).to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn gtd1_truncated_is_an_error() {
        let t = Tensor::<f32>::ones([4, 4]).unwrap();
        let bytes = t.to_gtd1_bytes();
        assert!(Tensor::read_gtd1(&bytes[..bytes.len() - 1]).is_err());
        assert!(Tensor::read_gtd1(&b"GTD2\0\0\0\0"[..]).is_err());
    }

    proptest! {
        #[test]
        fn gtd1_round_trips_bit_exactly(
            dims in proptest::collection::vec(1usize..5, 0..4),
            seed in any::<u32>(),
        ) {
            let numel: usize = dims.iter().product();
            let data: Vec<f32> = (0..numel)
                .map(|i| f32::from_bits(seed.wrapping_mul(2654435761).wrapping_add(i as u32 * 97) & 0x7f7f_ffff))
                .collect();
            let t = Tensor::new(dims, data).unwrap();
            let back = Tensor::read_gtd1(&t.to_gtd1_bytes()[..]).unwrap();
            prop_assert_eq!(back.shape(), t.shape());
            let a: Vec<u32> = t.data().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = back.data().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
    }
}
