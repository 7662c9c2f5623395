//! Dense row-major tensors.

pub mod memory;
mod real;

use std::fmt;
use std::sync::Arc;

pub use real::Real;

use crate::error::{Error, Result};

/// Tracked backing buffer. Allocation and release are reported to [`memory`].
struct Storage<T: Real> {
    data: Vec<T>,
}

impl<T: Real> Storage<T> {
    fn new(data: Vec<T>) -> Self {
        memory::record_alloc(data.len() * std::mem::size_of::<T>());
        Storage { data }
    }
}

impl<T: Real> Clone for Storage<T> {
    fn clone(&self) -> Self {
        Storage::new(self.data.clone())
    }
}

impl<T: Real> Drop for Storage<T> {
    fn drop(&mut self) {
        memory::record_free(self.data.len() * std::mem::size_of::<T>());
    }
}

/// An immutable-by-default n-dimensional array.
///
/// Cloning is cheap (the buffer is shared); [`Tensor::data_mut`] copies on
/// write when the buffer is shared.
#[derive(Clone)]
pub struct Tensor<T: Real> {
    shape: Vec<usize>,
    storage: Arc<Storage<T>>,
}

impl<T: Real> Tensor<T> {
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(
                "tensor",
                format!(
                    "shape {shape:?} needs {expected} elements, got {}",
                    data.len()
                ),
            ));
        }
        Ok(Self::from_parts(shape.to_vec(), data))
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            shape,
            storage: Arc::new(Storage::new(data)),
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![value; n])
    }

    pub fn scalar(value: T) -> Self {
        Self::from_parts(vec![], vec![value])
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n = shape.iter().product();
        Self::from_parts(shape.to_vec(), (0..n).map(&mut f).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.shape[axis]
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.storage.data.len()
    }

    pub fn nbytes(&self) -> usize {
        self.numel() * std::mem::size_of::<T>()
    }

    pub fn data(&self) -> &[T] {
        &self.storage.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut Arc::make_mut(&mut self.storage).data
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.storage.data.clone()
    }

    /// True when both tensors view the same buffer.
    pub fn shares_storage(&self, other: &Tensor<T>) -> bool {
        Arc::ptr_eq(&self.storage, &other.storage)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.numel() {
            return Err(Error::shape(
                "reshape",
                format!("cannot view {:?} as {shape:?}", self.shape),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            storage: Arc::clone(&self.storage),
        })
    }

    pub fn item(&self) -> Result<T> {
        if self.numel() != 1 {
            return Err(Error::shape(
                "item",
                format!("expected one element, shape is {:?}", self.shape),
            ));
        }
        Ok(self.data()[0])
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self::from_parts(self.shape.clone(), self.data().iter().map(|&x| f(x)).collect())
    }

    pub fn zip_map(&self, other: &Tensor<T>, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::shape(
                "zip_map",
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        let data = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Self::from_parts(self.shape.clone(), data))
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor::from_parts(
            self.shape.clone(),
            self.data().iter().map(|&x| U::from_f64(x.to_f64())).collect(),
        )
    }

    pub fn sum(&self) -> T {
        self.data().iter().copied().sum()
    }

    pub fn dot(&self, other: &Tensor<T>) -> Result<T> {
        if self.shape != other.shape {
            return Err(Error::shape(
                "dot",
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        Ok(self
            .data()
            .iter()
            .zip(other.data())
            .map(|(&a, &b)| a * b)
            .sum())
    }

    pub fn max_abs(&self) -> T {
        self.data()
            .iter()
            .fold(T::zero(), |acc, &x| acc.max(x.abs()))
    }

    /// Largest elementwise absolute difference; errors on shape mismatch.
    pub fn max_abs_diff(&self, other: &Tensor<T>) -> Result<T> {
        Ok(self.zip_map(other, |a, b| (a - b).abs())?.max_abs())
    }

    pub fn all_finite(&self) -> bool {
        self.data().iter().all(|x| x.is_finite())
    }

    /// Copies channel range `[start, start + len)` of a rank-4 tensor.
    pub fn channels(&self, start: usize, len: usize) -> Result<Self> {
        if self.rank() != 4 || start + len > self.shape[1] {
            return Err(Error::shape(
                "channels",
                format!("range {start}..{} of {:?}", start + len, self.shape),
            ));
        }
        let [n, c, h, w] = [self.shape[0], self.shape[1], self.shape[2], self.shape[3]];
        let plane = h * w;
        let mut out = Vec::with_capacity(n * len * plane);
        for b in 0..n {
            let base = (b * c + start) * plane;
            out.extend_from_slice(&self.data()[base..base + len * plane]);
        }
        Ok(Self::from_parts(vec![n, len, h, w], out))
    }
}

impl<T: Real> PartialEq for Tensor<T> {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.data() == other.data()
    }
}

impl<T: Real> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor<{}>{:?} [", T::NAME, self.shape)?;
        for (i, x) in self.data().iter().take(SHOWN).enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{x}")?;
        }
        if self.numel() > SHOWN {
            write!(f, ", ...")?;
        }
        write!(f, "]")
    }
}

/// Splits `shape` around `axis` into `(outer, len, inner)` extents.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::<f64>::from_vec(&[2, 3], vec![0.0; 5]).is_err());
        let t = Tensor::<f64>::from_vec(&[2, 3], vec![1.0; 6]).unwrap();
        assert_eq!(t.numel(), 6);
        assert_eq!(t.sum(), 6.0);
    }

    #[test]
    fn write_copies_shared_storage() {
        let a = Tensor::<f32>::zeros(&[4]);
        let mut b = a.clone();
        assert!(a.shares_storage(&b));
        b.data_mut()[0] = 1.0;
        assert!(!a.shares_storage(&b));
        assert_eq!(a.data()[0], 0.0);
    }

    #[test]
    fn storage_is_accounted() {
        let before = memory::live_bytes();
        let t = Tensor::<f64>::zeros(&[10, 10]);
        assert_eq!(memory::live_bytes() - before, 800);
        let view = t.reshape(&[100]).unwrap();
        assert_eq!(memory::live_bytes() - before, 800);
        drop(t);
        drop(view);
        assert_eq!(memory::live_bytes(), before);
    }

    #[test]
    fn measure_peak_sees_transient_buffers() {
        let (_, peak) = memory::measure_peak(|| {
            let a = Tensor::<f32>::zeros(&[256]);
            drop(a);
            Tensor::<f32>::zeros(&[16])
        });
        assert_eq!(peak, 1024);
    }

    #[test]
    fn channel_slice() {
        let t = Tensor::<f64>::from_fn(&[1, 3, 2, 2], |i| i as f64);
        let s = t.channels(1, 2).unwrap();
        assert_eq!(s.shape(), &[1, 2, 2, 2]);
        assert_eq!(s.data()[0], 4.0);
        assert!(t.channels(2, 2).is_err());
    }
}
