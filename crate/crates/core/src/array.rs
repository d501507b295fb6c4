//! Dense row-major arrays of f64 used by the differentiation engine.
//!
//! Shapes are explicit and checked; there is no broadcasting here beyond
//! what the tape ops implement (leading-dimension expansion only).

/// A dense row-major array. Rank 0 (empty shape) is a scalar.
#[derive(Clone, Debug, PartialEq)]
pub struct Array {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Array {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Array {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Array {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Array {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Self {
        let n: usize = shape.iter().product();
        assert_eq!(
            data.len(),
            n,
            "array data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Array {
            shape: shape.to_vec(),
            data,
        }
    }

    /// 1-D array from a slice.
    pub fn vector(data: &[f64]) -> Self {
        Array {
            shape: vec![data.len()],
            data: data.to_vec(),
        }
    }

    /// 2-D array from rows.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        Self::from_vec(&[rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Scalar value; panics if the array holds more than one element.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on array of shape {:?}", self.shape);
        self.data[0]
    }

    /// Rows of a rank-2 array.
    pub fn rows(&self) -> usize {
        assert_eq!(self.rank(), 2, "rows() on array of shape {:?}", self.shape);
        self.shape[0]
    }

    /// Columns of a rank-2 array.
    pub fn cols(&self) -> usize {
        assert_eq!(self.rank(), 2, "cols() on array of shape {:?}", self.shape);
        self.shape[1]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Array {
        Array {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Elementwise in-place accumulation; shapes must match exactly.
    pub fn add_assign(&mut self, other: &Array) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += b;
        }
    }

    pub fn scale_assign(&mut self, s: f64) {
        for a in self.data.iter_mut() {
            *a *= s;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Reinterprets the buffer under a new shape with the same element count.
    pub fn reshaped(&self, shape: &[usize]) -> Array {
        let n: usize = shape.iter().product();
        assert_eq!(n, self.data.len(), "reshape {:?} -> {:?}", self.shape, shape);
        Array {
            shape: shape.to_vec(),
            data: self.data.clone(),
        }
    }
}

/// True when `b` can expand across the leading dimensions of `a`,
/// i.e. `b.shape` is a suffix of `a.shape`.
pub fn suffix_of(b: &[usize], a: &[usize]) -> bool {
    b.len() <= a.len() && a[a.len() - b.len()..] == *b
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_data_round_trip() {
        let a = Array::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(a.shape(), &[2, 3]);
        assert_eq!(a.len(), 6);
        assert_eq!(a.data()[4], 5.0);
    }

    #[test]
    #[should_panic(expected = "does not match shape")]
    fn from_vec_rejects_bad_length() {
        Array::from_vec(&[2, 2], vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn suffix_broadcast_rule() {
        assert!(suffix_of(&[3], &[5, 3]));
        assert!(suffix_of(&[5, 3], &[5, 3]));
        assert!(!suffix_of(&[5], &[5, 3]));
        assert!(suffix_of(&[], &[2, 2]));
    }
}
