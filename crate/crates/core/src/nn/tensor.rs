use super::Scalar;

/// Dense n-dimensional array, row-major, with an optional same-shape gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    dims: Vec<usize>,
    pub values: Vec<T>,
    pub grad: Option<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(dims: Vec<usize>, values: Vec<T>) -> Self {
        assert_eq!(dims.iter().product::<usize>(), values.len(), "values do not match dims {dims:?}");
        Tensor { dims, values, grad: None }
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let n = dims.iter().product();
        Tensor { dims, values: vec![T::zero(); n], grad: None }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Leading (batch) dimension.
    pub fn batch(&self) -> usize {
        self.dims[0]
    }

    pub fn reshape(mut self, dims: Vec<usize>) -> Self {
        assert_eq!(dims.iter().product::<usize>(), self.values.len());
        self.dims = dims;
        self
    }

    pub fn zero_grad(&mut self) {
        match &mut self.grad {
            Some(g) => g.iter_mut().for_each(|x| *x = T::zero()),
            None => self.grad = Some(vec![T::zero(); self.values.len()]),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            dims: self.dims.clone(),
            values: self.values.iter().map(|v| U::from_f64(v.as_f64())).collect(),
            grad: self.grad.as_ref().map(|g| g.iter().map(|v| U::from_f64(v.as_f64())).collect()),
        }
    }
}
