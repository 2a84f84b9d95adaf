use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major array with an optional gradient of the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S: Scalar> {
    shape: Vec<usize>,
    values: Vec<S>,
    grad: Option<Vec<S>>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Vec<usize>, values: Vec<S>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(Error::invalid(format!(
                "shape {shape:?} holds {n} values, got {}",
                values.len()
            )));
        }
        Ok(Self {
            shape,
            values,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            values: vec![S::zero(); n],
            grad: None,
        }
    }

    pub fn filled(shape: Vec<usize>, v: S) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            values: vec![v; n],
            grad: None,
        }
    }

    /// A trainable tensor: gradient buffer allocated and zeroed.
    pub fn param(shape: Vec<usize>, values: Vec<S>) -> Result<Self> {
        let mut t = Self::new(shape, values)?;
        t.grad = Some(vec![S::zero(); t.values.len()]);
        Ok(t)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [S] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<S> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn grad(&self) -> Option<&[S]> {
        self.grad.as_deref()
    }

    /// Gradient buffer, allocated on first use.
    pub fn grad_mut(&mut self) -> &mut [S] {
        let n = self.values.len();
        self.grad.get_or_insert_with(|| vec![S::zero(); n])
    }

    /// Split borrow of values and (allocated) gradient.
    pub fn values_and_grad_mut(&mut self) -> (&mut [S], &mut [S]) {
        let n = self.values.len();
        let g = self.grad.get_or_insert_with(|| vec![S::zero(); n]);
        (&mut self.values, g)
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = S::zero());
        }
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.values.len() {
            return Err(Error::shape(&shape, &self.shape));
        }
        self.shape = shape;
        Ok(self)
    }

    pub(crate) fn expect_rank(&self, rank: usize, what: &str) -> Result<()> {
        if self.shape.len() != rank {
            return Err(Error::invalid(format!(
                "{what} expects a rank-{rank} tensor, got shape {:?}",
                self.shape
            )));
        }
        Ok(())
    }

    pub(crate) fn expect_shape(&self, shape: &[usize]) -> Result<()> {
        if self.shape != shape {
            return Err(Error::shape(shape, &self.shape));
        }
        Ok(())
    }

    /// Rows `idx` of the leading axis, gathered into a new tensor.
    pub fn select_rows(&self, idx: &[usize]) -> Result<Self> {
        let row: usize = self.shape[1..].iter().product();
        let lead = self.shape[0];
        let mut values = Vec::with_capacity(idx.len() * row);
        for &i in idx {
            if i >= lead {
                return Err(Error::invalid(format!("row {i} out of range for {lead} rows")));
            }
            values.extend_from_slice(&self.values[i * row..(i + 1) * row]);
        }
        let mut shape = self.shape.clone();
        shape[0] = idx.len();
        Self::new(shape, values)
    }

    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            values: self.values.iter().map(|v| T::lit(v.as_f64())).collect(),
            grad: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_checks_element_count() {
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 5]).is_err());
        let t = Tensor::<f64>::new(vec![2, 3], vec![0.0; 6]).unwrap();
        assert_eq!(t.len(), 6);
        assert!(t.grad().is_none());
    }

    #[test]
    fn param_grad_shares_length() {
        let mut p = Tensor::<f32>::param(vec![4], vec![1.0; 4]).unwrap();
        assert_eq!(p.grad().unwrap().len(), 4);
        p.grad_mut()[2] = 3.0;
        p.zero_grad();
        assert!(p.grad().unwrap().iter().all(|g| *g == 0.0));
    }

    #[test]
    fn select_rows_gathers() {
        let t = Tensor::<f64>::new(vec![3, 2], vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let s = t.select_rows(&[2, 0]).unwrap();
        assert_eq!(s.shape(), &[2, 2]);
        assert_eq!(s.values(), &[4.0, 5.0, 0.0, 1.0]);
        assert!(t.select_rows(&[3]).is_err());
    }
}
