use crate::error::{Error, Result};

/// Dense 4-D tensor of `f64` with logical dims `(batch, channels, height,
/// width)`.
///
/// Height is the FE axis and is the fastest-varying index in memory, so one
/// (batch, channel, width) column of `height` values is contiguous. The
/// convolution kernels rely on this layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: [usize; 4],
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Self { shape, data: vec![0.0; shape.iter().product()] }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if data.len() != n {
            return Err(Error::Shape(format!("{} values for shape {shape:?}", data.len())));
        }
        Ok(Self { shape, data })
    }

    /// Build from a function of logical coordinates `(b, c, h, w)`.
    pub fn from_fn(shape: [usize; 4], mut f: impl FnMut(usize, usize, usize, usize) -> f64) -> Self {
        let mut t = Self::zeros(shape);
        for b in 0..shape[0] {
            for c in 0..shape[1] {
                for w in 0..shape[3] {
                    for h in 0..shape[2] {
                        let i = t.index(b, c, h, w);
                        t.data[i] = f(b, c, h, w);
                    }
                }
            }
        }
        t
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }
    pub fn batch(&self) -> usize {
        self.shape[0]
    }
    pub fn channels(&self) -> usize {
        self.shape[1]
    }
    pub fn height(&self) -> usize {
        self.shape[2]
    }
    pub fn width(&self) -> usize {
        self.shape[3]
    }

    /// Values of one batch item.
    pub fn item_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    #[inline]
    pub fn index(&self, b: usize, c: usize, h: usize, w: usize) -> usize {
        let [_, cs, hs, ws] = self.shape;
        ((b * cs + c) * ws + w) * hs + h
    }

    #[inline]
    pub fn at(&self, b: usize, c: usize, h: usize, w: usize) -> f64 {
        self.data[self.index(b, c, h, w)]
    }

    #[inline]
    pub fn set(&mut self, b: usize, c: usize, h: usize, w: usize, v: f64) {
        let i = self.index(b, c, h, w);
        self.data[i] = v;
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

    pub fn item(&self, b: usize) -> &[f64] {
        let n = self.item_len();
        &self.data[b * n..(b + 1) * n]
    }

    /// New tensor holding the listed batch items, in order.
    pub fn gather(&self, items: &[usize]) -> Tensor {
        let n = self.item_len();
        let mut data = Vec::with_capacity(items.len() * n);
        for &b in items {
            data.extend_from_slice(self.item(b));
        }
        let mut shape = self.shape;
        shape[0] = items.len();
        Tensor { shape, data }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn height_is_contiguous() {
        let t = Tensor::from_fn([2, 3, 5, 4], |b, c, h, w| (b * 1000 + c * 100 + w * 10 + h) as f64);
        assert_eq!(t.index(0, 0, 1, 0), 1);
        assert_eq!(t.at(1, 2, 3, 1), 1213.0);
        let g = t.gather(&[1, 1, 0]);
        assert_eq!(g.shape(), [3, 3, 5, 4]);
        assert_eq!(g.at(2, 2, 3, 1), 213.0);
    }

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::from_vec([1, 1, 2, 2], vec![0.0; 3]).is_err());
    }
}
