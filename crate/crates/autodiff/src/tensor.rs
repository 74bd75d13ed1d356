use serde::{Deserialize, Serialize};

/// Dense row-major matrix of `f64`.
///
/// Scalars are `[1, 1]` and column vectors are `[n, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTensor")]
pub struct Tensor {
    shape: [usize; 2],
    values: Vec<f64>,
}

#[derive(Deserialize)]
struct RawTensor {
    shape: [usize; 2],
    values: Vec<f64>,
}

impl TryFrom<RawTensor> for Tensor {
    type Error = String;

    fn try_from(raw: RawTensor) -> Result<Self, String> {
        let shape = raw.shape;
        let len = raw.values.len();
        Tensor::try_new(shape, raw.values)
            .ok_or_else(|| format!("tensor shape {shape:?} does not hold {len} values"))
    }
}

impl Tensor {
    pub fn new(shape: [usize; 2], values: Vec<f64>) -> Self {
        assert_eq!(
            shape[0] * shape[1],
            values.len(),
            "tensor shape {shape:?} does not match {} values",
            values.len()
        );
        Self { shape, values }
    }

    /// Validating constructor for data coming from outside the process.
    pub fn try_new(shape: [usize; 2], values: Vec<f64>) -> Option<Self> {
        (shape[0].checked_mul(shape[1])? == values.len()).then_some(Self { shape, values })
    }

    pub fn zeros(shape: [usize; 2]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: [usize; 2], value: f64) -> Self {
        Self {
            shape,
            values: vec![value; shape[0] * shape[1]],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self::new([1, 1], vec![value])
    }

    pub fn column(values: Vec<f64>) -> Self {
        let n = values.len();
        Self::new([n, 1], values)
    }

    pub fn row(values: Vec<f64>) -> Self {
        let n = values.len();
        Self::new([1, n], values)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            values.extend_from_slice(r);
        }
        Self::new([rows.len(), cols], values)
    }

    pub fn shape(&self) -> [usize; 2] {
        self.shape
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
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

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.shape[1] + c]
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        let c = self.shape[1];
        &self.values[r * c..(r + 1) * c]
    }

    /// Value of a `[1, 1]` tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.shape, [1, 1], "item() on non-scalar tensor");
        self.values[0]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Rows selected by index, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let c = self.shape[1];
        let mut values = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            values.extend_from_slice(self.row_slice(i));
        }
        Self::new([idx.len(), c], values)
    }

    pub fn transpose(&self) -> Self {
        let [r, c] = self.shape;
        let mut values = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                values[j * r + i] = self.values[i * c + j];
            }
        }
        Self::new([c, r], values)
    }

    /// Plain matrix product.
    pub fn matmul(&self, other: &Tensor) -> Self {
        let [n, k] = self.shape;
        let [k2, m] = other.shape;
        assert_eq!(k, k2, "matmul inner dimensions {k} and {k2} differ");
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let a_row = &self.values[i * k..(i + 1) * k];
            let o_row = &mut out[i * m..(i + 1) * m];
            for (p, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.values[p * m..(p + 1) * m];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Self::new([n, m], out)
    }

    pub fn concat_cols(parts: &[&Tensor]) -> Self {
        let rows = parts.first().map_or(0, |t| t.rows());
        let cols: usize = parts.iter().map(|t| t.cols()).sum();
        let mut values = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                assert_eq!(p.rows(), rows, "concat_cols row mismatch");
                values.extend_from_slice(p.row_slice(r));
            }
        }
        Self::new([rows, cols], values)
    }

    pub fn slice_cols(&self, start: usize, end: usize) -> Self {
        assert!(
            start <= end && end <= self.cols(),
            "column slice out of range"
        );
        let mut values = Vec::with_capacity(self.rows() * (end - start));
        for r in 0..self.rows() {
            values.extend_from_slice(&self.row_slice(r)[start..end]);
        }
        Self::new([self.rows(), end - start], values)
    }
}
