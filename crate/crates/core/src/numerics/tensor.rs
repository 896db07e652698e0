use crate::error::{FedQuadError, Result};

/// Row-major dense tensor of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if shape.contains(&0) || expected != data.len() {
            return Err(FedQuadError::Dimension {
                op: "tensor",
                left: shape,
                right: vec![data.len()],
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(FedQuadError::Dimension {
                op: "from_rows",
                left: vec![cols],
                right: vec![bad.len()],
            });
        }
        Tensor::new(vec![rows.len(), cols], rows.concat())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Product of all trailing dimensions, i.e. the row width of a matrix.
    pub fn cols(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    /// Gathers the listed rows into a new matrix.
    pub fn select_rows(&self, rows: &[usize]) -> Tensor {
        let c = self.cols();
        let mut data = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        let mut shape = self.shape.clone();
        shape[0] = rows.len();
        Tensor { shape, data }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub(crate) fn check_same_shape(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(FedQuadError::Dimension {
                op,
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(())
    }

    pub(crate) fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(FedQuadError::NonFinite(what.to_string()))
        }
    }
}

/// A trainable value together with its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub value: Tensor,
    pub gradient: Tensor,
}

impl Parameter {
    pub fn new(value: Tensor) -> Self {
        let gradient = Tensor::zeros(value.shape());
        Parameter { value, gradient }
    }

    pub fn zero_grad(&mut self) {
        self.gradient.data_mut().fill(0.0);
    }
}

pub(crate) fn check_linear_shapes(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<()> {
    if input.shape().len() != 2
        || weight.shape().len() != 2
        || input.shape()[1] != weight.shape()[0]
    {
        return Err(FedQuadError::Dimension {
            op: "linear",
            left: input.shape().to_vec(),
            right: weight.shape().to_vec(),
        });
    }
    if bias.shape() != [weight.shape()[1]] {
        return Err(FedQuadError::Dimension {
            op: "linear bias",
            left: weight.shape().to_vec(),
            right: bias.shape().to_vec(),
        });
    }
    Ok(())
}

pub(crate) fn linear_raw(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Tensor {
    let (b, d_in) = (input.shape()[0], input.shape()[1]);
    let d_out = weight.shape()[1];
    let w = weight.data();
    let mut out = Vec::with_capacity(b * d_out);
    for r in 0..b {
        let x = input.row(r);
        let mut acc = bias.data().to_vec();
        for i in 0..d_in {
            let xi = x[i];
            let wrow = &w[i * d_out..(i + 1) * d_out];
            for (a, &wij) in acc.iter_mut().zip(wrow) {
                *a += xi * wij;
            }
        }
        out.extend(acc);
    }
    Tensor {
        shape: vec![b, d_out],
        data: out,
    }
}

/// `out[b, j] = sum_i input[b, i] * weight[i, j] + bias[j]`.
pub fn linear_forward(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    check_linear_shapes(input, weight, bias)?;
    Ok(linear_raw(input, weight, bias))
}

pub fn relu_forward(input: &Tensor) -> Tensor {
    input.map(|x| x.max(0.0))
}

pub fn l2_distance(a: &Tensor, b: &Tensor) -> Result<f64> {
    a.check_same_shape(b, "l2_distance")?;
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

pub(crate) fn check_labels(labels: &[usize], classes: usize) -> Result<()> {
    if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
        return Err(FedQuadError::LabelOutOfRange {
            index,
            label,
            classes,
        });
    }
    Ok(())
}

/// Per-row softmax probabilities and the batch-mean negative log-likelihood.
pub(crate) fn softmax_ce_raw(logits: &Tensor, labels: &[usize]) -> (f64, Vec<f64>) {
    let k = logits.cols();
    let mut probs = Vec::with_capacity(logits.len());
    let mut total = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|&z| (z - max).exp()).sum();
        let log_sum = sum.ln();
        total += -(row[y] - max - log_sum);
        probs.extend(row.iter().map(|&z| (z - max).exp() / sum));
        debug_assert_eq!(probs.len(), (r + 1) * k);
    }
    (total / labels.len() as f64, probs)
}

/// Mean over the batch of `-log softmax(logits)[label]`.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    if logits.shape().len() != 2 || logits.rows() != labels.len() {
        return Err(FedQuadError::Dimension {
            op: "softmax_cross_entropy",
            left: logits.shape().to_vec(),
            right: vec![labels.len()],
        });
    }
    check_labels(labels, logits.cols())?;
    Ok(softmax_ce_raw(logits, labels).0)
}
