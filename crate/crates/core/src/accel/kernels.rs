//! Golden INT32 kernels and the tensor container they operate on.
//!
//! All arithmetic wraps modulo 2^32 (two's complement).

use super::AccelError;
use serde::{Deserialize, Serialize};

/// Dense row-major `i32` tensor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<i32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<i32>) -> Result<Self, AccelError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(AccelError::ShapeMismatch(format!(
                "shape {shape:?} needs {expected} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![0; len],
        }
    }

    /// Little-endian `i32` payload laid out in row-major order.
    pub fn from_raw_le(shape: Vec<usize>, bytes: &[u8]) -> Result<Self, AccelError> {
        if bytes.len() % 4 != 0 {
            return Err(AccelError::ShapeMismatch(format!(
                "raw payload of {} bytes is not a whole number of i32 words",
                bytes.len()
            )));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| i32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::new(shape, data)
    }

    pub fn to_raw_le(&self) -> Vec<u8> {
        self.data.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn expect_shape(&self, what: &str, shape: &[usize]) -> Result<(), AccelError> {
        if self.shape != shape {
            return Err(AccelError::ShapeMismatch(format!(
                "{what}: expected shape {shape:?}, got {:?}",
                self.shape
            )));
        }
        Ok(())
    }

    fn expect_rank(&self, what: &str, rank: usize) -> Result<(), AccelError> {
        if self.shape.len() != rank || self.data.len() != self.shape.iter().product::<usize>() {
            return Err(AccelError::ShapeMismatch(format!(
                "{what}: expected a rank-{rank} tensor, got shape {:?}",
                self.shape
            )));
        }
        Ok(())
    }
}

pub const MM_A_SHAPE: [usize; 2] = [121, 16];
pub const MM_B_SHAPE: [usize; 2] = [16, 4];
/// Height, width, channels.
pub const CONV_INPUT_SHAPE: [usize; 3] = [16, 16, 3];
/// Filters, channels, kernel height, kernel width.
pub const CONV_FILTER_SHAPE: [usize; 4] = [8, 3, 3, 3];
pub const CONV_OUTPUT_SHAPE: [usize; 3] = [14, 14, 8];

/// `C = A * B` for any `m×k` by `k×n` operands.
pub fn matmul_i32(a: &Tensor, b: &Tensor) -> Result<Tensor, AccelError> {
    a.expect_rank("A", 2)?;
    b.expect_rank("B", 2)?;
    let (m, k) = (a.shape[0], a.shape[1]);
    let (k2, n) = (b.shape[0], b.shape[1]);
    if k != k2 {
        return Err(AccelError::ShapeMismatch(format!(
            "inner dimensions differ: {m}x{k} by {k2}x{n}"
        )));
    }
    let mut c = vec![0i32; m * n];
    for i in 0..m {
        let row = &a.data[i * k..(i + 1) * k];
        let out = &mut c[i * n..(i + 1) * n];
        for (kk, &av) in row.iter().enumerate() {
            let brow = &b.data[kk * n..(kk + 1) * n];
            for (o, &bv) in out.iter_mut().zip(brow) {
                *o = o.wrapping_add(av.wrapping_mul(bv));
            }
        }
    }
    Tensor::new(vec![m, n], c)
}

/// 121×16 by 16×4 matrix product.
pub fn kernel_matmul_i32(a: &Tensor, b: &Tensor) -> Result<Tensor, AccelError> {
    a.expect_shape("A", &MM_A_SHAPE)?;
    b.expect_shape("B", &MM_B_SHAPE)?;
    matmul_i32(a, b)
}

/// Valid-padding, stride-1 cross-correlation summed over channels.
///
/// `input` is H×W×C, `filters` is F×C×KH×KW, the result is (H-KH+1)×(W-KW+1)×F.
pub fn conv2d_i32(input: &Tensor, filters: &Tensor) -> Result<Tensor, AccelError> {
    input.expect_rank("input", 3)?;
    filters.expect_rank("filters", 4)?;
    let (h, w, c) = (input.shape[0], input.shape[1], input.shape[2]);
    let (f, fc, kh, kw) = (filters.shape[0], filters.shape[1], filters.shape[2], filters.shape[3]);
    if fc != c || kh > h || kw > w || kh == 0 || kw == 0 {
        return Err(AccelError::ShapeMismatch(format!(
            "filters {:?} do not fit input {:?}",
            filters.shape, input.shape
        )));
    }
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    let mut out = vec![0i32; oh * ow * f];
    for y in 0..oh {
        for x in 0..ow {
            for fi in 0..f {
                let mut acc = 0i32;
                for ch in 0..c {
                    for dy in 0..kh {
                        let in_row = ((y + dy) * w + x) * c + ch;
                        let f_row = ((fi * c + ch) * kh + dy) * kw;
                        for dx in 0..kw {
                            let iv = input.data[in_row + dx * c];
                            let fv = filters.data[f_row + dx];
                            acc = acc.wrapping_add(iv.wrapping_mul(fv));
                        }
                    }
                }
                out[(y * ow + x) * f + fi] = acc;
            }
        }
    }
    Tensor::new(vec![oh, ow, f], out)
}

/// 16×16×3 input with eight 3×3 filters, producing 14×14×8.
pub fn kernel_conv2d_i32(input: &Tensor, filters: &Tensor) -> Result<Tensor, AccelError> {
    input.expect_shape("input", &CONV_INPUT_SHAPE)?;
    filters.expect_shape("filters", &CONV_FILTER_SHAPE)?;
    conv2d_i32(input, filters)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor {
        let len = shape.iter().product();
        Tensor::new(shape, (0..len).map(|_| rng.gen()).collect()).unwrap()
    }

    #[test]
    fn zero_matrix_gives_zero_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = Tensor::zeros(MM_A_SHAPE.to_vec());
        let b = random(MM_B_SHAPE.to_vec(), &mut rng);
        let c = kernel_matmul_i32(&a, &b).unwrap();
        assert_eq!(c, Tensor::zeros(vec![121, 4]));
    }

    #[test]
    fn identity_leaves_small_matrix_unchanged() {
        let a = Tensor::new(vec![2, 2], vec![1, 2, 3, 4]).unwrap();
        let eye = Tensor::new(vec![2, 2], vec![1, 0, 0, 1]).unwrap();
        assert_eq!(matmul_i32(&a, &eye).unwrap(), a);
    }

    #[test]
    fn shape_checks() {
        let a = Tensor::zeros(vec![2, 3]);
        let b = Tensor::zeros(vec![2, 3]);
        assert!(matches!(matmul_i32(&a, &b), Err(AccelError::ShapeMismatch(_))));
        assert!(kernel_matmul_i32(&Tensor::zeros(vec![2, 16]), &Tensor::zeros(vec![16, 4])).is_err());
        assert!(Tensor::new(vec![2, 2], vec![1]).is_err());
        assert!(kernel_conv2d_i32(&Tensor::zeros(vec![16, 16, 2]), &Tensor::zeros(vec![8, 3, 3, 3])).is_err());
    }

    #[test]
    fn wraps_on_overflow() {
        let a = Tensor::new(vec![1, 2], vec![i32::MAX, 1]).unwrap();
        let b = Tensor::new(vec![2, 1], vec![2, 3]).unwrap();
        let c = matmul_i32(&a, &b).unwrap();
        assert_eq!(c.data[0], i32::MAX.wrapping_mul(2).wrapping_add(3));
    }

    #[test]
    fn zero_filters_give_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let input = random(CONV_INPUT_SHAPE.to_vec(), &mut rng);
        let out = kernel_conv2d_i32(&input, &Tensor::zeros(CONV_FILTER_SHAPE.to_vec())).unwrap();
        assert_eq!(out, Tensor::zeros(CONV_OUTPUT_SHAPE.to_vec()));
    }

    #[test]
    fn delta_filter_selects_shifted_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let input = random(CONV_INPUT_SHAPE.to_vec(), &mut rng);
        let mut filters = Tensor::zeros(CONV_FILTER_SHAPE.to_vec());
        // filter 5, channel 2, centre tap
        filters.data[((5 * 3 + 2) * 3 + 1) * 3 + 1] = 1;
        let out = kernel_conv2d_i32(&input, &filters).unwrap();
        for y in 0..14 {
            for x in 0..14 {
                let expect = input.data[((y + 1) * 16 + (x + 1)) * 3 + 2];
                assert_eq!(out.data[(y * 14 + x) * 8 + 5], expect);
                assert_eq!(out.data[(y * 14 + x) * 8 + 4], 0);
            }
        }
    }

    #[test]
    fn raw_round_trip() {
        let t = Tensor::new(vec![3], vec![-1, 0, 7]).unwrap();
        assert_eq!(Tensor::from_raw_le(vec![3], &t.to_raw_le()).unwrap(), t);
        assert!(Tensor::from_raw_le(vec![1], &[0, 0, 0]).is_err());
    }
}
