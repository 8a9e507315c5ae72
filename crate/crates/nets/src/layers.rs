//! Small differentiable building blocks on top of candle tensors.

use candle_core::{DType, Device, Tensor, D};
use ndarray::{Array2, Array3, ArrayView2, ArrayView3};

use crate::error::{NetError, Result};
use crate::params::{Init, ParamStore};

#[derive(Debug, Clone)]
pub struct Conv2d {
    weight: Tensor,
    bias: Option<Tensor>,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    /// Square `k`×`k` convolution with "same"-style padding `k / 2`.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        (c_in, c_out): (usize, usize),
        k: usize,
        stride: usize,
        bias: bool,
    ) -> Result<Self> {
        let weight = store.get(&format!("{name}.weight"), &[c_out, c_in, k, k], Init::FanIn(c_in * k * k))?;
        let bias = if bias {
            Some(store.get(&format!("{name}.bias"), &[c_out], Init::Const(0.0))?)
        } else {
            None
        };
        Ok(Conv2d {
            weight,
            bias,
            stride,
            padding: k / 2,
        })
    }

    /// Like [`Conv2d::new`] but every weight starts at zero.
    pub fn zeros(store: &mut ParamStore, name: &str, (c_in, c_out): (usize, usize), k: usize) -> Result<Self> {
        let weight = store.get(&format!("{name}.weight"), &[c_out, c_in, k, k], Init::Const(0.0))?;
        let bias = store.get(&format!("{name}.bias"), &[c_out], Init::Const(0.0))?;
        Ok(Conv2d {
            weight,
            bias: Some(bias),
            stride: 1,
            padding: k / 2,
        })
    }

    /// Patch embedding: kernel = stride = `p`, no padding.
    pub fn patchify(store: &mut ParamStore, name: &str, (c_in, c_out): (usize, usize), p: usize, bias: bool) -> Result<Self> {
        let mut conv = Conv2d::new(store, name, (c_in, c_out), p, p, bias)?;
        conv.padding = 0;
        Ok(conv)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv2d(&self.weight, self.padding, self.stride, 1, 1)?;
        Ok(match &self.bias {
            Some(b) => y.broadcast_add(&b.reshape((1, b.dim(0)?, 1, 1))?)?,
            None => y,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    weight: Tensor,
    bias: Option<Tensor>,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, (c_in, c_out): (usize, usize), bias: bool) -> Result<Self> {
        let weight = store.get(&format!("{name}.weight"), &[c_in, c_out], Init::FanIn(c_in))?;
        let bias = if bias {
            Some(store.get(&format!("{name}.bias"), &[c_out], Init::Const(0.0))?)
        } else {
            None
        };
        Ok(Linear { weight, bias })
    }

    /// `x`: `[..., c_in]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.broadcast_matmul(&self.weight)?;
        Ok(match &self.bias {
            Some(b) => y.broadcast_add(b)?,
            None => y,
        })
    }
}

/// Normalization over the last dimension with learned scale and shift.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    gain: Tensor,
    shift: Tensor,
    eps: f64,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Result<Self> {
        Ok(LayerNorm {
            gain: store.get(&format!("{name}.gain"), &[width], Init::Const(1.0))?,
            shift: store.get(&format!("{name}.shift"), &[width], Init::Const(0.0))?,
            eps: 1e-5,
        })
    }

    pub fn dtype(&self) -> DType {
        self.gain.dtype()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(normed.broadcast_mul(&self.gain)?.broadcast_add(&self.shift)?)
    }
}

pub fn softmax(x: &Tensor, dim: usize) -> Result<Tensor> {
    Ok(candle_nn::ops::softmax(x, dim)?)
}

/// Interpolation matrix `[out, in]` for bilinear resampling with half-pixel centers and edge clamping.
pub fn bilinear_matrix(n_in: usize, n_out: usize) -> Array2<f64> {
    let mut m = Array2::<f64>::zeros((n_out, n_in));
    let ratio = n_in as f64 / n_out as f64;
    for i in 0..n_out {
        let src = ((i as f64 + 0.5) * ratio - 0.5).clamp(0.0, (n_in - 1) as f64);
        let i0 = src.floor() as usize;
        let i1 = (i0 + 1).min(n_in - 1);
        let w = src - i0 as f64;
        m[[i, i0]] += 1.0 - w;
        m[[i, i1]] += w;
    }
    m
}

fn matrix_tensor(m: &Array2<f64>, dtype: DType, device: &Device) -> Result<Tensor> {
    let (r, c) = m.dim();
    Ok(Tensor::from_iter(m.iter().copied(), device)?.reshape((r, c))?.to_dtype(dtype)?)
}

/// Resizes the last two dimensions of `x` bilinearly to `(h, w)`.
pub fn resize(x: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let dims = x.dims().to_vec();
    let rank = dims.len();
    if rank < 2 {
        return Err(NetError::Argument(format!("resize needs rank >= 2, got {dims:?}")));
    }
    let (h_in, w_in) = (dims[rank - 2], dims[rank - 1]);
    if (h_in, w_in) == (h, w) {
        return Ok(x.clone());
    }
    let lead: usize = dims[..rank - 2].iter().product();
    let uw = matrix_tensor(&bilinear_matrix(w_in, w), x.dtype(), x.device())?;
    let uh = matrix_tensor(&bilinear_matrix(h_in, h), x.dtype(), x.device())?;
    // rows: [lead * h_in, w_in] x [w_in, w]
    let y = x.contiguous()?.reshape((lead * h_in, w_in))?.matmul(&uw.t()?)?;
    // columns: move h to the end, then the same trick
    let y = y.reshape((lead, h_in, w))?.transpose(1, 2)?.contiguous()?;
    let y = y.reshape((lead * w, h_in))?.matmul(&uh.t()?)?;
    let y = y.reshape((lead, w, h))?.transpose(1, 2)?.contiguous()?;
    let mut out = dims[..rank - 2].to_vec();
    out.extend([h, w]);
    Ok(y.reshape(out)?)
}

pub fn image_tensor(img: ArrayView3<f32>, dtype: DType) -> Result<Tensor> {
    let (c, h, w) = img.dim();
    let t = Tensor::from_iter(img.iter().copied(), &Device::Cpu)?.reshape((1, c, h, w))?;
    Ok(t.to_dtype(dtype)?)
}

pub fn map_tensor(map: ArrayView2<f32>, dtype: DType) -> Result<Tensor> {
    let (h, w) = map.dim();
    let t = Tensor::from_iter(map.iter().copied(), &Device::Cpu)?.reshape((h, w))?;
    Ok(t.to_dtype(dtype)?)
}

pub fn tensor_to_array2(t: &Tensor) -> Result<Array2<f32>> {
    let (h, w) = t.dims2()?;
    let v: Vec<f32> = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?;
    Ok(Array2::from_shape_vec((h, w), v).expect("length matches dims"))
}

pub fn tensor_to_array3(t: &Tensor) -> Result<Array3<f32>> {
    let (c, h, w) = t.dims3()?;
    let v: Vec<f32> = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?;
    Ok(Array3::from_shape_vec((c, h, w), v).expect("length matches dims"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_rows_sum_to_one() {
        for (a, b) in [(3, 12), (24, 96), (5, 5), (1, 4)] {
            let m = bilinear_matrix(a, b);
            for row in m.rows() {
                assert!((row.sum() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn resize_matches_core_resampler() {
        let src = Array2::from_shape_fn((3, 5), |(y, x)| (y * 5 + x) as f32 * 0.3 - 1.0);
        let t = map_tensor(src.view(), DType::F64).unwrap();
        let got = tensor_to_array2(&resize(&t, 12, 20).unwrap()).unwrap();
        let want = stereo_core::image::resize_bilinear(src.view(), 12, 20);
        for (a, b) in got.iter().zip(want.iter()) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn layer_norm_output_is_standardized() {
        let mut s = ParamStore::new(DType::F64, 0);
        let ln = LayerNorm::new(&mut s, "ln", 6).unwrap();
        let x = Tensor::new(&[[1.0f64, 2.0, 3.0, 4.0, 8.0, -2.0]], &Device::Cpu).unwrap();
        let y: Vec<f64> = ln.forward(&x).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        let mean: f64 = y.iter().sum::<f64>() / 6.0;
        let var: f64 = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 6.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-4);
    }
}
