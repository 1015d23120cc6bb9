use alloc::vec;
use alloc::vec::Vec;

use crate::error::invalid;
use crate::Result;

/// Dense planar `channels × height × width` array of reals.
///
/// Element `(c, y, x)` lives at `data[(c * height + y) * width + x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::filled(channels, height, width, 0.0)
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        Tensor {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(invalid!(
                "tensor data has {} elements, shape {}x{}x{} needs {}",
                data.len(),
                channels,
                height,
                width,
                channels * height * width
            ));
        }
        Ok(Tensor {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            channels: 1,
            height: 1,
            width: 1,
            data: vec![value],
        }
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    #[inline]
    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn at_mut(&mut self, c: usize, y: usize, x: usize) -> &mut f64 {
        &mut self.data[(c * self.height + y) * self.width + x]
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.shape() == other.shape()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// An image with 1 (grayscale) or 3 (RGB) planar channels.
///
/// Values are nominally in `[0, 1]`; the differentiable path does not clip,
/// so use [`Frame::clamped`] before emitting pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    tensor: Tensor,
}

impl Frame {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        Self::from_tensor(Tensor::from_vec(channels, height, width, data)?)
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Result<Self> {
        Self::from_tensor(Tensor::filled(channels, height, width, value))
    }

    pub fn from_tensor(tensor: Tensor) -> Result<Self> {
        if tensor.channels != 1 && tensor.channels != 3 {
            return Err(invalid!("frames have 1 or 3 channels, got {}", tensor.channels));
        }
        if tensor.height == 0 || tensor.width == 0 {
            return Err(invalid!("empty frame"));
        }
        if !tensor.all_finite() {
            return Err(invalid!("frame contains non-finite values"));
        }
        Ok(Frame { tensor })
    }

    /// Builds a single-channel frame from a row-major closure.
    pub fn from_fn_gray(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Frame {
            tensor: Tensor {
                channels: 1,
                height,
                width,
                data,
            },
        }
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.tensor.channels
    }
    #[inline]
    pub fn height(&self) -> usize {
        self.tensor.height
    }
    #[inline]
    pub fn width(&self) -> usize {
        self.tensor.width
    }
    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.tensor.at(c, y, x)
    }
    pub fn data(&self) -> &[f64] {
        &self.tensor.data
    }
    pub fn plane(&self, c: usize) -> &[f64] {
        self.tensor.plane(c)
    }
    pub fn as_tensor(&self) -> &Tensor {
        &self.tensor
    }
    pub fn into_tensor(self) -> Tensor {
        self.tensor
    }

    /// Values clipped into `[0, 1]`.
    pub fn clamped(&self) -> Frame {
        let mut t = self.tensor.clone();
        for v in &mut t.data {
            *v = v.clamp(0.0, 1.0);
        }
        Frame { tensor: t }
    }

    /// Luma with weights 0.299 / 0.587 / 0.114; grayscale frames pass through.
    pub fn to_gray(&self) -> Frame {
        if self.channels() == 1 {
            return self.clone();
        }
        let n = self.tensor.plane_len();
        let (r, g, b) = (self.plane(0), self.plane(1), self.plane(2));
        let data = (0..n).map(|i| LUMA[0] * r[i] + LUMA[1] * g[i] + LUMA[2] * b[i]).collect();
        Frame {
            tensor: Tensor {
                channels: 1,
                height: self.height(),
                width: self.width(),
                data,
            },
        }
    }

    pub fn mean_abs_diff(&self, other: &Frame) -> f64 {
        let n = self.tensor.len().max(1) as f64;
        self.data()
            .iter()
            .zip(other.data())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / n
    }

    pub fn max_abs_diff(&self, other: &Frame) -> f64 {
        self.tensor.max_abs_diff(&other.tensor)
    }

    pub fn same_dims(&self, other: &Frame) -> bool {
        self.tensor.shape() == other.tensor.shape()
    }
}

pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// Dense displacement field in pixels, from frame `t-1` toward frame `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub height: usize,
    pub width: usize,
    pub dx: Vec<f64>,
    pub dy: Vec<f64>,
}

impl FlowField {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self::constant(height, width, 0.0, 0.0)
    }

    pub fn constant(height: usize, width: usize, dx: f64, dy: f64) -> Self {
        FlowField {
            height,
            width,
            dx: vec![dx; height * width],
            dy: vec![dy; height * width],
        }
    }

    pub fn new(height: usize, width: usize, dx: Vec<f64>, dy: Vec<f64>) -> Result<Self> {
        let n = height * width;
        if dx.len() != n || dy.len() != n {
            return Err(invalid!("flow planes must have {} elements", n));
        }
        let bound = width.max(height) as f64;
        if dx.iter().chain(&dy).any(|v| !v.is_finite() || v.abs() > bound) {
            return Err(invalid!("flow values must be finite and within ±{}", bound));
        }
        Ok(FlowField {
            height,
            width,
            dx,
            dy,
        })
    }

    /// Two-plane tensor `[dx; dy]`.
    pub fn to_tensor(&self) -> Tensor {
        let mut data = Vec::with_capacity(2 * self.dx.len());
        data.extend_from_slice(&self.dx);
        data.extend_from_slice(&self.dy);
        Tensor {
            channels: 2,
            height: self.height,
            width: self.width,
            data,
        }
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        if t.channels != 2 {
            return Err(invalid!("flow tensors have 2 planes, got {}", t.channels));
        }
        Ok(FlowField {
            height: t.height,
            width: t.width,
            dx: t.plane(0).to_vec(),
            dy: t.plane(1).to_vec(),
        })
    }

    pub fn scaled(&self, k: f64) -> FlowField {
        FlowField {
            height: self.height,
            width: self.width,
            dx: self.dx.iter().map(|v| v * k).collect(),
            dy: self.dy.iter().map(|v| v * k).collect(),
        }
    }

    /// Mean Euclidean endpoint error against another field.
    pub fn mean_endpoint_error(&self, other: &FlowField) -> f64 {
        use num_traits::Float;
        let n = self.dx.len().max(1) as f64;
        (0..self.dx.len())
            .map(|i| {
                let ex = self.dx[i] - other.dx[i];
                let ey = self.dy[i] - other.dy[i];
                Float::sqrt(ex * ex + ey * ey)
            })
            .sum::<f64>()
            / n
    }
}
