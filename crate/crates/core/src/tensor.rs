//! Real-valued raster used for images, parameter fields and intermediate maps.

use std::fmt;

use crate::error::{Error, Result};

/// `height × width × channels` raster stored channel-planar: all pixels of
/// channel 0, then channel 1, and so on. Each plane is row-major.
///
/// The same type carries per-pixel parameter fields. A field may have
/// extent 1 along any axis, in which case it broadcasts along that axis
/// (see [`ImageTensor::broadcasts_to`]).
#[derive(Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(height, width, channels)?;
        if data.len() != height * width * channels {
            return Err(Error::shape(
                format!("{} values", height * width * channels),
                format!("{} values", data.len()),
            ));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        check_dims(height, width, channels)?;
        Ok(Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Result<Self> {
        Self::filled(height, width, channels, 0.0)
    }

    /// Builds a tensor from a function of `(row, col, channel)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        check_dims(height, width, channels)?;
        let mut data = Vec::with_capacity(height * width * channels);
        for c in 0..channels {
            for i in 0..height {
                for j in 0..width {
                    data.push(f(i, j, c));
                }
            }
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Wraps a buffer laid out interleaved (`[r, g, b, r, g, b, ...]`).
    pub fn from_interleaved(
        height: usize,
        width: usize,
        channels: usize,
        interleaved: &[f64],
    ) -> Result<Self> {
        check_dims(height, width, channels)?;
        if interleaved.len() != height * width * channels {
            return Err(Error::shape(
                format!("{} values", height * width * channels),
                format!("{} values", interleaved.len()),
            ));
        }
        Self::from_fn(height, width, channels, |i, j, c| {
            interleaved[(i * width + j) * channels + c]
        })
    }

    pub fn to_interleaved(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.data.len());
        for i in 0..self.height {
            for j in 0..self.width {
                for c in 0..self.channels {
                    out.push(self.get(i, j, c));
                }
            }
        }
        out
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
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
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, c: usize) -> usize {
        (c * self.height + i) * self.width + j
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, c: usize) -> f64 {
        self.data[self.index(i, j, c)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, c: usize, value: f64) {
        let idx = self.index(i, j, c);
        self.data[idx] = value;
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }

    pub fn clamped(&self) -> Self {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    /// Per-pixel mean over channels, as a single-channel tensor.
    pub fn channel_mean(&self) -> Self {
        let n = self.plane_len();
        let scale = 1.0 / self.channels as f64;
        let mut data = vec![0.0; n];
        for c in 0..self.channels {
            for (acc, &v) in data.iter_mut().zip(self.plane(c)) {
                *acc += v;
            }
        }
        data.iter_mut().for_each(|v| *v *= scale);
        Self {
            height: self.height,
            width: self.width,
            channels: 1,
            data,
        }
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.dims() == other.dims()
    }

    pub(crate) fn ensure_same_shape(&self, other: &Self) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::shape(self.shape_string(), other.shape_string()))
        }
    }

    /// True when `self` can be read at every index of a tensor with the given
    /// dims, each axis either matching or of extent 1.
    pub fn broadcasts_to(&self, height: usize, width: usize, channels: usize) -> bool {
        (self.height == height || self.height == 1)
            && (self.width == width || self.width == 1)
            && (self.channels == channels || self.channels == 1)
    }

    /// Reads with broadcasting along unit axes.
    #[inline]
    pub fn get_broadcast(&self, i: usize, j: usize, c: usize) -> f64 {
        let i = if self.height == 1 { 0 } else { i };
        let j = if self.width == 1 { 0 } else { j };
        let c = if self.channels == 1 { 0 } else { c };
        self.get(i, j, c)
    }

    /// Broadcast index of `(i, j, c)` into this tensor's storage.
    #[inline]
    pub fn broadcast_index(&self, i: usize, j: usize, c: usize) -> usize {
        let i = if self.height == 1 { 0 } else { i };
        let j = if self.width == 1 { 0 } else { j };
        let c = if self.channels == 1 { 0 } else { c };
        self.index(i, j, c)
    }

    pub(crate) fn shape_string(&self) -> String {
        format!("{}x{}x{}", self.height, self.width, self.channels)
    }
}

impl fmt::Debug for ImageTensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ImageTensor")
            .field("height", &self.height)
            .field("width", &self.width)
            .field("channels", &self.channels)
            .finish_non_exhaustive()
    }
}

fn check_dims(height: usize, width: usize, channels: usize) -> Result<()> {
    if height == 0 || width == 0 || channels == 0 {
        return Err(Error::InvalidDims {
            height,
            width,
            channels,
        });
    }
    Ok(())
}
