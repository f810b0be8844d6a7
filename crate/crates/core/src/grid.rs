use crate::error::{DdrlError, Result};

/// Dense height x width x channels array, row-major with channels innermost.
///
/// Used for decoded images (values in [0,1]) and for encoded feature maps
/// (one channel per dictionary atom).
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

/// A pre-pool feature tensor is a grid whose channels are feature responses.
pub type FeatureTensor = Grid;

impl Grid {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Grid {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(DdrlError::shape(format!(
                "grid {height}x{width}x{channels} needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(Grid {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Grid {
            height,
            width,
            channels,
            data,
        }
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
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    fn offset(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[self.offset(y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        let o = self.offset(y, x, c);
        self.data[o] = v;
    }

    /// The channel vector at one spatial position.
    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> &[f64] {
        let o = self.offset(y, x, 0);
        &self.data[o..o + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, y: usize, x: usize) -> &mut [f64] {
        let o = self.offset(y, x, 0);
        let c = self.channels;
        &mut self.data[o..o + c]
    }

    /// Keep only the listed channels, in the listed order.
    pub fn select_channels(&self, channels: &[usize]) -> Result<Grid> {
        if let Some(&bad) = channels.iter().find(|&&c| c >= self.channels) {
            return Err(DdrlError::shape(format!(
                "channel {bad} out of range for a {}-channel grid",
                self.channels
            )));
        }
        Ok(Grid::from_fn(self.height, self.width, channels.len(), |y, x, c| {
            self.get(y, x, channels[c])
        }))
    }
}
