use ndarray::{Array1, Array2, Array3, Array4, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::eqlv2::sigmoid;
use crate::error::{Error, Result};

/// Dense `height x width x channels` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub data: Array3<f64>,
}

impl FeatureMap {
    pub fn new(data: Array3<f64>) -> Result<Self> {
        let (h, w, c) = data.dim();
        if h == 0 || w == 0 || c == 0 {
            return Err(Error::ShapeMismatch(format!("empty feature map {h}x{w}x{c}")));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite feature value".into()));
        }
        Ok(FeatureMap { data })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        FeatureMap {
            data: Array3::zeros((height, width, channels)),
        }
    }

    pub fn random(height: usize, width: usize, channels: usize, rng: &mut ChaCha8Rng) -> Self {
        FeatureMap {
            data: Array3::from_shape_simple_fn((height, width, channels), || rng.sample(StandardNormal)),
        }
    }

    pub fn height(&self) -> usize {
        self.data.dim().0
    }

    pub fn width(&self) -> usize {
        self.data.dim().1
    }

    pub fn channels(&self) -> usize {
        self.data.dim().2
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    /// Sum of all values, accumulated in row-major order.
    pub fn checksum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> FeatureMap {
        FeatureMap {
            data: self.data.mapv(f),
        }
    }

    pub fn add(&self, other: &FeatureMap) -> Result<FeatureMap> {
        same_shape(self, other)?;
        Ok(FeatureMap {
            data: &self.data + &other.data,
        })
    }

    /// 2x2 average pooling (odd trailing rows/columns are dropped).
    pub fn avg_pool2(&self) -> Result<FeatureMap> {
        let (h, w, c) = self.shape();
        if h < 2 || w < 2 {
            return Err(Error::ShapeMismatch(format!("cannot halve {h}x{w}")));
        }
        let out = Array3::from_shape_fn((h / 2, w / 2, c), |(y, x, ch)| {
            let d = &self.data;
            (d[[2 * y, 2 * x, ch]]
                + d[[2 * y, 2 * x + 1, ch]]
                + d[[2 * y + 1, 2 * x, ch]]
                + d[[2 * y + 1, 2 * x + 1, ch]])
                * 0.25
        });
        Ok(FeatureMap { data: out })
    }

    /// Nearest-neighbour 2x upsampling.
    pub fn upsample2(&self) -> FeatureMap {
        let (h, w, c) = self.shape();
        FeatureMap {
            data: Array3::from_shape_fn((2 * h, 2 * w, c), |(y, x, ch)| self.data[[y / 2, x / 2, ch]]),
        }
    }

    /// Per-pixel linear channel map: `out[y, x, :] = weights . in[y, x, :]`,
    /// with `weights` shaped `(out_channels, in_channels)`.
    pub fn pointwise(&self, weights: &Array2<f64>) -> Result<FeatureMap> {
        let (h, w, c) = self.shape();
        if weights.ncols() != c {
            return Err(Error::ShapeMismatch(format!(
                "1x1 map expects {} input channels, got {c}",
                weights.ncols()
            )));
        }
        let flat = self.data.view().into_shape_with_order((h * w, c)).expect("contiguous");
        let out = flat.dot(&weights.t());
        Ok(FeatureMap {
            data: out.into_shape_with_order((h, w, weights.nrows())).expect("sized"),
        })
    }
}

fn same_shape(a: &FeatureMap, b: &FeatureMap) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn clamp_index(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// 3x3 kernel shaped `(out_channels, in_channels, 3, 3)`, no bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel {
    pub weights: Array4<f64>,
}

impl ConvKernel {
    pub fn random(out_channels: usize, in_channels: usize, rng: &mut ChaCha8Rng) -> Self {
        let scale = 1.0 / (9.0 * in_channels as f64).sqrt();
        ConvKernel {
            weights: Array4::from_shape_simple_fn((out_channels, in_channels, 3, 3), || {
                scale * rng.sample::<f64, _>(StandardNormal)
            }),
        }
    }

    /// Every tap equal, summing to 1 per output channel.
    pub fn averaging(channels: usize) -> Self {
        ConvKernel {
            weights: Array4::from_elem((channels, channels, 3, 3), 1.0 / (9.0 * channels as f64)),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weights.dim().1
    }

    pub fn out_channels(&self) -> usize {
        self.weights.dim().0
    }
}

/// Same-size 3x3 convolution with the given dilation and replicate padding.
pub fn conv2d(x: &FeatureMap, kernel: &ConvKernel, dilation: usize) -> Result<FeatureMap> {
    let (h, w, c) = x.shape();
    if kernel.in_channels() != c {
        return Err(Error::ShapeMismatch(format!(
            "kernel expects {} channels, input has {c}",
            kernel.in_channels()
        )));
    }
    let d = dilation as isize;
    let k = &kernel.weights;
    let out = Array3::from_shape_fn((h, w, kernel.out_channels()), |(y, xx, o)| {
        let mut acc = 0.0;
        for ky in 0..3 {
            let sy = clamp_index(y as isize + (ky as isize - 1) * d, h);
            for kx in 0..3 {
                let sx = clamp_index(xx as isize + (kx as isize - 1) * d, w);
                for i in 0..c {
                    acc += k[[o, i, ky, kx]] * x.data[[sy, sx, i]];
                }
            }
        }
        acc
    });
    Ok(FeatureMap { data: out })
}

/// 5x5 box average per channel with replicate padding.
fn local_average(x: &FeatureMap) -> FeatureMap {
    let (h, w, c) = x.shape();
    let out = Array3::from_shape_fn((h, w, c), |(y, xx, ch)| {
        let mut acc = 0.0;
        for dy in -2..=2isize {
            for dx in -2..=2isize {
                acc += x.data[[clamp_index(y as isize + dy, h), clamp_index(xx as isize + dx, w), ch]];
            }
        }
        acc / 25.0
    });
    FeatureMap { data: out }
}

/// Parameters of the 1x1 map producing the switch from the averaged input.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchParams {
    pub weights: Array1<f64>,
    pub bias: f64,
}

impl SwitchParams {
    pub fn random(channels: usize, rng: &mut ChaCha8Rng) -> Self {
        SwitchParams {
            weights: Array1::from_shape_simple_fn(channels, || 0.5 * rng.sample::<f64, _>(StandardNormal)),
            bias: 0.0,
        }
    }
}

/// Source of the per-location switch `S` in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub enum Switch {
    /// Computed from the input being convolved.
    Adaptive(SwitchParams),
    /// The same value everywhere.
    Constant(f64),
    /// A precomputed `height x width` map.
    Frozen(Array2<f64>),
}

/// `S = logistic(params . local_average(x))` at every location.
pub fn switch_map(x: &FeatureMap, params: &SwitchParams) -> Result<Array2<f64>> {
    let (h, w, c) = x.shape();
    if params.weights.len() != c {
        return Err(Error::ShapeMismatch(format!(
            "switch expects {} channels, input has {c}",
            params.weights.len()
        )));
    }
    let avg = local_average(x);
    Ok(Array2::from_shape_fn((h, w), |(y, xx)| {
        let z: f64 = (0..c).map(|ch| params.weights[ch] * avg.data[[y, xx, ch]]).sum();
        sigmoid(z + params.bias)
    }))
}

/// Switchable atrous convolution:
/// `S * conv(x, w, dilation 1) + (1 - S) * conv(x, w, dilation 3)` with one
/// shared kernel. Output has the input's spatial size.
pub fn sac_apply(x: &FeatureMap, kernel: &ConvKernel, switch: &Switch) -> Result<FeatureMap> {
    let (h, w, _) = x.shape();
    let s = match switch {
        Switch::Adaptive(p) => switch_map(x, p)?,
        Switch::Constant(v) => {
            if !(0.0..=1.0).contains(v) {
                return Err(Error::InvalidInput(format!("switch value {v} outside [0, 1]")));
            }
            Array2::from_elem((h, w), *v)
        }
        Switch::Frozen(m) => {
            if m.dim() != (h, w) {
                return Err(Error::ShapeMismatch(format!(
                    "switch map {:?} vs feature map {h}x{w}",
                    m.dim()
                )));
            }
            m.clone()
        }
    };
    let near = conv2d(x, kernel, 1)?;
    let far = conv2d(x, kernel, 3)?;
    let s3 = s.insert_axis(Axis(2));
    Ok(FeatureMap {
        data: &near.data * &s3 + &far.data * &s3.mapv(|v| 1.0 - v),
    })
}

/// Channel gate parameters: `scale = logistic(weights . gap(x) + bias)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeParams {
    /// `(channels, channels)`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl SeParams {
    pub fn random(channels: usize, rng: &mut ChaCha8Rng) -> Self {
        SeParams {
            weights: Array2::from_shape_simple_fn((channels, channels), || {
                rng.sample::<f64, _>(StandardNormal) / (channels as f64).sqrt()
            }),
            bias: Array1::zeros(channels),
        }
    }

    pub fn zeros(channels: usize) -> Self {
        SeParams {
            weights: Array2::zeros((channels, channels)),
            bias: Array1::zeros(channels),
        }
    }
}

/// Scales each channel of `x` by a logistic function of the globally averaged
/// channel activations.
pub fn se_fuse(x: &FeatureMap, params: &SeParams) -> Result<FeatureMap> {
    let c = x.channels();
    if params.weights.dim() != (c, c) || params.bias.len() != c {
        return Err(Error::ShapeMismatch(format!(
            "SE parameters {:?}/{} for {c} channels",
            params.weights.dim(),
            params.bias.len()
        )));
    }
    let gap = x.data.mean_axis(Axis(0)).and_then(|m| m.mean_axis(Axis(0))).expect("non-empty");
    let scale = (params.weights.dot(&gap) + &params.bias).mapv(sigmoid);
    Ok(FeatureMap {
        data: &x.data * &scale,
    })
}
