use crate::fer::ops::{self, BatchNormParams, Padding};
use crate::fer::tensor::{Shape, Tensor};
use crate::fer::{EmotionDistribution, FerError, NUM_CLASSES};
use crate::frame::GrayPlane;

/// Side length of the square input face.
pub const INPUT_SIZE: usize = 48;

/// Conv layers: `N` biases follow the weights.
pub const FLAG_HAS_BIAS: u32 = 1;
/// Push the current main activation onto the skip stack before this layer.
pub const FLAG_SAVE_INPUT: u32 = 1 << 1;
/// Apply this layer to the top of the skip stack instead of the main path.
pub const FLAG_ON_SKIP: u32 = 1 << 2;
const KNOWN_FLAGS: u32 = FLAG_HAS_BIAS | FLAG_SAVE_INPUT | FLAG_ON_SKIP;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum LayerKind {
    Conv = 0,
    DepthwiseConv = 1,
    PointwiseConv = 2,
    BatchNorm = 3,
    ReLU = 4,
    GlobalAvgPool = 5,
    Softmax = 6,
    ResidualAdd = 7,
    MaxPool = 8,
}

impl LayerKind {
    pub fn from_u8(v: u8) -> Option<Self> {
        use LayerKind::*;
        [
            Conv,
            DepthwiseConv,
            PointwiseConv,
            BatchNorm,
            ReLU,
            GlobalAvgPool,
            Softmax,
            ResidualAdd,
            MaxPool,
        ]
        .get(v as usize)
        .copied()
    }

    fn is_conv(self) -> bool {
        matches!(
            self,
            LayerKind::Conv | LayerKind::DepthwiseConv | LayerKind::PointwiseConv
        )
    }
}

/// The six-field shape header stored per layer. `kind` stays a raw byte so
/// files with unknown kinds still parse and fail in the shape check.
///
/// For batch norm, `kernel` holds the bit pattern of the `f32` epsilon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LayerHeader {
    pub kind: u8,
    pub kernel: u32,
    pub stride: u32,
    pub padding: u32,
    pub in_channels: u32,
    pub out_channels: u32,
    pub flags: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub header: LayerHeader,
    pub params: Vec<f32>,
}

impl Layer {
    fn raw(kind: LayerKind, kernel: u32, stride: u32, padding: u32, m: usize, n: usize, params: Vec<f32>) -> Self {
        Self {
            header: LayerHeader {
                kind: kind as u8,
                kernel,
                stride,
                padding,
                in_channels: m as u32,
                out_channels: n as u32,
                flags: 0,
            },
            params,
        }
    }

    fn with_bias(mut self, bias: Option<Vec<f32>>) -> Self {
        if let Some(b) = bias {
            self.header.flags |= FLAG_HAS_BIAS;
            self.params.extend(b);
        }
        self
    }

    /// `weights` is `[out][in][ky][kx]`.
    pub fn conv(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
        weights: Vec<f32>,
        bias: Option<Vec<f32>>,
    ) -> Self {
        Self::raw(
            LayerKind::Conv,
            kernel as u32,
            stride as u32,
            padding.code(),
            in_channels,
            out_channels,
            weights,
        )
        .with_bias(bias)
    }

    /// `weights` is `[channel][ky][kx]`.
    pub fn depthwise(channels: usize, kernel: usize, stride: usize, padding: Padding, weights: Vec<f32>) -> Self {
        Self::raw(
            LayerKind::DepthwiseConv,
            kernel as u32,
            stride as u32,
            padding.code(),
            channels,
            channels,
            weights,
        )
    }

    /// `weights` is `[out][in]`.
    pub fn pointwise(
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        weights: Vec<f32>,
        bias: Option<Vec<f32>>,
    ) -> Self {
        Self::raw(
            LayerKind::PointwiseConv,
            1,
            stride as u32,
            Padding::Valid.code(),
            in_channels,
            out_channels,
            weights,
        )
        .with_bias(bias)
    }

    pub fn batch_norm(gamma: &[f32], beta: &[f32], mean: &[f32], var: &[f32], eps: f32) -> Self {
        let c = gamma.len();
        let params = [gamma, beta, mean, var].concat();
        Self::raw(LayerKind::BatchNorm, eps.to_bits(), 0, 0, c, c, params)
    }

    fn plain(kind: LayerKind, channels: usize) -> Self {
        Self::raw(kind, 0, 0, 0, channels, channels, Vec::new())
    }

    pub fn relu(channels: usize) -> Self {
        Self::plain(LayerKind::ReLU, channels)
    }

    pub fn global_avg_pool(channels: usize) -> Self {
        Self::plain(LayerKind::GlobalAvgPool, channels)
    }

    pub fn softmax(channels: usize) -> Self {
        Self::plain(LayerKind::Softmax, channels)
    }

    pub fn residual_add(channels: usize) -> Self {
        Self::plain(LayerKind::ResidualAdd, channels)
    }

    pub fn max_pool(channels: usize, kernel: usize, stride: usize, padding: Padding) -> Self {
        Self::raw(
            LayerKind::MaxPool,
            kernel as u32,
            stride as u32,
            padding.code(),
            channels,
            channels,
            Vec::new(),
        )
    }

    pub fn save_input(mut self) -> Self {
        self.header.flags |= FLAG_SAVE_INPUT;
        self
    }

    pub fn on_skip(mut self) -> Self {
        self.header.flags |= FLAG_ON_SKIP;
        self
    }

    pub fn kind(&self) -> Option<LayerKind> {
        LayerKind::from_u8(self.header.kind)
    }

    /// Learnable scalars: conv weights and biases, batch-norm gamma and beta.
    pub fn param_count(&self) -> usize {
        match self.kind() {
            Some(k) if k.is_conv() => self.params.len(),
            Some(LayerKind::BatchNorm) => 2 * self.header.in_channels as usize,
            _ => 0,
        }
    }

    fn has_bias(&self) -> bool {
        self.header.flags & FLAG_HAS_BIAS != 0
    }

    /// Weights and optional bias for conv kinds.
    fn split_bias(&self) -> (&[f32], Option<&[f32]>) {
        if self.has_bias() {
            let n = self.header.out_channels as usize;
            let (w, b) = self.params.split_at(self.params.len() - n);
            (w, Some(b))
        } else {
            (&self.params, None)
        }
    }

    fn bn_params(&self) -> BatchNormParams<'_> {
        let c = self.header.in_channels as usize;
        BatchNormParams {
            gamma: &self.params[..c],
            beta: &self.params[c..2 * c],
            mean: &self.params[2 * c..3 * c],
            var: &self.params[3 * c..],
            eps: f32::from_bits(self.header.kernel),
        }
    }

    /// Checks this layer in isolation against its input shape and returns
    /// the output shape.
    fn check(&self, input: Shape) -> Result<Shape, String> {
        let h = &self.header;
        let kind = self.kind().ok_or_else(|| format!("unknown layer kind {}", h.kind))?;
        let (m, n) = (h.in_channels as usize, h.out_channels as usize);
        let (d, stride) = (h.kernel as usize, h.stride as usize);
        if m == 0 || n == 0 {
            return Err("channel counts must be at least 1".into());
        }
        if m != input.2 {
            return Err(format!("expects {m} input channels, got {}", input.2));
        }
        if h.flags & !KNOWN_FLAGS != 0 {
            return Err(format!("unknown flag bits {:#x}", h.flags & !KNOWN_FLAGS));
        }
        if h.flags & FLAG_SAVE_INPUT != 0 && h.flags & FLAG_ON_SKIP != 0 {
            return Err("save-input and on-skip are exclusive".into());
        }
        if self.has_bias() && !kind.is_conv() {
            return Err("bias flag on a layer without bias".into());
        }
        if self.params.iter().any(|v| !v.is_finite()) {
            return Err("non-finite parameter".into());
        }
        let bias_len = if self.has_bias() { n } else { 0 };
        let expect_params = |len: usize| -> Result<(), String> {
            if self.params.len() == len {
                Ok(())
            } else {
                Err(format!("expected {len} parameters, found {}", self.params.len()))
            }
        };
        let window = |input: Shape| -> Result<(usize, usize), String> {
            if d == 0 || d % 2 == 0 {
                return Err(format!("kernel {d} must be odd"));
            }
            if stride == 0 {
                return Err("stride must be at least 1".into());
            }
            let padding = Padding::from_code(h.padding).ok_or_else(|| format!("unknown padding code {}", h.padding))?;
            ops::window_output(input, d, stride, padding)
                .map(|(oh, ow, _, _)| (oh, ow))
                .ok_or_else(|| format!("{d}x{d} window does not fit {}x{}", input.0, input.1))
        };
        let parameterless = |kind_name: &str| -> Result<(), String> {
            if d != 0 || stride != 0 || h.padding != 0 {
                return Err(format!("{kind_name} takes no kernel, stride or padding"));
            }
            if m != n {
                return Err(format!("{kind_name} must keep {m} channels, declares {n}"));
            }
            expect_params(0)
        };
        match kind {
            LayerKind::Conv => {
                expect_params(n * m * d * d + bias_len)?;
                let (oh, ow) = window(input)?;
                Ok((oh, ow, n))
            }
            LayerKind::DepthwiseConv => {
                if m != n {
                    return Err(format!("depthwise must keep {m} channels, declares {n}"));
                }
                expect_params(m * d * d + bias_len)?;
                let (oh, ow) = window(input)?;
                Ok((oh, ow, m))
            }
            LayerKind::PointwiseConv => {
                if d != 1 {
                    return Err(format!("pointwise kernel must be 1, got {d}"));
                }
                expect_params(n * m + bias_len)?;
                let (oh, ow) = window(input)?;
                Ok((oh, ow, n))
            }
            LayerKind::BatchNorm => {
                if m != n {
                    return Err(format!("batch norm must keep {m} channels, declares {n}"));
                }
                if stride != 0 || h.padding != 0 {
                    return Err("batch norm takes no stride or padding".into());
                }
                let eps = f32::from_bits(h.kernel);
                if !(eps.is_finite() && eps >= 0.0) {
                    return Err(format!("invalid epsilon {eps}"));
                }
                expect_params(4 * m)?;
                let bn = self.bn_params();
                if bn.var.iter().any(|&v| v < 0.0) {
                    return Err("negative variance".into());
                }
                if bn.var.iter().any(|&v| f64::from(v) + f64::from(eps) <= 0.0) {
                    return Err("zero variance with zero epsilon".into());
                }
                Ok(input)
            }
            LayerKind::ReLU => parameterless("relu").map(|_| input),
            LayerKind::Softmax => parameterless("softmax").map(|_| input),
            LayerKind::ResidualAdd => parameterless("residual add").map(|_| input),
            LayerKind::GlobalAvgPool => parameterless("global average pool").map(|_| (1, 1, m)),
            LayerKind::MaxPool => {
                if m != n {
                    return Err(format!("max pool must keep {m} channels, declares {n}"));
                }
                expect_params(0)?;
                let (oh, ow) = window(input)?;
                Ok((oh, ow, m))
            }
        }
    }

    fn apply(&self, input: &Tensor) -> Tensor {
        let h = &self.header;
        let (d, stride) = (h.kernel as usize, h.stride as usize);
        let padding = Padding::from_code(h.padding).unwrap_or(Padding::Same);
        let n = h.out_channels as usize;
        let out = match self.kind().expect("shape-checked") {
            LayerKind::Conv => {
                let (w, b) = self.split_bias();
                ops::conv2d(input, w, n, d, b, stride, padding)
            }
            LayerKind::DepthwiseConv => {
                let (w, b) = self.split_bias();
                ops::depthwise_conv2d(input, w, d, b, stride, padding)
            }
            LayerKind::PointwiseConv => {
                let (w, b) = self.split_bias();
                ops::pointwise_conv2d(input, w, n, b, stride)
            }
            LayerKind::BatchNorm => ops::batch_norm(input, &self.bn_params()),
            LayerKind::ReLU => Ok(ops::relu(input)),
            LayerKind::GlobalAvgPool => Ok(ops::global_avg_pool(input)),
            LayerKind::Softmax => Ok(ops::softmax(input)),
            LayerKind::MaxPool => ops::max_pool(input, d, stride, padding),
            LayerKind::ResidualAdd => unreachable!("handled by the graph walker"),
        };
        out.expect("shape-checked")
    }
}

/// A validated layer graph. Residual edges are encoded with a skip stack:
/// [`FLAG_SAVE_INPUT`] pushes, [`FLAG_ON_SKIP`] transforms the top, and
/// `ResidualAdd` pops and adds.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    layers: Vec<Layer>,
}

impl Model {
    /// Shape-checks the graph against the 48x48x1 input and 1x1x7 output.
    pub fn new(layers: Vec<Layer>) -> Result<Self, FerError> {
        check_graph(&layers)?;
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn into_layers(self) -> Vec<Layer> {
        self.layers
    }

    pub fn param_count(&self) -> usize {
        param_count(&self.layers)
    }

    /// Runs the network on an already normalised `48x48x1` tensor.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor, FerError> {
        if input.shape() != (INPUT_SIZE, INPUT_SIZE, 1) {
            return Err(FerError::ShapeMismatch(format!(
                "model input must be {INPUT_SIZE}x{INPUT_SIZE}x1, got {:?}",
                input.shape()
            )));
        }
        let mut main = input.clone();
        let mut skip: Vec<Tensor> = Vec::new();
        for layer in &self.layers {
            let flags = layer.header.flags;
            if flags & FLAG_SAVE_INPUT != 0 {
                skip.push(main.clone());
            }
            if layer.kind() == Some(LayerKind::ResidualAdd) {
                let other = skip.pop().expect("shape-checked");
                main = ops::residual_add(&main, &other)?;
            } else if flags & FLAG_ON_SKIP != 0 {
                let top = skip.last_mut().expect("shape-checked");
                *top = layer.apply(top);
            } else {
                main = layer.apply(&main);
            }
        }
        Ok(main)
    }
}

fn check_graph(layers: &[Layer]) -> Result<(), FerError> {
    let fail = |layer: usize, reason: String| FerError::ShapeCheckFailed { layer, reason };
    let mut main: Shape = (INPUT_SIZE, INPUT_SIZE, 1);
    let mut skip: Vec<Shape> = Vec::new();
    for (i, layer) in layers.iter().enumerate() {
        let flags = layer.header.flags;
        if flags & FLAG_SAVE_INPUT != 0 {
            skip.push(main);
        }
        if layer.kind() == Some(LayerKind::ResidualAdd) {
            if flags & FLAG_ON_SKIP != 0 {
                return Err(fail(i, "residual add cannot run on the skip path".into()));
            }
            main = layer.check(main).map_err(|r| fail(i, r))?;
            let other = skip
                .pop()
                .ok_or_else(|| fail(i, "residual add with no saved input".into()))?;
            if other != main {
                return Err(fail(
                    i,
                    format!("residual shapes differ: main {main:?}, skip {other:?}"),
                ));
            }
        } else if flags & FLAG_ON_SKIP != 0 {
            let top = skip
                .last_mut()
                .ok_or_else(|| fail(i, "on-skip layer with no saved input".into()))?;
            *top = layer.check(*top).map_err(|r| fail(i, r))?;
        } else {
            main = layer.check(main).map_err(|r| fail(i, r))?;
        }
    }
    let last = layers.len().saturating_sub(1);
    if !skip.is_empty() {
        return Err(fail(last, format!("{} saved inputs never consumed", skip.len())));
    }
    if main != (1, 1, NUM_CLASSES) {
        return Err(fail(last, format!("output shape {main:?}, expected (1, 1, 7)")));
    }
    if layers.last().and_then(Layer::kind) != Some(LayerKind::Softmax) {
        return Err(fail(last, "final layer must be softmax".into()));
    }
    Ok(())
}

/// Sum of learnable scalars over a layer list.
pub fn param_count(layers: &[Layer]) -> usize {
    layers.iter().map(Layer::param_count).sum()
}

/// Normalises a 48x48 face with `x / 127.5 - 1` and runs the model.
pub fn classify(model: &Model, face: &GrayPlane) -> Result<EmotionDistribution, FerError> {
    if face.dims() != (INPUT_SIZE, INPUT_SIZE) {
        return Err(FerError::WrongInputSize {
            width: face.width(),
            height: face.height(),
        });
    }
    let data = face.values().iter().map(|v| v / 127.5 - 1.0).collect();
    let input = Tensor::from_parts((INPUT_SIZE, INPUT_SIZE, 1), data);
    let out = model.forward(&input)?;
    let mut probabilities = [0.0; NUM_CLASSES];
    probabilities.copy_from_slice(out.data());
    Ok(EmotionDistribution { probabilities })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_head(c: usize) -> Vec<Layer> {
        vec![
            Layer::global_avg_pool(c),
            Layer::pointwise(c, 7, 1, vec![0.0; 7 * c], None),
            Layer::softmax(7),
        ]
    }

    #[test]
    fn separable_pair_param_count() {
        let layers = [
            Layer::depthwise(8, 3, 1, Padding::Same, vec![0.0; 72]),
            Layer::pointwise(8, 16, 1, vec![0.0; 128], None),
        ];
        assert_eq!(param_count(&layers), 200);
        assert_eq!(param_count(&[]), 0);
    }

    #[test]
    fn batch_norm_counts_gamma_and_beta() {
        let bn = Layer::batch_norm(&[1.0; 4], &[0.0; 4], &[0.0; 4], &[1.0; 4], 1e-3);
        assert_eq!(bn.param_count(), 8);
    }

    #[test]
    fn minimal_graph_is_uniform() {
        let mut layers = vec![Layer::conv(
            1,
            3,
            3,
            2,
            Padding::Same,
            vec![0.5; 27],
            Some(vec![0.1; 3]),
        )];
        layers.extend(tiny_head(3));
        let model = Model::new(layers).unwrap();
        let face = GrayPlane::from_fn(48, 48, |x, y| ((x * 13 + y * 7) % 256) as f64);
        let d = classify(&model, &face).unwrap();
        for p in d.probabilities {
            assert!((p - 1.0 / 7.0).abs() < 1e-12);
        }
    }

    #[test]
    fn residual_graph_runs() {
        let mut layers = vec![
            Layer::conv(1, 2, 3, 1, Padding::Same, vec![0.25; 18], None),
            Layer::depthwise(2, 3, 1, Padding::Same, vec![0.1; 18]).save_input(),
            Layer::relu(2),
            Layer::max_pool(2, 3, 2, Padding::Same),
            Layer::pointwise(2, 2, 2, vec![1.0, 0.0, 0.0, 1.0], None).on_skip(),
            Layer::residual_add(2),
        ];
        layers.extend(tiny_head(2));
        let model = Model::new(layers).unwrap();
        let face = GrayPlane::filled(48, 48, 200.0);
        let d = classify(&model, &face).unwrap();
        assert!((d.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn graph_errors_name_the_layer() {
        let mut layers = vec![Layer::conv(1, 3, 3, 1, Padding::Same, vec![0.0; 27], None)];
        layers.extend(tiny_head(4));
        assert!(matches!(
            Model::new(layers),
            Err(FerError::ShapeCheckFailed { layer: 1, .. })
        ));

        let dangling = vec![
            Layer::relu(1).save_input(),
            Layer::global_avg_pool(1),
            Layer::pointwise(1, 7, 1, vec![0.0; 7], None),
            Layer::softmax(7),
        ];
        assert!(matches!(
            Model::new(dangling),
            Err(FerError::ShapeCheckFailed { layer: 3, .. })
        ));

        let mismatch = vec![
            Layer::max_pool(1, 3, 2, Padding::Same).save_input(),
            Layer::max_pool(1, 3, 2, Padding::Same),
            Layer::residual_add(1),
        ];
        assert!(matches!(
            Model::new(mismatch),
            Err(FerError::ShapeCheckFailed { layer: 2, .. })
        ));

        let even = vec![Layer::conv(1, 7, 2, 1, Padding::Same, vec![0.0; 28], None)];
        assert!(matches!(
            Model::new(even),
            Err(FerError::ShapeCheckFailed { layer: 0, .. })
        ));
    }

    #[test]
    fn wrong_input_size() {
        let model = Model::new(tiny_head(1)).unwrap();
        let face = GrayPlane::filled(47, 48, 0.0);
        assert_eq!(
            classify(&model, &face),
            Err(FerError::WrongInputSize { width: 47, height: 48 })
        );
    }
}
