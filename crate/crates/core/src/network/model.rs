use std::ops::Range;
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::NetConfig;
use super::real::{matmul, matmul_at, matmul_bt, Real};
use crate::binio::{read_file, Reader, Writer};
use crate::error::{Error, Result};

pub const NET_MAGIC: &[u8; 8] = b"PSNET1\0\0";

/// Initial parametric-ReLU slope.
pub const INITIAL_SLOPE: f64 = 0.25;

/// Output of one forward pass: mean scores and log aleatoric variances.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub z_bar: Vec<f64>,
    pub log_var: Vec<f64>,
}

impl Prediction {
    pub fn variance(&self) -> Vec<f64> {
        self.log_var.iter().map(|a| a.exp()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropoutMode {
    Off,
    /// Fresh masks drawn from a generator seeded with the value.
    On(u64),
}

#[derive(Debug, Clone)]
struct LayerSlots {
    weight: Range<usize>,
    bias: Range<usize>,
    slope: Option<Range<usize>>,
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    cin: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    in_dims: [usize; 3],
    out_dims: [usize; 3],
}

impl ConvGeom {
    fn in_vox(&self) -> usize {
        self.in_dims.iter().product()
    }

    fn out_vox(&self) -> usize {
        self.out_dims.iter().product()
    }

    fn patch(&self) -> usize {
        self.cin * self.k * self.k * self.k
    }
}

#[derive(Debug, Clone)]
struct Layout {
    conv: Vec<LayerSlots>,
    fc: Vec<LayerSlots>,
    mean_head: LayerSlots,
    logvar_head: LayerSlots,
    total: usize,
}

/// Network weights in declaration order: for each conv stage weights
/// (`cout x cin x k^3`), biases and slopes; for each FC layer weights
/// (`out x in`), biases and slopes; then the mean head and the log-variance
/// head (weights, biases).
#[derive(Debug, Clone)]
pub struct NetParams<T: Real = f32> {
    config: NetConfig,
    layout: Layout,
    geoms: Vec<ConvGeom>,
    values: Vec<T>,
}

struct StageCache<T> {
    /// im2col matrix for conv stages, the input vector for dense layers.
    input: Vec<T>,
    pre: Vec<T>,
    mask: Option<Vec<T>>,
}

/// Activations kept from a forward pass for backpropagation.
pub struct ForwardCache<T> {
    conv: Vec<StageCache<T>>,
    fc: Vec<StageCache<T>>,
    hidden: Vec<T>,
}

impl<T: Real> ForwardCache<T> {
    pub fn new() -> Self {
        Self {
            conv: Vec::new(),
            fc: Vec::new(),
            hidden: Vec::new(),
        }
    }
}

impl<T: Real> Default for ForwardCache<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn build_layout(config: &NetConfig) -> (Layout, Vec<ConvGeom>) {
    let mut cursor = 0usize;
    let mut take = |n: usize| {
        let r = cursor..cursor + n;
        cursor += n;
        r
    };
    let k = config.kernel_size;
    let mut geoms = Vec::new();
    let mut conv = Vec::new();
    let mut cin = 1;
    let mut dims = config.input_dims;
    for (&cout, out_dims) in config.conv_channels.iter().zip(config.stage_dims()) {
        geoms.push(ConvGeom {
            cin,
            cout,
            k,
            stride: config.stride,
            pad: k / 2,
            in_dims: dims,
            out_dims,
        });
        conv.push(LayerSlots {
            weight: take(cout * cin * k * k * k),
            bias: take(cout),
            slope: Some(take(cout)),
        });
        cin = cout;
        dims = out_dims;
    }
    let mut fc = Vec::new();
    let mut fan_in = config.flat_features();
    for &w in &config.fc_widths {
        fc.push(LayerSlots {
            weight: take(w * fan_in),
            bias: take(w),
            slope: Some(take(w)),
        });
        fan_in = w;
    }
    let l = config.output_dim;
    let mean_head = LayerSlots {
        weight: take(l * fan_in),
        bias: take(l),
        slope: None,
    };
    let logvar_head = LayerSlots {
        weight: take(l * fan_in),
        bias: take(l),
        slope: None,
    };
    (
        Layout {
            conv,
            fc,
            mean_head,
            logvar_head,
            total: cursor,
        },
        geoms,
    )
}

fn im2col<T: Real>(input: &[T], g: &ConvGeom, col: &mut Vec<T>) {
    let [ix, iy, iz] = g.in_dims;
    let [ox, oy, oz] = g.out_dims;
    let p = g.out_vox();
    col.clear();
    col.resize(g.patch() * p, T::zero());
    let mut row = 0;
    for c in 0..g.cin {
        let chan = &input[c * g.in_vox()..(c + 1) * g.in_vox()];
        for kz in 0..g.k {
            for ky in 0..g.k {
                for kx in 0..g.k {
                    let dst = &mut col[row * p..(row + 1) * p];
                    for z in 0..oz {
                        let sz = (z * g.stride + kz) as isize - g.pad as isize;
                        if sz < 0 || sz >= iz as isize {
                            continue;
                        }
                        for y in 0..oy {
                            let sy = (y * g.stride + ky) as isize - g.pad as isize;
                            if sy < 0 || sy >= iy as isize {
                                continue;
                            }
                            let src_row = (sz as usize * iy + sy as usize) * ix;
                            let dst_row = (z * oy + y) * ox;
                            for x in 0..ox {
                                let sx = (x * g.stride + kx) as isize - g.pad as isize;
                                if sx >= 0 && sx < ix as isize {
                                    dst[dst_row + x] = chan[src_row + sx as usize];
                                }
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

fn col2im<T: Real>(col: &[T], g: &ConvGeom, out: &mut [T]) {
    let [ix, iy, iz] = g.in_dims;
    let [ox, oy, oz] = g.out_dims;
    let p = g.out_vox();
    out.iter_mut().for_each(|v| *v = T::zero());
    let mut row = 0;
    for c in 0..g.cin {
        let base = c * g.in_vox();
        for kz in 0..g.k {
            for ky in 0..g.k {
                for kx in 0..g.k {
                    let src = &col[row * p..(row + 1) * p];
                    for z in 0..oz {
                        let sz = (z * g.stride + kz) as isize - g.pad as isize;
                        if sz < 0 || sz >= iz as isize {
                            continue;
                        }
                        for y in 0..oy {
                            let sy = (y * g.stride + ky) as isize - g.pad as isize;
                            if sy < 0 || sy >= iy as isize {
                                continue;
                            }
                            let dst_row = base + (sz as usize * iy + sy as usize) * ix;
                            let src_row = (z * oy + y) * ox;
                            for x in 0..ox {
                                let sx = (x * g.stride + kx) as isize - g.pad as isize;
                                if sx >= 0 && sx < ix as isize {
                                    out[dst_row + sx as usize] += src[src_row + x];
                                }
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// PReLU (per channel) followed by optional inverted dropout, in place on
/// `x` laid out as `channels x per_channel`. Returns the pre-activation.
fn activate<T: Real>(
    x: &mut [T],
    slopes: &[T],
    per_channel: usize,
    dropout: &mut Option<(ChaCha8Rng, f32, T)>,
) -> (Vec<T>, Option<Vec<T>>) {
    let pre = x.to_vec();
    for (c, chunk) in x.chunks_mut(per_channel).enumerate() {
        let a = slopes[c];
        for v in chunk.iter_mut() {
            if *v <= T::zero() {
                *v *= a;
            }
        }
    }
    let mask = dropout.as_mut().map(|(rng, kappa, scale)| {
        let mask: Vec<T> = (0..x.len())
            .map(|_| {
                if rng.random::<f32>() < *kappa {
                    T::zero()
                } else {
                    *scale
                }
            })
            .collect();
        for (v, m) in x.iter_mut().zip(&mask) {
            *v *= *m;
        }
        mask
    });
    (pre, mask)
}

/// Backward through dropout and PReLU: turns the gradient w.r.t. the stage
/// output into the gradient w.r.t. the pre-activation, accumulating slope
/// gradients.
fn activate_backward<T: Real>(
    grad: &mut [T],
    cache: &StageCache<T>,
    slopes: &[T],
    d_slopes: &mut [T],
    per_channel: usize,
) {
    if let Some(mask) = &cache.mask {
        for (g, m) in grad.iter_mut().zip(mask) {
            *g *= *m;
        }
    }
    for (c, (gchunk, pchunk)) in grad
        .chunks_mut(per_channel)
        .zip(cache.pre.chunks(per_channel))
        .enumerate()
    {
        let a = slopes[c];
        let mut ds = T::zero();
        for (g, &z) in gchunk.iter_mut().zip(pchunk) {
            if z <= T::zero() {
                ds += *g * z;
                *g *= a;
            }
        }
        d_slopes[c] += ds;
    }
}

impl<T: Real> NetParams<T> {
    /// Xavier-uniform weights (`bound = sqrt(6 / (fan_in + fan_out))`), zero
    /// biases, slopes at 0.25.
    pub fn init(config: &NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (layout, geoms) = build_layout(config);
        let mut values = vec![T::zero(); layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut xavier = |slots: &LayerSlots, fan_in: usize, fan_out: usize, values: &mut [T]| {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in &mut values[slots.weight.clone()] {
                *v = T::of(rng.random_range(-bound..bound));
            }
            if let Some(s) = &slots.slope {
                values[s.clone()].iter_mut().for_each(|v| *v = T::of(INITIAL_SLOPE));
            }
        };
        let k3 = config.kernel_size.pow(3);
        for (slots, g) in layout.conv.iter().zip(&geoms) {
            xavier(slots, g.cin * k3, g.cout * k3, &mut values);
        }
        let mut fan_in = config.flat_features();
        for (slots, &w) in layout.fc.iter().zip(&config.fc_widths) {
            xavier(slots, fan_in, w, &mut values);
            fan_in = w;
        }
        xavier(&layout.mean_head, fan_in, config.output_dim, &mut values);
        xavier(&layout.logvar_head, fan_in, config.output_dim, &mut values);
        Ok(Self {
            config: config.clone(),
            layout,
            geoms,
            values,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn num_params(&self) -> usize {
        self.values.len()
    }

    pub fn input_len(&self) -> usize {
        self.config.input_dims.iter().product()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Parameter index ranges of every weight tensor as `(name, fan_in, fan_out, range)`.
    pub fn weight_blocks(&self) -> Vec<(String, usize, usize, Range<usize>)> {
        let k3 = self.config.kernel_size.pow(3);
        let mut out = Vec::new();
        for (i, (s, g)) in self.layout.conv.iter().zip(&self.geoms).enumerate() {
            out.push((format!("conv{}", i + 1), g.cin * k3, g.cout * k3, s.weight.clone()));
        }
        let mut fan_in = self.config.flat_features();
        for (i, (s, &w)) in self.layout.fc.iter().zip(&self.config.fc_widths).enumerate() {
            out.push((format!("fc{}", i + 1), fan_in, w, s.weight.clone()));
            fan_in = w;
        }
        let l = self.config.output_dim;
        out.push(("mean_head".into(), fan_in, l, self.layout.mean_head.weight.clone()));
        out.push(("logvar_head".into(), fan_in, l, self.layout.logvar_head.weight.clone()));
        out
    }

    /// Every bias range.
    pub fn bias_blocks(&self) -> Vec<Range<usize>> {
        self.layout
            .conv
            .iter()
            .chain(&self.layout.fc)
            .chain([&self.layout.mean_head, &self.layout.logvar_head])
            .map(|s| s.bias.clone())
            .collect()
    }

    /// Every PReLU slope range.
    pub fn slope_blocks(&self) -> Vec<Range<usize>> {
        self.layout
            .conv
            .iter()
            .chain(&self.layout.fc)
            .filter_map(|s| s.slope.clone())
            .collect()
    }

    /// Range of the log-variance head (weights then biases).
    pub fn logvar_head_range(&self) -> Range<usize> {
        self.layout.logvar_head.weight.start..self.layout.logvar_head.bias.end
    }

    /// Forward pass that records what backpropagation needs.
    pub fn forward_cached(
        &self,
        input: &[T],
        dropout: DropoutMode,
        cache: &mut ForwardCache<T>,
    ) -> Result<(Vec<T>, Vec<T>)> {
        if input.len() != self.input_len() {
            return Err(Error::dim(self.input_len(), input.len(), "network input voxels"));
        }
        let mut drop = match dropout {
            DropoutMode::On(seed) if self.config.dropout > 0.0 => Some((
                ChaCha8Rng::seed_from_u64(seed),
                self.config.dropout as f32,
                T::of(1.0 / (1.0 - self.config.dropout)),
            )),
            _ => None,
        };
        cache.conv.clear();
        cache.fc.clear();
        let mut x = input.to_vec();
        for (slots, g) in self.layout.conv.iter().zip(&self.geoms) {
            let mut col = Vec::new();
            im2col(&x, g, &mut col);
            let p = g.out_vox();
            let mut out = vec![T::zero(); g.cout * p];
            let w = &self.values[slots.weight.clone()];
            matmul(g.cout, g.patch(), p, w, &col, &mut out, false);
            let b = &self.values[slots.bias.clone()];
            for (c, chunk) in out.chunks_mut(p).enumerate() {
                chunk.iter_mut().for_each(|v| *v += b[c]);
            }
            let slopes = &self.values[slots.slope.clone().unwrap()];
            let (pre, mask) = activate(&mut out, slopes, p, &mut drop);
            cache.conv.push(StageCache { input: col, pre, mask });
            x = out;
        }
        for slots in &self.layout.fc {
            let n_out = slots.bias.len();
            let n_in = x.len();
            let mut out = self.values[slots.bias.clone()].to_vec();
            matmul(n_out, n_in, 1, &self.values[slots.weight.clone()], &x, &mut out, true);
            let slopes = &self.values[slots.slope.clone().unwrap()];
            let (pre, mask) = activate(&mut out, slopes, 1, &mut drop);
            cache.fc.push(StageCache { input: x, pre, mask });
            x = out;
        }
        let head = |slots: &LayerSlots| {
            let mut out = self.values[slots.bias.clone()].to_vec();
            matmul(out.len(), x.len(), 1, &self.values[slots.weight.clone()], &x, &mut out, true);
            out
        };
        let mean = head(&self.layout.mean_head);
        let logvar = head(&self.layout.logvar_head);
        cache.hidden = x;
        Ok((mean, logvar))
    }

    pub fn forward(&self, input: &[T], dropout: DropoutMode) -> Result<Prediction> {
        let mut cache = ForwardCache::new();
        let (mean, logvar) = self.forward_cached(input, dropout, &mut cache)?;
        Ok(Prediction {
            z_bar: mean.into_iter().map(T::as_f64).collect(),
            log_var: logvar.into_iter().map(T::as_f64).collect(),
        })
    }

    /// Accumulates parameter gradients for one sample into `grad`, given the
    /// loss gradient w.r.t. both heads.
    pub fn backward(&self, cache: &ForwardCache<T>, d_mean: &[T], d_logvar: &[T], grad: &mut [T]) {
        assert_eq!(grad.len(), self.values.len());
        let h = &cache.hidden;
        let mut d_h = vec![T::zero(); h.len()];
        for (slots, d_out) in [(&self.layout.mean_head, d_mean), (&self.layout.logvar_head, d_logvar)] {
            let l = d_out.len();
            matmul(l, 1, h.len(), d_out, h, &mut grad[slots.weight.clone()], true);
            for (g, d) in grad[slots.bias.clone()].iter_mut().zip(d_out) {
                *g += *d;
            }
            matmul_at(h.len(), l, 1, &self.values[slots.weight.clone()], d_out, &mut d_h, true);
        }
        let mut d_x = d_h;
        for (slots, c) in self.layout.fc.iter().zip(&cache.fc).rev() {
            let slope_range = slots.slope.clone().unwrap();
            let slopes = self.values[slope_range.clone()].to_vec();
            activate_backward(&mut d_x, c, &slopes, &mut grad[slope_range], 1);
            let n_out = d_x.len();
            let n_in = c.input.len();
            matmul(n_out, 1, n_in, &d_x, &c.input, &mut grad[slots.weight.clone()], true);
            for (g, d) in grad[slots.bias.clone()].iter_mut().zip(&d_x) {
                *g += *d;
            }
            let mut d_in = vec![T::zero(); n_in];
            matmul_at(n_in, n_out, 1, &self.values[slots.weight.clone()], &d_x, &mut d_in, false);
            d_x = d_in;
        }
        for (i, ((slots, c), g)) in self
            .layout
            .conv
            .iter()
            .zip(&cache.conv)
            .zip(&self.geoms)
            .enumerate()
            .rev()
        {
            let p = g.out_vox();
            let slope_range = slots.slope.clone().unwrap();
            let slopes = self.values[slope_range.clone()].to_vec();
            activate_backward(&mut d_x, c, &slopes, &mut grad[slope_range], p);
            // dW += dZ . col^T
            matmul_bt(g.cout, p, g.patch(), &d_x, &c.input, &mut grad[slots.weight.clone()], true);
            for (ch, chunk) in d_x.chunks(p).enumerate() {
                grad[slots.bias.start + ch] += chunk.iter().copied().sum::<T>();
            }
            if i == 0 {
                break;
            }
            let mut d_col = vec![T::zero(); g.patch() * p];
            matmul_at(g.patch(), g.cout, p, &self.values[slots.weight.clone()], &d_x, &mut d_col, false);
            let mut d_in = vec![T::zero(); g.cin * g.in_vox()];
            col2im(&d_col, g, &mut d_in);
            d_x = d_in;
        }
    }

    /// Converts to another scalar type (e.g. `f32` weights to `f64`).
    pub fn cast<U: Real>(&self) -> NetParams<U> {
        NetParams {
            config: self.config.clone(),
            layout: self.layout.clone(),
            geoms: self.geoms.clone(),
            values: self.values.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.to_writer().finish()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.to_writer().write_to(path)
    }

    fn to_writer(&self) -> Writer {
        let text = serde_json::to_string(&self.config).expect("config serializes");
        let mut w = Writer::new(NET_MAGIC);
        w.u32(text.len() as u32)
            .bytes(text.as_bytes())
            .f32s(self.values.iter().map(|v| v.as_f64() as f32));
        w
    }
}

impl NetParams<f32> {
    pub fn read(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        Self::from_bytes(path, &bytes)
    }

    pub fn from_bytes(path: &Path, bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(path, bytes, NET_MAGIC)?;
        let len = r.u32("config length")? as usize;
        let text = r.bytes(len, "config block")?;
        let config: NetConfig = serde_json::from_slice(text)
            .map_err(|e| Error::format(path, format!("config block: {e}")))?;
        config.validate().map_err(|e| Error::format(path, e.to_string()))?;
        let (layout, geoms) = build_layout(&config);
        let values = r.f32s(layout.total, "parameters")?;
        r.finish()?;
        Ok(Self {
            config,
            layout,
            geoms,
            values,
        })
    }
}
