//! 2-D convolution (cross-correlation) and its transpose, via im2col + GEMM.

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Geometry of a strided, zero-padded cross-correlation over one image.
#[derive(Clone, Copy, Debug)]
struct Geometry {
    channels: usize,
    height: usize,
    width: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
}

impl Geometry {
    fn new(
        channels: usize,
        height: usize,
        width: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        pad: usize,
    ) -> Option<Self> {
        if stride == 0 || height + 2 * pad < kh || width + 2 * pad < kw {
            return None;
        }
        Some(Geometry {
            channels,
            height,
            width,
            kh,
            kw,
            stride,
            pad,
            out_h: (height + 2 * pad - kh) / stride + 1,
            out_w: (width + 2 * pad - kw) / stride + 1,
        })
    }

    fn patch_len(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn out_len(&self) -> usize {
        self.out_h * self.out_w
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    /// Output index range `[lo, hi)` whose input coordinate
    /// `o * stride + k - pad` falls inside `[0, extent)`.
    fn valid_range(&self, k: usize, extent: usize, out: usize) -> (usize, usize) {
        let (s, p) = (self.stride as isize, self.pad as isize);
        let k = k as isize;
        let lo = if p > k { (p - k + s - 1) / s } else { 0 };
        let hi = (extent as isize - 1 + p - k).div_euclid(s) + 1;
        let hi = hi.clamp(0, out as isize) as usize;
        (lo.min(hi as isize) as usize, hi)
    }

    fn im2col<T: Real>(&self, image: &[T], cols: &mut [T]) {
        let plane = self.out_len();
        for c in 0..self.channels {
            let src = &image[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ky in 0..self.kh {
                let (y_lo, y_hi) = self.valid_range(ky, self.height, self.out_h);
                for kx in 0..self.kw {
                    let row = (c * self.kh + ky) * self.kw + kx;
                    let dst = &mut cols[row * plane..(row + 1) * plane];
                    let (x_lo, x_hi) = self.valid_range(kx, self.width, self.out_w);
                    for oy in 0..self.out_h {
                        let line = &mut dst[oy * self.out_w..(oy + 1) * self.out_w];
                        if oy < y_lo || oy >= y_hi {
                            line.fill(T::zero());
                            continue;
                        }
                        let iy = oy * self.stride + ky - self.pad;
                        let src_row = &src[iy * self.width..(iy + 1) * self.width];
                        line[..x_lo].fill(T::zero());
                        line[x_hi..].fill(T::zero());
                        if self.stride == 1 {
                            let ix0 = x_lo + kx - self.pad;
                            line[x_lo..x_hi].copy_from_slice(&src_row[ix0..ix0 + x_hi - x_lo]);
                        } else {
                            for ox in x_lo..x_hi {
                                line[ox] = src_row[ox * self.stride + kx - self.pad];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of `im2col`: scatters columns back onto the image, adding.
    fn col2im<T: Real>(&self, cols: &[T], image: &mut [T]) {
        let plane = self.out_len();
        for c in 0..self.channels {
            let dst = &mut image[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ky in 0..self.kh {
                let (y_lo, y_hi) = self.valid_range(ky, self.height, self.out_h);
                for kx in 0..self.kw {
                    let row = (c * self.kh + ky) * self.kw + kx;
                    let src = &cols[row * plane..(row + 1) * plane];
                    let (x_lo, x_hi) = self.valid_range(kx, self.width, self.out_w);
                    for oy in y_lo..y_hi {
                        let iy = oy * self.stride + ky - self.pad;
                        let dst_row = &mut dst[iy * self.width..(iy + 1) * self.width];
                        let line = &src[oy * self.out_w..(oy + 1) * self.out_w];
                        for ox in x_lo..x_hi {
                            dst_row[ox * self.stride + kx - self.pad] += line[ox];
                        }
                    }
                }
            }
        }
    }
}

fn check_bias<T: Real>(op: &'static str, bias: Option<&Var<T>>, channels: usize) -> Result<()> {
    match bias {
        Some(b) if b.shape() != [channels] => Err(Error::shape(
            op,
            format!("bias {:?} for {channels} output channels", b.shape()),
        )),
        _ => Ok(()),
    }
}

fn add_bias<T: Real>(out: &mut [T], bias: &[T], plane: usize) {
    for (chunk, &b) in out.chunks_mut(plane).zip(bias.iter().cycle()) {
        for v in chunk {
            *v += b;
        }
    }
}

fn bias_grad<T: Real>(g: &Tensor<T>, channels: usize) -> Tensor<T> {
    let plane = g.dim(2) * g.dim(3);
    let mut db = vec![T::zero(); channels];
    for (i, chunk) in g.data().chunks(plane).enumerate() {
        db[i % channels] += chunk.iter().copied().sum::<T>();
    }
    Tensor::from_parts(vec![channels], db)
}

fn with_bias<T: Real>(
    grads: Vec<Option<Tensor<T>>>,
    has_bias: bool,
    g: &Tensor<T>,
    channels: usize,
) -> Vec<Option<Tensor<T>>> {
    let mut grads = grads;
    if has_bias {
        grads.push(Some(bias_grad(g, channels)));
    }
    grads
}

/// Cross-correlation of `input [N, Cin, H, W]` with `weight [Cout, Cin, kh, kw]`.
///
/// Kernels must have odd extents. The output is
/// `[N, Cout, (H + 2 pad - kh) / stride + 1, (W + 2 pad - kw) / stride + 1]`.
pub fn conv2d<T: Real>(
    input: &Var<T>,
    weight: &Var<T>,
    bias: Option<&Var<T>>,
    stride: usize,
    pad: usize,
) -> Result<Var<T>> {
    let (xs, ws) = (input.shape(), weight.shape());
    if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] {
        return Err(Error::shape(
            "conv2d",
            format!("input {xs:?} with weight {ws:?}"),
        ));
    }
    let (n, cout, kh, kw) = (xs[0], ws[0], ws[2], ws[3]);
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(Error::shape("conv2d", format!("kernel {kh}x{kw} must be odd")));
    }
    check_bias("conv2d", bias, cout)?;
    let geo = Geometry::new(xs[1], xs[2], xs[3], kh, kw, stride, pad).ok_or_else(|| {
        Error::shape(
            "conv2d",
            format!("input {xs:?} too small for {kh}x{kw} kernel, stride {stride}, pad {pad}"),
        )
    })?;

    let (k, p) = (geo.patch_len(), geo.out_len());
    let in_len = geo.channels * geo.height * geo.width;
    let mut out = vec![T::zero(); n * cout * p];
    let mut cols = if geo.is_pointwise() { Vec::new() } else { vec![T::zero(); k * p] };
    let x = input.value().data();
    let w = weight.value().data();
    for b in 0..n {
        let image = &x[b * in_len..(b + 1) * in_len];
        let cols_ref: &[T] = if geo.is_pointwise() {
            image
        } else {
            geo.im2col(image, &mut cols);
            &cols
        };
        let dst = &mut out[b * cout * p..(b + 1) * cout * p];
        T::gemm(cout, k, p, T::one(), w, (k as isize, 1), cols_ref, (p as isize, 1), T::zero(), dst, (p as isize, 1));
        if let Some(bias) = bias {
            add_bias(dst, bias.value().data(), p);
        }
    }
    let value = Tensor::from_parts(vec![n, cout, geo.out_h, geo.out_w], out);

    let mut parents = vec![input, weight];
    parents.extend(bias);
    if !Var::records(&parents) {
        return Ok(Var::constant(value));
    }
    let (xv, wv) = (input.value().clone(), weight.value().clone());
    let has_bias = bias.is_some();
    Ok(Var::from_op(value, &parents, move |g| {
        let (x, w, gd) = (xv.data(), wv.data(), g.data());
        let mut dx = vec![T::zero(); x.len()];
        let mut dw = vec![T::zero(); w.len()];
        let mut cols = vec![T::zero(); k * p];
        let mut dcols = vec![T::zero(); k * p];
        for b in 0..n {
            let image = &x[b * in_len..(b + 1) * in_len];
            let gb = &gd[b * cout * p..(b + 1) * cout * p];
            let cols_ref: &[T] = if geo.is_pointwise() {
                image
            } else {
                geo.im2col(image, &mut cols);
                &cols
            };
            T::gemm(cout, p, k, T::one(), gb, (p as isize, 1), cols_ref, (1, p as isize), T::one(), &mut dw, (k as isize, 1));
            let dimage = &mut dx[b * in_len..(b + 1) * in_len];
            if geo.is_pointwise() {
                T::gemm(k, cout, p, T::one(), w, (1, k as isize), gb, (p as isize, 1), T::zero(), dimage, (p as isize, 1));
            } else {
                T::gemm(k, cout, p, T::one(), w, (1, k as isize), gb, (p as isize, 1), T::zero(), &mut dcols, (p as isize, 1));
                geo.col2im(&dcols, dimage);
            }
        }
        let grads = vec![
            Some(Tensor::from_parts(xv.shape().to_vec(), dx)),
            Some(Tensor::from_parts(wv.shape().to_vec(), dw)),
        ];
        with_bias(grads, has_bias, g, cout)
    }))
}

/// Transposed convolution: the adjoint of [`conv2d`] with the same
/// kernel, stride and padding. `weight` is `[Cin, Cout, kh, kw]` and the
/// output is `[N, Cout, (H - 1) stride - 2 pad + kh, (W - 1) stride - 2 pad + kw]`.
pub fn conv_transpose2d<T: Real>(
    input: &Var<T>,
    weight: &Var<T>,
    bias: Option<&Var<T>>,
    stride: usize,
    pad: usize,
) -> Result<Var<T>> {
    let (xs, ws) = (input.shape(), weight.shape());
    if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[0] {
        return Err(Error::shape(
            "conv_transpose2d",
            format!("input {xs:?} with weight {ws:?}"),
        ));
    }
    if stride == 0 {
        return Err(Error::shape("conv_transpose2d", "stride must be at least 1"));
    }
    let (n, cin, h, w_in) = (xs[0], xs[1], xs[2], xs[3]);
    let (cout, kh, kw) = (ws[1], ws[2], ws[3]);
    check_bias("conv_transpose2d", bias, cout)?;
    let out_h = ((h.max(1) - 1) * stride + kh).checked_sub(2 * pad).filter(|&v| v > 0);
    let out_w = ((w_in.max(1) - 1) * stride + kw).checked_sub(2 * pad).filter(|&v| v > 0);
    let (Some(out_h), Some(out_w)) = (out_h, out_w) else {
        return Err(Error::shape(
            "conv_transpose2d",
            format!("padding {pad} leaves no output for input {xs:?}"),
        ));
    };
    // The conv2d that maps the output back to the input.
    let geo = Geometry::new(cout, out_h, out_w, kh, kw, stride, pad)
        .filter(|g| g.out_h == h && g.out_w == w_in)
        .ok_or_else(|| Error::shape("conv_transpose2d", format!("input {xs:?}")))?;

    let (k, hw) = (geo.patch_len(), h * w_in);
    let out_len = cout * out_h * out_w;
    let x = input.value().data();
    let wd = weight.value().data();
    let mut out = vec![T::zero(); n * out_len];
    let mut cols = vec![T::zero(); k * hw];
    for b in 0..n {
        let xb = &x[b * cin * hw..(b + 1) * cin * hw];
        T::gemm(k, cin, hw, T::one(), wd, (1, k as isize), xb, (hw as isize, 1), T::zero(), &mut cols, (hw as isize, 1));
        let dst = &mut out[b * out_len..(b + 1) * out_len];
        geo.col2im(&cols, dst);
        if let Some(bias) = bias {
            add_bias(dst, bias.value().data(), out_h * out_w);
        }
    }
    let value = Tensor::from_parts(vec![n, cout, out_h, out_w], out);

    let mut parents = vec![input, weight];
    parents.extend(bias);
    if !Var::records(&parents) {
        return Ok(Var::constant(value));
    }
    let (xv, wv) = (input.value().clone(), weight.value().clone());
    let has_bias = bias.is_some();
    Ok(Var::from_op(value, &parents, move |g| {
        let (x, wd, gd) = (xv.data(), wv.data(), g.data());
        let mut dx = vec![T::zero(); x.len()];
        let mut dw = vec![T::zero(); wd.len()];
        let mut gcols = vec![T::zero(); k * hw];
        for b in 0..n {
            geo.im2col(&gd[b * out_len..(b + 1) * out_len], &mut gcols);
            let xb = &x[b * cin * hw..(b + 1) * cin * hw];
            T::gemm(cin, k, hw, T::one(), wd, (k as isize, 1), &gcols, (hw as isize, 1), T::zero(), &mut dx[b * cin * hw..(b + 1) * cin * hw], (hw as isize, 1));
            T::gemm(cin, hw, k, T::one(), xb, (hw as isize, 1), &gcols, (1, hw as isize), T::one(), &mut dw, (k as isize, 1));
        }
        let grads = vec![
            Some(Tensor::from_parts(xv.shape().to_vec(), dx)),
            Some(Tensor::from_parts(wv.shape().to_vec(), dw)),
        ];
        with_bias(grads, has_bias, g, cout)
    }))
}
