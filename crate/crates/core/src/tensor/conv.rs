use rayon::prelude::*;

use super::{check_finite, Real, Tensor};
use crate::error::{invalid, shape_err, Result};

/// Stride, zero padding, dilation and channel grouping of a square convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub groups: usize,
}

impl Default for ConvSpec {
    fn default() -> Self {
        Self {
            stride: 1,
            padding: 0,
            dilation: 1,
            groups: 1,
        }
    }
}

impl ConvSpec {
    pub fn new(stride: usize, padding: usize) -> Self {
        Self {
            stride,
            padding,
            ..Self::default()
        }
    }

    pub fn dilated(mut self, dilation: usize) -> Self {
        self.dilation = dilation;
        self
    }

    pub fn grouped(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    /// `floor((size + 2p - d(k-1) - 1) / s) + 1`, or `None` when that is below one.
    pub fn output_size(&self, size: usize, k: usize) -> Option<usize> {
        let span = self.dilation * (k - 1) + 1;
        let padded = size + 2 * self.padding;
        if padded < span || self.stride == 0 {
            return None;
        }
        Some((padded - span) / self.stride + 1)
    }
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
    cin_g: usize,
    cout_g: usize,
    oh: usize,
    ow: usize,
    spec: ConvSpec,
}

impl Geometry {
    fn new(input: [usize; 4], kernel: [usize; 4], spec: ConvSpec) -> Result<Self> {
        let [_, cin, h, w] = input;
        let [cout, cin_g, kh, kw] = kernel;
        if spec.stride == 0 || spec.dilation == 0 || spec.groups == 0 {
            return Err(invalid!("conv2d: stride, dilation and groups must be positive"));
        }
        if kh != kw || kh == 0 {
            return Err(shape_err!("conv2d: kernel must be square, got {kh}x{kw}"));
        }
        if cin % spec.groups != 0 || cout % spec.groups != 0 {
            return Err(shape_err!(
                "conv2d: groups {} must divide channels {cin} -> {cout}",
                spec.groups
            ));
        }
        if cin_g * spec.groups != cin {
            return Err(shape_err!(
                "conv2d: kernel expects {} input channels, input has {cin}",
                cin_g * spec.groups
            ));
        }
        let (oh, ow) = match (spec.output_size(h, kh), spec.output_size(w, kw)) {
            (Some(oh), Some(ow)) => (oh, ow),
            _ => return Err(shape_err!("conv2d: zero-size output for {h}x{w} input")),
        };
        Ok(Self {
            cin,
            h,
            w,
            cout,
            k: kh,
            cin_g,
            cout_g: cout / spec.groups,
            oh,
            ow,
            spec,
        })
    }

    fn output_shape(&self, n: usize) -> [usize; 4] {
        [n, self.cout, self.oh, self.ow]
    }

    /// Range of output positions whose input coordinate `o * s + off` lies in `0..size`.
    fn valid_range(&self, off: isize, size: usize, out: usize) -> (usize, usize) {
        let s = self.spec.stride as isize;
        let lo = if off < 0 { (-off + s - 1) / s } else { 0 };
        let hi_excl = if (size as isize) <= off {
            0
        } else {
            ((size as isize - 1 - off) / s + 1).min(out as isize)
        };
        (lo as usize, hi_excl.max(lo) as usize)
    }

    fn offset(&self, tap: usize) -> isize {
        (tap * self.spec.dilation) as isize - self.spec.padding as isize
    }

    /// Visits every (output channel, input channel, tap) triple with the
    /// matching planes and their valid output window.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize, Window)) {
        for oc in 0..self.cout {
            let g = oc / self.cout_g;
            for icl in 0..self.cin_g {
                let ic = g * self.cin_g + icl;
                for ky in 0..self.k {
                    let offy = self.offset(ky);
                    let (y0, y1) = self.valid_range(offy, self.h, self.oh);
                    if y0 >= y1 {
                        continue;
                    }
                    for kx in 0..self.k {
                        let offx = self.offset(kx);
                        let (x0, x1) = self.valid_range(offx, self.w, self.ow);
                        if x0 >= x1 {
                            continue;
                        }
                        let widx = ((oc * self.cin_g + icl) * self.k + ky) * self.k + kx;
                        f(
                            oc,
                            ic,
                            widx,
                            Window {
                                y0,
                                y1,
                                x0,
                                x1,
                                offy,
                                offx,
                            },
                        );
                    }
                }
            }
        }
    }

    fn forward_one<T: Real>(&self, x: &[T], kernel: &[T], out: &mut [T]) {
        let (h, w, oh, ow, s) = (self.h, self.w, self.oh, self.ow, self.spec.stride);
        self.for_each_tap(|oc, ic, widx, win| {
            let wv = kernel[widx];
            let xp = &x[ic * h * w..(ic + 1) * h * w];
            let op = &mut out[oc * oh * ow..(oc + 1) * oh * ow];
            for oy in win.y0..win.y1 {
                let iy = (oy * s) as isize + win.offy;
                let xrow = &xp[iy as usize * w..];
                let orow = &mut op[oy * ow..(oy + 1) * ow];
                for ox in win.x0..win.x1 {
                    let ix = ((ox * s) as isize + win.offx) as usize;
                    orow[ox] = orow[ox] + wv * xrow[ix];
                }
            }
        });
    }

    fn backward_one<T: Real>(
        &self,
        x: &[T],
        kernel: &[T],
        gout: &[T],
        gin: &mut [T],
        gker: &mut [T],
    ) {
        let (h, w, oh, ow, s) = (self.h, self.w, self.oh, self.ow, self.spec.stride);
        self.for_each_tap(|oc, ic, widx, win| {
            let wv = kernel[widx];
            let xp = &x[ic * h * w..(ic + 1) * h * w];
            let gp = &gout[oc * oh * ow..(oc + 1) * oh * ow];
            let gi = &mut gin[ic * h * w..(ic + 1) * h * w];
            let mut acc = T::zero();
            for oy in win.y0..win.y1 {
                let iy = ((oy * s) as isize + win.offy) as usize;
                for ox in win.x0..win.x1 {
                    let ix = ((ox * s) as isize + win.offx) as usize;
                    let g = gp[oy * ow + ox];
                    acc = acc + g * xp[iy * w + ix];
                    gi[iy * w + ix] = gi[iy * w + ix] + wv * g;
                }
            }
            gker[widx] = gker[widx] + acc;
        });
    }
}

#[derive(Clone, Copy)]
struct Window {
    y0: usize,
    y1: usize,
    x0: usize,
    x1: usize,
    offy: isize,
    offx: isize,
}

/// Grouped, dilated, zero-padded 2-D convolution.
///
/// `kernel` has shape `(Cout, Cin / groups, k, k)`.
pub fn conv2d<T: Real>(input: &Tensor<T>, kernel: &Tensor<T>, spec: ConvSpec) -> Result<Tensor<T>> {
    let geo = Geometry::new(input.shape(), kernel.shape(), spec)?;
    let n = input.batch();
    let mut out = Tensor::zeros(geo.output_shape(n));
    let out_len = geo.cout * geo.oh * geo.ow;
    let in_len = geo.cin * geo.h * geo.w;
    if out_len > 0 && in_len > 0 {
        out.data_mut()
            .par_chunks_mut(out_len)
            .zip(input.data().par_chunks(in_len))
            .for_each(|(o, x)| geo.forward_one(x, kernel.data(), o));
    }
    check_finite(out, "conv2d")
}

/// Adjoint of [`conv2d`]: returns `(grad_input, grad_kernel)`.
pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
    spec: ConvSpec,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let geo = Geometry::new(input.shape(), kernel.shape(), spec)?;
    let n = input.batch();
    grad_out.expect_shape(geo.output_shape(n), "conv2d_backward grad_out")?;
    let mut grad_in = Tensor::zeros(input.shape());
    let in_len = geo.cin * geo.h * geo.w;
    let out_len = geo.cout * geo.oh * geo.ow;
    let klen = kernel.len();
    let partials: Vec<Vec<T>> = if in_len == 0 || out_len == 0 {
        Vec::new()
    } else {
        grad_in
            .data_mut()
            .par_chunks_mut(in_len)
            .zip(input.data().par_chunks(in_len))
            .zip(grad_out.data().par_chunks(out_len))
            .map(|((gi, x), go)| {
                let mut gk = vec![T::zero(); klen];
                geo.backward_one(x, kernel.data(), go, gi, &mut gk);
                gk
            })
            .collect()
    };
    // Reduce per-example kernel gradients in example order.
    let mut grad_kernel = Tensor::zeros(kernel.shape());
    for p in &partials {
        for (g, &v) in grad_kernel.data_mut().iter_mut().zip(p) {
            *g = *g + v;
        }
    }
    Ok((
        check_finite(grad_in, "conv2d_backward")?,
        check_finite(grad_kernel, "conv2d_backward")?,
    ))
}

#[cfg(test)]
mod tests {
    use super::super::testing::*;
    use super::*;

    #[test]
    fn scalar_kernel_scales_input() {
        let x = Tensor::<f32>::full([1, 1, 3, 3], 1.0);
        let k = Tensor::from_slice([1, 1, 1, 1], &[2.0]).unwrap();
        let y = conv2d(&x, &k, ConvSpec::default()).unwrap();
        assert_eq!(y.shape(), [1, 1, 3, 3]);
        assert!(y.data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn all_ones_kernel_sums_window() {
        let x = Tensor::<f32>::from_vec([1, 1, 3, 3], (1..=9).map(|v| v as f32).collect()).unwrap();
        let k = Tensor::full([1, 1, 3, 3], 1.0);
        let y = conv2d(&x, &k, ConvSpec::default()).unwrap();
        assert_eq!(y.shape(), [1, 1, 1, 1]);
        assert_eq!(y.data(), &[45.0]);
    }

    #[test]
    fn zero_kernel_gives_zero_output() {
        let x = random([2, 3, 5, 5], 1);
        let k = Tensor::zeros([4, 3, 3, 3]);
        let y = conv2d(&x, &k, ConvSpec::new(1, 1)).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn output_size_formula() {
        let spec = ConvSpec::new(1, 2).dilated(2);
        assert_eq!(spec.output_size(8, 3), Some(8));
        assert_eq!(ConvSpec::new(2, 1).output_size(8, 3), Some(4));
        assert_eq!(ConvSpec::new(2, 0).output_size(7, 1), Some(4));
        assert_eq!(ConvSpec::default().output_size(2, 3), None);
    }

    #[test]
    fn shape_errors() {
        let x = Tensor::<f32>::zeros([1, 3, 4, 4]);
        assert!(conv2d(&x, &Tensor::zeros([2, 2, 3, 3]), ConvSpec::default()).is_err());
        assert!(conv2d(&x, &Tensor::zeros([2, 3, 5, 5]), ConvSpec::default()).is_err());
        assert!(conv2d(&x, &Tensor::zeros([4, 1, 3, 3]), ConvSpec::default().grouped(2)).is_err());
    }

    #[test]
    fn one_by_one_adjoint() {
        let x = random([1, 1, 3, 3], 2);
        let g = random([1, 1, 3, 3], 3);
        let w = 0.7;
        let k = Tensor::from_slice([1, 1, 1, 1], &[w]).unwrap();
        let (gi, gk) = conv2d_backward(&x, &k, &g, ConvSpec::default()).unwrap();
        let expect_k: f64 = x.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        assert!((gk.data()[0] - expect_k).abs() < 1e-12);
        for (a, b) in gi.data().iter().zip(g.data()) {
            assert!((a - w * b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_grad_out_gives_zero_grads() {
        let x = random([1, 2, 4, 4], 4);
        let k = random([3, 2, 3, 3], 5);
        let g = Tensor::zeros([1, 3, 4, 4]);
        let (gi, gk) = conv2d_backward(&x, &k, &g, ConvSpec::new(1, 1)).unwrap();
        assert_eq!(gi.max_abs(), 0.0);
        assert_eq!(gk.max_abs(), 0.0);
    }

    fn check_against_finite_differences(spec: ConvSpec, xs: [usize; 4], ks: [usize; 4], seed: u64) {
        let x = random(xs, seed);
        let k = random(ks, seed + 1);
        let y = conv2d(&x, &k, spec).unwrap();
        let g = random(y.shape(), seed + 2);
        let (gi, gk) = conv2d_backward(&x, &k, &g, spec).unwrap();
        let num_x = numeric_grad(&x, 1e-5, |p| conv2d(p, &k, spec).unwrap().dot(&g).unwrap());
        let num_k = numeric_grad(&k, 1e-5, |p| conv2d(&x, p, spec).unwrap().dot(&g).unwrap());
        assert_grad_close(gi.data(), &num_x, 1e-3);
        assert_grad_close(gk.data(), &num_k, 1e-3);
    }

    #[test]
    fn backward_matches_finite_differences() {
        // Σ conv2d on the 1×2×4×4 / 3×2×3×3 fixture, plus strided, dilated and grouped variants.
        let x = random([1, 2, 4, 4], 10);
        let k = random([3, 2, 3, 3], 11);
        let spec = ConvSpec::new(1, 1);
        let y = conv2d(&x, &k, spec).unwrap();
        let ones = Tensor::full(y.shape(), 1.0);
        let (gi, gk) = conv2d_backward(&x, &k, &ones, spec).unwrap();
        assert_grad_close(gi.data(), &numeric_grad(&x, 1e-5, |p| conv2d(p, &k, spec).unwrap().sum()), 1e-3);
        assert_grad_close(gk.data(), &numeric_grad(&k, 1e-5, |p| conv2d(&x, p, spec).unwrap().sum()), 1e-3);

        check_against_finite_differences(ConvSpec::new(2, 1), [2, 2, 5, 5], [3, 2, 3, 3], 20);
        check_against_finite_differences(ConvSpec::new(1, 2).dilated(2), [1, 2, 6, 6], [2, 2, 3, 3], 30);
        check_against_finite_differences(ConvSpec::new(2, 2).grouped(4), [2, 4, 6, 6], [4, 1, 5, 5], 40);
    }

    #[test]
    fn bilinear_in_both_arguments() {
        let x = random([2, 2, 5, 5], 50);
        let k = random([3, 2, 3, 3], 51);
        let spec = ConvSpec::new(1, 1);
        let base = conv2d(&x, &k, spec).unwrap();
        let a = 2.5;
        let sx = conv2d(&x.scale(a), &k, spec).unwrap();
        let sk = conv2d(&x, &k.scale(a), spec).unwrap();
        for ((b, p), q) in base.data().iter().zip(sx.data()).zip(sk.data()) {
            assert!(rel_err(a * b, *p) < 1e-6 || (a * b - p).abs() < 1e-12);
            assert!(rel_err(a * b, *q) < 1e-6 || (a * b - q).abs() < 1e-12);
        }
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let x = random([6, 3, 6, 6], 60).cast::<f32>();
        let k = random([4, 3, 3, 3], 61).cast::<f32>();
        let g = random([6, 4, 6, 6], 62).cast::<f32>();
        let spec = ConvSpec::new(1, 1);
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let (y1, (gi1, gk1)) = single.install(|| {
            (conv2d(&x, &k, spec).unwrap(), conv2d_backward(&x, &k, &g, spec).unwrap())
        });
        let (y2, (gi2, gk2)) = (conv2d(&x, &k, spec).unwrap(), conv2d_backward(&x, &k, &g, spec).unwrap());
        assert_eq!(y1, y2);
        assert_eq!(gi1, gi2);
        assert_eq!(gk1, gk2);
    }
}
