//! Raw convolution and local-filtering kernels over flat `[C, H, W]` planes.
//!
//! These are the slice-level building blocks behind the tape ops; they do
//! no shape validation of their own.

use super::Real;

/// Border handling for spatial neighbourhoods.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Output keeps `ceil(H / stride)` rows; out-of-frame taps read zero.
    SameZero,
    /// No padding; output is `(H - k) / stride + 1`.
    Valid,
    /// Same output size as [`Padding::SameZero`], out-of-frame taps read the
    /// nearest edge pixel.
    SameReplicate,
}

impl Padding {
    pub fn output_len(self, len: usize, k: usize, stride: usize) -> Option<usize> {
        match self {
            Padding::Valid => (len >= k).then(|| (len - k) / stride + 1),
            Padding::SameZero | Padding::SameReplicate => Some(len.div_ceil(stride)),
        }
    }

    fn offset(self, k: usize) -> isize {
        match self {
            Padding::Valid => 0,
            _ => (k as isize - 1) / 2,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub k: usize,
    pub stride: usize,
    pub padding: Padding,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn col_rows(&self) -> usize {
        self.channels * self.k * self.k
    }

    pub fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    /// True when the column matrix is the input plane itself.
    pub fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1
    }

    /// Source coordinate for output row/col `o` and tap `t`, or `None` for a
    /// zero-padded tap.
    #[inline]
    fn source(&self, o: usize, t: usize, len: usize) -> Option<usize> {
        let pos = (o * self.stride + t) as isize - self.padding.offset(self.k);
        if pos >= 0 && (pos as usize) < len {
            Some(pos as usize)
        } else if self.padding == Padding::SameReplicate {
            Some(pos.clamp(0, len as isize - 1) as usize)
        } else {
            None
        }
    }

    /// Output positions `lo..hi` whose source index for tap `t` lies inside
    /// `0..len`; positions before `lo` fall off the low edge, those from `hi`
    /// on off the high edge. `start` is the source index at `lo`.
    #[inline]
    fn span(&self, t: usize, len: usize, out_len: usize) -> (usize, usize, usize) {
        let pad = self.padding.offset(self.k);
        let first = t as isize - pad;
        let s = self.stride as isize;
        let lo = if first >= 0 { 0 } else { ((-first + s - 1) / s) as usize }.min(out_len);
        let last = len as isize - 1 - first;
        let hi = if last < 0 { 0 } else { ((last / s) as usize + 1).min(out_len) }.max(lo);
        let start = (lo as isize * s + first).max(0) as usize;
        (lo, hi, start)
    }
}

/// Unfolds `input` (`[C, H, W]`) into `cols` (`[C·k·k, Ho·Wo]`).
pub(crate) fn im2col<T: Real>(g: &ConvGeometry, input: &[T], cols: &mut [T]) {
    let plane = g.height * g.width;
    let n = g.col_cols();
    let replicate = g.padding == Padding::SameReplicate;
    for c in 0..g.channels {
        let src = &input[c * plane..(c + 1) * plane];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * n..(row + 1) * n];
                let (lo, hi, start) = g.span(kx, g.width, g.out_w);
                for oy in 0..g.out_h {
                    let out_row = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    let Some(iy) = g.source(oy, ky, g.height) else {
                        out_row.fill(T::zero());
                        continue;
                    };
                    let line = &src[iy * g.width..(iy + 1) * g.width];
                    let (left, right) = if replicate { (line[0], line[g.width - 1]) } else { (T::zero(), T::zero()) };
                    out_row[..lo].fill(left);
                    out_row[hi..].fill(right);
                    let mid = &mut out_row[lo..hi];
                    if mid.is_empty() {
                        continue;
                    }
                    if g.stride == 1 {
                        mid.copy_from_slice(&line[start..start + mid.len()]);
                    } else {
                        for (j, v) in mid.iter_mut().enumerate() {
                            *v = line[start + j * g.stride];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates `cols` back into `grad_input`.
pub(crate) fn col2im<T: Real>(g: &ConvGeometry, cols: &[T], grad_input: &mut [T]) {
    let plane = g.height * g.width;
    let n = g.col_cols();
    let replicate = g.padding == Padding::SameReplicate;
    for c in 0..g.channels {
        let dst = &mut grad_input[c * plane..(c + 1) * plane];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &cols[row * n..(row + 1) * n];
                let (lo, hi, start) = g.span(kx, g.width, g.out_w);
                for oy in 0..g.out_h {
                    let Some(iy) = g.source(oy, ky, g.height) else {
                        continue;
                    };
                    let line = &mut dst[iy * g.width..(iy + 1) * g.width];
                    let vals = &src[oy * g.out_w..(oy + 1) * g.out_w];
                    if replicate {
                        let w = g.width - 1;
                        line[0] = vals[..lo].iter().fold(line[0], |a, &v| a + v);
                        line[w] = vals[hi..].iter().fold(line[w], |a, &v| a + v);
                    }
                    for (j, &v) in vals[lo..hi].iter().enumerate() {
                        let ix = start + j * g.stride;
                        line[ix] = line[ix] + v;
                    }
                }
            }
        }
    }
}

/// Per-pixel local filtering of one sample.
///
/// `frame` is `[C, H, W]`, `filters` is `[K², H, W]`; every channel of the
/// frame is filtered with the same per-pixel kernel and replicate borders.
pub(crate) fn dynamic_filter_forward<T: Real>(
    frame: &[T],
    filters: &[T],
    channels: usize,
    height: usize,
    width: usize,
    k: usize,
    out: &mut [T],
) {
    let plane = height * width;
    let r = (k / 2) as isize;
    let mut lo = vec![T::zero(); plane];
    let mut hi = vec![T::zero(); plane];
    for c in 0..channels {
        let src = &frame[c * plane..(c + 1) * plane];
        let dst = &mut out[c * plane..(c + 1) * plane];
        dst.fill(T::zero());
        lo.fill(T::infinity());
        hi.fill(T::neg_infinity());
        for q in 0..k * k {
            let du = (q / k) as isize - r;
            let dv = (q % k) as isize - r;
            let w = &filters[q * plane..(q + 1) * plane];
            for i in 0..height {
                let si = clamp_index(i as isize + du, height);
                let line = &src[si * width..(si + 1) * width];
                let wrow = &w[i * width..(i + 1) * width];
                let row = i * width..(i + 1) * width;
                let (orow, lrow, hrow) = (&mut dst[row.clone()], &mut lo[row.clone()], &mut hi[row]);
                for j in 0..width {
                    let x = line[clamp_index(j as isize + dv, width)];
                    orow[j] = orow[j] + wrow[j] * x;
                    lrow[j] = lrow[j].min(x);
                    hrow[j] = hrow[j].max(x);
                }
            }
        }
        for ((o, &l), &h) in dst.iter_mut().zip(&lo).zip(&hi) {
            *o = o.max(l).min(h);
        }
    }
}

/// Gradients of [`dynamic_filter_forward`] with respect to the frame and the
/// filters; either output may be skipped.
#[allow(clippy::too_many_arguments)]
pub(crate) fn dynamic_filter_backward<T: Real>(
    frame: &[T],
    filters: &[T],
    grad_out: &[T],
    channels: usize,
    height: usize,
    width: usize,
    k: usize,
    mut grad_frame: Option<&mut [T]>,
    mut grad_filters: Option<&mut [T]>,
) {
    let plane = height * width;
    let r = (k / 2) as isize;
    for c in 0..channels {
        let src = &frame[c * plane..(c + 1) * plane];
        let go = &grad_out[c * plane..(c + 1) * plane];
        for q in 0..k * k {
            let du = (q / k) as isize - r;
            let dv = (q % k) as isize - r;
            let w = &filters[q * plane..(q + 1) * plane];
            for i in 0..height {
                let si = clamp_index(i as isize + du, height);
                for j in 0..width {
                    let sj = clamp_index(j as isize + dv, width);
                    let g = go[i * width + j];
                    if let Some(gf) = grad_frame.as_deref_mut() {
                        let idx = c * plane + si * width + sj;
                        gf[idx] = gf[idx] + g * w[i * width + j];
                    }
                    if let Some(gw) = grad_filters.as_deref_mut() {
                        let idx = q * plane + i * width + j;
                        gw[idx] = gw[idx] + g * src[si * width + sj];
                    }
                }
            }
        }
    }
}

#[inline]
fn clamp_index(i: isize, len: usize) -> usize {
    i.clamp(0, len as isize - 1) as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geometry(h: usize, w: usize, k: usize, stride: usize, padding: Padding) -> ConvGeometry {
        ConvGeometry {
            channels: 1,
            height: h,
            width: w,
            k,
            stride,
            padding,
            out_h: padding.output_len(h, k, stride).unwrap(),
            out_w: padding.output_len(w, k, stride).unwrap(),
        }
    }

    #[test]
    fn output_sizes() {
        assert_eq!(Padding::SameZero.output_len(32, 3, 2), Some(16));
        assert_eq!(Padding::SameZero.output_len(7, 3, 2), Some(4));
        assert_eq!(Padding::Valid.output_len(7, 3, 2), Some(3));
        assert_eq!(Padding::Valid.output_len(2, 3, 1), None);
    }

    fn naive_im2col(g: &ConvGeometry, input: &[f64]) -> Vec<f64> {
        let n = g.col_cols();
        let mut cols = vec![0.0; g.col_rows() * n];
        for c in 0..g.channels {
            for ky in 0..g.k {
                for kx in 0..g.k {
                    let row = (c * g.k + ky) * g.k + kx;
                    for oy in 0..g.out_h {
                        for ox in 0..g.out_w {
                            if let (Some(iy), Some(ix)) = (g.source(oy, ky, g.height), g.source(ox, kx, g.width)) {
                                cols[row * n + oy * g.out_w + ox] = input[(c * g.height + iy) * g.width + ix];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    proptest::proptest! {
        #[test]
        fn unfolding_matches_per_element_reference(
            h in 1usize..9, w in 1usize..9, half in 0usize..3, stride in 1usize..4, mode in 0usize..3, ch in 1usize..3,
        ) {
            let k = 2 * half + 1;
            let padding = [Padding::SameZero, Padding::Valid, Padding::SameReplicate][mode];
            proptest::prop_assume!(padding.output_len(h, k, stride).is_some() && padding.output_len(w, k, stride).is_some());
            let g = ConvGeometry { channels: ch, ..geometry(h, w, k, stride, padding) };
            let x: Vec<f64> = (0..ch * h * w).map(|i| (i as f64 * 0.731).sin()).collect();
            let mut cols = vec![f64::NAN; g.col_rows() * g.col_cols()];
            im2col(&g, &x, &mut cols);
            proptest::prop_assert_eq!(&cols, &naive_im2col(&g, &x));
            // adjointness pins col2im to the same index map
            let y: Vec<f64> = (0..cols.len()).map(|i| (i as f64 * 0.29).cos()).collect();
            let mut back = vec![0.0; x.len()];
            col2im(&g, &y, &mut back);
            let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
            proptest::prop_assert!((lhs - rhs).abs() < 1e-9);
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)> for every padding mode.
        for padding in [Padding::SameZero, Padding::Valid, Padding::SameReplicate] {
            let g = geometry(5, 4, 3, 2, padding);
            let x: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).sin()).collect();
            let y: Vec<f64> =
                (0..g.col_rows() * g.col_cols()).map(|i| (i as f64 * 0.11).cos()).collect();
            let mut cols = vec![0.0; y.len()];
            im2col(&g, &x, &mut cols);
            let mut back = vec![0.0; x.len()];
            col2im(&g, &y, &mut back);
            let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-12, "{padding:?}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn replicate_taps_read_edge_pixels() {
        let g = geometry(2, 2, 3, 1, Padding::SameReplicate);
        let x = [1.0f32, 2.0, 3.0, 4.0];
        let mut cols = vec![0.0; 9 * 4];
        im2col(&g, &x, &mut cols);
        // tap (0,0) at output (0,0) reads input (-1,-1) -> clamped to (0,0)
        assert_eq!(cols[0], 1.0);
        // tap (2,2) at output (1,1) reads (2,2) -> clamped to (1,1)
        assert_eq!(cols[8 * 4 + 3], 4.0);
    }
}
