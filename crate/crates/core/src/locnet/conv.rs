//! Direct stride-1 "same" convolutions.
//!
//! The input is copied into zero-padded planes whose rows are `w + kw - 1`
//! wide. Outputs are computed on that wide grid, so every kernel tap becomes
//! a constant offset into the padded plane and the inner loops run over
//! contiguous memory; the extra `kw - 1` columns per row are discarded.
//! On x86-64 with AVX2 and FMA the same kernels are compiled with those
//! features enabled and selected at runtime.

use super::net::Real;
use super::spec::Shape;

/// Output channels accumulated together; the weight-gradient kernel is
/// written out for exactly four.
const CB: usize = 4;
/// Wide-grid positions per accumulator.
const V: usize = 16;

/// Geometry of the padded input and the wide output grid.
#[derive(Debug, Clone, Copy)]
struct Grid {
    h: usize,
    w: usize,
    /// Padded row length.
    row: usize,
    /// Padded plane length, including slack so that the last accumulator
    /// chunk may read past the final row.
    plane: usize,
    /// Wide output length, rounded up to a multiple of `V`.
    q: usize,
    kh: usize,
    kw: usize,
}

impl Grid {
    fn new(s: Shape, kh: usize, kw: usize) -> Self {
        let row = s.w + kw - 1;
        let q = (s.h * row).div_ceil(V) * V;
        let plane = q + (kh - 1) * row + kw - 1;
        Self {
            h: s.h,
            w: s.w,
            row,
            plane,
            q,
            kh,
            kw,
        }
    }

    fn taps(&self) -> usize {
        self.kh * self.kw
    }

    fn offset(&self, tap: usize) -> usize {
        (tap / self.kw) * self.row + tap % self.kw
    }
}

/// Reusable buffers for [`conv_forward`] and friends.
#[derive(Debug, Default)]
pub struct ConvScratch<F> {
    padded: Vec<F>,
    wide: Vec<F>,
    packed: Vec<F>,
    flipped: Vec<F>,
}

fn pad_into<F: Real>(x: &[F], c: usize, g: &Grid, out: &mut Vec<F>) {
    out.clear();
    out.resize(c * g.plane, F::zero());
    let (ph, pw) = (g.kh / 2, g.kw / 2);
    for ci in 0..c {
        let src = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        let dst = &mut out[ci * g.plane..(ci + 1) * g.plane];
        for (y, row) in src.chunks_exact(g.w).enumerate() {
            let at = (y + ph) * g.row + pw;
            dst[at..at + g.w].copy_from_slice(row);
        }
    }
}

#[inline(always)]
fn madd<F: Real, const FMA: bool>(a: F, b: F, acc: F) -> F {
    if FMA {
        a.mul_add(b, acc)
    } else {
        acc + a * b
    }
}

/// `wide[co][q] = Σ_{ci,tap} w[co][ci][tap] · padded[ci][q + offset(tap)]`.
///
/// `packed` holds the weights of each block of `CB` output channels as
/// `[ci][tap][CB]`, zero-filled past `cout`.
#[inline(always)]
fn correlate<F: Real, const FMA: bool>(padded: &[F], cin: usize, packed: &[F], cout: usize, g: &Grid, wide: &mut [F]) {
    let offs: Vec<usize> = (0..g.taps()).map(|t| g.offset(t)).collect();
    let block_len = cin * offs.len() * CB;
    for (b, wb) in packed.chunks_exact(block_len).enumerate() {
        let co = b * CB;
        let nb = CB.min(cout - co);
        for q0 in (0..g.q).step_by(V) {
            let mut acc = [[F::zero(); V]; CB];
            for (plane, wrow) in padded.chunks_exact(g.plane).zip(wb.chunks_exact(offs.len() * CB)) {
                for (&off, wt) in offs.iter().zip(wrow.chunks_exact(CB)) {
                    let xs: &[F; V] = plane[q0 + off..q0 + off + V].try_into().unwrap();
                    for (a, &wv) in acc.iter_mut().zip(wt) {
                        for j in 0..V {
                            a[j] = madd::<F, FMA>(wv, xs[j], a[j]);
                        }
                    }
                }
            }
            for (c, a) in acc.iter().enumerate().take(nb) {
                wide[(co + c) * g.q + q0..(co + c) * g.q + q0 + V].copy_from_slice(a);
            }
        }
    }
}

/// `gw[co][ci][tap] += Σ_q dwide[co][q] · padded[ci][q + offset(tap)]`,
/// where `dwide` is zero on the discarded columns and holds whole blocks of
/// `CB` channels (zero past `cout`).
#[inline(always)]
fn weight_grad<F: Real, const FMA: bool>(padded: &[F], cin: usize, dwide: &[F], cout: usize, g: &Grid, gw: &mut [F]) {
    const L: usize = 8;
    let offs: Vec<usize> = (0..g.taps()).map(|t| g.offset(t)).collect();
    let fan_in = cin * offs.len();
    // Tiles of the wide grid keep the gradient rows and the input window
    // they meet in L1 across every (ci, tap) pair.
    const TILE: usize = 1024;
    for (b, db) in dwide.chunks_exact(CB * g.q).enumerate() {
        let co = b * CB;
        let nb = CB.min(cout - co);
        for t0 in (0..g.q).step_by(TILE) {
            let t1 = (t0 + TILE).min(g.q);
            for (ci, plane) in padded.chunks_exact(g.plane).enumerate() {
                for (tap, &off) in offs.iter().enumerate() {
                    let (xs, _) = plane[off + t0..off + t1].as_chunks::<L>();
                    let rows: [&[[F; L]]; CB] =
                        std::array::from_fn(|c| db[c * g.q + t0..c * g.q + t1].as_chunks::<L>().0);
                    let mut acc = [[F::zero(); L]; CB];
                    for ((((x, e0), e1), e2), e3) in xs.iter().zip(rows[0]).zip(rows[1]).zip(rows[2]).zip(rows[3]) {
                        for j in 0..L {
                            acc[0][j] = madd::<F, FMA>(e0[j], x[j], acc[0][j]);
                            acc[1][j] = madd::<F, FMA>(e1[j], x[j], acc[1][j]);
                            acc[2][j] = madd::<F, FMA>(e2[j], x[j], acc[2][j]);
                            acc[3][j] = madd::<F, FMA>(e3[j], x[j], acc[3][j]);
                        }
                    }
                    for (c, a) in acc.iter().enumerate().take(nb) {
                        let s = a.iter().fold(F::zero(), |s, v| s + *v);
                        gw[(co + c) * fan_in + ci * offs.len() + tap] += s;
                    }
                }
            }
        }
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn correlate_avx2<F: Real>(padded: &[F], cin: usize, w: &[F], cout: usize, g: &Grid, wide: &mut [F]) {
    correlate::<F, true>(padded, cin, w, cout, g, wide)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn weight_grad_avx2<F: Real>(padded: &[F], cin: usize, dwide: &[F], cout: usize, g: &Grid, gw: &mut [F]) {
    weight_grad::<F, true>(padded, cin, dwide, cout, g, gw)
}

fn has_avx2_fma() -> bool {
    #[cfg(target_arch = "x86_64")]
    {
        std::is_x86_feature_detected!("avx2") && std::is_x86_feature_detected!("fma")
    }
    #[cfg(not(target_arch = "x86_64"))]
    {
        false
    }
}

fn run_correlate<F: Real>(padded: &[F], cin: usize, w: &[F], cout: usize, g: &Grid, wide: &mut [F]) {
    #[cfg(target_arch = "x86_64")]
    if has_avx2_fma() {
        // SAFETY: the required CPU features were detected at runtime.
        return unsafe { correlate_avx2(padded, cin, w, cout, g, wide) };
    }
    correlate::<F, false>(padded, cin, w, cout, g, wide)
}

fn run_weight_grad<F: Real>(padded: &[F], cin: usize, dwide: &[F], cout: usize, g: &Grid, gw: &mut [F]) {
    #[cfg(target_arch = "x86_64")]
    if has_avx2_fma() {
        // SAFETY: the required CPU features were detected at runtime.
        return unsafe { weight_grad_avx2(padded, cin, dwide, cout, g, gw) };
    }
    weight_grad::<F, false>(padded, cin, dwide, cout, g, gw)
}

/// Reorders `[cout][cin][taps]` weights into blocks of `[cin][taps][CB]`.
fn pack_weights<F: Real>(w: &[F], cin: usize, cout: usize, taps: usize, out: &mut Vec<F>) {
    let blocks = cout.div_ceil(CB);
    out.clear();
    out.resize(blocks * cin * taps * CB, F::zero());
    for co in 0..cout {
        let (b, c) = (co / CB, co % CB);
        for ci in 0..cin {
            for t in 0..taps {
                out[((b * cin + ci) * taps + t) * CB + c] = w[(co * cin + ci) * taps + t];
            }
        }
    }
}

fn compact<F: Real>(wide: &[F], cout: usize, g: &Grid, y: &mut Vec<F>) {
    y.clear();
    for co in 0..cout {
        let plane = &wide[co * g.q..];
        for r in 0..g.h {
            y.extend_from_slice(&plane[r * g.row..r * g.row + g.w]);
        }
    }
}

/// Writes `dy` (`[cout][h][w]`) onto the wide grid, zeroing the extra columns.
fn widen<F: Real>(dy: &[F], cout: usize, g: &Grid, wide: &mut Vec<F>) {
    wide.clear();
    wide.resize(cout.div_ceil(CB) * CB * g.q, F::zero());
    for co in 0..cout {
        for r in 0..g.h {
            let src = &dy[(co * g.h + r) * g.w..(co * g.h + r + 1) * g.w];
            wide[co * g.q + r * g.row..co * g.q + r * g.row + g.w].copy_from_slice(src);
        }
    }
}

/// `y = conv(x, w)` without bias; `w` is `[cout][cin][kh][kw]`.
#[allow(clippy::too_many_arguments)]
pub fn conv_forward<F: Real>(
    x: &[F],
    s: Shape,
    w: &[F],
    cout: usize,
    kh: usize,
    kw: usize,
    y: &mut Vec<F>,
    scratch: &mut ConvScratch<F>,
) {
    debug_assert_eq!(x.len(), s.len());
    debug_assert_eq!(w.len(), cout * s.c * kh * kw);
    let g = Grid::new(s, kh, kw);
    pad_into(x, s.c, &g, &mut scratch.padded);
    pack_weights(w, s.c, cout, g.taps(), &mut scratch.packed);
    scratch.wide.resize(cout * g.q, F::zero());
    run_correlate(&scratch.padded, s.c, &scratch.packed, cout, &g, &mut scratch.wide);
    compact(&scratch.wide, cout, &g, y);
}

/// Accumulates the weight gradient for output gradient `dy` into `gw`.
#[allow(clippy::too_many_arguments)]
pub fn conv_weight_grad<F: Real>(
    x: &[F],
    s: Shape,
    dy: &[F],
    cout: usize,
    kh: usize,
    kw: usize,
    gw: &mut [F],
    scratch: &mut ConvScratch<F>,
) {
    let g = Grid::new(s, kh, kw);
    pad_into(x, s.c, &g, &mut scratch.padded);
    widen(dy, cout, &g, &mut scratch.wide);
    run_weight_grad(&scratch.padded, s.c, &scratch.wide, cout, &g, gw);
}

/// Gradient with respect to the input: a "same" convolution of `dy` with the
/// channel-transposed, spatially flipped kernel.
#[allow(clippy::too_many_arguments)]
pub fn conv_input_grad<F: Real>(
    dy: &[F],
    s: Shape,
    w: &[F],
    cout: usize,
    kh: usize,
    kw: usize,
    dx: &mut Vec<F>,
    scratch: &mut ConvScratch<F>,
) {
    let (cin, taps) = (s.c, kh * kw);
    scratch.flipped.clear();
    scratch.flipped.resize(w.len(), F::zero());
    for co in 0..cout {
        for ci in 0..cin {
            for t in 0..taps {
                scratch.flipped[(ci * cout + co) * taps + (taps - 1 - t)] = w[(co * cin + ci) * taps + t];
            }
        }
    }
    let ds = Shape {
        c: cout,
        h: s.h,
        w: s.w,
    };
    let flipped = std::mem::take(&mut scratch.flipped);
    conv_forward(dy, ds, &flipped, cin, kh, kw, dx, scratch);
    scratch.flipped = flipped;
}
