//! Hand-vectorized `f32` update MLP for x86-64.
//!
//! Four active cells are evaluated together so every weight load feeds four
//! fused multiply-adds. The summation order per cell is fixed, so results do
//! not depend on which cells are grouped together. The reverse pass
//! accumulates in cell order with one fused multiply-add per term, matching
//! the scalar loop it replaces.

pub(super) struct Weights<'a> {
    pub w1: &'a [f32],
    pub b1: &'a [f32],
    pub w2: &'a [f32],
    pub in_dim: usize,
    pub hidden: usize,
    pub channels: usize,
}

const MAX_HIDDEN: usize = 256;
const MAX_CHANNELS: usize = 16;
const CELLS: usize = 4;

/// Adds the masked update to the `active` cells of one row, optionally saving
/// each active cell's post-ReLU hidden vector (in `active` order) to `save`.
/// Returns `false` without touching `s_row` when no vector path applies.
pub(super) fn update_cells(
    k: &Weights,
    z_row: &[f32],
    s_row: &mut [f32],
    active: &[usize],
    save: Option<&mut [f32]>,
) -> bool {
    let shapes_ok = k.hidden <= MAX_HIDDEN
        && save.as_ref().is_none_or(|s| s.len() >= active.len() * k.hidden)
        && k.channels <= MAX_CHANNELS
        && k.w1.len() == k.in_dim * k.hidden
        && k.b1.len() == k.hidden
        && k.w2.len() == k.hidden * k.channels
        && active.last().is_none_or(|&c| (c + 1) * k.in_dim <= z_row.len() && (c + 1) * k.channels <= s_row.len());
    if !shapes_ok {
        return false;
    }
    #[cfg(target_arch = "x86_64")]
    {
        if k.hidden % 32 == 0 && std::is_x86_feature_detected!("avx512f") {
            // SAFETY: feature detected above; slice extents checked by `shapes_ok`.
            unsafe { x86::avx512(k, z_row, s_row, active, save) };
            return true;
        }
        if k.hidden % 16 == 0 && std::is_x86_feature_detected!("avx2") && std::is_x86_feature_detected!("fma") {
            // SAFETY: as above.
            unsafe { x86::avx2(k, z_row, s_row, active, save) };
            return true;
        }
    }
    let _ = (z_row, s_row, active, save);
    false
}

/// Transposed weights for [`backward_cells`]: `w1t` is `hidden × stride`
/// (rows zero-padded, `stride` a multiple of 32), `w2t` is `channels × hidden`.
pub(super) struct Reverse<'a> {
    pub w1t: &'a [f32],
    pub stride: usize,
    pub w2t: &'a [f32],
    pub in_dim: usize,
    pub hidden: usize,
    pub channels: usize,
}

const MAX_STRIDE: usize = 256;

/// Reverse pass over the active cells of one row: writes input gradients to
/// `gz_row` and accumulates parameter gradients. Returns `false` without
/// touching anything when no vector path applies.
#[allow(clippy::too_many_arguments)]
pub(super) fn backward_cells(
    k: &Reverse,
    z_row: &[f32],
    hidden: &[f32],
    gd_row: &[f32],
    active: &[usize],
    gz_row: &mut [f32],
    gw1: &mut [f32],
    gb1: &mut [f32],
    gw2t: &mut [f32],
) -> bool {
    let (n, h, c) = (k.in_dim, k.hidden, k.channels);
    let shapes_ok = h % 16 == 0
        && h <= MAX_HIDDEN
        && k.stride % 32 == 0
        && k.stride >= n
        && k.stride <= MAX_STRIDE
        && k.w1t.len() == h * k.stride
        && k.w2t.len() == c * h
        && hidden.len() >= active.len() * h
        && gw1.len() == n * h
        && gb1.len() == h
        && gw2t.len() == c * h
        && active.last().is_none_or(|&col| {
            (col + 1) * n <= z_row.len() && (col + 1) * n <= gz_row.len() && (col + 1) * c <= gd_row.len()
        });
    if !shapes_ok {
        return false;
    }
    #[cfg(target_arch = "x86_64")]
    {
        if std::is_x86_feature_detected!("avx512f") {
            // SAFETY: feature detected above; slice extents checked by `shapes_ok`.
            unsafe { x86::avx512_backward(k, z_row, hidden, gd_row, active, gz_row, gw1, gb1, gw2t) };
            return true;
        }
    }
    let _ = (z_row, hidden, gd_row, active, gz_row, gw1, gb1, gw2t);
    false
}

#[cfg(target_arch = "x86_64")]
mod x86 {
    use super::{Reverse, Weights, CELLS, MAX_CHANNELS, MAX_HIDDEN};
    use std::arch::x86_64::*;

    /// Pointers to the perception vectors of a group, padded by repeating the last cell.
    #[inline(always)]
    fn group_inputs(z_row: &[f32], in_dim: usize, group: &[usize]) -> [*const f32; CELLS] {
        std::array::from_fn(|b| z_row[group[b.min(group.len() - 1)] * in_dim..].as_ptr())
    }

    #[inline(always)]
    fn store_hidden(hid: &[[f32; MAX_HIDDEN]; CELLS], h: usize, group: usize, len: usize, save: Option<&mut [f32]>) {
        if let Some(save) = save {
            for (b, cell) in hid.iter().enumerate().take(len) {
                let at = (group * CELLS + b) * h;
                save[at..at + h].copy_from_slice(&cell[..h]);
            }
        }
    }

    #[target_feature(enable = "avx512f")]
    pub(super) unsafe fn avx512(
        k: &Weights,
        z_row: &[f32],
        s_row: &mut [f32],
        active: &[usize],
        mut save: Option<&mut [f32]>,
    ) {
        let (n, h, c) = (k.in_dim, k.hidden, k.channels);
        let lanes: __mmask16 = ((1u32 << c) - 1) as __mmask16;
        let zero = _mm512_setzero_ps();
        let mut hid = [[0f32; MAX_HIDDEN]; CELLS];
        for (g, group) in active.chunks(CELLS).enumerate() {
            let zp = group_inputs(z_row, n, group);
            for t in (0..h).step_by(32) {
                let b0 = _mm512_loadu_ps(k.b1.as_ptr().add(t));
                let b1 = _mm512_loadu_ps(k.b1.as_ptr().add(t + 16));
                let mut a = [[b0, b1]; CELLS];
                let mut wp = k.w1.as_ptr().add(t);
                for i in 0..n {
                    let w0 = _mm512_loadu_ps(wp);
                    let w1 = _mm512_loadu_ps(wp.add(16));
                    for b in 0..CELLS {
                        let z = _mm512_set1_ps(*zp[b].add(i));
                        a[b][0] = _mm512_fmadd_ps(z, w0, a[b][0]);
                        a[b][1] = _mm512_fmadd_ps(z, w1, a[b][1]);
                    }
                    wp = wp.add(h);
                }
                for b in 0..CELLS {
                    _mm512_storeu_ps(hid[b].as_mut_ptr().add(t), _mm512_max_ps(a[b][0], zero));
                    _mm512_storeu_ps(hid[b].as_mut_ptr().add(t + 16), _mm512_max_ps(a[b][1], zero));
                }
            }
            store_hidden(&hid, h, g, group.len(), save.as_deref_mut());
            // Two partial sums per cell over the two halves of the hidden layer.
            let half = h / 2;
            let mut d = [[zero; 2]; CELLS];
            for j in 0..half {
                let w0 = _mm512_maskz_loadu_ps(lanes, k.w2.as_ptr().add(j * c));
                let w1 = _mm512_maskz_loadu_ps(lanes, k.w2.as_ptr().add((j + half) * c));
                for b in 0..CELLS {
                    d[b][0] = _mm512_fmadd_ps(_mm512_set1_ps(hid[b][j]), w0, d[b][0]);
                    d[b][1] = _mm512_fmadd_ps(_mm512_set1_ps(hid[b][j + half]), w1, d[b][1]);
                }
            }
            for (b, &col) in group.iter().enumerate() {
                let sp = s_row.as_mut_ptr().add(col * c);
                let s = _mm512_maskz_loadu_ps(lanes, sp);
                let delta = _mm512_add_ps(d[b][0], d[b][1]);
                _mm512_mask_storeu_ps(sp, lanes, _mm512_add_ps(s, delta));
            }
        }
    }

    #[inline(always)]
    fn tail_mask(n: usize, v: usize) -> __mmask16 {
        let rem = n.saturating_sub(16 * v).min(16);
        ((1u32 << rem) - 1) as __mmask16
    }

    #[target_feature(enable = "avx512f")]
    #[allow(clippy::too_many_arguments)]
    pub(super) unsafe fn avx512_backward(
        k: &Reverse,
        z_row: &[f32],
        hidden: &[f32],
        gd_row: &[f32],
        active: &[usize],
        gz_row: &mut [f32],
        gw1: &mut [f32],
        gb1: &mut [f32],
        gw2t: &mut [f32],
    ) {
        let (n, h, c, stride) = (k.in_dim, k.hidden, k.channels, k.stride);
        let zero = _mm512_setzero_ps();
        for (g, group) in active.chunks(CELLS).enumerate() {
            let mut dh = [[0f32; MAX_HIDDEN]; CELLS];
            for (b, &col) in group.iter().enumerate() {
                let gd = gd_row.as_ptr().add(col * c);
                let hb = hidden.as_ptr().add((g * CELLS + b) * h);
                for t in (0..h).step_by(16) {
                    let mut acc = zero;
                    for ch in 0..c {
                        acc = _mm512_fmadd_ps(_mm512_set1_ps(*gd.add(ch)), _mm512_loadu_ps(k.w2t.as_ptr().add(ch * h + t)), acc);
                    }
                    let live = _mm512_cmp_ps_mask::<_CMP_GT_OQ>(_mm512_loadu_ps(hb.add(t)), zero);
                    let d = _mm512_maskz_mov_ps(live, acc);
                    _mm512_storeu_ps(dh[b].as_mut_ptr().add(t), d);
                    let pb = gb1.as_mut_ptr().add(t);
                    _mm512_storeu_ps(pb, _mm512_add_ps(_mm512_loadu_ps(pb), d));
                }
                for ch in 0..c {
                    let gv = _mm512_set1_ps(*gd.add(ch));
                    let row = gw2t.as_mut_ptr().add(ch * h);
                    for t in (0..h).step_by(16) {
                        let p = row.add(t);
                        _mm512_storeu_ps(p, _mm512_fmadd_ps(gv, _mm512_loadu_ps(hb.add(t)), _mm512_loadu_ps(p)));
                    }
                }
            }
            // Padding cells carry a zero `dh` and reuse the last real input.
            let zp = group_inputs(z_row, n, group);
            for t in (0..h).step_by(16) {
                let d: [__m512; CELLS] = std::array::from_fn(|b| _mm512_loadu_ps(dh[b].as_ptr().add(t)));
                for i in 0..n {
                    let p = gw1.as_mut_ptr().add(i * h + t);
                    let mut acc = _mm512_loadu_ps(p);
                    for b in 0..CELLS {
                        acc = _mm512_fmadd_ps(_mm512_set1_ps(*zp[b].add(i)), d[b], acc);
                    }
                    _mm512_storeu_ps(p, acc);
                }
            }
            for v in (0..stride / 16).step_by(2) {
                let (m0, m1) = (tail_mask(n, v), tail_mask(n, v + 1));
                if m0 == 0 {
                    break;
                }
                let mut acc = [[zero; 2]; CELLS];
                for (b, &col) in group.iter().enumerate() {
                    let p = gz_row.as_ptr().add(col * n + 16 * v);
                    acc[b] = [_mm512_maskz_loadu_ps(m0, p), _mm512_maskz_loadu_ps(m1, p.add(16))];
                }
                for j in 0..h {
                    let wp = k.w1t.as_ptr().add(j * stride + 16 * v);
                    let (w0, w1) = (_mm512_loadu_ps(wp), _mm512_loadu_ps(wp.add(16)));
                    for b in 0..CELLS {
                        let dj = _mm512_set1_ps(dh[b][j]);
                        acc[b][0] = _mm512_fmadd_ps(dj, w0, acc[b][0]);
                        acc[b][1] = _mm512_fmadd_ps(dj, w1, acc[b][1]);
                    }
                }
                for (b, &col) in group.iter().enumerate() {
                    let p = gz_row.as_mut_ptr().add(col * n + 16 * v);
                    _mm512_mask_storeu_ps(p, m0, acc[b][0]);
                    _mm512_mask_storeu_ps(p.add(16), m1, acc[b][1]);
                }
            }
        }
    }

    #[target_feature(enable = "avx2,fma")]
    pub(super) unsafe fn avx2(
        k: &Weights,
        z_row: &[f32],
        s_row: &mut [f32],
        active: &[usize],
        mut save: Option<&mut [f32]>,
    ) {
        let (n, h, c) = (k.in_dim, k.hidden, k.channels);
        let zero = _mm256_setzero_ps();
        let mut w2p = [0f32; MAX_HIDDEN * MAX_CHANNELS];
        for (dst, src) in w2p.chunks_exact_mut(MAX_CHANNELS).zip(k.w2.chunks_exact(c)) {
            dst[..c].copy_from_slice(src);
        }
        let mut hid = [[0f32; MAX_HIDDEN]; CELLS];
        for (g, group) in active.chunks(CELLS).enumerate() {
            let zp = group_inputs(z_row, n, group);
            for t in (0..h).step_by(16) {
                let b0 = _mm256_loadu_ps(k.b1.as_ptr().add(t));
                let b1 = _mm256_loadu_ps(k.b1.as_ptr().add(t + 8));
                let mut a = [[b0, b1]; CELLS];
                let mut wp = k.w1.as_ptr().add(t);
                for i in 0..n {
                    let w0 = _mm256_loadu_ps(wp);
                    let w1 = _mm256_loadu_ps(wp.add(8));
                    for b in 0..CELLS {
                        let z = _mm256_set1_ps(*zp[b].add(i));
                        a[b][0] = _mm256_fmadd_ps(z, w0, a[b][0]);
                        a[b][1] = _mm256_fmadd_ps(z, w1, a[b][1]);
                    }
                    wp = wp.add(h);
                }
                for b in 0..CELLS {
                    _mm256_storeu_ps(hid[b].as_mut_ptr().add(t), _mm256_max_ps(a[b][0], zero));
                    _mm256_storeu_ps(hid[b].as_mut_ptr().add(t + 8), _mm256_max_ps(a[b][1], zero));
                }
            }
            store_hidden(&hid, h, g, group.len(), save.as_deref_mut());
            let mut d = [[zero; 2]; CELLS];
            for j in 0..h {
                let w0 = _mm256_loadu_ps(w2p.as_ptr().add(j * MAX_CHANNELS));
                let w1 = _mm256_loadu_ps(w2p.as_ptr().add(j * MAX_CHANNELS + 8));
                for b in 0..CELLS {
                    let hj = _mm256_set1_ps(hid[b][j]);
                    d[b][0] = _mm256_fmadd_ps(hj, w0, d[b][0]);
                    d[b][1] = _mm256_fmadd_ps(hj, w1, d[b][1]);
                }
            }
            for (b, &col) in group.iter().enumerate() {
                let mut delta = [0f32; MAX_CHANNELS];
                _mm256_storeu_ps(delta.as_mut_ptr(), d[b][0]);
                _mm256_storeu_ps(delta.as_mut_ptr().add(8), d[b][1]);
                for (x, &v) in s_row[col * c..(col + 1) * c].iter_mut().zip(&delta) {
                    *x += v;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn reference(k: &Weights, z_row: &[f32], s_row: &mut [f32], active: &[usize]) {
        for &col in active {
            let z = &z_row[col * k.in_dim..(col + 1) * k.in_dim];
            let mut h: Vec<f64> = k.b1.iter().map(|&b| b as f64).collect();
            for (i, &zi) in z.iter().enumerate() {
                for (j, hj) in h.iter_mut().enumerate() {
                    *hj += zi as f64 * k.w1[i * k.hidden + j] as f64;
                }
            }
            for ch in 0..k.channels {
                let d: f64 = (0..k.hidden).map(|j| h[j].max(0.0) * k.w2[j * k.channels + ch] as f64).sum();
                s_row[col * k.channels + ch] += d as f32;
            }
        }
    }

    fn case(hidden: usize, channels: usize) -> (Vec<f32>, Vec<f32>, Vec<f32>, Vec<f32>, Vec<f32>, usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(hidden as u64 * 31 + channels as u64);
        let in_dim = 4 * channels + 2;
        let mut v = |n: usize| -> Vec<f32> { (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect() };
        let cols = 11;
        (v(in_dim * hidden), v(hidden), v(hidden * channels), v(cols * in_dim), v(cols * channels), in_dim)
    }

    #[test]
    fn vector_paths_match_reference() {
        for (hidden, channels) in [(96, 12), (128, 12), (64, 16), (32, 3)] {
            let (w1, b1, w2, z, s0, in_dim) = case(hidden, channels);
            let k = Weights { w1: &w1, b1: &b1, w2: &w2, in_dim, hidden, channels };
            let active = [0, 2, 3, 4, 7, 8, 10];
            let mut expect = s0.clone();
            reference(&k, &z, &mut expect, &active);
            let mut got = s0.clone();
            if update_cells(&k, &z, &mut got, &active, None) {
                let err = got.iter().zip(&expect).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
                assert!(err < 1e-4, "{hidden}x{channels}: {err}");
                for col in [1, 5, 6, 9] {
                    assert_eq!(got[col * channels..(col + 1) * channels], s0[col * channels..(col + 1) * channels]);
                }
            }
            #[cfg(target_arch = "x86_64")]
            if hidden % 16 == 0 && std::is_x86_feature_detected!("avx2") && std::is_x86_feature_detected!("fma") {
                let mut got = s0.clone();
                unsafe { x86::avx2(&k, &z, &mut got, &active, None) };
                let err = got.iter().zip(&expect).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
                assert!(err < 1e-4, "avx2 {hidden}x{channels}: {err}");
            }
        }
    }

    #[test]
    fn declines_unsupported_shapes() {
        let (w1, b1, w2, z, s0, in_dim) = case(96, 12);
        let k = Weights { w1: &w1, b1: &b1, w2: &w2[..10], in_dim, hidden: 96, channels: 12 };
        let mut s = s0.clone();
        assert!(!update_cells(&k, &z, &mut s, &[0], None));
        assert_eq!(s, s0);
    }

    /// Scalar reverse pass in the kernel's accumulation order.
    #[allow(clippy::too_many_arguments)]
    fn reverse_reference(
        k: &Reverse,
        z: &[f32],
        hidden: &[f32],
        gd: &[f32],
        active: &[usize],
        gz: &mut [f32],
        gw1: &mut [f32],
        gb1: &mut [f32],
        gw2t: &mut [f32],
    ) {
        let (n, h, c) = (k.in_dim, k.hidden, k.channels);
        for (i, &col) in active.iter().enumerate() {
            let hb = &hidden[i * h..(i + 1) * h];
            let g = &gd[col * c..(col + 1) * c];
            let mut dh = vec![0f32; h];
            for ch in 0..c {
                for j in 0..h {
                    dh[j] = g[ch].mul_add(k.w2t[ch * h + j], dh[j]);
                    gw2t[ch * h + j] = g[ch].mul_add(hb[j], gw2t[ch * h + j]);
                }
            }
            for j in 0..h {
                if hb[j] <= 0.0 {
                    dh[j] = 0.0;
                }
                gb1[j] += dh[j];
            }
            for a in 0..n {
                for j in 0..h {
                    gw1[a * h + j] = z[col * n + a].mul_add(dh[j], gw1[a * h + j]);
                }
            }
            for j in 0..h {
                for a in 0..n {
                    gz[col * n + a] = dh[j].mul_add(k.w1t[j * k.stride + a], gz[col * n + a]);
                }
            }
        }
    }

    #[test]
    fn reverse_kernel_matches_scalar_order() {
        for (hidden, channels) in [(96, 12), (128, 16), (32, 4)] {
            let (w1, _, w2, z, gd, in_dim) = case(hidden, channels);
            let stride = in_dim.div_ceil(32) * 32;
            let mut w1t = vec![0f32; hidden * stride];
            for a in 0..in_dim {
                for j in 0..hidden {
                    w1t[j * stride + a] = w1[a * hidden + j];
                }
            }
            let mut w2t = vec![0f32; channels * hidden];
            for j in 0..hidden {
                for ch in 0..channels {
                    w2t[ch * hidden + j] = w2[j * channels + ch];
                }
            }
            let k = Reverse { w1t: &w1t, stride, w2t: &w2t, in_dim, hidden, channels };
            let active = [0, 1, 3, 4, 5, 8, 10];
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let hid: Vec<f32> = (0..active.len() * hidden).map(|_| rng.gen_range(-1.0f32..1.0).max(0.0)).collect();
            let gz0: Vec<f32> = vec![0.0; 11 * in_dim];
            let run = |fast: bool| {
                let mut gz = gz0.clone();
                let mut gw1 = vec![0.5f32; in_dim * hidden];
                let mut gb1 = vec![0.25f32; hidden];
                let mut gw2t = vec![-0.5f32; channels * hidden];
                if fast {
                    if !backward_cells(&k, &z, &hid, &gd, &active, &mut gz, &mut gw1, &mut gb1, &mut gw2t) {
                        return None;
                    }
                } else {
                    reverse_reference(&k, &z, &hid, &gd, &active, &mut gz, &mut gw1, &mut gb1, &mut gw2t);
                }
                Some((gz, gw1, gb1, gw2t))
            };
            if let Some(fast) = run(true) {
                assert_eq!(fast, run(false).unwrap(), "{hidden}x{channels}");
            }
        }
    }

    #[test]
    fn result_is_independent_of_grouping() {
        let (w1, b1, w2, z, s0, in_dim) = case(96, 12);
        let k = Weights { w1: &w1, b1: &b1, w2: &w2, in_dim, hidden: 96, channels: 12 };
        let mut all = s0.clone();
        let mut one_by_one = s0.clone();
        if update_cells(&k, &z, &mut all, &[1, 3, 4, 6, 9], None) {
            for col in [1, 3, 4, 6, 9] {
                update_cells(&k, &z, &mut one_by_one, &[col], None);
            }
            assert_eq!(all, one_by_one);
        }
    }
}
