//! Collision-volume fields by fast convolution.
//!
//! For an obstacle density `a` and a reflected rotated tool indicator `b`,
//! the linear convolution `(a * b)(t) = sum_x a(x) b(t - x) * h^d` equals the
//! overlap volume between the obstacle and the tool translated by `t`. The
//! FFT path zero-pads both grids to `na + nb - 1` per axis so the correlation
//! is linear, never circular: space outside a grid is free, and tools may
//! hang past the domain boundary without wrapping around.
//!
//! The full padded field is retained so that sharp-point shifts read exact
//! values instead of a clipped window; reads past the padded extent are zero
//! by construction. Obstacle and kernel spectra can be computed once and
//! reused, which is what the optimization loop does across tool orientations.

use std::sync::{Arc, Mutex, OnceLock};

use rayon::prelude::*;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

use crate::grid::{GridDims, ScalarGrid};

#[derive(Debug, Error)]
pub enum ConvError {
    #[error("grid spacing mismatch: {0} vs {1}")]
    SpacingMismatch(f64, f64),
    #[error("padded FFT size {0} exceeds the supported limit of {1} samples")]
    TooLarge(usize, usize),
    #[error("brute-force correlation refused: {0} voxels exceeds the {1} guard (pass force=true to override)")]
    BruteForceGuard(usize, usize),
}

const MAX_FFT_SAMPLES: usize = 1 << 31;
const BRUTE_FORCE_GUARD: usize = 64 * 64 * 64;

/// Collision measure per translation, on the full linear-convolution extent.
#[derive(Debug, Clone)]
pub struct CorrelationResult {
    /// Overlap volume for the tool reference point placed at each voxel
    /// center of this grid.
    pub field: ScalarGrid,
    /// Volume of the tool indicator used for normalization.
    pub tool_volume: f64,
}

impl CorrelationResult {
    /// Sample the field on a target grid, reading the value at each target
    /// voxel center minus `shift_voxels * spacing`. Reads outside the padded
    /// extent return 0, which is exact for a linear convolution.
    pub fn window(&self, target: &GridDims, shift_voxels: [i64; 3]) -> ScalarGrid {
        let f = &self.field;
        let h = f.dims.spacing;
        let mut out = ScalarGrid::zeros(*target);
        for k in 0..target.nz {
            for j in 0..target.ny {
                for i in 0..target.nx {
                    let c = target.center(i, j, k);
                    let mut s = [0i64; 3];
                    let mut inside = true;
                    for a in 0..3 {
                        let w = c[a] - shift_voxels[a] as f64 * h;
                        let t = (w - f.dims.origin[a]) / h - 0.5;
                        let r = t.round();
                        debug_assert!(
                            (t - r).abs() < 1e-6,
                            "correlation window is not lattice-aligned (residual {})",
                            (t - r).abs()
                        );
                        let idx = r as i64;
                        if idx < 0 || idx >= f.dims.shape()[a] as i64 {
                            inside = false;
                            break;
                        }
                        s[a] = idx;
                    }
                    if inside {
                        out.set(i, j, k, f.get(s[0] as usize, s[1] as usize, s[2] as usize));
                    }
                }
            }
        }
        out
    }
}

fn check_spacing(a: &ScalarGrid, b: &ScalarGrid) -> Result<(), ConvError> {
    if a.dims.spacing != b.dims.spacing {
        return Err(ConvError::SpacingMismatch(a.dims.spacing, b.dims.spacing));
    }
    Ok(())
}

/// World origin of the linear-convolution output grid: sample `s` sits at
/// `oa + ob + (s + 1) h`, so the grid origin is `oa + ob + h/2`.
fn conv_output_dims(a: &GridDims, b: &GridDims) -> [f64; 3] {
    [
        a.origin[0] + b.origin[0] + 0.5 * a.spacing,
        a.origin[1] + b.origin[1] + 0.5 * a.spacing,
        a.origin[2] + b.origin[2] + 0.5 * a.spacing,
    ]
}

/// Smallest even 5-smooth number >= n.
fn next_fast_size(n: usize) -> usize {
    if n <= 2 {
        return 2;
    }
    let mut m = n + (n & 1); // even
    loop {
        let mut k = m;
        while k % 2 == 0 {
            k /= 2;
        }
        while k % 3 == 0 {
            k /= 3;
        }
        while k % 5 == 0 {
            k /= 5;
        }
        if k == 1 {
            return m;
        }
        m += 2;
    }
}

struct Plans {
    real: RealFftPlanner<f64>,
    complex: FftPlanner<f64>,
}

fn planners() -> &'static Mutex<Plans> {
    static PLANS: OnceLock<Mutex<Plans>> = OnceLock::new();
    PLANS.get_or_init(|| {
        Mutex::new(Plans {
            real: RealFftPlanner::new(),
            complex: FftPlanner::new(),
        })
    })
}

struct AxisPlans {
    r2c: Arc<dyn RealToComplex<f64>>,
    c2r: Arc<dyn ComplexToReal<f64>>,
    fwd_y: Arc<dyn Fft<f64>>,
    inv_y: Arc<dyn Fft<f64>>,
    fwd_z: Arc<dyn Fft<f64>>,
    inv_z: Arc<dyn Fft<f64>>,
}

fn axis_plans(l: [usize; 3]) -> AxisPlans {
    let mut g = planners().lock().unwrap();
    AxisPlans {
        r2c: g.real.plan_fft_forward(l[0]),
        c2r: g.real.plan_fft_inverse(l[0]),
        fwd_y: g.complex.plan_fft_forward(l[1]),
        inv_y: g.complex.plan_fft_inverse(l[1]),
        fwd_z: g.complex.plan_fft_forward(l[2]),
        inv_z: g.complex.plan_fft_inverse(l[2]),
    }
}

/// Forward spectrum of a real grid zero-padded to `l`, stored as
/// `(l0/2 + 1) x l1 x l2` complex values, x-fastest.
pub struct Spectrum {
    padded: [usize; 3],
    cx: usize,
    data: Vec<Complex<f64>>,
    dims: GridDims,
}

impl Spectrum {
    pub fn padded_size(&self) -> [usize; 3] {
        self.padded
    }

    pub fn grid_dims(&self) -> &GridDims {
        &self.dims
    }
}

/// Padded size needed to convolve grids of shapes `a` and `b` linearly.
pub fn padded_for(a: [usize; 3], b: [usize; 3]) -> [usize; 3] {
    let mut l = [0usize; 3];
    for i in 0..3 {
        l[i] = next_fast_size(a[i] + b[i] - 1);
    }
    l
}

/// Compute the forward spectrum of `g` zero-padded to `l`.
pub fn forward_spectrum(g: &ScalarGrid, l: [usize; 3]) -> Result<Spectrum, ConvError> {
    let samples = l[0] * l[1] * l[2];
    if samples > MAX_FFT_SAMPLES {
        return Err(ConvError::TooLarge(samples, MAX_FFT_SAMPLES));
    }
    let n = g.dims.shape();
    debug_assert!((0..3).all(|a| l[a] >= n[a]));
    let plans = axis_plans(l);
    let cx = l[0] / 2 + 1;
    let mut data = vec![Complex::new(0.0, 0.0); cx * l[1] * l[2]];

    // r2c along x, one line per (y, z) of the source grid; padded lines that
    // are all zero transform to zero and are skipped.
    {
        let lines: Vec<(usize, usize)> = (0..n[2]).flat_map(|k| (0..n[1]).map(move |j| (j, k))).collect();
        let chunks: Vec<(usize, Vec<Complex<f64>>)> = lines
            .par_iter()
            .map(|&(j, k)| {
                let mut line = vec![0.0f64; l[0]];
                let src = j * n[0] + k * n[0] * n[1];
                line[..n[0]].copy_from_slice(&g.values[src..src + n[0]]);
                let mut out = vec![Complex::new(0.0, 0.0); cx];
                plans.r2c.process(&mut line, &mut out).expect("r2c length mismatch");
                (j * cx + k * cx * l[1], out)
            })
            .collect();
        for (dst, line) in chunks {
            data[dst..dst + cx].copy_from_slice(&line);
        }
    }

    fft_axis(&mut data, [cx, l[1], l[2]], 1, plans.fwd_y.as_ref());
    if l[2] > 1 {
        fft_axis(&mut data, [cx, l[1], l[2]], 2, plans.fwd_z.as_ref());
    }

    Ok(Spectrum { padded: l, cx, data, dims: g.dims })
}

/// In-place FFT along axis 1 or 2 of an x-fastest complex array.
fn fft_axis(data: &mut [Complex<f64>], shape: [usize; 3], axis: usize, fft: &dyn Fft<f64>) {
    let [sx, sy, sz] = shape;
    let (count, stride, major): (usize, usize, usize) = match axis {
        1 => (sx * sz, sx, sy),
        2 => (sx * sy, sx * sy, sz),
        _ => unreachable!(),
    };
    // Collect transformed lines first, then scatter: rayon map keeps each
    // line independent so results are deterministic.
    let lines: Vec<(usize, Vec<Complex<f64>>)> = (0..count)
        .into_par_iter()
        .map(|li| {
            let base = match axis {
                1 => (li % sx) + (li / sx) * sx * sy,
                _ => li,
            };
            let mut buf: Vec<Complex<f64>> = (0..major).map(|m| data[base + m * stride]).collect();
            fft.process(&mut buf);
            (base, buf)
        })
        .collect();
    for (base, buf) in lines {
        for (m, v) in buf.into_iter().enumerate() {
            data[base + m * stride] = v;
        }
    }
}

/// Pointwise-multiply two spectra of identical padded size and invert,
/// producing the linear convolution scaled by `h^d`, cropped to
/// `na + nb - 1` per axis. Negative FFT noise is clamped to zero.
pub fn convolve_spectra(a: &Spectrum, b: &Spectrum) -> Result<ScalarGrid, ConvError> {
    assert_eq!(a.padded, b.padded, "spectra must share padded size");
    if a.dims.spacing != b.dims.spacing {
        return Err(ConvError::SpacingMismatch(a.dims.spacing, b.dims.spacing));
    }
    let l = a.padded;
    let cx = a.cx;
    let plans = axis_plans(l);
    let mut data: Vec<Complex<f64>> = a
        .data
        .par_iter()
        .zip(b.data.par_iter())
        .map(|(x, y)| x * y)
        .collect();

    if l[2] > 1 {
        fft_axis(&mut data, [cx, l[1], l[2]], 2, plans.inv_z.as_ref());
    }
    fft_axis(&mut data, [cx, l[1], l[2]], 1, plans.inv_y.as_ref());

    let na = a.dims.shape();
    let nb = b.dims.shape();
    let mut out_n = [0usize; 3];
    for i in 0..3 {
        out_n[i] = na[i] + nb[i] - 1;
    }
    let h = a.dims.spacing;
    let dims = GridDims {
        nx: out_n[0],
        ny: out_n[1],
        nz: out_n[2],
        spacing: h,
        origin: conv_output_dims(&a.dims, &b.dims),
    };
    let scale = h.powi(a.dims.dim().min(b.dims.dim()) as i32) / (l[0] * l[1] * l[2]) as f64;

    // c2r along x for the cropped output lines only.
    let mut out = ScalarGrid::zeros(dims);
    let lines: Vec<(usize, usize)> = (0..out_n[2]).flat_map(|k| (0..out_n[1]).map(move |j| (j, k))).collect();
    let rows: Vec<(usize, Vec<f64>)> = lines
        .par_iter()
        .map(|&(j, k)| {
            let src = j * cx + k * cx * l[1];
            let mut line: Vec<Complex<f64>> = data[src..src + cx].to_vec();
            // The DC and Nyquist bins of a real signal are real; clear the
            // fp noise their imaginary parts picked up, realfft insists.
            line[0].im = 0.0;
            line[cx - 1].im = 0.0;
            let mut real = vec![0.0f64; l[0]];
            plans.c2r.process(&mut line, &mut real).expect("c2r length mismatch");
            let row: Vec<f64> = real[..out_n[0]].iter().map(|&v| (v * scale).max(0.0)).collect();
            (j * out_n[0] + k * out_n[0] * out_n[1], row)
        })
        .collect();
    for (dst, row) in rows {
        out.values[dst..dst + out_n[0]].copy_from_slice(&row);
    }
    Ok(out)
}

/// FFT linear convolution of an obstacle density with a reflected tool
/// indicator. The returned field covers the full linear extent.
pub fn correlate_fft(obstacle: &ScalarGrid, reflected_tool: &ScalarGrid) -> Result<CorrelationResult, ConvError> {
    check_spacing(obstacle, reflected_tool)?;
    let l = padded_for(obstacle.dims.shape(), reflected_tool.dims.shape());
    let sa = forward_spectrum(obstacle, l)?;
    let sb = forward_spectrum(reflected_tool, l)?;
    let field = convolve_spectra(&sa, &sb)?;
    Ok(CorrelationResult {
        field,
        tool_volume: reflected_tool.integrate(),
    })
}

/// Direct-summation convolution with the identical contract to
/// [`correlate_fft`]. Quadratic cost; used as the oracle for the FFT path.
pub fn correlate_bruteforce(
    obstacle: &ScalarGrid,
    reflected_tool: &ScalarGrid,
    force: bool,
) -> Result<CorrelationResult, ConvError> {
    check_spacing(obstacle, reflected_tool)?;
    if !force {
        for g in [obstacle, reflected_tool] {
            if g.dims.len() > BRUTE_FORCE_GUARD {
                return Err(ConvError::BruteForceGuard(g.dims.len(), BRUTE_FORCE_GUARD));
            }
        }
    }
    let na = obstacle.dims.shape();
    let nb = reflected_tool.dims.shape();
    let h = obstacle.dims.spacing;
    let dims = GridDims {
        nx: na[0] + nb[0] - 1,
        ny: na[1] + nb[1] - 1,
        nz: na[2] + nb[2] - 1,
        spacing: h,
        origin: conv_output_dims(&obstacle.dims, &reflected_tool.dims),
    };
    let scale = h.powi(obstacle.dims.dim().min(reflected_tool.dims.dim()) as i32);
    let mut out = ScalarGrid::zeros(dims);
    for bk in 0..nb[2] {
        for bj in 0..nb[1] {
            for bi in 0..nb[0] {
                let bv = reflected_tool.get(bi, bj, bk);
                if bv == 0.0 {
                    continue;
                }
                for ak in 0..na[2] {
                    for aj in 0..na[1] {
                        let dst_base = dims.index(bi, aj + bj, ak + bk);
                        let src_base = obstacle.dims.index(0, aj, ak);
                        for ai in 0..na[0] {
                            out.values[dst_base + ai] += bv * obstacle.values[src_base + ai];
                        }
                    }
                }
            }
        }
    }
    for v in &mut out.values {
        *v *= scale;
    }
    Ok(CorrelationResult {
        field: out,
        tool_volume: reflected_tool.integrate(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{rasterize, GridDims, Primitive};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dims(n: [usize; 3], h: f64, o: [f64; 3]) -> GridDims {
        GridDims::new(n[0], n[1], n[2], h, o).unwrap()
    }

    /// Tool-class grid: origin on the half-integer lattice, roughly centred
    /// on the local origin.
    fn tool_dims(n: [usize; 3], h: f64) -> GridDims {
        let o = [
            -((n[0] / 2) as f64 + 0.5) * h,
            -((n[1] / 2) as f64 + 0.5) * h,
            if n[2] == 1 { -0.5 * h } else { -((n[2] / 2) as f64 + 0.5) * h },
        ];
        dims(n, h, o)
    }

    fn random_indicator(d: GridDims, fill: f64, rng: &mut ChaCha8Rng) -> ScalarGrid {
        let values = (0..d.len()).map(|_| if rng.gen::<f64>() < fill { 1.0 } else { 0.0 }).collect();
        ScalarGrid::from_values(d, values).unwrap()
    }

    fn sample_world(g: &ScalarGrid, w: [f64; 3]) -> Option<f64> {
        let mut idx = [0usize; 3];
        for a in 0..3 {
            let t = (w[a] - g.dims.origin[a]) / g.dims.spacing - 0.5;
            let r = t.round();
            if (t - r).abs() > 1e-6 || r < 0.0 || r >= g.dims.shape()[a] as f64 {
                return None;
            }
            idx[a] = r as usize;
        }
        Some(g.get(idx[0], idx[1], idx[2]))
    }

    #[test]
    fn delta_kernel_reproduces_obstacle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = 0.5;
        let obstacle = random_indicator(dims([9, 7, 5], h, [0.0; 3]), 0.4, &mut rng);
        let delta = ScalarGrid::filled(tool_dims([1, 1, 1], h), 1.0);
        let res = correlate_fft(&obstacle, &delta.reflect()).unwrap();
        // Output extent equals the obstacle extent for a single-voxel tool.
        assert_eq!(res.field.dims.shape(), obstacle.dims.shape());
        let scale = h.powi(3);
        for i in 0..obstacle.dims.len() {
            assert!((res.field.values[i] - obstacle.values[i] * scale).abs() < 1e-9 * scale);
        }
    }

    #[test]
    fn disjoint_for_all_window_placements_is_zero() {
        // Obstacle sits near the grid corner; the tool's only voxel is offset
        // far enough that no placement inside the obstacle window overlaps.
        let h = 1.0;
        let d = dims([16, 16, 1], h, [0.0; 3]);
        let obstacle = rasterize(&[Primitive::Box { min: [0.0, 0.0, -0.5], max: [2.0, 2.0, 0.5] }], d).unwrap();
        let far = dims([1, 1, 1], h, [99.5, -0.5, -0.5]); // voxel centred at (100, 0, 0)
        let tool = ScalarGrid::filled(far, 1.0);
        let res = correlate_fft(&obstacle, &tool.reflect()).unwrap();
        let window = res.window(&d, [0, 0, 0]);
        assert!(window.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn impulse_convolved_with_impulse_is_impulse() {
        let h = 1.0;
        let mut a = ScalarGrid::zeros(dims([5, 5, 1], h, [0.0; 3]));
        a.set(2, 3, 0, 1.0);
        let mut b = ScalarGrid::zeros(tool_dims([3, 3, 1], h));
        b.set(1, 1, 0, 1.0); // centred at the local origin
        let res = correlate_bruteforce(&a, &b.reflect(), false).unwrap();
        assert_eq!(res.field.count_above(1e-12), 1);
        // The impulse lands where the tool origin overlaps the obstacle voxel.
        let w = a.dims.center(2, 3, 0);
        assert_eq!(sample_world(&res.field, [w[0], w[1], w[2]]), Some(h * h));
    }

    #[test]
    fn full_containment_reaches_tool_volume() {
        let h = 0.5;
        let obstacle = ScalarGrid::filled(dims([10, 10, 10], h, [0.0; 3]), 1.0);
        let tool = ScalarGrid::filled(tool_dims([3, 3, 3], h), 1.0);
        let res = correlate_bruteforce(&obstacle, &tool.reflect(), false).unwrap();
        let vol_t = tool.integrate();
        let window = res.window(&obstacle.dims, [0, 0, 0]);
        // Interior placements contain the whole tool.
        for k in 2..8 {
            for j in 2..8 {
                for i in 2..8 {
                    assert!((window.get(i, j, k) - vol_t).abs() < 1e-9);
                }
            }
        }
        assert!(res.field.values.iter().all(|&v| v <= vol_t + 1e-9));
    }

    #[test]
    fn fft_matches_bruteforce_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for trial in 0..20 {
            let h = if trial % 2 == 0 { 1.0 } else { 0.25 };
            let na = [rng.gen_range(4..17), rng.gen_range(4..17), rng.gen_range(1..9)];
            let nb = [rng.gen_range(1..6), rng.gen_range(1..6), rng.gen_range(1..4)];
            let a = random_indicator(dims(na, h, [0.0; 3]), 0.5, &mut rng);
            let b = random_indicator(tool_dims(nb, h), 0.7, &mut rng);
            let fft = correlate_fft(&a, &b.reflect()).unwrap();
            let direct = correlate_bruteforce(&a, &b.reflect(), false).unwrap();
            assert_eq!(fft.field.dims.shape(), direct.field.dims.shape());
            let tol = 1e-6 * fft.tool_volume.max(h.powi(3));
            for i in 0..fft.field.dims.len() {
                assert!(
                    (fft.field.values[i] - direct.field.values[i]).abs() <= tol,
                    "trial {trial} voxel {i}: {} vs {}",
                    fft.field.values[i],
                    direct.field.values[i]
                );
            }
        }
    }

    #[test]
    fn correlation_symmetry_under_reflection_swap() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = 1.0;
        let a = random_indicator(dims([6, 5, 1], h, [0.0; 3]), 0.5, &mut rng);
        let b = random_indicator(dims([4, 3, 1], h, [-2.0, -1.0, -0.5]), 0.5, &mut rng);
        let ab = correlate_bruteforce(&a, &b.reflect(), false).unwrap();
        let ba = correlate_bruteforce(&b, &a.reflect(), false).unwrap();
        let d = ab.field.dims;
        for k in 0..d.nz {
            for j in 0..d.ny {
                for i in 0..d.nx {
                    let w = d.center(i, j, k);
                    let mirrored = sample_world(&ba.field, [-w[0], -w[1], -w[2]]).unwrap();
                    assert!((ab.field.get(i, j, k) - mirrored).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn growing_the_obstacle_never_decreases_the_field() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1.0;
        let a = random_indicator(dims([8, 8, 4], h, [0.0; 3]), 0.3, &mut rng);
        let mut bigger = a.clone();
        for v in bigger.values.iter_mut() {
            if rng.gen::<f64>() < 0.3 {
                *v = 1.0;
            }
        }
        let tool = ScalarGrid::filled(tool_dims([3, 2, 2], h), 1.0);
        let fa = correlate_fft(&a, &tool.reflect()).unwrap();
        let fb = correlate_fft(&bigger, &tool.reflect()).unwrap();
        for i in 0..fa.field.dims.len() {
            assert!(fb.field.values[i] >= fa.field.values[i] - 1e-9);
        }
    }

    #[test]
    fn guards_reject_bad_inputs() {
        let a = ScalarGrid::zeros(dims([4, 4, 1], 1.0, [0.0; 3]));
        let b = ScalarGrid::zeros(dims([2, 2, 1], 0.5, [0.0; 3]));
        assert!(matches!(correlate_fft(&a, &b), Err(ConvError::SpacingMismatch(..))));
        let big = ScalarGrid::zeros(dims([65, 65, 65], 1.0, [0.0; 3]));
        let small = ScalarGrid::zeros(dims([2, 2, 2], 1.0, [0.0; 3]));
        assert!(matches!(
            correlate_bruteforce(&big, &small, false),
            Err(ConvError::BruteForceGuard(..))
        ));
        assert!(correlate_bruteforce(&big, &small, true).is_ok());
    }

    #[test]
    fn next_fast_sizes_are_5_smooth_and_even() {
        for n in [1, 2, 3, 7, 11, 13, 31, 97, 101, 255] {
            let m = next_fast_size(n);
            assert!(m >= n);
            let mut k = m;
            for f in [2, 3, 5] {
                while k % f == 0 {
                    k /= f;
                }
            }
            assert_eq!(k, 1, "n={n} m={m}");
        }
    }
}
