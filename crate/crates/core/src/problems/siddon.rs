//! Exact intersection lengths of straight lines with a pixel grid.

/// Lengths of the segment `p0 → p1` inside each unit pixel of an `nx x ny`
/// grid covering `[0, nx] x [0, ny]`. Pixel `(ix, iy)` has index
/// `ix + nx·iy`. Parts of the segment outside the grid are ignored.
pub fn siddon(nx: usize, ny: usize, p0: [f64; 2], p1: [f64; 2]) -> Vec<(usize, f64)> {
    let d = [p1[0] - p0[0], p1[1] - p0[1]];
    let len = d[0].hypot(d[1]);
    if len == 0.0 || nx == 0 || ny == 0 {
        return Vec::new();
    }
    let dims = [nx as f64, ny as f64];
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for ax in 0..2 {
        if d[ax] == 0.0 {
            if p0[ax] < 0.0 || p0[ax] > dims[ax] {
                return Vec::new();
            }
        } else {
            let a = (0.0 - p0[ax]) / d[ax];
            let b = (dims[ax] - p0[ax]) / d[ax];
            lo = lo.max(a.min(b));
            hi = hi.min(a.max(b));
        }
    }
    if hi <= lo {
        return Vec::new();
    }

    let mut alphas = vec![lo, hi];
    for ax in 0..2 {
        if d[ax] == 0.0 {
            continue;
        }
        let (x0, x1) = (p0[ax] + lo * d[ax], p0[ax] + hi * d[ax]);
        let (a, b) = (x0.min(x1), x0.max(x1));
        let first = a.floor() as i64 + 1;
        let last = b.ceil() as i64 - 1;
        for plane in first..=last {
            let alpha = (plane as f64 - p0[ax]) / d[ax];
            if alpha > lo && alpha < hi {
                alphas.push(alpha);
            }
        }
    }
    alphas.sort_by(f64::total_cmp);

    let mut out: Vec<(usize, f64)> = Vec::with_capacity(alphas.len());
    for w in alphas.windows(2) {
        let da = w[1] - w[0];
        if da <= 1e-15 {
            continue;
        }
        let mid = 0.5 * (w[0] + w[1]);
        let x = p0[0] + mid * d[0];
        let y = p0[1] + mid * d[1];
        let ix = (x.floor().max(0.0) as usize).min(nx - 1);
        let iy = (y.floor().max(0.0) as usize).min(ny - 1);
        let idx = ix + nx * iy;
        match out.last_mut() {
            Some((j, l)) if *j == idx => *l += da * len,
            _ => out.push((idx, da * len)),
        }
    }
    out
}

/// Clip the infinite line `{p : p·n = rho}` with unit normal `n = (cos θ,
/// sin θ)` to the box `[0, w] x [0, h]`, as a segment in the direction
/// `(−sin θ, cos θ)`.
pub fn clip_line(w: f64, h: f64, theta: f64, rho: f64) -> Option<([f64; 2], [f64; 2])> {
    let (c, s) = (theta.cos(), theta.sin());
    let base = [rho * c, rho * s];
    let dir = [-s, c];
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for (ax, size) in [(0usize, w), (1usize, h)] {
        if dir[ax].abs() < 1e-15 {
            if base[ax] < 0.0 || base[ax] > size {
                return None;
            }
        } else {
            let a = (0.0 - base[ax]) / dir[ax];
            let b = (size - base[ax]) / dir[ax];
            lo = lo.max(a.min(b));
            hi = hi.min(a.max(b));
        }
    }
    if !(hi > lo) {
        return None;
    }
    let at = |t: f64| [base[0] + t * dir[0], base[1] + t * dir[1]];
    Some((at(lo), at(hi)))
}
