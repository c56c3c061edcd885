//! Internal raster helpers: Otsu thresholding and connected components.

/// Otsu threshold over an intensity histogram. Returns the threshold `t`
/// separating classes `<= t` and `> t`, or None when fewer than two bins
/// are occupied.
pub(crate) fn otsu_threshold(hist: &[u64; 256]) -> Option<u8> {
    let total: u64 = hist.iter().sum();
    if total == 0 {
        return None;
    }
    let occupied = hist.iter().filter(|&&c| c > 0).count();
    if occupied < 2 {
        return None;
    }
    let sum_all: f64 = hist.iter().enumerate().map(|(v, &c)| v as f64 * c as f64).sum();
    let mut w0 = 0u64;
    let mut sum0 = 0.0f64;
    let mut best = (0u8, f64::NEG_INFINITY);
    for t in 0..255usize {
        w0 += hist[t];
        if w0 == 0 {
            continue;
        }
        let w1 = total - w0;
        if w1 == 0 {
            break;
        }
        sum0 += t as f64 * hist[t] as f64;
        let m0 = sum0 / w0 as f64;
        let m1 = (sum_all - sum0) / w1 as f64;
        let between = w0 as f64 * w1 as f64 * (m0 - m1) * (m0 - m1);
        if between > best.1 {
            best = (t as u8, between);
        }
    }
    Some(best.0)
}

pub(crate) fn histogram(values: impl Iterator<Item = u8>) -> [u64; 256] {
    let mut hist = [0u64; 256];
    for v in values {
        hist[v as usize] += 1;
    }
    hist
}

/// A 4-connected component of a boolean raster.
pub(crate) struct Component {
    /// (x, y) member pixels.
    pub pixels: Vec<(u32, u32)>,
}

/// Label 4-connected components of `raster` (row-major, `width` x `height`).
/// Components are returned in deterministic scan order.
pub(crate) fn connected_components(raster: &[bool], width: u32, height: u32) -> Vec<Component> {
    let w = width as usize;
    let h = height as usize;
    debug_assert_eq!(raster.len(), w * h);
    let mut seen = vec![false; w * h];
    let mut components = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !raster[start] || seen[start] {
            continue;
        }
        let mut pixels = Vec::new();
        stack.push(start);
        seen[start] = true;
        while let Some(idx) = stack.pop() {
            let x = idx % w;
            let y = idx / w;
            pixels.push((x as u32, y as u32));
            let mut push = |n: usize| {
                if raster[n] && !seen[n] {
                    seen[n] = true;
                    stack.push(n);
                }
            };
            if x > 0 {
                push(idx - 1);
            }
            if x + 1 < w {
                push(idx + 1);
            }
            if y > 0 {
                push(idx - w);
            }
            if y + 1 < h {
                push(idx + w);
            }
        }
        components.push(Component { pixels });
    }
    components
}
