use super::raster::Mask;

/// 8-connected components of the positive pixels.
///
/// Returns per-pixel labels (0 = background, components numbered from 1 in
/// raster scan order of their first pixel) and the component count.
pub fn connected_components(mask: &Mask) -> (Vec<u32>, usize) {
    let (h, w) = (mask.height, mask.width);
    let mut labels = vec![0u32; h * w];
    let mut count = 0;
    let mut stack = Vec::new();
    for start in 0..h * w {
        if mask.data[start] == 0 || labels[start] != 0 {
            continue;
        }
        count += 1;
        labels[start] = count as u32;
        stack.push(start);
        while let Some(p) = stack.pop() {
            let (r, c) = ((p / w) as isize, (p % w) as isize);
            for dr in -1..=1 {
                for dc in -1..=1 {
                    let (nr, nc) = (r + dr, c + dc);
                    if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                        continue;
                    }
                    let q = nr as usize * w + nc as usize;
                    if mask.data[q] != 0 && labels[q] == 0 {
                        labels[q] = count as u32;
                        stack.push(q);
                    }
                }
            }
        }
    }
    (labels, count)
}

/// Pixel index lists, one per component, in label order.
pub fn component_pixels(mask: &Mask) -> Vec<Vec<usize>> {
    let (labels, count) = connected_components(mask);
    let mut out = vec![Vec::new(); count];
    for (i, &l) in labels.iter().enumerate() {
        if l > 0 {
            out[l as usize - 1].push(i);
        }
    }
    out
}

/// Square (Chebyshev) dilation by `radius` pixels.
pub fn dilate(mask: &Mask, radius: usize) -> Mask {
    let (h, w) = (mask.height, mask.width);
    // separable: rows then columns
    let mut rows = vec![0u8; h * w];
    for r in 0..h {
        for c in 0..w {
            if mask.data[r * w + c] != 0 {
                let lo = c.saturating_sub(radius);
                let hi = (c + radius).min(w - 1);
                rows[r * w + lo..=r * w + hi].fill(1);
            }
        }
    }
    let mut out = Mask::zeros(h, w);
    for r in 0..h {
        for c in 0..w {
            if rows[r * w + c] != 0 {
                for rr in r.saturating_sub(radius)..=(r + radius).min(h - 1) {
                    out.data[rr * w + c] = 1;
                }
            }
        }
    }
    out
}
