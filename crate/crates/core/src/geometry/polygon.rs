//! Convex polygon clipping (Sutherland-Hodgman) and shoelace area.

use crate::scalar::Scalar;

/// Half-plane epsilon for clipping degeneracies (shared edges, coincident
/// vertices).
pub(crate) const CLIP_EPS: f64 = 1e-9;

/// Signed area of a polygon (positive for CCW order).
pub fn polygon_area<T: Scalar>(poly: &[[T; 2]]) -> T {
    if poly.len() < 3 {
        return T::ZERO;
    }
    let mut acc = T::ZERO;
    for i in 0..poly.len() {
        let [x0, y0] = poly[i];
        let [x1, y1] = poly[(i + 1) % poly.len()];
        acc = acc + (x0 * y1 - x1 * y0);
    }
    acc / T::from_f64(2.0)
}

/// Clip `subject` (any convex polygon) against convex CCW `clip`.
/// Returns the intersection polygon (possibly empty), CCW.
pub fn clip_convex<T: Scalar>(subject: &[[T; 2]], clip: &[[T; 2]]) -> Vec<[T; 2]> {
    let eps = T::from_f64(CLIP_EPS);
    let mut output: Vec<[T; 2]> = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let input = std::mem::take(&mut output);
        // inside = left of the directed edge a->b for CCW clip polygons
        let side = |p: [T; 2]| -> T {
            (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
        };
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let d_cur = side(cur);
            let d_prev = side(prev);
            let cur_in = d_cur >= -eps;
            let prev_in = d_prev >= -eps;
            if cur_in {
                if !prev_in {
                    output.push(intersect(prev, cur, d_prev, d_cur));
                }
                output.push(cur);
            } else if prev_in {
                output.push(intersect(prev, cur, d_prev, d_cur));
            }
        }
    }
    output
}

fn intersect<T: Scalar>(p: [T; 2], q: [T; 2], dp: T, dq: T) -> [T; 2] {
    let t = dp / (dp - dq);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}
