//! Distance-IoU loss over 7-parameter boxes, expressed in autodiff
//! primitives so gradients flow through the polygon clipping.
//!
//! loss = 1 - IoU3D(pred, gt) + ||c_pred - c_gt||^2 / d^2, where d is the
//! diagonal of the minimal axis-aligned 3D box enclosing both.
//!
//! The clip structure (which vertices survive, where edges cross) is decided
//! from forward values; the surviving arithmetic is differentiated. Away
//! from clipping degeneracies this is the exact gradient.

use super::boxes::Box3D;
use super::polygon::CLIP_EPS;
use crate::autodiff::Tensor;
use crate::scalar::Scalar;

/// A box whose seven parameters live in the autodiff graph (scalar tensors).
#[derive(Debug, Clone)]
pub struct BoxTensor<T: Scalar = f64> {
    pub cx: Tensor<T>,
    pub cy: Tensor<T>,
    pub cz: Tensor<T>,
    pub h: Tensor<T>,
    pub l: Tensor<T>,
    pub w: Tensor<T>,
    pub yaw: Tensor<T>,
}

impl<T: Scalar> BoxTensor<T> {
    /// Constant box (no gradients).
    pub fn from_box(b: &Box3D<T>) -> Self {
        BoxTensor {
            cx: Tensor::scalar(b.cx),
            cy: Tensor::scalar(b.cy),
            cz: Tensor::scalar(b.cz),
            h: Tensor::scalar(b.h),
            l: Tensor::scalar(b.l),
            w: Tensor::scalar(b.w),
            yaw: Tensor::scalar(b.yaw),
        }
    }

    /// Split a [7] parameter tensor (cx, cy, cz, h, l, w, yaw).
    pub fn from_params_tensor(params: &Tensor<T>) -> Self {
        assert_eq!(params.numel(), 7, "expected 7 box parameters");
        BoxTensor {
            cx: params.pick(0),
            cy: params.pick(1),
            cz: params.pick(2),
            h: params.pick(3),
            l: params.pick(4),
            w: params.pick(5),
            yaw: params.pick(6),
        }
    }

    /// Current values as a plain box (yaw normalized).
    pub fn to_box(&self) -> Box3D<T> {
        Box3D::new(
            self.cx.item(),
            self.cy.item(),
            self.cz.item(),
            self.h.item(),
            self.l.item(),
            self.w.item(),
            self.yaw.item(),
        )
    }

    fn bev_corners(&self) -> [[Tensor<T>; 2]; 4] {
        let half = T::from_f64(0.5);
        let s = self.yaw.sin_t();
        let c = self.yaw.cos_t();
        let hl = self.l.scale(half);
        let hw = self.w.scale(half);
        let corner = |sx: f64, sy: f64| -> [Tensor<T>; 2] {
            let lx = hl.scale(T::from_f64(sx));
            let ly = hw.scale(T::from_f64(sy));
            [
                &self.cx + &(&(&lx * &c) - &(&ly * &s)),
                &self.cy + &(&(&lx * &s) + &(&ly * &c)),
            ]
        };
        [
            corner(1.0, 1.0),
            corner(-1.0, 1.0),
            corner(-1.0, -1.0),
            corner(1.0, -1.0),
        ]
    }

    fn z_bottom(&self) -> Tensor<T> {
        &self.cz - &self.h.scale(T::from_f64(0.5))
    }

    fn z_top(&self) -> Tensor<T> {
        &self.cz + &self.h.scale(T::from_f64(0.5))
    }
}

/// Signed distance of p from the directed edge a->b (positive = left).
fn side<T: Scalar>(a: &[Tensor<T>; 2], b: &[Tensor<T>; 2], p: &[Tensor<T>; 2]) -> Tensor<T> {
    let ex = &b[0] - &a[0];
    let ey = &b[1] - &a[1];
    let px = &p[0] - &a[0];
    let py = &p[1] - &a[1];
    &(&ex * &py) - &(&ey * &px)
}

/// Sutherland-Hodgman on autodiff scalars; branch decisions read forward
/// values, the retained arithmetic stays differentiable.
fn clip_convex_t<T: Scalar>(
    subject: &[[Tensor<T>; 2]],
    clip: &[[Tensor<T>; 2]],
) -> Vec<[Tensor<T>; 2]> {
    let eps = T::from_f64(CLIP_EPS);
    let mut output: Vec<[Tensor<T>; 2]> = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let a = &clip[i];
        let b = &clip[(i + 1) % clip.len()];
        let input = std::mem::take(&mut output);
        let dists: Vec<Tensor<T>> = input.iter().map(|p| side(a, b, p)).collect();
        for j in 0..input.len() {
            let prev = (j + input.len() - 1) % input.len();
            let d_cur = &dists[j];
            let d_prev = &dists[prev];
            let cur_in = d_cur.item() >= -eps;
            let prev_in = d_prev.item() >= -eps;
            let crossing = || {
                let t = &(d_prev.clone()) / &(d_prev - d_cur);
                [
                    &input[prev][0] + &(&t * &(&input[j][0] - &input[prev][0])),
                    &input[prev][1] + &(&t * &(&input[j][1] - &input[prev][1])),
                ]
            };
            if cur_in {
                if !prev_in {
                    output.push(crossing());
                }
                output.push(input[j].clone());
            } else if prev_in {
                output.push(crossing());
            }
        }
    }
    output
}

fn shoelace_t<T: Scalar>(poly: &[[Tensor<T>; 2]]) -> Tensor<T> {
    if poly.len() < 3 {
        return Tensor::scalar(T::ZERO);
    }
    let mut acc = Tensor::scalar(T::ZERO);
    for i in 0..poly.len() {
        let p = &poly[i];
        let q = &poly[(i + 1) % poly.len()];
        acc = &acc + &(&(&p[0] * &q[1]) - &(&q[0] * &p[1]));
    }
    acc.scale(T::from_f64(0.5))
}

fn fold_min<T: Scalar>(items: &[Tensor<T>]) -> Tensor<T> {
    items[1..]
        .iter()
        .fold(items[0].clone(), |acc, t| acc.minimum(t))
}

fn fold_max<T: Scalar>(items: &[Tensor<T>]) -> Tensor<T> {
    items[1..]
        .iter()
        .fold(items[0].clone(), |acc, t| acc.maximum(t))
}

/// Differentiable dIoU loss of a predicted box against a fixed ground
/// truth. Strictly zero when the parameters coincide bit-for-bit.
pub fn diou_loss<T: Scalar>(pred: &BoxTensor<T>, gt: &Box3D<T>) -> Tensor<T> {
    let gt_t = BoxTensor::from_box(gt);
    let pc = pred.bev_corners();
    let gc = gt_t.bev_corners();

    // Footprint areas via the same shoelace arithmetic as the clipped
    // intersection, so identical boxes give IoU exactly 1.
    let area_p = shoelace_t(&pc);
    let area_g = shoelace_t(&gc);
    let clipped = clip_convex_t(&pc, &gc);
    let inter_area = shoelace_t(&clipped).relu();

    let (bot_p, top_p) = (pred.z_bottom(), pred.z_top());
    let (bot_g, top_g) = (gt_t.z_bottom(), gt_t.z_top());
    let span_p = &top_p - &bot_p;
    let span_g = &top_g - &bot_g;
    let z_overlap = (&top_p.minimum(&top_g) - &bot_p.maximum(&bot_g)).relu();

    let inter_vol = &inter_area * &z_overlap;
    let vol_p = &area_p * &span_p;
    let vol_g = &area_g * &span_g;
    let union = &(&vol_p + &vol_g) - &inter_vol;
    let iou = &inter_vol / &union;

    let dx = &pred.cx - &gt_t.cx;
    let dy = &pred.cy - &gt_t.cy;
    let dz = &pred.cz - &gt_t.cz;
    let dist_sq = &(&dx.square() + &dy.square()) + &dz.square();

    // minimal axis-aligned 3D box enclosing both
    let mut xs: Vec<Tensor<T>> = pc.iter().map(|c| c[0].clone()).collect();
    xs.extend(gc.iter().map(|c| c[0].clone()));
    let mut ys: Vec<Tensor<T>> = pc.iter().map(|c| c[1].clone()).collect();
    ys.extend(gc.iter().map(|c| c[1].clone()));
    let ex = &fold_max(&xs) - &fold_min(&xs);
    let ey = &fold_max(&ys) - &fold_min(&ys);
    let ez = &top_p.maximum(&top_g) - &bot_p.minimum(&bot_g);
    let diag_sq = &(&ex.square() + &ey.square()) + &ez.square();

    &(&Tensor::scalar(T::ONE) - &iou) + &(&dist_sq / &diag_sq)
}

/// Distance (in the cross-product metric, normalized by edge length) from
/// the nearest vertex-on-edge degeneracy of the pred/gt clipping problem.
pub(crate) fn clipping_degeneracy_margin(a: &Box3D<f64>, b: &Box3D<f64>) -> f64 {
    let ca = a.bev_corners();
    let cb = b.bev_corners();
    let mut margin = f64::INFINITY;
    let mut scan = |verts: &[[f64; 2]; 4], edges: &[[f64; 2]; 4]| {
        for v in verts {
            for i in 0..4 {
                let e0 = edges[i];
                let e1 = edges[(i + 1) % 4];
                let ex = e1[0] - e0[0];
                let ey = e1[1] - e0[1];
                let len = (ex * ex + ey * ey).sqrt();
                let cross = ex * (v[1] - e0[1]) - ey * (v[0] - e0[0]);
                margin = margin.min((cross / len).abs());
            }
        }
    };
    scan(&ca, &cb);
    scan(&cb, &ca);
    margin
}
