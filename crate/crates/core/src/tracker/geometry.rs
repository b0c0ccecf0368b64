use crate::ingest::BBox;

fn intersection(a: &BBox, b: &BBox) -> f64 {
    let w = (a.right().min(b.right()) - a.left.max(b.left)).max(0.0);
    let h = (a.bottom().min(b.bottom()) - a.top.max(b.top)).max(0.0);
    w * h
}

/// Intersection over union; 0 when the union is empty.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = intersection(a, b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Generalized IoU: `iou − (enclosing − union)/enclosing`, in (−1, 1].
pub fn giou(a: &BBox, b: &BBox) -> f64 {
    let inter = intersection(a, b);
    let union = a.area() + b.area() - inter;
    let enclosing = (a.right().max(b.right()) - a.left.min(b.left)).max(0.0)
        * (a.bottom().max(b.bottom()) - a.top.min(b.top)).max(0.0);
    if enclosing <= 0.0 {
        return 0.0;
    }
    let overlap = if union <= 0.0 { 0.0 } else { inter / union };
    overlap - (enclosing - union) / enclosing
}

/// Euclidean distance between box centers.
pub fn center_distance(a: &BBox, b: &BBox) -> f64 {
    let (ca, cb) = (a.center(), b.center());
    (ca[0] - cb[0]).hypot(ca[1] - cb[1])
}
