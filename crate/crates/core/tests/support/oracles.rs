//! Brute-force reference implementations of the localisation metrics.

/// Precision/recall by direct enumeration of every pixel at every
/// threshold `k / n`, highest threshold first.
pub fn pxap_oracle(maps: &[Vec<f64>], gts: &[Vec<bool>], n: usize) -> f64 {
    let positives = gts.iter().flatten().filter(|g| **g).count() as f64;
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    for k in (0..=n).rev() {
        let tau = k as f64 / n as f64;
        let (mut sel, mut hit) = (0usize, 0usize);
        for (m, g) in maps.iter().zip(gts) {
            for (v, b) in m.iter().zip(g) {
                if *v >= tau {
                    sel += 1;
                    if *b {
                        hit += 1;
                    }
                }
            }
        }
        let precision = if sel == 0 { 1.0 } else { hit as f64 / sel as f64 };
        let recall = hit as f64 / positives;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    area
}

pub fn iou_auc_oracle(maps: &[Vec<f64>], gts: &[Vec<bool>], n: usize) -> f64 {
    let mut total = 0.0;
    for k in 0..n {
        let tau = k as f64 / n as f64;
        let mut mean = 0.0;
        for (m, g) in maps.iter().zip(gts) {
            let inter = m.iter().zip(g).filter(|(v, b)| **v >= tau && **b).count();
            let union = m.iter().zip(g).filter(|(v, b)| **v >= tau || **b).count();
            mean += if union == 0 { 1.0 } else { inter as f64 / union as f64 };
        }
        total += mean / maps.len() as f64;
    }
    total / n as f64
}
