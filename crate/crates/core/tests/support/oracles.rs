//! Slow, loop-based reference computations used as independent oracles.
//! None of these call into the library's numeric code.
#![allow(dead_code)]

pub type Rows = Vec<Vec<f64>>;

pub fn unit(v: &[f64]) -> Vec<f64> {
    let mut n = 0.0;
    for x in v {
        n += x * x;
    }
    let n = n.sqrt().max(1e-12);
    v.iter().map(|x| x / n).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// Per-anchor contrastive loss, summed naively in float64.
pub fn pcc_oracle(
    images: &Rows,
    paired: &Rows,
    unpaired: &Rows,
    mixed_images: Option<&Rows>,
    mixed_texts: Option<&Rows>,
    tau: f64,
) -> f64 {
    let n = images.len();
    let mut total = 0.0;
    for i in 0..n {
        let a = unit(&images[i]);
        let mut logits = vec![dot(&a, &unit(&paired[i])) / tau];
        for k in 0..n {
            if k == i {
                continue;
            }
            if let Some(m) = mixed_images {
                logits.push(dot(&a, &unit(&m[k])) / tau);
            }
            logits.push(dot(&a, &unit(&unpaired[k])) / tau);
            if let Some(m) = mixed_texts {
                logits.push(dot(&a, &unit(&m[k])) / tau);
            }
        }
        let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for l in &logits {
            denom += (l - mx).exp();
        }
        let pos = (logits[0] - mx).exp();
        total += -(pos / denom).ln();
    }
    total / n as f64
}

pub fn ce_oracle(logits: &Rows, labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (row, &y) in logits.iter().zip(labels) {
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row {
            s += (v - mx).exp();
        }
        total += -((row[y] - mx) - s.ln());
    }
    total / labels.len() as f64
}

/// AUROC by counting every (id, ood) pair: returns (2*wins + ties, 2*pairs).
pub fn auroc_pairs(id: &[f64], ood: &[f64]) -> (u64, u64) {
    let mut num = 0u64;
    for &o in ood {
        for &i in id {
            if o > i {
                num += 2;
            } else if o == i {
                num += 1;
            }
        }
    }
    (num, 2 * (id.len() * ood.len()) as u64)
}

/// Cyclic Jacobi eigen-decomposition of a symmetric matrix. Returns
/// (eigenvalues, eigenvectors as columns), sorted by descending eigenvalue.
pub fn jacobi_eigen(mut a: Rows) -> (Vec<f64>, Rows) {
    let n = a.len();
    let mut v: Rows = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    off += a[i][j] * a[i][j];
                }
            }
        }
        if off < 1e-26 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k][p];
                    let vkq = v[k][q];
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| a[y][y].partial_cmp(&a[x][x]).unwrap());
    let vals = order.iter().map(|&i| a[i][i]).collect();
    let vecs = (0..n).map(|r| order.iter().map(|&c| v[r][c]).collect()).collect();
    (vals, vecs)
}

/// Linear-interpolation quantile of a sample, computed by hand.
pub fn quantile_oracle(xs: &[f64], q: f64) -> f64 {
    let mut s = xs.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let h = (s.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(s.len() - 1);
    s[lo] + (h - lo as f64) * (s[hi] - s[lo])
}

/// Normalises each `dims` segment of `v` to unit length.
pub fn segment_unit(v: &[f64], dims: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(v.len());
    let mut start = 0;
    for &w in dims {
        out.extend(unit(&v[start..start + w]));
        start += w;
    }
    out
}

/// k-th smallest Euclidean distance by scanning every row and sorting.
pub fn kth_distance_oracle(bank: &Rows, query: &[f64], k: usize) -> f64 {
    let mut d: Vec<f64> =
        bank.iter().map(|row| row.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()).collect();
    d.sort_by(|a, b| a.partial_cmp(b).unwrap());
    d[k - 1]
}
