//! Shared test oracles. Everything here is deliberately independent of
//! the library's implementation paths: the classifier trains on raw
//! pixels with its own optimizer, and the eigensolver is a
//! tridiagonalize-then-QL routine that shares no code with the Jacobi
//! solver inside the crate.

use styleswap::dataset::ImageDataset;
use styleswap::generator::ImageTensor;
use styleswap::rng;

/// Softmax regression over average-pooled pixels; the "separately trained
/// toy domain classifier" used to judge which domain an image belongs to.
pub struct DomainClassifier {
    classes: Vec<String>,
    weights: Vec<f64>, // classes x (dim + 1), bias folded in
    dim: usize,
    pool: usize,
}

impl DomainClassifier {
    /// Train on labeled datasets (one per domain) with plain full-batch
    /// gradient descent.
    pub fn train(datasets: &[(&str, &ImageDataset)], seed: u64, epochs: usize) -> Self {
        let pool = 8;
        let channels = datasets[0].1.channels();
        let dim = channels * pool * pool;
        let classes: Vec<String> = datasets.iter().map(|(n, _)| n.to_string()).collect();
        let k = classes.len();

        let mut xs: Vec<Vec<f64>> = Vec::new();
        let mut ys: Vec<usize> = Vec::new();
        for (ci, (_, data)) in datasets.iter().enumerate() {
            for img in &data.images {
                xs.push(pooled_features(img, pool));
                ys.push(ci);
            }
        }

        let mut weights = rng::normal_vec(seed, k * (dim + 1));
        for w in &mut weights {
            *w *= 0.01;
        }
        let lr = 0.5;
        let n = xs.len() as f64;
        for _ in 0..epochs {
            let mut grad = vec![0.0; k * (dim + 1)];
            for (x, &y) in xs.iter().zip(&ys) {
                let probs = softmax_scores(&weights, x, k, dim);
                for c in 0..k {
                    let err = probs[c] - if c == y { 1.0 } else { 0.0 };
                    let row = &mut grad[c * (dim + 1)..(c + 1) * (dim + 1)];
                    for (g, xv) in row.iter_mut().zip(x) {
                        *g += err * xv;
                    }
                    row[dim] += err;
                }
            }
            for (w, g) in weights.iter_mut().zip(&grad) {
                *w -= lr * g / n;
            }
        }
        Self {
            classes,
            weights,
            dim,
            pool,
        }
    }

    pub fn classify(&self, img: &ImageTensor) -> &str {
        let x = pooled_features(img, self.pool);
        let probs = softmax_scores(&self.weights, &x, self.classes.len(), self.dim);
        let mut best = 0;
        for (i, p) in probs.iter().enumerate() {
            if *p > probs[best] {
                best = i;
            }
        }
        &self.classes[best]
    }

    /// Fraction of images classified into `class`.
    #[allow(dead_code)]
    pub fn rate_for(&self, images: &[ImageTensor], class: &str) -> f64 {
        let hits = images.iter().filter(|i| self.classify(i) == class).count();
        hits as f64 / images.len() as f64
    }

    #[allow(dead_code)]
    pub fn accuracy(&self, data: &ImageDataset) -> f64 {
        let mut hits = 0;
        for (img, label) in data.images.iter().zip(&data.labels) {
            if Some(self.classify(img)) == label.as_deref() {
                hits += 1;
            }
        }
        hits as f64 / data.len() as f64
    }
}

fn pooled_features(img: &ImageTensor, pool: usize) -> Vec<f64> {
    let t = img.tensor();
    let [c, h, _w] = *t.shape() else {
        unreachable!()
    };
    let cell = (h / pool).max(1);
    let mut out = vec![0.0; c * pool * pool];
    for ch in 0..c {
        for pr in 0..pool {
            for pc in 0..pool {
                let mut acc = 0.0;
                let mut cnt = 0.0f64;
                for r in pr * cell..((pr + 1) * cell).min(h) {
                    for cc in pc * cell..((pc + 1) * cell).min(h) {
                        acc += t.data()[ch * h * h + r * h + cc];
                        cnt += 1.0;
                    }
                }
                out[ch * pool * pool + pr * pool + pc] = acc / cnt.max(1.0);
            }
        }
    }
    out
}

fn softmax_scores(weights: &[f64], x: &[f64], k: usize, dim: usize) -> Vec<f64> {
    let mut logits = vec![0.0; k];
    for c in 0..k {
        let row = &weights[c * (dim + 1)..(c + 1) * (dim + 1)];
        logits[c] = row[dim] + row[..dim].iter().zip(x).map(|(w, xv)| w * xv).sum::<f64>();
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Independent dense symmetric eigensolver: Householder similarity
/// transforms reduce the matrix to tridiagonal form, then Sturm-sequence
/// bisection extracts every eigenvalue. No code shared with the crate's
/// Jacobi solver. Returns eigenvalues in descending order.
pub fn eigenvalues_sturm(mat: &[f64], n: usize) -> Vec<f64> {
    assert_eq!(mat.len(), n * n);
    let mut a = mat.to_vec();

    // Householder tridiagonalization (dense similarity updates).
    for k in 0..n.saturating_sub(2) {
        let mut norm2 = 0.0;
        for i in k + 1..n {
            norm2 += a[i * n + k] * a[i * n + k];
        }
        let norm = norm2.sqrt();
        if norm < 1e-300 {
            continue;
        }
        let x0 = a[(k + 1) * n + k];
        let alpha = if x0 >= 0.0 { -norm } else { norm };
        // v = x - alpha*e1, normalized
        let mut v = vec![0.0; n];
        v[k + 1] = x0 - alpha;
        for i in k + 2..n {
            v[i] = a[i * n + k];
        }
        let vnorm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if vnorm < 1e-300 {
            continue;
        }
        for x in &mut v {
            *x /= vnorm;
        }
        // A = (I - 2vv')A(I - 2vv'): w = Av; A -= 2vw' + 2wv' - 4(v'w)vv'
        let mut w = vec![0.0; n];
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                acc += a[i * n + j] * v[j];
            }
            w[i] = acc;
        }
        let vw: f64 = v.iter().zip(&w).map(|(x, y)| x * y).sum();
        for i in 0..n {
            for j in 0..n {
                a[i * n + j] += -2.0 * v[i] * w[j] - 2.0 * w[i] * v[j] + 4.0 * vw * v[i] * v[j];
            }
        }
    }
    let diag: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    let off: Vec<f64> = (0..n.saturating_sub(1))
        .map(|i| a[(i + 1) * n + i])
        .collect();

    // Gershgorin bounds for the tridiagonal matrix.
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        let left = if i > 0 { off[i - 1].abs() } else { 0.0 };
        let right = if i < n - 1 { off[i].abs() } else { 0.0 };
        lo = lo.min(diag[i] - left - right);
        hi = hi.max(diag[i] + left + right);
    }
    lo -= 1e-9;
    hi += 1e-9;

    // Sturm count: eigenvalues strictly below x.
    let count_below = |x: f64| -> usize {
        let mut count = 0;
        let mut q = diag[0] - x;
        if q < 0.0 {
            count += 1;
        }
        for i in 1..n {
            let denom = if q.abs() < 1e-300 {
                1e-300_f64.copysign(if q == 0.0 { 1.0 } else { q })
            } else {
                q
            };
            q = diag[i] - x - off[i - 1] * off[i - 1] / denom;
            if q < 0.0 {
                count += 1;
            }
        }
        count
    };

    // Bisect for the k-th smallest eigenvalue.
    let mut vals = Vec::with_capacity(n);
    for k in 0..n {
        let (mut a_lo, mut a_hi) = (lo, hi);
        for _ in 0..100 {
            let mid = 0.5 * (a_lo + a_hi);
            if count_below(mid) > k {
                a_hi = mid;
            } else {
                a_lo = mid;
            }
        }
        vals.push(0.5 * (a_lo + a_hi));
    }
    vals.sort_by(|x, y| y.partial_cmp(x).unwrap());
    vals
}

#[allow(dead_code)]
pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}
