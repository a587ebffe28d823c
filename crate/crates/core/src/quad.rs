//! Gauss–Legendre rules and piecewise cubic Hermite interpolation.

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi initial guess, then Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        dp = if d != 0.0 { d } else { dp };
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Fixed rule mapped onto arbitrary intervals.
#[derive(Debug, Clone)]
pub struct GaussRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussRule {
    pub fn new(n: usize) -> Self {
        let (nodes, weights) = gauss_legendre(n);
        Self { nodes, weights }
    }

    /// Mapped nodes and weights for `[a, b]`.
    pub fn points(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(x, w)| (mid + half * x, half * w))
    }

    pub fn integrate(&self, a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.points(a, b).map(|(x, w)| w * f(x)).sum()
    }
}

/// Cubic Hermite interpolant on a uniform knot grid with supplied slopes.
#[derive(Debug, Clone)]
pub struct HermiteTable {
    start: f64,
    step: f64,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

impl HermiteTable {
    /// When `monotone` is set, slopes are limited (Fritsch–Carlson) so the
    /// interpolant never leaves the range of adjacent knot values.
    pub fn new(start: f64, step: f64, values: Vec<f64>, mut slopes: Vec<f64>, monotone: bool) -> Self {
        assert_eq!(values.len(), slopes.len());
        assert!(values.len() >= 2);
        if monotone {
            for k in 0..values.len() - 1 {
                let delta = (values[k + 1] - values[k]) / step;
                if delta == 0.0 {
                    slopes[k] = 0.0;
                    slopes[k + 1] = 0.0;
                    continue;
                }
                let a = slopes[k] / delta;
                let b = slopes[k + 1] / delta;
                if a < 0.0 {
                    slopes[k] = 0.0;
                }
                if b < 0.0 {
                    slopes[k + 1] = 0.0;
                }
                let s = a * a + b * b;
                if s > 9.0 {
                    let tau = 3.0 / s.sqrt();
                    slopes[k] = tau * a * delta;
                    slopes[k + 1] = tau * b * delta;
                }
            }
        }
        Self { start, step, values, slopes }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.values.len();
        let pos = (x - self.start) / self.step;
        let k = (pos.floor().max(0.0) as usize).min(n - 2);
        let u = pos - k as f64;
        if u == 0.0 {
            return self.values[k];
        }
        if u == 1.0 {
            return self.values[k + 1];
        }
        let (y0, y1) = (self.values[k], self.values[k + 1]);
        let (m0, m1) = (self.slopes[k] * self.step, self.slopes[k + 1] * self.step);
        let u2 = u * u;
        let u3 = u2 * u;
        let h00 = 2.0 * u3 - 3.0 * u2 + 1.0;
        let h10 = u3 - 2.0 * u2 + u;
        let h01 = -2.0 * u3 + 3.0 * u2;
        let h11 = u3 - u2;
        h00 * y0 + h10 * m0 + h01 * y1 + h11 * m1
    }

    pub fn last(&self) -> f64 {
        *self.values.last().expect("non-empty table")
    }
}
