//! Fixed quadrature rules used to integrate kernels over grid cells.

/// `n`-point Gauss–Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss–Legendre rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n.div_ceil(2) {
            // Newton on P_n starting from the Chebyshev-like guess
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 1.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            dp = if d != 0.0 { d } else { dp };
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `int_a^b f(s) ds`; `f` also receives `b - s`.
    #[inline]
    pub fn integrate(&self, a: f64, b: f64, mut f: impl FnMut(f64, f64) -> f64) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let mut acc = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            let off = half * x;
            acc += w * f(mid + off, half - off);
        }
        acc * half
    }
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { 1.0 } else { p1 };
    let dp = n as f64 * (x * p - p0) / (x * x - 1.0);
    (p, dp)
}

/// One-sided tanh–sinh rule for `int_0^L phi(d) dd` where `phi` may have an
/// integrable algebraic singularity at `d = 0`. Nodes are stored as
/// fractions of `L`, so tiny offsets from the singular end stay exact.
#[derive(Debug, Clone)]
pub struct TanhSinh {
    fractions: Vec<f64>,
    weights: Vec<f64>,
}

impl TanhSinh {
    pub fn new(step: f64) -> Self {
        let half_pi = std::f64::consts::FRAC_PI_2;
        let lo = (-6.0 / step).floor() as i64;
        let hi = (3.5 / step).ceil() as i64;
        let mut fractions = Vec::new();
        let mut weights = Vec::new();
        for k in lo..=hi {
            let x = k as f64 * step;
            let y = half_pi * x.sinh();
            let frac = 1.0 / (1.0 + (-2.0 * y).exp());
            let sech = 1.0 / y.cosh();
            let w = step * 0.5 * sech * sech * half_pi * x.cosh();
            if frac > 1e-300 && frac < 1.0 && w > 0.0 {
                fractions.push(frac);
                weights.push(w);
            }
        }
        Self { fractions, weights }
    }

    /// `int_a^b f(s) ds` with `f` singular at `a` (`from_left`) or at `b`.
    /// `f` receives `s` and `b - s`; the latter is exact near `b`.
    #[inline]
    pub fn integrate_one_sided(
        &self,
        a: f64,
        b: f64,
        from_left: bool,
        mut f: impl FnMut(f64, f64) -> f64,
    ) -> f64 {
        let len = b - a;
        let mut acc = 0.0;
        for (frac, w) in self.fractions.iter().zip(&self.weights) {
            let d = len * frac;
            let v = if from_left {
                f(a + d, len - d)
            } else {
                f(b - d, d)
            };
            acc += w * v;
        }
        acc * len
    }

    /// `int_a^b f(s) ds` with possible singularities at either end.
    pub fn integrate(
        &self,
        a: f64,
        b: f64,
        left: bool,
        right: bool,
        mut f: impl FnMut(f64, f64) -> f64,
    ) -> f64 {
        match (left, right) {
            (true, true) => {
                let m = 0.5 * (a + b);
                let tail = b - m;
                self.integrate_one_sided(a, m, true, |s, g| f(s, g + tail))
                    + self.integrate_one_sided(m, b, false, &mut f)
            }
            (true, false) => self.integrate_one_sided(a, b, true, f),
            _ => self.integrate_one_sided(a, b, false, f),
        }
    }
}
