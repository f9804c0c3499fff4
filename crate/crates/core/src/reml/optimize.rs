//! Derivative-free maximization over a box.
//!
//! Restricted likelihoods in this crate are frequently maximized on the
//! boundary of the parameter box (a zero variance, a correlation of ±1), where
//! they are not differentiable in the constrained sense. Nelder–Mead with
//! every trial point projected onto the box reaches such corners exactly; a
//! golden-section pass over each coordinate then tightens interior optima and
//! compares against the exact bound values.

/// Closed box `lower ≤ x ≤ upper`; an upper bound may be `f64::INFINITY`.
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        assert_eq!(lower.len(), upper.len());
        assert!(lower.iter().zip(&upper).all(|(l, u)| l <= u));
        Self { lower, upper }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn project(&self, x: &mut [f64]) {
        for ((v, &lo), &hi) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(lo, hi);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NelderMeadOptions {
    pub max_evals: usize,
    /// Stop when the spread of objective values over the simplex is below this.
    pub f_tol: f64,
    /// ... and every vertex is within this distance (per coordinate) of the best.
    pub x_tol: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            max_evals: 4000,
            f_tol: 1e-10,
            x_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Optimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub n_evals: usize,
    pub converged: bool,
}

/// Objective wrapper that counts evaluations and maps NaN to `-inf`.
pub(crate) struct Counted<F> {
    f: F,
    pub evals: usize,
}

impl<F: FnMut(&[f64]) -> f64> Counted<F> {
    pub fn new(f: F) -> Self {
        Self { f, evals: 0 }
    }

    pub fn eval(&mut self, x: &[f64]) -> f64 {
        self.evals += 1;
        let v = (self.f)(x);
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    }
}

/// Maximizes `f` from `x0`, with initial simplex edges `step`.
///
/// A step that would leave the box is taken in the opposite direction.
pub fn nelder_mead_max<F: FnMut(&[f64]) -> f64>(
    f: F,
    x0: &[f64],
    step: &[f64],
    bounds: &Bounds,
    opts: &NelderMeadOptions,
) -> Optimum {
    let mut obj = Counted::new(f);
    let (x, value, converged) = nelder_mead_core(&mut obj, x0, step, bounds, opts);
    Optimum {
        x,
        value,
        n_evals: obj.evals,
        converged,
    }
}

pub(crate) fn nelder_mead_core<F: FnMut(&[f64]) -> f64>(
    obj: &mut Counted<F>,
    x0: &[f64],
    step: &[f64],
    bounds: &Bounds,
    opts: &NelderMeadOptions,
) -> (Vec<f64>, f64, bool) {
    let n = x0.len();
    let budget = obj.evals + opts.max_evals;
    let mut start = x0.to_vec();
    bounds.project(&mut start);

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(start.clone());
    for k in 0..n {
        let mut v = start.clone();
        let mut d = step[k];
        if v[k] + d > bounds.upper[k] {
            d = -d;
        }
        v[k] += d;
        if v[k] < bounds.lower[k] {
            v[k] = bounds.lower[k];
        }
        if v[k] == start[k] {
            // Degenerate box edge; fall back to any admissible move.
            v[k] = if bounds.upper[k] > start[k] {
                (start[k] + step[k].abs()).min(bounds.upper[k])
            } else {
                (start[k] - step[k].abs()).max(bounds.lower[k])
            };
        }
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| obj.eval(v)).collect();

    let trial = |centroid: &[f64], worst: &[f64], t: f64| -> Vec<f64> {
        let mut p: Vec<f64> = centroid
            .iter()
            .zip(worst)
            .map(|(c, w)| c + t * (c - w))
            .collect();
        bounds.project(&mut p);
        p
    };

    let mut converged = false;
    loop {
        // Sort best (largest) first.
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let f_spread = values[0] - values[n];
        let x_spread = simplex[1..]
            .iter()
            .flat_map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if f_spread.is_finite() && f_spread < opts.f_tol && x_spread < opts.x_tol {
            converged = true;
            break;
        }
        if obj.evals >= budget {
            break;
        }

        let mut centroid = vec![0.0; n];
        for v in &simplex[..n] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / n as f64;
            }
        }
        let worst = simplex[n].clone();

        let xr = trial(&centroid, &worst, 1.0);
        let fr = obj.eval(&xr);
        if fr > values[0] {
            let xe = trial(&centroid, &worst, 2.0);
            let fe = obj.eval(&xe);
            if fe > fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
            continue;
        }
        if fr > values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
            continue;
        }
        // Contraction: outside if the reflection beat the worst point, else inside.
        let (xc, fc) = if fr > values[n] {
            let xc = trial(&centroid, &worst, 0.5);
            let fc = obj.eval(&xc);
            (xc, fc)
        } else {
            let xc = trial(&centroid, &worst, -0.5);
            let fc = obj.eval(&xc);
            (xc, fc)
        };
        if fc > values[n].max(fr) {
            simplex[n] = xc;
            values[n] = fc;
            continue;
        }
        // Shrink toward the best vertex.
        let best = simplex[0].clone();
        for k in 1..=n {
            let mut p: Vec<f64> = simplex[k]
                .iter()
                .zip(&best)
                .map(|(x, b)| b + 0.5 * (x - b))
                .collect();
            bounds.project(&mut p);
            values[k] = obj.eval(&p);
            simplex[k] = p;
        }
    }
    (simplex[0].clone(), values[0], converged)
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Golden-section maximization of a one-dimensional function on `[lo, hi]`.
///
/// The endpoints are always evaluated, so a maximum sitting exactly on a bound
/// is returned exactly.
pub fn golden_section_max<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, tol: f64) -> (f64, f64) {
    let mut g = |x: f64| {
        let v = f(x);
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    };
    let (flo, fhi) = (g(lo), g(hi));
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (g(c), g(d));
    while (b - a).abs() > tol * (1.0 + c.abs().max(d.abs())) {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = g(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = g(d);
        }
    }
    let mut best = if fc >= fd { (c, fc) } else { (d, fd) };
    if flo > best.1 {
        best = (lo, flo);
    }
    if fhi > best.1 {
        best = (hi, fhi);
    }
    best
}

/// Coordinate-wise golden-section refinement of `x` within `bounds`.
///
/// Each coordinate is searched in a window around its current value; the
/// window widens while the optimum keeps landing on an interior window edge.
/// Cycles repeat until a full pass gains less than `f_tol`.
pub(crate) fn polish<F: FnMut(&[f64]) -> f64>(
    obj: &mut Counted<F>,
    x: &mut [f64],
    value: &mut f64,
    bounds: &Bounds,
    f_tol: f64,
    max_cycles: usize,
) {
    let n = x.len();
    for _ in 0..max_cycles {
        let start = *value;
        for k in 0..n {
            let mut width = 1e-3 * (x[k].abs() + 1e-2);
            for _ in 0..12 {
                let lo = (x[k] - width).max(bounds.lower[k]);
                let hi = (x[k] + width).min(bounds.upper[k]);
                let mut probe = x.to_vec();
                let (xk, fk) = golden_section_max(
                    |t| {
                        probe[k] = t;
                        obj.eval(&probe)
                    },
                    lo,
                    hi,
                    1e-13,
                );
                if fk > *value {
                    x[k] = xk;
                    *value = fk;
                }
                let on_inner_edge = (xk == lo && lo > bounds.lower[k]) || (xk == hi && hi < bounds.upper[k]);
                if !on_inner_edge {
                    break;
                }
                width *= 8.0;
            }
        }
        if *value - start < f_tol {
            break;
        }
    }
}
