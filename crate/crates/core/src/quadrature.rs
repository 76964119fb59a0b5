//! Gauss–Hermite and Gauss–Legendre rules and tensor grids.

/// A one-dimensional quadrature rule.
#[derive(Debug, Clone)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

/// Gauss–Hermite rule for the weight `exp(-x²)` (physicists' convention),
/// computed by Newton iteration on orthonormal Hermite polynomials.
pub fn gauss_hermite(order: usize) -> Rule {
    assert!(order >= 1, "quadrature order must be positive");
    const PIM4: f64 = 0.751_125_544_464_942_5; // pi^(-1/4)
    let n = order;
    let nf = n as f64;
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    let mut z = 0.0_f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-0.16667),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..200 {
            let mut p1 = PIM4;
            let mut p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    // Ascending order.
    x.reverse();
    w.reverse();
    Rule { nodes: x, weights: w }
}

/// Gauss–Hermite rule for the standard normal law: `E[f(Y)] ≈ Σ w_k f(y_k)`,
/// weights summing to one.
pub fn gauss_hermite_normal(order: usize) -> Rule {
    let r = gauss_hermite(order);
    let s = std::f64::consts::PI.sqrt();
    Rule {
        nodes: r.nodes.iter().map(|x| x * std::f64::consts::SQRT_2).collect(),
        weights: r.weights.iter().map(|w| w / s).collect(),
    }
}

/// Gauss–Legendre rule on `[a, b]`.
pub fn gauss_legendre(order: usize, a: f64, b: f64) -> Rule {
    assert!(order >= 1, "quadrature order must be positive");
    let n = order;
    let nf = n as f64;
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    let (xm, xl) = (0.5 * (b + a), 0.5 * (b - a));
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut pp = 1.0;
        for _ in 0..200 {
            let mut p1 = 1.0;
            let mut p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = ((2.0 * jf - 1.0) * z * p2 - (jf - 1.0) * p3) / jf;
            }
            pp = nf * (z * p1 - p2) / (z * z - 1.0);
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 {
                break;
            }
        }
        x[i] = xm - xl * z;
        x[n - 1 - i] = xm + xl * z;
        w[i] = 2.0 * xl / ((1.0 - z * z) * pp * pp);
        w[n - 1 - i] = w[i];
    }
    Rule { nodes: x, weights: w }
}

/// Iterates the tensor product of `dim` copies of a rule, calling
/// `visit(point, weight)` for every node; returns the number of nodes.
pub fn for_each_tensor_node(rule: &Rule, dim: usize, mut visit: impl FnMut(&[f64], f64)) -> usize {
    let k = rule.len();
    let mut idx = vec![0usize; dim];
    let mut point: Vec<f64> = vec![rule.nodes[0]; dim];
    let total = k.pow(dim as u32);
    for _ in 0..total {
        let w: f64 = idx.iter().map(|&i| rule.weights[i]).product();
        visit(&point, w);
        // odometer increment
        for d in 0..dim {
            idx[d] += 1;
            if idx[d] < k {
                point[d] = rule.nodes[idx[d]];
                break;
            }
            idx[d] = 0;
            point[d] = rule.nodes[0];
        }
    }
    total
}
