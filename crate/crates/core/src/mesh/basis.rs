//! One-dimensional hierarchic shape functions and Gauss–Legendre rules.
//!
//! Index 0 and 1 are the linear vertex functions `(1-ξ)/2` and `(1+ξ)/2`;
//! index `k ≥ 2` is the normalised integrated Legendre polynomial
//! `(P_k - P_{k-2}) / sqrt(2(2k-1))`, which vanishes at both ends.

/// Legendre polynomials `P_0..=P_n` at `x`.
pub fn legendre(n: usize, x: f64) -> Vec<f64> {
    let mut p = Vec::with_capacity(n + 1);
    p.push(1.0);
    if n >= 1 {
        p.push(x);
    }
    for k in 2..=n {
        let kf = k as f64;
        let next = ((2.0 * kf - 1.0) * x * p[k - 1] - (kf - 1.0) * p[k - 2]) / kf;
        p.push(next);
    }
    p
}

/// Values and derivatives of the hierarchic functions `0..=p` at `xi`.
pub fn hierarchic(p: usize, xi: f64) -> (Vec<f64>, Vec<f64>) {
    let leg = legendre(p.max(1), xi);
    let mut val = Vec::with_capacity(p + 1);
    let mut der = Vec::with_capacity(p + 1);
    val.push(0.5 * (1.0 - xi));
    der.push(-0.5);
    val.push(0.5 * (1.0 + xi));
    der.push(0.5);
    for k in 2..=p {
        let kf = k as f64;
        val.push((leg[k] - leg[k - 2]) / (2.0 * (2.0 * kf - 1.0)).sqrt());
        der.push(((2.0 * kf - 1.0) / 2.0).sqrt() * leg[k - 1]);
    }
    (val, der)
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "quadrature needs at least one point");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let leg = legendre(n, x);
            // P_n'(x) = n (x P_n - P_{n-1}) / (x² - 1)
            dp = nf * (x * leg[n] - leg[n - 1]) / (x * x - 1.0);
            let dx = leg[n] / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let leg = legendre(n, x);
        dp = if n > 0 { nf * (x * leg[n] - leg[n - 1]) / (x * x - 1.0) } else { dp };
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}
