//! Globally adaptive Gauss–Kronrod (7/15) quadrature for scalar and
//! vector-valued integrands.

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

/// Accuracy request for [`integrate`] and [`integrate_vec`].
#[derive(Debug, Clone, Copy)]
pub struct QuadOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Number of equal panels the interval is split into before adapting.
    pub initial_panels: usize,
    pub max_panels: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        Self { rel_tol: 1e-8, abs_tol: 1e-14, initial_panels: 8, max_panels: 4000 }
    }
}

struct Panel {
    a: f64,
    b: f64,
    value: Vec<f64>,
    error: Vec<f64>,
}

fn gk15<F: FnMut(f64, &mut [f64])>(f: &mut F, a: f64, b: f64, dim: usize, buf: &mut [f64]) -> Panel {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut kron = vec![0.0; dim];
    let mut gauss = vec![0.0; dim];
    f(c, buf);
    for d in 0..dim {
        kron[d] = WGK[7] * buf[d];
        gauss[d] = WG[3] * buf[d];
    }
    for (idx, (&x, &w)) in XGK.iter().zip(WGK.iter()).take(7).enumerate() {
        for sign in [-1.0, 1.0] {
            f(c + sign * h * x, buf);
            for d in 0..dim {
                kron[d] += w * buf[d];
                if idx % 2 == 1 {
                    gauss[d] += WG[idx / 2] * buf[d];
                }
            }
        }
    }
    let value: Vec<f64> = kron.iter().map(|k| k * h).collect();
    let error = kron.iter().zip(&gauss).map(|(k, g)| ((k - g) * h).abs()).collect();
    Panel { a, b, value, error }
}

/// Integrates the vector-valued `f` (which writes `dim` components into its
/// output slice) over `[a, b]`, refining until every component meets
/// `max(rel_tol·|I|, abs_tol)`.
pub fn integrate_vec<F>(mut f: F, dim: usize, a: f64, b: f64, opts: QuadOptions) -> Result<Vec<f64>>
where
    F: FnMut(f64, &mut [f64]),
{
    if dim == 0 {
        return Ok(Vec::new());
    }
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::Input(format!("integration bounds must be finite: [{a}, {b}]")));
    }
    if a == b {
        return Ok(vec![0.0; dim]);
    }
    let mut buf = vec![0.0; dim];
    let n0 = opts.initial_panels.max(1);
    let mut panels: Vec<Panel> = (0..n0)
        .map(|i| {
            let lo = a + (b - a) * i as f64 / n0 as f64;
            let hi = if i + 1 == n0 { b } else { a + (b - a) * (i + 1) as f64 / n0 as f64 };
            gk15(&mut f, lo, hi, dim, &mut buf)
        })
        .collect();

    loop {
        let mut total = vec![0.0; dim];
        let mut err = vec![0.0; dim];
        for p in &panels {
            for d in 0..dim {
                total[d] += p.value[d];
                err[d] += p.error[d];
            }
        }
        let scale: Vec<f64> = total.iter().map(|t| (opts.rel_tol * t.abs()).max(opts.abs_tol)).collect();
        if err.iter().zip(&scale).all(|(e, s)| e <= s) {
            return Ok(total);
        }
        if panels.len() >= opts.max_panels {
            return Err(Error::Numeric(format!(
                "quadrature did not converge on [{a}, {b}] within {} panels",
                opts.max_panels
            )));
        }
        let worst = panels
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let w = p.error.iter().zip(&scale).map(|(e, s)| e / s).fold(0.0, f64::max);
                (i, w)
            })
            .fold((0, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc })
            .0;
        let p = panels.swap_remove(worst);
        let mid = 0.5 * (p.a + p.b);
        if mid <= p.a || mid >= p.b {
            return Err(Error::Numeric("quadrature panel collapsed below machine resolution".into()));
        }
        panels.push(gk15(&mut f, p.a, mid, dim, &mut buf));
        panels.push(gk15(&mut f, mid, p.b, dim, &mut buf));
    }
}

/// Scalar adaptive integration of `f` over `[a, b]`.
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, opts: QuadOptions) -> Result<f64> {
    integrate_vec(|x, out| out[0] = f(x), 1, a, b, opts).map(|v| v[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn polynomials_and_transcendentals() {
        let o = QuadOptions::default();
        assert_relative_eq!(integrate(|x| x * x, 0.0, 3.0, o).unwrap(), 9.0, max_relative = 1e-13);
        assert_relative_eq!(integrate(f64::sin, 0.0, std::f64::consts::PI, o).unwrap(), 2.0, max_relative = 1e-12);
        assert_relative_eq!(integrate(|x| x.sqrt(), 0.0, 1.0, o).unwrap(), 2.0 / 3.0, max_relative = 1e-8);
    }

    #[test]
    fn sharp_step() {
        let o = QuadOptions::default();
        let v = integrate(|x| 1.0 / (1.0 + (-(x - 0.3) * 2000.0).exp()), 0.0, 1.0, o).unwrap();
        assert_relative_eq!(v, 0.7, max_relative = 1e-8);
    }

    #[test]
    fn vector_components() {
        let o = QuadOptions::default();
        let v = integrate_vec(|x, out| { out[0] = 1.0; out[1] = x.exp(); }, 2, 0.0, 1.0, o).unwrap();
        assert_relative_eq!(v[0], 1.0, max_relative = 1e-13);
        assert_relative_eq!(v[1], 1f64.exp() - 1.0, max_relative = 1e-13);
    }
}
