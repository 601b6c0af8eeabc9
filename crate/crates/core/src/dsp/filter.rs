use rustfft::num_complex::Complex64;

use crate::error::{invalid, Result};

/// Direct-form IIR coefficients with `a[0] == 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct IirCoeffs {
    pub b: Vec<f64>,
    pub a: Vec<f64>,
}

fn poly_from_roots(roots: &[Complex64]) -> Vec<Complex64> {
    let mut p = vec![Complex64::new(1.0, 0.0)];
    for &r in roots {
        let mut next = vec![Complex64::new(0.0, 0.0); p.len() + 1];
        for (i, &c) in p.iter().enumerate() {
            next[i] += c;
            next[i + 1] -= c * r;
        }
        p = next;
    }
    p
}

/// Digital Butterworth low-pass via the bilinear transform with
/// frequency prewarping. `cutoff_norm` is relative to Nyquist.
pub fn butterworth_design(order: usize, cutoff_norm: f64) -> Result<IirCoeffs> {
    if order < 1 {
        return Err(invalid("butterworth order must be at least 1"));
    }
    if !(cutoff_norm > 0.0 && cutoff_norm < 1.0) {
        return Err(invalid(format!("cutoff {cutoff_norm} outside (0, 1)")));
    }
    let n = order as f64;
    let warped = 4.0 * (std::f64::consts::PI * cutoff_norm / 2.0).tan();
    let poles: Vec<Complex64> = (0..order)
        .map(|k| {
            let m = -(n - 1.0) + 2.0 * k as f64;
            let p = -Complex64::from_polar(1.0, std::f64::consts::PI * m / (2.0 * n));
            let analog = p * warped;
            (4.0 + analog) / (4.0 - analog)
        })
        .collect();
    let zeros = vec![Complex64::new(-1.0, 0.0); order];
    let a: Vec<f64> = poly_from_roots(&poles).iter().map(|c| c.re).collect();
    let b_raw: Vec<f64> = poly_from_roots(&zeros).iter().map(|c| c.re).collect();
    // unity gain at DC
    let gain = a.iter().sum::<f64>() / b_raw.iter().sum::<f64>();
    let b = b_raw.iter().map(|v| v * gain).collect();
    Ok(IirCoeffs { b, a })
}

/// Transposed direct-form II filtering with initial state `zi`.
pub fn lfilter(c: &IirCoeffs, x: &[f64], zi: Option<&[f64]>) -> Vec<f64> {
    let n = c.a.len().max(c.b.len());
    let coef = |v: &[f64], i: usize| v.get(i).copied().unwrap_or(0.0);
    let mut z = vec![0.0; n];
    if let Some(init) = zi {
        z[..init.len()].copy_from_slice(init);
    }
    let mut y = Vec::with_capacity(x.len());
    for &xv in x {
        let yv = coef(&c.b, 0) * xv + z[0];
        for i in 1..n {
            z[i - 1] = coef(&c.b, i) * xv + z[i] - coef(&c.a, i) * yv;
        }
        y.push(yv);
    }
    y
}

/// Steady-state initial conditions for a unit step input.
fn lfilter_zi(c: &IirCoeffs) -> Vec<f64> {
    let n = c.a.len().max(c.b.len());
    let m = n - 1;
    if m == 0 {
        return Vec::new();
    }
    let coef = |v: &[f64], i: usize| v.get(i).copied().unwrap_or(0.0);
    // (I - companion(a)^T) zi = b[1:] - a[1:] * b[0]
    let mut mat = vec![vec![0.0; m + 1]; m];
    for (i, row) in mat.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().take(m).enumerate() {
            let companion_ji = if j == 0 {
                -coef(&c.a, i + 1)
            } else if i + 1 == j {
                1.0
            } else {
                0.0
            };
            *cell = if i == j { 1.0 } else { 0.0 } - companion_ji;
        }
        row[m] = coef(&c.b, i + 1) - coef(&c.a, i + 1) * coef(&c.b, 0);
    }
    for col in 0..m {
        let pivot = (col..m)
            .max_by(|&p, &q| mat[p][col].abs().partial_cmp(&mat[q][col].abs()).unwrap())
            .unwrap();
        mat.swap(col, pivot);
        for r in 0..m {
            if r != col {
                let f = mat[r][col] / mat[col][col];
                for k in col..=m {
                    mat[r][k] -= f * mat[col][k];
                }
            }
        }
    }
    (0..m).map(|i| mat[i][m] / mat[i][i]).collect()
}

/// Zero-phase forward-backward filtering with odd-extension padding.
pub fn filtfilt(c: &IirCoeffs, x: &[f64]) -> Vec<f64> {
    if x.is_empty() {
        return Vec::new();
    }
    let n = x.len();
    let padlen = (3 * c.a.len().max(c.b.len())).min(n - 1);
    let mut ext = Vec::with_capacity(n + 2 * padlen);
    for i in (1..=padlen).rev() {
        ext.push(2.0 * x[0] - x[i]);
    }
    ext.extend_from_slice(x);
    for i in 1..=padlen {
        ext.push(2.0 * x[n - 1] - x[n - 1 - i]);
    }
    let zi = lfilter_zi(c);
    let scaled = |v: f64| zi.iter().map(|z| z * v).collect::<Vec<_>>();
    let fwd = lfilter(c, &ext, Some(&scaled(ext[0])));
    let rev: Vec<f64> = fwd.into_iter().rev().collect();
    let bwd = lfilter(c, &rev, Some(&scaled(rev[0])));
    bwd.into_iter().rev().skip(padlen).take(n).collect()
}

/// Zero-phase Butterworth low-pass; output length equals input length.
pub fn butterworth_lowpass(x: &[f64], order: usize, cutoff_norm: f64) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(invalid("cannot filter an empty sequence"));
    }
    let c = butterworth_design(order, cutoff_norm)?;
    Ok(filtfilt(&c, x))
}
