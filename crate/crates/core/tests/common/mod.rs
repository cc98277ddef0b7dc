#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use ridgecraft::asdf::Asdf;
use ridgecraft::geometry::{build_net, sample_manifold, ManifoldSpec};
use ridgecraft::pca_asdf::{Cylinder, CylinderPacket};

/// Net at covering radius τ̄/2 and separation τ̄/2.9 with the analytic
/// tangent at every center.
pub fn ideal_packet(spec: &ManifoldSpec, n_sample: usize, tau_bar: f64, seed: u64) -> CylinderPacket {
    let cloud = sample_manifold(spec, n_sample, seed).unwrap();
    let net = build_net(&cloud, tau_bar / 2.0, tau_bar / 2.9).unwrap();
    let cylinders = net
        .centers
        .iter()
        .map(|c| Cylinder {
            center: DVector::from_column_slice(c),
            basis: spec.tangent_basis(c).unwrap(),
            eigen_gap: 1.0,
        })
        .collect();
    CylinderPacket::new(tau_bar, cylinders).unwrap()
}

/// Uniform point of the ball of radius `r` in R^n.
pub fn in_ball<R: Rng>(rng: &mut R, n: usize, r: f64) -> Vec<f64> {
    let g: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    let radius = r * rng.random::<f64>().powf(1.0 / n as f64);
    g.iter().map(|v| v * radius / norm).collect()
}

/// Central differences of the value, step `h` in working coordinates.
pub fn fd_gradient<A: Asdf + ?Sized>(asdf: &A, x: &[f64], h: f64) -> DVector<f64> {
    let n = x.len();
    DVector::from_iterator(
        n,
        (0..n).map(|k| {
            let mut p = x.to_vec();
            let mut m = x.to_vec();
            p[k] += h;
            m[k] -= h;
            (asdf.value_working(&p).unwrap() - asdf.value_working(&m).unwrap()) / (2.0 * h)
        }),
    )
}

/// Mixed second differences of the value.
pub fn fd_hessian<A: Asdf + ?Sized>(asdf: &A, x: &[f64], h: f64) -> DMatrix<f64> {
    let n = x.len();
    let f = |dx: &[(usize, f64)]| {
        let mut y = x.to_vec();
        for &(k, s) in dx {
            y[k] += s;
        }
        asdf.value_working(&y).unwrap()
    };
    let mut hess = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            hess[(i, j)] = (f(&[(i, h), (j, h)]) - f(&[(i, h), (j, -h)]) - f(&[(i, -h), (j, h)])
                + f(&[(i, -h), (j, -h)]))
                / (4.0 * h * h);
        }
    }
    hess
}

/// `‖approx − exact‖ / max(‖exact‖, floor)`.
pub fn rel_err(approx: &[f64], exact: &[f64], floor: f64) -> f64 {
    let diff = approx
        .iter()
        .zip(exact)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let norm = exact.iter().map(|v| v * v).sum::<f64>().sqrt();
    diff / norm.max(floor)
}

/// Random orthogonal matrix (QR of a Gaussian matrix).
pub fn random_rotation<R: Rng>(rng: &mut R, n: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| StandardNormal.sample(rng));
    g.qr().q()
}

/// F^ō jumps where a point crosses the normal boundary of a cylinder, so
/// finite-difference stencils must keep the same cylinder membership.
pub fn away_from_boundaries(packet: &CylinderPacket, z: &[f64], margin: f64) -> bool {
    let tau_bar = packet.tau_bar();
    packet.cylinders().iter().all(|c| {
        let (t, n) = c.split(z);
        (t.norm() - tau_bar).abs() > margin && (n.norm() - tau_bar).abs() > margin
    })
}

/// Sum of the bump weights of the cylinders containing `z`.
pub fn total_weight(packet: &CylinderPacket, z: &[f64]) -> f64 {
    packet
        .containing(z)
        .into_iter()
        .map(|i| {
            let (t, _) = packet.cylinders()[i].split(z);
            ridgecraft::pca_asdf::bump_theta((t / (2.0 * packet.tau_bar())).as_slice()).value
        })
        .sum()
}

