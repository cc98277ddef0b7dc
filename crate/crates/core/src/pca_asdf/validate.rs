//! Checks of the cylinder-packet conditions: cylinder count, center
//! separation, cross-section net coverage, frame rotation and normal offset
//! between intersecting cylinders.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::packet::{Cylinder, CylinderPacket};
use super::PcaError;
use crate::geometry::{KdTree, PointCloud};
use crate::linalg::largest_principal_angle_sine;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationOptions {
    /// Constant factor in the count bound `|packet| ≤ κ V / s^d`.
    pub kappa: f64,
    /// Use the reach τ instead of τ̄ as `s` in the count bound.
    pub count_against_reach: bool,
    /// Cross-section grid spacing is `τ̄ / grid_divisions`.
    pub grid_divisions: usize,
    /// Alternating-projection iterations in the intersection test.
    pub intersection_iters: usize,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        Self {
            kappa: 10.0,
            count_against_reach: false,
            grid_divisions: 20,
            intersection_iters: 200,
        }
    }
}

/// Outcome of one condition. `margin` is the worst slack (negative on
/// failure); with nothing to check it equals the bound itself.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionResult {
    pub passed: bool,
    pub margin: f64,
    pub violations: usize,
    pub checked: usize,
}

impl ConditionResult {
    fn from_slacks(slacks: impl IntoIterator<Item = f64>, vacuous: f64) -> Self {
        let mut margin = f64::INFINITY;
        let (mut violations, mut checked) = (0, 0);
        for s in slacks {
            checked += 1;
            margin = margin.min(s);
            if s < 0.0 {
                violations += 1;
            }
        }
        if checked == 0 {
            margin = vacuous;
        }
        Self {
            passed: margin >= 0.0,
            margin,
            violations,
            checked,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PacketValidationReport {
    pub count_bound: ConditionResult,
    pub center_separation: ConditionResult,
    pub net_coverage: ConditionResult,
    pub rotation_bound: ConditionResult,
    pub translation_bound: ConditionResult,
}

impl PacketValidationReport {
    pub fn conditions(&self) -> [(&'static str, &ConditionResult); 5] {
        [
            ("count_bound", &self.count_bound),
            ("center_separation", &self.center_separation),
            ("net_coverage", &self.net_coverage),
            ("rotation_bound", &self.rotation_bound),
            ("translation_bound", &self.translation_bound),
        ]
    }

    pub fn all_passed(&self) -> bool {
        self.conditions().iter().all(|(_, c)| c.passed)
    }

    pub fn failed(&self) -> Vec<&'static str> {
        self.conditions()
            .iter()
            .filter(|(_, c)| !c.passed)
            .map(|(name, _)| *name)
            .collect()
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<20} {:>6} {:>14} {:>10} {:>8}\n",
            "condition", "pass", "margin", "violations", "checked"
        );
        for (name, c) in self.conditions() {
            out.push_str(&format!(
                "{:<20} {:>6} {:>14.6e} {:>10} {:>8}\n",
                name,
                if c.passed { "yes" } else { "NO" },
                c.margin,
                c.violations,
                c.checked
            ));
        }
        out
    }
}

/// Nearest point of the cylinder to `z`: clamp tangential and normal parts
/// to radius τ̄ separately.
fn project_onto(cyl: &Cylinder, z: &DVector<f64>, tau_bar: f64) -> DVector<f64> {
    let u = z - &cyl.center;
    let mut t = cyl.basis.transpose() * &u;
    let mut r = &u - &cyl.basis * &t;
    let (tn, rn) = (t.norm(), r.norm());
    if tn > tau_bar {
        t *= tau_bar / tn;
    }
    if rn > tau_bar {
        r *= tau_bar / rn;
    }
    &cyl.center + &cyl.basis * t + r
}

/// Whether two cylinders of half-width τ̄ intersect. Decided by center
/// distance when it is conclusive, otherwise by alternating projections
/// between the two convex bodies.
pub fn cylinders_intersect(a: &Cylinder, b: &Cylinder, tau_bar: f64, iters: usize) -> bool {
    let dist = (&a.center - &b.center).norm();
    if dist > 2.0 * 2f64.sqrt() * tau_bar {
        return false;
    }
    if dist <= 2.0 * tau_bar {
        return true;
    }
    let mut z = (&a.center + &b.center) * 0.5;
    for _ in 0..iters {
        let pa = project_onto(a, &z, tau_bar);
        let pb = project_onto(b, &pa, tau_bar);
        if (&pa - &pb).norm() < 1e-9 * tau_bar {
            return true;
        }
        z = pb;
    }
    false
}

/// Checks the packet conditions with the default options.
pub fn validate_packet(
    packet: &CylinderPacket,
    reach: f64,
    volume: f64,
) -> Result<PacketValidationReport, PcaError> {
    validate_packet_with(packet, reach, volume, ValidationOptions::default())
}

pub fn validate_packet_with(
    packet: &CylinderPacket,
    reach: f64,
    volume: f64,
    options: ValidationOptions,
) -> Result<PacketValidationReport, PcaError> {
    if !(reach > 0.0 && volume > 0.0) {
        return Err(PcaError::InvalidParameter(
            "reach and volume must be positive".into(),
        ));
    }
    let tau_bar = packet.tau_bar();
    let cyl = packet.cylinders();
    let d = cyl[0].basis.ncols();
    let df = d as f64;

    let s = if options.count_against_reach { reach } else { tau_bar };
    let count_limit = options.kappa * volume / s.powi(d as i32);
    let count_bound = ConditionResult::from_slacks([count_limit - cyl.len() as f64], count_limit);

    // intersecting ordered pairs (i, j), i ≠ j
    let tree = KdTree::build(&packet.centers());
    let partners: Vec<Vec<usize>> = cyl
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let center: Vec<f64> = a.center.iter().copied().collect();
            tree.within_radius(&center, 2.0 * 2f64.sqrt() * tau_bar)
                .into_iter()
                .filter(|&j| {
                    j != i && cylinders_intersect(a, &cyl[j], tau_bar, options.intersection_iters)
                })
                .collect()
        })
        .collect();

    let tangential = |i: usize, j: usize| cyl[i].basis.transpose() * (&cyl[j].center - &cyl[i].center);

    let sep_bound = tau_bar / 3.0;
    let center_separation = ConditionResult::from_slacks(
        partners
            .iter()
            .enumerate()
            .flat_map(|(i, js)| js.iter().map(move |&j| (i, j)))
            .map(|(i, j)| tangential(i, j).norm() - sep_bound),
        sep_bound,
    );

    let grid = cross_section_grid(d, tau_bar, options.grid_divisions);
    let reach_limit = tau_bar / 2.0 + tau_bar * df.sqrt() / options.grid_divisions as f64;
    let net_coverage = ConditionResult::from_slacks(
        partners.iter().enumerate().map(|(i, js)| {
            let mut anchors = vec![0.0; d];
            for &j in js {
                anchors.extend(tangential(i, j).iter());
            }
            let anchors = KdTree::build(&PointCloud::from_flat(d, anchors).expect("finite anchors"));
            grid.iter()
                .map(|g| reach_limit - anchors.nearest(g.as_slice()).expect("nonempty").1)
                .fold(f64::INFINITY, f64::min)
        }),
        reach_limit,
    );

    let rot_bound = 24.0 * df.sqrt() * tau_bar / reach;
    let rotation_bound = ConditionResult::from_slacks(
        partners
            .iter()
            .enumerate()
            .flat_map(|(i, js)| js.iter().filter(move |&&j| j > i).map(move |&j| (i, j)))
            .map(|(i, j)| rot_bound - largest_principal_angle_sine(&cyl[i].basis, &cyl[j].basis)),
        rot_bound,
    );

    let shift_bound = 4.0 * tau_bar * tau_bar / reach;
    let translation_bound = ConditionResult::from_slacks(
        partners
            .iter()
            .enumerate()
            .flat_map(|(i, js)| js.iter().map(move |&j| (i, j)))
            .map(|(i, j)| {
                let u = &cyl[j].center - &cyl[i].center;
                let normal = &u - &cyl[i].basis * (cyl[i].basis.transpose() * &u);
                shift_bound - normal.norm()
            }),
        shift_bound,
    );

    Ok(PacketValidationReport {
        count_bound,
        center_separation,
        net_coverage,
        rotation_bound,
        translation_bound,
    })
}

/// Points of the grid `(τ̄/k)·Z^d` inside the closed d-ball of radius τ̄.
fn cross_section_grid(d: usize, tau_bar: f64, k: usize) -> Vec<DVector<f64>> {
    let h = tau_bar / k as f64;
    let side = 2 * k + 1;
    let total = side.pow(d as u32);
    (0..total)
        .filter_map(|mut code| {
            let mut p = DVector::zeros(d);
            for c in 0..d {
                p[c] = ((code % side) as f64 - k as f64) * h;
                code /= side;
            }
            (p.norm() <= tau_bar * (1.0 + 1e-12)).then_some(p)
        })
        .collect()
}
