//! EPnP: pose from n ≥ 4 correspondences through four virtual control points.
//!
//! Every radar point is written as a barycentric combination of four control
//! points placed on the principal axes of the cloud. The camera-frame control
//! points lie in the null space of a `2n × 12` system built from the image
//! rays; their scale is fixed by preserving the inter-control-point
//! distances. Candidate solutions from null-space dimensions 1 through 4 are
//! polished by Gauss–Newton on the null-space coefficients, and the one with
//! the smallest reprojection error wins. The rigid transform is then
//! recovered by absolute orientation.

use nalgebra::{DMatrix, Matrix3, SMatrix, SVector, Vector3, Vector4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Correspondence, MIN_POINTS};
use crate::error::{Error, Result};
use crate::geometry::{orthonormalize, CameraIntrinsics, Pose};

/// Smallest admissible ratio between the minor and major principal
/// spreads of the point cloud.
const PLANARITY_RATIO: f64 = 1e-6;
const BETA_ITERATIONS: usize = 50;
const MULTI_STARTS: usize = 32;
const MULTI_START_SEED: u64 = 0x45_50_6e_50;

type Betas = Vector4<f64>;
/// Null-space basis: `basis[k]` holds the 4 camera control points of vector k.
type Basis = [[Vector3<f64>; 4]; 4];

/// Pairs of control points, in the order used for the distance constraints.
const PAIRS: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];

pub fn solve_linear_init(corrs: &[Correspondence], k: &CameraIntrinsics) -> Result<Pose> {
    let n = corrs.len();
    if n < MIN_POINTS {
        return Err(Error::TooFewPoints {
            needed: MIN_POINTS,
            got: n,
        });
    }
    let world: Vec<Vector3<f64>> = corrs.iter().map(|c| *c.point().coords()).collect();
    let rays: Vec<Vector3<f64>> = corrs.iter().map(|c| k.unproject(c.pixel())).collect();

    let control = control_points(&world)?;
    let alphas = barycentric(&world, &control)?;
    let basis = null_space(&alphas, &rays)?;
    let (l6x10, rho) = distance_system(&basis, &control);

    let mut candidates = vec![
        Some(initial_betas_single(&basis, &control)),
        initial_betas_4(&l6x10, &rho),
        initial_betas_2(&l6x10, &rho),
        initial_betas_3(&l6x10, &rho),
    ];
    if n < 6 {
        // With fewer than six points the null space is genuinely
        // multi-dimensional and the linearized starts often miss.
        candidates.extend(multi_start_betas(&l6x10, &rho));
    }

    let mut best: Option<(f64, Pose)> = None;
    for betas in candidates.into_iter().flatten() {
        let betas = gauss_newton(&l6x10, &rho, betas);
        let Some(pose) = pose_from_betas(&betas, &basis, &alphas, &world) else {
            continue;
        };
        let err = reprojection_error(&pose, &world, &rays);
        if err.is_finite() && best.as_ref().is_none_or(|(e, _)| err < *e) {
            best = Some((err, pose));
        }
    }
    best.map(|(_, pose)| pose)
        .ok_or_else(|| Error::Degenerate("no EPnP candidate produced a valid pose".into()))
}

fn control_points(world: &[Vector3<f64>]) -> Result<[Vector3<f64>; 4]> {
    let n = world.len() as f64;
    let centroid = world.iter().sum::<Vector3<f64>>() / n;
    let cov = world
        .iter()
        .map(|p| (p - centroid) * (p - centroid).transpose())
        .sum::<Matrix3<f64>>()
        / n;
    let eig = cov.symmetric_eigen();
    let spreads = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let major = spreads.max();
    if major == 0.0 || spreads.min() <= PLANARITY_RATIO * major {
        return Err(Error::Degenerate(format!(
            "radar points are collinear or coplanar (principal spreads {:?})",
            spreads.as_slice()
        )));
    }
    let mut control = [centroid; 4];
    for j in 0..3 {
        control[j + 1] = centroid + eig.eigenvectors.column(j) * spreads[j];
    }
    Ok(control)
}

fn barycentric(world: &[Vector3<f64>], control: &[Vector3<f64>; 4]) -> Result<Vec<Vector4<f64>>> {
    let frame = Matrix3::from_columns(&[
        control[1] - control[0],
        control[2] - control[0],
        control[3] - control[0],
    ]);
    let inv = frame
        .try_inverse()
        .ok_or_else(|| Error::Degenerate("singular control-point frame".into()))?;
    Ok(world
        .iter()
        .map(|p| {
            let c = inv * (p - control[0]);
            Vector4::new(1.0 - c.x - c.y - c.z, c.x, c.y, c.z)
        })
        .collect())
}

/// The four right singular vectors of `M` with the smallest singular values,
/// smallest first.
fn null_space(alphas: &[Vector4<f64>], rays: &[Vector3<f64>]) -> Result<Basis> {
    let n = alphas.len();
    let mut m = DMatrix::<f64>::zeros(2 * n.max(6), 12);
    for (i, (a, q)) in alphas.iter().zip(rays).enumerate() {
        for j in 0..4 {
            m[(2 * i, 3 * j)] = a[j];
            m[(2 * i, 3 * j + 2)] = -q.x * a[j];
            m[(2 * i + 1, 3 * j + 1)] = a[j];
            m[(2 * i + 1, 3 * j + 2)] = -q.y * a[j];
        }
    }
    let svd = m.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::Degenerate("SVD of the EPnP system failed".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]));

    let mut basis: Basis = [[Vector3::zeros(); 4]; 4];
    for (k, &row) in order.iter().take(4).enumerate() {
        for j in 0..4 {
            basis[k][j] = Vector3::new(
                v_t[(row, 3 * j)],
                v_t[(row, 3 * j + 1)],
                v_t[(row, 3 * j + 2)],
            );
        }
    }
    Ok(basis)
}

/// Rows: one per control-point pair. Columns: the 10 products `β_a β_b`
/// ordered `11, 12, 22, 13, 23, 33, 14, 24, 34, 44`.
fn distance_system(
    basis: &Basis,
    control: &[Vector3<f64>; 4],
) -> (SMatrix<f64, 6, 10>, SVector<f64, 6>) {
    let mut l = SMatrix::<f64, 6, 10>::zeros();
    let mut rho = SVector::<f64, 6>::zeros();
    for (row, &(a, b)) in PAIRS.iter().enumerate() {
        let d: [Vector3<f64>; 4] = std::array::from_fn(|k| basis[k][a] - basis[k][b]);
        let entries = [
            d[0].dot(&d[0]),
            2.0 * d[0].dot(&d[1]),
            d[1].dot(&d[1]),
            2.0 * d[0].dot(&d[2]),
            2.0 * d[1].dot(&d[2]),
            d[2].dot(&d[2]),
            2.0 * d[0].dot(&d[3]),
            2.0 * d[1].dot(&d[3]),
            2.0 * d[2].dot(&d[3]),
            d[3].dot(&d[3]),
        ];
        for (col, v) in entries.into_iter().enumerate() {
            l[(row, col)] = v;
        }
        rho[row] = (control[a] - control[b]).norm_squared();
    }
    (l, rho)
}

/// One-dimensional null space: the scale that best matches distances.
fn initial_betas_single(basis: &Basis, control: &[Vector3<f64>; 4]) -> Betas {
    let (mut num, mut den) = (0.0, 0.0);
    for &(a, b) in &PAIRS {
        let dc = (basis[0][a] - basis[0][b]).norm();
        let dw = (control[a] - control[b]).norm();
        num += dc * dw;
        den += dc * dc;
    }
    Betas::new(num / den, 0.0, 0.0, 0.0)
}

fn least_squares<const C: usize>(
    a: &SMatrix<f64, 6, C>,
    b: &SVector<f64, 6>,
) -> Option<SVector<f64, C>> {
    let a = DMatrix::from_column_slice(6, C, a.as_slice());
    let b = DMatrix::from_column_slice(6, 1, b.as_slice());
    let x = a.svd(true, true).solve(&b, 1e-12).ok()?;
    Some(SVector::<f64, C>::from_column_slice(x.as_slice()))
}

/// Linearized solution over `β11, β12, β13, β14`.
fn initial_betas_4(l: &SMatrix<f64, 6, 10>, rho: &SVector<f64, 6>) -> Option<Betas> {
    let sub =
        SMatrix::<f64, 6, 4>::from_columns(&[l.column(0), l.column(1), l.column(3), l.column(6)]);
    let b = least_squares(&sub, rho)?;
    let sign = if b[0] < 0.0 { -1.0 } else { 1.0 };
    let b1 = (sign * b[0]).sqrt();
    if b1 == 0.0 {
        return None;
    }
    Some(Betas::new(
        b1,
        sign * b[1] / b1,
        sign * b[2] / b1,
        sign * b[3] / b1,
    ))
}

/// Linearized solution over `β11, β12, β22`.
fn initial_betas_2(l: &SMatrix<f64, 6, 10>, rho: &SVector<f64, 6>) -> Option<Betas> {
    let sub = SMatrix::<f64, 6, 3>::from_columns(&[l.column(0), l.column(1), l.column(2)]);
    let b = least_squares(&sub, rho)?;
    let sign = if b[0] < 0.0 { -1.0 } else { 1.0 };
    let b1 = (sign * b[0]).sqrt();
    let b2 = (sign * b[2]).max(0.0).sqrt();
    let b2 = if b[1] * sign < 0.0 { -b2 } else { b2 };
    Some(Betas::new(b1, b2, 0.0, 0.0))
}

/// Linearized solution over `β11, β12, β22, β13, β23`.
fn initial_betas_3(l: &SMatrix<f64, 6, 10>, rho: &SVector<f64, 6>) -> Option<Betas> {
    let sub = SMatrix::<f64, 6, 5>::from_columns(&[
        l.column(0),
        l.column(1),
        l.column(2),
        l.column(3),
        l.column(4),
    ]);
    let b = least_squares(&sub, rho)?;
    let sign = if b[0] < 0.0 { -1.0 } else { 1.0 };
    let b1 = (sign * b[0]).sqrt();
    if b1 == 0.0 {
        return None;
    }
    let b2 = (sign * b[2]).max(0.0).sqrt();
    let b2 = if b[1] * sign < 0.0 { -b2 } else { b2 };
    Some(Betas::new(b1, b2, sign * b[3] / b1, 0.0))
}

/// Starts along fixed directions of β-space, each scaled to best match the
/// control-point distances.
fn multi_start_betas(l: &SMatrix<f64, 6, 10>, rho: &SVector<f64, 6>) -> Vec<Option<Betas>> {
    let mut rng = ChaCha8Rng::seed_from_u64(MULTI_START_SEED);
    (0..MULTI_STARTS)
        .map(|_| {
            let dir = Betas::from_fn(|_, _| StandardNormal.sample(&mut rng)).normalize();
            let lp = l * products(&dir);
            let scale2 = lp.dot(rho) / lp.norm_squared();
            (scale2 > 0.0).then(|| dir * scale2.sqrt())
        })
        .collect()
}

fn products(b: &Betas) -> SVector<f64, 10> {
    SVector::<f64, 10>::from_column_slice(&[
        b[0] * b[0],
        b[0] * b[1],
        b[1] * b[1],
        b[0] * b[2],
        b[1] * b[2],
        b[2] * b[2],
        b[0] * b[3],
        b[1] * b[3],
        b[2] * b[3],
        b[3] * b[3],
    ])
}

/// Damped Gauss–Newton on `Σ (L · products(β) - ρ)²`.
fn gauss_newton(l: &SMatrix<f64, 6, 10>, rho: &SVector<f64, 6>, mut betas: Betas) -> Betas {
    let residual = |b: &Betas| l * products(b) - rho;
    let mut err = residual(&betas).norm_squared();
    let mut lambda = 1e-6;
    for _ in 0..BETA_ITERATIONS {
        let b = betas;
        let mut jac = SMatrix::<f64, 6, 4>::zeros();
        for row in 0..6 {
            let c = |k: usize| l[(row, k)];
            jac[(row, 0)] = 2.0 * c(0) * b[0] + c(1) * b[1] + c(3) * b[2] + c(6) * b[3];
            jac[(row, 1)] = c(1) * b[0] + 2.0 * c(2) * b[1] + c(4) * b[2] + c(7) * b[3];
            jac[(row, 2)] = c(3) * b[0] + c(4) * b[1] + 2.0 * c(5) * b[2] + c(8) * b[3];
            jac[(row, 3)] = c(6) * b[0] + c(7) * b[1] + c(8) * b[2] + 2.0 * c(9) * b[3];
        }
        let h = jac.transpose() * jac;
        let g = jac.transpose() * residual(&betas);
        let mut accepted = false;
        while lambda < 1e10 {
            let mut damped = h;
            for k in 0..4 {
                damped[(k, k)] += lambda * h[(k, k)].max(1e-12);
            }
            let Some(step) = damped.cholesky().map(|c| c.solve(&(-g))) else {
                lambda *= 10.0;
                continue;
            };
            let next = betas + step;
            let next_err = residual(&next).norm_squared();
            if next_err < err {
                betas = next;
                let done = err - next_err <= 1e-15 * err;
                err = next_err;
                lambda = (lambda / 10.0).max(1e-12);
                accepted = !done;
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            break;
        }
    }
    betas
}

fn pose_from_betas(
    betas: &Betas,
    basis: &Basis,
    alphas: &[Vector4<f64>],
    world: &[Vector3<f64>],
) -> Option<Pose> {
    let control: [Vector3<f64>; 4] =
        std::array::from_fn(|j| (0..4).map(|k| basis[k][j] * betas[k]).sum());
    let mut camera: Vec<Vector3<f64>> = alphas
        .iter()
        .map(|a| (0..4).map(|j| control[j] * a[j]).sum())
        .collect();
    if camera.iter().map(|p| p.z).sum::<f64>() < 0.0 {
        camera.iter_mut().for_each(|p| *p = -*p);
    }
    absolute_orientation(world, &camera)
}

/// Least-squares rigid transform with `R src + t ≈ dst`.
pub(crate) fn absolute_orientation(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Option<Pose> {
    let n = src.len() as f64;
    let cs = src.iter().sum::<Vector3<f64>>() / n;
    let cd = dst.iter().sum::<Vector3<f64>>() / n;
    let h = src
        .iter()
        .zip(dst)
        .map(|(s, d)| (d - cd) * (s - cs).transpose())
        .sum::<Matrix3<f64>>();
    if !h.iter().all(|v| v.is_finite()) || h.norm() == 0.0 {
        return None;
    }
    let rotation = orthonormalize(&h);
    let translation = cd - rotation * cs;
    Some(Pose::from_parts(rotation, translation))
}

fn reprojection_error(pose: &Pose, world: &[Vector3<f64>], rays: &[Vector3<f64>]) -> f64 {
    world
        .iter()
        .zip(rays)
        .map(|(p, q)| {
            let c = pose.transform(p);
            if c.z <= 0.0 {
                return f64::INFINITY;
            }
            ((c.x / c.z - q.x).powi(2) + (c.y / c.z - q.y).powi(2)).sqrt()
        })
        .sum::<f64>()
        / world.len() as f64
}
