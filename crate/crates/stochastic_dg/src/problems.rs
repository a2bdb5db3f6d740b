//! Built-in benchmark problems.
//!
//! Four convection-diffusion setups on the square [-1,1]^2, each randomizing
//! a different part of the data through a shared truncated KL field:
//! a random diffusivity with a boundary layer, a random convectivity with a
//! smooth source, both coefficients driven by one field, and a diffusivity
//! with a deterministic jump partition. They double as regression anchors:
//! the adaptive loop is expected to chase the boundary layers on the first
//! three and the jump interface on the fourth.

use crate::assembly::ProblemData;
use crate::error::{Error, Result};
use crate::mesh::TriangleMesh;
use crate::random_field::{build_2d_kl, CovarianceSpec, KLField, PiecewiseConst};

/// KL truncation budget for the built-in problems. This caps the stochastic
/// dimension the adaptive loop can enrich into; the dimension actually
/// assembled follows the active index set.
pub const KL_MODES: usize = 12;

/// Width of the band over which the side-wall Dirichlet values blend into
/// the lid value. The raw wall data (walls at -1/+1, lid at 0) is
/// discontinuous at the two upper corners; data that rough has unbounded
/// energy, so no refinement strategy can drive an energy-reliable estimator
/// to zero against it. Blending over a fixed band restores bounded energy
/// while keeping the layer structure. The band edge sits on a vertex of
/// every mesh descended from the 8x8 start, so the imposed vertex
/// interpolant reproduces this data exactly at every refinement level.
pub const WALL_BLEND: f64 = 0.25;

/// Benchmark selector, named after what is random.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExampleId {
    /// Random diffusivity, vertical wind, wall-driven layer solution.
    RandDiff,
    /// Random convectivity, constant source, homogeneous walls.
    RandConv,
    /// Diffusivity and convectivity driven by the same field.
    RandBoth,
    /// Random diffusivity about a piecewise-constant jump mean.
    Jump,
}

impl ExampleId {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "rand_diff" => Ok(ExampleId::RandDiff),
            "rand_conv" => Ok(ExampleId::RandConv),
            "rand_both" => Ok(ExampleId::RandBoth),
            "jump" => Ok(ExampleId::Jump),
            _ => Err(Error::UnknownExample(format!(
                "{s} (expected rand_diff, rand_conv, rand_both, or jump)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ExampleId::RandDiff => "rand_diff",
            ExampleId::RandConv => "rand_conv",
            ExampleId::RandBoth => "rand_both",
            ExampleId::Jump => "jump",
        }
    }
}

/// Jump-mean partition for [`ExampleId::Jump`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Partition {
    /// High-diffusivity region fills the left half of the square.
    Half,
    /// Two high-diffusivity squares in the lower half.
    Rectangle,
}

impl Partition {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "half" => Ok(Partition::Half),
            "rectangle" => Ok(Partition::Rectangle),
            _ => Err(Error::UnknownExample(format!(
                "partition {s} (expected half or rectangle)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Partition::Half => "half",
            Partition::Rectangle => "rectangle",
        }
    }
}

/// A benchmark: coefficient data plus its domain and starting resolution.
#[derive(Clone)]
pub struct BenchmarkProblem {
    pub data: ProblemData,
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
    /// Initial divisions per axis (8 gives the 128-triangle start).
    pub n0: usize,
}

impl BenchmarkProblem {
    pub fn initial_mesh(&self) -> Result<TriangleMesh> {
        TriangleMesh::rectangle(self.x_range, self.y_range, self.n0, self.n0)
    }
}

/// Wall data shared by the layer-driven benchmarks: x1 along the bottom,
/// -1/+1 on the side walls, 0 on the lid, side walls blending to the lid
/// value over the top [`WALL_BLEND`] band.
fn wall_data(x: [f64; 2]) -> f64 {
    let eps = 1e-12;
    if (x[1] + 1.0).abs() < eps {
        x[0]
    } else if (x[0] - 1.0).abs() < eps {
        ((1.0 - x[1]) / WALL_BLEND).min(1.0)
    } else if (x[0] + 1.0).abs() < eps {
        -((1.0 - x[1]) / WALL_BLEND).min(1.0)
    } else {
        0.0
    }
}

fn zero(_x: [f64; 2]) -> f64 {
    0.0
}

fn half_source(_x: [f64; 2]) -> f64 {
    0.5
}

/// Build one of the four benchmarks.
///
/// `nu` scales the diffusivity (`a = nu * z`, or `a = nu` where the
/// diffusivity is deterministic), `ell` and `kappa` are the correlation
/// length and fluctuation amplitude of the underlying field, and `sigma` is
/// the interior penalty parameter. A deterministic prefactor of a random
/// coefficient folds into the KL mean and amplitude, so the two random
/// coefficients of `rand_both` share eigenmodes and stochastic variables
/// while carrying different scales.
pub fn build_problem(
    id: ExampleId,
    partition: Partition,
    nu: f64,
    ell: f64,
    kappa: f64,
    sigma: f64,
) -> Result<BenchmarkProblem> {
    if nu <= 0.0 {
        return Err(Error::Contract(format!("nu must be positive, got {nu}")));
    }
    let xr = [-1.0, 1.0];
    let yr = [-1.0, 1.0];
    let spec = CovarianceSpec::new(ell, 1.0, xr, yr);
    let unit_mean = PiecewiseConst::constant(1.0);

    let data = match id {
        ExampleId::RandDiff => ProblemData {
            a: build_2d_kl(&spec, PiecewiseConst::constant(nu), nu * kappa, KL_MODES),
            b: [
                KLField::deterministic(PiecewiseConst::constant(0.0)),
                KLField::deterministic(PiecewiseConst::constant(1.0)),
            ],
            f: zero,
            u_d: wall_data,
            sigma,
        },
        ExampleId::RandConv => {
            let z = build_2d_kl(&spec, unit_mean, kappa, KL_MODES);
            ProblemData {
                a: KLField::deterministic(PiecewiseConst::constant(nu)),
                b: [z.clone(), z],
                f: half_source,
                u_d: zero,
                sigma,
            }
        }
        ExampleId::RandBoth => {
            let z = build_2d_kl(&spec, unit_mean, kappa, KL_MODES);
            ProblemData {
                a: build_2d_kl(&spec, PiecewiseConst::constant(nu), nu * kappa, KL_MODES),
                b: [z.clone(), z],
                f: zero,
                u_d: wall_data,
                sigma,
            }
        }
        ExampleId::Jump => {
            let mean = match partition {
                Partition::Half => PiecewiseConst {
                    default: 1.0,
                    patches: vec![([-1.0, 0.0], [-1.0, 1.0], 1e4)],
                },
                Partition::Rectangle => PiecewiseConst {
                    default: 1.0,
                    patches: vec![
                        ([-0.75, -1.0 / 3.0], [-0.75, -1.0 / 3.0], 1e4),
                        ([1.0 / 3.0, 0.75], [-0.75, -1.0 / 3.0], 1e4),
                    ],
                },
            };
            ProblemData {
                a: build_2d_kl(&spec, mean.scaled(nu), nu * kappa, KL_MODES),
                b: [
                    KLField::deterministic(PiecewiseConst::constant(0.0)),
                    KLField::deterministic(PiecewiseConst::constant(1.0)),
                ],
                f: zero,
                u_d: wall_data,
                sigma,
            }
        }
    };

    Ok(BenchmarkProblem {
        data,
        x_range: xr,
        y_range: yr,
        n0: 8,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_round_trip() {
        for id in [
            ExampleId::RandDiff,
            ExampleId::RandConv,
            ExampleId::RandBoth,
            ExampleId::Jump,
        ] {
            assert_eq!(ExampleId::parse(id.as_str()).unwrap(), id);
        }
        assert!(ExampleId::parse("boundary_layer").is_err());
        for p in [Partition::Half, Partition::Rectangle] {
            assert_eq!(Partition::parse(p.as_str()).unwrap(), p);
        }
        assert!(Partition::parse("quarters").is_err());
    }

    #[test]
    fn diffusivity_mean_is_nu_times_unit_field() {
        let p = build_problem(
            ExampleId::RandDiff,
            Partition::Half,
            1.0,
            1.0,
            0.05,
            10.0,
        )
        .unwrap();
        assert_eq!(p.data.a.mean.eval([0.3, -0.4]), 1.0);
        assert_eq!(p.data.b[0].mean.eval([0.0, 0.0]), 0.0);
        assert_eq!(p.data.b[1].mean.eval([0.0, 0.0]), 1.0);
        assert_eq!((p.data.f)([0.2, 0.2]), 0.0);
        assert_eq!(p.initial_mesh().unwrap().n_triangles(), 128);
    }

    #[test]
    fn convectivity_example_has_constant_source_and_homogeneous_walls() {
        let p = build_problem(
            ExampleId::RandConv,
            Partition::Half,
            1e-2,
            1.0,
            0.05,
            10.0,
        )
        .unwrap();
        assert_eq!((p.data.f)([-0.9, 0.9]), 0.5);
        assert_eq!((p.data.f)([0.0, 0.0]), 0.5);
        assert_eq!((p.data.u_d)([1.0, 0.3]), 0.0);
        assert_eq!(p.data.a.mean.eval([0.0, 0.0]), 1e-2);
        assert_eq!(p.data.a.kappa, 0.0);
        // both wind components carry the same modes and mean
        assert_eq!(p.data.b[0].mean.eval([0.1, 0.1]), 1.0);
        assert_eq!(p.data.b[0].modes.len(), p.data.b[1].modes.len());
        assert!(p.data.b[0].kappa > 0.0);
    }

    #[test]
    fn shared_field_scales_differ_between_coefficients() {
        let nu = 1e-2;
        let kappa = 0.05;
        let p = build_problem(ExampleId::RandBoth, Partition::Half, nu, 1.0, kappa, 10.0)
            .unwrap();
        // a = nu * z and b = (z, z): same eigenmodes, amplitudes in ratio nu
        assert_eq!(p.data.a.modes.len(), p.data.b[0].modes.len());
        assert!((p.data.a.kappa - nu * kappa).abs() < 1e-15);
        assert!((p.data.b[0].kappa - kappa).abs() < 1e-15);
        let x = [0.37, -0.21];
        let am = p.data.a_mode(2, x);
        let bm = p.data.b_mode(2, x);
        assert!((am - nu * bm[0]).abs() < 1e-14 * bm[0].abs());
        assert_eq!(bm[0], bm[1]);
    }

    #[test]
    fn jump_means_follow_the_partitions() {
        let nu = 1e-2;
        let p = build_problem(ExampleId::Jump, Partition::Half, nu, 1.0, 0.05, 10.0)
            .unwrap();
        assert_eq!(p.data.a.mean.eval([-0.5, 0.0]), nu * 1e4);
        assert_eq!(p.data.a.mean.eval([0.5, 0.0]), nu);

        let p = build_problem(ExampleId::Jump, Partition::Rectangle, nu, 1.0, 0.05, 10.0)
            .unwrap();
        assert_eq!(p.data.a.mean.eval([-0.5, -0.5]), nu * 1e4);
        assert_eq!(p.data.a.mean.eval([0.5, -0.5]), nu * 1e4);
        assert_eq!(p.data.a.mean.eval([0.0, -0.5]), nu);
        assert_eq!(p.data.a.mean.eval([-0.5, 0.5]), nu);
    }

    #[test]
    fn wall_data_is_continuous_around_the_top_corners() {
        // approach (-1, 1) along the wall and along the lid
        let w = (wall_data)([-1.0, 1.0 - 1e-9]);
        assert!(w.abs() < 1e-8);
        assert_eq!(wall_data([-1.0 + 1e-9, 1.0]), 0.0);
        // band interior values interpolate linearly
        assert!((wall_data([-1.0, 0.875]) + 0.5).abs() < 1e-12);
        assert!((wall_data([1.0, 0.875]) - 0.5).abs() < 1e-12);
        // below the band the walls hold their values
        assert_eq!(wall_data([-1.0, 0.75]), -1.0);
        assert_eq!(wall_data([1.0, 0.0]), 1.0);
        assert_eq!(wall_data([0.25, -1.0]), 0.25);
    }
}
