//! Periodic cell problems and the effective tensor.
//!
//! For each direction `k` the corrector `w_k` solves
//! `-div(grad w_k + e_k) = 0` in the fluid part of the unit cell with zero
//! normal flux of `grad w_k + e_k` on the inclusion and periodic wrap on the
//! cell boundary. Two-point fluxes are used; fluid-solid faces are simply
//! left out of the operator, which realizes the Neumann condition.

use serde::Serialize;

use crate::error::Result;
use crate::geometry::{CellGeometry, InteriorFace};
use crate::linalg::{conjugate_gradient, SolveStats, SolverOptions, SparseMatrix};
use crate::tensor::Tensor;

pub const DEFAULT_TOL: f64 = 1e-10;

/// Corrector for one direction.
#[derive(Clone, Debug)]
pub struct CorrectorField {
    pub direction: usize,
    /// Values indexed by unit-cell lattice cell; solid cells hold 0.
    pub values: Vec<f64>,
    pub stats: SolveStats,
}

/// Homogenized tensor and the data it was computed from.
#[derive(Clone, Debug)]
pub struct EffectiveTensor {
    /// Mean-flux tensor, column k = mean of `grad w_k + e_k` over the fluid.
    pub a_hom: Tensor,
    /// Energy form `(1/|Y^f|) int (grad w_j + e_j).(grad w_k + e_k)`.
    pub a_energy: Tensor,
    pub porosity: f64,
    pub resolution: usize,
    pub correctors: Vec<CorrectorField>,
    /// `corrector_residual` of each corrector.
    pub residuals: Vec<f64>,
}

impl EffectiveTensor {
    /// Tensor used by the homogenized solver: the symmetric part of `a_hom`.
    pub fn macro_tensor(&self) -> Tensor {
        self.a_hom.symmetrized()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.a_hom.eigenvalues()[0]
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CellReport {
    pub resolution: usize,
    pub porosity: f64,
    pub a_hom: Vec<Vec<f64>>,
    pub a_energy: Vec<Vec<f64>>,
    pub residuals: Vec<f64>,
    pub iterations: Vec<usize>,
    pub min_eigenvalue: f64,
    pub staircase_perimeter: f64,
}

impl CellReport {
    pub fn new(cell: &CellGeometry, t: &EffectiveTensor) -> Self {
        CellReport {
            resolution: t.resolution,
            porosity: t.porosity,
            a_hom: t.a_hom.rows(),
            a_energy: t.a_energy.rows(),
            residuals: t.residuals.clone(),
            iterations: t.correctors.iter().map(|c| c.stats.iterations).collect(),
            min_eigenvalue: t.min_eigenvalue(),
            staircase_perimeter: cell.staircase_perimeter(),
        }
    }
}

/// Discrete periodic operator on the fluid cells of the unit cell.
pub struct CellOperator<'a> {
    cell: &'a CellGeometry,
    cell_of_fluid: Vec<usize>,
    /// `hi` is the periodic `+axis` neighbor of `lo` (fluid indices).
    faces: Vec<InteriorFace>,
    matrix: SparseMatrix,
}

impl<'a> CellOperator<'a> {
    pub fn new(cell: &'a CellGeometry) -> Self {
        let lat = cell.lattice();
        let mut fluid_of_cell = vec![usize::MAX; lat.len()];
        let mut cell_of_fluid = Vec::with_capacity(cell.fluid_count);
        for (idx, &f) in cell.fluid_mask.iter().enumerate() {
            if f {
                fluid_of_cell[idx] = cell_of_fluid.len();
                cell_of_fluid.push(idx);
            }
        }
        let mut faces = Vec::new();
        for &idx in &cell_of_fluid {
            for axis in 0..cell.dim {
                let nb = lat.neighbor(idx, axis, 1, true).unwrap();
                if cell.fluid_mask[nb] {
                    faces.push(InteriorFace {
                        lo: fluid_of_cell[idx],
                        hi: fluid_of_cell[nb],
                        axis,
                    });
                }
            }
        }
        // transmissibility area/h = h^(dim-2)
        let trans = cell.spacing().powi(cell.dim as i32 - 2);
        let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); cell_of_fluid.len()];
        for f in &faces {
            adjacency[f.lo].push(f.hi);
            adjacency[f.hi].push(f.lo);
        }
        let matrix = SparseMatrix::from_rows(cell_of_fluid.len(), |row, push| {
            for &nb in &adjacency[row] {
                push(row, trans);
                push(nb, -trans);
            }
        });
        CellOperator {
            cell,
            cell_of_fluid,
            faces,
            matrix,
        }
    }

    pub fn unknowns(&self) -> usize {
        self.cell_of_fluid.len()
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.matrix
    }

    /// Net outflow of the constant field `e_k` through fluid-fluid faces.
    pub fn rhs(&self, k: usize) -> Vec<f64> {
        let area = self.cell.facet_area();
        let mut b = vec![0.0; self.unknowns()];
        for f in self.faces.iter().filter(|f| f.axis == k) {
            b[f.lo] += area;
            b[f.hi] -= area;
        }
        b
    }

    fn scatter(&self, fluid_values: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cell.fluid_mask.len()];
        for (f, &idx) in self.cell_of_fluid.iter().enumerate() {
            out[idx] = fluid_values[f];
        }
        out
    }

    fn gather(&self, values: &[f64]) -> Vec<f64> {
        self.cell_of_fluid.iter().map(|&idx| values[idx]).collect()
    }

    /// Solves for `w_k`; on failure the error carries the final residual.
    pub fn solve(&self, k: usize, opts: &SolverOptions) -> Result<CorrectorField> {
        let b = self.rhs(k);
        let mut w = vec![0.0; self.unknowns()];
        let stats = conjugate_gradient(&self.matrix, &b, &mut w, opts)?;
        Ok(CorrectorField {
            direction: k,
            values: self.scatter(&w),
            stats,
        })
    }

    /// Like `solve` but returns whatever iterate the solver reached.
    pub fn solve_partial(&self, k: usize, opts: &SolverOptions) -> CorrectorField {
        let b = self.rhs(k);
        let mut w = vec![0.0; self.unknowns()];
        let stats = match conjugate_gradient(&self.matrix, &b, &mut w, opts) {
            Ok(s) => s,
            Err(e) => SolveStats {
                iterations: opts.max_iter,
                residual: e.residual(),
            },
        };
        CorrectorField {
            direction: k,
            values: self.scatter(&w),
            stats,
        }
    }

    /// Normal component of `grad w_k + e_k` on each periodic fluid face.
    fn face_gradients(&self, field: &CorrectorField) -> Vec<f64> {
        let w = self.gather(&field.values);
        let h = self.cell.spacing();
        self.faces
            .iter()
            .map(|f| {
                let unit = if f.axis == field.direction { 1.0 } else { 0.0 };
                (w[f.hi] - w[f.lo]) / h + unit
            })
            .collect()
    }

    /// Max over fluid cells of the net outflow of `grad w_k + e_k`,
    /// divided by the facet area.
    pub fn residual(&self, field: &CorrectorField) -> f64 {
        let g = self.face_gradients(field);
        let mut net = vec![0.0; self.unknowns()];
        for (f, gf) in self.faces.iter().zip(&g) {
            net[f.lo] += gf;
            net[f.hi] -= gf;
        }
        net.iter().fold(0.0, |m: f64, v| m.max(v.abs()))
    }

    pub fn effective_tensor(&self, correctors: Vec<CorrectorField>) -> EffectiveTensor {
        let dim = self.cell.dim;
        let cell_vol = self.cell.spacing().powi(dim as i32);
        let por = self.cell.porosity;
        let grads: Vec<Vec<f64>> = correctors.iter().map(|c| self.face_gradients(c)).collect();
        let mut a_hom = Tensor::zeros(dim);
        let mut a_energy = Tensor::zeros(dim);
        for k in 0..dim {
            for (face, g) in self.faces.iter().zip(&grads[k]) {
                a_hom.m[face.axis][k] += g * cell_vol;
            }
            for j in 0..dim {
                let s: f64 = grads[j].iter().zip(&grads[k]).map(|(a, b)| a * b).sum();
                a_energy.m[j][k] = s * cell_vol;
            }
        }
        for j in 0..dim {
            for k in 0..dim {
                a_hom.m[j][k] /= por;
                a_energy.m[j][k] /= por;
            }
        }
        let residuals = correctors.iter().map(|c| self.residual(c)).collect();
        EffectiveTensor {
            a_hom,
            a_energy,
            porosity: por,
            resolution: self.cell.resolution,
            correctors,
            residuals,
        }
    }
}

fn default_options(n: usize, tol: f64) -> SolverOptions {
    SolverOptions::new(tol, SolverOptions::default_max_iter(n)).singular()
}

/// Solves the cell problem in direction `k` to relative residual `tol`.
pub fn solve_cell_problem(cell: &CellGeometry, k: usize, tol: f64) -> Result<CorrectorField> {
    let op = CellOperator::new(cell);
    op.solve(k, &default_options(op.unknowns(), tol))
}

/// Correctors for every direction (solved concurrently) and the tensor.
pub fn compute_effective_tensor(cell: &CellGeometry, tol: f64) -> Result<EffectiveTensor> {
    let op = CellOperator::new(cell);
    let opts = default_options(op.unknowns(), tol);
    let results: Vec<Result<CorrectorField>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..cell.dim)
            .map(|k| {
                let op = &op;
                s.spawn(move || op.solve(k, &opts))
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let correctors = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(op.effective_tensor(correctors))
}

/// Max-norm of the discrete divergence of `grad w_k + e_k`.
pub fn corrector_residual(cell: &CellGeometry, field: &CorrectorField) -> f64 {
    CellOperator::new(cell).residual(field)
}

/// Mean of a corrector over the fluid cells.
pub fn fluid_mean(cell: &CellGeometry, field: &CorrectorField) -> f64 {
    field
        .values
        .iter()
        .zip(&cell.fluid_mask)
        .filter(|(_, &f)| f)
        .map(|(v, _)| v)
        .sum::<f64>()
        / cell.fluid_count as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::InclusionShape;

    fn disk_cell(res: usize) -> CellGeometry {
        CellGeometry::build(
            InclusionShape::Disk {
                center: vec![0.5, 0.5],
                radius: 0.25,
            },
            2,
            res,
        )
        .unwrap()
    }

    #[test]
    fn no_inclusion_gives_zero_corrector_and_identity() {
        let cell = CellGeometry::build(InclusionShape::None, 2, 32).unwrap();
        let w = solve_cell_problem(&cell, 0, 1e-10).unwrap();
        assert!(w.values.iter().all(|&v| v == 0.0));
        assert!(corrector_residual(&cell, &w) < 1e-12);
        let t = compute_effective_tensor(&cell, 1e-10).unwrap();
        assert_eq!(t.a_hom, Tensor::identity(2));
        assert_eq!(t.porosity, 1.0);
    }

    #[test]
    fn rhs_is_compatible() {
        let cell = disk_cell(48);
        let op = CellOperator::new(&cell);
        for k in 0..2 {
            let s: f64 = op.rhs(k).iter().sum();
            assert!(s.abs() <= 1e-12);
        }
        assert_eq!(op.matrix().asymmetry(), 0.0);
    }

    #[test]
    fn corrector_has_zero_mean() {
        let cell = disk_cell(32);
        let w = solve_cell_problem(&cell, 0, 1e-10).unwrap();
        assert!(fluid_mean(&cell, &w).abs() < 1e-12);
    }

    #[test]
    fn centered_disk_correctors_are_swapped_copies() {
        let res = 32;
        let cell = disk_cell(res);
        let w1 = solve_cell_problem(&cell, 0, 1e-12).unwrap();
        let w2 = solve_cell_problem(&cell, 1, 1e-12).unwrap();
        for j in 0..res {
            for i in 0..res {
                let a = w1.values[i + res * j];
                let b = w2.values[j + res * i];
                assert!((a - b).abs() < 1e-8, "({i},{j}) {a} vs {b}");
            }
        }
    }

    #[test]
    fn converged_residual_is_small_and_partial_is_large() {
        let cell = disk_cell(64);
        let w = solve_cell_problem(&cell, 0, 1e-10).unwrap();
        assert!(corrector_residual(&cell, &w) <= 1e-8);
        let op = CellOperator::new(&cell);
        let rough = op.solve_partial(0, &SolverOptions::new(1e-10, 1).singular());
        assert!(op.residual(&rough) > 1e-3);
    }

    #[test]
    fn square_inclusion_is_fourfold_symmetric() {
        let cell = CellGeometry::build(
            InclusionShape::Square {
                center: vec![0.5, 0.5],
                half_width: 0.25,
            },
            2,
            32,
        )
        .unwrap();
        let t = compute_effective_tensor(&cell, 1e-12).unwrap();
        assert!((t.a_hom.get(0, 0) - t.a_hom.get(1, 1)).abs() < 1e-10);
    }

    #[test]
    fn tensor_forms_agree_and_are_bounded() {
        let cell = disk_cell(64);
        let t = compute_effective_tensor(&cell, 1e-10).unwrap();
        for j in 0..2 {
            for k in 0..2 {
                let (a, e) = (t.a_hom.get(j, k), t.a_energy.get(j, k));
                assert!((a - e).abs() <= 1e-8 * e.abs().max(1.0), "{a} vs {e}");
            }
            assert!(t.a_hom.get(j, j) < 1.0 - 1e-4 && t.a_hom.get(j, j) > 0.0);
        }
        assert!(t.min_eigenvalue() > 0.0);
    }

    #[test]
    fn anisotropic_ellipse_orders_diagonal() {
        // elongated along y: blocks x-transport more
        let cell = CellGeometry::build(
            InclusionShape::SuperEllipse {
                center: vec![0.5, 0.5],
                semi_axes: vec![0.15, 0.35],
                exponent: 2.0,
            },
            2,
            40,
        )
        .unwrap();
        let t = compute_effective_tensor(&cell, 1e-10).unwrap();
        assert!(t.a_hom.get(0, 0) < t.a_hom.get(1, 1));
    }

    #[test]
    fn three_dimensional_cell_problem() {
        let cell = CellGeometry::build(
            InclusionShape::Disk {
                center: vec![0.5; 3],
                radius: 0.25,
            },
            3,
            12,
        )
        .unwrap();
        let t = compute_effective_tensor(&cell, 1e-10).unwrap();
        let ev = t.a_hom.eigenvalues();
        assert!(ev[0] > 0.0 && ev[2] < 1.0);
        assert!((t.a_hom.get(0, 0) - t.a_hom.get(2, 2)).abs() < 1e-8);
    }
}
