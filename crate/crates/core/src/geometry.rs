//! Periodic unit cell, perforated domain grid and boundary facet bookkeeping.
//!
//! The unit cell `Y = (0,1)^n` is resolved by `resolution^n` square cells; a
//! cell is solid when its center lies inside the inclusion. The perforated
//! domain `(0,1)^n` with period `1/m` tiles that mask `m^n` times, so every
//! facet of the fine grid is either an interior fluid-fluid face, a hole
//! facet (fluid next to solid) or an outer facet on the domain boundary.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported spatial dimension.
pub const MAX_DIM: usize = 3;

/// Solid inclusion inside the unit cell, in cell coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum InclusionShape {
    None,
    Disk {
        center: Vec<f64>,
        radius: f64,
    },
    Square {
        center: Vec<f64>,
        half_width: f64,
    },
    SuperEllipse {
        center: Vec<f64>,
        semi_axes: Vec<f64>,
        exponent: f64,
    },
}

impl InclusionShape {
    /// Dimension implied by the shape parameters (`None` for an empty inclusion).
    pub fn dimension(&self) -> Option<usize> {
        match self {
            InclusionShape::None => None,
            InclusionShape::Disk { center, .. }
            | InclusionShape::Square { center, .. }
            | InclusionShape::SuperEllipse { center, .. } => Some(center.len()),
        }
    }

    /// Whether `y` lies in the open solid set.
    pub fn contains(&self, y: &[f64]) -> bool {
        match self {
            InclusionShape::None => false,
            InclusionShape::Disk { center, radius } => {
                let r2: f64 = y.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum();
                r2 < radius * radius
            }
            InclusionShape::Square { center, half_width } => y
                .iter()
                .zip(center)
                .all(|(a, c)| (a - c).abs() < *half_width),
            InclusionShape::SuperEllipse {
                center,
                semi_axes,
                exponent,
            } => {
                let s: f64 = y
                    .iter()
                    .zip(center)
                    .zip(semi_axes)
                    .map(|((a, c), ax)| ((a - c) / ax).abs().powf(*exponent))
                    .sum();
                s < 1.0
            }
        }
    }

    /// Axis-aligned bounding box `(lo, hi)` of the solid part.
    pub fn bounding_box(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        match self {
            InclusionShape::None => None,
            InclusionShape::Disk { center, radius } => Some((
                center.iter().map(|c| c - radius).collect(),
                center.iter().map(|c| c + radius).collect(),
            )),
            InclusionShape::Square { center, half_width } => Some((
                center.iter().map(|c| c - half_width).collect(),
                center.iter().map(|c| c + half_width).collect(),
            )),
            InclusionShape::SuperEllipse {
                center, semi_axes, ..
            } => Some((
                center.iter().zip(semi_axes).map(|(c, a)| c - a).collect(),
                center.iter().zip(semi_axes).map(|(c, a)| c + a).collect(),
            )),
        }
    }

    /// Distance from the inclusion's bounding box to the cell boundary.
    pub fn margin(&self) -> f64 {
        match self.bounding_box() {
            None => 0.5,
            Some((lo, hi)) => lo
                .iter()
                .zip(&hi)
                .map(|(l, h)| l.min(1.0 - h))
                .fold(f64::INFINITY, f64::min),
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::Geometry(msg));
        if let Some(d) = self.dimension() {
            if d != dim {
                return bad(format!(
                    "inclusion has {d} center coordinates, expected {dim}"
                ));
            }
        }
        match self {
            InclusionShape::None => Ok(()),
            InclusionShape::Disk { radius, .. } if !(*radius > 0.0) => {
                bad(format!("disk radius must be positive, got {radius}"))
            }
            InclusionShape::Square { half_width, .. } if !(*half_width > 0.0) => bad(format!(
                "square half width must be positive, got {half_width}"
            )),
            InclusionShape::SuperEllipse {
                semi_axes,
                exponent,
                ..
            } => {
                if semi_axes.len() != dim || semi_axes.iter().any(|a| !(*a > 0.0)) {
                    return bad("super-ellipse needs one positive semi-axis per dimension".into());
                }
                if !(*exponent > 0.0) {
                    return bad(format!(
                        "super-ellipse exponent must be positive, got {exponent}"
                    ));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Row-major-in-reverse lattice of `n^dim` cells: axis 0 varies fastest.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Lattice {
    pub dim: usize,
    pub n: usize,
}

impl Lattice {
    pub fn new(dim: usize, n: usize) -> Self {
        Lattice { dim, n }
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.n.pow(axis as u32)
    }

    pub fn coords(&self, mut idx: usize) -> [usize; MAX_DIM] {
        let mut c = [0; MAX_DIM];
        for slot in c.iter_mut().take(self.dim) {
            *slot = idx % self.n;
            idx /= self.n;
        }
        c
    }

    pub fn index(&self, c: &[usize]) -> usize {
        c.iter()
            .take(self.dim)
            .rev()
            .fold(0, |acc, &ci| acc * self.n + ci)
    }

    /// Neighbor of `idx` one step along `axis` in direction `dir` (`+1`/`-1`).
    pub fn neighbor(&self, idx: usize, axis: usize, dir: i8, periodic: bool) -> Option<usize> {
        let c = self.coords(idx)[axis];
        let s = self.stride(axis);
        if dir > 0 {
            if c + 1 < self.n {
                Some(idx + s)
            } else if periodic {
                Some(idx + s - self.n * s)
            } else {
                None
            }
        } else if c > 0 {
            Some(idx - s)
        } else if periodic {
            Some(idx + (self.n - 1) * s)
        } else {
            None
        }
    }
}

/// Discretized unit cell.
#[derive(Clone, Debug)]
pub struct CellGeometry {
    /// `None` when the mask was supplied directly.
    pub shape: Option<InclusionShape>,
    pub dim: usize,
    pub resolution: usize,
    pub fluid_mask: Vec<bool>,
    pub fluid_count: usize,
    pub porosity: f64,
}

/// Hole facet of the unit cell: a face between fluid cell `cell` and a solid
/// neighbor in direction `outward` along `axis`.
#[derive(Clone, Copy, Debug)]
pub struct CellFacet {
    pub cell: usize,
    pub axis: usize,
    pub outward: i8,
    /// Facet midpoint in cell coordinates.
    pub y: [f64; MAX_DIM],
}

impl CellGeometry {
    /// Resolves `shape` on a `resolution^dim` grid of the unit cell.
    pub fn build(shape: InclusionShape, dim: usize, resolution: usize) -> Result<Self> {
        if !(2..=MAX_DIM).contains(&dim) {
            return Err(Error::Geometry(format!(
                "dimension must be 2 or 3, got {dim}"
            )));
        }
        if resolution < 4 {
            return Err(Error::Geometry(format!(
                "cell resolution must be at least 4, got {resolution}"
            )));
        }
        shape.validate(dim)?;
        if shape != InclusionShape::None {
            let margin = shape.margin();
            let required = 2.0 / resolution as f64;
            if margin < required - 1e-12 {
                return Err(Error::Geometry(format!(
                    "inclusion comes within {margin} of the cell boundary; at least {required} is required"
                )));
            }
        }
        let lat = Lattice::new(dim, resolution);
        let h = 1.0 / resolution as f64;
        let mask = (0..lat.len())
            .map(|idx| {
                let c = lat.coords(idx);
                let mut y = [0.0; MAX_DIM];
                for a in 0..dim {
                    y[a] = (c[a] as f64 + 0.5) * h;
                }
                !shape.contains(&y[..dim])
            })
            .collect();
        Self::assemble(Some(shape), dim, resolution, mask)
    }

    /// Builds a cell directly from a fluid mask (`true` = fluid).
    pub fn from_mask(dim: usize, resolution: usize, fluid_mask: Vec<bool>) -> Result<Self> {
        if !(2..=MAX_DIM).contains(&dim) {
            return Err(Error::Geometry(format!(
                "dimension must be 2 or 3, got {dim}"
            )));
        }
        if fluid_mask.len() != resolution.pow(dim as u32) {
            return Err(Error::Geometry(format!(
                "mask has {} entries, expected {}",
                fluid_mask.len(),
                resolution.pow(dim as u32)
            )));
        }
        Self::assemble(None, dim, resolution, fluid_mask)
    }

    fn assemble(
        shape: Option<InclusionShape>,
        dim: usize,
        resolution: usize,
        fluid_mask: Vec<bool>,
    ) -> Result<Self> {
        let fluid_count = fluid_mask.iter().filter(|&&f| f).count();
        if fluid_count == 0 {
            return Err(Error::Geometry("unit cell has no fluid cells".into()));
        }
        let cell = CellGeometry {
            shape,
            dim,
            resolution,
            porosity: fluid_count as f64 / fluid_mask.len() as f64,
            fluid_mask,
            fluid_count,
        };
        let reached = cell.flood_fill_count();
        if reached != fluid_count {
            return Err(Error::Geometry(format!(
                "fluid region is disconnected: {reached} of {fluid_count} fluid cells reachable"
            )));
        }
        Ok(cell)
    }

    pub fn lattice(&self) -> Lattice {
        Lattice::new(self.dim, self.resolution)
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.resolution as f64
    }

    pub fn solid_count(&self) -> usize {
        self.fluid_mask.len() - self.fluid_count
    }

    // Periodic edge-connectivity of the fluid cells.
    fn flood_fill_count(&self) -> usize {
        let lat = self.lattice();
        let Some(start) = self.fluid_mask.iter().position(|&f| f) else {
            return 0;
        };
        let mut seen = vec![false; lat.len()];
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        let mut count = 0;
        while let Some(idx) = queue.pop_front() {
            count += 1;
            for axis in 0..self.dim {
                for dir in [-1i8, 1] {
                    let nb = lat.neighbor(idx, axis, dir, true).unwrap();
                    if self.fluid_mask[nb] && !seen[nb] {
                        seen[nb] = true;
                        queue.push_back(nb);
                    }
                }
            }
        }
        count
    }

    /// Fluid-solid faces of the periodic unit cell, in lattice order.
    pub fn hole_facets(&self) -> Vec<CellFacet> {
        let lat = self.lattice();
        let h = self.spacing();
        let mut out = Vec::new();
        for idx in 0..lat.len() {
            if !self.fluid_mask[idx] {
                continue;
            }
            let c = lat.coords(idx);
            for axis in 0..self.dim {
                for dir in [-1i8, 1] {
                    let nb = lat.neighbor(idx, axis, dir, true).unwrap();
                    if self.fluid_mask[nb] {
                        continue;
                    }
                    let mut y = [0.0; MAX_DIM];
                    for a in 0..self.dim {
                        y[a] = (c[a] as f64 + 0.5) * h;
                    }
                    y[axis] += 0.5 * h * dir as f64;
                    out.push(CellFacet {
                        cell: idx,
                        axis,
                        outward: dir,
                        y,
                    });
                }
            }
        }
        out
    }

    /// Area of one unit-cell facet, `(1/resolution)^(dim-1)`.
    pub fn facet_area(&self) -> f64 {
        self.spacing().powi(self.dim as i32 - 1)
    }

    /// Measure of the staircase boundary of the inclusion.
    pub fn staircase_perimeter(&self) -> f64 {
        self.hole_facets().len() as f64 * self.facet_area()
    }
}

/// Face between two fluid cells; `hi` is the `+axis` neighbor of `lo`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InteriorFace {
    pub lo: usize,
    pub hi: usize,
    pub axis: usize,
}

/// Boundary facet of a fluid cell (hole or outer boundary).
#[derive(Clone, Copy, Debug)]
pub struct Facet {
    /// Fluid index of the owning cell.
    pub cell: usize,
    pub axis: usize,
    pub outward: i8,
    /// Facet midpoint in domain coordinates.
    pub x: [f64; MAX_DIM],
    /// Facet midpoint in cell coordinates, `x/eps mod 1`.
    pub y: [f64; MAX_DIM],
}

/// Counts of every grid face by class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct FacetCensus {
    pub fluid_fluid: usize,
    pub fluid_solid: usize,
    pub solid_solid: usize,
    pub outer_fluid: usize,
    pub outer_solid: usize,
}

impl FacetCensus {
    pub fn total(&self) -> usize {
        self.fluid_fluid + self.fluid_solid + self.solid_solid + self.outer_fluid + self.outer_solid
    }
}

/// Perforated unit square/cube `(0,1)^n` with period `eps = 1/m`.
#[derive(Clone, Debug)]
pub struct MaskedGrid {
    pub dim: usize,
    pub m: usize,
    pub r: usize,
    pub lattice: Lattice,
    pub spacing: f64,
    pub fluid_mask: Vec<bool>,
    /// Fluid index of each lattice cell, `usize::MAX` for solid cells.
    pub fluid_of_cell: Vec<usize>,
    pub cell_of_fluid: Vec<usize>,
    pub interior_faces: Vec<InteriorFace>,
    pub hole_facets: Vec<Facet>,
    pub outer_facets: Vec<Facet>,
    pub census: FacetCensus,
}

impl MaskedGrid {
    /// Tiles `cell` over `m^dim` periods, each resolved by `r` cells per edge.
    pub fn build(cell: &CellGeometry, m: usize, r: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::Geometry(
                "number of periods m must be at least 1".into(),
            ));
        }
        if r != cell.resolution {
            return Err(Error::Alignment {
                micro: r,
                cell: cell.resolution,
            });
        }
        let dim = cell.dim;
        let n = m * r;
        let lattice = Lattice::new(dim, n);
        let cell_lat = cell.lattice();
        let h = 1.0 / n as f64;

        let local_index = |c: &[usize; MAX_DIM]| {
            let mut local = [0; MAX_DIM];
            for a in 0..dim {
                local[a] = c[a] % r;
            }
            cell_lat.index(&local)
        };

        let mut fluid_mask = Vec::with_capacity(lattice.len());
        for idx in 0..lattice.len() {
            fluid_mask.push(cell.fluid_mask[local_index(&lattice.coords(idx))]);
        }
        let mut fluid_of_cell = vec![usize::MAX; lattice.len()];
        let mut cell_of_fluid = Vec::new();
        for (idx, &f) in fluid_mask.iter().enumerate() {
            if f {
                fluid_of_cell[idx] = cell_of_fluid.len();
                cell_of_fluid.push(idx);
            }
        }

        let mut interior_faces = Vec::new();
        let mut hole_facets = Vec::new();
        let mut outer_facets = Vec::new();
        let mut census = FacetCensus::default();
        for idx in 0..lattice.len() {
            let c = lattice.coords(idx);
            for axis in 0..dim {
                for dir in [-1i8, 1] {
                    let nb = lattice.neighbor(idx, axis, dir, false);
                    if !fluid_mask[idx] {
                        match nb {
                            None => census.outer_solid += 1,
                            // solid-solid counted once from the low side
                            Some(j) if !fluid_mask[j] && dir > 0 => census.solid_solid += 1,
                            _ => {}
                        }
                        continue;
                    }
                    let make_facet = || {
                        let mut x = [0.0; MAX_DIM];
                        let mut y = [0.0; MAX_DIM];
                        for a in 0..dim {
                            let mut off = c[a] as f64 + 0.5;
                            let mut loc = (c[a] % r) as f64 + 0.5;
                            if a == axis {
                                off += 0.5 * dir as f64;
                                loc += 0.5 * dir as f64;
                            }
                            x[a] = off * h;
                            y[a] = loc / r as f64;
                        }
                        Facet {
                            cell: fluid_of_cell[idx],
                            axis,
                            outward: dir,
                            x,
                            y,
                        }
                    };
                    match nb {
                        None => {
                            census.outer_fluid += 1;
                            outer_facets.push(make_facet());
                        }
                        Some(j) if fluid_mask[j] => {
                            if dir > 0 {
                                census.fluid_fluid += 1;
                                interior_faces.push(InteriorFace {
                                    lo: fluid_of_cell[idx],
                                    hi: fluid_of_cell[j],
                                    axis,
                                });
                            }
                        }
                        Some(_) => {
                            census.fluid_solid += 1;
                            hole_facets.push(make_facet());
                        }
                    }
                }
            }
        }

        Ok(MaskedGrid {
            dim,
            m,
            r,
            lattice,
            spacing: h,
            fluid_mask,
            fluid_of_cell,
            cell_of_fluid,
            interior_faces,
            hole_facets,
            outer_facets,
            census,
        })
    }

    /// Full (hole-free) grid with `n` cells per edge, used by the homogenized model.
    pub fn unperforated(dim: usize, n: usize) -> Result<Self> {
        let cell = CellGeometry::build(InclusionShape::None, dim, n)?;
        MaskedGrid::build(&cell, 1, n)
    }

    pub fn epsilon(&self) -> f64 {
        1.0 / self.m as f64
    }

    pub fn cells_per_side(&self) -> usize {
        self.lattice.n
    }

    pub fn fluid_count(&self) -> usize {
        self.cell_of_fluid.len()
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing.powi(self.dim as i32)
    }

    pub fn facet_area(&self) -> f64 {
        self.spacing.powi(self.dim as i32 - 1)
    }

    /// `|Omega_eps|`, the summed volume of the fluid cells.
    pub fn fluid_volume(&self) -> f64 {
        self.fluid_count() as f64 * self.cell_volume()
    }

    pub fn hole_area(&self) -> f64 {
        self.hole_facets.len() as f64 * self.facet_area()
    }

    pub fn outer_area(&self) -> f64 {
        self.outer_facets.len() as f64 * self.facet_area()
    }

    /// Whether every lattice cell is fluid.
    pub fn is_unperforated(&self) -> bool {
        self.fluid_count() == self.lattice.len()
    }

    /// Center of fluid cell `f` in domain coordinates.
    pub fn center(&self, f: usize) -> [f64; MAX_DIM] {
        let c = self.lattice.coords(self.cell_of_fluid[f]);
        let mut x = [0.0; MAX_DIM];
        for a in 0..self.dim {
            x[a] = (c[a] as f64 + 0.5) * self.spacing;
        }
        x
    }

    /// Center of fluid cell `f` in cell coordinates.
    pub fn local_center(&self, f: usize) -> [f64; MAX_DIM] {
        let c = self.lattice.coords(self.cell_of_fluid[f]);
        let mut y = [0.0; MAX_DIM];
        for a in 0..self.dim {
            y[a] = ((c[a] % self.r) as f64 + 0.5) / self.r as f64;
        }
        y
    }

    /// Index of fluid cell `f` within the unit-cell lattice.
    pub fn local_index(&self, f: usize) -> usize {
        let c = self.lattice.coords(self.cell_of_fluid[f]);
        let mut local = [0; MAX_DIM];
        for a in 0..self.dim {
            local[a] = c[a] % self.r;
        }
        Lattice::new(self.dim, self.r).index(&local)
    }

    /// Samples `f(x)` at every fluid cell center.
    pub fn sample<F: Fn(&[f64]) -> f64>(&self, f: F) -> Vec<f64> {
        (0..self.fluid_count())
            .map(|i| f(&self.center(i)[..self.dim]))
            .collect()
    }

    /// Mean of a fluid-cell field.
    pub fn mean(&self, values: &[f64]) -> f64 {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Charge carried by each boundary facet (density, multiply by area for charge).
#[derive(Clone, Debug, Default)]
pub struct FacetCharges {
    pub hole: Vec<f64>,
    pub outer: Vec<f64>,
    /// Largest absolute facet value.
    pub xi_star: f64,
}

impl FacetCharges {
    pub fn zero(grid: &MaskedGrid) -> Self {
        FacetCharges {
            hole: vec![0.0; grid.hole_facets.len()],
            outer: vec![0.0; grid.outer_facets.len()],
            xi_star: 0.0,
        }
    }

    /// Total boundary charge, `sum(value * area)`.
    pub fn total(&self, grid: &MaskedGrid) -> f64 {
        let a = grid.facet_area();
        (self.hole.iter().sum::<f64>() + self.outer.iter().sum::<f64>()) * a
    }

    /// Adds a constant to every outer-boundary facet.
    pub fn shift_outer(&mut self, delta: f64) {
        for v in &mut self.outer {
            *v += delta;
        }
        self.refresh_max();
    }

    pub fn refresh_max(&mut self) {
        self.xi_star = self
            .hole
            .iter()
            .chain(&self.outer)
            .fold(0.0, |m: f64, v| m.max(v.abs()));
    }
}

/// Surface charge density: `eps * xi1(x, x/eps mod 1)` on hole facets and
/// `xi2(x)` on the outer boundary, sampled at facet midpoints.
pub fn surface_charge_on_facets<F1, F2>(grid: &MaskedGrid, xi1: F1, xi2: F2) -> FacetCharges
where
    F1: Fn(&[f64], &[f64]) -> f64,
    F2: Fn(&[f64]) -> f64,
{
    let d = grid.dim;
    let eps = grid.epsilon();
    let mut charges = FacetCharges {
        hole: grid
            .hole_facets
            .iter()
            .map(|f| eps * xi1(&f.x[..d], &f.y[..d]))
            .collect(),
        outer: grid.outer_facets.iter().map(|f| xi2(&f.x[..d])).collect(),
        xi_star: 0.0,
    };
    charges.refresh_max();
    charges
}
