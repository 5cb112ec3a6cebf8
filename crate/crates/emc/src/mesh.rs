//! 1D piecewise-uniform slabs and 2D uniform rectangular grids.
//!
//! Every face is stored once, oriented along +x or +y from its `lower`
//! cell to its `upper` cell. A cell sees its own faces with a sign: −1 on
//! its low side, +1 on its high side, so outward flux is `sign * F`.

use serde::{Deserialize, Serialize};

use crate::error::MeshError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
    Bottom,
    Top,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::Left, Side::Right, Side::Bottom, Side::Top];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn axis(self) -> usize {
        match self {
            Side::Left | Side::Right => 0,
            Side::Bottom | Side::Top => 1,
        }
    }

    /// +1 when the outward normal points along the positive axis.
    pub fn outward_sign(self) -> f64 {
        match self {
            Side::Left | Side::Bottom => -1.0,
            Side::Right | Side::Top => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BoundaryKind {
    Reflective,
    Vacuum,
    Planck { temperature: f64 },
}

impl BoundaryKind {
    pub fn is_reflective(&self) -> bool {
        matches!(self, BoundaryKind::Reflective)
    }

    /// Temperature of the incoming Planckian, zero for vacuum.
    pub fn inflow_temperature(&self) -> Option<f64> {
        match *self {
            BoundaryKind::Reflective => None,
            BoundaryKind::Vacuum => Some(0.0),
            BoundaryKind::Planck { temperature } => Some(temperature),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundarySpec {
    pub left: BoundaryKind,
    pub right: BoundaryKind,
    #[serde(default = "reflective")]
    pub bottom: BoundaryKind,
    #[serde(default = "reflective")]
    pub top: BoundaryKind,
}

fn reflective() -> BoundaryKind {
    BoundaryKind::Reflective
}

impl BoundarySpec {
    pub fn reflective() -> Self {
        Self {
            left: BoundaryKind::Reflective,
            right: BoundaryKind::Reflective,
            bottom: BoundaryKind::Reflective,
            top: BoundaryKind::Reflective,
        }
    }

    pub fn get(&self, side: Side) -> BoundaryKind {
        match side {
            Side::Left => self.left,
            Side::Right => self.right,
            Side::Bottom => self.bottom,
            Side::Top => self.top,
        }
    }

    pub fn validate(&self) -> Result<(), MeshError> {
        for side in Side::ALL {
            if let BoundaryKind::Planck { temperature } = self.get(side) {
                if !(temperature > 0.0) {
                    return Err(MeshError::Geometry(format!(
                        "Planck boundary on {side:?} needs T > 0, got {temperature}"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlabRegion {
    pub x0: f64,
    pub x1: f64,
    /// Either `cells` or `dx` must be given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cells: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dx: Option<f64>,
    pub material: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialBox {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
    pub material: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Geometry {
    Slab {
        regions: Vec<SlabRegion>,
    },
    Grid {
        lx: f64,
        ly: f64,
        nx: usize,
        ny: usize,
        #[serde(default)]
        default_material: usize,
        /// Later boxes override earlier ones.
        #[serde(default)]
        boxes: Vec<MaterialBox>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Face {
    pub axis: usize,
    pub area: f64,
    /// Coordinate of the face along `axis`.
    pub coord: f64,
    pub lower: Option<usize>,
    pub upper: Option<usize>,
    pub side: Option<Side>,
    /// Center-to-face distances of the lower and upper cells (0 if absent).
    pub half_lower: f64,
    pub half_upper: f64,
}

impl Face {
    /// Center-to-center distance, or center-to-face on a boundary.
    pub fn distance(&self) -> f64 {
        self.half_lower + self.half_upper
    }

    pub fn interior_cell(&self) -> usize {
        self.lower.or(self.upper).expect("face touches at least one cell")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layout {
    Slab { edges: Vec<f64> },
    Grid { nx: usize, ny: usize, dx: f64, dy: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    layout: Layout,
    centers: Vec<[f64; 2]>,
    widths: Vec<[f64; 2]>,
    volumes: Vec<f64>,
    materials: Vec<usize>,
    faces: Vec<Face>,
    /// Per cell: [x_lo, x_hi, y_lo, y_hi]; the y entries are unused in 1D.
    cell_faces: Vec<[usize; 4]>,
}

pub const FACE_SIGNS: [f64; 4] = [-1.0, 1.0, -1.0, 1.0];

impl Mesh {
    pub fn build(geometry: &Geometry) -> Result<Self, MeshError> {
        match geometry {
            Geometry::Slab { regions } => Self::slab(regions),
            Geometry::Grid { lx, ly, nx, ny, default_material, boxes } => {
                Self::grid(*lx, *ly, *nx, *ny, *default_material, boxes)
            }
        }
    }

    fn slab(regions: &[SlabRegion]) -> Result<Self, MeshError> {
        if regions.is_empty() {
            return Err(MeshError::Geometry("no regions".into()));
        }
        let mut edges = vec![regions[0].x0];
        let mut materials = Vec::new();
        for (k, r) in regions.iter().enumerate() {
            let len = r.x1 - r.x0;
            if !(len > 0.0) || !len.is_finite() {
                return Err(MeshError::Geometry(format!("region {k} has nonpositive length")));
            }
            let last = *edges.last().expect("nonempty");
            if (r.x0 - last).abs() > 1e-12 * len.max(1.0) {
                return Err(MeshError::Tiling(r.x0.min(last)));
            }
            let n = match (r.cells, r.dx) {
                (Some(n), None) => n,
                (None, Some(dx)) => {
                    if !(dx > 0.0) {
                        return Err(MeshError::Geometry(format!("region {k} has dx = {dx}")));
                    }
                    let n = (len / dx).round();
                    if n < 1.0 || (n * dx - len).abs() > 1e-9 * len {
                        return Err(MeshError::Geometry(format!(
                            "region {k}: dx = {dx} does not divide length {len}"
                        )));
                    }
                    n as usize
                }
                _ => {
                    return Err(MeshError::Geometry(format!(
                        "region {k} needs exactly one of `cells` or `dx`"
                    )))
                }
            };
            if n == 0 {
                return Err(MeshError::Geometry(format!("region {k} has zero cells")));
            }
            for c in 1..=n {
                edges.push(if c == n { r.x1 } else { r.x0 + len * c as f64 / n as f64 });
                materials.push(r.material);
            }
        }
        let n = materials.len();
        let mut centers = Vec::with_capacity(n);
        let mut widths = Vec::with_capacity(n);
        let mut volumes = Vec::with_capacity(n);
        for i in 0..n {
            let w = edges[i + 1] - edges[i];
            centers.push([0.5 * (edges[i] + edges[i + 1]), 0.0]);
            widths.push([w, 1.0]);
            volumes.push(w);
        }
        let mut faces = Vec::with_capacity(n + 1);
        for k in 0..=n {
            let lower = k.checked_sub(1);
            let upper = (k < n).then_some(k);
            faces.push(Face {
                axis: 0,
                area: 1.0,
                coord: edges[k],
                lower,
                upper,
                side: match (lower, upper) {
                    (None, _) => Some(Side::Left),
                    (_, None) => Some(Side::Right),
                    _ => None,
                },
                half_lower: lower.map_or(0.0, |i| 0.5 * widths[i][0]),
                half_upper: upper.map_or(0.0, |i| 0.5 * widths[i][0]),
            });
        }
        let cell_faces = (0..n).map(|i| [i, i + 1, usize::MAX, usize::MAX]).collect();
        Ok(Self { layout: Layout::Slab { edges }, centers, widths, volumes, materials, faces, cell_faces })
    }

    fn grid(
        lx: f64,
        ly: f64,
        nx: usize,
        ny: usize,
        default_material: usize,
        boxes: &[MaterialBox],
    ) -> Result<Self, MeshError> {
        if !(lx > 0.0 && ly > 0.0) || nx == 0 || ny == 0 {
            return Err(MeshError::Geometry(format!(
                "grid needs positive extents and cell counts, got {lx}x{ly}, {nx}x{ny}"
            )));
        }
        let dx = lx / nx as f64;
        let dy = ly / ny as f64;
        let n = nx * ny;
        let mut centers = Vec::with_capacity(n);
        let mut materials = Vec::with_capacity(n);
        for j in 0..ny {
            for i in 0..nx {
                let c = [(i as f64 + 0.5) * dx, (j as f64 + 0.5) * dy];
                let mut m = default_material;
                for b in boxes {
                    if c[0] > b.x0 && c[0] < b.x1 && c[1] > b.y0 && c[1] < b.y1 {
                        m = b.material;
                    }
                }
                centers.push(c);
                materials.push(m);
            }
        }
        let x_face = |i: usize, j: usize| j * (nx + 1) + i;
        let y_offset = ny * (nx + 1);
        let y_face = |i: usize, j: usize| y_offset + j * nx + i;
        let mut faces = Vec::with_capacity(y_offset + (ny + 1) * nx);
        for j in 0..ny {
            for i in 0..=nx {
                let lower = (i > 0).then(|| j * nx + i - 1);
                let upper = (i < nx).then(|| j * nx + i);
                faces.push(Face {
                    axis: 0,
                    area: dy,
                    coord: i as f64 * dx,
                    lower,
                    upper,
                    side: if i == 0 {
                        Some(Side::Left)
                    } else if i == nx {
                        Some(Side::Right)
                    } else {
                        None
                    },
                    half_lower: if lower.is_some() { 0.5 * dx } else { 0.0 },
                    half_upper: if upper.is_some() { 0.5 * dx } else { 0.0 },
                });
            }
        }
        for j in 0..=ny {
            for i in 0..nx {
                let lower = (j > 0).then(|| (j - 1) * nx + i);
                let upper = (j < ny).then(|| j * nx + i);
                faces.push(Face {
                    axis: 1,
                    area: dx,
                    coord: j as f64 * dy,
                    lower,
                    upper,
                    side: if j == 0 {
                        Some(Side::Bottom)
                    } else if j == ny {
                        Some(Side::Top)
                    } else {
                        None
                    },
                    half_lower: if lower.is_some() { 0.5 * dy } else { 0.0 },
                    half_upper: if upper.is_some() { 0.5 * dy } else { 0.0 },
                });
            }
        }
        let mut cell_faces = Vec::with_capacity(n);
        for j in 0..ny {
            for i in 0..nx {
                cell_faces.push([x_face(i, j), x_face(i + 1, j), y_face(i, j), y_face(i, j + 1)]);
            }
        }
        Ok(Self {
            layout: Layout::Grid { nx, ny, dx, dy },
            centers,
            widths: vec![[dx, dy]; n],
            volumes: vec![dx * dy; n],
            materials,
            faces,
            cell_faces,
        })
    }

    pub fn dimension(&self) -> usize {
        match self.layout {
            Layout::Slab { .. } => 1,
            Layout::Grid { .. } => 2,
        }
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn num_cells(&self) -> usize {
        self.volumes.len()
    }

    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn volume(&self, cell: usize) -> f64 {
        self.volumes[cell]
    }

    pub fn volumes(&self) -> &[f64] {
        &self.volumes
    }

    pub fn center(&self, cell: usize) -> [f64; 2] {
        self.centers[cell]
    }

    pub fn width(&self, cell: usize) -> [f64; 2] {
        self.widths[cell]
    }

    /// Lower corner of the cell.
    pub fn origin(&self, cell: usize) -> [f64; 2] {
        let c = self.centers[cell];
        let w = self.widths[cell];
        match self.layout {
            Layout::Slab { .. } => [c[0] - 0.5 * w[0], 0.0],
            Layout::Grid { .. } => [c[0] - 0.5 * w[0], c[1] - 0.5 * w[1]],
        }
    }

    pub fn material(&self, cell: usize) -> usize {
        self.materials[cell]
    }

    pub fn materials(&self) -> &[usize] {
        &self.materials
    }

    pub fn faces(&self) -> &[Face] {
        &self.faces
    }

    pub fn face(&self, f: usize) -> &Face {
        &self.faces[f]
    }

    /// `(face, sign)` pairs of a cell; sign is +1 on the cell's high side.
    pub fn cell_faces(&self, cell: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let n = 2 * self.dimension();
        self.cell_faces[cell][..n].iter().copied().zip(FACE_SIGNS)
    }

    /// Face on the low (`high = false`) or high side of a cell along `axis`.
    pub fn cell_face(&self, cell: usize, axis: usize, high: bool) -> usize {
        self.cell_faces[cell][2 * axis + high as usize]
    }

    /// Cell across face `f` from `cell`, if any.
    pub fn neighbor(&self, cell: usize, f: usize) -> Option<usize> {
        let face = &self.faces[f];
        if face.lower == Some(cell) {
            face.upper
        } else {
            face.lower
        }
    }

    pub fn min_width(&self) -> f64 {
        let d = self.dimension();
        self.widths.iter().map(|w| if d == 1 { w[0] } else { w[0].min(w[1]) }).fold(f64::INFINITY, f64::min)
    }

    /// Cell containing the point (cells are half-open on their high side).
    pub fn locate(&self, p: [f64; 2]) -> Option<usize> {
        match &self.layout {
            Layout::Slab { edges } => {
                if p[0] < edges[0] || p[0] > edges[edges.len() - 1] {
                    return None;
                }
                let k = edges.partition_point(|&e| e <= p[0]);
                Some(k.saturating_sub(1).min(self.num_cells() - 1))
            }
            Layout::Grid { nx, ny, dx, dy } => {
                let i = (p[0] / dx).floor();
                let j = (p[1] / dy).floor();
                if i < 0.0 || j < 0.0 || p[0] > *nx as f64 * dx || p[1] > *ny as f64 * dy {
                    return None;
                }
                let i = (i as usize).min(nx - 1);
                let j = (j as usize).min(ny - 1);
                Some(j * nx + i)
            }
        }
    }

    pub fn boundary_faces(&self) -> impl Iterator<Item = (usize, &Face)> {
        self.faces.iter().enumerate().filter(|(_, f)| f.side.is_some())
    }
}

/// Size-weighted harmonic interface opacity; `d_i`, `d_j` are the
/// center-to-interface distances.
pub fn harmonic_interface_opacity(sigma_i: f64, sigma_j: f64, d_i: f64, d_j: f64) -> Result<f64, MeshError> {
    if !(sigma_i > 0.0) {
        return Err(MeshError::Opacity(sigma_i));
    }
    if !(sigma_j > 0.0) {
        return Err(MeshError::Opacity(sigma_j));
    }
    Ok((d_i + d_j) / (d_i / sigma_i + d_j / sigma_j))
}

/// Interface temperature from the interpolated fourth power.
pub fn interface_temperature(t_i: f64, t_j: f64, d_i: f64, d_j: f64) -> f64 {
    let t4 = (d_j * t_i.powi(4) + d_i * t_j.powi(4)) / (d_i + d_j);
    t4.powf(0.25)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn larsen_geometry() -> Geometry {
        Geometry::Slab {
            regions: vec![
                SlabRegion { x0: 0.0, x1: 2.0, cells: None, dx: Some(0.2), material: 0 },
                SlabRegion { x0: 2.0, x1: 3.0, cells: None, dx: Some(0.02), material: 1 },
                SlabRegion { x0: 3.0, x1: 4.0, cells: None, dx: Some(0.1), material: 2 },
            ],
        }
    }

    #[test]
    fn larsen_layout_has_seventy_cells() {
        let m = Mesh::build(&larsen_geometry()).unwrap();
        assert_eq!(m.num_cells(), 70);
        assert_eq!(m.material(9), 0);
        assert_eq!(m.material(10), 1);
        assert_eq!(m.material(60), 2);
        let total: f64 = m.volumes().iter().sum();
        assert!((total - 4.0).abs() < 1e-12);
    }

    #[test]
    fn single_cell() {
        let m = Mesh::build(&Geometry::Slab {
            regions: vec![SlabRegion { x0: 0.0, x1: 1.0, cells: Some(1), dx: None, material: 0 }],
        })
        .unwrap();
        assert_eq!(m.num_cells(), 1);
        assert_eq!(m.boundary_faces().count(), 2);
    }

    #[test]
    fn rejects_gaps_and_bad_dx() {
        let gap = Geometry::Slab {
            regions: vec![
                SlabRegion { x0: 0.0, x1: 1.0, cells: Some(2), dx: None, material: 0 },
                SlabRegion { x0: 1.1, x1: 2.0, cells: Some(2), dx: None, material: 0 },
            ],
        };
        assert!(matches!(Mesh::build(&gap), Err(MeshError::Tiling(_))));
        let bad = Geometry::Slab {
            regions: vec![SlabRegion { x0: 0.0, x1: 1.0, cells: None, dx: Some(0.3), material: 0 }],
        };
        assert!(Mesh::build(&bad).is_err());
    }

    #[test]
    fn hohlraum_grid_spacing() {
        let m = Mesh::build(&Geometry::Grid {
            lx: 1.4,
            ly: 0.65,
            nx: 280,
            ny: 130,
            default_material: 0,
            boxes: vec![MaterialBox { x0: 0.1, x1: 0.15, y0: 0.0, y1: 0.45, material: 1 }],
        })
        .unwrap();
        let w = m.width(0);
        assert!((w[0] - 0.005).abs() < 1e-15 && (w[1] - 0.005).abs() < 1e-15);
        let c = m.locate([0.12, 0.2]).unwrap();
        assert_eq!(m.material(c), 1);
        assert_eq!(m.material(m.locate([0.3, 0.2]).unwrap()), 0);
    }

    #[test]
    fn geometric_closure() {
        let grid = Mesh::build(&Geometry::Grid {
            lx: 1.0,
            ly: 0.5,
            nx: 4,
            ny: 3,
            default_material: 0,
            boxes: vec![],
        })
        .unwrap();
        for m in [grid, Mesh::build(&larsen_geometry()).unwrap()] {
            for c in 0..m.num_cells() {
                let mut s = [0.0; 2];
                for (f, sign) in m.cell_faces(c) {
                    let face = m.face(f);
                    s[face.axis] += sign * face.area;
                    assert!(face.lower == Some(c) || face.upper == Some(c));
                    assert_eq!(sign > 0.0, face.lower == Some(c));
                }
                assert!(s[0].abs() < 1e-14 && s[1].abs() < 1e-14);
            }
        }
    }

    #[test]
    fn interior_faces_appear_once() {
        let m = Mesh::build(&Geometry::Grid {
            lx: 1.0,
            ly: 1.0,
            nx: 3,
            ny: 2,
            default_material: 0,
            boxes: vec![],
        })
        .unwrap();
        let mut count = vec![0; m.num_faces()];
        for c in 0..m.num_cells() {
            for (f, _) in m.cell_faces(c) {
                count[f] += 1;
            }
        }
        for (f, face) in m.faces().iter().enumerate() {
            let expected = if face.side.is_some() { 1 } else { 2 };
            assert_eq!(count[f], expected);
        }
    }

    #[test]
    fn interface_means() {
        assert!((harmonic_interface_opacity(2.0, 2.0, 0.1, 0.7).unwrap() - 2.0).abs() < 1e-15);
        assert!((harmonic_interface_opacity(1.0, 3.0, 0.5, 0.5).unwrap() - 1.5).abs() < 1e-15);
        assert!(harmonic_interface_opacity(1e-12, 3.0, 0.5, 0.5).unwrap() < 1e-11);
        assert!(harmonic_interface_opacity(0.0, 3.0, 0.5, 0.5).is_err());
        assert_eq!(interface_temperature(0.7, 0.7, 1.0, 3.0), 0.7);
        assert!((interface_temperature(0.0, 1.0, 1.0, 1.0) - 2f64.powf(-0.25)).abs() < 1e-15);
        assert!((interface_temperature(1.0, 1e-3, 1.0, 1.0) - 0.840896).abs() < 1e-6);
    }
}
