//! Structured tube generator: a cylindrical lumen wrapped by two annular
//! layers, tessellated into tets with an exactly conforming (duplicated)
//! interface ring between the lumen surface and the media inner surface.
//!
//! Cross-sections are polygonal. Ring radii carry the equal-area correction
//! sqrt(theta/sin(theta)), so region volumes match the analytic cylinder and
//! annulus values to roundoff at any angular resolution.

use super::{BoundaryTag, BoundaryTri, Mesh, Region, Tet};
use crate::error::{FsiError, Result};
use nalgebra::Vector3;

#[derive(Debug, Clone, Copy)]
pub struct TubeParams {
    pub radius: f64,
    pub length: f64,
    pub media_thickness: f64,
    pub adventitia_thickness: f64,
    pub n_axial: usize,
    pub n_circ: usize,
    pub n_radial_fluid: usize,
    pub n_radial_layer: usize,
}

impl TubeParams {
    /// Benchmark dimensions: r = 1.43 mm, L = 18 mm, media 0.26 mm,
    /// adventitia 0.13 mm.
    pub fn benchmark(n_axial: usize, n_circ: usize, n_radial_fluid: usize, n_radial_layer: usize) -> Self {
        TubeParams {
            radius: 1.43,
            length: 18.0,
            media_thickness: 0.26,
            adventitia_thickness: 0.13,
            n_axial,
            n_circ,
            n_radial_fluid,
            n_radial_layer,
        }
    }
}

/// One 2D cross-section vertex: either the axis point or a ring point.
#[derive(Clone, Copy)]
enum SectionVertex {
    Axis,
    Ring { ring: usize, sector: usize },
}

struct Section {
    verts: Vec<SectionVertex>,
    /// 2D triangles (counter-clockwise) with their radial zone
    tris: Vec<([usize; 3], Region)>,
    /// radius of each ring (already area-corrected)
    radii: Vec<f64>,
    n_circ: usize,
    /// section-local index of (ring, sector)
    ring_base: usize,
}

impl Section {
    fn ring_vertex(&self, ring: usize, sector: usize) -> usize {
        self.ring_base + ring * self.n_circ + (sector % self.n_circ)
    }
}

fn build_section(p: &TubeParams) -> Section {
    let nrf = p.n_radial_fluid;
    let nrl = p.n_radial_layer;
    let n_rings = nrf + 2 * nrl;
    let theta = 2.0 * std::f64::consts::PI / p.n_circ as f64;
    // equal-area radial scaling: polygon ring at c*r encloses the area of the
    // circle of radius r
    let c = (theta / theta.sin()).sqrt();
    let mut radii = Vec::with_capacity(n_rings);
    for j in 1..=nrf {
        radii.push(c * p.radius * j as f64 / nrf as f64);
    }
    for j in 1..=nrl {
        radii.push(c * (p.radius + p.media_thickness * j as f64 / nrl as f64));
    }
    for j in 1..=nrl {
        radii.push(c * (p.radius + p.media_thickness + p.adventitia_thickness * j as f64 / nrl as f64));
    }

    let mut verts = vec![SectionVertex::Axis];
    let ring_base = verts.len();
    for ring in 0..n_rings {
        for sector in 0..p.n_circ {
            verts.push(SectionVertex::Ring { ring, sector });
        }
    }
    let section = Section {
        verts,
        tris: Vec::new(),
        radii,
        n_circ: p.n_circ,
        ring_base,
    };
    let mut tris = Vec::new();
    let zone = |ring_outer: usize| {
        if ring_outer < nrf {
            Region::Fluid
        } else if ring_outer < nrf + nrl {
            Region::Media
        } else {
            Region::Adventitia
        }
    };
    // core fan: axis to ring 0
    for i in 0..p.n_circ {
        tris.push(([0, section.ring_vertex(0, i), section.ring_vertex(0, i + 1)], Region::Fluid));
    }
    // annular bands, split along the diagonal through the lowest local id
    for ring in 0..n_rings - 1 {
        // the fluid/media boundary is where vertices are duplicated later;
        // the band between ring nrf-1 and nrf belongs to the media
        let region = zone(ring + 1);
        for i in 0..p.n_circ {
            let a = section.ring_vertex(ring, i);
            let b = section.ring_vertex(ring, i + 1);
            let c2 = section.ring_vertex(ring + 1, i + 1);
            let d = section.ring_vertex(ring + 1, i);
            if a.min(c2) < b.min(d) {
                tris.push(([a, b, c2], region));
                tris.push(([a, c2, d], region));
            } else {
                tris.push(([a, b, d], region));
                tris.push(([b, c2, d], region));
            }
        }
    }
    Section { tris, ..section }
}

/// Splits the prism (bottom a0,a1,a2; top b0,b1,b2) into three tets using the
/// diagonal-through-smallest-global-id rule, which keeps neighboring prisms
/// conforming.
fn split_prism(bot: [usize; 3], top: [usize; 3]) -> [[usize; 4]; 3] {
    // rotate so the smallest global id sits at local position 0
    let ids = [bot[0], bot[1], bot[2], top[0], top[1], top[2]];
    let min_pos = (0..6).min_by_key(|&k| ids[k]).unwrap();
    let rot = min_pos % 3;
    let r = |k: usize| (k + rot) % 3;
    let (b, t) = if min_pos < 3 {
        ([bot[r(0)], bot[r(1)], bot[r(2)]], [top[r(0)], top[r(1)], top[r(2)]])
    } else {
        // smallest id on the top: mirror the prism (swap top/bottom and flip
        // orientation so the final tets stay positively oriented after the
        // orientation fix below)
        ([top[r(0)], top[r(2)], top[r(1)]], [bot[r(0)], bot[r(2)], bot[r(1)]])
    };
    // faces adjacent to b[0] take diagonals through b[0]; the remaining quad
    // face (b1 b2 t2 t1) takes the diagonal through its smallest id
    if b[1].min(t[2]) < b[2].min(t[1]) {
        [[b[0], b[1], b[2], t[2]], [b[0], b[1], t[2], t[1]], [b[0], t[1], t[2], t[0]]]
    } else {
        [[b[0], b[1], b[2], t[1]], [b[0], t[1], b[2], t[2]], [b[0], t[1], t[2], t[0]]]
    }
}

pub fn generate_tube_mesh(p: &TubeParams) -> Result<Mesh> {
    if p.radius <= 0.0
        || p.length <= 0.0
        || p.media_thickness <= 0.0
        || p.adventitia_thickness <= 0.0
    {
        return Err(FsiError::Mesh("all tube dimensions must be positive".into()));
    }
    if p.n_circ < 8 {
        return Err(FsiError::Mesh(format!("n_circ = {} < 8", p.n_circ)));
    }
    if p.n_axial < 4 {
        return Err(FsiError::Mesh(format!("n_axial = {} < 4", p.n_axial)));
    }
    if p.n_radial_fluid < 1 || p.n_radial_layer < 1 {
        return Err(FsiError::Mesh("radial subdivision counts must be >= 1".into()));
    }

    let section = build_section(p);
    let nrf = p.n_radial_fluid;
    let interface_ring = nrf - 1; // ring index of the lumen surface

    // 3D vertex layout per axial station: the fluid block (axis + rings
    // 0..nrf-1) followed by the structure block (a duplicate of the interface
    // ring + rings nrf..). Duplication keeps the sub-problems independent.
    let n_fluid_2d = 1 + nrf * p.n_circ;
    let n_struct_2d = (1 + 2 * p.n_radial_layer) * p.n_circ;
    let per_station = n_fluid_2d + n_struct_2d;
    let n_stations = p.n_axial + 1;

    let mut vertices = Vec::with_capacity(per_station * n_stations);
    for k in 0..n_stations {
        let z = p.length * k as f64 / p.n_axial as f64;
        // fluid block
        vertices.push(Vector3::new(0.0, 0.0, z));
        for ring in 0..nrf {
            let r = section.radii[ring];
            for s in 0..p.n_circ {
                let ang = 2.0 * std::f64::consts::PI * s as f64 / p.n_circ as f64;
                vertices.push(Vector3::new(r * ang.cos(), r * ang.sin(), z));
            }
        }
        // structure block: interface duplicate first, then outward rings
        for ring in (nrf - 1)..(nrf + 2 * p.n_radial_layer) {
            let r = section.radii[ring];
            for s in 0..p.n_circ {
                let ang = 2.0 * std::f64::consts::PI * s as f64 / p.n_circ as f64;
                vertices.push(Vector3::new(r * ang.cos(), r * ang.sin(), z));
            }
        }
    }

    // maps a section-local vertex to the 3D id at station k, on the fluid or
    // structure side of the duplicated interface ring
    let vertex_id = |sv: usize, k: usize, structure_side: bool| -> usize {
        let base = per_station * k;
        match section.verts[sv] {
            SectionVertex::Axis => base,
            SectionVertex::Ring { ring, sector } => {
                if ring < nrf && !(structure_side && ring == interface_ring) {
                    base + 1 + ring * p.n_circ + sector
                } else {
                    debug_assert!(ring >= interface_ring);
                    base + n_fluid_2d + (ring - interface_ring) * p.n_circ + sector
                }
            }
        }
    };

    let mut tets = Vec::new();
    for k in 0..p.n_axial {
        for &(tri, region) in &section.tris {
            let structure_side = region.is_structure();
            let bot = [
                vertex_id(tri[0], k, structure_side),
                vertex_id(tri[1], k, structure_side),
                vertex_id(tri[2], k, structure_side),
            ];
            let top = [
                vertex_id(tri[0], k + 1, structure_side),
                vertex_id(tri[1], k + 1, structure_side),
                vertex_id(tri[2], k + 1, structure_side),
            ];
            for mut tet in split_prism(bot, top) {
                let vol = super::tet_signed_volume(&vertices, &tet);
                if vol < 0.0 {
                    tet.swap(2, 3);
                }
                let vol = super::tet_signed_volume(&vertices, &tet);
                if vol <= 1e-14 {
                    return Err(FsiError::Mesh(format!(
                        "degenerate tet (volume {vol:.3e}) for the given parameters"
                    )));
                }
                tets.push(Tet { vertices: tet, region });
            }
        }
    }

    // boundary triangles: faces of exactly one tet within each sub-problem,
    // tagged geometrically
    let mesh_wo_boundary = Mesh {
        vertices,
        tets,
        boundary_tris: Vec::new(),
    };
    let boundary_tris = tag_boundary(&mesh_wo_boundary, p)?;
    let mesh = Mesh {
        boundary_tris,
        ..mesh_wo_boundary
    };
    mesh.validate()?;
    Ok(mesh)
}

fn tag_boundary(mesh: &Mesh, p: &TubeParams) -> Result<Vec<BoundaryTri>> {
    use std::collections::HashMap;
    // count faces over all tets; with the duplicated interface, fluid and
    // structure faces never collide
    let mut faces: HashMap<(usize, usize, usize), ([usize; 3], Region, usize)> = HashMap::new();
    for tet in &mesh.tets {
        let [a, b, c, d] = tet.vertices;
        for f in [[a, b, c], [a, b, d], [a, c, d], [b, c, d]] {
            let key = super::sorted_face(f[0], f[1], f[2]);
            faces
                .entry(key)
                .and_modify(|e| e.2 += 1)
                .or_insert((f, tet.region, 1));
        }
    }
    let ztol = 1e-9 * p.length.max(1.0);
    let interface_r = {
        let theta = 2.0 * std::f64::consts::PI / p.n_circ as f64;
        (theta / theta.sin()).sqrt() * p.radius
    };
    let mut out = Vec::new();
    let mut keys: Vec<_> = faces.keys().copied().collect();
    keys.sort_unstable();
    for key in keys {
        let (f, region, count) = faces[&key];
        if count != 1 {
            continue;
        }
        let pts = [mesh.vertices[f[0]], mesh.vertices[f[1]], mesh.vertices[f[2]]];
        let all_z = |z: f64| pts.iter().all(|q| (q.z - z).abs() < ztol);
        let radii: Vec<f64> = pts.iter().map(|q| (q.x * q.x + q.y * q.y).sqrt()).collect();
        let tag = if region == Region::Fluid {
            if all_z(0.0) {
                BoundaryTag::Inlet
            } else if all_z(p.length) {
                BoundaryTag::Outlet
            } else {
                BoundaryTag::Interface
            }
        } else if all_z(0.0) || all_z(p.length) {
            BoundaryTag::SolidEnds
        } else if radii.iter().all(|&r| (r - interface_r).abs() < 1e-9 * interface_r) {
            BoundaryTag::Interface
        } else {
            BoundaryTag::OuterWall
        };
        out.push(BoundaryTri { vertices: f, tag });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_interface_map;

    #[test]
    fn minimal_mesh_is_valid() {
        let p = TubeParams::benchmark(4, 8, 1, 1);
        let m = generate_tube_mesh(&p).unwrap();
        m.validate().unwrap();
        assert!(m.min_quality() > 0.0);
    }

    #[test]
    fn benchmark_dimensions_give_three_regions() {
        let p = TubeParams::benchmark(6, 8, 2, 1);
        let m = generate_tube_mesh(&p).unwrap();
        for r in [Region::Fluid, Region::Media, Region::Adventitia] {
            assert!(m.tets.iter().any(|t| t.region == r), "missing region {r:?}");
        }
    }

    #[test]
    fn region_volumes_match_analytic() {
        // equal-area ring placement makes the polygonal volumes exact
        let p = TubeParams::benchmark(6, 16, 2, 1);
        let m = generate_tube_mesh(&p).unwrap();
        let vf = m.region_volume(Region::Fluid);
        let vm = m.region_volume(Region::Media);
        let va = m.region_volume(Region::Adventitia);
        let pi = std::f64::consts::PI;
        let exact_f = pi * p.radius * p.radius * p.length;
        let rm = p.radius + p.media_thickness;
        let ra = rm + p.adventitia_thickness;
        let exact_m = pi * (rm * rm - p.radius * p.radius) * p.length;
        let exact_a = pi * (ra * ra - rm * rm) * p.length;
        assert!((vf - exact_f).abs() / exact_f < 0.02, "fluid {vf} vs {exact_f}");
        assert!((vm - exact_m).abs() / exact_m < 0.02, "media {vm} vs {exact_m}");
        assert!((va - exact_a).abs() / exact_a < 0.02, "adventitia {va} vs {exact_a}");
        // the construction should in fact be exact to roundoff
        assert!((vf - exact_f).abs() / exact_f < 1e-10);
    }

    #[test]
    fn interface_pair_count_is_rings_times_stations() {
        let p = TubeParams::benchmark(4, 8, 1, 1);
        let m = generate_tube_mesh(&p).unwrap();
        let map = build_interface_map(&m).unwrap();
        assert_eq!(map.len(), 8 * 5);
    }

    #[test]
    fn perturbed_interface_vertex_is_unmatched() {
        let p = TubeParams::benchmark(4, 8, 1, 1);
        let mut m = generate_tube_mesh(&p).unwrap();
        let map = build_interface_map(&m).unwrap();
        let (_, s) = map.pairs[3];
        m.vertices[s].x += 1e-6;
        assert!(build_interface_map(&m).is_err());
    }

    #[test]
    fn rejects_bad_parameters() {
        let mut p = TubeParams::benchmark(4, 8, 1, 1);
        p.n_circ = 6;
        assert!(generate_tube_mesh(&p).is_err());
        let mut p = TubeParams::benchmark(4, 8, 1, 1);
        p.radius = -1.0;
        assert!(generate_tube_mesh(&p).is_err());
        let mut p = TubeParams::benchmark(3, 8, 1, 1);
        p.n_axial = 3;
        assert!(generate_tube_mesh(&p).is_err());
    }

    #[test]
    fn submesh_extraction_is_consistent() {
        let p = TubeParams::benchmark(4, 8, 2, 1);
        let m = generate_tube_mesh(&p).unwrap();
        let fluid = m.extract(true);
        let solid = m.extract(false);
        assert_eq!(fluid.n_tets() + solid.n_tets(), m.tets.len());
        let vol = fluid.volume() + solid.volume();
        let total: f64 = m.tets.iter().map(|t| crate::mesh::tet_signed_volume(&m.vertices, &t.vertices)).sum();
        assert!((vol - total).abs() < 1e-12 * total);
        // interface vertices exist on both sides with equal counts
        let fi = fluid.tagged_vertices(BoundaryTag::Interface);
        let si = solid.tagged_vertices(BoundaryTag::Interface);
        assert_eq!(fi.len(), si.len());
    }
}
