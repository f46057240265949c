use fracpat_core::{Field, Mesh};

use crate::config::{PhantomConfig, Shape, ShapeKind};

fn contains(s: &Shape, x: f64, y: f64) -> bool {
    let (dx, dy) = (x - s.center[0], y - s.center[1]);
    match s.kind {
        ShapeKind::Disk => dx * dx + dy * dy <= s.size[0] * s.size[0],
        ShapeKind::Rect => dx.abs() <= 0.5 * s.size[0] && dy.abs() <= 0.5 * s.size[1],
    }
}

/// Nodal values of the piecewise-constant phantom; later shapes overwrite
/// earlier ones where they overlap.
pub fn build_phantom(cfg: &PhantomConfig, mesh: &Mesh) -> Field {
    Field(mesh.interpolate(|x, y| {
        cfg.shapes
            .iter().rfind(|s| contains(s, x, y))
            .map_or(0.0, |s| s.value)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use fracpat_core::build_mesh;

    #[test]
    fn default_phantom_is_disjoint_and_inside() {
        let cfg = PhantomConfig::default();
        let mesh = build_mesh(100).unwrap();
        for p in &mesh.nodes {
            let hits = cfg.shapes.iter().filter(|s| contains(s, p[0], p[1])).count();
            assert!(hits <= 1);
            if hits == 1 {
                assert!(p[0].abs() <= 0.6 && p[1].abs() <= 0.6);
            }
        }
        let a = build_phantom(&cfg, &mesh);
        assert!(a.0.iter().all(|&v| v == 0.0 || v == 0.5 || v == 1.0));
        assert!(a.0.iter().any(|&v| v == 0.5) && a.0.iter().any(|&v| v == 1.0));
    }

    #[test]
    fn empty_phantom_is_zero() {
        let mesh = build_mesh(10).unwrap();
        let a = build_phantom(&PhantomConfig { shapes: vec![] }, &mesh);
        assert_eq!(a.0.amax(), 0.0);
    }
}
