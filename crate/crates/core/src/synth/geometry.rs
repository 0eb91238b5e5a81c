use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ARRAY_STATIONS: usize = 16;
pub const TRIANGLE_SIDE_KM: f64 = 10.0;
const VERTEX_CROSS_RADIUS_KM: f64 = 1.0;
const CENTER_CROSS_RADIUS_KM: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Station {
    pub station_id: String,
    pub x_km: f64,
    pub y_km: f64,
}

/// Stations in a local east (x) / north (y) frame, stored in canonical
/// order: sorted by x, then y.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayGeometry {
    pub stations: Vec<Station>,
    /// Triangle corners the vertex groups are built around.
    pub vertices: [(f64, f64); 3],
}

impl ArrayGeometry {
    pub fn len(&self) -> usize {
        self.stations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stations.is_empty()
    }

    pub fn side_lengths(&self) -> [f64; 3] {
        let d = |a: (f64, f64), b: (f64, f64)| (a.0 - b.0).hypot(a.1 - b.1);
        let v = self.vertices;
        [d(v[0], v[1]), d(v[1], v[2]), d(v[2], v[0])]
    }

    pub fn centroid(&self) -> (f64, f64) {
        let n = self.stations.len() as f64;
        let (sx, sy) = self
            .stations
            .iter()
            .fold((0.0, 0.0), |(x, y), s| (x + s.x_km, y + s.y_km));
        (sx / n, sy / n)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stations.len() != ARRAY_STATIONS {
            return Err(Error::contract(format!(
                "array geometry needs {ARRAY_STATIONS} stations, has {}",
                self.stations.len()
            )));
        }
        if self
            .side_lengths()
            .iter()
            .any(|s| (s - TRIANGLE_SIDE_KM).abs() > 1e-9)
        {
            return Err(Error::contract("triangle sides must be 10 km"));
        }
        Ok(())
    }
}

/// Equilateral 10 km triangle centred on the origin: four stations on a
/// 1 km cross around each vertex and four on a 0.5 km cross at the centre.
pub fn default_array_geometry() -> ArrayGeometry {
    let circumradius = TRIANGLE_SIDE_KM / 3f64.sqrt();
    let vertices = [90.0f64, 210.0, 330.0].map(|deg| {
        let a = deg.to_radians();
        (circumradius * a.cos(), circumradius * a.sin())
    });
    let cross = |(cx, cy): (f64, f64), r: f64| [(cx + r, cy), (cx, cy + r), (cx - r, cy), (cx, cy - r)];

    let mut stations = Vec::with_capacity(ARRAY_STATIONS);
    for (v, &corner) in vertices.iter().enumerate() {
        for (k, (x, y)) in cross(corner, VERTEX_CROSS_RADIUS_KM).into_iter().enumerate() {
            stations.push(Station {
                station_id: format!("V{}{}", v + 1, k + 1),
                x_km: x,
                y_km: y,
            });
        }
    }
    for (k, (x, y)) in cross((0.0, 0.0), CENTER_CROSS_RADIUS_KM).into_iter().enumerate() {
        stations.push(Station {
            station_id: format!("C{}", k + 1),
            x_km: x,
            y_km: y,
        });
    }
    stations.sort_by(|a, b| a.x_km.total_cmp(&b.x_km).then(a.y_km.total_cmp(&b.y_km)));
    ArrayGeometry { stations, vertices }
}
