//! Great-circle distances, kNN graphs and the propagation matrices built from them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::CooMatrix;

pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Distances below this are floored before inverse-distance weighting.
pub const MIN_WEIGHT_DISTANCE_KM: f64 = 1e-6;

/// Longitude/latitude pair in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LonLat {
    pub lon: f64,
    pub lat: f64,
}

impl LonLat {
    pub fn new(lon: f64, lat: f64) -> Result<Self> {
        let c = LonLat { lon, lat };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lon.is_finite() && (-180.0..=180.0).contains(&self.lon)) {
            return Err(Error::Validation(format!(
                "longitude {} outside [-180, 180]",
                self.lon
            )));
        }
        if !(self.lat.is_finite() && (-90.0..=90.0).contains(&self.lat)) {
            return Err(Error::Validation(format!(
                "latitude {} outside [-90, 90]",
                self.lat
            )));
        }
        Ok(())
    }

    fn unit_vector(&self) -> [f64; 3] {
        let (lon, lat) = (self.lon.to_radians(), self.lat.to_radians());
        [lat.cos() * lon.cos(), lat.cos() * lon.sin(), lat.sin()]
    }
}

/// Great-circle distance in kilometres on a sphere of radius 6371 km.
pub fn haversine_km(a: LonLat, b: LonLat) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    Ok(haversine_unchecked(a, b))
}

fn haversine_unchecked(a: LonLat, b: LonLat) -> f64 {
    let (lat1, lat2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b.lon - a.lon).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeWeighting {
    #[default]
    Binary,
    InverseDistance,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub distance_km: f64,
}

/// Directed neighbourhood graph over one point set.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGraph {
    n: usize,
    edges: Vec<Edge>,
    weighting: EdgeWeighting,
    /// Set when the requested k had to be clamped to n − 1.
    pub clamp_warning: Option<String>,
}

impl SpatialGraph {
    /// Graph from explicit edges. Self-loops and out-of-range endpoints are rejected.
    pub fn from_edges(n: usize, edges: Vec<Edge>) -> Result<Self> {
        for e in &edges {
            if e.src >= n || e.dst >= n {
                return Err(Error::Validation(format!(
                    "edge {}->{} outside {n} nodes",
                    e.src, e.dst
                )));
            }
            if e.src == e.dst {
                return Err(Error::Validation(format!("self-loop at node {}", e.src)));
            }
        }
        Ok(SpatialGraph {
            n,
            edges,
            weighting: EdgeWeighting::Binary,
            clamp_warning: None,
        })
    }

    /// Unit-distance graph from (src, dst) pairs; convenient for hand-built cases.
    pub fn from_pairs(n: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        Self::from_edges(
            n,
            pairs
                .iter()
                .map(|&(src, dst)| Edge {
                    src,
                    dst,
                    distance_km: 1.0,
                })
                .collect(),
        )
    }

    pub fn with_weighting(mut self, weighting: EdgeWeighting) -> Self {
        self.weighting = weighting;
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn weighting(&self) -> EdgeWeighting {
        self.weighting
    }

    pub fn out_degree(&self, i: usize) -> usize {
        self.edges.iter().filter(|e| e.src == i).count()
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges.iter().filter(move |e| e.src == i).map(|e| e.dst)
    }

    fn edge_weight(&self, e: &Edge) -> f64 {
        match self.weighting {
            EdgeWeighting::Binary => 1.0,
            EdgeWeighting::InverseDistance => 1.0 / e.distance_km.max(MIN_WEIGHT_DISTANCE_KM),
        }
    }

    /// Adjacency matrix A with a_ij = edge weight for i→j.
    pub fn adjacency(&self) -> CooMatrix {
        CooMatrix::from_triplets(
            self.n,
            self.edges
                .iter()
                .map(|e| (e.src, e.dst, self.edge_weight(e)))
                .collect(),
        )
    }

    /// Relabels nodes so that new node `i` is old node `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut inverse = vec![0; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        SpatialGraph {
            n: self.n,
            edges: self
                .edges
                .iter()
                .map(|e| Edge {
                    src: inverse[e.src],
                    dst: inverse[e.dst],
                    distance_km: e.distance_km,
                })
                .collect(),
            weighting: self.weighting,
            clamp_warning: self.clamp_warning.clone(),
        }
    }
}

/// Directed kNN graph with binary edge weights.
pub fn knn_graph(coords: &[LonLat], k: usize) -> Result<SpatialGraph> {
    knn_graph_weighted(coords, k, EdgeWeighting::Binary)
}

/// Directed kNN graph: each node points at its `k` nearest other nodes by
/// great-circle distance, ties broken by lower index.
pub fn knn_graph_weighted(
    coords: &[LonLat],
    k: usize,
    weighting: EdgeWeighting,
) -> Result<SpatialGraph> {
    let n = coords.len();
    if n < 2 {
        return Err(Error::InsufficientPoints { needed: 2, got: n });
    }
    if k == 0 {
        return Err(Error::Parameter("k must be at least 1".into()));
    }
    for (i, c) in coords.iter().enumerate() {
        c.validate()
            .map_err(|e| Error::Validation(format!("point {i}: {e}")))?;
    }
    let clamp_warning = (k >= n).then(|| {
        format!(
            "k = {k} is not below the point count {n}; using k = {}",
            n - 1
        )
    });
    let k = k.min(n - 1);

    // Squared chord length between unit vectors is monotone in great-circle
    // distance, so it orders neighbours without per-pair trigonometry.
    let units: Vec<[f64; 3]> = coords.iter().map(LonLat::unit_vector).collect();
    let by_distance = |a: &(f64, usize), b: &(f64, usize)| {
        a.0.partial_cmp(&b.0)
            .expect("finite distances")
            .then(a.1.cmp(&b.1))
    };

    let mut edges = Vec::with_capacity(n * k);
    let mut candidates: Vec<(f64, usize)> = Vec::with_capacity(n);
    for (i, ui) in units.iter().enumerate() {
        candidates.clear();
        candidates.extend(units.iter().enumerate().filter(|&(j, _)| j != i).map(|(j, uj)| {
            let d = [ui[0] - uj[0], ui[1] - uj[1], ui[2] - uj[2]];
            (d[0] * d[0] + d[1] * d[1] + d[2] * d[2], j)
        }));
        if k < candidates.len() {
            candidates.select_nth_unstable_by(k - 1, by_distance);
            candidates.truncate(k);
        }
        candidates.sort_unstable_by(by_distance);
        edges.extend(candidates.iter().map(|&(_, j)| Edge {
            src: i,
            dst: j,
            distance_km: haversine_unchecked(coords[i], coords[j]),
        }));
    }

    Ok(SpatialGraph {
        n,
        edges,
        weighting,
        clamp_warning,
    })
}

/// D^{-1/2}(A + I)D^{-1/2}, where D holds the row sums of A + I.
pub fn normalize_adjacency(g: &SpatialGraph) -> CooMatrix {
    let n = g.n();
    let mut triplets: Vec<(usize, usize, f64)> = g
        .edges()
        .iter()
        .map(|e| (e.src, e.dst, g.edge_weight(e)))
        .collect();
    triplets.extend((0..n).map(|i| (i, i, 1.0)));
    let a_plus_i = CooMatrix::from_triplets(n, triplets);
    let deg = a_plus_i.row_sums();
    CooMatrix::from_triplets(
        n,
        a_plus_i
            .iter()
            .map(|(r, c, v)| (r, c, v / (deg[r] * deg[c]).sqrt()))
            .collect(),
    )
}

/// Row-standardized spatial weights; rows without neighbours stay zero.
pub fn row_standardize(g: &SpatialGraph) -> CooMatrix {
    let a = g.adjacency();
    let sums = a.row_sums();
    CooMatrix::from_triplets(
        g.n(),
        a.iter()
            .filter(|&(r, _, _)| sums[r] > 0.0)
            .map(|(r, c, v)| (r, c, v / sums[r]))
            .collect(),
    )
}
