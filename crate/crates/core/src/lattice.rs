//! Periodic square lattice, its symmetry group `C_L^2 ⋊ D_4`, and the
//! orbit tables used to share weights equivariantly.
//!
//! Sites are stored row-major: site `(x1, x2)` lives at index `x1 * L + x2`.
//! Displacements use the same indexing, so a displacement vector and a site
//! are interchangeable once reduced mod `L`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A coordinate pair `(x1, x2)` with `0 <= xi < L`.
pub type Site = (usize, usize);

/// Geometry of an `L x L` lattice with periodic boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Lattice {
    side: usize,
}

impl Lattice {
    pub fn new(side: usize) -> Result<Self> {
        if side == 0 {
            return Err(Error::InvalidInput("lattice side must be positive".into()));
        }
        Ok(Self { side })
    }

    #[inline]
    pub fn side(&self) -> usize {
        self.side
    }

    /// Number of sites, `L^2`.
    #[inline]
    pub fn sites(&self) -> usize {
        self.side * self.side
    }

    #[inline]
    pub fn index(&self, site: Site) -> usize {
        site.0 * self.side + site.1
    }

    #[inline]
    pub fn coords(&self, index: usize) -> Site {
        (index / self.side, index % self.side)
    }

    #[inline]
    pub fn wrap(&self, v: i64) -> usize {
        v.rem_euclid(self.side as i64) as usize
    }

    pub fn check_site(&self, site: Site) -> Result<()> {
        if site.0 >= self.side || site.1 >= self.side {
            return Err(Error::InvalidInput(format!(
                "site {site:?} outside {0}x{0} lattice",
                self.side
            )));
        }
        Ok(())
    }

    /// Index of `site + disp` (mod L).
    #[inline]
    pub fn shift(&self, site: usize, disp: usize) -> usize {
        let l = self.side;
        let (a, b) = (site / l, site % l);
        let (c, d) = (disp / l, disp % l);
        ((a + c) % l) * l + (b + d) % l
    }

    /// Index of `y - x` (mod L).
    #[inline]
    pub fn displacement(&self, x: usize, y: usize) -> usize {
        let l = self.side;
        let (a, b) = (x / l, x % l);
        let (c, d) = (y / l, y % l);
        ((c + l - a) % l) * l + (d + l - b) % l
    }

    /// The four nearest neighbours of a site, in the order +e1, -e1, +e2, -e2.
    pub fn neighbours(&self, index: usize) -> [usize; 4] {
        let l = self.side;
        let (a, b) = (index / l, index % l);
        [
            ((a + 1) % l) * l + b,
            ((a + l - 1) % l) * l + b,
            a * l + (b + 1) % l,
            a * l + (b + l - 1) % l,
        ]
    }
}

/// One of the eight elements of `D_4`, stored as an integer 2x2 matrix
/// `[[a, b], [c, d]]` with entries in `{-1, 0, 1}` acting on column vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PointOp {
    m: [i8; 4],
}

impl PointOp {
    pub const IDENTITY: PointOp = PointOp { m: [1, 0, 0, 1] };
    /// Quarter turn `(x1, x2) -> (-x2, x1)`.
    pub const ROTATE: PointOp = PointOp { m: [0, -1, 1, 0] };
    /// Mirror `(x1, x2) -> (x1, -x2)`.
    pub const MIRROR: PointOp = PointOp { m: [1, 0, 0, -1] };

    /// All eight elements: `R^k` then `R^k M` for `k = 0..4`.
    pub fn all() -> [PointOp; 8] {
        let mut out = [Self::IDENTITY; 8];
        let mut r = Self::IDENTITY;
        for k in 0..4 {
            out[k] = r;
            out[k + 4] = r.compose(&Self::MIRROR);
            r = Self::ROTATE.compose(&r);
        }
        out
    }

    /// `self ∘ other` (apply `other` first).
    pub fn compose(&self, other: &PointOp) -> PointOp {
        let [a, b, c, d] = self.m;
        let [e, f, g, h] = other.m;
        PointOp {
            m: [a * e + b * g, a * f + b * h, c * e + d * g, c * f + d * h],
        }
    }

    /// Orthogonal, so the inverse is the transpose.
    pub fn inverse(&self) -> PointOp {
        let [a, b, c, d] = self.m;
        PointOp { m: [a, c, b, d] }
    }

    pub fn apply(&self, v: (i64, i64)) -> (i64, i64) {
        let [a, b, c, d] = self.m;
        (
            a as i64 * v.0 + b as i64 * v.1,
            c as i64 * v.0 + d as i64 * v.1,
        )
    }

    /// Position of this element within [`PointOp::all`].
    pub fn ordinal(&self) -> usize {
        Self::all().iter().position(|p| p == self).expect("closed set")
    }
}

/// Element of `C_L^2 ⋊ D_4`: acts on a site by the point operation about
/// the origin followed by a translation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GroupElement {
    pub translation: Site,
    pub point: PointOp,
}

impl GroupElement {
    pub fn identity() -> Self {
        Self {
            translation: (0, 0),
            point: PointOp::IDENTITY,
        }
    }

    pub fn translation(t: Site) -> Self {
        Self {
            translation: t,
            point: PointOp::IDENTITY,
        }
    }

    pub fn new(translation: Site, point: PointOp) -> Self {
        Self { translation, point }
    }

    /// `self ∘ other`: `v -> P1 (P2 v + t2) + t1`.
    pub fn compose(&self, other: &GroupElement, geo: &Lattice) -> GroupElement {
        let (t0, t1) = self
            .point
            .apply((other.translation.0 as i64, other.translation.1 as i64));
        GroupElement {
            translation: (
                geo.wrap(t0 + self.translation.0 as i64),
                geo.wrap(t1 + self.translation.1 as i64),
            ),
            point: self.point.compose(&other.point),
        }
    }

    pub fn inverse(&self, geo: &Lattice) -> GroupElement {
        let p = self.point.inverse();
        let (a, b) = p.apply((self.translation.0 as i64, self.translation.1 as i64));
        GroupElement {
            translation: (geo.wrap(-a), geo.wrap(-b)),
            point: p,
        }
    }

    #[inline]
    fn act(&self, site: Site, geo: &Lattice) -> Site {
        let (a, b) = self.point.apply((site.0 as i64, site.1 as i64));
        (
            geo.wrap(a + self.translation.0 as i64),
            geo.wrap(b + self.translation.1 as i64),
        )
    }

    /// Site permutation `i -> g(i)` as an index table.
    pub fn permutation(&self, geo: &Lattice) -> Vec<usize> {
        (0..geo.sites())
            .map(|i| geo.index(self.act(geo.coords(i), geo)))
            .collect()
    }
}

/// `g · site` with range validation.
pub fn apply_symmetry(g: &GroupElement, site: Site, geo: &Lattice) -> Result<Site> {
    geo.check_site(site)?;
    Ok(g.act(site, geo))
}

/// `(g φ)(x) = φ(g⁻¹ x)` for a single field stored row-major.
pub fn apply_symmetry_to_values(g: &GroupElement, values: &[f64], geo: &Lattice) -> Result<Vec<f64>> {
    if values.len() != geo.sites() {
        return Err(Error::shape(geo.sites(), values.len()));
    }
    let perm = g.permutation(geo);
    let mut out = vec![0.0; values.len()];
    for (y, &gy) in perm.iter().enumerate() {
        out[gy] = values[y];
    }
    Ok(out)
}

/// Every element of the group, translations varying fastest. Length `8 L^2`.
pub fn enumerate_group(geo: &Lattice) -> Vec<GroupElement> {
    let mut out = Vec::with_capacity(8 * geo.sites());
    for p in PointOp::all() {
        for i in 0..geo.sites() {
            out.push(GroupElement::new(geo.coords(i), p));
        }
    }
    out
}

/// Partition of displacement vectors into `D_4` orbits about the origin.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrbitTable {
    pub lattice: Lattice,
    /// Orbit index for every displacement (row-major).
    pub orbit_id: Vec<usize>,
    /// Lexicographically smallest member of each orbit.
    pub representatives: Vec<Site>,
    pub sizes: Vec<usize>,
}

impl OrbitTable {
    pub fn orbit_count(&self) -> usize {
        self.representatives.len()
    }

    /// Orbit id of the displacement `y - x`.
    pub fn orbit_of_pair(&self, x: Site, y: Site) -> Result<usize> {
        let geo = &self.lattice;
        geo.check_site(x)?;
        geo.check_site(y)?;
        Ok(self.orbit_id[geo.displacement(geo.index(x), geo.index(y))])
    }

    /// Orbit containing the zero displacement.
    pub fn origin_orbit(&self) -> usize {
        self.orbit_id[0]
    }

    /// Broadcast per-orbit values onto every displacement.
    pub fn expand_kernel(&self, free: &[f64]) -> Result<Vec<f64>> {
        if free.len() != self.orbit_count() {
            return Err(Error::shape(self.orbit_count(), free.len()));
        }
        Ok(self.orbit_id.iter().map(|&o| free[o]).collect())
    }
}

/// Brute-force orbit computation: each displacement's 8 images are reduced
/// mod `L`, and the lexicographically smallest image names the orbit.
pub fn compute_orbits(geo: &Lattice) -> OrbitTable {
    let n = geo.sites();
    let ops = PointOp::all();
    let canonical: Vec<Site> = (0..n)
        .map(|i| {
            let (a, b) = geo.coords(i);
            ops.iter()
                .map(|p| {
                    let (u, v) = p.apply((a as i64, b as i64));
                    (geo.wrap(u), geo.wrap(v))
                })
                .min()
                .expect("eight images")
        })
        .collect();
    let mut representatives = canonical.clone();
    representatives.sort_unstable();
    representatives.dedup();
    let orbit_id: Vec<usize> = canonical
        .iter()
        .map(|c| representatives.binary_search(c).expect("present"))
        .collect();
    let mut sizes = vec![0; representatives.len()];
    for &o in &orbit_id {
        sizes[o] += 1;
    }
    OrbitTable {
        lattice: *geo,
        orbit_id,
        representatives,
        sizes,
    }
}

/// Translation-only weight sharing: every displacement is its own class.
pub fn translation_classes(geo: &Lattice) -> OrbitTable {
    let n = geo.sites();
    OrbitTable {
        lattice: *geo,
        orbit_id: (0..n).collect(),
        representatives: (0..n).map(|i| geo.coords(i)).collect(),
        sizes: vec![1; n],
    }
}
